#include "dentseg/net.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace dentseg::net {

namespace {

nn::Tensor make_param(nn::Shape s) { return nn::Tensor(s, /*requires_grad=*/true); }

int reducer_channels(int tapped, double fraction) {
  return std::max(1, static_cast<int>(std::lround(tapped * fraction)));
}

}  // namespace

Network::Network(const NetConfig& config) : config_(config) {
  if (config_.levels < 1 || config_.stem < 1) {
    throw std::invalid_argument("Network: levels and stem channels must be >= 1");
  }
  Rng rng = substream(config_.seed, 0xD4A7);

  auto init_conv = [&](Conv& c, int in_ch, int out_ch, int k, int stride, int pad) {
    c.w = make_param({out_ch, in_ch, k, k});
    c.b = make_param({out_ch, 1, 1, 1});
    c.stride = stride;
    c.pad = pad;
    nn::fill_kaiming(c.w, in_ch * k * k, rng);
  };
  auto init_convt = [&](ConvT& c, int in_ch, int out_ch) {
    c.w = make_param({in_ch, out_ch, 3, 3});
    c.b = make_param({out_ch, 1, 1, 1});
    nn::fill_kaiming(c.w, in_ch * 9, rng);
  };
  auto init_bn = [&](BatchNorm& bn, int channels) {
    bn.gamma = nn::Tensor::full({1, channels, 1, 1}, 1.0f, true);
    bn.beta = make_param({1, channels, 1, 1});
    bn.state.mean.assign(channels, 0.0f);
    bn.state.var.assign(channels, 1.0f);
  };

  encoder.resize(config_.levels);
  decoder.resize(config_.levels);
  for (int k = 0; k < config_.levels; ++k) {
    const int ch = config_.stem << k;
    EncoderLevel& e = encoder[k];
    init_conv(e.conv, k == 0 ? 1 : ch, ch, 3, 1, 1);
    init_bn(e.bn_conv, ch);
    init_conv(e.down, ch, 2 * ch, 3, 2, 1);
    init_bn(e.bn_down, 2 * ch);
    init_conv(e.reduce, ch, reducer_channels(ch, config_.skip_fraction), 1, 1, 0);
  }
  for (int k = config_.levels - 1; k >= 0; --k) {
    const int ch = config_.stem << k;
    DecoderLevel& d = decoder[k];
    init_convt(d.up, 2 * ch, ch);
    init_bn(d.bn_up, ch);
    init_conv(d.conv, ch + reducer_channels(ch, config_.skip_fraction), ch, 3, 1, 1);
    init_bn(d.bn_conv, ch);
  }
  init_conv(head, config_.stem, 1, 1, 1, 0);
}

nn::Tensor Network::forward_logits(const nn::Tensor& input, bool training) {
  const nn::Shape& s = input.shape();
  const int multiple = spatial_multiple();
  if (s.c != 1) throw std::invalid_argument("Network: input must have a single channel");
  if (s.h % multiple != 0 || s.w % multiple != 0 || s.h == 0 || s.w == 0) {
    throw std::invalid_argument("Network: input dims " + s.str() + " must be multiples of " +
                                std::to_string(multiple));
  }

  auto bn = [&](BatchNorm& layer, const nn::Tensor& x) {
    return nn::batchnorm(x, layer.gamma, layer.beta, layer.state, training, config_.bn_momentum,
                         config_.bn_eps);
  };

  std::vector<nn::Tensor> skips(config_.levels);
  nn::Tensor t = input;
  for (int k = 0; k < config_.levels; ++k) {
    EncoderLevel& e = encoder[k];
    nn::Tensor feat = nn::relu(bn(e.bn_conv, e.conv(t)));
    skips[k] = e.reduce(feat);
    t = nn::relu(bn(e.bn_down, e.down(feat)));
  }
  for (int k = config_.levels - 1; k >= 0; --k) {
    DecoderLevel& d = decoder[k];
    t = nn::relu(bn(d.bn_up, d.up(t)));
    t = nn::concat_channels(t, skips[k]);
    t = nn::relu(bn(d.bn_conv, d.conv(t)));
  }
  return head(t);
}

nn::Tensor Network::forward(const nn::Tensor& input) {
  return nn::sigmoid(forward_logits(input, /*training=*/false));
}

std::vector<nn::Tensor> Network::parameters() {
  std::vector<nn::Tensor> params;
  for (EncoderLevel& e : encoder) {
    for (nn::Tensor* t : {&e.conv.w, &e.conv.b, &e.bn_conv.gamma, &e.bn_conv.beta, &e.down.w,
                          &e.down.b, &e.bn_down.gamma, &e.bn_down.beta, &e.reduce.w, &e.reduce.b}) {
      params.push_back(*t);
    }
  }
  for (DecoderLevel& d : decoder) {
    for (nn::Tensor* t : {&d.up.w, &d.up.b, &d.bn_up.gamma, &d.bn_up.beta, &d.conv.w, &d.conv.b,
                          &d.bn_conv.gamma, &d.bn_conv.beta}) {
      params.push_back(*t);
    }
  }
  params.push_back(head.w);
  params.push_back(head.b);
  return params;
}

long Network::parameter_count() {
  long n = 0;
  for (nn::Tensor& p : parameters()) n += p.numel();
  return n;
}

std::vector<std::pair<std::string, std::vector<float>*>> Network::state_buffers() {
  std::vector<std::pair<std::string, std::vector<float>*>> out;
  auto add_bn = [&](const std::string& prefix, BatchNorm& bn) {
    out.emplace_back(prefix + ".gamma", &bn.gamma.values());
    out.emplace_back(prefix + ".beta", &bn.beta.values());
    out.emplace_back(prefix + ".running_mean", &bn.state.mean);
    out.emplace_back(prefix + ".running_var", &bn.state.var);
  };
  for (size_t k = 0; k < encoder.size(); ++k) {
    const std::string p = "encoder" + std::to_string(k);
    EncoderLevel& e = encoder[k];
    out.emplace_back(p + ".conv.w", &e.conv.w.values());
    out.emplace_back(p + ".conv.b", &e.conv.b.values());
    add_bn(p + ".bn_conv", e.bn_conv);
    out.emplace_back(p + ".down.w", &e.down.w.values());
    out.emplace_back(p + ".down.b", &e.down.b.values());
    add_bn(p + ".bn_down", e.bn_down);
    out.emplace_back(p + ".reduce.w", &e.reduce.w.values());
    out.emplace_back(p + ".reduce.b", &e.reduce.b.values());
  }
  for (size_t k = 0; k < decoder.size(); ++k) {
    const std::string p = "decoder" + std::to_string(k);
    DecoderLevel& d = decoder[k];
    out.emplace_back(p + ".up.w", &d.up.w.values());
    out.emplace_back(p + ".up.b", &d.up.b.values());
    add_bn(p + ".bn_up", d.bn_up);
    out.emplace_back(p + ".conv.w", &d.conv.w.values());
    out.emplace_back(p + ".conv.b", &d.conv.b.values());
    add_bn(p + ".bn_conv", d.bn_conv);
  }
  out.emplace_back("head.w", &head.w.values());
  out.emplace_back("head.b", &head.b.values());
  return out;
}

double estimate_pos_weight(const std::vector<const LabelMask*>& masks) {
  if (masks.empty()) throw std::invalid_argument("estimate_pos_weight: batch is empty");
  long pos = 0, neg = 0;
  for (const LabelMask* m : masks) {
    const long total = m->values.size();
    const long p = static_cast<long>((m->values != 0).count());
    pos += p;
    neg += total - p;
  }
  if (pos == 0) return 100.0;
  return std::clamp(static_cast<double>(neg) / static_cast<double>(pos), 1.0, 100.0);
}

namespace {

int mirror_index(int j, int size) {
  if (size == 1) return 0;
  const int period = 2 * size;
  int m = j % period;
  if (m < 0) m += period;
  return m < size ? m : period - 1 - m;
}

}  // namespace

std::pair<ResidualGrid, PadRecord> pad_to_16(const ResidualGrid& grid, int multiple) {
  const int w = grid.width();
  const int h = grid.height();
  const int pw = ((w + multiple - 1) / multiple) * multiple;
  const int ph = ((h + multiple - 1) / multiple) * multiple;
  PadRecord record{w, h};
  if (pw == w && ph == h) return {grid, record};

  ResidualGrid out(pw, ph);
  for (int iy = 0; iy < ph; ++iy) {
    const int sy = mirror_index(iy, h);
    for (int ix = 0; ix < pw; ++ix) {
      out.values(iy, ix) = grid.values(sy, mirror_index(ix, w));
    }
  }
  return {out, record};
}

ProbMask unpad(const ProbMask& padded, const PadRecord& record) {
  if (padded.width() == record.orig_width && padded.height() == record.orig_height) return padded;
  return crop(padded, 0, 0, record.orig_width, record.orig_height);
}

LabelMask unpad(const LabelMask& padded, const PadRecord& record) {
  if (padded.width() == record.orig_width && padded.height() == record.orig_height) return padded;
  return crop(padded, 0, 0, record.orig_width, record.orig_height);
}

Prediction predict(Network& net, const ResidualGrid& residual, float threshold) {
  auto [padded, record] = pad_to_16(residual, net.spatial_multiple());
  const int pw = padded.width();
  const int ph = padded.height();

  nn::Tensor input({1, 1, ph, pw});
  std::copy(padded.values.data(), padded.values.data() + padded.values.size(), input.data());
  nn::Tensor prob_t = net.forward(input);

  ProbMask prob_padded(pw, ph);
  std::copy(prob_t.data(), prob_t.data() + prob_t.numel(), prob_padded.values.data());

  Prediction out;
  out.prob = unpad(prob_padded, record);
  out.mask = LabelMask(record.orig_width, record.orig_height);
  out.mask.values = (out.prob.values > threshold).cast<std::uint8_t>();
  return out;
}

Prediction predict(Network& net, const Preprocessed& pre, float threshold) {
  return predict(net, pre.residuals, threshold);
}

namespace {

struct BatchTensors {
  nn::Tensor input;
  nn::Tensor target;
  std::vector<LabelMask> masks;
};

BatchTensors assemble_batch(SampleSource& source, const std::vector<int>& indices, int first,
                            int count, int epoch, int height, int width) {
  BatchTensors batch;
  batch.input = nn::Tensor({count, 1, height, width});
  batch.target = nn::Tensor({count, 1, height, width});
  batch.masks.resize(count);
  const long plane = static_cast<long>(height) * width;
  ResidualGrid residual;
  for (int b = 0; b < count; ++b) {
    source.get(indices[first + b], epoch, residual, batch.masks[b]);
    if (residual.width() != width || residual.height() != height ||
        batch.masks[b].width() != width || batch.masks[b].height() != height) {
      throw std::runtime_error("train: sample dimensions drifted mid-stream");
    }
    std::copy(residual.values.data(), residual.values.data() + plane,
              batch.input.data() + b * plane);
    float* t = batch.target.data() + b * plane;
    const std::uint8_t* m = batch.masks[b].values.data();
    for (long i = 0; i < plane; ++i) t[i] = m[i] ? 1.0f : 0.0f;
  }
  return batch;
}

double validation_iou(Network& net, SampleSource& val, int height, int width, int batch_size,
                      float threshold) {
  double tp = 0, fp = 0, fn = 0;
  std::vector<int> order(val.size());
  std::iota(order.begin(), order.end(), 0);
  for (int start = 0; start < val.size(); start += batch_size) {
    const int count = std::min(batch_size, val.size() - start);
    BatchTensors batch = assemble_batch(val, order, start, count, /*epoch=*/0, height, width);
    nn::Tensor prob = net.forward(batch.input);
    const float* p = prob.data();
    const float* t = batch.target.data();
    for (long i = 0; i < prob.numel(); ++i) {
      const bool pred = p[i] > threshold;
      const bool truth = t[i] > 0.5f;
      tp += pred && truth;
      fp += pred && !truth;
      fn += !pred && truth;
    }
  }
  const double denom = tp + fp + fn;
  return denom > 0 ? tp / denom : 0.0;
}

std::vector<std::vector<float>> snapshot_state(Network& net) {
  std::vector<std::vector<float>> snap;
  for (auto& [name, buf] : net.state_buffers()) snap.push_back(*buf);
  return snap;
}

void restore_state(Network& net, const std::vector<std::vector<float>>& snap) {
  auto buffers = net.state_buffers();
  for (size_t i = 0; i < buffers.size(); ++i) *buffers[i].second = snap[i];
}

}  // namespace

TrainReport train(Network& net, SampleSource& train_source, SampleSource& val_source,
                  const EpochCallback& on_epoch) {
  const NetConfig& cfg = net.config();
  if (train_source.size() < 1 || val_source.size() < 1) {
    throw std::invalid_argument("train: sample streams must be non-empty");
  }

  ResidualGrid first_res;
  LabelMask first_mask;
  train_source.get(0, 0, first_res, first_mask);
  const int width = first_res.width();
  const int height = first_res.height();

  nn::Adam optimizer(net.parameters(), {.lr = cfg.lr});
  std::vector<int> order(train_source.size());
  std::iota(order.begin(), order.end(), 0);

  TrainReport report;
  std::vector<std::vector<float>> best_state;
  report.best_val_iou = -1.0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    optimizer.set_lr(cfg.lr * std::pow(cfg.lr_decay, epoch));
    Rng epoch_rng = substream(cfg.seed, 0xE70C + static_cast<std::uint64_t>(epoch));
    std::shuffle(order.begin(), order.end(), epoch_rng);

    double loss_sum = 0.0;
    int batches = 0;
    for (int start = 0; start < train_source.size(); start += cfg.batch) {
      const int count = std::min(cfg.batch, train_source.size() - start);
      BatchTensors batch = assemble_batch(train_source, order, start, count, epoch, height, width);

      std::vector<const LabelMask*> mask_ptrs;
      for (const LabelMask& m : batch.masks) mask_ptrs.push_back(&m);
      const float pos_weight = static_cast<float>(estimate_pos_weight(mask_ptrs));

      nn::Tensor logits = net.forward_logits(batch.input, /*training=*/true);
      nn::Tensor loss = nn::weighted_bce_logits(logits, batch.target, pos_weight);
      optimizer.zero_grad();
      loss.backward();
      optimizer.step();
      loss_sum += loss.item();
      ++batches;
      ++report.steps;
    }
    report.epoch_loss.push_back(loss_sum / std::max(1, batches));

    const double iou = validation_iou(net, val_source, height, width, cfg.batch, cfg.threshold);
    report.epoch_val_iou.push_back(iou);
    if (on_epoch) on_epoch(epoch, report.epoch_loss.back(), iou);
    if (iou > report.best_val_iou) {
      report.best_val_iou = iou;
      report.best_epoch = epoch;
      best_state = snapshot_state(net);
    }
    if (cfg.target_iou > 0.0 && report.best_val_iou >= cfg.target_iou) break;
  }

  if (!best_state.empty()) restore_state(net, best_state);
  return report;
}

// ---------------------------------------------------------------------------
// Checkpoint format: magic "DNTK" | u32 version | i32 levels | i32 stem |
// f64 skip_fraction | f32 threshold | i32 epoch | f32 best_iou |
// u32 buffer_count | { u32 numel, f32[numel] }* | u32 crc32-of-payload.
// The CRC covers every byte after the magic, excluding itself.

namespace {

constexpr char kMagic[4] = {'D', 'N', 'T', 'K'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::vector<unsigned char>& buf, const T& v) {
  const unsigned char* p = reinterpret_cast<const unsigned char*>(&v);
  buf.insert(buf.end(), p, p + sizeof(T));
}

template <typename T>
T take(const std::vector<unsigned char>& buf, size_t& off) {
  if (off + sizeof(T) > buf.size()) {
    throw std::runtime_error("checkpoint: unexpected end of file");
  }
  T v;
  std::memcpy(&v, buf.data() + off, sizeof(T));
  off += sizeof(T);
  return v;
}

}  // namespace

void save(Network& net, const std::string& path, int epoch, double best_iou) {
  std::vector<unsigned char> buf;
  buf.insert(buf.end(), kMagic, kMagic + 4);
  put(buf, kVersion);
  put(buf, static_cast<std::int32_t>(net.config().levels));
  put(buf, static_cast<std::int32_t>(net.config().stem));
  put(buf, net.config().skip_fraction);
  put(buf, net.config().threshold);
  put(buf, static_cast<std::int32_t>(epoch));
  put(buf, static_cast<float>(best_iou));

  auto buffers = net.state_buffers();
  put(buf, static_cast<std::uint32_t>(buffers.size()));
  for (auto& [name, vec] : buffers) {
    put(buf, static_cast<std::uint32_t>(vec->size()));
    const unsigned char* p = reinterpret_cast<const unsigned char*>(vec->data());
    buf.insert(buf.end(), p, p + vec->size() * sizeof(float));
  }

  const std::uint32_t crc = static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(buf.data() + 4), static_cast<uInt>(buf.size() - 4)));
  put(buf, crc);

  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("checkpoint: cannot open " + tmp + " for writing");
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!out) throw std::runtime_error("checkpoint: write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

LoadedNetwork load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)),
                                 std::istreambuf_iterator<char>());

  if (buf.size() < 12 || std::memcmp(buf.data(), kMagic, 4) != 0) {
    throw std::runtime_error("checkpoint: bad magic, not a checkpoint file");
  }
  const std::uint32_t stored_crc = [&] {
    std::uint32_t v;
    std::memcpy(&v, buf.data() + buf.size() - 4, 4);
    return v;
  }();
  const std::uint32_t crc = static_cast<std::uint32_t>(crc32(
      0L, reinterpret_cast<const Bytef*>(buf.data() + 4), static_cast<uInt>(buf.size() - 8)));
  if (crc != stored_crc) {
    throw std::runtime_error("checkpoint: checksum mismatch (file corrupt or truncated)");
  }

  size_t off = 4;
  const auto version = take<std::uint32_t>(buf, off);
  if (version != kVersion) {
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  }

  NetConfig cfg;
  cfg.levels = take<std::int32_t>(buf, off);
  cfg.stem = take<std::int32_t>(buf, off);
  cfg.skip_fraction = take<double>(buf, off);
  cfg.threshold = take<float>(buf, off);

  LoadedNetwork result;
  result.epoch = take<std::int32_t>(buf, off);
  result.best_iou = take<float>(buf, off);
  result.net = std::make_unique<Network>(cfg);

  const auto count = take<std::uint32_t>(buf, off);
  auto buffers = result.net->state_buffers();
  if (count != buffers.size()) {
    throw std::runtime_error("checkpoint: layout mismatch (buffer count)");
  }
  for (auto& [name, vec] : buffers) {
    const auto numel = take<std::uint32_t>(buf, off);
    if (numel != vec->size()) {
      throw std::runtime_error("checkpoint: layout mismatch for buffer " + name);
    }
    if (off + numel * sizeof(float) > buf.size()) {
      throw std::runtime_error("checkpoint: unexpected end of file");
    }
    std::memcpy(vec->data(), buf.data() + off, numel * sizeof(float));
    off += numel * sizeof(float);
  }
  for (auto& e : result.net->encoder) {
    e.bn_conv.state.batches_seen = e.bn_down.state.batches_seen = 1;
  }
  for (auto& d : result.net->decoder) {
    d.bn_up.state.batches_seen = d.bn_conv.state.batches_seen = 1;
  }
  return result;
}

}  // namespace dentseg::net
