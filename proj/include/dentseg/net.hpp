#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "dentseg/grid.hpp"
#include "dentseg/nn.hpp"
#include "dentseg/preprocess.hpp"

namespace dentseg::net {

struct NetConfig {
  int levels = 4;  // 2^levels must divide both input dimensions
  int stem = 16;   // channels at the first encoder level
  double skip_fraction = 0.5;  // reducer output channels as a fraction of the tap
  float threshold = 0.5f;      // mask binarization on the sigmoid output

  // training
  double lr = 1e-3;
  double lr_decay = 1.0;  // per-epoch learning-rate multiplier
  int batch = 8;
  int epochs = 10;
  std::uint64_t seed = 1;
  double target_iou = 0.0;  // > 0: stop once validation IoU reaches it
  double bn_momentum = 0.1;
  double bn_eps = 1e-5;
};

struct Conv {
  nn::Tensor w, b;
  int stride = 1;
  int pad = 1;
  nn::Tensor operator()(const nn::Tensor& x) const { return nn::conv2d(x, w, b, stride, pad); }
};

struct ConvT {
  nn::Tensor w, b;
  nn::Tensor operator()(const nn::Tensor& x) const {
    return nn::conv_transpose2d(x, w, b, /*stride=*/2, /*pad=*/1, /*output_pad=*/1);
  }
};

struct BatchNorm {
  nn::Tensor gamma, beta;
  nn::BatchNormState state;
};

/// Encoder/decoder FCN: per level the encoder runs Conv(s1)+BN+ReLU then a
/// stride-2 DownConv+BN+ReLU that doubles the channels; a skip is tapped
/// after each encoder Conv and 1×1-reduced. The decoder mirrors the schedule
/// with UpConv+BN+ReLU, concatenates the same-level skip and fuses it with
/// Conv+BN+ReLU. A final 1×1 convolution and a sigmoid yield per-cell
/// probabilities at full input resolution.
class Network {
 public:
  explicit Network(const NetConfig& config);

  /// Pre-sigmoid output, one channel, input spatial dims.
  nn::Tensor forward_logits(const nn::Tensor& input, bool training);
  /// sigmoid(forward_logits), eval mode.
  nn::Tensor forward(const nn::Tensor& input);

  std::vector<nn::Tensor> parameters();
  long parameter_count();
  /// Parameter and running-stat buffers in declaration order (checkpoint layout).
  std::vector<std::pair<std::string, std::vector<float>*>> state_buffers();

  const NetConfig& config() const { return config_; }
  void set_threshold(float threshold) { config_.threshold = threshold; }
  int spatial_multiple() const { return 1 << config_.levels; }

  struct EncoderLevel {
    Conv conv;
    BatchNorm bn_conv;
    Conv down;
    BatchNorm bn_down;
    Conv reduce;  // 1×1 skip reducer
  };
  struct DecoderLevel {
    ConvT up;
    BatchNorm bn_up;
    Conv conv;
    BatchNorm bn_conv;
  };

  std::vector<EncoderLevel> encoder;
  std::vector<DecoderLevel> decoder;
  Conv head;  // 1×1 to a single channel

 private:
  NetConfig config_;
};

/// Balancing weight for the BCE loss: negatives/positives over the batch,
/// clamped to [1, 100]; batches with no positives return the clamp maximum.
double estimate_pos_weight(const std::vector<const LabelMask*>& masks);

struct PadRecord {
  int orig_width = 0;
  int orig_height = 0;
};

/// Mirror-pad (reflection) to the next multiples of `multiple`.
std::pair<ResidualGrid, PadRecord> pad_to_16(const ResidualGrid& grid, int multiple = 16);
ProbMask unpad(const ProbMask& padded, const PadRecord& record);
LabelMask unpad(const LabelMask& padded, const PadRecord& record);

struct Prediction {
  LabelMask mask;
  ProbMask prob;
};

/// Pads the residuals as needed, runs the network in eval mode, crops back,
/// and binarizes at `threshold` (cell positive when probability > threshold).
Prediction predict(Network& net, const Preprocessed& pre, float threshold);
Prediction predict(Network& net, const ResidualGrid& residual, float threshold);

/// Deterministic, restartable stream of training pairs. `epoch` seeds any
/// per-epoch augmentation the source applies.
class SampleSource {
 public:
  virtual ~SampleSource() = default;
  virtual int size() const = 0;
  virtual void get(int index, int epoch, ResidualGrid& residual, LabelMask& mask) = 0;
};

class VectorSource : public SampleSource {
 public:
  explicit VectorSource(std::vector<std::pair<ResidualGrid, LabelMask>> items)
      : items_(std::move(items)) {}
  int size() const override { return static_cast<int>(items_.size()); }
  void get(int index, int, ResidualGrid& residual, LabelMask& mask) override {
    residual = items_[index].first;
    mask = items_[index].second;
  }

 private:
  std::vector<std::pair<ResidualGrid, LabelMask>> items_;
};

struct TrainReport {
  std::vector<double> epoch_loss;
  std::vector<double> epoch_val_iou;
  int best_epoch = -1;
  double best_val_iou = 0.0;
  int steps = 0;
};

using EpochCallback = std::function<void(int epoch, double loss, double val_iou)>;

/// Weighted-BCE optimization with Adam; per-epoch validation IoU; the
/// parameters of the best-IoU epoch are restored into `net` on return.
/// Deterministic given config.seed.
TrainReport train(Network& net, SampleSource& train_source, SampleSource& val_source,
                  const EpochCallback& on_epoch = {});

/// Checkpoint I/O. Format: magic "DNTK", u32 version, config block and
/// little-endian 32-bit buffers in declaration order, CRC-32 checksummed.
void save(Network& net, const std::string& path, int epoch = -1, double best_iou = 0.0);
struct LoadedNetwork {
  std::unique_ptr<Network> net;
  int epoch = -1;
  double best_iou = 0.0;
};
LoadedNetwork load(const std::string& path);

}  // namespace dentseg::net
