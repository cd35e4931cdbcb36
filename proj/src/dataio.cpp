#include "dentseg/dataio.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace dentseg {

namespace {

constexpr char kMagic[4] = {'D', 'E', 'N', 'T'};
constexpr std::uint32_t kVersion = 1;
constexpr std::size_t kHeaderSize = 32;
constexpr std::size_t kCountOffset = 8;

void put_u32(std::vector<unsigned char>& buf, std::uint32_t v) {
  const unsigned char* p = reinterpret_cast<const unsigned char*>(&v);
  buf.insert(buf.end(), p, p + 4);
}

void put_f32(std::vector<unsigned char>& buf, float v) {
  const unsigned char* p = reinterpret_cast<const unsigned char*>(&v);
  buf.insert(buf.end(), p, p + 4);
}

std::uint32_t crc_of(const unsigned char* data, std::size_t n) {
  return static_cast<std::uint32_t>(crc32(0L, reinterpret_cast<const Bytef*>(data),
                                          static_cast<uInt>(n)));
}

std::size_t record_payload_size(const DatasetHeader& h) {
  const std::size_t cells = static_cast<std::size_t>(h.width) * h.height;
  return cells * 3 * sizeof(float) + ((h.flags & kDatasetHasMask) ? cells : 0);
}

}  // namespace

DatasetWriter::DatasetWriter(const std::string& path, int width, int height, float world_x,
                             float world_y, std::uint32_t flags)
    : path_(path), tmp_path_(path + ".tmp") {
  if (width < 1 || height < 1) throw std::invalid_argument("DatasetWriter: dims must be >= 1");
  header_.width = static_cast<std::uint32_t>(width);
  header_.height = static_cast<std::uint32_t>(height);
  header_.world_x = world_x;
  header_.world_y = world_y;
  header_.flags = flags;

  out_.open(tmp_path_, std::ios::binary | std::ios::trunc);
  if (!out_) throw std::runtime_error("DatasetWriter: cannot open " + tmp_path_);

  std::vector<unsigned char> head;
  head.insert(head.end(), kMagic, kMagic + 4);
  put_u32(head, kVersion);
  put_u32(head, 0);  // count, patched on close
  put_u32(head, header_.width);
  put_u32(head, header_.height);
  put_f32(head, header_.world_x);
  put_f32(head, header_.world_y);
  put_u32(head, header_.flags);
  out_.write(reinterpret_cast<const char*>(head.data()), static_cast<std::streamsize>(head.size()));
}

DatasetWriter::~DatasetWriter() {
  if (!closed_) {
    out_.close();
    std::error_code ec;
    std::filesystem::remove(tmp_path_, ec);  // abandoned write leaves nothing behind
  }
}

void DatasetWriter::append(const SurfaceGrid& surface, const LabelMask* mask) {
  if (closed_) throw std::logic_error("DatasetWriter: append after close");
  if (surface.width() != static_cast<int>(header_.width) ||
      surface.height() != static_cast<int>(header_.height)) {
    throw std::invalid_argument("DatasetWriter: sample dims do not match header");
  }
  const bool want_mask = header_.flags & kDatasetHasMask;
  if (want_mask != (mask != nullptr)) {
    throw std::invalid_argument("DatasetWriter: mask presence does not match container flags");
  }
  if (mask && (mask->width() != surface.width() || mask->height() != surface.height())) {
    throw std::invalid_argument("DatasetWriter: mask dims do not match sample");
  }
  if (!validate_finite(surface).empty()) {
    throw std::invalid_argument("DatasetWriter: sample contains NaN/Inf cells");
  }

  const std::size_t cells = static_cast<std::size_t>(header_.width) * header_.height;
  std::vector<unsigned char> payload(record_payload_size(header_));
  float* xyz = reinterpret_cast<float*>(payload.data());
  const float* xs = surface.x.data();
  const float* ys = surface.y.data();
  const float* zs = surface.z.data();
  for (std::size_t i = 0; i < cells; ++i) {
    xyz[3 * i + 0] = xs[i];
    xyz[3 * i + 1] = ys[i];
    xyz[3 * i + 2] = zs[i];
  }
  if (mask) {
    std::memcpy(payload.data() + cells * 3 * sizeof(float), mask->values.data(), cells);
  }

  out_.write(reinterpret_cast<const char*>(payload.data()),
             static_cast<std::streamsize>(payload.size()));
  const std::uint32_t crc = crc_of(payload.data(), payload.size());
  out_.write(reinterpret_cast<const char*>(&crc), 4);
  if (!out_) throw std::runtime_error("DatasetWriter: write failed");
  header_.count++;
}

void DatasetWriter::close() {
  if (closed_) return;
  out_.seekp(kCountOffset);
  out_.write(reinterpret_cast<const char*>(&header_.count), 4);
  out_.close();
  if (out_.fail()) throw std::runtime_error("DatasetWriter: finalize failed");
  std::filesystem::rename(tmp_path_, path_);
  closed_ = true;
}

DatasetReader::DatasetReader(const std::string& path) : path_(path) {
  in_.open(path, std::ios::binary);
  if (!in_) throw std::runtime_error("DatasetReader: cannot open " + path);

  unsigned char head[kHeaderSize];
  in_.read(reinterpret_cast<char*>(head), kHeaderSize);
  if (in_.gcount() != static_cast<std::streamsize>(kHeaderSize)) {
    throw std::runtime_error("DatasetReader: file too short for header");
  }
  if (std::memcmp(head, kMagic, 4) != 0) {
    throw std::runtime_error("DatasetReader: bad magic, not a dataset container");
  }
  std::memcpy(&header_.version, head + 4, 4);
  if (header_.version != kVersion) {
    throw std::runtime_error("DatasetReader: unsupported version " +
                             std::to_string(header_.version));
  }
  std::memcpy(&header_.count, head + 8, 4);
  std::memcpy(&header_.width, head + 12, 4);
  std::memcpy(&header_.height, head + 16, 4);
  std::memcpy(&header_.world_x, head + 20, 4);
  std::memcpy(&header_.world_y, head + 24, 4);
  std::memcpy(&header_.flags, head + 28, 4);
  if (header_.width < 1 || header_.height < 1) {
    throw std::runtime_error("DatasetReader: invalid dims in header");
  }
  record_size_ = record_payload_size(header_) + 4;
}

void DatasetReader::seek(int index) {
  if (index < 0 || index > count()) throw std::out_of_range("DatasetReader: seek out of range");
  in_.clear();
  in_.seekg(static_cast<std::streamoff>(kHeaderSize + record_size_ * index));
  cursor_ = index;
}

bool DatasetReader::next(SurfaceGrid& surface, LabelMask* mask) {
  if (cursor_ >= count()) return false;

  std::vector<unsigned char> buf(record_size_);
  in_.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(record_size_));
  if (in_.gcount() != static_cast<std::streamsize>(record_size_)) {
    throw std::runtime_error("DatasetReader: truncated at record " + std::to_string(cursor_));
  }
  const std::size_t payload = record_size_ - 4;
  std::uint32_t stored = 0;
  std::memcpy(&stored, buf.data() + payload, 4);
  if (crc_of(buf.data(), payload) != stored) {
    throw std::runtime_error("DatasetReader: checksum mismatch at record " +
                             std::to_string(cursor_));
  }

  const int w = static_cast<int>(header_.width);
  const int h = static_cast<int>(header_.height);
  const float px = w > 1 ? header_.world_x / (w - 1) : 1.0f;
  const float py = h > 1 ? header_.world_y / (h - 1) : 1.0f;
  surface = SurfaceGrid(w, h, px, py);
  const float* xyz = reinterpret_cast<const float*>(buf.data());
  const std::size_t cells = static_cast<std::size_t>(w) * h;
  float* xs = surface.x.data();
  float* ys = surface.y.data();
  float* zs = surface.z.data();
  for (std::size_t i = 0; i < cells; ++i) {
    xs[i] = xyz[3 * i + 0];
    ys[i] = xyz[3 * i + 1];
    zs[i] = xyz[3 * i + 2];
  }
  if (mask) {
    *mask = LabelMask(w, h);
    if (has_mask()) {
      std::memcpy(mask->values.data(), buf.data() + cells * 3 * sizeof(float), cells);
    }
  }
  ++cursor_;
  return true;
}

void write_noise_bank(const NoiseBank& bank, const std::string& path) {
  if (bank.maps.empty()) throw std::invalid_argument("write_noise_bank: bank is empty");
  const int w = bank.maps.front().residuals.width();
  const int h = bank.maps.front().residuals.height();
  for (const NoiseMap& m : bank.maps) {
    if (m.residuals.width() != w || m.residuals.height() != h) {
      throw std::invalid_argument("write_noise_bank: all maps in one bank must share dims");
    }
  }

  DatasetWriter writer(path, w, h, static_cast<float>(w - 1), static_cast<float>(h - 1),
                       kDatasetNoiseBank);
  SurfaceGrid carrier(w, h);
  for (int iy = 0; iy < h; ++iy) {
    for (int ix = 0; ix < w; ++ix) {
      carrier.x(iy, ix) = static_cast<float>(ix);
      carrier.y(iy, ix) = static_cast<float>(iy);
    }
  }
  for (const NoiseMap& m : bank.maps) {
    carrier.z = m.residuals.values;
    writer.append(carrier, nullptr);
  }
  writer.close();
}

NoiseBank read_noise_bank(const std::string& path) {
  DatasetReader reader(path);
  if (!(reader.header().flags & kDatasetNoiseBank)) {
    throw std::runtime_error("read_noise_bank: container is not flagged as a noise bank");
  }
  NoiseBank bank;
  SurfaceGrid carrier;
  int index = 0;
  while (reader.next(carrier)) {
    NoiseMap map;
    map.residuals = ResidualGrid(carrier.z);
    map.source = path + "#" + std::to_string(index++);
    bank.maps.push_back(std::move(map));
  }
  return bank;
}

namespace {

bool sniff_container(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  char magic[4] = {};
  in.read(magic, 4);
  return in.gcount() == 4 && std::memcmp(magic, kMagic, 4) == 0;
}

SurfaceGrid grid_from_rows(const std::vector<std::vector<double>>& rows) {
  const int h = static_cast<int>(rows.size());
  const int w = static_cast<int>(rows.front().size() / 3);
  SurfaceGrid grid(w, h);
  for (int iy = 0; iy < h; ++iy) {
    for (int ix = 0; ix < w; ++ix) {
      grid.x(iy, ix) = static_cast<float>(rows[iy][3 * ix + 0]);
      grid.y(iy, ix) = static_cast<float>(rows[iy][3 * ix + 1]);
      grid.z(iy, ix) = static_cast<float>(rows[iy][3 * ix + 2]);
    }
  }
  // Nominal pitch from neighbour spacing.
  if (w > 1) grid.pitch_x = std::abs(grid.x(0, w - 1) - grid.x(0, 0)) / (w - 1);
  if (h > 1) grid.pitch_y = std::abs(grid.y(h - 1, 0) - grid.y(0, 0)) / (h - 1);
  if (grid.pitch_x <= 0) grid.pitch_x = 1.0f;
  if (grid.pitch_y <= 0) grid.pitch_y = 1.0f;
  return grid;
}

std::vector<std::vector<double>> parse_text_rows(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_cloud: cannot open " + path);

  std::vector<std::vector<double>> rows;
  std::string line;
  int line_no = 0;
  std::size_t expected_tokens = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::vector<double> tokens;
    std::string tok;
    while (ls >> tok) {
      try {
        std::size_t used = 0;
        const double v = std::stod(tok, &used);
        if (used != tok.size()) throw std::invalid_argument(tok);
        tokens.push_back(v);
      } catch (const std::exception&) {
        throw std::runtime_error("read_cloud: malformed number '" + tok + "' at line " +
                                 std::to_string(line_no));
      }
    }
    if (tokens.empty()) continue;
    if (tokens.size() % 3 != 0) {
      throw std::runtime_error("read_cloud: line " + std::to_string(line_no) + " has " +
                               std::to_string(tokens.size()) + " values, expected a multiple of 3");
    }
    if (expected_tokens == 0) {
      expected_tokens = tokens.size();
    } else if (tokens.size() != expected_tokens) {
      throw std::runtime_error("read_cloud: line " + std::to_string(line_no) + " has " +
                               std::to_string(tokens.size()) + " values where " +
                               std::to_string(expected_tokens) + " were expected");
    }
    rows.push_back(std::move(tokens));
  }
  if (rows.empty()) throw std::runtime_error("read_cloud: " + path + " contains no points");
  return rows;
}

SurfaceGrid rasterize_points(const std::vector<std::vector<double>>& rows, int w, int h,
                             RasterReport* report) {
  if (w < 1 || h < 1) {
    throw std::invalid_argument("read_cloud: rasterization needs positive lattice dims");
  }
  double min_x = std::numeric_limits<double>::max(), max_x = -min_x;
  double min_y = min_x, max_y = -min_x;
  for (const auto& row : rows) {
    for (std::size_t i = 0; i + 3 <= row.size(); i += 3) {
      min_x = std::min(min_x, row[i]);
      max_x = std::max(max_x, row[i]);
      min_y = std::min(min_y, row[i + 1]);
      max_y = std::max(max_y, row[i + 1]);
    }
  }
  const double span_x = std::max(max_x - min_x, 1e-12);
  const double span_y = std::max(max_y - min_y, 1e-12);

  SurfaceGrid grid(w, h, static_cast<float>(span_x / std::max(1, w - 1)),
                   static_cast<float>(span_y / std::max(1, h - 1)));
  GridArrayB filled = GridArrayB::Zero(h, w);
  int collisions = 0;
  for (const auto& row : rows) {
    for (std::size_t i = 0; i + 3 <= row.size(); i += 3) {
      const double x = row[i], y = row[i + 1], z = row[i + 2];
      const int ix = std::min(w - 1, static_cast<int>((x - min_x) / span_x * w));
      const int iy = std::min(h - 1, static_cast<int>((y - min_y) / span_y * h));
      if (filled(iy, ix)) {
        ++collisions;  // first point in a cell wins
        continue;
      }
      filled(iy, ix) = 1;
      grid.x(iy, ix) = static_cast<float>(x);
      grid.y(iy, ix) = static_cast<float>(y);
      grid.z(iy, ix) = static_cast<float>(z);
    }
  }

  // Flag gaps, then fill them from the nearest already-filled neighbour so
  // the returned grid stays finite and complete.
  std::vector<CellIndex> gaps;
  for (int iy = 0; iy < h; ++iy) {
    for (int ix = 0; ix < w; ++ix) {
      if (!filled(iy, ix)) gaps.push_back({ix, iy});
    }
  }
  if (static_cast<int>(gaps.size()) == w * h) {
    throw std::runtime_error("read_cloud: rasterization produced an empty lattice");
  }
  for (const CellIndex& cell : gaps) {
    int best_ix = -1, best_iy = -1, best_d2 = std::numeric_limits<int>::max();
    for (int iy = 0; iy < h; ++iy) {
      for (int ix = 0; ix < w; ++ix) {
        if (!filled(iy, ix)) continue;
        const int d2 = (ix - cell.x) * (ix - cell.x) + (iy - cell.y) * (iy - cell.y);
        if (d2 < best_d2) {
          best_d2 = d2;
          best_ix = ix;
          best_iy = iy;
        }
      }
    }
    grid.x(cell.y, cell.x) = static_cast<float>(min_x + cell.x * span_x / std::max(1, w - 1));
    grid.y(cell.y, cell.x) = static_cast<float>(min_y + cell.y * span_y / std::max(1, h - 1));
    grid.z(cell.y, cell.x) = grid.z(best_iy, best_ix);
  }

  if (report) {
    report->gaps = std::move(gaps);
    report->collisions = collisions;
  }
  return grid;
}

}  // namespace

SurfaceGrid read_cloud(const std::string& path, const CloudReadOptions& options) {
  CloudFormat fmt = options.format;
  if (fmt == CloudFormat::Auto) {
    fmt = sniff_container(path) ? CloudFormat::Container : CloudFormat::Text;
  }
  if (fmt == CloudFormat::Container) {
    DatasetReader reader(path);
    SurfaceGrid grid;
    if (!reader.next(grid)) throw std::runtime_error("read_cloud: container holds no samples");
    return grid;
  }

  const auto rows = parse_text_rows(path);
  if (options.rasterize) {
    return rasterize_points(rows, options.raster_width, options.raster_height, options.report);
  }
  return grid_from_rows(rows);
}

namespace {

void write_pnm(const std::string& path, const std::string& magic, int w, int h,
               const std::vector<unsigned char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("image write: cannot open " + path);
  out << magic << "\n" << w << " " << h << "\n255\n";
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("image write: failed for " + path);
}

}  // namespace

void write_overlay(const ResidualGrid& background, const LabelMask* pred, const LabelMask* truth,
                   const std::string& path) {
  const int w = background.width();
  const int h = background.height();
  if (pred && (pred->width() != w || pred->height() != h)) {
    throw std::invalid_argument("write_overlay: prediction dims do not match background");
  }
  if (truth && (truth->width() != w || truth->height() != h)) {
    throw std::invalid_argument("write_overlay: truth dims do not match background");
  }

  const float lo = background.values.minCoeff();
  const float hi = background.values.maxCoeff();
  const float range = hi - lo;

  std::vector<unsigned char> rgb(static_cast<std::size_t>(w) * h * 3);
  for (int iy = 0; iy < h; ++iy) {
    for (int ix = 0; ix < w; ++ix) {
      const std::size_t o = (static_cast<std::size_t>(iy) * w + ix) * 3;
      const bool p = pred && pred->values(iy, ix);
      const bool t = truth && truth->values(iy, ix);
      if (truth && p && t) {  // true positive
        rgb[o] = 0; rgb[o + 1] = 255; rgb[o + 2] = 0;
      } else if (truth && p && !t) {  // false positive
        rgb[o] = 255; rgb[o + 1] = 0; rgb[o + 2] = 0;
      } else if (truth && !p && t) {  // false negative
        rgb[o] = 0; rgb[o + 1] = 0; rgb[o + 2] = 255;
      } else if (!truth && p) {  // prediction only
        rgb[o] = 0; rgb[o + 1] = 255; rgb[o + 2] = 0;
      } else {
        const float v = background.values(iy, ix);
        const unsigned char g =
            range > 0 ? static_cast<unsigned char>(255.0f * (v - lo) / range) : 128;
        rgb[o] = rgb[o + 1] = rgb[o + 2] = g;
      }
    }
  }
  write_pnm(path, "P6", w, h, rgb);
}

void write_mask_pgm(const LabelMask& mask, const std::string& path) {
  const int w = mask.width();
  const int h = mask.height();
  std::vector<unsigned char> gray(static_cast<std::size_t>(w) * h);
  for (int iy = 0; iy < h; ++iy) {
    for (int ix = 0; ix < w; ++ix) {
      gray[static_cast<std::size_t>(iy) * w + ix] = mask.values(iy, ix) ? 255 : 0;
    }
  }
  write_pnm(path, "P5", w, h, gray);
}

}  // namespace dentseg
