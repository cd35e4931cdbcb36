#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "dentseg/grid.hpp"
#include "dentseg/noisebank.hpp"

namespace dentseg {

// Dataset container: header (magic "DENT", version, count, dims, world size,
// flags), then fixed-size records of little-endian 32-bit xyz cells, an
// optional 8-bit mask, and a per-record CRC-32.
struct DatasetHeader {
  std::uint32_t version = 1;
  std::uint32_t count = 0;
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  float world_x = 0.0f;
  float world_y = 0.0f;
  std::uint32_t flags = 0;
};

constexpr std::uint32_t kDatasetHasMask = 1u;
constexpr std::uint32_t kDatasetNoiseBank = 2u;

/// Writes to `path + ".tmp"` and renames on close; a crashed writer never
/// leaves a partially visible dataset.
class DatasetWriter {
 public:
  DatasetWriter(const std::string& path, int width, int height, float world_x, float world_y,
                std::uint32_t flags);
  ~DatasetWriter();

  DatasetWriter(const DatasetWriter&) = delete;
  DatasetWriter& operator=(const DatasetWriter&) = delete;

  /// Mask must be present iff the container was flagged with kDatasetHasMask.
  void append(const SurfaceGrid& surface, const LabelMask* mask = nullptr);
  void close();

  int written() const { return static_cast<int>(header_.count); }

 private:
  DatasetHeader header_;
  std::string path_, tmp_path_;
  std::ofstream out_;
  bool closed_ = false;
};

/// Streaming reader; memory stays O(one sample) regardless of container size.
class DatasetReader {
 public:
  explicit DatasetReader(const std::string& path);

  const DatasetHeader& header() const { return header_; }
  int count() const { return static_cast<int>(header_.count); }
  bool has_mask() const { return header_.flags & kDatasetHasMask; }

  /// Next record in order; false once exhausted. Throws on checksum or
  /// truncation, naming the record index.
  bool next(SurfaceGrid& surface, LabelMask* mask = nullptr);
  void seek(int index);

 private:
  DatasetHeader header_;
  std::string path_;
  std::ifstream in_;
  int cursor_ = 0;
  std::size_t record_size_ = 0;
};

void write_noise_bank(const NoiseBank& bank, const std::string& path);
NoiseBank read_noise_bank(const std::string& path);

enum class CloudFormat { Auto, Text, Container };

struct RasterReport {
  std::vector<CellIndex> gaps;  // lattice cells no source point fell into
  int collisions = 0;           // extra points sharing a cell (first point kept)
};

struct CloudReadOptions {
  CloudFormat format = CloudFormat::Auto;
  // Rasterization fallback for unordered xyz lists: bin points onto a
  // raster_width × raster_height lattice. Off by default.
  bool rasterize = false;
  int raster_width = 0;
  int raster_height = 0;
  RasterReport* report = nullptr;
};

/// Structured-grid text (one grid row of x y z triples per line) or the
/// binary container (first record). Parse errors carry line numbers.
SurfaceGrid read_cloud(const std::string& path, const CloudReadOptions& options = {});

/// Lossless PPM overlay. With truth: true positives green, false positives
/// red, false negatives blue over the grayscale residual background.
/// Without truth: predicted cells green.
void write_overlay(const ResidualGrid& background, const LabelMask* pred, const LabelMask* truth,
                   const std::string& path);

/// Binary mask as a lossless PGM (0 / 255).
void write_mask_pgm(const LabelMask& mask, const std::string& path);

}  // namespace dentseg
