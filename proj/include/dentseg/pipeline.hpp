#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dentseg/dataio.hpp"
#include "dentseg/net.hpp"
#include "dentseg/noisebank.hpp"

namespace dentseg {

/// Streams (residual, mask) training pairs out of a dataset container:
/// seek, read, optionally mix a noise patch into z, preprocess. With a noise
/// bank the patch is redrawn per epoch (the augmentation); without one the
/// preprocessed residuals are cached after the first pass.
class PreprocessedDatasetSource : public net::SampleSource {
 public:
  struct Options {
    const NoiseBank* bank = nullptr;
    std::uint64_t noise_seed = 0x5EED;
    // true: fresh patch each epoch (training augmentation);
    // false: patch fixed per index (a frozen corrupted validation set).
    bool epoch_varying_noise = true;
    bool cache_when_clean = true;
  };

  PreprocessedDatasetSource(const std::string& dataset_path, std::vector<int> indices,
                            Options options);
  PreprocessedDatasetSource(const std::string& dataset_path, std::vector<int> indices)
      : PreprocessedDatasetSource(dataset_path, std::move(indices), Options()) {}

  int size() const override { return static_cast<int>(indices_.size()); }
  void get(int index, int epoch, ResidualGrid& residual, LabelMask& mask) override;

 private:
  DatasetReader reader_;
  std::vector<int> indices_;
  Options options_;
  std::vector<std::pair<ResidualGrid, LabelMask>> cache_;
  std::vector<char> cached_;
};

/// Index split helper: the first (1-val_fraction) of the dataset trains,
/// the tail validates.
struct SplitIndices {
  std::vector<int> train;
  std::vector<int> val;
};
SplitIndices split_dataset(int count, double val_fraction);

}  // namespace dentseg
