#include "dentseg/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "dentseg/preprocess.hpp"
#include "dentseg/rng.hpp"

namespace dentseg {

PreprocessedDatasetSource::PreprocessedDatasetSource(const std::string& dataset_path,
                                                     std::vector<int> indices, Options options)
    : reader_(dataset_path), indices_(std::move(indices)), options_(options) {
  if (indices_.empty()) throw std::invalid_argument("PreprocessedDatasetSource: no indices");
  for (int idx : indices_) {
    if (idx < 0 || idx >= reader_.count()) {
      throw std::out_of_range("PreprocessedDatasetSource: index " + std::to_string(idx) +
                              " outside dataset of " + std::to_string(reader_.count()));
    }
  }
  if (!reader_.has_mask()) {
    throw std::runtime_error("PreprocessedDatasetSource: dataset has no ground-truth masks");
  }
  if (options_.cache_when_clean && !options_.bank) {
    cache_.resize(indices_.size());
    cached_.assign(indices_.size(), 0);
  }
}

void PreprocessedDatasetSource::get(int index, int epoch, ResidualGrid& residual,
                                    LabelMask& mask) {
  if (index < 0 || index >= size()) {
    throw std::out_of_range("PreprocessedDatasetSource: bad stream index");
  }
  if (!cached_.empty() && cached_[index]) {
    residual = cache_[index].first;
    mask = cache_[index].second;
    return;
  }

  SurfaceGrid surface;
  reader_.seek(indices_[index]);
  if (!reader_.next(surface, &mask)) {
    throw std::runtime_error("PreprocessedDatasetSource: record unavailable");
  }

  if (options_.bank) {
    const std::uint64_t stream =
        static_cast<std::uint64_t>(options_.epoch_varying_noise ? epoch : 0) * 0x100000000ULL +
        static_cast<std::uint64_t>(indices_[index]);
    Rng rng = substream(options_.noise_seed, stream);
    const ResidualGrid patch = sample_patch(*options_.bank, surface.width(), surface.height(), rng);
    surface.z += patch.values;
  }

  residual = preprocess(surface).residuals;

  if (!cached_.empty()) {
    cache_[index] = {residual, mask};
    cached_[index] = 1;
  }
}

SplitIndices split_dataset(int count, double val_fraction) {
  if (count < 2) throw std::invalid_argument("split_dataset: need at least 2 samples");
  if (val_fraction <= 0.0 || val_fraction >= 1.0) {
    throw std::invalid_argument("split_dataset: val fraction must be in (0, 1)");
  }
  const int n_val = std::clamp(static_cast<int>(std::lround(count * val_fraction)), 1, count - 1);
  SplitIndices split;
  split.train.resize(count - n_val);
  split.val.resize(n_val);
  std::iota(split.train.begin(), split.train.end(), 0);
  std::iota(split.val.begin(), split.val.end(), count - n_val);
  return split;
}

}  // namespace dentseg
