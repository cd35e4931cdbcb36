#pragma once

#include <optional>
#include <utility>

#include "dentseg/grid.hpp"
#include "dentseg/net.hpp"

namespace dentseg {

/// Cell counts; positive = dented. Fraction-valued cells are accepted so
/// published percentage tables can be fed straight in.
struct ConfusionMatrix {
  double tp = 0, fp = 0, fn = 0, tn = 0;

  double total() const { return tp + fp + fn + tn; }
  ConfusionMatrix& operator+=(const ConfusionMatrix& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    tn += o.tn;
    return *this;
  }
};

/// Ratios in [0,1]; a ratio whose denominator is zero is left unset rather
/// than silently zeroed.
struct Metrics {
  std::optional<double> iou, precision, recall, accuracy;
};

ConfusionMatrix confusion(const LabelMask& pred, const LabelMask& truth);

/// IoU = tp/(tp+fp+fn), precision = tp/(tp+fp), recall = tp/(tp+fn),
/// accuracy = (tp+tn)/total.
Metrics metrics_from_confusion(const ConfusionMatrix& cm);

/// Micro-averaging: cells pooled over the whole stream, ratios derived once.
std::pair<Metrics, ConfusionMatrix> score_dataset(net::Network& network,
                                                  net::SampleSource& samples);

struct BenchReport {
  long points = 0;
  int repetitions = 0;
  double preprocess_s = 0;  // per-repetition medians
  double inference_s = 0;
  double total_s = 0;
  double pps = 0;  // points/second, combined
  double pps_preprocess = 0;
  double pps_inference = 0;
};

/// Median-of-repetitions throughput measurement with the preprocess and
/// inference stages timed separately.
BenchReport bench(net::Network& network, const SurfaceGrid& grid, int repetitions);

}  // namespace dentseg
