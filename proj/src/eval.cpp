#include "dentseg/eval.hpp"

#include <algorithm>
#include <chrono>
#include <stdexcept>
#include <vector>

#include "dentseg/preprocess.hpp"

namespace dentseg {

ConfusionMatrix confusion(const LabelMask& pred, const LabelMask& truth) {
  if (pred.width() != truth.width() || pred.height() != truth.height()) {
    throw std::invalid_argument("confusion: mask dimensions differ");
  }
  ConfusionMatrix cm;
  const std::uint8_t* p = pred.values.data();
  const std::uint8_t* t = truth.values.data();
  const long n = pred.values.size();
  for (long i = 0; i < n; ++i) {
    if (p[i] && t[i]) cm.tp += 1;
    else if (p[i] && !t[i]) cm.fp += 1;
    else if (!p[i] && t[i]) cm.fn += 1;
    else cm.tn += 1;
  }
  return cm;
}

Metrics metrics_from_confusion(const ConfusionMatrix& cm) {
  Metrics m;
  if (cm.tp + cm.fp + cm.fn > 0) m.iou = cm.tp / (cm.tp + cm.fp + cm.fn);
  if (cm.tp + cm.fp > 0) m.precision = cm.tp / (cm.tp + cm.fp);
  if (cm.tp + cm.fn > 0) m.recall = cm.tp / (cm.tp + cm.fn);
  if (cm.total() > 0) m.accuracy = (cm.tp + cm.tn) / cm.total();
  return m;
}

std::pair<Metrics, ConfusionMatrix> score_dataset(net::Network& network,
                                                  net::SampleSource& samples) {
  if (samples.size() < 1) throw std::invalid_argument("score_dataset: stream is empty");
  ConfusionMatrix pooled;
  ResidualGrid residual;
  LabelMask truth;
  for (int i = 0; i < samples.size(); ++i) {
    samples.get(i, 0, residual, truth);
    const net::Prediction pred = net::predict(network, residual, network.config().threshold);
    pooled += confusion(pred.mask, truth);
  }
  return {metrics_from_confusion(pooled), pooled};
}

namespace {

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

BenchReport bench(net::Network& network, const SurfaceGrid& grid, int repetitions) {
  if (repetitions < 3) throw std::invalid_argument("bench: need at least 3 repetitions");
  using clock = std::chrono::steady_clock;

  BenchReport report;
  report.points = static_cast<long>(grid.width()) * grid.height();
  report.repetitions = repetitions;

  std::vector<double> pre_times, inf_times;
  for (int r = 0; r < repetitions; ++r) {
    const auto t0 = clock::now();
    const Preprocessed pre = preprocess(grid);
    const auto t1 = clock::now();
    (void)net::predict(network, pre, network.config().threshold);
    const auto t2 = clock::now();
    pre_times.push_back(std::chrono::duration<double>(t1 - t0).count());
    inf_times.push_back(std::chrono::duration<double>(t2 - t1).count());
  }

  report.preprocess_s = median(pre_times);
  report.inference_s = median(inf_times);
  report.total_s = report.preprocess_s + report.inference_s;
  report.pps = report.points / report.total_s;
  report.pps_preprocess = report.points / report.preprocess_s;
  report.pps_inference = report.points / report.inference_s;
  return report;
}

}  // namespace dentseg
