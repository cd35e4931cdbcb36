#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "dentseg/rng.hpp"
#include "dentseg/tensor.hpp"

namespace dentseg::nn {

/// Cross-correlation with zero padding. weight (out_ch, in_ch, kh, kw),
/// bias (out_ch). Forward and backward w.r.t. input, weights and bias.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride, int pad);

/// Adjoint of conv2d w.r.t. its input ("gradient of convolution").
/// weight (in_ch, out_ch, kh, kw); output spatial dims are
/// (h-1)·stride - 2·pad + kh + output_pad.
Tensor conv_transpose2d(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride,
                        int pad, int output_pad);

/// Per-channel running statistics owned by the layer, updated in train mode.
struct BatchNormState {
  std::vector<float> mean, var;
  long batches_seen = 0;
};

/// Train mode normalizes by batch statistics and updates the running ones
/// with `momentum`; eval mode is a per-channel affine map from the running
/// statistics. Throws when eval is requested before any statistics exist.
Tensor batchnorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& state,
                 bool training, double momentum = 0.1, double eps = 1e-5);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);

/// Channel stacking, a's channels first; batch and spatial dims must match.
Tensor concat_channels(const Tensor& a, const Tensor& b);

/// Mean over cells of -[pos_weight·t·log p + (1-t)·log(1-p)] with p clamped
/// to [1e-7, 1-1e-7]. pos_weight = 1 is plain BCE.
Tensor weighted_bce(const Tensor& pred, const Tensor& target, float pos_weight);

/// Same loss taken on pre-sigmoid values via the softplus identity
/// w·t·softplus(-z) + (1-t)·softplus(z); numerically stable for saturated
/// activations. weighted_bce(sigmoid(z), t, w) equals this up to clamping.
Tensor weighted_bce_logits(const Tensor& logits, const Tensor& target, float pos_weight);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adaptive-moment update with bias correction. Deterministic given
/// identical parameter/gradient sequences.
class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamConfig cfg = {});

  void step();
  void zero_grad();
  void set_lr(double lr) { cfg_.lr = lr; }
  const AdamConfig& config() const { return cfg_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<float>> m_, v_;
  AdamConfig cfg_;
  long t_ = 0;
};

struct GradCheckReport {
  double max_rel_err = 0.0;  // |analytic - numeric| relative to the largest gradient
  long worst_index = -1;
  double analytic = 0.0;
  double numeric = 0.0;
};

/// Central-difference check of d<op(x), P>/dx against the analytic backward,
/// with a fixed random projection P and double-precision reductions.
GradCheckReport gradcheck(const std::function<Tensor(const Tensor&)>& op, const Tensor& point,
                          double step_scale = 1e-2, std::uint64_t proj_seed = 7);

void fill_normal(Tensor& t, float mean, float stddev, Rng& rng);
/// He initialization for a conv weight with the given fan-in.
void fill_kaiming(Tensor& w, int fan_in, Rng& rng);

}  // namespace dentseg::nn
