#pragma once

// Prior features for a guided reconstruction network.
//
// The categorical text prior (TP) collapses the recognizer's penultimate
// representation h to class probabilities before projecting to C channels:
//     f_TP = softmax(h * W_pred / tau) * W_proj
// The non-categorical prior (NCAP) skips the probability step and projects h
// through two PReLU adapter layers, halving the width in between:
//     f_NCAP = PReLU(PReLU(h * W1) * W2),   W1: embed x embed/2,  W2: embed/2 x C

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "ncap/numcore.hpp"

namespace ncap {

struct AdapterParams {
  Matrix w1;  // embed x embed/2
  Matrix w2;  // embed/2 x C
  double slope1 = 0.25;
  double slope2 = 0.25;
  std::optional<Matrix> b1;  // 1 x embed/2
  std::optional<Matrix> b2;  // 1 x C

  std::size_t embed() const { return w1.rows(); }
  std::size_t hidden() const { return w1.cols(); }
  std::size_t feature_dim() const { return w2.cols(); }
  bool has_bias() const { return b1.has_value(); }

  // Throws ConfigError on odd embed or inconsistent shapes.
  void validate() const;
  std::size_t trainable_count() const;
  // Mutable views over every trainable scalar, in a fixed order.
  std::vector<std::span<double>> parameter_views();
};

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases, slopes 0.25.
AdapterParams init_adapter(std::size_t embed, std::size_t feature_dim, bool with_bias, Rng& rng);

// Activations kept for the backward pass.
struct AdapterTrace {
  Matrix pre1;   // h * W1 (+ b1)
  Matrix act1;   // PReLU(pre1)
  Matrix pre2;   // act1 * W2 (+ b2)
  Matrix out;    // PReLU(pre2) = f_NCAP
};

Matrix ncap_forward(const Matrix& h, const AdapterParams& params);
AdapterTrace ncap_forward_trace(const Matrix& h, const AdapterParams& params);

struct AdapterGrads {
  Matrix w1;
  Matrix w2;
  double slope1 = 0.0;
  double slope2 = 0.0;
  std::optional<Matrix> b1;
  std::optional<Matrix> b2;
  Matrix h;
};

AdapterGrads ncap_backward(const Matrix& h, const AdapterParams& params, const Matrix& upstream_grad);

// Central-difference check of ncap_backward on the scalar sum(f_NCAP .* upstream), covering
// every trainable parameter and h. Relative error uses the floor 1e-4 like the recognizer check.
double gradcheck_adapter(const Matrix& h, const AdapterParams& params, const Matrix& upstream_grad, double step);

// Seeded adapter (with biases), input and upstream gradient; h is redrawn until both PReLU
// pre-activations clear `kink_margin`.
struct AdapterCheckInstance {
  Matrix h;
  AdapterParams params;
  Matrix upstream;
};
AdapterCheckInstance make_adapter_gradcheck_instance(std::size_t rows, std::size_t embed, std::size_t feature_dim,
                                                     std::uint64_t seed, double kink_margin = 1e-3);

struct TextPriorParams {
  Matrix w_pred;               // embed x A
  Matrix w_proj;               // A x C
  std::optional<Matrix> b_pred;  // 1 x A, mirrors a recognizer output bias when present
};

struct TextPriorOutput {
  Matrix logits;   // L x A
  Matrix feature;  // L x C
};

TextPriorOutput tp_forward(const Matrix& h, const TextPriorParams& params, double tau);

// embed*(embed/2) + (embed/2)*C + biases + 2 slopes.
std::size_t adapter_param_count(std::size_t embed, std::size_t feature_dim, bool with_bias);
double param_overhead(const AdapterParams& adapter, std::size_t base_param_count);
double param_overhead(std::size_t embed, std::size_t feature_dim, bool with_bias, std::size_t base_param_count);

}  // namespace ncap
