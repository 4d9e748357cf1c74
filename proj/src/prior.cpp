#include "ncap/prior.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace ncap {

namespace {

std::optional<std::span<const double>> bias_view(const std::optional<Matrix>& b) {
  if (!b) return std::nullopt;
  return b->values();
}

// d/dx PReLU(x) applied to upstream g, accumulating the slope gradient.
Matrix prelu_backward(const Matrix& pre, const Matrix& upstream, double slope, double& slope_grad) {
  Matrix out(pre.rows(), pre.cols());
  const auto x = pre.values();
  const auto g = upstream.values();
  auto dst = out.values();
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i] >= 0.0) {
      dst[i] = g[i];
    } else {
      dst[i] = slope * g[i];
      slope_grad += x[i] * g[i];
    }
  }
  return out;
}

}  // namespace

void AdapterParams::validate() const {
  if (w1.rows() == 0 || w1.rows() % 2 != 0) {
    throw ConfigError("adapter: embed must be positive and even, got " + std::to_string(w1.rows()));
  }
  if (w1.cols() != w1.rows() / 2) throw ConfigError("adapter: W1 must map embed to embed/2");
  if (w2.rows() != w1.cols() || w2.cols() == 0) throw ConfigError("adapter: W2 must map embed/2 to C >= 1");
  if (!std::isfinite(slope1) || !std::isfinite(slope2)) throw ConfigError("adapter: non-finite PReLU slope");
  if (b1.has_value() != b2.has_value()) throw ConfigError("adapter: biases must be both present or both absent");
  if (b1 && (b1->rows() != 1 || b1->cols() != hidden())) throw ConfigError("adapter: b1 shape mismatch");
  if (b2 && (b2->rows() != 1 || b2->cols() != feature_dim())) throw ConfigError("adapter: b2 shape mismatch");
}

std::size_t AdapterParams::trainable_count() const {
  return adapter_param_count(embed(), feature_dim(), has_bias());
}

std::vector<std::span<double>> AdapterParams::parameter_views() {
  std::vector<std::span<double>> views{w1.values(), w2.values(), {&slope1, 1}, {&slope2, 1}};
  if (b1) views.push_back(b1->values());
  if (b2) views.push_back(b2->values());
  return views;
}

AdapterParams init_adapter(std::size_t embed, std::size_t feature_dim, bool with_bias, Rng& rng) {
  if (embed == 0 || embed % 2 != 0) throw ConfigError("init_adapter: embed must be positive and even");
  if (feature_dim == 0) throw ConfigError("init_adapter: feature dimension must be >= 1");
  const std::size_t hidden = embed / 2;
  const double lim1 = 1.0 / std::sqrt(static_cast<double>(embed));
  const double lim2 = 1.0 / std::sqrt(static_cast<double>(hidden));
  AdapterParams p;
  p.w1 = random_uniform(embed, hidden, rng, -lim1, lim1);
  p.w2 = random_uniform(hidden, feature_dim, rng, -lim2, lim2);
  if (with_bias) {
    p.b1 = Matrix(1, hidden);
    p.b2 = Matrix(1, feature_dim);
  }
  return p;
}

AdapterTrace ncap_forward_trace(const Matrix& h, const AdapterParams& params) {
  params.validate();
  if (h.cols() != params.embed()) {
    throw ShapeError("ncap_forward: representation width " + std::to_string(h.cols()) + " vs adapter embed " +
                     std::to_string(params.embed()));
  }
  AdapterTrace t;
  t.pre1 = linear_forward(h, params.w1, bias_view(params.b1));
  t.act1 = prelu(t.pre1, params.slope1);
  t.pre2 = linear_forward(t.act1, params.w2, bias_view(params.b2));
  t.out = prelu(t.pre2, params.slope2);
  return t;
}

Matrix ncap_forward(const Matrix& h, const AdapterParams& params) { return ncap_forward_trace(h, params).out; }

AdapterGrads ncap_backward(const Matrix& h, const AdapterParams& params, const Matrix& upstream_grad) {
  const AdapterTrace t = ncap_forward_trace(h, params);
  if (!upstream_grad.same_shape(t.out)) throw ShapeError("ncap_backward: upstream gradient shape mismatch");
  AdapterGrads g;
  const Matrix d_pre2 = prelu_backward(t.pre2, upstream_grad, params.slope2, g.slope2);
  g.w2 = matmul_tn(t.act1, d_pre2);
  if (params.b2) g.b2 = column_sums(d_pre2);
  const Matrix d_act1 = matmul_nt(d_pre2, params.w2);
  const Matrix d_pre1 = prelu_backward(t.pre1, d_act1, params.slope1, g.slope1);
  g.w1 = matmul_tn(h, d_pre1);
  if (params.b1) g.b1 = column_sums(d_pre1);
  g.h = matmul_nt(d_pre1, params.w1);
  return g;
}

double gradcheck_adapter(const Matrix& h, const AdapterParams& params, const Matrix& upstream_grad, double step) {
  if (!(step > 0.0)) throw DomainError("gradcheck_adapter: step must be positive");
  AdapterGrads g = ncap_backward(h, params, upstream_grad);
  AdapterParams probe = params;
  Matrix h_probe = h;
  auto objective = [&] {
    const Matrix out = ncap_forward(h_probe, probe);
    double s = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) s += out.values()[i] * upstream_grad.values()[i];
    return s;
  };

  std::vector<std::span<double>> probes = probe.parameter_views();
  probes.push_back(h_probe.values());
  std::vector<std::span<const double>> analytic{g.w1.values(), g.w2.values(), {&g.slope1, 1}, {&g.slope2, 1}};
  if (g.b1) analytic.push_back(g.b1->values());
  if (g.b2) analytic.push_back(g.b2->values());
  analytic.push_back(g.h.values());

  double worst = 0.0;
  for (std::size_t v = 0; v < probes.size(); ++v) {
    for (std::size_t i = 0; i < probes[v].size(); ++i) {
      const double saved = probes[v][i];
      probes[v][i] = saved + step;
      const double up = objective();
      probes[v][i] = saved - step;
      const double down = objective();
      probes[v][i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double a = analytic[v][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-4});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  return worst;
}

AdapterCheckInstance make_adapter_gradcheck_instance(std::size_t rows, std::size_t embed, std::size_t feature_dim,
                                                     std::uint64_t seed, double kink_margin) {
  Rng rng(seed);
  AdapterCheckInstance inst;
  inst.params = init_adapter(embed, feature_dim, true, rng);
  for (double& v : inst.params.b1->values()) v = rng.uniform(-0.5, 0.5);
  for (double& v : inst.params.b2->values()) v = rng.uniform(-0.5, 0.5);
  inst.params.slope1 = rng.uniform(0.05, 0.5);
  inst.params.slope2 = rng.uniform(0.05, 0.5);
  inst.upstream = random_normal(rows, feature_dim, rng);
  auto min_abs = [](const Matrix& m) {
    double v = std::numeric_limits<double>::infinity();
    for (double x : m.values()) v = std::min(v, std::abs(x));
    return v;
  };
  for (int attempt = 0;; ++attempt) {
    if (attempt == 1000) throw DomainError("make_adapter_gradcheck_instance: no input clears the kink margin");
    inst.h = random_normal(rows, embed, rng);
    const AdapterTrace t = ncap_forward_trace(inst.h, inst.params);
    if (min_abs(t.pre1) >= kink_margin && min_abs(t.pre2) >= kink_margin) break;
  }
  return inst;
}

TextPriorOutput tp_forward(const Matrix& h, const TextPriorParams& params, double tau) {
  if (h.cols() != params.w_pred.rows()) throw ShapeError("tp_forward: representation width vs W_pred rows");
  if (params.w_proj.rows() != params.w_pred.cols()) throw ShapeError("tp_forward: W_proj rows must equal alphabet size");
  TextPriorOutput out;
  out.logits = linear_forward(h, params.w_pred, bias_view(params.b_pred));
  out.feature = matmul(softmax_rows(out.logits, tau), params.w_proj);
  return out;
}

std::size_t adapter_param_count(std::size_t embed, std::size_t feature_dim, bool with_bias) {
  const std::size_t hidden = embed / 2;
  std::size_t count = embed * hidden + hidden * feature_dim + 2;
  if (with_bias) count += hidden + feature_dim;
  return count;
}

double param_overhead(std::size_t embed, std::size_t feature_dim, bool with_bias, std::size_t base_param_count) {
  if (base_param_count == 0) throw DomainError("param_overhead: base parameter count must be positive");
  return static_cast<double>(adapter_param_count(embed, feature_dim, with_bias)) /
         static_cast<double>(base_param_count);
}

double param_overhead(const AdapterParams& adapter, std::size_t base_param_count) {
  adapter.validate();
  return param_overhead(adapter.embed(), adapter.feature_dim(), adapter.has_bias(), base_param_count);
}

}  // namespace ncap
