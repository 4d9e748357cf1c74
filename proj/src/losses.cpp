#include "ncap/losses.hpp"

#include <array>
#include <cmath>
#include <utility>

namespace ncap {

namespace {

constexpr std::array<std::pair<LossKind, std::string_view>, 7> kNames{{
    {LossKind::kNone, "none"},
    {LossKind::kKlMae, "kl_mae"},
    {LossKind::kCe, "ce"},
    {LossKind::kCeLs, "ce_ls"},
    {LossKind::kCeKl, "ce_kl"},
    {LossKind::kCeKlMae, "ce_kl_mae"},
    {LossKind::kCeSoftenedKl, "ce_softened_kl"},
}};

void require_same_shape(const Matrix& a, const Matrix& b, const char* what) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(what) + ": student " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                     " vs other " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  }
}

void require_nonempty(const Matrix& logits, const char* what) {
  if (logits.rows() == 0 || logits.cols() == 0) throw ShapeError(std::string(what) + ": empty logits");
}

void check_labels(const Matrix& logits, const HardLabels& labels, const char* what) {
  if (labels.size() != logits.rows()) {
    throw ShapeError(std::string(what) + ": " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(logits.rows()) + " positions");
  }
  for (std::size_t y : labels) {
    if (y >= logits.cols()) {
      throw DomainError(std::string(what) + ": label " + std::to_string(y) + " outside alphabet of size " +
                        std::to_string(logits.cols()));
    }
  }
}

}  // namespace

bool LossSpec::needs_teacher() const {
  switch (kind) {
    case LossKind::kKlMae:
    case LossKind::kCeKl:
    case LossKind::kCeKlMae:
    case LossKind::kCeSoftenedKl:
      return true;
    default:
      return false;
  }
}

bool LossSpec::needs_labels() const {
  return kind != LossKind::kNone && kind != LossKind::kKlMae;
}

std::string LossSpec::name() const { return std::string(loss_name(kind)); }

void LossSpec::validate() const {
  if (kind == LossKind::kCeSoftenedKl) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw DomainError("loss: alpha must lie in [0, 1]");
    if (!(beta > 0.0) || !std::isfinite(beta)) throw DomainError("loss: beta must be positive");
    if (!(tau > 0.0) || !std::isfinite(tau)) throw DomainError("loss: tau must be positive");
  }
  if (kind == LossKind::kCeLs && !(epsilon_ls >= 0.0 && epsilon_ls < 1.0)) {
    throw DomainError("loss: epsilon_ls must lie in [0, 1)");
  }
}

std::string_view loss_name(LossKind kind) {
  for (const auto& [k, n] : kNames) {
    if (k == kind) return n;
  }
  return "unknown";
}

LossKind parse_loss_kind(std::string_view name) {
  for (const auto& [k, n] : kNames) {
    if (n == name) return k;
  }
  throw ConfigError("unknown loss variant '" + std::string(name) + "'");
}

const std::vector<LossKind>& all_loss_kinds() {
  static const std::vector<LossKind> kinds = [] {
    std::vector<LossKind> v;
    for (const auto& entry : kNames) v.push_back(entry.first);
    return v;
  }();
  return kinds;
}

LossResult& LossResult::add_scaled(const LossResult& other, double weight) {
  value += weight * other.value;
  if (grad.empty()) grad = Matrix(other.grad.rows(), other.grad.cols());
  auto dst = grad.values();
  const auto src = other.grad.values();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += weight * src[i];
  return *this;
}

Matrix one_hot(const HardLabels& labels, std::size_t alphabet_size) {
  Matrix out(labels.size(), alphabet_size);
  for (std::size_t r = 0; r < labels.size(); ++r) {
    if (labels[r] >= alphabet_size) throw DomainError("one_hot: label outside alphabet");
    out(r, labels[r]) = 1.0;
  }
  return out;
}

Matrix label_smooth(const HardLabels& labels, double epsilon, std::size_t alphabet_size) {
  if (!(epsilon >= 0.0 && epsilon < 1.0)) throw DomainError("label_smooth: epsilon must lie in [0, 1)");
  if (alphabet_size == 0) throw DomainError("label_smooth: empty alphabet");
  Matrix out = one_hot(labels, alphabet_size);
  const double floor = epsilon / static_cast<double>(alphabet_size);
  for (double& v : out.values()) v = (1.0 - epsilon) * v + floor;
  return out;
}

LossResult ce_loss(const Matrix& student_logits, const HardLabels& labels) {
  require_nonempty(student_logits, "ce_loss");
  check_labels(student_logits, labels, "ce_loss");
  const double inv_len = 1.0 / static_cast<double>(student_logits.rows());
  const Matrix log_p = log_softmax_rows(student_logits, 1.0);
  LossResult out{0.0, Matrix(student_logits.rows(), student_logits.cols())};
  for (std::size_t r = 0; r < student_logits.rows(); ++r) {
    out.value -= log_p(r, labels[r]);
    for (std::size_t c = 0; c < student_logits.cols(); ++c) {
      const double target = c == labels[r] ? 1.0 : 0.0;
      out.grad(r, c) = (std::exp(log_p(r, c)) - target) * inv_len;
    }
  }
  out.value *= inv_len;
  return out;
}

LossResult soft_target_ce_loss(const Matrix& student_logits, const Matrix& targets) {
  require_nonempty(student_logits, "soft_target_ce_loss");
  require_same_shape(student_logits, targets, "soft_target_ce_loss");
  const double inv_len = 1.0 / static_cast<double>(student_logits.rows());
  const Matrix log_p = log_softmax_rows(student_logits, 1.0);
  LossResult out{0.0, Matrix(student_logits.rows(), student_logits.cols())};
  for (std::size_t r = 0; r < student_logits.rows(); ++r) {
    for (std::size_t c = 0; c < student_logits.cols(); ++c) {
      const double q = targets(r, c);
      if (q != 0.0) out.value -= q * log_p(r, c);
      out.grad(r, c) = (std::exp(log_p(r, c)) - q) * inv_len;
    }
  }
  out.value *= inv_len;
  return out;
}

LossResult kl_softened_loss(const Matrix& student_logits, const Matrix& teacher_logits, double tau, double beta) {
  if (!(tau > 0.0) || !std::isfinite(tau)) throw DomainError("kl_softened_loss: tau must be positive");
  if (!(beta > 0.0) || !std::isfinite(beta)) throw DomainError("kl_softened_loss: beta must be positive");
  require_nonempty(student_logits, "kl_softened_loss");
  require_same_shape(student_logits, teacher_logits, "kl_softened_loss");
  const double inv_len = 1.0 / static_cast<double>(student_logits.rows());
  const Matrix log_ps = log_softmax_rows(student_logits, tau);
  const Matrix log_pt = log_softmax_rows(teacher_logits, tau);
  // d/dz of beta*tau^2*KL(p_t(tau) || p_s(tau)) is beta*tau*(p_s - p_t): tau^2 scale times the 1/tau chain factor.
  const double grad_scale = beta * tau * inv_len;
  LossResult out{0.0, Matrix(student_logits.rows(), student_logits.cols())};
  double kl = 0.0;
  for (std::size_t r = 0; r < student_logits.rows(); ++r) {
    for (std::size_t c = 0; c < student_logits.cols(); ++c) {
      const double ps = std::exp(log_ps(r, c));
      const double pt = std::exp(log_pt(r, c));
      if (pt > 0.0) kl += pt * (log_pt(r, c) - log_ps(r, c));
      out.grad(r, c) = grad_scale * (ps - pt);
    }
  }
  // Rounding can leave a tiny negative sum when the distributions coincide.
  out.value = std::max(0.0, beta * tau * tau * kl * inv_len);
  return out;
}

LossResult mae_logit_loss(const Matrix& student_logits, const Matrix& teacher_logits) {
  require_nonempty(student_logits, "mae_logit_loss");
  require_same_shape(student_logits, teacher_logits, "mae_logit_loss");
  const double inv_cells = 1.0 / static_cast<double>(student_logits.size());
  LossResult out{0.0, Matrix(student_logits.rows(), student_logits.cols())};
  const auto z = student_logits.values();
  const auto t = teacher_logits.values();
  auto g = out.grad.values();
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double d = z[i] - t[i];
    out.value += std::abs(d);
    g[i] = d > 0.0 ? inv_cells : (d < 0.0 ? -inv_cells : 0.0);
  }
  out.value *= inv_cells;
  return out;
}

LossResult combined_loss(const LossSpec& spec, const Matrix& student_logits, const Matrix* teacher_logits,
                         const HardLabels* labels) {
  spec.validate();
  if (spec.needs_teacher() && teacher_logits == nullptr) {
    throw ConfigError("loss '" + spec.name() + "' requires teacher logits");
  }
  if (spec.needs_labels() && labels == nullptr) {
    throw ConfigError("loss '" + spec.name() + "' requires hard labels");
  }

  LossResult out{0.0, Matrix(student_logits.rows(), student_logits.cols())};
  switch (spec.kind) {
    case LossKind::kNone:
      break;
    case LossKind::kCe:
      out = ce_loss(student_logits, *labels);
      break;
    case LossKind::kCeLs:
      out = soft_target_ce_loss(student_logits, label_smooth(*labels, spec.epsilon_ls, student_logits.cols()));
      break;
    case LossKind::kKlMae:
      out = kl_softened_loss(student_logits, *teacher_logits, 1.0, 1.0);
      out.add_scaled(mae_logit_loss(student_logits, *teacher_logits), 1.0);
      break;
    case LossKind::kCeKl:
      out = ce_loss(student_logits, *labels);
      out.add_scaled(kl_softened_loss(student_logits, *teacher_logits, 1.0, 1.0), 1.0);
      break;
    case LossKind::kCeKlMae:
      out = ce_loss(student_logits, *labels);
      out.add_scaled(kl_softened_loss(student_logits, *teacher_logits, 1.0, 1.0), 1.0);
      out.add_scaled(mae_logit_loss(student_logits, *teacher_logits), 1.0);
      break;
    case LossKind::kCeSoftenedKl: {
      // Zero-weight terms are skipped so the alpha endpoints reproduce the single losses bit for bit.
      if (spec.alpha == 1.0) {
        out = kl_softened_loss(student_logits, *teacher_logits, spec.tau, spec.beta);
      } else if (spec.alpha == 0.0) {
        out = ce_loss(student_logits, *labels);
      } else {
        out = LossResult{0.0, Matrix(student_logits.rows(), student_logits.cols())};
        out.add_scaled(ce_loss(student_logits, *labels), 1.0 - spec.alpha);
        out.add_scaled(kl_softened_loss(student_logits, *teacher_logits, spec.tau, spec.beta), spec.alpha);
      }
      break;
    }
  }
  return out;
}

}  // namespace ncap
