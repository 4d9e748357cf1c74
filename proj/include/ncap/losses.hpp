#pragma once

// Recognizer loss family with analytic gradients w.r.t. student logits.
//
// Conventions:
//   * CE and KL sum over the alphabet axis and average over sequence positions,
//     so a gradient row carries a 1/L factor;
//   * MAE averages over all L x A cells (elementwise L1 mean);
//   * KL is teacher||student: sum_i p_t log(p_t / p_s);
//   * teacher logits are constants, no teacher gradient is produced;
//   * MAE acts on raw logits (z vs t) with subgradient 0 at ties.

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ncap/numcore.hpp"

namespace ncap {

using HardLabels = std::vector<std::size_t>;

enum class LossKind { kNone, kKlMae, kCe, kCeLs, kCeKl, kCeKlMae, kCeSoftenedKl };

struct LossSpec {
  LossKind kind = LossKind::kCeSoftenedKl;
  double alpha = 0.5;       // ce_softened_kl: weight on the KL term
  double beta = 0.7;        // ce_softened_kl: KL scale
  double tau = 3.0;         // ce_softened_kl: temperature
  double epsilon_ls = 0.1;  // ce_ls: smoothing mass

  bool needs_teacher() const;
  bool needs_labels() const;
  std::string name() const;
  // Throws DomainError when a read hyperparameter is out of range.
  void validate() const;
};

std::string_view loss_name(LossKind kind);
// Throws ConfigError for unknown names.
LossKind parse_loss_kind(std::string_view name);
// All variants in reporting order.
const std::vector<LossKind>& all_loss_kinds();

struct LossResult {
  double value = 0.0;
  Matrix grad;  // d value / d student logits

  LossResult& add_scaled(const LossResult& other, double weight);
};

LossResult ce_loss(const Matrix& student_logits, const HardLabels& labels);
// Cross-entropy against arbitrary target rows (each a probability vector).
LossResult soft_target_ce_loss(const Matrix& student_logits, const Matrix& targets);
LossResult kl_softened_loss(const Matrix& student_logits, const Matrix& teacher_logits, double tau, double beta);
LossResult mae_logit_loss(const Matrix& student_logits, const Matrix& teacher_logits);
Matrix label_smooth(const HardLabels& labels, double epsilon, std::size_t alphabet_size);
Matrix one_hot(const HardLabels& labels, std::size_t alphabet_size);

// Dispatch on spec.kind. Throws ConfigError when the variant needs an input that is absent.
LossResult combined_loss(const LossSpec& spec, const Matrix& student_logits, const Matrix* teacher_logits,
                         const HardLabels* labels);

}  // namespace ncap
