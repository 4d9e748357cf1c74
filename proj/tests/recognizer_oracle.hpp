#pragma once

// Test-side forward pass and finite-difference gradient for the recognizer, built only from
// the naive oracles so the library's backprop is checked against independent code.

#include <algorithm>
#include <span>
#include <vector>

#include "ncap/losses.hpp"
#include "ncap/toytask.hpp"
#include "oracles.hpp"

namespace oracle {

inline ncap::Matrix recognizer_logits(const ncap::Matrix& x, const ncap::RecognizerParams& p, ncap::Matrix* h = nullptr) {
  const ncap::Matrix a = oracle::prelu(oracle::add_row(oracle::matmul(x, p.w_in), p.b_in), p.slope_in);
  const ncap::Matrix hid = oracle::prelu(oracle::add_row(oracle::matmul(a, p.w_mid), p.b_mid), p.slope_mid);
  if (h != nullptr) *h = hid;
  return oracle::add_row(oracle::matmul(hid, p.w_out), p.b_out);
}

// Max relative error between recognizer_backward and central differences of the combined loss,
// over every parameter, with the given relative-error floor.
inline double recognizer_gradcheck(ncap::GradcheckInstance& inst, const ncap::LossSpec& loss, double step,
                                   double floor) {
  const ncap::Matrix* teacher = loss.needs_teacher() ? &inst.teacher_logits : nullptr;
  const ncap::RecognizerTrace trace = ncap::recognizer_forward_trace(inst.sample.features, inst.params);
  const ncap::LossResult at = ncap::combined_loss(loss, trace.logits, teacher, &inst.sample.labels);
  const ncap::RecognizerParams analytic = ncap::recognizer_backward(trace, inst.params, at.grad);

  auto objective = [&] {
    return ncap::combined_loss(loss, recognizer_logits(inst.sample.features, inst.params), teacher,
                               &inst.sample.labels)
        .value;
  };
  const auto numeric = oracle::central_differences(objective, inst.params.parameter_views(), step);
  const auto views = analytic.parameter_views();
  double worst = 0.0;
  for (std::size_t k = 0; k < views.size(); ++k) worst = std::max(worst, oracle::max_rel_diff(views[k], numeric[k], floor));
  return worst;
}

}  // namespace oracle
