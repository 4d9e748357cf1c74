#include "ncap/toytask.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>
#include <string>

namespace ncap {

namespace {

// Stream indices for derive_seed. Labels depend on the split only so hr and lr pair up.
constexpr std::uint64_t kPrototypeStream = 1;
constexpr std::uint64_t kLabelStream = 10;
constexpr std::uint64_t kNoiseStream = 100;
constexpr std::uint64_t kInitStream = 200;
constexpr std::uint64_t kShuffleStream = 300;

std::uint64_t split_index(Split s) { return s == Split::kTrain ? 0 : 1; }
std::uint64_t domain_index(Domain d) { return d == Domain::kHr ? 0 : 1; }

Matrix bias_row(std::size_t n) { return Matrix(1, n); }

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

HardLabels stack_labels(std::span<const Sample> samples) {
  HardLabels out;
  for (const auto& s : samples) out.insert(out.end(), s.labels.begin(), s.labels.end());
  return out;
}

HardLabels argmax_rows(const Matrix& m) {
  HardLabels out(m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const auto row = m.row(r);
    out[r] = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

Matrix rows_slice(const Matrix& m, std::size_t begin, std::size_t count) {
  Matrix out(count, m.cols());
  std::copy_n(m.values().begin() + static_cast<std::ptrdiff_t>(begin * m.cols()), count * m.cols(),
              out.values().begin());
  return out;
}

void sgd_step(RecognizerParams& params, const RecognizerParams& grad, double lr) {
  auto dst = params.parameter_views();
  const auto src = grad.parameter_views();
  for (std::size_t t = 0; t < dst.size(); ++t) {
    for (std::size_t i = 0; i < dst[t].size(); ++i) dst[t][i] -= lr * src[t][i];
  }
}

bool all_finite(const RecognizerParams& params) {
  for (const auto view : params.parameter_views()) {
    for (double v : view) {
      if (!std::isfinite(v)) return false;
    }
  }
  return true;
}

// Loss and gradient on stacked rows given precomputed teacher logits.
RecognizerParams stacked_gradient(const RecognizerParams& params, const Matrix& x, const HardLabels& labels,
                                  const Matrix* teacher_logits, const LossSpec& loss, double* loss_value) {
  const RecognizerTrace trace = recognizer_forward_trace(x, params);
  const LossResult result = combined_loss(loss, trace.logits, teacher_logits, &labels);
  if (loss_value != nullptr) *loss_value = result.value;
  return recognizer_backward(trace, params, result.grad);
}

}  // namespace

void TaskConfig::validate() const {
  if (alphabet_size < 2) throw ConfigError("task: alphabet_size must be >= 2");
  if (sequence_length == 0 || feature_dim == 0 || hidden_dim == 0 || embed_dim == 0 || prior_dim == 0) {
    throw ConfigError("task: dimensions must be >= 1");
  }
  if (embed_dim % 2 != 0) throw ConfigError("task: embed_dim must be even for the adapter");
  if (train_size == 0 || test_size == 0 || batch_size == 0 || n_bins == 0) {
    throw ConfigError("task: counts must be >= 1");
  }
  if (!(noise_sigma_hr >= 0.0)) throw ConfigError("task: noise_sigma_hr must be >= 0");
  if (!(noise_sigma_lr >= noise_sigma_hr)) throw ConfigError("task: noise_sigma_lr must be >= noise_sigma_hr");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("task: learning_rate must be > 0");
  if (teacher_loss.needs_teacher()) throw ConfigError("task: the teacher loss cannot itself need a teacher");
  teacher_loss.validate();
  if (!(prototype_scale > 0.0) || !std::isfinite(prototype_scale)) {
    throw ConfigError("task: prototype_scale must be > 0");
  }
}

Matrix prototypes(const TaskConfig& config) {
  Rng rng(derive_seed(config.seed, kPrototypeStream));
  return random_normal(config.alphabet_size, config.feature_dim, rng, config.prototype_scale);
}

std::vector<Sample> gen_dataset_with_sigma(const TaskConfig& config, Split split, Domain domain, double sigma) {
  config.validate();
  if (!(sigma >= 0.0)) throw ConfigError("gen_dataset: sigma must be >= 0");
  const Matrix protos = prototypes(config);
  const std::size_t count = split == Split::kTrain ? config.train_size : config.test_size;
  Rng label_rng(derive_seed(config.seed, kLabelStream + split_index(split)));
  Rng noise_rng(derive_seed(config.seed, kNoiseStream + 2 * split_index(split) + domain_index(domain)));
  std::vector<Sample> out(count);
  for (auto& s : out) {
    s.labels.resize(config.sequence_length);
    s.clean = Matrix(config.sequence_length, config.feature_dim);
    for (std::size_t r = 0; r < config.sequence_length; ++r) {
      s.labels[r] = label_rng.uniform_index(config.alphabet_size);
      const auto proto = protos.row(s.labels[r]);
      std::copy(proto.begin(), proto.end(), s.clean.row(r).begin());
    }
    s.features = s.clean;
    if (sigma > 0.0) {
      for (double& v : s.features.values()) v += noise_rng.normal(0.0, sigma);
    }
  }
  return out;
}

std::vector<Sample> gen_dataset(const TaskConfig& config, Split split, Domain domain) {
  return gen_dataset_with_sigma(config, split, domain,
                                domain == Domain::kHr ? config.noise_sigma_hr : config.noise_sigma_lr);
}

Matrix stack_features(std::span<const Sample> samples) {
  if (samples.empty()) return {};
  const std::size_t l = samples.front().features.rows();
  const std::size_t d = samples.front().features.cols();
  Matrix out(samples.size() * l, d);
  auto dst = out.values().begin();
  for (const auto& s : samples) {
    if (s.features.rows() != l || s.features.cols() != d) throw ShapeError("stack_features: ragged samples");
    dst = std::copy(s.features.values().begin(), s.features.values().end(), dst);
  }
  return out;
}

HardLabels nearest_prototype(const Matrix& rows, const Matrix& protos) {
  if (rows.cols() != protos.cols()) throw ShapeError("nearest_prototype: dimension mismatch");
  HardLabels out(rows.rows());
  for (std::size_t r = 0; r < rows.rows(); ++r) {
    const auto x = rows.row(r);
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < protos.rows(); ++k) {
      const auto p = protos.row(k);
      double dist = 0.0;
      for (std::size_t c = 0; c < x.size(); ++c) dist += (x[c] - p[c]) * (x[c] - p[c]);
      if (dist < best) {
        best = dist;
        out[r] = k;
      }
    }
  }
  return out;
}

std::vector<std::span<double>> RecognizerParams::parameter_views() {
  return {w_in.values(), b_in.values(), {&slope_in, 1}, w_mid.values(), b_mid.values(), {&slope_mid, 1},
          w_out.values(), b_out.values()};
}

std::vector<std::span<const double>> RecognizerParams::parameter_views() const {
  return {w_in.values(), b_in.values(), {&slope_in, 1}, w_mid.values(), b_mid.values(), {&slope_mid, 1},
          w_out.values(), b_out.values()};
}

std::size_t RecognizerParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto v : parameter_views()) n += v.size();
  return n;
}

RecognizerParams RecognizerParams::zeros_like() const {
  RecognizerParams z;
  z.w_in = Matrix(w_in.rows(), w_in.cols());
  z.b_in = Matrix(b_in.rows(), b_in.cols());
  z.slope_in = 0.0;
  z.w_mid = Matrix(w_mid.rows(), w_mid.cols());
  z.b_mid = Matrix(b_mid.rows(), b_mid.cols());
  z.slope_mid = 0.0;
  z.w_out = Matrix(w_out.rows(), w_out.cols());
  z.b_out = Matrix(b_out.rows(), b_out.cols());
  return z;
}

RecognizerParams init_recognizer(const TaskConfig& config, Rng& rng) {
  config.validate();
  auto layer = [&rng](std::size_t fan_in, std::size_t fan_out) {
    const double lim = 1.0 / std::sqrt(static_cast<double>(fan_in));
    return random_uniform(fan_in, fan_out, rng, -lim, lim);
  };
  RecognizerParams p;
  p.w_in = layer(config.feature_dim, config.hidden_dim);
  p.b_in = bias_row(config.hidden_dim);
  p.w_mid = layer(config.hidden_dim, config.embed_dim);
  p.b_mid = bias_row(config.embed_dim);
  p.w_out = layer(config.embed_dim, config.alphabet_size);
  p.b_out = bias_row(config.alphabet_size);
  return p;
}

RecognizerParams initial_recognizer(const TaskConfig& config, Domain domain) {
  Rng rng(derive_seed(config.seed, kInitStream + domain_index(domain)));
  return init_recognizer(config, rng);
}

RecognizerTrace recognizer_forward_trace(const Matrix& x, const RecognizerParams& params) {
  if (x.cols() != params.w_in.rows()) {
    throw ShapeError("recognizer_forward: feature width " + std::to_string(x.cols()) + " vs W_in rows " +
                     std::to_string(params.w_in.rows()));
  }
  RecognizerTrace t;
  t.x = x;
  t.pre_in = linear_forward(x, params.w_in, params.b_in.values());
  t.act_in = prelu(t.pre_in, params.slope_in);
  t.pre_mid = linear_forward(t.act_in, params.w_mid, params.b_mid.values());
  t.h = prelu(t.pre_mid, params.slope_mid);
  t.logits = linear_forward(t.h, params.w_out, params.b_out.values());
  return t;
}

RecognizerOutput recognizer_forward(const Matrix& x, const RecognizerParams& params) {
  RecognizerTrace t = recognizer_forward_trace(x, params);
  return {std::move(t.h), std::move(t.logits)};
}

RecognizerParams recognizer_backward(const RecognizerTrace& trace, const RecognizerParams& params,
                                     const Matrix& grad_logits) {
  if (!grad_logits.same_shape(trace.logits)) throw ShapeError("recognizer_backward: gradient shape mismatch");
  RecognizerParams g;
  g.slope_in = 0.0;
  g.slope_mid = 0.0;
  g.w_out = matmul_tn(trace.h, grad_logits);
  g.b_out = column_sums(grad_logits);
  const Matrix d_h = matmul_nt(grad_logits, params.w_out);
  const Matrix d_pre_mid = prelu_backward(trace.pre_mid, d_h, params.slope_mid, g.slope_mid);
  g.w_mid = matmul_tn(trace.act_in, d_pre_mid);
  g.b_mid = column_sums(d_pre_mid);
  const Matrix d_act_in = matmul_nt(d_pre_mid, params.w_mid);
  const Matrix d_pre_in = prelu_backward(trace.pre_in, d_act_in, params.slope_in, g.slope_in);
  g.w_in = matmul_tn(trace.x, d_pre_in);
  g.b_in = column_sums(d_pre_in);
  return g;
}

RecognizerParams batch_gradient(const RecognizerParams& params, std::span<const Sample> student_batch,
                                std::span<const Sample> teacher_batch, const LossSpec& loss,
                                const RecognizerParams* teacher, double* loss_value) {
  if (loss.needs_teacher() && teacher == nullptr) {
    throw ConfigError("loss '" + loss.name() + "' requires a teacher recognizer");
  }
  const Matrix x = stack_features(student_batch);
  const HardLabels labels = stack_labels(student_batch);
  std::optional<Matrix> teacher_logits;
  if (loss.needs_teacher()) {
    if (teacher_batch.size() != student_batch.size()) throw ShapeError("batch_gradient: unpaired teacher batch");
    teacher_logits = recognizer_forward(stack_features(teacher_batch), *teacher).logits;
  }
  return stacked_gradient(params, x, labels, teacher_logits ? &*teacher_logits : nullptr, loss, loss_value);
}

Evaluation evaluate_recognizer(const RecognizerParams& params, std::span<const Sample> samples, std::size_t n_bins) {
  if (samples.empty()) throw DomainError("evaluate_recognizer: no samples");
  const Matrix logits = recognizer_forward(stack_features(samples), params).logits;
  const Matrix probs = softmax_rows(logits, 1.0);
  const std::size_t l = samples.front().labels.size();

  std::vector<Matrix> per_seq;
  std::vector<HardLabels> refs;
  std::vector<HardLabels> hyps;
  per_seq.reserve(samples.size());
  for (std::size_t s = 0; s < samples.size(); ++s) {
    per_seq.push_back(rows_slice(probs, s * l, l));
    refs.push_back(samples[s].labels);
    hyps.push_back(argmax_rows(per_seq.back()));
  }
  const SequenceConfidences conf = sequence_confidences(per_seq, refs);

  Evaluation ev;
  ev.rates = error_rates(std::span<const HardLabels>(refs), std::span<const HardLabels>(hyps));
  std::size_t correct = 0;
  for (bool ok : conf.char_correct) correct += ok ? 1 : 0;
  ev.accuracy = static_cast<double>(correct) / static_cast<double>(conf.char_correct.size());
  ev.mean_confidence = std::accumulate(conf.char_conf.begin(), conf.char_conf.end(), 0.0) /
                       static_cast<double>(conf.char_conf.size());
  ev.confidence_std = confidence_std(conf.char_conf);
  // std::vector<bool> has no contiguous storage; copy into plain arrays for the span API.
  const std::unique_ptr<bool[]> char_ok(new bool[conf.char_correct.size()]);
  std::copy(conf.char_correct.begin(), conf.char_correct.end(), char_ok.get());
  const std::unique_ptr<bool[]> word_ok(new bool[conf.word_correct.size()]);
  std::copy(conf.word_correct.begin(), conf.word_correct.end(), word_ok.get());
  ev.char_reliability = reliability(conf.char_conf, {char_ok.get(), conf.char_correct.size()}, n_bins,
                                    ReliabilityLevel::kCharacter);
  ev.word_reliability = reliability(conf.word_conf, {word_ok.get(), conf.word_correct.size()}, n_bins,
                                    ReliabilityLevel::kWord);
  ev.max_probs = conf.char_conf;
  return ev;
}

TrainResult train_recognizer(const TaskConfig& config, Domain domain, const LossSpec& loss,
                             const RecognizerParams* teacher, const TrainOptions& options) {
  config.validate();
  loss.validate();
  if (loss.needs_teacher() && teacher == nullptr) {
    throw ConfigError("loss '" + loss.name() + "' requires a teacher recognizer");
  }

  const std::vector<Sample> train = gen_dataset(config, Split::kTrain, domain);
  const std::vector<Sample> test = gen_dataset(config, Split::kTest, domain);
  const std::size_t l = config.sequence_length;

  // The teacher is frozen, so its logits on the paired hr inputs are computed once.
  std::optional<Matrix> teacher_logits;
  if (loss.needs_teacher()) {
    const std::vector<Sample> hr = domain == Domain::kHr ? train : gen_dataset(config, Split::kTrain, Domain::kHr);
    teacher_logits = recognizer_forward(stack_features(hr), *teacher).logits;
  }

  TrainResult result;
  result.params = options.init ? *options.init : initial_recognizer(config, domain);
  Rng shuffle_rng(derive_seed(config.seed, kShuffleStream + domain_index(domain)));
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng.engine());
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
      const std::size_t count = std::min(config.batch_size, order.size() - begin);
      Matrix x(count * l, config.feature_dim);
      HardLabels labels(count * l);
      std::optional<Matrix> t_logits;
      if (teacher_logits) t_logits = Matrix(count * l, config.alphabet_size);
      for (std::size_t i = 0; i < count; ++i) {
        const std::size_t idx = order[begin + i];
        const Sample& s = train[idx];
        std::copy(s.features.values().begin(), s.features.values().end(),
                  x.values().begin() + static_cast<std::ptrdiff_t>(i * l * config.feature_dim));
        std::copy(s.labels.begin(), s.labels.end(), labels.begin() + static_cast<std::ptrdiff_t>(i * l));
        if (t_logits) {
          const auto src = teacher_logits->values().subspan(idx * l * config.alphabet_size, l * config.alphabet_size);
          std::copy(src.begin(), src.end(),
                    t_logits->values().begin() + static_cast<std::ptrdiff_t>(i * l * config.alphabet_size));
        }
      }
      double batch_loss = 0.0;
      RecognizerParams grad;
      try {
        grad = stacked_gradient(result.params, x, labels, t_logits ? &*t_logits : nullptr, loss, &batch_loss);
      } catch (const DomainError& e) {
        // inputs are finite, so a domain error here means the parameters blew up
        throw TrainingDiverged("training diverged at epoch " + std::to_string(epoch) + ": " + e.what());
      }
      if (!std::isfinite(batch_loss)) {
        throw TrainingDiverged("training diverged: non-finite loss at epoch " + std::to_string(epoch));
      }
      sgd_step(result.params, grad, config.learning_rate);
      loss_sum += batch_loss;
      ++batches;
    }
    if (!all_finite(result.params)) {
      throw TrainingDiverged("training diverged: non-finite parameters at epoch " + std::to_string(epoch));
    }
    EpochLog entry;
    entry.loss = loss_sum / static_cast<double>(batches);
    if (options.evaluate_each_epoch || epoch + 1 == config.epochs) {
      const Evaluation ev = evaluate_recognizer(result.params, test, config.n_bins);
      entry.test_accuracy = ev.accuracy;
      entry.mean_confidence = ev.mean_confidence;
      entry.ece = ev.char_reliability.ece;
    }
    result.log.epochs.push_back(entry);
  }
  return result;
}

double gradcheck_recognizer(const RecognizerParams& params, const Sample& sample, const LossSpec& loss,
                            const Matrix* teacher_logits, double step) {
  const Matrix* t = loss.needs_teacher() ? teacher_logits : nullptr;
  const RecognizerParams analytic = stacked_gradient(params, sample.features, sample.labels, t, loss, nullptr);
  auto loss_at = [&](const RecognizerParams& p) {
    const Matrix logits = recognizer_forward(sample.features, p).logits;
    return combined_loss(loss, logits, t, &sample.labels).value;
  };

  RecognizerParams probe = params;
  auto probe_views = probe.parameter_views();
  const auto grad_views = analytic.parameter_views();
  double worst = 0.0;
  for (std::size_t v = 0; v < probe_views.size(); ++v) {
    for (std::size_t i = 0; i < probe_views[v].size(); ++i) {
      const double saved = probe_views[v][i];
      probe_views[v][i] = saved + step;
      const double up = loss_at(probe);
      probe_views[v][i] = saved - step;
      const double down = loss_at(probe);
      probe_views[v][i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double a = grad_views[v][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), kGradcheckFloor});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  return worst;
}

GradcheckInstance make_gradcheck_instance(const TaskConfig& config, const LossSpec& loss, std::uint64_t seed,
                                          double mae_margin, double kink_margin) {
  Rng rng(seed);
  GradcheckInstance inst;
  inst.params = init_recognizer(config, rng);
  for (Matrix* b : {&inst.params.b_in, &inst.params.b_mid, &inst.params.b_out}) {
    for (double& v : b->values()) v = rng.uniform(-0.5, 0.5);
  }
  inst.params.slope_in = rng.uniform(0.05, 0.5);
  inst.params.slope_mid = rng.uniform(0.05, 0.5);

  auto min_abs = [](const Matrix& m) {
    double v = std::numeric_limits<double>::infinity();
    for (double x : m.values()) v = std::min(v, std::abs(x));
    return v;
  };
  for (int attempt = 0;; ++attempt) {
    if (attempt == 1000) throw DomainError("make_gradcheck_instance: no input clears the kink margin");
    inst.sample.features = random_normal(config.sequence_length, config.feature_dim, rng);
    const RecognizerTrace t = recognizer_forward_trace(inst.sample.features, inst.params);
    if (min_abs(t.pre_in) >= kink_margin && min_abs(t.pre_mid) >= kink_margin) break;
  }
  inst.sample.clean = Matrix(config.sequence_length, config.feature_dim);
  for (std::size_t i = 0; i < config.sequence_length; ++i) {
    inst.sample.labels.push_back(rng.uniform_index(config.alphabet_size));
  }

  const bool has_mae = loss.kind == LossKind::kKlMae || loss.kind == LossKind::kCeKlMae;
  if (has_mae) {
    inst.teacher_logits = recognizer_forward(inst.sample.features, inst.params).logits;
    for (double& v : inst.teacher_logits.values()) {
      const double offset = rng.uniform(mae_margin, mae_margin + 1.0);
      v += rng.uniform() < 0.5 ? -offset : offset;
    }
  } else {
    inst.teacher_logits = random_normal(config.sequence_length, config.alphabet_size, rng, 2.0);
  }
  return inst;
}

}  // namespace ncap
