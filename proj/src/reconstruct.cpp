#include <Eigen/Dense>

#include <algorithm>
#include <numeric>
#include <string>

#include "ncap/toytask.hpp"

namespace ncap {

namespace {

constexpr std::uint64_t kCorruptStream = 500;
constexpr std::uint64_t kProjectionStream = 600;
constexpr std::uint64_t kAdapterStream = 700;

Matrix concat_row_inputs(const Matrix& features, const Matrix& prior) {
  if (features.rows() != prior.rows()) throw ShapeError("guided_reconstruct: prior rows vs feature rows");
  Matrix u(features.rows(), features.cols() + prior.cols());
  for (std::size_t r = 0; r < features.rows(); ++r) {
    auto dst = u.row(r);
    const auto f = features.row(r);
    const auto p = prior.row(r);
    std::copy(f.begin(), f.end(), dst.begin());
    std::copy(p.begin(), p.end(), dst.begin() + static_cast<std::ptrdiff_t>(f.size()));
  }
  return u;
}

HardLabels argmax_rows(const Matrix& m) {
  HardLabels out(m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const auto row = m.row(r);
    out[r] = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

std::optional<double> safe_pearson(const std::vector<double>& x, const std::vector<double>& y, std::string& reason,
                                   const char* what) {
  try {
    return pearson(x, y);
  } catch (const UndefinedCorrelation&) {
    if (!reason.empty()) reason += "; ";
    reason += std::string(what) + ": constant error series";
    return std::nullopt;
  }
}

}  // namespace

Reconstruction guided_reconstruct(const Sample& sample, const Matrix& prior, const Matrix& fusion,
                                  const Matrix& protos) {
  const std::size_t d = sample.features.cols();
  if (fusion.rows() != d || fusion.cols() != d + prior.cols()) {
    throw ShapeError("guided_reconstruct: fusion must be " + std::to_string(d) + "x" +
                     std::to_string(d + prior.cols()));
  }
  const Matrix u = concat_row_inputs(sample.features, prior);
  Reconstruction out;
  out.reconstructed = matmul_nt(u, fusion);
  out.decoded = nearest_prototype(out.reconstructed, protos);
  return out;
}

Matrix fit_fusion(std::span<const Sample> samples, std::span<const Matrix> priors, double ridge) {
  if (samples.size() != priors.size() || samples.empty()) throw ShapeError("fit_fusion: samples vs priors");
  const std::size_t d = samples.front().features.cols();
  const std::size_t c = priors.front().cols();
  const std::size_t k = d + c;
  Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k));
  Eigen::MatrixXd cross = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(d));
  for (std::size_t s = 0; s < samples.size(); ++s) {
    const Matrix u = concat_row_inputs(samples[s].features, priors[s]);
    const Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> um(
        u.data().data(), static_cast<Eigen::Index>(u.rows()), static_cast<Eigen::Index>(u.cols()));
    const Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> ym(
        samples[s].clean.data().data(), static_cast<Eigen::Index>(samples[s].clean.rows()),
        static_cast<Eigen::Index>(samples[s].clean.cols()));
    gram.noalias() += um.transpose() * um;
    cross.noalias() += um.transpose() * ym;
  }
  gram.diagonal().array() += ridge;
  // Solution is fusion^T (k x d).
  const Eigen::MatrixXd fusion_t = gram.ldlt().solve(cross);
  Matrix fusion(d, k);
  for (std::size_t r = 0; r < d; ++r) {
    for (std::size_t col = 0; col < k; ++col) {
      fusion(r, col) = fusion_t(static_cast<Eigen::Index>(col), static_cast<Eigen::Index>(r));
    }
  }
  if (!fusion.all_finite()) throw DomainError("fit_fusion: singular system");
  return fusion;
}

RecognizerParams corrupt_teacher(const RecognizerParams& teacher, double fraction, std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) throw DomainError("corrupt_teacher: fraction must lie in [0, 1]");
  const std::size_t a = teacher.w_out.cols();
  auto k = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(a)));
  // A single class cannot be swapped with itself.
  if (k == 1) k = 2;
  RecognizerParams out = teacher;
  if (k == 0) return out;

  std::vector<std::size_t> classes(a);
  std::iota(classes.begin(), classes.end(), std::size_t{0});
  Rng rng(derive_seed(seed, kCorruptStream));
  std::shuffle(classes.begin(), classes.end(), rng.engine());
  classes.resize(k);
  // Column of classes[i] receives the original column of classes[i + 1].
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t dst = classes[i];
    const std::size_t src = classes[(i + 1) % k];
    for (std::size_t r = 0; r < out.w_out.rows(); ++r) out.w_out(r, dst) = teacher.w_out(r, src);
    out.b_out(0, dst) = teacher.b_out(0, src);
  }
  return out;
}

std::string_view prior_name(PriorKind kind) { return kind == PriorKind::kTextPrior ? "tp" : "ncap"; }

std::vector<PriorAnalysisRow> run_prior_analysis(const TaskConfig& config, const PriorAnalysisOptions& options) {
  config.validate();
  TrainOptions train_opts;
  train_opts.evaluate_each_epoch = false;
  const RecognizerParams teacher = train_recognizer(config, Domain::kHr, config.teacher_loss, nullptr, train_opts).params;
  const RecognizerParams prior_net = corrupt_teacher(teacher, options.corruption_fraction, config.seed);

  const Matrix protos = prototypes(config);
  const std::vector<Sample> train = gen_dataset(config, Split::kTrain, Domain::kLr);
  const std::vector<Sample> test = gen_dataset(config, Split::kTest, Domain::kLr);

  TextPriorParams tp;
  tp.w_pred = prior_net.w_out;
  tp.b_pred = prior_net.b_out;
  {
    Rng rng(derive_seed(config.seed, kProjectionStream));
    const double lim = 1.0 / std::sqrt(static_cast<double>(config.alphabet_size));
    tp.w_proj = random_uniform(config.alphabet_size, config.prior_dim, rng, -lim, lim);
  }
  Rng adapter_rng(derive_seed(config.seed, kAdapterStream));
  const AdapterParams adapter = init_adapter(config.embed_dim, config.prior_dim, false, adapter_rng);

  auto priors_for = [&](const std::vector<Sample>& samples, PriorKind kind, std::vector<HardLabels>* prior_decoded) {
    std::vector<Matrix> priors;
    priors.reserve(samples.size());
    for (const auto& s : samples) {
      const RecognizerOutput out = recognizer_forward(s.features, prior_net);
      if (prior_decoded != nullptr) prior_decoded->push_back(argmax_rows(out.logits));
      if (kind == PriorKind::kTextPrior) {
        priors.push_back(tp_forward(out.h, tp, options.prior_tau).feature);
      } else {
        priors.push_back(ncap_forward(out.h, adapter));
      }
    }
    return priors;
  };

  std::vector<HardLabels> refs;
  for (const auto& s : test) refs.push_back(s.labels);

  std::vector<PriorAnalysisRow> rows;
  for (PriorKind kind : {PriorKind::kTextPrior, PriorKind::kNcap}) {
    const std::vector<Matrix> train_priors = priors_for(train, kind, nullptr);
    const Matrix fusion = fit_fusion(train, train_priors);

    std::vector<HardLabels> prior_decoded;
    const std::vector<Matrix> test_priors = priors_for(test, kind, &prior_decoded);
    std::vector<HardLabels> output_decoded;
    std::vector<double> prior_cer, output_cer, prior_wer, output_wer;
    for (std::size_t i = 0; i < test.size(); ++i) {
      output_decoded.push_back(guided_reconstruct(test[i], test_priors[i], fusion, protos).decoded);
      const double len = static_cast<double>(refs[i].size());
      prior_cer.push_back(static_cast<double>(edit_distance(refs[i], prior_decoded[i])) / len);
      output_cer.push_back(static_cast<double>(edit_distance(refs[i], output_decoded[i])) / len);
      prior_wer.push_back(prior_decoded[i] == refs[i] ? 0.0 : 1.0);
      output_wer.push_back(output_decoded[i] == refs[i] ? 0.0 : 1.0);
    }
    PriorAnalysisRow row;
    row.kind = kind;
    row.prior_rates = error_rates(std::span<const HardLabels>(refs), std::span<const HardLabels>(prior_decoded));
    row.output_rates = error_rates(std::span<const HardLabels>(refs), std::span<const HardLabels>(output_decoded));
    row.pearson_wer = safe_pearson(prior_wer, output_wer, row.null_reason, "wer");
    row.pearson_cer = safe_pearson(prior_cer, output_cer, row.null_reason, "cer");
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace ncap
