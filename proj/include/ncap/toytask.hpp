#pragma once

// Synthetic teacher-student sequence recognition.
//
// Each sequence position is an independent classification: a label picks one
// of A prototype vectors in R^D and the observation is the prototype plus
// gaussian noise. The high-resolution (hr) domain has small noise, the
// low-resolution (lr) domain has large noise, and both domains share label
// sequences so samples pair up index by index. A teacher is trained on hr and
// students on lr under each loss variant.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ncap/losses.hpp"
#include "ncap/metrics.hpp"
#include "ncap/numcore.hpp"
#include "ncap/prior.hpp"

namespace ncap {

struct TaskConfig {
  std::size_t alphabet_size = 20;
  std::size_t sequence_length = 8;
  std::size_t feature_dim = 16;
  std::size_t hidden_dim = 32;
  std::size_t embed_dim = 16;
  std::size_t prior_dim = 8;
  double prototype_scale = 1.0;
  double noise_sigma_hr = 0.1;
  double noise_sigma_lr = 0.8;
  std::size_t train_size = 300;
  std::size_t test_size = 500;
  std::size_t epochs = 133;
  double learning_rate = 0.1;
  std::size_t batch_size = 32;
  std::size_t n_bins = 10;
  std::uint64_t seed = 1;
  // Loss used to pre-train the hr teacher.
  LossSpec teacher_loss{LossKind::kCe};

  // Throws ConfigError on violated invariants.
  void validate() const;
};

enum class Split { kTrain, kTest };
enum class Domain { kHr, kLr };

struct Sample {
  Matrix features;  // L x D
  Matrix clean;     // L x D
  HardLabels labels;
};

Matrix prototypes(const TaskConfig& config);
std::vector<Sample> gen_dataset(const TaskConfig& config, Split split, Domain domain);
// Dataset drawn with an explicit noise level, sharing labels and prototypes with the configured domains.
std::vector<Sample> gen_dataset_with_sigma(const TaskConfig& config, Split split, Domain domain, double sigma);
// Stack every sample's rows into one matrix (samples in order).
Matrix stack_features(std::span<const Sample> samples);
// Decode each row to its nearest prototype (Euclidean).
HardLabels nearest_prototype(const Matrix& rows, const Matrix& protos);

struct RecognizerParams {
  Matrix w_in;   // D x hidden
  Matrix b_in;   // 1 x hidden
  double slope_in = 0.25;
  Matrix w_mid;  // hidden x embed
  Matrix b_mid;  // 1 x embed
  double slope_mid = 0.25;
  Matrix w_out;  // embed x A
  Matrix b_out;  // 1 x A

  std::vector<std::span<double>> parameter_views();
  std::vector<std::span<const double>> parameter_views() const;
  std::size_t parameter_count() const;
  // Zero-valued parameters with the same shapes.
  RecognizerParams zeros_like() const;
  friend bool operator==(const RecognizerParams&, const RecognizerParams&) = default;
};

RecognizerParams init_recognizer(const TaskConfig& config, Rng& rng);
// The seeded initialization train_recognizer starts from for a given domain.
RecognizerParams initial_recognizer(const TaskConfig& config, Domain domain);

struct RecognizerOutput {
  Matrix h;       // L x embed, penultimate representation
  Matrix logits;  // L x A
};

struct RecognizerTrace {
  Matrix x;
  Matrix pre_in;
  Matrix act_in;
  Matrix pre_mid;
  Matrix h;
  Matrix logits;
};

RecognizerOutput recognizer_forward(const Matrix& x, const RecognizerParams& params);
RecognizerTrace recognizer_forward_trace(const Matrix& x, const RecognizerParams& params);
// Gradients of the loss w.r.t. every parameter given d loss / d logits.
RecognizerParams recognizer_backward(const RecognizerTrace& trace, const RecognizerParams& params,
                                     const Matrix& grad_logits);

struct EpochLog {
  double loss = 0.0;
  double test_accuracy = 0.0;
  double mean_confidence = 0.0;
  double ece = 0.0;
};

struct TrainLog {
  std::vector<EpochLog> epochs;
};

struct TrainResult {
  RecognizerParams params;
  TrainLog log;
};

struct TrainOptions {
  // Overrides the seeded initialization (used for teacher-equals-student checks).
  std::optional<RecognizerParams> init;
  // Compute per-epoch test metrics; disabling saves time in sweeps.
  bool evaluate_each_epoch = true;
};

// Minibatch SGD with analytic backprop. The teacher sees the paired hr features.
// Throws ConfigError when the loss needs a teacher that is absent.
TrainResult train_recognizer(const TaskConfig& config, Domain domain, const LossSpec& loss,
                             const RecognizerParams* teacher, const TrainOptions& options = {});

// One SGD step's averaged gradient on a batch; exposed for the fixed-point property.
RecognizerParams batch_gradient(const RecognizerParams& params, std::span<const Sample> student_batch,
                                std::span<const Sample> teacher_batch, const LossSpec& loss,
                                const RecognizerParams* teacher, double* loss_value = nullptr);

struct Evaluation {
  double accuracy = 0.0;          // per-position accuracy
  ErrorRates rates;               // sequence-level wer and corpus cer
  double mean_confidence = 0.0;   // mean per-position max probability
  double confidence_std = 0.0;    // population std of per-position max probability
  ReliabilityReport char_reliability;
  ReliabilityReport word_reliability;
  std::vector<double> max_probs;  // per position, for histograms
};

Evaluation evaluate_recognizer(const RecognizerParams& params, std::span<const Sample> samples, std::size_t n_bins);

// Max relative error between analytic and central-difference gradients over all parameters.
// Relative error is |a - n| / max(|a|, |n|, kGradcheckFloor).
inline constexpr double kGradcheckFloor = 1e-4;
double gradcheck_recognizer(const RecognizerParams& params, const Sample& sample, const LossSpec& loss,
                            const Matrix* teacher_logits, double step);

// A seeded random recognizer, input and teacher logits. Biases and slopes are randomized so no
// term vanishes. Inputs are redrawn until every PReLU pre-activation is at least `kink_margin`
// from zero, and for MAE-bearing losses the teacher logits sit at least `mae_margin` away from
// the student logits, so finite differences never straddle a kink.
struct GradcheckInstance {
  RecognizerParams params;
  Sample sample;
  Matrix teacher_logits;
};

GradcheckInstance make_gradcheck_instance(const TaskConfig& config, const LossSpec& loss, std::uint64_t seed,
                                          double mae_margin = 0.5, double kink_margin = 1e-3);

// ---- Guided reconstruction surrogate -------------------------------------

// reconstructed row = fusion * concat(features row, prior row); fusion is D x (D + C).
struct Reconstruction {
  Matrix reconstructed;  // L x D
  HardLabels decoded;
};

Reconstruction guided_reconstruct(const Sample& sample, const Matrix& prior, const Matrix& fusion, const Matrix& protos);

// Least-squares fusion against clean rows: minimizes sum ||fusion * [x; f] - clean||^2 (+ ridge).
Matrix fit_fusion(std::span<const Sample> samples, std::span<const Matrix> priors, double ridge = 1e-8);

// Copy of the recognizer whose output columns for a seeded fraction of classes are
// cyclically swapped, so those classes are systematically predicted as another class.
RecognizerParams corrupt_teacher(const RecognizerParams& teacher, double fraction, std::uint64_t seed);

enum class PriorKind { kTextPrior, kNcap };
std::string_view prior_name(PriorKind kind);

struct PriorAnalysisRow {
  PriorKind kind = PriorKind::kTextPrior;
  ErrorRates prior_rates;
  ErrorRates output_rates;
  std::optional<double> pearson_wer;
  std::optional<double> pearson_cer;
  std::string null_reason;
};

struct PriorAnalysisOptions {
  double corruption_fraction = 0.3;
  double prior_tau = 1.0;
};

// Trains an hr teacher, corrupts it, then reconstructs lr test samples under TP and NCAP
// priors built from the corrupted recognizer. Returns one row per prior kind.
std::vector<PriorAnalysisRow> run_prior_analysis(const TaskConfig& config, const PriorAnalysisOptions& options);

// ---- Loss-family comparison ---------------------------------------------

struct RunRow {
  std::string loss;
  std::uint64_t seed = 0;
  bool ok = true;
  std::string error;
  double accuracy = 0.0;
  double wer = 0.0;
  double cer = 0.0;
  double ece_word = 0.0;
  double ece_char = 0.0;
  double mean_confidence = 0.0;
  double confidence_std = 0.0;
};

struct AggregateRow {
  std::string loss;
  std::size_t runs = 0;
  double accuracy_mean = 0.0, accuracy_std = 0.0;
  double wer_mean = 0.0, wer_std = 0.0;
  double cer_mean = 0.0, cer_std = 0.0;
  double ece_word_mean = 0.0, ece_word_std = 0.0;
  double ece_char_mean = 0.0, ece_char_std = 0.0;
  double mean_confidence_mean = 0.0, mean_confidence_std = 0.0;
  double confidence_std_mean = 0.0, confidence_std_std = 0.0;
};

struct ComparisonReport {
  std::string config_hash;
  std::string tool_version;
  std::vector<RunRow> rows;
  std::vector<AggregateRow> aggregates;
  // Pooled over seeds, per loss, in loss order.
  std::vector<ReliabilityReport> char_reliability;
  std::vector<ReliabilityReport> word_reliability;
  std::vector<std::vector<std::size_t>> confidence_hist;  // per loss, n_bins counts of max probs

  bool any_failed() const;
};

// Mean and population std per loss over successful rows, in first-appearance order.
std::vector<AggregateRow> aggregate_rows(std::span<const RunRow> rows);

// Per-replicate seed: derive_seed(base, replicate).
std::uint64_t replicate_seed(std::uint64_t base, std::uint64_t replicate);

struct ComparisonOptions {
  std::vector<LossSpec> losses;        // empty: every variant with default hyperparameters
  std::vector<std::uint64_t> seeds{0};  // replicate identifiers
  std::size_t jobs = 1;
};

ComparisonReport run_comparison(const TaskConfig& config, const ComparisonOptions& options);

}  // namespace ncap
