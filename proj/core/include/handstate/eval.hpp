#pragma once

// Metrics and the evaluation protocols: per-user 3-fold cross-validation with
// pooled metrics, the feature-subset ablation grid, cross-session testing with
// fold-model averaging, and leave-one-user-out.

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "handstate/model_state.hpp"
#include "handstate/models.hpp"
#include "handstate/sync.hpp"
#include "handstate/types.hpp"

namespace handstate {

// ---------------------------------------------------------------------------
// Metrics

/// Index 0 is the opening degree, index 1 the compliance level.
using PerTarget = std::array<double, 2>;

inline constexpr std::array<std::string_view, 2> kTargetNames = {"y_o", "y_c"};

/// Root-mean-square error per target. ValidationError on empty input or a
/// length mismatch.
PerTarget rmse(std::span<const TargetPair> pred, std::span<const TargetPair> truth);

/// 1 - SS_res / SS_tot per target, SS_tot around the mean of truth.
/// ValidationError on fewer than 2 samples or a length mismatch; MetricError
/// when a target's truth is constant.
PerTarget r_squared(std::span<const TargetPair> pred, std::span<const TargetPair> truth);

/// Single-target forms of the above.
double rmse(std::span<const double> pred, std::span<const double> truth);
double r_squared(std::span<const double> pred, std::span<const double> truth);

struct MetricsReport {
  std::string user;
  std::string architecture;
  std::string subset;
  /// Absent for a target whose truth is constant over the pool.
  std::array<std::optional<double>, 2> r2;
  PerTarget rmse{};
  std::size_t samples = 0;
};

/// Both metrics on one pool; R^2 left absent where undefined.
MetricsReport evaluate(std::span<const TargetPair> pred, std::span<const TargetPair> truth);

// ---------------------------------------------------------------------------
// Folds

struct SequenceKey {
  std::string id;
  Modality modality = Modality::Passive;
};

std::vector<SequenceKey> keys_of(std::span<const AlignedSequence> seqs);
std::vector<SequenceKey> keys_of(std::span<const RawSequence> seqs);

struct Fold {
  std::vector<std::string> train;
  std::vector<std::string> validation;
};

struct FoldPlan {
  std::vector<Fold> folds;

  /// Checks the plan against the sequences it was built from: validation
  /// sets partition the ids with one sequence per modality per fold, and each
  /// fold trains on the remaining six. Throws ValidationError.
  void validate(std::span<const SequenceKey> seqs) const;
};

inline constexpr int kFolds = 3;

/// Three folds over nine protocol sequences; fold i validates the i-th
/// sequence of each modality after a seeded shuffle within the modality.
/// ValidationError unless there are exactly three sequences per modality.
FoldPlan make_fold_plan(std::span<const SequenceKey> seqs, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Protocols

struct EvalConfig {
  TrainConfig train;
  AlignmentConfig align;
  /// Seeds the within-modality fold shuffles.
  std::uint64_t fold_seed = 0;
  /// Worker threads for independent cells; 0 uses the hardware concurrency.
  int threads = 1;
};

/// A model together with the sequences it was trained on.
struct TrainedModel {
  ModelState model;
  std::vector<std::string> train_ids;
};

struct UserCvResult {
  MetricsReport report;
  FoldPlan plan;
  std::vector<TrainedModel> models;  // one per fold
  std::vector<std::string> predicted_ids;
};

/// Aligns every recording of a dataset.
std::vector<AlignedSequence> align_dataset(const Dataset& d, const AlignmentConfig& cfg = {});

/// Per user: one model per fold on the fold's six training sequences, each
/// validation sequence predicted by its fold's model, metrics pooled over
/// the three folds. Users come out sorted. Errors from training are rethrown
/// annotated with (user, fold).
std::vector<UserCvResult> run_per_user_cv(std::span<const AlignedSequence> data, Architecture arch,
                                          FeatureSubset subset, const EvalConfig& cfg);
std::vector<UserCvResult> run_per_user_cv(const Dataset& d, Architecture arch, FeatureSubset subset,
                                          const EvalConfig& cfg);

/// One long-format results row.
struct ResultRow {
  std::string user;
  std::string architecture;
  std::string subset;
  std::string target;  // y_o | y_c
  std::string metric;  // r2 | rmse
  double value = 0.0;
  friend bool operator==(const ResultRow&, const ResultRow&) = default;
};

/// The (up to) four rows of one report; undefined R^2 values are skipped.
std::vector<ResultRow> rows_of(const MetricsReport& r);

/// Cross-user aggregate of one (architecture, subset, target, metric) cell.
struct AggregateCell {
  std::string architecture;
  std::string subset;
  std::string target;
  std::string metric;
  double mean = 0.0;
  std::size_t n = 0;
  /// Half-width of the two-sided 80% t interval (n - 1 dof); absent for n < 2.
  std::optional<double> ci_half_width;
};

inline constexpr double kConfidenceLevel = 0.80;

/// Two-sided t quantile for the confidence level with n - 1 dof.
double t_critical(std::size_t n, double level = kConfidenceLevel);

/// Groups rows by (architecture, subset, target, metric) in first-seen order
/// and averages over users with equal weights.
std::vector<AggregateCell> aggregate(std::span<const ResultRow> rows);

struct AblationResult {
  std::vector<UserCvResult> runs;  // architecture-major, then subset, then user
  std::vector<ResultRow> rows;
  std::vector<AggregateCell> cells;
};

/// The architecture x subset grid of per-user cross-validations.
AblationResult run_ablation(std::span<const AlignedSequence> data, std::span<const Architecture> archs,
                            std::span<const FeatureSubset> subsets, const EvalConfig& cfg);
AblationResult run_ablation(const Dataset& d, std::span<const Architecture> archs, const EvalConfig& cfg);

/// Per-timestep mean of several models' clamped predictions on one sequence.
/// Every model must share the architecture's statefulness; the LSTM runs each
/// model over the whole sequence from a zero state.
std::vector<TargetPair> ensemble_predict(std::span<const ModelState> models,
                                         std::span<const FeatureRow> rows);

struct CrossSessionResult {
  MetricsReport report;
  std::vector<TrainedModel> models;
  std::vector<std::vector<TargetPair>> predictions;  // per test sequence
};

/// Trains the three fold models on the training session and scores their
/// averaged predictions on every test sequence, pooled. Both sets must hold
/// one user; ValidationError when they share a session id.
CrossSessionResult run_cross_session(std::span<const AlignedSequence> train,
                                     std::span<const AlignedSequence> test, Architecture arch,
                                     FeatureSubset subset, const EvalConfig& cfg);
CrossSessionResult run_cross_session(const Dataset& train, const Dataset& test, Architecture arch,
                                     FeatureSubset subset, const EvalConfig& cfg);

/// As above with fold models that are already trained.
CrossSessionResult score_cross_session(std::vector<TrainedModel> models,
                                       std::span<const AlignedSequence> test);

struct LouoResult {
  MetricsReport report;  // report.user is the held-out user
  TrainedModel model;
};

/// One model per user, trained on every other user's sequences and scored on
/// the held-out user's pool. ValidationError with fewer than two users.
std::vector<LouoResult> run_leave_one_user_out(std::span<const AlignedSequence> data, Architecture arch,
                                               FeatureSubset subset, const EvalConfig& cfg);
std::vector<LouoResult> run_leave_one_user_out(const Dataset& d, Architecture arch, FeatureSubset subset,
                                               const EvalConfig& cfg);

/// True when the model's normalisation equals the population moments of the
/// named training sequences (labelled samples for stateless models, all
/// samples for the LSTM), within rounding.
bool normalization_matches(const TrainedModel& m, std::span<const AlignedSequence> data);

// ---------------------------------------------------------------------------
// Results table

inline constexpr std::string_view kCsvHeader = "user,architecture,subset,target,metric,value";

void write_results_csv(std::ostream& out, std::span<const ResultRow> rows);
std::vector<ResultRow> read_results_csv(std::istream& in);
void save_results_csv(std::span<const ResultRow> rows, const std::string& path);
std::vector<ResultRow> load_results_csv(const std::string& path);

}  // namespace handstate
