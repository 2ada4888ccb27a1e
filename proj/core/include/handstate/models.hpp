#pragma once

// The five hand-state regressors: training, prediction and gradient checks.
//
//   dummy   constant training-mean predictor
//   linear  ordinary least squares on z-scored features (closed form)
//   mlp     tanh multilayer perceptron, 10 -> 100 -> 100 -> 2 by default
//   svr     two independent epsilon-SVRs with an RBF kernel, SMO solver
//   lstm    two stacked LSTM cells (32 each) and a linear head, full BPTT
//
// Every model reads 10-column feature rows, selects its feature subset,
// z-scores with statistics of its own training split and clamps outputs onto
// [0, pi/2] x [-1, 1].

#include <array>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "handstate/model_state.hpp"
#include "handstate/types.hpp"

namespace handstate {

/// Flattened labelled rows for the stateless models.
struct TrainingRows {
  std::vector<FeatureRow> x;
  std::vector<TargetPair> y;

  /// Labelled samples of every sequence, in order; unlabelled ones skipped.
  static TrainingRows from(std::span<const AlignedSequence> seqs);
  std::size_t size() const noexcept { return x.size(); }
};

struct TrainingLog {
  std::vector<double> epoch_loss;
  std::vector<std::string> warnings;
};

inline constexpr std::size_t kDefaultMlpBatch = 64;
inline constexpr std::size_t kDefaultLstmBatch = 1;
inline constexpr double kRidge = 1e-8;

ModelState train_dummy(const TrainingRows& train, FeatureSubset subset = FeatureSubset::Full);

ModelState train_linear(const TrainingRows& train, FeatureSubset subset = FeatureSubset::Full,
                        const TrainConfig& cfg = {});

/// `hidden` empty trains a linear model by gradient descent.
ModelState train_mlp(const TrainingRows& train, FeatureSubset subset, const TrainConfig& cfg,
                     std::vector<std::size_t> hidden = {100, 100}, TrainingLog* log = nullptr);

ModelState train_svr(const TrainingRows& train, FeatureSubset subset, const TrainConfig& cfg,
                     SvrParams params = {});

ModelState train_lstm(std::span<const AlignedSequence> train, FeatureSubset subset,
                      const TrainConfig& cfg, std::vector<std::size_t> cells = {32, 32},
                      TrainingLog* log = nullptr);

/// Dual solution of one epsilon-SVR.
struct SvrDual {
  std::vector<double> alpha;       // multipliers of the upper tube constraints
  std::vector<double> alpha_star;  // multipliers of the lower tube constraints
  double bias = 0.0;
  std::int64_t iterations = 0;
};

/// Solves the epsilon-SVR dual with an RBF kernel (gamma must be resolved) by
/// SMO with second-order working-set selection, to KKT gap p.tolerance.
/// Rows are used as given, without normalisation. Throws TrainingError when
/// p.max_iterations is exceeded.
SvrDual solve_epsilon_svr(std::span<const std::vector<double>> x, std::span<const double> y,
                          const SvrParams& p);

/// Dispatches on architecture with the default layer sizes.
ModelState train_model(Architecture arch, std::span<const AlignedSequence> train,
                       FeatureSubset subset, const TrainConfig& cfg, TrainingLog* log = nullptr);

/// MLP/LSTM with seeded Xavier-uniform weights, zero biases and (LSTM)
/// forget-gate bias 1. This is exactly the state zero-epoch training yields.
ModelState init_network(ModelSpec spec, const Normalization& norm, std::uint64_t seed);

/// Per-stream inference handle. Stateless models map rows independently;
/// the LSTM carries its state from step to step until reset().
class Predictor {
 public:
  explicit Predictor(const ModelState& model);
  ~Predictor();
  Predictor(Predictor&&) noexcept;
  Predictor& operator=(Predictor&&) noexcept;
  Predictor(const Predictor&);
  Predictor& operator=(const Predictor&);

  /// Unclamped model output.
  std::array<double, 2> step_raw(const FeatureRow& row);
  TargetPair step(const FeatureRow& row);
  std::vector<TargetPair> run(std::span<const FeatureRow> rows);
  void reset();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Clamped predictions. For the LSTM, `stateful` carries state across the
/// rows (one contiguous sequence from a zero state); otherwise every row starts
/// from the zero state. Stateless models ignore the flag.
std::vector<TargetPair> predict(const ModelState& model, std::span<const FeatureRow> rows,
                                bool stateful = true);
std::vector<std::array<double, 2>> predict_raw(const ModelState& model,
                                               std::span<const FeatureRow> rows, bool stateful = true);

/// Training objective of an MLP or LSTM: squared error averaged over samples
/// (or timesteps) and both outputs. Fills `grad` when non-null.
double network_loss(const ModelState& model, std::span<const AlignedSequence> data,
                    std::vector<double>* grad);

struct GradientCheckReport {
  double max_relative_error = 0.0;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
};

// Large enough that rounding in the loss stays well below the smallest
// gradient components of a freshly initialised network; the fourth-order
// stencil keeps the truncation error small at this step.
inline constexpr double kFiniteDifferenceStep = 1e-3;

/// |g_a - g_n| / max(1e-12, |g_a| + |g_n|), with g_n a central difference.
double relative_error(double analytic, double numeric) noexcept;

/// Analytic vs fourth-order central-difference gradient over every parameter
/// of `model`: g_n = (8 (L(+h) - L(-h)) - (L(+2h) - L(-2h))) / 12h.
GradientCheckReport gradient_check(const ModelState& model, std::span<const AlignedSequence> data,
                                   double step = kFiniteDifferenceStep);

/// Seeded small instance: 30 random samples for an MLP, one 20-step sequence
/// for an LSTM, parameters from init_network.
GradientCheckReport gradient_check(const ModelSpec& spec, std::uint64_t seed);

}  // namespace handstate
