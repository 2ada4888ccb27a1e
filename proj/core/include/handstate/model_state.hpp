#pragma once

// Architecture descriptors, trained parameters and the JSON model file.

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "handstate/types.hpp"

namespace handstate {

enum class Architecture : std::uint8_t { Dummy, Linear, Mlp, Svr, Lstm };

inline constexpr std::array<Architecture, 5> kAllArchitectures = {
    Architecture::Dummy, Architecture::Linear, Architecture::Mlp, Architecture::Svr,
    Architecture::Lstm};

std::string_view to_string(Architecture a) noexcept;
Architecture parse_architecture(std::string_view s);

enum class LrSchedule : std::uint8_t { Constant, Cosine };

struct TrainConfig {
  int epochs = 200;
  /// Samples per step (MLP) or sequences per step (LSTM). 0 picks the
  /// architecture default; a value >= the training size means full batch.
  int batch = 0;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  LrSchedule schedule = LrSchedule::Constant;
  /// Global gradient-norm clip; 0 disables.
  double clip_norm = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct SvrParams {
  double c = 1.0;
  double epsilon = 0.1;
  double gamma = 0.0;  // resolved at training time: 1 / (d * Var(X))
  double tolerance = 1e-3;
  std::int64_t max_iterations = 100000;
  std::array<std::size_t, 2> support{};  // support vectors per target

  friend bool operator==(const SvrParams&, const SvrParams&) = default;
};

struct ModelSpec {
  Architecture kind = Architecture::Dummy;
  FeatureSubset subset = FeatureSubset::Full;
  /// MLP hidden widths (empty = linear model trained by gradient descent) or
  /// LSTM cell widths, bottom to top.
  std::vector<std::size_t> hidden;
  SvrParams svr;
  TrainConfig train;

  std::size_t input_dim() const noexcept { return subset_columns(subset).size(); }
  static constexpr std::size_t output_dim() noexcept { return 2; }
  /// Parameter count implied by the descriptor.
  std::size_t param_count() const noexcept;

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

/// Per-feature z-score statistics, always over all 10 columns.
struct Normalization {
  FeatureRow mean{};
  FeatureRow std{};

  /// Population moments of the rows; any std < 1e-8 is replaced by 1.
  static Normalization fit(std::span<const FeatureRow> rows);
  static Normalization identity();

  friend bool operator==(const Normalization&, const Normalization&) = default;
};

inline constexpr double kStdFloor = 1e-8;

struct ModelState {
  ModelSpec spec;
  Normalization norm = Normalization::identity();
  std::vector<double> params;
  std::uint64_t seed = 0;

  /// Parameter count matches the spec and every std is positive.
  void validate() const;

  friend bool operator==(const ModelState&, const ModelState&) = default;
};

std::string serialize_model(const ModelState& m);
ModelState parse_model(std::string_view json_text);
void save_model(const ModelState& m, const std::filesystem::path& path);
ModelState load_model(const std::filesystem::path& path);

}  // namespace handstate
