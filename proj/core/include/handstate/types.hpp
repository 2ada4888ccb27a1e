#pragma once

// Domain types shared by every handstate module: the estimation target, the
// three raw sensor streams, labelled recordings and the fused feature rows.

#include <array>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace handstate {

inline constexpr double kMaxOpening = std::numbers::pi / 2.0;

inline constexpr std::size_t kExoChannels = 2;
inline constexpr std::size_t kEmgChannels = 8;
inline constexpr std::size_t kFeatureCount = kExoChannels + kEmgChannels;

inline constexpr double kExoRate = 20.0;
inline constexpr double kEmgRate = 50.0;
inline constexpr double kTrackerRate = 90.0;

// ---------------------------------------------------------------------------
// Errors. The CLI maps these onto exit codes, so keep the hierarchy flat.

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or missing files.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Well-formed input that violates a documented invariant.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// A sensor stream went silent for longer than the alignment tolerance.
class GapError : public ValidationError {
 public:
  GapError(std::string stream, double from, double to);
  const std::string& stream() const noexcept { return stream_; }
  double from() const noexcept { return from_; }
  double to() const noexcept { return to_; }

 private:
  std::string stream_;
  double from_;
  double to_;
};

/// Optimisation failed (non-finite loss, solver did not converge).
class TrainingError : public Error {
 public:
  using Error::Error;
};

/// A metric is undefined for the given pool (e.g. R² with constant truth).
class MetricError : public Error {
 public:
  using Error::Error;
};

// ---------------------------------------------------------------------------

/// Hand state: opening degree in radians (0 open, pi/2 closed) and compliance
/// (-1 stiff, 0 neutral, +1 compliant).
struct TargetPair {
  double opening = 0.0;
  double compliance = 0.0;

  /// Throws ValidationError when either component is outside its range.
  static TargetPair checked(double opening, double compliance);
  /// Saturates both components onto their physical ranges. NaN stays NaN.
  static TargetPair clamped(double opening, double compliance);

  friend bool operator==(const TargetPair&, const TargetPair&) = default;
};

enum class Modality : std::uint8_t { Helping, Passive, Opposing };

inline constexpr std::array<Modality, 3> kAllModalities = {
    Modality::Helping, Modality::Passive, Modality::Opposing};

/// Helping -> +1, Passive -> 0, Opposing -> -1.
double compliance_of(Modality m) noexcept;
/// Inverse of compliance_of; throws ValidationError for anything but -1/0/+1.
Modality modality_from_compliance(double y_c);
std::string_view to_string(Modality m) noexcept;
/// Accepts the lowercase names used on disk ("helping", ...).
Modality parse_modality(std::string_view s);

struct ExoSample {
  double t = 0.0;
  double position = 0.0;  // 0 = open command, 1 = closed command
  double current = 0.0;   // >= 0
  friend bool operator==(const ExoSample&, const ExoSample&) = default;
};

struct EmgSample {
  double t = 0.0;
  std::array<double, kEmgChannels> channels{};
  friend bool operator==(const EmgSample&, const EmgSample&) = default;
};

struct TrackerSample {
  double t = 0.0;
  double opening = 0.0;  // mean finger pitch, thumb excluded
  friend bool operator==(const TrackerSample&, const TrackerSample&) = default;
};

/// Start of a constant-compliance stretch inside a recording. A recording
/// without segments has its sequence-level modality throughout.
struct ModalitySegment {
  double t_start = 0.0;
  Modality modality = Modality::Passive;
  friend bool operator==(const ModalitySegment&, const ModalitySegment&) = default;
};

struct RawSequence {
  std::string id;
  std::string user;
  std::string session;
  Modality modality = Modality::Passive;
  std::vector<ExoSample> exo;
  std::vector<EmgSample> emg;
  std::vector<TrackerSample> gt;  // empty for unlabelled deployment data
  std::vector<ModalitySegment> segments;

  /// Largest timestamp over all three streams (0 when all are empty).
  double duration() const noexcept;
  /// Protocol recordings last 60 s; anything within [55, 65] s conforms.
  bool protocol_conformant() const noexcept;
  bool labelled() const noexcept { return !gt.empty(); }
  /// Modality in force at time t, honouring segments.
  Modality modality_at(double t) const noexcept;

  /// Throws ValidationError (naming the id) when a stream is not strictly
  /// increasing in t or a value is non-finite.
  void validate() const;

  friend bool operator==(const RawSequence&, const RawSequence&) = default;
};

struct Dataset {
  std::vector<RawSequence> sequences;
  std::optional<std::uint64_t> generator_seed;

  std::vector<std::string> users() const;     // sorted, unique
  std::vector<std::string> sessions() const;  // sorted, unique
  const RawSequence& find(std::string_view id) const;
  std::vector<const RawSequence*> of_user(std::string_view user) const;

  /// Unique ids plus per-sequence validation.
  void validate() const;
  /// Every (user, session) holds exactly three sequences of each modality.
  bool protocol_complete() const;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

// ---------------------------------------------------------------------------
// Feature layout: (position, current, emg_1 .. emg_8).

using FeatureRow = std::array<double, kFeatureCount>;

enum class FeatureSubset : std::uint8_t { Full, ExoOnly, EmgOnly };

inline constexpr std::array<FeatureSubset, 3> kAllSubsets = {
    FeatureSubset::Full, FeatureSubset::ExoOnly, FeatureSubset::EmgOnly};

/// Canonical column names, in feature order.
const std::array<std::string_view, kFeatureCount>& feature_names() noexcept;
/// Column indices into FeatureRow selected by a subset, ascending.
std::span<const std::size_t> subset_columns(FeatureSubset s) noexcept;
std::string_view to_string(FeatureSubset s) noexcept;
/// Accepts "full", "exo", "exo_only", "emg", "emg_only".
FeatureSubset parse_subset(std::string_view s);

struct AlignedSample {
  double t = 0.0;
  FeatureRow f{};
  std::optional<TargetPair> y;

  std::span<const double, kExoChannels> f_exo() const noexcept {
    return std::span<const double, kFeatureCount>(f).first<kExoChannels>();
  }
  std::span<const double, kEmgChannels> f_emg() const noexcept {
    return std::span<const double, kFeatureCount>(f).last<kEmgChannels>();
  }
  friend bool operator==(const AlignedSample&, const AlignedSample&) = default;
};

/// One recording after alignment onto the master clock.
struct AlignedSequence {
  std::string id;
  std::string user;
  std::string session;
  Modality modality = Modality::Passive;
  std::vector<AlignedSample> samples;

  bool labelled() const noexcept;
  std::vector<FeatureRow> features() const;
  /// Throws ValidationError if any sample lacks a label.
  std::vector<TargetPair> targets() const;
};

}  // namespace handstate
