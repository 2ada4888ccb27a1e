#pragma once

// Multi-rate alignment: resamples the exoskeleton (20 Hz), EMG (50 Hz) and
// tracker (90 Hz) streams of a recording onto one master clock.
//
// For master tick k at t_k = k / master_rate:
//   exo   zero-order hold: latest exo sample with t <= t_k
//   emg   per-channel mean over the half-open window (t_k - emg_window, t_k];
//         an empty window holds the latest emg sample with t <= t_k
//   gt    linear interpolation of the tracker stream at t_k
//   y_c   compliance of the modality in force at t_k
// Ticks before the first exo or emg sample are dropped, never back-filled.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "handstate/types.hpp"

namespace handstate {

struct AlignmentConfig {
  double master_rate = kExoRate;
  double emg_window = 0.05;
  double max_gap = 0.2;

  /// master_rate > 0, emg_window >= 1/50 s, max_gap > 0.
  void validate() const;

  /// k / master_rate, the single definition of tick time.
  double tick_time(std::int64_t k) const noexcept;
  /// Exclusive lower edge of tick k's emg window.
  double window_start(std::int64_t k) const noexcept;
  /// Largest k with tick_time(k) <= duration (-1 when duration < 0).
  std::int64_t last_tick(double duration) const noexcept;
};

/// Indices consumed by one master tick.
struct TickSlot {
  std::int64_t k = 0;
  double t = 0.0;
  std::optional<std::size_t> exo;       // latest exo index with t <= tick
  std::size_t emg_begin = 0;            // emg window [emg_begin, emg_end)
  std::size_t emg_end = 0;
  std::optional<std::size_t> emg_hold;  // latest emg index with t <= tick
  std::optional<std::size_t> gt_lo;     // interpolation bracket; lo == hi
  std::optional<std::size_t> gt_hi;     // when the tick hits a sample or holds

  friend bool operator==(const TickSlot&, const TickSlot&) = default;
};

struct TickSchedule {
  std::vector<TickSlot> ticks;
  friend bool operator==(const TickSchedule&, const TickSchedule&) = default;
};

/// Builds the tick schedule for sorted timestamp lists. Ticks run from 0 to
/// last_tick(max(exo_t.back(), emg_t.back())). The tracker stream never
/// extends the schedule; outside its span a label is held for up to max_gap.
TickSchedule synchronize_streams(std::span<const double> exo_t, std::span<const double> emg_t,
                                 std::span<const double> gt_t, const AlignmentConfig& cfg);

/// Throws GapError if exo or emg is silent for more than max_gap anywhere in
/// [0, duration]; ValidationError if either stream is empty.
void check_gaps(const RawSequence& seq, const AlignmentConfig& cfg);

/// Fused 20 Hz feature/label series of one recording.
std::vector<AlignedSample> align(const RawSequence& seq, const AlignmentConfig& cfg = {});

/// align() wrapped with the recording's identity.
AlignedSequence align_sequence(const RawSequence& seq, const AlignmentConfig& cfg = {});

/// Label for tick time t from the tracker stream (nullopt when unavailable).
std::optional<double> interpolate_opening(std::span<const TrackerSample> gt, double t,
                                          double max_gap);

}  // namespace handstate
