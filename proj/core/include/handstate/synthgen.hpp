#pragma once

// Synthetic acquisition protocol. Emulates the three-modality recording
// procedure (10 s open/close cycles, 60 s sequences, 3 sequences per modality
// per user) with a signal model in which:
//   - motor position follows the command regardless of the user's behaviour,
//   - motor current rises when the user opposes, on top of a per-user idle
//     current, and does not tell helping from passive,
//   - EMG shows whether the user is active and how hard they push in each
//     cycle, but flexor and extensor reach the electrodes alike, through a
//     user-specific channel matrix that does not transfer between users,
//   - the hand opening depends on the modality through a gain and a lag, and
//     on the effort of the current cycle.

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "handstate/types.hpp"

namespace handstate {

struct UserProfile {
  std::string id;
  /// channel x (flexor, extensor) mixing weights, entries in [0, 1.5].
  std::array<std::array<double, 2>, kEmgChannels> emg_mixing{};
  std::array<double, kEmgChannels> emg_noise_std{};
  double motor_backlash = 0.0;  // radians of tendon slack
  double current_gain = 0.0;    // opposition torque -> motor current
  double base_current = 0.0;    // idle motor current (friction), per device fit
  double session_drift = 0.1;   // relative perturbation of mixing per session
  std::uint64_t seed = 0;

  /// Random profile for user `id`, deterministic in seed.
  static UserProfile draw(std::string id, std::uint64_t seed);
  /// The profile as seen in one recording session: mixing entries scaled by
  /// independent factors in [1 - drift, 1 + drift].
  UserProfile for_session(std::string_view session) const;
};

struct ProtocolConfig {
  double cycle_period = 10.0;
  double sequence_duration = 60.0;
  int sequences_per_modality = 3;
  int users = 5;
  std::uint64_t seed = 42;
  std::string session = "s1";
  /// Multiplies every stochastic perturbation; 0 gives noiseless signals.
  double noise_scale = 1.0;
  /// Overrides every profile's current_gain when set.
  std::optional<double> current_gain;

  /// duration is a positive integer multiple of cycle_period, counts >= 1.
  void validate() const;
};

/// Per-modality hand response: opening = gain * command(t - lag).
struct ModalityResponse {
  double gain;
  double lag;
};
ModalityResponse response_of(Modality m) noexcept;

/// Commanded closing angle, (1 - cos(2 pi t / P)) / 2 * pi/2.
double command_angle(double t, double period) noexcept;

/// All user profiles of a protocol run, in user order.
std::vector<UserProfile> draw_profiles(const ProtocolConfig& cfg);

Dataset generate_dataset(const ProtocolConfig& cfg);

/// One recording of a single modality for an already session-adjusted profile.
RawSequence simulate_sequence(const UserProfile& profile, Modality modality,
                              const ProtocolConfig& cfg, std::uint64_t seed);

inline constexpr double kOnlineSegment = 30.0;
inline constexpr double kOnlineDuration = 180.0;

/// 180 s recording cycling Helping, Passive, Opposing twice in 30 s segments.
RawSequence generate_online_session(const UserProfile& profile, const ProtocolConfig& cfg,
                                    std::uint64_t seed);

}  // namespace handstate
