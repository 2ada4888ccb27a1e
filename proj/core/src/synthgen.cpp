#include "handstate/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include <fmt/format.h>

#include "handstate/rng.hpp"

namespace handstate {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

// Signal-model constants. Everything random is multiplied by noise_scale.
constexpr double kPositionNoise = 0.01;
constexpr double kTrackerNoise = 0.06;
constexpr double kCycleGainJitter = 0.45;
constexpr double kCycleLagJitter = 0.3;
// The passive hand follows the motor more tightly than an active one.
constexpr double kPassiveJitter = 0.1;
constexpr double kBurstAmplitude = 1.5;
constexpr double kBurstJitter = 0.1;
constexpr double kEffortSpread = 0.1;
constexpr double kChannelGainSpread = 0.1;
constexpr double kEmgFluctuation = 0.15;
constexpr double kBaselineTone = 0.05;
constexpr double kCrosstalk = 0.25;
constexpr double kRestingTone = 0.03;
constexpr double kBaseCurrentSpread = 0.02;
constexpr double kLoadCurrent = 0.3;
constexpr double kCurrentNoise = 0.05;
// An engaged muscle holds a tone between bursts, scaled like the bursts.
constexpr double kActiveTone = 0.4;
// Users anticipate each closing command by this much.
constexpr double kAnticipation = 0.3;

using ModalityFn = std::function<Modality(double)>;

// Normalised closing velocity of the command: dc/dt / max(dc/dt).
double closing_velocity(double t, double period) { return std::sin(kTwoPi * t / period); }

struct Activation {
  double flexor = 0.0;
  double extensor = 0.0;
};

// `shift` is the cycle's extra hand lag; bursts move with it.
Activation activation(Modality m, double t, double period, double amplitude, double shift) {
  switch (m) {
    case Modality::Helping: {
      // Flexor drives the closing the hand performs itself.
      const double v = closing_velocity(t + kAnticipation - shift, period);
      return {kRestingTone + amplitude * (kActiveTone + std::max(0.0, v)), kRestingTone};
    }
    case Modality::Passive:
      return {kRestingTone, kRestingTone};
    case Modality::Opposing: {
      // Extensor works against the closing.
      const double v = closing_velocity(t + kAnticipation - shift, period);
      return {kRestingTone, kRestingTone + amplitude * (kActiveTone + std::max(0.0, v))};
    }
  }
  return {};
}

// Opposition torque felt by the motor, in units of the current gain.
// A relaxed hand and one moving along with the motor load it alike; an
// opposing hand holds a steady counter-torque.
double opposition_torque(Modality m) { return m == Modality::Opposing ? 0.6 : 0.0; }

std::size_t sample_count(double duration, double rate) {
  return static_cast<std::size_t>(std::llround(duration * rate));
}

RawSequence simulate_timeline(const UserProfile& p, const ModalityFn& modality_at, double duration,
                              const ProtocolConfig& cfg, std::uint64_t seed) {
  const double P = cfg.cycle_period;
  const double ns = cfg.noise_scale;
  const auto cycles = static_cast<std::size_t>(std::ceil(duration / P)) + 1;

  Rng seq_rng(derive_seed(seed, {4}));
  // Per-cycle effort: a stronger helping burst closes the hand further, a
  // stronger opposing burst holds it back. Both shift with the cycle's lag.
  std::vector<double> cycle_effort(cycles), cycle_burst(cycles), cycle_lag(cycles);
  for (std::size_t k = 0; k < cycles; ++k) {
    cycle_effort[k] = kCycleGainJitter * ns * seq_rng.uniform(-1.0, 1.0);
    cycle_burst[k] = 1.0 + kBurstJitter * ns * seq_rng.uniform(-1.0, 1.0);
    cycle_lag[k] = kCycleLagJitter * ns * seq_rng.uniform(-1.0, 1.0);
  }
  auto jitter_scale = [](Modality m) { return m == Modality::Passive ? kPassiveJitter : 1.0; };
  auto cycle_gain = [&](Modality m, std::size_t k) {
    const double e = jitter_scale(m) * cycle_effort[k];
    return m == Modality::Opposing ? 1.0 - e : 1.0 + e;
  };
  const double base_current = p.base_current + kBaseCurrentSpread * ns * seq_rng.uniform(-1.0, 1.0);
  // Sequence-level effort and small armband displacements between recordings.
  const double effort = 1.0 + kEffortSpread * ns * seq_rng.uniform(-1.0, 1.0);
  const double tone = kBaselineTone * ns * seq_rng.uniform();
  std::array<double, kEmgChannels> channel_gain{};
  for (double& g : channel_gain) g = 1.0 + kChannelGainSpread * ns * seq_rng.uniform(-1.0, 1.0);
  auto cycle_of = [&](double t) {
    return std::min(cycles - 1, static_cast<std::size_t>(std::max(0.0, std::floor(t / P))));
  };

  RawSequence seq;

  Rng exo_rng(derive_seed(seed, {1}));
  const std::size_t n_exo = sample_count(duration, kExoRate);
  seq.exo.reserve(n_exo);
  for (std::size_t i = 0; i < n_exo; ++i) {
    const double t = static_cast<double>(i) / kExoRate;
    const Modality m = modality_at(t);
    const double position = command_angle(t, P) / kMaxOpening + kPositionNoise * ns * exo_rng.normal();
    double current = base_current + kLoadCurrent * std::abs(closing_velocity(t, P)) +
                     p.current_gain * opposition_torque(m) +
                     kCurrentNoise * ns * exo_rng.normal();
    seq.exo.push_back({t, position, std::max(0.0, current)});
  }

  Rng emg_rng(derive_seed(seed, {2}));
  const std::size_t n_emg = sample_count(duration, kEmgRate);
  seq.emg.reserve(n_emg);
  for (std::size_t i = 0; i < n_emg; ++i) {
    const double t = static_cast<double>(i) / kEmgRate;
    const Modality m = modality_at(t);
    const std::size_t k = cycle_of(t);
    const Activation a =
        activation(m, t, P, kBurstAmplitude * effort * (1.0 + cycle_effort[k]) * cycle_burst[k], cycle_lag[k]);
    EmgSample s;
    s.t = t;
    for (std::size_t c = 0; c < kEmgChannels; ++c) {
      const double drive = channel_gain[c] * (p.emg_mixing[c][0] * (a.flexor + tone) +
                                              p.emg_mixing[c][1] * (a.extensor + tone));
      s.channels[c] = drive * (1.0 + kEmgFluctuation * ns * emg_rng.normal()) +
                      p.emg_noise_std[c] * ns * emg_rng.normal();
    }
    seq.emg.push_back(s);
  }

  Rng gt_rng(derive_seed(seed, {3}));
  const std::size_t n_gt = sample_count(duration, kTrackerRate);
  seq.gt.reserve(n_gt);
  double play = 0.0;
  for (std::size_t i = 0; i < n_gt; ++i) {
    const double t = static_cast<double>(i) / kTrackerRate;
    const Modality m = modality_at(t);
    const ModalityResponse r = response_of(m);
    const std::size_t k = cycle_of(t);
    const double input = command_angle(t - r.lag - jitter_scale(m) * cycle_lag[k], P);
    // Play operator: tendon slack lets the hand lag the motor by up to the backlash.
    const double half = 0.5 * p.motor_backlash;
    play = (i == 0) ? input : std::clamp(play, input - half, input + half);
    const double opening = r.gain * cycle_gain(m, k) * play + kTrackerNoise * ns * gt_rng.normal();
    seq.gt.push_back({t, std::clamp(opening, 0.0, kMaxOpening)});
  }
  return seq;
}

}  // namespace

ModalityResponse response_of(Modality m) noexcept {
  switch (m) {
    case Modality::Helping: return {1.0, -0.2};
    case Modality::Passive: return {0.8, 0.3};
    case Modality::Opposing: return {0.35, 0.6};
  }
  return {1.0, 0.0};
}

double command_angle(double t, double period) noexcept {
  return (1.0 - std::cos(kTwoPi * t / period)) / 2.0 * kMaxOpening;
}

UserProfile UserProfile::draw(std::string id, std::uint64_t seed) {
  UserProfile p;
  p.id = std::move(id);
  p.seed = seed;
  Rng rng(seed);
  // Both muscle groups reach every electrode; the extensor pattern is a
  // perturbed copy of the flexor one.
  for (auto& row : p.emg_mixing) {
    row[0] = rng.uniform(0.5, 1.5);
    row[1] = std::clamp(row[0] * (1.0 + kCrosstalk * rng.uniform(-1.0, 1.0)), 0.0, 1.5);
  }
  for (double& s : p.emg_noise_std) s = rng.uniform(0.03, 0.08);
  p.motor_backlash = rng.uniform(0.05, 0.15);
  p.current_gain = rng.uniform(0.2, 0.3);
  p.base_current = rng.uniform(0.2, 0.5);
  return p;
}

UserProfile UserProfile::for_session(std::string_view session) const {
  UserProfile p = *this;
  Rng rng(derive_seed(seed, {hash_string(session)}));
  for (auto& row : p.emg_mixing) {
    for (double& w : row) w = std::clamp(w * (1.0 + session_drift * rng.uniform(-1.0, 1.0)), 0.0, 1.5);
  }
  return p;
}

void ProtocolConfig::validate() const {
  if (!(cycle_period > 0.0)) throw ValidationError("cycle_period must be positive");
  const double cycles = sequence_duration / cycle_period;
  if (!(sequence_duration > 0.0) || std::abs(cycles - std::round(cycles)) > 1e-9) {
    throw ValidationError(fmt::format("sequence_duration {} is not a multiple of cycle_period {}",
                                      sequence_duration, cycle_period));
  }
  if (sequences_per_modality < 1) throw ValidationError("sequences_per_modality must be >= 1");
  if (users < 1) throw ValidationError("users must be >= 1");
  if (!(noise_scale >= 0.0)) throw ValidationError("noise_scale must be >= 0");
  if (session.empty()) throw ValidationError("session name must not be empty");
}

std::vector<UserProfile> draw_profiles(const ProtocolConfig& cfg) {
  std::vector<UserProfile> out;
  for (int u = 0; u < cfg.users; ++u) {
    UserProfile p = UserProfile::draw(fmt::format("u{}", u + 1),
                                      derive_seed(cfg.seed, {0x70726f66ULL, static_cast<std::uint64_t>(u)}));
    if (cfg.current_gain) p.current_gain = *cfg.current_gain;
    out.push_back(std::move(p));
  }
  return out;
}

RawSequence simulate_sequence(const UserProfile& profile, Modality modality, const ProtocolConfig& cfg,
                              std::uint64_t seed) {
  cfg.validate();
  RawSequence seq = simulate_timeline(
      profile, [modality](double) { return modality; }, cfg.sequence_duration, cfg, seed);
  seq.user = profile.id;
  seq.session = cfg.session;
  seq.modality = modality;
  return seq;
}

Dataset generate_dataset(const ProtocolConfig& cfg) {
  cfg.validate();
  Dataset d;
  d.generator_seed = cfg.seed;
  const auto profiles = draw_profiles(cfg);
  for (std::size_t u = 0; u < profiles.size(); ++u) {
    const UserProfile session_profile = profiles[u].for_session(cfg.session);
    for (Modality m : kAllModalities) {
      for (int rep = 1; rep <= cfg.sequences_per_modality; ++rep) {
        const std::uint64_t seed =
            derive_seed(cfg.seed, {hash_string(cfg.session), u, static_cast<std::uint64_t>(m),
                                   static_cast<std::uint64_t>(rep)});
        RawSequence seq = simulate_sequence(session_profile, m, cfg, seed);
        seq.id = fmt::format("{}-{}-{}-{}", profiles[u].id, cfg.session, to_string(m), rep);
        d.sequences.push_back(std::move(seq));
      }
    }
  }
  return d;
}

RawSequence generate_online_session(const UserProfile& profile, const ProtocolConfig& cfg,
                                    std::uint64_t seed) {
  cfg.validate();
  std::vector<ModalitySegment> segments;
  for (int k = 0; k < static_cast<int>(kOnlineDuration / kOnlineSegment); ++k) {
    segments.push_back({kOnlineSegment * k, kAllModalities[static_cast<std::size_t>(k) % 3]});
  }
  auto modality_at = [&segments](double t) {
    Modality m = segments.front().modality;
    for (const auto& s : segments) {
      if (s.t_start <= t) m = s.modality;
    }
    return m;
  };
  RawSequence seq = simulate_timeline(profile, modality_at, kOnlineDuration, cfg, seed);
  seq.id = fmt::format("{}-{}-online", profile.id, cfg.session);
  seq.user = profile.id;
  seq.session = cfg.session;
  seq.modality = segments.front().modality;
  seq.segments = std::move(segments);
  return seq;
}

}  // namespace handstate
