#include "handstate/sync.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

namespace handstate {

void AlignmentConfig::validate() const {
  if (!(master_rate > 0.0) || !std::isfinite(master_rate)) {
    throw ValidationError(fmt::format("master_rate must be positive, got {}", master_rate));
  }
  if (!(emg_window >= 1.0 / kEmgRate - 1e-12)) {
    throw ValidationError(fmt::format("emg_window must be at least 1/50 s, got {}", emg_window));
  }
  if (!(max_gap > 0.0)) {
    throw ValidationError(fmt::format("max_gap must be positive, got {}", max_gap));
  }
}

double AlignmentConfig::tick_time(std::int64_t k) const noexcept {
  return static_cast<double>(k) / master_rate;
}

double AlignmentConfig::window_start(std::int64_t k) const noexcept {
  return (static_cast<double>(k) - emg_window * master_rate) / master_rate;
}

std::int64_t AlignmentConfig::last_tick(double duration) const noexcept {
  if (duration < 0.0) return -1;
  auto k = static_cast<std::int64_t>(std::floor(duration * master_rate));
  while (tick_time(k + 1) <= duration) ++k;
  while (k >= 0 && tick_time(k) > duration) --k;
  return k;
}

TickSchedule synchronize_streams(std::span<const double> exo_t, std::span<const double> emg_t,
                                 std::span<const double> gt_t, const AlignmentConfig& cfg) {
  TickSchedule out;
  double duration = -1.0;
  if (!exo_t.empty()) duration = std::max(duration, exo_t.back());
  if (!emg_t.empty()) duration = std::max(duration, emg_t.back());
  const std::int64_t last = cfg.last_tick(duration);
  if (last < 0) return out;
  out.ticks.reserve(static_cast<std::size_t>(last + 1));

  // Two-pointer sweeps: every cursor only moves forward as k grows.
  std::size_t exo_next = 0;  // first exo index with t > tick
  std::size_t emg_next = 0;  // first emg index with t > tick
  std::size_t emg_lo = 0;    // first emg index with t > window start
  std::size_t gt_next = 0;   // first gt index with t >= tick

  for (std::int64_t k = 0; k <= last; ++k) {
    TickSlot slot;
    slot.k = k;
    slot.t = cfg.tick_time(k);
    const double lo_edge = cfg.window_start(k);

    while (exo_next < exo_t.size() && exo_t[exo_next] <= slot.t) ++exo_next;
    while (emg_next < emg_t.size() && emg_t[emg_next] <= slot.t) ++emg_next;
    while (emg_lo < emg_t.size() && emg_t[emg_lo] <= lo_edge) ++emg_lo;
    while (gt_next < gt_t.size() && gt_t[gt_next] < slot.t) ++gt_next;

    if (exo_next > 0) slot.exo = exo_next - 1;
    if (emg_next > 0) slot.emg_hold = emg_next - 1;
    slot.emg_begin = std::min(emg_lo, emg_next);
    slot.emg_end = emg_next;

    if (!gt_t.empty()) {
      if (gt_next < gt_t.size() && gt_t[gt_next] == slot.t) {
        slot.gt_lo = slot.gt_hi = gt_next;
      } else if (gt_next > 0 && gt_next < gt_t.size()) {
        slot.gt_lo = gt_next - 1;
        slot.gt_hi = gt_next;
      } else if (gt_next == 0) {
        if (gt_t.front() - slot.t <= cfg.max_gap) slot.gt_lo = slot.gt_hi = std::size_t{0};
      } else if (slot.t - gt_t.back() <= cfg.max_gap) {
        slot.gt_lo = slot.gt_hi = gt_t.size() - 1;
      }
    }
    out.ticks.push_back(slot);
  }
  return out;
}

namespace {

template <typename Sample>
void check_stream_gaps(const std::vector<Sample>& v, std::string_view name, double duration,
                       double max_gap) {
  if (v.front().t > max_gap) throw GapError(std::string(name), 0.0, v.front().t);
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i].t - v[i - 1].t > max_gap) throw GapError(std::string(name), v[i - 1].t, v[i].t);
  }
  if (duration - v.back().t > max_gap) throw GapError(std::string(name), v.back().t, duration);
}

template <typename Sample>
std::vector<double> timestamps(const std::vector<Sample>& v) {
  std::vector<double> t;
  t.reserve(v.size());
  for (const auto& s : v) t.push_back(s.t);
  return t;
}

}  // namespace

void check_gaps(const RawSequence& seq, const AlignmentConfig& cfg) {
  if (seq.exo.empty()) throw ValidationError(fmt::format("sequence '{}': empty exo stream", seq.id));
  if (seq.emg.empty()) throw ValidationError(fmt::format("sequence '{}': empty emg stream", seq.id));
  const double duration = std::max(seq.exo.back().t, seq.emg.back().t);
  check_stream_gaps(seq.exo, "exo", duration, cfg.max_gap);
  check_stream_gaps(seq.emg, "emg", duration, cfg.max_gap);
}

std::optional<double> interpolate_opening(std::span<const TrackerSample> gt, double t,
                                          double max_gap) {
  if (gt.empty()) return std::nullopt;
  auto it = std::lower_bound(gt.begin(), gt.end(), t,
                             [](const TrackerSample& s, double v) { return s.t < v; });
  if (it != gt.end() && it->t == t) return it->opening;
  if (it == gt.begin()) {
    return gt.front().t - t <= max_gap ? std::optional(gt.front().opening) : std::nullopt;
  }
  if (it == gt.end()) {
    return t - gt.back().t <= max_gap ? std::optional(gt.back().opening) : std::nullopt;
  }
  const auto& a = *(it - 1);
  const auto& b = *it;
  const double w = (t - a.t) / (b.t - a.t);
  return a.opening + w * (b.opening - a.opening);
}

std::vector<AlignedSample> align(const RawSequence& seq, const AlignmentConfig& cfg) {
  cfg.validate();
  check_gaps(seq, cfg);

  const auto exo_t = timestamps(seq.exo);
  const auto emg_t = timestamps(seq.emg);
  const auto gt_t = timestamps(seq.gt);
  const TickSchedule schedule = synchronize_streams(exo_t, emg_t, gt_t, cfg);

  std::vector<AlignedSample> out;
  out.reserve(schedule.ticks.size());
  for (const TickSlot& slot : schedule.ticks) {
    if (!slot.exo || !slot.emg_hold) continue;
    AlignedSample s;
    s.t = slot.t;
    const ExoSample& e = seq.exo[*slot.exo];
    s.f[0] = e.position;
    s.f[1] = e.current;
    if (slot.emg_end > slot.emg_begin) {
      const double n = static_cast<double>(slot.emg_end - slot.emg_begin);
      for (std::size_t c = 0; c < kEmgChannels; ++c) {
        double sum = 0.0;
        for (std::size_t j = slot.emg_begin; j < slot.emg_end; ++j) sum += seq.emg[j].channels[c];
        s.f[kExoChannels + c] = sum / n;
      }
    } else {
      const EmgSample& h = seq.emg[*slot.emg_hold];
      std::copy(h.channels.begin(), h.channels.end(), s.f.begin() + kExoChannels);
    }
    if (slot.gt_lo) {
      const TrackerSample& a = seq.gt[*slot.gt_lo];
      const TrackerSample& b = seq.gt[*slot.gt_hi];
      double opening = a.opening;
      if (*slot.gt_hi != *slot.gt_lo) {
        const double w = (slot.t - a.t) / (b.t - a.t);
        opening = a.opening + w * (b.opening - a.opening);
      }
      s.y = TargetPair::clamped(opening, compliance_of(seq.modality_at(slot.t)));
    }
    out.push_back(s);
  }
  return out;
}

AlignedSequence align_sequence(const RawSequence& seq, const AlignmentConfig& cfg) {
  return {seq.id, seq.user, seq.session, seq.modality, align(seq, cfg)};
}

}  // namespace handstate
