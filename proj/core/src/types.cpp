#include "handstate/types.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <map>
#include <set>
#include <tuple>

namespace handstate {

GapError::GapError(std::string stream, double from, double to)
    : ValidationError(fmt::format("{} stream gap of {:.3f} s in interval [{:.4f}, {:.4f}]",
                                  stream, to - from, from, to)),
      stream_(std::move(stream)),
      from_(from),
      to_(to) {}

TargetPair TargetPair::checked(double opening, double compliance) {
  if (!(opening >= 0.0 && opening <= kMaxOpening)) {
    throw ValidationError(fmt::format("opening {} outside [0, pi/2]", opening));
  }
  if (!(compliance >= -1.0 && compliance <= 1.0)) {
    throw ValidationError(fmt::format("compliance {} outside [-1, 1]", compliance));
  }
  return {opening, compliance};
}

TargetPair TargetPair::clamped(double opening, double compliance) {
  auto sat = [](double v, double lo, double hi) {
    if (std::isnan(v)) return v;
    return std::clamp(v, lo, hi);
  };
  return {sat(opening, 0.0, kMaxOpening), sat(compliance, -1.0, 1.0)};
}

double compliance_of(Modality m) noexcept {
  switch (m) {
    case Modality::Helping: return 1.0;
    case Modality::Passive: return 0.0;
    case Modality::Opposing: return -1.0;
  }
  return 0.0;
}

Modality modality_from_compliance(double y_c) {
  if (y_c == 1.0) return Modality::Helping;
  if (y_c == 0.0) return Modality::Passive;
  if (y_c == -1.0) return Modality::Opposing;
  throw ValidationError(fmt::format("compliance {} does not name a modality", y_c));
}

std::string_view to_string(Modality m) noexcept {
  switch (m) {
    case Modality::Helping: return "helping";
    case Modality::Passive: return "passive";
    case Modality::Opposing: return "opposing";
  }
  return "passive";
}

Modality parse_modality(std::string_view s) {
  for (Modality m : kAllModalities) {
    if (to_string(m) == s) return m;
  }
  throw FormatError(fmt::format("unknown modality '{}'", s));
}

double RawSequence::duration() const noexcept {
  double d = 0.0;
  if (!exo.empty()) d = std::max(d, exo.back().t);
  if (!emg.empty()) d = std::max(d, emg.back().t);
  if (!gt.empty()) d = std::max(d, gt.back().t);
  return d;
}

bool RawSequence::protocol_conformant() const noexcept {
  const double d = duration();
  return d >= 55.0 && d <= 65.0;
}

Modality RawSequence::modality_at(double t) const noexcept {
  Modality m = segments.empty() ? modality : segments.front().modality;
  for (const auto& s : segments) {
    if (s.t_start <= t) m = s.modality;
  }
  return m;
}

namespace {

template <typename Sample>
void check_increasing(const std::vector<Sample>& v, std::string_view stream,
                      const std::string& id) {
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i].t)) {
      throw ValidationError(fmt::format("sequence '{}': non-finite timestamp in {} stream", id, stream));
    }
    if (i > 0 && !(v[i].t > v[i - 1].t)) {
      throw ValidationError(fmt::format(
          "sequence '{}': {} timestamps not strictly increasing at index {} (t={} after t={})",
          id, stream, i, v[i].t, v[i - 1].t));
    }
  }
}

void check_finite(double v, std::string_view what, const std::string& id) {
  if (!std::isfinite(v)) {
    throw ValidationError(fmt::format("sequence '{}': non-finite {}", id, what));
  }
}

}  // namespace

void RawSequence::validate() const {
  check_increasing(exo, "exo", id);
  check_increasing(emg, "emg", id);
  check_increasing(gt, "gt", id);
  for (const auto& s : exo) {
    check_finite(s.position, "motor position", id);
    check_finite(s.current, "motor current", id);
  }
  for (const auto& s : emg) {
    for (double c : s.channels) check_finite(c, "emg value", id);
  }
  for (const auto& s : gt) check_finite(s.opening, "tracker opening", id);
  for (std::size_t i = 1; i < segments.size(); ++i) {
    if (!(segments[i].t_start > segments[i - 1].t_start)) {
      throw ValidationError(fmt::format("sequence '{}': segments not increasing", id));
    }
  }
}

std::vector<std::string> Dataset::users() const {
  std::set<std::string> s;
  for (const auto& q : sequences) s.insert(q.user);
  return {s.begin(), s.end()};
}

std::vector<std::string> Dataset::sessions() const {
  std::set<std::string> s;
  for (const auto& q : sequences) s.insert(q.session);
  return {s.begin(), s.end()};
}

const RawSequence& Dataset::find(std::string_view id) const {
  for (const auto& q : sequences) {
    if (q.id == id) return q;
  }
  throw ValidationError(fmt::format("no sequence with id '{}'", id));
}

std::vector<const RawSequence*> Dataset::of_user(std::string_view user) const {
  std::vector<const RawSequence*> out;
  for (const auto& q : sequences) {
    if (q.user == user) out.push_back(&q);
  }
  return out;
}

void Dataset::validate() const {
  std::set<std::string_view> ids;
  for (const auto& q : sequences) {
    if (!ids.insert(q.id).second) {
      throw ValidationError(fmt::format("duplicate sequence id '{}'", q.id));
    }
    q.validate();
  }
}

bool Dataset::protocol_complete() const {
  if (sequences.empty()) return false;
  std::map<std::tuple<std::string, std::string, Modality>, int> counts;
  std::set<std::pair<std::string, std::string>> groups;
  for (const auto& q : sequences) {
    ++counts[{q.user, q.session, q.modality}];
    groups.emplace(q.user, q.session);
  }
  for (const auto& [user, session] : groups) {
    for (Modality m : kAllModalities) {
      auto it = counts.find({user, session, m});
      if (it == counts.end() || it->second != 3) return false;
    }
  }
  return true;
}

const std::array<std::string_view, kFeatureCount>& feature_names() noexcept {
  static constexpr std::array<std::string_view, kFeatureCount> names = {
      "position", "current", "emg_1", "emg_2", "emg_3",
      "emg_4",    "emg_5",   "emg_6", "emg_7", "emg_8"};
  return names;
}

std::span<const std::size_t> subset_columns(FeatureSubset s) noexcept {
  static constexpr std::array<std::size_t, 10> full = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  static constexpr std::array<std::size_t, 2> exo = {0, 1};
  static constexpr std::array<std::size_t, 8> emg = {2, 3, 4, 5, 6, 7, 8, 9};
  switch (s) {
    case FeatureSubset::Full: return full;
    case FeatureSubset::ExoOnly: return exo;
    case FeatureSubset::EmgOnly: return emg;
  }
  return full;
}

std::string_view to_string(FeatureSubset s) noexcept {
  switch (s) {
    case FeatureSubset::Full: return "full";
    case FeatureSubset::ExoOnly: return "exo_only";
    case FeatureSubset::EmgOnly: return "emg_only";
  }
  return "full";
}

FeatureSubset parse_subset(std::string_view s) {
  if (s == "full") return FeatureSubset::Full;
  if (s == "exo" || s == "exo_only") return FeatureSubset::ExoOnly;
  if (s == "emg" || s == "emg_only") return FeatureSubset::EmgOnly;
  throw ValidationError(fmt::format("unknown feature subset '{}' (expected full, exo or emg)", s));
}

bool AlignedSequence::labelled() const noexcept {
  return !samples.empty() &&
         std::all_of(samples.begin(), samples.end(), [](const auto& s) { return s.y.has_value(); });
}

std::vector<FeatureRow> AlignedSequence::features() const {
  std::vector<FeatureRow> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.f);
  return out;
}

std::vector<TargetPair> AlignedSequence::targets() const {
  std::vector<TargetPair> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    if (!s.y) throw ValidationError(fmt::format("sequence '{}' has unlabelled samples", id));
    out.push_back(*s.y);
  }
  return out;
}

}  // namespace handstate
