#include <algorithm>
#include <cmath>
#include <random>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "doctest.h"
#include "fixtures.hpp"
#include "handstate/dataset_io.hpp"
#include "handstate/sync.hpp"

using namespace handstate;

namespace {

// Straightforward per-tick scan, written without the schedule machinery.
std::vector<AlignedSample> brute_force_align(const RawSequence& s, const AlignmentConfig& cfg) {
  double duration = 0.0;
  if (!s.exo.empty()) duration = std::max(duration, s.exo.back().t);
  if (!s.emg.empty()) duration = std::max(duration, s.emg.back().t);
  std::vector<AlignedSample> out;
  for (long k = 0; static_cast<double>(k) / cfg.master_rate <= duration; ++k) {
    const double t = static_cast<double>(k) / cfg.master_rate;
    const ExoSample* exo = nullptr;
    for (const auto& e : s.exo) {
      if (e.t <= t) exo = &e;
    }
    const EmgSample* hold = nullptr;
    std::vector<const EmgSample*> window;
    const double lo = (static_cast<double>(k) - cfg.emg_window * cfg.master_rate) / cfg.master_rate;
    for (const auto& e : s.emg) {
      if (e.t <= t) hold = &e;
      if (e.t > lo && e.t <= t) window.push_back(&e);
    }
    if (!exo || !hold) continue;
    AlignedSample a;
    a.t = t;
    a.f[0] = exo->position;
    a.f[1] = exo->current;
    for (std::size_t c = 0; c < kEmgChannels; ++c) {
      if (window.empty()) {
        a.f[2 + c] = hold->channels[c];
      } else {
        double sum = 0.0;
        for (const auto* e : window) sum += e->channels[c];
        a.f[2 + c] = sum / static_cast<double>(window.size());
      }
    }
    // Label: exact hit, bracket interpolation, or hold within max_gap.
    std::optional<double> y;
    for (std::size_t i = 0; i < s.gt.size() && !y; ++i) {
      if (s.gt[i].t == t) y = s.gt[i].opening;
      if (i + 1 < s.gt.size() && s.gt[i].t < t && t < s.gt[i + 1].t) {
        const double w = (t - s.gt[i].t) / (s.gt[i + 1].t - s.gt[i].t);
        y = s.gt[i].opening + w * (s.gt[i + 1].opening - s.gt[i].opening);
      }
    }
    if (!y && !s.gt.empty()) {
      if (t < s.gt.front().t && s.gt.front().t - t <= cfg.max_gap) y = s.gt.front().opening;
      if (t > s.gt.back().t && t - s.gt.back().t <= cfg.max_gap) y = s.gt.back().opening;
    }
    if (y) a.y = TargetPair::clamped(*y, compliance_of(s.modality_at(t)));
    out.push_back(a);
  }
  return out;
}

}  // namespace

TEST_CASE("nominal rates over 60 s give 1200 ticks") {
  const RawSequence s = test::constant_sequence(59.98, 0.25, 0.5, -0.75, 1.0);
  const auto a = align(s);
  CHECK(a.size() == 1200);
  CHECK(a.front().t == 0.0);
  CHECK(a.back().t == doctest::Approx(59.95));
}

TEST_CASE("constant streams are fixed points") {
  const RawSequence s = test::constant_sequence(5.0, 0.25, 0.5, -0.75, 1.0, Modality::Opposing);
  for (const auto& a : align(s)) {
    CHECK(a.f[0] == 0.25);
    CHECK(a.f[1] == 0.5);
    for (std::size_t c = 2; c < kFeatureCount; ++c) CHECK(a.f[c] == -0.75);
    REQUIRE(a.y);
    CHECK(a.y->opening == 1.0);
    CHECK(a.y->compliance == -1.0);
  }
}

TEST_CASE("label interpolation midpoint") {
  RawSequence s = test::constant_sequence(1.0, 0.0, 0.0, 0.0, 0.0);
  s.gt = {{0.0, 0.0}, {1.0, kMaxOpening}};
  const auto a = align(s);
  const auto it = std::find_if(a.begin(), a.end(), [](const AlignedSample& x) { return x.t == 0.5; });
  REQUIRE(it != a.end());
  CHECK(it->y->opening == doctest::Approx(kMaxOpening / 2).epsilon(1e-15));
}

TEST_CASE("unlabelled recordings align without targets") {
  RawSequence s = test::constant_sequence(2.0, 0.0, 0.0, 0.0, 0.0);
  s.gt.clear();
  const auto a = align(s);
  CHECK_FALSE(a.empty());
  CHECK(std::none_of(a.begin(), a.end(), [](const AlignedSample& x) { return x.y.has_value(); }));
}

TEST_CASE("schedule boundary rules") {
  AlignmentConfig cfg;
  SUBCASE("event before the first tick") {
    const std::vector<double> exo = {0.0, 0.05};
    const std::vector<double> emg = {0.0};
    const auto sch = synchronize_streams(exo, emg, {}, cfg);
    REQUIRE(sch.ticks.size() == 2);
    CHECK(sch.ticks[0].exo == 0u);
    CHECK(sch.ticks[0].emg_begin == 0u);
    CHECK(sch.ticks[0].emg_end == 1u);
  }
  SUBCASE("emg exactly on a tick belongs to it") {
    const std::vector<double> exo = {0.0, 0.05, 0.1};
    const std::vector<double> emg = {0.0, 0.02, 0.04, 0.05, 0.07, 0.1};
    const auto sch = synchronize_streams(exo, emg, {}, cfg);
    // Tick 0.05: window (0, 0.05] holds 0.02, 0.04, 0.05.
    CHECK(sch.ticks[1].emg_begin == 1u);
    CHECK(sch.ticks[1].emg_end == 4u);
    // Tick 0.1: window (0.05, 0.1] holds 0.07, 0.1.
    CHECK(sch.ticks[2].emg_begin == 4u);
    CHECK(sch.ticks[2].emg_end == 6u);
  }
  SUBCASE("ticks without a preceding exo sample are dropped") {
    RawSequence s = test::constant_sequence(1.0, 0.0, 0.0, 0.0, 0.0);
    s.exo.erase(s.exo.begin());  // first exo at 0.05
    const auto a = align(s);
    CHECK(a.front().t == doctest::Approx(0.05));
  }
}

TEST_CASE("alignment matches the brute-force scan on jittered streams") {
  for (std::uint64_t seed = 1; seed <= 25; ++seed) {
    const RawSequence s = test::jittered_sequence(seed, 8.0);
    const auto fast = align(s);
    const auto slow = brute_force_align(s, AlignmentConfig{});
    REQUIRE(fast.size() == slow.size());
    for (std::size_t i = 0; i < fast.size(); ++i) {
      CHECK(fast[i].t == slow[i].t);
      CHECK(fast[i].f == slow[i].f);
      REQUIRE(fast[i].y.has_value() == slow[i].y.has_value());
      if (fast[i].y) {
        CHECK(fast[i].y->opening == doctest::Approx(slow[i].y->opening).epsilon(1e-12));
        CHECK(fast[i].y->compliance == slow[i].y->compliance);
      }
    }
  }
}

TEST_CASE("output length depends only on duration") {
  const AlignmentConfig cfg;
  for (std::uint64_t seed = 8; seed < 20; ++seed) {
    RawSequence s = test::jittered_sequence(seed, 10.0);
    s.exo.push_back({10.0, 0.5, 0.5});
    CHECK(align(s).size() == static_cast<std::size_t>(cfg.last_tick(10.0) + 1));
  }
}

TEST_CASE("emg mean containment") {
  for (std::uint64_t seed = 30; seed < 40; ++seed) {
    const RawSequence s = test::jittered_sequence(seed, 5.0);
    AlignmentConfig cfg;
    cfg.emg_window = 0.1;
    for (const auto& a : align(s, cfg)) {
      for (std::size_t c = 0; c < kEmgChannels; ++c) {
        double lo = std::numeric_limits<double>::infinity(), hi = -lo;
        const EmgSample* hold = nullptr;
        for (const auto& e : s.emg) {
          if (e.t <= a.t) hold = &e;
          if (e.t > a.t - cfg.emg_window - 1e-12 && e.t <= a.t) {
            lo = std::min(lo, e.channels[c]);
            hi = std::max(hi, e.channels[c]);
          }
        }
        if (!std::isfinite(lo)) lo = hi = hold->channels[c];
        CHECK(a.f[2 + c] >= lo - 1e-12);
        CHECK(a.f[2 + c] <= hi + 1e-12);
      }
    }
  }
}

TEST_CASE("alignment is streamable across tick-boundary cuts") {
  const RawSequence s = test::jittered_sequence(50, 12.0);
  const auto whole = align(s);
  // Features of the ticks up to a cut depend only on data up to the cut.
  const double cut = 6.0;
  RawSequence head = s;
  std::erase_if(head.exo, [&](const ExoSample& e) { return e.t > cut; });
  std::erase_if(head.emg, [&](const EmgSample& e) { return e.t > cut; });
  const auto first = align(head);
  REQUIRE(first.size() <= whole.size());
  for (std::size_t i = 0; i < first.size(); ++i) {
    CHECK(first[i].t == whole[i].t);
    CHECK(first[i].f == whole[i].f);
  }
}

TEST_CASE("interleaving of equal timestamps does not matter") {
  // Nominal grids share timestamps (0, 0.1, ...). Write the file with ties in
  // the reverse source order and read it back.
  const RawSequence s = test::jittered_sequence(60, 4.0, 0.0);
  std::vector<std::pair<std::pair<double, int>, std::string>> lines;
  for (const auto& e : s.exo) {
    lines.push_back({{e.t, 2}, fmt::format(R"({{"t":{},"src":"exo","v":[{},{}]}})", e.t, e.position, e.current)});
  }
  for (const auto& e : s.emg) {
    lines.push_back({{e.t, 1}, fmt::format(R"({{"t":{},"src":"emg","v":[{}]}})", e.t, fmt::join(e.channels, ","))});
  }
  for (const auto& e : s.gt) lines.push_back({{e.t, 0}, fmt::format(R"({{"t":{},"src":"gt","v":[{}]}})", e.t, e.opening)});
  std::sort(lines.begin(), lines.end());
  std::string text;
  for (const auto& l : lines) text += l.second + "\n";
  RawSequence back;
  back.id = s.id;
  back.modality = s.modality;
  decode_stream(text, back, "mem");
  CHECK(align(back) == align(s));
}

TEST_CASE("gaps and empty streams") {
  RawSequence s = test::constant_sequence(3.0, 0.0, 0.0, 0.0, 0.0);
  SUBCASE("emg gap") {
    std::erase_if(s.emg, [](const EmgSample& e) { return e.t > 1.0 && e.t < 1.5; });
    try {
      align(s);
      FAIL("expected a gap error");
    } catch (const GapError& e) {
      CHECK(e.stream() == "emg");
      CHECK(e.from() == doctest::Approx(1.0));
      CHECK(e.to() == doctest::Approx(1.5));
    }
  }
  SUBCASE("empty exo") {
    s.exo.clear();
    CHECK_THROWS_AS(align(s), ValidationError);
  }
  SUBCASE("gap within tolerance is fine") {
    std::erase_if(s.exo, [](const ExoSample& e) { return e.t > 1.0 && e.t < 1.15; });
    CHECK_NOTHROW(align(s));
  }
}

TEST_CASE("alignment config validation") {
  AlignmentConfig cfg;
  cfg.master_rate = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg = {};
  cfg.emg_window = 0.001;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg = {};
  CHECK(cfg.last_tick(59.98) == 1199);
  CHECK(cfg.last_tick(0.05) == 1);
  CHECK(cfg.last_tick(-1.0) == -1);
}
