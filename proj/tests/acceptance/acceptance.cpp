// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. Tolerances are fixed below; nothing is read from the
// environment.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <map>
#include <random>
#include <set>

#include <fmt/format.h>

#include "fixtures.hpp"
#include "handstate/cli/plots.hpp"
#include "handstate/dataset_io.hpp"
#include "handstate/eval.hpp"
#include "handstate/model_state.hpp"
#include "handstate/models.hpp"
#include "handstate/rng.hpp"
#include "handstate/stream.hpp"
#include "handstate/synthgen.hpp"

using namespace handstate;
namespace fs = std::filesystem;

namespace {

constexpr double kGradientTolerance = 1e-4;
constexpr double kGradientSeconds = 30.0;
constexpr double kSolverTolerance = 1e-4;
constexpr double kArithmeticTolerance = 1e-12;
constexpr int kFoldPlans = 100;
constexpr int kReplaySequences = 20;
constexpr double kReplayTolerance = 1e-9;
constexpr double kFusionMargin = 0.05;
constexpr double kFullOpeningFloor = 0.70;
constexpr double kFullComplianceFloor = 0.60;
constexpr double kAblationSeconds = 15.0 * 60.0;
constexpr double kCrossSessionFloor = 0.6;
constexpr double kLouoDrop = 0.2;
constexpr double kOnlineOpeningFloor = 0.7;
constexpr double kOnlineComplianceFloor = 0.45;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Verdict {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!detail.empty()) detail += "; ";
    detail += what;
    if (!ok) {
      pass = false;
      detail += " [violated]";
    }
  }
};

int failures = 0;

void report(int n, const char* name, const Verdict& v) {
  std::printf("criterion %2d %s: %s | %s\n", n, v.pass ? "PASS" : "FAIL", name, v.detail.c_str());
  std::fflush(stdout);
  if (!v.pass) ++failures;
}

// Runs a criterion; an exception is a failure with its message.
void criterion(int n, const char* name, const std::function<Verdict()>& body) {
  Verdict v;
  try {
    v = body();
  } catch (const std::exception& e) {
    v.pass = false;
    v.detail = fmt::format("exception: {}", e.what());
  }
  report(n, name, v);
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

// ---------------------------------------------------------------------------

Verdict gradient_correctness() {
  Verdict v;
  const auto t0 = Clock::now();
  ModelSpec mlp;
  mlp.kind = Architecture::Mlp;
  mlp.hidden = {100, 100};
  ModelSpec lstm;
  lstm.kind = Architecture::Lstm;
  lstm.hidden = {32, 32};
  for (std::uint64_t seed : {0, 1}) {
    const auto a = gradient_check(mlp, seed);
    v.require(a.max_relative_error < kGradientTolerance,
              fmt::format("mlp seed {}: {:.2e} over {} params", seed, a.max_relative_error, a.checked));
    const auto b = gradient_check(lstm, seed);
    v.require(b.max_relative_error < kGradientTolerance,
              fmt::format("lstm seed {}: {:.2e} over {} params", seed, b.max_relative_error, b.checked));
  }
  const double s = seconds_since(t0);
  v.require(s < kGradientSeconds, fmt::format("{:.1f} s < {:.0f} s", s, kGradientSeconds));
  return v;
}

Verdict two_solvers(std::span<const AlignedSequence> data) {
  Verdict v;
  const TrainingRows rows = TrainingRows::from(data);
  const ModelState closed = train_linear(rows);
  TrainConfig cfg;
  cfg.epochs = 3000;
  cfg.batch = 1 << 30;
  cfg.lr = 0.01;
  cfg.schedule = LrSchedule::Cosine;
  const ModelState descent = train_mlp(rows, FeatureSubset::Full, cfg, {});
  const auto a = predict_raw(closed, rows.x);
  const auto b = predict_raw(descent, rows.x);
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t k = 0; k < 2; ++k) s += (a[i][k] - b[i][k]) * (a[i][k] - b[i][k]);
  }
  const double diff = std::sqrt(s / (2.0 * static_cast<double>(a.size())));
  v.require(diff < kSolverTolerance,
            fmt::format("prediction RMSE difference {:.2e} over {} samples", diff, a.size()));
  return v;
}

Verdict metric_suite() {
  Verdict v;
  auto near = [&](double got, double want, const char* what) {
    v.require(std::abs(got - want) <= kArithmeticTolerance, fmt::format("{} = {}", what, got));
  };
  const std::vector<TargetPair> truth = {{0.3, -1.0}, {1.2, 0.0}, {0.9, 1.0}, {0.1, 0.0}};
  near(rmse(truth, truth)[0], 0.0, "rmse(pred=truth)_o");
  near(rmse(truth, truth)[1], 0.0, "rmse(pred=truth)_c");
  std::vector<TargetPair> shifted = truth;
  for (auto& p : shifted) p.opening += 1.0;
  near(rmse(shifted, truth)[0], 1.0, "rmse(offset 1)_o");
  near(rmse(shifted, truth)[1], 0.0, "rmse(offset 1)_c");
  near(rmse(std::vector<TargetPair>{{0, 0}, {0, 0}}, std::vector<TargetPair>{{3, 0}, {4, 0}})[0], std::sqrt(12.5),
       "rmse((0,0),(0,0) vs (3,0),(4,0))_o");

  near(r_squared(truth, truth)[0], 1.0, "r2(pred=truth)_o");
  near(r_squared(truth, truth)[1], 1.0, "r2(pred=truth)_c");
  near(r_squared(std::vector<TargetPair>{{0, 0}, {0, 1}, {0, 2}}, std::vector<TargetPair>{{0, 0}, {1, 1}, {2, 2}})[0],
       -1.5, "r2(zeros vs 0,1,2)_o");

  // Constant predictors equal to the pool mean, on random pools.
  std::mt19937_64 g(11);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<TargetPair> pool(7 + static_cast<std::size_t>(trial));
    TargetPair mean{0.0, 0.0};
    for (auto& p : pool) {
      p = {u(g), u(g)};
      mean.opening += p.opening / static_cast<double>(pool.size());
      mean.compliance += p.compliance / static_cast<double>(pool.size());
    }
    const std::vector<TargetPair> constant(pool.size(), mean);
    const auto r = r_squared(constant, pool);
    worst = std::max({worst, std::abs(r[0]), std::abs(r[1])});
  }
  v.require(worst <= kArithmeticTolerance, fmt::format("constant-predictor |R2| max {:.1e}", worst));

  bool undefined = false;
  try {
    r_squared(truth, std::vector<TargetPair>(4, {0.5, 0.5}));
  } catch (const MetricError&) {
    undefined = true;
  }
  v.require(undefined, "zero-variance truth is undefined");
  bool mismatch = false;
  try {
    rmse(truth, std::vector<TargetPair>(3));
  } catch (const ValidationError&) {
    mismatch = true;
  }
  v.require(mismatch, "length mismatch rejected");
  return v;
}

Verdict fold_plans() {
  Verdict v;
  std::vector<SequenceKey> keys;
  for (Modality m : kAllModalities) {
    for (int r = 1; r <= 3; ++r) keys.push_back({fmt::format("{}-{}", to_string(m), r), m});
  }
  std::map<std::string, Modality> modality;
  for (const auto& k : keys) modality[k.id] = k.modality;

  int bad = 0;
  std::set<std::vector<std::string>> distinct;
  for (int seed = 0; seed < kFoldPlans; ++seed) {
    const FoldPlan plan = make_fold_plan(keys, static_cast<std::uint64_t>(seed));
    bool ok = plan.folds.size() == 3;
    std::multiset<std::string> seen;
    std::vector<std::string> signature;
    for (const auto& f : plan.folds) {
      std::map<Modality, int> val, train;
      for (const auto& id : f.validation) {
        ++val[modality.at(id)];
        seen.insert(id);
        signature.push_back(id);
      }
      for (const auto& id : f.train) ++train[modality.at(id)];
      std::set<std::string> both(f.train.begin(), f.train.end());
      both.insert(f.validation.begin(), f.validation.end());
      ok = ok && f.validation.size() == 3 && f.train.size() == 6 && both.size() == 9;
      for (Modality m : kAllModalities) ok = ok && val[m] == 1 && train[m] == 2;
    }
    // Validation sets partition the nine ids.
    ok = ok && seen.size() == 9 && std::set<std::string>(seen.begin(), seen.end()).size() == 9;
    if (!ok) ++bad;
    distinct.insert(signature);
  }
  v.require(bad == 0, fmt::format("{} of {} plans violate partition or 1/1/1 | 2/2/2 balance", bad, kFoldPlans));
  v.require(distinct.size() > 1, fmt::format("{} distinct plans", distinct.size()));
  return v;
}

Verdict replay_equivalence() {
  Verdict v;
  const ProtocolConfig cfg;
  const auto profiles = draw_profiles(cfg);
  std::mt19937_64 g(2024);
  std::vector<RawSequence> seqs;
  for (int i = 0; i < kReplaySequences; ++i) {
    const auto& p = profiles[g() % profiles.size()];
    seqs.push_back(simulate_sequence(p, kAllModalities[g() % 3], cfg, g()));
  }
  std::vector<AlignedSequence> train;
  for (int i = 0; i < 3; ++i) train.push_back(align_sequence(seqs[static_cast<std::size_t>(i)]));
  TrainConfig tc;
  tc.epochs = 2;
  std::vector<ModelState> models = {train_lstm(train, FeatureSubset::Full, tc),
                                    train_mlp(TrainingRows::from(train), FeatureSubset::Full, tc),
                                    train_linear(TrainingRows::from(train), FeatureSubset::ExoOnly)};
  double worst = 0.0;
  std::size_t compared = 0;
  bool counts = true;
  for (const auto& model : models) {
    for (const auto& s : seqs) {
      const auto aligned = align_sequence(s);
      const auto batch = predict(model, aligned.features());
      const auto live = replay(s, model).predictions;
      counts = counts && live.size() == batch.size();
      for (std::size_t i = 0; i < std::min(live.size(), batch.size()); ++i) {
        worst = std::max({worst, std::abs(live[i].y.opening - batch[i].opening),
                          std::abs(live[i].y.compliance - batch[i].compliance)});
        ++compared;
      }
    }
  }
  v.require(counts, "replay emits one prediction per aligned tick");
  v.require(worst <= kReplayTolerance,
            fmt::format("max |replay - batch| {:.1e} over {} predictions, {} sequences x {} models", worst, compared,
                        seqs.size(), models.size()));
  return v;
}

struct SubsetMeans {
  double opening = 0.0;
  double compliance = 0.0;
};

template <class Runs>
SubsetMeans means_of(const Runs& runs) {
  std::vector<double> o, c;
  for (const auto& r : runs) {
    o.push_back(*r.report.r2[0]);
    c.push_back(*r.report.r2[1]);
  }
  return {mean_of(o), mean_of(c)};
}

// Shared between criteria 6, 7 and 8.
std::map<FeatureSubset, std::vector<UserCvResult>> lstm_cv;

Verdict ablation_ordering(std::span<const AlignedSequence> data) {
  Verdict v;
  const auto t0 = Clock::now();
  const std::array<Architecture, 1> archs = {Architecture::Lstm};
  const AblationResult res = run_ablation(data, archs, kAllSubsets, EvalConfig{});
  const double s = seconds_since(t0);
  for (const auto& run : res.runs) lstm_cv[parse_subset(run.report.subset)].push_back(run);

  const SubsetMeans full = means_of(lstm_cv[FeatureSubset::Full]);
  const SubsetMeans exo = means_of(lstm_cv[FeatureSubset::ExoOnly]);
  const SubsetMeans emg = means_of(lstm_cv[FeatureSubset::EmgOnly]);
  v.require(full.opening >= kFullOpeningFloor, fmt::format("full R2o {:.3f} >= {:.2f}", full.opening, kFullOpeningFloor));
  v.require(full.compliance >= kFullComplianceFloor,
            fmt::format("full R2c {:.3f} >= {:.2f}", full.compliance, kFullComplianceFloor));
  for (const auto& [name, other] : {std::pair{"exo_only", exo}, std::pair{"emg_only", emg}}) {
    v.require(full.opening - other.opening >= kFusionMargin,
              fmt::format("full - {} R2o {:.3f} (={:.3f})", name, full.opening - other.opening, other.opening));
    v.require(full.compliance - other.compliance >= kFusionMargin,
              fmt::format("full - {} R2c {:.3f} (={:.3f})", name, full.compliance - other.compliance,
                          other.compliance));
  }
  v.require(s < kAblationSeconds, fmt::format("{:.0f} s < {:.0f} s", s, kAblationSeconds));
  return v;
}

Verdict cross_session() {
  Verdict v;
  ProtocolConfig s2;
  s2.session = "s2";
  const auto unseen = align_dataset(generate_dataset(s2));
  std::vector<double> o;
  std::string per_user;
  for (const auto& run : lstm_cv.at(FeatureSubset::Full)) {
    std::vector<AlignedSequence> test;
    for (const auto& s : unseen) {
      if (s.user == run.report.user) test.push_back(s);
    }
    const auto r = score_cross_session(run.models, test);
    o.push_back(*r.report.r2[0]);
    per_user += fmt::format(" {}={:.3f}", run.report.user, o.back());
  }
  v.require(mean_of(o) >= kCrossSessionFloor,
            fmt::format("fold-averaged full R2o on s2 {:.3f} >= {:.1f} (per user:{})", mean_of(o), kCrossSessionFloor,
                        per_user));
  return v;
}

Verdict cross_user(std::span<const AlignedSequence> data) {
  Verdict v;
  std::map<FeatureSubset, SubsetMeans> louo;
  for (FeatureSubset s : kAllSubsets) louo[s] = means_of(run_leave_one_user_out(data, Architecture::Lstm, s, EvalConfig{}));
  const SubsetMeans cv = means_of(lstm_cv.at(FeatureSubset::Full));
  const SubsetMeans full = louo[FeatureSubset::Full];
  v.require(cv.opening - full.opening >= kLouoDrop,
            fmt::format("R2o CV {:.3f} - LOUO {:.3f} = {:.3f} >= {:.1f}", cv.opening, full.opening,
                        cv.opening - full.opening, kLouoDrop));
  v.require(cv.compliance - full.compliance >= kLouoDrop,
            fmt::format("R2c CV {:.3f} - LOUO {:.3f} = {:.3f} >= {:.1f}", cv.compliance, full.compliance,
                        cv.compliance - full.compliance, kLouoDrop));
  v.require(louo[FeatureSubset::ExoOnly].opening >= louo[FeatureSubset::EmgOnly].opening,
            fmt::format("LOUO R2o exo_only {:.3f} >= emg_only {:.3f}", louo[FeatureSubset::ExoOnly].opening,
                        louo[FeatureSubset::EmgOnly].opening));
  return v;
}

Verdict online_session(std::span<const AlignedSequence> data) {
  Verdict v;
  ProtocolConfig s2;
  s2.session = "s2";
  std::vector<double> o, c;
  std::string per_user;
  for (const auto& profile : draw_profiles(ProtocolConfig{})) {
    std::vector<AlignedSequence> train;
    for (const auto& s : data) {
      if (s.user == profile.id) train.push_back(s);
    }
    const ModelState model = train_lstm(train, FeatureSubset::Full, TrainConfig{});
    const RawSequence session =
        generate_online_session(profile.for_session(s2.session), s2, derive_seed(7, {hash_string(profile.id)}));
    const ReplayResult r = replay(session, model);
    if (!r.metrics) throw Error("online session carries no labels");
    o.push_back(*r.metrics->r2[0]);
    c.push_back(*r.metrics->r2[1]);
    per_user += fmt::format(" {}={:.3f}/{:.3f}", profile.id, o.back(), c.back());
  }
  v.require(mean_of(o) >= kOnlineOpeningFloor, fmt::format("R2o {:.3f} >= {:.1f}", mean_of(o), kOnlineOpeningFloor));
  v.require(mean_of(c) >= kOnlineComplianceFloor,
            fmt::format("R2c {:.3f} >= {:.2f} (per user:{})", mean_of(c), kOnlineComplianceFloor, per_user));
  return v;
}

std::map<std::string, std::string> files_below(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = test::slurp(e.path());
  }
  return out;
}

Verdict determinism() {
  Verdict v;
  test::TempDir tmp;
  ProtocolConfig cfg;
  cfg.users = 2;

  save_dataset(generate_dataset(cfg), tmp / "a");
  save_dataset(generate_dataset(cfg), tmp / "b");
  const auto da = files_below(tmp / "a");
  v.require(!da.empty() && da == files_below(tmp / "b"), fmt::format("datasets ({} files)", da.size()));

  const auto data = align_dataset(load_dataset(tmp / "a"));
  std::vector<AlignedSequence> u1;
  for (const auto& s : data) {
    if (s.user == "u1") u1.push_back(s);
  }
  TrainConfig tc;
  tc.epochs = 2;
  tc.seed = 5;
  bool models_equal = true, roundtrip = true;
  for (Architecture arch : kAllArchitectures) {
    const ModelState m = train_model(arch, u1, FeatureSubset::Full, tc);
    save_model(m, tmp / "m1.json");
    save_model(train_model(arch, u1, FeatureSubset::Full, tc), tmp / "m2.json");
    models_equal = models_equal && test::slurp(tmp / "m1.json") == test::slurp(tmp / "m2.json");
    const ModelState back = load_model(tmp / "m1.json");
    for (const auto& s : u1) {
      const auto a = predict(m, s.features());
      const auto b = predict(back, s.features());
      for (std::size_t i = 0; i < a.size(); ++i) {
        // Bitwise, not approximate.
        roundtrip = roundtrip && std::memcmp(&a[i], &b[i], sizeof(TargetPair)) == 0;
      }
    }
  }
  v.require(models_equal, "models of all 5 architectures");
  v.require(roundtrip, "save/load keeps every prediction bit");

  EvalConfig ec;
  ec.train.epochs = 2;
  const std::array<Architecture, 3> archs = {Architecture::Dummy, Architecture::Linear, Architecture::Mlp};
  const auto ra = run_ablation(data, archs, kAllSubsets, ec);
  const auto rb = run_ablation(data, archs, kAllSubsets, ec);
  save_results_csv(ra.rows, (tmp / "a.csv").string());
  save_results_csv(rb.rows, (tmp / "b.csv").string());
  v.require(test::slurp(tmp / "a.csv") == test::slurp(tmp / "b.csv"), "results CSVs");

  const std::string svg_a = cli::render_ablation_svg(aggregate(ra.rows));
  const std::string svg_b = cli::render_ablation_svg(aggregate(load_results_csv((tmp / "b.csv").string())));
  const Dataset raw = load_dataset(tmp / "a");
  const RawSequence& seq = raw.sequences.front();
  const ModelState lstm = train_model(Architecture::Lstm, u1, FeatureSubset::Full, tc);
  const std::string trace_a = cli::render_trace_svg(cli::make_trace(seq, replay(seq, lstm).predictions));
  const std::string trace_b = cli::render_trace_svg(cli::make_trace(seq, replay(seq, lstm).predictions));
  v.require(svg_a == svg_b && trace_a == trace_b, "ablation and trace SVGs");
  return v;
}

}  // namespace

int main() {
  const auto t0 = Clock::now();
  const auto data = align_dataset(generate_dataset(ProtocolConfig{}));

  criterion(1, "gradient correctness", gradient_correctness);
  criterion(2, "two-solver agreement", [&] { return two_solvers(data); });
  criterion(3, "metric unit suite", metric_suite);
  criterion(4, "fold-plan invariants", fold_plans);
  criterion(5, "offline/online equivalence", replay_equivalence);
  criterion(6, "ablation ordering", [&] { return ablation_ordering(data); });
  criterion(7, "cross-session generalization", cross_session);
  criterion(8, "cross-user failure", [&] { return cross_user(data); });
  criterion(9, "online session", [&] { return online_session(data); });
  criterion(10, "determinism and persistence", determinism);

  std::printf("%d of 10 criteria failed (%.0f s)\n", failures, seconds_since(t0));
  return failures == 0 ? 0 : 1;
}
