#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>

#include "doctest.h"
#include "fixtures.hpp"
#include "handstate/eval.hpp"
#include "handstate/synthgen.hpp"

using namespace handstate;

namespace {

std::vector<SequenceKey> nine_keys() {
  std::vector<SequenceKey> keys;
  for (Modality m : kAllModalities) {
    for (int r = 0; r < 3; ++r) keys.push_back({std::string(to_string(m)) + std::to_string(r), m});
  }
  return keys;
}

// Small protocol-complete dataset, aligned once per test binary.
const std::vector<AlignedSequence>& small_data() {
  static const std::vector<AlignedSequence> data = [] {
    ProtocolConfig cfg = test::small_protocol(3, 20.0);
    return align_dataset(generate_dataset(cfg));
  }();
  return data;
}

std::vector<AlignedSequence> of_user(std::span<const AlignedSequence> data, const std::string& user) {
  std::vector<AlignedSequence> out;
  for (const auto& s : data) {
    if (s.user == user) out.push_back(s);
  }
  return out;
}

}  // namespace

TEST_CASE("rmse hand arithmetic") {
  const std::vector<TargetPair> pred = {{0, 0}, {0, 0}};
  const std::vector<TargetPair> truth = {{3, 0}, {4, 0}};
  const auto r = rmse(pred, truth);
  CHECK(std::abs(r[0] - 3.5355339059327378) < 1e-12);
  CHECK(r[1] == 0.0);
  CHECK(rmse(truth, truth) == PerTarget{0.0, 0.0});

  std::vector<TargetPair> shifted = truth;
  for (auto& p : shifted) p.opening += 1.0;
  CHECK(std::abs(rmse(shifted, truth)[0] - 1.0) < 1e-12);

  CHECK_THROWS_AS(rmse(std::span<const TargetPair>{}, std::span<const TargetPair>{}), ValidationError);
  CHECK_THROWS_AS(rmse(pred, std::span<const TargetPair>(truth).first(1)), ValidationError);
}

TEST_CASE("r squared hand arithmetic") {
  const std::vector<TargetPair> truth = {{0, -1}, {1, 0}, {2, 1}};
  const std::vector<TargetPair> zero(3, TargetPair{0, 0});
  const auto r = r_squared(zero, truth);
  CHECK(std::abs(r[0] - (-1.5)) < 1e-12);
  CHECK(std::abs(r[1] - 0.0) < 1e-12);
  CHECK(r_squared(truth, truth) == PerTarget{1.0, 1.0});

  const std::vector<TargetPair> mean(3, TargetPair{1.0, 0.0});
  CHECK(r_squared(mean, truth) == PerTarget{0.0, 0.0});

  const std::vector<TargetPair> flat(3, TargetPair{0.5, 0.0});
  CHECK_THROWS_AS(r_squared(truth, flat), MetricError);
  CHECK_THROWS_AS(r_squared(std::span<const TargetPair>(truth).first(1), std::span<const TargetPair>(truth).first(1)),
                  ValidationError);
  const auto rep = evaluate(truth, flat);
  CHECK_FALSE(rep.r2[0].has_value());
  CHECK(rep.samples == 3);
}

TEST_CASE("constant predictor scores zero on its own pool") {
  std::mt19937_64 g(1);
  std::uniform_real_distribution<double> u(0.0, kMaxOpening), v(-1.0, 1.0);
  for (int rep = 0; rep < 20; ++rep) {
    std::vector<TargetPair> truth(37);
    double so = 0.0, sc = 0.0;
    for (auto& t : truth) {
      t = {u(g), v(g)};
      so += t.opening;
      sc += t.compliance;
    }
    const std::vector<TargetPair> pred(truth.size(), TargetPair{so / 37.0, sc / 37.0});
    const auto r = r_squared(pred, truth);
    CHECK(std::abs(r[0]) < 1e-12);
    CHECK(std::abs(r[1]) < 1e-12);
  }
}

TEST_CASE("metrics of one target ignore the other") {
  std::mt19937_64 g(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<TargetPair> truth(50), pred(50);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    truth[i] = {u(g), u(g)};
    pred[i] = {u(g), u(g)};
  }
  const auto base = evaluate(pred, truth);
  for (double delta : {-3.0, 0.25, 10.0}) {
    auto moved = pred;
    for (auto& p : moved) p.opening += delta;
    const auto r = evaluate(moved, truth);
    CHECK(r.rmse[1] == base.rmse[1]);
    CHECK(r.r2[1] == base.r2[1]);
  }
}

TEST_CASE("pooled metrics differ from the mean of per-fold metrics") {
  // Two folds with different truth means: each fold predicted by its own mean.
  const std::vector<TargetPair> t1 = {{0.0, 0}, {0.2, 1}};
  const std::vector<TargetPair> t2 = {{1.0, 0}, {1.2, 1}};
  const std::vector<TargetPair> p1(2, TargetPair{0.1, 0.5});
  const std::vector<TargetPair> p2(2, TargetPair{1.1, 0.5});
  const double per_fold = (r_squared(p1, t1)[0] + r_squared(p2, t2)[0]) / 2.0;
  std::vector<TargetPair> tp = t1, pp = p1;
  tp.insert(tp.end(), t2.begin(), t2.end());
  pp.insert(pp.end(), p2.begin(), p2.end());
  const double pooled = r_squared(pp, tp)[0];
  CHECK(per_fold == doctest::Approx(0.0));
  CHECK(pooled == doctest::Approx(1.0 - 0.04 / 1.04));
}

TEST_CASE("per-user cv pools predictions across folds") {
  const auto& data = small_data();
  EvalConfig cfg;
  cfg.fold_seed = 3;
  const auto runs = run_per_user_cv(data, Architecture::Linear, FeatureSubset::Full, cfg);
  REQUIRE(runs.size() == 3);
  for (const auto& run : runs) {
    CHECK(run.models.size() == 3);
    const auto seqs = of_user(data, run.report.user);
    std::multiset<std::string> predicted(run.predicted_ids.begin(), run.predicted_ids.end());
    CHECK(predicted.size() == 9);
    for (const auto& s : seqs) CHECK(predicted.count(s.id) == 1);

    // Recompute the pool independently.
    std::vector<TargetPair> pred, truth;
    double fold_mean = 0.0;
    for (std::size_t f = 0; f < run.plan.folds.size(); ++f) {
      std::vector<TargetPair> fp, ft;
      for (const auto& id : run.plan.folds[f].validation) {
        const auto& s = *std::find_if(seqs.begin(), seqs.end(), [&](const AlignedSequence& x) { return x.id == id; });
        const auto p = predict(run.models[f].model, s.features());
        const auto t = s.targets();
        fp.insert(fp.end(), p.begin(), p.end());
        ft.insert(ft.end(), t.begin(), t.end());
      }
      fold_mean += r_squared(fp, ft)[0] / 3.0;
      pred.insert(pred.end(), fp.begin(), fp.end());
      truth.insert(truth.end(), ft.begin(), ft.end());
      CHECK(normalization_matches(run.models[f], data));
      CHECK(run.models[f].train_ids.size() == 6);
    }
    const auto expected = evaluate(pred, truth);
    CHECK(run.report.r2 == expected.r2);
    CHECK(run.report.rmse == expected.rmse);
    CHECK(*run.report.r2[0] != fold_mean);
  }
}

TEST_CASE("dummy cross-validation scores about zero") {
  EvalConfig cfg;
  for (const auto& run : run_per_user_cv(small_data(), Architecture::Dummy, FeatureSubset::Full, cfg)) {
    CHECK(std::abs(*run.report.r2[0]) <= 0.05);
    CHECK(std::abs(*run.report.r2[1]) <= 0.05);
  }
}

TEST_CASE("fold plans are balanced partitions") {
  const auto keys = nine_keys();
  std::map<std::string, Modality> modality;
  for (const auto& k : keys) modality[k.id] = k.modality;
  std::set<std::vector<std::string>> distinct;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const FoldPlan plan = make_fold_plan(keys, seed);
    CHECK_NOTHROW(plan.validate(keys));
    REQUIRE(plan.folds.size() == 3);
    std::multiset<std::string> validated;
    for (const auto& f : plan.folds) {
      REQUIRE(f.validation.size() == 3);
      REQUIRE(f.train.size() == 6);
      std::map<Modality, int> vc, tc;
      for (const auto& id : f.validation) ++vc[modality.at(id)];
      for (const auto& id : f.train) ++tc[modality.at(id)];
      for (Modality m : kAllModalities) {
        CHECK(vc[m] == 1);
        CHECK(tc[m] == 2);
      }
      std::set<std::string> all(f.train.begin(), f.train.end());
      all.insert(f.validation.begin(), f.validation.end());
      CHECK(all.size() == 9);
      validated.insert(f.validation.begin(), f.validation.end());
    }
    CHECK(validated.size() == 9);
    CHECK(std::set<std::string>(validated.begin(), validated.end()).size() == 9);
    CHECK(make_fold_plan(keys, seed).folds[0].validation == plan.folds[0].validation);
    distinct.insert(plan.folds[0].validation);
  }
  CHECK(distinct.size() > 1);

  auto bad = keys;
  bad.pop_back();
  CHECK_THROWS_AS(make_fold_plan(bad, 0), ValidationError);
  bad = keys;
  bad[0].modality = Modality::Opposing;
  CHECK_THROWS_AS(make_fold_plan(bad, 0), ValidationError);

  FoldPlan broken = make_fold_plan(keys, 1);
  std::swap(broken.folds[0].validation[0], broken.folds[0].train[0]);
  CHECK_THROWS_AS(broken.validate(keys), ValidationError);
}

TEST_CASE("t critical values") {
  // Two-sided 80%: the 0.9 quantile of Student's t.
  CHECK(t_critical(2) == doctest::Approx(3.077684).epsilon(1e-6));
  CHECK(t_critical(5) == doctest::Approx(1.533206).epsilon(1e-6));
  CHECK(t_critical(31) == doctest::Approx(1.310415).epsilon(1e-6));
  CHECK(t_critical(5, 0.95) == doctest::Approx(2.776445).epsilon(1e-6));
  CHECK_THROWS(t_critical(1));
}

TEST_CASE("aggregation over users") {
  const std::vector<ResultRow> rows = {
      {"u1", "lstm", "full", "y_o", "r2", 0.7}, {"u2", "lstm", "full", "y_o", "r2", 0.8},
      {"u3", "lstm", "full", "y_o", "r2", 0.9}, {"u1", "mlp", "full", "y_o", "r2", 0.5},
  };
  const auto cells = aggregate(rows);
  REQUIRE(cells.size() == 2);
  CHECK(cells[0].architecture == "lstm");
  CHECK(cells[0].n == 3);
  CHECK(cells[0].mean == doctest::Approx(0.8));
  // s = 0.1, half width = t(0.9, 2) * s / sqrt(3)
  CHECK(*cells[0].ci_half_width == doctest::Approx(1.885618 * 0.1 / std::sqrt(3.0)).epsilon(1e-6));
  CHECK_FALSE(cells[1].ci_half_width.has_value());
}

TEST_CASE("report rows and csv round trip") {
  MetricsReport r;
  r.user = "u1";
  r.architecture = "lstm";
  r.subset = "full";
  r.r2 = {0.1234567890123, std::nullopt};
  r.rmse = {0.25, 1.0 / 3.0};
  const auto rows = rows_of(r);
  CHECK(rows.size() == 3);

  std::stringstream ss;
  write_results_csv(ss, rows);
  CHECK(ss.str().rfind(std::string(kCsvHeader), 0) == 0);
  CHECK(read_results_csv(ss) == rows);

  std::stringstream bad("user,architecture\nu1,lstm\n");
  CHECK_THROWS_AS(read_results_csv(bad), FormatError);

  test::TempDir tmp;
  save_results_csv(rows, (tmp / "r.csv").string());
  CHECK(load_results_csv((tmp / "r.csv").string()) == rows);
}

TEST_CASE("ablation grid shape") {
  const std::vector<Architecture> archs = {Architecture::Dummy, Architecture::Linear};
  const auto res = run_ablation(small_data(), archs, kAllSubsets, EvalConfig{});
  CHECK(res.runs.size() == 2 * 3 * 3);
  CHECK(res.rows.size() == 2 * 3 * 3 * 4);
  CHECK(res.cells.size() == 2 * 3 * 2 * 2);
  for (const auto& c : res.cells) {
    CHECK(c.n == 3);
    CHECK(c.ci_half_width.has_value());
  }
}

TEST_CASE("threaded protocols match the serial ones") {
  EvalConfig serial;
  EvalConfig threaded;
  threaded.threads = 3;
  const auto a = run_per_user_cv(small_data(), Architecture::Mlp, FeatureSubset::ExoOnly, [&] {
    auto c = serial;
    c.train.epochs = 2;
    return c;
  }());
  const auto b = run_per_user_cv(small_data(), Architecture::Mlp, FeatureSubset::ExoOnly, [&] {
    auto c = threaded;
    c.train.epochs = 2;
    return c;
  }());
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].report.r2 == b[i].report.r2);
    CHECK(a[i].models[0].model == b[i].models[0].model);
  }
}

TEST_CASE("averaging identical models changes nothing") {
  const auto& data = small_data();
  const auto train = of_user(data, "u1");
  EvalConfig cfg;
  cfg.train.epochs = 1;
  const ModelState m = train_model(Architecture::Lstm, train, FeatureSubset::Full, cfg.train);
  const std::vector<ModelState> three(3, m);
  const auto rows = train[0].features();
  CHECK(ensemble_predict(three, rows) == predict(m, rows));
}

TEST_CASE("cross-session protocol") {
  ProtocolConfig a = test::small_protocol(1, 20.0);
  ProtocolConfig b = a;
  b.session = "s2";
  const auto train = align_dataset(generate_dataset(a));
  const auto test = align_dataset(generate_dataset(b));
  EvalConfig cfg;
  const auto res = run_cross_session(train, test, Architecture::Linear, FeatureSubset::Full, cfg);
  CHECK(res.models.size() == 3);
  CHECK(res.predictions.size() == test.size());
  CHECK(res.report.samples == 9 * test.front().samples.size());
  CHECK_THROWS_AS(run_cross_session(train, train, Architecture::Linear, FeatureSubset::Full, cfg), ValidationError);

  // Scoring the training session itself is in-sample, so at least as good as cv.
  const auto cv = run_per_user_cv(train, Architecture::Linear, FeatureSubset::Full, cfg);
  const auto in_sample = score_cross_session(cv[0].models, train);
  CHECK(*in_sample.report.r2[0] >= *cv[0].report.r2[0]);
  CHECK(*in_sample.report.r2[1] >= *cv[0].report.r2[1]);
}

TEST_CASE("leave-one-user-out accounting") {
  ProtocolConfig p = test::small_protocol(5, 10.0);
  const auto data = align_dataset(generate_dataset(p));
  const auto res = run_leave_one_user_out(data, Architecture::Dummy, FeatureSubset::Full, EvalConfig{});
  REQUIRE(res.size() == 5);
  for (const auto& r : res) {
    CHECK(r.model.train_ids.size() == 36);
    CHECK(r.report.samples == 9 * data.front().samples.size());
    for (const auto& id : r.model.train_ids) CHECK(id.find(r.report.user) == std::string::npos);
    CHECK(normalization_matches(r.model, data));
  }
  CHECK_THROWS_AS(run_leave_one_user_out(of_user(data, "u1"), Architecture::Dummy, FeatureSubset::Full, EvalConfig{}),
                  ValidationError);
}

TEST_CASE("no leakage in lstm training statistics") {
  EvalConfig cfg;
  cfg.train.epochs = 1;
  const auto data = of_user(small_data(), "u2");
  for (const auto& run : run_per_user_cv(data, Architecture::Lstm, FeatureSubset::EmgOnly, cfg)) {
    for (const auto& m : run.models) CHECK(normalization_matches(m, data));
  }
}
