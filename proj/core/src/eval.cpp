#include "handstate/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>
#include <unordered_map>

#include <boost/math/distributions/students_t.hpp>
#include <fmt/format.h>

#include "handstate/rng.hpp"

namespace handstate {

// ---------------------------------------------------------------------------
// Metrics

namespace {

void check_lengths(std::size_t pred, std::size_t truth, std::size_t minimum) {
  if (pred != truth) {
    throw ValidationError(fmt::format("prediction count {} differs from truth count {}", pred, truth));
  }
  if (truth < minimum) {
    throw ValidationError(fmt::format("metric needs at least {} samples, got {}", minimum, truth));
  }
}

std::vector<double> component(std::span<const TargetPair> v, int target) {
  std::vector<double> out;
  out.reserve(v.size());
  for (const auto& p : v) out.push_back(target == 0 ? p.opening : p.compliance);
  return out;
}

}  // namespace

double rmse(std::span<const double> pred, std::span<const double> truth) {
  check_lengths(pred.size(), truth.size(), 1);
  double ss = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const double e = pred[i] - truth[i];
    ss += e * e;
  }
  return std::sqrt(ss / static_cast<double>(truth.size()));
}

double r_squared(std::span<const double> pred, std::span<const double> truth) {
  check_lengths(pred.size(), truth.size(), 2);
  double mean = 0.0;
  for (double y : truth) mean += y;
  mean /= static_cast<double>(truth.size());
  double ss_res = 0.0, ss_tot = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    ss_res += (truth[i] - pred[i]) * (truth[i] - pred[i]);
    ss_tot += (truth[i] - mean) * (truth[i] - mean);
  }
  if (ss_tot == 0.0) throw MetricError("R^2 is undefined: truth has zero variance");
  return 1.0 - ss_res / ss_tot;
}

PerTarget rmse(std::span<const TargetPair> pred, std::span<const TargetPair> truth) {
  check_lengths(pred.size(), truth.size(), 1);
  return {rmse(component(pred, 0), component(truth, 0)), rmse(component(pred, 1), component(truth, 1))};
}

PerTarget r_squared(std::span<const TargetPair> pred, std::span<const TargetPair> truth) {
  check_lengths(pred.size(), truth.size(), 2);
  PerTarget out{};
  for (int k = 0; k < 2; ++k) {
    try {
      out[static_cast<std::size_t>(k)] = r_squared(component(pred, k), component(truth, k));
    } catch (const MetricError&) {
      throw MetricError(fmt::format("R^2 of {} is undefined: truth has zero variance", kTargetNames[k]));
    }
  }
  return out;
}

MetricsReport evaluate(std::span<const TargetPair> pred, std::span<const TargetPair> truth) {
  MetricsReport r;
  r.rmse = rmse(pred, truth);
  r.samples = truth.size();
  for (int k = 0; k < 2; ++k) {
    try {
      if (truth.size() >= 2) r.r2[static_cast<std::size_t>(k)] = r_squared(component(pred, k), component(truth, k));
    } catch (const MetricError&) {
    }
  }
  return r;
}

// ---------------------------------------------------------------------------
// Folds

std::vector<SequenceKey> keys_of(std::span<const AlignedSequence> seqs) {
  std::vector<SequenceKey> out;
  for (const auto& s : seqs) out.push_back({s.id, s.modality});
  return out;
}

std::vector<SequenceKey> keys_of(std::span<const RawSequence> seqs) {
  std::vector<SequenceKey> out;
  for (const auto& s : seqs) out.push_back({s.id, s.modality});
  return out;
}

namespace {

std::array<std::vector<std::string>, 3> by_modality(std::span<const SequenceKey> seqs) {
  std::array<std::vector<std::string>, 3> groups;
  for (const auto& k : seqs) groups[static_cast<std::size_t>(k.modality)].push_back(k.id);
  for (std::size_t m = 0; m < 3; ++m) {
    if (groups[m].size() != static_cast<std::size_t>(kFolds)) {
      throw ValidationError(fmt::format("fold plan needs 3 sequences per modality, got {} {}",
                                        groups[m].size(), to_string(kAllModalities[m])));
    }
  }
  return groups;
}

}  // namespace

FoldPlan make_fold_plan(std::span<const SequenceKey> seqs, std::uint64_t seed) {
  auto groups = by_modality(seqs);
  for (std::size_t m = 0; m < 3; ++m) {
    std::sort(groups[m].begin(), groups[m].end());
    Rng rng(derive_seed(seed, {0x666f6c64ULL, m}));
    rng.shuffle(groups[m]);
  }
  FoldPlan plan;
  for (int f = 0; f < kFolds; ++f) {
    Fold fold;
    for (std::size_t m = 0; m < 3; ++m) {
      for (int k = 0; k < kFolds; ++k) {
        auto& dst = (k == f) ? fold.validation : fold.train;
        dst.push_back(groups[m][static_cast<std::size_t>(k)]);
      }
    }
    plan.folds.push_back(std::move(fold));
  }
  return plan;
}

void FoldPlan::validate(std::span<const SequenceKey> seqs) const {
  const auto groups = by_modality(seqs);
  std::unordered_map<std::string, Modality> modality;
  for (const auto& k : seqs) modality[k.id] = k.modality;
  if (folds.size() != static_cast<std::size_t>(kFolds)) {
    throw ValidationError(fmt::format("fold plan has {} folds, expected {}", folds.size(), kFolds));
  }
  std::map<std::string, int> validated;
  for (std::size_t f = 0; f < folds.size(); ++f) {
    const Fold& fold = folds[f];
    std::array<int, 3> val_count{}, train_count{};
    for (const auto& id : fold.validation) {
      auto it = modality.find(id);
      if (it == modality.end()) throw ValidationError(fmt::format("fold {} validates unknown id '{}'", f, id));
      ++val_count[static_cast<std::size_t>(it->second)];
      ++validated[id];
    }
    for (const auto& id : fold.train) {
      auto it = modality.find(id);
      if (it == modality.end()) throw ValidationError(fmt::format("fold {} trains on unknown id '{}'", f, id));
      if (std::find(fold.validation.begin(), fold.validation.end(), id) != fold.validation.end()) {
        throw ValidationError(fmt::format("fold {} trains on its validation sequence '{}'", f, id));
      }
      ++train_count[static_cast<std::size_t>(it->second)];
    }
    for (std::size_t m = 0; m < 3; ++m) {
      if (val_count[m] != 1 || train_count[m] != 2) {
        throw ValidationError(fmt::format("fold {} is unbalanced for {}: {} validation, {} train", f,
                                          to_string(kAllModalities[m]), val_count[m], train_count[m]));
      }
    }
  }
  for (const auto& k : seqs) {
    if (validated[k.id] != 1) {
      throw ValidationError(fmt::format("sequence '{}' is validated {} times", k.id, validated[k.id]));
    }
  }
}

// ---------------------------------------------------------------------------
// Protocols

namespace {

// Runs fn(0..n-1) on up to `threads` workers; rethrows the first failure.
template <typename Fn>
void parallel_for(std::size_t n, int threads, Fn fn) {
  std::size_t workers = threads > 0 ? static_cast<std::size_t>(threads)
                                    : std::max(1u, std::thread::hardware_concurrency());
  workers = std::min(workers, n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex mu;
  auto work = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      {
        std::lock_guard lock(mu);
        if (failure) return;
      }
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(mu);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

std::vector<std::string> sorted_users(std::span<const AlignedSequence> data) {
  std::vector<std::string> users;
  for (const auto& s : data) users.push_back(s.user);
  std::sort(users.begin(), users.end());
  users.erase(std::unique(users.begin(), users.end()), users.end());
  return users;
}

std::vector<AlignedSequence> select(std::span<const AlignedSequence> data, std::span<const std::string> ids) {
  std::vector<AlignedSequence> out;
  for (const auto& id : ids) {
    auto it = std::find_if(data.begin(), data.end(), [&](const AlignedSequence& s) { return s.id == id; });
    if (it == data.end()) throw ValidationError(fmt::format("unknown sequence id '{}'", id));
    out.push_back(*it);
  }
  return out;
}

std::vector<AlignedSequence> of_user(std::span<const AlignedSequence> data, std::string_view user) {
  std::vector<AlignedSequence> out;
  for (const auto& s : data) {
    if (s.user == user) out.push_back(s);
  }
  return out;
}

// Wraps a failure with its protocol position, keeping the error category.
[[noreturn]] void rethrow_annotated(const std::string& where) {
  try {
    throw;
  } catch (const TrainingError& e) {
    throw TrainingError(fmt::format("{}: {}", where, e.what()));
  } catch (const GapError&) {
    throw;
  } catch (const ValidationError& e) {
    throw ValidationError(fmt::format("{}: {}", where, e.what()));
  } catch (...) {
    throw;
  }
}

TrainedModel train_on(std::span<const AlignedSequence> train, Architecture arch, FeatureSubset subset,
                      TrainConfig cfg, std::uint64_t seed) {
  cfg.seed = seed;
  TrainedModel m;
  m.model = train_model(arch, train, subset, cfg);
  for (const auto& s : train) m.train_ids.push_back(s.id);
  return m;
}

void fill_group(MetricsReport& r, std::string user, Architecture arch, FeatureSubset subset) {
  r.user = std::move(user);
  r.architecture = std::string(to_string(arch));
  r.subset = std::string(to_string(subset));
}

}  // namespace

std::vector<AlignedSequence> align_dataset(const Dataset& d, const AlignmentConfig& cfg) {
  std::vector<AlignedSequence> out;
  out.reserve(d.sequences.size());
  for (const auto& s : d.sequences) out.push_back(align_sequence(s, cfg));
  return out;
}

std::vector<UserCvResult> run_per_user_cv(std::span<const AlignedSequence> data, Architecture arch,
                                          FeatureSubset subset, const EvalConfig& cfg) {
  const auto users = sorted_users(data);
  if (users.empty()) throw ValidationError("cross-validation needs at least one user");
  struct Cell {
    std::vector<AlignedSequence> seqs;
    FoldPlan plan;
  };
  std::vector<Cell> cells;
  for (const auto& u : users) {
    Cell c;
    c.seqs = of_user(data, u);
    const auto keys = keys_of(std::span<const AlignedSequence>(c.seqs));
    try {
      c.plan = make_fold_plan(keys, derive_seed(cfg.fold_seed, {hash_string(u)}));
    } catch (const ValidationError& e) {
      throw ValidationError(fmt::format("user {}: {}", u, e.what()));
    }
    cells.push_back(std::move(c));
  }

  std::vector<TrainedModel> models(users.size() * kFolds);
  parallel_for(models.size(), cfg.threads, [&](std::size_t job) {
    const std::size_t u = job / kFolds;
    const std::size_t f = job % kFolds;
    try {
      const auto train = select(cells[u].seqs, cells[u].plan.folds[f].train);
      models[job] = train_on(train, arch, subset, cfg.train,
                             derive_seed(cfg.train.seed, {hash_string(users[u]), f}));
    } catch (...) {
      rethrow_annotated(fmt::format("user {}, fold {}", users[u], f));
    }
  });

  std::vector<UserCvResult> out;
  for (std::size_t u = 0; u < users.size(); ++u) {
    UserCvResult r;
    r.plan = cells[u].plan;
    std::vector<TargetPair> pred, truth;
    for (std::size_t f = 0; f < static_cast<std::size_t>(kFolds); ++f) {
      const TrainedModel& m = models[u * kFolds + f];
      for (const auto& v : select(cells[u].seqs, r.plan.folds[f].validation)) {
        const auto p = predict(m.model, v.features());
        const auto t = v.targets();
        pred.insert(pred.end(), p.begin(), p.end());
        truth.insert(truth.end(), t.begin(), t.end());
        r.predicted_ids.push_back(v.id);
      }
      r.models.push_back(m);
    }
    r.report = evaluate(pred, truth);
    fill_group(r.report, users[u], arch, subset);
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<UserCvResult> run_per_user_cv(const Dataset& d, Architecture arch, FeatureSubset subset,
                                          const EvalConfig& cfg) {
  const auto data = align_dataset(d, cfg.align);
  return run_per_user_cv(data, arch, subset, cfg);
}

std::vector<ResultRow> rows_of(const MetricsReport& r) {
  std::vector<ResultRow> rows;
  for (std::size_t k = 0; k < 2; ++k) {
    if (r.r2[k]) rows.push_back({r.user, r.architecture, r.subset, std::string(kTargetNames[k]), "r2", *r.r2[k]});
    rows.push_back({r.user, r.architecture, r.subset, std::string(kTargetNames[k]), "rmse", r.rmse[k]});
  }
  return rows;
}

double t_critical(std::size_t n, double level) {
  if (n < 2) throw ValidationError("a t interval needs at least two values");
  boost::math::students_t dist(static_cast<double>(n - 1));
  return boost::math::quantile(dist, 0.5 + level / 2.0);
}

std::vector<AggregateCell> aggregate(std::span<const ResultRow> rows) {
  std::vector<AggregateCell> cells;
  std::vector<std::vector<double>> values;
  for (const auto& r : rows) {
    auto it = std::find_if(cells.begin(), cells.end(), [&](const AggregateCell& c) {
      return c.architecture == r.architecture && c.subset == r.subset && c.target == r.target &&
             c.metric == r.metric;
    });
    std::size_t idx;
    if (it == cells.end()) {
      cells.push_back({r.architecture, r.subset, r.target, r.metric, 0.0, 0, std::nullopt});
      values.emplace_back();
      idx = cells.size() - 1;
    } else {
      idx = static_cast<std::size_t>(it - cells.begin());
    }
    values[idx].push_back(r.value);
  }
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const auto& v = values[i];
    const double n = static_cast<double>(v.size());
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= n;
    cells[i].mean = mean;
    cells[i].n = v.size();
    if (v.size() >= 2) {
      double ss = 0.0;
      for (double x : v) ss += (x - mean) * (x - mean);
      const double sd = std::sqrt(ss / (n - 1.0));
      cells[i].ci_half_width = t_critical(v.size()) * sd / std::sqrt(n);
    }
  }
  return cells;
}

AblationResult run_ablation(std::span<const AlignedSequence> data, std::span<const Architecture> archs,
                            std::span<const FeatureSubset> subsets, const EvalConfig& cfg) {
  AblationResult out;
  for (Architecture a : archs) {
    for (FeatureSubset s : subsets) {
      auto runs = run_per_user_cv(data, a, s, cfg);
      for (auto& r : runs) {
        const auto rows = rows_of(r.report);
        out.rows.insert(out.rows.end(), rows.begin(), rows.end());
        out.runs.push_back(std::move(r));
      }
    }
  }
  out.cells = aggregate(out.rows);
  return out;
}

AblationResult run_ablation(const Dataset& d, std::span<const Architecture> archs, const EvalConfig& cfg) {
  const auto data = align_dataset(d, cfg.align);
  return run_ablation(data, archs, kAllSubsets, cfg);
}

std::vector<TargetPair> ensemble_predict(std::span<const ModelState> models, std::span<const FeatureRow> rows) {
  if (models.empty()) throw ValidationError("ensemble needs at least one model");
  // Running mean: exact when the members agree.
  std::vector<TargetPair> out = predict(models.front(), rows);
  for (std::size_t k = 1; k < models.size(); ++k) {
    const auto p = predict(models[k], rows);
    const double w = 1.0 / static_cast<double>(k + 1);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      out[i].opening += (p[i].opening - out[i].opening) * w;
      out[i].compliance += (p[i].compliance - out[i].compliance) * w;
    }
  }
  for (auto& o : out) o = TargetPair::clamped(o.opening, o.compliance);
  return out;
}

CrossSessionResult score_cross_session(std::vector<TrainedModel> models, std::span<const AlignedSequence> test) {
  if (models.empty()) throw ValidationError("cross-session scoring needs trained models");
  CrossSessionResult out;
  std::vector<ModelState> states;
  for (const auto& m : models) states.push_back(m.model);
  std::vector<TargetPair> pred, truth;
  for (const auto& s : test) {
    auto p = ensemble_predict(states, s.features());
    const auto t = s.targets();
    pred.insert(pred.end(), p.begin(), p.end());
    truth.insert(truth.end(), t.begin(), t.end());
    out.predictions.push_back(std::move(p));
  }
  out.report = evaluate(pred, truth);
  const ModelSpec& spec = states.front().spec;
  fill_group(out.report, test.empty() ? std::string() : test.front().user, spec.kind, spec.subset);
  out.models = std::move(models);
  return out;
}

CrossSessionResult run_cross_session(std::span<const AlignedSequence> train, std::span<const AlignedSequence> test,
                                     Architecture arch, FeatureSubset subset, const EvalConfig& cfg) {
  const auto train_users = sorted_users(train);
  const auto test_users = sorted_users(test);
  if (train_users.size() != 1 || test_users != train_users) {
    throw ValidationError("cross-session testing needs one and the same user in both sets");
  }
  for (const auto& a : train) {
    for (const auto& b : test) {
      if (a.session == b.session) {
        throw ValidationError(fmt::format("session '{}' appears in both training and test data", a.session));
      }
    }
  }
  auto cv = run_per_user_cv(train, arch, subset, cfg);
  return score_cross_session(std::move(cv.front().models), test);
}

CrossSessionResult run_cross_session(const Dataset& train, const Dataset& test, Architecture arch,
                                     FeatureSubset subset, const EvalConfig& cfg) {
  const auto a = align_dataset(train, cfg.align);
  const auto b = align_dataset(test, cfg.align);
  return run_cross_session(a, b, arch, subset, cfg);
}

std::vector<LouoResult> run_leave_one_user_out(std::span<const AlignedSequence> data, Architecture arch,
                                               FeatureSubset subset, const EvalConfig& cfg) {
  const auto users = sorted_users(data);
  if (users.size() < 2) throw ValidationError("leave-one-user-out needs at least two users");
  std::vector<LouoResult> out(users.size());
  parallel_for(users.size(), cfg.threads, [&](std::size_t u) {
    std::vector<AlignedSequence> train, test;
    for (const auto& s : data) (s.user == users[u] ? test : train).push_back(s);
    try {
      out[u].model = train_on(train, arch, subset, cfg.train,
                              derive_seed(cfg.train.seed, {0x6c6f756fULL, hash_string(users[u])}));
    } catch (...) {
      rethrow_annotated(fmt::format("held-out user {}", users[u]));
    }
    std::vector<TargetPair> pred, truth;
    for (const auto& s : test) {
      const auto p = predict(out[u].model.model, s.features());
      const auto t = s.targets();
      pred.insert(pred.end(), p.begin(), p.end());
      truth.insert(truth.end(), t.begin(), t.end());
    }
    out[u].report = evaluate(pred, truth);
    fill_group(out[u].report, users[u], arch, subset);
  });
  return out;
}

std::vector<LouoResult> run_leave_one_user_out(const Dataset& d, Architecture arch, FeatureSubset subset,
                                               const EvalConfig& cfg) {
  const auto data = align_dataset(d, cfg.align);
  return run_leave_one_user_out(data, arch, subset, cfg);
}

bool normalization_matches(const TrainedModel& m, std::span<const AlignedSequence> data) {
  const auto train = select(data, m.train_ids);
  const bool all_rows = m.model.spec.kind == Architecture::Lstm;
  std::vector<FeatureRow> rows;
  for (const auto& s : train) {
    if (all_rows && !s.labelled()) continue;
    for (const auto& a : s.samples) {
      if (all_rows || a.y) rows.push_back(a.f);
    }
  }
  if (rows.empty()) return false;
  const Normalization expect = Normalization::fit(rows);
  for (std::size_t j = 0; j < kFeatureCount; ++j) {
    const double tol_m = 1e-9 * std::max(1.0, std::abs(expect.mean[j]));
    const double tol_s = 1e-9 * std::max(1.0, std::abs(expect.std[j]));
    if (std::abs(expect.mean[j] - m.model.norm.mean[j]) > tol_m) return false;
    if (std::abs(expect.std[j] - m.model.norm.std[j]) > tol_s) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Results table

void write_results_csv(std::ostream& out, std::span<const ResultRow> rows) {
  out << kCsvHeader << '\n';
  for (const auto& r : rows) {
    out << fmt::format("{},{},{},{},{},{:.17g}\n", r.user, r.architecture, r.subset, r.target, r.metric, r.value);
  }
}

std::vector<ResultRow> read_results_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kCsvHeader) {
    throw FormatError(fmt::format("results table must start with '{}'", kCsvHeader));
  }
  std::vector<ResultRow> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(f);
    if (fields.size() != 6) {
      throw FormatError(fmt::format("results line {}: expected 6 fields, got {}", line_no, fields.size()));
    }
    ResultRow r{fields[0], fields[1], fields[2], fields[3], fields[4], 0.0};
    try {
      std::size_t used = 0;
      r.value = std::stod(fields[5], &used);
      if (used != fields[5].size()) throw std::invalid_argument("trailing characters");
    } catch (const std::exception&) {
      throw FormatError(fmt::format("results line {}: bad value '{}'", line_no, fields[5]));
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

void save_results_csv(std::span<const ResultRow> rows, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(fmt::format("cannot write results table '{}'", path));
  write_results_csv(out, rows);
  if (!out) throw Error(fmt::format("failed writing results table '{}'", path));
}

std::vector<ResultRow> load_results_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(fmt::format("cannot open results table '{}'", path));
  return read_results_csv(in);
}

}  // namespace handstate
