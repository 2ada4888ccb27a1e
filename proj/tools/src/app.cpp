#include "handstate/cli/app.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>

#include <fmt/format.h>
#include <fmt/ostream.h>

#include "CLI11.hpp"
#include "handstate/cli/plots.hpp"
#include "handstate/dataset_io.hpp"
#include "handstate/eval.hpp"
#include "handstate/models.hpp"
#include "handstate/rng.hpp"
#include "handstate/stream.hpp"
#include "handstate/sync.hpp"
#include "handstate/synthgen.hpp"

#ifndef HANDSTATE_VERSION
#define HANDSTATE_VERSION "0.0.0"
#endif

namespace handstate::cli {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

std::string toolkit_version() { return HANDSTATE_VERSION; }

Json RunManifest::to_json() const {
  Json j;
  j["toolkit"] = "handstate";
  j["version"] = version;
  j["command"] = command;
  j["command_line"] = command_line;
  j["config"] = config;
  Json s = Json::object();
  for (const auto& [k, v] : seeds) s[k] = v;
  j["seeds"] = s;
  j["artifacts"] = artifacts;
  if (metrics) j["metrics"] = *metrics;
  return j;
}

RunManifest RunManifest::from_json(const Json& j) {
  try {
    RunManifest m;
    m.version = j.at("version").get<std::string>();
    m.command = j.at("command").get<std::string>();
    m.command_line = j.at("command_line").get<std::vector<std::string>>();
    m.config = j.at("config");
    for (const auto& [k, v] : j.at("seeds").items()) m.seeds[k] = v.get<std::uint64_t>();
    m.artifacts = j.at("artifacts").get<std::vector<std::string>>();
    if (j.contains("metrics")) m.metrics = j["metrics"];
    return m;
  } catch (const Json::exception& e) {
    throw FormatError(fmt::format("malformed run manifest: {}", e.what()));
  }
}

void write_run_manifest(const RunManifest& m, const fs::path& dir) {
  const fs::path path = dir / kRunManifestName;
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error(fmt::format("cannot open '{}' for writing", path.string()));
  f << m.to_json().dump(2) << '\n';
}

RunManifest read_run_manifest(const fs::path& dir) {
  const fs::path path = fs::is_directory(dir) ? dir / kRunManifestName : dir;
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError(fmt::format("cannot read '{}'", path.string()));
  Json j;
  try {
    f >> j;
  } catch (const Json::exception& e) {
    throw FormatError(fmt::format("malformed run manifest '{}': {}", path.string(), e.what()));
  }
  return RunManifest::from_json(j);
}

namespace {

// --config reader. Nested objects become subcommand sections; a run
// manifest contributes its "config" member.
class JsonConfig : public CLI::Config {
 public:
  std::string to_config(const CLI::App*, bool, bool, std::string) const override { return "{}"; }

  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    Json j;
    try {
      input >> j;
    } catch (const Json::exception& e) {
      throw CLI::ConversionError(fmt::format("config file is not valid JSON: {}", e.what()));
    }
    if (j.is_object() && j.contains("config") && j["config"].is_object()) j = j["config"];
    if (!j.is_object()) throw CLI::ConversionError("config file must hold a JSON object");
    std::vector<CLI::ConfigItem> out;
    collect(j, {}, out);
    return out;
  }

 private:
  static std::string scalar(const Json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
    if (v.is_number()) return v.dump();
    throw CLI::ConversionError(fmt::format("unsupported config value {}", v.dump()));
  }

  static void collect(const Json& obj, const std::vector<std::string>& parents, std::vector<CLI::ConfigItem>& out) {
    for (const auto& [key, value] : obj.items()) {
      if (value.is_object()) {
        auto p = parents;
        p.push_back(key);
        collect(value, p, out);
        continue;
      }
      CLI::ConfigItem item;
      item.parents = parents;
      item.name = key;
      if (value.is_array()) {
        for (const auto& v : value) item.inputs.push_back(scalar(v));
      } else {
        item.inputs.push_back(scalar(value));
      }
      out.push_back(std::move(item));
    }
  }
};

struct GenerateOpts {
  int users = 5;
  std::uint64_t seed = 42;
  std::string out;
  bool online = false;
  std::string session = "s1";
  double noise_scale = 1.0;
};

struct TrainOpts {
  std::string data;
  std::string user;
  std::string arch = "lstm";
  std::string features = "full";
  std::optional<std::uint64_t> seed;
  std::string out;
  int epochs = TrainConfig{}.epochs;
  double lr = TrainConfig{}.lr;
  int batch = 0;
};

struct CrossvalOpts {
  std::string protocol = "per-user";
  std::string data;
  std::string test_data;
  std::vector<std::string> archs = {"dummy", "linear", "mlp", "svr", "lstm"};
  std::vector<std::string> features = {"full", "exo", "emg"};
  std::uint64_t seed = 42;
  int epochs = TrainConfig{}.epochs;
  int threads = 1;
  std::string out;
};

struct ReplayOpts {
  std::string model;
  std::string data;
  std::string sequence;
  double pace = 0.0;
  bool plot = false;
  std::string out;
};

struct PlotOpts {
  std::string results;
  std::string out;
  std::string title;
};

struct Context {
  std::vector<std::string> args;
  std::istream& in;
  std::ostream& out;
  std::ostream& err;
};

RunManifest manifest_for(const Context& ctx, const std::string& command, Json flags) {
  RunManifest m;
  m.command = command;
  m.command_line = ctx.args;
  m.config[command] = std::move(flags);
  return m;
}

void require_data(const std::string& data, const char* flag) {
  if (data.empty()) {
    throw CLI::RequiredError(fmt::format("{} (or the {} environment variable)", flag, kDataEnv));
  }
}

// Checked after parsing rather than by CLI11, whose own check runs before
// values from --config are applied.
void require(const std::string& value, const char* flag) {
  if (value.empty()) throw CLI::RequiredError(flag);
}

std::string join(const std::vector<std::string>& v) {
  std::string s;
  for (const auto& x : v) s += (s.empty() ? "" : ", ") + x;
  return s;
}

// ---------------------------------------------------------------------------

int cmd_generate(const Context& ctx, const GenerateOpts& o) {
  ProtocolConfig pc;
  pc.users = o.users;
  pc.seed = o.seed;
  pc.session = o.session;
  pc.noise_scale = o.noise_scale;
  pc.validate();

  Dataset d;
  if (o.online) {
    d.generator_seed = o.seed;
    const auto profiles = draw_profiles(pc);
    for (std::size_t u = 0; u < profiles.size(); ++u) {
      const std::uint64_t seed = derive_seed(o.seed, {hash_string("online"), hash_string(o.session), u});
      d.sequences.push_back(generate_online_session(profiles[u].for_session(o.session), pc, seed));
    }
  } else {
    d = generate_dataset(pc);
  }
  save_dataset(d, o.out);

  RunManifest m = manifest_for(ctx, "generate",
                               {{"users", o.users}, {"seed", o.seed}, {"out", o.out}, {"online-session", o.online},
                                {"session", o.session}, {"noise-scale", o.noise_scale}});
  m.seeds["generator"] = o.seed;
  m.artifacts.push_back("manifest.json");
  for (const auto& s : d.sequences) m.artifacts.push_back(stream_file_name(s.id));
  write_run_manifest(m, o.out);
  fmt::print(ctx.out, "wrote {} sequences for {} users to {}\n", d.sequences.size(), d.users().size(), o.out);
  return kExitOk;
}

int cmd_train(const Context& ctx, TrainOpts o) {
  require_data(o.data, "--data");
  const Architecture arch = parse_architecture(o.arch);
  const FeatureSubset subset = parse_subset(o.features);
  if (!o.seed) {
    std::random_device rd;
    o.seed = (static_cast<std::uint64_t>(rd()) << 32) | rd();
  }
  const Dataset d = load_dataset(o.data);
  const auto users = d.users();
  if (std::find(users.begin(), users.end(), o.user) == users.end()) {
    throw ValidationError(fmt::format("unknown user '{}'; available users: {}", o.user, join(users)));
  }
  std::vector<AlignedSequence> train;
  for (const RawSequence* s : d.of_user(o.user)) train.push_back(align_sequence(*s));

  TrainConfig cfg;
  cfg.epochs = o.epochs;
  cfg.lr = o.lr;
  cfg.batch = o.batch;
  cfg.seed = *o.seed;
  TrainingLog log;
  const ModelState model = train_model(arch, train, subset, cfg, &log);
  for (const auto& w : log.warnings) fmt::print(ctx.err, "warning: {}\n", w);

  const fs::path out(o.out);
  const fs::path dir = out.has_parent_path() ? out.parent_path() : fs::path(".");
  fs::create_directories(dir);
  save_model(model, out);

  RunManifest m = manifest_for(ctx, "train",
                               {{"data", o.data}, {"user", o.user}, {"arch", o.arch}, {"features", o.features},
                                {"seed", *o.seed}, {"out", o.out}, {"epochs", o.epochs}, {"lr", o.lr},
                                {"batch", o.batch}});
  m.seeds["train"] = *o.seed;
  m.artifacts.push_back(out.filename().string());
  write_run_manifest(m, dir);
  fmt::print(ctx.out, "trained {} ({}) on {} sequences of {}: {} parameters, seed {}\n", o.arch,
             to_string(subset), train.size(), o.user, model.params.size(), *o.seed);
  return kExitOk;
}

std::vector<ResultRow> crossval_rows(const Context& ctx, const CrossvalOpts& o, const std::vector<Architecture>& archs,
                                     const std::vector<FeatureSubset>& subsets, const EvalConfig& cfg) {
  const Dataset d = load_dataset(o.data);
  std::vector<ResultRow> rows;
  auto add = [&](const MetricsReport& r) {
    const auto rr = rows_of(r);
    rows.insert(rows.end(), rr.begin(), rr.end());
  };

  if (o.protocol == "per-user") {
    if (!o.test_data.empty()) throw ValidationError("--test-data only applies to the cross-session protocol");
    const auto aligned = align_dataset(d, cfg.align);
    const AblationResult res = run_ablation(aligned, archs, subsets, cfg);
    return res.rows;
  }
  if (o.protocol == "louo") {
    if (!o.test_data.empty()) throw ValidationError("--test-data only applies to the cross-session protocol");
    const auto aligned = align_dataset(d, cfg.align);
    for (Architecture a : archs) {
      for (FeatureSubset s : subsets) {
        for (const auto& r : run_leave_one_user_out(aligned, a, s, cfg)) add(r.report);
        fmt::print(ctx.err, "louo {} {} done\n", to_string(a), to_string(s));
      }
    }
    return rows;
  }
  if (o.protocol == "cross-session") {
    if (o.test_data.empty()) throw ValidationError("the cross-session protocol needs --test-data");
    const Dataset test = load_dataset(o.test_data);
    const auto train_users = d.users();
    const auto test_users = test.users();
    std::vector<std::string> users;
    std::set_intersection(train_users.begin(), train_users.end(), test_users.begin(), test_users.end(),
                          std::back_inserter(users));
    if (users.empty()) throw ValidationError("training and test data share no user");
    const auto train_aligned = align_dataset(d, cfg.align);
    const auto test_aligned = align_dataset(test, cfg.align);
    auto of = [](const std::vector<AlignedSequence>& v, const std::string& u) {
      std::vector<AlignedSequence> out;
      std::copy_if(v.begin(), v.end(), std::back_inserter(out), [&](const auto& s) { return s.user == u; });
      return out;
    };
    for (Architecture a : archs) {
      for (FeatureSubset s : subsets) {
        for (const auto& u : users) {
          const auto r = run_cross_session(of(train_aligned, u), of(test_aligned, u), a, s, cfg);
          add(r.report);
        }
        fmt::print(ctx.err, "cross-session {} {} done\n", to_string(a), to_string(s));
      }
    }
    return rows;
  }
  throw CLI::ValidationError("--protocol", fmt::format("unknown protocol '{}'", o.protocol));
}

void print_cells(std::ostream& out, const std::vector<AggregateCell>& cells) {
  fmt::print(out, "{:<8} {:<9} {:<4} {:<5} {:>8} {:>8} {:>3}\n", "arch", "subset", "tgt", "metric", "mean", "ci80", "n");
  for (const auto& c : cells) {
    fmt::print(out, "{:<8} {:<9} {:<4} {:<5} {:>8.3f} {:>8} {:>3}\n", c.architecture, c.subset, c.target, c.metric,
               c.mean, c.ci_half_width ? fmt::format("{:.3f}", *c.ci_half_width) : std::string("-"), c.n);
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error(fmt::format("cannot open '{}' for writing", path.string()));
  f << text;
}

int cmd_crossval(const Context& ctx, const CrossvalOpts& o) {
  require_data(o.data, "--data");
  std::vector<Architecture> archs;
  for (const auto& a : o.archs) archs.push_back(parse_architecture(a));
  std::vector<FeatureSubset> subsets;
  for (const auto& s : o.features) subsets.push_back(parse_subset(s));

  EvalConfig cfg;
  cfg.train.epochs = o.epochs;
  cfg.train.seed = o.seed;
  cfg.fold_seed = o.seed;
  cfg.threads = o.threads;

  const auto rows = crossval_rows(ctx, o, archs, subsets, cfg);
  const auto cells = aggregate(rows);

  fs::create_directories(o.out);
  const fs::path dir(o.out);
  save_results_csv(rows, (dir / "results.csv").string());
  write_text(dir / "ablation.svg", render_ablation_svg(cells, fmt::format("{} protocol", o.protocol)));

  Json flags = {{"protocol", o.protocol}, {"data", o.data}};
  if (!o.test_data.empty()) flags["test-data"] = o.test_data;
  flags["archs"] = o.archs;
  flags["features"] = o.features;
  flags["seed"] = o.seed;
  flags["epochs"] = o.epochs;
  flags["threads"] = o.threads;
  flags["out"] = o.out;
  RunManifest m = manifest_for(ctx, "crossval", std::move(flags));
  m.seeds["train"] = o.seed;
  m.seeds["folds"] = o.seed;
  m.artifacts = {"results.csv", "ablation.svg"};
  write_run_manifest(m, dir);
  print_cells(ctx.out, cells);
  return kExitOk;
}

Json metrics_json(const MetricsReport& r) {
  Json j;
  Json r2 = Json::object(), rmse = Json::object();
  for (std::size_t k = 0; k < 2; ++k) {
    const std::string name(kTargetNames[k]);
    r2[name] = r.r2[k] ? Json(*r.r2[k]) : Json(nullptr);
    rmse[name] = r.rmse[k];
  }
  j["r2"] = r2;
  j["rmse"] = rmse;
  j["samples"] = r.samples;
  return j;
}

int cmd_replay(const Context& ctx, const ReplayOpts& o) {
  require_data(o.data, "--data");
  const ModelState model = load_model(o.model);
  const AlignmentConfig align_cfg;

  if (o.data == "-") {
    if (o.plot) throw ValidationError("--plot needs a recorded dataset, not stdin");
    std::ofstream file;
    std::ostream* sink = &ctx.out;
    if (!o.out.empty()) {
      fs::create_directories(o.out);
      file.open(fs::path(o.out) / "predictions.jsonl", std::ios::binary | std::ios::trunc);
      if (!file) throw Error("cannot open predictions.jsonl for writing");
      sink = &file;
    }
    const LiveStats stats = run_live(ctx.in, *sink, ctx.err, model, align_cfg);
    fmt::print(ctx.err, "{} events, {} predictions, {} rejected\n", stats.events, stats.predictions, stats.rejected);
    if (!o.out.empty()) {
      RunManifest m = manifest_for(ctx, "replay",
                                   {{"model", o.model}, {"data", o.data}, {"pace", o.pace}, {"out", o.out}});
      m.artifacts = {"predictions.jsonl"};
      write_run_manifest(m, o.out);
    }
    return kExitOk;
  }

  const Dataset d = load_dataset(o.data);
  const RawSequence* seq = nullptr;
  if (!o.sequence.empty()) {
    seq = &d.find(o.sequence);
  } else if (d.sequences.size() == 1) {
    seq = &d.sequences.front();
  } else {
    std::vector<std::string> ids;
    for (const auto& s : d.sequences) ids.push_back(s.id);
    throw ValidationError(fmt::format("the dataset holds several sequences; pick one with --sequence: {}", join(ids)));
  }

  const double speed = o.pace > 0.0 ? o.pace : kNoPacing;
  const ReplayResult res = replay(*seq, model, align_cfg, speed);

  std::string jsonl;
  for (const auto& p : res.predictions) jsonl += encode_prediction(p) + '\n';

  if (res.metrics) {
    const auto& r = *res.metrics;
    auto r2 = [&](std::size_t k) { return r.r2[k] ? fmt::format("{:.3f}", *r.r2[k]) : std::string("n/a"); };
    fmt::print(ctx.out, "metrics: R2 y_o={} y_c={}  RMSE y_o={:.3f} y_c={:.3f}  ({} ticks)\n", r2(0), r2(1),
               r.rmse[0], r.rmse[1], r.samples);
  }
  if (o.out.empty()) {
    ctx.out << jsonl;
    return kExitOk;
  }

  const fs::path dir(o.out);
  fs::create_directories(dir);
  write_text(dir / "predictions.jsonl", jsonl);
  RunManifest m = manifest_for(ctx, "replay",
                               {{"model", o.model}, {"data", o.data}, {"sequence", seq->id}, {"pace", o.pace},
                                {"plot", o.plot}, {"out", o.out}});
  m.artifacts.push_back("predictions.jsonl");
  if (o.plot) {
    write_text(dir / "trace.svg", render_trace_svg(make_trace(*seq, res.predictions, align_cfg)));
    m.artifacts.push_back("trace.svg");
  }
  if (res.metrics) m.metrics = metrics_json(*res.metrics);
  write_run_manifest(m, dir);
  fmt::print(ctx.out, "wrote {} predictions to {}\n", res.predictions.size(), o.out);
  return kExitOk;
}

int cmd_plot(const Context& ctx, const PlotOpts& o) {
  const auto rows = load_results_csv(o.results);
  const auto cells = aggregate(rows);
  const fs::path out(o.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  write_text(out, render_ablation_svg(cells, o.title));
  fmt::print(ctx.out, "wrote {} ({} cells)\n", o.out, cells.size());
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::istream& in, std::ostream& out, std::ostream& err) {
  const Context ctx{args, in, out, err};
  CLI::App app{"Hand-state estimation from exoskeleton and EMG signals", "handstate"};
  app.config_formatter(std::make_shared<JsonConfig>());
  app.set_config("--config", "", "JSON file with flag values (or a run manifest)");
  app.set_version_flag("--version", toolkit_version());
  app.require_subcommand(1);
  app.fallthrough();

  GenerateOpts gen;
  auto* g = app.add_subcommand("generate", "Write a synthetic dataset");
  g->add_option("--users", gen.users, "Number of users")->check(CLI::PositiveNumber);
  g->add_option("--seed", gen.seed, "Generator seed");
  g->add_option("--out", gen.out, "Output directory");
  g->add_flag("--online-session", gen.online, "One 180 s mixed-modality recording per user instead of the protocol");
  g->add_option("--session", gen.session, "Session name");
  g->add_option("--noise-scale", gen.noise_scale, "Scale of every stochastic perturbation")
      ->check(CLI::NonNegativeNumber);

  TrainOpts tr;
  auto* t = app.add_subcommand("train", "Train one model on all sequences of a user");
  t->add_option("--data", tr.data, "Dataset directory")->envname(kDataEnv);
  t->add_option("--user", tr.user, "User id");
  t->add_option("--arch", tr.arch, "dummy|linear|mlp|svr|lstm")
      ->check(CLI::IsMember({"dummy", "linear", "mlp", "svr", "lstm"}));
  t->add_option("--features", tr.features, "full|exo|emg")
      ->check(CLI::IsMember({"full", "exo", "emg", "exo_only", "emg_only"}));
  t->add_option("--seed", tr.seed, "Training seed (drawn and recorded when omitted)");
  t->add_option("--out", tr.out, "Model file");
  t->add_option("--epochs", tr.epochs, "Training epochs")->check(CLI::NonNegativeNumber);
  t->add_option("--lr", tr.lr, "Adam step size")->check(CLI::PositiveNumber);
  t->add_option("--batch", tr.batch, "Batch size (0 = architecture default)")->check(CLI::NonNegativeNumber);

  CrossvalOpts cv;
  auto* c = app.add_subcommand("crossval", "Evaluate an architecture x feature-set grid");
  c->add_option("--protocol", cv.protocol, "per-user|louo|cross-session")
      ->check(CLI::IsMember({"per-user", "louo", "cross-session"}));
  c->add_option("--data", cv.data, "Dataset directory (training session for cross-session)")->envname(kDataEnv);
  c->add_option("--test-data", cv.test_data, "Unseen-session dataset for cross-session");
  c->add_option("--archs", cv.archs, "Architectures")->check(CLI::IsMember({"dummy", "linear", "mlp", "svr", "lstm"}));
  c->add_option("--features", cv.features, "Feature sets")
      ->check(CLI::IsMember({"full", "exo", "emg", "exo_only", "emg_only"}));
  c->add_option("--seed", cv.seed, "Training and fold seed");
  c->add_option("--epochs", cv.epochs, "Training epochs")->check(CLI::NonNegativeNumber);
  c->add_option("--threads", cv.threads, "Worker threads (0 = all cores)")->check(CLI::NonNegativeNumber);
  c->add_option("--out", cv.out, "Output directory");

  ReplayOpts rp;
  auto* r = app.add_subcommand("replay", "Stream a recording (or stdin) through a model");
  r->add_option("--model", rp.model, "Model file");
  r->add_option("--data", rp.data, "Dataset directory, or - for JSON lines on stdin")->envname(kDataEnv);
  r->add_option("--sequence", rp.sequence, "Sequence id within the dataset");
  r->add_option("--pace", rp.pace, "Real-time speed factor (0 = as fast as possible)")->check(CLI::NonNegativeNumber);
  r->add_flag("--plot", rp.plot, "Also write trace.svg");
  r->add_option("--out", rp.out, "Output directory (predictions go to stdout when omitted)");

  PlotOpts pl;
  auto* p = app.add_subcommand("plot", "Render the ablation figure from a results CSV");
  p->add_option("--results", pl.results, "results.csv")->check(CLI::ExistingFile);
  p->add_option("--out", pl.out, "SVG file");
  p->add_option("--title", pl.title, "Figure title");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (g->parsed()) {
      require(gen.out, "--out");
      return cmd_generate(ctx, gen);
    }
    if (t->parsed()) {
      require(tr.user, "--user");
      require(tr.out, "--out");
      return cmd_train(ctx, tr);
    }
    if (c->parsed()) {
      require(cv.out, "--out");
      return cmd_crossval(ctx, cv);
    }
    if (r->parsed()) {
      require(rp.model, "--model");
      return cmd_replay(ctx, rp);
    }
    if (p->parsed()) {
      require(pl.results, "--results");
      require(pl.out, "--out");
      return cmd_plot(ctx, pl);
    }
  } catch (const CLI::ParseError& e) {
    fmt::print(err, "error: {}\n", e.what());
    return kExitUsage;
  } catch (const TrainingError& e) {
    fmt::print(err, "training failed: {}\n", e.what());
    return kExitTraining;
  } catch (const MetricError& e) {
    fmt::print(err, "metric undefined: {}\n", e.what());
    return kExitTraining;
  } catch (const Error& e) {
    fmt::print(err, "error: {}\n", e.what());
    return kExitValidation;
  } catch (const fs::filesystem_error& e) {
    fmt::print(err, "error: {}\n", e.what());
    return kExitValidation;
  } catch (const std::exception& e) {
    fmt::print(err, "error: {}\n", e.what());
    return kExitTraining;
  }
  return kExitUsage;
}

}  // namespace handstate::cli
