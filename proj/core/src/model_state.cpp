#include "handstate/model_state.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

namespace handstate {

using Json = nlohmann::ordered_json;

std::string_view to_string(Architecture a) noexcept {
  switch (a) {
    case Architecture::Dummy: return "dummy";
    case Architecture::Linear: return "linear";
    case Architecture::Mlp: return "mlp";
    case Architecture::Svr: return "svr";
    case Architecture::Lstm: return "lstm";
  }
  return "dummy";
}

Architecture parse_architecture(std::string_view s) {
  for (Architecture a : kAllArchitectures) {
    if (to_string(a) == s) return a;
  }
  throw ValidationError(
      fmt::format("unknown architecture '{}' (expected dummy, linear, mlp, svr or lstm)", s));
}

void TrainConfig::validate() const {
  if (epochs < 0) throw ValidationError(fmt::format("epochs must be >= 0, got {}", epochs));
  if (batch < 0) throw ValidationError(fmt::format("batch must be >= 0, got {}", batch));
  if (!(lr > 0.0)) throw ValidationError(fmt::format("learning rate must be positive, got {}", lr));
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ValidationError("Adam betas must lie in [0, 1)");
  }
  if (!(eps > 0.0)) throw ValidationError("Adam epsilon must be positive");
  if (!(clip_norm >= 0.0)) throw ValidationError("clip_norm must be >= 0");
}

std::size_t ModelSpec::param_count() const noexcept {
  const std::size_t d = input_dim();
  switch (kind) {
    case Architecture::Dummy: return 2;
    case Architecture::Linear: return 2 * d + 2;
    case Architecture::Mlp: {
      std::size_t total = 0;
      std::size_t in = d;
      for (std::size_t h : hidden) {
        total += in * h + h;
        in = h;
      }
      return total + in * 2 + 2;
    }
    case Architecture::Svr:
      return 2 + (svr.support[0] + svr.support[1]) * (1 + d);
    case Architecture::Lstm: {
      std::size_t total = 0;
      std::size_t in = d;
      for (std::size_t h : hidden) {
        total += 4 * h * (in + h) + 4 * h;
        in = h;
      }
      return total + in * 2 + 2;
    }
  }
  return 0;
}

Normalization Normalization::fit(std::span<const FeatureRow> rows) {
  Normalization n;
  if (rows.empty()) return identity();
  const double count = static_cast<double>(rows.size());
  for (std::size_t c = 0; c < kFeatureCount; ++c) {
    double sum = 0.0;
    for (const auto& r : rows) sum += r[c];
    const double mean = sum / count;
    double ss = 0.0;
    for (const auto& r : rows) ss += (r[c] - mean) * (r[c] - mean);
    const double sd = std::sqrt(ss / count);
    n.mean[c] = mean;
    n.std[c] = (sd < kStdFloor || !std::isfinite(sd)) ? 1.0 : sd;
  }
  return n;
}

Normalization Normalization::identity() {
  Normalization n;
  n.mean.fill(0.0);
  n.std.fill(1.0);
  return n;
}

void ModelState::validate() const {
  if ((spec.kind == Architecture::Lstm) && spec.hidden.empty()) {
    throw ValidationError("lstm spec needs at least one cell");
  }
  const std::size_t expected = spec.param_count();
  if (params.size() != expected) {
    throw ValidationError(fmt::format("{} model expects {} parameters, found {}",
                                      to_string(spec.kind), expected, params.size()));
  }
  for (std::size_t c = 0; c < kFeatureCount; ++c) {
    if (!(norm.std[c] > 0.0)) {
      throw ValidationError(fmt::format("normalization std of '{}' is not positive", feature_names()[c]));
    }
  }
}

namespace {

Json train_to_json(const TrainConfig& t) {
  return Json{{"epochs", t.epochs},
              {"batch", t.batch},
              {"optimizer", "adam"},
              {"lr", t.lr},
              {"beta1", t.beta1},
              {"beta2", t.beta2},
              {"eps", t.eps},
              {"schedule", t.schedule == LrSchedule::Cosine ? "cosine" : "constant"},
              {"clip_norm", t.clip_norm},
              {"loss", "mean_squared_error"},
              {"seed", t.seed}};
}

TrainConfig train_from_json(const Json& j) {
  TrainConfig t;
  t.epochs = j.at("epochs").get<int>();
  t.batch = j.at("batch").get<int>();
  t.lr = j.at("lr").get<double>();
  t.beta1 = j.at("beta1").get<double>();
  t.beta2 = j.at("beta2").get<double>();
  t.eps = j.at("eps").get<double>();
  const auto schedule = j.at("schedule").get<std::string>();
  if (schedule == "cosine") {
    t.schedule = LrSchedule::Cosine;
  } else if (schedule == "constant") {
    t.schedule = LrSchedule::Constant;
  } else {
    throw FormatError(fmt::format("unknown lr schedule '{}'", schedule));
  }
  t.clip_norm = j.at("clip_norm").get<double>();
  t.seed = j.at("seed").get<std::uint64_t>();
  return t;
}

Json spec_to_json(const ModelSpec& s) {
  Json columns = Json::array();
  for (std::size_t c : subset_columns(s.subset)) columns.push_back(feature_names()[c]);
  Json j{{"kind", to_string(s.kind)},
         {"features", to_string(s.subset)},
         {"columns", columns},
         {"input_dim", s.input_dim()},
         {"hidden", s.hidden},
         {"output_dim", ModelSpec::output_dim()}};
  if (s.kind == Architecture::Mlp) j["activation"] = "tanh";
  if (s.kind == Architecture::Svr) {
    j["svr"] = Json{{"kernel", "rbf"},
                    {"C", s.svr.c},
                    {"epsilon", s.svr.epsilon},
                    {"gamma", s.svr.gamma},
                    {"tolerance", s.svr.tolerance},
                    {"max_iterations", s.svr.max_iterations},
                    {"support", s.svr.support}};
  }
  j["train"] = train_to_json(s.train);
  return j;
}

ModelSpec spec_from_json(const Json& j) {
  ModelSpec s;
  s.kind = parse_architecture(j.at("kind").get<std::string>());
  s.subset = parse_subset(j.at("features").get<std::string>());
  const auto columns = j.at("columns").get<std::vector<std::string>>();
  const auto expected = subset_columns(s.subset);
  bool match = columns.size() == expected.size();
  for (std::size_t i = 0; match && i < columns.size(); ++i) {
    match = columns[i] == feature_names()[expected[i]];
  }
  if (!match) {
    throw ValidationError(fmt::format("model feature columns do not match the canonical order for '{}'",
                                      to_string(s.subset)));
  }
  if (j.at("input_dim").get<std::size_t>() != s.input_dim()) {
    throw ValidationError("model input_dim disagrees with its feature subset");
  }
  if (j.at("output_dim").get<std::size_t>() != ModelSpec::output_dim()) {
    throw ValidationError("model output_dim must be 2");
  }
  s.hidden = j.at("hidden").get<std::vector<std::size_t>>();
  if (s.kind == Architecture::Svr) {
    const Json& v = j.at("svr");
    s.svr.c = v.at("C").get<double>();
    s.svr.epsilon = v.at("epsilon").get<double>();
    s.svr.gamma = v.at("gamma").get<double>();
    s.svr.tolerance = v.at("tolerance").get<double>();
    s.svr.max_iterations = v.at("max_iterations").get<std::int64_t>();
    s.svr.support = v.at("support").get<std::array<std::size_t, 2>>();
  }
  s.train = train_from_json(j.at("train"));
  return s;
}

}  // namespace

std::string serialize_model(const ModelState& m) {
  m.validate();
  Json j{{"spec", spec_to_json(m.spec)},
         {"norm", Json{{"mean", m.norm.mean}, {"std", m.norm.std}}},
         {"params", m.params},
         {"seed", m.seed}};
  return j.dump(1) + "\n";
}

ModelState parse_model(std::string_view json_text) {
  Json j;
  try {
    j = Json::parse(json_text);
  } catch (const Json::parse_error& e) {
    throw FormatError(fmt::format("model file is not valid JSON: {}", e.what()));
  }
  ModelState m;
  try {
    m.spec = spec_from_json(j.at("spec"));
    const auto mean = j.at("norm").at("mean").get<std::vector<double>>();
    const auto sd = j.at("norm").at("std").get<std::vector<double>>();
    if (mean.size() != kFeatureCount || sd.size() != kFeatureCount) {
      throw ValidationError("normalization must hold 10 means and 10 standard deviations");
    }
    std::copy(mean.begin(), mean.end(), m.norm.mean.begin());
    std::copy(sd.begin(), sd.end(), m.norm.std.begin());
    m.params = j.at("params").get<std::vector<double>>();
    m.seed = j.at("seed").get<std::uint64_t>();
  } catch (const Json::exception& e) {
    throw FormatError(fmt::format("malformed model file: {}", e.what()));
  }
  m.validate();
  return m;
}

void save_model(const ModelState& m, const std::filesystem::path& path) {
  const std::string text = serialize_model(m);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(fmt::format("cannot open '{}' for writing", path.string()));
  out << text;
  if (!out) throw Error(fmt::format("failed writing '{}'", path.string()));
}

ModelState load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(fmt::format("cannot open model file '{}'", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_model(ss.str());
}

}  // namespace handstate
