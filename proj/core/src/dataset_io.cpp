#include "handstate/dataset_io.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

namespace handstate {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

namespace {

Json channel_header() {
  Json emg = Json::array();
  for (std::size_t c = 0; c < kEmgChannels; ++c) emg.push_back(feature_names()[kExoChannels + c]);
  return Json{{"exo", {feature_names()[0], feature_names()[1]}}, {"emg", emg}, {"gt", {"opening_rad"}}};
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw FormatError(fmt::format("cannot open '{}'", p.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, std::string_view text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(fmt::format("cannot open '{}' for writing", p.string()));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw Error(fmt::format("failed writing '{}'", p.string()));
}

void append_values(std::string& out, std::span<const double> v) {
  out += '[';
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    fmt::format_to(std::back_inserter(out), "{}", v[i]);
  }
  out += ']';
}

}  // namespace

std::string stream_file_name(std::string_view id) {
  std::string name;
  for (char c : id) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
                    c == '-' || c == '_' || c == '.';
    name += ok ? c : '_';
  }
  return name + ".jsonl";
}

std::string encode_stream(const RawSequence& seq) {
  std::string out;
  out.reserve(seq.exo.size() * 48 + seq.emg.size() * 200 + seq.gt.size() * 40);
  std::size_t i = 0, j = 0, k = 0;
  const double inf = std::numeric_limits<double>::infinity();
  while (i < seq.exo.size() || j < seq.emg.size() || k < seq.gt.size()) {
    const double te = i < seq.exo.size() ? seq.exo[i].t : inf;
    const double tm = j < seq.emg.size() ? seq.emg[j].t : inf;
    const double tg = k < seq.gt.size() ? seq.gt[k].t : inf;
    if (te <= tm && te <= tg) {
      const auto& s = seq.exo[i++];
      const double v[2] = {s.position, s.current};
      fmt::format_to(std::back_inserter(out), "{{\"t\":{},\"src\":\"exo\",\"v\":", s.t);
      append_values(out, v);
    } else if (tm <= tg) {
      const auto& s = seq.emg[j++];
      fmt::format_to(std::back_inserter(out), "{{\"t\":{},\"src\":\"emg\",\"v\":", s.t);
      append_values(out, s.channels);
    } else {
      const auto& s = seq.gt[k++];
      fmt::format_to(std::back_inserter(out), "{{\"t\":{},\"src\":\"gt\",\"v\":", s.t);
      append_values(out, std::span<const double>(&s.opening, 1));
    }
    out += "}\n";
  }
  return out;
}

void decode_stream(std::string_view text, RawSequence& seq, std::string_view file_label) {
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    const std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;

    Json rec;
    try {
      rec = Json::parse(line);
    } catch (const Json::parse_error&) {
      throw FormatError(fmt::format("{}:{}: not a JSON record", file_label, line_no));
    }
    double t = 0.0;
    std::string src;
    std::vector<double> v;
    try {
      t = rec.at("t").get<double>();
      src = rec.at("src").get<std::string>();
      v = rec.at("v").get<std::vector<double>>();
    } catch (const Json::exception&) {
      throw FormatError(fmt::format("{}:{}: record needs numeric t, string src and array v",
                                    file_label, line_no));
    }
    auto arity = [&](std::size_t n) {
      if (v.size() != n) {
        throw ValidationError(fmt::format("{}:{}: sequence '{}': {} record has {} values, expected {}",
                                          file_label, line_no, seq.id, src, v.size(), n));
      }
    };
    if (src == "exo") {
      arity(kExoChannels);
      seq.exo.push_back({t, v[0], v[1]});
    } else if (src == "emg") {
      arity(kEmgChannels);
      EmgSample s;
      s.t = t;
      std::copy(v.begin(), v.end(), s.channels.begin());
      seq.emg.push_back(s);
    } else if (src == "gt") {
      arity(1);
      seq.gt.push_back({t, v[0]});
    } else {
      throw FormatError(fmt::format("{}:{}: unknown source '{}'", file_label, line_no, src));
    }
  }
}

Dataset load_dataset(const fs::path& dir, LoadReport* report) {
  const fs::path manifest_path = dir / "manifest.json";
  if (!fs::exists(manifest_path)) {
    throw FormatError(fmt::format("missing manifest: '{}'", manifest_path.string()));
  }
  Json manifest;
  try {
    manifest = Json::parse(read_file(manifest_path));
  } catch (const Json::parse_error& e) {
    throw FormatError(fmt::format("'{}' is not valid JSON: {}", manifest_path.string(), e.what()));
  }

  Dataset d;
  try {
    const int version = manifest.at("version").get<int>();
    if (version != kDatasetVersion) {
      throw FormatError(fmt::format("unsupported dataset version {}", version));
    }
    if (manifest.contains("channels") && manifest.at("channels") != channel_header()) {
      throw ValidationError(fmt::format("'{}': channel header does not match the canonical layout",
                                        manifest_path.string()));
    }
    const Json& seed = manifest.at("generator_seed");
    if (!seed.is_null()) d.generator_seed = seed.get<std::uint64_t>();

    for (const Json& entry : manifest.at("sequences")) {
      RawSequence seq;
      seq.id = entry.at("id").get<std::string>();
      seq.user = entry.at("user").get<std::string>();
      seq.session = entry.at("session").get<std::string>();
      seq.modality = parse_modality(entry.at("modality").get<std::string>());
      if (entry.contains("segments")) {
        for (const Json& s : entry.at("segments")) {
          seq.segments.push_back(
              {s.at("t").get<double>(), parse_modality(s.at("modality").get<std::string>())});
        }
      }
      const auto file = entry.at("file").get<std::string>();
      const fs::path stream_path = dir / file;
      if (!fs::exists(stream_path)) {
        throw FormatError(fmt::format("sequence '{}': stream file '{}' not found", seq.id, file));
      }
      decode_stream(read_file(stream_path), seq, file);
      d.sequences.push_back(std::move(seq));
    }
  } catch (const Json::exception& e) {
    throw FormatError(fmt::format("malformed manifest '{}': {}", manifest_path.string(), e.what()));
  }

  d.validate();
  if (report) {
    report->nonconformant.clear();
    for (const auto& s : d.sequences) {
      if (!s.protocol_conformant()) report->nonconformant.push_back(s.id);
    }
  }
  return d;
}

void save_dataset(const Dataset& d, const fs::path& dir) {
  d.validate();
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(fmt::format("cannot create '{}': {}", dir.string(), ec.message()));

  Json entries = Json::array();
  std::set<std::string> files;
  for (const auto& seq : d.sequences) {
    const std::string file = stream_file_name(seq.id);
    if (!files.insert(file).second) {
      throw ValidationError(fmt::format("sequence ids collide on file name '{}'", file));
    }
    Json e{{"id", seq.id},
           {"user", seq.user},
           {"session", seq.session},
           {"modality", to_string(seq.modality)},
           {"file", file}};
    if (!seq.segments.empty()) {
      Json segs = Json::array();
      for (const auto& s : seq.segments) segs.push_back(Json{{"t", s.t_start}, {"modality", to_string(s.modality)}});
      e["segments"] = segs;
    }
    entries.push_back(std::move(e));
    write_file(dir / file, encode_stream(seq));
  }
  Json manifest{{"version", kDatasetVersion},
                {"generator_seed", d.generator_seed ? Json(*d.generator_seed) : Json(nullptr)},
                {"channels", channel_header()},
                {"sequences", entries}};
  write_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

}  // namespace handstate
