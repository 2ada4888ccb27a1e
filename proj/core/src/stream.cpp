#include "handstate/stream.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <istream>
#include <ostream>
#include <thread>

#include <fmt/format.h>

#include "json.hpp"

namespace handstate {

using json = nlohmann::json;

std::string_view to_string(Source s) noexcept { return s == Source::Exo ? "exo" : "emg"; }

void StreamEvent::validate() const {
  const std::size_t want = source == Source::Exo ? kExoChannels : kEmgChannels;
  if (payload.size() != want) {
    throw ValidationError(
        fmt::format("{} event at t={} has {} values, expected {}", to_string(source), t, payload.size(), want));
  }
  if (!std::isfinite(t)) throw ValidationError("event timestamp is not finite");
  for (double v : payload) {
    if (!std::isfinite(v)) throw ValidationError(fmt::format("{} event at t={} has a non-finite value", to_string(source), t));
  }
}

Session::Session(const ModelState& model, const AlignmentConfig& cfg) : predictor_(model), cfg_(cfg) {
  cfg_.validate();
}

Session open_session(const ModelState& model, const AlignmentConfig& cfg) { return Session(model, cfg); }

bool Session::closeable(double t) const noexcept {
  const double lead = std::max(wm_exo_, wm_emg_);
  if (!std::isfinite(lead)) return false;
  // A source that has not spoken yet lags from the session's first event.
  auto ok = [&](double wm) {
    if (wm > t) return true;
    return lead - (std::isfinite(wm) ? wm : start_) > cfg_.max_gap;
  };
  return ok(wm_exo_) && ok(wm_emg_);
}

std::optional<PredictionEvent> Session::close_tick() {
  const std::int64_t k = next_k_++;
  const double t = cfg_.tick_time(k);
  const double lo = cfg_.window_start(k);

  while (!exo_pending_.empty() && exo_pending_.front().t <= t) {
    exo_hold_ = exo_pending_.front();
    exo_pending_.pop_front();
  }
  while (!emg_pending_.empty() && emg_pending_.front().t <= lo) {
    emg_hold_ = emg_pending_.front();
    emg_pending_.pop_front();
  }
  std::array<double, kEmgChannels> sum{};
  std::size_t n = 0;
  for (const Timed& s : emg_pending_) {
    if (s.t > t) break;
    for (std::size_t c = 0; c < kEmgChannels; ++c) sum[c] += s.v[c];
    emg_hold_ = s;
    ++n;
  }
  if (!exo_hold_ || !emg_hold_) return std::nullopt;

  FeatureRow row{};
  row[0] = exo_hold_->v[0];
  row[1] = exo_hold_->v[1];
  for (std::size_t c = 0; c < kEmgChannels; ++c) {
    row[kExoChannels + c] = n > 0 ? sum[c] / static_cast<double>(n) : emg_hold_->v[c];
  }
  PredictionEvent p;
  p.k = k;
  p.t = t;
  p.y = predictor_.step(row);
  p.stale_exo = t - exo_hold_->t > cfg_.max_gap;
  p.stale_emg = t - emg_hold_->t > cfg_.max_gap;
  ++emitted_;
  return p;
}

std::vector<PredictionEvent> Session::push(const StreamEvent& e) {
  if (finished_) throw ValidationError("session is finished");
  e.validate();
  double& wm = e.source == Source::Exo ? wm_exo_ : wm_emg_;
  if (e.t < wm) {
    throw ValidationError(
        fmt::format("{} timestamp regressed from {} to {}", to_string(e.source), wm, e.t));
  }
  wm = e.t;
  if (!std::isfinite(start_)) start_ = e.t;
  Timed s{e.t, {}};
  std::copy(e.payload.begin(), e.payload.end(), s.v.begin());
  (e.source == Source::Exo ? exo_pending_ : emg_pending_).push_back(s);

  std::vector<PredictionEvent> out;
  while (closeable(cfg_.tick_time(next_k_))) {
    if (auto p = close_tick()) out.push_back(*p);
  }
  return out;
}

std::vector<PredictionEvent> Session::finish() {
  std::vector<PredictionEvent> out;
  if (finished_) return out;
  finished_ = true;
  const double lead = std::max(wm_exo_, wm_emg_);
  if (!std::isfinite(lead)) return out;
  const std::int64_t last = cfg_.last_tick(lead);
  while (next_k_ <= last) {
    if (auto p = close_tick()) out.push_back(*p);
  }
  return out;
}

std::vector<StreamEvent> events_of(const RawSequence& seq) {
  std::vector<StreamEvent> out;
  out.reserve(seq.exo.size() + seq.emg.size());
  std::size_t i = 0, j = 0;
  while (i < seq.exo.size() || j < seq.emg.size()) {
    const bool take_exo = j >= seq.emg.size() || (i < seq.exo.size() && seq.exo[i].t <= seq.emg[j].t);
    if (take_exo) {
      const auto& s = seq.exo[i++];
      out.push_back({s.t, Source::Exo, {s.position, s.current}});
    } else {
      const auto& s = seq.emg[j++];
      out.push_back({s.t, Source::Emg, std::vector<double>(s.channels.begin(), s.channels.end())});
    }
  }
  return out;
}

ReplayResult replay(const RawSequence& seq, const ModelState& model, const AlignmentConfig& cfg, double speed) {
  Session session(model, cfg);
  ReplayResult out;
  const auto events = events_of(seq);
  const bool paced = std::isfinite(speed) && speed > 0.0;
  const auto start = std::chrono::steady_clock::now();
  const double t0 = events.empty() ? 0.0 : events.front().t;
  for (const auto& e : events) {
    if (paced) {
      const auto due = start + std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                                   std::chrono::duration<double>((e.t - t0) / speed));
      std::this_thread::sleep_until(due);
    }
    auto p = session.push(e);
    out.predictions.insert(out.predictions.end(), p.begin(), p.end());
  }
  auto tail = session.finish();
  out.predictions.insert(out.predictions.end(), tail.begin(), tail.end());

  if (seq.labelled()) {
    std::vector<TargetPair> pred, truth;
    for (const auto& p : out.predictions) {
      const auto opening = interpolate_opening(seq.gt, p.t, cfg.max_gap);
      if (!opening) continue;
      pred.push_back(p.y);
      truth.push_back(TargetPair::clamped(*opening, compliance_of(seq.modality_at(p.t))));
    }
    if (!truth.empty()) {
      MetricsReport r = evaluate(pred, truth);
      r.user = seq.user;
      r.architecture = std::string(to_string(model.spec.kind));
      r.subset = std::string(to_string(model.spec.subset));
      out.metrics = r;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

std::optional<StreamEvent> parse_event(std::string_view line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& e) {
    throw FormatError(fmt::format("malformed event record: {}", e.what()));
  }
  if (!j.is_object() || !j.contains("t") || !j.contains("src") || !j.contains("v") || !j["t"].is_number() ||
      !j["src"].is_string() || !j["v"].is_array()) {
    throw FormatError("event record needs numeric \"t\", string \"src\" and array \"v\"");
  }
  const std::string src = j["src"].get<std::string>();
  if (src == "gt") return std::nullopt;
  StreamEvent e;
  e.t = j["t"].get<double>();
  if (src == "exo") {
    e.source = Source::Exo;
  } else if (src == "emg") {
    e.source = Source::Emg;
  } else {
    throw FormatError(fmt::format("unknown event source '{}'", src));
  }
  for (const auto& v : j["v"]) {
    if (!v.is_number()) throw FormatError("event values must be numbers");
    e.payload.push_back(v.get<double>());
  }
  return e;
}

std::string encode_prediction(const PredictionEvent& p) {
  return fmt::format(R"({{"t":{},"y_o":{},"y_c":{},"stale_exo":{},"stale_emg":{}}})", p.t, p.y.opening,
                     p.y.compliance, p.stale_exo, p.stale_emg);
}

PredictionEvent decode_prediction(std::string_view line) {
  try {
    const json j = json::parse(line);
    PredictionEvent p;
    p.t = j.at("t").get<double>();
    p.y = TargetPair{j.at("y_o").get<double>(), j.at("y_c").get<double>()};
    p.stale_exo = j.at("stale_exo").get<bool>();
    p.stale_emg = j.at("stale_emg").get<bool>();
    return p;
  } catch (const json::exception& e) {
    throw FormatError(fmt::format("malformed prediction record: {}", e.what()));
  }
}

LiveStats run_live(std::istream& in, std::ostream& out, std::ostream& err, const ModelState& model,
                   const AlignmentConfig& cfg, std::size_t queue_capacity) {
  struct Item {
    std::optional<StreamEvent> event;
    std::string error;
  };
  BoundedQueue<Item> queue(queue_capacity);
  std::thread reader([&] {
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      Item item;
      try {
        item.event = parse_event(line);
        if (!item.event) continue;
      } catch (const FormatError& e) {
        item.error = fmt::format("line {}: {}", line_no, e.what());
      }
      if (!queue.push(std::move(item))) break;
    }
    queue.close();
  });

  LiveStats stats;
  Session session(model, cfg);
  auto emit = [&](const std::vector<PredictionEvent>& ps) {
    for (const auto& p : ps) out << encode_prediction(p) << '\n';
    stats.predictions += ps.size();
    if (!ps.empty()) out.flush();
  };
  while (auto item = queue.pop()) {
    if (!item->event) {
      err << "rejected: " << item->error << '\n';
      ++stats.rejected;
      continue;
    }
    ++stats.events;
    try {
      emit(session.push(*item->event));
    } catch (const ValidationError& e) {
      err << "rejected: " << e.what() << '\n';
      ++stats.rejected;
    }
  }
  reader.join();
  emit(session.finish());
  return stats;
}

}  // namespace handstate
