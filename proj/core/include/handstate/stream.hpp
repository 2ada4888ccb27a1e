#pragma once

// Online inference: incremental alignment of live exo and EMG streams with
// watermark-based tick closing, and stateful prediction at the master rate.
//
// A master tick t_k closes once, for each source, either a sample with a
// timestamp strictly greater than t_k has arrived (nothing at or before t_k
// can still come) or the source lags the leading source by more than max_gap.
// A closed tick sees exactly the samples the batch aligner would use, so a
// replayed recording yields the batch predictions.

#include <condition_variable>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <iosfwd>
#include <limits>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "handstate/eval.hpp"
#include "handstate/models.hpp"
#include "handstate/sync.hpp"
#include "handstate/types.hpp"

namespace handstate {

enum class Source : std::uint8_t { Exo, Emg };

std::string_view to_string(Source s) noexcept;

struct StreamEvent {
  double t = 0.0;
  Source source = Source::Exo;
  std::vector<double> payload;  // 2 values for exo, 8 for emg

  /// Arity and finiteness; throws ValidationError.
  void validate() const;
};

struct PredictionEvent {
  std::int64_t k = 0;
  double t = 0.0;
  TargetPair y;
  /// The source's freshest datum is older than max_gap at t.
  bool stale_exo = false;
  bool stale_emg = false;
  friend bool operator==(const PredictionEvent&, const PredictionEvent&) = default;
};

/// One live stream. Not thread-safe; use one session per stream.
class Session {
 public:
  Session(const ModelState& model, const AlignmentConfig& cfg);

  /// Ingests one event and returns the predictions of every tick it closes.
  /// Throws ValidationError, leaving the session unchanged, when the event
  /// is malformed or its timestamp precedes the source's previous one.
  std::vector<PredictionEvent> push(const StreamEvent& e);

  /// Closes every remaining tick up to the latest timestamp seen.
  std::vector<PredictionEvent> finish();

  std::size_t emitted() const noexcept { return emitted_; }
  /// Index of the next master tick to close.
  std::int64_t next_tick() const noexcept { return next_k_; }

 private:
  struct Timed {
    double t;
    std::array<double, kEmgChannels> v;
  };

  bool closeable(double t) const noexcept;
  std::optional<PredictionEvent> close_tick();

  Predictor predictor_;
  AlignmentConfig cfg_;
  double wm_exo_ = -std::numeric_limits<double>::infinity();
  double wm_emg_ = -std::numeric_limits<double>::infinity();
  double start_ = std::numeric_limits<double>::quiet_NaN();  // first event time
  std::deque<Timed> exo_pending_;  // samples after the last closed tick
  std::deque<Timed> emg_pending_;  // samples that may still fall in a window
  std::optional<Timed> exo_hold_;
  std::optional<Timed> emg_hold_;
  std::int64_t next_k_ = 0;
  std::size_t emitted_ = 0;
  bool finished_ = false;
};

Session open_session(const ModelState& model, const AlignmentConfig& cfg = {});

/// Exo and emg records of a recording merged by time (exo first on ties).
std::vector<StreamEvent> events_of(const RawSequence& seq);

struct ReplayResult {
  std::vector<PredictionEvent> predictions;
  /// Present when the recording carries labels at the predicted ticks.
  std::optional<MetricsReport> metrics;
};

inline constexpr double kNoPacing = std::numeric_limits<double>::infinity();

/// Feeds a recording through a session. speed multiplies real time; any
/// non-finite or non-positive speed disables pacing.
ReplayResult replay(const RawSequence& seq, const ModelState& model, const AlignmentConfig& cfg = {},
                    double speed = kNoPacing);

// ---------------------------------------------------------------------------
// JSON-lines codec for live mode.

/// Parses one dataset-format record. Tracker records yield nullopt; anything
/// malformed throws FormatError.
std::optional<StreamEvent> parse_event(std::string_view line);

/// {"t": ..., "y_o": ..., "y_c": ..., "stale_exo": ..., "stale_emg": ...}
std::string encode_prediction(const PredictionEvent& p);
PredictionEvent decode_prediction(std::string_view line);

/// Fixed-capacity FIFO between one producer and one consumer thread.
template <typename T>
class BoundedQueue {
 public:
  explicit BoundedQueue(std::size_t capacity) : capacity_(capacity == 0 ? 1 : capacity) {}

  /// Blocks while full. Returns false once the queue is closed.
  bool push(T value) {
    std::unique_lock lock(mu_);
    not_full_.wait(lock, [&] { return closed_ || items_.size() < capacity_; });
    if (closed_) return false;
    items_.push_back(std::move(value));
    not_empty_.notify_one();
    return true;
  }

  /// Blocks while empty; nullopt once closed and drained.
  std::optional<T> pop() {
    std::unique_lock lock(mu_);
    not_empty_.wait(lock, [&] { return closed_ || !items_.empty(); });
    if (items_.empty()) return std::nullopt;
    T v = std::move(items_.front());
    items_.pop_front();
    not_full_.notify_one();
    return v;
  }

  void close() {
    std::lock_guard lock(mu_);
    closed_ = true;
    not_empty_.notify_all();
    not_full_.notify_all();
  }

  std::size_t capacity() const noexcept { return capacity_; }

 private:
  std::size_t capacity_;
  std::deque<T> items_;
  bool closed_ = false;
  std::mutex mu_;
  std::condition_variable not_empty_, not_full_;
};

struct LiveStats {
  std::size_t events = 0;
  std::size_t predictions = 0;
  std::size_t rejected = 0;
};

/// Live mode: a reader thread parses records from `in` into a bounded queue;
/// the calling thread runs the session and writes one prediction per line to
/// `out`. Rejected events are reported on `err` and skipped.
LiveStats run_live(std::istream& in, std::ostream& out, std::ostream& err, const ModelState& model,
                   const AlignmentConfig& cfg = {}, std::size_t queue_capacity = 1024);

}  // namespace handstate
