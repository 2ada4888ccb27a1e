#pragma once

// Deterministic SVG figures: the ablation bar grid and the replay trace.
// Output depends only on the inputs; numbers are printed at fixed precision.

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "handstate/eval.hpp"
#include "handstate/stream.hpp"
#include "handstate/types.hpp"

namespace handstate::cli {

/// Metric x target grid of panels (rows r2, rmse; columns y_o, y_c). Each
/// panel has one row per architecture and one coloured bar per feature
/// subset, with the cell's confidence interval as a whisker.
std::string render_ablation_svg(std::span<const AggregateCell> cells, const std::string& title = {});

struct Trace {
  std::string title;
  std::vector<double> t;
  std::vector<std::array<double, kEmgChannels>> emg;
  std::vector<std::array<double, kExoChannels>> exo;
  std::vector<TargetPair> predicted;
  /// NaN where the tick has no label.
  std::vector<double> opening_truth;
  std::vector<double> compliance_truth;
};

/// Joins replay predictions with the aligned features and labels of the
/// recording they came from. Predictions for ticks the aligner dropped are
/// skipped.
Trace make_trace(const RawSequence& seq, std::span<const PredictionEvent> predictions,
                 const AlignmentConfig& cfg = {});

/// Four stacked panels sharing the time axis: EMG channels, exo features,
/// opening and compliance (prediction over ground truth).
std::string render_trace_svg(const Trace& trace);

}  // namespace handstate::cli
