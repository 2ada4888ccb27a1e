#pragma once

// On-disk dataset layout:
//
//   <dir>/manifest.json   {"version": 1, "generator_seed": int|null,
//                          "channels": {...}, "sequences": [{"id", "user",
//                          "session", "modality", "file"[, "segments"]}]}
//   <dir>/<file>          JSON lines sorted by t, one record per sensor event:
//                          {"t": s, "src": "exo", "v": [position, current]}
//                          {"t": s, "src": "emg", "v": [c1..c8]}
//                          {"t": s, "src": "gt",  "v": [opening_rad]}
//
// Records with equal t are written exo, emg, gt. Saving is byte-stable.

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "handstate/types.hpp"

namespace handstate {

inline constexpr int kDatasetVersion = 1;

struct LoadReport {
  /// Ids of sequences whose duration falls outside [55, 65] s.
  std::vector<std::string> nonconformant;
};

Dataset load_dataset(const std::filesystem::path& dir, LoadReport* report = nullptr);
void save_dataset(const Dataset& d, const std::filesystem::path& dir);

/// Stream-file codec, exposed for the live stdin path and tests.
std::string encode_stream(const RawSequence& seq);
void decode_stream(std::string_view text, RawSequence& seq, std::string_view file_label);

/// Stream-file name used by save_dataset for a sequence id.
std::string stream_file_name(std::string_view id);

}  // namespace handstate
