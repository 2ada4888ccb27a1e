#pragma once

#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include <unistd.h>

#include "handstate/synthgen.hpp"
#include "handstate/types.hpp"

namespace handstate::test {

// Removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("handstate_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

// A recording with constant streams at the nominal rates.
inline RawSequence constant_sequence(double duration, double position, double current, double emg, double opening,
                                     Modality m = Modality::Passive) {
  RawSequence s;
  s.id = "const";
  s.user = "u1";
  s.session = "s1";
  s.modality = m;
  for (int i = 0; i * (1.0 / kExoRate) <= duration + 1e-12; ++i) s.exo.push_back({i / kExoRate, position, current});
  for (int i = 0; i * (1.0 / kEmgRate) <= duration + 1e-12; ++i) {
    EmgSample e;
    e.t = i / kEmgRate;
    e.channels.fill(emg);
    s.emg.push_back(e);
  }
  for (int i = 0; i * (1.0 / kTrackerRate) <= duration + 1e-12; ++i) s.gt.push_back({i / kTrackerRate, opening});
  return s;
}

// Streams at nominal rates with +-20% timestamp jitter and random values.
inline RawSequence jittered_sequence(std::uint64_t seed, double duration, double jitter = 0.2) {
  std::mt19937_64 g(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0), pos(0.0, 1.0);
  RawSequence s;
  s.id = "jit" + std::to_string(seed);
  s.user = "u1";
  s.session = "s1";
  s.modality = Modality::Helping;
  auto times = [&](double rate) {
    std::vector<double> t;
    for (int i = 0;; ++i) {
      const double v = (i + (i == 0 ? 0.0 : jitter * 0.49 * u(g))) / rate;
      if (v > duration) break;
      t.push_back(v);
    }
    return t;
  };
  for (double t : times(kExoRate)) s.exo.push_back({t, pos(g), 0.5 + 0.5 * pos(g)});
  for (double t : times(kEmgRate)) {
    EmgSample e;
    e.t = t;
    for (double& c : e.channels) c = u(g);
    s.emg.push_back(e);
  }
  for (double t : times(kTrackerRate)) s.gt.push_back({t, kMaxOpening * pos(g)});
  return s;
}

inline ProtocolConfig small_protocol(int users = 1, double duration = 20.0) {
  ProtocolConfig c;
  c.users = users;
  c.sequence_duration = duration;
  return c;
}

}  // namespace handstate::test
