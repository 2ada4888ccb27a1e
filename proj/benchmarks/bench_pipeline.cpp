#include <benchmark/benchmark.h>

#include "handstate/eval.hpp"
#include "handstate/models.hpp"
#include "handstate/stream.hpp"
#include "handstate/sync.hpp"
#include "handstate/synthgen.hpp"

using namespace handstate;

namespace {

const UserProfile& profile() {
  static const UserProfile p = draw_profiles(ProtocolConfig{})[0];
  return p;
}

const RawSequence& sequence() {
  static const RawSequence s = simulate_sequence(profile(), Modality::Helping, ProtocolConfig{}, 1);
  return s;
}

// Six aligned sequences, the size of one cross-validation training fold.
const std::vector<AlignedSequence>& fold() {
  static const std::vector<AlignedSequence> f = [] {
    std::vector<AlignedSequence> out;
    std::uint64_t seed = 10;
    for (Modality m : kAllModalities) {
      for (int rep = 0; rep < 2; ++rep) out.push_back(align_sequence(simulate_sequence(profile(), m, ProtocolConfig{}, seed++)));
    }
    return out;
  }();
  return f;
}

const ModelState& lstm() {
  static const ModelState m = [] {
    TrainConfig tc;
    tc.epochs = 1;
    return train_lstm(fold(), FeatureSubset::Full, tc);
  }();
  return m;
}

void BM_SimulateSequence(benchmark::State& state) {
  std::uint64_t seed = 0;
  for (auto _ : state) benchmark::DoNotOptimize(simulate_sequence(profile(), Modality::Opposing, ProtocolConfig{}, ++seed));
}
BENCHMARK(BM_SimulateSequence)->Unit(benchmark::kMillisecond);

void BM_Align(benchmark::State& state) {
  for (auto _ : state) benchmark::DoNotOptimize(align(sequence()));
  state.SetItemsProcessed(state.iterations() * 1200);
}
BENCHMARK(BM_Align)->Unit(benchmark::kMicrosecond);

void BM_LstmEpoch(benchmark::State& state) {
  TrainConfig tc;
  tc.epochs = 1;
  for (auto _ : state) benchmark::DoNotOptimize(train_lstm(fold(), FeatureSubset::Full, tc));
}
BENCHMARK(BM_LstmEpoch)->Unit(benchmark::kMillisecond);

void BM_MlpEpoch(benchmark::State& state) {
  const TrainingRows rows = TrainingRows::from(fold());
  TrainConfig tc;
  tc.epochs = 1;
  for (auto _ : state) benchmark::DoNotOptimize(train_mlp(rows, FeatureSubset::Full, tc));
}
BENCHMARK(BM_MlpEpoch)->Unit(benchmark::kMillisecond);

void BM_LinearFit(benchmark::State& state) {
  const TrainingRows rows = TrainingRows::from(fold());
  for (auto _ : state) benchmark::DoNotOptimize(train_linear(rows));
}
BENCHMARK(BM_LinearFit)->Unit(benchmark::kMicrosecond);

void BM_LstmPredict(benchmark::State& state) {
  const auto rows = fold().front().features();
  for (auto _ : state) benchmark::DoNotOptimize(predict(lstm(), rows));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(rows.size()));
}
BENCHMARK(BM_LstmPredict)->Unit(benchmark::kMicrosecond);

// Event-by-event streaming of one 60 s recording, unpaced.
void BM_Replay(benchmark::State& state) {
  for (auto _ : state) benchmark::DoNotOptimize(replay(sequence(), lstm()));
}
BENCHMARK(BM_Replay)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
