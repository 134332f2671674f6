// Serial reference against the OpenMP path for the three parallel kernels.
// Run with OMP_NUM_THREADS set to compare thread counts.

#include <benchmark/benchmark.h>

#include "chatir/index.hpp"
#include "chatir/semantic.hpp"
#include "chatir/synth.hpp"

namespace {

using namespace chatir;

const std::vector<PairRecord>& corpus() {
  static const auto pairs = synth::dialogue_corpus({5000, 0.5, 1});
  return pairs;
}

const CdssmEncoder& encoder() {
  static const auto enc = CdssmEncoder::create(EncoderDims{}, 1);
  return enc;
}

Exec exec_of(const benchmark::State& state) { return state.range(0) ? Exec::parallel : Exec::serial; }

void BM_FetchBatch(benchmark::State& state) {
  static const auto index = InvertedIndex::build(corpus());
  std::vector<QueryBag> queries;
  for (std::size_t i = 0; i < 512; ++i) {
    const auto& p = corpus()[(i * 7) % corpus().size()];
    queries.push_back(make_query_bag(p.message, p.context));
  }
  for (auto _ : state) benchmark::DoNotOptimize(index.fetch_batch(queries, 50, exec_of(state)));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(queries.size()));
}

void BM_EncodeBatch(benchmark::State& state) {
  std::vector<std::vector<std::string>> inputs;
  for (std::size_t i = 0; i < 256; ++i) inputs.push_back(corpus()[i].response.tokens);
  for (auto _ : state) benchmark::DoNotOptimize(encoder().encode_batch(inputs, exec_of(state)));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(inputs.size()));
}

void BM_TrainingLossGradients(benchmark::State& state) {
  TrainBatch batch;
  for (std::size_t i = 0; i < 64; ++i) {
    TrainExample ex{corpus()[i].message.tokens, corpus()[i].response.tokens, {}};
    for (std::size_t k = 1; k <= 4; ++k) ex.negatives.push_back(corpus()[(i + 97 * k) % corpus().size()].response.tokens);
    batch.examples.push_back(std::move(ex));
  }
  for (auto _ : state) {
    auto grads = nn::Gradients::zeros_like(encoder().stack());
    benchmark::DoNotOptimize(training_loss(encoder(), batch, 10.0, &grads, exec_of(state)));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(batch.examples.size()));
}

BENCHMARK(BM_FetchBatch)->ArgName("parallel")->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_EncodeBatch)->ArgName("parallel")->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_TrainingLossGradients)->ArgName("parallel")->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
