#include <benchmark/benchmark.h>

#include <random>

#include "gecadapt/bpe.hpp"
#include "gecadapt/corpus.hpp"
#include "gecadapt/eval.hpp"
#include "gecadapt/nn.hpp"
#include "gecadapt/synth.hpp"

using namespace gecadapt;

namespace {

Corpus learner_sample(std::size_t n) {
  const L1 l1s[] = {L1::ES, L1::CN};
  const Level levels[] = {Level::A2, Level::B2};
  return generate_corpus(default_profile(l1s, levels, 1), n);
}

Batch random_batch(std::mt19937_64& rng, int vocab, int size, int len) {
  Batch b;
  for (int i = 0; i < size; ++i) {
    std::vector<int> s(len), t(len);
    for (int& id : s) id = 4 + static_cast<int>(rng() % (vocab - 4));
    for (int& id : t) id = 4 + static_cast<int>(rng() % (vocab - 4));
    b.src.push_back(s);
    b.tgt.push_back(t);
  }
  return b;
}

void BM_ScoreCorpus(benchmark::State& state) {
  const Corpus c = learner_sample(static_cast<std::size_t>(state.range(0)));
  std::vector<Tokens> hyps;
  for (const auto& s : c) hyps.push_back(s.target);
  for (auto _ : state) benchmark::DoNotOptimize(score_corpus(c, hyps));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_ScoreCorpus)->Arg(200)->Arg(2000);

void BM_LearnBpe(benchmark::State& state) {
  const auto stream = bpe_stream(learner_sample(2000));
  for (auto _ : state)
    benchmark::DoNotOptimize(learn_bpe(stream, static_cast<std::size_t>(state.range(0))));
}
BENCHMARK(BM_LearnBpe)->Arg(100)->Arg(500);

void BM_Generate(benchmark::State& state) {
  const L1 l1s[] = {L1::ES, L1::CN, L1::DE, L1::FR};
  const Level levels[] = {Level::A2, Level::B1, Level::B2};
  const auto profile = default_profile(l1s, levels, 3);
  for (auto _ : state)
    benchmark::DoNotOptimize(generate_corpus(profile, static_cast<std::size_t>(state.range(0))));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Generate)->Arg(10000);

// One training step's worth of work for the desk model.
void BM_ForwardBackward(benchmark::State& state) {
  ModelConfig c = desk_model_config(600);
  c.hidden_dim = c.embed_dim = static_cast<int>(state.range(0));
  const auto params = init_params<float>(c, 1);
  std::mt19937_64 rng(1);
  const Batch b = random_batch(rng, c.vocab_size, 32, 12);
  const auto masks = apply_dropout_masks<float>(c, 2, 32, 12, b.max_tgt_steps());
  for (auto _ : state) {
    auto fwd = forward_loss(params, b, &masks);
    benchmark::DoNotOptimize(backward(*fwd.cache));
  }
  state.SetItemsProcessed(state.iterations() * 32);
}
BENCHMARK(BM_ForwardBackward)->Arg(64)->Arg(128)->Unit(benchmark::kMillisecond);

void BM_GreedyDecode(benchmark::State& state) {
  const ModelConfig c = desk_model_config(600);
  const auto params = init_params<float>(c, 1);
  std::mt19937_64 rng(3);
  const Batch b = random_batch(rng, c.vocab_size, 64, 12);
  for (auto _ : state) benchmark::DoNotOptimize(decode_greedy_batch(params, b.src, 20));
  state.SetItemsProcessed(state.iterations() * 64);
}
BENCHMARK(BM_GreedyDecode)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
