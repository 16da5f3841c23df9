// Microbenchmarks for the hot paths: dense algebra, attention layers,
// sequence generation, and a full communication round.
#include <benchmark/benchmark.h>

#include <optional>
#include <vector>

#include "hydisc/blocks.hpp"
#include "hydisc/datagen.hpp"
#include "hydisc/models.hpp"
#include "hydisc/params.hpp"
#include "hydisc/protocol.hpp"
#include "hydisc/rng.hpp"
#include "hydisc/tensor.hpp"

using namespace hydisc;

namespace {

Tensor gaussian(RandomStream& rs, int rows, int cols, bool parameter) {
  std::vector<double> data(static_cast<std::size_t>(rows) * cols);
  for (double& x : data) x = rs.next_gaussian() * 0.5;
  return parameter ? Tensor::parameter(rows, cols, std::move(data))
                   : Tensor::from_rows(rows, cols, std::move(data));
}

void BM_MatmulForward(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  RandomStream rs(1);
  NoGradGuard no_grad;
  const Tensor a = gaussian(rs, n, n, false);
  const Tensor b = gaussian(rs, n, n, false);
  for (auto _ : state) {
    benchmark::DoNotOptimize(matmul(a, b).at(0, 0));
  }
  state.SetItemsProcessed(state.iterations() * 2ll * n * n * n);
}
BENCHMARK(BM_MatmulForward)->Arg(16)->Arg(32)->Arg(64)->Arg(128);

void BM_MatmulBackward(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  RandomStream rs(2);
  Tensor a = gaussian(rs, n, n, true);
  Tensor b = gaussian(rs, n, n, true);
  for (auto _ : state) {
    a.zero_grad();
    b.zero_grad();
    Tensor loss = sum_all(matmul(a, b));
    loss.backward();
    benchmark::DoNotOptimize(a.leaf_grad()[0]);
  }
  state.SetItemsProcessed(state.iterations() * 2ll * n * n * n);
}
BENCHMARK(BM_MatmulBackward)->Arg(16)->Arg(32)->Arg(64);

void BM_TransformerLayerForward(benchmark::State& state) {
  const int width = static_cast<int>(state.range(0));
  const int len = static_cast<int>(state.range(1));
  RandomStream rs(3);
  const TransformerLayerParams p = make_transformer_layer(width, 2, true, 16, rs);
  NoGradGuard no_grad;
  const Tensor x = gaussian(rs, len, width, false);
  const Tensor cond = gaussian(rs, 6, 16, false);
  for (auto _ : state) {
    benchmark::DoNotOptimize(transformer_layer(x, std::optional<Tensor>(cond), p).at(0, 0));
  }
}
BENCHMARK(BM_TransformerLayerForward)->Args({32, 8})->Args({32, 32})->Args({64, 32});

void BM_TransformerLayerTrainStep(benchmark::State& state) {
  const int width = static_cast<int>(state.range(0));
  RandomStream rs(4);
  TransformerLayerParams p = make_transformer_layer(width, 2, true, 16, rs);
  const Tensor x = gaussian(rs, 16, width, false);
  const Tensor cond = gaussian(rs, 6, 16, false);
  ParamSet params = p.params();
  for (auto _ : state) {
    params.zero_grads();
    Tensor loss = sum_all(transformer_layer(x, std::optional<Tensor>(cond), p));
    loss.backward();
    benchmark::DoNotOptimize(loss.item());
  }
}
BENCHMARK(BM_TransformerLayerTrainStep)->Arg(32)->Arg(64);

void BM_GenerateSequence(benchmark::State& state) {
  const int len = static_cast<int>(state.range(0));
  RandomStream rs(5);
  const ModelShape shape{6, 16, 32, 1, 1};
  const GeneratorParams gen = make_generator(Modality::audio, shape, rs);
  NoGradGuard no_grad;
  const FeatureSequence text = FeatureSequence::real(Modality::text, gaussian(rs, 6, 16, false));
  std::uint64_t seed = 0;
  for (auto _ : state) {
    const FeatureSequence seq = generate_sequence(gen, Modality::audio, text, NoiseSeed{seed++}, len);
    benchmark::DoNotOptimize(seq.cls().at(0, 0));
  }
}
BENCHMARK(BM_GenerateSequence)->Arg(6)->Arg(16);

void BM_Discriminate(benchmark::State& state) {
  RandomStream rs(6);
  const ModelShape shape{6, 16, 32, 1, 1};
  const DiscriminatorParams disc = make_discriminator(Modality::audio, shape, rs);
  NoGradGuard no_grad;
  const FeatureSequence text = FeatureSequence::real(Modality::text, gaussian(rs, 6, 16, false));
  const FeatureSequence seq = FeatureSequence::real(Modality::audio, gaussian(rs, 6, 6, false));
  for (auto _ : state) {
    benchmark::DoNotOptimize(discriminate(disc, seq, text).scores.at(0, 0));
  }
}
BENCHMARK(BM_Discriminate);

void BM_ParameterRoundTrip(benchmark::State& state) {
  RandomStream rs(7);
  ServerBuild build;
  TrainingRuntime rt;
  rt.server = make_server(7, build);
  ParamSet params = rt.server.disc_audio.params();
  for (auto _ : state) {
    ParamBundle b = snapshot(params);
    benchmark::DoNotOptimize(b.content_hash());
    restore(params, b);
  }
}
BENCHMARK(BM_ParameterRoundTrip);

void BM_FullRound(benchmark::State& state) {
  const int s = static_cast<int>(state.range(0));
  FederationSpec spec;
  spec.train = {4, 8};
  spec.valid = {1, 2};
  spec.test = {1, 2};
  spec.d_t = 8;
  spec.d_a = 4;
  spec.d_v = 4;
  spec.len_t = 4;
  spec.len_a = 4;
  spec.len_v = 4;
  const Federation fed = make_federation(spec);
  ServerBuild build;
  build.d_t = 8;
  build.d_a = 4;
  build.d_v = 4;
  build.len_a = 4;
  build.len_v = 4;
  build.width = 16;
  build.gen_visual_heads = 2;
  build.disc_visual_heads = 2;
  build.msa_visual_heads = 2;
  TrainingRuntime rt;
  rt.server = make_server(7, build);
  const ProtocolConfig pcfg;
  for (auto _ : state) {
    CommsLedger ledger;
    const auto recs = run_cgan_round(rt.server, fed, rt.clients, s, pcfg, ledger);
    benchmark::DoNotOptimize(recs.size());
  }
}
BENCHMARK(BM_FullRound)->Arg(2)->Arg(4)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
