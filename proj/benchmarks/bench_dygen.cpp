#include "dygen/dynamics.hpp"
#include "dygen/inference.hpp"
#include "dygen/noise.hpp"
#include "dygen/stage1.hpp"
#include "dygen/stage2.hpp"
#include "dygen/synthetic.hpp"

#include <benchmark/benchmark.h>

using namespace dygen;

namespace {

Dataset bench_data(std::size_t n) {
    SyntheticSpec spec;
    spec.n = n;
    spec.num_classes = 4;
    spec.dim = 16;
    spec.seed = 1;
    return make_gaussian_mixture(spec);
}

void BM_InjectSymmetric(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i % 4);
    NoiseSpec spec;
    spec.kind = NoiseKind::symmetric;
    spec.ratio = 0.3;
    for (auto _ : state) {
        spec.seed++;
        benchmark::DoNotOptimize(inject_symmetric(labels, 4, spec));
    }
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n));
}
BENCHMARK(BM_InjectSymmetric)->Arg(10000)->Arg(100000);

void BM_InjectIdn(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    const Dataset d = bench_data(n);
    const Mat x = d.feature_matrix();
    const auto labels = d.noisy_labels();
    NoiseSpec spec;
    spec.kind = NoiseKind::instance_dependent;
    spec.ratio = 0.3;
    for (auto _ : state) {
        spec.seed++;
        benchmark::DoNotOptimize(inject_idn(x, labels, 4, spec));
    }
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n));
}
BENCHMARK(BM_InjectIdn)->Arg(2000)->Arg(10000);

void BM_Stage1Epoch(benchmark::State& state) {
    const Dataset d = bench_data(2000);
    Stage1Config cfg;
    cfg.epochs = 1;
    cfg.master_seed = 3;
    for (auto _ : state) {
        benchmark::DoNotOptimize(train_stage1(d, cfg));
    }
}
BENCHMARK(BM_Stage1Epoch)->Unit(benchmark::kMillisecond);

void BM_DynamicsStats(benchmark::State& state) {
    const Dataset d = bench_data(2000);
    Stage1Config cfg;
    cfg.epochs = 10;
    cfg.master_seed = 4;
    const Stage1Result r = train_stage1(d, cfg);
    const auto labels = d.noisy_labels();
    for (auto _ : state) {
        const CentroidTable t = compute_centroids(r.store, labels, 0);
        benchmark::DoNotOptimize(compute_stats(r.store, t, labels, 0));
    }
    state.SetItemsProcessed(state.iterations() * 2000);
}
BENCHMARK(BM_DynamicsStats)->Unit(benchmark::kMillisecond);

void BM_DirichletSample(benchmark::State& state) {
    Rng rng(5);
    const Vec alpha = {2.3, 1.4, 3.7, 1.1};
    for (auto _ : state) {
        benchmark::DoNotOptimize(sample_dirichlet(alpha, rng));
    }
}
BENCHMARK(BM_DirichletSample);

void BM_Ece(benchmark::State& state) {
    Rng rng(6);
    const auto n = static_cast<std::size_t>(state.range(0));
    Vec conf(n);
    std::vector<char> correct(n);
    for (std::size_t i = 0; i < n; ++i) {
        conf[i] = rng.uniform();
        correct[i] = rng.uniform() < 0.7;
    }
    for (auto _ : state) {
        benchmark::DoNotOptimize(ece(conf, correct));
    }
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n));
}
BENCHMARK(BM_Ece)->Arg(10000);

} // namespace

BENCHMARK_MAIN();
