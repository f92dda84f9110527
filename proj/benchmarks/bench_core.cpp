#include <benchmark/benchmark.h>

#include <filesystem>

#include "svtc/activation/shard.hpp"
#include "svtc/circuits/circuits.hpp"
#include "svtc/common/seed.hpp"
#include "svtc/intervention/intervention.hpp"
#include "svtc/sae/sae.hpp"

using namespace svtc;

namespace {

Eigen::MatrixXd gaussian(int rows, int cols, std::uint64_t seed) {
    Rng rng = make_rng(seed);
    Eigen::MatrixXd X(rows, cols);
    for (Eigen::Index i = 0; i < X.size(); ++i) X.data()[i] = standard_normal(rng);
    return X;
}

// Desk-sized dictionary: d = 64, m = 8d.
const SaeParams& desk_sae() {
    static const SaeParams p = init_sae(64, 512, 8, gaussian(256, 64, 1), 2);
    return p;
}

} // namespace

static void BM_TopK(benchmark::State& state) {
    const Eigen::VectorXd v = gaussian(static_cast<int>(state.range(0)), 1, 3);
    for (auto _ : state) benchmark::DoNotOptimize(topk(v, 8));
    state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_TopK)->Arg(512)->Arg(4096);

static void BM_Encode(benchmark::State& state) {
    const auto& p = desk_sae();
    const Eigen::VectorXd h = gaussian(64, 1, 4).col(0);
    for (auto _ : state) benchmark::DoNotOptimize(encode(h, p));
    state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_Encode);

static void BM_Intervention(benchmark::State& state) {
    const auto& p = desk_sae();
    const TokenMatrix h = gaussian(48, 64, 5).cast<float>();
    const std::vector<int> set{3, 17, 200};
    for (auto _ : state) benchmark::DoNotOptimize(apply_intervention(h, p, set, 2.0, 16));
    state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_Intervention);

static void BM_Selectivity(benchmark::State& state) {
    const Eigen::MatrixXd codes = gaussian(static_cast<int>(state.range(0)), 512, 6).cwiseAbs();
    std::vector<bool> pos(static_cast<size_t>(codes.rows()));
    for (size_t i = 0; i < pos.size(); ++i) pos[i] = i % 7 == 0;
    for (auto _ : state) benchmark::DoNotOptimize(compute_selectivity(codes, pos));
    state.SetItemsProcessed(state.iterations() * codes.rows());
}
BENCHMARK(BM_Selectivity)->Arg(1000)->Arg(6000);

static void BM_ShardRead(benchmark::State& state) {
    const auto path = std::filesystem::temp_directory_path() / "svtc_bench.svtc";
    ShardHeader h{8, 48, 64, 4, 4};
    std::vector<ActivationRecord> recs;
    for (int i = 0; i < state.range(0); ++i) {
        recs.push_back(make_record(h, "test_" + std::to_string(i)));
        recs.back().logits.assign(3, 0.5f);
    }
    write_shard(path, h, recs);
    for (auto _ : state) benchmark::DoNotOptimize(read_shard(path));
    state.SetBytesProcessed(static_cast<std::int64_t>(state.iterations()) *
                            static_cast<std::int64_t>(std::filesystem::file_size(path)));
    std::filesystem::remove(path);
    std::filesystem::remove(index_path(path));
}
BENCHMARK(BM_ShardRead)->Arg(100);
BENCHMARK_MAIN();
