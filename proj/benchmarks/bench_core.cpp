#include <benchmark/benchmark.h>

#include "hacl/evalkit.hpp"
#include "hacl/model.hpp"
#include "hacl/objective.hpp"
#include "hacl/rng.hpp"
#include "hacl/trainer.hpp"
#include "hacl/worldgen.hpp"

namespace {

using namespace hacl;

worldgen::Dataset small_dataset() {
    worldgen::DatasetConfig cfg;
    cfg.n_train = 64;
    cfg.n_eval = 16;
    return worldgen::build_dataset(cfg);
}

void BM_SceneGeneration(benchmark::State& state) {
    int64_t id = 0;
    for (auto _ : state) {
        auto s = worldgen::sample_scene(7, id++);
        benchmark::DoNotOptimize(s);
    }
}
BENCHMARK(BM_SceneGeneration);

void BM_PooledRepForward(benchmark::State& state) {
    const auto ds = small_dataset();
    model::TinyMllm mllm(model::default_dims(), 1);
    size_t i = 0;
    for (auto _ : state) {
        auto rep = mllm.image_rep(ds.train_scenes[i++ % ds.train_scenes.size()]);
        benchmark::DoNotOptimize(rep);
    }
}
BENCHMARK(BM_PooledRepForward);

void BM_Stage1Step(benchmark::State& state) {
    const auto ds = small_dataset();
    train::TrainConfig cfg;
    cfg.dims = model::default_dims();
    cfg.stage0.steps = 0;
    cfg.stage1.steps = 1;
    cfg.stage1.batch = static_cast<int>(state.range(0));
    cfg.stage1.mode = objective::Mode::hacl;
    for (auto _ : state) {
        model::TinyMllm mllm(cfg.dims, 1);
        auto res = train::run_stage1(cfg, ds, mllm);
        benchmark::DoNotOptimize(res);
    }
}
BENCHMARK(BM_Stage1Step)->Arg(8)->Arg(32);

void BM_PcaProject(benchmark::State& state) {
    Rng rng(5);
    evalkit::RepSet reps;
    for (int i = 0; i < 200; ++i) {
        std::vector<double> v(32);
        for (double& x : v) x = rng.next_gauss();
        reps.entries.push_back({i, evalkit::Label::image, std::move(v)});
    }
    for (auto _ : state) {
        auto proj = evalkit::pca_project(reps);
        benchmark::DoNotOptimize(proj);
    }
}
BENCHMARK(BM_PcaProject);

}  // namespace

BENCHMARK_MAIN();
