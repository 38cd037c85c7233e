// Microbenchmarks for the hot paths: the conv/pool/linear kernels that
// dominate training, and the attack loops built on top of them.

#include <benchmark/benchmark.h>

#include "ila/attacks.hpp"
#include "ila/tensor.hpp"
#include "ila/train.hpp"
#include "ila/zoo.hpp"

namespace {

using namespace ila;

Tensor random_tensor(Shape shape, uint64_t seed, float scale = 1.0f) {
    Rng rng(seed);
    std::vector<float> values(shape_numel(shape));
    for (auto& v : values) v = static_cast<float>(rng.normal()) * scale;
    return Tensor::from(std::move(shape), std::move(values));
}

void BM_Conv2dForward(benchmark::State& state) {
    const int channels = static_cast<int>(state.range(0));
    Tensor x = random_tensor({8, channels, 16, 16}, 1);
    Tensor w = random_tensor({channels, channels, 3, 3}, 2, 0.05f);
    Tensor b = Tensor::zeros({channels});
    for (auto _ : state) {
        Tape t;
        t.set_recording(false);
        Tensor y = t.conv2d(x, w, b, 1, 1);
        benchmark::DoNotOptimize(y.values().data());
    }
    state.SetItemsProcessed(static_cast<int64_t>(state.iterations()) *
                            static_cast<int64_t>(x.numel()));
}
BENCHMARK(BM_Conv2dForward)->Arg(16)->Arg(32);

void BM_Conv2dBackward(benchmark::State& state) {
    const int channels = static_cast<int>(state.range(0));
    Tensor w = random_tensor({channels, channels, 3, 3}, 2, 0.05f);
    Tensor b = Tensor::zeros({channels});
    w.set_requires_grad(true);
    b.set_requires_grad(true);
    for (auto _ : state) {
        Tensor x = random_tensor({8, channels, 16, 16}, 1);
        x.set_requires_grad(true);
        Tape t;
        Tensor y = t.conv2d(x, w, b, 1, 1);
        Tensor loss = t.sum(y);
        t.backward(loss);
        benchmark::DoNotOptimize(x.grad().data());
        w.zero_grad();
        b.zero_grad();
    }
    state.SetItemsProcessed(static_cast<int64_t>(state.iterations()) * 8 * channels * 16 * 16);
}
BENCHMARK(BM_Conv2dBackward)->Arg(16)->Arg(32);

void BM_ModelForward(benchmark::State& state) {
    Model m = Model::build("plain_cnn", 42);
    m.set_params_requires_grad(false);
    Tensor x = random_tensor({16, 3, 32, 32}, 3);
    for (auto _ : state) {
        Tape t;
        t.set_recording(false);
        Tensor logits = m.forward(t, x);
        benchmark::DoNotOptimize(logits.values().data());
    }
    state.SetItemsProcessed(static_cast<int64_t>(state.iterations()) * 16);
}
BENCHMARK(BM_ModelForward);

void BM_TrainEpoch(benchmark::State& state) {
    Dataset d = synthetic_dataset(7, 64, 4);
    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.batch_size = 8;
    cfg.lr = 0.01;
    for (auto _ : state) {
        Model m = Model::build("plain_cnn", 42);
        train_model(m, d, cfg);
        benchmark::DoNotOptimize(m.num_taps());
    }
    state.SetItemsProcessed(static_cast<int64_t>(state.iterations()) *
                            static_cast<int64_t>(d.size()));
}
BENCHMARK(BM_TrainEpoch)->Unit(benchmark::kMillisecond);

void BM_IfgsmIteration(benchmark::State& state) {
    Model m = Model::build("plain_cnn", 42);
    m.set_params_requires_grad(false);
    Dataset d = synthetic_dataset(7, 16, 4);
    Tensor x = normalize(d, 0, 16);
    auto labels = label_slice(d, 0, 16);
    AttackConfig cfg;
    cfg.iterations = 1;
    for (auto _ : state) {
        Tensor adv = ifgsm(m, x, labels, cfg);
        benchmark::DoNotOptimize(adv.values().data());
    }
    state.SetItemsProcessed(static_cast<int64_t>(state.iterations()) * 16);
}
BENCHMARK(BM_IfgsmIteration)->Unit(benchmark::kMillisecond);

void BM_IlaIteration(benchmark::State& state) {
    Model m = Model::build("plain_cnn", 42);
    m.set_params_requires_grad(false);
    Dataset d = synthetic_dataset(7, 16, 4);
    Tensor x = normalize(d, 0, 16);
    auto labels = label_slice(d, 0, 16);
    AttackConfig base_cfg;
    base_cfg.iterations = 5;
    Tensor x_adv = ifgsm(m, x, labels, base_cfg);
    AttackConfig cfg;
    cfg.iterations = 1;
    cfg.step_size = 1.0;
    cfg.target_layer = 2;
    for (auto _ : state) {
        IlaOutput out = ila_attack(m, x, x_adv, labels, cfg);
        benchmark::DoNotOptimize(out.x.values().data());
    }
    state.SetItemsProcessed(static_cast<int64_t>(state.iterations()) * 16);
}
BENCHMARK(BM_IlaIteration)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
