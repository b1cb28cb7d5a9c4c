// Compares the OpenMP-parallel kernels against the serial path (threads = 1)
// and verifies that both produce bitwise-identical results.

#include <chrono>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "vattn/gaussian.hpp"
#include "vattn/intrinsic.hpp"
#include "vattn/metrics.hpp"
#include "vattn/parallel.hpp"
#include "vattn/synth.hpp"
#include "vattn/trainer.hpp"

namespace {

using namespace vattn;

double time_ms(const std::function<void()>& fn, int reps) {
    fn(); // warm-up
    const auto t0 = std::chrono::steady_clock::now();
    for (int i = 0; i < reps; ++i) {
        fn();
    }
    const auto t1 = std::chrono::steady_clock::now();
    return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

struct BenchCase {
    std::string name;
    std::function<std::vector<double>()> run; // returns a result fingerprint
    int reps;
};

} // namespace

int main() {
    Rng rng(9);

    // batch VA loss step at training shape
    ModelConfig mc;
    Model model = Model::init(AttentionKind::va, mc, rng);
    MixturePrior prior = MixturePrior::init(3, mc.latent_dim, rng);
    const Dataset data = generate(preset_three_joint(), 7);
    Batch batch;
    for (int i = 0; i < 16; ++i) {
        batch.samples.push_back(&data.train[i * 37 % data.train.size()]);
    }
    Rng plan_rng(11);
    const NoisePlan plan = draw_noise_plan(batch.size(), mc.latent_dim, 1, 0.0, plan_rng);
    const LossWeights weights;

    // clustering E-step load
    std::vector<Tensor> points;
    Rng prng(13);
    for (int i = 0; i < 1200; ++i) {
        Tensor p = gaussian_sample(prng, {16});
        p[0] += (i % 3) * 6.0;
        points.push_back(std::move(p));
    }
    std::vector<int> labels;
    for (int i = 0; i < 1200; ++i) {
        labels.push_back(i % 3);
    }

    std::vector<BenchCase> cases;
    cases.push_back({"va_batch_loss", [&] {
                         LossTerms t = va_total_loss(model, batch, prior, plan, weights);
                         return std::vector<double>{t.density, t.kl, t.lse, t.det};
                     },
                     5});
    cases.push_back({"gmm_fit", [&] {
                         Rng r(21);
                         ClusterConfig cc;
                         cc.n_init = 2;
                         cc.max_iters = 25;
                         ClusterModel m = fit_gmm(points, 3, r, cc);
                         return std::vector<double>{m.loglik_trace.back()};
                     },
                     3});
    cases.push_back({"silhouette", [&] {
                         return std::vector<double>{silhouette(points, labels)};
                     },
                     3});
    cases.push_back({"generate", [&] {
                         const Dataset d = generate(preset_three_joint(), 3);
                         return std::vector<double>{d.train[0].input[0], d.test.back().count};
                     },
                     2});
    cases.push_back({"eval_counts", [&] {
                         const auto counts = predict_counts(model, data.test);
                         return std::vector<double>{counts[0], counts.back()};
                     },
                     3});

    std::printf("%-16s %12s %12s %9s %s\n", "kernel", "serial(ms)", "parallel(ms)", "speedup",
                "bitwise");
    for (auto& c : cases) {
        set_threads(1);
        const auto serial_result = c.run();
        const double serial_ms = time_ms([&] { c.run(); }, c.reps);
        set_threads(0); // env/OpenMP default
        const auto parallel_result = c.run();
        const double parallel_ms = time_ms([&] { c.run(); }, c.reps);
        const bool same = serial_result == parallel_result;
        std::printf("%-16s %12.2f %12.2f %8.2fx %s\n", c.name.c_str(), serial_ms, parallel_ms,
                    serial_ms / parallel_ms, same ? "yes" : "NO");
    }
    return 0;
}
