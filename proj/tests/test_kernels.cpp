// Serial-vs-parallel equivalence and naive reference implementations for the
// dense kernels.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "vattn/intrinsic.hpp"
#include "vattn/kernels.hpp"
#include "vattn/metrics.hpp"
#include "vattn/parallel.hpp"
#include "vattn/synth.hpp"
#include "vattn/trainer.hpp"

using namespace vattn;

namespace {

// reference conv: direct per-pixel gather with explicit bounds checks,
// accumulated in the same (ic, dy, dx) tap order as the production kernel
void conv3x3_reference(const Tensor& in, const Tensor& w, const Tensor& b, Tensor& out) {
    const std::size_t cin = in.dim(0), h = in.dim(1), wd = in.dim(2);
    const std::size_t cout = w.dim(0);
    out = Tensor({cout, h, wd});
    for (std::size_t oc = 0; oc < cout; ++oc) {
        for (std::size_t y = 0; y < h; ++y) {
            for (std::size_t x = 0; x < wd; ++x) {
                double acc = b[oc];
                for (std::size_t ic = 0; ic < cin; ++ic) {
                    for (int dy = -1; dy <= 1; ++dy) {
                        for (int dx = -1; dx <= 1; ++dx) {
                            const long yy = static_cast<long>(y) + dy;
                            const long xx = static_cast<long>(x) + dx;
                            if (yy < 0 || xx < 0 || yy >= static_cast<long>(h) ||
                                xx >= static_cast<long>(wd)) {
                                continue;
                            }
                            acc += w[((oc * cin + ic) * 3 + (dy + 1)) * 3 + (dx + 1)] *
                                   in.at(ic, yy, xx);
                        }
                    }
                }
                out.at(oc, y, x) = acc;
            }
        }
    }
}

void conv1x1_reference(const Tensor& in, const Tensor& w, const Tensor& b, Tensor& out) {
    const std::size_t cin = in.dim(0), h = in.dim(1), wd = in.dim(2);
    const std::size_t cout = w.dim(0);
    out = Tensor({cout, h, wd});
    for (std::size_t oc = 0; oc < cout; ++oc) {
        for (std::size_t y = 0; y < h; ++y) {
            for (std::size_t x = 0; x < wd; ++x) {
                double acc = b[oc];
                for (std::size_t ic = 0; ic < cin; ++ic) {
                    acc += w[oc * cin + ic] * in.at(ic, y, x);
                }
                out.at(oc, y, x) = acc;
            }
        }
    }
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) {
        return false;
    }
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i] != b[i]) {
            return false;
        }
    }
    return true;
}

} // namespace

TEST_CASE("conv3x3 forward matches the reference") {
    Rng rng(1);
    const Tensor in = gaussian_sample(rng, {3, 7, 6});
    const Tensor w = gaussian_sample(rng, {4, 3, 3, 3});
    const Tensor b = gaussian_sample(rng, {4});
    Tensor fast, ref;
    conv3x3_forward(in, w, b, fast);
    conv3x3_reference(in, w, b, ref);
    REQUIRE(fast.same_shape(ref));
    for (std::size_t i = 0; i < fast.size(); ++i) {
        CHECK(fast[i] == doctest::Approx(ref[i]).epsilon(1e-12));
    }
}

TEST_CASE("conv1x1 forward matches the reference") {
    Rng rng(2);
    const Tensor in = gaussian_sample(rng, {5, 4, 4});
    const Tensor w = gaussian_sample(rng, {2, 5});
    const Tensor b = gaussian_sample(rng, {2});
    Tensor fast, ref;
    conv1x1_forward(in, w, b, fast);
    conv1x1_reference(in, w, b, ref);
    for (std::size_t i = 0; i < fast.size(); ++i) {
        CHECK(fast[i] == doctest::Approx(ref[i]).epsilon(1e-12));
    }
}

TEST_CASE("conv backward passes agree with finite differences") {
    Rng rng(3);
    Tensor in = gaussian_sample(rng, {2, 5, 5});
    Tensor w = gaussian_sample(rng, {3, 2, 3, 3});
    Tensor b = gaussian_sample(rng, {3});
    const Tensor proj = gaussian_sample(rng, {3, 5, 5}); // random linear functional

    auto objective = [&]() {
        Tensor out;
        conv3x3_forward(in, w, b, out);
        double acc = 0.0;
        for (std::size_t i = 0; i < out.size(); ++i) {
            acc += out[i] * proj[i];
        }
        return acc;
    };

    Tensor d_in = Tensor::zeros(in.shape());
    Tensor dw = Tensor::zeros(w.shape());
    Tensor db = Tensor::zeros(b.shape());
    conv3x3_backward_input(proj, w, d_in);
    conv3x3_backward_params(proj, in, dw, db);

    const double eps = 1e-6;
    auto fd_check = [&](Tensor& param, const Tensor& analytic) {
        for (std::size_t i = 0; i < param.size(); i += 7) { // sample entries
            const double saved = param[i];
            param[i] = saved + eps;
            const double fp = objective();
            param[i] = saved - eps;
            const double fm = objective();
            param[i] = saved;
            CHECK(analytic[i] == doctest::Approx((fp - fm) / (2 * eps)).epsilon(1e-5));
        }
    };
    fd_check(in, d_in);
    fd_check(w, dw);
    fd_check(b, db);
}

TEST_CASE("activation kernels and their derivatives") {
    Rng rng(4);
    const Tensor x = gaussian_sample(rng, {40});
    Tensor t, s;
    isru_forward(x, t);
    softplus_forward(x, s);
    for (std::size_t i = 0; i < x.size(); ++i) {
        CHECK(t[i] == doctest::Approx(x[i] / std::sqrt(1.0 + x[i] * x[i])).epsilon(1e-15));
        CHECK(std::abs(t[i]) < 1.0);
        CHECK(s[i] == doctest::Approx(std::log1p(std::exp(x[i]))).epsilon(1e-12));
        CHECK(s[i] >= 0.0);
    }
    const Tensor ones = Tensor::full({40}, 1.0);
    Tensor dt, ds;
    isru_backward(t, ones, dt);
    softplus_backward(x, ones, ds);
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double d = std::pow(1.0 + x[i] * x[i], -1.5); // d/dx of x(1+x^2)^-1/2
        CHECK(dt[i] == doctest::Approx(d).epsilon(1e-12));
        CHECK(ds[i] == doctest::Approx(1.0 / (1.0 + std::exp(-x[i]))).epsilon(1e-12));
    }
    // softplus stays finite and linear in the tails
    Tensor tails({2}, {800.0, -800.0});
    Tensor out;
    softplus_forward(tails, out);
    CHECK(out[0] == 800.0);
    CHECK(out[1] == 0.0);
}

TEST_CASE("parallel and serial paths are bitwise identical") {
    const Dataset data = generate(preset_three_joint(), 3);

    SUBCASE("batch loss and gradients") {
        Rng rng(10);
        ModelConfig mc;
        Model model = Model::init(AttentionKind::va, mc, rng);
        MixturePrior prior = MixturePrior::init(3, mc.latent_dim, rng);
        Batch batch;
        for (int i = 0; i < 8; ++i) {
            batch.samples.push_back(&data.train[i * 101 % data.train.size()]);
        }
        Rng noise(11);
        const NoisePlan plan = draw_noise_plan(batch.size(), mc.latent_dim, 1, 0.0, noise);

        set_threads(1);
        const LossTerms serial = va_total_loss(model, batch, prior, plan, {1.0, 0.1, 0.1});
        std::vector<Tensor> serial_grads;
        for (auto& p : model.parameters()) {
            serial_grads.push_back(*p.grad);
        }
        set_threads(4);
        const LossTerms parallel = va_total_loss(model, batch, prior, plan, {1.0, 0.1, 0.1});
        CHECK(serial.density == parallel.density);
        CHECK(serial.kl == parallel.kl);
        CHECK(serial.lse == parallel.lse);
        CHECK(serial.det == parallel.det);
        auto params = model.parameters();
        for (std::size_t p = 0; p < params.size(); ++p) {
            CHECK(bitwise_equal(serial_grads[p], *params[p].grad));
        }
        set_threads(0);
    }

    SUBCASE("generation") {
        set_threads(1);
        const Dataset serial = generate(preset_three_joint(), 17);
        set_threads(4);
        const Dataset parallel = generate(preset_three_joint(), 17);
        set_threads(0);
        REQUIRE(serial.train.size() == parallel.train.size());
        for (std::size_t i = 0; i < serial.train.size(); ++i) {
            CHECK(bitwise_equal(serial.train[i].input, parallel.train[i].input));
        }
    }

    SUBCASE("clustering") {
        std::vector<Tensor> points;
        Rng rng(12);
        for (int i = 0; i < 300; ++i) {
            Tensor p = gaussian_sample(rng, {8});
            p[0] += (i % 2) * 8.0;
            points.push_back(std::move(p));
        }
        set_threads(1);
        Rng f1(13);
        const ClusterModel serial = fit_gmm(points, 2, f1);
        set_threads(4);
        Rng f2(13);
        const ClusterModel parallel = fit_gmm(points, 2, f2);
        set_threads(0);
        CHECK(serial.loglik_trace == parallel.loglik_trace);
        for (int c = 0; c < 2; ++c) {
            CHECK(bitwise_equal(serial.means[c], parallel.means[c]));
        }
    }

    SUBCASE("silhouette and eval") {
        std::vector<Tensor> pts;
        std::vector<int> labels;
        Rng rng(14);
        for (int i = 0; i < 150; ++i) {
            pts.push_back(gaussian_sample(rng, {6}));
            labels.push_back(i % 3);
        }
        set_threads(1);
        const double s1 = silhouette(pts, labels);
        set_threads(4);
        const double s2 = silhouette(pts, labels);
        CHECK(s1 == s2);

        Rng mrng(15);
        const Model model = Model::init(AttentionKind::none, ModelConfig{}, mrng);
        set_threads(1);
        const auto c1 = predict_counts(model, data.test);
        set_threads(4);
        const auto c2 = predict_counts(model, data.test);
        set_threads(0);
        CHECK(c1 == c2);
    }
}
