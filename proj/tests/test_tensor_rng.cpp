#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <stdexcept>

#include "vattn/errors.hpp"
#include "vattn/gradcheck.hpp"
#include "vattn/rng.hpp"
#include "vattn/tensor.hpp"

using namespace vattn;

TEST_CASE("gaussian_sample is deterministic per seed") {
    Rng a(42), b(42);
    const Tensor x = gaussian_sample(a, {4});
    const Tensor y = gaussian_sample(b, {4});
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(x[i] == y[i]);
    }
    // and the stream advances
    const Tensor z = gaussian_sample(a, {4});
    bool all_equal = true;
    for (std::size_t i = 0; i < 4; ++i) {
        all_equal = all_equal && x[i] == z[i];
    }
    CHECK_FALSE(all_equal);
}

TEST_CASE("gaussian_sample moments at n=100000") {
    Rng rng(1234);
    const Tensor x = gaussian_sample(rng, {100000});
    double m = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        m += x[i];
    }
    m /= static_cast<double>(x.size());
    double v = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        v += (x[i] - m) * (x[i] - m);
    }
    v /= static_cast<double>(x.size());
    CHECK(m > -0.02);
    CHECK(m < 0.02);
    CHECK(v > 0.97);
    CHECK(v < 1.03);
}

TEST_CASE("gaussian_sample rejects empty shapes") {
    Rng rng(1);
    CHECK_THROWS_AS(gaussian_sample(rng, {}), std::invalid_argument);
    CHECK_THROWS_AS(gaussian_sample(rng, {0}), std::invalid_argument);
    CHECK_THROWS_AS(gaussian_sample(rng, {4, 0}), std::invalid_argument);
}

TEST_CASE("rng state round-trips") {
    Rng a(99);
    for (int i = 0; i < 7; ++i) {
        a.normal(); // odd count leaves a cached Box-Muller value
    }
    const auto st = a.state();
    Rng b(0);
    b.set_state(st);
    for (int i = 0; i < 100; ++i) {
        CHECK(a.normal() == b.normal());
        CHECK(a.next_u64() == b.next_u64());
    }
}

TEST_CASE("uniform_int covers its range uniformly") {
    Rng rng(5);
    std::vector<int> counts(3, 0);
    const int n = 30000;
    for (int i = 0; i < n; ++i) {
        ++counts[rng.uniform_int(3)];
    }
    for (int c : counts) {
        CHECK(std::abs(c / static_cast<double>(n) - 1.0 / 3) < 0.02);
    }
}

TEST_CASE("elementwise primitives") {
    const Tensor a({2, 2}, {1.0, 2.0, 3.0, 4.0});
    const Tensor b({2, 2}, {5.0, 6.0, 7.0, 8.0});
    const Tensor s = add(a, b);
    CHECK(s[0] == 6.0);
    CHECK(s[3] == 12.0);
    const Tensor d = sub(b, a);
    CHECK(d[2] == 4.0);
    const Tensor m = mul(a, b);
    CHECK(m[1] == 12.0);
    CHECK(sum(a) == 10.0);
    CHECK(mean(a) == 2.5);
    CHECK_THROWS_AS(add(a, Tensor({3}, {1, 2, 3})), std::invalid_argument);
    CHECK(sigmoid(Tensor({1}, {0.0}))[0] == 0.5);
    CHECK(vattn::exp(Tensor({1}, {0.0}))[0] == 1.0);
    CHECK(vattn::log(Tensor({1}, {1.0}))[0] == 0.0);
}

TEST_CASE("matvec") {
    const Tensor m({2, 3}, {1, 2, 3, 4, 5, 6});
    const Tensor v({3}, {1, 0, -1});
    const Tensor r = matvec(m, v);
    CHECK(r[0] == -2.0);
    CHECK(r[1] == -2.0);
    CHECK_THROWS_AS(matvec(m, Tensor({2}, {1, 2})), std::invalid_argument);
}

TEST_CASE("channelwise_product gates channels") {
    Rng rng(7);
    const Tensor x = gaussian_sample(rng, {3, 4, 5});
    SUBCASE("ones gate is the identity") {
        const Tensor y = Tensor::full({3}, 1.0);
        const Tensor out = channelwise_product(x, y);
        for (std::size_t i = 0; i < x.size(); ++i) {
            CHECK(out[i] == x[i]);
        }
    }
    SUBCASE("zeros gate zeroes everything") {
        const Tensor out = channelwise_product(x, Tensor::zeros({3}));
        for (std::size_t i = 0; i < out.size(); ++i) {
            CHECK(out[i] == 0.0);
        }
    }
    SUBCASE("elementwise definition") {
        Rng r2(8);
        const Tensor y = gaussian_sample(r2, {3});
        const Tensor out = channelwise_product(x, y);
        for (std::size_t c = 0; c < 3; ++c) {
            for (std::size_t h = 0; h < 4; ++h) {
                for (std::size_t w = 0; w < 5; ++w) {
                    CHECK(out.at(c, h, w) == x.at(c, h, w) * y[c]);
                }
            }
        }
    }
    SUBCASE("bilinear in x and y") {
        Rng r2(9);
        const Tensor y1 = gaussian_sample(r2, {3});
        const Tensor y2 = gaussian_sample(r2, {3});
        const Tensor lhs = channelwise_product(x, add(y1, y2));
        const Tensor rhs = add(channelwise_product(x, y1), channelwise_product(x, y2));
        for (std::size_t i = 0; i < lhs.size(); ++i) {
            CHECK(lhs[i] == doctest::Approx(rhs[i]).epsilon(1e-12));
        }
    }
    SUBCASE("shape mismatch") {
        CHECK_THROWS_AS(channelwise_product(x, Tensor::zeros({4})), std::invalid_argument);
    }
}

TEST_CASE("global_avg_pool") {
    Tensor x({2, 2, 2}, {1, 2, 3, 4, 10, 10, 10, 10});
    const Tensor p = global_avg_pool(x);
    CHECK(p[0] == 2.5);
    CHECK(p[1] == 10.0);
}

TEST_CASE("grad_check on a quadratic") {
    double w = 3.0;
    double grad = 6.0; // d(w^2)/dw
    std::vector<ParamView> params = {{"w", &w, &grad, 1}};
    const double err = grad_check([&] { return w * w; }, params, 1e-5);
    CHECK(err < 1e-9);
}

TEST_CASE("grad_check flags non-finite objectives") {
    double w = 0.0;
    double grad = 1.0;
    std::vector<ParamView> params = {{"w", &w, &grad, 1}};
    CHECK_THROWS_AS(grad_check([&] { return std::log(w); }, params, 1e-5), NumericalError);
}
