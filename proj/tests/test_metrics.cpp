#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "vattn/metrics.hpp"
#include "vattn/report.hpp"
#include "vattn/synth.hpp"

using namespace vattn;

TEST_CASE("mae_mse examples") {
    const auto perfect = mae_mse({1.0, 2.0, 3.0}, {1.0, 2.0, 3.0});
    CHECK(perfect.first == 0.0);
    CHECK(perfect.second == 0.0);
    const auto two = mae_mse({2.0, -4.0}, {0.0, 0.0});
    CHECK(two.first == 3.0);
    CHECK(two.second == doctest::Approx(std::sqrt(10.0)).epsilon(1e-12));
    CHECK(two.second == doctest::Approx(3.16228).epsilon(1e-5));
    CHECK_THROWS_AS(mae_mse({}, {}), std::invalid_argument);
    CHECK_THROWS_AS(mae_mse({1.0}, {1.0, 2.0}), std::invalid_argument);
}

TEST_CASE("MAE <= MSE always") {
    Rng rng(1);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 1 + rng.uniform_int(20);
        std::vector<double> pred(n), gt(n);
        for (std::size_t i = 0; i < n; ++i) {
            pred[i] = rng.normal() * 10.0;
            gt[i] = rng.normal() * 10.0;
        }
        const auto [mae, mse] = mae_mse(pred, gt);
        CHECK(mae <= mse + 1e-12);
    }
}

TEST_CASE("predicted_count") {
    CHECK(predicted_count(Tensor::zeros({1, 4, 4})) == 0.0);
    DomainSpec spec{"seven", 7, 7, 1.0, 1.0, Background::none, 0.0, 3, 1, 16, 16};
    const Dataset ds = generate({spec}, 3);
    for (const auto& s : ds.train) {
        CHECK(std::abs(predicted_count(s.density) - 7.0) < 1e-6);
        // linearity
        Tensor scaled = s.density;
        for (std::size_t i = 0; i < scaled.size(); ++i) {
            scaled[i] *= 2.5;
        }
        CHECK(predicted_count(scaled) ==
              doctest::Approx(2.5 * predicted_count(s.density)).epsilon(1e-12));
    }
}

namespace {

// independent brute-force silhouette oracle
double silhouette_oracle(const std::vector<Tensor>& pts, const std::vector<int>& labels) {
    const std::size_t n = pts.size();
    auto dist = [&](std::size_t i, std::size_t j) {
        double acc = 0.0;
        for (std::size_t d = 0; d < pts[i].size(); ++d) {
            acc += (pts[i][d] - pts[j][d]) * (pts[i][d] - pts[j][d]);
        }
        return std::sqrt(acc);
    };
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t own = 0;
        for (std::size_t j = 0; j < n; ++j) {
            if (labels[j] == labels[i]) {
                ++own;
            }
        }
        if (own <= 1) {
            continue; // contributes 0
        }
        double a = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            if (j != i && labels[j] == labels[i]) {
                a += dist(i, j);
            }
        }
        a /= own - 1;
        double b = 1e300;
        for (int l = 0; l < 8; ++l) {
            if (l == labels[i]) {
                continue;
            }
            double s = 0.0;
            std::size_t cnt = 0;
            for (std::size_t j = 0; j < n; ++j) {
                if (labels[j] == l) {
                    s += dist(i, j);
                    ++cnt;
                }
            }
            if (cnt > 0) {
                b = std::min(b, s / cnt);
            }
        }
        if (std::max(a, b) > 0) {
            total += (b - a) / std::max(a, b);
        }
    }
    return total / n;
}

} // namespace

TEST_CASE("silhouette of two far tight blobs, against the brute-force oracle") {
    std::vector<Tensor> pts = {
        Tensor({2}, {0.0, 0.0}),  Tensor({2}, {0.1, 0.0}),  Tensor({2}, {0.0, 0.1}),
        Tensor({2}, {10.0, 0.0}), Tensor({2}, {10.1, 0.0}), Tensor({2}, {10.0, 0.1}),
    };
    std::vector<int> labels = {0, 0, 0, 1, 1, 1};
    const double s = silhouette(pts, labels);
    CHECK(s > 0.9);
    CHECK(s == doctest::Approx(silhouette_oracle(pts, labels)).epsilon(1e-12));
}

TEST_CASE("silhouette of random labels on one blob is near zero") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Rng rng(seed + 100);
        std::vector<Tensor> pts;
        std::vector<int> labels;
        for (int i = 0; i < 120; ++i) {
            pts.push_back(gaussian_sample(rng, {3}));
            labels.push_back(static_cast<int>(rng.uniform_int(2)));
        }
        CHECK(std::abs(silhouette(pts, labels)) < 0.1);
    }
}

TEST_CASE("silhouette of coincident clusters is <= 0") {
    const Tensor a({1}, {1.0});
    std::vector<Tensor> pts = {a, a, a, a};
    std::vector<int> labels = {0, 0, 1, 1};
    CHECK(silhouette(pts, labels) <= 0.0);
}

TEST_CASE("silhouette needs two clusters") {
    std::vector<Tensor> pts = {Tensor({1}, {0.0}), Tensor({1}, {1.0})};
    CHECK_THROWS_AS(silhouette(pts, {0, 0}), std::invalid_argument);
}

TEST_CASE("silhouette with singleton clusters contributes zero for them") {
    std::vector<Tensor> pts = {Tensor({1}, {0.0}), Tensor({1}, {0.2}), Tensor({1}, {9.0})};
    std::vector<int> labels = {0, 0, 1};
    const double s = silhouette(pts, labels);
    CHECK(s == doctest::Approx(silhouette_oracle(pts, labels)).epsilon(1e-12));
}

TEST_CASE("adjusted rand index") {
    CHECK(adjusted_rand_index({0, 0, 1, 1}, {1, 1, 0, 0}) == 1.0); // permutation invariant
    CHECK(adjusted_rand_index({0, 0, 1, 1}, {0, 0, 1, 1}) == 1.0);
    CHECK(adjusted_rand_index({0, 0, 1, 1}, {0, 1, 0, 1}) < 0.5);
    Rng rng(5);
    std::vector<int> a, b;
    for (int i = 0; i < 2000; ++i) {
        a.push_back(static_cast<int>(rng.uniform_int(3)));
        b.push_back(static_cast<int>(rng.uniform_int(3)));
    }
    CHECK(std::abs(adjusted_rand_index(a, b)) < 0.05); // independent labelings
    CHECK_THROWS_AS(adjusted_rand_index({}, {}), std::invalid_argument);
}

TEST_CASE("subdomain report cosine matrices and counts") {
    Rng rng(6);
    SubGaussianPrior prior = SubGaussianPrior::init(2, 2, 3, rng);
    SUBCASE("identical sub-centers give similarity 1") {
        prior.sub_mean[1] = prior.sub_mean[0];
        const auto rep = subdomain_report(prior, {{0, 0}, {0, 1}, {1, 0}});
        CHECK(rep.cosine[0][0][1] == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(rep.counts[0][0] == 1);
        CHECK(rep.counts[0][1] == 1);
        CHECK(rep.counts[1][0] == 1);
        CHECK(rep.counts[1][1] == 0);
        CHECK_FALSE(rep.all_occupied());
    }
    SUBCASE("orthogonal sub-centers give similarity 0") {
        prior.sub_mean[0] = Tensor({3}, {1.0, 0.0, 0.0});
        prior.sub_mean[1] = Tensor({3}, {0.0, 1.0, 0.0});
        const auto rep = subdomain_report(prior, {});
        CHECK(rep.cosine[0][0][1] == doctest::Approx(0.0).epsilon(1e-12));
        CHECK(rep.cosine[0][1][0] == doctest::Approx(0.0).epsilon(1e-12));
        CHECK(rep.cosine[0][0][0] == doctest::Approx(1.0).epsilon(1e-12));
    }
    SUBCASE("cosines live in [-1, 1]") {
        const auto rep = subdomain_report(prior, {});
        for (const auto& mat : rep.cosine) {
            for (const auto& row : mat) {
                for (double v : row) {
                    CHECK(v >= -1.0 - 1e-12);
                    CHECK(v <= 1.0 + 1e-12);
                }
            }
        }
    }
}

TEST_CASE("report JSON round-trips") {
    RunReport r;
    r.mode = "va";
    r.config_json = TrainConfig().to_json();
    r.seed = 7;
    r.wall_clock_sec = 1.5;
    r.timestamp = "2026-01-01T00:00:00Z";
    r.domains = {"A", "B"};
    r.mae = {1.25, 2.5};
    r.mse = {2.0, 3.0};
    r.trace_total = {5.0, 4.0};
    r.trace_density = {4.5, 3.6};
    r.trace_kl = {0.3, 0.25};
    r.trace_lse = {0.15, 0.1};
    r.trace_det = {0.05, 0.05};
    r.has_silhouette = true;
    r.silhouette_by_domain = 0.42;
    const RunReport back = report_from_json(report_to_json(r));
    CHECK(back.mode == "va");
    CHECK(back.mae == r.mae);
    CHECK(back.trace_total == r.trace_total);
    CHECK(back.silhouette_by_domain == 0.42);
    CHECK(back.seed == 7);
}

TEST_CASE("timestamp occupies exactly one line of the report JSON") {
    RunReport r;
    r.mode = "jt";
    r.config_json = TrainConfig().to_json();
    r.timestamp = "2026-01-01T00:00:00Z";
    r.domains = {"A"};
    r.mae = {1.0};
    r.mse = {1.0};
    const std::string a = report_to_json(r);
    r.timestamp = "2030-12-31T23:59:59Z";
    const std::string b = report_to_json(r);
    // the two serialisations differ in exactly one line
    std::vector<std::string> la, lb;
    std::string line;
    for (std::istringstream sa(a); std::getline(sa, line);) {
        la.push_back(line);
    }
    for (std::istringstream sb(b); std::getline(sb, line);) {
        lb.push_back(line);
    }
    REQUIRE(la.size() == lb.size());
    int diff = 0;
    for (std::size_t i = 0; i < la.size(); ++i) {
        if (la[i] != lb[i]) {
            ++diff;
            CHECK(la[i].find("timestamp") != std::string::npos);
        }
    }
    CHECK(diff == 1);
}

TEST_CASE("aggregation matches an independent one-pass oracle") {
    namespace fs = std::filesystem;
    const fs::path base = fs::temp_directory_path() / "vattn_agg_test";
    fs::remove_all(base);
    const std::vector<double> values = {3.0, 4.5, 2.25, 5.0, 3.75};
    std::vector<std::string> dirs;
    for (std::size_t i = 0; i < values.size(); ++i) {
        RunReport r;
        r.mode = "jt";
        r.config_json = TrainConfig().to_json();
        r.timestamp = "t";
        r.seed = i;
        r.domains = {"A"};
        r.mae = {values[i]};
        r.mse = {values[i] * 1.5};
        const std::string dir = (base / ("run" + std::to_string(i))).string();
        write_report_files(dir, r);
        dirs.push_back(dir);
    }
    const auto cells = aggregate_runs(dirs);
    REQUIRE(cells.size() == 1);

    // Welford one-pass oracle
    double mean = 0.0, m2 = 0.0;
    std::size_t n = 0;
    for (double v : values) {
        ++n;
        const double delta = v - mean;
        mean += delta / n;
        m2 += delta * (v - mean);
    }
    const double sd = std::sqrt(m2 / (n - 1));
    CHECK(std::abs(cells[0].mean_mae - mean) < 1e-12);
    CHECK(std::abs(cells[0].std_mae - sd) < 1e-12);

    const std::string table = render_comparison_table(cells);
    CHECK(table.find("jt") != std::string::npos);
    CHECK(table.find("A") != std::string::npos);
    fs::remove_all(base);
}
