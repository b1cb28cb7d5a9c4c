#include "vattn/metrics.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "vattn/errors.hpp"
#include "vattn/parallel.hpp"

namespace vattn {

std::pair<double, double> mae_mse(const std::vector<double>& pred,
                                  const std::vector<double>& gt) {
    if (pred.empty() || pred.size() != gt.size()) {
        throw std::invalid_argument("mae_mse: empty or mismatched inputs");
    }
    double abs_acc = 0.0, sq_acc = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double e = pred[i] - gt[i];
        abs_acc += std::abs(e);
        sq_acc += e * e;
    }
    const double n = static_cast<double>(pred.size());
    return {abs_acc / n, std::sqrt(sq_acc / n)};
}

double predicted_count(const Tensor& density) {
    return sum(density);
}

double silhouette(const std::vector<Tensor>& points, const std::vector<int>& labels) {
    if (points.size() != labels.size() || points.size() < 2) {
        throw std::invalid_argument("silhouette: need >= 2 labelled points");
    }
    int max_label = 0;
    for (int l : labels) {
        if (l < 0) {
            throw std::invalid_argument("silhouette: negative label");
        }
        max_label = std::max(max_label, l);
    }
    std::vector<std::size_t> cluster_size(max_label + 1, 0);
    for (int l : labels) {
        ++cluster_size[l];
    }
    int clusters = 0;
    for (std::size_t s : cluster_size) {
        if (s > 0) {
            ++clusters;
        }
    }
    if (clusters < 2) {
        throw std::invalid_argument("silhouette: need >= 2 clusters");
    }

    const std::size_t n = points.size();
    std::vector<double> coeff(n);
    parallel_for(n, [&](std::size_t i) {
        if (cluster_size[labels[i]] <= 1) {
            coeff[i] = 0.0; // singleton clusters contribute 0
            return;
        }
        std::vector<double> sums(max_label + 1, 0.0);
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) {
                continue;
            }
            double acc = 0.0;
            for (std::size_t d = 0; d < points[i].size(); ++d) {
                const double diff = points[i][d] - points[j][d];
                acc += diff * diff;
            }
            sums[labels[j]] += std::sqrt(acc);
        }
        const double a = sums[labels[i]] / static_cast<double>(cluster_size[labels[i]] - 1);
        double b = std::numeric_limits<double>::infinity();
        for (int l = 0; l <= max_label; ++l) {
            if (l == labels[i] || cluster_size[l] == 0) {
                continue;
            }
            b = std::min(b, sums[l] / static_cast<double>(cluster_size[l]));
        }
        const double denom = std::max(a, b);
        coeff[i] = denom > 0.0 ? (b - a) / denom : 0.0;
    });
    double total = 0.0;
    for (double c : coeff) {
        total += c;
    }
    return total / static_cast<double>(n);
}

double adjusted_rand_index(const std::vector<int>& a, const std::vector<int>& b) {
    if (a.size() != b.size() || a.empty()) {
        throw std::invalid_argument("adjusted_rand_index: empty or mismatched labelings");
    }
    int ka = 0, kb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ka = std::max(ka, a[i] + 1);
        kb = std::max(kb, b[i] + 1);
    }
    std::vector<std::size_t> table(static_cast<std::size_t>(ka) * kb, 0);
    std::vector<std::size_t> ra(ka, 0), cb(kb, 0);
    for (std::size_t i = 0; i < a.size(); ++i) {
        ++table[static_cast<std::size_t>(a[i]) * kb + b[i]];
        ++ra[a[i]];
        ++cb[b[i]];
    }
    auto comb2 = [](std::size_t m) {
        return static_cast<double>(m) * (static_cast<double>(m) - 1.0) / 2.0;
    };
    double sum_ij = 0.0;
    for (std::size_t v : table) {
        sum_ij += comb2(v);
    }
    double sum_a = 0.0, sum_b = 0.0;
    for (std::size_t v : ra) {
        sum_a += comb2(v);
    }
    for (std::size_t v : cb) {
        sum_b += comb2(v);
    }
    const double total = comb2(a.size());
    const double expected = sum_a * sum_b / total;
    const double max_index = 0.5 * (sum_a + sum_b);
    const double denom = max_index - expected;
    if (denom == 0.0) {
        return 1.0; // both labelings fully agree up to permutation
    }
    return (sum_ij - expected) / denom;
}

double SubdomainReport::mean_offdiag_cosine() const {
    double acc = 0.0;
    std::size_t n = 0;
    for (const auto& mat : cosine) {
        for (std::size_t i = 0; i < mat.size(); ++i) {
            for (std::size_t j = 0; j < mat.size(); ++j) {
                if (i != j) {
                    acc += mat[i][j];
                    ++n;
                }
            }
        }
    }
    return n > 0 ? acc / static_cast<double>(n) : 0.0;
}

bool SubdomainReport::all_occupied() const {
    for (const auto& row : counts) {
        for (std::size_t c : row) {
            if (c == 0) {
                return false;
            }
        }
    }
    return true;
}

SubdomainReport subdomain_report(const SubGaussianPrior& prior,
                                 const std::vector<std::pair<int, int>>& selections) {
    SubdomainReport rep;
    rep.cosine.resize(prior.cbar);
    rep.counts.assign(prior.cbar, std::vector<std::size_t>(prior.k, 0));
    for (int c = 0; c < prior.cbar; ++c) {
        auto& mat = rep.cosine[c];
        mat.assign(prior.k, std::vector<double>(prior.k, 0.0));
        for (int i = 0; i < prior.k; ++i) {
            for (int j = 0; j < prior.k; ++j) {
                const Tensor& u = prior.center(c, i);
                const Tensor& v = prior.center(c, j);
                const double nu = std::sqrt(dot(u, u));
                const double nv = std::sqrt(dot(v, v));
                mat[i][j] = dot(u, v) / std::max(nu * nv, 1e-300);
            }
        }
    }
    for (const auto& [c, i] : selections) {
        if (c < 0 || c >= prior.cbar || i < 0 || i >= prior.k) {
            throw std::invalid_argument("subdomain_report: selection out of range");
        }
        ++rep.counts[c][i];
    }
    return rep;
}

std::vector<std::pair<int, int>> collect_selections(const Model& model,
                                                    const SubGaussianPrior& prior,
                                                    const std::vector<DomainSample>& samples) {
    std::vector<std::pair<int, int>> selections(samples.size());
    parallel_for(samples.size(), [&](std::size_t i) {
        if (samples[i].cl_label < 0) {
            selections[i] = {-1, -1};
            return;
        }
        ForwardCache cache;
        model_forward(model, samples[i].input, Mode::eval, nullptr, cache);
        Rng local; // eval-mode selection consumes no rng
        const auto sel =
            sgc_select(prior, samples[i].cl_label, cache.va.q.mean, local, Mode::eval);
        selections[i] = {samples[i].cl_label, sel.index};
    });
    for (const auto& s : selections) {
        if (s.first < 0) {
            throw InvalidStateError("collect_selections: sample without CL label");
        }
    }
    return selections;
}

} // namespace vattn
