#include "vattn/intrinsic.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "vattn/errors.hpp"
#include "vattn/parallel.hpp"

namespace vattn {

std::string to_string(ClusterBackend b) {
    return b == ClusterBackend::gmm ? "gmm" : "kmeans";
}

ClusterBackend cluster_backend_from_string(const std::string& s) {
    if (s == "gmm") {
        return ClusterBackend::gmm;
    }
    if (s == "kmeans") {
        return ClusterBackend::kmeans;
    }
    throw std::invalid_argument("unknown clustering backend: " + s);
}

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

void validate_points(const std::vector<Tensor>& points, int components) {
    if (components < 1) {
        throw std::invalid_argument("fit_gmm: need components >= 1");
    }
    if (static_cast<int>(points.size()) < components) {
        throw std::invalid_argument("fit_gmm: fewer points than components");
    }
    const std::size_t d = points[0].size();
    for (const auto& p : points) {
        if (p.size() != d) {
            throw std::invalid_argument("fit_gmm: inconsistent point dimensions");
        }
    }
    bool all_same = true;
    for (const auto& p : points) {
        for (std::size_t j = 0; j < d; ++j) {
            if (p[j] != points[0][j]) {
                all_same = false;
                break;
            }
        }
        if (!all_same) {
            break;
        }
    }
    if (all_same) {
        throw DegenerateDataError("fit_gmm: all points identical");
    }
}

std::vector<std::size_t> pick_distinct(std::size_t n, int k, Rng& rng) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) {
        idx[i] = i;
    }
    for (int i = 0; i < k; ++i) {
        const std::size_t j = i + rng.uniform_int(n - i);
        std::swap(idx[i], idx[j]);
    }
    idx.resize(k);
    return idx;
}

double log_gauss_diag(const Tensor& x, const Tensor& mu, const Tensor& var) {
    double acc = 0.0;
    for (std::size_t j = 0; j < x.size(); ++j) {
        const double diff = x[j] - mu[j];
        acc += std::log(var[j]) + diff * diff / var[j] + kLog2Pi;
    }
    return -0.5 * acc;
}

ClusterModel em_restart(const std::vector<Tensor>& points, int k, Rng rng,
                        const ClusterConfig& cfg, const Tensor& global_var) {
    const std::size_t n = points.size();
    const std::size_t d = points[0].size();

    ClusterModel m;
    m.backend = ClusterBackend::gmm;
    const auto seeds = pick_distinct(n, k, rng);
    for (int c = 0; c < k; ++c) {
        m.means.push_back(points[seeds[c]]);
        Tensor v = global_var;
        for (std::size_t j = 0; j < d; ++j) {
            v[j] = std::max(v[j], cfg.var_floor);
        }
        m.vars.push_back(v);
        m.weights.push_back(1.0 / k);
    }

    std::vector<double> resp(n * k);
    std::vector<double> point_ll(n);
    double prev_ll = -std::numeric_limits<double>::infinity();
    for (int iter = 0; iter < cfg.max_iters; ++iter) {
        // E-step: per-point responsibilities (independent writes)
        parallel_for(n, [&](std::size_t i) {
            double* r = resp.data() + i * k;
            double best = -std::numeric_limits<double>::infinity();
            for (int c = 0; c < k; ++c) {
                r[c] = std::log(m.weights[c]) + log_gauss_diag(points[i], m.means[c], m.vars[c]);
                best = std::max(best, r[c]);
            }
            double total = 0.0;
            for (int c = 0; c < k; ++c) {
                total += std::exp(r[c] - best);
            }
            point_ll[i] = best + std::log(total);
            const double inv = 1.0 / total;
            for (int c = 0; c < k; ++c) {
                r[c] = std::exp(r[c] - best) * inv;
            }
        });
        double ll = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            ll += point_ll[i];
        }
        m.loglik_trace.push_back(ll);
        m.iterations = iter + 1;
        if (iter > 0) {
            const double rel = std::abs(ll - prev_ll) / (std::abs(prev_ll) + 1e-12);
            if (rel < cfg.tol) {
                break;
            }
        }
        prev_ll = ll;

        // M-step
        for (int c = 0; c < k; ++c) {
            double nk = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                nk += resp[i * k + c];
            }
            if (nk < 1e-12) {
                m.weights[c] = 1e-12;
                continue;
            }
            Tensor mu = Tensor::zeros({d});
            for (std::size_t i = 0; i < n; ++i) {
                const double r = resp[i * k + c];
                for (std::size_t j = 0; j < d; ++j) {
                    mu[j] += r * points[i][j];
                }
            }
            for (std::size_t j = 0; j < d; ++j) {
                mu[j] /= nk;
            }
            Tensor var = Tensor::zeros({d});
            for (std::size_t i = 0; i < n; ++i) {
                const double r = resp[i * k + c];
                for (std::size_t j = 0; j < d; ++j) {
                    const double diff = points[i][j] - mu[j];
                    var[j] += r * diff * diff;
                }
            }
            for (std::size_t j = 0; j < d; ++j) {
                var[j] = std::max(var[j] / nk, cfg.var_floor);
            }
            m.means[c] = mu;
            m.vars[c] = var;
            m.weights[c] = nk / static_cast<double>(n);
        }
        double wsum = 0.0;
        for (double w : m.weights) {
            wsum += w;
        }
        for (double& w : m.weights) {
            w /= wsum;
        }
    }
    return m;
}

ClusterModel kmeans_restart(const std::vector<Tensor>& points, int k, Rng rng,
                            const ClusterConfig& cfg, const Tensor& global_var) {
    const std::size_t n = points.size();
    const std::size_t d = points[0].size();

    std::vector<Tensor> centers;
    const auto seeds = pick_distinct(n, k, rng);
    for (int c = 0; c < k; ++c) {
        centers.push_back(points[seeds[c]]);
    }

    std::vector<int> assign(n, -1);
    ClusterModel m;
    m.backend = ClusterBackend::kmeans;
    double prev_inertia = std::numeric_limits<double>::infinity();
    for (int iter = 0; iter < cfg.max_iters; ++iter) {
        std::vector<double> dist(n);
        std::vector<int> next(n);
        parallel_for(n, [&](std::size_t i) {
            double best = std::numeric_limits<double>::infinity();
            int bi = 0;
            for (int c = 0; c < k; ++c) {
                double acc = 0.0;
                for (std::size_t j = 0; j < d; ++j) {
                    const double diff = points[i][j] - centers[c][j];
                    acc += diff * diff;
                }
                if (acc < best) {
                    best = acc;
                    bi = c;
                }
            }
            dist[i] = best;
            next[i] = bi;
        });
        double inertia = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            inertia += dist[i];
        }
        m.loglik_trace.push_back(-inertia);
        m.iterations = iter + 1;
        const bool unchanged = next == assign;
        assign = next;
        if (unchanged ||
            std::abs(inertia - prev_inertia) / (std::abs(prev_inertia) + 1e-12) < cfg.tol) {
            break;
        }
        prev_inertia = inertia;

        for (int c = 0; c < k; ++c) {
            Tensor mu = Tensor::zeros({d});
            std::size_t count = 0;
            for (std::size_t i = 0; i < n; ++i) {
                if (assign[i] == c) {
                    for (std::size_t j = 0; j < d; ++j) {
                        mu[j] += points[i][j];
                    }
                    ++count;
                }
            }
            if (count > 0) {
                for (std::size_t j = 0; j < d; ++j) {
                    mu[j] /= static_cast<double>(count);
                }
                centers[c] = mu;
            } // empty clusters keep their previous centroid
        }
    }

    m.means = centers;
    for (int c = 0; c < k; ++c) {
        Tensor var = global_var;
        std::size_t count = 0;
        Tensor acc = Tensor::zeros({d});
        for (std::size_t i = 0; i < n; ++i) {
            if (assign[i] == c) {
                for (std::size_t j = 0; j < d; ++j) {
                    const double diff = points[i][j] - centers[c][j];
                    acc[j] += diff * diff;
                }
                ++count;
            }
        }
        if (count > 0) {
            for (std::size_t j = 0; j < d; ++j) {
                var[j] = std::max(acc[j] / static_cast<double>(count), cfg.var_floor);
            }
        }
        m.vars.push_back(var);
        m.weights.push_back(std::max(static_cast<double>(count) / static_cast<double>(n), 1e-12));
    }
    double wsum = 0.0;
    for (double w : m.weights) {
        wsum += w;
    }
    for (double& w : m.weights) {
        w /= wsum;
    }
    return m;
}

} // namespace

ClusterModel fit_gmm(const std::vector<Tensor>& points, int components, Rng& rng,
                     const ClusterConfig& config) {
    validate_points(points, components);
    const std::size_t n = points.size();
    const std::size_t d = points[0].size();

    Tensor mean = Tensor::zeros({d});
    for (const auto& p : points) {
        for (std::size_t j = 0; j < d; ++j) {
            mean[j] += p[j];
        }
    }
    for (std::size_t j = 0; j < d; ++j) {
        mean[j] /= static_cast<double>(n);
    }
    Tensor global_var = Tensor::zeros({d});
    for (const auto& p : points) {
        for (std::size_t j = 0; j < d; ++j) {
            const double diff = p[j] - mean[j];
            global_var[j] += diff * diff;
        }
    }
    for (std::size_t j = 0; j < d; ++j) {
        global_var[j] = std::max(global_var[j] / static_cast<double>(n), config.var_floor);
    }

    // restart seeds are drawn up front so restarts are order-independent
    std::vector<Rng> streams;
    streams.reserve(config.n_init);
    for (int r = 0; r < config.n_init; ++r) {
        streams.push_back(rng.spawn(static_cast<std::uint64_t>(r)));
    }

    std::vector<ClusterModel> results(config.n_init);
    parallel_for(static_cast<std::size_t>(config.n_init), [&](std::size_t r) {
        results[r] = config.backend == ClusterBackend::gmm
                         ? em_restart(points, components, streams[r], config, global_var)
                         : kmeans_restart(points, components, streams[r], config, global_var);
    });

    std::size_t best = 0;
    for (std::size_t r = 1; r < results.size(); ++r) {
        if (results[r].loglik_trace.back() > results[best].loglik_trace.back()) {
            best = r;
        }
    }
    return results[best];
}

std::vector<int> assign_cl_labels(const ClusterModel& model, const std::vector<Tensor>& points) {
    const int k = model.components();
    std::vector<int> labels(points.size());
    parallel_for(points.size(), [&](std::size_t i) {
        double best = -std::numeric_limits<double>::infinity();
        int bi = 0;
        for (int c = 0; c < k; ++c) {
            double score;
            if (model.backend == ClusterBackend::gmm) {
                score = std::log(model.weights[c]) +
                        log_gauss_diag(points[i], model.means[c], model.vars[c]);
            } else {
                double acc = 0.0;
                for (std::size_t j = 0; j < points[i].size(); ++j) {
                    const double diff = points[i][j] - model.means[c][j];
                    acc += diff * diff;
                }
                score = -acc;
            }
            if (score > best) {
                best = score;
                bi = c;
            }
        }
        labels[i] = bi;
    });
    return labels;
}

void SubGaussianPrior::zero_grads() {
    for (auto& t : d_sub_mean) {
        t.fill(0.0);
    }
    for (auto& t : d_log_var) {
        t.fill(0.0);
    }
}

SubGaussianPrior SubGaussianPrior::init(int cbar, int k, std::size_t dim, Rng& rng) {
    if (cbar < 1 || k < 1 || dim == 0) {
        throw std::invalid_argument("SubGaussianPrior: need cbar, k >= 1 and dim >= 1");
    }
    SubGaussianPrior p;
    p.cbar = cbar;
    p.k = k;
    p.dim = dim;
    for (int c = 0; c < cbar; ++c) {
        for (int i = 0; i < k; ++i) {
            p.sub_mean.push_back(draw_unit_center(dim, rng));
            p.d_sub_mean.push_back(Tensor::zeros({dim}));
        }
        p.log_var.push_back(Tensor::zeros({dim}));
        p.d_log_var.push_back(Tensor::zeros({dim}));
    }
    return p;
}

std::vector<std::uint8_t> draw_keep_mask(int k, double drop_rate, Rng& rng) {
    std::vector<std::uint8_t> mask(k);
    for (int i = 0; i < k; ++i) {
        mask[i] = rng.uniform() >= drop_rate ? 1 : 0;
    }
    return mask;
}

SgcSelection sgc_select_masked(const SubGaussianPrior& prior, int cluster, const Tensor& u_phi,
                               const std::vector<std::uint8_t>& keep_mask) {
    if (cluster < 0 || cluster >= prior.cbar) {
        throw std::invalid_argument("sgc_select: cluster label out of range");
    }
    const double scale = 1.0 / (1.0 - prior.drop_rate);
    SgcSelection sel;
    double best = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < prior.k; ++i) {
        const double raw = dot(prior.center(cluster, i), u_phi);
        const double s = keep_mask[i] ? raw * scale : 0.0;
        if (s > best) {
            best = s;
            sel.index = i;
            sel.score = s;
        }
    }
    return sel;
}

SgcSelection sgc_select(const SubGaussianPrior& prior, int cluster, const Tensor& u_phi,
                        Rng& rng, Mode mode) {
    if (cluster < 0 || cluster >= prior.cbar) {
        throw std::invalid_argument("sgc_select: cluster label out of range");
    }
    if (mode == Mode::train && prior.k > 1) {
        return sgc_select_masked(prior, cluster, u_phi, draw_keep_mask(prior.k, prior.drop_rate, rng));
    }
    // eval (and the k == 1 degenerate case, which consumes no rng)
    SgcSelection sel;
    double best = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < prior.k; ++i) {
        const double s = dot(prior.center(cluster, i), u_phi);
        if (s > best) {
            best = s;
            sel.index = i;
            sel.score = s;
        }
    }
    return sel;
}

std::vector<Tensor> collect_gates(const Model& model, const std::vector<DomainSample>& samples) {
    if (model.attention != AttentionKind::va || !model.va) {
        throw std::invalid_argument("collect_gates: model has no VA head");
    }
    std::vector<Tensor> gates(samples.size());
    parallel_for(samples.size(), [&](std::size_t i) {
        ForwardCache cache;
        model_forward(model, samples[i].input, Mode::eval, nullptr, cache);
        gates[i] = cache.va.y;
    });
    return gates;
}

std::vector<std::size_t> relabel_dataset(const Model& stage1, std::vector<DomainSample>& samples,
                                         int kbar, Rng& rng, const ClusterConfig& config) {
    if (samples.empty()) {
        throw std::invalid_argument("relabel_dataset: no samples");
    }
    const auto gates = collect_gates(stage1, samples);
    const ClusterModel model = fit_gmm(gates, kbar, rng, config);
    const auto labels = assign_cl_labels(model, gates);
    std::vector<std::size_t> histogram(kbar, 0);
    for (std::size_t i = 0; i < samples.size(); ++i) {
        samples[i].cl_label = labels[i];
        ++histogram[labels[i]];
    }
    return histogram;
}

} // namespace vattn
