#include "vattn/gaussian.hpp"

#include <atomic>
#include <cmath>
#include <stdexcept>

namespace vattn {

namespace {

std::atomic<std::uint64_t> g_clamp_count{0};

inline double clamped_logvar(double lv) {
    if (lv < -30.0) {
        g_clamp_count.fetch_add(1, std::memory_order_relaxed);
        return -30.0;
    }
    if (lv > 30.0) {
        g_clamp_count.fetch_add(1, std::memory_order_relaxed);
        return 30.0;
    }
    return lv;
}

} // namespace

void validate(const GaussianParams& g) {
    if (g.mean.size() == 0 || g.mean.size() != g.log_var.size()) {
        throw std::invalid_argument("GaussianParams: mean/log_var dimension mismatch");
    }
}

void MixturePrior::zero_grads() {
    for (auto& t : d_mean) {
        t.fill(0.0);
    }
    for (auto& t : d_log_var) {
        t.fill(0.0);
    }
}

Tensor draw_unit_center(std::size_t dim, Rng& rng) {
    Tensor u({dim});
    const double scale = 1.0 / std::sqrt(static_cast<double>(dim));
    double norm2 = 0.0;
    for (std::size_t i = 0; i < dim; ++i) {
        u[i] = rng.normal() * scale;
        norm2 += u[i] * u[i];
    }
    const double inv = 1.0 / std::max(std::sqrt(norm2), 1e-12);
    for (std::size_t i = 0; i < dim; ++i) {
        u[i] *= inv;
    }
    return u;
}

MixturePrior MixturePrior::init(int components, std::size_t dim, Rng& rng) {
    if (components < 1 || dim == 0) {
        throw std::invalid_argument("MixturePrior: need components >= 1 and dim >= 1");
    }
    MixturePrior p;
    for (int c = 0; c < components; ++c) {
        p.mean.push_back(draw_unit_center(dim, rng));
        p.log_var.push_back(Tensor::zeros({dim}));
        p.d_mean.push_back(Tensor::zeros({dim}));
        p.d_log_var.push_back(Tensor::zeros({dim}));
    }
    return p;
}

std::uint64_t logvar_clamp_count() {
    return g_clamp_count.load();
}

void reset_logvar_clamp_count() {
    g_clamp_count.store(0);
}

KlResult kl_diag_gaussian(const GaussianParams& q, const GaussianParams& p) {
    validate(q);
    validate(p);
    if (q.dim() != p.dim()) {
        throw std::invalid_argument("kl_diag_gaussian: dimension mismatch");
    }
    const std::size_t d = q.dim();
    KlResult r;
    r.d_q_mean = Tensor::zeros({d});
    r.d_q_log_var = Tensor::zeros({d});
    r.d_p_mean = Tensor::zeros({d});
    r.d_p_log_var = Tensor::zeros({d});

    double acc = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
        const double lvq = q.log_var[i];
        const double lvp = p.log_var[i];
        const double lvq_c = clamped_logvar(lvq);
        const double lvp_c = clamped_logvar(lvp);
        const bool q_in = lvq == lvq_c;
        const bool p_in = lvp == lvp_c;

        const double ratio = std::exp(lvq_c - lvp_c); // sigma_q^2 / sigma_p^2
        const double inv_vp = std::exp(-lvp_c);
        const double dm = p.mean[i] - q.mean[i];

        acc += (lvp - lvq) - 1.0 + ratio + dm * dm * inv_vp;

        r.d_q_mean[i] = -dm * inv_vp;
        r.d_p_mean[i] = dm * inv_vp;
        r.d_q_log_var[i] = 0.5 * (-1.0 + (q_in ? ratio : 0.0));
        r.d_p_log_var[i] =
            0.5 * (1.0 - (p_in ? ratio : 0.0) - (p_in ? dm * dm * inv_vp : 0.0));
    }
    r.value = 0.5 * acc;
    return r;
}

KlResult kl_to_component(const GaussianParams& q, const MixturePrior& prior, int label) {
    if (label < 0 || label >= prior.components()) {
        throw std::invalid_argument("kl_to_component: label out of range");
    }
    return kl_diag_gaussian(q, prior.component(label));
}

Tensor reparameterize(const GaussianParams& q, Rng& rng) {
    validate(q);
    Tensor eps = gaussian_sample(rng, {q.dim()});
    return reparameterize_with(q, eps);
}

Tensor reparameterize_with(const GaussianParams& q, const Tensor& eps) {
    validate(q);
    if (eps.size() != q.dim()) {
        throw std::invalid_argument("reparameterize: eps dimension mismatch");
    }
    Tensor z({q.dim()});
    for (std::size_t i = 0; i < q.dim(); ++i) {
        z[i] = q.mean[i] + std::exp(0.5 * q.log_var[i]) * eps[i];
    }
    return z;
}

LseResult lse_regularizer(const Tensor& z, const std::vector<Tensor>& centers, int label) {
    const int c_count = static_cast<int>(centers.size());
    if (label < 0 || label >= c_count) {
        throw std::invalid_argument("lse_regularizer: label out of range");
    }
    const std::size_t d = z.size();
    for (const auto& u : centers) {
        if (u.size() != d) {
            throw std::invalid_argument("lse_regularizer: center dimension mismatch");
        }
    }

    const double zc = dot(z, centers[label]);
    std::vector<double> s(c_count);
    double s_max = 0.0; // s[label] == 0 is always present
    for (int i = 0; i < c_count; ++i) {
        s[i] = dot(z, centers[i]) - zc;
        if (s[i] > s_max) {
            s_max = s[i];
        }
    }
    double total = 0.0;
    std::vector<double> w(c_count);
    for (int i = 0; i < c_count; ++i) {
        w[i] = std::exp(s[i] - s_max);
        total += w[i];
    }
    LseResult r;
    r.value = s_max + std::log(total);

    // softmax weights over the shifted scores
    for (int i = 0; i < c_count; ++i) {
        w[i] /= total;
    }
    r.d_z = Tensor::zeros({d});
    r.d_centers.assign(c_count, Tensor::zeros({d}));
    for (int i = 0; i < c_count; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
            r.d_z[j] += w[i] * (centers[i][j] - centers[label][j]);
        }
        if (i != label) {
            for (std::size_t j = 0; j < d; ++j) {
                r.d_centers[i][j] = w[i] * z[j];
            }
        }
    }
    for (std::size_t j = 0; j < d; ++j) {
        r.d_centers[label][j] = (w[label] - 1.0) * z[j];
    }
    return r;
}

LogDetResult logdet_regularizer(const GaussianParams& p) {
    validate(p);
    double logdet = 0.0;
    for (std::size_t i = 0; i < p.dim(); ++i) {
        logdet += p.log_var[i];
    }
    LogDetResult r;
    r.value = logdet * logdet;
    r.d_log_var = Tensor::full({p.dim()}, 2.0 * logdet);
    return r;
}

} // namespace vattn
