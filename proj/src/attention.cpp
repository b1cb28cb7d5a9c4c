#include "vattn/attention.hpp"

#include "vattn/kernels.hpp"

#include <cmath>
#include <stdexcept>

namespace vattn {

void Affine::zero_grads() {
    dw.fill(0.0);
    db.fill(0.0);
}

Affine Affine::init(std::size_t out, std::size_t in, Rng& rng) {
    Affine a;
    a.w = Tensor({out, in});
    const double scale = 1.0 / std::sqrt(static_cast<double>(in));
    for (std::size_t i = 0; i < a.w.size(); ++i) {
        a.w[i] = rng.normal() * scale;
    }
    a.b = Tensor::zeros({out});
    a.dw = Tensor::zeros({out, in});
    a.db = Tensor::zeros({out});
    return a;
}

Tensor affine_forward(const Affine& a, const Tensor& in) {
    Tensor out = matvec(a.w, in);
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] += a.b[i];
    }
    return out;
}

Tensor affine_backward(Affine& a, const Tensor& in, const Tensor& d_out) {
    const std::size_t rows = a.out(), cols = a.in();
    Tensor d_in = Tensor::zeros({cols});
    for (std::size_t r = 0; r < rows; ++r) {
        const double g = d_out[r];
        a.db[r] += g;
        double* dwr = a.dw.data() + r * cols;
        const double* wr = a.w.data() + r * cols;
        for (std::size_t c = 0; c < cols; ++c) {
            dwr[c] += g * in[c];
            d_in[c] += g * wr[c];
        }
    }
    return d_in;
}

void VaHead::zero_grads() {
    to_mean.zero_grads();
    to_log_var.zero_grads();
    to_gate.zero_grads();
}

VaHead VaHead::init(std::size_t c_feat, std::size_t latent_dim, Rng& rng) {
    VaHead h;
    h.c_feat = c_feat;
    h.latent_dim = latent_dim;
    h.to_mean = Affine::init(latent_dim, c_feat, rng);
    h.to_log_var = Affine::init(latent_dim, c_feat, rng);
    h.to_gate = Affine::init(c_feat, latent_dim, rng);
    return h;
}

void SeHead::zero_grads() {
    squeeze.zero_grads();
    excite.zero_grads();
}

SeHead SeHead::init(std::size_t c_feat, std::size_t reduction, Rng& rng) {
    if (reduction == 0 || c_feat % reduction != 0) {
        throw std::invalid_argument("SeHead: reduction must divide c_feat");
    }
    SeHead h;
    h.c_feat = c_feat;
    h.reduction = reduction;
    h.squeeze = Affine::init(c_feat / reduction, c_feat, rng);
    h.excite = Affine::init(c_feat, c_feat / reduction, rng);
    return h;
}

GaussianParams encode(const VaHead& head, const Tensor& x) {
    if (x.rank() != 3 || x.dim(0) != head.c_feat) {
        throw std::invalid_argument("encode: feature channel mismatch");
    }
    const Tensor pooled = global_avg_pool(x);
    return {affine_forward(head.to_mean, pooled), affine_forward(head.to_log_var, pooled)};
}

Tensor decode_gate(const VaHead& head, const Tensor& z) {
    if (z.size() != head.latent_dim) {
        throw std::invalid_argument("decode_gate: latent dimension mismatch");
    }
    return sigmoid(affine_forward(head.to_gate, z));
}

SeForward se_forward_cached(const SeHead& head, const Tensor& x) {
    if (x.rank() != 3 || x.dim(0) != head.c_feat) {
        throw std::invalid_argument("se_forward: feature channel mismatch");
    }
    SeForward f;
    f.pooled = global_avg_pool(x);
    f.hidden_pre = affine_forward(head.squeeze, f.pooled);
    f.hidden = Tensor(f.hidden_pre.shape());
    for (std::size_t i = 0; i < f.hidden.size(); ++i) {
        f.hidden[i] = isru(f.hidden_pre[i]);
    }
    f.gate_pre = affine_forward(head.excite, f.hidden);
    f.gate = sigmoid(f.gate_pre);
    return f;
}

Tensor se_forward(const SeHead& head, const Tensor& x) {
    return se_forward_cached(head, x).gate;
}

VaForward va_forward(const VaHead& head, const Tensor& x, Rng& rng, Mode mode,
                     const Tensor* eps_override) {
    VaForward f;
    if (x.rank() != 3 || x.dim(0) != head.c_feat) {
        throw std::invalid_argument("va_forward: feature channel mismatch");
    }
    f.pooled = global_avg_pool(x);
    f.q.mean = affine_forward(head.to_mean, f.pooled);
    f.q.log_var = affine_forward(head.to_log_var, f.pooled);
    if (mode == Mode::train) {
        f.eps = eps_override ? *eps_override : gaussian_sample(rng, {head.latent_dim});
        f.z = reparameterize_with(f.q, f.eps);
    } else {
        f.z = f.q.mean;
    }
    f.gate_pre = affine_forward(head.to_gate, f.z);
    f.y = sigmoid(f.gate_pre);
    f.x_reweighted = channelwise_product(x, f.y);
    return f;
}

} // namespace vattn
