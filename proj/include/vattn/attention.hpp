#pragma once

#include <cstddef>

#include "vattn/gaussian.hpp"
#include "vattn/rng.hpp"
#include "vattn/tensor.hpp"

namespace vattn {

enum class Mode { train, eval };

// Dense affine map with gradient accumulators. Weights are N(0, 1/fan_in),
// biases zero; the weight tensor is drawn row-major before the bias.
struct Affine {
    Tensor w;  // [out, in]
    Tensor b;  // [out]
    Tensor dw;
    Tensor db;

    std::size_t in() const { return w.dim(1); }
    std::size_t out() const { return w.dim(0); }
    void zero_grads();

    static Affine init(std::size_t out, std::size_t in, Rng& rng);
};

Tensor affine_forward(const Affine& a, const Tensor& in);
// Accumulates dw/db from d_out and returns d_in.
Tensor affine_backward(Affine& a, const Tensor& in, const Tensor& d_out);

// Variational attention head: pooled features -> (u_phi, log_var_phi), and a
// single affine + sigmoid decoder from the latent z to the channel gate.
// The domain label never enters the forward pass; it only selects the prior
// component inside the loss, so inference is label-free.
struct VaHead {
    std::size_t c_feat = 0;
    std::size_t latent_dim = 0;
    Affine to_mean;    // c_feat -> d
    Affine to_log_var; // c_feat -> d
    Affine to_gate;    // d -> c_feat

    void zero_grads();
    static VaHead init(std::size_t c_feat, std::size_t latent_dim, Rng& rng);
};

// Squeeze-and-excitation baseline: pool -> bottleneck -> gate.
struct SeHead {
    std::size_t c_feat = 0;
    std::size_t reduction = 4; // must divide c_feat
    Affine squeeze; // c_feat -> c_feat / r
    Affine excite;  // c_feat / r -> c_feat

    void zero_grads();
    static SeHead init(std::size_t c_feat, std::size_t reduction, Rng& rng);
};

// q_phi(z|x): global average pool then the two affine maps.
GaussianParams encode(const VaHead& head, const Tensor& x);

// y = sigmoid(affine(z)), entries in (0, 1).
Tensor decode_gate(const VaHead& head, const Tensor& z);

struct SeForward {
    Tensor pooled;     // [C]
    Tensor hidden_pre; // [C/r]
    Tensor hidden;     // [C/r], after the nonlinearity
    Tensor gate_pre;   // [C]
    Tensor gate;       // [C]
};
SeForward se_forward_cached(const SeHead& head, const Tensor& x);
Tensor se_forward(const SeHead& head, const Tensor& x);

// Full VA pass over a feature map. Train mode samples z via the
// reparameterization trick (or uses `eps_override` when supplied, a test
// hook); eval mode uses the posterior mean.
struct VaForward {
    Tensor pooled;    // [C]
    GaussianParams q; // (u_phi, log_var_phi)
    Tensor eps;       // empty in eval mode
    Tensor z;         // [d]
    Tensor gate_pre;  // [C]
    Tensor y;         // gate, [C]
    Tensor x_reweighted;
};
VaForward va_forward(const VaHead& head, const Tensor& x, Rng& rng, Mode mode,
                     const Tensor* eps_override = nullptr);

} // namespace vattn
