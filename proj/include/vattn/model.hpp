#pragma once

#include <optional>
#include <string>
#include <vector>

#include "vattn/attention.hpp"
#include "vattn/tensor.hpp"

namespace vattn {

enum class AttentionKind { none, se, va };

struct ParamRef {
    std::string name;
    Tensor* value = nullptr;
    Tensor* grad = nullptr;
};

struct Conv3x3Layer {
    Tensor w; // [Cout,Cin,3,3]
    Tensor b; // [Cout]
    Tensor dw, db;
    static Conv3x3Layer init(std::size_t cout, std::size_t cin, Rng& rng);
};

struct Conv1x1Layer {
    Tensor w; // [Cout,Cin]
    Tensor b; // [Cout]
    Tensor dw, db;
    double bias_init = 0.0;
    static Conv1x1Layer init(std::size_t cout, std::size_t cin, Rng& rng,
                             double bias_init = 0.0);
};

struct ModelConfig {
    std::size_t latent_dim = 8;
    std::size_t se_reduction = 4;
    std::size_t c_feat = 32; // backbone output channels, fixed 1 -> 16 -> 32
};

// Density estimator: two 3x3 convolutions with an ISRU nonlinearity produce
// the feature map x, an optional channel-attention stage reweights it as
// x (.) y, and three
// 1x1 convolutions (32 -> 16 -> 8 -> 1, softplus output) regress the map.
struct Model {
    ModelConfig cfg;
    AttentionKind attention = AttentionKind::none;
    Conv3x3Layer conv1, conv2;
    std::optional<SeHead> se;
    std::optional<VaHead> va;
    Conv1x1Layer head1, head2, head3;

    // Stable enumeration order; checkpoints, Adam state and grad_check all
    // index parameters through this list.
    std::vector<ParamRef> parameters();
    void zero_grads();

    static Model init(AttentionKind kind, const ModelConfig& cfg, Rng& rng);
};

struct ForwardCache {
    const Tensor* input = nullptr;
    Tensor pre1, act1;
    Tensor pre2, feat; // feat == x
    SeForward se;
    Tensor se_xw;
    VaForward va;
    const Tensor* attended = nullptr; // feature map entering the head
    Tensor h1pre, h1act;
    Tensor h2pre, h2act;
    Tensor out_pre;
    Tensor pred;
};

// Extra gradient injections for the attention path (from the KL and
// separation regularizers); null members are skipped.
struct AttnGrads {
    const Tensor* d_z = nullptr;
    const Tensor* d_mean = nullptr;
    const Tensor* d_log_var = nullptr;
};

const Tensor& model_forward(const Model& m, const Tensor& input, Mode mode, Rng* rng,
                            ForwardCache& cache, const Tensor* eps_override = nullptr);

// Reusable buffers for model_backward; passing the same scratch across steps
// avoids re-allocating every intermediate gradient map.
struct BackwardScratch {
    Tensor d_outpre, d_h2act, d_h2pre, d_h1act, d_h1pre, d_attended;
    Tensor d_feat, d_pre2, d_act1, d_pre1;
};

// Accumulates parameter gradients for one sample. `d_pred` is dL/d(pred);
// attention-path extras enter at (z, u_phi, log_var_phi).
void model_backward(Model& m, const ForwardCache& cache, const Tensor& d_pred,
                    const AttnGrads& extra, BackwardScratch& scratch);
void model_backward(Model& m, const ForwardCache& cache, const Tensor& d_pred,
                    const AttnGrads& extra = {});

// Per-sample gradient buffers for batch-parallel training: same tensor
// layout as Model::parameters().
struct GradBuffer {
    std::vector<Tensor> grads;
    void init_like(const std::vector<ParamRef>& params);
    void zero();
};

} // namespace vattn
