#include "vattn/model.hpp"

#include <cmath>
#include <stdexcept>

#include "vattn/kernels.hpp"

namespace vattn {

Conv3x3Layer Conv3x3Layer::init(std::size_t cout, std::size_t cin, Rng& rng) {
    Conv3x3Layer l;
    l.w = Tensor({cout, cin, 3, 3});
    const double scale = 1.0 / std::sqrt(static_cast<double>(cin * 9));
    for (std::size_t i = 0; i < l.w.size(); ++i) {
        l.w[i] = rng.normal() * scale;
    }
    l.b = Tensor::zeros({cout});
    l.dw = Tensor::zeros({cout, cin, 3, 3});
    l.db = Tensor::zeros({cout});
    return l;
}

Conv1x1Layer Conv1x1Layer::init(std::size_t cout, std::size_t cin, Rng& rng, double bias_init) {
    Conv1x1Layer l;
    l.w = Tensor({cout, cin});
    const double scale = 1.0 / std::sqrt(static_cast<double>(cin));
    for (std::size_t i = 0; i < l.w.size(); ++i) {
        l.w[i] = rng.normal() * scale;
    }
    l.b = Tensor::full({cout}, bias_init);
    l.dw = Tensor::zeros({cout, cin});
    l.db = Tensor::zeros({cout});
    l.bias_init = bias_init;
    return l;
}

Model Model::init(AttentionKind kind, const ModelConfig& cfg, Rng& rng) {
    Model m;
    m.cfg = cfg;
    m.attention = kind;
    m.conv1 = Conv3x3Layer::init(16, 1, rng);
    m.conv2 = Conv3x3Layer::init(cfg.c_feat, 16, rng);
    if (kind == AttentionKind::se) {
        m.se = SeHead::init(cfg.c_feat, cfg.se_reduction, rng);
    } else if (kind == AttentionKind::va) {
        m.va = VaHead::init(cfg.c_feat, cfg.latent_dim, rng);
    }
    // final bias starts low so the initial predicted counts are small
    m.head1 = Conv1x1Layer::init(16, cfg.c_feat, rng);
    m.head2 = Conv1x1Layer::init(8, 16, rng);
    m.head3 = Conv1x1Layer::init(1, 8, rng, -4.0);
    return m;
}

std::vector<ParamRef> Model::parameters() {
    std::vector<ParamRef> p;
    p.push_back({"conv1.w", &conv1.w, &conv1.dw});
    p.push_back({"conv1.b", &conv1.b, &conv1.db});
    p.push_back({"conv2.w", &conv2.w, &conv2.dw});
    p.push_back({"conv2.b", &conv2.b, &conv2.db});
    if (se) {
        p.push_back({"se.squeeze.w", &se->squeeze.w, &se->squeeze.dw});
        p.push_back({"se.squeeze.b", &se->squeeze.b, &se->squeeze.db});
        p.push_back({"se.excite.w", &se->excite.w, &se->excite.dw});
        p.push_back({"se.excite.b", &se->excite.b, &se->excite.db});
    }
    if (va) {
        p.push_back({"va.to_mean.w", &va->to_mean.w, &va->to_mean.dw});
        p.push_back({"va.to_mean.b", &va->to_mean.b, &va->to_mean.db});
        p.push_back({"va.to_log_var.w", &va->to_log_var.w, &va->to_log_var.dw});
        p.push_back({"va.to_log_var.b", &va->to_log_var.b, &va->to_log_var.db});
        p.push_back({"va.to_gate.w", &va->to_gate.w, &va->to_gate.dw});
        p.push_back({"va.to_gate.b", &va->to_gate.b, &va->to_gate.db});
    }
    p.push_back({"head1.w", &head1.w, &head1.dw});
    p.push_back({"head1.b", &head1.b, &head1.db});
    p.push_back({"head2.w", &head2.w, &head2.dw});
    p.push_back({"head2.b", &head2.b, &head2.db});
    p.push_back({"head3.w", &head3.w, &head3.dw});
    p.push_back({"head3.b", &head3.b, &head3.db});
    return p;
}

void Model::zero_grads() {
    for (auto& p : parameters()) {
        p.grad->fill(0.0);
    }
}

const Tensor& model_forward(const Model& m, const Tensor& input, Mode mode, Rng* rng,
                            ForwardCache& cache, const Tensor* eps_override) {
    if (input.rank() != 3 || input.dim(0) != 1) {
        throw std::invalid_argument("model_forward: expected input [1,H,W]");
    }
    cache.input = &input;
    conv3x3_forward(input, m.conv1.w, m.conv1.b, cache.pre1);
    isru_forward(cache.pre1, cache.act1);
    conv3x3_forward(cache.act1, m.conv2.w, m.conv2.b, cache.pre2);
    isru_forward(cache.pre2, cache.feat);

    if (m.attention == AttentionKind::se) {
        cache.se = se_forward_cached(*m.se, cache.feat);
        cache.se_xw = channelwise_product(cache.feat, cache.se.gate);
        cache.attended = &cache.se_xw;
    } else if (m.attention == AttentionKind::va) {
        static Rng dummy; // eval mode draws nothing
        Rng& r = rng ? *rng : dummy;
        cache.va = va_forward(*m.va, cache.feat, r, mode, eps_override);
        cache.attended = &cache.va.x_reweighted;
    } else {
        cache.attended = &cache.feat;
    }

    conv1x1_forward(*cache.attended, m.head1.w, m.head1.b, cache.h1pre);
    isru_forward(cache.h1pre, cache.h1act);
    conv1x1_forward(cache.h1act, m.head2.w, m.head2.b, cache.h2pre);
    isru_forward(cache.h2pre, cache.h2act);
    conv1x1_forward(cache.h2act, m.head3.w, m.head3.b, cache.out_pre);
    softplus_forward(cache.out_pre, cache.pred);
    return cache.pred;
}

namespace {

// d_feat += d_pooled / (H*W), the global-average-pool backward
void unpool_into(const Tensor& d_pooled, Tensor& d_feat) {
    const std::size_t c = d_feat.dim(0), hw = d_feat.dim(1) * d_feat.dim(2);
    const double inv = 1.0 / static_cast<double>(hw);
    for (std::size_t ch = 0; ch < c; ++ch) {
        const double g = d_pooled[ch] * inv;
        double* p = d_feat.data() + ch * hw;
        for (std::size_t i = 0; i < hw; ++i) {
            p[i] += g;
        }
    }
}

// gate gradient of x (.) y: d_y[c] = sum_hw d_xw * x, d_x += d_xw * y[c]
void channelwise_backward(const Tensor& d_xw, const Tensor& x, const Tensor& y,
                          Tensor& d_x, Tensor& d_y) {
    const std::size_t c = x.dim(0), hw = x.dim(1) * x.dim(2);
    for (std::size_t ch = 0; ch < c; ++ch) {
        const double* dp = d_xw.data() + ch * hw;
        const double* xp = x.data() + ch * hw;
        double* dxp = d_x.data() + ch * hw;
        const double g = y[ch];
        double acc = 0.0;
        for (std::size_t i = 0; i < hw; ++i) {
            acc += dp[i] * xp[i];
            dxp[i] += dp[i] * g;
        }
        d_y[ch] = acc;
    }
}

Tensor sigmoid_pre_backward(const Tensor& gate, const Tensor& d_gate) {
    Tensor d_pre(gate.shape());
    for (std::size_t i = 0; i < gate.size(); ++i) {
        d_pre[i] = d_gate[i] * gate[i] * (1.0 - gate[i]);
    }
    return d_pre;
}

} // namespace

namespace {

// reuse the buffer when the shape matches; contents are zeroed for accumulation
void ensure_zero(Tensor& t, const std::vector<std::size_t>& shape) {
    if (t.shape() != shape) {
        t = Tensor(shape);
    } else {
        t.fill(0.0);
    }
}

} // namespace

void model_backward(Model& m, const ForwardCache& cache, const Tensor& d_pred,
                    const AttnGrads& extra) {
    BackwardScratch scratch;
    model_backward(m, cache, d_pred, extra, scratch);
}

void model_backward(Model& m, const ForwardCache& cache, const Tensor& d_pred,
                    const AttnGrads& extra, BackwardScratch& scratch) {
    Tensor& d_outpre = scratch.d_outpre;
    softplus_backward(cache.out_pre, d_pred, d_outpre);

    conv1x1_backward_params(d_outpre, cache.h2act, m.head3.dw, m.head3.db);
    Tensor& d_h2act = scratch.d_h2act;
    ensure_zero(d_h2act, cache.h2act.shape());
    conv1x1_backward_input(d_outpre, m.head3.w, d_h2act);

    Tensor& d_h2pre = scratch.d_h2pre;
    isru_backward(cache.h2act, d_h2act, d_h2pre);
    conv1x1_backward_params(d_h2pre, cache.h1act, m.head2.dw, m.head2.db);
    Tensor& d_h1act = scratch.d_h1act;
    ensure_zero(d_h1act, cache.h1act.shape());
    conv1x1_backward_input(d_h2pre, m.head2.w, d_h1act);

    Tensor& d_h1pre = scratch.d_h1pre;
    isru_backward(cache.h1act, d_h1act, d_h1pre);
    conv1x1_backward_params(d_h1pre, *cache.attended, m.head1.dw, m.head1.db);
    Tensor& d_attended = scratch.d_attended;
    ensure_zero(d_attended, cache.attended->shape());
    conv1x1_backward_input(d_h1pre, m.head1.w, d_attended);

    Tensor& d_feat = scratch.d_feat;
    ensure_zero(d_feat, cache.feat.shape());
    if (m.attention == AttentionKind::se) {
        Tensor d_gate = Tensor::zeros(cache.se.gate.shape());
        channelwise_backward(d_attended, cache.feat, cache.se.gate, d_feat, d_gate);
        Tensor d_gpre = sigmoid_pre_backward(cache.se.gate, d_gate);
        Tensor d_hidden = affine_backward(m.se->excite, cache.se.hidden, d_gpre);
        Tensor d_hpre;
        isru_backward(cache.se.hidden, d_hidden, d_hpre);
        Tensor d_pooled = affine_backward(m.se->squeeze, cache.se.pooled, d_hpre);
        unpool_into(d_pooled, d_feat);
    } else if (m.attention == AttentionKind::va) {
        const VaForward& va = cache.va;
        Tensor d_y = Tensor::zeros(va.y.shape());
        channelwise_backward(d_attended, cache.feat, va.y, d_feat, d_y);
        Tensor d_gpre = sigmoid_pre_backward(va.y, d_y);
        Tensor d_z = affine_backward(m.va->to_gate, va.z, d_gpre);
        if (extra.d_z) {
            for (std::size_t i = 0; i < d_z.size(); ++i) {
                d_z[i] += (*extra.d_z)[i];
            }
        }
        Tensor d_mean = d_z; // z = mean + exp(lv/2) * eps
        if (extra.d_mean) {
            for (std::size_t i = 0; i < d_mean.size(); ++i) {
                d_mean[i] += (*extra.d_mean)[i];
            }
        }
        Tensor d_log_var = Tensor::zeros(va.q.log_var.shape());
        if (va.eps.size() > 0) { // train mode
            for (std::size_t i = 0; i < d_log_var.size(); ++i) {
                d_log_var[i] =
                    d_z[i] * 0.5 * std::exp(0.5 * va.q.log_var[i]) * va.eps[i];
            }
        }
        if (extra.d_log_var) {
            for (std::size_t i = 0; i < d_log_var.size(); ++i) {
                d_log_var[i] += (*extra.d_log_var)[i];
            }
        }
        Tensor d_pooled = affine_backward(m.va->to_mean, va.pooled, d_mean);
        Tensor d_pooled2 = affine_backward(m.va->to_log_var, va.pooled, d_log_var);
        for (std::size_t i = 0; i < d_pooled.size(); ++i) {
            d_pooled[i] += d_pooled2[i];
        }
        unpool_into(d_pooled, d_feat);
    } else {
        d_feat = d_attended;
    }

    Tensor& d_pre2 = scratch.d_pre2;
    isru_backward(cache.feat, d_feat, d_pre2);
    conv3x3_backward_params(d_pre2, cache.act1, m.conv2.dw, m.conv2.db);
    Tensor& d_act1 = scratch.d_act1;
    ensure_zero(d_act1, cache.act1.shape());
    conv3x3_backward_input(d_pre2, m.conv2.w, d_act1);

    Tensor& d_pre1 = scratch.d_pre1;
    isru_backward(cache.act1, d_act1, d_pre1);
    conv3x3_backward_params(d_pre1, *cache.input, m.conv1.dw, m.conv1.db);
}

void GradBuffer::init_like(const std::vector<ParamRef>& params) {
    grads.clear();
    grads.reserve(params.size());
    for (const auto& p : params) {
        grads.push_back(Tensor::zeros(p.value->shape()));
    }
}

void GradBuffer::zero() {
    for (auto& g : grads) {
        g.fill(0.0);
    }
}

} // namespace vattn
