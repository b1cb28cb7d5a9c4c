#include "vattn/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>

#include <json.hpp>

#include "vattn/errors.hpp"
#include "vattn/parallel.hpp"

namespace vattn {

std::string to_string(TrainMode m) {
    switch (m) {
    case TrainMode::it: return "it";
    case TrainMode::jt: return "jt";
    case TrainMode::se: return "se";
    case TrainMode::va: return "va";
    case TrainMode::inva: return "inva";
    }
    return "jt";
}

TrainMode train_mode_from_string(const std::string& s) {
    if (s == "it") return TrainMode::it;
    if (s == "jt") return TrainMode::jt;
    if (s == "se") return TrainMode::se;
    if (s == "va") return TrainMode::va;
    if (s == "inva") return TrainMode::inva;
    throw std::invalid_argument("unknown train mode: " + s);
}

std::string TrainConfig::to_json() const {
    nlohmann::json j;
    j["mode"] = to_string(mode);
    j["epochs"] = epochs;
    j["batch_size"] = batch_size;
    j["lr"] = lr;
    j["adam_beta1"] = adam_beta1;
    j["adam_beta2"] = adam_beta2;
    j["lr_decay_factor"] = lr_decay_factor;
    j["lr_decay_period"] = lr_decay_period;
    j["seed"] = seed;
    j["lambda_kl"] = lambda_kl;
    j["lambda_lse"] = lambda_lse;
    j["lambda_det"] = lambda_det;
    j["components"] = components;
    j["cbar"] = cbar;
    j["k"] = k;
    j["clustering"] = vattn::to_string(clustering);
    j["latent_dim"] = latent_dim;
    j["se_reduction"] = se_reduction;
    return j.dump(2);
}

TrainConfig TrainConfig::from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument(std::string("config: invalid JSON: ") + e.what());
    }
    if (!j.is_object()) {
        throw std::invalid_argument("config: expected a JSON object");
    }
    TrainConfig c;
    for (const auto& [key, value] : j.items()) {
        try {
            if (key == "mode") {
                c.mode = train_mode_from_string(value.get<std::string>());
            } else if (key == "epochs") {
                c.epochs = value.get<int>();
            } else if (key == "batch_size") {
                c.batch_size = value.get<int>();
            } else if (key == "lr") {
                c.lr = value.get<double>();
            } else if (key == "adam_beta1") {
                c.adam_beta1 = value.get<double>();
            } else if (key == "adam_beta2") {
                c.adam_beta2 = value.get<double>();
            } else if (key == "lr_decay_factor") {
                c.lr_decay_factor = value.get<double>();
            } else if (key == "lr_decay_period") {
                c.lr_decay_period = value.get<int>();
            } else if (key == "seed") {
                c.seed = value.get<std::uint64_t>();
            } else if (key == "lambda_kl") {
                c.lambda_kl = value.get<double>();
            } else if (key == "lambda_lse") {
                c.lambda_lse = value.get<double>();
            } else if (key == "lambda_det") {
                c.lambda_det = value.get<double>();
            } else if (key == "components") {
                c.components = value.get<int>();
            } else if (key == "cbar") {
                c.cbar = value.get<int>();
            } else if (key == "k") {
                c.k = value.get<int>();
            } else if (key == "clustering") {
                c.clustering = cluster_backend_from_string(value.get<std::string>());
            } else if (key == "latent_dim") {
                c.latent_dim = value.get<int>();
            } else if (key == "se_reduction") {
                c.se_reduction = value.get<int>();
            } else {
                throw std::invalid_argument("config: unknown key '" + key + "'");
            }
        } catch (const nlohmann::json::exception& e) {
            throw std::invalid_argument("config: bad value for '" + key + "': " + e.what());
        }
    }
    if (c.batch_size < 1 || c.epochs < 0 || c.lambda_kl < 0 || c.lambda_lse < 0 ||
        c.lambda_det < 0 || c.latent_dim < 1 || c.lr_decay_period < 1) {
        throw std::invalid_argument("config: out-of-range value");
    }
    return c;
}

double density_loss(const std::vector<Tensor>& preds, const std::vector<Tensor>& gts, int batch,
                    std::vector<Tensor>* d_preds) {
    if (preds.size() != gts.size() || preds.empty() || batch < 1) {
        throw std::invalid_argument("density_loss: empty or mismatched batch");
    }
    double acc = 0.0;
    if (d_preds) {
        d_preds->assign(preds.size(), Tensor());
    }
    const double inv_b = 1.0 / static_cast<double>(batch);
    for (std::size_t i = 0; i < preds.size(); ++i) {
        if (!preds[i].same_shape(gts[i])) {
            throw std::invalid_argument("density_loss: shape mismatch");
        }
        double s = 0.0;
        Tensor grad;
        if (d_preds) {
            grad = Tensor(preds[i].shape());
        }
        for (std::size_t p = 0; p < preds[i].size(); ++p) {
            const double diff = preds[i][p] - gts[i][p];
            s += diff * diff;
            if (d_preds) {
                grad[p] = diff * inv_b;
            }
        }
        acc += s;
        if (d_preds) {
            (*d_preds)[i] = std::move(grad);
        }
    }
    return 0.5 * acc * inv_b;
}

NoisePlan draw_noise_plan(std::size_t batch, std::size_t latent_dim, int k, double drop_rate,
                          Rng& rng) {
    NoisePlan plan;
    if (latent_dim > 0) {
        plan.eps.reserve(batch);
        for (std::size_t i = 0; i < batch; ++i) {
            plan.eps.push_back(gaussian_sample(rng, {latent_dim}));
        }
    }
    if (k > 1) {
        plan.keep_masks.reserve(batch);
        for (std::size_t i = 0; i < batch; ++i) {
            plan.keep_masks.push_back(draw_keep_mask(k, drop_rate, rng));
        }
    }
    return plan;
}

namespace {

// Per-sample latent-term evaluation shared by the VA and InVA losses so that
// the k = 1 reduction is bitwise exact. `centers` holds the effective prior
// mean of every cluster for this sample.
struct LatentOut {
    double kl = 0.0, lse = 0.0, det = 0.0; // raw term values
    Tensor d_z, d_mean, d_log_var;         // scaled injections for the encoder
    std::vector<Tensor> d_centers;         // scaled, per cluster
    Tensor d_label_log_var;                // scaled
};

LatentOut latent_terms(const VaForward& va, int label, const std::vector<Tensor>& centers,
                       const Tensor& label_log_var, const LossWeights& w, double inv_b) {
    LatentOut out;
    const GaussianParams prior_c{centers[label], label_log_var};
    const KlResult kl = kl_diag_gaussian(va.q, prior_c);
    const LseResult lse = lse_regularizer(va.z, centers, label);
    const LogDetResult det = logdet_regularizer(prior_c);
    out.kl = kl.value;
    out.lse = lse.value;
    out.det = det.value;

    const std::size_t d = va.z.size();
    out.d_z = Tensor::zeros({d});
    out.d_mean = Tensor::zeros({d});
    out.d_log_var = Tensor::zeros({d});
    for (std::size_t i = 0; i < d; ++i) {
        out.d_z[i] = w.lse * inv_b * lse.d_z[i];
        out.d_mean[i] = w.kl * inv_b * kl.d_q_mean[i];
        out.d_log_var[i] = w.kl * inv_b * kl.d_q_log_var[i];
    }
    out.d_centers.resize(centers.size());
    for (std::size_t j = 0; j < centers.size(); ++j) {
        out.d_centers[j] = Tensor::zeros({d});
        for (std::size_t i = 0; i < d; ++i) {
            out.d_centers[j][i] = w.lse * inv_b * lse.d_centers[j][i];
        }
    }
    for (std::size_t i = 0; i < d; ++i) {
        out.d_centers[label][i] += w.kl * inv_b * kl.d_p_mean[i];
    }
    out.d_label_log_var = Tensor::zeros({d});
    for (std::size_t i = 0; i < d; ++i) {
        out.d_label_log_var[i] =
            w.kl * inv_b * kl.d_p_log_var[i] + w.det * inv_b * det.d_log_var[i];
    }
    return out;
}

struct SampleWork {
    Model model;
    ForwardCache cache;
    BackwardScratch scratch;
    Tensor d_pred;
    double density = 0.0;
    LatentOut latent;
    bool has_latent = false;
    int label = -1;
    std::vector<int> selected; // InVA: chosen sub-center per cluster
};

// one workspace slot per batch position, reused across steps so the large
// activation and gradient buffers are allocated once per thread
std::vector<SampleWork>& work_pool(std::size_t n) {
    thread_local std::vector<SampleWork> pool;
    if (pool.size() < n) {
        pool.resize(n);
    }
    return pool;
}

// returns the raw per-sample squared error; the caller applies 1/(2B) after
// summing in sample order so the batch total matches density_loss bitwise
double sample_density_backward(const Tensor& pred, const Tensor& gt, double inv_b,
                               Tensor& d_pred) {
    if (!pred.same_shape(gt)) {
        throw std::invalid_argument("loss: prediction/ground-truth shape mismatch");
    }
    double s = 0.0;
    if (!d_pred.same_shape(pred)) {
        d_pred = Tensor(pred.shape());
    }
    for (std::size_t p = 0; p < pred.size(); ++p) {
        const double diff = pred[p] - gt[p];
        s += diff * diff;
        d_pred[p] = diff * inv_b;
    }
    return s;
}

void reduce_model_grads(Model& master, std::vector<SampleWork>& work, std::size_t n) {
    auto dst = master.parameters();
    for (std::size_t w = 0; w < n; ++w) {
        auto src = work[w].model.parameters();
        for (std::size_t p = 0; p < dst.size(); ++p) {
            Tensor& d = *dst[p].grad;
            const Tensor& s = *src[p].grad;
            for (std::size_t i = 0; i < d.size(); ++i) {
                d[i] += s[i];
            }
        }
    }
}

void check_batch(const Batch& batch) {
    if (batch.samples.empty()) {
        throw std::invalid_argument("loss: empty batch");
    }
    // validate up front; workers run inside an OpenMP region and must not throw
    for (const auto* s : batch.samples) {
        if (s->input.rank() != 3 || s->input.dim(0) != 1) {
            throw std::invalid_argument("loss: expected input [1,H,W]");
        }
        if (!s->density.same_shape(s->input)) {
            throw std::invalid_argument("loss: density/input shape mismatch");
        }
    }
}

} // namespace

LossTerms va_total_loss(Model& model, const Batch& batch, MixturePrior& prior,
                        const NoisePlan& plan, const LossWeights& weights) {
    check_batch(batch);
    if (model.attention != AttentionKind::va || !model.va) {
        throw std::invalid_argument("va_total_loss: model has no VA head");
    }
    if (plan.eps.size() != batch.size()) {
        throw std::invalid_argument("va_total_loss: noise plan size mismatch");
    }
    const int c_count = prior.components();
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    for (const auto* s : batch.samples) {
        if (s->label < 0 || s->label >= c_count) {
            throw std::invalid_argument("va_total_loss: label out of prior range");
        }
    }

    model.zero_grads();
    prior.zero_grads();

    std::vector<SampleWork>& work = work_pool(batch.size());
    parallel_for(batch.size(), [&](std::size_t i) {
        SampleWork& wk = work[i];
        const DomainSample& s = *batch.samples[i];
        wk.label = s.label;
        wk.model = model;
        wk.model.zero_grads();
        model_forward(wk.model, s.input, Mode::train, nullptr, wk.cache, &plan.eps[i]);
        wk.density = sample_density_backward(wk.cache.pred, s.density, inv_b, wk.d_pred);
        std::vector<Tensor> centers;
        centers.reserve(c_count);
        for (int c = 0; c < c_count; ++c) {
            centers.push_back(prior.mean[c]);
        }
        wk.latent = latent_terms(wk.cache.va, s.label, centers, prior.log_var[s.label],
                                 weights, inv_b);
        wk.has_latent = true;
        AttnGrads extra;
        extra.d_z = &wk.latent.d_z;
        extra.d_mean = &wk.latent.d_mean;
        extra.d_log_var = &wk.latent.d_log_var;
        model_backward(wk.model, wk.cache, wk.d_pred, extra, wk.scratch);
    });

    LossTerms terms;
    for (std::size_t w = 0; w < batch.size(); ++w) {
        const SampleWork& wk = work[w];
        terms.density += wk.density;
        terms.kl += weights.kl * inv_b * wk.latent.kl;
        terms.lse += weights.lse * inv_b * wk.latent.lse;
        terms.det += weights.det * inv_b * wk.latent.det;
    }
    terms.density = 0.5 * terms.density * inv_b;
    reduce_model_grads(model, work, batch.size());
    for (std::size_t w = 0; w < batch.size(); ++w) {
        const SampleWork& wk = work[w];
        for (int c = 0; c < c_count; ++c) {
            for (std::size_t i = 0; i < prior.d_mean[c].size(); ++i) {
                prior.d_mean[c][i] += wk.latent.d_centers[c][i];
            }
        }
        for (std::size_t i = 0; i < prior.d_log_var[wk.label].size(); ++i) {
            prior.d_log_var[wk.label][i] += wk.latent.d_label_log_var[i];
        }
    }
    return terms;
}

LossTerms va_total_loss(Model& model, const Batch& batch, MixturePrior& prior, Rng& rng,
                        const LossWeights& weights) {
    const NoisePlan plan =
        draw_noise_plan(batch.size(), model.cfg.latent_dim, 1, 0.0, rng);
    return va_total_loss(model, batch, prior, plan, weights);
}

LossTerms inva_total_loss(Model& model, const Batch& batch, SubGaussianPrior& prior,
                          const NoisePlan& plan, const LossWeights& weights) {
    check_batch(batch);
    if (model.attention != AttentionKind::va || !model.va) {
        throw std::invalid_argument("inva_total_loss: model has no VA head");
    }
    if (plan.eps.size() != batch.size()) {
        throw std::invalid_argument("inva_total_loss: noise plan size mismatch");
    }
    if (prior.k > 1 && plan.keep_masks.size() != batch.size()) {
        throw std::invalid_argument("inva_total_loss: missing dropout masks");
    }
    for (const auto* s : batch.samples) {
        if (s->cl_label < 0) {
            throw InvalidStateError("inva_total_loss: sample without CL label");
        }
        if (s->cl_label >= prior.cbar) {
            throw std::invalid_argument("inva_total_loss: CL label out of prior range");
        }
    }
    const int c_count = prior.cbar;
    const double inv_b = 1.0 / static_cast<double>(batch.size());

    model.zero_grads();
    prior.zero_grads();

    std::vector<SampleWork>& work = work_pool(batch.size());
    parallel_for(batch.size(), [&](std::size_t i) {
        SampleWork& wk = work[i];
        const DomainSample& s = *batch.samples[i];
        wk.label = s.cl_label;
        wk.model = model;
        wk.model.zero_grads();
        model_forward(wk.model, s.input, Mode::train, nullptr, wk.cache, &plan.eps[i]);
        wk.density = sample_density_backward(wk.cache.pred, s.density, inv_b, wk.d_pred);

        // effective centers: dropout-gated argmax for the sample's own
        // cluster, raw argmax for the others
        Rng unused;
        wk.selected.resize(c_count);
        std::vector<Tensor> centers;
        centers.reserve(c_count);
        for (int c = 0; c < c_count; ++c) {
            SgcSelection sel;
            if (c == s.cl_label && prior.k > 1) {
                sel = sgc_select_masked(prior, c, wk.cache.va.q.mean, plan.keep_masks[i]);
            } else {
                sel = sgc_select(prior, c, wk.cache.va.q.mean, unused, Mode::eval);
            }
            wk.selected[c] = sel.index;
            centers.push_back(prior.center(c, sel.index));
        }
        wk.latent = latent_terms(wk.cache.va, s.cl_label, centers,
                                 prior.log_var[s.cl_label], weights, inv_b);
        wk.has_latent = true;
        AttnGrads extra;
        extra.d_z = &wk.latent.d_z;
        extra.d_mean = &wk.latent.d_mean;
        extra.d_log_var = &wk.latent.d_log_var;
        model_backward(wk.model, wk.cache, wk.d_pred, extra, wk.scratch);
    });

    LossTerms terms;
    for (std::size_t w = 0; w < batch.size(); ++w) {
        const SampleWork& wk = work[w];
        terms.density += wk.density;
        terms.kl += weights.kl * inv_b * wk.latent.kl;
        terms.lse += weights.lse * inv_b * wk.latent.lse;
        terms.det += weights.det * inv_b * wk.latent.det;
    }
    terms.density = 0.5 * terms.density * inv_b;
    reduce_model_grads(model, work, batch.size());
    for (std::size_t w = 0; w < batch.size(); ++w) {
        const SampleWork& wk = work[w];
        for (int c = 0; c < c_count; ++c) {
            Tensor& dst = prior.d_sub_mean[c * prior.k + wk.selected[c]];
            for (std::size_t i = 0; i < dst.size(); ++i) {
                dst[i] += wk.latent.d_centers[c][i];
            }
        }
        for (std::size_t i = 0; i < prior.d_log_var[wk.label].size(); ++i) {
            prior.d_log_var[wk.label][i] += wk.latent.d_label_log_var[i];
        }
    }
    return terms;
}

LossTerms inva_total_loss(Model& model, const Batch& batch, SubGaussianPrior& prior, Rng& rng,
                          const LossWeights& weights) {
    const NoisePlan plan = draw_noise_plan(batch.size(), model.cfg.latent_dim, prior.k,
                                           prior.drop_rate, rng);
    return inva_total_loss(model, batch, prior, plan, weights);
}

LossTerms plain_total_loss(Model& model, const Batch& batch, const NoisePlan&) {
    check_batch(batch);
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    model.zero_grads();
    std::vector<SampleWork>& work = work_pool(batch.size());
    parallel_for(batch.size(), [&](std::size_t i) {
        SampleWork& wk = work[i];
        const DomainSample& s = *batch.samples[i];
        wk.model = model;
        wk.model.zero_grads();
        model_forward(wk.model, s.input, Mode::train, nullptr, wk.cache);
        wk.density = sample_density_backward(wk.cache.pred, s.density, inv_b, wk.d_pred);
        model_backward(wk.model, wk.cache, wk.d_pred, AttnGrads{}, wk.scratch);
    });
    LossTerms terms;
    for (std::size_t w = 0; w < batch.size(); ++w) {
        terms.density += work[w].density;
    }
    terms.density = 0.5 * terms.density * inv_b;
    reduce_model_grads(model, work, batch.size());
    return terms;
}

void Adam::init_like(const std::vector<ParamRef>& params) {
    t = 0;
    m.clear();
    v.clear();
    for (const auto& p : params) {
        m.push_back(Tensor::zeros(p.value->shape()));
        v.push_back(Tensor::zeros(p.value->shape()));
    }
}

void Adam::step(const std::vector<ParamRef>& params, double lr) {
    ++t;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (std::size_t p = 0; p < params.size(); ++p) {
        Tensor& value = *params[p].value;
        const Tensor& grad = *params[p].grad;
        Tensor& mp = m[p];
        Tensor& vp = v[p];
        for (std::size_t i = 0; i < value.size(); ++i) {
            const double g = grad[i];
            mp[i] = beta1 * mp[i] + (1.0 - beta1) * g;
            vp[i] = beta2 * vp[i] + (1.0 - beta2) * g * g;
            const double mh = mp[i] / bc1;
            const double vh = vp[i] / bc2;
            value[i] -= lr * mh / (std::sqrt(vh) + eps);
        }
    }
}

double lr_at_epoch(double lr0, double decay_factor, int decay_period, int epoch) {
    const int k = epoch / decay_period;
    return lr0 / std::pow(decay_factor, static_cast<double>(k));
}

namespace {

void put_u32(std::string& buf, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) {
        buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
}

void put_u64(std::string& buf, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
        buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
}

void put_f64(std::string& buf, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    put_u64(buf, bits);
}

void put_str(std::string& buf, const std::string& s) {
    put_u32(buf, static_cast<std::uint32_t>(s.size()));
    buf.append(s);
}

struct CkptReader {
    const unsigned char* p;
    const unsigned char* end;
    void need(std::size_t n) {
        if (static_cast<std::size_t>(end - p) < n) {
            throw DegenerateDataError("checkpoint file truncated");
        }
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) {
            v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
        }
        p += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) {
            v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
        }
        p += 8;
        return v;
    }
    double f64() {
        const std::uint64_t bits = u64();
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }
    std::string str() {
        const std::uint32_t n = u32();
        need(n);
        std::string s(reinterpret_cast<const char*>(p), n);
        p += n;
        return s;
    }
};

} // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    std::string buf;
    buf.append("VACK");
    put_u32(buf, 1);
    put_str(buf, ckpt.config_json);
    for (const auto& w : ckpt.rng_state.s) {
        put_u64(buf, w);
    }
    buf.push_back(ckpt.rng_state.has_cached ? 1 : 0);
    put_f64(buf, ckpt.rng_state.cached);
    put_u64(buf, ckpt.adam_step);
    put_u32(buf, static_cast<std::uint32_t>(ckpt.epoch));
    put_u32(buf, static_cast<std::uint32_t>(ckpt.tensors.size()));
    for (const auto& [name, tensor] : ckpt.tensors) {
        put_str(buf, name);
        put_u32(buf, static_cast<std::uint32_t>(tensor.rank()));
        for (std::size_t d = 0; d < tensor.rank(); ++d) {
            put_u32(buf, static_cast<std::uint32_t>(tensor.dim(d)));
        }
        for (std::size_t i = 0; i < tensor.size(); ++i) {
            put_f64(buf, tensor[i]);
        }
    }

    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw DegenerateDataError("cannot open for writing: " + tmp);
        }
        out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
        if (!out) {
            throw DegenerateDataError("short write: " + tmp);
        }
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DegenerateDataError("cannot open checkpoint: " + path);
    }
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (buf.size() < 8 || buf.compare(0, 4, "VACK") != 0) {
        throw DegenerateDataError("not a VACK checkpoint: " + path);
    }
    CkptReader r{reinterpret_cast<const unsigned char*>(buf.data()) + 4,
                 reinterpret_cast<const unsigned char*>(buf.data()) + buf.size()};
    if (r.u32() != 1) {
        throw DegenerateDataError("unsupported VACK version");
    }
    Checkpoint ckpt;
    ckpt.config_json = r.str();
    for (auto& w : ckpt.rng_state.s) {
        w = r.u64();
    }
    r.need(1);
    ckpt.rng_state.has_cached = *r.p++ != 0;
    ckpt.rng_state.cached = r.f64();
    ckpt.adam_step = r.u64();
    ckpt.epoch = static_cast<int>(r.u32());
    const std::uint32_t n_tensors = r.u32();
    for (std::uint32_t t = 0; t < n_tensors; ++t) {
        std::string name = r.str();
        const std::uint32_t rank = r.u32();
        std::vector<std::size_t> shape(rank);
        std::size_t numel = 1;
        for (std::uint32_t d = 0; d < rank; ++d) {
            shape[d] = r.u32();
            numel *= shape[d];
        }
        std::vector<double> data(numel);
        for (std::size_t i = 0; i < numel; ++i) {
            data[i] = r.f64();
        }
        ckpt.tensors.emplace_back(std::move(name), Tensor(std::move(shape), std::move(data)));
    }
    return ckpt;
}

namespace {

AttentionKind attention_kind(TrainMode mode) {
    switch (mode) {
    case TrainMode::se: return AttentionKind::se;
    case TrainMode::va:
    case TrainMode::inva: return AttentionKind::va;
    default: return AttentionKind::none;
    }
}

std::vector<ParamRef> prior_params(MixturePrior& prior) {
    std::vector<ParamRef> p;
    for (int c = 0; c < prior.components(); ++c) {
        p.push_back({"prior.mean." + std::to_string(c), &prior.mean[c], &prior.d_mean[c]});
        p.push_back(
            {"prior.log_var." + std::to_string(c), &prior.log_var[c], &prior.d_log_var[c]});
    }
    return p;
}

std::vector<ParamRef> prior_params(SubGaussianPrior& prior) {
    std::vector<ParamRef> p;
    for (int c = 0; c < prior.cbar; ++c) {
        for (int i = 0; i < prior.k; ++i) {
            p.push_back({"sgc.center." + std::to_string(c) + "." + std::to_string(i),
                         &prior.sub_mean[c * prior.k + i], &prior.d_sub_mean[c * prior.k + i]});
        }
        p.push_back({"sgc.log_var." + std::to_string(c), &prior.log_var[c], &prior.d_log_var[c]});
    }
    return p;
}

} // namespace

std::vector<std::vector<std::size_t>> balanced_pools(const std::vector<DomainSample>& samples,
                                                     bool use_cl) {
    std::vector<int> pool_label;
    std::vector<std::vector<std::size_t>> pools;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const int l = use_cl ? samples[i].cl_label : samples[i].label;
        std::size_t p = 0;
        for (; p < pool_label.size(); ++p) {
            if (pool_label[p] == l) {
                break;
            }
        }
        if (p == pool_label.size()) {
            pool_label.push_back(l);
            pools.emplace_back();
        }
        pools[p].push_back(i);
    }
    return pools;
}

namespace {

std::string iso_timestamp() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    char buf[32];
    std::tm tm_utc;
    gmtime_r(&t, &tm_utc);
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
    return buf;
}

} // namespace

std::vector<double> predict_counts(const Model& model, const std::vector<DomainSample>& samples) {
    std::vector<double> counts(samples.size());
    parallel_for(samples.size(), [&](std::size_t i) {
        ForwardCache cache;
        model_forward(model, samples[i].input, Mode::eval, nullptr, cache);
        counts[i] = predicted_count(cache.pred);
    });
    return counts;
}

void fill_domain_metrics(const Model& model, const Dataset& data, RunReport& report) {
    const auto counts = predict_counts(model, data.test);
    std::vector<int> labels_present;
    for (const auto& s : data.test) {
        if (std::find(labels_present.begin(), labels_present.end(), s.label) ==
            labels_present.end()) {
            labels_present.push_back(s.label);
        }
    }
    std::sort(labels_present.begin(), labels_present.end());
    report.domains.clear();
    report.mae.clear();
    report.mse.clear();
    for (int l : labels_present) {
        std::vector<double> pred, gt;
        for (std::size_t i = 0; i < data.test.size(); ++i) {
            if (data.test[i].label == l) {
                pred.push_back(counts[i]);
                gt.push_back(data.test[i].count);
            }
        }
        const auto [mae, mse] = mae_mse(pred, gt);
        report.domains.push_back(l >= 0 && static_cast<std::size_t>(l) < data.domain_names.size()
                                     ? data.domain_names[l]
                                     : "domain" + std::to_string(l));
        report.mae.push_back(mae);
        report.mse.push_back(mse);
    }
}

Dataset filter_domain(const Dataset& data, int label) {
    Dataset out;
    out.domain_names = data.domain_names;
    out.height = data.height;
    out.width = data.width;
    for (const auto& s : data.train) {
        if (s.label == label) {
            out.train.push_back(s);
        }
    }
    for (const auto& s : data.test) {
        if (s.label == label) {
            out.test.push_back(s);
        }
    }
    return out;
}

namespace {

struct TrainingState {
    Model model;
    std::optional<MixturePrior> prior;
    std::optional<SubGaussianPrior> sub_prior;
    std::vector<ParamRef> params;
    Adam adam;
    Rng rng;
};

TrainingState build_state(const TrainConfig& config, int va_components) {
    TrainingState st{Model(), std::nullopt, std::nullopt, {}, Adam(), Rng(config.seed)};
    ModelConfig mc;
    mc.latent_dim = static_cast<std::size_t>(config.latent_dim);
    mc.se_reduction = static_cast<std::size_t>(config.se_reduction);
    st.model = Model::init(attention_kind(config.mode), mc, st.rng);
    if (config.mode == TrainMode::va) {
        st.prior = MixturePrior::init(va_components, mc.latent_dim, st.rng);
    } else if (config.mode == TrainMode::inva) {
        st.sub_prior = SubGaussianPrior::init(config.cbar, config.k, mc.latent_dim, st.rng);
    }
    st.params = st.model.parameters();
    if (st.prior) {
        for (auto& p : prior_params(*st.prior)) {
            st.params.push_back(p);
        }
    }
    if (st.sub_prior) {
        for (auto& p : prior_params(*st.sub_prior)) {
            st.params.push_back(p);
        }
    }
    st.adam.beta1 = config.adam_beta1;
    st.adam.beta2 = config.adam_beta2;
    st.adam.init_like(st.params);
    return st;
}

void restore_from_checkpoint(TrainingState& st, const Checkpoint& ckpt) {
    std::map<std::string, const Tensor*> by_name;
    for (const auto& [name, tensor] : ckpt.tensors) {
        by_name[name] = &tensor;
    }
    for (std::size_t p = 0; p < st.params.size(); ++p) {
        const auto& name = st.params[p].name;
        auto it = by_name.find(name);
        if (it == by_name.end() || !it->second->same_shape(*st.params[p].value)) {
            throw DegenerateDataError("checkpoint missing or mismatched tensor: " + name);
        }
        *st.params[p].value = *it->second;
        auto mit = by_name.find("adam.m." + name);
        auto vit = by_name.find("adam.v." + name);
        if (mit == by_name.end() || vit == by_name.end()) {
            throw DegenerateDataError("checkpoint missing Adam state for: " + name);
        }
        st.adam.m[p] = *mit->second;
        st.adam.v[p] = *vit->second;
    }
    st.adam.t = ckpt.adam_step;
    st.rng.set_state(ckpt.rng_state);
}

Checkpoint snapshot(const TrainingState& st, const TrainConfig& config, int epoch) {
    Checkpoint ckpt;
    ckpt.config_json = config.to_json();
    ckpt.rng_state = st.rng.state();
    ckpt.adam_step = st.adam.t;
    ckpt.epoch = epoch;
    auto& state = const_cast<TrainingState&>(st);
    for (std::size_t p = 0; p < state.params.size(); ++p) {
        ckpt.tensors.emplace_back(state.params[p].name, *state.params[p].value);
    }
    for (std::size_t p = 0; p < state.params.size(); ++p) {
        ckpt.tensors.emplace_back("adam.m." + state.params[p].name, state.adam.m[p]);
        ckpt.tensors.emplace_back("adam.v." + state.params[p].name, state.adam.v[p]);
    }
    return ckpt;
}

} // namespace

TrainResult train(const TrainConfig& config, const Dataset& data, const Checkpoint* resume) {
    if (data.train.empty()) {
        throw std::invalid_argument("train: empty dataset");
    }
    const bool use_cl = config.mode == TrainMode::inva;
    if (use_cl) {
        for (const auto& s : data.train) {
            if (s.cl_label < 0) {
                throw InvalidStateError("train: InVA requires CL labels on every sample");
            }
            if (s.cl_label >= config.cbar) {
                throw std::invalid_argument("train: CL label out of range");
            }
        }
    }
    const auto pools = balanced_pools(data.train, use_cl);
    if (config.mode == TrainMode::it && pools.size() != 1) {
        throw std::invalid_argument("train: IT mode requires a single-domain dataset");
    }
    int max_label = 0;
    for (const auto& s : data.train) {
        max_label = std::max(max_label, s.label);
    }
    const int va_components =
        config.components > 0 ? config.components : max_label + 1;
    if (config.mode == TrainMode::va) {
        for (const auto& s : data.train) {
            if (s.label < 0 || s.label >= va_components) {
                throw std::invalid_argument("train: label out of prior component range");
            }
        }
    }

    TrainingState st = build_state(config, va_components);
    int start_epoch = 0;
    if (resume) {
        restore_from_checkpoint(st, *resume);
        start_epoch = resume->epoch;
    }

    const LossWeights weights{config.lambda_kl, config.lambda_lse, config.lambda_det};
    const int batch = config.batch_size;
    const std::size_t n_train = data.train.size();
    const int steps_per_epoch = static_cast<int>((n_train + batch - 1) / batch);

    RunReport report;
    report.mode = to_string(config.mode);
    report.config_json = config.to_json();
    report.seed = config.seed;
    report.timestamp = iso_timestamp();

    const auto t_start = std::chrono::steady_clock::now();
    for (int epoch = start_epoch; epoch < config.epochs; ++epoch) {
        const double lr =
            lr_at_epoch(config.lr, config.lr_decay_factor, config.lr_decay_period, epoch);
        LossTerms epoch_acc;
        for (int step = 0; step < steps_per_epoch; ++step) {
            Batch b;
            b.samples.reserve(batch);
            for (int slot = 0; slot < batch; ++slot) {
                const std::size_t p = st.rng.uniform_int(pools.size());
                const std::size_t j = st.rng.uniform_int(pools[p].size());
                b.samples.push_back(&data.train[pools[p][j]]);
            }
            LossTerms terms;
            if (config.mode == TrainMode::va) {
                const NoisePlan plan =
                    draw_noise_plan(b.size(), config.latent_dim, 1, 0.0, st.rng);
                terms = va_total_loss(st.model, b, *st.prior, plan, weights);
            } else if (config.mode == TrainMode::inva) {
                const NoisePlan plan = draw_noise_plan(b.size(), config.latent_dim, config.k,
                                                       st.sub_prior->drop_rate, st.rng);
                terms = inva_total_loss(st.model, b, *st.sub_prior, plan, weights);
            } else {
                terms = plain_total_loss(st.model, b, NoisePlan{});
            }
            if (!std::isfinite(terms.total())) {
                char msg[256];
                std::snprintf(msg, sizeof(msg),
                              "train: non-finite loss at epoch %d step %d "
                              "(density=%g kl=%g lse=%g det=%g)",
                              epoch, step, terms.density, terms.kl, terms.lse, terms.det);
                throw NumericalError(msg);
            }
            st.adam.step(st.params, lr);
            epoch_acc.density += terms.density;
            epoch_acc.kl += terms.kl;
            epoch_acc.lse += terms.lse;
            epoch_acc.det += terms.det;
        }
        const double inv_steps = 1.0 / static_cast<double>(steps_per_epoch);
        report.trace_density.push_back(epoch_acc.density * inv_steps);
        report.trace_kl.push_back(epoch_acc.kl * inv_steps);
        report.trace_lse.push_back(epoch_acc.lse * inv_steps);
        report.trace_det.push_back(epoch_acc.det * inv_steps);
        report.trace_total.push_back(epoch_acc.total() * inv_steps);
    }
    report.wall_clock_sec =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();

    if (!data.test.empty()) {
        fill_domain_metrics(st.model, data, report);
    }

    // attention-space separability over the training set, by dataset label
    if (st.model.attention != AttentionKind::none) {
        std::vector<int> labels;
        labels.reserve(data.train.size());
        bool multi = false;
        for (const auto& s : data.train) {
            labels.push_back(s.label);
            if (s.label != data.train[0].label) {
                multi = true;
            }
        }
        if (multi) {
            std::vector<Tensor> gates(data.train.size());
            const Model& model = st.model;
            parallel_for(data.train.size(), [&](std::size_t i) {
                ForwardCache cache;
                model_forward(model, data.train[i].input, Mode::eval, nullptr, cache);
                gates[i] = model.attention == AttentionKind::va ? cache.va.y : cache.se.gate;
            });
            report.silhouette_by_domain = silhouette(gates, labels);
            report.has_silhouette = true;
        }
    }

    if (st.sub_prior) {
        const auto selections = collect_selections(st.model, *st.sub_prior, data.train);
        report.subdomain = subdomain_report(*st.sub_prior, selections);
        report.has_subdomain = true;
        report.cluster_sizes.assign(st.sub_prior->cbar, 0);
        for (const auto& s : data.train) {
            ++report.cluster_sizes[s.cl_label];
        }
    }

    TrainResult result;
    result.checkpoint = snapshot(st, config, config.epochs);
    result.report = std::move(report);
    result.trained.model = std::move(st.model);
    result.trained.prior = std::move(st.prior);
    result.trained.sub_prior = std::move(st.sub_prior);
    return result;
}

TrainedModel model_from_checkpoint(const Checkpoint& ckpt) {
    const TrainConfig config = TrainConfig::from_json(ckpt.config_json);
    int va_components = config.components;
    if (config.mode == TrainMode::va && va_components <= 0) {
        va_components = 0;
        for (const auto& [name, tensor] : ckpt.tensors) {
            if (name.rfind("prior.mean.", 0) == 0) {
                ++va_components;
            }
        }
        if (va_components == 0) {
            va_components = 1;
        }
    }
    TrainingState st = build_state(config, std::max(va_components, 1));
    std::map<std::string, const Tensor*> by_name;
    for (const auto& [name, tensor] : ckpt.tensors) {
        by_name[name] = &tensor;
    }
    for (auto& p : st.params) {
        auto it = by_name.find(p.name);
        if (it == by_name.end() || !it->second->same_shape(*p.value)) {
            throw DegenerateDataError("checkpoint missing or mismatched tensor: " + p.name);
        }
        *p.value = *it->second;
    }
    TrainedModel tm;
    tm.model = std::move(st.model);
    tm.prior = std::move(st.prior);
    tm.sub_prior = std::move(st.sub_prior);
    return tm;
}

DkpnetResult run_dkpnet(const TrainConfig& config, const Dataset& data,
                        const std::vector<int>* forced_cl_labels) {
    if (data.train.empty()) {
        throw std::invalid_argument("run_dkpnet: empty dataset");
    }
    TrainConfig cfg1 = config;
    cfg1.mode = TrainMode::va;
    TrainResult stage1 = train(cfg1, data);

    Dataset relabeled = data;
    std::vector<std::size_t> histogram(config.cbar, 0);
    if (forced_cl_labels) {
        if (forced_cl_labels->size() != relabeled.train.size()) {
            throw std::invalid_argument("run_dkpnet: forced label count mismatch");
        }
        for (std::size_t i = 0; i < relabeled.train.size(); ++i) {
            const int l = (*forced_cl_labels)[i];
            if (l < 0 || l >= config.cbar) {
                throw std::invalid_argument("run_dkpnet: forced label out of range");
            }
            relabeled.train[i].cl_label = l;
            ++histogram[l];
        }
    } else {
        ClusterConfig cc;
        cc.backend = config.clustering;
        Rng cluster_rng(mix64(config.seed, 0x434c55535445ULL));
        histogram = relabel_dataset(stage1.trained.model, relabeled.train, config.cbar,
                                    cluster_rng, cc);
    }

    int max_label = 0;
    for (const auto& s : data.train) {
        max_label = std::max(max_label, s.label);
    }
    std::vector<std::vector<std::size_t>> contingency(
        max_label + 1, std::vector<std::size_t>(config.cbar, 0));
    for (const auto& s : relabeled.train) {
        ++contingency[s.label][s.cl_label];
    }

    TrainConfig cfg2 = config;
    cfg2.mode = TrainMode::inva;
    TrainResult stage2 = train(cfg2, relabeled);

    DkpnetResult result;
    result.stage1_ckpt = std::move(stage1.checkpoint);
    result.stage2_ckpt = std::move(stage2.checkpoint);
    result.stage1 = std::move(stage1.report);
    result.stage2 = std::move(stage2.report);
    result.contingency = std::move(contingency);
    result.cluster_sizes = std::move(histogram);
    result.stage2_trained = std::move(stage2.trained);
    return result;
}

} // namespace vattn

