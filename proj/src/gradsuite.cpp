#include "vattn/gradsuite.hpp"

#include <cmath>

#include "vattn/gradcheck.hpp"
#include "vattn/trainer.hpp"

namespace vattn {

namespace {

Tensor random_tensor(const std::vector<std::size_t>& shape, Rng& rng, double scale = 1.0) {
    Tensor t = gaussian_sample(rng, shape);
    for (std::size_t i = 0; i < t.size(); ++i) {
        t[i] *= scale;
    }
    return t;
}

GradCheckEntry check_density(double eps, double threshold) {
    // fixtures keep the objective small so that eps-sized central differences
    // resolve even near-zero gradient entries well below the 1e-4 gate
    Rng rng(101);
    const int batch = 3;
    std::vector<Tensor> preds, gts;
    for (int i = 0; i < batch; ++i) {
        preds.push_back(random_tensor({1, 5, 5}, rng, 0.1));
        gts.push_back(random_tensor({1, 5, 5}, rng, 0.1));
    }
    std::vector<Tensor> d_preds;
    density_loss(preds, gts, batch, &d_preds);
    std::vector<ParamView> params;
    for (int i = 0; i < batch; ++i) {
        params.push_back({"pred" + std::to_string(i), preds[i].data(), d_preds[i].data(),
                          preds[i].size()});
    }
    const double err = grad_check([&] { return density_loss(preds, gts, batch); }, params, eps);
    return {"density_loss", err, err < threshold};
}

GradCheckEntry check_kl(double eps, double threshold) {
    Rng rng(102);
    const std::size_t d = 6;
    GaussianParams q{random_tensor({d}, rng), random_tensor({d}, rng, 0.5)};
    GaussianParams p{random_tensor({d}, rng), random_tensor({d}, rng, 0.5)};
    const KlResult r = kl_diag_gaussian(q, p);
    std::vector<ParamView> params = {
        {"q.mean", q.mean.data(), r.d_q_mean.data(), d},
        {"q.log_var", q.log_var.data(), r.d_q_log_var.data(), d},
        {"p.mean", p.mean.data(), r.d_p_mean.data(), d},
        {"p.log_var", p.log_var.data(), r.d_p_log_var.data(), d},
    };
    const double err =
        grad_check([&] { return kl_diag_gaussian(q, p).value; }, params, eps);
    return {"kl_diag_gaussian", err, err < threshold};
}

GradCheckEntry check_lse(double eps, double threshold) {
    Rng rng(103);
    const std::size_t d = 6;
    const int c_count = 4;
    Tensor z = random_tensor({d}, rng);
    std::vector<Tensor> centers;
    for (int c = 0; c < c_count; ++c) {
        centers.push_back(random_tensor({d}, rng));
    }
    const int label = 1;
    const LseResult r = lse_regularizer(z, centers, label);
    std::vector<ParamView> params;
    params.push_back({"z", z.data(), r.d_z.data(), d});
    for (int c = 0; c < c_count; ++c) {
        params.push_back({"center" + std::to_string(c), centers[c].data(),
                          r.d_centers[c].data(), d});
    }
    const double err =
        grad_check([&] { return lse_regularizer(z, centers, label).value; }, params, eps);
    return {"lse_regularizer", err, err < threshold};
}

GradCheckEntry check_logdet(double eps, double threshold) {
    Rng rng(104);
    const std::size_t d = 6;
    GaussianParams p{Tensor::zeros({d}), random_tensor({d}, rng, 0.7)};
    const LogDetResult r = logdet_regularizer(p);
    std::vector<ParamView> params = {{"log_var", p.log_var.data(), r.d_log_var.data(), d}};
    const double err =
        grad_check([&] { return logdet_regularizer(p).value; }, params, eps);
    return {"logdet_regularizer", err, err < threshold};
}

struct MicroInstance {
    std::vector<DomainSample> samples;
    Batch batch;
    NoisePlan plan;
};

MicroInstance micro_instance(Rng& rng, std::size_t latent_dim, int k, double drop_rate,
                             int n_labels) {
    MicroInstance mi;
    for (int i = 0; i < 2; ++i) {
        DomainSample s;
        s.input = random_tensor({1, 6, 6}, rng, 0.6);
        s.density = random_tensor({1, 6, 6}, rng, 0.04);
        for (std::size_t p = 0; p < s.density.size(); ++p) {
            s.density[p] = std::abs(s.density[p]);
        }
        s.label = i % n_labels;
        s.cl_label = s.label;
        mi.samples.push_back(std::move(s));
    }
    for (auto& s : mi.samples) {
        mi.batch.samples.push_back(&s);
    }
    mi.plan = draw_noise_plan(mi.batch.size(), latent_dim, k, drop_rate, rng);
    return mi;
}

std::vector<ParamView> views_of(const std::vector<ParamRef>& refs) {
    std::vector<ParamView> views;
    views.reserve(refs.size());
    for (const auto& r : refs) {
        views.push_back({r.name, r.value->data(), r.grad->data(), r.value->size()});
    }
    return views;
}

GradCheckEntry check_va_total(double eps, double threshold) {
    Rng rng(105);
    ModelConfig mc;
    mc.latent_dim = 4;
    Model model = Model::init(AttentionKind::va, mc, rng);
    MixturePrior prior = MixturePrior::init(2, mc.latent_dim, rng);
    MicroInstance mi = micro_instance(rng, mc.latent_dim, 1, 0.0, 2);
    const LossWeights w{0.02, 0.02, 0.02};

    auto loss = [&] { return va_total_loss(model, mi.batch, prior, mi.plan, w).total(); };
    loss();
    std::vector<ParamRef> refs = model.parameters();
    for (int c = 0; c < prior.components(); ++c) {
        refs.push_back({"prior.mean." + std::to_string(c), &prior.mean[c], &prior.d_mean[c]});
        refs.push_back(
            {"prior.log_var." + std::to_string(c), &prior.log_var[c], &prior.d_log_var[c]});
    }
    const double err = grad_check(loss, views_of(refs), eps);
    return {"va_total_loss", err, err < threshold};
}

GradCheckEntry check_inva_total(double eps, double threshold) {
    Rng rng(106);
    ModelConfig mc;
    mc.latent_dim = 4;
    Model model = Model::init(AttentionKind::va, mc, rng);
    SubGaussianPrior prior = SubGaussianPrior::init(2, 3, mc.latent_dim, rng);
    MicroInstance mi = micro_instance(rng, mc.latent_dim, prior.k, prior.drop_rate, 2);
    const LossWeights w{0.02, 0.02, 0.02};

    auto loss = [&] { return inva_total_loss(model, mi.batch, prior, mi.plan, w).total(); };
    loss();
    std::vector<ParamRef> refs = model.parameters();
    for (int c = 0; c < prior.cbar; ++c) {
        for (int i = 0; i < prior.k; ++i) {
            refs.push_back({"sgc.center." + std::to_string(c) + "." + std::to_string(i),
                            &prior.sub_mean[c * prior.k + i],
                            &prior.d_sub_mean[c * prior.k + i]});
        }
        refs.push_back(
            {"sgc.log_var." + std::to_string(c), &prior.log_var[c], &prior.d_log_var[c]});
    }
    const double err = grad_check(loss, views_of(refs), eps);
    return {"inva_total_loss", err, err < threshold};
}

} // namespace

std::vector<GradCheckEntry> run_gradient_suite(double eps, double threshold) {
    return {
        check_density(eps, threshold), check_kl(eps, threshold),
        check_lse(eps, threshold),     check_logdet(eps, threshold),
        check_va_total(eps, threshold), check_inva_total(eps, threshold),
    };
}

} // namespace vattn
