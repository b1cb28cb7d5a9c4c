#pragma once

#include <cstdint>
#include <vector>

#include "vattn/rng.hpp"
#include "vattn/tensor.hpp"

namespace vattn {

// Diagonal Gaussian N(mean, diag(exp(log_var))).
struct GaussianParams {
    Tensor mean;    // [d]
    Tensor log_var; // [d]

    std::size_t dim() const { return mean.size(); }
};

void validate(const GaussianParams& g);

// Learnable equal-weight Gaussian mixture prior over the latent z: C
// components, fixed weights 1/C. Component means are initialised to random
// unit vectors so the separation regularizer is informative from step 0;
// log-variances start at zero.
struct MixturePrior {
    std::vector<Tensor> mean;      // C x [d]
    std::vector<Tensor> log_var;   // C x [d]
    std::vector<Tensor> d_mean;    // gradient accumulators
    std::vector<Tensor> d_log_var;

    int components() const { return static_cast<int>(mean.size()); }
    std::size_t dim() const { return mean.empty() ? 0 : mean[0].size(); }
    double weight() const { return 1.0 / static_cast<double>(components()); }
    GaussianParams component(int c) const { return {mean[c], log_var[c]}; }
    void zero_grads();

    static MixturePrior init(int components, std::size_t dim, Rng& rng);
};

// Draws one component mean for prior initialisation: i.i.d. N(0, 1/d),
// normalised to unit length. Shared with the sub-Gaussian prior.
Tensor draw_unit_center(std::size_t dim, Rng& rng);

// log-variances are clamped to [-30, 30] before exponentiation inside the KL
// terms; every clamp event increments a diagnostics counter.
std::uint64_t logvar_clamp_count();
void reset_logvar_clamp_count();

// KL(q || p) between diagonal Gaussians, plus gradients w.r.t. both
// parameter sets:
//   1/2 sum_i [ (lv_p - lv_q) - 1 + exp(lv_q - lv_p)
//               + (mu_p - mu_q)^2 * exp(-lv_p) ]
struct KlResult {
    double value = 0.0;
    Tensor d_q_mean, d_q_log_var;
    Tensor d_p_mean, d_p_log_var;
};
KlResult kl_diag_gaussian(const GaussianParams& q, const GaussianParams& p);

// KL against the labelled mixture component (the loss conditions the prior
// on the domain label; the full mixture density is never needed).
KlResult kl_to_component(const GaussianParams& q, const MixturePrior& prior, int label);

// z = mean + exp(log_var / 2) * eps, eps ~ N(0, I).
Tensor reparameterize(const GaussianParams& q, Rng& rng);
Tensor reparameterize_with(const GaussianParams& q, const Tensor& eps);

// Separation regularizer: log sum_i exp(z.u_i - z.u_c), the smooth upper
// bound on max_i(z.u_i - z.u_c), computed with max subtraction. The result
// is >= 0 because the i = c term contributes exp(0).
struct LseResult {
    double value = 0.0;
    Tensor d_z;
    std::vector<Tensor> d_centers;
};
LseResult lse_regularizer(const Tensor& z, const std::vector<Tensor>& centers, int label);

// Determinant regularizer log^2(det(Sigma)) = (sum_i log_var_i)^2 for a
// diagonal covariance; constrains the determinant only, not the shape.
struct LogDetResult {
    double value = 0.0;
    Tensor d_log_var;
};
LogDetResult logdet_regularizer(const GaussianParams& p);

} // namespace vattn
