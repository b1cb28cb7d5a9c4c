#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vattn/model.hpp"
#include "vattn/rng.hpp"
#include "vattn/synth.hpp"
#include "vattn/tensor.hpp"

namespace vattn {

enum class ClusterBackend { gmm, kmeans };

std::string to_string(ClusterBackend b);
ClusterBackend cluster_backend_from_string(const std::string& s);

struct ClusterConfig {
    int max_iters = 200;
    double tol = 1e-6; // relative log-likelihood change
    double var_floor = 1e-6;
    int n_init = 5;
    ClusterBackend backend = ClusterBackend::gmm;
};

// Fitted diagonal mixture (or k-means centroids behind the same interface;
// for k-means the trace holds the negated within-cluster sum of squares).
struct ClusterModel {
    std::vector<Tensor> means;
    std::vector<Tensor> vars; // diagonal
    std::vector<double> weights;
    std::vector<double> loglik_trace;
    int iterations = 0;
    ClusterBackend backend = ClusterBackend::gmm;

    int components() const { return static_cast<int>(means.size()); }
};

// EM fit of a diagonal GMM, best of n_init restarts by final log-likelihood
// (ties: lowest restart index). Throws std::invalid_argument when there are
// fewer points than components and DegenerateDataError when all points are
// identical.
ClusterModel fit_gmm(const std::vector<Tensor>& points, int components, Rng& rng,
                     const ClusterConfig& config = {});

// Argmax posterior responsibility per point; ties break to the lowest
// component index. For the k-means backend: nearest centroid.
std::vector<int> assign_cl_labels(const ClusterModel& model, const std::vector<Tensor>& points);

// k learnable sub-centers per clustered domain; one shared log-variance per
// cluster. The effective prior mean for a sample is the sub-center whose
// (dropout-perturbed, in train mode) inner product with u_phi is largest.
struct SubGaussianPrior {
    int cbar = 0;
    int k = 1;
    std::size_t dim = 0;
    double drop_rate = 0.2;
    std::vector<Tensor> sub_mean;  // cbar*k entries, index c*k + i
    std::vector<Tensor> log_var;   // cbar entries
    std::vector<Tensor> d_sub_mean;
    std::vector<Tensor> d_log_var;

    const Tensor& center(int c, int i) const { return sub_mean[c * k + i]; }
    void zero_grads();

    static SubGaussianPrior init(int cbar, int k, std::size_t dim, Rng& rng);
};

struct SgcSelection {
    int index = 0;       // winning sub-center within the cluster
    double score = 0.0;  // winning (possibly dropout-scaled) score
};

// Core selection with an explicit keep-mask (one byte per sub-center,
// nonzero = kept). Dropped scores become 0, survivors are scaled by
// 1/(1-drop_rate); ties break to the lowest index. Gradients flow to the
// selected sub-center only.
SgcSelection sgc_select_masked(const SubGaussianPrior& prior, int cluster, const Tensor& u_phi,
                               const std::vector<std::uint8_t>& keep_mask);

// Train mode draws the keep-mask from rng (k uniforms, kept when u >=
// drop_rate) unless k == 1, which consumes nothing; eval mode is a plain
// argmax of raw scores.
SgcSelection sgc_select(const SubGaussianPrior& prior, int cluster, const Tensor& u_phi,
                        Rng& rng, Mode mode);

std::vector<std::uint8_t> draw_keep_mask(int k, double drop_rate, Rng& rng);

// Runs the Stage-I model in eval mode over all samples, clusters the gate
// vectors into kbar CL labels and writes them into the samples. Returns the
// cluster-size histogram.
std::vector<std::size_t> relabel_dataset(const Model& stage1, std::vector<DomainSample>& samples,
                                         int kbar, Rng& rng, const ClusterConfig& config = {});

// Eval-mode gate vectors for a set of samples (pure, parallel over samples).
std::vector<Tensor> collect_gates(const Model& model, const std::vector<DomainSample>& samples);

} // namespace vattn
