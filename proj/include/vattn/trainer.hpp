#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "vattn/gaussian.hpp"
#include "vattn/intrinsic.hpp"
#include "vattn/metrics.hpp"
#include "vattn/model.hpp"
#include "vattn/synth.hpp"

namespace vattn {

enum class TrainMode { it, jt, se, va, inva };

std::string to_string(TrainMode m);
TrainMode train_mode_from_string(const std::string& s);

struct TrainConfig {
    TrainMode mode = TrainMode::jt;
    int epochs = 120;
    int batch_size = 16;
    double lr = 1e-3;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double lr_decay_factor = 2.5;
    int lr_decay_period = 60;
    std::uint64_t seed = 1;
    double lambda_kl = 1.0;
    double lambda_lse = 0.1;
    double lambda_det = 0.1;
    int components = 0; // 0: use the number of distinct labels in the data
    int cbar = 3;
    int k = 3;
    ClusterBackend clustering = ClusterBackend::gmm;
    int latent_dim = 8;
    int se_reduction = 4;

    std::string to_json() const;                     // canonical (sorted keys)
    static TrainConfig from_json(const std::string&); // unknown keys rejected
};

struct LossWeights {
    double kl = 1.0;
    double lse = 0.1;
    double det = 0.1;
};

struct LossTerms {
    double density = 0.0;
    double kl = 0.0;
    double lse = 0.0;
    double det = 0.0;
    double total() const { return density + kl + lse + det; }
};

// 1/(2B) sum_i ||pred_i - gt_i||^2; optional gradient (pred_i - gt_i)/B.
double density_loss(const std::vector<Tensor>& preds, const std::vector<Tensor>& gts, int batch,
                    std::vector<Tensor>* d_preds = nullptr);

struct Batch {
    std::vector<const DomainSample*> samples;
    std::size_t size() const { return samples.size(); }
};

// Pre-drawn noise for one batch: eps vectors first (batch order), then
// dropout keep-masks (batch order). k == 1 consumes no mask draws.
struct NoisePlan {
    std::vector<Tensor> eps;
    std::vector<std::vector<std::uint8_t>> keep_masks;
};
NoisePlan draw_noise_plan(std::size_t batch, std::size_t latent_dim, int k, double drop_rate,
                          Rng& rng);

// Full VA objective: density term + batch means of the KL, separation and
// determinant terms. Zeroes and then fills all gradient accumulators (model
// and prior). The batch may be evaluated sample-parallel; per-sample
// gradients are reduced in sample order so results are thread-independent.
LossTerms va_total_loss(Model& model, const Batch& batch, MixturePrior& prior,
                        const NoisePlan& plan, const LossWeights& weights);
LossTerms va_total_loss(Model& model, const Batch& batch, MixturePrior& prior, Rng& rng,
                        const LossWeights& weights);

// InVA objective: the prior mean of each cluster is the sub-center chosen by
// sgc_select (dropout-gated for the sample's own cluster, raw argmax for the
// others); gradients flow to selected sub-centers only. Requires CL labels.
LossTerms inva_total_loss(Model& model, const Batch& batch, SubGaussianPrior& prior,
                          const NoisePlan& plan, const LossWeights& weights);
LossTerms inva_total_loss(Model& model, const Batch& batch, SubGaussianPrior& prior, Rng& rng,
                          const LossWeights& weights);

// Density-only objective for the IT/JT/SE modes.
LossTerms plain_total_loss(Model& model, const Batch& batch, const NoisePlan& plan);

// Reference Adam (bias-corrected moments, eps = 1e-8).
struct Adam {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::uint64_t t = 0;
    std::vector<Tensor> m, v;

    void init_like(const std::vector<ParamRef>& params);
    void step(const std::vector<ParamRef>& params, double lr);
};

double lr_at_epoch(double lr0, double decay_factor, int decay_period, int epoch);

struct Checkpoint {
    std::vector<std::pair<std::string, Tensor>> tensors;
    std::string config_json;
    Rng::State rng_state{};
    std::uint64_t adam_step = 0;
    int epoch = 0;
};

// Binary container {magic "VACK", version, named float64 tensors, config as
// canonical JSON, rng state}; round-trips bitwise. Writes are atomic
// (temp file + rename).
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

struct TrainedModel {
    Model model;
    std::optional<MixturePrior> prior;
    std::optional<SubGaussianPrior> sub_prior;
};

TrainedModel model_from_checkpoint(const Checkpoint& ckpt);

struct TrainResult {
    Checkpoint checkpoint;
    RunReport report;
    TrainedModel trained;
};

TrainResult train(const TrainConfig& config, const Dataset& data,
                  const Checkpoint* resume = nullptr);

struct DkpnetResult {
    Checkpoint stage1_ckpt;
    Checkpoint stage2_ckpt;
    RunReport stage1;
    RunReport stage2;
    std::vector<std::vector<std::size_t>> contingency; // dataset label x CL label
    std::vector<std::size_t> cluster_sizes;
    TrainedModel stage2_trained;
};

// Two-stage pipeline: Stage-I VA on dataset labels, clustering of the
// Stage-I attention proposals into CL labels, Stage-II InVA on CL labels
// with the backbone re-initialised from the same seed as Stage I and fresh
// attention parameters. `forced_cl_labels` is a test hook that bypasses
// clustering.
DkpnetResult run_dkpnet(const TrainConfig& config, const Dataset& data,
                        const std::vector<int>* forced_cl_labels = nullptr);

// Evaluation helpers (eval-mode forward, pure; parallel over samples).
std::vector<double> predict_counts(const Model& model, const std::vector<DomainSample>& samples);
void fill_domain_metrics(const Model& model, const Dataset& data, RunReport& report);

Dataset filter_domain(const Dataset& data, int label);

// Index pools grouped by the training label (cl_label when use_cl), in order
// of first appearance; the loader picks a pool uniformly per batch slot and
// then a sample uniformly inside it. Grouping by first appearance makes a
// bijective relabeling a no-op for the sample stream.
std::vector<std::vector<std::size_t>> balanced_pools(const std::vector<DomainSample>& samples,
                                                     bool use_cl);

} // namespace vattn
