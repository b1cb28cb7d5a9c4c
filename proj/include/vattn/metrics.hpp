#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "vattn/intrinsic.hpp"
#include "vattn/tensor.hpp"

namespace vattn {

// Crowd-counting convention: MAE = mean |error|, MSE = root mean squared
// error (the paper's comparison tables are only consistent with the RMS
// reading).
std::pair<double, double> mae_mse(const std::vector<double>& pred,
                                  const std::vector<double>& gt);

// Count estimate of a density map: the sum of all entries.
double predicted_count(const Tensor& density);

// Mean silhouette coefficient with Euclidean distance; members of singleton
// clusters contribute 0. Requires at least two distinct labels.
double silhouette(const std::vector<Tensor>& points, const std::vector<int>& labels);

// Permutation-invariant agreement between two labelings, in [-1, 1].
double adjusted_rand_index(const std::vector<int>& a, const std::vector<int>& b);

struct SubdomainReport {
    // cosine[c] is the k x k similarity matrix of cluster c's sub-centers
    std::vector<std::vector<std::vector<double>>> cosine;
    // counts[c][i]: training samples whose eval-mode selection picked (c, i)
    std::vector<std::vector<std::size_t>> counts;

    double mean_offdiag_cosine() const;
    bool all_occupied() const;
};

// selections: per sample (cluster label, selected sub-center index).
SubdomainReport subdomain_report(const SubGaussianPrior& prior,
                                 const std::vector<std::pair<int, int>>& selections);

// Eval-mode (cluster, sub-center) selections over a sample set; requires
// cl_labels to be set.
std::vector<std::pair<int, int>> collect_selections(const Model& model,
                                                    const SubGaussianPrior& prior,
                                                    const std::vector<DomainSample>& samples);

// Everything a finished run reports. Serialised as JSON (machine) plus CSV
// tables (human); the timestamp is confined to its own line of the JSON.
struct RunReport {
    std::string mode;
    std::string config_json;
    std::uint64_t seed = 0;
    double wall_clock_sec = 0.0;
    std::string timestamp;

    std::vector<std::string> domains;
    std::vector<double> mae;
    std::vector<double> mse;

    std::vector<double> trace_total;
    std::vector<double> trace_density;
    std::vector<double> trace_kl;
    std::vector<double> trace_lse;
    std::vector<double> trace_det;

    bool has_silhouette = false;
    double silhouette_by_domain = 0.0;

    std::vector<std::vector<std::size_t>> contingency; // dataset label x CL label
    std::vector<std::size_t> cluster_sizes;

    bool has_subdomain = false;
    SubdomainReport subdomain;
};

} // namespace vattn
