#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vattn/rng.hpp"
#include "vattn/tensor.hpp"

namespace vattn {

enum class Background { none, gradient, clutter, mixed };

// Optional smooth radial shading overlaid on the background: a bowl darkens
// the border, a dome darkens the centre. Drawn at one of three discrete
// per-image strength levels, it is the sub-domain factor of a domain.
enum class Vignette { none, bowl, dome };

std::string to_string(Background b);
Background background_from_string(const std::string& s);

// One synthetic domain: dot-count range, kernel width (a range; equal bounds
// mean a fixed width), background style and sample counts.
struct DomainSpec {
    std::string name;
    int count_min = 0;
    int count_max = 0;
    double sigma_min = 1.0;
    double sigma_max = 1.0;
    Background background = Background::none;
    double bg_amplitude = 0.0;
    int n_train = 1;
    int n_test = 1;
    int height = 32;
    int width = 32;
    // clutter style: per-image bump-size scale and bump orientation (radians)
    // drawn from these ranges
    double clutter_size_min = 1.0;
    double clutter_size_max = 2.5;
    double clutter_theta_min = 0.0;
    double clutter_theta_max = 1.5707963267948966;
    Vignette vignette = Vignette::none;
    double vignette_base = 0.0;
    // rendering gain of the input dots relative to the unit-mass density
    // target (a camera/scale calibration factor; the count of an ambiguous
    // image depends on the domain through it)
    double dot_gain = 1.0;
};

struct DomainSample {
    Tensor input;   // [1,H,W]: density blobs + background + pixel noise
    Tensor density; // [1,H,W]: ground truth, sums exactly to count
    double count = 0.0;
    int label = 0;
    int cl_label = -1; // unset until relabelling
    std::uint64_t sample_id = 0;
};

struct DotRecord {
    std::uint64_t sample_id = 0;
    int label = 0;
    double cx = 0.0;
    double cy = 0.0;
    double sigma = 1.0;
};

struct Dataset {
    std::vector<DomainSample> train;
    std::vector<DomainSample> test;
    std::vector<std::string> domain_names;
    int height = 32;
    int width = 32;
    std::vector<DotRecord> train_dots;
    std::vector<DotRecord> test_dots;
};

// Deterministic generation: every sample is rendered from its own generator
// seeded with mix64(seed, sample_id), so samples may be rendered in parallel
// and regeneration is bitwise identical.
Dataset generate(const std::vector<DomainSpec>& specs, std::uint64_t seed);

// Renders the unit-mass density map for one sample's dots (each kernel is
// renormalised on the grid so it integrates to exactly 1).
Tensor render_density(const std::vector<DotRecord>& dots, int height, int width);

// three_joint: A and Q are deliberately similar, high-count domains (the
// dominant pair); B is a small, low-count, visually distinct domain.
// four_joint adds N, a wide-spectrum domain spanning the others' ranges.
std::vector<DomainSpec> preset_three_joint();
std::vector<DomainSpec> preset_four_joint();
std::vector<DomainSpec> preset_by_name(const std::string& name);

// Flat binary dataset container, little-endian:
//   header {magic "VATN", version u32, n_samples u32, H u32, W u32}
//   per sample {label u8, count f64, input f64[H*W], density f64[H*W]}
void save_samples(const std::string& path, const std::vector<DomainSample>& samples,
                  int height, int width);
std::vector<DomainSample> load_samples(const std::string& path, int* height = nullptr,
                                       int* width = nullptr);

// Dot coordinates as CSV (sample_id,label,cx,cy,sigma) for inspection.
void export_dots_csv(const std::string& path, const std::vector<DotRecord>& dots);
std::vector<DotRecord> import_dots_csv(const std::string& path);

std::vector<std::string> distinct_labels_in_order(const std::vector<DomainSample>& samples,
                                                  const std::vector<std::string>& names);

} // namespace vattn
