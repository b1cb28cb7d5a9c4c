#include "vattn/synth.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "vattn/errors.hpp"
#include "vattn/parallel.hpp"

namespace vattn {

std::string to_string(Background b) {
    switch (b) {
    case Background::none: return "none";
    case Background::gradient: return "gradient";
    case Background::clutter: return "clutter";
    case Background::mixed: return "mixed";
    }
    return "none";
}

Background background_from_string(const std::string& s) {
    if (s == "none") return Background::none;
    if (s == "gradient") return Background::gradient;
    if (s == "clutter") return Background::clutter;
    if (s == "mixed") return Background::mixed;
    throw std::invalid_argument("unknown background kind: " + s);
}

Tensor render_density(const std::vector<DotRecord>& dots, int height, int width) {
    Tensor density({1, static_cast<std::size_t>(height), static_cast<std::size_t>(width)});
    std::vector<double> kernel(static_cast<std::size_t>(height) * width);
    for (const auto& dot : dots) {
        const double inv2s2 = 1.0 / (2.0 * dot.sigma * dot.sigma);
        double total = 0.0;
        std::size_t idx = 0;
        for (int h = 0; h < height; ++h) {
            const double dy = (h + 0.5) - dot.cy;
            for (int w = 0; w < width; ++w, ++idx) {
                const double dx = (w + 0.5) - dot.cx;
                kernel[idx] = std::exp(-(dx * dx + dy * dy) * inv2s2);
                total += kernel[idx];
            }
        }
        // renormalise on the discrete grid so each kernel has unit mass
        const double inv = 1.0 / total;
        for (std::size_t i = 0; i < kernel.size(); ++i) {
            density[i] += kernel[i] * inv;
        }
    }
    return density;
}

namespace {

struct RenderJob {
    const DomainSpec* spec;
    int label;
    std::uint64_t sample_id;
};

void render_sample(const RenderJob& job, std::uint64_t run_seed, DomainSample& out,
                   std::vector<DotRecord>& dots_out) {
    const DomainSpec& spec = *job.spec;
    const int h = spec.height, w = spec.width;
    Rng rng(mix64(run_seed, job.sample_id));

    // fixed per-sample draw order: sigma, count, dot positions, background,
    // pixel noise
    const double su = rng.uniform();
    const double sigma = spec.sigma_min + su * (spec.sigma_max - spec.sigma_min);
    const int span = spec.count_max - spec.count_min + 1;
    const int count = spec.count_min + static_cast<int>(rng.uniform_int(span));

    dots_out.clear();
    dots_out.reserve(count);
    for (int i = 0; i < count; ++i) {
        DotRecord dot;
        dot.sample_id = job.sample_id;
        dot.label = job.label;
        dot.cx = rng.uniform() * w;
        dot.cy = rng.uniform() * h;
        dot.sigma = sigma;
        dots_out.push_back(dot);
    }

    out.density = render_density(dots_out, h, w);
    out.count = static_cast<double>(count);
    out.label = job.label;
    out.cl_label = -1;
    out.sample_id = job.sample_id;

    Tensor bg({1, static_cast<std::size_t>(h), static_cast<std::size_t>(w)});
    Background kind = spec.background;
    if (kind == Background::mixed) {
        switch (rng.uniform_int(3)) {
        case 0: kind = Background::none; break;
        case 1: kind = Background::gradient; break;
        default: kind = Background::clutter; break;
        }
    }
    if (kind == Background::gradient) {
        // three discrete ramp-direction styles per domain, jittered: the
        // sub-domain structure within a gradient-background domain
        const int style = static_cast<int>(rng.uniform_int(3));
        static constexpr double kC1[3] = {1.0, 0.12, 0.55};
        static constexpr double kC2[3] = {0.12, 1.0, 0.55};
        const double c0 = 0.15 + 0.2 * rng.uniform();
        const double c1 = kC1[style] + 0.08 * (rng.uniform() - 0.5);
        const double c2 = kC2[style] + 0.08 * (rng.uniform() - 0.5);
        const double norm = std::max(c0 + c1 + c2, 1e-9);
        std::size_t idx = 0;
        for (int y = 0; y < h; ++y) {
            const double hn = h > 1 ? static_cast<double>(y) / (h - 1) : 0.0;
            for (int x = 0; x < w; ++x, ++idx) {
                const double wn = w > 1 ? static_cast<double>(x) / (w - 1) : 0.0;
                bg[idx] = spec.bg_amplitude * (c0 + c1 * wn + c2 * hn) / norm;
            }
        }
    } else if (kind == Background::clutter) {
        // three discrete clutter styles per domain (bump size, amplitude and
        // stroke orientation), jittered per image: the sub-domain structure
        // within a clutter-background domain
        const int style = static_cast<int>(rng.uniform_int(3));
        static constexpr double kSizeAt[3] = {0.15, 0.5, 0.85};
        static constexpr double kAmpAt[3] = {0.7, 1.0, 1.3};
        static constexpr double kThetaAt[3] = {0.1, 0.5, 0.9};
        const int bumps = 3 + static_cast<int>(rng.uniform_int(4));
        const double size_scale =
            (spec.clutter_size_min +
             (spec.clutter_size_max - spec.clutter_size_min) * kSizeAt[style]) *
            (0.9 + 0.2 * rng.uniform());
        const double amp_scale =
            spec.bg_amplitude * kAmpAt[style] * (0.85 + 0.3 * rng.uniform());
        const double theta_img =
            spec.clutter_theta_min +
            (spec.clutter_theta_max - spec.clutter_theta_min) * kThetaAt[style] +
            0.08 * (rng.uniform() - 0.5);
        for (int bIdx = 0; bIdx < bumps; ++bIdx) {
            const double cx = rng.uniform() * w;
            const double cy = rng.uniform() * h;
            const double bsig = size_scale * (0.8 + 0.4 * rng.uniform());
            const double amp = amp_scale * (0.7 + 0.3 * rng.uniform());
            const double theta = theta_img + 0.15 * (rng.uniform() - 0.5);
            // anisotropic stroke: elongated along theta
            const double sig_long = bsig * 1.6;
            const double sig_short = bsig * 0.6;
            const double ct = std::cos(theta), st = std::sin(theta);
            const double inv_l = 1.0 / (2.0 * sig_long * sig_long);
            const double inv_s = 1.0 / (2.0 * sig_short * sig_short);
            std::size_t idx = 0;
            for (int y = 0; y < h; ++y) {
                const double dy = (y + 0.5) - cy;
                for (int x = 0; x < w; ++x, ++idx) {
                    const double dx = (x + 0.5) - cx;
                    const double xr = ct * dx + st * dy;
                    const double yr = -st * dx + ct * dy;
                    bg[idx] += amp * std::exp(-(xr * xr * inv_l + yr * yr * inv_s));
                }
            }
        }
    }

    if (spec.vignette != Vignette::none && spec.vignette_base > 0.0) {
        // three discrete strength levels, lightly jittered
        static constexpr double kLevel[3] = {0.5, 1.0, 1.5};
        const int level = static_cast<int>(rng.uniform_int(3));
        const double v =
            spec.vignette_base * kLevel[level] * (0.9 + 0.2 * rng.uniform());
        const double cx = 0.5 * w, cy = 0.5 * h;
        const double inv_r2 = 1.0 / (cx * cx + cy * cy);
        std::size_t idx = 0;
        for (int y = 0; y < h; ++y) {
            const double dy = (y + 0.5) - cy;
            for (int x = 0; x < w; ++x, ++idx) {
                const double dx = (x + 0.5) - cx;
                const double r2 = (dx * dx + dy * dy) * inv_r2;
                bg[idx] += spec.vignette == Vignette::bowl ? v * r2 : v * (1.0 - r2);
            }
        }
    }

    out.input = Tensor({1, static_cast<std::size_t>(h), static_cast<std::size_t>(w)});
    for (std::size_t i = 0; i < out.input.size(); ++i) {
        out.input[i] = spec.dot_gain * out.density[i] + bg[i] + 0.1 * rng.normal();
    }
}

void render_split(const std::vector<RenderJob>& jobs, std::uint64_t seed,
                  std::vector<DomainSample>& samples, std::vector<DotRecord>& dots) {
    samples.resize(jobs.size());
    std::vector<std::vector<DotRecord>> per_sample(jobs.size());
    parallel_for(jobs.size(), [&](std::size_t i) {
        render_sample(jobs[i], seed, samples[i], per_sample[i]);
    });
    dots.clear();
    for (const auto& d : per_sample) {
        dots.insert(dots.end(), d.begin(), d.end());
    }
}

} // namespace

Dataset generate(const std::vector<DomainSpec>& specs, std::uint64_t seed) {
    if (specs.empty()) {
        throw std::invalid_argument("generate: no domain specs");
    }
    for (const auto& spec : specs) {
        if (spec.count_min < 0 || spec.count_min > spec.count_max) {
            throw std::invalid_argument("generate: bad count range for " + spec.name);
        }
        if (spec.count_max > spec.height * spec.width) {
            throw std::invalid_argument("generate: count range exceeds grid capacity for " +
                                        spec.name);
        }
        if (spec.sigma_min <= 0.0 || spec.sigma_max < spec.sigma_min) {
            throw std::invalid_argument("generate: bad sigma range for " + spec.name);
        }
        if (spec.n_train < 1 || spec.n_test < 1) {
            throw std::invalid_argument("generate: need n_train, n_test >= 1 for " + spec.name);
        }
    }

    Dataset ds;
    ds.height = specs[0].height;
    ds.width = specs[0].width;
    for (const auto& spec : specs) {
        ds.domain_names.push_back(spec.name);
    }

    std::uint64_t next_id = 0;
    std::vector<RenderJob> train_jobs, test_jobs;
    for (std::size_t d = 0; d < specs.size(); ++d) {
        for (int i = 0; i < specs[d].n_train; ++i) {
            train_jobs.push_back({&specs[d], static_cast<int>(d), next_id++});
        }
    }
    for (std::size_t d = 0; d < specs.size(); ++d) {
        for (int i = 0; i < specs[d].n_test; ++i) {
            test_jobs.push_back({&specs[d], static_cast<int>(d), next_id++});
        }
    }
    render_split(train_jobs, seed, ds.train, ds.train_dots);
    render_split(test_jobs, seed, ds.test, ds.test_dots);
    return ds;
}

std::vector<DomainSpec> preset_three_joint() {
    // A and Q share the clutter style family (same size and amplitude
    // statistics, so they stay each other's closest neighbours and form the
    // dominant pair) but differ in stroke orientation, a count-irrelevant
    // appearance cue
    // A and Q share clutter and vignette statistics (the vignette level is a
    // pure within-domain nuisance) but render their dots at different gains,
    // the scale-calibration analogue that makes domain identity matter for
    // counting; B is small, dim-dotted and visually distinct
    DomainSpec a{"A", 20, 60, 1.0, 1.0, Background::clutter, 0.3,
                 300, 100, 32, 32, 1.0, 2.5, 0.0, 0.7,
                 Vignette::bowl, 0.06, 0.7};
    DomainSpec q{"Q", 40, 120, 0.8, 0.8, Background::clutter, 0.3,
                 400, 100, 32, 32, 1.0, 2.5, 0.87, 1.57,
                 Vignette::bowl, 0.06, 1.3};
    DomainSpec b{"B", 1, 10, 2.0, 2.0, Background::gradient, 0.5,
                 150, 100, 32, 32, 1.0, 2.5, 0.0, 1.57,
                 Vignette::none, 0.0, 1.0};
    return {a, q, b};
}

std::vector<DomainSpec> preset_four_joint() {
    auto specs = preset_three_joint();
    DomainSpec n{"N", 1, 120, 0.8, 2.0, Background::mixed, 0.3,
                 500, 100, 32, 32, 1.0, 2.5, 0.0, 1.57,
                 Vignette::none, 0.0, 1.0};
    specs.push_back(n);
    return specs;
}

std::vector<DomainSpec> preset_by_name(const std::string& name) {
    if (name == "three_joint") {
        return preset_three_joint();
    }
    if (name == "four_joint") {
        return preset_four_joint();
    }
    throw std::invalid_argument("unknown preset: " + name);
}

namespace {

void put_u32(std::string& buf, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) {
        buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
}

void put_f64(std::string& buf, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    for (int i = 0; i < 8; ++i) {
        buf.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
    }
}

struct Reader {
    const unsigned char* p;
    const unsigned char* end;
    std::uint32_t u32() {
        if (end - p < 4) {
            throw DegenerateDataError("dataset file truncated");
        }
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) {
            v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
        }
        p += 4;
        return v;
    }
    std::uint8_t u8() {
        if (end - p < 1) {
            throw DegenerateDataError("dataset file truncated");
        }
        return *p++;
    }
    double f64() {
        if (end - p < 8) {
            throw DegenerateDataError("dataset file truncated");
        }
        std::uint64_t bits = 0;
        for (int i = 0; i < 8; ++i) {
            bits |= static_cast<std::uint64_t>(p[i]) << (8 * i);
        }
        p += 8;
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }
};

} // namespace

void save_samples(const std::string& path, const std::vector<DomainSample>& samples,
                  int height, int width) {
    std::string buf;
    buf.reserve(16 + samples.size() * (9 + 16 * height * width));
    buf.append("VATN");
    put_u32(buf, 1);
    put_u32(buf, static_cast<std::uint32_t>(samples.size()));
    put_u32(buf, static_cast<std::uint32_t>(height));
    put_u32(buf, static_cast<std::uint32_t>(width));
    for (const auto& s : samples) {
        buf.push_back(static_cast<char>(s.label));
        put_f64(buf, s.count);
        for (std::size_t i = 0; i < s.input.size(); ++i) {
            put_f64(buf, s.input[i]);
        }
        for (std::size_t i = 0; i < s.density.size(); ++i) {
            put_f64(buf, s.density[i]);
        }
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw DegenerateDataError("cannot open for writing: " + path);
    }
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

std::vector<DomainSample> load_samples(const std::string& path, int* height, int* width) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DegenerateDataError("cannot open dataset: " + path);
    }
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (buf.size() < 20 || buf.compare(0, 4, "VATN") != 0) {
        throw DegenerateDataError("not a VATN dataset: " + path);
    }
    Reader r{reinterpret_cast<const unsigned char*>(buf.data()) + 4,
             reinterpret_cast<const unsigned char*>(buf.data()) + buf.size()};
    const std::uint32_t version = r.u32();
    if (version != 1) {
        throw DegenerateDataError("unsupported VATN version");
    }
    const std::uint32_t n = r.u32();
    const std::uint32_t h = r.u32();
    const std::uint32_t w = r.u32();
    if (height) {
        *height = static_cast<int>(h);
    }
    if (width) {
        *width = static_cast<int>(w);
    }
    std::vector<DomainSample> samples(n);
    for (std::uint32_t i = 0; i < n; ++i) {
        DomainSample& s = samples[i];
        s.label = r.u8();
        s.count = r.f64();
        s.input = Tensor({1, h, w});
        for (std::size_t j = 0; j < s.input.size(); ++j) {
            s.input[j] = r.f64();
        }
        s.density = Tensor({1, h, w});
        for (std::size_t j = 0; j < s.density.size(); ++j) {
            s.density[j] = r.f64();
        }
        s.sample_id = i;
        s.cl_label = -1;
    }
    return samples;
}

void export_dots_csv(const std::string& path, const std::vector<DotRecord>& dots) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw DegenerateDataError("cannot open for writing: " + path);
    }
    out << "sample_id,label,cx,cy,sigma\n";
    char line[160];
    for (const auto& d : dots) {
        std::snprintf(line, sizeof(line), "%llu,%d,%.17g,%.17g,%.17g\n",
                      static_cast<unsigned long long>(d.sample_id), d.label, d.cx, d.cy,
                      d.sigma);
        out << line;
    }
}

std::vector<DotRecord> import_dots_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw DegenerateDataError("cannot open dots csv: " + path);
    }
    std::string line;
    if (!std::getline(in, line)) {
        throw DegenerateDataError("empty dots csv: " + path);
    }
    std::vector<DotRecord> dots;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        DotRecord d;
        unsigned long long id = 0;
        if (std::sscanf(line.c_str(), "%llu,%d,%lf,%lf,%lf", &id, &d.label, &d.cx, &d.cy,
                        &d.sigma) != 5) {
            throw DegenerateDataError("malformed dots csv line: " + line);
        }
        d.sample_id = id;
        dots.push_back(d);
    }
    return dots;
}

std::vector<std::string> distinct_labels_in_order(const std::vector<DomainSample>& samples,
                                                  const std::vector<std::string>& names) {
    std::vector<int> seen;
    std::vector<std::string> out;
    for (const auto& s : samples) {
        bool found = false;
        for (int l : seen) {
            if (l == s.label) {
                found = true;
                break;
            }
        }
        if (!found) {
            seen.push_back(s.label);
            if (s.label >= 0 && static_cast<std::size_t>(s.label) < names.size()) {
                out.push_back(names[s.label]);
            } else {
                out.push_back("domain" + std::to_string(s.label));
            }
        }
    }
    return out;
}

} // namespace vattn
