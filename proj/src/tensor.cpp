#include "vattn/tensor.hpp"

#include <cmath>
#include <stdexcept>
#include <utility>

namespace vattn {

namespace {

std::size_t checked_numel(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) {
        n *= d;
    }
    return n;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b)) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch");
    }
}

} // namespace

Tensor::Tensor(std::vector<std::size_t> shape)
    : shape_(std::move(shape)), data_(checked_numel(shape_), 0.0) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    if (checked_numel(shape_) != data_.size()) {
        throw std::invalid_argument("Tensor: shape does not match data length");
    }
}

Tensor Tensor::zeros(std::vector<std::size_t> shape) {
    return Tensor(std::move(shape));
}

Tensor Tensor::full(std::vector<std::size_t> shape, double value) {
    Tensor t(std::move(shape));
    t.fill(value);
    return t;
}

bool Tensor::all_finite() const {
    for (double v : data_) {
        if (!std::isfinite(v)) {
            return false;
        }
    }
    return true;
}

void Tensor::fill(double value) {
    for (double& v : data_) {
        v = value;
    }
}

Tensor gaussian_sample(Rng& rng, const std::vector<std::size_t>& shape) {
    if (shape.empty()) {
        throw std::invalid_argument("gaussian_sample: empty shape");
    }
    for (std::size_t d : shape) {
        if (d == 0) {
            throw std::invalid_argument("gaussian_sample: zero-sized dimension");
        }
    }
    Tensor t(shape);
    for (std::size_t i = 0; i < t.size(); ++i) {
        t[i] = rng.normal();
    }
    return t;
}

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) {
        out[i] = a[i] + b[i];
    }
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) {
        out[i] = a[i] - b[i];
    }
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) {
        out[i] = a[i] * b[i];
    }
    return out;
}

Tensor exp(const Tensor& a) {
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) {
        out[i] = std::exp(a[i]);
    }
    return out;
}

Tensor log(const Tensor& a) {
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) {
        out[i] = std::log(a[i]);
    }
    return out;
}

Tensor sigmoid(const Tensor& a) {
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) {
        out[i] = sigmoid_stable(a[i]);
    }
    return out;
}

Tensor matvec(const Tensor& m, const Tensor& v) {
    if (m.rank() != 2 || v.rank() != 1 || m.dim(1) != v.dim(0)) {
        throw std::invalid_argument("matvec: shape mismatch");
    }
    const std::size_t rows = m.dim(0), cols = m.dim(1);
    Tensor out({rows});
    for (std::size_t r = 0; r < rows; ++r) {
        double acc = 0.0;
        const double* row = m.data() + r * cols;
        for (std::size_t c = 0; c < cols; ++c) {
            acc += row[c] * v[c];
        }
        out[r] = acc;
    }
    return out;
}

double sum(const Tensor& a) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        acc += a[i];
    }
    return acc;
}

double mean(const Tensor& a) {
    if (a.size() == 0) {
        throw std::invalid_argument("mean: empty tensor");
    }
    return sum(a) / static_cast<double>(a.size());
}

double dot(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "dot");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        acc += a[i] * b[i];
    }
    return acc;
}

Tensor global_avg_pool(const Tensor& x) {
    if (x.rank() != 3) {
        throw std::invalid_argument("global_avg_pool: expected [C,H,W]");
    }
    const std::size_t c = x.dim(0), hw = x.dim(1) * x.dim(2);
    Tensor out({c});
    for (std::size_t ch = 0; ch < c; ++ch) {
        double acc = 0.0;
        const double* p = x.data() + ch * hw;
        for (std::size_t i = 0; i < hw; ++i) {
            acc += p[i];
        }
        out[ch] = acc / static_cast<double>(hw);
    }
    return out;
}

Tensor channelwise_product(const Tensor& x, const Tensor& y) {
    if (x.rank() != 3 || y.rank() != 1 || x.dim(0) != y.dim(0)) {
        throw std::invalid_argument("channelwise_product: expected x [C,H,W], y [C]");
    }
    const std::size_t c = x.dim(0), hw = x.dim(1) * x.dim(2);
    Tensor out(x.shape());
    for (std::size_t ch = 0; ch < c; ++ch) {
        const double g = y[ch];
        const double* in = x.data() + ch * hw;
        double* o = out.data() + ch * hw;
        for (std::size_t i = 0; i < hw; ++i) {
            o[i] = in[i] * g;
        }
    }
    return out;
}

double sigmoid_stable(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double softplus_stable(double x) {
    if (x > 30.0) {
        return x;
    }
    if (x < -30.0) {
        return std::exp(x);
    }
    return std::log1p(std::exp(x));
}

} // namespace vattn
