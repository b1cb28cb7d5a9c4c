#pragma once

#include <cstddef>
#include <vector>

#include "vattn/rng.hpp"

namespace vattn {

// Dense row-major float64 array with shape metadata. Operations return new
// tensors; once constructed a tensor is treated as an immutable value and is
// safe to share read-only across threads.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> shape); // zero-filled
    Tensor(std::vector<std::size_t> shape, std::vector<double> data);

    static Tensor zeros(std::vector<std::size_t> shape);
    static Tensor full(std::vector<std::size_t> shape, double value);

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_[i]; }
    std::size_t size() const { return data_.size(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& vec() { return data_; }
    const std::vector<double>& vec() const { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    // [C,H,W] indexing
    double& at(std::size_t c, std::size_t h, std::size_t w) {
        return data_[(c * shape_[1] + h) * shape_[2] + w];
    }
    double at(std::size_t c, std::size_t h, std::size_t w) const {
        return data_[(c * shape_[1] + h) * shape_[2] + w];
    }
    // [R,C] indexing
    double& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
    double at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    bool all_finite() const;
    void fill(double value);

private:
    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

// i.i.d. standard-normal tensor; advances rng. Empty or zero-sized shapes are
// rejected.
Tensor gaussian_sample(Rng& rng, const std::vector<std::size_t>& shape);

// Elementwise primitives; shape mismatch throws std::invalid_argument.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sigmoid(const Tensor& a);

// m: [R,C], v: [C] -> [R]
Tensor matvec(const Tensor& m, const Tensor& v);

double sum(const Tensor& a);
double mean(const Tensor& a);
double dot(const Tensor& a, const Tensor& b);

// x: [C,H,W] -> [C], mean over the spatial axes
Tensor global_avg_pool(const Tensor& x);

// x: [C,H,W], y: [C] -> x with every (h,w) of channel c scaled by y[c]
Tensor channelwise_product(const Tensor& x, const Tensor& y);

// Numerically stable scalar helpers shared across the library.
double sigmoid_stable(double x);
double softplus_stable(double x);

} // namespace vattn
