#pragma once

#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

#include "iclsynth/errors.hpp"
#include "iclsynth/rng.hpp"

namespace icls {

// Dense row-major f64 tensor with value semantics. Shapes are checked at the
// operation boundaries; the flat data buffer is what the kernel layer sees.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> shape);
    Tensor(std::vector<std::size_t> shape, std::vector<double> values);

    static Tensor scalar(double v);
    static Tensor zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }
    static Tensor full(std::vector<std::size_t> shape, double v);
    static Tensor randn(std::vector<std::size_t> shape, Rng& rng, double stddev = 1.0);

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t numel() const { return data_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
    double at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
    double& at(std::size_t i, std::size_t j, std::size_t k) {
        return data_[(i * shape_[1] + j) * shape_[2] + k];
    }
    double at(std::size_t i, std::size_t j, std::size_t k) const {
        return data_[(i * shape_[1] + j) * shape_[2] + k];
    }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    Tensor reshaped(std::vector<std::size_t> new_shape) const;
    std::string shape_str() const;

    void fill(double v);
    bool all_finite() const;

private:
    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

std::string shape_to_string(const std::vector<std::size_t>& shape);

// Eager elementwise/matrix helpers (kernel-backed, no autodiff).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double alpha);
// a + alpha * b
Tensor add_scaled(const Tensor& a, double alpha, const Tensor& b);
double dot_flat(const Tensor& a, const Tensor& b);
double sum_all(const Tensor& a);
double mean_all(const Tensor& a);
double sq_diff_mean(const Tensor& a, const Tensor& b);

// Standard matrix product of 2-D tensors; throws ShapeError naming both
// shapes on a mismatch.
Tensor matmul(const Tensor& a, const Tensor& b);

// Numerically stabilized softmax along `axis` (negative counts from the back).
Tensor softmax(const Tensor& x, int axis);

// Per-row normalization over the last axis followed by gain/bias; epsilon 1e-5.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias);

}  // namespace icls
