#include "iclsynth/tensor.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "iclsynth/kernels.hpp"

namespace icls {
namespace {

std::size_t shape_numel(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape)
    : shape_(std::move(shape)), data_(shape_numel(shape_), 0.0) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
    if (data_.size() != shape_numel(shape_)) {
        throw ShapeError("tensor value count " + std::to_string(data_.size()) +
                         " does not match shape " + shape_to_string(shape_));
    }
}

Tensor Tensor::scalar(double v) { return Tensor({}, {v}); }

Tensor Tensor::full(std::vector<std::size_t> shape, double v) {
    Tensor t(std::move(shape));
    t.fill(v);
    return t;
}

Tensor Tensor::randn(std::vector<std::size_t> shape, Rng& rng, double stddev) {
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = stddev * rng.gaussian();
    return t;
}

Tensor Tensor::reshaped(std::vector<std::size_t> new_shape) const {
    if (shape_numel(new_shape) != numel()) {
        throw ShapeError("cannot reshape " + shape_to_string(shape_) + " to " +
                         shape_to_string(new_shape));
    }
    return Tensor(std::move(new_shape), data_);
}

std::string Tensor::shape_str() const { return shape_to_string(shape_); }

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const {
    for (double v : data_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

std::string shape_to_string(const std::vector<std::size_t>& shape) {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << "x";
        os << shape[i];
    }
    os << ")";
    return os.str();
}

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b)) {
        throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " +
                         b.shape_str());
    }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    Tensor out(a.shape());
    kern::active().add(out.data(), a.data(), b.data(), a.numel());
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    Tensor out(a.shape());
    kern::active().sub(out.data(), a.data(), b.data(), a.numel());
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    Tensor out(a.shape());
    kern::active().mul(out.data(), a.data(), b.data(), a.numel());
    return out;
}

Tensor scale(const Tensor& a, double alpha) {
    Tensor out(a.shape());
    kern::active().scale(out.data(), alpha, a.data(), a.numel());
    return out;
}

Tensor add_scaled(const Tensor& a, double alpha, const Tensor& b) {
    require_same_shape(a, b, "add_scaled");
    Tensor out = a;
    kern::active().axpy(out.data(), alpha, b.data(), b.numel());
    return out;
}

double dot_flat(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "dot_flat");
    return kern::active().dot(a.data(), b.data(), a.numel());
}

double sum_all(const Tensor& a) { return kern::active().sum(a.data(), a.numel()); }

double mean_all(const Tensor& a) {
    if (a.numel() == 0) throw ShapeError("mean_all: empty tensor");
    return sum_all(a) / static_cast<double>(a.numel());
}

double sq_diff_mean(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sq_diff_mean");
    if (a.numel() == 0) throw ShapeError("sq_diff_mean: empty tensor");
    return kern::active().sq_diff_sum(a.data(), b.data(), a.numel()) /
           static_cast<double>(a.numel());
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        throw ShapeError("matmul: incompatible shapes " + a.shape_str() + " and " +
                         b.shape_str());
    }
    Tensor out({a.dim(0), b.dim(1)});
    kern::active().matmul_acc(out.data(), a.data(), b.data(), a.dim(0), a.dim(1), b.dim(1));
    return out;
}

Tensor softmax(const Tensor& x, int axis) {
    const int r = static_cast<int>(x.rank());
    if (r == 0) throw ShapeError("softmax: scalar input");
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r) {
        throw ShapeError("softmax: axis out of range for shape " + x.shape_str());
    }
    const std::size_t axis_len = x.dim(static_cast<std::size_t>(axis));
    std::size_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= x.dim(static_cast<std::size_t>(i));
    for (int i = axis + 1; i < r; ++i) inner *= x.dim(static_cast<std::size_t>(i));

    Tensor out(x.shape());
    std::vector<double> lane(axis_len);
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * axis_len * inner + in;
            for (std::size_t t = 0; t < axis_len; ++t) lane[t] = x[base + t * inner];
            const double m = kern::active().max(lane.data(), axis_len);
            double denom = 0.0;
            for (std::size_t t = 0; t < axis_len; ++t) {
                lane[t] = std::exp(lane[t] - m);
                denom += lane[t];
            }
            for (std::size_t t = 0; t < axis_len; ++t) out[base + t * inner] = lane[t] / denom;
        }
    }
    return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias) {
    if (x.rank() == 0) throw ShapeError("layer_norm: scalar input");
    const std::size_t width = x.dim(x.rank() - 1);
    if (gain.numel() != width || bias.numel() != width) {
        throw ShapeError("layer_norm: gain/bias " + gain.shape_str() + "/" + bias.shape_str() +
                         " do not match last axis of " + x.shape_str());
    }
    constexpr double kEps = 1e-5;
    const std::size_t rows = x.numel() / width;
    Tensor out(x.shape());
    for (std::size_t rIdx = 0; rIdx < rows; ++rIdx) {
        const double* row = x.data() + rIdx * width;
        double* orow = out.data() + rIdx * width;
        const double mean = kern::active().sum(row, width) / static_cast<double>(width);
        double var = 0.0;
        for (std::size_t j = 0; j < width; ++j) {
            const double d = row[j] - mean;
            var += d * d;
        }
        var /= static_cast<double>(width);
        const double rstd = 1.0 / std::sqrt(var + kEps);
        for (std::size_t j = 0; j < width; ++j) {
            orow[j] = (row[j] - mean) * rstd * gain[j] + bias[j];
        }
    }
    return out;
}

}  // namespace icls
