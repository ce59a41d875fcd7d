#include "iclsynth/kernels.hpp"

namespace icls::kern {
namespace {

void add_scalar(double* dst, const double* a, const double* b, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) dst[i] = a[i] + b[i];
}

void sub_scalar(double* dst, const double* a, const double* b, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) dst[i] = a[i] - b[i];
}

void mul_scalar(double* dst, const double* a, const double* b, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) dst[i] = a[i] * b[i];
}

void axpy_scalar(double* dst, double alpha, const double* x, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) dst[i] += alpha * x[i];
}

void scale_scalar(double* dst, double alpha, const double* x, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) dst[i] = alpha * x[i];
}

double dot_scalar(const double* a, const double* b, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

double sum_scalar(const double* a, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += a[i];
    return acc;
}

double sq_diff_sum_scalar(const double* a, const double* b, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = a[i] - b[i];
        acc += d * d;
    }
    return acc;
}

double max_scalar(const double* a, std::size_t n) {
    double m = a[0];
    for (std::size_t i = 1; i < n; ++i) {
        if (a[i] > m) m = a[i];
    }
    return m;
}

void matmul_acc_scalar(double* c, const double* a, const double* b,
                       std::size_t n, std::size_t k, std::size_t m) {
    for (std::size_t i = 0; i < n; ++i) {
        double* crow = c + i * m;
        const double* arow = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            axpy_scalar(crow, arow[p], b + p * m, m);
        }
    }
}

void matmul_at_b_acc_scalar(double* c, const double* a, const double* b,
                            std::size_t k, std::size_t n, std::size_t m) {
    for (std::size_t p = 0; p < k; ++p) {
        const double* arow = a + p * n;
        const double* brow = b + p * m;
        for (std::size_t i = 0; i < n; ++i) {
            axpy_scalar(c + i * m, arow[i], brow, m);
        }
    }
}

void matmul_a_bt_acc_scalar(double* c, const double* a, const double* b,
                            std::size_t n, std::size_t k, std::size_t m) {
    for (std::size_t i = 0; i < n; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * m;
        for (std::size_t j = 0; j < m; ++j) {
            crow[j] += dot_scalar(arow, b + j * k, k);
        }
    }
}

const KernelTable kScalarTable = {
    "scalar",
    add_scalar,
    sub_scalar,
    mul_scalar,
    axpy_scalar,
    scale_scalar,
    dot_scalar,
    sum_scalar,
    sq_diff_sum_scalar,
    max_scalar,
    matmul_acc_scalar,
    matmul_at_b_acc_scalar,
    matmul_a_bt_acc_scalar,
};

}  // namespace

const KernelTable& scalar_table() { return kScalarTable; }

}  // namespace icls::kern
