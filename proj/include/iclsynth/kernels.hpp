#pragma once

#include <cstddef>

namespace icls::kern {

enum class Backend { Auto, Scalar, Avx2 };

// Dense f64 inner loops behind the tensor stack. Every entry has a scalar
// reference implementation and (where the host supports it) an AVX2+FMA
// variant; the two are equivalence-tested against each other. Reductions
// have a fixed summation order per backend, so a given machine reproduces
// results bit-exactly run to run.
struct KernelTable {
    const char* name;

    void (*add)(double* dst, const double* a, const double* b, std::size_t n);
    void (*sub)(double* dst, const double* a, const double* b, std::size_t n);
    void (*mul)(double* dst, const double* a, const double* b, std::size_t n);
    // dst += alpha * x
    void (*axpy)(double* dst, double alpha, const double* x, std::size_t n);
    // dst = alpha * x
    void (*scale)(double* dst, double alpha, const double* x, std::size_t n);

    double (*dot)(const double* a, const double* b, std::size_t n);
    double (*sum)(const double* a, std::size_t n);
    double (*sq_diff_sum)(const double* a, const double* b, std::size_t n);
    double (*max)(const double* a, std::size_t n);  // n >= 1

    // c (n x m) += a (n x k) . b (k x m), all row-major.
    void (*matmul_acc)(double* c, const double* a, const double* b,
                       std::size_t n, std::size_t k, std::size_t m);
    // c (n x m) += a^T . b  with a (k x n), b (k x m).
    void (*matmul_at_b_acc)(double* c, const double* a, const double* b,
                            std::size_t k, std::size_t n, std::size_t m);
    // c (n x m) += a . b^T  with a (n x k), b (m x k).
    void (*matmul_a_bt_acc)(double* c, const double* a, const double* b,
                            std::size_t n, std::size_t k, std::size_t m);
};

const KernelTable& scalar_table();
bool avx2_supported();        // compiled in and supported by this CPU
const KernelTable& avx2_table();  // valid only if avx2_supported()

// Active table; defaults to the best supported backend. force_backend is a
// test hook and also honors the ICLSYNTH_KERNELS=scalar|avx2 environment
// variable on first use.
const KernelTable& active();
void force_backend(Backend b);
Backend active_backend();

}  // namespace icls::kern
