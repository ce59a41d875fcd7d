// AVX2 + FMA variants of the f64 kernels. Compiled with -mavx2 -mfma and
// only reachable after the runtime CPU check in kernels.cpp.

#include "iclsynth/kernels.hpp"

#include <immintrin.h>

namespace icls::kern {
namespace {

inline double hsum(__m256d v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    __m128d swapped = _mm_unpackhi_pd(lo, lo);
    return _mm_cvtsd_f64(_mm_add_sd(lo, swapped));
}

void add_avx2(double* dst, const double* a, const double* b, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(dst + i, _mm256_add_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    }
    for (; i < n; ++i) dst[i] = a[i] + b[i];
}

void sub_avx2(double* dst, const double* a, const double* b, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(dst + i, _mm256_sub_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    }
    for (; i < n; ++i) dst[i] = a[i] - b[i];
}

void mul_avx2(double* dst, const double* a, const double* b, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(dst + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    }
    for (; i < n; ++i) dst[i] = a[i] * b[i];
}

void axpy_avx2(double* dst, double alpha, const double* x, std::size_t n) {
    const __m256d va = _mm256_set1_pd(alpha);
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        __m256d d0 = _mm256_loadu_pd(dst + i);
        __m256d d1 = _mm256_loadu_pd(dst + i + 4);
        d0 = _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), d0);
        d1 = _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i + 4), d1);
        _mm256_storeu_pd(dst + i, d0);
        _mm256_storeu_pd(dst + i + 4, d1);
    }
    for (; i + 4 <= n; i += 4) {
        __m256d d0 = _mm256_loadu_pd(dst + i);
        d0 = _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), d0);
        _mm256_storeu_pd(dst + i, d0);
    }
    for (; i < n; ++i) dst[i] += alpha * x[i];
}

void scale_avx2(double* dst, double alpha, const double* x, std::size_t n) {
    const __m256d va = _mm256_set1_pd(alpha);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(dst + i, _mm256_mul_pd(va, _mm256_loadu_pd(x + i)));
    }
    for (; i < n; ++i) dst[i] = alpha * x[i];
}

double dot_avx2(const double* a, const double* b, std::size_t n) {
    __m256d acc0 = _mm256_setzero_pd();
    __m256d acc1 = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
        acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), acc1);
    }
    for (; i + 4 <= n; i += 4) {
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    }
    double out = hsum(_mm256_add_pd(acc0, acc1));
    for (; i < n; ++i) out += a[i] * b[i];
    return out;
}

double sum_avx2(const double* a, std::size_t n) {
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) acc = _mm256_add_pd(acc, _mm256_loadu_pd(a + i));
    double out = hsum(acc);
    for (; i < n; ++i) out += a[i];
    return out;
}

double sq_diff_sum_avx2(const double* a, const double* b, std::size_t n) {
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d d = _mm256_sub_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i));
        acc = _mm256_fmadd_pd(d, d, acc);
    }
    double out = hsum(acc);
    for (; i < n; ++i) {
        const double d = a[i] - b[i];
        out += d * d;
    }
    return out;
}

double max_avx2(const double* a, std::size_t n) {
    if (n < 8) {
        double m = a[0];
        for (std::size_t i = 1; i < n; ++i) {
            if (a[i] > m) m = a[i];
        }
        return m;
    }
    __m256d vm = _mm256_loadu_pd(a);
    std::size_t i = 4;
    for (; i + 4 <= n; i += 4) vm = _mm256_max_pd(vm, _mm256_loadu_pd(a + i));
    __m128d lo = _mm256_castpd256_pd128(vm);
    __m128d hi = _mm256_extractf128_pd(vm, 1);
    lo = _mm_max_pd(lo, hi);
    double m = _mm_cvtsd_f64(_mm_max_sd(lo, _mm_unpackhi_pd(lo, lo)));
    for (; i < n; ++i) {
        if (a[i] > m) m = a[i];
    }
    return m;
}

void matmul_acc_avx2(double* c, const double* a, const double* b,
                     std::size_t n, std::size_t k, std::size_t m) {
    for (std::size_t i = 0; i < n; ++i) {
        double* crow = c + i * m;
        const double* arow = a + i * k;
        std::size_t p = 0;
        // Two rank-1 updates per pass keeps the c row hot.
        for (; p + 2 <= k; p += 2) {
            const __m256d va0 = _mm256_set1_pd(arow[p]);
            const __m256d va1 = _mm256_set1_pd(arow[p + 1]);
            const double* b0 = b + p * m;
            const double* b1 = b0 + m;
            std::size_t j = 0;
            for (; j + 4 <= m; j += 4) {
                __m256d acc = _mm256_loadu_pd(crow + j);
                acc = _mm256_fmadd_pd(va0, _mm256_loadu_pd(b0 + j), acc);
                acc = _mm256_fmadd_pd(va1, _mm256_loadu_pd(b1 + j), acc);
                _mm256_storeu_pd(crow + j, acc);
            }
            for (; j < m; ++j) crow[j] += arow[p] * b0[j] + arow[p + 1] * b1[j];
        }
        for (; p < k; ++p) axpy_avx2(crow, arow[p], b + p * m, m);
    }
}

void matmul_at_b_acc_avx2(double* c, const double* a, const double* b,
                          std::size_t k, std::size_t n, std::size_t m) {
    for (std::size_t p = 0; p < k; ++p) {
        const double* arow = a + p * n;
        const double* brow = b + p * m;
        for (std::size_t i = 0; i < n; ++i) {
            axpy_avx2(c + i * m, arow[i], brow, m);
        }
    }
}

void matmul_a_bt_acc_avx2(double* c, const double* a, const double* b,
                          std::size_t n, std::size_t k, std::size_t m) {
    for (std::size_t i = 0; i < n; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * m;
        for (std::size_t j = 0; j < m; ++j) {
            crow[j] += dot_avx2(arow, b + j * k, k);
        }
    }
}

const KernelTable kAvx2Table = {
    "avx2",
    add_avx2,
    sub_avx2,
    mul_avx2,
    axpy_avx2,
    scale_avx2,
    dot_avx2,
    sum_avx2,
    sq_diff_sum_avx2,
    max_avx2,
    matmul_acc_avx2,
    matmul_at_b_acc_avx2,
    matmul_a_bt_acc_avx2,
};

}  // namespace

const KernelTable& avx2_table() { return kAvx2Table; }

}  // namespace icls::kern
