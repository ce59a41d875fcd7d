#include "iclsynth/linalg.hpp"

#include <cmath>

namespace icls {
namespace {

void require_square(const Tensor& a, const char* op) {
    if (a.rank() != 2 || a.dim(0) != a.dim(1)) {
        throw ShapeError(std::string(op) + ": expected square matrix, got " + a.shape_str());
    }
}

}  // namespace

EigenSym symmetric_eigen(const Tensor& input, int max_sweeps) {
    require_square(input, "symmetric_eigen");
    const std::size_t n = input.dim(0);
    Tensor a = input;
    Tensor v({n, n});
    for (std::size_t i = 0; i < n; ++i) v.at(i, i) = 1.0;

    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        double off = 0.0;
        for (std::size_t p = 0; p < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) off += a.at(p, q) * a.at(p, q);
        }
        if (off < 1e-26 * static_cast<double>(n * n)) break;

        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = a.at(p, q);
                if (std::abs(apq) < 1e-300) continue;
                const double app = a.at(p, p);
                const double aqq = a.at(q, q);
                const double theta = (aqq - app) / (2.0 * apq);
                const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;

                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = a.at(k, p);
                    const double akq = a.at(k, q);
                    a.at(k, p) = c * akp - s * akq;
                    a.at(k, q) = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = a.at(p, k);
                    const double aqk = a.at(q, k);
                    a.at(p, k) = c * apk - s * aqk;
                    a.at(q, k) = s * apk + c * aqk;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double vkp = v.at(k, p);
                    const double vkq = v.at(k, q);
                    v.at(k, p) = c * vkp - s * vkq;
                    v.at(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }

    // Sort ascending by eigenvalue, reordering columns to match.
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](std::size_t x, std::size_t y) { return a.at(x, x) < a.at(y, y); });
    EigenSym out;
    out.values = Tensor({n});
    out.vectors = Tensor({n, n});
    for (std::size_t j = 0; j < n; ++j) {
        out.values[j] = a.at(order[j], order[j]);
        for (std::size_t i = 0; i < n; ++i) out.vectors.at(i, j) = v.at(i, order[j]);
    }
    return out;
}

double trace_sqrt_product(const Tensor& s1, const Tensor& s2) {
    require_square(s1, "trace_sqrt_product");
    require_square(s2, "trace_sqrt_product");
    if (s1.dim(0) != s2.dim(0)) {
        throw ShapeError("trace_sqrt_product: size mismatch " + s1.shape_str() + " vs " +
                         s2.shape_str());
    }
    const std::size_t n = s1.dim(0);

    auto clamp_eigs = [](Tensor& w, const char* what) {
        for (std::size_t i = 0; i < w.numel(); ++i) {
            if (w[i] < -1e-8) {
                throw NumericError(std::string(what) + ": eigenvalue " + std::to_string(w[i]) +
                                   " below tolerance");
            }
            if (w[i] < 0.0) w[i] = 0.0;
        }
    };

    EigenSym e1 = symmetric_eigen(s1);
    clamp_eigs(e1.values, "trace_sqrt_product: covariance");
    // sqrt(s1) = V sqrt(w) V^T
    Tensor root({n, n});
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < n; ++k) {
                acc += e1.vectors.at(i, k) * std::sqrt(e1.values[k]) * e1.vectors.at(j, k);
            }
            root.at(i, j) = acc;
        }
    }
    Tensor m = matmul(matmul(root, s2), root);
    // Symmetrize against roundoff before the final decomposition.
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            const double avg = 0.5 * (m.at(i, j) + m.at(j, i));
            m.at(i, j) = avg;
            m.at(j, i) = avg;
        }
    }
    EigenSym em = symmetric_eigen(m);
    clamp_eigs(em.values, "trace_sqrt_product: product");
    double tr = 0.0;
    for (std::size_t i = 0; i < n; ++i) tr += std::sqrt(em.values[i]);
    return tr;
}

Tensor solve_spd(const Tensor& a, const Tensor& b) {
    require_square(a, "solve_spd");
    const std::size_t n = a.dim(0);
    const bool vec = b.rank() == 1;
    if ((vec && b.dim(0) != n) || (!vec && (b.rank() != 2 || b.dim(0) != n))) {
        throw ShapeError("solve_spd: rhs " + b.shape_str() + " does not match " + a.shape_str());
    }
    const std::size_t m = vec ? 1 : b.dim(1);

    // Lower-triangular Cholesky factor.
    Tensor l({n, n});
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            double acc = a.at(i, j);
            for (std::size_t k = 0; k < j; ++k) acc -= l.at(i, k) * l.at(j, k);
            if (i == j) {
                if (acc <= 0.0) throw NumericError("solve_spd: matrix not positive definite");
                l.at(i, i) = std::sqrt(acc);
            } else {
                l.at(i, j) = acc / l.at(j, j);
            }
        }
    }
    Tensor x = vec ? b.reshaped({n, 1}) : b;
    // Forward then backward substitution per column.
    for (std::size_t c = 0; c < m; ++c) {
        for (std::size_t i = 0; i < n; ++i) {
            double acc = x.at(i, c);
            for (std::size_t k = 0; k < i; ++k) acc -= l.at(i, k) * x.at(k, c);
            x.at(i, c) = acc / l.at(i, i);
        }
        for (std::size_t ii = n; ii-- > 0;) {
            double acc = x.at(ii, c);
            for (std::size_t k = ii + 1; k < n; ++k) acc -= l.at(k, ii) * x.at(k, c);
            x.at(ii, c) = acc / l.at(ii, ii);
        }
    }
    return vec ? x.reshaped({n}) : x;
}

}  // namespace icls
