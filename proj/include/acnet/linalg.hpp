#pragma once

#include <acnet/tensor.hpp>

#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

namespace acnet {

inline void require_matrix(const Tensor& a, const char* what) {
    if (a.rank() != 2) throw DimensionError(std::string(what) + ": expected a matrix, got " + shape_string(a.shape()));
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    require_matrix(a, "matmul");
    require_matrix(b, "matmul");
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    if (b.rows() != k) {
        throw DimensionError("matmul: inner extents differ, " + shape_string(a.shape()) + " x " +
                             shape_string(b.shape()));
    }
    Tensor c(Shape{m, n});
    for (std::size_t i = 0; i < m; ++i) {
        double* ci = &c(i, 0);
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = a(i, p);
            if (aip == 0.0) continue;
            const double* bp = &b(p, 0);
            for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
        }
    }
    return c;
}

inline Tensor transpose(const Tensor& a) {
    require_matrix(a, "transpose");
    Tensor t(Shape{a.cols(), a.rows()});
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
    return t;
}

// a^T b without materializing the transpose.
inline Tensor matmul_tn(const Tensor& a, const Tensor& b) {
    require_matrix(a, "matmul_tn");
    require_matrix(b, "matmul_tn");
    if (a.rows() != b.rows()) throw DimensionError("matmul_tn: row counts differ");
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    Tensor c(Shape{k, n});
    for (std::size_t r = 0; r < m; ++r) {
        const double* ar = &a(r, 0);
        const double* br = &b(r, 0);
        for (std::size_t i = 0; i < k; ++i) {
            const double v = ar[i];
            if (v == 0.0) continue;
            double* ci = &c(i, 0);
            for (std::size_t j = 0; j < n; ++j) ci[j] += v * br[j];
        }
    }
    return c;
}

// a b^T without materializing the transpose.
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    require_matrix(a, "matmul_nt");
    require_matrix(b, "matmul_nt");
    if (a.cols() != b.cols()) throw DimensionError("matmul_nt: column counts differ");
    const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
    Tensor c(Shape{m, n});
    for (std::size_t i = 0; i < m; ++i) {
        const double* ai = &a(i, 0);
        for (std::size_t j = 0; j < n; ++j) {
            const double* bj = &b(j, 0);
            double s = 0.0;
            for (std::size_t p = 0; p < k; ++p) s += ai[p] * bj[p];
            c(i, j) = s;
        }
    }
    return c;
}

struct SvdOptions {
    double tol = 1e-12;
    int max_sweeps = 60;
};

/// Thin SVD a = U diag(s) V^T with r = min(m, n) singular triplets, s sorted descending.
struct Svd {
    Tensor u;  // m x r
    std::vector<double> s;
    Tensor v;  // n x r
    int sweeps = 0;
};

namespace detail {

// Column-major working storage for the Jacobi sweeps: cols[j] is column j.
using Columns = std::vector<std::vector<double>>;

inline double dot(const std::vector<double>& x, const std::vector<double>& y) {
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * y[i];
    return s;
}

// Householder QR of a tall matrix (m >= n): returns thin Q (m x n) and R (n x n).
inline void householder_qr(const Tensor& a, Tensor& q, Tensor& r) {
    const std::size_t m = a.rows(), n = a.cols();
    Columns cols(n, std::vector<double>(m));
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) cols[j][i] = a(i, j);

    Columns reflectors(n);
    for (std::size_t k = 0; k < n; ++k) {
        auto& x = cols[k];
        double norm = 0.0;
        for (std::size_t i = k; i < m; ++i) norm += x[i] * x[i];
        norm = std::sqrt(norm);
        std::vector<double> v(m, 0.0);
        if (norm > 0.0) {
            const double alpha = x[k] > 0 ? -norm : norm;
            for (std::size_t i = k; i < m; ++i) v[i] = x[i];
            v[k] -= alpha;
            double vnorm = 0.0;
            for (std::size_t i = k; i < m; ++i) vnorm += v[i] * v[i];
            vnorm = std::sqrt(vnorm);
            if (vnorm > 0.0) {
                for (std::size_t i = k; i < m; ++i) v[i] /= vnorm;
                for (std::size_t j = k; j < n; ++j) {
                    double s = 0.0;
                    for (std::size_t i = k; i < m; ++i) s += v[i] * cols[j][i];
                    for (std::size_t i = k; i < m; ++i) cols[j][i] -= 2.0 * s * v[i];
                }
            }
        }
        reflectors[k] = std::move(v);
    }

    r = Tensor(Shape{n, n});
    for (std::size_t j = 0; j < n; ++j)
        for (std::size_t i = 0; i <= j; ++i) r(i, j) = cols[j][i];

    // Q = H_0 H_1 ... H_{n-1} applied to the first n unit vectors.
    Columns qcols(n, std::vector<double>(m, 0.0));
    for (std::size_t j = 0; j < n; ++j) qcols[j][j] = 1.0;
    for (std::size_t kk = n; kk-- > 0;) {
        const auto& v = reflectors[kk];
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (std::size_t i = kk; i < m; ++i) s += v[i] * qcols[j][i];
            if (s == 0.0) continue;
            for (std::size_t i = kk; i < m; ++i) qcols[j][i] -= 2.0 * s * v[i];
        }
    }
    q = Tensor(Shape{m, n});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) q(i, j) = qcols[j][i];
}

// One-sided (Hestenes) Jacobi on a matrix with m >= n.
inline Svd jacobi_tall(const Tensor& a, const SvdOptions& opt) {
    const std::size_t m = a.rows(), n = a.cols();
    Columns u(n, std::vector<double>(m));
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) u[j][i] = a(i, j);
    Columns v(n, std::vector<double>(n, 0.0));
    for (std::size_t j = 0; j < n; ++j) v[j][j] = 1.0;

    std::vector<double> norms(n);
    for (std::size_t j = 0; j < n; ++j) norms[j] = dot(u[j], u[j]);
    // Columns below n * eps * |a|_F are roundoff; rotating them against each
    // other never settles on rank-deficient input.
    double frob2 = 0.0;
    for (double x : norms) frob2 += x;
    const double noise = static_cast<double>(n) * std::numeric_limits<double>::epsilon();
    const double negligible = noise * noise * frob2;

    int sweep = 0;
    bool converged = n < 2;
    while (!converged && sweep < opt.max_sweeps) {
        ++sweep;
        bool rotated = false;
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double alpha = norms[p];
                const double beta = norms[q];
                const double gamma = dot(u[p], u[q]);
                if (alpha <= negligible || beta <= negligible) continue;
                if (gamma == 0.0 || std::abs(gamma) <= opt.tol * std::sqrt(alpha * beta)) continue;
                rotated = true;
                const double zeta = (beta - alpha) / (2.0 * gamma);
                const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;
                auto& up = u[p];
                auto& uq = u[q];
                for (std::size_t i = 0; i < m; ++i) {
                    const double x = up[i], y = uq[i];
                    up[i] = c * x - s * y;
                    uq[i] = s * x + c * y;
                }
                auto& vp = v[p];
                auto& vq = v[q];
                for (std::size_t i = 0; i < n; ++i) {
                    const double x = vp[i], y = vq[i];
                    vp[i] = c * x - s * y;
                    vq[i] = s * x + c * y;
                }
                norms[p] = dot(up, up);
                norms[q] = dot(uq, uq);
            }
        }
        converged = !rotated;
    }
    if (!converged) {
        throw NumericError("jacobi svd did not converge within " + std::to_string(opt.max_sweeps) + " sweeps");
    }

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<double> sv(n);
    for (std::size_t j = 0; j < n; ++j) sv[j] = norms[j] <= negligible ? 0.0 : std::sqrt(norms[j]);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return sv[x] > sv[y]; });

    Svd out;
    out.sweeps = sweep;
    out.u = Tensor(Shape{m, n});
    out.v = Tensor(Shape{n, n});
    out.s.resize(n);
    for (std::size_t k = 0; k < n; ++k) {
        const std::size_t j = order[k];
        const double sj = sv[j];
        out.s[k] = sj;
        for (std::size_t i = 0; i < m; ++i) out.u(i, k) = sj > 0.0 ? u[j][i] / sj : 0.0;
        for (std::size_t i = 0; i < n; ++i) out.v(i, k) = v[j][i];
    }
    return out;
}

}  // namespace detail

/// Deterministic thin SVD via one-sided Jacobi. Tall inputs (m > n) are
/// first reduced with Householder QR so the sweeps run on an n x n factor.
inline Svd svd(const Tensor& a, const SvdOptions& opt = {}) {
    require_matrix(a, "svd");
    if (!a.all_finite()) throw NumericError("svd: input contains non-finite values");
    const std::size_t m = a.rows(), n = a.cols();
    if (m < n) {
        Svd t = svd(transpose(a), opt);
        return Svd{std::move(t.v), std::move(t.s), std::move(t.u), t.sweeps};
    }
    if (m > n) {
        Tensor q, r;
        detail::householder_qr(a, q, r);
        Svd inner = detail::jacobi_tall(r, opt);
        inner.u = matmul(q, inner.u);
        return inner;
    }
    return detail::jacobi_tall(a, opt);
}

namespace detail {

// Spectral filter shared by pinv and lstsq.
inline std::vector<double> inverted_spectrum(const Svd& f, std::size_t m, std::size_t n, double ridge) {
    const double smax = f.s.empty() ? 0.0 : f.s.front();
    const double cutoff = static_cast<double>(std::max(m, n)) * std::numeric_limits<double>::epsilon() * smax;
    std::vector<double> inv(f.s.size(), 0.0);
    for (std::size_t k = 0; k < f.s.size(); ++k) {
        const double s = f.s[k];
        if (ridge > 0.0) {
            inv[k] = s / (s * s + ridge);
        } else if (s > cutoff && s > 0.0) {
            inv[k] = 1.0 / s;
        }
    }
    return inv;
}

}  // namespace detail

/// Moore-Penrose pseudo-inverse (n x m). Singular values map to s / (s^2 + ridge);
/// with ridge == 0 values below max(m, n) * eps * s_max are treated as zero.
inline Tensor pinv(const Tensor& a, double ridge = 0.0) {
    require_matrix(a, "pinv");
    if (!(ridge >= 0.0) || !std::isfinite(ridge)) throw NumericError("pinv: ridge must be finite and nonnegative");
    if (!a.all_finite()) throw NumericError("pinv: input contains non-finite values");
    const Svd f = svd(a);
    const auto inv = detail::inverted_spectrum(f, a.rows(), a.cols(), ridge);
    const std::size_t n = a.cols(), r = f.s.size();
    Tensor vs = f.v;  // n x r, scaled by the inverted spectrum
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < r; ++k) vs(i, k) *= inv[k];
    return matmul_nt(vs, f.u);
}

/// beta = pinv(h, ridge) * y, minimizing |h beta - y|^2 + ridge |beta|^2.
inline Tensor lstsq(const Tensor& h, const Tensor& y, double ridge = 0.0) {
    require_matrix(h, "lstsq");
    require_matrix(y, "lstsq");
    if (h.rows() != y.rows()) {
        throw DimensionError("lstsq: design has " + std::to_string(h.rows()) + " rows, targets have " +
                             std::to_string(y.rows()));
    }
    if (!(ridge >= 0.0) || !std::isfinite(ridge)) throw NumericError("lstsq: ridge must be finite and nonnegative");
    if (!h.all_finite() || !y.all_finite()) throw NumericError("lstsq: non-finite input");
    const Svd f = svd(h);
    const auto inv = detail::inverted_spectrum(f, h.rows(), h.cols(), ridge);
    Tensor uty = matmul_tn(f.u, y);  // r x q
    for (std::size_t k = 0; k < uty.rows(); ++k)
        for (std::size_t j = 0; j < uty.cols(); ++j) uty(k, j) *= inv[k];
    return matmul(f.v, uty);
}

}  // namespace acnet
