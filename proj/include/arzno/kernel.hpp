#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "errors.hpp"
#include "grid.hpp"
#include "model.hpp"

namespace arzno {

/// Nodes (x_i, xi_j), 0 <= j <= i < n, of the triangle {0 <= xi <= x <= 1},
/// stored row-major: row i holds xi_0 .. xi_i.
struct TriMesh {
    std::size_t n = 41;

    double h() const { return 1.0 / static_cast<double>(n - 1); }
    double coord(std::size_t i) const { return static_cast<double>(i) / static_cast<double>(n - 1); }
    std::size_t size() const { return n * (n + 1) / 2; }
    static std::size_t index(std::size_t i, std::size_t j) { return i * (i + 1) / 2 + j; }

    void validate() const {
        if (n < 8) throw DomainError("TriMesh: need at least 8 nodes per side, got " + std::to_string(n));
    }

    friend bool operator==(const TriMesh&, const TriMesh&) = default;
};

/// Gain kernels (K^u, K^v) sampled on a TriMesh.
struct KernelPair {
    TriMesh mesh;
    Field ku;
    Field kv;

    static KernelPair zeros(const TriMesh& mesh) { return {mesh, Field(mesh.size(), 0.0), Field(mesh.size(), 0.0)}; }

    double u(std::size_t i, std::size_t j) const { return ku[TriMesh::index(i, j)]; }
    double v(std::size_t i, std::size_t j) const { return kv[TriMesh::index(i, j)]; }
};

/// Piecewise-(bi)linear interpolation of mesh values at a point of the triangle.
/// Cells below the diagonal are bilinear squares; diagonal cells are split and
/// the lower half is interpolated linearly on its three corners.
inline double tri_interp(std::span<const double> values, const TriMesh& mesh, double x, double xi) {
    const double inv_h = static_cast<double>(mesh.n - 1);
    x = std::clamp(x, 0.0, 1.0);
    xi = std::clamp(xi, 0.0, x);
    const double px = x * inv_h;
    const double pxi = xi * inv_h;
    std::size_t i = std::min(static_cast<std::size_t>(px), mesh.n - 2);
    std::size_t j = std::min(static_cast<std::size_t>(pxi), i);
    const double tx = px - static_cast<double>(i);
    const double txi = pxi - static_cast<double>(j);
    if (j < i) {
        const double f00 = values[TriMesh::index(i, j)];
        const double f10 = values[TriMesh::index(i + 1, j)];
        const double f01 = values[TriMesh::index(i, j + 1)];
        const double f11 = values[TriMesh::index(i + 1, j + 1)];
        return (1.0 - tx) * (1.0 - txi) * f00 + tx * (1.0 - txi) * f10 + (1.0 - tx) * txi * f01 + tx * txi * f11;
    }
    const double f00 = values[TriMesh::index(i, i)];
    const double f10 = values[TriMesh::index(i + 1, i)];
    const double f11 = values[TriMesh::index(i + 1, i + 1)];
    return f00 + tx * (f10 - f00) + txi * (f11 - f10);
}

/// A-priori cap on |K| used to flag mis-scaled inputs.
inline double default_kernel_bound(const LinearizedParams& lp) {
    return 10.0 * lp.c_bar / (lp.lambda_n() + lp.mu_n()) * std::exp(lp.c_bar);
}

struct KernelSolveStats {
    std::size_t iterations = 0;
    double residual = 0.0;
};

namespace detail {

inline void check_c_hat(std::span<const double> c_hat, const LinearizedParams& lp) {
    if (c_hat.size() < 2) throw DomainError("kernel solver: c_hat needs at least 2 samples");
    const double limit = lp.c_bar * (1.0 + 1e-12);
    for (double c : c_hat) {
        if (!std::isfinite(c) || std::abs(c) > limit) {
            throw DomainError("kernel solver: |c_hat| = " + std::to_string(std::abs(c)) + " exceeds c_bar = " +
                              std::to_string(lp.c_bar));
        }
    }
}

}  // namespace detail

/// Solves the Goursat kernel equations
///   mu K^u_x = lambda K^u_xi + c_hat(xi) K^v,   K^v_x = -K^v_xi,
///   K^u(x,x) = -c_hat(x)/(lambda+mu),           K^v(x,0) = (lambda r/mu) K^u(x,0)
/// for a frozen estimate c_hat given as uniform samples on [0,1].
///
/// K^u is integrated along its characteristics (slope dxi/dx = -lambda/mu)
/// from the diagonal with the trapezoid rule, sampling K^v by interpolation on
/// the mesh. K^v is transported unchanged along x - xi = const from the edge
/// xi = 0. The coupling is resolved by successive approximation starting from
/// K^v = 0 and stops once the sup-norm change of both kernels drops below tol.
inline KernelPair solve_kernels(std::span<const double> c_hat, const LinearizedParams& lp, const TriMesh& mesh,
                                double tol = 1e-8, std::size_t max_iter = 200, KernelSolveStats* stats = nullptr) {
    mesh.validate();
    detail::check_c_hat(c_hat, lp);
    if (!(lp.lambda > 0.0 && lp.mu > 0.0)) throw DomainError("kernel solver: lambda and mu must be positive");

    const std::size_t n = mesh.n;
    const double h = mesh.h();
    const double lam = lp.lambda_n();
    const double mu = lp.mu_n();
    const double speed_sum = lam + mu;
    const double edge_gain = lam * lp.r / mu;

    KernelPair k = KernelPair::zeros(mesh);
    Field ku_next(mesh.size());
    Field kv_next(mesh.size());

    double change = 0.0;
    for (std::size_t iter = 1; iter <= max_iter; ++iter) {
        for (std::size_t i = 0; i < n; ++i) {
            const double x = static_cast<double>(i) * h;
            ku_next[TriMesh::index(i, i)] = -interp_uniform(c_hat, x) / speed_sum;
            for (std::size_t j = 0; j < i; ++j) {
                const double xi = static_cast<double>(j) * h;
                const double x0 = (lam * x + mu * xi) / speed_sum;
                const std::size_t steps = i - j;
                const double ds = (x - xi) / speed_sum / static_cast<double>(steps);
                double integral = 0.0;
                for (std::size_t s = 0; s <= steps; ++s) {
                    const double sd = ds * static_cast<double>(s);
                    const double px = x0 + mu * sd;
                    const double pxi = x0 - lam * sd;
                    const double f = interp_uniform(c_hat, pxi) * tri_interp(k.kv, mesh, px, pxi);
                    integral += (s == 0 || s == steps) ? 0.5 * f : f;
                }
                ku_next[TriMesh::index(i, j)] = -interp_uniform(c_hat, x0) / speed_sum + integral * ds;
            }
        }
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j <= i; ++j) kv_next[TriMesh::index(i, j)] = edge_gain * ku_next[TriMesh::index(i - j, 0)];
        }

        change = 0.0;
        for (std::size_t q = 0; q < mesh.size(); ++q) {
            change = std::max({change, std::abs(ku_next[q] - k.ku[q]), std::abs(kv_next[q] - k.kv[q])});
        }
        k.ku.swap(ku_next);
        k.kv.swap(kv_next);
        if (change < tol) {
            if (stats) *stats = {iter, change};
            return k;
        }
    }
    throw ConvergenceError("kernel solver did not converge in " + std::to_string(max_iter) + " iterations", change);
}

/// Trapezoid weight of node k in the integral over [0, x_i] on a uniform grid.
inline double partial_trapezoid_weight(std::size_t i, std::size_t k, double h) {
    if (i == 0) return 0.0;
    return (k == 0 || k == i) ? 0.5 * h : h;
}

/// Kernels resampled onto a uniform state grid of `nodes` points as dense
/// lower-triangular row-major matrices (entry (i,k) for k <= i).
struct GridKernels {
    std::size_t nodes = 0;
    Field ku;
    Field kv;

    double u(std::size_t i, std::size_t k) const { return ku[i * nodes + k]; }
    double v(std::size_t i, std::size_t k) const { return kv[i * nodes + k]; }
};

inline GridKernels kernels_on_grid(const KernelPair& kp, std::size_t nodes) {
    GridKernels gk{nodes, Field(nodes * nodes, 0.0), Field(nodes * nodes, 0.0)};
    const double h = 1.0 / static_cast<double>(nodes - 1);
    for (std::size_t i = 0; i < nodes; ++i) {
        const double x = static_cast<double>(i) * h;
        for (std::size_t k = 0; k <= i; ++k) {
            const double xi = static_cast<double>(k) * h;
            gk.ku[i * nodes + k] = tri_interp(kp.ku, kp.mesh, x, xi);
            gk.kv[i * nodes + k] = tri_interp(kp.kv, kp.mesh, x, xi);
        }
    }
    return gk;
}

/// Discrete inverse of the transform z = v_hat - int K^u u_hat - int K^v v_hat
/// on a uniform grid. With W(i,k) = w_ik K(i,k) (trapezoid weights on [0,x_i])
/// the resolvents M(i,k) = w_ik L(i,k) satisfy
///   M^v = W^v + W^v M^v,   M^u = W^u + W^v M^u,
/// the discrete form of
///   L^v(x,xi) = K^v(x,xi) + int_xi^x K^v(x,s) L^v(s,xi) ds,
///   L^u(x,xi) = K^u(x,xi) + int_xi^x K^v(x,s) L^u(s,xi) ds.
/// Solved by successive approximation; the change is measured on L.
inline GridKernels resolvent_on_grid(const GridKernels& k, double tol = 1e-8, std::size_t max_iter = 200,
                                     KernelSolveStats* stats = nullptr) {
    const std::size_t n = k.nodes;
    const double h = 1.0 / static_cast<double>(n - 1);
    Field wu(n * n, 0.0), wv(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t q = 0; q <= i; ++q) {
            const double w = partial_trapezoid_weight(i, q, h);
            wu[i * n + q] = w * k.u(i, q);
            wv[i * n + q] = w * k.v(i, q);
        }
    }
    Field mu_ = wu, mv = wv;
    Field mu_next(n * n, 0.0), mv_next(n * n, 0.0);

    double change = 0.0;
    for (std::size_t iter = 1; iter <= max_iter; ++iter) {
        change = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t q = 0; q <= i; ++q) {
                double su = 0.0, sv = 0.0;
                for (std::size_t s = q; s <= i; ++s) {
                    const double w = wv[i * n + s];
                    su += w * mu_[s * n + q];
                    sv += w * mv[s * n + q];
                }
                const std::size_t idx = i * n + q;
                mu_next[idx] = wu[idx] + su;
                mv_next[idx] = wv[idx] + sv;
                const double w = partial_trapezoid_weight(i, q, h);
                if (w > 0.0) {
                    change = std::max({change, std::abs(mu_next[idx] - mu_[idx]) / w,
                                       std::abs(mv_next[idx] - mv[idx]) / w});
                }
            }
        }
        mu_.swap(mu_next);
        mv.swap(mv_next);
        if (change < tol) {
            if (stats) *stats = {iter, change};
            GridKernels inv{n, Field(n * n, 0.0), Field(n * n, 0.0)};
            inv.ku[0] = k.ku[0];
            inv.kv[0] = k.kv[0];
            for (std::size_t i = 1; i < n; ++i) {
                for (std::size_t q = 0; q <= i; ++q) {
                    const double w = partial_trapezoid_weight(i, q, h);
                    inv.ku[i * n + q] = mu_[i * n + q] / w;
                    inv.kv[i * n + q] = mv[i * n + q] / w;
                }
            }
            return inv;
        }
    }
    throw ConvergenceError("inverse kernel solver did not converge in " + std::to_string(max_iter) + " iterations",
                           change);
}

/// Mesh kernels copied into the dense lower-triangular layout (no interpolation).
inline GridKernels mesh_to_dense(const KernelPair& kp) {
    const std::size_t n = kp.mesh.n;
    GridKernels gk{n, Field(n * n, 0.0), Field(n * n, 0.0)};
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t q = 0; q <= i; ++q) {
            gk.ku[i * n + q] = kp.u(i, q);
            gk.kv[i * n + q] = kp.v(i, q);
        }
    }
    return gk;
}

/// Inverse-transform kernels (L^u, L^v) of
///   v_hat = z + int_0^x L^u w + int_0^x L^v z
/// on the mesh nodes; see resolvent_on_grid. Composing the discrete transform
/// with its discrete inverse on the mesh nodes is the identity up to tol.
inline KernelPair solve_inverse_kernels(const KernelPair& kp, std::span<const double> c_hat,
                                        const LinearizedParams& lp, const TriMesh& mesh, double tol = 1e-8,
                                        std::size_t max_iter = 200, KernelSolveStats* stats = nullptr) {
    mesh.validate();
    detail::check_c_hat(c_hat, lp);
    if (!(kp.mesh == mesh) || kp.ku.size() != mesh.size() || kp.kv.size() != mesh.size()) {
        throw DomainError("solve_inverse_kernels: kernel pair does not match mesh");
    }
    const GridKernels inv = resolvent_on_grid(mesh_to_dense(kp), tol, max_iter, stats);
    KernelPair out = KernelPair::zeros(mesh);
    for (std::size_t i = 0; i < mesh.n; ++i) {
        for (std::size_t q = 0; q <= i; ++q) {
            out.ku[TriMesh::index(i, q)] = inv.u(i, q);
            out.kv[TriMesh::index(i, q)] = inv.v(i, q);
        }
    }
    return out;
}

/// Finite-difference time derivative (now - prev) / dt of two kernel snapshots.
inline KernelPair kernel_time_derivative(const KernelPair& prev, const KernelPair& now, double dt) {
    if (!(prev.mesh == now.mesh) || prev.ku.size() != now.ku.size() || prev.kv.size() != now.kv.size()) {
        throw DomainError("kernel_time_derivative: kernels live on different meshes");
    }
    if (!(dt > 0.0)) throw DomainError("kernel_time_derivative: dt must be positive");
    KernelPair d = KernelPair::zeros(now.mesh);
    for (std::size_t q = 0; q < d.ku.size(); ++q) {
        d.ku[q] = (now.ku[q] - prev.ku[q]) / dt;
        d.kv[q] = (now.kv[q] - prev.kv[q]) / dt;
    }
    return d;
}

/// L2 norm over the triangle (piecewise-constant cell quadrature on nodes).
inline double triangle_l2_norm(std::span<const double> values, const TriMesh& mesh) {
    const double h = mesh.h();
    double s = 0.0;
    for (std::size_t i = 0; i < mesh.n; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            const double w = (j == i || j == 0 ? 0.5 : 1.0) * (i == 0 || i == mesh.n - 1 ? 0.5 : 1.0);
            const double f = values[TriMesh::index(i, j)];
            s += w * f * f;
        }
    }
    return std::sqrt(s * h * h);
}

/// The x = 1 row of both kernels resampled onto `nodes` uniform points.
inline std::pair<Field, Field> boundary_row_on_grid(const KernelPair& kp, std::size_t nodes) {
    Field ru(nodes), rv(nodes);
    const double h = 1.0 / static_cast<double>(nodes - 1);
    for (std::size_t k = 0; k < nodes; ++k) {
        const double xi = static_cast<double>(k) * h;
        ru[k] = tri_interp(kp.ku, kp.mesh, 1.0, xi);
        rv[k] = tri_interp(kp.kv, kp.mesh, 1.0, xi);
    }
    return {ru, rv};
}

// Binary I/O helpers: everything little-endian, doubles as IEEE-754 binary64.
namespace io {

inline void put_u32(std::ostream& os, std::uint32_t v) {
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFFu);
    os.write(b, 4);
}

inline void put_f64(std::ostream& os, double d) {
    const auto v = std::bit_cast<std::uint64_t>(d);
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFFu);
    os.write(b, 8);
}

inline void put_f64s(std::ostream& os, std::span<const double> d) {
    for (double x : d) put_f64(os, x);
}

inline std::uint32_t get_u32(std::istream& is, const char* what) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) throw FormatError(std::string("truncated input reading ") + what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

inline double get_f64(std::istream& is, const char* what) {
    unsigned char b[8];
    if (!is.read(reinterpret_cast<char*>(b), 8)) throw FormatError(std::string("truncated input reading ") + what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return std::bit_cast<double>(v);
}

inline Field get_f64s(std::istream& is, std::size_t count, const char* what) {
    Field out(count);
    for (auto& x : out) x = get_f64(is, what);
    return out;
}

}  // namespace io

/// One supervised pair: c_hat samples on a uniform grid and the kernels they produce.
struct KernelSample {
    Field c;
    KernelPair k;
};

/// Header carried by every serialized kernel record.
struct KernelRecordHeader {
    std::uint32_t n = 0;
    double lambda = 0.0;
    double mu = 0.0;
    double r = 0.0;
};

/// Writes: u32 n, f64 lambda, f64 mu, f64 r, then K^u and K^v row-major over the triangle.
inline void write_kernel_record(std::ostream& os, const KernelPair& kp, const LinearizedParams& lp) {
    io::put_u32(os, static_cast<std::uint32_t>(kp.mesh.n));
    io::put_f64(os, lp.lambda);
    io::put_f64(os, lp.mu);
    io::put_f64(os, lp.r);
    io::put_f64s(os, kp.ku);
    io::put_f64s(os, kp.kv);
}

inline KernelPair read_kernel_record(std::istream& is, KernelRecordHeader* header = nullptr) {
    KernelRecordHeader hdr;
    hdr.n = io::get_u32(is, "kernel record size");
    if (hdr.n < 2 || hdr.n > 100000) throw FormatError("kernel record: implausible mesh size " + std::to_string(hdr.n));
    hdr.lambda = io::get_f64(is, "kernel record lambda");
    hdr.mu = io::get_f64(is, "kernel record mu");
    hdr.r = io::get_f64(is, "kernel record r");
    TriMesh mesh{hdr.n};
    KernelPair kp{mesh, io::get_f64s(is, mesh.size(), "kernel record K^u"), io::get_f64s(is, mesh.size(), "kernel record K^v")};
    if (header) *header = hdr;
    return kp;
}

}  // namespace arzno
