#include "nvcavity/modesolver.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <random>
#include <sstream>

#include <Eigen/Dense>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseLU>

#include "nvcavity/parallel.hpp"

namespace nvcavity {

namespace {

constexpr double kSpeedOfLight = 299792458.0;

bool is_dirichlet(const Grid2D& g, int i, int j) {
    return i == 0 || g.region_of(i, j) == Region::Metal;
}

/// Reduced symmetric pencil A_w x = lambda M x over the non-Dirichlet nodes,
/// where A_w is the r-weighted operator and M = diag(r eps dr dz).
struct ReducedProblem {
    Eigen::SparseMatrix<double> a_w;
    Eigen::VectorXd m_diag;
    std::vector<int> node_of;  // reduced index -> grid index
    std::vector<int> dof_of;   // grid index -> reduced index or -1
};

ReducedProblem reduce(const Grid2D& g) {
    ReducedProblem rp;
    rp.dof_of.assign(g.size(), -1);
    for (int j = 0; j < g.nz; ++j)
        for (int i = 0; i < g.nr; ++i)
            if (!is_dirichlet(g, i, j)) {
                rp.dof_of[g.index(i, j)] = static_cast<int>(rp.node_of.size());
                rp.node_of.push_back(g.index(i, j));
            }
    const int n = static_cast<int>(rp.node_of.size());
    const double dr = g.dr, dz = g.dz;
    std::vector<Eigen::Triplet<double>> trips;
    trips.reserve(static_cast<size_t>(n) * 5);
    rp.m_diag.resize(n);
    for (int k = 0; k < n; ++k) {
        const int idx = rp.node_of[k];
        const int i = idx % g.nr;
        const int j = idx / g.nr;
        const double r = g.r_of(i);
        const double w = r * dr * dz;
        const double rp_half = r + 0.5 * dr;
        const double rm_half = r - 0.5 * dr;
        double diag = (r / rp_half + r / rm_half) / (dr * dr) + 2.0 / (dz * dz);
        if (j == g.face_row && i < g.face_cols)
            diag += (1.0 / g.face_theta - 1.0) / (dz * dz); // plunger face between rows
        trips.emplace_back(k, k, w * diag);
        const auto couple = [&](int ii, int jj, double coeff) {
            const int kk = rp.dof_of[g.index(ii, jj)];
            if (kk >= 0) trips.emplace_back(k, kk, w * coeff);
        };
        if (i + 1 < g.nr) couple(i + 1, j, -g.r_of(i + 1) / (rp_half * dr * dr));
        if (i - 1 >= 1) couple(i - 1, j, -g.r_of(i - 1) / (rm_half * dr * dr));
        if (j + 1 < g.nz) couple(i, j + 1, -1.0 / (dz * dz));
        if (j - 1 >= 0) couple(i, j - 1, -1.0 / (dz * dz));
        rp.m_diag[k] = w * g.eps_of(i, j);
    }
    rp.a_w.resize(n, n);
    rp.a_w.setFromTriplets(trips.begin(), trips.end());
    return rp;
}

struct EigPair {
    double lambda;
    Eigen::VectorXd vec; // reduced coordinates
};

std::vector<EigPair> dense_eigs(const ReducedProblem& rp, int count) {
    const int n = static_cast<int>(rp.node_of.size());
    Eigen::MatrixXd a = Eigen::MatrixXd(rp.a_w);
    Eigen::MatrixXd m = rp.m_diag.asDiagonal();
    Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> es(a, m);
    if (es.info() != Eigen::Success)
        throw SolverNoConvergence("dense generalized eigensolver failed");
    std::vector<EigPair> out;
    for (int k = 0; k < std::min(count, n); ++k)
        out.push_back({es.eigenvalues()[k], es.eigenvectors().col(k)});
    return out;
}

/// Shift-invert Lanczos with full reorthogonalization on the symmetric form
/// C = M^-1/2 A_w M^-1/2. Deterministic for a fixed seed.
std::vector<EigPair> lanczos_eigs(const ReducedProblem& rp, int count, const SolverOptions& opt) {
    const int n = static_cast<int>(rp.node_of.size());
    if (n <= std::max(400, 2 * count + 20)) return dense_eigs(rp, count);

    const double sigma = std::pow(2.0 * M_PI * opt.shift_hz / kSpeedOfLight, 2);
    const Eigen::VectorXd d = rp.m_diag.cwiseSqrt();

    Eigen::SparseMatrix<double> shifted = rp.a_w;
    if (sigma != 0.0) {
        Eigen::SparseMatrix<double> m(n, n);
        m.reserve(Eigen::VectorXi::Constant(n, 1));
        for (int k = 0; k < n; ++k) m.insert(k, k) = rp.m_diag[k];
        shifted = rp.a_w - sigma * m;
    }

    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt;
    Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
    const bool use_ldlt = sigma == 0.0;
    if (use_ldlt) {
        ldlt.compute(shifted);
        if (ldlt.info() != Eigen::Success)
            throw SolverNoConvergence("LDLT factorization failed");
    } else {
        lu.compute(shifted);
        if (lu.info() != Eigen::Success)
            throw SolverNoConvergence("sparse LU factorization of shifted operator failed");
    }
    const auto apply = [&](const Eigen::VectorXd& y) -> Eigen::VectorXd {
        const Eigen::VectorXd rhs = d.cwiseProduct(y);
        Eigen::VectorXd sol;
        if (use_ldlt) sol = ldlt.solve(rhs);
        else sol = lu.solve(rhs);
        return d.cwiseProduct(sol);
    };

    std::mt19937_64 rng(opt.seed);
    std::uniform_real_distribution<double> unif(-1.0, 1.0);
    Eigen::VectorXd v(n);
    for (int k = 0; k < n; ++k) v[k] = unif(rng);
    v.normalize();

    std::vector<Eigen::VectorXd> basis{v};
    std::vector<double> alpha, beta;
    const int m_max = std::min(n, opt.max_lanczos);
    int checkpoint = std::min(n, std::max(100, 6 * count + 40));

    Eigen::VectorXd ritz_values;
    Eigen::MatrixXd ritz_s;
    int converged = 0;
    double worst_res = 0.0;

    while (true) {
        while (static_cast<int>(alpha.size()) < checkpoint) {
            const int it = static_cast<int>(alpha.size());
            Eigen::VectorXd w = apply(basis[it]);
            if (it > 0) w -= beta[it - 1] * basis[it - 1];
            const double a = basis[it].dot(w);
            w -= a * basis[it];
            for (int pass = 0; pass < 2; ++pass)
                for (const auto& q : basis) w -= q.dot(w) * q;
            double b = w.norm();
            alpha.push_back(a);
            if (b < 1e-13) {
                // invariant subspace: continue with a fresh direction
                for (int k = 0; k < n; ++k) w[k] = unif(rng);
                for (int pass = 0; pass < 2; ++pass)
                    for (const auto& q : basis) w -= q.dot(w) * q;
                b = w.norm();
                if (b < 1e-13) { checkpoint = it + 1; beta.push_back(0.0); break; }
                beta.push_back(0.0);
            } else {
                beta.push_back(b);
            }
            if (it + 1 < m_max) basis.push_back(w / b);
            else break;
        }
        const int m = static_cast<int>(alpha.size());
        Eigen::VectorXd diag = Eigen::Map<const Eigen::VectorXd>(alpha.data(), m);
        Eigen::VectorXd sub(m > 1 ? m - 1 : 0);
        for (int k = 0; k + 1 < m; ++k) sub[k] = beta[k];
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> tri;
        tri.computeFromTridiagonal(diag, sub);
        if (tri.info() != Eigen::Success)
            throw SolverNoConvergence("tridiagonal eigensolver failed");

        // Ritz values of the inverted operator, sorted by descending theta,
        // correspond to eigenvalues sigma + 1/theta closest above sigma.
        std::vector<int> order(m);
        for (int k = 0; k < m; ++k) order[k] = k;
        std::sort(order.begin(), order.end(), [&](int x, int y) {
            return tri.eigenvalues()[x] > tri.eigenvalues()[y];
        });
        const double bm = beta.empty() ? 0.0 : beta[m - 1];
        converged = 0;
        worst_res = 0.0;
        const int want = std::min(count, m);
        for (int k = 0; k < want; ++k) {
            const int col = order[k];
            const double theta = tri.eigenvalues()[col];
            const double res = std::abs(bm * tri.eigenvectors()(m - 1, col));
            if (theta > 0.0 && res <= opt.tolerance * std::abs(theta)) ++converged;
            worst_res = std::max(worst_res, std::abs(theta) > 0 ? res / std::abs(theta) : res);
        }
        if (converged >= want || m >= m_max) {
            if (converged < want && m >= m_max) {
                std::ostringstream msg;
                msg << "Lanczos: " << converged << " of " << want << " modes converged after " << m
                    << " iterations (worst relative residual " << worst_res << ")";
                if (n <= opt.dense_fallback_limit) return dense_eigs(rp, count);
                throw SolverNoConvergence(msg.str());
            }
            std::vector<EigPair> out;
            for (int k = 0; k < want; ++k) {
                const int col = order[k];
                const double theta = tri.eigenvalues()[col];
                if (theta <= 0.0) continue;
                Eigen::VectorXd y = Eigen::VectorXd::Zero(n);
                for (int q = 0; q < m; ++q) y += tri.eigenvectors()(q, col) * basis[q];
                out.push_back({sigma + 1.0 / theta, d.cwiseInverse().cwiseProduct(y)});
            }
            std::sort(out.begin(), out.end(),
                      [](const EigPair& x, const EigPair& y) { return x.lambda < y.lambda; });
            return out;
        }
        checkpoint = std::min(m_max, checkpoint + std::max(40, checkpoint / 2));
    }
}

void compute_h_fields(ModeSolution& mode) {
    const Grid2D& g = mode.grid;
    const int nr = g.nr, nz = g.nz;
    const auto& e = mode.e_theta;
    mode.h_r.assign(e.size(), 0.0);
    mode.h_z.assign(e.size(), 0.0);
    const auto at = [&](int i, int j) { return e[g.index(i, j)]; };
    for (int j = 0; j < nz; ++j) {
        for (int i = 0; i < nr; ++i) {
            double hr;
            if (j == 0) hr = (at(i, 1) - at(i, 0)) / g.dz;
            else if (j == nz - 1) hr = (at(i, nz - 1) - at(i, nz - 2)) / g.dz;
            else hr = (at(i, j + 1) - at(i, j - 1)) / (2.0 * g.dz);
            mode.h_r[g.index(i, j)] = hr;

            double hz;
            if (i == 0) {
                hz = 2.0 * (at(1, j) - at(0, j)) / g.dr; // axis limit of (1/r) d(r e)/dr
            } else if (i == nr - 1) {
                hz = (g.r_of(nr - 1) * at(nr - 1, j) - g.r_of(nr - 2) * at(nr - 2, j)) /
                     (g.dr * g.r_of(nr - 1));
            } else {
                hz = (g.r_of(i + 1) * at(i + 1, j) - g.r_of(i - 1) * at(i - 1, j)) /
                     (2.0 * g.dr * g.r_of(i));
            }
            mode.h_z[g.index(i, j)] = hz;
        }
    }
}

int count_sign_changes(const std::vector<double>& line, double threshold) {
    int changes = 0;
    double prev = 0.0;
    bool have_prev = false;
    for (double v : line) {
        if (std::abs(v) <= threshold) continue;
        if (have_prev && ((prev > 0) != (v > 0))) ++changes;
        prev = v;
        have_prev = true;
    }
    return changes;
}

} // namespace

EigenProblem assemble_eigenproblem(const Grid2D& g) {
    const int n = g.size();
    EigenProblem ep;
    ep.b_diag = Eigen::VectorXd::Zero(n);
    ep.row_weight = Eigen::VectorXd::Zero(n);
    std::vector<Eigen::Triplet<double>> trips;
    trips.reserve(static_cast<size_t>(n) * 5);
    const double dr = g.dr, dz = g.dz;
    for (int j = 0; j < g.nz; ++j) {
        for (int i = 0; i < g.nr; ++i) {
            const int k = g.index(i, j);
            if (is_dirichlet(g, i, j)) {
                trips.emplace_back(k, k, 1.0);
                continue;
            }
            const double r = g.r_of(i);
            const double rp_half = r + 0.5 * dr;
            const double rm_half = r - 0.5 * dr;
            double diag = (r / rp_half + r / rm_half) / (dr * dr) + 2.0 / (dz * dz);
            if (j == g.face_row && i < g.face_cols)
                diag += (1.0 / g.face_theta - 1.0) / (dz * dz);
            trips.emplace_back(k, k, diag);
            const auto couple = [&](int ii, int jj, double coeff) {
                if (!is_dirichlet(g, ii, jj)) trips.emplace_back(k, g.index(ii, jj), coeff);
            };
            if (i + 1 < g.nr) couple(i + 1, j, -g.r_of(i + 1) / (rp_half * dr * dr));
            if (i - 1 >= 1) couple(i - 1, j, -g.r_of(i - 1) / (rm_half * dr * dr));
            if (j + 1 < g.nz) couple(i, j + 1, -1.0 / (dz * dz));
            if (j - 1 >= 0) couple(i, j - 1, -1.0 / (dz * dz));
            ep.b_diag[k] = g.eps_of(i, j);
            ep.row_weight[k] = r * dr * dz;
        }
    }
    ep.a.resize(n, n);
    ep.a.setFromTriplets(trips.begin(), trips.end());
    return ep;
}

double bessel_j1_root(int n) {
    static constexpr std::array<double, 8> roots = {
        3.8317059702075123, 7.0155866698156190, 10.173468135062722, 13.323691936314223,
        16.470630050877634, 19.615858510468242, 22.760084380592772, 25.903672087618383};
    if (n < 1 || n > static_cast<int>(roots.size()))
        throw std::invalid_argument("bessel_j1_root: n must be in [1, 8]");
    return roots[n - 1];
}

double analytic_te0np(double radius, double height, int n, int p) {
    if (!(radius > 0.0) || !(height > 0.0))
        throw std::invalid_argument("analytic_te0np: dimensions must be positive");
    if (n < 1 || p < 1)
        throw std::invalid_argument("analytic_te0np: mode indices must be >= 1");
    const double kr = bessel_j1_root(n) / radius;
    const double kz = p * M_PI / height;
    return kSpeedOfLight / (2.0 * M_PI) * std::hypot(kr, kz);
}

std::vector<ModeSolution> solve_grid_modes(const Grid2D& grid, int count,
                                           const SolverOptions& options) {
    if (count < 1) throw std::invalid_argument("solve_grid_modes: count must be >= 1");
    const ReducedProblem rp = reduce(grid);
    if (rp.node_of.empty()) throw SolverNoConvergence("grid has no interior nodes");
    auto pairs = lanczos_eigs(rp, count + 2, options);

    std::vector<ModeSolution> modes;
    for (const auto& pr : pairs) {
        if (!(pr.lambda > 0.0)) continue;
        ModeSolution mode;
        mode.grid = grid;
        mode.frequency = kSpeedOfLight * std::sqrt(pr.lambda) / (2.0 * M_PI);
        mode.e_theta.assign(grid.size(), 0.0);
        for (size_t k = 0; k < rp.node_of.size(); ++k)
            mode.e_theta[rp.node_of[k]] = pr.vec[static_cast<int>(k)];

        double norm2 = 0.0;
        for (int j = 0; j < grid.nz; ++j)
            for (int i = 0; i < grid.nr; ++i) {
                const double e = mode.e_theta[grid.index(i, j)];
                norm2 += e * e * grid.r_of(i) * grid.dr * grid.dz;
            }
        const double scale = 1.0 / std::sqrt(norm2);
        int peak = 0;
        for (int k = 0; k < static_cast<int>(mode.e_theta.size()); ++k)
            if (std::abs(mode.e_theta[k]) > std::abs(mode.e_theta[peak])) peak = k;
        const double sign = mode.e_theta[peak] < 0.0 ? -1.0 : 1.0;
        for (auto& e : mode.e_theta) e *= sign * scale;

        compute_h_fields(mode);
        const auto [n, p] = classify_mode(mode);
        mode.n_radial = n;
        mode.p_axial = p;
        modes.push_back(std::move(mode));
    }
    std::sort(modes.begin(), modes.end(),
              [](const ModeSolution& a, const ModeSolution& b) { return a.frequency < b.frequency; });
    // keep `count` modes plus any near-degenerate partners of the last one
    if (static_cast<int>(modes.size()) > count) {
        const double cutoff = modes[count - 1].frequency * (1.0 + 1e-4);
        int keep = count;
        while (keep < static_cast<int>(modes.size()) && modes[keep].frequency <= cutoff) ++keep;
        modes.resize(keep);
    }
    return modes;
}

std::vector<ModeSolution> solve_te0_modes(const CavityGeometry& geometry, double resolution,
                                          int count, const SolverOptions& options) {
    return solve_grid_modes(rasterize(geometry, resolution), count, options);
}

std::pair<int, int> classify_mode(const ModeSolution& mode) {
    const Grid2D& g = mode.grid;
    double gmax = 0.0;
    int imax = 0, jmax = 0;
    for (int j = 0; j < g.nz; ++j)
        for (int i = 0; i < g.nr; ++i) {
            const double v = std::abs(mode.e_theta[g.index(i, j)]);
            if (v > gmax) { gmax = v; imax = i; jmax = j; }
        }
    if (gmax <= 0.0) throw ClassificationAmbiguous("mode field is identically zero");

    std::vector<double> radial(g.nr), axial(g.nz);
    double radial_peak = 0.0, axial_peak = 0.0;
    for (int i = 0; i < g.nr; ++i) {
        radial[i] = mode.e_theta[g.index(i, jmax)];
        radial_peak = std::max(radial_peak, std::abs(radial[i]));
    }
    for (int j = 0; j < g.nz; ++j) {
        axial[j] = mode.e_theta[g.index(imax, j)];
        axial_peak = std::max(axial_peak, std::abs(axial[j]));
    }
    if (radial_peak < 1e-3 * gmax || axial_peak < 1e-3 * gmax)
        throw ClassificationAmbiguous("scan line peak below 1e-3 of the field maximum");

    const double threshold = 1e-6 * gmax;
    return {count_sign_changes(radial, threshold) + 1, count_sign_changes(axial, threshold) + 1};
}

double mode_overlap(const ModeSolution& a, const ModeSolution& b) {
    const Grid2D& g = a.grid;
    if (g.nr != b.grid.nr || g.nz != b.grid.nz)
        throw std::invalid_argument("mode_overlap: grids differ");
    double s = 0.0;
    for (int j = 0; j < g.nz; ++j)
        for (int i = 0; i < g.nr; ++i)
            s += a.e_theta[g.index(i, j)] * b.e_theta[g.index(i, j)] * g.r_of(i) * g.dr * g.dz;
    return std::abs(s);
}

namespace {

/// Tracked working-mode solutions over a depth list: classification selects
/// the branch at the first depth, field overlap follows it afterwards.
std::vector<ModeSolution> tracked_solve(const CavityGeometry& geometry,
                                        const std::vector<double>& depths,
                                        std::pair<int, int> selector, double resolution, int jobs,
                                        const SolverOptions& options) {
    if (depths.empty()) return {};
    for (size_t k = 0; k + 1 < depths.size(); ++k)
        if (depths[k] > depths[k + 1])
            throw std::invalid_argument("depths must be sorted ascending");
    const double maxd = geometry.max_plunger_depth();
    for (double d : depths)
        if (d < 0.0 || d > maxd + 1e-12)
            throw std::invalid_argument("plunger depth outside [0, shield_height - ring_top]");

    const int count = std::max(8, 2 * (selector.first + selector.second));
    std::vector<std::vector<ModeSolution>> all(depths.size());
    parallel_for(depths.size(), jobs, [&](size_t k) {
        CavityGeometry g = geometry;
        g.plunger_depth = depths[k];
        all[k] = solve_te0_modes(g, resolution, count, options);
    });

    std::vector<ModeSolution> tracked;
    for (size_t k = 0; k < depths.size(); ++k) {
        const std::vector<ModeSolution>& sols = all[k];
        int pick = -1;
        if (k == 0) {
            for (size_t m = 0; m < sols.size(); ++m)
                if (sols[m].n_radial == selector.first && sols[m].p_axial == selector.second) {
                    pick = static_cast<int>(m);
                    break;
                }
            if (pick < 0) {
                std::ostringstream msg;
                msg << "mode (" << selector.first << "," << selector.second
                    << ") not found among the " << sols.size() << " lowest modes at depth "
                    << depths[0];
                throw ModeTrackingLost(msg.str());
            }
        } else {
            double best = -1.0;
            for (size_t m = 0; m < sols.size(); ++m) {
                const double ov = mode_overlap(tracked.back(), sols[m]);
                if (ov > best) { best = ov; pick = static_cast<int>(m); }
            }
            if (best < 0.5) {
                std::ostringstream msg;
                msg << "mode tracking lost between depths " << depths[k - 1] << " and "
                    << depths[k] << " (best overlap " << best << ")";
                throw ModeTrackingLost(msg.str());
            }
        }
        tracked.push_back(sols[pick]);
    }
    return tracked;
}

} // namespace

std::vector<TuningPoint> tuning_curve(const CavityGeometry& geometry,
                                      const std::vector<double>& depths,
                                      std::pair<int, int> mode_selector, double resolution,
                                      int jobs, const SolverOptions& options) {
    const auto tracked = tracked_solve(geometry, depths, mode_selector, resolution, jobs, options);
    std::vector<TuningPoint> curve(tracked.size());
    for (size_t k = 0; k < tracked.size(); ++k)
        curve[k] = {depths[k], tracked[k].frequency};
    return curve;
}

double find_plunger_for_frequency(const CavityGeometry& geometry, double target_hz,
                                  std::pair<int, int> mode_selector, double resolution, int jobs,
                                  const SolverOptions& options) {
    constexpr double kFreqTol = 1e6; // 1 MHz
    const double maxd = geometry.max_plunger_depth();
    if (!(maxd > 0.0)) throw TargetOutOfRange("no plunger travel available");

    std::vector<double> anchors;
    for (int k = 0; k <= 4; ++k) anchors.push_back(maxd * k / 4.0);
    auto tracked = tracked_solve(geometry, anchors, mode_selector, resolution, jobs, options);

    if (target_hz < tracked.front().frequency - kFreqTol ||
        target_hz > tracked.back().frequency + kFreqTol) {
        std::ostringstream msg;
        msg << "target " << target_hz / 1e9 << " GHz outside the tuning span ["
            << tracked.front().frequency / 1e9 << ", " << tracked.back().frequency / 1e9 << "] GHz";
        throw TargetOutOfRange(msg.str());
    }

    // bracket between consecutive anchors (curve is monotone non-decreasing)
    size_t seg = 0;
    while (seg + 1 < tracked.size() && tracked[seg + 1].frequency < target_hz) ++seg;
    double d_lo = anchors[seg], d_hi = anchors[seg + 1];
    ModeSolution lo = tracked[seg], hi = tracked[seg + 1];
    if (std::abs(lo.frequency - target_hz) <= kFreqTol) return d_lo;
    if (std::abs(hi.frequency - target_hz) <= kFreqTol) return d_hi;

    for (int iter = 0; iter < 80; ++iter) {
        const double d_mid = 0.5 * (d_lo + d_hi);
        CavityGeometry g = geometry;
        g.plunger_depth = d_mid;
        auto sols = solve_te0_modes(g, resolution, 8, options);
        const ModeSolution& ref = (d_mid - d_lo < d_hi - d_mid) ? lo : hi;
        double best = -1.0;
        int pick = 0;
        for (size_t m = 0; m < sols.size(); ++m) {
            const double ov = mode_overlap(ref, sols[m]);
            if (ov > best) { best = ov; pick = static_cast<int>(m); }
        }
        if (best < 0.5) throw ModeTrackingLost("mode tracking lost during plunger bisection");
        const double f_mid = sols[pick].frequency;
        if (std::abs(f_mid - target_hz) <= kFreqTol) return d_mid;
        if (f_mid < target_hz) { d_lo = d_mid; lo = sols[pick]; }
        else { d_hi = d_mid; hi = sols[pick]; }
    }
    throw SolverNoConvergence("plunger bisection did not reach the 1 MHz tolerance");
}

double q_from_linewidth(double f0, double fwhm) {
    if (!(fwhm > 0.0)) throw std::invalid_argument("q_from_linewidth: fwhm must be positive");
    return f0 / fwhm;
}

double circulating_power(double p_in, double q_loaded, double beta) {
    if (!(p_in >= 0.0)) throw std::invalid_argument("circulating_power: p_in must be >= 0");
    if (!(q_loaded > 0.0)) throw std::invalid_argument("circulating_power: q_loaded must be > 0");
    if (!(beta > 0.0)) throw std::invalid_argument("circulating_power: beta must be > 0");
    return p_in * q_loaded * 4.0 * beta / ((1.0 + beta) * (1.0 + beta));
}

namespace {

double get_param(const CavityGeometry& g, FreeParam p) {
    switch (p) {
        case FreeParam::RelativePermittivity: return g.dielectric.relative_permittivity;
        case FreeParam::RingOuterRadius: return g.ring_outer_radius;
        case FreeParam::RingTop: return g.ring_top;
    }
    throw std::invalid_argument("unknown free parameter");
}

void set_param(CavityGeometry& g, FreeParam p, double value) {
    switch (p) {
        case FreeParam::RelativePermittivity: g.dielectric.relative_permittivity = value; return;
        case FreeParam::RingOuterRadius: g.ring_outer_radius = value; return;
        case FreeParam::RingTop: g.ring_top = value; return;
    }
    throw std::invalid_argument("unknown free parameter");
}

std::pair<double, double> param_bounds(const CavityGeometry& g, FreeParam p,
                                       const CalibrationOptions& opt) {
    switch (p) {
        case FreeParam::RelativePermittivity:
            return {opt.permittivity_min, opt.permittivity_max};
        case FreeParam::RingOuterRadius:
            return {g.ring_inner_radius + 4.0 * opt.resolution,
                    g.shield_radius - 2.0 * opt.resolution};
        case FreeParam::RingTop:
            return {g.ring_bottom + 4.0 * opt.resolution,
                    std::min(opt.ring_top_max, g.shield_height)};
    }
    throw std::invalid_argument("unknown free parameter");
}

} // namespace

CalibrationResult calibrate_geometry(const CavityGeometry& base,
                                     const std::vector<CalibrationTarget>& targets,
                                     const std::vector<FreeParam>& free_params,
                                     const CalibrationOptions& options) {
    if (targets.empty() || targets.size() > 3)
        throw std::invalid_argument("calibrate_geometry: need 1..3 targets");
    if (free_params.empty() || free_params.size() > targets.size())
        throw std::invalid_argument("calibrate_geometry: need 1 <= |free_params| <= |targets|");
    for (const auto& t : targets)
        if (!(t.frequency > 0.0) || t.n < 1 || t.p < 1)
            throw std::invalid_argument("calibrate_geometry: invalid target");

    CavityGeometry geom = base;
    geom.plunger_depth = 0.0;

    std::map<std::array<double, 3>, std::pair<double, std::vector<double>>> cache;
    const auto evaluate = [&](const CavityGeometry& g) {
        const std::array<double, 3> key{g.dielectric.relative_permittivity, g.ring_outer_radius,
                                        g.ring_top};
        if (const auto it = cache.find(key); it != cache.end()) return it->second;
        std::vector<double> achieved(targets.size(), 0.0);
        double obj = 0.0;
        try {
            const auto modes = solve_te0_modes(g, options.resolution, options.mode_count);
            for (size_t t = 0; t < targets.size(); ++t) {
                double f = 0.0;
                for (const auto& m : modes)
                    if (m.n_radial == targets[t].n && m.p_axial == targets[t].p) {
                        f = m.frequency;
                        break;
                    }
                achieved[t] = f;
                if (f <= 0.0) obj += 1.0; // target mode not among the solved set
                else {
                    const double rel = (f - targets[t].frequency) / targets[t].frequency;
                    obj += rel * rel;
                }
            }
        } catch (const Error&) {
            obj = 1e6;
        }
        const auto value = std::make_pair(obj, achieved);
        cache[key] = value;
        return value;
    };

    auto [obj, achieved] = evaluate(geom);
    int sweeps = 0;
    bool converged = obj < options.convergence; // targets already satisfied

    while (!converged && sweeps < options.max_sweeps) {
        const double before = obj;
        for (const FreeParam p : free_params) {
            const auto [lo, hi] = param_bounds(geom, p, options);
            if (!(lo < hi)) continue;

            // coarse scan, then golden-section refinement around the best cell
            const int n_scan = 13;
            double best_x = get_param(geom, p), best_f = obj;
            for (int s = 0; s < n_scan; ++s) {
                const double x = lo + (hi - lo) * s / (n_scan - 1);
                CavityGeometry g = geom;
                set_param(g, p, x);
                const double f = evaluate(g).first;
                if (f < best_f) { best_f = f; best_x = x; }
            }
            const double step = (hi - lo) / (n_scan - 1);
            double a = std::max(lo, best_x - step), b = std::min(hi, best_x + step);
            const double gr = 0.5 * (std::sqrt(5.0) - 1.0);
            double x1 = b - gr * (b - a), x2 = a + gr * (b - a);
            const auto eval_at = [&](double x) {
                CavityGeometry g = geom;
                set_param(g, p, x);
                return evaluate(g).first;
            };
            double f1 = eval_at(x1), f2 = eval_at(x2);
            for (int it = 0; it < 24 && (b - a) > 1e-4 * (hi - lo); ++it) {
                if (f1 < f2) { b = x2; x2 = x1; f2 = f1; x1 = b - gr * (b - a); f1 = eval_at(x1); }
                else { a = x1; x1 = x2; f1 = f2; x2 = a + gr * (b - a); f2 = eval_at(x2); }
            }
            double xbest = best_x, fbest = best_f;
            if (f1 < fbest) { fbest = f1; xbest = x1; }
            if (f2 < fbest) { fbest = f2; xbest = x2; }
            if (fbest < obj) {
                set_param(geom, p, xbest);
                std::tie(obj, achieved) = evaluate(geom);
            }
        }
        ++sweeps;
        if (before - obj < options.convergence) { converged = true; break; }
    }
    if (!converged)
        throw CalibrationNoConvergence("calibration did not converge within the sweep limit");

    CalibrationResult result;
    result.geometry = geom;
    result.achieved = achieved;
    result.objective = obj;
    result.sweeps = sweeps;
    for (size_t t = 0; t < targets.size(); ++t)
        result.residuals.push_back(achieved[t] > 0.0
                                       ? std::abs(achieved[t] - targets[t].frequency) /
                                             targets[t].frequency
                                       : 1.0);
    return result;
}

} // namespace nvcavity
