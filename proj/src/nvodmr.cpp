#include "nvcavity/nvodmr.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <Eigen/Dense>

namespace nvcavity {

namespace {

double norm3(const std::array<double, 3>& v) {
    return std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
}

double dot3(const std::array<double, 3>& a, const std::array<double, 3>& b) {
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
}

} // namespace

void NVCenter::validate() const {
    if (std::abs(norm3(axis) - 1.0) > 1e-12)
        throw std::invalid_argument("NVCenter: axis must be unit length");
    if (!(d_splitting > 0.0)) throw std::invalid_argument("NVCenter: d_splitting must be > 0");
    if (!(linewidth_fwhm > 0.0)) throw std::invalid_argument("NVCenter: linewidth must be > 0");
    if (!(contrast_ceiling > 0.0 && contrast_ceiling <= 1.0))
        throw std::invalid_argument("NVCenter: contrast_ceiling must be in (0, 1]");
    if (!(p_sat > 0.0)) throw std::invalid_argument("NVCenter: p_sat must be > 0");
    if (!(strain_e >= 0.0) || !(hyperfine_a >= 0.0))
        throw std::invalid_argument("NVCenter: strain and hyperfine must be >= 0");
}

void NVCenter::normalize_axis() {
    const double n = norm3(axis);
    if (!(n > 0.0)) throw std::invalid_argument("NVCenter: axis must be nonzero");
    for (auto& c : axis) c /= n;
}

double rabi_coupling(const std::array<double, 3>& field, const std::array<double, 3>& axis) {
    if (std::abs(norm3(axis) - 1.0) > 1e-12)
        throw std::invalid_argument("rabi_coupling: axis must be unit length");
    const double proj = dot3(field, axis);
    const std::array<double, 3> perp{field[0] - proj * axis[0], field[1] - proj * axis[1],
                                     field[2] - proj * axis[2]};
    return norm3(perp);
}

std::vector<SpectralLine> resonance_lines(const NVCenter& nv) {
    nv.validate();
    std::vector<double> electronic;
    if (nv.strain_e > 0.0)
        electronic = {nv.d_splitting - nv.strain_e, nv.d_splitting + nv.strain_e};
    else
        electronic = {nv.d_splitting}; // degenerate pair collapses to one line

    std::vector<SpectralLine> lines;
    const double e_weight = nv.strain_e > 0.0 ? 0.5 : 1.0;
    for (double c : electronic) {
        if (nv.hyperfine_a > 0.0) {
            for (double off : {-nv.hyperfine_a, 0.0, nv.hyperfine_a})
                lines.push_back({c + off, e_weight / 3.0});
        } else {
            lines.push_back({c, e_weight});
        }
    }
    std::sort(lines.begin(), lines.end(),
              [](const SpectralLine& a, const SpectralLine& b) { return a.center < b.center; });
    return lines;
}

double saturation_contrast(const NVCenter& nv, double local_power) {
    nv.validate();
    if (!(local_power >= 0.0))
        throw std::invalid_argument("saturation_contrast: power must be >= 0");
    const double s = local_power / nv.p_sat;
    return nv.contrast_ceiling * s / (1.0 + s);
}

ODMRSpectrum synthesize_spectrum(const NVCenter& nv, const std::array<double, 3>& field,
                                 double drive_power, const std::vector<double>& frequencies,
                                 double noise_sigma, std::uint64_t seed) {
    nv.validate();
    if (!(drive_power >= 0.0))
        throw std::invalid_argument("synthesize_spectrum: drive_power must be >= 0");
    if (!(noise_sigma >= 0.0))
        throw std::invalid_argument("synthesize_spectrum: noise_sigma must be >= 0");
    for (size_t k = 0; k + 1 < frequencies.size(); ++k)
        if (!(frequencies[k] < frequencies[k + 1]))
            throw std::invalid_argument("synthesize_spectrum: frequencies must be increasing");

    const double coupling = rabi_coupling(field, nv.axis);
    const double local_power = drive_power * coupling * coupling; // reference coupling = 1
    const double contrast = saturation_contrast(nv, local_power);
    const auto lines = resonance_lines(nv);
    const double half = 0.5 * nv.linewidth_fwhm;

    ODMRSpectrum spec;
    spec.frequencies = frequencies;
    spec.drive_power = drive_power;
    spec.field = field;
    spec.seed = seed;
    spec.noise_sigma = noise_sigma;
    spec.fluorescence.reserve(frequencies.size());

    // Box-Muller on the seeded integer generator: identical streams on every
    // platform, unlike std::normal_distribution.
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const auto gauss = [&]() {
        double u1 = unif(rng);
        while (u1 <= 1e-300) u1 = unif(rng);
        const double u2 = unif(rng);
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    };

    for (const double f : frequencies) {
        double dip = 0.0;
        for (const auto& line : lines) {
            const double d = f - line.center;
            dip += line.weight * half * half / (d * d + half * half);
        }
        double value = 1.0 - contrast * dip;
        if (noise_sigma > 0.0) value += noise_sigma * gauss();
        spec.fluorescence.push_back(value);
    }
    return spec;
}

namespace {

std::vector<double> smooth5(const std::vector<double>& y) {
    const int n = static_cast<int>(y.size());
    std::vector<double> out(y.size());
    for (int k = 0; k < n; ++k) {
        double s = 0.0;
        int c = 0;
        for (int d = -2; d <= 2; ++d) {
            const int i = k + d;
            if (i >= 0 && i < n) { s += y[i]; ++c; }
        }
        out[k] = s / c;
    }
    return out;
}

double median(std::vector<double> v) {
    const size_t mid = v.size() / 2;
    std::nth_element(v.begin(), v.begin() + mid, v.end());
    double m = v[mid];
    if (v.size() % 2 == 0) {
        std::nth_element(v.begin(), v.begin() + mid - 1, v.end());
        m = 0.5 * (m + v[mid - 1]);
    }
    return m;
}

struct LorentzModel {
    int n_lines;

    [[nodiscard]] double operator()(const Eigen::VectorXd& p, double f) const {
        const double b = p[0], c = p[1], half = 0.5 * std::abs(p[2]);
        double dip = 0.0;
        for (int k = 0; k < n_lines; ++k) {
            const double d = f - p[3 + k];
            dip += half * half / (d * d + half * half);
        }
        return b - c * dip / n_lines;
    }

    void jacobian_row(const Eigen::VectorXd& p, double f, Eigen::RowVectorXd& row) const {
        const double c = p[1], g = std::abs(p[2]), half = 0.5 * g;
        row[0] = 1.0;
        double dip = 0.0;
        double ddip_dg = 0.0;
        for (int k = 0; k < n_lines; ++k) {
            const double d = f - p[3 + k];
            const double denom = d * d + half * half;
            const double l = half * half / denom;
            dip += l;
            ddip_dg += half * d * d / (denom * denom); // d/dGamma of (G/2)^2/(d^2+(G/2)^2)
            row[3 + k] = -c / n_lines * (2.0 * d * half * half) / (denom * denom);
        }
        row[1] = -dip / n_lines;
        row[2] = -c / n_lines * ddip_dg * (p[2] < 0 ? -1.0 : 1.0);
    }
};

} // namespace

FitResult fit_odmr(const ODMRSpectrum& spectrum, int n_lines) {
    if (n_lines < 1 || n_lines > 3)
        throw std::invalid_argument("fit_odmr: n_lines must be 1, 2 or 3");
    const auto& f = spectrum.frequencies;
    const auto& y = spectrum.fluorescence;
    const int n = static_cast<int>(f.size());
    if (n < 3 + n_lines + 2 || y.size() != f.size())
        throw std::invalid_argument("fit_odmr: spectrum too short");

    // Initialization: median baseline, centers from the deepest smoothed
    // local minima, width from the half-depth crossing.
    const double b0 = median(y);
    const auto ys = smooth5(y);
    std::vector<std::pair<double, int>> minima; // (depth, index)
    for (int k = 1; k + 1 < n; ++k)
        if (ys[k] < ys[k - 1] && ys[k] <= ys[k + 1]) minima.push_back({b0 - ys[k], k});
    std::sort(minima.rbegin(), minima.rend());

    const int deepest = minima.empty() ? n / 2 : minima.front().second;
    const double depth = std::max(b0 - ys[deepest], 1e-12);
    const double half_level = b0 - 0.5 * depth;
    int left = deepest, right = deepest;
    while (left > 0 && ys[left] < half_level) --left;
    while (right + 1 < n && ys[right] < half_level) ++right;
    double fwhm0 = f[right] - f[left];
    if (!(fwhm0 > 0.0)) fwhm0 = (f[n - 1] - f[0]) / 10.0;

    if (f[n - 1] - f[0] < 3.0 * fwhm0)
        throw InsufficientSpan("spectrum must span at least 3 linewidths around the dip");

    // Box constraints: a dip the data can actually resolve. Widths below the
    // sample spacing or beyond the span, centers far outside the window, and
    // unphysical contrasts all make the model degenerate against the baseline.
    const double span = f[n - 1] - f[0];
    const double spacing = span / (n - 1);
    const auto inside_box = [&](const Eigen::VectorXd& q) {
        if (std::abs(q[1]) > 1.5) return false;
        if (std::abs(q[2]) < 2.0 * spacing || std::abs(q[2]) > 1.5 * span) return false;
        for (int k = 0; k < n_lines; ++k)
            if (q[3 + k] < f[0] - 0.5 * span || q[3 + k] > f[n - 1] + 0.5 * span) return false;
        return true;
    };

    Eigen::VectorXd p(3 + n_lines);
    p[0] = b0;
    p[1] = std::min(1.0, depth * n_lines);
    p[2] = std::clamp(fwhm0, 2.0 * spacing, span / 3.0);
    for (int k = 0; k < n_lines; ++k) {
        if (k < static_cast<int>(minima.size())) p[3 + k] = f[minima[k].second];
        else p[3 + k] = f[deepest] + (k - static_cast<int>(minima.size()) + 1) * fwhm0;
    }

    const LorentzModel model{n_lines};
    const int n_params = 3 + n_lines;
    Eigen::VectorXd resid(n);
    Eigen::MatrixXd jac(n, n_params);
    Eigen::RowVectorXd row(n_params);

    const auto cost_of = [&](const Eigen::VectorXd& q) {
        double c = 0.0;
        for (int k = 0; k < n; ++k) {
            const double r = model(q, f[k]) - y[k];
            c += r * r;
        }
        return c;
    };

    double cost = cost_of(p);
    double lambda = 1e-3;
    int iter = 0;
    bool converged = false;
    for (; iter < 200; ++iter) {
        for (int k = 0; k < n; ++k) {
            resid[k] = model(p, f[k]) - y[k];
            model.jacobian_row(p, f[k], row);
            jac.row(k) = row;
        }
        const Eigen::MatrixXd jtj = jac.transpose() * jac;
        const Eigen::VectorXd jtr = jac.transpose() * resid;
        bool stepped = false;
        for (int attempt = 0; attempt < 30; ++attempt) {
            Eigen::MatrixXd damped = jtj;
            for (int d = 0; d < n_params; ++d) damped(d, d) += lambda * std::max(jtj(d, d), 1e-30);
            const Eigen::VectorXd delta = damped.ldlt().solve(-jtr);
            if (!delta.allFinite()) throw FitNoConvergence("singular normal equations");
            const Eigen::VectorXd trial = p + delta;
            if (!inside_box(trial)) {
                lambda *= 10.0;
                if (lambda > 1e12) break;
                continue;
            }
            const double trial_cost = cost_of(trial);
            if (trial_cost <= cost) {
                const double rel = (cost - trial_cost) / std::max(cost, 1e-300);
                p = trial;
                cost = trial_cost;
                lambda = std::max(lambda / 3.0, 1e-12);
                stepped = true;
                if (rel < 1e-10) converged = true;
                break;
            }
            lambda *= 10.0;
            if (lambda > 1e12) break;
        }
        if (!stepped || converged) { converged = true; break; }
    }
    if (!p.allFinite() || !std::isfinite(cost))
        throw FitNoConvergence("fit diverged to non-finite parameters");

    FitResult result;
    result.baseline = p[0];
    result.contrast = p[1];
    result.fwhm = std::abs(p[2]);
    for (int k = 0; k < n_lines; ++k) result.centers.push_back(p[3 + k]);
    std::sort(result.centers.begin(), result.centers.end());
    result.rms_residual = std::sqrt(cost / n);
    result.iterations = iter + 1;
    result.low_significance = result.contrast <= 3.0 * result.rms_residual + 1e-12;
    return result;
}

ContrastScan contrast_scan(const ModeSolution& mode, const NVCenter& nv,
                           const std::vector<std::array<double, 3>>& path, double drive_power,
                           bool max_normalize) {
    nv.validate();
    // Scan coordinate: whichever in-plane axis actually varies along the path.
    double x_span = 0.0, y_span = 0.0;
    for (const auto& pos : path) {
        x_span = std::max(x_span, std::abs(pos[0]));
        y_span = std::max(y_span, std::abs(pos[1]));
    }
    const int coord = y_span > x_span ? 1 : 0;
    ContrastScan scan;
    scan.positions.reserve(path.size());
    scan.contrasts.reserve(path.size());
    for (const auto& pos : path) {
        const auto field = field_at(mode, pos[0], pos[1], pos[2]);
        const double coupling = rabi_coupling(field, nv.axis);
        const double local_power = drive_power * coupling * coupling;
        scan.positions.push_back(pos[coord]);
        scan.contrasts.push_back(saturation_contrast(nv, local_power));
    }
    if (max_normalize) {
        const double peak = scan.contrasts.empty()
                                ? 0.0
                                : *std::max_element(scan.contrasts.begin(), scan.contrasts.end());
        if (peak > 0.0) {
            for (auto& c : scan.contrasts) c /= peak;
            scan.max_normalized = true;
        }
    }
    return scan;
}

double dbm_to_watts(double dbm) { return std::pow(10.0, (dbm - 30.0) / 10.0); }

double watts_to_dbm(double watts) {
    if (!(watts > 0.0)) throw std::invalid_argument("watts_to_dbm: power must be positive");
    return 10.0 * std::log10(watts) + 30.0;
}

} // namespace nvcavity
