#include "drflex/stability.hpp"

#include "drflex/parallel.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace drflex {

namespace {

// Barycentric weights of the Chebyshev-Gauss-Lobatto nodes in ascending
// order; common scale factors cancel everywhere they are used.
std::vector<double> barycentric_weights(int n_points) {
    std::vector<double> w(n_points, 1.0);
    for (int k = 0; k < n_points; ++k) {
        w[k] = (k % 2 == 0) ? 1.0 : -1.0;
        if (k == 0 || k == n_points - 1) w[k] *= 0.5;
    }
    return w;
}

}  // namespace

ChebyshevGrid chebyshev_grid(int n, double tau_max) {
    if (n < 2) throw std::invalid_argument("chebyshev_grid: N must be >= 2");
    if (!(tau_max > 0.0) || !std::isfinite(tau_max))
        throw std::invalid_argument("chebyshev_grid: tau_max must be > 0");

    ChebyshevGrid grid;
    grid.n_points = n + 1;
    grid.tau_max = tau_max;
    grid.nodes.resize(n + 1);
    for (int k = 1; k < n; ++k) {
        const double angle = static_cast<double>(n - k) * std::numbers::pi / n;
        grid.nodes[k] = (std::cos(angle) - 1.0) * tau_max / 2.0;
    }
    grid.nodes[0] = -tau_max;  // cos(pi) = -1, pinned exactly
    grid.nodes[n] = 0.0;       // cos(0) = 1
    return grid;
}

Eigen::MatrixXd chebyshev_diff_matrix(const ChebyshevGrid& grid) {
    const int np = grid.n_points;
    if (np < 3 || static_cast<int>(grid.nodes.size()) != np)
        throw std::invalid_argument("chebyshev_diff_matrix: invalid grid");
    const auto w = barycentric_weights(np);

    Eigen::MatrixXd d = Eigen::MatrixXd::Zero(np, np);
    for (int i = 0; i < np; ++i) {
        double diag = 0.0;
        for (int j = 0; j < np; ++j) {
            if (j == i) continue;
            d(i, j) = (w[j] / w[i]) / (grid.nodes[i] - grid.nodes[j]);
            diag -= d(i, j);
        }
        d(i, i) = diag;  // negative row sum keeps constants exact
    }
    return d;
}

Eigen::VectorXd interpolation_row(const ChebyshevGrid& grid, double theta) {
    const int np = grid.n_points;
    if (theta < grid.nodes.front() - 1e-12 || theta > grid.nodes.back() + 1e-12)
        throw std::invalid_argument("interpolation_row: theta outside [-tau_max, 0]");

    Eigen::VectorXd row = Eigen::VectorXd::Zero(np);
    const double near = 1e-13 * std::max(1.0, grid.tau_max);
    for (int k = 0; k < np; ++k) {
        if (std::abs(theta - grid.nodes[k]) < near) {
            row(k) = 1.0;
            return row;
        }
    }

    const auto w = barycentric_weights(np);
    double denom = 0.0;
    for (int k = 0; k < np; ++k) {
        row(k) = w[k] / (theta - grid.nodes[k]);
        denom += row(k);
    }
    row /= denom;
    return row;
}

SpectralDiscretization discretize(const DelaySystem& sys, int n, DelaySampling mode) {
    sys.validate();
    const int nd = sys.dim();
    const double tau_max = sys.terms.empty() ? 1.0 : sys.max_delay();

    SpectralDiscretization disc;
    disc.grid = chebyshev_grid(n, tau_max);
    disc.source = sys;

    const Eigen::MatrixXd d = chebyshev_diff_matrix(disc.grid);
    const int np = disc.grid.n_points;
    const int dim = nd * np;

    Eigen::MatrixXd a_n = Eigen::MatrixXd::Zero(dim, dim);
    const Eigen::MatrixXd id = Eigen::MatrixXd::Identity(nd, nd);
    for (int i = 0; i < np - 1; ++i)
        for (int j = 0; j < np; ++j)
            if (d(i, j) != 0.0) a_n.block(i * nd, j * nd, nd, nd) = d(i, j) * id;

    // system row at theta_N = 0
    const int last = (np - 1) * nd;
    a_n.block(last, last, nd, nd) += sys.a0;

    for (const auto& term : sys.terms) {
        Eigen::VectorXd row;
        if (mode == DelaySampling::nearest_node) {
            int best = 0;
            double best_dist = std::abs(disc.grid.nodes[0] + term.tau);
            for (int k = 1; k < np; ++k) {
                const double dist = std::abs(disc.grid.nodes[k] + term.tau);
                if (dist < best_dist) {
                    best = k;
                    best_dist = dist;
                }
            }
            if (best_dist > 0.05 * tau_max) {
                std::ostringstream msg;
                msg << "discretize: nearest node to tau=" << term.tau << " is off by "
                    << best_dist << " s (> 5% of tau_max=" << tau_max << "); increase N";
                throw std::runtime_error(msg.str());
            }
            row = Eigen::VectorXd::Zero(np);
            row(best) = 1.0;
        } else {
            row = interpolation_row(disc.grid, -term.tau);
        }
        for (int j = 0; j < np; ++j)
            if (row(j) != 0.0) a_n.block(last, j * nd, nd, nd) += row(j) * term.a;
        disc.delay_rows.push_back(std::move(row));
    }

    disc.a_n = std::move(a_n);
    return disc;
}

namespace {

Eigen::MatrixXcd char_matrix(const DelaySystem& sys, std::complex<double> lambda) {
    const int n = sys.dim();
    Eigen::MatrixXcd m =
        lambda * Eigen::MatrixXcd::Identity(n, n) - sys.a0.cast<std::complex<double>>();
    for (const auto& t : sys.terms)
        m -= t.a.cast<std::complex<double>>() * std::exp(-lambda * t.tau);
    return m;
}

double residual_scale_of(const DelaySystem& sys, double tolerance) {
    double scale = 1.0 + sys.a0.norm();
    for (const auto& t : sys.terms) scale += t.a.norm();
    return tolerance * scale;
}

bool rightmost_order(const std::complex<double>& a, const std::complex<double>& b) {
    if (a.real() != b.real()) return a.real() > b.real();
    return a.imag() > b.imag();
}

}  // namespace

double char_residual(const DelaySystem& sys, std::complex<double> lambda) {
    Eigen::JacobiSVD<Eigen::MatrixXcd> svd(char_matrix(sys, lambda));
    return svd.singularValues().minCoeff();
}

RefinedEigenvalue newton_refine(const DelaySystem& sys, std::complex<double> lambda0,
                                double residual_tol, int max_iter) {
    const int n = sys.dim();
    RefinedEigenvalue out;
    out.raw = lambda0;
    out.value = lambda0;

    std::complex<double> lambda = lambda0;
    for (int it = 0; it < max_iter; ++it) {
        const Eigen::MatrixXcd m = char_matrix(sys, lambda);
        Eigen::MatrixXcd mp = Eigen::MatrixXcd::Identity(n, n);
        for (const auto& t : sys.terms)
            mp += t.a.cast<std::complex<double>>() * (t.tau * std::exp(-lambda * t.tau));

        // d/dlambda log det M = tr(M^{-1} M'), so the determinant Newton step
        // is -1 / tr(M^{-1} M').
        Eigen::PartialPivLU<Eigen::MatrixXcd> lu(m);
        const std::complex<double> trace = lu.solve(mp).trace();
        if (!std::isfinite(trace.real()) || !std::isfinite(trace.imag()) ||
            std::abs(trace) < 1e-300)
            break;
        const std::complex<double> step = -1.0 / trace;
        lambda += step;
        out.iterations = it + 1;
        if (std::abs(step) <= 1e-13 * (1.0 + std::abs(lambda))) break;
    }

    out.value = lambda;
    out.residual = char_residual(sys, lambda);
    out.converged = std::isfinite(lambda.real()) && std::isfinite(lambda.imag()) &&
                    out.residual <= residual_tol;
    return out;
}

StabilityReport stability_index(const DelaySystem& sys, const StabilityOptions& opts) {
    sys.validate();
    if (opts.n < 2) throw std::invalid_argument("stability_index: N must be >= 2");

    StabilityReport report;
    report.residual_scale = residual_scale_of(sys, opts.tolerance);

    if (sys.terms.empty()) {
        // plain ODE: the dense eigensolver already gives the exact answer
        Eigen::EigenSolver<Eigen::MatrixXd> es(sys.a0);
        if (es.info() != Eigen::Success)
            throw std::runtime_error("stability_index: eigensolver failed to converge");
        for (int i = 0; i < es.eigenvalues().size(); ++i)
            report.all_eigs.push_back(es.eigenvalues()(i));
        std::sort(report.all_eigs.begin(), report.all_eigs.end(), rightmost_order);

        RefinedEigenvalue r;
        r.raw = r.value = report.all_eigs.front();
        r.residual = char_residual(sys, r.value);
        r.converged = r.residual <= report.residual_scale;
        report.refined.push_back(r);
        report.rightmost = report.raw_rightmost = r.value;
        report.index = report.raw_index = r.value.real();
        report.converged = r.converged;
        return report;
    }

    const SpectralDiscretization disc = discretize(sys, opts.n, opts.mode);
    Eigen::EigenSolver<Eigen::MatrixXd> es(disc.a_n);
    if (es.info() != Eigen::Success)
        throw std::runtime_error("stability_index: eigensolver failed to converge on A_N");

    report.all_eigs.resize(es.eigenvalues().size());
    for (int i = 0; i < es.eigenvalues().size(); ++i) report.all_eigs[i] = es.eigenvalues()(i);
    std::sort(report.all_eigs.begin(), report.all_eigs.end(), rightmost_order);
    report.raw_rightmost = report.all_eigs.front();
    report.raw_index = report.raw_rightmost.real();

    const int k = std::min<int>(opts.refine_count, static_cast<int>(report.all_eigs.size()));
    for (int i = 0; i < k; ++i)
        report.refined.push_back(newton_refine(sys, report.all_eigs[i], report.residual_scale));

    bool have = false;
    std::complex<double> best;
    for (const auto& r : report.refined) {
        if (!r.converged) continue;
        if (!have || rightmost_order(r.value, best)) {
            best = r.value;
            have = true;
        }
    }
    if (!have) {
        // refinement failed everywhere; report the raw value but say so
        report.rightmost = report.raw_rightmost;
        report.index = report.raw_index;
        report.converged = false;
        return report;
    }

    report.rightmost = best;
    report.index = best.real();
    report.converged = true;
    const double margin = 1e-6 * (1.0 + std::abs(best));
    for (const auto& r : report.refined) {
        // an unconverged candidate to the right of the refined answer means
        // the rightmost claim is not certified
        if (!r.converged && r.raw.real() > best.real() + margin) report.converged = false;
    }
    return report;
}

SweepResult parameter_sweep(const LoopBuilder& builder, std::span<const double> kp_grid,
                            std::span<const double> ki_grid, const SweepMetric& metric,
                            int jobs) {
    if (kp_grid.empty() || ki_grid.empty())
        throw std::invalid_argument("parameter_sweep: grids must be nonempty");
    for (std::size_t i = 1; i < kp_grid.size(); ++i)
        if (!(kp_grid[i] > kp_grid[i - 1]))
            throw std::invalid_argument("parameter_sweep: kp grid must be ascending");
    for (std::size_t i = 1; i < ki_grid.size(); ++i)
        if (!(ki_grid[i] > ki_grid[i - 1]))
            throw std::invalid_argument("parameter_sweep: ki grid must be ascending");

    SweepResult result;
    result.kp_grid.assign(kp_grid.begin(), kp_grid.end());
    result.ki_grid.assign(ki_grid.begin(), ki_grid.end());
    result.values.assign(kp_grid.size() * ki_grid.size(), 0.0);

    parallel_for(
        result.values.size(),
        [&](std::size_t idx) {
            const std::size_t i = idx / ki_grid.size();
            const std::size_t j = idx % ki_grid.size();
            try {
                result.values[idx] = metric(builder(kp_grid[i], ki_grid[j]));
            } catch (const std::exception& e) {
                std::ostringstream msg;
                msg << "sweep point (kp=" << kp_grid[i] << ", ki=" << ki_grid[j]
                    << "): " << e.what();
                throw std::runtime_error(msg.str());
            }
        },
        jobs);
    return result;
}

SweepMetric stability_index_metric(const StabilityOptions& opts) {
    return [opts](const LoopRealization& loop) { return stability_index(loop.sys, opts).index; };
}

}  // namespace drflex
