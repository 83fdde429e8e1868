#pragma once

#include "drflex/model.hpp"

#include <complex>
#include <functional>
#include <vector>

namespace drflex {

/// Chebyshev collocation nodes on [-tau_max, 0], indexed ascending so that
/// nodes[0] = -tau_max and nodes[N] = 0 (the "current time" node).
struct ChebyshevGrid {
    int n_points = 0;  ///< N + 1
    double tau_max = 0.0;
    std::vector<double> nodes;

    int n_intervals() const { return n_points - 1; }
};

ChebyshevGrid chebyshev_grid(int n, double tau_max);

/// Differentiation matrix on the grid nodes, built from barycentric weights.
/// Row i maps samples (f(theta_0) ... f(theta_N)) to f'(theta_i); exact for
/// polynomials of degree <= N, rows sum to zero.
Eigen::MatrixXd chebyshev_diff_matrix(const ChebyshevGrid& grid);

/// Barycentric interpolation row l(theta)^T: l(theta) . f(nodes) evaluates the
/// degree-N interpolant at theta. Degenerates to a unit vector on a node.
Eigen::VectorXd interpolation_row(const ChebyshevGrid& grid, double theta);

enum class DelaySampling {
    nearest_node,       // delayed state read from the closest grid node
    interpolation_row,  // exact barycentric row at -tau (default)
};

/// Collocation matrix A_N: the first N block rows are the differentiation
/// matrix acting on the state history, the last block row places A0 at the
/// theta = 0 node and each A_k at (a sampling of) theta = -tau_k. Its
/// eigenvalues approximate the delay system's characteristic roots with
/// spectral accuracy in N.
struct SpectralDiscretization {
    Eigen::MatrixXd a_n;
    ChebyshevGrid grid;
    DelaySystem source;
    std::vector<Eigen::VectorXd> delay_rows;  ///< per delay term, over nodes
};

SpectralDiscretization discretize(const DelaySystem& sys, int n,
                                  DelaySampling mode = DelaySampling::interpolation_row);

struct RefinedEigenvalue {
    std::complex<double> value;  ///< after Newton refinement
    std::complex<double> raw;    ///< the A_N eigenvalue it started from
    double residual = 0.0;       ///< char_residual at value
    bool converged = false;
    int iterations = 0;
};

struct StabilityReport {
    std::complex<double> rightmost;  ///< refined rightmost eigenvalue
    double index = 0.0;              ///< its real part [1/s]
    std::complex<double> raw_rightmost;
    double raw_index = 0.0;
    std::vector<std::complex<double>> all_eigs;  ///< full A_N spectrum
    std::vector<RefinedEigenvalue> refined;
    bool converged = false;
    double residual_scale = 0.0;  ///< tolerance * (1 + |A0| + sum |Ak|)
};

struct StabilityOptions {
    int n = 20;             ///< Chebyshev N
    int refine_count = 10;  ///< how many rightmost candidates to polish
    double tolerance = 1e-8;
    DelaySampling mode = DelaySampling::interpolation_row;
};

/// Dense eigenvalues of A_N followed by Newton refinement of the rightmost
/// candidates on the true characteristic equation
/// det(lambda I - A0 - sum Ak e^{-lambda tau_k}) = 0.
StabilityReport stability_index(const DelaySystem& sys, const StabilityOptions& opts = {});

/// Smallest singular value of (lambda I - A0 - sum Ak e^{-lambda tau_k});
/// zero exactly at the characteristic roots.
double char_residual(const DelaySystem& sys, std::complex<double> lambda);

/// One Newton step chain on the characteristic determinant starting at
/// lambda0, using d/dlambda M = I + sum tau_k Ak e^{-lambda tau_k}.
RefinedEigenvalue newton_refine(const DelaySystem& sys, std::complex<double> lambda0,
                                double residual_tol, int max_iter = 50);

struct SweepResult {
    std::vector<double> kp_grid;
    std::vector<double> ki_grid;
    std::vector<double> values;  ///< row-major, ki fastest

    double at(std::size_t i_kp, std::size_t i_ki) const {
        return values[i_kp * ki_grid.size() + i_ki];
    }
};

using LoopBuilder = std::function<LoopRealization(double kp, double ki)>;
using SweepMetric = std::function<double(const LoopRealization&)>;

/// Evaluates metric(builder(kp, ki)) over the grid. Points are independent
/// and evaluated in parallel when jobs != 1; results are written by index so
/// the output is identical regardless of scheduling. Builder/metric failures
/// are rethrown with the grid coordinates attached; +inf values (diverged
/// simulations) pass through.
SweepResult parameter_sweep(const LoopBuilder& builder, std::span<const double> kp_grid,
                            std::span<const double> ki_grid, const SweepMetric& metric,
                            int jobs = 1);

/// Canned metric: refined stability index of the homogeneous part.
SweepMetric stability_index_metric(const StabilityOptions& opts = {});

}  // namespace drflex
