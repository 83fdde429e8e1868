#pragma once

#include <Eigen/Dense>

#include <complex>
#include <span>
#include <string>
#include <vector>

namespace drflex {

/// First-order plant G(s) = h / (s*T + 1). Units: power in kW, time in s.
struct FirstOrderPlant {
    double gain = 1.0;           ///< steady-state gain h (dimensionless)
    double time_constant = 1.0;  ///< T [s], > 0

    void validate() const;
};

struct PIParams {
    double kp = 0.0;  ///< proportional gain
    double ki = 0.0;  ///< integral gain [1/s]

    void validate() const;
};

/// Feed-forward PI parameters. The feed-forward path applies the lead filter
/// (s*t_ff + 1) / (h_nom * (s*t_filter + 1)) to the reference, so with
/// t_ff = T and h_nom = h the plant dynamics cancel and the loop behaves as a
/// unity-gain first-order response.
struct FFPIParams {
    PIParams pi;
    double t_ff = 0.0;      ///< lead time constant T' [s], >= 0
    double h_nom = 1.0;     ///< characterized plant gain h', != 0
    double t_filter = 0.0;  ///< realizability filter constant [s], > 0

    void validate() const;
};

/// Applies the default filter constant t_filter = t_ff / 10 (or 0.1 s for a
/// degenerate t_ff = 0) when none is given.
FFPIParams make_ffpi(PIParams pi, double t_ff, double h_nom, double t_filter = 0.0);

struct GroupModel {
    std::string name;
    FirstOrderPlant plant;
    double delay = 0.0;          ///< loop dead time tau_i [s], >= 0
    FFPIParams controller;
    double participation = 1.0;  ///< alpha_i in [0, 1]

    void validate() const;
};

struct TwoLevelModel {
    std::vector<GroupModel> groups;
    PIParams outer;

    void validate() const;  // participation factors must sum to 1 (1e-9)
};

/// Autonomous linear delay system x'(t) = A0 x(t) + sum_k Ak x(t - tau_k).
/// Delays are strictly positive, distinct and sorted ascending; build through
/// make_delay_system so that zero and duplicate delays are folded/merged.
struct DelaySystem {
    struct Term {
        Eigen::MatrixXd a;
        double tau = 0.0;
    };

    Eigen::MatrixXd a0;
    std::vector<Term> terms;

    int dim() const { return static_cast<int>(a0.rows()); }
    double max_delay() const;
    /// A0 + sum Ak, the delay-free limit of the dynamics.
    Eigen::MatrixXd total_matrix() const;
    void validate() const;
};

DelaySystem make_delay_system(Eigen::MatrixXd a0, std::vector<DelaySystem::Term> terms);

/// A delay system augmented with a scalar input and output:
///   x' = A0 x + sum Ak x(t-tau_k) + b0 u + sum bk u(t-tau_k)
///   y  = c x + d u
/// `sys.terms` and `b_delayed` run in parallel. The homogeneous part (`sys`)
/// is what the stability machinery consumes; equilibrium and frequency
/// response need the input/output augmentation.
struct LoopRealization {
    DelaySystem sys;
    Eigen::VectorXd b0;
    std::vector<Eigen::VectorXd> b_delayed;
    Eigen::RowVectorXd c;
    double d = 0.0;

    /// Solves (A0 + sum Ak) x = -(b0 + sum bk) u for the constant-input
    /// equilibrium state.
    Eigen::VectorXd equilibrium(double input) const;
    /// Output at the constant-input equilibrium divided by the input.
    double dc_gain() const;
    /// c (jw I - A0 - sum Ak e^{-jw tau_k})^{-1} (b0 + sum bk e^{-jw tau_k}) + d
    std::complex<double> frequency_response(double omega) const;
};

/// Closed inner loop of one group: states (p, z, w) = plant output, PI
/// integrator, feed-forward filter. Input is the group reference, output the
/// group power. The delayed term carries the plant-input channel u(t - tau).
LoopRealization assemble_inner_loop(const GroupModel& group);

/// Closed loop of a plain PI controller around the plant (no feed-forward
/// path); states (p, z). Reference comparison baseline.
LoopRealization assemble_classical_pi_loop(const FirstOrderPlant& plant, const PIParams& pi,
                                           double delay);

/// Closed two-level loop: per-group (p_i, z_i, w_i) plus the outer integrator
/// z0; dim = 3 * groups + 1. Input is the building target, output the
/// aggregate controllable power. Groups sharing a delay are merged into one
/// delay term.
LoopRealization assemble_full_system(const TwoLevelModel& model);

/// Loop broken at the outer summing junction: input is the tracking error,
/// output the aggregate power, with the inner loops still closed. This is the
/// state-space counterpart of open_loop_frequency_response.
LoopRealization assemble_open_loop(const TwoLevelModel& model);

std::complex<double> pi_transfer(const PIParams& pi, std::complex<double> s);
std::complex<double> ff_lead_transfer(const FFPIParams& c, std::complex<double> s);
/// Inner closed loop r_i -> p_i including e^{-s tau} on the plant input.
std::complex<double> inner_loop_transfer(const GroupModel& group, std::complex<double> s);

/// L(jw) = C_outer(jw) * sum_i alpha_i H_i(jw), evaluated per block diagram.
/// Rejects w <= 0 (the outer integrator has a pole at the origin).
std::vector<std::complex<double>> open_loop_frequency_response(
    const TwoLevelModel& model, std::span<const double> omega);

}  // namespace drflex
