#include "drflex/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace drflex {

namespace {

bool finite(double v) { return std::isfinite(v); }

// Controller coefficients shared by the assemblies and the block-diagram
// transfer functions. The lead filter (s T' + 1) / (h' (s Tf + 1)) applied to
// the reference r is realized with one state w:
//   w' = (r - w) / Tf,   ff_out = c0 * r + c1 * w
// where c0 = T' / (h' Tf) and c1 = (1 - T'/Tf) / h'. Note c0 + c1 = 1/h', so
// the feed-forward passes r / h' at DC.
struct FFCoeffs {
    double c0;
    double c1;
    double kpc;  // kp + c0, direct reference-to-plant-input feedthrough
};

FFCoeffs ff_coeffs(const FFPIParams& c) {
    const double c0 = c.t_ff / (c.h_nom * c.t_filter);
    const double c1 = (1.0 - c.t_ff / c.t_filter) / c.h_nom;
    return {c0, c1, c.pi.kp + c0};
}

}  // namespace

void FirstOrderPlant::validate() const {
    if (!finite(gain) || gain == 0.0)
        throw std::invalid_argument("plant gain must be finite and nonzero");
    if (!finite(time_constant) || time_constant <= 0.0)
        throw std::invalid_argument("plant time constant must be > 0");
}

void PIParams::validate() const {
    if (!finite(kp) || !finite(ki) || kp < 0.0 || ki < 0.0)
        throw std::invalid_argument("PI gains must be finite and >= 0");
}

void FFPIParams::validate() const {
    pi.validate();
    if (!finite(t_ff) || t_ff < 0.0)
        throw std::invalid_argument("t_ff must be finite and >= 0");
    if (!finite(h_nom) || h_nom == 0.0)
        throw std::invalid_argument("h_nom must be finite and nonzero");
    if (!finite(t_filter) || t_filter <= 0.0)
        throw std::invalid_argument("t_filter must be > 0");
    if (t_ff > 0.0 && t_filter > t_ff)
        throw std::invalid_argument("t_filter must not exceed t_ff");
}

FFPIParams make_ffpi(PIParams pi, double t_ff, double h_nom, double t_filter) {
    FFPIParams p;
    p.pi = pi;
    p.t_ff = t_ff;
    p.h_nom = h_nom;
    p.t_filter = t_filter > 0.0 ? t_filter : (t_ff > 0.0 ? t_ff / 10.0 : 0.1);
    p.validate();
    return p;
}

void GroupModel::validate() const {
    plant.validate();
    controller.validate();
    if (!finite(delay) || delay < 0.0)
        throw std::invalid_argument("group delay must be >= 0");
    if (!finite(participation) || participation < 0.0 || participation > 1.0)
        throw std::invalid_argument("participation must lie in [0, 1]");
}

void TwoLevelModel::validate() const {
    if (groups.empty()) throw std::invalid_argument("model needs at least one group");
    outer.validate();
    double sum = 0.0;
    for (const auto& g : groups) {
        g.validate();
        sum += g.participation;
    }
    if (std::abs(sum - 1.0) > 1e-9)
        throw std::invalid_argument("participation factors must sum to 1");
}

double DelaySystem::max_delay() const {
    double m = 0.0;
    for (const auto& t : terms) m = std::max(m, t.tau);
    return m;
}

Eigen::MatrixXd DelaySystem::total_matrix() const {
    Eigen::MatrixXd m = a0;
    for (const auto& t : terms) m += t.a;
    return m;
}

void DelaySystem::validate() const {
    const int n = dim();
    if (n == 0 || a0.cols() != n) throw std::invalid_argument("A0 must be square and nonempty");
    if (!a0.allFinite()) throw std::invalid_argument("A0 must be finite");
    double prev = 0.0;
    for (const auto& t : terms) {
        if (t.a.rows() != n || t.a.cols() != n)
            throw std::invalid_argument("delay matrices must match dim(A0)");
        if (!t.a.allFinite()) throw std::invalid_argument("delay matrices must be finite");
        if (!finite(t.tau) || t.tau <= prev)
            throw std::invalid_argument("delays must be positive, distinct and ascending");
        prev = t.tau;
    }
}

DelaySystem make_delay_system(Eigen::MatrixXd a0, std::vector<DelaySystem::Term> terms) {
    DelaySystem sys;
    sys.a0 = std::move(a0);
    const int n = sys.dim();

    std::stable_sort(terms.begin(), terms.end(),
                     [](const auto& a, const auto& b) { return a.tau < b.tau; });
    for (auto& t : terms) {
        if (t.tau < 0.0) throw std::invalid_argument("delay must be >= 0");
        if (t.a.rows() != n || t.a.cols() != n)
            throw std::invalid_argument("delay matrices must match dim(A0)");
        if (t.tau <= 1e-12) {
            sys.a0 += t.a;  // zero delay folds into the instantaneous part
        } else if (!sys.terms.empty() &&
                   std::abs(t.tau - sys.terms.back().tau) <= 1e-12 * std::max(1.0, t.tau)) {
            sys.terms.back().a += t.a;  // merge equal delays
        } else {
            sys.terms.push_back(std::move(t));
        }
    }
    sys.validate();
    return sys;
}

Eigen::VectorXd LoopRealization::equilibrium(double input) const {
    Eigen::VectorXd b = b0;
    for (const auto& bk : b_delayed) b += bk;
    Eigen::FullPivLU<Eigen::MatrixXd> lu(sys.total_matrix());
    if (!lu.isInvertible())
        throw std::runtime_error("loop has no unique equilibrium (singular at DC)");
    return lu.solve(-b * input);
}

double LoopRealization::dc_gain() const {
    const Eigen::VectorXd x = equilibrium(1.0);
    return (c * x)(0) + d;
}

std::complex<double> LoopRealization::frequency_response(double omega) const {
    using cd = std::complex<double>;
    const int n = sys.dim();
    const cd jw(0.0, omega);

    Eigen::MatrixXcd m = jw * Eigen::MatrixXcd::Identity(n, n) - sys.a0.cast<cd>();
    Eigen::VectorXcd b = b0.cast<cd>();
    for (std::size_t k = 0; k < sys.terms.size(); ++k) {
        const cd phase = std::exp(-jw * sys.terms[k].tau);
        m -= sys.terms[k].a.cast<cd>() * phase;
        b += b_delayed[k].cast<cd>() * phase;
    }
    const Eigen::VectorXcd x = m.partialPivLu().solve(b);
    return (c.cast<cd>() * x)(0) + d;
}

namespace {

// Accumulates (matrix, delay, input-column) triples and produces a merged
// realization, folding zero delays and summing duplicates consistently for
// both the state and input channels.
struct RealizationBuilder {
    Eigen::MatrixXd a0;
    Eigen::VectorXd b0;
    std::vector<DelaySystem::Term> terms;
    std::vector<Eigen::VectorXd> bs;

    explicit RealizationBuilder(int n)
        : a0(Eigen::MatrixXd::Zero(n, n)), b0(Eigen::VectorXd::Zero(n)) {}

    void add_delay_channel(Eigen::MatrixXd a, Eigen::VectorXd b, double tau) {
        if (tau <= 1e-12) {
            a0 += a;
            b0 += b;
            return;
        }
        for (std::size_t k = 0; k < terms.size(); ++k) {
            if (std::abs(terms[k].tau - tau) <= 1e-12 * std::max(1.0, tau)) {
                terms[k].a += a;
                bs[k] += b;
                return;
            }
        }
        terms.push_back({std::move(a), tau});
        bs.push_back(std::move(b));
    }

    LoopRealization finish(Eigen::RowVectorXd c, double d) {
        // sort terms (and their input columns) ascending by delay
        std::vector<std::size_t> order(terms.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::sort(order.begin(), order.end(),
                  [&](std::size_t i, std::size_t j) { return terms[i].tau < terms[j].tau; });

        LoopRealization r;
        r.sys.a0 = std::move(a0);
        for (std::size_t i : order) {
            r.sys.terms.push_back(std::move(terms[i]));
            r.b_delayed.push_back(std::move(bs[i]));
        }
        r.b0 = std::move(b0);
        r.c = std::move(c);
        r.d = d;
        r.sys.validate();
        return r;
    }
};

}  // namespace

LoopRealization assemble_inner_loop(const GroupModel& group) {
    group.validate();
    const double a = 1.0 / group.plant.time_constant;
    const double g = group.plant.gain / group.plant.time_constant;
    const auto& ctl = group.controller;
    const auto ff = ff_coeffs(ctl);

    constexpr int P = 0, Z = 1, W = 2;
    RealizationBuilder rb(3);
    rb.a0(P, P) = -a;
    rb.a0(Z, P) = -ctl.pi.ki;
    rb.a0(W, W) = -1.0 / ctl.t_filter;
    rb.b0(Z) = ctl.pi.ki;
    rb.b0(W) = 1.0 / ctl.t_filter;

    // plant input u(t - tau) = kpc r - kp p + z + c1 w, scaled by g into p'
    Eigen::MatrixXd ad = Eigen::MatrixXd::Zero(3, 3);
    ad(P, P) = -g * ctl.pi.kp;
    ad(P, Z) = g;
    ad(P, W) = g * ff.c1;
    Eigen::VectorXd bd = Eigen::VectorXd::Zero(3);
    bd(P) = g * ff.kpc;
    rb.add_delay_channel(std::move(ad), std::move(bd), group.delay);

    Eigen::RowVectorXd c = Eigen::RowVectorXd::Zero(3);
    c(P) = 1.0;
    return rb.finish(std::move(c), 0.0);
}

LoopRealization assemble_classical_pi_loop(const FirstOrderPlant& plant, const PIParams& pi,
                                           double delay) {
    plant.validate();
    pi.validate();
    if (!(delay >= 0.0)) throw std::invalid_argument("delay must be >= 0");
    const double a = 1.0 / plant.time_constant;
    const double g = plant.gain / plant.time_constant;

    constexpr int P = 0, Z = 1;
    RealizationBuilder rb(2);
    rb.a0(P, P) = -a;
    rb.a0(Z, P) = -pi.ki;
    rb.b0(Z) = pi.ki;

    Eigen::MatrixXd ad = Eigen::MatrixXd::Zero(2, 2);
    ad(P, P) = -g * pi.kp;
    ad(P, Z) = g;
    Eigen::VectorXd bd = Eigen::VectorXd::Zero(2);
    bd(P) = g * pi.kp;
    rb.add_delay_channel(std::move(ad), std::move(bd), delay);

    Eigen::RowVectorXd c = Eigen::RowVectorXd::Zero(2);
    c(P) = 1.0;
    return rb.finish(std::move(c), 0.0);
}

namespace {

// Shared layout for the two-level assemblies: group i owns states
// (p, z, w) = (3i, 3i+1, 3i+2), the outer integrator z0 sits last.
LoopRealization assemble_two_level(const TwoLevelModel& model, bool close_outer_loop) {
    model.validate();
    const int m = static_cast<int>(model.groups.size());
    const int n = 3 * m + 1;
    const int z0 = 3 * m;
    const double kp0 = model.outer.kp;
    const double ki0 = model.outer.ki;

    RealizationBuilder rb(n);
    Eigen::RowVectorXd c = Eigen::RowVectorXd::Zero(n);

    for (int i = 0; i < m; ++i) {
        const auto& grp = model.groups[i];
        const double a = 1.0 / grp.plant.time_constant;
        const double g = grp.plant.gain / grp.plant.time_constant;
        const auto& ctl = grp.controller;
        const auto ff = ff_coeffs(ctl);
        const double alpha = grp.participation;
        const int p = 3 * i, z = 3 * i + 1, w = 3 * i + 2;

        c(p) = 1.0;
        rb.a0(p, p) = -a;

        // group reference r_i = alpha * (kp0 * err + z0) + const, with
        // err = u - sum_j p_j when the outer loop is closed, err = u otherwise
        rb.a0(z, p) += -ctl.pi.ki;
        rb.a0(z, z0) = ctl.pi.ki * alpha;
        rb.a0(w, w) += -1.0 / ctl.t_filter;
        rb.a0(w, z0) = alpha / ctl.t_filter;
        rb.b0(z) = ctl.pi.ki * alpha * kp0;
        rb.b0(w) = alpha * kp0 / ctl.t_filter;
        if (close_outer_loop) {
            for (int j = 0; j < m; ++j) {
                rb.a0(z, 3 * j) += -ctl.pi.ki * alpha * kp0;
                rb.a0(w, 3 * j) += -alpha * kp0 / ctl.t_filter;
            }
        }

        // delayed plant-input channel of group i
        Eigen::MatrixXd ad = Eigen::MatrixXd::Zero(n, n);
        Eigen::VectorXd bd = Eigen::VectorXd::Zero(n);
        ad(p, p) += -g * ctl.pi.kp;
        ad(p, z) = g;
        ad(p, w) = g * ff.c1;
        ad(p, z0) = g * ff.kpc * alpha;
        bd(p) = g * ff.kpc * alpha * kp0;
        if (close_outer_loop) {
            for (int j = 0; j < m; ++j) ad(p, 3 * j) += -g * ff.kpc * alpha * kp0;
        }
        rb.add_delay_channel(std::move(ad), std::move(bd), grp.delay);
    }

    rb.b0(z0) = ki0;
    if (close_outer_loop) {
        for (int j = 0; j < m; ++j) rb.a0(z0, 3 * j) = -ki0;
    }

    return rb.finish(std::move(c), 0.0);
}

}  // namespace

LoopRealization assemble_full_system(const TwoLevelModel& model) {
    return assemble_two_level(model, true);
}

LoopRealization assemble_open_loop(const TwoLevelModel& model) {
    return assemble_two_level(model, false);
}

std::complex<double> pi_transfer(const PIParams& pi, std::complex<double> s) {
    return pi.kp + pi.ki / s;
}

std::complex<double> ff_lead_transfer(const FFPIParams& c, std::complex<double> s) {
    return (s * c.t_ff + 1.0) / (c.h_nom * (s * c.t_filter + 1.0));
}

std::complex<double> inner_loop_transfer(const GroupModel& group, std::complex<double> s) {
    const auto& pl = group.plant;
    const std::complex<double> gd =
        pl.gain / (s * pl.time_constant + 1.0) * std::exp(-s * group.delay);
    const std::complex<double> cpi = pi_transfer(group.controller.pi, s);
    const std::complex<double> f = ff_lead_transfer(group.controller, s);
    return gd * (cpi + f) / (1.0 + gd * cpi);
}

std::vector<std::complex<double>> open_loop_frequency_response(const TwoLevelModel& model,
                                                               std::span<const double> omega) {
    model.validate();
    std::vector<std::complex<double>> out;
    out.reserve(omega.size());
    for (double w : omega) {
        if (!(w > 0.0)) throw std::invalid_argument("omega must be > 0");
        const std::complex<double> s(0.0, w);
        std::complex<double> h(0.0, 0.0);
        for (const auto& g : model.groups) h += g.participation * inner_loop_transfer(g, s);
        out.push_back(pi_transfer(model.outer, s) * h);
    }
    return out;
}

}  // namespace drflex
