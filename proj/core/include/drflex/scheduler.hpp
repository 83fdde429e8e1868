#pragma once

#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace drflex {

struct OnOffLoad {
    std::string id;
    double nominal_power = 0.0;  ///< f_i [kW], > 0
};

struct ContinuousLoad {
    std::string id;
    double v_min = 0.0;  ///< [kW]
    double v_max = 0.0;  ///< [kW], >= v_min
};

struct FleetSpec {
    std::vector<OnOffLoad> on_off;
    std::vector<ContinuousLoad> continuous;

    void validate() const;
    double on_off_capacity() const;
    double v_min_total() const;
    double v_max_total() const;
    double capacity() const;  ///< all binaries on + continuous at max
};

struct Assignment {
    std::map<std::string, int> statuses;       ///< on/off id -> {0, 1}
    std::map<std::string, double> setpoints;   ///< continuous id -> kW
    double total_power = 0.0;
    double objective = 0.0;
    bool optimal = false;
};

class InfeasibleScheduleError : public std::runtime_error {
public:
    explicit InfeasibleScheduleError(double deficit);
    double deficit() const { return deficit_; }

private:
    double deficit_ = 0.0;
};

/// Maximizes scheduled consumption sum(u_i f_i) + sum(v_j) subject to
/// q_hat + consumption <= target, v_j within bounds, u_i binary. Exact:
/// branch and bound over the on/off subset (devices with equal nominal power
/// are collapsed into one class) with the continuous loads as optimal top-up.
/// Among equally optimal subsets the one closest in Hamming distance to
/// `previous` is returned when given. Throws InfeasibleScheduleError when the
/// budget cannot cover the continuous minimums.
Assignment schedule(const FleetSpec& fleet, double target, double uncontrollable,
                    const Assignment* previous = nullptr);

/// Exhaustive reference solver (<= 20 binaries): identical objective to
/// schedule() on every feasible instance.
Assignment brute_force_schedule(const FleetSpec& fleet, double target, double uncontrollable);

struct GroupScheduleOutcome {
    std::optional<Assignment> assignment;
    std::string error;  ///< empty on success
};

/// Independent schedule() per group; a group's failure does not abort the
/// others.
std::vector<GroupScheduleOutcome> group_schedules(std::span<const FleetSpec> partition,
                                                  std::span<const double> targets,
                                                  std::span<const double> uncontrollables);

}  // namespace drflex
