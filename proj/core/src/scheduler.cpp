#include "drflex/scheduler.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>

namespace drflex {

namespace {

constexpr double kFeasTol = 1e-9;  // kW

double clamp(double v, double lo, double hi) { return std::min(std::max(v, lo), hi); }

}  // namespace

void FleetSpec::validate() const {
    std::set<std::string> ids;
    for (const auto& d : on_off) {
        if (!(d.nominal_power > 0.0) || !std::isfinite(d.nominal_power))
            throw std::invalid_argument("on/off load '" + d.id + "' needs nominal power > 0");
        if (!ids.insert(d.id).second)
            throw std::invalid_argument("duplicate device id '" + d.id + "'");
    }
    for (const auto& d : continuous) {
        if (!std::isfinite(d.v_min) || !std::isfinite(d.v_max) || d.v_min < 0.0 ||
            d.v_max < d.v_min)
            throw std::invalid_argument("continuous load '" + d.id + "' needs 0 <= v_min <= v_max");
        if (!ids.insert(d.id).second)
            throw std::invalid_argument("duplicate device id '" + d.id + "'");
    }
}

double FleetSpec::on_off_capacity() const {
    double s = 0.0;
    for (const auto& d : on_off) s += d.nominal_power;
    return s;
}

double FleetSpec::v_min_total() const {
    double s = 0.0;
    for (const auto& d : continuous) s += d.v_min;
    return s;
}

double FleetSpec::v_max_total() const {
    double s = 0.0;
    for (const auto& d : continuous) s += d.v_max;
    return s;
}

double FleetSpec::capacity() const { return on_off_capacity() + v_max_total(); }

InfeasibleScheduleError::InfeasibleScheduleError(double deficit)
    : std::runtime_error([deficit] {
          std::ostringstream msg;
          msg << "infeasible schedule: continuous minimums exceed the budget by " << deficit
              << " kW";
          return msg.str();
      }()),
      deficit_(deficit) {}

namespace {

// Devices sharing the same nominal power are interchangeable for the
// objective; within such a class the minimal switching count for k devices on
// is |k - previously_on|, keeping previously-on devices first.
struct DeviceClass {
    double power = 0.0;
    std::vector<std::size_t> members;  // indices into fleet.on_off, fleet order
    int prev_on = 0;
};

std::vector<DeviceClass> collapse_classes(const FleetSpec& fleet, const Assignment* previous) {
    std::vector<DeviceClass> classes;
    std::map<double, std::size_t> by_power;
    for (std::size_t i = 0; i < fleet.on_off.size(); ++i) {
        const auto& dev = fleet.on_off[i];
        auto [it, inserted] = by_power.try_emplace(dev.nominal_power, classes.size());
        if (inserted) classes.push_back({dev.nominal_power, {}, 0});
        auto& cls = classes[it->second];
        cls.members.push_back(i);
        if (previous) {
            auto st = previous->statuses.find(dev.id);
            if (st != previous->statuses.end() && st->second != 0) ++cls.prev_on;
        }
    }
    std::sort(classes.begin(), classes.end(),
              [](const DeviceClass& a, const DeviceClass& b) { return a.power > b.power; });
    return classes;
}

struct SubsetSearch {
    const std::vector<DeviceClass>& classes;
    double cap;       // max binary weight: budget - sum v_min
    double sat_from;  // weights >= this already meet the cap exactly
    bool track_hamming;

    std::vector<double> suffix_total;
    std::vector<int> best_counts;
    double best_weight = -1.0;
    long best_hamming = 0;
    bool found = false;

    std::vector<int> counts;

    explicit SubsetSearch(const std::vector<DeviceClass>& cls, double cap_, double sat_from_,
                          bool hamming)
        : classes(cls), cap(cap_), sat_from(sat_from_), track_hamming(hamming) {
        suffix_total.assign(classes.size() + 1, 0.0);
        for (std::size_t i = classes.size(); i-- > 0;)
            suffix_total[i] =
                suffix_total[i + 1] + classes[i].power * static_cast<double>(classes[i].members.size());
        counts.assign(classes.size(), 0);
        dfs(0, 0.0, 0);
    }

    // effective objective contribution of a weight w (saturates at sat_from)
    double key(double w) const { return std::min(w, sat_from); }

    void consider(double weight, long hamming) {
        const double k = key(weight);
        if (!found || k > key(best_weight) + kFeasTol ||
            (std::abs(k - key(best_weight)) <= kFeasTol && track_hamming &&
             hamming < best_hamming)) {
            best_weight = weight;
            best_hamming = hamming;
            best_counts = counts;
            found = true;
        }
    }

    bool done() const {
        if (!found || key(best_weight) < sat_from - kFeasTol) return false;
        return !track_hamming || best_hamming == 0;
    }

    void dfs(std::size_t ci, double weight, long hamming) {
        if (done()) return;
        if (ci == classes.size()) {
            consider(weight, hamming);
            return;
        }
        // bound: everything remaining on, clipped by the cap
        const double ub = key(std::min(cap, weight + suffix_total[ci]));
        if (found) {
            if (ub < key(best_weight) - kFeasTol) return;
            if (ub <= key(best_weight) + kFeasTol && (!track_hamming || hamming >= best_hamming))
                return;
        }

        const auto& cls = classes[ci];
        const int n = static_cast<int>(cls.members.size());
        int k_max = n;
        const double room = (cap - weight + kFeasTol) / cls.power;
        if (room < 0.0)
            k_max = 0;
        else if (room < static_cast<double>(n))
            k_max = static_cast<int>(room);
        for (int k = k_max; k >= 0; --k) {
            counts[ci] = k;
            dfs(ci + 1, weight + cls.power * k,
                hamming + std::labs(static_cast<long>(k) - cls.prev_on));
            if (done()) return;
        }
        counts[ci] = 0;
    }
};

// Canonical recomputation shared with the brute-force solver so that equally
// weighted subsets produce bit-identical objectives.
Assignment build_assignment(const FleetSpec& fleet, const std::vector<char>& on,
                            double budget) {
    Assignment a;
    double weight = 0.0;
    for (std::size_t i = 0; i < fleet.on_off.size(); ++i) {
        a.statuses[fleet.on_off[i].id] = on[i] ? 1 : 0;
        if (on[i]) weight += fleet.on_off[i].nominal_power;
    }

    double c_min = 0.0, c_max = 0.0;
    for (const auto& d : fleet.continuous) {
        c_min += d.v_min;
        c_max += d.v_max;
    }
    const double c_total = clamp(budget - weight, c_min, c_max);

    double assigned = 0.0;
    double remaining = c_total - c_min;
    for (const auto& d : fleet.continuous) {
        const double extra = clamp(remaining, 0.0, d.v_max - d.v_min);
        a.setpoints[d.id] = d.v_min + extra;
        remaining -= extra;
        assigned += a.setpoints[d.id];
    }

    a.total_power = weight + assigned;
    a.objective = a.total_power;
    a.optimal = true;
    return a;
}

void check_inputs(const FleetSpec& fleet, double target, double uncontrollable) {
    fleet.validate();
    if (!std::isfinite(target) || !std::isfinite(uncontrollable))
        throw std::invalid_argument("target and uncontrollable power must be finite");
    const double budget = target - uncontrollable;
    const double c_min = fleet.v_min_total();
    if (budget < c_min - kFeasTol) throw InfeasibleScheduleError(c_min - budget);
}

}  // namespace

Assignment schedule(const FleetSpec& fleet, double target, double uncontrollable,
                    const Assignment* previous) {
    check_inputs(fleet, target, uncontrollable);
    const double budget = target - uncontrollable;
    const double cap = std::max(0.0, budget - fleet.v_min_total());
    const double sat_from = std::max(0.0, budget - fleet.v_max_total());

    const auto classes = collapse_classes(fleet, previous);
    SubsetSearch search(classes, cap, sat_from, previous != nullptr);

    std::vector<char> on(fleet.on_off.size(), 0);
    for (std::size_t ci = 0; ci < classes.size(); ++ci) {
        const auto& cls = classes[ci];
        int k = search.best_counts[ci];
        if (previous) {
            // previously-on members first, then fleet order
            for (std::size_t idx : cls.members) {
                if (k == 0) break;
                auto st = previous->statuses.find(fleet.on_off[idx].id);
                if (st != previous->statuses.end() && st->second != 0) {
                    on[idx] = 1;
                    --k;
                }
            }
        }
        for (std::size_t idx : cls.members) {
            if (k == 0) break;
            if (!on[idx]) {
                on[idx] = 1;
                --k;
            }
        }
    }
    return build_assignment(fleet, on, budget);
}

Assignment brute_force_schedule(const FleetSpec& fleet, double target, double uncontrollable) {
    if (fleet.on_off.size() > 20)
        throw std::invalid_argument("brute_force_schedule: more than 20 on/off loads");
    check_inputs(fleet, target, uncontrollable);
    const double budget = target - uncontrollable;
    const double cap = std::max(0.0, budget - fleet.v_min_total());
    const double c_min = fleet.v_min_total();
    const double c_max = fleet.v_max_total();

    const std::size_t nb = fleet.on_off.size();
    double best_obj = -1.0;
    std::uint32_t best_mask = 0;
    for (std::uint32_t mask = 0; mask < (1u << nb); ++mask) {
        double weight = 0.0;
        for (std::size_t i = 0; i < nb; ++i)
            if (mask & (1u << i)) weight += fleet.on_off[i].nominal_power;
        if (weight > cap + kFeasTol) continue;
        const double obj = weight + clamp(budget - weight, c_min, c_max);
        if (obj > best_obj) {
            best_obj = obj;
            best_mask = mask;
        }
    }

    std::vector<char> on(nb, 0);
    for (std::size_t i = 0; i < nb; ++i) on[i] = (best_mask & (1u << i)) ? 1 : 0;
    return build_assignment(fleet, on, budget);
}

std::vector<GroupScheduleOutcome> group_schedules(std::span<const FleetSpec> partition,
                                                  std::span<const double> targets,
                                                  std::span<const double> uncontrollables) {
    if (partition.size() != targets.size() || partition.size() != uncontrollables.size())
        throw std::invalid_argument("group_schedules: mismatched argument lengths");
    std::vector<GroupScheduleOutcome> out(partition.size());
    for (std::size_t i = 0; i < partition.size(); ++i) {
        try {
            out[i].assignment = schedule(partition[i], targets[i], uncontrollables[i]);
        } catch (const std::exception& e) {
            out[i].error = e.what();
        }
    }
    return out;
}

}  // namespace drflex
