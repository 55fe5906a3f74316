#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace macfm {

enum class ScheduleKind { linear, power, cosine };

/// Interpolation progress s(t) on [0, 1], with s(0) = 0, s(1) = 1 and s' > 0 inside.
class Schedule {
public:
    Schedule() = default;
    static Schedule linear() { return Schedule(ScheduleKind::linear, 1.0); }
    /// gamma must lie in [1, 3].
    static Schedule power(double gamma = 2.0);
    static Schedule cosine() { return Schedule(ScheduleKind::cosine, 1.0); }

    ScheduleKind kind() const { return m_kind; }
    double gamma() const { return m_gamma; }

    double eval(double t) const;
    double deriv(double t) const;
    double inverse(double s) const;

    std::string name() const;
    friend bool operator==(const Schedule&, const Schedule&) = default;

private:
    Schedule(ScheduleKind kind, double gamma) : m_kind(kind), m_gamma(gamma) {}

    ScheduleKind m_kind = ScheduleKind::linear;
    double m_gamma = 1.0;
};

ScheduleKind parse_schedule_kind(std::string_view name);
std::string to_string(ScheduleKind kind);

enum class GridMode { uniform_t, power_s };

GridMode parse_grid_mode(std::string_view name);
std::string to_string(GridMode mode);

/// Integration times t_0 = 0 < ... < t_K = 1.
struct StepGrid {
    std::size_t steps = 0;
    GridMode mode = GridMode::uniform_t;
    double beta = 1.0;
    std::vector<double> times;

    double dt(std::size_t k) const { return times[k + 1] - times[k]; }
};

/// uniform_t: t_k = k/K. power_s: s(t_k) = (k/K)^beta, t_k recovered through the schedule inverse.
StepGrid make_grid(const Schedule& schedule, std::size_t steps, GridMode mode = GridMode::uniform_t,
                   double beta = 1.0);

}  // namespace macfm
