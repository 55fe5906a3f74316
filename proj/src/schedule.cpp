#include "macfm/schedule.hpp"

#include <cmath>
#include <numbers>

#include "macfm/errors.hpp"

namespace macfm {
namespace {

void check_unit(double x, const char* what) {
    if (!(x >= 0.0 && x <= 1.0)) {
        throw DomainError(std::string("Schedule::") + what + ": argument " + std::to_string(x) + " outside [0, 1]");
    }
}

}  // namespace

Schedule Schedule::power(double gamma) {
    if (!(gamma >= 1.0 && gamma <= 3.0)) {
        throw ConfigError("power schedule: gamma " + std::to_string(gamma) + " outside [1, 3]");
    }
    return Schedule(ScheduleKind::power, gamma);
}

double Schedule::eval(double t) const {
    check_unit(t, "eval");
    switch (m_kind) {
        case ScheduleKind::linear:
            return t;
        case ScheduleKind::power:
            return std::pow(t, m_gamma);
        case ScheduleKind::cosine:
            return 0.5 * (1.0 - std::cos(std::numbers::pi * t));
    }
    return t;
}

double Schedule::deriv(double t) const {
    check_unit(t, "deriv");
    switch (m_kind) {
        case ScheduleKind::linear:
            return 1.0;
        case ScheduleKind::power:
            if (t == 0.0) return m_gamma == 1.0 ? 1.0 : 0.0;
            return m_gamma * std::pow(t, m_gamma - 1.0);
        case ScheduleKind::cosine:
            return 0.5 * std::numbers::pi * std::sin(std::numbers::pi * t);
    }
    return 1.0;
}

double Schedule::inverse(double s) const {
    check_unit(s, "inverse");
    switch (m_kind) {
        case ScheduleKind::linear:
            return s;
        case ScheduleKind::power:
            return std::pow(s, 1.0 / m_gamma);
        case ScheduleKind::cosine:
            return std::acos(1.0 - 2.0 * s) / std::numbers::pi;
    }
    return s;
}

std::string Schedule::name() const {
    if (m_kind == ScheduleKind::power) return "power(" + std::to_string(m_gamma) + ")";
    return to_string(m_kind);
}

ScheduleKind parse_schedule_kind(std::string_view name) {
    if (name == "linear") return ScheduleKind::linear;
    if (name == "power") return ScheduleKind::power;
    if (name == "cosine") return ScheduleKind::cosine;
    throw ConfigError("unknown schedule kind '" + std::string(name) + "'");
}

std::string to_string(ScheduleKind kind) {
    switch (kind) {
        case ScheduleKind::linear:
            return "linear";
        case ScheduleKind::power:
            return "power";
        case ScheduleKind::cosine:
            return "cosine";
    }
    return "linear";
}

GridMode parse_grid_mode(std::string_view name) {
    if (name == "uniform_t") return GridMode::uniform_t;
    if (name == "power_s") return GridMode::power_s;
    throw ConfigError("unknown grid mode '" + std::string(name) + "'");
}

std::string to_string(GridMode mode) { return mode == GridMode::uniform_t ? "uniform_t" : "power_s"; }

StepGrid make_grid(const Schedule& schedule, std::size_t steps, GridMode mode, double beta) {
    if (steps == 0) throw ConfigError("make_grid: step count K must be >= 1");
    if (!(beta >= 1.0)) throw ConfigError("make_grid: beta must be >= 1");

    StepGrid grid{.steps = steps, .mode = mode, .beta = beta, .times = std::vector<double>(steps + 1)};
    const double K = static_cast<double>(steps);
    for (std::size_t k = 0; k <= steps; ++k) {
        const double u = static_cast<double>(k) / K;
        grid.times[k] = mode == GridMode::uniform_t ? u : schedule.inverse(std::pow(u, beta));
    }
    grid.times.front() = 0.0;
    grid.times.back() = 1.0;
    for (std::size_t k = 0; k < steps; ++k) {
        if (!(grid.times[k + 1] > grid.times[k])) {
            throw NumericError("make_grid: grid not strictly increasing at step " + std::to_string(k));
        }
    }
    return grid;
}

}  // namespace macfm
