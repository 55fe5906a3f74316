#include "macfm/inference.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "macfm/errors.hpp"
#include "macfm/parallel.hpp"

namespace macfm {
namespace {

void project(Tensor2& x, const Tensor2& x_obs, const Tensor2& keep) {
    for (std::size_t i = 0; i < x.size(); ++i)
        if (keep[i] != 0.0) x[i] = x_obs[i];
}

void require_finite(const Tensor2& x, std::size_t step) {
    if (!x.all_finite()) throw NumericError("integration produced non-finite state at step " + std::to_string(step));
}

Tensor2 keep_mask(const TensorMasks& m) {
    Tensor2 keep = m.obs;
    for (std::size_t i = 0; i < keep.size(); ++i) keep[i] = (m.obs[i] != 0.0 || m.cond[i] != 0.0) ? 1.0 : 0.0;
    return keep;
}

}  // namespace

Solver parse_solver(std::string_view name) {
    if (name == "euler") return Solver::euler;
    if (name == "heun") return Solver::heun;
    throw ConfigError("unknown solver '" + std::string(name) + "'");
}

std::string to_string(Solver s) { return s == Solver::euler ? "euler" : "heun"; }

Aggregation parse_aggregation(std::string_view name) {
    if (name == "mean") return Aggregation::mean;
    if (name == "median") return Aggregation::median;
    throw ConfigError("unknown aggregation '" + std::string(name) + "'");
}

std::string to_string(Aggregation a) { return a == Aggregation::mean ? "mean" : "median"; }

void InferConfig::validate() const {
    if (steps == 0) throw ConfigError("infer.K must be >= 1");
    if (trials == 0) throw ConfigError("infer.trials must be >= 1");
    if (!(grid_beta >= 1.0)) throw ConfigError("grid.beta must be >= 1");
}

VelocityFn model_velocity(const VelocityModel& model) {
    return [&model](const Tensor2& x, double t) {
        const std::vector<double> times(x.rows(), t);
        return model.forward(x, times);
    };
}

Tensor2 integrate_one(const VelocityFn& field, const Tensor2& x_obs, const TensorMasks& masks, const StepGrid& grid,
                      Solver solver, const Tensor2& eps, const StepObserver& observer) {
    require_same_shape(x_obs, eps, "integrate_one");
    require_same_shape(x_obs, masks.tgt, "integrate_one");
    require_same_shape(x_obs, masks.obs, "integrate_one");
    require_same_shape(x_obs, masks.cond, "integrate_one");
    if (grid.times.size() != grid.steps + 1 || grid.steps == 0) throw ConfigError("integrate_one: malformed grid");

    const Tensor2 keep = keep_mask(masks);
    Tensor2 x(x_obs.rows(), x_obs.cols());
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = masks.tgt[i] * eps[i] + keep[i] * x_obs[i];
    project(x, x_obs, keep);

    for (std::size_t k = 0; k < grid.steps; ++k) {
        const double t0 = grid.times[k];
        const double t1 = grid.times[k + 1];
        const double dt = t1 - t0;
        const Tensor2 v1 = field(x, t0);
        require_same_shape(x, v1, "velocity field");

        Tensor2 next = x;
        if (solver == Solver::euler) {
            for (std::size_t i = 0; i < next.size(); ++i) next[i] += dt * v1[i];
        } else {
            Tensor2 pred = x;
            for (std::size_t i = 0; i < pred.size(); ++i) pred[i] += dt * v1[i];
            project(pred, x_obs, keep);
            require_finite(pred, k);
            if (observer) observer(k, StepStage::predictor, pred);
            const Tensor2 v2 = field(pred, t1);
            require_same_shape(x, v2, "velocity field");
            for (std::size_t i = 0; i < next.size(); ++i) next[i] += 0.5 * dt * (v1[i] + v2[i]);
        }
        project(next, x_obs, keep);
        require_finite(next, k);
        x = std::move(next);
        if (observer) observer(k, StepStage::step, x);
    }
    return x;
}

Tensor2 integrate_one(const VelocityModel& model, const Tensor2& x_obs, const TensorMasks& masks,
                      const StepGrid& grid, Solver solver, Rng& rng, const StepObserver& observer) {
    if (model.features() != x_obs.cols()) throw DimensionError("integrate_one: model width differs from data");
    Tensor2 eps(x_obs.rows(), x_obs.cols());
    for (double& e : eps.flat()) e = rng.normal();
    return integrate_one(model_velocity(model), x_obs, masks, grid, solver, eps, observer);
}

ImputationResult impute(const VelocityModel& model, const Schedule& schedule, const Tensor2& x_obs,
                        const MaskTriple& masks, const InferConfig& config) {
    if (model.features() != x_obs.cols()) throw DimensionError("impute: model width differs from data");
    return impute(model_velocity(model), schedule, x_obs, masks, config);
}

ImputationResult impute(const VelocityFn& field, const Schedule& schedule, const Tensor2& x_obs,
                        const MaskTriple& masks, const InferConfig& config) {
    config.validate();
    const auto started = std::chrono::steady_clock::now();
    const StepGrid grid = make_grid(schedule, config.steps, config.grid_mode, config.grid_beta);
    ImputationResult result;
    result.masks = TensorMasks::from(masks);

    std::vector<Tensor2> runs(config.trials);
    parallel_for(
        config.trials,
        [&](std::size_t trial) {
            Rng rng(combine_seed(config.seed, trial));
            Tensor2 eps(x_obs.rows(), x_obs.cols());
            for (double& e : eps.flat()) e = rng.normal();
            try {
                runs[trial] = integrate_one(field, x_obs, result.masks, grid, config.solver, eps);
            } catch (const NumericError& e) {
                throw NumericError("trial " + std::to_string(trial) + ": " + e.what());
            }
        },
        config.threads == 0 ? worker_count() : config.threads);

    const Tensor2 keep = keep_mask(result.masks);
    Tensor2 out(x_obs.rows(), x_obs.cols());
    std::vector<double> column(config.trials);
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (keep[i] != 0.0) {
            out[i] = x_obs[i];
            continue;
        }
        if (config.aggregation == Aggregation::mean) {
            double acc = 0.0;
            for (const auto& run : runs) acc += run[i];
            out[i] = acc / static_cast<double>(runs.size());
        } else {
            for (std::size_t k = 0; k < runs.size(); ++k) column[k] = runs[k][i];
            std::sort(column.begin(), column.end());
            const std::size_t mid = column.size() / 2;
            out[i] = column.size() % 2 ? column[mid] : 0.5 * (column[mid - 1] + column[mid]);
        }
    }
    result.imputed = std::move(out);
    if (config.retain_trials) result.trials = std::move(runs);
    result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    return result;
}

}  // namespace macfm
