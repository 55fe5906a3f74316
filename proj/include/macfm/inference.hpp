#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "macfm/model.hpp"
#include "macfm/schedule.hpp"
#include "macfm/training.hpp"

namespace macfm {

enum class Solver { euler, heun };
enum class Aggregation { mean, median };

Solver parse_solver(std::string_view name);
std::string to_string(Solver s);
Aggregation parse_aggregation(std::string_view name);
std::string to_string(Aggregation a);

struct InferConfig {
    std::size_t steps = 10;
    Solver solver = Solver::heun;
    std::size_t trials = 50;
    GridMode grid_mode = GridMode::uniform_t;
    double grid_beta = 1.0;
    Aggregation aggregation = Aggregation::mean;
    bool retain_trials = false;
    std::uint64_t seed = 0;
    /// 0 = use worker_count().
    std::size_t threads = 0;

    void validate() const;
};

/// v(x, t) for a whole batch at a common time.
using VelocityFn = std::function<Tensor2(const Tensor2& x, double t)>;

VelocityFn model_velocity(const VelocityModel& model);

enum class StepStage { predictor, step };
/// Invoked with the state right after each projection.
using StepObserver = std::function<void(std::size_t step, StepStage stage, const Tensor2& state)>;

/// x0 = M_tgt ⊙ eps + M_keep ⊙ X_obs, then K projected Euler or Heun steps on
/// the grid's times. Kept cells (M_obs + M_cond) are overwritten with X_obs
/// after every projection, so they stay bit-identical to the input.
Tensor2 integrate_one(const VelocityFn& field, const Tensor2& x_obs, const TensorMasks& masks, const StepGrid& grid,
                      Solver solver, const Tensor2& eps, const StepObserver& observer = {});
Tensor2 integrate_one(const VelocityModel& model, const Tensor2& x_obs, const TensorMasks& masks,
                      const StepGrid& grid, Solver solver, Rng& rng, const StepObserver& observer = {});

struct ImputationResult {
    Tensor2 imputed;
    std::vector<Tensor2> trials;  ///< filled when retain_trials is set
    TensorMasks masks;
    double seconds = 0.0;
};

/// Runs `trials` independent trajectories and aggregates them cell-wise in
/// fixed trial order; kept cells are copied from x_obs.
ImputationResult impute(const VelocityModel& model, const Schedule& schedule, const Tensor2& x_obs,
                        const MaskTriple& masks, const InferConfig& config);
ImputationResult impute(const VelocityFn& field, const Schedule& schedule, const Tensor2& x_obs,
                        const MaskTriple& masks, const InferConfig& config);

}  // namespace macfm
