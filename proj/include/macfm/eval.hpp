#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "macfm/data.hpp"
#include "macfm/errors.hpp"
#include "macfm/inference.hpp"
#include "macfm/masking.hpp"
#include "macfm/model.hpp"
#include "macfm/training.hpp"

namespace macfm {

class EmptyMetricError : public DataError {
public:
    using DataError::DataError;
};

struct Metrics {
    double mae = 0.0;
    double rmse = 0.0;
};

/// MAE and RMSE over encoded cells with eval_mask = 1 on numeric columns.
Metrics mae_rmse(const Tensor2& truth, const Tensor2& imputed, const BinaryGrid& eval_mask,
                 std::span<const std::uint8_t> numeric_mask);

/// Argmax accuracy over categorical features whose cells are set in the feature-level eval mask.
std::optional<double> categorical_accuracy(const Schema& schema, const Tensor2& truth, const Tensor2& imputed,
                                           const BinaryGrid& feature_eval_mask);

enum class BaselineKind { mean, median, knn };

BaselineKind parse_baseline(std::string_view name);
std::string to_string(BaselineKind kind);

/// Reference rows for baselines; statistics come from these observed cells only.
struct ReferencePool {
    Tensor2 values;       ///< encoded, 0 where missing
    BinaryGrid observed;  ///< feature-level
};

/// Fills every missing feature of `query` (cells with observed = 0). Numeric
/// mean/median per column; categoricals take the pool mode. kNN averages the k
/// nearest pool rows that observe the feature, with distance over mutually
/// observed numeric features; rows without neighbours fall back to the mean fill.
Tensor2 baseline_impute(BaselineKind kind, const Schema& schema, const ReferencePool& pool, const Tensor2& query,
                        const BinaryGrid& query_observed, std::size_t k = 5);

enum class Scope { in_sample, out_of_sample };
std::string to_string(Scope s);

/// One synthetic mask applied to a fitted dataset, with everything needed to
/// train and evaluate on it.
struct MaskContext {
    Mechanism mechanism = Mechanism::mcar;
    double rate = 0.0;
    std::size_t mask_index = 0;
    std::uint64_t seed = 0;
    MissMask mask;
    BinaryGrid observed_after;  ///< feature-level, all rows: originally observed and not masked
    BinaryGrid eval_cells;      ///< feature-level, all rows: masked and originally observed
    std::vector<std::size_t> column_feature;
    std::vector<std::uint8_t> numeric_mask;

    TrainingSet training_set(const DatasetView& view) const;
    ReferencePool reference_pool(const DatasetView& view) const;
};

/// Seed for one grid cell, a hash of (global seed, mechanism, rate, mask index).
std::uint64_t cell_seed(std::uint64_t global_seed, Mechanism mechanism, double rate, std::size_t mask_index);

MaskContext make_mask_context(const DatasetView& view, Mechanism mechanism, double rate, std::size_t mask_index,
                              std::uint64_t global_seed);

struct ScopeResult {
    Metrics metrics;
    std::optional<double> cat_accuracy;
    double seconds = 0.0;
};

/// Imputes the masked rows of one split with a frozen model and scores the artificially masked cells.
ScopeResult evaluate_model(const DatasetView& view, const MaskContext& ctx, const VelocityModel& model,
                           const Schedule& schedule, const InferConfig& config, Scope scope);
ScopeResult evaluate_baseline(const DatasetView& view, const MaskContext& ctx, BaselineKind kind, Scope scope,
                              std::size_t k = 5);

struct MaskEntry {
    std::size_t mask_index = 0;
    std::uint64_t seed = 0;
    bool ok = true;
    std::string error;
    double mae = 0.0;
    double rmse = 0.0;
    std::optional<double> cat_accuracy;
    double seconds = 0.0;
    double train_seconds = 0.0;
};

struct MetricReport {
    std::string dataset;
    std::string method;
    Mechanism mechanism = Mechanism::mcar;
    double rate = 0.0;
    Scope scope = Scope::in_sample;
    std::vector<MaskEntry> per_mask;
    double mae_mean = 0.0;
    double mae_std = 0.0;
    double rmse_mean = 0.0;
    double rmse_std = 0.0;
    std::size_t failed = 0;

    /// Recomputes the aggregates from successful per-mask entries (sample std, 0 for one mask).
    void aggregate();
};

struct ProtocolConfig {
    std::string dataset = "dataset";
    std::vector<Mechanism> mechanisms{Mechanism::mcar, Mechanism::mar, Mechanism::mnar};
    std::vector<double> rates{0.3};
    std::size_t n_masks = 10;
    std::vector<std::string> methods{"macfm", "mean", "median", "knn"};
    std::size_t knn_k = 5;
    bool out_of_sample = true;
    std::uint64_t seed = 0;
    ModelConfig model;
    TrainConfig train;
    InferConfig infer;
    Schedule schedule;
    /// Grid cells evaluated concurrently (0 = worker_count()).
    std::size_t threads = 0;
};

/// Per-cell result bundle: every method and scope for one (mechanism, rate, mask).
struct CellResult {
    Mechanism mechanism = Mechanism::mcar;
    double rate = 0.0;
    std::size_t mask_index = 0;
    std::uint64_t seed = 0;
    struct Entry {
        std::string method;
        Scope scope = Scope::in_sample;
        MaskEntry result;
    };
    std::vector<Entry> entries;
};

/// Trains the velocity model on the masked train split of one cell, seeded from the cell seed.
TrainResult train_for_context(const DatasetView& view, const MaskContext& ctx, const ProtocolConfig& config);

CellResult run_cell(const DatasetView& view, const ProtocolConfig& config, Mechanism mechanism, double rate,
                    std::size_t mask_index);

nlohmann::json cell_to_json(const CellResult& cell);
CellResult cell_from_json(const nlohmann::json& j);

/// Groups cell results into one report per (method, mechanism, rate, scope).
std::vector<MetricReport> assemble_reports(const std::string& dataset, const std::vector<CellResult>& cells);

/// Runs every (mechanism, rate, mask) cell; `cache_dir`, when set, stores one JSON per
/// cell and reuses existing files (resume).
std::vector<MetricReport> run_protocol(const DatasetView& view, const ProtocolConfig& config,
                                       const std::optional<std::filesystem::path>& cache_dir = std::nullopt);

nlohmann::json report_to_json(const MetricReport& report, bool include_timing = true);
nlohmann::json reports_to_json(const std::vector<MetricReport>& reports, bool include_timing = true);
/// Long-format CSV with x100-scaled means and standard deviations.
std::string reports_to_csv(const std::vector<MetricReport>& reports);
/// Method x dataset table for one (mechanism, rate, scope) and metric ("mae" or "rmse"), x100.
std::string reports_to_table(const std::vector<MetricReport>& reports, Mechanism mechanism, double rate, Scope scope,
                             const std::string& metric);

}  // namespace macfm
