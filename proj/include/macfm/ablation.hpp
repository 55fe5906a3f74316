#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include <json.hpp>

#include "macfm/config.hpp"
#include "macfm/eval.hpp"

namespace macfm {

/// One ablation setting evaluated over every mask.
struct AblationRow {
    std::string ablation;  ///< "trials", "steps" or "mask_aware"
    std::string setting;   ///< e.g. "10", "on", "off"
    Scope scope = Scope::in_sample;
    std::vector<double> mae;      ///< per mask, NaN when the mask failed
    std::vector<double> rmse;
    std::vector<double> seconds;  ///< inference wall time per mask
    double mae_mean = 0.0;
    double mae_std = 0.0;
    double rmse_mean = 0.0;
    double rmse_std = 0.0;
    double seconds_mean = 0.0;

    void aggregate();
};

struct AblationResult {
    std::string dataset;
    Mechanism mechanism = Mechanism::mcar;
    double rate = 0.3;
    std::vector<AblationRow> rows;

    const AblationRow& row(const std::string& ablation, const std::string& setting, Scope scope) const;
};

/// Trains one model per mask (the same model the protocol would train for that
/// cell) and re-evaluates it across trial counts and step counts. The mask-aware
/// arm also trains a plain flow-matching model (every in-play cell a target,
/// both regularizers off) and compares them out of sample.
AblationResult run_ablations(const DatasetView& view, const ProtocolConfig& base, const AblationConfig& ablation,
                             Mechanism mechanism, double rate);

nlohmann::json ablation_to_json(const AblationResult& result, bool include_timing = true);
/// One line per (ablation, setting, scope), x100 values.
std::string ablation_to_csv(const AblationResult& result);
/// Whitespace-separated plot data for one ablation: setting, mae, mae_std, rmse, rmse_std, seconds.
std::string ablation_plot_data(const AblationResult& result, const std::string& ablation, Scope scope);

}  // namespace macfm
