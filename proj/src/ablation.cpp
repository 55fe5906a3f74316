#include "macfm/ablation.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

#include "macfm/errors.hpp"
#include "macfm/log.hpp"
#include "macfm/parallel.hpp"

namespace macfm {
namespace {

void mean_std(const std::vector<double>& values, double& mean, double& sd) {
    mean = sd = 0.0;
    std::size_t n = 0;
    for (double v : values)
        if (std::isfinite(v)) {
            mean += v;
            ++n;
        }
    if (n == 0) {
        mean = std::numeric_limits<double>::quiet_NaN();
        return;
    }
    mean /= static_cast<double>(n);
    if (n < 2) return;
    for (double v : values)
        if (std::isfinite(v)) sd += (v - mean) * (v - mean);
    sd = std::sqrt(sd / static_cast<double>(n - 1));
}

struct MaskOutcome {
    std::string ablation;
    std::string setting;
    Scope scope;
    double mae;
    double rmse;
    double seconds;
};

}  // namespace

void AblationRow::aggregate() {
    mean_std(mae, mae_mean, mae_std);
    mean_std(rmse, rmse_mean, rmse_std);
    double unused = 0.0;
    mean_std(seconds, seconds_mean, unused);
}

const AblationRow& AblationResult::row(const std::string& ablation, const std::string& setting, Scope scope) const {
    for (const auto& r : rows)
        if (r.ablation == ablation && r.setting == setting && r.scope == scope) return r;
    throw ConfigError("no ablation row " + ablation + "=" + setting + " (" + to_string(scope) + ")");
}

AblationResult run_ablations(const DatasetView& view, const ProtocolConfig& base, const AblationConfig& ablation,
                             Mechanism mechanism, double rate) {
    if (base.n_masks == 0) throw ConfigError("ablation: n_masks must be >= 1");
    const std::size_t workers = base.threads == 0 ? worker_count() : base.threads;
    ProtocolConfig config = base;
    if (workers > 1) config.infer.threads = 1;

    std::vector<std::vector<MaskOutcome>> outcomes(base.n_masks);
    parallel_for(
        base.n_masks,
        [&](std::size_t i) {
            const MaskContext ctx = make_mask_context(view, mechanism, rate, i, config.seed);
            auto& out = outcomes[i];
            const auto evaluate = [&](const VelocityModel& model, const InferConfig& infer, Scope scope,
                                      const std::string& name, const std::string& setting) {
                try {
                    const ScopeResult r = evaluate_model(view, ctx, model, config.schedule, infer, scope);
                    out.push_back({name, setting, scope, r.metrics.mae, r.metrics.rmse, r.seconds});
                } catch (const Error& e) {
                    log_warning("ablation " + name + "=" + setting + " failed on mask " + std::to_string(i) + ": " +
                                e.what());
                    const double nan = std::numeric_limits<double>::quiet_NaN();
                    out.push_back({name, setting, scope, nan, nan, nan});
                }
            };

            const TrainResult trained = train_for_context(view, ctx, config);
            for (std::size_t trials : ablation.trials) {
                InferConfig infer = config.infer;
                infer.trials = trials;
                evaluate(trained.model, infer, Scope::in_sample, "trials", std::to_string(trials));
            }
            for (std::size_t steps : ablation.steps) {
                InferConfig infer = config.infer;
                infer.steps = steps;
                if (ablation.steps_trials > 0) infer.trials = ablation.steps_trials;
                evaluate(trained.model, infer, Scope::in_sample, "steps", std::to_string(steps));
            }
            if (ablation.mask_aware) {
                ProtocolConfig plain = config;
                plain.train.mask_aware = false;
                plain.train.lambda_stab = 0.0;
                plain.train.lambda_cons = 0.0;
                const TrainResult unmasked = train_for_context(view, ctx, plain);
                evaluate(trained.model, config.infer, Scope::out_of_sample, "mask_aware", "on");
                evaluate(unmasked.model, config.infer, Scope::out_of_sample, "mask_aware", "off");
            }
        },
        workers);

    AblationResult result{.dataset = base.dataset, .mechanism = mechanism, .rate = rate};
    for (std::size_t i = 0; i < outcomes.size(); ++i) {
        for (const auto& o : outcomes[i]) {
            auto it = std::find_if(result.rows.begin(), result.rows.end(), [&](const AblationRow& r) {
                return r.ablation == o.ablation && r.setting == o.setting && r.scope == o.scope;
            });
            if (it == result.rows.end()) {
                result.rows.push_back(AblationRow{.ablation = o.ablation, .setting = o.setting, .scope = o.scope});
                it = std::prev(result.rows.end());
            }
            it->mae.push_back(o.mae);
            it->rmse.push_back(o.rmse);
            it->seconds.push_back(o.seconds);
        }
    }
    for (auto& r : result.rows) r.aggregate();
    return result;
}

nlohmann::json ablation_to_json(const AblationResult& result, bool include_timing) {
    const auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
    const auto nums = [&](const std::vector<double>& v) {
        nlohmann::json a = nlohmann::json::array();
        for (double x : v) a.push_back(num(x));
        return a;
    };
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : result.rows) {
        nlohmann::json j = {{"ablation", r.ablation},     {"setting", r.setting},     {"scope", to_string(r.scope)},
                            {"mae", nums(r.mae)},         {"rmse", nums(r.rmse)},     {"mae_mean", num(r.mae_mean)},
                            {"mae_std", num(r.mae_std)},  {"rmse_mean", num(r.rmse_mean)},
                            {"rmse_std", num(r.rmse_std)}};
        if (include_timing) {
            j["seconds"] = nums(r.seconds);
            j["seconds_mean"] = num(r.seconds_mean);
        }
        rows.push_back(j);
    }
    return {{"dataset", result.dataset},
            {"mechanism", to_string(result.mechanism)},
            {"rate", result.rate},
            {"rows", rows}};
}

std::string ablation_to_csv(const AblationResult& result) {
    std::ostringstream out;
    out << std::fixed << std::setprecision(2);
    out << "dataset,mechanism,rate,ablation,setting,scope,mae_x100_mean,mae_x100_std,rmse_x100_mean,rmse_x100_std,"
           "infer_seconds_mean\n";
    for (const auto& r : result.rows) {
        out << result.dataset << ',' << to_string(result.mechanism) << ',' << result.rate << ',' << r.ablation << ','
            << r.setting << ',' << to_string(r.scope) << ',' << 100 * r.mae_mean << ',' << 100 * r.mae_std << ','
            << 100 * r.rmse_mean << ',' << 100 * r.rmse_std << ',' << std::setprecision(4) << r.seconds_mean
            << std::setprecision(2) << '\n';
    }
    return out.str();
}

std::string ablation_plot_data(const AblationResult& result, const std::string& ablation, Scope scope) {
    std::ostringstream out;
    out << "# " << ablation << " " << to_string(scope) << "\n# setting mae mae_std rmse rmse_std seconds\n";
    out << std::setprecision(8);
    for (const auto& r : result.rows) {
        if (r.ablation != ablation || r.scope != scope) continue;
        out << r.setting << ' ' << r.mae_mean << ' ' << r.mae_std << ' ' << r.rmse_mean << ' ' << r.rmse_std << ' '
            << r.seconds_mean << '\n';
    }
    return out.str();
}

}  // namespace macfm
