#include "macfm/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "macfm/errors.hpp"
#include "macfm/log.hpp"
#include "macfm/parallel.hpp"

namespace macfm {
namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

/// Encoded values of `rows` with every cell of an unobserved feature zeroed.
Tensor2 masked_values(const DatasetView& view, const BinaryGrid& observed, const std::vector<std::size_t>& rows) {
    Tensor2 out = select_rows(view.encoded, rows);
    const auto owner = view.schema.feature_of_column();
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t c = 0; c < owner.size(); ++c)
            if (!observed(rows[i], owner[c])) out(i, c) = 0.0;
    return out;
}

const std::vector<std::size_t>& scope_rows(const DatasetView& view, Scope scope) {
    return scope == Scope::in_sample ? view.split.train : view.split.test;
}

double median_of(std::vector<double> v) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const std::size_t mid = v.size() / 2;
    return v.size() % 2 ? v[mid] : 0.5 * (v[mid - 1] + v[mid]);
}

std::string format_fixed(double v, int digits) {
    std::ostringstream out;
    out << std::fixed << std::setprecision(digits) << v;
    return out.str();
}

}  // namespace

Metrics mae_rmse(const Tensor2& truth, const Tensor2& imputed, const BinaryGrid& eval_mask,
                 std::span<const std::uint8_t> numeric_mask) {
    require_same_shape(truth, imputed, "mae_rmse");
    if (eval_mask.rows() != truth.rows() || eval_mask.cols() != truth.cols() || numeric_mask.size() != truth.cols()) {
        throw DimensionError("mae_rmse: mask shape differs from data " + truth.shape_string());
    }
    double abs_sum = 0.0;
    double sq_sum = 0.0;
    std::size_t count = 0;
    for (std::size_t r = 0; r < truth.rows(); ++r) {
        for (std::size_t c = 0; c < truth.cols(); ++c) {
            if (!eval_mask(r, c) || !numeric_mask[c]) continue;
            const double d = imputed(r, c) - truth(r, c);
            abs_sum += std::abs(d);
            sq_sum += d * d;
            ++count;
        }
    }
    if (count == 0) throw EmptyMetricError("mae_rmse: no masked numeric cells to evaluate");
    const double n = static_cast<double>(count);
    return Metrics{abs_sum / n, std::sqrt(sq_sum / n)};
}

std::optional<double> categorical_accuracy(const Schema& schema, const Tensor2& truth, const Tensor2& imputed,
                                           const BinaryGrid& feature_eval_mask) {
    std::size_t hits = 0;
    std::size_t total = 0;
    for (std::size_t f = 0; f < schema.feature_count(); ++f) {
        const ColumnSchema& cs = schema.features[f];
        if (cs.role != ColumnRole::categorical) continue;
        const std::size_t off = schema.offset(f);
        for (std::size_t r = 0; r < truth.rows(); ++r) {
            if (!feature_eval_mask(r, f)) continue;
            std::size_t want = 0;
            std::size_t got = 0;
            for (std::size_t k = 1; k < cs.width(); ++k) {
                if (truth(r, off + k) > truth(r, off + want)) want = k;
                if (imputed(r, off + k) > imputed(r, off + got)) got = k;
            }
            hits += want == got ? 1 : 0;
            ++total;
        }
    }
    if (total == 0) return std::nullopt;
    return static_cast<double>(hits) / static_cast<double>(total);
}

BaselineKind parse_baseline(std::string_view name) {
    if (name == "mean") return BaselineKind::mean;
    if (name == "median") return BaselineKind::median;
    if (name == "knn") return BaselineKind::knn;
    throw ConfigError("unknown baseline '" + std::string(name) + "'");
}

std::string to_string(BaselineKind kind) {
    switch (kind) {
        case BaselineKind::mean:
            return "mean";
        case BaselineKind::median:
            return "median";
        case BaselineKind::knn:
            return "knn";
    }
    return "mean";
}

std::string to_string(Scope s) { return s == Scope::in_sample ? "in_sample" : "out_of_sample"; }

Tensor2 baseline_impute(BaselineKind kind, const Schema& schema, const ReferencePool& pool, const Tensor2& query,
                        const BinaryGrid& query_observed, std::size_t k) {
    const std::size_t F = schema.feature_count();
    const std::size_t D = schema.encoded_width();
    if (pool.values.cols() != D || query.cols() != D || pool.observed.cols() != F || query_observed.cols() != F ||
        query_observed.rows() != query.rows() || pool.observed.rows() != pool.values.rows()) {
        throw DimensionError("baseline_impute: shapes do not match the schema");
    }
    if (kind == BaselineKind::knn && k == 0) throw ConfigError("knn: k must be >= 1");

    // Column-wise fill values from observed pool cells.
    Tensor2 fill(1, D);
    for (std::size_t f = 0; f < F; ++f) {
        const ColumnSchema& cs = schema.features[f];
        const std::size_t off = schema.offset(f);
        if (cs.role == ColumnRole::numeric) {
            std::vector<double> seen;
            for (std::size_t r = 0; r < pool.values.rows(); ++r)
                if (pool.observed(r, f)) seen.push_back(pool.values(r, off));
            if (seen.empty()) continue;
            if (kind == BaselineKind::median) {
                fill[off] = median_of(std::move(seen));
            } else {
                double acc = 0.0;
                for (double v : seen) acc += v;
                fill[off] = acc / static_cast<double>(seen.size());
            }
        } else {
            std::vector<std::size_t> counts(cs.width(), 0);
            for (std::size_t r = 0; r < pool.values.rows(); ++r) {
                if (!pool.observed(r, f)) continue;
                for (std::size_t j = 0; j < cs.width(); ++j)
                    if (pool.values(r, off + j) > 0.5) ++counts[j];
            }
            const auto mode = static_cast<std::size_t>(std::max_element(counts.begin(), counts.end()) - counts.begin());
            fill[off + mode] = 1.0;
        }
    }

    Tensor2 out = query;
    const std::size_t n_num = schema.numeric_count();
    std::vector<double> dist(pool.values.rows());
    std::vector<std::pair<double, std::size_t>> candidates;
    for (std::size_t r = 0; r < query.rows(); ++r) {
        if (query_observed.count_row(r) == F) continue;
        if (kind == BaselineKind::knn) {
            for (std::size_t p = 0; p < pool.values.rows(); ++p) {
                double acc = 0.0;
                std::size_t shared = 0;
                for (std::size_t f = 0; f < n_num; ++f) {
                    if (!query_observed(r, f) || !pool.observed(p, f)) continue;
                    const double d = query(r, f) - pool.values(p, f);
                    acc += d * d;
                    ++shared;
                }
                dist[p] = shared ? acc / static_cast<double>(shared) : std::numeric_limits<double>::infinity();
            }
        }
        for (std::size_t f = 0; f < F; ++f) {
            if (query_observed(r, f)) continue;
            const std::size_t off = schema.offset(f);
            const std::size_t width = schema.features[f].width();
            bool done = false;
            if (kind == BaselineKind::knn) {
                candidates.clear();
                for (std::size_t p = 0; p < pool.values.rows(); ++p)
                    if (pool.observed(p, f) && std::isfinite(dist[p])) candidates.emplace_back(dist[p], p);
                if (!candidates.empty()) {
                    const std::size_t take = std::min(k, candidates.size());
                    std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(take),
                                      candidates.end());
                    for (std::size_t j = 0; j < width; ++j) {
                        double acc = 0.0;
                        for (std::size_t i = 0; i < take; ++i) acc += pool.values(candidates[i].second, off + j);
                        out(r, off + j) = acc / static_cast<double>(take);
                    }
                    done = true;
                }
            }
            if (!done)
                for (std::size_t j = 0; j < width; ++j) out(r, off + j) = fill[off + j];
        }
    }
    return out;
}

TrainingSet MaskContext::training_set(const DatasetView& view) const {
    return TrainingSet{masked_values(view, observed_after, view.split.train),
                       observed_after.select_rows(view.split.train), column_feature, numeric_mask};
}

ReferencePool MaskContext::reference_pool(const DatasetView& view) const {
    return ReferencePool{masked_values(view, observed_after, view.split.train),
                         observed_after.select_rows(view.split.train)};
}

std::uint64_t cell_seed(std::uint64_t global_seed, Mechanism mechanism, double rate, std::size_t mask_index) {
    std::uint64_t h = combine_seed(global_seed, to_string(mechanism));
    h = combine_seed(h, static_cast<std::uint64_t>(std::llround(rate * 1e6)));
    return combine_seed(h, static_cast<std::uint64_t>(mask_index));
}

MaskContext make_mask_context(const DatasetView& view, Mechanism mechanism, double rate, std::size_t mask_index,
                              std::uint64_t global_seed) {
    MaskContext ctx;
    ctx.mechanism = mechanism;
    ctx.rate = rate;
    ctx.mask_index = mask_index;
    ctx.seed = cell_seed(global_seed, mechanism, rate, mask_index);
    ctx.mask = generate_mask(mechanism, view.feature_matrix(), rate, ctx.seed);
    ctx.observed_after = view.observed & ctx.mask.bits.negated();
    ctx.eval_cells = view.observed & ctx.mask.bits;
    ctx.column_feature = view.schema.feature_of_column();
    ctx.numeric_mask = view.schema.numeric_mask();
    return ctx;
}

ScopeResult evaluate_model(const DatasetView& view, const MaskContext& ctx, const VelocityModel& model,
                           const Schedule& schedule, const InferConfig& config, Scope scope) {
    const auto start = Clock::now();
    const auto& rows = scope_rows(view, scope);
    const Tensor2 x_obs = masked_values(view, ctx.observed_after, rows);
    const BinaryGrid observed = expand_columns(ctx.observed_after.select_rows(rows), ctx.column_feature);
    InferConfig cfg = config;
    cfg.seed = combine_seed(combine_seed(config.seed, ctx.seed), to_string(scope));
    const ImputationResult res = impute(model, schedule, x_obs, inference_partition(observed), cfg);

    const Tensor2 truth = select_rows(view.encoded, rows);
    const BinaryGrid eval_features = ctx.eval_cells.select_rows(rows);
    ScopeResult out;
    out.metrics = mae_rmse(truth, res.imputed, expand_columns(eval_features, ctx.column_feature), ctx.numeric_mask);
    out.cat_accuracy = categorical_accuracy(view.schema, truth, res.imputed, eval_features);
    out.seconds = seconds_since(start);
    return out;
}

ScopeResult evaluate_baseline(const DatasetView& view, const MaskContext& ctx, BaselineKind kind, Scope scope,
                              std::size_t k) {
    const auto start = Clock::now();
    const auto& rows = scope_rows(view, scope);
    const Tensor2 query = masked_values(view, ctx.observed_after, rows);
    const BinaryGrid query_observed = ctx.observed_after.select_rows(rows);
    const Tensor2 imputed = baseline_impute(kind, view.schema, ctx.reference_pool(view), query, query_observed, k);

    const Tensor2 truth = select_rows(view.encoded, rows);
    const BinaryGrid eval_features = ctx.eval_cells.select_rows(rows);
    ScopeResult out;
    out.metrics = mae_rmse(truth, imputed, expand_columns(eval_features, ctx.column_feature), ctx.numeric_mask);
    out.cat_accuracy = categorical_accuracy(view.schema, truth, imputed, eval_features);
    out.seconds = seconds_since(start);
    return out;
}

void MetricReport::aggregate() {
    std::vector<const MaskEntry*> ok;
    for (const auto& e : per_mask)
        if (e.ok) ok.push_back(&e);
    failed = per_mask.size() - ok.size();
    mae_mean = mae_std = rmse_mean = rmse_std = 0.0;
    if (ok.empty()) return;
    const double n = static_cast<double>(ok.size());
    for (const auto* e : ok) {
        mae_mean += e->mae;
        rmse_mean += e->rmse;
    }
    mae_mean /= n;
    rmse_mean /= n;
    if (ok.size() < 2) return;
    for (const auto* e : ok) {
        mae_std += (e->mae - mae_mean) * (e->mae - mae_mean);
        rmse_std += (e->rmse - rmse_mean) * (e->rmse - rmse_mean);
    }
    mae_std = std::sqrt(mae_std / (n - 1.0));
    rmse_std = std::sqrt(rmse_std / (n - 1.0));
}

TrainResult train_for_context(const DatasetView& view, const MaskContext& ctx, const ProtocolConfig& config) {
    ModelConfig mc = config.model;
    mc.features = view.width();
    mc.seed = combine_seed(ctx.seed, "model");
    TrainConfig tc = config.train;
    tc.seed = combine_seed(ctx.seed, "train");
    return train(ctx.training_set(view), mc, tc, config.schedule);
}

CellResult run_cell(const DatasetView& view, const ProtocolConfig& config, Mechanism mechanism, double rate,
                    std::size_t mask_index) {
    CellResult cell{.mechanism = mechanism, .rate = rate, .mask_index = mask_index};
    const MaskContext ctx = make_mask_context(view, mechanism, rate, mask_index, config.seed);
    cell.seed = ctx.seed;

    std::vector<Scope> scopes{Scope::in_sample};
    if (config.out_of_sample) scopes.push_back(Scope::out_of_sample);

    const auto record = [&](const std::string& method, Scope scope, MaskEntry entry) {
        entry.mask_index = mask_index;
        entry.seed = ctx.seed;
        cell.entries.push_back({method, scope, std::move(entry)});
    };
    const auto fail_all = [&](const std::string& method, const std::string& message) {
        for (Scope s : scopes) record(method, s, MaskEntry{.ok = false, .error = message});
        log_warning(method + " failed on " + to_string(mechanism) + " rate " + std::to_string(rate) + " mask " +
                    std::to_string(mask_index) + ": " + message);
    };

    for (const std::string& method : config.methods) {
        if (method == "macfm") {
            const auto start = Clock::now();
            TrainResult trained;
            try {
                trained = train_for_context(view, ctx, config);
            } catch (const Error& e) {
                fail_all(method, e.what());
                continue;
            }
            const double train_seconds = seconds_since(start);
            for (Scope s : scopes) {
                try {
                    const std::uint64_t before = trained.model.parameter_hash();
                    const ScopeResult r = evaluate_model(view, ctx, trained.model, config.schedule, config.infer, s);
                    if (trained.model.parameter_hash() != before) {
                        throw std::logic_error("model parameters changed during evaluation");
                    }
                    record(method, s,
                           MaskEntry{.mae = r.metrics.mae,
                                     .rmse = r.metrics.rmse,
                                     .cat_accuracy = r.cat_accuracy,
                                     .seconds = r.seconds,
                                     .train_seconds = train_seconds});
                } catch (const Error& e) {
                    record(method, s, MaskEntry{.ok = false, .error = e.what()});
                }
            }
            continue;
        }
        BaselineKind kind;
        try {
            kind = parse_baseline(method);
        } catch (const ConfigError& e) {
            fail_all(method, e.what());
            continue;
        }
        for (Scope s : scopes) {
            try {
                const ScopeResult r = evaluate_baseline(view, ctx, kind, s, config.knn_k);
                record(method, s,
                       MaskEntry{.mae = r.metrics.mae,
                                 .rmse = r.metrics.rmse,
                                 .cat_accuracy = r.cat_accuracy,
                                 .seconds = r.seconds});
            } catch (const Error& e) {
                record(method, s, MaskEntry{.ok = false, .error = e.what()});
            }
        }
    }
    return cell;
}

namespace {

nlohmann::json entry_to_json(const MaskEntry& e, bool include_timing) {
    nlohmann::json j = {{"mask_index", e.mask_index}, {"seed", e.seed}, {"ok", e.ok}};
    if (!e.ok) j["error"] = e.error;
    j["mae"] = e.mae;
    j["rmse"] = e.rmse;
    j["cat_accuracy"] = e.cat_accuracy ? nlohmann::json(*e.cat_accuracy) : nlohmann::json(nullptr);
    if (include_timing) {
        j["seconds"] = e.seconds;
        j["train_seconds"] = e.train_seconds;
    }
    return j;
}

MaskEntry entry_from_json(const nlohmann::json& j) {
    MaskEntry e;
    e.mask_index = j.at("mask_index").get<std::size_t>();
    e.seed = j.at("seed").get<std::uint64_t>();
    e.ok = j.at("ok").get<bool>();
    e.error = j.value("error", std::string{});
    e.mae = j.at("mae").get<double>();
    e.rmse = j.at("rmse").get<double>();
    if (!j.at("cat_accuracy").is_null()) e.cat_accuracy = j.at("cat_accuracy").get<double>();
    e.seconds = j.value("seconds", 0.0);
    e.train_seconds = j.value("train_seconds", 0.0);
    return e;
}

Scope parse_scope(const std::string& s) {
    if (s == "in_sample") return Scope::in_sample;
    if (s == "out_of_sample") return Scope::out_of_sample;
    throw FormatError("unknown scope '" + s + "'");
}

}  // namespace

nlohmann::json cell_to_json(const CellResult& cell) {
    nlohmann::json entries = nlohmann::json::array();
    for (const auto& e : cell.entries) {
        entries.push_back(
            {{"method", e.method}, {"scope", to_string(e.scope)}, {"result", entry_to_json(e.result, true)}});
    }
    return {{"mechanism", to_string(cell.mechanism)},
            {"rate", cell.rate},
            {"mask_index", cell.mask_index},
            {"seed", cell.seed},
            {"entries", entries}};
}

CellResult cell_from_json(const nlohmann::json& j) {
    CellResult cell;
    cell.mechanism = parse_mechanism(j.at("mechanism").get<std::string>());
    cell.rate = j.at("rate").get<double>();
    cell.mask_index = j.at("mask_index").get<std::size_t>();
    cell.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& e : j.at("entries")) {
        cell.entries.push_back({e.at("method").get<std::string>(), parse_scope(e.at("scope").get<std::string>()),
                                entry_from_json(e.at("result"))});
    }
    return cell;
}

std::vector<MetricReport> assemble_reports(const std::string& dataset, const std::vector<CellResult>& cells) {
    std::vector<MetricReport> reports;
    for (const auto& cell : cells) {
        for (const auto& e : cell.entries) {
            auto it = std::find_if(reports.begin(), reports.end(), [&](const MetricReport& r) {
                return r.method == e.method && r.mechanism == cell.mechanism && r.rate == cell.rate &&
                       r.scope == e.scope;
            });
            if (it == reports.end()) {
                reports.push_back(MetricReport{.dataset = dataset,
                                               .method = e.method,
                                               .mechanism = cell.mechanism,
                                               .rate = cell.rate,
                                               .scope = e.scope});
                it = std::prev(reports.end());
            }
            it->per_mask.push_back(e.result);
        }
    }
    for (auto& r : reports) r.aggregate();
    return reports;
}

std::vector<MetricReport> run_protocol(const DatasetView& view, const ProtocolConfig& config,
                                       const std::optional<std::filesystem::path>& cache_dir) {
    if (config.n_masks == 0) throw ConfigError("protocol: n_masks must be >= 1");
    struct Key {
        Mechanism mechanism;
        double rate;
        std::size_t mask_index;
    };
    std::vector<Key> keys;
    for (Mechanism m : config.mechanisms)
        for (double rate : config.rates)
            for (std::size_t i = 0; i < config.n_masks; ++i) keys.push_back({m, rate, i});

    const auto cache_file = [&](const Key& k) {
        std::ostringstream name;
        name << "cell_" << to_string(k.mechanism) << "_" << std::llround(k.rate * 1000) << "_" << k.mask_index
             << ".json";
        return *cache_dir / name.str();
    };
    if (cache_dir) std::filesystem::create_directories(*cache_dir);

    const std::size_t workers = config.threads == 0 ? worker_count() : config.threads;
    ProtocolConfig inner = config;
    if (workers > 1) inner.infer.threads = 1;

    std::vector<CellResult> cells(keys.size());
    parallel_for(
        keys.size(),
        [&](std::size_t i) {
            const Key& k = keys[i];
            if (cache_dir && std::filesystem::exists(cache_file(k))) {
                std::ifstream in(cache_file(k));
                cells[i] = cell_from_json(nlohmann::json::parse(in));
                log_info("resumed " + cache_file(k).string());
                return;
            }
            cells[i] = run_cell(view, inner, k.mechanism, k.rate, k.mask_index);
            if (cache_dir) {
                const auto path = cache_file(k);
                const auto tmp = std::filesystem::path(path.string() + ".tmp");
                {
                    std::ofstream out(tmp);
                    out << cell_to_json(cells[i]).dump(2) << '\n';
                }
                std::filesystem::rename(tmp, path);
            }
        },
        workers);
    return assemble_reports(config.dataset, cells);
}

nlohmann::json report_to_json(const MetricReport& report, bool include_timing) {
    nlohmann::json per_mask = nlohmann::json::array();
    for (const auto& e : report.per_mask) per_mask.push_back(entry_to_json(e, include_timing));
    return {{"dataset", report.dataset},
            {"method", report.method},
            {"mechanism", to_string(report.mechanism)},
            {"rate", report.rate},
            {"scope", to_string(report.scope)},
            {"n_masks", report.per_mask.size()},
            {"failed", report.failed},
            {"mae_mean", report.mae_mean},
            {"mae_std", report.mae_std},
            {"rmse_mean", report.rmse_mean},
            {"rmse_std", report.rmse_std},
            {"mae_mean_x100", 100.0 * report.mae_mean},
            {"mae_std_x100", 100.0 * report.mae_std},
            {"rmse_mean_x100", 100.0 * report.rmse_mean},
            {"rmse_std_x100", 100.0 * report.rmse_std},
            {"per_mask", per_mask}};
}

nlohmann::json reports_to_json(const std::vector<MetricReport>& reports, bool include_timing) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& r : reports) out.push_back(report_to_json(r, include_timing));
    return out;
}

std::string reports_to_csv(const std::vector<MetricReport>& reports) {
    std::ostringstream out;
    out << "dataset,method,mechanism,rate,scope,n_ok,mae_x100_mean,mae_x100_std,rmse_x100_mean,rmse_x100_std\n";
    for (const auto& r : reports) {
        out << r.dataset << ',' << r.method << ',' << to_string(r.mechanism) << ',' << r.rate << ','
            << to_string(r.scope) << ',' << (r.per_mask.size() - r.failed) << ',' << format_fixed(100 * r.mae_mean, 2)
            << ',' << format_fixed(100 * r.mae_std, 2) << ',' << format_fixed(100 * r.rmse_mean, 2) << ','
            << format_fixed(100 * r.rmse_std, 2) << '\n';
    }
    return out.str();
}

std::string reports_to_table(const std::vector<MetricReport>& reports, Mechanism mechanism, double rate, Scope scope,
                             const std::string& metric) {
    if (metric != "mae" && metric != "rmse") throw ConfigError("table metric must be 'mae' or 'rmse'");
    std::vector<std::string> datasets;
    std::vector<std::string> methods;
    for (const auto& r : reports) {
        if (r.mechanism != mechanism || r.rate != rate || r.scope != scope) continue;
        if (std::find(datasets.begin(), datasets.end(), r.dataset) == datasets.end()) datasets.push_back(r.dataset);
        if (std::find(methods.begin(), methods.end(), r.method) == methods.end()) methods.push_back(r.method);
    }
    std::ostringstream out;
    out << "method";
    for (const auto& d : datasets) out << ',' << d << ',' << d << "_std";
    out << '\n';
    for (const auto& m : methods) {
        out << m;
        for (const auto& d : datasets) {
            const auto it = std::find_if(reports.begin(), reports.end(), [&](const MetricReport& r) {
                return r.method == m && r.dataset == d && r.mechanism == mechanism && r.rate == rate &&
                       r.scope == scope;
            });
            if (it == reports.end()) {
                out << ",,";
                continue;
            }
            const double mean = metric == "mae" ? it->mae_mean : it->rmse_mean;
            const double sd = metric == "mae" ? it->mae_std : it->rmse_std;
            out << ',' << format_fixed(100 * mean, 2) << ',' << format_fixed(100 * sd, 2);
        }
        out << '\n';
    }
    return out.str();
}

}  // namespace macfm
