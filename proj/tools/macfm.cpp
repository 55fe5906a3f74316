// macfm: command-line driver for masking, training, imputation and benchmarks.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "macfm/ablation.hpp"
#include "macfm/config.hpp"
#include "macfm/data.hpp"
#include "macfm/errors.hpp"
#include "macfm/eval.hpp"
#include "macfm/inference.hpp"
#include "macfm/log.hpp"
#include "macfm/masking.hpp"
#include "macfm/model.hpp"
#include "macfm/parallel.hpp"
#include "macfm/synthgen.hpp"
#include "macfm/training.hpp"

namespace fs = std::filesystem;
using namespace macfm;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

/// Flags shared by commands that read a RunConfig; unset flags keep file values.
struct Overrides {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> data;
    std::optional<std::string> out;
    std::optional<std::string> mechanism;
    std::optional<double> rate;
    std::optional<std::size_t> n_masks;
    std::optional<std::size_t> trials;
    std::optional<std::size_t> steps;
    std::optional<std::string> solver;
    std::optional<std::size_t> epochs;
    std::optional<std::size_t> d_model;
    std::optional<std::size_t> n_blocks;
    std::optional<std::size_t> pe_dim;
    std::optional<std::string> schedule;
    std::vector<std::string> categorical;

    void add_to(CLI::App* cmd) {
        cmd->add_option("-c,--config", config_path, "RunConfig JSON file")->check(CLI::ExistingFile);
        cmd->add_option("--seed", seed, "Global seed");
        cmd->add_option("--data", data, "Input CSV (replaces the configured dataset)");
        cmd->add_option("-o,--out", out, "Output directory");
        cmd->add_option("--mechanism", mechanism, "MCAR, MAR or MNAR");
        cmd->add_option("--rate", rate, "Missing rate in (0, 1)");
        cmd->add_option("--n-masks", n_masks, "Number of masks");
        cmd->add_option("--trials", trials, "Trajectory trials");
        cmd->add_option("--steps", steps, "ODE steps K");
        cmd->add_option("--solver", solver, "euler or heun");
        cmd->add_option("--epochs", epochs, "Maximum training epochs");
        cmd->add_option("--d-model", d_model, "Hidden width");
        cmd->add_option("--n-blocks", n_blocks, "Number of hidden blocks");
        cmd->add_option("--pe-dim", pe_dim, "Time embedding width");
        cmd->add_option("--schedule", schedule, "linear, power or cosine");
        cmd->add_option("--categorical", categorical, "Columns to treat as categorical (comma-separated)")->delimiter(',');
    }

    RunConfig resolve() const {
        nlohmann::json j = {{"version", kConfigVersion}};
        if (!config_path.empty()) {
            std::ifstream in(config_path);
            try {
                j = nlohmann::json::parse(in);
            } catch (const nlohmann::json::parse_error& e) {
                throw ConfigError("config '" + config_path + "' is not valid JSON: " + e.what());
            }
        }
        if (!j.is_object()) throw ConfigError("config root must be an object");
        const auto section = [&](const char* name) -> nlohmann::json& {
            if (!j.contains(name)) j[name] = nlohmann::json::object();
            return j[name];
        };
        if (seed) j["seed"] = *seed;
        if (out) j["output_dir"] = *out;
        if (data) {
            auto& d = section("dataset");
            d["path"] = *data;
            d.erase("synthetic");
        }
        if (!categorical.empty()) section("dataset")["categorical"] = categorical;
        // A single mechanism or rate also narrows the benchmark grid.
        if (mechanism) {
            section("mask")["mechanism"] = *mechanism;
            section("protocol")["mechanisms"] = {*mechanism};
        }
        if (rate) {
            section("mask")["rate"] = *rate;
            section("protocol")["rates"] = {*rate};
        }
        if (n_masks) section("mask")["n_masks"] = *n_masks;
        if (trials) section("infer")["trials"] = *trials;
        if (solver) section("infer")["solver"] = *solver;
        if (steps) section("grid")["K"] = *steps;
        if (epochs) section("train")["max_epochs"] = *epochs;
        if (d_model) section("model")["d_model"] = *d_model;
        if (n_blocks) section("model")["n_blocks"] = *n_blocks;
        if (pe_dim) section("model")["pe_dim"] = *pe_dim;
        if (schedule) section("schedule")["kind"] = *schedule;
        return config_from_json(j);
    }
};

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out << text;
}

std::string rate_tag(double rate) { return std::to_string(static_cast<int>(std::lround(rate * 100))); }

int cmd_mask(const RunConfig& cfg, bool csv) {
    const DatasetView view = fit_transform(load_dataset(cfg.dataset), cfg.seed, cfg.dataset.train_fraction);
    fs::create_directories(cfg.output_dir);
    const Tensor2 features = view.feature_matrix();
    for (std::size_t i = 0; i < cfg.mask.n_masks; ++i) {
        const std::uint64_t seed = cell_seed(cfg.seed, cfg.mask.mechanism, cfg.mask.rate, i);
        const MissMask mask = generate_mask(cfg.mask.mechanism, features, cfg.mask.rate, seed);
        const std::string stem =
            "mask_" + to_string(cfg.mask.mechanism) + "_" + rate_tag(cfg.mask.rate) + "_" + std::to_string(i);
        save_mask(cfg.output_dir / (stem + ".bin"), mask);
        if (csv) write_mask_csv(cfg.output_dir / (stem + ".csv"), mask.bits);
        std::cout << stem << " realized_rate=" << mask.realized_rate() << '\n';
    }
    save_schema(cfg.output_dir / "schema.json", view.schema);
    return 0;
}

int cmd_train(const RunConfig& cfg, bool dry_run, const std::string& mask_path) {
    if (dry_run) {
        std::cout << "config ok\n" << config_to_json(cfg).dump(2) << '\n';
        return 0;
    }
    const DatasetView view = fit_transform(load_dataset(cfg.dataset), cfg.seed, cfg.dataset.train_fraction);
    BinaryGrid observed = view.observed;
    if (!mask_path.empty()) {
        const MissMask mask = load_mask(mask_path);
        if (mask.rows() != observed.rows() || mask.cols() != observed.cols()) {
            throw DataError("mask " + mask_path + " does not match the dataset shape");
        }
        observed = observed & mask.bits.negated();
    }
    TrainingSet set{select_rows(view.encoded, view.split.train), observed.select_rows(view.split.train),
                    view.schema.feature_of_column(), view.schema.numeric_mask()};
    const BinaryGrid cells = expand_columns(set.observed, set.column_feature);
    for (std::size_t r = 0; r < set.values.rows(); ++r)
        for (std::size_t c = 0; c < set.values.cols(); ++c)
            if (!cells(r, c)) set.values(r, c) = 0.0;

    ModelConfig mc = cfg.model;
    mc.features = view.width();
    const TrainResult result = train(set, mc, cfg.train, cfg.schedule, [](std::size_t epoch, const VelocityModel&,
                                                                          const LossTerms& mean) {
        log_info("epoch " + std::to_string(epoch) + " loss " + std::to_string(mean.total));
    });
    fs::create_directories(cfg.output_dir);
    save_checkpoint(cfg.output_dir / "model.ckpt", result.model, cfg.schedule);
    save_schema(cfg.output_dir / "schema.json", view.schema);
    write_loss_history(cfg.output_dir / "loss_history.csv", result.history);
    save_config(cfg.output_dir / "config.json", cfg);
    std::cout << "trained " << result.history.size() << " epochs, best loss " << result.best_loss << " at epoch "
              << result.best_epoch << "\ncheckpoint " << (cfg.output_dir / "model.ckpt").string() << '\n';
    return 0;
}

int cmd_impute(const std::string& model_path, const std::string& schema_path, const std::string& input,
               const std::string& output, const RunConfig& cfg) {
    const Checkpoint ckpt = load_checkpoint(model_path);
    const Schema schema = load_schema(schema_path);
    if (ckpt.model.features() != schema.encoded_width()) {
        throw DataError("checkpoint width " + std::to_string(ckpt.model.features()) + " does not match schema width " +
                        std::to_string(schema.encoded_width()));
    }
    SchemaHints hints = cfg.dataset.hints;
    for (const auto& f : schema.features)
        (f.role == ColumnRole::categorical ? hints.categorical : hints.numeric).push_back(f.name);
    RawTable raw = load_csv(input, hints);
    const Encoded enc = encode(raw, schema);
    const MaskTriple masks = inference_partition(expand_columns(enc.observed, schema.feature_of_column()));
    const ImputationResult result = impute(ckpt.model, ckpt.schedule, enc.values, masks, cfg.infer);
    const RawTable decoded = inverse_transform(schema, result.imputed);

    std::size_t filled = 0;
    for (RawColumn& col : raw.columns) {
        const auto it = std::find_if(decoded.columns.begin(), decoded.columns.end(),
                                     [&](const RawColumn& c) { return c.name == col.name; });
        if (it == decoded.columns.end()) continue;
        for (std::size_t r = 0; r < raw.rows; ++r) {
            if (!col.missing[r] || it->missing[r]) continue;
            if (col.role == ColumnRole::numeric && it->role == ColumnRole::numeric) {
                col.numbers[r] = it->numbers[r];
            } else if (col.role == ColumnRole::categorical && it->role == ColumnRole::categorical) {
                col.labels[r] = it->labels[r];
            } else {
                continue;
            }
            col.missing[r] = 0;
            ++filled;
        }
    }
    if (raw.missing_count() > 0) log_warning(std::to_string(raw.missing_count()) + " cells could not be imputed");
    write_csv(output, raw);
    std::cout << "imputed " << filled << " cells in " << result.seconds << " s -> " << output << '\n';
    return 0;
}

int cmd_benchmark(const RunConfig& cfg, bool resume, bool ablations) {
    const DatasetView view = fit_transform(load_dataset(cfg.dataset), cfg.seed, cfg.dataset.train_fraction);
    const fs::path out = cfg.output_dir;
    const fs::path cells = out / "cells";
    if (!resume && fs::exists(cells)) fs::remove_all(cells);
    fs::create_directories(out);
    save_config(out / "config.json", cfg);

    const ProtocolConfig protocol = cfg.protocol_config();
    const auto reports = run_protocol(view, protocol, cells);
    write_text(out / "reports.json", reports_to_json(reports).dump(2) + "\n");
    write_text(out / "reports.csv", reports_to_csv(reports));
    std::vector<Scope> scopes{Scope::in_sample};
    if (protocol.out_of_sample) scopes.push_back(Scope::out_of_sample);
    for (Mechanism m : protocol.mechanisms)
        for (double rate : protocol.rates)
            for (Scope s : scopes)
                for (const char* metric : {"mae", "rmse"}) {
                    const std::string name = "table_" + to_string(m) + "_" + rate_tag(rate) + "_" + to_string(s) +
                                             "_" + metric + ".csv";
                    write_text(out / name, reports_to_table(reports, m, rate, s, metric));
                }
    for (const auto& r : reports) {
        std::printf("%-7s %-5s %.2f %-14s MAE %7.2f +- %5.2f  RMSE %7.2f +- %5.2f%s\n", r.method.c_str(),
                    to_string(r.mechanism).c_str(), r.rate, to_string(r.scope).c_str(), 100 * r.mae_mean,
                    100 * r.mae_std, 100 * r.rmse_mean, 100 * r.rmse_std,
                    r.failed ? (" (" + std::to_string(r.failed) + " failed)").c_str() : "");
    }

    if (ablations && cfg.ablation.enabled) {
        const fs::path abl_json = out / "ablation.json";
        if (resume && fs::exists(abl_json)) {
            log_info("ablations already complete, skipping");
        } else {
            const AblationResult abl =
                run_ablations(view, protocol, cfg.ablation, cfg.mask.mechanism, cfg.mask.rate);
            write_text(out / "ablation.csv", ablation_to_csv(abl));
            write_text(out / "ablation_trials.dat", ablation_plot_data(abl, "trials", Scope::in_sample));
            write_text(out / "ablation_steps.dat", ablation_plot_data(abl, "steps", Scope::in_sample));
            write_text(out / "ablation_mask_aware.dat", ablation_plot_data(abl, "mask_aware", Scope::out_of_sample));
            write_text(abl_json, ablation_to_json(abl).dump(2) + "\n");
            std::cout << ablation_to_csv(abl);
        }
    }
    return 0;
}

int cmd_eval(const std::string& truth_path, const std::string& imputed_path, const std::string& mask_path,
             const std::string& schema_path) {
    const Schema schema = load_schema(schema_path);
    SchemaHints hints;
    for (const auto& f : schema.features)
        (f.role == ColumnRole::categorical ? hints.categorical : hints.numeric).push_back(f.name);
    const Encoded truth = encode(load_csv(truth_path, hints), schema);
    const Encoded imputed = encode(load_csv(imputed_path, hints), schema);
    const MissMask mask = load_mask(mask_path);
    if (mask.rows() != truth.observed.rows() || mask.cols() != truth.observed.cols() ||
        imputed.values.rows() != truth.values.rows()) {
        throw DataError("truth, imputed and mask shapes disagree");
    }
    const BinaryGrid eval_features = truth.observed & mask.bits;
    const auto columns = schema.feature_of_column();
    const Metrics m = mae_rmse(truth.values, imputed.values, expand_columns(eval_features, columns),
                               schema.numeric_mask());
    const auto acc = categorical_accuracy(schema, truth.values, imputed.values, eval_features);
    nlohmann::json j = {{"mae", m.mae},
                        {"rmse", m.rmse},
                        {"mae_x100", 100 * m.mae},
                        {"rmse_x100", 100 * m.rmse},
                        {"cat_accuracy", acc ? nlohmann::json(*acc) : nlohmann::json(nullptr)}};
    std::cout << j.dump(2) << '\n';
    return 0;
}

int run(int argc, char** argv) {
    CLI::App app{"Mask-aware conditional flow matching for tabular imputation"};
    app.require_subcommand(1);
    std::optional<std::size_t> threads;
    bool verbose = false;
    bool quiet = false;
    app.add_option("--threads", threads, "Worker cap (overrides MACFM_THREADS)");
    app.add_flag("-v,--verbose", verbose, "Log progress");
    app.add_flag("-q,--quiet", quiet, "Suppress warnings");

    Overrides mask_o, train_o, impute_o, bench_o;
    bool mask_csv = false;
    auto* mask = app.add_subcommand("mask", "Generate missingness masks");
    mask_o.add_to(mask);
    mask->add_flag("--csv", mask_csv, "Also write 0/1 CSV copies");

    bool dry_run = false;
    std::string train_mask;
    auto* train_cmd = app.add_subcommand("train", "Train a velocity model");
    train_o.add_to(train_cmd);
    train_cmd->add_flag("--dry-run", dry_run, "Validate the configuration and exit");
    train_cmd->add_option("--mask", train_mask, "Mask file applied before training")->check(CLI::ExistingFile);

    std::string model_path, schema_path, input, output;
    auto* impute_cmd = app.add_subcommand("impute", "Fill missing cells of a CSV");
    impute_o.add_to(impute_cmd);
    impute_cmd->add_option("--model", model_path, "Checkpoint")->required()->check(CLI::ExistingFile);
    impute_cmd->add_option("--schema", schema_path, "Schema sidecar")->required()->check(CLI::ExistingFile);
    impute_cmd->add_option("-i,--input", input, "CSV to impute")->required()->check(CLI::ExistingFile);
    impute_cmd->add_option("--output", output, "Imputed CSV")->required();

    bool resume = false;
    bool no_ablation = false;
    auto* bench = app.add_subcommand("benchmark", "Run the mask protocol and ablations");
    bench_o.add_to(bench);
    bench->add_flag("--resume", resume, "Reuse completed cells in the output directory");
    bench->add_flag("--no-ablation", no_ablation, "Skip the ablations");

    std::string truth_path, imputed_path, eval_mask, eval_schema;
    auto* eval_cmd = app.add_subcommand("eval", "Score an imputed CSV on masked cells");
    eval_cmd->add_option("--truth", truth_path, "Complete CSV")->required()->check(CLI::ExistingFile);
    eval_cmd->add_option("--imputed", imputed_path, "Imputed CSV")->required()->check(CLI::ExistingFile);
    eval_cmd->add_option("--mask", eval_mask, "Mask file")->required()->check(CLI::ExistingFile);
    eval_cmd->add_option("--schema", eval_schema, "Schema sidecar")->required()->check(CLI::ExistingFile);

    SynthSpec spec;
    std::string synth_out;
    std::string covariance = "ar";
    auto* synth = app.add_subcommand("synth", "Write a synthetic dataset");
    synth->add_option("--n", spec.n, "Rows");
    synth->add_option("--d-numeric", spec.d_numeric, "Numeric columns");
    synth->add_option("--d-categorical", spec.d_categorical, "Categorical columns");
    synth->add_option("--n-categories", spec.n_categories, "Categories per column");
    synth->add_option("--covariance", covariance, "identity, ar or low_rank");
    synth->add_option("--rho", spec.rho, "AR coefficient");
    synth->add_option("--rank", spec.rank, "Low-rank factor count");
    synth->add_option("--seed", spec.seed, "Seed");
    synth->add_option("-o,--output", synth_out, "CSV path")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitConfig;
    }
    if (threads) setenv("MACFM_THREADS", std::to_string(*threads).c_str(), 1);
    set_log_level(quiet ? LogLevel::quiet : verbose ? LogLevel::info : LogLevel::warning);

    if (mask->parsed()) return cmd_mask(mask_o.resolve(), mask_csv);
    if (train_cmd->parsed()) return cmd_train(train_o.resolve(), dry_run, train_mask);
    if (impute_cmd->parsed()) return cmd_impute(model_path, schema_path, input, output, impute_o.resolve());
    if (bench->parsed()) return cmd_benchmark(bench_o.resolve(), resume, !no_ablation);
    if (eval_cmd->parsed()) return cmd_eval(truth_path, imputed_path, eval_mask, eval_schema);
    if (synth->parsed()) {
        spec.covariance = parse_covariance(covariance);
        write_csv(synth_out, generate(spec));
        return 0;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    tune_allocator();
    try {
        return run(argc, argv);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const DomainError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << '\n';
        return kExitNumeric;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return kExitData;
    } catch (const DimensionError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
