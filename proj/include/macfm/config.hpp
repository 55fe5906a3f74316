#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "macfm/data.hpp"
#include "macfm/eval.hpp"
#include "macfm/inference.hpp"
#include "macfm/masking.hpp"
#include "macfm/model.hpp"
#include "macfm/schedule.hpp"
#include "macfm/synthgen.hpp"
#include "macfm/training.hpp"

namespace macfm {

inline constexpr int kConfigVersion = 1;

struct DatasetConfig {
    std::filesystem::path path;  ///< empty when `synthetic` is set
    std::string name = "dataset";
    SchemaHints hints;
    double train_fraction = 0.7;
    std::optional<SynthSpec> synthetic;
};

struct MaskConfig {
    Mechanism mechanism = Mechanism::mcar;
    double rate = 0.3;
    std::size_t n_masks = 10;
};

struct ProtocolSection {
    std::vector<Mechanism> mechanisms{Mechanism::mcar, Mechanism::mar, Mechanism::mnar};
    std::vector<double> rates{0.3, 0.5, 0.7};
    std::vector<std::string> methods{"macfm", "mean", "median", "knn"};
    std::size_t knn_k = 5;
    bool out_of_sample = true;
    std::size_t threads = 0;
};

struct AblationConfig {
    bool enabled = true;
    std::vector<std::size_t> trials{10, 20, 30, 40, 50};
    std::vector<std::size_t> steps{10, 20, 30, 40, 50};
    /// Trials used while varying K; 0 keeps the inference default.
    std::size_t steps_trials = 0;
    bool mask_aware = true;
};

/// Everything needed to reproduce a run. Serialized as JSON with a version field.
struct RunConfig {
    std::uint64_t seed = 0;
    DatasetConfig dataset;
    Schedule schedule = Schedule::linear();
    ModelConfig model;
    TrainConfig train;
    InferConfig infer;
    MaskConfig mask;
    ProtocolSection protocol;
    AblationConfig ablation;
    std::filesystem::path output_dir = "out";

    /// Range and consistency checks; throws ConfigError.
    void validate() const;
    /// Protocol settings for the mask grid, seeds derived from `seed`.
    ProtocolConfig protocol_config() const;
};

/// Parses a config object; unknown keys at any level and a wrong version are ConfigErrors.
RunConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const RunConfig& config);
RunConfig load_config(const std::filesystem::path& path);
void save_config(const std::filesystem::path& path, const RunConfig& config);

/// Reads the configured CSV or generates the synthetic table.
RawTable load_dataset(const DatasetConfig& dataset);

}  // namespace macfm
