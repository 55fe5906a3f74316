#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "macfm/schedule.hpp"
#include "macfm/tape.hpp"
#include "macfm/tensor.hpp"

namespace macfm {

struct ModelConfig {
    std::size_t features = 0;  ///< D, encoded width
    std::size_t d_model = 256;
    std::size_t n_blocks = 3;
    std::size_t pe_dim = 128;
    std::uint64_t seed = 0;

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Sinusoidal features [sin(w_0 t), cos(w_0 t), sin(w_1 t), ...] with w_i = 10000^(-2i/pe_dim).
Tensor2 time_embedding(std::span<const double> t, std::size_t pe_dim);

/// MLP velocity field v(x, t) = Head(Blocks(Linear(x) + TimeMLP(PE(t)))).
///
/// Blocks are Linear followed by SiLU, without residuals or dropout. The head is
/// Linear-SiLU-Linear and its last layer starts at exactly zero, so a freshly
/// initialized model predicts zero velocity everywhere.
class VelocityModel {
public:
    VelocityModel() = default;
    /// Glorot-uniform hidden weights, zero biases, zero final head layer.
    static VelocityModel init(const ModelConfig& config);
    static std::size_t parameter_count(const ModelConfig& config);

    const ModelConfig& config() const { return m_config; }
    std::size_t features() const { return m_config.features; }

    std::vector<Tensor2>& parameters() { return m_params; }
    const std::vector<Tensor2>& parameters() const { return m_params; }
    const std::vector<std::string>& parameter_names() const { return m_names; }
    std::size_t parameter_count() const;
    std::vector<double> flat_parameters() const;
    void set_flat_parameters(std::span<const double> flat);
    /// FNV-1a over the raw parameter bytes.
    std::uint64_t parameter_hash() const;

    /// Records parameters on the tape (as gradient-tracking leaves when trainable).
    std::vector<ad::Var> bind(ad::Tape& tape, bool trainable) const;
    ad::Var forward(ad::Tape& tape, std::span<const ad::Var> params, ad::Var x, std::span<const double> t) const;
    /// Pure forward pass; safe to call concurrently on a shared model.
    Tensor2 forward(const Tensor2& x, std::span<const double> t) const;

    friend bool operator==(const VelocityModel&, const VelocityModel&) = default;

private:
    void check_inputs(const Tensor2& x, std::span<const double> t) const;

    ModelConfig m_config;
    std::vector<Tensor2> m_params;
    std::vector<std::string> m_names;
};

/// Model plus the schedule it was trained with.
struct Checkpoint {
    VelocityModel model;
    Schedule schedule;
};

inline constexpr int kCheckpointVersion = 1;

/// "MACFM001", u64 LE header length, JSON header, little-endian f64 parameters in layout order.
void save_checkpoint(const std::filesystem::path& path, const VelocityModel& model,
                     const Schedule& schedule = Schedule::linear());
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace macfm
