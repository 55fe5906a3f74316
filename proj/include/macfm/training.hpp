#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "macfm/masking.hpp"
#include "macfm/model.hpp"
#include "macfm/rng.hpp"
#include "macfm/schedule.hpp"
#include "macfm/tensor.hpp"

namespace macfm {

enum class TimeDistribution { uniform, beta };

struct TrainConfig {
    double lambda_stab = 0.1;
    double lambda_cons = 0.1;
    double eta_cons = 0.1;
    double sigma_in = 0.05;
    TimeDistribution t_dist = TimeDistribution::uniform;
    double t_beta_a = 2.0;
    double t_beta_b = 2.0;
    /// Draw t per example (true) or once per minibatch.
    bool t_per_example = true;
    std::size_t batch_size = 256;
    double lr = 1e-3;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    std::size_t max_epochs = 200;
    std::size_t patience = 20;
    double min_rel_improvement = 1e-4;
    double eps_norm = 1e-8;
    double cond_fraction = 0.3;
    double tgt_fraction = 0.3;
    /// When false every in-play cell becomes a target (plain, unmasked flow matching).
    bool mask_aware = true;
    /// Apply input noise on conditioning cells as well as observed ones.
    bool noise_on_cond = true;
    std::uint64_t seed = 0;

    void validate() const;
};

/// Masks as 0/1 tensors over encoded columns.
struct TensorMasks {
    Tensor2 obs;
    Tensor2 cond;
    Tensor2 tgt;

    static TensorMasks from(const MaskTriple& m);
};

/// x_t = (M_obs + M_cond) ⊙ X + M_tgt ⊙ (s X + (1 - s) eps); cells outside all masks are 0.
Tensor2 build_path(const Tensor2& X, const TensorMasks& masks, const Tensor2& eps, std::span<const double> s_t);
/// v* = M_tgt ⊙ s'(t) (X - eps), row-wise s'.
Tensor2 target_velocity(const Tensor2& X, const Tensor2& eps, const Tensor2& tgt, std::span<const double> s_prime);

struct Batch {
    Tensor2 X;
    TensorMasks masks;
};

/// Random draws consumed by one loss evaluation.
struct BatchNoise {
    std::vector<double> t;
    Tensor2 eps;
    Tensor2 xi_in;
    Tensor2 xi_cons;
};

BatchNoise sample_noise(std::size_t rows, std::size_t cols, const TrainConfig& config, Rng& rng);

struct LossTerms {
    double fm = 0.0;
    double stab = 0.0;
    double cons = 0.0;
    double total = 0.0;
};

/// Three-term objective for one minibatch. Fills `grads` (one tensor per
/// parameter, layout order) when non-null.
LossTerms loss_total(const VelocityModel& model, const Batch& batch, const BatchNoise& noise,
                     const TrainConfig& config, const Schedule& schedule, std::span<const std::uint8_t> numeric_mask,
                     std::vector<Tensor2>* grads = nullptr);
LossTerms loss_total(const VelocityModel& model, const Batch& batch, const TrainConfig& config,
                     const Schedule& schedule, std::span<const std::uint8_t> numeric_mask, Rng& rng,
                     std::vector<Tensor2>* grads = nullptr);

/// Flow-matching loss for a fixed velocity, in t-space (target s' (X - eps)) or
/// s-space (target X - eps), normalized by the target count.
enum class VelocityDomain { time, schedule };
double fm_loss_for_velocity(const Tensor2& v, const Tensor2& X, const Tensor2& eps, const Tensor2& tgt,
                            std::span<const double> s_prime, VelocityDomain domain, double eps_norm = 1e-8);

class Adam {
public:
    Adam(const VelocityModel& model, double lr, double beta1, double beta2, double eps);
    void step(VelocityModel& model, const std::vector<Tensor2>& grads);
    std::size_t steps() const { return m_step; }

private:
    double m_lr, m_beta1, m_beta2, m_eps;
    std::size_t m_step = 0;
    std::vector<Tensor2> m_m;
    std::vector<Tensor2> m_v;
};

/// Incomplete encoded training matrix.
struct TrainingSet {
    Tensor2 values;                          ///< n x D, 0 where missing
    BinaryGrid observed;                     ///< n x F feature-level presence
    std::vector<std::size_t> column_feature; ///< encoded column -> feature
    std::vector<std::uint8_t> numeric_mask;  ///< length D
};

struct EpochRecord {
    std::size_t epoch = 0;
    LossTerms mean;
};

struct TrainResult {
    VelocityModel model;  ///< best-loss parameters
    std::vector<EpochRecord> history;
    double best_loss = 0.0;
    std::size_t best_epoch = 0;
    std::size_t skipped_batches = 0;
};

using EpochCallback = std::function<void(std::size_t epoch, const VelocityModel& model, const LossTerms& mean)>;

/// Minibatch Adam over shuffled rows with a fresh mask partition every epoch;
/// stops after `patience` epochs without relative improvement.
TrainResult train(const TrainingSet& data, const ModelConfig& model_config, const TrainConfig& config,
                  const Schedule& schedule, const EpochCallback& on_epoch = {});
TrainResult train(VelocityModel initial, const TrainingSet& data, const TrainConfig& config,
                  const Schedule& schedule, const EpochCallback& on_epoch = {});

void write_loss_history(const std::filesystem::path& path, const std::vector<EpochRecord>& history);

}  // namespace macfm
