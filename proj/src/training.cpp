#include "macfm/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "macfm/errors.hpp"
#include "macfm/log.hpp"

namespace macfm {
namespace {

double mask_sum(const Tensor2& m) { return std::accumulate(m.flat().begin(), m.flat().end(), 0.0); }

Tensor2 rows_of(const Tensor2& m, std::span<const std::size_t> rows) {
    Tensor2 out(rows.size(), m.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto src = m.row_span(rows[i]);
        std::copy(src.begin(), src.end(), out.row_span(i).begin());
    }
    return out;
}

Tensor2 gaussian(std::size_t rows, std::size_t cols, Rng& rng) {
    Tensor2 out(rows, cols);
    for (double& x : out.flat()) x = rng.normal();
    return out;
}

double sample_t(const TrainConfig& config, Rng& rng) {
    if (config.t_dist == TimeDistribution::uniform) return rng.uniform();
    std::gamma_distribution<double> ga(config.t_beta_a, 1.0);
    std::gamma_distribution<double> gb(config.t_beta_b, 1.0);
    const double a = ga(rng.engine());
    const double b = gb(rng.engine());
    return a / (a + b);
}

}  // namespace

void TrainConfig::validate() const {
    const auto nonneg = [](double v, const char* name) {
        if (!(v >= 0.0)) throw ConfigError(std::string("train.") + name + " must be >= 0");
    };
    nonneg(lambda_stab, "lambda_stab");
    nonneg(lambda_cons, "lambda_cons");
    nonneg(eta_cons, "eta_cons");
    nonneg(sigma_in, "sigma_in");
    nonneg(lr, "lr");
    if (!(eps_norm > 0.0)) throw ConfigError("train.eps_norm must be > 0");
    if (!(adam_eps > 0.0)) throw ConfigError("train.adam_eps must be > 0");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
        throw ConfigError("train.adam betas must lie in [0, 1)");
    }
    if (batch_size == 0) throw ConfigError("train.batch_size must be >= 1");
    if (max_epochs == 0) throw ConfigError("train.max_epochs must be >= 1");
    if (patience == 0) throw ConfigError("train.patience must be >= 1");
    if (t_dist == TimeDistribution::beta && !(t_beta_a > 0.0 && t_beta_b > 0.0)) {
        throw ConfigError("train.t_beta parameters must be > 0");
    }
    if (cond_fraction < 0.0 || tgt_fraction <= 0.0 || cond_fraction + tgt_fraction >= 1.0) {
        throw ConfigError("train.cond_fraction + train.tgt_fraction must be < 1 with tgt_fraction > 0");
    }
}

TensorMasks TensorMasks::from(const MaskTriple& m) {
    return TensorMasks{m.obs.to_tensor(), m.cond.to_tensor(), m.tgt.to_tensor()};
}

Tensor2 build_path(const Tensor2& X, const TensorMasks& masks, const Tensor2& eps, std::span<const double> s_t) {
    require_same_shape(X, eps, "build_path");
    require_same_shape(X, masks.obs, "build_path");
    require_same_shape(X, masks.cond, "build_path");
    require_same_shape(X, masks.tgt, "build_path");
    if (s_t.size() != X.rows()) throw DimensionError("build_path: one s(t) per row required");
    Tensor2 out(X.rows(), X.cols());
    for (std::size_t r = 0; r < X.rows(); ++r) {
        const double s = s_t[r];
        if (!(s >= 0.0 && s <= 1.0)) throw DomainError("build_path: s(t) outside [0, 1]");
        for (std::size_t c = 0; c < X.cols(); ++c) {
            const double x = X(r, c);
            out(r, c) = (masks.obs(r, c) + masks.cond(r, c)) * x + masks.tgt(r, c) * (s * x + (1.0 - s) * eps(r, c));
        }
    }
    return out;
}

Tensor2 target_velocity(const Tensor2& X, const Tensor2& eps, const Tensor2& tgt, std::span<const double> s_prime) {
    require_same_shape(X, eps, "target_velocity");
    require_same_shape(X, tgt, "target_velocity");
    if (s_prime.size() != X.rows()) throw DimensionError("target_velocity: one s'(t) per row required");
    Tensor2 out(X.rows(), X.cols());
    for (std::size_t r = 0; r < X.rows(); ++r)
        for (std::size_t c = 0; c < X.cols(); ++c) out(r, c) = tgt(r, c) * s_prime[r] * (X(r, c) - eps(r, c));
    return out;
}

BatchNoise sample_noise(std::size_t rows, std::size_t cols, const TrainConfig& config, Rng& rng) {
    BatchNoise noise;
    noise.t.resize(rows);
    if (config.t_per_example) {
        for (double& t : noise.t) t = sample_t(config, rng);
    } else {
        std::fill(noise.t.begin(), noise.t.end(), sample_t(config, rng));
    }
    noise.eps = gaussian(rows, cols, rng);
    noise.xi_in = gaussian(rows, cols, rng);
    noise.xi_cons = gaussian(rows, cols, rng);
    return noise;
}

LossTerms loss_total(const VelocityModel& model, const Batch& batch, const BatchNoise& noise,
                     const TrainConfig& config, const Schedule& schedule, std::span<const std::uint8_t> numeric_mask,
                     std::vector<Tensor2>* grads) {
    const Tensor2& X0 = batch.X;
    const TensorMasks& m = batch.masks;
    const std::size_t n = X0.rows();
    const std::size_t D = X0.cols();
    if (numeric_mask.size() != D) throw DimensionError("loss_total: numeric mask length differs from feature count");
    if (noise.t.size() != n) throw DimensionError("loss_total: noise drawn for a different batch size");
    const double n_tgt = mask_sum(m.tgt);
    if (n_tgt == 0.0) throw DataError("loss_total: batch has no target cells");
    const double n_cond = mask_sum(m.cond);

    std::vector<double> s(n), s_prime(n);
    for (std::size_t r = 0; r < n; ++r) {
        s[r] = schedule.eval(noise.t[r]);
        s_prime[r] = schedule.deriv(noise.t[r]);
    }

    Tensor2 X = X0;
    if (config.sigma_in > 0.0) {
        for (std::size_t r = 0; r < n; ++r) {
            const double scale = config.sigma_in * (1.0 - s[r]);
            for (std::size_t c = 0; c < D; ++c) {
                const double where = m.obs(r, c) + (config.noise_on_cond ? m.cond(r, c) : 0.0);
                X(r, c) += scale * noise.xi_in(r, c) * where * numeric_mask[c];
            }
        }
    }

    const Tensor2 xt = build_path(X, m, noise.eps, s);
    const Tensor2 vstar = target_velocity(X, noise.eps, m.tgt, s_prime);

    ad::Tape tape;
    const auto params = model.bind(tape, grads != nullptr);
    const ad::Var tgt = tape.constant_ref(m.tgt);
    const ad::Var cond = tape.constant_ref(m.cond);
    const ad::Var v = model.forward(tape, params, tape.constant_ref(xt), noise.t);

    const ad::Var fm = tape.scale(tape.sum_sq_masked(tape.sub(v, tape.constant_ref(vstar)), tgt),
                                  1.0 / (n_tgt + config.eps_norm));
    const ad::Var stab = tape.scale(tape.sum_sq_masked(v, cond), 1.0 / (n_cond + config.eps_norm));
    ad::Var total = tape.add(fm, tape.scale(stab, config.lambda_stab));

    LossTerms terms;
    if (config.lambda_cons > 0.0) {
        Tensor2 xt_pert = xt;
        for (std::size_t r = 0; r < n; ++r) {
            const double scale = config.eta_cons * (1.0 - s[r]);
            for (std::size_t c = 0; c < D; ++c) xt_pert(r, c) += scale * noise.xi_cons(r, c);
        }
        const ad::Var v_pert = model.forward(tape, params, tape.constant(std::move(xt_pert)), noise.t);
        const ad::Var cons =
            tape.scale(tape.sum_sq_masked(tape.sub(v_pert, v), tgt), 1.0 / (n_tgt + config.eps_norm));
        total = tape.add(total, tape.scale(cons, config.lambda_cons));
        terms.cons = tape.scalar(cons);
    }
    terms.fm = tape.scalar(fm);
    terms.stab = tape.scalar(stab);
    terms.total = tape.scalar(total);

    if (grads) {
        tape.backward(total);
        grads->clear();
        grads->reserve(params.size());
        for (const ad::Var p : params) grads->push_back(tape.grad(p));
    }
    return terms;
}

LossTerms loss_total(const VelocityModel& model, const Batch& batch, const TrainConfig& config,
                     const Schedule& schedule, std::span<const std::uint8_t> numeric_mask, Rng& rng,
                     std::vector<Tensor2>* grads) {
    const BatchNoise noise = sample_noise(batch.X.rows(), batch.X.cols(), config, rng);
    return loss_total(model, batch, noise, config, schedule, numeric_mask, grads);
}

double fm_loss_for_velocity(const Tensor2& v, const Tensor2& X, const Tensor2& eps, const Tensor2& tgt,
                            std::span<const double> s_prime, VelocityDomain domain, double eps_norm) {
    require_same_shape(v, X, "fm_loss_for_velocity");
    std::vector<double> scale(s_prime.begin(), s_prime.end());
    if (domain == VelocityDomain::schedule) std::fill(scale.begin(), scale.end(), 1.0);
    const Tensor2 target = target_velocity(X, eps, tgt, scale);
    double acc = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        const double d = (v[i] - target[i]) * tgt[i];
        acc += d * d;
    }
    return acc / (mask_sum(tgt) + eps_norm);
}

Adam::Adam(const VelocityModel& model, double lr, double beta1, double beta2, double eps)
    : m_lr(lr), m_beta1(beta1), m_beta2(beta2), m_eps(eps) {
    for (const auto& p : model.parameters()) {
        m_m.emplace_back(p.rows(), p.cols());
        m_v.emplace_back(p.rows(), p.cols());
    }
}

void Adam::step(VelocityModel& model, const std::vector<Tensor2>& grads) {
    auto& params = model.parameters();
    if (grads.size() != params.size()) throw DimensionError("Adam::step: gradient count differs from parameters");
    ++m_step;
    const double bc1 = 1.0 - std::pow(m_beta1, static_cast<double>(m_step));
    const double bc2 = 1.0 - std::pow(m_beta2, static_cast<double>(m_step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        require_same_shape(params[i], grads[i], "Adam::step");
        double* p = params[i].data();
        double* m = m_m[i].data();
        double* v = m_v[i].data();
        const double* g = grads[i].data();
        for (std::size_t k = 0; k < params[i].size(); ++k) {
            m[k] = m_beta1 * m[k] + (1.0 - m_beta1) * g[k];
            v[k] = m_beta2 * v[k] + (1.0 - m_beta2) * g[k] * g[k];
            p[k] -= m_lr * (m[k] / bc1) / (std::sqrt(v[k] / bc2) + m_eps);
        }
    }
}

TrainResult train(const TrainingSet& data, const ModelConfig& model_config, const TrainConfig& config,
                  const Schedule& schedule, const EpochCallback& on_epoch) {
    ModelConfig mc = model_config;
    mc.features = data.values.cols();
    return train(VelocityModel::init(mc), data, config, schedule, on_epoch);
}

TrainResult train(VelocityModel initial, const TrainingSet& data, const TrainConfig& config,
                  const Schedule& schedule, const EpochCallback& on_epoch) {
    config.validate();
    const std::size_t n = data.values.rows();
    const std::size_t D = data.values.cols();
    if (n == 0) throw DataError("train: empty training split");
    if (initial.features() != D) throw DimensionError("train: model width differs from data width");
    if (data.column_feature.size() != D || data.numeric_mask.size() != D) {
        throw DimensionError("train: column metadata does not match data width");
    }
    if (data.observed.rows() != n) throw DimensionError("train: observed grid row count differs from data");

    TrainResult result{.model = initial};
    VelocityModel model = std::move(initial);
    Adam adam(model, config.lr, config.adam_beta1, config.adam_beta2, config.adam_eps);
    Rng rng(combine_seed(config.seed, "train"));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::vector<Tensor2> grads;
    std::size_t since_best = 0;
    bool have_best = false;

    for (std::size_t epoch = 0; epoch < config.max_epochs; ++epoch) {
        const MaskTriple feature_part = sample_train_partition(data.observed, config.cond_fraction,
                                                               config.tgt_fraction, combine_seed(config.seed, epoch));
        MaskTriple part{expand_columns(feature_part.obs, data.column_feature),
                        expand_columns(feature_part.cond, data.column_feature),
                        expand_columns(feature_part.tgt, data.column_feature)};
        if (!config.mask_aware) {
            part.tgt = part.obs | part.cond | part.tgt;
            part.obs = BinaryGrid(n, D);
            part.cond = BinaryGrid(n, D);
        }
        const TensorMasks masks = TensorMasks::from(part);
        std::shuffle(order.begin(), order.end(), rng.engine());

        LossTerms sum;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < n; start += config.batch_size) {
            const std::size_t stop = std::min(n, start + config.batch_size);
            const std::span<const std::size_t> rows(order.data() + start, stop - start);
            Batch batch{rows_of(data.values, rows),
                        TensorMasks{rows_of(masks.obs, rows), rows_of(masks.cond, rows), rows_of(masks.tgt, rows)}};
            if (mask_sum(batch.masks.tgt) == 0.0) {
                log_warning("epoch " + std::to_string(epoch) + ": minibatch without target cells skipped");
                ++result.skipped_batches;
                continue;
            }
            const LossTerms terms = loss_total(model, batch, config, schedule, data.numeric_mask, rng, &grads);
            if (!std::isfinite(terms.total)) {
                std::ostringstream msg;
                msg << "training diverged: loss is " << terms.total << " at epoch " << epoch << ", step "
                    << adam.steps() << " (lr " << config.lr << ")";
                throw NumericError(msg.str());
            }
            adam.step(model, grads);
            sum.fm += terms.fm;
            sum.stab += terms.stab;
            sum.cons += terms.cons;
            sum.total += terms.total;
            ++batches;
        }
        if (batches == 0) continue;
        const double k = static_cast<double>(batches);
        const LossTerms mean{sum.fm / k, sum.stab / k, sum.cons / k, sum.total / k};
        result.history.push_back({epoch, mean});
        if (on_epoch) on_epoch(epoch, model, mean);

        if (!have_best || mean.total < result.best_loss * (1.0 - config.min_rel_improvement)) {
            have_best = true;
            result.best_loss = mean.total;
            result.best_epoch = epoch;
            result.model = model;
            since_best = 0;
        } else if (++since_best >= config.patience) {
            log_info("early stop at epoch " + std::to_string(epoch));
            break;
        }
    }
    return result;
}

void write_loss_history(const std::filesystem::path& path, const std::vector<EpochRecord>& history) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open for writing: " + path.string());
    out << "epoch,L_FM,R_stab,R_cons,total\n" << std::setprecision(17);
    for (const auto& e : history) {
        out << e.epoch << ',' << e.mean.fm << ',' << e.mean.stab << ',' << e.mean.cons << ',' << e.mean.total << '\n';
    }
}

}  // namespace macfm
