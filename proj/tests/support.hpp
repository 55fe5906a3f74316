#pragma once

// Helpers shared by the unit and acceptance tests: a loop-based reference
// implementation of the velocity model and the training loss, written
// independently of the tape so it can serve as an oracle.

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "macfm/model.hpp"
#include "macfm/rng.hpp"
#include "macfm/schedule.hpp"
#include "macfm/tensor.hpp"
#include "macfm/training.hpp"

namespace testing {

using macfm::Tensor2;

inline double silu(double x) { return x / (1.0 + std::exp(-x)); }

inline Tensor2 random_tensor(std::size_t rows, std::size_t cols, std::uint64_t seed, double scale = 1.0) {
    macfm::Rng rng(seed);
    Tensor2 out(rows, cols);
    for (double& v : out.flat()) v = scale * rng.normal();
    return out;
}

/// Tiny model whose every parameter (including the zero-initialized head) is random.
inline macfm::VelocityModel random_model(std::size_t D, std::size_t d_model, std::size_t n_blocks, std::size_t pe_dim,
                                         std::uint64_t seed, double scale = 0.5) {
    auto model = macfm::VelocityModel::init({D, d_model, n_blocks, pe_dim, seed});
    macfm::Rng rng(seed + 1);
    for (auto& p : model.parameters())
        for (double& v : p.flat()) v = scale * rng.normal();
    return model;
}

/// y = silu?(x W + b) for one row.
inline std::vector<double> dense(const std::vector<double>& x, const Tensor2& W, const Tensor2& b, bool act) {
    std::vector<double> y(W.cols());
    for (std::size_t j = 0; j < W.cols(); ++j) {
        double acc = b(0, j);
        for (std::size_t i = 0; i < W.rows(); ++i) acc += x[i] * W(i, j);
        y[j] = act ? silu(acc) : acc;
    }
    return y;
}

/// Row-by-row forward pass read straight from the named parameter layout.
inline Tensor2 reference_forward(const macfm::VelocityModel& model, const Tensor2& x, std::span<const double> t) {
    const auto& p = model.parameters();
    const auto& c = model.config();
    Tensor2 out(x.rows(), x.cols());
    for (std::size_t r = 0; r < x.rows(); ++r) {
        std::vector<double> pe(c.pe_dim);
        for (std::size_t i = 0; i < c.pe_dim / 2; ++i) {
            const double w = std::pow(10000.0, -2.0 * double(i) / double(c.pe_dim));
            pe[2 * i] = std::sin(w * t[r]);
            pe[2 * i + 1] = std::cos(w * t[r]);
        }
        const std::vector<double> row(x.row_span(r).begin(), x.row_span(r).end());
        std::vector<double> h = dense(row, p[0], p[1], false);
        const std::vector<double> cond = dense(dense(pe, p[2], p[3], true), p[4], p[5], false);
        for (std::size_t j = 0; j < h.size(); ++j) h[j] += cond[j];
        std::size_t slot = 6;
        for (std::size_t b = 0; b < c.n_blocks; ++b, slot += 2) h = dense(h, p[slot], p[slot + 1], true);
        h = dense(h, p[slot], p[slot + 1], true);
        const std::vector<double> v = dense(h, p[slot + 2], p[slot + 3], false);
        for (std::size_t j = 0; j < v.size(); ++j) out(r, j) = v[j];
    }
    return out;
}

struct ScalarLoss {
    double fm = 0.0, stab = 0.0, cons = 0.0, total = 0.0;
};

/// Three-term objective evaluated cell by cell with the reference forward pass.
inline ScalarLoss reference_loss(const macfm::VelocityModel& model, const macfm::Batch& batch,
                                 const macfm::BatchNoise& noise, const macfm::TrainConfig& cfg,
                                 const macfm::Schedule& schedule, std::span<const std::uint8_t> numeric) {
    const auto& m = batch.masks;
    const std::size_t n = batch.X.rows();
    const std::size_t D = batch.X.cols();
    Tensor2 X = batch.X;
    Tensor2 xt(n, D), vstar(n, D), xp(n, D);
    double n_tgt = 0.0, n_cond = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
        const double s = schedule.eval(noise.t[r]);
        const double sp = schedule.deriv(noise.t[r]);
        for (std::size_t c = 0; c < D; ++c) {
            const bool on_noise = (m.obs(r, c) == 1.0 || (cfg.noise_on_cond && m.cond(r, c) == 1.0)) && numeric[c];
            if (on_noise) X(r, c) += cfg.sigma_in * (1.0 - s) * noise.xi_in(r, c);
            const double e = noise.eps(r, c);
            if (m.tgt(r, c) == 1.0) {
                xt(r, c) = s * X(r, c) + (1.0 - s) * e;
                vstar(r, c) = sp * (X(r, c) - e);
                n_tgt += 1.0;
            } else if (m.obs(r, c) == 1.0 || m.cond(r, c) == 1.0) {
                xt(r, c) = X(r, c);
            }
            if (m.cond(r, c) == 1.0) n_cond += 1.0;
            xp(r, c) = xt(r, c) + cfg.eta_cons * (1.0 - s) * noise.xi_cons(r, c);
        }
    }
    const Tensor2 v = reference_forward(model, xt, noise.t);
    const Tensor2 vp = reference_forward(model, xp, noise.t);
    ScalarLoss L;
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < D; ++c) {
            if (m.tgt(r, c) == 1.0) {
                L.fm += (v(r, c) - vstar(r, c)) * (v(r, c) - vstar(r, c));
                L.cons += (vp(r, c) - v(r, c)) * (vp(r, c) - v(r, c));
            }
            if (m.cond(r, c) == 1.0) L.stab += v(r, c) * v(r, c);
        }
    }
    L.fm /= n_tgt + cfg.eps_norm;
    L.cons /= n_tgt + cfg.eps_norm;
    L.stab /= n_cond + cfg.eps_norm;
    L.total = L.fm + cfg.lambda_stab * L.stab + (cfg.lambda_cons > 0.0 ? cfg.lambda_cons * L.cons : 0.0);
    return L;
}

/// max |a - b| / max(|a|, |b|, floor) over paired entries.
inline double max_rel_error(std::span<const double> a, std::span<const double> b, double floor = 1e-6) {
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double denom = std::max({std::abs(a[i]), std::abs(b[i]), floor});
        worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
    }
    return worst;
}

}  // namespace testing
