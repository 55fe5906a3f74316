#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "macfm/data.hpp"
#include "macfm/errors.hpp"
#include "macfm/synthgen.hpp"
#include "macfm/training.hpp"
#include "support.hpp"

using namespace macfm;

namespace {

TensorMasks masks_2x3() {
    return TensorMasks{Tensor2{{1, 0, 0}, {0, 0, 1}}, Tensor2{{0, 1, 0}, {0, 0, 0}}, Tensor2{{0, 0, 1}, {1, 0, 0}}};
}

/// Random batch with a fixed random partition; cell (r, c) with r+c divisible by 5 is truly missing.
Batch random_batch(std::size_t n, std::size_t D, std::uint64_t seed) {
    Rng rng(seed);
    Batch b{testing::random_tensor(n, D, seed + 1), {Tensor2(n, D), Tensor2(n, D), Tensor2(n, D)}};
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < D; ++c) {
            if ((r + c) % 5 == 0) {
                b.X(r, c) = 0.0;
                continue;
            }
            const double u = rng.uniform();
            (u < 0.3 ? b.masks.cond : u < 0.6 ? b.masks.tgt : b.masks.obs)(r, c) = 1.0;
        }
    b.masks.tgt(0, 0) = 1.0;
    b.masks.obs(0, 0) = b.masks.cond(0, 0) = 0.0;
    return b;
}

TrainingSet synthetic_set(std::size_t n, std::uint64_t seed) {
    SynthSpec spec;
    spec.n = n;
    spec.seed = seed;
    const DatasetView view = fit_transform(generate(spec), seed);
    return TrainingSet{select_rows(view.encoded, view.split.train), view.observed.select_rows(view.split.train),
                       view.schema.feature_of_column(), view.schema.numeric_mask()};
}

}  // namespace

TEST_CASE("conditional path endpoints") {
    const Tensor2 X{{1, 2, 3}, {4, 5, 6}};
    const Tensor2 eps{{-1, -2, -3}, {-4, -5, -6}};
    const TensorMasks m = masks_2x3();
    const Tensor2 at1 = build_path(X, m, eps, std::vector<double>{1.0, 1.0});
    const Tensor2 at0 = build_path(X, m, eps, std::vector<double>{0.0, 0.0});
    const Tensor2 mid = build_path(X, m, eps, std::vector<double>{0.25, 0.5});
    CHECK(at1(0, 2) == 3.0);
    CHECK(at0(0, 2) == -3.0);
    CHECK(at0(1, 0) == -4.0);
    CHECK(mid(0, 2) == doctest::Approx(0.25 * 3 - 0.75 * 3));
    for (const Tensor2* p : {&at0, &at1, &mid}) {
        CHECK((*p)(0, 1) == 2.0);  // conditioning
        CHECK((*p)(0, 0) == 1.0);  // observed
        CHECK((*p)(1, 1) == 0.0);  // outside every mask
    }
    CHECK_THROWS_AS(build_path(X, m, Tensor2(2, 2), std::vector<double>{0, 0}), DimensionError);
}

TEST_CASE("target velocity") {
    const Tensor2 X{{1, 2, 3}, {4, 5, 6}};
    const Tensor2 eps{{0, 1, 1}, {1, 1, 1}};
    const TensorMasks m = masks_2x3();
    const Tensor2 lin = target_velocity(X, eps, m.tgt, std::vector<double>{1.0, 1.0});
    CHECK(lin(0, 2) == 2.0);
    CHECK(lin(1, 0) == 3.0);
    CHECK(lin(0, 0) == 0.0);
    CHECK(target_velocity(X, X, m.tgt, std::vector<double>{1.0, 1.0}) == Tensor2(2, 3));
    const double sp = Schedule::cosine().deriv(0.5);
    const Tensor2 cos = target_velocity(X, eps, m.tgt, std::vector<double>{sp, sp});
    CHECK(cos(0, 2) == doctest::Approx(std::numbers::pi / 2 * 2.0).epsilon(1e-15));
}

TEST_CASE("loss terms match an independent scalar implementation") {
    const auto model = testing::random_model(3, 8, 1, 4, 5, 0.4);
    const Batch batch{Tensor2{{0.5, -1.0, 2.0}, {1.5, 0.0, -0.5}}, masks_2x3()};
    TrainConfig cfg;
    cfg.lambda_stab = 0.7;
    cfg.lambda_cons = 0.3;
    cfg.eta_cons = 0.2;
    cfg.sigma_in = 0.1;
    const std::vector<std::uint8_t> numeric{1, 1, 0};
    for (const Schedule& sched : {Schedule::linear(), Schedule::power(2.0), Schedule::cosine()}) {
        Rng rng(3);
        const BatchNoise noise = sample_noise(2, 3, cfg, rng);
        const LossTerms got = loss_total(model, batch, noise, cfg, sched, numeric);
        const testing::ScalarLoss want = testing::reference_loss(model, batch, noise, cfg, sched, numeric);
        CHECK(std::abs(got.fm - want.fm) < 1e-12);
        CHECK(std::abs(got.stab - want.stab) < 1e-12);
        CHECK(std::abs(got.cons - want.cons) < 1e-12);
        CHECK(std::abs(got.total - want.total) < 1e-12);
        CHECK(got.stab > 0.0);
        CHECK(got.cons > 0.0);
    }
}

TEST_CASE("zero-initialized model gives the closed-form flow-matching loss") {
    const auto model = VelocityModel::init({3, 8, 1, 4, 1});
    const Batch batch{Tensor2{{0.5, -1.0, 2.0}, {1.5, 0.0, -0.5}}, masks_2x3()};
    TrainConfig cfg;
    cfg.sigma_in = 0.0;
    Rng rng(8);
    const BatchNoise noise = sample_noise(2, 3, cfg, rng);
    const LossTerms L = loss_total(model, batch, noise, cfg, Schedule::linear(), std::vector<std::uint8_t>{1, 1, 1});
    double expect = 0.0;
    for (std::size_t i = 0; i < 6; ++i) {
        const double d = (batch.X[i] - noise.eps[i]) * batch.masks.tgt[i];
        expect += d * d;
    }
    expect /= 2.0 + cfg.eps_norm;
    CHECK(L.fm == doctest::Approx(expect).epsilon(1e-14));
    CHECK(L.stab == 0.0);
    CHECK(L.cons == 0.0);
}

TEST_CASE("objectives in t and s coordinates vanish at their oracle velocities") {
    const Tensor2 X = testing::random_tensor(6, 4, 1);
    const Tensor2 eps = testing::random_tensor(6, 4, 2);
    const Tensor2 tgt = random_batch(6, 4, 3).masks.tgt;
    const Schedule sched = Schedule::cosine();
    std::vector<double> sp;
    for (int r = 0; r < 6; ++r) sp.push_back(sched.deriv(0.1 + 0.15 * r));
    const Tensor2 v_time = target_velocity(X, eps, tgt, sp);
    const Tensor2 v_sched = target_velocity(X, eps, tgt, std::vector<double>(6, 1.0));
    CHECK(fm_loss_for_velocity(v_time, X, eps, tgt, sp, VelocityDomain::time) < 1e-12);
    CHECK(fm_loss_for_velocity(v_sched, X, eps, tgt, sp, VelocityDomain::schedule) < 1e-12);
    CHECK(fm_loss_for_velocity(v_sched, X, eps, tgt, sp, VelocityDomain::time) > 1e-3);
}

TEST_CASE("full loss gradient matches finite differences") {
    auto model = testing::random_model(3, 8, 1, 4, 40, 0.5);
    const Batch batch = random_batch(4, 3, 41);
    TrainConfig cfg;
    cfg.lambda_stab = 0.5;
    cfg.lambda_cons = 0.5;
    cfg.eta_cons = 0.3;
    Rng rng(42);
    const BatchNoise noise = sample_noise(4, 3, cfg, rng);
    const std::vector<std::uint8_t> numeric{1, 1, 0};
    std::vector<Tensor2> grads;
    loss_total(model, batch, noise, cfg, Schedule::cosine(), numeric, &grads);

    std::vector<double> analytic, fd;
    for (const auto& g : grads) analytic.insert(analytic.end(), g.flat().begin(), g.flat().end());
    std::vector<double> flat = model.flat_parameters();
    const double h = 1e-6;
    for (std::size_t i = 0; i < flat.size(); ++i) {
        const double keep = flat[i];
        flat[i] = keep + h;
        model.set_flat_parameters(flat);
        const double fp = loss_total(model, batch, noise, cfg, Schedule::cosine(), numeric).total;
        flat[i] = keep - h;
        model.set_flat_parameters(flat);
        const double fm = loss_total(model, batch, noise, cfg, Schedule::cosine(), numeric).total;
        flat[i] = keep;
        fd.push_back((fp - fm) / (2 * h));
    }
    CHECK(testing::max_rel_error(analytic, fd, 1e-5) < 1e-4);
}

TEST_CASE("loss is invariant to permuting batch rows") {
    const auto model = testing::random_model(4, 8, 1, 4, 50);
    const Batch batch = random_batch(5, 4, 51);
    TrainConfig cfg;
    Rng rng(52);
    const BatchNoise noise = sample_noise(5, 4, cfg, rng);
    const std::vector<std::uint8_t> numeric(4, 1);
    const LossTerms a = loss_total(model, batch, noise, cfg, Schedule::linear(), numeric);

    const std::vector<std::size_t> perm{3, 0, 4, 2, 1};
    const auto permute = [&](const Tensor2& m) {
        Tensor2 out(m.rows(), m.cols());
        for (std::size_t i = 0; i < perm.size(); ++i)
            for (std::size_t c = 0; c < m.cols(); ++c) out(i, c) = m(perm[i], c);
        return out;
    };
    const Batch pb{permute(batch.X), {permute(batch.masks.obs), permute(batch.masks.cond), permute(batch.masks.tgt)}};
    BatchNoise pn{{}, permute(noise.eps), permute(noise.xi_in), permute(noise.xi_cons)};
    for (std::size_t i : perm) pn.t.push_back(noise.t[i]);
    const LossTerms b = loss_total(model, pb, pn, cfg, Schedule::linear(), numeric);
    CHECK(a.total == doctest::Approx(b.total).epsilon(1e-13));
    CHECK(a.stab == doctest::Approx(b.stab).epsilon(1e-13));
    CHECK(a.cons == doctest::Approx(b.cons).epsilon(1e-13));
}

TEST_CASE("batches without targets are rejected") {
    const auto model = VelocityModel::init({3, 8, 1, 4, 1});
    Batch batch{Tensor2(2, 3), masks_2x3()};
    batch.masks.tgt = Tensor2(2, 3);
    Rng rng(1);
    CHECK_THROWS_AS(loss_total(model, batch, TrainConfig{}, Schedule::linear(), std::vector<std::uint8_t>(3, 1), rng),
                    DataError);
}

TEST_CASE("per-batch time option shares t across rows") {
    TrainConfig cfg;
    cfg.t_per_example = false;
    Rng rng(4);
    const BatchNoise n = sample_noise(6, 2, cfg, rng);
    for (double t : n.t) CHECK(t == n.t[0]);
    cfg.t_per_example = true;
    cfg.t_dist = TimeDistribution::beta;
    const BatchNoise b = sample_noise(2000, 1, cfg, rng);
    double mean = 0.0;
    for (double t : b.t) {
        CHECK(t > 0.0);
        CHECK(t < 1.0);
        mean += t;
    }
    CHECK(mean / 2000 == doctest::Approx(0.5).epsilon(0.05));
}

TEST_CASE("config validation") {
    TrainConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    cfg.cond_fraction = 0.6;
    cfg.tgt_fraction = 0.5;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = TrainConfig{};
    cfg.lambda_stab = -1.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = TrainConfig{};
    cfg.patience = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("zero learning rate leaves parameters unchanged") {
    const TrainingSet set = synthetic_set(300, 2);
    TrainConfig cfg;
    cfg.lr = 0.0;
    cfg.lambda_stab = cfg.lambda_cons = 0.0;
    cfg.max_epochs = 1;
    cfg.patience = 1;
    const auto init = testing::random_model(set.values.cols(), 16, 1, 8, 3);
    const TrainResult r = train(init, set, cfg, Schedule::linear());
    CHECK(r.model == init);
    CHECK(r.history.size() == 1);
}

TEST_CASE("training is deterministic and reduces the loss") {
    SynthSpec spec;
    spec.n = 2000;
    spec.d_categorical = 0;
    spec.seed = 5;
    const DatasetView view = fit_transform(generate(spec), 5);
    const TrainingSet set{select_rows(view.encoded, view.split.train), view.observed.select_rows(view.split.train),
                          view.schema.feature_of_column(), view.schema.numeric_mask()};
    TrainConfig cfg;
    cfg.max_epochs = 30;
    cfg.patience = 30;
    cfg.seed = 17;
    const ModelConfig mc{0, 64, 2, 16, 9};
    const TrainResult a = train(set, mc, cfg, Schedule::linear());
    const TrainResult b = train(set, mc, cfg, Schedule::linear());
    CHECK(a.best_loss == b.best_loss);
    CHECK(a.model == b.model);
    REQUIRE(a.history.size() == 30);
    // A zero-output model scores E(X - eps)^2 = E X^2 + 1 on standardized targets. The
    // Gaussian posterior floor for this data sits near half of that, so 40% is the bar.
    double second_moment = 0.0;
    for (double v : set.values.flat()) second_moment += v * v;
    const double initial = second_moment / double(set.values.size()) + 1.0;
    CHECK(a.best_loss <= 0.6 * initial);
    CHECK(a.best_loss <= a.history.front().mean.total);

    const auto path = std::filesystem::temp_directory_path() / "macfm_test_history.csv";
    write_loss_history(path, a.history);
    std::ifstream in(path);
    std::string header;
    std::getline(in, header);
    CHECK(header == "epoch,L_FM,R_stab,R_cons,total");
    std::filesystem::remove(path);
}

TEST_CASE("stability penalty shrinks velocity on conditioning cells") {
    const TrainingSet set = synthetic_set(600, 6);
    TrainConfig cfg;
    cfg.max_epochs = 15;
    cfg.patience = 5;
    cfg.seed = 3;
    const ModelConfig mc{0, 32, 1, 8, 4};
    cfg.lambda_stab = 0.0;
    const TrainResult free_run = train(set, mc, cfg, Schedule::linear());
    cfg.lambda_stab = 1000.0;
    const TrainResult held = train(set, mc, cfg, Schedule::linear());

    const Batch batch = random_batch(200, set.values.cols(), 77);
    Rng rng(5);
    const BatchNoise noise = sample_noise(200, set.values.cols(), cfg, rng);
    const auto cond_norm = [&](const VelocityModel& m) {
        std::vector<double> s(noise.t.begin(), noise.t.end());
        const Tensor2 xt = build_path(batch.X, batch.masks, noise.eps, s);
        const Tensor2 v = m.forward(xt, noise.t);
        double acc = 0.0;
        for (std::size_t i = 0; i < v.size(); ++i) acc += std::abs(v[i]) * batch.masks.cond[i];
        return acc;
    };
    CHECK(cond_norm(held.model) < cond_norm(free_run.model));
}

TEST_CASE("divergence reports step and learning rate") {
    const TrainingSet set = synthetic_set(300, 7);
    TrainConfig cfg;
    cfg.lr = 1e200;
    cfg.max_epochs = 5;
    cfg.patience = 5;
    try {
        train(set, ModelConfig{0, 16, 1, 8, 1}, cfg, Schedule::linear());
        FAIL("expected divergence");
    } catch (const NumericError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("step") != std::string::npos);
        CHECK(msg.find("lr") != std::string::npos);
    }
}

TEST_CASE("adam matches the textbook update") {
    auto model = VelocityModel::init({1, 1, 1, 2, 0});
    for (auto& p : model.parameters()) p.fill(0.5);
    std::vector<Tensor2> grads;
    for (const auto& p : model.parameters()) grads.emplace_back(p.rows(), p.cols(), 2.0);
    Adam adam(model, 0.1, 0.9, 0.999, 1e-8);
    adam.step(model, grads);
    // First step: m_hat = g, v_hat = g^2, update = lr * g / (|g| + eps).
    CHECK(model.parameters()[0](0, 0) == doctest::Approx(0.5 - 0.1 * 2.0 / (2.0 + 1e-8)).epsilon(1e-14));
    CHECK(adam.steps() == 1);
}
