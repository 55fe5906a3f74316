#include "macfm/synthgen.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <cmath>

#include "macfm/errors.hpp"
#include "macfm/rng.hpp"

namespace macfm {

Covariance parse_covariance(std::string_view name) {
    if (name == "identity") return Covariance::identity;
    if (name == "ar") return Covariance::ar;
    if (name == "low_rank") return Covariance::low_rank;
    throw ConfigError("unknown covariance structure '" + std::string(name) + "'");
}

std::string to_string(Covariance c) {
    switch (c) {
        case Covariance::identity:
            return "identity";
        case Covariance::ar:
            return "ar";
        case Covariance::low_rank:
            return "low_rank";
    }
    return "identity";
}

Tensor2 covariance_matrix(const SynthSpec& spec) {
    const std::size_t d = spec.d_numeric;
    Tensor2 sigma(d, d);
    switch (spec.covariance) {
        case Covariance::identity:
            for (std::size_t i = 0; i < d; ++i) sigma(i, i) = 1.0;
            break;
        case Covariance::ar:
            for (std::size_t i = 0; i < d; ++i)
                for (std::size_t j = 0; j < d; ++j)
                    sigma(i, j) = std::pow(spec.rho, static_cast<double>(i > j ? i - j : j - i));
            break;
        case Covariance::low_rank: {
            // B B^T / r + 0.1 I, rescaled to unit diagonal.
            Rng rng(combine_seed(spec.seed, "low-rank"));
            Tensor2 b(d, spec.rank);
            for (double& x : b.flat()) x = rng.normal();
            for (std::size_t i = 0; i < d; ++i) {
                for (std::size_t j = 0; j < d; ++j) {
                    double acc = 0.0;
                    for (std::size_t k = 0; k < spec.rank; ++k) acc += b(i, k) * b(j, k);
                    sigma(i, j) = acc / static_cast<double>(std::max<std::size_t>(spec.rank, 1)) + (i == j ? 0.1 : 0.0);
                }
            }
            std::vector<double> scale(d);
            for (std::size_t i = 0; i < d; ++i) scale[i] = 1.0 / std::sqrt(sigma(i, i));
            for (std::size_t i = 0; i < d; ++i)
                for (std::size_t j = 0; j < d; ++j) sigma(i, j) *= scale[i] * scale[j];
            break;
        }
    }
    return sigma;
}

RawTable generate(const SynthSpec& spec) {
    if (spec.n == 0 || spec.d_numeric == 0) throw ConfigError("synth: n and d_numeric must be >= 1");
    if (spec.d_categorical > 0 && spec.n_categories < 2) throw ConfigError("synth: n_categories must be >= 2");
    if (spec.covariance == Covariance::low_rank && spec.rank == 0) throw ConfigError("synth: rank must be >= 1");

    if (spec.covariance == Covariance::ar && !(std::abs(spec.rho) < 1.0)) {
        throw ConfigError("synth: AR covariance needs |rho| < 1 to be positive definite");
    }

    const std::size_t d = spec.d_numeric;
    const Tensor2 sigma = covariance_matrix(spec);
    Eigen::MatrixXd s(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j) s(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = sigma(i, j);
    const Eigen::LLT<Eigen::MatrixXd> llt(s);
    if (llt.info() != Eigen::Success) {
        throw ConfigError("synth: covariance matrix is not positive definite");
    }
    const Eigen::MatrixXd L = llt.matrixL();

    Rng rng(combine_seed(spec.seed, "synth"));
    RawTable table;
    table.rows = spec.n;
    for (std::size_t j = 0; j < d; ++j) {
        RawColumn col{.name = "x" + std::to_string(j), .role = ColumnRole::numeric};
        col.numbers.resize(spec.n);
        col.missing.assign(spec.n, 0);
        table.columns.push_back(std::move(col));
    }

    std::vector<Tensor2> links;
    for (std::size_t c = 0; c < spec.d_categorical; ++c) {
        Tensor2 w(spec.n_categories, d);
        for (double& x : w.flat()) x = spec.link_scale * rng.normal() / std::sqrt(static_cast<double>(d));
        links.push_back(std::move(w));
        RawColumn col{.name = "cat" + std::to_string(c), .role = ColumnRole::categorical};
        col.labels.resize(spec.n);
        col.missing.assign(spec.n, 0);
        table.columns.push_back(std::move(col));
    }

    Eigen::VectorXd z(static_cast<Eigen::Index>(d));
    std::vector<double> logits(spec.n_categories);
    for (std::size_t r = 0; r < spec.n; ++r) {
        for (std::size_t j = 0; j < d; ++j) z(static_cast<Eigen::Index>(j)) = rng.normal();
        const Eigen::VectorXd x = L * z;
        for (std::size_t j = 0; j < d; ++j) table.columns[j].numbers[r] = x(static_cast<Eigen::Index>(j));

        for (std::size_t c = 0; c < spec.d_categorical; ++c) {
            double top = -1e300;
            for (std::size_t k = 0; k < spec.n_categories; ++k) {
                double acc = 0.0;
                for (std::size_t j = 0; j < d; ++j) acc += links[c](k, j) * x(static_cast<Eigen::Index>(j));
                logits[k] = acc;
                top = std::max(top, acc);
            }
            double total = 0.0;
            for (double& l : logits) total += (l = std::exp(l - top));
            double u = rng.uniform() * total;
            std::size_t pick = 0;
            while (pick + 1 < spec.n_categories && (u -= logits[pick]) > 0.0) ++pick;
            table.columns[d + c].labels[r] = "c" + std::to_string(pick);
        }
    }
    return table;
}

}  // namespace macfm
