#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include "macfm/data.hpp"

namespace macfm {

enum class Covariance { identity, ar, low_rank };

Covariance parse_covariance(std::string_view name);
std::string to_string(Covariance c);

/// Gaussian numeric block plus categorical columns drawn from a softmax of
/// linear functions of the numerics. Defaults are the canonical benchmark set.
struct SynthSpec {
    std::size_t n = 2000;
    std::size_t d_numeric = 8;
    std::size_t d_categorical = 2;
    std::size_t n_categories = 3;
    Covariance covariance = Covariance::ar;
    double rho = 0.8;
    std::size_t rank = 2;
    /// Scale of the categorical logit weights; larger means sharper dependence.
    double link_scale = 1.5;
    std::uint64_t seed = 0;
};

Tensor2 covariance_matrix(const SynthSpec& spec);
/// Complete table: numeric columns x0.., categorical columns cat0.. with labels c0...
RawTable generate(const SynthSpec& spec);

}  // namespace macfm
