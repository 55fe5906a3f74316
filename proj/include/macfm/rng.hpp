#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace macfm {

/// splitmix64 finalizer; used to derive independent stream seeds.
constexpr std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t combine_seed(std::uint64_t seed, std::uint64_t value) {
    return mix64(seed ^ mix64(value + 0x632be59bd9b4e019ULL));
}

constexpr std::uint64_t combine_seed(std::uint64_t seed, std::string_view tag) {
    std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
    for (char c : tag) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return combine_seed(seed, h);
}

using Engine = std::mt19937_64;

/// Thin wrapper so every module draws the same way from a seeded engine.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : m_engine(mix64(seed)) {}

    double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(m_engine); }
    double normal() { return m_normal(m_engine); }
    std::size_t index(std::size_t n) {
        return std::uniform_int_distribution<std::size_t>(0, n - 1)(m_engine);
    }
    Engine& engine() { return m_engine; }

private:
    Engine m_engine;
    std::normal_distribution<double> m_normal{0.0, 1.0};
};

}  // namespace macfm
