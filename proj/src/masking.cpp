#include "macfm/masking.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "macfm/errors.hpp"
#include "macfm/rng.hpp"

namespace macfm {
namespace {

constexpr char kMaskMagic[8] = {'M', 'A', 'C', 'F', 'M', 'M', 'S', 'K'};
constexpr int kMaskVersion = 1;

void check_rate(double rate) {
    if (!(rate > 0.0 && rate < 1.0)) {
        throw ConfigError("missing rate " + std::to_string(rate) + " must lie in (0, 1)");
    }
}

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

/// Intercept b with mean(sigmoid(logits + b)) = rate, by bisection.
double calibrate_intercept(const std::vector<double>& logits, double rate) {
    const auto mean_prob = [&](double b) {
        double acc = 0.0;
        for (double z : logits) acc += sigmoid(z + b);
        return acc / static_cast<double>(logits.size());
    };
    double lo = -50.0;
    double hi = 50.0;
    for (int it = 0; it < 200 && hi - lo > 1e-12; ++it) {
        const double mid = 0.5 * (lo + hi);
        (mean_prob(mid) < rate ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

void repair_full_rows(BinaryGrid& bits, Rng& rng) {
    const std::size_t d = bits.cols();
    for (std::size_t r = 0; r < bits.rows(); ++r) {
        if (bits.count_row(r) == d) bits.set(r, rng.index(d), false);
    }
}

MissMask make_mask(std::size_t n, std::size_t d, Mechanism mech, double rate, std::uint64_t seed) {
    return MissMask{.bits = BinaryGrid(n, d),
                    .mechanism = mech,
                    .nominal_rate = rate,
                    .seed = seed,
                    .eligible = std::vector<std::uint8_t>(d, 1)};
}

void fill_mcar_column(MissMask& mask, std::size_t c, double rate, Rng& rng) {
    for (std::size_t r = 0; r < mask.rows(); ++r) mask.bits.set(r, c, rng.uniform() < rate);
}

}  // namespace

std::size_t BinaryGrid::count() const {
    return static_cast<std::size_t>(std::count(m_bits.begin(), m_bits.end(), std::uint8_t{1}));
}

std::size_t BinaryGrid::count_row(std::size_t r) const {
    const auto first = m_bits.begin() + static_cast<std::ptrdiff_t>(r * m_cols);
    return static_cast<std::size_t>(std::count(first, first + static_cast<std::ptrdiff_t>(m_cols), std::uint8_t{1}));
}

BinaryGrid BinaryGrid::negated() const {
    BinaryGrid out = *this;
    for (auto& b : out.m_bits) b = b ? 0 : 1;
    return out;
}

BinaryGrid BinaryGrid::select_rows(const std::vector<std::size_t>& rows) const {
    BinaryGrid out(rows.size(), m_cols);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        std::copy_n(m_bits.begin() + static_cast<std::ptrdiff_t>(rows[i] * m_cols), m_cols,
                    out.m_bits.begin() + static_cast<std::ptrdiff_t>(i * m_cols));
    }
    return out;
}

Tensor2 BinaryGrid::to_tensor() const {
    Tensor2 out(m_rows, m_cols);
    for (std::size_t i = 0; i < m_bits.size(); ++i) out[i] = m_bits[i];
    return out;
}

BinaryGrid operator&(const BinaryGrid& a, const BinaryGrid& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) throw DimensionError("BinaryGrid &: shape mismatch");
    BinaryGrid out(a.rows(), a.cols());
    for (std::size_t r = 0; r < a.rows(); ++r)
        for (std::size_t c = 0; c < a.cols(); ++c) out.set(r, c, a(r, c) && b(r, c));
    return out;
}

BinaryGrid operator|(const BinaryGrid& a, const BinaryGrid& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) throw DimensionError("BinaryGrid |: shape mismatch");
    BinaryGrid out(a.rows(), a.cols());
    for (std::size_t r = 0; r < a.rows(); ++r)
        for (std::size_t c = 0; c < a.cols(); ++c) out.set(r, c, a(r, c) || b(r, c));
    return out;
}

BinaryGrid expand_columns(const BinaryGrid& feature_grid, const std::vector<std::size_t>& column_feature) {
    BinaryGrid out(feature_grid.rows(), column_feature.size());
    for (std::size_t c = 0; c < column_feature.size(); ++c) {
        if (column_feature[c] >= feature_grid.cols()) throw DimensionError("expand_columns: feature index out of range");
    }
    for (std::size_t r = 0; r < out.rows(); ++r)
        for (std::size_t c = 0; c < column_feature.size(); ++c) out.set(r, c, feature_grid(r, column_feature[c]));
    return out;
}

Mechanism parse_mechanism(std::string_view name) {
    if (name == "MCAR" || name == "mcar") return Mechanism::mcar;
    if (name == "MAR" || name == "mar") return Mechanism::mar;
    if (name == "MNAR" || name == "mnar") return Mechanism::mnar;
    throw ConfigError("unknown missingness mechanism '" + std::string(name) + "'");
}

std::string to_string(Mechanism m) {
    switch (m) {
        case Mechanism::mcar:
            return "MCAR";
        case Mechanism::mar:
            return "MAR";
        case Mechanism::mnar:
            return "MNAR";
    }
    return "MCAR";
}

double MissMask::realized_rate() const {
    std::size_t missing = 0;
    std::size_t cells = 0;
    for (std::size_t c = 0; c < cols(); ++c) {
        if (!eligible[c]) continue;
        cells += rows();
        for (std::size_t r = 0; r < rows(); ++r) missing += bits(r, c) ? 1 : 0;
    }
    return cells == 0 ? 0.0 : static_cast<double>(missing) / static_cast<double>(cells);
}

MissMask gen_mcar(std::size_t n, std::size_t d, double rate, std::uint64_t seed) {
    check_rate(rate);
    if (d == 0) throw ConfigError("gen_mcar: feature count must be >= 1");
    MissMask mask = make_mask(n, d, Mechanism::mcar, rate, seed);
    Rng rng(combine_seed(seed, "mcar"));
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < d; ++c) mask.bits.set(r, c, rng.uniform() < rate);
    repair_full_rows(mask.bits, rng);
    return mask;
}

MissMask gen_mar(const Tensor2& data, double rate, std::uint64_t seed) {
    check_rate(rate);
    const std::size_t n = data.rows();
    const std::size_t d = data.cols();
    if (d < 2) throw ConfigError("gen_mar: needs at least 2 columns, got " + std::to_string(d));

    MissMask mask = make_mask(n, d, Mechanism::mar, rate, seed);
    Rng rng(combine_seed(seed, "mar"));

    std::vector<std::size_t> order(d);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng.engine());
    const auto n_drivers = static_cast<std::size_t>(std::ceil(0.3 * static_cast<double>(d)));
    std::vector<std::size_t> drivers(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_drivers));
    std::sort(drivers.begin(), drivers.end());
    for (std::size_t c : drivers) mask.eligible[c] = 0;

    std::vector<double> logits(n);
    for (std::size_t c = 0; c < d; ++c) {
        if (!mask.eligible[c]) continue;
        std::vector<double> w(drivers.size());
        double norm = 0.0;
        for (double& x : w) {
            x = rng.normal();
            norm += x * x;
        }
        norm = std::sqrt(norm);
        for (double& x : w) x /= norm;
        for (std::size_t r = 0; r < n; ++r) {
            double z = 0.0;
            for (std::size_t j = 0; j < drivers.size(); ++j) z += w[j] * data(r, drivers[j]);
            logits[r] = z;
        }
        const double b = calibrate_intercept(logits, rate);
        for (std::size_t r = 0; r < n; ++r) mask.bits.set(r, c, rng.uniform() < sigmoid(logits[r] + b));
    }
    return mask;
}

MissMask gen_mnar(const Tensor2& data, double rate, std::uint64_t seed) {
    check_rate(rate);
    const std::size_t n = data.rows();
    const std::size_t d = data.cols();
    if (d == 0) throw ConfigError("gen_mnar: feature count must be >= 1");
    MissMask mask = make_mask(n, d, Mechanism::mnar, rate, seed);
    Rng rng(combine_seed(seed, "mnar"));

    std::vector<double> z(n);
    for (std::size_t c = 0; c < d; ++c) {
        double mean = 0.0;
        for (std::size_t r = 0; r < n; ++r) mean += data(r, c);
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t r = 0; r < n; ++r) var += (data(r, c) - mean) * (data(r, c) - mean);
        const double sd = std::sqrt(var / static_cast<double>(n));
        if (!(sd > 1e-12)) {
            fill_mcar_column(mask, c, rate, rng);
            continue;
        }
        for (std::size_t r = 0; r < n; ++r) z[r] = (data(r, c) - mean) / sd;
        const double b = calibrate_intercept(z, rate);
        for (std::size_t r = 0; r < n; ++r) mask.bits.set(r, c, rng.uniform() < sigmoid(z[r] + b));
    }
    repair_full_rows(mask.bits, rng);
    return mask;
}

MissMask generate_mask(Mechanism mechanism, const Tensor2& data, double rate, std::uint64_t seed) {
    switch (mechanism) {
        case Mechanism::mcar:
            return gen_mcar(data.rows(), data.cols(), rate, seed);
        case Mechanism::mar:
            return gen_mar(data, rate, seed);
        case Mechanism::mnar:
            return gen_mnar(data, rate, seed);
    }
    throw ConfigError("generate_mask: unknown mechanism");
}

MaskTriple sample_train_partition(const BinaryGrid& observed, double cond_fraction, double tgt_fraction,
                                  std::uint64_t seed) {
    if (cond_fraction < 0.0 || tgt_fraction < 0.0 || cond_fraction + tgt_fraction >= 1.0) {
        throw ConfigError("sample_train_partition: need cond_fraction, tgt_fraction >= 0 with sum < 1 (got " +
                          std::to_string(cond_fraction) + " + " + std::to_string(tgt_fraction) + ")");
    }
    const std::size_t n = observed.rows();
    const std::size_t d = observed.cols();
    MaskTriple out{BinaryGrid(n, d), BinaryGrid(n, d), BinaryGrid(n, d)};
    Rng rng(combine_seed(seed, "partition"));
    std::size_t targets = 0;
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < d; ++c) {
            if (!observed(r, c)) continue;
            const double u = rng.uniform();
            if (u < cond_fraction) {
                out.cond.set(r, c, true);
            } else if (u < cond_fraction + tgt_fraction) {
                out.tgt.set(r, c, true);
                ++targets;
            } else {
                out.obs.set(r, c, true);
            }
        }
    }
    if (targets == 0 && tgt_fraction > 0.0 && observed.count() > 0) {
        // Promote one uniformly chosen observed cell so the loss has a target.
        std::size_t pick = rng.index(observed.count());
        for (std::size_t r = 0; r < n; ++r) {
            for (std::size_t c = 0; c < d; ++c) {
                if (!observed(r, c)) continue;
                if (pick-- == 0) {
                    out.obs.set(r, c, false);
                    out.cond.set(r, c, false);
                    out.tgt.set(r, c, true);
                    return out;
                }
            }
        }
    }
    return out;
}

MaskTriple inference_partition(const BinaryGrid& observed) {
    return MaskTriple{observed, BinaryGrid(observed.rows(), observed.cols()), observed.negated()};
}

void save_mask(const std::filesystem::path& path, const MissMask& mask) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open mask file for writing: " + path.string());
    nlohmann::json header = {{"version", kMaskVersion},
                             {"n", mask.rows()},
                             {"d", mask.cols()},
                             {"mechanism", to_string(mask.mechanism)},
                             {"rate", mask.nominal_rate},
                             {"seed", mask.seed},
                             {"eligible", mask.eligible}};
    const std::string text = header.dump();
    const auto len = static_cast<std::uint64_t>(text.size());
    out.write(kMaskMagic, sizeof kMaskMagic);
    for (int i = 0; i < 8; ++i) out.put(static_cast<char>((len >> (8 * i)) & 0xff));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));

    std::vector<char> packed((mask.rows() * mask.cols() + 7) / 8, 0);
    for (std::size_t r = 0, i = 0; r < mask.rows(); ++r)
        for (std::size_t c = 0; c < mask.cols(); ++c, ++i)
            if (mask.bits(r, c)) packed[i / 8] = static_cast<char>(packed[i / 8] | (1 << (i % 8)));
    out.write(packed.data(), static_cast<std::streamsize>(packed.size()));
    if (!out) throw DataError("failed writing mask file: " + path.string());
}

MissMask load_mask(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open mask file: " + path.string());
    char magic[8];
    if (!in.read(magic, 8) || !std::equal(magic, magic + 8, kMaskMagic)) {
        throw FormatError("not a mask file (bad magic): " + path.string());
    }
    unsigned char lenbuf[8];
    if (!in.read(reinterpret_cast<char*>(lenbuf), 8)) throw FormatError("truncated mask header: " + path.string());
    std::uint64_t len = 0;
    for (int i = 0; i < 8; ++i) len |= static_cast<std::uint64_t>(lenbuf[i]) << (8 * i);
    if (len > (1u << 24)) throw FormatError("implausible mask header length in " + path.string());
    std::string text(len, '\0');
    if (!in.read(text.data(), static_cast<std::streamsize>(len))) {
        throw FormatError("truncated mask header: " + path.string());
    }
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("corrupt mask header in " + path.string() + ": " + e.what());
    }
    if (header.value("version", -1) != kMaskVersion) {
        throw FormatError("unsupported mask file version " + header.value("version", nlohmann::json(-1)).dump());
    }
    const auto n = header.at("n").get<std::size_t>();
    const auto d = header.at("d").get<std::size_t>();
    MissMask mask = make_mask(n, d, parse_mechanism(header.at("mechanism").get<std::string>()),
                              header.at("rate").get<double>(), header.at("seed").get<std::uint64_t>());
    mask.eligible = header.at("eligible").get<std::vector<std::uint8_t>>();
    if (mask.eligible.size() != d) throw FormatError("mask header eligible list has wrong length");

    std::vector<char> packed((n * d + 7) / 8);
    if (!in.read(packed.data(), static_cast<std::streamsize>(packed.size()))) {
        throw FormatError("truncated mask payload: " + path.string());
    }
    for (std::size_t r = 0, i = 0; r < n; ++r)
        for (std::size_t c = 0; c < d; ++c, ++i) mask.bits.set(r, c, (packed[i / 8] >> (i % 8)) & 1);
    return mask;
}

void write_mask_csv(const std::filesystem::path& path, const BinaryGrid& grid) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open for writing: " + path.string());
    for (std::size_t r = 0; r < grid.rows(); ++r) {
        for (std::size_t c = 0; c < grid.cols(); ++c) out << (c ? "," : "") << (grid(r, c) ? '1' : '0');
        out << '\n';
    }
}

}  // namespace macfm
