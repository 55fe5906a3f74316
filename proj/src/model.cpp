#include "macfm/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "macfm/errors.hpp"
#include "macfm/rng.hpp"

namespace macfm {
namespace {

constexpr char kMagic[8] = {'M', 'A', 'C', 'F', 'M', '0', '0', '1'};

enum Slot : std::size_t { in_w, in_b, time_w1, time_b1, time_w2, time_b2, first_block };

void write_u64(std::ostream& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.put(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t read_u64(std::istream& in) {
    unsigned char b[8];
    if (!in.read(reinterpret_cast<char*>(b), 8)) throw FormatError("checkpoint truncated");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

}  // namespace

Tensor2 time_embedding(std::span<const double> t, std::size_t pe_dim) {
    if (pe_dim == 0 || pe_dim % 2 != 0) throw ConfigError("pe_dim must be even and positive");
    Tensor2 out(t.size(), pe_dim);
    const std::size_t half = pe_dim / 2;
    for (std::size_t i = 0; i < half; ++i) {
        const double omega = std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(pe_dim));
        for (std::size_t r = 0; r < t.size(); ++r) {
            out(r, 2 * i) = std::sin(omega * t[r]);
            out(r, 2 * i + 1) = std::cos(omega * t[r]);
        }
    }
    return out;
}

std::size_t VelocityModel::parameter_count(const ModelConfig& c) {
    const std::size_t dm = c.d_model;
    return (c.features * dm + dm) + (c.pe_dim * dm + dm) + (dm * dm + dm) + c.n_blocks * (dm * dm + dm) +
           (dm * dm + dm) + (dm * c.features + c.features);
}

VelocityModel VelocityModel::init(const ModelConfig& config) {
    if (config.features == 0 || config.d_model == 0 || config.pe_dim == 0) {
        throw ConfigError("model widths must be >= 1");
    }
    if (config.pe_dim % 2 != 0) throw ConfigError("pe_dim must be even");

    VelocityModel m;
    m.m_config = config;
    Rng rng(combine_seed(config.seed, "model-init"));
    const std::size_t D = config.features;
    const std::size_t dm = config.d_model;

    const auto dense = [&](const std::string& name, std::size_t fan_in, std::size_t fan_out, bool zero) {
        Tensor2 w(fan_in, fan_out);
        if (!zero) {
            const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
            for (double& x : w.flat()) x = (2.0 * rng.uniform() - 1.0) * limit;
        }
        m.m_params.push_back(std::move(w));
        m.m_names.push_back(name + ".W");
        m.m_params.emplace_back(1, fan_out);
        m.m_names.push_back(name + ".b");
    };

    dense("input", D, dm, false);
    dense("time.fc1", config.pe_dim, dm, false);
    dense("time.fc2", dm, dm, false);
    for (std::size_t b = 0; b < config.n_blocks; ++b) dense("block" + std::to_string(b), dm, dm, false);
    dense("head.fc1", dm, dm, false);
    dense("head.fc2", dm, D, true);
    return m;
}

std::size_t VelocityModel::parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : m_params) n += p.size();
    return n;
}

std::vector<double> VelocityModel::flat_parameters() const {
    std::vector<double> flat;
    flat.reserve(parameter_count());
    for (const auto& p : m_params) flat.insert(flat.end(), p.flat().begin(), p.flat().end());
    return flat;
}

void VelocityModel::set_flat_parameters(std::span<const double> flat) {
    if (flat.size() != parameter_count()) {
        throw DimensionError("set_flat_parameters: expected " + std::to_string(parameter_count()) + " values, got " +
                             std::to_string(flat.size()));
    }
    std::size_t pos = 0;
    for (auto& p : m_params) {
        std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(pos), p.size(), p.data());
        pos += p.size();
    }
}

std::uint64_t VelocityModel::parameter_hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& p : m_params) {
        for (double v : p.flat()) {
            const auto bits = std::bit_cast<std::uint64_t>(v);
            for (int i = 0; i < 8; ++i) {
                h ^= (bits >> (8 * i)) & 0xff;
                h *= 0x100000001b3ULL;
            }
        }
    }
    return h;
}

std::vector<ad::Var> VelocityModel::bind(ad::Tape& tape, bool trainable) const {
    std::vector<ad::Var> vars;
    vars.reserve(m_params.size());
    for (const auto& p : m_params) vars.push_back(trainable ? tape.variable_ref(p) : tape.constant_ref(p));
    return vars;
}

void VelocityModel::check_inputs(const Tensor2& x, std::span<const double> t) const {
    if (x.cols() != m_config.features) {
        throw DimensionError("forward: input has " + std::to_string(x.cols()) + " features, model expects " +
                             std::to_string(m_config.features));
    }
    if (t.size() != x.rows()) {
        throw DimensionError("forward: " + std::to_string(t.size()) + " times for " + std::to_string(x.rows()) +
                             " rows");
    }
    for (std::size_t r = 0; r < x.rows(); ++r) {
        if (!(t[r] >= 0.0 && t[r] <= 1.0)) {
            throw DomainError("forward: t = " + std::to_string(t[r]) + " outside [0, 1] at batch row " +
                              std::to_string(r));
        }
        for (double v : x.row_span(r)) {
            if (!std::isfinite(v)) throw NumericError("forward: non-finite input at batch row " + std::to_string(r));
        }
    }
}

ad::Var VelocityModel::forward(ad::Tape& tape, std::span<const ad::Var> p, ad::Var x,
                               std::span<const double> t) const {
    check_inputs(tape.value(x), t);
    const auto linear = [&](ad::Var in, std::size_t w) {
        return tape.broadcast_add_row(tape.matmul(in, p[w]), p[w + 1]);
    };

    const ad::Var pe = tape.constant(time_embedding(t, m_config.pe_dim));
    const ad::Var cond = linear(tape.silu(linear(pe, time_w1)), time_w2);
    ad::Var h = tape.add(linear(x, in_w), cond);
    std::size_t slot = first_block;
    for (std::size_t b = 0; b < m_config.n_blocks; ++b, slot += 2) h = tape.silu(linear(h, slot));
    h = tape.silu(linear(h, slot));
    return linear(h, slot + 2);
}

Tensor2 VelocityModel::forward(const Tensor2& x, std::span<const double> t) const {
    ad::Tape tape;
    const auto params = bind(tape, false);
    const ad::Var out = forward(tape, params, tape.constant_ref(x), t);
    Tensor2 v = tape.value(out);
    for (std::size_t r = 0; r < v.rows(); ++r) {
        for (double e : v.row_span(r)) {
            if (!std::isfinite(e)) throw NumericError("forward: non-finite velocity at batch row " + std::to_string(r));
        }
    }
    return v;
}

void save_checkpoint(const std::filesystem::path& path, const VelocityModel& model, const Schedule& schedule) {
    const auto& c = model.config();
    nlohmann::json header = {{"version", kCheckpointVersion},
                             {"features", c.features},
                             {"d_model", c.d_model},
                             {"n_blocks", c.n_blocks},
                             {"pe_dim", c.pe_dim},
                             {"seed", c.seed},
                             {"parameter_count", model.parameter_count()},
                             {"schedule", {{"kind", to_string(schedule.kind())}, {"gamma", schedule.gamma()}}}};
    const std::string text = header.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open checkpoint for writing: " + path.string());
    out.write(kMagic, sizeof kMagic);
    write_u64(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& p : model.parameters())
        for (double v : p.flat()) write_u64(out, std::bit_cast<std::uint64_t>(v));
    if (!out) throw DataError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint: " + path.string());
    char magic[8];
    if (!in.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0) {
        throw FormatError("not a MACFM checkpoint (bad magic): " + path.string());
    }
    const std::uint64_t len = read_u64(in);
    if (len > (1u << 20)) throw FormatError("implausible checkpoint header length");
    std::string text(len, '\0');
    if (!in.read(text.data(), static_cast<std::streamsize>(len))) throw FormatError("checkpoint truncated in header");

    nlohmann::json h;
    try {
        h = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("corrupt checkpoint header: ") + e.what());
    }
    const int version = h.value("version", -1);
    if (version != kCheckpointVersion) {
        throw FormatError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                          std::to_string(kCheckpointVersion) + ")");
    }
    ModelConfig c;
    c.features = h.at("features").get<std::size_t>();
    c.d_model = h.at("d_model").get<std::size_t>();
    c.n_blocks = h.at("n_blocks").get<std::size_t>();
    c.pe_dim = h.at("pe_dim").get<std::size_t>();
    c.seed = h.at("seed").get<std::uint64_t>();

    Checkpoint ck;
    ck.model = VelocityModel::init(c);
    if (h.at("parameter_count").get<std::size_t>() != ck.model.parameter_count()) {
        throw FormatError("checkpoint parameter count does not match its dimensions");
    }
    const auto& sched = h.at("schedule");
    const auto kind = parse_schedule_kind(sched.at("kind").get<std::string>());
    ck.schedule = kind == ScheduleKind::power    ? Schedule::power(sched.at("gamma").get<double>())
                  : kind == ScheduleKind::cosine ? Schedule::cosine()
                                                 : Schedule::linear();
    for (auto& p : ck.model.parameters())
        for (double& v : p.flat()) v = std::bit_cast<double>(read_u64(in));
    return ck;
}

}  // namespace macfm
