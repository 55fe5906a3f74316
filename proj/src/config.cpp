#include "macfm/config.hpp"

#include <fstream>
#include <set>
#include <sstream>
#include <type_traits>

#include "macfm/errors.hpp"

namespace macfm {
namespace {

using nlohmann::json;

/// Reads keys from one JSON object and remembers which were expected, so
/// leftovers can be rejected.
class Section {
public:
    Section(const json& j, std::string path) : m_json(j), m_path(std::move(path)) {
        if (!j.is_object()) throw ConfigError("config: '" + display() + "' must be an object");
    }

    template <class T>
    void get(const std::string& key, T& out) {
        m_known.insert(key);
        const auto it = m_json.find(key);
        if (it == m_json.end()) return;
        if constexpr (std::is_unsigned_v<T> && !std::is_same_v<T, bool>) {
            if (!it->is_number_unsigned()) throw ConfigError("config: '" + qualified(key) + "' must be a non-negative integer");
        }
        try {
            out = it->template get<T>();
        } catch (const json::exception&) {
            throw ConfigError("config: '" + qualified(key) + "' has the wrong type");
        }
    }

    template <class T, class Parse>
    void get_parsed(const std::string& key, T& out, Parse parse) {
        std::string text;
        get(key, text);
        if (m_json.contains(key)) out = parse(text);
    }

    bool has(const std::string& key) const { return m_json.contains(key); }

    Section child(const std::string& key) {
        m_known.insert(key);
        return Section(m_json.at(key), qualified(key));
    }

    void finish() const {
        for (const auto& item : m_json.items()) {
            if (!m_known.count(item.key())) throw ConfigError("config: unknown key '" + qualified(item.key()) + "'");
        }
    }

private:
    std::string qualified(const std::string& key) const { return m_path.empty() ? key : m_path + "." + key; }
    std::string display() const { return m_path.empty() ? "<root>" : m_path; }

    const json& m_json;
    std::string m_path;
    std::set<std::string> m_known;
};

TimeDistribution parse_time_distribution(std::string_view name) {
    if (name == "uniform") return TimeDistribution::uniform;
    if (name == "beta") return TimeDistribution::beta;
    throw ConfigError("unknown t_dist '" + std::string(name) + "'");
}

std::string to_string(TimeDistribution d) { return d == TimeDistribution::beta ? "beta" : "uniform"; }

void read_synthetic(Section s, SynthSpec& spec) {
    s.get("n", spec.n);
    s.get("d_numeric", spec.d_numeric);
    s.get("d_categorical", spec.d_categorical);
    s.get("n_categories", spec.n_categories);
    s.get_parsed("covariance", spec.covariance, parse_covariance);
    s.get("rho", spec.rho);
    s.get("rank", spec.rank);
    s.get("link_scale", spec.link_scale);
    s.get("seed", spec.seed);
    s.finish();
}

void read_train(Section s, TrainConfig& t) {
    s.get("lambda_stab", t.lambda_stab);
    s.get("lambda_cons", t.lambda_cons);
    s.get("eta_cons", t.eta_cons);
    s.get("sigma_in", t.sigma_in);
    s.get_parsed("t_dist", t.t_dist, parse_time_distribution);
    s.get("t_beta_a", t.t_beta_a);
    s.get("t_beta_b", t.t_beta_b);
    s.get("t_per_example", t.t_per_example);
    s.get("batch_size", t.batch_size);
    s.get("lr", t.lr);
    s.get("adam_beta1", t.adam_beta1);
    s.get("adam_beta2", t.adam_beta2);
    s.get("adam_eps", t.adam_eps);
    s.get("max_epochs", t.max_epochs);
    s.get("patience", t.patience);
    s.get("min_rel_improvement", t.min_rel_improvement);
    s.get("eps_norm", t.eps_norm);
    s.get("cond_fraction", t.cond_fraction);
    s.get("tgt_fraction", t.tgt_fraction);
    s.get("mask_aware", t.mask_aware);
    s.get("noise_on_cond", t.noise_on_cond);
    s.finish();
}

std::vector<Mechanism> parse_mechanisms(const std::vector<std::string>& names) {
    std::vector<Mechanism> out;
    for (const auto& n : names) out.push_back(parse_mechanism(n));
    return out;
}

}  // namespace

void RunConfig::validate() const {
    train.validate();
    infer.validate();
    if (model.d_model == 0 || model.n_blocks == 0 || model.pe_dim == 0) {
        throw ConfigError("model: d_model, n_blocks and pe_dim must be >= 1");
    }
    if (model.pe_dim % 2 != 0) throw ConfigError("model.pe_dim must be even");
    if (!(dataset.train_fraction > 0.0 && dataset.train_fraction < 1.0)) {
        throw ConfigError("dataset.train_fraction must lie in (0, 1)");
    }
    if (!dataset.path.empty() && dataset.synthetic) {
        throw ConfigError("dataset: set either path or synthetic, not both");
    }
    if (!(mask.rate > 0.0 && mask.rate < 1.0)) throw ConfigError("mask.rate must lie in (0, 1)");
    if (mask.n_masks == 0) throw ConfigError("mask.n_masks must be >= 1");
    for (double r : protocol.rates)
        if (!(r > 0.0 && r < 1.0)) throw ConfigError("protocol.rates must lie in (0, 1)");
    if (protocol.mechanisms.empty() || protocol.rates.empty() || protocol.methods.empty()) {
        throw ConfigError("protocol: mechanisms, rates and methods must be non-empty");
    }
    for (const auto& m : protocol.methods)
        if (m != "macfm") parse_baseline(m);
    if (protocol.knn_k == 0) throw ConfigError("protocol.knn_k must be >= 1");
    for (std::size_t v : ablation.trials)
        if (v == 0) throw ConfigError("ablation.trials entries must be >= 1");
    for (std::size_t v : ablation.steps)
        if (v == 0) throw ConfigError("ablation.steps entries must be >= 1");
}

ProtocolConfig RunConfig::protocol_config() const {
    ProtocolConfig p;
    p.dataset = dataset.name;
    p.mechanisms = protocol.mechanisms;
    p.rates = protocol.rates;
    p.n_masks = mask.n_masks;
    p.methods = protocol.methods;
    p.knn_k = protocol.knn_k;
    p.out_of_sample = protocol.out_of_sample;
    p.seed = seed;
    p.model = model;
    p.train = train;
    p.infer = infer;
    p.infer.seed = combine_seed(seed, "infer");
    p.schedule = schedule;
    p.threads = protocol.threads;
    return p;
}

RunConfig config_from_json(const json& j) {
    RunConfig c;
    Section root(j, "");
    int version = 0;
    root.get("version", version);
    if (!j.contains("version")) throw ConfigError("config: missing 'version'");
    if (version != kConfigVersion) {
        throw ConfigError("config: unsupported version " + std::to_string(version) + " (expected " +
                          std::to_string(kConfigVersion) + ")");
    }
    root.get("seed", c.seed);
    std::string out_dir = c.output_dir.string();
    root.get("output_dir", out_dir);
    c.output_dir = out_dir;

    if (root.has("dataset")) {
        Section s = root.child("dataset");
        std::string path;
        s.get("path", path);
        c.dataset.path = path;
        s.get("name", c.dataset.name);
        s.get("categorical", c.dataset.hints.categorical);
        s.get("numeric", c.dataset.hints.numeric);
        s.get("sentinels", c.dataset.hints.sentinels);
        s.get("train_fraction", c.dataset.train_fraction);
        if (s.has("synthetic")) {
            SynthSpec spec;
            spec.seed = c.seed;
            read_synthetic(s.child("synthetic"), spec);
            c.dataset.synthetic = spec;
        }
        s.finish();
    }
    if (root.has("schedule")) {
        Section s = root.child("schedule");
        ScheduleKind kind = ScheduleKind::linear;
        double gamma = 2.0;
        s.get_parsed("kind", kind, parse_schedule_kind);
        s.get("gamma", gamma);
        s.finish();
        c.schedule = kind == ScheduleKind::power    ? Schedule::power(gamma)
                     : kind == ScheduleKind::cosine ? Schedule::cosine()
                                                    : Schedule::linear();
    }
    if (root.has("grid")) {
        Section s = root.child("grid");
        s.get("K", c.infer.steps);
        s.get_parsed("mode", c.infer.grid_mode, parse_grid_mode);
        s.get("beta", c.infer.grid_beta);
        s.finish();
    }
    if (root.has("model")) {
        Section s = root.child("model");
        s.get("d_model", c.model.d_model);
        s.get("n_blocks", c.model.n_blocks);
        s.get("pe_dim", c.model.pe_dim);
        s.finish();
    }
    if (root.has("train")) read_train(root.child("train"), c.train);
    if (root.has("infer")) {
        Section s = root.child("infer");
        s.get_parsed("solver", c.infer.solver, parse_solver);
        s.get("trials", c.infer.trials);
        s.get_parsed("aggregation", c.infer.aggregation, parse_aggregation);
        s.get("threads", c.infer.threads);
        s.finish();
    }
    if (root.has("mask")) {
        Section s = root.child("mask");
        s.get_parsed("mechanism", c.mask.mechanism, parse_mechanism);
        s.get("rate", c.mask.rate);
        s.get("n_masks", c.mask.n_masks);
        s.finish();
    }
    if (root.has("protocol")) {
        Section s = root.child("protocol");
        std::vector<std::string> mechs;
        s.get("mechanisms", mechs);
        if (s.has("mechanisms")) c.protocol.mechanisms = parse_mechanisms(mechs);
        s.get("rates", c.protocol.rates);
        s.get("methods", c.protocol.methods);
        s.get("knn_k", c.protocol.knn_k);
        s.get("out_of_sample", c.protocol.out_of_sample);
        s.get("threads", c.protocol.threads);
        s.finish();
    }
    if (root.has("ablation")) {
        Section s = root.child("ablation");
        s.get("enabled", c.ablation.enabled);
        s.get("trials", c.ablation.trials);
        s.get("steps", c.ablation.steps);
        s.get("steps_trials", c.ablation.steps_trials);
        s.get("mask_aware", c.ablation.mask_aware);
        s.finish();
    }
    root.finish();
    c.train.seed = combine_seed(c.seed, "train");
    c.model.seed = combine_seed(c.seed, "model");
    c.infer.seed = combine_seed(c.seed, "infer");
    c.validate();
    return c;
}

json config_to_json(const RunConfig& c) {
    json dataset = {{"path", c.dataset.path.string()},
                    {"name", c.dataset.name},
                    {"categorical", c.dataset.hints.categorical},
                    {"numeric", c.dataset.hints.numeric},
                    {"sentinels", c.dataset.hints.sentinels},
                    {"train_fraction", c.dataset.train_fraction}};
    if (c.dataset.synthetic) {
        const SynthSpec& s = *c.dataset.synthetic;
        dataset["synthetic"] = {{"n", s.n},
                                {"d_numeric", s.d_numeric},
                                {"d_categorical", s.d_categorical},
                                {"n_categories", s.n_categories},
                                {"covariance", to_string(s.covariance)},
                                {"rho", s.rho},
                                {"rank", s.rank},
                                {"link_scale", s.link_scale},
                                {"seed", s.seed}};
    }
    const TrainConfig& t = c.train;
    std::vector<std::string> mechs;
    for (Mechanism m : c.protocol.mechanisms) mechs.push_back(to_string(m));
    return {{"version", kConfigVersion},
            {"seed", c.seed},
            {"output_dir", c.output_dir.string()},
            {"dataset", dataset},
            {"schedule", {{"kind", to_string(c.schedule.kind())}, {"gamma", c.schedule.gamma()}}},
            {"grid", {{"K", c.infer.steps}, {"mode", to_string(c.infer.grid_mode)}, {"beta", c.infer.grid_beta}}},
            {"model", {{"d_model", c.model.d_model}, {"n_blocks", c.model.n_blocks}, {"pe_dim", c.model.pe_dim}}},
            {"train",
             {{"lambda_stab", t.lambda_stab},
              {"lambda_cons", t.lambda_cons},
              {"eta_cons", t.eta_cons},
              {"sigma_in", t.sigma_in},
              {"t_dist", to_string(t.t_dist)},
              {"t_beta_a", t.t_beta_a},
              {"t_beta_b", t.t_beta_b},
              {"t_per_example", t.t_per_example},
              {"batch_size", t.batch_size},
              {"lr", t.lr},
              {"adam_beta1", t.adam_beta1},
              {"adam_beta2", t.adam_beta2},
              {"adam_eps", t.adam_eps},
              {"max_epochs", t.max_epochs},
              {"patience", t.patience},
              {"min_rel_improvement", t.min_rel_improvement},
              {"eps_norm", t.eps_norm},
              {"cond_fraction", t.cond_fraction},
              {"tgt_fraction", t.tgt_fraction},
              {"mask_aware", t.mask_aware},
              {"noise_on_cond", t.noise_on_cond}}},
            {"infer",
             {{"solver", to_string(c.infer.solver)},
              {"trials", c.infer.trials},
              {"aggregation", to_string(c.infer.aggregation)},
              {"threads", c.infer.threads}}},
            {"mask", {{"mechanism", to_string(c.mask.mechanism)}, {"rate", c.mask.rate}, {"n_masks", c.mask.n_masks}}},
            {"protocol",
             {{"mechanisms", mechs},
              {"rates", c.protocol.rates},
              {"methods", c.protocol.methods},
              {"knn_k", c.protocol.knn_k},
              {"out_of_sample", c.protocol.out_of_sample},
              {"threads", c.protocol.threads}}},
            {"ablation",
             {{"enabled", c.ablation.enabled},
              {"trials", c.ablation.trials},
              {"steps", c.ablation.steps},
              {"steps_trials", c.ablation.steps_trials},
              {"mask_aware", c.ablation.mask_aware}}}};
}

RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config '" + path.string() + "'");
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("config '" + path.string() + "' is not valid JSON: " + e.what());
    }
    return config_from_json(j);
}

void save_config(const std::filesystem::path& path, const RunConfig& config) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write config '" + path.string() + "'");
    out << config_to_json(config).dump(2) << '\n';
}

RawTable load_dataset(const DatasetConfig& dataset) {
    if (dataset.synthetic) return generate(*dataset.synthetic);
    if (dataset.path.empty()) throw ConfigError("dataset: no path and no synthetic spec");
    return load_csv(dataset.path, dataset.hints);
}

}  // namespace macfm
