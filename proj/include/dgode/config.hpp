#pragma once

#include <array>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "dgode/dataio.hpp"
#include "dgode/model.hpp"

namespace dgode {

/// Everything a CLI run needs, with every field defaulted. Populated from a
/// plain-text config file of [section] blocks with key = value lines;
/// unknown sections or keys are rejected.
struct RunConfig {
    // [run]
    std::string dataset = "dataset.jsonl";
    std::string out = "out";
    std::string params = "";  // empty: <out>/params.txt
    std::uint64_t seed = 1;

    // [data]
    std::array<double, 3> split_fractions{0.8, 0.1, 0.1};

    TrainConfig train;        // [train]
    ModelConfig model;        // [model] + [ode]
    SyntheticConfig synthetic;  // [synthetic]; its seed follows run.seed

    // [sweep]
    std::vector<std::size_t> sweep_depths{2, 4, 8, 16, 32, 64};
    std::size_t sweep_seeds = 5;

    std::string params_path() const { return params.empty() ? out + "/params.txt" : params; }

    void validate() const {
        train.validate();
        model.validate();
        synthetic.validate();
        if (sweep_depths.empty()) throw ConfigError("sweep: depths must not be empty");
        if (sweep_seeds == 0) throw ConfigError("sweep: seeds must be >= 1");
    }
};

namespace detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline double to_double(const std::string& v, const std::string& key) {
    try {
        std::size_t used = 0;
        const double x = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw ConfigError("config: bad numeric value '" + v + "' for " + key);
    }
}

inline std::size_t to_size(const std::string& v, const std::string& key) {
    const double x = to_double(v, key);
    if (x < 0.0 || x != static_cast<double>(static_cast<std::size_t>(x)))
        throw ConfigError("config: expected a nonnegative integer for " + key);
    return static_cast<std::size_t>(x);
}

inline bool to_bool(const std::string& v, const std::string& key) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("config: bad boolean value '" + v + "' for " + key);
}

inline std::vector<std::size_t> to_size_list(const std::string& v, const std::string& key) {
    std::vector<std::size_t> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(to_size(item, key));
    }
    if (out.empty()) throw ConfigError("config: empty list for " + key);
    return out;
}

}  // namespace detail

/// Apply one key = value assignment under a given section. Exposed so CLI
/// overrides reuse the same dispatch (and the same rejection rules).
inline void apply_config_entry(RunConfig& cfg, const std::string& section,
                               const std::string& key, const std::string& value) {
    using detail::to_bool;
    using detail::to_double;
    using detail::to_size;
    using detail::to_size_list;
    const std::string where = section + "." + key;

    if (section == "run") {
        if (key == "dataset") cfg.dataset = value;
        else if (key == "out") cfg.out = value;
        else if (key == "params") cfg.params = value;
        else if (key == "seed") cfg.seed = static_cast<std::uint64_t>(to_size(value, where));
        else throw ConfigError("config: unknown key " + where);
    } else if (section == "data") {
        if (key == "train_fraction") cfg.split_fractions[0] = to_double(value, where);
        else if (key == "val_fraction") cfg.split_fractions[1] = to_double(value, where);
        else if (key == "test_fraction") cfg.split_fractions[2] = to_double(value, where);
        else throw ConfigError("config: unknown key " + where);
    } else if (section == "train") {
        if (key == "lr") cfg.train.lr = to_double(value, where);
        else if (key == "batch_size") cfg.train.batch_size = to_size(value, where);
        else if (key == "epochs") cfg.train.epochs = to_size(value, where);
        else if (key == "l2") cfg.train.l2 = to_double(value, where);
        else if (key == "dropout") cfg.train.dropout = to_double(value, where);
        else if (key == "beta1") cfg.train.beta1 = to_double(value, where);
        else if (key == "beta2") cfg.train.beta2 = to_double(value, where);
        else if (key == "adam_eps") cfg.train.adam_eps = to_double(value, where);
        else throw ConfigError("config: unknown key " + where);
    } else if (section == "model") {
        if (key == "embed_dim") cfg.model.embed_dim = to_size(value, where);
        else if (key == "gru_hidden") cfg.model.gru_hidden = to_size(value, where);
        else if (key == "head_hidden") cfg.model.head_hidden = to_size(value, where);
        else if (key == "mixhop_hops") cfg.model.mixhop_hops = to_size(value, where);
        else if (key == "mixhop_depth") cfg.model.mixhop_depth = to_size(value, where);
        else if (key == "per_modality_weight") cfg.model.per_modality_weight = to_bool(value, where);
        else if (key == "alpha") cfg.model.alpha = to_double(value, where);
        else if (key == "w_past") cfg.model.w_past = to_size(value, where);
        else if (key == "w_future") cfg.model.w_future = to_size(value, where);
        else if (key == "w_rho") cfg.model.w_rho = to_double(value, where);
        else if (key == "w_ridge") cfg.model.w_ridge = to_double(value, where);
        else if (key == "use_ode") cfg.model.flags.use_ode = to_bool(value, where);
        else if (key == "use_mixhop") cfg.model.flags.use_mixhop = to_bool(value, where);
        else if (key == "vanilla_layers") cfg.model.vanilla_layers = to_size(value, where);
        else throw ConfigError("config: unknown key " + where);
    } else if (section == "ode") {
        if (key == "t_end") cfg.model.ode.t_end = to_double(value, where);
        else if (key == "steps") cfg.model.ode.steps = to_size(value, where);
        else if (key == "method") cfg.model.ode.method = ode_method_from_string(value);
        else if (key == "sing_tol") cfg.model.ode.sing_tol = to_double(value, where);
        else if (key == "clamp_eps") cfg.model.ode.clamp_eps = to_double(value, where);
        else throw ConfigError("config: unknown key " + where);
    } else if (section == "synthetic") {
        if (key == "conversations") cfg.synthetic.conversations = to_size(value, where);
        else if (key == "utt_min") cfg.synthetic.utt_min = to_size(value, where);
        else if (key == "utt_max") cfg.synthetic.utt_max = to_size(value, where);
        else if (key == "speakers") cfg.synthetic.speakers = to_size(value, where);
        else if (key == "classes") cfg.synthetic.classes = to_size(value, where);
        else if (key == "dim_text") cfg.synthetic.dim_text = to_size(value, where);
        else if (key == "dim_audio") cfg.synthetic.dim_audio = to_size(value, where);
        else if (key == "dim_visual") cfg.synthetic.dim_visual = to_size(value, where);
        else if (key == "separation") cfg.synthetic.separation = to_double(value, where);
        else if (key == "noise_scale") cfg.synthetic.noise_scale = to_double(value, where);
        else if (key == "temporal_drift") cfg.synthetic.temporal_drift = to_double(value, where);
        else if (key == "stickiness") cfg.synthetic.stickiness = to_double(value, where);
        else if (key == "speaker_bias") cfg.synthetic.speaker_bias = to_double(value, where);
        else throw ConfigError("config: unknown key " + where);
    } else if (section == "sweep") {
        if (key == "depths") cfg.sweep_depths = to_size_list(value, where);
        else if (key == "seeds") cfg.sweep_seeds = to_size(value, where);
        else throw ConfigError("config: unknown key " + where);
    } else {
        throw ConfigError("config: unknown section [" + section + "]");
    }
}

/// The run seed drives generation and training unless those are re-derived
/// explicitly; call after any override of cfg.seed.
inline void sync_seeds(RunConfig& cfg) {
    cfg.synthetic.seed = cfg.seed;
    cfg.train.seed = cfg.seed;
}

inline RunConfig parse_config_text(std::istream& in) {
    RunConfig cfg;
    std::string line, section = "run";
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        line = detail::trim(line);
        if (line.empty() || line[0] == '#' || line[0] == ';') continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw ConfigError("config line " + std::to_string(line_no) +
                                  ": malformed section header");
            section = detail::trim(line.substr(1, line.size() - 2));
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string value = detail::trim(line.substr(eq + 1));
        if (key.empty()) throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
        apply_config_entry(cfg, section, key, value);
    }
    sync_seeds(cfg);
    return cfg;
}

inline RunConfig parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open " + path);
    return parse_config_text(in);
}

}  // namespace dgode
