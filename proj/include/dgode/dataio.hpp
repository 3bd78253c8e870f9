#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "dgode/errors.hpp"

namespace dgode {

/// One utterance as stored on disk: ids, label, and one raw feature vector
/// per modality.
struct UtteranceRecord {
    std::string conversation_id;
    std::size_t utterance_index = 0;
    std::string speaker_id;
    std::string label;
    std::vector<double> text;
    std::vector<double> audio;
    std::vector<double> visual;
};

struct DatasetHeader {
    std::vector<std::string> classes;
    std::size_t dim_text = 0;
    std::size_t dim_audio = 0;
    std::size_t dim_visual = 0;
};

struct DatasetConversation {
    std::string id;
    std::vector<UtteranceRecord> utterances;
};

struct Dataset {
    DatasetHeader header;
    std::vector<DatasetConversation> conversations;

    int class_index(const std::string& label) const {
        for (std::size_t i = 0; i < header.classes.size(); ++i)
            if (header.classes[i] == label) return static_cast<int>(i);
        return -1;
    }

    std::size_t utterance_count() const {
        std::size_t n = 0;
        for (const auto& c : conversations) n += c.utterances.size();
        return n;
    }

    /// Speaker ids in first-appearance order.
    std::vector<std::string> speakers() const {
        std::vector<std::string> out;
        for (const auto& c : conversations)
            for (const auto& u : c.utterances)
                if (std::find(out.begin(), out.end(), u.speaker_id) == out.end())
                    out.push_back(u.speaker_id);
        return out;
    }
};

namespace detail {

inline std::vector<double> json_vector(const nlohmann::json& j, const char* key,
                                       std::size_t line) {
    if (!j.contains(key) || !j[key].is_array())
        throw ParseError(std::string("missing or non-array field '") + key + "'", line);
    std::vector<double> v;
    v.reserve(j[key].size());
    for (const auto& x : j[key]) {
        if (!x.is_number()) throw ParseError(std::string("non-numeric entry in '") + key + "'", line);
        v.push_back(x.get<double>());
    }
    return v;
}

}  // namespace detail

/// Line-delimited dataset file: the first line is a header naming the class
/// set and the three modal dimensions, each following line is one utterance
/// record with fields conv, idx, speaker, label, text, audio, visual.
inline void save_dataset(const Dataset& ds, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error("save_dataset: cannot open " + path);
    nlohmann::ordered_json header;
    header["classes"] = ds.header.classes;
    header["dims"] = {{"text", ds.header.dim_text},
                      {"audio", ds.header.dim_audio},
                      {"visual", ds.header.dim_visual}};
    out << header.dump() << "\n";
    for (const auto& conv : ds.conversations) {
        for (const auto& u : conv.utterances) {
            nlohmann::ordered_json j;
            j["conv"] = u.conversation_id;
            j["idx"] = u.utterance_index;
            j["speaker"] = u.speaker_id;
            j["label"] = u.label;
            j["text"] = u.text;
            j["audio"] = u.audio;
            j["visual"] = u.visual;
            out << j.dump() << "\n";
        }
    }
}

inline Dataset load_dataset(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("load_dataset: cannot open " + path);

    Dataset ds;
    std::string line;
    std::size_t line_no = 0;

    if (!std::getline(in, line)) throw ParseError("empty file, header expected", 1);
    ++line_no;
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& ex) {
        throw ParseError(std::string("header is not valid JSON: ") + ex.what(), line_no);
    }
    if (!header.contains("classes") || !header["classes"].is_array() ||
        header["classes"].empty())
        throw ParseError("header must declare a non-empty class list", line_no);
    for (const auto& c : header["classes"]) {
        const std::string name = c.get<std::string>();
        if (ds.class_index(name) >= 0)
            throw ParseError("duplicate class name '" + name + "'", line_no);
        ds.header.classes.push_back(name);
    }
    if (!header.contains("dims"))
        throw ParseError("header must declare modal dims", line_no);
    ds.header.dim_text = header["dims"].value("text", std::size_t{0});
    ds.header.dim_audio = header["dims"].value("audio", std::size_t{0});
    ds.header.dim_visual = header["dims"].value("visual", std::size_t{0});
    if (ds.header.dim_text == 0 || ds.header.dim_audio == 0 || ds.header.dim_visual == 0)
        throw ParseError("modal dims must be positive", line_no);

    std::map<std::string, std::size_t> conv_slot;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& ex) {
            throw ParseError(std::string("invalid JSON: ") + ex.what(), line_no);
        }
        for (const char* key : {"conv", "idx", "speaker", "label"})
            if (!j.contains(key))
                throw ParseError(std::string("missing field '") + key + "'", line_no);

        UtteranceRecord u;
        u.conversation_id = j["conv"].get<std::string>();
        if (!j["idx"].is_number_unsigned())
            throw ParseError("'idx' must be a nonnegative integer", line_no);
        u.utterance_index = j["idx"].get<std::size_t>();
        u.speaker_id = j["speaker"].get<std::string>();
        u.label = j["label"].get<std::string>();
        if (ds.class_index(u.label) < 0)
            throw LabelError("line " + std::to_string(line_no) + ": unknown label '" + u.label +
                             "'");
        u.text = detail::json_vector(j, "text", line_no);
        u.audio = detail::json_vector(j, "audio", line_no);
        u.visual = detail::json_vector(j, "visual", line_no);
        if (u.text.size() != ds.header.dim_text || u.audio.size() != ds.header.dim_audio ||
            u.visual.size() != ds.header.dim_visual)
            throw DimensionError("line " + std::to_string(line_no) +
                                 ": feature widths disagree with header dims");
        for (const auto* vec : {&u.text, &u.audio, &u.visual})
            for (double v : *vec)
                if (!std::isfinite(v))
                    throw ParseError("non-finite feature value", line_no);

        auto it = conv_slot.find(u.conversation_id);
        if (it == conv_slot.end()) {
            conv_slot.emplace(u.conversation_id, ds.conversations.size());
            ds.conversations.push_back(DatasetConversation{u.conversation_id, {}});
            it = conv_slot.find(u.conversation_id);
        }
        auto& conv = ds.conversations[it->second];
        if (!conv.utterances.empty() &&
            u.utterance_index <= conv.utterances.back().utterance_index)
            throw ParseError("utterance index not increasing within conversation '" +
                                 u.conversation_id + "'",
                             line_no);
        conv.utterances.push_back(std::move(u));
    }
    return ds;
}

/// Synthetic conversation generator. Classes carry Gaussian feature
/// signatures per modality; each utterance's class follows a sticky,
/// speaker-biased transition from the previous one, and a fraction of the
/// previous class's signature bleeds into the current features so that
/// context actually carries signal.
struct SyntheticConfig {
    std::size_t conversations = 60;
    std::size_t utt_min = 5;
    std::size_t utt_max = 10;
    std::size_t speakers = 4;
    std::size_t classes = 4;
    std::size_t dim_text = 16;
    std::size_t dim_audio = 12;
    std::size_t dim_visual = 8;
    double separation = 1.0;
    double noise_scale = 0.6;
    double temporal_drift = 0.5;
    double stickiness = 0.45;    // weight on repeating the previous class
    double speaker_bias = 0.2;   // weight on the speaker's preferred class
    std::uint64_t seed = 1;

    void validate() const {
        if (conversations == 0 || speakers == 0 || classes < 2)
            throw ConfigError("SyntheticConfig: need conversations, speakers, classes >= 2");
        if (utt_min == 0 || utt_max < utt_min)
            throw ConfigError("SyntheticConfig: bad utterance range");
        if (dim_text == 0 || dim_audio == 0 || dim_visual == 0)
            throw ConfigError("SyntheticConfig: modal dims must be positive");
        if (!(separation > 0.0)) throw ConfigError("SyntheticConfig: separation must be > 0");
        if (!(noise_scale > 0.0)) throw ConfigError("SyntheticConfig: noise scale must be > 0");
        if (temporal_drift < 0.0) throw ConfigError("SyntheticConfig: drift must be >= 0");
        if (stickiness < 0.0 || speaker_bias < 0.0 || stickiness + speaker_bias > 0.9)
            throw ConfigError("SyntheticConfig: stickiness + speaker_bias must stay in [0, 0.9]");
    }

    std::size_t preferred_class(std::size_t speaker) const { return speaker % classes; }

    /// Next-class distribution given the previous class (-1 for none) and the
    /// current speaker.
    std::vector<double> transition_row(int prev_class, std::size_t speaker) const {
        std::vector<double> p(classes, 0.0);
        const double kappa1 = prev_class >= 0 ? stickiness : 0.0;
        const double base = (1.0 - kappa1 - speaker_bias) / static_cast<double>(classes);
        for (std::size_t c = 0; c < classes; ++c) p[c] = base;
        if (prev_class >= 0) p[static_cast<std::size_t>(prev_class)] += kappa1;
        p[preferred_class(speaker)] += speaker_bias;
        return p;
    }
};

inline const std::vector<std::string>& emotion_class_palette() {
    static const std::vector<std::string> palette{
        "neutral", "happy", "sad", "angry", "excited", "frustrated", "surprise", "fear",
        "disgust", "joy"};
    return palette;
}

inline Dataset gen_synthetic(const SyntheticConfig& cfg) {
    cfg.validate();
    std::mt19937_64 rng(cfg.seed);
    std::normal_distribution<double> gauss;
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    Dataset ds;
    const auto& palette = emotion_class_palette();
    for (std::size_t c = 0; c < cfg.classes; ++c)
        ds.header.classes.push_back(c < palette.size() ? palette[c]
                                                       : "class" + std::to_string(c));
    ds.header.dim_text = cfg.dim_text;
    ds.header.dim_audio = cfg.dim_audio;
    ds.header.dim_visual = cfg.dim_visual;

    // Class signatures per modality, drawn before any conversation so the
    // whole dataset is a pure function of the config.
    const std::size_t dims[3] = {cfg.dim_text, cfg.dim_audio, cfg.dim_visual};
    std::vector<std::vector<std::vector<double>>> mean(
        cfg.classes, std::vector<std::vector<double>>(3));
    for (std::size_t c = 0; c < cfg.classes; ++c)
        for (std::size_t m = 0; m < 3; ++m) {
            mean[c][m].resize(dims[m]);
            for (double& v : mean[c][m]) v = cfg.separation * gauss(rng);
        }

    auto sample_discrete = [&](const std::vector<double>& p) {
        double u = unit(rng), acc = 0.0;
        for (std::size_t i = 0; i < p.size(); ++i) {
            acc += p[i];
            if (u < acc) return i;
        }
        return p.size() - 1;
    };

    std::uniform_int_distribution<std::size_t> length(cfg.utt_min, cfg.utt_max);
    std::uniform_int_distribution<std::size_t> pick_speaker(0, cfg.speakers - 1);
    for (std::size_t k = 0; k < cfg.conversations; ++k) {
        DatasetConversation conv;
        char id[32];
        std::snprintf(id, sizeof id, "conv%04zu", k);
        conv.id = id;
        const std::size_t len = length(rng);
        int prev_class = -1;
        for (std::size_t i = 0; i < len; ++i) {
            const std::size_t speaker = pick_speaker(rng);
            const std::size_t cls = sample_discrete(cfg.transition_row(prev_class, speaker));

            UtteranceRecord u;
            u.conversation_id = conv.id;
            u.utterance_index = i;
            u.speaker_id = "spk" + std::to_string(speaker);
            u.label = ds.header.classes[cls];
            for (std::size_t m = 0; m < 3; ++m) {
                std::vector<double> feat(dims[m]);
                for (std::size_t j = 0; j < dims[m]; ++j) {
                    double v = mean[cls][m][j] + cfg.noise_scale * gauss(rng);
                    if (prev_class >= 0)
                        v += cfg.temporal_drift * mean[static_cast<std::size_t>(prev_class)][m][j];
                    feat[j] = v;
                }
                if (m == 0)
                    u.text = std::move(feat);
                else if (m == 1)
                    u.audio = std::move(feat);
                else
                    u.visual = std::move(feat);
            }
            conv.utterances.push_back(std::move(u));
            prev_class = static_cast<int>(cls);
        }
        ds.conversations.push_back(std::move(conv));
    }
    return ds;
}

/// Split at conversation granularity: floor sizes from the fractions, then
/// hand any remainder to train. Deterministic under the seed.
inline std::array<Dataset, 3> split_dataset(const Dataset& ds, std::array<double, 3> fractions,
                                            std::uint64_t seed) {
    double sum = 0.0;
    for (double f : fractions) {
        if (f < 0.0) throw ConfigError("split_dataset: fractions must be nonnegative");
        sum += f;
    }
    if (std::fabs(sum - 1.0) > 1e-9) throw ConfigError("split_dataset: fractions must sum to 1");

    const std::size_t n = ds.conversations.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);

    std::size_t n_val = static_cast<std::size_t>(fractions[1] * static_cast<double>(n));
    std::size_t n_test = static_cast<std::size_t>(fractions[2] * static_cast<double>(n));
    std::size_t n_train = n - n_val - n_test;

    std::array<Dataset, 3> out;
    for (auto& d : out) d.header = ds.header;
    for (std::size_t i = 0; i < n; ++i) {
        const auto& conv = ds.conversations[order[i]];
        if (i < n_train)
            out[0].conversations.push_back(conv);
        else if (i < n_train + n_val)
            out[1].conversations.push_back(conv);
        else
            out[2].conversations.push_back(conv);
    }
    return out;
}

}  // namespace dgode
