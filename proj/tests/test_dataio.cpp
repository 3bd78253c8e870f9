#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <vector>

#include "dgode/dataio.hpp"
#include "dgode/matrix.hpp"

using dgode::Dataset;
using dgode::SyntheticConfig;

namespace {

struct TempFile {
    std::string path;
    explicit TempFile(const std::string& name) {
        path = (std::filesystem::temp_directory_path() / name).string();
    }
    ~TempFile() { std::remove(path.c_str()); }
};

void write_lines(const std::string& path, const std::vector<std::string>& lines) {
    std::ofstream out(path);
    for (const auto& l : lines) out << l << "\n";
}

const std::string kHeader =
    R"({"classes":["happy","sad"],"dims":{"text":4,"audio":3,"visual":2}})";

}  // namespace

TEST_CASE("loader accepts a header-only file") {
    TempFile f("dgode_header_only.jsonl");
    write_lines(f.path, {kHeader});
    const Dataset ds = dgode::load_dataset(f.path);
    CHECK(ds.conversations.empty());
    CHECK(ds.header.classes.size() == 2);
    CHECK(ds.header.dim_text == 4);
}

TEST_CASE("loader reports dimension drift with the line number") {
    TempFile f("dgode_bad_dim.jsonl");
    write_lines(
        f.path,
        {kHeader,
         R"({"conv":"c0","idx":0,"speaker":"s0","label":"happy","text":[1,2,3,4,5],"audio":[0,0,0],"visual":[0,0]})"});
    try {
        dgode::load_dataset(f.path);
        FAIL("expected DimensionError");
    } catch (const dgode::DimensionError& ex) {
        CHECK(std::string(ex.what()).find("line 2") != std::string::npos);
    }
}

TEST_CASE("loader rejects unknown labels and malformed lines") {
    TempFile f("dgode_bad_label.jsonl");
    write_lines(
        f.path,
        {kHeader,
         R"({"conv":"c0","idx":0,"speaker":"s0","label":"bored","text":[1,2,3,4],"audio":[0,0,0],"visual":[0,0]})"});
    CHECK_THROWS_AS(dgode::load_dataset(f.path), dgode::LabelError);

    TempFile g("dgode_bad_json.jsonl");
    write_lines(g.path, {kHeader, "{not json"});
    try {
        dgode::load_dataset(g.path);
        FAIL("expected ParseError");
    } catch (const dgode::ParseError& ex) {
        CHECK(ex.line() == 2);
    }
}

TEST_CASE("loader requires increasing utterance indices per conversation") {
    TempFile f("dgode_bad_idx.jsonl");
    const std::string rec =
        R"({"conv":"c0","idx":0,"speaker":"s0","label":"sad","text":[1,2,3,4],"audio":[0,0,0],"visual":[0,0]})";
    write_lines(f.path, {kHeader, rec, rec});
    CHECK_THROWS_AS(dgode::load_dataset(f.path), dgode::ParseError);
}

TEST_CASE("synthetic round trip preserves structure") {
    SyntheticConfig cfg;
    cfg.conversations = 8;
    cfg.seed = 99;
    const Dataset ds = dgode::gen_synthetic(cfg);

    TempFile f("dgode_roundtrip.jsonl");
    dgode::save_dataset(ds, f.path);
    const Dataset back = dgode::load_dataset(f.path);

    REQUIRE(back.conversations.size() == ds.conversations.size());
    CHECK(back.header.classes == ds.header.classes);
    for (std::size_t c = 0; c < ds.conversations.size(); ++c) {
        REQUIRE(back.conversations[c].utterances.size() ==
                ds.conversations[c].utterances.size());
        for (std::size_t i = 0; i < ds.conversations[c].utterances.size(); ++i) {
            const auto& a = ds.conversations[c].utterances[i];
            const auto& b = back.conversations[c].utterances[i];
            CHECK(a.conversation_id == b.conversation_id);
            CHECK(a.utterance_index == b.utterance_index);
            CHECK(a.speaker_id == b.speaker_id);
            CHECK(a.label == b.label);
            REQUIRE(a.text.size() == b.text.size());
            for (std::size_t k = 0; k < a.text.size(); ++k) CHECK(a.text[k] == b.text[k]);
            for (std::size_t k = 0; k < a.audio.size(); ++k) CHECK(a.audio[k] == b.audio[k]);
            for (std::size_t k = 0; k < a.visual.size(); ++k) CHECK(a.visual[k] == b.visual[k]);
        }
    }
}

TEST_CASE("synthetic generation is a pure function of the config") {
    SyntheticConfig cfg;
    cfg.conversations = 5;
    cfg.seed = 123;
    const Dataset a = dgode::gen_synthetic(cfg);
    const Dataset b = dgode::gen_synthetic(cfg);
    REQUIRE(a.conversations.size() == b.conversations.size());
    for (std::size_t c = 0; c < a.conversations.size(); ++c)
        for (std::size_t i = 0; i < a.conversations[c].utterances.size(); ++i) {
            CHECK(a.conversations[c].utterances[i].label ==
                  b.conversations[c].utterances[i].label);
            CHECK(a.conversations[c].utterances[i].text ==
                  b.conversations[c].utterances[i].text);
        }
}

TEST_CASE("synthetic data is nearest-mean separable at vanishing noise") {
    SyntheticConfig cfg;
    cfg.conversations = 20;
    cfg.noise_scale = 1e-9;
    cfg.temporal_drift = 0.0;
    cfg.separation = 2.0;
    cfg.seed = 7;
    const Dataset ds = dgode::gen_synthetic(cfg);

    // Recover per-class means from the data itself, then classify.
    const std::size_t c_count = ds.header.classes.size();
    std::vector<std::vector<double>> mean(c_count);
    std::vector<std::size_t> count(c_count, 0);
    for (const auto& conv : ds.conversations)
        for (const auto& u : conv.utterances) {
            const std::size_t cls = static_cast<std::size_t>(ds.class_index(u.label));
            if (mean[cls].empty()) mean[cls].assign(u.text.size(), 0.0);
            for (std::size_t k = 0; k < u.text.size(); ++k) mean[cls][k] += u.text[k];
            ++count[cls];
        }
    for (std::size_t c = 0; c < c_count; ++c)
        if (count[c])
            for (double& v : mean[c]) v /= static_cast<double>(count[c]);

    std::size_t correct = 0, total = 0;
    for (const auto& conv : ds.conversations)
        for (const auto& u : conv.utterances) {
            std::size_t best = 0;
            double best_d = 1e300;
            for (std::size_t c = 0; c < c_count; ++c) {
                if (mean[c].empty()) continue;
                double dist = 0.0;
                for (std::size_t k = 0; k < u.text.size(); ++k) {
                    const double diff = u.text[k] - mean[c][k];
                    dist += diff * diff;
                }
                if (dist < best_d) {
                    best_d = dist;
                    best = c;
                }
            }
            correct += (static_cast<int>(best) == ds.class_index(u.label));
            ++total;
        }
    CHECK(correct == total);
}

TEST_CASE("class frequencies track the transition chain") {
    SyntheticConfig cfg;
    cfg.conversations = 100;
    cfg.utt_min = cfg.utt_max = 100;  // 10^4 utterances, burn-in negligible
    cfg.seed = 31;
    const Dataset ds = dgode::gen_synthetic(cfg);
    const std::size_t c_count = cfg.classes;

    // Speaker-averaged transition matrix and its stationary distribution.
    std::vector<std::vector<double>> t_bar(c_count, std::vector<double>(c_count, 0.0));
    for (std::size_t prev = 0; prev < c_count; ++prev)
        for (std::size_t s = 0; s < cfg.speakers; ++s) {
            const auto row = cfg.transition_row(static_cast<int>(prev), s);
            for (std::size_t c = 0; c < c_count; ++c)
                t_bar[prev][c] += row[c] / static_cast<double>(cfg.speakers);
        }
    std::vector<double> pi(c_count, 1.0 / static_cast<double>(c_count));
    for (int it = 0; it < 500; ++it) {
        std::vector<double> next(c_count, 0.0);
        for (std::size_t p = 0; p < c_count; ++p)
            for (std::size_t c = 0; c < c_count; ++c) next[c] += pi[p] * t_bar[p][c];
        pi = next;
    }

    std::vector<double> freq(c_count, 0.0);
    double total = 0.0;
    for (const auto& conv : ds.conversations)
        for (const auto& u : conv.utterances) {
            freq[static_cast<std::size_t>(ds.class_index(u.label))] += 1.0;
            total += 1.0;
        }
    for (double& f : freq) f /= total;

    // Sticky chains are autocorrelated; inflate the binomial sigma by the
    // integrated autocorrelation time bound (1 + kappa) / (1 - kappa).
    const double tau = (1.0 + cfg.stickiness) / (1.0 - cfg.stickiness);
    for (std::size_t c = 0; c < c_count; ++c) {
        const double sigma = std::sqrt(pi[c] * (1.0 - pi[c]) * tau / total);
        CHECK(std::fabs(freq[c] - pi[c]) <= 3.0 * sigma + 0.005);
    }
}

TEST_CASE("split_dataset basics") {
    SyntheticConfig cfg;
    cfg.conversations = 10;
    cfg.seed = 5;
    const Dataset ds = dgode::gen_synthetic(cfg);

    const auto all_train = dgode::split_dataset(ds, {1.0, 0.0, 0.0}, 17);
    CHECK(all_train[0].conversations.size() == 10);
    CHECK(all_train[1].conversations.empty());
    CHECK(all_train[2].conversations.empty());

    const auto split = dgode::split_dataset(ds, {0.8, 0.1, 0.1}, 17);
    CHECK(split[0].conversations.size() == 8);
    CHECK(split[1].conversations.size() == 1);
    CHECK(split[2].conversations.size() == 1);

    const auto again = dgode::split_dataset(ds, {0.8, 0.1, 0.1}, 17);
    for (int part = 0; part < 3; ++part) {
        REQUIRE(again[part].conversations.size() == split[part].conversations.size());
        for (std::size_t c = 0; c < split[part].conversations.size(); ++c)
            CHECK(again[part].conversations[c].id == split[part].conversations[c].id);
    }

    // Conversation integrity: each conversation id lands in exactly one part.
    std::vector<std::string> seen;
    for (int part = 0; part < 3; ++part)
        for (const auto& conv : split[part].conversations) {
            CHECK(std::find(seen.begin(), seen.end(), conv.id) == seen.end());
            seen.push_back(conv.id);
        }
    CHECK(seen.size() == 10);

    CHECK_THROWS_AS(dgode::split_dataset(ds, {0.5, 0.1, 0.1}, 1), dgode::ConfigError);
    CHECK_THROWS_AS(dgode::split_dataset(ds, {1.2, -0.1, -0.1}, 1), dgode::ConfigError);
}
