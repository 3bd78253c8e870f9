#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "dgode/autodiff.hpp"
#include "dgode/dataio.hpp"
#include "dgode/encoder.hpp"
#include "dgode/graph.hpp"
#include "dgode/metrics.hpp"
#include "dgode/odecore.hpp"

namespace dgode {

struct AblationFlags {
    bool use_ode = true;
    bool use_mixhop = true;
};

/// Everything that fixes the model architecture and graph construction.
struct ModelConfig {
    std::size_t embed_dim = 16;    // shared post-encoder dimension d
    std::size_t gru_hidden = 16;
    std::size_t head_hidden = 64;
    double w_rho = 0.9;            // spectral bound of the propagation weight
    double w_ridge = 1e-3;         // ridge keeping the weight spectrum positive
    std::size_t mixhop_hops = 2;
    std::size_t mixhop_depth = 1;
    bool per_modality_weight = false;
    double alpha = 1.0;
    std::size_t w_past = 4;
    std::size_t w_future = 4;
    AblationFlags flags;
    std::size_t vanilla_layers = 0;  // > 0: plain stacked GCN, no mixhop/ODE/residual
    OdeConfig ode;
    double dropout = 0.5;

    void validate() const {
        if (embed_dim == 0 || gru_hidden == 0 || head_hidden == 0)
            throw ConfigError("ModelConfig: dimensions must be positive");
        if (mixhop_hops == 0) throw ConfigError("ModelConfig: mixhop_hops must be >= 1");
        if (!(alpha > 0.0 && alpha <= 1.0)) throw ConfigError("ModelConfig: alpha in (0, 1]");
        if (!(w_rho > 0.0 && w_rho < 1.0)) throw ConfigError("ModelConfig: w_rho in (0, 1)");
        if (!(w_ridge > 0.0)) throw ConfigError("ModelConfig: w_ridge must be > 0");
        if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("ModelConfig: dropout in [0, 1)");
        ode.validate();
    }
};

struct TrainConfig {
    double lr = 1e-3;
    std::size_t batch_size = 16;
    std::size_t epochs = 60;
    double l2 = 1e-5;
    double dropout = 0.5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    std::uint64_t seed = 1;

    void validate() const {
        if (!(lr > 0.0)) throw ConfigError("TrainConfig: lr must be > 0");
        if (batch_size == 0) throw ConfigError("TrainConfig: batch_size must be >= 1");
        if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("TrainConfig: dropout in [0, 1)");
        if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0))
            throw ConfigError("TrainConfig: betas in [0, 1)");
        if (!(adam_eps > 0.0)) throw ConfigError("TrainConfig: adam_eps must be > 0");
    }
};

struct NamedTensor {
    std::string name;
    DenseMatrix* tensor;
    bool is_bias;
};

/// All learnable state plus the registries needed to apply it to data.
struct ModelParams {
    ModelConfig config;
    std::vector<std::string> class_names;
    std::vector<std::string> speaker_names;
    std::size_t dim_text = 0, dim_audio = 0, dim_visual = 0;

    SpeakerTable speaker;
    std::array<ModalityEncoder, kModalityCount> encoders;
    DenseMatrix mix_v;                                   // V behind the mixhop/vanilla weight
    std::array<DenseMatrix, kModalityCount> mix_v_mod;   // per-modality V (optional)
    DenseMatrix ode_v;                                   // V behind the ODE weight
    DenseMatrix hop_gates;                               // 1 x P, projected >= 0
    DenseMatrix head_w1, head_b1, head_w2, head_b2;

    static ModelParams init(const ModelConfig& cfg, const DatasetHeader& header,
                            const std::vector<std::string>& speakers, std::uint64_t seed) {
        cfg.validate();
        if (header.classes.size() < 2) throw ConfigError("ModelParams: need at least 2 classes");
        ModelParams p;
        p.config = cfg;
        p.class_names = header.classes;
        p.speaker_names = speakers;
        p.dim_text = header.dim_text;
        p.dim_audio = header.dim_audio;
        p.dim_visual = header.dim_visual;

        std::mt19937_64 rng(seed);
        const std::size_t d = cfg.embed_dim;
        auto uniform = [&](std::size_t r, std::size_t c, std::size_t fan_in) {
            DenseMatrix m(r, c);
            const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
            m.fill_uniform(rng, -bound, bound);
            return m;
        };

        p.speaker.weight = uniform(d, std::max<std::size_t>(speakers.size(), 1), d);
        const std::size_t dims[3] = {header.dim_text, header.dim_audio, header.dim_visual};
        for (std::size_t m = 0; m < kModalityCount; ++m)
            p.encoders[m] = ModalityEncoder::init(dims[m], cfg.gru_hidden, d, rng);
        // Propagation weights start near the identity so V V^T has a flat
        // spectrum: W begins as a gentle uniform contraction instead of a
        // low-rank bottleneck, and training reshapes directions from there.
        auto near_identity = [&](std::size_t n) {
            DenseMatrix m = uniform(n, n, n);
            m *= 0.1;
            return DenseMatrix(m + DenseMatrix::identity(n));
        };
        p.mix_v = near_identity(d);
        for (std::size_t m = 0; m < kModalityCount; ++m) p.mix_v_mod[m] = near_identity(d);
        p.ode_v = near_identity(d);
        // Gates open gently: hop p starts at 1 / 2^(p+1) so the first step
        // leans on the residual and lets training grow the mixing it needs.
        p.hop_gates = DenseMatrix(1, cfg.mixhop_hops);
        for (std::size_t pgi = 0; pgi < cfg.mixhop_hops; ++pgi)
            p.hop_gates(0, pgi) = std::pow(0.5, static_cast<double>(pgi) + 1.0);
        p.head_w1 = uniform(d, cfg.head_hidden, d);
        p.head_b1 = DenseMatrix(1, cfg.head_hidden);
        p.head_w2 = uniform(cfg.head_hidden, header.classes.size(), cfg.head_hidden);
        p.head_b2 = DenseMatrix(1, header.classes.size());
        return p;
    }

    int speaker_index(const std::string& id) const {
        for (std::size_t i = 0; i < speaker_names.size(); ++i)
            if (speaker_names[i] == id) return static_cast<int>(i);
        return -1;
    }

    /// Learnable tensors in a fixed order. Tensors that the current flag set
    /// leaves unused are omitted so optimizer state and gradient checks cover
    /// exactly the live parameter set.
    std::vector<NamedTensor> tensors() {
        std::vector<NamedTensor> out;
        out.push_back({"speaker_table", &speaker.weight, false});
        const char* mods[3] = {"text", "audio", "visual"};
        for (std::size_t m = 0; m < kModalityCount; ++m) {
            auto cell = [&](const char* dir, GruCellParams& c) {
                const std::string base = std::string("enc_") + mods[m] + "_" + dir + "_";
                out.push_back({base + "wz", &c.wz, false});
                out.push_back({base + "uz", &c.uz, false});
                out.push_back({base + "bz", &c.bz, true});
                out.push_back({base + "wr", &c.wr, false});
                out.push_back({base + "ur", &c.ur, false});
                out.push_back({base + "br", &c.br, true});
                out.push_back({base + "wh", &c.wh, false});
                out.push_back({base + "uh", &c.uh, false});
                out.push_back({base + "bh", &c.bh, true});
            };
            cell("fwd", encoders[m].forward_cell);
            cell("bwd", encoders[m].backward_cell);
            out.push_back({std::string("enc_") + mods[m] + "_proj", &encoders[m].projection,
                           false});
        }
        const bool needs_mix_v =
            config.vanilla_layers > 0 ||
            (config.flags.use_mixhop && !config.per_modality_weight);
        if (needs_mix_v) out.push_back({"mix_v", &mix_v, false});
        if (config.per_modality_weight && config.flags.use_mixhop &&
            config.vanilla_layers == 0)
            for (std::size_t m = 0; m < kModalityCount; ++m)
                out.push_back({std::string("mix_v_") + mods[m], &mix_v_mod[m], false});
        if (config.flags.use_ode && config.vanilla_layers == 0)
            out.push_back({"ode_v", &ode_v, false});
        if (config.flags.use_mixhop && config.vanilla_layers == 0)
            out.push_back({"hop_gates", &hop_gates, false});
        out.push_back({"head_w1", &head_w1, false});
        out.push_back({"head_b1", &head_b1, true});
        out.push_back({"head_w2", &head_w2, false});
        out.push_back({"head_b2", &head_b2, true});
        return out;
    }

    void assert_finite() {
        for (const auto& nt : tensors()) nt.tensor->assert_finite(nt.name.c_str());
    }
};

/// Per-conversation constants shared across epochs: raw modal sequences,
/// speaker/label indices, the normalized adjacency with its eigensystem, and
/// the derived spectral constants the tape treats as fixed.
struct ConvContext {
    std::array<std::vector<std::vector<double>>, kModalityCount> sequences;
    std::vector<int> speaker_idx;  // -1 for unregistered speakers
    std::vector<int> labels;
    NormalizedAdjacency adj;
    std::vector<DenseMatrix> adj_powers;  // A_hat^1 .. A_hat^P
    DenseMatrix vanilla_adj_pow;          // A_hat^L when the vanilla baseline is active
    DenseMatrix log_adj;
    std::vector<double> adj_logvals;
    std::vector<double> adj_shiftvals;
    DenseMatrix pool;  // utterances x nodes mean-readout matrix

    std::size_t utterance_count() const { return labels.size(); }
};

inline ConvContext prepare_conversation(const DatasetConversation& conv,
                                        const Dataset& ds, const ModelParams& params) {
    if (conv.utterances.empty()) throw EmptyInputError("prepare_conversation: empty conversation");
    ConvContext ctx;
    const std::size_t m_utt = conv.utterances.size();
    for (const auto& u : conv.utterances) {
        if (u.text.size() != params.dim_text || u.audio.size() != params.dim_audio ||
            u.visual.size() != params.dim_visual)
            throw DimensionError("prepare_conversation: feature dims do not match the model");
        ctx.sequences[0].push_back(u.text);
        ctx.sequences[1].push_back(u.audio);
        ctx.sequences[2].push_back(u.visual);
        ctx.speaker_idx.push_back(params.speaker_index(u.speaker_id));
        const int label = ds.class_index(u.label);
        if (label < 0) throw LabelError("prepare_conversation: unknown label " + u.label);
        ctx.labels.push_back(label);
    }

    const DenseMatrix a = conversation_adjacency(m_utt, params.config.w_past,
                                                 params.config.w_future);
    ctx.adj = normalize_adjacency(a, params.config.alpha);

    const std::size_t hops = params.config.mixhop_hops;
    DenseMatrix power = ctx.adj.matrix;
    for (std::size_t p = 0; p < hops; ++p) {
        ctx.adj_powers.push_back(power);
        if (p + 1 < hops) power = power * ctx.adj.matrix;
    }
    if (params.config.vanilla_layers > 0)
        ctx.vanilla_adj_pow = mat_pow_int(ctx.adj.matrix, params.config.vanilla_layers);

    const double eps = params.config.ode.clamp_eps;
    ctx.log_adj = ctx.adj.eig.apply([eps](double l) { return std::log(std::max(l, eps)); });
    ctx.adj_logvals.resize(ctx.adj.eig.values.size());
    ctx.adj_shiftvals.resize(ctx.adj.eig.values.size());
    for (std::size_t i = 0; i < ctx.adj.eig.values.size(); ++i) {
        ctx.adj_logvals[i] = std::log(std::max(ctx.adj.eig.values[i], eps));
        ctx.adj_shiftvals[i] = ctx.adj.eig.values[i] - 1.0;
    }

    ctx.pool = DenseMatrix(m_utt, kModalityCount * m_utt);
    for (std::size_t u = 0; u < m_utt; ++u)
        for (std::size_t m = 0; m < kModalityCount; ++m)
            ctx.pool(u, kModalityCount * u + m) = 1.0 / static_cast<double>(kModalityCount);
    return ctx;
}

inline std::vector<ConvContext> prepare_dataset(const Dataset& ds, const ModelParams& params) {
    std::vector<ConvContext> out;
    out.reserve(ds.conversations.size());
    for (const auto& conv : ds.conversations) out.push_back(prepare_conversation(conv, ds, params));
    return out;
}

namespace detail {

struct ModelVars {
    std::vector<ad::Var> flat;  // aligned with ModelParams::tensors()
    ad::Var speaker;
    std::array<ad_ops::ModalityEncoderVars, kModalityCount> encoders;
    ad::Var mix_v, ode_v, hop_gates;
    std::array<ad::Var, kModalityCount> mix_v_mod;
    ad::Var head_w1, head_b1, head_w2, head_b2;
    bool has_shared = false;
    bool has_per_modality = false;
    bool has_ode_v = false;
};

inline ModelVars push_params(ad::Tape& t, ModelParams& params) {
    ModelVars v;
    const auto tensors = params.tensors();
    v.flat.reserve(tensors.size());
    for (const auto& nt : tensors) v.flat.push_back(t.push(*nt.tensor));

    std::size_t k = 0;
    auto take = [&]() { return v.flat[k++]; };
    v.speaker = take();
    for (std::size_t m = 0; m < kModalityCount; ++m) {
        auto cell = [&]() {
            ad_ops::GruCellVars c;
            c.wz = take();
            c.uz = take();
            c.bz = take();
            c.wr = take();
            c.ur = take();
            c.br = take();
            c.wh = take();
            c.uh = take();
            c.bh = take();
            return c;
        };
        v.encoders[m].forward_cell = cell();
        v.encoders[m].backward_cell = cell();
        v.encoders[m].projection = take();
    }
    const auto& cfg = params.config;
    const bool needs_mix_v =
        cfg.vanilla_layers > 0 || (cfg.flags.use_mixhop && !cfg.per_modality_weight);
    if (needs_mix_v) {
        v.mix_v = take();
        v.has_shared = true;
    }
    if (cfg.per_modality_weight && cfg.flags.use_mixhop && cfg.vanilla_layers == 0) {
        for (std::size_t m = 0; m < kModalityCount; ++m) v.mix_v_mod[m] = take();
        v.has_per_modality = true;
    }
    if (cfg.flags.use_ode && cfg.vanilla_layers == 0) {
        v.ode_v = take();
        v.has_ode_v = true;
    }
    if (cfg.flags.use_mixhop && cfg.vanilla_layers == 0) v.hop_gates = take();
    v.head_w1 = take();
    v.head_b1 = take();
    v.head_w2 = take();
    v.head_b2 = take();
    return v;
}

/// Modality-m node selector (utterances x nodes) for utterance-major layout.
inline DenseMatrix modality_selector(std::size_t utterances, std::size_t m) {
    DenseMatrix s(utterances, kModalityCount * utterances);
    for (std::size_t u = 0; u < utterances; ++u) s(u, kModalityCount * u + m) = 1.0;
    return s;
}

}  // namespace detail

struct ForwardResult {
    DenseMatrix probs;     // utterances x classes
    double ce_sum = 0.0;   // summed cross entropy over utterances
    ad::Var ce_var;        // tape node for the summed cross entropy
    std::vector<ad::Var> leaves;
};

/// Build the full pipeline on a tape: encode -> fuse -> (mixhop) -> (ODE or
/// stacked vanilla layers) -> readout -> head. Dropout masks come from `rng`
/// only in train mode.
inline ForwardResult build_forward(ad::Tape& t, ModelParams& params, const ConvContext& ctx,
                                   bool train_mode, std::mt19937_64* rng) {
    const auto& cfg = params.config;
    cfg.validate();
    const std::size_t m_utt = ctx.utterance_count();
    const std::size_t d = cfg.embed_dim;

    detail::ModelVars vars = detail::push_params(t, params);

    // Speaker rows; unknown speakers contribute a zero embedding.
    std::vector<ad::Var> speaker_rows(m_utt);
    const ad::Var zero_row = t.push(DenseMatrix(1, d));
    for (std::size_t i = 0; i < m_utt; ++i)
        speaker_rows[i] = ctx.speaker_idx[i] >= 0
                              ? ad::col_as_row(t, vars.speaker,
                                               static_cast<std::size_t>(ctx.speaker_idx[i]))
                              : zero_row;

    // Per-modality bidirectional encoding plus additive speaker fusion,
    // assembled into the node feature matrix (utterance-major, modality inner).
    std::vector<ad::Var> node_rows(kModalityCount * m_utt);
    for (std::size_t m = 0; m < kModalityCount; ++m) {
        std::vector<ad::Var> xs(m_utt);
        for (std::size_t i = 0; i < m_utt; ++i) {
            DenseMatrix row(1, ctx.sequences[m][i].size());
            row.set_row(0, ctx.sequences[m][i]);
            xs[i] = t.push(std::move(row));
        }
        const auto outs = ad_ops::encode_modality(t, xs, vars.encoders[m], cfg.gru_hidden);
        for (std::size_t i = 0; i < m_utt; ++i)
            node_rows[kModalityCount * i + m] = ad::add(t, outs[i], speaker_rows[i]);
    }
    ad::Var h = ad::stack_rows(t, node_rows);

    const bool wants_shared = vars.has_shared;
    ad::Var shared_w;
    if (wants_shared) shared_w = ad::spd_bounded(t, vars.mix_v, cfg.w_rho, cfg.w_ridge);

    if (cfg.vanilla_layers > 0) {
        // Plain stacked GCN: H <- A_hat H W per layer, no residual, no ODE.
        // With one shared weight and no activation the L-layer stack is
        // exactly A_hat^L H W^L, so it is evaluated spectrally in two
        // products regardless of depth.
        const double layers = static_cast<double>(cfg.vanilla_layers);
        const ad::Var w_pow = ad::sym_matfunc(
            t, shared_w, [layers](double l) { return std::pow(l, layers); },
            [layers](double l) { return layers * std::pow(l, layers - 1.0); });
        h = ad::matmul(t, ad::matmul(t, t.push(ctx.vanilla_adj_pow), h), w_pow);
    } else {
        if (cfg.flags.use_mixhop) {
            std::vector<ad::Var> powers;
            for (const auto& p : ctx.adj_powers) powers.push_back(t.push(p));
            std::array<ad::Var, kModalityCount> w_mod;
            std::array<DenseMatrix, kModalityCount> selectors;
            if (cfg.per_modality_weight)
                for (std::size_t m = 0; m < kModalityCount; ++m) {
                    w_mod[m] = ad::spd_bounded(t, vars.mix_v_mod[m], cfg.w_rho, cfg.w_ridge);
                    selectors[m] = detail::modality_selector(m_utt, m);
                }
            const ad::Var h0 = h;
            for (std::size_t step = 0; step < cfg.mixhop_depth; ++step) {
                ad::Var mixed = ad::scale_by(t, ad::matmul(t, powers[0], h),
                                             ad::entry(t, vars.hop_gates, 0, 0));
                for (std::size_t p = 1; p < cfg.mixhop_hops; ++p)
                    mixed = ad::add(t, mixed,
                                    ad::scale_by(t, ad::matmul(t, powers[p], h),
                                                 ad::entry(t, vars.hop_gates, 0, p)));
                if (cfg.per_modality_weight) {
                    ad::Var acc = t.push(DenseMatrix(kModalityCount * m_utt, d));
                    for (std::size_t m = 0; m < kModalityCount; ++m) {
                        const ad::Var rows = ad::matmul(t, t.push(selectors[m]), mixed);
                        const ad::Var propagated = ad::matmul(t, rows, w_mod[m]);
                        acc = ad::add(t, acc,
                                      ad::matmul(t, t.push(selectors[m].transpose()), propagated));
                    }
                    h = ad::add(t, acc, h0);
                } else {
                    h = ad::add(t, ad::matmul(t, mixed, shared_w), h0);
                }
            }
        }
        if (cfg.flags.use_ode) {
            const ad::Var w_ode = ad::spd_bounded(t, vars.ode_v, cfg.w_rho, cfg.w_ridge);
            const ad::Var e = h;
            const double t_end = cfg.ode.t_end;
            const double delta = cfg.ode.sing_tol;
            const double eps = cfg.ode.clamp_eps;
            const auto& p_mat = ctx.adj.eig.vectors;
            const auto& p_inv = ctx.adj.eig.inverse;

            if (t_end == 0.0) {
                h = ad::bispec_integral(t, w_ode, e, p_mat, p_inv, ctx.adj_logvals,
                                        ad::SpectralShift::log_clamped, 1.0, delta, eps);
            } else {
                switch (cfg.ode.method) {
                    case OdeMethod::closed_form_exact:
                        h = ad::bispec_integral(t, w_ode, e, p_mat, p_inv, ctx.adj_logvals,
                                                ad::SpectralShift::log_clamped, t_end + 1.0,
                                                delta, eps);
                        break;
                    case OdeMethod::closed_form_shifted: {
                        const DenseMatrix exp_adj = ctx.adj.eig.apply(
                            [t_end](double l) { return std::exp(t_end * (l - 1.0)); });
                        const ad::Var exp_w = ad::sym_matfunc(
                            t, w_ode,
                            [t_end](double l) { return std::exp(t_end * (l - 1.0)); },
                            [t_end](double l) { return t_end * std::exp(t_end * (l - 1.0)); });
                        const ad::Var first =
                            ad::matmul(t, ad::matmul(t, t.push(exp_adj), e), exp_w);
                        const ad::Var f_term = ad::bispec_integral(
                            t, w_ode, e, p_mat, p_inv, ctx.adj_shiftvals,
                            ad::SpectralShift::shifted, t_end, delta, eps);
                        h = ad::add(t, first, f_term);
                        break;
                    }
                    case OdeMethod::euler:
                    case OdeMethod::rk4: {
                        const ad::Var log_w = ad::sym_matfunc_log(t, w_ode, eps);
                        const ad::Var log_a = t.push(ctx.log_adj);
                        auto rhs = [&](ad::Var state) {
                            return ad::add(
                                t, ad::add(t, ad::matmul(t, log_a, state),
                                           ad::matmul(t, state, log_w)),
                                e);
                        };
                        h = ad::bispec_integral(t, w_ode, e, p_mat, p_inv, ctx.adj_logvals,
                                                ad::SpectralShift::log_clamped, 1.0, delta, eps);
                        const double dt = t_end / static_cast<double>(cfg.ode.steps);
                        for (std::size_t s = 0; s < cfg.ode.steps; ++s) {
                            if (cfg.ode.method == OdeMethod::euler) {
                                h = ad::add(t, h, ad::scale(t, rhs(h), dt));
                            } else {
                                const ad::Var k1 = rhs(h);
                                const ad::Var k2 = rhs(ad::add(t, h, ad::scale(t, k1, 0.5 * dt)));
                                const ad::Var k3 = rhs(ad::add(t, h, ad::scale(t, k2, 0.5 * dt)));
                                const ad::Var k4 = rhs(ad::add(t, h, ad::scale(t, k3, dt)));
                                ad::Var incr = ad::add(t, k1, k4);
                                incr = ad::add(t, incr, ad::scale(t, ad::add(t, k2, k3), 2.0));
                                h = ad::add(t, h, ad::scale(t, incr, dt / 6.0));
                            }
                        }
                        break;
                    }
                }
            }
        }
    }

    // Mean over each utterance's three modality nodes, then the head.
    ad::Var pooled = ad::matmul(t, t.push(ctx.pool), h);
    ad::Var hidden = ad::relu(
        t, ad::add_row_broadcast(t, ad::matmul(t, pooled, vars.head_w1), vars.head_b1));
    if (train_mode && cfg.dropout > 0.0) {
        if (rng == nullptr) throw ConfigError("build_forward: dropout needs an RNG in train mode");
        std::bernoulli_distribution keep(1.0 - cfg.dropout);
        DenseMatrix mask(t.val(hidden).rows(), t.val(hidden).cols());
        const double scale = 1.0 / (1.0 - cfg.dropout);
        for (double& v : mask.data()) v = keep(*rng) ? scale : 0.0;
        hidden = ad::hadamard(t, hidden, t.push(std::move(mask)));
    }
    ad::Var logits = ad::add_row_broadcast(t, ad::matmul(t, hidden, vars.head_w2), vars.head_b2);

    auto [ce, probs] = ad::softmax_ce_sum(t, logits, ctx.labels);

    ForwardResult result;
    result.probs = std::move(probs);
    result.ce_sum = t.val(ce)(0, 0);
    result.ce_var = ce;
    result.leaves = std::move(vars.flat);
    return result;
}

/// Probability rows for one conversation (no gradient bookkeeping kept).
inline DenseMatrix forward(ModelParams& params, const ConvContext& ctx, bool train_mode = false,
                           std::mt19937_64* rng = nullptr) {
    ad::Tape t;
    return build_forward(t, params, ctx, train_mode, rng).probs;
}

/// Argmax with ties broken toward the lowest index.
inline int predict_label(const std::vector<double>& prob_row) {
    if (prob_row.empty()) throw EmptyInputError("predict_label: empty probability row");
    std::size_t best = 0;
    for (std::size_t j = 1; j < prob_row.size(); ++j)
        if (prob_row[j] > prob_row[best]) best = j;
    return static_cast<int>(best);
}

/// Mean negative log-likelihood (probabilities floored at 1e-12) plus
/// l2 times the squared non-bias weights.
inline double loss(const DenseMatrix& probs, const std::vector<int>& labels,
                   ModelParams& params, double l2) {
    if (probs.rows() != labels.size()) throw DimensionError("loss: label count mismatch");
    double ce = 0.0;
    for (std::size_t i = 0; i < probs.rows(); ++i) {
        const int y = labels[i];
        if (y < 0 || static_cast<std::size_t>(y) >= probs.cols())
            throw LabelError("loss: label out of range");
        ce -= std::log(std::max(probs(i, static_cast<std::size_t>(y)), 1e-12));
    }
    ce /= static_cast<double>(probs.rows());
    if (l2 > 0.0)
        for (const auto& nt : params.tensors())
            if (!nt.is_bias)
                for (double v : nt.tensor->data()) ce += l2 * v * v;
    return ce;
}

struct GradientSet {
    double loss = 0.0;
    std::vector<DenseMatrix> grads;  // aligned with ModelParams::tensors()
};

/// Batch objective: summed cross entropy over all utterances divided by the
/// utterance count, plus the L2 penalty on non-bias weights.
inline double forward_loss(ModelParams& params, const std::vector<const ConvContext*>& batch,
                           double l2, bool train_mode, std::uint64_t dropout_seed) {
    std::mt19937_64 rng(dropout_seed);
    double ce = 0.0;
    std::size_t utt = 0;
    for (const ConvContext* ctx : batch) {
        ad::Tape t;
        ce += build_forward(t, params, *ctx, train_mode, &rng).ce_sum;
        utt += ctx->utterance_count();
    }
    double total = ce / static_cast<double>(utt);
    if (l2 > 0.0)
        for (const auto& nt : params.tensors())
            if (!nt.is_bias)
                for (double v : nt.tensor->data()) total += l2 * v * v;
    return total;
}

/// Reverse-mode gradients of the batch objective for every live tensor.
inline GradientSet backward(ModelParams& params, const std::vector<const ConvContext*>& batch,
                            double l2, bool train_mode, std::uint64_t dropout_seed) {
    auto tensors = params.tensors();
    GradientSet gs;
    gs.grads.reserve(tensors.size());
    for (const auto& nt : tensors)
        gs.grads.push_back(DenseMatrix(nt.tensor->rows(), nt.tensor->cols()));

    std::mt19937_64 rng(dropout_seed);
    double ce = 0.0;
    std::size_t utt = 0;
    for (const ConvContext* ctx : batch) utt += ctx->utterance_count();
    const double inv_utt = 1.0 / static_cast<double>(utt);

    for (const ConvContext* ctx : batch) {
        ad::Tape t;
        ForwardResult fr = build_forward(t, params, *ctx, train_mode, &rng);
        ce += fr.ce_sum;
        t.backward(fr.ce_var);
        for (std::size_t k = 0; k < tensors.size(); ++k)
            gs.grads[k] += inv_utt * t.grad(fr.leaves[k]);
    }
    gs.loss = ce * inv_utt;
    if (l2 > 0.0) {
        for (std::size_t k = 0; k < tensors.size(); ++k) {
            if (tensors[k].is_bias) continue;
            for (double v : tensors[k].tensor->data()) gs.loss += l2 * v * v;
            gs.grads[k] += (2.0 * l2) * (*tensors[k].tensor);
        }
    }
    return gs;
}

struct GradCheckResult {
    double max_rel_err = 0.0;
    std::string worst_tensor;
};

/// Compare every live tensor's reverse-mode gradient against central finite
/// differences of the batch objective. Relative error uses
/// |fd - grad| / max(|fd|, |grad|, 1e-6).
inline GradCheckResult gradient_check(ModelParams& params,
                                      const std::vector<const ConvContext*>& batch, double l2,
                                      double fd_step = 1e-5, std::uint64_t dropout_seed = 0,
                                      bool train_mode = true) {
    const GradientSet gs = backward(params, batch, l2, train_mode, dropout_seed);
    auto tensors = params.tensors();
    GradCheckResult result;
    for (std::size_t k = 0; k < tensors.size(); ++k) {
        DenseMatrix& tensor = *tensors[k].tensor;
        for (std::size_t i = 0; i < tensor.data().size(); ++i) {
            const double saved = tensor.data()[i];
            tensor.data()[i] = saved + fd_step;
            const double fp = forward_loss(params, batch, l2, train_mode, dropout_seed);
            tensor.data()[i] = saved - fd_step;
            const double fm = forward_loss(params, batch, l2, train_mode, dropout_seed);
            tensor.data()[i] = saved;
            const double fd = (fp - fm) / (2.0 * fd_step);
            const double an = gs.grads[k].data()[i];
            const double rel = std::fabs(fd - an) / std::max({std::fabs(fd), std::fabs(an), 1e-6});
            if (rel > result.max_rel_err) {
                result.max_rel_err = rel;
                result.worst_tensor = tensors[k].name;
            }
        }
    }
    return result;
}

struct AdamState {
    std::vector<DenseMatrix> m;
    std::vector<DenseMatrix> v;
    std::size_t step = 0;

    static AdamState init(ModelParams& params) {
        AdamState s;
        for (const auto& nt : params.tensors()) {
            s.m.push_back(DenseMatrix(nt.tensor->rows(), nt.tensor->cols()));
            s.v.push_back(DenseMatrix(nt.tensor->rows(), nt.tensor->cols()));
        }
        return s;
    }
};

/// Standard Adam with bias correction; hop gates are projected back to >= 0
/// afterwards.
inline void adam_step(ModelParams& params, const GradientSet& gs, const TrainConfig& cfg,
                      AdamState& state) {
    auto tensors = params.tensors();
    if (gs.grads.size() != tensors.size() || state.m.size() != tensors.size())
        throw DimensionError("adam_step: gradient/state tensor count mismatch");
    ++state.step;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (std::size_t k = 0; k < tensors.size(); ++k) {
        DenseMatrix& p = *tensors[k].tensor;
        for (std::size_t i = 0; i < p.data().size(); ++i) {
            const double g = gs.grads[k].data()[i];
            double& m = state.m[k].data()[i];
            double& v = state.v[k].data()[i];
            m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
            v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
            p.data()[i] -= cfg.lr * (m / bc1) / (std::sqrt(v / bc2) + cfg.adam_eps);
        }
        if (tensors[k].name == "hop_gates")
            for (double& g : p.data()) g = std::max(g, 0.0);
    }
    params.assert_finite();
}

/// Evaluation over prepared conversations (no dropout, read-only params).
inline MetricsReport evaluate_contexts(ModelParams& params,
                                       const std::vector<ConvContext>& contexts) {
    if (contexts.empty()) throw EmptyInputError("evaluate: empty split");
    std::vector<int> labels, predictions;
    for (const auto& ctx : contexts) {
        const DenseMatrix probs = forward(params, ctx, false, nullptr);
        for (std::size_t i = 0; i < probs.rows(); ++i) {
            labels.push_back(ctx.labels[i]);
            predictions.push_back(predict_label(probs.row(i)));
        }
    }
    return evaluate_predictions(labels, predictions, params.class_names);
}

inline MetricsReport evaluate(const Dataset& split, ModelParams& params) {
    return evaluate_contexts(params, prepare_dataset(split, params));
}

struct EpochRecord {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double val_wf1 = 0.0;
    double wall_ms = 0.0;  // console-only; excluded from artifact files
};

struct TrainLog {
    std::vector<EpochRecord> epochs;
    std::size_t best_epoch = 0;
    double best_val_wf1 = -1.0;
};

/// Mini-batch training with a seeded shuffle; retains the parameters with the
/// best validation weighted F1.
inline TrainLog train(const Dataset& train_split, const Dataset& val_split, ModelParams& params,
                      const TrainConfig& cfg, bool log_to_stderr = false) {
    cfg.validate();
    if (train_split.conversations.empty()) throw EmptyInputError("train: empty training split");
    params.config.dropout = cfg.dropout;

    const auto train_ctx = prepare_dataset(train_split, params);
    const auto val_ctx = prepare_dataset(val_split, params);

    AdamState adam = AdamState::init(params);
    std::mt19937_64 shuffle_rng(cfg.seed);
    std::mt19937_64 dropout_seeder(cfg.seed ^ 0x9e3779b97f4a7c15ULL);

    TrainLog log;
    ModelParams best = params;
    std::vector<std::size_t> order(train_ctx.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const auto started = std::chrono::steady_clock::now();
        std::shuffle(order.begin(), order.end(), shuffle_rng);

        double loss_sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
            std::vector<const ConvContext*> batch;
            for (std::size_t i = begin; i < std::min(begin + cfg.batch_size, order.size()); ++i)
                batch.push_back(&train_ctx[order[i]]);
            const GradientSet gs = backward(params, batch, cfg.l2, true, dropout_seeder());
            adam_step(params, gs, cfg, adam);
            loss_sum += gs.loss;
            ++batches;
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = loss_sum / static_cast<double>(batches);
        rec.val_wf1 = val_ctx.empty() ? 0.0 : evaluate_contexts(params, val_ctx).weighted_f1;
        rec.wall_ms = std::chrono::duration<double, std::milli>(
                          std::chrono::steady_clock::now() - started)
                          .count();
        log.epochs.push_back(rec);
        if (log_to_stderr)
            std::fprintf(stderr, "epoch %zu train_loss %.6f val_wf1 %.4f (%.0f ms)\n", epoch,
                         rec.train_loss, rec.val_wf1, rec.wall_ms);

        if (rec.val_wf1 > log.best_val_wf1) {
            log.best_val_wf1 = rec.val_wf1;
            log.best_epoch = epoch;
            best = params;
        }
    }
    if (!log.epochs.empty() && !val_ctx.empty()) params = best;
    return log;
}

struct SweepRecord {
    std::string method;  // "dgode" or "vanilla_gcn"
    std::size_t depth = 0;
    std::vector<double> wf1_per_seed;
    double wf1_median = 0.0;
};

inline double median_of(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Train-and-evaluate curves over depth: DGODE with t_end = depth against a
/// vanilla stacked GCN with `depth` layers, each repeated over seeds.
inline std::vector<SweepRecord> depth_sweep(const Dataset& train_split, const Dataset& val_split,
                                            const Dataset& test_split,
                                            const ModelConfig& base_config,
                                            const TrainConfig& base_train,
                                            const std::vector<std::size_t>& depths,
                                            std::size_t n_seeds, bool log_to_stderr = false) {
    if (depths.empty()) throw ConfigError("depth_sweep: need at least one depth");
    if (n_seeds == 0) throw ConfigError("depth_sweep: need at least one seed");
    std::vector<SweepRecord> records;
    const auto speakers = train_split.speakers();

    for (const char* method : {"dgode", "vanilla_gcn"}) {
        for (std::size_t depth : depths) {
            SweepRecord rec;
            rec.method = method;
            rec.depth = depth;
            for (std::size_t s = 0; s < n_seeds; ++s) {
                ModelConfig cfg = base_config;
                TrainConfig tc = base_train;
                tc.seed = base_train.seed + s;
                if (std::string(method) == "dgode") {
                    cfg.flags.use_ode = true;
                    cfg.flags.use_mixhop = true;
                    cfg.vanilla_layers = 0;
                    cfg.ode.t_end = static_cast<double>(depth);
                    cfg.ode.method = OdeMethod::closed_form_exact;
                } else {
                    cfg.flags.use_ode = false;
                    cfg.flags.use_mixhop = false;
                    cfg.vanilla_layers = depth;
                }
                ModelParams params =
                    ModelParams::init(cfg, train_split.header, speakers, tc.seed);
                train(train_split, val_split, params, tc, false);
                const double wf1 = evaluate(test_split, params).weighted_f1;
                rec.wf1_per_seed.push_back(wf1);
                if (log_to_stderr)
                    std::fprintf(stderr, "sweep %s depth %zu seed %zu wf1 %.4f\n", method, depth,
                                 s, wf1);
            }
            rec.wf1_median = median_of(rec.wf1_per_seed);
            records.push_back(std::move(rec));
        }
    }
    return records;
}

// ---------------------------------------------------------------------------
// Textual parameter dump (versioned, diff-able).

inline void save_params(ModelParams& params, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error("save_params: cannot open " + path);
    char buf[64];
    out << "dgode-params v1\n";
    const auto& c = params.config;
    out << "meta embed_dim " << c.embed_dim << "\n";
    out << "meta gru_hidden " << c.gru_hidden << "\n";
    out << "meta head_hidden " << c.head_hidden << "\n";
    out << "meta mixhop_hops " << c.mixhop_hops << "\n";
    out << "meta mixhop_depth " << c.mixhop_depth << "\n";
    out << "meta per_modality_weight " << (c.per_modality_weight ? 1 : 0) << "\n";
    out << "meta use_ode " << (c.flags.use_ode ? 1 : 0) << "\n";
    out << "meta use_mixhop " << (c.flags.use_mixhop ? 1 : 0) << "\n";
    out << "meta vanilla_layers " << c.vanilla_layers << "\n";
    out << "meta w_past " << c.w_past << "\n";
    out << "meta w_future " << c.w_future << "\n";
    out << "meta ode_steps " << c.ode.steps << "\n";
    out << "meta ode_method " << ode_method_name(c.ode.method) << "\n";
    std::snprintf(buf, sizeof buf, "%.17g", c.alpha);
    out << "meta alpha " << buf << "\n";
    std::snprintf(buf, sizeof buf, "%.17g", c.w_rho);
    out << "meta w_rho " << buf << "\n";
    std::snprintf(buf, sizeof buf, "%.17g", c.w_ridge);
    out << "meta w_ridge " << buf << "\n";
    std::snprintf(buf, sizeof buf, "%.17g", c.ode.t_end);
    out << "meta ode_t_end " << buf << "\n";
    std::snprintf(buf, sizeof buf, "%.17g", c.ode.sing_tol);
    out << "meta ode_sing_tol " << buf << "\n";
    std::snprintf(buf, sizeof buf, "%.17g", c.ode.clamp_eps);
    out << "meta ode_clamp_eps " << buf << "\n";
    std::snprintf(buf, sizeof buf, "%.17g", c.dropout);
    out << "meta dropout " << buf << "\n";
    out << "meta dim_text " << params.dim_text << "\n";
    out << "meta dim_audio " << params.dim_audio << "\n";
    out << "meta dim_visual " << params.dim_visual << "\n";
    out << "classes";
    for (const auto& name : params.class_names) out << " " << name;
    out << "\nspeakers";
    for (const auto& name : params.speaker_names) out << " " << name;
    out << "\n";
    for (const auto& nt : params.tensors()) {
        out << "tensor " << nt.name << " " << nt.tensor->rows() << " " << nt.tensor->cols()
            << "\n";
        for (std::size_t i = 0; i < nt.tensor->rows(); ++i) {
            for (std::size_t j = 0; j < nt.tensor->cols(); ++j) {
                std::snprintf(buf, sizeof buf, "%.17g", (*nt.tensor)(i, j));
                out << (j ? " " : "") << buf;
            }
            out << "\n";
        }
    }
}

inline ModelParams load_params(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("load_params: cannot open " + path);
    std::string line;
    if (!std::getline(in, line) || line != "dgode-params v1")
        throw ParseError("unrecognized parameter dump version", 1);

    ModelConfig cfg;
    DatasetHeader header;
    std::vector<std::string> speakers;
    std::map<std::string, std::string> meta;
    std::size_t line_no = 1;
    std::streampos tensor_start = in.tellg();

    while (std::getline(in, line)) {
        ++line_no;
        std::istringstream ss(line);
        std::string kind;
        ss >> kind;
        if (kind == "meta") {
            std::string key, value;
            ss >> key >> value;
            meta[key] = value;
        } else if (kind == "classes") {
            std::string name;
            while (ss >> name) header.classes.push_back(name);
        } else if (kind == "speakers") {
            std::string name;
            while (ss >> name) speakers.push_back(name);
        } else if (kind == "tensor") {
            break;
        } else if (!kind.empty()) {
            throw ParseError("unexpected line in parameter dump", line_no);
        }
        tensor_start = in.tellg();
    }

    auto meta_num = [&](const char* key) {
        auto it = meta.find(key);
        if (it == meta.end()) throw ParseError(std::string("missing meta key ") + key);
        return std::stod(it->second);
    };
    cfg.embed_dim = static_cast<std::size_t>(meta_num("embed_dim"));
    cfg.gru_hidden = static_cast<std::size_t>(meta_num("gru_hidden"));
    cfg.head_hidden = static_cast<std::size_t>(meta_num("head_hidden"));
    cfg.mixhop_hops = static_cast<std::size_t>(meta_num("mixhop_hops"));
    cfg.mixhop_depth = static_cast<std::size_t>(meta_num("mixhop_depth"));
    cfg.per_modality_weight = meta_num("per_modality_weight") != 0.0;
    cfg.flags.use_ode = meta_num("use_ode") != 0.0;
    cfg.flags.use_mixhop = meta_num("use_mixhop") != 0.0;
    cfg.vanilla_layers = static_cast<std::size_t>(meta_num("vanilla_layers"));
    cfg.w_past = static_cast<std::size_t>(meta_num("w_past"));
    cfg.w_future = static_cast<std::size_t>(meta_num("w_future"));
    cfg.alpha = meta_num("alpha");
    cfg.w_rho = meta_num("w_rho");
    cfg.w_ridge = meta_num("w_ridge");
    cfg.ode.t_end = meta_num("ode_t_end");
    cfg.ode.steps = static_cast<std::size_t>(meta_num("ode_steps"));
    cfg.ode.method = ode_method_from_string(meta.at("ode_method"));
    cfg.ode.sing_tol = meta_num("ode_sing_tol");
    cfg.ode.clamp_eps = meta_num("ode_clamp_eps");
    cfg.dropout = meta_num("dropout");
    header.dim_text = static_cast<std::size_t>(meta_num("dim_text"));
    header.dim_audio = static_cast<std::size_t>(meta_num("dim_audio"));
    header.dim_visual = static_cast<std::size_t>(meta_num("dim_visual"));

    ModelParams params = ModelParams::init(cfg, header, speakers, 0);

    in.clear();
    in.seekg(tensor_start);
    auto tensors = params.tensors();
    std::size_t loaded = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string kind, name;
        std::size_t rows = 0, cols = 0;
        ss >> kind >> name >> rows >> cols;
        if (kind != "tensor") throw ParseError("expected tensor block, got: " + line);
        auto it = std::find_if(tensors.begin(), tensors.end(),
                               [&](const NamedTensor& nt) { return nt.name == name; });
        if (it == tensors.end()) throw ParseError("unknown tensor name " + name);
        if (it->tensor->rows() != rows || it->tensor->cols() != cols)
            throw DimensionError("tensor " + name + " has unexpected shape in dump");
        for (std::size_t i = 0; i < rows; ++i) {
            if (!std::getline(in, line)) throw ParseError("truncated tensor " + name);
            std::istringstream row(line);
            for (std::size_t j = 0; j < cols; ++j)
                if (!(row >> (*it->tensor)(i, j)))
                    throw ParseError("bad value in tensor " + name);
        }
        ++loaded;
    }
    if (loaded != tensors.size())
        throw ParseError("parameter dump holds " + std::to_string(loaded) + " tensors, expected " +
                         std::to_string(tensors.size()));
    params.assert_finite();
    return params;
}

}  // namespace dgode
