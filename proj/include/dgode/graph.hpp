#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "dgode/matrix.hpp"
#include "dgode/numerics.hpp"

namespace dgode {

enum class Modality { text = 0, audio = 1, visual = 2 };

constexpr std::size_t kModalityCount = 3;

inline const char* modality_name(Modality m) {
    switch (m) {
        case Modality::text: return "text";
        case Modality::audio: return "audio";
        default: return "visual";
    }
}

/// One utterance's inputs to the graph: a feature vector per modality plus
/// speaker and label annotations. Feature vectors must share one dimension d
/// (they are post-encoder representations by the time a graph is built).
struct UtteranceFeatures {
    std::vector<double> text;
    std::vector<double> audio;
    std::vector<double> visual;
    std::string speaker;
    int label = -1;

    const std::vector<double>& modality(Modality m) const {
        switch (m) {
            case Modality::text: return text;
            case Modality::audio: return audio;
            default: return visual;
        }
    }
};

/// Conversation graph over utterance x modality nodes. Node ids are
/// utterance-major: node(u, m) = 3u + m.
struct ConversationGraph {
    std::size_t node_count = 0;
    DenseMatrix adjacency;                  // binary, symmetric, zero diagonal
    DenseMatrix features;                   // node_count x d
    std::vector<std::size_t> utterance_index;  // per node
    std::vector<Modality> modality_tag;        // per node
    std::vector<std::string> speaker_id;       // per utterance
    std::vector<int> label;                    // per utterance

    std::size_t utterance_count() const { return speaker_id.size(); }

    static std::size_t node_id(std::size_t utterance, Modality m) {
        return kModalityCount * utterance + static_cast<std::size_t>(m);
    }
};

/// Spectrum-bounded propagation operator (alpha/2)(I + D^{-1/2} A D^{-1/2})
/// with its eigendecomposition computed once and cached.
struct NormalizedAdjacency {
    DenseMatrix matrix;
    double alpha = 1.0;
    EigenSystem eig;
};

/// Mixhop propagation parameters: one shared d x d weight plus a nonnegative
/// gate per hop power.
struct MixhopParams {
    DenseMatrix weight;
    std::vector<double> hop_gates;

    std::size_t hop_count() const { return hop_gates.size(); }
};

/// Windowed intra-modal edges plus a cross-modal clique on each utterance's
/// three nodes. An undirected edge joins utterances whose index distance fits
/// either window.
inline DenseMatrix conversation_adjacency(std::size_t utterances, std::size_t w_past,
                                          std::size_t w_future) {
    if (utterances == 0) throw EmptyInputError("conversation_adjacency: no utterances");
    const std::size_t n = kModalityCount * utterances;
    DenseMatrix a(n, n);
    const std::size_t window = std::max(w_past, w_future);
    for (std::size_t u = 0; u < utterances; ++u) {
        for (std::size_t m1 = 0; m1 < kModalityCount; ++m1) {
            for (std::size_t m2 = m1 + 1; m2 < kModalityCount; ++m2) {
                const std::size_t i = kModalityCount * u + m1;
                const std::size_t j = kModalityCount * u + m2;
                a(i, j) = a(j, i) = 1.0;
            }
        }
        for (std::size_t v = u + 1; v < utterances && v - u <= window; ++v) {
            for (std::size_t m = 0; m < kModalityCount; ++m) {
                const std::size_t i = kModalityCount * u + m;
                const std::size_t j = kModalityCount * v + m;
                a(i, j) = a(j, i) = 1.0;
            }
        }
    }
    return a;
}

inline ConversationGraph build_conversation_graph(const std::vector<UtteranceFeatures>& utterances,
                                                  std::size_t w_past, std::size_t w_future) {
    if (utterances.empty()) throw EmptyInputError("build_conversation_graph: empty conversation");
    const std::size_t d = utterances.front().text.size();
    for (const auto& u : utterances) {
        if (u.text.size() != d || u.audio.size() != d || u.visual.size() != d)
            throw DimensionError(
                "build_conversation_graph: modal feature dimensions differ across utterances");
    }

    ConversationGraph g;
    g.node_count = kModalityCount * utterances.size();
    g.adjacency = conversation_adjacency(utterances.size(), w_past, w_future);
    g.features = DenseMatrix(g.node_count, d);
    g.utterance_index.resize(g.node_count);
    g.modality_tag.resize(g.node_count);
    for (std::size_t u = 0; u < utterances.size(); ++u) {
        g.speaker_id.push_back(utterances[u].speaker);
        g.label.push_back(utterances[u].label);
        for (std::size_t m = 0; m < kModalityCount; ++m) {
            const std::size_t node = kModalityCount * u + m;
            g.utterance_index[node] = u;
            g.modality_tag[node] = static_cast<Modality>(m);
            g.features.set_row(node, utterances[u].modality(static_cast<Modality>(m)));
        }
    }
    return g;
}

/// (alpha/2)(I + D^{-1/2} A D^{-1/2}). Zero-degree rows use a zero inverse
/// square root, leaving alpha/2 on the diagonal.
inline NormalizedAdjacency normalize_adjacency(const DenseMatrix& a, double alpha) {
    if (!a.is_square()) throw ShapeError("normalize_adjacency: adjacency is not square");
    if (!a.is_symmetric(1e-12)) throw ShapeError("normalize_adjacency: adjacency is not symmetric");
    if (!(alpha > 0.0 && alpha <= 1.0))
        throw ConfigError("normalize_adjacency: alpha must be in (0, 1]");
    const std::size_t n = a.rows();
    std::vector<double> inv_sqrt_deg(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        double deg = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            const double v = a(i, j);
            if (std::fabs(v) > 1e-12 && std::fabs(v - 1.0) > 1e-12)
                throw ShapeError("normalize_adjacency: adjacency entries must be 0 or 1");
            deg += v;
        }
        if (deg > 0.0) inv_sqrt_deg[i] = 1.0 / std::sqrt(deg);
    }

    NormalizedAdjacency result;
    result.alpha = alpha;
    result.matrix = DenseMatrix(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            result.matrix(i, j) =
                0.5 * alpha * ((i == j ? 1.0 : 0.0) + inv_sqrt_deg[i] * a(i, j) * inv_sqrt_deg[j]);
    result.matrix.assert_finite("normalize_adjacency");
    result.eig = sym_eig(result.matrix);
    return result;
}

/// One adaptive mixhop step: H' = (sum_p beta_p A_hat^p H) W + H0.
inline DenseMatrix mixhop_step(const DenseMatrix& h_n, const DenseMatrix& h_0,
                               const NormalizedAdjacency& adj, const MixhopParams& params) {
    if (h_n.rows() != h_0.rows() || h_n.cols() != h_0.cols())
        throw DimensionError("mixhop_step: h_n and h_0 shapes differ");
    if (h_n.rows() != adj.matrix.rows())
        throw DimensionError("mixhop_step: feature rows do not match node count");
    if (!params.weight.is_square() || params.weight.rows() != h_n.cols())
        throw DimensionError("mixhop_step: weight must be d x d");
    if (params.hop_gates.empty()) throw ConfigError("mixhop_step: at least one hop required");

    DenseMatrix hop = h_n;
    DenseMatrix mixed(h_n.rows(), h_n.cols());
    for (double gate : params.hop_gates) {
        hop = adj.matrix * hop;
        mixed += gate * hop;
    }
    return mixed * params.weight + h_0;
}

/// Apply mixhop_step `depth` times starting from H0 = e.
inline DenseMatrix unroll_mixhop(const DenseMatrix& e, const NormalizedAdjacency& adj,
                                 const MixhopParams& params, std::size_t depth) {
    DenseMatrix h = e;
    for (std::size_t n = 0; n < depth; ++n) h = mixhop_step(h, e, adj, params);
    return h;
}

/// Half the sum of squared feature differences across edges of the underlying
/// binary adjacency. Zero exactly when all connected nodes agree.
inline double dirichlet_energy(const DenseMatrix& h, const NormalizedAdjacency& adj) {
    if (h.rows() != adj.matrix.rows())
        throw DimensionError("dirichlet_energy: feature rows do not match node count");
    const std::size_t n = adj.matrix.rows();
    double energy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            if (i == j || adj.matrix(i, j) <= 1e-15) continue;  // off-diagonal > 0 iff A_ij = 1
            double dist2 = 0.0;
            for (std::size_t k = 0; k < h.cols(); ++k) {
                const double diff = h(i, k) - h(j, k);
                dist2 += diff * diff;
            }
            energy += dist2;
        }
    }
    return 0.5 * energy;
}

}  // namespace dgode
