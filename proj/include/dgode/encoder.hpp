#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "dgode/autodiff.hpp"
#include "dgode/matrix.hpp"

namespace dgode {

/// Learned speaker embeddings, one column per registered speaker.
struct SpeakerTable {
    DenseMatrix weight;  // d x speaker_count

    std::size_t dim() const { return weight.rows(); }
    std::size_t speaker_count() const { return weight.cols(); }
};

/// Select the speaker column by a one-hot indicator. An all-zero indicator
/// (unknown speaker) yields the zero vector.
inline std::vector<double> speaker_embed(const SpeakerTable& table,
                                         const std::vector<double>& one_hot) {
    long hot = -1;
    for (std::size_t i = 0; i < one_hot.size(); ++i) {
        const double v = one_hot[i];
        if (v == 0.0) continue;
        if (v != 1.0 || hot >= 0)
            throw ShapeError("speaker_embed: indicator is not one-hot");
        hot = static_cast<long>(i);
    }
    std::vector<double> out(table.dim(), 0.0);
    if (hot < 0) return out;
    if (static_cast<std::size_t>(hot) >= table.speaker_count())
        throw UnknownSpeakerError("speaker_embed: speaker index beyond table");
    for (std::size_t i = 0; i < table.dim(); ++i) out[i] = table.weight(i, static_cast<std::size_t>(hot));
    return out;
}

/// Gate parameters of one GRU cell, stored for row-vector math:
/// x (1 x in) * w (in x hidden) + h (1 x hidden) * u (hidden x hidden) + b.
struct GruCellParams {
    DenseMatrix wz, uz, bz;
    DenseMatrix wr, ur, br;
    DenseMatrix wh, uh, bh;

    std::size_t input_dim() const { return wz.rows(); }
    std::size_t hidden_dim() const { return wz.cols(); }

    static GruCellParams init(std::size_t in, std::size_t hidden, std::mt19937_64& rng) {
        GruCellParams c;
        auto fill = [&](std::size_t r, std::size_t cdim, std::size_t fan_in) {
            DenseMatrix m(r, cdim);
            const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
            m.fill_uniform(rng, -bound, bound);
            return m;
        };
        c.wz = fill(in, hidden, in);
        c.uz = fill(hidden, hidden, hidden);
        c.bz = fill(1, hidden, hidden);
        c.wr = fill(in, hidden, in);
        c.ur = fill(hidden, hidden, hidden);
        c.br = fill(1, hidden, hidden);
        c.wh = fill(in, hidden, in);
        c.uh = fill(hidden, hidden, hidden);
        c.bh = fill(1, hidden, hidden);
        return c;
    }

    void validate() const {
        const std::size_t in = wz.rows(), hid = wz.cols();
        auto check = [&](const DenseMatrix& m, std::size_t r, std::size_t cdim) {
            if (m.rows() != r || m.cols() != cdim)
                throw DimensionError("GruCellParams: inconsistent gate shapes");
        };
        check(wr, in, hid);
        check(wh, in, hid);
        check(uz, hid, hid);
        check(ur, hid, hid);
        check(uh, hid, hid);
        check(bz, 1, hid);
        check(br, 1, hid);
        check(bh, 1, hid);
    }
};

namespace detail {

inline double sigmoid_scalar(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace detail

/// One GRU update:
///   z = sigmoid(x Wz + h Uz + bz)
///   r = sigmoid(x Wr + h Ur + br)
///   h~ = tanh(x Wh + (r o h) Uh + bh)
///   h' = (1 - z) o h + z o h~
inline std::vector<double> gru_cell_step(const std::vector<double>& x,
                                         const std::vector<double>& h_prev,
                                         const GruCellParams& cell) {
    cell.validate();
    const std::size_t in = cell.input_dim(), hid = cell.hidden_dim();
    if (x.size() != in) throw DimensionError("gru_cell_step: input width mismatch");
    if (h_prev.size() != hid) throw DimensionError("gru_cell_step: hidden width mismatch");

    auto affine = [&](const DenseMatrix& w, const DenseMatrix& u, const DenseMatrix& b,
                      const std::vector<double>& hvec) {
        std::vector<double> out(hid);
        for (std::size_t j = 0; j < hid; ++j) {
            double acc = b(0, j);
            for (std::size_t i = 0; i < in; ++i) acc += x[i] * w(i, j);
            for (std::size_t i = 0; i < hid; ++i) acc += hvec[i] * u(i, j);
            out[j] = acc;
        }
        return out;
    };

    const std::vector<double> z_pre = affine(cell.wz, cell.uz, cell.bz, h_prev);
    const std::vector<double> r_pre = affine(cell.wr, cell.ur, cell.br, h_prev);
    std::vector<double> gated(hid);
    for (std::size_t j = 0; j < hid; ++j)
        gated[j] = detail::sigmoid_scalar(r_pre[j]) * h_prev[j];
    const std::vector<double> h_pre = affine(cell.wh, cell.uh, cell.bh, gated);

    std::vector<double> h_next(hid);
    for (std::size_t j = 0; j < hid; ++j) {
        const double z = detail::sigmoid_scalar(z_pre[j]);
        const double cand = std::tanh(h_pre[j]);
        h_next[j] = (1.0 - z) * h_prev[j] + z * cand;
    }
    return h_next;
}

/// Bidirectional GRU encoder for one modality: forward cell, backward cell,
/// and a projection of the concatenated states down to the shared dimension.
struct ModalityEncoder {
    GruCellParams forward_cell;
    GruCellParams backward_cell;
    DenseMatrix projection;  // 2*hidden x d

    std::size_t output_dim() const { return projection.cols(); }

    static ModalityEncoder init(std::size_t in, std::size_t hidden, std::size_t d,
                                std::mt19937_64& rng) {
        ModalityEncoder enc;
        enc.forward_cell = GruCellParams::init(in, hidden, rng);
        enc.backward_cell = GruCellParams::init(in, hidden, rng);
        enc.projection = DenseMatrix(2 * hidden, d);
        const double bound = 1.0 / std::sqrt(static_cast<double>(2 * hidden));
        enc.projection.fill_uniform(rng, -bound, bound);
        return enc;
    }
};

namespace ad_ops {

/// Leaf handles for one cell's parameters on a tape.
struct GruCellVars {
    ad::Var wz, uz, bz, wr, ur, br, wh, uh, bh;
};

inline GruCellVars push_cell(ad::Tape& t, const GruCellParams& c) {
    return GruCellVars{t.push(c.wz), t.push(c.uz), t.push(c.bz), t.push(c.wr), t.push(c.ur),
                       t.push(c.br), t.push(c.wh), t.push(c.uh), t.push(c.bh)};
}

inline ad::Var gru_step(ad::Tape& t, ad::Var x, ad::Var h, const GruCellVars& c) {
    ad::Var z = ad::sigmoid(
        t, ad::add(t, ad::add(t, ad::matmul(t, x, c.wz), ad::matmul(t, h, c.uz)), c.bz));
    ad::Var r = ad::sigmoid(
        t, ad::add(t, ad::add(t, ad::matmul(t, x, c.wr), ad::matmul(t, h, c.ur)), c.br));
    ad::Var cand = ad::tanh_op(
        t, ad::add(t,
                   ad::add(t, ad::matmul(t, x, c.wh),
                           ad::matmul(t, ad::hadamard(t, r, h), c.uh)),
                   c.bh));
    const std::size_t hid = t.val(h).cols();
    ad::Var one = t.push(DenseMatrix(1, hid, 1.0));
    return ad::add(t, ad::hadamard(t, ad::sub(t, one, z), h), ad::hadamard(t, z, cand));
}

struct ModalityEncoderVars {
    GruCellVars forward_cell;
    GruCellVars backward_cell;
    ad::Var projection;
};

inline ModalityEncoderVars push_encoder(ad::Tape& t, const ModalityEncoder& enc) {
    return ModalityEncoderVars{push_cell(t, enc.forward_cell), push_cell(t, enc.backward_cell),
                               t.push(enc.projection)};
}

/// Bidirectional pass over a sequence of 1 x in rows; returns 1 x d rows.
inline std::vector<ad::Var> encode_modality(ad::Tape& t, const std::vector<ad::Var>& xs,
                                            const ModalityEncoderVars& enc,
                                            std::size_t hidden) {
    if (xs.empty()) throw EmptyInputError("encode_modality: empty sequence");
    const std::size_t len = xs.size();
    std::vector<ad::Var> fwd(len), bwd(len);
    ad::Var h = t.push(DenseMatrix(1, hidden));
    for (std::size_t i = 0; i < len; ++i) {
        h = gru_step(t, xs[i], h, enc.forward_cell);
        fwd[i] = h;
    }
    h = t.push(DenseMatrix(1, hidden));
    for (std::size_t i = len; i-- > 0;) {
        h = gru_step(t, xs[i], h, enc.backward_cell);
        bwd[i] = h;
    }
    std::vector<ad::Var> out(len);
    for (std::size_t i = 0; i < len; ++i)
        out[i] = ad::matmul(t, ad::concat_cols(t, fwd[i], bwd[i]), enc.projection);
    return out;
}

}  // namespace ad_ops

/// Plain-value bidirectional encoding of a sequence; evaluates the tape
/// builder so both paths stay in lockstep by construction.
inline std::vector<std::vector<double>> encode_modality(
    const std::vector<std::vector<double>>& sequence, const ModalityEncoder& enc) {
    if (sequence.empty()) throw EmptyInputError("encode_modality: empty sequence");
    const std::size_t in = enc.forward_cell.input_dim();
    for (const auto& x : sequence)
        if (x.size() != in) throw DimensionError("encode_modality: input width mismatch");

    ad::Tape t;
    std::vector<ad::Var> xs;
    xs.reserve(sequence.size());
    for (const auto& x : sequence) {
        DenseMatrix row(1, in);
        row.set_row(0, x);
        xs.push_back(t.push(std::move(row)));
    }
    const auto enc_vars = ad_ops::push_encoder(t, enc);
    const auto outs = ad_ops::encode_modality(t, xs, enc_vars, enc.forward_cell.hidden_dim());

    std::vector<std::vector<double>> result;
    result.reserve(outs.size());
    for (ad::Var v : outs) result.push_back(t.val(v).row(0));
    return result;
}

/// Additive speaker fusion h = c + s.
inline std::vector<double> fuse_speaker(const std::vector<double>& c,
                                        const std::vector<double>& s) {
    if (c.size() != s.size()) throw DimensionError("fuse_speaker: dimension mismatch");
    std::vector<double> out(c.size());
    for (std::size_t i = 0; i < c.size(); ++i) out[i] = c[i] + s[i];
    return out;
}

}  // namespace dgode
