#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <utility>
#include <vector>

#include "dgode/matrix.hpp"
#include "dgode/numerics.hpp"
#include "dgode/odecore.hpp"

namespace dgode::ad {

/// Handle into a Tape. Cheap to copy; only valid for the tape that made it.
struct Var {
    std::size_t id = static_cast<std::size_t>(-1);
};

/// Reverse-mode tape over matrix-valued nodes. Each op records a closure
/// that scatters the node's upstream gradient to its parents; backward walks
/// the tape once in reverse creation order, which is already topological.
class Tape {
public:
    Var next_id() const { return Var{nodes_.size()}; }

    Var push(DenseMatrix value, std::function<void(Tape&)> back = {}) {
        nodes_.push_back(Node{std::move(value), DenseMatrix(), std::move(back)});
        return Var{nodes_.size() - 1};
    }

    const DenseMatrix& val(Var v) const { return nodes_[v.id].value; }

    const DenseMatrix& grad(Var v) const { return nodes_[v.id].grad; }

    void accumulate(Var v, const DenseMatrix& g) { nodes_[v.id].grad += g; }

    /// Seed d(loss)/d(loss) = 1 and propagate to every node. `loss` must be 1x1.
    void backward(Var loss) {
        const DenseMatrix& l = val(loss);
        if (l.rows() != 1 || l.cols() != 1) throw DimensionError("backward: loss must be 1x1");
        for (Node& n : nodes_) n.grad = DenseMatrix(n.value.rows(), n.value.cols());
        mutable_grad(loss)(0, 0) = 1.0;
        for (std::size_t i = loss.id + 1; i-- > 0;)
            if (nodes_[i].back) nodes_[i].back(*this);
    }

    std::size_t size() const { return nodes_.size(); }

private:
    DenseMatrix& mutable_grad(Var v) { return nodes_[v.id].grad; }

    struct Node {
        DenseMatrix value;
        DenseMatrix grad;
        std::function<void(Tape&)> back;
    };
    std::vector<Node> nodes_;
};

inline Var constant(Tape& t, DenseMatrix value) { return t.push(std::move(value)); }

inline Var add(Tape& t, Var a, Var b) {
    const Var out = t.next_id();
    return t.push(t.val(a) + t.val(b), [out, a, b](Tape& tt) {
        tt.accumulate(a, tt.grad(out));
        tt.accumulate(b, tt.grad(out));
    });
}

inline Var sub(Tape& t, Var a, Var b) {
    const Var out = t.next_id();
    return t.push(t.val(a) - t.val(b), [out, a, b](Tape& tt) {
        tt.accumulate(a, tt.grad(out));
        tt.accumulate(b, -1.0 * tt.grad(out));
    });
}

inline Var scale(Tape& t, Var a, double c) {
    const Var out = t.next_id();
    return t.push(c * t.val(a),
                  [out, a, c](Tape& tt) { tt.accumulate(a, c * tt.grad(out)); });
}

inline Var matmul(Tape& t, Var a, Var b) {
    const Var out = t.next_id();
    return t.push(t.val(a) * t.val(b), [out, a, b](Tape& tt) {
        tt.accumulate(a, tt.grad(out) * tt.val(b).transpose());
        tt.accumulate(b, tt.val(a).transpose() * tt.grad(out));
    });
}

inline Var hadamard(Tape& t, Var a, Var b) {
    const Var out = t.next_id();
    return t.push(t.val(a).hadamard(t.val(b)), [out, a, b](Tape& tt) {
        tt.accumulate(a, tt.grad(out).hadamard(tt.val(b)));
        tt.accumulate(b, tt.grad(out).hadamard(tt.val(a)));
    });
}

inline Var sigmoid(Tape& t, Var a) {
    DenseMatrix y = t.val(a);
    for (double& v : y.data()) v = 1.0 / (1.0 + std::exp(-v));
    const Var out = t.next_id();
    return t.push(std::move(y), [out, a](Tape& tt) {
        DenseMatrix g = tt.grad(out);
        const DenseMatrix& yv = tt.val(out);
        for (std::size_t k = 0; k < g.data().size(); ++k)
            g.data()[k] *= yv.data()[k] * (1.0 - yv.data()[k]);
        tt.accumulate(a, g);
    });
}

inline Var tanh_op(Tape& t, Var a) {
    DenseMatrix y = t.val(a);
    for (double& v : y.data()) v = std::tanh(v);
    const Var out = t.next_id();
    return t.push(std::move(y), [out, a](Tape& tt) {
        DenseMatrix g = tt.grad(out);
        const DenseMatrix& yv = tt.val(out);
        for (std::size_t k = 0; k < g.data().size(); ++k)
            g.data()[k] *= 1.0 - yv.data()[k] * yv.data()[k];
        tt.accumulate(a, g);
    });
}

inline Var relu(Tape& t, Var a) {
    DenseMatrix y = t.val(a);
    for (double& v : y.data()) v = v > 0.0 ? v : 0.0;
    const Var out = t.next_id();
    return t.push(std::move(y), [out, a](Tape& tt) {
        DenseMatrix g = tt.grad(out);
        const DenseMatrix& x = tt.val(a);
        for (std::size_t k = 0; k < g.data().size(); ++k)
            if (x.data()[k] <= 0.0) g.data()[k] = 0.0;
        tt.accumulate(a, g);
    });
}

/// m + broadcast of a 1 x cols row vector over every row.
inline Var add_row_broadcast(Tape& t, Var m, Var row) {
    const DenseMatrix& mv = t.val(m);
    const DenseMatrix& rv = t.val(row);
    if (rv.rows() != 1 || rv.cols() != mv.cols())
        throw DimensionError("add_row_broadcast: row vector shape mismatch");
    DenseMatrix y = mv;
    for (std::size_t i = 0; i < y.rows(); ++i)
        for (std::size_t j = 0; j < y.cols(); ++j) y(i, j) += rv(0, j);
    const Var out = t.next_id();
    return t.push(std::move(y), [out, m, row](Tape& tt) {
        const DenseMatrix& g = tt.grad(out);
        tt.accumulate(m, g);
        DenseMatrix gr(1, g.cols());
        for (std::size_t i = 0; i < g.rows(); ++i)
            for (std::size_t j = 0; j < g.cols(); ++j) gr(0, j) += g(i, j);
        tt.accumulate(row, gr);
    });
}

/// Horizontal concatenation [a | b] of matrices with equal row counts.
inline Var concat_cols(Tape& t, Var a, Var b) {
    const DenseMatrix& av = t.val(a);
    const DenseMatrix& bv = t.val(b);
    if (av.rows() != bv.rows()) throw DimensionError("concat_cols: row count mismatch");
    DenseMatrix y(av.rows(), av.cols() + bv.cols());
    for (std::size_t i = 0; i < av.rows(); ++i) {
        for (std::size_t j = 0; j < av.cols(); ++j) y(i, j) = av(i, j);
        for (std::size_t j = 0; j < bv.cols(); ++j) y(i, av.cols() + j) = bv(i, j);
    }
    const std::size_t split = av.cols();
    const Var out = t.next_id();
    return t.push(std::move(y), [out, a, b, split](Tape& tt) {
        const DenseMatrix& g = tt.grad(out);
        DenseMatrix ga(g.rows(), split);
        DenseMatrix gb(g.rows(), g.cols() - split);
        for (std::size_t i = 0; i < g.rows(); ++i) {
            for (std::size_t j = 0; j < split; ++j) ga(i, j) = g(i, j);
            for (std::size_t j = split; j < g.cols(); ++j) gb(i, j - split) = g(i, j);
        }
        tt.accumulate(a, ga);
        tt.accumulate(b, gb);
    });
}

/// Stack 1 x d row nodes into an n x d matrix.
inline Var stack_rows(Tape& t, const std::vector<Var>& rows) {
    if (rows.empty()) throw EmptyInputError("stack_rows: no rows");
    const std::size_t d = t.val(rows.front()).cols();
    DenseMatrix y(rows.size(), d);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const DenseMatrix& r = t.val(rows[i]);
        if (r.rows() != 1 || r.cols() != d) throw DimensionError("stack_rows: row shape mismatch");
        for (std::size_t j = 0; j < d; ++j) y(i, j) = r(0, j);
    }
    const Var out = t.next_id();
    return t.push(std::move(y), [out, rows](Tape& tt) {
        const DenseMatrix& g = tt.grad(out);
        for (std::size_t i = 0; i < rows.size(); ++i) {
            DenseMatrix gr(1, g.cols());
            for (std::size_t j = 0; j < g.cols(); ++j) gr(0, j) = g(i, j);
            tt.accumulate(rows[i], gr);
        }
    });
}

/// Column j of a table, returned as a 1 x rows row vector.
inline Var col_as_row(Tape& t, Var table, std::size_t j) {
    const DenseMatrix& tv = t.val(table);
    if (j >= tv.cols()) throw DimensionError("col_as_row: column out of range");
    DenseMatrix y(1, tv.rows());
    for (std::size_t i = 0; i < tv.rows(); ++i) y(0, i) = tv(i, j);
    const Var out = t.next_id();
    return t.push(std::move(y), [out, table, j](Tape& tt) {
        const DenseMatrix& g = tt.grad(out);
        DenseMatrix gt(tt.val(table).rows(), tt.val(table).cols());
        for (std::size_t i = 0; i < gt.rows(); ++i) gt(i, j) = g(0, i);
        tt.accumulate(table, gt);
    });
}

/// Single entry (i, j) as a 1 x 1 node.
inline Var entry(Tape& t, Var m, std::size_t i, std::size_t j) {
    const Var out = t.next_id();
    DenseMatrix y(1, 1);
    y(0, 0) = t.val(m)(i, j);
    return t.push(std::move(y), [out, m, i, j](Tape& tt) {
        DenseMatrix gm(tt.val(m).rows(), tt.val(m).cols());
        gm(i, j) = tt.grad(out)(0, 0);
        tt.accumulate(m, gm);
    });
}

/// a scaled by a 1 x 1 node.
inline Var scale_by(Tape& t, Var a, Var s) {
    const DenseMatrix& sv = t.val(s);
    if (sv.rows() != 1 || sv.cols() != 1) throw DimensionError("scale_by: scalar must be 1x1");
    const Var out = t.next_id();
    return t.push(sv(0, 0) * t.val(a), [out, a, s](Tape& tt) {
        const DenseMatrix& g = tt.grad(out);
        tt.accumulate(a, tt.val(s)(0, 0) * g);
        DenseMatrix gs(1, 1);
        double dot = 0.0;
        const DenseMatrix& av = tt.val(a);
        for (std::size_t k = 0; k < av.data().size(); ++k) dot += g.data()[k] * av.data()[k];
        gs(0, 0) = dot;
        tt.accumulate(s, gs);
    });
}

/// Sum of squared entries as a 1 x 1 node.
inline Var sumsq(Tape& t, Var a) {
    double s = 0.0;
    for (double v : t.val(a).data()) s += v * v;
    DenseMatrix y(1, 1);
    y(0, 0) = s;
    const Var out = t.next_id();
    return t.push(std::move(y), [out, a](Tape& tt) {
        tt.accumulate(a, (2.0 * tt.grad(out)(0, 0)) * tt.val(a));
    });
}

/// Row-wise softmax cross entropy against integer labels, summed over rows.
/// Returns the 1 x 1 loss node and a snapshot of the probability rows.
inline std::pair<Var, DenseMatrix> softmax_ce_sum(Tape& t, Var logits,
                                                  const std::vector<int>& labels) {
    const DenseMatrix& z = t.val(logits);
    if (labels.size() != z.rows()) throw DimensionError("softmax_ce_sum: label count mismatch");
    DenseMatrix probs(z.rows(), z.cols());
    double loss = 0.0;
    for (std::size_t i = 0; i < z.rows(); ++i) {
        const int y = labels[i];
        if (y < 0 || static_cast<std::size_t>(y) >= z.cols())
            throw LabelError("softmax_ce_sum: label out of range");
        double zmax = z(i, 0);
        for (std::size_t j = 1; j < z.cols(); ++j) zmax = std::max(zmax, z(i, j));
        double denom = 0.0;
        for (std::size_t j = 0; j < z.cols(); ++j) denom += std::exp(z(i, j) - zmax);
        for (std::size_t j = 0; j < z.cols(); ++j) probs(i, j) = std::exp(z(i, j) - zmax) / denom;
        loss += std::log(denom) + zmax - z(i, static_cast<std::size_t>(y));
    }
    DenseMatrix lv(1, 1);
    lv(0, 0) = loss;
    const Var out = t.next_id();
    Var node = t.push(std::move(lv), [out, logits, probs, labels](Tape& tt) {
        DenseMatrix g = probs;
        for (std::size_t i = 0; i < g.rows(); ++i)
            g(i, static_cast<std::size_t>(labels[i])) -= 1.0;
        tt.accumulate(logits, tt.grad(out)(0, 0) * g);
    });
    return {node, probs};
}

namespace detail {

/// d/ds of (e^{tau s} - 1)/s, with a series fallback near s = 0.
inline double expm1_ratio_deriv(double s, double tau) {
    if (std::fabs(tau * s) < 1e-4)
        return tau * tau * (0.5 + s * tau / 3.0 + s * s * tau * tau / 8.0);
    const double e = std::exp(tau * s);
    return (tau * e) / s - std::expm1(tau * s) / (s * s);
}

inline DenseMatrix symmetrize(const DenseMatrix& m) {
    DenseMatrix s = m;
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j < m.cols(); ++j) s(i, j) = 0.5 * (m(i, j) + m(j, i));
    return s;
}

}  // namespace detail

/// W = rho * V V^T / lambda_max(V V^T) + ridge * I. Symmetric with spectrum
/// inside (0, rho + ridge]; keeps ln W defined throughout training.
inline Var spd_bounded(Tape& t, Var v, double rho, double ridge) {
    const DenseMatrix& vv = t.val(v);
    if (!vv.is_square()) throw ShapeError("spd_bounded: V must be square");
    DenseMatrix m = vv * vv.transpose();
    m = detail::symmetrize(m);
    const EigenSystem es = sym_eig(m);
    const double lmax = std::max(es.values.back(), 1e-30);
    DenseMatrix w = (rho / lmax) * m + ridge * DenseMatrix::identity(m.rows());

    DenseMatrix top(m.rows(), 1);
    for (std::size_t i = 0; i < m.rows(); ++i) top(i, 0) = es.vectors(i, m.rows() - 1);

    const Var out = t.next_id();
    return t.push(std::move(w), [out, v, m, lmax, top, rho](Tape& tt) {
        const DenseMatrix& g = tt.grad(out);
        double g_dot_m = 0.0;
        for (std::size_t k = 0; k < g.data().size(); ++k)
            g_dot_m += g.data()[k] * m.data()[k];
        DenseMatrix gm = (rho / lmax) * g;
        const double coeff = rho * g_dot_m / (lmax * lmax);
        for (std::size_t i = 0; i < gm.rows(); ++i)
            for (std::size_t j = 0; j < gm.cols(); ++j)
                gm(i, j) -= coeff * top(i, 0) * top(j, 0);
        // d(V V^T) pairing: gV = (gM + gM^T) V
        tt.accumulate(v, (gm + gm.transpose()) * tt.val(v));
    });
}

/// Spectral function of a symmetric matrix: Q diag(f(phi)) Q^T. The pullback
/// is the Daleckii-Krein divided-difference formula, which stays bounded even
/// for nearly repeated eigenvalues.
inline Var sym_matfunc(Tape& t, Var w, std::function<double(double)> f,
                       std::function<double(double)> fprime) {
    const EigenSystem es = sym_eig(t.val(w));
    const std::size_t d = es.values.size();
    DenseMatrix value = es.apply(f);

    const Var out = t.next_id();
    return t.push(std::move(value), [out, w, es, f, fprime, d](Tape& tt) {
        const DenseMatrix s =
            es.vectors.transpose() * detail::symmetrize(tt.grad(out)) * es.vectors;
        DenseMatrix k(d, d);
        for (std::size_t i = 0; i < d; ++i) {
            for (std::size_t j = 0; j < d; ++j) {
                const double li = es.values[i], lj = es.values[j];
                const double gap_tol = 1e-9 * std::max({1.0, std::fabs(li), std::fabs(lj)});
                k(i, j) = std::fabs(li - lj) < gap_tol ? fprime(0.5 * (li + lj))
                                                       : (f(li) - f(lj)) / (li - lj);
            }
        }
        tt.accumulate(w, es.vectors * k.hadamard(s) * es.vectors.transpose());
    });
}

/// ln of a symmetric matrix with the spectrum clamped at clamp_eps.
inline Var sym_matfunc_log(Tape& t, Var w, double clamp_eps) {
    return sym_matfunc(
        t, w, [clamp_eps](double x) { return std::log(std::max(x, clamp_eps)); },
        [clamp_eps](double x) { return x > clamp_eps ? 1.0 / x : 0.0; });
}

enum class SpectralShift { log_clamped, shifted };

/// Two-sided spectral kernel shared by the closed forms: with fixed left
/// basis P and left spectrum values a_i, and W = Q diag(phi) Q^T,
///   Y = P [ (P^{-1} E Q) o G ] Q^{-1},  G_ij = g(a_i + u(phi_j)),
/// where g(s) = (e^{tau s} - 1)/s and u is ln(clamp(phi)) or phi - 1.
/// Differentiable in both W and E; the W pullback is expressed through
/// divided differences so eigenvalue gaps never amplify the gradient.
inline Var bispec_integral(Tape& t, Var w, Var e, const DenseMatrix& p,
                           const DenseMatrix& p_inv, const std::vector<double>& a_vals,
                           SpectralShift mode, double tau, double delta, double clamp_eps) {
    const EigenSystem ew = sym_eig(t.val(w));
    const std::size_t n = a_vals.size();
    const std::size_t d = ew.values.size();
    if (t.val(e).rows() != n || t.val(e).cols() != d)
        throw DimensionError("bispec_integral: E shape mismatch");

    std::vector<double> u(d), uprime(d);
    for (std::size_t j = 0; j < d; ++j) {
        const double phi = ew.values[j];
        if (mode == SpectralShift::log_clamped) {
            u[j] = std::log(std::max(phi, clamp_eps));
            uprime[j] = phi > clamp_eps ? 1.0 / phi : 0.0;
        } else {
            u[j] = phi - 1.0;
            uprime[j] = 1.0;
        }
    }

    DenseMatrix e_tilde = p_inv * t.val(e) * ew.vectors;
    DenseMatrix g_kernel(n, d);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j)
            g_kernel(i, j) = expm1_ratio(a_vals[i] + u[j], tau, delta);
    DenseMatrix y = p * e_tilde.hadamard(g_kernel) * ew.vectors.transpose();

    const Var out = t.next_id();
    auto back = [out, w, e, p, p_inv, a_vals, ew, u, uprime, e_tilde, g_kernel, tau,
                 delta](Tape& tt) {
        const std::size_t nn = a_vals.size();
        const std::size_t dd = ew.values.size();
        const DenseMatrix y_tilde = p.transpose() * tt.grad(out) * ew.vectors;

        // dL/dE maps back through both bases with the kernel applied entrywise.
        tt.accumulate(e, p_inv.transpose() * y_tilde.hadamard(g_kernel) *
                             ew.vectors.transpose());

        // dL/dW = Q sym(B) Q^T with divided differences of the kernel in phi.
        DenseMatrix b(dd, dd);
        for (std::size_t j = 0; j < dd; ++j) {
            for (std::size_t k = j; k < dd; ++k) {
                const double pj = ew.values[j], pk = ew.values[k];
                const double gap_tol = 1e-7 * std::max({1.0, std::fabs(pj), std::fabs(pk)});
                double bjk = 0.0, bkj = 0.0;
                if (j == k || std::fabs(pk - pj) < gap_tol) {
                    for (std::size_t i = 0; i < nn; ++i) {
                        const double mid = 0.5 * (u[j] + u[k]);
                        const double dgds = detail::expm1_ratio_deriv(a_vals[i] + mid, tau);
                        const double slope = dgds * 0.5 * (uprime[j] + uprime[k]);
                        bjk += e_tilde(i, j) * y_tilde(i, k) * slope;
                        bkj += e_tilde(i, k) * y_tilde(i, j) * slope;
                    }
                } else {
                    const double inv_gap = 1.0 / (pk - pj);
                    for (std::size_t i = 0; i < nn; ++i) {
                        const double diff = (g_kernel(i, k) - g_kernel(i, j)) * inv_gap;
                        bjk += e_tilde(i, j) * y_tilde(i, k) * diff;
                        bkj += e_tilde(i, k) * y_tilde(i, j) * diff;
                    }
                }
                b(j, k) = bjk;
                if (k != j) b(k, j) = bkj;
            }
        }
        tt.accumulate(w, ew.vectors * detail::symmetrize(b) * ew.vectors.transpose());
    };
    return t.push(std::move(y), std::move(back));
}

}  // namespace dgode::ad
