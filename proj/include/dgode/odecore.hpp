#pragma once

#include <cmath>
#include <cstddef>
#include <string>

#include "dgode/matrix.hpp"
#include "dgode/numerics.hpp"

namespace dgode {

enum class OdeMethod { euler, rk4, closed_form_exact, closed_form_shifted };

inline OdeMethod ode_method_from_string(const std::string& s) {
    if (s == "euler") return OdeMethod::euler;
    if (s == "rk4") return OdeMethod::rk4;
    if (s == "closed_form_exact") return OdeMethod::closed_form_exact;
    if (s == "closed_form_shifted") return OdeMethod::closed_form_shifted;
    throw ConfigError("unknown ODE method: " + s);
}

inline const char* ode_method_name(OdeMethod m) {
    switch (m) {
        case OdeMethod::euler: return "euler";
        case OdeMethod::rk4: return "rk4";
        case OdeMethod::closed_form_exact: return "closed_form_exact";
        default: return "closed_form_shifted";
    }
}

struct OdeConfig {
    double t_end = 4.0;
    std::size_t steps = 16;
    OdeMethod method = OdeMethod::closed_form_exact;
    double sing_tol = 1e-8;   // singular-limit threshold for eigenvalue sums
    double clamp_eps = 1e-6;  // floor for spectra entering a logarithm

    void validate() const {
        if (!(t_end >= 0.0)) throw ConfigError("OdeConfig: t_end must be >= 0");
        if (steps < 1) throw ConfigError("OdeConfig: steps must be >= 1");
        if (!(sing_tol > 0.0)) throw ConfigError("OdeConfig: sing_tol must be > 0");
        if (!(clamp_eps > 0.0)) throw ConfigError("OdeConfig: clamp_eps must be > 0");
    }
};

/// (e^{tau s} - 1) / s, switching to the second-order series
/// tau + s tau^2 / 2 when |s| < delta.
inline double expm1_ratio(double s, double tau, double delta) {
    if (std::fabs(s) < delta) return tau + 0.5 * s * tau * tau;
    return std::expm1(tau * s) / s;
}

/// Spectral data shared by every closed-form evaluation: eigendecompositions
/// of the propagation operator A_hat and the weight W, their shifted and
/// clamped-log spectra, matrix logs, and the construction-time E in the
/// joint eigenbasis (E_tilde = P^{-1} E Q).
struct ClosedFormCache {
    EigenSystem adj_eig;               // P, Lambda
    EigenSystem w_eig;                 // Q, Phi
    std::vector<double> adj_shifted;   // Lambda - 1
    std::vector<double> w_shifted;     // Phi - 1
    std::vector<double> adj_log;       // ln max(Lambda, eps)
    std::vector<double> w_log;         // ln max(Phi, eps)
    DenseMatrix e_tilde;
    DenseMatrix log_adj;               // ln A_hat
    DenseMatrix log_w;                 // ln W
    double clamp_eps = 1e-6;

    ClosedFormCache(EigenSystem adj, const DenseMatrix& w, const DenseMatrix& e, double eps)
        : adj_eig(std::move(adj)), clamp_eps(eps) {
        if (!(eps > 0.0)) throw ConfigError("ClosedFormCache: clamp_eps must be > 0");
        w_eig = general_eig(w);
        const std::size_t n = adj_eig.values.size();
        const std::size_t d = w_eig.values.size();
        if (e.rows() != n || e.cols() != d)
            throw DimensionError("ClosedFormCache: E shape does not match operators");

        adj_shifted.resize(n);
        adj_log.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            adj_shifted[i] = adj_eig.values[i] - 1.0;
            adj_log[i] = std::log(std::max(adj_eig.values[i], eps));
        }
        w_shifted.resize(d);
        w_log.resize(d);
        for (std::size_t j = 0; j < d; ++j) {
            w_shifted[j] = w_eig.values[j] - 1.0;
            w_log[j] = std::log(std::max(w_eig.values[j], eps));
        }
        e_tilde = adj_eig.inverse * e * w_eig.vectors;
        log_adj = adj_eig.apply([eps](double l) { return std::log(std::max(l, eps)); });
        log_w = w_eig.apply([eps](double l) { return std::log(std::max(l, eps)); });
    }

    ClosedFormCache(const DenseMatrix& a_hat, const DenseMatrix& w, const DenseMatrix& e,
                    double eps)
        : ClosedFormCache(sym_eig(a_hat), w, e, eps) {}

    std::size_t node_count() const { return adj_eig.values.size(); }
    std::size_t feature_dim() const { return w_eig.values.size(); }

    /// P^{-1} E Q for an arbitrary E of matching shape.
    DenseMatrix to_eigenbasis(const DenseMatrix& e) const {
        if (e.rows() != node_count() || e.cols() != feature_dim())
            throw DimensionError("ClosedFormCache: E shape does not match operators");
        return adj_eig.inverse * e * w_eig.vectors;
    }

    /// P M Q^{-1}, the inverse change of basis.
    DenseMatrix from_eigenbasis(const DenseMatrix& m) const {
        return adj_eig.vectors * m * w_eig.inverse;
    }
};

/// Initial state H(0): in the joint eigenbasis each entry is
/// (Lambda_i E~_ij Phi_j - E~_ij) / (ln Lambda_i + ln Phi_j), with the
/// analytic limit E~_ij when the denominator vanishes.
inline DenseMatrix initial_state(const DenseMatrix& e, const ClosedFormCache& cache,
                                 double sing_tol = 1e-8) {
    DenseMatrix m = cache.to_eigenbasis(e);
    for (std::size_t i = 0; i < m.rows(); ++i) {
        for (std::size_t j = 0; j < m.cols(); ++j) {
            const double s = cache.adj_log[i] + cache.w_log[j];
            m(i, j) *= std::fabs(s) < sing_tol ? 1.0 : std::expm1(s) / s;
        }
    }
    DenseMatrix h0 = cache.from_eigenbasis(m);
    h0.assert_finite("initial_state");
    return h0;
}

/// dH/dt = ln(A_hat) H + H ln(W) + E.
inline DenseMatrix ode_rhs(const DenseMatrix& h, const DenseMatrix& e,
                           const ClosedFormCache& cache) {
    if (h.rows() != e.rows() || h.cols() != e.cols())
        throw DimensionError("ode_rhs: H and E shapes differ");
    return cache.log_adj * h + h * cache.log_w + e;
}

/// F_ij(t) = E~_ij (e^{t(Lambda'_i + Phi'_j)} - 1) / (Lambda'_i + Phi'_j),
/// second-order series below the singularity threshold.
inline DenseMatrix f_matrix(const ClosedFormCache& cache, double t, double delta) {
    DenseMatrix f = cache.e_tilde;
    for (std::size_t i = 0; i < f.rows(); ++i)
        for (std::size_t j = 0; j < f.cols(); ++j)
            f(i, j) *= expm1_ratio(cache.adj_shifted[i] + cache.w_shifted[j], t, delta);
    return f;
}

/// The shifted closed form H(t) = e^{(A_hat - I)t} E e^{(W - I)t} + P F(t) Q^{-1},
/// built on the shifted spectra rather than the logs. A first-order surrogate
/// for the exact solution; its deviation from the numeric solution is
/// measured by the verification suite, not assumed small.
inline DenseMatrix shifted_closed_form(const DenseMatrix& e, const ClosedFormCache& cache, double t,
                                     double sing_tol = 1e-8) {
    if (!(t >= 0.0)) throw ConfigError("shifted_closed_form: t must be >= 0");
    const DenseMatrix exp_adj =
        cache.adj_eig.apply([t](double l) { return std::exp(t * (l - 1.0)); });
    const DenseMatrix exp_w = cache.w_eig.apply([t](double l) { return std::exp(t * (l - 1.0)); });

    DenseMatrix f = cache.to_eigenbasis(e);
    for (std::size_t i = 0; i < f.rows(); ++i)
        for (std::size_t j = 0; j < f.cols(); ++j)
            f(i, j) *= expm1_ratio(cache.adj_shifted[i] + cache.w_shifted[j], t, sing_tol);

    DenseMatrix h = exp_adj * e * exp_w + cache.from_eigenbasis(f);
    h.assert_finite("shifted_closed_form");
    return h;
}

/// Exact solution of dH/dt = ln(A_hat) H + H ln(W) + E from H(0) = initial
/// state: the integral of A_hat^s E W^s over [0, t+1], evaluated in the joint
/// eigenbasis as E~_ij (e^{(t+1)(ln Lambda_i + ln Phi_j)} - 1) / (ln Lambda_i + ln Phi_j).
inline DenseMatrix exact_solution(const DenseMatrix& e, const ClosedFormCache& cache, double t,
                                  double sing_tol = 1e-8) {
    if (!(t >= 0.0)) throw ConfigError("exact_solution: t must be >= 0");
    DenseMatrix m = cache.to_eigenbasis(e);
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j < m.cols(); ++j)
            m(i, j) *= expm1_ratio(cache.adj_log[i] + cache.w_log[j], t + 1.0, sing_tol);
    DenseMatrix h = cache.from_eigenbasis(m);
    h.assert_finite("exact_solution");
    return h;
}

/// Evolve E for config.t_end time units by the configured method. Numeric
/// methods integrate ode_rhs from the initial state with fixed steps.
inline DenseMatrix solve(const DenseMatrix& e, const ClosedFormCache& cache,
                         const OdeConfig& config) {
    config.validate();
    if (config.t_end == 0.0) return initial_state(e, cache, config.sing_tol);
    switch (config.method) {
        case OdeMethod::closed_form_exact:
            return exact_solution(e, cache, config.t_end, config.sing_tol);
        case OdeMethod::closed_form_shifted:
            return shifted_closed_form(e, cache, config.t_end, config.sing_tol);
        case OdeMethod::euler: {
            DenseMatrix h = initial_state(e, cache, config.sing_tol);
            const double dt = config.t_end / static_cast<double>(config.steps);
            for (std::size_t k = 0; k < config.steps; ++k) h += dt * ode_rhs(h, e, cache);
            h.assert_finite("solve(euler)");
            return h;
        }
        case OdeMethod::rk4: {
            DenseMatrix h = initial_state(e, cache, config.sing_tol);
            const double dt = config.t_end / static_cast<double>(config.steps);
            for (std::size_t k = 0; k < config.steps; ++k) {
                const DenseMatrix k1 = ode_rhs(h, e, cache);
                const DenseMatrix k2 = ode_rhs(h + (0.5 * dt) * k1, e, cache);
                const DenseMatrix k3 = ode_rhs(h + (0.5 * dt) * k2, e, cache);
                const DenseMatrix k4 = ode_rhs(h + dt * k3, e, cache);
                h += (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            }
            h.assert_finite("solve(rk4)");
            return h;
        }
    }
    throw ConfigError("solve: invalid method");
}

/// Relative residual of d^2H/dt^2 = ln(A_hat) dH/dt + dH/dt ln(W), measured
/// with central differences of the exact solution at time t. Returns 0 when
/// the second derivative sits below the finite-difference noise floor (the
/// degenerate case where both sides vanish).
inline double second_order_identity_check(const DenseMatrix& e, const ClosedFormCache& cache,
                                          double t, double step = 1e-4) {
    if (!(t > 0.0)) throw ConfigError("second_order_identity_check: t must be > 0");
    if (!(step > 0.0 && step < t)) throw ConfigError("second_order_identity_check: bad step");
    const DenseMatrix hp = exact_solution(e, cache, t + step);
    const DenseMatrix h0 = exact_solution(e, cache, t);
    const DenseMatrix hm = exact_solution(e, cache, t - step);

    const DenseMatrix d2 = (1.0 / (step * step)) * (hp - 2.0 * h0 + hm);
    const double scale = std::max({hp.frobenius_norm(), h0.frobenius_norm(), 1e-30});
    const double noise_floor = 64.0 * 2.22e-16 * scale / (step * step);
    const double d2_norm = d2.frobenius_norm();
    if (d2_norm <= noise_floor) return 0.0;

    const DenseMatrix d1 = (0.5 / step) * (hp - hm);
    const DenseMatrix residual = d2 - (cache.log_adj * d1 + d1 * cache.log_w);
    return residual.frobenius_norm() / d2_norm;
}

}  // namespace dgode
