#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "dgode/graph.hpp"
#include "dgode/model.hpp"
#include "dgode/numerics.hpp"
#include "dgode/odecore.hpp"
#include "dgode/quadrature.hpp"

namespace dgode::verify {

struct VerifyOptions {
    std::uint64_t seed = 1;
    bool fault_inject = false;  // perturb the numeric rhs to prove the triangle trips
};

struct CheckResult {
    std::string name;
    bool pass = false;
    double measured = 0.0;
    double tolerance = 0.0;
    std::vector<std::string> covers;
    bool report_only = false;  // measured value is informational
};

/// Operations with an equation behind them; the suite must exercise each.
inline const std::vector<std::string>& required_operations() {
    static const std::vector<std::string> ops{
        "sym_eig",        "general_eig",   "mat_pow_int",    "mat_exp",
        "mat_log_clamped", "normalize_adjacency", "mixhop_step", "unroll_mixhop",
        "initial_state",  "ode_rhs",       "f_matrix",       "shifted_closed_form",
        "exact_solution", "solve",         "second_order_identity_check",
        "speaker_embed",  "gru_cell_step", "encode_modality", "fuse_speaker",
        "forward",        "predict_label", "evaluate"};
    return ops;
}

namespace detail {

inline DenseMatrix random_symmetric_spectrum(std::size_t n, double lo, double hi,
                                             std::mt19937_64& rng) {
    DenseMatrix g(n, n);
    g.fill_gaussian(rng);
    const EigenSystem basis = sym_eig(0.5 * (g + g.transpose()));
    std::uniform_real_distribution<double> d(lo, hi);
    DenseMatrix scaled = basis.vectors;
    std::vector<double> spec(n);
    for (double& v : spec) v = d(rng);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) scaled(i, j) *= spec[j];
    DenseMatrix m = scaled * basis.vectors.transpose();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            const double v = 0.5 * (m(i, j) + m(j, i));
            m(i, j) = v;
            m(j, i) = v;
        }
    return m;
}

struct OdeInstance {
    DenseMatrix a_hat, w, e;
};

inline OdeInstance random_instance(std::size_t n, std::size_t d, std::mt19937_64& rng,
                                   double lo, double hi) {
    OdeInstance inst;
    inst.a_hat = random_symmetric_spectrum(n, lo, hi, rng);
    inst.w = random_symmetric_spectrum(d, lo, hi, rng);
    inst.e = DenseMatrix(n, d);
    inst.e.fill_gaussian(rng);
    return inst;
}

/// Fixed-step RK4 on ode_rhs with an optional constant bias added to every
/// rhs evaluation (the fault-injection hook).
inline DenseMatrix rk4_with_bias(const DenseMatrix& e, const ClosedFormCache& cache, double t_end,
                                 std::size_t steps, double bias) {
    DenseMatrix h = initial_state(e, cache);
    const double dt = t_end / static_cast<double>(steps);
    auto rhs = [&](const DenseMatrix& state) {
        DenseMatrix r = ode_rhs(state, e, cache);
        if (bias != 0.0)
            for (double& v : r.data()) v += bias;
        return r;
    };
    for (std::size_t k = 0; k < steps; ++k) {
        const DenseMatrix k1 = rhs(h);
        const DenseMatrix k2 = rhs(h + (0.5 * dt) * k1);
        const DenseMatrix k3 = rhs(h + (0.5 * dt) * k2);
        const DenseMatrix k4 = rhs(h + dt * k3);
        h += (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    return h;
}

}  // namespace detail

inline std::vector<CheckResult> run_all(const VerifyOptions& opts) {
    std::vector<CheckResult> results;
    std::mt19937_64 rng(opts.seed);
    auto add = [&](const std::string& name, double measured, double tol,
                   std::vector<std::string> covers, bool report_only = false) {
        results.push_back(
            CheckResult{name, report_only || measured <= tol, measured, tol, std::move(covers),
                        report_only});
    };

    // Eigendecomposition reconstruction across the paths and sizes in use.
    {
        double worst = 0.0;
        for (std::size_t n : {5, 16, 48}) {
            DenseMatrix g(n, n);
            g.fill_gaussian(rng);
            const DenseMatrix m = 0.5 * (g + g.transpose());
            const EigenSystem es = sym_eig(m);
            worst = std::max(worst, relative_frobenius_error(es.reconstruct(), m));
            worst = std::max(worst, relative_frobenius_error(
                                        es.vectors * es.inverse, DenseMatrix::identity(n)));
        }
        const DenseMatrix spd = [&] {
            DenseMatrix g(6, 6);
            g.fill_gaussian(rng);
            return DenseMatrix(g.transpose() * g + DenseMatrix::identity(6));
        }();
        worst = std::max(worst,
                         relative_frobenius_error(general_eig(spd).reconstruct(), spd));
        bool rejected = false;
        try {
            general_eig(DenseMatrix{{0, -1}, {1, 0}});
        } catch (const DiagonalizabilityError&) {
            rejected = true;
        }
        add("eig_reconstruction", rejected ? worst : 1.0, 1e-9, {"sym_eig", "general_eig"});
    }

    // Integer powers against the spectral route.
    {
        const DenseMatrix m = detail::random_symmetric_spectrum(5, 0.2, 1.5, rng);
        const EigenSystem es = sym_eig(m);
        double worst = 0.0;
        for (std::size_t k : {0, 3, 6}) {
            const DenseMatrix direct = mat_pow_int(m, k);
            const DenseMatrix spectral =
                es.apply([k](double l) { return std::pow(l, static_cast<double>(k)); });
            worst = std::max(worst, relative_frobenius_error(direct, spectral, 1.0));
        }
        add("matrix_power", worst, 1e-8, {"mat_pow_int"});
    }

    // Matrix exponential against its truncated series plus the semigroup law.
    {
        DenseMatrix g(4, 4);
        g.fill_gaussian(rng, 0.0, 0.5);
        const DenseMatrix m = 0.5 * (g + g.transpose());
        DenseMatrix series = DenseMatrix::identity(4);
        DenseMatrix term = DenseMatrix::identity(4);
        for (int k = 1; k <= 30; ++k) {
            term = term * m * (0.5 / k);
            series += term;
        }
        double worst = relative_frobenius_error(mat_exp(m, 0.5), series);
        worst = std::max(worst, relative_frobenius_error(mat_exp(m, 2.0),
                                                         mat_exp(m, 0.8) * mat_exp(m, 1.2)));
        add("matrix_exponential", worst, 1e-8, {"mat_exp"});
    }

    // exp(log m) round trip on a safely positive spectrum.
    {
        const DenseMatrix m = detail::random_symmetric_spectrum(6, 1e-3, 8.0, rng);
        add("log_round_trip",
            relative_frobenius_error(mat_exp(mat_log_clamped(m, 1e-6), 1.0), m), 1e-8,
            {"mat_log_clamped", "mat_exp"});
    }

    // Normalized adjacency spectrum bound on conversation-shaped graphs.
    {
        double worst = 0.0;
        for (std::size_t utt : {1, 4, 9}) {
            const double alpha = 0.9;
            const auto norm = normalize_adjacency(conversation_adjacency(utt, 3, 3), alpha);
            for (double v : norm.eig.values) {
                worst = std::max(worst, -v);
                worst = std::max(worst, v - alpha);
            }
        }
        add("adjacency_spectrum", worst, 1e-10, {"normalize_adjacency"});
    }

    // Mixhop recursion against the expanded power sum.
    {
        const auto adj = normalize_adjacency(conversation_adjacency(4, 2, 2), 0.9);
        const DenseMatrix w = detail::random_symmetric_spectrum(5, 0.1, 0.9, rng);
        DenseMatrix e(12, 5);
        e.fill_gaussian(rng);
        const MixhopParams params{w, {1.0}};
        DenseMatrix direct(12, 5);
        for (std::size_t k = 0; k <= 5; ++k)
            direct += mat_pow_int(adj.matrix, k) * e * mat_pow_int(w, k);
        add("mixhop_power_sum",
            relative_frobenius_error(unroll_mixhop(e, adj, params, 5), direct), 1e-9,
            {"mixhop_step", "unroll_mixhop"});
    }

    // Dirichlet energy against the brute-force edge sum.
    {
        const DenseMatrix a = conversation_adjacency(3, 1, 1);
        const auto adj = normalize_adjacency(a, 1.0);
        DenseMatrix h(9, 4);
        h.fill_gaussian(rng);
        double expected = 0.0;
        for (std::size_t i = 0; i < 9; ++i)
            for (std::size_t j = 0; j < 9; ++j)
                if (a(i, j) > 0.5)
                    for (std::size_t k = 0; k < 4; ++k) {
                        const double diff = h(i, k) - h(j, k);
                        expected += 0.5 * diff * diff;
                    }
        add("dirichlet_energy",
            std::fabs(dirichlet_energy(h, adj) - expected) / std::max(expected, 1.0), 1e-12,
            {"dirichlet_energy"});
    }

    // Oracle triangle: closed form vs RK4 vs Simpson quadrature. The fault
    // hook biases the rhs by 1e-3, which must trip this check.
    {
        double worst = 0.0;
        const double times[4] = {0.5, 1.0, 2.0, 4.0};
        for (int rep = 0; rep < 10; ++rep) {
            const auto inst = detail::random_instance(6, 4, rng, 0.1, 0.95);
            const ClosedFormCache cache(inst.a_hat, inst.w, inst.e, 1e-6);
            const double t = times[rep % 4];
            const DenseMatrix exact = exact_solution(inst.e, cache, t);
            DenseMatrix rk;
            if (opts.fault_inject) {
                rk = detail::rk4_with_bias(inst.e, cache, t, 512, 1e-3);
            } else {
                OdeConfig config;
                config.method = OdeMethod::rk4;
                config.steps = 512;
                config.t_end = t;
                rk = solve(inst.e, cache, config);
            }
            const DenseMatrix quad = simpson_power_integral(inst.a_hat, inst.w, inst.e,
                                                            t + 1.0, 2000);
            worst = std::max(worst, relative_frobenius_error(exact, rk));
            worst = std::max(worst, relative_frobenius_error(exact, quad));
            worst = std::max(worst, relative_frobenius_error(rk, quad));
        }
        add("oracle_triangle", worst, 1e-5,
            {"exact_solution", "solve", "ode_rhs", "initial_state"});
    }

    // d/dt of the exact solution equals the two-sided power integrand.
    {
        double worst = 0.0;
        for (int rep = 0; rep < 5; ++rep) {
            const auto inst = detail::random_instance(6, 4, rng, 0.1, 0.95);
            const ClosedFormCache cache(inst.a_hat, inst.w, inst.e, 1e-6);
            const double t = 0.8 + 0.4 * rep, h = 1e-4;
            const DenseMatrix fd = (0.5 / h) * (exact_solution(inst.e, cache, t + h) -
                                                exact_solution(inst.e, cache, t - h));
            const EigenSystem ea = sym_eig(inst.a_hat);
            const EigenSystem ew = sym_eig(inst.w);
            const DenseMatrix expected =
                ea.apply([&](double l) { return std::pow(l, t + 1.0); }) * inst.e *
                ew.apply([&](double l) { return std::pow(l, t + 1.0); });
            worst = std::max(worst, relative_frobenius_error(fd, expected));
        }
        add("riemann_derivative", worst, 1e-3, {"exact_solution"});
    }

    // Second derivative identity of the evolution.
    {
        double worst = 0.0;
        for (int rep = 0; rep < 5; ++rep) {
            const auto inst = detail::random_instance(6, 4, rng, 0.1, 0.95);
            const ClosedFormCache cache(inst.a_hat, inst.w, inst.e, 1e-6);
            worst = std::max(worst,
                             second_order_identity_check(inst.e, cache, 1.0, 1e-4));
        }
        add("second_order_identity", worst, 1e-4, {"second_order_identity_check"});
    }

    // Initial state against Simpson quadrature over [0, 1], plus the
    // singular identity-operator limit.
    {
        double worst = 0.0;
        for (int rep = 0; rep < 5; ++rep) {
            const auto inst = detail::random_instance(6, 4, rng, 0.1, 0.95);
            const ClosedFormCache cache(inst.a_hat, inst.w, inst.e, 1e-6);
            const DenseMatrix oracle =
                simpson_power_integral(inst.a_hat, inst.w, inst.e, 1.0, 10000);
            worst = std::max(worst,
                             relative_frobenius_error(initial_state(inst.e, cache), oracle));
        }
        DenseMatrix e(4, 3);
        e.fill_gaussian(rng);
        const ClosedFormCache unit(DenseMatrix::identity(4), DenseMatrix::identity(3), e, 1e-6);
        worst = std::max(worst, relative_frobenius_error(initial_state(e, unit), e));
        add("initial_state_quadrature", worst, 1e-7, {"initial_state"});
    }

    // Branch continuity of the F(t) kernel at the singularity threshold.
    {
        const double s = 1e-8, t = 1.0;
        const double exact = expm1_ratio(s, t, 1e-300);
        const double series = expm1_ratio(s, t, 1.0);
        double worst = std::fabs(exact - series);
        const ClosedFormCache shifted(DenseMatrix{{1.5}}, DenseMatrix{{1.5}}, DenseMatrix{{2.0}},
                                      1e-6);
        worst = std::max(worst, std::fabs(f_matrix(shifted, 1.0, 1e-8)(0, 0) -
                                          2.0 * (std::exp(1.0) - 1.0)));
        add("f_matrix_branch", worst, 1e-7, {"f_matrix"});
    }

    // The shifted closed form: exact at t = 0, measured (not asserted)
    // deviation from the numeric solution at t = 1.
    {
        const auto inst = detail::random_instance(6, 4, rng, 0.1, 0.95);
        const ClosedFormCache cache(inst.a_hat, inst.w, inst.e, 1e-6);
        add("shifted_form_t0",
            relative_frobenius_error(shifted_closed_form(inst.e, cache, 0.0), inst.e), 1e-10,
            {"shifted_closed_form"});
        OdeConfig config;
        config.method = OdeMethod::rk4;
        config.steps = 512;
        config.t_end = 1.0;
        const double deviation = relative_frobenius_error(
            shifted_closed_form(inst.e, cache, 1.0), solve(inst.e, cache, config));
        add("shifted_form_deviation_vs_rk4", deviation, 0.0, {"shifted_closed_form"}, true);
    }

    // Discrete sum sandwiched between the right and left Riemann sums.
    {
        double worst = 0.0;
        const auto inst = detail::random_instance(6, 4, rng, 0.2, 0.9);
        const ClosedFormCache cache(inst.a_hat, inst.w, inst.e, 1e-6);
        const NormalizedAdjacency adj{inst.a_hat, 1.0, sym_eig(inst.a_hat)};
        const MixhopParams params{inst.w, {1.0}};
        for (std::size_t n = 1; n <= 8; ++n) {
            const DenseMatrix left =
                cache.to_eigenbasis(unroll_mixhop(inst.e, adj, params, n));
            const DenseMatrix integral =
                cache.to_eigenbasis(exact_solution(inst.e, cache, static_cast<double>(n)));
            for (std::size_t i = 0; i < left.rows(); ++i)
                for (std::size_t j = 0; j < left.cols(); ++j) {
                    if (cache.e_tilde(i, j) <= 1e-6) continue;
                    const double ratio = cache.adj_eig.values[i] * cache.w_eig.values[j];
                    worst = std::max(worst, ratio * left(i, j) - integral(i, j));
                    worst = std::max(worst, integral(i, j) - left(i, j));
                }
        }
        add("riemann_sandwich", std::max(worst, 0.0), 1e-10,
            {"unroll_mixhop", "exact_solution", "mixhop_step"});
    }

    // t_end = 0: every method returns the initial state.
    {
        const auto inst = detail::random_instance(5, 3, rng, 0.1, 0.95);
        const ClosedFormCache cache(inst.a_hat, inst.w, inst.e, 1e-6);
        const DenseMatrix h0 = initial_state(inst.e, cache);
        double worst = 0.0;
        for (OdeMethod m : {OdeMethod::euler, OdeMethod::rk4, OdeMethod::closed_form_exact,
                            OdeMethod::closed_form_shifted}) {
            OdeConfig config;
            config.method = m;
            config.t_end = 0.0;
            worst = std::max(worst, relative_frobenius_error(solve(inst.e, cache, config), h0));
        }
        add("solve_t0_identity", worst, 1e-13, {"solve", "initial_state"});
    }

    // Empirical solver orders from step halving.
    {
        const auto inst = detail::random_instance(6, 4, rng, 0.1, 0.95);
        const ClosedFormCache cache(inst.a_hat, inst.w, inst.e, 1e-6);
        const DenseMatrix exact = exact_solution(inst.e, cache, 2.0);
        auto err = [&](OdeMethod method, std::size_t steps) {
            OdeConfig config;
            config.method = method;
            config.steps = steps;
            config.t_end = 2.0;
            return (solve(inst.e, cache, config) - exact).frobenius_norm();
        };
        const double euler_order = std::log2(err(OdeMethod::euler, 64) / err(OdeMethod::euler, 128));
        const double rk4_order = std::log2(err(OdeMethod::rk4, 16) / err(OdeMethod::rk4, 32));
        add("solver_order_euler", std::fabs(euler_order - 1.0), 0.2, {"solve"});
        add("solver_order_rk4", std::fabs(rk4_order - 4.0), 0.5, {"solve"});
    }

    // Encoder pieces: column selection, hand-run GRU, tied-cell symmetry,
    // additive fusion.
    {
        SpeakerTable table{DenseMatrix{{1, 2}, {3, 4}}};
        const auto sel = speaker_embed(table, {0, 1});
        double worst = std::fabs(sel[0] - 2.0) + std::fabs(sel[1] - 4.0);
        const auto zero = speaker_embed(table, {0, 0});
        worst += std::fabs(zero[0]) + std::fabs(zero[1]);
        add("speaker_embedding", worst, 1e-14, {"speaker_embed"});

        GruCellParams cell;
        cell.wz = cell.wr = cell.wh = DenseMatrix(2, 2);
        cell.uz = cell.ur = cell.uh = DenseMatrix(2, 2);
        cell.bz = cell.br = cell.bh = DenseMatrix(1, 2);
        const auto h0 = gru_cell_step({1.0, -1.0}, {0.0, 0.0}, cell);
        double gru_err = std::fabs(h0[0]) + std::fabs(h0[1]);
        cell.bz = DenseMatrix(1, 2, 50.0);
        const auto h1 = gru_cell_step({0.5, 0.5}, {4.0, -4.0}, cell);
        gru_err += std::fabs(h1[0]) + std::fabs(h1[1]);
        add("gru_cell", gru_err, 1e-12, {"gru_cell_step"});

        std::mt19937_64 enc_rng(opts.seed + 17);
        ModalityEncoder enc = ModalityEncoder::init(3, 2, 4, enc_rng);
        enc.backward_cell = enc.forward_cell;
        for (std::size_t i = 0; i < 2; ++i)
            for (std::size_t j = 0; j < 4; ++j) enc.projection(2 + i, j) = enc.projection(i, j);
        std::vector<std::vector<double>> seq;
        std::normal_distribution<double> dist;
        for (int i = 0; i < 4; ++i) {
            std::vector<double> x(3);
            for (double& v : x) v = dist(enc_rng);
            seq.push_back(x);
        }
        const auto out = encode_modality(seq, enc);
        const auto rev = encode_modality({seq.rbegin(), seq.rend()}, enc);
        double sym_err = 0.0;
        for (std::size_t i = 0; i < seq.size(); ++i)
            for (std::size_t j = 0; j < 4; ++j)
                sym_err = std::max(sym_err,
                                   std::fabs(out[i][j] - rev[seq.size() - 1 - i][j]));
        add("bi_encoder_symmetry", sym_err, 1e-12, {"encode_modality"});

        const auto fused = fuse_speaker({1.0, 2.0}, {3.0, 4.0});
        add("speaker_fusion", std::fabs(fused[0] - 4.0) + std::fabs(fused[1] - 6.0), 1e-14,
            {"fuse_speaker"});
    }

    // Head behavior and gradient fidelity on a toy instance, across the four
    // ablation flag combinations.
    {
        SyntheticConfig data_cfg;
        data_cfg.conversations = 2;
        data_cfg.utt_min = data_cfg.utt_max = 3;
        data_cfg.speakers = 2;
        data_cfg.classes = 4;
        data_cfg.dim_text = 5;
        data_cfg.dim_audio = 4;
        data_cfg.dim_visual = 3;
        data_cfg.seed = opts.seed + 29;
        const Dataset data = gen_synthetic(data_cfg);

        ModelConfig base;
        base.embed_dim = 6;
        base.gru_hidden = 5;
        base.head_hidden = 6;
        base.w_past = 2;
        base.w_future = 2;
        base.ode.t_end = 1.0;
        base.dropout = 0.0;

        double head_err = 0.0;
        {
            ModelParams params = ModelParams::init(base, data.header, data.speakers(), 3);
            const auto contexts = prepare_dataset(data, params);
            const DenseMatrix probs = forward(params, contexts[0]);
            for (std::size_t i = 0; i < probs.rows(); ++i) {
                double sum = 0.0;
                for (std::size_t j = 0; j < probs.cols(); ++j) sum += probs(i, j);
                head_err = std::max(head_err, std::fabs(sum - 1.0));
            }
            head_err = std::max(
                head_err, static_cast<double>(predict_label({0.1, 0.7, 0.2}) != 1));
            head_err = std::max(head_err, static_cast<double>(predict_label({0.5, 0.5}) != 0));
        }
        add("head_softmax_argmax", head_err, 1e-9, {"forward", "predict_label"});

        double worst_grad = 0.0;
        for (bool use_ode : {true, false}) {
            for (bool use_mixhop : {true, false}) {
                ModelConfig cfg = base;
                cfg.flags.use_ode = use_ode;
                cfg.flags.use_mixhop = use_mixhop;
                ModelParams params = ModelParams::init(cfg, data.header, data.speakers(), 5);
                const auto contexts = prepare_dataset(data, params);
                std::vector<const ConvContext*> batch{&contexts[0], &contexts[1]};
                worst_grad =
                    std::max(worst_grad, gradient_check(params, batch, 1e-5).max_rel_err);
            }
        }
        add("gradient_fidelity", worst_grad, 1e-3, {"backward", "forward"});
    }

    // Weighted F1 on the hand-worked confusion matrix.
    {
        const auto report = metrics_from_confusion(DenseMatrix{{1, 1}, {0, 2}}, {"a", "b"});
        add("weighted_f1_hand_oracle", std::fabs(report.weighted_f1 - 11.0 / 15.0), 1e-9,
            {"evaluate"});
    }

    // Coverage manifest: every equation-bearing operation must be exercised.
    std::set<std::string> covered;
    for (const auto& r : results)
        for (const auto& op : r.covers) covered.insert(op);
    for (const auto& op : required_operations())
        if (!covered.count(op))
            throw Error("verify: required operation not covered by any check: " + op);

    return results;
}

inline bool all_passed(const std::vector<CheckResult>& results) {
    return std::all_of(results.begin(), results.end(),
                       [](const CheckResult& r) { return r.pass; });
}

inline void print_results(const std::vector<CheckResult>& results, std::FILE* out) {
    for (const auto& r : results) {
        if (r.report_only)
            std::fprintf(out, "[INFO] %-28s measured %.3e (reported, not asserted)\n",
                         r.name.c_str(), r.measured);
        else
            std::fprintf(out, "[%s] %-28s residual %.3e tolerance %.1e\n",
                         r.pass ? "PASS" : "FAIL", r.name.c_str(), r.measured, r.tolerance);
    }
    std::size_t passed = 0, checked = 0;
    for (const auto& r : results)
        if (!r.report_only) {
            ++checked;
            passed += r.pass;
        }
    std::fprintf(out, "%zu/%zu checks passed\n", passed, checked);
}

}  // namespace dgode::verify
