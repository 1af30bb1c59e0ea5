#pragma once

#include <atomic>
#include <cmath>
#include <mutex>
#include <numeric>
#include <string>
#include <thread>
#include <vector>

#include "pdv/engine.hpp"
#include "pdv/theory.hpp"

// Ensemble orchestration and the statistical verification suites. Tolerance
// policy: statistical comparisons use 3 standard errors; "consistent with
// zero" means estimate <= 3/sqrt(n). Path simulations fan out across workers;
// every estimate is reduced in path-index order from per-path slots, so
// parallel and serial runs agree bitwise.

namespace pdv::mc {

// ---------------------------------------------------------------------------
// Check results and verdicts
// ---------------------------------------------------------------------------

enum class Verdict { pass, fail, inconclusive };

// Each policy makes the verdict a pure function of the recorded fields, so
// re-running the verdict logic on a serialized result reproduces it.
enum class VerdictPolicy {
    le_ref_3se,        // estimate + 3*se <= reference
    within_3se,        // |estimate - reference| <= 3*se
    within_3se_gated,  // as above, but inconclusive when 3*se > 0.1*|reference|
    le_ref,            // estimate <= reference
    gt_ref,            // estimate >  reference
    ge_ref,            // estimate >= reference
    exact_zero,        // estimate == 0
    flag,              // estimate == 1 encodes a structural condition
    info,              // informational row, always passes
};

struct CheckResult {
    std::string name;
    double estimate = 0.0;
    double stderr_ = 0.0;
    long n = 0;
    double reference = 0.0;
    VerdictPolicy policy = VerdictPolicy::info;
    Verdict verdict = Verdict::pass;
    std::string note;
};

inline Verdict recompute_verdict(const CheckResult& r) {
    const double est = r.estimate, se = r.stderr_, ref = r.reference;
    switch (r.policy) {
        case VerdictPolicy::le_ref_3se:
            return est + 3.0 * se <= ref ? Verdict::pass : Verdict::fail;
        case VerdictPolicy::within_3se:
            return std::abs(est - ref) <= 3.0 * se ? Verdict::pass : Verdict::fail;
        case VerdictPolicy::within_3se_gated:
            if (3.0 * se > 0.1 * std::abs(ref)) return Verdict::inconclusive;
            return std::abs(est - ref) <= 3.0 * se ? Verdict::pass : Verdict::fail;
        case VerdictPolicy::le_ref:
            return est <= ref ? Verdict::pass : Verdict::fail;
        case VerdictPolicy::gt_ref:
            return est > ref ? Verdict::pass : Verdict::fail;
        case VerdictPolicy::ge_ref:
            return est >= ref ? Verdict::pass : Verdict::fail;
        case VerdictPolicy::exact_zero:
            return est == 0.0 ? Verdict::pass : Verdict::fail;
        case VerdictPolicy::flag:
            return est == 1.0 ? Verdict::pass : Verdict::fail;
        case VerdictPolicy::info:
            return Verdict::pass;
    }
    return Verdict::fail;
}

inline CheckResult make_result(std::string name, double estimate, double se, long n,
                               double reference, VerdictPolicy policy, std::string note = "") {
    CheckResult r;
    r.name = std::move(name);
    r.estimate = estimate;
    r.stderr_ = se;
    r.n = n;
    r.reference = reference;
    r.policy = policy;
    r.note = std::move(note);
    r.verdict = recompute_verdict(r);
    return r;
}

// Outcome of one named check: a headline row, supporting rows, and a verdict
// the check sets explicitly (informational rows never drag it down).
struct CheckOutcome {
    std::string name;
    CheckResult headline;
    std::vector<CheckResult> details;
    Verdict verdict = Verdict::pass;
};

inline Verdict worst(Verdict a, Verdict b) {
    if (a == Verdict::fail || b == Verdict::fail) return Verdict::fail;
    if (a == Verdict::inconclusive || b == Verdict::inconclusive) return Verdict::inconclusive;
    return Verdict::pass;
}

inline const char* to_string(Verdict v) {
    switch (v) {
        case Verdict::pass: return "pass";
        case Verdict::fail: return "fail";
        case Verdict::inconclusive: return "inconclusive";
    }
    return "fail";
}

inline const char* to_string(VerdictPolicy p) {
    switch (p) {
        case VerdictPolicy::le_ref_3se: return "estimate + 3*se <= reference";
        case VerdictPolicy::within_3se: return "|estimate - reference| <= 3*se";
        case VerdictPolicy::within_3se_gated:
            return "|estimate - reference| <= 3*se, inconclusive when 3*se > 0.1*|reference|";
        case VerdictPolicy::le_ref: return "estimate <= reference";
        case VerdictPolicy::gt_ref: return "estimate > reference";
        case VerdictPolicy::ge_ref: return "estimate >= reference";
        case VerdictPolicy::exact_zero: return "estimate == 0";
        case VerdictPolicy::flag: return "condition flag == 1";
        case VerdictPolicy::info: return "informational";
    }
    return "";
}

// ---------------------------------------------------------------------------
// Statistics helpers
// ---------------------------------------------------------------------------

struct MeanSE {
    double mean = 0.0;
    double se = 0.0;
    long n = 0;
};

inline MeanSE mean_se(const std::vector<double>& xs) {
    MeanSE out;
    out.n = static_cast<long>(xs.size());
    if (out.n == 0) return out;
    double sum = 0.0;
    for (double x : xs) sum += x;
    out.mean = sum / static_cast<double>(out.n);
    if (out.n == 1) return out;
    double ss = 0.0;
    for (double x : xs) ss += (x - out.mean) * (x - out.mean);
    out.se = std::sqrt(ss / static_cast<double>(out.n - 1) / static_cast<double>(out.n));
    return out;
}

// Antithetic pairs are dependent; the iid sample is the pair means.
inline std::vector<double> pair_means(const std::vector<double>& xs) {
    std::vector<double> out(xs.size() / 2);
    for (std::size_t k = 0; k < out.size(); ++k) out[k] = 0.5 * (xs[2 * k] + xs[2 * k + 1]);
    return out;
}

inline MeanSE estimate_samples(const std::vector<double>& per_path, bool antithetic) {
    return antithetic ? mean_se(pair_means(per_path)) : mean_se(per_path);
}

inline MeanSE proportion_se(long hits, long n) {
    MeanSE out;
    out.n = n;
    if (n == 0) return out;
    out.mean = static_cast<double>(hits) / static_cast<double>(n);
    out.se = std::sqrt(out.mean * (1.0 - out.mean) / static_cast<double>(n));
    return out;
}

inline double zero_consistency_ref(long n) { return 3.0 / std::sqrt(static_cast<double>(n)); }

// ---------------------------------------------------------------------------
// Parallel path fan-out
// ---------------------------------------------------------------------------

inline int resolve_workers(int workers) {
    if (workers > 0) return workers;
    const unsigned hc = std::thread::hardware_concurrency();
    return hc > 0 ? static_cast<int>(hc) : 1;
}

// Runs fn(unit) for unit in [0, n); results must be written to per-unit slots.
template <class Fn>
inline void parallel_units(long n, int workers, Fn&& fn) {
    workers = std::min<long>(resolve_workers(workers), n);
    if (workers <= 1) {
        for (long i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<long> next{0};
    std::exception_ptr first_error;
    std::mutex err_mu;
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (;;) {
                const long i = next.fetch_add(1, std::memory_order_relaxed);
                if (i >= n) return;
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(err_mu);
                    if (!first_error) first_error = std::current_exception();
                    next.store(n, std::memory_order_relaxed);
                    return;
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

// ---------------------------------------------------------------------------
// Ensembles
// ---------------------------------------------------------------------------

struct EnsembleResult {
    std::vector<PathSummary> summaries;  // one per path, in path order
    std::vector<PathRecord> records;     // first cfg.record_paths paths
    double dt = 0.0;                     // resolved step size
    long n_exploded = 0;
    double min_r2 = kInf;
    double min_sigma = kInf;
    double max_abs_sigma = 0.0;
};

template <class P, class S>
EnsembleResult run_ensemble(const P& p, const S& s0, const VolFunctional& f, const SimConfig& cfg,
                            int workers = 0) {
    const auto bad = validate_params(p);
    if (!bad.ok()) throw std::invalid_argument("invalid parameters: " + bad.joined());
    const auto badc = validate_config(cfg);
    if (!badc.ok()) throw std::invalid_argument("invalid config: " + badc.joined());

    auto plan = pdv::detail::plan_steps(p, cfg);
    if constexpr (std::is_same_v<P, Pdv2Params>)
        plan.tol = pdv::detail::comparison_tol(p, plan.dt, cfg.comparison_tol);
    const auto sys = make_system(p);
    const auto state0 = make_state(s0);
    constexpr int N = std::is_same_v<P, Pdv2Params> ? 1 : 2;

    EnsembleResult out;
    out.dt = plan.dt;
    out.summaries.resize(cfg.paths);
    out.records.resize(std::min(cfg.record_paths, cfg.paths));

    auto run_one = [&](long path, auto&& noise) {
        if (path < static_cast<long>(out.records.size())) {
            PathRecord rec;
            rec.components = N;
            pdv::detail::RecordSink<N> sink{&rec};
            out.summaries[path] = pdv::detail::run_path<N>(sys, state0, f, cfg, plan, noise, sink);
            rec.factor_hit = out.summaries[path].factor_hit;
            rec.sigma_hit = out.summaries[path].sigma_hit;
            rec.tau_c = out.summaries[path].tau_c;
            rec.exploded = out.summaries[path].exploded;
            rec.last_time = out.summaries[path].last_time;
            out.records[path] = std::move(rec);
        } else {
            pdv::detail::NullSink<N> sink;
            out.summaries[path] = pdv::detail::run_path<N>(sys, state0, f, cfg, plan, noise, sink);
        }
    };

    if (cfg.antithetic) {
        const long units = cfg.paths / 2;
        parallel_units(units, workers, [&](long k) {
            // One increment buffer per pair: the even path consumes it as-is,
            // the odd path negated.
            NoiseStream stream(cfg.seed, static_cast<std::uint64_t>(k), plan.dt, cfg.driver);
            std::vector<double> inc(plan.n_steps);
            for (auto& dw : inc) dw = stream.next();
            BufferNoise even(inc);
            run_one(2 * k, even);
            BufferNoise odd(inc, /*negate=*/true);
            run_one(2 * k + 1, odd);
        });
    } else {
        parallel_units(cfg.paths, workers, [&](long i) {
            NoiseStream noise(cfg.seed, static_cast<std::uint64_t>(i), plan.dt, cfg.driver);
            run_one(i, noise);
        });
    }

    for (const auto& s : out.summaries) {
        out.n_exploded += s.exploded ? 1 : 0;
        out.min_r2 = std::min(out.min_r2, s.min_r2);
        out.min_sigma = std::min(out.min_sigma, s.min_sigma);
        out.max_abs_sigma = std::max(out.max_abs_sigma, s.max_abs_sigma);
    }
    return out;
}

template <class P>
EnsembleResult run_ensemble(const P& p, const VolFunctional& f, const SimConfig& cfg,
                            int workers = 0) {
    return run_ensemble(p, default_initial_state(p), f, cfg, workers);
}

// ---------------------------------------------------------------------------
// Non-explosion ladder check
// ---------------------------------------------------------------------------

// Estimates P(T_M <= T) per ladder threshold; passes when no path went
// non-finite, the estimates are nonincreasing in M, and the largest-M
// estimate is consistent with zero. Also reports the R2 positivity floor.
template <class P, class S>
CheckOutcome check_nonexplosion(const P& p, const S& s0, const VolFunctional& f,
                                const SimConfig& cfg, int workers = 0) {
    if (cfg.ladder.size() < 3)
        throw std::invalid_argument("check_nonexplosion needs a ladder of >= 3 thresholds");
    const EnsembleResult ens = run_ensemble(p, s0, f, cfg, workers);
    const long n = cfg.paths;

    CheckOutcome out;
    out.name = "nonexplosion";

    std::vector<long> hits(cfg.ladder.size(), 0);
    for (std::size_t m = 0; m < cfg.ladder.size(); ++m) {
        for (const auto& s : ens.summaries) hits[m] += (s.factor_hit[m] <= cfg.horizon) ? 1 : 0;
        if (m + 1 < cfg.ladder.size()) {
            const auto pse = proportion_se(hits[m], n);
            out.details.push_back(make_result(
                "hit_prob_M=" + std::to_string(cfg.ladder[m]), pse.mean, pse.se, n, 1.0,
                VerdictPolicy::info, "P(T_M <= T), informational rung"));
        }
    }

    bool monotone = true;
    for (std::size_t m = 0; m + 1 < hits.size(); ++m) monotone = monotone && hits[m] >= hits[m + 1];

    out.details.push_back(make_result("exploded_paths", static_cast<double>(ens.n_exploded), 0.0,
                                      n, 0.0, VerdictPolicy::exact_zero,
                                      "paths with non-finite values"));
    out.details.push_back(make_result("hit_prob_monotone_in_M", monotone ? 1.0 : 0.0, 0.0, n, 1.0,
                                      VerdictPolicy::flag, "P(T_M <= T) nonincreasing in M"));
    out.details.push_back(make_result(
        "min_r2_positive", ens.min_r2 > 0.0 ? 1.0 : 0.0, 0.0, n, 1.0, VerdictPolicy::flag,
        "min recorded R2 component = " + std::to_string(ens.min_r2)));

    const auto top = proportion_se(hits.back(), n);
    out.headline =
        make_result("hit_prob_at_largest_M", top.mean, top.se, n, zero_consistency_ref(n),
                    VerdictPolicy::le_ref, "P(T_M <= T) at M = " + std::to_string(cfg.ladder.back()));

    out.verdict = out.headline.verdict;
    for (const auto& d : out.details)
        if (d.policy != VerdictPolicy::info) out.verdict = worst(out.verdict, d.verdict);
    return out;
}

// ---------------------------------------------------------------------------
// Moment bound check
// ---------------------------------------------------------------------------

struct MomentBoundOptions {
    double t = 1e-3;  // evaluation time; capped where the bound stays finite
};

template <class P, class S>
CheckOutcome check_moment_bound(const P& p, const S& s0, const VolFunctional& f, SimConfig cfg,
                                const MomentBoundOptions& opts = {}, int workers = 0) {
    double intercept, slope, rate;
    if constexpr (std::is_same_v<P, Pdv2Params>) {
        const auto g = theory::gronwall_constants_2f(p, s0);
        intercept = g.c1;
        slope = g.c2;
        rate = g.c3;
    } else {
        const auto g = theory::gronwall_constants_4f(p, s0);
        intercept = g.c0_intercept;
        slope = g.c0_slope;
        rate = g.c1_rate;
    }
    auto bound = [&](double t) { return (intercept + slope * t) * std::exp(rate * t); };

    // Cap the horizon where the bound stays finite in double precision.
    double t_eval = opts.t;
    bool capped = false;
    if (rate > 0.0) {
        double t_max = 700.0 / rate;
        for (int i = 0; i < 4; ++i) {
            const double lin = intercept + slope * t_max;
            if (!(lin > 0.0)) break;
            t_max = (700.0 - std::log(lin)) / rate;
        }
        if (t_eval > t_max) {
            t_eval = t_max;
            capped = true;
        }
    }
    const double dt = resolve_dt(cfg, max_lambda(p));
    const long n_steps = static_cast<long>(std::floor(t_eval / dt + 1e-9));
    if (n_steps < 1)
        throw std::invalid_argument("check_moment_bound: bound not finite at any grid time");
    t_eval = static_cast<double>(n_steps) * dt;

    cfg.dt = dt;
    cfg.horizon = t_eval;
    const EnsembleResult ens = run_ensemble(p, s0, f, cfg, workers);
    std::vector<double> samples(ens.summaries.size());
    for (std::size_t i = 0; i < samples.size(); ++i) samples[i] = ens.summaries[i].terminal_moment;
    const auto est = estimate_samples(samples, cfg.antithetic);

    CheckOutcome out;
    out.name = "moment_bound";
    std::string note = "E(sum R1^2 + sum R2) at t = " + std::to_string(t_eval) +
                       " vs (c0 + c*t)*exp(rate*t)";
    if (capped) note += " (t capped where the bound is finite in double precision)";
    out.headline = make_result("moment_vs_gronwall_bound", est.mean, est.se, est.n, bound(t_eval),
                               VerdictPolicy::le_ref_3se, note);
    out.details.push_back(make_result("gronwall_rate", rate, 0.0, 0, 0.0, VerdictPolicy::info,
                                      "exponential rate of the bound"));
    out.verdict = out.headline.verdict;
    return out;
}

// ---------------------------------------------------------------------------
// Positivity and comparison check (2-factor)
// ---------------------------------------------------------------------------

// Counts sigma <= 0 observations (must be zero) and violations of
// sigma >= Y*(1 - tol); the violation fraction must not grow when dt is
// halved on the same Brownian paths.
inline CheckOutcome check_positivity(const Pdv2Params& p, const State2& s0,
                                     const VolFunctional& f, const SimConfig& cfg,
                                     int workers = 0) {
    const auto bad = validate_params(p);
    if (!bad.ok()) throw std::invalid_argument("invalid parameters: " + bad.joined());
    const auto badc = validate_config(cfg);
    if (!badc.ok()) throw std::invalid_argument("invalid config: " + badc.joined());
    const auto cond = theory::positivity_condition(p);
    if (!cond.rate_condition)
        throw std::invalid_argument("check refused: lambda2 < 2*lambda1 fails (lambda2 = " +
                                    std::to_string(p.lambda2) + ", 2*lambda1 = " +
                                    std::to_string(2.0 * p.lambda1) + ")");
    const double sigma0 = sigma_of_state(p, s0, f);
    if (!(sigma0 > 0.0))
        throw std::invalid_argument("check refused: sigma_0 > 0 fails (sigma_0 = " +
                                    std::to_string(sigma0) + ")");

    SimConfig coarse = cfg;
    coarse.dt = resolve_dt(cfg, max_lambda(p));
    SimConfig fine = coarse;
    fine.dt = coarse.dt / 2.0;

    auto plan_c = pdv::detail::plan_steps(p, coarse);
    plan_c.tol = pdv::detail::comparison_tol(p, plan_c.dt, cfg.comparison_tol);
    auto plan_f = pdv::detail::plan_steps(p, fine);
    plan_f.tol = pdv::detail::comparison_tol(p, plan_f.dt, cfg.comparison_tol);
    const auto sys = make_system(p);
    const auto state0 = make_state(s0);

    struct PerPath {
        long viol_c = 0, pts_c = 0, le0_c = 0;
        long viol_f = 0, pts_f = 0, le0_f = 0;
    };
    std::vector<PerPath> rows(cfg.paths);

    parallel_units(cfg.paths, workers, [&](long i) {
        const std::uint64_t stream = cfg.antithetic ? static_cast<std::uint64_t>(i / 2)
                                                    : static_cast<std::uint64_t>(i);
        const bool neg = cfg.antithetic && (i % 2 == 1);
        NoiseStream gen(cfg.seed, stream, plan_f.dt, cfg.driver, neg);
        std::vector<double> inc(plan_f.n_steps);
        for (auto& dw : inc) dw = gen.next();

        pdv::detail::NullSink<1> sink;
        BufferNoise fine_noise(inc);
        const PathSummary sf =
            pdv::detail::run_path<1>(sys, state0, f, fine, plan_f, fine_noise, sink);
        StrideSumNoise coarse_noise(inc, 2);
        const PathSummary sc =
            pdv::detail::run_path<1>(sys, state0, f, coarse, plan_c, coarse_noise, sink);
        rows[i] = PerPath{sc.n_comparison_viol, sc.n_points, sc.n_sigma_le0,
                          sf.n_comparison_viol, sf.n_points, sf.n_sigma_le0};
    });

    PerPath tot;
    for (const auto& r : rows) {
        tot.viol_c += r.viol_c;
        tot.pts_c += r.pts_c;
        tot.le0_c += r.le0_c;
        tot.viol_f += r.viol_f;
        tot.pts_f += r.pts_f;
        tot.le0_f += r.le0_f;
    }
    const double frac_c = static_cast<double>(tot.viol_c) / static_cast<double>(tot.pts_c);
    const double frac_f = static_cast<double>(tot.viol_f) / static_cast<double>(tot.pts_f);

    CheckOutcome out;
    out.name = "positivity";
    out.headline = make_result("sigma_le0_observations",
                               static_cast<double>(tot.le0_c + tot.le0_f), 0.0, cfg.paths, 0.0,
                               VerdictPolicy::exact_zero,
                               "grid points with sigma <= 0 at either resolution");
    out.details.push_back(make_result("comparison_violation_fraction_dt", frac_c, 0.0, tot.pts_c,
                                      0.0, VerdictPolicy::info,
                                      "sigma < Y*(1-tol) fraction, dt = " + std::to_string(plan_c.dt) +
                                          ", tol = " + std::to_string(plan_c.tol)));
    out.details.push_back(make_result("comparison_violation_fraction_dt_half", frac_f, 0.0,
                                      tot.pts_f, 0.0, VerdictPolicy::info,
                                      "same paths at dt/2, tol = " + std::to_string(plan_f.tol)));
    out.details.push_back(make_result("violation_fraction_refines", frac_f <= frac_c ? 1.0 : 0.0,
                                      0.0, cfg.paths, 1.0, VerdictPolicy::flag,
                                      "halving dt must not increase the violation fraction"));
    out.verdict = worst(out.headline.verdict, out.details.back().verdict);
    return out;
}

// ---------------------------------------------------------------------------
// 4-factor positivity failure check
// ---------------------------------------------------------------------------

struct PositivityFailureOptions {
    std::vector<double> t_grid{0.0025, 0.005, 0.01};
    bool zero_driver_subcheck = true;
};

// Estimates P(min_{s<=t} sigma_s < 0) on the constructed counterexample; the
// probability must be significantly positive at some small t, and the
// zero-driver path must go negative deterministically.
inline CheckOutcome check_positivity_failure_4f(const theory::CounterexampleSpec& spec,
                                                SimConfig cfg,
                                                const PositivityFailureOptions& opts = {},
                                                int workers = 0) {
    if (opts.t_grid.empty())
        throw std::invalid_argument("check_positivity_failure_4f: empty t grid");
    cfg.horizon = opts.t_grid.back();
    const EnsembleResult ens = run_ensemble(spec.params, spec.state, VolFunctional{}, cfg, workers);
    const long n = cfg.paths;

    CheckOutcome out;
    out.name = "positivity_failure_4f";
    bool any_pass = false;
    CheckResult last_row;
    for (double t : opts.t_grid) {
        long hits = 0;
        for (const auto& s : ens.summaries) hits += (s.first_sigma_neg <= t) ? 1 : 0;
        const auto pse = proportion_se(hits, n);
        const double ref = std::max(3.0 * pse.se, zero_consistency_ref(n));
        auto row = make_result("neg_prob_t=" + std::to_string(t), pse.mean, pse.se, n, ref,
                               VerdictPolicy::gt_ref,
                               "P(min sigma < 0 by t); reference = max(3*se, 3/sqrt(n))");
        any_pass = any_pass || row.verdict == Verdict::pass;
        last_row = row;
        out.details.push_back(std::move(row));
    }
    out.headline = last_row;  // largest t carries the most mass

    if (opts.zero_driver_subcheck) {
        SimConfig zero_cfg = cfg;
        zero_cfg.driver = Driver::zero;
        zero_cfg.paths = 1;
        zero_cfg.antithetic = false;
        zero_cfg.record_paths = 0;
        const EnsembleResult det =
            run_ensemble(spec.params, spec.state, VolFunctional{}, zero_cfg, workers);
        const bool went_neg = det.summaries[0].first_sigma_neg < kInf;
        out.details.push_back(make_result("zero_driver_goes_negative", went_neg ? 1.0 : 0.0, 0.0,
                                          1, 1.0, VerdictPolicy::flag,
                                          "deterministic drift takes sigma below 0"));
        any_pass = any_pass && went_neg;
    }

    out.verdict = any_pass ? Verdict::pass : Verdict::fail;
    return out;
}

// ---------------------------------------------------------------------------
// Martingale check (2-factor)
// ---------------------------------------------------------------------------

struct MartingaleOptions {
    double ladder_t = 0.1;  // horizon of the tilted-system ladder sub-check
    int ladder_paths = 0;   // 0 = same as cfg.paths
};

// (a) E[X_T] must equal x0 within 3 standard errors (inconclusive when the
// confidence interval is wider than 10% of x0); (b) the tilted-system ladder
// P(T_M < t) must be nonincreasing in M and consistent with zero at the top.
inline CheckOutcome check_martingale(const Pdv2Params& p, const State2& s0,
                                     const VolFunctional& f, const SimConfig& cfg,
                                     const MartingaleOptions& opts = {}, int workers = 0) {
    if (cfg.ladder.empty())
        throw std::invalid_argument("check_martingale needs a threshold ladder");

    const EnsembleResult ens = run_ensemble(p, s0, f, cfg, workers);
    std::vector<double> xs(ens.summaries.size());
    for (std::size_t i = 0; i < xs.size(); ++i) xs[i] = ens.summaries[i].terminal_x;
    const auto est = estimate_samples(xs, cfg.antithetic);

    CheckOutcome out;
    out.name = "martingale";
    out.headline = make_result("expected_terminal_price", est.mean, est.se, est.n, cfg.x0,
                               VerdictPolicy::within_3se_gated,
                               "E[X_T] for the stopped-volatility price process");

    SimConfig lad = cfg;
    lad.system = SystemKind::tilted;
    lad.horizon = opts.ladder_t;
    lad.stop_at_tau = true;
    lad.record_paths = 0;
    if (opts.ladder_paths > 0) {
        lad.paths = opts.ladder_paths;
        if (lad.antithetic && lad.paths % 2 != 0) lad.antithetic = false;
    }
    const EnsembleResult tilted = run_ensemble(p, s0, f, lad, workers);
    const long n = lad.paths;

    std::vector<long> hits(lad.ladder.size(), 0);
    for (std::size_t m = 0; m < lad.ladder.size(); ++m) {
        for (const auto& s : tilted.summaries) hits[m] += (s.sigma_hit[m] < lad.horizon) ? 1 : 0;
        if (m + 1 < lad.ladder.size()) {
            const auto pse = proportion_se(hits[m], n);
            out.details.push_back(make_result("tilted_hit_prob_M=" + std::to_string(lad.ladder[m]),
                                              pse.mean, pse.se, n, 1.0, VerdictPolicy::info,
                                              "P(T_M < t) under the tilted dynamics"));
        }
    }
    bool monotone = true;
    for (std::size_t m = 0; m + 1 < hits.size(); ++m) monotone = monotone && hits[m] >= hits[m + 1];
    out.details.push_back(make_result("tilted_ladder_monotone", monotone ? 1.0 : 0.0, 0.0, n, 1.0,
                                      VerdictPolicy::flag, "P(T_M < t) nonincreasing in M"));
    const auto top = proportion_se(hits.back(), n);
    out.details.push_back(make_result("tilted_hit_prob_at_largest_M", top.mean, top.se, n,
                                      zero_consistency_ref(n), VerdictPolicy::le_ref,
                                      "largest-M tilted hit probability"));

    out.verdict = out.headline.verdict;
    for (const auto& d : out.details)
        if (d.policy != VerdictPolicy::info) out.verdict = worst(out.verdict, d.verdict);
    return out;
}

// ---------------------------------------------------------------------------
// Tilted drift-bound check (2-factor)
// ---------------------------------------------------------------------------

struct TiltedDriftOptions {
    double m = 20.0;                          // S_M threshold on |sigma|
    std::vector<double> marks{0.05, 0.1, 0.25};
};

// E[sigma_{t ^ S_M}] on the tilted system must sit below K0 + K1*t at every
// mark.
inline CheckOutcome check_tilted_drift_bound(const Pdv2Params& p, const State2& s0,
                                             SimConfig cfg, const TiltedDriftOptions& opts = {},
                                             int workers = 0) {
    const auto tc = theory::tilted_bound_constants(p, s0);  // throws when inapplicable
    if (opts.marks.empty())
        throw std::invalid_argument("check_tilted_drift_bound: no marks given");

    cfg.system = SystemKind::tilted;
    cfg.horizon = opts.marks.back();
    cfg.sigma_marks = opts.marks;
    cfg.drift_bound_m = opts.m;
    cfg.record_paths = 0;
    const EnsembleResult ens = run_ensemble(p, s0, VolFunctional{}, cfg, workers);

    CheckOutcome out;
    out.name = "tilted_drift_bound";
    out.verdict = Verdict::pass;
    for (std::size_t k = 0; k < opts.marks.size(); ++k) {
        std::vector<double> xs(ens.summaries.size());
        for (std::size_t i = 0; i < xs.size(); ++i) xs[i] = ens.summaries[i].sigma_at_marks[k];
        const auto est = estimate_samples(xs, cfg.antithetic);
        const double ref = tc.k0 + tc.k1 * opts.marks[k];
        auto row = make_result("tilted_drift_t=" + std::to_string(opts.marks[k]), est.mean,
                               est.se, est.n, ref, VerdictPolicy::le_ref_3se,
                               "E[sigma_{t ^ S_M}] vs K0 + K1*t, M = " + std::to_string(opts.m));
        out.verdict = worst(out.verdict, row.verdict);
        if (k + 1 == opts.marks.size())
            out.headline = row;
        else
            out.details.push_back(std::move(row));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Scheme self-refinement convergence study
// ---------------------------------------------------------------------------

struct ConvergenceOptions {
    std::vector<double> dt_ladder{4e-4, 2e-4, 1e-4};
    double dt_ref = 2.5e-5;
    double order_window_lo = 0.3;
    double order_window_hi = 1.2;
    double min_avg_ratio = 1.2;
};

// Strong error E||R_T^{dt} - R_T^{ref}|| per ladder rung against a fine-grid
// reference on the same Brownian path. Errors must decrease along the ladder
// and the fitted order must land in the configured window.
template <class P, class S>
CheckOutcome convergence_study(const P& p, const S& s0, const VolFunctional& f, SimConfig cfg,
                               const ConvergenceOptions& opts = {}, int workers = 0) {
    const auto bad = validate_params(p);
    if (!bad.ok()) throw std::invalid_argument("invalid parameters: " + bad.joined());
    if (opts.dt_ladder.size() < 2)
        throw std::invalid_argument("convergence_study: ladder needs >= 2 step sizes");
    for (std::size_t i = 0; i + 1 < opts.dt_ladder.size(); ++i) {
        if (!(opts.dt_ladder[i] > opts.dt_ladder[i + 1]))
            throw std::invalid_argument("convergence_study: dt ladder must decrease");
        const double r0 = opts.dt_ladder[0] / opts.dt_ladder[1];
        const double ri = opts.dt_ladder[i] / opts.dt_ladder[i + 1];
        if (std::abs(ri - r0) > 1e-9 * r0)
            throw std::invalid_argument("convergence_study: dt ladder must be geometric");
    }

    const long n_ref = static_cast<long>(std::llround(cfg.horizon / opts.dt_ref));
    if (std::abs(cfg.horizon / opts.dt_ref - static_cast<double>(n_ref)) > 1e-6 || n_ref < 1)
        throw std::invalid_argument("convergence_study: horizon must be a multiple of dt_ref");
    std::vector<long> stride(opts.dt_ladder.size());
    for (std::size_t i = 0; i < stride.size(); ++i) {
        const double s = opts.dt_ladder[i] / opts.dt_ref;
        stride[i] = static_cast<long>(std::llround(s));
        if (std::abs(s - static_cast<double>(stride[i])) > 1e-6 || stride[i] < 1)
            throw std::invalid_argument(
                "convergence_study: each ladder dt must be a multiple of dt_ref");
    }

    constexpr int N = std::is_same_v<P, Pdv2Params> ? 1 : 2;
    const auto sys = make_system(p);
    const auto state0 = make_state(s0);

    auto make_plan = [&](double dt) {
        SimConfig c = cfg;
        c.dt = dt;
        auto plan = pdv::detail::plan_steps(p, c);
        if constexpr (std::is_same_v<P, Pdv2Params>)
            plan.tol = pdv::detail::comparison_tol(p, plan.dt, c.comparison_tol);
        return std::make_pair(c, plan);
    };
    const auto ref_run = make_plan(opts.dt_ref);
    std::vector<std::pair<SimConfig, pdv::detail::StepPlan>> rung_runs;
    for (double dt : opts.dt_ladder) rung_runs.push_back(make_plan(dt));

    std::vector<std::vector<double>> err(opts.dt_ladder.size(),
                                         std::vector<double>(cfg.paths, 0.0));
    parallel_units(cfg.paths, workers, [&](long i) {
        NoiseStream gen(cfg.seed, static_cast<std::uint64_t>(i), opts.dt_ref, cfg.driver);
        std::vector<double> inc(n_ref);
        for (auto& dw : inc) dw = gen.next();

        pdv::detail::NullSink<N> sink;
        BufferNoise ref_noise(inc);
        const PathSummary ref = pdv::detail::run_path<N>(sys, state0, f, ref_run.first,
                                                         ref_run.second, ref_noise, sink);
        for (std::size_t r = 0; r < rung_runs.size(); ++r) {
            StrideSumNoise noise(inc, static_cast<std::size_t>(stride[r]));
            const PathSummary run = pdv::detail::run_path<N>(sys, state0, f, rung_runs[r].first,
                                                             rung_runs[r].second, noise, sink);
            double ss = 0.0;
            for (int j = 0; j < N; ++j) {
                const double d1 = run.terminal_r1[j] - ref.terminal_r1[j];
                const double d2 = run.terminal_r2[j] - ref.terminal_r2[j];
                ss += d1 * d1 + d2 * d2;
            }
            err[r][i] = std::sqrt(ss);
        }
    });

    CheckOutcome out;
    out.name = "convergence";
    std::vector<double> mean_err(err.size());
    for (std::size_t r = 0; r < err.size(); ++r) {
        const auto m = mean_se(err[r]);
        mean_err[r] = m.mean;
        out.details.push_back(make_result("strong_error_dt=" + std::to_string(opts.dt_ladder[r]),
                                          m.mean, m.se, m.n, 0.0, VerdictPolicy::info,
                                          "E||R_T^{dt} - R_T^{ref}||"));
    }

    const double floor_eps = 1e-14;
    bool all_tiny = true;
    for (double e : mean_err) all_tiny = all_tiny && e <= floor_eps;
    bool monotone = true;
    for (std::size_t r = 0; r + 1 < mean_err.size(); ++r)
        monotone = monotone && mean_err[r] > mean_err[r + 1];

    double order = 0.0, avg_ratio = 0.0;
    if (!all_tiny) {
        double sx = 0, sy = 0, sxx = 0, sxy = 0;
        const auto k = static_cast<double>(mean_err.size());
        for (std::size_t r = 0; r < mean_err.size(); ++r) {
            const double lx = std::log(opts.dt_ladder[r]);
            const double ly = std::log(std::max(mean_err[r], 1e-300));
            sx += lx;
            sy += ly;
            sxx += lx * lx;
            sxy += lx * ly;
        }
        order = (k * sxy - sx * sy) / (k * sxx - sx * sx);
        for (std::size_t r = 0; r + 1 < mean_err.size(); ++r)
            avg_ratio += mean_err[r] / std::max(mean_err[r + 1], 1e-300);
        avg_ratio /= static_cast<double>(mean_err.size() - 1);
    }

    out.headline = make_result("strong_error_monotone", (monotone || all_tiny) ? 1.0 : 0.0, 0.0,
                               cfg.paths, 1.0, VerdictPolicy::flag,
                               all_tiny ? "errors all below 1e-14 (exact-scheme degenerate case)"
                                        : "errors strictly decrease along the dt ladder");
    const bool order_ok =
        all_tiny || (order >= opts.order_window_lo && order <= opts.order_window_hi);
    out.details.push_back(make_result("fitted_order_in_window", order_ok ? 1.0 : 0.0, 0.0,
                                      cfg.paths, 1.0, VerdictPolicy::flag,
                                      "fitted order = " + std::to_string(order) + ", window = [" +
                                          std::to_string(opts.order_window_lo) + ", " +
                                          std::to_string(opts.order_window_hi) + "]"));
    if (!all_tiny)
        out.details.push_back(make_result("avg_refinement_ratio", avg_ratio, 0.0, cfg.paths,
                                          opts.min_avg_ratio, VerdictPolicy::ge_ref,
                                          "average err(dt)/err(dt/r) across rungs"));

    out.verdict = out.headline.verdict;
    for (const auto& d : out.details)
        if (d.policy != VerdictPolicy::info) out.verdict = worst(out.verdict, d.verdict);
    return out;
}

}  // namespace pdv::mc
