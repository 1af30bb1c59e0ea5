#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <vector>

#include "pdv/model.hpp"

// Single-path time stepping for the original and tilted factor systems, the
// comparison process Y (2-factor), and the price process X. All channels of
// one path consume the same Brownian increment per step: the comparison
// sigma >= Y and the measure-change argument behind the martingale check are
// pathwise statements on a single Brownian motion.

namespace pdv {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

// ---------------------------------------------------------------------------
// Uniform N-component view of the two model families
// ---------------------------------------------------------------------------

template <int N>
struct SystemParams {
    double beta0 = 0.0, beta1 = 0.0, beta2 = 0.0;
    std::array<double, N> lam1{}, lam2{};  // per-component rates
    std::array<double, N> w1{}, w2{};      // convex mixing weights
};

template <int N>
struct SystemState {
    std::array<double, N> r1{}, r2{};
};

inline SystemParams<1> make_system(const Pdv2Params& p) {
    return SystemParams<1>{p.beta0, p.beta1, p.beta2, {p.lambda1}, {p.lambda2}, {1.0}, {1.0}};
}
inline SystemParams<2> make_system(const Pdv4Params& p) {
    return SystemParams<2>{p.beta0,   p.beta1,   p.beta2,
                           p.lambda1, p.lambda2, {1.0 - p.theta1, p.theta1},
                           {1.0 - p.theta2, p.theta2}};
}

inline SystemState<1> make_state(const State2& s) { return SystemState<1>{{s.r1}, {s.r2}}; }
inline SystemState<2> make_state(const State4& s) { return SystemState<2>{s.r1, s.r2}; }

template <int N>
inline double mix(const std::array<double, N>& w, const std::array<double, N>& v) {
    if constexpr (N == 1) {
        return v[0];
    } else {
        double acc = w[0] * v[0];
        for (int j = 1; j < N; ++j) acc += w[j] * v[j];
        return acc;
    }
}

template <int N>
inline double sigma_of(const SystemParams<N>& sys, const SystemState<N>& s,
                       const VolFunctional& f) {
    return detail::sigma_mixed(f, sys.beta0, sys.beta1, sys.beta2, mix<N>(sys.w1, s.r1),
                               mix<N>(sys.w2, s.r2));
}

// ---------------------------------------------------------------------------
// Noise sources
// ---------------------------------------------------------------------------

// Gaussian increments dW ~ N(0, dt), or zeros in zero-driver mode. Each
// (seed, stream index) pair yields an independent, reproducible stream, so
// parallel and serial ensemble runs agree bitwise. Antithetic streams negate.
class NoiseStream {
public:
    NoiseStream(std::uint64_t seed, std::uint64_t stream_index, double dt, Driver driver,
                bool negate = false)
        : sqrt_dt_(std::sqrt(dt)), zero_(driver == Driver::zero), negate_(negate) {
        std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                          static_cast<std::uint32_t>(stream_index),
                          static_cast<std::uint32_t>(stream_index >> 32)};
        gen_.seed(seq);
    }

    double next() {
        if (zero_) return 0.0;
        const double z = normal_(gen_);
        return (negate_ ? -z : z) * sqrt_dt_;
    }

private:
    std::mt19937_64 gen_;
    std::normal_distribution<double> normal_;
    double sqrt_dt_;
    bool zero_;
    bool negate_;
};

// Replays a precomputed increment buffer (refinement studies, antithetic
// pair units).
class BufferNoise {
public:
    explicit BufferNoise(std::span<const double> inc, bool negate = false)
        : inc_(inc), sign_(negate ? -1.0 : 1.0) {}
    double next() { return sign_ * inc_[i_++]; }

private:
    std::span<const double> inc_;
    double sign_;
    std::size_t i_ = 0;
};

// Coarse increments as sums of `stride` consecutive fine increments, so the
// coarse run sees the same Brownian path as the fine one.
class StrideSumNoise {
public:
    StrideSumNoise(std::span<const double> fine, std::size_t stride)
        : fine_(fine), stride_(stride) {}
    double next() {
        double acc = 0.0;
        for (std::size_t k = 0; k < stride_; ++k) acc += fine_[i_++];
        return acc;
    }

private:
    std::span<const double> fine_;
    std::size_t stride_;
    std::size_t i_ = 0;
};

// ---------------------------------------------------------------------------
// Single-step updates (explicit, sigma frozen at the left endpoint)
// ---------------------------------------------------------------------------

template <int N>
inline SystemState<N> euler_step(const SystemParams<N>& sys, const SystemState<N>& s, double sigma,
                                 double dW, double dt, SystemKind kind) {
    SystemState<N> out;
    const double sigma2 = sigma * sigma;
    for (int j = 0; j < N; ++j) {
        const double drift1 = (kind == SystemKind::tilted) ? sys.lam1[j] * (sigma2 - s.r1[j]) * dt
                                                           : -sys.lam1[j] * s.r1[j] * dt;
        out.r1[j] = s.r1[j] + sys.lam1[j] * sigma * dW + drift1;
        out.r2[j] = s.r2[j] + sys.lam2[j] * (sigma2 - s.r2[j]) * dt;
    }
    return out;
}

// Per-run cache of the exponential-integrator decay factors.
template <int N>
struct ExpFactors {
    std::array<double, N> d1{}, d2{};  // e^{-lambda dt}
    std::array<double, N> c1{}, c2{};  // 1 - e^{-lambda dt}
};

template <int N>
inline ExpFactors<N> make_exp_factors(const SystemParams<N>& sys, double dt) {
    ExpFactors<N> f;
    for (int j = 0; j < N; ++j) {
        f.d1[j] = std::exp(-sys.lam1[j] * dt);
        f.d2[j] = std::exp(-sys.lam2[j] * dt);
        f.c1[j] = 1.0 - f.d1[j];
        f.c2[j] = 1.0 - f.d2[j];
    }
    return f;
}

// R2 update is the exact solution for sigma frozen over the step, which keeps
// R2 > 0 for any dt. R1 decays exactly; its noise term stays Euler.
template <int N>
inline SystemState<N> exponential_step(const SystemParams<N>& sys, const ExpFactors<N>& f,
                                       const SystemState<N>& s, double sigma, double dW,
                                       SystemKind kind) {
    SystemState<N> out;
    const double sigma2 = sigma * sigma;
    for (int j = 0; j < N; ++j) {
        out.r1[j] = s.r1[j] * f.d1[j] + sys.lam1[j] * sigma * dW;
        if (kind == SystemKind::tilted) out.r1[j] += sigma2 * f.c1[j];
        out.r2[j] = s.r2[j] * f.d2[j] + sigma2 * f.c2[j];
    }
    return out;
}

inline State2 step_euler(const Pdv2Params& p, const State2& s, double sigma, double dW, double dt,
                         SystemKind kind = SystemKind::original) {
    const auto out = euler_step<1>(make_system(p), make_state(s), sigma, dW, dt, kind);
    return State2{out.r1[0], out.r2[0]};
}

inline State4 step_euler(const Pdv4Params& p, const State4& s, double sigma, double dW, double dt,
                         SystemKind kind = SystemKind::original) {
    const auto out = euler_step<2>(make_system(p), make_state(s), sigma, dW, dt, kind);
    return State4{out.r1, out.r2};
}

inline State2 step_exponential(const Pdv2Params& p, const State2& s, double sigma, double dW,
                               double dt, SystemKind kind = SystemKind::original) {
    const auto sys = make_system(p);
    const auto out =
        exponential_step<1>(sys, make_exp_factors<1>(sys, dt), make_state(s), sigma, dW, kind);
    return State2{out.r1[0], out.r2[0]};
}

inline State4 step_exponential(const Pdv4Params& p, const State4& s, double sigma, double dW,
                               double dt, SystemKind kind = SystemKind::original) {
    const auto sys = make_system(p);
    const auto out =
        exponential_step<2>(sys, make_exp_factors<2>(sys, dt), make_state(s), sigma, dW, kind);
    return State4{out.r1, out.r2};
}

// Comparison process: exact update of the stochastic exponential
//   Y_t = sigma_0 * exp(beta1*lambda1*W_t - lambda1*t - 0.5*beta1^2*lambda1^2*t),
// strictly positive for all t. Defined for the 2-factor model only.
inline double y_step(const Pdv2Params& p, double y, double dW, double dt) {
    const double a = p.beta1 * p.lambda1;
    return y * std::exp(a * dW - p.lambda1 * dt - 0.5 * a * a * dt);
}

// Price process dX = nu*X dW: exact log-Euler update, strictly positive.
inline double x_step(double nu, double x, double dW, double dt) {
    return x * std::exp(nu * dW - 0.5 * nu * nu * dt);
}

// ---------------------------------------------------------------------------
// Path simulation
// ---------------------------------------------------------------------------

// Full trajectory of one path. Component slot [1] is NaN-padded for 2-factor
// runs; y is empty for 4-factor runs (no comparison process there).
struct PathRecord {
    int components = 1;  // 1 or 2
    std::vector<double> t;
    std::vector<std::array<double, 2>> r1, r2;
    std::vector<double> sigma;
    std::vector<double> y;  // 2-factor only
    std::vector<double> x;

    // First hit times per ladder threshold M, +inf when never hit.
    // factor_hit: any |R1_j| >= M or R2_j >= M^2 (level-M factor excursion).
    // sigma_hit: sigma reaches M before tau_C (hit of the stopped process).
    std::vector<double> factor_hit;
    std::vector<double> sigma_hit;
    double tau_c = kInf;  // first time sigma < -C

    bool exploded = false;   // non-finite value encountered
    double last_time = 0.0;  // last finite grid time
};

// Per-path reduced statistics used by the ensemble checks.
struct PathSummary {
    bool exploded = false;
    double last_time = 0.0;
    double min_r2 = kInf;  // over grid points and components
    double min_sigma = kInf;
    double max_abs_sigma = 0.0;
    long n_sigma_le0 = 0;           // grid points with sigma <= 0
    double first_sigma_neg = kInf;  // first grid time with sigma < 0
    long n_comparison_viol = 0;     // grid points with sigma < Y*(1 - tol)
    long n_points = 0;              // grid points observed (includes t = 0)
    double terminal_moment = 0.0;   // sum_j R1_j^2 + sum_j R2_j at the end
    double terminal_sigma = 0.0;
    double terminal_x = 0.0;
    double terminal_y = 0.0;
    std::array<double, 2> terminal_r1{0.0, 0.0}, terminal_r2{0.0, 0.0};
    std::vector<double> factor_hit;
    std::vector<double> sigma_hit;
    double tau_c = kInf;
    std::vector<double> sigma_at_marks;  // sigma_{t_k ^ S_M} per configured mark
};

namespace detail {

struct StepPlan {
    double dt = 0.0;
    long n_steps = 0;
    double tol = 0.0;  // comparison tolerance (2-factor)
};

inline long grid_index(double t, double dt, long n_steps, const char* what) {
    const double steps = t / dt;
    const long k = static_cast<long>(std::llround(steps));
    if (std::abs(steps - static_cast<double>(k)) > 1e-6 || k < 0 || k > n_steps)
        throw std::invalid_argument(std::string("config: ") + what + " must lie on the time grid");
    return k;
}

template <class P>
inline StepPlan plan_steps(const P& p, const SimConfig& cfg) {
    StepPlan plan;
    plan.dt = resolve_dt(cfg, max_lambda(p));
    if (!(plan.dt > 0.0)) throw std::invalid_argument("config: dt must be > 0");
    const double steps = cfg.horizon / plan.dt;
    plan.n_steps = static_cast<long>(std::llround(steps));
    if (plan.n_steps < 1 || std::abs(steps - static_cast<double>(plan.n_steps)) > 1e-6)
        throw std::invalid_argument("config: horizon must be an integer multiple of dt");
    return plan;
}

inline double comparison_tol(const Pdv2Params& p, double dt, double requested) {
    if (requested >= 0.0) return requested;
    return 10.0 * std::sqrt(dt) * p.lambda1 * std::max(std::abs(p.beta1), 1.0);
}

template <int N>
struct RecordSink {
    PathRecord* rec;
    void reserve(long n) {
        rec->t.reserve(n + 1);
        rec->r1.reserve(n + 1);
        rec->r2.reserve(n + 1);
        rec->sigma.reserve(n + 1);
        rec->x.reserve(n + 1);
        if (N == 1) rec->y.reserve(n + 1);
    }
    void point(double t, const SystemState<N>& s, double sigma, double y, double x) {
        constexpr double nan = std::numeric_limits<double>::quiet_NaN();
        rec->t.push_back(t);
        std::array<double, 2> a1{nan, nan}, a2{nan, nan};
        for (int j = 0; j < N; ++j) {
            a1[j] = s.r1[j];
            a2[j] = s.r2[j];
        }
        rec->r1.push_back(a1);
        rec->r2.push_back(a2);
        rec->sigma.push_back(sigma);
        if (N == 1) rec->y.push_back(y);
        rec->x.push_back(x);
    }
};

template <int N>
struct NullSink {
    void reserve(long) {}
    void point(double, const SystemState<N>&, double, double, double) {}
};

template <int N>
inline bool all_finite(const SystemState<N>& s) {
    for (int j = 0; j < N; ++j)
        if (!std::isfinite(s.r1[j]) || !std::isfinite(s.r2[j])) return false;
    return true;
}

// Core loop shared by trajectory recording and summary-only ensemble runs.
// Observes grid points 0..n (monitors run on every observed point); steps
// with sigma frozen at the left endpoint. Non-finite values flag the path as
// exploded and end it at the last finite grid time.
template <int N, class Noise, class Sink>
inline PathSummary run_path(const SystemParams<N>& sys, const SystemState<N>& s0,
                            const VolFunctional& f, const SimConfig& cfg, const StepPlan& plan,
                            Noise&& noise, Sink&& sink) {
    const double dt = plan.dt;
    const long n_steps = plan.n_steps;
    const double floor_c = cfg.stop_floor_c;
    const bool euler = cfg.scheme == Scheme::euler;
    const auto ef = make_exp_factors<N>(sys, dt);
    const double y_slope = sys.beta1 * sys.lam1[0];
    const double y_drift = -sys.lam1[0] * dt - 0.5 * y_slope * y_slope * dt;

    PathSummary sum;
    sum.factor_hit.assign(cfg.ladder.size(), kInf);
    sum.sigma_hit.assign(cfg.ladder.size(), kInf);
    sum.sigma_at_marks.assign(cfg.sigma_marks.size(), 0.0);

    std::vector<long> mark_idx(cfg.sigma_marks.size());
    for (std::size_t i = 0; i < cfg.sigma_marks.size(); ++i)
        mark_idx[i] = grid_index(cfg.sigma_marks[i], dt, n_steps, "sigma_marks");

    sink.reserve(n_steps);

    SystemState<N> state = s0;
    double sigma = sigma_of<N>(sys, state, f);
    double y = (N == 1) ? sigma : 0.0;  // comparison process starts at sigma_0
    double x = cfg.x0;
    bool tau_hit = false;
    double nu_frozen = 0.0;
    bool sm_hit = false;
    double sm_sigma = 0.0;
    std::size_t next_factor = 0;  // ladder rungs resolve in order (monotone hits)
    std::size_t next_sigma = 0;

    for (long k = 0;; ++k) {
        const double t = static_cast<double>(k) * dt;

        sink.point(t, state, sigma, y, x);
        sum.n_points += 1;
        sum.last_time = t;

        for (int j = 0; j < N; ++j) sum.min_r2 = std::min(sum.min_r2, state.r2[j]);
        sum.min_sigma = std::min(sum.min_sigma, sigma);
        sum.max_abs_sigma = std::max(sum.max_abs_sigma, std::abs(sigma));
        if (sigma <= 0.0) {
            sum.n_sigma_le0 += 1;
            if (sigma < 0.0 && sum.first_sigma_neg == kInf) sum.first_sigma_neg = t;
        }
        if (N == 1 && sigma < y * (1.0 - plan.tol)) sum.n_comparison_viol += 1;

        while (next_factor < cfg.ladder.size()) {
            const double m = cfg.ladder[next_factor];
            bool hit = false;
            for (int j = 0; j < N; ++j)
                hit = hit || std::abs(state.r1[j]) >= m || state.r2[j] >= m * m;
            if (!hit) break;
            sum.factor_hit[next_factor++] = t;
        }
        if (!tau_hit) {
            while (next_sigma < cfg.ladder.size() && sigma >= cfg.ladder[next_sigma])
                sum.sigma_hit[next_sigma++] = t;
            if (sigma < -floor_c) {
                tau_hit = true;
                sum.tau_c = t;
                nu_frozen = sigma;
            }
        }
        if (cfg.drift_bound_m > 0.0 && !sm_hit && std::abs(sigma) >= cfg.drift_bound_m) {
            sm_hit = true;
            sm_sigma = sigma;
        }
        for (std::size_t i = 0; i < mark_idx.size(); ++i)
            if (mark_idx[i] == k) sum.sigma_at_marks[i] = sm_hit ? sm_sigma : sigma;

        if (k == n_steps) break;
        if (cfg.stop_at_tau && tau_hit) break;
        if (cfg.drift_bound_m > 0.0 && sm_hit) {
            // All later marks freeze at sigma_{S_M}; nothing left to observe.
            for (std::size_t i = 0; i < mark_idx.size(); ++i)
                if (mark_idx[i] > k) sum.sigma_at_marks[i] = sm_sigma;
            break;
        }

        const double dW = noise.next();
        const SystemState<N> next = euler
                                        ? euler_step<N>(sys, state, sigma, dW, dt, cfg.system)
                                        : exponential_step<N>(sys, ef, state, sigma, dW, cfg.system);
        const double y_next = (N == 1) ? y * std::exp(y_slope * dW + y_drift) : 0.0;
        const double nu = tau_hit ? nu_frozen : sigma;
        const double x_next = x * std::exp(nu * dW - 0.5 * nu * nu * dt);

        if (!all_finite<N>(next) || !std::isfinite(x_next) || (N == 1 && !std::isfinite(y_next))) {
            sum.exploded = true;
            break;
        }
        // sigma_of throws domain_error when R2 dropped below the clamp
        // tolerance (stiff Euler step); that is a hard error by design.
        const double sigma_next = sigma_of<N>(sys, next, f);
        if (!std::isfinite(sigma_next)) {
            sum.exploded = true;
            break;
        }

        state = next;
        sigma = sigma_next;
        y = y_next;
        x = x_next;
    }

    sum.terminal_sigma = sigma;
    sum.terminal_x = x;
    sum.terminal_y = y;
    double moment = 0.0;
    for (int j = 0; j < N; ++j) {
        sum.terminal_r1[j] = state.r1[j];
        sum.terminal_r2[j] = state.r2[j];
        moment += state.r1[j] * state.r1[j] + state.r2[j];
    }
    sum.terminal_moment = moment;
    return sum;
}

template <int N, class Noise>
inline PathRecord simulate_path_impl(const SystemParams<N>& sys, const SystemState<N>& s0,
                                     const VolFunctional& f, const SimConfig& cfg,
                                     const StepPlan& plan, Noise&& noise) {
    PathRecord rec;
    rec.components = N;
    RecordSink<N> sink{&rec};
    const PathSummary sum = run_path<N>(sys, s0, f, cfg, plan, noise, sink);
    rec.factor_hit = sum.factor_hit;
    rec.sigma_hit = sum.sigma_hit;
    rec.tau_c = sum.tau_c;
    rec.exploded = sum.exploded;
    rec.last_time = sum.last_time;
    return rec;
}

}  // namespace detail

// Simulate one path from an explicit initial state with a caller-supplied
// noise source (any type with `double next()`).
template <class Noise>
PathRecord simulate_path(const Pdv2Params& p, const State2& s0, const VolFunctional& f,
                         const SimConfig& cfg, Noise&& noise) {
    const auto bad = validate_params(p);
    if (!bad.ok()) throw std::invalid_argument("invalid parameters: " + bad.joined());
    const auto badc = validate_config(cfg);
    if (!badc.ok()) throw std::invalid_argument("invalid config: " + badc.joined());
    auto plan = detail::plan_steps(p, cfg);
    plan.tol = detail::comparison_tol(p, plan.dt, cfg.comparison_tol);
    return detail::simulate_path_impl<1>(make_system(p), make_state(s0), f, cfg, plan, noise);
}

template <class Noise>
PathRecord simulate_path(const Pdv4Params& p, const State4& s0, const VolFunctional& f,
                         const SimConfig& cfg, Noise&& noise) {
    const auto bad = validate_params(p);
    if (!bad.ok()) throw std::invalid_argument("invalid parameters: " + bad.joined());
    const auto badc = validate_config(cfg);
    if (!badc.ok()) throw std::invalid_argument("invalid config: " + badc.joined());
    const auto plan = detail::plan_steps(p, cfg);
    return detail::simulate_path_impl<2>(make_system(p), make_state(s0), f, cfg, plan, noise);
}

// Convenience: default initial state and a fresh gaussian/zero stream for
// ensemble slot `path_index`.
template <class P>
PathRecord simulate_path(const P& p, const VolFunctional& f, const SimConfig& cfg,
                         std::uint64_t path_index = 0) {
    NoiseStream noise(cfg.seed, path_index, resolve_dt(cfg, max_lambda(p)), cfg.driver);
    return simulate_path(p, default_initial_state(p), f, cfg, noise);
}

// Summary-only variants (no trajectory storage).
template <class Noise>
PathSummary summarize_path(const Pdv2Params& p, const State2& s0, const VolFunctional& f,
                           const SimConfig& cfg, Noise&& noise) {
    auto plan = detail::plan_steps(p, cfg);
    plan.tol = detail::comparison_tol(p, plan.dt, cfg.comparison_tol);
    detail::NullSink<1> sink;
    return detail::run_path<1>(make_system(p), make_state(s0), f, cfg, plan, noise, sink);
}

template <class Noise>
PathSummary summarize_path(const Pdv4Params& p, const State4& s0, const VolFunctional& f,
                           const SimConfig& cfg, Noise&& noise) {
    const auto plan = detail::plan_steps(p, cfg);
    detail::NullSink<2> sink;
    return detail::run_path<2>(make_system(p), make_state(s0), f, cfg, plan, noise, sink);
}

}  // namespace pdv
