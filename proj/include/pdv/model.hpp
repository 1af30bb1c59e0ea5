#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

// Parameter and state types for the Guyon-Lekeufack path-dependent
// volatility models, the volatility functional sigma = f(R1, R2), and the
// effective-rate algebra of the 4-factor variant.
//
// 2-factor dynamics:
//   sigma_t = beta0 + beta1*R1_t + beta2*sqrt(R2_t)
//   dR1 = lambda1*sigma dW - lambda1*R1 dt
//   dR2 = lambda2*(sigma^2 - R2) dt
// 4-factor dynamics: same structure with two components per factor, mixed by
// convex weights theta1, theta2.

namespace pdv {

// sqrt(R2) is evaluated at max(R2, 0); anything below -kR2ClampTol is a
// scheme bug, not roundoff, and raises a domain error.
inline constexpr double kR2ClampTol = 1e-12;

struct Pdv2Params {
    double beta0 = 0.0;    // level coefficient (volatility units)
    double beta1 = 0.0;    // return-feedback coefficient, <= 0
    double beta2 = 0.0;    // variance-feedback coefficient, >= 0
    double lambda1 = 0.0;  // mean-reversion rate of R1 (1/time)
    double lambda2 = 0.0;  // mean-reversion rate of R2 (1/time)
};

struct Pdv4Params {
    double beta0 = 0.0;
    double beta1 = 0.0;
    double beta2 = 0.0;
    std::array<double, 2> lambda1{0.0, 0.0};  // (lambda_{1,0}, lambda_{1,1})
    std::array<double, 2> lambda2{0.0, 0.0};  // (lambda_{2,0}, lambda_{2,1})
    double theta1 = 0.0;  // mixing weight for R1, in [0,1]
    double theta2 = 0.0;  // mixing weight for R2, in [0,1]
};

struct State2 {
    double r1 = 0.0;  // weighted past returns (volatility units)
    double r2 = 0.0;  // weighted past squared volatility (variance units), > 0
};

struct State4 {
    std::array<double, 2> r1{0.0, 0.0};
    std::array<double, 2> r2{0.0, 0.0};

    // Mixed factors entering the volatility functional.
    double r1_mix(double theta1) const { return (1.0 - theta1) * r1[0] + theta1 * r1[1]; }
    double r2_mix(double theta2) const { return (1.0 - theta2) * r2[0] + theta2 * r2[1]; }
};

inline double r1_mix(const Pdv4Params& p, const State4& s) { return s.r1_mix(p.theta1); }
inline double r2_mix(const Pdv4Params& p, const State4& s) { return s.r2_mix(p.theta2); }

// ---------------------------------------------------------------------------
// Parameter validation (verdict-returning, never throws)
// ---------------------------------------------------------------------------

struct Validation {
    std::vector<std::string> violations;
    bool ok() const { return violations.empty(); }
    std::string joined() const {
        std::string out;
        for (const auto& v : violations) {
            if (!out.empty()) out += "; ";
            out += v;
        }
        return out;
    }
};

namespace detail {
inline void require(Validation& v, bool cond, const std::string& msg) {
    if (!cond) v.violations.push_back(msg);
}
inline bool finite(double x) { return std::isfinite(x); }
}  // namespace detail

inline Validation validate_params(const Pdv2Params& p) {
    Validation v;
    using detail::require;
    require(v, detail::finite(p.beta0) && p.beta0 >= 0.0, "beta0 must be finite and >= 0");
    require(v, detail::finite(p.beta1) && p.beta1 <= 0.0, "beta1 must be finite and <= 0");
    require(v, detail::finite(p.beta2) && p.beta2 >= 0.0, "beta2 must be finite and >= 0");
    require(v, detail::finite(p.lambda1) && p.lambda1 >= 0.0, "lambda1 must be finite and >= 0");
    require(v, detail::finite(p.lambda2) && p.lambda2 >= 0.0, "lambda2 must be finite and >= 0");
    return v;
}

inline Validation validate_params(const Pdv4Params& p) {
    Validation v;
    using detail::require;
    require(v, detail::finite(p.beta0) && p.beta0 >= 0.0, "beta0 must be finite and >= 0");
    require(v, detail::finite(p.beta1) && p.beta1 <= 0.0, "beta1 must be finite and <= 0");
    require(v, detail::finite(p.beta2) && p.beta2 >= 0.0, "beta2 must be finite and >= 0");
    for (int j = 0; j < 2; ++j) {
        const std::string js = std::to_string(j);
        require(v, detail::finite(p.lambda1[j]) && p.lambda1[j] >= 0.0,
                "lambda1[" + js + "] must be finite and >= 0");
        require(v, detail::finite(p.lambda2[j]) && p.lambda2[j] >= 0.0,
                "lambda2[" + js + "] must be finite and >= 0");
    }
    require(v, detail::finite(p.theta1) && p.theta1 >= 0.0 && p.theta1 <= 1.0,
            "theta1 must be in [0,1]");
    require(v, detail::finite(p.theta2) && p.theta2 >= 0.0 && p.theta2 <= 1.0,
            "theta2 must be in [0,1]");
    return v;
}

// ---------------------------------------------------------------------------
// Volatility functional
// ---------------------------------------------------------------------------

enum class VolKind {
    gl_affine_sqrt,  // beta0 + beta1*x + beta2*sqrt(y)
    user_supplied,   // arbitrary f(x, y) with declared growth constants
};

// The functional sigma = f(R1, R2). The built-in affine-sqrt form takes its
// coefficients from the model parameters; user functionals must declare the
// quadratic growth constants K1, K2 with f^2 <= K1*(x^2 + y) + K2.
// Linear-bound constants (L0, L1, L2, L) are optional declarations used by
// the tilted drift-bound machinery.
struct VolFunctional {
    VolKind kind = VolKind::gl_affine_sqrt;
    std::function<double(double, double)> fn;  // user_supplied only
    std::optional<double> k1, k2;
    std::optional<double> l0, l1, l2, l;

    static VolFunctional gl_affine_sqrt() { return {}; }

    static VolFunctional user(std::function<double(double, double)> f, double K1, double K2) {
        VolFunctional out;
        out.kind = VolKind::user_supplied;
        out.fn = std::move(f);
        out.k1 = K1;
        out.k2 = K2;
        return out;
    }
};

namespace detail {
// Shared clamp for the sqrt argument. R2 slightly negative is roundoff;
// beyond the tolerance it means the stepping scheme broke the invariant.
inline double clamped_sqrt_arg(double r2) {
    if (r2 < -kR2ClampTol)
        throw std::domain_error("R2 = " + std::to_string(r2) +
                                " below clamp tolerance; stepping scheme violated positivity");
    return r2 > 0.0 ? r2 : 0.0;
}

inline double sigma_mixed(const VolFunctional& f, double beta0, double beta1, double beta2,
                          double x, double y) {
    const double yc = clamped_sqrt_arg(y);
    if (f.kind == VolKind::gl_affine_sqrt) return beta0 + beta1 * x + beta2 * std::sqrt(yc);
    return f.fn(x, yc);
}
}  // namespace detail

inline double sigma_of_state(const Pdv2Params& p, const State2& s, const VolFunctional& f) {
    return detail::sigma_mixed(f, p.beta0, p.beta1, p.beta2, s.r1, s.r2);
}

inline double sigma_of_state(const Pdv4Params& p, const State4& s, const VolFunctional& f) {
    return detail::sigma_mixed(f, p.beta0, p.beta1, p.beta2, r1_mix(p, s), r2_mix(p, s));
}

// ---------------------------------------------------------------------------
// Effective rates (4-factor)
// ---------------------------------------------------------------------------

// Rate-weighted mixes entering the drift of sigma in the 4-factor model:
//   lambda_bar_i = (1-theta_i)*lambda_{i,0} + theta_i*lambda_{i,1}
//   R_bar_i      = ((1-theta_i)*lambda_{i,0}*R_{i,0} + theta_i*lambda_{i,1}*R_{i,1}) / lambda_bar_i
struct EffectiveRates {
    double lambda1_bar = 0.0;
    double lambda2_bar = 0.0;
    double r1_bar = 0.0;
    double r2_bar = 0.0;
};

inline EffectiveRates effective_rates(const Pdv4Params& p, const State4& s) {
    EffectiveRates out;
    const double w10 = (1.0 - p.theta1), w11 = p.theta1;
    const double w20 = (1.0 - p.theta2), w21 = p.theta2;
    out.lambda1_bar = w10 * p.lambda1[0] + w11 * p.lambda1[1];
    out.lambda2_bar = w20 * p.lambda2[0] + w21 * p.lambda2[1];
    if (out.lambda1_bar == 0.0 || out.lambda2_bar == 0.0)
        throw std::domain_error("effective rate is zero; rate-weighted factor undefined");
    out.r1_bar = (w10 * p.lambda1[0] * s.r1[0] + w11 * p.lambda1[1] * s.r1[1]) / out.lambda1_bar;
    out.r2_bar = (w20 * p.lambda2[0] * s.r2[0] + w21 * p.lambda2[1] * s.r2[1]) / out.lambda2_bar;
    return out;
}

// ---------------------------------------------------------------------------
// Default initial state
// ---------------------------------------------------------------------------

// Zero-noise fixed point: R1 = 0 and R2 = (beta0/(1-beta2))^2, at which
// sigma = beta0/(1-beta2) and sigma^2 = R2. Requires beta2 < 1.
namespace detail {
inline double fixed_point_r2(double beta0, double beta2) {
    if (beta2 >= 1.0)
        throw std::domain_error(
            "no default initial state for beta2 >= 1; supply an explicit state");
    const double s = beta0 / (1.0 - beta2);
    return s * s;
}
}  // namespace detail

inline State2 default_initial_state(const Pdv2Params& p) {
    return State2{0.0, detail::fixed_point_r2(p.beta0, p.beta2)};
}

inline State4 default_initial_state(const Pdv4Params& p) {
    const double r2 = detail::fixed_point_r2(p.beta0, p.beta2);
    State4 s;
    s.r1 = {0.0, 0.0};
    s.r2 = {r2, r2};
    return s;
}

// ---------------------------------------------------------------------------
// Simulation configuration
// ---------------------------------------------------------------------------

enum class Scheme { exponential, euler };
enum class Driver { gaussian, zero };
enum class SystemKind { original, tilted };

struct SimConfig {
    double dt = 0.0;  // 0 resolves to min(1e-3, 0.1/max lambda), snapped to divide horizon
    double horizon = 1.0;
    Scheme scheme = Scheme::exponential;
    Driver driver = Driver::gaussian;
    std::uint64_t seed = 0;
    int paths = 1;
    bool antithetic = false;
    SystemKind system = SystemKind::original;
    double stop_floor_c = 0.0;     // C >= 0; tau_C = first time sigma < -C
    double x0 = 1.0;               // initial price
    std::vector<double> ladder;    // hit-time thresholds M, strictly increasing

    // Observation extras used by the verification suites.
    std::vector<double> sigma_marks;  // grid times t_k for E[sigma_{t_k ^ S_M}]
    double drift_bound_m = 0.0;       // S_M threshold on |sigma| (0 = off)
    double comparison_tol = -1.0;     // < 0 resolves to 10*sqrt(dt)*lambda1*max(|beta1|,1)
    int record_paths = 0;             // keep full PathRecords for the first k paths
    bool stop_at_tau = false;         // stop stepping once sigma < -C (ladder-only runs)
};

inline Validation validate_config(const SimConfig& c) {
    Validation v;
    using detail::require;
    require(v, detail::finite(c.dt) && c.dt >= 0.0, "dt must be finite and >= 0");
    require(v, detail::finite(c.horizon) && c.horizon > 0.0, "horizon must be finite and > 0");
    require(v, c.paths >= 1, "paths must be >= 1");
    require(v, !c.antithetic || c.paths % 2 == 0, "antithetic runs need an even path count");
    require(v, detail::finite(c.stop_floor_c) && c.stop_floor_c >= 0.0,
            "stop_floor_c must be finite and >= 0");
    require(v, detail::finite(c.x0) && c.x0 > 0.0, "x0 must be finite and > 0");
    for (std::size_t i = 0; i + 1 < c.ladder.size(); ++i)
        require(v, c.ladder[i] < c.ladder[i + 1], "ladder must be strictly increasing");
    for (double m : c.ladder) require(v, detail::finite(m) && m > 0.0, "ladder entries must be > 0");
    require(v, c.record_paths >= 0, "record_paths must be >= 0");
    return v;
}

// Resolve the step size: explicit dt wins; the default is snapped so the
// horizon is an integer number of steps.
inline double resolve_dt(const SimConfig& c, double max_lambda) {
    double dt = c.dt;
    if (dt <= 0.0) {
        dt = std::min(1e-3, max_lambda > 0.0 ? 0.1 / max_lambda : 1e-3);
        const double n = std::ceil(c.horizon / dt - 1e-9);
        dt = c.horizon / n;
    }
    return dt;
}

inline double max_lambda(const Pdv2Params& p) { return std::max(p.lambda1, p.lambda2); }
inline double max_lambda(const Pdv4Params& p) {
    return std::max(std::max(p.lambda1[0], p.lambda1[1]), std::max(p.lambda2[0], p.lambda2[1]));
}

}  // namespace pdv
