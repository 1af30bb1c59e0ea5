#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "pdv/theory.hpp"

using namespace pdv;
using namespace pdv::theory;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

Pdv2Params table1() { return Pdv2Params{0.08, -0.08, 0.5, 62.0, 40.0}; }

Pdv4Params table2() {
    Pdv4Params p;
    p.beta0 = 0.04;
    p.beta1 = -0.13;
    p.beta2 = 0.65;
    p.lambda1 = {55.0, 10.0};
    p.lambda2 = {20.0, 3.0};
    p.theta1 = 0.25;
    p.theta2 = 0.5;
    return p;
}

}  // namespace

// Reference values below were hand-derived from the closed forms with exact
// rational arithmetic and frozen at 17 significant digits.

TEST_CASE("2-factor Gronwall constants at the reference parameters", "[theory]") {
    const auto p = table1();
    const auto g = gronwall_constants_2f(p, default_initial_state(p));
    CHECK(g.c11 == 0.0);
    CHECK_THAT(g.c12, WithinRel(73.8048, 1e-12));
    CHECK_THAT(g.c13, WithinRel(2883.0, 1e-12));
    CHECK_THAT(g.c21, WithinRel(0.0256, 1e-12));
    CHECK_THAT(g.c22, WithinRel(0.768, 1e-12));
    CHECK_THAT(g.c23, WithinRel(0.768, 1e-12));
    CHECK_THAT(g.c1, WithinRel(0.0256, 1e-12));
    CHECK_THAT(g.c2, WithinRel(74.5728, 1e-12));
    CHECK_THAT(g.c3, WithinRel(2883.768, 1e-12));
}

TEST_CASE("2-factor Gronwall degenerate cases", "[theory]") {
    Pdv2Params p{0.0, 0.0, 0.0, 62.0, 40.0};
    const State2 s0{0.3, 0.7};
    const auto g = gronwall_constants_2f(p, s0);
    CHECK(g.c2 == 0.0);  // all forcing terms vanish
    CHECK(g.c1 == 0.3 * 0.3 + 0.7);
    CHECK(g.bound(0.0) == g.c1);  // initial condition
    // beta's zero: c13 = max(0, -2*l1) clamps through the final rate.
    CHECK(g.c13 == 0.0);
    CHECK(g.c3 == 0.0);
}

TEST_CASE("Gronwall bound is nonnegative and nondecreasing in t", "[theory]") {
    std::mt19937_64 gen(5);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 300; ++i) {
        Pdv2Params p{u(gen), -u(gen), 2.0 * u(gen), 150.0 * u(gen), 150.0 * u(gen)};
        const State2 s0{2.0 * u(gen) - 1.0, u(gen) + 1e-6};
        const auto g = gronwall_constants_2f(p, s0);
        CHECK(g.c1 >= 0.0);
        CHECK(g.c2 >= 0.0);
        CHECK(g.c3 >= 0.0);
        double prev = -1.0;
        for (double t : {0.0, 1e-4, 1e-3, 1e-2, 0.05}) {
            const double b = g.bound(t);
            CHECK(b >= prev);
            prev = b;
        }
    }
}

TEST_CASE("4-factor Gronwall constants at the reference parameters", "[theory]") {
    const auto p = table2();
    const auto g = gronwall_constants_4f(p, default_initial_state(p));
    CHECK_THAT(g.c0_intercept, WithinRel(0.026122448979591838, 1e-12));
    CHECK_THAT(g.c0_slope, WithinRel(15.1104, 1e-12));
    CHECK_THAT(g.r1_side_rate, WithinRel(1980.46875, 1e-12));
    CHECK_THAT(g.r2_side_rate, WithinRel(11.57625, 1e-12));
    CHECK_THAT(g.c1_rate, WithinRel(1992.045, 1e-12));
    CHECK(g.bound(0.0) == g.c0_intercept);
}

TEST_CASE("4-factor Gronwall reduces exactly to 2-factor at degenerate mixing", "[theory]") {
    std::mt19937_64 gen(17);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 200; ++i) {
        Pdv2Params p2{u(gen), -u(gen), 2.0 * u(gen), 150.0 * u(gen), 150.0 * u(gen)};
        const State2 s2{2.0 * u(gen) - 1.0, u(gen) + 1e-6};
        const auto g2 = gronwall_constants_2f(p2, s2);
        for (int hi = 0; hi < 2; ++hi) {
            Pdv4Params p4;
            p4.beta0 = p2.beta0;
            p4.beta1 = p2.beta1;
            p4.beta2 = p2.beta2;
            p4.theta1 = p4.theta2 = hi ? 1.0 : 0.0;
            const int live = hi;
            p4.lambda1[live] = p2.lambda1;
            p4.lambda2[live] = p2.lambda2;
            p4.lambda1[1 - live] = 0.0;  // dead component carries no dynamics
            p4.lambda2[1 - live] = 0.0;
            State4 s4;
            s4.r1[live] = s2.r1;
            s4.r2[live] = s2.r2;
            s4.r1[1 - live] = 0.0;
            s4.r2[1 - live] = 0.0;
            const auto g4 = gronwall_constants_4f(p4, s4);
            CHECK_THAT(g4.c0_intercept, WithinRel(g2.c1, 1e-14));
            CHECK_THAT(g4.c0_slope, WithinRel(g2.c2, 1e-14));
            CHECK_THAT(g4.c1_rate, WithinAbs(g2.c3, 1e-14 * (1.0 + g2.c3)));
        }
    }
}

TEST_CASE("positivity condition for the 2-factor reference set", "[theory]") {
    const auto v = positivity_condition(table1());
    CHECK(v.lhs == 40.0);
    CHECK(v.rhs == 124.0);
    CHECK(v.rate_condition);
    CHECK(v.sufficient);
    CHECK(v.holds());

    auto p = table1();
    p.lambda2 = 124.0;  // boundary: strict inequality required
    CHECK_FALSE(positivity_condition(p).rate_condition);
}

TEST_CASE("positivity condition for the 4-factor model is flagged not sufficient", "[theory]") {
    const auto v = positivity_condition(table2());
    CHECK(v.lhs == 11.5);
    CHECK(v.rhs == 87.5);
    CHECK(v.rate_condition);
    CHECK_FALSE(v.sufficient);
}

TEST_CASE("tilted bound constants at the reference parameters", "[theory]") {
    const auto p = table1();
    const auto tc = tilted_bound_constants(p, default_initial_state(p));
    CHECK_THAT(tc.beta2_hat, WithinRel(0.062, 1e-12));
    CHECK_THAT(tc.beta2_bar, WithinRel(1.0080645161290323, 1e-12));
    CHECK_THAT(tc.alpha, WithinRel(-2.48, 1e-12));
    CHECK_THAT(tc.a, WithinRel(-3.1, 1e-12));
    CHECK_THAT(tc.a_prime, WithinRel(-0.0126976, 1e-12));
    CHECK_THAT(tc.b_prime, WithinRel(4.9853952, 1e-12));
    CHECK_THAT(tc.c_prime, WithinRel(-0.0126976, 1e-12));
    CHECK_THAT(tc.l, WithinRel(489.335, 1e-12));
    CHECK_THAT(tc.k0, WithinRel(1.0896517161290322, 1e-12));
    CHECK(tc.k1 == tc.l);  // L > 0 here
}

TEST_CASE("tilted construction needs beta1*lambda1 < 0", "[theory]") {
    auto p = table1();
    p.beta1 = 0.0;
    CHECK_THROWS_AS(tilted_bound_constants(p, State2{0.0, 0.01}), std::domain_error);
}

TEST_CASE("tilted construction with beta2 = 0 has a vacuous majorization", "[theory]") {
    Pdv2Params p{0.08, -0.08, 0.0, 62.0, 40.0};
    const auto tc = tilted_bound_constants(p, State2{0.0, 0.01});
    CHECK(tc.beta2_bar == 0.0);
    CHECK(tc.alpha < 0.0);
    CHECK(tc.a_prime < 0.0);
}

TEST_CASE("tilted construction with lambda2 = 0 picks an admissible beta2_hat", "[theory]") {
    Pdv2Params p{0.08, -0.08, 0.5, 62.0, 0.0};
    const auto tc = tilted_bound_constants(p, State2{0.0, 0.01});
    CHECK(tc.beta2_hat > 0.0);
    CHECK(tc.alpha < 0.0);
    CHECK(tc.a < 0.0);
    CHECK(tc.a_prime < 0.0);
}

TEST_CASE("tilted invariants hold across random applicable parameters", "[theory]") {
    std::mt19937_64 gen(29);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 300; ++i) {
        Pdv2Params p{u(gen), -u(gen) - 1e-3, 2.0 * u(gen), 150.0 * u(gen) + 1e-3,
                     150.0 * u(gen)};
        const State2 s0{2.0 * u(gen) - 1.0, u(gen) + 1e-6};
        const auto tc = tilted_bound_constants(p, s0);
        CHECK(tc.alpha < 0.0);
        CHECK(tc.a < 0.0);
        CHECK(tc.a_prime < 0.0);

        // Majorization beta2*sqrt(x) <= beta2_bar + beta2_hat*x on [0, 1e6].
        for (double x = 1e-6; x <= 1e6; x *= 10.0) {
            const double rhs = tc.beta2_bar + tc.beta2_hat * x;
            CHECK(p.beta2 * std::sqrt(x) <= rhs + 1e-12 * (1.0 + rhs));
        }
        // Tangent point: the bound is tight there.
        if (p.beta2 > 0.0) {
            const double xs = p.beta2 / (2.0 * tc.beta2_hat);
            const double x = xs * xs;
            const double rhs = tc.beta2_bar + tc.beta2_hat * x;
            CHECK(p.beta2 * std::sqrt(x) <= rhs + 1e-12 * (1.0 + rhs));
            CHECK_THAT(p.beta2 * std::sqrt(x), WithinRel(rhs, 1e-9));
        }
    }
}

TEST_CASE("overriding beta2_hat is honored when admissible", "[theory]") {
    const auto p = table1();
    const auto tc = tilted_bound_constants(p, default_initial_state(p), 0.01);
    CHECK(tc.beta2_hat == 0.01);
    CHECK(tc.alpha == -4.96 + 0.01 * 40.0);
    CHECK_THROWS_AS(tilted_bound_constants(p, default_initial_state(p), 0.2),
                    std::domain_error);  // alpha would be positive
}

TEST_CASE("counterexample construction at the reference 4-factor rates", "[theory]") {
    const auto spec = counterexample_4f(table2());
    CHECK(spec.params.beta0 == 1e-3);
    CHECK(spec.params.beta1 == -1.0);
    CHECK(spec.params.beta2 == 0.65);
    CHECK(spec.state.r1[0] == -1.0);
    CHECK(spec.state.r1[1] == 4.0);
    CHECK(spec.r1_mix0 == 0.25);
    CHECK_THAT(spec.r1_bar0, WithinRel(-0.7142857142857143, 1e-12));  // -31.25/43.75
    CHECK_THAT(spec.state.r2[0], WithinRel(0.14792899408284024, 1e-12));  // (0.25/0.65)^2
    CHECK(spec.state.r2[0] == spec.state.r2[1]);
    CHECK(spec.sigma0 == spec.params.beta0);
    CHECK_THAT(spec.drift_rate0, WithinRel(-32.6875, 1e-12));
    CHECK(validate_params(spec.params).ok());
}

TEST_CASE("counterexample rejects degenerate mixing and equal rates", "[theory]") {
    auto p = table2();
    p.theta1 = 0.0;
    CHECK_THROWS_AS(counterexample_4f(p), std::domain_error);
    p.theta1 = 1.0;
    CHECK_THROWS_AS(counterexample_4f(p), std::domain_error);
    p = table2();
    p.lambda1 = {10.0, 10.0};
    CHECK_THROWS_AS(counterexample_4f(p), std::domain_error);
}

TEST_CASE("counterexample handles rate order and awkward weights", "[theory]") {
    auto p = table2();
    std::swap(p.lambda1[0], p.lambda1[1]);  // larger rate on component 1
    const auto spec = counterexample_4f(p);
    CHECK(spec.state.r1[1] < 0.0);
    CHECK(spec.r1_mix0 > 0.0);
    CHECK(spec.r1_bar0 < 0.0);
    CHECK(spec.drift_rate0 < 0.0);

    // Weights that defeat the unit-scale split: the negative leg scales up.
    Pdv4Params q = table2();
    q.theta1 = 0.9;
    q.lambda1 = {10.0, 9.0};
    const auto spec2 = counterexample_4f(q);
    CHECK(spec2.r1_mix0 > 0.0);
    CHECK(spec2.r1_bar0 < 0.0);
    CHECK(spec2.state.r1[0] < -1.0);
}

TEST_CASE("counterexample invariants hold across random feasible templates", "[theory]") {
    std::mt19937_64 gen(31);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 200; ++i) {
        Pdv4Params p = table2();
        p.theta1 = 0.05 + 0.9 * u(gen);
        p.theta2 = u(gen);
        p.lambda1 = {1.0 + 100.0 * u(gen), 1.0 + 100.0 * u(gen)};
        if (p.lambda1[0] == p.lambda1[1]) continue;
        p.lambda2 = {50.0 * u(gen), 50.0 * u(gen)};
        p.beta2 = 0.1 + 2.0 * u(gen);
        const double beta0 = 1e-4 + u(gen);
        const auto spec = counterexample_4f(p, beta0);
        CHECK(spec.sigma0 == beta0);
        CHECK(spec.r1_mix0 > 0.0);
        CHECK(spec.r1_bar0 < 0.0);
        CHECK(spec.drift_rate0 < 0.0);
        CHECK(spec.state.r2[0] > 0.0);
    }
}

TEST_CASE("growth constants for the affine-sqrt functional", "[theory]") {
    const auto g = growth_constants(VolFunctional{}, table1());
    CHECK_THAT(g.k1, WithinRel(0.75, 1e-12));    // 3*max(0.0064, 0.25)
    CHECK_THAT(g.k2, WithinRel(0.0192, 1e-12));  // 3*0.0064
    REQUIRE(g.l0.has_value());
    CHECK_THAT(*g.l0, WithinRel(0.08 + 1.0080645161290323, 1e-12));
    CHECK(*g.l1 == -0.08);
    CHECK_THAT(*g.l2, WithinRel(0.062, 1e-12));
    CHECK_THAT(*g.l, WithinRel(489.335, 1e-12));

    Pdv2Params zero{0.0, 0.0, 0.0, 1.0, 1.0};
    const auto gz = growth_constants(VolFunctional{}, zero);
    CHECK(gz.k1 == 0.0);
    CHECK(gz.k2 == 0.0);

    const auto g4 = growth_constants(VolFunctional{}, table2());
    CHECK_THAT(g4.k1, WithinRel(1.2675, 1e-12));
    CHECK_THAT(g4.k2, WithinRel(0.0048, 1e-12));
}

TEST_CASE("growth sampler passes for valid declarations and flags bad ones", "[theory]") {
    const auto p = table1();
    const auto g = growth_constants(VolFunctional{}, p);
    CHECK(sample_growth_bound(VolFunctional{}, p, g, 8192, 2).ok());

    // f = sqrt(y): f^2 = y <= 1*(x^2 + y) + 0.
    const auto f = VolFunctional::user([](double, double y) { return std::sqrt(y); }, 1.0, 0.0);
    const auto gf = growth_constants(f, p);
    CHECK(gf.k1 == 1.0);
    CHECK(sample_growth_bound(f, p, gf, 8192, 3).ok());

    // Understated constants must be caught.
    const auto bad = VolFunctional::user([](double x, double) { return 2.0 * x; }, 1.0, 0.0);
    const auto gb = growth_constants(bad, p);
    const auto rep = sample_growth_bound(bad, p, gb, 4096, 4);
    CHECK_FALSE(rep.ok());
    CHECK(rep.violations.front().inequality.find("K1") != std::string::npos);
}

TEST_CASE("user functionals must declare their growth constants", "[theory]") {
    VolFunctional f;
    f.kind = VolKind::user_supplied;
    f.fn = [](double, double y) { return y; };
    CHECK_THROWS_AS(growth_constants(f, table1()), std::invalid_argument);
}
