#include <gtest/gtest.h>

#include <symbranch/dual.hpp>

#include "oracles.hpp"

using namespace symbranch;

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();

double z(const Estimate& e, double target) {
    return e.se > 0.0 ? std::abs(e.mean - target) / e.se : (e.mean == target ? 0.0 : kInf);
}
} // namespace

TEST(DualChain, SingleSiteCollidesForever) {
    const auto k = MigrationKernel::single_site();
    rng::CounterEngine e(1, rng::Domain::dual_chain, 0);
    const auto s = simulate_dual(k, 0, 0, 3.5, e);
    EXPECT_EQ(s.collision_time, 3.5);
    EXPECT_FALSE(s.never_met);
}

TEST(DualChain, TimeZero) {
    const auto k = MigrationKernel::torus_laplacian(1, 5);
    rng::CounterEngine e(1, rng::Domain::dual_chain, 0);
    const auto s = simulate_dual(k, 1, 3, 0.0, e);
    EXPECT_EQ(s.collision_time, 0.0);
    EXPECT_EQ(s.end, (std::pair<std::size_t, std::size_t>{1, 3}));
    EXPECT_TRUE(s.never_met);
}

TEST(DualChain, CollisionTimeBounded) {
    const auto k = MigrationKernel::complete_graph(3);
    for (std::uint64_t i = 0; i < 2000; ++i) {
        rng::CounterEngine e(2, rng::Domain::dual_chain, i);
        const auto s = simulate_dual(k, 0, i % 3, 2.0, e);
        ASSERT_GE(s.collision_time, 0.0);
        ASSERT_LE(s.collision_time, 2.0);
        if (s.never_met) ASSERT_EQ(s.collision_time, 0.0);
    }
}

TEST(DualChain, MeanCollisionTimeMatchesOracle) {
    const auto k = MigrationKernel::torus_laplacian(1, 5);
    DualMonteCarlo mc;
    mc.seed = 4;
    mc.samples = 100000;
    const Estimate e = collision_time_estimate(k, 0, 1, 2.0, mc);
    const double exact = expected_collision_time(k, 0, 1, 2.0);
    // independent: E[L_t] = int_0^t sum_i p_s(0,i) p_s(1,i) ds
    const auto a = oracle::torus_generator(1, 5);
    const double ref = oracle::simpson(
        [&](double s) {
            const auto p = oracle::expm(a, s);
            double acc = 0.0;
            for (std::size_t i = 0; i < 5; ++i) acc += p(0, i) * p(1, i);
            return acc;
        },
        0.0, 2.0, 400);
    EXPECT_NEAR(exact, ref, 1e-9);
    EXPECT_LE(z(e, exact), 3.0) << e.mean << " vs " << exact;
}

// E^{ab}[L_{s+t}] = E^{ab}[L_s] + sum_{ij} P^{ab}(xi_s = (i,j)) E^{ij}[L_t]
TEST(DualChain, CollisionTimeAdditivity) {
    const auto k = MigrationKernel::torus_laplacian(2, 3);
    const double s = 0.7;
    const double t = 1.3;
    const auto ra = transition_row(k, s, 0);
    const auto rb = transition_row(k, s, 5);
    double rhs = expected_collision_time(k, 0, 5, s);
    for (std::size_t i = 0; i < 9; ++i)
        for (std::size_t j = 0; j < 9; ++j) rhs += ra[i] * rb[j] * expected_collision_time(k, i, j, t);
    EXPECT_NEAR(expected_collision_time(k, 0, 5, s + t), rhs, 1e-10);
}

TEST(FkOracle, TimeZeroAndSingleSite) {
    const auto k = MigrationKernel::torus_laplacian(1, 4);
    const std::vector<double> u0{1, 2, 0, 0.5};
    const std::vector<double> v0{0, 1, 3, 1};
    for (std::size_t a = 0; a < 4; ++a)
        for (std::size_t b = 0; b < 4; ++b) EXPECT_EQ(fk_oracle(k, 2.0, -0.5, u0, v0, a, b, 0.0), u0[a] * v0[b]);
    const auto s = MigrationKernel::single_site();
    EXPECT_NEAR(fk_oracle(s, 1.0, -0.5, {2.0}, {3.0}, 0, 0, 1.0), 6.0 * std::exp(-0.5), 1e-12);
}

TEST(FkOracle, WeightOffIsTwoSemigroups) {
    const auto k = MigrationKernel::complete_graph(4);
    const std::vector<double> u0{1, 0, 2, 0};
    const std::vector<double> v0{0, 1, 1, 3};
    const auto pu = propagate(k, 1.5, u0);
    const auto pv = propagate(k, 1.5, v0);
    for (auto [g, r] : {std::pair{0.0, -0.5}, std::pair{3.0, 0.0}})
        for (std::size_t a = 0; a < 4; ++a)
            for (std::size_t b = 0; b < 4; ++b)
                EXPECT_NEAR(fk_oracle(k, g, r, u0, v0, a, b, 1.5), pu[a] * pv[b], 1e-12);
}

TEST(FkOracle, MatchesIndependentExponential) {
    const auto k = MigrationKernel::complete_graph(5);
    const auto a = oracle::complete_generator(5);
    const std::vector<double> ones(5, 1.0);
    const auto ref = oracle::feynman_kac(a, -1.0, ones, ones, 1.0);
    const auto uni = fk_field(k, 2.0, -0.5, ones, ones, 1.0, OracleMethod::uniformization);
    const auto den = fk_field(k, 2.0, -0.5, ones, ones, 1.0, OracleMethod::dense);
    for (std::size_t s = 0; s < 25; ++s) {
        EXPECT_NEAR(uni[s], ref[s], 1e-11);
        EXPECT_NEAR(den[s], ref[s], 1e-11);
    }
    const auto ref_inf = oracle::feynman_kac(a, 0.0, ones, ones, 1.0, true);
    const auto inf = fk_field(k, kInf, -0.5, ones, ones, 1.0);
    for (std::size_t s = 0; s < 25; ++s) EXPECT_NEAR(inf[s], ref_inf[s], 1e-11);
}

TEST(FkOracle, TwoSiteAnticorrelated) {
    const auto k = MigrationKernel::complete_graph(2);
    const std::vector<double> ones(2, 1.0);
    const double exact = fk_oracle(k, 1.0, -1.0, ones, ones, 0, 0, 1.0);
    EXPECT_NEAR(exact, oracle::feynman_kac(oracle::complete_generator(2), -1.0, ones, ones, 1.0)[0], 1e-12);
    DualMonteCarlo mc;
    mc.seed = 11;
    mc.samples = 100000;
    EXPECT_LE(z(dual_moment_estimate(k, ones, ones, 1.0, -1.0, 0, 0, 1.0, mc), exact), 3.0);
}

TEST(FkOracle, Preconditions) {
    const auto k = MigrationKernel::complete_graph(3);
    const std::vector<double> ones(3, 1.0);
    EXPECT_THROW(fk_oracle(k, kInf, 0.0, ones, ones, 0, 1, 1.0), PreconditionError);
    EXPECT_THROW(fk_oracle(k, kInf, 0.5, ones, ones, 0, 1, 1.0), PreconditionError);
    EXPECT_THROW(fk_oracle(k, -1.0, -0.5, ones, ones, 0, 1, 1.0), DomainError);
    EXPECT_THROW(fk_oracle(k, 1.0, -0.5, ones, ones, 0, 3, 1.0), IndexError);
    EXPECT_THROW(fk_oracle(k, 1.0, -0.5, {1.0}, ones, 0, 1, 1.0), PreconditionError);
    EXPECT_THROW(fk_field(MigrationKernel::torus_laplacian(1, 65), 1.0, -0.5, std::vector<double>(65, 1.0),
                          std::vector<double>(65, 1.0), 1.0, OracleMethod::dense),
                 PreconditionError);
}

TEST(FkOracle, MonotoneInTimeForNegativeRho) {
    const auto k = MigrationKernel::torus_laplacian(1, 5);
    const std::vector<double> ones(5, 1.0);
    std::vector<double> grid;
    for (int i = 0; i <= 40; ++i) grid.push_back(0.25 * i);
    const auto curve = fk_curve(k, 3.0, -0.7, ones, ones, grid);
    for (std::size_t m = 1; m < curve.size(); ++m)
        for (std::size_t s = 0; s < 25; ++s) EXPECT_LE(curve[m][s], curve[m - 1][s] + 1e-14);
    // the curve equals independent evaluations
    for (std::size_t m : {3u, 17u, 40u}) {
        const auto direct = fk_field(k, 3.0, -0.7, ones, ones, grid[m]);
        for (std::size_t s = 0; s < 25; ++s) EXPECT_NEAR(curve[m][s], direct[s], 1e-11);
    }
}

// sum_{a,b} E^{a,b}[1_i(xi1) 1_j(xi2) w] = E^{i,j}[w] by reversibility.
TEST(FkOracle, ReversalSymmetry) {
    const auto k = MigrationKernel::torus_laplacian(2, 3);
    const std::vector<double> ones(9, 1.0);
    for (double g : {2.0, kInf}) {
        const auto total = fk_field(k, g, -0.5, ones, ones, 1.3);
        for (auto [i, j] : {std::pair{0, 1}, std::pair{2, 7}, std::pair{4, 4}}) {
            std::vector<double> ei(9, 0.0), ej(9, 0.0);
            ei[static_cast<std::size_t>(i)] = 1.0;
            ej[static_cast<std::size_t>(j)] = 1.0;
            if (std::isinf(g) && i == j) continue; // not E-valued
            const auto f = fk_field(k, g, -0.5, ei, ej, 1.3);
            double s = 0.0;
            for (double x : f) s += x;
            EXPECT_NEAR(s, total[static_cast<std::size_t>(i * 9 + j)], 1e-8);
        }
    }
}

TEST(FkOracle, InfiniteRateDiagonalVanishes) {
    const auto k = MigrationKernel::torus_laplacian(1, 6);
    const auto f = fk_field(k, kInf, -0.5, {1, 0, 0, 0, 0, 0}, {0, 0, 0, 1, 0, 0}, 2.0);
    for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(f[i * 6 + i], 0.0);
}

TEST(DualEstimate, SingleSiteHasZeroVariance) {
    const auto k = MigrationKernel::single_site();
    DualMonteCarlo mc;
    mc.samples = 100;
    const Estimate e = dual_moment_estimate(k, {1.0}, {1.0}, 1.0, -0.5, 0, 0, 1.0, mc);
    EXPECT_NEAR(e.mean, std::exp(-0.5), 1e-15);
    EXPECT_EQ(e.se, 0.0);
}

TEST(DualEstimate, TimeZeroExact) {
    const auto k = MigrationKernel::complete_graph(3);
    DualMonteCarlo mc;
    mc.samples = 10;
    const Estimate e = dual_moment_estimate(k, {1, 2, 3}, {4, 5, 6}, 1.0, -0.5, 1, 2, 0.0, mc);
    EXPECT_EQ(e.mean, 12.0);
    EXPECT_EQ(e.se, 0.0);
}

TEST(DualEstimate, CompleteGraphMatchesOracle) {
    const auto k = MigrationKernel::complete_graph(5);
    const std::vector<double> ones(5, 1.0);
    DualMonteCarlo mc;
    mc.seed = 3;
    mc.samples = 40000;
    const Estimate e = dual_moment_estimate(k, ones, ones, 2.0, -0.5, 0, 1, 1.0, mc);
    EXPECT_LE(z(e, fk_oracle(k, 2.0, -0.5, ones, ones, 0, 1, 1.0)), 3.0);
}

TEST(DualEstimate, LocalizedTorusMatchesOracle) {
    const auto k = MigrationKernel::torus_laplacian(2, 3);
    std::vector<double> u0(9, 0.0), v0(9, 0.0);
    u0[0] = 1.0;
    v0[4] = 1.0;
    DualMonteCarlo mc;
    mc.seed = 8;
    mc.samples = 40000;
    for (auto [a, b] : {std::pair{0, 4}, std::pair{1, 3}, std::pair{2, 2}}) {
        const Estimate e = dual_moment_estimate(k, u0, v0, 2.0, -0.5, static_cast<std::size_t>(a),
                                                static_cast<std::size_t>(b), 0.5, mc);
        EXPECT_LE(z(e, fk_oracle(k, 2.0, -0.5, u0, v0, static_cast<std::size_t>(a), static_cast<std::size_t>(b),
                                 0.5)),
                  3.0)
            << a << "," << b;
    }
}

TEST(DualEstimate, ThreadCountDoesNotChangeResult) {
    const auto k = MigrationKernel::torus_laplacian(1, 7);
    DualMonteCarlo one{5, 3000, 1};
    DualMonteCarlo many{5, 3000, 4};
    const std::vector<double> ones(7, 1.0);
    EXPECT_EQ(dual_moment_estimate(k, ones, ones, 1.0, -0.5, 0, 3, 2.0, one).mean,
              dual_moment_estimate(k, ones, ones, 1.0, -0.5, 0, 3, 2.0, many).mean);
}

TEST(NoCollision, TrivialCases) {
    const auto k = MigrationKernel::torus_laplacian(1, 5);
    EXPECT_EQ(no_collision_exact(k, 2, 2, 1.0), 0.0);
    EXPECT_NEAR(no_collision_exact(k, 0, 2, 0.0), 1.0, 1e-15);
    // two sites: the pair leaves (0,1) at rate 1 and every jump collides
    EXPECT_NEAR(no_collision_exact(MigrationKernel::complete_graph(2), 0, 1, 1.0), std::exp(-1.0), 1e-12);
}

TEST(NoCollision, DisconnectedSitesNeverMeet) {
    const auto k = MigrationKernel::custom({{0, 0}, {0, 0}});
    EXPECT_NEAR(no_collision_exact(k, 0, 1, 50.0), 1.0, 1e-12);
}

TEST(NoCollision, AntipodalTorusMatchesMonteCarlo) {
    const auto k = MigrationKernel::torus_laplacian(3, 7);
    const std::vector<int> far{3, 3, 3};
    const std::size_t b = k.torus_site(far);
    const double exact = no_collision_exact(k, 0, b, 20.0);
    EXPECT_GT(exact, 0.0);
    DualMonteCarlo mc;
    mc.seed = 21;
    mc.samples = 20000;
    EXPECT_LE(z(no_collision_probability(k, 0, b, 20.0, mc), exact), 3.0);
}

TEST(Coexistence, TimeZeroAndSingleSite) {
    const auto k = MigrationKernel::torus_laplacian(1, 5);
    const auto c = coexistence_functional(k, {1, 0, 0, 0, 0}, {0, 0, 2, 0, 0}, kInf, -0.5, {0.0, 1.0});
    EXPECT_EQ(c[0], 2.0);
    const auto s = coexistence_functional(MigrationKernel::single_site(), {1.0}, {1.0}, 1.0, -0.5, {0.0, 2.0, 10.0});
    EXPECT_NEAR(s[1], std::exp(-1.0), 1e-12);
    EXPECT_NEAR(s[2], std::exp(-5.0), 1e-12);
    EXPECT_THROW(coexistence_functional(k, {1, 0, 0, 0, 0}, {1, 0, 0, 0, 0}, kInf, -0.5, {1.0}), PreconditionError);
    EXPECT_THROW(coexistence_functional(k, {1, 0, 0, 0, 0}, {0, 1, 0, 0, 0}, 0.0, -0.5, {1.0}), DomainError);
}

TEST(Coexistence, LargerGammaLiesBelow) {
    const auto k = MigrationKernel::torus_laplacian(1, 21);
    std::vector<double> u0(21, 0.0), v0(21, 0.0);
    u0[0] = 1.0;
    v0[1] = 1.0;
    const std::vector<double> grid{0.5, 1, 2, 4, 8, 16};
    const auto lo = coexistence_functional(k, u0, v0, 1.0, -0.5, grid);
    const auto hi = coexistence_functional(k, u0, v0, 100.0, -0.5, grid);
    for (std::size_t m = 0; m < grid.size(); ++m) EXPECT_LT(hi[m], lo[m]);
}

TEST(SchemeRecursion, ConvergesToOracle) {
    const auto k = MigrationKernel::single_site();
    const auto w = scheme_second_moment(k, 1.0, -0.5, 1e-3, {1.0}, {1.0}, 1000);
    EXPECT_NEAR(w[0], std::pow(1.0 - 0.5e-3, 1000), 1e-13);
    const auto t = MigrationKernel::torus_laplacian(2, 3);
    std::vector<double> u0(9, 0.0), v0(9, 0.0);
    u0[0] = 1.0;
    v0[1] = 1.0;
    const auto exact = fk_field(t, 2.0, -0.5, u0, v0, 1.0);
    const auto w1 = scheme_second_moment(t, 2.0, -0.5, 1e-2, u0, v0, 100);
    const auto w2 = scheme_second_moment(t, 2.0, -0.5, 5e-3, u0, v0, 200);
    double e1 = 0.0, e2 = 0.0;
    for (std::size_t s = 0; s < 81; ++s) {
        e1 = std::max(e1, std::abs(w1[s] - exact[s]));
        e2 = std::max(e2, std::abs(w2[s] - exact[s]));
    }
    EXPECT_GT(e1 / e2, 1.8);
    EXPECT_LT(e1, 1e-2);
}
