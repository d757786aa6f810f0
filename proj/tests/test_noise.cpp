#include <gtest/gtest.h>

#include <symbranch/noise.hpp>
#include <symbranch/stats.hpp>

using namespace symbranch;

TEST(Noise, PerfectCorrelation) {
    NoiseStream s(1, 0, 1.0);
    for (int k = 0; k < 50; ++k)
        for (const auto& p : s.sample_increments(0.01, 8)) EXPECT_EQ(p.d2, p.d1);
}

TEST(Noise, PerfectAnticorrelation) {
    NoiseStream s(1, 0, -1.0);
    for (int k = 0; k < 50; ++k)
        for (const auto& p : s.sample_increments(0.01, 8)) EXPECT_EQ(p.d2, -p.d1);
}

TEST(Noise, RejectsInvalidArguments) {
    EXPECT_THROW(NoiseStream(1, 0, 1.5), DomainError);
    EXPECT_THROW(NoiseStream(1, 0, std::nan("")), DomainError);
    NoiseStream s(1, 0, 0.0);
    EXPECT_THROW(s.sample_increments(0.0, 3), DomainError);
    EXPECT_THROW(s.sample_increments(-1.0, 3), DomainError);
}

// Covariance of (dB1, dB2) is rho dt; the SE of the sample mean of dB1 dB2 is
// sqrt(var(dB1 dB2) / n) with var = (1 + rho^2) dt^2.
TEST(Noise, CovarianceMatchesRho) {
    const double rho = -0.5;
    const double dt = 0.01;
    NoiseStream s(2024, 3, rho);
    std::vector<double> prod;
    prod.reserve(1000000);
    for (int k = 0; k < 1000000 / 10; ++k)
        for (const auto& p : s.sample_increments(dt, 10)) prod.push_back(p.d1 * p.d2);
    const Estimate e = summarize(prod);
    const double se = std::sqrt((1.0 + rho * rho) * dt * dt / static_cast<double>(prod.size()));
    EXPECT_LE(std::abs(e.mean - rho * dt), 4.0 * se);
}

TEST(Noise, MarginalVariances) {
    const double dt = 0.02;
    NoiseStream s(7, 1, 0.3);
    std::vector<double> q1;
    std::vector<double> q2;
    for (int k = 0; k < 20000; ++k)
        for (const auto& p : s.sample_increments(dt, 5)) {
            q1.push_back(p.d1 * p.d1);
            q2.push_back(p.d2 * p.d2);
        }
    // var(dB^2) = 2 dt^2
    const double se = std::sqrt(2.0 * dt * dt / static_cast<double>(q1.size()));
    EXPECT_LE(std::abs(summarize(q1).mean - dt), 4.0 * se);
    EXPECT_LE(std::abs(summarize(q2).mean - dt), 4.0 * se);
}

TEST(Noise, DistinctSitesUncorrelated) {
    const double dt = 1.0;
    NoiseStream s(11, 0, -0.7);
    std::vector<double> c11, c12, c21;
    for (int k = 0; k < 100000; ++k) {
        const auto p = s.sample_increments(dt, 2);
        c11.push_back(p[0].d1 * p[1].d1);
        c12.push_back(p[0].d1 * p[1].d2);
        c21.push_back(p[0].d2 * p[1].d1);
    }
    const double se = 1.0 / std::sqrt(100000.0);
    EXPECT_LE(std::abs(summarize(c11).mean), 4.0 * se);
    EXPECT_LE(std::abs(summarize(c12).mean), 4.0 * se);
    EXPECT_LE(std::abs(summarize(c21).mean), 4.0 * se);
}

TEST(Noise, DeterministicStreams) {
    NoiseStream a(5, 9, -0.2);
    NoiseStream b(5, 9, -0.2);
    for (int k = 0; k < 20; ++k) {
        const auto x = a.sample_increments(0.1, 4);
        const auto y = b.sample_increments(0.1, 4);
        for (std::size_t i = 0; i < 4; ++i) {
            EXPECT_EQ(x[i].d1, y[i].d1);
            EXPECT_EQ(x[i].d2, y[i].d2);
        }
    }
    EXPECT_EQ(a.counter(), 20u);
}

TEST(Noise, StreamsDifferAcrossIds) {
    NoiseStream a(5, 0, 0.0);
    NoiseStream b(5, 1, 0.0);
    EXPECT_NE(a.sample_increments(0.1, 1)[0].d1, b.sample_increments(0.1, 1)[0].d1);
}

// A site's draw does not depend on how many sites are sampled.
TEST(Noise, SiteDrawIndependentOfFieldSize) {
    NoiseStream a(5, 2, 0.4);
    NoiseStream b(5, 2, 0.4);
    const auto x = a.sample_increments(0.1, 3);
    const auto y = b.sample_increments(0.1, 30);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(x[i].d1, y[i].d1);
}
