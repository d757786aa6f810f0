#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

namespace symbranch {

struct Estimate {
    double mean = 0.0;
    double se = 0.0;
    double variance = 0.0;
    std::size_t n = 0;
};

// Pairwise (cascade) summation. The reduction tree depends only on the length
// of the input, so results do not depend on how replicas were scheduled.
inline double pairwise_sum(std::span<const double> x) {
    constexpr std::size_t block = 16;
    if (x.size() <= block) {
        double s = 0.0;
        for (double v : x) s += v;
        return s;
    }
    const std::size_t half = x.size() / 2;
    return pairwise_sum(x.first(half)) + pairwise_sum(x.subspan(half));
}

// Sample mean, unbiased variance and standard error. Values are shifted by the
// first element before summation, so a constant sample returns that constant
// exactly with zero variance.
inline Estimate summarize(std::span<const double> x) {
    Estimate e;
    e.n = x.size();
    if (x.empty()) return e;
    const double shift = x.front();
    std::vector<double> work(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) work[i] = x[i] - shift;
    const double mean_dev = pairwise_sum(work) / static_cast<double>(x.size());
    e.mean = shift + mean_dev;
    if (x.size() < 2) return e;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double d = x[i] - shift - mean_dev;
        work[i] = d * d;
    }
    e.variance = pairwise_sum(work) / static_cast<double>(x.size() - 1);
    e.se = std::sqrt(e.variance / static_cast<double>(x.size()));
    return e;
}

inline Estimate summarize(const std::vector<double>& x) {
    return summarize(std::span<const double>(x));
}

// Sample covariance of two equally long series.
inline double sample_covariance(std::span<const double> x, std::span<const double> y) {
    const std::size_t n = x.size();
    if (n < 2) return 0.0;
    const double mx = summarize(x).mean;
    const double my = summarize(y).mean;
    std::vector<double> work(n);
    for (std::size_t i = 0; i < n; ++i) work[i] = (x[i] - mx) * (y[i] - my);
    return pairwise_sum(work) / static_cast<double>(n - 1);
}

} // namespace symbranch
