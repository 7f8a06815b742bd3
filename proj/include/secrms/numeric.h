#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>

namespace secrms {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

inline double logit(double p) { return std::log(p) - std::log1p(-p); }
inline double expit(double x) {
    return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}
/// log(expit(x) * (1 - expit(x))), the log density of a standard logistic variate.
inline double log_logistic_density(double x) {
    const double a = std::abs(x);
    return -a - 2.0 * std::log1p(std::exp(-a));
}

/// log(sum(exp(v))) over the finite-or-minus-infinity entries of v.
double log_sum_exp(std::span<const double> v);
/// log(mean(exp(v))).
double log_mean_exp(std::span<const double> v);

/// Neumaier compensated summation.
class CompensatedSum {
  public:
    void add(double v) {
        const double t = sum_ + v;
        if (std::abs(sum_) >= std::abs(v)) {
            comp_ += (sum_ - t) + v;
        } else {
            comp_ += (v - t) + sum_;
        }
        sum_ = t;
    }
    double value() const { return sum_ + comp_; }

  private:
    double sum_ = 0.0;
    double comp_ = 0.0;
};

using Rng = std::mt19937_64;

/// splitmix64 finaliser; used to derive independent child seeds.
inline std::uint64_t mix_seed(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t tag) {
    return mix_seed(parent ^ mix_seed(tag + 0x632be59bd9b4e019ULL));
}

inline double uniform01(Rng& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }
inline double standard_normal(Rng& rng) { return std::normal_distribution<double>(0.0, 1.0)(rng); }
inline bool bernoulli(Rng& rng, double p) { return uniform01(rng) < p; }
inline int uniform_index(Rng& rng, int n) {
    return std::uniform_int_distribution<int>(0, n - 1)(rng);
}
double beta_draw(Rng& rng, double a, double b);

} // namespace secrms
