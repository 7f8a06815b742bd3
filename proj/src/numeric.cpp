#include "secrms/numeric.h"

#include <algorithm>

namespace secrms {

double log_sum_exp(std::span<const double> v) {
    double mx = kNegInf;
    for (double x : v) mx = std::max(mx, x);
    if (!std::isfinite(mx)) return mx;
    CompensatedSum acc;
    for (double x : v) acc.add(std::exp(x - mx));
    return mx + std::log(acc.value());
}

double log_mean_exp(std::span<const double> v) {
    if (v.empty()) return kNegInf;
    return log_sum_exp(v) - std::log(static_cast<double>(v.size()));
}

double beta_draw(Rng& rng, double a, double b) {
    const double x = std::gamma_distribution<double>(a, 1.0)(rng);
    const double y = std::gamma_distribution<double>(b, 1.0)(rng);
    return x / (x + y);
}

} // namespace secrms
