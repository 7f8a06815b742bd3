#include "secrms/model.h"

#include <cmath>
#include <string>

#include "secrms/numeric.h"

namespace secrms {

namespace {

const double kLogFloor = std::log(1e-300);

void check_kernel_args(double baseline, double sigma, double d, const char* what) {
    if (!(baseline > 0.0 && baseline < 1.0)) {
        throw std::invalid_argument(std::string(what) + ": baseline must lie in (0,1)");
    }
    if (!(sigma > 0.0)) throw std::invalid_argument(std::string(what) + ": sigma must be positive");
    if (!(d >= 0.0)) throw std::invalid_argument(std::string(what) + ": distance must be >= 0");
}

double xlogy(int n, double log_v) { return n == 0 ? 0.0 : n * log_v; }

} // namespace

double trap_entry_prob(double omega0, double sigma, double d) {
    check_kernel_args(omega0, sigma, d, "trap_entry_prob");
    return omega0 * std::exp(-d * d / (2.0 * sigma * sigma));
}

double detection_prob(double p0, double sigma, double d) {
    check_kernel_args(p0, sigma, d, "detection_prob");
    return p0 * std::exp(-d * d / (2.0 * sigma * sigma));
}

std::vector<std::uint8_t> reorder_by_permutation(std::span<const std::uint8_t> y2, int M, int J,
                                                 int K, std::span<const int> L) {
    if (L.size() != static_cast<std::size_t>(M) || !is_permutation(L)) {
        throw InvariantError("reorder_by_permutation: L is not a bijection on the M rows");
    }
    const std::size_t row = static_cast<std::size_t>(J) * K;
    if (y2.size() != row * M) throw std::invalid_argument("reorder_by_permutation: bad array size");
    std::vector<std::uint8_t> out(y2.size());
    for (int r = 0; r < M; ++r) {
        std::copy_n(y2.begin() + r * row, row, out.begin() + L[r] * row);
    }
    return out;
}

CaptureIndex::CaptureIndex(const CaptureDataset& data)
    : codes1_(data.M), codes2_(data.M) {
    const int row = data.J * data.K;
    for (int i = 0; i < data.M; ++i) {
        for (int c = 0; c < row; ++c) {
            const std::size_t at = static_cast<std::size_t>(i) * row + c;
            if (data.y1[at]) codes1_[i].push_back(c);
            if (data.y2[at]) codes2_[i].push_back(c);
        }
    }
    for (int r = data.n_full; r < data.M; ++r) {
        if (!codes2_[r].empty()) partial_captured2_.push_back(r);
    }
}

IndividualStats pair_stats(const CaptureDataset& data, const CaptureIndex& index, int a, int b) {
    IndividualStats st;
    pair_stats_into(data, index, a, b, st);
    return st;
}

void pair_stats_into(const CaptureDataset& data, const CaptureIndex& index, int a, int b,
                     IndividualStats& st) {
    st.captured = false;
    st.link_conflict = false;
    st.sex_conflict = false;
    st.y_total = 0;
    st.n_total = 0;
    st.traps.clear();
    if ((a < data.n_full || b < data.n_full) && a != b) st.link_conflict = true;
    const bool partial = a >= data.n_full;

    const auto r1 = index.row1(a);
    const auto r2 = index.row2(b);
    st.captured = !r1.empty() || !r2.empty();

    std::size_t p = 0;
    std::size_t q = 0;
    const int K = data.K;
    while (p < r1.size() || q < r2.size()) {
        int code;
        int hits = 0;
        if (q == r2.size() || (p < r1.size() && r1[p] < r2[q])) {
            code = r1[p++];
            hits = 1;
        } else if (p == r1.size() || r2[q] < r1[p]) {
            code = r2[q++];
            hits = 1;
        } else {
            code = r1[p];
            ++p;
            ++q;
            hits = 2;
            if (partial) st.link_conflict = true;
        }
        const int trap = code / K;
        if (st.traps.empty() || st.traps.back().trap != trap) st.traps.push_back({trap, 0, 0});
        st.traps.back().n += 1;
        st.traps.back().y += hits;
        st.n_total += 1;
        st.y_total += hits;
    }

    const int s1 = data.sex1[a];
    const int s2 = data.sex2[b];
    if (s1 >= 0 && s2 >= 0 && s1 != s2) st.sex_conflict = true;
    st.observed_sex = s1 >= 0 ? s1 : s2;
}

double sigma_for(ModelId model, const ModelParams& params, int u) {
    if (has_sex_covariate(model)) return u ? params.sigma_m : params.sigma_f;
    return params.sigma;
}

void compute_trap_terms_sq(ModelId model, const ModelParams& params, double sigma, int K,
                           std::span<const double> sq_dist, TrapTerms& out) {
    const std::size_t J = sq_dist.size();
    out.delta.resize(J);
    const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
    double acc = 0.0;
    if (has_arrival_process(model)) {
        const double log_base = std::log(params.omega0);
        const double miss_both = params.phi * (2.0 - params.phi);
        for (std::size_t j = 0; j < J; ++j) {
            const double log_eta = log_base - sq_dist[j] * inv2s2;
            // (1 - eta) + eta (1 - phi)^2
            double log_c = std::log1p(-std::exp(log_eta) * miss_both);
            if (!(log_c >= kLogFloor)) log_c = kLogFloor;
            acc += log_c;
            out.delta[j] = log_eta - log_c;
        }
        out.base = K * acc;
    } else {
        const double log_base = std::log(params.p0);
        for (std::size_t j = 0; j < J; ++j) {
            const double log_p = log_base - sq_dist[j] * inv2s2;
            const double log_q = std::log1p(-std::exp(log_p));
            acc += log_q;
            out.delta[j] = log_p - log_q;
        }
        out.base = 2.0 * K * acc;
    }
}

void compute_trap_terms(ModelId model, const ModelParams& params, double sigma, int K,
                        std::span<const Point> traps, Point s, TrapTerms& out) {
    std::vector<double> sq(traps.size());
    for (std::size_t j = 0; j < traps.size(); ++j) sq[j] = squared_distance(s, traps[j]);
    compute_trap_terms_sq(model, params, sigma, K, sq, out);
}

double individual_log_likelihood(ModelId model, const ModelParams& params,
                                 const IndividualStats& stats, const TrapTerms& terms, int z,
                                 int u) {
    if (stats.link_conflict) return kNegInf;
    if (!z) return stats.captured ? kNegInf : 0.0;
    double value = 0.0;
    if (has_sex_covariate(model)) {
        if (stats.sex_conflict) return kNegInf;
        if (stats.observed_sex >= 0 && u != stats.observed_sex) return kNegInf;
        value += u ? std::log(params.theta) : std::log1p(-params.theta);
    }
    const bool arrival = has_arrival_process(model);
    if (arrival) {
        value += xlogy(stats.y_total, std::log(params.phi)) +
                 xlogy(2 * stats.n_total - stats.y_total, std::log1p(-params.phi));
    }
    value += terms.base;
    for (const TrapCount& tc : stats.traps) {
        value += (arrival ? tc.n : tc.y) * terms.delta[tc.trap];
    }
    return std::isnan(value) ? kNegInf : value;
}

Likelihood::Likelihood(ModelId model, const CaptureDataset& data)
    : model_(model), data_(&data), index_(data) {}

void Likelihood::check(const LatentState& latent) const {
    const auto M = static_cast<std::size_t>(data_->M);
    if (latent.z.size() != M || latent.u.size() != M || latent.s.size() != M ||
        latent.L.size() != M) {
        throw std::invalid_argument("latent state does not have M entries");
    }
    if (!is_permutation(latent.L)) throw InvariantError("L is not a bijection");
}

double Likelihood::individual(const ModelParams& params, const LatentState& latent,
                              std::span<const int> L_inverse, int i) const {
    const IndividualStats st = stats(i, L_inverse[i]);
    if (!latent.z[i]) return individual_log_likelihood(model_, params, st, TrapTerms{}, 0, 0);
    TrapTerms terms;
    compute_trap_terms(model_, params, sigma_for(model_, params, latent.u[i]), data_->K,
                       data_->traps.locations, latent.s[i], terms);
    return individual_log_likelihood(model_, params, st, terms, 1, latent.u[i]);
}

std::vector<double> Likelihood::per_individual(const ModelParams& params,
                                               const LatentState& latent) const {
    check(latent);
    const auto inv = inverse_permutation(latent.L);
    std::vector<double> out(data_->M);
    for (int i = 0; i < data_->M; ++i) out[i] = individual(params, latent, inv, i);
    return out;
}

double Likelihood::total(const ModelParams& params, const LatentState& latent) const {
    double sum = 0.0;
    for (double v : per_individual(params, latent)) sum += v;
    return sum;
}

double log_likelihood(ModelId model, const CaptureDataset& data, const ModelParams& params,
                      const LatentState& latent) {
    return Likelihood(model, data).total(params, latent);
}

double per_individual_log_likelihood(ModelId model, const CaptureDataset& data,
                                     const ModelParams& params, const LatentState& latent,
                                     int i) {
    if (i < 0 || i >= data.M) throw std::invalid_argument("individual index out of range");
    Likelihood lik(model, data);
    if (latent.L.size() != static_cast<std::size_t>(data.M)) {
        throw std::invalid_argument("latent state does not have M entries");
    }
    const auto inv = inverse_permutation(latent.L);
    return lik.individual(params, latent, inv, i);
}

double log_prior(ModelId model, const ModelParams& params, const PriorSpec& prior) {
    double value = 0.0;
    for (Param p : active_params(model)) {
        const double v = params.get(p);
        if (is_scale_param(p)) {
            if (!(v > 0.0 && v < prior.R)) return kNegInf;
            value -= std::log(prior.R);
        } else if (!(v > 0.0 && v < 1.0)) {
            return kNegInf;
        }
    }
    return value;
}

double log_latent_prior(ModelId model, const LatentState& latent, const ModelParams& params,
                        const StateSpace& space) {
    const int M = latent.M();
    const double log_psi = std::log(params.psi);
    const double log_not_psi = std::log1p(-params.psi);
    const bool sex = has_sex_covariate(model);
    const double log_theta = std::log(params.theta);
    const double log_not_theta = std::log1p(-params.theta);
    double value = 0.0;
    for (int i = 0; i < M; ++i) {
        if (latent.z[i]) {
            value += log_psi;
        } else {
            value += log_not_psi;
            if (sex) value += latent.u[i] ? log_theta : log_not_theta;
        }
        if (!space.contains(latent.s[i])) return kNegInf;
    }
    value -= M * std::log(space.area());
    value -= std::lgamma(M + 1.0);
    return std::isnan(value) ? kNegInf : value;
}

double log_joint(ModelId model, const CaptureDataset& data, const ModelParams& params,
                 const LatentState& latent, const PriorSpec& prior) {
    const double lp = log_prior(model, params, prior);
    if (lp == kNegInf) return kNegInf;
    return log_likelihood(model, data, params, latent) + lp +
           log_latent_prior(model, latent, params, data.space);
}

} // namespace secrms
