#include "secrms/criteria.h"

#include <cmath>
#include <string>

#include "secrms/numeric.h"

namespace secrms {

std::string_view to_string(Criterion c) {
    switch (c) {
    case Criterion::DIC1: return "DIC1";
    case Criterion::DIC2: return "DIC2";
    case Criterion::WAIC1: return "WAIC1";
    case Criterion::WAIC2: return "WAIC2";
    case Criterion::WAIC3: return "WAIC3";
    case Criterion::PPL: return "PPL";
    }
    return "?";
}

Criterion parse_criterion(std::string_view s) {
    for (Criterion c : kAllCriteria) {
        if (to_string(c) == s) return c;
    }
    throw std::invalid_argument("unknown criterion '" + std::string(s) + "'");
}

namespace {

double mean_of(std::span<const double> v) {
    CompensatedSum s;
    for (double x : v) s.add(x);
    return s.value() / static_cast<double>(v.size());
}

} // namespace

CriterionResult dic(std::span<const double> draw_log_lik, double estimate_log_lik, int variant) {
    if (draw_log_lik.empty()) throw std::invalid_argument("dic: no draws");
    if (variant != 1 && variant != 2) throw std::invalid_argument("dic: variant must be 1 or 2");
    const double mean = mean_of(draw_log_lik);
    double p;
    if (variant == 1) {
        p = 2.0 * estimate_log_lik - 2.0 * mean;
    } else {
        CompensatedSum ss;
        for (double v : draw_log_lik) ss.add((v - mean) * (v - mean));
        p = 2.0 * (ss.value() / static_cast<double>(draw_log_lik.size()));
    }
    CriterionResult r;
    r.criterion = variant == 1 ? Criterion::DIC1 : Criterion::DIC2;
    r.fit_term = -2.0 * estimate_log_lik;
    r.p_eff = p;
    r.penalty = 2.0 * p;
    r.value = r.fit_term + r.penalty;
    return r;
}

CriterionResult dic(const Chain& chain, const MapEstimate& map, int variant) {
    std::vector<double> ll(chain.size());
    for (std::size_t d = 0; d < chain.size(); ++d) ll[d] = chain.draws[d].log_lik;
    return dic(ll, map.log_lik, variant);
}

CriterionResult waic(std::span<const double> log_lik, std::size_t n_draws, std::size_t M,
                     int variant) {
    if (variant < 1 || variant > 3) throw std::invalid_argument("waic: variant must be 1, 2 or 3");
    if (n_draws == 0) throw std::invalid_argument("waic: no draws");
    if (log_lik.size() != n_draws * M) throw std::invalid_argument("waic: matrix size mismatch");
    std::vector<double> column(n_draws);
    CompensatedSum fit;
    CompensatedSum pen;
    for (std::size_t i = 0; i < M; ++i) {
        for (std::size_t d = 0; d < n_draws; ++d) column[d] = log_lik[d * M + i];
        const double lme = log_mean_exp(column);
        if (lme == kNegInf) {
            throw NumericalError("waic: individual " + std::to_string(i) +
                                 " has zero likelihood in every draw");
        }
        fit.add(lme);
        const double mean = mean_of(column);
        if (variant == 1) {
            pen.add(lme - mean);
        } else {
            CompensatedSum dev;
            for (double v : column) dev.add(variant == 2 ? (v - mean) * (v - mean) : std::abs(v - mean));
            pen.add(dev.value() / static_cast<double>(n_draws));
        }
    }
    CriterionResult r;
    r.criterion = variant == 1 ? Criterion::WAIC1 : variant == 2 ? Criterion::WAIC2 : Criterion::WAIC3;
    r.fit_term = -2.0 * fit.value();
    r.p_eff = variant == 2 ? pen.value() : 2.0 * pen.value();
    r.penalty = 2.0 * r.p_eff;
    r.value = r.fit_term + r.penalty;
    return r;
}

CriterionResult waic(const Chain& chain, int variant) {
    if (chain.empty()) throw std::invalid_argument("waic: empty chain");
    const std::size_t M = chain.draws.front().individual_log_lik.size();
    std::vector<double> ll;
    ll.reserve(chain.size() * M);
    for (const Draw& d : chain.draws) {
        if (d.individual_log_lik.size() != M) throw std::invalid_argument("waic: ragged draws");
        ll.insert(ll.end(), d.individual_log_lik.begin(), d.individual_log_lik.end());
    }
    return waic(ll, chain.size(), M, variant);
}

CriterionResult posterior_predictive_loss(std::span<const std::uint8_t> observed, int n_rep,
                                          const ReplicateFn& replicate) {
    if (n_rep < 1) throw std::invalid_argument("posterior_predictive_loss: no replicates");
    std::vector<std::uint32_t> counts(observed.size(), 0);
    std::vector<std::uint8_t> y(observed.size());
    for (int rep = 0; rep < n_rep; ++rep) {
        std::fill(y.begin(), y.end(), 0);
        replicate(rep, y);
        if (y.size() != observed.size()) {
            throw std::invalid_argument("posterior_predictive_loss: replicate has the wrong size");
        }
        for (std::size_t c = 0; c < y.size(); ++c) counts[c] += y[c];
    }
    CompensatedSum fit;
    CompensatedSum var;
    const double n = n_rep;
    for (std::size_t c = 0; c < counts.size(); ++c) {
        if (counts[c] == 0 && observed[c] == 0) continue;
        const double m = counts[c] / n;
        fit.add((observed[c] - m) * (observed[c] - m));
        var.add(m * (1.0 - m));
    }
    CriterionResult r;
    r.criterion = Criterion::PPL;
    r.fit_term = fit.value();
    r.penalty = var.value();
    r.p_eff = r.penalty;
    r.value = r.fit_term + r.penalty;
    return r;
}

void simulate_replicate(ModelId model, const CaptureDataset& data, const ModelParams& params,
                        const LatentState& latent, Rng& rng, std::vector<std::uint8_t>& out) {
    const std::size_t half = data.cells();
    out.assign(2 * half, 0);
    const auto inv = inverse_permutation(latent.L);
    const bool arrival = has_arrival_process(model);
    const double base = arrival ? params.omega0 : params.p0;
    for (int i = 0; i < data.M; ++i) {
        if (!latent.z[i]) continue;
        const double sigma = sigma_for(model, params, latent.u[i]);
        const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
        const int r = inv[i];
        for (int j = 0; j < data.J; ++j) {
            const double p = base * std::exp(-squared_distance(latent.s[i], data.traps.locations[j]) * inv2s2);
            for (int k = 0; k < data.K; ++k) {
                const std::size_t c1 = data.cell(i, j, k);
                const std::size_t c2 = half + data.cell(r, j, k);
                if (arrival) {
                    if (!bernoulli(rng, p)) continue;
                    out[c1] = bernoulli(rng, params.phi) ? 1 : 0;
                    out[c2] = bernoulli(rng, params.phi) ? 1 : 0;
                } else {
                    out[c1] = bernoulli(rng, p) ? 1 : 0;
                    out[c2] = bernoulli(rng, p) ? 1 : 0;
                }
            }
        }
    }
}

CriterionResult posterior_predictive_loss(const Chain& chain, const CaptureDataset& data,
                                          std::uint64_t seed, int thin) {
    if (chain.empty()) throw std::invalid_argument("posterior_predictive_loss: empty chain");
    if (thin < 1) throw std::invalid_argument("posterior_predictive_loss: thin must be positive");
    std::vector<std::uint8_t> observed(data.y1);
    observed.insert(observed.end(), data.y2.begin(), data.y2.end());
    const int n_rep = static_cast<int>((chain.size() + thin - 1) / thin);
    CriterionResult r = posterior_predictive_loss(
        observed, n_rep, [&](int rep, std::vector<std::uint8_t>& y) {
            const std::size_t d = static_cast<std::size_t>(rep) * thin;
            Rng rng(derive_seed(seed, d));
            simulate_replicate(chain.model, data, chain.draws[d].params, chain.draws[d].latent,
                               rng, y);
        });
    r.thin = thin;
    r.seed = seed;
    return r;
}

} // namespace secrms
