#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "secrms/core.h"
#include "secrms/marglik.h"
#include "secrms/mcmc.h"

namespace secrms {

enum class Criterion { DIC1, DIC2, WAIC1, WAIC2, WAIC3, PPL };

inline constexpr std::array<Criterion, 6> kAllCriteria{Criterion::DIC1,  Criterion::DIC2,
                                                      Criterion::WAIC1, Criterion::WAIC2,
                                                      Criterion::WAIC3, Criterion::PPL};

std::string_view to_string(Criterion c);
Criterion parse_criterion(std::string_view s);

/// value = fit_term + penalty. For DIC and WAIC penalty = 2 p_eff; for PPL p_eff = penalty.
struct CriterionResult {
    Criterion criterion = Criterion::DIC1;
    double value = 0.0;
    double fit_term = 0.0;
    double penalty = 0.0;
    double p_eff = 0.0;
    int thin = 1;           ///< PPL only
    std::uint64_t seed = 0; ///< PPL only
};

/// Every criterion here prefers smaller values.
inline bool prefers(const CriterionResult& a, const CriterionResult& b) { return a.value < b.value; }

/// DIC from per-draw total log-likelihoods and the log-likelihood at the point estimate.
CriterionResult dic(std::span<const double> draw_log_lik, double estimate_log_lik, int variant);
CriterionResult dic(const Chain& chain, const MapEstimate& map, int variant);

/// WAIC from an n_draws x M row-major matrix of per-individual log-likelihoods.
/// Throws NumericalError naming the row if some individual has zero likelihood in every draw.
CriterionResult waic(std::span<const double> log_lik, std::size_t n_draws, std::size_t M,
                     int variant);
CriterionResult waic(const Chain& chain, int variant);

/// Fills `out` with one replicate dataset (binary cells); `rep` is the replicate number.
using ReplicateFn = std::function<void(int rep, std::vector<std::uint8_t>& out)>;

/// D_inf = sum (y - E y_rep)^2 + sum Var(y_rep) with moments over n_rep replicates.
CriterionResult posterior_predictive_loss(std::span<const std::uint8_t> observed, int n_rep,
                                          const ReplicateFn& replicate);
/// Replicates Y1 followed by Y2 from every thin-th draw, conditioning on the draw's latent
/// state; draw d uses the substream derive_seed(seed, d).
CriterionResult posterior_predictive_loss(const Chain& chain, const CaptureDataset& data,
                                          std::uint64_t seed, int thin = 10);

/// One replicate of (Y1, Y2) in detector-2 row order from a single draw.
void simulate_replicate(ModelId model, const CaptureDataset& data, const ModelParams& params,
                        const LatentState& latent, Rng& rng, std::vector<std::uint8_t>& out);

} // namespace secrms
