#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "secrms/core.h"
#include "secrms/model.h"
#include "secrms/numeric.h"

namespace secrms {

struct McmcConfig {
    int n_iter = 30000;
    int burn_in = 10000;
    int thin = 1;
    /// Random-walk sd on the logit scale for phi, omega0 and p0.
    double scale_prob = 0.3;
    /// Random-walk sd on logit(sigma / R).
    double scale_sigma = 0.2;
    /// Activity-centre random-walk sd (state-space units).
    double scale_s = 0.2;
    /// Identity swaps proposed per iteration; 0 means 2M.
    int l_swaps = 0;
    std::uint64_t seed = 1;

    // Validation switches. A flat likelihood samples the prior (the sex factor of members is
    // kept so u ~ Bernoulli(theta) for everyone); a non-empty s_support
    // restricts every activity centre to the listed points (uniform prior over them).
    bool flat_likelihood = false;
    bool update_scalars = true;
    bool update_z = true;
    bool update_u = true;
    bool update_s = true;
    bool update_l = true;
    std::vector<Point> s_support;

    void validate() const;
};

struct MoveStats {
    long attempts = 0;
    long accepts = 0;
    double rate() const { return attempts ? static_cast<double>(accepts) / attempts : 0.0; }
};

struct AcceptanceStats {
    std::array<MoveStats, 8> scalar; ///< indexed by Param
    MoveStats s;
    MoveStats l;
    MoveStats& of(Param p) { return scalar[static_cast<int>(p)]; }
    const MoveStats& of(Param p) const { return scalar[static_cast<int>(p)]; }
};

struct Draw {
    ModelParams params;
    LatentState latent;
    double log_lik = 0.0;
    double log_prior = 0.0;
    double log_latent_prior = 0.0;
    std::vector<double> individual_log_lik;

    double log_posterior() const { return log_lik + log_prior + log_latent_prior; }
};

struct Chain {
    ModelId model = ModelId::M1;
    McmcConfig config;
    PriorSpec prior;
    std::vector<Draw> draws;
    AcceptanceStats acceptance;

    std::size_t size() const { return draws.size(); }
    bool empty() const { return draws.empty(); }
};

struct InitialState {
    ModelParams params;
    LatentState latent;
};

/// Metropolis-within-Gibbs sampler over (scalars, z, u, S, L) for one model and dataset.
/// The dataset is held by reference.
class Sampler {
  public:
    Sampler(ModelId model, const CaptureDataset& data, const PriorSpec& prior,
            const McmcConfig& config, const std::optional<InitialState>& init = std::nullopt);

    void step();
    void update_scalars();
    void update_z();
    void update_u();
    void update_s();
    void update_l();
    /// Metropolis step on the transposition of detector-2 rows r1 and r2.
    bool propose_swap(int r1, int r2);

    ModelId model() const { return model_; }
    const ModelParams& params() const { return params_; }
    const LatentState& latent() const { return latent_; }
    double log_lik() const;
    const std::vector<double>& individual_log_lik() const { return ll_; }
    const AcceptanceStats& acceptance() const { return acceptance_; }
    Draw snapshot() const;

  private:
    void initialise(const std::optional<InitialState>& init);
    void greedy_links();
    void refresh_all();
    void refresh_terms(int i);
    double eval(const ModelParams& params, const IndividualStats& st, const TrapTerms& terms,
                int z, int u) const;
    double theta_term(const ModelParams& params, int u) const;
    void update_rw(Param p);
    Point propose_centre(Point s);
    Point draw_centre();
    void distances(Point s, std::vector<double>& out) const;

    ModelId model_;
    const CaptureDataset* data_;
    Likelihood lik_;
    PriorSpec prior_;
    McmcConfig config_;
    Rng rng_;

    ModelParams params_;
    LatentState latent_;
    std::vector<int> L_inv_;
    std::vector<IndividualStats> stats_;
    std::vector<std::vector<double>> sq_dist_;
    std::vector<TrapTerms> terms_;
    std::vector<char> terms_valid_;
    std::vector<double> ll_;
    AcceptanceStats acceptance_;

    std::vector<TrapTerms> scratch_terms_;
    std::vector<double> scratch_ll_;
    std::vector<double> scratch_sq_;
    std::vector<int> touched_;
    IndividualStats scratch_a_;
    IndividualStats scratch_b_;
};

/// Runs n_iter iterations and keeps every thin-th draw after burn-in.
Chain fit(ModelId model, const CaptureDataset& data, const PriorSpec& prior,
          const McmcConfig& config, const std::optional<InitialState>& init = std::nullopt);

} // namespace secrms
