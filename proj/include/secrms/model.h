#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "secrms/core.h"

namespace secrms {

/// Probability of arriving at a trap at distance d: omega0 * exp(-d^2 / (2 sigma^2)).
double trap_entry_prob(double omega0, double sigma, double d);
/// Per-detector detection probability at distance d: p0 * exp(-d^2 / (2 sigma^2)).
double detection_prob(double p0, double sigma, double d);

/// Row L[r] of the result is row r of y2 (an M x J x K array). Throws InvariantError if L is
/// not a bijection.
std::vector<std::uint8_t> reorder_by_permutation(std::span<const std::uint8_t> y2, int M, int J,
                                                 int K, std::span<const int> L);

/// Sorted sparse (trap, occasion) capture codes per row of each detector array.
class CaptureIndex {
  public:
    explicit CaptureIndex(const CaptureDataset& data);

    std::span<const int> row1(int i) const { return codes1_[i]; }
    std::span<const int> row2(int r) const { return codes2_[r]; }
    bool captured1(int i) const { return !codes1_[i].empty(); }
    bool captured2(int r) const { return !codes2_[r].empty(); }
    /// Detector-2 rows at or beyond n_full that hold captures (the movable identities).
    std::span<const int> partial_captured2() const { return partial_captured2_; }

  private:
    std::vector<std::vector<int>> codes1_;
    std::vector<std::vector<int>> codes2_;
    std::vector<int> partial_captured2_;
};

struct TrapCount {
    int trap = 0;
    int n = 0; ///< occasions with a detection on at least one detector
    int y = 0; ///< total detections over both detectors
};

/// Capture summaries of one true individual: detector-1 row a paired with detector-2 row b.
struct IndividualStats {
    bool captured = false;
    /// Pairing is impossible: it breaks a full-identity link, or joins two partial histories
    /// that share a (trap, occasion) and would therefore have been fully identified.
    bool link_conflict = false;
    bool sex_conflict = false;
    int observed_sex = -1;
    int y_total = 0;
    int n_total = 0;
    std::vector<TrapCount> traps;
};

IndividualStats pair_stats(const CaptureDataset& data, const CaptureIndex& index, int a, int b);
/// Same, reusing the storage of out.
void pair_stats_into(const CaptureDataset& data, const CaptureIndex& index, int a, int b,
                     IndividualStats& out);

/// Per-trap pieces of an individual's log-likelihood at a fixed activity centre and sigma:
/// sum_j term_j = base + sum_j w_j * delta[j], where w_j is n_ij (arrival models) or y_ij.
struct TrapTerms {
    double base = 0.0;
    std::vector<double> delta;
};

double sigma_for(ModelId model, const ModelParams& params, int u);
void compute_trap_terms(ModelId model, const ModelParams& params, double sigma, int K,
                        std::span<const Point> traps, Point s, TrapTerms& out);
void compute_trap_terms_sq(ModelId model, const ModelParams& params, double sigma, int K,
                           std::span<const double> sq_dist, TrapTerms& out);
double individual_log_likelihood(ModelId model, const ModelParams& params,
                                 const IndividualStats& stats, const TrapTerms& terms, int z,
                                 int u);

/// Binds a model to a dataset (held by reference; it must outlive this object).
class Likelihood {
  public:
    Likelihood(ModelId model, const CaptureDataset& data);

    ModelId model() const { return model_; }
    const CaptureDataset& data() const { return *data_; }
    const CaptureIndex& index() const { return index_; }

    IndividualStats stats(int a, int b) const { return pair_stats(*data_, index_, a, b); }
    double individual(const ModelParams& params, const LatentState& latent,
                      std::span<const int> L_inverse, int i) const;
    std::vector<double> per_individual(const ModelParams& params, const LatentState& latent) const;
    double total(const ModelParams& params, const LatentState& latent) const;

  private:
    void check(const LatentState& latent) const;

    ModelId model_;
    const CaptureDataset* data_;
    CaptureIndex index_;
};

double log_likelihood(ModelId model, const CaptureDataset& data, const ModelParams& params,
                      const LatentState& latent);
double per_individual_log_likelihood(ModelId model, const CaptureDataset& data,
                                     const ModelParams& params, const LatentState& latent, int i);
double log_prior(ModelId model, const ModelParams& params, const PriorSpec& prior);
/// Membership, sex (individuals with z = 0; members carry their sex factor in the
/// likelihood), uniform activity centres and the uniform permutation prior.
double log_latent_prior(ModelId model, const LatentState& latent, const ModelParams& params,
                        const StateSpace& space);
double log_joint(ModelId model, const CaptureDataset& data, const ModelParams& params,
                 const LatentState& latent, const PriorSpec& prior);

} // namespace secrms
