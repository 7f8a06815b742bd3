#pragma once

#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "secrms/core.h"
#include "secrms/mcmc.h"

namespace secrms {

/// Gaussian, Student-t and truncated-Gaussian tuning densities on the transformed scale.
/// Kind `prior` is the transformed prior itself (used to recover the harmonic mean).
enum class TuningKind { normal, student_t, truncated_normal, prior };

struct TuningSpec {
    TuningKind kind = TuningKind::normal;
    double df = 0.0;    ///< student_t only
    double alpha = 0.0; ///< truncated_normal only: probability mass of the kept ellipsoid

    /// "normal", "t10", "tn0.95", "prior".
    std::string name() const;
    bool operator==(const TuningSpec&) const = default;
};

/// The nine densities compared in the study: normal, t(10,100,500,1000,10000), TN(.90,.95,.99).
const std::vector<TuningSpec>& tuning_variants();
TuningSpec parse_tuning(const std::string& name);

class TuningDensity {
  public:
    TuningDensity() = default;
    /// scale is the covariance of the density (for Student-t the scale matrix is
    /// scale * (df - 2) / df so that covariances match).
    TuningDensity(TuningSpec spec, Eigen::VectorXd location, Eigen::MatrixXd scale);

    const TuningSpec& spec() const { return spec_; }
    int dimension() const { return static_cast<int>(location_.size()); }
    const Eigen::VectorXd& location() const { return location_; }
    const Eigen::MatrixXd& covariance() const { return cov_; }
    /// Ridge added to the sample covariance when fitting (0 if none was needed).
    double ridge() const { return ridge_; }
    void set_ridge(double r) { ridge_ = r; }
    double log_density(const Eigen::VectorXd& x) const;

  private:
    TuningSpec spec_;
    Eigen::VectorXd location_;
    Eigen::MatrixXd cov_;
    Eigen::MatrixXd chol_; ///< lower Cholesky factor of the (possibly rescaled) matrix
    double log_det_ = 0.0;
    double radius2_ = 0.0;
    double ridge_ = 0.0;
};

/// Unconstrained coordinates of the active parameters: logit for probabilities and
/// logit(sigma / R) for scale parameters, in active_params order.
Eigen::VectorXd transform_params(ModelId model, const ModelParams& params, const PriorSpec& prior);
ModelParams untransform_params(ModelId model, const Eigen::VectorXd& x, const PriorSpec& prior);
/// Log prior density on the transformed scale (every coordinate is standard logistic).
double log_transformed_prior(const Eigen::VectorXd& x);
/// n_draws x dimension matrix of transformed draws.
Eigen::MatrixXd transformed_draws(const Chain& chain);

/// Location = sample mean, scale = sample covariance (ridge-regularised when singular).
/// Requires at least dimension + 2 rows.
TuningDensity fit_tuning(const Eigen::MatrixXd& draws, TuningSpec spec);
TuningDensity fit_tuning(const Chain& chain, TuningSpec spec);

enum class MarglikMethod { gd_map, gd_il, hm };
std::string_view to_string(MarglikMethod m);

struct LogMarginal {
    double value = 0.0;
    MarglikMethod method = MarglikMethod::hm;
    std::string tuning; ///< empty for HM
    double mc_se = 0.0;
    long used = 0;
    long dropped = 0;
    /// More than 1% of draws were dropped.
    bool unreliable = false;
};

/// Generic estimator: log m = -log mean_d exp(log_g[d] - log_pi[d] - log_f[d]).
/// Summands that are NaN or +inf are dropped and counted; -inf summands are exact zeros.
/// Throws NumericalError naming `tuning` when no summand is finite.
LogMarginal gelfand_dey(std::span<const double> log_f, std::span<const double> log_g,
                        std::span<const double> log_pi, MarglikMethod method,
                        const std::string& tuning);
/// Same, evaluating g and the transformed prior at each row of x.
LogMarginal gelfand_dey(std::span<const double> log_f, const Eigen::MatrixXd& x,
                        const TuningDensity& g, MarglikMethod method);

struct MapEstimate {
    ModelParams params;
    LatentState latent;
    double achieved = 0.0; ///< log f(Y | mu) + log pi(mu) at the estimate
    double log_lik = 0.0;
    int n_rounds = 0;
};

/// Alternating resampling search for the joint mode over recombinations of the draws.
MapEstimate map_refine(const Chain& chain, const CaptureDataset& data);

/// log f(Y | mu_p^(d), mu_s_hat) for every draw.
std::vector<double> map_log_likelihoods(const Chain& chain, const CaptureDataset& data,
                                        const MapEstimate& map);

/// Integration grid of cell centres at the space's resolution. Throws std::invalid_argument if
/// the resolution does not divide both sides evenly or leaves no cells.
std::vector<Point> integration_grid(const StateSpace& grid);

/// Likelihood with z and free u summed out and each activity centre averaged over the grid,
/// for fixed scalar parameters and identity permutation L.
double integrated_log_likelihood(ModelId model, const CaptureDataset& data,
                                 const ModelParams& params, std::span<const int> L,
                                 const StateSpace& grid);
std::vector<double> integrated_log_likelihoods(const Chain& chain, const CaptureDataset& data,
                                               const StateSpace& grid);

LogMarginal gd_map(const Chain& chain, const CaptureDataset& data, const TuningDensity& tuning,
                   const MapEstimate& map);
/// Reuses precomputed map_log_likelihoods.
LogMarginal gd_map(const Chain& chain, std::span<const double> map_log_lik,
                   const TuningDensity& tuning);
LogMarginal gd_il(const Chain& chain, const CaptureDataset& data, const TuningDensity& tuning,
                  const StateSpace& grid);
/// Reuses precomputed integrated_log_likelihoods.
LogMarginal gd_il(const Chain& chain, std::span<const double> il, const TuningDensity& tuning);
LogMarginal harmonic_mean(const Chain& chain);

inline double bayes_factor(const LogMarginal& a, const LogMarginal& b) { return a.value - b.value; }

} // namespace secrms
