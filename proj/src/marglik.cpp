#include "secrms/marglik.h"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numbers>

#include <boost/math/distributions/chi_squared.hpp>

#include "secrms/model.h"
#include "secrms/numeric.h"

namespace secrms {

std::string TuningSpec::name() const {
    auto trim = [](double v) {
        char buf[32];
        auto res = std::to_chars(buf, buf + sizeof buf, v);
        return std::string(buf, res.ptr);
    };
    switch (kind) {
    case TuningKind::normal: return "normal";
    case TuningKind::student_t: return "t" + trim(df);
    case TuningKind::truncated_normal: {
        std::string s = trim(alpha);
        if (s.size() == 3) s += "0"; // 0.9 -> 0.90
        return "tn" + s;
    }
    case TuningKind::prior: return "prior";
    }
    return "?";
}

const std::vector<TuningSpec>& tuning_variants() {
    static const std::vector<TuningSpec> variants = {
        {TuningKind::normal, 0.0, 0.0},
        {TuningKind::student_t, 10.0, 0.0},
        {TuningKind::student_t, 100.0, 0.0},
        {TuningKind::student_t, 500.0, 0.0},
        {TuningKind::student_t, 1000.0, 0.0},
        {TuningKind::student_t, 10000.0, 0.0},
        {TuningKind::truncated_normal, 0.0, 0.90},
        {TuningKind::truncated_normal, 0.0, 0.95},
        {TuningKind::truncated_normal, 0.0, 0.99},
    };
    return variants;
}

TuningSpec parse_tuning(const std::string& name) {
    if (name == "prior") return {TuningKind::prior, 0.0, 0.0};
    for (const TuningSpec& s : tuning_variants()) {
        if (s.name() == name) return s;
    }
    throw std::invalid_argument("unknown tuning density '" + name + "'");
}

TuningDensity::TuningDensity(TuningSpec spec, Eigen::VectorXd location, Eigen::MatrixXd scale)
    : spec_(spec), location_(std::move(location)), cov_(std::move(scale)) {
    const int d = dimension();
    if (cov_.rows() != d || cov_.cols() != d) {
        throw std::invalid_argument("tuning density: scale matrix does not match location");
    }
    if (spec_.kind == TuningKind::prior) return;
    if (spec_.kind == TuningKind::student_t && !(spec_.df > 2.0)) {
        throw std::invalid_argument("tuning density: Student-t needs df > 2");
    }
    if (spec_.kind == TuningKind::truncated_normal && !(spec_.alpha > 0.0 && spec_.alpha < 1.0)) {
        throw std::invalid_argument("tuning density: alpha must lie in (0,1)");
    }
    Eigen::MatrixXd m = cov_;
    if (spec_.kind == TuningKind::student_t) m *= (spec_.df - 2.0) / spec_.df;
    Eigen::LLT<Eigen::MatrixXd> llt(m);
    if (llt.info() != Eigen::Success) {
        throw std::invalid_argument("tuning density: scale matrix is not positive definite");
    }
    chol_ = llt.matrixL();
    log_det_ = 2.0 * chol_.diagonal().array().log().sum();
    if (spec_.kind == TuningKind::truncated_normal) {
        radius2_ = boost::math::quantile(boost::math::chi_squared(d), spec_.alpha);
    }
}

double TuningDensity::log_density(const Eigen::VectorXd& x) const {
    if (spec_.kind == TuningKind::prior) return log_transformed_prior(x);
    const int d = dimension();
    const Eigen::VectorXd w = chol_.triangularView<Eigen::Lower>().solve(x - location_);
    const double q = w.squaredNorm();
    const double log2pi = std::log(2.0 * std::numbers::pi);
    switch (spec_.kind) {
    case TuningKind::normal: return -0.5 * (d * log2pi + log_det_ + q);
    case TuningKind::truncated_normal:
        if (q > radius2_) return kNegInf;
        return -0.5 * (d * log2pi + log_det_ + q) - std::log(spec_.alpha);
    case TuningKind::student_t: {
        const double nu = spec_.df;
        return std::lgamma(0.5 * (nu + d)) - std::lgamma(0.5 * nu) -
               0.5 * d * std::log(nu * std::numbers::pi) - 0.5 * log_det_ -
               0.5 * (nu + d) * std::log1p(q / nu);
    }
    case TuningKind::prior: break;
    }
    return kNegInf;
}

Eigen::VectorXd transform_params(ModelId model, const ModelParams& params, const PriorSpec& prior) {
    const auto active = active_params(model);
    Eigen::VectorXd x(active.size());
    for (std::size_t k = 0; k < active.size(); ++k) {
        const double v = params.get(active[k]);
        x[k] = is_scale_param(active[k]) ? logit(v / prior.R) : logit(v);
    }
    return x;
}

ModelParams untransform_params(ModelId model, const Eigen::VectorXd& x, const PriorSpec& prior) {
    const auto active = active_params(model);
    if (x.size() != static_cast<Eigen::Index>(active.size())) {
        throw std::invalid_argument("untransform_params: dimension mismatch");
    }
    ModelParams p;
    for (std::size_t k = 0; k < active.size(); ++k) {
        p.set(active[k], is_scale_param(active[k]) ? prior.R * expit(x[k]) : expit(x[k]));
    }
    return p;
}

double log_transformed_prior(const Eigen::VectorXd& x) {
    double v = 0.0;
    for (Eigen::Index k = 0; k < x.size(); ++k) v += log_logistic_density(x[k]);
    return v;
}

Eigen::MatrixXd transformed_draws(const Chain& chain) {
    const auto d = static_cast<Eigen::Index>(active_params(chain.model).size());
    Eigen::MatrixXd x(static_cast<Eigen::Index>(chain.size()), d);
    for (std::size_t r = 0; r < chain.size(); ++r) {
        x.row(static_cast<Eigen::Index>(r)) =
            transform_params(chain.model, chain.draws[r].params, chain.prior).transpose();
    }
    return x;
}

TuningDensity fit_tuning(const Eigen::MatrixXd& draws, TuningSpec spec) {
    const Eigen::Index n = draws.rows();
    const Eigen::Index d = draws.cols();
    if (n < d + 2) {
        throw std::invalid_argument("fit_tuning: need at least dimension + 2 draws, got " +
                                    std::to_string(n));
    }
    const Eigen::VectorXd mean = draws.colwise().mean().transpose();
    const Eigen::MatrixXd centred = draws.rowwise() - mean.transpose();
    Eigen::MatrixXd cov = (centred.transpose() * centred) / static_cast<double>(n - 1);

    double ridge = 0.0;
    const double base = std::max(cov.trace() / std::max<Eigen::Index>(d, 1), 1.0);
    for (;;) {
        Eigen::MatrixXd m = cov;
        m.diagonal().array() += ridge;
        Eigen::LLT<Eigen::MatrixXd> llt(m);
        const bool ok = llt.info() == Eigen::Success &&
                        (d == 0 || Eigen::MatrixXd(llt.matrixL()).diagonal().minCoeff() >
                                       1e-7 * std::sqrt(base));
        if (ok) {
            cov = m;
            break;
        }
        ridge = ridge == 0.0 ? 1e-10 * base : ridge * 10.0;
        if (ridge > 1e6 * base) throw NumericalError("fit_tuning: covariance could not be regularised");
    }
    TuningDensity g(spec, mean, cov);
    g.set_ridge(ridge);
    return g;
}

TuningDensity fit_tuning(const Chain& chain, TuningSpec spec) {
    return fit_tuning(transformed_draws(chain), spec);
}

std::string_view to_string(MarglikMethod m) {
    switch (m) {
    case MarglikMethod::gd_map: return "GD-MAP";
    case MarglikMethod::gd_il: return "GD-IL";
    case MarglikMethod::hm: return "HM";
    }
    return "?";
}

LogMarginal gelfand_dey(std::span<const double> log_f, std::span<const double> log_g,
                        std::span<const double> log_pi, MarglikMethod method,
                        const std::string& tuning) {
    if (log_f.size() != log_g.size() || log_f.size() != log_pi.size()) {
        throw std::invalid_argument("gelfand_dey: input lengths differ");
    }
    LogMarginal out;
    out.method = method;
    out.tuning = tuning;
    std::vector<double> t;
    t.reserve(log_f.size());
    for (std::size_t d = 0; d < log_f.size(); ++d) {
        const double v = (log_g[d] - log_pi[d]) - log_f[d];
        if (std::isnan(v) || v == std::numeric_limits<double>::infinity()) {
            ++out.dropped;
        } else {
            t.push_back(v);
        }
    }
    out.used = static_cast<long>(t.size());
    const double top = t.empty() ? kNegInf : *std::max_element(t.begin(), t.end());
    if (top == kNegInf) {
        const std::string who = tuning.empty() ? std::string(to_string(method)) : tuning;
        throw NumericalError("marginal likelihood estimation failed: no usable draw for " + who);
    }
    out.value = std::log(static_cast<double>(t.size())) - log_sum_exp(t);
    out.unreliable = out.dropped * 100 > static_cast<long>(log_f.size());

    // Batch-means standard error of the mean ratio, carried to the log scale by the delta method.
    const std::size_t batches = std::min<std::size_t>(30, t.size());
    if (batches >= 2) {
        const std::size_t size = t.size() / batches;
        std::vector<double> means(batches, 0.0);
        for (std::size_t b = 0; b < batches; ++b) {
            CompensatedSum s;
            for (std::size_t k = 0; k < size; ++k) s.add(std::exp(t[b * size + k] - top));
            means[b] = s.value() / size;
        }
        CompensatedSum s;
        for (double m : means) s.add(m);
        const double mbar = s.value() / batches;
        CompensatedSum ss;
        for (double m : means) ss.add((m - mbar) * (m - mbar));
        const double se = std::sqrt(ss.value() / (batches - 1) / batches);
        out.mc_se = mbar > 0.0 ? se / mbar : 0.0;
    }
    return out;
}

LogMarginal gelfand_dey(std::span<const double> log_f, const Eigen::MatrixXd& x,
                        const TuningDensity& g, MarglikMethod method) {
    if (static_cast<std::size_t>(x.rows()) != log_f.size()) {
        throw std::invalid_argument("gelfand_dey: draw count mismatch");
    }
    std::vector<double> lg(log_f.size());
    std::vector<double> lp(log_f.size());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        const Eigen::VectorXd row = x.row(r).transpose();
        lg[r] = g.log_density(row);
        lp[r] = log_transformed_prior(row);
    }
    return gelfand_dey(log_f, lg, lp, method, g.spec().name());
}

namespace {

// Log-likelihood of a fixed latent state as a function of the scalar parameters; bitwise equal
// to Likelihood::total.
class FixedLatent {
  public:
    FixedLatent(ModelId model, const CaptureDataset& data, const Likelihood& lik,
                const LatentState& latent)
        : model_(model), data_(data), latent_(latent), stats_(data.M), sq_(data.M) {
        const auto inv = inverse_permutation(latent.L);
        for (int i = 0; i < data.M; ++i) {
            stats_[i] = lik.stats(i, inv[i]);
            if (!latent.z[i]) continue;
            sq_[i].resize(data.J);
            for (int j = 0; j < data.J; ++j) {
                sq_[i][j] = squared_distance(latent.s[i], data.traps.locations[j]);
            }
        }
    }

    double log_lik(const ModelParams& params) {
        double sum = 0.0;
        for (int i = 0; i < data_.M; ++i) {
            if (!latent_.z[i]) {
                sum += individual_log_likelihood(model_, params, stats_[i], TrapTerms{}, 0, 0);
                continue;
            }
            const int u = latent_.u[i];
            compute_trap_terms_sq(model_, params, sigma_for(model_, params, u), data_.K, sq_[i],
                                  terms_);
            sum += individual_log_likelihood(model_, params, stats_[i], terms_, 1, u);
        }
        return sum;
    }

  private:
    ModelId model_;
    const CaptureDataset& data_;
    const LatentState& latent_;
    std::vector<IndividualStats> stats_;
    std::vector<std::vector<double>> sq_;
    TrapTerms terms_;
};

} // namespace

MapEstimate map_refine(const Chain& chain, const CaptureDataset& data) {
    if (chain.empty()) throw std::invalid_argument("map_refine: empty chain");
    const ModelId model = chain.model;
    const Likelihood lik(model, data);
    std::size_t d0 = 0;
    for (std::size_t d = 1; d < chain.size(); ++d) {
        if (chain.draws[d].log_posterior() > chain.draws[d0].log_posterior()) d0 = d;
    }
    MapEstimate est;
    est.params = chain.draws[d0].params;
    est.latent = chain.draws[d0].latent;
    est.achieved = chain.draws[d0].log_posterior();
    est.log_lik = chain.draws[d0].log_lik;

    for (;;) {
        ++est.n_rounds;
        bool improved = false;

        FixedLatent fixed(model, data, lik, est.latent);
        std::size_t best = chain.size();
        for (std::size_t d = 0; d < chain.size(); ++d) {
            const ModelParams& p = chain.draws[d].params;
            const double lp = log_prior(model, p, chain.prior);
            if (lp == kNegInf) continue;
            const double ll = fixed.log_lik(p);
            const double v = ll + lp + log_latent_prior(model, est.latent, p, data.space);
            if (v > est.achieved) {
                est.achieved = v;
                est.log_lik = ll;
                best = d;
            }
        }
        if (best < chain.size()) {
            est.params = chain.draws[best].params;
            improved = true;
        }

        best = chain.size();
        const double lp = log_prior(model, est.params, chain.prior);
        for (std::size_t d = 0; d < chain.size(); ++d) {
            const LatentState& s = chain.draws[d].latent;
            const double ll = lik.total(est.params, s);
            const double v = ll + lp + log_latent_prior(model, s, est.params, data.space);
            if (v > est.achieved) {
                est.achieved = v;
                est.log_lik = ll;
                best = d;
            }
        }
        if (best < chain.size()) {
            est.latent = chain.draws[best].latent;
            improved = true;
        }
        if (!improved) break;
    }
    return est;
}

std::vector<double> map_log_likelihoods(const Chain& chain, const CaptureDataset& data,
                                        const MapEstimate& map) {
    const Likelihood lik(chain.model, data);
    FixedLatent fixed(chain.model, data, lik, map.latent);
    std::vector<double> out(chain.size());
    for (std::size_t d = 0; d < chain.size(); ++d) out[d] = fixed.log_lik(chain.draws[d].params);
    return out;
}

std::vector<Point> integration_grid(const StateSpace& grid) {
    const double res = grid.grid_resolution;
    if (!(res > 0.0)) throw std::invalid_argument("integration grid: resolution must be positive");
    auto cells = [&](double side) {
        const double n = std::round(side / res);
        if (n < 1.0 || std::abs(n * res - side) > 1e-9 * std::max(1.0, side)) {
            throw std::invalid_argument("integration grid: resolution does not divide the state space");
        }
        return static_cast<int>(n);
    };
    const int nx = cells(grid.width());
    const int ny = cells(grid.height());
    std::vector<Point> out;
    out.reserve(static_cast<std::size_t>(nx) * ny);
    for (int a = 0; a < nx; ++a) {
        for (int b = 0; b < ny; ++b) {
            out.push_back({grid.x_min + (a + 0.5) * res, grid.y_min + (b + 0.5) * res});
        }
    }
    return out;
}

namespace {

class IntegratedLikelihood {
  public:
    IntegratedLikelihood(ModelId model, const CaptureDataset& data, const StateSpace& grid)
        : model_(model), data_(data), lik_(model, data), cells_(integration_grid(grid)),
          sq_(cells_.size(), std::vector<double>(data.J)) {
        for (std::size_t g = 0; g < cells_.size(); ++g) {
            for (int j = 0; j < data.J; ++j) {
                sq_[g][j] = squared_distance(cells_[g], data.traps.locations[j]);
            }
        }
        buf_.reserve(2 * cells_.size());
    }

    double operator()(const ModelParams& params, std::span<const int> L) {
        if (L.size() != static_cast<std::size_t>(data_.M)) {
            throw std::invalid_argument("integrated likelihood: L does not have M entries");
        }
        const auto inv = inverse_permutation(L);
        const bool sex = has_sex_covariate(model_);
        const int n_class = sex ? 2 : 1;
        for (int c = 0; c < n_class; ++c) {
            terms_[c].resize(cells_.size());
            for (std::size_t g = 0; g < cells_.size(); ++g) {
                compute_trap_terms_sq(model_, params, sigma_for(model_, params, c), data_.K,
                                      sq_[g], terms_[c][g]);
            }
        }
        const double log_psi = std::log(params.psi);
        const double log_not_psi = std::log1p(-params.psi);
        const double log_g = std::log(static_cast<double>(cells_.size()));
        double unseen = std::numeric_limits<double>::quiet_NaN();
        double sum = 0.0;
        for (int i = 0; i < data_.M; ++i) {
            const IndividualStats st = lik_.stats(i, inv[i]);
            if (st.link_conflict) return kNegInf;
            const bool plain = !st.captured && st.observed_sex < 0;
            if (plain && !std::isnan(unseen)) {
                sum += unseen;
                continue;
            }
            buf_.clear();
            for (int u = 0; u < n_class; ++u) {
                if (sex && st.observed_sex >= 0 && u != st.observed_sex) continue;
                for (std::size_t g = 0; g < cells_.size(); ++g) {
                    buf_.push_back(individual_log_likelihood(model_, params, st, terms_[u][g], 1, u));
                }
            }
            const double a = log_sum_exp(buf_) - log_g;
            double v;
            if (st.captured) {
                v = log_psi + a;
            } else {
                const double pair[2] = {log_not_psi, log_psi + a};
                v = log_sum_exp(pair);
            }
            if (plain) unseen = v;
            sum += v;
        }
        return std::isnan(sum) ? kNegInf : sum;
    }

  private:
    ModelId model_;
    const CaptureDataset& data_;
    Likelihood lik_;
    std::vector<Point> cells_;
    std::vector<std::vector<double>> sq_;
    std::vector<TrapTerms> terms_[2];
    std::vector<double> buf_;
};

} // namespace

double integrated_log_likelihood(ModelId model, const CaptureDataset& data,
                                 const ModelParams& params, std::span<const int> L,
                                 const StateSpace& grid) {
    IntegratedLikelihood il(model, data, grid);
    return il(params, L);
}

std::vector<double> integrated_log_likelihoods(const Chain& chain, const CaptureDataset& data,
                                               const StateSpace& grid) {
    IntegratedLikelihood il(chain.model, data, grid);
    std::vector<double> out(chain.size());
    for (std::size_t d = 0; d < chain.size(); ++d) {
        out[d] = il(chain.draws[d].params, chain.draws[d].latent.L);
    }
    return out;
}

namespace {

std::vector<double> cached_log_lik(const Chain& chain) {
    std::vector<double> out(chain.size());
    for (std::size_t d = 0; d < chain.size(); ++d) out[d] = chain.draws[d].log_lik;
    return out;
}

} // namespace

LogMarginal gd_map(const Chain& chain, std::span<const double> map_log_lik,
                   const TuningDensity& tuning) {
    const Eigen::MatrixXd x = transformed_draws(chain);
    if (tuning.spec().kind == TuningKind::prior) {
        // g = full prior: the latent prior cancels as well, leaving 1 / f(Y | mu^(d)).
        return gelfand_dey(cached_log_lik(chain), x, tuning, MarglikMethod::gd_map);
    }
    return gelfand_dey(map_log_lik, x, tuning, MarglikMethod::gd_map);
}

LogMarginal gd_map(const Chain& chain, const CaptureDataset& data, const TuningDensity& tuning,
                   const MapEstimate& map) {
    if (tuning.spec().kind == TuningKind::prior) return gd_map(chain, {}, tuning);
    return gd_map(chain, map_log_likelihoods(chain, data, map), tuning);
}

LogMarginal gd_il(const Chain& chain, std::span<const double> il, const TuningDensity& tuning) {
    return gelfand_dey(il, transformed_draws(chain), tuning, MarglikMethod::gd_il);
}

LogMarginal gd_il(const Chain& chain, const CaptureDataset& data, const TuningDensity& tuning,
                  const StateSpace& grid) {
    return gd_il(chain, integrated_log_likelihoods(chain, data, grid), tuning);
}

LogMarginal harmonic_mean(const Chain& chain) {
    const std::vector<double> lf = cached_log_lik(chain);
    const std::vector<double> zero(lf.size(), 0.0);
    return gelfand_dey(lf, zero, zero, MarglikMethod::hm, "");
}

} // namespace secrms
