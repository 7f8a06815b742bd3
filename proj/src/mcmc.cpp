#include "secrms/mcmc.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <tuple>

namespace secrms {

void McmcConfig::validate() const {
    if (n_iter < 1) throw std::invalid_argument("n_iter must be positive");
    if (burn_in < 0 || burn_in >= n_iter) {
        throw std::invalid_argument("burn_in must satisfy 0 <= burn_in < n_iter");
    }
    if (thin < 1) throw std::invalid_argument("thin must be positive");
    if (!(scale_prob > 0.0) || !(scale_sigma > 0.0) || !(scale_s > 0.0)) {
        throw std::invalid_argument("proposal scales must be positive");
    }
    if (l_swaps < 0) throw std::invalid_argument("l_swaps must be >= 0");
}

namespace {

double reflect(double v, double lo, double hi) {
    const double w = hi - lo;
    if (!(w > 0.0)) return lo;
    double t = std::fmod(v - lo, 2.0 * w);
    if (t < 0.0) t += 2.0 * w;
    return t <= w ? lo + t : hi - (t - w);
}

// Probability of the first of two outcomes with log weights a and b.
double two_point(double a, double b) {
    if (a == kNegInf) return 0.0;
    if (b == kNegInf) return 1.0;
    return 1.0 / (1.0 + std::exp(b - a));
}

bool accept(Rng& rng, double log_ratio) {
    if (std::isnan(log_ratio)) return false;
    if (log_ratio >= 0.0) return true;
    return std::log(uniform01(rng)) < log_ratio;
}

} // namespace

Sampler::Sampler(ModelId model, const CaptureDataset& data, const PriorSpec& prior,
                 const McmcConfig& config, const std::optional<InitialState>& init)
    : model_(model), data_(&data), lik_(model, data), prior_(prior), config_(config),
      rng_(config.seed) {
    config_.validate();
    data.validate();
    if (!(prior_.R > 0.0)) throw std::invalid_argument("prior R must be positive");
    for (const Point& p : config_.s_support) {
        if (!data.space.contains(p)) throw std::invalid_argument("s_support point outside space");
    }
    const int M = data.M;
    stats_.resize(M);
    sq_dist_.assign(M, std::vector<double>(data.J));
    terms_.resize(M);
    terms_valid_.assign(M, 0);
    ll_.assign(M, 0.0);
    scratch_terms_.resize(M);
    scratch_ll_.assign(M, 0.0);
    scratch_sq_.resize(data.J);
    initialise(init);
}

double Sampler::theta_term(const ModelParams& params, int u) const {
    return u ? std::log(params.theta) : std::log1p(-params.theta);
}

double Sampler::eval(const ModelParams& params, const IndividualStats& st, const TrapTerms& terms,
                     int z, int u) const {
    if (config_.flat_likelihood) {
        return z && has_sex_covariate(model_) ? theta_term(params, u) : 0.0;
    }
    return individual_log_likelihood(model_, params, st, terms, z, u);
}

void Sampler::distances(Point s, std::vector<double>& out) const {
    const auto& traps = data_->traps.locations;
    for (std::size_t j = 0; j < traps.size(); ++j) out[j] = squared_distance(s, traps[j]);
}

void Sampler::refresh_terms(int i) {
    compute_trap_terms_sq(model_, params_, sigma_for(model_, params_, latent_.u[i]), data_->K,
                          sq_dist_[i], terms_[i]);
    terms_valid_[i] = 1;
}

void Sampler::refresh_all() {
    L_inv_ = inverse_permutation(latent_.L);
    for (int i = 0; i < data_->M; ++i) {
        pair_stats_into(*data_, lik_.index(), i, L_inv_[i], stats_[i]);
        distances(latent_.s[i], sq_dist_[i]);
        refresh_terms(i);
        ll_[i] = eval(params_, stats_[i], terms_[i], latent_.z[i], latent_.u[i]);
    }
}

Point Sampler::draw_centre() {
    if (!config_.s_support.empty()) {
        return config_.s_support[uniform_index(rng_, static_cast<int>(config_.s_support.size()))];
    }
    const StateSpace& sp = data_->space;
    return {sp.x_min + uniform01(rng_) * sp.width(), sp.y_min + uniform01(rng_) * sp.height()};
}

Point Sampler::propose_centre(Point s) {
    if (!config_.s_support.empty()) return draw_centre();
    const StateSpace& sp = data_->space;
    const double x = s.x + config_.scale_s * standard_normal(rng_);
    const double y = s.y + config_.scale_s * standard_normal(rng_);
    return {reflect(x, sp.x_min, sp.x_max), reflect(y, sp.y_min, sp.y_max)};
}

void Sampler::greedy_links() {
    const CaptureDataset& d = *data_;
    const CaptureIndex& index = lik_.index();
    const int M = d.M;
    const auto& traps = d.traps.locations;
    latent_.L.assign(M, -1);
    std::vector<char> used(M, 0);
    for (int r = 0; r < d.n_full; ++r) {
        latent_.L[r] = r;
        used[r] = 1;
    }

    double spacing = std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a < traps.size(); ++a) {
        for (std::size_t b = a + 1; b < traps.size(); ++b) {
            spacing = std::min(spacing, std::sqrt(squared_distance(traps[a], traps[b])));
        }
    }
    const double threshold = 2.0 * spacing;

    auto centroid = [&](std::span<const int> codes) {
        Point c;
        for (int code : codes) {
            c.x += traps[code / d.K].x;
            c.y += traps[code / d.K].y;
        }
        c.x /= codes.size();
        c.y /= codes.size();
        return c;
    };

    std::vector<std::tuple<double, int, int>> candidates;
    for (int r : index.partial_captured2()) {
        const Point c2 = centroid(index.row2(r));
        for (int i = d.n_full; i < M; ++i) {
            if (!index.captured1(i)) continue;
            const double dist = std::sqrt(squared_distance(c2, centroid(index.row1(i))));
            if (dist > threshold) continue;
            if (d.sex1[i] >= 0 && d.sex2[r] >= 0 && d.sex1[i] != d.sex2[r]) continue;
            if (pair_stats(d, index, i, r).link_conflict) continue;
            candidates.emplace_back(dist, r, i);
        }
    }
    std::sort(candidates.begin(), candidates.end());
    for (const auto& [dist, r, i] : candidates) {
        if (latent_.L[r] >= 0 || used[i]) continue;
        latent_.L[r] = i;
        used[i] = 1;
    }
    int next = d.n_full;
    for (int r : index.partial_captured2()) {
        if (latent_.L[r] >= 0) continue;
        while (next < M && (used[next] || index.captured1(next))) ++next;
        if (next == M) throw DataError("too few augmented rows to place every detector-2 history");
        latent_.L[r] = next;
        used[next] = 1;
    }
    next = 0;
    for (int r = 0; r < M; ++r) {
        if (latent_.L[r] >= 0) continue;
        while (used[next]) ++next;
        latent_.L[r] = next;
        used[next] = 1;
    }
}

void Sampler::initialise(const std::optional<InitialState>& init) {
    const CaptureDataset& d = *data_;
    const int M = d.M;
    const bool sex = has_sex_covariate(model_);
    if (init) {
        params_ = init->params;
        latent_ = init->latent;
        if (latent_.z.size() != static_cast<std::size_t>(M) ||
            latent_.u.size() != latent_.z.size() || latent_.s.size() != latent_.z.size() ||
            latent_.L.size() != latent_.z.size()) {
            throw std::invalid_argument("initial latent state does not have M entries");
        }
        if (!is_permutation(latent_.L)) throw InvariantError("initial L is not a bijection");
        refresh_all();
        const double lp = log_prior(model_, params_, prior_) +
                          log_latent_prior(model_, latent_, params_, d.space) + log_lik();
        if (!std::isfinite(lp)) throw NumericalError("supplied initial state has zero posterior density");
        return;
    }

    constexpr int kAttempts = 10;
    for (int attempt = 0; attempt < kAttempts; ++attempt) {
        params_ = ModelParams{};
        for (Param p : active_params(model_)) {
            if (is_scale_param(p)) params_.set(p, prior_.R / 2.0);
        }
        greedy_links();
        L_inv_ = inverse_permutation(latent_.L);
        latent_.z.assign(M, 0);
        latent_.u.assign(M, 0);
        latent_.s.assign(M, Point{});
        for (int i = 0; i < M; ++i) {
            const IndividualStats st = pair_stats(d, lik_.index(), i, L_inv_[i]);
            if (st.captured) {
                latent_.z[i] = 1;
                Point c;
                int n = 0;
                for (int code : lik_.index().row1(i)) {
                    c.x += d.traps.locations[code / d.K].x;
                    c.y += d.traps.locations[code / d.K].y;
                    ++n;
                }
                for (int code : lik_.index().row2(L_inv_[i])) {
                    c.x += d.traps.locations[code / d.K].x;
                    c.y += d.traps.locations[code / d.K].y;
                    ++n;
                }
                c.x /= n;
                c.y /= n;
                if (attempt > 0) c = propose_centre(c);
                if (!config_.s_support.empty()) {
                    c = *std::min_element(config_.s_support.begin(), config_.s_support.end(),
                                          [&](Point a, Point b) {
                                              return squared_distance(a, c) < squared_distance(b, c);
                                          });
                }
                latent_.s[i] = c;
            } else {
                latent_.z[i] = bernoulli(rng_, 0.5 * params_.psi) ? 1 : 0;
                latent_.s[i] = draw_centre();
            }
            if (sex) {
                latent_.u[i] = st.observed_sex >= 0
                                   ? static_cast<std::uint8_t>(st.observed_sex)
                                   : (bernoulli(rng_, params_.theta) ? 1 : 0);
            }
        }
        refresh_all();
        const double lp = log_prior(model_, params_, prior_) +
                          log_latent_prior(model_, latent_, params_, d.space) + log_lik();
        if (std::isfinite(lp)) return;
    }
    throw NumericalError("could not find an initial state with positive posterior density after " +
                         std::to_string(kAttempts) + " attempts");
}

double Sampler::log_lik() const {
    double sum = 0.0;
    for (double v : ll_) sum += v;
    return sum;
}

Draw Sampler::snapshot() const {
    Draw d;
    d.params = params_;
    d.latent = latent_;
    d.log_lik = log_lik();
    d.log_prior = log_prior(model_, params_, prior_);
    d.log_latent_prior = log_latent_prior(model_, latent_, params_, data_->space);
    d.individual_log_lik = ll_;
    return d;
}

void Sampler::step() {
    if (config_.update_scalars) update_scalars();
    if (config_.update_z) update_z();
    if (config_.update_u && has_sex_covariate(model_)) update_u();
    if (config_.update_s) update_s();
    if (config_.update_l) update_l();
}

void Sampler::update_scalars() {
    const int M = data_->M;
    for (Param p : active_params(model_)) {
        if (p == Param::psi) {
            const int N = latent_.population_size();
            params_.psi = beta_draw(rng_, 1.0 + N, 1.0 + M - N);
        } else if (p == Param::theta) {
            const int males = static_cast<int>(std::count(latent_.u.begin(), latent_.u.end(), 1));
            const double old = params_.theta;
            params_.theta = beta_draw(rng_, 1.0 + males, 1.0 + M - males);
            if (!(params_.theta > 0.0 && params_.theta < 1.0)) {
                params_.theta = old;
                continue;
            }
            for (int i = 0; i < M; ++i) {
                if (latent_.z[i]) {
                    ll_[i] = eval(params_, stats_[i], terms_[i], 1, latent_.u[i]);
                }
            }
        } else {
            update_rw(p);
        }
    }
}

void Sampler::update_rw(Param p) {
    const bool scale = is_scale_param(p);
    const double upper = scale ? prior_.R : 1.0;
    const double old = params_.get(p);
    const double x = logit(old / upper);
    const double x_new = x + (scale ? config_.scale_sigma : config_.scale_prob) * standard_normal(rng_);
    const double v = upper * expit(x_new);
    MoveStats& stats = acceptance_.of(p);
    ++stats.attempts;
    if (!(v > 0.0 && v < upper)) return;

    ModelParams proposal = params_;
    proposal.set(p, v);
    const bool sex = has_sex_covariate(model_);
    double ratio = log_logistic_density(x_new) - log_logistic_density(x);
    touched_.clear();
    for (int i = 0; i < data_->M; ++i) {
        if (!latent_.z[i]) continue;
        const int u = latent_.u[i];
        if (sex && ((p == Param::sigma_m && !u) || (p == Param::sigma_f && u))) continue;
        touched_.push_back(i);
        compute_trap_terms_sq(model_, proposal, sigma_for(model_, proposal, u), data_->K,
                              sq_dist_[i], scratch_terms_[i]);
        scratch_ll_[i] = eval(proposal, stats_[i], scratch_terms_[i], 1, u);
        ratio += scratch_ll_[i] - ll_[i];
        if (ratio == kNegInf) return;
    }
    if (!accept(rng_, ratio)) return;
    ++stats.accepts;
    params_ = proposal;
    for (int i : touched_) {
        std::swap(terms_[i], scratch_terms_[i]);
        ll_[i] = scratch_ll_[i];
    }
    for (int i = 0; i < data_->M; ++i) {
        if (!latent_.z[i]) terms_valid_[i] = 0;
    }
}

void Sampler::update_z() {
    const bool sex = has_sex_covariate(model_);
    const double log_psi = std::log(params_.psi);
    const double log_not_psi = std::log1p(-params_.psi);
    for (int i = 0; i < data_->M; ++i) {
        if (!config_.flat_likelihood && stats_[i].captured) continue;
        if (!terms_valid_[i]) refresh_terms(i);
        const int u = latent_.u[i];
        const double l1 = eval(params_, stats_[i], terms_[i], 1, u);
        const double l0 = eval(params_, stats_[i], terms_[i], 0, u);
        const double w1 = log_psi + l1;
        const double w0 = log_not_psi + (sex ? theta_term(params_, u) : 0.0) + l0;
        const int z = bernoulli(rng_, two_point(w1, w0)) ? 1 : 0;
        latent_.z[i] = static_cast<std::uint8_t>(z);
        ll_[i] = z ? l1 : l0;
    }
}

void Sampler::update_u() {
    for (int i = 0; i < data_->M; ++i) {
        if (!config_.flat_likelihood && stats_[i].observed_sex >= 0) continue;
        if (!latent_.z[i]) {
            const std::uint8_t u = bernoulli(rng_, params_.theta) ? 1 : 0;
            if (u != latent_.u[i]) {
                latent_.u[i] = u;
                terms_valid_[i] = 0;
            }
            continue;
        }
        const int other = 1 - latent_.u[i];
        compute_trap_terms_sq(model_, params_, sigma_for(model_, params_, other), data_->K,
                              sq_dist_[i], scratch_terms_[i]);
        const double l_other = eval(params_, stats_[i], scratch_terms_[i], 1, other);
        if (bernoulli(rng_, two_point(l_other, ll_[i]))) {
            latent_.u[i] = static_cast<std::uint8_t>(other);
            std::swap(terms_[i], scratch_terms_[i]);
            ll_[i] = l_other;
        }
    }
}

void Sampler::update_s() {
    for (int i = 0; i < data_->M; ++i) {
        if (!latent_.z[i]) {
            latent_.s[i] = draw_centre();
            distances(latent_.s[i], sq_dist_[i]);
            terms_valid_[i] = 0;
            continue;
        }
        const Point s = propose_centre(latent_.s[i]);
        distances(s, scratch_sq_);
        const int u = latent_.u[i];
        compute_trap_terms_sq(model_, params_, sigma_for(model_, params_, u), data_->K,
                              scratch_sq_, scratch_terms_[i]);
        const double nl = eval(params_, stats_[i], scratch_terms_[i], 1, u);
        ++acceptance_.s.attempts;
        if (!accept(rng_, nl - ll_[i])) continue;
        ++acceptance_.s.accepts;
        latent_.s[i] = s;
        std::swap(sq_dist_[i], scratch_sq_);
        std::swap(terms_[i], scratch_terms_[i]);
        ll_[i] = nl;
    }
}

void Sampler::update_l() {
    const auto movable = lik_.index().partial_captured2();
    const int partial_rows = data_->M - data_->n_full;
    if (movable.empty() || partial_rows < 2) return;
    const int swaps = config_.l_swaps > 0 ? config_.l_swaps : 2 * data_->M;
    for (int t = 0; t < swaps; ++t) {
        const int r1 = movable[uniform_index(rng_, static_cast<int>(movable.size()))];
        int r2 = data_->n_full + uniform_index(rng_, partial_rows - 1);
        if (r2 >= r1) ++r2;
        propose_swap(r1, r2);
    }
}

bool Sampler::propose_swap(int r1, int r2) {
    if (r1 == r2) return false;
    const int i1 = latent_.L[r1];
    const int i2 = latent_.L[r2];
    ++acceptance_.l.attempts;
    const CaptureIndex& index = lik_.index();
    if (!config_.flat_likelihood) {
        if ((index.captured2(r1) && !latent_.z[i2]) || (index.captured2(r2) && !latent_.z[i1])) {
            return false;
        }
    }
    pair_stats_into(*data_, index, i1, r2, scratch_a_);
    pair_stats_into(*data_, index, i2, r1, scratch_b_);
    if (latent_.z[i1] && !terms_valid_[i1]) refresh_terms(i1);
    if (latent_.z[i2] && !terms_valid_[i2]) refresh_terms(i2);
    const double n1 = eval(params_, scratch_a_, terms_[i1], latent_.z[i1], latent_.u[i1]);
    const double n2 = eval(params_, scratch_b_, terms_[i2], latent_.z[i2], latent_.u[i2]);
    if (n1 == kNegInf || n2 == kNegInf) return false;
    if (!accept(rng_, (n1 - ll_[i1]) + (n2 - ll_[i2]))) return false;
    ++acceptance_.l.accepts;
    latent_.L[r1] = i2;
    latent_.L[r2] = i1;
    L_inv_[i1] = r2;
    L_inv_[i2] = r1;
    std::swap(stats_[i1], scratch_a_);
    std::swap(stats_[i2], scratch_b_);
    ll_[i1] = n1;
    ll_[i2] = n2;
    return true;
}

Chain fit(ModelId model, const CaptureDataset& data, const PriorSpec& prior,
          const McmcConfig& config, const std::optional<InitialState>& init) {
    config.validate();
    Sampler sampler(model, data, prior, config, init);
    Chain chain;
    chain.model = model;
    chain.config = config;
    chain.prior = prior;
    chain.draws.reserve((config.n_iter - config.burn_in + config.thin - 1) / config.thin);
    for (int it = 0; it < config.n_iter; ++it) {
        sampler.step();
        if (it >= config.burn_in && (it - config.burn_in) % config.thin == 0) {
            chain.draws.push_back(sampler.snapshot());
        }
    }
    chain.acceptance = sampler.acceptance();
    return chain;
}

} // namespace secrms
