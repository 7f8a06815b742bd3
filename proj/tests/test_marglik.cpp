#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "oracle.h"
#include "secrms/marglik.h"
#include "secrms/simulate.h"

using namespace secrms;

namespace {

Eigen::MatrixXd as_matrix(const std::vector<double>& x, int cols) {
    Eigen::MatrixXd m(static_cast<Eigen::Index>(x.size() / cols), cols);
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (int c = 0; c < cols; ++c) m(r, c) = x[r * cols + c];
    }
    return m;
}

struct Fitted {
    SimulatedData sim;
    Chain chain;
};

Fitted small_fit(ModelId m, std::uint64_t seed) {
    Scenario s{9, 40, 15, 6, 0.3, 0.7, 0.4, 0.25};
    Fitted f{simulate_dataset(s, make_design(2.0, 2.0, 0.5, 3, 3, 5, 0.25), seed), {}};
    McmcConfig c;
    c.n_iter = 1500;
    c.burn_in = 300;
    c.seed = seed + 1;
    f.chain = fit(m, f.sim.data, PriorSpec{2.0}, c);
    return f;
}

} // namespace

TEST_CASE("tuning names") {
    const auto& v = tuning_variants();
    REQUIRE(v.size() == 9);
    std::vector<std::string> names;
    for (const auto& s : v) names.push_back(s.name());
    CHECK(names == std::vector<std::string>{"normal", "t10", "t100", "t500", "t1000", "t10000", "tn0.90", "tn0.95",
                                            "tn0.99"});
    for (const auto& s : v) CHECK(parse_tuning(s.name()) == s);
    CHECK_THROWS(parse_tuning("t3x"));
}

TEST_CASE("tuning densities against closed forms") {
    Eigen::VectorXd mu(2);
    mu << 0.3, -1.0;
    Eigen::MatrixXd cov(2, 2);
    cov << 1.5, 0.4, 0.4, 0.8;
    const double det = 1.5 * 0.8 - 0.4 * 0.4;
    auto quad = [&](const Eigen::VectorXd& x) {
        const double a = x[0] - mu[0], b = x[1] - mu[1];
        return (0.8 * a * a - 2 * 0.4 * a * b + 1.5 * b * b) / det;
    };
    const TuningDensity normal({TuningKind::normal, 0, 0}, mu, cov);
    const TuningDensity tn({TuningKind::truncated_normal, 0, 0.9}, mu, cov);
    const TuningDensity tn99({TuningKind::truncated_normal, 0, 0.99}, mu, cov);
    Rng rng(2);
    for (int k = 0; k < 50; ++k) {
        Eigen::VectorXd x(2);
        x << mu[0] + 3 * standard_normal(rng), mu[1] + 3 * standard_normal(rng);
        const double q = quad(x);
        const double want = -std::log(2 * std::numbers::pi) - 0.5 * std::log(det) - 0.5 * q;
        CHECK(normal.log_density(x) == doctest::Approx(want).epsilon(1e-12));
        // in two dimensions the chi-square quantile is -2 log(1 - alpha)
        if (q <= -2 * std::log(0.1)) {
            CHECK(tn.log_density(x) == doctest::Approx(want - std::log(0.9)).epsilon(1e-12));
        } else {
            CHECK(tn.log_density(x) == -std::numeric_limits<double>::infinity());
        }
        for (double df : {10.0, 1000.0}) {
            const double s = (df - 2) / df;
            const double tw = std::lgamma((df + 2) / 2) - std::lgamma(df / 2) - std::log(df * std::numbers::pi) -
                              0.5 * std::log(det * s * s) - (df + 2) / 2 * std::log1p(q / s / df);
            CHECK(TuningDensity({TuningKind::student_t, df, 0}, mu, cov).log_density(x) ==
                  doctest::Approx(tw).epsilon(1e-10));
        }
        if (q < 6.0) {
            CHECK(std::abs(TuningDensity({TuningKind::student_t, 10000, 0}, mu, cov).log_density(x) -
                           normal.log_density(x)) < 1e-3);
        }
    }
    CHECK(tn99.log_density(mu) == doctest::Approx(normal.log_density(mu) - std::log(0.99)).epsilon(1e-14));
    CHECK_THROWS_AS(TuningDensity({TuningKind::student_t, 2, 0}, mu, cov), std::invalid_argument);
}

TEST_CASE("fit_tuning recovers sample moments and regularises singular covariances") {
    Rng rng(3);
    const int n = 20000;
    Eigen::MatrixXd x(n, 2);
    for (int r = 0; r < n; ++r) {
        x(r, 0) = 1.0 + 2.0 * standard_normal(rng);
        x(r, 1) = -0.5 + 0.5 * standard_normal(rng);
    }
    const TuningDensity g = fit_tuning(x, {});
    CHECK(std::abs(g.location()[0] - 1.0) < 3 * 2.0 / std::sqrt(n));
    CHECK(std::abs(g.location()[1] + 0.5) < 3 * 0.5 / std::sqrt(n));
    CHECK(g.ridge() == 0.0);

    Eigen::MatrixXd flat(10, 2);
    for (int r = 0; r < 10; ++r) flat(r, 0) = flat(r, 1) = r;
    const TuningDensity h = fit_tuning(flat, {});
    CHECK(h.ridge() > 0.0);
    CHECK(std::isfinite(h.log_density(flat.row(3).transpose())));
    CHECK_THROWS_AS(fit_tuning(Eigen::MatrixXd(3, 2), {}), std::invalid_argument);
}

TEST_CASE("parameter transformation") {
    const PriorSpec prior{3.0};
    ModelParams p;
    p.psi = 0.2;
    p.theta = 0.7;
    p.phi = 0.4;
    p.omega0 = 0.05;
    p.sigma_m = 0.9;
    p.sigma_f = 0.2;
    const Eigen::VectorXd x = transform_params(ModelId::M1, p, prior);
    CHECK(x.size() == 6);
    const ModelParams back = untransform_params(ModelId::M1, x, prior);
    for (Param q : active_params(ModelId::M1)) CHECK(back.get(q) == doctest::Approx(p.get(q)).epsilon(1e-13));
    CHECK(x[4] == doctest::Approx(std::log(0.3 / 0.7)));

    // a uniform prior pushed through the logit has the logistic density: integrates to one
    double area = 0.0;
    const double h = 1e-3;
    for (double t = -40.0; t < 40.0; t += h) {
        Eigen::VectorXd v(1);
        v << t + h / 2;
        area += std::exp(log_transformed_prior(v)) * h;
    }
    CHECK(std::abs(area - 1.0) < 1e-6);
    // and the density of logit(sigma / R) at x is R-independent: P(sigma < R expit(x)) = expit(x)
    double cdf = 0.0;
    for (double t = -40.0; t < 0.7; t += h) {
        Eigen::VectorXd v(1);
        v << std::min(t + h / 2, 0.7);
        cdf += std::exp(log_transformed_prior(v)) * std::min(h, 0.7 - t);
    }
    CHECK(std::abs(cdf - expit(0.7)) < 1e-6);
}

TEST_CASE("generic estimator arithmetic") {
    const std::vector<double> c(5, std::log(3.0)), zero(5, 0.0);
    CHECK(gelfand_dey(c, zero, zero, MarglikMethod::hm, "").value == doctest::Approx(std::log(3.0)).epsilon(1e-15));
    const double cc = 2.0;
    const std::vector<double> two{std::log(cc), std::log(cc / 2)}, z2(2, 0.0);
    CHECK(gelfand_dey(two, z2, z2, MarglikMethod::hm, "").value == doctest::Approx(std::log(2 * cc / 3)).epsilon(1e-14));

    std::vector<double> f(200, 0.0), g(200, 0.0);
    f[0] = std::nan("");
    f[1] = std::nan("");
    f[2] = std::numeric_limits<double>::infinity(); // exact zero of the summand
    LogMarginal m = gelfand_dey(f, g, g, MarglikMethod::gd_map, "normal");
    CHECK(m.dropped == 2);
    CHECK(m.used == 198);
    CHECK_FALSE(m.unreliable);
    CHECK(m.value == doctest::Approx(std::log(198.0 / 197.0)));
    f[3] = -std::numeric_limits<double>::infinity();
    m = gelfand_dey(f, g, g, MarglikMethod::gd_map, "normal");
    CHECK(m.dropped == 3);
    CHECK(m.unreliable);

    const std::vector<double> bad(4, std::nan(""));
    const std::vector<double> z4(4, 0.0);
    try {
        gelfand_dey(bad, z4, z4, MarglikMethod::gd_il, "t500");
        CHECK(false);
    } catch (const NumericalError& e) {
        CHECK(std::string(e.what()).find("t500") != std::string::npos);
    }
}

TEST_CASE("estimators agree with the toy posterior") {
    Rng rng(101);
    for (const std::vector<double>& c : {std::vector<double>{1.0, 1.0, 1.0, 1.0}, std::vector<double>{0.5, 1.0, 2.0, 4.0}}) {
        const auto toy = oracle::toy_sample(rng, 20000, c);
        const Eigen::MatrixXd x = as_matrix(toy.x, 2);
        std::vector<double> lp(toy.log_f.size());
        for (Eigen::Index r = 0; r < x.rows(); ++r) lp[r] = log_transformed_prior(x.row(r).transpose());
        const LogMarginal hm = gelfand_dey(toy.log_f, lp, lp, MarglikMethod::hm, "");
        CHECK(std::abs(hm.value - toy.exact) < 3 * hm.mc_se);
        for (const TuningSpec& spec : tuning_variants()) {
            const TuningDensity g = fit_tuning(x, spec);
            const LogMarginal il = gelfand_dey(toy.log_f_il, x, g, MarglikMethod::gd_il);
            const LogMarginal mp = gelfand_dey(toy.log_f_map, x, g, MarglikMethod::gd_map);
            CHECK(std::abs(il.value - toy.exact) < 3 * il.mc_se);
            CHECK(std::abs(mp.value - toy.exact_map) < 3 * mp.mc_se);
            CHECK(il.mc_se < 0.05);
        }
    }
}

TEST_CASE("GD-MAP with prior tuning is the harmonic mean") {
    for (ModelId m : kAllModels) {
        const Fitted f = small_fit(m, 31 + static_cast<int>(m));
        const MapEstimate map = map_refine(f.chain, f.sim.data);
        const TuningDensity prior_g({TuningKind::prior, 0, 0}, Eigen::VectorXd::Zero(active_params(m).size()),
                                    Eigen::MatrixXd::Identity(active_params(m).size(), active_params(m).size()));
        const LogMarginal a = gd_map(f.chain, f.sim.data, prior_g, map);
        const LogMarginal b = harmonic_mean(f.chain);
        CHECK(a.value == b.value);
        CHECK(std::isfinite(b.value));
    }
}

TEST_CASE("map_refine") {
    const Fitted f = small_fit(ModelId::M1, 5);
    const MapEstimate map = map_refine(f.chain, f.sim.data);
    double best = -std::numeric_limits<double>::infinity();
    for (const Draw& d : f.chain.draws) best = std::max(best, d.log_posterior());
    CHECK(map.achieved >= best);
    CHECK(map.n_rounds >= 1);
    const Likelihood lik(ModelId::M1, f.sim.data);
    CHECK(map.log_lik == lik.total(map.params, map.latent));
    CHECK(map.achieved == doctest::Approx(map.log_lik + log_prior(ModelId::M1, map.params, f.chain.prior) +
                                          log_latent_prior(ModelId::M1, map.latent, map.params, f.sim.data.space)));
    const auto lls = map_log_likelihoods(f.chain, f.sim.data, map);
    for (std::size_t d = 0; d < f.chain.size(); d += 50) {
        CHECK(lls[d] == lik.total(f.chain.draws[d].params, map.latent));
    }

    Chain one = f.chain;
    one.draws.resize(1);
    const MapEstimate single = map_refine(one, f.sim.data);
    CHECK(single.n_rounds == 1);
    CHECK(single.params == one.draws[0].params);
    CHECK(single.latent == one.draws[0].latent);
}

TEST_CASE("map_refine finds a cross-paired mode") {
    const Fitted f = small_fit(ModelId::M3, 8);
    const Likelihood lik(ModelId::M3, f.sim.data);
    // Take two draws and evaluate all four pairings directly.
    Chain two = f.chain;
    two.draws = {f.chain.draws[10], f.chain.draws[900]};
    auto joint = [&](const ModelParams& p, const LatentState& l) {
        return lik.total(p, l) + log_prior(ModelId::M3, p, two.prior) +
               log_latent_prior(ModelId::M3, l, p, f.sim.data.space);
    };
    double best = -std::numeric_limits<double>::infinity();
    for (const Draw& a : two.draws) {
        for (const Draw& b : two.draws) best = std::max(best, joint(a.params, b.latent));
    }
    const MapEstimate map = map_refine(two, f.sim.data);
    CHECK(map.achieved == doctest::Approx(best).epsilon(1e-12));
}

TEST_CASE("integration grid") {
    const auto g = integration_grid(StateSpace{0, 1, 0, 2, 0.5});
    CHECK(g.size() == 8);
    CHECK(g.front() == Point{0.25, 0.25});
    CHECK(g.back() == Point{0.75, 1.75});
    CHECK_THROWS_AS(integration_grid(StateSpace{0, 1, 0, 1, 0.3}), std::invalid_argument);
}

TEST_CASE("integrated likelihood matches enumeration") {
    Rng rng(55);
    const std::vector<Point> cells{{0.25, 0.25}, {0.25, 0.75}, {0.75, 0.25}, {0.75, 0.75}};
    int finite = 0;
    for (int rep = 0; rep < 60; ++rep) {
        const int M = 1 + uniform_index(rng, 3);
        const auto micro = oracle::random_micro(rng, M, 1 + uniform_index(rng, 2), 1 + uniform_index(rng, 2), rep % 2);
        for (ModelId m : kAllModels) {
            const double got = integrated_log_likelihood(m, micro.data, micro.params, micro.latent.L, micro.data.space);
            const double want = oracle::integrated_log_likelihood(m, micro.data, micro.params, micro.latent.L, cells);
            if (std::isinf(want)) {
                CHECK(got == want);
            } else {
                ++finite;
                CHECK(got == doctest::Approx(want).epsilon(1e-10));
                CHECK(std::abs(got - want) < 1e-8);
            }
        }
    }
    CHECK(finite > 60);
}

TEST_CASE("integrated likelihood of a single uncaptured M4 row") {
    CaptureDataset d = CaptureDataset::empty(1, 3, StateSpace{0, 1, 0, 1, 0.5}, TrapGrid{{{0.3, 0.6}}});
    ModelParams p;
    p.psi = 0.3;
    p.p0 = 0.4;
    p.sigma = 0.35;
    double avg = 0.0;
    for (Point s : integration_grid(d.space)) {
        avg += std::pow(1 - detection_prob(0.4, 0.35, std::sqrt(squared_distance(s, {0.3, 0.6}))), 6) / 4;
    }
    CHECK(integrated_log_likelihood(ModelId::M4, d, p, std::vector<int>{0}, d.space) ==
          doctest::Approx(std::log(0.7 + 0.3 * avg)).epsilon(1e-13));
}

TEST_CASE("integrated likelihood converges under grid refinement") {
    Rng rng(8);
    auto micro = oracle::random_micro(rng, 3, 2, 2, false);
    micro.params.sigma = 0.25;
    std::vector<double> values;
    for (double res : {0.5, 0.25, 0.125, 0.0625, 0.03125}) {
        StateSpace s = micro.data.space;
        s.grid_resolution = res;
        values.push_back(integrated_log_likelihood(ModelId::M3, micro.data, micro.params, micro.latent.L, s));
    }
    for (std::size_t k = 2; k < values.size(); ++k) {
        CHECK(std::abs(values[k] - values[k - 1]) < std::abs(values[k - 1] - values[k - 2]));
    }
}

TEST_CASE("estimators are invariant to draw order") {
    Fitted f = small_fit(ModelId::M4, 13);
    const auto il = integrated_log_likelihoods(f.chain, f.sim.data, f.sim.data.space);
    const TuningDensity g = fit_tuning(f.chain, {});
    const LogMarginal a = gd_il(f.chain, il, g);
    const LogMarginal hm_a = harmonic_mean(f.chain);
    std::reverse(f.chain.draws.begin(), f.chain.draws.end());
    const auto il2 = integrated_log_likelihoods(f.chain, f.sim.data, f.sim.data.space);
    const LogMarginal b = gd_il(f.chain, il2, fit_tuning(f.chain, {}));
    CHECK(std::abs(a.value - b.value) < 1e-9);
    CHECK(std::abs(hm_a.value - harmonic_mean(f.chain).value) < 1e-9);
    CHECK(bayes_factor(a, a) == 0.0);
}
