#include "doctest.h"

#include <cmath>

#include "oracle.h"
#include "secrms/mcmc.h"
#include "secrms/simulate.h"

using namespace secrms;

namespace {

SimulatedData small_data(std::uint64_t seed) {
    Scenario s{9, 40, 15, 6, 0.3, 0.7, 0.4, 0.25};
    return simulate_dataset(s, make_design(2.0, 2.0, 0.5, 3, 3, 5, 0.25), seed);
}

McmcConfig short_config(std::uint64_t seed) {
    McmcConfig c;
    c.n_iter = 600;
    c.burn_in = 100;
    c.seed = seed;
    return c;
}

InitialState validation_init() {
    InitialState init;
    init.params = oracle::validation_params();
    init.latent.z = {1, 1, 1};
    init.latent.u = {1, 0, 0};
    init.latent.s = {{0.25, 0.25}, {0.75, 0.75}, {0.25, 0.75}};
    init.latent.L = {1, 0, 2};
    return init;
}

} // namespace

TEST_CASE("config validation") {
    McmcConfig c;
    CHECK_NOTHROW(c.validate());
    c.burn_in = c.n_iter;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = McmcConfig{};
    c.scale_s = 0.0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = McmcConfig{};
    c.thin = 0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("chain bookkeeping") {
    const auto sim = small_data(3);
    const PriorSpec prior{2.0};
    for (ModelId m : kAllModels) {
        McmcConfig c = short_config(11);
        c.thin = 3;
        const Chain chain = fit(m, sim.data, prior, c);
        CHECK(chain.size() == 167);
        const Likelihood lik(m, sim.data);
        for (const Draw& d : chain.draws) {
            CHECK(d.log_lik == lik.total(d.params, d.latent));
            CHECK(d.log_prior == log_prior(m, d.params, prior));
            CHECK(d.log_latent_prior == log_latent_prior(m, d.latent, d.params, sim.data.space));
            CHECK(d.individual_log_lik == lik.per_individual(d.params, d.latent));
            CHECK(std::isfinite(d.log_posterior()));
            CHECK(is_permutation(d.latent.L));
            for (int r = 0; r < sim.data.n_full; ++r) CHECK(d.latent.L[r] == r);
            for (int i = 0; i < sim.data.M; ++i) {
                CHECK(sim.data.space.contains(d.latent.s[i]));
                if (!has_sex_covariate(m)) CHECK(d.latent.u[i] == 0);
            }
            for (Param p : kAllParams) {
                if (!is_active(m, p)) CHECK(d.params.get(p) == chain.draws.front().params.get(p));
            }
        }
    }
}

TEST_CASE("fit is deterministic in the seed") {
    const auto sim = small_data(5);
    const Chain a = fit(ModelId::M1, sim.data, PriorSpec{2.0}, short_config(21));
    const Chain b = fit(ModelId::M1, sim.data, PriorSpec{2.0}, short_config(21));
    const Chain c = fit(ModelId::M1, sim.data, PriorSpec{2.0}, short_config(22));
    REQUIRE(a.size() == b.size());
    bool differs = false;
    for (std::size_t d = 0; d < a.size(); ++d) {
        CHECK(a.draws[d].params == b.draws[d].params);
        CHECK(a.draws[d].latent == b.draws[d].latent);
        differs |= !(a.draws[d].params == c.draws[d].params);
    }
    CHECK(differs);
}

TEST_CASE("supplied initial state must have positive density") {
    const CaptureDataset d = oracle::validation_instance();
    InitialState init = validation_init();
    init.latent.L = {0, 1, 2};
    McmcConfig c = short_config(1);
    CHECK_THROWS_AS(fit(ModelId::M1, d, PriorSpec{2.0}, c, init), NumericalError);
    init = validation_init();
    init.latent.L = {0, 0, 2};
    CHECK_THROWS_AS(fit(ModelId::M1, d, PriorSpec{2.0}, c, init), InvariantError);
}

TEST_CASE("flat likelihood samples the prior") {
    const auto sim = small_data(8);
    McmcConfig c;
    c.n_iter = 12000;
    c.burn_in = 1000;
    c.flat_likelihood = true;
    c.seed = 4;
    const double R = 2.0;
    const Chain chain = fit(ModelId::M1, sim.data, PriorSpec{R}, c);
    double psi = 0, phi = 0, sm = 0, n = 0, x = 0, males = 0, theta = 0;
    for (const Draw& d : chain.draws) {
        psi += d.params.psi;
        phi += d.params.phi;
        sm += d.params.sigma_m;
        theta += d.params.theta;
        n += d.latent.population_size();
        x += d.latent.s[0].x;
        males += d.latent.u[1];
    }
    const double k = static_cast<double>(chain.size());
    CHECK(psi / k == doctest::Approx(0.5).epsilon(0.12));
    CHECK(phi / k == doctest::Approx(0.5).epsilon(0.12));
    CHECK(theta / k == doctest::Approx(0.5).epsilon(0.12));
    CHECK(sm / k == doctest::Approx(R / 2).epsilon(0.12));
    CHECK(n / k == doctest::Approx(sim.data.M * 0.5).epsilon(0.12));
    CHECK(x / k == doctest::Approx(1.0).epsilon(0.12));
    CHECK(males / k == doctest::Approx(0.5).epsilon(0.12));
}

TEST_CASE("N follows Binomial(M, psi) with psi fixed and a flat likelihood") {
    const auto sim = small_data(8);
    McmcConfig c;
    c.n_iter = 5000;
    c.burn_in = 100;
    c.flat_likelihood = true;
    c.update_scalars = false;
    c.seed = 9;
    InitialState init;
    init.params.psi = 0.3;
    init.latent.z.assign(40, 0);
    init.latent.u.assign(40, 0);
    init.latent.s.assign(40, Point{1.0, 1.0});
    init.latent.L.resize(40);
    for (int i = 0; i < 40; ++i) init.latent.L[i] = i;
    const Chain chain = fit(ModelId::M3, sim.data, PriorSpec{2.0}, c, init);
    double n = 0;
    for (const Draw& d : chain.draws) n += d.latent.population_size();
    n /= chain.size();
    // draws of z are exact independent Gibbs draws under a flat likelihood
    CHECK(std::abs(n - 12.0) < 3.0 * std::sqrt(40 * 0.3 * 0.7 / chain.size()));
}

TEST_CASE("sampler matches enumeration on the validation instance") {
    const CaptureDataset d = oracle::validation_instance();
    const auto support = oracle::validation_support();
    for (ModelId m : {ModelId::M1, ModelId::M4}) {
        const auto exact = oracle::enumerate_posterior(m, d, oracle::validation_params(), support);
        McmcConfig c;
        c.n_iter = 30000;
        c.burn_in = 1000;
        c.update_scalars = false;
        c.s_support = support;
        c.seed = 17;
        InitialState init = validation_init();
        if (!has_sex_covariate(m)) init.latent.u = {0, 0, 0};
        Sampler s(m, d, PriorSpec{2.0}, c, init);
        std::map<std::vector<int>, double> freq;
        for (int it = 0; it < c.n_iter; ++it) {
            s.step();
            if (it >= c.burn_in) freq[oracle::state_key(d, s.latent())] += 1.0 / (c.n_iter - c.burn_in);
        }
        CHECK(oracle::total_variation(exact, freq) < 0.05);
    }
}

TEST_CASE("captured rows never leave the population") {
    const auto sim = small_data(12);
    const Chain chain = fit(ModelId::M2, sim.data, PriorSpec{2.0}, short_config(3));
    const CaptureIndex idx(sim.data);
    for (const Draw& d : chain.draws) {
        const auto inv = inverse_permutation(d.latent.L);
        for (int i = 0; i < sim.data.M; ++i) {
            if (idx.captured1(i) || idx.captured2(inv[i])) CHECK(d.latent.z[i] == 1);
        }
    }
}

TEST_CASE("acceptance counters") {
    const auto sim = small_data(3);
    const Chain chain = fit(ModelId::M3, sim.data, PriorSpec{2.0}, short_config(2));
    CHECK(chain.acceptance.of(Param::phi).attempts == 600);
    CHECK(chain.acceptance.of(Param::sigma).rate() > 0.0);
    CHECK(chain.acceptance.of(Param::sigma).rate() <= 1.0);
    CHECK(chain.acceptance.of(Param::theta).attempts == 0);
}
