#include "doctest.h"

#include <cmath>

#include "oracle.h"
#include "secrms/model.h"

using namespace secrms;

namespace {

long double kernel(long double base, long double sigma, long double d) {
    return base * std::exp(-d * d / (2.0L * sigma * sigma));
}

bool same(double a, double b, double tol) {
    if (std::isinf(a) || std::isinf(b)) return a == b;
    return std::abs(a - b) <= tol;
}

} // namespace

TEST_CASE("trap entry and detection kernels") {
    CHECK(trap_entry_prob(0.05, 0.3, 0.0) == 0.05);
    CHECK(trap_entry_prob(0.05, 0.3, 0.3) == doctest::Approx(double(kernel(0.05L, 0.3L, 0.3L))).epsilon(1e-14));
    CHECK(trap_entry_prob(0.05, 0.3, 0.3) == doctest::Approx(0.0303265).epsilon(1e-6));
    CHECK(trap_entry_prob(0.01, 0.15, 1e6) == 0.0);
    CHECK(detection_prob(0.3, 0.4, 0.0) == 0.3);
    CHECK(detection_prob(0.3, 0.4, 0.4) == doctest::Approx(0.1819592).epsilon(1e-6));
    CHECK(detection_prob(0.3, 0.4, 4.0) == doctest::Approx(double(kernel(0.3L, 0.4L, 4.0L))).epsilon(1e-12));
    CHECK(detection_prob(0.3, 0.4, 4.0) < 1e-20);
    CHECK_THROWS_AS(trap_entry_prob(1.5, 0.3, 0.1), std::invalid_argument);
    CHECK_THROWS_AS(detection_prob(0.3, -1.0, 0.1), std::invalid_argument);
    CHECK_THROWS_AS(detection_prob(0.3, 0.4, -0.1), std::invalid_argument);
    double prev = 1.0;
    for (double d = 0.01; d < 3.0; d += 0.01) {
        const double v = detection_prob(0.3, 0.4, d);
        CHECK(v <= 0.3);
        CHECK(v <= prev);
        prev = v;
    }
}

TEST_CASE("reorder_by_permutation") {
    const int M = 3, J = 2, K = 2;
    Rng rng(3);
    std::vector<std::uint8_t> y(M * J * K);
    for (auto& v : y) v = bernoulli(rng, 0.5);
    const std::vector<int> id{0, 1, 2};
    CHECK(reorder_by_permutation(y, M, J, K, id) == y);

    const std::vector<int> L{2, 0, 1};
    const auto r = reorder_by_permutation(y, M, J, K, L);
    for (int row = 0; row < M; ++row) {
        for (int c = 0; c < J * K; ++c) CHECK(r[L[row] * J * K + c] == y[row * J * K + c]);
    }
    CHECK(reorder_by_permutation(r, M, J, K, inverse_permutation(L)) == y);

    const std::vector<std::uint8_t> two{1, 0};
    CHECK(reorder_by_permutation(two, 2, 1, 1, std::vector<int>{1, 0}) == std::vector<std::uint8_t>{0, 1});
    CHECK_THROWS_AS(reorder_by_permutation(y, M, J, K, std::vector<int>{0, 0, 1}), InvariantError);
}

TEST_CASE("single Bernoulli pair") {
    CaptureDataset d = CaptureDataset::empty(1, 1, StateSpace{0, 1, 0, 1, 0.5}, TrapGrid{{{0.5, 0.5}}});
    d.y1[0] = 1;
    ModelParams p;
    p.p0 = 0.4;
    p.sigma = 0.7;
    LatentState l{{1}, {0}, {{0.2, 0.9}}, {0}};
    const double q = detection_prob(0.4, 0.7, std::sqrt(0.09 + 0.16));
    CHECK(log_likelihood(ModelId::M4, d, p, l) == doctest::Approx(std::log(q * (1 - q))).epsilon(1e-13));
}

TEST_CASE("empty population has zero log-likelihood") {
    Rng rng(5);
    for (ModelId m : kAllModels) {
        CaptureDataset d = CaptureDataset::empty(3, 2, StateSpace{0, 1, 0, 1, 0.5}, TrapGrid{{{0.3, 0.3}}});
        LatentState l{{0, 0, 0}, {0, 1, 0}, {{0.1, 0.1}, {0.5, 0.5}, {0.9, 0.9}}, {0, 1, 2}};
        CHECK(log_likelihood(m, d, oracle::random_params(rng), l) == 0.0);
    }
}

TEST_CASE("log-likelihood matches the brute-force product on random micro instances") {
    Rng rng(20240611);
    int finite = 0;
    for (int rep = 0; rep < 200; ++rep) {
        const int M = 1 + uniform_index(rng, 3), J = 1 + uniform_index(rng, 2), K = 1 + uniform_index(rng, 2);
        const auto micro = oracle::random_micro(rng, M, J, K, rep % 2 == 0);
        for (ModelId m : kAllModels) {
            const double got = log_likelihood(m, micro.data, micro.params, micro.latent);
            const double want = oracle::log_likelihood(m, micro.data, micro.params, micro.latent);
            CHECK(same(got, want, 1e-10));
            finite += std::isfinite(want);
            double parts = 0.0;
            for (int i = 0; i < M; ++i) {
                const double a = per_individual_log_likelihood(m, micro.data, micro.params, micro.latent, i);
                CHECK(same(a, oracle::individual_log_likelihood(m, micro.data, micro.params, micro.latent, i), 1e-10));
                parts += a;
            }
            CHECK(same(parts, got, 1e-10));
        }
    }
    CHECK(finite > 200);
}

TEST_CASE("per-individual index out of range") {
    Rng rng(1);
    const auto micro = oracle::random_micro(rng, 2, 1, 1, false);
    CHECK_THROWS_AS(per_individual_log_likelihood(ModelId::M3, micro.data, micro.params, micro.latent, 2),
                    std::invalid_argument);
}

TEST_CASE("permutation invariance") {
    Rng rng(77);
    for (int rep = 0; rep < 50; ++rep) {
        const auto micro = oracle::random_micro(rng, 3, 2, 2, true);
        CaptureDataset moved = micro.data;
        moved.y2 = reorder_by_permutation(micro.data.y2, 3, 2, 2, micro.latent.L);
        for (int r = 0; r < 3; ++r) moved.sex2[micro.latent.L[r]] = micro.data.sex2[r];
        LatentState id = micro.latent;
        id.L = {0, 1, 2};
        for (ModelId m : kAllModels) {
            CHECK(same(log_likelihood(m, moved, micro.params, id),
                       log_likelihood(m, micro.data, micro.params, micro.latent), 0.0));
        }
    }
}

TEST_CASE("M1 with equal scales reduces to M3 apart from the sex factors") {
    Rng rng(99);
    for (int rep = 0; rep < 100; ++rep) {
        auto micro = oracle::random_micro(rng, 1 + uniform_index(rng, 3), 2, 2, false);
        ModelParams p = micro.params;
        p.sigma_m = p.sigma_f = p.sigma;
        double sex_terms = 0.0;
        for (int i = 0; i < micro.data.M; ++i) {
            if (micro.latent.z[i]) sex_terms += micro.latent.u[i] ? std::log(p.theta) : std::log(1 - p.theta);
        }
        const double m1 = oracle::log_likelihood(ModelId::M1, micro.data, p, micro.latent);
        const double m3 = log_likelihood(ModelId::M3, micro.data, p, micro.latent);
        if (std::isinf(m3)) {
            CHECK(m1 == m3);
        } else {
            CHECK(m1 - sex_terms == doctest::Approx(m3).epsilon(1e-12));
            CHECK(log_likelihood(ModelId::M1, micro.data, p, micro.latent) - sex_terms ==
                  doctest::Approx(m3).epsilon(1e-12));
        }
    }
}

TEST_CASE("degenerate probabilities give -inf instead of NaN") {
    CaptureDataset d = CaptureDataset::empty(1, 2, StateSpace{0, 1, 0, 1, 0.5}, TrapGrid{{{0.5, 0.5}}});
    d.y1[d.cell(0, 0, 0)] = 1;
    ModelParams p;
    p.p0 = 1.0;
    p.sigma = 0.5;
    LatentState l{{1}, {0}, {{0.5, 0.5}}, {0}};
    CHECK(log_likelihood(ModelId::M4, d, p, l) == -std::numeric_limits<double>::infinity());
    p.omega0 = 1.0;
    p.phi = 1.0;
    const double v = log_likelihood(ModelId::M3, d, p, l);
    CHECK_FALSE(std::isnan(v));
}

TEST_CASE("non-bijective L is an invariant error") {
    Rng rng(4);
    auto micro = oracle::random_micro(rng, 3, 1, 1, false);
    micro.latent.L = {0, 0, 1};
    CHECK_THROWS_AS(log_likelihood(ModelId::M4, micro.data, micro.params, micro.latent), InvariantError);
}

TEST_CASE("parameter priors") {
    ModelParams p;
    p.sigma = 1.0;
    PriorSpec prior{5.0};
    CHECK(log_prior(ModelId::M4, p, prior) == doctest::Approx(-std::log(5.0)));
    prior.R = 3.0;
    CHECK(log_prior(ModelId::M1, p, prior) == doctest::Approx(-2.0 * std::log(3.0)));
    p.sigma = 4.0;
    CHECK(log_prior(ModelId::M3, p, prior) == -std::numeric_limits<double>::infinity());
    p.sigma = 1.0;
    p.psi = 1.0;
    CHECK(log_prior(ModelId::M3, p, prior) == -std::numeric_limits<double>::infinity());
}

TEST_CASE("latent prior") {
    const StateSpace space{0, 2, 0, 3, 0.5};
    ModelParams p;
    p.psi = 0.25;
    LatentState one{{1}, {0}, {{1, 1}}, {0}};
    CHECK(log_latent_prior(ModelId::M3, one, p, space) == doctest::Approx(std::log(0.25) + std::log(1.0 / 6.0)));

    p.psi = 1.0;
    LatentState all{{1, 1}, {0, 1}, {{1, 1}, {0.5, 2}}, {0, 1}};
    CHECK(log_latent_prior(ModelId::M4, all, p, space) ==
          doctest::Approx(2 * std::log(1.0 / 6.0) - std::log(2.0)));

    // z-vectors of a 3-individual state sum to one once the S and L constants are removed
    p.psi = 0.37;
    p.theta = 0.6;
    double total = 0.0;
    for (int code = 0; code < 8; ++code) {
        LatentState l{{0, 0, 0}, {0, 1, 0}, {{1, 1}, {1, 1}, {1, 1}}, {0, 1, 2}};
        for (int i = 0; i < 3; ++i) l.z[i] = (code >> i) & 1;
        total += std::exp(log_latent_prior(ModelId::M4, l, p, space) + 3 * std::log(6.0) + std::lgamma(4.0));
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));

    LatentState outside{{1}, {0}, {{5, 1}}, {0}};
    CHECK(log_latent_prior(ModelId::M3, outside, p, space) == -std::numeric_limits<double>::infinity());
}
