#include "secrms/simulate.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "secrms/numeric.h"

namespace secrms {

void Scenario::validate() const {
    if (N < 0 || N_male < 0 || N_male > N || N > M) {
        throw DataError("scenario " + std::to_string(id) + ": need 0 <= N_male <= N <= M");
    }
    auto prob = [](double v) { return v >= 0.0 && v <= 1.0; };
    if (!prob(omega0) || !prob(phi)) {
        throw DataError("scenario " + std::to_string(id) + ": omega0 and phi must lie in [0,1]");
    }
    if (!(sigma_m > 0.0) || !(sigma_f > 0.0)) {
        throw DataError("scenario " + std::to_string(id) + ": sigma values must be positive");
    }
}

void SurveyDesign::validate() const {
    space.validate();
    if (K < 1) throw DataError("K must be at least 1");
    if (traps.size() < 1) throw DataError("design has no traps");
    for (const Point& p : traps.locations) {
        if (p.x < space.x_min + buffer || p.x > space.x_max - buffer ||
            p.y < space.y_min + buffer || p.y > space.y_max - buffer) {
            throw DataError("trap outside the buffered interior");
        }
    }
}

SurveyDesign make_design(double width, double height, double buffer, int nx, int ny, int K,
                         double grid_resolution) {
    if (nx < 1 || ny < 1) throw DataError("trap grid dimensions must be positive");
    if (!(2.0 * buffer < width && 2.0 * buffer < height)) {
        throw DataError("buffer leaves no interior");
    }
    SurveyDesign d;
    d.space = StateSpace{0.0, width, 0.0, height, grid_resolution};
    d.K = K;
    d.buffer = buffer;
    const double dx = (width - 2.0 * buffer) / nx;
    const double dy = (height - 2.0 * buffer) / ny;
    for (int a = 0; a < nx; ++a) {
        for (int b = 0; b < ny; ++b) {
            d.traps.locations.push_back({buffer + (a + 0.5) * dx, buffer + (b + 0.5) * dy});
        }
    }
    return d;
}

SurveyDesign standard_design() { return make_design(5.0, 7.0, 1.0, 10, 16, 50, 0.1); }

std::vector<Scenario> scenario_table() {
    struct Row {
        double omega0, phi, sigma_m, sigma_f;
    };
    static constexpr Row rows[] = {
        {0.01, 0.3, 0.3, 0.15}, {0.01, 0.9, 0.3, 0.15}, {0.01, 0.3, 0.4, 0.20},
        {0.01, 0.9, 0.4, 0.20}, {0.03, 0.8, 0.3, 0.15}, {0.03, 0.8, 0.4, 0.20},
        {0.05, 0.3, 0.3, 0.15}, {0.05, 0.5, 0.3, 0.15}, {0.05, 0.9, 0.3, 0.15},
        {0.05, 0.3, 0.4, 0.20}, {0.05, 0.5, 0.4, 0.20}, {0.05, 0.9, 0.4, 0.20},
    };
    std::vector<Scenario> out;
    int id = 1;
    for (const Row& r : rows) {
        out.push_back(Scenario{id++, 400, 100, 40, r.omega0, r.phi, r.sigma_m, r.sigma_f});
    }
    return out;
}

Scenario table_scenario(int id) {
    if (id < 1 || id > 12) throw DataError("scenario id must be in 1..12");
    return scenario_table()[id - 1];
}

SimulatedData simulate_dataset(const Scenario& scenario, const SurveyDesign& design,
                               std::uint64_t seed, SexLabelPolicy labels) {
    scenario.validate();
    design.validate();
    Rng rng(seed);
    const int N = scenario.N;
    const int M = scenario.M;
    const int J = design.traps.size();
    const int K = design.K;
    const std::size_t row = static_cast<std::size_t>(J) * K;

    std::vector<int> order(N);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::uint8_t> sex(N, 0);
    for (int m = 0; m < scenario.N_male; ++m) sex[order[m]] = 1;

    const StateSpace& sp = design.space;
    std::vector<Point> centres(N);
    for (Point& p : centres) {
        p.x = sp.x_min + uniform01(rng) * sp.width();
        p.y = sp.y_min + uniform01(rng) * sp.height();
    }

    std::vector<std::uint8_t> h1(row * N, 0);
    std::vector<std::uint8_t> h2(row * N, 0);
    for (int i = 0; i < N; ++i) {
        const double sigma = sex[i] ? scenario.sigma_m : scenario.sigma_f;
        for (int j = 0; j < J; ++j) {
            const double d2 = squared_distance(centres[i], design.traps.locations[j]);
            const double eta = scenario.omega0 * std::exp(-d2 / (2.0 * sigma * sigma));
            for (int k = 0; k < K; ++k) {
                if (!bernoulli(rng, eta)) continue;
                const std::size_t c = i * row + static_cast<std::size_t>(j) * K + k;
                h1[c] = bernoulli(rng, scenario.phi) ? 1 : 0;
                h2[c] = bernoulli(rng, scenario.phi) ? 1 : 0;
            }
        }
    }

    std::vector<int> full, only1, list2_rest;
    for (int i = 0; i < N; ++i) {
        bool any1 = false, any2 = false, both = false;
        for (std::size_t c = i * row; c < (i + 1) * row; ++c) {
            any1 |= h1[c] != 0;
            any2 |= h2[c] != 0;
            both |= (h1[c] & h2[c]) != 0;
        }
        if (both) {
            full.push_back(i);
            continue;
        }
        if (any1) only1.push_back(i);
        if (any2) list2_rest.push_back(i);
    }
    std::shuffle(list2_rest.begin(), list2_rest.end(), rng);

    StateSpace space = sp;
    SimulatedData out;
    out.data = CaptureDataset::empty(M, K, space, design.traps);
    CaptureDataset& d = out.data;
    d.n_full = static_cast<int>(full.size());

    // True index = detector-1 row; individuals absent from list 1 take the next free rows.
    std::vector<int> true_index(N, -1);
    int next = 0;
    for (int i : full) true_index[i] = next++;
    for (int i : only1) true_index[i] = next++;
    const int n_list1 = next;
    for (int i = 0; i < N; ++i) {
        if (true_index[i] < 0) true_index[i] = next++;
    }

    auto copy_row = [&](const std::vector<std::uint8_t>& h, int i, std::vector<std::uint8_t>& y,
                        int r) {
        std::copy_n(h.begin() + i * row, row, y.begin() + r * row);
    };
    const bool label_all = labels == SexLabelPolicy::all_captured;
    const bool label_full = labels != SexLabelPolicy::none;
    for (int i = 0; i < N; ++i) {
        const int t = true_index[i];
        if (t < n_list1) {
            copy_row(h1, i, d.y1, t);
            if (label_all || (label_full && t < d.n_full)) d.sex1[t] = static_cast<std::int8_t>(sex[i]);
        }
    }

    TruthRecord& truth = out.truth;
    truth.N = N;
    truth.N_male = scenario.N_male;
    truth.z.assign(M, 0);
    truth.u.assign(M, 0);
    truth.s.assign(M, Point{});
    truth.L.assign(M, -1);
    for (int i = 0; i < N; ++i) {
        truth.z[true_index[i]] = 1;
        truth.u[true_index[i]] = sex[i];
        truth.s[true_index[i]] = centres[i];
    }

    int r2 = 0;
    std::vector<char> taken(M, 0);
    auto place2 = [&](int i) {
        copy_row(h2, i, d.y2, r2);
        if (label_all || (label_full && r2 < d.n_full)) d.sex2[r2] = static_cast<std::int8_t>(sex[i]);
        truth.L[r2] = true_index[i];
        taken[true_index[i]] = 1;
        ++r2;
    };
    for (int i : full) place2(i);
    for (int i : list2_rest) place2(i);
    int free_index = 0;
    for (; r2 < M; ++r2) {
        while (taken[free_index]) ++free_index;
        truth.L[r2] = free_index;
        taken[free_index] = 1;
    }
    d.validate();
    return out;
}

} // namespace secrms
