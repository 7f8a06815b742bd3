#pragma once

#include <cstdint>
#include <vector>

#include "secrms/core.h"

namespace secrms {

/// One row of the simulation grid. Probabilities may sit on their closed bounds here so that
/// degenerate designs (phi = 0, omega0 = 1) can be generated.
struct Scenario {
    int id = 1;
    int M = 400;
    int N = 100;
    int N_male = 40;
    double omega0 = 0.01;
    double phi = 0.3;
    double sigma_m = 0.3;
    double sigma_f = 0.15;

    void validate() const;
};

struct SurveyDesign {
    StateSpace space;
    TrapGrid traps;
    int K = 50;
    double buffer = 1.0;

    void validate() const;
};

enum class SexLabelPolicy { all_captured, fully_identified, none };

/// Generating truth, kept apart from the dataset handed to the fitting code.
struct TruthRecord {
    int N = 0;
    int N_male = 0;
    std::vector<std::uint8_t> z;
    std::vector<std::uint8_t> u;
    std::vector<Point> s;
    std::vector<int> L;
    bool operator==(const TruthRecord&) const = default;
};

struct SimulatedData {
    CaptureDataset data;
    TruthRecord truth;
};

/// (0,5) x (0,7) with a 1-unit buffer, 10 x 16 traps, K = 50.
SurveyDesign standard_design();
/// Traps sit at the centres of an nx x ny partition of the buffered interior.
SurveyDesign make_design(double width, double height, double buffer, int nx, int ny, int K,
                         double grid_resolution);
/// The twelve scenarios (M = 400, N = 100, 40 males).
std::vector<Scenario> scenario_table();
Scenario table_scenario(int id);

SimulatedData simulate_dataset(const Scenario& scenario, const SurveyDesign& design,
                               std::uint64_t seed,
                               SexLabelPolicy labels = SexLabelPolicy::all_captured);

} // namespace secrms
