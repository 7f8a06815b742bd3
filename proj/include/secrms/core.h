#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace secrms {

/// Malformed or inconsistent input data (bad files, violated dataset invariants).
class DataError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// A computation produced no usable finite answer.
class NumericalError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// A structural invariant (e.g. bijectivity of a permutation) was violated.
class InvariantError : public std::logic_error {
  public:
    using std::logic_error::logic_error;
};

struct Point {
    double x = 0.0;
    double y = 0.0;
    bool operator==(const Point&) const = default;
};

inline double squared_distance(Point a, Point b) {
    const double dx = a.x - b.x;
    const double dy = a.y - b.y;
    return dx * dx + dy * dy;
}

/// Rectangular state space with the cell size used for Riemann integration.
struct StateSpace {
    double x_min = 0.0;
    double x_max = 1.0;
    double y_min = 0.0;
    double y_max = 1.0;
    double grid_resolution = 0.1;

    double width() const { return x_max - x_min; }
    double height() const { return y_max - y_min; }
    double area() const { return width() * height(); }
    bool contains(Point p) const {
        return p.x >= x_min && p.x <= x_max && p.y >= y_min && p.y <= y_max;
    }
    void validate() const;
    bool operator==(const StateSpace&) const = default;
};

struct TrapGrid {
    std::vector<Point> locations;
    int size() const { return static_cast<int>(locations.size()); }
    bool operator==(const TrapGrid&) const = default;
};

enum class ModelId { M1, M2, M3, M4 };

inline constexpr std::array<ModelId, 4> kAllModels{ModelId::M1, ModelId::M2, ModelId::M3,
                                                  ModelId::M4};

std::string_view to_string(ModelId m);
ModelId parse_model(std::string_view s);

/// M1 and M2 carry the sex covariate on sigma.
inline bool has_sex_covariate(ModelId m) { return m == ModelId::M1 || m == ModelId::M2; }
/// M1 and M3 separate trap entry (omega0) from detection given arrival (phi).
inline bool has_arrival_process(ModelId m) { return m == ModelId::M1 || m == ModelId::M3; }
/// Complexity rank used for tie breaking: M4 simplest (0), M1 most complex (3).
int complexity_rank(ModelId m);

enum class Param { psi, theta, phi, omega0, p0, sigma, sigma_m, sigma_f };

inline constexpr std::array<Param, 8> kAllParams{Param::psi,   Param::theta,  Param::phi,
                                                Param::omega0, Param::p0,    Param::sigma,
                                                Param::sigma_m, Param::sigma_f};

std::string_view to_string(Param p);
Param parse_param(std::string_view s);
/// Sigma-type parameters live on (0, R); the rest are probabilities.
inline bool is_scale_param(Param p) {
    return p == Param::sigma || p == Param::sigma_m || p == Param::sigma_f;
}
/// Active scalar parameters of a model in canonical order.
std::vector<Param> active_params(ModelId m);
bool is_active(ModelId m, Param p);

struct ModelParams {
    double psi = 0.5;
    double theta = 0.5;
    double phi = 0.5;
    double omega0 = 0.5;
    double p0 = 0.5;
    double sigma = 1.0;
    double sigma_m = 1.0;
    double sigma_f = 1.0;

    double get(Param p) const;
    void set(Param p, double v);
    bool operator==(const ModelParams&) const = default;
};

/// z: membership, u: sex (1 = male), s: activity centres, L: detector-2 row -> true index.
struct LatentState {
    std::vector<std::uint8_t> z;
    std::vector<std::uint8_t> u;
    std::vector<Point> s;
    std::vector<int> L;

    int M() const { return static_cast<int>(z.size()); }
    int population_size() const;
    int male_count() const;
    bool operator==(const LatentState&) const = default;
};

/// Two zero-augmented M x J x K binary arrays with per-row sex labels (-1 = not recorded).
/// Rows [0, n_full) of both arrays are the fully identified individuals, aligned.
struct CaptureDataset {
    int M = 0;
    int J = 0;
    int K = 0;
    int n_full = 0;
    StateSpace space;
    TrapGrid traps;
    std::vector<std::uint8_t> y1;
    std::vector<std::uint8_t> y2;
    std::vector<std::int8_t> sex1;
    std::vector<std::int8_t> sex2;

    std::size_t cell(int i, int j, int k) const {
        return (static_cast<std::size_t>(i) * J + j) * K + k;
    }
    std::size_t cells() const { return static_cast<std::size_t>(M) * J * K; }
    bool has_sex_labels() const;
    /// Empty arrays of the right shape.
    static CaptureDataset empty(int M, int K, StateSpace space, TrapGrid traps);
    void validate() const;
    bool operator==(const CaptureDataset&) const = default;
};

struct PriorSpec {
    double R = 10.0;
};

bool is_permutation(std::span<const int> L);
std::vector<int> inverse_permutation(std::span<const int> L);

} // namespace secrms
