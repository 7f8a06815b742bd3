#include "secrms/core.h"

#include <algorithm>
#include <numeric>

namespace secrms {

void StateSpace::validate() const {
    if (!(width() > 0.0) || !(height() > 0.0)) {
        throw DataError("state space must have positive side lengths");
    }
    if (!(grid_resolution > 0.0) || grid_resolution >= std::min(width(), height())) {
        throw DataError("grid resolution must be positive and below the shorter side length");
    }
}

std::string_view to_string(ModelId m) {
    switch (m) {
    case ModelId::M1: return "M1";
    case ModelId::M2: return "M2";
    case ModelId::M3: return "M3";
    case ModelId::M4: return "M4";
    }
    return "?";
}

ModelId parse_model(std::string_view s) {
    for (ModelId m : kAllModels) {
        if (to_string(m) == s) return m;
    }
    throw std::invalid_argument("unknown model '" + std::string(s) + "'");
}

int complexity_rank(ModelId m) {
    switch (m) {
    case ModelId::M4: return 0;
    case ModelId::M3: return 1;
    case ModelId::M2: return 2;
    case ModelId::M1: return 3;
    }
    return 0;
}

std::string_view to_string(Param p) {
    switch (p) {
    case Param::psi: return "psi";
    case Param::theta: return "theta";
    case Param::phi: return "phi";
    case Param::omega0: return "omega0";
    case Param::p0: return "p0";
    case Param::sigma: return "sigma";
    case Param::sigma_m: return "sigma_m";
    case Param::sigma_f: return "sigma_f";
    }
    return "?";
}

Param parse_param(std::string_view s) {
    for (Param p : kAllParams) {
        if (to_string(p) == s) return p;
    }
    throw std::invalid_argument("unknown parameter '" + std::string(s) + "'");
}

std::vector<Param> active_params(ModelId m) {
    switch (m) {
    case ModelId::M1:
        return {Param::psi, Param::theta, Param::phi, Param::omega0, Param::sigma_m, Param::sigma_f};
    case ModelId::M2: return {Param::psi, Param::theta, Param::p0, Param::sigma_m, Param::sigma_f};
    case ModelId::M3: return {Param::psi, Param::phi, Param::omega0, Param::sigma};
    case ModelId::M4: return {Param::psi, Param::p0, Param::sigma};
    }
    return {};
}

bool is_active(ModelId m, Param p) {
    const auto a = active_params(m);
    return std::find(a.begin(), a.end(), p) != a.end();
}

double ModelParams::get(Param p) const {
    switch (p) {
    case Param::psi: return psi;
    case Param::theta: return theta;
    case Param::phi: return phi;
    case Param::omega0: return omega0;
    case Param::p0: return p0;
    case Param::sigma: return sigma;
    case Param::sigma_m: return sigma_m;
    case Param::sigma_f: return sigma_f;
    }
    return 0.0;
}

void ModelParams::set(Param p, double v) {
    switch (p) {
    case Param::psi: psi = v; break;
    case Param::theta: theta = v; break;
    case Param::phi: phi = v; break;
    case Param::omega0: omega0 = v; break;
    case Param::p0: p0 = v; break;
    case Param::sigma: sigma = v; break;
    case Param::sigma_m: sigma_m = v; break;
    case Param::sigma_f: sigma_f = v; break;
    }
}

int LatentState::population_size() const {
    return static_cast<int>(std::count(z.begin(), z.end(), std::uint8_t{1}));
}

int LatentState::male_count() const {
    int n = 0;
    for (std::size_t i = 0; i < z.size(); ++i) n += (z[i] && u[i]) ? 1 : 0;
    return n;
}

bool CaptureDataset::has_sex_labels() const {
    auto labelled = [](std::int8_t v) { return v >= 0; };
    return std::any_of(sex1.begin(), sex1.end(), labelled) ||
           std::any_of(sex2.begin(), sex2.end(), labelled);
}

CaptureDataset CaptureDataset::empty(int M, int K, StateSpace space, TrapGrid traps) {
    CaptureDataset d;
    d.M = M;
    d.J = traps.size();
    d.K = K;
    d.space = space;
    d.traps = std::move(traps);
    d.y1.assign(d.cells(), 0);
    d.y2.assign(d.cells(), 0);
    d.sex1.assign(static_cast<std::size_t>(M), -1);
    d.sex2.assign(static_cast<std::size_t>(M), -1);
    return d;
}

void CaptureDataset::validate() const {
    if (M < 1) throw DataError("M must be at least 1");
    if (J < 1 || traps.size() != J) throw DataError("trap count must be positive and match J");
    if (K < 1) throw DataError("K must be at least 1");
    space.validate();
    for (const Point& p : traps.locations) {
        if (!space.contains(p)) throw DataError("trap location outside the state space");
    }
    if (y1.size() != cells() || y2.size() != cells()) {
        throw DataError("capture arrays do not have M*J*K entries");
    }
    if (sex1.size() != static_cast<std::size_t>(M) || sex2.size() != static_cast<std::size_t>(M)) {
        throw DataError("sex label vectors must have M entries");
    }
    if (n_full < 0 || n_full > M) throw DataError("n_full out of range");
    const std::size_t row = static_cast<std::size_t>(J) * K;
    auto row_captured = [&](const std::vector<std::uint8_t>& y, int i) {
        const auto* first = y.data() + i * row;
        return std::any_of(first, first + row, [](std::uint8_t v) { return v != 0; });
    };
    for (std::size_t c = 0; c < cells(); ++c) {
        if (y1[c] > 1 || y2[c] > 1) throw DataError("capture entries must be 0 or 1");
    }
    for (int i = 0; i < M; ++i) {
        const bool c1 = row_captured(y1, i);
        const bool c2 = row_captured(y2, i);
        if (sex1[i] > 1 || sex1[i] < -1 || sex2[i] > 1 || sex2[i] < -1) {
            throw DataError("sex labels must be -1, 0 or 1");
        }
        if (sex1[i] >= 0 && !c1) throw DataError("sex label on an uncaptured detector-1 row");
        if (sex2[i] >= 0 && !c2) throw DataError("sex label on an uncaptured detector-2 row");
        if (i < n_full) {
            if (!c1 || !c2) throw DataError("fully identified row without captures on both detectors");
            if (sex1[i] >= 0 && sex2[i] >= 0 && sex1[i] != sex2[i]) {
                throw DataError("conflicting sex labels on a fully identified row");
            }
        }
    }
}

bool is_permutation(std::span<const int> L) {
    std::vector<char> seen(L.size(), 0);
    for (int v : L) {
        if (v < 0 || static_cast<std::size_t>(v) >= L.size() || seen[v]) return false;
        seen[v] = 1;
    }
    return true;
}

std::vector<int> inverse_permutation(std::span<const int> L) {
    if (!is_permutation(L)) throw InvariantError("L is not a bijection");
    std::vector<int> inv(L.size());
    for (std::size_t r = 0; r < L.size(); ++r) inv[L[r]] = static_cast<int>(r);
    return inv;
}

} // namespace secrms
