#include "secrms/study.h"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include <Eigen/Core>
#include <boost/version.hpp>

#include "secrms/io.h"
#include "secrms/numeric.h"
#include "secrms/version.h"

namespace secrms {

using nlohmann::json;

std::string ToolId::name() const {
    switch (family) {
    case Family::gd_map: return "GD-MAP:" + tuning.name();
    case Family::gd_il: return "GD-IL:" + tuning.name();
    case Family::hm: return "HM";
    case Family::criterion: return std::string(to_string(criterion));
    }
    return "?";
}

const std::vector<ToolId>& all_tools() {
    static const std::vector<ToolId> tools = [] {
        std::vector<ToolId> t;
        for (auto fam : {ToolId::Family::gd_map, ToolId::Family::gd_il}) {
            for (const TuningSpec& s : tuning_variants()) t.push_back({fam, s, Criterion::DIC1});
        }
        t.push_back({ToolId::Family::hm, {}, Criterion::DIC1});
        for (Criterion c : kAllCriteria) t.push_back({ToolId::Family::criterion, {}, c});
        return t;
    }();
    return tools;
}

ToolId parse_tool(const std::string& name) {
    for (const ToolId& t : all_tools()) {
        if (t.name() == name) return t;
    }
    throw std::invalid_argument("unknown tool '" + name + "'");
}

int select_model(std::span<const double> scores, std::span<const ModelId> models,
                 bool larger_is_better, bool* tie) {
    if (scores.size() != models.size() || scores.empty()) {
        throw std::invalid_argument("select_model: one score per model required");
    }
    for (double s : scores) {
        if (!std::isfinite(s)) return -1;
    }
    double best = scores[0];
    for (double s : scores) best = larger_is_better ? std::max(best, s) : std::min(best, s);
    int chosen = -1;
    int count = 0;
    for (std::size_t k = 0; k < scores.size(); ++k) {
        if (scores[k] != best) continue;
        ++count;
        if (chosen < 0 || complexity_rank(models[k]) < complexity_rank(models[chosen])) {
            chosen = static_cast<int>(k);
        }
    }
    if (tie) *tie = count > 1;
    return chosen;
}

// ---------------------------------------------------------------------------------------------
// configuration

SurveyDesign StudyConfig::design() const {
    return make_design(width, height, buffer, traps_nx, traps_ny, K, grid_resolution);
}

PriorSpec StudyConfig::prior() const {
    PriorSpec p;
    p.R = R > 0.0 ? R : std::sqrt(width * width + height * height);
    return p;
}

std::vector<Scenario> StudyConfig::scenarios() const {
    std::vector<Scenario> out;
    for (int id : scenario_ids) {
        Scenario s = table_scenario(id);
        s.M = M;
        s.N = N;
        s.N_male = N_male;
        out.push_back(s);
    }
    for (Scenario s : custom_scenarios) {
        s.M = M;
        s.N = N;
        s.N_male = N_male;
        out.push_back(s);
    }
    return out;
}

void StudyConfig::validate() const {
    if (K < 1) throw DataError("K must be at least 1");
    const SurveyDesign d = design();
    d.validate();
    try {
        integration_grid(d.space);
    } catch (const std::invalid_argument& e) {
        throw DataError(std::string("grid_resolution: ") + e.what());
    }
    if (M < 1) throw DataError("M must be positive");
    if (scenario_ids.empty() && custom_scenarios.empty()) throw DataError("no scenarios selected");
    std::vector<int> ids;
    for (const Scenario& s : scenarios()) {
        s.validate();
        if (std::find(ids.begin(), ids.end(), s.id) != ids.end()) {
            throw DataError("scenario id " + std::to_string(s.id) + " appears twice");
        }
        ids.push_back(s.id);
    }
    if (models.empty()) throw DataError("no models selected");
    for (std::size_t a = 0; a < models.size(); ++a) {
        for (std::size_t b = a + 1; b < models.size(); ++b) {
            if (models[a] == models[b]) throw DataError("model listed twice");
        }
    }
    if (n_sim < 1) throw DataError("n_sim must be at least 1");
    try {
        mcmc.validate();
    } catch (const std::invalid_argument& e) {
        throw DataError(e.what());
    }
    if (ppl_thin < 1) throw DataError("ppl_thin must be at least 1");
    if (!(R >= 0.0)) throw DataError("R must be positive (or 0 for the default)");
    if (workers < 1) throw DataError("workers must be at least 1");
}

namespace {

std::string labels_name(SexLabelPolicy p) {
    switch (p) {
    case SexLabelPolicy::all_captured: return "all_captured";
    case SexLabelPolicy::fully_identified: return "fully_identified";
    case SexLabelPolicy::none: return "none";
    }
    return "?";
}

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

std::vector<std::string> split_list(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, sep)) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

template <class T>
T to_number(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        T out;
        if constexpr (std::is_same_v<T, double>) {
            out = std::stod(v, &used);
        } else if constexpr (std::is_same_v<T, std::uint64_t>) {
            if (!v.empty() && v[0] == '-') throw std::invalid_argument("negative");
            out = std::stoull(v, &used);
        } else {
            out = static_cast<T>(std::stol(v, &used));
        }
        if (used != v.size()) throw std::invalid_argument("trailing characters");
        return out;
    } catch (const std::exception&) {
        throw DataError("config key '" + key + "': cannot parse '" + v + "'");
    }
}

} // namespace

std::string StudyConfig::canonical() const {
    std::ostringstream os;
    os << "width=" << format_double(width) << '\n'
       << "height=" << format_double(height) << '\n'
       << "buffer=" << format_double(buffer) << '\n'
       << "traps_nx=" << traps_nx << '\n'
       << "traps_ny=" << traps_ny << '\n'
       << "K=" << K << '\n'
       << "grid_resolution=" << format_double(grid_resolution) << '\n'
       << "M=" << M << '\n'
       << "N=" << N << '\n'
       << "N_male=" << N_male << '\n';
    os << "scenarios=";
    for (std::size_t k = 0; k < scenario_ids.size(); ++k) os << (k ? "," : "") << scenario_ids[k];
    os << '\n';
    for (const Scenario& s : custom_scenarios) {
        os << "scenario=" << s.id << ':' << format_double(s.omega0) << ':' << format_double(s.phi)
           << ':' << format_double(s.sigma_m) << ':' << format_double(s.sigma_f) << '\n';
    }
    os << "models=";
    for (std::size_t k = 0; k < models.size(); ++k) os << (k ? "," : "") << to_string(models[k]);
    os << '\n';
    os << "n_sim=" << n_sim << '\n'
       << "n_iter=" << mcmc.n_iter << '\n'
       << "burn_in=" << mcmc.burn_in << '\n'
       << "thin=" << mcmc.thin << '\n'
       << "scale_prob=" << format_double(mcmc.scale_prob) << '\n'
       << "scale_sigma=" << format_double(mcmc.scale_sigma) << '\n'
       << "scale_s=" << format_double(mcmc.scale_s) << '\n'
       << "l_swaps=" << mcmc.l_swaps << '\n'
       << "ppl_thin=" << ppl_thin << '\n'
       << "seed=" << seed << '\n'
       << "R=" << format_double(R) << '\n'
       << "sex_labels=" << labels_name(labels) << '\n';
    return os.str();
}

std::uint64_t StudyConfig::hash() const { return fnv1a(canonical()); }

void apply_setting(StudyConfig& c, const std::string& key, const std::string& value) {
    const std::string& v = value;
    if (key == "width") c.width = to_number<double>(key, v);
    else if (key == "height") c.height = to_number<double>(key, v);
    else if (key == "buffer") c.buffer = to_number<double>(key, v);
    else if (key == "traps_nx") c.traps_nx = to_number<int>(key, v);
    else if (key == "traps_ny") c.traps_ny = to_number<int>(key, v);
    else if (key == "K") c.K = to_number<int>(key, v);
    else if (key == "grid_resolution") c.grid_resolution = to_number<double>(key, v);
    else if (key == "M") c.M = to_number<int>(key, v);
    else if (key == "N") c.N = to_number<int>(key, v);
    else if (key == "N_male") c.N_male = to_number<int>(key, v);
    else if (key == "scenarios") {
        c.scenario_ids.clear();
        for (const std::string& s : split_list(v, ',')) {
            const int id = to_number<int>(key, s);
            if (id < 1 || id > 12) throw DataError("scenarios: table ids run from 1 to 12");
            c.scenario_ids.push_back(id);
        }
    } else if (key == "scenario") {
        const auto f = split_list(v, ':');
        if (f.size() != 5) throw DataError("scenario: expected id:omega0:phi:sigma_m:sigma_f");
        Scenario s;
        s.id = to_number<int>(key, f[0]);
        s.omega0 = to_number<double>(key, f[1]);
        s.phi = to_number<double>(key, f[2]);
        s.sigma_m = to_number<double>(key, f[3]);
        s.sigma_f = to_number<double>(key, f[4]);
        c.custom_scenarios.push_back(s);
    } else if (key == "models") {
        c.models.clear();
        for (const std::string& s : split_list(v, ',')) {
            try {
                c.models.push_back(parse_model(s));
            } catch (const std::invalid_argument& e) {
                throw DataError(e.what());
            }
        }
    } else if (key == "n_sim") c.n_sim = to_number<int>(key, v);
    else if (key == "n_iter") c.mcmc.n_iter = to_number<int>(key, v);
    else if (key == "burn_in") c.mcmc.burn_in = to_number<int>(key, v);
    else if (key == "thin") c.mcmc.thin = to_number<int>(key, v);
    else if (key == "scale_prob") c.mcmc.scale_prob = to_number<double>(key, v);
    else if (key == "scale_sigma") c.mcmc.scale_sigma = to_number<double>(key, v);
    else if (key == "scale_s") c.mcmc.scale_s = to_number<double>(key, v);
    else if (key == "l_swaps") c.mcmc.l_swaps = to_number<int>(key, v);
    else if (key == "ppl_thin") c.ppl_thin = to_number<int>(key, v);
    else if (key == "seed") c.seed = to_number<std::uint64_t>(key, v);
    else if (key == "R") c.R = to_number<double>(key, v);
    else if (key == "sex_labels") {
        if (v == "all_captured") c.labels = SexLabelPolicy::all_captured;
        else if (v == "fully_identified") c.labels = SexLabelPolicy::fully_identified;
        else if (v == "none") c.labels = SexLabelPolicy::none;
        else throw DataError("sex_labels must be all_captured, fully_identified or none");
    } else if (key == "workers") c.workers = to_number<int>(key, v);
    else throw DataError("unknown config key '" + key + "'");
}

StudyConfig parse_study_config(const std::string& text, StudyConfig base) {
    std::istringstream is(text);
    std::string line;
    int line_no = 0;
    bool custom_reset = false;
    while (std::getline(is, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw DataError("config line " + std::to_string(line_no) + ": expected key = value");
        }
        const std::string key = trim(line.substr(0, eq));
        if (key == "scenario" && !custom_reset) {
            base.custom_scenarios.clear();
            custom_reset = true;
        }
        try {
            apply_setting(base, key, trim(line.substr(eq + 1)));
        } catch (const DataError& e) {
            throw DataError("config line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return base;
}

StudyConfig parse_study_config(std::istream& is) {
    std::ostringstream ss;
    ss << is.rdbuf();
    return parse_study_config(ss.str(), StudyConfig{});
}

StudyConfig load_study_config(const std::filesystem::path& path) {
    return parse_study_config(read_text_file(path), StudyConfig{});
}

SeedPlan seed_plan(std::uint64_t master, int scenario_id, int replicate, ModelId model) {
    SeedPlan s;
    s.dataset = derive_seed(derive_seed(master, static_cast<std::uint64_t>(scenario_id)),
                            static_cast<std::uint64_t>(replicate));
    s.chain = derive_seed(s.dataset, 1000 + static_cast<std::uint64_t>(model));
    s.ppl = derive_seed(s.chain, 2000);
    return s;
}

// ---------------------------------------------------------------------------------------------
// summaries

std::map<std::string, double> truth_values(const Scenario& s) {
    const double N = s.N;
    const double males = s.N_male;
    std::map<std::string, double> t;
    t["N"] = N;
    t["psi"] = N / s.M;
    t["theta"] = N > 0 ? males / N : 0.0;
    t["phi"] = s.phi;
    t["omega0"] = s.omega0;
    t["p0"] = s.omega0 * s.phi;
    t["sigma_m"] = s.sigma_m;
    t["sigma_f"] = s.sigma_f;
    t["sigma"] = N > 0 ? (males * s.sigma_m + (N - males) * s.sigma_f) / N : s.sigma_f;
    return t;
}

std::vector<double> parameter_series(const Chain& chain, const std::string& parameter) {
    std::vector<double> out(chain.size());
    if (parameter == "N") {
        for (std::size_t d = 0; d < chain.size(); ++d) out[d] = chain.draws[d].latent.population_size();
        return out;
    }
    const Param p = parse_param(parameter);
    for (std::size_t d = 0; d < chain.size(); ++d) out[d] = chain.draws[d].params.get(p);
    return out;
}

std::vector<double> correlation_matrix(const std::vector<std::vector<double>>& series) {
    const std::size_t k = series.size();
    std::vector<double> out(k * k, std::numeric_limits<double>::quiet_NaN());
    if (k == 0) return out;
    const std::size_t n = series[0].size();
    if (n < 2) throw std::invalid_argument("correlation_matrix: need at least two draws");
    std::vector<double> mean(k), sd(k);
    for (std::size_t a = 0; a < k; ++a) {
        if (series[a].size() != n) throw std::invalid_argument("correlation_matrix: ragged series");
        CompensatedSum s;
        for (double v : series[a]) s.add(v);
        mean[a] = s.value() / n;
        CompensatedSum ss;
        for (double v : series[a]) ss.add((v - mean[a]) * (v - mean[a]));
        sd[a] = std::sqrt(ss.value());
    }
    for (std::size_t a = 0; a < k; ++a) {
        if (!(sd[a] > 0.0)) continue;
        out[a * k + a] = 1.0;
        for (std::size_t b = a + 1; b < k; ++b) {
            if (!(sd[b] > 0.0)) continue;
            CompensatedSum c;
            for (std::size_t d = 0; d < n; ++d) c.add((series[a][d] - mean[a]) * (series[b][d] - mean[b]));
            const double r = std::clamp(c.value() / (sd[a] * sd[b]), -1.0, 1.0);
            out[a * k + b] = r;
            out[b * k + a] = r;
        }
    }
    return out;
}

std::vector<double> correlation_matrix(const Chain& chain, const std::vector<std::string>& parameters) {
    std::vector<std::vector<double>> series;
    for (const std::string& p : parameters) series.push_back(parameter_series(chain, p));
    return correlation_matrix(series);
}

// ---------------------------------------------------------------------------------------------
// one cell

CellResult run_cell(const StudyConfig& config, const Scenario& scenario, int replicate, ModelId model) {
    CellResult c;
    c.scenario = scenario.id;
    c.replicate = replicate;
    c.model = model;
    c.seeds = seed_plan(config.seed, scenario.id, replicate, model);
    const double nan = std::numeric_limits<double>::quiet_NaN();
    try {
        const SimulatedData sim = simulate_dataset(scenario, config.design(), c.seeds.dataset, config.labels);
        const CaptureDataset& data = sim.data;
        McmcConfig mc = config.mcmc;
        mc.seed = c.seeds.chain;
        const Chain chain = fit(model, data, config.prior(), mc);
        c.n_draws = static_cast<long>(chain.size());

        const MapEstimate map = map_refine(chain, data);
        c.map_achieved = map.achieved;
        c.map_rounds = map.n_rounds;
        const std::vector<double> map_ll = map_log_likelihoods(chain, data, map);
        const std::vector<double> il = integrated_log_likelihoods(chain, data, data.space);
        const Eigen::MatrixXd x = transformed_draws(chain);

        for (const TuningSpec& spec : tuning_variants()) {
            std::optional<TuningDensity> g;
            std::string fit_error;
            try {
                g = fit_tuning(x, spec);
            } catch (const std::exception& e) {
                fit_error = e.what();
            }
            for (MarglikMethod method : {MarglikMethod::gd_map, MarglikMethod::gd_il}) {
                const ToolId tool{method == MarglikMethod::gd_map ? ToolId::Family::gd_map
                                                                  : ToolId::Family::gd_il,
                                  spec, Criterion::DIC1};
                MarglikRow row;
                row.method = method;
                row.tuning = spec.name();
                try {
                    if (!g) throw NumericalError(fit_error);
                    const LogMarginal m = gelfand_dey(method == MarglikMethod::gd_map ? map_ll : il, x, *g, method);
                    row.value = m.value;
                    row.mc_se = m.mc_se;
                    row.dropped = m.dropped;
                    row.unreliable = m.unreliable;
                } catch (const std::exception& e) {
                    row.value = nan;
                    row.error = e.what();
                }
                c.scores[tool.name()] = row.value;
                c.marglik.push_back(row);
            }
        }
        {
            MarglikRow row;
            row.method = MarglikMethod::hm;
            try {
                const LogMarginal m = harmonic_mean(chain);
                row.value = m.value;
                row.mc_se = m.mc_se;
                row.dropped = m.dropped;
                row.unreliable = m.unreliable;
            } catch (const std::exception& e) {
                row.value = nan;
                row.error = e.what();
            }
            c.scores["HM"] = row.value;
            c.marglik.push_back(row);
        }

        auto record = [&](Criterion crit, auto&& compute) {
            try {
                const CriterionResult r = compute();
                c.criteria.push_back(r);
                c.scores[std::string(to_string(crit))] = r.value;
            } catch (const std::exception&) {
                c.scores[std::string(to_string(crit))] = nan;
            }
        };
        record(Criterion::DIC1, [&] { return dic(chain, map, 1); });
        record(Criterion::DIC2, [&] { return dic(chain, map, 2); });
        record(Criterion::WAIC1, [&] { return waic(chain, 1); });
        record(Criterion::WAIC2, [&] { return waic(chain, 2); });
        record(Criterion::WAIC3, [&] { return waic(chain, 3); });
        record(Criterion::PPL, [&] { return posterior_predictive_loss(chain, data, c.seeds.ppl, config.ppl_thin); });

        const auto truth = truth_values(scenario);
        std::vector<std::string> names{"N"};
        for (Param p : active_params(model)) names.emplace_back(to_string(p));
        for (const std::string& name : names) {
            const std::vector<double> s = parameter_series(chain, name);
            CompensatedSum se, sm;
            for (double v : s) {
                se.add((v - truth.at(name)) * (v - truth.at(name)));
                sm.add(v);
            }
            c.mse[name] = se.value() / s.size();
            c.posterior_mean[name] = sm.value() / s.size();
        }
        c.corr_names = names;
        c.corr = chain.size() >= 2 ? correlation_matrix(chain, names)
                                   : std::vector<double>(names.size() * names.size(), nan);
        for (Param p : active_params(model)) {
            if (p == Param::psi || p == Param::theta) continue;
            c.acceptance[std::string(to_string(p))] = chain.acceptance.of(p).rate();
        }
        c.acceptance["s"] = chain.acceptance.s.rate();
        c.acceptance["L"] = chain.acceptance.l.rate();
        c.ok = true;
    } catch (const std::exception& e) {
        c.ok = false;
        c.error = e.what();
    }
    return c;
}

// ---------------------------------------------------------------------------------------------
// serialisation of cells

namespace {

json jnum(double v) {
    if (std::isfinite(v)) return v;
    return format_double(v);
}

double jget(const json& j) {
    if (j.is_number()) return j.get<double>();
    if (j.is_string()) return parse_double(j.get<std::string>());
    return std::numeric_limits<double>::quiet_NaN();
}

json jmap(const std::map<std::string, double>& m) {
    json o = json::object();
    for (const auto& [k, v] : m) o[k] = jnum(v);
    return o;
}

std::map<std::string, double> jmap_read(const json& j) {
    std::map<std::string, double> m;
    for (auto it = j.begin(); it != j.end(); ++it) m[it.key()] = jget(it.value());
    return m;
}

MarglikMethod parse_method(const std::string& s) {
    for (MarglikMethod m : {MarglikMethod::gd_map, MarglikMethod::gd_il, MarglikMethod::hm}) {
        if (to_string(m) == s) return m;
    }
    throw DataError("unknown marginal likelihood method '" + s + "'");
}

} // namespace

json to_json(const CellResult& c) {
    json ml = json::array();
    for (const MarglikRow& r : c.marglik) {
        ml.push_back({{"method", std::string(to_string(r.method))},
                      {"tuning", r.tuning},
                      {"value", jnum(r.value)},
                      {"mc_se", jnum(r.mc_se)},
                      {"dropped", r.dropped},
                      {"unreliable", r.unreliable},
                      {"error", r.error}});
    }
    json cr = json::array();
    for (const CriterionResult& r : c.criteria) {
        cr.push_back({{"criterion", std::string(to_string(r.criterion))},
                      {"value", jnum(r.value)},
                      {"fit_term", jnum(r.fit_term)},
                      {"penalty", jnum(r.penalty)},
                      {"p_eff", jnum(r.p_eff)},
                      {"thin", r.thin},
                      {"seed", r.seed}});
    }
    json corr = json::array();
    for (double v : c.corr) corr.push_back(jnum(v));
    return {{"scenario", c.scenario},
            {"replicate", c.replicate},
            {"model", std::string(to_string(c.model))},
            {"ok", c.ok},
            {"error", c.error},
            {"seeds", {{"dataset", c.seeds.dataset}, {"chain", c.seeds.chain}, {"ppl", c.seeds.ppl}}},
            {"n_draws", c.n_draws},
            {"map_achieved", jnum(c.map_achieved)},
            {"map_rounds", c.map_rounds},
            {"scores", jmap(c.scores)},
            {"marglik", ml},
            {"criteria", cr},
            {"mse", jmap(c.mse)},
            {"posterior_mean", jmap(c.posterior_mean)},
            {"corr_names", c.corr_names},
            {"corr", corr},
            {"acceptance", jmap(c.acceptance)}};
}

CellResult cell_from_json(const json& j) {
    CellResult c;
    try {
        c.scenario = j.at("scenario").get<int>();
        c.replicate = j.at("replicate").get<int>();
        c.model = parse_model(j.at("model").get<std::string>());
        c.ok = j.at("ok").get<bool>();
        c.error = j.at("error").get<std::string>();
        c.seeds.dataset = j.at("seeds").at("dataset").get<std::uint64_t>();
        c.seeds.chain = j.at("seeds").at("chain").get<std::uint64_t>();
        c.seeds.ppl = j.at("seeds").at("ppl").get<std::uint64_t>();
        c.n_draws = j.at("n_draws").get<long>();
        c.map_achieved = jget(j.at("map_achieved"));
        c.map_rounds = j.at("map_rounds").get<int>();
        c.scores = jmap_read(j.at("scores"));
        for (const json& r : j.at("marglik")) {
            MarglikRow row;
            row.method = parse_method(r.at("method").get<std::string>());
            row.tuning = r.at("tuning").get<std::string>();
            row.value = jget(r.at("value"));
            row.mc_se = jget(r.at("mc_se"));
            row.dropped = r.at("dropped").get<long>();
            row.unreliable = r.at("unreliable").get<bool>();
            row.error = r.at("error").get<std::string>();
            c.marglik.push_back(row);
        }
        for (const json& r : j.at("criteria")) {
            CriterionResult cr;
            cr.criterion = parse_criterion(r.at("criterion").get<std::string>());
            cr.value = jget(r.at("value"));
            cr.fit_term = jget(r.at("fit_term"));
            cr.penalty = jget(r.at("penalty"));
            cr.p_eff = jget(r.at("p_eff"));
            cr.thin = r.at("thin").get<int>();
            cr.seed = r.at("seed").get<std::uint64_t>();
            c.criteria.push_back(cr);
        }
        c.mse = jmap_read(j.at("mse"));
        c.posterior_mean = jmap_read(j.at("posterior_mean"));
        c.corr_names = j.at("corr_names").get<std::vector<std::string>>();
        for (const json& v : j.at("corr")) c.corr.push_back(jget(v));
        c.acceptance = jmap_read(j.at("acceptance"));
    } catch (const json::exception& e) {
        throw DataError(std::string("malformed cell record: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw DataError(std::string("malformed cell record: ") + e.what());
    }
    return c;
}

const CellResult* StudyResults::find(int scenario, int replicate, ModelId model) const {
    for (const CellResult& c : cells) {
        if (c.scenario == scenario && c.replicate == replicate && c.model == model) return &c;
    }
    return nullptr;
}

// ---------------------------------------------------------------------------------------------
// aggregation

std::vector<SelectionRow> selections(const StudyResults& results) {
    const StudyConfig& cfg = results.config;
    std::vector<SelectionRow> out;
    const double nan = std::numeric_limits<double>::quiet_NaN();
    for (const Scenario& s : cfg.scenarios()) {
        for (int rep = 1; rep <= cfg.n_sim; ++rep) {
            for (const ToolId& tool : all_tools()) {
                SelectionRow row;
                row.scenario = s.id;
                row.replicate = rep;
                row.tool = tool.name();
                for (ModelId m : cfg.models) {
                    const CellResult* c = results.find(s.id, rep, m);
                    double v = nan;
                    if (c && c->ok) {
                        const auto it = c->scores.find(row.tool);
                        if (it != c->scores.end()) v = it->second;
                    }
                    row.scores.push_back(v);
                }
                const int k = select_model(row.scores, cfg.models, tool.larger_is_better(), &row.tie);
                row.complete = k >= 0;
                if (row.complete) row.selected = cfg.models[k];
                out.push_back(row);
            }
        }
    }
    return out;
}

std::vector<ProportionRow> selection_proportions(const StudyResults& results, const std::string& tool) {
    parse_tool(tool);
    const StudyConfig& cfg = results.config;
    const auto rows = selections(results);
    std::vector<ProportionRow> out;
    for (const Scenario& s : cfg.scenarios()) {
        ProportionRow p;
        p.scenario = s.id;
        p.tool = tool;
        p.n_sim = cfg.n_sim;
        std::vector<int> counts(cfg.models.size(), 0);
        for (const SelectionRow& r : rows) {
            if (r.scenario != s.id || r.tool != tool || !r.complete) continue;
            ++p.n_complete;
            p.ties += r.tie ? 1 : 0;
            for (std::size_t k = 0; k < cfg.models.size(); ++k) {
                if (cfg.models[k] == r.selected) ++counts[k];
            }
        }
        for (int n : counts) {
            p.proportion.push_back(p.n_complete ? static_cast<double>(n) / p.n_complete
                                                : std::numeric_limits<double>::quiet_NaN());
        }
        out.push_back(p);
    }
    return out;
}

double average_rmse(const StudyResults& results, int scenario, ModelId model, const std::string& parameter) {
    CompensatedSum sum;
    int n = 0;
    for (const CellResult& c : results.cells) {
        if (c.scenario != scenario || c.model != model || !c.ok) continue;
        const auto it = c.mse.find(parameter);
        if (it == c.mse.end()) return std::numeric_limits<double>::quiet_NaN();
        sum.add(it->second);
        ++n;
    }
    if (n == 0) return std::numeric_limits<double>::quiet_NaN();
    return std::sqrt(sum.value() / n);
}

// ---------------------------------------------------------------------------------------------
// outputs

namespace {

const std::vector<std::string>& rmse_parameters() {
    static const std::vector<std::string> p{"N",     "psi", "theta",   "phi",    "omega0",
                                            "p0",    "sigma", "sigma_m", "sigma_f"};
    return p;
}

std::string num(double v) { return std::isnan(v) ? "NA" : format_double(v); }

std::string clean(std::string s) {
    for (char& ch : s) {
        if (ch == ',' || ch == '\n' || ch == '\r') ch = ';';
    }
    return s;
}

} // namespace

std::string selections_csv(const StudyResults& results) {
    std::ostringstream os;
    os << schema_line("selections", 1, 0) << '\n' << "scenario,replicate,tool,status,selected,tie";
    for (ModelId m : results.config.models) os << ",score_" << to_string(m);
    os << '\n';
    for (const SelectionRow& r : selections(results)) {
        os << r.scenario << ',' << r.replicate << ',' << r.tool << ','
           << (r.complete ? "complete" : "incomplete") << ','
           << (r.complete ? std::string(to_string(r.selected)) : "NA") << ',' << (r.tie ? 1 : 0);
        for (double v : r.scores) os << ',' << num(v);
        os << '\n';
    }
    return os.str();
}

std::string proportions_csv(const StudyResults& results) {
    std::ostringstream os;
    os << schema_line("proportions", 1, 0) << '\n' << "scenario,tool,n_complete,n_sim,ties";
    for (ModelId m : results.config.models) os << ",prop_" << to_string(m);
    os << '\n';
    for (const ToolId& t : all_tools()) {
        for (const ProportionRow& p : selection_proportions(results, t.name())) {
            os << p.scenario << ',' << p.tool << ',' << p.n_complete << ',' << p.n_sim << ',' << p.ties;
            for (double v : p.proportion) os << ',' << num(v);
            os << '\n';
        }
    }
    return os.str();
}

std::string rmse_csv(const StudyResults& results) {
    std::ostringstream os;
    os << schema_line("rmse", 1, 0) << '\n' << "scenario,model,parameter,n_complete,average_rmse\n";
    for (const Scenario& s : results.config.scenarios()) {
        for (ModelId m : results.config.models) {
            int n = 0;
            for (const CellResult& c : results.cells) {
                n += (c.scenario == s.id && c.model == m && c.ok) ? 1 : 0;
            }
            for (const std::string& p : rmse_parameters()) {
                os << s.id << ',' << to_string(m) << ',' << p << ',' << n << ','
                   << num(average_rmse(results, s.id, m, p)) << '\n';
            }
        }
    }
    return os.str();
}

std::string correlations_csv(const StudyResults& results) {
    std::ostringstream os;
    os << schema_line("correlations", 1, 0) << '\n' << "scenario,replicate,model,param_a,param_b,r\n";
    for (const CellResult& c : results.cells) {
        if (!c.ok) continue;
        const std::size_t k = c.corr_names.size();
        for (std::size_t a = 0; a < k; ++a) {
            for (std::size_t b = a; b < k; ++b) {
                os << c.scenario << ',' << c.replicate << ',' << to_string(c.model) << ','
                   << c.corr_names[a] << ',' << c.corr_names[b] << ',' << num(c.corr[a * k + b]) << '\n';
            }
        }
    }
    return os.str();
}

std::string marglik_csv(const StudyResults& results) {
    std::ostringstream os;
    os << schema_line("marglik", 1, 0) << '\n'
       << "scenario,replicate,model,method,tuning,log_marginal,mc_se,dropped,unreliable,error\n";
    for (const CellResult& c : results.cells) {
        for (const MarglikRow& r : c.marglik) {
            os << c.scenario << ',' << c.replicate << ',' << to_string(c.model) << ','
               << to_string(r.method) << ',' << (r.tuning.empty() ? "NA" : r.tuning) << ','
               << num(r.value) << ',' << num(r.mc_se) << ',' << r.dropped << ','
               << (r.unreliable ? 1 : 0) << ',' << clean(r.error) << '\n';
        }
    }
    return os.str();
}

std::string criteria_csv(const StudyResults& results) {
    std::ostringstream os;
    os << schema_line("criteria", 1, 0) << '\n'
       << "scenario,replicate,model,criterion,value,fit_term,penalty,p_eff,thin,seed\n";
    for (const CellResult& c : results.cells) {
        for (const CriterionResult& r : c.criteria) {
            os << c.scenario << ',' << c.replicate << ',' << to_string(c.model) << ','
               << to_string(r.criterion) << ',' << num(r.value) << ',' << num(r.fit_term) << ','
               << num(r.penalty) << ',' << num(r.p_eff) << ',';
            if (r.criterion == Criterion::PPL) {
                os << r.thin << ',' << r.seed;
            } else {
                os << "NA,NA";
            }
            os << '\n';
        }
    }
    return os.str();
}

void write_outputs(const StudyResults& results, const std::filesystem::path& out_dir) {
    write_text_file(out_dir / "selections.csv", selections_csv(results));
    write_text_file(out_dir / "proportions.csv", proportions_csv(results));
    write_text_file(out_dir / "rmse.csv", rmse_csv(results));
    write_text_file(out_dir / "correlations.csv", correlations_csv(results));
    write_text_file(out_dir / "marglik.csv", marglik_csv(results));
    write_text_file(out_dir / "criteria.csv", criteria_csv(results));
}

// ---------------------------------------------------------------------------------------------
// driver

namespace {

std::string hex(std::uint64_t v) {
    std::ostringstream os;
    os << std::hex << v;
    return os.str();
}

std::filesystem::path cell_path(const std::filesystem::path& dir, int scenario, int rep, ModelId m) {
    return dir / ("s" + std::to_string(scenario) + "_r" + std::to_string(rep) + "_" +
                  std::string(to_string(m)) + ".json");
}

} // namespace

StudyResults run_study(const StudyConfig& config, const std::filesystem::path& out_dir,
                       const RunOptions& options) {
    config.validate();
    const auto start = std::chrono::steady_clock::now();
    const std::filesystem::path cells_dir = out_dir / "cells";
    std::filesystem::create_directories(cells_dir);
    const std::string config_hash = hex(config.hash());

    struct Job {
        Scenario scenario;
        int replicate;
        ModelId model;
    };
    std::vector<Job> jobs;
    for (const Scenario& s : config.scenarios()) {
        for (int rep = 1; rep <= config.n_sim; ++rep) {
            for (ModelId m : config.models) jobs.push_back({s, rep, m});
        }
    }

    std::vector<std::optional<CellResult>> done(jobs.size());
    int reused = 0;
    if (options.resume) {
        for (std::size_t k = 0; k < jobs.size(); ++k) {
            const auto path = cell_path(cells_dir, jobs[k].scenario.id, jobs[k].replicate, jobs[k].model);
            if (!std::filesystem::exists(path)) continue;
            try {
                const json j = json::parse(read_text_file(path));
                if (j.at("config_hash").get<std::string>() != config_hash) continue;
                CellResult c = cell_from_json(j.at("cell"));
                if (!c.ok) continue;
                done[k] = std::move(c);
                ++reused;
            } catch (const std::exception&) {
                // unreadable checkpoint: recompute
            }
        }
    }

    std::mutex log_mutex;
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::size_t finished = 0;
    auto worker = [&] {
        for (;;) {
            const std::size_t k = next++;
            if (k >= jobs.size()) return;
            if (done[k]) continue;
            const Job& job = jobs[k];
            try {
                CellResult c;
                bool hooked = false;
                if (options.cell_hook) {
                    try {
                        options.cell_hook(job.scenario.id, job.replicate, job.model);
                    } catch (const std::exception& e) {
                        c.scenario = job.scenario.id;
                        c.replicate = job.replicate;
                        c.model = job.model;
                        c.seeds = seed_plan(config.seed, job.scenario.id, job.replicate, job.model);
                        c.ok = false;
                        c.error = e.what();
                        hooked = true;
                    }
                }
                if (!hooked) c = run_cell(config, job.scenario, job.replicate, job.model);
                const json j = {{"config_hash", config_hash}, {"cell", to_json(c)}};
                const std::string text = j.dump(1);
                write_text_file(cell_path(cells_dir, job.scenario.id, job.replicate, job.model), text);
                done[k] = cell_from_json(json::parse(text).at("cell"));
                std::lock_guard<std::mutex> lock(log_mutex);
                ++finished;
                if (options.log) {
                    *options.log << "cell scenario=" << job.scenario.id << " replicate=" << job.replicate
                                 << " model=" << to_string(job.model) << (c.ok ? " ok" : " FAILED: " + c.error)
                                 << '\n';
                }
            } catch (...) {
                std::lock_guard<std::mutex> lock(log_mutex);
                if (!failure) failure = std::current_exception();
                next = jobs.size();
                return;
            }
        }
    };
    const int n_workers = std::max(1, options.workers);
    std::vector<std::thread> threads;
    for (int w = 1; w < n_workers; ++w) threads.emplace_back(worker);
    worker();
    for (std::thread& t : threads) t.join();
    if (failure) std::rethrow_exception(failure);

    StudyResults results;
    results.config = config;
    json failures = json::array();
    for (auto& c : done) {
        if (!c->ok) {
            failures.push_back({{"scenario", c->scenario},
                                {"replicate", c->replicate},
                                {"model", std::string(to_string(c->model))},
                                {"error", c->error}});
        }
        results.cells.push_back(std::move(*c));
    }
    write_outputs(results, out_dir);

    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const json manifest = {
        {"subcommand", "study"},
        {"version", kVersion},
        {"libraries",
         {{"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                        std::to_string(EIGEN_MINOR_VERSION)},
          {"boost", BOOST_LIB_VERSION}}},
        {"config", config.canonical()},
        {"config_hash", config_hash},
        {"seed", config.seed},
        {"workers", n_workers},
        {"outputs",
         {"selections.csv", "proportions.csv", "rmse.csv", "correlations.csv", "marglik.csv", "criteria.csv"}},
        {"cells_total", jobs.size()},
        {"cells_reused", reused},
        {"cells_computed", finished},
        {"cells_failed", failures.size()},
        {"failures", failures},
        {"wall_time_s", wall},
        {"status", failures.empty() ? "complete" : "complete_with_failures"}};
    write_text_file(out_dir / "manifest.json", manifest.dump(2) + "\n");
    return results;
}

} // namespace secrms
