#include "secrms/cli.h"

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <random>
#include <regex>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "secrms/io.h"
#include "secrms/numeric.h"
#include "secrms/study.h"
#include "secrms/version.h"

namespace secrms {

using nlohmann::json;
namespace fs = std::filesystem;

fs::path find_config(const std::string& name) {
    if (fs::exists(name)) return name;
    if (const char* env = std::getenv("SECRMS_CONFIG_PATH")) {
        std::stringstream ss(env);
        std::string dir;
        while (std::getline(ss, dir, ':')) {
            if (dir.empty()) continue;
            const fs::path p = fs::path(dir) / name;
            if (fs::exists(p)) return p;
        }
    }
    throw DataError("config '" + name + "' not found (searched the working directory and SECRMS_CONFIG_PATH)");
}

namespace {

using Clock = std::chrono::steady_clock;

std::string hex(std::uint64_t v) {
    std::ostringstream os;
    os << std::hex << v;
    return os.str();
}

std::uint64_t fresh_seed() {
    std::random_device rd;
    return (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
}

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

json manifest(const std::string& subcommand, const json& seeds, const json& inputs, const json& outputs,
              double wall, const std::string& status) {
    return {{"subcommand", subcommand},
            {"version", kVersion},
            {"seeds", seeds},
            {"inputs", inputs},
            {"outputs", outputs},
            {"wall_time_s", wall},
            {"status", status}};
}

void write_manifest(const fs::path& dir, const json& m) { write_text_file(dir / "manifest.json", m.dump(2) + "\n"); }

double diagonal(const StateSpace& s) { return std::sqrt(s.width() * s.width() + s.height() * s.height()); }

bool config_sets_seed(const std::string& text) {
    static const std::regex re(R"(^\s*seed\s*=)");
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        if (std::regex_search(line, re)) return true;
    }
    return false;
}

// ---------------------------------------------------------------------------------------------

struct SimulateArgs {
    std::string config;
    int scenario = 1;
    int replicate = 0;
    std::optional<std::uint64_t> seed;
    std::string out;
};

int cmd_simulate(const SimulateArgs& a, std::ostream& out) {
    const auto t0 = Clock::now();
    StudyConfig cfg;
    std::string cfg_text;
    if (!a.config.empty()) {
        cfg_text = read_text_file(find_config(a.config));
        cfg = parse_study_config(cfg_text, StudyConfig{});
    }
    cfg.validate();
    const Scenario* scenario = nullptr;
    const auto scenarios = cfg.scenarios();
    for (const Scenario& s : scenarios) {
        if (s.id == a.scenario) scenario = &s;
    }
    Scenario table;
    if (!scenario) {
        if (!cfg.custom_scenarios.empty() || a.scenario < 1 || a.scenario > 12) {
            throw DataError("scenario " + std::to_string(a.scenario) + " is not defined by the config");
        }
        table = table_scenario(a.scenario);
        table.M = cfg.M;
        table.N = cfg.N;
        table.N_male = cfg.N_male;
        scenario = &table;
    }
    const std::uint64_t master = a.seed ? *a.seed : fresh_seed();
    if (!a.seed) out << "seed: " << master << '\n';
    const std::uint64_t dataset_seed =
        a.replicate > 0 ? seed_plan(master, scenario->id, a.replicate, ModelId::M1).dataset : master;

    const SimulatedData sim = simulate_dataset(*scenario, cfg.design(), dataset_seed, cfg.labels);
    const fs::path dir(a.out);
    save_dataset(sim.data, dir / "dataset.txt");
    save_truth(sim.truth, dir / "truth.txt");
    write_manifest(dir, manifest("simulate",
                                 {{"seed", master}, {"replicate", a.replicate}, {"dataset_seed", dataset_seed}},
                                 {{"config", a.config}, {"config_hash", hex(cfg.hash())}, {"scenario", scenario->id}},
                                 {{"dataset", "dataset.txt"},
                                  {"truth", "truth.txt"},
                                  {"dataset_hash", hex(dataset_hash(sim.data))}},
                                 seconds_since(t0), "complete"));
    out << "simulated scenario " << scenario->id << ": N = " << sim.truth.N << ", n_full = " << sim.data.n_full
        << " -> " << dir.string() << '\n';
    return kExitOk;
}

// ---------------------------------------------------------------------------------------------

struct FitArgs {
    std::string data;
    std::string model;
    std::string out;
    std::string config;
    std::optional<int> n_iter, burn_in, thin;
    std::optional<double> R;
    std::optional<std::uint64_t> seed;
};

int cmd_fit(const FitArgs& a, std::ostream& out, std::ostream& err) {
    const auto t0 = Clock::now();
    const ModelId model = parse_model(a.model);
    const CaptureDataset data = load_dataset(a.data);
    McmcConfig mc;
    PriorSpec prior;
    prior.R = diagonal(data.space);
    if (!a.config.empty()) {
        const StudyConfig cfg = load_study_config(find_config(a.config));
        mc = cfg.mcmc;
        if (cfg.R > 0.0) prior.R = cfg.R;
    }
    if (a.n_iter) mc.n_iter = *a.n_iter;
    if (a.burn_in) mc.burn_in = *a.burn_in;
    if (a.thin) mc.thin = *a.thin;
    if (a.R) prior.R = *a.R;
    if (!(prior.R > 0.0)) throw std::invalid_argument("--R must be positive");
    mc.seed = a.seed ? *a.seed : fresh_seed();
    if (!a.seed) out << "seed: " << mc.seed << '\n';
    mc.validate();
    if (!has_sex_covariate(model) && data.has_sex_labels()) {
        err << "warning: " << to_string(model) << " has no sex covariate; sex labels in the data are ignored\n";
    }

    const Chain chain = fit(model, data, prior, mc);
    std::ostringstream csv;
    write_chain_csv(chain, csv);
    const fs::path dir(a.out);
    write_text_file(dir / "chain.csv", csv.str());
    json m = manifest("fit", {{"seed", mc.seed}}, {{"data", a.data}, {"config", a.config}},
                      {{"chain", "chain.csv"}}, seconds_since(t0), "complete");
    m["dataset_hash"] = hex(dataset_hash(data));
    m["chain"] = chain_metadata(chain);
    write_manifest(dir, m);
    out << "fitted " << to_string(model) << ": " << chain.size() << " draws -> " << dir.string() << '\n';
    return kExitOk;
}

// ---------------------------------------------------------------------------------------------

struct SelectArgs {
    std::string data;
    std::vector<std::string> chains;
    std::string tools = "all";
    std::string out;
    std::optional<std::uint64_t> seed;
    int ppl_thin = 10;
};

std::map<std::string, double> evaluate_tools(const Chain& chain, const CaptureDataset& data,
                                             const std::vector<ToolId>& tools, std::uint64_t ppl_seed,
                                             int ppl_thin, std::ostream& err) {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    bool need_map = false, need_il = false;
    for (const ToolId& t : tools) {
        need_map |= t.family == ToolId::Family::gd_map ||
                    (t.family == ToolId::Family::criterion &&
                     (t.criterion == Criterion::DIC1 || t.criterion == Criterion::DIC2));
        need_il |= t.family == ToolId::Family::gd_il;
    }
    std::optional<MapEstimate> map;
    std::vector<double> map_ll, il;
    if (need_map) {
        map = map_refine(chain, data);
        map_ll = map_log_likelihoods(chain, data, *map);
    }
    if (need_il) il = integrated_log_likelihoods(chain, data, data.space);
    const Eigen::MatrixXd x = transformed_draws(chain);

    std::map<std::string, double> scores;
    for (const ToolId& t : tools) {
        double v = nan;
        try {
            switch (t.family) {
            case ToolId::Family::gd_map:
                v = gelfand_dey(map_ll, x, fit_tuning(x, t.tuning), MarglikMethod::gd_map).value;
                break;
            case ToolId::Family::gd_il:
                v = gelfand_dey(il, x, fit_tuning(x, t.tuning), MarglikMethod::gd_il).value;
                break;
            case ToolId::Family::hm: v = harmonic_mean(chain).value; break;
            case ToolId::Family::criterion:
                switch (t.criterion) {
                case Criterion::DIC1: v = dic(chain, *map, 1).value; break;
                case Criterion::DIC2: v = dic(chain, *map, 2).value; break;
                case Criterion::WAIC1: v = waic(chain, 1).value; break;
                case Criterion::WAIC2: v = waic(chain, 2).value; break;
                case Criterion::WAIC3: v = waic(chain, 3).value; break;
                case Criterion::PPL: v = posterior_predictive_loss(chain, data, ppl_seed, ppl_thin).value; break;
                }
                break;
            }
        } catch (const NumericalError& e) {
            err << "warning: " << t.name() << " for " << to_string(chain.model) << ": " << e.what() << '\n';
        }
        scores[t.name()] = v;
    }
    return scores;
}

int cmd_select(const SelectArgs& a, std::ostream& out, std::ostream& err) {
    const auto t0 = Clock::now();
    std::vector<ToolId> tools;
    if (a.tools == "all") {
        tools = all_tools();
    } else {
        std::stringstream ss(a.tools);
        std::string name;
        while (std::getline(ss, name, ',')) {
            if (!name.empty()) tools.push_back(parse_tool(name));
        }
    }
    if (tools.empty()) throw std::invalid_argument("--tools names no tool");
    if (a.ppl_thin < 1) throw std::invalid_argument("--ppl-thin must be at least 1");

    const CaptureDataset data = load_dataset(a.data);
    const std::string hash = hex(dataset_hash(data));
    std::vector<Chain> chains;
    for (const std::string& dir : a.chains) {
        const json m = json::parse(read_text_file(fs::path(dir) / "manifest.json"), nullptr, false);
        if (m.is_discarded() || !m.contains("chain") || !m.contains("dataset_hash")) {
            throw DataError(dir + ": manifest.json is not a fit manifest");
        }
        if (m["dataset_hash"].get<std::string>() != hash) {
            throw DataError(dir + ": chain was fitted to a different dataset (hash mismatch)");
        }
        std::istringstream is(read_text_file(fs::path(dir) / "chain.csv"));
        chains.push_back(read_chain_csv(is, m["chain"], data));
    }
    std::sort(chains.begin(), chains.end(), [](const Chain& x, const Chain& y) { return x.model < y.model; });
    std::vector<ModelId> models;
    for (const Chain& c : chains) {
        if (!models.empty() && models.back() == c.model) {
            throw DataError("two chains for model " + std::string(to_string(c.model)));
        }
        models.push_back(c.model);
    }

    const std::uint64_t seed = a.seed ? *a.seed : fresh_seed();
    if (!a.seed) out << "seed: " << seed << '\n';
    std::vector<std::map<std::string, double>> scores;
    for (const Chain& c : chains) {
        scores.push_back(evaluate_tools(c, data, tools, derive_seed(seed, static_cast<std::uint64_t>(c.model)),
                                        a.ppl_thin, err));
    }

    std::ostringstream csv;
    csv << schema_line("selection", 1, 0) << '\n' << "tool,selected,tie";
    for (ModelId m : models) csv << ",score_" << to_string(m);
    csv << '\n';
    for (const ToolId& t : tools) {
        std::vector<double> s;
        for (const auto& sc : scores) s.push_back(sc.at(t.name()));
        bool tie = false;
        const int k = select_model(s, models, t.larger_is_better(), &tie);
        csv << t.name() << ',' << (k >= 0 ? std::string(to_string(models[k])) : "NA") << ',' << (tie ? 1 : 0);
        for (double v : s) csv << ',' << (std::isnan(v) ? "NA" : format_double(v));
        csv << '\n';
        out << std::left << std::setw(16) << t.name() << (k >= 0 ? std::string(to_string(models[k])) : "NA")
            << (tie ? " (tie)" : "") << '\n';
    }
    const fs::path dir(a.out);
    write_text_file(dir / "selection.csv", csv.str());
    json m = manifest("select", {{"seed", seed}}, {{"data", a.data}, {"chains", a.chains}},
                      {{"selection", "selection.csv"}}, seconds_since(t0), "complete");
    m["dataset_hash"] = hash;
    m["ppl_thin"] = a.ppl_thin;
    write_manifest(dir, m);
    return kExitOk;
}

// ---------------------------------------------------------------------------------------------

struct StudyArgs {
    std::string config;
    std::string out;
    std::optional<int> workers;
    bool resume = false;
    std::optional<std::uint64_t> seed;
    bool quiet = false;
};

int cmd_study(const StudyArgs& a, std::ostream& out) {
    const std::string text = read_text_file(find_config(a.config));
    StudyConfig cfg = parse_study_config(text, StudyConfig{});
    if (a.seed) {
        cfg.seed = *a.seed;
    } else if (!config_sets_seed(text)) {
        cfg.seed = fresh_seed();
        out << "seed: " << cfg.seed << '\n';
    }
    if (a.workers) cfg.workers = *a.workers;
    cfg.validate();
    RunOptions opt;
    opt.resume = a.resume;
    opt.workers = cfg.workers;
    opt.log = a.quiet ? nullptr : &out;
    const StudyResults res = run_study(cfg, a.out, opt);
    int failed = 0;
    for (const CellResult& c : res.cells) failed += c.ok ? 0 : 1;
    out << "study finished: " << res.cells.size() << " cells, " << failed << " failed -> " << a.out << '\n';
    return kExitOk;
}

// ---------------------------------------------------------------------------------------------

std::vector<std::vector<std::string>> read_csv(const fs::path& path, const std::string& schema) {
    std::istringstream is(read_text_file(path));
    std::string line;
    if (!std::getline(is, line)) throw DataError(path.string() + " is empty");
    check_schema(line, schema, 1);
    std::vector<std::vector<std::string>> rows;
    while (std::getline(is, line)) {
        std::vector<std::string> f;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) f.push_back(cell);
        rows.push_back(f);
    }
    if (rows.size() < 2) throw DataError(path.string() + " has no data rows");
    return rows;
}

int cmd_report(const std::string& results, std::ostream& out) {
    const fs::path dir(results);
    if (!fs::is_directory(dir)) throw DataError("results directory '" + results + "' does not exist");
    const auto prop = read_csv(dir / "proportions.csv", "proportions");
    const auto& header = prop[0];
    const std::size_t first_model = 5;
    if (header.size() <= first_model) throw DataError("proportions.csv has no model columns");

    std::string current;
    for (std::size_t r = 1; r < prop.size(); ++r) {
        const auto& f = prop[r];
        if (f.size() != header.size()) throw DataError("proportions.csv row " + std::to_string(r) + " is malformed");
        if (f[1] != current) {
            current = f[1];
            out << "\n" << current << "\n  scenario      n";
            for (std::size_t k = first_model; k < header.size(); ++k) out << std::setw(8) << header[k].substr(5);
            out << '\n';
        }
        out << "  " << std::setw(8) << f[0] << std::setw(7) << (f[2] + "/" + f[3]);
        for (std::size_t k = first_model; k < f.size(); ++k) {
            std::ostringstream v;
            if (f[k] == "NA") {
                v << "NA";
            } else {
                v << std::fixed << std::setprecision(2) << parse_double(f[k]);
            }
            out << std::setw(8) << v.str();
        }
        if (f[4] != "0") out << "  ties=" << f[4];
        out << '\n';
    }

    if (fs::exists(dir / "rmse.csv")) {
        const auto rmse = read_csv(dir / "rmse.csv", "rmse");
        out << "\naverage RMSE of N\n";
        for (std::size_t r = 1; r < rmse.size(); ++r) {
            const auto& f = rmse[r];
            if (f.size() == 5 && f[2] == "N") {
                out << "  scenario " << std::setw(3) << f[0] << "  " << f[1] << "  " << f[4] << '\n';
            }
        }
    }
    return kExitOk;
}

} // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Spatial capture-recapture model selection: simulate, fit, select, study, report", "secrms"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kVersion);

    SimulateArgs sim;
    auto* c_sim = app.add_subcommand("simulate", "Simulate one dataset");
    c_sim->add_option("--config", sim.config, "Study config supplying design, M, N and labelling");
    c_sim->add_option("--scenario", sim.scenario, "Scenario id")->capture_default_str();
    c_sim->add_option("--replicate", sim.replicate,
                      "Use the study's dataset seed for this replicate (seed is then the master seed)");
    c_sim->add_option("--seed", sim.seed, "Random seed (generated and printed if absent)");
    c_sim->add_option("--out", sim.out, "Output directory")->required();

    FitArgs fa;
    auto* c_fit = app.add_subcommand("fit", "Fit one model to a dataset by MCMC");
    c_fit->add_option("--data", fa.data, "Dataset file")->required();
    c_fit->add_option("--model", fa.model, "M1, M2, M3 or M4")->required();
    c_fit->add_option("--out", fa.out, "Output directory")->required();
    c_fit->add_option("--config", fa.config, "Study config supplying MCMC settings and R");
    c_fit->add_option("--n-iter", fa.n_iter, "Iterations");
    c_fit->add_option("--burn-in", fa.burn_in, "Burn-in iterations");
    c_fit->add_option("--thin", fa.thin, "Thinning interval");
    c_fit->add_option("--R", fa.R, "Upper bound of the scale priors (default: state-space diagonal)");
    c_fit->add_option("--seed", fa.seed, "Random seed (generated and printed if absent)");

    SelectArgs sa;
    auto* c_sel = app.add_subcommand("select", "Score fitted chains with the selection tools");
    c_sel->add_option("--data", sa.data, "Dataset file the chains were fitted to")->required();
    c_sel->add_option("--chains", sa.chains, "Fit output directories, one per model")->required()->expected(1, 4);
    c_sel->add_option("--tools", sa.tools, "Comma-separated tool names or 'all'")->capture_default_str();
    c_sel->add_option("--out", sa.out, "Output directory")->required();
    c_sel->add_option("--seed", sa.seed, "Seed for posterior predictive replicates");
    c_sel->add_option("--ppl-thin", sa.ppl_thin, "Draw thinning for posterior predictive loss")
        ->capture_default_str();

    StudyArgs st;
    auto* c_study = app.add_subcommand("study", "Run the simulation study");
    c_study->add_option("--config", st.config, "Study config (path, or name looked up in SECRMS_CONFIG_PATH)")
        ->required();
    c_study->add_option("--out", st.out, "Output directory")->required();
    c_study->add_option("--workers", st.workers, "Worker threads (overrides the config)");
    c_study->add_flag("--resume", st.resume, "Reuse completed cells checkpointed under the output directory");
    c_study->add_option("--seed", st.seed, "Master seed (overrides the config)");
    c_study->add_flag("--quiet", st.quiet, "Do not log each cell");

    std::string results;
    auto* c_report = app.add_subcommand("report", "Print selection proportions of a finished study");
    c_report->add_option("--results", results, "Study output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (*c_sim) return cmd_simulate(sim, out);
        if (*c_fit) return cmd_fit(fa, out, err);
        if (*c_sel) return cmd_select(sa, out, err);
        if (*c_study) return cmd_study(st, out);
        if (*c_report) return cmd_report(results, out);
    } catch (const DataError& e) {
        err << "error: " << e.what() << '\n';
        return kExitData;
    } catch (const fs::filesystem_error& e) {
        err << "error: " << e.what() << '\n';
        return kExitData;
    } catch (const NumericalError& e) {
        err << "numerical failure: " << e.what() << '\n';
        return kExitNumerical;
    } catch (const std::invalid_argument& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitNumerical;
    }
    return kExitUsage;
}

} // namespace secrms
