#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "secrms/criteria.h"
#include "secrms/marglik.h"
#include "secrms/mcmc.h"
#include "secrms/simulate.h"

namespace secrms {

/// One of the 25 selection tools.
struct ToolId {
    enum class Family { gd_map, gd_il, hm, criterion };
    Family family = Family::hm;
    TuningSpec tuning;                    ///< gd_map / gd_il
    Criterion criterion = Criterion::DIC1; ///< criterion

    /// "GD-MAP:normal", "GD-IL:tn0.95", "HM", "DIC1", ...
    std::string name() const;
    /// Marginal likelihoods prefer larger scores; the criteria prefer smaller ones.
    bool larger_is_better() const { return family != Family::criterion; }
};

const std::vector<ToolId>& all_tools();
ToolId parse_tool(const std::string& name);

/// Index of the preferred model among `scores` (one per entry of `models`); exact ties go to
/// the simpler model and set *tie. Returns -1 if any score is not finite.
int select_model(std::span<const double> scores, std::span<const ModelId> models,
                 bool larger_is_better, bool* tie = nullptr);

struct StudyConfig {
    double width = 5.0;
    double height = 7.0;
    double buffer = 1.0;
    int traps_nx = 10;
    int traps_ny = 16;
    int K = 50;
    double grid_resolution = 0.1;
    int M = 400;
    int N = 100;
    int N_male = 40;
    /// Table scenario ids (their M, N, N_male are replaced by the values above) followed by
    /// any explicitly specified scenarios.
    std::vector<int> scenario_ids{1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12};
    std::vector<Scenario> custom_scenarios;
    std::vector<ModelId> models{kAllModels.begin(), kAllModels.end()};
    int n_sim = 10;
    McmcConfig mcmc;
    int ppl_thin = 10;
    std::uint64_t seed = 1;
    double R = 0.0; ///< 0 means the state-space diagonal
    SexLabelPolicy labels = SexLabelPolicy::all_captured;
    int workers = 1;

    SurveyDesign design() const;
    PriorSpec prior() const;
    std::vector<Scenario> scenarios() const;
    /// Throws DataError describing the first invalid setting.
    void validate() const;
    /// Canonical key=value text of every setting that affects results (not `workers`).
    std::string canonical() const;
    std::uint64_t hash() const;
};

/// Parses "key = value" lines ('#' starts a comment). Unknown keys are errors.
StudyConfig parse_study_config(std::istream& is);
StudyConfig parse_study_config(const std::string& text, StudyConfig base);
StudyConfig load_study_config(const std::filesystem::path& path);
/// Applies one key=value setting.
void apply_setting(StudyConfig& config, const std::string& key, const std::string& value);

struct SeedPlan {
    std::uint64_t dataset = 0;
    std::uint64_t chain = 0;
    std::uint64_t ppl = 0;
};
/// master -> (scenario, replicate) -> model -> replicate-simulation substream.
SeedPlan seed_plan(std::uint64_t master, int scenario_id, int replicate, ModelId model);

struct MarglikRow {
    MarglikMethod method = MarglikMethod::hm;
    std::string tuning;
    double value = 0.0;
    double mc_se = 0.0;
    long dropped = 0;
    bool unreliable = false;
    std::string error; ///< non-empty when estimation failed (value is NaN)
};

/// Everything recorded for one (scenario, replicate, model) fit.
struct CellResult {
    int scenario = 0;
    int replicate = 0;
    ModelId model = ModelId::M1;
    bool ok = false;
    std::string error;
    SeedPlan seeds;
    long n_draws = 0;
    double map_achieved = 0.0;
    int map_rounds = 0;
    std::map<std::string, double> scores; ///< tool name -> score (NaN if unavailable)
    std::vector<MarglikRow> marglik;
    std::vector<CriterionResult> criteria;
    std::map<std::string, double> mse;            ///< parameter -> mean squared error vs truth
    std::map<std::string, double> posterior_mean; ///< parameter -> posterior mean
    std::vector<std::string> corr_names;
    std::vector<double> corr; ///< row-major, NaN where undefined
    std::map<std::string, double> acceptance;
};

nlohmann::json to_json(const CellResult& c);
CellResult cell_from_json(const nlohmann::json& j);

struct StudyResults {
    StudyConfig config;
    std::vector<CellResult> cells; ///< ordered by (scenario position, replicate, model)

    const CellResult* find(int scenario, int replicate, ModelId model) const;
};

struct SelectionRow {
    int scenario = 0;
    int replicate = 0;
    std::string tool;
    bool complete = false;
    ModelId selected = ModelId::M1;
    bool tie = false;
    std::vector<double> scores; ///< per config.models
};

struct ProportionRow {
    int scenario = 0;
    std::string tool;
    int n_complete = 0;
    int n_sim = 0;
    int ties = 0;
    std::vector<double> proportion; ///< per config.models; NaN when n_complete = 0
};

std::vector<SelectionRow> selections(const StudyResults& results);
/// Row-stochastic selection frequencies per scenario for one tool.
std::vector<ProportionRow> selection_proportions(const StudyResults& results, const std::string& tool);
/// sqrt(mean over complete replicates of the per-replicate MSE); NaN if the parameter is not
/// active in the model (N is always applicable) or no replicate completed.
double average_rmse(const StudyResults& results, int scenario, ModelId model, const std::string& parameter);

/// Pearson correlations between the named sequences (N is sum(z)); NaN rows/columns for
/// sequences with zero variance.
std::vector<double> correlation_matrix(const Chain& chain, const std::vector<std::string>& parameters);
std::vector<double> correlation_matrix(const std::vector<std::vector<double>>& series);
/// Draw sequence of a parameter name ("N" or a scalar).
std::vector<double> parameter_series(const Chain& chain, const std::string& parameter);

/// True values used for RMSE: N, psi = N/M, theta = N_male/N, phi, omega0, p0 = omega0 phi,
/// sigma_m, sigma_f and sigma = the sex-weighted mean.
std::map<std::string, double> truth_values(const Scenario& scenario);

struct RunOptions {
    bool resume = false;
    int workers = 1;
    /// Called before each cell is computed; throwing marks the cell failed (for tests).
    std::function<void(int scenario, int replicate, ModelId model)> cell_hook;
    std::ostream* log = nullptr;
};

/// Full fit and evaluation of one cell; failures are recorded, not thrown.
CellResult run_cell(const StudyConfig& config, const Scenario& scenario, int replicate, ModelId model);

/// Runs (or resumes) the study, checkpointing one JSON file per cell under out_dir/cells and
/// writing the CSV outputs and manifest.json.
StudyResults run_study(const StudyConfig& config, const std::filesystem::path& out_dir,
                       const RunOptions& options = {});

/// CSV outputs, each starting with its schema line.
void write_outputs(const StudyResults& results, const std::filesystem::path& out_dir);
std::string selections_csv(const StudyResults& results);
std::string proportions_csv(const StudyResults& results);
std::string rmse_csv(const StudyResults& results);
std::string correlations_csv(const StudyResults& results);
std::string marglik_csv(const StudyResults& results);
std::string criteria_csv(const StudyResults& results);

} // namespace secrms
