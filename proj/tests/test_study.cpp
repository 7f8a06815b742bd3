#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <set>
#include <sstream>

#include "secrms/io.h"
#include "secrms/study.h"

using namespace secrms;

namespace {

const double kNaN = std::numeric_limits<double>::quiet_NaN();

StudyConfig tiny_config() {
    return parse_study_config(R"(
width = 1.5
height = 1.5
buffer = 0.5
traps_nx = 2
traps_ny = 2
K = 4
grid_resolution = 0.25
M = 20
N = 8
N_male = 3
scenarios = 9
models = M3,M4
n_sim = 2
n_iter = 150
burn_in = 50
seed = 17
ppl_thin = 20
)",
                              StudyConfig{});
}

std::filesystem::path fresh_dir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / name;
    std::filesystem::remove_all(dir);
    return dir;
}

std::string outputs(const std::filesystem::path& dir) {
    std::string all;
    for (const char* f : {"selections.csv", "proportions.csv", "rmse.csv", "correlations.csv", "marglik.csv",
                          "criteria.csv"}) {
        all += read_text_file(dir / f);
    }
    return all;
}

} // namespace

TEST_CASE("the 25 tools") {
    const auto& tools = all_tools();
    REQUIRE(tools.size() == 25);
    std::set<std::string> names;
    for (const ToolId& t : tools) {
        names.insert(t.name());
        CHECK(parse_tool(t.name()).name() == t.name());
    }
    CHECK(names.size() == 25);
    CHECK(names.count("HM") == 1);
    CHECK(names.count("GD-MAP:normal") == 1);
    CHECK(names.count("WAIC3") == 1);
    CHECK(parse_tool("DIC2").larger_is_better() == false);
    CHECK(parse_tool("HM").larger_is_better());
    CHECK_THROWS(parse_tool("AIC"));
}

TEST_CASE("model choice from scores") {
    const std::vector<ModelId> models{ModelId::M1, ModelId::M2, ModelId::M3, ModelId::M4};
    bool tie = true;
    CHECK(select_model(std::vector<double>{-5, -3, -4, -6}, models, true, &tie) == 1);
    CHECK_FALSE(tie);
    CHECK(select_model(std::vector<double>{-5, -3, -4, -6}, models, false, &tie) == 3);
    // equal scores go to the simpler model
    CHECK(select_model(std::vector<double>{10, 10, 12, 12}, models, false, &tie) == 1);
    CHECK(select_model(std::vector<double>{10, 12, 12, 10}, models, false, &tie) == 3);
    CHECK(tie);
    CHECK(select_model(std::vector<double>{1, kNaN, 0, 0}, models, true) == -1);
    CHECK(select_model(std::vector<double>{1, INFINITY, 0, 0}, models, true) == -1);
}

TEST_CASE("study configuration") {
    const StudyConfig c = tiny_config();
    CHECK(c.K == 4);
    CHECK(c.models == std::vector<ModelId>{ModelId::M3, ModelId::M4});
    REQUIRE(c.scenarios().size() == 1);
    CHECK(c.scenarios()[0].id == 9);
    CHECK(c.scenarios()[0].M == 20);
    CHECK(c.scenarios()[0].N == 8);
    CHECK_NOTHROW(c.validate());

    StudyConfig w = c;
    w.workers = 4;
    CHECK(w.hash() == c.hash());
    StudyConfig s = c;
    s.seed = 18;
    CHECK(s.hash() != c.hash());

    const StudyConfig custom = parse_study_config("# my scenario\nscenario = 50:0.02:0.5:0.3:0.2\n", c);
    REQUIRE(custom.scenarios().size() == 2);
    CHECK(custom.scenarios()[1].id == 50);
    CHECK(custom.scenarios()[1].phi == 0.5);

    CHECK_THROWS_AS(parse_study_config("bogus = 1\n", c), DataError);
    CHECK_THROWS_AS(parse_study_config("K = x\n", c), DataError);
    CHECK_THROWS_AS(parse_study_config("K = 0\n", c).validate(), DataError);
    CHECK_THROWS_AS(parse_study_config("scenarios = 13\n", c).validate(), DataError);
    CHECK_THROWS_AS(parse_study_config("models = M1,M1\n", c).validate(), DataError);
    CHECK_THROWS_AS(parse_study_config("N = 30\n", c).validate(), DataError);
}

TEST_CASE("seed plan") {
    const SeedPlan a = seed_plan(5, 1, 1, ModelId::M1);
    CHECK(a.dataset == seed_plan(5, 1, 1, ModelId::M4).dataset);
    CHECK(a.chain != seed_plan(5, 1, 1, ModelId::M4).chain);
    CHECK(a.dataset != seed_plan(5, 1, 2, ModelId::M1).dataset);
    CHECK(a.dataset != seed_plan(5, 2, 1, ModelId::M1).dataset);
    CHECK(a.dataset != seed_plan(6, 1, 1, ModelId::M1).dataset);
    CHECK(a.ppl != a.chain);
}

TEST_CASE("truth values") {
    const Scenario s{3, 400, 100, 40, 0.02, 0.6, 0.5, 0.3};
    const auto t = truth_values(s);
    CHECK(t.at("N") == 100);
    CHECK(t.at("psi") == 0.25);
    CHECK(t.at("theta") == 0.4);
    CHECK(t.at("p0") == doctest::Approx(0.012));
    CHECK(t.at("sigma") == doctest::Approx(0.4 * 0.5 + 0.6 * 0.3));
}

TEST_CASE("correlations") {
    const auto r = correlation_matrix({{1, 2, 3, 4}, {2, 4, 6, 8}, {4, 3, 2, 1}, {5, 5, 5, 5}});
    REQUIRE(r.size() == 16);
    CHECK(r[0 * 4 + 1] == doctest::Approx(1.0));
    CHECK(r[0 * 4 + 2] == doctest::Approx(-1.0));
    CHECK(r[1 * 4 + 0] == r[0 * 4 + 1]);
    CHECK(r[0] == 1.0);
    CHECK(std::isnan(r[0 * 4 + 3]));
    CHECK(std::isnan(r[3 * 4 + 3]));

    Rng rng(4);
    std::vector<double> a(10000), b(10000);
    for (std::size_t k = 0; k < a.size(); ++k) {
        a[k] = standard_normal(rng);
        b[k] = standard_normal(rng);
    }
    CHECK(std::abs(correlation_matrix({a, b})[1]) < 0.1);
}

TEST_CASE("aggregation over hand-made cells") {
    StudyResults res;
    res.config = tiny_config();
    res.config.n_sim = 3;
    const double mse[3] = {1.0, 4.0, 7.0};
    for (int rep = 1; rep <= 3; ++rep) {
        for (ModelId m : res.config.models) {
            CellResult c;
            c.scenario = 9;
            c.replicate = rep;
            c.model = m;
            c.ok = !(rep == 3 && m == ModelId::M4);
            c.mse["N"] = mse[rep - 1];
            for (const ToolId& t : all_tools()) {
                // replicate 1 prefers M3, 2 prefers M4 for every tool
                const bool good = (rep == 1) == (m == ModelId::M3);
                c.scores[t.name()] = t.larger_is_better() ? (good ? 1.0 : 0.0) : (good ? 0.0 : 1.0);
            }
            res.cells.push_back(c);
        }
    }
    CHECK(average_rmse(res, 9, ModelId::M3, "N") == doctest::Approx(2.0));
    CHECK(average_rmse(res, 9, ModelId::M4, "N") == doctest::Approx(std::sqrt(2.5)));
    CHECK(std::isnan(average_rmse(res, 9, ModelId::M4, "theta")));

    const auto rows = selections(res);
    CHECK(rows.size() == 3 * 25);
    for (const ToolId& t : all_tools()) {
        const auto p = selection_proportions(res, t.name());
        REQUIRE(p.size() == 1);
        CHECK(p[0].n_complete == 2);
        CHECK(p[0].n_sim == 3);
        CHECK(p[0].proportion[0] + p[0].proportion[1] == doctest::Approx(1.0));
        CHECK(p[0].proportion[0] == 0.5);
    }
}

TEST_CASE("cell results survive JSON") {
    const StudyConfig c = tiny_config();
    const CellResult cell = run_cell(c, c.scenarios()[0], 1, ModelId::M4);
    REQUIRE(cell.ok);
    CHECK(cell.scores.size() == 25);
    CHECK(cell.mse.count("N") == 1);
    CHECK(cell.mse.count("p0") == 1);
    CHECK(cell.mse.count("theta") == 0);
    const CellResult back = cell_from_json(to_json(cell));
    CHECK(to_json(back).dump() == to_json(cell).dump());
}

TEST_CASE("study run, resume and determinism") {
    const StudyConfig c = tiny_config();
    const auto full = fresh_dir("secrms_study_full");
    const StudyResults a = run_study(c, full);
    CHECK(a.cells.size() == 4);
    for (const CellResult& cell : a.cells) CHECK(cell.ok);
    CHECK(std::filesystem::exists(full / "manifest.json"));
    CHECK(read_text_file(full / "selections.csv").rfind("# schema: secrms.", 0) == 0);

    // interrupted run: one cell fails, then resume with more workers
    const auto part = fresh_dir("secrms_study_part");
    RunOptions broken;
    broken.cell_hook = [](int, int rep, ModelId m) {
        if (rep == 2 && m == ModelId::M3) throw std::runtime_error("interrupted");
    };
    const StudyResults b = run_study(c, part, broken);
    CHECK_FALSE(b.find(9, 2, ModelId::M3)->ok);
    CHECK(outputs(part) != outputs(full));
    RunOptions resume;
    resume.resume = true;
    resume.workers = 2;
    const StudyResults r = run_study(c, part, resume);
    CHECK(r.find(9, 2, ModelId::M3)->ok);
    CHECK(outputs(part) == outputs(full));

    // a changed configuration does not reuse checkpoints
    StudyConfig other = c;
    other.seed = 99;
    std::ostringstream log;
    RunOptions logged;
    logged.resume = true;
    logged.log = &log;
    run_study(other, part, logged);
    CHECK(log.str().find("cell scenario=9 replicate=1 model=M3 ok") != std::string::npos);

    std::filesystem::remove_all(full);
    std::filesystem::remove_all(part);
}
