#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "safemargin/cli_io.hpp"
#include "test_support.hpp"

using namespace safemargin;
namespace fs = std::filesystem;

namespace {

const char* kCli = SAFEMARGIN_CLI_PATH;

std::string smib_config_path() {
    return std::string(SAFEMARGIN_CONFIG_DIR) + "/smib.json";
}

int run_cli(const std::string& args, const fs::path& workdir) {
    fs::create_directories(workdir);
    const std::string cmd = std::string(kCli) + " " + args + " >" +
                            (workdir / "stdout.txt").string() + " 2>" +
                            (workdir / "stderr.txt").string();
    const int rc = std::system(cmd.c_str());
    return WEXITSTATUS(rc);
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path temp_dir(const std::string& tag) {
    fs::path dir = fs::temp_directory_path() / ("safemargin_cli_" + tag);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

} // namespace

TEST_CASE("classify prints a status line and exits 0") {
    const fs::path dir = temp_dir("classify");
    const int rc = run_cli("classify " + smib_config_path() + " --output " + dir.string(), dir);
    CHECK(rc == 0);
    const std::string out = slurp(dir / "stdout.txt");
    CHECK(out.substr(0, 9) == "Recovered");
}

TEST_CASE("missing config exits 3 with a diagnostic") {
    const fs::path dir = temp_dir("missing");
    const int rc = run_cli("classify /nonexistent/nope.json", dir);
    CHECK(rc == 3);
    CHECK(slurp(dir / "stderr.txt").find("cannot open config") != std::string::npos);
}

TEST_CASE("invalid config exits 3") {
    const fs::path dir = temp_dir("badcfg");
    nlohmann::json cfg = sm_test::load_config_json("smib.json");
    cfg["metric"]["P"] = {{1.0, 0.0}, {0.0, -1.0}};
    const fs::path bad = dir / "bad.json";
    std::ofstream(bad) << cfg.dump(2);
    const int rc = run_cli("classify " + bad.string(), dir);
    CHECK(rc == 3);
}

TEST_CASE("simulate and profile emit the documented CSV headers") {
    const fs::path dir = temp_dir("csv");
    CHECK(run_cli("simulate " + smib_config_path() + " --output " + dir.string(), dir) == 0);
    std::string traj = slurp(dir / "trajectory.csv");
    CHECK(traj.substr(0, traj.find('\n')) == "t,x1,x2");

    CHECK(run_cli("profile " + smib_config_path() + " --output " + dir.string(), dir) == 0);
    std::string prof = slurp(dir / "profile.csv");
    CHECK(prof.substr(0, prof.find('\n')) == "t,sens_norm");
}

TEST_CASE("gmap output is byte-identical across --jobs") {
    const fs::path d1 = temp_dir("gmap1");
    const fs::path d2 = temp_dir("gmap2");
    const std::string common =
        "gmap " + smib_config_path() + " --box 1.88:1.92,1.48:1.53 --res 5,5";
    CHECK(run_cli(common + " --jobs 1 --output " + d1.string(), d1) == 0);
    CHECK(run_cli(common + " --jobs 2 --output " + d2.string(), d2) == 0);
    const std::string a = slurp(d1 / "gmap.csv");
    const std::string b = slurp(d2 / "gmap.csv");
    CHECK(a == b);
    CHECK(a.substr(0, a.find('\n')) == "p1,p2,recovered,G");

    // and a second identical run is byte-identical too (determinism)
    const fs::path d3 = temp_dir("gmap3");
    CHECK(run_cli(common + " --jobs 2 --output " + d3.string(), d3) == 0);
    CHECK(slurp(d3 / "gmap.csv") == a);
}

TEST_CASE("oracle-grid emits the grid header with empty G column") {
    const fs::path dir = temp_dir("ogrid");
    CHECK(run_cli("oracle-grid " + smib_config_path() +
                      " --box 1.88:1.92,1.48:1.53 --res 3,3 --output " + dir.string(),
                  dir) == 0);
    const std::string csv = slurp(dir / "oracle_grid.csv");
    CHECK(csv.substr(0, csv.find('\n')) == "p1,p2,recovered,G");
    // data lines end with the empty G field
    const auto second_line =
        csv.substr(csv.find('\n') + 1, csv.find('\n', csv.find('\n') + 1) - csv.find('\n') - 1);
    CHECK(second_line.back() == ',');
}

TEST_CASE("margin subcommand writes a structured result") {
    const fs::path dir = temp_dir("margin");
    CHECK(run_cli("margin " + smib_config_path() + " --output " + dir.string(), dir) == 0);
    nlohmann::json j = nlohmann::json::parse(slurp(dir / "margin.json"));
    CHECK(j["converged"].get<bool>());
    CHECK(j["margin"].get<double>() > 0.0);
    CHECK(j["history"].size() >= 2);
    CHECK(j["param_names"][0] == "p1");
}

TEST_CASE("non-convergence exits 2 and still writes partial results") {
    const fs::path dir = temp_dir("noconv");
    nlohmann::json cfg = sm_test::load_config_json("smib.json");
    cfg["algorithm"]["max_iter"] = 1;
    const fs::path path = dir / "tight.json";
    std::ofstream(path) << cfg.dump(2);
    const int rc = run_cli("margin " + path.string() + " --output " + dir.string(), dir);
    CHECK(rc == 2);
    nlohmann::json j = nlohmann::json::parse(slurp(dir / "margin.json"));
    CHECK_FALSE(j["converged"].get<bool>());
    CHECK(j["history"].size() >= 1);
}

TEST_CASE("run report is emitted once per invocation on stderr") {
    const fs::path dir = temp_dir("report");
    CHECK(run_cli("classify " + smib_config_path() + " --output " + dir.string(), dir) == 0);
    std::istringstream err(slurp(dir / "stderr.txt"));
    std::string line;
    int reports = 0;
    while (std::getline(err, line)) {
        if (line.empty())
            continue;
        nlohmann::json j = nlohmann::json::parse(line);  // every record is JSON
        if (j.contains("report")) {
            ++reports;
            CHECK(j["report"]["subcommand"] == "classify");
            CHECK(j["report"]["config_digest"].get<std::string>().substr(0, 6) == "fnv1a:");
            CHECK(j["report"]["wall_ms"].get<double>() >= 0.0);
        }
    }
    CHECK(reports == 1);
}

TEST_CASE("format_double round-trips") {
    for (double v : {0.1, 1.0 / 3.0, 1.5070821370, -2.718281828459045, 1e-17}) {
        CHECK(std::stod(format_double(v)) == v);
    }
}
