#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "safemargin/boundary.hpp"
#include "safemargin/cli_io.hpp"
#include "safemargin/equilibrium.hpp"
#include "safemargin/gfun.hpp"
#include "safemargin/model.hpp"
#include "safemargin/oracle.hpp"

namespace {

using namespace safemargin;
namespace fs = std::filesystem;

constexpr int kExitOk = 0;
constexpr int kExitNoConvergence = 2;
constexpr int kExitConfig = 3;

struct Cli {
    std::string subcommand;
    std::string config_path;
    std::string output_dir = ".";
    int jobs = 0;  // 0 = hardware default
    std::vector<double> p_override;

    // grid flags
    std::string box_spec;
    std::string res_spec;

    // boundary flags
    std::string axis_name;
    int n_points = 20;

    // oracle-margin flags
    int n_rays = 720;
    double ray_tol = 1e-6;
    double max_radius = 2.0;
};

void log_record(const nlohmann::json& j) {
    std::cerr << j.dump() << "\n";
}

int effective_jobs(int jobs) {
    if (jobs > 0)
        return jobs;
    unsigned hw = std::thread::hardware_concurrency();
    return hw ? static_cast<int>(hw) : 1;
}

Vec start_point(const SystemModel& model, const Cli& cli) {
    if (cli.p_override.empty())
        return model.p0;
    if (static_cast<int>(cli.p_override.size()) != model.m)
        throw ConfigError("--p must supply exactly m values");
    Vec p(model.m);
    for (int i = 0; i < model.m; ++i)
        p[i] = cli.p_override[static_cast<std::size_t>(i)];
    return p;
}

int axis_index(const SystemModel& model, const std::string& name) {
    for (int k = 0; k < model.m; ++k)
        if (model.param_names[static_cast<std::size_t>(k)] == name)
            return k;
    try {
        const int idx = std::stoi(name);
        if (idx >= 0 && idx < model.m)
            return idx;
    } catch (...) {
    }
    throw ConfigError("unknown parameter axis '" + name + "'");
}

std::vector<std::array<double, 2>> parse_box(const std::string& spec, int m) {
    std::vector<std::array<double, 2>> box;
    std::stringstream ss(spec);
    std::string part;
    while (std::getline(ss, part, ',')) {
        const auto colon = part.find(':');
        if (colon == std::string::npos)
            throw ConfigError("--box expects lo:hi pairs, e.g. 1.6:2.2,1.2:1.9");
        box.push_back({std::stod(part.substr(0, colon)), std::stod(part.substr(colon + 1))});
    }
    if (static_cast<int>(box.size()) != m)
        throw ConfigError("--box must give one lo:hi range per parameter");
    return box;
}

std::vector<int> parse_res(const std::string& spec, int m) {
    std::vector<int> res;
    std::stringstream ss(spec);
    std::string part;
    while (std::getline(ss, part, ','))
        res.push_back(std::stoi(part));
    if (static_cast<int>(res.size()) != m)
        throw ConfigError("--res must give one count per parameter");
    return res;
}

std::string write_text_file(const fs::path& path, const std::string& contents) {
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw std::runtime_error("cannot write output file " + path.string());
    out << contents;
    return path.string();
}

Trajectory simulate_flow(const SystemModel& model, const Vec& p) {
    SepInfo sep = find_sep(model, p, model.sep_guess);
    Vec y = disturbance_y(model, p, sep.x_star);
    auto pv = std::make_shared<Vec>(p);
    const SystemModel* mp = &model;
    FieldFn f = [mp, pv](const Vec& x, Vec& dx) {
        dx.resize(mp->n);
        for (int i = 0; i < mp->n; ++i)
            dx[i] = mp->field_tape[i].eval(x.data(), pv->data());
    };
    const Vec x_star = sep.x_star;
    const double conv_tol = model.recovery.conv_tol;
    StopFn near_sep = [x_star, conv_tol](double, const Vec& x) {
        return inf_norm(x - x_star) <= conv_tol;
    };
    return integrate(f, y, model.integrator, near_sep);
}

int run(const Cli& cli, const SystemModel& model, RunReport& report) {
    const fs::path outdir(cli.output_dir);
    fs::create_directories(outdir);
    const int jobs = effective_jobs(cli.jobs);

    if (cli.subcommand == "simulate") {
        const Vec p = start_point(model, cli);
        Trajectory traj = simulate_flow(model, p);
        std::ostringstream csv;
        write_trajectory_csv(csv, model, traj);
        report.outputs.push_back(write_text_file(outdir / "trajectory.csv", csv.str()));
        report.summary["samples"] = traj.times.size();
        report.summary["t_end"] = traj.times.back();
        return kExitOk;
    }

    if (cli.subcommand == "classify") {
        const Vec p = start_point(model, cli);
        RecoveryStatus status = classify(model, p);
        std::cout << to_string(status.kind);
        if (status.recovered())
            std::cout << " t_conv=" << format_double(status.t_conv);
        if (status.kind == RecoveryStatus::Kind::Diverged)
            std::cout << " t_div=" << format_double(status.t_div);
        std::cout << "\n";
        if (!status.note.empty())
            log_record({{"event", "warning"}, {"note", status.note}});
        report.summary["status"] = to_string(status.kind);
        return kExitOk;
    }

    if (cli.subcommand == "profile") {
        const Vec p = start_point(model, cli);
        GEvaluation ge = eval_G(model, p);
        std::ostringstream csv;
        write_profile_csv(csv, ge);
        report.outputs.push_back(write_text_file(outdir / "profile.csv", csv.str()));
        report.summary["status"] = to_string(ge.status.kind);
        if (ge.g) {
            report.summary["g"] = *ge.g;
            report.summary["t_hat"] = ge.t_hat;
            report.summary["sup_norm"] = ge.sup_norm;
        }
        return kExitOk;
    }

    if (cli.subcommand == "gmap" || cli.subcommand == "oracle-grid") {
        const bool with_g = cli.subcommand == "gmap";
        const auto box = parse_box(cli.box_spec, model.m);
        const auto res = parse_res(cli.res_spec, model.m);
        OracleGrid grid = classify_grid(model, box, res, with_g, jobs);
        std::ostringstream csv;
        write_grid_csv(csv, model, grid);
        const char* fname = with_g ? "gmap.csv" : "oracle_grid.csv";
        report.outputs.push_back(write_text_file(outdir / fname, csv.str()));
        std::size_t recovered = 0;
        for (auto f : grid.recovered)
            recovered += f;
        report.summary["points"] = grid.size();
        report.summary["recovered"] = recovered;
        report.summary["jobs"] = jobs;
        return kExitOk;
    }

    if (cli.subcommand == "boundary1d") {
        const Vec p = start_point(model, cli);
        const int axis = axis_index(model, cli.axis_name);
        BoundaryPoint bp = boundary_1d(model, p, axis, model.algo);
        nlohmann::json j = boundary_point_to_json(model, bp);
        j["axis"] = model.param_names[static_cast<std::size_t>(axis)];
        report.outputs.push_back(write_text_file(outdir / "boundary1d.json", j.dump(2) + "\n"));
        report.summary["iterations"] = bp.iterations;
        report.summary["g_residual"] = bp.g_residual;
        return kExitOk;
    }

    if (cli.subcommand == "trace2d") {
        const Vec p = start_point(model, cli);
        const int axis = cli.axis_name.empty() ? 0 : axis_index(model, cli.axis_name);
        BoundaryPoint seed = boundary_1d(model, p, axis, model.algo);
        std::vector<BoundaryPoint> points;
        int exit_code = kExitOk;
        try {
            points = trace_2d(model, seed.p, model.algo, cli.n_points);
        } catch (const CorrectorFailed& e) {
            log_record({{"event", "error"}, {"what", e.what()}});
            points = e.partial;
            report.summary["failed_index"] = e.failed_index;
            exit_code = kExitNoConvergence;
        }
        std::ostringstream csv;
        write_trace_csv(csv, model, points);
        report.outputs.push_back(write_text_file(outdir / "trace2d.csv", csv.str()));
        report.summary["points"] = points.size();
        return exit_code;
    }

    if (cli.subcommand == "margin") {
        const Vec p = start_point(model, cli);
        MarginResult result;
        int exit_code = kExitOk;
        try {
            result = margin_sqp(model, p, model.algo);
        } catch (const MaxIterations& e) {
            log_record({{"event", "error"}, {"what", e.what()}});
            result = e.partial;
            exit_code = kExitNoConvergence;
        }
        nlohmann::json j = margin_to_json(model, result);
        report.outputs.push_back(write_text_file(outdir / "margin.json", j.dump(2) + "\n"));
        report.summary["converged"] = result.converged;
        report.summary["iterations"] = result.iterations;
        if (result.converged)
            report.summary["margin"] = result.margin;
        return exit_code;
    }

    if (cli.subcommand == "oracle-margin") {
        const Vec p = start_point(model, cli);
        BruteMarginResult result = brute_margin(model, p, model.metric, cli.n_rays,
                                                cli.ray_tol, cli.max_radius, jobs);
        nlohmann::json j;
        j["margin"] = result.margin;
        nlohmann::json pb = nlohmann::json::array();
        for (int i = 0; i < model.m; ++i)
            pb.push_back(result.p_b[i]);
        j["p_b"] = pb;
        j["rays"] = cli.n_rays;
        j["tol"] = cli.ray_tol;
        j["param_names"] = model.param_names;
        report.outputs.push_back(write_text_file(outdir / "oracle_margin.json", j.dump(2) + "\n"));
        report.summary["margin"] = result.margin;
        return kExitOk;
    }

    throw ConfigError("unknown subcommand '" + cli.subcommand + "'");
}

} // namespace

int main(int argc, char** argv) {
    Cli cli;
    CLI::App app{"Safety margins of parameterized ODE systems via reciprocal "
                 "trajectory sensitivities"};
    app.require_subcommand(1);

    auto add_common = [&cli](CLI::App* sub) {
        sub->add_option("config", cli.config_path, "model config (JSON)")->required();
        sub->add_option("--output", cli.output_dir, "output directory");
        sub->add_option("--jobs", cli.jobs, "worker threads for grid/ray sweeps");
        sub->add_option("--p", cli.p_override, "override the nominal parameter vector")
            ->delimiter(',');
    };

    CLI::App* sim = app.add_subcommand("simulate", "post-disturbance trajectory CSV");
    add_common(sim);
    CLI::App* cls = app.add_subcommand("classify", "recovery status of a parameter point");
    add_common(cls);
    CLI::App* prof = app.add_subcommand("profile", "sensitivity-norm profile CSV");
    add_common(prof);
    CLI::App* gmap = app.add_subcommand("gmap", "G map over a parameter box");
    add_common(gmap);
    gmap->add_option("--box", cli.box_spec, "per-axis lo:hi, comma separated")->required();
    gmap->add_option("--res", cli.res_spec, "per-axis sample counts")->required();
    CLI::App* b1d = app.add_subcommand("boundary1d", "1-D boundary point along an axis");
    add_common(b1d);
    b1d->add_option("--axis", cli.axis_name, "free parameter (name or index)")->required();
    CLI::App* tr = app.add_subcommand("trace2d", "trace the recovery boundary (2-D)");
    add_common(tr);
    tr->add_option("--axis", cli.axis_name, "bootstrap axis for the first boundary point");
    tr->add_option("--points", cli.n_points, "number of points to trace");
    CLI::App* mar = app.add_subcommand("margin", "closest-point safety margin (SQP)");
    add_common(mar);
    CLI::App* ogrid = app.add_subcommand("oracle-grid", "brute-force recovery grid");
    add_common(ogrid);
    ogrid->add_option("--box", cli.box_spec, "per-axis lo:hi, comma separated")->required();
    ogrid->add_option("--res", cli.res_spec, "per-axis sample counts")->required();
    CLI::App* omar = app.add_subcommand("oracle-margin", "brute-force margin by ray fan");
    add_common(omar);
    omar->add_option("--rays", cli.n_rays, "number of fan rays");
    omar->add_option("--tol", cli.ray_tol, "bisection tolerance (P-metric)");
    omar->add_option("--max-radius", cli.max_radius, "search radius (P-metric)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) ? kExitConfig : kExitOk;
    }
    cli.subcommand = app.get_subcommands().front()->get_name();

    const auto t_start = std::chrono::steady_clock::now();
    RunReport report;
    report.subcommand = cli.subcommand;

    auto finish = [&](int code) {
        const auto t_end = std::chrono::steady_clock::now();
        report.wall_ms =
            std::chrono::duration<double, std::milli>(t_end - t_start).count();
        log_record(report.to_json());
        return code;
    };

    std::string config_bytes;
    {
        std::ifstream in(cli.config_path, std::ios::binary);
        if (!in) {
            log_record({{"event", "error"},
                        {"what", "cannot open config file '" + cli.config_path + "'"}});
            report.summary["error"] = "missing config";
            return finish(kExitConfig);
        }
        std::ostringstream ss;
        ss << in.rdbuf();
        config_bytes = ss.str();
    }
    {
        char digest[24];
        std::snprintf(digest, sizeof(digest), "fnv1a:%016llx",
                      static_cast<unsigned long long>(fnv1a64(config_bytes)));
        report.config_digest = digest;
    }

    log_record({{"event", "start"},
                {"subcommand", cli.subcommand},
                {"config", cli.config_path},
                {"digest", report.config_digest}});

    SystemModel model;
    try {
        model = build_model(nlohmann::json::parse(config_bytes));
    } catch (const nlohmann::json::parse_error& e) {
        log_record({{"event", "error"}, {"what", std::string("invalid JSON: ") + e.what()}});
        report.summary["error"] = "invalid JSON";
        return finish(kExitConfig);
    } catch (const std::exception& e) {
        log_record({{"event", "error"}, {"what", e.what()}});
        report.summary["error"] = e.what();
        return finish(kExitConfig);
    }

    try {
        return finish(run(cli, model, report));
    } catch (const ConfigError& e) {
        log_record({{"event", "error"}, {"what", e.what()}});
        report.summary["error"] = e.what();
        return finish(kExitConfig);
    } catch (const std::invalid_argument& e) {
        log_record({{"event", "error"}, {"what", e.what()}});
        report.summary["error"] = e.what();
        return finish(kExitConfig);
    } catch (const std::exception& e) {
        log_record({{"event", "error"}, {"what", e.what()}});
        report.summary["error"] = e.what();
        return finish(kExitNoConvergence);
    }
}
