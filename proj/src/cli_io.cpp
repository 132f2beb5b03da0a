#include "safemargin/cli_io.hpp"

#include <cmath>
#include <cstdio>

namespace safemargin {

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::uint64_t fnv1a64(const std::string& bytes) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

void write_trajectory_csv(std::ostream& os, const SystemModel& model,
                          const Trajectory& traj) {
    os << "t";
    for (const auto& name : model.state_names)
        os << "," << name;
    os << "\n";
    for (std::size_t k = 0; k < traj.times.size(); ++k) {
        os << format_double(traj.times[k]);
        for (int i = 0; i < model.n; ++i)
            os << "," << format_double(traj.states[k][i]);
        os << "\n";
    }
}

void write_profile_csv(std::ostream& os, const GEvaluation& ge) {
    os << "t,sens_norm\n";
    for (const auto& [t, nu] : ge.profile)
        os << format_double(t) << "," << format_double(nu) << "\n";
}

void write_grid_csv(std::ostream& os, const SystemModel& model,
                    const OracleGrid& grid) {
    for (int k = 0; k < model.m; ++k)
        os << (k ? "," : "") << model.param_names[k];
    os << ",recovered,G\n";
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const Vec p = grid.point(i);
        for (int k = 0; k < model.m; ++k)
            os << (k ? "," : "") << format_double(p[k]);
        os << "," << (grid.recovered[i] ? 1 : 0) << ",";
        if (grid.has_g && !std::isnan(grid.g[i]))
            os << format_double(grid.g[i]);
        os << "\n";
    }
}

void write_trace_csv(std::ostream& os, const SystemModel& model,
                     const std::vector<BoundaryPoint>& points) {
    for (int k = 0; k < model.m; ++k)
        os << (k ? "," : "") << model.param_names[k];
    os << ",g_residual\n";
    for (const auto& bp : points) {
        for (int k = 0; k < model.m; ++k)
            os << (k ? "," : "") << format_double(bp.p[k]);
        os << "," << format_double(bp.g_residual) << "\n";
    }
}

namespace {

nlohmann::json vec_to_json(const Vec& v) {
    nlohmann::json arr = nlohmann::json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i)
        arr.push_back(v[i]);
    return arr;
}

} // namespace

nlohmann::json margin_to_json(const SystemModel& model, const MarginResult& result) {
    nlohmann::json j;
    j["p_star"] = vec_to_json(result.p_star);
    j["margin"] = result.margin;
    j["epsilon"] = result.epsilon;
    j["converged"] = result.converged;
    j["iterations"] = result.iterations;
    j["param_names"] = model.param_names;
    nlohmann::json hist = nlohmann::json::array();
    for (const auto& h : result.history) {
        nlohmann::json e;
        e["p"] = vec_to_json(h.p);
        e["g"] = h.g;
        e["backtrack_m"] = h.backtrack_m;
        hist.push_back(e);
    }
    j["history"] = hist;
    return j;
}

nlohmann::json boundary_point_to_json(const SystemModel& model,
                                      const BoundaryPoint& point) {
    nlohmann::json j;
    j["p"] = vec_to_json(point.p);
    j["g_residual"] = point.g_residual;
    j["iterations"] = point.iterations;
    j["param_names"] = model.param_names;
    if (point.eta.size())
        j["eta"] = vec_to_json(point.eta);
    return j;
}

nlohmann::json RunReport::to_json() const {
    nlohmann::json j;
    j["report"] = {
        {"subcommand", subcommand},
        {"config_digest", config_digest},
        {"wall_ms", wall_ms},
        {"outputs", outputs},
        {"summary", summary},
    };
    return j;
}

} // namespace safemargin
