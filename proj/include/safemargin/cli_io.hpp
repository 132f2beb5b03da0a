#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "safemargin/boundary.hpp"
#include "safemargin/gfun.hpp"
#include "safemargin/model.hpp"
#include "safemargin/ode.hpp"
#include "safemargin/oracle.hpp"

namespace safemargin {

// 17 significant digits: doubles round-trip exactly through the CSV files.
std::string format_double(double v);

std::uint64_t fnv1a64(const std::string& bytes);

void write_trajectory_csv(std::ostream& os, const SystemModel& model,
                          const Trajectory& traj);
void write_profile_csv(std::ostream& os, const GEvaluation& ge);
void write_grid_csv(std::ostream& os, const SystemModel& model,
                    const OracleGrid& grid);
void write_trace_csv(std::ostream& os, const SystemModel& model,
                     const std::vector<BoundaryPoint>& points);

nlohmann::json margin_to_json(const SystemModel& model, const MarginResult& result);
nlohmann::json boundary_point_to_json(const SystemModel& model,
                                      const BoundaryPoint& point);

// One machine-parseable record per invocation, emitted on stderr.
struct RunReport {
    std::string subcommand;
    std::string config_digest;
    double wall_ms = 0.0;
    std::vector<std::string> outputs;
    nlohmann::json summary;

    nlohmann::json to_json() const;
};

} // namespace safemargin
