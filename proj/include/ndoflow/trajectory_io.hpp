#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "ndoflow/odeint.hpp"

namespace ndoflow::io {

/// Reads a CSV with header `t,x1,...,xD` and strictly increasing t.
ode::Trajectory load_csv_trajectory(const std::filesystem::path& path);

/// Writes `t,x1,...,xD` (or the given column names) in shortest round-trip form.
void save_csv(const ode::Trajectory& traj, const std::filesystem::path& path,
              const std::vector<std::string>& names = {});

/// Writes `contents` to a temporary sibling and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

/// Shortest decimal form that reads back to the same double.
std::string format_double(double v);

}  // namespace ndoflow::io
