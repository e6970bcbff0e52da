#include "ndoflow/trajectory_io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

namespace ndoflow::io {

namespace {

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

std::string format_double(double v) { return fmt::format("{}", v); }

ode::Trajectory load_csv_trajectory(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++line_no;
    if (!trim(line).empty()) {
      header = split(line);
      break;
    }
  }
  if (header.size() < 2 || trim(header[0]) != "t") {
    throw Error(path.string() + ":" + std::to_string(line_no) + ": header must be t,x1,...,xD");
  }
  const std::size_t D = header.size() - 1;
  ode::Trajectory traj(D);
  std::vector<double> row(D + 1);
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto cells = split(line);
    const auto where = path.string() + ":" + std::to_string(line_no) + ": ";
    if (cells.size() != D + 1) {
      throw Error(where + "expected " + std::to_string(D + 1) + " fields, got " + std::to_string(cells.size()));
    }
    for (std::size_t k = 0; k <= D; ++k) {
      const std::string c = trim(cells[k]);
      const auto [ptr, ec] = std::from_chars(c.data(), c.data() + c.size(), row[k]);
      if (ec != std::errc() || ptr != c.data() + c.size() || c.empty() || !std::isfinite(row[k])) {
        throw Error(where + "invalid number '" + c + "'");
      }
    }
    if (!traj.empty() && !(row[0] > traj.times().back())) {
      throw Error(where + "time " + format_double(row[0]) + " is not strictly increasing");
    }
    traj.push_back(row[0], std::span<const double>(row).subspan(1));
  }
  if (traj.empty()) throw Error(path.string() + ": no data rows");
  return traj;
}

void save_csv(const ode::Trajectory& traj, const std::filesystem::path& path, const std::vector<std::string>& names) {
  if (!names.empty() && names.size() != traj.dim()) throw ShapeError("one column name per state dimension");
  std::string out = "t";
  for (std::size_t d = 0; d < traj.dim(); ++d) out += "," + (names.empty() ? "x" + std::to_string(d + 1) : names[d]);
  out += '\n';
  for (std::size_t i = 0; i < traj.size(); ++i) {
    out += format_double(traj.time(i));
    for (double v : traj.state(i)) out += "," + format_double(v);
    out += '\n';
  }
  write_file_atomic(path, out);
}

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out << contents;
    if (!out) throw Error("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace ndoflow::io
