#include "horizonlab/trajectory_io.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "horizonlab/errors.hpp"

namespace horizonlab::dynamics {

namespace {

std::string format_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<std::string> split_commas(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

bool parse_double(const std::string& s, double& out) {
  const char* b = s.data();
  const char* e = s.data() + s.size();
  while (b < e && *b == ' ') ++b;
  while (e > b && e[-1] == ' ') --e;
  if (b == e) return false;
  // strtod accepts "nan"/"inf"; the caller's finiteness check rejects them.
  std::string tmp(b, e);
  char* end = nullptr;
  out = std::strtod(tmp.c_str(), &end);
  return end == tmp.c_str() + tmp.size();
}

}  // namespace

std::string trajectory_to_csv(const Trajectory& traj) {
  std::string out = "t";
  for (int j = 0; j < traj.dim(); ++j) out += ",x" + std::to_string(j);
  out += '\n';
  for (Eigen::Index i = 0; i < traj.size(); ++i) {
    out += format_g17(traj.t0 + static_cast<double>(i) * traj.dt);
    for (int j = 0; j < traj.dim(); ++j) {
      out += ',';
      out += format_g17(traj.states(i, j));
    }
    out += '\n';
  }
  return out;
}

Trajectory trajectory_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw IngestionError("empty file", 0);
  const auto header = split_commas(line);
  if (header.size() < 2 || header[0] != "t") throw IngestionError("header must be t,x0,...,x{D-1}", 0);
  for (std::size_t j = 1; j < header.size(); ++j)
    if (header[j] != "x" + std::to_string(j - 1)) throw IngestionError("header column '" + header[j] + "' unexpected", 0);
  const std::size_t D = header.size() - 1;

  std::vector<double> times;
  std::vector<double> values;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    ++row;
    const auto cells = split_commas(line);
    if (cells.size() != D + 1)
      throw IngestionError("expected " + std::to_string(D + 1) + " columns, found " + std::to_string(cells.size()), row);
    for (std::size_t j = 0; j <= D; ++j) {
      double v;
      if (!parse_double(cells[j], v)) throw IngestionError("unparsable value '" + cells[j] + "'", row);
      if (!std::isfinite(v)) throw IngestionError("non-finite value in column " + header[j], row);
      (j == 0 ? times : values).push_back(v);
    }
  }
  if (row < 2) throw IngestionError("need at least two data rows", row);
  const double dt = times[1] - times[0];
  if (!(dt > 0.0)) throw IngestionError("time must increase", 2);
  for (std::size_t i = 2; i < times.size(); ++i) {
    const double step = times[i] - times[i - 1];
    if (std::abs(step - dt) > 1e-9 * std::abs(dt) + 1e-12 * std::abs(times[i]))
      throw IngestionError("non-uniform time spacing", i + 1);
  }
  Trajectory traj;
  traj.dt = dt;
  traj.t0 = times[0];
  traj.states.resize(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(D));
  for (std::size_t i = 0; i < row; ++i)
    for (std::size_t j = 0; j < D; ++j) traj.states(i, j) = values[i * D + j];
  return traj;
}

std::string trajectory_meta_json(const Trajectory& traj, const TrajectoryMeta& meta) {
  nlohmann::json j;
  j["dt"] = traj.dt;
  j["t0"] = traj.t0;
  j["seed"] = traj.seed;
  j["noise_sigma"] = traj.noise_sigma;
  j["system"] = meta.system;
  j["params"] = meta.params;
  if (traj.normalization) {
    j["normalization"] = {
        {"mean", std::vector<double>(traj.normalization->mean.data(),
                                     traj.normalization->mean.data() + traj.normalization->mean.size())},
        {"std", std::vector<double>(traj.normalization->stddev.data(),
                                    traj.normalization->stddev.data() + traj.normalization->stddev.size())}};
  }
  return j.dump(2) + "\n";
}

void apply_trajectory_meta(Trajectory& traj, const std::string& json_text, TrajectoryMeta* meta) {
  const auto j = nlohmann::json::parse(json_text);
  traj.seed = j.value("seed", std::uint64_t{0});
  // The sidecar carries dt exactly; the CSV time column only up to rounding.
  if (j.contains("dt")) {
    const double dt = j["dt"].get<double>();
    if (std::abs(dt - traj.dt) <= 1e-9 * std::abs(dt)) traj.dt = dt;
  }
  if (j.contains("t0")) {
    const double t0 = j["t0"].get<double>();
    if (std::abs(t0 - traj.t0) <= 1e-9 * std::max(1.0, std::abs(t0))) traj.t0 = t0;
  }
  traj.noise_sigma = j.value("noise_sigma", 0.0);
  if (j.contains("normalization")) {
    const auto m = j["normalization"]["mean"].get<std::vector<double>>();
    const auto s = j["normalization"]["std"].get<std::vector<double>>();
    Normalization n;
    n.mean = Eigen::Map<const Vector>(m.data(), static_cast<Eigen::Index>(m.size()));
    n.stddev = Eigen::Map<const Vector>(s.data(), static_cast<Eigen::Index>(s.size()));
    traj.normalization = n;
  }
  if (meta) {
    meta->system = j.value("system", std::string("external"));
    meta->params = j.value("params", std::vector<double>{});
  }
}

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("cannot open " + tmp.string() + " for writing");
    f.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!f) throw Error("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void save_trajectory(const std::filesystem::path& stem, const Trajectory& traj, const TrajectoryMeta& meta) {
  auto csv = stem;
  csv += ".csv";
  auto js = stem;
  js += ".json";
  write_file_atomic(csv, trajectory_to_csv(traj));
  write_file_atomic(js, trajectory_meta_json(traj, meta));
}

Trajectory load_trajectory(const std::filesystem::path& csv_path, TrajectoryMeta* meta) {
  Trajectory traj = trajectory_from_csv(read_file(csv_path));
  auto js = csv_path;
  js.replace_extension(".json");
  if (std::filesystem::exists(js)) apply_trajectory_meta(traj, read_file(js), meta);
  return traj;
}

}  // namespace horizonlab::dynamics
