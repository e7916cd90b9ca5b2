#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "horizonlab/dynamics.hpp"

namespace horizonlab::dynamics {

/// Sidecar metadata written next to a trajectory CSV.
struct TrajectoryMeta {
  std::string system = "external";
  std::vector<double> params;
};

/// CSV with header `t,x0,...,x{D-1}` and 17-significant-digit values.
std::string trajectory_to_csv(const Trajectory& traj);

/// Parses and validates a trajectory CSV. Throws IngestionError naming the
/// first bad data row for ragged rows, unparsable or non-finite values and
/// time spacing that is not uniform within 1e-9 relative.
Trajectory trajectory_from_csv(const std::string& text);

/// `{dt, seed, noise_sigma, system, params}` plus t0 and, when present,
/// the normalization statistics.
std::string trajectory_meta_json(const Trajectory& traj, const TrajectoryMeta& meta);

/// Restores seed, noise_sigma, t0 and normalization from a sidecar.
void apply_trajectory_meta(Trajectory& traj, const std::string& json_text, TrajectoryMeta* meta = nullptr);

/// Writes `<stem>.csv` and `<stem>.json` atomically.
void save_trajectory(const std::filesystem::path& stem, const Trajectory& traj, const TrajectoryMeta& meta);
/// Reads `<stem>.csv` and, if present, `<stem>.json`.
Trajectory load_trajectory(const std::filesystem::path& csv_path, TrajectoryMeta* meta = nullptr);

/// Write-to-temp then rename.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);
std::string read_file(const std::filesystem::path& path);

}  // namespace horizonlab::dynamics
