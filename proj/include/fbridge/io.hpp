#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>

#include "fbridge/bridge.hpp"

namespace fbridge {

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Identity stamped into every artifact.
struct Provenance {
  std::uint64_t config_hash = 0;
  std::uint64_t seed = 0;

  /// "version=... config_hash=... seed=..." for CSV comment lines.
  std::string comment() const;
};

/// Shortest decimal text that round-trips the double.
std::string format_double(double v);

/// Header `traj_id,t,x_1..x_d,y_1_1..y_d_K` then one row per (trajectory, time).
void write_trajectories_csv(std::ostream& out, std::span<const Trajectory> trajectories,
                            const Provenance& provenance);

/// Polylines of the first two data coordinates, one color per trajectory.
void write_trajectories_svg(std::ostream& out, std::span<const Trajectory> trajectories,
                            const Provenance& provenance);

/// Writes the whole file or throws IoError.
void write_text_file(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);

}  // namespace fbridge
