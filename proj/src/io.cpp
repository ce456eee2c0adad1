#include "fbridge/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <ostream>
#include <sstream>

#include "fbridge/version.hpp"

namespace fbridge {

std::string Provenance::comment() const {
  return std::string("version=") + kVersion + " config_hash=" + hash_hex(config_hash) +
         " seed=" + std::to_string(seed);
}

std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

void write_trajectories_csv(std::ostream& out, std::span<const Trajectory> trajectories,
                            const Provenance& provenance) {
  out << "# " << provenance.comment() << '\n';
  int dim = 0;
  int num_ou = 0;
  if (!trajectories.empty() && !trajectories.front().states.empty()) {
    dim = trajectories.front().states.front().dim();
    num_ou = trajectories.front().states.front().num_ou();
  }
  out << "traj_id,t";
  for (int i = 0; i < dim; ++i) out << ",x_" << i + 1;
  for (int i = 0; i < dim; ++i) {
    for (int k = 0; k < num_ou; ++k) out << ",y_" << i + 1 << '_' << k + 1;
  }
  out << '\n';
  for (std::size_t id = 0; id < trajectories.size(); ++id) {
    const Trajectory& tr = trajectories[id];
    for (std::size_t s = 0; s < tr.times.size(); ++s) {
      const AugmentedState& z = tr.states[s];
      out << id << ',' << format_double(tr.times[s]);
      for (int i = 0; i < dim; ++i) out << ',' << format_double(z.x(i));
      for (int i = 0; i < dim; ++i) {
        for (int k = 0; k < num_ou; ++k) out << ',' << format_double(z.y(i, k));
      }
      out << '\n';
    }
  }
}

void write_trajectories_svg(std::ostream& out, std::span<const Trajectory> trajectories,
                            const Provenance& provenance) {
  constexpr double kSize = 600.0;
  constexpr double kMargin = 40.0;
  double lo_x = std::numeric_limits<double>::infinity(), hi_x = -lo_x;
  double lo_y = lo_x, hi_y = -lo_x;
  for (const Trajectory& tr : trajectories) {
    for (const AugmentedState& z : tr.states) {
      const double x = z.x(0);
      const double y = z.dim() > 1 ? z.x(1) : 0.0;
      lo_x = std::min(lo_x, x);
      hi_x = std::max(hi_x, x);
      lo_y = std::min(lo_y, y);
      hi_y = std::max(hi_y, y);
    }
  }
  if (!std::isfinite(lo_x)) lo_x = hi_x = lo_y = hi_y = 0.0;
  const double span = std::max({hi_x - lo_x, hi_y - lo_y, 1e-9});
  const double scale = (kSize - 2 * kMargin) / span;
  auto px = [&](double x) { return kMargin + (x - lo_x) * scale; };
  auto py = [&](double y) { return kSize - kMargin - (y - lo_y) * scale; };

  out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  out << "<!-- " << provenance.comment() << " -->\n";
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << kSize << "\" height=\"" << kSize
      << "\" viewBox=\"0 0 " << kSize << ' ' << kSize << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  const double x_axis = std::clamp(py(0.0), kMargin, kSize - kMargin);
  const double y_axis = std::clamp(px(0.0), kMargin, kSize - kMargin);
  out << "<line x1=\"" << kMargin << "\" y1=\"" << x_axis << "\" x2=\"" << kSize - kMargin << "\" y2=\"" << x_axis
      << "\" stroke=\"#888\" stroke-width=\"1\"/>\n";
  out << "<line x1=\"" << y_axis << "\" y1=\"" << kMargin << "\" x2=\"" << y_axis << "\" y2=\"" << kSize - kMargin
      << "\" stroke=\"#888\" stroke-width=\"1\"/>\n";
  const std::size_t n = trajectories.size();
  for (std::size_t id = 0; id < n; ++id) {
    const int hue = n > 1 ? static_cast<int>(300.0 * static_cast<double>(id) / static_cast<double>(n - 1)) : 210;
    out << "<polyline fill=\"none\" stroke=\"hsl(" << hue << ",70%,45%)\" stroke-width=\"1\" points=\"";
    const Trajectory& tr = trajectories[id];
    for (std::size_t s = 0; s < tr.states.size(); ++s) {
      const AugmentedState& z = tr.states[s];
      char buf[64];
      std::snprintf(buf, sizeof buf, "%.2f,%.2f", px(z.x(0)), py(z.dim() > 1 ? z.x(1) : 0.0));
      out << (s ? " " : "") << buf;
    }
    out << "\"/>\n";
  }
  out << "</svg>\n";
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << content;
  out.flush();
  if (!out) throw IoError("failed writing '" + path + "'");
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace fbridge
