// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "trajedit/core/errors.hpp"
#include "trajedit/splat/cloud.hpp"

namespace trajedit::io {

// Scene files are line oriented; '#' starts a comment.
//
//   background <r> <g> <b>
//   camera <id> orbit <degrees> <distance> <extent> <width> <height>
//   camera <id> pose <r00 .. r22> <tx> <ty> <tz> <extent> <width> <height>
//   gaussian <x> <y> <z> <scale> <r> <g> <b> <opacity>
//   gaussian_raw <x> <y> <z> <log_scale> <r> <g> <b> <logit_opacity>
//
// write_scene emits gaussian_raw and pose lines with 17 significant digits,
// so a round trip is exact.

struct SceneFile {
  splat::GaussianCloud cloud;
  std::vector<splat::Camera> cameras;
  splat::Vec3<double> background{0.0, 0.0, 0.0};

  const splat::Camera& camera(const std::string& id) const {
    for (const auto& c : cameras)
      if (c.id == id) return c;
    throw MissingFieldError("scene has no camera '" + id + "'");
  }
};

namespace detail {

inline std::vector<double> numbers(std::istringstream& in, std::size_t count, const std::string& src, int line,
                                   const std::string& what) {
  std::vector<double> v(count);
  for (auto& x : v)
    if (!(in >> x)) throw ParseError(src, line, what + ": expected " + std::to_string(count) + " numbers");
  std::string extra;
  if (in >> extra) throw ParseError(src, line, what + ": unexpected trailing token '" + extra + "'");
  return v;
}

}  // namespace detail

inline SceneFile parse_scene(std::istream& in, const std::string& src = "<scene>") {
  SceneFile s;
  std::string raw;
  int line = 0;
  while (std::getline(in, raw)) {
    ++line;
    if (const auto hash = raw.find('#'); hash != std::string::npos) raw.erase(hash);
    std::istringstream ls(raw);
    std::string kind;
    if (!(ls >> kind)) continue;
    if (kind == "background") {
      const auto v = detail::numbers(ls, 3, src, line, "background");
      s.background = {v[0], v[1], v[2]};
    } else if (kind == "gaussian" || kind == "gaussian_raw") {
      const auto v = detail::numbers(ls, 8, src, line, kind);
      splat::GaussianParams<double> g;
      g.position = {v[0], v[1], v[2]};
      g.color = {v[4], v[5], v[6]};
      if (kind == "gaussian") {
        if (!(v[3] > 0.0)) throw ParseError(src, line, "gaussian: scale must be positive");
        if (!(v[7] > 0.0 && v[7] < 1.0)) throw ParseError(src, line, "gaussian: opacity must lie in (0, 1)");
        g.log_scale = std::log(v[3]);
        g.logit_opacity = splat::logit(v[7]);
      } else {
        g.log_scale = v[3];
        g.logit_opacity = v[7];
      }
      s.cloud.primitives.push_back(g);
    } else if (kind == "camera") {
      std::string id, mode;
      if (!(ls >> id >> mode)) throw ParseError(src, line, "camera: expected '<id> orbit|pose ...'");
      for (const auto& c : s.cameras)
        if (c.id == id) throw ParseError(src, line, "camera '" + id + "' defined twice");
      splat::Camera cam;
      if (mode == "orbit") {
        const auto v = detail::numbers(ls, 5, src, line, "camera orbit");
        cam = splat::orbit_camera(id, v[0], v[1], v[2], static_cast<int>(v[3]), static_cast<int>(v[4]));
      } else if (mode == "pose") {
        const auto v = detail::numbers(ls, 15, src, line, "camera pose");
        cam.id = id;
        for (int i = 0; i < 9; ++i) cam.rotation[i] = v[i];
        cam.translation = {v[9], v[10], v[11]};
        cam.ortho_extent = v[12];
        cam.width = static_cast<int>(v[13]);
        cam.height = static_cast<int>(v[14]);
      } else {
        throw ParseError(src, line, "camera: unknown mode '" + mode + "' (orbit, pose)");
      }
      try {
        cam.validate();
      } catch (const Error& e) {
        throw ParseError(src, line, e.what());
      }
      s.cameras.push_back(cam);
    } else {
      throw ParseError(src, line, "unknown record '" + kind + "'");
    }
  }
  try {
    s.cloud.validate();
  } catch (const Error& e) {
    throw ParseError(src, 0, e.what());
  }
  return s;
}

inline SceneFile read_scene(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open scene file '" + path.string() + "'");
  return parse_scene(f, path.string());
}

inline std::string format_scene(const SceneFile& s) {
  std::ostringstream os;
  char buf[512];
  std::snprintf(buf, sizeof buf, "background %.17g %.17g %.17g\n", s.background[0], s.background[1], s.background[2]);
  os << buf;
  for (const auto& c : s.cameras) {
    os << "camera " << c.id << " pose";
    for (double r : c.rotation) {
      std::snprintf(buf, sizeof buf, " %.17g", r);
      os << buf;
    }
    std::snprintf(buf, sizeof buf, " %.17g %.17g %.17g %.17g %d %d\n", c.translation[0], c.translation[1],
                  c.translation[2], c.ortho_extent, c.width, c.height);
    os << buf;
  }
  for (const auto& g : s.cloud.primitives) {
    std::snprintf(buf, sizeof buf, "gaussian_raw %.17g %.17g %.17g %.17g %.17g %.17g %.17g %.17g\n", g.position[0],
                  g.position[1], g.position[2], g.log_scale, g.color[0], g.color[1], g.color[2], g.logit_opacity);
    os << buf;
  }
  return os.str();
}

inline void write_scene(const std::filesystem::path& path, const SceneFile& s) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path.string() + "' for writing");
  f << format_scene(s);
}

}  // namespace trajedit::io
