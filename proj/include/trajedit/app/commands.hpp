// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "trajedit/app/session.hpp"
#include "trajedit/app/verify.hpp"
#include "trajedit/distill/demo.hpp"

namespace trajedit::app {

inline constexpr const char* kToolVersion = "trajedit 0.3.0";

enum ExitCode : int { kOk = 0, kFailed = 1, kUsage = 2 };

/// Output root: --out wins, then $TRAJEDIT_OUT_ROOT/<name>, then runs/<name>.
inline fs::path output_dir(const std::optional<fs::path>& out, const std::string& name) {
  if (out) return *out;
  const char* root = std::getenv("TRAJEDIT_OUT_ROOT");
  return fs::path(root && *root ? root : "runs") / name;
}

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path.string() + "' for writing");
  f << text;
  if (!f) throw IoError("write failed for '" + path.string() + "'");
}

/// manifest.json of a run. `command` is the normalized argument list that
/// `trajedit rerun` replays; everything else documents the run.
class RunManifest {
 public:
  RunManifest(fs::path dir, std::string subcommand, std::vector<std::string> command, std::uint64_t seed, int threads)
      : dir_(std::move(dir)) {
    j_ = {{"tool", kToolVersion},
          {"subcommand", std::move(subcommand)},
          {"command", std::move(command)},
          {"seed", seed},
          {"threads", threads},
          {"out_dir", fs::absolute(dir_).lexically_normal().string()},
          {"status", "running"},
          {"config", nlohmann::json::object()}};
  }

  nlohmann::json& config() { return j_["config"]; }
  const nlohmann::json& json() const { return j_; }

  void write() const { write_text(dir_ / "manifest.json", j_.dump(2) + "\n"); }

  /// Records status, result summary and the files present under the run dir.
  void finalize(const std::string& status, nlohmann::json result) {
    j_["status"] = status;
    j_["result"] = std::move(result);
    std::vector<std::string> files;
    if (fs::exists(dir_)) {
      for (const auto& e : fs::recursive_directory_iterator(dir_)) {
        if (!e.is_regular_file()) continue;
        const auto rel = fs::relative(e.path(), dir_).generic_string();
        if (rel != "manifest.json") files.push_back(rel);
      }
    }
    std::sort(files.begin(), files.end());
    j_["layout"] = files;
    write();
  }

  static nlohmann::json load(const fs::path& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open manifest '" + path.string() + "'");
    try {
      return nlohmann::json::parse(f);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path.string(), 0, e.what());
    }
  }

 private:
  fs::path dir_;
  nlohmann::json j_;
};

/// Runs `body` between the initial and the final manifest write. Failures are
/// recorded in the manifest and rethrown.
template <class Body>
int with_manifest(RunManifest& man, Body&& body) {
  man.write();
  try {
    nlohmann::json result;
    const int code = body(result);
    man.finalize(code == kOk ? "ok" : "failed", std::move(result));
    return code;
  } catch (const std::exception& e) {
    man.finalize("error", {{"error", e.what()}});
    throw;
  }
}

inline std::string abs_path(const fs::path& p) { return fs::absolute(p).lexically_normal().string(); }

inline std::string step_name(int n) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "step_%03d.ppm", n);
  return buf;
}

// ---- render -----------------------------------------------------------------

struct RenderArgs {
  fs::path scene;
  std::optional<std::string> camera;  // all cameras when unset
  std::optional<fs::path> image;      // explicit output file (single camera)
  std::optional<fs::path> out;
  int threads = 1;
};

inline int cmd_render(const RenderArgs& a, std::ostream& log = std::cout) {
  const auto scene = io::read_scene(a.scene);
  std::vector<splat::Camera> cams;
  if (a.camera) {
    cams.push_back(scene.camera(*a.camera));
  } else {
    cams = scene.cameras;
  }
  if (cams.empty()) throw ParseError(a.scene.string(), 0, "scene defines no cameras");
  if (a.image && cams.size() != 1) throw Error("--image needs --camera");

  const fs::path dir = output_dir(a.out, "render");
  std::vector<std::string> cmd{"render", abs_path(a.scene)};
  if (a.camera) cmd.insert(cmd.end(), {"--camera", *a.camera});
  if (a.image) cmd.insert(cmd.end(), {"--image", abs_path(*a.image)});
  RunManifest man(dir, "render", cmd, 0, a.threads);
  man.config() = {{"scene", abs_path(a.scene)}, {"primitives", scene.cloud.size()}};
  return with_manifest(man, [&](nlohmann::json& result) {
    ExecPolicy policy{a.threads};
    for (const auto& cam : cams) {
      const auto img = splat::render(scene.cloud, cam, scene.background, policy);
      const fs::path file = a.image ? *a.image : dir / (cam.id + ".ppm");
      io::write_netpbm(file, img);
      double lo[3] = {1e300, 1e300, 1e300}, hi[3] = {-1e300, -1e300, -1e300};
      for (int c = 0; c < 3; ++c)
        for (int y = 0; y < img.height(); ++y)
          for (int x = 0; x < img.width(); ++x) {
            lo[c] = std::min(lo[c], img.at(c, y, x));
            hi[c] = std::max(hi[c], img.at(c, y, x));
          }
      log << cam.id << " " << img.width() << "x" << img.height() << " -> " << file.string() << "  min (" << lo[0]
          << ", " << lo[1] << ", " << lo[2] << ")  max (" << hi[0] << ", " << hi[1] << ", " << hi[2] << ")\n";
      result[cam.id] = {{"file", file.string()}, {"min", {lo[0], lo[1], lo[2]}}, {"max", {hi[0], hi[1], hi[2]}}};
    }
    return kOk;
  });
}

// ---- verify -----------------------------------------------------------------

struct VerifyArgs {
  std::string suite;  // a suite name or "all"
  std::uint64_t seed = 0;
  std::optional<fs::path> out;
  int threads = 1;
};

inline bool is_suite(const std::string& s) {
  const auto& names = suite_names();
  return s == "all" || std::find(names.begin(), names.end(), s) != names.end();
}

inline int cmd_verify(const VerifyArgs& a, std::ostream& log = std::cout) {
  if (!is_suite(a.suite)) throw std::invalid_argument("unknown suite '" + a.suite + "'");
  const fs::path dir = output_dir(a.out, "verify-" + a.suite);
  RunManifest man(dir, "verify", {"verify", a.suite, "--seed", std::to_string(a.seed)}, a.seed, a.threads);
  return with_manifest(man, [&](nlohmann::json& result) {
    std::vector<std::string> suites = a.suite == "all" ? suite_names() : std::vector<std::string>{a.suite};
    nlohmann::json report = nlohmann::json::array();
    bool ok = true;
    for (const auto& name : suites) {
      const auto r = run_suite(name, a.seed);
      for (const auto& c : r.checks) {
        log << (c.passed() ? "PASS " : "FAIL ") << name << "/" << c.name << "  max_error " << c.observed
            << "  tolerance " << c.tolerance << "\n";
      }
      ok = ok && r.passed();
      report.push_back(r.to_json());
    }
    write_text(dir / "report.json", report.dump(2) + "\n");
    result = {{"passed", ok}, {"suites", suites}};
    return ok ? kOk : kFailed;
  });
}

// ---- tas / ablate -------------------------------------------------------------

struct TasArgs {
  fs::path session;
  std::optional<std::uint64_t> seed;
  std::optional<fs::path> out;
  int threads = 1;
};

struct RunSummary {
  std::vector<double> psnr;  // per camera, empty without reference views
  double min_psnr = 0.0;
  double disagreement = 0.0;
  double max_view_change = 0.0;  // max |final - initial| over views
  int inner_increases = 0;

  nlohmann::json to_json(const std::vector<std::string>& ids) const {
    nlohmann::json p = nlohmann::json::object();
    for (std::size_t i = 0; i < psnr.size(); ++i) p[ids[i]] = psnr[i];
    nlohmann::json j{{"psnr", p},
                     {"disagreement", disagreement},
                     {"max_view_change", max_view_change},
                     {"inner_increases", inner_increases}};
    if (!psnr.empty()) j["min_psnr"] = min_psnr;
    return j;
  }
};

inline RunSummary summarize(const LoadedSession& ls, const tas::TasResult& r) {
  const auto& s = ls.session;
  RunSummary out;
  for (std::size_t m = 0; m < s.cameras.size(); ++m) {
    out.max_view_change = std::max(out.max_view_change, max_abs_diff(r.final_views[m], r.initial_views[m]));
    if (!s.reference.empty()) out.psnr.push_back(tas::psnr(r.final_views[m], s.reference[m]));
  }
  if (!out.psnr.empty()) out.min_psnr = *std::min_element(out.psnr.begin(), out.psnr.end());
  const auto& edited = r.trajectory.empty() ? r.final_views : r.trajectory.back();
  out.disagreement = tas::reprojection_disagreement(edited, edit_masks(ls, edited), r.cloud, s.cameras, s.config.pool);
  out.inner_increases = r.log.total_inner_increases();
  return out;
}

/// Everything a TAS-style run leaves on disk, under `dir`.
inline void write_run_artifacts(const LoadedSession& ls, const tas::TasResult& r, const fs::path& dir) {
  const auto& s = ls.session;
  io::SceneFile final_scene = ls.scene;
  final_scene.cloud = r.cloud;
  io::write_scene(dir / "source_scene.txt", ls.scene);
  io::write_scene(dir / "final_scene.txt", final_scene);
  r.log.write_csv(dir / "metrics.csv");
  r.log.write_timings(dir / "timings.csv");

  std::string dist = "camera,n,t,d\n";
  const auto ann = s.config.annealing();
  for (std::size_t m = 0; m < s.cameras.size(); ++m) {
    const auto& id = s.cameras[m].id;
    const auto d = tas::trajectory_distances(r, m);
    for (std::size_t n = 0; n < r.trajectory.size(); ++n) {
      io::write_netpbm(dir / "trajectory" / id / step_name(static_cast<int>(n) + 1), r.trajectory[n][m]);
      dist += id + "," + std::to_string(n + 1) + "," + std::to_string(ann[n]) + "," + format_double(d[n]) + "\n";
    }
    io::write_netpbm(dir / "views" / (id + "_before.ppm"), r.initial_views[m]);
    io::write_netpbm(dir / "views" / (id + "_after.ppm"), r.final_views[m]);
    if (!s.reference.empty()) io::write_netpbm(dir / "views" / (id + "_reference.ppm"), s.reference[m]);
  }
  write_text(dir / "trajectory_distances.csv", dist);
}

inline void print_summary(std::ostream& log, const std::string& label, const RunSummary& sm,
                          const std::vector<std::string>& ids) {
  log << label << ":";
  for (std::size_t i = 0; i < sm.psnr.size(); ++i) log << "  " << ids[i] << " PSNR " << sm.psnr[i] << " dB";
  log << "  disagreement " << sm.disagreement << "  max view change " << sm.max_view_change << "  inner increases "
      << sm.inner_increases << "\n";
}

inline SessionOverrides overrides_of(const TasArgs& a) { return SessionOverrides{a.seed, a.threads}; }

inline std::vector<std::string> session_command(const std::string& sub, const TasArgs& a, std::uint64_t seed) {
  return {sub, abs_path(a.session), "--seed", std::to_string(seed)};
}

inline int cmd_tas(const TasArgs& a, std::ostream& log = std::cout) {
  auto ls = load_session(a.session, overrides_of(a));
  const fs::path dir = output_dir(a.out, "tas-" + std::to_string(ls.session.config.seed));
  RunManifest man(dir, "tas", session_command("tas", a, ls.session.config.seed), ls.session.config.seed, a.threads);
  man.config() = ls.snapshot;
  return with_manifest(man, [&](nlohmann::json& result) {
    const auto r = tas::run_tas(ls.session, dir / "metrics.csv");
    write_run_artifacts(ls, r, dir);
    const auto sm = summarize(ls, r);
    const auto ids = tas::camera_ids(ls.session.cameras);
    write_text(dir / "summary.json", sm.to_json(ids).dump(2) + "\n");
    print_summary(log, "tas", sm, ids);
    result = sm.to_json(ids);
    return kOk;
  });
}

struct AblateArgs {
  TasArgs run;
  std::string variant;  // no-tas | no-vcac
};

inline int cmd_ablate(const AblateArgs& a, std::ostream& log = std::cout) {
  if (a.variant != "no-tas" && a.variant != "no-vcac") {
    throw std::invalid_argument("unknown ablation variant '" + a.variant + "' (no-tas, no-vcac)");
  }
  auto ls = load_session(a.run.session, overrides_of(a.run));
  const auto seed = ls.session.config.seed;
  const fs::path dir = output_dir(a.run.out, "ablate-" + a.variant + "-" + std::to_string(seed));
  auto cmd = session_command("ablate", a.run, seed);
  cmd.insert(cmd.begin() + 1, a.variant);
  RunManifest man(dir, "ablate", cmd, seed, a.run.threads);
  man.config() = ls.snapshot;
  return with_manifest(man, [&](nlohmann::json& result) {
    const auto ids = tas::camera_ids(ls.session.cameras);
    const auto full = tas::run_tas(ls.session, dir / "full" / "metrics.csv");
    write_run_artifacts(ls, full, dir / "full");
    const auto full_sm = summarize(ls, full);

    LoadedSession variant = ls;
    tas::TasResult vr;
    if (a.variant == "no-tas") {
      vr = tas::run_no_tas(variant.session, dir / a.variant / "metrics.csv");
    } else {
      variant.session.config.vcac = false;
      reload_scorer(variant);
      vr = tas::run_tas(variant.session, dir / a.variant / "metrics.csv");
    }
    write_run_artifacts(variant, vr, dir / a.variant);
    const auto var_sm = summarize(variant, vr);

    print_summary(log, "full", full_sm, ids);
    print_summary(log, a.variant, var_sm, ids);
    const double ratio = full_sm.disagreement > 0.0 ? var_sm.disagreement / full_sm.disagreement : 0.0;
    const bool same_log = full.log.csv() == vr.log.csv();
    log << a.variant << " / full disagreement ratio " << ratio << (same_log ? "  (metrics identical)" : "") << "\n";
    result = {{"full", full_sm.to_json(ids)},
              {a.variant, var_sm.to_json(ids)},
              {"disagreement_ratio", ratio},
              {"identical_metrics", same_log}};
    write_text(dir / "comparison.json", result.dump(2) + "\n");
    return kOk;
  });
}

// ---- distill demo -------------------------------------------------------------

struct DistillArgs {
  std::string kind;
  std::optional<fs::path> config;
  std::optional<std::uint64_t> seed;
  std::optional<fs::path> out;
  int threads = 1;
};

inline distill::DistillDemoConfig read_demo_config(const std::string& kind, const std::optional<fs::path>& path) {
  distill::DistillDemoConfig c;
  try {
    c.kind = distill::parse_pseudo_gt_kind(kind);
  } catch (const Error& e) {
    throw std::invalid_argument(e.what());
  }
  if (!path) return c;
  const auto kv = io::KeyValueConfig::load(*path);
  c.steps = kv.get_int("demo.steps", c.steps);
  c.size = kv.get_int("demo.size", c.size);
  c.lr = kv.get_double("demo.lr", c.lr);
  c.t_hi = kv.get_int("demo.t_hi", c.t_hi);
  c.t_lo = kv.get_int("demo.t_lo", c.t_lo);
  c.guidance = kv.get_double("demo.guidance", c.guidance);
  if (auto v = kv.get("demo.seed")) c.seed = std::stoull(*v);
  auto helper = [&](const char* key, distill::HelperSource& h) {
    if (auto v = kv.get(std::string("demo.") + key)) {
      try {
        h = distill::parse_helper_source(*v);
      } catch (const Error& e) {
        throw ParseError(kv.source(), kv.line_of(std::string("demo.") + key), e.what());
      }
    }
  };
  helper("auxiliary", c.auxiliary);
  helper("reference", c.reference);
  helper("empty", c.empty);
  helper("negative", c.negative);
  kv.reject_unknown();
  return c;
}

inline int cmd_distill_demo(const DistillArgs& a, std::ostream& log = std::cout) {
  auto cfg = read_demo_config(a.kind, a.config);
  if (a.seed) cfg.seed = *a.seed;
  const std::string kind = distill::to_string(cfg.kind);
  const fs::path dir = output_dir(a.out, "distill-" + kind);
  std::vector<std::string> cmd{"distill-demo", kind, "--seed", std::to_string(cfg.seed)};
  if (a.config) cmd.insert(cmd.end(), {"--config", abs_path(*a.config)});
  RunManifest man(dir, "distill-demo", cmd, cfg.seed, a.threads);
  man.config() = {{"kind", kind},           {"steps", cfg.steps}, {"size", cfg.size},
                  {"lr", cfg.lr},           {"t_hi", cfg.t_hi},   {"t_lo", cfg.t_lo},
                  {"guidance", cfg.guidance}, {"seed", cfg.seed}};
  return with_manifest(man, [&](nlohmann::json& result) {
    const auto r = distill::run_distill_demo(cfg, diffusion::default_schedule());
    std::string csv = "step,t,l2_to_target,oracle_error\n";
    for (std::size_t k = 0; k < r.distance.size(); ++k) {
      csv += std::to_string(k + 1) + "," + std::to_string(r.timesteps[k]) + "," + format_double(r.distance[k]) + "," +
             format_double(r.oracle_error[k]) + "\n";
      io::write_netpbm(dir / "steps" / step_name(static_cast<int>(k) + 1), r.snapshots[k]);
    }
    write_text(dir / "loss.csv", csv);
    io::write_netpbm(dir / "initial.ppm", r.initial);
    io::write_netpbm(dir / "target.ppm", r.target);
    io::write_netpbm(dir / "final.ppm", r.final);
    const double oracle = r.oracle_error.empty() ? 0.0 : *std::max_element(r.oracle_error.begin(), r.oracle_error.end());
    log << kind << ": L2 to target " << l2_distance(r.initial, r.target) << " -> " << r.final_distance()
        << "  max oracle error " << oracle << "\n";
    result = {{"initial_distance", l2_distance(r.initial, r.target)},
              {"final_distance", r.final_distance()},
              {"max_oracle_error", oracle}};
    return kOk;
  });
}

}  // namespace trajedit::app
