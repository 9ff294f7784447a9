// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "trajedit/app/commands.hpp"

namespace trajedit::app {

namespace detail {

struct Common {
  std::optional<std::uint64_t> seed;
  int threads = 1;
  std::optional<std::string> out;
  std::optional<std::string> config;
};

inline void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--seed", c.seed, "random seed");
  sub->add_option("--threads", c.threads, "worker threads (results do not depend on it)")->check(CLI::PositiveNumber);
  sub->add_option("--out", c.out, "output directory (default: $TRAJEDIT_OUT_ROOT/<run> or runs/<run>)");
}

inline std::optional<fs::path> path_of(const std::optional<std::string>& s) {
  return s ? std::optional<fs::path>(*s) : std::nullopt;
}

}  // namespace detail

/// Parses `args` (without the program name) and runs the subcommand.
/// Exit codes: 0 success, 1 failed check or runtime error, 2 usage, parse or
/// I/O error.
inline int run_cli(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Trajectory-anchored 3D editing toolkit", "trajedit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);

  detail::Common c;
  std::string scene, camera, image, suite, session, variant, kind, manifest;

  auto* render = app.add_subcommand("render", "render a scene file to PPM images");
  render->add_option("scene", scene, "scene file")->required();
  render->add_option("--camera", camera, "camera id (default: every camera)");
  render->add_option("--image", image, "output image path (single camera)");
  detail::add_common(render, c);

  auto* verify = app.add_subcommand("verify", "run a property suite");
  verify->add_option("suite", suite, "schedules | samplers | equivalence | gradients | vcac | tas-identities | all")
      ->required();
  detail::add_common(verify, c);

  auto* tas = app.add_subcommand("tas", "run the trajectory-anchored editing loop on a session");
  tas->add_option("session", session, "session file");
  tas->add_option("--config", c.config, "session file (alternative to the positional argument)");
  detail::add_common(tas, c);

  auto* ablate = app.add_subcommand("ablate", "run an ablation next to the full method");
  ablate->add_option("variant", variant, "no-tas | no-vcac")->required();
  ablate->add_option("session", session, "session file");
  ablate->add_option("--config", c.config, "session file (alternative to the positional argument)");
  detail::add_common(ablate, c);

  auto* demo = app.add_subcommand("distill-demo", "2D pseudo-ground-truth reconstruction with analytic scores");
  demo->add_option("kind", kind, "SDS | VSD | DDS | ISM | NFSD")->required();
  demo->add_option("--config", c.config, "demo config ([demo] steps, lr, t_hi, t_lo, guidance, helper sources)");
  detail::add_common(demo, c);

  auto* rerun = app.add_subcommand("rerun", "replay the command recorded in a run manifest");
  rerun->add_option("manifest", manifest, "manifest.json of an earlier run")->required();
  rerun->add_option("--threads", c.threads, "worker threads")->check(CLI::PositiveNumber);
  rerun->add_option("--out", c.out, "output directory")->required();

  std::vector<std::string> argv_store{"trajedit"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& s : argv_store) argv.push_back(s.data());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForVersion&) {
    out << kToolVersion << "\n";
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n";
    return kUsage;
  }

  auto session_path = [&]() -> fs::path {
    if (!session.empty() && c.config) throw std::invalid_argument("give the session either positionally or via --config");
    if (!session.empty()) return session;
    if (c.config) return *c.config;
    throw std::invalid_argument("a session file is required");
  };

  try {
    if (*render) {
      RenderArgs a{scene, camera.empty() ? std::nullopt : std::optional<std::string>(camera),
                   image.empty() ? std::nullopt : std::optional<fs::path>(image), detail::path_of(c.out), c.threads};
      return cmd_render(a, out);
    }
    if (*verify) return cmd_verify(VerifyArgs{suite, c.seed.value_or(0), detail::path_of(c.out), c.threads}, out);
    if (*tas) return cmd_tas(TasArgs{session_path(), c.seed, detail::path_of(c.out), c.threads}, out);
    if (*ablate) {
      return cmd_ablate(AblateArgs{TasArgs{session_path(), c.seed, detail::path_of(c.out), c.threads}, variant}, out);
    }
    if (*demo) return cmd_distill_demo(DistillArgs{kind, detail::path_of(c.config), c.seed, detail::path_of(c.out), c.threads}, out);
    if (*rerun) {
      const auto m = RunManifest::load(manifest);
      if (!m.contains("command") || !m["command"].is_array()) throw ParseError(manifest, 0, "manifest has no command");
      auto replay = m["command"].get<std::vector<std::string>>();
      replay.insert(replay.end(), {"--out", *c.out, "--threads", std::to_string(c.threads)});
      return run_cli(replay, out, err);
    }
  } catch (const std::invalid_argument& e) {
    err << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const ParseError& e) {
    err << "parse error: " << e.what() << "\n";
    return kUsage;
  } catch (const IoError& e) {
    err << "I/O error: " << e.what() << "\n";
    return kUsage;
  } catch (const MissingFieldError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kFailed;
  }
  return kUsage;
}

}  // namespace trajedit::app
