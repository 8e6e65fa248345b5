// shapeopt: run, taylor, genmesh, info.
//
// Exit codes: 0 success (run converged or hit max_outer, Taylor PASS),
// 1 configuration or input error, 2 optimizer stall / Taylor FAIL.

#include <CLI11.hpp>

#include <iostream>

#include "shapeopt/app/run.hpp"

using namespace shapeopt;

namespace {

app::RunConfig load(const std::string& path, const std::string& output, long long seed) {
  app::RunConfig cfg = app::load_config(path);
  if (!output.empty()) cfg.output = output;
  if (seed >= 0) cfg.seed = static_cast<unsigned>(seed);
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App cli{"Moving-mesh shape optimization"};
  cli.require_subcommand(1);

  std::string config, output;
  long long seed = -1;

  auto* run = cli.add_subcommand("run", "optimize the configured problem");
  run->add_option("--config", config, "JSON run configuration")->required()->check(CLI::ExistingFile);
  run->add_option("--output", output, "output directory (overrides config)");
  run->add_option("--seed", seed, "random seed (overrides config)");

  auto* taylor = cli.add_subcommand("taylor", "Taylor remainder test of the reduced gradient");
  taylor->add_option("--config", config, "JSON run configuration")->required()->check(CLI::ExistingFile);
  taylor->add_option("--seed", seed, "random seed for the directions (overrides config)");
  taylor->add_option("--output", output, "unused; accepted for symmetry");

  std::string kind = "channel";
  double length = 0.0, height = 1.0, offset = 0.0;
  int nx = 0, ny = 0;
  auto* gen = cli.add_subcommand("genmesh", "write a generated mesh and its VTK preview");
  gen->add_option("kind", kind, "channel | bent_channel | cantilever")
      ->check(CLI::IsMember({"channel", "bent_channel", "cantilever"}));
  gen->add_option("--length", length, "domain length (default 3 for channels, 2 for the cantilever)");
  gen->add_option("--height", height, "domain height");
  gen->add_option("--offset", offset, "vertical shift of the bent channel outlet");
  gen->add_option("--nx", nx, "cells along x");
  gen->add_option("--ny", ny, "cells along y");
  gen->add_option("--output", output, "output directory")->required();

  std::string mesh_path;
  auto* info = cli.add_subcommand("info", "print mesh statistics");
  info->add_option("mesh", mesh_path, "mesh file (MSH 2.2 ASCII or native)")->required()->check(CLI::ExistingFile);

  CLI11_PARSE(cli, argc, argv);

  try {
    if (run->parsed()) {
      const auto cfg = load(config, output, seed);
      const auto res = app::run_optimization(cfg, cfg.output, &std::cout);
      return res.exit_code;
    }
    if (taylor->parsed()) {
      const auto cfg = load(config, output, seed);
      return app::run_taylor(cfg, &std::cout).pass ? 0 : 2;
    }
    if (gen->parsed()) {
      app::MeshConfig m;
      m.generator = kind;
      const bool cant = kind == "cantilever";
      m.length = length > 0.0 ? length : (cant ? 2.0 : 3.0);
      m.height = height;
      m.offset = offset;
      m.nx = nx > 0 ? nx : (cant ? 40 : 36);
      m.ny = ny > 0 ? ny : (cant ? 20 : 12);
      const TriMesh mesh = app::make_mesh(m);
      app::fs::create_directories(output);
      const app::fs::path dir(output);
      app::write_text_file(dir / (kind + ".msh2d"), write_native(mesh));
      app::write_text_file(dir / (kind + ".vtk"), write_vtk(mesh));
      std::cout << app::mesh_report(mesh);
      return 0;
    }
    if (info->parsed()) {
      std::cout << app::mesh_report(parse_mesh_file_text(app::read_text_file(mesh_path)));
      return 0;
    }
  } catch (const ParseError& e) {
    std::cerr << "error: " << (info->parsed() ? mesh_path + ": " : std::string()) << e.what() << "\n";
    return 1;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
