#include <ralc/mission.hpp>

#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>

using namespace ralc;

int main(int argc, char** argv) {
  CLI::App app{"Region-based active loop closure exploration runner"};
  app.require_subcommand(1);

  RunConfig config;
  std::string config_path, algo = "ralc", inject;
  auto* run = app.add_subcommand("run", "Run one exploration mission");
  run->add_option("--env", config.env_path, "Environment file")->required();
  run->add_option("--config", config_path, "Parameter file (key = value)");
  run->add_option("--algo", algo, "ralc | ralc-no-marg | alc-baseline");
  run->add_option("--seed", config.seed, "Random seed");
  run->add_option("--out", config.out_dir, "Output directory (RALC_OUT overrides)");
  run->add_option("--inject-failure", inject, "region=<id>,kind=<no_path|cholesky>[,after=<cycles>]");
  bool noiseless = false;
  run->add_flag("--noiseless", noiseless, "Zero odometry and closure noise (reference run)");

  std::vector<std::string> dirs;
  std::string ref, map_ref, json_out;
  auto* compare = app.add_subcommand("compare", "Tabulate finished runs against a reference run");
  compare->add_option("--ref", ref, "Reference run directory")->required();
  compare->add_option("--map-ref", map_ref, "Run directory whose final map is the map-quality reference");
  compare->add_option("--json", json_out, "Also write the report as JSON");
  compare->add_option("dirs", dirs, "Run directories");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  if (*run) {
    try {
      if (const char* env_out = std::getenv("RALC_OUT"); env_out && *env_out) config.out_dir = env_out;
      if (config.out_dir.empty()) throw ConfigError("an output directory is required (--out or RALC_OUT)");
      const auto a = parse_algorithm(algo);
      if (!a) throw ConfigError("unknown algorithm '" + algo + "'");
      config.algorithm = *a;
      if (!config_path.empty()) apply_config_file(config, config_path);
      if (noiseless) config.make_noiseless();
      if (!inject.empty()) config.inject = parse_injection(inject);
      const RunResult r = run_mission(config);
      std::cout << to_string(config.algorithm) << " seed " << config.seed << ": " << r.metrics.outcome << ", "
                << r.metrics.keyframes << " keyframes, " << r.metrics.submaps << " submaps, " << r.metrics.cycles
                << " cycles, " << r.metrics.restores << " restores, " << r.timing.wall_s << " s\n";
      return r.exit_code;
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << "\n";
      return 1;
    }
  }

  try {
    const CompareReport report = compare_runs(dirs, ref, map_ref);
    std::cout << report.text;
    if (!json_out.empty()) {
      std::ofstream out(json_out);
      out << report.json;
      if (!out) throw std::runtime_error("cannot write " + json_out);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
