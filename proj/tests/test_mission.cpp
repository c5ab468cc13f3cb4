#include <doctest.h>

#include <ralc/checkpoint.hpp>
#include <ralc/evaluation.hpp>
#include <ralc/mission.hpp>

#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

using namespace ralc;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

const std::string kData = RALC_DATA_DIR;

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("ralc_mission_" + name);
  fs::remove_all(p);
  return p;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

RunConfig room_config(const fs::path& out, std::uint64_t seed = 7) {
  RunConfig c;
  c.env_path = kData + "/room_5x5.env";
  c.out_dir = out.string();
  c.seed = seed;
  return c;
}

int cli(const std::string& args) {
  const std::string cmd = std::string(RALC_CLI) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::vector<json> events(const fs::path& dir, const std::string& kind) {
  std::vector<json> out;
  std::istringstream in(read_file(dir / "decisions.jsonl"));
  for (std::string line; std::getline(in, line);) {
    const json e = json::parse(line);
    if (e.at("event") == kind) out.push_back(e);
  }
  return out;
}

}  // namespace

TEST_CASE("config files round trip through the canonical form") {
  RunConfig a;
  std::istringstream in("# comment\nregion.w_max = 7.5\nalc.threshold=3  # trailing\nclosure.noisy = false\n"
                        "marginalization.topology = complete\n");
  apply_config(a, in);
  CHECK(a.explorer.limits.w_max == 7.5);
  CHECK(a.explorer.alc.threshold == 3.0);
  CHECK_FALSE(a.closure.noisy);
  CHECK(a.marginalization.topology == TopologyKind::complete);

  RunConfig b;
  std::istringstream canon(canonical_config(a));
  apply_config(b, canon);
  CHECK(canonical_config(b) == canonical_config(a));
  CHECK(config_hash(b) == config_hash(a));

  RunConfig c = a;
  c.seed = a.seed + 1;
  CHECK(config_hash(c) != config_hash(a));
  c = a;
  c.algorithm = Algorithm::alc_baseline;
  CHECK(config_hash(c) != config_hash(a));
  c = a;
  c.out_dir = "elsewhere";
  c.inject = FailureInjection{};
  CHECK(config_hash(c) == config_hash(a));

  // closure information follows the configured deviations
  std::istringstream sig("closure.sigma_x = 0.1\n");
  apply_config(c, sig);
  CHECK(c.closure.information(0, 0) == doctest::Approx(100.0));
  CHECK(c.explorer.closure_information == c.closure.information);
}

TEST_CASE("config errors") {
  RunConfig c;
  auto apply = [&](const std::string& text) {
    std::istringstream in(text);
    apply_config(c, in);
  };
  CHECK_THROWS_AS(apply("no_such.key = 1\n"), ConfigError);
  CHECK_THROWS_AS(apply("region.w_max = wide\n"), ConfigError);
  CHECK_THROWS_AS(apply("frontier.min_size = 2.5\n"), ConfigError);
  CHECK_THROWS_AS(apply("closure.noisy = maybe\n"), ConfigError);
  CHECK_THROWS_AS(apply("just words\n"), ConfigError);
  CHECK_THROWS_AS(apply("region.w_min = 9\n"), ConfigError);
  CHECK_THROWS_AS(apply_config_file(c, "/nonexistent.conf"), ConfigError);

  CHECK(parse_algorithm("ralc-no-marg") == Algorithm::ralc_no_marg);
  CHECK(parse_algorithm("alc_baseline") == Algorithm::alc_baseline);
  CHECK_FALSE(parse_algorithm("slam"));

  const FailureInjection f = parse_injection("region=3,kind=cholesky");
  CHECK(f.region == 3);
  CHECK(f.kind == FailureInjection::Kind::cholesky);
  CHECK_THROWS_AS(parse_injection("region=2"), ConfigError);
  CHECK_THROWS_AS(parse_injection("region=2,kind=meteor"), ConfigError);
}

TEST_CASE("room mission reaches done and lists every output") {
  const fs::path out = scratch("room");
  const RunResult r = run_mission(room_config(out));
  CHECK(r.exit_code == 0);
  CHECK(r.metrics.outcome == "done");
  REQUIRE(fs::exists(out / "metrics.json"));

  const json m = json::parse(read_file(out / "metrics.json"));
  CHECK(m.at("keyframes") == r.metrics.keyframes);
  CHECK(m.at("pgo_count").get<int>() >= m.at("loop_closures").get<int>());
  CHECK(m.at("submaps").get<int>() >= m.at("keyframes").get<int>());

  // manifest and directory agree exactly
  const json manifest = json::parse(read_file(out / "manifest.json"));
  std::set<std::string> listed, present;
  for (const auto& f : manifest.at("files")) listed.insert(f.get<std::string>());
  for (const auto& e : fs::directory_iterator(out)) present.insert(e.path().filename().string());
  CHECK(listed == present);

  // one snapshot per completed region, each readable
  const auto snaps = list_snapshots(out.string());
  CHECK(snaps.size() == r.metrics.completed_regions.size());
  for (RegionId id : r.metrics.completed_regions) CHECK(fs::exists(snapshot_path(out.string(), id)));

  // the room is fully explored
  const Environment env = load_environment(kData + "/room_5x5.env");
  const double free_area = count_cells(r.final_map, CellState::free) * 0.05 * 0.05;
  CHECK(free_area >= 0.9 * env.free_area());
}

TEST_CASE("same config and seed give byte-identical outputs") {
  const fs::path a = scratch("det_a"), b = scratch("det_b");
  run_mission(room_config(a, 11));
  run_mission(room_config(b, 11));
  CHECK(read_file(a / "metrics.json") == read_file(b / "metrics.json"));
  CHECK(read_file(a / "map_final.pgm") == read_file(b / "map_final.pgm"));
  CHECK(read_file(a / "decisions.jsonl") == read_file(b / "decisions.jsonl"));

  // rerunning into a used directory leaves no stale files behind
  RunConfig again = room_config(a, 11);
  again.algorithm = Algorithm::alc_baseline;
  run_mission(again);
  CHECK(list_snapshots(a.string()).empty());
}

TEST_CASE("algorithms differ only where intended") {
  const fs::path m = scratch("alg_m"), n = scratch("alg_n"), b = scratch("alg_b");
  RunConfig cm = room_config(m), cn = room_config(n), cb = room_config(b);
  cn.algorithm = Algorithm::ralc_no_marg;
  cb.algorithm = Algorithm::alc_baseline;
  const RunResult rm = run_mission(cm), rn = run_mission(cn), rb = run_mission(cb);
  REQUIRE(rm.exit_code == 0);
  REQUIRE(rn.exit_code == 0);
  REQUIRE(rb.exit_code == 0);

  CHECK(rn.metrics.marginalization.empty());
  CHECK(rn.metrics.keyframes == rn.metrics.submaps);  // nothing removed, one submap per keyframe
  CHECK(rm.metrics.keyframes < rn.metrics.keyframes);
  CHECK(rb.metrics.completed_regions.empty());
  CHECK(list_snapshots(b.string()).empty());
  for (const auto& rep : rm.metrics.marginalization) CHECK(rep.kld >= 0.0);
}

TEST_CASE("injected failure restores the last completed region") {
  for (auto kind : {"no_path", "cholesky"}) {
    CAPTURE(kind);
    const fs::path clean = scratch("inj_clean"), failed = scratch(std::string("inj_") + kind);
    RunConfig base;
    base.env_path = kData + "/two_rooms.env";
    base.seed = 3;
    base.out_dir = clean.string();
    const RunResult ref = run_mission(base);

    RunConfig inj = base;
    inj.out_dir = failed.string();
    inj.inject = parse_injection(std::string("region=2,kind=") + kind);
    const RunResult r = run_mission(inj);
    CHECK(r.exit_code == 0);
    CHECK(r.metrics.restores == 1);
    CHECK(events(failed, "restore").size() == 1);
    CHECK(events(failed, "failure").size() == 1);
    CHECK_FALSE(r.metrics.completed_at_restore.empty());
    CHECK(r.metrics.completed_at_restore == r.metrics.completed_before_failure);
    CHECK(free_coverage(r.final_map, ref.final_map) >= 0.95);
  }
}

TEST_CASE("failure without recovery exits 2") {
  const fs::path out = scratch("norecover");
  RunConfig c;
  c.env_path = kData + "/two_rooms.env";
  c.seed = 3;
  c.out_dir = out.string();
  c.recovery = false;
  c.inject = parse_injection("region=2,kind=no_path");
  const RunResult r = run_mission(c);
  CHECK(r.exit_code == 2);
  CHECK(r.metrics.outcome == "failed");
  CHECK(fs::exists(out / "metrics.json"));
}

TEST_CASE("command line") {
  const fs::path out = scratch("cli");
  const std::string env = kData + "/room_5x5.env";
  CHECK(cli("run --env " + env + " --seed 7 --out " + out.string()) == 0);
  CHECK(fs::exists(out / "metrics.json"));

  const fs::path bad = scratch("bad_env");
  fs::create_directories(bad);
  std::ofstream(bad / "broken.env") << "dock: 1 1 0\ngrid:\n###\n#x#\n###\n";
  CHECK(cli("run --env " + (bad / "broken.env").string() + " --out " + (bad / "o").string()) == 1);
  CHECK(cli("run --env /nonexistent.env --out " + (bad / "o").string()) == 1);
  CHECK(cli("run --env " + env + " --algo bogus --out " + (bad / "o").string()) == 1);
  std::ofstream(bad / "bad.conf") << "region.w_max = -\n";
  CHECK(cli("run --env " + env + " --config " + (bad / "bad.conf").string() + " --out " + (bad / "o").string()) == 1);

  // RALC_OUT takes precedence over --out
  const fs::path env_out = scratch("cli_env_out");
  CHECK(cli("run --env " + env + " --seed 7 --out " + (bad / "ignored").string() + " --noiseless") == 0);
  const std::string with_env = "RALC_OUT=" + env_out.string() + " " + std::string(RALC_CLI) + " run --env " + env +
                               " --seed 7 --out " + (bad / "unused").string() + " > /dev/null 2>&1";
  CHECK(std::system(with_env.c_str()) == 0);
  CHECK(fs::exists(env_out / "metrics.json"));
  CHECK_FALSE(fs::exists(bad / "unused"));

  CHECK(cli("compare --ref " + out.string() + " " + out.string()) == 0);
  CHECK(cli("compare --ref " + out.string()) == 1);
  CHECK(cli("compare --ref " + out.string() + " " + (bad / "missing").string()) == 1);
}

TEST_CASE("compare") {
  const fs::path a = scratch("cmp_a"), b = scratch("cmp_b");
  run_mission(room_config(a));
  RunConfig cb = room_config(b);
  cb.algorithm = Algorithm::alc_baseline;
  run_mission(cb);

  const CompareReport self = compare_runs({a.string()}, a.string());
  REQUIRE(self.runs.size() == 1);
  const json sj = json::parse(self.json);
  for (const auto& [key, value] : sj.at("runs").at(0).at("delta_pct").items()) CHECK(value.get<double>() == 0.0);
  CHECK(self.runs[0].miou == 1.0);
  CHECK(self.runs[0].mdte == 0.0);

  // keyframe reduction against the baseline row, recomputed from the two metrics files
  const CompareReport vs = compare_runs({a.string()}, b.string());
  const json ma = json::parse(read_file(a / "metrics.json")), mb = json::parse(read_file(b / "metrics.json"));
  const double expected = 100.0 * (ma.at("keyframes").get<double>() - mb.at("keyframes").get<double>()) /
                          mb.at("keyframes").get<double>();
  CHECK(json::parse(vs.json).at("runs").at(0).at("delta_pct").at("keyframes").get<double>() ==
        doctest::Approx(expected));
  CHECK(vs.per_algorithm.size() == 1);

  CHECK_THROWS_AS(compare_runs({}, a.string()), std::runtime_error);
  try {
    compare_runs({"/nonexistent/run"}, a.string());
    FAIL("expected an error");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("/nonexistent/run") != std::string::npos);
  }
}
