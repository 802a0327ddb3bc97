#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "helpers.hpp"
#include "zspose/cli.hpp"
#include "zspose/eval.hpp"
#include "zspose/io.hpp"
#include "zspose/synth.hpp"

using namespace zspose;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("zspose_cli_" + tag + "_" + std::to_string(std::random_device{}()));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

struct Run {
  int code = -1;
  std::string out;
  std::string err;
};

Run cli(std::vector<std::string> args) {
  args.insert(args.begin(), "zspose");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out;
  std::ostringstream err;
  Run r;
  r.code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// seed-0 fixture: one category, one pair, five views
fs::path make_fixture(const TempDir& d, const std::string& noise = "0.1") {
  const fs::path root = d.path / "data";
  const Run r = cli({"synth", "--out", root.string(), "--categories", "1", "--pairs", "1", "--views", "5",
                     "--noise-feat", noise, "--seed", "0"});
  REQUIRE(r.code == 0);
  return root;
}

PairSpec fixture_pair(const fs::path& root) { return read_pairs_file(root / "pairs.jsonl").at(0); }

}  // namespace

TEST_CASE("usage errors exit with 1") {
  CHECK(cli({}).code == kExitUsage);
  const Run r = cli({"estimate", "--target", "x/manifest.json"});
  CHECK(r.code == kExitUsage);
  CHECK(r.err.find("--ref") != std::string::npos);
  CHECK(cli({"synth", "--out", "/tmp/never", "--categories", "0"}).code == kExitUsage);
  CHECK(cli({"estimate", "--ref", "nohash", "--target", "t"}).code == kExitUsage);
  CHECK(cli({"evaluate", "--pairs", "p", "--data", "d", "--matcher", "magic"}).code == kExitUsage);
  CHECK(cli({"--help"}).code == kExitOk);
}

TEST_CASE("data errors exit with 2") {
  TempDir d("data");
  const fs::path empty = d.path / "pairs.jsonl";
  std::ofstream(empty).close();
  const Run r = cli({"evaluate", "--pairs", empty.string(), "--data", d.path.string()});
  CHECK(r.code == kExitData);
  CHECK(!r.err.empty());
  CHECK(cli({"estimate", "--ref", (d.path / "none.json#f").string(), "--target", "t.json"}).code == kExitData);
}

TEST_CASE("a reference aliased as its own target estimates the identity") {
  TempDir d("self");
  const fs::path root = make_fixture(d);
  const PairSpec p = fixture_pair(root);
  const std::string manifest = (root / p.tgt_sequence / "manifest.json").string();
  const Run r = cli({"estimate", "--ref", manifest + "#" + p.tgt_frames[2], "--target", manifest, "--frames",
                     p.tgt_frames[2]});
  REQUIRE(r.code == 0);
  const auto j = nlohmann::json::parse(r.out);
  const RigidTransformSim3 t = sim3_from_json(j.at("transform"));
  CHECK(rad2deg(geodesic_rotation_error(t.rotation(), Rotation3{})) < 0.1);
  CHECK(t.scale() == doctest::Approx(1.0).epsilon(0.01));
  CHECK(j.at("best_view").get<int>() == 0);
  CHECK(j.at("fallback") == "none");
}

TEST_CASE("estimate matches the golden output") {
  TempDir d("golden");
  const fs::path root = make_fixture(d);
  const PairSpec p = fixture_pair(root);
  const std::string ref = (root / p.ref_sequence / "manifest.json").string() + "#" + p.ref_frame;
  const std::string tgt = (root / p.tgt_sequence / "manifest.json").string();
  const Run a = cli({"estimate", "--ref", ref, "--target", tgt, "--seed", "0"});
  REQUIRE(a.code == 0);
  const Run b = cli({"estimate", "--ref", ref, "--target", tgt, "--seed", "0"});
  CHECK(a.out == b.out);

  const fs::path golden = fs::path(ZSPOSE_TEST_DATA) / "golden_estimate.json";
  if (std::getenv("ZSPOSE_UPDATE_GOLDEN") != nullptr) write_text_file(golden, a.out);
  REQUIRE(fs::exists(golden));
  CHECK(a.out == slurp(golden));

  const fs::path out = d.path / "pose.json";
  CHECK(cli({"estimate", "--ref", ref, "--target", tgt, "--out", out.string()}).code == 0);
  CHECK(slurp(out) == a.out);
}

TEST_CASE("config files override flags") {
  TempDir d("config");
  const fs::path root = make_fixture(d);
  const PairSpec p = fixture_pair(root);
  const std::string ref = (root / p.ref_sequence / "manifest.json").string() + "#" + p.ref_frame;
  const std::string tgt = (root / p.tgt_sequence / "manifest.json").string();
  const fs::path cfg = d.path / "cfg.json";
  write_text_file(cfg, R"({"best-view-only": true})");
  const Run r = cli({"estimate", "--ref", ref, "--target", tgt, "--config", cfg.string()});
  REQUIRE(r.code == 0);
  const auto t = sim3_from_json(nlohmann::json::parse(r.out).at("transform"));
  CHECK(t.matrix() == Mat4::Identity());
}

TEST_CASE("synth then evaluate on a zero-noise benchmark") {
  TempDir d("eval");
  const fs::path root = d.path / "bench";
  const Run s = cli({"synth", "--out", root.string(), "--categories", "2", "--pairs", "4", "--noise-feat", "0",
                     "--noise-shape", "0", "--noise-depth", "0"});
  REQUIRE(s.code == 0);
  CHECK(nlohmann::json::parse(s.out).at("pairs") == 8);
  const fs::path csv = d.path / "pairs.csv";
  const Run e = cli({"evaluate", "--pairs", (root / "pairs.jsonl").string(), "--data", root.string(), "--per-pair-csv",
                     csv.string(), "--jobs", "2"});
  REQUIRE(e.code == 0);
  const auto j = nlohmann::json::parse(e.out);
  CHECK(j.at("aggregate").at("acc30").get<double>() == 100.0);
  CHECK(j.at("per_category").size() == 2);
  std::istringstream rows(slurp(csv));
  std::string line;
  int n = 0;
  while (std::getline(rows, line)) ++n;
  CHECK(n == 9);

  const Run e1 = cli({"evaluate", "--pairs", (root / "pairs.jsonl").string(), "--data", root.string(), "--jobs", "1"});
  CHECK(e1.out == e.out);
  const Run v1 = cli({"evaluate", "--pairs", (root / "pairs.jsonl").string(), "--data", root.string(), "--views", "1"});
  CHECK(v1.code == 0);
}

TEST_CASE("icp subcommand on a frame against itself") {
  TempDir d("icp");
  const fs::path root = make_fixture(d, "0");
  const PairSpec p = fixture_pair(root);
  const std::string manifest = (root / p.tgt_sequence / "manifest.json").string();
  const Run r = cli({"icp", "--ref", manifest + "#" + p.tgt_frames[0], "--target", manifest, "--frames",
                     p.tgt_frames[0]});
  REQUIRE(r.code == 0);
  const auto t = sim3_from_json(nlohmann::json::parse(r.out).at("transform"));
  CHECK(rad2deg(geodesic_rotation_error(t.rotation(), Rotation3{})) < 1.0);
  CHECK(cli({"icp", "--ref", manifest + "#" + p.tgt_frames[0]}).code == kExitUsage);
  CHECK(cli({"icp", "--pairs", (root / "pairs.jsonl").string()}).code == kExitUsage);
  const Run batch = cli({"icp", "--pairs", (root / "pairs.jsonl").string(), "--data", root.string(), "--init", "best-view"});
  CHECK(batch.code == 0);
  CHECK(nlohmann::json::parse(batch.out).at("config").at("init") == "best-view");
}

TEST_CASE("the installed binary runs") {
  const std::string cmd = std::string(ZSPOSE_BINARY) + " --help > /dev/null";
  CHECK(std::system(cmd.c_str()) == 0);
}
