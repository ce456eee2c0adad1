#include <doctest.h>

#include <filesystem>
#include <sstream>

#include <json.hpp>

#include "fbridge/io.hpp"
#include "cli.hpp"

namespace fs = std::filesystem;
using fbridge::cli::run;
using nlohmann::json;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result call(std::vector<std::string> args) {
  args.insert(args.begin(), "fbridge");
  std::ostringstream out, err;
  const int code = run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("fbridge_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p.string();
}

std::vector<std::string> tiny_paired(const std::string& dir, int steps) {
  return {"--dataset", "gaussian_cross", "--n-train", "200", "--n-test", "100", "--steps", std::to_string(steps),
          "--batch-size", "32", "--hidden", "8,8", "--n-samples", "100", "--eval-steps", "20", "-o", dir};
}

std::vector<std::string> cat(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

}  // namespace

TEST_CASE("coeffs output is reproducible and carries provenance") {
  const Result a = call({"coeffs", "--K", "3", "--mc-paths", "200", "--mc-times", "20"});
  const Result b = call({"coeffs", "--K", "3", "--mc-paths", "200", "--mc-times", "20"});
  REQUIRE(a.code == 0);
  CHECK(a.out == b.out);
  const json j = json::parse(a.out);
  CHECK(j["omega"].size() == 3);
  CHECK(j["residual"].get<double>() <= 1e-10);
  CHECK(j.contains("provenance"));
  CHECK(j["provenance"]["seed"] == 0);
}

TEST_CASE("simulate writes one row per recorded state") {
  const std::string dir = scratch("sim");
  const Result r = call({"simulate", "--n-paths", "1", "--n-steps", "100", "-o", dir});
  REQUIRE(r.code == 0);
  const std::string csv = fbridge::read_text_file(dir + "/trajectories.csv");
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 103);
  const Result e = call({"simulate", "--exact-marginals", "--times", "0.25,0.5,0.75", "--out", dir + "/m.csv",
                         "--svg", dir + "/m.svg"});
  REQUIRE(e.code == 0);
  const std::string m = fbridge::read_text_file(dir + "/m.csv");
  CHECK(std::count(m.begin(), m.end(), '\n') == 5);
  CHECK(fs::exists(dir + "/m.svg"));
  CHECK(call({"simulate", "--exact-marginals", "--times", "1.0"}).code == 2);
}

TEST_CASE("exit codes") {
  CHECK(call({"coeffs", "--H", "1.5"}).code == 2);
  CHECK(call({"coeffs", "--no-such-flag"}).code == 2);
  const Result bad = call({"train", "paired", "-c", "/nonexistent/cfg.toml"});
  CHECK(bad.code != 0);
  CHECK(call({"coeffs", "--mc-paths", "10", "--mc-times", "5", "--out", "/nonexistent/dir/c.json"}).code == 3);
  const std::string dir = scratch("diverge");
  CHECK(call(cat({"train", "paired", "-q", "--lr", "1e200"}, tiny_paired(dir, 20))).code == 4);
  CHECK(call({"train", "unpaired-finetune", "--H", "0.3", "--dataset", "gaussian_shift", "-o", dir}).code == 2);
}

TEST_CASE("train, resume and eval agree") {
  const std::string whole = scratch("whole");
  const std::string parts = scratch("parts");
  const Result a = call(cat({"train", "paired", "-q"}, tiny_paired(whole, 30)));
  REQUIRE(a.code == 0);
  REQUIRE(call(cat({"train", "paired", "-q"}, tiny_paired(parts, 12))).code == 0);
  const Result b = call(cat({"train", "paired", "-q", "--resume"}, tiny_paired(parts, 30)));
  REQUIRE(b.code == 0);
  CHECK(fbridge::read_text_file(whole + "/paired_trial0.json") ==
        fbridge::read_text_file(parts + "/paired_trial0.json"));
  const json ja = json::parse(a.out), jb = json::parse(b.out);
  CHECK(ja["wsd_mean"] == jb["wsd_mean"]);
  CHECK(ja["provenance"] == jb["provenance"]);

  const Result e = call(cat({"eval", "--checkpoint", whole + "/paired_trial0.json"}, tiny_paired(whole, 30)));
  REQUIRE(e.code == 0);
  CHECK(json::parse(e.out)["wsd_mean"] == ja["wsd_mean"]);
  // a different model config is refused
  CHECK(call(cat({"eval", "--lr", "0.002", "--checkpoint", whole + "/paired_trial0.json"}, tiny_paired(whole, 30)))
            .code == 5);
  CHECK(call(cat({"eval", "--checkpoint", whole + "/missing.json"}, tiny_paired(whole, 30))).code == 5);
}

TEST_CASE("dataset export") {
  const Result r = call({"dataset", "export", "--dataset", "tshape", "--n-train", "10", "--n-test", "5", "--split",
                         "test"});
  REQUIRE(r.code == 0);
  CHECK(r.out.rfind("#", 0) == 0);
  CHECK(std::count(r.out.begin(), r.out.end(), '\n') == 7);
  CHECK(call({"dataset", "export", "--split", "nope"}).code == 2);
}
