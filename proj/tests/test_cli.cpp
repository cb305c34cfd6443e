#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "fpslab/analysis.hpp"
#include "fpslab/cli.hpp"
#include "fpslab/config.hpp"
#include "fpslab/errors.hpp"

using namespace fpslab;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result cli(std::vector<std::string> args) {
  args.insert(args.begin(), "fpslab");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("fpslab_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

json small_config() {
  return json{
      {"name", "t"},
      {"data", {{"kind", "synthetic"}, {"samples", 60}, {"dim", 40}, {"power", 2.0}}},
      {"federated",
       {{"algorithm", "fps"}, {"clients", 3}, {"local_epochs", 1}, {"rounds", 4},
        {"heavy_hitters", 4}, {"sketch_rows", 3}, {"batch_size", 5}}},
      {"channel", {{"subcarriers", 30}, {"noise_std", 0.5}}},
  };
}

fs::path write_config(const fs::path& dir, const json& j) {
  fs::path p = dir / "config.json";
  std::ofstream(p) << j.dump(2);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t count_files(const fs::path& dir, const std::string& needle) {
  std::size_t n = 0;
  for (const auto& e : fs::directory_iterator(dir)) {
    n += e.path().filename().string().find(needle) != std::string::npos;
  }
  return n;
}

}  // namespace

TEST_CASE("help and usage errors") {
  CHECK(cli({"--help"}).code == 0);
  CHECK(cli({}).code == 2);
  CHECK(cli({"frobnicate"}).code == 2);
  CHECK(cli({"run"}).code == 2);
  CHECK(cli({"run", "x.json", "--threads", "many"}).code == 2);
}

TEST_CASE("schema violations exit 2 with the field path") {
  fs::path dir = scratch("schema");
  json j = small_config();
  j["channel"]["noise_std"] = -1.0;
  Result r = cli({"run", write_config(dir, j).string(), "--out", (dir / "o").string()});
  CHECK(r.code == 2);
  CHECK(r.err.find("channel.noise_std") != std::string::npos);

  json k = small_config();
  k["federated"]["learning_rate"] = 0.1;
  r = cli({"run", write_config(dir, k).string()});
  CHECK(r.code == 2);
  CHECK(r.err.find("federated.learning_rate") != std::string::npos);

  json m = small_config();
  m["partition"] = {{"scenario", 7}};
  r = cli({"run", write_config(dir, m).string()});
  CHECK(r.code == 2);
  CHECK(r.err.find("partition.scenario") != std::string::npos);

  json h = small_config();
  h["federated"]["heavy_hitters"] = 31;
  r = cli({"run", write_config(dir, h).string()});
  CHECK(r.code == 2);
  CHECK(r.err.find("federated.heavy_hitters") != std::string::npos);

  std::ofstream(dir / "broken.json") << "{ not json";
  CHECK(cli({"run", (dir / "broken.json").string()}).code == 2);
  CHECK(cli({"run", (dir / "missing.json").string()}).code == 2);
  r = cli({"run", write_config(dir, small_config()).string(), "--seeds", "1,x"});
  CHECK(r.code == 2);
  CHECK(r.err.find("--seeds") != std::string::npos);
}

TEST_CASE("runtime failures exit 1") {
  fs::path dir = scratch("runtime");
  json j = small_config();
  j["data"] = {{"kind", "libsvm"}, {"path", (dir / "nope.svm").string()}};
  j["federated"]["heavy_hitters"] = 1;
  Result r = cli({"run", write_config(dir, j).string(), "--out", (dir / "o").string()});
  CHECK(r.code == 1);
  CHECK_FALSE(r.err.empty());
}

TEST_CASE("run with zero rounds writes a header-only CSV") {
  fs::path dir = scratch("t0");
  json j = small_config();
  j["federated"]["rounds"] = 0;
  Result r = cli({"run", write_config(dir, j).string(), "--out", (dir / "o").string()});
  REQUIRE(r.code == 0);
  std::string csv = slurp(dir / "o" / "t__fps__scenario1__mu0__seed0.csv");
  CHECK(csv ==
        "schema_version,1\nround,algorithm,scenario,test_loss,log_test_loss,accuracy,w_norm_sq,"
        "soft_sparsity_w,B_estimate,reals_transmitted\n");
  CHECK(fs::exists(dir / "o" / "t__summary.json"));
}

TEST_CASE("run writes per-run series, comparison and summary") {
  fs::path dir = scratch("run");
  json j = small_config();
  j["comparison"] = {{"algorithms", {"fps", "fetchsgd", "blcd", "topk", "fedprox"}},
                     {"scenarios", {1, 2, 3, 4}}};
  Result r = cli({"run", write_config(dir, j).string(), "--out", (dir / "o").string(),
                  "--seeds", "3,4"});
  REQUIRE(r.code == 0);
  CHECK(count_files(dir / "o", "__seed") == 40);
  std::ifstream in(dir / "o" / "t__fps__scenario3__mu0__seed4.csv");
  auto rows = read_metrics_csv(in);
  CHECK(rows.size() == 4);
  CHECK(rows[0].scenario == "3");
  json summary = json::parse(slurp(dir / "o" / "t__summary.json"));
  CHECK(summary["runs"].size() == 40);
  CHECK(summary["runs"][0]["theory"].contains("rho"));
  CHECK(summary["runs"][0]["theory"]["theorem_rhs"].contains("total"));
  CHECK(summary["config"] == j);
  std::string cmp = slurp(dir / "o" / "t__comparison.csv");
  CHECK(cmp.rfind("schema_version,1\n", 0) == 0);
  CHECK(std::count(cmp.begin(), cmp.end(), '\n') == 2 + 20);
}

TEST_CASE("output is identical across thread counts") {
  fs::path dir = scratch("det");
  json j = small_config();
  j["comparison"] = {{"algorithms", {"fps", "fetchsgd", "blcd"}}, {"scenarios", {1, 3}}};
  fs::path cfg = write_config(dir, j);
  REQUIRE(cli({"run", cfg.string(), "--out", (dir / "a").string(), "--threads", "1"}).code == 0);
  REQUIRE(cli({"run", cfg.string(), "--out", (dir / "b").string(), "--threads", "3"}).code == 0);
  for (const auto& e : fs::directory_iterator(dir / "a")) {
    CHECK(slurp(e.path()) == slurp(dir / "b" / e.path().filename()));
  }
}

TEST_CASE("sweep") {
  fs::path dir = scratch("sweep");
  json j = small_config();
  j["federated"]["rounds"] = 2;
  j["sweep"] = {{"mu", {0, 0.01, 0.1, 1}}, {"scenarios", {1, 2, 3, 4}}};
  Result r = cli({"sweep", write_config(dir, j).string(), "--out", (dir / "o").string(),
                  "--replicas", "5"});
  REQUIRE(r.code == 0);
  std::size_t logged = 0;
  std::istringstream lines(r.out);
  for (std::string line; std::getline(lines, line);) logged += line.rfind("run ", 0) == 0;
  CHECK(logged == 80);
  CHECK(count_files(dir / "o", "__seed") == 80);

  // Recompute best mu per scenario from the per-run CSVs.
  std::map<int, std::map<double, double>> sums;
  for (const auto& e : fs::directory_iterator(dir / "o")) {
    std::string name = e.path().filename().string();
    if (name.find("__seed") == std::string::npos) continue;
    std::ifstream in(e.path());
    auto rows = read_metrics_csv(in);
    int scenario = std::stoi(rows.back().scenario);
    auto mu_pos = name.find("__mu") + 4;
    double mu = std::stod(name.substr(mu_pos, name.find("__seed") - mu_pos));
    sums[scenario][mu] += rows.back().log_test_loss;
  }
  std::istringstream table(slurp(dir / "o" / "t__sweep.csv"));
  std::string line;
  std::getline(table, line);
  CHECK(line == "schema_version,1");
  std::getline(table, line);
  std::map<int, double> flagged;
  while (std::getline(table, line)) {
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string x; std::getline(ss, x, ',');) f.push_back(x);
    if (f.back() == "1") flagged[std::stoi(f[0])] = std::stod(f[1]);
  }
  for (auto& [scenario, by_mu] : sums) {
    double best_mu = -1, best = 0;
    for (auto& [mu, s] : by_mu) {
      if (best_mu < 0 || s < best) {
        best = s;
        best_mu = mu;
      }
    }
    CHECK(flagged[scenario] == best_mu);
  }
}

TEST_CASE("a one-cell sweep equals run") {
  fs::path dir = scratch("onecell");
  json j = small_config();
  j["federated"]["mu"] = 0.1;
  j["sweep"] = {{"mu", {0.1}}, {"scenarios", {1}}};
  fs::path cfg = write_config(dir, j);
  REQUIRE(cli({"run", cfg.string(), "--out", (dir / "r").string()}).code == 0);
  REQUIRE(cli({"sweep", cfg.string(), "--out", (dir / "s").string()}).code == 0);
  std::string stem = "t__fps__scenario1__mu0.1__seed0.csv";
  CHECK(slurp(dir / "r" / stem) == slurp(dir / "s" / stem));
}

TEST_CASE("bounds") {
  fs::path dir = scratch("bounds");
  json j = small_config();
  j["federated"]["gamma"] = 0.01;
  j["federated"]["local_epochs"] = 1;
  j["theory"] = {{"L", 1.0}, {"P_b", 0.0}, {"P_n", 0.0}, {"f0_gap", 1.0}};
  Result r = cli({"bounds", write_config(dir, j).string(), "--out", (dir / "o").string()});
  REQUIRE(r.code == 0);
  json b = json::parse(slurp(dir / "o" / "t__bounds.json"));
  CHECK(b["rho"].get<double>() == doctest::Approx(0.44));
  CHECK(b["gamma_max"].get<double>() == doctest::Approx(1.0 / 12.0));
  CHECK(r.out.find("warning") == std::string::npos);

  j["federated"]["gamma"] = 1.0;
  r = cli({"bounds", write_config(dir, j).string(), "--out", (dir / "o").string()});
  CHECK(r.code == 0);
  CHECK(r.out.find("warning") != std::string::npos);

  j["federated"]["gamma"] = 0.01;
  j["theory"]["P_n"] = 0.1;
  cli({"bounds", write_config(dir, j).string(), "--out", (dir / "o").string()});
  double g1 = json::parse(slurp(dir / "o" / "t__bounds.json"))["gamma_max"].get<double>();
  j["federated"]["local_epochs"] = 2;
  cli({"bounds", write_config(dir, j).string(), "--out", (dir / "o").string()});
  double g2 = json::parse(slurp(dir / "o" / "t__bounds.json"))["gamma_max"].get<double>();
  CHECK(g2 == doctest::Approx(g1 / 4));

  j["theory"]["P_b"] = 0.5;
  r = cli({"bounds", write_config(dir, j).string(), "--out", (dir / "o").string()});
  CHECK(r.code == 0);
  CHECK(r.out.find("no admissible") != std::string::npos);

  json est = small_config();
  est["theory"] = {{"estimate_B", true}};
  r = cli({"bounds", write_config(dir, est).string(), "--out", (dir / "o").string()});
  CHECK(r.code == 0);
  json e = json::parse(slurp(dir / "o" / "t__bounds.json"));
  CHECK(e["params"]["L"].get<double>() > 0.0);
  CHECK(e["params"]["B"].get<double>() >= 1.0);
}

TEST_CASE("diagnose") {
  fs::path dir = scratch("diag");
  json j = {
      {"name", "g"},
      {"data", {{"kind", "synthetic"}, {"samples", 100}, {"dim", 10000}, {"power", 5.0}}},
      {"federated", {{"clients", 2}, {"local_epochs", 1}, {"heavy_hitters", 50}, {"batch_size", 10}}},
      {"channel", {{"subcarriers", 1000}, {"noise_std", 1.0}}},
      {"diagnose", {{"rounds", 200}, {"checkpoints", {25, 75, 150}}, {"fit_points", 100}}},
  };
  Result r = cli({"diagnose", write_config(dir, j).string(), "--out", (dir / "o").string()});
  REQUIRE(r.code == 0);
  CHECK(count_files(dir / "o", "__curve__") == 3);
  std::istringstream rep(slurp(dir / "o" / "g__diagnose__seed0.csv"));
  std::string line;
  std::getline(rep, line);
  std::getline(rep, line);
  int rows = 0;
  while (std::getline(rep, line)) {
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string x; std::getline(ss, x, ',');) f.push_back(x);
    CHECK(std::stod(f[3]) > 1.0);
    CHECK(std::stod(f[4]) > 0.9);
    ++rows;
  }
  CHECK(rows == 3);
  std::string norms = slurp(dir / "o" / "g__norms__seed0.csv");
  CHECK(std::count(norms.begin(), norms.end(), '\n') == 202);
}

TEST_CASE("experiment parsing") {
  ExperimentFile ex = parse_experiment(small_config());
  CHECK(ex.name == "t");
  CHECK(ex.federated.channel.subcarriers == 30);
  CHECK(ex.seeds == std::vector<std::uint64_t>{0});
  json r = small_config();
  r["seed"] = 7;
  r["replicas"] = 3;
  CHECK(parse_experiment(r).seeds == std::vector<std::uint64_t>{7, 8, 9});
  r["seeds"] = {1, 2};
  CHECK_THROWS_AS(parse_experiment(r), SchemaError);

  json c = small_config();
  c["comparison"] = {{"algorithms", {"fetchsgd"}}, {"baseline_local_epochs", 1}};
  c["federated"]["local_epochs"] = 5;
  ExperimentFile cx = parse_experiment(c);
  FederatedConfig f = config_for(cx, RunKey{Algorithm::kFetchSgd, 1, 0.1, 3});
  CHECK(f.local_epochs == 1);
  CHECK(f.rounds == 20);
  CHECK(f.mu == 0.0);
  CHECK(f.seed == 3);
  FederatedConfig p = config_for(cx, RunKey{Algorithm::kFps, 1, 0.1, 3});
  CHECK(p.local_epochs == 5);
  CHECK(p.mu == 0.1);
  CHECK(run_file_stem(cx, RunKey{Algorithm::kFps, 2, 0.001, 4}) ==
        "t__fps__scenario2__mu0.001__seed4");
}
