#include "fpslab/cli.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "fpslab/analysis.hpp"
#include "fpslab/config.hpp"
#include "fpslab/errors.hpp"
#include "fpslab/federated.hpp"

namespace fpslab {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr std::uint64_t kTagDiagnoseBatch = 0xd1a9;

struct Overrides {
  std::string out;
  std::size_t replicas = 0;
  std::string seeds;
  unsigned threads = 0;
};

void apply_overrides(ExperimentFile& ex, const Overrides& o) {
  if (!o.out.empty()) ex.output_dir = o.out;
  if (o.threads != 0) ex.threads = o.threads;
  if (!o.seeds.empty()) {
    ex.seeds.clear();
    std::stringstream ss(o.seeds);
    std::string item;
    while (std::getline(ss, item, ',')) {
      if (item.empty() || item.find_first_not_of("0123456789") != std::string::npos) {
        throw SchemaError("--seeds", "expected comma-separated non-negative integers");
      }
      ex.seeds.push_back(std::stoull(item));
    }
    if (o.replicas != 0 && o.replicas != ex.seeds.size()) {
      throw SchemaError("--replicas", "must equal the number of --seeds");
    }
  } else if (o.replicas != 0) {
    std::uint64_t first = ex.seeds.front();
    ex.seeds.clear();
    for (std::size_t r = 0; r < o.replicas; ++r) ex.seeds.push_back(first + r);
  }
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? kNaN : s / static_cast<double>(v.size());
}

double std_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  double m = mean_of(v), s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

json real_json(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

// Theory quantities for one run; L, W and the initial gap come from the data
// and the run unless fixed in the theory section.
json theory_json(const ExperimentFile& ex, const FederatedConfig& cfg, std::uint64_t dim,
                 double L_hat, double f0_gap, double W_measured) {
  TheoryParams t = ex.theory.params;
  if (!ex.theory.L_given) t.L = L_hat;
  t.mu = cfg.mu;
  t.E = static_cast<double>(cfg.local_epochs);
  t.gamma = cfg.gamma;
  t.k = static_cast<double>(cfg.heavy_hitters);
  t.d = static_cast<double>(dim);
  t.T = static_cast<double>(cfg.rounds);
  if (t.c == 0.0) {
    t.c = static_cast<double>(cfg.sketch_shape(dim).cols) / static_cast<double>(cfg.heavy_hitters);
  }
  if (t.W == 0.0) t.W = W_measured;
  double gap = ex.theory.f0_gap ? *ex.theory.f0_gap : f0_gap;
  GammaBound gm = gamma_max(t);
  TheoremBound tb = theorem_rhs(t, gap);
  json j;
  j["L"] = real_json(t.L);
  j["B"] = t.B;
  j["P_b"] = t.P_b;
  j["P_n"] = t.P_n;
  j["b2"] = t.b2;
  j["sigma2"] = t.sigma2;
  j["c"] = real_json(t.c);
  j["W"] = real_json(t.W);
  j["f0_gap"] = real_json(gap);
  j["rho"] = real_json(rho(t));
  j["gamma_max"] = real_json(gm.value);
  j["gamma_admissible"] = gm.admissible;
  j["theorem_rhs"] = {{"optimality_gap", real_json(tb.terms[0])},
                      {"unsketch_residual", real_json(tb.terms[1])},
                      {"bias", real_json(tb.terms[2])},
                      {"noise", real_json(tb.terms[3])},
                      {"total", real_json(tb.total)}};
  return j;
}

struct CellResult {
  RunKey key;
  FederatedConfig cfg;
  std::string stem;
  std::vector<RoundMetrics> metrics;
  double W_measured = 0.0;
  std::size_t max_nnz = 0;
  bool over_budget = false;
};

CellResult run_cell(const ExperimentFile& ex, const PreparedData& data, const RunKey& key) {
  CellResult r;
  r.key = key;
  r.cfg = config_for(ex, key);
  r.stem = run_file_stem(ex, key);
  Simulation sim(r.cfg, data.dataset, data.train, data.test);
  for (std::size_t t = 0; t < r.cfg.rounds; ++t) {
    r.metrics.push_back(sim.step());
    const auto& m = r.metrics.back();
    r.W_measured = std::max(r.W_measured, m.w_norm_sq);
    r.max_nnz = std::max(r.max_nnz, m.w_nnz);
    r.over_budget = r.over_budget || m.over_budget;
  }
  std::ofstream csv(ex.output_dir / (r.stem + ".csv"));
  if (!csv) throw Error("cannot write " + (ex.output_dir / (r.stem + ".csv")).string());
  write_metrics_csv(csv, r.metrics);
  return r;
}

struct SeedContext {
  PreparedData data;
  double L_hat = kNaN;
  double f0_gap = kNaN;
};

SeedContext seed_context(const ExperimentFile& ex, std::uint64_t seed, int scenario,
                         bool need_theory) {
  SeedContext c;
  c.data = prepare_data(ex, seed, scenario);
  if (need_theory && !c.data.train.empty()) {
    if (!ex.theory.L_given) {
      c.L_hat = smoothness_estimate(ex.federated.loss, c.data.dataset, c.data.train,
                                    ex.theory.power_iterations, seed);
    }
    DenseVector zero(c.data.dataset.dim, 0.0);
    c.f0_gap = evaluate(ex.federated.loss, zero, c.data.dataset, c.data.train).loss;
  }
  return c;
}

// One dataset per distinct covariance a seed needs.
class SeedContexts {
 public:
  SeedContexts(const ExperimentFile& ex, std::uint64_t seed, bool need_theory)
      : ex_(ex), seed_(seed), need_theory_(need_theory) {}

  const SeedContext& at(int scenario);

 private:
  const ExperimentFile& ex_;
  std::uint64_t seed_;
  bool need_theory_;
  std::map<Covariance, SeedContext> by_covariance_;
};

const SeedContext& SeedContexts::at(int scenario) {
  Covariance cov = covariance_for(ex_, scenario);
  auto it = by_covariance_.find(cov);
  if (it == by_covariance_.end()) {
    it = by_covariance_.emplace(cov, seed_context(ex_, seed_, scenario, need_theory_)).first;
  }
  return it->second;
}

json cell_json(const ExperimentFile& ex, const CellResult& r, const SeedContext& ctx) {
  json j;
  j["algorithm"] = to_string(r.key.algorithm);
  j["scenario"] = r.key.scenario;
  j["mu"] = r.cfg.mu;
  j["seed"] = r.key.seed;
  j["rounds"] = r.cfg.rounds;
  j["local_epochs"] = r.cfg.local_epochs;
  j["csv"] = r.stem + ".csv";
  j["over_budget"] = r.over_budget;
  j["max_model_nnz"] = r.max_nnz;
  if (!r.metrics.empty()) {
    const auto& m = r.metrics.back();
    j["final"] = {{"test_loss", real_json(m.test_loss)},
                  {"log_test_loss", real_json(m.log_test_loss)},
                  {"accuracy", real_json(m.accuracy)},
                  {"w_norm_sq", real_json(m.w_norm_sq)}};
  } else {
    j["final"] = nullptr;
  }
  j["theory"] = theory_json(ex, r.cfg, ctx.data.dataset.dim, ctx.L_hat, ctx.f0_gap, r.W_measured);
  return j;
}

// Every scenario's context is built before the worker pool starts, so this
// lookup never inserts.
const PreparedData& contexts_data(SeedContexts& contexts, int scenario) {
  return contexts.at(scenario).data;
}

double final_value(const CellResult& r, bool classification) {
  if (r.metrics.empty()) return kNaN;
  return classification ? r.metrics.back().accuracy : r.metrics.back().log_test_loss;
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream f(path);
  if (!f) throw Error("cannot write " + path.string());
  f << j.dump(2) << '\n';
}

int cmd_run(ExperimentFile& ex, std::ostream& out) {
  fs::create_directories(ex.output_dir);
  std::vector<Algorithm> algs = ex.comparison.algorithms;
  if (algs.empty()) algs.push_back(ex.federated.algorithm);
  std::vector<int> scenarios = ex.comparison.scenarios;
  if (scenarios.empty()) scenarios.push_back(ex.federated.partition.scenario);

  json summary;
  summary["schema_version"] = kCsvSchemaVersion;
  summary["command"] = "run";
  summary["config"] = ex.raw;
  summary["seeds"] = ex.seeds;
  summary["runs"] = json::array();
  // (scenario, algorithm) -> final values over seeds
  std::map<std::pair<int, std::string>, std::vector<double>> finals;
  bool classification = false;

  for (std::uint64_t seed : ex.seeds) {
    SeedContexts contexts(ex, seed, true);
    std::vector<RunKey> keys;
    for (int s : scenarios) {
      classification = contexts.at(s).data.dataset.is_classification();
      for (Algorithm a : algs) keys.push_back({a, s, ex.federated.mu, seed});
    }
    std::vector<CellResult> results(keys.size());
    parallel_for(keys.size(), ex.threads, [&](std::size_t i) {
      results[i] = run_cell(ex, contexts_data(contexts, keys[i].scenario), keys[i]);
    });
    for (const auto& r : results) {
      out << "run " << r.stem << " rounds=" << r.cfg.rounds << '\n';
      summary["runs"].push_back(cell_json(ex, r, contexts.at(r.key.scenario)));
      finals[{r.key.scenario, to_string(r.key.algorithm)}].push_back(
          final_value(r, classification));
    }
  }

  std::ofstream cmp(ex.output_dir / (ex.name + "__comparison.csv"));
  cmp << "schema_version," << kCsvSchemaVersion << '\n'
      << "scenario,algorithm,metric,mean_final,std_final,replicas\n";
  for (const auto& [k, v] : finals) {
    cmp << k.first << ',' << k.second << ',' << (classification ? "accuracy" : "log_test_loss")
        << ',' << format_real(mean_of(v)) << ',' << format_real(std_of(v)) << ',' << v.size()
        << '\n';
  }
  write_json(ex.output_dir / (ex.name + "__summary.json"), summary);
  return 0;
}

int cmd_sweep(ExperimentFile& ex, std::ostream& out) {
  fs::create_directories(ex.output_dir);
  std::vector<double> mus = ex.sweep.mu;
  std::sort(mus.begin(), mus.end());
  mus.erase(std::unique(mus.begin(), mus.end()), mus.end());

  json summary;
  summary["schema_version"] = kCsvSchemaVersion;
  summary["command"] = "sweep";
  summary["config"] = ex.raw;
  summary["seeds"] = ex.seeds;
  summary["runs"] = json::array();
  std::map<std::pair<int, double>, std::vector<double>> finals;
  bool classification = false;
  std::size_t total = ex.seeds.size() * ex.sweep.scenarios.size() * mus.size();
  std::size_t done = 0;

  for (std::uint64_t seed : ex.seeds) {
    SeedContexts contexts(ex, seed, true);
    std::vector<RunKey> keys;
    for (int s : ex.sweep.scenarios) {
      classification = contexts.at(s).data.dataset.is_classification();
      for (double mu : mus) keys.push_back({ex.federated.algorithm, s, mu, seed});
    }
    std::vector<CellResult> results(keys.size());
    parallel_for(keys.size(), ex.threads, [&](std::size_t i) {
      results[i] = run_cell(ex, contexts_data(contexts, keys[i].scenario), keys[i]);
    });
    for (const auto& r : results) {
      out << "run " << ++done << '/' << total << ' ' << r.stem << '\n';
      summary["runs"].push_back(cell_json(ex, r, contexts.at(r.key.scenario)));
      finals[{r.key.scenario, r.key.mu}].push_back(final_value(r, classification));
    }
  }

  std::ofstream table(ex.output_dir / (ex.name + "__sweep.csv"));
  table << "schema_version," << kCsvSchemaVersion << '\n'
        << "scenario,mu,metric,mean_final,std_final,replicas,best\n";
  json best = json::object();
  std::vector<int> scenarios = ex.sweep.scenarios;
  std::sort(scenarios.begin(), scenarios.end());
  scenarios.erase(std::unique(scenarios.begin(), scenarios.end()), scenarios.end());
  for (int s : scenarios) {
    // Highest mean accuracy (lowest mean log loss for regression); the scan
    // runs over ascending mu with a strict comparison, so ties keep the
    // smaller mu.
    double best_mu = mus.front();
    double best_value = kNaN;
    for (double mu : mus) {
      double m = mean_of(finals[{s, mu}]);
      bool better = std::isnan(best_value) ||
                    (classification ? m > best_value : m < best_value);
      if (!std::isnan(m) && better) {
        best_value = m;
        best_mu = mu;
      }
    }
    for (double mu : mus) {
      const auto& v = finals[{s, mu}];
      table << s << ',' << format_real(mu) << ',' << (classification ? "accuracy" : "log_test_loss")
            << ',' << format_real(mean_of(v)) << ',' << format_real(std_of(v)) << ',' << v.size()
            << ',' << (mu == best_mu ? 1 : 0) << '\n';
    }
    best[std::to_string(s)] = {{"mu", best_mu}, {"mean_final", real_json(best_value)}};
    out << "scenario " << s << ": best mu=" << format_real(best_mu) << " mean final "
        << (classification ? "accuracy" : "log test loss") << '=' << format_real(best_value)
        << '\n';
  }
  summary["best_mu"] = best;
  write_json(ex.output_dir / (ex.name + "__summary.json"), summary);
  return 0;
}

int cmd_bounds(ExperimentFile& ex, std::ostream& out, std::ostream& err) {
  const FederatedConfig& f = ex.federated;
  TheoryParams t = ex.theory.params;
  t.mu = f.mu;
  t.E = static_cast<double>(f.local_epochs);
  t.gamma = f.gamma;
  t.k = static_cast<double>(f.heavy_hitters);
  t.T = static_cast<double>(f.rounds);

  bool need_data = !ex.theory.L_given || !ex.theory.f0_gap || ex.theory.estimate_B;
  std::uint64_t dim = ex.data.kind == DataKind::kSynthetic ? ex.data.synthetic.dim
                      : ex.data.kind == DataKind::kSparseClassification ? ex.data.sparse.dim
                                                                         : ex.data.libsvm.dim;
  double gap = ex.theory.f0_gap.value_or(0.0);
  if (need_data) {
    SeedContext ctx = seed_context(ex, ex.seeds.front(), f.partition.scenario, true);
    dim = ctx.data.dataset.dim;
    if (!ex.theory.L_given) t.L = ctx.L_hat;
    if (!ex.theory.f0_gap) gap = ctx.f0_gap;
    if (ex.theory.estimate_B) {
      RunKey key{f.algorithm, f.partition.scenario, f.mu, ex.seeds.front()};
      FederatedConfig cfg = config_for(ex, key);
      PartitionSpec ps = cfg.partition;
      ps.clients = cfg.clients;
      auto shards = partition(ctx.data.dataset, ctx.data.train, ps);
      DenseVector zero(dim, 0.0);
      auto b = estimate_dissimilarity_B(ctx.data.dataset, shards, f.loss, zero);
      if (b.in_region) t.B = b.value;
      else err << "warning: gradient at w0 is inside the epsilon region; B left at " << t.B << '\n';
    }
  }
  t.d = static_cast<double>(dim);
  if (t.c == 0.0) {
    t.c = static_cast<double>(f.sketch_shape(dim).cols) / static_cast<double>(f.heavy_hitters);
  }
  if (t.W == 0.0) t.W = 1.0;

  GammaBound gm = gamma_max(t);
  TheoremBound tb = theorem_rhs(t, gap);
  double r = rho(t);
  out << "H = " << format_real(theory_H(t)) << '\n'
      << "rho(gamma) = " << format_real(r) << "  (gamma = " << format_real(t.gamma) << ")\n"
      << "gamma_max = " << format_real(gm.value) << '\n'
      << "theorem_rhs:\n"
      << "  optimality_gap    = " << format_real(tb.terms[0]) << '\n'
      << "  unsketch_residual = " << format_real(tb.terms[1]) << '\n'
      << "  bias              = " << format_real(tb.terms[2]) << '\n'
      << "  noise             = " << format_real(tb.terms[3]) << '\n'
      << "  total             = " << format_real(tb.total) << '\n';
  if (!gm.admissible) {
    out << "warning: no admissible learning rate (1 - 6 P_b E^2 B^2 <= 0)\n";
  } else if (t.gamma > gm.value) {
    out << "warning: gamma = " << format_real(t.gamma) << " exceeds gamma_max = "
        << format_real(gm.value) << '\n';
  }

  fs::create_directories(ex.output_dir);
  json j;
  j["schema_version"] = kCsvSchemaVersion;
  j["command"] = "bounds";
  j["config"] = ex.raw;
  j["params"] = {{"L", t.L}, {"mu", t.mu}, {"B", t.B}, {"P_b", t.P_b}, {"b2", t.b2},
                 {"P_n", t.P_n}, {"sigma2", t.sigma2}, {"E", t.E}, {"gamma", t.gamma},
                 {"c", t.c}, {"k", t.k}, {"d", t.d}, {"p", t.p}, {"T", t.T},
                 {"delta", t.delta}, {"W", t.W}, {"f0_gap", gap}};
  j["H"] = theory_H(t);
  j["rho"] = real_json(r);
  j["gamma_max"] = real_json(gm.value);
  j["gamma_admissible"] = gm.admissible;
  j["gamma_exceeds_max"] = gm.admissible && t.gamma > gm.value;
  j["theorem_rhs"] = {{"optimality_gap", real_json(tb.terms[0])},
                      {"unsketch_residual", real_json(tb.terms[1])},
                      {"bias", real_json(tb.terms[2])},
                      {"noise", real_json(tb.terms[3])},
                      {"total", real_json(tb.total)}};
  write_json(ex.output_dir / (ex.name + "__bounds.json"), j);
  return 0;
}

int cmd_diagnose(ExperimentFile& ex, std::ostream& out) {
  fs::create_directories(ex.output_dir);
  const auto& dg = ex.diagnose;
  for (std::uint64_t seed : ex.seeds) {
    SeedContext ctx = seed_context(ex, seed, ex.federated.partition.scenario, false);
    const Dataset& ds = ctx.data.dataset;
    RunKey key{Algorithm::kFedProx, ex.federated.partition.scenario, 0.0, seed};
    FederatedConfig cfg = config_for(ex, key);
    // Unconstrained, noise-free, full-dimension federated SGD.
    cfg.channel.noise_std = 0.0;
    cfg.channel.downlink_noise_std = 0.0;
    cfg.rounds = dg.rounds;
    const std::size_t width = ex.federated.sketch_shape(ds.dim).cols;
    std::size_t batch = dg.batch_size != 0 ? dg.batch_size : ex.federated.batch_size;
    if (batch == 0 || batch > ctx.data.train.size()) batch = ctx.data.train.size();

    Simulation sim(cfg, ds, ctx.data.train, ctx.data.test);
    std::string stem = ex.name + "__diagnose__seed" + std::to_string(seed);
    std::ofstream report(ex.output_dir / (stem + ".csv"));
    report << "schema_version," << kCsvSchemaVersion << '\n'
           << "round,w_norm_sq,soft_sparsity,fitted_p,fit_r2,topk_mass,poor_compressibility\n";
    std::ofstream norms_csv(ex.output_dir / (ex.name + "__norms__seed" + std::to_string(seed) + ".csv"));
    norms_csv << "schema_version," << kCsvSchemaVersion << '\n' << "round,w_norm_sq\n";

    auto checkpoint = [&](std::size_t round) {
      const auto& w = sim.server().weights;
      RngStream rng(seed, stream_key({kTagDiagnoseBatch, round}));
      std::vector<std::size_t> rows;
      for (Index i : rng.sample_without_replacement(ctx.data.train.size(), batch)) {
        rows.push_back(ctx.data.train[i]);
      }
      ProximalObjective obj{cfg.loss, 0.0, {}};
      DenseVector g = minibatch_gradient(obj, w, ds, rows).to_dense();
      CompressibilityReport rep;
      if (squared_norm(g) > 0.0) {
        rep = compressibility(g, cfg.heavy_hitters, width, dg.fit_points);
      } else {
        rep.soft_sparsity = rep.fitted_p = rep.fit_r2 = rep.topk_mass = kNaN;
      }
      report << round << ',' << format_real(squared_norm(w)) << ','
             << format_real(rep.soft_sparsity) << ',' << format_real(rep.fitted_p) << ','
             << format_real(rep.fit_r2) << ',' << format_real(rep.topk_mass) << ','
             << (rep.poor_compressibility ? 1 : 0) << '\n';
      std::vector<double> mags;
      for (double x : g) mags.push_back(std::abs(x));
      std::sort(mags.begin(), mags.end(), std::greater<>());
      if (mags.size() > dg.curve_points) mags.resize(dg.curve_points);
      std::ofstream curve(ex.output_dir / (ex.name + "__curve__round" + std::to_string(round) +
                                           "__seed" + std::to_string(seed) + ".csv"));
      curve << "schema_version," << kCsvSchemaVersion << '\n' << "rank,magnitude\n";
      for (std::size_t i = 0; i < mags.size(); ++i) {
        curve << i + 1 << ',' << format_real(mags[i]) << '\n';
      }
      out << "seed " << seed << " round " << round << ": soft_sparsity="
          << format_real(rep.soft_sparsity) << " p=" << format_real(rep.fitted_p)
          << " r2=" << format_real(rep.fit_r2)
          << (rep.poor_compressibility ? " [poor compressibility]" : "") << '\n';
    };

    auto is_checkpoint = [&](std::size_t r) {
      return std::find(dg.checkpoints.begin(), dg.checkpoints.end(), r) != dg.checkpoints.end();
    };
    if (is_checkpoint(0)) checkpoint(0);
    for (std::size_t t = 1; t <= dg.rounds; ++t) {
      RoundMetrics m = sim.step();
      norms_csv << t << ',' << format_real(m.w_norm_sq) << '\n';
      if (is_checkpoint(t)) checkpoint(t);
    }
  }
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Federated learning over noisy bandlimited channels: simulations and diagnostics",
               "fpslab"};
  app.require_subcommand(1);
  std::string config;
  Overrides o;
  std::string command;
  for (const char* name : {"run", "sweep", "bounds", "diagnose"}) {
    auto* sub = app.add_subcommand(name);
    sub->add_option("config", config, "experiment JSON file")->required();
    sub->add_option("--out", o.out, "output directory");
    sub->add_option("--replicas", o.replicas, "number of replica seeds");
    sub->add_option("--seeds", o.seeds, "comma-separated replica seeds");
    sub->add_option("--threads", o.threads, "worker threads");
    sub->callback([&command, name] { command = name; });
  }
  switch (0) default: {
    try {
      app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
      out << app.help();
      return 0;
    } catch (const CLI::ParseError& e) {
      err << "error: " << e.what() << '\n';
      return 2;
    }
  }

  try {
    ExperimentFile ex = load_experiment(config);
    apply_overrides(ex, o);
    if (command == "run") return cmd_run(ex, out);
    if (command == "sweep") return cmd_sweep(ex, out);
    if (command == "bounds") return cmd_bounds(ex, out, err);
    return cmd_diagnose(ex, out);
  } catch (const SchemaError& e) {
    err << "config error at " << e.path() << ": " << e.what() << '\n';
    return 2;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error (" << command << " " << config << "): " << e.what() << '\n';
    return 1;
  }
}

}  // namespace fpslab
