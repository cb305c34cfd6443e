#include "fpslab/config.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include "fpslab/errors.hpp"

namespace fpslab {
namespace {

using nlohmann::json;

// Reads one JSON object, remembering which keys were consumed so leftovers
// can be rejected.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw SchemaError(label(), "must be an object");
  }

  std::string field(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

  const json* find(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end() || it->is_null()) return nullptr;
    return &*it;
  }

  bool has(const std::string& key) const {
    auto it = j_.find(key);
    return it != j_.end() && !it->is_null();
  }

  double real(const std::string& key, double fallback) {
    const json* v = find(key);
    if (!v) return fallback;
    if (!v->is_number()) throw SchemaError(field(key), "must be a number");
    double x = v->get<double>();
    if (!std::isfinite(x)) throw SchemaError(field(key), "must be finite");
    return x;
  }

  std::uint64_t count(const std::string& key, std::uint64_t fallback) {
    const json* v = find(key);
    if (!v) return fallback;
    if (v->is_number_unsigned()) return v->get<std::uint64_t>();
    if (v->is_number_integer()) {
      if (v->get<std::int64_t>() >= 0) return static_cast<std::uint64_t>(v->get<std::int64_t>());
      throw SchemaError(field(key), "must be a non-negative integer");
    }
    if (v->is_number_float()) {
      double x = v->get<double>();
      if (x >= 0.0 && x == std::floor(x) && x < 1.8e19) return static_cast<std::uint64_t>(x);
    }
    throw SchemaError(field(key), "must be a non-negative integer");
  }

  bool flag(const std::string& key, bool fallback) {
    const json* v = find(key);
    if (!v) return fallback;
    if (!v->is_boolean()) throw SchemaError(field(key), "must be true or false");
    return v->get<bool>();
  }

  std::string text(const std::string& key, const std::string& fallback) {
    const json* v = find(key);
    if (!v) return fallback;
    if (!v->is_string()) throw SchemaError(field(key), "must be a string");
    return v->get<std::string>();
  }

  template <typename Fn>
  void array(const std::string& key, Fn&& each) {
    const json* v = find(key);
    if (!v) return;
    if (!v->is_array()) throw SchemaError(field(key), "must be an array");
    for (std::size_t i = 0; i < v->size(); ++i) {
      each((*v)[i], field(key) + "[" + std::to_string(i) + "]");
    }
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw SchemaError(field(it.key()), "unknown key");
    }
  }

 private:
  std::string label() const { return path_.empty() ? "(root)" : path_; }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void require(bool ok, const std::string& path, const std::string& what) {
  if (!ok) throw SchemaError(path, what);
}

template <typename Enum, typename Fn>
Enum choice(Section& s, const std::string& key, Enum fallback, Fn&& from_string) {
  if (!s.has(key)) {
    s.find(key);
    return fallback;
  }
  std::string name = s.text(key, "");
  try {
    return from_string(name);
  } catch (const ConfigError&) {
    throw SchemaError(s.field(key), "unknown value '" + name + "'");
  }
}

std::uint64_t element_count(const json& v, const std::string& path) {
  if (v.is_number_unsigned()) return v.get<std::uint64_t>();
  if (v.is_number_integer() && v.get<std::int64_t>() >= 0) {
    return static_cast<std::uint64_t>(v.get<std::int64_t>());
  }
  throw SchemaError(path, "must be a non-negative integer");
}

int element_scenario(const json& v, const std::string& path) {
  if (!v.is_number_integer() || v.get<long long>() < 1 || v.get<long long>() > 4) {
    throw SchemaError(path, "scenario must be 1, 2, 3 or 4");
  }
  return static_cast<int>(v.get<long long>());
}

void parse_data(Section& s, DataSource& d) {
  d.kind = choice(s, "kind", DataKind::kSynthetic, [](const std::string& n) {
    if (n == "synthetic") return DataKind::kSynthetic;
    if (n == "sparse_classification") return DataKind::kSparseClassification;
    if (n == "libsvm") return DataKind::kLibsvm;
    throw ConfigError("kind");
  });
  switch (d.kind) {
    case DataKind::kSynthetic: {
      auto& sp = d.synthetic;
      sp.samples = s.count("samples", sp.samples);
      sp.dim = s.count("dim", sp.dim);
      sp.power = s.real("power", sp.power);
      sp.noise_scale = s.real("noise_scale", sp.noise_scale);
      std::string cov = s.text("covariance", "by_scenario");
      d.covariance_by_scenario = cov == "by_scenario";
      if (!d.covariance_by_scenario) {
        sp.covariance = choice(s, "covariance", sp.covariance, covariance_from_string);
      }
      require(sp.samples >= 1, s.field("samples"), "must be >= 1");
      require(sp.dim >= 1, s.field("dim"), "must be >= 1");
      require(sp.power > 1.0, s.field("power"), "must exceed 1");
      require(sp.noise_scale >= 0.0, s.field("noise_scale"), "must be >= 0");
      break;
    }
    case DataKind::kSparseClassification: {
      auto& sp = d.sparse;
      sp.samples = s.count("samples", sp.samples);
      sp.dim = s.count("dim", sp.dim);
      sp.informative = s.count("informative", sp.informative);
      sp.power = s.real("power", sp.power);
      sp.noise_features = s.count("noise_features", sp.noise_features);
      require(sp.samples >= 1, s.field("samples"), "must be >= 1");
      require(sp.informative >= 1, s.field("informative"), "must be >= 1");
      require(sp.informative + sp.noise_features <= sp.dim, s.field("dim"),
              "must cover the informative and noise features");
      break;
    }
    case DataKind::kLibsvm: {
      d.path = s.text("path", "");
      require(!d.path.empty(), s.field("path"), "is required for libsvm data");
      d.test_path = s.text("test_path", "");
      d.libsvm.dim = s.count("dim", 0);
      if (s.has("task")) {
        d.libsvm.task = choice(s, "task", Task::kBinary, task_from_string);
      } else {
        s.find("task");
      }
      break;
    }
  }
}

}  // namespace

ExperimentFile parse_experiment(const json& doc) {
  ExperimentFile ex;
  ex.raw = doc;
  Section root(doc, "");
  root.text("description", "");
  ex.name = root.text("name", ex.name);
  require(!ex.name.empty() && ex.name.find_first_of("/\\") == std::string::npos,
          "name", "must be a non-empty file-name-safe string");
  ex.output_dir = root.text("output_dir", ex.output_dir.string());
  ex.threads = static_cast<unsigned>(root.count("threads", 1));
  require(ex.threads >= 1, "threads", "must be >= 1");

  std::uint64_t base_seed = root.count("seed", 0);
  std::vector<std::uint64_t> seeds;
  root.array("seeds", [&](const json& v, const std::string& path) {
    seeds.push_back(element_count(v, path));
  });
  bool replicas_given = root.has("replicas");
  std::uint64_t replicas = root.count("replicas", seeds.empty() ? 1 : seeds.size());
  require(replicas >= 1, "replicas", "must be >= 1");
  if (!seeds.empty()) {
    require(!replicas_given || replicas == seeds.size(), "replicas",
            "must equal the number of seeds");
    ex.seeds = seeds;
  } else {
    ex.seeds.clear();
    for (std::uint64_t r = 0; r < replicas; ++r) ex.seeds.push_back(base_seed + r);
  }

  if (const json* v = root.find("data")) {
    Section s(*v, "data");
    parse_data(s, ex.data);
    s.finish();
  }

  FederatedConfig& f = ex.federated;
  if (const json* v = root.find("federated")) {
    Section s(*v, "federated");
    f.algorithm = choice(s, "algorithm", f.algorithm, algorithm_from_string);
    f.loss = choice(s, "loss", f.loss, base_loss_from_string);
    f.clients = s.count("clients", f.clients);
    f.local_epochs = s.count("local_epochs", f.local_epochs);
    f.epoch_unit = choice(s, "epoch_unit", f.epoch_unit, epoch_unit_from_string);
    f.gamma = s.real("gamma", f.gamma);
    f.mu = s.real("mu", f.mu);
    f.heavy_hitters = s.count("heavy_hitters", f.heavy_hitters);
    f.rounds = s.count("rounds", f.rounds);
    f.batch_size = s.count("batch_size", f.batch_size);
    f.sketch_rows = s.count("sketch_rows", f.sketch_rows);
    f.sketch_cols = s.count("sketch_cols", f.sketch_cols);
    ex.hash_seed_given = s.has("hash_seed");
    f.hash_seed = s.count("hash_seed", 0);
    f.iterate_policy = choice(s, "iterate_policy", f.iterate_policy, iterate_policy_from_string);
    f.sketch_policy = choice(s, "sketch_policy", f.sketch_policy, sketch_policy_from_string);
    f.blcd_per_client_selection = s.flag("blcd_per_client_selection", false);
    f.test_fraction = s.real("test_fraction", f.test_fraction);
    f.track_dissimilarity = s.flag("track_dissimilarity", false);
    ex.mu_for_baselines = s.flag("mu_for_baselines", false);
    require(f.clients >= 1, s.field("clients"), "must be >= 1");
    require(f.local_epochs >= 1, s.field("local_epochs"), "must be >= 1");
    require(f.gamma > 0.0, s.field("gamma"), "must be positive");
    require(f.mu >= 0.0, s.field("mu"), "must be >= 0");
    require(f.heavy_hitters >= 1, s.field("heavy_hitters"), "must be >= 1");
    require(f.sketch_rows >= 1, s.field("sketch_rows"), "must be >= 1");
    require(f.test_fraction >= 0.0 && f.test_fraction < 1.0, s.field("test_fraction"),
            "must lie in [0, 1)");
    s.finish();
  }

  if (const json* v = root.find("channel")) {
    Section s(*v, "channel");
    f.channel.subcarriers = s.count("subcarriers", 256);
    f.channel.noise_std = s.real("noise_std", 0.0);
    f.channel.downlink_noise_std = s.real("downlink_noise_std", 0.0);
    require(f.channel.subcarriers >= 1, s.field("subcarriers"), "must be >= 1");
    require(f.channel.noise_std >= 0.0, s.field("noise_std"), "must be >= 0");
    require(f.channel.downlink_noise_std >= 0.0, s.field("downlink_noise_std"), "must be >= 0");
    s.finish();
  } else {
    f.channel.subcarriers = 256;
  }
  if (const json* v = root.find("partition")) {
    Section s(*v, "partition");
    f.partition.scenario = static_cast<int>(s.count("scenario", 1));
    require(f.partition.scenario >= 1 && f.partition.scenario <= 4, s.field("scenario"),
            "must be 1, 2, 3 or 4");
    if (s.has("alpha")) {
      f.partition.alpha = s.real("alpha", 0.0);
      require(*f.partition.alpha > 0.0, s.field("alpha"), "must be positive");
    } else {
      s.find("alpha");
    }
    f.partition.classes_per_client = s.count("classes_per_client", 1);
    require(f.partition.classes_per_client >= 1, s.field("classes_per_client"), "must be >= 1");
    s.finish();
  }

  if (const json* v = root.find("comparison")) {
    Section s(*v, "comparison");
    s.array("algorithms", [&](const json& a, const std::string& path) {
      if (!a.is_string()) throw SchemaError(path, "must be a string");
      try {
        ex.comparison.algorithms.push_back(algorithm_from_string(a.get<std::string>()));
      } catch (const ConfigError&) {
        throw SchemaError(path, "unknown algorithm '" + a.get<std::string>() + "'");
      }
    });
    s.array("scenarios", [&](const json& a, const std::string& path) {
      ex.comparison.scenarios.push_back(element_scenario(a, path));
    });
    if (s.has("baseline_local_epochs")) {
      ex.comparison.baseline_local_epochs = s.count("baseline_local_epochs", 1);
      require(*ex.comparison.baseline_local_epochs >= 1, s.field("baseline_local_epochs"),
              "must be >= 1");
    } else {
      s.find("baseline_local_epochs");
    }
    s.finish();
  }

  if (const json* v = root.find("sweep")) {
    Section s(*v, "sweep");
    if (s.has("mu")) ex.sweep.mu.clear();
    s.array("mu", [&](const json& a, const std::string& path) {
      if (!a.is_number() || !(a.get<double>() >= 0.0)) throw SchemaError(path, "must be >= 0");
      ex.sweep.mu.push_back(a.get<double>());
    });
    if (s.has("scenarios")) ex.sweep.scenarios.clear();
    s.array("scenarios", [&](const json& a, const std::string& path) {
      ex.sweep.scenarios.push_back(element_scenario(a, path));
    });
    require(!ex.sweep.mu.empty(), s.field("mu"), "must not be empty");
    require(!ex.sweep.scenarios.empty(), s.field("scenarios"), "must not be empty");
    s.finish();
  }

  if (const json* v = root.find("theory")) {
    Section s(*v, "theory");
    TheoryParams& t = ex.theory.params;
    ex.theory.L_given = s.has("L");
    t.L = s.real("L", t.L);
    t.B = s.real("B", t.B);
    t.P_b = s.real("P_b", t.P_b);
    t.b2 = s.real("b2", t.b2);
    t.P_n = s.real("P_n", t.P_n);
    t.sigma2 = s.real("sigma2", t.sigma2);
    t.c = s.real("c", 0.0);
    t.p = s.real("p", t.p);
    t.delta = s.real("delta", t.delta);
    t.W = s.real("W", 0.0);
    if (s.has("f0_gap")) ex.theory.f0_gap = s.real("f0_gap", 0.0);
    else s.find("f0_gap");
    ex.theory.estimate_B = s.flag("estimate_B", false);
    ex.theory.power_iterations = s.count("power_iterations", ex.theory.power_iterations);
    require(t.L >= 0.0, s.field("L"), "must be >= 0");
    require(t.B > 0.0, s.field("B"), "must be positive");
    require(t.P_b >= 0.0 && t.P_b < 1.0, s.field("P_b"), "must lie in [0, 1)");
    require(t.P_n >= 0.0, s.field("P_n"), "must be >= 0");
    require(t.b2 >= 0.0, s.field("b2"), "must be >= 0");
    require(t.sigma2 >= 0.0, s.field("sigma2"), "must be >= 0");
    require(t.c >= 0.0, s.field("c"), "must be >= 0 (0 derives it from the sketch)");
    require(t.p > 0.5, s.field("p"), "must exceed 1/2");
    require(t.W >= 0.0, s.field("W"), "must be >= 0 (0 measures it)");
    s.finish();
  } else {
    ex.theory.params.c = 0.0;
    ex.theory.params.W = 0.0;
  }

  if (const json* v = root.find("diagnose")) {
    Section s(*v, "diagnose");
    auto& dg = ex.diagnose;
    dg.rounds = s.count("rounds", dg.rounds);
    if (s.has("checkpoints")) dg.checkpoints.clear();
    s.array("checkpoints", [&](const json& a, const std::string& path) {
      std::uint64_t r = element_count(a, path);
      if (r > dg.rounds) throw SchemaError(path, "exceeds diagnose.rounds");
      dg.checkpoints.push_back(r);
    });
    dg.curve_points = s.count("curve_points", dg.curve_points);
    dg.fit_points = s.count("fit_points", dg.fit_points);
    dg.batch_size = s.count("batch_size", dg.batch_size);
    s.finish();
    for (std::size_t r : dg.checkpoints) {
      require(r <= dg.rounds, "diagnose.checkpoints", "entries must not exceed diagnose.rounds");
    }
  }
  root.finish();

  // Cross-field checks.
  std::vector<Algorithm> algs = ex.comparison.algorithms;
  if (algs.empty()) algs.push_back(f.algorithm);
  for (Algorithm a : algs) {
    bool sketch = a == Algorithm::kFps || a == Algorithm::kFetchSgd;
    if (sketch) {
      std::size_t cols = f.sketch_cols != 0 ? f.sketch_cols : f.channel.subcarriers / f.sketch_rows;
      require(cols >= 1, "federated.sketch_rows", "leaves no columns within channel.subcarriers");
      require(cols * f.sketch_rows <= f.channel.subcarriers, "federated.sketch_cols",
              "rows x cols exceeds channel.subcarriers");
    }
    if (a != Algorithm::kBlcd && a != Algorithm::kFedProx) {
      require(f.heavy_hitters <= f.channel.subcarriers, "federated.heavy_hitters",
              "must not exceed channel.subcarriers");
    }
  }
  std::uint64_t dim = ex.data.kind == DataKind::kSynthetic ? ex.data.synthetic.dim
                      : ex.data.kind == DataKind::kSparseClassification ? ex.data.sparse.dim
                                                                         : ex.data.libsvm.dim;
  if (dim != 0) {
    require(f.heavy_hitters <= dim, "federated.heavy_hitters", "must not exceed the dimension");
  }
  if (f.loss == BaseLoss::kLogistic) {
    require(ex.data.kind != DataKind::kSynthetic, "federated.loss",
            "logistic loss needs a classification dataset");
  }
  return ex;
}

ExperimentFile load_experiment(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw SchemaError("(root)", std::string("invalid JSON: ") + e.what());
  }
  return parse_experiment(doc);
}

Covariance covariance_for(const ExperimentFile& ex, int scenario) {
  if (ex.data.kind != DataKind::kSynthetic || !ex.data.covariance_by_scenario) {
    return ex.data.synthetic.covariance;
  }
  return scenario == 1 ? Covariance::kOrdered : Covariance::kTwoPopulation;
}

PreparedData prepare_data(const ExperimentFile& ex, std::uint64_t seed, int scenario) {
  PreparedData out;
  const double test_fraction = ex.federated.test_fraction;
  switch (ex.data.kind) {
    case DataKind::kSynthetic: {
      SyntheticSpec sp = ex.data.synthetic;
      sp.seed = seed;
      sp.covariance = covariance_for(ex, scenario);
      out.dataset = generate_synthetic(sp).dataset;
      break;
    }
    case DataKind::kSparseClassification: {
      SparseClassificationSpec sp = ex.data.sparse;
      sp.seed = seed;
      out.dataset = generate_sparse_classification(sp).dataset;
      break;
    }
    case DataKind::kLibsvm: {
      out.dataset = parse_libsvm(ex.data.path, ex.data.libsvm);
      if (!ex.data.test_path.empty()) {
        LibsvmOptions opts = ex.data.libsvm;
        opts.dim = out.dataset.dim;
        opts.task = out.dataset.task;
        Dataset test = parse_libsvm(ex.data.test_path, opts);
        out.train.resize(out.dataset.size());
        for (std::size_t i = 0; i < out.train.size(); ++i) out.train[i] = i;
        for (std::size_t i = 0; i < test.size(); ++i) {
          out.test.push_back(out.dataset.size());
          out.dataset.rows.push_back(std::move(test.rows[i]));
          out.dataset.labels.push_back(test.labels[i]);
        }
        return out;
      }
      break;
    }
  }
  auto split = split_train_test(out.dataset.size(), test_fraction,
                                stream_key({seed, 0x5b11}));
  out.train = std::move(split.train);
  out.test = std::move(split.test);
  return out;
}

FederatedConfig config_for(const ExperimentFile& ex, const RunKey& key) {
  FederatedConfig cfg = ex.federated;
  cfg.algorithm = key.algorithm;
  cfg.partition.scenario = key.scenario;
  bool prox = key.algorithm == Algorithm::kFps || key.algorithm == Algorithm::kFedProx;
  cfg.mu = (prox || ex.mu_for_baselines) ? key.mu : 0.0;
  cfg.seed = key.seed;
  cfg.partition.seed = key.seed;
  cfg.channel.seed = key.seed;
  if (!ex.hash_seed_given) cfg.hash_seed = key.seed;
  cfg.threads = 1;
  if (ex.comparison.baseline_local_epochs &&
      (key.algorithm == Algorithm::kFetchSgd || key.algorithm == Algorithm::kBlcd)) {
    std::size_t eb = *ex.comparison.baseline_local_epochs;
    std::size_t total = cfg.rounds * cfg.local_epochs;
    cfg.local_epochs = eb;
    cfg.rounds = (total + eb - 1) / eb;
  }
  return cfg;
}

std::string run_file_stem(const ExperimentFile& ex, const RunKey& key) {
  char mu[32];
  std::snprintf(mu, sizeof mu, "%g", key.mu);
  return ex.name + "__" + to_string(key.algorithm) + "__scenario" +
         std::to_string(key.scenario) + "__mu" + mu + "__seed" + std::to_string(key.seed);
}

}  // namespace fpslab
