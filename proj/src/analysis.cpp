#include "fpslab/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

#include "fpslab/errors.hpp"

namespace fpslab {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

const char* const kCsvColumns =
    "round,algorithm,scenario,test_loss,log_test_loss,accuracy,w_norm_sq,"
    "soft_sparsity_w,B_estimate,reals_transmitted";

double parse_real(const std::string& s) {
  char* end = nullptr;
  double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0') throw ParseError("metrics csv: bad number '" + s + "'", 0);
  return v;
}

}  // namespace

double soft_sparsity(std::span<const double> v) {
  Norms n = norms(v);
  if (n.l2 == 0.0) throw UndefinedInputError("soft sparsity of the zero vector");
  // l1^2 / sum of squares, without squaring the root.
  return (n.l1 * n.l1) / squared_norm(v);
}

double soft_sparsity(const SparseVector& v) { return soft_sparsity(v.values()); }

PowerLawFit fit_power_law(std::span<const double> v, std::size_t max_points) {
  std::vector<double> mags;
  for (double x : v) {
    if (x != 0.0) mags.push_back(std::abs(x));
  }
  if (mags.size() < 10) {
    throw InsufficientDataError("power-law fit needs at least 10 nonzeros, got " +
                                std::to_string(mags.size()));
  }
  std::sort(mags.begin(), mags.end(), std::greater<>());
  if (max_points != 0 && mags.size() > max_points) mags.resize(max_points);

  const double n = static_cast<double>(mags.size());
  double sx = 0.0, sy = 0.0;
  for (std::size_t i = 0; i < mags.size(); ++i) {
    sx += std::log(static_cast<double>(i + 1));
    sy += std::log(mags[i]);
  }
  double mx = sx / n, my = sy / n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < mags.size(); ++i) {
    double dx = std::log(static_cast<double>(i + 1)) - mx;
    double dy = std::log(mags[i]) - my;
    sxx += dx * dx;
    sxy += dx * dy;
    syy += dy * dy;
  }
  PowerLawFit fit;
  fit.points = mags.size();
  double slope = sxy / sxx;
  fit.p = slope == 0.0 ? 0.0 : -slope;
  fit.r2 = syy == 0.0 ? 1.0 : (sxy * sxy) / (sxx * syy);
  return fit;
}

CompressibilityReport compressibility(std::span<const double> v, std::size_t k,
                                      std::size_t width, std::size_t fit_points) {
  CompressibilityReport r;
  r.soft_sparsity = soft_sparsity(v);
  try {
    PowerLawFit fit = fit_power_law(v, fit_points);
    r.fitted_p = fit.p;
    r.fit_r2 = fit.r2;
  } catch (const InsufficientDataError&) {
    r.fitted_p = kNaN;
    r.fit_r2 = kNaN;
  }
  std::vector<double> sq;
  sq.reserve(v.size());
  for (double x : v) sq.push_back(x * x);
  std::size_t kk = std::min(k, sq.size());
  std::partial_sort(sq.begin(), sq.begin() + static_cast<std::ptrdiff_t>(kk), sq.end(),
                    std::greater<>());
  double top = 0.0, total = 0.0;
  for (std::size_t i = 0; i < sq.size(); ++i) {
    if (i < kk) top += sq[i];
    total += sq[i];
  }
  r.topk_mass = top / total;
  r.poor_compressibility = r.soft_sparsity > static_cast<double>(width);
  return r;
}

DenseVector full_gradient(const Dataset& ds, std::span<const std::size_t> rows,
                          BaseLoss loss, std::span<const double> w) {
  DenseVector g(ds.dim, 0.0);
  if (rows.empty()) return g;
  ProximalObjective obj{loss, 0.0, {}};
  minibatch_gradient(obj, w, ds, rows).add_to(g, 1.0);
  return g;
}

DissimilarityEstimate estimate_dissimilarity_B(const Dataset& ds,
                                               std::span<const ClientShard> shards,
                                               BaseLoss loss,
                                               std::span<const double> w,
                                               double epsilon) {
  DissimilarityEstimate est;
  DenseVector mean(ds.dim, 0.0);
  double local_sq = 0.0;
  std::size_t used = 0;
  for (const auto& shard : shards) {
    if (shard.indices.empty()) continue;
    ProximalObjective obj{loss, 0.0, {}};
    SparseVector g = minibatch_gradient(obj, w, ds, shard.indices);
    local_sq += squared_norm(g.values());
    g.add_to(mean, 1.0);
    ++used;
  }
  if (used == 0) throw UsageError("dissimilarity: every shard is empty");
  const double m = static_cast<double>(used);
  for (auto& x : mean) x /= m;
  local_sq /= m;
  est.grad_norm_sq = squared_norm(mean);
  est.in_region = est.grad_norm_sq > epsilon;
  est.value = est.in_region ? std::sqrt(local_sq / est.grad_norm_sq) : kNaN;
  return est;
}

void TheoryParams::validate() const {
  if (!(P_b >= 0.0 && P_b < 1.0)) throw ConfigError("theory: P_b must lie in [0, 1)");
  if (!(P_n >= 0.0)) throw ConfigError("theory: P_n must be >= 0");
  if (!(b2 >= 0.0) || !(sigma2 >= 0.0)) throw ConfigError("theory: b2 and sigma2 must be >= 0");
  if (!(B > 0.0)) throw ConfigError("theory: B must be positive");
  if (!(E >= 1.0)) throw ConfigError("theory: E must be >= 1");
  if (!(gamma > 0.0)) throw ConfigError("theory: gamma must be positive");
  if (!(c > 0.0)) throw ConfigError("theory: c must be positive");
  if (!(p > 0.5)) throw ConfigError("theory: p must exceed 1/2");
  if (!(T >= 0.0)) throw ConfigError("theory: T must be >= 0");
  if (!(mu >= 0.0) || !(L >= 0.0)) throw ConfigError("theory: L and mu must be >= 0");
}

double theory_H(const TheoryParams& t) {
  return 1.0 / (1.0 + 2.0 * t.B * t.B * (t.P_b + t.P_n));
}

double rho(const TheoryParams& t) {
  const double H = theory_H(t);
  const double B2 = t.B * t.B;
  const double E2 = t.E * t.E;
  const double head = (1.0 - t.P_b * (1.0 + 2.0 * H) * E2 * B2) / 2.0;
  const double slope =
      (2.0 + 2.0 * t.P_b * B2 + (2.0 * (t.L + t.mu) + 1.0) * t.P_n * B2) * (1.0 + 2.0 * H) * E2;
  return head - t.gamma * slope;
}

GammaBound gamma_max(const TheoryParams& t) {
  const double B2 = t.B * t.B;
  const double E2 = t.E * t.E;
  GammaBound g;
  const double num = 1.0 - 6.0 * t.P_b * E2 * B2;
  g.value = num / (12.0 * (1.0 + t.P_b * B2 + (t.L + t.mu + 1.0) * t.P_n * B2) * E2);
  g.admissible = num > 0.0;
  return g;
}

double residual_factor(double c, double k, double d, double p) {
  const double e = 1.0 - 2.0 * p;
  return 1.0 / c + (std::pow(k + 1.0, e) - std::pow(d, e)) / (2.0 * p - 1.0);
}

TheoremBound theorem_rhs(const TheoryParams& t, double f0_gap) {
  const double B2 = t.B * t.B;
  const double E2 = t.E * t.E;
  const double Lm = t.L + t.mu;
  TheoremBound b;
  b.terms[0] = std::abs(f0_gap) / (t.gamma * (t.T + 1.0));
  b.terms[1] = residual_factor(t.c, t.k, t.d, t.p) * Lm * Lm * t.W;
  b.terms[2] = 2.0 * E2 *
               (1.0 + 2.0 * t.P_b * B2 +
                t.gamma * (3.0 + Lm + 2.0 * t.P_b * B2 + 2.0 * t.P_n * B2)) *
               t.b2;
  b.terms[3] = 2.0 * E2 *
               (1.0 + t.gamma * (Lm + 1.0) * (3.0 + 2.0 * t.P_b * B2 + 2.0 * t.P_n * B2)) *
               t.sigma2;
  b.total = b.terms[0] + b.terms[1] + b.terms[2] + b.terms[3];
  return b;
}

AffineFit fit_affine_bound(std::span<const double> x, std::span<const double> y,
                           double slope_lo, double slope_hi) {
  if (x.size() != y.size()) throw UsageError("affine fit: length mismatch");
  if (x.size() < 2) throw InsufficientDataError("affine fit needs at least 2 points");
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  AffineFit fit;
  fit.slope = sxx > 0.0 ? sxy / sxx : 0.0;
  fit.intercept = my - fit.slope * mx;
  fit.r2 = (sxx > 0.0 && syy > 0.0) ? (sxy * sxy) / (sxx * syy) : 1.0;
  if (fit.slope < slope_lo || fit.slope > slope_hi) {
    fit.slope = std::clamp(fit.slope, slope_lo, slope_hi);
    fit.clipped = true;
  }
  if (fit.intercept < 0.0) {
    fit.intercept = 0.0;
    fit.clipped = true;
  }
  return fit;
}

std::string format_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_metrics_csv(std::ostream& out, std::span<const RoundMetrics> rows) {
  out << "schema_version," << kCsvSchemaVersion << '\n' << kCsvColumns << '\n';
  for (const auto& r : rows) {
    out << r.round << ',' << r.algorithm << ',' << r.scenario << ','
        << format_real(r.test_loss) << ',' << format_real(r.log_test_loss) << ','
        << format_real(r.accuracy) << ',' << format_real(r.w_norm_sq) << ','
        << format_real(r.soft_sparsity_w) << ',' << format_real(r.B_estimate) << ','
        << r.reals_transmitted << '\n';
  }
}

std::vector<RoundMetrics> read_metrics_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "schema_version," + std::to_string(kCsvSchemaVersion)) {
    throw ParseError("metrics csv: missing or unsupported schema version", 1);
  }
  if (!std::getline(in, line) || line != kCsvColumns) {
    throw ParseError("metrics csv: unexpected header", 2);
  }
  std::vector<RoundMetrics> rows;
  std::size_t line_no = 2;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != 10) throw ParseError("metrics csv: expected 10 fields", line_no);
    try {
      RoundMetrics r;
      r.round = std::stoull(f[0]);
      r.algorithm = f[1];
      r.scenario = f[2];
      r.test_loss = parse_real(f[3]);
      r.log_test_loss = parse_real(f[4]);
      r.accuracy = parse_real(f[5]);
      r.w_norm_sq = parse_real(f[6]);
      r.soft_sparsity_w = parse_real(f[7]);
      r.B_estimate = parse_real(f[8]);
      r.reals_transmitted = std::stoull(f[9]);
      rows.push_back(std::move(r));
    } catch (const ParseError&) {
      throw ParseError("metrics csv: bad number", line_no);
    } catch (const std::logic_error&) {
      throw ParseError("metrics csv: bad integer", line_no);
    }
  }
  return rows;
}

}  // namespace fpslab
