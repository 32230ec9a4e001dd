#include "xjunction/optimizer.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <thread>

namespace xjunction {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double spread(const std::vector<double>& f) {
  const auto [lo, hi] = std::minmax_element(f.begin(), f.end());
  if (!std::isfinite(*hi)) return kInf;
  return *hi - *lo;
}

}  // namespace

DimensionlessPseudo dimensionless_pp(const PolygonField& rf, double h, const Vec3& point) {
  if (!(h > 0.0)) throw std::invalid_argument("h must be positive");
  Vec3 g;
  Mat3 H;
  rf.derivatives(point, g, &H);
  DimensionlessPseudo d;
  d.phi = h * h * g.squaredNorm();
  d.gradient = 2.0 * h * h * h * (H * g);
  d.laplacian = 2.0 * std::pow(h, 4) * H.squaredNorm();
  return d;
}

DimensionlessPseudo dimensionless_pp(const ElectrodeLayout& layout, double h, const Vec3& point) {
  const auto rf = layout.rf_polygons();
  return dimensionless_pp(PolygonField(std::span<const Polygon* const>(rf)), h, point);
}

void CostWeights::validate() const {
  if (!(w1 >= 0.0) || !(w2 >= 0.0) || !std::isfinite(w1) || !std::isfinite(w2))
    throw std::invalid_argument("cost weights must be finite and non-negative");
  if (w1 == 0.0 && w2 == 0.0) throw std::invalid_argument("at least one weight must be positive");
}

std::vector<std::uint64_t> OptimizerConfig::seed_values() const {
  if (!seed_list.empty()) return seed_list;
  std::vector<std::uint64_t> s(static_cast<std::size_t>(std::max(seeds, 0)));
  std::iota(s.begin(), s.end(), std::uint64_t{1});
  return s;
}

void OptimizerConfig::validate() const {
  if (points < 3) throw std::invalid_argument("at least 3 evaluation points are required");
  if (!(x_max > 0.0)) throw std::invalid_argument("x_max must be positive");
  if (seed_list.empty() && seeds < 1) throw std::invalid_argument("at least one seed is required");
  if (!(lower > 0.0) || !(upper > lower)) throw std::invalid_argument("invalid parameter bounds");
  if (threads < 0) throw std::invalid_argument("threads must be non-negative");
  const auto& nm = nelder_mead;
  if (!(nm.reflection > 0.0) || !(nm.expansion > 1.0) || !(nm.contraction > 0.0 && nm.contraction < 1.0) ||
      !(nm.shrink > 0.0 && nm.shrink < 1.0) || !(nm.cost_spread >= 0.0) || nm.max_evaluations < 1 ||
      !(nm.initial_step > 0.0))
    throw std::invalid_argument("invalid Nelder-Mead settings");
}

namespace {

template <class MakeField>
CostBreakdown cost_of(MakeField make_field, double h, const CostWeights& weights,
                      const OptimizerConfig& config) {
  CostBreakdown c;
  c.w1 = weights.w1;
  c.w2 = weights.w2;
  try {
    const PolygonField rf = make_field();
    const int n = config.points;
    const double dx = config.dx();
    std::vector<double> lap(n);
    double f2 = 0.0;
    for (int i = 0; i < n; ++i) {
      const DimensionlessPseudo d = dimensionless_pp(rf, h, Vec3(i * dx * h, 0.0, h));
      lap[i] = d.laplacian;
      f2 += std::abs(d.gradient.x()) * dx;
    }
    const double mean = std::accumulate(lap.begin(), lap.end(), 0.0) / n;
    double var = 0.0;
    for (double v : lap) var += (v - mean) * (v - mean);
    c.f1 = var / n;
    c.f2 = f2;
    c.total = c.w1 * c.f1 + c.w2 * c.f2;
    if (!std::isfinite(c.total)) throw FieldError("non-finite cost");
  } catch (const std::exception& e) {
    c.valid = false;
    c.error = e.what();
    c.f1 = c.f2 = c.total = kInf;
  }
  return c;
}

}  // namespace

CostBreakdown evaluate_cost(const JunctionParams& params, const CostWeights& weights,
                            const OptimizerConfig& config) {
  return cost_of(
      [&] {
        const std::vector<Polygon> polys = junction_rf_polygons(params);
        return PolygonField(std::span<const Polygon>(polys));
      },
      params.h, weights, config);
}

CostBreakdown evaluate_cost(const ElectrodeLayout& layout, double h, const CostWeights& weights,
                            const OptimizerConfig& config) {
  return cost_of(
      [&] {
        const auto rf = layout.rf_polygons();
        return PolygonField(std::span<const Polygon* const>(rf));
      },
      h, weights, config);
}

namespace {

NelderMeadResult nelder_mead_once(const std::function<double(const std::vector<double>&)>& f,
                             std::vector<double> start, const NelderMeadSettings& s,
                                  int budget) {
  const std::size_t n = start.size();
  NelderMeadResult r;
  auto eval = [&](const std::vector<double>& x) {
    ++r.evaluations;
    return f(x);
  };
  std::vector<std::vector<double>> X(n + 1, start);
  std::vector<double> F(n + 1);
  F[0] = eval(start);
  for (std::size_t i = 0; i < n; ++i) {
    X[i + 1][i] += s.initial_step;
    F[i + 1] = eval(X[i + 1]);
    if (!std::isfinite(F[i + 1])) {
      X[i + 1][i] = start[i] - s.initial_step;
      F[i + 1] = eval(X[i + 1]);
    }
  }
  std::vector<std::size_t> order(n + 1);
  auto point = [&](const std::vector<double>& c, const std::vector<double>& x, double t) {
    std::vector<double> p(n);
    for (std::size_t k = 0; k < n; ++k) p[k] = c[k] + t * (x[k] - c[k]);
    return p;
  };
  while (true) {
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return F[a] < F[b]; });
    const std::size_t best = order.front(), worst = order.back(), second = order[n - 1];
    if (spread(F) < s.cost_spread) {
      r.converged = true;
      break;
    }
    if (r.evaluations >= budget) break;

    std::vector<double> c(n, 0.0);
    for (std::size_t i = 0; i <= n; ++i)
      if (i != worst)
        for (std::size_t k = 0; k < n; ++k) c[k] += X[i][k] / static_cast<double>(n);

    const auto xr = point(c, X[worst], -s.reflection);
    const double fr = eval(xr);
    if (fr < F[best]) {
      const auto xe = point(c, xr, s.expansion);
      const double fe = eval(xe);
      if (fe < fr) {
        X[worst] = xe;
        F[worst] = fe;
      } else {
        X[worst] = xr;
        F[worst] = fr;
      }
      continue;
    }
    if (fr < F[second]) {
      X[worst] = xr;
      F[worst] = fr;
      continue;
    }
    if (fr < F[worst]) {
      const auto xc = point(c, xr, s.contraction);
      const double fc = eval(xc);
      if (fc <= fr) {
        X[worst] = xc;
        F[worst] = fc;
        continue;
      }
    } else {
      const auto xc = point(c, X[worst], s.contraction);
      const double fc = eval(xc);
      if (fc < F[worst]) {
        X[worst] = xc;
        F[worst] = fc;
        continue;
      }
    }
    for (std::size_t i = 0; i <= n; ++i) {
      if (i == best) continue;
      X[i] = point(X[best], X[i], s.shrink);
      F[i] = eval(X[i]);
    }
  }
  const auto it = std::min_element(F.begin(), F.end());
  r.x = X[static_cast<std::size_t>(it - F.begin())];
  r.value = *it;
  return r;
}

}  // namespace

NelderMeadResult nelder_mead(const std::function<double(const std::vector<double>&)>& f,
                             std::vector<double> start, const NelderMeadSettings& s) {
  NelderMeadResult best = nelder_mead_once(f, std::move(start), s, s.max_evaluations);
  for (int k = 0; k < s.restarts && best.converged && best.evaluations < s.max_evaluations; ++k) {
    NelderMeadResult next = nelder_mead_once(f, best.x, s, s.max_evaluations - best.evaluations);
    next.evaluations += best.evaluations;
    const bool improved = best.value - next.value > s.cost_spread;
    if (next.value < best.value) {
      best.x = next.x;
      best.value = next.value;
    }
    best.evaluations = next.evaluations;
    best.converged = next.converged;
    if (!improved) break;
  }
  return best;
}

std::array<double, 8> random_start(std::uint64_t seed, double h, const OptimizerConfig& config) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(config.lower, config.upper);
  JunctionParams p = JunctionParams::with_linear_rails(h);
  for (int attempt = 0; attempt < config.max_start_attempts; ++attempt) {
    std::array<double, 8> x;
    for (double& v : x) v = u(rng);
    p.set_normalized(x);
    try {
      junction_rf_polygons(p);
      return x;
    } catch (const GeometryError&) {
    }
  }
  throw OptimizerError("no valid random start for seed " + std::to_string(seed) + " after " +
                       std::to_string(config.max_start_attempts) + " attempts");
}

JunctionParams OptimizationReport::best_params() const {
  JunctionParams p = JunctionParams::with_linear_rails(h);
  p.set_normalized(seeds.at(best).normalized);
  return p;
}

nlohmann::json OptimizationReport::to_json() const {
  auto number = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(); };
  nlohmann::json runs = nlohmann::json::array();
  for (const auto& s : seeds) {
    nlohmann::json params, start;
    for (std::size_t i = 0; i < 8; ++i) {
      params[kJunctionVariableNames[i]] = s.normalized[i];
      start[kJunctionVariableNames[i]] = s.start[i];
    }
    nlohmann::json j = {{"seed", s.seed},
                        {"params", params},
                        {"start", start},
                        {"f1", number(s.cost.f1)},
                        {"f2", number(s.cost.f2)},
                        {"f_cost", number(s.cost.total)},
                        {"evaluations", s.evaluations},
                        {"converged", s.converged}};
    if (!s.error.empty()) j["error"] = s.error;
    runs.push_back(j);
  }
  const auto sim = similarity_to_best(*this);
  for (std::size_t i = 0; i < runs.size(); ++i) runs[i]["distance_to_best"] = number(sim[i]);
  return {{"weights", {{"w1", weights.w1}, {"w2", weights.w2}}},
          {"h", h},
          {"params_unit", "h"},
          {"best_seed", seeds.at(best).seed},
          {"seeds", runs}};
}

OptimizationReport optimize(const OptimizerConfig& config, const CostWeights& weights, double h) {
  config.validate();
  weights.validate();
  if (!(h > 0.0)) throw std::invalid_argument("h must be positive");
  const auto seed_values = config.seed_values();
  OptimizationReport report;
  report.weights = weights;
  report.h = h;
  report.seeds.resize(seed_values.size());

  auto run = [&](std::size_t index) {
    SeedOutcome& out = report.seeds[index];
    out.seed = seed_values[index];
    try {
      out.start = random_start(out.seed, h, config);
      const double lo = config.lower, span = config.upper - config.lower;
      auto to_box = [&](double u) { return lo + 0.5 * span * (1.0 + std::sin(u)); };
      auto objective = [&](const std::vector<double>& u) {
        std::array<double, 8> v;
        for (std::size_t k = 0; k < 8; ++k) v[k] = to_box(u[k]);
        JunctionParams p = JunctionParams::with_linear_rails(h);
        p.set_normalized(v);
        return evaluate_cost(p, weights, config).total;
      };
      std::vector<double> u0(8);
      for (std::size_t k = 0; k < 8; ++k)
        u0[k] = std::asin(std::clamp(2.0 * (out.start[k] - lo) / span - 1.0, -1.0, 1.0));
      const NelderMeadResult r = nelder_mead(objective, u0, config.nelder_mead);
      for (std::size_t k = 0; k < 8; ++k) out.normalized[k] = to_box(r.x[k]);
      out.evaluations = r.evaluations;
      out.converged = r.converged;
      JunctionParams p = JunctionParams::with_linear_rails(h);
      p.set_normalized(out.normalized);
      out.cost = evaluate_cost(p, weights, config);
    } catch (const std::exception& e) {
      out.error = e.what();
      out.cost.valid = false;
      out.cost.total = out.cost.f1 = out.cost.f2 = kInf;
    }
  };

  unsigned workers = config.threads > 0 ? static_cast<unsigned>(config.threads)
                                        : std::max(1u, std::thread::hardware_concurrency());
  workers = std::min<unsigned>(workers, static_cast<unsigned>(seed_values.size()));
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < workers; ++t)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < seed_values.size(); i = next++) run(i);
    });
  for (auto& t : pool) t.join();

  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < report.seeds.size(); ++i) {
    const auto& s = report.seeds[i];
    if (!s.cost.valid) continue;
    if (!best || s.cost.total < report.seeds[*best].cost.total) best = i;
  }
  if (!best) {
    std::string msg = "all seeds failed:";
    for (const auto& s : report.seeds)
      msg += " [seed " + std::to_string(s.seed) + ": " +
             (s.error.empty() ? s.cost.error : s.error) + "]";
    throw OptimizerError(msg);
  }
  report.best = *best;
  return report;
}

std::vector<double> similarity_to_best(const OptimizationReport& report) {
  std::vector<double> d;
  const auto& b = report.seeds.at(report.best).normalized;
  for (const auto& s : report.seeds) {
    double sum = 0.0;
    for (std::size_t k = 0; k < 8; ++k) sum += (s.normalized[k] - b[k]) * (s.normalized[k] - b[k]);
    d.push_back(s.cost.valid ? std::sqrt(sum) : kInf);
  }
  return d;
}

}  // namespace xjunction
