#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "xjunction/field.hpp"
#include "xjunction/geometry.hpp"

namespace xjunction {

class OptimizerError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// φ'_PP = h²|∇Θ_RF|² with lengths measured in units of h.
struct DimensionlessPseudo {
  double phi = 0.0;
  Vec3 gradient = Vec3::Zero();  // ∂φ'/∂(r/h)
  double laplacian = 0.0;        // ∇'²φ' = h⁴ · 2‖H_Θ‖²
};

DimensionlessPseudo dimensionless_pp(const PolygonField& rf, double h, const Vec3& point);
DimensionlessPseudo dimensionless_pp(const ElectrodeLayout& layout, double h, const Vec3& point);

struct CostWeights {
  double w1 = 1.0;
  double w2 = 1.0;
  void validate() const;
};

struct CostBreakdown {
  double f1 = 0.0;     // variance of ∇'²φ' over the evaluation points
  double f2 = 0.0;     // Σ |∂φ'/∂x'| dx'
  double w1 = 1.0;
  double w2 = 1.0;
  double total = 0.0;  // w1 f1 + w2 f2, +∞ for an invalid geometry
  bool valid = true;
  std::string error;
};

struct NelderMeadSettings {
  double reflection = 1.0;
  double expansion = 2.0;
  double contraction = 0.5;
  double shrink = 0.5;
  double cost_spread = 1e-8;   // stop when max − min cost over the simplex is below
  int max_evaluations = 2000;
  double initial_step = 0.5;   // simplex edge in the search coordinates
  int restarts = 10;           // fresh simplices around the converged point
};

struct OptimizerConfig {
  int points = 101;
  double x_max = 10.0;         // units of h
  int seeds = 16;
  std::vector<std::uint64_t> seed_list;  // overrides 1..seeds when non-empty
  NelderMeadSettings nelder_mead;
  double lower = 0.02;         // per-variable bounds, units of h
  double upper = 6.0;
  int threads = 0;             // 0: hardware concurrency
  int max_start_attempts = 10000;

  double dx() const { return x_max / (points - 1); }
  std::vector<std::uint64_t> seed_values() const;
  void validate() const;
};

/// Cost of the RF shape given by `params` (only the RF electrodes are used).
CostBreakdown evaluate_cost(const JunctionParams& params, const CostWeights& weights,
                            const OptimizerConfig& config = {});
/// Same cost for the RF electrodes of an arbitrary layout, e.g. the naive junction.
CostBreakdown evaluate_cost(const ElectrodeLayout& layout, double h, const CostWeights& weights,
                            const OptimizerConfig& config = {});

struct NelderMeadResult {
  std::vector<double> x;
  double value = 0.0;
  int evaluations = 0;
  bool converged = false;
};

NelderMeadResult nelder_mead(const std::function<double(const std::vector<double>&)>& f,
                             std::vector<double> start, const NelderMeadSettings& settings);

struct SeedOutcome {
  std::uint64_t seed = 0;
  std::array<double, 8> start{};       // normalized
  std::array<double, 8> normalized{};  // result, normalized
  CostBreakdown cost;
  int evaluations = 0;
  bool converged = false;
  std::string error;
};

struct OptimizationReport {
  CostWeights weights;
  double h = 50.0;
  std::vector<SeedOutcome> seeds;  // ordered as the seed list
  std::size_t best = 0;

  JunctionParams best_params() const;
  nlohmann::json to_json() const;
};

/// Random start in the bounds that builds a valid geometry.
std::array<double, 8> random_start(std::uint64_t seed, double h, const OptimizerConfig& config);

/// Multi-start Nelder-Mead. The simplex moves in coordinates u with
/// x = lower + (upper - lower)(1 + sin u)/2, which keeps every trial point
/// inside the bounds.
OptimizationReport optimize(const OptimizerConfig& config, const CostWeights& weights,
                            double h = 50.0);

/// Euclidean distance of each seed result to the best one, normalized units.
std::vector<double> similarity_to_best(const OptimizationReport& report);

}  // namespace xjunction
