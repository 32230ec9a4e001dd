#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "xjunction/analysis.hpp"
#include "xjunction/optimizer.hpp"
#include "xjunction/waveform.hpp"

namespace xjunction {

/// Schema violation in a run configuration; maps to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum ExitCode : int { kExitOk = 0, kExitFailed = 1, kExitInvalid = 2, kExitInfeasible = 3 };

struct GeometryConfig {
  std::string kind = "table4";       // table4 | junction | naive | linear | file
  double h = 50.0;
  std::optional<JunctionParams> params;  // kind "junction"
  std::string arms = "extended";     // extended | final (junction kinds)
  double arm_half_length = 0.0;      // naive/linear; 0 means 1e4 h
  std::string segmentation = "none"; // none | reference | linear
  int linear_segments = 6;           // per side, segmentation "linear"
  bool split_outer = true;
  std::string layout_file;           // kind "file": layout JSON
};

struct AnalysisConfig {
  std::string strategy = "min-pp";   // min-pp | fixed-height | const-confinement
  AxialRange range{0.0, 250.0, 1.0};
  Vec3 origin = Vec3::Zero();
  Vec3 axis = Vec3::UnitX();
  double height = 50.0;              // fixed-height
  double target_laplacian = 1.0;     // const-confinement, meV/µm²
  std::optional<double> axial_mhz;   // attach modes with this axial well
};

struct WaveformConfig {
  Vec3 start{0.0, 500.0, 50.0};
  Vec3 stop{0.0, -95.0, 50.0};
  double step = 1.0;                 // µm; start == stop gives a single step
  std::string electrodes = "middle"; // middle | all
  std::string mode = "transport";    // transport | static
  double axial_mhz = 1.5;
  double radial_floor = 3.0;
  double v_min = -10.0;
  double v_max = 10.0;
  WaveformWeights weights;
  double field_tolerance = 1e-3;     // V/m, verification
  double axial_tolerance = 1e-3;     // relative, verification
};

struct SimulateConfig {
  std::optional<Vec3> point;         // default: max-PP point of the analysis path
  std::array<double, 3> targets_mhz{6.51, 4.03, 1.5};
  double duration_us = 4.0;
  double step_fraction = 1.0 / 200.0;
  int decimation = 10;
  std::string start = "orbit";       // orbit | rest
  std::array<double, 2> emm_band{0.0, 0.08};  // relative excess over the estimate
};

struct TiltConfig {
  std::optional<Vec3> zone;          // default: min-PP point above the origin
  double angle_deg = 20.0;
  double v_min = -10.0;
  double v_max = 10.0;
  std::optional<double> degenerate_radial_mhz = 6.06;
};

struct RunConfig {
  PhysicalContext ctx = PhysicalContext::calcium40();
  GeometryConfig geometry;
  OptimizerConfig optimizer;
  CostWeights weights;
  AnalysisConfig analysis;
  WaveformConfig waveform;
  SimulateConfig simulate;
  TiltConfig tilt;
  std::string output = "out";
  std::vector<std::uint64_t> seeds;  // empty: 1..optimizer.seeds
  int threads = 0;

  void validate() const;
};

/// Strict parse: unknown keys and wrong types raise ConfigError.
RunConfig parse_run_config(const nlohmann::json& j);
/// Every field written explicitly; parse_run_config(to_json(c)) reproduces c.
nlohmann::json to_json(const RunConfig& config);

ElectrodeLayout build_layout(const GeometryConfig& geometry);

/// Entry point of the command-line tool. args excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace xjunction
