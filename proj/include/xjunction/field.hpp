#pragma once

#include <array>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "xjunction/geometry.hpp"
#include "xjunction/physics.hpp"

namespace xjunction {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
/// third[k](i, j) = ∂_k ∂_i ∂_j
using Tensor3 = std::array<Mat3, 3>;

class FieldError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct FieldOptions {
  double singular_distance = 0.1;      // µm; closer to an edge is an error
  double third_derivative_step = 1e-2; // µm; central differences of the Hessian
};

/// Basis function Θ of one electrode (or a union of electrodes) and its
/// derivatives at a point above the plane.
struct FieldSample {
  double theta = 0.0;
  Vec3 gradient = Vec3::Zero();   // 1/µm
  Mat3 hessian = Mat3::Zero();    // 1/µm²
  std::optional<Tensor3> third;   // 1/µm³
};

struct PseudoSample {
  double phi = 0.0;               // meV
  Vec3 gradient = Vec3::Zero();   // meV/µm
  Mat3 hessian = Mat3::Zero();    // meV/µm², needs third derivatives
  double laplacian = 0.0;         // meV/µm²
  Vec3 rf_field = Vec3::Zero();   // peak RF field amplitude, V/m
};

/// Static per-charge potential of a voltage assignment, in meV units.
struct StaticSample {
  double potential = 0.0;
  Vec3 gradient = Vec3::Zero();
  Mat3 hessian = Mat3::Zero();
  Vec3 field() const { return -kFieldPerGradient * gradient; }  // V/m
};

/// Edge list of a set of polygons, prepared for repeated evaluation.
class PolygonField {
 public:
  PolygonField() = default;
  explicit PolygonField(std::span<const Polygon> polygons);
  explicit PolygonField(std::span<const Polygon* const> polygons);

  /// Θ = (solid angle subtended at p) / 2π.
  double potential(const Vec3& p) const;
  /// Analytic gradient and (optionally) Hessian of Θ.
  void derivatives(const Vec3& p, Vec3& gradient, Mat3* hessian,
                   double singular_distance = 0.1) const;
  FieldSample sample(const Vec3& p, bool with_third = false, const FieldOptions& opt = {}) const;

  bool empty() const { return edges_.empty(); }

 private:
  struct Edge {
    double ax, ay;  // start
    double ux, uy;  // unit direction
    double length;
  };
  std::vector<Edge> edges_;
};

/// Precomputed basis functions of every electrode of a layout. Immutable
/// and safe to share between threads.
class FieldModel {
 public:
  explicit FieldModel(const ElectrodeLayout& layout, FieldOptions options = {});

  const std::vector<std::string>& names() const { return names_; }
  std::size_t index_of(std::string_view name) const;
  const FieldOptions& options() const { return options_; }

  FieldSample basis(std::size_t index, const Vec3& p, bool with_third = false) const;
  FieldSample basis(std::string_view name, const Vec3& p, bool with_third = false) const;
  double basis_potential(std::string_view name, const Vec3& p) const;
  double basis_potential(std::size_t index, const Vec3& p) const;
  Vec3 basis_gradient(std::size_t index, const Vec3& p) const;

  /// Union of all RF electrodes driven in phase.
  FieldSample rf(const Vec3& p, bool with_third = false) const;
  /// ∇Θ of the RF set only; enough for φ_PP.
  Vec3 rf_gradient(const Vec3& p) const;
  double pseudo_phi(const PhysicalContext& ctx, const Vec3& p) const;
  PseudoSample pseudo(const PhysicalContext& ctx, const Vec3& p, bool with_hessian = false) const;

  StaticSample composite(const std::map<std::string, double>& voltages, const Vec3& p) const;

 private:
  std::vector<std::string> names_;
  std::vector<PolygonField> electrodes_;
  PolygonField rf_;
  FieldOptions options_;
};

void require_above_plane(const Vec3& p);

/// Converts an RF basis sample into the pseudopotential and its derivatives.
PseudoSample pseudo_from_rf(const FieldSample& rf, const PhysicalContext& ctx);

FieldSample basis_potential(const ElectrodeLayout& layout, std::string_view electrode,
                            const Vec3& p);
FieldSample basis_field(const ElectrodeLayout& layout, std::string_view electrode,
                        const Vec3& p, bool with_third = false, const FieldOptions& opt = {});
PseudoSample pseudopotential(const ElectrodeLayout& layout, const PhysicalContext& ctx,
                             const Vec3& p, bool with_hessian = false);
StaticSample composite_static_field(const ElectrodeLayout& layout,
                                    const std::map<std::string, double>& voltages,
                                    const Vec3& p);

struct SecularModes {
  Eigen::Vector3d eigenvalues;                 // meV/µm², ascending
  Mat3 axes;                                   // columns are unit eigenvectors
  std::array<std::optional<double>, 3> frequency_mhz;  // empty for unstable directions
  int unstable_count() const;
};

SecularModes secular_frequencies(const Mat3& hessian, const PhysicalContext& ctx);

/// Closed-form fields of infinite strips parallel to the x axis, as functions
/// of the transverse position (y, z).
namespace strip2d {

struct Sample {
  double theta = 0.0;
  Eigen::Vector2d gradient = Eigen::Vector2d::Zero();  // (∂y, ∂z)
  double grad_squared = 0.0;                           // |∇Θ|²
  double grad_squared_laplacian = 0.0;                 // ∇²|∇Θ|²
};

/// Single strip y ∈ [a, b].
Sample strip(double a, double b, double y, double z);
/// Symmetric RF rail pair |y| ∈ [a, b].
Sample rail_pair(double a, double b, double y, double z);
/// Height of the RF null above the rail pair, √(a b).
double null_height(double a, double b);

}  // namespace strip2d

struct LinearRfOptimum {
  double grid_gap_width = 0.0;   // best w_g on the grid
  double grid_rf_width = 0.0;    // matching w_RF with the null at h
  double continuous_gap_width = 0.0;
  double continuous_rf_width = 0.0;
  double curvature = 0.0;        // ∇²φ_PP at the null for the grid optimum, meV/µm²
};

/// Maximizes the pseudopotential curvature at the RF null of a rail pair
/// whose null is held at height h. The grid has spacing `grid_step` × h in
/// w_g; the continuous optimum is refined by Brent's method.
LinearRfOptimum optimize_linear_rf(double h, const PhysicalContext& ctx, double grid_step = 0.01);

enum class GridQuantity { theta, pseudo };

/// CSV with columns x,y,z,theta (one electrode) or x,y,z,phi_pp,laplacian.
void write_grid_csv(std::ostream& out, const FieldModel& model, const PhysicalContext& ctx,
                    std::span<const Vec3> points, GridQuantity quantity,
                    std::string_view electrode = {});

}  // namespace xjunction
