#include "xjunction/waveform.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>
#include <thread>

namespace xjunction {

namespace {

using Eigen::VectorXd;
using Triplets = std::vector<Eigen::Triplet<double>>;

// V/m · µm → V
constexpr double kFieldLength = 1e-6;

double project(const Mat3& m, const Vec3& a, const Vec3& b) { return a.dot(m * b); }

Vec3 snap_to_arm(const Vec3& d) {
  if (std::abs(d.x()) >= std::abs(d.y())) return Vec3::UnitX();
  return Vec3::UnitY();
}

// Transverse in-plane direction and surface normal for an axis.
std::pair<Vec3, Vec3> transverse(const Vec3& axis) {
  return {Vec3::UnitZ().cross(axis).normalized(), Vec3::UnitZ()};
}

SparseMatrix from_triplets(Eigen::Index rows, Eigen::Index cols, const Triplets& t) {
  SparseMatrix m(rows, cols);
  m.setFromTriplets(t.begin(), t.end());
  return m;
}

template <class F>
void parallel_for(std::size_t n, int threads, F&& body) {
  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  const std::size_t workers =
      std::min<std::size_t>(n, threads > 0 ? static_cast<unsigned>(threads) : hw);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) body(i);
    });
  for (auto& t : pool) t.join();
}

bool is_middle_segment(const std::string& name) {
  if (name == "c") return true;
  if (name.size() < 2 || std::string("RULD").find(name[0]) == std::string::npos) return false;
  return std::all_of(name.begin() + 1, name.end(), [](unsigned char ch) { return std::isdigit(ch); });
}

struct Rows {
  Triplets eq, ineq;
  std::vector<double> b_eq, b_ineq;
  std::vector<std::pair<ConstraintClass, std::size_t>> eq_tag, ineq_tag;
};

// Constraint rows of one step, variables offset by `base`.
void add_step_rows(Rows& r, const FieldTable& t, const TransportRequest& req,
                   const PhysicalContext& ctx, const Vec3& axis, std::size_t step,
                   Eigen::Index base) {
  const std::size_t J = t.size();
  const double target = ctx.curvature_for_frequency(req.axial_at(step));
  const double sh = 1.0 / target;
  const double se = req.h * kFieldLength;
  const auto [tr, n] = transverse(axis);
  const Mat3& hp = t.pseudo_hessian[step];

  auto eq_row = [&](ConstraintClass c, auto coef, double rhs) {
    const auto row = static_cast<Eigen::Index>(r.b_eq.size());
    for (std::size_t j = 0; j < J; ++j) {
      const double v = coef(j);
      if (v != 0.0) r.eq.emplace_back(row, base + static_cast<Eigen::Index>(j), v);
    }
    r.b_eq.push_back(rhs);
    r.eq_tag.emplace_back(c, step);
  };
  auto ineq_row = [&](ConstraintClass c, auto coef, double rhs) {
    const auto row = static_cast<Eigen::Index>(r.b_ineq.size());
    for (std::size_t j = 0; j < J; ++j) {
      const double v = coef(j);
      if (v != 0.0) r.ineq.emplace_back(row, base + static_cast<Eigen::Index>(j), v);
    }
    r.b_ineq.push_back(rhs);
    r.ineq_tag.emplace_back(c, step);
  };

  for (int k = 0; k < 3; ++k)
    eq_row(ConstraintClass::field, [&](std::size_t j) { return se * t.field[step](k, j); },
           -se * t.pseudo_field[step][k]);
  for (const Vec3& b : {tr, n})
    eq_row(ConstraintClass::alignment,
           [&](std::size_t j) { return sh * project(t.hessian[step][j], axis, b); },
           -sh * project(hp, axis, b));
  eq_row(ConstraintClass::axial_curvature,
         [&](std::size_t j) { return sh * project(t.hessian[step][j], axis, axis); },
         sh * (target - project(hp, axis, axis)));
  for (const Vec3& b : {tr, n})
    ineq_row(ConstraintClass::radial_floor,
             [&](std::size_t j) { return -sh * project(t.hessian[step][j], b, b); },
             sh * (project(hp, b, b) - req.radial_floor * target));
}

[[noreturn]] void report_infeasible(const QpSolution& sol, const Rows& rows, std::size_t J) {
  const VectorXd& y = sol.certificate;
  const Eigen::Index n_eq = static_cast<Eigen::Index>(rows.b_eq.size());
  const Eigen::Index n_in = static_cast<Eigen::Index>(rows.b_ineq.size());
  auto tag = [&](Eigen::Index k) -> std::pair<ConstraintClass, std::size_t> {
    if (k < n_eq) return rows.eq_tag[k];
    if (k < n_eq + n_in) return rows.ineq_tag[k - n_eq];
    return {ConstraintClass::voltage_bounds, static_cast<std::size_t>(k - n_eq - n_in) / J};
  };
  if (y.size() == 0) throw WaveformInfeasible(ConstraintClass::field, 0, "no certificate");
  Eigen::Index top = 0;
  y.cwiseAbs().maxCoeff(&top);
  const auto [cls, top_step] = tag(top);
  std::size_t first = top_step;
  const double cut = 1e-3 * std::abs(y[top]);
  for (Eigen::Index k = 0; k < y.size(); ++k) {
    if (std::abs(y[k]) < cut) continue;
    const auto [c, s] = tag(k);
    if (c == cls) first = std::min(first, s);
  }
  throw WaveformInfeasible(cls, first, "waveform constraints cannot be met");
}

Waveform assemble(const TransportRequest& req, const FieldTable& t, const PhysicalContext& ctx,
                  const std::vector<Vec3>& axes, std::size_t first, std::size_t count,
                  bool smooth) {
  const std::size_t J = t.size();
  const Eigen::Index n = static_cast<Eigen::Index>(count * J);
  const auto& w = req.weights;
  const double se = req.h * kFieldLength;
  auto var = [&](std::size_t i, std::size_t j) { return static_cast<Eigen::Index>(i * J + j); };

  Triplets p;
  VectorXd q = VectorXd::Zero(n);
  if (smooth) {
    for (std::size_t i = 0; i + 1 < count; ++i)
      for (std::size_t j = 0; j < J; ++j) {
        const Eigen::Index a = var(i, j), b = var(i + 1, j);
        const double c = 2.0 * w.smoothness1;
        p.emplace_back(a, a, c);
        p.emplace_back(b, b, c);
        p.emplace_back(a, b, -c);
        p.emplace_back(b, a, -c);
      }
    for (std::size_t i = 1; i + 1 < count; ++i)
      for (std::size_t j = 0; j < J; ++j) {
        const std::array<Eigen::Index, 3> idx = {var(i - 1, j), var(i, j), var(i + 1, j)};
        const std::array<double, 3> c = {1.0, -2.0, 1.0};
        for (int a = 0; a < 3; ++a)
          for (int b = 0; b < 3; ++b)
            p.emplace_back(idx[a], idx[b], 2.0 * w.smoothness2 * c[a] * c[b]);
      }
  }
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t s = first + i;
    const Vec3& r = t.positions[s];
    const Vec3& a = axes[s];
    for (std::size_t j = 0; j < J; ++j) {
      const Vec2 c = t.centroids[j];
      const double d = (Vec3(c.x, c.y, 0.0) - Vec3(r.x(), r.y(), 0.0)).dot(a) / req.h;
      p.emplace_back(var(i, j), var(i, j), 2.0 * (w.locality * d * d + w.ridge));
    }
    // residual field
    const Eigen::Matrix3Xd f = se * t.field[s];
    const Eigen::MatrixXd ff = 2.0 * w.residual * f.transpose() * f;
    for (std::size_t a = 0; a < J; ++a)
      for (std::size_t b = 0; b < J; ++b)
        if (ff(a, b) != 0.0) p.emplace_back(var(i, a), var(i, b), ff(a, b));
    q.segment(var(i, 0), J) += 2.0 * w.residual * f.transpose() * (se * t.pseudo_field[s]);
  }

  Rows rows;
  for (std::size_t i = 0; i < count; ++i)
    add_step_rows(rows, t, req, ctx, axes[first + i], first + i, var(i, 0));

  QuadraticProgram qp;
  qp.P = from_triplets(n, n, p);
  qp.q = q;
  qp.A_eq = from_triplets(static_cast<Eigen::Index>(rows.b_eq.size()), n, rows.eq);
  qp.b_eq = Eigen::Map<const VectorXd>(rows.b_eq.data(), static_cast<Eigen::Index>(rows.b_eq.size()));
  qp.A_ineq = from_triplets(static_cast<Eigen::Index>(rows.b_ineq.size()), n, rows.ineq);
  qp.b_ineq =
      Eigen::Map<const VectorXd>(rows.b_ineq.data(), static_cast<Eigen::Index>(rows.b_ineq.size()));
  qp.lo = VectorXd::Constant(n, req.v_min);
  qp.hi = VectorXd::Constant(n, req.v_max);

  const QpSolution sol = solve(qp, req.qp);
  if (sol.status == QpStatus::infeasible) report_infeasible(sol, rows, J);
  if (sol.status == QpStatus::unbounded) throw WaveformError("waveform QP is unbounded");

  Waveform out;
  out.electrodes = t.electrodes;
  out.status = sol.status;
  out.iterations = sol.iterations;
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t s = first + i;
    VectorXd v = sol.v.segment(var(i, 0), J);
    Mat3 hess = t.pseudo_hessian[s];
    for (std::size_t j = 0; j < J; ++j) hess += v[j] * t.hessian[s][j];
    const Vec3 e = t.pseudo_field[s] + t.field[s] * v;
    out.positions.push_back(t.positions[s]);
    out.steps.push_back(std::move(v));
    out.diagnostics.push_back(diagnose(hess, e, axes[s], ctx));
  }
  return out;
}

std::vector<Vec3> request_axes(const TransportRequest& req) {
  if (!req.axes.empty()) {
    std::vector<Vec3> a;
    for (const Vec3& v : req.axes) a.push_back(Vec3(v.x(), v.y(), 0.0).normalized());
    return a;
  }
  return default_axes(req.positions);
}

void check_table(const TransportRequest& req, const FieldTable& t) {
  req.validate();
  if (t.steps() != req.positions.size())
    throw WaveformError("field table has " + std::to_string(t.steps()) + " steps, request has " +
                        std::to_string(req.positions.size()));
  for (std::size_t i = 0; i < t.steps(); ++i)
    if ((t.positions[i] - req.positions[i]).norm() > 1e-9)
      throw WaveformError("field table position " + std::to_string(i) + " differs from the path");
  if (t.size() == 0) throw WaveformError("no control electrodes");
}

}  // namespace

const char* to_string(ConstraintClass c) {
  switch (c) {
    case ConstraintClass::field:
      return "zero total field";
    case ConstraintClass::alignment:
      return "axis alignment";
    case ConstraintClass::axial_curvature:
      return "axial curvature";
    case ConstraintClass::radial_floor:
      return "radial curvature floor";
    case ConstraintClass::voltage_bounds:
      return "voltage bounds";
  }
  return "?";
}

WaveformInfeasible::WaveformInfeasible(ConstraintClass c, std::size_t step,
                                       const std::string& detail)
    : WaveformError(std::string("infeasible: ") + to_string(c) + " at step " +
                    std::to_string(step) + " (" + detail + ")"),
      constraint_(c),
      step_(step) {}

std::array<double, 6> FieldTable::hessian_elements(std::size_t step, std::size_t electrode) const {
  const Mat3& m = hessian.at(step).at(electrode);
  return {m(0, 0), m(0, 1), m(0, 2), m(1, 1), m(1, 2), m(2, 2)};
}

std::vector<std::string> middle_segments(const ElectrodeLayout& layout) {
  std::vector<std::string> out;
  for (const auto& n : layout.names_with_role(ElectrodeRole::control))
    if (is_middle_segment(n)) out.push_back(n);
  return out;
}

FieldTable build_field_table(const FieldModel& model, const ElectrodeLayout& layout,
                             const PhysicalContext& ctx, std::span<const Vec3> positions,
                             std::span<const std::string> subset) {
  ctx.validate();
  FieldTable t;
  if (subset.empty())
    t.electrodes = layout.names_with_role(ElectrodeRole::control);
  else
    t.electrodes.assign(subset.begin(), subset.end());
  std::vector<std::size_t> idx;
  for (const auto& name : t.electrodes) {
    const Electrode& e = layout.electrode(name);
    if (e.role == ElectrodeRole::rf) throw WaveformError("electrode " + name + " carries RF");
    t.centroids.push_back(e.centroid());
    idx.push_back(model.index_of(name));
  }
  const std::size_t J = t.electrodes.size();
  for (const Vec3& p : positions) {
    require_above_plane(p);
    Eigen::Matrix3Xd f(3, J);
    std::vector<Mat3> h(J);
    for (std::size_t j = 0; j < J; ++j) {
      const FieldSample s = model.basis(idx[j], p);
      // 1 V on the electrode: potential 1e3 Θ meV, field −1e6 ∇Θ V/m
      f.col(j) = -kFieldPerGradient * 1e3 * s.gradient;
      h[j] = 1e3 * s.hessian;
    }
    const PseudoSample ps = model.pseudo(ctx, p, true);
    t.positions.push_back(p);
    t.field.push_back(std::move(f));
    t.hessian.push_back(std::move(h));
    t.pseudo_field.push_back(-kFieldPerGradient * ps.gradient);
    t.pseudo_hessian.push_back(ps.hessian);
  }
  return t;
}

FieldTable build_field_table(const ElectrodeLayout& layout, const PhysicalContext& ctx,
                             std::span<const Vec3> positions, std::span<const std::string> subset) {
  const FieldModel model(layout);
  return build_field_table(model, layout, ctx, positions, subset);
}

double TransportRequest::axial_at(std::size_t step) const {
  return axial_mhz.size() == 1 ? axial_mhz.front() : axial_mhz.at(step);
}

void TransportRequest::validate() const {
  if (positions.empty()) throw WaveformError("transport path is empty");
  if (!axes.empty() && axes.size() != positions.size())
    throw WaveformError("one axis per path step is required");
  for (const Vec3& a : axes)
    if (!(std::hypot(a.x(), a.y()) > 1e-12)) throw WaveformError("axes must have an in-plane part");
  if (axial_mhz.size() != 1 && axial_mhz.size() != positions.size())
    throw WaveformError("axial frequency list must have one entry or one per step");
  for (double f : axial_mhz)
    if (!(std::isfinite(f) && f > 0.0)) throw WaveformError("axial frequency must be positive");
  if (!(std::isfinite(radial_floor) && radial_floor >= 0.0))
    throw WaveformError("radial floor must be non-negative");
  if (!(v_min <= v_max)) throw WaveformError("voltage bounds are inverted");
  if (!(h > 0.0)) throw WaveformError("length unit must be positive");
  const auto& w = weights;
  for (double x : {w.smoothness1, w.smoothness2, w.locality, w.residual, w.ridge})
    if (!(std::isfinite(x) && x >= 0.0)) throw WaveformError("weights must be non-negative");
  for (std::size_t i = 1; i < positions.size(); ++i)
    if ((positions[i] - positions[i - 1]).norm() > 0.5 * h)
      throw WaveformError("path is not continuous at step " + std::to_string(i));
}

std::vector<Vec3> default_axes(std::span<const Vec3> positions) {
  const std::size_t n = positions.size();
  if (n == 0) return {};
  if (n == 1) return {snap_to_arm(Vec3(positions[0].x(), positions[0].y(), 0.0))};
  const Vec3 start = snap_to_arm(positions[1] - positions[0]);
  const Vec3 end = snap_to_arm(positions[n - 1] - positions[n - 2]);
  std::vector<Vec3> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = 2 * i < n ? start : end;
  return out;
}

StepDiagnostics diagnose(const Mat3& hessian, const Vec3& residual_field, const Vec3& axis,
                         const PhysicalContext& ctx) {
  StepDiagnostics d;
  d.residual_field = residual_field;
  d.hessian = hessian;
  d.axis = axis;
  const auto [t, n] = transverse(axis);
  d.axial_curvature = project(hessian, axis, axis);
  d.alignment = std::max(std::abs(project(hessian, axis, t)), std::abs(project(hessian, axis, n)));
  const SecularModes m = secular_frequencies(0.5 * (hessian + hessian.transpose()), ctx);
  int ax = 0;
  for (int k = 1; k < 3; ++k)
    if (std::abs(m.axes.col(k).dot(axis)) > std::abs(m.axes.col(ax).dot(axis))) ax = k;
  d.frequency_mhz[0] = m.frequency_mhz[ax];
  int slot = 1;
  for (int k = 2; k >= 0; --k)
    if (k != ax) d.frequency_mhz[slot++] = m.frequency_mhz[k];
  d.stable = m.unstable_count() == 0;
  return d;
}

double Waveform::min_voltage() const {
  double m = std::numeric_limits<double>::infinity();
  for (const auto& v : steps) m = std::min(m, v.minCoeff());
  return m;
}

double Waveform::max_voltage() const {
  double m = -std::numeric_limits<double>::infinity();
  for (const auto& v : steps) m = std::max(m, v.maxCoeff());
  return m;
}

std::map<std::string, double> Waveform::voltages(std::size_t step) const {
  std::map<std::string, double> out;
  const VectorXd& v = steps.at(step);
  for (std::size_t j = 0; j < electrodes.size(); ++j) out[electrodes[j]] = v[j];
  return out;
}

Waveform generate(const TransportRequest& request, const FieldTable& table,
                  const PhysicalContext& ctx) {
  check_table(request, table);
  return assemble(request, table, ctx, request_axes(request), 0, table.steps(), true);
}

Waveform static_wells(const TransportRequest& request, const FieldTable& table,
                      const PhysicalContext& ctx) {
  check_table(request, table);
  const auto axes = request_axes(request);
  Waveform out;
  out.electrodes = table.electrodes;
  for (std::size_t i = 0; i < table.steps(); ++i) {
    Waveform one = assemble(request, table, ctx, axes, i, 1, false);
    out.positions.push_back(one.positions[0]);
    out.steps.push_back(std::move(one.steps[0]));
    out.diagnostics.push_back(one.diagnostics[0]);
    out.iterations += one.iterations;
    if (one.status != QpStatus::optimal) out.status = one.status;
  }
  return out;
}

std::vector<StepDiagnostics> verify(const Waveform& waveform, const FieldModel& model,
                                    const PhysicalContext& ctx, std::span<const Vec3> axes,
                                    int threads) {
  const std::size_t n = waveform.steps.size();
  if (waveform.positions.size() != n || axes.size() != n)
    throw WaveformError("waveform, positions and axes differ in length");
  std::vector<StepDiagnostics> out(n);
  parallel_for(n, threads, [&](std::size_t i) {
    const Vec3& p = waveform.positions[i];
    const StaticSample st = model.composite(waveform.voltages(i), p);
    const PseudoSample ps = model.pseudo(ctx, p, true);
    const Vec3 e = st.field() - kFieldPerGradient * ps.gradient;
    const Vec3 a = Vec3(axes[i].x(), axes[i].y(), 0.0).normalized();
    out[i] = diagnose(st.hessian + ps.hessian, e, a, ctx);
  });
  return out;
}

void write_waveform_csv(std::ostream& out, const Waveform& waveform) {
  out << "step";
  for (const auto& n : waveform.electrodes) out << ',' << n;
  out << '\n';
  std::ostringstream line;
  line << std::setprecision(10);
  for (std::size_t i = 0; i < waveform.steps.size(); ++i) {
    line.str("");
    line << i;
    for (Eigen::Index j = 0; j < waveform.steps[i].size(); ++j) line << ',' << waveform.steps[i][j];
    out << line.str() << '\n';
  }
}

void write_diagnostics_csv(std::ostream& out, const Waveform& waveform) {
  out << "step,x,y,z,f_axial,f_r1,f_r2,residual_field\n";
  std::ostringstream line;
  line << std::setprecision(10);
  for (std::size_t i = 0; i < waveform.diagnostics.size(); ++i) {
    const auto& d = waveform.diagnostics[i];
    const Vec3& p = waveform.positions[i];
    line.str("");
    line << i << ',' << p.x() << ',' << p.y() << ',' << p.z();
    for (const auto& f : d.frequency_mhz) {
      line << ',';
      if (f) line << *f;
    }
    line << ',' << d.residual_field.norm();
    out << line.str() << '\n';
  }
}

TiltResult optimize_radial_tilt(const ElectrodeLayout& layout, const PhysicalContext& ctx_in,
                                const Vec3& zone, double tilt_deg, const TiltOptions& options) {
  if (!(options.v_min <= options.v_max)) throw WaveformError("voltage bounds are inverted");
  if (!std::isfinite(tilt_deg)) throw WaveformError("tilt angle must be finite");
  const FieldModel model(layout);
  TiltResult res;
  res.ctx = ctx_in;

  std::vector<std::string> names = options.electrodes;
  if (names.empty())
    for (const auto& n : layout.names_with_role(ElectrodeRole::control))
      if (n.find("thin") != std::string::npos || n.find("wide") != std::string::npos)
        names.push_back(n);
  if (names.empty()) throw WaveformError("no outer segments to tilt with");

  PseudoSample ps = model.pseudo(res.ctx, zone, true);
  if (options.degenerate_radial_mhz) {
    const double k = 0.5 * (ps.hessian(1, 1) + ps.hessian(2, 2));
    if (!(k > 0.0)) throw WaveformError("no radial confinement at the zone");
    const double target = res.ctx.curvature_for_frequency(*options.degenerate_radial_mhz);
    res.ctx.rf_peak_voltage *= std::sqrt(target / k);
    ps = model.pseudo(res.ctx, zone, true);
  }
  const FieldTable t = build_field_table(model, layout, res.ctx, std::span(&zone, 1), names);
  const std::size_t J = t.size();

  const double th = tilt_deg * constants::pi / 180.0;
  const Vec3 u(0.0, std::sin(th), std::cos(th));
  const Vec3 w(0.0, std::cos(th), -std::sin(th));
  const double sh = 1.0 / std::max(std::abs(ps.hessian(1, 1)) + std::abs(ps.hessian(2, 2)), 1e-12);
  const double se = zone.z() * kFieldLength;
  const Mat3& hp = t.pseudo_hessian[0];

  // Fixed rows: field to 1e-3 V/m, alignment with the trap axis, tilt.
  std::vector<VectorXd> rows;
  std::vector<double> rhs, tol;
  for (int k = 0; k < 3; ++k) {
    rows.push_back(se * t.field[0].row(k).transpose());
    rhs.push_back(-se * t.pseudo_field[0][k]);
    tol.push_back(se * 1e-3);
  }
  auto hess_row = [&](const Vec3& a, const Vec3& b) {
    VectorXd r(J);
    for (std::size_t j = 0; j < J; ++j) r[j] = sh * project(t.hessian[0][j], a, b);
    return r;
  };
  const std::array<std::pair<Vec3, Vec3>, 3> pairs = {
      {{Vec3::UnitX(), Vec3::UnitY()}, {Vec3::UnitX(), Vec3::UnitZ()}, {u, w}}};
  for (const auto& [a, b] : pairs) {
    rows.push_back(hess_row(a, b));
    rhs.push_back(-sh * project(hp, a, b));
    // resolution of the pseudopotential Hessian relative to the radial trace
    tol.push_back(1e-6);
  }
  // Rows that vanish by symmetry only add noise to the solver.
  double scale = 0.0;
  for (const auto& r : rows) scale = std::max(scale, r.cwiseAbs().maxCoeff());
  std::vector<Eigen::Index> kept;
  for (std::size_t k = 0; k < rows.size(); ++k) {
    if (rows[k].cwiseAbs().maxCoeff() <= 1e-9 * scale) {
      if (std::abs(rhs[k]) > tol[k]) throw WaveformError("tilt constraints are inconsistent");
      continue;
    }
    kept.push_back(static_cast<Eigen::Index>(k));
  }
  const VectorXd diff = hess_row(u, u) - hess_row(w, w);
  const double diff0 = sh * (project(hp, u, u) - project(hp, w, w));
  const auto nj = static_cast<Eigen::Index>(J);

  // Feasible voltages with H_uu − H_ww ≥ delta, smallest norm among them.
  auto attempt = [&](std::optional<double> delta) -> std::optional<VectorXd> {
    QuadraticProgram qp = QuadraticProgram::empty(nj);
    const auto m = static_cast<Eigen::Index>(2 * kept.size() + (delta ? 1 : 0));
    Eigen::MatrixXd a(m, nj);
    VectorXd b(m);
    Eigen::Index row = 0;
    for (Eigen::Index k : kept) {
      a.row(row) = rows[k].transpose();
      b[row++] = rhs[k] + tol[k];
      a.row(row) = -rows[k].transpose();
      b[row++] = -(rhs[k] - tol[k]);
    }
    if (delta) {
      a.row(row) = -diff.transpose();
      b[row] = diff0 - *delta;
    }
    qp.A_ineq = a.sparseView();
    qp.b_ineq = b;
    qp.lo = VectorXd::Constant(nj, options.v_min);
    qp.hi = VectorXd::Constant(nj, options.v_max);
    qp.P = SparseMatrix(nj, nj);
    qp.P.setIdentity();
    qp.P *= 1e-6;
    const QpSolution sol = solve(qp, options.qp);
    if (sol.status != QpStatus::optimal || sol.residuals.primal > 1e-9) return std::nullopt;
    return sol.v;
  };

  std::optional<VectorXd> best = attempt(std::nullopt);
  if (!best) throw WaveformError("tilt angle cannot be reached within the voltage bounds");
  double lo = diff.dot(*best) + diff0;
  const double vmax = std::max(std::abs(options.v_min), std::abs(options.v_max));
  double hi = diff.cwiseAbs().sum() * vmax + std::abs(diff0) + 1e-12;
  while (hi - lo > options.relative_tolerance * std::max(std::abs(hi), 1e-12) &&
         res.bisection_steps < 200) {
    const double mid = 0.5 * (lo + hi);
    if (auto v = attempt(mid)) {
      lo = mid;
      best = std::move(v);
    } else {
      hi = mid;
    }
    ++res.bisection_steps;
  }

  const VectorXd& v = *best;
  Mat3 hess = hp;
  for (std::size_t j = 0; j < J; ++j) {
    hess += v[j] * t.hessian[0][j];
    res.voltages[names[j]] = v[j];
  }
  res.curvature_difference = project(hess, u, u) - project(hess, w, w);
  const SecularModes m = secular_frequencies(0.5 * (hess + hess.transpose()), res.ctx);
  // radial modes: the two with the least overlap with the trap axis
  int ax = 0;
  for (int k = 1; k < 3; ++k)
    if (std::abs(m.axes(0, k)) > std::abs(m.axes(0, ax))) ax = k;
  std::vector<int> radial;
  for (int k = 2; k >= 0; --k)
    if (k != ax) radial.push_back(k);
  auto angle = [&](int k) {
    return std::acos(std::min(1.0, std::abs(m.axes(2, k)))) * 180.0 / constants::pi;
  };
  if (!m.frequency_mhz[radial[0]] || !m.frequency_mhz[radial[1]])
    throw WaveformError("radial modes are unstable at the optimum");
  res.f_high_mhz = *m.frequency_mhz[radial[0]];
  res.f_low_mhz = *m.frequency_mhz[radial[1]];
  res.splitting_mhz = res.f_high_mhz - res.f_low_mhz;
  res.angle_high_deg = angle(radial[0]);
  res.angle_low_deg = angle(radial[1]);
  return res;
}

}  // namespace xjunction
