#include <doctest.h>

#include <cmath>
#include <functional>
#include <numbers>
#include <random>
#include <sstream>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/tools/roots.hpp>

#include "xjunction/field.hpp"

using namespace xjunction;

namespace {

constexpr double kPi = std::numbers::pi;

// Θ of the rectangle [x1,x2] x [y1,y2] from the corner arctangent formula.
double rect_theta(double x1, double x2, double y1, double y2, const Vec3& p) {
  auto corner = [&](double x, double y) {
    x -= p.x();
    y -= p.y();
    return std::atan(x * y / (p.z() * std::sqrt(x * x + y * y + p.z() * p.z())));
  };
  return (corner(x2, y2) - corner(x1, y2) - corner(x2, y1) + corner(x1, y1)) / (2.0 * kPi);
}

ElectrodeLayout single(std::vector<Vec2> ring) {
  ElectrodeLayout l;
  l.add({"e", ElectrodeRole::rf, {Polygon(std::move(ring))}});
  return l;
}

const ElectrodeLayout& reference_junction() {
  static const ElectrodeLayout layout = build_junction(JunctionParams::reference(50.0));
  return layout;
}

const ElectrodeLayout& segmented_junction() {
  static const ElectrodeLayout layout = [] {
    auto p = JunctionParams::reference(50.0);
    p.with_final_arms();
    return segment_controls(build_junction(p), SegmentationPlan::reference());
  }();
  return layout;
}

Vec3 fd_gradient(const std::function<double(const Vec3&)>& f, const Vec3& p, double h) {
  Vec3 g;
  for (int k = 0; k < 3; ++k) {
    Vec3 s = Vec3::Zero();
    s[k] = h;
    g[k] = (f(p + s) - f(p - s)) / (2.0 * h);
  }
  return g;
}

double rel_err(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  return (a - b).norm() / std::max(b.norm(), 1e-300);
}

}  // namespace

TEST_CASE("basis potential closed forms") {
  const double L = 1.0e9;
  const auto plane = single({{-L, -L}, {L, -L}, {L, L}, {-L, L}});
  for (double z : {1.0, 50.0, 500.0}) {
    const Vec3 p(3.0, -7.0, z);
    const double th = basis_potential(plane, "e", p).theta;
    CHECK(th == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(th == doctest::Approx(rect_theta(-L, L, -L, L, p)).epsilon(1e-12));
    // what remains is the field of the plane beyond L, of order 1/L
    CHECK(basis_field(plane, "e", p).gradient.norm() < 2.0 / L);
  }

  // long strip y in [a, b] against the 2D arctangent expression
  const double a = -20.0, b = 20.0, X = 1.0e7;
  const auto strip = single({{-X, a}, {X, a}, {X, b}, {-X, b}});
  const Vec3 mid(0.0, 0.0, 20.0);
  CHECK(basis_potential(strip, "e", mid).theta == doctest::Approx(0.5).epsilon(1e-9));
  for (double y : {-30.0, 0.0, 5.0, 40.0}) {
    const double z = 13.0;
    const double expect = (std::atan((b - y) / z) - std::atan((a - y) / z)) / kPi;
    CHECK(basis_potential(strip, "e", Vec3(0.0, y, z)).theta ==
          doctest::Approx(expect).epsilon(1e-9));
    CHECK(strip2d::strip(a, b, y, z).theta == doctest::Approx(expect).epsilon(1e-12));
  }

  // unit square at unit height against adaptive quadrature of z / (2π r³)
  const auto square = single({{-0.5, -0.5}, {0.5, -0.5}, {0.5, 0.5}, {-0.5, 0.5}});
  using boost::math::quadrature::gauss_kronrod;
  const double quad =
      gauss_kronrod<double, 61>::integrate(
          [](double x) {
            return gauss_kronrod<double, 61>::integrate(
                [x](double y) { return std::pow(x * x + y * y + 1.0, -1.5); }, -0.5, 0.5, 15,
                1e-14);
          },
          -0.5, 0.5, 15, 1e-14) /
      (2.0 * kPi);
  CHECK(quad == doctest::Approx(0.12818843369794988).epsilon(1e-12));
  CHECK(std::abs(basis_potential(square, "e", Vec3(0, 0, 1)).theta - quad) < 1e-9);

  CHECK_THROWS_AS(basis_potential(square, "e", Vec3(0, 0, 0)), FieldError);
  CHECK_THROWS_AS(basis_potential(square, "e", Vec3(0, 0, -1)), FieldError);
  CHECK_THROWS_AS(basis_field(square, "e", Vec3(0.5, 0.0, 0.05)), FieldError);
}

TEST_CASE("partition of unity on the segmented junction") {
  const auto& layout = segmented_junction();
  const FieldModel model(layout);
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> ux(-900.0, 900.0), uy(-2800.0, 900.0), uz(5.0, 400.0);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const Vec3 p(ux(rng), uy(rng), uz(rng));
    double sum = 0.0;
    for (std::size_t k = 0; k < model.names().size(); ++k) sum += model.basis_potential(model.names()[k], p);
    // the implicit ground outside the tiled box makes up the rest
    const double outside = 1.0 - rect_theta(-750.0, 750.0, -2700.0, 750.0, p);
    worst = std::max(worst, std::abs(sum + outside - 1.0));
  }
  CHECK(worst < 1e-9);
}

TEST_CASE("analytic derivatives agree with finite differences") {
  const auto& layout = segmented_junction();
  const FieldModel model(layout);
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> ux(-300.0, 300.0), uz(20.0, 150.0);
  double worst_g = 0.0, worst_h = 0.0, worst_trace = 0.0;
  for (const char* name : {"c", "U1", "R_thin_U", "D3", "rf"}) {
    const auto idx = model.index_of(name);
    for (int i = 0; i < 20; ++i) {
      const Vec3 p(ux(rng), ux(rng), uz(rng));
      const auto s = model.basis(idx, p);
      const Vec3 g_fd = fd_gradient([&](const Vec3& q) { return model.basis_potential(name, q); },
                                    p, 1e-3);
      Mat3 h_fd;
      for (int k = 0; k < 3; ++k) {
        Vec3 d = Vec3::Zero();
        d[k] = 1e-3;
        h_fd.col(k) = (model.basis(idx, p + d).gradient - model.basis(idx, p - d).gradient) / 2e-3;
      }
      worst_g = std::max(worst_g, rel_err(s.gradient, g_fd));
      worst_h = std::max(worst_h, rel_err(s.hessian, h_fd));
      worst_trace = std::max(worst_trace, std::abs(s.hessian.trace()));
      CHECK((s.hessian - s.hessian.transpose()).norm() == 0.0);
    }
  }
  CHECK(worst_g < 1e-6);
  CHECK(worst_h < 1e-4);
  CHECK(worst_trace < 1e-9);
}

TEST_CASE("third derivatives") {
  const FieldModel model(reference_junction());
  const Vec3 p(15.0, 3.0, 43.5);
  const auto s = model.rf(p, true);
  REQUIRE(s.third);
  // contracting any index pair of a harmonic function's third derivative gives zero
  for (int k = 0; k < 3; ++k) CHECK(std::abs((*s.third)[k].trace()) < 1e-8);
  const double h = 1e-3;
  for (int k = 0; k < 3; ++k) {
    Vec3 d = Vec3::Zero();
    d[k] = h;
    const Mat3 fd = (model.rf(p + d).hessian - model.rf(p - d).hessian) / (2 * h);
    CHECK(rel_err((*s.third)[k], fd) < 1e-4);
  }
}

TEST_CASE("pseudopotential identities") {
  const auto& layout = reference_junction();
  const FieldModel model(layout);
  const auto ctx = PhysicalContext::calcium40();
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> ux(-120.0, 120.0), uz(30.0, 90.0);
  for (int i = 0; i < 10; ++i) {
    const Vec3 p(ux(rng), ux(rng), uz(rng));
    const auto s = model.pseudo(ctx, p, true);
    CHECK(s.phi >= 0.0);
    const double h = 1e-2;
    double lap_fd = 0.0;
    for (int k = 0; k < 3; ++k) {
      Vec3 d = Vec3::Zero();
      d[k] = h;
      lap_fd += (model.pseudo(ctx, p + d).phi - 2 * s.phi + model.pseudo(ctx, p - d).phi) / (h * h);
    }
    CHECK(s.laplacian == doctest::Approx(lap_fd).epsilon(1e-4));
    CHECK(s.hessian.trace() == doctest::Approx(s.laplacian).epsilon(1e-6));
    const Vec3 g_fd = fd_gradient([&](const Vec3& q) { return model.pseudo(ctx, q).phi; }, p, 1e-3);
    CHECK(rel_err(s.gradient, g_fd) < 1e-6);
    Mat3 h_fd;
    for (int k = 0; k < 3; ++k) {
      Vec3 d = Vec3::Zero();
      d[k] = 1e-3;
      h_fd.col(k) = (model.pseudo(ctx, p + d).gradient - model.pseudo(ctx, p - d).gradient) / 2e-3;
    }
    CHECK(rel_err(s.hessian, h_fd) < 1e-4);

    // D4 symmetry of the junction
    const double phi_swap = model.pseudo(ctx, Vec3(p.y(), p.x(), p.z())).phi;
    const double phi_mirror = model.pseudo(ctx, Vec3(-p.x(), p.y(), p.z())).phi;
    CHECK(std::abs(phi_swap - s.phi) <= 1e-10 * s.phi);
    CHECK(std::abs(phi_mirror - s.phi) <= 1e-10 * s.phi);

    // scaling the RF amplitude
    auto ctx2 = ctx;
    ctx2.rf_peak_voltage *= 1.7;
    CHECK(model.pseudo(ctx2, p).phi == doctest::Approx(1.7 * 1.7 * s.phi).epsilon(1e-14));
  }
}

TEST_CASE("length scaling leaves the basis function invariant") {
  const FieldModel m50(build_junction(JunctionParams::reference(50.0)));
  const FieldModel m80(build_junction(JunctionParams::reference(80.0)));
  for (const Vec3& p : {Vec3(10, 20, 40), Vec3(-60, 5, 70), Vec3(0, 0, 55)}) {
    const double a = m50.basis_potential("rf", p);
    const double b = m80.basis_potential("rf", p * (80.0 / 50.0));
    CHECK(a == doctest::Approx(b).epsilon(1e-11));
  }
}

TEST_CASE("RF null of the linear trap and the junction centre") {
  const auto layout = build_linear_fivewire(50.0, 5.0e5);
  const FieldModel model(layout);
  auto ez = [&](double z) { return model.rf(Vec3(0.0, 0.0, z)).gradient.z(); };
  boost::math::tools::eps_tolerance<double> tol(50);
  std::uintmax_t it = 100;
  const auto [lo, hi] = boost::math::tools::toms748_solve(ez, 30.0, 80.0, tol, it);
  const double a = 20.75, b = 120.25;
  CHECK(0.5 * (lo + hi) == doctest::Approx(std::sqrt(a * b)).epsilon(1e-7));
  CHECK(strip2d::null_height(a, b) == doctest::Approx(49.9519).epsilon(1e-5));
  // truncation of the 1e4 h long rails
  const Vec3 p(0.0, 10.0, 45.0);
  CHECK(std::abs(model.rf(p).theta - strip2d::rail_pair(a, b, 10.0, 45.0).theta) < 1e-6);

  const FieldModel junction(reference_junction());
  const auto ctx = PhysicalContext::calcium40();
  auto gz = [&](double z) { return junction.rf(Vec3(0.0, 0.0, z)).gradient.z(); };
  it = 100;
  const auto [zl, zh] = boost::math::tools::toms748_solve(gz, 40.0, 100.0, tol, it);
  const auto s = junction.pseudo(ctx, Vec3(0.0, 0.0, 0.5 * (zl + zh)));
  CHECK(s.phi < 1e-12);
  CHECK(s.gradient.norm() < 1e-8);
}

TEST_CASE("strip closed form derivatives") {
  const double a = 20.75, b = 120.25, y = 7.0, z = 44.0;
  const auto s = strip2d::rail_pair(a, b, y, z);
  auto theta = [&](double yy, double zz) { return strip2d::rail_pair(a, b, yy, zz).theta; };
  auto g2 = [&](double yy, double zz) { return strip2d::rail_pair(a, b, yy, zz).grad_squared; };
  const double h = 1e-4;
  CHECK(s.gradient.x() == doctest::Approx((theta(y + h, z) - theta(y - h, z)) / (2 * h)).epsilon(1e-7));
  CHECK(s.gradient.y() == doctest::Approx((theta(y, z + h) - theta(y, z - h)) / (2 * h)).epsilon(1e-7));
  const double k = 1e-2;
  const double lap = (g2(y + k, z) + g2(y - k, z) + g2(y, z + k) + g2(y, z - k) - 4 * g2(y, z)) / (k * k);
  CHECK(s.grad_squared_laplacian == doctest::Approx(lap).epsilon(1e-5));
}

TEST_CASE("linear RF optimum") {
  const auto ctx = PhysicalContext::calcium40();
  const auto opt = optimize_linear_rf(50.0, ctx);
  CHECK(opt.grid_gap_width == doctest::Approx(41.5).epsilon(1e-12));
  CHECK(opt.grid_rf_width == doctest::Approx(99.7319277).epsilon(1e-8));
  CHECK(std::abs(opt.grid_rf_width / 99.5 - 1.0) < 0.005);
  CHECK(opt.continuous_gap_width == doctest::Approx(2.0 * (std::sqrt(2.0) - 1.0) * 50.0).epsilon(1e-6));
  CHECK(opt.continuous_rf_width == doctest::Approx(100.0).epsilon(1e-6));
  CHECK(opt.curvature > 0.0);
}

TEST_CASE("secular frequencies") {
  const auto ctx = PhysicalContext::calcium40();
  Mat3 h = Mat3::Zero();
  h.diagonal() << 0.991, 0.104, -0.099;
  const auto m = secular_frequencies(h, ctx);
  CHECK(m.unstable_count() == 1);
  CHECK(*m.frequency_mhz[2] == doctest::Approx(7.79).epsilon(5e-3));
  CHECK(*m.frequency_mhz[1] == doctest::Approx(2.53).epsilon(5e-3));
  CHECK(std::abs(m.axes.col(2).x()) == doctest::Approx(1.0));

  const auto iso = secular_frequencies(0.5 * Mat3::Identity(), ctx);
  CHECK(*iso.frequency_mhz[0] == doctest::Approx(*iso.frequency_mhz[2]).epsilon(1e-12));
  CHECK((iso.axes.transpose() * iso.axes - Mat3::Identity()).norm() < 1e-12);

  // ω² = Q λ / m, with λ converted from meV/µm² to V/m²
  const double lambda = 0.3;
  const double f = std::sqrt(ctx.charge_c * lambda * 1e9 / ctx.mass_kg) / (2 * kPi) * 1e-6;
  CHECK(ctx.frequency_mhz(lambda) == doctest::Approx(f).epsilon(1e-14));
}

TEST_CASE("pseudopotential of a given field amplitude") {
  const auto ctx = PhysicalContext::calcium40();
  FieldSample rf;
  const double e_field = 3.2e4;
  rf.gradient = Vec3(e_field / (ctx.rf_peak_voltage * 1e6), 0.0, 0.0);
  const auto s = pseudo_from_rf(rf, ctx);
  const double expect = 1e3 * ctx.charge_c * e_field * e_field /
                        (4 * ctx.mass_kg * ctx.rf_angular_frequency * ctx.rf_angular_frequency);
  CHECK(s.phi == doctest::Approx(expect).epsilon(1e-12));
  CHECK(s.phi == doctest::Approx(9.78).epsilon(1e-3));
  CHECK(s.rf_field.norm() == doctest::Approx(e_field));
}

TEST_CASE("composite static field") {
  const auto& layout = segmented_junction();
  const FieldModel model(layout);
  std::map<std::string, double> all;
  for (const auto& n : model.names()) all[n] = 2.5;
  const Vec3 p(12.0, -30.0, 50.0);
  const auto s = model.composite(all, p);
  auto box = [](const Vec3& q) { return rect_theta(-750.0, 750.0, -2700.0, 750.0, q); };
  CHECK(s.potential == doctest::Approx(2.5e3 * box(p)).epsilon(1e-12));
  // only the finite extent of the tiled box produces a field
  CHECK(rel_err(s.gradient, 2.5e3 * fd_gradient(box, p, 1e-3)) < 1e-6);

  const auto one = model.composite({{"U2", 1.0}}, p);
  CHECK(one.potential == doctest::Approx(1e3 * model.basis_potential("U2", p)).epsilon(1e-14));

  const std::map<std::string, double> mix = {
      {"c", 1.3}, {"U1", -2.0}, {"R2", 0.7}, {"L_thin_U", 3.1}, {"D5", -0.4}};
  const auto m = model.composite(mix, p);
  const Vec3 g_fd = fd_gradient([&](const Vec3& q) { return model.composite(mix, q).potential; }, p, 1e-3);
  CHECK(rel_err(m.gradient, g_fd) < 1e-6);
  CHECK_THROWS_AS(composite_static_field(layout, {{"nope", 1.0}}, p), FieldError);
  CHECK(composite_static_field(layout, mix, p).potential == doctest::Approx(m.potential));
}

TEST_CASE("grid export") {
  const FieldModel model(reference_junction());
  const auto ctx = PhysicalContext::calcium40();
  std::vector<Vec3> pts = {Vec3(0, 0, 50), Vec3(10, 0, 50)};
  std::ostringstream a, b;
  write_grid_csv(a, model, ctx, pts, GridQuantity::theta, "rf");
  write_grid_csv(b, model, ctx, pts, GridQuantity::pseudo);
  CHECK(a.str().rfind("x,y,z,theta\n", 0) == 0);
  CHECK(b.str().rfind("x,y,z,phi_pp,laplacian\n", 0) == 0);
  const std::string text = b.str();
  CHECK(std::count(text.begin(), text.end(), '\n') == 3);
}
