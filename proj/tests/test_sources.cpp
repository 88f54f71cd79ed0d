#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>

#include "cvqwc/sources.hpp"

using namespace cvqwc;
using doctest::Approx;

namespace {

double overlap(const FockState& x, const FockState& y) {
  return std::abs(inner_product(x, y)) / std::sqrt(x.norm_squared() * y.norm_squared());
}

}  // namespace

TEST_CASE("tmsv pair has the Schmidt form") {
  SourceParams p;
  p.r = 0.5;
  const auto psi = make_tmsv_pair(p, 20);
  const double q = std::tanh(0.5);
  const double c = 1.0 / (std::cosh(0.5) * std::cosh(0.5));
  double worst = 0.0;
  for (int n = 0; n <= 20; ++n)
    for (int m = 0; m <= 20; ++m) {
      const cplx want = c * std::pow(q, n + m);
      worst = std::max(worst, std::abs(psi.at({n, m, n, m}) - want));
    }
  CHECK(worst < 1e-10);
  CHECK(std::abs(psi.at({1, 0, 0, 0})) == 0.0);
  CHECK(std::abs(psi.at({1, 2, 1, 1})) == 0.0);
}

TEST_CASE("V-arm phases enter through their sum") {
  SourceParams p;
  p.r = 0.4;
  p.phi_A = 0.3;
  p.phi_B = 0.5;
  const auto psi = make_tmsv_pair(p, 10);
  SourceParams ref = p;
  ref.phi_A = 0.0;
  ref.phi_B = 0.0;
  const auto flat = make_tmsv_pair(ref, 10);
  for (int n = 0; n <= 3; ++n)
    for (int m = 0; m <= 3; ++m) {
      const cplx want = flat.at({n, m, n, m}) * std::polar(1.0, m * 0.8);
      CHECK(std::abs(psi.at({n, m, n, m}) - want) < 1e-14);
    }
  SourceParams swapped = p;
  swapped.phi_A = 0.8;
  swapped.phi_B = 0.0;
  CHECK(overlap(psi, make_tmsv_pair(swapped, 10)) == Approx(1.0).epsilon(1e-14));
  CHECK(p.phase_error() == Approx(0.8));
}

TEST_CASE("four-wave mixing through the waveplates matches the tmsv pair") {
  for (double r : {0.1, 0.5, 1.0}) {
    SourceParams p;
    p.r = r;
    const auto fwm = apply_waveplates(make_fwm_source(p, 12));
    const auto tmsv = make_tmsv_pair(p, 12);
    CHECK(fwm.modes() == tmsv.modes());
    CHECK(overlap(fwm, tmsv) >= 1.0 - 1e-8);
  }
}

TEST_CASE("negative s flips the V pair") {
  SourceParams p;
  p.r = 0.5;
  p.s_coefficient = -1.0;
  const auto psi = apply_waveplates(make_fwm_source(p, 10));
  const double q = std::tanh(0.5);
  CHECK(std::abs(psi.at({0, 1, 0, 1}) / psi.at({0, 0, 0, 0}) + q) < 1e-12);
  CHECK(std::abs(psi.at({1, 0, 1, 0}) / psi.at({0, 0, 0, 0}) - q) < 1e-12);
  SourceParams plain = p;
  plain.s_coefficient = 1.0;
  CHECK(overlap(psi, make_tmsv_pair(plain, 10)) < 0.9);
}

TEST_CASE("unequal s gives unequal pairs") {
  SourceParams p;
  p.r = 0.6;
  p.s_coefficient = 0.5;
  const auto psi = apply_waveplates(make_fwm_source(p, 14));
  const double v = psi.at({0, 1, 0, 1}).real() / psi.at({0, 0, 0, 0}).real();
  CHECK(v == Approx(std::tanh(0.3)).epsilon(1e-12));
}

TEST_CASE("waveplates need circular modes") {
  SourceParams p;
  p.r = 0.2;
  CHECK_THROWS_AS(apply_waveplates(make_tmsv_pair(p, 4)), FockError);
}

TEST_CASE("source validation") {
  SourceParams p;
  p.r = -0.1;
  CHECK_THROWS_AS(make_tmsv_pair(p, 4), FockError);
  p.r = std::nan("");
  CHECK_THROWS_AS(p.validate(), FockError);
  p.r = 0.1;
  p.phi_A = INFINITY;
  CHECK_THROWS_AS(p.validate(), FockError);
}

TEST_CASE("input qubit") {
  InputQubit q{std::sqrt(0.5), cplx(0.0, std::sqrt(0.5))};
  const auto psi = make_input_qubit(q, 3);
  CHECK(psi.at({1, 0}) == q.c1);
  CHECK(psi.at({0, 1}) == q.c2);
  CHECK(psi.norm_squared() == Approx(1.0));
  CHECK_THROWS_AS(make_input_qubit(InputQubit{1.0, 1.0}, 3), FockError);
  CHECK_THROWS_AS(make_input_qubit(q, 0), FockError);
}

TEST_CASE("bloch vector") {
  auto bloch = [](InputQubit q) { return bloch_vector(qubit_block(q)); };
  const double s = std::sqrt(0.5);
  auto h = bloch({1.0, 0.0});
  CHECK(h[2] == Approx(1.0));
  auto v = bloch({0.0, 1.0});
  CHECK(v[2] == Approx(-1.0));
  auto d = bloch({s, s});
  CHECK(d[0] == Approx(1.0));
  auto r = bloch({s, cplx(0.0, s)});
  CHECK(r[1] == Approx(1.0));
  CHECK(r[0] == Approx(0.0));
  CHECK(r[2] == Approx(0.0));
  // unnormalized blocks are divided by their trace
  Eigen::Matrix2cd half = 0.5 * qubit_block({s, s});
  CHECK(bloch_vector(half)[0] == Approx(1.0));
  CHECK(bloch_vector(Eigen::Matrix2cd::Zero())[0] == 0.0);
}

TEST_CASE("mode lists") {
  CHECK(linear_source_modes().size() == 4);
  CHECK(linear_source_modes()[2] == output_modes()[0]);
  CHECK(input_modes()[0].arm == Arm::in);
}
