#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "cvqwc/bandwidth.hpp"

using namespace cvqwc;
using doctest::Approx;

namespace {

const InputQubit kH{1.0, 0.0};

FrequencyMap bins(int n, double width) {
  FrequencyMap m;
  m.omega_A = 384.0;
  m.omega_B = 196.0;
  m.n_bins = n;
  m.bin_width = width;
  return m;
}

}  // namespace

TEST_CASE("squeezing spectrum shapes") {
  SqueezingSpectrum s{1.2, 0.5, SpectrumShape::lorentzian, {}};
  CHECK(s.r(0.0) == 1.2);
  CHECK(s.r(0.5) == Approx(0.6));
  CHECK(s.r(-0.5) == s.r(0.5));
  CHECK(s.r(5.0) < s.r(1.0));
  s.shape = SpectrumShape::flat;
  CHECK(s.r(7.0) == 1.2);
  s.shape = SpectrumShape::table;
  s.table = {{-1.0, 0.0}, {0.0, 1.0}, {1.0, 0.5}};
  CHECK(s.r(0.5) == Approx(0.75));
  CHECK(s.r(2.0) == 0.0);
  CHECK_THROWS_AS((SqueezingSpectrum{-1.0, 1.0, SpectrumShape::flat, {}}.validate()), FockError);
  CHECK_THROWS_AS((SqueezingSpectrum{1.0, 0.0, SpectrumShape::lorentzian, {}}.validate()), FockError);
}

TEST_CASE("qubit spectrum density") {
  QubitSpectrum q{0.2, 0.5, SpectrumShape::gaussian, {}};
  CHECK(q.density(0.2) == Approx(1.0 / (0.5 * std::sqrt(2.0 * M_PI))));
  // trapezoid integral over +-8 sigma
  double sum = 0.0;
  for (double w = -3.8; w <= 4.2; w += 0.001) sum += 0.001 * q.density(w);
  CHECK(sum == Approx(1.0).epsilon(1e-4));
}

TEST_CASE("frequency pairing") {
  const auto m = bins(5, 0.5);
  CHECK(m.max_bin() == 2);
  CHECK(m.offset(-2) == -1.0);
  const auto p = frequency_pairing(m, 1);
  CHECK(p.input == Approx(384.5));
  CHECK(p.partner_A == Approx(383.5));
  CHECK(p.output == Approx(196.5));
  CHECK(p.partner_bin == -1);
  CHECK_THROWS_AS(frequency_pairing(m, 3), FockError);
  CHECK_THROWS_AS(bins(4, 0.5).validate(), FockError);
}

TEST_CASE("heisenberg variance ratio is exp(-2r)") {
  for (double r : {0.0, 0.25, 0.5, 1.0}) {
    CHECK(heisenberg_variance_ratio(r, 60) == Approx(std::exp(-2.0 * r)).epsilon(1e-9));
  }
  CHECK(heisenberg_variance_ratio(0.5, 30) == Approx(std::exp(-1.0)).epsilon(1e-12));
  CHECK(heisenberg_variance_check(0.5, 40) == Approx(std::exp(-1.0)).epsilon(1e-12));
  try {
    heisenberg_variance_check(1.5, 30);
    FAIL("expected a truncation guard");
  } catch (const NumericalGuardError& e) {
    CHECK(e.guard() == "truncation");
  }
}

TEST_CASE("flat spectrum equals single-frequency teleportation") {
  const double r = 0.8;
  const auto grid = BetaGrid::for_squeezing(r);
  const QubitSpectrum q{0.0, 0.5, SpectrumShape::gaussian, {}};
  const auto res = effective_fidelity(q, {r, 1.0, SpectrumShape::flat, {}}, GainRule::unit(), kH, grid, bins(9, 0.5));
  const auto one = teleport_average(kH, SourceParams{r}, GainRule::unit(), grid);
  CHECK(res.effective_fidelity == Approx(*qubit_metrics(one.normalized(), kH).fidelity).epsilon(1e-10));
  CHECK(res.bins.size() == 9);
  double w = 0.0;
  for (const auto& b : res.bins) w += b.weight;
  CHECK(w == Approx(1.0).epsilon(1e-12));
  CHECK(std::abs(res.captured_weight - 1.0) < 1e-3);
}

TEST_CASE("effective fidelity grows with squeezing bandwidth") {
  const double r0 = 0.8;
  const auto grid = BetaGrid::for_squeezing(r0);
  const QubitSpectrum q{0.0, 0.5, SpectrumShape::gaussian, {}};
  double last = 0.0;
  for (double gamma : {0.25, 1.0, 4.0}) {
    const auto res = effective_fidelity(q, {r0, gamma, SpectrumShape::lorentzian, {}}, GainRule::unit(), kH, grid,
                                        bins(9, 0.5));
    CHECK(res.effective_fidelity > last);
    last = res.effective_fidelity;
    // the central bin carries the largest squeezing
    CHECK(res.bins[4].r == Approx(r0));
  }
}

TEST_CASE("uncaptured spectrum is rejected") {
  const QubitSpectrum wide{0.0, 2.0, SpectrumShape::gaussian, {}};
  CHECK_THROWS_AS(effective_fidelity(wide, {0.3, 1.0, SpectrumShape::flat, {}}, GainRule::unit(), kH,
                                     BetaGrid::for_squeezing(0.3), bins(5, 0.5)),
                  FockError);
}
