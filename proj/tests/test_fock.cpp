#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "cvqwc/fock.hpp"
#include "oracles.hpp"

using namespace cvqwc;
using doctest::Approx;

namespace {

const ModeLabel a{Arm::A, Polarization::H, {}};
const ModeLabel b{Arm::B, Polarization::H, {}};
const ModeLabel c{Arm::anc, Polarization::V, {}};

FockState random_state(std::vector<ModeLabel> modes, int cutoff, unsigned seed) {
  std::mt19937 eng(seed);
  std::normal_distribution<double> n;
  FockState psi(std::move(modes), cutoff);
  for (auto& x : psi.amplitudes()) x = {n(eng), n(eng)};
  const double s = std::sqrt(psi.norm_squared());
  for (auto& x : psi.amplitudes()) x /= s;
  return psi;
}

double max_diff(const FockState& x, const FockState& y) {
  double m = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) m = std::max(m, std::abs(x.amplitudes()[i] - y.amplitudes()[i]));
  return m;
}

}  // namespace

TEST_CASE("vacuum") {
  auto v = make_vacuum({a}, 3);
  CHECK(v.size() == 4);
  CHECK(v.amplitudes()[0] == cplx(1.0));
  for (int n = 1; n <= 3; ++n) CHECK(v.amplitudes()[static_cast<std::size_t>(n)] == cplx(0.0));
  CHECK(v.leakage() == 0.0);
  CHECK(make_vacuum({a, b}, 2).norm_squared() == Approx(1.0));
  CHECK_THROWS_AS(make_vacuum({}, 3), FockError);
  CHECK_THROWS_AS(make_vacuum({a, a}, 3), FockError);
  CHECK_THROWS_AS(make_vacuum({a}, 0), FockError);
}

TEST_CASE("displacement matrix matches the Laguerre form") {
  for (cplx alpha : {cplx(0.3, -0.2), cplx(-1.1, 0.7), cplx(2.0, 1.5)}) {
    const auto d = displacement_matrix(alpha, 12);
    for (int m = 0; m <= 12; ++m)
      for (int n = 0; n <= 12; ++n) CHECK(std::abs(d(m, n) - oracle::displacement_element(alpha, m, n)) < 1e-11);
  }
}

TEST_CASE("displacement on vacuum") {
  SUBCASE("alpha = 0 is the identity") {
    auto psi = random_state({a, b}, 4, 1);
    CHECK(max_diff(apply_displacement(psi, a, 0.0), psi) == 0.0);
  }
  SUBCASE("alpha = 1") {
    auto psi = apply_displacement(make_vacuum({a}, 20), a, 1.0);
    CHECK(psi.amplitudes()[0].real() == Approx(0.606531).epsilon(1e-6));
    CHECK(psi.amplitudes()[1].real() == Approx(0.606531).epsilon(1e-6));
    for (int n = 0; n <= 20; ++n) {
      const cplx want = std::exp(-0.5) / std::sqrt(oracle::factorial(n));
      CHECK(std::abs(psi.amplitudes()[static_cast<std::size_t>(n)] - want) < 1e-13);
    }
  }
  SUBCASE("alpha = 3 at cutoff 4 leaks the Poisson tail") {
    auto psi = apply_displacement(make_vacuum({a}, 4), a, 3.0);
    CHECK(psi.leakage() > 0.1);
    CHECK(psi.leakage() == Approx(oracle::poisson_tail(3.0, 4)).epsilon(1e-12));
    CHECK(psi.norm_squared() + psi.leakage() == Approx(1.0).epsilon(1e-12));
  }
  CHECK_THROWS_AS(apply_displacement(make_vacuum({a}, 3), b, 1.0), FockError);
}

TEST_CASE("displacements compose up to a global phase") {
  const cplx x{0.3, 0.1}, y{-0.2, 0.25};
  auto psi = random_state({a}, 6, 3);
  psi = with_cutoff(psi, 60);
  auto one = apply_displacement(apply_displacement(psi, a, x), a, y);
  auto two = apply_displacement(psi, a, x + y);
  const double ov = std::abs(inner_product(one, two)) / std::sqrt(one.norm_squared() * two.norm_squared());
  CHECK(ov == Approx(1.0).epsilon(1e-10));
}

TEST_CASE("two-mode squeezing") {
  SUBCASE("r = 0 is the identity") {
    auto psi = random_state({a, b}, 4, 5);
    CHECK(max_diff(apply_two_mode_squeeze(psi, a, b, 0.0, 0.3), psi) == 0.0);
  }
  SUBCASE("Schmidt coefficients at r = 0.5") {
    auto psi = apply_two_mode_squeeze(make_vacuum({a, b}, 20), a, b, 0.5, 0.0);
    CHECK(psi.at({0, 0}).real() == Approx(0.886819).epsilon(1e-6));
    CHECK(psi.at({1, 1}).real() == Approx(0.409814).epsilon(1e-6));
    const double q = std::tanh(0.5);
    for (int n = 0; n <= 20; ++n) {
      CHECK(std::abs(psi.at({n, n}) - std::pow(q, n) / std::cosh(0.5)) < 1e-10);
      for (int m = 0; m <= 20; ++m)
        if (m != n) CHECK(std::abs(psi.at({n, m})) == 0.0);
    }
    CHECK(psi.leakage() == Approx(std::pow(q, 42)).epsilon(1e-12));
  }
  SUBCASE("theta + pi undoes the squeeze") {
    auto psi = apply_two_mode_squeeze(make_vacuum({a, b}, 20), a, b, 0.5, 0.0);
    psi = apply_two_mode_squeeze(psi, a, b, 0.5, std::numbers::pi);
    CHECK(std::abs(psi.at({0, 0}) - 1.0) < 1e-8);
  }
  CHECK_THROWS_AS(apply_two_mode_squeeze(make_vacuum({a, b}, 3), a, a, 0.5, 0.0), FockError);
  CHECK_THROWS_AS(apply_two_mode_squeeze(make_vacuum({a, b}, 3), a, b, -0.5, 0.0), FockError);
}

TEST_CASE("beam splitter") {
  SUBCASE("transmittance 1 is the identity") {
    auto psi = random_state({a, b}, 3, 7);
    CHECK(max_diff(apply_beam_splitter(psi, a, b, 1.0, 0.4), psi) == 0.0);
  }
  SUBCASE("single photon, symmetric convention") {
    FockState psi(std::vector<ModeLabel>{a, b}, 2);
    psi.at({1, 0}) = 1.0;
    psi = apply_beam_splitter(psi, a, b, 0.5, std::numbers::pi / 2);
    CHECK(std::abs(psi.at({1, 0}) - std::sqrt(0.5)) < 1e-14);
    CHECK(std::abs(psi.at({0, 1}) - cplx(0.0, std::sqrt(0.5))) < 1e-14);  // reflection carries i
    CHECK(psi.leakage() == 0.0);
  }
  SUBCASE("Hong-Ou-Mandel null") {
    for (double phase : {0.0, 0.7, std::numbers::pi / 2}) {
      FockState psi(std::vector<ModeLabel>{a, b}, 2);
      psi.at({1, 1}) = 1.0;
      psi = apply_beam_splitter(psi, a, b, 0.5, phase);
      CHECK(std::abs(psi.at({1, 1})) < 1e-14);
      CHECK(std::norm(psi.at({2, 0})) == Approx(0.5));
    }
  }
  SUBCASE("conserves the photon-number distribution of the pair") {
    auto psi = random_state({a, c, b}, 5, 11);
    auto out = apply_beam_splitter(psi, a, b, 0.3, 1.1);
    std::vector<double> before(11, 0.0), after(11, 0.0);
    for (int i = 0; i <= 5; ++i)
      for (int j = 0; j <= 5; ++j)
        for (int k = 0; k <= 5; ++k) {
          before[static_cast<std::size_t>(i + k)] += std::norm(psi.at({i, j, k}));
          after[static_cast<std::size_t>(i + k)] += std::norm(out.at({i, j, k}));
        }
    // blocks with n_a + n_b <= cutoff are exact; higher ones lose weight
    for (int n = 0; n <= 5; ++n) CHECK(after[static_cast<std::size_t>(n)] == Approx(before[static_cast<std::size_t>(n)]).epsilon(1e-12));
  }
  CHECK_THROWS_AS(apply_beam_splitter(make_vacuum({a, b}, 2), a, b, 1.5, 0.0), FockError);
  CHECK_THROWS_AS(apply_beam_splitter(make_vacuum({a, b}, 2), a, b, -0.1, 0.0), FockError);
}

TEST_CASE("phase rotation") {
  auto psi = random_state({a, b}, 4, 13);
  CHECK(max_diff(apply_phase_rotation(psi, a, 0.0), psi) == 0.0);
  CHECK(max_diff(apply_phase_rotation(psi, a, 2 * std::numbers::pi), psi) < 1e-14);
  FockState one(std::vector<ModeLabel>{a}, 2);
  one.at({1}) = 1.0;
  CHECK(std::abs(apply_phase_rotation(one, a, std::numbers::pi).at({1}) + 1.0) < 1e-15);
  CHECK_THROWS_AS(apply_phase_rotation(psi, c, 1.0), FockError);
}

TEST_CASE("partial trace") {
  SUBCASE("keeping everything returns the same operator") {
    auto psi = random_state({a, b}, 3, 17);
    auto rho = to_density(psi);
    CHECK((partial_trace(rho, {a, b}).matrix - rho.matrix).cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("TMSV marginal is thermal") {
    auto psi = apply_two_mode_squeeze(make_vacuum({a, b}, 40), a, b, 0.5, 0.0);
    auto rho = partial_trace(psi, {a});
    double nbar = 0.0;
    for (int n = 0; n <= 40; ++n) nbar += n * rho.matrix(n, n).real();
    CHECK(nbar == Approx(0.27154).epsilon(1e-5));
    CHECK(nbar == Approx(std::pow(std::sinh(0.5), 2)).epsilon(1e-12));
  }
  SUBCASE("product state factors are recovered") {
    auto x = random_state({a}, 3, 19);
    auto y = random_state({b}, 3, 23);
    auto rho = partial_trace(tensor_product(x, y), {b});
    CHECK((rho.matrix - to_density(y).matrix).cwiseAbs().maxCoeff() < 1e-12);
    auto rho_a = partial_trace(tensor_product(x, y), {a});
    CHECK((rho_a.matrix - to_density(x).matrix).cwiseAbs().maxCoeff() < 1e-12);
  }
  SUBCASE("trace is preserved") {
    auto psi = random_state({a, b, c}, 3, 29);
    CHECK(partial_trace(psi, {c, a}).trace() == Approx(1.0).epsilon(1e-12));
  }
  CHECK_THROWS_AS(partial_trace(make_vacuum({a}, 2), {}), FockError);
}

TEST_CASE("fidelity") {
  auto psi = random_state({a, b}, 2, 31);
  CHECK(fidelity(to_density(psi), psi) == Approx(1.0));
  FockState h(std::vector<ModeLabel>{a, b}, 1), v(std::vector<ModeLabel>{a, b}, 1);
  h.at({1, 0}) = 1.0;
  v.at({0, 1}) = 1.0;
  CHECK(fidelity(to_density(h), v) == 0.0);
  DensityMatrix mixed{{a, b}, 1, Eigen::MatrixXcd::Zero(4, 4), 0.0};
  mixed.matrix(2, 2) = mixed.matrix(1, 1) = 0.5;
  FockState any(std::vector<ModeLabel>{a, b}, 1);
  any.at({1, 0}) = 0.6;
  any.at({0, 1}) = cplx(0.0, 0.8);
  CHECK(fidelity(mixed, any) == Approx(0.5));
  // symmetric for pure states, blind to a global phase
  auto phi = random_state({a, b}, 2, 37);
  CHECK(fidelity(to_density(psi), phi) == Approx(fidelity(to_density(phi), psi)).epsilon(1e-12));
  FockState rotated = phi;
  for (auto& x : rotated.amplitudes()) x *= std::polar(1.0, 0.9);
  CHECK(fidelity(to_density(psi), rotated) == Approx(fidelity(to_density(psi), phi)).epsilon(1e-12));
  CHECK_THROWS_AS(fidelity(to_density(psi), make_vacuum({a, c}, 2)), FockError);
}

TEST_CASE("unitaries conserve norm plus leakage") {
  auto psi = random_state({a, b, c}, 6, 41);
  std::mt19937 eng(43);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  double last_leak = 0.0;
  for (int step = 0; step < 30; ++step) {
    const double before = psi.norm_squared() + psi.leakage();
    switch (step % 4) {
      case 0: psi = apply_displacement(psi, a, {u(eng), u(eng)}); break;
      case 1: psi = apply_two_mode_squeeze(psi, b, c, 0.3 * std::abs(u(eng)), u(eng)); break;
      case 2: psi = apply_beam_splitter(psi, a, c, 0.5 * (1 + u(eng)), u(eng)); break;
      default: psi = apply_phase_rotation(psi, b, 3 * u(eng)); break;
    }
    CHECK(psi.norm_squared() + psi.leakage() == Approx(before).epsilon(1e-12));
    CHECK(psi.norm_squared() <= 1.0 + 1e-12);
    CHECK(psi.leakage() >= last_leak);
    last_leak = psi.leakage();
  }
}

TEST_CASE("loss Kraus operators are complete") {
  const auto ks = loss_kraus_operators(0.37, 6);
  Eigen::MatrixXcd sum = Eigen::MatrixXcd::Zero(7, 7);
  for (const auto& k : ks) sum += k.adjoint() * k;
  CHECK((sum - Eigen::MatrixXcd::Identity(7, 7)).cwiseAbs().maxCoeff() < 1e-14);
  CHECK(loss_kraus_operators(1.0, 6).size() == 1);
  CHECK_THROWS_AS(loss_kraus_operators(1.2, 3), FockError);
}

TEST_CASE("hermite functions are orthonormal") {
  // Gauss-type check by dense trapezoid on [-12, 12]
  const int n = 10;
  Eigen::MatrixXd g = Eigen::MatrixXd::Zero(n + 1, n + 1);
  const double h = 0.01;
  for (double x = -12.0; x <= 12.0; x += h) {
    const auto psi = hermite_functions(x, n);
    for (int i = 0; i <= n; ++i)
      for (int j = 0; j <= n; ++j) g(i, j) += h * psi[static_cast<std::size_t>(i)] * psi[static_cast<std::size_t>(j)];
  }
  CHECK((g - Eigen::MatrixXd::Identity(n + 1, n + 1)).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("trace distance") {
  Eigen::MatrixXcd x = Eigen::MatrixXcd::Zero(2, 2), y = Eigen::MatrixXcd::Zero(2, 2);
  x(0, 0) = 1.0;
  y(1, 1) = 1.0;
  CHECK(trace_distance(x, y) == Approx(1.0));
  CHECK(trace_distance(x, x) == 0.0);
}
