#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>

#include "cvqwc/teleport.hpp"
#include "oracles.hpp"

using namespace cvqwc;
using doctest::Approx;

namespace {

constexpr double pi = std::numbers::pi;
const double s2 = std::sqrt(0.5);

SourceParams source(double r) {
  SourceParams p;
  p.r = r;
  return p;
}

FockState joint_state(const InputQubit& in, double r, int cutoff) {
  return tensor_product(make_input_qubit(in, cutoff), make_tmsv_pair(source(r), cutoff));
}

const std::vector<BetaPair> probes{
    {{0.0, 0.0}, {0.0, 0.0}}, {{0.4, -0.3}, {0.1, 0.7}}, {{-1.2, 0.5}, {0.9, -0.2}}, {{0.3, 1.4}, {-0.6, -0.8}}};

}  // namespace

TEST_CASE("homodyne density of vacuum on an unsqueezed source") {
  const auto joint =
      tensor_product(make_vacuum(input_modes(), 6), make_tmsv_pair(source(0.0), 6));
  CHECK(homodyne_density(joint, probes[0]) == Approx(oracle::vacuum_density_at_origin()).epsilon(1e-12));
  for (const auto& b : probes) {
    const double tail = std::max(oracle::poisson_tail(std::abs(b.H), 6), oracle::poisson_tail(std::abs(b.V), 6));
    CHECK(std::abs(homodyne_density(joint, b) - oracle::vacuum_density(b.H, b.V)) < 1e-12 + tail);
  }
}

TEST_CASE("pre- and post-mixing pictures give the same density") {
  const InputQubit in{0.6, cplx(0.0, 0.8)};
  const auto pre = joint_state(in, 0.5, 5);
  const auto post = mix_at_half_bs(make_input_qubit(in, 1), make_tmsv_pair(source(0.5), 5));
  for (const auto& b : probes) {
    CHECK(homodyne_density(post, b) == Approx(homodyne_density(pre, b)).epsilon(1e-10));
  }
}

TEST_CASE("brute-force projection matches the transfer operator") {
  const int cutoff = 8;
  for (double r : {0.2, 1.0}) {
    for (double g : {1.0, std::tanh(r)}) {
      const InputQubit in{s2, cplx(0.0, s2)};
      const auto joint = joint_state(in, r, cutoff);
      for (const auto& b : probes) {
        const auto brute = project_and_displace(joint, b, g, cutoff);
        const Eigen::MatrixXcd t =
            transfer_operator(ResourcePair::from(source(r)), g, b, cutoff, cutoff, cutoff);
        const Eigen::VectorXcd psi_in = Eigen::Map<const Eigen::VectorXcd>(
            make_input_qubit(in, cutoff).amplitudes().data(), (cutoff + 1) * (cutoff + 1));
        const Eigen::VectorXcd out = t * psi_in;
        REQUIRE(static_cast<Eigen::Index>(brute.size()) == out.size());
        double worst = 0.0;
        for (Eigen::Index i = 0; i < out.size(); ++i)
          worst = std::max(worst, std::abs(brute.amplitudes()[static_cast<std::size_t>(i)] - out(i)));
        CHECK(worst < 1e-8);
      }
    }
  }
}

TEST_CASE("transfer operator at zero squeezing sends the input to vacuum") {
  // q = 0 keeps only n = 0, so the output is D(g beta)|0> up to amplitude.
  const Eigen::MatrixXcd t = transfer_operator(0.0, 1.0, {{0.0, 0.0}, {0.0, 0.0}}, 3);
  CHECK(std::abs(t(0, 0) - 1.0 / pi) < 1e-14);
  CHECK((t.block(1, 0, t.rows() - 1, t.cols())).cwiseAbs().maxCoeff() < 1e-14);
  CHECK_THROWS_AS(transfer_operator(1.0, 1.0, {}, 3), FockError);
}

TEST_CASE("unit gain reproduces the additive-noise fidelity") {
  for (double r : {0.5, 1.0}) {
    const auto res = teleport_average({1.0, 0.0}, source(r), GainRule::unit(), BetaGrid::for_squeezing(r));
    CHECK(res.grid_mass > 0.9999);
    CHECK(res.rho.trace() == Approx(res.grid_mass).epsilon(1e-10));
    const auto m = qubit_metrics(res.normalized(), InputQubit{1.0, 0.0});
    CHECK(*m.fidelity == Approx(oracle::unit_gain_single_photon_fidelity(r)).epsilon(1e-4));
  }
}

TEST_CASE("matched gain keeps the qubit and loses photons") {
  const double r = 0.5;
  const double q = std::tanh(r);
  for (InputQubit in : {InputQubit{1.0, 0.0}, InputQubit{s2, s2}, InputQubit{s2, cplx(0.0, -s2)}}) {
    const auto res = teleport_average(in, source(r), GainRule::matched(), BetaGrid::for_squeezing(r));
    const auto m = qubit_metrics(res.normalized(), in);
    CHECK(m.one_photon_weight == Approx(q * q).epsilon(1e-6));
    CHECK(m.vacuum_weight == Approx(1.0 - q * q).epsilon(1e-6));
    CHECK(m.multi_photon_weight < 1e-8);
    CHECK(*m.conditional_fidelity == Approx(1.0).epsilon(1e-8));
    const auto want = bloch_vector(qubit_block(in));
    for (int i = 0; i < 3; ++i) CHECK(m.bloch[static_cast<std::size_t>(i)] == Approx(want[static_cast<std::size_t>(i)]).epsilon(1e-8));
  }
}

TEST_CASE("phase offset rotates the Bloch vector about z") {
  const double r = 0.5;
  for (double phi : {0.4, pi / 3, 2.0}) {
    SourceParams p = source(r);
    p.phi_A = phi / 2;
    p.phi_B = phi / 2;
    const InputQubit in{s2, s2};
    const auto res = teleport_average(in, p, GainRule::matched(), BetaGrid::for_squeezing(r));
    const auto m = qubit_metrics(res.normalized(), in);
    const double got = std::atan2(m.bloch[1], m.bloch[0]);
    // V picks up e^{i phi}: (1, e^{i phi})/sqrt2 has Bloch angle -phi with y = 2 Im rho_VH
    CHECK(std::abs(std::remainder(std::abs(got) - phi, 2 * pi)) < 1e-6);
    CHECK(std::hypot(m.bloch[0], m.bloch[1]) == Approx(1.0).epsilon(1e-8));
    CHECK(std::abs(m.bloch[2]) < 1e-8);
  }
}

TEST_CASE("averaged output is a valid state") {
  const auto res = teleport_average({0.6, cplx(0.0, 0.8)}, source(0.7), GainRule::fixed(0.8), BetaGrid::for_squeezing(0.7));
  const auto rho = res.normalized();
  CHECK(rho.trace() == Approx(1.0).epsilon(1e-12));
  CHECK((rho.matrix - rho.matrix.adjoint()).cwiseAbs().maxCoeff() < 1e-12);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(rho.matrix);
  CHECK(es.eigenvalues().minCoeff() > -1e-10);
}

TEST_CASE("guards") {
  SUBCASE("narrow grid") {
    try {
      teleport_average({1.0, 0.0}, source(1.0), GainRule::unit(), BetaGrid{1.0, 9});
      FAIL("expected a grid guard");
    } catch (const NumericalGuardError& e) {
      CHECK(e.guard() == "grid_mass");
    }
  }
  SUBCASE("small output cutoff") {
    TeleportOptions o;
    o.output_cutoff = 2;
    try {
      teleport_average({1.0, 0.0}, source(1.0), GainRule::unit(), BetaGrid::for_squeezing(1.0), o);
      FAIL("expected a truncation guard");
    } catch (const NumericalGuardError& e) {
      CHECK(e.guard() == "truncation");
    }
  }
  CHECK_THROWS_AS(teleport_average({1.0, 1.0}, source(0.5), GainRule::unit(), BetaGrid{}), FockError);
  CHECK_THROWS_AS(BetaGrid({6.0, 1}).validate(), FockError);
}

TEST_CASE("gain rules and grids") {
  CHECK(GainRule::unit().resolve(0.7) == 1.0);
  CHECK(GainRule::matched().resolve(0.7) == Approx(std::tanh(0.7)));
  CHECK(GainRule::fixed(0.3).resolve(2.0) == 0.3);
  const BetaGrid g{3.0, 13};
  double sum = 0.0;
  for (double w : g.weights()) sum += w;
  CHECK(sum == Approx(6.0));
  CHECK(g.nodes().front() == -3.0);
  CHECK(g.nodes().back() == 3.0);
  CHECK(g.nodes()[6] == 0.0);
  const auto big = BetaGrid::for_squeezing(2.0);
  CHECK(big.half_width > 12.0);
  CHECK(big.points_per_axis % 2 == 1);
  CHECK(BetaGrid::for_squeezing(0.1).half_width == 6.0);
}

TEST_CASE("sampling is deterministic") {
  for (int i = 0; i < 100; ++i) {
    const double u = seeded_uniform(7, static_cast<std::uint64_t>(i));
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
  }
  CHECK(seeded_uniform(7, 3) == seeded_uniform(7, 3));
  CHECK(seeded_uniform(7, 3) != seeded_uniform(8, 3));
  const auto joint = joint_state({1.0, 0.0}, 0.3, 3);
  const BetaGrid grid{4.0, 9};
  const auto x = sample_beta(joint, grid, 11);
  const auto y = sample_beta(joint, grid, 11);
  CHECK(x.beta.H == y.beta.H);
  CHECK(x.beta.V == y.beta.V);
  CHECK(x.density == Approx(homodyne_density(joint, x.beta)));
}

TEST_CASE("monte carlo agrees with the average and is reproducible") {
  const double r = 0.5;
  const BetaGrid grid{6.0, 25};
  const InputQubit in{s2, s2};
  const auto a = teleport_mc(in, source(r), GainRule::unit(), grid, 2000, 99);
  const auto b = teleport_mc(in, source(r), GainRule::unit(), grid, 2000, 99);
  CHECK((a.rho.matrix - b.rho.matrix).cwiseAbs().maxCoeff() == 0.0);
  CHECK(a.records.size() == 2000);
  CHECK(a.rho.trace() == Approx(1.0).epsilon(1e-10));
  TeleportOptions o;
  o.output_cutoff = a.output_cutoff;
  o.source_cutoff = a.source_cutoff;
  const auto avg = teleport_average(in, source(r), GainRule::unit(), grid, o).normalized();
  CHECK(trace_distance(a.rho.matrix, avg.matrix) <= 3.0 * a.frobenius_standard_error);
  TeleportOptions two;
  two.threads = 2;
  const auto c = teleport_mc(in, source(r), GainRule::unit(), grid, 2000, 99, two);
  CHECK((a.rho.matrix - c.rho.matrix).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("qubit metrics") {
  const DensityMatrix vac = to_density(make_vacuum(output_modes(), 2));
  const auto m = qubit_metrics(vac, InputQubit{1.0, 0.0});
  CHECK(m.vacuum_weight == 1.0);
  CHECK(m.one_photon_weight == 0.0);
  CHECK(*m.fidelity == 0.0);
  CHECK_THROWS(qubit_metrics(to_density(make_vacuum({output_modes()[0]}, 2))));
  CHECK(!qubit_metrics(vac).fidelity.has_value());
}

TEST_CASE("strong squeezing keeps typical conditional outputs close to the input") {
  // holds for the bulk of outcomes; at |beta| ~ 3 per polarization it drops below 0.96
  const auto res = ResourcePair::from(source(2.0));
  Eigen::VectorXcd psi = Eigen::VectorXcd::Zero(4);
  psi(2) = 1.0;
  const int out = 40;
  for (double b : {0.0, 0.5, 1.0, 2.0}) {
    const Eigen::VectorXcd o = transfer_operator(res, 1.0, {{b, 0.0}, {0.0, b}}, 60, 1, out) * psi;
    CHECK(std::norm(o(out + 1)) / o.squaredNorm() >= 0.96);
  }
}
