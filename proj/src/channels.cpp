#include "cvqwc/channels.hpp"

#include <cmath>

namespace cvqwc {

namespace {

const ModeLabel kBH{Arm::B, Polarization::H, {}};
const ModeLabel kBV{Arm::B, Polarization::V, {}};
const ModeLabel kInH{Arm::in, Polarization::H, {}};
const ModeLabel kInV{Arm::in, Polarization::V, {}};

// c[n][l] = sqrt(C(n, l) eta^(n-l) (1-eta)^l), the amplitude of losing l of n photons.
std::vector<std::vector<double>> loss_amplitudes(double eta, int cutoff) {
  std::vector<std::vector<double>> c(static_cast<std::size_t>(cutoff) + 1);
  for (int n = 0; n <= cutoff; ++n) {
    auto& row = c[static_cast<std::size_t>(n)];
    row.assign(static_cast<std::size_t>(n) + 1, 0.0);
    for (int l = 0; l <= n; ++l) {
      const double kept = n - l == 0 ? 1.0 : std::pow(eta, n - l);
      const double lost = l == 0 ? 1.0 : std::pow(1.0 - eta, l);
      const double binom = std::exp(std::lgamma(n + 1.0) - std::lgamma(l + 1.0) - std::lgamma(n - l + 1.0));
      row[static_cast<std::size_t>(l)] = std::sqrt(binom * kept * lost);
    }
  }
  return c;
}

DensityMatrix lose_on_mode(const DensityMatrix& rho, std::size_t pos, double eta) {
  const int cutoff = rho.cutoff;
  const std::size_t d = rho.local_dim();
  const std::size_t n = rho.modes.size();
  std::size_t stride = 1;
  for (std::size_t k = pos + 1; k < n; ++k) stride *= d;
  const auto c = loss_amplitudes(eta, cutoff);
  const Eigen::Index dim = rho.matrix.rows();
  DensityMatrix out{rho.modes, cutoff, Eigen::MatrixXcd::Zero(dim, dim), rho.trace_deficit};
  auto digit = [&](Eigen::Index i) { return static_cast<int>((static_cast<std::size_t>(i) / stride) % d); };
  for (Eigen::Index col = 0; col < dim; ++col) {
    const int mc = digit(col);
    for (Eigen::Index row = 0; row < dim; ++row) {
      const int mr = digit(row);
      cplx acc = 0.0;
      for (int l = 0; mr + l <= cutoff && mc + l <= cutoff; ++l) {
        const Eigen::Index shift = static_cast<Eigen::Index>(l) * static_cast<Eigen::Index>(stride);
        acc += c[static_cast<std::size_t>(mr + l)][static_cast<std::size_t>(l)] *
               c[static_cast<std::size_t>(mc + l)][static_cast<std::size_t>(l)] *
               rho.matrix(row + shift, col + shift);
      }
      out.matrix(row, col) = acc;
    }
  }
  return out;
}

DensityMatrix to_input_arm(DensityMatrix rho) {
  rho = relabel(std::move(rho), kBH, kInH);
  return relabel(std::move(rho), kBV, kInV);
}

StageReport report(std::string name, const TeleportResult& r, const InputQubit& input) {
  StageReport s;
  s.name = std::move(name);
  s.grid_mass = r.grid_mass;
  s.truncation_leakage = r.truncation_leakage();
  s.trace = r.rho.trace();
  s.source_cutoff = r.source_cutoff;
  s.output_cutoff = r.output_cutoff;
  s.metrics = qubit_metrics(r.rho, input);
  return s;
}

}  // namespace

void LossParams::validate() const {
  if (!(eta >= 0.0 && eta <= 1.0)) throw FockError("loss transmittance eta must lie in [0, 1]");
  if (targets.empty()) throw FockError("loss channel needs at least one target mode");
}

DensityMatrix loss_channel(const DensityMatrix& rho, const LossParams& loss) {
  loss.validate();
  DensityMatrix out = rho;
  for (const auto& m : loss.targets) out = lose_on_mode(out, rho.index_of(m), loss.eta);
  return out;
}

void PipelineSpec::validate() const {
  stage1.source.validate();
  stage2.source.validate();
  input.validate();
  grid.validate();
  if (!(fiber_eta >= 0.0 && fiber_eta <= 1.0)) throw FockError("fiber eta must lie in [0, 1]");
}

PipelineResult run_pipeline(const PipelineSpec& spec) {
  spec.validate();
  PipelineResult res;
  TeleportOptions first = spec.options;
  DensityMatrix mid;
  if (spec.kind == PipelineKind::fig1_chain) {
    const TeleportResult s1 = teleport_average(spec.input, spec.stage1.source, spec.stage1.gain, spec.grid, first);
    res.stages.push_back(report("stage1", s1, spec.input));
    mid = loss_channel(s1.normalized(), LossParams{spec.fiber_eta, {kBH, kBV}});
  } else {
    first.b_arm_transmittance = spec.fiber_eta;
    const TeleportResult s1 = teleport_average(spec.input, spec.stage1.source, spec.stage1.gain, spec.grid, first);
    res.stages.push_back(report("stage1", s1, spec.input));
    mid = s1.normalized();
  }
  TeleportOptions second = spec.options;
  second.b_arm_transmittance = 1.0;
  second.output_cutoff = 0;
  const TeleportResult s2 =
      teleport_density(to_input_arm(std::move(mid)), spec.stage2.source, spec.stage2.gain, spec.grid, second);
  res.stages.push_back(report("stage2", s2, spec.input));
  res.rho = s2.normalized();
  res.metrics = qubit_metrics(res.rho, spec.input);
  return res;
}

}  // namespace cvqwc
