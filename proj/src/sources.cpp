#include "cvqwc/sources.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace cvqwc {

namespace {

const ModeLabel kAH{Arm::A, Polarization::H, {}};
const ModeLabel kAV{Arm::A, Polarization::V, {}};
const ModeLabel kBH{Arm::B, Polarization::H, {}};
const ModeLabel kBV{Arm::B, Polarization::V, {}};
const ModeLabel kAp{Arm::A, Polarization::sigma_plus, {}};
const ModeLabel kAm{Arm::A, Polarization::sigma_minus, {}};
const ModeLabel kBp{Arm::B, Polarization::sigma_plus, {}};
const ModeLabel kBm{Arm::B, Polarization::sigma_minus, {}};

FockState squeeze_signed(FockState psi, const ModeLabel& a, const ModeLabel& b, double r) {
  return apply_two_mode_squeeze(std::move(psi), a, b, std::abs(r), r < 0.0 ? std::numbers::pi : 0.0);
}

}  // namespace

double SourceParams::q() const { return std::tanh(r); }

void SourceParams::validate() const {
  if (!(r >= 0.0) || !std::isfinite(r)) throw FockError("source squeezing r must be finite and >= 0");
  if (!std::isfinite(s_coefficient) || !std::isfinite(phi_A) || !std::isfinite(phi_B)) {
    throw FockError("source parameters must be finite");
  }
}

void InputQubit::validate() const {
  const double n = std::norm(c1) + std::norm(c2);
  if (!(std::abs(n - 1.0) <= 1e-12)) {
    throw FockError("input qubit is not normalized (|c1|^2 + |c2|^2 = " + std::to_string(n) + ")");
  }
}

std::vector<ModeLabel> linear_source_modes() { return {kAH, kAV, kBH, kBV}; }
std::vector<ModeLabel> circular_source_modes() { return {kAp, kAm, kBp, kBm}; }
std::vector<ModeLabel> input_modes() {
  return {{Arm::in, Polarization::H, {}}, {Arm::in, Polarization::V, {}}};
}
std::vector<ModeLabel> output_modes() { return {kBH, kBV}; }

FockState make_tmsv_pair(const SourceParams& params, int cutoff) {
  params.validate();
  FockState psi = make_vacuum(linear_source_modes(), cutoff);
  psi = apply_two_mode_squeeze(std::move(psi), kAH, kBH, params.r, 0.0);
  psi = apply_two_mode_squeeze(std::move(psi), kAV, kBV, params.r, 0.0);
  // a_{A,V} -> e^{-i phi_A} a_{A,V} multiplies each A,V photon by e^{i phi_A}.
  if (params.phi_A != 0.0) psi = apply_phase_rotation(std::move(psi), kAV, -params.phi_A);
  if (params.phi_B != 0.0) psi = apply_phase_rotation(std::move(psi), kBV, -params.phi_B);
  return psi;
}

FockState make_fwm_source(const SourceParams& params, int cutoff) {
  params.validate();
  FockState psi = make_vacuum(circular_source_modes(), cutoff);
  psi = squeeze_signed(std::move(psi), kAp, kBm, params.r);
  psi = squeeze_signed(std::move(psi), kAm, kBp, params.s_coefficient * params.r);
  if (params.phi_A != 0.0) psi = apply_phase_rotation(std::move(psi), kAm, -params.phi_A);
  if (params.phi_B != 0.0) psi = apply_phase_rotation(std::move(psi), kBp, -params.phi_B);
  return psi;
}

FockState apply_waveplates(const FockState& state) {
  for (const auto& m : circular_source_modes()) {
    if (!state.has_mode(m)) {
      throw FockError("waveplates need circular-polarization modes on arms A and B; missing " +
                      m.to_string());
    }
  }
  FockState psi = relabel(state, kAp, kAH);
  psi = relabel(std::move(psi), kAm, kAV);
  psi = relabel(std::move(psi), kBm, kBH);
  psi = relabel(std::move(psi), kBp, kBV);
  std::vector<ModeLabel> order = linear_source_modes();
  for (const auto& m : psi.modes()) {
    if (std::find(order.begin(), order.end(), m) == order.end()) order.push_back(m);
  }
  return reorder_modes(psi, order);
}

FockState make_input_qubit(const InputQubit& q, int cutoff) {
  q.validate();
  FockState psi(input_modes(), cutoff);
  if (cutoff < 1) throw FockError("cutoff must be >= 1");
  psi.at({1, 0}) = q.c1;
  psi.at({0, 1}) = q.c2;
  return psi;
}

Eigen::Matrix2cd qubit_block(const InputQubit& q) {
  Eigen::Vector2cd v(q.c1, q.c2);
  return v * v.adjoint();
}

std::array<double, 3> bloch_vector(const Eigen::Matrix2cd& block) {
  const double tr = block.trace().real();
  if (!(tr > 0.0)) return {0.0, 0.0, 0.0};
  const cplx hv = block(0, 1) / tr;
  const cplx vh = block(1, 0) / tr;
  return {2.0 * hv.real(), 2.0 * vh.imag(), (block(0, 0).real() - block(1, 1).real()) / tr};
}

}  // namespace cvqwc
