#pragma once

// Entangled resource states and the input polarization qubit.

#include <array>

#include "cvqwc/fock.hpp"

namespace cvqwc {

/// Parameters of the non-degenerate squeezed source.
///
/// `r` is the squeezing factor (coupling times interaction time). The second
/// polarization pair is squeezed with `s_coefficient * r`; a negative product
/// is represented as squeezing angle pi. The V-arm phase offsets enter only
/// through their sum phi = phi_A + phi_B. Wavelengths are labels.
struct SourceParams {
  double r = 0.0;
  double s_coefficient = 1.0;
  double phi_A = 0.0;
  double phi_B = 0.0;
  double wavelength_A_nm = 780.0;
  double wavelength_B_nm = 1529.0;

  double q() const;
  double phase_error() const { return phi_A + phi_B; }
  void validate() const;
};

/// c1 |1;0> + c2 |0;1> in the (H, V) photon-number basis.
struct InputQubit {
  cplx c1{1.0, 0.0};
  cplx c2{0.0, 0.0};

  void validate() const;
};

/// Mode lists in canonical order.
std::vector<ModeLabel> linear_source_modes();    // (A,H) (A,V) (B,H) (B,V)
std::vector<ModeLabel> circular_source_modes();  // (A,s+) (A,s-) (B,s+) (B,s-)
std::vector<ModeLabel> input_modes();            // (in,H) (in,V)
std::vector<ModeLabel> output_modes();           // (B,H) (B,V)

/// Pair of in-phase two-mode squeezed vacua over linear_source_modes(). Non-zero
/// phi_A / phi_B rotate the V arms so that |n;m>_A|n;m>_B carries exp(i m phi).
FockState make_tmsv_pair(const SourceParams& params, int cutoff);

/// Vacuum evolved under the four-wave-mixing Hamiltonian
/// i xi (a+_{A,s+} a+_{B,s-} + s a+_{A,s-} a+_{B,s+}) + h.c., over circular_source_modes().
/// The phase offsets act on the (A,s-), (B,s+) pair, which the waveplates map to V.
FockState make_fwm_source(const SourceParams& params, int cutoff);

/// Waveplate basis change on both arms:
///   (A,s+) -> (A,H), (A,s-) -> (A,V), (B,s-) -> (B,H), (B,s+) -> (B,V),
/// with no relative retardance phase. Output is in linear_source_modes() order.
FockState apply_waveplates(const FockState& state);

FockState make_input_qubit(const InputQubit& q, int cutoff);

/// Stokes vector of a normalized 2x2 (H, V) density block: z = rho_HH - rho_VV,
/// x = 2 Re rho_HV, y = 2 Im rho_VH. |H> -> (0,0,1), (|H> + i|V>)/sqrt(2) -> (0,1,0).
std::array<double, 3> bloch_vector(const Eigen::Matrix2cd& block);
Eigen::Matrix2cd qubit_block(const InputQubit& q);

}  // namespace cvqwc
