#pragma once

// Multimode truncated Fock-space states and the Gaussian unitaries used by the
// teleportation engine.
//
// Conventions used throughout the library:
//   x = (a + a^dag)/sqrt(2),  p = i(a^dag - a)/sqrt(2),  vacuum Var(x) = 1/2.
//   Amplitudes are stored row-major over the mode list: the first mode is the
//   most significant digit of the flat index, each digit running 0..cutoff.
//   Truncated operators act as P O P, with P the projector on photon numbers
//   <= cutoff. Norm removed by the projection is accumulated in `leakage`.

#include <complex>
#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace cvqwc {

using cplx = std::complex<double>;

/// Raised for precondition violations (bad labels, ranges, shapes).
class FockError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Spatial arm. `minus`/`plus` carry the a_-/a_+ outputs of the homodyne beam
/// splitter, a_{-/+} = (a_in -/+ a_A)/sqrt(2).
enum class Arm { in, A, B, out, anc, minus, plus };
enum class Polarization { H, V, sigma_plus, sigma_minus };

struct ModeLabel {
  Arm arm = Arm::in;
  Polarization pol = Polarization::H;
  std::optional<int> freq_bin;

  friend bool operator==(const ModeLabel&, const ModeLabel&) = default;
  std::string to_string() const;
};

std::string to_string(Arm arm);
std::string to_string(Polarization pol);

class FockState {
 public:
  /// All-zero amplitudes; use make_vacuum for the vacuum state.
  FockState(std::vector<ModeLabel> modes, int cutoff);

  const std::vector<ModeLabel>& modes() const { return modes_; }
  int cutoff() const { return cutoff_; }
  std::size_t num_modes() const { return modes_.size(); }
  /// Local dimension cutoff + 1.
  std::size_t local_dim() const { return static_cast<std::size_t>(cutoff_) + 1; }
  std::size_t size() const { return amps_.size(); }

  std::span<const cplx> amplitudes() const { return amps_; }
  std::span<cplx> amplitudes() { return amps_; }

  cplx& at(std::span<const int> occupation);
  cplx at(std::span<const int> occupation) const;
  cplx& at(std::initializer_list<int> occupation) {
    return at(std::span<const int>(occupation.begin(), occupation.size()));
  }
  cplx at(std::initializer_list<int> occupation) const {
    return at(std::span<const int>(occupation.begin(), occupation.size()));
  }

  double leakage() const { return leakage_; }
  void add_leakage(double amount);

  double norm_squared() const;

  bool has_mode(const ModeLabel& m) const;
  /// Position of `m` in the mode list; throws FockError when absent.
  std::size_t index_of(const ModeLabel& m) const;
  /// Flat-index stride of the mode at position `k`.
  std::size_t stride(std::size_t k) const;

 private:
  std::vector<ModeLabel> modes_;
  int cutoff_;
  std::vector<cplx> amps_;
  double leakage_ = 0.0;
};

/// Mixed state over the same index layout as FockState.
struct DensityMatrix {
  std::vector<ModeLabel> modes;
  int cutoff = 0;
  Eigen::MatrixXcd matrix;
  double trace_deficit = 0.0;

  std::size_t local_dim() const { return static_cast<std::size_t>(cutoff) + 1; }
  double trace() const { return matrix.trace().real(); }
  std::size_t index_of(const ModeLabel& m) const;
};

// -- construction -----------------------------------------------------------

FockState make_vacuum(std::vector<ModeLabel> modes, int cutoff);
DensityMatrix to_density(const FockState& psi);
/// Tensor product; both factors are embedded at the larger cutoff.
FockState tensor_product(const FockState& a, const FockState& b);
/// Changes the shared cutoff. Growing zero-pads; shrinking drops amplitudes
/// and books their norm as leakage.
FockState with_cutoff(const FockState& psi, int cutoff);
DensityMatrix with_cutoff(const DensityMatrix& rho, int cutoff);
/// Renames a single mode.
FockState relabel(FockState psi, const ModeLabel& from, const ModeLabel& to);
DensityMatrix relabel(DensityMatrix rho, const ModeLabel& from, const ModeLabel& to);
/// Permutes the tensor factors so that the mode list equals `order`.
FockState reorder_modes(const FockState& psi, const std::vector<ModeLabel>& order);

// -- single-mode matrices ---------------------------------------------------

/// Exact matrix elements <m|D(alpha)|n> for m <= rows-1, n <= cols-1.
Eigen::MatrixXcd displacement_matrix(cplx alpha, int rows, int cols);
inline Eigen::MatrixXcd displacement_matrix(cplx alpha, int cutoff) {
  return displacement_matrix(alpha, cutoff + 1, cutoff + 1);
}
/// Kraus operators of the pure-loss channel with power transmittance eta:
/// K_l |n> = sqrt(C(n,l) eta^{n-l} (1-eta)^l) |n-l>, l = 0..cutoff.
std::vector<Eigen::MatrixXcd> loss_kraus_operators(double eta, int cutoff);

/// Normalized Hermite functions <x|n>, n = 0..cutoff.
std::vector<double> hermite_functions(double x, int cutoff);

// -- unitaries ----------------------------------------------------------------

/// Applies a (cutoff+1)x(cutoff+1) matrix on one mode; books lost norm as leakage.
FockState apply_single_mode(FockState psi, const ModeLabel& mode, const Eigen::MatrixXcd& op);

/// exp(alpha a^dag - alpha^* a), truncated as P D P.
FockState apply_displacement(FockState psi, const ModeLabel& mode, cplx alpha);

/// exp(r e^{i theta} a^dag b^dag - h.c.), truncated as P S P via the normal-ordered
/// factorization exp(t a^dag b^dag) cosh(r)^{-(n_a+n_b+1)} exp(-t^* a b), t = e^{i theta} tanh r.
FockState apply_two_mode_squeeze(FockState psi, const ModeLabel& mode_a, const ModeLabel& mode_b,
                                 double r, double theta);

/// Beam splitter U = exp(t (e^{i phase} a^dag b - e^{-i phase} a b^dag)), cos^2 t = transmittance.
/// Heisenberg action: a -> sqrt(T) a + e^{i phase} sqrt(1-T) b,
///                    b -> sqrt(T) b - e^{-i phase} sqrt(1-T) a.
/// phase = pi/2 gives the symmetric convention in which each reflection carries i.
/// Photon number is conserved within each (n_a + n_b) block; nothing leaks as long as
/// the block fits under the cutoff.
FockState apply_beam_splitter(FockState psi, const ModeLabel& mode_a, const ModeLabel& mode_b,
                              double transmittance, double phase);

/// Multiplies photon number n of `mode` by exp(-i n phi).
FockState apply_phase_rotation(FockState psi, const ModeLabel& mode, double phi);

// -- reductions ---------------------------------------------------------------

/// Reduced state over `keep`, in the order given by `keep`.
DensityMatrix partial_trace(const DensityMatrix& rho, const std::vector<ModeLabel>& keep);
DensityMatrix partial_trace(const FockState& psi, const std::vector<ModeLabel>& keep);

/// <psi|rho|psi> / (tr(rho) <psi|psi>), clamped to [0, 1].
double fidelity(const DensityMatrix& rho, const FockState& psi);

/// <a|b>; modes and cutoff must match.
cplx inner_product(const FockState& a, const FockState& b);

/// Contracts one mode with a vector: result[rest] = sum_n v[n] psi[.., n, ..].
FockState contract_mode(const FockState& psi, const ModeLabel& mode, std::span<const cplx> v);
/// Contracts two modes with a matrix: result[rest] = sum_{j,k} e(j,k) psi[.., j, .., k, ..]
/// where j indexes `mode_a` and k indexes `mode_b`.
FockState contract_pair(const FockState& psi, const ModeLabel& mode_a, const ModeLabel& mode_b,
                        const Eigen::MatrixXcd& e);

/// 0.5 * ||a - b||_1 for Hermitian a, b.
double trace_distance(const Eigen::MatrixXcd& a, const Eigen::MatrixXcd& b);

}  // namespace cvqwc
