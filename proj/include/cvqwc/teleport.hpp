#pragma once

// Continuous-variable teleportation of a polarization qubit.
//
// The joint x_- / p_+ homodyne measurement on (in, A) is the EPR projection
//   |beta>_{in,A} = prod_s pi^{-1/2} D_in(beta_s) sum_n |n>_{in,s} |n>_{A,s},
// normalized so that the outcome density integrates to one over d^2beta_H d^2beta_V
// (d^2beta = dRe dIm). Per polarization the conditional map is
//   T_s(beta) = sqrt((1 - q^2)/pi) D_B(g beta) sum_n q^n e^{i n phi_s} |n>_B <n|_in D_in(-beta),
// and the two-polarization transfer operator is T_H (x) T_V, i.e.
// (1 - q^2)/pi sum_{n,m} q^{n+m} ... in amplitude, (1 - q^2)^2/pi^2 in density.

#include <cstdint>
#include <optional>
#include <stdexcept>

#include "cvqwc/fock.hpp"
#include "cvqwc/sources.hpp"

namespace cvqwc {

/// Raised when a numerical-adequacy guard (grid mass, truncation) fails.
class NumericalGuardError : public std::runtime_error {
 public:
  NumericalGuardError(std::string guard, const std::string& what)
      : std::runtime_error(what), guard_(std::move(guard)) {}
  const std::string& guard() const { return guard_; }

 private:
  std::string guard_;
};

enum class GainKind { unit, matched, fixed };

struct GainRule {
  GainKind kind = GainKind::unit;
  double value = 1.0;  // used by `fixed`

  static GainRule unit() { return {GainKind::unit, 1.0}; }
  static GainRule matched() { return {GainKind::matched, 0.0}; }
  static GainRule fixed(double g) { return {GainKind::fixed, g}; }
  /// matched resolves to tanh(r) of the source in use.
  double resolve(double r) const;
};

/// Tensor-product trapezoid grid over Re/Im of beta_H and beta_V. Each axis has
/// `points_per_axis` equispaced nodes on [-half_width, half_width] with trapezoid
/// weights (end nodes weighted 1/2); the 4D weight is the product of axis weights.
struct BetaGrid {
  double half_width = 6.0;
  int points_per_axis = 41;

  void validate() const;
  std::vector<double> nodes() const;
  std::vector<double> weights() const;
  /// half_width = 3 + sqrt(cutoff), spacing at most `max_spacing`.
  static BetaGrid for_cutoff(int cutoff, double max_spacing = 0.25);
  /// Covers 4.5 standard deviations of Re beta for a one-photon input and a
  /// source of squeezing r, Var = (3/2 + cosh 2r)/4, with half_width >= 6.
  static BetaGrid for_squeezing(double r, double max_spacing = 0.25);
};

struct BetaPair {
  cplx H;
  cplx V;
};

struct HomodyneRecord {
  BetaPair beta;
  double density = 0.0;
};

// -- brute-force joint-state path -------------------------------------------------

/// Input (in,H),(in,V) and source (A,*),(B,*) are tensored at cutoff
/// input.cutoff + source.cutoff (so the beam splitter is exact), then (in,s) and
/// (A,s) are combined on a 50:50 splitter. The outputs are relabeled
/// (minus,s) = (a_in - a_A)/sqrt(2) and (plus,s) = (a_in + a_A)/sqrt(2).
FockState mix_at_half_bs(const FockState& input, const FockState& source);

/// Outcome density at beta. Accepts the pre-mixing form (arms in and A, EPR
/// projection) or the post-mixing form (arms minus and plus, projection on
/// x_- = Re beta and p_+ = Im beta eigenstates).
double homodyne_density(const FockState& joint, BetaPair beta);

/// Projects the in/A (or minus/plus) modes on the outcome beta, optionally
/// truncates the remaining modes to `output_cutoff`, and displaces (B,H), (B,V)
/// by g beta_H, g beta_V. The squared norm of the result is the outcome density
/// up to truncation of the displaced output.
FockState project_and_displace(const FockState& joint, BetaPair beta, double gain,
                               std::optional<int> output_cutoff = std::nullopt);

/// Draws one outcome by inverse CDF over the discretized density of `joint`.
/// Deterministic in `seed`; exact boundary hits resolve to the lower flat index.
HomodyneRecord sample_beta(const FockState& joint, const BetaGrid& grid, std::uint64_t seed);

// -- analytic transfer operator ---------------------------------------------------

/// Single-polarization conditional map, (output_cutoff+1) x (input_cutoff+1).
/// `q` may be negative (squeezing angle pi); `phase` multiplies |n> by e^{i n phase}.
Eigen::MatrixXcd polarization_transfer(double q, double phase, double gain, cplx beta,
                                       int source_cutoff, int input_cutoff, int output_cutoff);

/// T_q(beta) on the (H, V) two-mode space, both sides truncated at `cutoff`.
Eigen::MatrixXcd transfer_operator(double q, double gain, BetaPair beta, int cutoff);

/// Effective per-polarization resource of a source after the waveplates.
struct ResourcePair {
  double q_H = 0.0;
  double q_V = 0.0;
  double phase_V = 0.0;

  static ResourcePair from(const SourceParams& p);
  double effective_r() const;  // max |atanh q| of the two pairs
};

Eigen::MatrixXcd transfer_operator(const ResourcePair& res, double gain, BetaPair beta,
                                   int source_cutoff, int input_cutoff, int output_cutoff);

// -- averaged and sampled outputs ---------------------------------------------------

struct TeleportOptions {
  int source_cutoff = 0;  // 0: smallest N with |q|^(N+1) < 1e-6
  int output_cutoff = 0;  // 0: chosen from the added-noise photon number
  double min_grid_mass = 0.99;
  /// teleport_density fails when source + output + input leakage exceeds this.
  double max_truncation_leakage = 1e-6;
  /// Pure-loss transmittance on the B arm of the source before the displacement.
  double b_arm_transmittance = 1.0;
  /// Mixed inputs are truncated where the dropped weight stays below this.
  double input_truncation_tolerance = 1e-10;
  std::size_t threads = 1;
};

struct TeleportResult {
  DensityMatrix rho;           // on (B,H),(B,V); trace = captured probability
  double grid_mass = 0.0;      // quadrature of the outcome density
  double source_leakage = 0.0; // Schmidt tail dropped by the source cutoff
  double output_leakage = 0.0; // weight displaced above the output cutoff
  double input_leakage = 0.0;  // weight of a mixed input dropped before teleporting
  int source_cutoff = 0;
  int output_cutoff = 0;

  double truncation_leakage() const { return source_leakage + output_leakage + input_leakage; }
  DensityMatrix normalized() const;
};

int default_source_cutoff(const ResourcePair& res);
int default_output_cutoff(const ResourcePair& res, double gain, int input_cutoff,
                          double b_arm_transmittance = 1.0);

TeleportResult teleport_average(const InputQubit& input, const SourceParams& params,
                                const GainRule& gain, const BetaGrid& grid,
                                const TeleportOptions& opts = {});

/// Teleports a (possibly mixed) state on (in,H),(in,V).
TeleportResult teleport_density(const DensityMatrix& input, const SourceParams& params,
                                const GainRule& gain, const BetaGrid& grid,
                                const TeleportOptions& opts = {});

struct McResult {
  DensityMatrix rho;               // mean of normalized conditional outputs
  Eigen::MatrixXd standard_error;  // per entry, sqrt(var Re + var Im)/sqrt(shots)
  double frobenius_standard_error = 0.0;
  std::vector<HomodyneRecord> records;
  double grid_mass = 0.0;
  int source_cutoff = 0;
  int output_cutoff = 0;
};

/// Shot i draws its outcome from a mt19937_64 seeded with seed_seq{seed lo/hi, i lo/hi}.
McResult teleport_mc(const InputQubit& input, const SourceParams& params, const GainRule& gain,
                     const BetaGrid& grid, int shots, std::uint64_t seed,
                     const TeleportOptions& opts = {});

/// Uniform double in [0, 1) for stream `i` of `seed`.
double seeded_uniform(std::uint64_t seed, std::uint64_t stream);

// -- metrics ---------------------------------------------------------------------------

struct QubitMetrics {
  double trace = 0.0;
  double vacuum_weight = 0.0;
  double one_photon_weight = 0.0;
  double multi_photon_weight = 0.0;
  Eigen::Matrix2cd one_photon_block = Eigen::Matrix2cd::Zero();  // (H, V), unnormalized
  std::array<double, 3> bloch{0.0, 0.0, 0.0};
  std::optional<double> fidelity;              // full, trace-normalized
  std::optional<double> conditional_fidelity;  // on the renormalized one-photon block
};

QubitMetrics qubit_metrics(const DensityMatrix& rho_B, std::optional<InputQubit> input = std::nullopt);

}  // namespace cvqwc
