#pragma once

// Frequency-bin treatment of a finite-bandwidth qubit. Converting the input
// component at w_A + W needs squeezing between w_A - W on arm A and w_B + W on
// arm B, so each bin is an independent single-frequency teleporter whose
// squeezing is r(W). The qubit spectrum only weights the per-bin fidelities.

#include <utility>
#include <vector>

#include "cvqwc/teleport.hpp"

namespace cvqwc {

enum class SpectrumShape { lorentzian, flat, gaussian, table };

/// r(W). lorentzian: r0 / (1 + (W/gamma)^2); flat: r0; table: linear
/// interpolation of (W, r) pairs, 0 outside the table.
struct SqueezingSpectrum {
  double r0 = 0.0;
  double gamma = 1.0;
  SpectrumShape shape = SpectrumShape::lorentzian;
  std::vector<std::pair<double, double>> table;

  void validate() const;
  double r(double omega) const;
};

/// Spectral density |f(W)|^2. gaussian: normal density with mean center_offset
/// and standard deviation sigma; table: linear interpolation of (W, |f|^2).
struct QubitSpectrum {
  double center_offset = 0.0;
  double sigma = 1.0;
  SpectrumShape shape = SpectrumShape::gaussian;
  std::vector<std::pair<double, double>> table;

  void validate() const;
  double density(double omega) const;
};

/// Bins k = -(n_bins-1)/2 .. (n_bins-1)/2 at W_k = k * bin_width.
struct FrequencyMap {
  double omega_A = 0.0;  // metadata
  double omega_B = 0.0;  // metadata
  double bin_width = 1.0;
  int n_bins = 1;

  void validate() const;
  int max_bin() const { return (n_bins - 1) / 2; }
  double offset(int bin) const;
};

struct FrequencyPairing {
  double input = 0.0;      // w_A + W
  double partner_A = 0.0;  // w_A - W
  double output = 0.0;     // w_B + W
  int partner_bin = 0;
};

FrequencyPairing frequency_pairing(const FrequencyMap& map, int bin);

/// Var(x_B - x_A) on the TMSV of squeezing r divided by its vacuum value 1,
/// evaluated on the truncated state at `cutoff` (renormalized). No adequacy check.
double heisenberg_variance_ratio(double r, int cutoff);

/// Same, but throws NumericalGuardError("truncation") when the TMSV leakage at
/// `cutoff` is 1e-9 or more.
double heisenberg_variance_check(double r, int cutoff);

struct BinResult {
  int bin = 0;
  double omega = 0.0;
  double weight = 0.0;  // normalized spectral weight of the bin
  double r = 0.0;
  double fidelity = 0.0;
  double one_photon_weight = 0.0;  // of the trace-normalized output
  double grid_mass = 0.0;
  double truncation_leakage = 0.0;
};

struct BandwidthResult {
  double effective_fidelity = 0.0;
  double one_photon_weight = 0.0;  // spectrally weighted
  double captured_weight = 0.0;  // sum |f|^2 bin_width before renormalization
  std::vector<BinResult> bins;
};

BandwidthResult effective_fidelity(const QubitSpectrum& qspec, const SqueezingSpectrum& sspec,
                                   const GainRule& gain, const InputQubit& input, const BetaGrid& grid,
                                   const FrequencyMap& map, const TeleportOptions& opts = {});

}  // namespace cvqwc
