#include "cvqwc/bandwidth.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <sstream>

#include "cvqwc/parallel.hpp"

namespace cvqwc {

namespace {

double interpolate(const std::vector<std::pair<double, double>>& table, double x) {
  if (table.empty() || x < table.front().first || x > table.back().first) return 0.0;
  auto hi = std::lower_bound(table.begin(), table.end(), x,
                             [](const auto& p, double v) { return p.first < v; });
  if (hi == table.begin()) return hi->second;
  auto lo = hi - 1;
  const double t = (x - lo->first) / (hi->first - lo->first);
  return lo->second + t * (hi->second - lo->second);
}

void check_table(const std::vector<std::pair<double, double>>& table, const char* what) {
  if (table.size() < 2) throw FockError(std::string(what) + " table needs at least two points");
  for (std::size_t i = 0; i < table.size(); ++i) {
    if (!std::isfinite(table[i].first) || !std::isfinite(table[i].second) || table[i].second < 0.0) {
      throw FockError(std::string(what) + " table values must be finite and >= 0");
    }
    if (i > 0 && !(table[i].first > table[i - 1].first)) {
      throw FockError(std::string(what) + " table frequencies must be strictly increasing");
    }
  }
}

}  // namespace

void SqueezingSpectrum::validate() const {
  switch (shape) {
    case SpectrumShape::lorentzian:
      if (!(gamma > 0.0) || !std::isfinite(gamma)) throw FockError("squeezing gamma must be > 0");
      [[fallthrough]];
    case SpectrumShape::flat:
      if (!(r0 >= 0.0) || !std::isfinite(r0)) throw FockError("squeezing r0 must be >= 0");
      return;
    case SpectrumShape::table: check_table(table, "squeezing"); return;
    case SpectrumShape::gaussian: break;
  }
  throw FockError("squeezing spectrum must be lorentzian, flat or table");
}

double SqueezingSpectrum::r(double omega) const {
  switch (shape) {
    case SpectrumShape::lorentzian: {
      const double u = omega / gamma;
      return r0 / (1.0 + u * u);
    }
    case SpectrumShape::flat: return r0;
    case SpectrumShape::table: return interpolate(table, omega);
    case SpectrumShape::gaussian: break;
  }
  throw FockError("squeezing spectrum must be lorentzian, flat or table");
}

void QubitSpectrum::validate() const {
  switch (shape) {
    case SpectrumShape::gaussian:
      if (!(sigma > 0.0) || !std::isfinite(sigma) || !std::isfinite(center_offset)) {
        throw FockError("qubit spectrum needs sigma > 0 and a finite center");
      }
      return;
    case SpectrumShape::table: check_table(table, "qubit spectrum"); return;
    default: break;
  }
  throw FockError("qubit spectrum must be gaussian or table");
}

double QubitSpectrum::density(double omega) const {
  if (shape == SpectrumShape::table) return interpolate(table, omega);
  const double u = (omega - center_offset) / sigma;
  return std::exp(-0.5 * u * u) / (sigma * std::sqrt(2.0 * std::numbers::pi));
}

void FrequencyMap::validate() const {
  if (n_bins < 1 || n_bins % 2 == 0) throw FockError("n_bins must be odd so the bins are symmetric");
  if (!(bin_width > 0.0) || !std::isfinite(bin_width)) throw FockError("bin_width must be > 0");
}

double FrequencyMap::offset(int bin) const {
  if (bin < -max_bin() || bin > max_bin()) {
    throw FockError("bin " + std::to_string(bin) + " outside [-" + std::to_string(max_bin()) + ", " +
                    std::to_string(max_bin()) + "]");
  }
  return bin * bin_width;
}

FrequencyPairing frequency_pairing(const FrequencyMap& map, int bin) {
  map.validate();
  const double w = map.offset(bin);
  return {map.omega_A + w, map.omega_A - w, map.omega_B + w, -bin};
}

double heisenberg_variance_ratio(double r, int cutoff) {
  if (!(r >= 0.0) || !std::isfinite(r)) throw FockError("r must be finite and >= 0");
  const ModeLabel a{Arm::A, Polarization::H, {}};
  const ModeLabel b{Arm::B, Polarization::H, {}};
  const FockState psi = apply_two_mode_squeeze(make_vacuum({a, b}, cutoff), a, b, r, 0.0);
  // One extra level so the quadratures act exactly on the truncated state.
  const int d = cutoff + 2;
  Eigen::MatrixXcd m = Eigen::MatrixXcd::Zero(d, d);  // m(nA, nB)
  const int n = cutoff + 1;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) m(i, j) = psi.amplitudes()[static_cast<std::size_t>(i * n + j)];
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(d, d);
  for (int k = 1; k < d; ++k) x(k - 1, k) = x(k, k - 1) = std::sqrt(k / 2.0);
  const Eigen::MatrixXcd y = m * x - x * m;  // (x_B - x_A) psi, x symmetric
  const double norm = m.squaredNorm();
  const double mean = (m.conjugate().cwiseProduct(y)).sum().real() / norm;
  return y.squaredNorm() / norm - mean * mean;
}

double heisenberg_variance_check(double r, int cutoff) {
  const double leak = std::pow(std::tanh(r), 2.0 * (cutoff + 1));
  if (!(leak < 1e-9)) {
    std::ostringstream os;
    os << "TMSV leakage " << leak << " at cutoff " << cutoff << " for r = " << r << " is not below 1e-9";
    throw NumericalGuardError("truncation", os.str());
  }
  return heisenberg_variance_ratio(r, cutoff);
}

BandwidthResult effective_fidelity(const QubitSpectrum& qspec, const SqueezingSpectrum& sspec,
                                   const GainRule& gain, const InputQubit& input, const BetaGrid& grid,
                                   const FrequencyMap& map, const TeleportOptions& opts) {
  qspec.validate();
  sspec.validate();
  map.validate();
  input.validate();

  BandwidthResult res;
  for (int k = -map.max_bin(); k <= map.max_bin(); ++k) {
    BinResult b;
    b.bin = k;
    b.omega = map.offset(k);
    b.weight = qspec.density(b.omega) * map.bin_width;
    b.r = sspec.r(b.omega);
    res.captured_weight += b.weight;
    res.bins.push_back(b);
  }
  if (!(std::abs(1.0 - res.captured_weight) <= 1e-3)) {
    std::ostringstream os;
    os << "qubit spectrum mass on the bins is " << res.captured_weight
       << "; more than 1e-3 lies outside the bin range";
    throw FockError(os.str());
  }
  for (auto& b : res.bins) b.weight /= res.captured_weight;

  // one teleport run per distinct squeezing value
  std::map<double, std::size_t> slot;
  std::vector<double> rs;
  for (const auto& b : res.bins) {
    if (slot.emplace(b.r, rs.size()).second) rs.push_back(b.r);
  }
  std::vector<TeleportResult> runs(rs.size());
  TeleportOptions inner = opts;
  inner.threads = 1;
  parallel_for(rs.size(), opts.threads, [&](std::size_t i) {
    SourceParams p;
    p.r = rs[i];
    runs[i] = teleport_average(input, p, gain, grid, inner);
  });
  for (auto& b : res.bins) {
    const auto& run = runs[slot.at(b.r)];
    const QubitMetrics m = qubit_metrics(run.normalized(), input);
    b.fidelity = *m.fidelity;
    b.one_photon_weight = m.one_photon_weight;
    b.grid_mass = run.grid_mass;
    b.truncation_leakage = run.truncation_leakage();
    res.effective_fidelity += b.weight * b.fidelity;
    res.one_photon_weight += b.weight * b.one_photon_weight;
  }
  return res;
}

}  // namespace cvqwc
