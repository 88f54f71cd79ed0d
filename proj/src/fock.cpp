#include "cvqwc/fock.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace cvqwc {

namespace {

constexpr std::size_t kMaxAmplitudes = std::size_t{1} << 28;

std::size_t checked_power(std::size_t base, std::size_t exp) {
  std::size_t out = 1;
  for (std::size_t i = 0; i < exp; ++i) {
    if (out > kMaxAmplitudes / base) {
      throw FockError("state dimension exceeds the supported size");
    }
    out *= base;
  }
  return out;
}

void check_unique(const std::vector<ModeLabel>& modes) {
  for (std::size_t i = 0; i < modes.size(); ++i) {
    for (std::size_t j = i + 1; j < modes.size(); ++j) {
      if (modes[i] == modes[j]) {
        throw FockError("duplicate mode label " + modes[i].to_string());
      }
    }
  }
}

std::size_t find_mode(const std::vector<ModeLabel>& modes, const ModeLabel& m) {
  auto it = std::find(modes.begin(), modes.end(), m);
  if (it == modes.end()) {
    throw FockError("unknown mode " + m.to_string());
  }
  return static_cast<std::size_t>(it - modes.begin());
}

// Flat offsets of every combination of the digits not listed in `excluded`,
// enumerated row-major over the remaining modes.
std::vector<std::size_t> base_offsets(std::size_t nmodes, std::size_t d,
                                      const std::vector<std::size_t>& excluded) {
  std::vector<std::size_t> strides(nmodes);
  std::size_t s = 1;
  for (std::size_t k = nmodes; k-- > 0;) {
    strides[k] = s;
    s *= d;
  }
  std::vector<std::size_t> rest;
  for (std::size_t k = 0; k < nmodes; ++k) {
    if (std::find(excluded.begin(), excluded.end(), k) == excluded.end()) rest.push_back(k);
  }
  std::vector<std::size_t> out(checked_power(d, rest.size()));
  std::vector<std::size_t> digit(rest.size(), 0);
  for (std::size_t idx = 0; idx < out.size(); ++idx) {
    std::size_t off = 0;
    for (std::size_t r = 0; r < rest.size(); ++r) off += digit[r] * strides[rest[r]];
    out[idx] = off;
    for (std::size_t r = rest.size(); r-- > 0;) {
      if (++digit[r] < d) break;
      digit[r] = 0;
    }
  }
  return out;
}

double log_factorial(int n) { return std::lgamma(static_cast<double>(n) + 1.0); }

double log_binomial(int n, int k) {
  return log_factorial(n) - log_factorial(k) - log_factorial(n - k);
}

// x^k with 0^0 = 1.
double power_or_zero(double x, int k) { return k == 0 ? 1.0 : std::pow(x, k); }

void book_norm_change(FockState& psi, double before) {
  psi.add_leakage(std::max(0.0, before - psi.norm_squared()));
}

}  // namespace

std::string to_string(Arm arm) {
  switch (arm) {
    case Arm::in: return "in";
    case Arm::A: return "A";
    case Arm::B: return "B";
    case Arm::out: return "out";
    case Arm::anc: return "anc";
    case Arm::minus: return "minus";
    case Arm::plus: return "plus";
  }
  return "?";
}

std::string to_string(Polarization pol) {
  switch (pol) {
    case Polarization::H: return "H";
    case Polarization::V: return "V";
    case Polarization::sigma_plus: return "s+";
    case Polarization::sigma_minus: return "s-";
  }
  return "?";
}

std::string ModeLabel::to_string() const {
  std::string s = "(" + cvqwc::to_string(arm) + "," + cvqwc::to_string(pol);
  if (freq_bin) s += "," + std::to_string(*freq_bin);
  return s + ")";
}

// -- FockState ------------------------------------------------------------------

FockState::FockState(std::vector<ModeLabel> modes, int cutoff)
    : modes_(std::move(modes)), cutoff_(cutoff) {
  if (cutoff_ < 0) throw FockError("cutoff must be non-negative");
  check_unique(modes_);
  amps_.assign(checked_power(local_dim(), modes_.size()), cplx{0.0, 0.0});
}

cplx& FockState::at(std::span<const int> occupation) {
  if (occupation.size() != modes_.size()) throw FockError("occupation rank mismatch");
  std::size_t idx = 0;
  for (int n : occupation) {
    if (n < 0 || n > cutoff_) throw FockError("occupation outside cutoff");
    idx = idx * local_dim() + static_cast<std::size_t>(n);
  }
  return amps_[idx];
}

cplx FockState::at(std::span<const int> occupation) const {
  return const_cast<FockState*>(this)->at(occupation);
}

void FockState::add_leakage(double amount) {
  if (amount < 0.0) throw FockError("leakage increments must be non-negative");
  leakage_ += amount;
}

double FockState::norm_squared() const {
  double s = 0.0;
  for (const auto& a : amps_) s += std::norm(a);
  return s;
}

bool FockState::has_mode(const ModeLabel& m) const {
  return std::find(modes_.begin(), modes_.end(), m) != modes_.end();
}

std::size_t FockState::index_of(const ModeLabel& m) const { return find_mode(modes_, m); }

std::size_t FockState::stride(std::size_t k) const {
  std::size_t s = 1;
  for (std::size_t j = k + 1; j < modes_.size(); ++j) s *= local_dim();
  return s;
}

std::size_t DensityMatrix::index_of(const ModeLabel& m) const { return find_mode(modes, m); }

// -- construction -------------------------------------------------------------

FockState make_vacuum(std::vector<ModeLabel> modes, int cutoff) {
  if (modes.empty()) throw FockError("vacuum needs at least one mode");
  if (cutoff < 1) throw FockError("cutoff must be >= 1");
  FockState psi(std::move(modes), cutoff);
  psi.amplitudes()[0] = 1.0;
  return psi;
}

DensityMatrix to_density(const FockState& psi) {
  Eigen::Map<const Eigen::VectorXcd> v(psi.amplitudes().data(),
                                       static_cast<Eigen::Index>(psi.size()));
  return DensityMatrix{psi.modes(), psi.cutoff(), v * v.adjoint(), psi.leakage()};
}

FockState with_cutoff(const FockState& psi, int cutoff) {
  FockState out(psi.modes(), cutoff);
  out.add_leakage(psi.leakage());
  const std::size_t n = psi.num_modes();
  const std::size_t d_old = psi.local_dim();
  const std::size_t d_new = out.local_dim();
  auto src = psi.amplitudes();
  auto dst = out.amplitudes();
  double dropped = 0.0;
  std::vector<std::size_t> digit(n, 0);
  for (std::size_t i = 0; i < src.size(); ++i) {
    bool fits = true;
    std::size_t j = 0;
    for (std::size_t k = 0; k < n; ++k) {
      if (digit[k] >= d_new) fits = false;
      j = j * d_new + digit[k];
    }
    if (fits) {
      dst[j] = src[i];
    } else {
      dropped += std::norm(src[i]);
    }
    for (std::size_t k = n; k-- > 0;) {
      if (++digit[k] < d_old) break;
      digit[k] = 0;
    }
  }
  out.add_leakage(dropped);
  return out;
}

DensityMatrix with_cutoff(const DensityMatrix& rho, int cutoff) {
  if (cutoff < 0) throw FockError("cutoff must be non-negative");
  const std::size_t n = rho.modes.size();
  const std::size_t d_old = rho.local_dim();
  const std::size_t d_new = static_cast<std::size_t>(cutoff) + 1;
  const std::size_t dim_new = checked_power(d_new, n);
  // map[i_old] = i_new or npos
  constexpr auto npos = std::numeric_limits<std::size_t>::max();
  std::vector<std::size_t> map(static_cast<std::size_t>(rho.matrix.rows()), npos);
  std::vector<std::size_t> digit(n, 0);
  for (std::size_t i = 0; i < map.size(); ++i) {
    bool fits = true;
    std::size_t j = 0;
    for (std::size_t k = 0; k < n; ++k) {
      if (digit[k] >= d_new) fits = false;
      j = j * d_new + digit[k];
    }
    if (fits) map[i] = j;
    for (std::size_t k = n; k-- > 0;) {
      if (++digit[k] < d_old) break;
      digit[k] = 0;
    }
  }
  DensityMatrix out{rho.modes, cutoff,
                    Eigen::MatrixXcd::Zero(static_cast<Eigen::Index>(dim_new),
                                           static_cast<Eigen::Index>(dim_new)),
                    rho.trace_deficit};
  const double before = rho.trace();
  for (std::size_t i = 0; i < map.size(); ++i) {
    if (map[i] == npos) continue;
    for (std::size_t j = 0; j < map.size(); ++j) {
      if (map[j] == npos) continue;
      out.matrix(static_cast<Eigen::Index>(map[i]), static_cast<Eigen::Index>(map[j])) =
          rho.matrix(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    }
  }
  out.trace_deficit += std::max(0.0, before - out.trace());
  return out;
}

FockState tensor_product(const FockState& a, const FockState& b) {
  const int cutoff = std::max(a.cutoff(), b.cutoff());
  const FockState ea = a.cutoff() == cutoff ? a : with_cutoff(a, cutoff);
  const FockState eb = b.cutoff() == cutoff ? b : with_cutoff(b, cutoff);
  std::vector<ModeLabel> modes = ea.modes();
  modes.insert(modes.end(), eb.modes().begin(), eb.modes().end());
  FockState out(std::move(modes), cutoff);
  auto dst = out.amplitudes();
  auto sa = ea.amplitudes();
  auto sb = eb.amplitudes();
  for (std::size_t i = 0; i < sa.size(); ++i) {
    if (sa[i] == cplx{}) continue;
    for (std::size_t j = 0; j < sb.size(); ++j) dst[i * sb.size() + j] = sa[i] * sb[j];
  }
  out.add_leakage(ea.leakage() + eb.leakage());
  return out;
}

FockState relabel(FockState psi, const ModeLabel& from, const ModeLabel& to) {
  auto modes = psi.modes();
  const std::size_t k = find_mode(modes, from);
  modes[k] = to;
  check_unique(modes);
  FockState out(std::move(modes), psi.cutoff());
  std::copy(psi.amplitudes().begin(), psi.amplitudes().end(), out.amplitudes().begin());
  out.add_leakage(psi.leakage());
  return out;
}

DensityMatrix relabel(DensityMatrix rho, const ModeLabel& from, const ModeLabel& to) {
  const std::size_t k = find_mode(rho.modes, from);
  rho.modes[k] = to;
  check_unique(rho.modes);
  return rho;
}

FockState reorder_modes(const FockState& psi, const std::vector<ModeLabel>& order) {
  if (order.size() != psi.num_modes()) throw FockError("reorder: mode count mismatch");
  std::vector<std::size_t> old_pos(order.size());
  for (std::size_t k = 0; k < order.size(); ++k) old_pos[k] = psi.index_of(order[k]);
  FockState out(order, psi.cutoff());
  out.add_leakage(psi.leakage());
  const std::size_t n = order.size();
  const std::size_t d = psi.local_dim();
  std::vector<std::size_t> old_stride(n);
  for (std::size_t k = 0; k < n; ++k) old_stride[k] = psi.stride(old_pos[k]);
  std::vector<std::size_t> digit(n, 0);
  auto dst = out.amplitudes();
  auto src = psi.amplitudes();
  for (std::size_t i = 0; i < dst.size(); ++i) {
    std::size_t j = 0;
    for (std::size_t k = 0; k < n; ++k) j += digit[k] * old_stride[k];
    dst[i] = src[j];
    for (std::size_t k = n; k-- > 0;) {
      if (++digit[k] < d) break;
      digit[k] = 0;
    }
  }
  return out;
}

// -- single-mode matrices -----------------------------------------------------

Eigen::MatrixXcd displacement_matrix(cplx alpha, int rows, int cols) {
  if (rows < 1 || cols < 1) throw FockError("displacement matrix needs positive shape");
  // <m|D|n> = (sqrt(m) <m-1|D|n-1> - alpha^* <m|D|n-1>) / sqrt(n), from D a^dag = (a^dag - alpha^*) D.
  Eigen::MatrixXcd out(rows, cols);
  out(0, 0) = std::exp(-0.5 * std::norm(alpha));
  for (int m = 1; m < rows; ++m) out(m, 0) = alpha / std::sqrt(static_cast<double>(m)) * out(m - 1, 0);
  const cplx minus_conj = -std::conj(alpha);
  for (int n = 1; n < cols; ++n) {
    const double inv_sqrt_n = 1.0 / std::sqrt(static_cast<double>(n));
    out(0, n) = minus_conj * inv_sqrt_n * out(0, n - 1);
    for (int m = 1; m < rows; ++m) {
      out(m, n) = (minus_conj * out(m, n - 1) + std::sqrt(static_cast<double>(m)) * out(m - 1, n - 1)) *
                  inv_sqrt_n;
    }
  }
  return out;
}

std::vector<Eigen::MatrixXcd> loss_kraus_operators(double eta, int cutoff) {
  if (!(eta >= 0.0 && eta <= 1.0)) throw FockError("loss transmittance eta must lie in [0, 1]");
  const int d = cutoff + 1;
  std::vector<Eigen::MatrixXcd> ops;
  for (int l = 0; l < d; ++l) {
    Eigen::MatrixXcd k = Eigen::MatrixXcd::Zero(d, d);
    for (int n = l; n < d; ++n) {
      const double p = std::exp(log_binomial(n, l)) * power_or_zero(eta, n - l) * power_or_zero(1.0 - eta, l);
      k(n - l, n) = std::sqrt(p);
    }
    if (k.squaredNorm() > 0.0) ops.push_back(std::move(k));
  }
  return ops;
}

std::vector<double> hermite_functions(double x, int cutoff) {
  std::vector<double> psi(static_cast<std::size_t>(cutoff) + 1);
  psi[0] = std::pow(std::numbers::pi, -0.25) * std::exp(-0.5 * x * x);
  if (cutoff >= 1) psi[1] = std::sqrt(2.0) * x * psi[0];
  for (int n = 1; n < cutoff; ++n) {
    psi[static_cast<std::size_t>(n) + 1] =
        std::sqrt(2.0 / (n + 1.0)) * x * psi[static_cast<std::size_t>(n)] -
        std::sqrt(static_cast<double>(n) / (n + 1.0)) * psi[static_cast<std::size_t>(n) - 1];
  }
  return psi;
}

// -- unitaries ------------------------------------------------------------------

FockState apply_single_mode(FockState psi, const ModeLabel& mode, const Eigen::MatrixXcd& op) {
  const std::size_t k = psi.index_of(mode);
  const auto d = static_cast<Eigen::Index>(psi.local_dim());
  if (op.rows() != d || op.cols() != d) throw FockError("single-mode operator has wrong shape");
  const double before = psi.norm_squared();
  const std::size_t st = psi.stride(k);
  auto amps = psi.amplitudes();
  Eigen::VectorXcd buf(d), res(d);
  for (std::size_t base : base_offsets(psi.num_modes(), psi.local_dim(), {k})) {
    for (Eigen::Index n = 0; n < d; ++n) buf(n) = amps[base + static_cast<std::size_t>(n) * st];
    res.noalias() = op * buf;
    for (Eigen::Index n = 0; n < d; ++n) amps[base + static_cast<std::size_t>(n) * st] = res(n);
  }
  book_norm_change(psi, before);
  return psi;
}

FockState apply_displacement(FockState psi, const ModeLabel& mode, cplx alpha) {
  psi.index_of(mode);
  if (alpha == cplx{}) return psi;
  const Eigen::MatrixXcd op = displacement_matrix(alpha, psi.cutoff());
  return apply_single_mode(std::move(psi), mode, op);
}

FockState apply_two_mode_squeeze(FockState psi, const ModeLabel& mode_a, const ModeLabel& mode_b,
                                 double r, double theta) {
  if (mode_a == mode_b) throw FockError("two-mode squeezing needs distinct modes");
  const std::size_t ka = psi.index_of(mode_a);
  const std::size_t kb = psi.index_of(mode_b);
  if (r < 0.0) throw FockError("squeezing parameter r must be >= 0");
  if (r == 0.0) return psi;
  const double before = psi.norm_squared();
  const int n_max = psi.cutoff();
  const int d = n_max + 1;
  const cplx t = std::polar(std::tanh(r), theta);
  const double log_cosh = std::log(std::cosh(r));
  const std::size_t sa = psi.stride(ka);
  const std::size_t sb = psi.stride(kb);
  auto amps = psi.amplitudes();

  // shift_coef(a, b, k) = t^k / k! * sqrt((a+k)!/a! (b+k)!/b!)
  auto shift_mag = [](int a, int b, int k) {
    return std::exp(0.5 * (log_factorial(a + k) - log_factorial(a) + log_factorial(b + k) -
                           log_factorial(b)) -
                    log_factorial(k));
  };
  std::vector<cplx> t_pow(static_cast<std::size_t>(d)), mt_pow(static_cast<std::size_t>(d));
  t_pow[0] = mt_pow[0] = 1.0;
  for (int k = 1; k < d; ++k) {
    t_pow[static_cast<std::size_t>(k)] = t_pow[static_cast<std::size_t>(k) - 1] * t;
    mt_pow[static_cast<std::size_t>(k)] = mt_pow[static_cast<std::size_t>(k) - 1] * (-std::conj(t));
  }

  std::vector<cplx> block(static_cast<std::size_t>(d * d)), tmp(static_cast<std::size_t>(d * d));
  auto cell = [d](std::vector<cplx>& v, int a, int b) -> cplx& {
    return v[static_cast<std::size_t>(a * d + b)];
  };
  for (std::size_t base : base_offsets(psi.num_modes(), psi.local_dim(), {ka, kb})) {
    for (int a = 0; a < d; ++a)
      for (int b = 0; b < d; ++b)
        cell(block, a, b) = amps[base + static_cast<std::size_t>(a) * sa + static_cast<std::size_t>(b) * sb];
    // exp(-t^* a b): lowering, stays inside the truncated space.
    for (int a = 0; a < d; ++a) {
      for (int b = 0; b < d; ++b) {
        cplx acc = 0.0;
        for (int k = 0; a + k < d && b + k < d; ++k) {
          acc += mt_pow[static_cast<std::size_t>(k)] * shift_mag(a, b, k) * cell(block, a + k, b + k);
        }
        // cosh(r)^{-(a+b+1)}
        cell(tmp, a, b) = acc * std::exp(-(a + b + 1) * log_cosh);
      }
    }
    // exp(t a^dag b^dag), projected on the cutoff.
    for (int a = 0; a < d; ++a) {
      for (int b = 0; b < d; ++b) {
        cplx acc = 0.0;
        for (int k = 0; k <= std::min(a, b); ++k) {
          acc += t_pow[static_cast<std::size_t>(k)] * shift_mag(a - k, b - k, k) * cell(tmp, a - k, b - k);
        }
        amps[base + static_cast<std::size_t>(a) * sa + static_cast<std::size_t>(b) * sb] = acc;
      }
    }
  }
  book_norm_change(psi, before);
  return psi;
}

FockState apply_beam_splitter(FockState psi, const ModeLabel& mode_a, const ModeLabel& mode_b,
                              double transmittance, double phase) {
  if (!(transmittance >= 0.0 && transmittance <= 1.0)) {
    throw FockError("beam-splitter transmittance must lie in [0, 1]");
  }
  if (mode_a == mode_b) throw FockError("beam splitter needs distinct modes");
  const std::size_t ka = psi.index_of(mode_a);
  const std::size_t kb = psi.index_of(mode_b);
  if (transmittance == 1.0) return psi;
  const double before = psi.norm_squared();
  const int n_max = psi.cutoff();
  const int d = n_max + 1;
  const double c = std::sqrt(transmittance);
  const double s = std::sqrt(1.0 - transmittance);

  // U |na, nb> = (c a^dag - s e^{-i phase} b^dag)^na (c b^dag + s e^{i phase} a^dag)^nb |0> / sqrt(na! nb!)
  // coef[T][na][j]: amplitude on |j, T-j> from |na, T-na>.
  std::vector<std::vector<cplx>> coef(static_cast<std::size_t>(2 * n_max + 1));
  for (int total = 0; total <= 2 * n_max; ++total) {
    auto& table = coef[static_cast<std::size_t>(total)];
    table.assign(static_cast<std::size_t>((total + 1) * (total + 1)), cplx{});
    for (int na = std::max(0, total - n_max); na <= std::min(total, n_max); ++na) {
      const int nb = total - na;
      for (int k = 0; k <= na; ++k) {
        for (int l = 0; l <= nb; ++l) {
          const int j = k + l;
          const int ce = k + nb - l;
          const int se = na - k + l;
          const double cs = power_or_zero(c, ce) * power_or_zero(s, se);
          if (cs == 0.0) continue;
          const double mag =
              std::exp(0.5 * (log_factorial(j) + log_factorial(total - j) - log_factorial(na) -
                              log_factorial(nb)) +
                       log_binomial(na, k) + log_binomial(nb, l)) *
              cs;
          const double sign = ((na - k) % 2 == 0) ? 1.0 : -1.0;
          table[static_cast<std::size_t>(na * (total + 1) + j)] +=
              sign * mag * std::polar(1.0, phase * (l - (na - k)));
        }
      }
    }
  }

  const std::size_t sa = psi.stride(ka);
  const std::size_t sb = psi.stride(kb);
  auto amps = psi.amplitudes();
  std::vector<cplx> in(static_cast<std::size_t>(d * d)), out(static_cast<std::size_t>(d * d));
  for (std::size_t base : base_offsets(psi.num_modes(), psi.local_dim(), {ka, kb})) {
    for (int a = 0; a < d; ++a)
      for (int b = 0; b < d; ++b)
        in[static_cast<std::size_t>(a * d + b)] =
            amps[base + static_cast<std::size_t>(a) * sa + static_cast<std::size_t>(b) * sb];
    std::fill(out.begin(), out.end(), cplx{});
    for (int a = 0; a < d; ++a) {
      for (int b = 0; b < d; ++b) {
        const cplx amp = in[static_cast<std::size_t>(a * d + b)];
        if (amp == cplx{}) continue;
        const int total = a + b;
        const auto& table = coef[static_cast<std::size_t>(total)];
        for (int j = std::max(0, total - n_max); j <= std::min(total, n_max); ++j) {
          out[static_cast<std::size_t>(j * d + (total - j))] +=
              table[static_cast<std::size_t>(a * (total + 1) + j)] * amp;
        }
      }
    }
    for (int a = 0; a < d; ++a)
      for (int b = 0; b < d; ++b)
        amps[base + static_cast<std::size_t>(a) * sa + static_cast<std::size_t>(b) * sb] =
            out[static_cast<std::size_t>(a * d + b)];
  }
  book_norm_change(psi, before);
  return psi;
}

FockState apply_phase_rotation(FockState psi, const ModeLabel& mode, double phi) {
  const std::size_t k = psi.index_of(mode);
  const std::size_t st = psi.stride(k);
  const std::size_t d = psi.local_dim();
  std::vector<cplx> phases(d);
  for (std::size_t n = 0; n < d; ++n) phases[n] = std::polar(1.0, -static_cast<double>(n) * phi);
  auto amps = psi.amplitudes();
  for (std::size_t i = 0; i < amps.size(); ++i) amps[i] *= phases[(i / st) % d];
  return psi;
}

// -- reductions ---------------------------------------------------------------

namespace {

struct Split {
  std::vector<std::size_t> keep_index;  // flat -> kept multi-index (in keep order)
  std::vector<std::size_t> rest_index;  // flat -> rest multi-index
  std::size_t keep_dim = 1;
  std::size_t rest_dim = 1;
};

Split split_indices(const std::vector<ModeLabel>& modes, std::size_t d,
                    const std::vector<ModeLabel>& keep) {
  if (keep.empty()) throw FockError("partial trace needs at least one kept mode");
  check_unique(keep);
  std::vector<std::size_t> keep_pos;
  for (const auto& m : keep) keep_pos.push_back(find_mode(modes, m));
  const std::size_t n = modes.size();
  Split sp;
  sp.keep_dim = checked_power(d, keep_pos.size());
  sp.rest_dim = checked_power(d, n - keep_pos.size());
  const std::size_t total = sp.keep_dim * sp.rest_dim;
  sp.keep_index.resize(total);
  sp.rest_index.resize(total);
  std::vector<std::size_t> digit(n, 0);
  for (std::size_t i = 0; i < total; ++i) {
    std::size_t ki = 0;
    for (std::size_t p : keep_pos) ki = ki * d + digit[p];
    std::size_t ri = 0;
    for (std::size_t k = 0; k < n; ++k) {
      if (std::find(keep_pos.begin(), keep_pos.end(), k) == keep_pos.end()) ri = ri * d + digit[k];
    }
    sp.keep_index[i] = ki;
    sp.rest_index[i] = ri;
    for (std::size_t k = n; k-- > 0;) {
      if (++digit[k] < d) break;
      digit[k] = 0;
    }
  }
  return sp;
}

}  // namespace

DensityMatrix partial_trace(const FockState& psi, const std::vector<ModeLabel>& keep) {
  const Split sp = split_indices(psi.modes(), psi.local_dim(), keep);
  Eigen::MatrixXcd m = Eigen::MatrixXcd::Zero(static_cast<Eigen::Index>(sp.keep_dim),
                                              static_cast<Eigen::Index>(sp.rest_dim));
  auto amps = psi.amplitudes();
  for (std::size_t i = 0; i < amps.size(); ++i) {
    m(static_cast<Eigen::Index>(sp.keep_index[i]), static_cast<Eigen::Index>(sp.rest_index[i])) = amps[i];
  }
  return DensityMatrix{keep, psi.cutoff(), m * m.adjoint(), psi.leakage()};
}

DensityMatrix partial_trace(const DensityMatrix& rho, const std::vector<ModeLabel>& keep) {
  const Split sp = split_indices(rho.modes, rho.local_dim(), keep);
  // flat index of (keep, rest)
  std::vector<std::size_t> flat(sp.keep_dim * sp.rest_dim);
  for (std::size_t i = 0; i < flat.size(); ++i) flat[sp.keep_index[i] * sp.rest_dim + sp.rest_index[i]] = i;
  Eigen::MatrixXcd out = Eigen::MatrixXcd::Zero(static_cast<Eigen::Index>(sp.keep_dim),
                                                static_cast<Eigen::Index>(sp.keep_dim));
  for (std::size_t k1 = 0; k1 < sp.keep_dim; ++k1) {
    for (std::size_t k2 = 0; k2 < sp.keep_dim; ++k2) {
      cplx acc = 0.0;
      for (std::size_t r = 0; r < sp.rest_dim; ++r) {
        acc += rho.matrix(static_cast<Eigen::Index>(flat[k1 * sp.rest_dim + r]),
                          static_cast<Eigen::Index>(flat[k2 * sp.rest_dim + r]));
      }
      out(static_cast<Eigen::Index>(k1), static_cast<Eigen::Index>(k2)) = acc;
    }
  }
  return DensityMatrix{keep, rho.cutoff, std::move(out), rho.trace_deficit};
}

double fidelity(const DensityMatrix& rho, const FockState& psi) {
  if (rho.modes != psi.modes() || rho.cutoff != psi.cutoff()) {
    throw FockError("fidelity: mode list or cutoff mismatch");
  }
  Eigen::Map<const Eigen::VectorXcd> v(psi.amplitudes().data(), static_cast<Eigen::Index>(psi.size()));
  const double tr = rho.trace();
  const double nn = v.squaredNorm();
  if (tr <= 0.0 || nn <= 0.0) throw FockError("fidelity of a zero state is undefined");
  const double f = (v.adjoint() * rho.matrix * v)(0, 0).real() / (tr * nn);
  return std::clamp(f, 0.0, 1.0);
}

cplx inner_product(const FockState& a, const FockState& b) {
  if (a.modes() != b.modes() || a.cutoff() != b.cutoff()) {
    throw FockError("inner product: mode list or cutoff mismatch");
  }
  cplx acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += std::conj(a.amplitudes()[i]) * b.amplitudes()[i];
  return acc;
}

FockState contract_mode(const FockState& psi, const ModeLabel& mode, std::span<const cplx> v) {
  const std::size_t k = psi.index_of(mode);
  if (v.size() != psi.local_dim()) throw FockError("contraction vector has wrong length");
  std::vector<ModeLabel> rest = psi.modes();
  rest.erase(rest.begin() + static_cast<std::ptrdiff_t>(k));
  FockState out(std::move(rest), psi.cutoff());
  const std::size_t st = psi.stride(k);
  auto src = psi.amplitudes();
  auto dst = out.amplitudes();
  const auto bases = base_offsets(psi.num_modes(), psi.local_dim(), {k});
  for (std::size_t r = 0; r < bases.size(); ++r) {
    cplx acc = 0.0;
    for (std::size_t n = 0; n < v.size(); ++n) acc += v[n] * src[bases[r] + n * st];
    dst[r] = acc;
  }
  out.add_leakage(psi.leakage());
  return out;
}

FockState contract_pair(const FockState& psi, const ModeLabel& mode_a, const ModeLabel& mode_b,
                        const Eigen::MatrixXcd& e) {
  if (mode_a == mode_b) throw FockError("pair contraction needs distinct modes");
  const std::size_t ka = psi.index_of(mode_a);
  const std::size_t kb = psi.index_of(mode_b);
  const auto d = static_cast<Eigen::Index>(psi.local_dim());
  if (e.rows() != d || e.cols() != d) throw FockError("pair contraction matrix has wrong shape");
  std::vector<ModeLabel> rest;
  for (std::size_t k = 0; k < psi.num_modes(); ++k) {
    if (k != ka && k != kb) rest.push_back(psi.modes()[k]);
  }
  FockState out(std::move(rest), psi.cutoff());
  const std::size_t sa = psi.stride(ka);
  const std::size_t sb = psi.stride(kb);
  auto src = psi.amplitudes();
  auto dst = out.amplitudes();
  const auto bases = base_offsets(psi.num_modes(), psi.local_dim(), {ka, kb});
  for (std::size_t r = 0; r < bases.size(); ++r) {
    cplx acc = 0.0;
    for (Eigen::Index j = 0; j < d; ++j) {
      const std::size_t off = bases[r] + static_cast<std::size_t>(j) * sa;
      for (Eigen::Index k = 0; k < d; ++k) acc += e(j, k) * src[off + static_cast<std::size_t>(k) * sb];
    }
    dst[r] = acc;
  }
  out.add_leakage(psi.leakage());
  return out;
}

double trace_distance(const Eigen::MatrixXcd& a, const Eigen::MatrixXcd& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw FockError("trace distance: shape mismatch");
  Eigen::MatrixXcd diff = a - b;
  diff = 0.5 * (diff + diff.adjoint()).eval();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(diff, Eigen::EigenvaluesOnly);
  return 0.5 * es.eigenvalues().cwiseAbs().sum();
}

}  // namespace cvqwc
