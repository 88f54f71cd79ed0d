#include "cvqwc/teleport.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "cvqwc/parallel.hpp"

namespace cvqwc {

namespace {

using std::numbers::pi;

const ModeLabel kInH{Arm::in, Polarization::H, {}};
const ModeLabel kInV{Arm::in, Polarization::V, {}};
const ModeLabel kAH{Arm::A, Polarization::H, {}};
const ModeLabel kAV{Arm::A, Polarization::V, {}};
const ModeLabel kBH{Arm::B, Polarization::H, {}};
const ModeLabel kBV{Arm::B, Polarization::V, {}};
const ModeLabel kMinusH{Arm::minus, Polarization::H, {}};
const ModeLabel kMinusV{Arm::minus, Polarization::V, {}};
const ModeLabel kPlusH{Arm::plus, Polarization::H, {}};
const ModeLabel kPlusV{Arm::plus, Polarization::V, {}};

Eigen::Index as_index(std::size_t i) { return static_cast<Eigen::Index>(i); }

// Projection of one polarization's (in, A) or (minus, plus) pair on outcome beta.
struct PairProjector {
  ModeLabel first;
  ModeLabel second;
  Eigen::MatrixXcd matrix;  // e(j, k), j on `first`, k on `second`
};

enum class Picture { pre_mixing, post_mixing };

Picture detect_picture(const FockState& joint) {
  if (joint.has_mode(kInH) && joint.has_mode(kInV) && joint.has_mode(kAH) && joint.has_mode(kAV)) {
    return Picture::pre_mixing;
  }
  if (joint.has_mode(kMinusH) && joint.has_mode(kMinusV) && joint.has_mode(kPlusH) &&
      joint.has_mode(kPlusV)) {
    return Picture::post_mixing;
  }
  throw FockError("joint state lacks the (in, A) or (minus, plus) arms for both polarizations");
}

Eigen::MatrixXcd projector_matrix(Picture picture, cplx beta, int cutoff) {
  const int d = cutoff + 1;
  if (picture == Picture::pre_mixing) {
    // <beta|j,k> = pi^{-1/2} <k|D(-beta)|j>
    return displacement_matrix(-beta, d, d).transpose() / std::sqrt(pi);
  }
  const auto hx = hermite_functions(beta.real(), cutoff);
  const auto hp = hermite_functions(beta.imag(), cutoff);
  Eigen::MatrixXcd e(d, d);
  cplx minus_i_pow = 1.0;
  std::vector<cplx> p_bra(static_cast<std::size_t>(d));
  for (int k = 0; k < d; ++k) {
    // <p|k> = (-i)^k psi_k(p)
    p_bra[static_cast<std::size_t>(k)] = minus_i_pow * hp[static_cast<std::size_t>(k)];
    minus_i_pow *= cplx{0.0, -1.0};
  }
  for (int j = 0; j < d; ++j)
    for (int k = 0; k < d; ++k) e(j, k) = hx[static_cast<std::size_t>(j)] * p_bra[static_cast<std::size_t>(k)];
  return e;
}

PairProjector make_projector(Picture picture, Polarization pol, cplx beta, int cutoff) {
  const bool h = pol == Polarization::H;
  if (picture == Picture::pre_mixing) {
    return {h ? kInH : kInV, h ? kAH : kAV, projector_matrix(picture, beta, cutoff)};
  }
  return {h ? kMinusH : kMinusV, h ? kPlusH : kPlusV, projector_matrix(picture, beta, cutoff)};
}

FockState project_outcome(const FockState& joint, BetaPair beta) {
  const Picture picture = detect_picture(joint);
  const auto ph = make_projector(picture, Polarization::H, beta.H, joint.cutoff());
  const auto pv = make_projector(picture, Polarization::V, beta.V, joint.cutoff());
  FockState rest = contract_pair(joint, ph.first, ph.second, ph.matrix);
  return contract_pair(rest, pv.first, pv.second, pv.matrix);
}

// ---- per-polarization analytic engine -------------------------------------------

struct PolarizationSetup {
  double q = 0.0;
  double phase = 0.0;
  double gain = 1.0;
  int source_cutoff = 0;
  int input_cutoff = 1;
  int output_cutoff = 0;
  std::vector<Eigen::MatrixXcd> kraus;  // B-arm loss on the source space; empty = lossless
};

// Columns: pre-displacement B vectors w_j = sqrt((1-q^2)/pi) sum_n q^n e^{i n phase} <n|D(-beta)|j> |n>.
Eigen::MatrixXcd pre_displacement(const PolarizationSetup& s, cplx beta) {
  Eigen::MatrixXcd w = displacement_matrix(-beta, s.source_cutoff + 1, s.input_cutoff + 1);
  const double c = std::sqrt((1.0 - s.q * s.q) / pi);
  cplx f = c;
  const cplx step = s.q * std::polar(1.0, s.phase);
  for (int n = 0; n <= s.source_cutoff; ++n) {
    w.row(n) *= f;
    f *= step;
  }
  return w;
}

// Conditional outputs, one (output_cutoff+1) x (input_cutoff+1) matrix per loss branch.
std::vector<Eigen::MatrixXcd> displaced_outputs(const PolarizationSetup& s, cplx beta,
                                                const Eigen::MatrixXcd& w) {
  // The feed-forward of each polarization is locked to its own pair, so the
  // displacement picks up the pair phase: D(g beta e^{i phase}) R(phase) = R(phase) D(g beta).
  const Eigen::MatrixXcd dout = displacement_matrix(s.gain * beta * std::polar(1.0, s.phase),
                                                    s.output_cutoff + 1, s.source_cutoff + 1);
  std::vector<Eigen::MatrixXcd> out;
  if (s.kraus.empty()) {
    out.push_back(dout * w);
    return out;
  }
  const double total = w.squaredNorm();
  for (const auto& k : s.kraus) {
    Eigen::MatrixXcd v = k * w;
    if (v.squaredNorm() <= 1e-18 * total) continue;
    out.push_back(dout * v);
  }
  return out;
}

// Quadrature over a 2D grid of sum_beta wt * vec(U) vec(U)^dag, with
// vec stacking the input-index columns, and the pre-displacement Gram matrix.
struct PolarizationChannel {
  int input_dim = 0;
  int output_dim = 0;
  Eigen::MatrixXcd blocks;  // ((j, a), (k, b)) = sum wt U(a, j) conj(U(b, k))
  Eigen::MatrixXcd gram;    // (k, j) = sum wt <w_k, w_j>
};

PolarizationChannel integrate_channel(const PolarizationSetup& s, const BetaGrid& grid,
                                      std::size_t threads) {
  const auto nodes = grid.nodes();
  const auto wts = grid.weights();
  const std::size_t p = nodes.size();
  const int in_dim = s.input_cutoff + 1;
  const int out_dim = s.output_cutoff + 1;
  const Eigen::Index big = static_cast<Eigen::Index>(in_dim) * out_dim;
  // Rows are split into a fixed number of chunks so the summation order, and
  // hence every bit of the result, does not depend on the thread count.
  const std::size_t chunks = std::min<std::size_t>(p, 8);
  std::vector<Eigen::MatrixXcd> chunk_blocks(chunks);
  std::vector<Eigen::MatrixXcd> chunk_grams(chunks);
  parallel_for(chunks, threads, [&](std::size_t c) {
    Eigen::MatrixXcd acc = Eigen::MatrixXcd::Zero(big, big);
    Eigen::MatrixXcd g = Eigen::MatrixXcd::Zero(in_dim, in_dim);
    std::vector<Eigen::MatrixXcd> outs;
    for (std::size_t ix = c * p / chunks; ix < (c + 1) * p / chunks; ++ix) {
      outs.clear();
      std::vector<double> sw;
      for (std::size_t iy = 0; iy < p; ++iy) {
        const double wt = wts[ix] * wts[iy];
        const cplx beta{nodes[ix], nodes[iy]};
        const Eigen::MatrixXcd w = pre_displacement(s, beta);
        g.noalias() += wt * (w.adjoint() * w);
        for (auto& u : displaced_outputs(s, beta, w)) {
          outs.push_back(std::move(u));
          sw.push_back(std::sqrt(wt));
        }
      }
      Eigen::MatrixXcd v(big, static_cast<Eigen::Index>(outs.size()));
      for (std::size_t k = 0; k < outs.size(); ++k) {
        v.col(as_index(k)) = Eigen::Map<const Eigen::VectorXcd>(outs[k].data(), big) * sw[k];
      }
      acc.selfadjointView<Eigen::Lower>().rankUpdate(v);
    }
    chunk_blocks[c] = std::move(acc);
    chunk_grams[c] = std::move(g);
  });
  PolarizationChannel ch;
  ch.input_dim = in_dim;
  ch.output_dim = out_dim;
  ch.blocks = std::move(chunk_blocks[0]);
  ch.gram = std::move(chunk_grams[0]);
  for (std::size_t c = 1; c < chunks; ++c) {
    ch.blocks += chunk_blocks[c];
    ch.gram += chunk_grams[c];
  }
  ch.blocks.triangularView<Eigen::StrictlyUpper>() = ch.blocks.adjoint();
  return ch;
}

// Choi blocks reshaped to ((j, k), (a, b)) so a channel acts on vec(rho) by one GEMM.
Eigen::MatrixXcd superoperator(const PolarizationChannel& ch) {
  const Eigen::Index m = ch.input_dim;
  const Eigen::Index o = ch.output_dim;
  Eigen::MatrixXcd s(m * m, o * o);
  for (Eigen::Index j = 0; j < m; ++j)
    for (Eigen::Index k = 0; k < m; ++k)
      for (Eigen::Index a = 0; a < o; ++a)
        for (Eigen::Index b = 0; b < o; ++b) s(j * m + k, a * o + b) = ch.blocks(j * o + a, k * o + b);
  return s;
}

// Applies E_H (x) E_V to rho_in over (jH, jV): H first, then V.
Eigen::MatrixXcd apply_channels(const Eigen::MatrixXcd& rho_in, const PolarizationChannel& h,
                                const PolarizationChannel& v) {
  const Eigen::Index m = h.input_dim;
  const Eigen::Index o = h.output_dim;
  const Eigen::Index ov = v.output_dim;
  // r1((jV, kV), (jH, kH))
  Eigen::MatrixXcd r1(m * m, m * m);
  for (Eigen::Index jh = 0; jh < m; ++jh)
    for (Eigen::Index jv = 0; jv < m; ++jv)
      for (Eigen::Index kh = 0; kh < m; ++kh)
        for (Eigen::Index kv = 0; kv < m; ++kv) r1(jv * m + kv, jh * m + kh) = rho_in(jh * m + jv, kh * m + kv);
  // y1((jV, kV), (aH, bH)), then y2((aH, bH), (aV, bV))
  const Eigen::MatrixXcd y1 = r1 * superoperator(h);
  const Eigen::MatrixXcd y2 = y1.transpose() * superoperator(v);
  Eigen::MatrixXcd out(o * ov, o * ov);
  for (Eigen::Index ah = 0; ah < o; ++ah)
    for (Eigen::Index bh = 0; bh < o; ++bh)
      for (Eigen::Index av = 0; av < ov; ++av)
        for (Eigen::Index bv = 0; bv < ov; ++bv) out(ah * ov + av, bh * ov + bv) = y2(ah * o + bh, av * ov + bv);
  return out;
}

struct Engine {
  ResourcePair res;
  double gain = 1.0;
  int source_cutoff = 0;
  int input_cutoff = 1;
  int output_cutoff = 0;
  double eta = 1.0;

  PolarizationSetup setup(Polarization pol) const {
    PolarizationSetup s;
    s.q = pol == Polarization::H ? res.q_H : res.q_V;
    s.phase = pol == Polarization::H ? 0.0 : res.phase_V;
    s.gain = gain;
    s.source_cutoff = source_cutoff;
    s.input_cutoff = input_cutoff;
    s.output_cutoff = output_cutoff;
    if (eta != 1.0) s.kraus = loss_kraus_operators(eta, source_cutoff);
    return s;
  }
};

Engine make_engine(const SourceParams& params, const GainRule& gain, int input_cutoff,
                   const TeleportOptions& opts) {
  params.validate();
  Engine e;
  e.res = ResourcePair::from(params);
  e.gain = gain.resolve(params.r);
  e.input_cutoff = input_cutoff;
  e.source_cutoff = opts.source_cutoff > 0 ? opts.source_cutoff : default_source_cutoff(e.res);
  if (!(opts.b_arm_transmittance >= 0.0 && opts.b_arm_transmittance <= 1.0)) {
    throw FockError("B-arm transmittance must lie in [0, 1]");
  }
  e.output_cutoff = opts.output_cutoff > 0
                        ? opts.output_cutoff
                        : default_output_cutoff(e.res, e.gain, input_cutoff, opts.b_arm_transmittance);
  e.eta = opts.b_arm_transmittance;
  return e;
}

double schmidt_tail(double q, int cutoff) { return std::pow(q * q, cutoff + 1); }

void check_input_modes(const DensityMatrix& rho) {
  if (rho.modes.size() != 2 || rho.modes[0].pol != Polarization::H ||
      rho.modes[1].pol != Polarization::V || rho.modes[0].arm != rho.modes[1].arm) {
    throw FockError("teleported state must live on one arm's (H, V) modes");
  }
}

// Smallest cutoff whose dropped weight stays below `tol`.
int effective_input_cutoff(const DensityMatrix& rho, double tol) {
  const int d = static_cast<int>(rho.local_dim());
  for (int m = 1; m < d - 1; ++m) {
    double dropped = 0.0;
    for (int a = 0; a < d; ++a)
      for (int b = 0; b < d; ++b)
        if (a > m || b > m) dropped += std::abs(rho.matrix(a * d + b, a * d + b).real());
    if (dropped <= tol) return m;
  }
  return d - 1;
}

}  // namespace

// ---- small types -------------------------------------------------------------------

double GainRule::resolve(double r) const {
  switch (kind) {
    case GainKind::unit: return 1.0;
    case GainKind::matched: return std::tanh(r);
    case GainKind::fixed:
      if (!std::isfinite(value)) throw FockError("fixed gain must be finite");
      return value;
  }
  return 1.0;
}

void BetaGrid::validate() const {
  if (!(half_width > 0.0) || !std::isfinite(half_width)) throw FockError("grid half_width must be > 0");
  if (points_per_axis < 3) throw FockError("grid needs at least 3 points per axis");
}

std::vector<double> BetaGrid::nodes() const {
  validate();
  std::vector<double> x(static_cast<std::size_t>(points_per_axis));
  const double h = 2.0 * half_width / (points_per_axis - 1);
  for (int i = 0; i < points_per_axis; ++i) x[static_cast<std::size_t>(i)] = -half_width + h * i;
  return x;
}

std::vector<double> BetaGrid::weights() const {
  validate();
  const double h = 2.0 * half_width / (points_per_axis - 1);
  std::vector<double> w(static_cast<std::size_t>(points_per_axis), h);
  w.front() = w.back() = 0.5 * h;
  return w;
}

BetaGrid BetaGrid::for_cutoff(int cutoff, double max_spacing) {
  BetaGrid g;
  g.half_width = 3.0 + std::sqrt(static_cast<double>(std::max(cutoff, 0)));
  int p = static_cast<int>(std::ceil(2.0 * g.half_width / max_spacing)) + 1;
  if (p % 2 == 0) ++p;
  g.points_per_axis = std::max(p, 3);
  return g;
}

BetaGrid BetaGrid::for_squeezing(double r, double max_spacing) {
  if (!(r >= 0.0) || !std::isfinite(r)) throw FockError("r must be finite and >= 0");
  BetaGrid g;
  g.half_width = std::max(6.0, 4.5 * std::sqrt((1.5 + std::cosh(2.0 * r)) / 4.0));
  int p = static_cast<int>(std::ceil(2.0 * g.half_width / max_spacing)) + 1;
  if (p % 2 == 0) ++p;
  g.points_per_axis = p;
  return g;
}

ResourcePair ResourcePair::from(const SourceParams& p) {
  return {std::tanh(p.r), std::tanh(p.s_coefficient * p.r), p.phase_error()};
}

double ResourcePair::effective_r() const {
  return std::max(std::atanh(std::abs(q_H)), std::atanh(std::abs(q_V)));
}

int default_source_cutoff(const ResourcePair& res) {
  const double q = std::max(std::abs(res.q_H), std::abs(res.q_V));
  if (q < 1e-6) return 4;
  const int n = static_cast<int>(std::ceil(std::log(1e-6) / std::log(q))) - 1;
  return std::max(n, 4);
}

int default_output_cutoff(const ResourcePair& res, double gain, int input_cutoff, double b_arm_transmittance) {
  const double eta = b_arm_transmittance;
  double nbar = 0.0;
  for (double q : {res.q_H, res.q_V}) {
    const double r = std::atanh(q);
    nbar = std::max(nbar, std::pow(std::sqrt(eta) * std::sinh(r) - gain * std::cosh(r), 2) + (1.0 - eta));
  }
  int extra = 2;
  if (nbar > 1e-12) {
    const double x = nbar / (1.0 + nbar);
    extra += static_cast<int>(std::ceil(std::log(1e-10) / std::log(x)));
  }
  // amplification spreads the input photons as well
  if (gain > 1.0) extra += static_cast<int>(std::ceil(4.0 * gain * gain));
  return std::clamp(input_cutoff + extra, input_cutoff + 2, 60);
}

DensityMatrix TeleportResult::normalized() const {
  DensityMatrix out = rho;
  const double tr = rho.trace();
  if (!(tr > 0.0)) throw NumericalGuardError("grid_mass", "teleported state has zero trace");
  out.matrix /= tr;
  out.trace_deficit = 0.0;
  return out;
}

// ---- joint-state path ------------------------------------------------------------------

FockState mix_at_half_bs(const FockState& input, const FockState& source) {
  for (const auto& m : {kInH, kInV}) {
    if (!input.has_mode(m)) throw FockError("input state lacks mode " + m.to_string());
  }
  for (const auto& m : {kAH, kAV}) {
    if (!source.has_mode(m)) throw FockError("source state lacks mode " + m.to_string());
  }
  FockState joint = tensor_product(input, source);
  joint = with_cutoff(joint, input.cutoff() + source.cutoff());
  // phase pi: a_in -> (a_in - a_A)/sqrt2 and a_A -> (a_A + a_in)/sqrt2 in the Heisenberg picture.
  joint = apply_beam_splitter(std::move(joint), kInH, kAH, 0.5, pi);
  joint = apply_beam_splitter(std::move(joint), kInV, kAV, 0.5, pi);
  joint = relabel(std::move(joint), kInH, kMinusH);
  joint = relabel(std::move(joint), kInV, kMinusV);
  joint = relabel(std::move(joint), kAH, kPlusH);
  return relabel(std::move(joint), kAV, kPlusV);
}

double homodyne_density(const FockState& joint, BetaPair beta) {
  return project_outcome(joint, beta).norm_squared();
}

FockState project_and_displace(const FockState& joint, BetaPair beta, double gain,
                               std::optional<int> output_cutoff) {
  FockState out = project_outcome(joint, beta);
  for (const auto& m : {kBH, kBV}) {
    if (!out.has_mode(m)) throw FockError("joint state lacks mode " + m.to_string());
  }
  if (output_cutoff) out = with_cutoff(out, *output_cutoff);
  out = apply_displacement(std::move(out), kBH, gain * beta.H);
  return apply_displacement(std::move(out), kBV, gain * beta.V);
}

double seeded_uniform(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  std::mt19937_64 eng(seq);
  return static_cast<double>(eng() >> 11) * 0x1.0p-53;
}

namespace {

// Inverse CDF over a cumulative table; u = 0 skips leading zero-weight cells.
std::size_t inverse_cdf(const std::vector<double>& cumulative, double u) {
  const double target = u * cumulative.back();
  auto it = std::lower_bound(cumulative.begin(), cumulative.end(), target);
  if (target <= 0.0) it = std::upper_bound(cumulative.begin(), cumulative.end(), 0.0);
  if (it == cumulative.end()) --it;
  return static_cast<std::size_t>(it - cumulative.begin());
}

void check_mass(double mass, double minimum) {
  if (!(mass >= minimum)) {
    std::ostringstream os;
    os << "captured grid mass " << mass << " is below " << minimum
       << "; increase BetaGrid.half_width (guidance: >= 3 + sqrt(cutoff))";
    throw NumericalGuardError("grid_mass", os.str());
  }
}

}  // namespace

HomodyneRecord sample_beta(const FockState& joint, const BetaGrid& grid, std::uint64_t seed) {
  const Picture picture = detect_picture(joint);
  const auto nodes = grid.nodes();
  const auto wts = grid.weights();
  const std::size_t p = nodes.size();
  const std::size_t p2 = p * p;
  if (p2 * p2 > (std::size_t{1} << 26)) throw FockError("sampling grid too large");

  // Contract the H pair once per beta_H, with the V pair leading the remaining modes.
  const auto& vfirst = picture == Picture::pre_mixing ? kInV : kMinusV;
  const auto& vsecond = picture == Picture::pre_mixing ? kAV : kPlusV;
  std::vector<ModeLabel> order{vfirst, vsecond};
  for (const auto& m : joint.modes()) {
    if (!(m == vfirst || m == vsecond)) order.push_back(m);
  }
  const FockState ordered = reorder_modes(joint, order);
  const std::size_t d = joint.local_dim();

  std::vector<FockState> reduced;
  reduced.reserve(p2);
  for (std::size_t i = 0; i < p2; ++i) {
    const auto ph = make_projector(picture, Polarization::H, {nodes[i / p], nodes[i % p]}, joint.cutoff());
    reduced.push_back(contract_pair(ordered, ph.first, ph.second, ph.matrix));
  }
  std::vector<Eigen::MatrixXcd> vproj(p2);
  for (std::size_t i = 0; i < p2; ++i) {
    vproj[i] = projector_matrix(picture, {nodes[i / p], nodes[i % p]}, joint.cutoff());
  }

  std::vector<double> cumulative(p2 * p2);
  double acc = 0.0;
  std::vector<cplx> out;
  for (std::size_t ih = 0; ih < p2; ++ih) {
    const auto amps = reduced[ih].amplitudes();
    const std::size_t rest = amps.size() / (d * d);
    out.assign(rest, cplx{});
    const double wh = wts[ih / p] * wts[ih % p];
    for (std::size_t iv = 0; iv < p2; ++iv) {
      std::fill(out.begin(), out.end(), cplx{});
      const auto& e = vproj[iv];
      for (std::size_t j = 0; j < d; ++j) {
        for (std::size_t k = 0; k < d; ++k) {
          const cplx c = e(as_index(j), as_index(k));
          const cplx* src = amps.data() + (j * d + k) * rest;
          for (std::size_t r = 0; r < rest; ++r) out[r] += c * src[r];
        }
      }
      double dens = 0.0;
      for (const auto& a : out) dens += std::norm(a);
      acc += dens * wh * wts[iv / p] * wts[iv % p];
      cumulative[ih * p2 + iv] = acc;
    }
  }
  check_mass(acc, 0.99);
  const std::size_t idx = inverse_cdf(cumulative, seeded_uniform(seed, 0));
  const std::size_t ih = idx / p2;
  const std::size_t iv = idx % p2;
  HomodyneRecord rec;
  rec.beta = {{nodes[ih / p], nodes[ih % p]}, {nodes[iv / p], nodes[iv % p]}};
  rec.density = homodyne_density(joint, rec.beta);
  return rec;
}

// ---- analytic path ----------------------------------------------------------------------

Eigen::MatrixXcd polarization_transfer(double q, double phase, double gain, cplx beta,
                                       int source_cutoff, int input_cutoff, int output_cutoff) {
  if (!(std::abs(q) < 1.0)) throw FockError("transfer operator needs |q| < 1");
  PolarizationSetup s;
  s.q = q;
  s.phase = phase;
  s.gain = gain;
  s.source_cutoff = source_cutoff;
  s.input_cutoff = input_cutoff;
  s.output_cutoff = output_cutoff;
  return displaced_outputs(s, beta, pre_displacement(s, beta)).front();
}

Eigen::MatrixXcd transfer_operator(const ResourcePair& res, double gain, BetaPair beta,
                                   int source_cutoff, int input_cutoff, int output_cutoff) {
  const Eigen::MatrixXcd th =
      polarization_transfer(res.q_H, 0.0, gain, beta.H, source_cutoff, input_cutoff, output_cutoff);
  const Eigen::MatrixXcd tv =
      polarization_transfer(res.q_V, res.phase_V, gain, beta.V, source_cutoff, input_cutoff, output_cutoff);
  const Eigen::Index o = th.rows();
  const Eigen::Index i = th.cols();
  Eigen::MatrixXcd t(o * o, i * i);
  for (Eigen::Index a = 0; a < o; ++a)
    for (Eigen::Index b = 0; b < o; ++b)
      for (Eigen::Index j = 0; j < i; ++j)
        for (Eigen::Index k = 0; k < i; ++k) t(a * o + b, j * i + k) = th(a, j) * tv(b, k);
  return t;
}

Eigen::MatrixXcd transfer_operator(double q, double gain, BetaPair beta, int cutoff) {
  if (!(q >= 0.0 && q < 1.0)) throw FockError("transfer operator needs 0 <= q < 1");
  return transfer_operator(ResourcePair{q, q, 0.0}, gain, beta, cutoff, cutoff, cutoff);
}

// ---- averaged output --------------------------------------------------------------------

TeleportResult teleport_density(const DensityMatrix& input, const SourceParams& params,
                                const GainRule& gain, const BetaGrid& grid, const TeleportOptions& opts) {
  check_input_modes(input);
  grid.validate();
  const int m = effective_input_cutoff(input, opts.input_truncation_tolerance);
  const DensityMatrix in = m == input.cutoff ? input : with_cutoff(input, m);
  const Engine e = make_engine(params, gain, m, opts);

  const PolarizationChannel ch_h = integrate_channel(e.setup(Polarization::H), grid, opts.threads);
  const bool same = e.res.q_H == e.res.q_V && e.res.phase_V == 0.0;
  const PolarizationChannel ch_v = same ? ch_h : integrate_channel(e.setup(Polarization::V), grid, opts.threads);

  TeleportResult res;
  res.source_cutoff = e.source_cutoff;
  res.output_cutoff = e.output_cutoff;
  res.input_leakage = in.trace_deficit - input.trace_deficit;
  const int d = m + 1;
  cplx mass = 0.0;
  for (int jh = 0; jh < d; ++jh)
    for (int jv = 0; jv < d; ++jv)
      for (int kh = 0; kh < d; ++kh)
        for (int kv = 0; kv < d; ++kv)
          mass += in.matrix(jh * d + jv, kh * d + kv) * ch_h.gram(kh, jh) * ch_v.gram(kv, jv);
  res.grid_mass = mass.real();
  res.source_leakage =
      1.0 - (1.0 - schmidt_tail(e.res.q_H, e.source_cutoff)) * (1.0 - schmidt_tail(e.res.q_V, e.source_cutoff));
  res.rho = DensityMatrix{output_modes(), e.output_cutoff, apply_channels(in.matrix, ch_h, ch_v), 0.0};
  res.output_leakage = std::max(0.0, res.grid_mass - res.rho.trace());
  res.rho.trace_deficit = std::max(0.0, 1.0 - res.rho.trace());
  check_mass(res.grid_mass, opts.min_grid_mass);
  if (!(res.truncation_leakage() <= opts.max_truncation_leakage)) {
    std::ostringstream os;
    os << "truncation leakage " << res.truncation_leakage() << " exceeds " << opts.max_truncation_leakage
       << " (source " << res.source_leakage << ", output " << res.output_leakage << ", input "
       << res.input_leakage << "); raise source_cutoff or output_cutoff";
    throw NumericalGuardError("truncation", os.str());
  }
  return res;
}

TeleportResult teleport_average(const InputQubit& input, const SourceParams& params, const GainRule& gain,
                                const BetaGrid& grid, const TeleportOptions& opts) {
  return teleport_density(to_density(make_input_qubit(input, 1)), params, gain, grid, opts);
}

// ---- Monte Carlo -------------------------------------------------------------------------

McResult teleport_mc(const InputQubit& input, const SourceParams& params, const GainRule& gain,
                     const BetaGrid& grid, int shots, std::uint64_t seed, const TeleportOptions& opts) {
  if (shots < 1) throw FockError("teleport_mc needs shots >= 1");
  input.validate();
  const Engine e = make_engine(params, gain, 1, opts);
  const auto nodes = grid.nodes();
  const auto wts = grid.weights();
  const std::size_t p = nodes.size();
  const std::size_t p2 = p * p;
  if (p2 * p2 > (std::size_t{1} << 26)) throw FockError("sampling grid too large");

  struct NodeData {
    Eigen::Matrix2cd gram;  // (k, j) = <w_k, w_j>
    Eigen::MatrixXcd u;     // (output_cutoff+1) x 2
  };
  std::array<std::vector<NodeData>, 2> table;
  for (int s = 0; s < 2; ++s) {
    const auto setup = e.setup(s == 0 ? Polarization::H : Polarization::V);
    table[static_cast<std::size_t>(s)].resize(p2);
    parallel_for(p2, opts.threads, [&](std::size_t i) {
      const cplx beta{nodes[i / p], nodes[i % p]};
      const Eigen::MatrixXcd w = pre_displacement(setup, beta);
      auto& nd = table[static_cast<std::size_t>(s)][i];
      nd.gram = w.adjoint() * w;
      nd.u = displaced_outputs(setup, beta, w).front();
    });
  }

  // psi[jH][jV]
  const cplx psi[2][2] = {{0.0, input.c2}, {input.c1, 0.0}};
  auto density_at = [&](std::size_t ih, std::size_t iv) {
    const auto& gh = table[0][ih].gram;
    const auto& gv = table[1][iv].gram;
    cplx acc = 0.0;
    for (int jh = 0; jh < 2; ++jh)
      for (int jv = 0; jv < 2; ++jv)
        for (int kh = 0; kh < 2; ++kh)
          for (int kv = 0; kv < 2; ++kv)
            acc += std::conj(psi[kh][kv]) * psi[jh][jv] * gh(kh, jh) * gv(kv, jv);
    return acc.real();
  };

  std::vector<double> cumulative(p2 * p2);
  double mass = 0.0;
  for (std::size_t ih = 0; ih < p2; ++ih) {
    const double wh = wts[ih / p] * wts[ih % p];
    for (std::size_t iv = 0; iv < p2; ++iv) {
      mass += density_at(ih, iv) * wh * wts[iv / p] * wts[iv % p];
      cumulative[ih * p2 + iv] = mass;
    }
  }
  check_mass(mass, opts.min_grid_mass);

  const Eigen::Index o = e.output_cutoff + 1;
  const Eigen::Index dim = o * o;
  constexpr std::size_t kChunk = 512;
  const std::size_t n_shots = static_cast<std::size_t>(shots);
  const std::size_t n_chunks = (n_shots + kChunk - 1) / kChunk;
  struct Partial {
    Eigen::MatrixXcd sum;
    Eigen::MatrixXd sq;
  };
  std::vector<Partial> partials(n_chunks);
  std::vector<HomodyneRecord> records(n_shots);
  parallel_for(n_chunks, opts.threads, [&](std::size_t c) {
    const std::size_t first = c * kChunk;
    const std::size_t count = std::min(n_shots, first + kChunk) - first;
    // Columns are normalized conditional outputs; the chunk sums are then
    // sum_i rc_i = V V^dag and sum_i |rc_i|^2 = A A^T with A = |V|^2 entrywise.
    Eigen::MatrixXcd vs = Eigen::MatrixXcd::Zero(dim, as_index(count));
    for (std::size_t i = first; i < first + count; ++i) {
      const std::size_t idx = inverse_cdf(cumulative, seeded_uniform(seed, i));
      const std::size_t ih = idx / p2;
      const std::size_t iv = idx % p2;
      records[i].beta = {{nodes[ih / p], nodes[ih % p]}, {nodes[iv / p], nodes[iv % p]}};
      records[i].density = density_at(ih, iv);
      const auto& uh = table[0][ih].u;
      const auto& uv = table[1][iv].u;
      auto out = vs.col(as_index(i - first));
      for (int jh = 0; jh < 2; ++jh) {
        for (int jv = 0; jv < 2; ++jv) {
          if (psi[jh][jv] == cplx{}) continue;
          for (Eigen::Index a = 0; a < o; ++a)
            for (Eigen::Index b = 0; b < o; ++b) out(a * o + b) += psi[jh][jv] * uh(a, jh) * uv(b, jv);
        }
      }
      const double nn = out.squaredNorm();
      if (nn > 0.0) out /= std::sqrt(nn);
    }
    const Eigen::MatrixXd amp = vs.cwiseAbs2();
    Partial part{vs * vs.adjoint(), amp * amp.transpose()};
    partials[c] = std::move(part);
  });

  Eigen::MatrixXcd sum = Eigen::MatrixXcd::Zero(dim, dim);
  Eigen::MatrixXd sq = Eigen::MatrixXd::Zero(dim, dim);
  for (const auto& part : partials) {
    sum += part.sum;
    sq += part.sq;
  }
  const double n = static_cast<double>(n_shots);
  McResult res;
  const Eigen::MatrixXcd mean = sum / n;
  res.rho = DensityMatrix{output_modes(), e.output_cutoff, mean, 0.0};
  res.standard_error = Eigen::MatrixXd::Zero(dim, dim);
  if (n_shots > 1) {
    const Eigen::MatrixXd var =
        ((sq / n) - (mean.real().cwiseAbs2() + mean.imag().cwiseAbs2())).cwiseMax(0.0) * (n / (n - 1.0));
    res.standard_error = (var / n).cwiseSqrt();
  }
  res.frobenius_standard_error = res.standard_error.norm();
  res.records = std::move(records);
  res.grid_mass = mass;
  res.source_cutoff = e.source_cutoff;
  res.output_cutoff = e.output_cutoff;
  return res;
}

// ---- metrics ------------------------------------------------------------------------------

QubitMetrics qubit_metrics(const DensityMatrix& rho_B, std::optional<InputQubit> input) {
  check_input_modes(rho_B);
  const Eigen::Index d = static_cast<Eigen::Index>(rho_B.local_dim());
  const Eigen::Index h = d;  // |1,0>
  const Eigen::Index v = 1;  // |0,1>
  QubitMetrics m;
  m.trace = rho_B.trace();
  m.vacuum_weight = rho_B.matrix(0, 0).real();
  m.one_photon_block << rho_B.matrix(h, h), rho_B.matrix(h, v), rho_B.matrix(v, h), rho_B.matrix(v, v);
  m.one_photon_weight = m.one_photon_block.trace().real();
  m.multi_photon_weight = m.trace - m.vacuum_weight - m.one_photon_weight;
  m.bloch = bloch_vector(m.one_photon_block);
  if (input) {
    input->validate();
    const Eigen::Vector2cd psi(input->c1, input->c2);
    const double overlap = (psi.adjoint() * m.one_photon_block * psi)(0, 0).real();
    if (m.trace > 0.0) m.fidelity = std::clamp(overlap / m.trace, 0.0, 1.0);
    if (m.one_photon_weight > 0.0) m.conditional_fidelity = std::clamp(overlap / m.one_photon_weight, 0.0, 1.0);
  }
  return m;
}

}  // namespace cvqwc
