#pragma once

// Pure-loss channels and the two network pipelines: forward conversion with
// fiber loss on the converted qubit (fig1_chain), and loss on the telecom arm
// of a pre-distributed source (predistributed).

#include <string>
#include <vector>

#include "cvqwc/teleport.hpp"

namespace cvqwc {

struct LossParams {
  double eta = 1.0;  // power transmittance
  std::vector<ModeLabel> targets;

  void validate() const;
};

/// Beam splitter with a vacuum ancilla at transmittance eta on every target,
/// ancilla traced out. Applied through the Kraus form of that dilation.
DensityMatrix loss_channel(const DensityMatrix& rho, const LossParams& loss);

enum class PipelineKind { fig1_chain, predistributed };

struct StageSpec {
  SourceParams source;
  GainRule gain;
};

struct PipelineSpec {
  PipelineKind kind = PipelineKind::fig1_chain;
  StageSpec stage1;
  StageSpec stage2;
  double fiber_eta = 1.0;
  InputQubit input;
  BetaGrid grid;
  TeleportOptions options;

  void validate() const;
};

struct StageReport {
  std::string name;
  double grid_mass = 0.0;
  double truncation_leakage = 0.0;
  double trace = 0.0;  // before renormalization
  int source_cutoff = 0;
  int output_cutoff = 0;
  QubitMetrics metrics;
};

struct PipelineResult {
  DensityMatrix rho;  // final state on (B,H),(B,V), trace-normalized
  QubitMetrics metrics;
  std::vector<StageReport> stages;

  double end_to_end_fidelity() const { return metrics.fidelity.value_or(0.0); }
};

/// Each stage output is renormalized before the next stage; the dropped
/// quadrature/truncation weight is reported per stage.
PipelineResult run_pipeline(const PipelineSpec& spec);

}  // namespace cvqwc
