#pragma once

#include "wlens/config.hpp"
#include "wlens/report.hpp"

namespace wlens {

// Runs the full diagnostic chain over one base checkpoint and one or more
// finetuned checkpoints: update masks and sparsity, cross-run Jaccard and
// consensus, ratio profiles, spectral drift, recipe masks and their overlap
// with the observed updates. Emits report.json plus CSV and mask files under
// cfg.output_dir and returns the report. Deterministic given (config, seed);
// per-layer failures are recorded in the report instead of aborting the run.
Report run_pipeline(const PipelineConfig& cfg);

}  // namespace wlens
