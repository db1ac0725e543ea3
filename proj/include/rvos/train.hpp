#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "rvos/metrics.hpp"
#include "rvos/model.hpp"

namespace rvos {

/// Deterministic training scene list for a config: seeds cfg.seed*1000+i,
/// difficulty cycling 0..2 when cfg.difficulty is -1.
std::vector<SyntheticScene> train_scenes(const RunConfig& cfg);

/// Fixed evaluation suites (seed bases: standard 9000, motion 7000,
/// attribute 8000).
std::vector<SyntheticScene> build_suite(const std::string& name, std::size_t count,
                                        const RunConfig& cfg);

struct TrainResult {
  std::vector<double> loss_curve;
  std::size_t steps_done = 0;
  bool aborted_on_nan = false;
  std::string final_checkpoint;
};

/// Full training loop with periodic checkpoints under out_dir. A NaN loss
/// aborts with the last good checkpoint retained.
TrainResult train(const RunConfig& cfg, const std::string& out_dir, std::ostream* log = nullptr);

void save_checkpoint(const std::string& dir, const ParamStore& store, const RunConfig& cfg,
                     std::size_t step);
struct Checkpoint {
  RunConfig config;
  ParamStore store;
  std::size_t step = 0;
};
Checkpoint load_checkpoint(const std::string& dir);

/// Runs inference on each scene (select_best, or select_multi when the scene
/// refers to several objects) and scores J / F / J&F against the target
/// masks at f_seg resolution.
EvalResult evaluate_scenes(const Model& model, ParamStore& store,
                           const std::vector<SyntheticScene>& scenes,
                           const ForwardOptions& opts = {}, double multi_threshold = 0.3);

/// Writes per-frame target masks of the selected trajectory as RLE lines.
std::string export_masks_rle(const std::vector<Mask>& masks);

}  // namespace rvos
