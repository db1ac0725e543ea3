#pragma once

#include <optional>
#include <string>
#include <vector>

#include "rvos/frontend.hpp"
#include "rvos/losses.hpp"
#include "rvos/mask_decoder.hpp"
#include "rvos/params.hpp"
#include "rvos/query_decoder.hpp"
#include "rvos/scene.hpp"
#include "rvos/temporal.hpp"

namespace rvos {

struct RunConfig {
  std::size_t d = 64;
  std::size_t heads = 4;
  std::size_t n_q = 64;
  std::size_t layers = 4;      // decoder depth L
  std::size_t k = 2;           // retention divisor (50% drop rate)
  std::size_t l_t = 3;
  std::size_t l_m = 3;
  std::size_t num_points = 16;
  std::size_t frames = 6;      // T
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t min_queries = 4;
  double alpha = 0.1;
  std::uint64_t seed = 1;
  double lr = 5e-4;
  std::size_t steps = 500;
  std::size_t checkpoint_every = 200;
  std::size_t num_scenes = 8;
  int difficulty = -1;         // -1: standard mix of 0..2
  LossWeights weights;

  void validate() const;
};

RunConfig parse_config_file(const std::string& path);
RunConfig parse_config_text(const std::string& text);
std::string config_to_text(const RunConfig& cfg);

/// Inference-time overrides for ablations.
struct ForwardOptions {
  std::optional<std::size_t> k_override;
  PruneMode prune_mode = PruneMode::kConfidence;
  std::uint64_t random_prune_seed = 0;
  bool bypass_enhancer = false;
};

/// One object trajectory's plain-value outputs for selection and metrics.
struct TrajectoryValues {
  std::vector<double> cls;              // T
  std::vector<Mask> masks;              // T binary masks at f_seg extents
};

struct VideoForward {
  std::vector<PredictionSequence> candidates;   // N_s trajectories
  std::vector<TrajectoryValues> values;
  std::vector<CostLedger> ledgers;              // per frame
  std::vector<std::vector<std::size_t>> permutations;
  std::size_t mask_h = 0, mask_w = 0;
};

/// The full per-video pipeline: per-frame encoding and pruned decoding,
/// temporal enhancement across frames, then box/mask/classification heads
/// per retained object slot.
class Model {
 public:
  explicit Model(const RunConfig& cfg);

  void init_params(ParamStore& store) const;

  VideoForward forward_video(ParamCtx& ctx, const SyntheticScene& scene,
                             const ForwardOptions& opts = {}) const;
  VideoForward forward_frames(ParamCtx& ctx, const std::vector<std::vector<double>>& frames,
                              const std::vector<int>& program,
                              const ForwardOptions& opts = {}) const;

  const RunConfig& config() const { return cfg_; }
  const Frontend& frontend() const { return frontend_; }
  const QueryDecoder& query_decoder() const { return qdec_; }
  const MaskDecoder& mask_decoder() const { return mdec_; }
  const TemporalEnhancer& enhancer() const { return temporal_; }

 private:
  RunConfig cfg_;
  Frontend frontend_;
  QueryDecoder qdec_;
  MaskDecoder mdec_;
  TemporalEnhancer temporal_;
};

/// Ground truth for the target trajectory at mask (f_seg) resolution.
GroundTruthSequence scene_ground_truth(const SyntheticScene& scene);

}  // namespace rvos
