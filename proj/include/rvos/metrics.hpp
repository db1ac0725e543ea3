#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rvos/losses.hpp"

namespace rvos {

using Mask = std::vector<std::uint8_t>;  // row-major 0/1 grid

/// Intersection over union; both masks empty counts as 1.
double region_similarity(const Mask& pred, const Mask& gt, std::size_t h, std::size_t w);

/// Boundary F-measure. Boundaries come from 4-neighbourhood erosion
/// difference (off-grid counts as outside); a boundary pixel matches if one
/// of the other set lies within Chebyshev distance 1. Both boundaries empty
/// counts as 1.
double contour_accuracy(const Mask& pred, const Mask& gt, std::size_t h, std::size_t w);

/// Highest average classification score; ties resolve to the lowest index.
std::size_t select_best(const std::vector<PredictionSequence>& candidates);
std::size_t select_best_scores(const std::vector<std::vector<double>>& scores);

/// Every candidate whose average score exceeds the threshold. May be empty.
std::vector<std::size_t> select_multi(const std::vector<PredictionSequence>& candidates,
                                      double threshold = 0.3);
std::vector<std::size_t> select_multi_scores(const std::vector<std::vector<double>>& scores,
                                             double threshold = 0.3);

struct EvalResult {
  struct Video {
    std::string id;
    double j = 0.0;
    double f = 0.0;
  };
  std::vector<Video> videos;
  double j_mean = 0.0;
  double f_mean = 0.0;
  double jf_mean = 0.0;

  static EvalResult from_videos(std::vector<Video> videos);
  std::string to_csv() const;  // video_id,J,F,J&F
};

}  // namespace rvos
