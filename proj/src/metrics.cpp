#include "rvos/metrics.hpp"

#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace rvos {

namespace {

void check_extent(const Mask& pred, const Mask& gt, std::size_t h, std::size_t w,
                  const char* op) {
  if (pred.size() != h * w || gt.size() != h * w)
    throw std::invalid_argument(std::string(op) + ": masks must both be " +
                                std::to_string(h) + "x" + std::to_string(w));
}

Mask boundary_pixels(const Mask& m, std::size_t h, std::size_t w) {
  Mask b(h * w, 0);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      if (!m[y * w + x]) continue;
      const bool interior = y > 0 && y + 1 < h && x > 0 && x + 1 < w &&
                            m[(y - 1) * w + x] && m[(y + 1) * w + x] && m[y * w + x - 1] &&
                            m[y * w + x + 1];
      if (!interior) b[y * w + x] = 1;
    }
  return b;
}

// fraction of set pixels in `a` within Chebyshev distance 1 of a set pixel in `b`
double matched_fraction(const Mask& a, const Mask& b, std::size_t h, std::size_t w,
                        std::size_t a_count) {
  if (a_count == 0) return 0.0;
  std::size_t matched = 0;
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      if (!a[y * w + x]) continue;
      bool hit = false;
      for (long dy = -1; dy <= 1 && !hit; ++dy)
        for (long dx = -1; dx <= 1 && !hit; ++dx) {
          const long ny = static_cast<long>(y) + dy, nx = static_cast<long>(x) + dx;
          if (ny < 0 || nx < 0 || ny >= static_cast<long>(h) || nx >= static_cast<long>(w))
            continue;
          if (b[static_cast<std::size_t>(ny) * w + static_cast<std::size_t>(nx)]) hit = true;
        }
      if (hit) ++matched;
    }
  return static_cast<double>(matched) / static_cast<double>(a_count);
}

std::size_t count_set(const Mask& m) {
  std::size_t n = 0;
  for (std::uint8_t v : m) n += v ? 1 : 0;
  return n;
}

}  // namespace

double region_similarity(const Mask& pred, const Mask& gt, std::size_t h, std::size_t w) {
  check_extent(pred, gt, h, w, "region_similarity");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool a = pred[i] != 0, b = gt[i] != 0;
    inter += (a && b) ? 1 : 0;
    uni += (a || b) ? 1 : 0;
  }
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

double contour_accuracy(const Mask& pred, const Mask& gt, std::size_t h, std::size_t w) {
  check_extent(pred, gt, h, w, "contour_accuracy");
  const Mask pb = boundary_pixels(pred, h, w);
  const Mask gb = boundary_pixels(gt, h, w);
  const std::size_t pn = count_set(pb), gn = count_set(gb);
  if (pn == 0 && gn == 0) return 1.0;
  if (pn == 0 || gn == 0) return 0.0;
  const double precision = matched_fraction(pb, gb, h, w, pn);
  const double recall = matched_fraction(gb, pb, h, w, gn);
  if (precision + recall == 0.0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

std::size_t select_best_scores(const std::vector<std::vector<double>>& scores) {
  if (scores.empty()) throw std::invalid_argument("select_best: no candidates");
  std::size_t best = 0;
  double best_avg = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < scores.size(); ++i) {
    double s = 0.0;
    for (double v : scores[i]) s += v;
    const double avg = scores[i].empty() ? 0.0 : s / static_cast<double>(scores[i].size());
    if (avg > best_avg) {
      best_avg = avg;
      best = i;
    }
  }
  return best;
}

std::size_t select_best(const std::vector<PredictionSequence>& candidates) {
  if (candidates.empty()) throw std::invalid_argument("select_best: no candidates");
  std::size_t best = 0;
  double best_avg = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const double avg = candidates[i].mean_cls();
    if (avg > best_avg) {
      best_avg = avg;
      best = i;
    }
  }
  return best;
}

std::vector<std::size_t> select_multi_scores(const std::vector<std::vector<double>>& scores,
                                             double threshold) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    double s = 0.0;
    for (double v : scores[i]) s += v;
    const double avg = scores[i].empty() ? 0.0 : s / static_cast<double>(scores[i].size());
    if (avg > threshold) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> select_multi(const std::vector<PredictionSequence>& candidates,
                                      double threshold) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < candidates.size(); ++i)
    if (candidates[i].mean_cls() > threshold) out.push_back(i);
  return out;
}

EvalResult EvalResult::from_videos(std::vector<Video> videos) {
  EvalResult r;
  r.videos = std::move(videos);
  if (!r.videos.empty()) {
    for (const Video& v : r.videos) {
      r.j_mean += v.j;
      r.f_mean += v.f;
    }
    r.j_mean /= static_cast<double>(r.videos.size());
    r.f_mean /= static_cast<double>(r.videos.size());
  }
  r.jf_mean = (r.j_mean + r.f_mean) / 2.0;
  return r;
}

std::string EvalResult::to_csv() const {
  std::ostringstream os;
  os << "video_id,J,F,J&F\n";
  for (const Video& v : videos)
    os << v.id << "," << v.j << "," << v.f << "," << (v.j + v.f) / 2.0 << "\n";
  os << "mean," << j_mean << "," << f_mean << "," << jf_mean << "\n";
  return os.str();
}

}  // namespace rvos
