#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "rvos/metrics.hpp"

namespace rvos {

// Token vocabulary of the scene programs. Id 0 is the sentence token.
namespace tok {
inline constexpr int kRed = 1, kGreen = 2, kBlue = 3, kYellow = 4, kMagenta = 5, kCyan = 6;
inline constexpr int kCircle = 7, kSquare = 8, kTriangle = 9;
inline constexpr int kStatic = 10, kMovingLeft = 11, kMovingRight = 12, kMovingUp = 13,
                     kMovingDown = 14, kOrbiting = 15, kShrinking = 16;
inline constexpr std::size_t kVocabSize = 17;
}  // namespace tok

std::string token_name(int id);

enum class ShapeKind { kCircle, kSquare, kTriangle };
enum class MotionKind { kStatic, kLinear, kOrbit, kShrink };

struct SceneObject {
  ShapeKind shape = ShapeKind::kCircle;
  int color = tok::kRed;          // color token id
  double size = 8.0;              // half-extent in pixels
  MotionKind motion = MotionKind::kStatic;
  double x0 = 0.0, y0 = 0.0;      // start center, pixels
  double vx = 0.0, vy = 0.0;      // linear velocity, pixels per frame
  double orbit_radius = 0.0, orbit_step = 0.0, orbit_phase = 0.0;
  double shrink_rate = 1.0;
  int motion_token = tok::kStatic;

  std::array<double, 2> center_at(std::size_t frame) const;
  double size_at(std::size_t frame) const;
};

/// A programmatic video: objects, their per-frame geometry, and a token
/// program that uniquely determines the target subset.
struct SyntheticScene {
  std::size_t height = 64, width = 64, frames = 6;
  std::uint64_t seed = 0;
  int difficulty = 0;
  std::vector<SceneObject> objects;
  std::vector<int> program;            // token ids, sentence token excluded
  std::vector<std::size_t> targets;    // indices of referred objects

  std::vector<double> render_frame(std::size_t t) const;       // H*W*3 in [0,1]
  Mask object_mask(std::size_t obj, std::size_t t) const;      // H*W
  Mask target_mask(std::size_t t) const;                       // union over targets
  std::array<double, 4> target_box(std::size_t t) const;       // normalized cxcywh
  std::array<double, 4> object_box(std::size_t obj, std::size_t t) const;
};

/// Deterministic scene generation. Difficulty:
///   0 one static object, program names color+shape;
///   1 several objects with distinct color/shape pairs;
///   2 distractors share the target's color or shape;
///   3 motion-only: two identical objects, the program's motion token
///     disambiguates.
SyntheticScene generate_scene(std::uint64_t seed, int difficulty, std::size_t h = 64,
                              std::size_t w = 64, std::size_t frames = 6);

/// Block mean >= 0.5 downsampling to (h/factor, w/factor).
Mask downsample_mask(const Mask& m, std::size_t h, std::size_t w, std::size_t factor);

/// Line-oriented run-length encoding: "frame <id>" then alternating run
/// lengths starting with background.
std::string rle_encode_frame(std::size_t frame_id, const Mask& m);
void write_pgm(const std::string& path, const Mask& m, std::size_t h, std::size_t w);
void write_ppm(const std::string& path, const std::vector<double>& rgb, std::size_t h,
               std::size_t w);

/// Which objects a program refers to: every object matching all named
/// attribute tokens (and the motion token when present).
std::vector<std::size_t> match_program(const std::vector<SceneObject>& objects,
                                       const std::vector<int>& program);

}  // namespace rvos
