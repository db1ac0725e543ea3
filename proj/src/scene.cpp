#include "rvos/scene.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "rvos/rng.hpp"

namespace rvos {

namespace {

struct Rgb {
  double r, g, b;
};

Rgb color_rgb(int color) {
  switch (color) {
    case tok::kRed: return {0.90, 0.15, 0.15};
    case tok::kGreen: return {0.15, 0.80, 0.20};
    case tok::kBlue: return {0.20, 0.30, 0.90};
    case tok::kYellow: return {0.90, 0.85, 0.10};
    case tok::kMagenta: return {0.85, 0.20, 0.85};
    case tok::kCyan: return {0.10, 0.80, 0.85};
    default: throw std::invalid_argument("unknown color token " + std::to_string(color));
  }
}

constexpr double kBackground = 0.08;

bool inside_shape(const SceneObject& o, double cx, double cy, double s, double px, double py) {
  switch (o.shape) {
    case ShapeKind::kCircle: {
      const double dx = px - cx, dy = py - cy;
      return dx * dx + dy * dy <= s * s;
    }
    case ShapeKind::kSquare:
      return std::fabs(px - cx) <= s && std::fabs(py - cy) <= s;
    case ShapeKind::kTriangle: {
      // up-pointing triangle inscribed in the radius-s circle
      const double ax = cx, ay = cy - s;
      const double bx = cx - s * 0.8660254037844386, by = cy + s * 0.5;
      const double dx2 = cx + s * 0.8660254037844386, dy2 = cy + s * 0.5;
      auto side = [&](double x1, double y1, double x2, double y2) {
        return (x2 - x1) * (py - y1) - (y2 - y1) * (px - x1);
      };
      const double s1 = side(ax, ay, bx, by);
      const double s2 = side(bx, by, dx2, dy2);
      const double s3 = side(dx2, dy2, ax, ay);
      return (s1 >= 0 && s2 >= 0 && s3 >= 0) || (s1 <= 0 && s2 <= 0 && s3 <= 0);
    }
  }
  return false;
}

int shape_token(ShapeKind s) {
  switch (s) {
    case ShapeKind::kCircle: return tok::kCircle;
    case ShapeKind::kSquare: return tok::kSquare;
    case ShapeKind::kTriangle: return tok::kTriangle;
  }
  return tok::kCircle;
}

}  // namespace

std::string token_name(int id) {
  switch (id) {
    case 0: return "<s>";
    case tok::kRed: return "red";
    case tok::kGreen: return "green";
    case tok::kBlue: return "blue";
    case tok::kYellow: return "yellow";
    case tok::kMagenta: return "magenta";
    case tok::kCyan: return "cyan";
    case tok::kCircle: return "circle";
    case tok::kSquare: return "square";
    case tok::kTriangle: return "triangle";
    case tok::kStatic: return "static";
    case tok::kMovingLeft: return "moving-left";
    case tok::kMovingRight: return "moving-right";
    case tok::kMovingUp: return "moving-up";
    case tok::kMovingDown: return "moving-down";
    case tok::kOrbiting: return "orbiting";
    case tok::kShrinking: return "shrinking";
    default: return "tok" + std::to_string(id);
  }
}

std::array<double, 2> SceneObject::center_at(std::size_t frame) const {
  const double t = static_cast<double>(frame);
  switch (motion) {
    case MotionKind::kStatic:
    case MotionKind::kShrink:
      return {x0, y0};
    case MotionKind::kLinear:
      return {x0 + vx * t, y0 + vy * t};
    case MotionKind::kOrbit:
      return {x0 + orbit_radius * std::cos(orbit_phase + orbit_step * t),
              y0 + orbit_radius * std::sin(orbit_phase + orbit_step * t)};
  }
  return {x0, y0};
}

double SceneObject::size_at(std::size_t frame) const {
  if (motion == MotionKind::kShrink)
    return size * std::pow(shrink_rate, static_cast<double>(frame));
  return size;
}

std::vector<double> SyntheticScene::render_frame(std::size_t t) const {
  std::vector<double> img(height * width * 3, kBackground);
  for (const SceneObject& o : objects) {
    const auto [cx, cy] = o.center_at(t);
    const double s = o.size_at(t);
    const Rgb rgb = color_rgb(o.color);
    const std::size_t x_lo = static_cast<std::size_t>(std::max(0.0, cx - s - 1.0));
    const std::size_t y_lo = static_cast<std::size_t>(std::max(0.0, cy - s - 1.0));
    const std::size_t x_hi = std::min(width, static_cast<std::size_t>(std::max(0.0, cx + s + 2.0)));
    const std::size_t y_hi = std::min(height, static_cast<std::size_t>(std::max(0.0, cy + s + 2.0)));
    for (std::size_t y = y_lo; y < y_hi; ++y)
      for (std::size_t x = x_lo; x < x_hi; ++x)
        if (inside_shape(o, cx, cy, s, static_cast<double>(x) + 0.5,
                         static_cast<double>(y) + 0.5)) {
          double* px = img.data() + (y * width + x) * 3;
          px[0] = rgb.r;
          px[1] = rgb.g;
          px[2] = rgb.b;
        }
  }
  return img;
}

Mask SyntheticScene::object_mask(std::size_t obj, std::size_t t) const {
  const SceneObject& o = objects.at(obj);
  const auto [cx, cy] = o.center_at(t);
  const double s = o.size_at(t);
  Mask m(height * width, 0);
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x)
      if (inside_shape(o, cx, cy, s, static_cast<double>(x) + 0.5,
                       static_cast<double>(y) + 0.5))
        m[y * width + x] = 1;
  return m;
}

Mask SyntheticScene::target_mask(std::size_t t) const {
  Mask m(height * width, 0);
  for (std::size_t obj : targets) {
    Mask om = object_mask(obj, t);
    for (std::size_t i = 0; i < m.size(); ++i) m[i] |= om[i];
  }
  return m;
}

std::array<double, 4> SyntheticScene::object_box(std::size_t obj, std::size_t t) const {
  Mask m = object_mask(obj, t);
  std::size_t x_min = width, x_max = 0, y_min = height, y_max = 0;
  bool any = false;
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x)
      if (m[y * width + x]) {
        any = true;
        x_min = std::min(x_min, x);
        x_max = std::max(x_max, x);
        y_min = std::min(y_min, y);
        y_max = std::max(y_max, y);
      }
  if (!any) throw std::logic_error("object_box: empty mask");
  const double wd = static_cast<double>(width), hd = static_cast<double>(height);
  return {(static_cast<double>(x_min + x_max) + 1.0) / (2.0 * wd),
          (static_cast<double>(y_min + y_max) + 1.0) / (2.0 * hd),
          static_cast<double>(x_max - x_min + 1) / wd,
          static_cast<double>(y_max - y_min + 1) / hd};
}

std::array<double, 4> SyntheticScene::target_box(std::size_t t) const {
  if (targets.size() == 1) return object_box(targets[0], t);
  // union box over targets
  double x1 = 1.0, y1 = 1.0, x2 = 0.0, y2 = 0.0;
  for (std::size_t obj : targets) {
    const auto b = object_box(obj, t);
    x1 = std::min(x1, b[0] - b[2] / 2);
    y1 = std::min(y1, b[1] - b[3] / 2);
    x2 = std::max(x2, b[0] + b[2] / 2);
    y2 = std::max(y2, b[1] + b[3] / 2);
  }
  return {(x1 + x2) / 2, (y1 + y2) / 2, x2 - x1, y2 - y1};
}

std::vector<std::size_t> match_program(const std::vector<SceneObject>& objects,
                                       const std::vector<int>& program) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < objects.size(); ++i) {
    const SceneObject& o = objects[i];
    bool ok = true;
    for (int t : program) {
      if (t >= tok::kRed && t <= tok::kCyan && o.color != t) ok = false;
      if (t >= tok::kCircle && t <= tok::kTriangle && shape_token(o.shape) != t) ok = false;
      if (t >= tok::kStatic && t <= tok::kShrinking && o.motion_token != t) ok = false;
    }
    if (ok) out.push_back(i);
  }
  return out;
}

namespace {

const int kColors[] = {tok::kRed, tok::kGreen, tok::kBlue, tok::kYellow, tok::kMagenta,
                       tok::kCyan};
const ShapeKind kShapes[] = {ShapeKind::kCircle, ShapeKind::kSquare, ShapeKind::kTriangle};

// Assigns a motion and derives its token. `allowed` filters the kinds.
void assign_motion(SceneObject& o, Rng& rng, std::size_t frames, std::size_t h, std::size_t w,
                   int forced_token = -1) {
  const double margin = o.size + 3.0;
  int token = forced_token;
  if (token < 0) {
    const int pick = static_cast<int>(rng.uniform_int(4));
    token = pick == 0   ? tok::kStatic
            : pick == 1 ? static_cast<int>(tok::kMovingLeft + rng.uniform_int(4))
            : pick == 2 ? tok::kOrbiting
                        : tok::kShrinking;
  }
  o.motion_token = token;
  o.vx = o.vy = 0.0;
  if (token == tok::kStatic) {
    o.motion = MotionKind::kStatic;
  } else if (token >= tok::kMovingLeft && token <= tok::kMovingDown) {
    o.motion = MotionKind::kLinear;
    const double speed = rng.uniform(1.6, 2.6);
    const double drift = rng.uniform(-0.4, 0.4);
    if (token == tok::kMovingLeft) { o.vx = -speed; o.vy = drift; }
    if (token == tok::kMovingRight) { o.vx = speed; o.vy = drift; }
    if (token == tok::kMovingUp) { o.vx = drift; o.vy = -speed; }
    if (token == tok::kMovingDown) { o.vx = drift; o.vy = speed; }
  } else if (token == tok::kOrbiting) {
    o.motion = MotionKind::kOrbit;
    o.orbit_radius = rng.uniform(3.5, 6.0);
    o.orbit_step = rng.uniform(0.5, 0.9) * (rng.uniform() < 0.5 ? 1.0 : -1.0);
    o.orbit_phase = rng.uniform(0.0, 6.283185307179586);
  } else {
    o.motion = MotionKind::kShrink;
    o.shrink_rate = rng.uniform(0.84, 0.90);
  }
  (void)frames;
  (void)h;
  (void)w;
  (void)margin;
}

bool place_object(SceneObject& o, Rng& rng, std::size_t frames, std::size_t h, std::size_t w) {
  const double wd = static_cast<double>(w), hd = static_cast<double>(h);
  for (int attempt = 0; attempt < 40; ++attempt) {
    const double extra = o.motion == MotionKind::kOrbit ? o.orbit_radius : 0.0;
    const double margin = o.size + extra + 2.0;
    if (2.0 * margin >= wd || 2.0 * margin >= hd) return false;
    o.x0 = rng.uniform(margin, wd - margin);
    o.y0 = rng.uniform(margin, hd - margin);
    bool ok = true;
    for (std::size_t t = 0; t < frames && ok; ++t) {
      const auto [cx, cy] = o.center_at(t);
      const double s = o.size_at(t) + 1.5;
      if (cx - s < 0 || cx + s >= wd || cy - s < 0 || cy + s >= hd) ok = false;
    }
    if (ok) return true;
  }
  return false;
}

bool objects_clear(const std::vector<SceneObject>& objects, std::size_t frames) {
  for (std::size_t t = 0; t < frames; ++t)
    for (std::size_t i = 0; i < objects.size(); ++i)
      for (std::size_t j = i + 1; j < objects.size(); ++j) {
        const auto a = objects[i].center_at(t);
        const auto b = objects[j].center_at(t);
        const double need = objects[i].size_at(t) + objects[j].size_at(t) + 3.0;
        const double dx = a[0] - b[0], dy = a[1] - b[1];
        if (dx * dx + dy * dy < need * need) return false;
      }
  return true;
}

}  // namespace

SyntheticScene generate_scene(std::uint64_t seed, int difficulty, std::size_t h, std::size_t w,
                              std::size_t frames) {
  if (difficulty < 0 || difficulty > 4)
    throw std::invalid_argument("generate_scene: difficulty must be in [0,4]");
  Rng rng(seed * 0x9e3779b97f4a7c15ULL + static_cast<std::uint64_t>(difficulty) + 1);

  for (int attempt = 0; attempt < 400; ++attempt) {
    SyntheticScene scene;
    scene.height = h;
    scene.width = w;
    scene.frames = frames;
    scene.seed = seed;
    scene.difficulty = difficulty;

    auto rand_color = [&] { return kColors[rng.uniform_int(6)]; };
    auto rand_shape = [&] { return kShapes[rng.uniform_int(3)]; };
    auto rand_size = [&] { return rng.uniform(7.0, 10.5) * static_cast<double>(w) / 64.0; };

    bool built = true;
    if (difficulty == 0) {
      SceneObject o;
      o.color = rand_color();
      o.shape = rand_shape();
      o.size = rand_size();
      assign_motion(o, rng, frames, h, w, tok::kStatic);
      built = place_object(o, rng, frames, h, w);
      scene.objects.push_back(o);
      scene.program = {o.color, shape_token(o.shape)};
      scene.targets = {0};
    } else if (difficulty == 1 || difficulty == 2) {
      const std::size_t count = 2 + rng.uniform_int(2);
      std::vector<std::pair<int, int>> used;  // (color, shape token)
      for (std::size_t i = 0; i < count && built; ++i) {
        SceneObject o;
        for (int tries = 0;; ++tries) {
          o.color = rand_color();
          o.shape = rand_shape();
          if (difficulty == 2 && i == 1) {
            // force a distractor sharing the target's color or shape
            const SceneObject& target = scene.objects[0];
            if (rng.uniform() < 0.5) {
              o.color = target.color;
              while (shape_token(o.shape) == shape_token(target.shape)) o.shape = rand_shape();
            } else {
              o.shape = target.shape;
              while (o.color == target.color) o.color = rand_color();
            }
          }
          const auto key = std::make_pair(o.color, shape_token(o.shape));
          if (std::find(used.begin(), used.end(), key) == used.end()) {
            used.push_back(key);
            break;
          }
          if (tries > 60) {
            built = false;
            break;
          }
        }
        if (!built) break;
        o.size = rand_size();
        assign_motion(o, rng, frames, h, w);
        built = place_object(o, rng, frames, h, w);
        scene.objects.push_back(o);
      }
      if (built) {
        scene.program = {scene.objects[0].color, shape_token(scene.objects[0].shape)};
        scene.targets = {0};
      }
    } else if (difficulty == 3) {
      // motion-only: attribute matching is ambiguous, motion disambiguates
      SceneObject mover;
      mover.color = rand_color();
      mover.shape = rand_shape();
      mover.size = rand_size();
      const int motion_tok = static_cast<int>(tok::kMovingLeft + rng.uniform_int(4));
      assign_motion(mover, rng, frames, h, w, motion_tok);
      built = place_object(mover, rng, frames, h, w);

      SceneObject twin = mover;  // identical attributes
      assign_motion(twin, rng, frames, h, w, tok::kStatic);
      built = built && place_object(twin, rng, frames, h, w);
      scene.objects = {mover, twin};
      if (rng.uniform() < 0.5) std::swap(scene.objects[0], scene.objects[1]);
      scene.program = {mover.color, shape_token(mover.shape), motion_tok};
      scene.targets.clear();
      for (std::size_t i = 0; i < 2; ++i)
        if (scene.objects[i].motion_token == motion_tok) scene.targets.push_back(i);
    } else {
      // multi-target: two attribute twins are both referred to
      const int color = rand_color();
      const ShapeKind shape = rand_shape();
      for (int i = 0; i < 2 && built; ++i) {
        SceneObject o;
        o.color = color;
        o.shape = shape;
        o.size = rand_size();
        assign_motion(o, rng, frames, h, w);
        built = place_object(o, rng, frames, h, w);
        scene.objects.push_back(o);
      }
      SceneObject other;
      do {
        other.color = rand_color();
        other.shape = rand_shape();
      } while (other.color == color && shape_token(other.shape) == shape_token(shape));
      other.size = rand_size();
      assign_motion(other, rng, frames, h, w);
      built = built && place_object(other, rng, frames, h, w);
      scene.objects.push_back(other);
      scene.program = {color, shape_token(shape)};
      scene.targets = {0, 1};
    }

    if (!built || !objects_clear(scene.objects, frames)) continue;
    if (match_program(scene.objects, scene.program) != scene.targets) continue;
    return scene;
  }
  throw std::runtime_error("generate_scene: could not build a valid scene for seed " +
                           std::to_string(seed));
}

Mask downsample_mask(const Mask& m, std::size_t h, std::size_t w, std::size_t factor) {
  if (factor == 0 || h % factor != 0 || w % factor != 0)
    throw std::invalid_argument("downsample_mask: extents not divisible by factor");
  const std::size_t oh = h / factor, ow = w / factor;
  Mask out(oh * ow, 0);
  const std::size_t half = factor * factor / 2;
  for (std::size_t y = 0; y < oh; ++y)
    for (std::size_t x = 0; x < ow; ++x) {
      std::size_t count = 0;
      for (std::size_t dy = 0; dy < factor; ++dy)
        for (std::size_t dx = 0; dx < factor; ++dx)
          count += m[(y * factor + dy) * w + (x * factor + dx)] ? 1 : 0;
      out[y * ow + x] = count * 2 >= factor * factor ? 1 : 0;
      (void)half;
    }
  return out;
}

std::string rle_encode_frame(std::size_t frame_id, const Mask& m) {
  std::ostringstream os;
  os << "frame " << frame_id << "\n";
  std::size_t i = 0;
  std::uint8_t current = 0;  // runs start with background
  bool first = true;
  while (i < m.size()) {
    std::size_t run = 0;
    while (i < m.size() && (m[i] != 0) == (current != 0)) {
      ++run;
      ++i;
    }
    os << (first ? "" : " ") << run;
    first = false;
    current = current ? 0 : 1;
  }
  if (m.empty()) os << 0;
  os << "\n";
  return os.str();
}

void write_pgm(const std::string& path, const Mask& m, std::size_t h, std::size_t w) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("write_pgm: cannot open " + path);
  f << "P5\n" << w << " " << h << "\n255\n";
  for (std::uint8_t v : m) f.put(v ? static_cast<char>(255) : 0);
}

void write_ppm(const std::string& path, const std::vector<double>& rgb, std::size_t h,
               std::size_t w) {
  if (rgb.size() != h * w * 3) throw std::invalid_argument("write_ppm: bad buffer");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("write_ppm: cannot open " + path);
  f << "P6\n" << w << " " << h << "\n255\n";
  for (double v : rgb) {
    const int byte = static_cast<int>(std::lround(std::min(1.0, std::max(0.0, v)) * 255.0));
    f.put(static_cast<char>(byte));
  }
}

}  // namespace rvos
