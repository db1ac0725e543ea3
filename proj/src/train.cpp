#include "rvos/train.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>

#include "rvos/serialize.hpp"

namespace rvos {

namespace fs = std::filesystem;

std::vector<SyntheticScene> train_scenes(const RunConfig& cfg) {
  std::vector<SyntheticScene> scenes;
  scenes.reserve(cfg.num_scenes);
  for (std::size_t i = 0; i < cfg.num_scenes; ++i) {
    const int difficulty = cfg.difficulty < 0 ? static_cast<int>(i % 3) : cfg.difficulty;
    scenes.push_back(generate_scene(cfg.seed * 1000 + i, difficulty, cfg.height, cfg.width,
                                    cfg.frames));
  }
  return scenes;
}

std::vector<SyntheticScene> build_suite(const std::string& name, std::size_t count,
                                        const RunConfig& cfg) {
  std::uint64_t base = 0;
  std::vector<SyntheticScene> scenes;
  scenes.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    int difficulty;
    if (name == "standard") {
      base = 9000;
      difficulty = static_cast<int>(i % 3);
    } else if (name == "motion") {
      base = 7000;
      difficulty = 3;
    } else if (name == "attribute") {
      base = 8000;
      difficulty = 2;
    } else {
      throw std::invalid_argument("unknown suite '" + name +
                                  "' (expected standard|motion|attribute)");
    }
    scenes.push_back(generate_scene(base + i, difficulty, cfg.height, cfg.width, cfg.frames));
  }
  return scenes;
}

void save_checkpoint(const std::string& dir, const ParamStore& store, const RunConfig& cfg,
                     std::size_t step) {
  fs::create_directories(dir);
  std::ofstream bin(fs::path(dir) / "tensors.bin", std::ios::binary | std::ios::trunc);
  if (!bin) throw std::runtime_error("checkpoint: cannot write tensors.bin in " + dir);
  std::ostringstream manifest;
  manifest << "rvos-checkpoint v1\n";
  manifest << "step " << step << "\n";
  {
    std::istringstream cfg_lines(config_to_text(cfg));
    std::string line;
    while (std::getline(cfg_lines, line)) manifest << "config " << line << "\n";
  }
  std::size_t offset = 0;
  for (const auto& [name, e] : store.entries()) {
    manifest << "tensor " << name << " " << offset << " " << e.shape.size();
    for (std::size_t ext : e.shape) manifest << " " << ext;
    manifest << "\n";
    write_tensor_record(bin, e.shape, e.value);
    offset += tensor_record_size(e.shape);
  }
  std::ofstream mf(fs::path(dir) / "manifest.txt", std::ios::trunc);
  if (!mf) throw std::runtime_error("checkpoint: cannot write manifest.txt in " + dir);
  mf << manifest.str();
}

Checkpoint load_checkpoint(const std::string& dir) {
  std::ifstream mf(fs::path(dir) / "manifest.txt");
  if (!mf) throw std::runtime_error("checkpoint: cannot open manifest in " + dir);
  std::string line;
  if (!std::getline(mf, line) || line != "rvos-checkpoint v1")
    throw std::runtime_error("checkpoint: unrecognized manifest header");

  Checkpoint ckpt;
  std::string config_text;
  struct Rec {
    std::string name;
    std::size_t offset;
    Shape shape;
  };
  std::vector<Rec> recs;
  while (std::getline(mf, line)) {
    std::istringstream is(line);
    std::string kind;
    is >> kind;
    if (kind == "step") {
      is >> ckpt.step;
    } else if (kind == "config") {
      std::string rest;
      std::getline(is, rest);
      const auto start = rest.find_first_not_of(' ');
      if (start != std::string::npos) config_text += rest.substr(start) + "\n";
    } else if (kind == "tensor") {
      Rec r;
      std::size_t rank = 0;
      is >> r.name >> r.offset >> rank;
      r.shape.resize(rank);
      for (std::size_t i = 0; i < rank; ++i) is >> r.shape[i];
      if (!is) throw std::runtime_error("checkpoint: bad tensor line '" + line + "'");
      recs.push_back(std::move(r));
    } else if (!kind.empty()) {
      throw std::runtime_error("checkpoint: unexpected manifest line '" + line + "'");
    }
  }
  ckpt.config = parse_config_text(config_text);

  std::ifstream bin(fs::path(dir) / "tensors.bin", std::ios::binary);
  if (!bin) throw std::runtime_error("checkpoint: cannot open tensors.bin in " + dir);
  for (const Rec& r : recs) {
    bin.seekg(static_cast<std::streamoff>(r.offset));
    TensorRecord rec = read_tensor_record(bin);
    if (rec.shape != r.shape)
      throw std::runtime_error("checkpoint: tensor " + r.name + " shape mismatch");
    ckpt.store.define(r.name, rec.shape, std::move(rec.values));
  }
  return ckpt;
}

TrainResult train(const RunConfig& cfg, const std::string& out_dir, std::ostream* log) {
  cfg.validate();
  fs::create_directories(out_dir);
  Model model(cfg);
  ParamStore store;
  model.init_params(store);

  const std::vector<SyntheticScene> scenes = train_scenes(cfg);
  std::vector<std::vector<std::vector<double>>> rendered(scenes.size());
  std::vector<GroundTruthSequence> gts(scenes.size());
  std::vector<std::vector<int>> programs(scenes.size());
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    for (std::size_t t = 0; t < scenes[i].frames; ++t)
      rendered[i].push_back(scenes[i].render_frame(t));
    gts[i] = scene_ground_truth(scenes[i]);
    programs[i] = scenes[i].program;
  }

  Adam adam(AdamConfig{cfg.lr, 0.9, 0.999, 1e-8});
  TrainResult result;
  Tape tape;
  std::string last_checkpoint;
  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    const std::size_t idx = (step - 1) % scenes.size();
    tape.clear();
    ParamCtx ctx(tape, store);
    VideoForward fwd = model.forward_frames(ctx, rendered[idx], programs[idx]);
    auto [loss, positive] = training_loss(gts[idx], fwd.candidates, cfg.weights);
    const double loss_value = loss.item();
    if (!std::isfinite(loss_value)) {
      result.aborted_on_nan = true;
      if (log)
        *log << "step " << step << ": non-finite loss, aborting; last checkpoint: "
             << (last_checkpoint.empty() ? "<none>" : last_checkpoint) << "\n";
      break;
    }
    tape.backward(loss);
    adam.step(store, ctx);
    result.loss_curve.push_back(loss_value);
    result.steps_done = step;
    if (log && (step == 1 || step % 50 == 0))
      *log << "step " << step << " scene " << idx << " loss " << loss_value << " (positive "
           << positive << ")\n";
    if (cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0) {
      std::ostringstream name;
      name << out_dir << "/checkpoint_step_" << step;
      save_checkpoint(name.str(), store, cfg, step);
      last_checkpoint = name.str();
    }
  }

  if (!result.aborted_on_nan) {
    result.final_checkpoint = out_dir + "/checkpoint_final";
    save_checkpoint(result.final_checkpoint, store, cfg, result.steps_done);
  } else {
    result.final_checkpoint = last_checkpoint;
  }

  std::ofstream curve(fs::path(out_dir) / "loss_curve.csv", std::ios::trunc);
  curve << "step,loss\n";
  for (std::size_t i = 0; i < result.loss_curve.size(); ++i)
    curve << (i + 1) << "," << result.loss_curve[i] << "\n";
  return result;
}

EvalResult evaluate_scenes(const Model& model, ParamStore& store,
                           const std::vector<SyntheticScene>& scenes,
                           const ForwardOptions& opts, double multi_threshold) {
  std::vector<EvalResult::Video> videos;
  Tape tape;
  for (const SyntheticScene& scene : scenes) {
    tape.clear();
    ParamCtx ctx(tape, store);
    VideoForward fwd = model.forward_video(ctx, scene, opts);

    std::vector<std::vector<double>> scores;
    scores.reserve(fwd.values.size());
    for (const TrajectoryValues& v : fwd.values) scores.push_back(v.cls);
    std::vector<std::size_t> picks;
    if (scene.targets.size() > 1) {
      picks = select_multi_scores(scores, multi_threshold);
    } else {
      picks = {select_best_scores(scores)};
    }

    double j_sum = 0.0, f_sum = 0.0;
    for (std::size_t t = 0; t < scene.frames; ++t) {
      Mask pred(fwd.mask_h * fwd.mask_w, 0);
      for (std::size_t pick : picks)
        for (std::size_t px = 0; px < pred.size(); ++px)
          pred[px] |= fwd.values[pick].masks[t][px];
      const Mask gt = downsample_mask(scene.target_mask(t), scene.height, scene.width, 4);
      j_sum += region_similarity(pred, gt, fwd.mask_h, fwd.mask_w);
      f_sum += contour_accuracy(pred, gt, fwd.mask_h, fwd.mask_w);
    }
    EvalResult::Video v;
    v.id = "scene" + std::to_string(scene.seed) + "-d" + std::to_string(scene.difficulty);
    v.j = j_sum / static_cast<double>(scene.frames);
    v.f = f_sum / static_cast<double>(scene.frames);
    videos.push_back(std::move(v));
  }
  return EvalResult::from_videos(std::move(videos));
}

std::string export_masks_rle(const std::vector<Mask>& masks) {
  std::ostringstream os;
  for (std::size_t t = 0; t < masks.size(); ++t) os << rle_encode_frame(t, masks[t]);
  return os.str();
}

}  // namespace rvos
