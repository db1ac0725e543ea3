#include "rvos/model.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace rvos {

void RunConfig::validate() const {
  if (d < 2 || d % heads != 0)
    throw std::invalid_argument("config: d must be divisible by heads");
  if (height % 8 != 0 || width % 8 != 0)
    throw std::invalid_argument("config: height and width must be divisible by 8");
  if (n_q < 1 || n_q > (height / 8) * (width / 8))
    throw std::invalid_argument("config: n_q outside [1, (H/8)*(W/8)]");
  if (layers < 1 || k < 1 || frames < 1 || l_t < 1)
    throw std::invalid_argument("config: layers, k, l_t and frames must be >= 1");
  if (alpha < 0.0 || alpha > 1.0)
    throw std::invalid_argument("config: alpha must be in [0,1]");
  if (num_points < 1) throw std::invalid_argument("config: num_points must be >= 1");
  if (difficulty < -1 || difficulty > 4)
    throw std::invalid_argument("config: difficulty must be -1 or in [0,4]");
}

namespace {

template <class T>
T parse_number(const std::string& key, const std::string& value) {
  std::istringstream is(value);
  T out;
  is >> out;
  if (!is || !is.eof())
    throw std::invalid_argument("config: bad value '" + value + "' for key " + key);
  return out;
}

}  // namespace

RunConfig parse_config_text(const std::string& text) {
  RunConfig cfg;
  std::istringstream is(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    const auto last = line.find_last_not_of(" \t\r");
    line = line.substr(first, last - first + 1);
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(line_no) +
                                  ": expected key=value");
    std::string key = line.substr(0, eq);
    std::string value = line.substr(eq + 1);
    const auto kend = key.find_last_not_of(" \t");
    key = key.substr(0, kend + 1);
    const auto vstart = value.find_first_not_of(" \t");
    value = vstart == std::string::npos ? "" : value.substr(vstart);

    if (key == "d") cfg.d = parse_number<std::size_t>(key, value);
    else if (key == "heads") cfg.heads = parse_number<std::size_t>(key, value);
    else if (key == "n_q") cfg.n_q = parse_number<std::size_t>(key, value);
    else if (key == "layers") cfg.layers = parse_number<std::size_t>(key, value);
    else if (key == "k") cfg.k = parse_number<std::size_t>(key, value);
    else if (key == "l_t") cfg.l_t = parse_number<std::size_t>(key, value);
    else if (key == "l_m") cfg.l_m = parse_number<std::size_t>(key, value);
    else if (key == "num_points") cfg.num_points = parse_number<std::size_t>(key, value);
    else if (key == "frames") cfg.frames = parse_number<std::size_t>(key, value);
    else if (key == "height") cfg.height = parse_number<std::size_t>(key, value);
    else if (key == "width") cfg.width = parse_number<std::size_t>(key, value);
    else if (key == "min_queries") cfg.min_queries = parse_number<std::size_t>(key, value);
    else if (key == "alpha") cfg.alpha = parse_number<double>(key, value);
    else if (key == "seed") cfg.seed = parse_number<std::uint64_t>(key, value);
    else if (key == "lr") cfg.lr = parse_number<double>(key, value);
    else if (key == "steps") cfg.steps = parse_number<std::size_t>(key, value);
    else if (key == "checkpoint_every") cfg.checkpoint_every = parse_number<std::size_t>(key, value);
    else if (key == "num_scenes") cfg.num_scenes = parse_number<std::size_t>(key, value);
    else if (key == "difficulty") cfg.difficulty = parse_number<int>(key, value);
    else if (key == "lambda_cls") cfg.weights.cls = parse_number<double>(key, value);
    else if (key == "lambda_l1") cfg.weights.l1 = parse_number<double>(key, value);
    else if (key == "lambda_giou") cfg.weights.giou = parse_number<double>(key, value);
    else if (key == "lambda_dice") cfg.weights.dice = parse_number<double>(key, value);
    else if (key == "lambda_focal") cfg.weights.focal = parse_number<double>(key, value);
    else if (key == "lambda_proj") cfg.weights.proj = parse_number<double>(key, value);
    else throw std::invalid_argument("config: unknown key '" + key + "'");
  }
  cfg.validate();
  return cfg;
}

RunConfig parse_config_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("config: cannot open " + path);
  std::ostringstream buf;
  buf << f.rdbuf();
  return parse_config_text(buf.str());
}

std::string config_to_text(const RunConfig& cfg) {
  std::ostringstream os;
  os << "d=" << cfg.d << "\nheads=" << cfg.heads << "\nn_q=" << cfg.n_q
     << "\nlayers=" << cfg.layers << "\nk=" << cfg.k << "\nl_t=" << cfg.l_t
     << "\nl_m=" << cfg.l_m << "\nnum_points=" << cfg.num_points << "\nframes=" << cfg.frames
     << "\nheight=" << cfg.height << "\nwidth=" << cfg.width
     << "\nmin_queries=" << cfg.min_queries << "\nalpha=" << cfg.alpha
     << "\nseed=" << cfg.seed << "\nlr=" << cfg.lr << "\nsteps=" << cfg.steps
     << "\ncheckpoint_every=" << cfg.checkpoint_every << "\nnum_scenes=" << cfg.num_scenes
     << "\ndifficulty=" << cfg.difficulty << "\nlambda_cls=" << cfg.weights.cls
     << "\nlambda_l1=" << cfg.weights.l1 << "\nlambda_giou=" << cfg.weights.giou
     << "\nlambda_dice=" << cfg.weights.dice << "\nlambda_focal=" << cfg.weights.focal
     << "\nlambda_proj=" << cfg.weights.proj << "\n";
  return os.str();
}

Model::Model(const RunConfig& cfg)
    : cfg_(cfg),
      frontend_(FrontendConfig{cfg.d, cfg.heads, cfg.height, cfg.width, tok::kVocabSize, 8,
                               std::min<std::size_t>(8, cfg.d)}),
      qdec_(QueryDecoderConfig{cfg.d, cfg.heads, cfg.layers, 4}),
      mdec_(MaskDecoderConfig{cfg.d, cfg.heads, cfg.l_m, cfg.num_points, 4}),
      temporal_(TemporalConfig{cfg.d, cfg.heads, cfg.l_t, cfg.alpha}) {
  cfg_.validate();
}

void Model::init_params(ParamStore& store) const {
  Rng rng(cfg_.seed);
  frontend_.init_params(store, rng);
  qdec_.init_params(store, rng);
  mdec_.init_params(store, rng);
  temporal_.init_params(store, rng);
}

VideoForward Model::forward_video(ParamCtx& ctx, const SyntheticScene& scene,
                                  const ForwardOptions& opts) const {
  std::vector<std::vector<double>> frames;
  frames.reserve(scene.frames);
  for (std::size_t t = 0; t < scene.frames; ++t) frames.push_back(scene.render_frame(t));
  return forward_frames(ctx, frames, scene.program, opts);
}

VideoForward Model::forward_frames(ParamCtx& ctx,
                                   const std::vector<std::vector<double>>& frames,
                                   const std::vector<int>& program,
                                   const ForwardOptions& opts) const {
  const std::size_t t_count = frames.size();
  if (t_count == 0) throw std::invalid_argument("forward: no frames");
  Tape& tape = ctx.tape();

  DecodeOptions decode_opts;
  decode_opts.k = opts.k_override.value_or(cfg_.k);
  decode_opts.min_queries = cfg_.min_queries;
  decode_opts.mode = opts.prune_mode;
  Rng random_prune_rng(opts.random_prune_seed);
  if (decode_opts.mode == PruneMode::kRandom) decode_opts.rng = &random_prune_rng;

  VideoForward out;
  std::vector<Tensor> object_sets;     // T x [N_s, d]
  std::vector<Tensor> sentences;       // T x [d]
  std::vector<TextFeatures> texts;
  std::vector<Tensor> f_segs;
  for (std::size_t t = 0; t < t_count; ++t) {
    Tensor frame = tape.input({cfg_.height, cfg_.width, 3}, frames[t]);
    Tensor raw = frontend_.encode_frame(ctx, frame);
    TextFeatures raw_text = frontend_.encode_text(ctx, program);
    auto [feat, text] = frontend_.fuse(ctx, raw, raw_text);
    auto [queries, ledger] = qdec_.decode_frame(ctx, feat, text, cfg_.n_q, decode_opts);
    object_sets.push_back(queries.embeddings);
    sentences.push_back(text.cls());
    texts.push_back(text);
    f_segs.push_back(feat.f_seg);
    out.ledgers.push_back(std::move(ledger));
  }

  std::vector<Tensor> enhanced;
  if (opts.bypass_enhancer) {
    // tracker alignment only; the temporal decoder is skipped
    ObjectMemory memory;
    memory.rows = object_sets[0].shape()[0];
    memory.dim = cfg_.d;
    memory.alpha = cfg_.alpha;
    memory.m.assign(object_sets[0].values().begin(), object_sets[0].values().end());
    enhanced.push_back(object_sets[0]);
    out.permutations.push_back(std::vector<std::size_t>());
    for (std::size_t t = 1; t < t_count; ++t) {
      auto [aligned, perm] = align_objects(memory, object_sets[t]);
      update_memory(memory, aligned.values(), sentences[t].values());
      enhanced.push_back(aligned);
      out.permutations.push_back(std::move(perm));
    }
  } else {
    EnhancedVideo video = temporal_.enhance(ctx, object_sets, sentences);
    enhanced = std::move(video.frames);
    out.permutations = std::move(video.permutations);
  }

  const std::size_t slots = enhanced[0].shape()[0];
  out.mask_h = cfg_.height / 4;
  out.mask_w = cfg_.width / 4;
  out.candidates.assign(slots, PredictionSequence{});
  out.values.assign(slots, TrajectoryValues{});
  for (std::size_t t = 0; t < t_count; ++t) {
    for (std::size_t i = 0; i < slots; ++i) {
      Tensor emb = reshape(slice_rows(enhanced[t], i, i + 1), Shape{cfg_.d});
      BoxPrediction box = mdec_.box_head(ctx, emb);
      Tensor mask_emb = mdec_.mask_decode(ctx, emb, box, f_segs[t], texts[t]);
      MaskLogits logits = mask_generate(mask_emb, f_segs[t]);
      Tensor cls = classification_score(emb, texts[t]);

      out.candidates[i].frames.push_back(FramePrediction{cls, box.cxcywh, logits});
      out.values[i].cls.push_back(cls.item());
      Mask m(out.mask_h * out.mask_w, 0);
      const auto lv = logits.grid.values();
      for (std::size_t px = 0; px < m.size(); ++px) m[px] = lv[px] > 0.0 ? 1 : 0;
      out.values[i].masks.push_back(std::move(m));
    }
  }
  return out;
}

GroundTruthSequence scene_ground_truth(const SyntheticScene& scene) {
  GroundTruthSequence gt;
  gt.mask_h = scene.height / 4;
  gt.mask_w = scene.width / 4;
  for (std::size_t t = 0; t < scene.frames; ++t) {
    GtFrame frame;
    frame.present = true;
    frame.box = scene.target_box(t);
    Mask down = downsample_mask(scene.target_mask(t), scene.height, scene.width, 4);
    frame.mask.assign(down.begin(), down.end());
    gt.frames.push_back(std::move(frame));
  }
  return gt;
}

}  // namespace rvos
