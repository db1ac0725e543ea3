#include "rvos/temporal.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "rvos/attention.hpp"
#include "rvos/losses.hpp"

namespace rvos {

namespace {

double cosine_or_zero(const double* a, const double* b, std::size_t d) {
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa < 1e-24 || bb < 1e-24) return 0.0;
  return ab / (std::sqrt(aa) * std::sqrt(bb));
}

std::string block_param(std::size_t block, const char* part) {
  return "temp.block" + std::to_string(block) + "." + part;
}

}  // namespace

std::pair<Tensor, std::vector<std::size_t>> align_objects(const ObjectMemory& memory,
                                                          const Tensor& objects) {
  const Shape& s = objects.shape();
  if (s.size() != 2 || s[0] != memory.rows || s[1] != memory.dim)
    throw std::invalid_argument("align_objects: objects " + shape_str(s) +
                                " do not match memory " + std::to_string(memory.rows) + "x" +
                                std::to_string(memory.dim));
  const std::size_t n = memory.rows, d = memory.dim;
  const auto ov = objects.values();
  std::vector<double> cost(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      cost[i * n + j] = -cosine_or_zero(memory.m.data() + i * d, ov.data() + j * d, d);
  Assignment assign = hungarian(cost, n, n);
  std::vector<std::size_t> perm(n);
  for (const auto& [row, col] : assign.pairs) perm[row] = col;
  return {gather_rows(objects, perm), perm};
}

void update_memory(ObjectMemory& memory, std::span<const double> aligned,
                   std::span<const double> sentence) {
  const std::size_t n = memory.rows, d = memory.dim;
  if (aligned.size() != n * d || sentence.size() != d)
    throw std::invalid_argument("update_memory: size mismatch");
  for (std::size_t i = 0; i < n; ++i) {
    double c = cosine_or_zero(aligned.data() + i * d, sentence.data(), d);
    c = std::min(1.0, std::max(0.0, c));
    const double gate = memory.alpha * c;
    for (std::size_t j = 0; j < d; ++j) {
      const double old_v = memory.m[i * d + j];
      const double new_v = aligned[i * d + j];
      double blended = (1.0 - gate) * old_v + gate * new_v;
      blended = std::min(std::max(blended, std::min(old_v, new_v)), std::max(old_v, new_v));
      memory.m[i * d + j] = blended;
    }
  }
}

void TemporalEnhancer::init_params(ParamStore& store, Rng& rng) const {
  const std::size_t d = cfg_.d;
  for (std::size_t b = 0; b < cfg_.blocks; ++b) {
    for (const char* part : {"self", "cross"})
      for (const char* w : {".wq", ".wk", ".wv", ".wo"})
        store.define(block_param(b, part) + w, {d, d}, xavier_uniform(rng, d, d, d * d));
    for (const char* part : {"self_ln", "eq_ln"}) {
      store.define(block_param(b, part) + ".g", {d}, std::vector<double>(d, 1.0));
      store.define(block_param(b, part) + ".b", {d}, std::vector<double>(d, 0.0));
    }
  }
}

std::vector<Tensor> TemporalEnhancer::temporal_block(ParamCtx& ctx,
                                                     const std::vector<Tensor>& frames,
                                                     const std::vector<Tensor>& sentences,
                                                     std::size_t block) const {
  if (frames.empty() || frames.size() != sentences.size())
    throw std::invalid_argument("temporal_block: need equal nonzero frame/sentence counts");
  const std::size_t t_count = frames.size();
  const std::size_t slots = frames[0].shape().at(0);
  const std::size_t d = frames[0].shape().at(1);

  AttentionParams self{ctx(block_param(block, "self") + ".wq"),
                       ctx(block_param(block, "self") + ".wk"),
                       ctx(block_param(block, "self") + ".wv"),
                       ctx(block_param(block, "self") + ".wo")};
  AttentionParams cross{ctx(block_param(block, "cross") + ".wq"),
                        ctx(block_param(block, "cross") + ".wk"),
                        ctx(block_param(block, "cross") + ".wv"),
                        ctx(block_param(block, "cross") + ".wo")};
  Tensor self_g = ctx(block_param(block, "self_ln") + ".g");
  Tensor self_b = ctx(block_param(block, "self_ln") + ".b");
  Tensor eq_g = ctx(block_param(block, "eq_ln") + ".g");
  Tensor eq_b = ctx(block_param(block, "eq_ln") + ".b");

  // (a) temporal self-attention per object slot
  std::vector<Tensor> per_slot;  // slots x [T, d]
  per_slot.reserve(slots);
  for (std::size_t i = 0; i < slots; ++i) {
    std::vector<Tensor> rows;
    rows.reserve(t_count);
    for (std::size_t t = 0; t < t_count; ++t) rows.push_back(slice_rows(frames[t], i, i + 1));
    Tensor track = concat_rows(rows);
    Tensor mixed = layer_norm(add(track, mhsa(track, self, cfg_.heads).output), self_g, self_b);
    per_slot.push_back(mixed);
  }
  std::vector<Tensor> updated;  // T x [N_s, d]
  updated.reserve(t_count);
  for (std::size_t t = 0; t < t_count; ++t) {
    std::vector<Tensor> rows;
    rows.reserve(slots);
    for (std::size_t i = 0; i < slots; ++i) rows.push_back(slice_rows(per_slot[i], t, t + 1));
    updated.push_back(concat_rows(rows));
  }

  // (b) sentences attend over every object embedding of the window
  std::vector<Tensor> sentence_rows;
  sentence_rows.reserve(t_count);
  for (const Tensor& s : sentences) sentence_rows.push_back(reshape(s, Shape{1, d}));
  Tensor sentence_stack = concat_rows(sentence_rows);  // [T, d]
  Tensor all_objects = concat_rows(updated);           // [T*N_s, d]
  Tensor context = cross_attention(sentence_stack, all_objects, cross, cfg_.heads).output;

  // (c) residual enhancement, one context vector broadcast per frame
  std::vector<Tensor> out;
  out.reserve(t_count);
  for (std::size_t t = 0; t < t_count; ++t) {
    Tensor ctx_vec = reshape(slice_rows(context, t, t + 1), Shape{d});
    out.push_back(layer_norm(add_rowwise(updated[t], ctx_vec), eq_g, eq_b));
  }
  return out;
}

EnhancedVideo TemporalEnhancer::enhance(ParamCtx& ctx, const std::vector<Tensor>& frames,
                                        const std::vector<Tensor>& sentences) const {
  if (frames.empty() || frames.size() != sentences.size())
    throw std::invalid_argument("enhance: need equal nonzero frame/sentence counts");
  const std::size_t slots = frames[0].shape().at(0);
  const std::size_t d = frames[0].shape().at(1);

  EnhancedVideo video;
  video.memory.rows = slots;
  video.memory.dim = d;
  video.memory.alpha = cfg_.alpha;
  video.memory.m.assign(frames[0].values().begin(), frames[0].values().end());

  std::vector<std::size_t> identity(slots);
  for (std::size_t i = 0; i < slots; ++i) identity[i] = i;
  video.frames.push_back(frames[0]);
  video.permutations.push_back(identity);

  for (std::size_t t = 1; t < frames.size(); ++t) {
    auto [aligned, perm] = align_objects(video.memory, frames[t]);
    update_memory(video.memory, aligned.values(), sentences[t].values());
    video.frames.push_back(aligned);
    video.permutations.push_back(std::move(perm));
  }

  for (std::size_t b = 0; b < cfg_.blocks; ++b)
    video.frames = temporal_block(ctx, video.frames, sentences, b);
  return video;
}

}  // namespace rvos
