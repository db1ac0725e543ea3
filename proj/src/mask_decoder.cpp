#include "rvos/mask_decoder.hpp"

#include <cmath>
#include <stdexcept>

#include "rvos/attention.hpp"

namespace rvos {

Tensor BoxPrediction::center() const {
  return reshape(slice_cols(reshape(cxcywh, Shape{1, 4}), 0, 2), Shape{2});
}

MaskLogits mask_generate(const Tensor& mask_embedding, const Tensor& f_seg) {
  const Shape& s = f_seg.shape();
  if (s.size() != 3)
    throw std::invalid_argument("mask_generate: f_seg must be [h,w,d], got " + shape_str(s));
  const std::size_t d = mask_embedding.shape().at(0);
  if (s[2] != d)
    throw std::invalid_argument("mask_generate: embedding width " + std::to_string(d) +
                                " vs f_seg channels " + std::to_string(s[2]));
  Tensor flat = reshape(f_seg, Shape{s[0] * s[1], d});
  Tensor logits = scale(matmul(flat, reshape(mask_embedding, Shape{d, 1})),
                        1.0 / std::sqrt(static_cast<double>(d)));
  return MaskLogits{reshape(logits, Shape{s[0], s[1]})};
}

namespace {

std::string block_name(std::size_t block, const char* part) {
  return "mask.block" + std::to_string(block) + "." + part;
}

}  // namespace

void MaskDecoder::init_params(ParamStore& store, Rng& rng) const {
  const std::size_t d = cfg_.d, hidden = cfg_.ffn_mult * cfg_.d, np = cfg_.num_points;
  store.define("mask.box.w1", {d, d}, xavier_uniform(rng, d, d, d * d));
  store.define("mask.box.b1", {d}, std::vector<double>(d, 0.0));
  store.define("mask.box.w2", {d, d}, xavier_uniform(rng, d, d, d * d));
  store.define("mask.box.b2", {d}, std::vector<double>(d, 0.0));
  store.define("mask.box.w3", {d, 4}, std::vector<double>(d * 4, 0.0));
  store.define("mask.box.b3", {4}, std::vector<double>(4, 0.0));
  for (std::size_t b = 0; b < cfg_.blocks; ++b) {
    // Zero-initialized projectors start sampling at the grounded center
    // with uniform weights.
    store.define(block_name(b, "off"), {d, 2 * np}, std::vector<double>(d * 2 * np, 0.0));
    store.define(block_name(b, "wt"), {d, np}, std::vector<double>(d * np, 0.0));
    auto ln = [&](const char* part) {
      store.define(block_name(b, part) + ".g", {d}, std::vector<double>(d, 1.0));
      store.define(block_name(b, part) + ".b", {d}, std::vector<double>(d, 0.0));
    };
    ln("def_ln");
    for (const char* w : {".wq", ".wk", ".wv", ".wo"})
      store.define(block_name(b, "txt") + w, {d, d}, xavier_uniform(rng, d, d, d * d));
    ln("txt_ln");
    store.define(block_name(b, "ffn.w1"), {d, hidden}, xavier_uniform(rng, d, hidden, d * hidden));
    store.define(block_name(b, "ffn.b1"), {hidden}, std::vector<double>(hidden, 0.0));
    store.define(block_name(b, "ffn.w2"), {hidden, d}, xavier_uniform(rng, hidden, d, hidden * d));
    store.define(block_name(b, "ffn.b2"), {d}, std::vector<double>(d, 0.0));
    ln("ffn_ln");
  }
}

BoxPrediction MaskDecoder::box_head(ParamCtx& ctx, const Tensor& object_embedding) const {
  const std::size_t d = cfg_.d;
  Tensor row = reshape(object_embedding, Shape{1, d});
  Tensor h1 = relu(add_rowwise(matmul(row, ctx("mask.box.w1")), ctx("mask.box.b1")));
  Tensor h2 = relu(add_rowwise(matmul(h1, ctx("mask.box.w2")), ctx("mask.box.b2")));
  Tensor logits = add_rowwise(matmul(h2, ctx("mask.box.w3")), ctx("mask.box.b3"));
  return BoxPrediction{reshape(sigmoid(logits), Shape{4})};
}

Tensor MaskDecoder::mask_decode(ParamCtx& ctx, const Tensor& object_embedding,
                                const BoxPrediction& box, const Tensor& f_seg,
                                const TextFeatures& text) const {
  return mask_decode(ctx, object_embedding, box, f_seg, text, cfg_.blocks);
}

Tensor MaskDecoder::mask_decode(ParamCtx& ctx, const Tensor& object_embedding,
                                const BoxPrediction& box, const Tensor& f_seg,
                                const TextFeatures& text, std::size_t blocks) const {
  if (blocks > cfg_.blocks)
    throw std::invalid_argument("mask_decode: " + std::to_string(blocks) +
                                " blocks exceeds configured " + std::to_string(cfg_.blocks));
  const std::size_t d = cfg_.d;
  Tensor e = object_embedding;
  Tensor ref = box.center();  // one differentiable reference point for all blocks
  for (std::size_t b = 0; b < blocks; ++b) {
    DeformableParams dp{cfg_.num_points, ctx(block_name(b, "off")), ctx(block_name(b, "wt"))};
    Tensor sampled = deformable_cross_attention(e, f_seg, ref, dp);
    e = layer_norm(add(e, sampled), ctx(block_name(b, "def_ln") + ".g"),
                   ctx(block_name(b, "def_ln") + ".b"));

    AttentionParams tp{ctx(block_name(b, "txt") + ".wq"), ctx(block_name(b, "txt") + ".wk"),
                       ctx(block_name(b, "txt") + ".wv"), ctx(block_name(b, "txt") + ".wo")};
    Tensor attended = reshape(
        cross_attention(reshape(e, Shape{1, d}), text.tokens, tp, cfg_.heads).output,
        Shape{d});
    e = layer_norm(add(e, attended), ctx(block_name(b, "txt_ln") + ".g"),
                   ctx(block_name(b, "txt_ln") + ".b"));

    Tensor row = reshape(e, Shape{1, d});
    Tensor hidden = gelu(add_rowwise(matmul(row, ctx(block_name(b, "ffn.w1"))),
                                     ctx(block_name(b, "ffn.b1"))));
    Tensor ffn = reshape(add_rowwise(matmul(hidden, ctx(block_name(b, "ffn.w2"))),
                                     ctx(block_name(b, "ffn.b2"))),
                         Shape{d});
    e = layer_norm(add(e, ffn), ctx(block_name(b, "ffn_ln") + ".g"),
                   ctx(block_name(b, "ffn_ln") + ".b"));
  }
  return e;
}

}  // namespace rvos
