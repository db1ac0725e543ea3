#include "rvos/frontend.hpp"

#include <stdexcept>

#include "rvos/attention.hpp"

namespace rvos {

Tensor TextFeatures::cls() const {
  return reshape(slice_rows(tokens, 0, 1), Shape{tokens.shape()[1]});
}

Tensor linear_last(const Tensor& x3d, const Tensor& w, const Tensor& b) {
  const Shape& s = x3d.shape();
  const std::size_t rows = s[0] * s[1];
  Tensor flat = reshape(x3d, Shape{rows, s[2]});
  Tensor y = add_rowwise(matmul(flat, w), b);
  return reshape(y, Shape{s[0], s[1], w.shape()[1]});
}

Tensor conv3x3(const Tensor& x3d, const Tensor& w, const Tensor& b) {
  const Shape& s = x3d.shape();
  Tensor cols = im2col_3x3(x3d);  // [h*w, 9c]
  Tensor y = add_rowwise(matmul(cols, w), b);
  return reshape(y, Shape{s[0], s[1], w.shape()[1]});
}

Tensor group_norm(const Tensor& x3d, std::size_t groups, const Tensor& gain,
                  const Tensor& bias) {
  const Shape& s = x3d.shape();
  const std::size_t hw = s[0] * s[1], c = s[2];
  if (groups == 0 || c % groups != 0)
    throw std::invalid_argument("group_norm: channels " + std::to_string(c) +
                                " not divisible by groups " + std::to_string(groups));
  // Rearrange so each group's channels-over-all-positions form one row.
  Tensor by_channel = transpose(reshape(x3d, Shape{hw, c}));          // [c, hw]
  Tensor grouped = reshape(by_channel, Shape{groups, (c / groups) * hw});
  Tensor normed = layer_norm(grouped);
  Tensor back = transpose(reshape(normed, Shape{c, hw}));             // [hw, c]
  Tensor affine = add_rowwise(mul_rowwise(back, gain), bias);
  return reshape(affine, s);
}

Frontend::Frontend(FrontendConfig cfg) : cfg_(cfg) {
  if (cfg_.height % 8 != 0 || cfg_.width % 8 != 0)
    throw std::invalid_argument("frontend: frame extents " + std::to_string(cfg_.height) +
                                "x" + std::to_string(cfg_.width) + " must be divisible by 8");
  if (cfg_.d % 2 != 0 || cfg_.d % cfg_.groups != 0)
    throw std::invalid_argument("frontend: d must be even and divisible by the group count");
}

void Frontend::init_params(ParamStore& store, Rng& rng) const {
  const std::size_t d = cfg_.d, half = d / 2;
  auto lin = [&](const std::string& name, std::size_t in, std::size_t out) {
    store.define(name + ".w", {in, out}, xavier_uniform(rng, in, out, in * out));
    store.define(name + ".b", {out}, std::vector<double>(out, 0.0));
  };
  auto attn = [&](const std::string& name) {
    for (const char* part : {".wq", ".wk", ".wv", ".wo"})
      store.define(name + part, {d, d}, xavier_uniform(rng, d, d, d * d));
  };
  auto ln = [&](const std::string& name) {
    store.define(name + ".g", {d}, std::vector<double>(d, 1.0));
    store.define(name + ".b", {d}, std::vector<double>(d, 0.0));
  };

  lin("frontend.patch1", 48, half);
  lin("frontend.patch2", 4 * half, d);
  store.define("frontend.embed", {cfg_.vocab, d}, normal_init(rng, cfg_.vocab * d, 0.5));
  store.define("frontend.text_pos", {cfg_.max_tokens, d},
               normal_init(rng, cfg_.max_tokens * d, 0.5));
  attn("frontend.txt_attn");
  ln("frontend.txt_ln");
  const std::size_t img_tokens = (cfg_.height / 8) * (cfg_.width / 8);
  store.define("frontend.img_pos", {img_tokens, d}, normal_init(rng, img_tokens * d, 0.5));
  attn("frontend.i2t");
  ln("frontend.i2t_ln");
  attn("frontend.t2i");
  ln("frontend.t2i_ln");
  store.define("frontend.fpn1.w", {9 * d, d}, xavier_uniform(rng, 9 * d, d, 9 * d * d));
  store.define("frontend.fpn1.b", {d}, std::vector<double>(d, 0.0));
  ln("frontend.fpn1.gn");
  store.define("frontend.fpn2.w", {9 * d, d}, xavier_uniform(rng, 9 * d, d, 9 * d * d));
  store.define("frontend.fpn2.b", {d}, std::vector<double>(d, 0.0));
  ln("frontend.fpn2.gn");
}

Tensor Frontend::encode_frame(ParamCtx& ctx, const Tensor& frame) const {
  const Shape& s = frame.shape();
  if (s.size() != 3 || s[2] != 3)
    throw std::invalid_argument("encode_frame: expected [H,W,3], got " + shape_str(s));
  if (s[0] % 8 != 0 || s[1] % 8 != 0)
    throw std::invalid_argument("encode_frame: extents " + shape_str(s) +
                                " must be divisible by 8");
  Tensor stage1 = gelu(linear_last(patch_merge(frame, 4), ctx("frontend.patch1.w"),
                                   ctx("frontend.patch1.b")));
  Tensor stage2 = gelu(linear_last(patch_merge(stage1, 2), ctx("frontend.patch2.w"),
                                   ctx("frontend.patch2.b")));
  return stage2;  // [H/8, W/8, d]
}

TextFeatures Frontend::encode_text(ParamCtx& ctx, std::span<const int> token_ids) const {
  if (token_ids.empty()) throw std::invalid_argument("encode_text: empty program");
  std::vector<std::size_t> idx{0};  // sentence token id
  for (int id : token_ids) {
    if (id <= 0 || static_cast<std::size_t>(id) >= cfg_.vocab)
      throw std::invalid_argument("encode_text: token id " + std::to_string(id) +
                                  " outside vocabulary of " + std::to_string(cfg_.vocab));
    idx.push_back(static_cast<std::size_t>(id));
  }
  if (idx.size() > cfg_.max_tokens)
    throw std::invalid_argument("encode_text: program of " + std::to_string(idx.size()) +
                                " tokens exceeds max " + std::to_string(cfg_.max_tokens));
  const std::size_t k = idx.size();
  Tensor embedded = gather_rows(ctx("frontend.embed"), idx);
  Tensor pos = slice_rows(ctx("frontend.text_pos"), 0, k);
  Tensor x = add(embedded, pos);
  AttentionParams attn{ctx("frontend.txt_attn.wq"), ctx("frontend.txt_attn.wk"),
                       ctx("frontend.txt_attn.wv"), ctx("frontend.txt_attn.wo")};
  Tensor mixed = mhsa(x, attn, cfg_.heads).output;
  Tensor out = layer_norm(add(x, mixed), ctx("frontend.txt_ln.g"), ctx("frontend.txt_ln.b"));
  return TextFeatures{out};
}

std::pair<FrameFeatures, TextFeatures> Frontend::fuse(ParamCtx& ctx, const Tensor& raw,
                                                      const TextFeatures& text) const {
  const Shape& s = raw.shape();
  const std::size_t hp = s[0], wp = s[1], d = s[2];
  Tensor x = add(reshape(raw, Shape{hp * wp, d}), ctx("frontend.img_pos"));

  AttentionParams i2t{ctx("frontend.i2t.wq"), ctx("frontend.i2t.wk"), ctx("frontend.i2t.wv"),
                      ctx("frontend.i2t.wo")};
  AttentionParams t2i{ctx("frontend.t2i.wq"), ctx("frontend.t2i.wk"), ctx("frontend.t2i.wv"),
                      ctx("frontend.t2i.wo")};
  Tensor x2 = layer_norm(add(x, cross_attention(x, text.tokens, i2t, cfg_.heads).output),
                         ctx("frontend.i2t_ln.g"), ctx("frontend.i2t_ln.b"));
  Tensor t2 = layer_norm(add(text.tokens, cross_attention(text.tokens, x, t2i, cfg_.heads).output),
                         ctx("frontend.t2i_ln.g"), ctx("frontend.t2i_ln.b"));

  Tensor f_img = reshape(x2, Shape{hp, wp, d});
  Tensor y = relu(group_norm(conv3x3(f_img, ctx("frontend.fpn1.w"), ctx("frontend.fpn1.b")),
                             cfg_.groups, ctx("frontend.fpn1.gn.g"), ctx("frontend.fpn1.gn.b")));
  y = upsample_nearest_2x(y);
  Tensor f_seg = relu(group_norm(conv3x3(y, ctx("frontend.fpn2.w"), ctx("frontend.fpn2.b")),
                                 cfg_.groups, ctx("frontend.fpn2.gn.g"),
                                 ctx("frontend.fpn2.gn.b")));
  return {FrameFeatures{f_img, f_seg}, TextFeatures{t2}};
}

}  // namespace rvos
