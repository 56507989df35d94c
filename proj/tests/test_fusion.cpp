#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "cmf/gradcheck.hpp"
#include "test_util.hpp"

using namespace cmf;
using namespace cmf::testutil;

namespace {

struct ModelFixture {
  ParamRegistry reg;
  CmfModel model;
  ModelFixture(uint64_t seed, const ModelConfig& cfg) : reg(seed), model(reg, cfg) {}
};

TokenBatch micro_tokens() { return tokenize({"red", "circle"}, 8); }

}  // namespace

TEST_CASE("config validation") {
  ModelConfig bad = micro_config();
  bad.fusion_width = 6;
  CHECK_THROWS_AS(bad.validate(), ContractError);
  bad = micro_config();
  bad.levels = {0};
  CHECK_THROWS_AS(bad.validate(), ContractError);
  bad = micro_config();
  bad.levels.clear();
  CHECK_THROWS_AS(bad.validate(), ContractError);
  bad = micro_config();
  bad.vlfm_depth = 0;
  CHECK_THROWS_AS(bad.validate(), ContractError);
}

TEST_CASE("tokenize_pair layout, masks and position encoding placement") {
  ParamRegistry reg(1);
  TokenizePair tok(reg, "tok.level1", 8, 8, 8);
  Rng rng(2);

  Array mapv(8 * 2 * 2);
  for (Index i = 0; i < mapv.size(); ++i) mapv[i] = rng.normal();
  Tensor level_map(Shape{8, 2, 2}, std::move(mapv));
  Array txt(5 * 8);
  for (Index i = 0; i < txt.size(); ++i) txt[i] = rng.normal();
  Tensor fused_text(Shape{5, 8}, std::move(txt));
  PadMask grid_mask = {0, 0, 1, 0};
  PadMask word_mask = {0, 0, 0, 1, 1};

  JointTokens joint = tok.forward(level_map, fused_text, grid_mask, word_mask);
  CHECK(joint.tokens.shape() == Shape{9, 8});  // 5 text + 4 visual
  CHECK(joint.text_len == 5);
  CHECK(joint.grid_tokens == 4);
  CHECK(joint.mask == PadMask{0, 0, 0, 1, 1, 0, 0, 1, 0});

  // text part carries no position encoding
  ParamRegistry reg2(1);  // same seed -> identical projection parameters
  TokenizePair tok2(reg2, "tok.level1", 8, 8, 8);
  Tensor t_only = reg2.find("tok.level1.t_proj.w").defined()
                      ? add(matmul(fused_text, reg2.find("tok.level1.t_proj.w")),
                            reg2.find("tok.level1.t_proj.b"))
                      : Tensor();
  for (Index p = 0; p < 5; ++p)
    for (Index c = 0; c < 8; ++c) CHECK(joint.tokens.at({p, c}) == t_only.at({p, c}));

  // visual token at grid (0,0) = projection + PE(0,0)
  Tensor pe = sinusoidal_pe(2, 2, 8);
  Tensor vtok = transpose(reshape(level_map, {8, 4}));
  Tensor vproj = add(matmul(vtok, reg2.find("tok.level1.v_proj.w")),
                     reg2.find("tok.level1.v_proj.b"));
  for (Index c = 0; c < 8; ++c)
    CHECK(joint.tokens.at({5, c}) == vproj.at({0, c}) + pe.at({0, c}));

  // split-concat round trip is lossless before any encoder layer
  FusedPair split = split_joint(joint);
  CHECK(split.text.shape() == Shape{5, 8});
  CHECK(split.visual.shape() == Shape{4, 8});
  for (Index p = 0; p < 5; ++p)
    for (Index c = 0; c < 8; ++c) CHECK(split.text.at({p, c}) == joint.tokens.at({p, c}));
  for (Index p = 0; p < 4; ++p)
    for (Index c = 0; c < 8; ++c) CHECK(split.visual.at({p, c}) == joint.tokens.at({5 + p, c}));
}

TEST_CASE("interaction stack: residual identity and level-parameter swap") {
  ParamRegistry reg(3);
  Vlim vlim_a(reg, "vlim.level1", 8, 2, 1);
  Vlim vlim_b(reg, "vlim.level2", 8, 2, 1);
  Rng rng(4);

  Array tokv(6 * 8);
  for (Index i = 0; i < tokv.size(); ++i) tokv[i] = rng.normal();
  JointTokens joint;
  joint.tokens = Tensor(Shape{6, 8}, std::move(tokv));
  joint.mask = PadMask{0, 0, 0, 0, 0, 0};
  joint.text_len = 2;
  joint.grid_tokens = 4;
  joint.h = joint.w = 2;

  // zero-initialized output projections: identity mapping
  reg.find("vlim.level1.layer0.attn.out.w").values_mut().setZero();
  reg.find("vlim.level1.layer0.ffn2.w").values_mut().setZero();
  FusedPair ident = vlim_a.forward(joint);
  for (Index p = 0; p < 2; ++p)
    for (Index c = 0; c < 8; ++c) CHECK(ident.text.at({p, c}) == joint.tokens.at({p, c}));
  for (Index p = 0; p < 4; ++p)
    for (Index c = 0; c < 8; ++c) CHECK(ident.visual.at({p, c}) == joint.tokens.at({2 + p, c}));

  // re-randomize A, then swap parameter sets between the two stacks
  for (const auto& e : reg.entries()) {
    if (e.name.rfind("vlim.level1", 0) == 0 && e.trainable && e.name.find("ln") == std::string::npos) {
      Array fresh(e.tensor.size());
      for (Index i = 0; i < fresh.size(); ++i) fresh[i] = rng.normal() * 0.2;
      e.tensor.node()->values->operator=(fresh);
    }
  }
  FusedPair out_a = vlim_a.forward(joint);
  FusedPair out_b = vlim_b.forward(joint);
  // outputs differ before the swap
  double diff = 0;
  for (Index i = 0; i < out_a.visual.size(); ++i)
    diff = std::max(diff, std::abs(out_a.visual.values()[i] - out_b.visual.values()[i]));
  CHECK(diff > 1e-6);

  for (const auto& e : reg.entries()) {
    if (e.name.rfind("vlim.level1", 0) != 0) continue;
    const std::string twin = "vlim.level2" + e.name.substr(std::string("vlim.level1").size());
    Array tmp = *e.tensor.node()->values;
    e.tensor.node()->values->operator=(*reg.find(twin).node()->values);
    reg.find(twin).node()->values->operator=(tmp);
  }
  FusedPair swapped_a = vlim_a.forward(joint);
  FusedPair swapped_b = vlim_b.forward(joint);
  for (Index i = 0; i < out_a.visual.size(); ++i) {
    CHECK(swapped_a.visual.values()[i] == out_b.visual.values()[i]);
    CHECK(swapped_b.visual.values()[i] == out_a.visual.values()[i]);
  }
}

TEST_CASE("interaction stack: padded words cannot reach visual outputs") {
  ParamRegistry reg(5);
  Vlim vlim(reg, "vlim.level1", 8, 2, 2);
  Rng rng(6);
  Array tokv(7 * 8);
  for (Index i = 0; i < tokv.size(); ++i) tokv[i] = rng.normal();
  JointTokens joint;
  joint.tokens = Tensor(Shape{7, 8}, tokv);
  joint.mask = PadMask{0, 0, 1, 0, 0, 0, 0};  // one padded word
  joint.text_len = 3;
  joint.grid_tokens = 4;
  joint.h = joint.w = 2;

  FusedPair base = vlim.forward(joint);
  Array bumped = tokv;
  for (Index c = 0; c < 8; ++c) bumped[2 * 8 + c] += rng.uniform(0.5, 1.5);
  JointTokens alt = joint;
  alt.tokens = Tensor(Shape{7, 8}, std::move(bumped));
  FusedPair out = vlim.forward(alt);
  for (Index i = 0; i < base.visual.size(); ++i)
    CHECK(out.visual.values()[i] == base.visual.values()[i]);
}

TEST_CASE("cross-level merge: averaging projection recovers a common level") {
  ParamRegistry reg(7);
  CrossLevelMerge merge(reg, "merge", 4, 8);
  Rng rng(8);

  Array base(4 * 8);
  for (Index i = 0; i < base.size(); ++i) base[i] = rng.normal();
  FusedPair level;
  level.visual = Tensor(Shape{4, 8}, base);
  Array tbase(3 * 8);
  for (Index i = 0; i < tbase.size(); ++i) tbase[i] = rng.normal();
  level.text = Tensor(Shape{3, 8}, tbase);
  level.h = level.w = 2;

  // each 8x8 block of the projection = I/4
  for (const char* which : {"merge.v_proj", "merge.t_proj"}) {
    Tensor w = reg.find(cat(which, ".w"));
    w.values_mut().setZero();
    for (Index blk = 0; blk < 4; ++blk)
      for (Index d = 0; d < 8; ++d) w.values_mut()[(blk * 8 + d) * 8 + d] = 0.25;
  }
  FusedPair merged = merge.forward({level, level, level, level});
  CHECK(merged.visual.shape() == Shape{4, 8});
  CHECK(merged.text.shape() == Shape{3, 8});
  for (Index i = 0; i < merged.visual.size(); ++i)
    CHECK(merged.visual.values()[i] ==
          doctest::Approx(level.visual.values()[i]).epsilon(1e-14));
  for (Index i = 0; i < merged.text.size(); ++i)
    CHECK(merged.text.values()[i] == doctest::Approx(level.text.values()[i]).epsilon(1e-14));

  CHECK_THROWS_AS(merge.forward({level, level}), ShapeError);
}

TEST_CASE("cross-level merge: gradient reaches all levels") {
  ParamRegistry reg(9);
  CrossLevelMerge merge(reg, "merge", 4, 8);
  Rng rng(10);
  std::vector<FusedPair> parts(4);
  std::vector<Tensor> inputs;
  for (auto& p : parts) {
    Array v(4 * 8), t(3 * 8);
    for (Index i = 0; i < v.size(); ++i) v[i] = rng.normal();
    for (Index i = 0; i < t.size(); ++i) t[i] = rng.normal();
    p.visual = Tensor(Shape{4, 8}, std::move(v));
    p.text = Tensor(Shape{3, 8}, std::move(t));
    p.visual.set_requires_grad(true);
    p.text.set_requires_grad(true);
    p.h = p.w = 2;
    inputs.push_back(p.visual);
    inputs.push_back(p.text);
  }
  GradStore store;
  Tape tape;
  {
    TapeScope scope(tape);
    FusedPair merged = merge.forward(parts);
    tape.backward(add(sum(mul(merged.visual, merged.visual)),
                      sum(mul(merged.text, merged.text))),
                  store);
  }
  for (const Tensor& in : inputs) {
    Array* g = store.find(in.node());
    REQUIRE(g != nullptr);
    CHECK(g->abs().maxCoeff() > 0.0);
  }
}

TEST_CASE("full model: output contract, batching, determinism") {
  ModelFixture fx(11, micro_config());
  Rng rng(12);
  activate_attention(fx.reg, rng);
  TokenBatch tokens = micro_tokens();

  std::vector<Tensor> boxes;
  for (int b = 0; b < 3; ++b) {
    Tensor img = random_image(32, rng);
    Tensor box = fx.model.forward(img, {}, tokens, false);
    CHECK(box.shape() == Shape{4});
    for (Index i = 0; i < 4; ++i) {
      CHECK(box.values()[i] > 0.0);
      CHECK(box.values()[i] < 1.0);
    }
    boxes.push_back(box);
    // repeated forward is bit-identical
    Tensor again = fx.model.forward(img, {}, tokens, false);
    for (Index i = 0; i < 4; ++i) CHECK(again.values()[i] == box.values()[i]);
  }
  // order-preserving batch: the three outputs are distinct boxes
  CHECK(std::abs(boxes[0].values()[0] - boxes[1].values()[0]) +
            std::abs(boxes[1].values()[1] - boxes[2].values()[1]) >
        0.0);
}

TEST_CASE("full model: joint sequence length and attention diagnostics") {
  ModelFixture fx(13, micro_config());
  Rng rng(14);
  activate_attention(fx.reg, rng);
  CmfDiag diag;
  fx.model.forward(random_image(32, rng), {}, micro_tokens(), false, nullptr, &diag);
  CHECK(diag.h == 2);
  CHECK(diag.w == 2);
  CHECK(diag.attn_grid.size() == 4);
  double total = 0;
  for (Index i = 0; i < 4; ++i) {
    CHECK(diag.attn_grid[i] >= 0.0);
    total += diag.attn_grid[i];
  }
  CHECK(total <= 1.0 + 1e-12);  // text and [REG] absorb the rest
  CHECK(diag.lafm_weights.size() == 4);
}

TEST_CASE("full model: padded tokens never influence the prediction") {
  ModelConfig cfg = micro_config();
  ModelFixture fx(15, cfg);
  Rng rng(16);
  activate_attention(fx.reg, rng);

  // pad the right half of the image and use a short expression
  PadMask pixel_mask(32 * 32, 0);
  for (Index y = 0; y < 32; ++y)
    for (Index x = 16; x < 32; ++x) pixel_mask[static_cast<size_t>(y * 32 + x)] = 1;
  TokenBatch tokens = micro_tokens();
  Tensor img = random_image(32, rng);

  Tensor base = fx.model.forward(img, pixel_mask, tokens, false);

  for (int trial = 0; trial < 10; ++trial) {
    InputPerturbation probe;
    Array tdelta = Array::Zero(8 * 8);
    for (Index p = 0; p < 8; ++p)
      if (tokens.word_mask[static_cast<size_t>(p)])
        for (Index q = 0; q < 8; ++q) tdelta[p * 8 + q] = rng.uniform(-3, 3);
    probe.text_embed_delta = Tensor(Shape{8, 8}, std::move(tdelta));
    // grid mask marks the right column of each 2x2 level; perturb there
    probe.visual_deltas.resize(4);
    for (int lvl = 0; lvl < 4; ++lvl) {
      Array vdelta = Array::Zero(8 * 2 * 2);
      for (Index c = 0; c < 8; ++c)
        for (Index y = 0; y < 2; ++y) vdelta[c * 4 + y * 2 + 1] = rng.uniform(-3, 3);
      probe.visual_deltas[static_cast<size_t>(lvl)] = Tensor(Shape{8, 2, 2}, std::move(vdelta));
    }
    Tensor out = fx.model.forward(img, pixel_mask, tokens, false, nullptr, nullptr, &probe);
    for (Index i = 0; i < 4; ++i)
      CHECK(std::abs(out.values()[i] - base.values()[i]) < 1e-9);
  }

  // sensitivity control: perturbing an unmasked visual cell changes the output
  InputPerturbation active;
  active.visual_deltas.resize(4);
  Array vdelta = Array::Zero(8 * 2 * 2);
  vdelta[0] = 1.0;  // channel 0, cell (0,0): unmasked
  active.visual_deltas[0] = Tensor(Shape{8, 2, 2}, std::move(vdelta));
  Tensor moved = fx.model.forward(img, pixel_mask, tokens, false, nullptr, nullptr, &active);
  double delta = 0;
  for (Index i = 0; i < 4; ++i) delta += std::abs(moved.values()[i] - base.values()[i]);
  CHECK(delta > 0.0);
}

TEST_CASE("full model: growing the padding never moves the prediction") {
  ModelFixture fx(17, micro_config());
  Rng rng(18);
  activate_attention(fx.reg, rng);
  Tensor img = random_image(32, rng);
  Tensor short_box = fx.model.forward(img, {}, tokenize({"red", "circle"}, 5), false);
  Tensor long_box = fx.model.forward(img, {}, tokenize({"red", "circle"}, 8), false);
  for (Index i = 0; i < 4; ++i)
    CHECK(std::abs(short_box.values()[i] - long_box.values()[i]) < 1e-9);
}

TEST_CASE("ablation wiring: reduced configurations share the fusion path") {
  Rng rng(19);
  TokenBatch tokens = micro_tokens();

  ModelConfig baseline = micro_config();  // last level + last layer, no interaction
  baseline.levels = {4};
  baseline.vlim_depth = 0;
  baseline.lafm = LafmVariant::LastLayer;
  ModelFixture fb(20, baseline);
  Tensor img = random_image(32, rng);
  Tensor b1 = fb.model.forward(img, {}, tokens, false);
  CHECK(b1.shape() == Shape{4});

  ModelConfig multi = baseline;  // + all levels
  multi.levels = {1, 2, 3, 4};
  ModelFixture fm(21, multi);
  CHECK(fm.model.forward(img, {}, tokens, false).shape() == Shape{4});

  ModelConfig interact = multi;  // + single interaction layer
  interact.vlim_depth = 1;
  ModelFixture fi(22, interact);
  CHECK(fi.model.forward(img, {}, tokens, false).shape() == Shape{4});

  ModelConfig adaptive = interact;  // + adaptive fusion
  adaptive.lafm = LafmVariant::ClsSelfAttn;
  ModelFixture fa(23, adaptive);
  CHECK(fa.model.forward(img, {}, tokens, false).shape() == Shape{4});
}

TEST_CASE("full pipeline gradient spot-check against finite differences") {
  ModelConfig cfg = micro_config();
  cfg.enc.image_size = 16;  // deepest grid 1x1 keeps the graph tiny
  ModelFixture fx(24, cfg);
  Rng rng(25);
  Tensor img = random_image(16, rng);
  TokenBatch tokens = tokenize({"blue", "square"}, 6);
  Box gt{0.4, 0.5, 0.3, 0.3};

  auto f = [&]() {
    Tensor box = fx.model.forward(img, {}, tokens, true);
    return rec_loss(box, gt, 1.0, 1.0);
  };
  // one representative tensor per component keeps this test fast; the
  // exhaustive sweep lives in the gradcheck suite
  const char* names[] = {
      "visual.stage0.conv1.w", "neck.level2.conv.w", "lang.embed.tok",
      "lang.layer0.attn.q.w",  "lafm.level1.e_proj.w", "lafm.level3.score1.w",
      "tok.level2.v_proj.w",   "vlim.level1.layer0.ffn1.w", "merge.v_proj.w",
      "vlfm.reg",              "vlfm.layer1.attn.v.w", "head.l3.w",
  };
  NamedParams params;
  for (const char* n : names) params.emplace_back(n, fx.reg.find(n));
  CheckReport rep = finite_difference_check(f, params, 1e-5, 1e-4);
  INFO(rep.summary());
  CHECK(rep.pass);
}
