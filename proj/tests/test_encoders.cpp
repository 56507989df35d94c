#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "cmf/encoders.hpp"
#include "cmf/gradcheck.hpp"
#include "test_util.hpp"

using namespace cmf;
using namespace cmf::testutil;

TEST_CASE("visual stages follow the stride ladder") {
  ModelConfig mc = micro_config();
  mc.enc.image_size = 128;
  ParamRegistry reg(1);
  VisualEncoder enc(reg, mc.enc);
  Rng rng(2);
  auto stages = enc.encode_stages(random_image(128, rng), true);
  REQUIRE(stages.size() == 4);
  const Index grids[4] = {64, 32, 16, 8};
  for (int s = 0; s < 4; ++s) {
    CHECK(stages[static_cast<size_t>(s)].shape() ==
          Shape{mc.enc.stage_widths[static_cast<size_t>(s)], grids[s], grids[s]});
  }
  CHECK_THROWS_AS(enc.encode_stages(random_image(40, rng), true), ContractError);
  CHECK_THROWS_AS(enc.encode_stages(Tensor::zeros({1, 128, 128}), true), ShapeError);
}

TEST_CASE("zero image gives constant per-channel stage maps") {
  ModelConfig mc = micro_config();
  ParamRegistry reg(3);
  VisualEncoder enc(reg, mc.enc);
  auto stages = enc.encode_stages(Tensor::zeros({3, 32, 32}), true);
  for (const Tensor& st : stages) {
    const Index c = st.extent(0), hw = st.extent(1) * st.extent(2);
    for (Index ch = 0; ch < c; ++ch) {
      const double v0 = st.values()[ch * hw];
      for (Index i = 1; i < hw; ++i) CHECK(st.values()[ch * hw + i] == v0);
    }
  }
}

TEST_CASE("projection neck emits a uniform pyramid with a downsampled mask") {
  ModelConfig mc = micro_config();
  ParamRegistry reg(4);
  VisualEncoder enc(reg, mc.enc);
  ProjectionNeck neck(reg, mc.enc);
  Rng rng(5);

  // right half of the image padded
  PadMask pixel_mask(32 * 32, 0);
  for (Index y = 0; y < 32; ++y)
    for (Index x = 16; x < 32; ++x) pixel_mask[static_cast<size_t>(y * 32 + x)] = 1;

  VisualPyramid pyr = neck.forward(enc.encode_stages(random_image(32, rng), true), pixel_mask,
                                   true);
  REQUIRE(pyr.levels.size() == 4);
  CHECK(pyr.h == 2);
  CHECK(pyr.w == 2);
  for (const Tensor& lvl : pyr.levels) CHECK(lvl.shape() == Shape{8, 2, 2});
  CHECK(pyr.grid_mask == PadMask{0, 1, 0, 1});  // right column padded

  // constant stage maps produce constant pyramid levels; the projection
  // kernels are set to center deltas since zero padding otherwise breaks
  // constancy along the map border
  for (int l = 0; l < 4; ++l) {
    Tensor w = reg.find(cat("neck.level", l, ".conv.w"));
    w.values_mut().setZero();
    const Index cin = mc.enc.stage_widths[static_cast<size_t>(l)];
    for (Index o = 0; o < 8; ++o) w.values_mut()[o * 9 * cin + 4 * cin + o % cin] = 1.0;
  }
  std::vector<Tensor> const_stages = {
      Tensor(Shape{4, 16, 16}, 0.3), Tensor(Shape{6, 8, 8}, -0.2),
      Tensor(Shape{8, 4, 4}, 1.1), Tensor(Shape{8, 2, 2}, 0.7)};
  VisualPyramid cp = neck.forward(const_stages, {}, true);
  for (const Tensor& lvl : cp.levels) {
    for (Index ch = 0; ch < 8; ++ch) {
      const double v0 = lvl.values()[ch * 4];
      for (Index i = 1; i < 4; ++i) CHECK(lvl.values()[ch * 4 + i] == v0);
    }
  }
}

TEST_CASE("padded pixels leave interior stage-1 features unchanged (eval mode)") {
  // Note: train-mode batch statistics couple all positions of a map, so the
  // receptive-field argument applies to eval-mode (running-stat) features.
  ModelConfig mc = micro_config();
  mc.enc.image_size = 64;
  ParamRegistry reg(6);
  VisualEncoder enc(reg, mc.enc);
  Rng rng(7);

  Tensor img_a = random_image(64, rng);
  Array alt = img_a.values();
  for (Index c = 0; c < 3; ++c)
    for (Index y = 0; y < 64; ++y)
      for (Index x = 32; x < 64; ++x) alt[c * 64 * 64 + y * 64 + x] = rng.uniform();
  Tensor img_b(Shape{3, 64, 64}, std::move(alt));

  Tensor s_a = enc.encode_stages(img_a, false)[0];  // stage 1, grid 32
  Tensor s_b = enc.encode_stages(img_b, false)[0];
  // padding boundary at stage-1 cell 16; two 3x3 convs + the 2x downsample
  // reach about 5 cells, compare the clearly interior region
  for (Index ch = 0; ch < 4; ++ch)
    for (Index y = 0; y < 32; ++y)
      for (Index x = 0; x < 10; ++x)
        CHECK(s_a.at({ch, y, x}) == s_b.at({ch, y, x}));
}

TEST_CASE("language encoder layer outputs and contracts") {
  ModelConfig mc = micro_config();
  ParamRegistry reg(8);
  LanguageEncoder lang(reg, mc.enc);

  TokenBatch tb = tokenize({"red", "circle"}, mc.enc.max_words);
  LayeredText out = lang.forward(tb);
  REQUIRE(static_cast<Index>(out.layers.size()) == mc.enc.text_layers);
  for (const Tensor& l : out.layers) CHECK(l.shape() == Shape{8, 8});
  for (size_t j = 0; j < out.cls.size(); ++j) {
    CHECK(out.cls[j].shape() == Shape{1, 8});
    for (Index q = 0; q < 8; ++q) CHECK(out.cls[j].values()[q] == out.layers[j].values()[q]);
  }

  // contract errors
  TokenBatch no_cls = tb;
  no_cls.ids[0] = Vocab::kPad;
  CHECK_THROWS_AS(lang.forward(no_cls), ContractError);
  TokenBatch bad_id = tb;
  bad_id.ids[1] = 99;
  CHECK_THROWS_AS(lang.forward(bad_id), DataError);
  TokenBatch two_sep = tb;
  two_sep.ids[5] = Vocab::kSep;
  CHECK_THROWS_AS(lang.forward(two_sep), ContractError);
}

TEST_CASE("padded-word perturbations never reach unpadded outputs") {
  ModelConfig mc = micro_config();
  ParamRegistry reg(9);
  LanguageEncoder lang(reg, mc.enc);
  Rng rng(10);

  TokenBatch tb = tokenize({"blue", "square"}, mc.enc.max_words);  // positions 4.. are padding
  LayeredText base = lang.forward(tb);

  Array delta = Array::Zero(8 * 8);
  for (Index p = 0; p < 8; ++p)
    if (tb.word_mask[static_cast<size_t>(p)])
      for (Index q = 0; q < 8; ++q) delta[p * 8 + q] = rng.uniform(-2, 2);
  Tensor delta_t(Shape{8, 8}, std::move(delta));
  LayeredText bumped = lang.forward(tb, &delta_t);

  for (size_t j = 0; j < base.layers.size(); ++j)
    for (Index p = 0; p < 8; ++p) {
      if (tb.word_mask[static_cast<size_t>(p)]) continue;
      for (Index q = 0; q < 8; ++q)
        CHECK(base.layers[j].at({p, q}) == bumped.layers[j].at({p, q}));
    }
}

TEST_CASE("expressions identical up to padding length agree on unpadded features") {
  ModelConfig mc = micro_config();
  ParamRegistry reg(11);
  LanguageEncoder lang(reg, mc.enc);

  TokenBatch short_pad = tokenize({"red", "circle"}, 5);
  TokenBatch long_pad = tokenize({"red", "circle"}, 8);
  LayeredText a = lang.forward(short_pad);
  LayeredText b = lang.forward(long_pad);
  for (size_t j = 0; j < a.layers.size(); ++j)
    for (Index p = 0; p < 5; ++p)
      for (Index q = 0; q < 8; ++q)
        CHECK(a.layers[j].at({p, q}) ==
              doctest::Approx(b.layers[j].at({p, q})).epsilon(1e-12));
}

TEST_CASE("encoder gradients flow to every trainable parameter") {
  ModelConfig mc = micro_config();
  ParamRegistry reg(12);
  VisualEncoder enc(reg, mc.enc);
  ProjectionNeck neck(reg, mc.enc);
  LanguageEncoder lang(reg, mc.enc);
  Rng rng(13);
  activate_attention(reg, rng);

  GradStore store;
  Tape tape;
  {
    TapeScope scope(tape);
    VisualPyramid pyr = neck.forward(enc.encode_stages(random_image(32, rng), true), {}, true);
    // a full-length expression exercises every position-embedding row
    TokenBatch full = tokenize({"red", "circle", "left", "of", "the", "blue"}, 8);
    LayeredText text = lang.forward(full);
    Tensor loss = Tensor::scalar(0.0);
    for (const Tensor& lvl : pyr.levels) loss = add(loss, sum(mul(lvl, exp(mul(lvl, 0.1)))));
    for (const Tensor& l : text.layers) loss = add(loss, sum(mul(l, exp(mul(l, 0.1)))));
    tape.backward(loss, store);
  }
  for (const auto& e : reg.entries()) {
    if (!e.trainable) continue;
    Array* g = store.find(e.tensor.node());
    INFO("parameter ", e.name);
    REQUIRE(g != nullptr);
    CHECK(g->abs().maxCoeff() > 0.0);
  }
}

TEST_CASE("language encoder matches finite differences") {
  ModelConfig mc = micro_config();
  mc.enc.text_layers = 1;
  ParamRegistry reg(14);
  LanguageEncoder lang(reg, mc.enc);
  TokenBatch tb = tokenize({"green", "triangle"}, 6);
  auto f = [&]() {
    LayeredText t = lang.forward(tb);
    return sum(mul(t.layers.back(), exp(mul(t.layers.back(), 0.1))));
  };
  NamedParams params;
  for (const auto& e : reg.entries())
    if (e.trainable) params.emplace_back(e.name, e.tensor);
  CheckReport rep = finite_difference_check(f, params);
  INFO(rep.summary());
  CHECK(rep.pass);
}
