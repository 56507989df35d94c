#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "cmf/boxes.hpp"
#include "cmf/gradcheck.hpp"
#include "cmf/rng.hpp"

using namespace cmf;

namespace {

Box random_box(Rng& rng, double min_side = 0.05, double max_side = 0.6) {
  const double h = rng.uniform(min_side, max_side);
  const double w = rng.uniform(min_side, max_side);
  const double x = rng.uniform(w / 2, 1.0 - w / 2);
  const double y = rng.uniform(h / 2, 1.0 - h / 2);
  return {x, y, h, w};
}

}  // namespace

TEST_CASE("to_corners examples") {
  Corners c = to_corners({0.5, 0.5, 1.0, 1.0});
  CHECK(c.x1 == 0.0);
  CHECK(c.y1 == 0.0);
  CHECK(c.x2 == 1.0);
  CHECK(c.y2 == 1.0);

  Corners q = to_corners({0.5, 0.5, 0.5, 0.5});
  CHECK(q.x1 == 0.25);
  CHECK(q.y1 == 0.25);
  CHECK(q.x2 == 0.75);
  CHECK(q.y2 == 0.75);

  Corners d = to_corners({0.3, 0.3, 0.0, 0.2});  // degenerate height
  CHECK(d.y1 == d.y2);
  CHECK(iou({0.3, 0.3, 0.0, 0.2}, {0.3, 0.3, 0.0, 0.2}) == 0.0);  // handled downstream
}

TEST_CASE("iou examples") {
  Box a{0.5, 0.5, 0.4, 0.4};
  CHECK(iou(a, a) == 1.0);

  Box left{0.2, 0.2, 0.2, 0.2}, right{0.8, 0.8, 0.2, 0.2};
  CHECK(iou(left, right) == 0.0);

  // corners (0,0,2,2) and (1,1,2,2) scaled into the unit frame: iou = 1/4
  Box big{0.5, 0.5, 1.0, 1.0};            // (0,0)-(1,1)
  Box shifted{0.75, 0.75, 0.5, 0.5};      // (0.5,0.5)-(1,1)
  CHECK(iou(big, shifted) == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("giou examples") {
  Box a{0.4, 0.6, 0.3, 0.25};
  CHECK(giou(a, a) == 1.0);  // exactly

  // unit boxes touching at one corner: iou 0, C=4u, union=2u -> -0.5
  Box tl{0.25, 0.25, 0.5, 0.5}, br{0.75, 0.75, 0.5, 0.5};
  CHECK(giou(tl, br) == doctest::Approx(-0.5).epsilon(1e-15));

  // separated tiny boxes approach the -1 limit
  Box p1{0.005, 0.005, 0.01, 0.01}, p2{0.995, 0.995, 0.01, 0.01};
  CHECK(giou(p1, p2) < -0.99);
  CHECK(giou(p1, p2) > -1.0);
}

TEST_CASE("iou and giou properties over random pairs") {
  Rng rng(41);
  for (int t = 0; t < 500; ++t) {
    Box a = random_box(rng), b = random_box(rng);
    const double i = iou(a, b), g = giou(a, b);
    CHECK(i >= 0.0);
    CHECK(i <= 1.0);
    CHECK(g <= i + 1e-15);
    CHECK(g > -1.0);
    CHECK(g <= 1.0);
    CHECK(iou(b, a) == i);   // symmetric
    CHECK(giou(b, a) == g);

    // scale invariance: shrink both boxes toward the origin in corner space
    const double s = rng.uniform(0.2, 0.9);
    Box as{a.x * s, a.y * s, a.h * s, a.w * s};
    Box bs{b.x * s, b.y * s, b.h * s, b.w * s};
    CHECK(iou(as, bs) == doctest::Approx(i).epsilon(1e-10));
    CHECK(giou(as, bs) == doctest::Approx(g).epsilon(1e-10));

    // giou == iou iff the enclosing box fills the union
    if (std::abs(g - i) < 1e-15) {
      const Corners ca = to_corners(a), cb = to_corners(b);
      const double cw = std::max(ca.x2, cb.x2) - std::min(ca.x1, cb.x1);
      const double ch = std::max(ca.y2, cb.y2) - std::min(ca.y1, cb.y1);
      const double uni = (ca.x2 - ca.x1) * (ca.y2 - ca.y1) + (cb.x2 - cb.x1) * (cb.y2 - cb.y1) -
                         std::max(0.0, std::min(ca.x2, cb.x2) - std::max(ca.x1, cb.x1)) *
                             std::max(0.0, std::min(ca.y2, cb.y2) - std::max(ca.y1, cb.y1));
      CHECK(cw * ch == doctest::Approx(uni).epsilon(1e-9));
    }
  }
}

TEST_CASE("raster oracle agreement with analytic iou") {
  Rng rng(42);
  Box a{0.5, 0.5, 0.4, 0.4};
  CHECK(raster_iou_oracle(a, a, 512) == 1.0);
  CHECK(raster_iou_oracle({0.1, 0.1, 0.1, 0.1}, {0.9, 0.9, 0.1, 0.1}, 512) == 0.0);
  for (int t = 0; t < 250; ++t) {
    Box p = random_box(rng), q = random_box(rng);
    CHECK(std::abs(iou(p, q) - raster_iou_oracle(p, q, 512)) < 0.02);
  }
  CHECK_THROWS_AS(raster_iou_oracle(a, a, 32), ContractError);
}

TEST_CASE("acc@0.5 strictness and permutation invariance") {
  Box a{0.5, 0.5, 0.4, 0.4};
  Box off{0.9, 0.9, 0.05, 0.05};
  CHECK(acc_at_05({a, a, a}, {a, a, a}) == 1.0);

  // engineered pair with iou exactly 0.5 counts as incorrect
  Box full{0.5, 0.5, 1.0, 1.0};
  Box half{0.5, 0.25, 0.5, 1.0};
  REQUIRE(iou(full, half) == 0.5);
  CHECK(acc_at_05({full}, {half}) == 0.0);

  CHECK(acc_at_05({a, off}, {a, a}) == 0.5);  // half exact, half disjoint

  // permutation invariance
  std::vector<Box> preds = {a, off, full}, gts = {a, a, half};
  const double base = acc_at_05(preds, gts);
  std::vector<Box> preds_p = {full, a, off}, gts_p = {half, a, a};
  CHECK(acc_at_05(preds_p, gts_p) == base);

  CHECK_THROWS_AS(acc_at_05({a}, {a, a}), ShapeError);
}

TEST_CASE("tape loss values and gradients") {
  Box gt{0.45, 0.55, 0.3, 0.2};

  // exact prediction: zero loss, giou 1
  Tensor exact = Tensor::from({4}, {gt.x, gt.y, gt.h, gt.w});
  CHECK(rec_loss(exact, gt, 1.0, 1.0).scalar_value() == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(box_giou(exact, gt).scalar_value() == 1.0);

  // tape giou matches the analytic route on random interior boxes
  Rng rng(43);
  for (int t = 0; t < 200; ++t) {
    Box p = random_box(rng, 0.1, 0.5);
    Tensor pt = Tensor::from({4}, {p.x, p.y, p.h, p.w});
    CHECK(box_giou(pt, gt).scalar_value() == doctest::Approx(giou(p, gt)).epsilon(1e-12));
  }

  // gradients match finite differences away from boundary configurations
  for (int t = 0; t < 10; ++t) {
    Box p = random_box(rng, 0.15, 0.4);
    Tensor pred = Tensor::from({4}, {p.x, p.y, p.h, p.w});
    pred.set_requires_grad(true);
    auto f = [&]() { return rec_loss(pred, gt, 1.0, 1.0); };
    CheckReport rep = finite_difference_check(f, {{"pred", pred}}, 1e-6, 1e-4);
    INFO(rep.summary());
    CHECK(rep.pass);
  }

  CHECK_THROWS_AS(rec_loss(exact, gt, -1.0, 1.0), ContractError);
}

TEST_CASE("degenerate zero-area prediction keeps the loss finite") {
  Box gt{0.5, 0.5, 0.2, 0.2};
  Tensor degenerate = Tensor::from({4}, {0.3, 0.3, 0.0, 0.0});
  Tensor loss = rec_loss(degenerate, gt, 1.0, 1.0);
  CHECK(std::isfinite(loss.scalar_value()));
  CHECK(iou({0.3, 0.3, 0.0, 0.0}, gt) == 0.0);
  CHECK(std::isfinite(giou({0.3, 0.3, 0.0, 0.0}, gt)));
}
