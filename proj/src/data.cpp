#include "cmf/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace cmf {

namespace fs = std::filesystem;

// ---- vocabulary -----------------------------------------------------------------

Vocab::Vocab() {
  words_ = {"[PAD]", "[CLS]", "[SEP]"};
  std::vector<std::string> task_words = {
      "red",  "green", "blue",  "yellow", "purple",   "orange",             // colors
      "square", "circle", "triangle",                                       // shapes
      "solid", "striped",                                                   // textures
      "small", "large",                                                     // sizes
      "left", "right", "of", "above", "below", "next", "to", "the",         // relations
  };
  std::sort(task_words.begin(), task_words.end());  // deterministic id assignment
  words_.insert(words_.end(), task_words.begin(), task_words.end());
}

const Vocab& Vocab::instance() {
  static const Vocab v;
  return v;
}

Index Vocab::id(const std::string& word) const {
  for (size_t i = 0; i < words_.size(); ++i)
    if (words_[i] == word) return static_cast<Index>(i);
  throw DataError(cat("vocabulary: unknown word '", word, "'"));
}

const std::string& Vocab::word(Index id) const {
  if (id < 0 || id >= size()) throw DataError(cat("vocabulary: id ", id, " out of range"));
  return words_[static_cast<size_t>(id)];
}

TokenBatch tokenize(const std::vector<std::string>& words, Index max_len) {
  const Vocab& v = Vocab::instance();
  if (static_cast<Index>(words.size()) > max_len - 2)
    throw DataError(cat("tokenize: expression of ", words.size(), " words exceeds capacity ",
                        max_len - 2));
  TokenBatch b;
  b.ids.assign(static_cast<size_t>(max_len), Vocab::kPad);
  b.word_mask.assign(static_cast<size_t>(max_len), 1);
  b.ids[0] = Vocab::kCls;
  b.word_mask[0] = 0;
  for (size_t i = 0; i < words.size(); ++i) {
    b.ids[i + 1] = v.id(words[i]);
    b.word_mask[i + 1] = 0;
  }
  b.ids[words.size() + 1] = Vocab::kSep;
  b.word_mask[words.size() + 1] = 0;
  return b;
}

std::vector<std::string> detokenize(const TokenBatch& batch) {
  const Vocab& v = Vocab::instance();
  std::vector<std::string> words;
  for (size_t i = 1; i < batch.ids.size(); ++i) {
    if (batch.ids[i] == Vocab::kSep) return words;
    words.push_back(v.word(batch.ids[i]));
  }
  throw DataError("detokenize: no [SEP] found");
}

// ---- scene vocabulary -----------------------------------------------------------------

const std::array<ColorDef, 6>& palette() {
  static const std::array<ColorDef, 6> p = {{
      {"red", 229, 26, 26},
      {"green", 26, 204, 38},
      {"blue", 38, 64, 230},
      {"yellow", 242, 217, 26},
      {"purple", 153, 38, 204},
      {"orange", 242, 140, 26},
  }};
  return p;
}

const char* to_word(ShapeKind s) {
  switch (s) {
    case ShapeKind::Square: return "square";
    case ShapeKind::Circle: return "circle";
    default: return "triangle";
  }
}
const char* to_word(TextureKind t) { return t == TextureKind::Solid ? "solid" : "striped"; }
const char* to_word(SizeKind s) { return s == SizeKind::Small ? "small" : "large"; }

const char* tier_name(Tier t) {
  switch (t) {
    case Tier::Attribute: return "attribute";
    case Tier::Relation: return "relation";
    default: return "composed";
  }
}

Tier tier_from_name(const std::string& name) {
  if (name == "attribute") return Tier::Attribute;
  if (name == "relation") return Tier::Relation;
  if (name == "composed") return Tier::Composed;
  throw DataError(cat("unknown tier '", name, "'"));
}

// ---- expression matcher ------------------------------------------------------------------

namespace {

struct AttrPred {
  int color = -1, shape = -1, texture = -1, size = -1;
};

enum Rel { kLeft = 0, kRight, kAbove, kBelow, kNextTo, kRelCount };

const char* rel_words(int rel) {
  switch (rel) {
    case kLeft: return "left of";
    case kRight: return "right of";
    case kAbove: return "above";
    case kBelow: return "below";
    default: return "next to";
  }
}

struct ParsedExpr {
  AttrPred target;
  bool has_rel = false;
  int rel = 0;
  AttrPred landmark;
};

int color_index(const std::string& w) {
  const auto& p = palette();
  for (size_t i = 0; i < p.size(); ++i)
    if (w == p[i].name) return static_cast<int>(i);
  return -1;
}

int shape_index(const std::string& w) {
  if (w == "square") return 0;
  if (w == "circle") return 1;
  if (w == "triangle") return 2;
  return -1;
}

// consumes [size?] [color?] [texture?] shape
AttrPred parse_attr(const std::vector<std::string>& words, size_t& i) {
  AttrPred p;
  while (i < words.size()) {
    const std::string& w = words[i];
    if (w == "small" || w == "large") {
      p.size = w == "small" ? 0 : 1;
    } else if (int c = color_index(w); c >= 0) {
      p.color = c;
    } else if (w == "solid" || w == "striped") {
      p.texture = w == "solid" ? 0 : 1;
    } else if (int s = shape_index(w); s >= 0) {
      p.shape = s;
      ++i;
      return p;
    } else {
      throw DataError(cat("expression parse: unexpected word '", w, "'"));
    }
    ++i;
  }
  throw DataError("expression parse: missing shape word");
}

ParsedExpr parse_expression(const std::vector<std::string>& words) {
  ParsedExpr e;
  size_t i = 0;
  e.target = parse_attr(words, i);
  if (i == words.size()) return e;
  e.has_rel = true;
  const std::string& w = words[i];
  if (w == "left" || w == "right") {
    e.rel = w == "left" ? kLeft : kRight;
    if (i + 1 >= words.size() || words[i + 1] != "of")
      throw DataError("expression parse: expected 'of'");
    i += 2;
  } else if (w == "above" || w == "below") {
    e.rel = w == "above" ? kAbove : kBelow;
    i += 1;
  } else if (w == "next") {
    e.rel = kNextTo;
    if (i + 1 >= words.size() || words[i + 1] != "to")
      throw DataError("expression parse: expected 'to'");
    i += 2;
  } else {
    throw DataError(cat("expression parse: unknown relation '", w, "'"));
  }
  if (i >= words.size() || words[i] != "the")
    throw DataError("expression parse: expected 'the'");
  ++i;
  e.landmark = parse_attr(words, i);
  if (i != words.size()) throw DataError("expression parse: trailing words");
  return e;
}

bool attr_match(const SceneObject& o, const AttrPred& p) {
  if (p.color >= 0 && static_cast<int>(o.color) != p.color) return false;
  if (p.shape >= 0 && static_cast<int>(o.shape) != p.shape) return false;
  if (p.texture >= 0 && static_cast<int>(o.texture) != p.texture) return false;
  if (p.size >= 0 && static_cast<int>(o.size) != p.size) return false;
  return true;
}

bool rel_holds(const SceneObject& o, const SceneObject& lm, int rel) {
  const double dx = o.box.x - lm.box.x, dy = o.box.y - lm.box.y;
  switch (rel) {
    case kLeft: return -dx > kRelationMargin;
    case kRight: return dx > kRelationMargin;
    case kAbove: return -dy > kRelationMargin;  // above means smaller y
    case kBelow: return dy > kRelationMargin;
    default: return std::sqrt(dx * dx + dy * dy) <= kNextToRadius;
  }
}

std::vector<Index> match_indices(const std::vector<SceneObject>& objects, const AttrPred& p) {
  std::vector<Index> out;
  for (size_t i = 0; i < objects.size(); ++i)
    if (attr_match(objects[i], p)) out.push_back(static_cast<Index>(i));
  return out;
}

}  // namespace

std::vector<Index> match_expression(const std::vector<std::string>& words,
                                    const std::vector<SceneObject>& objects) {
  const ParsedExpr e = parse_expression(words);
  if (!e.has_rel) return match_indices(objects, e.target);
  std::vector<Index> landmarks = match_indices(objects, e.landmark);
  if (landmarks.size() != 1) return {};  // ill-posed landmark, matches nothing
  const SceneObject& lm = objects[static_cast<size_t>(landmarks[0])];
  std::vector<Index> out;
  for (size_t i = 0; i < objects.size(); ++i) {
    if (static_cast<Index>(i) == landmarks[0]) continue;
    if (attr_match(objects[i], e.target) && rel_holds(objects[i], lm, e.rel))
      out.push_back(static_cast<Index>(i));
  }
  return out;
}

// ---- scene generation -----------------------------------------------------------------------

namespace {

bool try_place_scene(Rng& rng, const DataConfig& cfg, std::vector<SceneObject>& out) {
  out.clear();
  const Index s = cfg.image_size;
  const Index k = rng.uniform_int(cfg.objects_min, cfg.objects_max);
  for (Index obj = 0; obj < k; ++obj) {
    bool placed = false;
    for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
      SceneObject o;
      o.shape = static_cast<ShapeKind>(rng.uniform_int(0, 2));
      o.color = rng.uniform_int(0, 5);
      o.texture = static_cast<TextureKind>(rng.uniform_int(0, 1));
      o.size = static_cast<SizeKind>(rng.uniform_int(0, 1));
      const double frac = o.size == SizeKind::Small ? rng.uniform(0.15, 0.195)
                                                    : rng.uniform(0.25, 0.30);
      const Index side = std::max<Index>(8, static_cast<Index>(std::lround(
                                                frac * static_cast<double>(s))));
      if (side + 2 >= s) continue;
      const Index x0 = rng.uniform_int(1, s - side - 1);
      const Index y0 = rng.uniform_int(1, s - side - 1);
      const double ds = static_cast<double>(s);
      o.box = {(static_cast<double>(x0) + side * 0.5) / ds,
               (static_cast<double>(y0) + side * 0.5) / ds, static_cast<double>(side) / ds,
               static_cast<double>(side) / ds};
      o.z = obj;
      bool ok = true;
      for (const SceneObject& other : out)
        if (iou(o.box, other.box) > 0.1) {
          ok = false;
          break;
        }
      if (ok) {
        out.push_back(o);
        placed = true;
      }
    }
    if (!placed) return false;  // placement failure, caller re-seeds
  }
  return true;
}

std::vector<std::string> attr_words(const SceneObject& o, bool with_size, bool with_texture) {
  std::vector<std::string> w;
  if (with_size) w.push_back(to_word(o.size));
  w.push_back(palette()[static_cast<size_t>(o.color)].name);
  if (with_texture) w.push_back(to_word(o.texture));
  w.push_back(to_word(o.shape));
  return w;
}

void append_relation(std::vector<std::string>& w, int rel, const SceneObject& lm) {
  std::istringstream rs(rel_words(rel));
  std::string piece;
  while (rs >> piece) w.push_back(piece);
  w.push_back("the");
  w.push_back(palette()[static_cast<size_t>(lm.color)].name);
  w.push_back(to_word(lm.shape));
}

template <typename T>
void shuffle_vec(std::vector<T>& v, Rng& rng) {
  for (size_t i = v.size(); i > 1; --i)
    std::swap(v[i - 1], v[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(i) - 1))]);
}

// Generation-side margins are stricter than the matcher's semantics so no
// emitted relation sits near a decision boundary.
bool rel_gen_ok(const std::vector<SceneObject>& objs, Index t, Index l, int rel) {
  const SceneObject& target = objs[static_cast<size_t>(t)];
  const SceneObject& lm = objs[static_cast<size_t>(l)];
  const double dx = target.box.x - lm.box.x, dy = target.box.y - lm.box.y;
  switch (rel) {
    case kLeft: return -dx > kRelationMargin + 0.02;
    case kRight: return dx > kRelationMargin + 0.02;
    case kAbove: return -dy > kRelationMargin + 0.02;
    case kBelow: return dy > kRelationMargin + 0.02;
    default: {
      if (std::sqrt(dx * dx + dy * dy) > kNextToRadius - 0.03) return false;
      for (size_t i = 0; i < objs.size(); ++i) {
        if (static_cast<Index>(i) == t || static_cast<Index>(i) == l) continue;
        if (objs[i].shape != target.shape) continue;
        const double ox = objs[i].box.x - lm.box.x, oy = objs[i].box.y - lm.box.y;
        const double d = std::sqrt(ox * ox + oy * oy);
        if (d > kNextToRadius - 0.03 && d < kNextToRadius + 0.04) return false;  // boundary band
      }
      return true;
    }
  }
}

bool unique_landmark(const std::vector<SceneObject>& objs, Index l) {
  AttrPred p;
  p.color = static_cast<int>(objs[static_cast<size_t>(l)].color);
  p.shape = static_cast<int>(objs[static_cast<size_t>(l)].shape);
  const auto m = match_indices(objs, p);
  return m.size() == 1 && m[0] == l;
}

// attribute detail escalation order: color -> +texture -> +size -> +both
constexpr bool kSubsetSize[4] = {false, false, true, true};
constexpr bool kSubsetTexture[4] = {false, true, false, true};

Index build_attribute_expr(Rng& rng, const std::vector<SceneObject>& objs,
                           std::vector<std::string>& expr) {
  std::vector<Index> order(objs.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<Index>(i);
  shuffle_vec(order, rng);
  for (Index t : order) {
    for (int sub = 0; sub < 4; ++sub) {
      std::vector<std::string> cand =
          attr_words(objs[static_cast<size_t>(t)], kSubsetSize[sub], kSubsetTexture[sub]);
      const auto m = match_expression(cand, objs);
      if (m.size() == 1 && m[0] == t) {
        expr = std::move(cand);
        return t;
      }
    }
  }
  return -1;
}

Index build_relational_expr(Rng& rng, const std::vector<SceneObject>& objs, bool with_attrs,
                            std::vector<std::string>& expr) {
  std::vector<Index> torder(objs.size());
  for (size_t i = 0; i < torder.size(); ++i) torder[i] = static_cast<Index>(i);
  shuffle_vec(torder, rng);
  std::vector<int> rels = {kLeft, kRight, kAbove, kBelow, kNextTo};
  shuffle_vec(rels, rng);

  for (Index t : torder) {
    std::vector<Index> lorder;
    for (size_t i = 0; i < objs.size(); ++i)
      if (static_cast<Index>(i) != t) lorder.push_back(static_cast<Index>(i));
    shuffle_vec(lorder, rng);
    const int max_sub = with_attrs ? 4 : 1;
    for (int sub = 0; sub < max_sub; ++sub) {
      for (Index l : lorder) {
        if (!unique_landmark(objs, l)) continue;
        for (int rel : rels) {
          if (!rel_gen_ok(objs, t, l, rel)) continue;
          std::vector<std::string> cand;
          if (with_attrs) {
            cand = attr_words(objs[static_cast<size_t>(t)], kSubsetSize[sub], kSubsetTexture[sub]);
          } else {
            cand.push_back(to_word(objs[static_cast<size_t>(t)].shape));
          }
          append_relation(cand, rel, objs[static_cast<size_t>(l)]);
          const auto m = match_expression(cand, objs);
          if (m.size() == 1 && m[0] == t) {
            expr = std::move(cand);
            return t;
          }
        }
      }
    }
  }
  return -1;
}

// ---- rasterization ------------------------------------------------------------

bool inside_shape(const SceneObject& o, Index x0, Index y0, Index side, Index px, Index py) {
  const double cx = static_cast<double>(px) + 0.5, cy = static_cast<double>(py) + 0.5;
  switch (o.shape) {
    case ShapeKind::Square:
      return true;  // the whole box region
    case ShapeKind::Circle: {
      const double ox = static_cast<double>(x0) + static_cast<double>(side) * 0.5;
      const double oy = static_cast<double>(y0) + static_cast<double>(side) * 0.5;
      const double r = static_cast<double>(side) * 0.5;
      return (cx - ox) * (cx - ox) + (cy - oy) * (cy - oy) <= r * r;
    }
    default: {  // upward triangle: apex top-center, base bottom edge
      const double ax = static_cast<double>(x0) + static_cast<double>(side) * 0.5;
      const double ay = static_cast<double>(y0);
      const double blx = static_cast<double>(x0), bly = static_cast<double>(y0 + side);
      const double brx = static_cast<double>(x0 + side), bry = bly;
      auto edge = [&](double x1, double y1, double x2, double y2) {
        return (x2 - x1) * (cy - y1) - (y2 - y1) * (cx - x1);
      };
      const double e1 = edge(ax, ay, blx, bly);
      const double e2 = edge(blx, bly, brx, bry);
      const double e3 = edge(brx, bry, ax, ay);
      return (e1 >= 0 && e2 >= 0 && e3 >= 0) || (e1 <= 0 && e2 <= 0 && e3 <= 0);
    }
  }
}

std::vector<uint8_t> render_scene(const std::vector<SceneObject>& objs, Index s) {
  std::vector<uint8_t> img(static_cast<size_t>(3 * s * s));
  const uint8_t bg[3] = {30, 30, 36};
  for (Index c = 0; c < 3; ++c)
    std::fill(img.begin() + c * s * s, img.begin() + (c + 1) * s * s, bg[c]);

  for (const SceneObject& o : objs) {
    const ColorDef& col = palette()[static_cast<size_t>(o.color)];
    const uint8_t base[3] = {col.r, col.g, col.b};
    uint8_t shade[3];
    for (int c = 0; c < 3; ++c)
      shade[c] = static_cast<uint8_t>(std::lround(static_cast<double>(base[c]) * 0.35));
    const Index side = static_cast<Index>(std::lround(o.box.w * static_cast<double>(s)));
    const Index x0 = static_cast<Index>(std::lround((o.box.x - o.box.w / 2) * static_cast<double>(s)));
    const Index y0 = static_cast<Index>(std::lround((o.box.y - o.box.h / 2) * static_cast<double>(s)));
    for (Index py = y0; py < y0 + side; ++py) {
      if (py < 0 || py >= s) continue;
      const bool band = ((py - y0) / 4) % 2 == 1;  // alternating 4-pixel bands
      for (Index px = x0; px < x0 + side; ++px) {
        if (px < 0 || px >= s) continue;
        if (!inside_shape(o, x0, y0, side, px, py)) continue;
        const uint8_t* src = (o.texture == TextureKind::Striped && band) ? shade : base;
        for (Index c = 0; c < 3; ++c) img[static_cast<size_t>(c * s * s + py * s + px)] = src[c];
      }
    }
  }
  return img;
}

}  // namespace

Sample make_sample(uint64_t seed, Tier tier, const DataConfig& cfg) {
  for (uint64_t attempt = 0; attempt < 64; ++attempt) {
    Rng rng = Rng::fork(seed, attempt);
    std::vector<SceneObject> objs;
    if (!try_place_scene(rng, cfg, objs)) continue;

    std::vector<std::string> expr;
    Index target = -1;
    switch (tier) {
      case Tier::Attribute: target = build_attribute_expr(rng, objs, expr); break;
      case Tier::Relation: target = build_relational_expr(rng, objs, false, expr); break;
      case Tier::Composed: target = build_relational_expr(rng, objs, true, expr); break;
    }
    if (target < 0) continue;

    Sample sample;
    sample.seed = seed;
    sample.tier = tier;
    sample.objects = std::move(objs);
    sample.target = target;
    sample.expression = std::move(expr);
    sample.tokens = tokenize(sample.expression, cfg.max_words);
    sample.image = render_scene(sample.objects, cfg.image_size);
    sample.image_size = cfg.image_size;
    return sample;
  }
  throw DataError(cat("sample generation failed for seed ", seed, " tier ", tier_name(tier)));
}

Tensor image_tensor(const std::vector<uint8_t>& bytes, Index image_size) {
  Array a(static_cast<Index>(bytes.size()));
  for (size_t i = 0; i < bytes.size(); ++i)
    a[static_cast<Index>(i)] = static_cast<double>(bytes[i]) / 255.0;
  return Tensor(Shape{3, image_size, image_size}, std::move(a));
}

// ---- splits -------------------------------------------------------------------------

uint64_t split_offset(const std::string& split) {
  if (split == "train") return 0;
  if (split == "val") return 1000000;
  if (split == "test") return 2000000;
  throw DataError(cat("unknown split '", split, "'"));
}

SampleStream::SampleStream(const std::string& split, Index size, uint64_t base_seed,
                           DataConfig cfg, const std::array<double, 3>& tier_mix)
    : size_(size), offset_(base_seed + split_offset(split)), cfg_(cfg) {
  if (size >= 1000000) throw ContractError("split size must stay below the seed-range stride");
  tiers_.resize(static_cast<size_t>(size));
  double counts[3] = {0, 0, 0};
  for (Index i = 0; i < size; ++i) {
    int best = 0;
    double best_deficit = -1e300;
    for (int t = 0; t < 3; ++t) {
      const double deficit = tier_mix[static_cast<size_t>(t)] * static_cast<double>(i + 1) - counts[t];
      if (deficit > best_deficit + 1e-12) {
        best = t;
        best_deficit = deficit;
      }
    }
    tiers_[static_cast<size_t>(i)] = static_cast<Tier>(best);
    counts[best] += 1.0;
  }
}

uint64_t SampleStream::seed_of(Index i) const { return offset_ + static_cast<uint64_t>(i); }

Sample SampleStream::sample(Index i) const {
  return make_sample(seed_of(i), tiers_[static_cast<size_t>(i)], cfg_);
}

TrainExample SampleStream::example(Index i) const {
  Sample s = sample(i);
  return {s.seed,       s.tier,   std::move(s.image), s.image_size,
          std::move(s.tokens), std::move(s.expression), s.target_box()};
}

// ---- dump / load -------------------------------------------------------------------------

namespace {

void write_ppm(const std::string& path, const std::vector<uint8_t>& chw, Index s) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError(cat("cannot write ", path));
  f << "P6\n" << s << " " << s << "\n255\n";
  std::vector<uint8_t> row(static_cast<size_t>(3 * s));
  for (Index y = 0; y < s; ++y) {
    for (Index x = 0; x < s; ++x)
      for (Index c = 0; c < 3; ++c)
        row[static_cast<size_t>(3 * x + c)] = chw[static_cast<size_t>(c * s * s + y * s + x)];
    f.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
}

std::vector<uint8_t> read_ppm(const std::string& path, Index& s_out) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError(cat("cannot read ", path));
  std::string magic;
  Index w = 0, h = 0, maxval = 0;
  f >> magic >> w >> h >> maxval;
  if (magic != "P6" || w != h || maxval != 255)
    throw IoError(cat("unsupported ppm ", path, " (", magic, " ", w, "x", h, ")"));
  f.get();  // the single whitespace after the header
  std::vector<uint8_t> inter(static_cast<size_t>(3 * w * h));
  f.read(reinterpret_cast<char*>(inter.data()), static_cast<std::streamsize>(inter.size()));
  if (!f) throw IoError(cat("truncated ppm ", path));
  std::vector<uint8_t> chw(inter.size());
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x)
      for (Index c = 0; c < 3; ++c)
        chw[static_cast<size_t>(c * w * h + y * w + x)] = inter[static_cast<size_t>(3 * (y * w + x) + c)];
  s_out = w;
  return chw;
}

std::string join_words(const std::vector<std::string>& words) {
  std::string out;
  for (size_t i = 0; i < words.size(); ++i) {
    if (i) out += ' ';
    out += words[i];
  }
  return out;
}

std::vector<std::string> split_words(const std::string& s) {
  std::istringstream is(s);
  std::vector<std::string> words;
  std::string w;
  while (is >> w) words.push_back(w);
  return words;
}

}  // namespace

void dump_split(const SampleStream& stream, const std::string& dir) {
  fs::create_directories(fs::path(dir) / "img");
  std::ofstream ann(fs::path(dir) / "annotations.csv");
  if (!ann) throw IoError(cat("cannot write annotations under ", dir));
  ann << std::setprecision(17);
  for (Index i = 0; i < stream.size(); ++i) {
    Sample s = stream.sample(i);
    std::ostringstream name;
    name << std::setw(6) << std::setfill('0') << i << ".ppm";
    write_ppm((fs::path(dir) / "img" / name.str()).string(), s.image, s.image_size);
    const Box b = s.target_box();
    ann << s.seed << ',' << tier_name(s.tier) << ',' << join_words(s.expression) << ',' << b.x
        << ',' << b.y << ',' << b.h << ',' << b.w << '\n';
  }
}

DumpReader::DumpReader(const std::string& dir, Index max_words)
    : dir_(dir), max_words_(max_words) {
  std::ifstream ann(fs::path(dir) / "annotations.csv");
  if (!ann) throw IoError(cat("cannot read annotations under ", dir));
  std::string line;
  while (std::getline(ann, line)) {
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::string field;
    std::istringstream ls(line);
    while (std::getline(ls, field, ',')) fields.push_back(field);
    if (fields.size() != 7) throw IoError(cat("malformed annotation line: ", line));
    Row r;
    r.seed = std::stoull(fields[0]);
    r.tier = tier_from_name(fields[1]);
    r.expression = split_words(fields[2]);
    r.target = {std::stod(fields[3]), std::stod(fields[4]), std::stod(fields[5]),
                std::stod(fields[6])};
    rows_.push_back(std::move(r));
  }
}

TrainExample DumpReader::example(Index i) const {
  const Row& r = rows_.at(static_cast<size_t>(i));
  std::ostringstream name;
  name << std::setw(6) << std::setfill('0') << i << ".ppm";
  Index s = 0;
  std::vector<uint8_t> img = read_ppm((fs::path(dir_) / "img" / name.str()).string(), s);
  return {r.seed, r.tier, std::move(img), s, tokenize(r.expression, max_words_), r.expression,
          r.target};
}

}  // namespace cmf
