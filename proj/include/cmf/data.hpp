#pragma once

#include <array>
#include <memory>
#include <string>
#include <vector>

#include "cmf/boxes.hpp"
#include "cmf/layers.hpp"
#include "cmf/rng.hpp"
#include "cmf/tensor.hpp"

namespace cmf {

// ---- vocabulary ---------------------------------------------------------------

/// Fixed vocabulary: [PAD]=0, [CLS]=1, [SEP]=2, then the task words with ids
/// assigned by sorted order. Deterministic across runs and platforms.
class Vocab {
 public:
  static constexpr Index kPad = 0, kCls = 1, kSep = 2;
  static const Vocab& instance();

  Index id(const std::string& word) const;  // DataError on unknown words
  const std::string& word(Index id) const;
  Index size() const { return static_cast<Index>(words_.size()); }

 private:
  Vocab();
  std::vector<std::string> words_;
};

/// Padded token-id sequence: [CLS] words [SEP] [PAD]...; word_mask is true
/// exactly at the padding positions.
struct TokenBatch {
  std::vector<Index> ids;
  PadMask word_mask;
};

TokenBatch tokenize(const std::vector<std::string>& words, Index max_len);
std::vector<std::string> detokenize(const TokenBatch& batch);

// ---- scene model ------------------------------------------------------------------

enum class ShapeKind { Square, Circle, Triangle };
enum class TextureKind { Solid, Striped };
enum class SizeKind { Small, Large };
enum class Tier { Attribute, Relation, Composed };

const char* to_word(ShapeKind s);
const char* to_word(TextureKind t);
const char* to_word(SizeKind s);
const char* tier_name(Tier t);
Tier tier_from_name(const std::string& name);

struct ColorDef {
  const char* name;
  uint8_t r, g, b;
};
const std::array<ColorDef, 6>& palette();

struct SceneObject {
  ShapeKind shape;
  Index color;  // palette index
  TextureKind texture;
  SizeKind size;
  Box box;   // normalized, exact target geometry
  Index z;   // draw order
};

struct Sample {
  uint64_t seed = 0;
  Tier tier = Tier::Attribute;
  std::vector<SceneObject> objects;
  Index target = -1;
  std::vector<std::string> expression;
  TokenBatch tokens;
  std::vector<uint8_t> image;  // channel-major [3][S][S] bytes
  Index image_size = 0;

  Box target_box() const { return objects[static_cast<size_t>(target)].box; }
};

struct DataConfig {
  Index image_size = 128;
  Index objects_min = 2;
  Index objects_max = 6;
  Index max_words = 16;  // token sequence length L
};

/// Relation semantics shared by the generator and the matcher. Axis
/// relations require a center gap greater than 5% of the image; "next to"
/// means center distance at most 0.30.
constexpr double kRelationMargin = 0.05;
constexpr double kNextToRadius = 0.30;

/// Brute-force expression matcher, the oracle the generator must satisfy:
/// returns the indices of every object the expression describes.
std::vector<Index> match_expression(const std::vector<std::string>& words,
                                    const std::vector<SceneObject>& objects);

/// Deterministic sample construction: same (seed, tier, config) gives a
/// bit-identical sample. Throws DataError if no well-posed scene/expression
/// pair can be built from this seed's attempt budget.
Sample make_sample(uint64_t seed, Tier tier, const DataConfig& cfg);

/// Image bytes as a [3,S,S] tensor of byte/255 doubles.
Tensor image_tensor(const std::vector<uint8_t>& bytes, Index image_size);

// ---- splits --------------------------------------------------------------------------

/// What the trainer consumes; produced identically by the generator stream
/// and by a dumped-to-disk split.
struct TrainExample {
  uint64_t seed = 0;
  Tier tier = Tier::Attribute;
  std::vector<uint8_t> image;
  Index image_size = 0;
  TokenBatch tokens;
  std::vector<std::string> expression;
  Box target;
};

class DataSource {
 public:
  virtual ~DataSource() = default;
  virtual Index size() const = 0;
  virtual TrainExample example(Index i) const = 0;
  virtual Tier tier_of(Index i) const = 0;
};

/// Seed-indexed generator stream. Split offsets keep seed ranges disjoint:
/// train base+0, val base+1e6, test base+2e6. Sample i of a split derives
/// only from its own seed, so workers can generate in parallel.
class SampleStream : public DataSource {
 public:
  SampleStream(const std::string& split, Index size, uint64_t base_seed, DataConfig cfg,
               const std::array<double, 3>& tier_mix = {1.0 / 3, 1.0 / 3, 1.0 / 3});

  Index size() const override { return size_; }
  TrainExample example(Index i) const override;
  Tier tier_of(Index i) const override { return tiers_[static_cast<size_t>(i)]; }
  Sample sample(Index i) const;
  uint64_t seed_of(Index i) const;
  const DataConfig& config() const { return cfg_; }

 private:
  Index size_;
  uint64_t offset_;
  DataConfig cfg_;
  std::vector<Tier> tiers_;  // largest-remainder schedule of the tier mix
};

uint64_t split_offset(const std::string& split);

/// Writes images (binary PPM) and an annotations file with line records
/// `seed,tier,expression,x,y,h,w`; box fields use round-trip precision.
void dump_split(const SampleStream& stream, const std::string& dir);

/// Reads a dumped split; examples reproduce the generator stream
/// bit-identically.
class DumpReader : public DataSource {
 public:
  explicit DumpReader(const std::string& dir, Index max_words = 16);
  Index size() const override { return static_cast<Index>(rows_.size()); }
  TrainExample example(Index i) const override;
  Tier tier_of(Index i) const override { return rows_[static_cast<size_t>(i)].tier; }

 private:
  struct Row {
    uint64_t seed;
    Tier tier;
    std::vector<std::string> expression;
    Box target;
  };
  std::string dir_;
  Index max_words_;
  std::vector<Row> rows_;
};

}  // namespace cmf
