#include "icvid/captions.hpp"

#include "icvid/errors.hpp"

namespace icvid {

namespace {

int base_semantic_index(const std::string& id) {
  const auto& inv = base_inventory();
  for (size_t i = 0; i < inv.size(); ++i)
    if (inv[i].id == id) return static_cast<int>(i);
  return -1;
}

int semantic_token(const SemanticSpec& spec) {
  if (spec.category == Category::Base) {
    int idx = base_semantic_index(spec.id);
    if (idx < 0) throw DataError("caption: unknown base semantic " + spec.id);
    return vocab::kBaseSemBase + idx;
  }
  int idx = semantic_index(spec.id);
  if (idx < 0) throw DataError("caption: unknown semantic " + spec.id);
  return vocab::kSemanticBase + idx;
}

}  // namespace

std::vector<int> make_caption(const SemanticSpec& spec, const Subject& subject) {
  if (spec.param_bucket < 1 || spec.param_bucket > 3)
    throw DataError("caption: param bucket out of range");
  if (subject.size < vocab::kMinSubjectSize || subject.size > vocab::kMaxSubjectSize)
    throw DataError("caption: subject size outside vocabulary range");
  if (subject.color_idx < 0 || subject.color_idx >= kPaletteSize)
    throw DataError("caption: color index outside palette");
  std::vector<int> toks(kCaptionLen, vocab::kPad);
  toks[0] = vocab::kBos;
  toks[1] = vocab::kCategoryBase + static_cast<int>(spec.category);
  toks[2] = semantic_token(spec);
  toks[3] = vocab::kParamBase + (spec.param_bucket - 1);
  toks[4] = vocab::kShapeBase + static_cast<int>(subject.shape);
  toks[5] = vocab::kColorBase + subject.color_idx;
  toks[6] = vocab::kSizeBase + (subject.size - vocab::kMinSubjectSize);
  toks[7] = vocab::kEos;
  return toks;
}

CaptionFields decode_caption(const std::vector<int>& tokens) {
  if (tokens.size() != kCaptionLen)
    throw DataError("caption: wrong length " + std::to_string(tokens.size()));
  auto expect_range = [&](int pos, int base, int count) {
    int v = tokens[static_cast<size_t>(pos)] - base;
    if (v < 0 || v >= count)
      throw DataError("caption: token at slot " + std::to_string(pos) +
                      " outside expected range");
    return v;
  };
  if (tokens[0] != vocab::kBos) throw DataError("caption: missing BOS");
  if (tokens[7] != vocab::kEos) throw DataError("caption: missing EOS");
  for (int i = 8; i < kCaptionLen; ++i)
    if (tokens[static_cast<size_t>(i)] != vocab::kPad)
      throw DataError("caption: non-PAD token in padding");

  CaptionFields f;
  f.category = static_cast<Category>(expect_range(1, vocab::kCategoryBase, 5));
  const int sem = tokens[2];
  if (f.category == Category::Base) {
    int idx = sem - vocab::kBaseSemBase;
    const auto& inv = base_inventory();
    if (idx < 0 || idx >= static_cast<int>(inv.size()))
      throw DataError("caption: base semantic token out of range");
    f.semantic_id = inv[static_cast<size_t>(idx)].id;
  } else {
    int idx = sem - vocab::kSemanticBase;
    const auto& inv = semantic_inventory();
    if (idx < 0 || idx >= static_cast<int>(inv.size()))
      throw DataError("caption: semantic token out of range");
    if (inv[static_cast<size_t>(idx)].category != f.category)
      throw DataError("caption: semantic/category mismatch");
    f.semantic_id = inv[static_cast<size_t>(idx)].id;
  }
  f.param_bucket = expect_range(3, vocab::kParamBase, 3) + 1;
  f.shape = static_cast<Shape>(expect_range(4, vocab::kShapeBase, kNumShapes));
  f.color_idx = expect_range(5, vocab::kColorBase, kPaletteSize);
  f.size = expect_range(6, vocab::kSizeBase, 3) + vocab::kMinSubjectSize;
  return f;
}

}  // namespace icvid
