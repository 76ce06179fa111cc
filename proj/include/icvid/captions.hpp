#pragma once

#include <string>
#include <vector>

#include "icvid/semantics.hpp"
#include "icvid/sprites.hpp"

namespace icvid {

// Structured caption vocabulary. Fixed layout, length 16:
//   [BOS, CATEGORY, SEMANTIC, PARAM_BUCKET, SHAPE, COLOR, SIZE, EOS, PAD x 8]
// Every enum value of every field has its own token id; the zero-shot
// semantics are in-vocabulary (their embeddings simply never receive
// gradient during training).
namespace vocab {
inline constexpr int kPad = 0;
inline constexpr int kBos = 1;
inline constexpr int kEos = 2;
inline constexpr int kCategoryBase = 3;   // 3..7: concept, style, motion, camera, base
inline constexpr int kSemanticBase = 8;   // 8..23: the 16-condition inventory
inline constexpr int kBaseSemBase = 24;   // 24..34: pretraining base dynamics
inline constexpr int kParamBase = 35;     // 35..37: PARAM_1..PARAM_3
inline constexpr int kShapeBase = 38;     // 38..41
inline constexpr int kColorBase = 42;     // 42..49
inline constexpr int kSizeBase = 50;      // 50..52 for sizes 5..7
inline constexpr int kSize = 53;
// Sizes below 5 are excluded: square/circle/cross rasters collapse onto the
// same pixel sets at 3-4 px, which would break morph distinctness and the
// strict-argmin property of the rendering oracle.
inline constexpr int kMinSubjectSize = 5;
inline constexpr int kMaxSubjectSize = 7;
}  // namespace vocab

inline constexpr int kCaptionLen = 16;

std::vector<int> make_caption(const SemanticSpec& spec, const Subject& subject);

struct CaptionFields {
  Category category;
  std::string semantic_id;
  int param_bucket;
  Shape shape;
  int color_idx;
  int size;
};

// Inverse of make_caption; throws DataError on any malformed layout.
CaptionFields decode_caption(const std::vector<int>& tokens);

}  // namespace icvid
