#pragma once

#include <map>
#include <string>
#include <vector>

#include "icvid/sprites.hpp"
#include "icvid/video.hpp"

namespace icvid {

// "concept" is a C++20 keyword; enum values are capitalized throughout.
// Base is the pretraining-only dynamics family; it shares no id with the
// 16-condition evaluation inventory.
enum class Category : int { Concept = 0, Style = 1, Motion = 2, Camera = 3, Base = 4 };

const char* category_name(Category c);
Category category_from_name(const std::string& name);

// A procedural semantic condition: deterministically maps a subject to a
// video. `params` carries the canonical scalars (fixed per id so the
// evaluation inventory stays exactly 16 renderers).
struct SemanticSpec {
  Category category = Category::Concept;
  std::string id;
  std::map<std::string, double> params;
  int param_bucket = 1;  // caption bucket (1-based, <= 3)
};

// The 16-condition inventory in fixed order: 4 per category, the zero-shot
// holdout last within its category block.
//   concept: morph_to_circle, morph_to_cross, morph_to_square | morph_to_triangle*
//   style:   style_warm, style_cool, style_gray | style_invert*
//   motion:  bounce_h, grow, shrink | bounce_v*
//   camera:  pan_up, pan_left, pan_right | pan_down*
const std::vector<SemanticSpec>& semantic_inventory();
const std::vector<int>& trained_semantic_indices();   // 12 entries
const std::vector<int>& zeroshot_semantic_indices();  // 4 entries

// Pretraining-only base dynamics: base_still, base_drift_{u,d,l,r,ul,ur,dl,dr},
// base_bright_up, base_bright_down.
const std::vector<SemanticSpec>& base_inventory();

int semantic_index(const std::string& id);  // -1 when unknown
const SemanticSpec& semantic_by_id(const std::string& id);

struct RenderResult {
  VideoClip video;
  bool clamped = false;  // motion drove the subject into the frame boundary
};

// Frame k is the deterministic transform of the subject at time k. Every
// semantic satisfies frame 0 == render_subject(subject), which anchors the
// static-baseline normalization in the oracle.
RenderResult apply_semantic(const SemanticSpec& spec, const Subject& subject,
                            int n_frames, int frame_h, int frame_w);

// Valid top-left positions for a subject of `size` so that the given
// semantic never clamps or exits the frame: {row_min,row_max,col_min,col_max}
// (inclusive). The corpus samples positions from this box.
struct SafeBox {
  int row_min, row_max, col_min, col_max;
};
SafeBox safe_box(const SemanticSpec& spec, int size, int n_frames, int frame_h,
                 int frame_w);

// Subject shapes compatible with a semantic (morphs exclude their target).
std::vector<Shape> allowed_shapes(const SemanticSpec& spec);

// Style color maps, exposed for the oracle tests.
void apply_style_map(const std::string& id, const float* in, float* out);

}  // namespace icvid
