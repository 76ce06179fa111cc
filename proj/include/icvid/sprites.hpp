#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "icvid/video.hpp"

namespace icvid {

enum class Shape : int { Square = 0, Circle = 1, Triangle = 2, Cross = 3 };

inline constexpr int kNumShapes = 4;

const char* shape_name(Shape s);
Shape shape_from_name(const std::string& name);

// 8 chromatic palette colors. None is gray (r==g==b) and none is a fixed
// point of the style color maps, so every style semantic is visible on every
// subject and the rendering oracle stays strictly decidable.
inline constexpr int kPaletteSize = 8;
const std::array<float, 3>& palette_color(int idx);

struct Subject {
  Shape shape = Shape::Square;
  std::array<float, 3> color{1.f, 1.f, 1.f};
  int color_idx = 0;  // palette index backing `color`
  int size = 3;       // bounding-box side in pixels, >= 2
  int row = 0;        // top-left corner of the size x size bounding box
  int col = 0;
  uint64_t seed = 0;
};

// Binary-coverage rasterization of a sprite whose size x size bounding box
// is centered at (center_r, center_c) in pixel coordinates (pixel (i,j)
// covers [i, i+1) x [j, j+1), its center is (i+0.5, j+0.5)). No
// anti-aliasing: each pixel is either fully subject color or untouched.
// Fractional sizes/centers are allowed (grow/shrink/bounce animate them).
void draw_sprite(Tensor<float>& frame, Shape shape,
                 const std::array<float, 3>& color, double size,
                 double center_r, double center_c);

// Renders the subject at rest on the fixed background: frame 0 of every
// semantic rendering.
Tensor<float> render_subject(const Subject& s, int frame_h, int frame_w);

// Pixel predicate used by draw_sprite, exposed for the enumeration oracles.
bool sprite_covers(Shape shape, double size, double center_r, double center_c,
                   int i, int j);

}  // namespace icvid
