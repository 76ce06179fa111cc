#include "icvid/sprites.hpp"

#include <cmath>

#include "icvid/errors.hpp"

namespace icvid {

const char* shape_name(Shape s) {
  switch (s) {
    case Shape::Square: return "square";
    case Shape::Circle: return "circle";
    case Shape::Triangle: return "triangle";
    case Shape::Cross: return "cross";
  }
  throw UsageError("unknown shape enum value");
}

Shape shape_from_name(const std::string& name) {
  for (int i = 0; i < kNumShapes; ++i)
    if (name == shape_name(static_cast<Shape>(i))) return static_cast<Shape>(i);
  throw DataError("unknown shape name: " + name);
}

const std::array<float, 3>& palette_color(int idx) {
  static const std::array<std::array<float, 3>, kPaletteSize> kPalette = {{
      {0.90f, 0.20f, 0.20f},  // red
      {0.20f, 0.85f, 0.25f},  // green
      {0.25f, 0.40f, 0.95f},  // blue
      {0.95f, 0.80f, 0.20f},  // yellow
      {0.85f, 0.25f, 0.85f},  // magenta
      {0.20f, 0.80f, 0.85f},  // cyan
      {0.95f, 0.55f, 0.15f},  // orange
      {0.60f, 0.25f, 0.80f},  // purple
  }};
  if (idx < 0 || idx >= kPaletteSize)
    throw DataError("palette index out of range: " + std::to_string(idx));
  return kPalette[static_cast<size_t>(idx)];
}

bool sprite_covers(Shape shape, double size, double center_r, double center_c,
                   int i, int j) {
  const double dy = (i + 0.5) - center_r;
  const double dx = (j + 0.5) - center_c;
  const double half = size / 2.0;
  switch (shape) {
    case Shape::Square:
      return std::max(std::abs(dy), std::abs(dx)) < half;
    case Shape::Circle:
      return dy * dy + dx * dx < half * half;
    case Shape::Triangle: {
      // Apex up: width grows linearly from the apex row to the base row.
      if (std::abs(dy) >= half) return false;
      const double t = (dy + half) / size;  // 0 at apex, 1 at base
      return std::abs(dx) < t * half;
    }
    case Shape::Cross:
      // Plus sign: two perpendicular bars of thickness size/3 (thin enough
      // that the cross never degenerates into the circle's pixel set).
      return (std::abs(dy) < half && std::abs(dx) < size / 6.0) ||
             (std::abs(dx) < half && std::abs(dy) < size / 6.0);
  }
  return false;
}

void draw_sprite(Tensor<float>& frame, Shape shape,
                 const std::array<float, 3>& color, double size,
                 double center_r, double center_c) {
  const int h = static_cast<int>(frame.dim(0));
  const int w = static_cast<int>(frame.dim(1));
  // Only scan the bounding box (clipped to the frame).
  const double half = size / 2.0;
  const int i0 = std::max(0, static_cast<int>(std::floor(center_r - half)));
  const int i1 = std::min(h - 1, static_cast<int>(std::ceil(center_r + half)));
  const int j0 = std::max(0, static_cast<int>(std::floor(center_c - half)));
  const int j1 = std::min(w - 1, static_cast<int>(std::ceil(center_c + half)));
  for (int i = i0; i <= i1; ++i)
    for (int j = j0; j <= j1; ++j)
      if (sprite_covers(shape, size, center_r, center_c, i, j)) {
        float* px = frame.data() + (static_cast<int64_t>(i) * w + j) * 3;
        px[0] = color[0];
        px[1] = color[1];
        px[2] = color[2];
      }
}

Tensor<float> render_subject(const Subject& s, int frame_h, int frame_w) {
  if (s.size < 2) throw DataError("subject size must be >= 2 px");
  if (s.row < 0 || s.col < 0 || s.row + s.size > frame_h ||
      s.col + s.size > frame_w)
    throw DataError("subject bounding box leaves the frame at rest");
  Tensor<float> frame({frame_h, frame_w, 3});
  for (int64_t i = 0; i < frame.numel(); ++i) frame.data()[i] = kBackground;
  draw_sprite(frame, s.shape, s.color, s.size, s.row + s.size / 2.0,
              s.col + s.size / 2.0);
  return frame;
}

}  // namespace icvid
