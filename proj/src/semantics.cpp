#include "icvid/semantics.hpp"

#include <algorithm>
#include <cmath>

#include "icvid/errors.hpp"

namespace icvid {

const char* category_name(Category c) {
  switch (c) {
    case Category::Concept: return "concept";
    case Category::Style: return "style";
    case Category::Motion: return "motion";
    case Category::Camera: return "camera";
    case Category::Base: return "base";
  }
  throw UsageError("unknown category enum value");
}

Category category_from_name(const std::string& name) {
  for (int i = 0; i <= 4; ++i)
    if (name == category_name(static_cast<Category>(i)))
      return static_cast<Category>(i);
  throw DataError("unknown category name: " + name);
}

namespace {

SemanticSpec make_spec(Category cat, const std::string& id,
                       std::map<std::string, double> params, int bucket) {
  SemanticSpec s;
  s.category = cat;
  s.id = id;
  s.params = std::move(params);
  s.param_bucket = bucket;
  return s;
}

std::vector<SemanticSpec> build_inventory() {
  std::vector<SemanticSpec> inv;
  const double circle = static_cast<double>(Shape::Circle);
  const double cross = static_cast<double>(Shape::Cross);
  const double square = static_cast<double>(Shape::Square);
  const double triangle = static_cast<double>(Shape::Triangle);
  inv.push_back(make_spec(Category::Concept, "morph_to_circle", {{"target", circle}}, 1));
  inv.push_back(make_spec(Category::Concept, "morph_to_cross", {{"target", cross}}, 1));
  inv.push_back(make_spec(Category::Concept, "morph_to_square", {{"target", square}}, 1));
  inv.push_back(make_spec(Category::Concept, "morph_to_triangle", {{"target", triangle}}, 1));
  inv.push_back(make_spec(Category::Style, "style_warm", {{"strength", 1.0}}, 1));
  inv.push_back(make_spec(Category::Style, "style_cool", {{"strength", 1.0}}, 1));
  inv.push_back(make_spec(Category::Style, "style_gray", {{"strength", 1.0}}, 1));
  inv.push_back(make_spec(Category::Style, "style_invert", {{"strength", 1.0}}, 1));
  inv.push_back(make_spec(Category::Motion, "bounce_h", {{"amplitude", 2.0}, {"period", 4.0}}, 2));
  inv.push_back(make_spec(Category::Motion, "grow", {{"rate", 0.5}}, 1));
  inv.push_back(make_spec(Category::Motion, "shrink", {{"rate", 0.5}}, 1));
  inv.push_back(make_spec(Category::Motion, "bounce_v", {{"amplitude", 2.0}, {"period", 4.0}}, 2));
  inv.push_back(make_spec(Category::Camera, "pan_up", {{"velocity", 1.0}}, 1));
  inv.push_back(make_spec(Category::Camera, "pan_left", {{"velocity", 1.0}}, 1));
  inv.push_back(make_spec(Category::Camera, "pan_right", {{"velocity", 1.0}}, 1));
  inv.push_back(make_spec(Category::Camera, "pan_down", {{"velocity", 1.0}}, 1));
  return inv;
}

std::vector<SemanticSpec> build_base_inventory() {
  std::vector<SemanticSpec> inv;
  inv.push_back(make_spec(Category::Base, "base_still", {}, 1));
  const char* dirs[] = {"u", "d", "l", "r", "ul", "ur", "dl", "dr"};
  for (const char* d : dirs)
    inv.push_back(make_spec(Category::Base, std::string("base_drift_") + d,
                            {{"velocity", 1.0}}, 1));
  inv.push_back(make_spec(Category::Base, "base_bright_up", {{"rate", 0.05}}, 1));
  inv.push_back(make_spec(Category::Base, "base_bright_down", {{"rate", 0.05}}, 1));
  return inv;
}

// The zero-shot holdout is the last entry of each category block.
const int kHoldoutOffset = 3;

// Unit direction (dy, dx) for pans and drifts; pans use the content-shift
// convention (pan_right moves content right).
bool shift_direction(const std::string& id, int* dy, int* dx) {
  *dy = 0;
  *dx = 0;
  std::string suffix;
  if (id.rfind("pan_", 0) == 0) suffix = id.substr(4);
  else if (id.rfind("base_drift_", 0) == 0) suffix = id.substr(11);
  else return false;
  if (suffix == "up" || suffix == "u") *dy = -1;
  else if (suffix == "down" || suffix == "d") *dy = 1;
  else if (suffix == "left" || suffix == "l") *dx = -1;
  else if (suffix == "right" || suffix == "r") *dx = 1;
  else if (suffix == "ul") { *dy = -1; *dx = -1; }
  else if (suffix == "ur") { *dy = -1; *dx = 1; }
  else if (suffix == "dl") { *dy = 1; *dx = -1; }
  else if (suffix == "dr") { *dy = 1; *dx = 1; }
  else throw DataError("unknown shift direction in semantic id: " + id);
  return true;
}

}  // namespace

const std::vector<SemanticSpec>& semantic_inventory() {
  static const std::vector<SemanticSpec> inv = build_inventory();
  return inv;
}

const std::vector<int>& trained_semantic_indices() {
  static const std::vector<int> idx = [] {
    std::vector<int> v;
    for (int block = 0; block < 4; ++block)
      for (int i = 0; i < kHoldoutOffset; ++i) v.push_back(block * 4 + i);
    return v;
  }();
  return idx;
}

const std::vector<int>& zeroshot_semantic_indices() {
  static const std::vector<int> idx = {3, 7, 11, 15};
  return idx;
}

const std::vector<SemanticSpec>& base_inventory() {
  static const std::vector<SemanticSpec> inv = build_base_inventory();
  return inv;
}

int semantic_index(const std::string& id) {
  const auto& inv = semantic_inventory();
  for (size_t i = 0; i < inv.size(); ++i)
    if (inv[i].id == id) return static_cast<int>(i);
  return -1;
}

const SemanticSpec& semantic_by_id(const std::string& id) {
  int idx = semantic_index(id);
  if (idx >= 0) return semantic_inventory()[static_cast<size_t>(idx)];
  for (const SemanticSpec& s : base_inventory())
    if (s.id == id) return s;
  throw DataError("unknown semantic id: " + id);
}

void apply_style_map(const std::string& id, const float* in, float* out) {
  if (id == "style_warm") {
    out[0] = 0.30f + 0.70f * in[0];
    out[1] = 0.05f + 0.85f * in[1];
    out[2] = 0.60f * in[2];
  } else if (id == "style_cool") {
    out[0] = 0.60f * in[0];
    out[1] = 0.05f + 0.85f * in[1];
    out[2] = 0.30f + 0.70f * in[2];
  } else if (id == "style_gray") {
    const float y = 0.299f * in[0] + 0.587f * in[1] + 0.114f * in[2];
    out[0] = y;
    out[1] = y;
    out[2] = y;
  } else if (id == "style_invert") {
    out[0] = 1.0f - in[0];
    out[1] = 1.0f - in[1];
    out[2] = 1.0f - in[2];
  } else {
    throw DataError("unknown style id: " + id);
  }
}

std::vector<Shape> allowed_shapes(const SemanticSpec& spec) {
  std::vector<Shape> shapes;
  int excluded = -1;
  if (spec.category == Category::Concept)
    excluded = static_cast<int>(spec.params.at("target"));
  for (int i = 0; i < kNumShapes; ++i)
    if (i != excluded) shapes.push_back(static_cast<Shape>(i));
  return shapes;
}

SafeBox safe_box(const SemanticSpec& spec, int size, int n_frames, int frame_h,
                 int frame_w) {
  SafeBox box{0, frame_h - size, 0, frame_w - size};
  int dy = 0, dx = 0;
  if (shift_direction(spec.id, &dy, &dx)) {
    const int travel =
        static_cast<int>(spec.params.at("velocity")) * (n_frames - 1);
    if (dy < 0) box.row_min += travel;
    if (dy > 0) box.row_max -= travel;
    if (dx < 0) box.col_min += travel;
    if (dx > 0) box.col_max -= travel;
  } else if (spec.id == "bounce_h") {
    const int amp = static_cast<int>(spec.params.at("amplitude"));
    box.col_min += amp;
    box.col_max -= amp;
  } else if (spec.id == "bounce_v") {
    const int amp = static_cast<int>(spec.params.at("amplitude"));
    box.row_min += amp;
    box.row_max -= amp;
  } else if (spec.id == "grow") {
    // Largest extent: size + rate*(n-1); keep the grown sprite inside.
    const double margin = spec.params.at("rate") * (n_frames - 1) / 2.0;
    box.row_min = static_cast<int>(std::ceil(margin));
    box.row_max = static_cast<int>(std::floor(frame_h - size - margin));
    box.col_min = static_cast<int>(std::ceil(margin));
    box.col_max = static_cast<int>(std::floor(frame_w - size - margin));
  }
  if (box.row_min > box.row_max || box.col_min > box.col_max)
    throw DataError("semantic " + spec.id + " admits no safe position for size " +
                    std::to_string(size));
  return box;
}

RenderResult apply_semantic(const SemanticSpec& spec, const Subject& subject,
                            int n_frames, int frame_h, int frame_w) {
  if (n_frames < 2) throw UsageError("apply_semantic requires n_frames >= 2");
  RenderResult res;
  res.video = make_clip(n_frames, frame_h, frame_w);
  Tensor<float> f0 = render_subject(subject, frame_h, frame_w);
  const int64_t fsz = f0.numel();
  const std::string& id = spec.id;

  int dy = 0, dx = 0;
  if (id == "base_still") {
    for (int k = 0; k < n_frames; ++k)
      std::copy(f0.data(), f0.data() + fsz, frame_ptr(res.video, k));
  } else if (shift_direction(id, &dy, &dx)) {
    const int v = static_cast<int>(spec.params.at("velocity"));
    for (int k = 0; k < n_frames; ++k)
      shift_frame(f0.data(), frame_ptr(res.video, k), frame_h, frame_w,
                  k * v * dy, k * v * dx);
  } else if (spec.category == Category::Style) {
    Tensor<float> mapped({frame_h, frame_w, 3});
    for (int64_t p = 0; p < fsz; p += 3)
      apply_style_map(id, f0.data() + p, mapped.data() + p);
    for (int k = 0; k < n_frames; ++k) {
      const float alpha = static_cast<float>(k) / static_cast<float>(n_frames - 1);
      float* dst = frame_ptr(res.video, k);
      for (int64_t p = 0; p < fsz; ++p)
        dst[p] = (1.0f - alpha) * f0.data()[p] + alpha * mapped.data()[p];
    }
  } else if (spec.category == Category::Concept) {
    const Shape target = static_cast<Shape>(static_cast<int>(spec.params.at("target")));
    Tensor<float> fdst({frame_h, frame_w, 3});
    for (int64_t p = 0; p < fsz; ++p) fdst.data()[p] = kBackground;
    draw_sprite(fdst, target, subject.color, subject.size,
                subject.row + subject.size / 2.0, subject.col + subject.size / 2.0);
    for (int k = 0; k < n_frames; ++k) {
      const float beta = static_cast<float>(k) / static_cast<float>(n_frames - 1);
      float* dst = frame_ptr(res.video, k);
      for (int64_t p = 0; p < fsz; ++p)
        dst[p] = (1.0f - beta) * f0.data()[p] + beta * fdst.data()[p];
    }
  } else if (id == "bounce_h" || id == "bounce_v") {
    const int amp = static_cast<int>(spec.params.at("amplitude"));
    const int period = static_cast<int>(spec.params.at("period"));
    for (int k = 0; k < n_frames; ++k) {
      // Square-ish oscillation 0, +A, 0, -A over one period.
      const int phase = k % period;
      int off = 0;
      if (phase == 1) off = amp;
      else if (phase == 3) off = -amp;
      int r = subject.row, c = subject.col;
      if (id == "bounce_h") c += off;
      else r += off;
      // Clamp-at-boundary rather than rejection; flagged in metadata.
      int rc = std::clamp(r, 0, frame_h - subject.size);
      int cc = std::clamp(c, 0, frame_w - subject.size);
      if (rc != r || cc != c) res.clamped = true;
      Tensor<float> frame({frame_h, frame_w, 3});
      for (int64_t p = 0; p < fsz; ++p) frame.data()[p] = kBackground;
      draw_sprite(frame, subject.shape, subject.color, subject.size,
                  rc + subject.size / 2.0, cc + subject.size / 2.0);
      std::copy(frame.data(), frame.data() + fsz, frame_ptr(res.video, k));
    }
  } else if (id == "grow" || id == "shrink") {
    const double rate = spec.params.at("rate");
    const double cr = subject.row + subject.size / 2.0;
    const double cc = subject.col + subject.size / 2.0;
    for (int k = 0; k < n_frames; ++k) {
      double sz = id == "grow" ? subject.size + rate * k
                               : std::max(subject.size - rate * k, 1.0);
      Tensor<float> frame({frame_h, frame_w, 3});
      for (int64_t p = 0; p < fsz; ++p) frame.data()[p] = kBackground;
      draw_sprite(frame, subject.shape, subject.color, sz, cr, cc);
      std::copy(frame.data(), frame.data() + fsz, frame_ptr(res.video, k));
    }
  } else if (id == "base_bright_up" || id == "base_bright_down") {
    const float rate = static_cast<float>(spec.params.at("rate"));
    const float sgn = id == "base_bright_up" ? 1.0f : -1.0f;
    for (int k = 0; k < n_frames; ++k) {
      float* dst = frame_ptr(res.video, k);
      for (int64_t p = 0; p < fsz; ++p)
        dst[p] = std::clamp(f0.data()[p] + sgn * rate * static_cast<float>(k),
                            0.0f, 1.0f);
    }
  } else {
    throw DataError("apply_semantic: unknown semantic id " + id);
  }
  return res;
}

}  // namespace icvid
