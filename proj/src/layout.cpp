#include "bachkit/layout.hpp"

#include <algorithm>
#include <deque>
#include <fstream>
#include <set>
#include <sstream>

#include "bachkit/json_io.hpp"

namespace bachkit {

Taxonomy::Taxonomy(std::string name, std::vector<Category> foreground,
                   std::vector<Category> background)
    : name_(std::move(name)),
      foreground_(std::move(foreground)),
      background_(std::move(background)) {
  slots_.fill(kAbsent);
  std::set<std::string> names;
  auto claim = [&](const Category& c, int slot) {
    if (c.id < 0 || c.id > 255) {
      fail(ErrorKind::Taxonomy, "category id " + std::to_string(c.id) + " outside [0, 255]");
    }
    if (slots_[static_cast<std::size_t>(c.id)] != kAbsent) {
      fail(ErrorKind::Taxonomy, "duplicate category id " + std::to_string(c.id));
    }
    if (!names.insert(c.name).second) {
      fail(ErrorKind::Taxonomy, "duplicate category name '" + c.name + "'");
    }
    slots_[static_cast<std::size_t>(c.id)] = slot;
  };
  for (std::size_t i = 0; i < foreground_.size(); ++i) claim(foreground_[i], static_cast<int>(i));
  for (std::size_t i = 0; i < background_.size(); ++i) claim(background_[i], -static_cast<int>(i) - 1);
}

Taxonomy Taxonomy::cityscapes() {
  // Cityscapes label ids; the ten instance classes form the foreground.
  std::vector<Category> bg = {
      {1, "ego vehicle"}, {2, "rectification border"}, {3, "out of roi"}, {4, "static"},
      {5, "dynamic"},     {6, "ground"},               {7, "road"},       {8, "sidewalk"},
      {9, "parking"},     {10, "rail track"},          {11, "building"},  {12, "wall"},
      {13, "fence"},      {14, "guard rail"},          {15, "bridge"},    {16, "tunnel"},
      {17, "pole"},       {18, "polegroup"},           {19, "traffic light"},
      {20, "traffic sign"}, {21, "vegetation"},        {22, "terrain"},   {23, "sky"}};
  std::vector<Category> fg = {{24, "person"},  {25, "rider"},   {26, "car"},
                              {27, "truck"},   {28, "bus"},     {29, "caravan"},
                              {30, "trailer"}, {31, "train"},   {32, "motorcycle"},
                              {33, "bicycle"}};
  return Taxonomy("cityscapes", std::move(fg), std::move(bg));
}

Taxonomy Taxonomy::ade20k() {
  // 150 evaluated classes: ids 1..35 are treated as stuff, 36..150 as objects.
  std::vector<Category> bg, fg;
  for (int id = 1; id <= 35; ++id) bg.push_back({id, "stuff_" + std::to_string(id)});
  for (int id = 36; id <= 150; ++id) fg.push_back({id, "object_" + std::to_string(id)});
  return Taxonomy("ade20k", std::move(fg), std::move(bg));
}

Taxonomy Taxonomy::load(const std::filesystem::path& path) {
  const std::string s = path.string();
  if (s == "preset:cityscapes") return cityscapes();
  if (s == "preset:ade20k") return ade20k();
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "cannot read taxonomy " + s);
  std::stringstream buf;
  buf << in.rdbuf();
  return from_json_text(buf.str());
}

Taxonomy Taxonomy::from_json_text(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Taxonomy, std::string("malformed taxonomy: ") + e.what());
  }
  return taxonomy_from_json(j);
}

std::string Taxonomy::to_json_text() const { return taxonomy_to_json(*this).dump(2); }

std::optional<std::size_t> Taxonomy::foreground_channel(int id) const noexcept {
  const int v = lookup(id);
  if (v == kAbsent || v < 0) return std::nullopt;
  return static_cast<std::size_t>(v);
}

std::optional<std::size_t> Taxonomy::background_channel(int id) const noexcept {
  const int v = lookup(id);
  if (v == kAbsent || v >= 0) return std::nullopt;
  return static_cast<std::size_t>(-v - 1);
}

std::optional<int> Taxonomy::id_for_name(std::string_view name) const {
  for (const auto* list : {&foreground_, &background_}) {
    for (const Category& c : *list) {
      if (c.name == name) return c.id;
    }
  }
  return std::nullopt;
}

std::string Taxonomy::name_for_id(int id) const {
  if (auto c = foreground_channel(id)) return foreground_[*c].name;
  if (auto c = background_channel(id)) return background_[*c].name;
  fail(ErrorKind::Taxonomy, "unknown category id " + std::to_string(id));
}

std::optional<BoundingBox> clip_to_canvas(const BoundingBox& box, Canvas canvas) {
  if (box.h < 1 || box.w < 1) return std::nullopt;
  const long x0 = std::max<long>(box.x, 0);
  const long y0 = std::max<long>(box.y, 0);
  const long x1 = std::min<long>(static_cast<long>(box.x) + box.w, canvas.width);
  const long y1 = std::min<long>(static_cast<long>(box.y) + box.h, canvas.height);
  if (x0 >= x1 || y0 >= y1) return std::nullopt;
  return BoundingBox{static_cast<int>(x0), static_cast<int>(y0), static_cast<int>(y1 - y0),
                     static_cast<int>(x1 - x0), box.category};
}

unsigned LabelMap::pixel_sum(std::size_t y, std::size_t x) const {
  unsigned s = 0;
  for (std::size_t c = 0; c < channels_; ++c) s += at(y, x, c);
  return s;
}

CategoryBitmap CategoryBitmap::from_mask(int category, std::size_t height, std::size_t width,
                                         std::span<const std::uint8_t> mask) {
  if (mask.size() != height * width) {
    fail(ErrorKind::Shape, "bitmap mask length does not match extents");
  }
  CategoryBitmap b(category, height, width);
  std::size_t i = 0;
  const std::size_t n = mask.size();
  while (i < n) {
    if (!mask[i]) {
      ++i;
      continue;
    }
    const std::size_t start = i;
    while (i < n && mask[i]) ++i;
    b.runs_.push_back({static_cast<std::uint32_t>(start), static_cast<std::uint32_t>(i - start)});
    b.cardinality_ += i - start;
  }
  return b;
}

CategoryBitmap CategoryBitmap::from_runs(int category, std::size_t height, std::size_t width,
                                         std::vector<Run> runs) {
  CategoryBitmap b(category, height, width);
  std::erase_if(runs, [](const Run& r) { return r.length == 0; });
  std::sort(runs.begin(), runs.end(),
            [](const Run& a, const Run& c) { return a.start < c.start; });
  for (const Run& r : runs) {
    if (std::uint64_t{r.start} + r.length > height * width) {
      fail(ErrorKind::Shape, "bitmap run exceeds grid");
    }
    if (!b.runs_.empty()) {
      Run& last = b.runs_.back();
      const std::uint64_t end = std::uint64_t{last.start} + last.length;
      if (r.start <= end) {
        const std::uint64_t new_end = std::max<std::uint64_t>(end, std::uint64_t{r.start} + r.length);
        last.length = static_cast<std::uint32_t>(new_end - last.start);
        continue;
      }
    }
    b.runs_.push_back(r);
  }
  for (const Run& r : b.runs_) b.cardinality_ += r.length;
  return b;
}

std::vector<std::uint8_t> CategoryBitmap::decode() const {
  std::vector<std::uint8_t> mask(height_ * width_, 0);
  for (const Run& r : runs_) {
    std::fill_n(mask.begin() + r.start, r.length, std::uint8_t{1});
  }
  return mask;
}

std::uint64_t intersection_count(const CategoryBitmap& a, const CategoryBitmap& b) {
  auto ra = a.runs();
  auto rb = b.runs();
  std::size_t i = 0, j = 0;
  std::uint64_t total = 0;
  while (i < ra.size() && j < rb.size()) {
    const std::uint64_t a0 = ra[i].start, a1 = a0 + ra[i].length;
    const std::uint64_t b0 = rb[j].start, b1 = b0 + rb[j].length;
    const std::uint64_t lo = std::max(a0, b0), hi = std::min(a1, b1);
    if (lo < hi) total += hi - lo;
    if (a1 < b1) {
      ++i;
    } else {
      ++j;
    }
  }
  return total;
}

const char* to_string(Violation::Kind kind) {
  switch (kind) {
    case Violation::Kind::EmptyLayout: return "empty layout";
    case Violation::Kind::NonPositiveExtent: return "non-positive extent";
    case Violation::Kind::OutOfCanvas: return "out of canvas";
    case Violation::Kind::UnknownCategory: return "unknown category";
    case Violation::Kind::BadCanvas: return "bad canvas";
  }
  return "violation";
}

std::vector<Violation> validate_layout(const SalientLayout& layout, const Taxonomy& taxonomy) {
  std::vector<Violation> out;
  if (layout.canvas.height < 1 || layout.canvas.width < 1) {
    out.push_back({Violation::Kind::BadCanvas, std::nullopt,
                   "canvas extents must be positive"});
  }
  if (layout.boxes.empty()) {
    out.push_back({Violation::Kind::EmptyLayout, std::nullopt, "layout has no boxes"});
  }
  for (std::size_t i = 0; i < layout.boxes.size(); ++i) {
    const BoundingBox& b = layout.boxes[i];
    const std::string where = "box " + std::to_string(i);
    if (!taxonomy.is_foreground(b.category)) {
      out.push_back({Violation::Kind::UnknownCategory, i,
                     where + ": category " + std::to_string(b.category) +
                         " is not a foreground category"});
    }
    if (b.h < 1 || b.w < 1) {
      out.push_back({Violation::Kind::NonPositiveExtent, i, where + ": non-positive extent"});
    } else if (!clip_to_canvas(b, layout.canvas)) {
      out.push_back({Violation::Kind::OutOfCanvas, i, where + ": out of canvas"});
    }
  }
  return out;
}

void require_valid_layout(const SalientLayout& layout, const Taxonomy& taxonomy) {
  const auto violations = validate_layout(layout, taxonomy);
  if (violations.empty()) return;
  std::string msg = "invalid layout:";
  bool taxonomy_issue = false;
  for (const Violation& v : violations) {
    msg += " [" + v.message + "]";
    taxonomy_issue = taxonomy_issue || v.kind == Violation::Kind::UnknownCategory;
  }
  fail(taxonomy_issue ? ErrorKind::Taxonomy : ErrorKind::Validation, msg);
}

LabelMap rasterize_layout(const SalientLayout& layout, const Taxonomy& taxonomy) {
  require_valid_layout(layout, taxonomy);
  const auto H = static_cast<std::size_t>(layout.canvas.height);
  const auto W = static_cast<std::size_t>(layout.canvas.width);
  LabelMap map(H, W, taxonomy.foreground_count());
  for (const BoundingBox& raw : layout.boxes) {
    const BoundingBox b = *clip_to_canvas(raw, layout.canvas);
    const std::size_t c = *taxonomy.foreground_channel(b.category);
    for (int y = b.y; y < b.y + b.h; ++y) {
      for (int x = b.x; x < b.x + b.w; ++x) {
        ++map.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x), c);
      }
    }
  }
  return map;
}

BoundingBox extract_bbox(const CategoryBitmap& instance) {
  if (instance.empty()) fail(ErrorKind::EmptyInstance, "extract_bbox: empty pixel set");
  const std::size_t W = instance.width();
  std::size_t min_row = SIZE_MAX, max_row = 0, min_col = SIZE_MAX, max_col = 0;
  for (const auto& r : instance.runs()) {
    const std::size_t first = r.start, last = r.start + r.length - 1;
    const std::size_t r0 = first / W, r1 = last / W;
    min_row = std::min(min_row, r0);
    max_row = std::max(max_row, r1);
    if (r0 == r1) {
      min_col = std::min(min_col, first % W);
      max_col = std::max(max_col, last % W);
    } else {
      // A run wrapping a row boundary touches both the last and first column.
      min_col = 0;
      max_col = W - 1;
    }
  }
  return BoundingBox{static_cast<int>(min_col), static_cast<int>(min_row),
                     static_cast<int>(max_row - min_row + 1),
                     static_cast<int>(max_col - min_col + 1), instance.category()};
}

SalientLayout boxes_from_segmap(const ClassMap& segmap, const Taxonomy& taxonomy,
                                std::size_t min_area) {
  const std::size_t H = segmap.height, W = segmap.width;
  SalientLayout layout;
  layout.canvas = Canvas{static_cast<int>(H), static_cast<int>(W)};
  std::vector<std::vector<BoundingBox>> per_channel(taxonomy.foreground_count());
  std::vector<std::uint8_t> seen(H * W, 0);
  std::vector<std::size_t> stack;
  std::vector<CategoryBitmap::Run> pixels;
  for (std::size_t start = 0; start < H * W; ++start) {
    if (seen[start]) continue;
    const int id = segmap.ids[start];
    const auto channel = taxonomy.foreground_channel(id);
    if (!channel) continue;
    pixels.clear();
    stack.assign(1, start);
    seen[start] = 1;
    while (!stack.empty()) {
      const std::size_t p = stack.back();
      stack.pop_back();
      pixels.push_back({static_cast<std::uint32_t>(p), 1});
      const std::size_t y = p / W, x = p % W;
      auto visit = [&](std::size_t q) {
        if (!seen[q] && segmap.ids[q] == id) {
          seen[q] = 1;
          stack.push_back(q);
        }
      };
      if (y > 0) visit(p - W);
      if (y + 1 < H) visit(p + W);
      if (x > 0) visit(p - 1);
      if (x + 1 < W) visit(p + 1);
    }
    if (pixels.size() < min_area) continue;
    per_channel[*channel].push_back(
        extract_bbox(CategoryBitmap::from_runs(id, H, W, std::move(pixels))));
    pixels = {};
  }
  for (auto& boxes : per_channel) {
    layout.boxes.insert(layout.boxes.end(), boxes.begin(), boxes.end());
  }
  return layout;
}

ClassMap to_class_map(const LabelMap& one_hot, const Taxonomy& taxonomy) {
  if (one_hot.channels() != taxonomy.total_count()) {
    fail(ErrorKind::Shape, "to_class_map: label map has " + std::to_string(one_hot.channels()) +
                               " channels, taxonomy has " +
                               std::to_string(taxonomy.total_count()));
  }
  ClassMap out{one_hot.height(), one_hot.width(),
               std::vector<std::uint8_t>(one_hot.height() * one_hot.width())};
  const std::size_t C = one_hot.channels();
  const std::size_t Co = taxonomy.foreground_count();
  for (std::size_t p = 0; p < out.ids.size(); ++p) {
    int hot = -1;
    unsigned total = 0;
    for (std::size_t c = 0; c < C; ++c) {
      const auto v = one_hot.counts()[p * C + c];
      total += v;
      if (v == 1) hot = static_cast<int>(c);
    }
    if (total != 1 || hot < 0) {
      fail(ErrorKind::Validation, "to_class_map: pixel " + std::to_string(p) + " is not one-hot");
    }
    const auto c = static_cast<std::size_t>(hot);
    out.ids[p] = static_cast<std::uint8_t>(c < Co ? taxonomy.foreground()[c].id
                                                  : taxonomy.background()[c - Co].id);
  }
  return out;
}

LabelMap to_label_map(const ClassMap& segmap, const Taxonomy& taxonomy) {
  LabelMap out(segmap.height, segmap.width, taxonomy.total_count());
  const std::size_t C = taxonomy.total_count();
  const std::size_t Co = taxonomy.foreground_count();
  for (std::size_t p = 0; p < segmap.ids.size(); ++p) {
    const int id = segmap.ids[p];
    std::size_t c;
    if (auto f = taxonomy.foreground_channel(id)) {
      c = *f;
    } else if (auto b = taxonomy.background_channel(id)) {
      c = Co + *b;
    } else {
      fail(ErrorKind::Taxonomy, "to_label_map: unknown category id " + std::to_string(id));
    }
    out.counts()[p * C + c] = 1;
  }
  return out;
}

SalientLayout boxes_from_segmap(const LabelMap& one_hot, const Taxonomy& taxonomy,
                                std::size_t min_area) {
  return boxes_from_segmap(to_class_map(one_hot, taxonomy), taxonomy, min_area);
}

CategoryBitmap category_union(const SalientLayout& layout, const Taxonomy& taxonomy,
                              int category) {
  if (!taxonomy.contains(category)) {
    fail(ErrorKind::Taxonomy, "category_union: unknown category " + std::to_string(category));
  }
  const auto H = static_cast<std::size_t>(layout.canvas.height);
  const auto W = static_cast<std::size_t>(layout.canvas.width);
  std::vector<CategoryBitmap::Run> runs;
  for (const BoundingBox& raw : layout.boxes) {
    if (raw.category != category) continue;
    auto b = clip_to_canvas(raw, layout.canvas);
    if (!b) continue;
    for (int y = b->y; y < b->y + b->h; ++y) {
      runs.push_back({static_cast<std::uint32_t>(static_cast<std::size_t>(y) * W + b->x),
                      static_cast<std::uint32_t>(b->w)});
    }
  }
  return CategoryBitmap::from_runs(category, H, W, std::move(runs));
}

CategoryBitmap category_union(const ClassMap& segmap, const Taxonomy& taxonomy, int category) {
  if (!taxonomy.contains(category)) {
    fail(ErrorKind::Taxonomy, "category_union: unknown category " + std::to_string(category));
  }
  std::vector<std::uint8_t> mask(segmap.ids.size());
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = segmap.ids[i] == category;
  return CategoryBitmap::from_mask(category, segmap.height, segmap.width, mask);
}

CategoryBitmap category_union(const LabelMap& foreground_map, const Taxonomy& taxonomy,
                              int category) {
  const auto channel = taxonomy.foreground_channel(category);
  if (!channel) {
    fail(ErrorKind::Taxonomy, "category_union: " + std::to_string(category) +
                                  " is not a foreground category");
  }
  if (foreground_map.channels() != taxonomy.foreground_count()) {
    fail(ErrorKind::Shape, "category_union: expected a foreground label map");
  }
  const std::size_t C = foreground_map.channels();
  std::vector<std::uint8_t> mask(foreground_map.height() * foreground_map.width());
  for (std::size_t p = 0; p < mask.size(); ++p) {
    mask[p] = foreground_map.counts()[p * C + *channel] >= 1;
  }
  return CategoryBitmap::from_mask(category, foreground_map.height(), foreground_map.width(),
                                   mask);
}

// JSON ------------------------------------------------------------------------

namespace {

int require_int(const nlohmann::json& j, const char* field) {
  if (!j.contains(field) || !j.at(field).is_number_integer()) {
    fail(ErrorKind::Validation, std::string("layout: field '") + field + "' must be an integer");
  }
  return j.at(field).get<int>();
}

}  // namespace

nlohmann::json layout_to_json(const SalientLayout& layout, const Taxonomy& taxonomy) {
  nlohmann::json boxes = nlohmann::json::array();
  for (const BoundingBox& b : layout.boxes) {
    nlohmann::json cat;
    if (taxonomy.contains(b.category)) {
      cat = taxonomy.name_for_id(b.category);
    } else {
      cat = b.category;
    }
    boxes.push_back({{"category", cat}, {"x", b.x}, {"y", b.y}, {"h", b.h}, {"w", b.w}});
  }
  return {{"taxonomy", taxonomy.name()},
          {"canvas", {layout.canvas.height, layout.canvas.width}},
          {"boxes", boxes}};
}

SalientLayout layout_from_json(const nlohmann::json& j, const Taxonomy& taxonomy) {
  if (!j.is_object()) fail(ErrorKind::Validation, "layout: payload must be an object");
  if (j.contains("taxonomy") && j.at("taxonomy").is_string() &&
      j.at("taxonomy").get<std::string>() != taxonomy.name()) {
    fail(ErrorKind::Taxonomy, "layout: taxonomy '" + j.at("taxonomy").get<std::string>() +
                                  "' does not match '" + taxonomy.name() + "'");
  }
  SalientLayout layout;
  if (!j.contains("canvas") || !j.at("canvas").is_array() || j.at("canvas").size() != 2 ||
      !j.at("canvas")[0].is_number_integer() || !j.at("canvas")[1].is_number_integer()) {
    fail(ErrorKind::Validation, "layout: 'canvas' must be [H, W]");
  }
  layout.canvas = Canvas{j.at("canvas")[0].get<int>(), j.at("canvas")[1].get<int>()};
  if (!j.contains("boxes") || !j.at("boxes").is_array()) {
    fail(ErrorKind::Validation, "layout: 'boxes' must be an array");
  }
  for (const auto& jb : j.at("boxes")) {
    if (!jb.is_object()) fail(ErrorKind::Validation, "layout: box must be an object");
    BoundingBox b;
    const auto& cat = jb.contains("category") ? jb.at("category") : nlohmann::json();
    if (cat.is_string()) {
      auto id = taxonomy.id_for_name(cat.get<std::string>());
      if (!id) fail(ErrorKind::Taxonomy, "layout: unknown category '" + cat.get<std::string>() + "'");
      b.category = *id;
    } else if (cat.is_number_integer()) {
      b.category = cat.get<int>();
    } else {
      fail(ErrorKind::Validation, "layout: box needs a 'category' name or id");
    }
    b.x = require_int(jb, "x");
    b.y = require_int(jb, "y");
    b.h = require_int(jb, "h");
    b.w = require_int(jb, "w");
    layout.boxes.push_back(b);
  }
  return layout;
}

nlohmann::json taxonomy_to_json(const Taxonomy& taxonomy) {
  auto list = [](std::span<const Category> cs) {
    nlohmann::json a = nlohmann::json::array();
    for (const Category& c : cs) a.push_back({{"id", c.id}, {"name", c.name}});
    return a;
  };
  return {{"name", taxonomy.name()},
          {"foreground", list(taxonomy.foreground())},
          {"background", list(taxonomy.background())}};
}

Taxonomy taxonomy_from_json(const nlohmann::json& j) {
  auto list = [&](const char* field) {
    std::vector<Category> out;
    if (!j.contains(field) || !j.at(field).is_array()) {
      fail(ErrorKind::Taxonomy, std::string("taxonomy: '") + field + "' must be an array");
    }
    for (const auto& c : j.at(field)) {
      if (!c.contains("id") || !c.at("id").is_number_integer() || !c.contains("name") ||
          !c.at("name").is_string()) {
        fail(ErrorKind::Taxonomy, "taxonomy: entries need integer 'id' and string 'name'");
      }
      out.push_back({c.at("id").get<int>(), c.at("name").get<std::string>()});
    }
    return out;
  };
  const std::string name = j.value("name", std::string("custom"));
  return Taxonomy(name, list("foreground"), list("background"));
}

nlohmann::json violations_to_json(const std::vector<Violation>& violations) {
  nlohmann::json a = nlohmann::json::array();
  for (const Violation& v : violations) {
    nlohmann::json o = {{"kind", to_string(v.kind)}, {"message", v.message}};
    o["box"] = v.box_index ? nlohmann::json(*v.box_index) : nlohmann::json(nullptr);
    a.push_back(o);
  }
  return a;
}

SalientLayout layout_from_json_text(std::string_view text, const Taxonomy& taxonomy) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Validation, std::string("malformed layout: ") + e.what());
  }
  return layout_from_json(j, taxonomy);
}

std::string layout_to_json_text(const SalientLayout& layout, const Taxonomy& taxonomy) {
  return layout_to_json(layout, taxonomy).dump(2);
}

SalientLayout load_layout(const std::filesystem::path& path, const Taxonomy& taxonomy) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "cannot read layout " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return layout_from_json_text(buf.str(), taxonomy);
}

}  // namespace bachkit
