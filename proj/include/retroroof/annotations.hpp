// Copyright (c) 2026 The retroroof Authors. All rights reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


/**
 * @file annotations.hpp
 * @brief Footprint polygons to rooftop boxes, COCO datasets and the
 *        refinement edit log.
 */

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "retroroof/error.hpp"
#include "retroroof/imagery.hpp"

namespace retroroof::annotations {

// ---------------------------------------------------------------------------
// Footprints and boxes
// ---------------------------------------------------------------------------

struct FootprintPolygon {
  std::int64_t id = 0;
  std::vector<WorldCoord> ring;  // closing vertex optional
};

/// Axis-aligned world-space rectangle.
struct WorldBox {
  double min_x = 0.0;
  double min_y = 0.0;
  double max_x = 0.0;
  double max_y = 0.0;
};

enum class BoxSource { Auto, Refined };

inline const char* to_string(BoxSource s) noexcept { return s == BoxSource::Auto ? "auto" : "refined"; }

inline BoxSource parse_box_source(const std::string& s) {
  if (s == "auto") return BoxSource::Auto;
  if (s == "refined") return BoxSource::Refined;
  throw ValidationError("unknown box source '" + s + "'");
}

/// Pixel-space box, top-left corner plus size.
struct GroundTruthBox {
  double x = 0.0;
  double y = 0.0;
  double w = 0.0;
  double h = 0.0;
  int category_id = 1;
  BoxSource source = BoxSource::Auto;

  bool operator==(const GroundTruthBox&) const = default;
};

/// Vertex extrema of the ring.
inline WorldBox polygon_to_mbr(const FootprintPolygon& p) {
  std::size_t n = p.ring.size();
  if (n >= 2 && p.ring.front().x == p.ring.back().x && p.ring.front().y == p.ring.back().y) --n;
  if (n < 3) {
    throw InvalidArgument("footprint " + std::to_string(p.id) + ": polygon needs at least 3 vertices");
  }
  WorldBox b{p.ring[0].x, p.ring[0].y, p.ring[0].x, p.ring[0].y};
  for (std::size_t i = 1; i < n; ++i) {
    b.min_x = std::min(b.min_x, p.ring[i].x);
    b.min_y = std::min(b.min_y, p.ring[i].y);
    b.max_x = std::max(b.max_x, p.ring[i].x);
    b.max_y = std::max(b.max_y, p.ring[i].y);
  }
  return b;
}

inline constexpr double kMinRetainedFraction = 0.25;

/// Maps a world box into the pixel frame of one tile, clipped to the tile.
/// Returns nothing when less than `min_retained` of the box's pixel area
/// survives the clip.
inline std::optional<GroundTruthBox> box_to_tile_space(const WorldBox& b, const GeoTransform& g,
                                                       TileOffset offset, int tile_size,
                                                       double min_retained = kMinRetainedFraction) {
  const PixelCoord p0 = g.world_to_pixel(b.min_x, b.min_y);
  const PixelCoord p1 = g.world_to_pixel(b.max_x, b.max_y);
  const double x0 = std::min(p0.col, p1.col) - offset.x, x1 = std::max(p0.col, p1.col) - offset.x;
  const double y0 = std::min(p0.row, p1.row) - offset.y, y1 = std::max(p0.row, p1.row) - offset.y;
  const double area = (x1 - x0) * (y1 - y0);
  if (!(area > 0.0)) return std::nullopt;
  const double cx0 = std::max(x0, 0.0), cy0 = std::max(y0, 0.0);
  const double cx1 = std::min(x1, static_cast<double>(tile_size));
  const double cy1 = std::min(y1, static_cast<double>(tile_size));
  if (cx1 <= cx0 || cy1 <= cy0) return std::nullopt;
  const double kept = (cx1 - cx0) * (cy1 - cy0);
  if (kept / area < min_retained) return std::nullopt;
  return GroundTruthBox{cx0, cy0, cx1 - cx0, cy1 - cy0, 1, BoxSource::Auto};
}

// ---------------------------------------------------------------------------
// COCO
// ---------------------------------------------------------------------------

struct CocoImage {
  std::int64_t id = 0;
  int width = 0;
  int height = 0;
  std::string file_name;

  bool operator==(const CocoImage&) const = default;
};

struct CocoAnnotation {
  std::int64_t id = 0;
  std::int64_t image_id = 0;
  int category_id = 1;
  std::array<double, 4> bbox{};  // x, y, w, h
  double area = 0.0;
  int iscrowd = 0;
  BoxSource source = BoxSource::Auto;

  bool operator==(const CocoAnnotation&) const = default;
};

struct CocoCategory {
  int id = 1;
  std::string name = "rooftop";

  bool operator==(const CocoCategory&) const = default;
};

struct CocoDataset {
  std::vector<CocoImage> images;
  std::vector<CocoAnnotation> annotations;
  std::vector<CocoCategory> categories;

  bool operator==(const CocoDataset&) const = default;

  const CocoImage* find_image(std::int64_t id) const {
    for (const auto& im : images)
      if (im.id == id) return &im;
    return nullptr;
  }

  std::vector<const CocoAnnotation*> annotations_for(std::int64_t image_id) const {
    std::vector<const CocoAnnotation*> out;
    for (const auto& a : annotations)
      if (a.image_id == image_id) out.push_back(&a);
    return out;
  }
};

inline CocoDataset empty_rooftop_dataset() { return {{}, {}, {CocoCategory{1, "rooftop"}}}; }

inline GroundTruthBox to_box(const CocoAnnotation& a) {
  return {a.bbox[0], a.bbox[1], a.bbox[2], a.bbox[3], a.category_id, a.source};
}

inline void to_json(nlohmann::json& j, const CocoImage& im) {
  j = {{"id", im.id}, {"width", im.width}, {"height", im.height}, {"file_name", im.file_name}};
}

inline void to_json(nlohmann::json& j, const CocoAnnotation& a) {
  j = {{"id", a.id},     {"image_id", a.image_id}, {"category_id", a.category_id}, {"bbox", a.bbox},
       {"area", a.area}, {"iscrowd", a.iscrowd},   {"source", to_string(a.source)}};
}

inline void to_json(nlohmann::json& j, const CocoCategory& c) { j = {{"id", c.id}, {"name", c.name}}; }

inline void to_json(nlohmann::json& j, const CocoDataset& d) {
  j = {{"images", d.images}, {"annotations", d.annotations}, {"categories", d.categories}};
}

/// Checks ids, references, areas and bounds. The message names the first
/// offending record.
inline void validate(const CocoDataset& d) {
  std::set<std::int64_t> image_ids, ann_ids;
  std::set<int> cat_ids;
  for (const auto& im : d.images) {
    if (!image_ids.insert(im.id).second) throw ValidationError("image " + std::to_string(im.id) + ": duplicate id");
    if (im.width < 1 || im.height < 1) {
      throw ValidationError("image " + std::to_string(im.id) + ": non-positive dimensions");
    }
  }
  for (const auto& c : d.categories) {
    if (!cat_ids.insert(c.id).second) throw ValidationError("category " + std::to_string(c.id) + ": duplicate id");
  }
  for (const auto& a : d.annotations) {
    const std::string who = "annotation " + std::to_string(a.id);
    if (!ann_ids.insert(a.id).second) throw ValidationError(who + ": duplicate id");
    const CocoImage* im = d.find_image(a.image_id);
    if (!im) throw ValidationError(who + ": image_id " + std::to_string(a.image_id) + " does not resolve");
    if (!cat_ids.count(a.category_id)) {
      throw ValidationError(who + ": category_id " + std::to_string(a.category_id) + " does not resolve");
    }
    const auto [x, y, w, h] = a.bbox;
    if (!(w > 0.0) || !(h > 0.0)) throw ValidationError(who + ": bbox must have positive size");
    constexpr double tol = 1e-9;
    if (x < -tol || y < -tol || x + w > im->width + tol || y + h > im->height + tol) {
      throw ValidationError(who + ": bbox lies outside image " + std::to_string(im->id));
    }
    if (std::abs(a.area - w * h) > tol * std::max(1.0, w * h)) {
      throw ValidationError(who + ": area does not equal w*h");
    }
    if (a.iscrowd != 0) throw ValidationError(who + ": iscrowd must be 0");
  }
}

inline CocoDataset coco_from_json(const nlohmann::json& j) {
  CocoDataset d;
  try {
    for (const auto& im : j.at("images"))
      d.images.push_back({im.at("id").get<std::int64_t>(), im.at("width").get<int>(), im.at("height").get<int>(),
                          im.at("file_name").get<std::string>()});
    for (const auto& a : j.at("annotations")) {
      CocoAnnotation ann;
      ann.id = a.at("id").get<std::int64_t>();
      ann.image_id = a.at("image_id").get<std::int64_t>();
      ann.category_id = a.at("category_id").get<int>();
      const auto bbox = a.at("bbox").get<std::vector<double>>();
      if (bbox.size() != 4) throw ValidationError("annotation " + std::to_string(ann.id) + ": bbox needs 4 numbers");
      std::copy(bbox.begin(), bbox.end(), ann.bbox.begin());
      ann.area = a.contains("area") ? a.at("area").get<double>() : bbox[2] * bbox[3];
      ann.iscrowd = a.value("iscrowd", 0);
      ann.source = parse_box_source(a.value("source", std::string("auto")));
      d.annotations.push_back(ann);
    }
    for (const auto& c : j.at("categories"))
      d.categories.push_back({c.at("id").get<int>(), c.at("name").get<std::string>()});
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed COCO document: ") + e.what());
  }
  validate(d);
  return d;
}

namespace detail {

inline void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot write " + tmp.string());
    out << text;
    if (!out) throw IoError("short write on " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace detail

inline void write_coco(const CocoDataset& d, const std::filesystem::path& path) {
  validate(d);
  detail::write_text_atomic(path, nlohmann::json(d).dump(2) + "\n");
}

inline CocoDataset read_coco(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(detail::read_text(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
  try {
    return coco_from_json(j);
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Refinements
// ---------------------------------------------------------------------------

enum class EditOp { Replace, Delete, Add };

struct RefinementEdit {
  EditOp op = EditOp::Replace;
  std::int64_t annotation_id = 0;
  std::int64_t image_id = 0;
  std::array<double, 4> bbox{};  // unused for Delete
  int category_id = 1;

  bool operator==(const RefinementEdit&) const = default;
};

/// Ordered edits, serialized one JSON object per line.
struct RefinementLog {
  std::vector<RefinementEdit> edits;
};

inline nlohmann::json edit_to_json(const RefinementEdit& e) {
  static const char* names[] = {"replace", "delete", "add"};
  nlohmann::json j{{"op", names[static_cast<int>(e.op)]}, {"id", e.annotation_id}, {"image_id", e.image_id}};
  if (e.op != EditOp::Delete) {
    j["bbox"] = e.bbox;
    j["category_id"] = e.category_id;
  }
  return j;
}

inline RefinementEdit edit_from_json(const nlohmann::json& j) {
  try {
    RefinementEdit e;
    const auto op = j.at("op").get<std::string>();
    if (op == "replace") e.op = EditOp::Replace;
    else if (op == "delete") e.op = EditOp::Delete;
    else if (op == "add") e.op = EditOp::Add;
    else throw ValidationError("unknown edit op '" + op + "'");
    e.annotation_id = j.at("id").get<std::int64_t>();
    e.image_id = j.at("image_id").get<std::int64_t>();
    if (e.op != EditOp::Delete) {
      const auto b = j.at("bbox").get<std::vector<double>>();
      if (b.size() != 4) throw ValidationError("edit bbox needs 4 numbers");
      std::copy(b.begin(), b.end(), e.bbox.begin());
      e.category_id = j.value("category_id", 1);
    }
    return e;
  } catch (const nlohmann::json::exception& ex) {
    throw ValidationError(std::string("malformed edit record: ") + ex.what());
  }
}

inline RefinementLog read_refinement_log(const std::filesystem::path& path) {
  RefinementLog log;
  if (!std::filesystem::exists(path)) return log;
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      log.edits.push_back(edit_from_json(nlohmann::json::parse(line)));
    } catch (const std::exception& e) {
      throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return log;
}

inline void write_refinement_log(const RefinementLog& log, const std::filesystem::path& path) {
  std::string text;
  for (const auto& e : log.edits) text += edit_to_json(e).dump() + "\n";
  detail::write_text_atomic(path, text);
}

/// Applies edits in order. Replaced and added boxes are marked refined;
/// everything untouched is carried over verbatim. Deleting an id that is no
/// longer present is a no-op, so replaying a log is idempotent.
inline CocoDataset merge_refinements(const CocoDataset& base, const RefinementLog& log) {
  CocoDataset out = base;
  auto find = [&](std::int64_t id) {
    return std::find_if(out.annotations.begin(), out.annotations.end(),
                        [id](const CocoAnnotation& a) { return a.id == id; });
  };
  for (const auto& e : log.edits) {
    const std::string who = "edit on annotation " + std::to_string(e.annotation_id);
    if (!out.find_image(e.image_id)) {
      throw ValidationError(who + ": image_id " + std::to_string(e.image_id) + " does not resolve");
    }
    auto it = find(e.annotation_id);
    switch (e.op) {
      case EditOp::Replace:
        if (it == out.annotations.end()) throw ValidationError(who + ": unknown annotation id");
        if (it->image_id != e.image_id) throw ValidationError(who + ": image_id does not match annotation");
        it->bbox = e.bbox;
        it->area = e.bbox[2] * e.bbox[3];
        it->category_id = e.category_id;
        it->source = BoxSource::Refined;
        break;
      case EditOp::Delete:
        if (it != out.annotations.end()) {
          if (it->image_id != e.image_id) throw ValidationError(who + ": image_id does not match annotation");
          out.annotations.erase(it);
        }
        break;
      case EditOp::Add:
        if (it != out.annotations.end()) throw ValidationError(who + ": id already in use");
        out.annotations.push_back({e.annotation_id, e.image_id, e.category_id, e.bbox,
                                   e.bbox[2] * e.bbox[3], 0, BoxSource::Refined});
        break;
    }
  }
  validate(out);
  return out;
}

// ---------------------------------------------------------------------------
// Footprint files
// ---------------------------------------------------------------------------

/// Reads Polygon and MultiPolygon features from a GeoJSON FeatureCollection.
/// Only exterior rings are used. Feature ids come from "id", then
/// properties.id, then the feature index.
inline std::vector<FootprintPolygon> read_footprints_geojson(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(detail::read_text(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
  std::vector<FootprintPolygon> out;
  try {
    const auto& features = j.at("features");
    for (std::size_t i = 0; i < features.size(); ++i) {
      const auto& f = features[i];
      std::int64_t id = static_cast<std::int64_t>(i);
      if (f.contains("id") && f["id"].is_number_integer()) id = f["id"].get<std::int64_t>();
      else if (f.contains("properties") && f["properties"].is_object() && f["properties"].contains("id") &&
               f["properties"]["id"].is_number_integer())
        id = f["properties"]["id"].get<std::int64_t>();
      const auto& geom = f.at("geometry");
      const auto type = geom.at("type").get<std::string>();
      auto ring_of = [&](const nlohmann::json& rings) {
        FootprintPolygon p{id, {}};
        for (const auto& v : rings.at(0)) p.ring.push_back({v.at(0).get<double>(), v.at(1).get<double>()});
        return p;
      };
      if (type == "Polygon") {
        out.push_back(ring_of(geom.at("coordinates")));
      } else if (type == "MultiPolygon") {
        for (const auto& poly : geom.at("coordinates")) out.push_back(ring_of(poly));
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path.string() + ": malformed GeoJSON: " + e.what());
  }
  return out;
}

}  // namespace retroroof::annotations
