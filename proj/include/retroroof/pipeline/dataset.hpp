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
 * @file dataset.hpp
 * @brief Tile datasets on disk: footprint-driven generation and the
 *        tiles + annotations.json layout every stage exchanges.
 */

#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "retroroof/annotations.hpp"
#include "retroroof/detect/train.hpp"
#include "retroroof/error.hpp"
#include "retroroof/imagery.hpp"
#include "retroroof/raster_io.hpp"

namespace retroroof::pipeline {

inline constexpr const char* kAnnotationsFile = "annotations.json";

/// Rounds to the nearest pixel edge. Tiles are integer grids, and integer
/// boxes survive the COCO text roundtrip exactly.
inline annotations::GroundTruthBox snap_to_pixels(const annotations::GroundTruthBox& b) {
  const double x0 = std::round(b.x), y0 = std::round(b.y);
  const double x1 = std::round(b.x + b.w), y1 = std::round(b.y + b.h);
  return {x0, y0, x1 - x0, y1 - y0, b.category_id, b.source};
}

struct MakeDatasetOptions {
  int tile = 512;
  int overlap = 0;
  double min_retained = annotations::kMinRetainedFraction;
};

/// Cuts a georeferenced image into tiles and projects every footprint's MBR
/// into each tile it meaningfully overlaps. Writes the tiles and
/// annotations.json under `out_dir` and returns the dataset.
inline annotations::CocoDataset make_dataset(const std::filesystem::path& image,
                                             const std::filesystem::path& world_file,
                                             const std::filesystem::path& footprints,
                                             const std::filesystem::path& out_dir,
                                             const MakeDatasetOptions& opt = {}) {
  const Raster src = read_raster(image);
  const GeoTransform geo = read_world_file(world_file);
  const auto polys = annotations::read_footprints_geojson(footprints);
  std::vector<annotations::WorldBox> mbrs;
  mbrs.reserve(polys.size());
  for (const auto& p : polys) mbrs.push_back(annotations::polygon_to_mbr(p));

  const TileGrid grid = make_tile_grid(src.width(), src.height(), opt.tile, opt.overlap);
  auto coco = annotations::empty_rooftop_dataset();
  std::int64_t next_ann = 1;
  for (std::size_t i = 0; i < grid.offsets.size(); ++i) {
    const TileOffset o = grid.offsets[i];
    char name[64];
    std::snprintf(name, sizeof name, "tile_x%05d_y%05d.png", o.x, o.y);
    const auto image_id = static_cast<std::int64_t>(i + 1);
    write_raster(out_dir / name, crop(src, o.x, o.y, opt.tile, opt.tile));
    coco.images.push_back({image_id, opt.tile, opt.tile, name});
    for (const auto& m : mbrs) {
      const auto b = annotations::box_to_tile_space(m, geo, o, opt.tile, opt.min_retained);
      if (!b) continue;
      const auto s = snap_to_pixels(*b);
      if (s.w <= 0 || s.h <= 0) continue;
      coco.annotations.push_back({next_ann++, image_id, 1, {s.x, s.y, s.w, s.h}, s.w * s.h, 0,
                                  annotations::BoxSource::Auto});
    }
  }
  annotations::write_coco(coco, out_dir / kAnnotationsFile);
  return coco;
}

/// Samples loaded from a dataset directory, in annotations.json image order.
struct LoadedDataset {
  annotations::CocoDataset coco;
  std::vector<detect::DetectionSample> samples;
  std::vector<std::int64_t> image_ids;  // parallel to `samples`
};

inline LoadedDataset load_dataset(const std::filesystem::path& dir) {
  LoadedDataset out;
  out.coco = annotations::read_coco(dir / kAnnotationsFile);
  for (const auto& im : out.coco.images) {
    detect::DetectionSample s{read_raster(dir / im.file_name), {}};
    if (s.image.width() != im.width || s.image.height() != im.height) {
      throw ValidationError(dir.string() + ": " + im.file_name + " is " + std::to_string(s.image.width()) + "x" +
                            std::to_string(s.image.height()) + ", annotations say " + std::to_string(im.width) +
                            "x" + std::to_string(im.height));
    }
    for (const auto* a : out.coco.annotations_for(im.id)) s.boxes.push_back(annotations::to_box(*a));
    out.samples.push_back(std::move(s));
    out.image_ids.push_back(im.id);
  }
  return out;
}

/// Writes samples as tile_NNNNN.png plus annotations.json. Image ids are
/// `first_id + index`, or `ids[index]` when given.
inline annotations::CocoDataset write_dataset(const std::filesystem::path& dir,
                                              std::span<const detect::DetectionSample> samples,
                                              std::span<const std::int64_t> ids = {}) {
  if (!ids.empty() && ids.size() != samples.size()) {
    throw DimensionMismatch("write_dataset: one image id per sample required");
  }
  auto coco = annotations::empty_rooftop_dataset();
  std::int64_t next_ann = 1;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    const std::int64_t id = ids.empty() ? static_cast<std::int64_t>(i + 1) : ids[i];
    char name[32];
    std::snprintf(name, sizeof name, "tile_%05zu.png", i);
    write_raster(dir / name, s.image);
    coco.images.push_back({id, s.image.width(), s.image.height(), name});
    for (const auto& b : s.boxes)
      coco.annotations.push_back({next_ann++, id, b.category_id, {b.x, b.y, b.w, b.h}, b.w * b.h, 0, b.source});
  }
  annotations::write_coco(coco, dir / kAnnotationsFile);
  return coco;
}

/// Predictions for a loaded dataset, keyed by its COCO image ids.
inline std::vector<evaluate::Detection> predict_dataset(const LoadedDataset& d, const detect::Detector& model,
                                                        double conf) {
  auto dets = detect::predict_samples(d.samples, model, conf);
  for (auto& x : dets) x.image_id = d.image_ids[static_cast<std::size_t>(x.image_id)];
  return dets;
}

}  // namespace retroroof::pipeline
