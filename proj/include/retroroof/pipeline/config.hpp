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
 * @file config.hpp
 * @brief Experiment configuration and its JSON form.
 */

#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "retroroof/annotations.hpp"
#include "retroroof/colorize.hpp"
#include "retroroof/detect.hpp"
#include "retroroof/error.hpp"
#include "retroroof/pipeline/synthetic.hpp"
#include "retroroof/superres.hpp"

namespace retroroof::pipeline {

/// Generated benchmark used in place of an imagery directory. Enhancers that
/// have no checkpoint are trained on `enhancer_tiles` extra scenes drawn from
/// a seed stream disjoint from the detector's.
struct SyntheticConfig {
  int train_tiles = 200;
  int test_tiles = 100;
  int enhancer_tiles = 64;
  SceneConfig scene;
};

inline void to_json(nlohmann::json& j, const SyntheticConfig& c) {
  j = {{"train_tiles", c.train_tiles},
       {"test_tiles", c.test_tiles},
       {"enhancer_tiles", c.enhancer_tiles},
       {"scene", c.scene}};
}
inline void from_json(const nlohmann::json& j, SyntheticConfig& c) {
  const SyntheticConfig d;
  c.train_tiles = j.value("train_tiles", d.train_tiles);
  c.test_tiles = j.value("test_tiles", d.test_tiles);
  c.enhancer_tiles = j.value("enhancer_tiles", d.enhancer_tiles);
  c.scene = j.value("scene", d.scene);
}

struct VariantFlags {
  bool colorize = false;
  bool upscale = false;
};

/// Optional pre-trained enhancers. Empty paths mean "train one" in synthetic
/// mode and are an error in imagery mode when the variant needs them.
struct CheckpointPaths {
  std::filesystem::path colorizer;
  std::filesystem::path superres_rgb;
  std::filesystem::path superres_gray;
};

struct ExperimentConfig {
  /// Directory holding annotations.json plus the tiles it references.
  std::filesystem::path input_dir;
  std::optional<SyntheticConfig> synthetic;

  VariantFlags variants;
  bool sweep = false;  // run all four flag combinations
  /// Explicit variant names; when non-empty, overrides `variants` and `sweep`.
  std::vector<std::string> variant_list;
  CheckpointPaths checkpoints;

  superres::DegradationConfig degradation = [] {
    superres::DegradationConfig d;
    d.scale = 2;
    return d;
  }();
  colorize::ColorizerConfig colorizer;
  colorize::ColorizerTrainConfig colorizer_train;
  superres::SRConfig superres;
  superres::SRTrainConfig sr_train;

  detect::DetectorConfig detector;
  detect::DetectorTrainConfig train;

  double test_fraction = 0.2;  // imagery mode only
  std::uint64_t seed = 0;
  std::filesystem::path output_dir = "run";
  std::string model_tag = "native";
};

inline std::string path_string(const std::filesystem::path& p) { return p.generic_string(); }

inline void to_json(nlohmann::json& j, const ExperimentConfig& c) {
  j = {{"input_dir", path_string(c.input_dir)},
       {"variants", {{"colorize", c.variants.colorize}, {"upscale", c.variants.upscale}}},
       {"sweep", c.sweep},
       {"variant_list", c.variant_list},
       {"checkpoints",
        {{"colorizer", path_string(c.checkpoints.colorizer)},
         {"superres_rgb", path_string(c.checkpoints.superres_rgb)},
         {"superres_gray", path_string(c.checkpoints.superres_gray)}}},
       {"degradation", c.degradation},
       {"colorizer", c.colorizer},
       {"colorizer_train", c.colorizer_train},
       {"superres", c.superres},
       {"sr_train", c.sr_train},
       {"detector", c.detector},
       {"train", c.train},
       {"test_fraction", c.test_fraction},
       {"seed", c.seed},
       {"output_dir", path_string(c.output_dir)},
       {"model_tag", c.model_tag}};
  j["synthetic"] = c.synthetic ? nlohmann::json(*c.synthetic) : nlohmann::json(nullptr);
}

inline void from_json(const nlohmann::json& j, ExperimentConfig& c) {
  c = ExperimentConfig{};
  c.input_dir = j.value("input_dir", std::string{});
  if (j.contains("synthetic") && !j.at("synthetic").is_null()) {
    c.synthetic = j.at("synthetic").get<SyntheticConfig>();
  }
  if (j.contains("variants")) {
    c.variants.colorize = j.at("variants").value("colorize", false);
    c.variants.upscale = j.at("variants").value("upscale", false);
  }
  c.sweep = j.value("sweep", false);
  c.variant_list = j.value("variant_list", std::vector<std::string>{});
  if (j.contains("checkpoints")) {
    const auto& k = j.at("checkpoints");
    c.checkpoints.colorizer = k.value("colorizer", std::string{});
    c.checkpoints.superres_rgb = k.value("superres_rgb", std::string{});
    c.checkpoints.superres_gray = k.value("superres_gray", std::string{});
  }
  if (j.contains("degradation")) c.degradation = j.at("degradation").get<superres::DegradationConfig>();
  if (j.contains("colorizer")) c.colorizer = j.at("colorizer").get<colorize::ColorizerConfig>();
  if (j.contains("colorizer_train")) {
    c.colorizer_train = j.at("colorizer_train").get<colorize::ColorizerTrainConfig>();
  }
  if (j.contains("superres")) c.superres = j.at("superres").get<superres::SRConfig>();
  if (j.contains("sr_train")) c.sr_train = j.at("sr_train").get<superres::SRTrainConfig>();
  if (j.contains("detector")) c.detector = j.at("detector").get<detect::DetectorConfig>();
  if (j.contains("train")) c.train = j.at("train").get<detect::DetectorTrainConfig>();
  c.test_fraction = j.value("test_fraction", c.test_fraction);
  c.seed = j.value("seed", c.seed);
  c.output_dir = j.value("output_dir", std::string{"run"});
  c.model_tag = j.value("model_tag", c.model_tag);
}

inline ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  try {
    return nlohmann::json::parse(annotations::detail::read_text(path)).get<ExperimentConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

/// The variant names a config expands to, colorize-free variants first.
inline std::vector<std::string> expand_variants(const ExperimentConfig& c) {
  const std::vector<std::string> all = {"bw", "color", "bw_upscaled", "color_upscaled"};
  if (!c.variant_list.empty()) {
    std::vector<std::string> out;
    for (const auto& v : all)
      if (std::find(c.variant_list.begin(), c.variant_list.end(), v) != c.variant_list.end()) out.push_back(v);
    return out;
  }
  if (c.sweep) return all;
  if (c.variants.colorize && c.variants.upscale) return {"color_upscaled"};
  if (c.variants.colorize) return {"color"};
  if (c.variants.upscale) return {"bw_upscaled"};
  return {"bw"};
}

inline bool variant_colorizes(const std::string& v) { return v.rfind("color", 0) == 0; }
inline bool variant_upscales(const std::string& v) { return v.ends_with("_upscaled"); }

/// Rejects configs that cannot run: missing input, missing checkpoints,
/// out-of-range numbers.
inline void validate(const ExperimentConfig& c) {
  namespace fs = std::filesystem;
  auto need_file = [](const fs::path& p, const std::string& what) {
    if (!fs::is_regular_file(p)) throw ValidationError(what + " not found: " + p.string());
  };
  if (c.synthetic) {
    const auto& s = *c.synthetic;
    if (s.train_tiles < 2 || s.test_tiles < 1 || s.enhancer_tiles < 2) {
      throw ValidationError("synthetic: need train_tiles >= 2, test_tiles >= 1, enhancer_tiles >= 2");
    }
  } else {
    if (c.input_dir.empty()) throw ValidationError("input_dir is required without a synthetic block");
    if (!fs::is_directory(c.input_dir)) {
      throw ValidationError("input_dir not found: " + c.input_dir.string());
    }
    need_file(c.input_dir / "annotations.json", "input annotations");
    if (!(c.test_fraction > 0.0 && c.test_fraction < 1.0)) {
      throw ValidationError("test_fraction must lie in (0,1)");
    }
  }
  std::vector<std::string> seen;
  for (const auto& v : c.variant_list) {
    if (v != "bw" && v != "color" && v != "bw_upscaled" && v != "color_upscaled") {
      throw ValidationError("variant_list: unknown variant '" + v + "'");
    }
    if (std::find(seen.begin(), seen.end(), v) != seen.end()) {
      throw ValidationError("variant_list: duplicate variant '" + v + "'");
    }
    seen.push_back(v);
  }
  bool any_color = false, any_up = false, any_gray_up = false;
  for (const auto& v : expand_variants(c)) {
    any_color |= variant_colorizes(v);
    any_up |= variant_upscales(v);
    any_gray_up |= v == "bw_upscaled";
  }
  auto check_ckpt = [&](const fs::path& p, bool used, const std::string& what) {
    if (!p.empty()) {
      need_file(p, what + " checkpoint");
    } else if (used && !c.synthetic) {
      throw ValidationError(what + " checkpoint is required for imagery input");
    }
  };
  check_ckpt(c.checkpoints.colorizer, any_color, "colorizer");
  check_ckpt(c.checkpoints.superres_rgb, any_color && any_up, "superres_rgb");
  check_ckpt(c.checkpoints.superres_gray, any_gray_up, "superres_gray");
  if (c.degradation.scale < 2) throw ValidationError("degradation.scale must be >= 2");
  if (c.output_dir.empty()) throw ValidationError("output_dir is required");
}

}  // namespace retroroof::pipeline
