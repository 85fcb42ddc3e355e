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
 * @file experiment.hpp
 * @brief End-to-end experiment driver: prepare -> enhance -> dataset ->
 *        train -> eval, with a manifest written after every stage.
 *
 * Output layout under `output_dir`:
 *   source/{train,test}/         grayscale archive tiles + annotations.json
 *   models/                      enhancer checkpoints trained by this run
 *   variants/<v>/{train,test}/   enhanced tiles + annotations.json
 *   variants/<v>/detector.ckpt, variants/<v>/predictions.txt
 *   report.csv, table.txt, manifest.json
 */

#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "retroroof/annotations.hpp"
#include "retroroof/colorize.hpp"
#include "retroroof/detect.hpp"
#include "retroroof/error.hpp"
#include "retroroof/evaluate.hpp"
#include "retroroof/imagery.hpp"
#include "retroroof/nn/tensor.hpp"
#include "retroroof/pipeline/config.hpp"
#include "retroroof/pipeline/dataset.hpp"
#include "retroroof/pipeline/synthetic.hpp"
#include "retroroof/superres.hpp"

namespace retroroof::pipeline {

struct StageRecord {
  std::string name;
  std::string started;   // UTC, ISO 8601
  std::string finished;  // empty while running or after a failure
  double seconds = 0.0;
};

struct RunManifest {
  nlohmann::json config;
  std::uint64_t seed = 0;
  std::string status = "running";  // running | complete | failed
  std::string failed_stage;
  std::string error;
  std::vector<StageRecord> stages;
  std::vector<std::string> artifacts;  // relative to the output dir
  nlohmann::json histories = nlohmann::json::object();
  evaluate::VariantReport report;
};

inline nlohmann::json metrics_to_json(const evaluate::VariantMetrics& m) {
  return {{"variant", m.variant},     {"model", m.model},   {"map50", m.map50},
          {"map50_95", m.map50_95},   {"precision", m.precision},
          {"recall", m.recall},       {"f1", m.f1}};
}

inline evaluate::VariantMetrics metrics_from_json(const nlohmann::json& j) {
  return {j.at("variant"), j.at("model"), j.at("map50"), j.at("map50_95"),
          j.at("precision"), j.at("recall"), j.at("f1")};
}

inline void to_json(nlohmann::json& j, const RunManifest& m) {
  auto stages = nlohmann::json::array();
  for (const auto& s : m.stages)
    stages.push_back({{"name", s.name}, {"started", s.started}, {"finished", s.finished}, {"seconds", s.seconds}});
  auto metrics = nlohmann::json::array();
  for (const auto& r : m.report.rows) metrics.push_back(metrics_to_json(r));
  j = {{"config", m.config},       {"seed", m.seed},         {"status", m.status},
       {"failed_stage", m.failed_stage}, {"error", m.error}, {"stages", stages},
       {"artifacts", m.artifacts}, {"histories", m.histories}, {"metrics", metrics}};
}

inline void from_json(const nlohmann::json& j, RunManifest& m) {
  m = RunManifest{};
  m.config = j.at("config");
  m.seed = j.at("seed");
  m.status = j.at("status");
  m.failed_stage = j.value("failed_stage", std::string{});
  m.error = j.value("error", std::string{});
  for (const auto& s : j.at("stages")) m.stages.push_back({s.at("name"), s.at("started"), s.at("finished"), s.at("seconds")});
  m.artifacts = j.at("artifacts").get<std::vector<std::string>>();
  m.histories = j.value("histories", nlohmann::json::object());
  for (const auto& r : j.at("metrics")) m.report.rows.push_back(metrics_from_json(r));
}

inline RunManifest read_manifest(const std::filesystem::path& path) {
  try {
    return nlohmann::json::parse(annotations::detail::read_text(path)).get<RunManifest>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

namespace detail {

inline std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream s;
  s << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return s.str();
}

// Seed streams. Every random draw in a run derives from the experiment seed.
enum SeedTag : std::uint64_t {
  kTrainScenes = 1,
  kTestScenes = 2,
  kEnhancerScenes = 3,
  kDetector = 4,
  kColorizer = 5,
  kSrRgb = 6,
  kSrGray = 7,
  kDegrade = 8,
  kSplit = 9,
};

struct Split {
  std::vector<detect::DetectionSample> train;
  std::vector<detect::DetectionSample> test;
};

inline std::vector<detect::DetectionSample> degrade_scenes(const std::vector<SyntheticScene>& scenes,
                                                           const superres::DegradationConfig& deg,
                                                           std::uint64_t seed) {
  std::vector<detect::DetectionSample> out;
  out.reserve(scenes.size());
  const double s = deg.scale;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    auto d = deg;
    d.seed = nn::mix_seed(seed, i);
    detect::DetectionSample x{extract_luminance(superres::degrade(scenes[i].image, d)), {}};
    for (auto b : scenes[i].boxes) {
      b.x /= s;
      b.y /= s;
      b.w /= s;
      b.h /= s;
      x.boxes.push_back(b);
    }
    out.push_back(std::move(x));
  }
  return out;
}

/// Largest multiple of `m` not above min(w, h, cap).
inline int fit_tile(const Raster& r, int m, int cap) {
  const int t = std::min({r.width(), r.height(), cap}) / m * m;
  if (t < m) throw DimensionMismatch("image smaller than the enhancer's tile multiple " + std::to_string(m));
  return t;
}

struct Enhancers {
  std::optional<colorize::Colorizer> colorizer;
  std::optional<superres::SuperResolver> sr_rgb;
  std::optional<superres::SuperResolver> sr_gray;
};

inline Raster enhance(const Raster& gray, const std::string& variant, const Enhancers& e) {
  Raster img = gray;
  if (variant_colorizes(variant)) {
    const int m = e.colorizer->size_multiple();
    img = colorize::colorize_image(img, *e.colorizer, fit_tile(img, m, 256));
  }
  if (variant_upscales(variant)) {
    const auto& sr = variant_colorizes(variant) ? *e.sr_rgb : *e.sr_gray;
    img = superres::upscale_image(img, sr, fit_tile(img, 1, 128));
  }
  return img;
}

}  // namespace detail

/// Stage callback for progress reporting: (stage, message).
using ProgressFn = std::function<void(const std::string&, const std::string&)>;

class Experiment {
 public:
  explicit Experiment(ExperimentConfig cfg, ProgressFn progress = {})
      : cfg_(std::move(cfg)), progress_(std::move(progress)) {}

  RunManifest run() {
    validate(cfg_);
    namespace fs = std::filesystem;
    fs::create_directories(cfg_.output_dir);
    manifest_.config = cfg_;
    manifest_.seed = cfg_.seed;
    variants_ = expand_variants(cfg_);

    stage("prepare", [&] { prepare(); });
    stage("enhance", [&] { enhance(); });
    stage("dataset", [&] { build_datasets(); });
    stage("train", [&] { train(); });
    stage("eval", [&] { eval(); });
    manifest_.status = "complete";
    write_manifest();
    return manifest_;
  }

 private:
  std::filesystem::path out(const std::string& rel) const { return cfg_.output_dir / rel; }

  void note(const std::string& stage, const std::string& msg) const {
    if (progress_) progress_(stage, msg);
  }

  void add_artifact(const std::string& rel) {
    if (std::find(manifest_.artifacts.begin(), manifest_.artifacts.end(), rel) == manifest_.artifacts.end()) {
      manifest_.artifacts.push_back(rel);
    }
  }

  void write_manifest() const {
    annotations::detail::write_text_atomic(out("manifest.json"), nlohmann::json(manifest_).dump(2) + "\n");
  }

  template <class F>
  void stage(const std::string& name, F&& body) {
    StageRecord rec{name, detail::utc_now(), {}, 0.0};
    manifest_.stages.push_back(rec);
    write_manifest();
    const auto t0 = std::chrono::steady_clock::now();
    try {
      body();
    } catch (const std::exception& e) {
      manifest_.status = "failed";
      manifest_.failed_stage = name;
      manifest_.error = e.what();
      write_manifest();
      throw StageError(name, e.what());
    }
    auto& r = manifest_.stages.back();
    r.finished = detail::utc_now();
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_manifest();
  }

  // Grayscale archive tiles for train and test, written under source/.
  void prepare() {
    if (cfg_.synthetic) {
      const auto& s = *cfg_.synthetic;
      if (s.scene.size % cfg_.degradation.scale != 0) {
        throw ValidationError("synthetic scene size must be divisible by the degradation scale");
      }
      const auto train = render_benchmark(s.scene, s.train_tiles, nn::mix_seed(cfg_.seed, detail::kTrainScenes));
      const auto test = render_benchmark(s.scene, s.test_tiles, nn::mix_seed(cfg_.seed, detail::kTestScenes));
      const auto dseed = nn::mix_seed(cfg_.seed, detail::kDegrade);
      source_.train = detail::degrade_scenes(train, cfg_.degradation, nn::mix_seed(dseed, 1));
      source_.test = detail::degrade_scenes(test, cfg_.degradation, nn::mix_seed(dseed, 2));
    } else {
      auto all = load_dataset(cfg_.input_dir);
      for (auto& x : all.samples) x.image = extract_luminance(x.image);
      std::vector<std::size_t> order(all.samples.size());
      std::iota(order.begin(), order.end(), 0);
      nn::Rng rng(nn::mix_seed(cfg_.seed, detail::kSplit));
      std::shuffle(order.begin(), order.end(), rng);
      const auto n_test = static_cast<std::size_t>(std::round(cfg_.test_fraction * order.size()));
      if (n_test == 0 || n_test >= order.size()) {
        throw ValidationError("test_fraction leaves an empty train or test split");
      }
      std::sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_test));
      std::sort(order.begin() + static_cast<std::ptrdiff_t>(n_test), order.end());
      for (std::size_t k = 0; k < order.size(); ++k)
        (k < n_test ? source_.test : source_.train).push_back(all.samples[order[k]]);
    }
    // Round-trip through disk so every variant starts from the same 8-bit
    // archive the dataset files hold.
    for (const char* split : {"train", "test"}) {
      const auto dir = out(std::string("source/") + split);
      write_dataset(dir, split == std::string("train") ? source_.train : source_.test);
      (split == std::string("train") ? source_.train : source_.test) = load_dataset(dir).samples;
      add_artifact(std::string("source/") + split + "/annotations.json");
    }
    note("prepare", std::to_string(source_.train.size()) + " train / " + std::to_string(source_.test.size()) +
                        " test tiles");
  }

  bool any_variant(bool (*pred)(const std::string&)) const {
    return std::any_of(variants_.begin(), variants_.end(), pred);
  }

  void obtain_enhancers() {
    const bool need_col = any_variant(variant_colorizes);
    const bool need_sr_rgb =
        any_variant([](const std::string& v) { return variant_colorizes(v) && variant_upscales(v); });
    const bool need_sr_gray =
        any_variant([](const std::string& v) { return variant_upscales(v) && !variant_colorizes(v); });
    const auto& ck = cfg_.checkpoints;
    std::vector<SyntheticScene> scenes;
    if (cfg_.synthetic && ((need_col && ck.colorizer.empty()) || (need_sr_rgb && ck.superres_rgb.empty()) ||
                           (need_sr_gray && ck.superres_gray.empty()))) {
      scenes = render_benchmark(cfg_.synthetic->scene, cfg_.synthetic->enhancer_tiles,
                                nn::mix_seed(cfg_.seed, detail::kEnhancerScenes));
    }
    auto deg = cfg_.degradation;
    deg.seed = nn::mix_seed(cfg_.seed, detail::kDegrade);

    if (need_col) {
      if (!ck.colorizer.empty()) {
        enh_.colorizer = colorize::Colorizer::load(ck.colorizer);
      } else {
        std::vector<colorize::ColorPair> pairs;
        for (std::size_t i = 0; i < scenes.size(); ++i) {
          auto d = deg;
          d.seed = nn::mix_seed(deg.seed, 100 + i);
          Raster lr = superres::degrade(scenes[i].image, d);
          pairs.push_back({extract_luminance(lr), std::move(lr)});
        }
        auto tc = cfg_.colorizer_train;
        tc.base.seed = nn::mix_seed(cfg_.seed, detail::kColorizer);
        note("enhance", "training colorizer on " + std::to_string(pairs.size()) + " tiles");
        auto res = colorize::train_colorizer(pairs, tc, cfg_.colorizer);
        res.model.save(out("models/colorizer.ckpt"));
        add_artifact("models/colorizer.ckpt");
        manifest_.histories["colorizer"] = {{"initial_val_l1", res.initial_val_l1},
                                            {"final_val_l1", res.history.empty() ? res.initial_val_l1
                                                                                 : res.history.back().val_l1}};
        enh_.colorizer = std::move(res.model);
      }
    }
    auto get_sr = [&](const std::filesystem::path& p, bool gray, const char* name, detail::SeedTag tag) {
      if (!p.empty()) {
        auto m = superres::SuperResolver::load(p);
        if ((m.config().channels == 1) != gray) {
          throw ValidationError(p.string() + ": expected a " + (gray ? "1" : "3") + "-channel model");
        }
        if (m.scale() != cfg_.degradation.scale) {
          throw ValidationError(p.string() + ": model scale does not match degradation.scale");
        }
        return m;
      }
      std::vector<Raster> hr;
      for (const auto& s : scenes) hr.push_back(gray ? extract_luminance(s.image) : s.image);
      auto tc = cfg_.sr_train;
      tc.base.seed = nn::mix_seed(cfg_.seed, tag);
      note("enhance", std::string("training ") + name + " on " + std::to_string(hr.size()) + " tiles");
      auto res = superres::train_sr(hr, deg, tc, cfg_.superres);
      const std::string rel = std::string("models/") + name + ".ckpt";
      res.model.save(out(rel));
      add_artifact(rel);
      manifest_.histories[name] = {{"initial_val_rec", res.initial_val_rec},
                                   {"final_val_rec", res.history.empty() ? res.initial_val_rec
                                                                         : res.history.back().val_rec}};
      return std::move(res.model);
    };
    if (need_sr_rgb) enh_.sr_rgb = get_sr(ck.superres_rgb, false, "superres_rgb", detail::kSrRgb);
    if (need_sr_gray) enh_.sr_gray = get_sr(ck.superres_gray, true, "superres_gray", detail::kSrGray);
  }

  void enhance() {
    obtain_enhancers();
    for (const auto& v : variants_) {
      auto& d = enhanced_[v];
      const double s = variant_upscales(v) ? cfg_.degradation.scale : 1.0;
      for (int split = 0; split < 2; ++split) {
        const auto& src = split == 0 ? source_.train : source_.test;
        auto& dst = split == 0 ? d.train : d.test;
        dst.reserve(src.size());
        for (const auto& x : src) {
          detect::DetectionSample y{detail::enhance(x.image, v, enh_), x.boxes};
          for (auto& b : y.boxes) {
            b.x *= s;
            b.y *= s;
            b.w *= s;
            b.h *= s;
          }
          dst.push_back(std::move(y));
        }
      }
      note("enhance", v + " done");
    }
  }

  void build_datasets() {
    for (const auto& v : variants_) {
      for (const char* split : {"train", "test"}) {
        const std::string rel = "variants/" + v + "/" + split;
        const auto& samples = split == std::string("train") ? enhanced_[v].train : enhanced_[v].test;
        write_dataset(out(rel), samples);
        add_artifact(rel + "/annotations.json");
      }
    }
    enhanced_.clear();
  }

  void train() {
    for (const auto& v : variants_) {
      const auto data = load_dataset(out("variants/" + v + "/train"));
      auto tc = cfg_.train;
      tc.base.seed = nn::mix_seed(cfg_.seed, detail::kDetector);
      note("train", v + ": " + std::to_string(data.samples.size()) + " tiles");
      auto res = detect::train_detector(data.samples, {}, tc, cfg_.detector);
      const std::string rel = "variants/" + v + "/detector.ckpt";
      res.model.save(out(rel));
      add_artifact(rel);
      auto hist = nlohmann::json::array();
      for (const auto& e : res.history)
        hist.push_back({{"epoch", e.epoch}, {"loss", e.loss.total}, {"box", e.loss.box},
                        {"obj", e.loss.obj},  {"cls", e.loss.cls},  {"val_map50", e.val_map50}});
      manifest_.histories["detector/" + v] = {{"best_epoch", res.best_epoch},
                                              {"best_val_map50", res.best_val_map50},
                                              {"stopped_early", res.stopped_early},
                                              {"epochs", hist}};
      write_manifest();
    }
  }

  void eval() {
    std::vector<evaluate::VariantRun> runs;
    for (const auto& v : variants_) {
      const auto dir = out("variants/" + v);
      const auto model = detect::Detector::load(dir / "detector.ckpt");
      const auto test = load_dataset(dir / "test");
      const auto dets = predict_dataset(test, model, cfg_.train.eval_conf);
      evaluate::write_predictions(dets, dir / "predictions.txt");
      add_artifact("variants/" + v + "/predictions.txt");
      runs.push_back({v, cfg_.model_tag, dir / "predictions.txt", dir / "test" / kAnnotationsFile});
    }
    manifest_.report = evaluate::compare_variants(runs);
    annotations::detail::write_text_atomic(out("report.csv"), evaluate::render_csv(manifest_.report));
    annotations::detail::write_text_atomic(out("table.txt"), evaluate::render_table(manifest_.report));
    add_artifact("report.csv");
    add_artifact("table.txt");
  }

  struct VariantData {
    std::vector<detect::DetectionSample> train;
    std::vector<detect::DetectionSample> test;
  };

  ExperimentConfig cfg_;
  ProgressFn progress_;
  RunManifest manifest_;
  std::vector<std::string> variants_;
  detail::Split source_;
  detail::Enhancers enh_;
  std::map<std::string, VariantData> enhanced_;
};

inline RunManifest run_experiment(const ExperimentConfig& cfg, ProgressFn progress = {}) {
  return Experiment(cfg, std::move(progress)).run();
}

/// Re-runs the configuration recorded in a manifest into `output_dir`.
inline RunManifest rerun_from_manifest(const std::filesystem::path& manifest, const std::filesystem::path& output_dir,
                                       ProgressFn progress = {}) {
  auto cfg = read_manifest(manifest).config.get<ExperimentConfig>();
  cfg.output_dir = output_dir;
  return run_experiment(cfg, std::move(progress));
}

}  // namespace retroroof::pipeline
