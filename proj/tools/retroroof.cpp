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


// retroroof command-line front end. Every subcommand takes --seed.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "retroroof/annotations.hpp"
#include "retroroof/colorize.hpp"
#include "retroroof/detect.hpp"
#include "retroroof/evaluate.hpp"
#include "retroroof/imagery.hpp"
#include "retroroof/pipeline.hpp"
#include "retroroof/raster_io.hpp"
#include "retroroof/superres.hpp"

namespace fs = std::filesystem;
using namespace retroroof;

namespace {

std::vector<fs::path> images_in(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    auto ext = e.path().extension().string();
    for (auto& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (ext == ".png" || ext == ".tif" || ext == ".tiff" || ext == ".jpg" || ext == ".jpeg") out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  if (out.empty()) throw IoError("no images in " + dir.string());
  return out;
}

nlohmann::json read_json(const fs::path& p) {
  try {
    return nlohmann::json::parse(annotations::detail::read_text(p));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(p.string() + ": " + e.what());
  }
}

Raster load_gray(const fs::path& p, bool archive_scan) {
  return archive_scan ? gray_to_luminance(read_gray_scan(p)) : extract_luminance(read_raster(p));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"retroroof: enhancement, dataset generation, rooftop detection and evaluation for aerial imagery"};
  app.require_subcommand(1);
  std::uint64_t seed = 0;
  bool verbose = false;

  // colorize ---------------------------------------------------------------
  auto* col = app.add_subcommand("colorize", "Colorize a grayscale image, or train a colorizer (--train)");
  fs::path col_in, col_out, col_model, col_train;
  int col_tile = 256, col_overlap = 0, col_epochs = 0;
  bool col_scan = false;
  col->add_option("--in", col_in, "grayscale input image");
  col->add_option("--out", col_out, "output image, or the checkpoint path with --train")->required();
  col->add_option("--model", col_model, "colorizer checkpoint");
  col->add_option("--train", col_train, "directory of color tiles to train on");
  col->add_option("--epochs", col_epochs, "training epochs (0 keeps the default)");
  col->add_option("--tile", col_tile, "inference tile size");
  col->add_option("--overlap", col_overlap, "inference tile overlap");
  col->add_flag("--scan", col_scan, "treat the input as an 8-bit archive scan");
  col->add_option("--seed", seed);
  col->add_flag("-v,--verbose", verbose);

  // upscale ----------------------------------------------------------------
  auto* up = app.add_subcommand("upscale", "Super-resolve an image, or train a model (--train)");
  fs::path up_in, up_out, up_model, up_train;
  int up_tile = 128, up_scale = 2, up_epochs = 0;
  bool up_gray = false;
  up->add_option("--in", up_in, "input image");
  up->add_option("--out", up_out, "output image, or the checkpoint path with --train")->required();
  up->add_option("--model", up_model, "super-resolution checkpoint");
  up->add_option("--train", up_train, "directory of high-resolution tiles to train on");
  up->add_option("--scale", up_scale, "training scale factor");
  up->add_option("--epochs", up_epochs, "training epochs (0 keeps the default)");
  up->add_flag("--gray", up_gray, "train a single-channel model");
  up->add_option("--tile", up_tile, "inference tile size");
  up->add_option("--seed", seed);
  up->add_flag("-v,--verbose", verbose);

  // make-dataset -----------------------------------------------------------
  auto* mk = app.add_subcommand("make-dataset", "Tile a georeferenced image and project footprint MBRs");
  fs::path mk_image, mk_world, mk_fp, mk_out;
  pipeline::MakeDatasetOptions mk_opt;
  mk->add_option("--image", mk_image)->required();
  mk->add_option("--worldfile", mk_world)->required();
  mk->add_option("--footprints", mk_fp, "GeoJSON footprints")->required();
  mk->add_option("--tiles", mk_opt.tile, "tile size in pixels");
  mk->add_option("--overlap", mk_opt.overlap, "tile overlap in pixels");
  mk->add_option("--min-retained", mk_opt.min_retained, "minimum kept share of a clipped box");
  mk->add_option("--out", mk_out)->required();
  mk->add_option("--seed", seed);

  // train ------------------------------------------------------------------
  auto* tr = app.add_subcommand("train", "Train the detector on a dataset directory");
  fs::path tr_data, tr_val, tr_out, tr_cfg;
  int tr_epochs = 0;
  tr->add_option("--data", tr_data, "dataset dir (annotations.json + tiles)")->required();
  tr->add_option("--val", tr_val, "validation dataset dir (default: split from --data)");
  tr->add_option("--config", tr_cfg, "JSON training config");
  tr->add_option("--epochs", tr_epochs, "override epochs");
  tr->add_option("--out", tr_out, "checkpoint path")->required();
  tr->add_option("--seed", seed);
  tr->add_flag("-v,--verbose", verbose);

  // predict ----------------------------------------------------------------
  auto* pr = app.add_subcommand("predict", "Write detections for a dataset directory");
  fs::path pr_data, pr_model, pr_out;
  double pr_conf = 0.001, pr_iou = detect::kDefaultNmsIou;
  pr->add_option("--data", pr_data)->required();
  pr->add_option("--model", pr_model)->required();
  pr->add_option("--out", pr_out, "prediction file")->required();
  pr->add_option("--conf", pr_conf, "confidence threshold");
  pr->add_option("--iou", pr_iou, "NMS IoU threshold");
  pr->add_option("--seed", seed);

  // eval -------------------------------------------------------------------
  auto* ev = app.add_subcommand("eval", "Compare prediction files across variants and models");
  std::vector<std::string> ev_runs;
  fs::path ev_csv, ev_table;
  double ev_conf = evaluate::kDefaultConfidence;
  ev->add_option("--run", ev_runs, "VARIANT:MODEL:PREDICTIONS:GROUND_TRUTH (repeatable)")->required();
  ev->add_option("--csv", ev_csv, "write the metric CSV here");
  ev->add_option("--table", ev_table, "write the table here");
  ev->add_option("--conf", ev_conf, "confidence for precision/recall/F1");
  ev->add_option("--seed", seed);

  // run --------------------------------------------------------------------
  auto* rn = app.add_subcommand("run", "Run a full experiment from a JSON config");
  fs::path rn_cfg, rn_out, rn_manifest;
  rn->add_option("--config", rn_cfg, "experiment config");
  rn->add_option("--from-manifest", rn_manifest, "re-run the config recorded in a manifest");
  rn->add_option("--out", rn_out, "override output_dir");
  auto* rn_seed = rn->add_option("--seed", seed);
  rn->add_flag("-v,--verbose", verbose);

  // serve-review -----------------------------------------------------------
  auto* sv = app.add_subcommand("serve-review", "Serve the annotation review API for a dataset directory");
  fs::path sv_data;
  std::string sv_host = "127.0.0.1";
  int sv_port = 8080;
  sv->add_option("--data", sv_data)->required();
  sv->add_option("--host", sv_host);
  sv->add_option("--port", sv_port);
  sv->add_option("--seed", seed);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*col) {
      if (!col_train.empty()) {
        std::vector<colorize::ColorPair> pairs;
        for (const auto& p : images_in(col_train)) {
          Raster c = read_raster(p);
          if (c.layout() != ChannelLayout::Rgb) throw ChannelMismatch(p.string() + ": colour tiles required");
          pairs.push_back({extract_luminance(c), std::move(c)});
        }
        colorize::ColorizerTrainConfig cfg;
        cfg.base.seed = seed;
        cfg.base.verbose = verbose;
        if (col_epochs > 0) cfg.base.epochs = col_epochs;
        auto res = colorize::train_colorizer(pairs, cfg);
        res.model.save(col_out);
        std::cout << "colorizer saved to " << col_out << "\n";
      } else {
        if (col_in.empty() || col_model.empty()) throw InvalidArgument("colorize needs --in and --model");
        const auto model = colorize::Colorizer::load(col_model);
        const Raster gray = load_gray(col_in, col_scan);
        const int m = model.size_multiple();
        const int tile = std::min({col_tile, gray.width(), gray.height()}) / m * m;
        write_raster(col_out, colorize::colorize_image(gray, model, tile, std::min(col_overlap, tile - 1)));
      }
    } else if (*up) {
      if (!up_train.empty()) {
        std::vector<Raster> hr;
        for (const auto& p : images_in(up_train)) {
          Raster r = read_raster(p);
          hr.push_back(up_gray ? extract_luminance(r) : r);
        }
        superres::DegradationConfig deg;
        deg.scale = up_scale;
        deg.seed = seed;
        superres::SRTrainConfig cfg;
        cfg.base.seed = seed;
        cfg.base.verbose = verbose;
        if (up_epochs > 0) cfg.base.epochs = up_epochs;
        auto res = superres::train_sr(hr, deg, cfg);
        res.model.save(up_out);
        std::cout << "super-resolution model saved to " << up_out << "\n";
      } else {
        if (up_in.empty() || up_model.empty()) throw InvalidArgument("upscale needs --in and --model");
        const auto model = superres::SuperResolver::load(up_model);
        Raster img = read_raster(up_in);
        if (model.config().channels == 1) img = extract_luminance(img);
        write_raster(up_out, superres::upscale_image(img, model, std::min({up_tile, img.width(), img.height()})));
      }
    } else if (*mk) {
      const auto coco = pipeline::make_dataset(mk_image, mk_world, mk_fp, mk_out, mk_opt);
      std::cout << coco.images.size() << " tiles, " << coco.annotations.size() << " boxes written to " << mk_out
                << "\n";
    } else if (*tr) {
      detect::DetectorTrainConfig cfg;
      if (!tr_cfg.empty()) cfg = read_json(tr_cfg).get<detect::DetectorTrainConfig>();
      cfg.base.seed = seed;
      cfg.base.verbose = verbose;
      if (tr_epochs > 0) cfg.base.epochs = tr_epochs;
      const auto train = pipeline::load_dataset(tr_data);
      std::vector<detect::DetectionSample> val;
      if (!tr_val.empty()) val = pipeline::load_dataset(tr_val).samples;
      const auto res = detect::train_detector(train.samples, val, cfg);
      res.model.save(tr_out);
      std::cout << "best epoch " << res.best_epoch << ", val mAP@50 " << res.best_val_map50 << "; saved to "
                << tr_out << "\n";
    } else if (*pr) {
      const auto model = detect::Detector::load(pr_model);
      const auto data = pipeline::load_dataset(pr_data);
      std::vector<evaluate::Detection> dets;
      for (std::size_t i = 0; i < data.samples.size(); ++i)
        for (const auto& p : detect::predict(data.samples[i].image, model, pr_conf, pr_iou))
          dets.push_back({data.image_ids[i], {p.x, p.y, p.w, p.h}, p.score});
      evaluate::write_predictions(dets, pr_out);
      std::cout << dets.size() << " detections written to " << pr_out << "\n";
    } else if (*ev) {
      std::vector<evaluate::VariantRun> runs;
      for (const auto& r : ev_runs) {
        std::vector<std::string> f;
        std::size_t start = 0;
        for (int k = 0; k < 3; ++k) {
          const auto pos = r.find(':', start);
          if (pos == std::string::npos) throw InvalidArgument("--run expects VARIANT:MODEL:PREDICTIONS:GROUND_TRUTH");
          f.push_back(r.substr(start, pos - start));
          start = pos + 1;
        }
        f.push_back(r.substr(start));
        runs.push_back({f[0], f[1], f[2], f[3]});
      }
      const auto report = evaluate::compare_variants(runs, ev_conf);
      const auto csv = evaluate::render_csv(report);
      const auto table = evaluate::render_table(report);
      if (!ev_csv.empty()) annotations::detail::write_text_atomic(ev_csv, csv);
      if (!ev_table.empty()) annotations::detail::write_text_atomic(ev_table, table);
      std::cout << table;
    } else if (*rn) {
      pipeline::ExperimentConfig cfg;
      if (!rn_manifest.empty()) {
        cfg = pipeline::read_manifest(rn_manifest).config.get<pipeline::ExperimentConfig>();
      } else if (!rn_cfg.empty()) {
        cfg = pipeline::load_experiment_config(rn_cfg);
      } else {
        throw InvalidArgument("run needs --config or --from-manifest");
      }
      if (rn_seed->count() > 0) cfg.seed = seed;
      if (!rn_out.empty()) cfg.output_dir = rn_out;
      cfg.train.base.verbose = verbose;
      const auto m = pipeline::run_experiment(cfg, [](const std::string& stage, const std::string& msg) {
        std::cerr << "[" << stage << "] " << msg << "\n";
      });
      std::cout << evaluate::render_table(m.report);
      std::cout << "manifest: " << (cfg.output_dir / "manifest.json").string() << "\n";
    } else if (*sv) {
      pipeline::ReviewService service(sv_data);
      httplib::Server server;
      std::cerr << "serving " << sv_data << " on http://" << sv_host << ":" << sv_port << "\n";
      pipeline::serve_review(service, server, sv_host, sv_port);
    }
  } catch (const StageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
