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

// PNG/TIFF raster I/O and world-file sidecars.

#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "retroroof/error.hpp"
#include "retroroof/imagery.hpp"

namespace retroroof {

/// Reads a single-channel 8-bit scan with its stored gray values (0..255),
/// before any luminance rescale.
inline Raster read_gray_scan(const std::filesystem::path& path) {
  cv::Mat m = cv::imread(path.string(), cv::IMREAD_GRAYSCALE);
  if (m.empty()) throw IoError("cannot read image: " + path.string());
  Raster out(m.cols, m.rows, ChannelLayout::Luminance);
  for (int y = 0; y < m.rows; ++y)
    for (int x = 0; x < m.cols; ++x) out.at(0, y, x) = m.at<std::uint8_t>(y, x);
  return out;
}

/// Single-channel files load as luminance in [0,100]; everything else loads as
/// RGB in [0,1]. 16-bit files are rescaled by their full range.
inline Raster read_raster(const std::filesystem::path& path) {
  cv::Mat m = cv::imread(path.string(), cv::IMREAD_ANYDEPTH | cv::IMREAD_ANYCOLOR);
  if (m.empty()) throw IoError("cannot read image: " + path.string());
  const double scale = m.depth() == CV_16U ? 1.0 / 65535.0 : 1.0 / 255.0;
  if (m.depth() != CV_8U && m.depth() != CV_16U) {
    throw IoError("unsupported sample depth in " + path.string());
  }
  cv::Mat f;
  m.convertTo(f, CV_64F, scale);
  if (f.channels() == 1) {
    Raster out(f.cols, f.rows, ChannelLayout::Luminance);
    for (int y = 0; y < f.rows; ++y)
      for (int x = 0; x < f.cols; ++x) out.at(0, y, x) = 100.0 * f.at<double>(y, x);
    return out;
  }
  Raster out(f.cols, f.rows, ChannelLayout::Rgb);
  for (int y = 0; y < f.rows; ++y)
    for (int x = 0; x < f.cols; ++x) {
      const auto& px = f.at<cv::Vec3d>(y, x);
      out.at(0, y, x) = px[2];
      out.at(1, y, x) = px[1];
      out.at(2, y, x) = px[0];
    }
  return out;
}

/// Writes an 8-bit PNG or TIFF (chosen by extension). LAB rasters are rendered
/// to RGB first.
inline void write_raster(const std::filesystem::path& path, const Raster& r) {
  auto q = [](double v) { return cv::saturate_cast<std::uint8_t>(std::lround(v * 255.0)); };
  cv::Mat m;
  if (r.layout() == ChannelLayout::Luminance) {
    m.create(r.height(), r.width(), CV_8UC1);
    for (int y = 0; y < r.height(); ++y)
      for (int x = 0; x < r.width(); ++x) m.at<std::uint8_t>(y, x) = q(r.at(0, y, x) / 100.0);
  } else {
    const Raster rgb = r.layout() == ChannelLayout::Lab ? lab_to_rgb(r) : r;
    m.create(r.height(), r.width(), CV_8UC3);
    for (int y = 0; y < r.height(); ++y)
      for (int x = 0; x < r.width(); ++x)
        m.at<cv::Vec3b>(y, x) = {q(rgb.at(2, y, x)), q(rgb.at(1, y, x)), q(rgb.at(0, y, x))};
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), m)) throw IoError("cannot write image: " + path.string());
}

/// World file: pixel_w, 0, 0, pixel_h, origin_x, origin_y, one number per line.
inline GeoTransform read_world_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open world file: " + path.string());
  double v[6];
  for (double& d : v) {
    if (!(in >> d)) throw ValidationError("world file " + path.string() + ": expected six numbers");
  }
  if (v[1] != 0.0 || v[2] != 0.0) {
    throw ValidationError("world file " + path.string() + ": rotation terms are not supported");
  }
  try {
    return GeoTransform(v[4], v[5], v[0], v[3]);
  } catch (const InvalidArgument& e) {
    throw ValidationError("world file " + path.string() + ": " + e.what());
  }
}

inline void write_world_file(const std::filesystem::path& path, const GeoTransform& g) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write world file: " + path.string());
  out << std::setprecision(17) << g.pixel_w() << "\n0\n0\n" << g.pixel_h() << '\n'
      << g.origin_x() << '\n' << g.origin_y() << '\n';
}

}  // namespace retroroof
