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
 * @file checkpoint.hpp
 * @brief Self-describing parameter archives.
 *
 * Layout: the 8-byte magic "RRCKPT01", a little-endian u64 header length, a
 * JSON header {kind, config, seed, extra, params:[{name, shape}]}, then the
 * float32 values of every parameter in header order.
 */

#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "retroroof/error.hpp"
#include "retroroof/nn/parameters.hpp"

namespace retroroof::nn {

inline constexpr std::array<char, 8> kCheckpointMagic = {'R', 'R', 'C', 'K', 'P', 'T', '0', '1'};

struct Checkpoint {
  std::string kind;
  nlohmann::json config;
  std::uint64_t seed = 0;
  nlohmann::json extra;
  ParameterSet params;
};

inline void save_checkpoint(const std::filesystem::path& path, const std::string& kind,
                            const nlohmann::json& config, std::uint64_t seed,
                            const ParameterSet& params, const nlohmann::json& extra = {}) {
  nlohmann::json header{{"kind", kind}, {"config", config}, {"seed", seed}, {"extra", extra}};
  auto& plist = header["params"] = nlohmann::json::array();
  for (const auto& p : params) plist.push_back({{"name", p.name}, {"shape", p.shape}});
  const std::string text = header.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint: " + tmp.string());
    out.write(kCheckpointMagic.data(), kCheckpointMagic.size());
    std::uint64_t len = text.size();
    unsigned char len_le[8];
    for (int i = 0; i < 8; ++i) len_le[i] = static_cast<unsigned char>((len >> (8 * i)) & 0xff);
    out.write(reinterpret_cast<const char*>(len_le), 8);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& p : params) {
      for (float f : p.value) {
        std::uint32_t bits;
        std::memcpy(&bits, &f, 4);
        unsigned char le[4] = {static_cast<unsigned char>(bits), static_cast<unsigned char>(bits >> 8),
                               static_cast<unsigned char>(bits >> 16),
                               static_cast<unsigned char>(bits >> 24)};
        out.write(reinterpret_cast<const char*>(le), 4);
      }
    }
    if (!out) throw IoError("short write on checkpoint: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path.string());
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kCheckpointMagic) throw ValidationError(path.string() + ": not a checkpoint");
  unsigned char len_le[8];
  in.read(reinterpret_cast<char*>(len_le), 8);
  std::uint64_t len = 0;
  for (int i = 0; i < 8; ++i) len |= static_cast<std::uint64_t>(len_le[i]) << (8 * i);
  if (!in || len > (1ull << 30)) throw ValidationError(path.string() + ": corrupt header length");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw ValidationError(path.string() + ": truncated header");

  Checkpoint ck;
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
    ck.kind = header.at("kind").get<std::string>();
    ck.config = header.at("config");
    ck.seed = header.at("seed").get<std::uint64_t>();
    ck.extra = header.value("extra", nlohmann::json{});
    for (const auto& p : header.at("params")) {
      auto shape = p.at("shape").get<std::vector<int>>();
      std::size_t n = 1;
      for (int d : shape) n *= static_cast<std::size_t>(d);
      std::vector<float> values(n);
      for (auto& f : values) {
        unsigned char le[4];
        in.read(reinterpret_cast<char*>(le), 4);
        const std::uint32_t bits = le[0] | (le[1] << 8) | (le[2] << 16) |
                                   (static_cast<std::uint32_t>(le[3]) << 24);
        std::memcpy(&f, &bits, 4);
      }
      if (!in) throw ValidationError(path.string() + ": truncated parameter payload");
      ck.params.add(p.at("name").get<std::string>(), std::move(shape), std::move(values));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path.string() + ": malformed header: " + e.what());
  }
  return ck;
}

}  // namespace retroroof::nn
