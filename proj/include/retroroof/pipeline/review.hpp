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
 * @file review.hpp
 * @brief Annotation review service: tile listing, per-tile annotation reads
 *        and optimistic-versioned edits over HTTP, and export of the refined
 *        COCO file.
 *
 * State kept beside the dataset:
 *   refinements.jsonl        every accepted edit, in order
 *   review_state.json        per-tile version counter and status
 *   annotations_refined.json written by export
 */

#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "retroroof/annotations.hpp"
#include "retroroof/error.hpp"
#include "retroroof/pipeline/dataset.hpp"

// Last: httplib pulls in <resolv.h>, whose `_res` macro breaks Eigen
// templates parsed after it.
#include <httplib.h>

namespace retroroof::pipeline {

inline constexpr const char* kRefinementsFile = "refinements.jsonl";
inline constexpr const char* kReviewStateFile = "review_state.json";
inline constexpr const char* kRefinedFile = "annotations_refined.json";

enum class ReviewStatus { Unreviewed, Accepted };

inline const char* to_string(ReviewStatus s) noexcept {
  return s == ReviewStatus::Accepted ? "accepted" : "unreviewed";
}

inline ReviewStatus parse_review_status(const std::string& s) {
  if (s == "unreviewed") return ReviewStatus::Unreviewed;
  if (s == "accepted") return ReviewStatus::Accepted;
  throw ValidationError("unknown review status '" + s + "'");
}

struct TileInfo {
  std::int64_t id = 0;
  std::string file;
  int width = 0;
  int height = 0;
  ReviewStatus status = ReviewStatus::Unreviewed;
};

struct TileAnnotations {
  std::int64_t image_id = 0;
  std::uint64_t version = 0;
  ReviewStatus status = ReviewStatus::Unreviewed;
  std::vector<annotations::CocoAnnotation> annotations;
};

/// One save from a reviewer. Edits carry no image id; the tile supplies it.
/// Add edits with id 0 receive a fresh id.
struct SaveRequest {
  std::uint64_t expected_version = 0;
  std::vector<annotations::RefinementEdit> edits;
  std::optional<ReviewStatus> status;
};

struct SaveResult {
  bool conflict = false;
  std::uint64_t version = 0;  // new version, or the current one on conflict
  std::vector<std::int64_t> assigned_ids;  // ids given to id-less adds
};

class NotFound : public Error {
 public:
  using Error::Error;
};

class ReviewService {
 public:
  explicit ReviewService(std::filesystem::path dir) : dir_(std::move(dir)) {
    base_ = annotations::read_coco(dir_ / kAnnotationsFile);
    for (const auto& im : base_.images) {
      if (!std::filesystem::is_regular_file(dir_ / im.file_name)) {
        throw ValidationError(dir_.string() + ": tile " + im.file_name + " is missing");
      }
      state_[im.id] = {};
    }
    log_ = annotations::read_refinement_log(dir_ / kRefinementsFile);
    current_ = annotations::merge_refinements(base_, log_);
    load_state();
    for (const auto& a : base_.annotations) next_id_ = std::max(next_id_, a.id + 1);
    for (const auto& e : log_.edits) next_id_ = std::max(next_id_, e.annotation_id + 1);
  }

  const std::filesystem::path& dir() const noexcept { return dir_; }

  std::vector<TileInfo> tiles() const {
    std::shared_lock lock(mu_);
    std::vector<TileInfo> out;
    for (const auto& im : base_.images)
      out.push_back({im.id, im.file_name, im.width, im.height, state_.at(im.id).status});
    return out;
  }

  TileAnnotations tile_annotations(std::int64_t id) const {
    std::shared_lock lock(mu_);
    const auto& st = tile_state(id);
    TileAnnotations out{id, st.version, st.status, {}};
    for (const auto* a : current_.annotations_for(id)) out.annotations.push_back(*a);
    return out;
  }

  std::filesystem::path image_path(std::int64_t id) const {
    std::shared_lock lock(mu_);
    const auto* im = base_.find_image(id);
    if (!im) throw NotFound("no tile with id " + std::to_string(id));
    return dir_ / im->file_name;
  }

  /// Applies a save atomically: either every edit lands and the version
  /// advances, or nothing changes. A stale expected version is a conflict,
  /// not an error.
  SaveResult save(std::int64_t id, SaveRequest req) {
    std::unique_lock lock(mu_);
    auto& st = tile_state(id);
    if (req.expected_version != st.version) return {true, st.version, {}};
    if (req.status == ReviewStatus::Unreviewed && st.status == ReviewStatus::Accepted) {
      throw ValidationError("tile " + std::to_string(id) + " is already accepted");
    }
    SaveResult res;
    std::int64_t next = next_id_;
    for (auto& e : req.edits) {
      e.image_id = id;
      if (e.op == annotations::EditOp::Add && e.annotation_id == 0) {
        e.annotation_id = next++;
        res.assigned_ids.push_back(e.annotation_id);
      }
      next = std::max(next, e.annotation_id + 1);
    }
    // Validates the edits against the current state before anything is
    // persisted.
    auto updated = annotations::merge_refinements(current_, {req.edits});

    auto log = log_;
    log.edits.insert(log.edits.end(), req.edits.begin(), req.edits.end());
    auto state = state_;
    auto& nst = state.at(id);
    ++nst.version;
    if (req.status) nst.status = *req.status;
    annotations::write_refinement_log(log, dir_ / kRefinementsFile);
    write_state(state);

    log_ = std::move(log);
    state_ = std::move(state);
    current_ = std::move(updated);
    next_id_ = next;
    res.version = nst.version;
    return res;
  }

  /// Writes merge_refinements(auto annotations, log) and returns its path.
  std::filesystem::path export_refined() const {
    std::shared_lock lock(mu_);
    const auto path = dir_ / kRefinedFile;
    annotations::write_coco(annotations::merge_refinements(base_, log_), path);
    return path;
  }

  /// Registers the HTTP endpoints on `server`.
  void mount(httplib::Server& server) {
    using httplib::Request;
    using httplib::Response;
    auto json_reply = [](Response& res, int status, const nlohmann::json& body) {
      res.status = status;
      res.set_content(body.dump(), "application/json");
    };
    auto guarded = [json_reply](auto&& fn) {
      return [fn, json_reply](const Request& req, Response& res) {
        try {
          fn(req, res);
        } catch (const NotFound& e) {
          json_reply(res, 404, {{"error", e.what()}});
        } catch (const ValidationError& e) {
          json_reply(res, 400, {{"error", e.what()}});
        } catch (const nlohmann::json::exception& e) {
          json_reply(res, 400, {{"error", e.what()}});
        } catch (const std::exception& e) {
          json_reply(res, 500, {{"error", e.what()}});
        }
      };
    };
    auto tile_id = [](const Request& req) { return std::stoll(req.matches[1].str()); };

    server.Get("/api/tiles", guarded([this, json_reply](const Request&, Response& res) {
      auto arr = nlohmann::json::array();
      for (const auto& t : tiles())
        arr.push_back({{"id", t.id}, {"file", t.file}, {"width", t.width}, {"height", t.height},
                       {"status", to_string(t.status)}});
      json_reply(res, 200, arr);
    }));
    server.Get(R"(/api/tiles/(\d+)/image)", guarded([this, tile_id](const Request& req, Response& res) {
      const auto path = image_path(tile_id(req));
      std::ifstream in(path, std::ios::binary);
      if (!in) throw IoError("cannot read " + path.string());
      std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
      res.set_content(std::move(bytes), content_type(path));
    }));
    server.Get(R"(/api/tiles/(\d+)/annotations)",
               guarded([this, tile_id, json_reply](const Request& req, Response& res) {
                 json_reply(res, 200, to_json(tile_annotations(tile_id(req))));
               }));
    server.Put(R"(/api/tiles/(\d+)/annotations)",
               guarded([this, tile_id, json_reply](const Request& req, Response& res) {
                 const auto r = save(tile_id(req), parse_save_request(nlohmann::json::parse(req.body)));
                 if (r.conflict) {
                   json_reply(res, 409, {{"error", "stale version"}, {"version", r.version}});
                 } else {
                   json_reply(res, 200, {{"version", r.version}, {"assigned_ids", r.assigned_ids}});
                 }
               }));
    server.Post("/api/export", guarded([this, json_reply](const Request&, Response& res) {
      json_reply(res, 200, {{"path", export_refined().string()}});
    }));
  }

  static nlohmann::json to_json(const TileAnnotations& t) {
    return {{"image_id", t.image_id},
            {"version", t.version},
            {"status", to_string(t.status)},
            {"annotations", t.annotations}};
  }

  /// {"expected_version": n, "edits": [{"op", "id"?, "bbox"?, "category_id"?}],
  ///  "status"?: "accepted"}
  static SaveRequest parse_save_request(const nlohmann::json& j) {
    SaveRequest r;
    r.expected_version = j.at("expected_version").get<std::uint64_t>();
    for (auto e : j.value("edits", nlohmann::json::array())) {
      e["image_id"] = 0;
      if (!e.contains("id")) e["id"] = 0;
      r.edits.push_back(annotations::edit_from_json(e));
    }
    if (j.contains("status")) r.status = parse_review_status(j.at("status").get<std::string>());
    return r;
  }

 private:
  struct TileState {
    std::uint64_t version = 0;
    ReviewStatus status = ReviewStatus::Unreviewed;
  };

  static const char* content_type(const std::filesystem::path& p) {
    auto ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".png") return "image/png";
    if (ext == ".jpg" || ext == ".jpeg") return "image/jpeg";
    if (ext == ".tif" || ext == ".tiff") return "image/tiff";
    return "application/octet-stream";
  }

  const TileState& tile_state(std::int64_t id) const {
    const auto it = state_.find(id);
    if (it == state_.end()) throw NotFound("no tile with id " + std::to_string(id));
    return it->second;
  }
  TileState& tile_state(std::int64_t id) {
    const auto it = state_.find(id);
    if (it == state_.end()) throw NotFound("no tile with id " + std::to_string(id));
    return it->second;
  }

  void load_state() {
    const auto path = dir_ / kReviewStateFile;
    if (!std::filesystem::exists(path)) return;
    try {
      const auto j = nlohmann::json::parse(annotations::detail::read_text(path));
      for (const auto& t : j.at("tiles")) {
        const auto id = t.at("id").get<std::int64_t>();
        auto it = state_.find(id);
        if (it == state_.end()) throw ValidationError("state for unknown tile " + std::to_string(id));
        it->second = {t.at("version").get<std::uint64_t>(), parse_review_status(t.at("status"))};
      }
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(path.string() + ": " + e.what());
    }
  }

  void write_state(const std::map<std::int64_t, TileState>& state) const {
    auto arr = nlohmann::json::array();
    for (const auto& [id, st] : state)
      arr.push_back({{"id", id}, {"version", st.version}, {"status", to_string(st.status)}});
    annotations::detail::write_text_atomic(dir_ / kReviewStateFile, nlohmann::json{{"tiles", arr}}.dump(1) + "\n");
  }

  std::filesystem::path dir_;
  annotations::CocoDataset base_;
  annotations::CocoDataset current_;
  annotations::RefinementLog log_;
  std::map<std::int64_t, TileState> state_;
  std::int64_t next_id_ = 1;
  mutable std::shared_mutex mu_;
};

/// Mounts the endpoints and binds host:port; port 0 picks a free one.
/// Returns the bound port. Throws IoError when the address is taken.
inline int bind_review(ReviewService& service, httplib::Server& server, const std::string& host, int port) {
  service.mount(server);
  // httplib's default SO_REUSEPORT would let a second server share the port
  // silently.
  server.set_socket_options([](socket_t sock) {
    int yes = 1;
    setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof(yes));
  });
  const int bound = port == 0 ? server.bind_to_any_port(host) : (server.bind_to_port(host, port) ? port : -1);
  if (bound < 0) throw IoError("cannot bind " + host + ":" + std::to_string(port) + " (port in use?)");
  return bound;
}

/// Serves until `server.stop()` is called from another thread.
inline void serve_review(ReviewService& service, httplib::Server& server, const std::string& host, int port) {
  bind_review(service, server, host, port);
  server.listen_after_bind();
}

}  // namespace retroroof::pipeline
