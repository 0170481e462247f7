#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>

#include <json.hpp>

#include "bachkit/bank.hpp"
#include "bachkit/fusion.hpp"
#include "bachkit/image_io.hpp"

namespace bachkit {

using Rgb = std::array<std::uint8_t, 3>;

/// One color per taxonomy category, plus the void color (pixels with no
/// category), the overlap accent (foreground count >= 2) and the foreground
/// opacity.
struct Palette {
  Rgb void_color{0, 0, 0};
  Rgb accent{255, 0, 255};
  double alpha = 0.6;
  std::map<int, Rgb> colors;

  static Palette defaults(const Taxonomy& taxonomy);
  static Palette from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

/// Background channel fills the pixel (void when none is set); a single
/// foreground instance is blended over it with `alpha`; two or more
/// overlapping instances take the accent color.
Image8 render_preview(const ComposedLabelMap& map, const Taxonomy& taxonomy,
                      const Palette& palette);

/// Composed map of a bank entry's own segmentation: split background, then its
/// foreground one-hot block.
ComposedLabelMap entry_label_map(const BankEntry& entry, const Taxonomy& taxonomy);

struct ServiceConfig {
  std::filesystem::path bank_manifest;
  std::optional<std::filesystem::path> taxonomy_path;
  std::size_t m = 3;
  std::size_t workers = 1;
  std::string host = "127.0.0.1";
  int port = 8080;
  std::optional<std::filesystem::path> params_dir;
  std::optional<std::filesystem::path> palette_path;

  /// Relative paths resolve against `base_dir`.
  static ServiceConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
  static ServiceConfig load(const std::filesystem::path& path);
  /// m >= 1, workers >= 1, referenced paths exist.
  void validate() const;
};

struct ApiResponse {
  int status = 200;
  std::string body;
  std::string content_type = "application/json";
  std::map<std::string, std::string> headers;
};

/// Request handlers over an immutable bank. All members are const, so one Api
/// may serve concurrent requests.
class Api {
 public:
  Api(MemoryBank bank, FusionParams fusion, Palette palette, std::size_t default_m,
      std::size_t workers);
  static Api from_config(const ServiceConfig& config);

  ApiResponse retrieve(std::string_view body) const;
  ApiResponse fuse_preview(std::string_view body) const;
  ApiResponse validate_layout(std::string_view body) const;
  ApiResponse bank_stats() const;
  ApiResponse taxonomy() const;
  ApiResponse preview(std::string_view id) const;

  const MemoryBank& bank() const noexcept { return bank_; }

 private:
  MemoryBank bank_;
  FusionParams fusion_;
  Palette palette_;
  std::size_t default_m_;
  std::size_t workers_;
};

/// HTTP status used for a library error kind.
int http_status(ErrorKind kind);

/// HTTP front end over an Api: POST /retrieve, /fuse-preview, /layout/validate;
/// GET /bank/stats, /taxonomy, /preview/{id}.
class HttpServer {
 public:
  explicit HttpServer(const Api& api);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  /// Binds; port 0 picks a free port. Returns the bound port.
  int bind(const std::string& host, int port);
  /// Serves until stop() is called from another thread.
  void run();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace bachkit
