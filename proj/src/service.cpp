#include "bachkit/service.hpp"

#include <cmath>
#include <fstream>
#include <variant>

#include <httplib.h>

#include "bachkit/json_io.hpp"
#include "bachkit/params.hpp"
#include "bachkit/retrieval.hpp"

namespace bachkit {

namespace fs = std::filesystem;
using nlohmann::json;

// Palette ---------------------------------------------------------------------

Palette Palette::defaults(const Taxonomy& taxonomy) {
  Palette p;
  auto add = [&](const Category& c) {
    const auto id = static_cast<unsigned>(c.id);
    p.colors[c.id] = Rgb{static_cast<std::uint8_t>(40 + (id * 97) % 200),
                         static_cast<std::uint8_t>(40 + (id * 57 + 80) % 200),
                         static_cast<std::uint8_t>(40 + (id * 151 + 20) % 200)};
  };
  for (const Category& c : taxonomy.background()) add(c);
  for (const Category& c : taxonomy.foreground()) add(c);
  return p;
}

namespace {

Rgb rgb_from_json(const json& j, const char* what) {
  if (!j.is_array() || j.size() != 3) {
    fail(ErrorKind::Configuration, std::string("palette: ") + what + " must be [r, g, b]");
  }
  Rgb c{};
  for (std::size_t i = 0; i < 3; ++i) {
    const int v = j[i].get<int>();
    if (v < 0 || v > 255) fail(ErrorKind::Configuration, std::string("palette: ") + what + " out of range");
    c[i] = static_cast<std::uint8_t>(v);
  }
  return c;
}

}  // namespace

Palette Palette::from_json(const json& j) {
  try {
    Palette p;
    p.void_color = rgb_from_json(j.at("void"), "void");
    p.accent = rgb_from_json(j.at("accent"), "accent");
    p.alpha = j.value("alpha", p.alpha);
    if (!(p.alpha >= 0.0 && p.alpha <= 1.0)) fail(ErrorKind::Configuration, "palette: alpha outside [0, 1]");
    for (const auto& [key, value] : j.at("colors").items()) {
      p.colors[std::stoi(key)] = rgb_from_json(value, "category color");
    }
    return p;
  } catch (const json::exception& e) {
    fail(ErrorKind::Configuration, std::string("palette: ") + e.what());
  } catch (const std::invalid_argument&) {
    fail(ErrorKind::Configuration, "palette: color keys must be category ids");
  }
}

json Palette::to_json() const {
  json colors = json::object();
  for (const auto& [id, c] : this->colors) colors[std::to_string(id)] = c;
  return {{"void", void_color}, {"accent", accent}, {"alpha", alpha}, {"colors", colors}};
}

Image8 render_preview(const ComposedLabelMap& map, const Taxonomy& taxonomy,
                      const Palette& palette) {
  const std::size_t cb = map.background_channels(), co = map.foreground_channels();
  if (cb != taxonomy.background_count() || co != taxonomy.foreground_count()) {
    fail(ErrorKind::Shape, "render_preview: map channels do not match taxonomy '" +
                               taxonomy.name() + "'");
  }
  std::vector<Rgb> bg, fg;
  auto color_of = [&](const Category& c) {
    const auto it = palette.colors.find(c.id);
    if (it == palette.colors.end()) {
      fail(ErrorKind::Configuration, "palette has no color for category " + std::to_string(c.id) +
                                         " (" + c.name + ")");
    }
    return it->second;
  };
  for (const Category& c : taxonomy.background()) bg.push_back(color_of(c));
  for (const Category& c : taxonomy.foreground()) fg.push_back(color_of(c));

  const LabelMap& m = map.map();
  Image8 img{m.height(), m.width(), 3, std::vector<std::uint8_t>(m.height() * m.width() * 3)};
  const std::size_t C = m.channels();
  for (std::size_t p = 0; p < m.height() * m.width(); ++p) {
    const std::uint16_t* px = m.counts().data() + p * C;
    Rgb out = palette.void_color;
    for (std::size_t c = 0; c < cb; ++c) {
      if (px[c] > 0) {
        out = bg[c];
        break;
      }
    }
    unsigned total = 0;
    std::size_t top = 0;
    for (std::size_t c = 0; c < co; ++c) {
      if (px[cb + c] > 0 && total == 0) top = c;
      total += px[cb + c];
    }
    if (total >= 2) {
      out = palette.accent;
    } else if (total == 1) {
      for (std::size_t k = 0; k < 3; ++k) {
        out[k] = static_cast<std::uint8_t>(
            std::lround(palette.alpha * fg[top][k] + (1.0 - palette.alpha) * out[k]));
      }
    }
    std::copy(out.begin(), out.end(), img.pixels.begin() + static_cast<std::ptrdiff_t>(p * 3));
  }
  return img;
}

ComposedLabelMap entry_label_map(const BankEntry& entry, const Taxonomy& taxonomy) {
  LabelMap fg(entry.height(), entry.width(), taxonomy.foreground_count());
  for (std::size_t c = 0; c < taxonomy.foreground_count(); ++c) {
    const CategoryBitmap* b = entry.foreground_bitmap(c);
    if (b == nullptr) continue;
    for (const auto& r : b->runs()) {
      for (std::size_t p = r.start; p < r.start + r.length; ++p) fg.counts()[p * fg.channels() + c] = 1;
    }
  }
  return compose_label_map(split_background(entry, taxonomy), fg);
}

// Configuration ---------------------------------------------------------------

ServiceConfig ServiceConfig::from_json(const json& j, const fs::path& base_dir) {
  auto resolve = [&](const std::string& p) {
    fs::path path(p);
    return path.is_absolute() ? path : base_dir / path;
  };
  try {
    ServiceConfig c;
    c.bank_manifest = resolve(j.at("bank_manifest").get<std::string>());
    if (j.contains("taxonomy_path")) c.taxonomy_path = resolve(j["taxonomy_path"].get<std::string>());
    const auto m = j.value("m", static_cast<long long>(c.m));
    const auto workers = j.value("workers", static_cast<long long>(c.workers));
    if (m < 1) fail(ErrorKind::Configuration, "config: m must be >= 1");
    if (workers < 1) fail(ErrorKind::Configuration, "config: workers must be >= 1");
    c.m = static_cast<std::size_t>(m);
    c.workers = static_cast<std::size_t>(workers);
    if (j.contains("listen")) {
      const std::string listen = j["listen"].get<std::string>();
      const auto colon = listen.rfind(':');
      if (colon == std::string::npos) fail(ErrorKind::Configuration, "config: listen must be host:port");
      c.host = listen.substr(0, colon);
      c.port = std::stoi(listen.substr(colon + 1));
    }
    if (j.contains("params_dir")) c.params_dir = resolve(j["params_dir"].get<std::string>());
    if (j.contains("palette")) c.palette_path = resolve(j["palette"].get<std::string>());
    return c;
  } catch (const json::exception& e) {
    fail(ErrorKind::Configuration, std::string("config: ") + e.what());
  } catch (const std::logic_error&) {
    fail(ErrorKind::Configuration, "config: listen port is not a number");
  }
}

ServiceConfig ServiceConfig::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Configuration, "cannot read config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    fail(ErrorKind::Configuration, path.string() + ": " + e.what());
  }
  ServiceConfig c = from_json(j, path.parent_path());
  c.validate();
  return c;
}

void ServiceConfig::validate() const {
  if (m < 1) fail(ErrorKind::Configuration, "config: m must be >= 1");
  if (workers < 1) fail(ErrorKind::Configuration, "config: workers must be >= 1");
  if (port < 0 || port > 65535) fail(ErrorKind::Configuration, "config: port out of range");
  auto require = [](const fs::path& p, const char* what) {
    if (!fs::exists(p)) fail(ErrorKind::Configuration, std::string("config: ") + what + " " + p.string() + " does not exist");
  };
  require(bank_manifest, "bank manifest");
  if (taxonomy_path) require(*taxonomy_path, "taxonomy");
  if (params_dir) require(*params_dir, "parameter directory");
  if (palette_path) require(*palette_path, "palette");
}

// API -------------------------------------------------------------------------

int http_status(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Validation:
    case ErrorKind::Taxonomy:
    case ErrorKind::Parameter:
    case ErrorKind::Shape:
    case ErrorKind::EmptyInstance:
    case ErrorKind::Comparison:
      return 400;
    case ErrorKind::NotFound:
      return 404;
    case ErrorKind::Retrieval:
      return 409;
    default:
      return 500;
  }
}

Api::Api(MemoryBank bank, FusionParams fusion, Palette palette, std::size_t default_m,
         std::size_t workers)
    : bank_(std::move(bank)), fusion_(std::move(fusion)), palette_(std::move(palette)),
      default_m_(default_m), workers_(workers) {
  if (default_m_ == 0 || workers_ == 0) fail(ErrorKind::Configuration, "api: m and workers must be >= 1");
  const std::size_t k = bank_.taxonomy().total_count();
  if (fusion_.channels() != k || fusion_.encoder.in_channels() != k) {
    fail(ErrorKind::Configuration, "api: fusion parameters have " +
                                       std::to_string(fusion_.channels()) + " channels, bank needs " +
                                       std::to_string(k));
  }
  const Taxonomy& t = bank_.taxonomy();
  for (const auto list : {t.foreground(), t.background()}) {
    for (const Category& c : list) {
      if (!palette_.colors.contains(c.id)) {
        fail(ErrorKind::Configuration, "palette has no color for category " + std::to_string(c.id));
      }
    }
  }
}

Api Api::from_config(const ServiceConfig& config) {
  config.validate();
  MemoryBank bank = MemoryBank::ingest(config.bank_manifest, config.workers);
  if (config.taxonomy_path && !(Taxonomy::load(*config.taxonomy_path) == bank.taxonomy())) {
    fail(ErrorKind::Configuration, "config: taxonomy differs from the bank's taxonomy");
  }
  const std::size_t k = bank.taxonomy().total_count();
  FusionParams fusion = FusionParams::init(k, 0);
  if (config.params_dir) {
    ParamBundle b = load_params(*config.params_dir);
    if (!b.fusion) fail(ErrorKind::Configuration, "config: parameter directory has no fusion weights");
    fusion = std::move(*b.fusion);
  }
  Palette palette = Palette::defaults(bank.taxonomy());
  if (config.palette_path) {
    std::ifstream in(*config.palette_path);
    try {
      palette = Palette::from_json(json::parse(in));
    } catch (const json::exception& e) {
      fail(ErrorKind::Configuration, std::string("palette: ") + e.what());
    }
  }
  return Api(std::move(bank), std::move(fusion), std::move(palette), config.m, config.workers);
}

namespace {

ApiResponse json_response(int status, const json& body) { return {status, body.dump(2) + "\n", "application/json", {}}; }

ApiResponse error_response(const Error& e, json extra = json::object()) {
  extra["error"] = error_code(e.kind());
  extra["message"] = e.what();
  return json_response(http_status(e.kind()), extra);
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

struct ParsedRequest {
  json body;
  SalientLayout layout;
};

/// Parses {"layout": ..., ...}; malformed layouts come back as a 400 carrying
/// the violation list.
std::variant<ParsedRequest, ApiResponse> parse_layout_request(std::string_view text,
                                                              const Taxonomy& taxonomy) {
  ParsedRequest r;
  try {
    r.body = json::parse(text);
  } catch (const json::exception& e) {
    return error_response(Error(ErrorKind::Validation, std::string("malformed JSON: ") + e.what()),
                          {{"violations", json::array()}});
  }
  if (!r.body.is_object() || !r.body.contains("layout")) {
    return error_response(Error(ErrorKind::Validation, "request needs a 'layout' object"),
                          {{"violations", json::array()}});
  }
  try {
    r.layout = layout_from_json(r.body["layout"], taxonomy);
  } catch (const Error& e) {
    std::vector<Violation> v;
    if (e.kind() == ErrorKind::Taxonomy) v.push_back({Violation::Kind::UnknownCategory, std::nullopt, e.what()});
    return error_response(Error(ErrorKind::Validation, e.what()), {{"violations", violations_to_json(v)}});
  }
  const auto violations = validate_layout(r.layout, taxonomy);
  if (!violations.empty()) {
    return error_response(Error(ErrorKind::Validation, "layout has " + std::to_string(violations.size()) + " violation(s)"),
                          {{"violations", violations_to_json(violations)}});
  }
  return r;
}

std::optional<std::size_t> requested_m(const json& body, std::size_t fallback) {
  if (!body.contains("m")) return fallback;
  const json& m = body["m"];
  if (!m.is_number_integer() || m.get<long long>() < 1) return std::nullopt;
  return m.get<std::size_t>();
}

std::string png_base64(const Image8& img) {
  const auto png = encode_png(img);
  return httplib::detail::base64_encode(std::string(png.begin(), png.end()));
}

std::string timing_header(const RetrievalResult& r) {
  return "prepare_ms=" + std::to_string(r.timing.prepare_seconds * 1e3) +
         ";scan_ms=" + std::to_string(r.timing.scan_seconds * 1e3) +
         ";merge_ms=" + std::to_string(r.timing.merge_seconds * 1e3) +
         ";scored=" + std::to_string(r.scored) + ";pruned=" + std::to_string(r.pruned);
}

}  // namespace

ApiResponse Api::retrieve(std::string_view text) const {
  auto parsed = parse_layout_request(text, bank_.taxonomy());
  if (auto* err = std::get_if<ApiResponse>(&parsed)) return *err;
  const auto& req = std::get<ParsedRequest>(parsed);
  const auto m = requested_m(req.body, default_m_);
  if (!m) return error_response(Error(ErrorKind::Parameter, "'m' must be an integer >= 1"));
  try {
    const RetrievalResult r = retrieve_top_m(bank_, req.layout, *m, workers_);
    json results = json::array();
    for (const RankedEntry& e : r.ranked) {
      const BankEntry& entry = bank_.entries()[e.index];
      results.push_back({{"id", e.id},
                         {"score", e.score.decimal()},
                         {"score_fraction", e.score.fraction()},
                         {"thumbnail_ref", entry.image_ref().value_or("/preview/" + e.id)}});
    }
    ApiResponse resp = json_response(200, {{"bank_checksum", hex64(bank_.checksum())},
                                           {"m", *m},
                                           {"query_fingerprint", hex64(r.query_fingerprint)},
                                           {"results", results}});
    resp.headers["X-Bachkit-Timing"] = timing_header(r);
    return resp;
  } catch (const Error& e) {
    return error_response(e);
  }
}

ApiResponse Api::fuse_preview(std::string_view text) const {
  auto parsed = parse_layout_request(text, bank_.taxonomy());
  if (auto* err = std::get_if<ApiResponse>(&parsed)) return *err;
  const auto& req = std::get<ParsedRequest>(parsed);
  try {
    const Taxonomy& tax = bank_.taxonomy();
    std::vector<std::size_t> selected;
    json scores = json::array();
    if (req.body.contains("entry_ids") && !req.body["entry_ids"].is_null()) {
      const json& ids = req.body["entry_ids"];
      if (!ids.is_array() || ids.empty()) {
        return error_response(Error(ErrorKind::Validation, "'entry_ids' must be a non-empty array"));
      }
      for (const json& id : ids) {
        if (!id.is_string()) return error_response(Error(ErrorKind::Validation, "entry ids must be strings"));
        const auto idx = bank_.find(id.get<std::string>());
        if (!idx) return error_response(Error(ErrorKind::NotFound, "unknown entry id '" + id.get<std::string>() + "'"));
        selected.push_back(*idx);
      }
    } else {
      const auto m = requested_m(req.body, default_m_);
      if (!m) return error_response(Error(ErrorKind::Parameter, "'m' must be an integer >= 1"));
      for (const RankedEntry& e : retrieve_top_m(bank_, req.layout, *m, workers_).ranked) {
        selected.push_back(e.index);
      }
    }
    if (bank_.empty()) fail(ErrorKind::Retrieval, "memory bank is empty");

    const LabelMap fg = rasterize_layout(req.layout, tax);
    const PreparedQuery q = prepare_query(req.layout, tax);
    std::vector<ComposedLabelMap> composed;
    json previews = json::array();
    for (std::size_t idx : selected) {
      const BankEntry& e = bank_.entries()[idx];
      composed.push_back(compose_label_map(split_background(e, tax), fg));
      const Score s = iou_r(q, e);
      previews.push_back({{"id", e.id()},
                          {"score", s.decimal()},
                          {"score_fraction", s.fraction()},
                          {"preview_png_base64", png_base64(render_preview(composed.back(), tax, palette_))}});
    }
    const Tensor fused = fuse_background(pad_query(fg, tax.background_count()), composed, fusion_);
    const Extents& ex = fused.extents();
    json channels = json::array();
    const std::size_t pixels = ex.height() * ex.width();
    for (std::size_t c = 0; c < ex.channels(); ++c) {
      double lo = fused[c], hi = fused[c], sum = 0.0;
      for (std::size_t p = 0; p < pixels; ++p) {
        const double v = fused[p * ex.channels() + c];
        lo = std::min(lo, v);
        hi = std::max(hi, v);
        sum += v;
      }
      channels.push_back({{"channel", c}, {"min", lo}, {"mean", sum / static_cast<double>(pixels)}, {"max", hi}});
    }
    return json_response(200, {{"bank_checksum", hex64(bank_.checksum())},
                               {"m", selected.size()},
                               {"previews", previews},
                               {"fused", {{"extents", {ex.height(), ex.width(), ex.channels()}},
                                          {"channels", channels}}}});
  } catch (const Error& e) {
    return error_response(e);
  }
}

ApiResponse Api::validate_layout(std::string_view text) const {
  json body;
  try {
    body = json::parse(text);
  } catch (const json::exception& e) {
    return error_response(Error(ErrorKind::Validation, std::string("malformed JSON: ") + e.what()),
                          {{"violations", json::array()}});
  }
  const json& layout = body.is_object() && body.contains("layout") ? body["layout"] : body;
  try {
    const auto v = bachkit::validate_layout(layout_from_json(layout, bank_.taxonomy()), bank_.taxonomy());
    return json_response(200, {{"valid", v.empty()}, {"violations", violations_to_json(v)}});
  } catch (const Error& e) {
    std::vector<Violation> v;
    if (e.kind() == ErrorKind::Taxonomy) v.push_back({Violation::Kind::UnknownCategory, std::nullopt, e.what()});
    return error_response(Error(ErrorKind::Validation, e.what()), {{"violations", violations_to_json(v)}});
  }
}

ApiResponse Api::bank_stats() const { return json_response(200, to_json(bachkit::bank_stats(bank_))); }

ApiResponse Api::taxonomy() const { return json_response(200, taxonomy_to_json(bank_.taxonomy())); }

ApiResponse Api::preview(std::string_view id) const {
  const auto idx = bank_.find(id);
  if (!idx) return error_response(Error(ErrorKind::NotFound, "unknown entry id '" + std::string(id) + "'"));
  try {
    const Image8 img = render_preview(entry_label_map(bank_.entries()[*idx], bank_.taxonomy()),
                                      bank_.taxonomy(), palette_);
    const auto png = encode_png(img);
    return {200, std::string(png.begin(), png.end()), "image/png", {}};
  } catch (const Error& e) {
    return error_response(e);
  }
}

struct HttpServer::Impl {
  httplib::Server server;
};

HttpServer::HttpServer(const Api& api) : impl_(std::make_unique<Impl>()) {
  auto send = [](httplib::Response& res, const ApiResponse& r) {
    res.status = r.status;
    for (const auto& [k, v] : r.headers) res.set_header(k, v);
    res.set_content(r.body, r.content_type);
  };
  httplib::Server& s = impl_->server;
  s.Post("/retrieve", [&api, send](const httplib::Request& req, httplib::Response& res) {
    send(res, api.retrieve(req.body));
  });
  s.Post("/fuse-preview", [&api, send](const httplib::Request& req, httplib::Response& res) {
    send(res, api.fuse_preview(req.body));
  });
  s.Post("/layout/validate", [&api, send](const httplib::Request& req, httplib::Response& res) {
    send(res, api.validate_layout(req.body));
  });
  s.Get("/bank/stats", [&api, send](const httplib::Request&, httplib::Response& res) {
    send(res, api.bank_stats());
  });
  s.Get("/taxonomy", [&api, send](const httplib::Request&, httplib::Response& res) {
    send(res, api.taxonomy());
  });
  s.Get(R"(/preview/([^/]+))", [&api, send](const httplib::Request& req, httplib::Response& res) {
    send(res, api.preview(req.matches[1].str()));
  });
}

HttpServer::~HttpServer() = default;

int HttpServer::bind(const std::string& host, int port) {
  const int bound = port == 0 ? impl_->server.bind_to_any_port(host)
                              : (impl_->server.bind_to_port(host, port) ? port : -1);
  if (bound < 0) fail(ErrorKind::Configuration, "cannot listen on " + host + ":" + std::to_string(port));
  return bound;
}

void HttpServer::run() { impl_->server.listen_after_bind(); }

void HttpServer::stop() { impl_->server.stop(); }

}  // namespace bachkit
