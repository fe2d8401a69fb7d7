#pragma once

// /v1 HTTP surface. Request handling is a pure function of the request and
// the immutable service state, so it is exercised without sockets; `mount`
// binds it to an httplib server.
//
// Trajectory ids are the hex-encoded canonical generate request, so export
// regenerates the same trajectory without any server-side storage.

#include <algorithm>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "chatcam/anchor.hpp"
#include "chatcam/pipeline.hpp"
#include "chatcam/planner.hpp"
#include "chatcam/remote.hpp"
#include "chatcam/trajectory_json.hpp"
#include "httplib.h"

namespace chatcam {

inline constexpr const char* kServiceVersion = "1";

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::filesystem::path model_dir = "models";
  std::filesystem::path scene_dir = "scenes";
  std::uint64_t default_seed = 0;
  std::size_t embedding_dim = 64;  // synthetic provider, or expected remote dimension
  std::optional<std::string> embed_url, embed_key;
  std::optional<std::string> planner_url, planner_model, planner_key;
};

struct HttpRequest {
  std::string method;
  std::string path;
  std::string body;
  std::map<std::string, std::string> query;
};

struct HttpResponse {
  int status = 200;
  std::string body;
  std::string content_type = "application/json";
};

inline int http_status(ErrorCode c) {
  switch (c) {
    case ErrorCode::UnparsableQuery:
    case ErrorCode::UnknownToken:
    case ErrorCode::EmptyPrompt:
    case ErrorCode::EmptyScene:
    case ErrorCode::ContextOverflow:
    case ErrorCode::PlanValidationFailed:
    case ErrorCode::InfeasibleComposition:
    case ErrorCode::NotDifferentiable:
    case ErrorCode::BadRequest: return 400;
    case ErrorCode::SceneNotFound:
    case ErrorCode::TrajectoryNotFound: return 404;
    case ErrorCode::ModelsNotLoaded:
    case ErrorCode::RemotePlannerUnavailable:
    case ErrorCode::RemoteEmbeddingUnavailable: return 503;
    default: return 500;
  }
}

inline HttpResponse error_response(int status, std::string_view code, const std::string& message,
                                   std::optional<std::size_t> step = std::nullopt) {
  json e{{"code", code}, {"message", message}};
  if (step) e["step"] = *step;
  return HttpResponse{status, json{{"error", e}}.dump()};
}

inline HttpResponse error_response(const Error& e) {
  return error_response(http_status(e.code()), to_string(e.code()), e.detail(), e.step());
}

namespace detail {

inline std::string hex_encode(std::string_view s) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string out;
  out.reserve(s.size() * 2);
  for (unsigned char c : s) {
    out.push_back(digits[c >> 4]);
    out.push_back(digits[c & 15]);
  }
  return out;
}

inline std::optional<std::string> hex_decode(std::string_view s) {
  if (s.size() % 2) return std::nullopt;
  const auto val = [](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    return -1;
  };
  std::string out;
  for (std::size_t i = 0; i < s.size(); i += 2) {
    const int hi = val(s[i]), lo = val(s[i + 1]);
    if (hi < 0 || lo < 0) return std::nullopt;
    out.push_back(static_cast<char>(hi * 16 + lo));
  }
  return out;
}

inline json parse_body(const std::string& body) {
  json j;
  try {
    j = json::parse(body);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::BadRequest, std::string("request body is not JSON: ") + e.what());
  }
  if (!j.is_object()) throw Error(ErrorCode::BadRequest, "request body must be a JSON object");
  return j;
}

template <typename T>
T field(const json& j, const char* name, const T& fallback) {
  if (!j.contains(name) || j[name].is_null()) return fallback;
  try {
    return j[name].get<T>();
  } catch (const json::exception&) {
    throw Error(ErrorCode::BadRequest, std::string("field '") + name + "' has the wrong type");
  }
}

inline std::string required_string(const json& j, const char* name) {
  if (!j.contains(name) || !j[name].is_string()) throw Error(ErrorCode::BadRequest, std::string("field '") + name + "' must be a string");
  return j[name].get<std::string>();
}

}  // namespace detail

/// Reads every *.json manifest in `dir`, sorted by scene id. Unreadable or
/// invalid manifests, duplicate ids and embedding dimensions other than
/// `dim` are skipped with a warning.
inline std::vector<Scene> load_scene_dir(const std::filesystem::path& dir, std::size_t dim,
                                         std::vector<std::string>& warnings) {
  std::vector<Scene> out;
  if (!std::filesystem::is_directory(dir)) {
    warnings.push_back("scene directory " + dir.string() + " does not exist");
    return out;
  }
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    try {
      Scene s = load_scene(f);
      if (s.embedding_dim != dim) {
        warnings.push_back("skipping scene " + f.string() + ": embedding_dim " + std::to_string(s.embedding_dim) +
                           " does not match the provider's " + std::to_string(dim));
        continue;
      }
      if (std::any_of(out.begin(), out.end(), [&](const Scene& o) { return o.id == s.id; })) {
        warnings.push_back("skipping scene " + f.string() + ": duplicate id '" + s.id + "'");
        continue;
      }
      out.push_back(std::move(s));
    } catch (const Error& e) {
      warnings.push_back("skipping scene " + f.string() + ": " + e.what());
    }
  }
  std::sort(out.begin(), out.end(), [](const Scene& a, const Scene& b) { return a.id < b.id; });
  return out;
}

class Service {
 public:
  Service(std::optional<Models> models, std::vector<Scene> scenes, std::shared_ptr<const EmbeddingProvider> provider,
          std::shared_ptr<const ChatClient> planner = nullptr, std::uint64_t default_seed = 0)
      : models_(std::move(models)),
        scenes_(std::move(scenes)),
        provider_(std::move(provider)),
        planner_(std::move(planner)),
        default_seed_(default_seed) {
    std::sort(scenes_.begin(), scenes_.end(), [](const Scene& a, const Scene& b) { return a.id < b.id; });
  }

  /// Missing checkpoints leave the service up without models (generate
  /// answers 503); incompatible ones are a startup error.
  static Service from_config(const ServiceConfig& cfg, std::vector<std::string>& warnings) {
    std::optional<Models> models;
    try {
      models = load_models(cfg.model_dir);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::ModelsNotLoaded) throw;
      warnings.push_back(e.detail());
    }
    std::shared_ptr<const EmbeddingProvider> provider;
    if (cfg.embed_url) {
      provider = std::make_shared<RemoteEmbeddingProvider>(*cfg.embed_url, cfg.embedding_dim, cfg.embed_key);
    } else {
      provider = std::make_shared<SyntheticProvider>(cfg.embedding_dim);
    }
    std::shared_ptr<const ChatClient> planner;
    if (cfg.planner_url)
      planner = std::make_shared<HttpChatClient>(*cfg.planner_url, cfg.planner_model.value_or("gpt-4"), cfg.planner_key);
    return Service(std::move(models), load_scene_dir(cfg.scene_dir, cfg.embedding_dim, warnings), std::move(provider),
                   std::move(planner), cfg.default_seed);
  }

  bool models_loaded() const { return models_.has_value(); }
  const std::vector<Scene>& scenes() const { return scenes_; }

  HttpResponse handle(const HttpRequest& req) const {
    try {
      return route(req);
    } catch (const Error& e) {
      return error_response(e);
    } catch (const std::exception&) {
      return error_response(500, "InternalError", "internal error");
    }
  }

  void mount(httplib::Server& srv) const {
    const auto h = [this](const httplib::Request& req, httplib::Response& res) {
      HttpRequest r{req.method, req.path, req.body, {}};
      for (const auto& [k, v] : req.params) r.query.emplace(k, v);
      const HttpResponse out = handle(r);
      res.status = out.status;
      res.set_content(out.body, out.content_type);
    };
    srv.Get(".*", h);
    srv.Post(".*", h);
  }

  /// The canonical form of a generate request: every field explicit.
  json canonical_generate(const json& body) const {
    json sampler = detail::field<json>(body, "sampler", json::object());
    if (!sampler.is_object()) throw Error(ErrorCode::BadRequest, "field 'sampler' must be an object");
    const SamplerParams d;
    SamplerParams sp;
    sp.mode = sampler_mode_from(detail::field<std::string>(sampler, "mode", std::string(sampler_mode_name(d.mode))));
    sp.temperature = detail::field<double>(sampler, "temperature", d.temperature);
    sp.top_k = detail::field<int>(sampler, "top_k", d.top_k);
    sp.top_p = detail::field<double>(sampler, "top_p", d.top_p);
    sp.check();
    return json{{"prompt", detail::required_string(body, "prompt")},
                {"scene_id", body.contains("scene_id") ? body["scene_id"] : json(nullptr)},
                {"seed", detail::field<std::uint64_t>(body, "seed", default_seed_)},
                {"sampler",
                 {{"mode", sampler_mode_name(sp.mode)}, {"temperature", sp.temperature}, {"top_k", sp.top_k}, {"top_p", sp.top_p}}},
                {"refine", detail::field<bool>(body, "refine", true)}};
  }

 private:
  std::optional<Models> models_;
  std::vector<Scene> scenes_;
  std::shared_ptr<const EmbeddingProvider> provider_;
  std::shared_ptr<const ChatClient> planner_;
  std::uint64_t default_seed_;

  const Scene& scene(const json& id) const {
    if (!id.is_string()) throw Error(ErrorCode::BadRequest, "scene_id must be a string");
    const auto s = id.get<std::string>();
    for (const auto& sc : scenes_)
      if (sc.id == s) return sc;
    throw Error(ErrorCode::SceneNotFound, "no scene with id '" + s + "'");
  }

  HttpResponse route(const HttpRequest& req) const {
    const std::string& p = req.path;
    if (req.method == "GET" && p == "/v1/health") return health();
    if (req.method == "GET" && p == "/v1/scenes") return list_scenes();
    if (req.method == "POST" && p == "/v1/generate") return generate(detail::parse_body(req.body));
    if (req.method == "POST" && p == "/v1/plan") return plan(detail::parse_body(req.body));
    if (req.method == "POST" && p == "/v1/anchor") return anchor(detail::parse_body(req.body));
    const std::string prefix = "/v1/trajectory/", suffix = "/export";
    if (req.method == "GET" && p.size() > prefix.size() + suffix.size() && p.rfind(prefix, 0) == 0 &&
        p.compare(p.size() - suffix.size(), suffix.size(), suffix) == 0) {
      auto it = req.query.find("format");
      return export_path(p.substr(prefix.size(), p.size() - prefix.size() - suffix.size()),
                         it == req.query.end() ? "camera_path" : it->second);
    }
    return error_response(404, "NotFound", req.method + " " + p + " is not an endpoint");
  }

  HttpResponse health() const {
    return {200, json{{"status", "ok"}, {"version", kServiceVersion}, {"models_loaded", models_loaded()},
                      {"scenes", scenes_.size()}}
                     .dump()};
  }

  HttpResponse list_scenes() const {
    json out = json::array();
    for (const auto& s : scenes_) {
      out.push_back({{"scene_id", s.id},
                     {"image_count", s.images.size()},
                     {"bounds", {{"min", {s.bounds.min.x(), s.bounds.min.y(), s.bounds.min.z()}},
                                 {"max", {s.bounds.max.x(), s.bounds.max.y(), s.bounds.max.z()}}}}});
    }
    return {200, out.dump()};
  }

  HttpResponse plan(const json& body) const {
    TraceLog trace;
    trace.observation = detail::required_string(body, "prompt");
    const Plan pl = make_plan(trace.observation, planner_.get(), &trace);
    return {200, json{{"plan", plan_to_json(pl)}, {"trace", trace.to_json()}}.dump()};
  }

  HttpResponse anchor(const json& body) const {
    const std::string prompt = detail::required_string(body, "prompt");
    if (!body.contains("scene_id")) throw Error(ErrorCode::BadRequest, "field 'scene_id' is required");
    const Scene& sc = scene(body["scene_id"]);
    const AnchorResult r = determine_anchor(sc, *provider_, prompt, detail::field<bool>(body, "refine", true));
    json out = anchor_result_json(r);
    out["scene_id"] = sc.id;
    return {200, out.dump()};
  }

  PipelineResult run(const json& canon) const {
    const Scene* sc = canon["scene_id"].is_null() ? nullptr : &scene(canon["scene_id"]);
    const std::string prompt = canon["prompt"].get<std::string>();
    if (!models_) {
      make_plan(prompt, planner_.get());  // user errors take precedence
      throw Error(ErrorCode::ModelsNotLoaded, "no trained models are loaded");
    }
    PipelineOptions opts;
    opts.seed = canon["seed"].get<std::uint64_t>();
    opts.sampler.mode = sampler_mode_from(canon["sampler"]["mode"].get<std::string>());
    opts.sampler.temperature = canon["sampler"]["temperature"].get<double>();
    opts.sampler.top_k = canon["sampler"]["top_k"].get<int>();
    opts.sampler.top_p = canon["sampler"]["top_p"].get<double>();
    opts.refine = canon["refine"].get<bool>();
    opts.planner = planner_.get();
    return run_pipeline(prompt, sc, *models_, provider_.get(), opts);
  }

  HttpResponse generate(const json& body) const {
    const json canon = canonical_generate(body);
    const PipelineResult r = run(canon);
    return {200, json{{"id", detail::hex_encode(canon.dump())},
                      {"seed", canon["seed"]},
                      {"trajectory", trajectory_to_json(r.trajectory)},
                      {"plan", plan_to_json(r.plan)},
                      {"trace", r.trace.to_json()},
                      {"warnings", r.warnings}}
                     .dump()};
  }

  HttpResponse export_path(const std::string& id, const std::string& format) const {
    if (format != "camera_path" && format != "trajectory")
      throw Error(ErrorCode::BadRequest, "unknown export format '" + format + "'");
    const auto text = detail::hex_decode(id);
    json canon;
    try {
      if (!text) throw std::invalid_argument("not hex");
      canon = canonical_generate(json::parse(*text));
      if (canon.dump() != *text) throw std::invalid_argument("not canonical");
    } catch (const std::exception&) {
      throw Error(ErrorCode::TrajectoryNotFound, "unknown trajectory id");
    }
    const PipelineResult r = run(canon);
    return {200, (format == "camera_path" ? camera_path_json(r.trajectory) : trajectory_to_json(r.trajectory)).dump()};
  }
};

}  // namespace chatcam
