#pragma once

// HTTP clients for an external embedding service and an OpenAI-style chat
// completion endpoint. Plain http only.

#include <cstdlib>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "chatcam/anchor.hpp"
#include "chatcam/planner.hpp"
#include "httplib.h"

namespace chatcam {

struct Url {
  std::string origin;  // scheme://host[:port]
  std::string path;    // always starts with '/'
};

namespace detail {

inline Url split_url(const std::string& url) {
  const auto scheme = url.find("://");
  if (scheme == std::string::npos) throw Error(ErrorCode::BadRequest, "URL needs a scheme: " + url);
  const auto slash = url.find('/', scheme + 3);
  if (slash == std::string::npos) return {url, "/"};
  return {url.substr(0, slash), url.substr(slash)};
}

inline std::optional<std::string> env(const char* name) {
  const char* v = std::getenv(name);
  if (!v || !*v) return std::nullopt;
  return std::string(v);
}

}  // namespace detail

/// POST {base}/embed {"kind": "text", "text": ...} or
/// {"kind": "image", "image": {"res", "data"}} -> {"vector": [...]}.
class RemoteEmbeddingProvider : public EmbeddingProvider {
 public:
  RemoteEmbeddingProvider(std::string base_url, std::size_t dim, std::optional<std::string> api_key = std::nullopt,
                          double timeout_s = 30.0)
      : ep_(detail::split_url(base_url)), dim_(dim), key_(std::move(api_key)), timeout_s_(timeout_s) {
    if (ep_.path.back() != '/') ep_.path += '/';
    ep_.path += "embed";
  }

  /// CHATCAM_EMBED_URL, CHATCAM_EMBED_KEY; nullopt when no URL is set.
  static std::optional<RemoteEmbeddingProvider> from_env(std::size_t dim) {
    auto url = detail::env("CHATCAM_EMBED_URL");
    if (!url) return std::nullopt;
    return RemoteEmbeddingProvider(*url, dim, detail::env("CHATCAM_EMBED_KEY"));
  }

  std::size_t dim() const override { return dim_; }

  Embedding embed_text(std::string_view text) const override {
    return call(json{{"kind", "text"}, {"text", detail::normalize_prompt(text)}});
  }

  Embedding embed_image(const Raster& image) const override {
    return call(json{{"kind", "image"}, {"image", {{"res", image.res}, {"data", std::vector<double>(image.data.begin(), image.data.end())}}}});
  }

 private:
  Url ep_;
  std::size_t dim_;
  std::optional<std::string> key_;
  double timeout_s_;

  Embedding call(const json& body) const {
    const auto fail = [](const std::string& m) { return Error(ErrorCode::RemoteEmbeddingUnavailable, m); };
    httplib::Client cli(ep_.origin);
    cli.set_connection_timeout(std::chrono::duration<double>(timeout_s_));
    cli.set_read_timeout(std::chrono::duration<double>(timeout_s_));
    httplib::Headers h;
    if (key_) h.emplace("Authorization", "Bearer " + *key_);
    auto res = cli.Post(ep_.path, h, body.dump(), "application/json");
    if (!res) throw fail("embedding service unreachable: " + httplib::to_string(res.error()));
    if (res->status != 200) throw fail("embedding service returned HTTP " + std::to_string(res->status));
    std::vector<double> v;
    try {
      v = json::parse(res->body).at("vector").get<std::vector<double>>();
    } catch (const json::exception& e) {
      throw fail(std::string("bad embedding response: ") + e.what());
    }
    if (v.size() != dim_) {
      throw fail("embedding service returned " + std::to_string(v.size()) + " values, expected " + std::to_string(dim_));
    }
    return detail::unit(Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())));
  }
};

/// POST {base}/chat/completions with {"model", "messages", "temperature": 0};
/// the reply is choices[0].message.content.
class HttpChatClient : public ChatClient {
 public:
  HttpChatClient(std::string base_url, std::string model, std::optional<std::string> api_key = std::nullopt,
                 double timeout_s = 60.0)
      : ep_(detail::split_url(base_url)), model_(std::move(model)), key_(std::move(api_key)), timeout_s_(timeout_s) {
    if (ep_.path.back() != '/') ep_.path += '/';
    ep_.path += "chat/completions";
  }

  /// CHATCAM_PLANNER_URL, CHATCAM_PLANNER_MODEL, CHATCAM_PLANNER_KEY.
  static std::optional<HttpChatClient> from_env() {
    auto url = detail::env("CHATCAM_PLANNER_URL");
    if (!url) return std::nullopt;
    return HttpChatClient(*url, detail::env("CHATCAM_PLANNER_MODEL").value_or("gpt-4"), detail::env("CHATCAM_PLANNER_KEY"));
  }

  std::string complete(const std::vector<ChatMessage>& messages) const override {
    const auto fail = [](const std::string& m) { return Error(ErrorCode::RemotePlannerUnavailable, m); };
    json msgs = json::array();
    for (const auto& m : messages) msgs.push_back({{"role", m.role}, {"content", m.content}});
    httplib::Client cli(ep_.origin);
    cli.set_connection_timeout(std::chrono::duration<double>(timeout_s_));
    cli.set_read_timeout(std::chrono::duration<double>(timeout_s_));
    httplib::Headers h;
    if (key_) h.emplace("Authorization", "Bearer " + *key_);
    auto res = cli.Post(ep_.path, h, json{{"model", model_}, {"messages", msgs}, {"temperature", 0}}.dump(),
                        "application/json");
    if (!res) throw fail("chat endpoint unreachable: " + httplib::to_string(res.error()));
    if (res->status != 200) throw fail("chat endpoint returned HTTP " + std::to_string(res->status));
    try {
      return json::parse(res->body).at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const json::exception& e) {
      throw fail(std::string("bad chat response: ") + e.what());
    }
  }

 private:
  Url ep_;
  std::string model_;
  std::optional<std::string> key_;
  double timeout_s_;
};

}  // namespace chatcam
