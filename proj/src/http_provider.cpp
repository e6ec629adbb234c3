#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include <cstdlib>

#include <fmt/format.h>

#include "cxgame/provider.hpp"

namespace cxgame {

std::optional<HttpAdapter> parse_http_adapter(std::string_view name) {
  if (name == "openai") return HttpAdapter::openai;
  if (name == "anthropic") return HttpAdapter::anthropic;
  return std::nullopt;
}

json build_http_body(const HttpEndpoint& endpoint, const CompletionRequest& request) {
  if (endpoint.adapter == HttpAdapter::anthropic) {
    json body{{"model", endpoint.remote_model},
              {"max_tokens", request.max_tokens},
              {"temperature", request.temperature},
              {"messages", json::array({{{"role", "user"}, {"content", request.user_text}}})}};
    if (!request.system_text.empty()) body["system"] = request.system_text;
    return body;
  }
  json messages = json::array();
  if (!request.system_text.empty()) {
    messages.push_back({{"role", "system"}, {"content", request.system_text}});
  }
  messages.push_back({{"role", "user"}, {"content", request.user_text}});
  return json{{"model", endpoint.remote_model},
              {"messages", messages},
              {"max_tokens", request.max_tokens},
              {"temperature", request.temperature}};
}

std::string parse_http_response(HttpAdapter adapter, const json& body) {
  try {
    if (adapter == HttpAdapter::anthropic) {
      std::string text;
      for (const auto& block : body.at("content")) {
        if (block.value("type", "text") == "text") text += block.at("text").get<std::string>();
      }
      return text;
    }
    const auto& content = body.at("choices").at(0).at("message").at("content");
    if (content.is_null()) {
      throw Error(ErrorKind::ProviderRefusal, "upstream returned no content");
    }
    return content.get<std::string>();
  } catch (const json::exception& e) {
    throw Error(ErrorKind::TransportError, fmt::format("malformed upstream body: {}", e.what()));
  }
}

HttpBackend::HttpBackend(HttpEndpoint endpoint) : endpoint_(std::move(endpoint)) {}

std::string HttpBackend::generate(const CompletionRequest& request) {
  const auto scheme_end = endpoint_.url.find("://");
  if (scheme_end == std::string::npos) {
    throw Error(ErrorKind::ConfigError, "endpoint must be an absolute URL: " + endpoint_.url);
  }
  const auto path_start = endpoint_.url.find('/', scheme_end + 3);
  const std::string origin = endpoint_.url.substr(0, path_start);
  const std::string path =
      path_start == std::string::npos ? "/" : endpoint_.url.substr(path_start);

  std::string key;
  if (!endpoint_.api_key_env.empty()) {
    const char* value = std::getenv(endpoint_.api_key_env.c_str());
    if (!value || !*value) {
      throw Error(ErrorKind::ProviderRefusal,
                  fmt::format("credential variable {} is not set", endpoint_.api_key_env));
    }
    key = value;
  }

  httplib::Client client(origin);
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(endpoint_.timeout).count();
  client.set_connection_timeout(std::max<long long>(1, std::min<long long>(secs, 30)), 0);
  client.set_read_timeout(std::max<long long>(1, secs), 0);

  httplib::Headers headers;
  if (endpoint_.adapter == HttpAdapter::anthropic) {
    if (!key.empty()) headers.emplace("x-api-key", key);
    headers.emplace("anthropic-version", "2023-06-01");
  } else if (!key.empty()) {
    headers.emplace("Authorization", "Bearer " + key);
  }

  const auto body = build_http_body(endpoint_, request).dump();
  auto res = client.Post(path, headers, body, "application/json");
  if (!res) {
    throw Error(ErrorKind::TransportError,
                fmt::format("{}: {}", origin, httplib::to_string(res.error())));
  }
  if (res->status == 429 || res->status >= 500) {
    throw Error(ErrorKind::TransportError, fmt::format("HTTP {} from {}", res->status, origin));
  }
  if (res->status != 200) {
    throw Error(ErrorKind::ProviderRefusal,
                fmt::format("HTTP {} from {}: {}", res->status, origin, res->body.substr(0, 300)));
  }
  json parsed;
  try {
    parsed = json::parse(res->body);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::TransportError, fmt::format("non-JSON body from {}", origin));
  }
  return parse_http_response(endpoint_.adapter, parsed);
}

}  // namespace cxgame
