#include "forge/client.hpp"

#include <cstdlib>

#include <httplib.h>

#include "forge/error.hpp"
#include "forge/util/io.hpp"

namespace forge {

namespace {

// Splits "http://host:port/path" into ("http://host:port", "/path").
std::pair<std::string, std::string> split_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw Error(ErrorCode::InvalidArgument, "url lacks a scheme: " + url);
  const auto path_begin = url.find('/', scheme_end + 3);
  if (path_begin == std::string::npos) return {url, "/"};
  return {url.substr(0, path_begin), url.substr(path_begin)};
}

std::string env_or(const char* name, std::string fallback) {
  const char* v = std::getenv(name);
  return v && *v ? std::string(v) : fallback;
}

}  // namespace

HttpModelClient::HttpModelClient(std::string url, std::string model, std::string api_key,
                                 std::chrono::milliseconds timeout)
    : model_(std::move(model)), api_key_(std::move(api_key)), timeout_(timeout) {
  std::tie(scheme_host_, path_) = split_url(url);
}

std::unique_ptr<HttpModelClient> HttpModelClient::from_env() {
  const std::string url = env_or("FORGE_MODEL_URL", "");
  if (url.empty()) throw Error(ErrorCode::InvalidArgument, "FORGE_MODEL_URL is not set");
  return std::make_unique<HttpModelClient>(url, env_or("FORGE_MODEL_NAME", "default"), env_or("FORGE_MODEL_KEY", ""));
}

GenerationResponse HttpModelClient::generate(const GenerationRequest& request) {
  httplib::Client cli(scheme_host_);
  cli.set_connection_timeout(timeout_);
  cli.set_read_timeout(timeout_);
  httplib::Headers headers;
  if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);

  const io::json body{{"model", request.model.empty() ? model_ : request.model},
                      {"prompt", request.prompt},
                      {"max_tokens", request.max_tokens},
                      {"temperature", request.temperature},
                      {"seed", request.seed}};
  const auto start = std::chrono::steady_clock::now();
  auto res = cli.Post(path_, headers, body.dump(), "application/json");
  const auto elapsed = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  if (!res) throw Error(ErrorCode::TransportFailure, "request failed: " + httplib::to_string(res.error()));
  if (res->status != 200) throw Error(ErrorCode::TransportFailure, "HTTP status " + std::to_string(res->status));
  try {
    const auto reply = io::json::parse(res->body);
    return {reply.at("text").get<std::string>(), elapsed};
  } catch (const io::json::exception& e) {
    throw Error(ErrorCode::TransportFailure, std::string("malformed reply: ") + e.what());
  }
}

ScriptedClient::ScriptedClient(std::map<std::string, std::string> responses, std::string name, std::string fallback)
    : responses_(std::move(responses)), name_(std::move(name)), fallback_(std::move(fallback)) {}

ScriptedClient ScriptedClient::from_json_file(const std::string& path, std::string name) {
  std::map<std::string, std::string> responses;
  try {
    const auto j = io::json::parse(io::read_file(path));
    for (const auto& [k, v] : j.items()) responses.emplace(k, v.get<std::string>());
  } catch (const io::json::exception& e) {
    throw Error(ErrorCode::ParseError, path + ": " + e.what());
  }
  return ScriptedClient(std::move(responses), std::move(name));
}

GenerationResponse ScriptedClient::generate(const GenerationRequest& request) {
  const auto it = responses_.find(request.item_id);
  return {it == responses_.end() ? fallback_ : it->second, 0.0};
}

}  // namespace forge
