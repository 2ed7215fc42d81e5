#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <string_view>

namespace forge {

struct GenerationRequest {
  std::string model;
  std::string prompt;
  int max_tokens = 16;
  double temperature = 0.0;
  std::uint64_t seed = 0;
  /// Local bookkeeping for scripted mocks; never sent over the wire.
  std::string item_id;
};

struct GenerationResponse {
  std::string text;
  double latency_ms = 0.0;
};

/// Text-generation endpoint. Implementations must tolerate concurrent calls.
/// Transport problems are reported as Error(TransportFailure).
class ModelClient {
 public:
  virtual ~ModelClient() = default;
  virtual GenerationResponse generate(const GenerationRequest& request) = 0;
  virtual std::string name() const = 0;
};

/// POST {model, prompt, max_tokens, temperature, seed} as JSON to `url`,
/// expecting {"text": ...} back. The api key, when set, is sent as a bearer
/// token.
class HttpModelClient : public ModelClient {
 public:
  HttpModelClient(std::string url, std::string model, std::string api_key = {},
                  std::chrono::milliseconds timeout = std::chrono::seconds(60));

  /// Reads FORGE_MODEL_URL, FORGE_MODEL_NAME and FORGE_MODEL_KEY.
  /// Throws Error(InvalidArgument) when the url is unset.
  static std::unique_ptr<HttpModelClient> from_env();

  GenerationResponse generate(const GenerationRequest& request) override;
  std::string name() const override { return model_; }

 private:
  std::string scheme_host_;
  std::string path_;
  std::string model_;
  std::string api_key_;
  std::chrono::milliseconds timeout_;
};

/// Answers from an item_id -> response table; unknown ids get `fallback`.
class ScriptedClient : public ModelClient {
 public:
  explicit ScriptedClient(std::map<std::string, std::string> responses, std::string name = "scripted",
                          std::string fallback = {});

  /// JSON object {item_id: response}. Throws Error(ParseError).
  static ScriptedClient from_json_file(const std::string& path, std::string name = "scripted");

  GenerationResponse generate(const GenerationRequest& request) override;
  std::string name() const override { return name_; }

 private:
  std::map<std::string, std::string> responses_;
  std::string name_;
  std::string fallback_;
};

/// Wraps a thread-safe callable; used for probes and test doubles.
class FunctionClient : public ModelClient {
 public:
  using Fn = std::function<std::string(const GenerationRequest&)>;
  FunctionClient(std::string name, Fn fn) : name_(std::move(name)), fn_(std::move(fn)) {}

  GenerationResponse generate(const GenerationRequest& request) override { return {fn_(request), 0.0}; }
  std::string name() const override { return name_; }

 private:
  std::string name_;
  Fn fn_;
};

}  // namespace forge
