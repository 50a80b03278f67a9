#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

namespace unadapt {

// A text-completion backend. Implementations must tolerate concurrent calls.
class LanguageModelClient {
 public:
  virtual ~LanguageModelClient() = default;

  // Identifier recorded as corpus provenance, e.g. "gpt-3.5".
  virtual std::string model_id() const = 0;

  // Returns the raw completion. Throws TransportError when the backend cannot
  // be reached or answers with an error status.
  virtual std::string complete(const std::string& prompt) = 0;
};

struct HttpEndpoint {
  std::string base_url;  // scheme://host[:port]
  std::string model;
  std::string api_key;   // sent as a bearer token when non-empty
  int timeout_seconds = 60;
  double temperature = 0.7;
};

// OpenAI-compatible chat completions endpoint (POST /v1/chat/completions).
class RemoteApiClient : public LanguageModelClient {
 public:
  explicit RemoteApiClient(HttpEndpoint endpoint);
  std::string model_id() const override { return endpoint_.model; }
  std::string complete(const std::string& prompt) override;

 private:
  HttpEndpoint endpoint_;
};

// Locally served model with an Ollama-style API (POST /api/generate).
class LocalModelClient : public LanguageModelClient {
 public:
  explicit LocalModelClient(HttpEndpoint endpoint);
  std::string model_id() const override { return endpoint_.model; }
  std::string complete(const std::string& prompt) override;

 private:
  HttpEndpoint endpoint_;
};

// Replays recorded completions. File layout:
//   {"generator": "...",
//    "responses": {"<query>": ["first completion", "second", ...]},
//    "failures":  {"<query>": 2}}
// Each call for a query returns the next recorded completion (cycling).
// "failures" makes the first N calls for that query throw TransportError.
class FixtureClient : public LanguageModelClient {
 public:
  FixtureClient(std::string generator, std::map<std::string, std::vector<std::string>> responses,
                std::map<std::string, int> failures = {});
  static std::unique_ptr<FixtureClient> from_file(const std::filesystem::path& path);

  std::string model_id() const override { return generator_; }
  std::string complete(const std::string& prompt) override;
  int calls(const std::string& prompt) const;

 private:
  std::string generator_;
  std::map<std::string, std::vector<std::string>> responses_;
  std::map<std::string, int> failures_;
  std::map<std::string, int> calls_;
  mutable std::mutex mu_;
};

// Builds a client from a command-line spec:
//   fixture:<path>          recorded responses
//   remote:<model>          base URL from UNADAPT_LLM_BASE_URL (default
//                           https://api.openai.com), key from UNADAPT_LLM_API_KEY
//   local:<model>[@<url>]   default url http://127.0.0.1:11434
std::unique_ptr<LanguageModelClient> make_llm_client(const std::string& spec);

}  // namespace unadapt
