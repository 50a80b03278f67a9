#include "unadapt/llm_client.hpp"

#include <cstdlib>

#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
#define CPPHTTPLIB_OPENSSL_SUPPORT
#endif
#include <httplib.h>
#include <json.hpp>

#include "unadapt/error.hpp"
#include "unadapt/util.hpp"

namespace unadapt {

using nlohmann::json;

namespace {

std::string post_json(const HttpEndpoint& ep, const std::string& path, const json& body) {
  httplib::Client client(ep.base_url);
  client.set_connection_timeout(ep.timeout_seconds, 0);
  client.set_read_timeout(ep.timeout_seconds, 0);
  httplib::Headers headers;
  if (!ep.api_key.empty()) headers.emplace("Authorization", "Bearer " + ep.api_key);
  auto res = client.Post(path, headers, body.dump(), "application/json");
  if (!res) {
    throw TransportError(ep.base_url + path + ": " + httplib::to_string(res.error()));
  }
  if (res->status != 200) {
    throw TransportError(ep.base_url + path + ": HTTP " + std::to_string(res->status));
  }
  return res->body;
}

json parse_reply(const std::string& body, const std::string& where) {
  try {
    return json::parse(body);
  } catch (const json::parse_error& e) {
    throw TransportError(where + ": malformed reply: " + e.what());
  }
}

}  // namespace

RemoteApiClient::RemoteApiClient(HttpEndpoint endpoint) : endpoint_(std::move(endpoint)) {}

std::string RemoteApiClient::complete(const std::string& prompt) {
  json body = {{"model", endpoint_.model},
               {"temperature", endpoint_.temperature},
               {"messages", json::array({{{"role", "user"}, {"content", prompt}}})}};
  auto reply = parse_reply(post_json(endpoint_, "/v1/chat/completions", body), endpoint_.base_url);
  try {
    const auto& choices = reply.at("choices");
    if (choices.empty()) return {};
    const auto& content = choices.at(0).at("message").at("content");
    return content.is_null() ? std::string{} : content.get<std::string>();
  } catch (const json::exception& e) {
    throw TransportError(endpoint_.base_url + ": unexpected reply shape: " + e.what());
  }
}

LocalModelClient::LocalModelClient(HttpEndpoint endpoint) : endpoint_(std::move(endpoint)) {}

std::string LocalModelClient::complete(const std::string& prompt) {
  json body = {{"model", endpoint_.model},
               {"prompt", prompt},
               {"stream", false},
               {"options", {{"temperature", endpoint_.temperature}}}};
  auto reply = parse_reply(post_json(endpoint_, "/api/generate", body), endpoint_.base_url);
  try {
    return reply.at("response").get<std::string>();
  } catch (const json::exception& e) {
    throw TransportError(endpoint_.base_url + ": unexpected reply shape: " + e.what());
  }
}

FixtureClient::FixtureClient(std::string generator,
                             std::map<std::string, std::vector<std::string>> responses,
                             std::map<std::string, int> failures)
    : generator_(std::move(generator)),
      responses_(std::move(responses)),
      failures_(std::move(failures)) {}

std::unique_ptr<FixtureClient> FixtureClient::from_file(const std::filesystem::path& path) {
  json doc;
  try {
    doc = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  try {
    std::map<std::string, std::vector<std::string>> responses;
    for (const auto& [query, texts] : doc.at("responses").items()) {
      responses[query] = texts.get<std::vector<std::string>>();
    }
    std::map<std::string, int> failures;
    if (doc.contains("failures")) failures = doc["failures"].get<std::map<std::string, int>>();
    return std::make_unique<FixtureClient>(doc.at("generator").get<std::string>(), std::move(responses),
                         std::move(failures));
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

std::string FixtureClient::complete(const std::string& prompt) {
  std::lock_guard lock(mu_);
  int call = calls_[prompt]++;
  if (auto f = failures_.find(prompt); f != failures_.end() && call < f->second) {
    throw TransportError("fixture: simulated transport failure for query '" + prompt + "'");
  }
  auto it = responses_.find(prompt);
  if (it == responses_.end()) {
    throw TransportError("fixture: no recorded response for query '" + prompt + "'");
  }
  if (it->second.empty()) return {};
  int failed = failures_.count(prompt) ? failures_.at(prompt) : 0;
  return it->second[static_cast<std::size_t>(call - failed) % it->second.size()];
}

int FixtureClient::calls(const std::string& prompt) const {
  std::lock_guard lock(mu_);
  auto it = calls_.find(prompt);
  return it == calls_.end() ? 0 : it->second;
}

std::unique_ptr<LanguageModelClient> make_llm_client(const std::string& spec) {
  auto colon = spec.find(':');
  if (colon == std::string::npos) {
    throw ValidationError("llm spec must be fixture:<path>, remote:<model> or local:<model>[@url]");
  }
  std::string kind = spec.substr(0, colon);
  std::string rest = spec.substr(colon + 1);
  if (kind == "fixture") return FixtureClient::from_file(rest);
  if (kind == "remote") {
    HttpEndpoint ep;
    ep.model = rest;
    const char* base = std::getenv("UNADAPT_LLM_BASE_URL");
    ep.base_url = base ? base : "https://api.openai.com";
    const char* key = std::getenv("UNADAPT_LLM_API_KEY");
    if (!key || !*key) throw ValidationError("remote llm client needs UNADAPT_LLM_API_KEY");
    ep.api_key = key;
    return std::make_unique<RemoteApiClient>(std::move(ep));
  }
  if (kind == "local") {
    HttpEndpoint ep;
    auto at = rest.find('@');
    ep.model = rest.substr(0, at);
    ep.base_url = at == std::string::npos ? "http://127.0.0.1:11434" : rest.substr(at + 1);
    return std::make_unique<LocalModelClient>(std::move(ep));
  }
  throw ValidationError("unknown llm client kind '" + kind + "'");
}

}  // namespace unadapt
