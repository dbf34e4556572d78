// Copyright 2026 The Anomagic Authors
// SPDX-License-Identifier: Apache-2.0

#include "anomagic/clients.hpp"

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>
#include <openssl/evp.h>

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <fstream>
#include <nlohmann/json.hpp>
#include <regex>

#include "anomagic/errors.hpp"

namespace anomagic {

namespace {

using nlohmann::json;

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

std::string read_token(const std::string& env) {
  if (env.empty()) return {};
  const char* v = std::getenv(env.c_str());
  return v ? std::string(v) : std::string();
}

json post_json(const HttpEndpoint& ep, const json& body) {
  static const std::regex url_re(R"(^(https?://[^/]+)(/.*)?$)");
  std::smatch m;
  if (!std::regex_match(ep.url, m, url_re)) throw ConfigError("malformed endpoint URL '" + ep.url + "'");
  httplib::Client cli(m[1].str());
  cli.set_connection_timeout(ep.timeout_seconds);
  cli.set_read_timeout(ep.timeout_seconds);
  httplib::Headers headers;
  const std::string token = read_token(ep.token_env);
  if (!token.empty()) headers.emplace("Authorization", "Bearer " + token);
  const std::string path = m[2].matched ? m[2].str() : "/";
  auto res = cli.Post(path, headers, body.dump(), "application/json");
  if (!res) throw ClientError("request to '" + ep.url + "' failed: " + httplib::to_string(res.error()));
  if (res->status < 200 || res->status >= 300) {
    throw ClientError("endpoint '" + ep.url + "' returned HTTP " + std::to_string(res->status));
  }
  try {
    return json::parse(res->body);
  } catch (const json::parse_error& e) {
    throw ClientError(std::string("endpoint returned malformed JSON: ") + e.what());
  }
}

std::string field(const json& j, const char* key) {
  if (!j.is_object() || !j.contains(key) || !j[key].is_string()) {
    throw ClientError(std::string("response lacks string field '") + key + "'");
  }
  return j[key].get<std::string>();
}

std::map<std::string, std::string> builtin_table() {
  return {
      {"what defects commonly appear in cashews", "cracks, holes, bulges, scratches"},
      {"what defects commonly appear in capsules", "cracks, squeezes, scratches, faulty imprints"},
      {"what defects commonly appear in pcbs", "bent pins, missing components, scratches, burns"},
      {"what defects commonly appear in fabric", "holes, stains, broken threads"},
      {"what defects commonly appear in toy tiles", "cracks, stains, holes"},
  };
}

}  // namespace

std::string MockCaptioningClient::submit(const CaptionRequest& request) {
  ++calls_;
  if (fail_ids_.count(request.id)) throw ClientError("mock failure for '" + request.id + "'");
  return prefix_ + request.id;
}

std::string normalize_question(const std::string& question) {
  std::string out;
  bool space = false;
  for (unsigned char c : question) {
    if (std::isspace(c)) {
      space = !out.empty();
      continue;
    }
    if (space) out.push_back(' ');
    space = false;
    out.push_back(static_cast<char>(std::tolower(c)));
  }
  while (!out.empty() && std::ispunct(static_cast<unsigned char>(out.back()))) out.pop_back();
  return out;
}

std::string adjudication_question(const std::string& candidate, const std::string& defect_type) {
  return "Do the anomaly categories \"" + candidate + "\" and \"" + defect_type +
         "\" describe the same kind of defect? Answer yes or no.";
}

bool parse_yes(const std::string& answer) {
  const std::string a = normalize_question(answer);
  return a.rfind("yes", 0) == 0;
}

std::string word_stem(const std::string& word) {
  std::string w = lower(word);
  if (w.size() > 4 && w.compare(w.size() - 3, 3, "hes") == 0) return w.substr(0, w.size() - 2);
  if (w.size() > 3 && w.back() == 's' && w[w.size() - 2] != 's') w.pop_back();
  return w;
}

MockMllmClient::MockMllmClient() : table_(builtin_table()) {}

MockMllmClient::MockMllmClient(std::map<std::string, std::string> table) {
  for (auto& [q, a] : table) table_[normalize_question(q)] = std::move(a);
}

MockMllmClient MockMllmClient::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open MLLM table '" + path.string() + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("MLLM table: ") + e.what(), 0);
  }
  if (!j.is_object()) throw ConfigError("MLLM table must be an object of question -> answer");
  std::map<std::string, std::string> table;
  for (const auto& [k, v] : j.items()) {
    if (!v.is_string()) throw ConfigError("MLLM table answer for '" + k + "' is not a string");
    table[k] = v.get<std::string>();
  }
  return MockMllmClient(std::move(table));
}

std::string MockMllmClient::ask(const std::string& question, const std::vector<std::uint8_t>*) {
  ++calls_;
  static const std::regex adj_re(R"re(^Do the anomaly categories "(.*)" and "(.*)" describe)re");
  std::smatch m;
  if (std::regex_search(question, m, adj_re)) {
    return word_stem(m[1].str()) == word_stem(m[2].str()) ? "yes" : "no";
  }
  auto it = table_.find(normalize_question(question));
  if (it == table_.end()) throw ClientError("mock MLLM has no answer for '" + question + "'");
  return it->second;
}

std::string base64_encode(const std::vector<std::uint8_t>& bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3) + 1, '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(),
                                static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::string HttpCaptioningClient::submit(const CaptionRequest& request) {
  const json body{{"id", request.id},
                  {"image_base64", base64_encode(request.image_png)},
                  {"bbox",
                   {{"x_min", request.bbox.x_min},
                    {"y_min", request.bbox.y_min},
                    {"x_max", request.bbox.x_max},
                    {"y_max", request.bbox.y_max}}},
                  {"template", request.template_text}};
  return field(post_json(endpoint_, body), "caption");
}

std::string HttpMllmClient::ask(const std::string& question, const std::vector<std::uint8_t>* image_png) {
  json body{{"question", question}};
  if (image_png) body["image_base64"] = base64_encode(*image_png);
  return field(post_json(endpoint_, body), "answer");
}

std::unique_ptr<MllmClient> make_mllm_client(const std::string& spec, const std::string& token_env) {
  if (spec == "mock") return std::make_unique<MockMllmClient>();
  if (spec.rfind("mock:", 0) == 0) {
    return std::make_unique<MockMllmClient>(MockMllmClient::from_file(spec.substr(5)));
  }
  return std::make_unique<HttpMllmClient>(HttpEndpoint{spec, token_env});
}

std::unique_ptr<CaptioningClient> make_captioning_client(const std::string& spec,
                                                         const std::string& token_env) {
  if (spec == "mock") return std::make_unique<MockCaptioningClient>();
  return std::make_unique<HttpCaptioningClient>(HttpEndpoint{spec, token_env});
}

}  // namespace anomagic
