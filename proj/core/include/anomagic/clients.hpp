// Copyright 2026 The Anomagic Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "anomagic/triplet_store.hpp"

namespace anomagic {

struct CaptionRequest {
  std::string id;
  std::vector<std::uint8_t> image_png;
  BoundingBox bbox;
  std::string template_text;
};

/// Produces a structured caption for one record. Throws on failure.
class CaptioningClient {
 public:
  virtual ~CaptioningClient() = default;
  virtual std::string submit(const CaptionRequest& request) = 0;
};

/// Answers free-form questions, optionally about an image. Throws on failure.
class MllmClient {
 public:
  virtual ~MllmClient() = default;
  virtual std::string ask(const std::string& question,
                          const std::vector<std::uint8_t>* image_png = nullptr) = 0;
};

/// Caption is `prefix + id`; ids in `fail_ids` throw ClientError.
class MockCaptioningClient final : public CaptioningClient {
 public:
  explicit MockCaptioningClient(std::string prefix = "CAP:", std::set<std::string> fail_ids = {})
      : prefix_(std::move(prefix)), fail_ids_(std::move(fail_ids)) {}
  std::string submit(const CaptionRequest& request) override;
  std::size_t calls() const noexcept { return calls_; }

 private:
  std::string prefix_;
  std::set<std::string> fail_ids_;
  std::size_t calls_ = 0;
};

/// Lookup-table MLLM. Questions are normalized (lowercase, collapsed
/// whitespace, trailing punctuation dropped) before lookup. Adjudication
/// questions built by `adjudication_question` are answered by comparing word
/// stems, so "cracks" matches "crack" without a table entry.
class MockMllmClient final : public MllmClient {
 public:
  MockMllmClient();  // built-in table
  explicit MockMllmClient(std::map<std::string, std::string> table);
  static MockMllmClient from_file(const std::filesystem::path& path);

  std::string ask(const std::string& question, const std::vector<std::uint8_t>* image_png) override;
  std::size_t calls() const noexcept { return calls_; }

 private:
  std::map<std::string, std::string> table_;
  std::size_t calls_ = 0;
};

struct HttpEndpoint {
  std::string url;        // scheme://host[:port]/path
  std::string token_env;  // environment variable holding a bearer token; may be empty
  int timeout_seconds = 60;
};

/// POSTs {"id","image_base64","bbox","template"} and reads {"caption"}.
class HttpCaptioningClient final : public CaptioningClient {
 public:
  explicit HttpCaptioningClient(HttpEndpoint endpoint) : endpoint_(std::move(endpoint)) {}
  std::string submit(const CaptionRequest& request) override;

 private:
  HttpEndpoint endpoint_;
};

/// POSTs {"question","image_base64"?} and reads {"answer"}.
class HttpMllmClient final : public MllmClient {
 public:
  explicit HttpMllmClient(HttpEndpoint endpoint) : endpoint_(std::move(endpoint)) {}
  std::string ask(const std::string& question, const std::vector<std::uint8_t>* image_png) override;

 private:
  HttpEndpoint endpoint_;
};

std::string normalize_question(const std::string& question);

/// The yes/no question used to adjudicate a non-exact category match.
std::string adjudication_question(const std::string& candidate, const std::string& defect_type);
bool parse_yes(const std::string& answer);

/// Crude English stem: lowercase, trailing "es"/"s" removed.
std::string word_stem(const std::string& word);

std::string base64_encode(const std::vector<std::uint8_t>& bytes);

/// "mock" or "mock:<table.json>" selects the lookup client, anything else is
/// treated as an HTTP endpoint URL.
std::unique_ptr<MllmClient> make_mllm_client(const std::string& spec,
                                             const std::string& token_env = "ANOMAGIC_MLLM_TOKEN");
std::unique_ptr<CaptioningClient> make_captioning_client(
    const std::string& spec, const std::string& token_env = "ANOMAGIC_CAPTION_TOKEN");

}  // namespace anomagic
