#pragma once

#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "pcn/errors.hpp"

namespace pcn {

// Four-part decomposition prompt: general instruction, output constraints,
// in-context examples, input question. The question part must contain the
// {expression} placeholder.
struct PromptParts {
    std::string general_instruction;
    std::string output_constraints;
    std::vector<std::pair<std::string, std::vector<std::string>>> in_context_examples;
    std::string input_question;
    std::string version = "v1";

    static PromptParts default_template();
};

enum class CueProvenance { llm, rules, cache };

struct CueSet {
    std::string source_text;
    std::vector<std::string> phrases;
    CueProvenance provenance = CueProvenance::rules;
    std::string transcript;  // raw LLM reply, kept for audit; empty otherwise

    std::size_t k() const { return phrases.size(); }
};

const char* provenance_name(CueProvenance p);

// Minimal completion-client surface; nullopt signals timeout/transport failure.
class LlmClient {
  public:
    virtual ~LlmClient() = default;
    virtual std::optional<std::string> complete(const std::string& prompt) = 0;
};

// POSTs {"prompt": ...} to http://host:port/path and reads {"text": ...}.
class HttpLlmClient : public LlmClient {
  public:
    HttpLlmClient(std::string host, int port, std::string path = "/v1/completions", int timeout_sec = 30);
    std::optional<std::string> complete(const std::string& prompt) override;

  private:
    std::string host_;
    int port_;
    std::string path_;
    int timeout_sec_;
};

struct CueCacheRecord {
    std::string key;
    std::string text;
    std::vector<std::string> phrases;
    std::string provenance;
    std::string created_at;
};

// Append-only JSONL cache, one record per line. Writes are serialized through
// a single mutex; lookups hit the in-memory index.
class CueCache {
  public:
    CueCache() = default;
    explicit CueCache(std::string path);

    static std::string make_key(const std::string& text, const std::string& prompt_version);

    std::optional<CueCacheRecord> lookup(const std::string& key) const;
    void append(const CueCacheRecord& rec);
    std::size_t size() const { return records_.size(); }

  private:
    std::string path_;
    std::unordered_map<std::string, CueCacheRecord> records_;
    mutable std::mutex write_mutex_;
};

std::string normalize_whitespace(const std::string& text);

std::string build_prompt(const std::string& text, const PromptParts& tmpl);

// Parses numbered, bulleted, or one-per-line answers; empty when none found.
std::vector<std::string> parse_llm_phrases(const std::string& reply);

CueSet decompose_rules(const std::string& text);

// Version tag of the rule lexicon; bumping it invalidates expectations that
// pin exact splits.
const char* rules_lexicon_version();

CueSet decompose_llm(const std::string& text, LlmClient& client, const PromptParts& tmpl, CueCache* cache = nullptr,
                     const std::function<void(const std::string&)>& warn = {});

CueSet standardize_cues(const CueSet& cues, std::size_t k);

std::string iso8601_now();

}  // namespace pcn
