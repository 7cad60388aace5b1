#include "pcn/cue_gen.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

#include "pcn/rng.hpp"

#ifndef CPPHTTPLIB_HEADER
#define CPPHTTPLIB_HEADER
#include <httplib.h>
#endif

namespace pcn {

using nlohmann::json;

PromptParts PromptParts::default_template() {
    PromptParts p;
    p.general_instruction =
        "You are a helpful assistant. Decompose the referring text into target "
        "object-related short phrases.";
    p.output_constraints =
        "Answer with a numbered list, one short phrase per line. Each phrase must "
        "be at most five words and must come from the input sentence.";
    p.in_context_examples = {
        {"a player in blue and gray uniform catches a ball", {"a player", "blue and gray uniform", "catches a ball"}},
        {"the man with gold necklace", {"the man", "with gold necklace"}},
        {"a dog that is running in the park", {"a dog", "is running", "in the park"}},
    };
    p.input_question = "Now decompose this referring text: \"{expression}\"";
    return p;
}

const char* provenance_name(CueProvenance p) {
    switch (p) {
        case CueProvenance::llm: return "llm";
        case CueProvenance::rules: return "rules";
        case CueProvenance::cache: return "cache";
    }
    return "rules";
}

std::string normalize_whitespace(const std::string& text) {
    std::string out;
    bool in_space = true;
    for (char c : text) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            if (!in_space && !out.empty()) out += ' ';
            in_space = true;
        } else {
            out += c;
            in_space = false;
        }
    }
    while (!out.empty() && out.back() == ' ') out.pop_back();
    return out;
}

static void validate_template(const PromptParts& tmpl) {
    if (tmpl.general_instruction.empty() || tmpl.output_constraints.empty() || tmpl.input_question.empty() ||
        tmpl.in_context_examples.empty())
        throw InvalidTemplateError("prompt template: all four parts must be non-empty");
}

std::string build_prompt(const std::string& text, const PromptParts& tmpl) {
    if (normalize_whitespace(text).empty()) throw InvalidInputError("build_prompt: empty referring text");
    validate_template(tmpl);
    std::ostringstream os;
    os << tmpl.general_instruction << "\n\n" << tmpl.output_constraints << "\n\n";
    for (const auto& [q, answers] : tmpl.in_context_examples) {
        os << "Q: " << q << "\nA:\n";
        for (std::size_t i = 0; i < answers.size(); ++i) os << (i + 1) << ". " << answers[i] << "\n";
        os << "\n";
    }
    std::string question = tmpl.input_question;
    const std::string placeholder = "{expression}";
    auto pos = question.find(placeholder);
    if (pos != std::string::npos)
        question.replace(pos, placeholder.size(), text);
    else
        question += " \"" + text + "\"";
    os << question << "\n";
    return os.str();
}

std::vector<std::string> parse_llm_phrases(const std::string& reply) {
    std::vector<std::string> phrases;
    std::istringstream is(reply);
    std::string line;
    bool saw_list_marker = false;
    std::vector<std::string> bare_lines;
    while (std::getline(is, line)) {
        std::string s = normalize_whitespace(line);
        if (s.empty()) continue;
        std::size_t i = 0;
        bool marker = false;
        if (std::isdigit(static_cast<unsigned char>(s[0]))) {
            while (i < s.size() && std::isdigit(static_cast<unsigned char>(s[i]))) ++i;
            if (i < s.size() && (s[i] == '.' || s[i] == ')' || s[i] == ':')) {
                ++i;
                marker = true;
            } else {
                i = 0;
            }
        } else if (s[0] == '-' || s[0] == '*' || s[0] == '+') {
            i = 1;
            marker = true;
        }
        std::string body = normalize_whitespace(s.substr(i));
        if (marker) {
            saw_list_marker = true;
            if (!body.empty()) phrases.push_back(body);
        } else {
            bare_lines.push_back(s);
        }
    }
    if (saw_list_marker) return phrases;
    // One-per-line answers: only trust short multi-line replies, prose means
    // the model ignored the format.
    if (bare_lines.size() >= 2) {
        for (const auto& s : bare_lines) {
            std::size_t words = 1;
            for (char c : s)
                if (c == ' ') ++words;
            if (words > 8) return {};
        }
        return bare_lines;
    }
    return {};
}

namespace {

// Connective lexicon, version 1. Relative pronouns and coordinators start a
// new phrase and are dropped; prepositions and auxiliary/participial verb
// boundaries start a new phrase and stay in it.
const std::unordered_set<std::string>& drop_split_words() {
    static const std::unordered_set<std::string> s = {"that", "which", "who", "whom", "whose", "and", "or", "but"};
    return s;
}

const std::unordered_set<std::string>& keep_split_words() {
    static const std::unordered_set<std::string> s = {
        "with",    "in",      "on",     "at",      "of",      "near",   "by",     "under",  "over",
        "behind",  "beside",  "above",  "below",   "inside",  "outside", "between", "against", "along",
        "across",  "around",  "to",     "from",    "beneath", "atop",   "is",     "are",    "was",
        "were",    "be",      "been",   "has",     "have",    "had",    "wearing", "holding"};
    return s;
}

std::string classify_token(const std::string& tok) {
    std::string t;
    for (char c : tok)
        if (!std::ispunct(static_cast<unsigned char>(c))) t += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return t;
}

}  // namespace

const char* rules_lexicon_version() { return "lex1"; }

CueSet decompose_rules(const std::string& text) {
    const std::string norm = normalize_whitespace(text);
    if (norm.empty()) throw InvalidInputError("decompose_rules: empty referring text");

    std::vector<std::string> tokens;
    std::istringstream is(norm);
    std::string tok;
    while (is >> tok) tokens.push_back(tok);

    CueSet out;
    out.source_text = text;
    out.provenance = CueProvenance::rules;

    std::vector<std::string> current;
    bool fresh = true;  // current phrase has no content word yet
    auto flush = [&]() {
        if (current.empty()) return;
        std::string phrase;
        for (std::size_t i = 0; i < current.size(); ++i) {
            if (i) phrase += ' ';
            phrase += current[i];
        }
        out.phrases.push_back(phrase);
        current.clear();
    };

    for (const auto& t : tokens) {
        const std::string key = classify_token(t);
        const bool drop = drop_split_words().count(key) != 0;
        const bool keep = keep_split_words().count(key) != 0;
        if (drop) {
            if (!fresh) flush();
            fresh = true;
            continue;
        }
        if (keep) {
            if (!fresh) {
                flush();
                fresh = true;
            }
            current.push_back(t);
            continue;
        }
        current.push_back(t);
        fresh = false;
    }
    flush();

    // All tokens were connectives: fall back to the whole text as one phrase.
    if (out.phrases.empty()) out.phrases.push_back(norm);
    return out;
}

CueSet standardize_cues(const CueSet& cues, std::size_t k) {
    if (k < 1) throw InvalidInputError("standardize_cues: k must be >= 1");
    if (cues.phrases.empty()) throw InvalidInputError("standardize_cues: empty cue set");
    CueSet out = cues;
    if (out.phrases.size() > k) {
        out.phrases.resize(k);
    } else {
        std::size_t i = 0;
        while (out.phrases.size() < k) {
            out.phrases.push_back(cues.phrases[i % cues.phrases.size()]);
            ++i;
        }
    }
    return out;
}

std::string iso8601_now() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t tt = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&tt, &tm);
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%04d-%02d-%02dT%02d:%02d:%02dZ", tm.tm_year + 1900, tm.tm_mon + 1, tm.tm_mday,
                  tm.tm_hour, tm.tm_min, tm.tm_sec);
    return buf;
}

std::string CueCache::make_key(const std::string& text, const std::string& prompt_version) {
    std::string lowered;
    for (char c : normalize_whitespace(text)) lowered += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    const std::uint64_t h = fnv1a64(lowered + "\x1f" + prompt_version);
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

CueCache::CueCache(std::string path) : path_(std::move(path)) {
    std::ifstream is(path_);
    if (!is) return;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded()) continue;
        CueCacheRecord rec;
        rec.key = j.value("key", "");
        rec.text = j.value("text", "");
        rec.provenance = j.value("provenance", "");
        rec.created_at = j.value("created_at", "");
        if (j.contains("phrases"))
            for (const auto& p : j["phrases"]) rec.phrases.push_back(p.get<std::string>());
        if (!rec.key.empty()) records_[rec.key] = rec;
    }
}

std::optional<CueCacheRecord> CueCache::lookup(const std::string& key) const {
    auto it = records_.find(key);
    if (it == records_.end()) return std::nullopt;
    return it->second;
}

void CueCache::append(const CueCacheRecord& rec) {
    std::lock_guard<std::mutex> lock(write_mutex_);
    records_[rec.key] = rec;
    if (path_.empty()) return;
    json j{{"key", rec.key}, {"text", rec.text}, {"phrases", rec.phrases},
           {"provenance", rec.provenance}, {"created_at", rec.created_at}};
    std::ofstream os(path_, std::ios::app);
    if (!os) throw IoError("cue cache: cannot append to " + path_);
    os << j.dump() << "\n";
}

CueSet decompose_llm(const std::string& text, LlmClient& client, const PromptParts& tmpl, CueCache* cache,
                     const std::function<void(const std::string&)>& warn) {
    const std::string norm = normalize_whitespace(text);
    if (norm.empty()) throw InvalidInputError("decompose_llm: empty referring text");
    validate_template(tmpl);

    const std::string key = CueCache::make_key(text, tmpl.version);
    if (cache) {
        if (auto rec = cache->lookup(key)) {
            CueSet out;
            out.source_text = text;
            out.phrases = rec->phrases;
            out.provenance = CueProvenance::cache;
            return out;
        }
    }

    const std::string prompt = build_prompt(text, tmpl);
    std::optional<std::string> reply = client.complete(prompt);
    if (reply) {
        std::vector<std::string> phrases = parse_llm_phrases(*reply);
        if (!phrases.empty()) {
            CueSet out;
            out.source_text = text;
            out.phrases = std::move(phrases);
            out.provenance = CueProvenance::llm;
            out.transcript = *reply;
            if (cache) cache->append({key, text, out.phrases, "llm", iso8601_now()});
            return out;
        }
        if (warn) warn("llm reply had no parseable list, falling back to rules: " + norm);
    } else {
        if (warn) warn("llm client unavailable, falling back to rules: " + norm);
    }
    return decompose_rules(text);
}

HttpLlmClient::HttpLlmClient(std::string host, int port, std::string path, int timeout_sec)
    : host_(std::move(host)), port_(port), path_(std::move(path)), timeout_sec_(timeout_sec) {}

std::optional<std::string> HttpLlmClient::complete(const std::string& prompt) {
    httplib::Client cli(host_, port_);
    cli.set_connection_timeout(timeout_sec_);
    cli.set_read_timeout(timeout_sec_);
    json body{{"prompt", prompt}};
    auto res = cli.Post(path_, body.dump(), "application/json");
    if (!res || res->status != 200) return std::nullopt;
    json j = json::parse(res->body, nullptr, false);
    if (j.is_discarded()) return res->body;  // plain-text endpoint
    if (j.contains("text")) return j["text"].get<std::string>();
    if (j.contains("content")) return j["content"].get<std::string>();
    return res->body;
}

}  // namespace pcn
