#pragma once

#include <map>
#include <string>
#include <vector>

#include "pcn/image.hpp"
#include "pcn/params.hpp"

namespace pcn {

struct EncoderConfig {
    std::int64_t c_v = 2048;      // visual feature channels before projection
    std::int64_t c_l = 1024;      // text feature channels before projection
    std::int64_t c = 1024;        // unified dimension
    std::int64_t stride = 32;     // image-to-grid downsampling ratio
    std::int64_t image_size = 320;
    std::uint64_t seed = 0;

    static EncoderConfig toy() {
        EncoderConfig cfg;
        cfg.c_v = 96;
        cfg.c_l = 48;
        cfg.c = 64;
        cfg.stride = 8;
        cfg.image_size = 64;
        return cfg;
    }

    std::int64_t grid_size() const { return image_size / stride; }
    void validate() const;
};

struct VisualGrid {
    Tensor data;  // (h*w, c) rows in row-major grid order
    std::int64_t h = 0, w = 0;
    std::int64_t stride = 0;
    std::int64_t image_h = 0, image_w = 0;
};

enum class TextKind { global, cue, negative };

struct TextEmbedding {
    Tensor data;  // (1, c)
    TextKind kind = TextKind::global;
};

// Whitespace/punctuation tokenizer with a fixed vocabulary; id 0 is the
// out-of-vocabulary token.
class Vocab {
  public:
    static std::vector<std::string> tokenize(const std::string& text);

    static Vocab build(const std::vector<std::string>& texts);
    static Vocab from_tokens(const std::vector<std::string>& tokens);  // index i -> id i+1

    std::vector<std::int64_t> encode(const std::string& text) const;
    std::size_t size() const { return tokens_.size() + 1; }  // +1 for oov
    const std::vector<std::string>& tokens() const { return tokens_; }

  private:
    std::vector<std::string> tokens_;
    std::map<std::string, std::int64_t> ids_;
};

// Strided conv stack (kernel 3, stride 2, pad 1, tanh) up to c_v channels,
// then a linear projection to the unified dimension.
class ImageEncoder {
  public:
    ImageEncoder() = default;
    ImageEncoder(const EncoderConfig& cfg, ParamStore& store, Rng& rng);

    Var encode(Tape& tape, TapeBinding& bind, const Image& image) const;
    VisualGrid encode_value(const ParamStore& store, const Image& image) const;

    int depth() const { return depth_; }

  private:
    EncoderConfig cfg_;
    int depth_ = 0;
    std::vector<std::int64_t> channels_;  // per layer output channels
};

// Token-embedding average followed by a linear projection.
class TextEncoder {
  public:
    TextEncoder() = default;
    TextEncoder(const EncoderConfig& cfg, std::size_t vocab_size, ParamStore& store, Rng& rng);

    Var encode(Tape& tape, TapeBinding& bind, const std::vector<std::int64_t>& token_ids) const;
    TextEmbedding encode_value(const ParamStore& store, const std::vector<std::int64_t>& token_ids,
                               TextKind kind) const;

  private:
    EncoderConfig cfg_;
};

}  // namespace pcn
