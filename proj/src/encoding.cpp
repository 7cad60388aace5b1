#include "pcn/encoding.hpp"

#include <algorithm>
#include <cctype>
#include <set>

namespace pcn {

void EncoderConfig::validate() const {
    if (c_v < 1 || c_l < 1 || c < 1 || stride < 1 || image_size < 1)
        throw ConfigError("encoder config: all dimensions must be positive");
    if (image_size % stride != 0) throw ConfigError("encoder config: image_size must be divisible by stride");
    std::int64_t s = stride;
    while (s > 1) {
        if (s % 2 != 0) throw ConfigError("encoder config: stride must be a power of two");
        s /= 2;
    }
}

std::vector<std::string> Vocab::tokenize(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    for (char raw : text) {
        const auto c = static_cast<unsigned char>(raw);
        if (std::isalnum(c)) {
            cur += static_cast<char>(std::tolower(c));
        } else if (!cur.empty()) {
            out.push_back(cur);
            cur.clear();
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

Vocab Vocab::build(const std::vector<std::string>& texts) {
    std::set<std::string> uniq;
    for (const auto& t : texts)
        for (const auto& tok : tokenize(t)) uniq.insert(tok);
    Vocab v;
    v.tokens_.assign(uniq.begin(), uniq.end());
    for (std::size_t i = 0; i < v.tokens_.size(); ++i) v.ids_[v.tokens_[i]] = static_cast<std::int64_t>(i) + 1;
    return v;
}

Vocab Vocab::from_tokens(const std::vector<std::string>& tokens) {
    Vocab v;
    v.tokens_ = tokens;
    for (std::size_t i = 0; i < v.tokens_.size(); ++i) v.ids_[v.tokens_[i]] = static_cast<std::int64_t>(i) + 1;
    return v;
}

std::vector<std::int64_t> Vocab::encode(const std::string& text) const {
    std::vector<std::int64_t> ids;
    for (const auto& tok : tokenize(text)) {
        auto it = ids_.find(tok);
        ids.push_back(it == ids_.end() ? 0 : it->second);
    }
    return ids;
}

ImageEncoder::ImageEncoder(const EncoderConfig& cfg, ParamStore& store, Rng& rng) : cfg_(cfg) {
    cfg.validate();
    std::int64_t s = cfg.stride;
    while (s > 1) {
        ++depth_;
        s /= 2;
    }
    std::int64_t ch = 8;
    for (int l = 0; l < depth_; ++l) {
        channels_.push_back(l + 1 == depth_ ? cfg.c_v : std::min<std::int64_t>(ch, cfg.c_v));
        ch *= 2;
    }
    std::int64_t in_ch = 3;
    for (int l = 0; l < depth_; ++l) {
        const std::int64_t out_ch = channels_[static_cast<std::size_t>(l)];
        const std::string p = "enc.img.conv" + std::to_string(l);
        store.create_uniform(p + ".w", {out_ch, in_ch, 3, 3}, in_ch * 9, rng);
        store.create(p + ".b", {out_ch});
        in_ch = out_ch;
    }
    store.create_uniform("enc.img.proj.w", {cfg.c_v, cfg.c}, cfg.c_v, rng);
    store.create("enc.img.proj.b", {cfg.c});
}

Var ImageEncoder::encode(Tape& tape, TapeBinding& bind, const Image& image) const {
    if (image.rank() != 3 || image.shape[0] != 3 || image.shape[1] != cfg_.image_size ||
        image.shape[2] != cfg_.image_size)
        throw InvalidInputError("encode_image: expected (3," + std::to_string(cfg_.image_size) + "," +
                                std::to_string(cfg_.image_size) + ") image, got " + image.shape_str());
    Var x = tape.constant(image);
    for (int l = 0; l < depth_; ++l) {
        const std::string p = "enc.img.conv" + std::to_string(l);
        x = tape.conv2d(x, bind(p + ".w"), bind(p + ".b"), 2, 1);
        x = tape.tanh_(x);
    }
    Var rows = tape.chw_to_rows(x);  // (H*W, c_v)
    Var proj = tape.matmul(rows, bind("enc.img.proj.w"));
    return tape.add_row(proj, bind("enc.img.proj.b"));
}

VisualGrid ImageEncoder::encode_value(const ParamStore& store, const Image& image) const {
    Tape tape;
    TapeBinding bind(tape, store);
    Var v = encode(tape, bind, image);
    VisualGrid g;
    g.data = tape.val(v);
    g.h = cfg_.grid_size();
    g.w = cfg_.grid_size();
    g.stride = cfg_.stride;
    g.image_h = cfg_.image_size;
    g.image_w = cfg_.image_size;
    return g;
}

TextEncoder::TextEncoder(const EncoderConfig& cfg, std::size_t vocab_size, ParamStore& store, Rng& rng) : cfg_(cfg) {
    store.create_uniform("enc.txt.embed", {static_cast<std::int64_t>(vocab_size), cfg.c_l}, cfg.c_l, rng);
    store.create_uniform("enc.txt.proj.w", {cfg.c_l, cfg.c}, cfg.c_l, rng);
    store.create("enc.txt.proj.b", {cfg.c});
}

Var TextEncoder::encode(Tape& tape, TapeBinding& bind, const std::vector<std::int64_t>& token_ids) const {
    if (token_ids.empty()) throw InvalidInputError("encode_text: empty token sequence");
    Var avg = tape.rows_mean(bind("enc.txt.embed"), token_ids);
    Var proj = tape.matmul(avg, bind("enc.txt.proj.w"));
    return tape.add_row(proj, bind("enc.txt.proj.b"));
}

TextEmbedding TextEncoder::encode_value(const ParamStore& store, const std::vector<std::int64_t>& token_ids,
                                        TextKind kind) const {
    Tape tape;
    TapeBinding bind(tape, store);
    Var v = encode(tape, bind, token_ids);
    TextEmbedding e;
    e.data = tape.val(v);
    e.kind = kind;
    return e;
}

}  // namespace pcn
