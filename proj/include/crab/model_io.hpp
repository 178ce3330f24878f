#pragma once

// Binary model file format.
//
//   magic "CRAB" | u32 format version | u32 section count
//   section table: per section, name (u32 length + bytes), u64 offset, u64 length
//   section payloads
//
// Sections: "meta" (tab-separated config text), "rules" (normalization rule
// text), "vocab" (vocabulary text), "encoder" and "head" (named tensors).
// Tensors are stored as name, u32 rank, u64 dims, then row-major f64 values.
// All integers and floats are little-endian.  The writer is canonical — no
// timestamps, fixed ordering — so identical models produce identical bytes.

#include <bit>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "crab/errors.hpp"
#include "crab/model.hpp"

namespace crab {

inline constexpr std::uint32_t kModelFormatVersion = 1;

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

inline void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

inline void put_f64(std::string& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

inline void put_str(std::string& out, const std::string& s) {
    put_u32(out, std::uint32_t(s.size()));
    out += s;
}

// Bounds-checked reader over a byte span.
class ByteReader {
public:
    ByteReader(const std::string& data, std::size_t begin, std::size_t end, std::string where)
        : data_(data), pos_(begin), end_(end), where_(std::move(where)) {}

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= std::uint32_t(std::uint8_t(data_[pos_ + i])) << (8 * i);
        pos_ += 4;
        return v;
    }

    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= std::uint64_t(std::uint8_t(data_[pos_ + i])) << (8 * i);
        pos_ += 8;
        return v;
    }

    double f64() { return std::bit_cast<double>(u64()); }

    std::string str() {
        std::uint32_t n = u32();
        need(n);
        std::string s = data_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    bool done() const { return pos_ == end_; }
    std::size_t remaining() const { return end_ - pos_; }

private:
    void need(std::size_t n) {
        if (end_ - pos_ < n)
            throw ModelFormatError("truncated model file while reading " + where_);
    }
    const std::string& data_;
    std::size_t pos_, end_;
    std::string where_;
};

inline void put_tensor(std::string& out, const std::string& name, const Tensor& t) {
    put_str(out, name);
    put_u32(out, std::uint32_t(t.rank()));
    for (std::size_t d : t.shape()) put_u64(out, d);
    for (double v : t.values()) put_f64(out, v);
}

struct NamedTensorBlock {
    std::vector<std::pair<std::string, Tensor>> tensors;  // in file order

    // Fetches by name with a shape check; trainable controls requires_grad.
    Tensor take(const std::string& name, const Shape& shape, bool trainable,
                const char* section) const {
        for (const auto& [n, t] : tensors) {
            if (n != name) continue;
            if (t.shape() != shape)
                throw ModelFormatError(std::string(section) + " tensor '" + name +
                                       "' has shape " + shape_str(t.shape()) + ", expected " +
                                       shape_str(shape));
            return Tensor(t.shape(), t.values(), trainable);
        }
        throw ModelFormatError(std::string(section) + " section is missing tensor '" + name +
                               "'");
    }
};

inline NamedTensorBlock parse_tensor_block(const std::string& data, std::size_t begin,
                                           std::size_t end, const char* section) {
    ByteReader r(data, begin, end, std::string(section) + " section");
    NamedTensorBlock block;
    std::uint32_t count = r.u32();
    for (std::uint32_t i = 0; i < count; ++i) {
        std::string name = r.str();
        for (const auto& [n, t] : block.tensors)
            if (n == name)
                throw ModelFormatError(std::string(section) + " section repeats tensor '" +
                                       name + "'");
        std::uint32_t rank = r.u32();
        if (rank > 8)
            throw ModelFormatError(std::string(section) + " tensor '" + name +
                                   "' has implausible rank " + std::to_string(rank));
        Shape shape;
        std::size_t numel = 1;
        for (std::uint32_t d = 0; d < rank; ++d) {
            std::uint64_t dim = r.u64();
            if (dim == 0 || dim > r.remaining())
                throw ModelFormatError(std::string(section) + " tensor '" + name +
                                       "' has corrupt dimensions");
            shape.push_back(std::size_t(dim));
            numel *= std::size_t(dim);
        }
        std::vector<double> values(numel);
        for (std::size_t j = 0; j < numel; ++j) values[j] = r.f64();
        block.tensors.emplace_back(name, Tensor(shape, values));
    }
    if (!r.done())
        throw ModelFormatError(std::string(section) + " section has trailing bytes");
    return block;
}

inline std::string format_double_exact(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

// Key/value text used for the meta section; fixed key order keeps the
// serialization canonical.
inline std::string format_meta(const CrabModel& m) {
    const ToyEncoderConfig& ec = m.encoder.config();
    const CrabConfig& hc = m.head_cfg;
    std::string out = "format\tcrab-model\n";
    auto line = [&out](const std::string& k, const std::string& v) {
        out += k + "\t" + v + "\n";
    };
    line("classes", std::to_string(hc.classes));
    for (const std::string& name : m.class_names) line("class_name", name);
    line("output_mode", to_string(hc.output_mode));
    line("sentence_layer", hc.sentence_layer ? "1" : "0");
    line("head_heads", std::to_string(hc.heads));
    line("fc1", std::to_string(hc.fc1));
    line("fc2", std::to_string(hc.fc2));
    line("head_relu_slope", format_double_exact(hc.relu_slope));
    line("embed_dim", std::to_string(ec.embed_dim));
    line("max_len", std::to_string(ec.max_len));
    line("enc_layers", std::to_string(ec.layers));
    line("attn_heads", std::to_string(ec.heads));
    line("enc_relu_slope", format_double_exact(ec.relu_slope));
    line("train_seed", std::to_string(m.train_seed));
    line("train_epochs", std::to_string(m.train_epochs));
    return out;
}

struct ParsedMeta {
    std::vector<std::string> class_names;
    CrabConfig head_cfg;
    ToyEncoderConfig enc_cfg;
    std::uint64_t train_seed = 0;
    std::size_t train_epochs = 0;
};

inline ParsedMeta parse_meta(const std::string& text) {
    std::map<std::string, std::string> kv;
    std::vector<std::string> class_names;
    std::size_t start = 0;
    while (start < text.size()) {
        std::size_t nl = text.find('\n', start);
        if (nl == std::string::npos) nl = text.size();
        std::string ln = text.substr(start, nl - start);
        start = nl + 1;
        if (ln.empty()) continue;
        std::size_t tab = ln.find('\t');
        if (tab == std::string::npos)
            throw ModelFormatError("meta section line is not key<TAB>value: '" + ln + "'");
        std::string key = ln.substr(0, tab), value = ln.substr(tab + 1);
        if (key == "class_name") {
            class_names.push_back(value);
        } else {
            if (kv.count(key))
                throw ModelFormatError("meta section repeats key '" + key + "'");
            kv[key] = value;
        }
    }
    auto get = [&kv](const char* key) {
        auto it = kv.find(key);
        if (it == kv.end())
            throw ModelFormatError("meta section is missing key '" + std::string(key) + "'");
        return it->second;
    };
    auto get_num = [&get](const char* key) {
        std::string v = get(key);
        try {
            std::size_t used = 0;
            unsigned long long n = std::stoull(v, &used);
            if (used != v.size()) throw std::invalid_argument(v);
            return std::size_t(n);
        } catch (const std::exception&) {
            throw ModelFormatError("meta key '" + std::string(key) +
                                   "' has non-numeric value '" + v + "'");
        }
    };
    auto get_double = [&get](const char* key) {
        std::string v = get(key);
        try {
            std::size_t used = 0;
            double d = std::stod(v, &used);
            if (used != v.size()) throw std::invalid_argument(v);
            return d;
        } catch (const std::exception&) {
            throw ModelFormatError("meta key '" + std::string(key) +
                                   "' has non-numeric value '" + v + "'");
        }
    };

    if (get("format") != "crab-model")
        throw ModelFormatError("meta section has unexpected format tag '" + get("format") + "'");

    ParsedMeta meta;
    meta.class_names = class_names;
    meta.head_cfg.classes = get_num("classes");
    if (meta.head_cfg.classes != class_names.size())
        throw ModelFormatError("meta names " + std::to_string(class_names.size()) +
                               " classes but declares " +
                               std::to_string(meta.head_cfg.classes));
    meta.head_cfg.output_mode = output_mode_from_string(get("output_mode"));
    std::string sl = get("sentence_layer");
    if (sl != "0" && sl != "1")
        throw ModelFormatError("meta key 'sentence_layer' must be 0 or 1, got '" + sl + "'");
    meta.head_cfg.sentence_layer = sl == "1";
    meta.head_cfg.heads = get_num("head_heads");
    meta.head_cfg.fc1 = get_num("fc1");
    meta.head_cfg.fc2 = get_num("fc2");
    meta.head_cfg.relu_slope = get_double("head_relu_slope");
    meta.enc_cfg.embed_dim = get_num("embed_dim");
    meta.enc_cfg.max_len = get_num("max_len");
    meta.enc_cfg.layers = get_num("enc_layers");
    meta.enc_cfg.heads = get_num("attn_heads");
    meta.enc_cfg.relu_slope = get_double("enc_relu_slope");
    meta.head_cfg.embed_dim = meta.enc_cfg.embed_dim;
    meta.head_cfg.token_positions = meta.enc_cfg.max_len - 1;
    meta.train_seed = get_num("train_seed");
    meta.train_epochs = get_num("train_epochs");
    return meta;
}

}  // namespace detail

inline std::string serialize_model(const CrabModel& model) {
    using namespace detail;
    const ToyEncoderConfig& ec = model.encoder.config();
    const ToyEncoderParams& ep = model.encoder.params();

    std::string enc_section;
    put_u32(enc_section, std::uint32_t(2 + 10 * ec.layers));
    put_tensor(enc_section, "embedding", ep.embedding);
    put_tensor(enc_section, "positional", ep.positional);
    for (std::size_t l = 0; l < ec.layers; ++l) {
        const EncoderLayerParams& lp = ep.layers[l];
        std::string prefix = "layer" + std::to_string(l) + ".";
        put_tensor(enc_section, prefix + "wq", lp.wq);
        put_tensor(enc_section, prefix + "wk", lp.wk);
        put_tensor(enc_section, prefix + "wv", lp.wv);
        put_tensor(enc_section, prefix + "wo", lp.wo);
        put_tensor(enc_section, prefix + "wff1", lp.wff1);
        put_tensor(enc_section, prefix + "wff2", lp.wff2);
        put_tensor(enc_section, prefix + "ln1_gain", lp.ln1_gain);
        put_tensor(enc_section, prefix + "ln1_bias", lp.ln1_bias);
        put_tensor(enc_section, prefix + "ln2_gain", lp.ln2_gain);
        put_tensor(enc_section, prefix + "ln2_bias", lp.ln2_bias);
    }

    std::string head_section;
    put_u32(head_section, std::uint32_t(model.head.a.size() + 6));
    for (std::size_t i = 0; i < model.head.a.size(); ++i)
        put_tensor(head_section, "a" + std::to_string(i), model.head.a[i]);
    put_tensor(head_section, "s", model.head.s);
    put_tensor(head_section, "w_fc1", model.head.w_fc1);
    put_tensor(head_section, "b_fc1", model.head.b_fc1);
    put_tensor(head_section, "w_fc2", model.head.w_fc2);
    put_tensor(head_section, "b_fc2", model.head.b_fc2);
    put_tensor(head_section, "w_lin", model.head.w_lin);

    std::vector<std::pair<std::string, std::string>> sections = {
        {"meta", format_meta(model)},
        {"rules", format_norm_rules(model.rules)},
        {"vocab", model.vocab.format()},
        {"encoder", std::move(enc_section)},
        {"head", std::move(head_section)},
    };

    std::size_t header_size = 4 + 4 + 4;  // magic, version, section count
    for (const auto& [name, payload] : sections) header_size += 4 + name.size() + 8 + 8;

    std::string out = "CRAB";
    put_u32(out, kModelFormatVersion);
    put_u32(out, std::uint32_t(sections.size()));
    std::size_t offset = header_size;
    for (const auto& [name, payload] : sections) {
        put_str(out, name);
        put_u64(out, offset);
        put_u64(out, payload.size());
        offset += payload.size();
    }
    for (const auto& [name, payload] : sections) out += payload;
    return out;
}

inline CrabModel deserialize_model(const std::string& data) {
    using namespace detail;
    if (data.size() < 12 || data.compare(0, 4, "CRAB") != 0)
        throw ModelFormatError("not a model file (bad magic)");
    ByteReader header(data, 4, data.size(), "header");
    std::uint32_t version = header.u32();
    if (version != kModelFormatVersion)
        throw ModelFormatError("unsupported model format version " + std::to_string(version));
    std::uint32_t count = header.u32();
    std::map<std::string, std::pair<std::size_t, std::size_t>> table;  // name -> (begin, end)
    for (std::uint32_t i = 0; i < count; ++i) {
        std::string name = header.str();
        std::uint64_t off = header.u64(), len = header.u64();
        if (off > data.size() || len > data.size() - off)
            throw ModelFormatError("section '" + name + "' extends past end of file");
        if (!table.emplace(name, std::make_pair(std::size_t(off), std::size_t(off + len)))
                 .second)
            throw ModelFormatError("duplicate section '" + name + "'");
    }
    for (const char* required : {"meta", "rules", "vocab", "encoder", "head"})
        if (!table.count(required))
            throw ModelFormatError("model file is missing section '" + std::string(required) +
                                   "'");

    auto section_text = [&data, &table](const char* name) {
        auto [begin, end] = table.at(name);
        return data.substr(begin, end - begin);
    };

    ParsedMeta meta = parse_meta(section_text("meta"));
    NormRules rules;
    try {
        rules = parse_norm_rules(section_text("rules"));
    } catch (const DataError& e) {
        throw ModelFormatError("rules section: " + std::string(e.what()));
    }
    Vocab vocab;
    try {
        vocab = Vocab::parse(section_text("vocab"));
    } catch (const DataError& e) {
        throw ModelFormatError("vocab section: " + std::string(e.what()));
    }
    meta.enc_cfg.vocab_size = vocab.size();
    try {
        meta.enc_cfg.validate();
        meta.head_cfg.validate();
    } catch (const Error& e) {
        throw ModelFormatError("model configuration is invalid: " + std::string(e.what()));
    }

    auto [enc_begin, enc_end] = table.at("encoder");
    NamedTensorBlock enc_block = parse_tensor_block(data, enc_begin, enc_end, "encoder");
    std::size_t k = meta.enc_cfg.embed_dim;
    ToyEncoderParams ep;
    ep.embedding = enc_block.take("embedding", {meta.enc_cfg.vocab_size, k}, true, "encoder");
    ep.positional = enc_block.take("positional", {meta.enc_cfg.max_len, k}, false, "encoder");
    for (std::size_t l = 0; l < meta.enc_cfg.layers; ++l) {
        std::string prefix = "layer" + std::to_string(l) + ".";
        EncoderLayerParams lp;
        lp.wq = enc_block.take(prefix + "wq", {k, k}, true, "encoder");
        lp.wk = enc_block.take(prefix + "wk", {k, k}, true, "encoder");
        lp.wv = enc_block.take(prefix + "wv", {k, k}, true, "encoder");
        lp.wo = enc_block.take(prefix + "wo", {k, k}, true, "encoder");
        lp.wff1 = enc_block.take(prefix + "wff1", {k, 4 * k}, true, "encoder");
        lp.wff2 = enc_block.take(prefix + "wff2", {4 * k, k}, true, "encoder");
        lp.ln1_gain = enc_block.take(prefix + "ln1_gain", {k}, true, "encoder");
        lp.ln1_bias = enc_block.take(prefix + "ln1_bias", {k}, true, "encoder");
        lp.ln2_gain = enc_block.take(prefix + "ln2_gain", {k}, true, "encoder");
        lp.ln2_bias = enc_block.take(prefix + "ln2_bias", {k}, true, "encoder");
        ep.layers.push_back(std::move(lp));
    }
    if (enc_block.tensors.size() != 2 + 10 * meta.enc_cfg.layers)
        throw ModelFormatError("encoder section holds " +
                               std::to_string(enc_block.tensors.size()) + " tensors, expected " +
                               std::to_string(2 + 10 * meta.enc_cfg.layers));

    auto [head_begin, head_end] = table.at("head");
    NamedTensorBlock head_block = parse_tensor_block(data, head_begin, head_end, "head");
    const CrabConfig& hc = meta.head_cfg;
    CrabParams hp;
    for (std::size_t i = 0; i < hc.heads; ++i)
        hp.a.push_back(
            head_block.take("a" + std::to_string(i), {hc.classes, k}, true, "head"));
    hp.s = head_block.take("s", {hc.classes, k}, true, "head");
    hp.w_fc1 = head_block.take("w_fc1", {hc.token_positions, hc.fc1}, true, "head");
    hp.b_fc1 = head_block.take("b_fc1", {hc.fc1}, true, "head");
    hp.w_fc2 = head_block.take("w_fc2", {hc.heads * hc.fc1, hc.fc2}, true, "head");
    hp.b_fc2 = head_block.take("b_fc2", {hc.fc2}, true, "head");
    hp.w_lin = head_block.take("w_lin", {hc.fc2, 1}, true, "head");
    if (head_block.tensors.size() != hc.heads + 6)
        throw ModelFormatError("head section holds " +
                               std::to_string(head_block.tensors.size()) +
                               " tensors, expected " + std::to_string(hc.heads + 6));

    try {
        CrabModel model(std::move(rules), std::move(vocab), std::move(meta.class_names),
                        ToyTransformerEncoder(meta.enc_cfg, std::move(ep)), hc, std::move(hp));
        model.train_seed = meta.train_seed;
        model.train_epochs = meta.train_epochs;
        return model;
    } catch (const Error& e) {
        throw ModelFormatError("model file is internally inconsistent: " +
                               std::string(e.what()));
    }
}

inline void save_model(const CrabModel& model, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open '" + path + "' for writing");
    std::string bytes = serialize_model(model);
    out.write(bytes.data(), std::streamsize(bytes.size()));
    if (!out) throw DataError("failed to write '" + path + "'");
}

inline CrabModel load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open '" + path + "' for reading");
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw DataError("failed to read '" + path + "'");
    return deserialize_model(bytes);
}

}  // namespace crab
