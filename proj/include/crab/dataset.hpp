#pragma once

// Labeled corpus loading, class accounting, stratified splitting, and
// deterministic batch iteration.
//
// Corpus file format (UTF-8 TSV):
//
//   #classes<TAB>name0<TAB>name1...
//   label_name<TAB>text
//   ...
//
// Tabs, newlines, and backslashes inside text are escaped as \t, \n, \\.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "crab/errors.hpp"
#include "crab/io_util.hpp"
#include "crab/rng.hpp"

namespace crab {

struct LabeledExample {
    std::string text;
    std::size_t label = 0;
};

struct LabeledCorpus {
    std::vector<LabeledExample> examples;
    std::vector<std::string> class_names;

    std::size_t size() const { return examples.size(); }
    std::size_t num_classes() const { return class_names.size(); }
};

// ---------------------------------------------------------------------------
// Corpus file I/O.

namespace detail {

inline std::string escape_text(const std::string& s) {
    std::string out;
    out.reserve(s.size());
    for (char c : s) {
        if (c == '\\') out += "\\\\";
        else if (c == '\t') out += "\\t";
        else if (c == '\n') out += "\\n";
        else out += c;
    }
    return out;
}

inline std::string unescape_text(const std::string& s, std::size_t line_no) {
    std::string out;
    out.reserve(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] != '\\') {
            out += s[i];
            continue;
        }
        if (i + 1 >= s.size())
            throw ParseError("line " + std::to_string(line_no) + ": dangling escape");
        char c = s[++i];
        if (c == 't') out += '\t';
        else if (c == 'n') out += '\n';
        else if (c == '\\') out += '\\';
        else
            throw ParseError("line " + std::to_string(line_no) + ": unknown escape \\" +
                             std::string(1, c));
    }
    return out;
}

inline std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> fields;
    std::size_t pos = 0;
    while (true) {
        std::size_t tab = line.find('\t', pos);
        if (tab == std::string::npos) {
            fields.push_back(line.substr(pos));
            return fields;
        }
        fields.push_back(line.substr(pos, tab - pos));
        pos = tab + 1;
    }
}

}  // namespace detail

inline const std::string kCorpusHeaderTag = "#classes";

inline std::string format_corpus(const LabeledCorpus& corpus) {
    if (corpus.class_names.empty()) throw ContractError("corpus has no classes");
    std::string out = kCorpusHeaderTag;
    for (const auto& name : corpus.class_names) out += "\t" + name;
    out += "\n";
    for (const auto& ex : corpus.examples) {
        if (ex.label >= corpus.class_names.size())
            throw ContractError("label " + std::to_string(ex.label) + " outside " +
                                std::to_string(corpus.class_names.size()) + " classes");
        out += corpus.class_names[ex.label] + "\t" + detail::escape_text(ex.text) + "\n";
    }
    return out;
}

inline LabeledCorpus parse_corpus(const std::string& text) {
    LabeledCorpus corpus;
    std::size_t pos = 0, line_no = 0;
    while (pos < text.size()) {
        std::size_t eol = text.find('\n', pos);
        if (eol == std::string::npos) eol = text.size();
        std::string line = text.substr(pos, eol - pos);
        pos = eol + 1;
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        auto fields = detail::split_tabs(line);
        if (line_no == 1) {
            if (fields.size() < 2 || fields[0] != kCorpusHeaderTag)
                throw ParseError("line 1: expected '" + kCorpusHeaderTag + "<TAB>name...' header");
            for (std::size_t i = 1; i < fields.size(); ++i) {
                if (fields[i].empty()) throw ParseError("line 1: empty class name");
                if (std::find(corpus.class_names.begin(), corpus.class_names.end(), fields[i]) !=
                    corpus.class_names.end())
                    throw ParseError("line 1: duplicate class name '" + fields[i] + "'");
                corpus.class_names.push_back(fields[i]);
            }
            continue;
        }
        if (line.empty() && pos >= text.size()) break;  // trailing newline
        if (fields.size() != 2)
            throw ParseError("line " + std::to_string(line_no) +
                             ": expected 'label<TAB>text', got " + std::to_string(fields.size()) +
                             " fields");
        auto it = std::find(corpus.class_names.begin(), corpus.class_names.end(), fields[0]);
        if (it == corpus.class_names.end())
            throw DataError("line " + std::to_string(line_no) + ": unknown label '" + fields[0] +
                            "'");
        LabeledExample ex;
        ex.label = std::size_t(it - corpus.class_names.begin());
        ex.text = detail::unescape_text(fields[1], line_no);
        corpus.examples.push_back(std::move(ex));
    }
    if (line_no == 0) throw ParseError("empty corpus file");
    return corpus;
}

inline LabeledCorpus load_corpus(const std::string& path) {
    return parse_corpus(read_text_file(path));
}

inline void save_corpus(const LabeledCorpus& corpus, const std::string& path) {
    write_text_file(path, format_corpus(corpus));
}

// ---------------------------------------------------------------------------
// Class accounting.

inline std::vector<std::size_t> class_distribution(const LabeledCorpus& corpus) {
    std::vector<std::size_t> counts(corpus.num_classes(), 0);
    for (const auto& ex : corpus.examples) {
        if (ex.label >= counts.size())
            throw ContractError("label " + std::to_string(ex.label) + " outside " +
                                std::to_string(counts.size()) + " classes");
        ++counts[ex.label];
    }
    return counts;
}

// ---------------------------------------------------------------------------
// Stratified splitting.

struct SplitSpec {
    double train_ratio = 0.8;
    double val_ratio = 0.1;
    double test_ratio = 0.1;
    std::uint64_t seed = 0;

    void validate() const {
        if (train_ratio < 0 || val_ratio < 0 || test_ratio < 0)
            throw ConfigError("split ratios must be non-negative");
        if (std::abs(train_ratio + val_ratio + test_ratio - 1.0) > 1e-9)
            throw ConfigError("split ratios must sum to 1");
    }
};

struct SplitIndices {
    std::vector<std::size_t> train, val, test;
};

// Per class of size n_k: train takes floor(r1*n_k), val takes
// floor((r1+r2)*n_k) - floor(r1*n_k), test absorbs the remainder.  Which
// examples land where is decided by a per-class seeded shuffle; each split
// then keeps corpus order.  The tiny nudge before flooring makes the floor
// exact when r*n_k is an integer that binary floating point undershoots.
inline SplitIndices stratified_split(const LabeledCorpus& corpus, const SplitSpec& spec) {
    spec.validate();
    std::vector<std::vector<std::size_t>> by_class(corpus.num_classes());
    for (std::size_t i = 0; i < corpus.examples.size(); ++i)
        by_class[corpus.examples[i].label].push_back(i);
    for (std::size_t k = 0; k < by_class.size(); ++k)
        if (by_class[k].empty())
            throw DataError("class '" + corpus.class_names[k] + "' has no examples to stratify");

    SplitIndices out;
    for (std::size_t k = 0; k < by_class.size(); ++k) {
        auto& ids = by_class[k];
        Rng rng(Rng::derive(spec.seed, k));
        rng.shuffle(ids);
        double n = double(ids.size());
        std::size_t n_train = std::size_t(std::floor(spec.train_ratio * n + 1e-9));
        std::size_t n_train_val =
            std::size_t(std::floor((spec.train_ratio + spec.val_ratio) * n + 1e-9));
        for (std::size_t i = 0; i < ids.size(); ++i) {
            if (i < n_train) out.train.push_back(ids[i]);
            else if (i < n_train_val) out.val.push_back(ids[i]);
            else out.test.push_back(ids[i]);
        }
    }
    std::sort(out.train.begin(), out.train.end());
    std::sort(out.val.begin(), out.val.end());
    std::sort(out.test.begin(), out.test.end());
    return out;
}

inline LabeledCorpus subset(const LabeledCorpus& corpus, const std::vector<std::size_t>& ids) {
    LabeledCorpus out;
    out.class_names = corpus.class_names;
    out.examples.reserve(ids.size());
    for (std::size_t i : ids) {
        if (i >= corpus.examples.size())
            throw ContractError("example index " + std::to_string(i) + " out of range");
        out.examples.push_back(corpus.examples[i]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Batch iteration: one seeded permutation, consecutive chunks, short tail kept.

inline std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size,
                                                          std::uint64_t seed) {
    if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(seed);
    rng.shuffle(order);
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t start = 0; start < n; start += batch_size) {
        std::size_t end = std::min(n, start + batch_size);
        batches.emplace_back(order.begin() + std::ptrdiff_t(start),
                             order.begin() + std::ptrdiff_t(end));
    }
    return batches;
}

}  // namespace crab
