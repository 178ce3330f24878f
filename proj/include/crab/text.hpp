#pragma once

// Tweet text pipeline: normalization, tokenization, vocabulary, id encoding.
//
// Normalization rewrites raw tweets into a canonical lowercase form where
// volatile surface features are folded into special tokens:
//
//   URLs            -> ⟨URL⟩
//   @mentions       -> ⟨USER⟩
//   emojis/emoticons-> a small set of group tokens (⟨EMO_POS⟩, ⟨EMO_NEG⟩, ...)
//   #hashtag        -> hashtag word with the marker stripped
//
// No stemming, lemmatization, or stopword removal is applied.  The rewrite is
// idempotent: special tokens already present in the input are protected from
// every pass, and stray angle-bracket codepoints are escaped to ASCII so no
// uncontrolled text can collide with the token alphabet.

#include <algorithm>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "crab/errors.hpp"
#include "crab/io_util.hpp"

namespace crab {

// ---------------------------------------------------------------------------
// Special tokens.  Delimited by U+27E8/U+27E9 (mathematical angle brackets),
// which the normalizer escapes out of natural text, so no tokenizable text
// can produce them.

inline const std::string kLAngle = "\xE2\x9F\xA8";  // U+27E8
inline const std::string kRAngle = "\xE2\x9F\xA9";  // U+27E9

inline std::string special_token(const std::string& name) { return kLAngle + name + kRAngle; }

inline const std::string kPadToken = special_token("PAD");
inline const std::string kUnkToken = special_token("UNK");
inline const std::string kClsToken = special_token("CLS");
inline const std::string kUrlToken = special_token("URL");
inline const std::string kUserToken = special_token("USER");

inline constexpr std::size_t kPadId = 0;
inline constexpr std::size_t kUnkId = 1;
inline constexpr std::size_t kClsId = 2;

// ---------------------------------------------------------------------------
// UTF-8 scanning.  Invalid bytes decode to U+FFFD and advance by one byte, so
// normalization never throws on malformed input.

namespace utf8 {

inline constexpr std::uint32_t kReplacement = 0xFFFD;

// Decodes the codepoint starting at byte i; writes its byte length to len.
inline std::uint32_t decode(const std::string& s, std::size_t i, std::size_t& len) {
    const auto b = [&](std::size_t k) { return static_cast<unsigned char>(s[k]); };
    unsigned char c = b(i);
    std::size_t remain = s.size() - i;
    if (c < 0x80) {
        len = 1;
        return c;
    }
    auto cont = [&](std::size_t k) { return k < s.size() && (b(k) & 0xC0) == 0x80; };
    if ((c & 0xE0) == 0xC0 && remain >= 2 && cont(i + 1)) {
        std::uint32_t cp = (std::uint32_t(c & 0x1F) << 6) | (b(i + 1) & 0x3F);
        if (cp >= 0x80) {
            len = 2;
            return cp;
        }
    } else if ((c & 0xF0) == 0xE0 && remain >= 3 && cont(i + 1) && cont(i + 2)) {
        std::uint32_t cp = (std::uint32_t(c & 0x0F) << 12) | (std::uint32_t(b(i + 1) & 0x3F) << 6) |
                           (b(i + 2) & 0x3F);
        if (cp >= 0x800 && !(cp >= 0xD800 && cp <= 0xDFFF)) {
            len = 3;
            return cp;
        }
    } else if ((c & 0xF8) == 0xF0 && remain >= 4 && cont(i + 1) && cont(i + 2) && cont(i + 3)) {
        std::uint32_t cp = (std::uint32_t(c & 0x07) << 18) | (std::uint32_t(b(i + 1) & 0x3F) << 12) |
                           (std::uint32_t(b(i + 2) & 0x3F) << 6) | (b(i + 3) & 0x3F);
        if (cp >= 0x10000 && cp <= 0x10FFFF) {
            len = 4;
            return cp;
        }
    }
    len = 1;
    return kReplacement;
}

inline std::string encode(std::uint32_t cp) {
    std::string out;
    if (cp < 0x80) {
        out += char(cp);
    } else if (cp < 0x800) {
        out += char(0xC0 | (cp >> 6));
        out += char(0x80 | (cp & 0x3F));
    } else if (cp < 0x10000) {
        out += char(0xE0 | (cp >> 12));
        out += char(0x80 | ((cp >> 6) & 0x3F));
        out += char(0x80 | (cp & 0x3F));
    } else {
        out += char(0xF0 | (cp >> 18));
        out += char(0x80 | ((cp >> 12) & 0x3F));
        out += char(0x80 | ((cp >> 6) & 0x3F));
        out += char(0x80 | (cp & 0x3F));
    }
    return out;
}

}  // namespace utf8

// ---------------------------------------------------------------------------
// Normalization rules.

// One grouping rule: either a literal (ASCII emoticon) pattern or an
// inclusive codepoint range, mapped to a group token.
struct EmojiRule {
    std::string pattern;      // literal form; empty for range rules
    std::uint32_t lo = 0;     // range form, inclusive
    std::uint32_t hi = 0;
    std::string token;

    bool is_range() const { return pattern.empty(); }
};

inline const std::string kEmoPosToken = special_token("EMO_POS");
inline const std::string kEmoNegToken = special_token("EMO_NEG");
inline const std::string kEmoNeutralToken = special_token("EMO_NEUTRAL");

struct NormRules {
    std::vector<EmojiRule> emoji_groups;
    std::string url_token = kUrlToken;
    std::string mention_token = kUserToken;

    // Every token the normalizer may emit or must protect.
    std::vector<std::string> known_tokens() const {
        std::set<std::string> seen{kPadToken, kUnkToken, kClsToken, url_token, mention_token};
        for (const auto& r : emoji_groups) seen.insert(r.token);
        std::vector<std::string> out(seen.begin(), seen.end());
        // longest first so prefix tokens never shadow longer ones
        std::stable_sort(out.begin(), out.end(), [](const std::string& a, const std::string& b) {
            return a.size() > b.size();
        });
        return out;
    }

    static NormRules defaults();
};

namespace detail {

inline void add_lit(std::vector<EmojiRule>& v, const std::string& pat, const std::string& tok) {
    v.push_back(EmojiRule{pat, 0, 0, tok});
}
inline void add_range(std::vector<EmojiRule>& v, std::uint32_t lo, std::uint32_t hi,
                      const std::string& tok) {
    v.push_back(EmojiRule{"", lo, hi, tok});
}

}  // namespace detail

// Built-in grouping table, version 1.  Curated rather than exhaustive; texts
// can override it with a rule file.  Emoji not covered by a rule pass through
// as ordinary characters.  Skin-tone modifiers, variation selectors, and the
// zero-width joiner are grouped as neutral so composed emoji degrade to their
// base groups instead of leaking raw format characters.
inline NormRules NormRules::defaults() {
    NormRules rules;
    auto& v = rules.emoji_groups;
    // ASCII emoticons; matching is ASCII-case-insensitive, so patterns are
    // written lowercase.
    detail::add_lit(v, ":-)", kEmoPosToken);
    detail::add_lit(v, ":)", kEmoPosToken);
    detail::add_lit(v, ":-d", kEmoPosToken);
    detail::add_lit(v, ":d", kEmoPosToken);
    detail::add_lit(v, ":-p", kEmoPosToken);
    detail::add_lit(v, ":p", kEmoPosToken);
    detail::add_lit(v, ";-)", kEmoPosToken);
    detail::add_lit(v, ";)", kEmoPosToken);
    detail::add_lit(v, "=)", kEmoPosToken);
    detail::add_lit(v, "=d", kEmoPosToken);
    detail::add_lit(v, "xd", kEmoPosToken);
    detail::add_lit(v, ":')", kEmoPosToken);
    detail::add_lit(v, ":3", kEmoPosToken);
    detail::add_lit(v, "<3", kEmoPosToken);
    detail::add_lit(v, "^_^", kEmoPosToken);
    detail::add_lit(v, ">:(", kEmoNegToken);
    detail::add_lit(v, ":-(", kEmoNegToken);
    detail::add_lit(v, ":(", kEmoNegToken);
    detail::add_lit(v, ":'(", kEmoNegToken);
    detail::add_lit(v, ";(", kEmoNegToken);
    detail::add_lit(v, "=(", kEmoNegToken);
    detail::add_lit(v, ":-/", kEmoNegToken);
    detail::add_lit(v, ":/", kEmoNegToken);
    detail::add_lit(v, ":-\\", kEmoNegToken);
    detail::add_lit(v, ":\\", kEmoNegToken);
    detail::add_lit(v, ":@", kEmoNegToken);
    detail::add_lit(v, "-_-", kEmoNegToken);
    detail::add_lit(v, "</3", kEmoNegToken);
    detail::add_lit(v, ":-|", kEmoNeutralToken);
    detail::add_lit(v, ":|", kEmoNeutralToken);
    detail::add_lit(v, ":-o", kEmoNeutralToken);
    detail::add_lit(v, ":o", kEmoNeutralToken);
    detail::add_lit(v, ":-s", kEmoNeutralToken);
    detail::add_lit(v, ":s", kEmoNeutralToken);
    detail::add_lit(v, "o_o", kEmoNeutralToken);
    detail::add_lit(v, ":x", kEmoNeutralToken);
    // Positive faces, hearts, gestures.
    detail::add_range(v, 0x263A, 0x263A, kEmoPosToken);   // smiling face
    detail::add_range(v, 0x2665, 0x2665, kEmoPosToken);   // heart suit
    detail::add_range(v, 0x2728, 0x2728, kEmoPosToken);   // sparkles
    detail::add_range(v, 0x2763, 0x2764, kEmoPosToken);   // heart exclamation, heavy heart
    detail::add_range(v, 0x1F389, 0x1F389, kEmoPosToken); // party popper
    detail::add_range(v, 0x1F44D, 0x1F44D, kEmoPosToken); // thumbs up
    detail::add_range(v, 0x1F44F, 0x1F44F, kEmoPosToken); // clapping hands
    detail::add_range(v, 0x1F493, 0x1F493, kEmoPosToken); // beating heart
    detail::add_range(v, 0x1F495, 0x1F49F, kEmoPosToken); // heart cluster
    detail::add_range(v, 0x1F600, 0x1F60F, kEmoPosToken); // grins through smirk
    detail::add_range(v, 0x1F617, 0x1F61D, kEmoPosToken); // kisses, tongue out
    detail::add_range(v, 0x1F638, 0x1F63D, kEmoPosToken); // happy cats
    detail::add_range(v, 0x1F642, 0x1F643, kEmoPosToken); // slight/upside-down smile
    detail::add_range(v, 0x1F917, 0x1F917, kEmoPosToken); // hugging face
    detail::add_range(v, 0x1F923, 0x1F923, kEmoPosToken); // rolling on the floor
    detail::add_range(v, 0x1F929, 0x1F929, kEmoPosToken); // star-struck
    detail::add_range(v, 0x1F970, 0x1F970, kEmoPosToken); // smiling with hearts
    detail::add_range(v, 0x1F973, 0x1F973, kEmoPosToken); // partying face
    // Negative faces, broken heart, gestures.
    detail::add_range(v, 0x2639, 0x2639, kEmoNegToken);   // frowning face
    detail::add_range(v, 0x1F44E, 0x1F44E, kEmoNegToken); // thumbs down
    detail::add_range(v, 0x1F494, 0x1F494, kEmoNegToken); // broken heart
    detail::add_range(v, 0x1F61E, 0x1F62B, kEmoNegToken); // disappointed through tired
    detail::add_range(v, 0x1F62D, 0x1F62D, kEmoNegToken); // loudly crying
    detail::add_range(v, 0x1F630, 0x1F631, kEmoNegToken); // cold sweat, scream
    detail::add_range(v, 0x1F63E, 0x1F63F, kEmoNegToken); // unhappy cats
    detail::add_range(v, 0x1F641, 0x1F641, kEmoNegToken); // slightly frowning
    detail::add_range(v, 0x1F92C, 0x1F92C, kEmoNegToken); // cursing face
    // Neutral faces and composition marks.
    detail::add_range(v, 0x200D, 0x200D, kEmoNeutralToken);   // zero-width joiner
    detail::add_range(v, 0xFE0E, 0xFE0F, kEmoNeutralToken);   // variation selectors
    detail::add_range(v, 0x1F3FB, 0x1F3FF, kEmoNeutralToken); // skin tones
    detail::add_range(v, 0x1F610, 0x1F616, kEmoNeutralToken); // neutral through confused
    detail::add_range(v, 0x1F62C, 0x1F62C, kEmoNeutralToken); // grimacing
    detail::add_range(v, 0x1F62E, 0x1F62F, kEmoNeutralToken); // open mouth, hushed
    detail::add_range(v, 0x1F632, 0x1F637, kEmoNeutralToken); // astonished, sleep, mask
    detail::add_range(v, 0x1F644, 0x1F644, kEmoNeutralToken); // rolling eyes
    detail::add_range(v, 0x1F914, 0x1F914, kEmoNeutralToken); // thinking face
    return rules;
}

// ---------------------------------------------------------------------------
// Rule file format (versioned):
//
//   # crab-norm-rules v1
//   :)<TAB>⟨EMO_POS⟩
//   U+1F600..U+1F60F<TAB>⟨EMO_POS⟩
//   U+2764<TAB>⟨EMO_POS⟩
//
// `#` starts a comment line; blank lines are ignored.  Codepoint ranges must
// not overlap, so rule application is order-independent.

inline const std::string kNormRulesHeader = "# crab-norm-rules v1";

namespace detail {

inline bool parse_cp(const std::string& s, std::uint32_t& cp) {
    if (s.size() < 3 || s.size() > 8 || s[0] != 'U' || s[1] != '+') return false;
    std::uint32_t v = 0;
    for (std::size_t i = 2; i < s.size(); ++i) {
        char c = s[i];
        std::uint32_t d;
        if (c >= '0' && c <= '9') d = std::uint32_t(c - '0');
        else if (c >= 'A' && c <= 'F') d = std::uint32_t(c - 'A' + 10);
        else if (c >= 'a' && c <= 'f') d = std::uint32_t(c - 'a' + 10);
        else return false;
        v = v * 16 + d;
    }
    cp = v;
    return cp <= 0x10FFFF;
}

inline std::string format_cp(std::uint32_t cp) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "U+%04X", cp);
    return buf;
}

}  // namespace detail

inline std::string format_norm_rules(const NormRules& rules) {
    std::string out = kNormRulesHeader + "\n";
    out += "# pattern<TAB>token; patterns are literal emoticons or codepoint ranges\n";
    for (const auto& r : rules.emoji_groups) {
        if (r.is_range()) {
            out += detail::format_cp(r.lo);
            if (r.hi != r.lo) out += ".." + detail::format_cp(r.hi);
        } else {
            out += r.pattern;
        }
        out += "\t" + r.token + "\n";
    }
    return out;
}

inline NormRules parse_norm_rules(const std::string& text) {
    NormRules rules;
    rules.emoji_groups.clear();
    std::size_t pos = 0, line_no = 0;
    bool saw_header = false;
    while (pos <= text.size()) {
        std::size_t eol = text.find('\n', pos);
        std::string line = text.substr(pos, eol == std::string::npos ? std::string::npos : eol - pos);
        pos = eol == std::string::npos ? text.size() + 1 : eol + 1;
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line_no == 1) {
            if (line != kNormRulesHeader)
                throw ParseError("rule file must start with '" + kNormRulesHeader + "'");
            saw_header = true;
            continue;
        }
        if (line.empty() || line[0] == '#') continue;
        std::size_t tab = line.find('\t');
        if (tab == std::string::npos)
            throw ParseError("rule line " + std::to_string(line_no) + ": expected pattern<TAB>token");
        std::string pat = line.substr(0, tab);
        std::string tok = line.substr(tab + 1);
        if (pat.empty() || tok.empty() || tok.find_first_of(" \t") != std::string::npos)
            throw ParseError("rule line " + std::to_string(line_no) + ": malformed rule");
        std::uint32_t lo, hi;
        std::size_t dots = pat.find("..");
        if (pat.rfind("U+", 0) == 0 && dots != std::string::npos &&
            detail::parse_cp(pat.substr(0, dots), lo) && detail::parse_cp(pat.substr(dots + 2), hi)) {
            if (lo > hi)
                throw ParseError("rule line " + std::to_string(line_no) + ": empty codepoint range");
            detail::add_range(rules.emoji_groups, lo, hi, tok);
        } else if (pat.rfind("U+", 0) == 0 && dots == std::string::npos && detail::parse_cp(pat, lo)) {
            detail::add_range(rules.emoji_groups, lo, lo, tok);
        } else {
            detail::add_lit(rules.emoji_groups, pat, tok);
        }
    }
    if (!saw_header) throw ParseError("rule file must start with '" + kNormRulesHeader + "'");
    // order independence requires disjoint ranges
    std::vector<std::pair<std::uint32_t, std::uint32_t>> spans;
    for (const auto& r : rules.emoji_groups)
        if (r.is_range()) spans.emplace_back(r.lo, r.hi);
    std::sort(spans.begin(), spans.end());
    for (std::size_t i = 1; i < spans.size(); ++i)
        if (spans[i].first <= spans[i - 1].second)
            throw ParseError("overlapping codepoint ranges " + detail::format_cp(spans[i - 1].first) +
                             " and " + detail::format_cp(spans[i].first));
    return rules;
}

inline NormRules load_norm_rules(const std::string& path) {
    return parse_norm_rules(read_text_file(path));
}

// ---------------------------------------------------------------------------
// Normalization.

namespace detail {

inline bool is_ascii_space(std::uint32_t cp) {
    return cp == ' ' || cp == '\t' || cp == '\n' || cp == '\r' || cp == '\v' || cp == '\f';
}
inline bool is_word_char(std::uint32_t cp) {
    return (cp >= 'a' && cp <= 'z') || (cp >= 'A' && cp <= 'Z') || (cp >= '0' && cp <= '9') ||
           cp == '_';
}
inline char ascii_lower(char c) { return (c >= 'A' && c <= 'Z') ? char(c - 'A' + 'a') : c; }

// Case-insensitive (ASCII) literal match at byte offset i.
inline bool lit_match(const std::string& s, std::size_t i, const std::string& pat) {
    if (i + pat.size() > s.size()) return false;
    for (std::size_t k = 0; k < pat.size(); ++k)
        if (ascii_lower(s[i + k]) != pat[k]) return false;
    return true;
}

// Matcher state shared by the normalization scan.
struct RuleIndex {
    std::vector<const EmojiRule*> literals;  // longest pattern first
    std::vector<const EmojiRule*> ranges;
    std::vector<std::string> known;          // protected tokens, longest first

    explicit RuleIndex(const NormRules& rules) {
        for (const auto& r : rules.emoji_groups)
            (r.is_range() ? ranges : literals).push_back(&r);
        std::stable_sort(literals.begin(), literals.end(),
                         [](const EmojiRule* a, const EmojiRule* b) {
                             return a->pattern.size() > b->pattern.size();
                         });
        known = rules.known_tokens();
    }

    const std::string* match_known(const std::string& s, std::size_t i) const {
        for (const auto& tok : known)
            if (s.compare(i, tok.size(), tok) == 0) return &tok;
        return nullptr;
    }
};

// Escapes stray token-delimiter codepoints to ASCII brackets; exact known
// special tokens pass through untouched.
inline std::string escape_delimiters(const std::string& s, const RuleIndex& index) {
    std::string out;
    out.reserve(s.size());
    std::size_t i = 0;
    while (i < s.size()) {
        if (const std::string* tok = index.match_known(s, i)) {
            out += *tok;
            i += tok->size();
            continue;
        }
        std::size_t len;
        std::uint32_t cp = utf8::decode(s, i, len);
        if (cp == 0x27E8) out += '<';
        else if (cp == 0x27E9) out += '>';
        else out.append(s, i, len);
        i += len;
    }
    return out;
}

inline std::string collapse_whitespace(const std::string& s) {
    std::string out;
    out.reserve(s.size());
    bool pending = false;
    for (char c : s) {
        if (is_ascii_space(std::uint32_t(static_cast<unsigned char>(c)))) {
            pending = !out.empty();
        } else {
            if (pending) out += ' ';
            pending = false;
            out += c;
        }
    }
    return out;
}

}  // namespace detail

inline std::string normalize(const std::string& raw, const NormRules& rules) {
    detail::RuleIndex index(rules);
    const std::string s = detail::escape_delimiters(raw, index);
    std::string out;
    out.reserve(s.size() + 16);

    std::uint32_t prev_cp = ' ';  // start of text behaves like a boundary
    std::size_t i = 0;
    while (i < s.size()) {
        // protected special tokens pass through verbatim
        if (const std::string* tok = index.match_known(s, i)) {
            out += *tok;
            i += tok->size();
            prev_cp = 0x27E9;
            continue;
        }

        std::size_t len;
        std::uint32_t cp = utf8::decode(s, i, len);
        bool at_boundary = !detail::is_word_char(prev_cp);

        // URLs: scheme or www. prefix at a word boundary, consumed to whitespace
        if (at_boundary &&
            (detail::lit_match(s, i, "http://") || detail::lit_match(s, i, "https://") ||
             detail::lit_match(s, i, "www."))) {
            std::size_t j = i;
            while (j < s.size() &&
                   !detail::is_ascii_space(static_cast<unsigned char>(s[j])))
                ++j;
            out += ' ' + rules.url_token + ' ';
            prev_cp = ' ';
            i = j;
            continue;
        }

        // @mentions: handle characters only
        if (cp == '@' && at_boundary) {
            std::size_t j = i + 1;
            while (j < s.size() && detail::is_word_char(static_cast<unsigned char>(s[j]))) ++j;
            if (j > i + 1) {
                out += ' ' + rules.mention_token + ' ';
                prev_cp = ' ';
                i = j;
                continue;
            }
        }

        // #hashtag: strip the marker run, keep the word; the space keeps the
        // word from fusing with whatever preceded the marker
        if (cp == '#' && at_boundary) {
            std::size_t j = i;
            while (j < s.size() && s[j] == '#') ++j;
            std::uint32_t next = j < s.size() ? static_cast<unsigned char>(s[j]) : 0;
            if ((next >= 'a' && next <= 'z') || (next >= 'A' && next <= 'Z') ||
                (next >= '0' && next <= '9')) {
                out += ' ';
                prev_cp = ' ';
                i = j;
                continue;
            }
        }

        // emoticon literals, longest first; a match must end at a word
        // boundary, and one that starts with a word character must also
        // begin at one
        if (cp < 0x80) {
            const EmojiRule* hit = nullptr;
            for (const EmojiRule* r : index.literals) {
                if (!detail::lit_match(s, i, r->pattern)) continue;
                std::size_t end = i + r->pattern.size();
                bool end_ok =
                    end >= s.size() || !detail::is_word_char(static_cast<unsigned char>(s[end]));
                bool start_ok = !detail::is_word_char(
                                    static_cast<unsigned char>(r->pattern[0])) ||
                                at_boundary;
                if (end_ok && start_ok) {
                    hit = r;
                    break;
                }
            }
            if (hit) {
                out += ' ' + hit->token + ' ';
                prev_cp = ' ';
                i += hit->pattern.size();
                continue;
            }
        } else {
            const EmojiRule* hit = nullptr;
            for (const EmojiRule* r : index.ranges)
                if (cp >= r->lo && cp <= r->hi) {
                    hit = r;
                    break;
                }
            if (hit) {
                out += ' ' + hit->token + ' ';
                prev_cp = ' ';
                i += len;
                continue;
            }
        }

        // plain character: lowercase ASCII letters, keep everything else
        if (cp < 0x80) out += detail::ascii_lower(char(cp));
        else out.append(s, i, len);
        prev_cp = cp;
        i += len;
    }
    return detail::collapse_whitespace(out);
}

// ---------------------------------------------------------------------------
// Tokenization: whitespace split, punctuation detached, ⟨…⟩ tokens atomic.

inline std::vector<std::string> tokenize(const std::string& text) {
    std::vector<std::string> tokens;
    std::string word;
    auto flush = [&] {
        if (!word.empty()) {
            tokens.push_back(word);
            word.clear();
        }
    };
    std::size_t i = 0;
    while (i < text.size()) {
        std::size_t len;
        std::uint32_t cp = utf8::decode(text, i, len);
        if (cp == 0x27E8) {
            // atomic special token if a closer exists
            std::size_t close = text.find(kRAngle, i + len);
            if (close != std::string::npos) {
                flush();
                tokens.push_back(text.substr(i, close + kRAngle.size() - i));
                i = close + kRAngle.size();
                continue;
            }
        }
        if (detail::is_ascii_space(cp)) {
            flush();
        } else if (cp < 0x80 && !detail::is_word_char(cp)) {
            flush();
            tokens.push_back(std::string(1, char(cp)));
        } else {
            word.append(text, i, len);
        }
        i += len;
    }
    flush();
    return tokens;
}

// ---------------------------------------------------------------------------
// Vocabulary.

class Vocab {
public:
    Vocab() {
        for (const auto& tok : {kPadToken, kUnkToken, kClsToken}) push(tok);
    }

    // Frequency-ordered construction: tokens occurring at least min_count
    // times, most frequent first, ties lexicographic, capped at max_size
    // entries including the specials (0 = no cap).
    static Vocab build(const std::vector<std::vector<std::string>>& corpus, std::size_t min_count,
                       std::size_t max_size) {
        if (min_count < 1) throw ConfigError("min_count must be at least 1");
        if (max_size != 0 && max_size < 3) throw ConfigError("max_size must admit the special tokens");
        std::map<std::string, std::size_t> freq;
        for (const auto& toks : corpus)
            for (const auto& t : toks) ++freq[t];
        std::vector<std::pair<std::string, std::size_t>> entries;
        for (auto& [tok, n] : freq)
            if (n >= min_count) entries.emplace_back(tok, n);
        std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
            if (a.second != b.second) return a.second > b.second;
            return a.first < b.first;
        });
        Vocab v;
        for (const auto& [tok, n] : entries) {
            (void)n;
            if (max_size != 0 && v.size() >= max_size) break;
            if (!v.contains(tok)) v.push(tok);
        }
        return v;
    }

    std::size_t size() const { return id_to_token_.size(); }
    bool contains(const std::string& tok) const { return token_to_id_.count(tok) != 0; }

    std::size_t id(const std::string& tok) const {
        auto it = token_to_id_.find(tok);
        return it == token_to_id_.end() ? kUnkId : it->second;
    }

    const std::string& token(std::size_t id) const {
        if (id >= id_to_token_.size())
            throw DataError("token id " + std::to_string(id) + " out of range for vocab of " +
                            std::to_string(id_to_token_.size()));
        return id_to_token_[id];
    }

    // One token per line; the line number is the id.
    std::string format() const {
        std::string out;
        for (const auto& tok : id_to_token_) out += tok + "\n";
        return out;
    }

    void save(const std::string& path) const { write_text_file(path, format()); }

    static Vocab parse(const std::string& text) {
        Vocab v;
        v.token_to_id_.clear();
        v.id_to_token_.clear();
        std::size_t pos = 0, line_no = 0;
        while (pos < text.size()) {
            std::size_t eol = text.find('\n', pos);
            if (eol == std::string::npos) eol = text.size();
            std::string tok = text.substr(pos, eol - pos);
            pos = eol + 1;
            ++line_no;
            if (!tok.empty() && tok.back() == '\r') tok.pop_back();
            if (tok.empty()) throw ParseError("vocab line " + std::to_string(line_no) + " is empty");
            if (v.contains(tok))
                throw ParseError("vocab line " + std::to_string(line_no) + " duplicates '" + tok + "'");
            v.push(tok);
        }
        if (v.size() < 3 || v.id_to_token_[kPadId] != kPadToken ||
            v.id_to_token_[kUnkId] != kUnkToken || v.id_to_token_[kClsId] != kClsToken)
            throw ParseError("vocab must pin the special tokens to ids 0, 1, 2");
        return v;
    }

    static Vocab load(const std::string& path) { return parse(read_text_file(path)); }

private:
    void push(const std::string& tok) {
        token_to_id_.emplace(tok, id_to_token_.size());
        id_to_token_.push_back(tok);
    }

    std::unordered_map<std::string, std::size_t> token_to_id_;
    std::vector<std::string> id_to_token_;
};

// ---------------------------------------------------------------------------
// Fixed-length id encoding.

struct Encoded {
    std::vector<std::size_t> ids;   // length max_len, leading ⟨CLS⟩
    std::vector<int> mask;          // 1 on real positions, then 0s
};

inline Encoded encode_ids(const std::vector<std::string>& tokens, const Vocab& vocab,
                          std::size_t max_len) {
    if (max_len < 2)
        throw ConfigError("max_len must be at least 2 to fit " + kClsToken + " plus one token");
    Encoded enc;
    enc.ids.assign(max_len, kPadId);
    enc.mask.assign(max_len, 0);
    enc.ids[0] = kClsId;
    enc.mask[0] = 1;
    std::size_t n = std::min(tokens.size(), max_len - 1);  // right truncation
    for (std::size_t i = 0; i < n; ++i) {
        enc.ids[i + 1] = vocab.id(tokens[i]);
        enc.mask[i + 1] = 1;
    }
    return enc;
}

}  // namespace crab
