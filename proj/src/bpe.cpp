// SPDX-License-Identifier: Apache-2.0
#include "gptlab/bpe.hpp"

#include <algorithm>
#include <fstream>
#include <limits>

#include "json.hpp"

namespace gptlab {

using nlohmann::json;

namespace {

constexpr const char* kEosToken = "<|endoftext|>";

bool is_ascii_letter(unsigned char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c >= 0x80;
}
bool is_ascii_digit(unsigned char c) { return c >= '0' && c <= '9'; }
bool is_space_byte(unsigned char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

// GPT-2's byte <-> printable-unicode remapping, used only to read and write
// the vocab/merges file format.
std::vector<std::string> bytes_to_unicode_table() {
    std::vector<int> bs;
    for (int b = int('!'); b <= int('~'); ++b) bs.push_back(b);
    for (int b = 0xa1; b <= 0xac; ++b) bs.push_back(b);
    for (int b = 0xae; b <= 0xff; ++b) bs.push_back(b);
    std::vector<int> cs = bs;
    int n = 0;
    for (int b = 0; b < 256; ++b) {
        if (std::find(bs.begin(), bs.end(), b) == bs.end()) {
            bs.push_back(b);
            cs.push_back(256 + n);
            ++n;
        }
    }
    std::vector<std::string> table(256);
    auto encode_utf8 = [](int cp) {
        std::string out;
        if (cp < 0x80) {
            out.push_back(char(cp));
        } else if (cp < 0x800) {
            out.push_back(char(0xc0 | (cp >> 6)));
            out.push_back(char(0x80 | (cp & 0x3f)));
        } else {
            out.push_back(char(0xe0 | (cp >> 12)));
            out.push_back(char(0x80 | ((cp >> 6) & 0x3f)));
            out.push_back(char(0x80 | (cp & 0x3f)));
        }
        return out;
    };
    for (std::size_t i = 0; i < bs.size(); ++i) table[std::size_t(bs[i])] = encode_utf8(cs[i]);
    return table;
}

const std::vector<std::string>& byte_unicode_table() {
    static const std::vector<std::string> table = bytes_to_unicode_table();
    return table;
}

std::string bytes_to_printable(std::string_view raw) {
    const auto& table = byte_unicode_table();
    std::string out;
    for (const char c : raw) out += table[static_cast<unsigned char>(c)];
    return out;
}

std::string printable_to_bytes(std::string_view printable, const std::string& where) {
    // Inverse of the remapping: decode one mapped code point per byte.
    static const std::unordered_map<std::string, unsigned char> inverse = [] {
        std::unordered_map<std::string, unsigned char> m;
        const auto& table = byte_unicode_table();
        for (int b = 0; b < 256; ++b) m[table[std::size_t(b)]] = static_cast<unsigned char>(b);
        return m;
    }();
    std::string out;
    std::size_t i = 0;
    while (i < printable.size()) {
        const unsigned char c = static_cast<unsigned char>(printable[i]);
        std::size_t len = 1;
        if ((c & 0xe0u) == 0xc0u) len = 2;
        else if ((c & 0xf0u) == 0xe0u) len = 3;
        else if ((c & 0xf8u) == 0xf0u) len = 4;
        if (i + len > printable.size()) throw ParseError(where + ": truncated UTF-8 token");
        const auto it = inverse.find(std::string(printable.substr(i, len)));
        if (it == inverse.end()) throw ParseError(where + ": unmappable token character");
        out.push_back(char(it->second));
        i += len;
    }
    return out;
}

}  // namespace

std::vector<std::string> pretokenize(std::string_view text) {
    std::vector<std::string> chunks;
    std::size_t i = 0;
    const std::size_t n = text.size();
    auto peek = [&](std::size_t k) -> unsigned char {
        return k < n ? static_cast<unsigned char>(text[k]) : 0;
    };
    while (i < n) {
        std::size_t start = i;
        const unsigned char c = peek(i);
        // contractions: 's 't 're 've 'm 'll 'd
        if (c == '\'' && i + 1 < n) {
            const unsigned char c1 = peek(i + 1);
            const unsigned char c2 = peek(i + 2);
            if (c1 == 's' || c1 == 't' || c1 == 'm' || c1 == 'd') {
                chunks.emplace_back(text.substr(i, 2));
                i += 2;
                continue;
            }
            if ((c1 == 'r' && c2 == 'e') || (c1 == 'v' && c2 == 'e') || (c1 == 'l' && c2 == 'l')) {
                chunks.emplace_back(text.substr(i, 3));
                i += 3;
                continue;
            }
        }
        std::size_t j = i;
        if (c == ' ' && i + 1 < n && !is_space_byte(peek(i + 1))) j = i + 1;  // " ?" prefix
        const unsigned char lead = peek(j);
        if (is_ascii_letter(lead)) {
            ++j;
            while (j < n && is_ascii_letter(peek(j))) ++j;
            chunks.emplace_back(text.substr(start, j - start));
            i = j;
        } else if (is_ascii_digit(lead)) {
            ++j;
            while (j < n && is_ascii_digit(peek(j))) ++j;
            chunks.emplace_back(text.substr(start, j - start));
            i = j;
        } else if (is_space_byte(c)) {
            ++j;
            while (j < n && is_space_byte(peek(j))) ++j;
            chunks.emplace_back(text.substr(start, j - start));
            i = j;
        } else {
            // run of "other" bytes (punctuation etc), optionally space-led
            ++j;
            while (j < n && !is_space_byte(peek(j)) && !is_ascii_letter(peek(j)) &&
                   !is_ascii_digit(peek(j)) && peek(j) != '\'') {
                ++j;
            }
            chunks.emplace_back(text.substr(start, j - start));
            i = j;
        }
    }
    return chunks;
}

std::int32_t BpeVocab::add_token(const std::string& bytes) {
    const auto it = bytes_to_id_.find(bytes);
    if (it != bytes_to_id_.end()) return it->second;
    id_to_bytes_.push_back(bytes);
    const std::int32_t id = std::int32_t(id_to_bytes_.size()) - 1;
    bytes_to_id_[bytes] = id;
    return id;
}

BpeVocab BpeVocab::byte_level() {
    BpeVocab v;
    for (int b = 0; b < 256; ++b) v.add_token(std::string(1, char(b)));
    v.eos_id_ = v.add_token(kEosToken);
    return v;
}

const std::string& BpeVocab::token_bytes(std::int32_t id) const {
    if (id < 0 || std::size_t(id) >= id_to_bytes_.size()) {
        throw DataError("token id out of range: " + std::to_string(id));
    }
    return id_to_bytes_[std::size_t(id)];
}

std::vector<std::string> BpeVocab::apply_merges(std::string_view chunk) const {
    std::vector<std::string> symbols;
    symbols.reserve(chunk.size());
    for (const char c : chunk) symbols.emplace_back(1, c);
    while (symbols.size() > 1) {
        std::int64_t best_rank = std::numeric_limits<std::int64_t>::max();
        std::size_t best_pos = 0;
        for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
            const auto it = merge_rank_.find({symbols[i], symbols[i + 1]});
            if (it != merge_rank_.end() && it->second < best_rank) {
                best_rank = it->second;
                best_pos = i;
            }
        }
        if (best_rank == std::numeric_limits<std::int64_t>::max()) break;
        // merge every occurrence of the winning pair, left to right
        const std::string first = symbols[best_pos];
        const std::string second = symbols[best_pos + 1];
        std::vector<std::string> merged;
        merged.reserve(symbols.size());
        std::size_t i = 0;
        while (i < symbols.size()) {
            if (i + 1 < symbols.size() && symbols[i] == first && symbols[i + 1] == second) {
                merged.push_back(first + second);
                i += 2;
            } else {
                merged.push_back(symbols[i]);
                ++i;
            }
        }
        symbols = std::move(merged);
    }
    return symbols;
}

std::vector<std::int32_t> BpeVocab::encode(std::string_view text) const {
    std::vector<std::int32_t> ids;
    for (const auto& chunk : pretokenize(text)) {
        for (const auto& sym : apply_merges(chunk)) {
            const auto it = bytes_to_id_.find(sym);
            if (it == bytes_to_id_.end()) {
                // merges guarantee membership; single bytes always present
                throw DataError("encode: symbol missing from vocabulary");
            }
            ids.push_back(it->second);
        }
    }
    return ids;
}

std::string BpeVocab::decode(const std::vector<std::int32_t>& ids) const {
    std::string out;
    for (const auto id : ids) out += token_bytes(id);
    return out;
}

BpeVocab BpeVocab::train(const std::vector<std::string>& corpus_texts,
                         std::int64_t target_vocab_size) {
    if (target_vocab_size < 257) {
        throw ConfigError("bpe train: target vocab must hold 256 bytes plus end-of-text");
    }
    BpeVocab v;
    for (int b = 0; b < 256; ++b) v.add_token(std::string(1, char(b)));

    // chunk frequency table
    std::map<std::string, std::int64_t> chunk_freq;
    for (const auto& text : corpus_texts) {
        for (const auto& chunk : pretokenize(text)) chunk_freq[chunk] += 1;
    }
    std::vector<std::pair<std::vector<std::string>, std::int64_t>> words;
    words.reserve(chunk_freq.size());
    for (const auto& [chunk, freq] : chunk_freq) {
        std::vector<std::string> symbols;
        for (const char c : chunk) symbols.emplace_back(1, c);
        words.emplace_back(std::move(symbols), freq);
    }

    const std::int64_t n_merges = target_vocab_size - 257;
    for (std::int64_t m = 0; m < n_merges; ++m) {
        std::map<std::pair<std::string, std::string>, std::int64_t> pair_freq;
        for (const auto& [symbols, freq] : words) {
            for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
                pair_freq[{symbols[i], symbols[i + 1]}] += freq;
            }
        }
        if (pair_freq.empty()) break;
        // max count; ties to the lexicographically smallest pair (map order)
        auto best = pair_freq.begin();
        for (auto it = pair_freq.begin(); it != pair_freq.end(); ++it) {
            if (it->second > best->second) best = it;
        }
        const auto [first, second] = best->first;
        v.merges_.emplace_back(first, second);
        v.merge_rank_[{first, second}] = std::int64_t(v.merges_.size()) - 1;
        v.add_token(first + second);
        for (auto& [symbols, freq] : words) {
            (void)freq;
            std::vector<std::string> merged;
            merged.reserve(symbols.size());
            std::size_t i = 0;
            while (i < symbols.size()) {
                if (i + 1 < symbols.size() && symbols[i] == first && symbols[i + 1] == second) {
                    merged.push_back(first + second);
                    i += 2;
                } else {
                    merged.push_back(symbols[i]);
                    ++i;
                }
            }
            symbols = std::move(merged);
        }
    }
    v.eos_id_ = v.add_token(kEosToken);
    return v;
}

BpeVocab BpeVocab::load_gpt2(const std::filesystem::path& vocab_json,
                             const std::filesystem::path& merges_txt) {
    std::ifstream vs(vocab_json);
    if (!vs) throw IoError("cannot open vocab file: " + vocab_json.string());
    json j = json::parse(vs, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
        throw ParseError("vocab file " + vocab_json.string() + ": malformed JSON");
    }
    BpeVocab v;
    std::vector<std::pair<std::int32_t, std::string>> entries;
    for (const auto& [token, id] : j.items()) {
        if (!id.is_number_integer()) {
            throw ParseError("vocab file " + vocab_json.string() + ": non-integer id for '" +
                             token + "'");
        }
        std::string bytes = token == kEosToken
                                ? std::string(kEosToken)
                                : printable_to_bytes(token, "vocab file " + vocab_json.string());
        entries.emplace_back(id.get<std::int32_t>(), std::move(bytes));
    }
    std::sort(entries.begin(), entries.end());
    for (std::size_t i = 0; i < entries.size(); ++i) {
        if (entries[i].first != std::int32_t(i)) {
            throw ParseError("vocab file " + vocab_json.string() + ": ids are not contiguous");
        }
        v.id_to_bytes_.push_back(entries[i].second);
        v.bytes_to_id_[entries[i].second] = std::int32_t(i);
    }
    const auto eos_it = v.bytes_to_id_.find(kEosToken);
    v.eos_id_ = eos_it != v.bytes_to_id_.end() ? eos_it->second : -1;

    std::ifstream ms(merges_txt);
    if (!ms) throw IoError("cannot open merges file: " + merges_txt.string());
    std::string line;
    std::int64_t line_no = 0;
    while (std::getline(ms, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line_no == 1 && line.rfind("#version", 0) == 0) continue;
        const auto space = line.find(' ');
        if (space == std::string::npos || space == 0 || space + 1 >= line.size() ||
            line.find(' ', space + 1) != std::string::npos) {
            throw ParseError("merges file " + merges_txt.string() + ": bad pair at line " +
                             std::to_string(line_no));
        }
        const std::string where = "merges file " + merges_txt.string();
        const std::string first = printable_to_bytes(line.substr(0, space), where);
        const std::string second = printable_to_bytes(line.substr(space + 1), where);
        v.merges_.emplace_back(first, second);
        v.merge_rank_[{first, second}] = std::int64_t(v.merges_.size()) - 1;
    }
    return v;
}

void BpeVocab::save(const std::filesystem::path& vocab_json,
                    const std::filesystem::path& merges_txt) const {
    json j = json::object();
    for (std::size_t i = 0; i < id_to_bytes_.size(); ++i) {
        const std::string key = std::int32_t(i) == eos_id_ ? std::string(kEosToken)
                                                           : bytes_to_printable(id_to_bytes_[i]);
        j[key] = std::int32_t(i);
    }
    std::ofstream vs(vocab_json, std::ios::trunc);
    if (!vs) throw IoError("cannot write vocab file: " + vocab_json.string());
    vs << j.dump();
    std::ofstream ms(merges_txt, std::ios::trunc);
    if (!ms) throw IoError("cannot write merges file: " + merges_txt.string());
    ms << "#version: 0.2\n";
    for (const auto& [a, b] : merges_) {
        ms << bytes_to_printable(a) << ' ' << bytes_to_printable(b) << '\n';
    }
}

}  // namespace gptlab
