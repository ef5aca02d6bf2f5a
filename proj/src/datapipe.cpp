// SPDX-License-Identifier: Apache-2.0
#include "gptlab/datapipe.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <numeric>
#include <unordered_map>
#include <unordered_set>

namespace gptlab {

using nlohmann::json;

Corpus read_corpus_jsonl(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open corpus: " + path.string());
    Corpus corpus;
    std::string line;
    std::int64_t line_no = 0;
    std::unordered_set<std::string> seen_ids;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        const json j = json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object()) {
            throw ParseError("corpus " + path.string() + ": malformed JSON at line " +
                             std::to_string(line_no));
        }
        Document doc;
        doc.id = j.value("id", std::string());
        doc.source = j.value("source", std::string("unknown"));
        doc.text = j.value("text", std::string());
        if (doc.id.empty()) {
            throw ParseError("corpus " + path.string() + ": missing id at line " +
                             std::to_string(line_no));
        }
        if (!seen_ids.insert(doc.id).second) {
            throw DataError("corpus " + path.string() + ": duplicate id '" + doc.id + "'");
        }
        corpus.push_back(std::move(doc));
    }
    return corpus;
}

void write_corpus_jsonl(const std::filesystem::path& path, const Corpus& corpus) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot write corpus: " + path.string());
    for (const auto& doc : corpus) {
        os << json{{"id", doc.id}, {"source", doc.source}, {"text", doc.text}}.dump() << '\n';
    }
}

std::int64_t count_scalar_values(std::string_view utf8) {
    std::int64_t count = 0;
    std::size_t i = 0;
    while (i < utf8.size()) {
        const unsigned char c = static_cast<unsigned char>(utf8[i]);
        std::size_t len = 1;
        if ((c & 0x80u) == 0x00u) len = 1;
        else if ((c & 0xe0u) == 0xc0u) len = 2;
        else if ((c & 0xf0u) == 0xe0u) len = 3;
        else if ((c & 0xf8u) == 0xf0u) len = 4;
        // Truncated or stray continuation bytes count one each.
        for (std::size_t k = 1; k < len && i + k < utf8.size(); ++k) {
            if ((static_cast<unsigned char>(utf8[i + k]) & 0xc0u) != 0x80u) {
                len = k;
                break;
            }
        }
        i += std::min(len, utf8.size() - i);
        ++count;
    }
    return count;
}

bool filter_short(const Document& doc, std::int64_t min_chars) {
    return count_scalar_values(doc.text) >= min_chars;
}

std::vector<std::string> shingle(std::string_view text, std::int64_t k) {
    if (k < 1) throw ConfigError("shingle: k must be >= 1");
    std::vector<std::string> words;
    std::string word;
    for (const char ch : text) {
        if (std::isspace(static_cast<unsigned char>(ch))) {
            if (!word.empty()) {
                words.push_back(std::move(word));
                word.clear();
            }
        } else {
            word.push_back(char(std::tolower(static_cast<unsigned char>(ch))));
        }
    }
    if (!word.empty()) words.push_back(std::move(word));

    std::vector<std::string> grams;
    if (std::int64_t(words.size()) < k) {
        std::string all;
        for (std::size_t i = 0; i < words.size(); ++i) {
            if (i > 0) all.push_back(' ');
            all += words[i];
        }
        grams.push_back(std::move(all));
    } else {
        for (std::size_t i = 0; i + std::size_t(k) <= words.size(); ++i) {
            std::string g = words[i];
            for (std::size_t j = 1; j < std::size_t(k); ++j) {
                g.push_back(' ');
                g += words[i + j];
            }
            grams.push_back(std::move(g));
        }
    }
    std::sort(grams.begin(), grams.end());
    grams.erase(std::unique(grams.begin(), grams.end()), grams.end());
    return grams;
}

namespace {

// Stateless splitmix64 finalizer; one application per permutation key gives
// an effectively independent hash family.
std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

std::vector<std::uint64_t> perm_keys(std::int64_t n_perm, std::uint64_t seed) {
    Rng rng(seed_fork(seed, "minhash_perms"));
    std::vector<std::uint64_t> keys(static_cast<std::size_t>(n_perm));
    for (auto& k : keys) k = rng.next_u64();
    return keys;
}

}  // namespace

MinHashSignature minhash_signature(const std::vector<std::string>& shingles, std::int64_t n_perm,
                                   std::uint64_t seed) {
    if (shingles.empty()) throw DataError("minhash_signature: empty shingle set");
    if (n_perm < 1) throw ConfigError("minhash_signature: n_perm must be >= 1");
    const auto keys = perm_keys(n_perm, seed);
    std::vector<std::uint64_t> base(shingles.size());
    for (std::size_t i = 0; i < shingles.size(); ++i) base[i] = fnv1a64(shingles[i]);
    MinHashSignature sig;
    sig.mins.assign(std::size_t(n_perm), ~0ULL);
    for (std::size_t p = 0; p < keys.size(); ++p) {
        std::uint64_t mn = ~0ULL;
        for (const std::uint64_t h : base) {
            const std::uint64_t v = mix64(h ^ keys[p]);
            mn = v < mn ? v : mn;
        }
        sig.mins[p] = mn;
    }
    return sig;
}

double signature_similarity(const MinHashSignature& a, const MinHashSignature& b) {
    if (a.mins.size() != b.mins.size() || a.mins.empty()) {
        throw DimensionError("signature_similarity: length mismatch");
    }
    std::int64_t agree = 0;
    for (std::size_t i = 0; i < a.mins.size(); ++i) agree += a.mins[i] == b.mins[i] ? 1 : 0;
    return double(agree) / double(a.mins.size());
}

std::vector<std::pair<std::int64_t, std::int64_t>> lsh_candidates(
    const std::vector<MinHashSignature>& signatures, std::int64_t bands, std::int64_t rows) {
    if (signatures.empty()) return {};
    const std::int64_t n_perm = std::int64_t(signatures[0].mins.size());
    if (bands * rows != n_perm) {
        throw ConfigError("lsh_candidates: bands * rows must equal n_perm");
    }
    std::vector<std::pair<std::int64_t, std::int64_t>> pairs;
    std::unordered_map<std::uint64_t, std::vector<std::int64_t>> buckets;
    for (std::int64_t band = 0; band < bands; ++band) {
        buckets.clear();
        for (std::int64_t i = 0; i < std::int64_t(signatures.size()); ++i) {
            const auto& mins = signatures[std::size_t(i)].mins;
            std::uint64_t h = 0xcbf29ce484222325ULL ^ std::uint64_t(band);
            for (std::int64_t r = 0; r < rows; ++r) {
                h ^= mins[std::size_t(band * rows + r)];
                h *= 0x100000001b3ULL;
            }
            buckets[h].push_back(i);
        }
        for (const auto& [key, members] : buckets) {
            (void)key;
            for (std::size_t a = 0; a + 1 < members.size(); ++a) {
                for (std::size_t b = a + 1; b < members.size(); ++b) {
                    pairs.emplace_back(members[a], members[b]);
                }
            }
        }
    }
    std::sort(pairs.begin(), pairs.end());
    pairs.erase(std::unique(pairs.begin(), pairs.end()), pairs.end());
    return pairs;
}

namespace {

struct UnionFind {
    std::vector<std::int64_t> parent;
    explicit UnionFind(std::int64_t n) : parent(std::size_t(n)) {
        std::iota(parent.begin(), parent.end(), 0);
    }
    std::int64_t find(std::int64_t x) {
        while (parent[std::size_t(x)] != x) {
            parent[std::size_t(x)] = parent[std::size_t(parent[std::size_t(x)])];
            x = parent[std::size_t(x)];
        }
        return x;
    }
    void unite(std::int64_t a, std::int64_t b) {
        a = find(a);
        b = find(b);
        if (a != b) parent[std::size_t(std::max(a, b))] = std::min(a, b);
    }
};

}  // namespace

std::pair<Corpus, DedupReport> dedup(const Corpus& corpus, const DedupParams& params) {
    const std::int64_t n = std::int64_t(corpus.size());
    DedupReport report;
    report.docs_in = n;
    for (const auto& doc : corpus) {
        auto& s = report.per_source[doc.source];
        s.docs_in += 1;
        s.bytes_in += std::int64_t(doc.text.size());
        report.bytes_in += std::int64_t(doc.text.size());
    }
    if (n == 0) return {Corpus{}, report};

    std::vector<MinHashSignature> signatures(static_cast<std::size_t>(n));
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < n; ++i) {
        signatures[std::size_t(i)] = minhash_signature(
            shingle(corpus[std::size_t(i)].text, params.shingle_k), params.n_perm, params.seed);
    }

    const auto candidates = lsh_candidates(signatures, params.bands, params.rows);
    UnionFind uf(n);
    for (const auto& [a, b] : candidates) {
        if (signature_similarity(signatures[std::size_t(a)], signatures[std::size_t(b)]) >=
            params.threshold) {
            uf.unite(a, b);
        }
    }

    // Keep the lexicographically lowest id in each component.
    std::unordered_map<std::int64_t, std::int64_t> representative;
    for (std::int64_t i = 0; i < n; ++i) {
        const std::int64_t root = uf.find(i);
        auto it = representative.find(root);
        if (it == representative.end() ||
            corpus[std::size_t(i)].id < corpus[std::size_t(it->second)].id) {
            representative[root] = i;
        }
    }
    Corpus kept;
    std::int64_t kept_bytes_total = 0;
    std::map<std::string, std::int64_t> kept_bytes_by_source;
    for (std::int64_t i = 0; i < n; ++i) {
        const auto& doc = corpus[std::size_t(i)];
        if (representative[uf.find(i)] == i) {
            kept.push_back(doc);
            kept_bytes_total += std::int64_t(doc.text.size());
            kept_bytes_by_source[doc.source] += std::int64_t(doc.text.size());
        } else {
            report.per_source[doc.source].duplicate_bytes += std::int64_t(doc.text.size());
            report.duplicate_bytes += std::int64_t(doc.text.size());
        }
    }
    report.docs_kept = std::int64_t(kept.size());
    for (auto& [source, stats] : report.per_source) {
        stats.kept_proportion = kept_bytes_total > 0
                                    ? double(kept_bytes_by_source[source]) / double(kept_bytes_total)
                                    : 0.0;
    }
    return {std::move(kept), std::move(report)};
}

json dedup_report_to_json(const DedupReport& report) {
    json sources = json::object();
    for (const auto& [name, s] : report.per_source) {
        const double filter_rate =
            s.docs_in > 0 ? double(s.docs_filtered_short) / double(s.docs_in) : 0.0;
        const double dup_rate =
            s.bytes_in > 0 ? double(s.duplicate_bytes) / double(s.bytes_in) : 0.0;
        sources[name] = {{"docs_in", s.docs_in},
                         {"docs_filtered_short", s.docs_filtered_short},
                         {"doc_filter_rate", filter_rate},
                         {"bytes_in", s.bytes_in},
                         {"duplicate_bytes", s.duplicate_bytes},
                         {"byte_duplication_rate", dup_rate},
                         {"kept_proportion", s.kept_proportion}};
    }
    return json{{"sources", sources},
                {"total",
                 {{"docs_in", report.docs_in},
                  {"docs_kept", report.docs_kept},
                  {"bytes_in", report.bytes_in},
                  {"duplicate_bytes", report.duplicate_bytes}}}};
}

// ----------------------------- packing ------------------------------------

PackedShard pack_sequences(const std::vector<std::vector<std::int32_t>>& docs,
                           std::int64_t seq_len, std::int32_t eos_id) {
    if (seq_len < 2) throw ConfigError("pack_sequences: seq_len must be >= 2");
    PackedShard shard;
    shard.seq_len = seq_len;
    std::vector<std::int32_t> buffer;
    for (const auto& doc : docs) {
        buffer.insert(buffer.end(), doc.begin(), doc.end());
        buffer.push_back(eos_id);
        while (std::int64_t(buffer.size()) >= seq_len) {
            shard.tokens.insert(shard.tokens.end(), buffer.begin(), buffer.begin() + seq_len);
            buffer.erase(buffer.begin(), buffer.begin() + seq_len);
            shard.count += 1;
        }
    }
    return shard;
}

namespace {
constexpr char kTokenMagic[8] = {'G', 'L', 'A', 'B', 'T', 'O', 'K', 'S'};
}

void write_token_file(const std::filesystem::path& path, const PackedShard& shard) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write token file: " + path.string());
    os.write(kTokenMagic, 8);
    const std::uint32_t seq_len = std::uint32_t(shard.seq_len);
    const std::uint64_t count = std::uint64_t(shard.count);
    os.write(reinterpret_cast<const char*>(&seq_len), 4);
    os.write(reinterpret_cast<const char*>(&count), 8);
    os.write(reinterpret_cast<const char*>(shard.tokens.data()),
             std::streamsize(shard.tokens.size() * 4));
    if (!os) throw IoError("token file write failed: " + path.string());
}

PackedShard read_token_file(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open token file: " + path.string());
    char magic[8];
    is.read(magic, 8);
    if (!is || std::string_view(magic, 8) != std::string_view(kTokenMagic, 8)) {
        throw DataError("not a token file: " + path.string());
    }
    std::uint32_t seq_len = 0;
    std::uint64_t count = 0;
    is.read(reinterpret_cast<char*>(&seq_len), 4);
    is.read(reinterpret_cast<char*>(&count), 8);
    if (!is) throw DataError("token file: truncated header");
    PackedShard shard;
    shard.seq_len = seq_len;
    shard.count = std::int64_t(count);
    shard.tokens.resize(std::size_t(count) * seq_len);
    is.read(reinterpret_cast<char*>(shard.tokens.data()), std::streamsize(shard.tokens.size() * 4));
    if (!is) throw DataError("token file: truncated data");
    return shard;
}

}  // namespace gptlab
