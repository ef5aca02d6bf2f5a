// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "gptlab/common.hpp"

#include "json.hpp"

namespace gptlab {

struct Document {
    std::string id;
    std::string source;
    std::string text;
};

using Corpus = std::vector<Document>;

// JSONL, one {"id", "source", "text"} object per line.
Corpus read_corpus_jsonl(const std::filesystem::path& path);
void write_corpus_jsonl(const std::filesystem::path& path, const Corpus& corpus);

// Unicode scalar values, not bytes. Invalid UTF-8 bytes count as one each.
std::int64_t count_scalar_values(std::string_view utf8);

// Keep iff the document has at least `min_chars` scalar values
// ("fewer than" is strict).
bool filter_short(const Document& doc, std::int64_t min_chars = 200);

// Lowercased, whitespace-normalized word k-grams; documents shorter than
// k words yield the whole-document singleton. Sorted unique.
std::vector<std::string> shingle(std::string_view text, std::int64_t k);

struct MinHashSignature {
    std::vector<std::uint64_t> mins;
};

MinHashSignature minhash_signature(const std::vector<std::string>& shingles, std::int64_t n_perm,
                                   std::uint64_t seed);

// Fraction of agreeing positions: an unbiased Jaccard estimate.
double signature_similarity(const MinHashSignature& a, const MinHashSignature& b);

// Banded LSH: a pair is a candidate iff all rows of at least one band agree.
// Requires bands * rows == n_perm. Pairs are (i < j), sorted.
std::vector<std::pair<std::int64_t, std::int64_t>> lsh_candidates(
    const std::vector<MinHashSignature>& signatures, std::int64_t bands, std::int64_t rows);

struct SourceStats {
    std::int64_t docs_in = 0;
    std::int64_t docs_filtered_short = 0;
    std::int64_t bytes_in = 0;
    std::int64_t duplicate_bytes = 0;
    double kept_proportion = 0.0;
};

struct DedupReport {
    std::map<std::string, SourceStats> per_source;
    std::int64_t docs_in = 0;
    std::int64_t docs_kept = 0;
    std::int64_t bytes_in = 0;
    std::int64_t duplicate_bytes = 0;
};

nlohmann::json dedup_report_to_json(const DedupReport& report);

struct DedupParams {
    double threshold = 0.8;
    std::int64_t shingle_k = 13;
    std::int64_t n_perm = 128;
    std::int64_t bands = 16;
    std::int64_t rows = 8;
    std::uint64_t seed = 0;
};

// Global near-duplicate removal: LSH candidates verified by signature
// similarity >= threshold, connected components, keep the lexicographically
// lowest document id per component.
std::pair<Corpus, DedupReport> dedup(const Corpus& corpus, const DedupParams& params);

// ----------------------------- packing ------------------------------------

struct PackedShard {
    std::int64_t seq_len = 0;
    std::int64_t count = 0;  // number of full sequences
    std::vector<std::int32_t> tokens;
};

// Documents concatenated with eos separators, chunked to exactly seq_len;
// the final partial chunk is dropped. No padding.
PackedShard pack_sequences(const std::vector<std::vector<std::int32_t>>& docs,
                           std::int64_t seq_len, std::int32_t eos_id);

// Binary token file: magic, u32 seq_len, u64 count, then count*seq_len
// little-endian 32-bit ids.
void write_token_file(const std::filesystem::path& path, const PackedShard& shard);
PackedShard read_token_file(const std::filesystem::path& path);

}  // namespace gptlab
