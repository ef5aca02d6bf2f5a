// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "gptlab/common.hpp"
#include "gptlab/datapipe.hpp"

namespace gptlab::testsupport {

// Synthetic prose with learnable structure at two ranges: local word statistics
// and named registers that are restated every few sentences, so longer context
// genuinely lowers next-char loss.
std::string toy_document_text(Rng& rng, std::int64_t approx_chars);

std::string toy_text(std::int64_t approx_chars, std::uint64_t seed);

Corpus toy_corpus(std::int64_t n_docs, std::int64_t approx_chars, std::uint64_t seed);

// 1000 documents: 800 distinct bases plus 100 exact copies and 100 near
// duplicates (one interior word changed; shingle Jaccard ~0.91 at k=13).
// Returned ids: base docs "doc0000".."doc0799", exact dups "dupe####",
// near dups "near####".
Corpus planted_dedup_corpus(std::uint64_t seed);

// Byte-level token ids of a text (matches BpeVocab::byte_level() encoding
// for pure ASCII input).
std::vector<std::int32_t> byte_tokens(const std::string& text);

PackedShard char_shard(const std::string& text, std::int64_t seq_len);

}  // namespace gptlab::testsupport
