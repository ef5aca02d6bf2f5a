// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "gptlab/common.hpp"

namespace gptlab {

// Byte-level BPE. Token strings are raw byte sequences; the base alphabet is
// all 256 bytes, so decode(encode(t)) == t for arbitrary input.
class BpeVocab {
  public:
    // Byte-only vocabulary (ids 0..255) plus an end-of-text token.
    static BpeVocab byte_level();

    // Most-frequent-pair merging until the vocabulary (bytes + merges +
    // end-of-text) reaches target_vocab_size. Ties break toward the
    // lexicographically smallest pair.
    static BpeVocab train(const std::vector<std::string>& corpus_texts,
                          std::int64_t target_vocab_size);

    // GPT-2 file format: vocab.json (token -> id, in the printable byte
    // remapping) and merges.txt (ranked space-separated pairs).
    static BpeVocab load_gpt2(const std::filesystem::path& vocab_json,
                              const std::filesystem::path& merges_txt);

    std::vector<std::int32_t> encode(std::string_view text) const;
    std::string decode(const std::vector<std::int32_t>& ids) const;

    std::int64_t size() const { return std::int64_t(id_to_bytes_.size()); }
    std::int32_t eos_id() const { return eos_id_; }
    const std::string& token_bytes(std::int32_t id) const;

    void save(const std::filesystem::path& vocab_json,
              const std::filesystem::path& merges_txt) const;

  private:
    std::vector<std::string> id_to_bytes_;
    std::unordered_map<std::string, std::int32_t> bytes_to_id_;
    // merge pair (in byte space) -> rank
    std::map<std::pair<std::string, std::string>, std::int64_t> merge_rank_;
    std::vector<std::pair<std::string, std::string>> merges_;  // by rank
    std::int32_t eos_id_ = -1;

    std::int32_t add_token(const std::string& bytes);
    std::vector<std::string> apply_merges(std::string_view chunk) const;
};

// GPT-2-style pre-tokenizer split. Concatenation of the chunks reproduces
// the input exactly.
std::vector<std::string> pretokenize(std::string_view text);

}  // namespace gptlab
