// SPDX-License-Identifier: Apache-2.0
#include "toy_text.hpp"

#include <array>

namespace gptlab::testsupport {

namespace {

constexpr std::array<const char*, 24> kFiller = {
    "the",  "a",     "near", "old",  "grey", "small", "wide", "tall",
    "mill", "barge", "lane", "gate", "pond", "field", "barn", "ridge",
    "runs", "sits",  "lies", "waits", "turns", "holds", "rests", "stands"};

constexpr std::array<const char*, 12> kRegisters = {"alpha", "bravo", "cedar", "delta",
                                                    "ember", "flint", "gorse", "heron",
                                                    "iris",  "jasper", "kelp",  "lark"};

std::string random_word(Rng& rng) {
    return kFiller[std::size_t(rng.uniform_int(0, std::int64_t(kFiller.size()) - 1))];
}

}  // namespace

std::string toy_document_text(Rng& rng, std::int64_t approx_chars) {
    // Register assignments fixed per document; restated periodically so the
    // value is predictable from earlier context.
    const std::int64_t n_regs = rng.uniform_int(2, 4);
    std::vector<std::string> names, values;
    for (std::int64_t r = 0; r < n_regs; ++r) {
        names.push_back(kRegisters[std::size_t(rng.uniform_int(0, std::int64_t(kRegisters.size()) - 1))]);
        values.push_back(std::to_string(rng.uniform_int(100, 99999)));
    }
    std::string text;
    std::int64_t sentence = 0;
    while (std::int64_t(text.size()) < approx_chars) {
        if (sentence % 3 == 2) {
            const std::size_t r = std::size_t(rng.uniform_int(0, n_regs - 1));
            text += "register " + names[r] + " keeps " + values[r] + ". ";
        } else {
            const std::int64_t n_words = rng.uniform_int(4, 9);
            for (std::int64_t w = 0; w < n_words; ++w) {
                text += random_word(rng);
                text += w + 1 < n_words ? " " : "";
            }
            text += ". ";
        }
        ++sentence;
    }
    return text;
}

std::string toy_text(std::int64_t approx_chars, std::uint64_t seed) {
    Rng rng(seed_fork(seed, "toy_text"));
    std::string text;
    while (std::int64_t(text.size()) < approx_chars) {
        text += toy_document_text(rng, std::min<std::int64_t>(1500, approx_chars));
        text += "\n";
    }
    text.resize(std::size_t(approx_chars));
    return text;
}

Corpus toy_corpus(std::int64_t n_docs, std::int64_t approx_chars, std::uint64_t seed) {
    Rng rng(seed_fork(seed, "toy_corpus"));
    const std::array<const char*, 4> sources = {"web", "books", "code", "wiki"};
    Corpus corpus;
    for (std::int64_t i = 0; i < n_docs; ++i) {
        Document doc;
        char id[16];
        std::snprintf(id, sizeof(id), "doc%05d", int(i));
        doc.id = id;
        doc.source = sources[std::size_t(i % std::int64_t(sources.size()))];
        doc.text = toy_document_text(rng, approx_chars);
        corpus.push_back(std::move(doc));
    }
    return corpus;
}

Corpus planted_dedup_corpus(std::uint64_t seed) {
    Rng rng(seed_fork(seed, "planted"));
    const std::array<const char*, 3> sources = {"web", "books", "wiki"};
    Corpus corpus;
    std::vector<std::string> base_texts;
    for (int i = 0; i < 800; ++i) {
        // ~300 words of random filler: mutually near-disjoint shingle sets
        std::string text;
        for (int w = 0; w < 300; ++w) {
            text += random_word(rng);
            text += std::to_string(rng.uniform_int(0, 999));
            text += ' ';
        }
        base_texts.push_back(text);
        Document doc;
        char id[16];
        std::snprintf(id, sizeof(id), "doc%04d", i);
        doc.id = id;
        doc.source = sources[std::size_t(i % 3)];
        doc.text = text;
        corpus.push_back(std::move(doc));
    }
    for (int i = 0; i < 100; ++i) {
        Document doc;
        char id[16];
        std::snprintf(id, sizeof(id), "dupe%04d", i);
        doc.id = id;
        doc.source = sources[std::size_t(i % 3)];
        doc.text = base_texts[std::size_t(i * 7 % 800)];
        corpus.push_back(std::move(doc));
    }
    for (int i = 0; i < 100; ++i) {
        std::string text = base_texts[std::size_t((i * 7 + 400) % 800)];
        // change one interior word: Jaccard stays >= 0.9 at k = 13
        const std::size_t mid = text.size() / 2;
        const std::size_t space = text.find(' ', mid);
        const std::size_t next = text.find(' ', space + 1);
        text.replace(space + 1, next - space - 1, "changedword" + std::to_string(i));
        Document doc;
        char id[16];
        std::snprintf(id, sizeof(id), "near%04d", i);
        doc.id = id;
        doc.source = sources[std::size_t(i % 3)];
        doc.text = std::move(text);
        corpus.push_back(std::move(doc));
    }
    return corpus;
}

std::vector<std::int32_t> byte_tokens(const std::string& text) {
    std::vector<std::int32_t> ids;
    ids.reserve(text.size());
    for (const char c : text) ids.push_back(std::int32_t(static_cast<unsigned char>(c)));
    return ids;
}

PackedShard char_shard(const std::string& text, std::int64_t seq_len) {
    return pack_sequences({byte_tokens(text)}, seq_len, 256);
}

}  // namespace gptlab::testsupport
