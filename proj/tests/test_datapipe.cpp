// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <filesystem>
#include <set>

#include "gptlab/datapipe.hpp"
#include "toy_text.hpp"

using namespace gptlab;

namespace {

double jaccard(const std::vector<std::string>& a, const std::vector<std::string>& b) {
    std::set<std::string> sa(a.begin(), a.end()), sb(b.begin(), b.end());
    std::int64_t inter = 0;
    for (const auto& x : sa) inter += sb.count(x) ? 1 : 0;
    const std::int64_t uni = std::int64_t(sa.size() + sb.size()) - inter;
    return uni == 0 ? 1.0 : double(inter) / double(uni);
}

}  // namespace

TEST_CASE("filter_short boundary: 199 drops, 200 keeps, empty drops") {
    const std::string s199(199, 'a');
    const std::string s200(200, 'a');
    CHECK(!filter_short({"a", "web", s199}));
    CHECK(filter_short({"b", "web", s200}));
    CHECK(!filter_short({"c", "web", ""}));
}

TEST_CASE("filter_short counts scalar values, not bytes") {
    // 200 three-byte characters: 600 bytes but exactly 200 scalars
    std::string text;
    for (int i = 0; i < 200; ++i) text += "\xe2\x82\xac";  // euro sign
    CHECK(text.size() == 600);
    CHECK(count_scalar_values(text) == 200);
    CHECK(filter_short({"d", "web", text}));
    CHECK(count_scalar_values("ab\xc3\xa9") == 3);
}

TEST_CASE("filter_short is idempotent and order-independent") {
    const auto corpus = testsupport::toy_corpus(50, 150, 3);
    std::vector<bool> first, second;
    for (const auto& d : corpus) first.push_back(filter_short(d));
    for (const auto& d : corpus) second.push_back(filter_short(d));
    CHECK(first == second);
    auto reversed = corpus;
    std::reverse(reversed.begin(), reversed.end());
    std::vector<bool> rev;
    for (const auto& d : reversed) rev.push_back(filter_short(d));
    std::reverse(rev.begin(), rev.end());
    CHECK(rev == first);
}

TEST_CASE("shingle: k-grams, normalization, and the 2/4 Jaccard example") {
    const auto g = shingle("a b c", 2);
    CHECK(g == std::vector<std::string>{"a b", "b c"});
    CHECK(shingle("A  b", 2) == shingle("a b", 2));
    const double j = jaccard(shingle("a b c d", 2), shingle("b c d e", 2));
    CHECK(j == doctest::Approx(2.0 / 4.0));
    // shorter than k words: whole-document singleton
    CHECK(shingle("only two", 5) == std::vector<std::string>{"only two"});
    CHECK(shingle("", 3) == std::vector<std::string>{""});
}

TEST_CASE("minhash: identical sets give identical signatures; empty set errors") {
    const auto s1 = shingle("the quick brown fox jumps over the lazy dog again", 3);
    const auto sig_a = minhash_signature(s1, 64, 9);
    const auto sig_b = minhash_signature(s1, 64, 9);
    CHECK(sig_a.mins == sig_b.mins);
    CHECK_THROWS_AS(minhash_signature({}, 64, 9), DataError);
}

TEST_CASE("minhash: disjoint sets estimate near zero") {
    Rng rng(5);
    std::vector<std::string> a, b;
    for (int i = 0; i < 1000; ++i) {
        a.push_back("left" + std::to_string(i) + "_" + std::to_string(rng.next_u64()));
        b.push_back("right" + std::to_string(i) + "_" + std::to_string(rng.next_u64()));
    }
    const auto sa = minhash_signature(a, 128, 3);
    const auto sb = minhash_signature(b, 128, 3);
    CHECK(signature_similarity(sa, sb) < 0.1);
}

TEST_CASE("minhash: constructed Jaccard 0.8 estimated within 0.05 over 50 seeds") {
    // |A| = |B| = 900 with 800 shared: J = 800 / 1000 = 0.8
    std::vector<std::string> shared, a, b;
    for (int i = 0; i < 800; ++i) shared.push_back("shared" + std::to_string(i));
    a = shared;
    b = shared;
    for (int i = 0; i < 100; ++i) {
        a.push_back("only_a" + std::to_string(i));
        b.push_back("only_b" + std::to_string(i));
    }
    CHECK(jaccard(a, b) == doctest::Approx(0.8));
    double mean = 0.0;
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const auto sa = minhash_signature(a, 128, seed);
        const auto sb = minhash_signature(b, 128, seed);
        mean += signature_similarity(sa, sb);
    }
    mean /= 50.0;
    CHECK(std::abs(mean - 0.8) < 0.05);
}

TEST_CASE("minhash estimator error bound over 200 random pairs") {
    Rng rng(17);
    double total_err = 0.0;
    const std::int64_t n_perm = 128;
    for (int pair = 0; pair < 200; ++pair) {
        const std::int64_t n_shared = rng.uniform_int(50, 400);
        const std::int64_t n_only = rng.uniform_int(10, 200);
        std::vector<std::string> a, b;
        for (std::int64_t i = 0; i < n_shared; ++i) {
            const std::string s = "s" + std::to_string(pair) + "_" + std::to_string(i);
            a.push_back(s);
            b.push_back(s);
        }
        for (std::int64_t i = 0; i < n_only; ++i) {
            a.push_back("a" + std::to_string(pair) + "_" + std::to_string(i));
            b.push_back("b" + std::to_string(pair) + "_" + std::to_string(i));
        }
        const double truth = jaccard(a, b);
        const auto sa = minhash_signature(a, n_perm, std::uint64_t(pair));
        const auto sb = minhash_signature(b, n_perm, std::uint64_t(pair));
        total_err += std::abs(signature_similarity(sa, sb) - truth);
    }
    CHECK(total_err / 200.0 <= 1.2 / std::sqrt(double(n_perm)));
}

TEST_CASE("lsh: identical always candidates, fully distinct never") {
    const auto s = shingle("one two three four five six seven eight nine ten", 2);
    std::vector<MinHashSignature> sigs;
    sigs.push_back(minhash_signature(s, 128, 1));
    sigs.push_back(minhash_signature(s, 128, 1));
    MinHashSignature different;
    different.mins.assign(128, 0);
    for (std::size_t i = 0; i < 128; ++i) different.mins[i] = 0xdeadbeef + i;
    sigs.push_back(different);
    const auto pairs = lsh_candidates(sigs, 16, 8);
    REQUIRE(pairs.size() == 1);
    CHECK(pairs[0] == std::pair<std::int64_t, std::int64_t>{0, 1});
    CHECK_THROWS_AS(lsh_candidates(sigs, 7, 8), ConfigError);
}

TEST_CASE("lsh candidate recall >= 0.95 for true Jaccard >= 0.8 (planted corpus)") {
    const Corpus corpus = testsupport::planted_dedup_corpus(99);
    const std::int64_t k = 13, n_perm = 128;
    std::vector<std::vector<std::string>> shingles;
    std::vector<MinHashSignature> sigs;
    for (const auto& doc : corpus) {
        shingles.push_back(shingle(doc.text, k));
        sigs.push_back(minhash_signature(shingles.back(), n_perm, 4));
    }
    // brute-force all-pairs oracle over the planted families
    std::set<std::pair<std::int64_t, std::int64_t>> truth;
    for (std::size_t i = 800; i < corpus.size(); ++i) {
        for (std::size_t j = 0; j < 800; ++j) {
            if (jaccard(shingles[i], shingles[j]) >= 0.8) {
                truth.insert({std::int64_t(std::min(i, j)), std::int64_t(std::max(i, j))});
            }
        }
    }
    REQUIRE(truth.size() >= 200 - 5);  // every plant matches its base
    const auto candidates = lsh_candidates(sigs, 16, 8);
    const std::set<std::pair<std::int64_t, std::int64_t>> cand_set(candidates.begin(),
                                                                   candidates.end());
    std::int64_t hit = 0;
    for (const auto& p : truth) hit += cand_set.count(p) ? 1 : 0;
    CHECK(double(hit) / double(truth.size()) >= 0.95);
}

TEST_CASE("dedup: exact duplicate pair keeps one copy and counts its bytes") {
    Corpus corpus;
    const std::string text = testsupport::toy_text(400, 8);
    corpus.push_back({"doc_b", "web", text});
    corpus.push_back({"doc_a", "web", text});
    corpus.push_back({"doc_c", "books", testsupport::toy_text(500, 9)});
    DedupParams params;
    params.shingle_k = 5;
    const auto [kept, report] = dedup(corpus, params);
    REQUIRE(kept.size() == 2);
    CHECK(kept[0].id == "doc_a");  // lexicographically lowest of the pair survives
    CHECK(report.duplicate_bytes == std::int64_t(text.size()));
    CHECK(report.per_source.at("web").duplicate_bytes == std::int64_t(text.size()));
    CHECK(report.per_source.at("books").duplicate_bytes == 0);
    double kept_sum = 0.0;
    for (const auto& [src, st] : report.per_source) kept_sum += st.kept_proportion;
    CHECK(kept_sum == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("dedup: all-distinct corpus unchanged with zero duplicate rate") {
    const Corpus corpus = testsupport::toy_corpus(40, 600, 21);
    DedupParams params;
    params.shingle_k = 5;
    const auto [kept, report] = dedup(corpus, params);
    CHECK(kept.size() == corpus.size());
    CHECK(report.duplicate_bytes == 0);
    CHECK(report.docs_kept == std::int64_t(corpus.size()));
}

TEST_CASE("dedup is idempotent and leaves no near-duplicate pairs") {
    const Corpus corpus = testsupport::planted_dedup_corpus(5);
    DedupParams params;
    const auto [kept, report] = dedup(corpus, params);
    const auto [kept2, report2] = dedup(kept, params);
    CHECK(kept2.size() == kept.size());
    CHECK(report2.duplicate_bytes == 0);
    for (std::size_t i = 0; i < kept2.size(); ++i) CHECK(kept2[i].id == kept[i].id);

    // no surviving pair at or above the verification threshold
    std::vector<MinHashSignature> sigs;
    for (const auto& doc : kept) {
        sigs.push_back(minhash_signature(shingle(doc.text, params.shingle_k), params.n_perm,
                                         params.seed));
    }
    for (const auto& [a, b] : lsh_candidates(sigs, params.bands, params.rows)) {
        CHECK(signature_similarity(sigs[std::size_t(a)], sigs[std::size_t(b)]) <
              params.threshold);
    }
}

TEST_CASE("pack_sequences: separator accounting and edge cases") {
    // one 10-token doc + separator = 11 -> two chunks of 4, 3 dropped
    std::vector<std::vector<std::int32_t>> docs{{0, 1, 2, 3, 4, 5, 6, 7, 8, 9}};
    const auto shard = pack_sequences(docs, 4, 99);
    CHECK(shard.count == 2);
    CHECK(shard.tokens.size() == 8);
    CHECK(shard.tokens[0] == 0);

    // doc of seq_len - 1 tokens -> exactly one chunk ending in eos
    const auto one = pack_sequences({{5, 6, 7}}, 4, 99);
    CHECK(one.count == 1);
    CHECK(one.tokens == std::vector<std::int32_t>{5, 6, 7, 99});

    const auto empty = pack_sequences({}, 8, 99);
    CHECK(empty.count == 0);
    CHECK(empty.tokens.empty());
}

TEST_CASE("pack_sequences properties: exact chunk lengths, token conservation") {
    Rng rng(13);
    std::vector<std::vector<std::int32_t>> docs;
    std::int64_t total_in = 0;
    for (int d = 0; d < 30; ++d) {
        std::vector<std::int32_t> doc(static_cast<std::size_t>(rng.uniform_int(1, 90)));
        for (auto& t : doc) t = std::int32_t(rng.uniform_int(0, 200));
        total_in += std::int64_t(doc.size());
        docs.push_back(std::move(doc));
    }
    const auto shard = pack_sequences(docs, 16, 255);
    CHECK(std::int64_t(shard.tokens.size()) == shard.count * 16);
    CHECK(std::int64_t(shard.tokens.size()) <= total_in + std::int64_t(docs.size()));
}

TEST_CASE("token file round-trip preserves header and payload") {
    PackedShard shard;
    shard.seq_len = 8;
    shard.count = 3;
    for (int i = 0; i < 24; ++i) shard.tokens.push_back(i * 7);
    const auto dir = std::filesystem::temp_directory_path() / "gptlab_tokens";
    std::filesystem::create_directories(dir);
    const auto path = dir / "shard.bin";
    write_token_file(path, shard);
    const auto loaded = read_token_file(path);
    CHECK(loaded.seq_len == 8);
    CHECK(loaded.count == 3);
    CHECK(loaded.tokens == shard.tokens);
}

TEST_CASE("corpus jsonl: round-trip and malformed input errors") {
    const auto dir = std::filesystem::temp_directory_path() / "gptlab_corpus";
    std::filesystem::create_directories(dir);
    const auto path = dir / "corpus.jsonl";
    const Corpus corpus = testsupport::toy_corpus(5, 300, 2);
    write_corpus_jsonl(path, corpus);
    const Corpus loaded = read_corpus_jsonl(path);
    REQUIRE(loaded.size() == corpus.size());
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        CHECK(loaded[i].id == corpus[i].id);
        CHECK(loaded[i].source == corpus[i].source);
        CHECK(loaded[i].text == corpus[i].text);
    }

    {
        std::ofstream os(path, std::ios::app);
        os << "{not json\n";
    }
    CHECK_THROWS_AS(read_corpus_jsonl(path), ParseError);
    CHECK_THROWS_AS(read_corpus_jsonl(dir / "missing.jsonl"), IoError);
}
