#include <gtest/gtest.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "palu/datagen.hpp"
#include "test_util.hpp"

using namespace palu;
using palu::testing::error_code;

namespace {

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / ("palu_test_" + name)).string();
}

void write_file(const std::string& path, const std::string& text) {
    std::ofstream os(path);
    os << text;
}

std::size_t count_entities(std::span<const QASample> samples) {
    std::set<std::size_t> ids;
    for (const QASample& s : samples) ids.insert(s.entity_id);
    return ids.size();
}

}  // namespace

TEST(GenerateCorpus, DefaultShape) {
    const Corpus c = generate_corpus(CorpusSpec{});
    EXPECT_EQ(c.entities.size(), 50u);
    EXPECT_EQ(c.samples.size(), 50u * kTrainingTemplates * 3);
    EXPECT_EQ(count_entities(c.select(Split::kForget)), 5u);
    EXPECT_EQ(count_entities(c.select(Split::kRetain)), 45u);
    std::map<std::size_t, std::size_t> per_entity;
    for (const QASample& s : c.samples) ++per_entity[s.entity_id];
    for (const auto& [id, n] : per_entity) EXPECT_GE(n, 3u);
    const double ratio = target_token_ratio(c.samples);
    EXPECT_GE(ratio, 0.2);
    EXPECT_LE(ratio, 0.35);
}

TEST(GenerateCorpus, Deterministic) {
    const Corpus a = generate_corpus(CorpusSpec{});
    EXPECT_EQ(a, generate_corpus(CorpusSpec{}));
    CorpusSpec other;
    other.seed = 8;
    EXPECT_NE(a, generate_corpus(other));
}

TEST(GenerateCorpus, EntitiesAndMasks) {
    const Corpus c = generate_corpus(CorpusSpec{});
    std::set<TokenSeq> distinct;
    for (const Entity& e : c.entities) {
        EXPECT_GE(e.tokens.size(), 2u);
        EXPECT_LE(e.tokens.size(), 6u);
        ASSERT_TRUE(e.alias.has_value());
        EXPECT_NE(*e.alias, e.tokens.front());
        for (Token t : e.tokens) EXPECT_GE(t, c.vocab.first_entity);
        EXPECT_TRUE(distinct.insert(e.tokens).second);
    }
    for (const QASample& s : c.samples) {
        ASSERT_EQ(s.mask.size(), s.response.size());
        const Entity& e = c.entity(s.entity_id);
        TokenSeq expected = e.tokens;
        if (s.uses_alias) expected.front() = *e.alias;
        TokenSeq masked;
        for (std::size_t t = 0; t < s.response.size(); ++t) {
            if (s.mask.sensitive(t)) masked.push_back(s.response[t]);
        }
        EXPECT_EQ(masked, expected);
        // One contiguous span with a common token on each side.
        const auto spans = extract_spans(s.mask);
        ASSERT_EQ(spans.size(), 1u);
        EXPECT_GT(spans[0].start, 0u);
        EXPECT_LT(spans[0].end + 1, s.response.size());
        for (Token t : s.query) EXPECT_LT(t, c.vocab.vocab_size);
    }
}

TEST(GenerateCorpus, AliasStratification) {
    const Corpus c = generate_corpus(CorpusSpec{});
    std::map<std::pair<std::size_t, std::size_t>, std::size_t> alias_count;
    for (const QASample& s : c.samples) alias_count[{s.entity_id, s.template_id}] += s.uses_alias;
    for (const auto& [key, n] : alias_count) EXPECT_EQ(n, 1u);

    CorpusSpec none;
    none.alias_prob = 0.0;
    const Corpus plain = generate_corpus(none);
    for (const Entity& e : plain.entities) EXPECT_FALSE(e.alias.has_value());
    for (const QASample& s : plain.samples) {
        EXPECT_FALSE(s.uses_alias);
        const Entity& e = plain.entity(s.entity_id);
        TokenSeq masked;
        for (std::size_t t = 0; t < s.response.size(); ++t) {
            if (s.mask.sensitive(t)) masked.push_back(s.response[t]);
        }
        EXPECT_EQ(masked, e.tokens);
    }
}

TEST(GenerateCorpus, CapacityAndValidation) {
    CorpusSpec small;
    small.vocab_size = 20;
    EXPECT_EQ(error_code([&] { generate_corpus(small); }), ErrorCode::kCapacity);
    CorpusSpec bad;
    bad.forget_fraction = 1.5;
    EXPECT_EQ(error_code([&] { generate_corpus(bad); }), ErrorCode::kInvalidInput);
    bad = CorpusSpec{};
    bad.num_entities = 1;
    EXPECT_EQ(error_code([&] { generate_corpus(bad); }), ErrorCode::kInvalidInput);
}

TEST(SplitForgetRetain, EntityLevel) {
    const Corpus c = generate_corpus(CorpusSpec{});
    const auto [f, r] = split_forget_retain(c.samples, 0.10, 99);
    EXPECT_EQ(count_entities(f), 5u);
    EXPECT_EQ(f.size() + r.size(), c.samples.size());
    std::set<std::size_t> fe, re, ids;
    for (const QASample& s : f) {
        fe.insert(s.entity_id);
        ids.insert(s.id);
        EXPECT_EQ(s.split, Split::kForget);
    }
    for (const QASample& s : r) {
        re.insert(s.entity_id);
        EXPECT_TRUE(ids.insert(s.id).second);
    }
    for (std::size_t e : fe) EXPECT_EQ(re.count(e), 0u);

    const auto again = split_forget_retain(c.samples, 0.10, 99);
    EXPECT_EQ(again.first, f);
    EXPECT_EQ(error_code([&] { split_forget_retain(c.samples, 0.001, 1); }), ErrorCode::kInvalidInput);
    EXPECT_EQ(error_code([&] { split_forget_retain(c.samples, 0.0, 1); }), ErrorCode::kInvalidInput);
}

TEST(TruthRatioItems, Structure) {
    const Corpus c = generate_corpus(CorpusSpec{});
    const auto items = build_truth_ratio_items(c, Split::kForget, 4, 11);
    EXPECT_EQ(items.size(), c.select(Split::kForget, true).size());
    for (const TruthRatioItem& it : items) {
        const Entity& e = c.entity(it.entity_id);
        EXPECT_EQ(it.correct, e.tokens);
        EXPECT_EQ(it.distractors.size(), 4u);
        for (const TokenSeq& d : it.distractors) {
            EXPECT_NE(d, e.tokens);
            bool same_split = false;
            for (const QASample& s : c.select(Split::kForget)) same_split |= c.entity(s.entity_id).tokens == d;
            EXPECT_TRUE(same_split);
        }
        EXPECT_NE(std::search(it.prompt.begin(), it.prompt.end(), e.book.begin(), e.book.end()), it.prompt.end());
    }
    EXPECT_EQ(items.size(), build_truth_ratio_items(c, Split::kForget, 4, 11).size());
    EXPECT_EQ(error_code([&] { build_truth_ratio_items(c, Split::kForget, 0, 11); }), ErrorCode::kInvalidInput);
}

TEST(CorpusFile, RoundTrip) {
    const Corpus c = generate_corpus(CorpusSpec{});
    const std::string path = temp_path("corpus.txt");
    save_corpus(c, path);
    EXPECT_EQ(load_corpus(path), c);
    std::remove(path.c_str());
}

TEST(CorpusFile, PlainRecordsWithoutMetadata) {
    const std::string path = temp_path("plain.txt");
    write_file(path,
               "query=2 3\tresponse=4 5 6\tmask=0 1 0\tentity_id=0\tsplit=forget\n"
               "\n"
               "query=2\tresponse=7 8\tmask=1 1\tentity_id=1\tsplit=retain\talias=1\ttemplate=1\n");
    const Corpus c = load_corpus(path);
    ASSERT_EQ(c.samples.size(), 2u);
    EXPECT_EQ(c.samples[0].response, (TokenSeq{4, 5, 6}));
    EXPECT_EQ(c.samples[0].split, Split::kForget);
    EXPECT_TRUE(c.samples[1].uses_alias);
    EXPECT_EQ(c.samples[1].template_id, 1u);
    EXPECT_EQ(c.samples[1].id, 1u);
    std::remove(path.c_str());
}

TEST(CorpusFile, EmptyFileIsEmptyCorpus) {
    const std::string path = temp_path("empty.txt");
    write_file(path, "");
    EXPECT_TRUE(load_corpus(path).samples.empty());
    std::remove(path.c_str());
}

TEST(CorpusFile, ParseErrorsCarryLineNumbers) {
    const std::string path = temp_path("bad.txt");
    const std::string good = "query=2\tresponse=4 5\tmask=0 1\tentity_id=0\tsplit=forget\n";
    const std::vector<std::string> bad_lines = {
        "query=2\tresponse=4 5\tmask=0 1 1\tentity_id=0\tsplit=forget\n",
        "query=2\tresponse=4 5\tmask=0 2\tentity_id=0\tsplit=forget\n",
        "query=2\tresponse=4 x\tmask=0 1\tentity_id=0\tsplit=forget\n",
        "query=2\tresponse=4 5\tmask=0 1\tentity_id=0\tsplit=maybe\n",
        "query=2\tresponse=4 5\tmask=0 1\tentity_id=0\n",
        "query=2\tresponse=4 5\tmask=0 1\tentity_id=0\tsplit=forget\tcolor=3\n",
    };
    for (const std::string& line : bad_lines) {
        write_file(path, good + line);
        try {
            load_corpus(path);
            ADD_FAILURE() << "accepted: " << line;
        } catch (const Error& e) {
            EXPECT_EQ(e.code(), ErrorCode::kParse);
            EXPECT_NE(std::string(e.what()).find(":2:"), std::string::npos) << e.what();
        }
    }
    std::remove(path.c_str());
    EXPECT_EQ(error_code([] { load_corpus("/nonexistent/corpus.txt"); }), ErrorCode::kIo);
}

TEST(UnlearnSample, FromQASample) {
    const Corpus c = generate_corpus(CorpusSpec{});
    const UnlearnSample u = to_unlearn_sample(c.samples[3]);
    EXPECT_EQ(u.id, 3u);
    EXPECT_EQ(u.response, c.samples[3].response);
    EXPECT_EQ(u.mask, c.samples[3].mask);
}
