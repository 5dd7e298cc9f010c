#pragma once

// Synthetic QA memorization corpus. Each fictitious entity (2-6 tokens) is
// the answer to "who wrote <book>" style questions; the sensitivity mask marks
// exactly the entity tokens. A fraction of samples replaces the entity's first
// token with an alias token, which plants a near-synonym with the runner-up
// logit at the entity start after pretraining.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "palu/masking.hpp"
#include "palu/toylm.hpp"

namespace palu {

enum class Split { kForget, kRetain };

const char* to_string(Split s);

struct Entity {
    std::size_t id = 0;
    TokenSeq tokens;
    std::optional<Token> alias;
    TokenSeq book;  // the two-token title the entity is the answer for

    friend bool operator==(const Entity&, const Entity&) = default;
};

struct QASample {
    std::size_t id = 0;
    TokenSeq query;
    TokenSeq response;
    SensitivityMask mask;
    std::size_t entity_id = 0;
    Split split = Split::kRetain;
    bool uses_alias = false;
    std::size_t template_id = 0;

    friend bool operator==(const QASample&, const QASample&) = default;
};

struct CorpusSpec {
    std::size_t vocab_size = 120;
    std::size_t num_entities = 50;
    double forget_fraction = 0.10;
    double alias_prob = 0.3;
    std::uint64_t seed = 7;
    // Copies of each training template per entity; alias use is stratified
    // within each group.
    std::size_t samples_per_template = 3;

    void validate() const;
    friend bool operator==(const CorpusSpec&, const CorpusSpec&) = default;
};

// Token layout of a generated vocabulary.
struct VocabularyInfo {
    std::size_t vocab_size = 0;
    Token pad = 0;
    Token eos = 1;
    Token first_word = 2;
    std::size_t word_count = 0;
    Token first_book = 0;
    std::size_t book_count = 0;
    Token first_entity = 0;
    std::size_t entity_count = 0;

    friend bool operator==(const VocabularyInfo&, const VocabularyInfo&) = default;
};

struct Corpus {
    CorpusSpec spec;
    VocabularyInfo vocab;
    std::vector<Entity> entities;
    std::vector<QASample> samples;

    // Samples of one split, optionally only those using the canonical entity.
    std::vector<QASample> select(Split split, bool canonical_only = false) const;
    const Entity& entity(std::size_t id) const;

    friend bool operator==(const Corpus&, const Corpus&) = default;
};

// Number of training templates; two more paraphrase templates exist for
// Truth Ratio evaluation only.
inline constexpr std::size_t kTrainingTemplates = 2;

Corpus generate_corpus(const CorpusSpec& spec);

// Entity-level split: round(fraction * entities) entities go to the forget
// set. Returns (forget, retain) with split tags set.
std::pair<std::vector<QASample>, std::vector<QASample>>
split_forget_retain(std::span<const QASample> samples, double fraction, std::uint64_t seed);

// Sensitive tokens over all response tokens.
double target_token_ratio(std::span<const QASample> samples);

// Prompt + continuations for one Truth Ratio evaluation.
struct TruthRatioItem {
    std::size_t sample_id = 0;
    std::size_t entity_id = 0;
    TokenSeq prompt;
    TokenSeq correct;
    std::vector<TokenSeq> distractors;
};

// One item per canonical sample of `split`: the paraphrase template matching
// the sample's template, the canonical entity as the correct answer and up to
// `num_distractors` other entities of the same split as perturbed answers.
std::vector<TruthRatioItem> build_truth_ratio_items(const Corpus& corpus, Split split,
                                                    std::size_t num_distractors = 4,
                                                    std::uint64_t seed = 11);

UnlearnSample to_unlearn_sample(const QASample& s);

// Text format: an optional "#palu-corpus <json>" metadata line followed by
// one tab-separated record per sample:
//   query=<ints>  response=<ints>  mask=<bits>  entity_id=<int>
//   split=<forget|retain>  [alias=<0|1>]  [template=<int>]
void save_corpus(const Corpus& corpus, const std::string& path);
Corpus load_corpus(const std::string& path);

}  // namespace palu
