#include "palu/datagen.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "palu/error.hpp"
#include "palu/rng.hpp"

namespace palu {
namespace {

using nlohmann::json;

// Function words, in token-id order starting at VocabularyInfo::first_word.
enum Word : std::size_t {
    kThe, kBook, kWas, kWritten, kBy, kDot, kIt, kIs, kA, kNovel, kAuthor, kOf,
    kComma, kWho, kWrote, kQuestion, kPenned, kWriter, kName, kWordCount
};

// Template pieces; kBookSlot / kEntitySlot are placeholders.
constexpr std::size_t kBookSlot = 1000;
constexpr std::size_t kEntitySlot = 1001;

struct Template {
    std::vector<std::size_t> query;
    std::vector<std::size_t> response;
};

// Training templates 0-1; paraphrase templates 2-3 (same order).
const std::vector<Template>& templates() {
    static const std::vector<Template> t = {
        {{kWho, kWrote, kThe, kBook, kBookSlot, kQuestion},
         {kThe, kBook, kBookSlot, kWas, kWritten, kBy, kEntitySlot, kDot, kIt, kIs, kA, kNovel, kDot}},
        {{kWho, kIs, kThe, kAuthor, kOf, kBookSlot, kQuestion},
         {kThe, kAuthor, kOf, kBookSlot, kIs, kEntitySlot, kComma, kWho, kWrote, kIt, kDot}},
        {{kWho, kPenned, kThe, kNovel, kBookSlot, kQuestion},
         {kThe, kNovel, kBookSlot, kWas, kPenned, kBy, kEntitySlot, kDot}},
        {{kName, kThe, kWriter, kOf, kBookSlot, kDot},
         {kThe, kWriter, kOf, kBookSlot, kIs, kEntitySlot, kDot}},
    };
    return t;
}

constexpr std::size_t kReserved = 2 + kWordCount;

struct Rendered {
    TokenSeq tokens;
    std::size_t entity_start = 0;  // index of the first entity token, if any
};

Rendered render(const std::vector<std::size_t>& pieces, const VocabularyInfo& v,
                const TokenSeq& book, const TokenSeq& entity) {
    Rendered r;
    for (std::size_t p : pieces) {
        if (p == kBookSlot) {
            r.tokens.insert(r.tokens.end(), book.begin(), book.end());
        } else if (p == kEntitySlot) {
            r.entity_start = r.tokens.size();
            r.tokens.insert(r.tokens.end(), entity.begin(), entity.end());
        } else {
            r.tokens.push_back(v.first_word + p);
        }
    }
    return r;
}

VocabularyInfo layout_vocabulary(const CorpusSpec& spec) {
    std::size_t min_books = 2;
    while (min_books * (min_books - 1) < spec.num_entities) ++min_books;
    VocabularyInfo v;
    v.vocab_size = spec.vocab_size;
    v.pad = 0;
    v.eos = 1;
    v.first_word = 2;
    v.word_count = kWordCount;
    if (spec.vocab_size < kReserved + min_books + 8) {
        fail(ErrorCode::kCapacity, "vocabulary of " + std::to_string(spec.vocab_size) +
                                       " tokens is too small for " + std::to_string(spec.num_entities) +
                                       " entities");
    }
    const std::size_t free = spec.vocab_size - kReserved;
    v.book_count = std::max(min_books, free / 6);
    if (free - v.book_count < 8) v.book_count = min_books;
    v.first_book = kReserved;
    v.first_entity = kReserved + v.book_count;
    v.entity_count = spec.vocab_size - v.first_entity;
    return v;
}

std::uint64_t subseed(std::uint64_t seed, std::uint64_t stream) {
    // splitmix64 finalizer
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

}  // namespace

const char* to_string(Split s) { return s == Split::kForget ? "forget" : "retain"; }

void CorpusSpec::validate() const {
    require(num_entities >= 2, "corpus spec: need at least 2 entities");
    require(forget_fraction > 0.0 && forget_fraction < 1.0, "corpus spec: forget_fraction must be in (0, 1)");
    require(alias_prob >= 0.0 && alias_prob <= 1.0, "corpus spec: alias_prob must be in [0, 1]");
    require(samples_per_template >= 2, "corpus spec: samples_per_template must be >= 2");
}

std::vector<QASample> Corpus::select(Split split, bool canonical_only) const {
    std::vector<QASample> out;
    for (const QASample& s : samples) {
        if (s.split == split && (!canonical_only || !s.uses_alias)) out.push_back(s);
    }
    return out;
}

const Entity& Corpus::entity(std::size_t id) const {
    require(id < entities.size() && entities[id].id == id, "unknown entity id " + std::to_string(id));
    return entities[id];
}

Corpus generate_corpus(const CorpusSpec& spec) {
    spec.validate();
    Corpus corpus;
    corpus.spec = spec;
    corpus.vocab = layout_vocabulary(spec);
    const VocabularyInfo& v = corpus.vocab;

    // Books: distinct ordered pairs of book tokens.
    Rng book_rng(subseed(spec.seed, 0));
    std::vector<TokenSeq> books;
    for (std::size_t i = 0; i < v.book_count; ++i) {
        for (std::size_t j = 0; j < v.book_count; ++j) {
            if (i != j) books.push_back({v.first_book + i, v.first_book + j});
        }
    }
    book_rng.shuffle(std::span(books));

    Rng entity_rng(subseed(spec.seed, 1));
    std::set<TokenSeq> seen;
    std::size_t attempts = 0;
    while (corpus.entities.size() < spec.num_entities) {
        if (++attempts > 1000 * spec.num_entities) {
            fail(ErrorCode::kCapacity, "could not generate enough distinct entities");
        }
        const std::size_t len = 2 + static_cast<std::size_t>(entity_rng.below(5));
        std::vector<Token> pool(v.entity_count);
        for (std::size_t i = 0; i < pool.size(); ++i) pool[i] = v.first_entity + i;
        entity_rng.shuffle(std::span(pool));
        TokenSeq tokens(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(len));
        if (!seen.insert(tokens).second) continue;
        Entity e;
        e.id = corpus.entities.size();
        e.tokens = std::move(tokens);
        if (spec.alias_prob > 0.0) e.alias = pool[len];
        e.book = books[e.id];
        corpus.entities.push_back(std::move(e));
    }

    Rng alias_rng(subseed(spec.seed, 2));
    const std::size_t group = spec.samples_per_template;
    const auto alias_per_group = static_cast<std::size_t>(std::lround(spec.alias_prob * static_cast<double>(group)));
    for (const Entity& e : corpus.entities) {
        for (std::size_t tpl = 0; tpl < kTrainingTemplates; ++tpl) {
            std::vector<std::uint8_t> use_alias(group, 0);
            if (e.alias) {
                std::fill_n(use_alias.begin(), alias_per_group, 1);
                alias_rng.shuffle(std::span(use_alias));
            }
            for (std::size_t g = 0; g < group; ++g) {
                TokenSeq answer = e.tokens;
                if (use_alias[g]) answer.front() = *e.alias;
                const Template& t = templates()[tpl];
                QASample s;
                s.id = corpus.samples.size();
                s.query = render(t.query, v, e.book, answer).tokens;
                const Rendered resp = render(t.response, v, e.book, answer);
                s.response = resp.tokens;
                s.mask.bits.assign(s.response.size(), 0);
                for (std::size_t i = 0; i < answer.size(); ++i) s.mask.bits[resp.entity_start + i] = 1;
                s.entity_id = e.id;
                s.uses_alias = use_alias[g] != 0;
                s.template_id = tpl;
                corpus.samples.push_back(std::move(s));
            }
        }
    }

    auto [forget, retain] = split_forget_retain(corpus.samples, spec.forget_fraction, subseed(spec.seed, 3));
    for (const QASample& s : forget) corpus.samples[s.id].split = Split::kForget;
    for (const QASample& s : retain) corpus.samples[s.id].split = Split::kRetain;
    return corpus;
}

std::pair<std::vector<QASample>, std::vector<QASample>>
split_forget_retain(std::span<const QASample> samples, double fraction, std::uint64_t seed) {
    require(fraction > 0.0 && fraction < 1.0, "split_forget_retain: fraction must be in (0, 1)");
    std::vector<std::size_t> ids;
    for (const QASample& s : samples) ids.push_back(s.entity_id);
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    const auto n_forget = static_cast<std::size_t>(std::lround(fraction * static_cast<double>(ids.size())));
    if (n_forget == 0) fail(ErrorCode::kInvalidInput, "split_forget_retain: fraction selects no forget entities");
    if (n_forget >= ids.size()) fail(ErrorCode::kInvalidInput, "split_forget_retain: fraction leaves no retain entities");
    Rng rng(seed);
    rng.shuffle(std::span(ids));
    const std::set<std::size_t> forget_ids(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_forget));
    std::pair<std::vector<QASample>, std::vector<QASample>> out;
    for (QASample s : samples) {
        const bool f = forget_ids.count(s.entity_id) != 0;
        s.split = f ? Split::kForget : Split::kRetain;
        (f ? out.first : out.second).push_back(std::move(s));
    }
    return out;
}

double target_token_ratio(std::span<const QASample> samples) {
    std::size_t sensitive = 0;
    std::size_t total = 0;
    for (const QASample& s : samples) {
        total += s.mask.size();
        for (auto b : s.mask.bits) sensitive += b;
    }
    return total == 0 ? 0.0 : static_cast<double>(sensitive) / static_cast<double>(total);
}

std::vector<TruthRatioItem> build_truth_ratio_items(const Corpus& corpus, Split split,
                                                    std::size_t num_distractors, std::uint64_t seed) {
    require(num_distractors >= 1, "build_truth_ratio_items: need at least one distractor");
    std::vector<std::size_t> split_entities;
    for (const QASample& s : corpus.samples) {
        if (s.split == split) split_entities.push_back(s.entity_id);
    }
    std::sort(split_entities.begin(), split_entities.end());
    split_entities.erase(std::unique(split_entities.begin(), split_entities.end()), split_entities.end());
    require(split_entities.size() >= 2, "build_truth_ratio_items: split needs at least two entities");

    Rng rng(seed);
    std::vector<TruthRatioItem> items;
    for (const QASample& s : corpus.samples) {
        if (s.split != split || s.uses_alias) continue;
        const Entity& e = corpus.entity(s.entity_id);
        const Template& para = templates()[kTrainingTemplates + s.template_id % kTrainingTemplates];
        const Rendered q = render(para.query, corpus.vocab, e.book, e.tokens);
        const Rendered r = render(para.response, corpus.vocab, e.book, e.tokens);
        TruthRatioItem item;
        item.sample_id = s.id;
        item.entity_id = e.id;
        item.prompt = q.tokens;
        item.prompt.insert(item.prompt.end(), r.tokens.begin(),
                           r.tokens.begin() + static_cast<std::ptrdiff_t>(r.entity_start));
        item.correct = e.tokens;
        std::vector<std::size_t> others;
        for (std::size_t id : split_entities) {
            if (id != e.id) others.push_back(id);
        }
        rng.shuffle(std::span(others));
        others.resize(std::min(num_distractors, others.size()));
        for (std::size_t id : others) item.distractors.push_back(corpus.entity(id).tokens);
        items.push_back(std::move(item));
    }
    return items;
}

UnlearnSample to_unlearn_sample(const QASample& s) {
    return UnlearnSample{s.id, s.query, s.response, s.mask};
}

// ------------------------------------------------------------------ file I/O

namespace {

std::string join(std::span<const std::size_t> v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ' ';
        out += std::to_string(v[i]);
    }
    return out;
}

json spec_to_json(const CorpusSpec& s) {
    return {{"vocab_size", s.vocab_size}, {"num_entities", s.num_entities},
            {"forget_fraction", s.forget_fraction}, {"alias_prob", s.alias_prob},
            {"seed", s.seed}, {"samples_per_template", s.samples_per_template}};
}

json vocab_to_json(const VocabularyInfo& v) {
    return {{"vocab_size", v.vocab_size}, {"pad", v.pad}, {"eos", v.eos},
            {"first_word", v.first_word}, {"word_count", v.word_count},
            {"first_book", v.first_book}, {"book_count", v.book_count},
            {"first_entity", v.first_entity}, {"entity_count", v.entity_count}};
}

[[noreturn]] void parse_fail(const std::string& path, std::size_t line, const std::string& msg) {
    fail(ErrorCode::kParse, path + ":" + std::to_string(line) + ": " + msg);
}

std::vector<std::size_t> parse_ints(std::string_view text, const std::string& path, std::size_t line,
                                    const char* field) {
    std::vector<std::size_t> out;
    std::size_t i = 0;
    while (i < text.size()) {
        if (text[i] == ' ') {
            ++i;
            continue;
        }
        std::size_t v = 0;
        const auto [ptr, ec] = std::from_chars(text.data() + i, text.data() + text.size(), v);
        if (ec != std::errc() || (ptr != text.data() + text.size() && *ptr != ' ')) {
            parse_fail(path, line, std::string("malformed integer list in field '") + field + "'");
        }
        out.push_back(v);
        i = static_cast<std::size_t>(ptr - text.data());
    }
    return out;
}

QASample parse_record(const std::string& text, const std::string& path, std::size_t line) {
    QASample s;
    bool have_query = false, have_response = false, have_mask = false, have_entity = false, have_split = false;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const std::size_t tab = std::min(text.find('\t', pos), text.size());
        const std::string_view field(text.data() + pos, tab - pos);
        pos = tab + 1;
        if (field.empty()) continue;
        const std::size_t eq = field.find('=');
        if (eq == std::string_view::npos) parse_fail(path, line, "field without '='");
        const std::string_view key = field.substr(0, eq);
        const std::string_view val = field.substr(eq + 1);
        if (key == "query") {
            s.query = parse_ints(val, path, line, "query");
            have_query = true;
        } else if (key == "response") {
            s.response = parse_ints(val, path, line, "response");
            have_response = true;
        } else if (key == "mask") {
            for (std::size_t b : parse_ints(val, path, line, "mask")) {
                if (b > 1) parse_fail(path, line, "mask bits must be 0 or 1");
                s.mask.bits.push_back(static_cast<std::uint8_t>(b));
            }
            have_mask = true;
        } else if (key == "entity_id") {
            const auto v = parse_ints(val, path, line, "entity_id");
            if (v.size() != 1) parse_fail(path, line, "entity_id must be a single integer");
            s.entity_id = v[0];
            have_entity = true;
        } else if (key == "split") {
            if (val == "forget") {
                s.split = Split::kForget;
            } else if (val == "retain") {
                s.split = Split::kRetain;
            } else {
                parse_fail(path, line, "split must be 'forget' or 'retain'");
            }
            have_split = true;
        } else if (key == "alias") {
            const auto v = parse_ints(val, path, line, "alias");
            if (v.size() != 1 || v[0] > 1) parse_fail(path, line, "alias must be 0 or 1");
            s.uses_alias = v[0] == 1;
        } else if (key == "template") {
            const auto v = parse_ints(val, path, line, "template");
            if (v.size() != 1) parse_fail(path, line, "template must be a single integer");
            s.template_id = v[0];
        } else {
            parse_fail(path, line, "unknown field '" + std::string(key) + "'");
        }
    }
    if (!(have_query && have_response && have_mask && have_entity && have_split)) {
        parse_fail(path, line, "record needs query, response, mask, entity_id and split");
    }
    if (s.mask.size() != s.response.size()) {
        parse_fail(path, line, "mask length " + std::to_string(s.mask.size()) +
                                   " does not match response length " + std::to_string(s.response.size()));
    }
    return s;
}

}  // namespace

void save_corpus(const Corpus& corpus, const std::string& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) fail(ErrorCode::kIo, "cannot open corpus for writing: " + path);
    if (corpus.vocab.vocab_size != 0) {
        json entities = json::array();
        for (const Entity& e : corpus.entities) {
            entities.push_back({{"id", e.id}, {"tokens", e.tokens},
                                {"alias", e.alias ? json(*e.alias) : json(nullptr)}, {"book", e.book}});
        }
        const json meta = {{"version", 1}, {"spec", spec_to_json(corpus.spec)},
                           {"vocab", vocab_to_json(corpus.vocab)}, {"entities", entities}};
        os << "#palu-corpus " << meta.dump() << '\n';
    }
    for (const QASample& s : corpus.samples) {
        std::vector<std::size_t> bits(s.mask.bits.begin(), s.mask.bits.end());
        os << "query=" << join(s.query) << "\tresponse=" << join(s.response) << "\tmask=" << join(bits)
           << "\tentity_id=" << s.entity_id << "\tsplit=" << to_string(s.split)
           << "\talias=" << (s.uses_alias ? 1 : 0) << "\ttemplate=" << s.template_id << '\n';
    }
    if (!os) fail(ErrorCode::kIo, "failed writing corpus: " + path);
}

Corpus load_corpus(const std::string& path) {
    std::ifstream is(path);
    if (!is) fail(ErrorCode::kIo, "cannot open corpus: " + path);
    Corpus corpus;
    std::string text;
    std::size_t line = 0;
    while (std::getline(is, text)) {
        ++line;
        if (!text.empty() && text.back() == '\r') text.pop_back();
        if (text.empty()) continue;
        if (text.rfind("#palu-corpus ", 0) == 0) {
            if (line != 1) parse_fail(path, line, "metadata line must come first");
            try {
                const json meta = json::parse(text.substr(13));
                if (meta.at("version").get<int>() != 1) parse_fail(path, line, "unsupported corpus version");
                const json& sp = meta.at("spec");
                corpus.spec.vocab_size = sp.at("vocab_size");
                corpus.spec.num_entities = sp.at("num_entities");
                corpus.spec.forget_fraction = sp.at("forget_fraction");
                corpus.spec.alias_prob = sp.at("alias_prob");
                corpus.spec.seed = sp.at("seed");
                corpus.spec.samples_per_template = sp.at("samples_per_template");
                const json& v = meta.at("vocab");
                corpus.vocab.vocab_size = v.at("vocab_size");
                corpus.vocab.pad = v.at("pad");
                corpus.vocab.eos = v.at("eos");
                corpus.vocab.first_word = v.at("first_word");
                corpus.vocab.word_count = v.at("word_count");
                corpus.vocab.first_book = v.at("first_book");
                corpus.vocab.book_count = v.at("book_count");
                corpus.vocab.first_entity = v.at("first_entity");
                corpus.vocab.entity_count = v.at("entity_count");
                for (const json& e : meta.at("entities")) {
                    Entity ent;
                    ent.id = e.at("id");
                    ent.tokens = e.at("tokens").get<TokenSeq>();
                    if (!e.at("alias").is_null()) ent.alias = e.at("alias").get<Token>();
                    ent.book = e.at("book").get<TokenSeq>();
                    corpus.entities.push_back(std::move(ent));
                }
            } catch (const json::exception& e) {
                parse_fail(path, line, std::string("bad metadata: ") + e.what());
            }
            continue;
        }
        if (text[0] == '#') continue;
        QASample s = parse_record(text, path, line);
        s.id = corpus.samples.size();
        corpus.samples.push_back(std::move(s));
    }
    return corpus;
}

}  // namespace palu
