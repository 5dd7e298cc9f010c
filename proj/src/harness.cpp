#include "palu/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "palu/error.hpp"
#include "palu/log.hpp"
#include "palu/rng.hpp"

namespace palu {
namespace {

using nlohmann::json;

json budget_json(Budget b) { return b.is_all() ? json("all") : json(b.value()); }

Budget parse_budget(const json& j, const char* key) {
    if (j.is_string() && j.get<std::string>() == "all") return Budget::all();
    if (j.is_number_unsigned() || (j.is_number_integer() && j.get<std::int64_t>() >= 1)) {
        const auto v = j.get<std::uint64_t>();
        if (v >= 1) return Budget::of(static_cast<std::size_t>(v));
    }
    fail(ErrorCode::kInvalidInput, std::string("config: '") + key + "' must be a positive integer or \"all\"");
}

std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string short_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%g", v);
    return buf;
}

const std::vector<std::string>& seed_keys() {
    static const std::vector<std::string> k = {"corpus_seed", "model_seed", "pretrain_seed", "unlearn_seed",
                                               "tr_seed"};
    return k;
}

void apply_field(ExperimentConfig& c, const std::string& key, const json& v) {
    try {
        if (key == "vocab_size") c.corpus.vocab_size = c.model.vocab_size = v.get<std::size_t>();
        else if (key == "num_entities") c.corpus.num_entities = v.get<std::size_t>();
        else if (key == "forget_fraction") c.corpus.forget_fraction = v.get<double>();
        else if (key == "alias_prob") c.corpus.alias_prob = v.get<double>();
        else if (key == "corpus_seed") c.corpus.seed = v.get<std::uint64_t>();
        else if (key == "samples_per_template") c.corpus.samples_per_template = v.get<std::size_t>();
        else if (key == "context_window") c.model.context_window = v.get<std::size_t>();
        else if (key == "embed_dim") c.model.embed_dim = v.get<std::size_t>();
        else if (key == "hidden_dim") c.model.hidden_dim = v.get<std::size_t>();
        else if (key == "model_seed") c.model_seed = v.get<std::uint64_t>();
        else if (key == "pretrain_epochs") c.pretrain.epochs = v.get<std::size_t>();
        else if (key == "pretrain_batch_size") c.pretrain.batch_size = v.get<std::size_t>();
        else if (key == "pretrain_lr") c.pretrain.lr = v.get<double>();
        else if (key == "pretrain_lr_decay") c.pretrain.lr_decay = v.get<bool>();
        else if (key == "pretrain_seed") c.pretrain.seed = v.get<std::uint64_t>();
        else if (key == "em_threshold") c.pretrain.em_threshold = v.get<double>();
        else if (key == "objective") c.unlearn.objective = parse_objective(v.get<std::string>());
        else if (key == "k") c.unlearn.objective_config.k = parse_budget(v, "k");
        else if (key == "n") c.unlearn.objective_config.n = parse_budget(v, "n");
        else if (key == "lambda") c.unlearn.objective_config.lambda = v.get<double>();
        else if (key == "target") c.unlearn.objective_config.target = parse_target_strategy(v.get<std::string>());
        else if (key == "refresh_topk") c.unlearn.objective_config.refresh_topk = v.get<bool>();
        else if (key == "unlearn_epochs") c.unlearn.epochs = v.get<std::size_t>();
        else if (key == "unlearn_batch_size") c.unlearn.batch_size = v.get<std::size_t>();
        else if (key == "unlearn_lr") c.unlearn.lr = v.get<double>();
        else if (key == "unlearn_warmup_epochs") c.unlearn.warmup_epochs = v.get<std::size_t>();
        else if (key == "unlearn_seed") c.unlearn.seed = v.get<std::uint64_t>();
        else if (key == "min_k_fraction") c.eval.min_k_fraction = v.get<double>();
        else if (key == "full_response_em") c.eval.full_response_em = v.get<bool>();
        else if (key == "num_distractors") c.eval.num_distractors = v.get<std::size_t>();
        else if (key == "tr_seed") c.eval.tr_seed = v.get<std::uint64_t>();
        else fail(ErrorCode::kInvalidInput, "config: unknown field '" + key + "'");
    } catch (const json::exception& e) {
        fail(ErrorCode::kInvalidInput, "config: bad value for '" + key + "': " + e.what());
    }
}

json config_json(const ExperimentConfig& c) {
    const ObjectiveConfig& o = c.unlearn.objective_config;
    return json{
        {"vocab_size", c.corpus.vocab_size},
        {"num_entities", c.corpus.num_entities},
        {"forget_fraction", c.corpus.forget_fraction},
        {"alias_prob", c.corpus.alias_prob},
        {"corpus_seed", c.corpus.seed},
        {"samples_per_template", c.corpus.samples_per_template},
        {"context_window", c.model.context_window},
        {"embed_dim", c.model.embed_dim},
        {"hidden_dim", c.model.hidden_dim},
        {"model_seed", c.model_seed},
        {"pretrain_epochs", c.pretrain.epochs},
        {"pretrain_batch_size", c.pretrain.batch_size},
        {"pretrain_lr", c.pretrain.lr},
        {"pretrain_lr_decay", c.pretrain.lr_decay},
        {"pretrain_seed", c.pretrain.seed},
        {"em_threshold", c.pretrain.em_threshold},
        {"objective", std::string(to_string(c.unlearn.objective))},
        {"k", budget_json(o.k)},
        {"n", budget_json(o.n)},
        {"lambda", o.lambda},
        {"target", std::string(to_string(o.target))},
        {"refresh_topk", o.refresh_topk},
        {"unlearn_epochs", c.unlearn.epochs},
        {"unlearn_batch_size", c.unlearn.batch_size},
        {"unlearn_lr", c.unlearn.lr},
        {"unlearn_warmup_epochs", c.unlearn.warmup_epochs},
        {"unlearn_seed", c.unlearn.seed},
        {"min_k_fraction", c.eval.min_k_fraction},
        {"full_response_em", c.eval.full_response_em},
        {"num_distractors", c.eval.num_distractors},
        {"tr_seed", c.eval.tr_seed},
    };
}

std::string read_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) fail(ErrorCode::kIo, "cannot open " + path);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

double seconds_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

std::vector<UnlearnSample> to_unlearn(std::span<const QASample> samples) {
    std::vector<UnlearnSample> out;
    out.reserve(samples.size());
    for (const QASample& s : samples) out.push_back(to_unlearn_sample(s));
    return out;
}

json metric_json(const MetricReport& r) { return json::parse(r.to_json()); }

}  // namespace

std::string budget_to_string(Budget b) { return b.is_all() ? "all" : std::to_string(b.value()); }

// ------------------------------------------------------------ configuration

ExperimentConfig ExperimentConfig::defaults() {
    ExperimentConfig c;
    c.model.vocab_size = c.corpus.vocab_size;
    c.unlearn.objective_config.k = Budget::of(10);
    c.unlearn.objective_config.n = Budget::of(3);
    return c;
}

ExperimentConfig ExperimentConfig::from_json(const std::string& text, bool require_seeds) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        fail(ErrorCode::kParse, std::string("config: ") + e.what());
    }
    if (!j.is_object()) fail(ErrorCode::kParse, "config: top level must be a JSON object");
    if (require_seeds) {
        for (const std::string& k : seed_keys()) {
            if (!j.contains(k)) fail(ErrorCode::kInvalidInput, "config: missing mandatory seed '" + k + "'");
        }
    }
    ExperimentConfig c = defaults();
    for (const auto& [key, value] : j.items()) apply_field(c, key, value);
    c.validate();
    return c;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
    return from_json(read_file(path), /*require_seeds=*/true);
}

void ExperimentConfig::set(const std::string& key, const std::string& json_value) {
    json v;
    try {
        v = json::parse(json_value);
    } catch (const json::exception&) {
        v = json_value;  // bare strings such as palu or all
    }
    apply_field(*this, key, v);
    validate();
}

void ExperimentConfig::validate() const {
    corpus.validate();
    model.validate();
    require(model.vocab_size == corpus.vocab_size, "config: model and corpus vocab sizes differ");
    require(pretrain.batch_size >= 1 && unlearn.batch_size >= 1, "config: batch sizes must be >= 1");
    require(pretrain.lr >= 0.0 && unlearn.lr >= 0.0, "config: learning rates must be >= 0");
    require(pretrain.em_threshold >= 0.0 && pretrain.em_threshold <= 1.0, "config: em_threshold must be in [0, 1]");
    require(eval.min_k_fraction > 0.0 && eval.min_k_fraction <= 1.0, "config: min_k_fraction must be in (0, 1]");
    require(eval.num_distractors >= 1, "config: num_distractors must be >= 1");
    unlearn.objective_config.validate();
}

std::string ExperimentConfig::to_json() const { return config_json(*this).dump(); }

std::uint64_t ExperimentConfig::hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : to_json()) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string ExperimentConfig::hash_hex() const {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(hash()));
    return buf;
}

// --------------------------------------------------------------------- data

CorpusSummary summarize(const Corpus& corpus) {
    CorpusSummary s;
    s.samples = corpus.samples.size();
    std::set<std::size_t> all, forget, retain;
    for (const QASample& q : corpus.samples) {
        all.insert(q.entity_id);
        if (q.split == Split::kForget) {
            forget.insert(q.entity_id);
            ++s.forget_samples;
        } else {
            retain.insert(q.entity_id);
            ++s.retain_samples;
        }
        if (q.uses_alias) ++s.alias_samples;
    }
    s.entities = all.size();
    s.forget_entities = forget.size();
    s.retain_entities = retain.size();
    s.target_token_ratio = target_token_ratio(corpus.samples);
    return s;
}

Corpus generate_data(const ExperimentConfig& cfg) {
    cfg.validate();
    return generate_corpus(cfg.corpus);
}

// ---------------------------------------------------------------- pretrain

std::string PretrainReport::to_json(const ExperimentConfig& cfg) const {
    nlohmann::ordered_json j;
    j["config_hash"] = cfg.hash_hex();
    j["config"] = config_json(cfg);
    j["retain_only"] = retain_only;
    j["epoch_loss"] = epoch_loss;
    j["em_forget"] = em_forget;
    j["em_retain"] = em_retain;
    j["converged"] = converged;
    return j.dump(2);
}

Model pretrain(const ExperimentConfig& cfg, const Corpus& corpus, bool retain_only, PretrainReport* report) {
    cfg.validate();
    if (corpus.vocab.vocab_size != 0 && corpus.vocab.vocab_size != cfg.model.vocab_size) {
        fail(ErrorCode::kInvalidInput, "pretrain: corpus vocabulary does not match the model config");
    }
    Model model;
    model.config = cfg.model;
    model.config.pad_token = corpus.vocab.pad;
    model.params = init_params(model.config, cfg.model_seed);

    std::vector<Example> examples;
    for (const QASample& s : corpus.samples) {
        if (retain_only && s.split == Split::kForget) continue;
        auto ex = teacher_forced_examples(model.config, s.query, s.response);
        examples.insert(examples.end(), ex.begin(), ex.end());
    }
    require(!examples.empty(), "pretrain: no training examples");

    PretrainReport rep;
    rep.retain_only = retain_only;
    OptimizerState opt = OptimizerState::for_model(model.config, cfg.pretrain.lr);
    Rng rng(cfg.pretrain.seed);
    std::vector<std::size_t> order(examples.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<Example> batch;
    const std::size_t steps_per_epoch = (order.size() + cfg.pretrain.batch_size - 1) / cfg.pretrain.batch_size;
    const double total_steps = static_cast<double>(steps_per_epoch * cfg.pretrain.epochs);
    std::size_t global_step = 0;
    for (std::size_t epoch = 0; epoch < cfg.pretrain.epochs; ++epoch) {
        rng.shuffle(std::span(order));
        double loss = 0.0;
        std::size_t steps = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.pretrain.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.pretrain.batch_size);
            batch.clear();
            for (std::size_t i = start; i < end; ++i) batch.push_back(examples[order[i]]);
            if (cfg.pretrain.lr_decay) {
                opt.lr = cfg.pretrain.lr * (1.0 - static_cast<double>(global_step) / total_steps);
            }
            ++global_step;
            loss += train_step_ce(model, opt, batch);
            ++steps;
        }
        rep.epoch_loss.push_back(loss / static_cast<double>(steps));
        if (log::level() >= log::Level::kDebug) {
            log::debug("pretrain epoch " + std::to_string(epoch) + " loss " + format_double(rep.epoch_loss.back()));
        }
    }
    const auto forget = corpus.select(Split::kForget, true);
    const auto retain = corpus.select(Split::kRetain, true);
    rep.em_forget = extraction_memorization(model, forget);
    rep.em_retain = extraction_memorization(model, retain);
    rep.converged = rep.em_retain >= cfg.pretrain.em_threshold &&
                    (retain_only || rep.em_forget >= cfg.pretrain.em_threshold);
    log::info("pretrain done: em_forget=" + format_double(rep.em_forget) +
              " em_retain=" + format_double(rep.em_retain));
    if (report) *report = std::move(rep);
    return model;
}

// ---------------------------------------------------------------- evaluate

MetricReport evaluate(const ExperimentConfig& cfg, const Corpus& corpus, const Model& model,
                      const Model* retain, const Model* reference) {
    if (corpus.vocab.vocab_size != 0 && corpus.vocab.vocab_size != model.config.vocab_size) {
        fail(ErrorCode::kInvalidInput, "evaluate: checkpoint vocabulary does not match the corpus");
    }
    const auto forget = corpus.select(Split::kForget, true);
    const auto retained = corpus.select(Split::kRetain, true);
    MetricReport r;
    r.em_forget = extraction_memorization(model, forget, cfg.eval.full_response_em);
    r.em_retain = extraction_memorization(model, retained, cfg.eval.full_response_em);
    if (!forget.empty()) {
        r.loss_forget = loss_metric(model, forget);
        double mink = 0.0;
        for (const QASample& s : forget) mink += min_k_percent(model, s, cfg.eval.min_k_fraction);
        r.mink_forget = mink / static_cast<double>(forget.size());
    }
    if (retain != nullptr && !corpus.entities.empty()) {
        if (!(retain->config == model.config)) {
            fail(ErrorCode::kInvalidInput, "evaluate: retain checkpoint has a different model config");
        }
        const auto items = build_truth_ratio_items(corpus, Split::kForget, cfg.eval.num_distractors, cfg.eval.tr_seed);
        const KsResult ks = forget_quality(model, *retain, items);
        r.fq_pvalue = ks.p_value;
        r.ks_stat = ks.statistic;
        r.tr_samples = static_cast<double>(items.size());
        if (items.size() < 20) log::info("forget quality: fewer than 20 Truth Ratio samples per side");
    }
    if (reference != nullptr) {
        if (!(reference->config == model.config)) {
            fail(ErrorCode::kInvalidInput, "evaluate: reference checkpoint has a different model config");
        }
        UnlearnSettings us{cfg.unlearn.objective, cfg.unlearn.objective_config};
        const ObjectiveConfig oc = us.effective_config();
        const Snapshot ref = snapshot_reference(*reference);
        try {
            r.topk_flatness = topk_flatness(model, ref, forget, oc.k, oc.n);
            r.restricted_entropy = mean_restricted_entropy(model, ref, forget, oc.k, oc.n);
        } catch (const Error& e) {
            if (e.code() != ErrorCode::kUndefinedValue) throw;
        }
        if (!corpus.entities.empty()) {
            try {
                r.synonym_takeover = synonym_takeover_rate(*reference, model, corpus, forget);
            } catch (const Error& e) {
                if (e.code() != ErrorCode::kUndefinedValue) throw;
            }
        }
    }
    r.validate();
    return r;
}

// ----------------------------------------------------------------- unlearn

std::string RunReport::to_json(const ExperimentConfig& cfg) const {
    nlohmann::ordered_json j;
    j["config_hash"] = config_hash;
    j["config"] = config_json(cfg);
    j["objective"] = objective;
    j["epoch_loss"] = epoch_loss;
    j["epoch_touched"] = epoch_touched;
    nlohmann::ordered_json touched = nlohmann::ordered_json::array();
    for (const SampleTouch& t : touched_per_sample) {
        touched.push_back({{"sample_id", t.sample_id}, {"initiating", t.initiating}, {"touched", t.touched}});
    }
    j["touched_per_sample"] = touched;
    j["topk_cache_entries"] = topk_cache_entries;
    j["before"] = metric_json(before);
    j["after"] = metric_json(after);
    return j.dump(2);
}

Model unlearn(const ExperimentConfig& cfg, const Corpus& corpus, const Model& original,
              const Model* retain, RunReport* report, PhaseTimings* timings) {
    cfg.validate();
    if (corpus.vocab.vocab_size != 0 && corpus.vocab.vocab_size != original.config.vocab_size) {
        fail(ErrorCode::kInvalidInput, "unlearn: checkpoint vocabulary does not match the corpus");
    }
    const auto t_start = std::chrono::steady_clock::now();
    const auto forget = to_unlearn(corpus.select(Split::kForget));
    const auto retain_set = to_unlearn(corpus.select(Split::kRetain));
    require(!forget.empty(), "unlearn: corpus has no forget samples");

    const UnlearnSettings settings{cfg.unlearn.objective, cfg.unlearn.objective_config};
    const Snapshot ref = snapshot_reference(original);
    const TopKCache cache = build_topk_cache(ref, forget, settings);

    Model model = original;
    OptimizerState opt = OptimizerState::for_model(model.config, cfg.unlearn.lr);
    Rng rng(cfg.unlearn.seed);
    std::vector<std::size_t> order(forget.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<std::size_t> retain_order(retain_set.size());
    std::iota(retain_order.begin(), retain_order.end(), std::size_t{0});
    std::size_t retain_cursor = retain_order.size();

    RunReport rep;
    rep.config_hash = cfg.hash_hex();
    rep.objective = std::string(to_string(cfg.unlearn.objective));
    rep.topk_cache_entries = cache.size();
    const ObjectiveConfig effective = settings.effective_config();

    std::vector<UnlearnSample> batch;
    std::vector<UnlearnSample> retain_batch;
    const std::size_t steps_per_epoch = (order.size() + cfg.unlearn.batch_size - 1) / cfg.unlearn.batch_size;
    const std::size_t warmup_steps = steps_per_epoch * cfg.unlearn.warmup_epochs;
    std::size_t global_step = 0;
    for (std::size_t epoch = 0; epoch < cfg.unlearn.epochs; ++epoch) {
        rng.shuffle(std::span(order));
        double loss = 0.0;
        std::size_t steps = 0;
        std::size_t touched = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.unlearn.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.unlearn.batch_size);
            batch.clear();
            for (std::size_t i = start; i < end; ++i) batch.push_back(forget[order[i]]);
            retain_batch.clear();
            if (cfg.unlearn.objective == Objective::kGradDiff && !retain_set.empty()) {
                while (retain_batch.size() < batch.size()) {
                    if (retain_cursor == retain_order.size()) {
                        rng.shuffle(std::span(retain_order));
                        retain_cursor = 0;
                    }
                    retain_batch.push_back(retain_set[retain_order[retain_cursor++]]);
                }
            }
            opt.lr = global_step < warmup_steps ? cfg.unlearn.lr * static_cast<double>(global_step + 1) /
                                                      static_cast<double>(warmup_steps)
                                                : cfg.unlearn.lr;
            ++global_step;
            const UnlearnGradient g = unlearn_step(model, opt, ref, batch, settings, cache, retain_batch);
            loss += g.loss;
            touched += g.touched;
            ++steps;
            if (epoch == 0) {
                for (std::size_t b = 0; b < batch.size(); ++b) {
                    const std::size_t init =
                        partition_tokens(batch[b].mask, effective.n).initiating.size();
                    rep.touched_per_sample.push_back({batch[b].id, init, g.outputs[b].touched.size()});
                }
            }
        }
        rep.epoch_loss.push_back(loss / static_cast<double>(steps));
        rep.epoch_touched.push_back(touched);
        log::debug("unlearn epoch " + std::to_string(epoch) + " loss " + format_double(rep.epoch_loss.back()));
    }
    std::sort(rep.touched_per_sample.begin(), rep.touched_per_sample.end(),
              [](const SampleTouch& a, const SampleTouch& b) { return a.sample_id < b.sample_id; });
    const double t_unlearn = seconds_since(t_start);

    if (report) {
        const auto t_eval = std::chrono::steady_clock::now();
        rep.before = evaluate(cfg, corpus, original, retain, &original);
        rep.after = evaluate(cfg, corpus, model, retain, &original);
        if (timings) (*timings)["evaluate"] = seconds_since(t_eval);
        *report = std::move(rep);
    }
    if (timings) (*timings)["unlearn"] = t_unlearn;
    return model;
}

// ------------------------------------------------------------------- sweep

SweepGrid SweepGrid::from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        fail(ErrorCode::kParse, std::string("sweep grid: ") + e.what());
    }
    if (!j.is_object()) fail(ErrorCode::kParse, "sweep grid: top level must be a JSON object");
    SweepGrid g;
    g.base = ExperimentConfig::defaults();
    if (j.contains("base")) {
        for (const auto& [key, value] : j.at("base").items()) apply_field(g.base, key, value);
        g.base.validate();
    }
    const ObjectiveConfig& oc = g.base.unlearn.objective_config;
    auto list = [&](const char* key) -> std::vector<json> {
        if (!j.contains(key)) return {};
        const json& v = j.at(key);
        if (!v.is_array()) fail(ErrorCode::kInvalidInput, std::string("sweep grid: '") + key + "' must be a list");
        if (v.empty()) fail(ErrorCode::kInvalidInput, std::string("sweep grid: '") + key + "' is empty");
        return std::vector<json>(v.begin(), v.end());
    };
    try {
        if (auto v = list("objective"); !v.empty()) {
            g.objectives.clear();
            for (const json& o : v) g.objectives.push_back(std::string(to_string(parse_objective(o.get<std::string>()))));
        } else {
            g.objectives = {std::string(to_string(g.base.unlearn.objective))};
        }
        for (const json& v : list("k")) g.k.push_back(parse_budget(v, "k"));
        for (const json& v : list("n")) g.n.push_back(parse_budget(v, "n"));
        for (const json& v : list("lambda")) g.lambda.push_back(v.get<double>());
        for (const json& v : list("target")) g.target.push_back(parse_target_strategy(v.get<std::string>()));
        if (j.contains("corpus")) g.corpus_path = j.at("corpus").get<std::string>();
        if (j.contains("original_checkpoint")) g.original_checkpoint = j.at("original_checkpoint").get<std::string>();
        if (j.contains("retain_checkpoint")) g.retain_checkpoint = j.at("retain_checkpoint").get<std::string>();
    } catch (const json::exception& e) {
        fail(ErrorCode::kInvalidInput, std::string("sweep grid: ") + e.what());
    }
    if (g.k.empty()) g.k = {oc.k};
    if (g.n.empty()) g.n = {oc.n};
    if (g.lambda.empty()) g.lambda = {oc.lambda};
    if (g.target.empty()) g.target = {oc.target};
    return g;
}

std::vector<ExperimentConfig> SweepGrid::points() const {
    std::vector<ExperimentConfig> out;
    for (const std::string& obj : objectives) {
        for (Budget k_ : k) {
            for (Budget n_ : n) {
                for (double l : lambda) {
                    for (TargetStrategy t : target) {
                        ExperimentConfig c = base;
                        c.unlearn.objective = parse_objective(obj);
                        c.unlearn.objective_config.k = k_;
                        c.unlearn.objective_config.n = n_;
                        c.unlearn.objective_config.lambda = l;
                        c.unlearn.objective_config.target = t;
                        c.validate();
                        out.push_back(std::move(c));
                    }
                }
            }
        }
    }
    return out;
}

std::string sweep_csv_header() {
    return "index,objective,k,n,lambda,target,config_hash,status," + MetricReport::csv_header() +
           ",touched_first_epoch,error";
}

std::string sweep_csv_row(const SweepRow& row) {
    const ObjectiveConfig& o = row.config.unlearn.objective_config;
    std::string line = std::to_string(row.index) + "," + std::string(to_string(row.config.unlearn.objective)) + "," +
                       budget_to_string(o.k) + "," + budget_to_string(o.n) + "," + format_double(o.lambda) + "," +
                       std::string(to_string(o.target)) + "," + row.config.hash_hex() + "," +
                       (row.ok ? "ok" : "error") + ",";
    if (row.ok) {
        line += row.report.after.to_csv_row();
        line += "," + std::to_string(row.report.epoch_touched.empty() ? 0 : row.report.epoch_touched.front());
        line += ",";
    } else {
        line += MetricReport{}.to_csv_row() + ",,";
        std::string msg = row.error;
        std::replace(msg.begin(), msg.end(), ',', ';');
        std::replace(msg.begin(), msg.end(), '\n', ' ');
        line += msg;
    }
    return line;
}

std::vector<SweepRow> run_sweep(const SweepGrid& grid, const std::string& out_dir, std::size_t jobs) {
    const std::vector<ExperimentConfig> points = grid.points();
    require(!points.empty(), "sweep: grid is empty");
    if (!out_dir.empty()) std::filesystem::create_directories(out_dir);

    const Corpus corpus = grid.corpus_path ? load_corpus(*grid.corpus_path) : generate_data(grid.base);
    auto obtain = [&](const std::optional<std::string>& path, bool retain_only) {
        if (path) return load_checkpoint(*path, [&] {
            ModelConfig mc = grid.base.model;
            mc.pad_token = corpus.vocab.pad;
            return mc;
        }());
        PretrainReport rep;
        Model m = pretrain(grid.base, corpus, retain_only, &rep);
        if (!rep.converged) {
            fail(ErrorCode::kPrecondition,
                 std::string(retain_only ? "retain" : "original") + " model did not converge (em_forget=" +
                     format_double(rep.em_forget) + ", em_retain=" + format_double(rep.em_retain) + ")");
        }
        return m;
    };
    const Model original = obtain(grid.original_checkpoint, false);
    const Model retain = obtain(grid.retain_checkpoint, true);

    std::vector<SweepRow> rows(points.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < points.size(); i = next++) {
            SweepRow& row = rows[i];
            row.index = i;
            row.config = points[i];
            try {
                unlearn(row.config, corpus, original, &retain, &row.report);
                row.ok = true;
                if (!out_dir.empty()) {
                    char name[32];
                    std::snprintf(name, sizeof(name), "point_%03zu.json", i);
                    std::ofstream os(std::filesystem::path(out_dir) / name, std::ios::trunc);
                    os << row.report.to_json(row.config) << '\n';
                }
            } catch (const std::exception& e) {
                row.ok = false;
                row.error = e.what();
                log::error("sweep point " + std::to_string(i) + " failed: " + row.error);
            }
        }
    };
    const std::size_t n_threads = std::clamp<std::size_t>(jobs, 1, points.size());
    if (n_threads == 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    }

    if (!out_dir.empty()) {
        std::ofstream os(std::filesystem::path(out_dir) / "summary.csv", std::ios::trunc);
        os << sweep_csv_header() << '\n';
        for (const SweepRow& r : rows) os << sweep_csv_row(r) << '\n';
        if (!os) fail(ErrorCode::kIo, "failed writing sweep summary in " + out_dir);
    }
    return rows;
}

// ------------------------------------------------------------- demo theory

std::string demo_theory_csv() {
    std::ostringstream os;
    os << "section,quantity,value\n";
    auto row = [&](const char* section, const std::string& quantity, double v) {
        os << section << ',' << quantity << ',' << format_double(v) << '\n';
    };

    // (i) Removing the top token redistributes its mass proportionally.
    {
        const std::vector<double> z = {std::log(0.8), std::log(0.15), std::log(0.05)};
        const Distribution p = softmax(z);
        const Distribution q = suppress_single_logit(z, 0, kInfinity);
        for (std::size_t i = 0; i < z.size(); ++i) {
            row("redistribution", "p_before_" + std::to_string(i), p[i]);
            row("redistribution", "p_after_" + std::to_string(i), q[i]);
            row("redistribution", "predicted_" + std::to_string(i), i == 0 ? 0.0 : p[i] / (1.0 - p[0]));
        }
    }

    // (ii) Editing one logit leaves every other probability ratio unchanged.
    {
        Rng rng(2024);
        std::vector<double> z(8);
        for (double& v : z) v = rng.uniform(-3.0, 3.0);
        const std::size_t t = argmax(z);
        double drift = 0.0;
        for (double delta : {0.5, 2.0, 10.0}) {
            std::vector<double> edited = z;
            edited[t] -= delta;
            const auto lp = log_softmax(z);
            const auto lq = log_softmax(edited);
            double worst = 0.0;
            for (std::size_t i = 0; i < z.size(); ++i) {
                for (std::size_t j = 0; j < z.size(); ++j) {
                    if (i == t || j == t) continue;
                    worst = std::max(worst, std::abs((lq[i] - lq[j]) - (lp[i] - lp[j])));
                }
            }
            row("ratio_preservation", "max_log_ratio_drift_delta_" + short_double(delta), worst);
            drift = std::max(drift, worst);
        }
        row("ratio_preservation", "max_log_ratio_drift", drift);
    }

    // (iii) Setting the top-K logits to c flattens the head exactly.
    {
        Rng rng(7);
        std::vector<double> z(12);
        for (double& v : z) v = rng.uniform(-4.0, 4.0);
        const std::size_t k = 4;
        const TopKSet top = top_k_indices(z, k);
        const double c = resolve_target_c(z, z, top, TargetStrategy::kGlobalMean);
        const double before = restricted_entropy(softmax(z), top);
        std::vector<double> flat = z;
        for (std::size_t i : top.indices) flat[i] = c;
        row("flattening", "k", static_cast<double>(k));
        row("flattening", "restricted_entropy_before", before);
        row("flattening", "restricted_entropy_after", restricted_entropy(softmax(flat), top));
        row("flattening", "ln_k", std::log(static_cast<double>(k)));
        row("flattening", "local_loss_after", local_entropy_loss(flat, top, c).loss);
    }

    // (iv) A gradient step on log p_t moves non-target logits by eta * p_i,
    // so ratios drift by eta * (p_i - p_j).
    {
        const std::vector<double> p0 = {0.6, 0.2, 0.1, 0.06, 0.04};
        std::vector<double> z;
        for (double v : p0) z.push_back(std::log(v));
        const std::size_t t = 0;
        for (double eta : {0.01, 0.1, 0.5, 1.0}) {
            const Distribution p = softmax(z);
            std::vector<double> stepped = z;
            for (std::size_t i = 0; i < z.size(); ++i) stepped[i] -= eta * ((i == t ? 1.0 : 0.0) - p[i]);
            const auto lp = log_softmax(z);
            const auto lq = log_softmax(stepped);
            double measured = 0.0;
            double bound = 0.0;
            for (std::size_t i = 0; i < z.size(); ++i) {
                for (std::size_t j = 0; j < z.size(); ++j) {
                    if (i == t || j == t) continue;
                    measured = std::max(measured, std::abs((lq[i] - lq[j]) - (lp[i] - lp[j])));
                    bound = std::max(bound, eta * std::abs(p[i] - p[j]));
                }
            }
            const std::string tag = "eta_" + short_double(eta);
            row("gradient_step_drift", "measured_" + tag, measured);
            row("gradient_step_drift", "predicted_" + tag, bound);
            row("gradient_step_drift", "p_target_after_" + tag, std::exp(lq[t]));
        }
    }
    return os.str();
}

}  // namespace palu
