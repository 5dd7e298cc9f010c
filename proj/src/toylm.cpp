#include "palu/toylm.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "palu/error.hpp"
#include "palu/rng.hpp"

namespace palu {
namespace {

struct Activations {
    std::vector<double> input;   // C*d
    std::vector<double> hidden;  // h, post-tanh
};

Activations forward_hidden(const TinyLMParams& p, const ModelConfig& cfg,
                           std::span<const Token> context) {
    const std::size_t C = cfg.context_window;
    const std::size_t d = cfg.embed_dim;
    const std::size_t h = cfg.hidden_dim;
    require(context.size() == C, "forward_logits: context length must equal the context window");
    Activations a;
    a.input.resize(C * d);
    for (std::size_t s = 0; s < C; ++s) {
        const Token tok = context[s];
        if (tok >= cfg.vocab_size) fail(ErrorCode::kInvalidInput, "forward_logits: token index out of vocabulary");
        std::copy_n(p.embedding.begin() + static_cast<std::ptrdiff_t>(tok * d), d,
                    a.input.begin() + static_cast<std::ptrdiff_t>(s * d));
    }
    a.hidden = p.b1;
    for (std::size_t i = 0; i < C * d; ++i) {
        const double x = a.input[i];
        const double* row = p.w1.data() + i * h;
        for (std::size_t j = 0; j < h; ++j) a.hidden[j] += x * row[j];
    }
    for (double& v : a.hidden) v = std::tanh(v);
    return a;
}

LogitVector project(const TinyLMParams& p, const ModelConfig& cfg, const std::vector<double>& hidden) {
    const std::size_t V = cfg.vocab_size;
    LogitVector z = p.b2;
    for (std::size_t j = 0; j < cfg.hidden_dim; ++j) {
        const double a = hidden[j];
        const double* row = p.w2.data() + j * V;
        for (std::size_t v = 0; v < V; ++v) z[v] += a * row[v];
    }
    return z;
}

void backprop_one(const TinyLMParams& p, const ModelConfig& cfg, std::span<const Token> context,
                  const Activations& a, std::span<const double> g, TinyLMParams& into) {
    const std::size_t V = cfg.vocab_size;
    const std::size_t d = cfg.embed_dim;
    const std::size_t h = cfg.hidden_dim;
    const std::size_t in = cfg.context_window * d;

    for (std::size_t v = 0; v < V; ++v) into.b2[v] += g[v];
    std::vector<double> dpre(h);
    for (std::size_t j = 0; j < h; ++j) {
        const double* w_row = p.w2.data() + j * V;
        double* dw_row = into.w2.data() + j * V;
        const double aj = a.hidden[j];
        double da = 0.0;
        for (std::size_t v = 0; v < V; ++v) {
            dw_row[v] += aj * g[v];
            da += w_row[v] * g[v];
        }
        dpre[j] = da * (1.0 - aj * aj);
    }
    for (std::size_t j = 0; j < h; ++j) into.b1[j] += dpre[j];
    for (std::size_t i = 0; i < in; ++i) {
        const double* w_row = p.w1.data() + i * h;
        double* dw_row = into.w1.data() + i * h;
        const double x = a.input[i];
        double dx = 0.0;
        for (std::size_t j = 0; j < h; ++j) {
            dw_row[j] += x * dpre[j];
            dx += w_row[j] * dpre[j];
        }
        const std::size_t slot = i / d;
        into.embedding[context[slot] * d + i % d] += dx;
    }
}

TokenSeq history_of(std::span<const Token> query, std::span<const Token> response, std::size_t t) {
    TokenSeq hist(query.begin(), query.end());
    hist.insert(hist.end(), response.begin(), response.begin() + static_cast<std::ptrdiff_t>(t));
    return hist;
}

}  // namespace

void ModelConfig::validate() const {
    require(vocab_size >= 4, "model config: vocab_size must be >= 4");
    require(context_window >= 2, "model config: context_window must be >= 2");
    require(embed_dim >= 1 && hidden_dim >= 1, "model config: embed_dim and hidden_dim must be >= 1");
    require(pad_token < vocab_size, "model config: pad_token out of range");
}

TinyLMParams TinyLMParams::zeros(const ModelConfig& cfg) {
    cfg.validate();
    TinyLMParams p;
    p.embedding.assign(cfg.vocab_size * cfg.embed_dim, 0.0);
    p.w1.assign(cfg.context_window * cfg.embed_dim * cfg.hidden_dim, 0.0);
    p.b1.assign(cfg.hidden_dim, 0.0);
    p.w2.assign(cfg.hidden_dim * cfg.vocab_size, 0.0);
    p.b2.assign(cfg.vocab_size, 0.0);
    return p;
}

std::size_t TinyLMParams::parameter_count() const {
    std::size_t n = 0;
    for_each([&](const std::vector<double>& t) { n += t.size(); });
    return n;
}

std::vector<double> TinyLMParams::flatten() const {
    std::vector<double> flat;
    flat.reserve(parameter_count());
    for_each([&](const std::vector<double>& t) { flat.insert(flat.end(), t.begin(), t.end()); });
    return flat;
}

void TinyLMParams::assign_flat(std::span<const double> flat) {
    require(flat.size() == parameter_count(), "assign_flat: size mismatch");
    std::size_t off = 0;
    for_each([&](std::vector<double>& t) {
        std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(off), t.size(), t.begin());
        off += t.size();
    });
}

Snapshot snapshot_reference(const Model& model) { return Snapshot(model); }

Snapshot snapshot_reference(const Snapshot& snapshot) { return snapshot; }

OptimizerState OptimizerState::for_model(const ModelConfig& cfg, double lr) {
    require(lr >= 0.0, "optimizer: learning rate must be >= 0");
    OptimizerState s;
    s.m = TinyLMParams::zeros(cfg);
    s.v = TinyLMParams::zeros(cfg);
    s.lr = lr;
    return s;
}

TinyLMParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
    TinyLMParams p = TinyLMParams::zeros(cfg);
    Rng rng(seed);
    p.for_each([&](std::vector<double>& t) {
        for (double& v : t) v = rng.uniform(-0.1, 0.1);
    });
    return p;
}

TokenSeq make_context(std::span<const Token> history, std::size_t window, Token pad) {
    TokenSeq ctx(window, pad);
    const std::size_t n = std::min(window, history.size());
    std::copy(history.end() - static_cast<std::ptrdiff_t>(n), history.end(),
              ctx.end() - static_cast<std::ptrdiff_t>(n));
    return ctx;
}

LogitVector forward_logits(const TinyLMParams& params, const ModelConfig& cfg,
                           std::span<const Token> context) {
    return project(params, cfg, forward_hidden(params, cfg, context).hidden);
}

void accumulate_logit_grads(const TinyLMParams& params, const ModelConfig& cfg,
                            std::span<const TokenSeq> contexts,
                            std::span<const LogitVector> logit_grads,
                            TinyLMParams& into) {
    require(contexts.size() == logit_grads.size(), "backward: batch size mismatch");
    for (std::size_t b = 0; b < contexts.size(); ++b) {
        const LogitVector& g = logit_grads[b];
        if (g.empty()) continue;
        require(g.size() == cfg.vocab_size, "backward: logit gradient has wrong length");
        const Activations a = forward_hidden(params, cfg, contexts[b]);
        backprop_one(params, cfg, contexts[b], a, g, into);
    }
}

TinyLMParams backward_from_logit_grads(const TinyLMParams& params, const ModelConfig& cfg,
                                       std::span<const TokenSeq> contexts,
                                       std::span<const LogitVector> logit_grads) {
    TinyLMParams grads = TinyLMParams::zeros(cfg);
    accumulate_logit_grads(params, cfg, contexts, logit_grads, grads);
    return grads;
}

void adam_step(TinyLMParams& params, OptimizerState& opt, const TinyLMParams& grads) {
    ++opt.step;
    const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(opt.step));
    const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(opt.step));
    auto update = [&](std::vector<double>& p, std::vector<double>& m, std::vector<double>& v,
                      const std::vector<double>& g) {
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = opt.beta1 * m[i] + (1.0 - opt.beta1) * g[i];
            v[i] = opt.beta2 * v[i] + (1.0 - opt.beta2) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            p[i] -= opt.lr * mhat / (std::sqrt(vhat) + opt.eps);
        }
    };
    update(params.embedding, opt.m.embedding, opt.v.embedding, grads.embedding);
    update(params.w1, opt.m.w1, opt.v.w1, grads.w1);
    update(params.b1, opt.m.b1, opt.v.b1, grads.b1);
    update(params.w2, opt.m.w2, opt.v.w2, grads.w2);
    update(params.b2, opt.m.b2, opt.v.b2, grads.b2);
}

std::vector<Example> teacher_forced_examples(const ModelConfig& cfg, std::span<const Token> query,
                                             std::span<const Token> response) {
    std::vector<Example> out;
    out.reserve(response.size());
    TokenSeq hist(query.begin(), query.end());
    for (Token y : response) {
        out.push_back({make_context(hist, cfg.context_window, cfg.pad_token), y});
        hist.push_back(y);
    }
    return out;
}

double train_step_ce(Model& model, OptimizerState& opt, std::span<const Example> batch) {
    require(!batch.empty(), "train_step_ce: empty batch");
    const ModelConfig& cfg = model.config;
    TinyLMParams grads = TinyLMParams::zeros(cfg);
    const double scale = 1.0 / static_cast<double>(batch.size());
    double loss = 0.0;
    std::vector<double> g(cfg.vocab_size);
    for (const Example& ex : batch) {
        if (ex.target >= cfg.vocab_size) fail(ErrorCode::kInvalidInput, "train_step_ce: target out of vocabulary");
        const Activations a = forward_hidden(model.params, cfg, ex.context);
        const LogitVector z = project(model.params, cfg, a.hidden);
        const auto lp = log_softmax(z);
        loss -= lp[ex.target];
        for (std::size_t v = 0; v < cfg.vocab_size; ++v) {
            g[v] = scale * (std::exp(lp[v]) - (v == ex.target ? 1.0 : 0.0));
        }
        backprop_one(model.params, cfg, ex.context, a, g, grads);
    }
    adam_step(model.params, opt, grads);
    ++model.step;
    return loss * scale;
}

// ---------------------------------------------------------------- unlearning

std::string_view to_string(Objective o) {
    switch (o) {
        case Objective::kPalu: return "palu";
        case Objective::kGradAscent: return "ga";
        case Objective::kGradDiff: return "gd";
        case Objective::kGlobalFlatten: return "global_flatten";
        case Objective::kTop1: return "top1";
    }
    return "palu";
}

Objective parse_objective(std::string_view name) {
    if (name == "palu") return Objective::kPalu;
    if (name == "ga") return Objective::kGradAscent;
    if (name == "gd") return Objective::kGradDiff;
    if (name == "global_flatten") return Objective::kGlobalFlatten;
    if (name == "top1") return Objective::kTop1;
    fail(ErrorCode::kInvalidInput, "unknown objective: " + std::string(name));
}

ObjectiveConfig UnlearnSettings::effective_config() const {
    ObjectiveConfig cfg = config;
    if (objective == Objective::kTop1) cfg.k = Budget::of(1);
    return cfg;
}

namespace {

bool uses_topk(Objective o) { return o == Objective::kPalu || o == Objective::kTop1; }

void check_sample(const UnlearnSample& s) {
    require(s.mask.size() == s.response.size(), "unlearn: mask length must equal response length");
}

struct SampleEval {
    std::vector<TokenSeq> contexts;
    ObjectiveOutput out;
};

// Logits and the objective for one forget sample. Contexts are returned for
// every position; rows of out.grad that are empty are skipped by backprop.
SampleEval evaluate_forget_sample(const Model& model, const Snapshot& ref, const UnlearnSample& s,
                                  const UnlearnSettings& settings, const TopKCache& cache,
                                  bool dense_path) {
    check_sample(s);
    const ModelConfig& cfg = model.config;
    const std::size_t T = s.response.size();
    SampleEval ev;
    ev.contexts.reserve(T);
    for (std::size_t t = 0; t < T; ++t) {
        ev.contexts.push_back(make_context(history_of(s.query, s.response, t), cfg.context_window, cfg.pad_token));
    }

    switch (settings.objective) {
        case Objective::kPalu:
        case Objective::kTop1: {
            const ObjectiveConfig ocfg = settings.effective_config();
            const TokenPartition part = partition_tokens(s.mask, ocfg.n);
            std::vector<LogitVector> theta(T), refz(T);
            for (std::size_t t = 0; t < T; ++t) {
                const TokenRole role = part.roles[t];
                const bool needed = role == TokenRole::kInitiating ||
                                    (role == TokenRole::kCommon && ocfg.lambda > 0.0);
                if (!needed && !dense_path) continue;
                theta[t] = forward_logits(model.params, cfg, ev.contexts[t]);
                refz[t] = forward_logits(ref.params(), ref.config(), ev.contexts[t]);
            }
            TopKRow frozen(T);
            for (std::size_t t : part.initiating) {
                auto it = cache.find({s.id, t});
                if (it != cache.end()) frozen[t] = it->second;
            }
            ev.out = palu_total_loss(theta, refz, part, ocfg, &frozen);
            break;
        }
        case Objective::kGradAscent:
        case Objective::kGradDiff: {
            std::vector<LogitVector> theta(T);
            for (std::size_t t = 0; t < T; ++t) theta[t] = forward_logits(model.params, cfg, ev.contexts[t]);
            ev.out = negated_ce_loss(theta, s.response);
            break;
        }
        case Objective::kGlobalFlatten: {
            ev.out.grad.resize(T);
            double total = 0.0;
            for (std::size_t t = 0; t < T; ++t) {
                const LogitVector z = forward_logits(model.params, cfg, ev.contexts[t]);
                const double c = std::accumulate(z.begin(), z.end(), 0.0) / static_cast<double>(z.size());
                LossAndGrad lg = global_flatten_loss(z, c);
                total += lg.loss;
                for (std::size_t v = 0; v < z.size(); ++v) ev.out.touched.push_back({t, v});
                ev.out.grad[t] = std::move(lg.grad);
            }
            ev.out.loss = total;
            ev.out.per_term["forget"] = total;
            break;
        }
    }
    if (dense_path) {
        for (auto& row : ev.out.grad) {
            if (row.empty()) row.assign(cfg.vocab_size, 0.0);
        }
    }
    return ev;
}

struct RetainEval {
    std::vector<TokenSeq> contexts;
    std::vector<LogitVector> grads;
    double loss = 0.0;
};

RetainEval evaluate_retain(const Model& model, std::span<const UnlearnSample> retain, double lambda) {
    RetainEval r;
    const ModelConfig& cfg = model.config;
    for (const UnlearnSample& s : retain) {
        std::vector<LogitVector> logits;
        for (std::size_t t = 0; t < s.response.size(); ++t) {
            r.contexts.push_back(make_context(history_of(s.query, s.response, t), cfg.context_window, cfg.pad_token));
            logits.push_back(forward_logits(model.params, cfg, r.contexts.back()));
        }
        ObjectiveOutput ce = ce_loss(logits, s.response);
        r.loss += lambda * ce.loss;
        for (auto& row : ce.grad) {
            for (double& g : row) g *= lambda;
            r.grads.push_back(std::move(row));
        }
    }
    return r;
}

}  // namespace

TopKCache build_topk_cache(const Snapshot& ref, std::span<const UnlearnSample> samples,
                           const UnlearnSettings& settings) {
    TopKCache cache;
    if (!uses_topk(settings.objective)) return cache;
    const ObjectiveConfig cfg = settings.effective_config();
    cfg.validate();
    const ModelConfig& mc = ref.config();
    for (const UnlearnSample& s : samples) {
        check_sample(s);
        const TokenPartition part = partition_tokens(s.mask, cfg.n);
        for (std::size_t t : part.initiating) {
            const TokenSeq ctx = make_context(history_of(s.query, s.response, t), mc.context_window, mc.pad_token);
            cache.emplace(std::make_pair(s.id, t), top_k_indices(forward_logits(ref.params(), mc, ctx), cfg.k));
        }
    }
    return cache;
}

UnlearnGradient unlearn_gradient(const Model& model, const Snapshot& ref,
                                 std::span<const UnlearnSample> batch,
                                 const UnlearnSettings& settings, const TopKCache& cache,
                                 std::span<const UnlearnSample> retain_batch, bool dense_path) {
    require(!batch.empty(), "unlearn: empty forget batch");
    require(ref.config() == model.config, "unlearn: reference and model configs differ");
    settings.config.validate();
    const double scale = 1.0 / static_cast<double>(batch.size());
    UnlearnGradient res;
    res.grads = TinyLMParams::zeros(model.config);
    for (const UnlearnSample& s : batch) {
        SampleEval ev = evaluate_forget_sample(model, ref, s, settings, cache, dense_path);
        for (auto& row : ev.out.grad) {
            for (double& g : row) g *= scale;
        }
        accumulate_logit_grads(model.params, model.config, ev.contexts, ev.out.grad, res.grads);
        res.loss += scale * ev.out.loss;
        for (const auto& [name, v] : ev.out.per_term) res.per_term[name] += scale * v;
        res.touched += ev.out.touched.size();
        res.outputs.push_back(std::move(ev.out));
    }
    if (settings.objective == Objective::kGradDiff && !retain_batch.empty()) {
        RetainEval r = evaluate_retain(model, retain_batch, settings.config.lambda);
        const double rscale = 1.0 / static_cast<double>(retain_batch.size());
        for (auto& row : r.grads) {
            for (double& g : row) g *= rscale;
        }
        accumulate_logit_grads(model.params, model.config, r.contexts, r.grads, res.grads);
        res.loss += rscale * r.loss;
        res.per_term["retain_ce"] += rscale * r.loss;
    }
    return res;
}

double unlearn_objective_value(const Model& model, const Snapshot& ref,
                               std::span<const UnlearnSample> batch,
                               const UnlearnSettings& settings, const TopKCache& cache,
                               std::span<const UnlearnSample> retain_batch) {
    require(!batch.empty(), "unlearn: empty forget batch");
    double loss = 0.0;
    for (const UnlearnSample& s : batch) {
        loss += evaluate_forget_sample(model, ref, s, settings, cache, false).out.loss;
    }
    loss /= static_cast<double>(batch.size());
    if (settings.objective == Objective::kGradDiff && !retain_batch.empty()) {
        loss += evaluate_retain(model, retain_batch, settings.config.lambda).loss /
                static_cast<double>(retain_batch.size());
    }
    return loss;
}

UnlearnGradient unlearn_step(Model& model, OptimizerState& opt, const Snapshot& ref,
                             std::span<const UnlearnSample> batch,
                             const UnlearnSettings& settings, const TopKCache& cache,
                             std::span<const UnlearnSample> retain_batch) {
    UnlearnGradient g = unlearn_gradient(model, ref, batch, settings, cache, retain_batch);
    adam_step(model.params, opt, g.grads);
    ++model.step;
    return g;
}

// ------------------------------------------------------------------ decoding

TokenSeq greedy_decode(const Model& model, std::span<const Token> prompt, std::size_t max_len,
                       std::optional<Token> end_token) {
    require(!prompt.empty(), "greedy_decode: empty prompt");
    TokenSeq hist(prompt.begin(), prompt.end());
    TokenSeq out;
    while (out.size() < max_len) {
        const TokenSeq ctx = make_context(hist, model.config.context_window, model.config.pad_token);
        const Token next = argmax(forward_logits(model, ctx));
        out.push_back(next);
        hist.push_back(next);
        if (end_token && next == *end_token) break;
    }
    return out;
}

SequenceLogProb sequence_logprob(const Model& model, std::span<const Token> prompt,
                                 std::span<const Token> continuation) {
    require(!continuation.empty(), "sequence_logprob: empty continuation");
    SequenceLogProb r;
    TokenSeq hist(prompt.begin(), prompt.end());
    for (Token y : continuation) {
        if (y >= model.config.vocab_size) fail(ErrorCode::kInvalidInput, "sequence_logprob: token out of vocabulary");
        const TokenSeq ctx = make_context(hist, model.config.context_window, model.config.pad_token);
        const double lp = log_softmax(forward_logits(model, ctx))[y];
        r.per_token.push_back(lp);
        r.total += lp;
        hist.push_back(y);
    }
    r.length_normalized = std::exp(r.total / static_cast<double>(continuation.size()));
    return r;
}

// ---------------------------------------------------------------- checkpoints

namespace {

constexpr char kMagic[6] = {'T', 'O', 'Y', 'L', 'M', '1'};
constexpr std::uint32_t kFormatVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <typename T>
void put(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is, const std::string& path) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) fail(ErrorCode::kParse, "checkpoint " + path + ": truncated file");
    return v;
}

struct TensorSlot {
    const char* name;
    std::size_t rows;
    std::size_t cols;
};

std::vector<TensorSlot> tensor_layout(const ModelConfig& c) {
    return {{"embedding", c.vocab_size, c.embed_dim},
            {"w1", c.context_window * c.embed_dim, c.hidden_dim},
            {"b1", 1, c.hidden_dim},
            {"w2", c.hidden_dim, c.vocab_size},
            {"b2", 1, c.vocab_size}};
}

}  // namespace

void save_checkpoint(const Model& model, const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) fail(ErrorCode::kIo, "cannot open checkpoint for writing: " + path);
    const ModelConfig& c = model.config;
    os.write(kMagic, sizeof(kMagic));
    put<std::uint32_t>(os, kFormatVersion);
    put<std::uint64_t>(os, c.vocab_size);
    put<std::uint64_t>(os, c.context_window);
    put<std::uint64_t>(os, c.embed_dim);
    put<std::uint64_t>(os, c.hidden_dim);
    put<std::uint64_t>(os, c.pad_token);
    put<std::int64_t>(os, model.step);
    const auto layout = tensor_layout(c);
    put<std::uint32_t>(os, static_cast<std::uint32_t>(layout.size()));
    std::size_t idx = 0;
    model.params.for_each([&](const std::vector<double>& t) {
        const TensorSlot& slot = layout[idx++];
        const std::uint32_t len = static_cast<std::uint32_t>(std::strlen(slot.name));
        put<std::uint32_t>(os, len);
        os.write(slot.name, len);
        put<std::uint64_t>(os, slot.rows);
        put<std::uint64_t>(os, slot.cols);
        os.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
    });
    if (!os) fail(ErrorCode::kIo, "failed writing checkpoint: " + path);
}

Model load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) fail(ErrorCode::kIo, "cannot open checkpoint: " + path);
    char magic[6];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        fail(ErrorCode::kParse, "checkpoint " + path + ": bad magic (expected TOYLM1)");
    }
    const auto version = get<std::uint32_t>(is, path);
    if (version != kFormatVersion) {
        fail(ErrorCode::kParse, "checkpoint " + path + ": unsupported version " + std::to_string(version));
    }
    Model m;
    m.config.vocab_size = get<std::uint64_t>(is, path);
    m.config.context_window = get<std::uint64_t>(is, path);
    m.config.embed_dim = get<std::uint64_t>(is, path);
    m.config.hidden_dim = get<std::uint64_t>(is, path);
    m.config.pad_token = get<std::uint64_t>(is, path);
    m.step = get<std::int64_t>(is, path);
    try {
        m.config.validate();
    } catch (const Error& e) {
        fail(ErrorCode::kParse, "checkpoint " + path + ": " + e.what());
    }
    const auto layout = tensor_layout(m.config);
    const auto count = get<std::uint32_t>(is, path);
    if (count != layout.size()) fail(ErrorCode::kParse, "checkpoint " + path + ": wrong tensor count");
    m.params = TinyLMParams::zeros(m.config);
    std::size_t idx = 0;
    m.params.for_each([&](std::vector<double>& t) {
        const TensorSlot& slot = layout[idx++];
        const auto len = get<std::uint32_t>(is, path);
        std::string name(len, '\0');
        is.read(name.data(), len);
        const auto rows = get<std::uint64_t>(is, path);
        const auto cols = get<std::uint64_t>(is, path);
        if (name != slot.name || rows != slot.rows || cols != slot.cols) {
            fail(ErrorCode::kParse, "checkpoint " + path + ": tensor '" + name + "' shape " +
                                        std::to_string(rows) + "x" + std::to_string(cols) +
                                        " does not match the config header");
        }
        is.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
        if (!is) fail(ErrorCode::kParse, "checkpoint " + path + ": truncated tensor data");
    });
    return m;
}

Model load_checkpoint(const std::string& path, const ModelConfig& expected) {
    Model m = load_checkpoint(path);
    if (!(m.config == expected)) {
        fail(ErrorCode::kInvalidInput, "checkpoint " + path + ": model config does not match the expected shape");
    }
    return m;
}

}  // namespace palu
