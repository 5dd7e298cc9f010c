#pragma once

// A tiny autoregressive language model: token embeddings for a fixed context
// window are concatenated, passed through one tanh hidden layer, and projected
// onto the vocabulary. Backpropagation is written out by hand so that logit
// gradients from any objective can be chained into parameter gradients.

#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "palu/masking.hpp"
#include "palu/numerics.hpp"
#include "palu/objectives.hpp"

namespace palu {

using Token = std::size_t;
using TokenSeq = std::vector<Token>;

struct ModelConfig {
    std::size_t vocab_size = 120;
    std::size_t context_window = 5;
    std::size_t embed_dim = 16;
    std::size_t hidden_dim = 128;
    Token pad_token = 0;

    void validate() const;
    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Row-major dense tensors:
//   embedding  V x d
//   w1         (C*d) x h
//   b1         h
//   w2         h x V
//   b2         V
struct TinyLMParams {
    std::vector<double> embedding;
    std::vector<double> w1;
    std::vector<double> b1;
    std::vector<double> w2;
    std::vector<double> b2;

    static TinyLMParams zeros(const ModelConfig& cfg);

    std::size_t parameter_count() const;
    // Visits tensors in the fixed order above.
    template <typename F>
    void for_each(F&& f) {
        f(embedding); f(w1); f(b1); f(w2); f(b2);
    }
    template <typename F>
    void for_each(F&& f) const {
        f(embedding); f(w1); f(b1); f(w2); f(b2);
    }
    // Flat view in the same order as for_each; used by finite-difference tests.
    std::vector<double> flatten() const;
    void assign_flat(std::span<const double> flat);

    friend bool operator==(const TinyLMParams&, const TinyLMParams&) = default;
};

struct Model {
    ModelConfig config;
    TinyLMParams params;
    std::int64_t step = 0;
};

// Frozen deep copy of a model. Copies of a Snapshot share the same immutable
// storage.
class Snapshot {
public:
    explicit Snapshot(const Model& model) : model_(std::make_shared<const Model>(model)) {}

    const Model& model() const { return *model_; }
    const ModelConfig& config() const { return model_->config; }
    const TinyLMParams& params() const { return model_->params; }
    std::int64_t step() const { return model_->step; }

private:
    std::shared_ptr<const Model> model_;
};

Snapshot snapshot_reference(const Model& model);
Snapshot snapshot_reference(const Snapshot& snapshot);

struct OptimizerState {
    TinyLMParams m;
    TinyLMParams v;
    std::int64_t step = 0;
    double lr = 1e-2;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    static OptimizerState for_model(const ModelConfig& cfg, double lr);
};

// Uniform in [-0.1, 0.1], deterministic in seed.
TinyLMParams init_params(const ModelConfig& cfg, std::uint64_t seed);

// Last `window` tokens of `history`, left-padded with `pad`.
TokenSeq make_context(std::span<const Token> history, std::size_t window, Token pad);

LogitVector forward_logits(const TinyLMParams& params, const ModelConfig& cfg,
                           std::span<const Token> context);
inline LogitVector forward_logits(const Model& m, std::span<const Token> context) {
    return forward_logits(m.params, m.config, context);
}

// Gradients of sum_b <logit_grads[b], z_b> with respect to every parameter.
// Empty rows of `logit_grads` are skipped.
TinyLMParams backward_from_logit_grads(const TinyLMParams& params, const ModelConfig& cfg,
                                       std::span<const TokenSeq> contexts,
                                       std::span<const LogitVector> logit_grads);

void accumulate_logit_grads(const TinyLMParams& params, const ModelConfig& cfg,
                            std::span<const TokenSeq> contexts,
                            std::span<const LogitVector> logit_grads,
                            TinyLMParams& into);

void adam_step(TinyLMParams& params, OptimizerState& opt, const TinyLMParams& grads);

struct Example {
    TokenSeq context;
    Token target = 0;
};

// One Adam update on the batch-mean cross entropy. Returns the mean CE
// evaluated before the update.
double train_step_ce(Model& model, OptimizerState& opt, std::span<const Example> batch);

// Teacher-forced examples for every response position of (query, response).
std::vector<Example> teacher_forced_examples(const ModelConfig& cfg, std::span<const Token> query,
                                             std::span<const Token> response);

// ---------------------------------------------------------------- unlearning

enum class Objective { kPalu, kGradAscent, kGradDiff, kGlobalFlatten, kTop1 };

std::string_view to_string(Objective o);
Objective parse_objective(std::string_view name);

struct UnlearnSample {
    std::size_t id = 0;
    TokenSeq query;
    TokenSeq response;
    SensitivityMask mask;
};

struct UnlearnSettings {
    Objective objective = Objective::kPalu;
    ObjectiveConfig config;

    // The PALU configuration actually applied (top1 forces K = 1).
    ObjectiveConfig effective_config() const;
};

// Frozen V_top keyed by (sample id, response position).
using TopKCache = std::map<std::pair<std::size_t, std::size_t>, TopKSet>;

TopKCache build_topk_cache(const Snapshot& ref, std::span<const UnlearnSample> samples,
                           const UnlearnSettings& settings);

struct UnlearnGradient {
    double loss = 0.0;  // mean over the forget batch
    std::map<std::string, double> per_term;
    std::vector<ObjectiveOutput> outputs;  // one per forget sample
    std::size_t touched = 0;
    TinyLMParams grads;
};

// Loss and parameter gradient of the batch-mean objective. `retain_batch` is
// only read by GradDiff. With `dense_path`, logits are also computed at
// positions whose gradient is structurally zero and fed to backprop as
// explicit zero rows; the result must be identical to the sparse path.
UnlearnGradient unlearn_gradient(const Model& model, const Snapshot& ref,
                                 std::span<const UnlearnSample> batch,
                                 const UnlearnSettings& settings, const TopKCache& cache,
                                 std::span<const UnlearnSample> retain_batch = {},
                                 bool dense_path = false);

// Scalar objective only; the finite-difference oracle differentiates this.
double unlearn_objective_value(const Model& model, const Snapshot& ref,
                               std::span<const UnlearnSample> batch,
                               const UnlearnSettings& settings, const TopKCache& cache,
                               std::span<const UnlearnSample> retain_batch = {});

UnlearnGradient unlearn_step(Model& model, OptimizerState& opt, const Snapshot& ref,
                             std::span<const UnlearnSample> batch,
                             const UnlearnSettings& settings, const TopKCache& cache,
                             std::span<const UnlearnSample> retain_batch = {});

// ------------------------------------------------------------------ decoding

// Appends argmax tokens (ties to the lowest index) until max_len tokens or
// end_token is produced; the end token is included.
TokenSeq greedy_decode(const Model& model, std::span<const Token> prompt, std::size_t max_len,
                       std::optional<Token> end_token = std::nullopt);

struct SequenceLogProb {
    double total = 0.0;
    std::vector<double> per_token;
    double length_normalized = 0.0;  // exp(total / length)
};

SequenceLogProb sequence_logprob(const Model& model, std::span<const Token> prompt,
                                 std::span<const Token> continuation);

// ---------------------------------------------------------------- checkpoints

// Binary, little-endian: "TOYLM1", format version, config header, then each
// tensor with its name and explicit shape.
void save_checkpoint(const Model& model, const std::string& path);
Model load_checkpoint(const std::string& path);
Model load_checkpoint(const std::string& path, const ModelConfig& expected);

}  // namespace palu
