#pragma once

// Unlearning objectives with analytic gradients with respect to per-position
// logits.
//
// The PALU objective applies a localized flattening loss to the top-K logits
// (selected on the frozen reference model) at initiating sensitive positions,
// and a KL preservation term against the reference at common positions.
// Redundant sensitive positions contribute nothing. Baselines: negated CE
// (gradient ascent), gradient difference, and global (full-vocabulary)
// flattening.

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "palu/masking.hpp"
#include "palu/numerics.hpp"

namespace palu {

enum class TargetStrategy { kUniform, kMeanTopK, kMeanRef, kGlobalMean };

std::string_view to_string(TargetStrategy s);
TargetStrategy parse_target_strategy(std::string_view name);

struct ObjectiveConfig {
    Budget k = Budget::of(10);
    Budget n = Budget::of(3);
    double lambda = 1.0;
    TargetStrategy target = TargetStrategy::kGlobalMean;
    // Reselect V_top from the current model's logits at every call instead of
    // the frozen reference selection. Ablation only.
    bool refresh_topk = false;

    void validate() const;
};

// K = max(2, ceil(V / 12)), N = 3, lambda = 1, GlobalMean.
ObjectiveConfig default_objective_config(std::size_t vocab_size);

struct LossAndGrad {
    double loss = 0.0;
    std::vector<double> grad;
};

struct TouchedEntry {
    std::size_t position = 0;
    std::size_t vocab = 0;
    friend auto operator<=>(const TouchedEntry&, const TouchedEntry&) = default;
};

// Per-position V_top, empty where no forget term applies.
using TopKRow = std::vector<std::optional<TopKSet>>;

struct ObjectiveOutput {
    double loss = 0.0;
    // One row per position. An empty row is a structurally zero gradient.
    std::vector<std::vector<double>> grad;
    // Support of the forget term, sorted.
    std::vector<TouchedEntry> touched;
    std::map<std::string, double> per_term;
    // V_top used at each position (PALU only); callers freeze it across steps.
    TopKRow v_top;
};

// c is a constant for gradient purposes: no gradient flows through it.
double resolve_target_c(std::span<const double> z, std::span<const double> z_ref,
                        const TopKSet& v_top, TargetStrategy strategy);

// (1/K) sum_{i in V_top} (z_i - c)^2, gradient exactly zero off V_top.
LossAndGrad local_entropy_loss(std::span<const double> z, const TopKSet& v_top, double c);

// KL(softmax(z_ref) || softmax(z_theta)); gradient wrt z_theta is
// softmax(z_theta) - softmax(z_ref).
LossAndGrad kl_preservation_loss(std::span<const double> z_theta, std::span<const double> z_ref);

// local_entropy_loss over the full vocabulary.
LossAndGrad global_flatten_loss(std::span<const double> z, double c);

// Rows of `logits_theta` / `logits_ref` at redundant positions are never read
// and may be left empty. When `frozen_top` is given, V_top is taken from it
// instead of being reselected from the reference logits.
ObjectiveOutput palu_total_loss(std::span<const LogitVector> logits_theta,
                                std::span<const LogitVector> logits_ref,
                                const TokenPartition& partition,
                                const ObjectiveConfig& cfg,
                                const TopKRow* frozen_top = nullptr);

// sum_t log p(y_t); minimizing it is gradient ascent on the likelihood.
ObjectiveOutput negated_ce_loss(std::span<const LogitVector> logits_theta,
                                std::span<const std::size_t> targets);

// Standard next-token cross entropy, -sum_t log p(y_t).
ObjectiveOutput ce_loss(std::span<const LogitVector> logits,
                        std::span<const std::size_t> targets);

// Negated CE on the forget positions plus lambda * CE on the retain
// positions. Output positions are the forget positions followed by the
// retain positions.
ObjectiveOutput grad_diff_loss(std::span<const LogitVector> forget_logits,
                               std::span<const std::size_t> forget_targets,
                               std::span<const LogitVector> retain_logits,
                               std::span<const std::size_t> retain_targets,
                               double lambda);

// Softmax of z with z_t lowered by delta. delta = kInfinity removes t
// entirely, giving p_i / (1 - p_t) for i != t.
Distribution suppress_single_logit(std::span<const double> z, std::size_t t, double delta);

struct GradientSupport {
    std::size_t count = 0;
    std::vector<std::size_t> positions;
};

GradientSupport gradient_support(const ObjectiveOutput& out);

}  // namespace palu
