#include "palu/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "palu/error.hpp"

namespace palu {
namespace {

double mean(std::span<const double> z) {
    return std::accumulate(z.begin(), z.end(), 0.0) / static_cast<double>(z.size());
}

void check_target(std::size_t target, std::size_t vocab) {
    if (target >= vocab) fail(ErrorCode::kInvalidInput, "target token out of vocabulary range");
}

}  // namespace

std::string_view to_string(TargetStrategy s) {
    switch (s) {
        case TargetStrategy::kUniform: return "uniform";
        case TargetStrategy::kMeanTopK: return "mean_topk";
        case TargetStrategy::kMeanRef: return "mean_ref";
        case TargetStrategy::kGlobalMean: return "global_mean";
    }
    return "global_mean";
}

TargetStrategy parse_target_strategy(std::string_view name) {
    if (name == "uniform") return TargetStrategy::kUniform;
    if (name == "mean_topk") return TargetStrategy::kMeanTopK;
    if (name == "mean_ref") return TargetStrategy::kMeanRef;
    if (name == "global_mean") return TargetStrategy::kGlobalMean;
    fail(ErrorCode::kInvalidInput, "unknown target strategy: " + std::string(name));
}

void ObjectiveConfig::validate() const {
    require(k.value() >= 1, "objective config: k must be >= 1");
    require(n.value() >= 1, "objective config: n must be >= 1");
    require(lambda >= 0.0 && std::isfinite(lambda), "objective config: lambda must be finite and >= 0");
}

ObjectiveConfig default_objective_config(std::size_t vocab_size) {
    ObjectiveConfig cfg;
    cfg.k = Budget::of(std::max<std::size_t>(2, (vocab_size + 11) / 12));
    cfg.n = Budget::of(3);
    cfg.lambda = 1.0;
    cfg.target = TargetStrategy::kGlobalMean;
    return cfg;
}

double resolve_target_c(std::span<const double> z, std::span<const double> z_ref,
                        const TopKSet& v_top, TargetStrategy strategy) {
    require(z.size() == z_ref.size(), "resolve_target_c: length mismatch");
    switch (strategy) {
        case TargetStrategy::kUniform:
            return 0.0;
        case TargetStrategy::kMeanTopK: {
            require(!v_top.indices.empty(), "resolve_target_c: empty V_top");
            double s = 0.0;
            for (std::size_t i : v_top.indices) s += z[i];
            return s / static_cast<double>(v_top.size());
        }
        case TargetStrategy::kMeanRef:
            return mean(z_ref);
        case TargetStrategy::kGlobalMean:
            return mean(z);
    }
    return 0.0;
}

LossAndGrad local_entropy_loss(std::span<const double> z, const TopKSet& v_top, double c) {
    require(!v_top.indices.empty(), "local_entropy_loss: empty V_top");
    const double inv_k = 1.0 / static_cast<double>(v_top.size());
    LossAndGrad out;
    out.grad.assign(z.size(), 0.0);
    for (std::size_t i : v_top.indices) {
        require(i < z.size(), "local_entropy_loss: index out of range");
        const double d = z[i] - c;
        out.loss += d * d;
        out.grad[i] = 2.0 * inv_k * d;
    }
    out.loss *= inv_k;
    return out;
}

LossAndGrad kl_preservation_loss(std::span<const double> z_theta, std::span<const double> z_ref) {
    require(z_theta.size() == z_ref.size(), "kl_preservation_loss: length mismatch");
    const auto log_p_ref = log_softmax(z_ref);
    const auto log_p_theta = log_softmax(z_theta);
    LossAndGrad out;
    out.grad.resize(z_theta.size());
    for (std::size_t i = 0; i < z_theta.size(); ++i) {
        const double p_ref = std::exp(log_p_ref[i]);
        if (p_ref > 0.0) out.loss += p_ref * (log_p_ref[i] - log_p_theta[i]);
        out.grad[i] = std::exp(log_p_theta[i]) - p_ref;
    }
    out.loss = std::max(out.loss, 0.0);
    return out;
}

LossAndGrad global_flatten_loss(std::span<const double> z, double c) {
    TopKSet everything{std::vector<std::size_t>(z.size()), z.size()};
    std::iota(everything.indices.begin(), everything.indices.end(), std::size_t{0});
    return local_entropy_loss(z, everything, c);
}

ObjectiveOutput palu_total_loss(std::span<const LogitVector> logits_theta,
                                std::span<const LogitVector> logits_ref,
                                const TokenPartition& partition,
                                const ObjectiveConfig& cfg,
                                const TopKRow* frozen_top) {
    cfg.validate();
    const std::size_t T = partition.size();
    require(logits_theta.size() == T && logits_ref.size() == T,
            "palu_total_loss: logit sequences must match the partition length");
    require(partition.n_budget == cfg.n, "palu_total_loss: partition budget differs from config");
    if (frozen_top != nullptr) require(frozen_top->size() == T, "palu_total_loss: frozen V_top length mismatch");

    ObjectiveOutput out;
    out.grad.resize(T);
    out.v_top.resize(T);
    double forget = 0.0;
    double retain = 0.0;

    for (std::size_t t : partition.initiating) {
        const LogitVector& z = logits_theta[t];
        const LogitVector& z_ref = logits_ref[t];
        require(!z.empty() && z.size() == z_ref.size(), "palu_total_loss: missing logits at initiating position");
        TopKSet top;
        if (cfg.refresh_topk) {
            top = top_k_indices(z, cfg.k);
        } else if (frozen_top != nullptr && (*frozen_top)[t].has_value()) {
            top = *(*frozen_top)[t];
        } else {
            top = top_k_indices(z_ref, cfg.k);
        }
        const double c = resolve_target_c(z, z_ref, top, cfg.target);
        LossAndGrad lg = local_entropy_loss(z, top, c);
        forget += lg.loss;
        for (std::size_t i : top.indices) out.touched.push_back({t, i});
        out.grad[t] = std::move(lg.grad);
        out.v_top[t] = std::move(top);
    }

    if (cfg.lambda > 0.0) {
        for (std::size_t t : partition.common) {
            const LogitVector& z = logits_theta[t];
            require(!z.empty() && z.size() == logits_ref[t].size(),
                    "palu_total_loss: missing logits at common position");
            LossAndGrad lg = kl_preservation_loss(z, logits_ref[t]);
            retain += cfg.lambda * lg.loss;
            for (double& g : lg.grad) g *= cfg.lambda;
            out.grad[t] = std::move(lg.grad);
        }
    }

    std::sort(out.touched.begin(), out.touched.end());
    out.per_term["forget"] = forget;
    out.per_term["retain_kl"] = retain;
    out.loss = forget + retain;
    return out;
}

ObjectiveOutput negated_ce_loss(std::span<const LogitVector> logits_theta,
                                std::span<const std::size_t> targets) {
    require(logits_theta.size() == targets.size(), "negated_ce_loss: length mismatch");
    ObjectiveOutput out;
    out.grad.resize(targets.size());
    for (std::size_t t = 0; t < targets.size(); ++t) {
        const LogitVector& z = logits_theta[t];
        check_target(targets[t], z.size());
        const auto lp = log_softmax(z);
        out.loss += lp[targets[t]];
        auto& g = out.grad[t];
        g.resize(z.size());
        for (std::size_t i = 0; i < z.size(); ++i) {
            g[i] = (i == targets[t] ? 1.0 : 0.0) - std::exp(lp[i]);
            out.touched.push_back({t, i});
        }
    }
    out.per_term["forget"] = out.loss;
    return out;
}

ObjectiveOutput ce_loss(std::span<const LogitVector> logits, std::span<const std::size_t> targets) {
    ObjectiveOutput out = negated_ce_loss(logits, targets);
    out.loss = -out.loss;
    for (auto& row : out.grad) {
        for (double& g : row) g = -g;
    }
    out.touched.clear();
    out.per_term.clear();
    out.per_term["ce"] = out.loss;
    return out;
}

ObjectiveOutput grad_diff_loss(std::span<const LogitVector> forget_logits,
                               std::span<const std::size_t> forget_targets,
                               std::span<const LogitVector> retain_logits,
                               std::span<const std::size_t> retain_targets,
                               double lambda) {
    require(lambda >= 0.0, "grad_diff_loss: lambda must be >= 0");
    ObjectiveOutput out = negated_ce_loss(forget_logits, forget_targets);
    ObjectiveOutput retain = ce_loss(retain_logits, retain_targets);
    const double forget_loss = out.loss;
    const double retain_loss = lambda * retain.loss;
    for (auto& row : retain.grad) {
        for (double& g : row) g *= lambda;
        out.grad.push_back(std::move(row));
    }
    out.loss = forget_loss + retain_loss;
    out.per_term["forget"] = forget_loss;
    out.per_term["retain_ce"] = retain_loss;
    return out;
}

Distribution suppress_single_logit(std::span<const double> z, std::size_t t, double delta) {
    require(t < z.size(), "suppress_single_logit: index out of range");
    require(!std::isnan(delta), "suppress_single_logit: delta is NaN");
    if (std::isinf(delta) && delta > 0.0) {
        std::vector<double> rest;
        rest.reserve(z.size() - 1);
        for (std::size_t i = 0; i < z.size(); ++i) {
            if (i != t) rest.push_back(z[i]);
        }
        const Distribution q = softmax(rest);
        Distribution p(z.size(), 0.0);
        for (std::size_t i = 0, j = 0; i < z.size(); ++i) {
            if (i != t) p[i] = q[j++];
        }
        return p;
    }
    std::vector<double> edited(z.begin(), z.end());
    edited[t] -= delta;
    return softmax(edited);
}

GradientSupport gradient_support(const ObjectiveOutput& out) {
    GradientSupport s;
    s.count = out.touched.size();
    for (const TouchedEntry& e : out.touched) {
        if (s.positions.empty() || s.positions.back() != e.position) s.positions.push_back(e.position);
    }
    return s;
}

}  // namespace palu
