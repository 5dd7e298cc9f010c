#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>

#include "palu/toylm.hpp"
#include "test_util.hpp"

using namespace palu;
using palu::testing::error_code;
using palu::testing::max_rel_error;

namespace {

ModelConfig tiny_config() {
    ModelConfig c;
    c.vocab_size = 8;
    c.context_window = 3;
    c.embed_dim = 4;
    c.hidden_dim = 5;
    return c;
}

Model random_model(const ModelConfig& cfg, std::uint64_t seed, double scale = 5.0) {
    Model m{cfg, init_params(cfg, seed), 0};
    // Larger weights than the init range so that logits are far from flat.
    m.params.for_each([&](std::vector<double>& t) {
        for (double& v : t) v *= scale;
    });
    return m;
}

UnlearnSample random_sample(Rng& rng, std::size_t id, std::size_t V) {
    UnlearnSample s;
    s.id = id;
    const std::size_t q = 1 + rng.below(3), T = 2 + rng.below(5);
    for (std::size_t i = 0; i < q; ++i) s.query.push_back(1 + rng.below(V - 1));
    for (std::size_t i = 0; i < T; ++i) {
        s.response.push_back(1 + rng.below(V - 1));
        s.mask.bits.push_back(rng.below(2) ? 1 : 0);
    }
    return s;
}

TokenSeq context_at(const ModelConfig& cfg, const UnlearnSample& s, std::size_t t) {
    TokenSeq hist = s.query;
    hist.insert(hist.end(), s.response.begin(), s.response.begin() + static_cast<std::ptrdiff_t>(t));
    return make_context(hist, cfg.context_window, cfg.pad_token);
}

// The PALU / top-1 batch objective written out from forward passes, with
// every target c frozen at its value under `base`.
double palu_param_oracle(std::span<const double> flat, const Model& base, const Snapshot& ref,
                         std::span<const UnlearnSample> batch, const UnlearnSettings& settings,
                         const TopKCache& cache) {
    Model m = base;
    m.params.assign_flat(flat);
    const ObjectiveConfig cfg = settings.effective_config();
    double total = 0.0;
    for (const UnlearnSample& s : batch) {
        const TokenPartition part = partition_tokens(s.mask, cfg.n);
        for (std::size_t t : part.initiating) {
            const TokenSeq ctx = context_at(m.config, s, t);
            const LogitVector z = forward_logits(m, ctx);
            const LogitVector z0 = forward_logits(base, ctx);
            const LogitVector zr = forward_logits(ref.model(), ctx);
            const TopKSet& top = cache.at({s.id, t});
            const double c = resolve_target_c(z0, zr, top, cfg.target);
            double acc = 0.0;
            for (std::size_t i : top.indices) acc += (z[i] - c) * (z[i] - c);
            total += acc / static_cast<double>(top.size());
        }
        for (std::size_t t : part.common) {
            const TokenSeq ctx = context_at(m.config, s, t);
            total += cfg.lambda * kl_divergence(softmax(forward_logits(ref.model(), ctx)), softmax(forward_logits(m, ctx)));
        }
    }
    return total / static_cast<double>(batch.size());
}

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / ("palu_test_" + name)).string();
}

}  // namespace

TEST(ModelConfig, Validation) {
    ModelConfig c = tiny_config();
    EXPECT_NO_THROW(c.validate());
    c.vocab_size = 3;
    EXPECT_EQ(error_code([&] { c.validate(); }), ErrorCode::kInvalidInput);
    c = tiny_config();
    c.context_window = 1;
    EXPECT_EQ(error_code([&] { c.validate(); }), ErrorCode::kInvalidInput);
    c = tiny_config();
    c.pad_token = 8;
    EXPECT_EQ(error_code([&] { c.validate(); }), ErrorCode::kInvalidInput);
}

TEST(InitParams, DeterministicAndInRange) {
    const ModelConfig c = tiny_config();
    const TinyLMParams a = init_params(c, 3);
    EXPECT_EQ(a, init_params(c, 3));
    EXPECT_NE(a, init_params(c, 4));
    for (double v : a.flatten()) {
        EXPECT_GE(v, -0.1);
        EXPECT_LE(v, 0.1);
    }
    EXPECT_EQ(a.parameter_count(), 8u * 4 + 12u * 5 + 5 + 5u * 8 + 8);
}

TEST(MakeContext, LeftPadsAndTruncates) {
    EXPECT_EQ(make_context(TokenSeq{5, 6}, 4, 0), (TokenSeq{0, 0, 5, 6}));
    EXPECT_EQ(make_context(TokenSeq{1, 2, 3, 4, 5}, 3, 0), (TokenSeq{3, 4, 5}));
    EXPECT_EQ(make_context(TokenSeq{}, 2, 7), (TokenSeq{7, 7}));
}

TEST(ForwardLogits, ZeroParamsGiveUniform) {
    const ModelConfig c = tiny_config();
    const LogitVector z = forward_logits(TinyLMParams::zeros(c), c, TokenSeq{1, 2, 3});
    for (double v : z) EXPECT_EQ(v, 0.0);
}

TEST(ForwardLogits, HandComputedValue) {
    ModelConfig c;
    c.vocab_size = 4;
    c.context_window = 2;
    c.embed_dim = 1;
    c.hidden_dim = 1;
    TinyLMParams p = TinyLMParams::zeros(c);
    p.embedding = {0.1, 0.2, 0.3, 0.4};
    p.w1 = {0.5, -1.0};
    p.b1 = {0.25};
    p.w2 = {1.0, -2.0, 0.5, 3.0};
    p.b2 = {0.0, 0.1, 0.0, -0.1};
    const LogitVector z = forward_logits(p, c, TokenSeq{1, 2});
    const double h = std::tanh(0.2 * 0.5 + 0.3 * -1.0 + 0.25);
    EXPECT_DOUBLE_EQ(z[0], h);
    EXPECT_NEAR(z[1], -2.0 * h + 0.1, 1e-15);
    EXPECT_DOUBLE_EQ(z[2], 0.5 * h);
    EXPECT_NEAR(z[3], 3.0 * h - 0.1, 1e-15);
}

TEST(ForwardLogits, DeterministicAndValidated) {
    const ModelConfig c = tiny_config();
    const TinyLMParams p = init_params(c, 1);
    EXPECT_EQ(forward_logits(p, c, TokenSeq{1, 2, 3}), forward_logits(p, c, TokenSeq{1, 2, 3}));
    EXPECT_EQ(error_code([&] { forward_logits(p, c, TokenSeq{1, 2, 8}); }), ErrorCode::kInvalidInput);
    EXPECT_EQ(error_code([&] { forward_logits(p, c, TokenSeq{1, 2}); }), ErrorCode::kInvalidInput);
}

TEST(Backward, ZeroAndLinear) {
    const ModelConfig c = tiny_config();
    const Model m = random_model(c, 2);
    Rng rng(50);
    std::vector<TokenSeq> ctx{{1, 2, 3}, {0, 4, 7}};
    std::vector<LogitVector> g{palu::testing::random_logits(rng, 8), palu::testing::random_logits(rng, 8)};
    std::vector<LogitVector> zero(2, LogitVector(8, 0.0));
    for (double v : backward_from_logit_grads(m.params, c, ctx, zero).flatten()) EXPECT_EQ(v, 0.0);

    const auto once = backward_from_logit_grads(m.params, c, ctx, g).flatten();
    for (auto& row : g) {
        for (double& v : row) v *= 2.0;
    }
    const auto twice = backward_from_logit_grads(m.params, c, ctx, g).flatten();
    for (std::size_t i = 0; i < once.size(); ++i) EXPECT_NEAR(twice[i], 2.0 * once[i], 1e-14);

    std::vector<LogitVector> bad{LogitVector(7, 0.0), LogitVector(8, 0.0)};
    EXPECT_EQ(error_code([&] { backward_from_logit_grads(m.params, c, ctx, bad); }), ErrorCode::kInvalidInput);
    EXPECT_EQ(error_code([&] { backward_from_logit_grads(m.params, c, ctx, std::vector<LogitVector>{}); }),
              ErrorCode::kInvalidInput);
}

TEST(Backward, FiniteDifferencesOverParameters) {
    const ModelConfig c = tiny_config();
    Rng rng(51);
    for (int trial = 0; trial < 20; ++trial) {
        const Model m = random_model(c, 100 + trial, 3.0);
        std::vector<TokenSeq> ctx;
        std::vector<LogitVector> g;
        for (int b = 0; b < 3; ++b) {
            ctx.push_back({rng.below(8), rng.below(8), rng.below(8)});
            g.push_back(palu::testing::random_logits(rng, 8, 1.0));
        }
        auto f = [&](std::span<const double> flat) {
            TinyLMParams p = m.params;
            p.assign_flat(flat);
            double s = 0.0;
            for (std::size_t b = 0; b < ctx.size(); ++b) {
                const LogitVector z = forward_logits(p, c, ctx[b]);
                for (std::size_t v = 0; v < z.size(); ++v) s += g[b][v] * z[v];
            }
            return s;
        };
        const auto analytic = backward_from_logit_grads(m.params, c, ctx, g).flatten();
        EXPECT_LT(max_rel_error(analytic, finite_difference_gradient(f, m.params.flatten())), 1e-5);
    }
}

TEST(TrainStep, ZeroLearningRateLeavesParameters) {
    const ModelConfig c = tiny_config();
    Model m = random_model(c, 3, 1.0);
    const TinyLMParams before = m.params;
    OptimizerState opt = OptimizerState::for_model(c, 0.0);
    const std::vector<Example> batch{{{1, 2, 3}, 4}};
    train_step_ce(m, opt, batch);
    EXPECT_EQ(m.params, before);
    EXPECT_EQ(opt.step, 1);
}

TEST(TrainStep, MemorizesSinglePair) {
    const ModelConfig c = tiny_config();
    Model m{c, init_params(c, 4), 0};
    OptimizerState opt = OptimizerState::for_model(c, 1e-2);
    const std::vector<Example> batch{{{0, 2, 3}, 5}};
    double first = 0.0, at50 = 0.0, last = 0.0;
    for (int step = 0; step < 500; ++step) {
        last = train_step_ce(m, opt, batch);
        if (step == 0) first = last;
        if (step == 50) at50 = last;
    }
    EXPECT_LT(at50, first);
    EXPECT_LT(last, 0.01);
    EXPECT_EQ(greedy_decode(m, TokenSeq{2, 3}, 1), (TokenSeq{5}));
    EXPECT_EQ(error_code([&] { train_step_ce(m, opt, std::vector<Example>{{{0, 2, 3}, 9}}); }),
              ErrorCode::kInvalidInput);
}

TEST(TeacherForcing, Contexts) {
    const ModelConfig c = tiny_config();
    const auto ex = teacher_forced_examples(c, TokenSeq{2, 3}, TokenSeq{4, 5, 6});
    ASSERT_EQ(ex.size(), 3u);
    EXPECT_EQ(ex[0].context, (TokenSeq{0, 2, 3}));
    EXPECT_EQ(ex[1].context, (TokenSeq{2, 3, 4}));
    EXPECT_EQ(ex[2].context, (TokenSeq{3, 4, 5}));
    EXPECT_EQ(ex[2].target, 6u);
}

TEST(Snapshot, FrozenCopy) {
    const ModelConfig c = tiny_config();
    Model m = random_model(c, 5, 1.0);
    const Snapshot snap = snapshot_reference(m);
    const TokenSeq ctx{1, 2, 3};
    const LogitVector at_creation = forward_logits(m, ctx);
    EXPECT_EQ(forward_logits(snap.model(), ctx), at_creation);
    m.params.b2[0] += 1.0;
    EXPECT_EQ(forward_logits(snap.model(), ctx), at_creation);
    const Snapshot again = snapshot_reference(snap);
    EXPECT_EQ(again.params(), snap.params());
    EXPECT_EQ(again.config(), snap.config());
}

TEST(Objective, ParseNames) {
    for (auto o : {Objective::kPalu, Objective::kGradAscent, Objective::kGradDiff, Objective::kGlobalFlatten,
                   Objective::kTop1}) {
        EXPECT_EQ(parse_objective(to_string(o)), o);
    }
    EXPECT_EQ(error_code([] { parse_objective("npo"); }), ErrorCode::kInvalidInput);
    UnlearnSettings s;
    s.objective = Objective::kTop1;
    s.config.k = Budget::of(10);
    EXPECT_EQ(s.effective_config().k, Budget::of(1));
}

TEST(UnlearnStep, NoSensitiveTokensAndNoKlIsANoOp) {
    const ModelConfig c = tiny_config();
    Model m = random_model(c, 6, 1.0);
    const Snapshot ref = snapshot_reference(m);
    UnlearnSample s{0, {1, 2}, {3, 4, 5}, SensitivityMask{{0, 0, 0}}};
    UnlearnSettings settings;
    settings.config.lambda = 0.0;
    const std::vector<UnlearnSample> batch{s};
    const TopKCache cache = build_topk_cache(ref, batch, settings);
    EXPECT_TRUE(cache.empty());
    OptimizerState opt = OptimizerState::for_model(c, 1e-2);
    const TinyLMParams before = m.params;
    const UnlearnGradient g = unlearn_step(m, opt, ref, batch, settings, cache);
    EXPECT_EQ(g.loss, 0.0);
    EXPECT_EQ(g.touched, 0u);
    EXPECT_EQ(m.params, before);
}

TEST(UnlearnStep, FullBudgetIsGlobalFlattening) {
    const ModelConfig c = tiny_config();
    const Model m = random_model(c, 7);
    const Snapshot ref = snapshot_reference(m);
    Rng rng(52);
    const std::vector<UnlearnSample> batch{random_sample(rng, 0, 8), random_sample(rng, 1, 8)};
    UnlearnSettings settings;
    settings.config.k = Budget::all();
    settings.config.n = Budget::all();
    settings.config.lambda = 0.0;
    const TopKCache cache = build_topk_cache(ref, batch, settings);
    const UnlearnGradient g = unlearn_gradient(m, ref, batch, settings, cache);
    double expected = 0.0;
    for (const UnlearnSample& s : batch) {
        for (std::size_t t = 0; t < s.response.size(); ++t) {
            if (!s.mask.sensitive(t)) continue;
            const LogitVector z = forward_logits(m, context_at(c, s, t));
            const double mean = std::accumulate(z.begin(), z.end(), 0.0) / 8.0;
            expected += global_flatten_loss(z, mean).loss;
        }
    }
    EXPECT_NEAR(g.loss, expected / 2.0, 1e-12);
}

TEST(UnlearnGradient, FiniteDifferencesEveryObjective) {
    const ModelConfig c = tiny_config();
    Rng rng(53);
    const Objective objectives[] = {Objective::kPalu, Objective::kTop1, Objective::kGradAscent,
                                    Objective::kGradDiff, Objective::kGlobalFlatten};
    const TargetStrategy targets[] = {TargetStrategy::kGlobalMean, TargetStrategy::kMeanTopK,
                                      TargetStrategy::kMeanRef, TargetStrategy::kUniform};
    for (int trial = 0; trial < 25; ++trial) {
        for (Objective o : objectives) {
            const Model ref_model = random_model(c, 200 + trial, 3.0);
            Model m = ref_model;
            // Move away from the reference so the KL term has a gradient.
            m.params.for_each([&](std::vector<double>& t) {
                for (double& v : t) v += 0.05 * rng.normal();
            });
            const Snapshot ref = snapshot_reference(ref_model);
            std::vector<UnlearnSample> batch{random_sample(rng, 0, 8), random_sample(rng, 1, 8)};
            std::vector<UnlearnSample> retain{random_sample(rng, 2, 8)};
            UnlearnSettings settings;
            settings.objective = o;
            settings.config.k = Budget::of(1 + rng.below(8));
            settings.config.n = Budget::of(1 + rng.below(3));
            settings.config.lambda = rng.uniform(0.2, 2.0);
            settings.config.target = targets[trial % 4];
            const TopKCache cache = build_topk_cache(ref, batch, settings);
            const UnlearnGradient g = unlearn_gradient(m, ref, batch, settings, cache, retain);

            std::function<double(std::span<const double>)> f;
            if (o == Objective::kPalu || o == Objective::kTop1) {
                f = [&](std::span<const double> x) { return palu_param_oracle(x, m, ref, batch, settings, cache); };
                EXPECT_NEAR(f(m.params.flatten()), g.loss, 1e-10);
            } else {
                f = [&](std::span<const double> x) {
                    Model p = m;
                    p.params.assign_flat(x);
                    return unlearn_objective_value(p, ref, batch, settings, cache, retain);
                };
            }
            const auto fd = finite_difference_gradient(f, m.params.flatten());
            EXPECT_LT(max_rel_error(g.grads.flatten(), fd), 1e-5)
                << "objective " << to_string(o) << " trial " << trial;
        }
    }
}

TEST(UnlearnGradient, DensePathIsBitIdentical) {
    const ModelConfig c = tiny_config();
    Rng rng(54);
    for (int trial = 0; trial < 30; ++trial) {
        const Model m = random_model(c, 300 + trial);
        const Snapshot ref = snapshot_reference(m);
        std::vector<UnlearnSample> batch{random_sample(rng, 0, 8), random_sample(rng, 1, 8)};
        batch[0].mask.bits.assign(batch[0].mask.size(), 1);
        UnlearnSettings settings;
        settings.config.k = Budget::of(3);
        settings.config.n = Budget::of(1);
        settings.config.lambda = trial % 2 == 0 ? 0.0 : 1.0;
        const TopKCache cache = build_topk_cache(ref, batch, settings);
        const UnlearnGradient sparse = unlearn_gradient(m, ref, batch, settings, cache, {}, false);
        const UnlearnGradient dense = unlearn_gradient(m, ref, batch, settings, cache, {}, true);
        EXPECT_EQ(sparse.grads, dense.grads);
        EXPECT_EQ(sparse.loss, dense.loss);

        Model a = m, b = m;
        OptimizerState oa = OptimizerState::for_model(c, 1e-2), ob = oa;
        adam_step(a.params, oa, sparse.grads);
        adam_step(b.params, ob, dense.grads);
        EXPECT_EQ(a.params, b.params);
    }
}

TEST(UnlearnGradient, RedundantPositionsContributeNothing) {
    const ModelConfig c = tiny_config();
    const Model m = random_model(c, 8);
    const Snapshot ref = snapshot_reference(m);
    UnlearnSample base{0, {1, 2}, {3, 4, 5, 6}, SensitivityMask{{1, 1, 1, 1}}};
    UnlearnSample changed = base;
    // Positions 2 and 3 are redundant at N = 2. Their tokens only feed the
    // contexts of positions 3 and beyond.
    changed.response[2] = 7;
    changed.response[3] = 1;
    UnlearnSettings settings;
    settings.config.n = Budget::of(2);
    settings.config.k = Budget::of(3);
    const std::vector<UnlearnSample> a{base}, b{changed};
    const TopKCache ca = build_topk_cache(ref, a, settings);
    const TopKCache cb = build_topk_cache(ref, b, settings);
    EXPECT_EQ(ca, cb);
    const UnlearnGradient ga = unlearn_gradient(m, ref, a, settings, ca);
    const UnlearnGradient gb = unlearn_gradient(m, ref, b, settings, cb);
    EXPECT_EQ(ga.grads, gb.grads);
    EXPECT_EQ(ga.touched, 2u * 3u);
}

TEST(UnlearnStep, TopKCacheIsStable) {
    const ModelConfig c = tiny_config();
    Model m = random_model(c, 9, 2.0);
    const Snapshot ref = snapshot_reference(m);
    Rng rng(55);
    std::vector<UnlearnSample> batch{random_sample(rng, 0, 8), random_sample(rng, 1, 8), random_sample(rng, 2, 8)};
    for (auto& s : batch) s.mask.bits[0] = 1;
    UnlearnSettings settings;
    settings.config.k = Budget::of(3);
    const TopKCache cache = build_topk_cache(ref, batch, settings);
    const TopKCache copy = cache;
    OptimizerState opt = OptimizerState::for_model(c, 5e-2);
    for (int step = 0; step < 30; ++step) unlearn_step(m, opt, ref, batch, settings, cache);
    EXPECT_NE(m.params, ref.params());
    EXPECT_EQ(cache, copy);
    EXPECT_EQ(build_topk_cache(ref, batch, settings), copy);
    for (const auto& [key, top] : cache) EXPECT_EQ(top.size(), 3u);
}

TEST(GreedyDecode, Basics) {
    const ModelConfig c = tiny_config();
    const Model m = random_model(c, 10);
    EXPECT_TRUE(greedy_decode(m, TokenSeq{1}, 0).empty());
    const TokenSeq a = greedy_decode(m, TokenSeq{1, 2}, 6);
    EXPECT_EQ(a.size(), 6u);
    EXPECT_EQ(a, greedy_decode(m, TokenSeq{1, 2}, 6));
    EXPECT_EQ(error_code([&] { greedy_decode(m, TokenSeq{}, 3); }), ErrorCode::kInvalidInput);

    Model fixed{c, TinyLMParams::zeros(c), 0};
    fixed.params.b2[5] = 1.0;
    EXPECT_EQ(greedy_decode(fixed, TokenSeq{1}, 4, Token{5}), (TokenSeq{5}));
    // All-zero logits tie everywhere; the lowest index wins.
    EXPECT_EQ(greedy_decode(Model{c, TinyLMParams::zeros(c), 0}, TokenSeq{1}, 2), (TokenSeq{0, 0}));
}

TEST(SequenceLogProb, UniformAndBruteForce) {
    const ModelConfig c = tiny_config();
    const Model uniform{c, TinyLMParams::zeros(c), 0};
    const SequenceLogProb u = sequence_logprob(uniform, TokenSeq{1}, TokenSeq{2, 3, 4});
    EXPECT_NEAR(u.total, 3.0 * std::log(1.0 / 8.0), 1e-12);
    EXPECT_NEAR(u.length_normalized, 1.0 / 8.0, 1e-12);

    const Model m = random_model(c, 11);
    const SequenceLogProb one = sequence_logprob(m, TokenSeq{1, 2}, TokenSeq{6});
    EXPECT_NEAR(one.length_normalized, softmax(forward_logits(m, TokenSeq{0, 1, 2}))[6], 1e-12);

    const SequenceLogProb three = sequence_logprob(m, TokenSeq{1, 2}, TokenSeq{3, 7, 5});
    const double prod = softmax(forward_logits(m, TokenSeq{0, 1, 2}))[3] *
                        softmax(forward_logits(m, TokenSeq{1, 2, 3}))[7] *
                        softmax(forward_logits(m, TokenSeq{2, 3, 7}))[5];
    EXPECT_NEAR(std::exp(three.total), prod, 1e-12 * prod);
    EXPECT_NEAR(three.length_normalized, std::cbrt(prod), 1e-12);
    ASSERT_EQ(three.per_token.size(), 3u);
    EXPECT_EQ(error_code([&] { sequence_logprob(m, TokenSeq{1}, TokenSeq{}); }), ErrorCode::kInvalidInput);
}

TEST(Checkpoint, RoundTrip) {
    const ModelConfig c = tiny_config();
    Model m = random_model(c, 12);
    m.step = 42;
    const std::string path = temp_path("roundtrip.toylm");
    save_checkpoint(m, path);
    const Model back = load_checkpoint(path);
    EXPECT_EQ(back.config, m.config);
    EXPECT_EQ(back.params, m.params);
    EXPECT_EQ(back.step, 42);
    EXPECT_NO_THROW(load_checkpoint(path, c));
    ModelConfig other = c;
    other.hidden_dim = 6;
    EXPECT_EQ(error_code([&] { load_checkpoint(path, other); }), ErrorCode::kInvalidInput);
    std::remove(path.c_str());
}

TEST(Checkpoint, RejectsCorruptFiles) {
    const std::string path = temp_path("corrupt.toylm");
    {
        std::ofstream os(path, std::ios::binary);
        os << "NOTAMODEL";
    }
    EXPECT_EQ(error_code([&] { load_checkpoint(path); }), ErrorCode::kParse);

    const ModelConfig c = tiny_config();
    save_checkpoint(Model{c, init_params(c, 1), 0}, path);
    std::filesystem::resize_file(path, std::filesystem::file_size(path) - 16);
    EXPECT_EQ(error_code([&] { load_checkpoint(path); }), ErrorCode::kParse);
    std::remove(path.c_str());

    EXPECT_EQ(error_code([] { load_checkpoint("/nonexistent/dir/model.toylm"); }), ErrorCode::kIo);
}
