#include "palu/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "palu/error.hpp"

namespace palu {
namespace {

TokenSeq prefix_of(const QASample& s, std::size_t t) {
    TokenSeq p = s.query;
    p.insert(p.end(), s.response.begin(), s.response.begin() + static_cast<std::ptrdiff_t>(t));
    return p;
}

LogitVector logits_at(const Model& m, const QASample& s, std::size_t t) {
    return forward_logits(m, make_context(prefix_of(s, t), m.config.context_window, m.config.pad_token));
}

}  // namespace

double extraction_memorization(const Model& model, std::span<const QASample> samples, bool full_response) {
    double sum = 0.0;
    std::size_t counted = 0;
    for (const QASample& s : samples) {
        if (full_response) {
            if (s.response.empty() || s.query.empty()) continue;
            const TokenSeq out = greedy_decode(model, s.query, s.response.size());
            std::size_t hit = 0;
            for (std::size_t i = 0; i < out.size(); ++i) hit += out[i] == s.response[i] ? 1 : 0;
            sum += static_cast<double>(hit) / static_cast<double>(s.response.size());
            ++counted;
            continue;
        }
        std::size_t hit = 0;
        std::size_t total = 0;
        for (const Span& span : extract_spans(s.mask)) {
            const TokenSeq prefix = prefix_of(s, span.start);
            if (prefix.empty()) continue;
            const TokenSeq out = greedy_decode(model, prefix, span.length());
            for (std::size_t i = 0; i < span.length(); ++i) {
                hit += out[i] == s.response[span.start + i] ? 1 : 0;
            }
            total += span.length();
        }
        if (total == 0) continue;
        sum += static_cast<double>(hit) / static_cast<double>(total);
        ++counted;
    }
    return counted == 0 ? 0.0 : sum / static_cast<double>(counted);
}

TRSample truth_ratio(const Model& model, const TruthRatioItem& item) {
    require(!item.distractors.empty(), "truth_ratio: need at least one distractor");
    require(!item.correct.empty(), "truth_ratio: empty correct answer");
    const double correct = sequence_logprob(model, item.prompt, item.correct).length_normalized;
    double perturbed = 0.0;
    for (const TokenSeq& d : item.distractors) {
        require(!d.empty(), "truth_ratio: empty distractor");
        perturbed += sequence_logprob(model, item.prompt, d).length_normalized;
    }
    perturbed /= static_cast<double>(item.distractors.size());
    if (!(perturbed > 0.0) || !(correct > 0.0)) {
        fail(ErrorCode::kUndefinedValue, "truth_ratio: probability underflow");
    }
    return {item.sample_id, correct / perturbed};
}

std::vector<double> truth_ratios(const Model& model, std::span<const TruthRatioItem> items) {
    std::vector<double> out;
    out.reserve(items.size());
    for (const TruthRatioItem& it : items) out.push_back(truth_ratio(model, it).tr_value);
    return out;
}

double kolmogorov_q(double lambda) {
    if (lambda <= 0.0) return 1.0;
    if (lambda < 1.0) {
        // Dual (theta-function) form of the same series; the alternating
        // series converges too slowly near zero.
        constexpr double kPi = 3.14159265358979323846;
        const double c = -kPi * kPi / (8.0 * lambda * lambda);
        double sum = 0.0;
        for (int k = 1; k < 100; ++k) {
            const double term = std::exp(c * (2 * k - 1) * (2 * k - 1));
            sum += term;
            if (term < 1e-12 * sum || term < 1e-300) break;
        }
        const double cdf = std::sqrt(2.0 * kPi) / lambda * sum;
        return std::clamp(1.0 - cdf, 0.0, 1.0);
    }
    double sum = 0.0;
    double sign = 1.0;
    for (int k = 1; k < 100; ++k) {
        const double term = std::exp(-2.0 * k * k * lambda * lambda);
        sum += sign * term;
        if (term < 1e-12) break;
        sign = -sign;
    }
    return std::clamp(2.0 * sum, 0.0, 1.0);
}

KsResult ks_two_sample(std::span<const double> a, std::span<const double> b) {
    require(a.size() >= 2 && b.size() >= 2, "ks_two_sample: each sample needs at least 2 points");
    std::vector<double> x(a.begin(), a.end());
    std::vector<double> y(b.begin(), b.end());
    for (double v : x) require(!std::isnan(v), "ks_two_sample: NaN in sample");
    for (double v : y) require(!std::isnan(v), "ks_two_sample: NaN in sample");
    std::sort(x.begin(), x.end());
    std::sort(y.begin(), y.end());
    const double na = static_cast<double>(x.size());
    const double nb = static_cast<double>(y.size());
    std::size_t i = 0, j = 0;
    double d = 0.0;
    while (i < x.size() && j < y.size()) {
        const double v = std::min(x[i], y[j]);
        while (i < x.size() && x[i] == v) ++i;
        while (j < y.size() && y[j] == v) ++j;
        d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
    }
    const double ne = na * nb / (na + nb);
    const double sq = std::sqrt(ne);
    return {d, kolmogorov_q((sq + 0.12 + 0.11 / sq) * d)};
}

KsResult forget_quality(const Model& unlearned, const Model& retain, std::span<const TruthRatioItem> items) {
    require(unlearned.config == retain.config, "forget_quality: models have different configurations");
    return ks_two_sample(truth_ratios(unlearned, items), truth_ratios(retain, items));
}

double loss_metric(const Model& model, std::span<const QASample> samples) {
    require(!samples.empty(), "loss_metric: no samples");
    double sum = 0.0;
    for (const QASample& s : samples) {
        const SequenceLogProb lp = sequence_logprob(model, s.query, s.response);
        sum += -lp.total / static_cast<double>(s.response.size());
    }
    return sum / static_cast<double>(samples.size());
}

double min_k_percent(std::span<const double> per_token_logprobs, double k_fraction) {
    require(k_fraction > 0.0 && k_fraction <= 1.0, "min_k_percent: k_fraction must be in (0, 1]");
    require(!per_token_logprobs.empty(), "min_k_percent: no tokens");
    std::vector<double> v(per_token_logprobs.begin(), per_token_logprobs.end());
    std::sort(v.begin(), v.end());
    const double raw = k_fraction * static_cast<double>(v.size());
    auto take = static_cast<std::size_t>(std::ceil(raw - 1e-9));
    take = std::clamp<std::size_t>(take, 1, v.size());
    return std::accumulate(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(take), 0.0) /
           static_cast<double>(take);
}

double min_k_percent(const Model& model, const QASample& sample, double k_fraction) {
    return min_k_percent(sequence_logprob(model, sample.query, sample.response).per_token, k_fraction);
}

double takeover_rate(std::span<const TakeoverPosition> positions) {
    std::size_t qualifying = 0;
    std::size_t taken = 0;
    for (const TakeoverPosition& p : positions) {
        require(p.before.size() == p.after.size() && p.alias < p.before.size(),
                "takeover_rate: inconsistent position");
        if (!top_k_indices(p.before, 3).contains(p.alias)) continue;
        ++qualifying;
        if (argmax(p.after) == p.alias) ++taken;
    }
    if (qualifying == 0) fail(ErrorCode::kUndefinedValue, "synonym takeover: no qualifying positions");
    return static_cast<double>(taken) / static_cast<double>(qualifying);
}

double synonym_takeover_rate(const Model& before, const Model& after, const Corpus& corpus,
                             std::span<const QASample> samples) {
    std::vector<TakeoverPosition> positions;
    for (const QASample& s : samples) {
        const Entity& e = corpus.entity(s.entity_id);
        if (!e.alias) continue;
        const auto spans = extract_spans(s.mask);
        if (spans.empty()) continue;
        const std::size_t t = spans.front().start;
        positions.push_back({logits_at(before, s, t), logits_at(after, s, t), *e.alias});
    }
    return takeover_rate(positions);
}

namespace {

template <typename F>
double mean_over_initiating(const Model& model, const Snapshot& ref, std::span<const QASample> samples,
                            Budget k, Budget n, F&& per_position) {
    double sum = 0.0;
    std::size_t count = 0;
    for (const QASample& s : samples) {
        for (std::size_t t : partition_tokens(s.mask, n).initiating) {
            const TokenSeq ctx = make_context(prefix_of(s, t), model.config.context_window, model.config.pad_token);
            const TopKSet top = top_k_indices(forward_logits(ref.model(), ctx), k);
            sum += per_position(softmax(forward_logits(model, ctx)), top);
            ++count;
        }
    }
    if (count == 0) fail(ErrorCode::kUndefinedValue, "no initiating positions to evaluate");
    return sum / static_cast<double>(count);
}

}  // namespace

double topk_flatness(const Model& model, const Snapshot& ref, std::span<const QASample> samples,
                     Budget k, Budget n) {
    return mean_over_initiating(model, ref, samples, k, n, [](const Distribution& p, const TopKSet& top) {
        double mass = 0.0;
        double best = 0.0;
        for (std::size_t i : top.indices) {
            mass += p[i];
            best = std::max(best, p[i]);
        }
        if (!(mass > 0.0)) fail(ErrorCode::kUndefinedValue, "topk_flatness: zero mass in V_top");
        return best / mass;
    });
}

double mean_restricted_entropy(const Model& model, const Snapshot& ref, std::span<const QASample> samples,
                               Budget k, Budget n) {
    return mean_over_initiating(model, ref, samples, k, n, [](const Distribution& p, const TopKSet& top) {
        return restricted_entropy(p, top);
    });
}

// ------------------------------------------------------------ MetricReport

namespace {

using Field = std::optional<double> MetricReport::*;

struct FieldSpec {
    const char* name;
    Field field;
};

constexpr std::array<FieldSpec, 10> kFields = {{
    {"em_forget", &MetricReport::em_forget},
    {"em_retain", &MetricReport::em_retain},
    {"fq_pvalue", &MetricReport::fq_pvalue},
    {"ks_stat", &MetricReport::ks_stat},
    {"loss_forget", &MetricReport::loss_forget},
    {"mink_forget", &MetricReport::mink_forget},
    {"restricted_entropy", &MetricReport::restricted_entropy},
    {"synonym_takeover", &MetricReport::synonym_takeover},
    {"topk_flatness", &MetricReport::topk_flatness},
    {"tr_samples", &MetricReport::tr_samples},
}};

std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

void MetricReport::validate() const {
    auto unit = [](const std::optional<double>& v, const char* name) {
        if (v && !(*v >= 0.0 && *v <= 1.0)) fail(ErrorCode::kInvalidInput, std::string(name) + " outside [0, 1]");
    };
    unit(em_forget, "em_forget");
    unit(em_retain, "em_retain");
    unit(fq_pvalue, "fq_pvalue");
    unit(ks_stat, "ks_stat");
    unit(synonym_takeover, "synonym_takeover");
    unit(topk_flatness, "topk_flatness");
    if (loss_forget && !(*loss_forget >= 0.0)) fail(ErrorCode::kInvalidInput, "loss_forget must be >= 0");
    if (restricted_entropy && !(*restricted_entropy >= 0.0)) {
        fail(ErrorCode::kInvalidInput, "restricted_entropy must be >= 0");
    }
    if (mink_forget && !(*mink_forget <= 0.0)) fail(ErrorCode::kInvalidInput, "mink_forget must be <= 0");
}

std::string MetricReport::to_json() const {
    nlohmann::ordered_json j;
    for (const FieldSpec& f : kFields) {
        const auto& v = this->*f.field;
        j[f.name] = v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
    }
    return j.dump();
}

MetricReport MetricReport::from_json(const std::string& text) {
    MetricReport r;
    try {
        const auto j = nlohmann::json::parse(text);
        for (const FieldSpec& f : kFields) {
            if (j.contains(f.name) && !j.at(f.name).is_null()) r.*f.field = j.at(f.name).get<double>();
        }
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::kParse, std::string("metric report: ") + e.what());
    }
    return r;
}

std::string MetricReport::csv_header() {
    std::string h;
    for (std::size_t i = 0; i < kFields.size(); ++i) {
        if (i) h += ',';
        h += kFields[i].name;
    }
    return h;
}

std::string MetricReport::to_csv_row() const {
    std::string row;
    for (std::size_t i = 0; i < kFields.size(); ++i) {
        if (i) row += ',';
        const auto& v = this->*kFields[i].field;
        if (v) row += format_double(*v);
    }
    return row;
}

MetricReport MetricReport::from_csv_row(const std::string& row) {
    MetricReport r;
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream is(row);
    while (std::getline(is, cell, ',')) cells.push_back(cell);
    if (!row.empty() && row.back() == ',') cells.emplace_back();
    if (cells.size() != kFields.size()) fail(ErrorCode::kParse, "metric CSV row has the wrong number of cells");
    for (std::size_t i = 0; i < kFields.size(); ++i) {
        if (cells[i].empty()) continue;
        try {
            std::size_t used = 0;
            r.*kFields[i].field = std::stod(cells[i], &used);
            if (used != cells[i].size()) throw std::invalid_argument("trailing characters");
        } catch (const std::exception&) {
            fail(ErrorCode::kParse, std::string("metric CSV: bad value for ") + kFields[i].name);
        }
    }
    return r;
}

}  // namespace palu
