#pragma once

// Evaluation battery: extraction memorization (EM), Truth Ratio, Forget
// Quality through a two-sample Kolmogorov-Smirnov test, LOSS and Min-K%
// membership probes, and the flatness / synonym-takeover diagnostics.

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "palu/datagen.hpp"
#include "palu/toylm.hpp"

namespace palu {

// Greedy-decodes each sensitive span from the teacher-forced prefix that ends
// just before it and scores position-wise token matches. The per-sample
// fraction of matched entity tokens is averaged over samples; samples without
// sensitive tokens are skipped. With `full_response`, the whole response is
// decoded from the query instead.
double extraction_memorization(const Model& model, std::span<const QASample> samples,
                               bool full_response = false);

struct TRSample {
    std::size_t sample_id = 0;
    double tr_value = 0.0;
};

// P_norm(correct) / mean_i P_norm(distractor_i), P_norm being the
// length-normalized sequence probability.
TRSample truth_ratio(const Model& model, const TruthRatioItem& item);
std::vector<double> truth_ratios(const Model& model, std::span<const TruthRatioItem> items);

struct KsResult {
    double statistic = 0.0;
    double p_value = 1.0;
};

// Kolmogorov survival function Q(lambda) = 2 sum_{k>=1} (-1)^{k-1} e^{-2 k^2 lambda^2}.
double kolmogorov_q(double lambda);

// Two-sample KS statistic with the asymptotic p-value, using the effective
// size n_e = n_a n_b / (n_a + n_b) and
// lambda = (sqrt(n_e) + 0.12 + 0.11 / sqrt(n_e)) D.
KsResult ks_two_sample(std::span<const double> a, std::span<const double> b);

// KS test between the Truth Ratio distributions of the two models.
KsResult forget_quality(const Model& unlearned, const Model& retain,
                        std::span<const TruthRatioItem> items);

// Mean over samples of the per-token mean NLL of the response given the query.
double loss_metric(const Model& model, std::span<const QASample> samples);

// Mean of the ceil(k_fraction * L) smallest per-token log-probabilities.
double min_k_percent(std::span<const double> per_token_logprobs, double k_fraction);
double min_k_percent(const Model& model, const QASample& sample, double k_fraction = 0.2);

// A position where the before-model ranked the alias within its top 3.
struct TakeoverPosition {
    LogitVector before;
    LogitVector after;
    Token alias = 0;
};

// Among positions whose alias is in the before-model's top 3, the fraction
// where the alias is the after-model's argmax. Throws if none qualify.
double takeover_rate(std::span<const TakeoverPosition> positions);

// Entity-start positions of `samples` (teacher-forced), using each entity's
// alias from the corpus.
double synonym_takeover_rate(const Model& before, const Model& after, const Corpus& corpus,
                             std::span<const QASample> samples);

// Mean over initiating positions of max_{i in V_top} p_i, renormalized within
// V_top; V_top comes from the reference. Perfectly flat gives 1/K.
double topk_flatness(const Model& model, const Snapshot& ref, std::span<const QASample> samples,
                     Budget k, Budget n);

// Mean restricted entropy over V_top at initiating positions.
double mean_restricted_entropy(const Model& model, const Snapshot& ref,
                               std::span<const QASample> samples, Budget k, Budget n);

struct MetricReport {
    std::optional<double> em_forget;
    std::optional<double> em_retain;
    std::optional<double> fq_pvalue;
    std::optional<double> ks_stat;
    std::optional<double> loss_forget;
    std::optional<double> mink_forget;
    std::optional<double> restricted_entropy;
    std::optional<double> synonym_takeover;
    std::optional<double> topk_flatness;
    std::optional<double> tr_samples;

    // Throws if a populated field is outside its range.
    void validate() const;

    // Flat JSON object; absent metrics are null.
    std::string to_json() const;
    static MetricReport from_json(const std::string& text);

    static std::string csv_header();
    std::string to_csv_row() const;
    static MetricReport from_csv_row(const std::string& row);

    friend bool operator==(const MetricReport&, const MetricReport&) = default;
};

}  // namespace palu
