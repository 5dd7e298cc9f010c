#pragma once

// Numerically stable primitives over logit and probability vectors.
//
// Vectors are passed as spans of doubles. A logit vector must be finite; a
// probability distribution must be nonnegative and sum to one. Entropy and
// KL are in nats.

#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <vector>

namespace palu {

using LogitVector = std::vector<double>;
using Distribution = std::vector<double>;

// A size budget that may also mean "everything" (the K = All / N = All
// settings of the ablation grid).
class Budget {
public:
    static constexpr Budget all() { return Budget(kAll); }
    static constexpr Budget of(std::size_t n) { return Budget(n); }

    constexpr bool is_all() const { return value_ == kAll; }
    constexpr std::size_t value() const { return value_; }

    // min(value, limit); All resolves to limit.
    constexpr std::size_t resolve(std::size_t limit) const {
        return value_ < limit ? value_ : limit;
    }

    friend constexpr bool operator==(Budget, Budget) = default;

private:
    static constexpr std::size_t kAll = std::numeric_limits<std::size_t>::max();
    explicit constexpr Budget(std::size_t v) : value_(v) {}
    std::size_t value_;
};

// Indices of the top-K logits, sorted ascending. `k` is the requested size
// before clamping to the vocabulary.
struct TopKSet {
    std::vector<std::size_t> indices;
    std::size_t k = 0;

    std::size_t size() const { return indices.size(); }
    bool contains(std::size_t i) const;
    friend bool operator==(const TopKSet&, const TopKSet&) = default;
};

inline constexpr double kKlFloor = 1e-12;
inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

Distribution softmax(std::span<const double> z);
std::vector<double> log_softmax(std::span<const double> z);
double log_sum_exp(std::span<const double> z);

double entropy(std::span<const double> p);

// KL(p || q) with q floored at kKlFloor before the log.
double kl_divergence(std::span<const double> p, std::span<const double> q);

// Ties resolve to the lower vocabulary index; k > V clamps to V.
TopKSet top_k_indices(std::span<const double> z, Budget k);
TopKSet top_k_indices(std::span<const double> z, std::size_t k);

// Entropy of p restricted to s and renormalized.
double restricted_entropy(std::span<const double> p, const TopKSet& s);

// Argmax with the lowest index winning ties.
std::size_t argmax(std::span<const double> z);

// Central differences, one coordinate at a time.
using ScalarFunction = std::function<double(std::span<const double>)>;
std::vector<double> finite_difference_gradient(const ScalarFunction& f,
                                               std::span<const double> z,
                                               double h = 1e-5);

}  // namespace palu
