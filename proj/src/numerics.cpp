#include "palu/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "palu/error.hpp"

namespace palu {
namespace {

void require_finite(std::span<const double> z, const char* who) {
    for (double v : z) {
        if (!std::isfinite(v)) fail(ErrorCode::kInvalidInput, std::string(who) + ": non-finite logit");
    }
}

}  // namespace

bool TopKSet::contains(std::size_t i) const {
    return std::binary_search(indices.begin(), indices.end(), i);
}

double log_sum_exp(std::span<const double> z) {
    require(!z.empty(), "log_sum_exp: empty input");
    require_finite(z, "log_sum_exp");
    const double m = *std::max_element(z.begin(), z.end());
    double s = 0.0;
    for (double v : z) s += std::exp(v - m);
    return m + std::log(s);
}

Distribution softmax(std::span<const double> z) {
    require(!z.empty(), "softmax: empty input");
    require_finite(z, "softmax");
    const double m = *std::max_element(z.begin(), z.end());
    Distribution p(z.size());
    double s = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        p[i] = std::exp(z[i] - m);
        s += p[i];
    }
    for (double& v : p) v /= s;
    return p;
}

std::vector<double> log_softmax(std::span<const double> z) {
    const double lse = log_sum_exp(z);
    std::vector<double> out(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) out[i] = z[i] - lse;
    return out;
}

double entropy(std::span<const double> p) {
    double h = 0.0;
    for (double v : p) {
        if (v < 0.0 || std::isnan(v)) fail(ErrorCode::kInvalidInput, "entropy: negative probability");
        if (v > 0.0) h -= v * std::log(v);
    }
    return h;
}

double kl_divergence(std::span<const double> p, std::span<const double> q) {
    require(p.size() == q.size(), "kl_divergence: length mismatch");
    double kl = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] <= 0.0) continue;
        kl += p[i] * (std::log(p[i]) - std::log(std::max(q[i], kKlFloor)));
    }
    // Rounding can leave -1e-17 for p == q.
    return std::max(kl, 0.0);
}

TopKSet top_k_indices(std::span<const double> z, Budget k) {
    require(k.value() >= 1, "top_k_indices: k must be >= 1");
    const std::size_t n = k.resolve(z.size());
    std::vector<std::size_t> order(z.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto before = [&](std::size_t a, std::size_t b) {
        return z[a] > z[b] || (z[a] == z[b] && a < b);
    };
    if (n < order.size()) {
        std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n), order.end(), before);
        order.resize(n);
    }
    std::sort(order.begin(), order.end());
    return TopKSet{std::move(order), k.value()};
}

TopKSet top_k_indices(std::span<const double> z, std::size_t k) {
    return top_k_indices(z, Budget::of(k));
}

double restricted_entropy(std::span<const double> p, const TopKSet& s) {
    require(!s.indices.empty(), "restricted_entropy: empty index set");
    double mass = 0.0;
    for (std::size_t i : s.indices) {
        require(i < p.size(), "restricted_entropy: index out of range");
        mass += p[i];
    }
    if (!(mass > 0.0)) fail(ErrorCode::kUndefinedValue, "restricted_entropy: zero restricted mass");
    double h = 0.0;
    for (std::size_t i : s.indices) {
        const double q = p[i] / mass;
        if (q > 0.0) h -= q * std::log(q);
    }
    return h;
}

std::size_t argmax(std::span<const double> z) {
    require(!z.empty(), "argmax: empty input");
    std::size_t best = 0;
    for (std::size_t i = 1; i < z.size(); ++i) {
        if (z[i] > z[best]) best = i;
    }
    return best;
}

std::vector<double> finite_difference_gradient(const ScalarFunction& f,
                                               std::span<const double> z,
                                               double h) {
    require(h > 0.0, "finite_difference_gradient: step must be positive");
    std::vector<double> x(z.begin(), z.end());
    std::vector<double> g(z.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double saved = x[i];
        x[i] = saved + h;
        const double up = f(x);
        x[i] = saved - h;
        const double down = f(x);
        x[i] = saved;
        if (!std::isfinite(up) || !std::isfinite(down)) {
            fail(ErrorCode::kOracleFailure, "finite_difference_gradient: non-finite evaluation");
        }
        g[i] = (up - down) / (2.0 * h);
    }
    return g;
}

}  // namespace palu
