#pragma once

// Sensitivity masks and the three-way token partition: initiating targets
// (first N tokens of each sensitive span), common tokens, and redundant
// sensitive tokens.

#include <cstddef>
#include <cstdint>
#include <vector>

#include "palu/numerics.hpp"

namespace palu {

// One bit per response token; 1 marks a sensitive token.
struct SensitivityMask {
    std::vector<std::uint8_t> bits;

    std::size_t size() const { return bits.size(); }
    bool sensitive(std::size_t t) const { return bits[t] != 0; }
    friend bool operator==(const SensitivityMask&, const SensitivityMask&) = default;
};

// Maximal run of sensitive tokens, inclusive on both ends.
struct Span {
    std::size_t start = 0;
    std::size_t end = 0;

    std::size_t length() const { return end - start + 1; }
    friend bool operator==(const Span&, const Span&) = default;
};

enum class TokenRole : std::uint8_t { kCommon = 0, kInitiating = 1, kRedundant = 2 };

struct TokenPartition {
    std::vector<std::size_t> initiating;
    std::vector<std::size_t> common;
    std::vector<std::size_t> redundant;
    std::vector<TokenRole> roles;  // per position
    Budget n_budget = Budget::all();

    std::size_t size() const { return roles.size(); }
};

std::vector<Span> extract_spans(const SensitivityMask& mask);

// Sorted ascending. Throws on n == 0.
std::vector<std::size_t> select_initiating(const std::vector<Span>& spans, Budget n);

TokenPartition partition_tokens(const SensitivityMask& mask, Budget n);

}  // namespace palu
