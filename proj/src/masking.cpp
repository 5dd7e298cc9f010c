#include "palu/masking.hpp"

#include "palu/error.hpp"

namespace palu {

std::vector<Span> extract_spans(const SensitivityMask& mask) {
    std::vector<Span> spans;
    const std::size_t n = mask.size();
    std::size_t t = 0;
    while (t < n) {
        if (!mask.sensitive(t)) {
            ++t;
            continue;
        }
        Span s{t, t};
        while (s.end + 1 < n && mask.sensitive(s.end + 1)) ++s.end;
        spans.push_back(s);
        t = s.end + 1;
    }
    return spans;
}

std::vector<std::size_t> select_initiating(const std::vector<Span>& spans, Budget n) {
    require(n.value() >= 1, "select_initiating: budget must be >= 1");
    std::vector<std::size_t> out;
    for (const Span& s : spans) {
        require(s.start <= s.end, "select_initiating: malformed span");
        const std::size_t take = n.resolve(s.length());
        for (std::size_t i = 0; i < take; ++i) out.push_back(s.start + i);
    }
    return out;
}

TokenPartition partition_tokens(const SensitivityMask& mask, Budget n) {
    for (std::uint8_t b : mask.bits) require(b <= 1, "partition_tokens: mask bits must be 0 or 1");
    TokenPartition part;
    part.n_budget = n;
    part.initiating = select_initiating(extract_spans(mask), n);
    part.roles.assign(mask.size(), TokenRole::kCommon);
    for (std::size_t t : part.initiating) part.roles[t] = TokenRole::kInitiating;
    for (std::size_t t = 0; t < mask.size(); ++t) {
        if (!mask.sensitive(t)) {
            part.common.push_back(t);
        } else if (part.roles[t] != TokenRole::kInitiating) {
            part.roles[t] = TokenRole::kRedundant;
            part.redundant.push_back(t);
        }
    }
    return part;
}

}  // namespace palu
