#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "degboot/error.hpp"
#include "degboot/rng.hpp"

namespace degboot {

/// How bootstrap samples are drawn from the rows of the data.
struct BootstrapScheme {
    enum class Kind { iid_multinomial, moving_block };

    Kind kind = Kind::iid_multinomial;
    std::optional<std::size_t> block_len;

    static BootstrapScheme iid() { return {}; }
    static BootstrapScheme moving_block(std::size_t len) { return {Kind::moving_block, len}; }

    /// Block length used for robustness runs when none is given: ceil(T^{1/3}).
    static std::size_t default_block_len(std::size_t t) {
        return static_cast<std::size_t>(std::ceil(std::cbrt(static_cast<double>(t)) - 1e-12));
    }

    void validate() const {
        if (kind == Kind::moving_block) {
            detail::require(block_len.has_value(), "moving-block bootstrap needs a block length");
            detail::require(*block_len >= 1, "block length must be at least 1");
        }
    }

    [[nodiscard]] std::string describe() const {
        if (kind == Kind::iid_multinomial) return "iid";
        return "block:" + std::to_string(block_len.value_or(0));
    }

    /// Parses "iid" or "block:<len>".
    static BootstrapScheme parse(const std::string& text) {
        if (text == "iid") return iid();
        if (text.rfind("block:", 0) == 0) {
            const std::string len = text.substr(6);
            std::size_t pos = 0;
            long long value = 0;
            try {
                value = std::stoll(len, &pos);
            } catch (const std::exception&) {
                throw ValidationError("bad block length in scheme '" + text + "'");
            }
            detail::require(pos == len.size() && value >= 1, "bad block length in scheme '" + text + "'");
            return moving_block(static_cast<std::size_t>(value));
        }
        throw ValidationError("unknown bootstrap scheme '" + text + "' (expected iid or block:<len>)");
    }
};

/**
 * Row indices of one bootstrap sample of size t.
 *
 * iid: t uniform draws from {0..t-1}. moving_block: overlapping blocks of
 * block_len consecutive rows, block starts uniform on {0..t-block_len},
 * concatenated and truncated to t.
 */
inline std::vector<std::size_t> resample_indices(const BootstrapScheme& scheme, std::size_t t, RandomStream& rng) {
    scheme.validate();
    detail::require(t >= 1, "resample: t must be at least 1");
    std::vector<std::size_t> idx;
    idx.reserve(t);
    if (scheme.kind == BootstrapScheme::Kind::iid_multinomial) {
        for (std::size_t i = 0; i < t; ++i) idx.push_back(static_cast<std::size_t>(rng.index(t)));
        return idx;
    }
    const std::size_t len = *scheme.block_len;
    detail::require(len <= t, "resample: block length exceeds sample size");
    const std::size_t starts = t - len + 1;
    while (idx.size() < t) {
        const auto start = static_cast<std::size_t>(rng.index(starts));
        for (std::size_t j = 0; j < len && idx.size() < t; ++j) idx.push_back(start + j);
    }
    return idx;
}

}  // namespace degboot
