#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "damgt/error.hpp"
#include "damgt/tensor.hpp"

namespace damgt {

// Attention mask variants over the (S+1) x (S+1) score grid. "full" is the
// star+diagonal pattern: first row, first column and diagonal (3S+1 entries);
// h/v/d drop one of those components; "none" disables masking entirely.
enum class MaskVariant { full, none, h, v, d };

inline std::string to_string(MaskVariant v) {
    switch (v) {
        case MaskVariant::full: return "full";
        case MaskVariant::none: return "none";
        case MaskVariant::h: return "h";
        case MaskVariant::v: return "v";
        case MaskVariant::d: return "d";
    }
    return "full";
}

inline MaskVariant parse_mask_variant(const std::string& s) {
    if (s == "full") return MaskVariant::full;
    if (s == "none") return MaskVariant::none;
    if (s == "h") return MaskVariant::h;
    if (s == "v") return MaskVariant::v;
    if (s == "d") return MaskVariant::d;
    throw ConfigError("unknown mask variant \"" + s + "\" (expected full|none|h|v|d)");
}

struct AttentionPattern {
    std::size_t max_hop = 0;  // S
    MaskVariant variant = MaskVariant::full;
    Mask2D mask;

    std::size_t extent() const { return max_hop + 1; }

    bool allows(std::size_t i, std::size_t j) const { return mask.at(i, j); }

    std::size_t allowed_count() const {
        std::size_t c = 0;
        for (auto b : mask.allowed) c += b != 0;
        return c;
    }

    std::vector<std::pair<std::size_t, std::size_t>> allowed_pairs() const {
        std::vector<std::pair<std::size_t, std::size_t>> out;
        for (std::size_t i = 0; i < mask.rows; ++i) {
            for (std::size_t j = 0; j < mask.cols; ++j) {
                if (mask.at(i, j)) out.emplace_back(i, j);
            }
        }
        return out;
    }

    bool is_star_diagonal() const { return variant == MaskVariant::full; }
};

inline AttentionPattern build_mask(std::size_t s, MaskVariant variant) {
    if (s < 1) throw ConfigError("mask pattern needs S >= 1");
    AttentionPattern p;
    p.max_hop = s;
    p.variant = variant;
    const std::size_t t = s + 1;
    p.mask.rows = t;
    p.mask.cols = t;
    p.mask.allowed.assign(t * t, 0);
    for (std::size_t i = 0; i < t; ++i) {
        for (std::size_t j = 0; j < t; ++j) {
            bool keep = false;
            switch (variant) {
                case MaskVariant::full: keep = i * j == 0 || i == j; break;
                case MaskVariant::none: keep = true; break;
                case MaskVariant::h: keep = j == 0 || i == j; break;
                case MaskVariant::v: keep = i == 0 || i == j; break;
                case MaskVariant::d: keep = i == 0 || j == 0; break;
            }
            p.mask.allowed[i * t + j] = keep ? 1 : 0;
        }
    }
    return p;
}

}  // namespace damgt
