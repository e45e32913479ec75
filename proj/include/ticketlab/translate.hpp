#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "ticketlab/detectors.hpp"

namespace ticketlab {

enum class TranslationVariant { SiteGreedy, RowAggregate, Orthogonalized, JointSigned, JointOmp };

std::string to_string(TranslationVariant v);
TranslationVariant parse_translation_variant(const std::string& name);

/// Per row, the row_budget(keep, d) highest scores, ties broken by lower column.
Mask mask_from_scores(const Matrix& scores, double keep_fraction);

/// Uniform row-wise mask with the exact budget.
Mask random_mask(std::size_t rows, std::size_t cols, double keep_fraction, std::uint64_t seed);

/// Sort orders used to build site rankings; both break ties by (row, clause).
void rank_lexicographic(std::vector<SiteScore>& sites);  // low distance, high margin, high q
void rank_by_composite(std::vector<SiteScore>& sites);   // high composite

struct TranslationOptions {
    double keep_fraction = 0.5;
    TranslationVariant variant = TranslationVariant::SiteGreedy;
    /// Coordinates claimed per visited site; 0 means the full row budget.
    std::size_t per_site_k = 0;
    /// Template-score target for the OMP residual.
    double tau = 0.1;
};

struct Translation {
    Mask mask;
    /// Rows that ran out of supporting coordinates and were completed by |W1|.
    std::vector<std::uint8_t> padded_rows;
};

/// Converts a ranked site list into a row-budgeted W1 mask. `params` supplies W1 and C0.
Translation sites_to_mask(std::span<const SiteScore> ranking, const ModelParams& params, const DnfTask& task,
                          const TranslationOptions& options);

/// `mask v1; h=<h>; d=<d>; keep=<f>` then one 0/1 line per row.
void write_mask(std::ostream& os, const Mask& mask);
Mask read_mask(std::istream& is);
void save_mask(const std::string& path, const Mask& mask);
Mask load_mask(const std::string& path);

}  // namespace ticketlab
