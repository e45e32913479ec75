#pragma once

#include <array>
#include <compare>
#include <iosfwd>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "ticketlab/model.hpp"

namespace ticketlab {

// Feature-space measurements on C1 = W1 C0 (h x d_in). A site is a
// (row, clause) pair; its local vector is the four C1 entries of the
// clause's literals on that row.

enum class Family { FourP, ThreeN1P };

std::string to_string(Family f);
Family parse_family(const std::string& name);

using Template = std::array<int, kClauseSize>;
using LocalVector = std::array<double, kClauseSize>;

/// FourP = {(+,+,+,+)}; ThreeN1P = the four vectors with a single +1, indexed by the position of the +1.
std::span<const Template> templates(Family f);
const Template& template_of(Family f, std::size_t index);

/// Positive output weight selects FourP, negative ThreeN1P, zero selects neither.
std::optional<Family> row_family(double w2);

struct SiteKey {
    std::size_t row = 0;
    std::size_t clause = 0;
    auto operator<=>(const SiteKey&) const = default;
};

struct CodeIdentity {
    SiteKey site;
    Family family = Family::FourP;
    std::size_t template_index = 0;
    auto operator<=>(const CodeIdentity&) const = default;
};

/// Row-forgetting projection of a code identity.
struct FamilyEntry {
    std::size_t clause = 0;
    Family family = Family::FourP;
    std::size_t template_index = 0;
    auto operator<=>(const FamilyEntry&) const = default;
};
using FamilyMap = std::set<FamilyEntry>;

Matrix compute_c1(const ModelParams& params);
/// (M (.) W1) C0 without touching `params`.
Matrix compute_masked_c1(const ModelParams& params, const Mask& mask);

LocalVector local_vector(const Matrix& c1, const DnfTask& task, SiteKey site);

/// Number of coordinates with t_r u_r < tau.
int template_distance(const LocalVector& u, const Template& t, double tau);
/// min_r t_r u_r
double template_margin(const LocalVector& u, const Template& t);

int code_distance(const LocalVector& u, Family family, double tau);
double code_margin(const LocalVector& u, Family family);

struct BestTemplate {
    std::size_t index = 0;
    int distance = kClauseSize;
    double margin = 0.0;
};
/// Lowest distance, then highest per-template margin, then lowest index.
BestTemplate best_template(const LocalVector& u, Family family, double tau);

struct SiteCensus {
    SiteKey site;
    Family family = Family::FourP;
    std::size_t template_index = 0;  // best template
    int distance = kClauseSize;      // d_tau against the row family
    double margin = 0.0;             // m against the row family
};

struct Census {
    std::vector<SiteCensus> sites;  // every site on a row with a family, row-major
    std::vector<CodeIdentity> codes;
    std::size_t count_4p = 0;
    std::size_t count_3n1p = 0;
    double aligned_margin_mean = 0.0;  // over exact codes, 0 when there are none
    std::vector<std::size_t> row_load;
    std::vector<std::size_t> row_near_load;
    /// Sites whose full-magnitude sign pattern is 3P1N, 2P2N or 4N. Never counted as aligned.
    std::size_t noncanonical = 0;

    std::size_t code_count() const { return codes.size(); }
};

Census census(const ModelParams& params, const DnfTask& task, double tau);
Census census_of_c1(const Matrix& c1, std::span<const double> w2, const DnfTask& task, double tau);

FamilyMap family_map(const Census& census);
FamilyMap family_map(const ModelParams& params, const DnfTask& task, double tau);

/// kappa[j] = sum_r t_r C0[j, clause[r]], so that sum_j W1[h,j] kappa[j] = sum_r t_r C1[h, clause[r]].
std::vector<double> kappa(const Embedding& embedding, const Clause& clause, const Template& t);

/// Sum of the topK largest |W1[h,j] kappa[j]| over surviving coordinates. A null mask keeps everything.
double q_score(const ModelParams& params, const DnfTask& task, const Mask* mask, SiteKey site, const Template& t,
               std::size_t top_k);

struct VisibilityParams {
    int radius = 1;
    double eta = 0.05;
    double tau = 0.1;
    std::size_t top_k = 4;
};

/// Sites of (M (.) W1_0) C0 within `radius` of some target-family template
/// for their clause whose contribution score reaches `eta`.
std::set<SiteKey> visibility_set(const ModelParams& theta0, const Mask& mask, const FamilyMap& gstar,
                                 const DnfTask& task, const VisibilityParams& vp);

struct SiteTarget {
    SiteKey site;
    Family family = Family::FourP;
    std::size_t template_index = 0;
    auto operator<=>(const SiteTarget&) const = default;
};

/// Per matrix in the series, fraction of targets within `radius` of their
/// template. Empty target set yields no value.
std::optional<std::vector<double>> near_fraction(std::span<const Matrix> c1_series, const DnfTask& task,
                                                 std::span<const SiteTarget> targets, int radius, double tau);

/// Columns: run_id,epoch,row,clause,family,template,distance,margin,qscore
void write_census_csv_header(std::ostream& os);
void write_census_csv(std::ostream& os, const std::string& run_id, int epoch, const ModelParams& params,
                      const DnfTask& task, const Census& census, const Mask* mask, std::size_t top_k);

}  // namespace ticketlab
