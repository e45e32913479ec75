#include "ticketlab/translate.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "ticketlab/rng.hpp"

namespace ticketlab {

namespace {

struct Candidate {
    std::size_t col;
    double value;
};

/// Descending by value, then ascending column.
void sort_candidates(std::vector<Candidate>& cs) {
    std::sort(cs.begin(), cs.end(), [](const Candidate& a, const Candidate& b) {
        if (a.value != b.value) return a.value > b.value;
        return a.col < b.col;
    });
}

/// Fills what is left of `row` by |W1| and reports whether padding happened.
bool pad_row(Mask& mask, std::size_t row, std::size_t budget, const ModelParams& params) {
    std::size_t have = mask.row_count(row);
    if (have >= budget) return false;
    std::vector<Candidate> cs;
    for (std::size_t j = 0; j < mask.cols; ++j)
        if (!mask(row, j)) cs.push_back({j, std::abs(params.w1(row, j))});
    sort_candidates(cs);
    for (std::size_t i = 0; have < budget && i < cs.size(); ++i, ++have) mask.set(row, cs[i].col, true);
    return true;
}

std::vector<std::vector<const SiteScore*>> sites_by_row(std::span<const SiteScore> ranking, std::size_t rows) {
    std::vector<std::vector<const SiteScore*>> by_row(rows);
    for (const auto& s : ranking) {
        if (s.site.row >= rows) throw InputError("ranking refers to a row outside W1");
        by_row[s.site.row].push_back(&s);
    }
    return by_row;
}

std::vector<double> site_kappa(const ModelParams& params, const DnfTask& task, const SiteScore& s) {
    if (s.site.clause >= task.clauses.size()) throw InputError("ranking refers to an unknown clause");
    return kappa(params.embedding, task.clauses[s.site.clause], template_of(s.family, s.best_template));
}

/// Takes up to `quota` of the best positive-valued unselected candidates.
void claim(Mask& mask, std::size_t row, std::vector<Candidate> cs, std::size_t quota, std::size_t budget) {
    sort_candidates(cs);
    std::size_t have = mask.row_count(row);
    std::size_t taken = 0;
    for (const auto& c : cs) {
        if (have >= budget || taken >= quota) break;
        if (!(c.value > 0.0) || mask(row, c.col)) continue;
        mask.set(row, c.col, true);
        ++have;
        ++taken;
    }
}

void greedy_row(Mask& mask, std::size_t row, const std::vector<const SiteScore*>& sites, const ModelParams& params,
                const DnfTask& task, std::size_t budget, std::size_t quota, bool signed_values) {
    for (const auto* s : sites) {
        if (mask.row_count(row) >= budget) break;
        const auto k = site_kappa(params, task, *s);
        std::vector<Candidate> cs;
        for (std::size_t j = 0; j < mask.cols; ++j) {
            const double v = params.w1(row, j) * k[j];
            cs.push_back({j, signed_values ? v : std::abs(v)});
        }
        claim(mask, row, std::move(cs), quota, budget);
    }
}

void aggregate_row(Mask& mask, std::size_t row, const std::vector<const SiteScore*>& sites,
                   std::span<const SiteScore> ranking, const ModelParams& params, const DnfTask& task,
                   std::size_t budget) {
    const double n = static_cast<double>(ranking.size());
    std::vector<double> acc(mask.cols, 0.0);
    for (const auto* s : sites) {
        const double pos = static_cast<double>(s - ranking.data());
        const double weight = (n - pos) / n;
        const auto k = site_kappa(params, task, *s);
        for (std::size_t j = 0; j < mask.cols; ++j) acc[j] += weight * std::abs(params.w1(row, j) * k[j]);
    }
    std::vector<Candidate> cs;
    for (std::size_t j = 0; j < mask.cols; ++j) cs.push_back({j, acc[j]});
    claim(mask, row, std::move(cs), budget, budget);
}

void orthogonalized_row(Mask& mask, std::size_t row, const std::vector<const SiteScore*>& sites,
                        const ModelParams& params, const DnfTask& task, std::size_t budget, std::size_t quota) {
    std::vector<std::vector<double>> basis;
    for (const auto* s : sites) {
        if (mask.row_count(row) >= budget) break;
        auto k = site_kappa(params, task, *s);
        for (const auto& q : basis) {
            const double proj = std::inner_product(q.begin(), q.end(), k.begin(), 0.0);
            for (std::size_t j = 0; j < k.size(); ++j) k[j] -= proj * q[j];
        }
        const double norm = std::sqrt(std::inner_product(k.begin(), k.end(), k.begin(), 0.0));
        if (norm < 1e-12) continue;
        std::vector<Candidate> cs;
        for (std::size_t j = 0; j < mask.cols; ++j) cs.push_back({j, std::abs(params.w1(row, j) * k[j])});
        claim(mask, row, std::move(cs), quota, budget);
        for (auto& v : k) v /= norm;
        basis.push_back(std::move(k));
    }
}

void omp_row(Mask& mask, std::size_t row, const std::vector<const SiteScore*>& sites, const ModelParams& params,
             const DnfTask& task, std::size_t budget, double tau) {
    if (sites.empty()) return;
    const std::size_t claimed = std::min(sites.size(), std::max<std::size_t>(1, (budget + kClauseSize - 1) / kClauseSize));
    std::vector<std::vector<double>> contrib;  // per claimed site, W1[row,j] * kappa[j]
    for (std::size_t i = 0; i < claimed; ++i) {
        const auto k = site_kappa(params, task, *sites[i]);
        std::vector<double> c(mask.cols);
        for (std::size_t j = 0; j < mask.cols; ++j) c[j] = params.w1(row, j) * k[j];
        contrib.push_back(std::move(c));
    }
    std::vector<double> score(claimed, 0.0);
    auto deficit = [&](std::size_t j) {
        double total = 0.0;
        for (std::size_t i = 0; i < claimed; ++i) {
            const double gap = std::max(0.0, tau - (score[i] + contrib[i][j]));
            total += gap * gap;
        }
        return total;
    };
    while (mask.row_count(row) < budget) {
        std::size_t best = mask.cols;
        double best_def = 0.0, best_support = 0.0;
        for (std::size_t j = 0; j < mask.cols; ++j) {
            if (mask(row, j)) continue;
            const double def = deficit(j);
            double support = 0.0;
            for (std::size_t i = 0; i < claimed; ++i) support += std::abs(contrib[i][j]);
            if (best == mask.cols || def < best_def || (def == best_def && support > best_support)) {
                best = j;
                best_def = def;
                best_support = support;
            }
        }
        if (best == mask.cols || best_support == 0.0) break;
        mask.set(row, best, true);
        for (std::size_t i = 0; i < claimed; ++i) score[i] += contrib[i][best];
    }
}

}  // namespace

std::string to_string(TranslationVariant v) {
    switch (v) {
        case TranslationVariant::SiteGreedy: return "site_greedy";
        case TranslationVariant::RowAggregate: return "row_aggregate";
        case TranslationVariant::Orthogonalized: return "orthogonalized";
        case TranslationVariant::JointSigned: return "joint_signed";
        case TranslationVariant::JointOmp: return "joint_omp";
    }
    return "?";
}

TranslationVariant parse_translation_variant(const std::string& name) {
    for (auto v : {TranslationVariant::SiteGreedy, TranslationVariant::RowAggregate, TranslationVariant::Orthogonalized,
                   TranslationVariant::JointSigned, TranslationVariant::JointOmp})
        if (to_string(v) == name) return v;
    throw ConfigError("unknown translation variant '" + name + "'");
}

Mask mask_from_scores(const Matrix& scores, double keep_fraction) {
    const std::size_t budget = row_budget(keep_fraction, scores.cols);
    Mask mask(scores.rows, scores.cols, keep_fraction, false);
    std::vector<Candidate> cs;
    for (std::size_t r = 0; r < scores.rows; ++r) {
        cs.clear();
        for (std::size_t j = 0; j < scores.cols; ++j) cs.push_back({j, scores(r, j)});
        sort_candidates(cs);
        for (std::size_t i = 0; i < budget; ++i) mask.set(r, cs[i].col, true);
    }
    return mask;
}

Mask random_mask(std::size_t rows, std::size_t cols, double keep_fraction, std::uint64_t seed) {
    const std::size_t budget = row_budget(keep_fraction, cols);
    Mask mask(rows, cols, keep_fraction, false);
    Rng rng(derive_seed(seed, "random_mask"));
    std::vector<std::size_t> idx(cols);
    for (std::size_t r = 0; r < rows; ++r) {
        std::iota(idx.begin(), idx.end(), 0);
        std::shuffle(idx.begin(), idx.end(), rng.engine());
        for (std::size_t i = 0; i < budget; ++i) mask.set(r, idx[i], true);
    }
    return mask;
}

void rank_lexicographic(std::vector<SiteScore>& sites) {
    std::stable_sort(sites.begin(), sites.end(), [](const SiteScore& a, const SiteScore& b) {
        if (a.distance != b.distance) return a.distance < b.distance;
        if (a.margin != b.margin) return a.margin > b.margin;
        if (a.q != b.q) return a.q > b.q;
        return a.site < b.site;
    });
}

void rank_by_composite(std::vector<SiteScore>& sites) {
    std::stable_sort(sites.begin(), sites.end(), [](const SiteScore& a, const SiteScore& b) {
        if (a.composite != b.composite) return a.composite > b.composite;
        return a.site < b.site;
    });
}

Translation sites_to_mask(std::span<const SiteScore> ranking, const ModelParams& params, const DnfTask& task,
                          const TranslationOptions& opt) {
    const std::size_t rows = params.hidden();
    const std::size_t cols = params.dim();
    const std::size_t budget = row_budget(opt.keep_fraction, cols);
    Translation out{Mask(rows, cols, opt.keep_fraction, false), std::vector<std::uint8_t>(rows, 0)};
    if (budget == cols) {
        out.mask = Mask(rows, cols, opt.keep_fraction, true);
        return out;
    }
    const std::size_t quota = opt.per_site_k == 0 ? budget : opt.per_site_k;
    const auto by_row = sites_by_row(ranking, rows);
    for (std::size_t r = 0; r < rows; ++r) {
        switch (opt.variant) {
            case TranslationVariant::SiteGreedy:
                greedy_row(out.mask, r, by_row[r], params, task, budget, quota, false);
                break;
            case TranslationVariant::JointSigned:
                greedy_row(out.mask, r, by_row[r], params, task, budget, quota, true);
                break;
            case TranslationVariant::RowAggregate:
                aggregate_row(out.mask, r, by_row[r], ranking, params, task, budget);
                break;
            case TranslationVariant::Orthogonalized:
                orthogonalized_row(out.mask, r, by_row[r], params, task, budget, quota);
                break;
            case TranslationVariant::JointOmp:
                omp_row(out.mask, r, by_row[r], params, task, budget, opt.tau);
                break;
        }
        out.padded_rows[r] = pad_row(out.mask, r, budget, params) ? 1 : 0;
    }
    validate_row_budget(out.mask);
    return out;
}

void write_mask(std::ostream& os, const Mask& mask) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, mask.keep_fraction);
    os << "mask v1; h=" << mask.rows << "; d=" << mask.cols << "; keep=" << std::string(buf, res.ptr) << '\n';
    for (std::size_t r = 0; r < mask.rows; ++r) {
        for (std::size_t j = 0; j < mask.cols; ++j) os << (mask(r, j) ? '1' : '0');
        os << '\n';
    }
}

Mask read_mask(std::istream& is) {
    std::string header;
    if (!std::getline(is, header) || header.rfind("mask v1;", 0) != 0) throw InputError("not a mask v1 file");
    std::size_t h = 0, d = 0;
    double keep = -1.0;
    std::istringstream fields(header.substr(8));
    std::string field;
    while (std::getline(fields, field, ';')) {
        auto eq = field.find('=');
        if (eq == std::string::npos) continue;
        std::string key = field.substr(0, eq);
        key.erase(0, key.find_first_not_of(' '));
        const std::string value = field.substr(eq + 1);
        if (key == "h") h = std::stoul(value);
        else if (key == "d") d = std::stoul(value);
        else if (key == "keep") {
            auto r = std::from_chars(value.data(), value.data() + value.size(), keep);
            if (r.ec != std::errc{}) throw InputError("bad keep fraction in mask header");
        } else throw InputError("unknown mask header field '" + key + "'");
    }
    if (h == 0 || d == 0 || keep <= 0.0) throw InputError("incomplete mask header");
    Mask mask(h, d, keep, false);
    std::string line;
    for (std::size_t r = 0; r < h; ++r) {
        if (!std::getline(is, line) || line.size() != d) throw InputError("mask row " + std::to_string(r) + " malformed");
        for (std::size_t j = 0; j < d; ++j) {
            if (line[j] != '0' && line[j] != '1') throw InputError("mask rows may only contain 0 and 1");
            mask.set(r, j, line[j] == '1');
        }
    }
    // A file whose rows disagree with its own keep header is corrupt.
    validate_row_budget(mask);
    return mask;
}

void save_mask(const std::string& path, const Mask& mask) {
    std::ofstream os(path);
    if (!os) throw InputError("cannot open " + path + " for writing");
    write_mask(os, mask);
}

Mask load_mask(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw InputError("cannot open mask " + path);
    return read_mask(is);
}

}  // namespace ticketlab
