#include "ticketlab/featurespace.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <ostream>

namespace ticketlab {

namespace {

constexpr Template kFourP[] = {{1, 1, 1, 1}};
constexpr Template kThreeN1P[] = {{1, -1, -1, -1}, {-1, 1, -1, -1}, {-1, -1, 1, -1}, {-1, -1, -1, 1}};

}  // namespace

std::string to_string(Family f) { return f == Family::FourP ? "4P" : "3N1P"; }

Family parse_family(const std::string& name) {
    if (name == "4P") return Family::FourP;
    if (name == "3N1P") return Family::ThreeN1P;
    throw InputError("unknown template family '" + name + "'");
}

std::span<const Template> templates(Family f) {
    if (f == Family::FourP) return kFourP;
    return kThreeN1P;
}

const Template& template_of(Family f, std::size_t index) {
    auto ts = templates(f);
    if (index >= ts.size()) throw InputError("template index out of range for family");
    return ts[index];
}

std::optional<Family> row_family(double w2) {
    if (w2 > 0.0) return Family::FourP;
    if (w2 < 0.0) return Family::ThreeN1P;
    return std::nullopt;
}

Matrix compute_c1(const ModelParams& params) { return matmul(params.w1, params.embedding.c0); }

Matrix compute_masked_c1(const ModelParams& params, const Mask& mask) {
    if (mask.rows != params.w1.rows || mask.cols != params.w1.cols) throw InputError("mask shape does not match W1");
    Matrix w = params.w1;
    for (std::size_t k = 0; k < w.size(); ++k)
        if (!mask.bits[k]) w.data[k] = 0.0;
    return matmul(w, params.embedding.c0);
}

LocalVector local_vector(const Matrix& c1, const DnfTask& task, SiteKey site) {
    if (site.row >= c1.rows || site.clause >= task.clauses.size()) throw InputError("local_vector: invalid site");
    if (c1.cols != task.d_in) throw InputError("local_vector: C1 width does not match the task");
    const auto& clause = task.clauses[site.clause];
    LocalVector u;
    for (std::size_t r = 0; r < kClauseSize; ++r) u[r] = c1(site.row, clause[r]);
    return u;
}

int template_distance(const LocalVector& u, const Template& t, double tau) {
    int n = 0;
    for (std::size_t r = 0; r < kClauseSize; ++r)
        if (t[r] * u[r] < tau) ++n;
    return n;
}

double template_margin(const LocalVector& u, const Template& t) {
    double m = std::numeric_limits<double>::infinity();
    for (std::size_t r = 0; r < kClauseSize; ++r) m = std::min(m, t[r] * u[r]);
    return m;
}

int code_distance(const LocalVector& u, Family family, double tau) {
    int best = kClauseSize;
    for (const auto& t : templates(family)) best = std::min(best, template_distance(u, t, tau));
    return best;
}

double code_margin(const LocalVector& u, Family family) {
    double best = -std::numeric_limits<double>::infinity();
    for (const auto& t : templates(family)) best = std::max(best, template_margin(u, t));
    return best;
}

BestTemplate best_template(const LocalVector& u, Family family, double tau) {
    BestTemplate best;
    best.margin = -std::numeric_limits<double>::infinity();
    auto ts = templates(family);
    for (std::size_t i = 0; i < ts.size(); ++i) {
        const int dist = template_distance(u, ts[i], tau);
        const double marg = template_margin(u, ts[i]);
        if (dist < best.distance || (dist == best.distance && marg > best.margin)) best = {i, dist, marg};
    }
    return best;
}

Census census_of_c1(const Matrix& c1, std::span<const double> w2, const DnfTask& task, double tau) {
    if (w2.size() != c1.rows) throw InputError("census: W2 length does not match C1 rows");
    Census out;
    out.row_load.assign(c1.rows, 0);
    out.row_near_load.assign(c1.rows, 0);
    double margin_sum = 0.0;
    for (std::size_t h = 0; h < c1.rows; ++h) {
        auto fam = row_family(w2[h]);
        if (!fam) continue;
        for (std::size_t c = 0; c < task.clauses.size(); ++c) {
            const SiteKey key{h, c};
            const auto u = local_vector(c1, task, key);
            const auto bt = best_template(u, *fam, tau);
            const double margin = code_margin(u, *fam);
            out.sites.push_back({key, *fam, bt.index, bt.distance, margin});
            if (bt.distance <= 1) ++out.row_near_load[h];
            if (bt.distance == 0) {
                ++out.row_load[h];
                out.codes.push_back({key, *fam, bt.index});
                (*fam == Family::FourP ? out.count_4p : out.count_3n1p) += 1;
                margin_sum += margin;
            }
            int positives = 0;
            bool full = true;
            for (double v : u) {
                if (std::abs(v) < tau) full = false;
                if (v > 0) ++positives;
            }
            if (full && (positives == 0 || positives == 2 || positives == 3)) ++out.noncanonical;
        }
    }
    if (!out.codes.empty()) out.aligned_margin_mean = margin_sum / static_cast<double>(out.codes.size());
    return out;
}

Census census(const ModelParams& params, const DnfTask& task, double tau) {
    return census_of_c1(compute_c1(params), params.w2, task, tau);
}

FamilyMap family_map(const Census& census) {
    FamilyMap m;
    for (const auto& code : census.codes) m.insert({code.site.clause, code.family, code.template_index});
    return m;
}

FamilyMap family_map(const ModelParams& params, const DnfTask& task, double tau) {
    return family_map(census(params, task, tau));
}

std::vector<double> kappa(const Embedding& embedding, const Clause& clause, const Template& t) {
    const auto& c0 = embedding.c0;
    for (auto l : clause)
        if (l >= c0.cols) throw InputError("kappa: clause literal outside the embedding");
    std::vector<double> k(c0.rows, 0.0);
    for (std::size_t j = 0; j < c0.rows; ++j) {
        double acc = 0.0;
        for (std::size_t r = 0; r < kClauseSize; ++r) acc += t[r] * c0(j, clause[r]);
        k[j] = acc;
    }
    return k;
}

double q_score(const ModelParams& params, const DnfTask& task, const Mask* mask, SiteKey site, const Template& t,
               std::size_t top_k) {
    if (top_k < 1) throw ConfigError("q_score: topK must be at least 1");
    if (site.row >= params.hidden() || site.clause >= task.clauses.size()) throw InputError("q_score: invalid site");
    const auto k = kappa(params.embedding, task.clauses[site.clause], t);
    std::vector<double> contrib;
    contrib.reserve(k.size());
    for (std::size_t j = 0; j < k.size(); ++j) {
        if (mask && !(*mask)(site.row, j)) continue;
        contrib.push_back(std::abs(params.w1(site.row, j) * k[j]));
    }
    const std::size_t take = std::min(top_k, contrib.size());
    std::partial_sort(contrib.begin(), contrib.begin() + static_cast<std::ptrdiff_t>(take), contrib.end(),
                      std::greater<>());
    double sum = 0.0;
    for (std::size_t i = 0; i < take; ++i) sum += contrib[i];
    return sum;
}

std::set<SiteKey> visibility_set(const ModelParams& theta0, const Mask& mask, const FamilyMap& gstar,
                                 const DnfTask& task, const VisibilityParams& vp) {
    if (vp.radius < 0 || vp.radius > static_cast<int>(kClauseSize)) throw ConfigError("visibility radius must be in [0,4]");
    if (vp.eta < 0.0) throw ConfigError("visibility threshold eta must be nonnegative");
    const Matrix c1 = compute_masked_c1(theta0, mask);
    std::set<SiteKey> out;
    for (std::size_t h = 0; h < c1.rows; ++h) {
        for (const auto& entry : gstar) {
            if (entry.clause >= task.clauses.size()) throw InputError("family map refers to an unknown clause");
            const SiteKey key{h, entry.clause};
            if (out.contains(key)) continue;
            const auto& t = template_of(entry.family, entry.template_index);
            const auto u = local_vector(c1, task, key);
            if (template_distance(u, t, vp.tau) > vp.radius) continue;
            if (q_score(theta0, task, &mask, key, t, vp.top_k) >= vp.eta) out.insert(key);
        }
    }
    return out;
}

std::optional<std::vector<double>> near_fraction(std::span<const Matrix> c1_series, const DnfTask& task,
                                                 std::span<const SiteTarget> targets, int radius, double tau) {
    if (targets.empty()) return std::nullopt;
    std::vector<double> out;
    out.reserve(c1_series.size());
    for (const auto& c1 : c1_series) {
        std::size_t near = 0;
        for (const auto& t : targets) {
            const auto u = local_vector(c1, task, t.site);
            if (template_distance(u, template_of(t.family, t.template_index), tau) <= radius) ++near;
        }
        out.push_back(static_cast<double>(near) / static_cast<double>(targets.size()));
    }
    return out;
}

void write_census_csv_header(std::ostream& os) {
    os << "run_id,epoch,row,clause,family,template,distance,margin,qscore\n";
}

void write_census_csv(std::ostream& os, const std::string& run_id, int epoch, const ModelParams& params,
                      const DnfTask& task, const Census& census, const Mask* mask, std::size_t top_k) {
    const auto old_precision = os.precision(17);
    for (const auto& s : census.sites) {
        const double q = q_score(params, task, mask, s.site, template_of(s.family, s.template_index), top_k);
        os << run_id << ',' << epoch << ',' << s.site.row << ',' << s.site.clause << ',' << to_string(s.family) << ','
           << s.template_index << ',' << s.distance << ',' << s.margin << ',' << q << '\n';
    }
    os.precision(old_precision);
}

}  // namespace ticketlab
