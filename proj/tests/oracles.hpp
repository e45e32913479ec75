#pragma once

// Independent reference implementations. Written as plain loops on purpose:
// nothing here calls the library routine it is used to check.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <vector>

#include "ticketlab/featurespace.hpp"
#include "ticketlab/model.hpp"
#include "ticketlab/rng.hpp"
#include "ticketlab/task.hpp"

namespace oracle {

using namespace ticketlab;

inline double naive_logit(const ModelParams& p, std::span<const std::uint8_t> x) {
    const std::size_t d = p.embedding.c0.rows, din = p.embedding.c0.cols, h = p.w1.rows;
    std::vector<double> xe(d, 0.0);
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < din; ++j) xe[i] += p.embedding.c0(i, j) * x[j];
    double z = p.b2;
    for (std::size_t r = 0; r < h; ++r) {
        double a = p.b1[r];
        for (std::size_t i = 0; i < d; ++i) a += p.w1(r, i) * xe[i];
        z += p.w2[r] * std::max(0.0, a);
    }
    return z;
}

inline double naive_loss(const ModelParams& p, const Dataset& data, std::span<const std::size_t> idx) {
    double s = 0.0;
    for (auto i : idx) {
        const double z = naive_logit(p, data.row(i));
        const double y = data.labels[i];
        // log(1 + e^z) - y z, evaluated stably
        s += std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))) - y * z;
    }
    return s / static_cast<double>(idx.size());
}

inline Matrix naive_c1(const ModelParams& p) {
    Matrix c(p.w1.rows, p.embedding.c0.cols);
    for (std::size_t r = 0; r < p.w1.rows; ++r)
        for (std::size_t j = 0; j < p.embedding.c0.cols; ++j)
            for (std::size_t i = 0; i < p.w1.cols; ++i) c(r, j) += p.w1(r, i) * p.embedding.c0(i, j);
    return c;
}

/// Pointers to every trainable scalar, in a fixed order.
inline std::vector<double*> trainable_scalars(ModelParams& p) {
    std::vector<double*> out;
    if (p.embedding.trainable)
        for (auto& v : p.embedding.c0.data) out.push_back(&v);
    for (auto& v : p.w1.data) out.push_back(&v);
    for (auto& v : p.b1) out.push_back(&v);
    for (auto& v : p.w2) out.push_back(&v);
    out.push_back(&p.b2);
    return out;
}

inline std::vector<double> flat_grads(const Gradients& g, bool with_c0) {
    std::vector<double> out;
    if (with_c0) out.insert(out.end(), g.c0.data.begin(), g.c0.data.end());
    out.insert(out.end(), g.w1.data.begin(), g.w1.data.end());
    out.insert(out.end(), g.b1.begin(), g.b1.end());
    out.insert(out.end(), g.w2.begin(), g.w2.end());
    out.push_back(g.b2);
    return out;
}

/// Central-difference gradient of the naive loss over every trainable scalar.
inline std::vector<double> fd_gradient(ModelParams p, const Dataset& data, std::span<const std::size_t> idx,
                                       double eps = 1e-5) {
    auto slots = trainable_scalars(p);
    std::vector<double> g(slots.size());
    for (std::size_t k = 0; k < slots.size(); ++k) {
        const double keep = *slots[k];
        *slots[k] = keep + eps;
        const double up = naive_loss(p, data, idx);
        *slots[k] = keep - eps;
        const double down = naive_loss(p, data, idx);
        *slots[k] = keep;
        g[k] = (up - down) / (2.0 * eps);
    }
    return g;
}

/// |a - b| / max(|a|, |b|, floor). The floor keeps entries that are zero up to
/// finite-difference noise from dominating.
inline double relative_error(double a, double b, double floor = 1e-6) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

struct GradCheck {
    double max_rel = 0.0;
    std::size_t entries = 0;
};

/// One random (params, batch) draw: a small model with nonzero biases on a random task.
inline GradCheck gradient_check_draw(std::uint64_t seed) {
    Rng rng(derive_seed(seed, "gradcheck"));
    const std::size_t din = 8;
    const auto kind = static_cast<EmbeddingKind>(seed % 4);
    auto params = init_params(make_embedding(kind, din, seed), 6, seed);
    for (auto& b : params.b1) b = rng.normal(0.3);
    params.b2 = rng.normal(0.3);
    const auto task = generate_dnf(2, din, OverlapMode::Overlapping, seed);
    const auto data = sample_dataset(task, 24, seed);
    std::vector<std::size_t> idx(data.n);
    std::iota(idx.begin(), idx.end(), 0);
    const auto analytic = flat_grads(loss_and_grads(params, data, idx).grads, params.embedding.trainable);
    const auto numeric = fd_gradient(params, data, idx);
    GradCheck out;
    out.entries = analytic.size();
    for (std::size_t k = 0; k < analytic.size(); ++k)
        out.max_rel = std::max(out.max_rel, relative_error(analytic[k], numeric[k]));
    return out;
}

/// d_tau by enumerating the family's templates.
inline int enum_distance(const LocalVector& u, Family f, double tau) {
    int best = 99;
    for (const auto& t : (f == Family::FourP ? std::vector<Template>{{1, 1, 1, 1}}
                                             : std::vector<Template>{{1, -1, -1, -1},
                                                                     {-1, 1, -1, -1},
                                                                     {-1, -1, 1, -1},
                                                                     {-1, -1, -1, 1}})) {
        int d = 0;
        for (std::size_t r = 0; r < 4; ++r) d += (t[r] * u[r] < tau) ? 1 : 0;
        best = std::min(best, d);
    }
    return best;
}

inline double enum_margin(const LocalVector& u, Family f) {
    double best = -1e300;
    for (const auto& t : (f == Family::FourP ? std::vector<Template>{{1, 1, 1, 1}}
                                             : std::vector<Template>{{1, -1, -1, -1},
                                                                     {-1, 1, -1, -1},
                                                                     {-1, -1, 1, -1},
                                                                     {-1, -1, -1, 1}})) {
        double m = 1e300;
        for (std::size_t r = 0; r < 4; ++r) m = std::min(m, t[r] * u[r]);
        best = std::max(best, m);
    }
    return best;
}

/// Every u in values^4.
inline std::vector<LocalVector> grid4(const std::vector<double>& values) {
    std::vector<LocalVector> out;
    for (double a : values)
        for (double b : values)
            for (double c : values)
                for (double d : values) out.push_back({a, b, c, d});
    return out;
}

struct NonRestriction {
    ModelParams params;
    Mask mask;
    DnfTask task;
    double tau = 0.1;
};

/// C0 = H8 / sqrt(8), clause [0,1,2,3], one hidden row w = 0.5 e0 + 0.4 e5.
/// Dense local vector: (0.9, 0.1, 0.9, 0.1) / sqrt(8), two defects against 4P.
/// Masking W1 coordinate 5 (not a literal of the clause) leaves 0.5 / sqrt(8)
/// on all four literals, an exact 4P code.
inline NonRestriction make_nonrestriction_instance() {
    NonRestriction nr;
    nr.params.embedding = make_embedding(EmbeddingKind::Hadamard, 8, 0);
    nr.params.w1 = Matrix(1, 8);
    nr.params.w1(0, 0) = 0.5;
    nr.params.w1(0, 5) = 0.4;
    nr.params.b1 = {0.0};
    nr.params.w2 = {1.0};
    nr.task = DnfTask{{Clause{0, 1, 2, 3}}, 8, OverlapMode::Overlapping};
    nr.mask = Mask(1, 8, 0.875, true);
    nr.mask.set(0, 5, false);
    return nr;
}

/// SynFlow oracle on the absolute-value network with all-ones input: every
/// input-to-output path (j -> i -> r) contributes |C0[i,j]| |W1[r,i]| |w2[r]| to
/// the edge (r,i) it crosses in the first trainable layer.
inline Matrix synflow_paths(const ModelParams& p) {
    const std::size_t h = p.w1.rows, d = p.w1.cols, din = p.embedding.c0.cols;
    Matrix s(h, d);
    for (std::size_t j = 0; j < din; ++j)
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t r = 0; r < h; ++r)
                s(r, i) += std::abs(p.embedding.c0(i, j)) * std::abs(p.w1(r, i)) * std::abs(p.w2[r]);
    return s;
}

/// Rows with some pre-activation within `margin` of the ReLU kink. Central
/// differences are not a valid oracle there.
inline std::vector<bool> near_kink_rows(const ModelParams& p, const Dataset& data, std::span<const std::size_t> idx,
                                        double margin) {
    const std::size_t d = p.embedding.c0.rows, din = p.embedding.c0.cols;
    std::vector<bool> out(p.w1.rows, false);
    for (auto i : idx) {
        const auto x = data.row(i);
        std::vector<double> xe(d, 0.0);
        for (std::size_t a = 0; a < d; ++a)
            for (std::size_t j = 0; j < din; ++j) xe[a] += p.embedding.c0(a, j) * x[j];
        for (std::size_t r = 0; r < p.w1.rows; ++r) {
            double pre = p.b1[r];
            for (std::size_t a = 0; a < d; ++a) pre += p.w1(r, a) * xe[a];
            if (std::abs(pre) < margin) out[r] = true;
        }
    }
    return out;
}

/// Template score S = sum_r t_r u_r read off the naive C1.
inline double naive_template_score(const ModelParams& p, const DnfTask& task, SiteKey site, const Template& t) {
    const auto c1 = naive_c1(p);
    double s = 0.0;
    for (std::size_t r = 0; r < 4; ++r) s += t[r] * c1(site.row, task.clauses[site.clause][r]);
    return s;
}

/// Largest |dS - delta kappa[j]| over `trials` random single-coordinate bumps of W1.
inline double kappa_perturbation_error(std::uint64_t seed, int trials) {
    Rng rng(derive_seed(seed, "kappa-bumps"));
    double worst = 0.0;
    for (int i = 0; i < trials; ++i) {
        const auto kind = static_cast<EmbeddingKind>(rng.index(4));
        auto p = init_params(make_embedding(kind, 16, seed + i), 8, seed + i);
        const auto task = generate_dnf(8, 16, OverlapMode::Overlapping, seed + i);
        const SiteKey site{rng.index(8), rng.index(task.clauses.size())};
        const Family fam = rng.coin() ? Family::FourP : Family::ThreeN1P;
        const auto& tpl = templates(fam)[rng.index(templates(fam).size())];
        const std::size_t j = rng.index(16);
        const double delta = rng.normal();
        const auto k = kappa(p.embedding, task.clauses[site.clause], tpl);
        const double before = naive_template_score(p, task, site, tpl);
        p.w1(site.row, j) += delta;
        const double after = naive_template_score(p, task, site, tpl);
        worst = std::max(worst, std::abs((after - before) - delta * k[j]));
    }
    return worst;
}

}  // namespace oracle
