#include "ticketlab/detectors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "ticketlab/translate.hpp"

namespace ticketlab {

namespace {

Matrix abs_w1(const ModelParams& p) {
    Matrix m = p.w1;
    for (auto& v : m.data) v = std::abs(v);
    return m;
}

double grad_norm(const Gradients& g) { return std::sqrt(g.dot(g)); }

}  // namespace

WeightScore magnitude_scores(const Checkpoint& checkpoint) {
    return {abs_w1(checkpoint.params), "magnitude", false};
}

WeightScore snip_scores(const ModelParams& params, const Dataset& data, std::span<const std::size_t> batch) {
    const auto lg = loss_and_grads(params, data, batch);
    WeightScore s{Matrix(params.hidden(), params.dim()), "snip", false};
    for (std::size_t k = 0; k < s.scores.size(); ++k) s.scores.data[k] = std::abs(lg.grads.w1.data[k] * params.w1.data[k]);
    return s;
}

Gradients finite_difference_hvp(const ModelParams& params, const Dataset& data, std::span<const std::size_t> batch,
                                const Gradients& direction, double eps) {
    const double norm = grad_norm(direction);
    Gradients out = Gradients::zeros_like(params);
    if (norm == 0.0) return out;
    const double step = eps / norm;
    const auto plus = loss_and_grads(shifted(params, direction, step), data, batch).grads;
    const auto minus = loss_and_grads(shifted(params, direction, -step), data, batch).grads;
    const double inv = 1.0 / (2.0 * step);
    for (std::size_t k = 0; k < out.c0.size(); ++k) out.c0.data[k] = (plus.c0.data[k] - minus.c0.data[k]) * inv;
    for (std::size_t k = 0; k < out.w1.size(); ++k) out.w1.data[k] = (plus.w1.data[k] - minus.w1.data[k]) * inv;
    for (std::size_t k = 0; k < out.b1.size(); ++k) out.b1[k] = (plus.b1[k] - minus.b1[k]) * inv;
    for (std::size_t k = 0; k < out.w2.size(); ++k) out.w2[k] = (plus.w2[k] - minus.w2[k]) * inv;
    out.b2 = (plus.b2 - minus.b2) * inv;
    return out;
}

std::vector<double> finite_difference_hvp(const std::function<std::vector<double>(const std::vector<double>&)>& grad,
                                          const std::vector<double>& theta, const std::vector<double>& direction,
                                          double eps) {
    double norm = 0.0;
    for (double v : direction) norm += v * v;
    norm = std::sqrt(norm);
    std::vector<double> out(theta.size(), 0.0);
    if (norm == 0.0) return out;
    const double step = eps / norm;
    std::vector<double> tp = theta, tm = theta;
    for (std::size_t i = 0; i < theta.size(); ++i) {
        tp[i] += step * direction[i];
        tm[i] -= step * direction[i];
    }
    const auto gp = grad(tp);
    const auto gm = grad(tm);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = (gp[i] - gm[i]) / (2.0 * step);
    return out;
}

std::vector<double> grasp_from_hvp(std::span<const double> weights, std::span<const double> hg) {
    if (weights.size() != hg.size()) throw InputError("grasp_from_hvp: length mismatch");
    std::vector<double> out(weights.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = -weights[i] * hg[i];
    return out;
}

WeightScore grasp_scores(const ModelParams& params, const Dataset& data, std::span<const std::size_t> batch,
                         HvpMethod method) {
    const auto g = loss_and_grads(params, data, batch).grads;
    const Gradients hg = method == HvpMethod::Analytic ? hessian_vector_product(params, data, batch, g)
                                                       : finite_difference_hvp(params, data, batch, g);
    WeightScore s{Matrix(params.hidden(), params.dim()), "grasp", false};
    const auto scores = grasp_from_hvp(params.w1.data, hg.w1.data);
    s.scores.data = scores;
    return s;
}

WeightScore synflow_scores(const ModelParams& params, const Mask* mask) {
    const std::size_t h = params.hidden();
    const std::size_t d = params.dim();
    // With every weight replaced by its magnitude and an all-ones input, the
    // network is linear, so dR/d|W1[h,j]| = |w2[h]| * sum_l |C0[j,l]|.
    std::vector<double> col_flow(d, 0.0);
    for (std::size_t j = 0; j < d; ++j)
        for (double v : params.embedding.c0.row(j)) col_flow[j] += std::abs(v);
    WeightScore s{Matrix(h, d), "synflow", false};
    for (std::size_t r = 0; r < h; ++r)
        for (std::size_t j = 0; j < d; ++j) {
            if (mask && !(*mask)(r, j)) continue;
            s.scores(r, j) = std::abs(params.w2[r]) * col_flow[j] * std::abs(params.w1(r, j));
        }
    return s;
}

Mask synflow_iterative_mask(const ModelParams& params, double keep_fraction, int rounds) {
    if (rounds < 1) throw ConfigError("synflow: rounds must be positive");
    Mask current = Mask::ones(params.hidden(), params.dim());
    for (int k = 1; k <= rounds; ++k) {
        const double keep_k = std::pow(keep_fraction, static_cast<double>(k) / rounds);
        auto scores = synflow_scores(params, &current);
        // pruned coordinates must never come back
        for (std::size_t i = 0; i < scores.scores.size(); ++i)
            if (!current.bits[i]) scores.scores.data[i] = -1.0;
        current = mask_from_scores(scores.scores, keep_k);
    }
    current.keep_fraction = keep_fraction;
    validate_row_budget(current);
    return current;
}

EarlyBirdResult earlybird_mask(std::span<const Checkpoint> checkpoints, double keep_fraction, double threshold) {
    if (checkpoints.size() < 2) throw ConfigError("earlybird: need at least two checkpoints");
    Mask prev = mask_from_scores(magnitude_scores(checkpoints[0]).scores, keep_fraction);
    for (std::size_t i = 1; i < checkpoints.size(); ++i) {
        Mask cur = mask_from_scores(magnitude_scores(checkpoints[i]).scores, keep_fraction);
        std::size_t diff = 0;
        for (std::size_t k = 0; k < cur.bits.size(); ++k) diff += cur.bits[k] != prev.bits[k];
        const double dist = static_cast<double>(diff) / static_cast<double>(cur.bits.size());
        if (dist < threshold) return {std::move(cur), checkpoints[i].epoch, false};
        prev = std::move(cur);
    }
    return {std::move(prev), checkpoints.back().epoch, true};
}

double obs_saliency_value(double weight, double hessian_diag) { return 0.5 * weight * weight * hessian_diag; }

WeightScore obs_saliency(const ModelParams& params, const Dataset& data, std::span<const std::size_t> batch,
                         double damping) {
    if (batch.empty()) throw InputError("obs_saliency: empty batch");
    Matrix fisher(params.hidden(), params.dim());
    for (auto i : batch) {
        const std::size_t one[] = {i};
        const auto g = loss_and_grads(params, data, one).grads;
        for (std::size_t k = 0; k < fisher.size(); ++k) fisher.data[k] += g.w1.data[k] * g.w1.data[k];
    }
    const double inv = 1.0 / static_cast<double>(batch.size());
    bool all_zero = true;
    for (auto& v : fisher.data) {
        v *= inv;
        if (v != 0.0) all_zero = false;
    }
    WeightScore s{Matrix(params.hidden(), params.dim()), "obs", all_zero};
    for (std::size_t k = 0; k < s.scores.size(); ++k)
        s.scores.data[k] = all_zero ? std::abs(params.w1.data[k])
                                    : obs_saliency_value(params.w1.data[k], fisher.data[k] + damping);
    return s;
}

std::string to_string(SiteVariant v) {
    switch (v) {
        case SiteVariant::Static: return "static";
        case SiteVariant::Dynamic: return "dynamic";
        case SiteVariant::Combined: return "combined";
    }
    return "?";
}

std::string to_string(KappaVariant v) {
    switch (v) {
        case KappaVariant::W1Kappa: return "w1_kappa";
        case KappaVariant::W1GradKappaMag: return "w1_grad_kappa_mag";
        case KappaVariant::W1GradKappaSigned: return "w1_grad_kappa_signed";
    }
    return "?";
}

std::vector<double> standardize(std::span<const double> values) {
    std::vector<double> out(values.size(), 0.0);
    if (values.empty()) return out;
    const double n = static_cast<double>(values.size());
    const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
    double var = 0.0;
    for (double v : values) var += (v - mean) * (v - mean);
    var /= n;
    if (var < 1e-12) return out;
    const double sd = std::sqrt(var);
    for (std::size_t i = 0; i < values.size(); ++i) out[i] = (values[i] - mean) / sd;
    return out;
}

std::vector<SiteScore> feature_site_scores(const ModelParams& at_e, const ModelParams& at_0, const DnfTask& task,
                                           double tau, SiteVariant variant, std::size_t top_k) {
    if (at_e.hidden() != at_0.hidden() || at_e.dim() != at_0.dim())
        throw InputError("feature_site_scores: checkpoints have different shapes");
    const Matrix c1e = compute_c1(at_e);
    const Matrix c10 = compute_c1(at_0);
    std::vector<SiteScore> out;
    for (std::size_t h = 0; h < at_e.hidden(); ++h) {
        auto fam = row_family(at_e.w2[h]);
        if (!fam) continue;
        for (std::size_t c = 0; c < task.clauses.size(); ++c) {
            const SiteKey key{h, c};
            const auto ue = local_vector(c1e, task, key);
            const auto u0 = local_vector(c10, task, key);
            SiteScore s;
            s.site = key;
            s.family = *fam;
            const auto bt = best_template(ue, *fam, tau);
            s.best_template = bt.index;
            s.distance = code_distance(ue, *fam, tau);
            s.margin = code_margin(ue, *fam);
            s.delta_distance = static_cast<double>(code_distance(u0, *fam, tau) - s.distance);
            s.delta_margin = s.margin - code_margin(u0, *fam);
            s.q = q_score(at_e, task, nullptr, key, template_of(*fam, bt.index), top_k);
            out.push_back(s);
        }
    }
    const std::size_t n = out.size();
    std::vector<double> neg_d(n), m(n), dd(n), dm(n);
    for (std::size_t i = 0; i < n; ++i) {
        neg_d[i] = -static_cast<double>(out[i].distance);
        m[i] = out[i].margin;
        dd[i] = out[i].delta_distance;
        dm[i] = out[i].delta_margin;
    }
    const auto z_d = standardize(neg_d), z_m = standardize(m), z_dd = standardize(dd), z_dm = standardize(dm);
    for (std::size_t i = 0; i < n; ++i) {
        const double stat = z_d[i] + z_m[i];
        const double dyn = z_dd[i] + z_dm[i];
        out[i].composite = variant == SiteVariant::Static ? stat : variant == SiteVariant::Dynamic ? dyn : stat + dyn;
    }
    return out;
}

WeightScore kappa_coordinate_scores(const ModelParams& params, const DnfTask& task, double tau, KappaVariant variant,
                                    const Gradients* grads) {
    if (variant != KappaVariant::W1Kappa && grads == nullptr)
        throw ConfigError("gradient-weighted kappa scores need a gradient");
    const std::size_t h = params.hidden();
    const std::size_t d = params.dim();
    const Matrix c1 = compute_c1(params);
    WeightScore s{Matrix(h, d, -std::numeric_limits<double>::infinity()), to_string(variant), false};
    for (std::size_t r = 0; r < h; ++r) {
        auto fam = row_family(params.w2[r]);
        if (!fam) {
            for (std::size_t j = 0; j < d; ++j) s.scores(r, j) = 0.0;
            continue;
        }
        for (std::size_t c = 0; c < task.clauses.size(); ++c) {
            const auto bt = best_template(local_vector(c1, task, {r, c}), *fam, tau);
            const auto k = kappa(params.embedding, task.clauses[c], template_of(*fam, bt.index));
            for (std::size_t j = 0; j < d; ++j) {
                double v = std::abs(params.w1(r, j) * k[j]);
                if (variant == KappaVariant::W1GradKappaMag) {
                    v *= std::abs(grads->w1(r, j));
                } else if (variant == KappaVariant::W1GradKappaSigned) {
                    const double push = -grads->w1(r, j) * k[j];
                    v *= push > 0.0 ? 1.0 : push < 0.0 ? -1.0 : 0.0;
                }
                s.scores(r, j) = std::max(s.scores(r, j), v);
            }
        }
    }
    return s;
}

}  // namespace ticketlab
