#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ticketlab/featurespace.hpp"
#include "ticketlab/model.hpp"

namespace ticketlab {

/// Per-coordinate score on W1 (h x d). Higher means keep.
struct WeightScore {
    Matrix scores;
    std::string method;
    /// Set when a detector had to fall back to another rule (OBS with an all-zero Fisher).
    bool fallback = false;
};

/// |W1| of the checkpoint. The dense-final checkpoint gives the oracle.
WeightScore magnitude_scores(const Checkpoint& checkpoint);

/// |dL/dW1 (.) W1| at the given parameters.
WeightScore snip_scores(const ModelParams& params, const Dataset& data, std::span<const std::size_t> batch);

enum class HvpMethod { Analytic, FiniteDifference };

/// -(W1 (.) (H g))|_{W1} with g the full trainable gradient.
WeightScore grasp_scores(const ModelParams& params, const Dataset& data, std::span<const std::size_t> batch,
                         HvpMethod method = HvpMethod::Analytic);

/// Central difference of gradients along `direction`. `eps` is scaled by 1/|direction|.
Gradients finite_difference_hvp(const ModelParams& params, const Dataset& data, std::span<const std::size_t> batch,
                                const Gradients& direction, double eps = 1e-5);

/// Same central-difference rule on a flat parameter vector; used to check the
/// GraSP score algebra against closed forms.
std::vector<double> finite_difference_hvp(const std::function<std::vector<double>(const std::vector<double>&)>& grad,
                                          const std::vector<double>& theta, const std::vector<double>& direction,
                                          double eps = 1e-5);

/// -w (.) Hg, elementwise.
std::vector<double> grasp_from_hvp(std::span<const double> weights, std::span<const double> hg);

/// Data-free synaptic flow on the absolute-value network with an all-ones
/// input, scored as |dR/dW1 (.) W1|. A mask zeroes pruned coordinates first.
WeightScore synflow_scores(const ModelParams& params, const Mask* mask = nullptr);

/// Iterative SynFlow: `rounds` prune steps on an exponential keep schedule.
Mask synflow_iterative_mask(const ModelParams& params, double keep_fraction, int rounds = 100);

struct EarlyBirdResult {
    Mask mask;
    int epoch = 0;
    bool fell_back = false;
};

/// First checkpoint whose magnitude mask differs from its predecessor's by a
/// normalized Hamming distance below `threshold`; the last checkpoint otherwise.
EarlyBirdResult earlybird_mask(std::span<const Checkpoint> checkpoints, double keep_fraction, double threshold = 0.1);

/// Diagonal OBS saliency w^2 / (2 [H^-1]_jj) = w^2 (F_jj + damping) / 2, with F the
/// empirical Fisher (mean squared per-sample gradient) over the batch.
WeightScore obs_saliency(const ModelParams& params, const Dataset& data, std::span<const std::size_t> batch,
                         double damping = 1e-8);

/// Closed-form diagonal OBS saliency for one weight with curvature `hessian_diag`.
double obs_saliency_value(double weight, double hessian_diag);

enum class SiteVariant { Static, Dynamic, Combined };
enum class KappaVariant { W1Kappa, W1GradKappaMag, W1GradKappaSigned };

std::string to_string(SiteVariant v);
std::string to_string(KappaVariant v);

struct SiteScore {
    SiteKey site;
    Family family = Family::FourP;
    std::size_t best_template = 0;
    int distance = kClauseSize;
    double margin = 0.0;
    double delta_distance = 0.0;  // d_0 - d_e
    double delta_margin = 0.0;    // m_e - m_0
    double q = 0.0;
    double composite = 0.0;
};

/// Zero mean, unit variance. Variance below 1e-12 yields all zeros.
std::vector<double> standardize(std::span<const double> values);

/// Site scores at probe checkpoint `at_e` relative to `at_0`. Row families come from `at_e`.
std::vector<SiteScore> feature_site_scores(const ModelParams& at_e, const ModelParams& at_0, const DnfTask& task,
                                           double tau, SiteVariant variant, std::size_t top_k = 4);

/// Coordinate scores max_c |W1[h,j] kappa_{c,t*}[j]| with t* the best row-family
/// template of site (h,c). Gradient variants weight by |g| or by the descent
/// direction sign(-g kappa). `grads` is required for the gradient variants.
WeightScore kappa_coordinate_scores(const ModelParams& params, const DnfTask& task, double tau, KappaVariant variant,
                                    const Gradients* grads = nullptr);

}  // namespace ticketlab
