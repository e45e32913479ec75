#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ticketlab/embedding.hpp"
#include "ticketlab/errors.hpp"
#include "ticketlab/linalg.hpp"
#include "ticketlab/task.hpp"

namespace ticketlab {

/// z = w2 . ReLU(W1 C0 x + b1) + b2 with a scalar logit.
struct ModelParams {
    Embedding embedding;
    Matrix w1;  // h x d
    std::vector<double> b1;
    std::vector<double> w2;
    double b2 = 0.0;

    std::size_t hidden() const { return w1.rows; }
    std::size_t dim() const { return w1.cols; }
    std::size_t d_in() const { return embedding.c0.cols; }

    friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

/// W1 and w2 ~ N(0, 1/d), biases zero.
ModelParams init_params(Embedding embedding, std::size_t hidden, std::uint64_t seed);

/// Row-wise binary support on W1. Every row keeps exactly row_budget(keep, d) coordinates.
struct Mask {
    std::size_t rows = 0;
    std::size_t cols = 0;
    double keep_fraction = 1.0;
    std::vector<std::uint8_t> bits;

    Mask() = default;
    Mask(std::size_t r, std::size_t c, double keep, bool fill)
        : rows(r), cols(c), keep_fraction(keep), bits(r * c, fill ? 1 : 0) {}

    static Mask ones(std::size_t r, std::size_t c) { return Mask(r, c, 1.0, true); }

    bool operator()(std::size_t r, std::size_t c) const { return bits[r * cols + c] != 0; }
    void set(std::size_t r, std::size_t c, bool on) { bits[r * cols + c] = on ? 1 : 0; }
    std::size_t row_count(std::size_t r) const;
    std::size_t count() const;

    friend bool operator==(const Mask&, const Mask&) = default;
};

std::size_t row_budget(double keep_fraction, std::size_t d);

/// Throws InputError unless every row holds exactly the budgeted number of ones.
void validate_row_budget(const Mask& mask);

/// Same shape as the trainable parameters. c0 is all-zero unless the embedding trains.
struct Gradients {
    Matrix c0;
    Matrix w1;
    std::vector<double> b1;
    std::vector<double> w2;
    double b2 = 0.0;

    static Gradients zeros_like(const ModelParams& p);
    double dot(const Gradients& other) const;
    friend bool operator==(const Gradients&, const Gradients&) = default;
};

/// params + scale * direction (C0 is only moved when it is trainable).
ModelParams shifted(const ModelParams& params, const Gradients& direction, double scale);

struct ForwardResult {
    double logit = 0.0;
    std::vector<double> hidden;
};

ForwardResult forward(const ModelParams& params, std::span<const std::uint8_t> x);

struct LossAndGrads {
    double loss = 0.0;
    Gradients grads;
};

/// Mean BCE-with-logits over `indices` of `data`. W1 gradients outside `mask` are zeroed.
/// Throws NumericError on a non-finite loss.
LossAndGrads loss_and_grads(const ModelParams& params, const Dataset& data, std::span<const std::size_t> indices,
                            const Mask* mask = nullptr);
LossAndGrads loss_and_grads(const ModelParams& params, const Dataset& data, const Mask* mask = nullptr);

/// Exact Hessian-vector product of the mean loss (Pearlmutter R-operator).
/// ReLU curvature is taken as zero, which is exact away from the kinks.
Gradients hessian_vector_product(const ModelParams& params, const Dataset& data,
                                 std::span<const std::size_t> indices, const Gradients& direction);

double accuracy(const ModelParams& params, const Dataset& data);
double mean_loss(const ModelParams& params, const Dataset& data);

struct AdamHyper {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    Gradients m;
    Gradients v;
    long step = 0;

    static AdamState zeros_like(const ModelParams& p);
};

/// Bias-corrected Adam. Under a mask, masked W1 coordinates and their moment
/// buffers are pinned to exactly zero.
void adam_step(AdamState& state, ModelParams& params, const Gradients& grads, const AdamHyper& hyper,
               const Mask* mask = nullptr);

struct Checkpoint {
    int epoch = 0;
    ModelParams params;

    friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

struct EpochMetrics {
    int epoch = 0;
    double train_loss = 0.0;
    double test_accuracy = 0.0;
};

struct TrainConfig {
    int epochs = 30;
    std::size_t batch_size = 128;
    AdamHyper adam;
    std::uint64_t seed = 0;
    /// Epochs at which to snapshot (0 = before training). Empty with
    /// every_epoch=false still snapshots epoch 0 and the final epoch.
    std::vector<int> checkpoint_epochs;
    bool every_epoch = false;
};

struct TrainResult {
    ModelParams final_params;
    std::vector<Checkpoint> checkpoints;
    std::vector<EpochMetrics> metrics;  // entry 0 is the untrained state

    const Checkpoint* at_epoch(int epoch) const;
};

/// Raised when the loss goes non-finite; carries the last finite checkpoint.
class TrainingDiverged : public NumericError {
public:
    TrainingDiverged(const NumericError& cause, Checkpoint last_good)
        : NumericError(cause), last_good_(std::move(last_good)) {}
    const Checkpoint& last_good() const { return last_good_; }

private:
    Checkpoint last_good_;
};

/// Deterministic in config.seed. With a mask, `params.w1` must already be
/// zero outside the support.
TrainResult train(ModelParams params, const Dataset& train_data, const Dataset& test_data, const TrainConfig& config,
                  const Mask* mask = nullptr);

/// W1 <- mask (.) W1 of the checkpoint; everything else copied verbatim.
ModelParams apply_mask_rewind(const Checkpoint& checkpoint, const Mask& mask);

/// Redraws W1 and w2 from the init distribution (biases zero, embedding kept), then masks W1.
ModelParams fresh_random_rewind(const ModelParams& reference, const Mask& mask, std::uint64_t seed);

/// Header line `ckpt v1; h=..; d=..; d_in=..; kind=..; epoch=..` then little-endian
/// float64 payload C0, W1, b1, W2, b2.
void write_checkpoint(std::ostream& os, const Checkpoint& ckpt);
Checkpoint read_checkpoint(std::istream& is);
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace ticketlab
