#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "ticketlab/detectors.hpp"
#include "ticketlab/embedding.hpp"
#include "ticketlab/featurespace.hpp"
#include "ticketlab/model.hpp"
#include "ticketlab/task.hpp"
#include "ticketlab/translate.hpp"

namespace ticketlab {

/// Mask-producing rule. `Dense` skips the sparse phase entirely.
enum class Method {
    Dense,
    RandomSparse,
    Magnitude,       // |W1| of the dense-final checkpoint (the oracle)
    MagnitudeInit,   // |W1| at epoch 0
    MagnitudeEpoch,  // |W1| at the probe epoch
    Snip,
    Grasp,
    Synflow,
    Earlybird,
    Obs,  // diagonal OBS saliency on the dense-final checkpoint
    FsStatic,
    FsDynamic,
    FsCombined,
    W1Kappa,
    W1GradKappaMag,
    W1GradKappaSigned,
};

std::string to_string(Method m);
Method parse_method(const std::string& name);
std::vector<Method> all_methods();

enum class RewindMode { Init, Epoch, FreshRandom };

std::string to_string(RewindMode m);

/// Everything that determines a run. Two equal configs produce bitwise-equal records.
struct RunConfig {
    std::size_t clauses = 16;
    std::size_t d_in = 16;
    OverlapMode mode = OverlapMode::Overlapping;
    EmbeddingKind embedding = EmbeddingKind::Hadamard;
    std::size_t hidden = 32;
    double keep = 0.5;
    Method method = Method::Magnitude;
    TranslationVariant variant = TranslationVariant::SiteGreedy;
    std::size_t per_site_k = 0;
    int probe_epoch = 0;
    RewindMode rewind = RewindMode::Init;
    int rewind_epoch = 0;
    std::uint64_t seed = 0;
    double tau = 0.1;
    int radius = 1;
    double eta = 0.05;
    std::size_t top_k = 4;
    int epochs = 30;
    /// Sparse-phase epochs; negative means the same as `epochs`. Zero evaluates the rewound state.
    int sparse_epochs = -1;
    std::size_t batch_size = 128;
    double lr = 1e-3;
    std::size_t n_train = 2000;
    std::size_t n_test = 5000;
    /// Samples used by SNIP, GraSP, OBS and the gradient-kappa rules.
    std::size_t score_batch = 512;
    double earlybird_threshold = 0.1;

    int effective_sparse_epochs() const { return sparse_epochs < 0 ? epochs : sparse_epochs; }
    friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

/// Throws ConfigError on inconsistent settings.
void validate(const RunConfig& config);

/// Flat `key=value` lines, one per field, in a fixed order.
std::string config_to_text(const RunConfig& config);
/// Inverse of config_to_text. Unknown keys are rejected; missing keys keep defaults.
RunConfig config_from_text(const std::string& text);
/// Applies one `key=value` assignment. Keys may carry a section prefix (`run.keep`).
void apply_config_assignment(RunConfig& config, const std::string& key, const std::string& value);

/// 16 hex digits of FNV-1a over config_to_text.
std::string run_id(const RunConfig& config);
/// Key shared by every run that can reuse the same dense phase.
std::string dense_key(const RunConfig& config);

struct EpochCensus {
    int epoch = 0;
    std::size_t codes = 0;
    std::size_t codes_4p = 0;
    std::size_t codes_3n1p = 0;
    double margin_mean = 0.0;
    std::size_t noncanonical = 0;
};

struct PhaseLog {
    std::vector<EpochMetrics> metrics;
    std::vector<EpochCensus> census;
};

/// Task, data and checkpoint history of one dense training run.
struct DensePhase {
    DnfTask task;
    Dataset train_data;
    Dataset test_data;
    TrainResult result;
    std::vector<Census> censuses;  // one per checkpoint
};

/// In-memory state kept alongside a freshly executed record.
struct RunArtifacts {
    std::shared_ptr<const DensePhase> dense;
    std::optional<TrainResult> sparse;
    std::vector<Census> sparse_censuses;
};

enum class FailureKind { None, Config, Input, Numeric, Other };

std::string to_string(FailureKind k);

struct RunRecord {
    RunConfig config;
    std::string run_id;
    bool complete = false;
    FailureKind failure = FailureKind::None;
    std::string error;
    std::string task_text;
    PhaseLog dense;
    PhaseLog sparse;
    /// Accuracy and census of the evaluated model: sparse final, or dense final for `Dense`.
    double final_accuracy = 0.0;
    Census final_census;
    /// C1 of the evaluated model's starting state (masked and rewound for sparse runs).
    Matrix init_c1;
    std::vector<double> init_w2;
    Census dense_final_census;
    std::optional<Mask> mask;
    std::vector<std::uint8_t> padded_rows;
    bool detector_fallback = false;
    std::optional<double> mask_oracle_jaccard;
    std::vector<std::string> checkpoint_files;
    /// Not serialized.
    std::shared_ptr<const RunArtifacts> artifacts;

    DnfTask task() const { return parse_task(task_text); }
};

struct CycleOptions {
    /// When set, checkpoints of both phases are written below this directory.
    std::string checkpoint_dir;
    bool keep_artifacts = true;
};

/// Dense train, detect, translate, rewind, masked retrain. Stage failures are
/// reported through `complete=false` and `error`, never thrown.
RunRecord run_ticket_cycle(const RunConfig& config, const CycleOptions& options = {});

/// The dense phase for `config`, trained once per process and shared thereafter.
std::shared_ptr<const DensePhase> dense_phase(const RunConfig& config);
void clear_dense_cache();

/// Number of train() calls issued by the harness since process start.
std::size_t training_invocations();

/// Builds the W1 mask for `config` from a dense phase. Exposed for the CLI.
struct MaskResult {
    Mask mask;
    std::vector<std::uint8_t> padded_rows;
    bool fallback = false;
};
MaskResult make_mask(const RunConfig& config, const DensePhase& dense);

/// Starting parameters of the sparse phase.
ModelParams rewind_params(const RunConfig& config, const DensePhase& dense, const Mask& mask);

double mask_jaccard(const Mask& a, const Mask& b);

void write_record(std::ostream& os, const RunRecord& record);
RunRecord read_record(std::istream& is);
void save_record(const std::string& path, const RunRecord& record);
RunRecord load_record(const std::string& path);

struct PrecursorStats {
    /// Sites of the starting state within one defect of their row family.
    double init_near_all = 0.0;
    std::optional<double> own_near;
    std::optional<double> own_mean_distance;
    /// Absent when the reference has a different hidden width or no codes.
    std::optional<double> dense_target_near;
    /// Starting distance of each own final code to its final template.
    std::array<std::size_t, kClauseSize + 1> own_histogram{};
};

struct TicketMetrics {
    double sparse_accuracy = 0.0;
    std::size_t aligned_code_count = 0;
    double aligned_margin_mean = 0.0;
    std::size_t shared_codes = 0;
    std::optional<double> same_site_recall;
    std::optional<double> family_recall;
    /// Indexed by Family.
    std::array<std::optional<double>, 2> same_site_recall_by_family;
    std::array<std::optional<double>, 2> family_recall_by_family;
    std::optional<double> code_jaccard;
    std::optional<double> mask_jaccard;
    PrecursorStats precursor;
};

/// Compares `run` against `reference`. Both must share the task.
TicketMetrics compute_ticket_metrics(const RunRecord& run, const RunRecord& reference);

enum class SiteGroup {
    EventualFinalCode,
    NotFinalCode,
    OracleSupportedFinal,
    OracleSupportedLost,
    Recruited,
    CloseButLost,
};

std::string to_string(SiteGroup g);
std::vector<SiteGroup> all_site_groups();

struct TrajectoryCurve {
    SiteGroup group = SiteGroup::EventualFinalCode;
    Family family = Family::FourP;
    std::size_t size = 0;
    std::vector<int> epochs;
    std::vector<double> mean_distance;
    std::vector<double> mean_margin;
    std::vector<double> near_fraction;
};

/// Per group and family, curves over the phase the group is defined on: the
/// sparse phase for the eventual/not-final split (dense when there is no
/// sparse phase), the dense phase otherwise. Targets are each site's
/// best template at the end of that phase. Empty groups yield no curve.
std::vector<TrajectoryCurve> trajectory_diagnostics(const RunRecord& run, SiteGroup group);

/// Spearman correlation between row near-load at dense init and rejection
/// (not a dense-final code) over sites starting within one defect. Absent when degenerate.
std::optional<double> near_load_rejection_correlation(const RunRecord& run);

/// Spearman rank correlation with average ranks for ties.
std::optional<double> spearman(std::span<const double> x, std::span<const double> y);

}  // namespace ticketlab
