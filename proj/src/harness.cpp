#include "ticketlab/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <future>
#include <map>
#include <mutex>
#include <numeric>
#include <set>
#include <sstream>

#include "ticketlab/rng.hpp"
#include "ticketlab/textio.hpp"

namespace ticketlab {

namespace {

using textio::fmt;

std::atomic<std::size_t> g_trainings{0};

TrainResult counted_train(ModelParams params, const Dataset& train_data, const Dataset& test_data,
                          const TrainConfig& config, const Mask* mask) {
    ++g_trainings;
    return train(std::move(params), train_data, test_data, config, mask);
}

const std::vector<std::pair<Method, std::string>>& method_names() {
    static const std::vector<std::pair<Method, std::string>> names = {
        {Method::Dense, "dense"},
        {Method::RandomSparse, "random_sparse"},
        {Method::Magnitude, "magnitude"},
        {Method::MagnitudeInit, "magnitude_init"},
        {Method::MagnitudeEpoch, "magnitude_epoch"},
        {Method::Snip, "snip"},
        {Method::Grasp, "grasp"},
        {Method::Synflow, "synflow"},
        {Method::Earlybird, "earlybird"},
        {Method::Obs, "obs"},
        {Method::FsStatic, "fs_static"},
        {Method::FsDynamic, "fs_dynamic"},
        {Method::FsCombined, "fs_combined"},
        {Method::W1Kappa, "w1_kappa"},
        {Method::W1GradKappaMag, "w1_grad_kappa_mag"},
        {Method::W1GradKappaSigned, "w1_grad_kappa_signed"},
    };
    return names;
}

EpochCensus summarize(int epoch, const Census& c) {
    return {epoch, c.code_count(), c.count_4p, c.count_3n1p, c.aligned_margin_mean, c.noncanonical};
}

std::vector<std::size_t> score_batch(const RunConfig& cfg, const Dataset& data) {
    std::vector<std::size_t> idx(std::min(cfg.score_batch, data.n));
    std::iota(idx.begin(), idx.end(), 0);
    return idx;
}

const Checkpoint& checkpoint_at(const DensePhase& dense, int epoch) {
    const auto* ck = dense.result.at_epoch(epoch);
    if (!ck) throw ConfigError("dense phase has no checkpoint for epoch " + std::to_string(epoch));
    return *ck;
}

TrainConfig train_config(const RunConfig& cfg, int epochs) {
    TrainConfig tc;
    tc.epochs = epochs;
    tc.batch_size = cfg.batch_size;
    tc.adam.lr = cfg.lr;
    tc.seed = cfg.seed;
    tc.every_epoch = true;
    return tc;
}

std::vector<Census> census_series(const std::vector<Checkpoint>& ckpts, const DnfTask& task, double tau) {
    std::vector<Census> out;
    out.reserve(ckpts.size());
    for (const auto& ck : ckpts) out.push_back(census(ck.params, task, tau));
    return out;
}

std::string one_line(std::string s) {
    std::replace(s.begin(), s.end(), '\n', ' ');
    return s;
}

// ---- census text ---------------------------------------------------------

void write_census(std::ostream& os, const Census& c) {
    os << "rows=" << c.row_load.size() << " noncanonical=" << c.noncanonical << " sites=" << c.sites.size() << '\n';
    for (const auto& s : c.sites)
        os << s.site.row << ' ' << s.site.clause << ' ' << to_string(s.family) << ' ' << s.template_index << ' '
           << s.distance << ' ' << fmt(s.margin) << '\n';
}

std::map<std::string, std::string> parse_fields(std::string_view line) {
    std::map<std::string, std::string> out;
    for (auto tok : textio::split(line, ' ')) {
        if (tok.empty()) continue;
        const auto eq = tok.find('=');
        if (eq == std::string_view::npos) throw InputError("expected key=value, got '" + std::string(tok) + "'");
        out[std::string(tok.substr(0, eq))] = std::string(tok.substr(eq + 1));
    }
    return out;
}

Census read_census(std::istream& is) {
    std::string line;
    if (!std::getline(is, line)) throw InputError("record truncated in census");
    auto f = parse_fields(line);
    Census c;
    const auto rows = textio::parse_uint<std::size_t>(f.at("rows"));
    c.noncanonical = textio::parse_uint<std::size_t>(f.at("noncanonical"));
    const auto n = textio::parse_uint<std::size_t>(f.at("sites"));
    c.row_load.assign(rows, 0);
    c.row_near_load.assign(rows, 0);
    double margin_sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (!std::getline(is, line)) throw InputError("record truncated in census sites");
        auto t = textio::split(line, ' ');
        if (t.size() != 6) throw InputError("malformed census site line");
        SiteCensus s;
        s.site = {textio::parse_uint<std::size_t>(t[0]), textio::parse_uint<std::size_t>(t[1])};
        s.family = parse_family(std::string(t[2]));
        s.template_index = textio::parse_uint<std::size_t>(t[3]);
        s.distance = textio::parse_int(t[4]);
        s.margin = textio::parse_double(t[5]);
        if (s.site.row >= rows) throw InputError("census site row out of range");
        if (s.distance <= 1) ++c.row_near_load[s.site.row];
        if (s.distance == 0) {
            ++c.row_load[s.site.row];
            c.codes.push_back({s.site, s.family, s.template_index});
            (s.family == Family::FourP ? c.count_4p : c.count_3n1p) += 1;
            margin_sum += s.margin;
        }
        c.sites.push_back(s);
    }
    if (!c.codes.empty()) c.aligned_margin_mean = margin_sum / static_cast<double>(c.codes.size());
    return c;
}

void write_phase(std::ostream& os, const char* name, const PhaseLog& log) {
    os << "[" << name << "_metrics] " << log.metrics.size() << '\n';
    for (const auto& m : log.metrics) os << m.epoch << ' ' << fmt(m.train_loss) << ' ' << fmt(m.test_accuracy) << '\n';
    os << "[" << name << "_census] " << log.census.size() << '\n';
    for (const auto& c : log.census)
        os << c.epoch << ' ' << c.codes << ' ' << c.codes_4p << ' ' << c.codes_3n1p << ' ' << fmt(c.margin_mean) << ' '
           << c.noncanonical << '\n';
}

std::size_t expect_section(std::istream& is, const std::string& name) {
    std::string line;
    if (!std::getline(is, line)) throw InputError("record truncated before [" + name + "]");
    const std::string head = "[" + name + "]";
    if (line.rfind(head, 0) != 0) throw InputError("expected section " + head + ", got '" + line + "'");
    const auto rest = textio::trim(std::string_view(line).substr(head.size()));
    return rest.empty() ? 0 : textio::parse_uint<std::size_t>(rest);
}

PhaseLog read_phase(std::istream& is, const std::string& name) {
    PhaseLog log;
    std::string line;
    const auto nm = expect_section(is, name + "_metrics");
    for (std::size_t i = 0; i < nm; ++i) {
        if (!std::getline(is, line)) throw InputError("record truncated in metrics");
        auto t = textio::split(line, ' ');
        if (t.size() != 3) throw InputError("malformed metrics line");
        log.metrics.push_back({textio::parse_int(t[0]), textio::parse_double(t[1]), textio::parse_double(t[2])});
    }
    const auto nc = expect_section(is, name + "_census");
    for (std::size_t i = 0; i < nc; ++i) {
        if (!std::getline(is, line)) throw InputError("record truncated in census log");
        auto t = textio::split(line, ' ');
        if (t.size() != 6) throw InputError("malformed census log line");
        log.census.push_back({textio::parse_int(t[0]), textio::parse_uint<std::size_t>(t[1]),
                              textio::parse_uint<std::size_t>(t[2]), textio::parse_uint<std::size_t>(t[3]),
                              textio::parse_double(t[4]), textio::parse_uint<std::size_t>(t[5])});
    }
    return log;
}

// ---- statistics ----------------------------------------------------------

std::vector<double> average_ranks(std::span<const double> v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
        const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
        i = j + 1;
    }
    return r;
}

}  // namespace

// ---- names ---------------------------------------------------------------

std::string to_string(Method m) {
    for (const auto& [k, v] : method_names())
        if (k == m) return v;
    return "?";
}

Method parse_method(const std::string& name) {
    for (const auto& [k, v] : method_names())
        if (v == name) return k;
    throw ConfigError("unknown method '" + name + "'");
}

std::vector<Method> all_methods() {
    std::vector<Method> out;
    for (const auto& [k, v] : method_names()) out.push_back(k);
    return out;
}

std::string to_string(RewindMode m) {
    switch (m) {
        case RewindMode::Init: return "init";
        case RewindMode::Epoch: return "epoch";
        case RewindMode::FreshRandom: return "fresh_random";
    }
    return "?";
}

std::string to_string(FailureKind k) {
    switch (k) {
        case FailureKind::None: return "none";
        case FailureKind::Config: return "config";
        case FailureKind::Input: return "input";
        case FailureKind::Numeric: return "numeric";
        case FailureKind::Other: return "other";
    }
    return "?";
}

std::string to_string(SiteGroup g) {
    switch (g) {
        case SiteGroup::EventualFinalCode: return "eventual_final_code";
        case SiteGroup::NotFinalCode: return "not_final_code";
        case SiteGroup::OracleSupportedFinal: return "oracle_supported_final";
        case SiteGroup::OracleSupportedLost: return "oracle_supported_lost";
        case SiteGroup::Recruited: return "recruited";
        case SiteGroup::CloseButLost: return "close_but_lost";
    }
    return "?";
}

std::vector<SiteGroup> all_site_groups() {
    return {SiteGroup::EventualFinalCode,    SiteGroup::NotFinalCode, SiteGroup::OracleSupportedFinal,
            SiteGroup::OracleSupportedLost, SiteGroup::Recruited,    SiteGroup::CloseButLost};
}

// ---- config --------------------------------------------------------------

void validate(const RunConfig& c) {
    if (c.clauses < 1) throw ConfigError("clauses must be at least 1");
    if (c.d_in < kClauseSize) throw ConfigError("d_in must be at least 4");
    if (c.hidden < 1) throw ConfigError("hidden width must be at least 1");
    if (!(c.keep > 0.0 && c.keep <= 1.0)) throw ConfigError("keep must lie in (0,1]");
    if (c.epochs < 0) throw ConfigError("epochs must be nonnegative");
    if (c.probe_epoch < 0 || c.probe_epoch > c.epochs) throw ConfigError("probe_epoch must lie in [0, epochs]");
    if (c.rewind == RewindMode::Epoch && (c.rewind_epoch < 0 || c.rewind_epoch > c.epochs))
        throw ConfigError("rewind epoch must lie in [0, epochs]");
    if (c.batch_size < 1) throw ConfigError("batch_size must be positive");
    if (!(c.lr > 0.0) || !std::isfinite(c.lr)) throw ConfigError("lr must be positive and finite");
    if (c.n_train < 1 || c.n_test < 1) throw ConfigError("dataset sizes must be positive");
    if (c.score_batch < 1) throw ConfigError("score_batch must be positive");
    if (!(c.tau > 0.0)) throw ConfigError("tau must be positive");
    if (c.radius < 0 || c.radius > static_cast<int>(kClauseSize)) throw ConfigError("radius must lie in [0,4]");
    if (c.eta < 0.0) throw ConfigError("eta must be nonnegative");
    if (c.top_k < 1) throw ConfigError("top_k must be positive");
    if (c.embedding == EmbeddingKind::Hadamard && (c.d_in & (c.d_in - 1)) != 0)
        throw ConfigError("hadamard embedding needs d_in to be a power of two");
    if (c.mode == OverlapMode::ReadOnce && kClauseSize * c.clauses > c.d_in)
        throw ConfigError("read-once tasks need d_in >= 4 * clauses");
}

std::string config_to_text(const RunConfig& c) {
    std::ostringstream os;
    os << "clauses=" << c.clauses << '\n'
       << "d_in=" << c.d_in << '\n'
       << "mode=" << to_string(c.mode) << '\n'
       << "embedding=" << to_string(c.embedding) << '\n'
       << "hidden=" << c.hidden << '\n'
       << "keep=" << fmt(c.keep) << '\n'
       << "method=" << to_string(c.method) << '\n'
       << "variant=" << to_string(c.variant) << '\n'
       << "per_site_k=" << c.per_site_k << '\n'
       << "probe_epoch=" << c.probe_epoch << '\n'
       << "rewind=" << to_string(c.rewind) << '\n'
       << "rewind_epoch=" << c.rewind_epoch << '\n'
       << "seed=" << c.seed << '\n'
       << "tau=" << fmt(c.tau) << '\n'
       << "radius=" << c.radius << '\n'
       << "eta=" << fmt(c.eta) << '\n'
       << "top_k=" << c.top_k << '\n'
       << "epochs=" << c.epochs << '\n'
       << "sparse_epochs=" << c.sparse_epochs << '\n'
       << "batch_size=" << c.batch_size << '\n'
       << "lr=" << fmt(c.lr) << '\n'
       << "n_train=" << c.n_train << '\n'
       << "n_test=" << c.n_test << '\n'
       << "score_batch=" << c.score_batch << '\n'
       << "earlybird_threshold=" << fmt(c.earlybird_threshold) << '\n';
    return os.str();
}

void apply_config_assignment(RunConfig& c, const std::string& raw_key, const std::string& raw_value) {
    std::string key(textio::trim(raw_key));
    const std::string value(textio::trim(raw_value));
    if (const auto dot = key.rfind('.'); dot != std::string::npos) key = key.substr(dot + 1);
    std::replace(key.begin(), key.end(), '-', '_');
    try {
        using textio::parse_double;
        using textio::parse_int;
        auto size = [&] { return textio::parse_uint<std::size_t>(value); };
        if (key == "clauses") c.clauses = size();
        else if (key == "d_in" || key == "din") c.d_in = size();
        else if (key == "mode") c.mode = parse_overlap_mode(value);
        else if (key == "embedding") c.embedding = parse_embedding_kind(value);
        else if (key == "hidden") c.hidden = size();
        else if (key == "keep") c.keep = parse_double(value);
        else if (key == "method") c.method = parse_method(value);
        else if (key == "variant") c.variant = parse_translation_variant(value);
        else if (key == "per_site_k") c.per_site_k = size();
        else if (key == "probe_epoch" || key == "epoch") c.probe_epoch = parse_int(value);
        else if (key == "rewind") {
            if (value == "init") c.rewind = RewindMode::Init;
            else if (value == "fresh" || value == "fresh_random") c.rewind = RewindMode::FreshRandom;
            else if (value == "epoch") c.rewind = RewindMode::Epoch;
            else if (value.rfind("epoch:", 0) == 0) {
                c.rewind = RewindMode::Epoch;
                c.rewind_epoch = parse_int(value.substr(6));
            } else throw ConfigError("rewind must be init, epoch:<e> or fresh");
        } else if (key == "rewind_epoch") c.rewind_epoch = parse_int(value);
        else if (key == "seed") c.seed = textio::parse_uint<std::uint64_t>(value);
        else if (key == "tau") c.tau = parse_double(value);
        else if (key == "radius") c.radius = parse_int(value);
        else if (key == "eta") c.eta = parse_double(value);
        else if (key == "top_k" || key == "topk") c.top_k = size();
        else if (key == "epochs") c.epochs = parse_int(value);
        else if (key == "sparse_epochs") c.sparse_epochs = parse_int(value);
        else if (key == "batch_size" || key == "batch") c.batch_size = size();
        else if (key == "lr") c.lr = parse_double(value);
        else if (key == "n_train") c.n_train = size();
        else if (key == "n_test") c.n_test = size();
        else if (key == "score_batch") c.score_batch = size();
        else if (key == "earlybird_threshold") c.earlybird_threshold = parse_double(value);
        else throw ConfigError("unknown config key '" + key + "'");
    } catch (const InputError& e) {
        throw ConfigError("config key '" + key + "': " + e.what());
    }
}

RunConfig config_from_text(const std::string& text) {
    RunConfig c;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        const auto t = textio::trim(line);
        if (t.empty() || t.front() == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string_view::npos) throw ConfigError("config line without '=': " + std::string(t));
        apply_config_assignment(c, std::string(t.substr(0, eq)), std::string(t.substr(eq + 1)));
    }
    return c;
}

std::string run_id(const RunConfig& config) {
    char buf[17];
    const auto h = textio::fnv1a(config_to_text(config));
    static constexpr char hex[] = "0123456789abcdef";
    for (int i = 0; i < 16; ++i) buf[i] = hex[(h >> (60 - 4 * i)) & 0xf];
    buf[16] = '\0';
    return buf;
}

std::string dense_key(const RunConfig& c) {
    std::ostringstream os;
    os << c.clauses << '|' << c.d_in << '|' << to_string(c.mode) << '|' << to_string(c.embedding) << '|' << c.hidden
       << '|' << c.seed << '|' << c.epochs << '|' << c.batch_size << '|' << fmt(c.lr) << '|' << c.n_train << '|'
       << c.n_test << '|' << fmt(c.tau);
    return os.str();
}

// ---- dense phase ---------------------------------------------------------

namespace {

std::mutex g_cache_mutex;
std::map<std::string, std::shared_future<std::shared_ptr<const DensePhase>>> g_cache;

std::shared_ptr<const DensePhase> build_dense(const RunConfig& cfg) {
    auto out = std::make_shared<DensePhase>();
    out->task = generate_dnf(cfg.clauses, cfg.d_in, cfg.mode, cfg.seed);
    out->train_data = sample_dataset(out->task, cfg.n_train, derive_seed(cfg.seed, "train"));
    out->test_data = sample_dataset(out->task, cfg.n_test, derive_seed(cfg.seed, "test"));
    const auto emb = make_embedding(cfg.embedding, cfg.d_in, cfg.seed);
    auto params = init_params(emb, cfg.hidden, cfg.seed);
    out->result = counted_train(std::move(params), out->train_data, out->test_data, train_config(cfg, cfg.epochs),
                                nullptr);
    out->censuses = census_series(out->result.checkpoints, out->task, cfg.tau);
    return out;
}

}  // namespace

std::shared_ptr<const DensePhase> dense_phase(const RunConfig& config) {
    validate(config);
    const auto key = dense_key(config);
    std::promise<std::shared_ptr<const DensePhase>> promise;
    std::shared_future<std::shared_ptr<const DensePhase>> future;
    bool owner = false;
    {
        std::lock_guard lock(g_cache_mutex);
        auto it = g_cache.find(key);
        if (it == g_cache.end()) {
            future = promise.get_future().share();
            g_cache.emplace(key, future);
            owner = true;
        } else {
            future = it->second;
        }
    }
    if (owner) {
        try {
            promise.set_value(build_dense(config));
        } catch (...) {
            {
                std::lock_guard lock(g_cache_mutex);
                g_cache.erase(key);
            }
            promise.set_exception(std::current_exception());
        }
    }
    return future.get();
}

void clear_dense_cache() {
    std::lock_guard lock(g_cache_mutex);
    g_cache.clear();
}

std::size_t training_invocations() { return g_trainings.load(); }

// ---- masks and rewinds ---------------------------------------------------

MaskResult make_mask(const RunConfig& cfg, const DensePhase& dense) {
    validate(cfg);
    const auto& init = checkpoint_at(dense, 0);
    const auto& probe = checkpoint_at(dense, cfg.probe_epoch);
    const auto& final_ck = checkpoint_at(dense, cfg.epochs);
    const std::size_t h = init.params.hidden(), d = init.params.dim();
    const auto batch = score_batch(cfg, dense.train_data);
    auto from = [&](const WeightScore& ws) { return MaskResult{mask_from_scores(ws.scores, cfg.keep), {}, ws.fallback}; };

    switch (cfg.method) {
        case Method::Dense: throw ConfigError("dense runs have no mask");
        case Method::RandomSparse: return {random_mask(h, d, cfg.keep, cfg.seed), {}, false};
        case Method::Magnitude: return from(magnitude_scores(final_ck));
        case Method::MagnitudeInit: return from(magnitude_scores(init));
        case Method::MagnitudeEpoch: return from(magnitude_scores(probe));
        case Method::Snip: return from(snip_scores(probe.params, dense.train_data, batch));
        case Method::Grasp: return from(grasp_scores(probe.params, dense.train_data, batch));
        case Method::Synflow: return from(synflow_scores(probe.params));
        case Method::Obs: return from(obs_saliency(final_ck.params, dense.train_data, batch));
        case Method::Earlybird: {
            const std::size_t last = static_cast<std::size_t>(std::max(cfg.probe_epoch, 1));
            if (last >= dense.result.checkpoints.size()) throw ConfigError("earlybird needs at least one trained epoch");
            auto eb = earlybird_mask(std::span(dense.result.checkpoints).first(last + 1), cfg.keep,
                                     cfg.earlybird_threshold);
            return {std::move(eb.mask), {}, eb.fell_back};
        }
        case Method::FsStatic:
        case Method::FsDynamic:
        case Method::FsCombined: {
            const auto variant = cfg.method == Method::FsStatic    ? SiteVariant::Static
                                 : cfg.method == Method::FsDynamic ? SiteVariant::Dynamic
                                                                   : SiteVariant::Combined;
            auto sites = feature_site_scores(probe.params, init.params, dense.task, cfg.tau, variant, cfg.top_k);
            if (variant == SiteVariant::Static) rank_lexicographic(sites);
            else rank_by_composite(sites);
            TranslationOptions opt{cfg.keep, cfg.variant, cfg.per_site_k, cfg.tau};
            auto tr = sites_to_mask(sites, probe.params, dense.task, opt);
            const bool padded = std::any_of(tr.padded_rows.begin(), tr.padded_rows.end(), [](auto v) { return v; });
            return {std::move(tr.mask), std::move(tr.padded_rows), padded};
        }
        case Method::W1Kappa:
        case Method::W1GradKappaMag:
        case Method::W1GradKappaSigned: {
            const auto variant = cfg.method == Method::W1Kappa          ? KappaVariant::W1Kappa
                                 : cfg.method == Method::W1GradKappaMag ? KappaVariant::W1GradKappaMag
                                                                        : KappaVariant::W1GradKappaSigned;
            const auto grads = loss_and_grads(probe.params, dense.train_data, batch).grads;
            return from(kappa_coordinate_scores(probe.params, dense.task, cfg.tau, variant, &grads));
        }
    }
    throw ConfigError("unhandled method");
}

ModelParams rewind_params(const RunConfig& cfg, const DensePhase& dense, const Mask& mask) {
    switch (cfg.rewind) {
        case RewindMode::Init: return apply_mask_rewind(checkpoint_at(dense, 0), mask);
        case RewindMode::Epoch: return apply_mask_rewind(checkpoint_at(dense, cfg.rewind_epoch), mask);
        case RewindMode::FreshRandom: return fresh_random_rewind(checkpoint_at(dense, 0).params, mask, cfg.seed);
    }
    throw ConfigError("unhandled rewind mode");
}

double mask_jaccard(const Mask& a, const Mask& b) {
    if (a.rows != b.rows || a.cols != b.cols) throw InputError("mask_jaccard: shape mismatch");
    std::size_t inter = 0, uni = 0;
    for (std::size_t k = 0; k < a.bits.size(); ++k) {
        inter += a.bits[k] && b.bits[k];
        uni += a.bits[k] || b.bits[k];
    }
    return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

// ---- cycle ---------------------------------------------------------------

RunRecord run_ticket_cycle(const RunConfig& cfg, const CycleOptions& opt) {
    RunRecord rec;
    rec.config = cfg;
    rec.run_id = run_id(cfg);
    auto artifacts = std::make_shared<RunArtifacts>();
    std::string stage = "config";
    try {
        validate(cfg);
        stage = "dense training";
        artifacts->dense = dense_phase(cfg);
        const auto& dense = *artifacts->dense;
        rec.task_text = serialize_task(dense.task);
        for (std::size_t i = 0; i < dense.result.checkpoints.size(); ++i)
            rec.dense.census.push_back(summarize(dense.result.checkpoints[i].epoch, dense.censuses[i]));
        rec.dense.metrics = dense.result.metrics;
        rec.dense_final_census = dense.censuses.back();

        const auto& init = checkpoint_at(dense, 0);
        const auto& final_ck = checkpoint_at(dense, cfg.epochs);
        auto save_all = [&](const std::vector<Checkpoint>& ckpts, const std::string& phase) {
            if (opt.checkpoint_dir.empty()) return;
            const auto dir = std::filesystem::path(opt.checkpoint_dir) / phase;
            std::filesystem::create_directories(dir);
            for (const auto& ck : ckpts) {
                const auto path = (dir / ("epoch_" + std::to_string(ck.epoch) + ".ckpt")).string();
                save_checkpoint(path, ck);
                rec.checkpoint_files.push_back(path);
            }
        };
        save_all(dense.result.checkpoints, "dense");

        if (cfg.method == Method::Dense) {
            rec.final_accuracy = dense.result.metrics.back().test_accuracy;
            rec.final_census = dense.censuses.back();
            rec.init_c1 = compute_c1(init.params);
            rec.init_w2 = init.params.w2;
        } else {
            stage = "mask discovery";
            auto mr = make_mask(cfg, dense);
            rec.detector_fallback = mr.fallback;
            rec.padded_rows = mr.padded_rows;
            rec.mask_oracle_jaccard = mask_jaccard(mr.mask, mask_from_scores(magnitude_scores(final_ck).scores, cfg.keep));
            stage = "rewind";
            auto start = rewind_params(cfg, dense, mr.mask);
            rec.init_c1 = compute_c1(start);
            rec.init_w2 = start.w2;
            rec.mask = std::move(mr.mask);
            stage = "sparse training";
            auto sparse = counted_train(std::move(start), dense.train_data, dense.test_data,
                                        train_config(cfg, cfg.effective_sparse_epochs()), &*rec.mask);
            auto censuses = census_series(sparse.checkpoints, dense.task, cfg.tau);
            for (std::size_t i = 0; i < sparse.checkpoints.size(); ++i)
                rec.sparse.census.push_back(summarize(sparse.checkpoints[i].epoch, censuses[i]));
            rec.sparse.metrics = sparse.metrics;
            rec.final_accuracy = sparse.metrics.back().test_accuracy;
            rec.final_census = censuses.back();
            save_all(sparse.checkpoints, "sparse");
            if (opt.keep_artifacts) {
                artifacts->sparse = std::move(sparse);
                artifacts->sparse_censuses = std::move(censuses);
            }
        }
        rec.complete = true;
    } catch (const NumericError& e) {
        rec.failure = FailureKind::Numeric;
        rec.error = one_line(stage + ": " + e.what());
    } catch (const ConfigError& e) {
        rec.failure = FailureKind::Config;
        rec.error = one_line(stage + ": " + e.what());
    } catch (const InputError& e) {
        rec.failure = FailureKind::Input;
        rec.error = one_line(stage + ": " + e.what());
    } catch (const std::exception& e) {
        rec.failure = FailureKind::Other;
        rec.error = one_line(stage + ": " + e.what());
    }
    if (opt.keep_artifacts) rec.artifacts = std::move(artifacts);
    return rec;
}

// ---- record I/O ----------------------------------------------------------

void write_record(std::ostream& os, const RunRecord& r) {
    os << "record v1\n"
       << "run_id=" << r.run_id << '\n'
       << "complete=" << (r.complete ? 1 : 0) << '\n'
       << "failure=" << to_string(r.failure) << '\n'
       << "error=" << one_line(r.error) << '\n';
    const auto cfg_text = config_to_text(r.config);
    os << "[config] " << std::count(cfg_text.begin(), cfg_text.end(), '\n') << '\n' << cfg_text;
    os << "[task]\n" << r.task_text << '\n';
    write_phase(os, "dense", r.dense);
    write_phase(os, "sparse", r.sparse);
    os << "[final]\n"
       << "accuracy=" << fmt(r.final_accuracy) << " fallback=" << (r.detector_fallback ? 1 : 0)
       << " mask_oracle_jaccard=" << (r.mask_oracle_jaccard ? fmt(*r.mask_oracle_jaccard) : std::string("none"))
       << '\n';
    os << "[final_census]\n";
    write_census(os, r.final_census);
    os << "[dense_final_census]\n";
    write_census(os, r.dense_final_census);
    os << "[init_c1] " << r.init_c1.rows << ' ' << r.init_c1.cols << '\n';
    for (std::size_t i = 0; i < r.init_c1.rows; ++i) {
        for (std::size_t j = 0; j < r.init_c1.cols; ++j) os << (j ? " " : "") << fmt(r.init_c1(i, j));
        os << '\n';
    }
    os << "[init_w2] " << r.init_w2.size() << '\n';
    for (std::size_t i = 0; i < r.init_w2.size(); ++i) os << (i ? " " : "") << fmt(r.init_w2[i]);
    os << '\n';
    os << "[mask] " << (r.mask ? 1 : 0) << '\n';
    if (r.mask) write_mask(os, *r.mask);
    os << "[padded_rows] " << r.padded_rows.size() << '\n';
    for (auto v : r.padded_rows) os << (v ? '1' : '0');
    os << '\n';
    os << "[checkpoints] " << r.checkpoint_files.size() << '\n';
    for (const auto& f : r.checkpoint_files) os << f << '\n';
    os << "end\n";
    if (!os) throw InputError("failed writing record");
}

RunRecord read_record(std::istream& is) {
    RunRecord r;
    std::string line;
    if (!std::getline(is, line) || line != "record v1") throw InputError("not a record v1 file");
    auto value_of = [&](const std::string& key) {
        if (!std::getline(is, line) || line.rfind(key + "=", 0) != 0) throw InputError("record missing " + key);
        return line.substr(key.size() + 1);
    };
    r.run_id = value_of("run_id");
    r.complete = value_of("complete") == "1";
    {
        const auto kind = value_of("failure");
        bool known = false;
        for (auto k : {FailureKind::None, FailureKind::Config, FailureKind::Input, FailureKind::Numeric, FailureKind::Other})
            if (to_string(k) == kind) {
                r.failure = k;
                known = true;
            }
        if (!known) throw InputError("unknown failure kind '" + kind + "'");
    }
    r.error = value_of("error");
    const auto ncfg = expect_section(is, "config");
    std::string cfg_text;
    for (std::size_t i = 0; i < ncfg; ++i) {
        if (!std::getline(is, line)) throw InputError("record truncated in config");
        cfg_text += line + '\n';
    }
    r.config = config_from_text(cfg_text);
    expect_section(is, "task");
    if (!std::getline(is, r.task_text)) throw InputError("record truncated in task");
    r.dense = read_phase(is, "dense");
    r.sparse = read_phase(is, "sparse");
    expect_section(is, "final");
    if (!std::getline(is, line)) throw InputError("record truncated in final block");
    auto f = parse_fields(line);
    r.final_accuracy = textio::parse_double(f.at("accuracy"));
    r.detector_fallback = f.at("fallback") == "1";
    if (f.at("mask_oracle_jaccard") != "none") r.mask_oracle_jaccard = textio::parse_double(f.at("mask_oracle_jaccard"));
    expect_section(is, "final_census");
    r.final_census = read_census(is);
    expect_section(is, "dense_final_census");
    r.dense_final_census = read_census(is);
    if (!std::getline(is, line) || line.rfind("[init_c1] ", 0) != 0) throw InputError("record missing [init_c1]");
    {
        auto dims = textio::split(std::string_view(line).substr(10), ' ');
        if (dims.size() != 2) throw InputError("malformed [init_c1] header");
        r.init_c1 = Matrix(textio::parse_uint<std::size_t>(dims[0]), textio::parse_uint<std::size_t>(dims[1]));
        for (std::size_t i = 0; i < r.init_c1.rows; ++i) {
            if (!std::getline(is, line)) throw InputError("record truncated in init_c1");
            auto vals = textio::split(line, ' ');
            if (vals.size() != r.init_c1.cols) throw InputError("init_c1 row has the wrong width");
            for (std::size_t j = 0; j < vals.size(); ++j) r.init_c1(i, j) = textio::parse_double(vals[j]);
        }
    }
    const auto nw2 = expect_section(is, "init_w2");
    if (!std::getline(is, line)) throw InputError("record truncated in init_w2");
    if (nw2 > 0) {
        for (auto v : textio::split(line, ' ')) r.init_w2.push_back(textio::parse_double(v));
        if (r.init_w2.size() != nw2) throw InputError("init_w2 length mismatch");
    }
    if (expect_section(is, "mask") == 1) r.mask = read_mask(is);
    const auto npad = expect_section(is, "padded_rows");
    if (!std::getline(is, line) || line.size() != npad) throw InputError("malformed padded_rows");
    for (char ch : line) r.padded_rows.push_back(ch == '1' ? 1 : 0);
    const auto nck = expect_section(is, "checkpoints");
    for (std::size_t i = 0; i < nck; ++i) {
        if (!std::getline(is, line)) throw InputError("record truncated in checkpoints");
        r.checkpoint_files.push_back(line);
    }
    if (!std::getline(is, line) || line != "end") throw InputError("record missing end marker");
    return r;
}

void save_record(const std::string& path, const RunRecord& record) {
    const auto tmp = path + ".tmp";
    {
        std::ofstream os(tmp);
        if (!os) throw InputError("cannot open " + tmp + " for writing");
        write_record(os, record);
    }
    std::filesystem::rename(tmp, path);
}

RunRecord load_record(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw InputError("cannot open record " + path);
    return read_record(is);
}

// ---- metrics -------------------------------------------------------------

TicketMetrics compute_ticket_metrics(const RunRecord& run, const RunRecord& ref) {
    if (run.task_text != ref.task_text) throw InputError("compute_ticket_metrics: runs do not share the task");
    const auto task = run.task();
    const double tau = run.config.tau;
    const int radius = run.config.radius;
    TicketMetrics m;
    m.sparse_accuracy = run.final_accuracy;
    m.aligned_code_count = run.final_census.code_count();
    m.aligned_margin_mean = run.final_census.aligned_margin_mean;
    m.mask_jaccard = run.mask_oracle_jaccard;

    const std::set<CodeIdentity> a(run.final_census.codes.begin(), run.final_census.codes.end());
    const std::set<CodeIdentity> b(ref.final_census.codes.begin(), ref.final_census.codes.end());
    std::size_t inter = 0;
    for (const auto& c : b) inter += a.contains(c);
    m.shared_codes = inter;
    const std::size_t uni = a.size() + b.size() - inter;
    if (!b.empty()) m.same_site_recall = static_cast<double>(inter) / static_cast<double>(b.size());
    if (uni > 0) m.code_jaccard = static_cast<double>(inter) / static_cast<double>(uni);

    auto fam = [](const std::set<CodeIdentity>& s, std::optional<Family> only) {
        FamilyMap out;
        for (const auto& c : s)
            if (!only || c.family == *only) out.insert({c.site.clause, c.family, c.template_index});
        return out;
    };
    auto family_recall = [&](std::optional<Family> only) -> std::optional<double> {
        const auto fb = fam(b, only), fa = fam(a, only);
        if (fb.empty()) return std::nullopt;
        std::size_t hit = 0;
        for (const auto& e : fb) hit += fa.contains(e);
        return static_cast<double>(hit) / static_cast<double>(fb.size());
    };
    m.family_recall = family_recall(std::nullopt);
    for (auto f : {Family::FourP, Family::ThreeN1P}) {
        const auto i = static_cast<std::size_t>(f);
        m.family_recall_by_family[i] = family_recall(f);
        std::size_t total = 0, hit = 0;
        for (const auto& c : b)
            if (c.family == f) {
                ++total;
                hit += a.contains(c);
            }
        if (total > 0) m.same_site_recall_by_family[i] = static_cast<double>(hit) / static_cast<double>(total);
    }

    // Precursors on the evaluated model's starting state.
    const Matrix& c1 = run.init_c1;
    if (c1.rows != run.init_w2.size()) throw InputError("record init_c1 and init_w2 disagree");
    std::size_t sites = 0, near = 0;
    for (std::size_t h = 0; h < c1.rows; ++h) {
        const auto f = row_family(run.init_w2[h]);
        if (!f) continue;
        for (std::size_t c = 0; c < task.clauses.size(); ++c) {
            ++sites;
            near += code_distance(local_vector(c1, task, {h, c}), *f, tau) <= radius;
        }
    }
    if (sites > 0) m.precursor.init_near_all = static_cast<double>(near) / static_cast<double>(sites);
    auto start_distance = [&](const CodeIdentity& code) {
        return template_distance(local_vector(c1, task, code.site), template_of(code.family, code.template_index), tau);
    };
    if (!a.empty()) {
        std::size_t own_near = 0;
        double dist_sum = 0.0;
        for (const auto& code : a) {
            const int d = start_distance(code);
            ++m.precursor.own_histogram[static_cast<std::size_t>(d)];
            own_near += d <= radius;
            dist_sum += d;
        }
        m.precursor.own_near = static_cast<double>(own_near) / static_cast<double>(a.size());
        m.precursor.own_mean_distance = dist_sum / static_cast<double>(a.size());
    }
    if (!b.empty() && ref.init_c1.rows == c1.rows) {
        std::size_t hit = 0;
        for (const auto& code : b) hit += start_distance(code) <= radius;
        m.precursor.dense_target_near = static_cast<double>(hit) / static_cast<double>(b.size());
    }
    return m;
}

// ---- trajectories --------------------------------------------------------

std::optional<double> spearman(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size() || x.size() < 3) return std::nullopt;
    const auto rx = average_ranks(x), ry = average_ranks(y);
    const double n = static_cast<double>(x.size());
    const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
    const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < rx.size(); ++i) {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx) * (rx[i] - mx);
        syy += (ry[i] - my) * (ry[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) return std::nullopt;
    return sxy / std::sqrt(sxx * syy);
}

namespace {

const RunArtifacts& need_artifacts(const RunRecord& run) {
    if (!run.artifacts || !run.artifacts->dense)
        throw InputError("record " + run.run_id + " carries no checkpoint history; re-run it in memory");
    return *run.artifacts;
}

std::vector<TrajectoryCurve> curves_for(SiteGroup group, const std::vector<SiteTarget>& targets,
                                        const std::vector<Checkpoint>& ckpts, const DnfTask& task, double tau,
                                        int radius) {
    std::vector<TrajectoryCurve> out;
    for (auto fam : {Family::FourP, Family::ThreeN1P}) {
        std::vector<SiteTarget> sel;
        for (const auto& t : targets)
            if (t.family == fam) sel.push_back(t);
        if (sel.empty()) continue;
        TrajectoryCurve curve;
        curve.group = group;
        curve.family = fam;
        curve.size = sel.size();
        for (const auto& ck : ckpts) {
            const Matrix c1 = compute_c1(ck.params);
            double dsum = 0.0, msum = 0.0;
            std::size_t near = 0;
            for (const auto& t : sel) {
                const auto u = local_vector(c1, task, t.site);
                const auto& tpl = template_of(t.family, t.template_index);
                const int d = template_distance(u, tpl, tau);
                dsum += d;
                msum += template_margin(u, tpl);
                near += d <= radius;
            }
            const double n = static_cast<double>(sel.size());
            curve.epochs.push_back(ck.epoch);
            curve.mean_distance.push_back(dsum / n);
            curve.mean_margin.push_back(msum / n);
            curve.near_fraction.push_back(static_cast<double>(near) / n);
        }
        out.push_back(std::move(curve));
    }
    return out;
}

}  // namespace

std::vector<TrajectoryCurve> trajectory_diagnostics(const RunRecord& run, SiteGroup group) {
    const auto& art = need_artifacts(run);
    const auto& dense = *art.dense;
    const auto& cfg = run.config;
    const auto& task = dense.task;
    std::vector<SiteTarget> targets;

    if (group == SiteGroup::EventualFinalCode || group == SiteGroup::NotFinalCode) {
        const bool sparse = art.sparse.has_value();
        const auto& ckpts = sparse ? art.sparse->checkpoints : dense.result.checkpoints;
        const auto& fin = sparse ? art.sparse_censuses.back() : dense.censuses.back();
        for (const auto& s : fin.sites)
            if ((s.distance == 0) == (group == SiteGroup::EventualFinalCode))
                targets.push_back({s.site, s.family, s.template_index});
        return curves_for(group, targets, ckpts, task, cfg.tau, cfg.radius);
    }

    const auto& ckpts = dense.result.checkpoints;
    const auto& fin = dense.censuses.back();
    const Matrix c1_init = compute_c1(ckpts.front().params);
    auto init_distance = [&](const SiteCensus& s) {
        return template_distance(local_vector(c1_init, task, s.site), template_of(s.family, s.template_index), cfg.tau);
    };

    if (group == SiteGroup::OracleSupportedFinal || group == SiteGroup::OracleSupportedLost) {
        const Mask oracle = mask_from_scores(magnitude_scores(ckpts.back()).scores, cfg.keep);
        const VisibilityParams vp{cfg.radius, cfg.eta, cfg.tau, cfg.top_k};
        const auto visible = visibility_set(ckpts.front().params, oracle, family_map(fin), task, vp);
        for (const auto& s : fin.sites) {
            if (!visible.contains(s.site)) continue;
            if ((s.distance == 0) == (group == SiteGroup::OracleSupportedFinal))
                targets.push_back({s.site, s.family, s.template_index});
        }
    } else if (group == SiteGroup::Recruited) {
        std::set<SiteKey> band;
        if (ckpts.size() > 1) {
            auto ranked = feature_site_scores(ckpts[1].params, ckpts[0].params, task, cfg.tau, SiteVariant::Static,
                                              cfg.top_k);
            rank_lexicographic(ranked);
            const auto take = static_cast<std::size_t>(std::ceil(cfg.keep * static_cast<double>(ranked.size())));
            for (std::size_t i = 0; i < std::min(take, ranked.size()); ++i) band.insert(ranked[i].site);
        }
        for (const auto& s : fin.sites)
            if (s.distance == 0 && init_distance(s) >= 2 && !band.contains(s.site))
                targets.push_back({s.site, s.family, s.template_index});
    } else {
        for (const auto& s : fin.sites)
            if (s.distance > 0 && init_distance(s) <= cfg.radius) targets.push_back({s.site, s.family, s.template_index});
    }
    return curves_for(group, targets, ckpts, task, cfg.tau, cfg.radius);
}

std::optional<double> near_load_rejection_correlation(const RunRecord& run) {
    const auto& dense = *need_artifacts(run).dense;
    const auto& task = dense.task;
    const auto& fin = dense.censuses.back();
    const auto& init = dense.censuses.front();
    const Matrix c1_init = compute_c1(dense.result.checkpoints.front().params);
    std::vector<double> load, rejected;
    for (const auto& s : fin.sites) {
        const auto u = local_vector(c1_init, task, s.site);
        if (template_distance(u, template_of(s.family, s.template_index), run.config.tau) > run.config.radius) continue;
        load.push_back(static_cast<double>(init.row_near_load[s.site.row]));
        rejected.push_back(s.distance > 0 ? 1.0 : 0.0);
    }
    return spearman(load, rejected);
}

}  // namespace ticketlab
