#include "ticketlab/sweep.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <functional>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>
#include <tuple>

#include "ticketlab/textio.hpp"

namespace ticketlab {

namespace fs = std::filesystem;
using textio::fmt;

namespace {

const std::vector<EmbeddingKind> kDistributed = {EmbeddingKind::Hadamard, EmbeddingKind::RandomFixed,
                                                 EmbeddingKind::Learned};

RunConfig benchmark_base(const PresetOptions& o) {
    RunConfig c;
    c.clauses = 16;
    c.d_in = 16;
    c.mode = OverlapMode::Overlapping;
    c.hidden = 32;
    c.keep = 0.5;
    c.tau = o.tau;
    return c;
}

std::string keep_tag(double keep) {
    std::ostringstream os;
    os << static_cast<int>(std::lround(keep * 100));
    return os.str();
}

/// Pools `make(config)` over embeddings x seeds into one cell.
template <typename Fn>
Cell pooled(const std::string& id, const std::string& label, const std::vector<EmbeddingKind>& embeddings,
            const PresetOptions& o, Fn make) {
    Cell cell{id, label, {}};
    for (auto emb : embeddings)
        for (std::size_t s = 0; s < o.seeds; ++s) cell.runs.push_back(make(emb, o.first_seed + s));
    return cell;
}

struct LadderRow {
    std::string id;
    std::string label;
    std::function<void(RunConfig&)> tweak;
};

std::vector<LadderRow> ladder_rows() {
    return {
        {"dense16", "16 dense", [](RunConfig& c) { c.method = Method::Dense; c.hidden = 16; }},
        {"random_sparse", "random sparse expansion", [](RunConfig& c) { c.method = Method::RandomSparse; }},
        {"ticket_init", "ticket from init", [](RunConfig& c) { c.method = Method::Obs; }},
        {"ticket_rewind", "ticket rewind",
         [](RunConfig& c) {
             c.method = Method::Obs;
             c.rewind = RewindMode::Epoch;
             c.rewind_epoch = 10;
         }},
        {"dense32", "32 dense reference", [](RunConfig& c) { c.method = Method::Dense; }},
        {"obs_post_prune", "OBS post-prune",
         [](RunConfig& c) {
             c.method = Method::Obs;
             c.rewind = RewindMode::Epoch;
             c.rewind_epoch = c.epochs;
             c.sparse_epochs = 0;
         }},
        {"obs_retrained", "OBS retrained",
         [](RunConfig& c) {
             c.method = Method::Obs;
             c.rewind = RewindMode::Epoch;
             c.rewind_epoch = c.epochs;
         }},
    };
}

const LadderRow& ladder_row(const std::string& id) {
    static const auto rows = ladder_rows();
    for (const auto& r : rows)
        if (r.id == id) return r;
    throw ConfigError("unknown ladder row " + id);
}

RunConfig ladder_config(const std::string& id, EmbeddingKind emb, std::uint64_t seed, const PresetOptions& o) {
    auto c = benchmark_base(o);
    c.embedding = emb;
    c.seed = seed;
    ladder_row(id).tweak(c);
    return c;
}

Cell ladder_cell(const std::string& id, const PresetOptions& o, const std::string& ref_id,
                 const std::string& label_prefix = "") {
    const auto& row = ladder_row(id);
    return pooled(label_prefix.empty() ? id : label_prefix + id, label_prefix + row.label, kDistributed, o,
                  [&](EmbeddingKind e, std::uint64_t s) {
                      return CellRun{ladder_config(id, e, s, o), ladder_config(ref_id, e, s, o)};
                  });
}

Preset preset_ladder(const PresetOptions& o) {
    Preset p{"ladder_table1", {}};
    for (const auto& r : ladder_rows()) p.cells.push_back(ladder_cell(r.id, o, "dense32"));
    return p;
}

Preset preset_overlap(const PresetOptions& o) {
    Preset p{"overlap_tables23", {}};
    for (const char* id : {"random_sparse", "ticket_init", "ticket_rewind", "obs_post_prune", "obs_retrained"})
        p.cells.push_back(ladder_cell(id, o, "dense32", "vs dense32: "));
    for (const char* id : {"ticket_init", "ticket_rewind", "obs_post_prune", "obs_retrained", "dense32"})
        p.cells.push_back(ladder_cell(id, o, "random_sparse", "vs random: "));
    return p;
}

Preset preset_precursor(const PresetOptions& o) {
    Preset p{"precursor_table4", {}};
    for (const char* id : {"dense16", "dense32", "random_sparse", "ticket_init", "ticket_rewind"})
        p.cells.push_back(ladder_cell(id, o, "dense32"));
    return p;
}

Preset preset_family(const PresetOptions& o) {
    Preset p{"family_appD", {}};
    const std::vector<EmbeddingKind> embs = {EmbeddingKind::Hadamard, EmbeddingKind::RandomFixed, EmbeddingKind::Learned,
                                             EmbeddingKind::Identity};
    for (auto emb : embs)
        for (std::size_t k : {8u, 16u}) {
            const std::string id = to_string(emb) + "_K" + std::to_string(k);
            p.cells.push_back(pooled(id, id, {emb}, o, [&](EmbeddingKind e, std::uint64_t s) {
                auto c = benchmark_base(o);
                c.clauses = k;
                c.embedding = e;
                c.seed = s;
                c.keep = 0.25;
                auto ref = c;
                ref.method = Method::Dense;
                c.method = Method::Magnitude;
                return CellRun{c, ref};
            }));
        }
    return p;
}

Preset preset_contraction(const PresetOptions& o) {
    Preset p{"contraction_appC", {}};
    for (double keep : {0.5, 0.25}) {
        const std::string id = "oracle_keep" + keep_tag(keep);
        p.cells.push_back(pooled(id, id, kDistributed, o, [&](EmbeddingKind e, std::uint64_t s) {
            auto c = benchmark_base(o);
            c.embedding = e;
            c.seed = s;
            c.keep = keep;
            c.method = Method::Magnitude;
            auto ref = c;
            ref.method = Method::Dense;
            return CellRun{c, ref};
        }));
    }
    return p;
}

Preset preset_cross(const PresetOptions& o) {
    Preset p{"cross_setting", {}};
    const std::vector<Method> methods = {Method::FsStatic,       Method::FsDynamic, Method::FsCombined,
                                         Method::MagnitudeEpoch, Method::Earlybird, Method::Snip,
                                         Method::Grasp,          Method::Synflow};
    for (std::size_t h : {16u, 32u})
        for (std::size_t k : {8u, 16u})
            for (double keep : {0.5, 0.25})
                for (int epoch : {0, 1, 2, 5, 10, 20}) {
                    if (o.max_probe_epoch >= 0 && epoch > o.max_probe_epoch) continue;
                    for (auto m : methods) {
                        std::ostringstream id;
                        id << "H" << h << "_K" << k << "_keep" << keep_tag(keep) << "_e" << epoch << "_" << to_string(m);
                        p.cells.push_back(pooled(id.str(), to_string(m), kDistributed, o,
                                                 [&](EmbeddingKind e, std::uint64_t s) {
                                                     auto c = benchmark_base(o);
                                                     c.hidden = h;
                                                     c.clauses = k;
                                                     c.keep = keep;
                                                     c.embedding = e;
                                                     c.seed = s;
                                                     c.method = m;
                                                     c.probe_epoch = epoch;
                                                     c.rewind = RewindMode::Epoch;
                                                     c.rewind_epoch = epoch;
                                                     auto ref = c;
                                                     ref.method = Method::Dense;
                                                     ref.probe_epoch = 0;
                                                     ref.rewind = RewindMode::Init;
                                                     ref.rewind_epoch = 0;
                                                     return CellRun{c, ref};
                                                 }));
                    }
                }
    return p;
}

std::size_t next_pow2(std::size_t v) {
    std::size_t p = 1;
    while (p < v) p <<= 1;
    return p;
}

Preset preset_scaling(const PresetOptions& o) {
    Preset p{"scaling_appB", {}};
    const std::vector<std::pair<Method, int>> methods = {
        {Method::Magnitude, 0}, {Method::MagnitudeEpoch, 2}, {Method::FsStatic, 2}, {Method::FsDynamic, 2}};
    for (std::size_t h : {16u, 32u, 64u, 128u, 256u})
        for (double ratio : {0.5, 1.0})
            for (double keep : {0.5, 0.25})
                for (auto [m, epoch] : methods) {
                    const auto k = static_cast<std::size_t>(ratio * static_cast<double>(h));
                    std::ostringstream id;
                    id << "H" << h << "_CH" << ratio << "_keep" << keep_tag(keep) << "_" << to_string(m);
                    p.cells.push_back(pooled(id.str(), to_string(m), {EmbeddingKind::Hadamard}, o,
                                             [&](EmbeddingKind e, std::uint64_t s) {
                                                 auto c = benchmark_base(o);
                                                 c.hidden = h;
                                                 c.clauses = k;
                                                 c.d_in = std::max<std::size_t>(16, next_pow2(k));
                                                 c.n_train = std::max<std::size_t>(1000, 2000 * h / 32);
                                                 c.keep = keep;
                                                 c.embedding = e;
                                                 c.seed = s;
                                                 c.method = m;
                                                 c.probe_epoch = epoch;
                                                 auto ref = c;
                                                 ref.method = Method::Dense;
                                                 ref.probe_epoch = 0;
                                                 return CellRun{c, ref};
                                             }));
                }
    return p;
}

Preset preset_embedding(const PresetOptions& o) {
    Preset p{"embedding_appJ", {}};
    const std::vector<Method> methods = {Method::Magnitude, Method::FsStatic,       Method::FsDynamic,
                                         Method::FsCombined, Method::MagnitudeEpoch, Method::Snip};
    const std::vector<std::pair<std::string, RewindMode>> rewinds = {
        {"probe", RewindMode::Epoch}, {"init", RewindMode::Init}, {"fresh_random", RewindMode::FreshRandom}};
    for (auto emb : kDistributed)
        for (const auto& [rname, rmode] : rewinds)
            for (auto m : methods) {
                const std::string id = to_string(emb) + "_" + rname + "_" + to_string(m);
                p.cells.push_back(pooled(id, to_string(m), {emb}, o, [&](EmbeddingKind e, std::uint64_t s) {
                    auto c = benchmark_base(o);
                    c.keep = 0.25;
                    c.embedding = e;
                    c.seed = s;
                    c.method = m;
                    c.probe_epoch = 2;
                    c.rewind = rmode;
                    c.rewind_epoch = rmode == RewindMode::Epoch ? 2 : 0;
                    auto ref = c;
                    ref.method = Method::Dense;
                    ref.probe_epoch = 0;
                    ref.rewind = RewindMode::Init;
                    ref.rewind_epoch = 0;
                    return CellRun{c, ref};
                }));
            }
    return p;
}

Preset preset_oracle_growth(const PresetOptions& o) {
    Preset p{"oracle_growth_appE", {}};
    const std::vector<std::pair<Method, int>> methods = {
        {Method::Magnitude, 0}, {Method::MagnitudeInit, 0}, {Method::FsStatic, 1}};
    for (auto emb : kDistributed)
        for (std::size_t k : {8u, 16u})
            for (double keep : {0.5, 0.25})
                for (auto [m, epoch] : methods) {
                    const std::string id =
                        to_string(emb) + "_K" + std::to_string(k) + "_keep" + keep_tag(keep) + "_" + to_string(m);
                    p.cells.push_back(pooled(id, to_string(m), {emb}, o, [&](EmbeddingKind e, std::uint64_t s) {
                        auto c = benchmark_base(o);
                        c.clauses = k;
                        c.keep = keep;
                        c.embedding = e;
                        c.seed = s;
                        c.method = m;
                        c.probe_epoch = epoch;
                        auto ref = c;
                        ref.method = Method::Dense;
                        ref.probe_epoch = 0;
                        return CellRun{c, ref};
                    }));
                }
    return p;
}

Preset preset_translation(const PresetOptions& o) {
    Preset p{"translation_appF", {}};
    for (auto m : {Method::FsStatic, Method::FsCombined})
        for (auto v : {TranslationVariant::SiteGreedy, TranslationVariant::RowAggregate,
                       TranslationVariant::Orthogonalized, TranslationVariant::JointSigned,
                       TranslationVariant::JointOmp}) {
            const std::string id = to_string(m) + "_" + to_string(v);
            p.cells.push_back(pooled(id, id, kDistributed, o, [&](EmbeddingKind e, std::uint64_t s) {
                auto c = benchmark_base(o);
                c.keep = 0.25;
                c.embedding = e;
                c.seed = s;
                c.method = m;
                c.variant = v;
                c.probe_epoch = 2;
                auto ref = c;
                ref.method = Method::Dense;
                ref.probe_epoch = 0;
                ref.variant = TranslationVariant::SiteGreedy;
                return CellRun{c, ref};
            }));
        }
    return p;
}

RunConfig fig1_config(std::uint64_t seed, double tau) {
    RunConfig c;
    c.clauses = 8;
    c.d_in = 32;
    c.mode = OverlapMode::ReadOnce;
    c.hidden = 16;
    c.embedding = EmbeddingKind::Hadamard;
    c.keep = 0.25;
    c.method = Method::Magnitude;
    c.seed = seed;
    c.tau = tau;
    return c;
}

Preset preset_fig1(const PresetOptions& o) {
    Preset p{"fig1", {}};
    Cell cell{"oracle_keep25", "oracle ticket", {}};
    for (std::size_t s = 0; s < o.seeds; ++s) {
        auto c = fig1_config(o.first_seed + s, o.tau);
        auto ref = c;
        ref.method = Method::Dense;
        cell.runs.push_back({c, ref});
    }
    p.cells.push_back(std::move(cell));
    return p;
}

}  // namespace

std::vector<std::string> preset_names() {
    return {"ladder_table1",  "overlap_tables23", "precursor_table4",   "cross_setting",
            "scaling_appB",   "embedding_appJ",   "oracle_growth_appE", "translation_appF",
            "family_appD",    "contraction_appC", "fig1"};
}

Preset make_preset(const std::string& name, const PresetOptions& o) {
    if (o.seeds < 1) throw ConfigError("a preset needs at least one seed");
    if (name == "ladder_table1") return preset_ladder(o);
    if (name == "overlap_tables23") return preset_overlap(o);
    if (name == "precursor_table4") return preset_precursor(o);
    if (name == "cross_setting") return preset_cross(o);
    if (name == "scaling_appB") return preset_scaling(o);
    if (name == "embedding_appJ") return preset_embedding(o);
    if (name == "oracle_growth_appE") return preset_oracle_growth(o);
    if (name == "translation_appF") return preset_translation(o);
    if (name == "family_appD") return preset_family(o);
    if (name == "contraction_appC") return preset_contraction(o);
    if (name == "fig1") return preset_fig1(o);
    throw ConfigError("unknown preset '" + name + "'");
}

// ---- aggregation ---------------------------------------------------------

Stat summarize(std::span<const double> v) {
    Stat s;
    s.n = v.size();
    if (v.empty()) return s;
    double sum = 0.0;
    for (double x : v) sum += x;
    s.mean = sum / static_cast<double>(v.size());
    if (v.size() > 1) {
        double ss = 0.0;
        for (double x : v) ss += (x - s.mean) * (x - s.mean);
        s.sem = std::sqrt(ss / static_cast<double>(v.size() - 1)) / std::sqrt(static_cast<double>(v.size()));
    }
    return s;
}

const std::vector<std::string>& metric_columns() {
    static const std::vector<std::string> cols = {
        "accuracy",          "codes",          "codes_4p",         "codes_3n1p",       "margin",
        "w1_nonzero",        "same_site_recall", "family_recall",  "same_site_recall_4p",
        "same_site_recall_3n1p", "family_recall_4p", "family_recall_3n1p", "code_jaccard", "shared_codes",
        "mask_jaccard",      "init_near",      "own_near",         "own_distance",     "dense_target_near",
        "padded_rows",       "fallback"};
    return cols;
}

std::map<std::string, double> run_metric_values(const RunRecord& run, const RunRecord* ref) {
    std::map<std::string, double> v;
    const auto m = compute_ticket_metrics(run, ref ? *ref : run);
    v["accuracy"] = m.sparse_accuracy;
    v["codes"] = static_cast<double>(m.aligned_code_count);
    v["codes_4p"] = static_cast<double>(run.final_census.count_4p);
    v["codes_3n1p"] = static_cast<double>(run.final_census.count_3n1p);
    v["margin"] = m.aligned_margin_mean;
    v["w1_nonzero"] = static_cast<double>(run.mask ? run.mask->count() : run.init_c1.rows * run.config.d_in);
    v["init_near"] = m.precursor.init_near_all;
    v["padded_rows"] = static_cast<double>(std::count(run.padded_rows.begin(), run.padded_rows.end(), 1));
    v["fallback"] = run.detector_fallback ? 1.0 : 0.0;
    auto put = [&](const char* key, const std::optional<double>& x) {
        if (x) v[key] = *x;
    };
    if (ref) {
        put("same_site_recall", m.same_site_recall);
        put("family_recall", m.family_recall);
        put("same_site_recall_4p", m.same_site_recall_by_family[0]);
        put("same_site_recall_3n1p", m.same_site_recall_by_family[1]);
        put("family_recall_4p", m.family_recall_by_family[0]);
        put("family_recall_3n1p", m.family_recall_by_family[1]);
        put("code_jaccard", m.code_jaccard);
        v["shared_codes"] = static_cast<double>(m.shared_codes);
        put("dense_target_near", m.precursor.dense_target_near);
    }
    put("mask_jaccard", m.mask_jaccard);
    put("own_near", m.precursor.own_near);
    put("own_distance", m.precursor.own_mean_distance);
    return v;
}

const Stat& AggregateRow::at(const std::string& metric) const {
    static const Stat empty;
    auto it = stats.find(metric);
    return it == stats.end() ? empty : it->second;
}

namespace {

std::vector<std::pair<std::string, std::string>> cell_keys(const Cell& cell) {
    if (cell.runs.empty()) return {};
    const auto& c = cell.runs.front().config;
    std::set<std::string> embs;
    for (const auto& r : cell.runs) embs.insert(to_string(r.config.embedding));
    std::string emb;
    for (const auto& e : embs) emb += (emb.empty() ? "" : "|") + e;
    const std::string rewind =
        c.rewind == RewindMode::Epoch ? "epoch:" + std::to_string(c.rewind_epoch) : to_string(c.rewind);
    return {{"hidden", std::to_string(c.hidden)},
            {"clauses", std::to_string(c.clauses)},
            {"d_in", std::to_string(c.d_in)},
            {"keep", fmt(c.keep)},
            {"embedding", emb},
            {"method", to_string(c.method)},
            {"variant", to_string(c.variant)},
            {"probe_epoch", std::to_string(c.probe_epoch)},
            {"rewind", rewind},
            {"sparse_epochs", std::to_string(c.effective_sparse_epochs())}};
}

std::string csv_escape(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char ch : s) out += ch == '"' ? std::string("\"\"") : std::string(1, ch);
    return out + "\"";
}

}  // namespace

std::vector<AggregateRow> aggregate(const Preset& preset, const RecordMap& records) {
    std::vector<AggregateRow> rows;
    for (const auto& cell : preset.cells) {
        AggregateRow row;
        row.cell = cell.id;
        row.label = cell.label;
        row.keys = cell_keys(cell);
        row.runs = cell.runs.size();
        std::map<std::string, std::vector<double>> values;
        for (const auto& cr : cell.runs) {
            auto it = records.find(run_id(cr.config));
            if (it == records.end() || !it->second.complete) {
                ++row.failures;
                continue;
            }
            const RunRecord* ref = nullptr;
            if (cr.reference) {
                auto rt = records.find(run_id(*cr.reference));
                if (rt == records.end() || !rt->second.complete) {
                    ++row.failures;
                    continue;
                }
                ref = &rt->second;
            }
            for (const auto& [k, x] : run_metric_values(it->second, ref)) values[k].push_back(x);
        }
        for (const auto& col : metric_columns()) row.stats[col] = summarize(values[col]);
        rows.push_back(std::move(row));
    }
    return rows;
}

void write_aggregate_csv(std::ostream& os, const std::string& preset, const std::vector<AggregateRow>& rows) {
    os << "preset,cell,label";
    if (!rows.empty())
        for (const auto& [k, v] : rows.front().keys) os << ',' << k;
    os << ",runs,failures";
    for (const auto& m : metric_columns()) os << ',' << m << "_n," << m << "_mean," << m << "_sem";
    os << '\n';
    os.precision(17);
    for (const auto& r : rows) {
        os << csv_escape(preset) << ',' << csv_escape(r.cell) << ',' << csv_escape(r.label);
        for (const auto& [k, v] : r.keys) os << ',' << csv_escape(v);
        os << ',' << r.runs << ',' << r.failures;
        for (const auto& m : metric_columns()) {
            const auto& s = r.at(m);
            os << ',' << s.n << ',';
            if (s.n > 0) os << fmt(s.mean) << ',' << fmt(s.sem);
            else os << ',';
        }
        os << '\n';
    }
}

std::vector<std::map<std::string, std::string>> read_csv(std::istream& is) {
    auto parse_line = [](const std::string& line) {
        std::vector<std::string> out;
        std::string cur;
        bool quoted = false;
        for (std::size_t i = 0; i < line.size(); ++i) {
            const char ch = line[i];
            if (quoted) {
                if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                    cur += '"';
                    ++i;
                } else if (ch == '"') {
                    quoted = false;
                } else {
                    cur += ch;
                }
            } else if (ch == '"') {
                quoted = true;
            } else if (ch == ',') {
                out.push_back(cur);
                cur.clear();
            } else {
                cur += ch;
            }
        }
        out.push_back(cur);
        return out;
    };
    std::vector<std::map<std::string, std::string>> rows;
    std::string line;
    if (!std::getline(is, line)) return rows;
    const auto header = parse_line(line);
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const auto cells = parse_line(line);
        if (cells.size() != header.size()) throw InputError("csv row width does not match header");
        std::map<std::string, std::string> row;
        for (std::size_t i = 0; i < header.size(); ++i) row[header[i]] = cells[i];
        rows.push_back(std::move(row));
    }
    return rows;
}

// ---- execution -----------------------------------------------------------

std::vector<RunConfig> unique_configs(const Preset& preset) {
    std::vector<RunConfig> out;
    std::set<std::string> seen;
    auto add = [&](const RunConfig& c) {
        if (seen.insert(run_id(c)).second) out.push_back(c);
    };
    for (const auto& cell : preset.cells)
        for (const auto& r : cell.runs) {
            if (r.reference) add(*r.reference);
            add(r.config);
        }
    return out;
}

RecordMap execute(const std::vector<RunConfig>& configs, const SweepOptions& opt, std::size_t* executed,
                  std::size_t* loaded) {
    const fs::path runs_dir = opt.out_dir.empty() ? fs::path() : fs::path(opt.out_dir) / "runs";
    if (!runs_dir.empty()) fs::create_directories(runs_dir);
    std::vector<RunRecord> results(configs.size());
    std::vector<std::uint8_t> was_loaded(configs.size(), 0);
    std::atomic<std::size_t> next{0};

    auto work = [&] {
        while (true) {
            const std::size_t i = next.fetch_add(1);
            if (i >= configs.size()) return;
            const auto id = run_id(configs[i]);
            const auto path = runs_dir.empty() ? std::string() : (runs_dir / (id + ".record")).string();
            if (opt.resume && !path.empty() && fs::exists(path)) {
                try {
                    auto rec = load_record(path);
                    if (rec.complete && rec.config == configs[i]) {
                        results[i] = std::move(rec);
                        was_loaded[i] = 1;
                        continue;
                    }
                } catch (const std::exception&) {
                    // Unreadable records are recomputed.
                }
            }
            CycleOptions co;
            co.keep_artifacts = opt.keep_artifacts;
            results[i] = run_ticket_cycle(configs[i], co);
            if (!path.empty()) save_record(path, results[i]);
        }
    };
    const std::size_t n = std::max<std::size_t>(1, std::min(opt.workers, configs.size()));
    if (n == 1) {
        work();
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t w = 0; w < n; ++w) pool.emplace_back(work);
    }
    RecordMap out;
    std::size_t nl = 0;
    for (std::size_t i = 0; i < results.size(); ++i) {
        nl += was_loaded[i];
        out.emplace(results[i].run_id, std::move(results[i]));
    }
    if (executed) *executed = results.size() - nl;
    if (loaded) *loaded = nl;
    return out;
}

SweepResult sweep(const Preset& preset, const SweepOptions& opt) {
    SweepResult res;
    res.preset = preset;
    res.records = execute(unique_configs(preset), opt, &res.executed, &res.loaded);
    for (const auto& [id, r] : res.records) res.failed += !r.complete;
    res.rows = aggregate(preset, res.records);
    if (!opt.out_dir.empty()) {
        const auto dir = fs::path(opt.out_dir) / "aggregates";
        fs::create_directories(dir);
        std::ofstream os(dir / (preset.name + ".csv"));
        if (!os) throw InputError("cannot write aggregate for " + preset.name);
        write_aggregate_csv(os, preset.name, res.rows);
    }
    return res;
}

const AggregateRow* SweepResult::row(const std::string& label) const {
    for (const auto& r : rows)
        if (r.label == label || r.cell == label) return &r;
    return nullptr;
}

WinCount count_code_wins(const SweepResult& result, const std::string& challenger,
                         const std::vector<std::string>& rivals, int max_epoch) {
    using Key = std::tuple<std::size_t, std::size_t, double, int>;
    std::map<Key, std::map<std::string, double>> groups;
    for (std::size_t i = 0; i < result.preset.cells.size(); ++i) {
        const auto& cell = result.preset.cells[i];
        if (cell.runs.empty()) continue;
        const auto& c = cell.runs.front().config;
        if (c.probe_epoch > max_epoch) continue;
        const auto& st = result.rows[i].at("codes");
        if (st.n == 0) continue;
        groups[{c.hidden, c.clauses, c.keep, c.probe_epoch}][to_string(c.method)] = st.mean;
    }
    WinCount wc;
    for (const auto& [key, by_method] : groups) {
        auto it = by_method.find(challenger);
        if (it == by_method.end()) continue;
        bool all = true, any_rival = false;
        std::ostringstream line;
        line << "H=" << std::get<0>(key) << " K=" << std::get<1>(key) << " keep=" << std::get<2>(key)
             << " epoch=" << std::get<3>(key) << " " << challenger << "=" << it->second;
        for (const auto& r : rivals) {
            auto rt = by_method.find(r);
            if (rt == by_method.end()) continue;
            any_rival = true;
            line << " " << r << "=" << rt->second;
            if (!(it->second > rt->second)) all = false;
        }
        if (!any_rival) continue;
        ++wc.comparisons;
        wc.wins += all;
        line << (all ? " win" : " loss");
        wc.lines.push_back(line.str());
    }
    return wc;
}

// ---- plot exports --------------------------------------------------------

namespace {

std::ofstream open_plot(const fs::path& dir, const std::string& name, std::vector<std::string>& written) {
    fs::create_directories(dir);
    const auto path = dir / name;
    std::ofstream os(path);
    if (!os) throw InputError("cannot write " + path.string());
    os.precision(17);
    written.push_back(path.string());
    return os;
}

/// Long-format table: one line per (cell, metric).
void write_tidy(std::ostream& os, const std::vector<AggregateRow>& rows, const std::vector<std::string>& metrics) {
    os << "cell,label";
    if (!rows.empty())
        for (const auto& [k, v] : rows.front().keys) os << ',' << k;
    os << ",metric,n,mean,sem\n";
    for (const auto& r : rows)
        for (const auto& m : metrics) {
            const auto& s = r.at(m);
            if (s.n == 0) continue;
            os << csv_escape(r.cell) << ',' << csv_escape(r.label);
            for (const auto& [k, v] : r.keys) os << ',' << csv_escape(v);
            os << ',' << m << ',' << s.n << ',' << fmt(s.mean) << ',' << fmt(s.sem) << '\n';
        }
}

void write_matrix(std::ostream& os, const std::string& panel, const Matrix& m) {
    for (std::size_t i = 0; i < m.rows; ++i)
        for (std::size_t j = 0; j < m.cols; ++j) os << panel << ',' << i << ',' << j << ',' << fmt(m(i, j)) << '\n';
}

void write_codes(std::ostream& os, const std::string& panel, const Census& c) {
    for (const auto& code : c.codes)
        os << panel << ',' << code.site.row << ',' << code.site.clause << ',' << to_string(code.family) << ','
           << code.template_index << '\n';
}

}  // namespace

std::vector<std::string> export_plots(const std::string& name, const PresetOptions& po, const SweepOptions& so) {
    const fs::path dir = fs::path(so.out_dir.empty() ? "." : so.out_dir) / "plots";
    std::vector<std::string> written;
    const auto preset = make_preset(name, po);

    if (name == "contraction_appC" || name == "fig1") {
        SweepOptions mem = so;
        mem.keep_artifacts = true;
        mem.resume = false;
        auto res = sweep(preset, mem);
        if (name == "fig1") {
            auto panels = open_plot(dir, "fig1_panels.csv", written);
            auto codes = open_plot(dir, "fig1_codes.csv", written);
            auto summary = open_plot(dir, "fig1_summary.csv", written);
            panels << "seed,panel,row,col,value\n";
            codes << "seed,panel,row,clause,family,template\n";
            summary << "seed,panel,accuracy,codes\n";
            for (const auto& cell : preset.cells)
                for (const auto& cr : cell.runs) {
                    const auto& rec = res.records.at(run_id(cr.config));
                    if (!rec.complete || !rec.artifacts || !rec.artifacts->sparse) continue;
                    const auto& dense = *rec.artifacts->dense;
                    const auto& sparse = *rec.artifacts->sparse;
                    const auto& d0 = dense.result.checkpoints.front();
                    const auto& df = dense.result.checkpoints.back();
                    const auto masked_final = apply_mask_rewind(df, *rec.mask);
                    const auto seed = std::to_string(cr.config.seed);
                    const std::vector<std::tuple<std::string, const ModelParams*, double>> items = {
                        {"dense_init", &d0.params, dense.result.metrics.front().test_accuracy},
                        {"dense_final", &df.params, dense.result.metrics.back().test_accuracy},
                        {"masked_dense_final", &masked_final, accuracy(masked_final, dense.test_data)},
                        {"sparse_init", &sparse.checkpoints.front().params, sparse.metrics.front().test_accuracy},
                        {"sparse_final", &sparse.checkpoints.back().params, sparse.metrics.back().test_accuracy},
                    };
                    for (const auto& [panel, params, acc] : items) {
                        const auto cen = census(*params, dense.task, cr.config.tau);
                        std::ostringstream p;
                        p.precision(17);
                        write_matrix(p, seed + "," + panel + "_w1", params->w1);
                        write_matrix(p, seed + "," + panel + "_c1", compute_c1(*params));
                        panels << p.str();
                        std::ostringstream c;
                        write_codes(c, seed + "," + panel, cen);
                        codes << c.str();
                        summary << seed << ',' << panel << ',' << fmt(acc) << ',' << cen.code_count() << '\n';
                    }
                    std::ostringstream m;
                    for (std::size_t i = 0; i < rec.mask->rows; ++i)
                        for (std::size_t j = 0; j < rec.mask->cols; ++j)
                            m << seed << ",mask," << i << ',' << j << ',' << ((*rec.mask)(i, j) ? 1 : 0) << '\n';
                    panels << m.str();
                }
            return written;
        }
        auto curves = open_plot(dir, "fig4_curves.csv", written);
        auto traj = open_plot(dir, "fig3_trajectories.csv", written);
        auto nearload = open_plot(dir, "fig6_nearload.csv", written);
        curves << "cell,group,family,epoch,runs,near_fraction_mean,near_fraction_sem,distance_mean,margin_mean\n";
        traj << "cell,group,family,epoch,runs,near_fraction_mean,distance_mean,distance_sem,margin_mean,margin_sem\n";
        nearload << "cell,seed,embedding,spearman\n";
        for (const auto& cell : preset.cells) {
            using Key = std::tuple<std::string, std::string, int>;
            std::map<Key, std::vector<std::array<double, 3>>> acc;
            std::vector<Key> order;
            for (const auto& cr : cell.runs) {
                const auto& rec = res.records.at(run_id(cr.config));
                if (!rec.complete) continue;
                for (auto g : all_site_groups())
                    for (const auto& curve : trajectory_diagnostics(rec, g))
                        for (std::size_t e = 0; e < curve.epochs.size(); ++e) {
                            Key k{to_string(g), to_string(curve.family), curve.epochs[e]};
                            if (!acc.contains(k)) order.push_back(k);
                            acc[k].push_back({curve.near_fraction[e], curve.mean_distance[e], curve.mean_margin[e]});
                        }
                const auto rho = near_load_rejection_correlation(rec);
                nearload << cell.id << ',' << cr.config.seed << ',' << to_string(cr.config.embedding) << ','
                         << (rho ? fmt(*rho) : std::string()) << '\n';
            }
            std::sort(order.begin(), order.end());
            for (const auto& k : order) {
                std::vector<double> nf, dist, marg;
                for (const auto& v : acc[k]) {
                    nf.push_back(v[0]);
                    dist.push_back(v[1]);
                    marg.push_back(v[2]);
                }
                const auto snf = summarize(nf), sd = summarize(dist), sm = summarize(marg);
                const auto& [group, fam, epoch] = k;
                if (group == "eventual_final_code" || group == "not_final_code")
                    curves << cell.id << ',' << group << ',' << fam << ',' << epoch << ',' << snf.n << ','
                           << fmt(snf.mean) << ',' << fmt(snf.sem) << ',' << fmt(sd.mean) << ',' << fmt(sm.mean) << '\n';
                else
                    traj << cell.id << ',' << group << ',' << fam << ',' << epoch << ',' << snf.n << ','
                         << fmt(snf.mean) << ',' << fmt(sd.mean) << ',' << fmt(sd.sem) << ',' << fmt(sm.mean) << ','
                         << fmt(sm.sem) << '\n';
            }
        }
        return written;
    }

    auto res = sweep(preset, so);
    const std::vector<std::string> core = {"accuracy", "codes", "margin", "w1_nonzero"};
    auto tidy = [&](const std::string& file, const std::vector<std::string>& metrics,
                    const std::vector<AggregateRow>& rows) {
        auto os = open_plot(dir, file, written);
        write_tidy(os, rows, metrics);
    };
    auto rows_with_prefix = [&](const std::string& prefix) {
        std::vector<AggregateRow> out;
        for (const auto& r : res.rows)
            if (r.label.rfind(prefix, 0) == 0) out.push_back(r);
        return out;
    };
    if (name == "ladder_table1") {
        tidy("table1.csv", core, res.rows);
    } else if (name == "overlap_tables23") {
        tidy("table2.csv", {"same_site_recall", "code_jaccard"}, rows_with_prefix("vs dense32: "));
        tidy("table3.csv", {"shared_codes", "code_jaccard", "same_site_recall"}, rows_with_prefix("vs random: "));
    } else if (name == "precursor_table4") {
        tidy("table4.csv", {"init_near", "own_near", "own_distance", "dense_target_near"}, res.rows);
        auto hist = open_plot(dir, "fig_distance_hist.csv", written);
        hist << "cell,label,distance,fraction_mean,fraction_sem\n";
        for (const auto& cell : preset.cells) {
            std::array<std::vector<double>, kClauseSize + 1> frac;
            for (const auto& cr : cell.runs) {
                const auto& rec = res.records.at(run_id(cr.config));
                if (!rec.complete) continue;
                const auto m = compute_ticket_metrics(rec, rec);
                std::size_t total = 0;
                for (auto c : m.precursor.own_histogram) total += c;
                if (total == 0) continue;
                for (std::size_t d = 0; d <= kClauseSize; ++d)
                    frac[d].push_back(static_cast<double>(m.precursor.own_histogram[d]) / static_cast<double>(total));
            }
            for (std::size_t d = 0; d <= kClauseSize; ++d) {
                const auto s = summarize(frac[d]);
                if (s.n == 0) continue;
                hist << csv_escape(cell.id) << ',' << csv_escape(cell.label) << ',' << d << ',' << fmt(s.mean) << ','
                     << fmt(s.sem) << '\n';
            }
        }
    } else if (name == "family_appD") {
        tidy("fig2_recall.csv",
             {"same_site_recall", "family_recall", "same_site_recall_4p", "family_recall_4p", "same_site_recall_3n1p",
              "family_recall_3n1p"},
             res.rows);
    } else if (name == "cross_setting") {
        tidy("cross_setting.csv", core, res.rows);
        auto os = open_plot(dir, "cross_setting_wins.csv", written);
        os << "rival,max_epoch,comparisons,wins\n";
        for (const char* rival : {"snip", "grasp", "synflow", "magnitude_epoch", "earlybird"})
            for (int e : {2, 20}) {
                const auto wc = count_code_wins(res, "fs_combined", {rival}, e);
                os << rival << ',' << e << ',' << wc.comparisons << ',' << wc.wins << '\n';
            }
    } else if (name == "scaling_appB") {
        tidy("scaling.csv", core, res.rows);
    } else if (name == "embedding_appJ") {
        tidy("embedding_sweep.csv", core, res.rows);
    } else if (name == "oracle_growth_appE") {
        tidy("oracle_overlap.csv", {"accuracy", "codes", "mask_jaccard"}, res.rows);
    } else if (name == "translation_appF") {
        tidy("translation.csv", {"accuracy", "codes", "padded_rows"}, res.rows);
    }
    return written;
}

}  // namespace ticketlab
