#include "ticketlab/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <ostream>
#include <sstream>

#include "ticketlab/errors.hpp"
#include "ticketlab/harness.hpp"
#include "ticketlab/sweep.hpp"
#include "ticketlab/textio.hpp"

namespace ticketlab {

namespace {

namespace fs = std::filesystem;

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitNumeric = 2;

// Raw flag text keyed by RunConfig field name; applied only when given.
using FlagValues = std::map<std::string, std::string>;

struct Globals {
    std::uint64_t seed = 0;
    double tau = 0.1;
    std::string out = "ticketlab_out";
    std::string config_file;
};

struct SweepFlags {
    std::string preset;
    std::size_t seeds = 5;
    std::size_t workers = 1;
    std::uint64_t first_seed = 0;
    int max_probe_epoch = -1;
};

struct Cli {
    CLI::App app{"Lottery-ticket feature-space lab: clause-structured DNF toy models, mask discovery, "
                 "rewinding and C1 = W1 C0 code metrics.",
                 "ticketlab"};
    Globals globals;
    SweepFlags sweep;
    FlagValues flags;
    std::string checkpoint_path, task_path, csv_path, mask_path, mask_out, run_path, ref_path;

    CLI::App* gen_task = nullptr;
    CLI::App* train_dense = nullptr;
    CLI::App* make_mask = nullptr;
    CLI::App* retrain = nullptr;
    CLI::App* census = nullptr;
    CLI::App* metrics = nullptr;
    CLI::App* sweep_cmd = nullptr;
    CLI::App* export_plots = nullptr;

    Cli() { build(); }

    void add_flag(CLI::App* sub, const std::string& name, const std::string& key, const std::string& help) {
        static const std::set<std::string> integers = {"clauses", "d_in", "hidden", "epochs", "sparse_epochs",
                                                       "batch_size", "n_train", "n_test", "probe_epoch", "per_site_k"};
        const char* type = integers.contains(key) ? "INT" : (key == "keep" || key == "lr") ? "FLOAT" : "TEXT";
        sub->add_option(name, flags[key], help)->type_name(type);
    }

    void task_flags(CLI::App* sub) {
        add_flag(sub, "--clauses", "clauses", "number of clauses K (default 16)");
        add_flag(sub, "--din", "d_in", "input width (default: 16 if --clauses/--mode are absent, else the task default)");
        add_flag(sub, "--mode", "mode", "clause layout: overlapping | read-once");
    }

    void model_flags(CLI::App* sub) {
        task_flags(sub);
        add_flag(sub, "--embedding", "embedding", "C0: hadamard | random_fixed | learned | identity");
        add_flag(sub, "--hidden", "hidden", "hidden width H (default 32)");
        add_flag(sub, "--epochs", "epochs", "dense training epochs (default 30)");
        add_flag(sub, "--sparse-epochs", "sparse_epochs", "sparse retraining epochs (default: --epochs)");
        add_flag(sub, "--batch", "batch_size", "minibatch size (default 128)");
        add_flag(sub, "--lr", "lr", "Adam learning rate (default 0.001)");
        add_flag(sub, "--n-train", "n_train", "training samples (default 2000)");
        add_flag(sub, "--n-test", "n_test", "test samples (default 5000)");
    }

    void mask_flags(CLI::App* sub) {
        add_flag(sub, "--method", "method", "mask rule, e.g. magnitude, snip, grasp, synflow, obs, fs_combined");
        add_flag(sub, "--variant", "variant",
                 "site-to-mask translation: site_greedy | row_aggregate | orthogonalized | joint_signed | joint_omp");
        add_flag(sub, "--keep", "keep", "kept fraction of each W1 row (default 0.5)");
        add_flag(sub, "--epoch", "probe_epoch", "probe epoch for epoch-dependent rules (default 0)");
        add_flag(sub, "--per-site-k", "per_site_k", "coordinates claimed per site; 0 means the row budget");
    }

    void build() {
        app.require_subcommand(1);
        app.fallthrough();
        app.add_option("--seed", globals.seed, "master seed for task, data, init and masks")->default_val(0);
        app.add_option("--tau", globals.tau, "code threshold tau")->default_val(0.1);
        app.add_option("--out", globals.out, "output directory")->default_val("ticketlab_out");
        app.add_option("--config", globals.config_file,
                       "key=value file with optional section prefixes; overrides flags");

        gen_task = app.add_subcommand("gen-task", "generate a DNF task and write <out>/task.dnf");
        task_flags(gen_task);

        train_dense = app.add_subcommand("train-dense", "train the dense model and write its run record");
        model_flags(train_dense);

        make_mask = app.add_subcommand("make-mask", "train (or reuse) the dense model and write a W1 mask");
        model_flags(make_mask);
        mask_flags(make_mask);
        make_mask->add_option("--mask-out", mask_out, "mask path (default <out>/masks/<run_id>.mask)");

        retrain = app.add_subcommand("retrain", "run the full ticket cycle and write its run record");
        model_flags(retrain);
        mask_flags(retrain);
        add_flag(retrain, "--rewind", "rewind", "rewind target: init | epoch:<e> | fresh");

        census = app.add_subcommand("census", "code census of one checkpoint");
        census->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required();
        census->add_option("--task", task_path, "task file")->required();
        census->add_option("--mask", mask_path, "optional W1 mask applied before the census");
        census->add_option("--csv", csv_path, "write per-site rows to this CSV");

        metrics = app.add_subcommand("metrics", "ticket metrics of a run record against a reference record");
        metrics->add_option("--run", run_path, "run record")->required();
        metrics->add_option("--ref", ref_path, "reference record")->required();

        sweep_cmd = app.add_subcommand("sweep", "run a preset grid and write aggregates/<preset>.csv");
        export_plots = app.add_subcommand("export-plots", "run a preset and write tidy figure CSVs to <out>/plots");
        for (auto* sub : {sweep_cmd, export_plots}) {
            sub->add_option("--preset", sweep.preset, "preset name")
                ->required()
                ->check(CLI::IsMember(preset_names()));
            sub->add_option("--seeds", sweep.seeds, "seeds per cell")->default_val(5);
            sub->add_option("--workers", sweep.workers, "worker threads")->default_val(1);
            sub->add_option("--first-seed", sweep.first_seed, "first seed of the seed range")->default_val(0);
            sub->add_option("--max-probe-epoch", sweep.max_probe_epoch, "drop probe epochs above this; -1 keeps all")
                ->default_val(-1);
        }
    }

    CLI::App* active() const {
        for (auto* s : app.get_subcommands()) return s;
        return nullptr;
    }
};

std::string read_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string strip_section(const std::string& key) {
    const auto dot = key.rfind('.');
    return dot == std::string::npos ? key : key.substr(dot + 1);
}

// Config-file keys override both flags and defaults.
void apply_config_file(Cli& cli, RunConfig& cfg, std::set<std::string>& assigned) {
    if (cli.globals.config_file.empty()) return;
    std::istringstream in(read_file(cli.globals.config_file));
    std::string line;
    while (std::getline(in, line)) {
        const auto t = textio::trim(line);
        if (t.empty() || t.front() == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string_view::npos) throw ConfigError("config line without '=': " + std::string(t));
        const std::string key = std::string(textio::trim(t.substr(0, eq)));
        const std::string value = std::string(textio::trim(t.substr(eq + 1)));
        std::string bare = strip_section(key);
        std::replace(bare.begin(), bare.end(), '-', '_');
        try {
            if (bare == "out") cli.globals.out = value;
            else if (bare == "preset") cli.sweep.preset = value;
            else if (bare == "seeds") cli.sweep.seeds = textio::parse_uint<std::size_t>(value);
            else if (bare == "workers") cli.sweep.workers = textio::parse_uint<std::size_t>(value);
            else if (bare == "first_seed") cli.sweep.first_seed = textio::parse_uint<std::uint64_t>(value);
            else if (bare == "max_probe_epoch") cli.sweep.max_probe_epoch = textio::parse_int(value);
            else {
                apply_config_assignment(cfg, key, value);
                if (bare == "seed") cli.globals.seed = cfg.seed;
                if (bare == "tau") cli.globals.tau = cfg.tau;
                assigned.insert(bare == "din" ? "d_in" : bare);
            }
        } catch (const InputError& e) {
            throw ConfigError("config key '" + key + "': " + e.what());
        }
    }
}

RunConfig build_config(Cli& cli) {
    RunConfig cfg;
    cfg.seed = cli.globals.seed;
    cfg.tau = cli.globals.tau;
    std::set<std::string> assigned;
    for (const auto& [key, value] : cli.flags) {
        if (value.empty()) continue;
        try {
            apply_config_assignment(cfg, key, value);
        } catch (const InputError& e) {
            throw ConfigError("flag for '" + key + "': " + e.what());
        }
        assigned.insert(key);
    }
    apply_config_file(cli, cfg, assigned);
    if (!assigned.contains("d_in") && (assigned.contains("clauses") || assigned.contains("mode")))
        cfg.d_in = default_d_in(cfg.clauses, cfg.mode);
    return cfg;
}

void ensure_dir(const fs::path& p) {
    std::error_code ec;
    fs::create_directories(p, ec);
    if (ec) throw ConfigError("cannot create directory '" + p.string() + "': " + ec.message());
}

int report_record(const RunRecord& rec, const fs::path& path, std::ostream& out, std::ostream& err) {
    out << "run_id=" << rec.run_id << '\n' << "record=" << path.string() << '\n';
    if (!rec.complete) {
        err << "run failed (" << to_string(rec.failure) << "): " << rec.error << '\n';
        return rec.failure == FailureKind::Numeric ? kExitNumeric : kExitConfig;
    }
    out << "accuracy=" << textio::fmt(rec.final_accuracy) << '\n'
        << "codes=" << rec.final_census.code_count() << '\n'
        << "codes_4p=" << rec.final_census.count_4p << '\n'
        << "codes_3n1p=" << rec.final_census.count_3n1p << '\n';
    if (rec.mask) out << "kept=" << rec.mask->count() << '\n';
    return kExitOk;
}

int cmd_gen_task(Cli& cli, std::ostream& out) {
    const auto cfg = build_config(cli);
    const auto task = generate_dnf(cfg.clauses, cfg.d_in, cfg.mode, cfg.seed);
    ensure_dir(cli.globals.out);
    const auto path = fs::path(cli.globals.out) / "task.dnf";
    std::ofstream f(path);
    f << serialize_task(task);
    if (!f) throw ConfigError("cannot write '" + path.string() + "'");
    out << "task=" << path.string() << '\n' << "clauses=" << task.clauses.size() << '\n' << "d_in=" << task.d_in << '\n';
    return kExitOk;
}

int cmd_cycle(Cli& cli, bool dense_only, std::ostream& out, std::ostream& err) {
    auto cfg = build_config(cli);
    if (dense_only) cfg.method = Method::Dense;
    validate(cfg);
    const auto id = run_id(cfg);
    const fs::path root(cli.globals.out);
    ensure_dir(root / "runs");
    CycleOptions opt;
    opt.checkpoint_dir = (root / "checkpoints" / id).string();
    opt.keep_artifacts = false;
    const auto rec = run_ticket_cycle(cfg, opt);
    const auto path = root / "runs" / (id + ".record");
    save_record(path.string(), rec);
    if (rec.mask) save_mask((root / "checkpoints" / id / "mask.txt").string(), *rec.mask);
    return report_record(rec, path, out, err);
}

int cmd_make_mask(Cli& cli, std::ostream& out) {
    const auto cfg = build_config(cli);
    validate(cfg);
    if (cfg.method == Method::Dense) throw ConfigError("make-mask needs a sparse --method");
    const auto dense = dense_phase(cfg);
    const auto result = ticketlab::make_mask(cfg, *dense);
    fs::path path = cli.mask_out;
    if (path.empty()) {
        ensure_dir(fs::path(cli.globals.out) / "masks");
        path = fs::path(cli.globals.out) / "masks" / (run_id(cfg) + ".mask");
    }
    save_mask(path.string(), result.mask);
    std::size_t padded = 0;
    for (auto p : result.padded_rows) padded += p;
    out << "mask=" << path.string() << '\n'
        << "kept=" << result.mask.count() << '\n'
        << "padded_rows=" << padded << '\n'
        << "fallback=" << (result.fallback ? 1 : 0) << '\n';
    return kExitOk;
}

int cmd_census(Cli& cli, std::ostream& out) {
    std::set<std::string> unused;
    RunConfig scratch;
    apply_config_file(cli, scratch, unused);
    Checkpoint ck;
    DnfTask task;
    try {
        ck = load_checkpoint(cli.checkpoint_path);
        task = parse_task(read_file(cli.task_path));
    } catch (const InputError& e) {
        throw ConfigError(e.what());
    }
    std::optional<Mask> mask;
    if (!cli.mask_path.empty()) {
        mask = load_mask(cli.mask_path);
        if (mask->rows != ck.params.w1.rows || mask->cols != ck.params.w1.cols)
            throw ConfigError("mask shape does not match the checkpoint");
        for (std::size_t i = 0; i < mask->bits.size(); ++i)
            if (!mask->bits[i]) ck.params.w1.data[i] = 0.0;
    }
    const auto c = ticketlab::census(ck.params, task, cli.globals.tau);
    out << "epoch=" << ck.epoch << '\n'
        << "codes=" << c.code_count() << '\n'
        << "codes_4p=" << c.count_4p << '\n'
        << "codes_3n1p=" << c.count_3n1p << '\n'
        << "aligned_margin_mean=" << textio::fmt(c.aligned_margin_mean) << '\n'
        << "noncanonical=" << c.noncanonical << '\n';
    if (!cli.csv_path.empty()) {
        std::ofstream f(cli.csv_path);
        write_census_csv_header(f);
        write_census_csv(f, fs::path(cli.checkpoint_path).stem().string(), ck.epoch, ck.params, task, c,
                         mask ? &*mask : nullptr, 4);
        if (!f) throw ConfigError("cannot write '" + cli.csv_path + "'");
        out << "csv=" << cli.csv_path << '\n';
    }
    return kExitOk;
}

int cmd_metrics(Cli& cli, std::ostream& out) {
    RunRecord run, ref;
    try {
        run = load_record(cli.run_path);
        ref = load_record(cli.ref_path);
    } catch (const InputError& e) {
        throw ConfigError(e.what());
    }
    if (!run.complete || !ref.complete) throw ConfigError("metrics need complete records");
    for (const auto& [k, v] : run_metric_values(run, &ref)) out << k << '=' << textio::fmt(v) << '\n';
    return kExitOk;
}

PresetOptions preset_options(const Cli& cli) {
    PresetOptions po;
    po.seeds = cli.sweep.seeds;
    po.first_seed = cli.sweep.first_seed;
    po.tau = cli.globals.tau;
    po.max_probe_epoch = cli.sweep.max_probe_epoch;
    return po;
}

int cmd_sweep(Cli& cli, std::ostream& out) {
    std::set<std::string> unused;
    RunConfig scratch;
    apply_config_file(cli, scratch, unused);
    if (cli.sweep.workers == 0 || cli.sweep.seeds == 0) throw ConfigError("--seeds and --workers must be positive");
    SweepOptions so;
    so.out_dir = cli.globals.out;
    so.workers = cli.sweep.workers;
    const auto result = ticketlab::sweep(make_preset(cli.sweep.preset, preset_options(cli)), so);
    out << "preset=" << cli.sweep.preset << '\n'
        << "executed=" << result.executed << " loaded=" << result.loaded << " failed=" << result.failed << '\n'
        << "aggregate=" << (fs::path(cli.globals.out) / "aggregates" / (cli.sweep.preset + ".csv")).string() << '\n';
    for (const auto& row : result.rows) {
        out << row.cell << " | " << row.label << " | runs=" << row.runs;
        for (const char* m : {"accuracy", "codes"}) {
            const auto it = row.stats.find(m);
            if (it != row.stats.end() && it->second.n > 0)
                out << ' ' << m << '=' << textio::fmt(it->second.mean) << "+-" << textio::fmt(it->second.sem);
        }
        out << '\n';
    }
    return result.failed == 0 ? kExitOk : kExitNumeric;
}

int cmd_export(Cli& cli, std::ostream& out) {
    std::set<std::string> unused;
    RunConfig scratch;
    apply_config_file(cli, scratch, unused);
    if (cli.sweep.workers == 0 || cli.sweep.seeds == 0) throw ConfigError("--seeds and --workers must be positive");
    SweepOptions so;
    so.out_dir = cli.globals.out;
    so.workers = cli.sweep.workers;
    for (const auto& path : export_plots(cli.sweep.preset, preset_options(cli), so)) out << path << '\n';
    return kExitOk;
}

int dispatch(Cli& cli, std::ostream& out, std::ostream& err) {
    auto* sub = cli.active();
    if (sub == cli.gen_task) return cmd_gen_task(cli, out);
    if (sub == cli.train_dense) return cmd_cycle(cli, true, out, err);
    if (sub == cli.retrain) return cmd_cycle(cli, false, out, err);
    if (sub == cli.make_mask) return cmd_make_mask(cli, out);
    if (sub == cli.census) return cmd_census(cli, out);
    if (sub == cli.metrics) return cmd_metrics(cli, out);
    if (sub == cli.sweep_cmd) return cmd_sweep(cli, out);
    if (sub == cli.export_plots) return cmd_export(cli, out);
    throw ConfigError("no subcommand");
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    Cli cli;
    try {
        std::vector<std::string> rev(args.rbegin(), args.rend());
        cli.app.parse(rev);
    } catch (const CLI::CallForHelp& e) {
        return cli.app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        cli.app.exit(e, out, err);
        const auto* sub = cli.active();
        err << (sub ? sub->help() : cli.app.help());
        return kExitConfig;
    }
    try {
        return dispatch(cli, out, err);
    } catch (const NumericError& e) {
        err << "numeric failure: " << e.what() << '\n';
        return kExitNumeric;
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const InputError& e) {
        err << "input error: " << e.what() << '\n';
        return kExitConfig;
    }
}

std::string cli_full_help() {
    Cli cli;
    std::string text = cli.app.help();
    for (const auto* sub : cli.app.get_subcommands({})) text += "\n" + sub->help();
    return text;
}

}  // namespace ticketlab
