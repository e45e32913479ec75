#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "ticketlab/errors.hpp"
#include "ticketlab/sweep.hpp"

using namespace ticketlab;
namespace fs = std::filesystem;

namespace {

RunConfig tiny(Method method, std::uint64_t seed) {
    RunConfig c;
    c.clauses = 4;
    c.d_in = 8;
    c.hidden = 8;
    c.epochs = 4;
    c.n_train = 256;
    c.n_test = 256;
    c.batch_size = 32;
    c.lr = 1e-2;
    c.score_batch = 64;
    c.method = method;
    c.seed = seed;
    return c;
}

Preset tiny_preset() {
    Preset p{"tiny", {}};
    for (auto m : {Method::RandomSparse, Method::Magnitude, Method::FsStatic}) {
        Cell cell{to_string(m), to_string(m), {}};
        for (std::uint64_t s = 0; s < 3; ++s) cell.runs.push_back({tiny(m, s), tiny(Method::Dense, s)});
        p.cells.push_back(cell);
    }
    return p;
}

fs::path scratch(const std::string& name) {
    const auto dir = fs::temp_directory_path() / ("ticketlab_sweep_" + name);
    fs::remove_all(dir);
    return dir;
}

}  // namespace

TEST_CASE("ladder preset rows") {
    const auto p = make_preset("ladder_table1", {2, 0, 0.1, -1});
    const std::vector<std::string> labels = {"16 dense",           "random sparse expansion", "ticket from init",
                                             "ticket rewind",      "32 dense reference",      "OBS post-prune",
                                             "OBS retrained"};
    REQUIRE(p.cells.size() == labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        CHECK(p.cells[i].label == labels[i]);
        CHECK(p.cells[i].runs.size() == 6);  // three embeddings, two seeds
        for (const auto& r : p.cells[i].runs) {
            CHECK_NOTHROW(validate(r.config));
            REQUIRE(r.reference.has_value());
            CHECK(r.reference->method == Method::Dense);
            CHECK(r.reference->hidden == 32);
            CHECK(r.reference->seed == r.config.seed);
        }
    }
    CHECK(p.cells[0].runs[0].config.hidden == 16);
    const auto& post = p.cells[5].runs[0].config;
    CHECK(post.rewind_epoch == post.epochs);
    CHECK(post.effective_sparse_epochs() == 0);
}

TEST_CASE("every preset builds valid configs") {
    for (const auto& name : preset_names()) {
        CAPTURE(name);
        const auto p = make_preset(name, {1, 0, 0.1, -1});
        CHECK(p.name == name);
        CHECK_FALSE(p.cells.empty());
        for (const auto& c : unique_configs(p)) CHECK_NOTHROW(validate(c));
    }
    CHECK_THROWS_AS(make_preset("nope"), ConfigError);
    CHECK_THROWS_AS(make_preset("ladder_table1", {0, 0, 0.1, -1}), ConfigError);
}

TEST_CASE("cross-setting grid restricted to early probes") {
    const auto p = make_preset("cross_setting", {1, 0, 0.1, 2});
    std::set<std::tuple<std::size_t, std::size_t, double, int>> groups;
    for (const auto& cell : p.cells) {
        const auto& c = cell.runs.front().config;
        CHECK(c.probe_epoch <= 2);
        groups.insert({c.hidden, c.clauses, c.keep, c.probe_epoch});
    }
    CHECK(groups.size() == 24);
    CHECK(p.cells.size() == 24 * 8);
}

TEST_CASE("summarize uses the n-1 standard error") {
    const std::vector<double> v{1, 2, 3, 4};
    const auto s = summarize(v);
    CHECK(s.n == 4);
    CHECK(s.mean == doctest::Approx(2.5));
    CHECK(s.sem == doctest::Approx(std::sqrt(5.0 / 3.0) / 2.0));
    CHECK(summarize(std::vector<double>{7}).sem == 0.0);
    CHECK(summarize(std::vector<double>{}).n == 0);
}

TEST_CASE("resumed sweeps reuse records without training") {
    const auto dir = scratch("resume");
    const auto preset = tiny_preset();
    clear_dense_cache();
    const auto first = sweep(preset, {dir.string(), 1, true, false});
    CHECK(first.executed == unique_configs(preset).size());
    CHECK(first.failed == 0);
    clear_dense_cache();
    const auto before = training_invocations();
    const auto second = sweep(preset, {dir.string(), 1, true, false});
    CHECK(training_invocations() == before);
    CHECK(second.executed == 0);
    CHECK(second.loaded == first.executed);
    for (std::size_t i = 0; i < first.rows.size(); ++i)
        CHECK(first.rows[i].at("codes").mean == second.rows[i].at("codes").mean);
    fs::remove_all(dir);
}

TEST_CASE("aggregate csv matches a recomputation from the records") {
    const auto dir = scratch("csv");
    const auto preset = tiny_preset();
    const auto res = sweep(preset, {dir.string(), 1, true, false});
    std::ifstream is(dir / "aggregates" / "tiny.csv");
    REQUIRE(is);
    const auto rows = read_csv(is);
    REQUIRE(rows.size() == preset.cells.size());
    for (std::size_t i = 0; i < preset.cells.size(); ++i) {
        CHECK(rows[i].at("cell") == preset.cells[i].id);
        for (const auto& metric : {"accuracy", "codes", "same_site_recall", "own_near"}) {
            std::vector<double> vals;
            for (const auto& cr : preset.cells[i].runs) {
                const auto& run = load_record((dir / "runs" / (run_id(cr.config) + ".record")).string());
                const auto& ref = load_record((dir / "runs" / (run_id(*cr.reference) + ".record")).string());
                const auto m = run_metric_values(run, &ref);
                if (m.contains(metric)) vals.push_back(m.at(metric));
            }
            const auto s = summarize(vals);
            CAPTURE(metric);
            CHECK(std::stoul(rows[i].at(std::string(metric) + "_n")) == s.n);
            if (s.n > 0) {
                CHECK(std::abs(std::stod(rows[i].at(std::string(metric) + "_mean")) - s.mean) <= 1e-12);
                CHECK(std::abs(std::stod(rows[i].at(std::string(metric) + "_sem")) - s.sem) <= 1e-12);
            }
        }
    }
    fs::remove_all(dir);
}

TEST_CASE("results do not depend on the worker count") {
    const auto configs = unique_configs(tiny_preset());
    clear_dense_cache();
    const auto one = execute(configs, {"", 1, false, false});
    clear_dense_cache();
    const auto three = execute(configs, {"", 3, false, false});
    REQUIRE(one.size() == three.size());
    for (const auto& [id, r] : one) {
        const auto& o = three.at(id);
        CHECK(r.final_accuracy == o.final_accuracy);
        CHECK(r.final_census.codes == o.final_census.codes);
        CHECK(r.mask == o.mask);
    }
}

TEST_CASE("code win counting") {
    SweepResult res;
    auto add = [&](Method m, int epoch, double codes) {
        auto c = tiny(m, 0);
        c.probe_epoch = epoch;
        res.preset.cells.push_back({"c" + std::to_string(res.rows.size()), to_string(m), {{c, std::nullopt}}});
        AggregateRow row;
        row.stats["codes"] = Stat{1, codes, 0.0};
        res.rows.push_back(row);
    };
    add(Method::FsCombined, 0, 5);
    add(Method::Snip, 0, 4);
    add(Method::Grasp, 0, 3);
    add(Method::FsCombined, 1, 5);
    add(Method::Snip, 1, 5);  // a tie is not a win
    add(Method::FsCombined, 3, 9);
    add(Method::Snip, 3, 1);
    const auto wc = count_code_wins(res, "fs_combined", {"snip", "grasp"}, 2);
    CHECK(wc.comparisons == 2);
    CHECK(wc.wins == 1);
    CHECK(wc.lines.size() == 2);
}
