// One PASS/FAIL line per acceptance criterion. Exit status is the number of failures.

#include <chrono>
#include <cstdio>
#include <map>
#include <sstream>
#include <string>

#include "oracles.hpp"
#include "ticketlab/sweep.hpp"

using namespace ticketlab;

namespace {

int g_failures = 0;

void report(bool ok, const std::string& name, const std::string& detail) {
    std::printf("%s  %-28s %s\n", ok ? "PASS" : "FAIL", name.c_str(), detail.c_str());
    std::fflush(stdout);
    g_failures += ok ? 0 : 1;
}

std::string f3(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3f", x);
    return buf;
}

double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

std::string record_text(const RunRecord& r) {
    std::ostringstream os;
    write_record(os, r);
    return os.str();
}

void gradient_check() {
    double worst = 0.0;
    std::size_t entries = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto g = oracle::gradient_check_draw(seed);
        worst = std::max(worst, g.max_rel);
        entries += g.entries;
    }
    report(worst < 1e-4, "gradient-check", "20 draws, " + std::to_string(entries) + " entries, max rel err " +
                                               std::to_string(worst));
}

void distance_oracle() {
    std::size_t checked = 0, mismatches = 0;
    for (double tau : {0.05, 0.1, 0.2})
        for (const auto& u : oracle::grid4({-1.0, -tau / 2, 0.0, tau / 2, 1.0}))
            for (auto f : {Family::FourP, Family::ThreeN1P}) {
                ++checked;
                mismatches += code_distance(u, f, tau) != oracle::enum_distance(u, f, tau) ||
                              code_margin(u, f) != oracle::enum_margin(u, f);
            }
    report(mismatches == 0, "distance-margin-oracle",
           std::to_string(checked) + " (u, family, tau) cases, " + std::to_string(mismatches) + " mismatches");
}

void kappa_proposition() {
    const double err = oracle::kappa_perturbation_error(2024, 100);
    report(err < 1e-12, "kappa-proposition", "100 perturbations, max |dS - delta kappa| " + std::to_string(err));
}

void non_restriction() {
    const auto nr = oracle::make_nonrestriction_instance();
    const SiteKey site{0, 0};
    const auto dense_u = local_vector(compute_c1(nr.params), nr.task, site);
    const auto masked_u = local_vector(compute_masked_c1(nr.params, nr.mask), nr.task, site);
    const int before = code_distance(dense_u, Family::FourP, nr.tau);
    const int after = code_distance(masked_u, Family::FourP, nr.tau);
    bool literals_kept = true;
    for (auto j : nr.task.clauses[0]) literals_kept = literals_kept && nr.mask(0, j);
    report(literals_kept && after < before, "mask-non-restriction",
           "clause columns kept, d_tau " + std::to_string(before) + " -> " + std::to_string(after));
}

struct LadderView {
    std::map<std::string, const AggregateRow*> rows;
    const Stat& at(const std::string& id, const std::string& metric) const { return rows.at(id)->at(metric); }
};

void ladder_criteria(const SweepResult& res) {
    LadderView v;
    for (const auto& r : res.rows) v.rows[r.cell] = &r;
    const double d16 = v.at("dense16", "accuracy").mean, rnd = v.at("random_sparse", "accuracy").mean,
                 tin = v.at("ticket_init", "accuracy").mean, d32 = v.at("dense32", "accuracy").mean;
    const bool order = d16 < rnd && rnd < tin && tin <= d32;
    const bool bands = std::abs(d16 - 0.707) <= 0.05 && std::abs(rnd - 0.736) <= 0.05 &&
                       std::abs(tin - 0.767) <= 0.05 && std::abs(d32 - 0.771) <= 0.05;
    std::string detail = "16dense " + f3(d16) + " < random " + f3(rnd) + " < init " + f3(tin) + " <= 32dense " +
                         f3(d32) + "; n=" + std::to_string(v.at("dense16", "accuracy").n) +
                         " per row; failed runs " + std::to_string(res.failed);
    report(order && bands, "accuracy-ladder", detail);

    const double rec_init = v.at("ticket_init", "same_site_recall").mean;
    const double rec_rnd = v.at("random_sparse", "same_site_recall").mean;
    report(rec_init - rec_rnd >= 0.15, "recall-gap",
           "init " + f3(rec_init) + " - random " + f3(rec_rnd) + " = " + f3(rec_init - rec_rnd));

    const double own_rnd = v.at("random_sparse", "own_near").mean;
    const double own_init = v.at("ticket_init", "own_near").mean;
    const double own_rew = v.at("ticket_rewind", "own_near").mean;
    report(own_rew - own_init >= 0.05 && own_init - own_rnd >= 0.05, "precursor-order",
           "rewind " + f3(own_rew) + " > init " + f3(own_init) + " > random " + f3(own_rnd));
}

void family_criterion(const SweepResult& res) {
    std::vector<double> fam, site;
    std::size_t cells_ahead = 0, cells = 0;
    for (const auto& r : res.rows) {
        const auto& f = r.at("family_recall");
        const auto& s = r.at("same_site_recall");
        if (f.n == 0 || s.n == 0) continue;
        ++cells;
        cells_ahead += f.mean > s.mean;
        fam.push_back(f.mean);
        site.push_back(s.mean);
    }
    const double mf = mean_of(fam), ms = mean_of(site);
    report(cells > 0 && mf > ms, "family-over-site",
           "75% sparsity grid mean family " + f3(mf) + " > same-site " + f3(ms) + "; cells ahead " +
               std::to_string(cells_ahead) + "/" + std::to_string(cells));
}

void contraction_criterion(const SweepResult& res) {
    std::map<Family, std::vector<double>> final_near, other_near;
    for (const auto& cell : res.preset.cells) {
        if (cell.runs.front().config.keep != 0.5) continue;
        for (const auto& cr : cell.runs) {
            const auto& rec = res.records.at(run_id(cr.config));
            if (!rec.complete) continue;
            for (const auto& c : trajectory_diagnostics(rec, SiteGroup::EventualFinalCode))
                final_near[c.family].push_back(c.near_fraction.front());
            for (const auto& c : trajectory_diagnostics(rec, SiteGroup::NotFinalCode))
                other_near[c.family].push_back(c.near_fraction.front());
        }
    }
    const double g4 = mean_of(final_near[Family::FourP]) - mean_of(other_near[Family::FourP]);
    const double g3 = mean_of(final_near[Family::ThreeN1P]) - mean_of(other_near[Family::ThreeN1P]);
    report(g4 >= 0.2 && g3 >= 0.2, "contraction-gap",
           "near at rewind, final minus non-code: 4P " + f3(g4) + ", 3N1P " + f3(g3));
}

void cross_setting_criterion(const SweepResult& res) {
    const auto wc = count_code_wins(res, "fs_combined", {"snip", "grasp", "synflow"}, 2);
    report(2 * wc.wins > wc.comparisons && wc.comparisons == 24, "cross-setting-majority",
           "fs_combined beats snip, grasp and synflow in " + std::to_string(wc.wins) + "/" +
               std::to_string(wc.comparisons) + " cells");
    for (const auto& line : wc.lines) std::printf("      %s\n", line.c_str());
}

void determinism_criterion(const std::vector<const RunRecord*>& samples) {
    std::size_t same = 0;
    for (const auto* original : samples) {
        std::istringstream is(record_text(*original));
        const auto stored = read_record(is);
        clear_dense_cache();
        const auto again = run_ticket_cycle(stored.config, {"", false});
        const bool census_equal = again.final_census.codes == stored.final_census.codes &&
                                  again.final_census.aligned_margin_mean == stored.final_census.aligned_margin_mean;
        same += again.final_accuracy == stored.final_accuracy && census_equal &&
                record_text(again) == record_text(*original);
    }
    report(same == samples.size() && !samples.empty(), "determinism",
           std::to_string(same) + "/" + std::to_string(samples.size()) + " records re-executed bitwise");
}

Preset only_methods(Preset p, const std::set<std::string>& keep) {
    std::vector<Cell> cells;
    for (auto& c : p.cells)
        if (keep.contains(to_string(c.runs.front().config.method))) cells.push_back(std::move(c));
    p.cells = std::move(cells);
    return p;
}

}  // namespace

int main() {
    const auto t0 = std::chrono::steady_clock::now();
    gradient_check();
    distance_oracle();
    kappa_proposition();
    non_restriction();

    const SweepOptions in_memory{"", 1, false, false};
    const auto ladder = sweep(make_preset("ladder_table1", {5, 0, 0.1, -1}), in_memory);
    ladder_criteria(ladder);

    const auto family = sweep(make_preset("family_appD", {5, 0, 0.1, -1}), in_memory);
    family_criterion(family);

    SweepOptions with_history = in_memory;
    with_history.keep_artifacts = true;
    const auto contraction = sweep(make_preset("contraction_appC", {5, 0, 0.1, -1}), with_history);
    contraction_criterion(contraction);

    const auto cross = sweep(only_methods(make_preset("cross_setting", {3, 0, 0.1, 2}),
                                          {"fs_combined", "snip", "grasp", "synflow"}),
                             in_memory);
    cross_setting_criterion(cross);

    std::vector<const RunRecord*> samples;
    for (const auto* res : {&ladder, &cross}) {
        std::size_t taken = 0;
        for (const auto& [id, rec] : res->records)
            if (rec.complete && rec.mask && taken < 2) {
                samples.push_back(&rec);
                ++taken;
            }
    }
    determinism_criterion(samples);

    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%d failing criteria, %.0f s\n", g_failures, secs);
    return g_failures;
}
