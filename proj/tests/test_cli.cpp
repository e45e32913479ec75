#include <doctest.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "ticketlab/cli.hpp"
#include "ticketlab/harness.hpp"

using namespace ticketlab;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    int code;
    std::string out;
    std::string err;
};

Outcome run(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = run_cli(args, out, err);
    return {code, out.str(), err.str()};
}

std::map<std::string, std::string> key_values(const std::string& text) {
    std::map<std::string, std::string> kv;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        const auto eq = line.find('=');
        if (eq != std::string::npos) kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return kv;
}

fs::path scratch(const std::string& name) {
    const auto dir = fs::temp_directory_path() / ("ticketlab_cli_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

const std::vector<std::string> kTinyRun = {"--clauses", "4",  "--din",   "8",  "--hidden",  "8",  "--epochs", "4",
                                           "--batch",   "32", "--lr",    "0.01", "--n-train", "256", "--n-test", "256"};

std::vector<std::string> with(std::vector<std::string> head, const std::vector<std::string>& tail) {
    head.insert(head.end(), tail.begin(), tail.end());
    return head;
}

}  // namespace

TEST_CASE("help text matches the golden file") {
    const fs::path golden = fs::path(TICKETLAB_GOLDEN_DIR) / "help.txt";
    const auto text = cli_full_help();
    if (std::getenv("TICKETLAB_UPDATE_GOLDEN")) {
        std::ofstream(golden) << text;
    }
    REQUIRE(fs::exists(golden));
    CHECK(text == slurp(golden));
}

TEST_CASE("gen-task writes the generated task") {
    const auto dir = scratch("gen");
    const auto r = run({"--seed", "3", "--out", dir.string(), "gen-task", "--clauses", "8", "--din", "32"});
    REQUIRE(r.code == 0);
    const auto kv = key_values(r.out);
    CHECK(kv.at("clauses") == "8");
    CHECK(kv.at("d_in") == "32");
    CHECK(parse_task(slurp(kv.at("task"))) == generate_dnf(8, 32, OverlapMode::Overlapping, 3));
    fs::remove_all(dir);
}

TEST_CASE("bad invocations exit with status one and usage text") {
    const auto unknown = run({"gen-task", "--bogus"});
    CHECK(unknown.code == 1);
    CHECK(unknown.err.find("Usage") != std::string::npos);
    CHECK(run({}).code == 1);
    CHECK(run({"sweep", "--preset", "nope"}).code == 1);
    const auto dir = scratch("bad");
    CHECK(run(with({"--out", dir.string(), "retrain", "--keep", "2"}, kTinyRun)).code == 1);
    CHECK(run(with({"--out", dir.string(), "retrain", "--rewind", "sideways"}, kTinyRun)).code == 1);
    CHECK(run({"census", "--checkpoint", (dir / "missing.ckpt").string(), "--task", (dir / "t").string()}).code == 1);
    CHECK(run({"--help"}).code == 0);
    fs::remove_all(dir);
}

TEST_CASE("numeric failure exits with status two") {
    const auto dir = scratch("numeric");
    auto args = with({"--out", dir.string(), "train-dense"}, kTinyRun);
    *(std::find(args.begin(), args.end(), "--lr") + 1) = "1e308";
    const auto r = run(args);
    CHECK(r.code == 2);
    CHECK(r.err.find("numeric") != std::string::npos);
    fs::remove_all(dir);
}

TEST_CASE("retrain, census and metrics agree with the library") {
    const auto dir = scratch("cycle");
    const auto dense = run(with({"--out", dir.string(), "train-dense"}, kTinyRun));
    REQUIRE(dense.code == 0);
    const auto sparse = run(with({"--out", dir.string(), "retrain", "--method", "magnitude", "--keep", "0.5"}, kTinyRun));
    REQUIRE(sparse.code == 0);
    const auto d = key_values(dense.out), s = key_values(sparse.out);
    CHECK(s.at("kept") == "32");

    const auto rec = load_record(s.at("record"));
    CHECK(rec.complete);
    CHECK(rec.config.keep == 0.5);
    CHECK(std::to_string(rec.final_census.code_count()) == s.at("codes"));

    const auto m = run({"metrics", "--run", s.at("record"), "--ref", d.at("record")});
    REQUIRE(m.code == 0);
    const auto mk = key_values(m.out);
    REQUIRE(mk.contains("accuracy"));
    CHECK(std::stod(mk.at("accuracy")) == doctest::Approx(rec.final_accuracy));
    if (mk.contains("same_site_recall")) {
        const double recall = std::stod(mk.at("same_site_recall"));
        CHECK(recall >= 0.0);
        CHECK(recall <= 1.0);
    }

    fs::path ckpt = dir / "checkpoints" / s.at("run_id") / "sparse" / "epoch_4.ckpt";
    REQUIRE(fs::exists(ckpt));
    std::ofstream(dir / "task.dnf") << rec.task_text;
    const auto csv = dir / "census.csv";
    const auto c = run({"census", "--checkpoint", ckpt.string(), "--task", (dir / "task.dnf").string(), "--csv",
                        csv.string()});
    REQUIRE(c.code == 0);
    CHECK(key_values(c.out).at("codes") == s.at("codes"));
    CHECK(fs::exists(csv));
    fs::remove_all(dir);
}

TEST_CASE("config file values override flags") {
    const auto dir = scratch("config");
    const auto cfg = dir / "run.cfg";
    std::ofstream(cfg) << "# overrides\nrun.keep = 0.25\nper-site-k=2\n";
    const auto r = run(with({"--out", dir.string(), "--config", cfg.string(), "make-mask", "--method", "magnitude",
                             "--keep", "0.75"},
                            kTinyRun));
    REQUIRE(r.code == 0);
    CHECK(key_values(r.out).at("kept") == "16");  // 8 rows x 2 of 8 coordinates
    std::ofstream(cfg) << "wobble=1\n";
    CHECK(run(with({"--out", dir.string(), "--config", cfg.string(), "make-mask"}, kTinyRun)).code == 1);
    fs::remove_all(dir);
}
