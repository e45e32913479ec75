#include "ticketlab/task.hpp"

#include <algorithm>
#include <numeric>
#include <set>
#include <sstream>

#include "ticketlab/errors.hpp"
#include "ticketlab/rng.hpp"

namespace ticketlab {

namespace {

constexpr int kMaxClauseAttempts = 10000;

bool clause_fires(const Clause& c, std::span<const std::uint8_t> x) {
    return x[c[0]] && x[c[1]] && x[c[2]] && x[c[3]];
}

std::string trim(const std::string& s) {
    auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

}  // namespace

std::string to_string(OverlapMode mode) {
    return mode == OverlapMode::ReadOnce ? "read_once" : "overlapping";
}

OverlapMode parse_overlap_mode(const std::string& name) {
    if (name == "read_once" || name == "read-once") return OverlapMode::ReadOnce;
    if (name == "overlapping") return OverlapMode::Overlapping;
    throw ConfigError("unknown overlap mode '" + name + "'");
}

void validate(const DnfTask& task) {
    if (task.clauses.empty()) throw InputError("task has no clauses");
    for (const auto& c : task.clauses) {
        for (std::size_t r = 0; r < kClauseSize; ++r) {
            if (c[r] >= task.d_in) throw InputError("clause literal out of range");
            if (r > 0 && c[r] <= c[r - 1]) throw InputError("clause literals must be strictly ascending");
        }
    }
    for (std::size_t i = 1; i < task.clauses.size(); ++i)
        if (!(task.clauses[i - 1] < task.clauses[i])) throw InputError("clauses must be sorted and unique");
    if (task.mode == OverlapMode::ReadOnce) {
        std::set<std::size_t> seen;
        for (const auto& c : task.clauses)
            for (auto v : c)
                if (!seen.insert(v).second) throw InputError("read-once task reuses a literal");
    }
}

std::size_t default_d_in(std::size_t num_clauses, OverlapMode mode) {
    if (mode == OverlapMode::ReadOnce) return kClauseSize * num_clauses;
    std::size_t want = std::max<std::size_t>(2 * num_clauses, kClauseSize);
    std::size_t p = 1;
    while (p < want) p <<= 1;
    // k distinct 4-subsets need C(p, 4) >= k; only binds for k = 2, 3.
    auto subsets = [](std::size_t n) { return n * (n - 1) * (n - 2) * (n - 3) / 24; };
    while (subsets(p) < num_clauses) p <<= 1;
    return p;
}

DnfTask generate_dnf(std::size_t num_clauses, std::size_t d_in, OverlapMode mode, std::uint64_t seed) {
    if (num_clauses < 1) throw ConfigError("generate_dnf: need at least one clause");
    if (d_in < kClauseSize) throw ConfigError("generate_dnf: d_in must be at least 4");
    if (mode == OverlapMode::ReadOnce && kClauseSize * num_clauses > d_in)
        throw ConfigError("generate_dnf: read-once budget exceeded (4k > d_in)");

    Rng rng(derive_seed(seed, "task"));
    DnfTask task;
    task.d_in = d_in;
    task.mode = mode;

    if (mode == OverlapMode::ReadOnce) {
        std::vector<std::size_t> perm(d_in);
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng.engine());
        for (std::size_t k = 0; k < num_clauses; ++k) {
            Clause c;
            std::copy_n(perm.begin() + static_cast<std::ptrdiff_t>(k * kClauseSize), kClauseSize, c.begin());
            std::sort(c.begin(), c.end());
            task.clauses.push_back(c);
        }
    } else {
        std::set<Clause> chosen;
        std::vector<std::size_t> pool(d_in);
        for (std::size_t k = 0; k < num_clauses; ++k) {
            bool placed = false;
            for (int attempt = 0; attempt < kMaxClauseAttempts && !placed; ++attempt) {
                // partial Fisher-Yates: first four entries are a uniform 4-subset
                std::iota(pool.begin(), pool.end(), 0);
                for (std::size_t r = 0; r < kClauseSize; ++r) std::swap(pool[r], pool[r + rng.index(d_in - r)]);
                Clause c;
                std::copy_n(pool.begin(), kClauseSize, c.begin());
                std::sort(c.begin(), c.end());
                placed = chosen.insert(c).second;
            }
            if (!placed) throw ConfigError("generate_dnf: could not draw enough distinct clauses");
        }
        task.clauses.assign(chosen.begin(), chosen.end());
    }
    std::sort(task.clauses.begin(), task.clauses.end());
    return task;
}

bool eval_dnf(const DnfTask& task, std::span<const std::uint8_t> x) {
    if (x.size() != task.d_in) throw InputError("eval_dnf: input has wrong dimension");
    return std::any_of(task.clauses.begin(), task.clauses.end(),
                       [&](const Clause& c) { return clause_fires(c, x); });
}

double Dataset::positive_fraction() const {
    if (n == 0) return 0.0;
    std::size_t pos = std::count(labels.begin(), labels.end(), std::uint8_t{1});
    return static_cast<double>(pos) / static_cast<double>(n);
}

Dataset sample_dataset(const DnfTask& task, std::size_t n, std::uint64_t seed) {
    if (n < 1) throw ConfigError("sample_dataset: n must be positive");
    Rng rng(derive_seed(seed, "dataset"));
    Dataset ds;
    ds.n = n;
    ds.d_in = task.d_in;
    ds.inputs.assign(n * task.d_in, 0);
    ds.labels.assign(n, 0);

    std::vector<std::uint8_t> x(task.d_in);
    for (std::size_t i = 0; i < n; ++i) {
        const bool want_positive = rng.coin();
        for (auto& b : x) b = rng.coin() ? 1 : 0;
        if (want_positive) {
            if (!eval_dnf(task, x)) {
                const auto& c = task.clauses[rng.index(task.clauses.size())];
                for (auto v : c) x[v] = 1;
            }
        } else {
            for (;;) {
                auto it = std::find_if(task.clauses.begin(), task.clauses.end(),
                                       [&](const Clause& c) { return clause_fires(c, x); });
                if (it == task.clauses.end()) break;
                x[(*it)[rng.index(kClauseSize)]] = 0;
            }
        }
        std::copy(x.begin(), x.end(), ds.inputs.begin() + static_cast<std::ptrdiff_t>(i * task.d_in));
        ds.labels[i] = want_positive ? 1 : 0;
    }
    return ds;
}

std::string serialize_task(const DnfTask& task) {
    std::ostringstream os;
    os << "dnf v1; d_in=" << task.d_in << "; mode=" << to_string(task.mode) << "; clauses=[";
    for (std::size_t k = 0; k < task.clauses.size(); ++k) {
        if (k) os << ',';
        const auto& c = task.clauses[k];
        os << '[' << c[0] << ',' << c[1] << ',' << c[2] << ',' << c[3] << ']';
    }
    os << ']';
    return os.str();
}

DnfTask parse_task(const std::string& text) {
    const std::string line = trim(text);
    if (line.rfind("dnf v1;", 0) != 0) throw InputError("task record must start with 'dnf v1;'");
    DnfTask task;
    bool have_din = false, have_mode = false, have_clauses = false;
    std::size_t pos = 7;
    while (pos < line.size()) {
        auto semi = line.find(';', pos);
        // the clause list contains no ';', so splitting on it is safe
        std::string field = trim(line.substr(pos, semi == std::string::npos ? std::string::npos : semi - pos));
        pos = semi == std::string::npos ? line.size() : semi + 1;
        if (field.empty()) continue;
        auto eq = field.find('=');
        if (eq == std::string::npos) throw InputError("task record field without '=': " + field);
        std::string key = trim(field.substr(0, eq));
        std::string value = trim(field.substr(eq + 1));
        if (key == "d_in") {
            task.d_in = std::stoul(value);
            have_din = true;
        } else if (key == "mode") {
            task.mode = parse_overlap_mode(value);
            have_mode = true;
        } else if (key == "clauses") {
            std::string digits;
            std::vector<std::size_t> nums;
            for (char ch : value) {
                if (ch >= '0' && ch <= '9') {
                    digits.push_back(ch);
                } else {
                    if (!digits.empty()) nums.push_back(std::stoul(digits));
                    digits.clear();
                    if (ch != '[' && ch != ']' && ch != ',' && ch != ' ')
                        throw InputError("unexpected character in clause list");
                }
            }
            if (nums.size() % kClauseSize != 0) throw InputError("clause list length not a multiple of 4");
            for (std::size_t i = 0; i < nums.size(); i += kClauseSize)
                task.clauses.push_back({nums[i], nums[i + 1], nums[i + 2], nums[i + 3]});
            have_clauses = true;
        } else {
            throw InputError("unknown task record field '" + key + "'");
        }
    }
    if (!have_din || !have_mode || !have_clauses) throw InputError("task record is missing fields");
    validate(task);
    return task;
}

}  // namespace ticketlab
