#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace ticketlab {

inline constexpr std::size_t kClauseSize = 4;

using Clause = std::array<std::size_t, kClauseSize>;

enum class OverlapMode { ReadOnce, Overlapping };

std::string to_string(OverlapMode mode);
/// Accepts "read_once"/"read-once" and "overlapping".
OverlapMode parse_overlap_mode(const std::string& name);

/// Monotone DNF over `d_in` Boolean literals with clauses of exactly four
/// literals. Clauses are ascending, the list is sorted and duplicate-free.
struct DnfTask {
    std::vector<Clause> clauses;
    std::size_t d_in = 0;
    OverlapMode mode = OverlapMode::ReadOnce;

    std::size_t num_clauses() const { return clauses.size(); }
    friend bool operator==(const DnfTask&, const DnfTask&) = default;
};

/// Throws InputError if any DnfTask invariant is broken.
void validate(const DnfTask& task);

/// Deterministic in all arguments. Read-once mode partitions a random
/// permutation; overlapping mode rejection-samples distinct 4-subsets
/// (at most 10^4 attempts per clause before a ConfigError).
DnfTask generate_dnf(std::size_t num_clauses, std::size_t d_in, OverlapMode mode, std::uint64_t seed);

/// Default input width: 4k for read-once; otherwise 2k rounded up to a power of
/// two, doubled while fewer than k distinct 4-subsets exist.
std::size_t default_d_in(std::size_t num_clauses, OverlapMode mode);

bool eval_dnf(const DnfTask& task, std::span<const std::uint8_t> x);

/// Row-major n x d_in Boolean inputs with their labels.
struct Dataset {
    std::size_t n = 0;
    std::size_t d_in = 0;
    std::vector<std::uint8_t> inputs;
    std::vector<std::uint8_t> labels;

    std::span<const std::uint8_t> row(std::size_t i) const { return {inputs.data() + i * d_in, d_in}; }
    double positive_fraction() const;
};

/// Balanced sampler. Each row first draws its target label with a fair coin.
/// Positive rows: uniform draw, and if no clause fires, one uniformly chosen
/// clause is switched fully on. Negative rows: uniform draw, then while some
/// clause fires, one uniformly chosen literal of the first firing clause is
/// cleared.
Dataset sample_dataset(const DnfTask& task, std::size_t n, std::uint64_t seed);

/// `dnf v1; d_in=<n>; mode=<m>; clauses=[[i,i,i,i],...]`
std::string serialize_task(const DnfTask& task);
DnfTask parse_task(const std::string& text);

}  // namespace ticketlab
