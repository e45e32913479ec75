#pragma once

#include <cstdint>
#include <string>

#include "ticketlab/linalg.hpp"

namespace ticketlab {

enum class EmbeddingKind { Hadamard, RandomFixed, Learned, Identity };

std::string to_string(EmbeddingKind kind);
EmbeddingKind parse_embedding_kind(const std::string& name);

/// Square embedding C0 (d x d_in with d == d_in). Only the learned kind is trainable.
struct Embedding {
    Matrix c0;
    EmbeddingKind kind = EmbeddingKind::Identity;
    bool trainable = false;

    std::size_t dim() const { return c0.rows; }
    friend bool operator==(const Embedding&, const Embedding&) = default;
};

/// Sylvester Hadamard matrix of order n scaled by 1/sqrt(n). n must be a power of two.
Matrix sylvester_hadamard(std::size_t n);

/// random_fixed draws N(0, 1/d) entries; learned starts from the same draw.
Embedding make_embedding(EmbeddingKind kind, std::size_t d_in, std::uint64_t seed);

}  // namespace ticketlab
