#include "ticketlab/embedding.hpp"

#include <cmath>

#include "ticketlab/errors.hpp"
#include "ticketlab/rng.hpp"

namespace ticketlab {

std::string to_string(EmbeddingKind kind) {
    switch (kind) {
        case EmbeddingKind::Hadamard: return "hadamard";
        case EmbeddingKind::RandomFixed: return "random_fixed";
        case EmbeddingKind::Learned: return "learned";
        case EmbeddingKind::Identity: return "identity";
    }
    return "?";
}

EmbeddingKind parse_embedding_kind(const std::string& name) {
    if (name == "hadamard") return EmbeddingKind::Hadamard;
    if (name == "random_fixed" || name == "random") return EmbeddingKind::RandomFixed;
    if (name == "learned") return EmbeddingKind::Learned;
    if (name == "identity") return EmbeddingKind::Identity;
    throw ConfigError("unknown embedding kind '" + name + "'");
}

Matrix sylvester_hadamard(std::size_t n) {
    if (n == 0 || (n & (n - 1)) != 0) throw ConfigError("hadamard embedding needs a power-of-two dimension");
    Matrix h(1, 1, 1.0);
    while (h.rows < n) {
        const std::size_t m = h.rows;
        Matrix next(2 * m, 2 * m);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < m; ++j) {
                next(i, j) = h(i, j);
                next(i, j + m) = h(i, j);
                next(i + m, j) = h(i, j);
                next(i + m, j + m) = -h(i, j);
            }
        h = std::move(next);
    }
    const double scale = 1.0 / std::sqrt(static_cast<double>(n));
    for (auto& v : h.data) v *= scale;
    return h;
}

Embedding make_embedding(EmbeddingKind kind, std::size_t d_in, std::uint64_t seed) {
    if (d_in == 0) throw ConfigError("embedding dimension must be positive");
    Embedding e;
    e.kind = kind;
    e.trainable = kind == EmbeddingKind::Learned;
    switch (kind) {
        case EmbeddingKind::Identity: e.c0 = Matrix::identity(d_in); break;
        case EmbeddingKind::Hadamard: e.c0 = sylvester_hadamard(d_in); break;
        case EmbeddingKind::RandomFixed:
        case EmbeddingKind::Learned: {
            Rng rng(derive_seed(seed, "embedding"));
            e.c0 = Matrix(d_in, d_in);
            const double sd = 1.0 / std::sqrt(static_cast<double>(d_in));
            for (auto& v : e.c0.data) v = rng.normal(sd);
            break;
        }
    }
    return e;
}

}  // namespace ticketlab
