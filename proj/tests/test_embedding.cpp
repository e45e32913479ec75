#include <doctest.h>

#include <cmath>

#include "ticketlab/embedding.hpp"
#include "ticketlab/errors.hpp"
#include "ticketlab/harness.hpp"

using namespace ticketlab;

TEST_CASE("identity embedding") {
    const auto e = make_embedding(EmbeddingKind::Identity, 4, 123);
    CHECK(e.c0 == Matrix::identity(4));
    CHECK_FALSE(e.trainable);
}

TEST_CASE("Hadamard of order four is orthonormal with entries of magnitude one half") {
    const auto e = make_embedding(EmbeddingKind::Hadamard, 4, 0);
    for (double v : e.c0.data) CHECK(std::abs(v) == doctest::Approx(0.5));
    CHECK(max_abs_diff(matmul(e.c0, transpose(e.c0)), Matrix::identity(4)) < 1e-12);
    CHECK(e.c0(0, 0) == 0.5);
    CHECK(e.c0(1, 1) == -0.5);
}

TEST_CASE("Hadamard is orthonormal at every supported order") {
    for (std::size_t n : {1u, 2u, 8u, 16u, 32u, 64u}) {
        const auto h = sylvester_hadamard(n);
        CHECK(max_abs_diff(matmul(h, transpose(h)), Matrix::identity(n)) < 1e-12);
    }
}

TEST_CASE("Hadamard rejects non powers of two") {
    CHECK_THROWS_AS(make_embedding(EmbeddingKind::Hadamard, 12, 0), ConfigError);
    CHECK_THROWS_AS(sylvester_hadamard(0), ConfigError);
}

TEST_CASE("random embedding is seeded and scaled") {
    const auto a = make_embedding(EmbeddingKind::RandomFixed, 64, 5);
    const auto b = make_embedding(EmbeddingKind::RandomFixed, 64, 5);
    const auto c = make_embedding(EmbeddingKind::RandomFixed, 64, 6);
    CHECK(a == b);
    CHECK(a.c0 != c.c0);
    CHECK_FALSE(a.trainable);
    double sq = 0.0;
    for (double v : a.c0.data) sq += v * v;
    CHECK(sq / 64.0 == doctest::Approx(1.0).epsilon(0.1));  // mean squared row norm
    const auto l = make_embedding(EmbeddingKind::Learned, 64, 5);
    CHECK(l.trainable);
    CHECK(l.c0 == a.c0);
    CHECK(a.c0.rows == a.c0.cols);
}

TEST_CASE("frozen embeddings are untouched by training while the learned one moves") {
    for (auto kind : {EmbeddingKind::Hadamard, EmbeddingKind::RandomFixed, EmbeddingKind::Identity,
                      EmbeddingKind::Learned}) {
        RunConfig cfg;
        cfg.embedding = kind;
        cfg.method = Method::Dense;
        cfg.epochs = 2;
        cfg.n_train = 300;
        cfg.n_test = 100;
        const auto dense = dense_phase(cfg);
        const auto& first = dense->result.checkpoints.front().params.embedding.c0;
        const auto& last = dense->result.final_params.embedding.c0;
        if (kind == EmbeddingKind::Learned)
            CHECK(first != last);
        else
            CHECK(first == last);
    }
}

TEST_CASE("embedding names round trip") {
    for (auto kind : {EmbeddingKind::Hadamard, EmbeddingKind::RandomFixed, EmbeddingKind::Learned,
                      EmbeddingKind::Identity})
        CHECK(parse_embedding_kind(to_string(kind)) == kind);
    CHECK_THROWS_AS(parse_embedding_kind("fourier"), ConfigError);
}
