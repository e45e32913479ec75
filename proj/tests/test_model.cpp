#include <doctest.h>

#include <cmath>
#include <numeric>
#include <sstream>

#include "oracles.hpp"
#include "ticketlab/errors.hpp"
#include "ticketlab/featurespace.hpp"
#include "ticketlab/model.hpp"
#include "ticketlab/translate.hpp"

using namespace ticketlab;

namespace {

ModelParams zero_params(std::size_t d, std::size_t h) {
    ModelParams p;
    p.embedding = make_embedding(EmbeddingKind::Identity, d, 0);
    p.w1 = Matrix(h, d);
    p.b1.assign(h, 0.0);
    p.w2.assign(h, 0.0);
    return p;
}

std::vector<std::size_t> all_indices(const Dataset& d) {
    std::vector<std::size_t> idx(d.n);
    std::iota(idx.begin(), idx.end(), 0);
    return idx;
}

TrainConfig quick(int epochs, std::uint64_t seed) {
    TrainConfig tc;
    tc.epochs = epochs;
    tc.batch_size = 64;
    tc.seed = seed;
    tc.every_epoch = true;
    return tc;
}

}  // namespace

TEST_CASE("forward on hand-built parameters") {
    auto p = zero_params(4, 4);
    p.b2 = -0.25;
    const std::vector<std::uint8_t> x{1, 0, 1, 1};
    CHECK(forward(p, x).logit == -0.25);

    p = zero_params(4, 4);
    p.w1 = Matrix::identity(4);
    p.w2.assign(4, 1.0);
    const std::vector<std::uint8_t> e0{1, 0, 0, 0};
    CHECK(forward(p, e0).logit == 1.0);
}

TEST_CASE("forward agrees with the naive loop on random instances") {
    for (std::uint64_t seed = 0; seed < 8; ++seed) {
        auto p = init_params(make_embedding(static_cast<EmbeddingKind>(seed % 4), 16, seed), 12, seed);
        Rng rng(seed);
        for (auto& b : p.b1) b = rng.normal(0.2);
        const auto task = generate_dnf(4, 16, OverlapMode::Overlapping, seed);
        const auto data = sample_dataset(task, 20, seed);
        for (std::size_t i = 0; i < data.n; ++i)
            CHECK(forward(p, data.row(i)).logit == doctest::Approx(oracle::naive_logit(p, data.row(i))).epsilon(1e-12));
    }
}

TEST_CASE("zero model has loss ln 2 on a balanced batch") {
    const auto task = generate_dnf(2, 8, OverlapMode::Overlapping, 0);
    const auto data = sample_dataset(task, 64, 0);
    const auto r = loss_and_grads(zero_params(8, 4), data);
    CHECK(std::abs(r.loss - std::log(2.0)) < 1e-12);
}

TEST_CASE("analytic gradients match central differences on random draws") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto gc = oracle::gradient_check_draw(seed);
        CAPTURE(seed);
        CHECK(gc.entries > 0);
        CHECK(gc.max_rel < 1e-4);
    }
}

TEST_CASE("masked gradients vanish outside the support") {
    auto p = init_params(make_embedding(EmbeddingKind::Hadamard, 16, 1), 8, 1);
    const auto data = sample_dataset(generate_dnf(4, 16, OverlapMode::Overlapping, 1), 50, 1);
    const auto mask = random_mask(8, 16, 0.25, 3);
    const auto g = loss_and_grads(p, data, &mask).grads;
    for (std::size_t k = 0; k < mask.bits.size(); ++k)
        if (!mask.bits[k]) CHECK(g.w1.data[k] == 0.0);
}

TEST_CASE("Adam: zero gradient leaves parameters unchanged") {
    auto p = init_params(make_embedding(EmbeddingKind::Identity, 8, 0), 4, 0);
    const auto before = p;
    auto st = AdamState::zeros_like(p);
    adam_step(st, p, Gradients::zeros_like(p), AdamHyper{});
    CHECK(p == before);
}

TEST_CASE("Adam: closed-form first and second steps on a constant gradient") {
    auto p = zero_params(1, 1);
    auto st = AdamState::zeros_like(p);
    auto g = Gradients::zeros_like(p);
    g.b2 = 1.0;
    AdamHyper hp;
    hp.lr = 0.1;
    adam_step(st, p, g, hp);
    // m_hat = 1, v_hat = 1, so the step is lr / (1 + eps).
    CHECK(p.b2 == doctest::Approx(-0.1 / (1.0 + hp.eps)).epsilon(1e-15));
    adam_step(st, p, g, hp);
    CHECK(p.b2 == doctest::Approx(-0.2 / (1.0 + hp.eps)).epsilon(1e-12));
    CHECK(st.step == 2);
}

TEST_CASE("Adam: masked coordinates with stale moments stay at zero") {
    auto p = init_params(make_embedding(EmbeddingKind::Identity, 4, 0), 2, 0);
    auto st = AdamState::zeros_like(p);
    for (auto& m : st.m.w1.data) m = 0.5;
    for (auto& v : st.v.w1.data) v = 0.25;
    Mask mask(2, 4, 0.5, true);
    mask.set(0, 0, false);
    mask.set(0, 1, false);
    mask.set(1, 2, false);
    mask.set(1, 3, false);
    for (std::size_t k = 0; k < mask.bits.size(); ++k)
        if (!mask.bits[k]) p.w1.data[k] = 0.0;
    auto g = Gradients::zeros_like(p);
    for (auto& v : g.w1.data) v = 1.0;
    adam_step(st, p, g, AdamHyper{}, &mask);
    for (std::size_t k = 0; k < mask.bits.size(); ++k)
        if (!mask.bits[k]) {
            CHECK(p.w1.data[k] == 0.0);
            CHECK(st.m.w1.data[k] == 0.0);
            CHECK(st.v.w1.data[k] == 0.0);
        }
}

TEST_CASE("a single AND clause is learned") {
    const auto task = generate_dnf(1, 4, OverlapMode::ReadOnce, 0);
    const auto tr = sample_dataset(task, 2000, 1);
    const auto te = sample_dataset(task, 1000, 2);
    auto p = init_params(make_embedding(EmbeddingKind::Identity, 4, 0), 16, 0);
    const auto r = train(p, tr, te, quick(30, 0));
    CHECK(accuracy(r.final_params, te) >= 0.95);
}

TEST_CASE("training is deterministic and masked support is preserved exactly") {
    const auto task = generate_dnf(8, 16, OverlapMode::Overlapping, 4);
    const auto tr = sample_dataset(task, 400, 1);
    const auto te = sample_dataset(task, 200, 2);
    const auto p0 = init_params(make_embedding(EmbeddingKind::RandomFixed, 16, 4), 16, 4);
    const auto a = train(p0, tr, te, quick(3, 9));
    const auto b = train(p0, tr, te, quick(3, 9));
    CHECK(a.final_params == b.final_params);
    CHECK(a.checkpoints.size() == 4);
    CHECK(a.metrics.size() == 4);

    const auto mask = random_mask(16, 16, 0.25, 2);
    const auto start = apply_mask_rewind(Checkpoint{0, p0}, mask);
    const auto m = train(start, tr, te, quick(3, 9), &mask);
    for (const auto& ck : m.checkpoints)
        for (std::size_t k = 0; k < mask.bits.size(); ++k)
            if (!mask.bits[k]) CHECK(ck.params.w1.data[k] == 0.0);
    CHECK(m.final_params.embedding == p0.embedding);
}

TEST_CASE("rewinding: all-ones mask, zero row, and whole-row distortion") {
    const auto p = init_params(make_embedding(EmbeddingKind::Hadamard, 8, 3), 6, 3);
    const Checkpoint ck{5, p};
    CHECK(apply_mask_rewind(ck, Mask::ones(6, 8)) == p);

    Mask one_row_off = Mask::ones(6, 8);
    for (std::size_t j = 0; j < 8; ++j) one_row_off.set(2, j, false);
    const auto c1 = compute_c1(apply_mask_rewind(ck, one_row_off));
    for (std::size_t j = 0; j < 8; ++j) CHECK(c1(2, j) == 0.0);

    // In a non-identity basis, masking W1 is not an entrywise mask on C1.
    const auto mask = random_mask(6, 8, 0.5, 1);
    const auto dense_c1 = compute_c1(p);
    const auto masked_c1 = compute_c1(apply_mask_rewind(ck, mask));
    double max_gap = 0.0;
    for (std::size_t k = 0; k < dense_c1.size(); ++k)
        max_gap = std::max(max_gap, std::abs(masked_c1.data[k] - mask.bits[k] * dense_c1.data[k]));
    CHECK(max_gap > 1e-3);
}

TEST_CASE("fresh random rewind keeps the support and redraws values") {
    const auto p = init_params(make_embedding(EmbeddingKind::Hadamard, 8, 3), 6, 3);
    const auto mask = random_mask(6, 8, 0.5, 1);
    const auto f = fresh_random_rewind(p, mask, 7);
    for (std::size_t k = 0; k < mask.bits.size(); ++k) {
        if (!mask.bits[k]) CHECK(f.w1.data[k] == 0.0);
        else CHECK(f.w1.data[k] != p.w1.data[k]);
    }
    CHECK(f.embedding == p.embedding);
    CHECK(f == fresh_random_rewind(p, mask, 7));
}

TEST_CASE("initialization scale and seeding") {
    const auto a = init_params(make_embedding(EmbeddingKind::Identity, 64, 0), 256, 5);
    double sq = 0.0;
    for (double v : a.w1.data) sq += v * v;
    CHECK(sq / static_cast<double>(a.w1.size()) == doctest::Approx(1.0 / 64).epsilon(0.1));
    for (double b : a.b1) CHECK(b == 0.0);
    CHECK(a.b2 == 0.0);
    CHECK(a == init_params(make_embedding(EmbeddingKind::Identity, 64, 0), 256, 5));
}

TEST_CASE("row budget and mask validation") {
    CHECK(row_budget(0.5, 16) == 8);
    CHECK(row_budget(0.25, 16) == 4);
    CHECK(row_budget(1.0, 7) == 7);
    CHECK_THROWS_AS(row_budget(0.0, 16), ConfigError);
    Mask m(2, 4, 0.5, false);
    m.set(0, 0, true);
    m.set(0, 1, true);
    m.set(1, 3, true);
    CHECK_THROWS_AS(validate_row_budget(m), InputError);
    m.set(1, 2, true);
    CHECK_NOTHROW(validate_row_budget(m));
    CHECK(m.count() == 4);
    CHECK(m.row_count(1) == 2);
}

TEST_CASE("Hessian-vector product matches differences of gradients") {
    auto p = init_params(make_embedding(EmbeddingKind::Learned, 8, 2), 6, 2);
    Rng rng(4);
    for (auto& b : p.b1) b = rng.normal(0.3);
    const auto data = sample_dataset(generate_dnf(2, 8, OverlapMode::Overlapping, 2), 40, 2);
    const auto idx = all_indices(data);
    auto v = Gradients::zeros_like(p);
    for (auto& x : v.w1.data) x = rng.normal();
    for (auto& x : v.c0.data) x = rng.normal();
    for (auto& x : v.w2) x = rng.normal();
    const auto hv = hessian_vector_product(p, data, idx, v);
    const double eps = 1e-5;
    const auto up = loss_and_grads(shifted(p, v, eps), data, idx).grads;
    const auto dn = loss_and_grads(shifted(p, v, -eps), data, idx).grads;
    const auto a = oracle::flat_grads(hv, true);
    const auto u = oracle::flat_grads(up, true);
    const auto w = oracle::flat_grads(dn, true);
    for (std::size_t k = 0; k < a.size(); ++k)
        CHECK(oracle::relative_error(a[k], (u[k] - w[k]) / (2 * eps), 1e-4) < 1e-3);
}

TEST_CASE("non-finite loss raises a numeric error") {
    auto p = init_params(make_embedding(EmbeddingKind::Identity, 8, 0), 4, 0);
    p.b2 = std::numeric_limits<double>::quiet_NaN();
    const auto data = sample_dataset(generate_dnf(2, 8, OverlapMode::Overlapping, 0), 16, 0);
    CHECK_THROWS_AS(loss_and_grads(p, data), NumericError);
}

TEST_CASE("checkpoint round trip is bitwise and rejects corrupt input") {
    auto p = init_params(make_embedding(EmbeddingKind::Learned, 16, 8), 32, 8);
    p.b1[3] = -1.0 / 3.0;
    p.b2 = 1e-300;
    const Checkpoint ck{7, p};
    std::stringstream ss;
    write_checkpoint(ss, ck);
    CHECK(read_checkpoint(ss) == ck);
    std::stringstream bad("ckpt v1; h=2; d=4; d_in=4; kind=identity; epoch=0\nshort");
    CHECK_THROWS_AS(read_checkpoint(bad), InputError);
    std::stringstream junk("not a checkpoint");
    CHECK_THROWS_AS(read_checkpoint(junk), InputError);
}
