#include "ticketlab/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include "ticketlab/rng.hpp"

namespace ticketlab {

namespace {

double sigmoid(double z) {
    if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

double bce_with_logits(double z, double y) {
    return std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
}

/// Scratch buffers for one sample's forward pass.
struct SampleState {
    std::vector<std::size_t> active;
    std::vector<double> xp;   // C0 x
    std::vector<double> pre;  // W1 x' + b1
    std::vector<double> act;  // ReLU(pre)
    double logit = 0.0;
};

void forward_sample(const ModelParams& p, std::span<const std::uint8_t> x, SampleState& s) {
    const std::size_t d = p.dim();
    const std::size_t h = p.hidden();
    s.active.clear();
    for (std::size_t l = 0; l < x.size(); ++l)
        if (x[l]) s.active.push_back(l);
    s.xp.assign(d, 0.0);
    for (std::size_t j = 0; j < d; ++j) {
        auto crow = p.embedding.c0.row(j);
        double acc = 0.0;
        for (auto l : s.active) acc += crow[l];
        s.xp[j] = acc;
    }
    s.pre.resize(h);
    s.act.resize(h);
    double z = p.b2;
    for (std::size_t r = 0; r < h; ++r) {
        auto wrow = p.w1.row(r);
        double acc = p.b1[r];
        for (std::size_t j = 0; j < d; ++j) acc += wrow[j] * s.xp[j];
        s.pre[r] = acc;
        s.act[r] = acc > 0.0 ? acc : 0.0;
        z += p.w2[r] * s.act[r];
    }
    s.logit = z;
}

void check_input(const ModelParams& p, std::size_t width) {
    if (width != p.d_in()) throw InputError("input dimension does not match the embedding");
}

void put_f64(std::ostream& os, double v) {
    std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
    char buf[8];
    std::memcpy(buf, &bits, 8);
    os.write(buf, 8);
}

double get_f64(std::istream& is) {
    char buf[8];
    if (!is.read(buf, 8)) throw InputError("checkpoint payload truncated");
    std::uint64_t bits;
    std::memcpy(&bits, buf, 8);
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
    return std::bit_cast<double>(bits);
}

}  // namespace

ModelParams init_params(Embedding embedding, std::size_t hidden, std::uint64_t seed) {
    ModelParams p;
    const std::size_t d = embedding.dim();
    p.embedding = std::move(embedding);
    p.w1 = Matrix(hidden, d);
    p.b1.assign(hidden, 0.0);
    p.w2.assign(hidden, 0.0);
    Rng rng(derive_seed(seed, "init"));
    const double sd = 1.0 / std::sqrt(static_cast<double>(d));
    for (auto& v : p.w1.data) v = rng.normal(sd);
    for (auto& v : p.w2) v = rng.normal(sd);
    return p;
}

std::size_t Mask::row_count(std::size_t r) const {
    return static_cast<std::size_t>(std::count(bits.begin() + static_cast<std::ptrdiff_t>(r * cols),
                                               bits.begin() + static_cast<std::ptrdiff_t>((r + 1) * cols), 1));
}

std::size_t Mask::count() const { return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), 1)); }

std::size_t row_budget(double keep_fraction, std::size_t d) {
    if (!(keep_fraction > 0.0 && keep_fraction <= 1.0)) throw ConfigError("keep fraction must lie in (0, 1]");
    return static_cast<std::size_t>(std::lround(keep_fraction * static_cast<double>(d)));
}

void validate_row_budget(const Mask& mask) {
    const std::size_t budget = row_budget(mask.keep_fraction, mask.cols);
    for (std::size_t r = 0; r < mask.rows; ++r)
        if (mask.row_count(r) != budget) throw InputError("mask row " + std::to_string(r) + " violates the row budget");
}

Gradients Gradients::zeros_like(const ModelParams& p) {
    Gradients g;
    g.c0 = Matrix(p.embedding.c0.rows, p.embedding.c0.cols);
    g.w1 = Matrix(p.w1.rows, p.w1.cols);
    g.b1.assign(p.b1.size(), 0.0);
    g.w2.assign(p.w2.size(), 0.0);
    return g;
}

double Gradients::dot(const Gradients& o) const {
    double s = b2 * o.b2;
    for (std::size_t i = 0; i < c0.size(); ++i) s += c0.data[i] * o.c0.data[i];
    for (std::size_t i = 0; i < w1.size(); ++i) s += w1.data[i] * o.w1.data[i];
    for (std::size_t i = 0; i < b1.size(); ++i) s += b1[i] * o.b1[i];
    for (std::size_t i = 0; i < w2.size(); ++i) s += w2[i] * o.w2[i];
    return s;
}

ModelParams shifted(const ModelParams& params, const Gradients& dir, double scale) {
    ModelParams p = params;
    if (p.embedding.trainable)
        for (std::size_t i = 0; i < p.embedding.c0.size(); ++i) p.embedding.c0.data[i] += scale * dir.c0.data[i];
    for (std::size_t i = 0; i < p.w1.size(); ++i) p.w1.data[i] += scale * dir.w1.data[i];
    for (std::size_t i = 0; i < p.b1.size(); ++i) p.b1[i] += scale * dir.b1[i];
    for (std::size_t i = 0; i < p.w2.size(); ++i) p.w2[i] += scale * dir.w2[i];
    p.b2 += scale * dir.b2;
    return p;
}

ForwardResult forward(const ModelParams& params, std::span<const std::uint8_t> x) {
    check_input(params, x.size());
    SampleState s;
    forward_sample(params, x, s);
    return {s.logit, s.act};
}

LossAndGrads loss_and_grads(const ModelParams& p, const Dataset& data, std::span<const std::size_t> indices,
                            const Mask* mask) {
    if (indices.empty()) throw InputError("loss_and_grads: empty batch");
    check_input(p, data.d_in);
    const std::size_t h = p.hidden();
    const std::size_t d = p.dim();
    const bool train_c0 = p.embedding.trainable;

    LossAndGrads out;
    out.grads = Gradients::zeros_like(p);
    Gradients& g = out.grads;
    SampleState s;
    std::vector<double> dpre(h), dxp(d);
    double loss = 0.0;

    for (auto i : indices) {
        forward_sample(p, data.row(i), s);
        const double y = data.labels[i];
        loss += bce_with_logits(s.logit, y);
        const double dz = sigmoid(s.logit) - y;
        g.b2 += dz;
        for (std::size_t r = 0; r < h; ++r) {
            g.w2[r] += dz * s.act[r];
            dpre[r] = s.pre[r] > 0.0 ? dz * p.w2[r] : 0.0;
            g.b1[r] += dpre[r];
            if (dpre[r] == 0.0) continue;
            auto grow = g.w1.row(r);
            for (std::size_t j = 0; j < d; ++j) grow[j] += dpre[r] * s.xp[j];
        }
        if (train_c0) {
            std::fill(dxp.begin(), dxp.end(), 0.0);
            for (std::size_t r = 0; r < h; ++r) {
                if (dpre[r] == 0.0) continue;
                auto wrow = p.w1.row(r);
                for (std::size_t j = 0; j < d; ++j) dxp[j] += wrow[j] * dpre[r];
            }
            for (std::size_t j = 0; j < d; ++j) {
                auto crow = g.c0.row(j);
                for (auto l : s.active) crow[l] += dxp[j];
            }
        }
    }

    const double inv = 1.0 / static_cast<double>(indices.size());
    out.loss = loss * inv;
    if (!std::isfinite(out.loss)) throw NumericError("non-finite loss", -1, -1, out.loss);
    g.b2 *= inv;
    for (auto& v : g.w2) v *= inv;
    for (auto& v : g.b1) v *= inv;
    for (auto& v : g.w1.data) v *= inv;
    for (auto& v : g.c0.data) v *= inv;
    if (mask) {
        for (std::size_t k = 0; k < g.w1.size(); ++k)
            if (!mask->bits[k]) g.w1.data[k] = 0.0;
    }
    return out;
}

LossAndGrads loss_and_grads(const ModelParams& params, const Dataset& data, const Mask* mask) {
    std::vector<std::size_t> all(data.n);
    std::iota(all.begin(), all.end(), 0);
    return loss_and_grads(params, data, all, mask);
}

Gradients hessian_vector_product(const ModelParams& p, const Dataset& data, std::span<const std::size_t> indices,
                                 const Gradients& v) {
    if (indices.empty()) throw InputError("hessian_vector_product: empty batch");
    check_input(p, data.d_in);
    const std::size_t h = p.hidden();
    const std::size_t d = p.dim();
    const bool train_c0 = p.embedding.trainable;

    Gradients out = Gradients::zeros_like(p);
    SampleState s;
    std::vector<double> rxp(d), rpre(h), ract(h), dpre(h), rdpre(h), rdxp(d);

    for (auto i : indices) {
        forward_sample(p, data.row(i), s);
        const double y = data.labels[i];
        std::fill(rxp.begin(), rxp.end(), 0.0);
        if (train_c0) {
            for (std::size_t j = 0; j < d; ++j) {
                auto vrow = v.c0.row(j);
                for (auto l : s.active) rxp[j] += vrow[l];
            }
        }
        double rz = v.b2;
        for (std::size_t r = 0; r < h; ++r) {
            auto wrow = p.w1.row(r);
            auto vrow = v.w1.row(r);
            double acc = v.b1[r];
            for (std::size_t j = 0; j < d; ++j) acc += vrow[j] * s.xp[j] + wrow[j] * rxp[j];
            rpre[r] = acc;
            ract[r] = s.pre[r] > 0.0 ? acc : 0.0;
            rz += v.w2[r] * s.act[r] + p.w2[r] * ract[r];
        }
        const double sg = sigmoid(s.logit);
        const double dz = sg - y;
        const double rdz = sg * (1.0 - sg) * rz;
        out.b2 += rdz;
        for (std::size_t r = 0; r < h; ++r) {
            const bool on = s.pre[r] > 0.0;
            out.w2[r] += rdz * s.act[r] + dz * ract[r];
            dpre[r] = on ? dz * p.w2[r] : 0.0;
            rdpre[r] = on ? rdz * p.w2[r] + dz * v.w2[r] : 0.0;
            out.b1[r] += rdpre[r];
            auto orow = out.w1.row(r);
            for (std::size_t j = 0; j < d; ++j) orow[j] += rdpre[r] * s.xp[j] + dpre[r] * rxp[j];
        }
        if (train_c0) {
            std::fill(rdxp.begin(), rdxp.end(), 0.0);
            for (std::size_t r = 0; r < h; ++r) {
                auto wrow = p.w1.row(r);
                auto vrow = v.w1.row(r);
                for (std::size_t j = 0; j < d; ++j) rdxp[j] += vrow[j] * dpre[r] + wrow[j] * rdpre[r];
            }
            for (std::size_t j = 0; j < d; ++j) {
                auto orow = out.c0.row(j);
                for (auto l : s.active) orow[l] += rdxp[j];
            }
        }
    }
    const double inv = 1.0 / static_cast<double>(indices.size());
    out.b2 *= inv;
    for (auto& x : out.w2) x *= inv;
    for (auto& x : out.b1) x *= inv;
    for (auto& x : out.w1.data) x *= inv;
    for (auto& x : out.c0.data) x *= inv;
    return out;
}

double accuracy(const ModelParams& params, const Dataset& data) {
    check_input(params, data.d_in);
    SampleState s;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < data.n; ++i) {
        forward_sample(params, data.row(i), s);
        if ((s.logit > 0.0) == (data.labels[i] != 0)) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(data.n);
}

double mean_loss(const ModelParams& params, const Dataset& data) {
    check_input(params, data.d_in);
    SampleState s;
    double loss = 0.0;
    for (std::size_t i = 0; i < data.n; ++i) {
        forward_sample(params, data.row(i), s);
        loss += bce_with_logits(s.logit, data.labels[i]);
    }
    return loss / static_cast<double>(data.n);
}

AdamState AdamState::zeros_like(const ModelParams& p) {
    return {Gradients::zeros_like(p), Gradients::zeros_like(p), 0};
}

void adam_step(AdamState& st, ModelParams& p, const Gradients& g, const AdamHyper& hp, const Mask* mask) {
    if (st.m.w1.rows != p.w1.rows || st.m.w1.cols != p.w1.cols || st.m.b1.size() != p.b1.size() ||
        g.w1.rows != p.w1.rows || g.w1.cols != p.w1.cols)
        throw InputError("adam_step: state shape does not match parameters");
    ++st.step;
    const double c1 = 1.0 - std::pow(hp.beta1, static_cast<double>(st.step));
    const double c2 = 1.0 - std::pow(hp.beta2, static_cast<double>(st.step));
    auto update = [&](double& param, double& m, double& v, double grad) {
        m = hp.beta1 * m + (1.0 - hp.beta1) * grad;
        v = hp.beta2 * v + (1.0 - hp.beta2) * grad * grad;
        param -= hp.lr * (m / c1) / (std::sqrt(v / c2) + hp.eps);
    };
    if (p.embedding.trainable)
        for (std::size_t k = 0; k < p.embedding.c0.size(); ++k)
            update(p.embedding.c0.data[k], st.m.c0.data[k], st.v.c0.data[k], g.c0.data[k]);
    for (std::size_t k = 0; k < p.w1.size(); ++k) {
        if (mask && !mask->bits[k]) {
            st.m.w1.data[k] = 0.0;
            st.v.w1.data[k] = 0.0;
            p.w1.data[k] = 0.0;
            continue;
        }
        update(p.w1.data[k], st.m.w1.data[k], st.v.w1.data[k], g.w1.data[k]);
    }
    for (std::size_t k = 0; k < p.b1.size(); ++k) update(p.b1[k], st.m.b1[k], st.v.b1[k], g.b1[k]);
    for (std::size_t k = 0; k < p.w2.size(); ++k) update(p.w2[k], st.m.w2[k], st.v.w2[k], g.w2[k]);
    update(p.b2, st.m.b2, st.v.b2, g.b2);
}

const Checkpoint* TrainResult::at_epoch(int epoch) const {
    for (const auto& c : checkpoints)
        if (c.epoch == epoch) return &c;
    return nullptr;
}

TrainResult train(ModelParams params, const Dataset& train_data, const Dataset& test_data, const TrainConfig& cfg,
                  const Mask* mask) {
    if (cfg.epochs < 0) throw ConfigError("train: negative epoch count");
    if (cfg.batch_size == 0) throw ConfigError("train: batch size must be positive");
    if (train_data.n == 0 || test_data.n == 0) throw ConfigError("train: empty dataset");
    if (mask) {
        if (mask->rows != params.w1.rows || mask->cols != params.w1.cols)
            throw InputError("train: mask shape does not match W1");
        for (std::size_t k = 0; k < params.w1.size(); ++k)
            if (!mask->bits[k] && params.w1.data[k] != 0.0)
                throw InputError("train: parameters are not supported on the mask");
    }

    auto wants = [&](int e) {
        return cfg.every_epoch || e == 0 || e == cfg.epochs ||
               std::find(cfg.checkpoint_epochs.begin(), cfg.checkpoint_epochs.end(), e) != cfg.checkpoint_epochs.end();
    };

    TrainResult result;
    result.checkpoints.push_back({0, params});
    result.metrics.push_back({0, mean_loss(params, train_data), accuracy(params, test_data)});

    AdamState state = AdamState::zeros_like(params);
    Rng shuffle_rng(derive_seed(cfg.seed, "shuffle"));
    std::vector<std::size_t> order(train_data.n);
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), shuffle_rng.engine());
        double loss_sum = 0.0;
        long batches = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
            std::span<const std::size_t> batch(order.data() + start, stop - start);
            LossAndGrads lg;
            try {
                lg = loss_and_grads(params, train_data, batch, mask);
            } catch (const NumericError& e) {
                throw TrainingDiverged(NumericError(e.what(), epoch, batches, e.loss()), result.checkpoints.back());
            }
            adam_step(state, params, lg.grads, cfg.adam, mask);
            loss_sum += lg.loss;
            ++batches;
        }
        result.metrics.push_back({epoch, loss_sum / static_cast<double>(batches), accuracy(params, test_data)});
        if (wants(epoch)) result.checkpoints.push_back({epoch, params});
    }
    result.final_params = std::move(params);
    return result;
}

ModelParams apply_mask_rewind(const Checkpoint& checkpoint, const Mask& mask) {
    ModelParams p = checkpoint.params;
    if (mask.rows != p.w1.rows || mask.cols != p.w1.cols) throw InputError("apply_mask_rewind: mask shape mismatch");
    for (std::size_t k = 0; k < p.w1.size(); ++k)
        if (!mask.bits[k]) p.w1.data[k] = 0.0;
    return p;
}

ModelParams fresh_random_rewind(const ModelParams& reference, const Mask& mask, std::uint64_t seed) {
    ModelParams p = init_params(reference.embedding, reference.hidden(), derive_seed(seed, "fresh"));
    return apply_mask_rewind({0, p}, mask);
}

void write_checkpoint(std::ostream& os, const Checkpoint& ckpt) {
    const auto& p = ckpt.params;
    os << "ckpt v1; h=" << p.hidden() << "; d=" << p.dim() << "; d_in=" << p.d_in()
       << "; kind=" << to_string(p.embedding.kind) << "; epoch=" << ckpt.epoch << '\n';
    for (double v : p.embedding.c0.data) put_f64(os, v);
    for (double v : p.w1.data) put_f64(os, v);
    for (double v : p.b1) put_f64(os, v);
    for (double v : p.w2) put_f64(os, v);
    put_f64(os, p.b2);
    if (!os) throw InputError("failed writing checkpoint");
}

Checkpoint read_checkpoint(std::istream& is) {
    std::string header;
    if (!std::getline(is, header)) throw InputError("checkpoint header missing");
    if (header.rfind("ckpt v1;", 0) != 0) throw InputError("not a ckpt v1 file");
    std::size_t h = 0, d = 0, d_in = 0;
    int epoch = -1;
    std::string kind;
    std::istringstream fields(header.substr(8));
    std::string field;
    while (std::getline(fields, field, ';')) {
        auto eq = field.find('=');
        if (eq == std::string::npos) continue;
        std::string key = field.substr(0, eq);
        key.erase(0, key.find_first_not_of(' '));
        std::string value = field.substr(eq + 1);
        if (key == "h") h = std::stoul(value);
        else if (key == "d") d = std::stoul(value);
        else if (key == "d_in") d_in = std::stoul(value);
        else if (key == "kind") kind = value;
        else if (key == "epoch") epoch = std::stoi(value);
        else throw InputError("unknown checkpoint header field '" + key + "'");
    }
    if (h == 0 || d == 0 || d_in == 0 || epoch < 0 || kind.empty()) throw InputError("incomplete checkpoint header");

    Checkpoint c;
    c.epoch = epoch;
    auto& p = c.params;
    p.embedding.kind = parse_embedding_kind(kind);
    p.embedding.trainable = p.embedding.kind == EmbeddingKind::Learned;
    p.embedding.c0 = Matrix(d, d_in);
    for (auto& v : p.embedding.c0.data) v = get_f64(is);
    p.w1 = Matrix(h, d);
    for (auto& v : p.w1.data) v = get_f64(is);
    p.b1.resize(h);
    for (auto& v : p.b1) v = get_f64(is);
    p.w2.resize(h);
    for (auto& v : p.w2) v = get_f64(is);
    p.b2 = get_f64(is);
    return c;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw InputError("cannot open " + path + " for writing");
    write_checkpoint(os, ckpt);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw InputError("cannot open checkpoint " + path);
    return read_checkpoint(is);
}

}  // namespace ticketlab
