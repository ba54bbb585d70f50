#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "errors.hpp"
#include "grid.hpp"
#include "kernel.hpp"

// DeepONet surrogate for the map c_hat -> (K^u, K^v).
//
//   K^h(c)(x, xi) = out_scale * ( sum_i g_{h,i}(c) f_i(x, xi) + bias_h ),  h in {u, v}
//
// The branch net g sees the m samples of c_hat (scaled by in_scale), the trunk
// net f sees the query point. Both heads share the trunk; the branch emits 2b
// coefficients, the first b for K^u and the next b for K^v.

namespace arzno {

struct DenseLayer {
    Eigen::MatrixXd w;  // out x in
    Eigen::VectorXd b;  // out
};

/// Fully connected tanh network. The last layer is linear unless activate_last.
struct Mlp {
    std::vector<DenseLayer> layers;
    bool activate_last = false;

    std::size_t inputs() const { return layers.empty() ? 0 : static_cast<std::size_t>(layers.front().w.cols()); }
    std::size_t outputs() const { return layers.empty() ? 0 : static_cast<std::size_t>(layers.back().w.rows()); }
};

struct ArchConfig {
    std::size_t m = 41;       // branch input samples
    std::size_t width = 128;  // hidden width
    std::size_t depth = 3;    // hidden layers per net
    std::size_t latent = 64;  // basis functions per head
};

struct DeepONetModel {
    std::size_t m = 0;
    std::size_t latent = 0;
    Mlp branch;
    Mlp trunk;
    Eigen::Vector2d head_bias = Eigen::Vector2d::Zero();
    double in_scale = 1.0;
    double out_scale = 1.0;
};

namespace nn {

inline Mlp make_mlp(std::size_t in, std::size_t width, std::size_t depth, std::size_t out, bool activate_last,
                    std::mt19937_64& rng) {
    Mlp net;
    net.activate_last = activate_last;
    std::size_t prev = in;
    for (std::size_t l = 0; l <= depth; ++l) {
        const std::size_t next = (l == depth) ? out : width;
        const double limit = std::sqrt(6.0 / static_cast<double>(prev + next));
        std::uniform_real_distribution<double> dist(-limit, limit);
        DenseLayer layer{Eigen::MatrixXd(next, prev), Eigen::VectorXd::Zero(static_cast<Eigen::Index>(next))};
        for (Eigen::Index c = 0; c < layer.w.cols(); ++c) {
            for (Eigen::Index r = 0; r < layer.w.rows(); ++r) layer.w(r, c) = dist(rng);
        }
        net.layers.push_back(std::move(layer));
        prev = next;
    }
    return net;
}

/// tanh(z) = 1 - 2 / (exp(2z) + 1). Eigen vectorizes exp but not tanh for
/// doubles; the two agree to a few ulps and saturate correctly at +-1.
template <class Derived>
inline void tanh_inplace(Eigen::MatrixBase<Derived>& z) {
    z.array() = 1.0 - 2.0 / ((2.0 * z.array()).exp() + 1.0);
}

/// Post-activation outputs of every layer; acts[0] is the input.
struct MlpCache {
    std::vector<Eigen::MatrixXd> acts;
};

inline const Eigen::MatrixXd& forward(const Mlp& net, const Eigen::MatrixXd& input, MlpCache& cache) {
    cache.acts.resize(net.layers.size() + 1);
    cache.acts[0] = input;
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        const auto& layer = net.layers[l];
        Eigen::MatrixXd z = layer.w * cache.acts[l];
        z.colwise() += layer.b;
        if (l + 1 < net.layers.size() || net.activate_last) tanh_inplace(z);
        cache.acts[l + 1] = std::move(z);
    }
    return cache.acts.back();
}

inline Eigen::MatrixXd forward(const Mlp& net, const Eigen::MatrixXd& input) {
    MlpCache cache;
    return forward(net, input, cache);
}

/// Backpropagates d(loss)/d(output) and writes parameter gradients into grad.
inline void backward(const Mlp& net, const MlpCache& cache, Eigen::MatrixXd d_out, Mlp& grad) {
    grad.layers.resize(net.layers.size());
    for (std::size_t l = net.layers.size(); l-- > 0;) {
        const Eigen::MatrixXd& a = cache.acts[l + 1];
        if (l + 1 < net.layers.size() || net.activate_last) {
            d_out.array() *= (1.0 - a.array().square());
        }
        grad.layers[l].w.noalias() = d_out * cache.acts[l].transpose();
        grad.layers[l].b = d_out.rowwise().sum();
        if (l > 0) d_out = net.layers[l].w.transpose() * d_out;
    }
}

}  // namespace nn

/// Randomly initialized model (Glorot-uniform weights, zero biases).
inline DeepONetModel make_deeponet(const ArchConfig& arch, std::uint64_t seed) {
    if (arch.m == 0 || arch.width == 0 || arch.latent == 0) throw DomainError("DeepONet: sizes must be positive");
    std::mt19937_64 rng(seed);
    DeepONetModel model;
    model.m = arch.m;
    model.latent = arch.latent;
    model.branch = nn::make_mlp(arch.m, arch.width, arch.depth, 2 * arch.latent, false, rng);
    model.trunk = nn::make_mlp(2, arch.width, arch.depth, arch.latent, true, rng);
    return model;
}

/// Every trainable tensor as a flat span, in a fixed order shared by all
/// models with the same architecture.
inline std::vector<std::span<double>> parameter_blocks(DeepONetModel& model) {
    std::vector<std::span<double>> blocks;
    for (Mlp* net : {&model.branch, &model.trunk}) {
        for (auto& layer : net->layers) {
            blocks.emplace_back(layer.w.data(), static_cast<std::size_t>(layer.w.size()));
            blocks.emplace_back(layer.b.data(), static_cast<std::size_t>(layer.b.size()));
        }
    }
    blocks.emplace_back(model.head_bias.data(), 2);
    return blocks;
}

inline std::size_t parameter_count(const DeepONetModel& model) {
    std::size_t n = 0;
    for (auto b : parameter_blocks(const_cast<DeepONetModel&>(model))) n += b.size();
    return n;
}

/// Trunk inputs for a list of query points (x, xi), mapped to [-1,1]^2.
inline Eigen::MatrixXd trunk_inputs(std::span<const std::array<double, 2>> queries) {
    Eigen::MatrixXd y(2, static_cast<Eigen::Index>(queries.size()));
    for (std::size_t q = 0; q < queries.size(); ++q) {
        const auto [x, xi] = queries[q];
        if (!(x <= 1.0 + 1e-12 && xi >= -1e-12 && xi <= x + 1e-12)) {
            throw DomainError("DeepONet: query (" + std::to_string(x) + ", " + std::to_string(xi) +
                              ") lies outside the triangle 0 <= xi <= x <= 1");
        }
        y(0, static_cast<Eigen::Index>(q)) = 2.0 * x - 1.0;
        y(1, static_cast<Eigen::Index>(q)) = 2.0 * xi - 1.0;
    }
    return y;
}

inline std::vector<std::array<double, 2>> mesh_queries(const TriMesh& mesh) {
    std::vector<std::array<double, 2>> q;
    q.reserve(mesh.size());
    for (std::size_t i = 0; i < mesh.n; ++i) {
        for (std::size_t j = 0; j <= i; ++j) q.push_back({mesh.coord(i), mesh.coord(j)});
    }
    return q;
}

namespace detail {

inline Eigen::VectorXd branch_input(const DeepONetModel& model, std::span<const double> c_samples) {
    if (c_samples.size() != model.m) {
        throw DomainError("DeepONet: expected " + std::to_string(model.m) + " c samples, got " +
                          std::to_string(c_samples.size()));
    }
    Eigen::VectorXd x(static_cast<Eigen::Index>(model.m));
    for (std::size_t i = 0; i < model.m; ++i) x(static_cast<Eigen::Index>(i)) = c_samples[i] * model.in_scale;
    return x;
}

}  // namespace detail

/// Evaluates both heads at arbitrary query points. Returns {K^u, K^v} per query.
inline std::vector<std::array<double, 2>> forward(const DeepONetModel& model, std::span<const double> c_samples,
                                                  std::span<const std::array<double, 2>> queries) {
    const Eigen::VectorXd g = nn::forward(model.branch, detail::branch_input(model, c_samples));
    const Eigen::MatrixXd f = nn::forward(model.trunk, trunk_inputs(queries));
    const auto b = static_cast<Eigen::Index>(model.latent);
    std::vector<std::array<double, 2>> out(queries.size());
    for (std::size_t q = 0; q < queries.size(); ++q) {
        const auto col = f.col(static_cast<Eigen::Index>(q));
        out[q][0] = model.out_scale * (g.head(b).dot(col) + model.head_bias(0));
        out[q][1] = model.out_scale * (g.tail(b).dot(col) + model.head_bias(1));
    }
    return out;
}

/// Inference on a fixed TriMesh. The trunk does not depend on c_hat, so its
/// features at the mesh nodes are evaluated once; each call then costs one
/// branch pass plus a (nodes x latent) matrix-vector product per head.
class MeshEvaluator {
public:
    MeshEvaluator(const DeepONetModel& model, const TriMesh& mesh) : model_(&model), mesh_(mesh) {
        const auto queries = mesh_queries(mesh);
        features_ = nn::forward(model.trunk, trunk_inputs(queries)).transpose();
    }

    const TriMesh& mesh() const { return mesh_; }

    KernelPair evaluate(std::span<const double> c_samples) const {
        const Eigen::VectorXd g = nn::forward(model_->branch, detail::branch_input(*model_, c_samples));
        const auto b = static_cast<Eigen::Index>(model_->latent);
        KernelPair kp{mesh_, Field(mesh_.size()), Field(mesh_.size())};
        Eigen::Map<Eigen::VectorXd> ku(kp.ku.data(), static_cast<Eigen::Index>(kp.ku.size()));
        Eigen::Map<Eigen::VectorXd> kv(kp.kv.data(), static_cast<Eigen::Index>(kp.kv.size()));
        ku.noalias() = features_ * g.head(b);
        kv.noalias() = features_ * g.tail(b);
        ku.array() = model_->out_scale * (ku.array() + model_->head_bias(0));
        kv.array() = model_->out_scale * (kv.array() + model_->head_bias(1));
        return kp;
    }

private:
    const DeepONetModel* model_;
    TriMesh mesh_;
    // nodes x latent, row-major so each output node is one contiguous dot product
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> features_;
};

/// Mini-batch in the model's normalized units: columns are samples.
struct Batch {
    Eigen::MatrixXd inputs;     // m x B, already multiplied by in_scale
    Eigen::MatrixXd queries;    // 2 x Q trunk inputs
    Eigen::MatrixXd target_u;   // Q x B, already divided by out_scale
    Eigen::MatrixXd target_v;   // Q x B
};

/// Mean squared error over both heads (normalized units) and, if grad is
/// given, its gradient with respect to every parameter of the model.
inline double loss_and_gradient(const DeepONetModel& model, const Batch& batch, DeepONetModel* grad) {
    nn::MlpCache bc, tc;
    const Eigen::MatrixXd& g = nn::forward(model.branch, batch.inputs, bc);
    const Eigen::MatrixXd& f = nn::forward(model.trunk, batch.queries, tc);
    const auto b = static_cast<Eigen::Index>(model.latent);
    const auto gu = g.topRows(b);
    const auto gv = g.bottomRows(b);

    Eigen::MatrixXd du = f.transpose() * gu;
    Eigen::MatrixXd dv = f.transpose() * gv;
    du.array() += model.head_bias(0) - batch.target_u.array();
    dv.array() += model.head_bias(1) - batch.target_v.array();
    const double count = static_cast<double>(du.size());
    const double loss = (du.squaredNorm() + dv.squaredNorm()) / (2.0 * count);
    if (!grad) return loss;

    du /= count;
    dv /= count;
    Eigen::MatrixXd d_g(g.rows(), g.cols());
    d_g.topRows(b).noalias() = f * du;
    d_g.bottomRows(b).noalias() = f * dv;
    Eigen::MatrixXd d_f = gu * du.transpose();
    d_f.noalias() += gv * dv.transpose();

    grad->m = model.m;
    grad->latent = model.latent;
    grad->branch.activate_last = model.branch.activate_last;
    grad->trunk.activate_last = model.trunk.activate_last;
    nn::backward(model.branch, bc, std::move(d_g), grad->branch);
    nn::backward(model.trunk, tc, std::move(d_f), grad->trunk);
    grad->head_bias(0) = du.sum();
    grad->head_bias(1) = dv.sum();
    return loss;
}

/// In-memory supervised set on a common mesh; columns are samples.
struct TrainingSet {
    TriMesh mesh;
    Eigen::MatrixXd inputs;    // m x N, raw c_hat samples
    Eigen::MatrixXd target_u;  // Q x N
    Eigen::MatrixXd target_v;  // Q x N

    std::size_t size() const { return static_cast<std::size_t>(inputs.cols()); }
};

/// Packs samples into a TrainingSet; c_hat is resampled to m points when needed.
inline TrainingSet make_training_set(std::span<const KernelSample> samples, std::size_t m) {
    if (samples.empty()) throw DomainError("training set: no samples");
    const TriMesh mesh = samples.front().k.mesh;
    const auto q = static_cast<Eigen::Index>(mesh.size());
    TrainingSet set{mesh, Eigen::MatrixXd(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(samples.size())),
                    Eigen::MatrixXd(q, static_cast<Eigen::Index>(samples.size())),
                    Eigen::MatrixXd(q, static_cast<Eigen::Index>(samples.size()))};
    for (std::size_t s = 0; s < samples.size(); ++s) {
        const auto& smp = samples[s];
        if (!(smp.k.mesh == mesh) || smp.k.ku.size() != mesh.size() || smp.k.kv.size() != mesh.size()) {
            throw DomainError("training set: sample " + std::to_string(s) + " uses a different mesh");
        }
        if (smp.c.size() < 2) throw DomainError("training set: sample " + std::to_string(s) + " has no c samples");
        const Field c = resample(smp.c, m);
        const auto col = static_cast<Eigen::Index>(s);
        set.inputs.col(col) = Eigen::Map<const Eigen::VectorXd>(c.data(), static_cast<Eigen::Index>(m));
        set.target_u.col(col) = Eigen::Map<const Eigen::VectorXd>(smp.k.ku.data(), q);
        set.target_v.col(col) = Eigen::Map<const Eigen::VectorXd>(smp.k.kv.data(), q);
    }
    return set;
}

struct TrainConfig {
    double learning_rate = 1e-3;
    std::size_t batch_size = 256;
    std::size_t epochs = 200;
    double val_ratio = 0.1;     // used only when no validation set is passed
    std::uint64_t seed = 7;
    double input_bound = 0.02;  // |c_hat| normalization (1/tau_lo); 0 -> max over training inputs

    void validate() const {
        if (!(learning_rate > 0.0)) throw DomainError("train: learning rate must be positive");
        if (batch_size == 0) throw DomainError("train: batch size must be positive");
        if (epochs == 0) throw DomainError("train: epochs must be positive");
        if (!(val_ratio > 0.0 && val_ratio < 1.0)) throw DomainError("train: validation ratio must lie in (0,1)");
        if (input_bound < 0.0) throw DomainError("train: input bound must be non-negative");
    }
};

struct EpochStats {
    std::size_t epoch = 0;
    double train_loss = 0.0;    // MSE, normalized units
    double val_loss = 0.0;      // MSE, normalized units
    double val_rel_l2 = 0.0;    // ||pred - K|| / ||K|| over the validation set
};

struct TrainResult {
    DeepONetModel model;         // best validation epoch
    std::vector<EpochStats> history;
    std::size_t best_epoch = 0;
};

namespace detail {

inline Batch gather(const TrainingSet& set, std::span<const std::size_t> idx, const Eigen::MatrixXd& queries,
                    double in_scale, double out_scale) {
    const auto n = static_cast<Eigen::Index>(idx.size());
    Batch batch{Eigen::MatrixXd(set.inputs.rows(), n), queries, Eigen::MatrixXd(set.target_u.rows(), n),
                Eigen::MatrixXd(set.target_v.rows(), n)};
    for (Eigen::Index c = 0; c < n; ++c) {
        const auto s = static_cast<Eigen::Index>(idx[static_cast<std::size_t>(c)]);
        batch.inputs.col(c) = set.inputs.col(s) * in_scale;
        batch.target_u.col(c) = set.target_u.col(s) / out_scale;
        batch.target_v.col(c) = set.target_v.col(s) / out_scale;
    }
    return batch;
}

/// MSE and relative L2 error of the model over a subset, in chunks.
inline std::pair<double, double> evaluate_subset(const DeepONetModel& model, const TrainingSet& set,
                                                 std::span<const std::size_t> idx, const Eigen::MatrixXd& queries) {
    if (idx.empty()) return {0.0, 0.0};
    const Eigen::MatrixXd f = nn::forward(model.trunk, queries);
    const auto b = static_cast<Eigen::Index>(model.latent);
    double err = 0.0, ref = 0.0;
    constexpr std::size_t chunk = 512;
    for (std::size_t start = 0; start < idx.size(); start += chunk) {
        const auto part = idx.subspan(start, std::min(chunk, idx.size() - start));
        const Batch batch = gather(set, part, queries, model.in_scale, model.out_scale);
        const Eigen::MatrixXd g = nn::forward(model.branch, batch.inputs);
        Eigen::MatrixXd du = f.transpose() * g.topRows(b);
        Eigen::MatrixXd dv = f.transpose() * g.bottomRows(b);
        du.array() += model.head_bias(0) - batch.target_u.array();
        dv.array() += model.head_bias(1) - batch.target_v.array();
        err += du.squaredNorm() + dv.squaredNorm();
        ref += batch.target_u.squaredNorm() + batch.target_v.squaredNorm();
    }
    const double count = 2.0 * static_cast<double>(idx.size()) * static_cast<double>(queries.cols());
    return {err / (2.0 * count) * 2.0, ref > 0.0 ? std::sqrt(err / ref) : std::sqrt(err)};
}

}  // namespace detail

/// Trains a DeepONet by Adam on the mean squared error over both heads and
/// returns the parameters of the epoch with the lowest validation loss.
/// Deterministic for a fixed seed. If `validation` is empty, a seeded
/// val_ratio fraction of `train_set` is held out.
inline TrainResult train(const TrainingSet& train_set, const TrainingSet* validation, const TrainConfig& cfg,
                         const ArchConfig& arch, const std::function<void(const EpochStats&)>& on_epoch = {}) {
    cfg.validate();
    if (train_set.size() == 0) throw DomainError("train: empty dataset");
    if (static_cast<std::size_t>(train_set.inputs.rows()) != arch.m) {
        throw DomainError("train: dataset has " + std::to_string(train_set.inputs.rows()) +
                          " c samples per record, architecture expects " + std::to_string(arch.m));
    }
    if (validation && (!(validation->mesh == train_set.mesh) || validation->inputs.rows() != train_set.inputs.rows())) {
        throw DomainError("train: validation set shape differs from training set");
    }

    std::mt19937_64 rng(cfg.seed);
    DeepONetModel model = make_deeponet(arch, rng());

    std::vector<std::size_t> train_idx(train_set.size());
    std::iota(train_idx.begin(), train_idx.end(), std::size_t{0});
    std::vector<std::size_t> val_idx;
    const TrainingSet* val_set = validation;
    if (!val_set) {
        std::shuffle(train_idx.begin(), train_idx.end(), rng);
        auto n_val = static_cast<std::size_t>(std::llround(cfg.val_ratio * static_cast<double>(train_idx.size())));
        if (train_idx.size() > 1) n_val = std::clamp<std::size_t>(n_val, 1, train_idx.size() - 1);
        else n_val = 0;
        val_idx.assign(train_idx.end() - static_cast<std::ptrdiff_t>(n_val), train_idx.end());
        train_idx.resize(train_idx.size() - n_val);
        std::sort(train_idx.begin(), train_idx.end());
        std::sort(val_idx.begin(), val_idx.end());
        val_set = &train_set;
    } else {
        val_idx.resize(validation->size());
        std::iota(val_idx.begin(), val_idx.end(), std::size_t{0});
    }

    double in_bound = cfg.input_bound;
    if (in_bound == 0.0) {
        for (std::size_t s : train_idx) in_bound = std::max(in_bound, train_set.inputs.col(static_cast<Eigen::Index>(s)).cwiseAbs().maxCoeff());
    }
    double out_bound = 0.0;
    for (std::size_t s : train_idx) {
        const auto c = static_cast<Eigen::Index>(s);
        out_bound = std::max({out_bound, train_set.target_u.col(c).cwiseAbs().maxCoeff(),
                              train_set.target_v.col(c).cwiseAbs().maxCoeff()});
    }
    model.in_scale = in_bound > 0.0 ? 1.0 / in_bound : 1.0;
    model.out_scale = out_bound > 0.0 ? out_bound : 1.0;

    const Eigen::MatrixXd queries = trunk_inputs(mesh_queries(train_set.mesh));

    DeepONetModel grad = model, m1 = model, m2 = model;
    auto zero = [](DeepONetModel& mdl) {
        for (auto blk : parameter_blocks(mdl)) std::fill(blk.begin(), blk.end(), 0.0);
    };
    zero(m1);
    zero(m2);
    constexpr double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
    std::size_t step = 0;

    TrainResult result;
    result.model = model;
    double best = std::numeric_limits<double>::infinity();

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::shuffle(train_idx.begin(), train_idx.end(), rng);
        double loss_sum = 0.0;
        std::size_t seen = 0;
        for (std::size_t start = 0; start < train_idx.size(); start += cfg.batch_size) {
            const std::span<const std::size_t> part(train_idx.data() + start,
                                                    std::min(cfg.batch_size, train_idx.size() - start));
            const Batch batch = detail::gather(train_set, part, queries, model.in_scale, model.out_scale);
            const double loss = loss_and_gradient(model, batch, &grad);
            loss_sum += loss * static_cast<double>(part.size());
            seen += part.size();

            ++step;
            const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
            const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
            auto p = parameter_blocks(model);
            auto g = parameter_blocks(grad);
            auto a = parameter_blocks(m1);
            auto v = parameter_blocks(m2);
            for (std::size_t blk = 0; blk < p.size(); ++blk) {
                for (std::size_t i = 0; i < p[blk].size(); ++i) {
                    const double gi = g[blk][i];
                    a[blk][i] = beta1 * a[blk][i] + (1.0 - beta1) * gi;
                    v[blk][i] = beta2 * v[blk][i] + (1.0 - beta2) * gi * gi;
                    p[blk][i] -= cfg.learning_rate * (a[blk][i] / c1) / (std::sqrt(v[blk][i] / c2) + adam_eps);
                }
            }
        }

        EpochStats stats;
        stats.epoch = epoch;
        stats.train_loss = loss_sum / static_cast<double>(seen);
        if (!val_idx.empty()) {
            std::tie(stats.val_loss, stats.val_rel_l2) = detail::evaluate_subset(model, *val_set, val_idx, queries);
        } else {
            stats.val_loss = stats.train_loss;
        }
        result.history.push_back(stats);
        if (stats.val_loss < best) {
            best = stats.val_loss;
            result.model = model;
            result.best_epoch = epoch;
        }
        if (on_epoch) on_epoch(stats);
    }
    return result;
}

/// Table-style error summary over a test set.
struct AccuracyReport {
    std::size_t samples = 0;
    double ku_max = 0.0;
    double ku_mean = 0.0;
    double kv_max = 0.0;
    double kv_mean = 0.0;
    double sup_error = 0.0;  // max over both heads
};

/// Pointwise absolute errors of any predictor c_hat -> KernelPair against
/// stored kernels: max over all nodes and samples, and the mean.
template <class Predictor>
    requires std::invocable<Predictor&, std::span<const double>>
AccuracyReport eval_accuracy(Predictor&& predict, std::span<const KernelSample> test) {
    AccuracyReport rep;
    double su = 0.0, sv = 0.0;
    std::size_t count = 0;
    for (const auto& smp : test) {
        const KernelPair pred = predict(std::span<const double>(smp.c));
        if (pred.ku.size() != smp.k.ku.size() || pred.kv.size() != smp.k.kv.size()) {
            throw DomainError("eval_accuracy: prediction mesh differs from test mesh");
        }
        for (std::size_t q = 0; q < pred.ku.size(); ++q) {
            const double eu = std::abs(pred.ku[q] - smp.k.ku[q]);
            const double ev = std::abs(pred.kv[q] - smp.k.kv[q]);
            rep.ku_max = std::max(rep.ku_max, eu);
            rep.kv_max = std::max(rep.kv_max, ev);
            su += eu;
            sv += ev;
        }
        count += pred.ku.size();
        ++rep.samples;
    }
    if (count > 0) {
        rep.ku_mean = su / static_cast<double>(count);
        rep.kv_mean = sv / static_cast<double>(count);
    }
    rep.sup_error = std::max(rep.ku_max, rep.kv_max);
    return rep;
}

inline AccuracyReport eval_accuracy(const DeepONetModel& model, std::span<const KernelSample> test) {
    if (test.empty()) return {};
    const MeshEvaluator eval(model, test.front().k.mesh);
    return eval_accuracy(
        [&](std::span<const double> c) {
            return c.size() == model.m ? eval.evaluate(c) : eval.evaluate(resample(c, model.m));
        },
        test);
}

// Model file layout (little-endian):
//   "ARZDONET" | u32 version | u32 m | u32 latent | u32 activation
//   | f64 in_scale | f64 out_scale | f64 bias_u | f64 bias_v
//   | per net (branch, trunk): u32 layers, u32 activate_last, per layer u32 rows, u32 cols
//   | parameter blocks in parameter_blocks() order, each W row-major then b.

inline constexpr char model_magic[8] = {'A', 'R', 'Z', 'D', 'O', 'N', 'E', 'T'};
inline constexpr std::uint32_t model_format_version = 1;
inline constexpr std::uint32_t activation_tanh = 1;

inline void save_model(const DeepONetModel& model, std::ostream& os) {
    os.write(model_magic, sizeof(model_magic));
    io::put_u32(os, model_format_version);
    io::put_u32(os, static_cast<std::uint32_t>(model.m));
    io::put_u32(os, static_cast<std::uint32_t>(model.latent));
    io::put_u32(os, activation_tanh);
    io::put_f64(os, model.in_scale);
    io::put_f64(os, model.out_scale);
    io::put_f64(os, model.head_bias(0));
    io::put_f64(os, model.head_bias(1));
    for (const Mlp* net : {&model.branch, &model.trunk}) {
        io::put_u32(os, static_cast<std::uint32_t>(net->layers.size()));
        io::put_u32(os, net->activate_last ? 1u : 0u);
        for (const auto& layer : net->layers) {
            io::put_u32(os, static_cast<std::uint32_t>(layer.w.rows()));
            io::put_u32(os, static_cast<std::uint32_t>(layer.w.cols()));
        }
    }
    for (const Mlp* net : {&model.branch, &model.trunk}) {
        for (const auto& layer : net->layers) {
            for (Eigen::Index r = 0; r < layer.w.rows(); ++r) {
                for (Eigen::Index c = 0; c < layer.w.cols(); ++c) io::put_f64(os, layer.w(r, c));
            }
            for (Eigen::Index r = 0; r < layer.b.size(); ++r) io::put_f64(os, layer.b(r));
        }
    }
    if (!os) throw FormatError("save_model: write failed");
}

inline void save_model(const DeepONetModel& model, const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw FormatError("save_model: cannot open " + path + " for writing");
    save_model(model, os);
}

inline DeepONetModel load_model(std::istream& is) {
    char magic[8];
    if (!is.read(magic, sizeof(magic)) || !std::equal(magic, magic + 8, model_magic)) {
        throw FormatError("load_model: not a DeepONet model file (bad magic)");
    }
    const std::uint32_t version = io::get_u32(is, "format version");
    if (version != model_format_version) {
        throw FormatError("load_model: unsupported format version " + std::to_string(version));
    }
    DeepONetModel model;
    model.m = io::get_u32(is, "m");
    model.latent = io::get_u32(is, "latent");
    if (io::get_u32(is, "activation") != activation_tanh) throw FormatError("load_model: unknown activation");
    model.in_scale = io::get_f64(is, "in_scale");
    model.out_scale = io::get_f64(is, "out_scale");
    model.head_bias(0) = io::get_f64(is, "head bias");
    model.head_bias(1) = io::get_f64(is, "head bias");

    for (Mlp* net : {&model.branch, &model.trunk}) {
        const std::uint32_t layers = io::get_u32(is, "layer count");
        if (layers == 0 || layers > 64) throw FormatError("load_model: implausible layer count");
        net->activate_last = io::get_u32(is, "activation flag") != 0;
        std::uint32_t prev = 0;
        for (std::uint32_t l = 0; l < layers; ++l) {
            const std::uint32_t rows = io::get_u32(is, "layer rows");
            const std::uint32_t cols = io::get_u32(is, "layer cols");
            if (rows == 0 || cols == 0 || rows > 65536 || cols > 65536 || (l > 0 && cols != prev)) {
                throw FormatError("load_model: inconsistent layer shapes");
            }
            prev = rows;
            net->layers.push_back({Eigen::MatrixXd(rows, cols), Eigen::VectorXd(rows)});
        }
    }
    if (model.branch.inputs() != model.m || model.branch.outputs() != 2 * model.latent ||
        model.trunk.inputs() != 2 || model.trunk.outputs() != model.latent) {
        throw FormatError("load_model: layer shapes do not match m / latent header");
    }
    for (Mlp* net : {&model.branch, &model.trunk}) {
        for (auto& layer : net->layers) {
            for (Eigen::Index r = 0; r < layer.w.rows(); ++r) {
                for (Eigen::Index c = 0; c < layer.w.cols(); ++c) layer.w(r, c) = io::get_f64(is, "weights");
            }
            for (Eigen::Index r = 0; r < layer.b.size(); ++r) layer.b(r) = io::get_f64(is, "biases");
        }
    }
    if (is.peek() != std::char_traits<char>::eof()) throw FormatError("load_model: trailing bytes after parameters");
    for (auto blk : parameter_blocks(model)) {
        if (!all_finite(blk)) throw FormatError("load_model: non-finite parameter");
    }
    if (!std::isfinite(model.in_scale) || !std::isfinite(model.out_scale)) {
        throw FormatError("load_model: non-finite scale");
    }
    return model;
}

inline DeepONetModel load_model(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("load_model: cannot open " + path);
    return load_model(is);
}

}  // namespace arzno
