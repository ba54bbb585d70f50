#include <arzno/arzno.hpp>

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "property_checks.hpp"

using namespace arzno;

namespace {

Field sample_c(std::size_t m, double scale = 0.015) {
    Field c(m);
    for (std::size_t i = 0; i < m; ++i) c[i] = -scale * std::exp(-static_cast<double>(i) / static_cast<double>(m - 1));
    return c;
}

// Scalar reference evaluation written independently of the Eigen path.
std::array<double, 2> naive_forward(const DeepONetModel& model, const Field& c, double x, double xi) {
    auto run = [](const Mlp& net, std::vector<double> a) {
        for (std::size_t l = 0; l < net.layers.size(); ++l) {
            const auto& layer = net.layers[l];
            std::vector<double> z(static_cast<std::size_t>(layer.w.rows()));
            for (Eigen::Index r = 0; r < layer.w.rows(); ++r) {
                double s = layer.b(r);
                for (Eigen::Index k = 0; k < layer.w.cols(); ++k) s += layer.w(r, k) * a[static_cast<std::size_t>(k)];
                const bool act = l + 1 < net.layers.size() || net.activate_last;
                z[static_cast<std::size_t>(r)] = act ? std::tanh(s) : s;
            }
            a = std::move(z);
        }
        return a;
    };
    std::vector<double> in(c.size());
    for (std::size_t i = 0; i < c.size(); ++i) in[i] = c[i] * model.in_scale;
    const auto g = run(model.branch, in);
    const auto f = run(model.trunk, {2.0 * x - 1.0, 2.0 * xi - 1.0});
    double ku = 0.0, kv = 0.0;
    for (std::size_t i = 0; i < model.latent; ++i) {
        ku += g[i] * f[i];
        kv += g[model.latent + i] * f[i];
    }
    return {model.out_scale * (ku + model.head_bias(0)), model.out_scale * (kv + model.head_bias(1))};
}

DeepONetModel random_model(std::uint64_t seed, const ArchConfig& arch = {41, 32, 2, 16}) {
    DeepONetModel m = make_deeponet(arch, seed);
    m.in_scale = 50.0;
    m.out_scale = 0.3;
    m.head_bias << 0.01, -0.02;
    return m;
}

std::string bytes_of(const DeepONetModel& m) { return checks::model_bytes(m); }

}  // namespace

TEST(Activation, ExpFormMatchesStdTanh) {
    Eigen::MatrixXd z(1, 2001);
    for (Eigen::Index i = 0; i < z.cols(); ++i) z(0, i) = -40.0 + 0.04 * static_cast<double>(i);
    Eigen::MatrixXd t = z;
    nn::tanh_inplace(t);
    for (Eigen::Index i = 0; i < z.cols(); ++i) EXPECT_NEAR(t(0, i), std::tanh(z(0, i)), 1e-15);
}

TEST(DeepONetForward, ZeroWeightsGiveZero) {
    DeepONetModel m = random_model(1);
    for (auto blk : parameter_blocks(m)) std::fill(blk.begin(), blk.end(), 0.0);
    const auto out = forward(m, sample_c(41), mesh_queries(TriMesh{11}));
    for (const auto& o : out) {
        EXPECT_EQ(o[0], 0.0);
        EXPECT_EQ(o[1], 0.0);
    }
}

TEST(DeepONetForward, DuplicateQueriesAgree) {
    const DeepONetModel m = random_model(2);
    const std::vector<std::array<double, 2>> q{{0.5, 0.25}, {0.9, 0.1}, {0.5, 0.25}};
    const auto out = forward(m, sample_c(41), q);
    EXPECT_EQ(out[0], out[2]);
}

TEST(DeepONetForward, InnerProductStructureMatchesNaiveEvaluation) {
    const DeepONetModel m = random_model(3);
    const Field c = sample_c(41);
    const std::vector<std::array<double, 2>> q{{0.0, 0.0}, {1.0, 1.0}, {0.7, 0.3}, {1.0, 0.0}, {0.33, 0.33}};
    const auto out = forward(m, c, q);
    for (std::size_t k = 0; k < q.size(); ++k) {
        const auto ref = naive_forward(m, c, q[k][0], q[k][1]);
        EXPECT_NEAR(out[k][0], ref[0], 1e-13);
        EXPECT_NEAR(out[k][1], ref[1], 1e-13);
    }
}

TEST(DeepONetForward, MeshEvaluatorMatchesForward) {
    const DeepONetModel m = random_model(4);
    const TriMesh mesh{41};
    const Field c = sample_c(41);
    const KernelPair kp = MeshEvaluator(m, mesh).evaluate(c);
    const auto out = forward(m, c, mesh_queries(mesh));
    ASSERT_EQ(kp.ku.size(), out.size());
    for (std::size_t q = 0; q < out.size(); ++q) {
        EXPECT_NEAR(kp.ku[q], out[q][0], 1e-13);
        EXPECT_NEAR(kp.kv[q], out[q][1], 1e-13);
    }
}

TEST(DeepONetForward, DomainErrors) {
    const DeepONetModel m = random_model(5);
    const std::vector<std::array<double, 2>> outside{{0.3, 0.5}};
    EXPECT_THROW(forward(m, sample_c(41), outside), DomainError);
    const std::vector<std::array<double, 2>> negative{{0.3, -0.1}};
    EXPECT_THROW(forward(m, sample_c(41), negative), DomainError);
    const std::vector<std::array<double, 2>> beyond{{1.2, 0.1}};
    EXPECT_THROW(forward(m, sample_c(41), beyond), DomainError);
    const std::vector<std::array<double, 2>> inside{{0.3, 0.2}};
    EXPECT_THROW(forward(m, sample_c(40), inside), DomainError);
}

TEST(DeepONetForward, PermutationSensitive) {
    const DeepONetModel m = random_model(6);
    Field c = sample_c(41);
    Field p = c;
    std::reverse(p.begin(), p.end());
    const TriMesh mesh{21};
    const KernelPair a = MeshEvaluator(m, mesh).evaluate(c);
    const KernelPair b = MeshEvaluator(m, mesh).evaluate(p);
    double d = 0.0;
    for (std::size_t q = 0; q < a.ku.size(); ++q) d = std::max(d, std::abs(a.ku[q] - b.ku[q]));
    EXPECT_GT(d, 1e-6);
}

TEST(DeepONetModel, ParameterCount) {
    const DeepONetModel m = make_deeponet(ArchConfig{}, 1);
    // branch 41-128-128-128-128, trunk 2-128-128-128-64, plus 2 head biases
    const std::size_t branch = 41 * 128 + 128 + 2 * (128 * 128 + 128) + 128 * 128 + 128;
    const std::size_t trunk = 2 * 128 + 128 + 2 * (128 * 128 + 128) + 128 * 64 + 64;
    EXPECT_EQ(parameter_count(m), branch + trunk + 2);
    EXPECT_THROW(make_deeponet(ArchConfig{0, 1, 1, 1}, 1), DomainError);
}

TEST(Gradient, MatchesCentralDifferences) {
    for (std::uint64_t seed : {5, 17, 29}) {
        const auto c = checks::gradient_check(seed);
        EXPECT_TRUE(c.pass) << "seed " << seed << " worst relative mismatch " << c.measured;
    }
}

TEST(Training, SingleSampleMemorized) {
    const auto samples = checks::tau_family_samples(TrafficParams{}, 11, 1);
    const TrainingSet set = make_training_set(samples, 11);
    TrainConfig cfg;
    cfg.epochs = 40000;
    cfg.batch_size = 1;
    cfg.learning_rate = 3e-4;
    const auto res = train(set, nullptr, cfg, ArchConfig{11, 16, 2, 8});
    EXPECT_LT(res.history.back().train_loss, 1e-6);
}

TEST(Training, ShuffledLabelsPlateauNearVariance) {
    // Negative control: with labels permuted across samples, the held-out
    // loss cannot beat the per-node variance of the targets by much; with the
    // true labels it does.
    const std::size_t n = 9;
    auto samples = checks::tau_family_samples(TrafficParams{}, n, 48);
    std::vector<KernelSample> shuffled = samples;
    std::mt19937_64 rng(1);
    std::vector<std::size_t> perm(samples.size());
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    for (std::size_t s = 0; s < samples.size(); ++s) shuffled[s].k = samples[perm[s]].k;

    std::vector<KernelSample> tr_true, va_true, tr_shuf, va_shuf;
    for (std::size_t s = 0; s < samples.size(); ++s) {
        (s % 4 == 1 ? va_true : tr_true).push_back(samples[s]);
        (s % 4 == 1 ? va_shuf : tr_shuf).push_back(shuffled[s]);
    }
    TrainConfig cfg;
    cfg.epochs = 300;
    cfg.batch_size = 8;
    const ArchConfig arch{n, 24, 2, 8};

    auto run = [&](const std::vector<KernelSample>& tr, const std::vector<KernelSample>& va) {
        const TrainingSet a = make_training_set(tr, n), b = make_training_set(va, n);
        const auto res = train(a, &b, cfg, arch);
        // Oracle: variance of validation targets about the training mean, in the model's units.
        const double s = res.model.out_scale;
        Eigen::VectorXd mu_u = a.target_u.rowwise().mean(), mu_v = a.target_v.rowwise().mean();
        const double var = ((b.target_u.colwise() - mu_u).squaredNorm() + (b.target_v.colwise() - mu_v).squaredNorm()) /
                           (2.0 * static_cast<double>(b.target_u.size())) / (s * s);
        double best = 1e300;
        for (const auto& e : res.history) best = std::min(best, e.val_loss);
        return std::pair{best, var};
    };
    const auto [shuf_loss, shuf_var] = run(tr_shuf, va_shuf);
    const auto [true_loss, true_var] = run(tr_true, va_true);
    EXPECT_GE(shuf_loss, 0.5 * shuf_var);
    EXPECT_LE(true_loss, 0.1 * true_var);
}

TEST(Training, SeededRunsAreByteIdentical) {
    const auto c = checks::seeded_training_reproducible(TrafficParams{});
    EXPECT_TRUE(c.pass);
}

TEST(Training, BestValidationEpochReturned) {
    const auto samples = checks::tau_family_samples(TrafficParams{}, 9, 10);
    const TrainingSet set = make_training_set(samples, 9);
    TrainConfig cfg;
    cfg.epochs = 20;
    cfg.batch_size = 4;
    const auto res = train(set, nullptr, cfg, ArchConfig{9, 16, 2, 8});
    ASSERT_EQ(res.history.size(), 20u);
    double best = 1e300;
    for (const auto& e : res.history) best = std::min(best, e.val_loss);
    EXPECT_EQ(res.history[res.best_epoch - 1].val_loss, best);
}

TEST(Training, Errors) {
    TrainingSet empty;
    EXPECT_THROW(train(empty, nullptr, TrainConfig{}, ArchConfig{}), DomainError);
    const auto samples = checks::tau_family_samples(TrafficParams{}, 9, 3);
    const TrainingSet set = make_training_set(samples, 9);
    EXPECT_THROW(train(set, nullptr, TrainConfig{}, ArchConfig{41, 8, 1, 4}), DomainError);
    std::vector<KernelSample> mixed = samples;
    mixed.push_back(checks::tau_family_samples(TrafficParams{}, 11, 1).front());
    EXPECT_THROW(make_training_set(mixed, 9), DomainError);
    EXPECT_THROW(make_training_set(std::vector<KernelSample>{}, 9), DomainError);
    TrainConfig bad;
    bad.learning_rate = 0.0;
    EXPECT_THROW(train(set, nullptr, bad, ArchConfig{9, 8, 1, 4}), DomainError);
}

TEST(EvalAccuracy, ExactLookupHasZeroError) {
    const auto samples = checks::tau_family_samples(TrafficParams{}, 11, 3);
    const auto rep = eval_accuracy(
        [&](std::span<const double> c) {
            for (const auto& s : samples)
                if (std::equal(c.begin(), c.end(), s.c.begin(), s.c.end())) return s.k;
            throw std::logic_error("unknown input");
        },
        samples);
    EXPECT_EQ(rep.samples, 3u);
    EXPECT_EQ(rep.sup_error, 0.0);
    EXPECT_EQ(rep.ku_mean, 0.0);
    EXPECT_EQ(rep.kv_mean, 0.0);
}

TEST(EvalAccuracy, UntrainedModelErrorMatchesKernelScale) {
    const auto samples = checks::tau_family_samples(TrafficParams{}, 41, 4);
    DeepONetModel m = make_deeponet(ArchConfig{}, 1);
    m.in_scale = 50.0;
    double k_max = 0.0;
    for (const auto& s : samples) k_max = std::max({k_max, sup_norm(s.k.ku), sup_norm(s.k.kv)});
    m.out_scale = k_max;
    const auto rep = eval_accuracy(m, samples);
    EXPECT_GT(rep.sup_error, 0.1 * k_max);
    EXPECT_LT(rep.sup_error, 100.0 * k_max);
}

TEST(Serialization, RoundTripIsBitExact) {
    const auto c = checks::serialization_round_trip();
    EXPECT_TRUE(c.pass) << c.measured;
}

TEST(Serialization, FileRoundTrip) {
    const DeepONetModel m = random_model(8);
    const std::string path = ::testing::TempDir() + "arzno_model_rt.bin";
    save_model(m, path);
    EXPECT_EQ(bytes_of(load_model(path)), bytes_of(m));
    EXPECT_THROW(load_model(::testing::TempDir() + "does_not_exist.bin"), FormatError);
}

TEST(Serialization, CorruptInputsRaiseFormatError) {
    const std::string good = bytes_of(random_model(9));
    auto load = [](const std::string& b) {
        std::istringstream is(b, std::ios::binary);
        return load_model(is);
    };
    EXPECT_NO_THROW(load(good));
    for (std::size_t cut : {std::size_t{0}, std::size_t{5}, std::size_t{20}, good.size() / 2, good.size() - 1}) {
        EXPECT_THROW(load(good.substr(0, cut)), FormatError) << "cut at " << cut;
    }
    std::string bad_magic = good;
    bad_magic[0] = 'X';
    EXPECT_THROW(load(bad_magic), FormatError);
    std::string bad_version = good;
    bad_version[8] = 7;
    EXPECT_THROW(load(bad_version), FormatError);
    std::string bad_m = good;
    bad_m[12] = 40;  // header m disagrees with layer shapes
    EXPECT_THROW(load(bad_m), FormatError);
    EXPECT_THROW(load(good + "x"), FormatError);
    std::string nan_scale = good;
    for (int i = 0; i < 8; ++i) nan_scale[24 + i] = static_cast<char>(0xFF);
    EXPECT_THROW(load(nan_scale), FormatError);
}
