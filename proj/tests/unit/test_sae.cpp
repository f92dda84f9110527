#include <doctest.h>

#include "svtc/activation/surrogate.hpp"
#include "svtc/common/error.hpp"
#include "svtc/common/seed.hpp"
#include "svtc/datagen/split.hpp"
#include "svtc/sae/sae.hpp"
#include "support/oracles.hpp"
#include "support/tempdir.hpp"

using namespace svtc;

namespace {

Eigen::MatrixXd gaussian(int n, int d, std::uint64_t seed, double scale = 1.0) {
    Rng rng = make_rng(seed);
    Eigen::MatrixXd X(n, d);
    for (Eigen::Index i = 0; i < X.size(); ++i) X.data()[i] = scale * standard_normal(rng);
    return X;
}

SaeParams random_params(int d, int m, int k, std::uint64_t seed) {
    SaeParams p = init_sae(d, m, k, gaussian(8, d, seed + 1), seed);
    Rng rng = make_rng(seed + 2);
    for (Eigen::Index i = 0; i < p.W_enc.size(); ++i) p.W_enc.data()[i] += 0.3 * standard_normal(rng);
    for (Eigen::Index i = 0; i < p.b_enc.size(); ++i) p.b_enc[i] = 0.1 * standard_normal(rng);
    return p;
}

} // namespace

TEST_CASE("topk keeps the k largest with lowest-index ties") {
    CHECK(topk(Eigen::Vector4d(3, 1, 2, 0.5), 2) == Eigen::Vector4d(3, 0, 2, 0));
    CHECK(topk(Eigen::Vector3d(2, 2, 1), 1) == Eigen::Vector3d(2, 0, 0));
    const Eigen::Vector4d v(0.5, 4, 1, 2);
    CHECK(topk(v, 4) == v);
    Rng rng = make_rng(3);
    for (int trial = 0; trial < 200; ++trial) {
        Eigen::VectorXd x(12);
        for (int i = 0; i < 12; ++i) x[i] = uniform_int(rng, -3, 3); // many ties
        const int k = uniform_int(rng, 0, 12);
        CHECK(topk(x, k) == oracle::topk(x, k));
    }
}

TEST_CASE("encode: zero input with non-positive bias gives the zero code") {
    SaeParams p = random_params(6, 24, 4, 1);
    p.b_enc = -p.b_enc.cwiseAbs();
    CHECK(encode(Eigen::VectorXd::Zero(6), p).nnz() == 0);
}

TEST_CASE("encode: at most k nonzeros and agreement with the dense oracle") {
    const SaeParams p = random_params(10, 40, 5, 2);
    Rng rng = make_rng(4);
    for (int trial = 0; trial < 1000; ++trial) {
        Eigen::VectorXd h(10);
        for (int i = 0; i < 10; ++i) h[i] = standard_normal(rng);
        const SparseCode z = encode(h, p);
        CHECK(z.nnz() <= 5);
        for (double v : z.value) CHECK(v > 0.0);
        if (trial < 100) CHECK((encode_dense(h, p) - oracle::encode(h, p)).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("encode: identity-like parameters pass a positive one-hot through") {
    SaeParams p;
    p.W_enc = Eigen::MatrixXd::Identity(5, 5);
    p.b_enc = Eigen::VectorXd::Zero(5);
    p.D = Eigen::MatrixXd::Identity(5, 5);
    p.b_dec = Eigen::VectorXd::Zero(5);
    p.k = 1;
    Eigen::VectorXd h = Eigen::VectorXd::Zero(5);
    h[3] = 2.5;
    CHECK(encode_dense(h, p) == h);
    CHECK(decode(encode(h, p), p) == h);
}

TEST_CASE("decode: zero code, unit column, linearity") {
    const SaeParams p = random_params(7, 21, 3, 5);
    CHECK(decode_dense(Eigen::VectorXd::Zero(21), p) == p.b_dec);
    for (int j = 0; j < 21; ++j) {
        Eigen::VectorXd e = Eigen::VectorXd::Zero(21);
        e[j] = 1.0;
        const Eigen::VectorXd h = decode_dense(e, p);
        CHECK((h - p.b_dec - p.D.col(j)).norm() < 1e-15);
        CHECK((h - p.b_dec).norm() == doctest::Approx(1.0).epsilon(1e-12));
    }
    Rng rng = make_rng(6);
    Eigen::VectorXd z1(21), z2(21);
    for (int j = 0; j < 21; ++j) {
        z1[j] = uniform01(rng);
        z2[j] = uniform01(rng);
    }
    CHECK((decode_dense(z1 + z2, p) - (decode_dense(z1, p) + decode_dense(z2, p) - p.b_dec)).norm() < 1e-12);
}

TEST_CASE("decoder gradient matches central finite differences") {
    for (std::uint64_t inst = 0; inst < 20; ++inst) {
        const SaeParams p = random_params(4, 8, 3, 100 + inst);
        const Eigen::MatrixXd X = gaussian(6, 4, 200 + inst);
        const Eigen::MatrixXd g = decoder_gradient(X, p);
        const Eigen::MatrixXd fd = oracle::decoder_gradient_fd(X, p);
        CHECK((g - fd).norm() / std::max(fd.norm(), 1e-12) <= 1e-4);
    }
}

TEST_CASE("a single repeated vector is reconstructed almost exactly") {
    Eigen::VectorXd v(8);
    v << 1, -2, 0.5, 3, 0, 1, -1, 2;
    Eigen::MatrixXd X = Eigen::MatrixXd::Zero(256, 8);
    X.rowwise() += v.transpose();
    SaeTrainConfig cfg;
    cfg.steps = 600;
    cfg.batch_size = 64;
    cfg.lr = 1e-2;
    TrainStats st;
    const SaeParams p = train_sae(X, 16, 2, cfg, &st);
    CHECK(st.final_relative_error <= 1e-3);
    CHECK((decode(encode(v, p), p) - v).norm() / v.norm() <= 1e-3);
}

TEST_CASE("training keeps unit decoder norms at every checkpoint and lowers the loss") {
    const Eigen::MatrixXd X = gaussian(2000, 12, 9);
    SaeTrainConfig cfg;
    cfg.steps = 400;
    cfg.checkpoint_every = 50;
    TrainStats st;
    std::vector<int> steps;
    const SaeParams p = train_sae(X, 48, 4, cfg, &st, [&](int step, const SaeParams& q) {
        steps.push_back(step);
        CHECK(q.max_norm_deviation() <= 1e-6);
    });
    CHECK(steps.size() == 8);
    CHECK(steps.back() == 400);
    CHECK(st.max_norm_deviation <= 1e-6);
    CHECK(st.final_loss < st.initial_loss);
    CHECK(st.step_loss.size() == 400);
    CHECK(st.final_loss == doctest::Approx(reconstruction_loss(X, p)));
}

TEST_CASE("training is deterministic under a fixed seed") {
    const Eigen::MatrixXd X = gaussian(500, 6, 12);
    SaeTrainConfig cfg;
    cfg.steps = 50;
    const SaeParams a = train_sae(X, 24, 3, cfg, nullptr);
    const SaeParams b = train_sae(X, 24, 3, cfg, nullptr);
    CHECK(a.D == b.D);
    CHECK(a.W_enc == b.W_enc);
    cfg.seed += 1;
    CHECK(train_sae(X, 24, 3, cfg, nullptr).D != a.D);
}

TEST_CASE("desk-scale surrogate activations train to a relative error below 0.35") {
    const SurrogateModel model(SurrogateConfig{});
    GenConfig gc;
    const int n_img = model.image_tokens();
    const int records = 20000 / n_img;
    Eigen::MatrixXd X(records * n_img, model.config().dim);
    for (int i = 0; i < records; ++i) {
        const auto rec = model.forward(
            features_of(generate_example(SplitName::train, gc.split_seed(SplitName::train), static_cast<std::size_t>(i),
                                         gc, Vocabulary::builtin())));
        X.middleRows(i * n_img, n_img) =
            rec.layer(static_cast<std::uint32_t>(model.config().plant_layer)).topRows(n_img).cast<double>();
    }
    TrainStats st;
    train_sae(X, 8 * model.config().dim, 8, SaeTrainConfig{}, &st);
    CHECK(st.final_relative_error <= 0.35);
    CHECK(st.final_loss <= 0.5 * st.initial_loss);
}

TEST_CASE("checkpoint round trip and validation") {
    testing::TempDir dir("sae");
    const SaeParams p = random_params(5, 15, 3, 7);
    save_sae(dir / "s.bin", p);
    const SaeParams q = load_sae(dir / "s.bin");
    CHECK(q.k == 3);
    CHECK((q.D - p.D).cwiseAbs().maxCoeff() < 1e-6);
    CHECK((q.W_enc - p.W_enc).cwiseAbs().maxCoeff() < 1e-6);
    {
        std::ofstream out(dir / "bad.bin", std::ios::binary);
        out << "NOPE";
    }
    CHECK_THROWS_AS(load_sae(dir / "bad.bin"), FormatError);
    SaeParams bad = p;
    bad.k = 99;
    CHECK_THROWS_AS(bad.validate(), ValidationError);
}
