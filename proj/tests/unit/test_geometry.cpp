#include <doctest.h>

#include <cmath>
#include <random>

#include "svtc/common/error.hpp"
#include "svtc/geometry/geometry.hpp"
#include "support/desk.hpp"

using namespace svtc;

namespace {

Eigen::VectorXd vec(std::initializer_list<double> v) {
    Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
    Eigen::Index i = 0;
    for (double x : v) out(i++) = x;
    return out;
}

// Dictionary whose columns are +e_i then -e_i for i < d.
SaeParams signed_basis(int d) {
    SaeParams s;
    s.D = Eigen::MatrixXd::Zero(d, 2 * d);
    for (int i = 0; i < d; ++i) {
        s.D(i, i) = 1.0;
        s.D(i, d + i) = -1.0;
    }
    s.W_enc = s.D.transpose();
    s.b_enc = Eigen::VectorXd::Zero(2 * d);
    s.b_dec = Eigen::VectorXd::Zero(d);
    s.k = 1;
    return s;
}

Eigen::VectorXd unit(int d, int i) { return Eigen::VectorXd::Unit(d, i); }

} // namespace

TEST_CASE("mean effective direction: constant code, linearity over disjoint sets, zero codes") {
    const SaeParams s = signed_basis(4);
    Eigen::MatrixXd ones = Eigen::MatrixXd::Zero(10, 8);
    ones.col(2).setOnes();
    const auto one = mean_effective_direction(ones, s, {2});
    CHECK((one.delta - s.D.col(2)).norm() == 0.0);
    CHECK(one.norm == 1.0);
    CHECK(one.samples == 10);

    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0.0, 2.0);
    Eigen::MatrixXd codes(50, 8);
    for (Eigen::Index i = 0; i < codes.size(); ++i) codes.data()[i] = u(rng);
    const auto a = mean_effective_direction(codes, s, {0, 5});
    const auto b = mean_effective_direction(codes, s, {1, 6, 7});
    const auto ab = mean_effective_direction(codes, s, {0, 1, 5, 6, 7});
    CHECK((ab.delta - a.delta - b.delta).norm() < 1e-12);

    const auto z = mean_effective_direction(Eigen::MatrixXd::Zero(3, 8), s, {1, 2});
    CHECK(z.norm == 0.0);
    CHECK_THROWS_AS(mean_effective_direction(Eigen::MatrixXd(0, 8), s, {1}), ValidationError);
    CHECK_THROWS_AS(mean_effective_direction(codes, s, {}), ValidationError);
}

TEST_CASE("cosine interference: self, planted antagonism, orthogonal, scaling, zero norm") {
    const auto a = vec({0.3, -1.2, 2.0});
    CHECK(cosine_interference(a, a).rho == doctest::Approx(1.0).epsilon(1e-15));

    const double rho = -0.33;
    const Eigen::VectorXd p = unit(2, 0);
    const Eigen::VectorXd g = vec({rho, std::sqrt(1.0 - rho * rho)});
    const auto ci = cosine_interference(p, g);
    CHECK(std::abs(ci.rho - rho) < 1e-15);
    CHECK(std::abs(ci.union_norm - std::sqrt(1.34)) <= 1e-9);
    CHECK(ci.union_norm < 2.0);
    CHECK(ci.union_ratio == doctest::Approx(std::sqrt(1.34) / 2.0));

    const auto o = cosine_interference(unit(3, 0), unit(3, 2));
    CHECK(o.rho == 0.0);
    CHECK(o.union_norm == doctest::Approx(std::sqrt(2.0)).epsilon(1e-15));

    const auto b = vec({1.0, 0.5, -0.25});
    CHECK(cosine_interference(3.5 * a, 0.01 * b).rho == doctest::Approx(cosine_interference(a, b).rho).epsilon(1e-14));
    CHECK_THROWS_AS(cosine_interference(a, Eigen::VectorXd::Zero(3)), ValidationError);
}

TEST_CASE("union-norm identity holds on random pairs") {
    std::mt19937_64 rng(11);
    std::normal_distribution<double> n(0.0, 1.0);
    for (int t = 0; t < 200; ++t) {
        Eigen::VectorXd a(16), b(16);
        for (int i = 0; i < 16; ++i) {
            a(i) = n(rng);
            b(i) = n(rng) * 3.0;
        }
        const auto ci = cosine_interference(a, b);
        const double rhs = a.squaredNorm() + b.squaredNorm() + 2.0 * ci.rho * a.norm() * b.norm();
        CHECK(std::abs(ci.union_norm * ci.union_norm - rhs) <= 1e-10 * std::max(1.0, rhs));
    }
}

TEST_CASE("pairwise alignment: self pair, signed basis enumeration, symmetry") {
    const SaeParams s = signed_basis(3);
    const auto self = pairwise_alignment(s, {1}, {1});
    CHECK(self.fraction_negative == 0.0);
    CHECK(self.pairs == 1);

    // A = {+e0, +e1, -e2}, B = {-e0, +e2}: negative pairs are (+e0,-e0) and (-e2,+e2).
    const std::vector<int> A{0, 1, 5};
    const std::vector<int> B{3, 2};
    const auto r = pairwise_alignment(s, A, B);
    CHECK(r.pairs == 6);
    CHECK(r.fraction_negative == doctest::Approx(2.0 / 6.0));
    const auto r2 = pairwise_alignment(s, B, A);
    CHECK(r2.fraction_negative == r.fraction_negative);
    std::size_t total = 0;
    for (auto c : r.histogram) total += c;
    CHECK(r.histogram.size() == 20);
    CHECK(total == 6);
    CHECK_THROWS_AS(pairwise_alignment(s, {}, B), ValidationError);
}

TEST_CASE("snr and nsr arithmetic") {
    const auto u = snr_analysis(unit(2, 0), unit(2, 1));
    CHECK(u.snr == 1.0);
    CHECK(u.nsr_out == 1.0);
    CHECK_FALSE(u.collapse);

    const auto h = snr_analysis(0.5 * unit(2, 0), unit(2, 1));
    CHECK(h.nsr_out == doctest::Approx(2.0 * u.nsr_out));

    const auto r = snr_analysis(vec({0.1, 0.0}), vec({0.0, 1.0}));
    CHECK(r.snr == doctest::Approx(0.01).epsilon(1e-12));
    CHECK(r.nsr_out == doctest::Approx(10.0).epsilon(1e-12));
    CHECK(r.collapse);

    const auto z = snr_analysis(Eigen::VectorXd::Zero(2), unit(2, 1));
    CHECK(z.infinite);
    CHECK(std::isinf(z.nsr_out));
    CHECK(z.collapse);
    CHECK_THROWS_AS(snr_analysis(unit(2, 0), Eigen::VectorXd::Zero(2)), ValidationError);
}

TEST_CASE("layernorm amplification: noiseless, inverse law slope, gain invariance") {
    const int d = 64;
    Eigen::VectorXd dir(d);
    for (int i = 0; i < d; ++i) dir(i) = (i % 2 == 0) ? 1.0 : -1.0;
    const Eigen::VectorXd g = Eigen::VectorXd::Ones(d);
    const Eigen::VectorXd b = Eigen::VectorXd::Zero(d);
    const std::vector<double> sweep{1e-3, 2e-3, 5e-3, 1e-2, 2e-2, 5e-2, 1e-1};

    const auto clean = layernorm_amplification_sim(dir, 0.0, sweep, g, b, 4, 1);
    for (const auto& p : clean.points) CHECK(p.noise_share == 0.0);

    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const auto c = layernorm_amplification_sim(dir, 1.0, sweep, g, b, 200, seed);
        CHECK(std::abs(c.slope + 1.0) <= 0.1);
    }
    const auto c1 = layernorm_amplification_sim(dir, 1.0, sweep, g, b, 50, 3);
    const auto c2 = layernorm_amplification_sim(dir, 1.0, sweep, 2.0 * g, b, 50, 3);
    for (std::size_t i = 0; i < sweep.size(); ++i)
        CHECK(c2.points[i].noise_share == doctest::Approx(c1.points[i].noise_share).epsilon(1e-12));

    CHECK_THROWS_AS(layernorm_amplification_sim(Eigen::VectorXd::Ones(d), 1.0, sweep, g, b, 4, 1), ValidationError);
    CHECK_THROWS_AS(layernorm_amplification_sim(dir, 1.0, {0.0}, g, b, 4, 1), ValidationError);
}

TEST_CASE("attention entropy: single patch, isotropic limit, peaked signal") {
    const int d = 32;
    std::mt19937_64 rng(2);
    std::normal_distribution<double> n(0.0, 1.0 / std::sqrt(static_cast<double>(d)));
    Eigen::MatrixXd Wq(d, d), Wk(d, d);
    for (Eigen::Index i = 0; i < Wq.size(); ++i) {
        Wq.data()[i] = n(rng);
        Wk.data()[i] = n(rng);
    }
    const Eigen::VectorXd dir = unit(d, 0);

    const auto one = attention_entropy_probe(Wq, Wk, dir, {0.0, 1.0, 10.0}, 1.0, 1, 20, 1);
    for (const auto& p : one.points) CHECK(p.entropy == 0.0);

    const auto iso = attention_entropy_probe(Wq, Wk, dir, {0.0}, 1.0, 16, 400, 4);
    CHECK(iso.max_entropy == doctest::Approx(std::log(16.0)));
    CHECK(iso.points[0].entropy >= 0.95 * std::log(16.0));

    // With W_q = W_k = I the aligned query scores patch 0 at ‖h_s‖²/√d.
    const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(d, d);
    const auto curve = attention_entropy_probe(I, I, dir, {60.0, 20.0, 5.0, 1.0, 0.1, 0.0}, 1.0, 16, 100, 9);
    CHECK(curve.points.front().entropy < 0.5 * std::log(16.0));
    CHECK(curve.non_decreasing_as_signal_shrinks);
    CHECK(curve.points.back().entropy > curve.points.front().entropy);

    CHECK(softmax_entropy(vec({0.0, 0.0, 0.0, 0.0})) == doctest::Approx(std::log(4.0)));
}

TEST_CASE("curvature: affine map, quadratic closed form, surrogate fit, tiny alpha warning") {
    const Eigen::MatrixXd A = (Eigen::MatrixXd(3, 3) << 1, 2, 0, -1, 0.5, 3, 0, 0, 2).finished();
    const Eigen::VectorXd c = vec({0.1, -0.2, 0.3});
    const auto affine = curvature_drift_error([&](const Eigen::VectorXd& h) { return Eigen::VectorXd(A * h + c); },
                                              vec({0.4, 0.5, -0.6}), vec({1, 1, 0}), {1e-3, 1e-2, 1e-1});
    for (const auto& p : affine.points) CHECK(p.drift <= 1e-8);

    const auto quad = curvature_drift_error(
        [](const Eigen::VectorXd& h) { return Eigen::VectorXd(h + h.cwiseProduct(h)); }, vec({0.7, -0.3, 1.1}),
        unit(3, 0), {0.1, 0.05, 0.02});
    CHECK(std::abs(quad.points[0].gamma_norm - 2.0) <= 1e-8);
    for (const auto& p : quad.points) CHECK(std::abs(p.drift - p.alpha * p.alpha) <= 1e-8);
    CHECK(quad.fit_slope == doctest::Approx(1.0).epsilon(1e-6));

    auto& desk = testing::Desk::get();
    const int l = std::min(desk.plant() + 1, desk.model.config().layers - 1);
    const Eigen::MatrixXd h0 = desk.test_recs[0].layer(static_cast<std::uint32_t>(l - 1)).cast<double>();
    const auto rows = h0.rows();
    const auto cols = h0.cols();
    const VectorMap F = [&](const Eigen::VectorXd& x) {
        const Eigen::MatrixXd h = Eigen::Map<const Eigen::MatrixXd>(x.data(), rows, cols);
        const Eigen::MatrixXd out = desk.model.block_map_f64(l, h);
        return Eigen::VectorXd(Eigen::Map<const Eigen::VectorXd>(out.data(), out.size()));
    };
    const Eigen::VectorXd flat = Eigen::Map<const Eigen::VectorXd>(h0.data(), h0.size());
    std::mt19937_64 rng(3);
    std::normal_distribution<double> n(0.0, 1.0);
    Eigen::VectorXd v(flat.size());
    for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = n(rng);
    v /= v.norm();
    const auto surf = curvature_drift_error(F, flat, v, {1e-3, 3e-3, 1e-2, 3e-2, 1e-1});
    CHECK(surf.r2 >= 0.99);

    const auto tiny = curvature_drift_error(F, flat, v, {1e-9});
    CHECK_FALSE(tiny.warnings.empty());
    CHECK_THROWS_AS(curvature_drift_error(F, flat, v, {0.0}), ValidationError);
}

TEST_CASE("orthogonalized composition") {
    const Eigen::VectorXd p = vec({2.0, -1.0, 0.5});
    CHECK((osp_compose(p, -3.0 * p) - p).norm() < 1e-12);
    const Eigen::VectorXd q = vec({1.0, 2.0, 0.0});
    CHECK((osp_compose(p, q) - (p + q)).norm() < 1e-15);

    const auto hand = osp_compose(vec({1.0, 0.0}), vec({-0.33, 0.944}));
    CHECK(std::abs(hand(0) - 1.0) < 1e-15);
    CHECK(std::abs(hand(1) - 0.944) < 1e-15);

    std::mt19937_64 rng(8);
    std::normal_distribution<double> n(0.0, 1.0);
    for (int t = 0; t < 100; ++t) {
        Eigen::VectorXd a(12), b(12);
        for (int i = 0; i < 12; ++i) {
            a(i) = n(rng);
            b(i) = n(rng);
        }
        const auto out = osp_compose(a, b);
        CHECK(std::abs((out - a).dot(a)) <= 1e-10 * a.squaredNorm());
        CHECK(out.dot(a) / a.norm() == doctest::Approx(a.norm()).epsilon(1e-12));
    }
    CHECK_THROWS_AS(osp_compose(Eigen::VectorXd::Zero(3), q), ValidationError);
}

TEST_CASE("conditional co-activation") {
    CHECK(conditional_coactivation({true, false, true}, {true, true, true}).value() == 1.0);
    CHECK(conditional_coactivation({true, true, false, true}, {true, false, true, false}).value() ==
          doctest::Approx(1.0 / 3.0));
    CHECK_FALSE(conditional_coactivation({false, false}, {true, true}).has_value());
    CHECK_THROWS_AS(conditional_coactivation({true}, {true, false}), ValidationError);
}
