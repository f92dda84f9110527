#include <doctest.h>

#include <cmath>
#include <limits>

#include "svtc/circuits/circuits.hpp"
#include "svtc/common/error.hpp"
#include "svtc/common/seed.hpp"
#include "support/desk.hpp"
#include "support/oracles.hpp"
#include "support/tempdir.hpp"

using namespace svtc;

namespace {

SelectivityTable table_of(const std::vector<double>& sigma) {
    SelectivityTable t;
    for (double s : sigma) t.rows.push_back({0, 0, 0, 0, s});
    return t;
}

} // namespace

TEST_CASE("selectivity: equal means give zero, hand-computed case gives sqrt 2") {
    Eigen::MatrixXd C(4, 2);
    C << 1, 2 - std::sqrt(2.0),
         3, 2 + std::sqrt(2.0),
         1, -std::sqrt(2.0),
         3, std::sqrt(2.0);
    const std::vector<bool> pos{true, true, false, false};
    const auto t = compute_selectivity(C, pos, 0.0);
    CHECK(t.rows[0].sigma == 0.0);
    CHECK(t.rows[1].mu_pos == doctest::Approx(2.0));
    CHECK(t.rows[1].mu_neg == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(t.rows[1].var_pos == doctest::Approx(2.0));
    CHECK(t.rows[1].sigma == doctest::Approx(std::sqrt(2.0)));
    CHECK(t.n_pos == 2);
    CHECK(t.n_neg == 2);
}

TEST_CASE("selectivity: zero variance with eps 0 is signed infinity") {
    Eigen::MatrixXd C(4, 2);
    C << 1, 0, 1, 0, 0, 1, 0, 1;
    const auto t = compute_selectivity(C, {true, true, false, false}, 0.0);
    CHECK(t.rows[0].sigma == std::numeric_limits<double>::infinity());
    CHECK(t.rows[1].sigma == -std::numeric_limits<double>::infinity());
}

TEST_CASE("selectivity: single pass agrees with the two-pass oracle") {
    Rng rng = make_rng(17);
    for (int draw = 0; draw < 200; ++draw) {
        const int n = uniform_int(rng, 4, 60);
        const int m = uniform_int(rng, 1, 12);
        Eigen::MatrixXd C(n, m);
        for (Eigen::Index i = 0; i < C.size(); ++i) C.data()[i] = bernoulli(rng, 0.4) ? 0.0 : 5 * uniform01(rng);
        std::vector<bool> pos(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) pos[static_cast<size_t>(i)] = i < 2 ? i == 0 : bernoulli(rng, 0.3);
        const auto t = compute_selectivity(C, pos, 1e-6);
        const auto o = oracle::selectivity(C, pos, 1e-6);
        for (int j = 0; j < m; ++j) {
            CHECK(std::abs(t.rows[j].mu_pos - o[j].mu_pos) <= 1e-10);
            CHECK(std::abs(t.rows[j].var_neg - o[j].var_neg) <= 1e-10);
            CHECK(std::abs(t.rows[j].sigma - o[j].sigma) <= 1e-10);
        }
    }
}

TEST_CASE("selectivity: empty pools and size mismatches are rejected") {
    const Eigen::MatrixXd C = Eigen::MatrixXd::Ones(3, 2);
    CHECK_THROWS_AS(compute_selectivity(C, {true, true, true}), ValidationError);
    CHECK_THROWS_AS(compute_selectivity(C, {true, false}), ValidationError);
}

TEST_CASE("selection: threshold, top-n fallback and the vacuous threshold") {
    const auto t = table_of({0.2, 1.7, 1.5, -3.0, 1.4});
    const auto s = select_features(t, SetKind::pattern, {1.5, 16});
    CHECK(s.indices == std::vector<int>{1, 2});
    const auto fb = select_features(t, SetKind::global, {9.0, 2});
    CHECK(fb.indices == std::vector<int>{1, 2});
    CHECK(fb.rule.find("top2") != std::string::npos);
    CHECK_THROWS_AS(select_features(t, SetKind::pattern, {std::numeric_limits<double>::infinity(), 0}),
                    ValidationError);
}

TEST_CASE("union, random and permuted controls") {
    FeatureSet p{SetKind::pattern, {1, 4, 9}, "r", 0};
    FeatureSet g{SetKind::global, {4, 7}, "r", 0};
    const auto u = union_of(p, g);
    CHECK(u.indices == std::vector<int>{1, 4, 7, 9});
    CHECK(u.kind == SetKind::union_set);

    const auto r1 = random_control(64, u.size(), u.indices, 5);
    const auto r2 = random_control(64, u.size(), u.indices, 5);
    CHECK(r1.indices == r2.indices);
    CHECK(r1.size() == u.size());
    for (int j : r1.indices) CHECK_FALSE(u.contains(j));
    CHECK(random_control(64, u.size(), u.indices, 6).indices != r1.indices);
    CHECK(std::is_sorted(r1.indices.begin(), r1.indices.end()));

    const std::vector<int> pool{3, 5, 8, 13, 21, 34};
    const auto pc = permuted_control(pool, 3, 2);
    CHECK(pc.size() == 3);
    for (int j : pc.indices) CHECK(std::find(pool.begin(), pool.end(), j) != pool.end());
    CHECK(permuted_control(pool, 6, 9).indices == pool);
    CHECK_THROWS_AS(random_control(5, 4, {0, 1}, 1), ValidationError);
}

TEST_CASE("feature sets round trip through JSONL") {
    testing::TempDir dir("sets");
    const std::vector<FeatureSet> sets{{SetKind::pattern, {2, 3}, "sigma>=1.5", 0},
                                       {SetKind::random_control, {0, 11}, "random", 77}};
    write_feature_sets(dir / "s.jsonl", sets);
    const auto back = read_feature_sets(dir / "s.jsonl", 12);
    REQUIRE(back.size() == 2);
    CHECK(back[1].kind == SetKind::random_control);
    CHECK(back[1].indices == sets[1].indices);
    CHECK(back[1].seed == 77);
    CHECK_THROWS_AS(read_feature_sets(dir / "s.jsonl", 5), Error);
    CHECK(parse_set_kind(to_string(SetKind::union_set)) == SetKind::union_set);
}

TEST_CASE("spatial maps equal per-token codes and vanish for inactive features") {
    auto& desk = testing::Desk::get();
    const auto& sae = desk.sae(desk.plant());
    const auto& rec = desk.test_recs[3];
    const auto l = static_cast<std::uint32_t>(desk.plant());
    const Eigen::MatrixXd z = token_codes(rec, l, sae, desk.n_img());
    const int H = desk.model.config().grid_h, W = desk.model.config().grid_w;
    int inactive = -1;
    for (int j = 0; j < sae.m() && inactive < 0; ++j) {
        if (z.col(j).isZero(0.0)) inactive = j;
    }
    REQUIRE(inactive >= 0);
    const auto zero = spatial_map(rec, sae, inactive, l, H, W);
    for (double v : zero.values) CHECK(v == 0.0);
    for (int j : {0, 17, 200}) {
        const auto map = spatial_map(rec, sae, j, l, H, W);
        for (int t = 0; t < desk.n_img(); ++t) {
            const Eigen::VectorXd h = rec.layer(l).row(t).cast<double>().transpose();
            CHECK(map.at(t / W, t % W) == encode(h, sae).get(j));
        }
    }
}

TEST_CASE("desk selection: pattern set is tiny and grounded on image tokens") {
    auto& desk = testing::Desk::get();
    const auto& sae = desk.sae(desk.plant());
    const auto& sets = desk.sets(desk.plant());
    CHECK(sets.pattern.size() <= static_cast<size_t>(0.005 * sae.m()));
    const auto l = static_cast<std::uint32_t>(desk.plant());
    const int f = sets.pattern.indices.front();
    double img = 0, txt = 0;
    int n = 0;
    for (std::size_t i = 0; i < desk.test.size(); ++i) {
        if (desk.test[i].task != TaskType::pattern) continue;
        const auto& rec = desk.test_recs[i];
        for (int t = 0; t < static_cast<int>(rec.tokens); ++t) {
            const double v = encode(rec.layer(l).row(t).cast<double>().transpose(), sae).get(f);
            (t < desk.n_img() ? img : txt) += v / (t < desk.n_img() ? desk.n_img() : rec.tokens - desk.n_img());
        }
        ++n;
    }
    CHECK(n > 0);
    CHECK(img > txt);
}
