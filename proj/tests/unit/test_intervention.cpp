#include <doctest.h>

#include <cmath>
#include <cstring>

#include "svtc/common/error.hpp"
#include "svtc/intervention/intervention.hpp"
#include "support/desk.hpp"
#include "support/oracles.hpp"

using namespace svtc;

namespace {

Evaluator make_eval(testing::Desk& desk, int layer, std::size_t n = 1000) {
    const auto recs = desk.test_layer(layer);
    std::vector<ExampleFeatures> ex(desk.test.begin(), desk.test.begin() + static_cast<long>(n));
    std::vector<ActivationRecord> rs(recs.begin(), recs.begin() + static_cast<long>(n));
    return Evaluator(desk.model, desk.sae(layer), layer, InterventionSite::post_mlp, std::move(ex), &rs);
}

bool bit_equal(const float* a, const float* b, std::size_t n) { return std::memcmp(a, b, n * sizeof(float)) == 0; }

} // namespace

TEST_CASE("lambda 1 is an exact identity and text rows are never touched") {
    auto& desk = testing::Desk::get();
    const int l = desk.plant();
    const auto& sae = desk.sae(l);
    const auto& sets = desk.sets(l);
    for (std::size_t i = 0; i < 20; ++i) {
        const TokenMatrix h = desk.test_recs[i].layer(static_cast<std::uint32_t>(l));
        const auto id = apply_intervention(h, sae, sets.union_set.indices, 1.0, desk.n_img());
        CHECK(bit_equal(id.state.data(), h.data(), static_cast<size_t>(h.size())));
        for (double lam : {0.0, 0.5, 2.0}) {
            const auto r = apply_intervention(h, sae, sets.union_set.indices, lam, desk.n_img());
            const auto txt = static_cast<size_t>((h.rows() - desk.n_img()) * h.cols());
            CHECK(bit_equal(r.state.data() + desk.n_img() * h.cols(), h.data() + desk.n_img() * h.cols(), txt));
        }
    }
}

TEST_CASE("zeroing one feature removes exactly its code times a unit column") {
    auto& desk = testing::Desk::get();
    const int l = desk.plant();
    const auto& sae = desk.sae(l);
    const TokenMatrix h = desk.test_recs[0].layer(static_cast<std::uint32_t>(l));
    const Eigen::VectorXd h0 = h.row(0).cast<double>().transpose();
    const SparseCode z = encode(h0, sae);
    REQUIRE(z.nnz() > 0);
    const int j = z.index[0];
    const double c = z.value[0];
    const auto r = apply_intervention(h, sae, {j}, 0.0, desk.n_img());
    CHECK(r.delta.row(0).norm() == doctest::Approx(c).epsilon(1e-12));
    CHECK((r.delta.row(0).transpose() + c * sae.D.col(j)).norm() < 1e-12);
    const Eigen::VectorXd diff = (h.row(0) - r.state.row(0)).cast<double>().transpose();
    CHECK(diff.norm() == doctest::Approx(c).epsilon(1e-5));
}

TEST_CASE("steering delta matches the decode-based oracle") {
    auto& desk = testing::Desk::get();
    const int l = desk.plant();
    const auto& sae = desk.sae(l);
    const auto& set = desk.sets(l).union_set.indices;
    for (std::size_t i = 0; i < 30; ++i) {
        const TokenMatrix h = desk.test_recs[i].layer(static_cast<std::uint32_t>(l));
        const auto r = apply_intervention(h, sae, set, 2.0, desk.n_img());
        for (int t = 0; t < desk.n_img(); ++t) {
            const Eigen::VectorXd ht = h.row(t).cast<double>().transpose();
            CHECK((r.delta.row(t).transpose() - oracle::intervention_delta(ht, sae, set, 2.0)).norm() <= 1e-6);
        }
    }
}

TEST_CASE("bad intervention inputs are rejected") {
    auto& desk = testing::Desk::get();
    const auto& sae = desk.sae(desk.plant());
    const TokenMatrix h = desk.test_recs[0].layer(static_cast<std::uint32_t>(desk.plant()));
    CHECK_THROWS_AS(apply_intervention(h, sae, {3, 1}, 2.0, 16), ValidationError);
    CHECK_THROWS_AS(apply_intervention(h, sae, {sae.m()}, 2.0, 16), ValidationError);
    CHECK_THROWS_AS(apply_intervention(h, sae, {1}, -1.0, 16), ValidationError);
    CHECK(predict_option({0.5f, 2.0f, 2.0f}) == 1);
}

TEST_CASE("evaluator: identity run, and change rate against a naive double inference") {
    auto& desk = testing::Desk::get();
    const int l = desk.plant();
    const Evaluator eval = make_eval(desk, l);
    const auto& sets = desk.sets(l);
    const auto id = eval.run(sets.union_set.indices, 1.0);
    CHECK(id.delta_pp == 0.0);
    CHECK(id.chg_pct == 0.0);
    CHECK(id.rel_perturbation == 0.0);
    CHECK(id.n == 1000);

    std::vector<std::size_t> first50(50);
    for (std::size_t i = 0; i < 50; ++i) first50[i] = i;
    const auto& sae = desk.sae(l);
    for (double lam : {0.0, 0.5, 2.0}) {
        int changed = 0;
        for (std::size_t i = 0; i < 50; ++i) {
            const auto full = desk.model.forward(desk.test[i]);
            const int clean = predict_option(full.logits);
            TokenMatrix h = full.layer(static_cast<std::uint32_t>(l));
            for (int t = 0; t < desk.n_img(); ++t) {
                const Eigen::VectorXd ht = h.row(t).cast<double>().transpose();
                const Eigen::VectorXd d = oracle::intervention_delta(ht, sae, sets.union_set.indices, lam);
                h.row(t) = (ht + d).cast<float>().transpose();
            }
            changed += predict_option(desk.model.logits_from(l, h, desk.test[i])) != clean;
        }
        CHECK(eval.run(sets.union_set.indices, lam, &first50).chg_pct == doctest::Approx(100.0 * changed / 50));
    }
}

TEST_CASE("evaluator rejects misaligned records") {
    auto& desk = testing::Desk::get();
    auto recs = desk.test_layer(desk.plant());
    std::vector<ExampleFeatures> ex(desk.test.begin(), desk.test.begin() + 3);
    std::vector<ActivationRecord> rs{recs[0], recs[2], recs[1]};
    CHECK_THROWS_AS(Evaluator(desk.model, desk.sae(desk.plant()), desk.plant(), InterventionSite::post_mlp, ex, &rs),
                    ValidationError);
}

TEST_CASE("pre-block site resumes from the previous layer's output") {
    auto& desk = testing::Desk::get();
    const int l = desk.plant();
    std::vector<ExampleFeatures> ex(desk.test.begin(), desk.test.begin() + 40);
    const Evaluator fwd(desk.model, desk.sae(l), l, InterventionSite::pre_block, ex);
    const auto recs = desk.test_layer(l - 1);
    std::vector<ActivationRecord> rs(recs.begin(), recs.begin() + 40);
    const Evaluator stored(desk.model, desk.sae(l), l, InterventionSite::pre_block, ex, &rs);
    const auto& set = desk.sets(l).pattern.indices;
    CHECK(fwd.predictions(set, 0.0) == stored.predictions(set, 0.0));
    for (std::size_t i = 0; i < 40; ++i) CHECK(fwd.clean_prediction(i) == predict_option(desk.test_recs[i].logits));
}

TEST_CASE("calibration: self match, exhaustive-grid optimality, union needs damping") {
    auto& desk = testing::Desk::get();
    const int l = desk.plant();
    const Evaluator eval = make_eval(desk, l);
    const auto& sets = desk.sets(l);
    const double ref = eval.rel_perturbation(sets.pattern.indices, 2.0);
    const auto self = calibrate_norm_match(ref, [&](double x) { return eval.rel_perturbation(sets.pattern.indices, x); });
    CHECK(self.lambda == 2.0);
    CHECK(self.residual == 0.0);

    const auto cal = calibrate_norm_match(ref, [&](double x) { return eval.rel_perturbation(sets.union_set.indices, x); });
    for (const auto& p : cal.table) CHECK(cal.residual <= p.residual + 1e-12 * ref);
    CHECK(cal.lambda < 1.0);
    CHECK(lambda_grid(1, 20, 10).size() == 20);
    CHECK(lambda_grid(1, 20, 10).front() == 0.1);
}

TEST_CASE("layer sensitivity: identity rows are zero, earlier layer is hypersensitive at equal norm") {
    auto& desk = testing::Desk::get();
    const int l = desk.plant();
    const Evaluator late = make_eval(desk, l);
    const Evaluator early = make_eval(desk, l - 1);
    const auto& s_late = desk.sets(l).pattern.indices;
    const auto& s_early = desk.sets(l - 1).pattern.indices;
    const auto rows = layer_sensitivity_profile({&early, &late}, {s_early, s_late}, {1.0});
    REQUIRE(rows.size() == 2);
    for (const auto& r : rows) CHECK(r.sensitivity == 0.0);

    const double ref = late.rel_perturbation(s_late, 2.0);
    const double lam = calibrate_norm_match(ref, [&](double x) { return early.rel_perturbation(s_early, x); }).lambda;
    const auto pre = early.run(s_early, lam);
    const auto at = late.run(s_late, 2.0);
    CHECK(std::abs(pre.delta_pp) > std::abs(at.delta_pp));
}

TEST_CASE("zero ablation: empty set, set fraction, union covers more than pattern") {
    auto& desk = testing::Desk::get();
    const int l = desk.plant();
    const Evaluator eval = make_eval(desk, l);
    const auto& sets = desk.sets(l);
    const auto none = zero_ablation_fliprate(eval, {});
    CHECK(none.flip_pct == 0.0);
    const auto u = zero_ablation_fliprate(eval, sets.union_set.indices);
    const auto p = zero_ablation_fliprate(eval, sets.pattern.indices);
    CHECK(u.set_fraction == static_cast<double>(sets.union_set.size()) / eval.sae().m());
    CHECK(u.flip_pct >= p.flip_pct);
}

TEST_CASE("bootstrap: fifteen runs, shared subsamples, constant runs have zero spread") {
    const auto rep = bootstrap(
        [](std::uint64_t, const std::vector<std::size_t>& sub) {
            EvalMetrics m;
            m.delta_pp = 1.25;
            m.chg_pct = 3.0;
            m.n = sub.size();
            return m;
        },
        1000, 42);
    CHECK(rep.runs.size() == 15);
    CHECK(rep.delta_pp_mean == 1.25);
    CHECK(rep.delta_pp_std == 0.0);
    CHECK(rep.chg_std == 0.0);
    for (const auto& r : rep.runs) {
        CHECK(r.metrics.n == 600);
        const auto& first = rep.runs[r.subsample_index];
        CHECK(r.subsample_seed == first.subsample_seed);
    }
    const auto s = draw_subsample(100, 30, 9);
    CHECK(s.size() == 30);
    CHECK(std::is_sorted(s.begin(), s.end()));
    CHECK(std::adjacent_find(s.begin(), s.end()) == s.end());
    CHECK(s == draw_subsample(100, 30, 9));
    CHECK_THROWS_AS(draw_subsample(10, 11, 1), ValidationError);
}

TEST_CASE("controls: size matching and the degenerate permutation") {
    auto& desk = testing::Desk::get();
    const int l = desk.plant();
    const Evaluator eval = make_eval(desk, l);
    const auto& sets = desk.sets(l);
    ControlInputs in{sets.pattern.indices, sets.global.indices, sets.union_set.indices, sets.union_set.indices, 2.0};
    const auto rows = run_controls(eval, in, 5, 3, 5, 600);
    REQUIRE(rows.size() == 6);
    double union_lambda = 0;
    for (const auto& r : rows) {
        CHECK(r.report.runs.size() == 15);
        if (r.config.rfind("union", 0) == 0) union_lambda = r.lambda;
        if (r.config.rfind("random", 0) == 0) CHECK(r.set_size == sets.union_set.size());
    }
    // A permutation drawn from a pool equal to the union is the union itself.
    const auto perm = permuted_control(sets.union_set.indices, sets.union_set.size(), 3);
    CHECK(perm.indices == sets.union_set.indices);
    const auto a = eval.run(perm.indices, union_lambda);
    const auto b = eval.run(sets.union_set.indices, union_lambda);
    CHECK(a.delta_pp == b.delta_pp);
    CHECK(a.chg_pct == b.chg_pct);
}
