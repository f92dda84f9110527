#include <doctest.h>

#include <fstream>
#include <limits>

#include "svtc/activation/pooling.hpp"
#include "svtc/activation/shard.hpp"
#include "svtc/activation/surrogate.hpp"
#include "svtc/common/error.hpp"
#include "svtc/common/seed.hpp"
#include "svtc/datagen/split.hpp"
#include "svtc/probing/probe.hpp"
#include "support/tempdir.hpp"

using namespace svtc;

namespace {

ActivationRecord random_record(const ShardHeader& h, const std::string& id, Rng& rng, int n_logits) {
    ActivationRecord r = make_record(h, id);
    r.label = uniform_int(rng, -1, 6);
    for (int i = 0; i < n_logits; ++i) r.logits.push_back(static_cast<float>(standard_normal(rng)));
    for (auto& x : r.data) x = static_cast<float>(standard_normal(rng));
    return r;
}

std::vector<ExampleFeatures> features(SplitName split, std::size_t n, const GenConfig& cfg = {}) {
    std::vector<ExampleFeatures> out;
    for (std::size_t i = 0; i < n; ++i) {
        out.push_back(features_of(generate_example(split, cfg.split_seed(split), i, cfg, Vocabulary::builtin())));
    }
    return out;
}

Eigen::MatrixXd pooled(const SurrogateModel& m, const std::vector<ExampleFeatures>& ex, int layer) {
    Eigen::MatrixXd X(static_cast<Eigen::Index>(ex.size()), m.config().dim);
    for (std::size_t i = 0; i < ex.size(); ++i) {
        X.row(static_cast<Eigen::Index>(i)) =
            pool_tokens(m.forward(ex[i]), static_cast<std::uint32_t>(layer), PoolScope::all, m.image_tokens()).transpose();
    }
    return X;
}

std::vector<int> task_labels(const std::vector<ExampleFeatures>& ex) {
    std::vector<int> y;
    for (const auto& e : ex) y.push_back(index_of(e.task));
    return y;
}

} // namespace

TEST_CASE("shard: three records round trip exactly") {
    testing::TempDir dir("shard");
    const ShardHeader h{3, 5, 4, 2, 2, kDtypeF32};
    Rng rng = make_rng(1);
    std::vector<ActivationRecord> recs;
    for (int i = 0; i < 3; ++i) recs.push_back(random_record(h, "r" + std::to_string(i), rng, 3));
    write_shard(dir / "a.svtc", h, recs);
    ShardHeader back_h;
    const auto back = read_shard(dir / "a.svtc", &back_h);
    CHECK(back_h == h);
    REQUIRE(back.size() == 3);
    for (int i = 0; i < 3; ++i) CHECK(back[i] == recs[i]);
    const auto index = read_index(dir / "a.svtc");
    REQUIRE(index.size() == 3);
    ShardReader reader(dir / "a.svtc");
    reader.seek(index[2].second);
    CHECK(reader.next()->id == "r2");
}

TEST_CASE("shard: layer filtered reads return only that layer") {
    testing::TempDir dir("shard");
    const ShardHeader h{4, 3, 2, 1, 2, kDtypeF32};
    Rng rng = make_rng(2);
    std::vector<ActivationRecord> recs;
    for (int i = 0; i < 5; ++i) recs.push_back(random_record(h, "x" + std::to_string(i), rng, 2));
    write_shard(dir / "b.svtc", h, recs);
    ShardReader reader(dir / "b.svtc");
    for (int i = 0; i < 5; ++i) {
        const auto r = reader.next_layer(2);
        REQUIRE(r.has_value());
        CHECK(r->has_layer(2));
        CHECK_FALSE(r->has_layer(1));
        CHECK(r->layer(2) == recs[i].layer(2));
        CHECK(r->logits == recs[i].logits);
    }
    CHECK_FALSE(reader.next_layer(2).has_value());
}

TEST_CASE("shard: wrong magic and truncation are rejected") {
    testing::TempDir dir("shard");
    const ShardHeader h{1, 2, 2, 1, 1, kDtypeF32};
    Rng rng = make_rng(3);
    write_shard(dir / "c.svtc", h, {random_record(h, "a", rng, 2)});
    std::string bytes;
    {
        std::ifstream in(dir / "c.svtc", std::ios::binary);
        bytes.assign(std::istreambuf_iterator<char>(in), {});
    }
    auto dump = [&](const std::string& name, const std::string& b) {
        std::ofstream out(dir / name, std::ios::binary);
        out << b;
    };
    std::string bad = bytes;
    bad[0] = 'X';
    dump("magic.svtc", bad);
    CHECK_THROWS_AS(read_shard(dir / "magic.svtc"), FormatError);
    dump("trunc.svtc", bytes.substr(0, bytes.size() - 3));
    CHECK_THROWS_AS(read_shard(dir / "trunc.svtc"), FormatError);
    dump("hdr.svtc", bytes.substr(0, 10));
    CHECK_THROWS_AS(read_shard(dir / "hdr.svtc"), FormatError);
}

TEST_CASE("shard: non-finite activations are refused at write time") {
    testing::TempDir dir("shard");
    const ShardHeader h{1, 2, 2, 1, 1, kDtypeF32};
    Rng rng = make_rng(4);
    for (float bad : {std::numeric_limits<float>::quiet_NaN(), std::numeric_limits<float>::infinity()}) {
        ActivationRecord r = random_record(h, "x", rng, 1);
        r.data[3] = bad;
        CHECK_THROWS_AS(write_shard(dir / "n.svtc", h, {r}), ValidationError);
    }
}

TEST_CASE("shard: 600 records at (8, 48, 64) have the arithmetic file size") {
    testing::TempDir dir("shard");
    const ShardHeader h{8, 48, 64, 4, 4, kDtypeF32};
    Rng rng = make_rng(4);
    {
        ShardWriter w(dir / "big.svtc", h);
        for (int i = 0; i < 600; ++i) w.write(random_record(h, example_id(SplitName::test, i), rng, 4));
        w.close();
    }
    const std::uint64_t id_len = 10; // "test_00000"
    const std::uint64_t per_record = 4 + 4 + id_len + 1 + 4 + 4 * 4;
    const std::uint64_t expected = kShardHeaderBytes + 600 * (per_record + 8ull * 48 * 64 * 4);
    CHECK(std::filesystem::file_size(dir / "big.svtc") == expected);
    CHECK(read_index(dir / "big.svtc").size() == 600);
}

TEST_CASE("pooling: constant rows, symmetric rows, image-only mean") {
    const ShardHeader h{1, 4, 2, 1, 2, kDtypeF32};
    ActivationRecord r = make_record(h, "p");
    auto m = r.layer(0);
    for (int t = 0; t < 4; ++t) m.row(t) << 1.5f, -2.0f;
    CHECK(pool_tokens(r, 0, PoolScope::all, 2).isApprox(Eigen::Vector2d(1.5, -2.0)));

    const ShardHeader h2{1, 2, 2, 1, 2, kDtypeF32};
    ActivationRecord s = make_record(h2, "s");
    s.layer(0) << 1, 3, 3, 1;
    CHECK(pool_tokens(s, 0, PoolScope::all, 2) == Eigen::Vector2d(2, 2));

    ActivationRecord t = make_record(h, "t");
    t.layer(0) << 1, 2, 5, 7, 0, 0, 0, 0;
    CHECK(pool_tokens(t, 0, PoolScope::image_only, 2) == Eigen::Vector2d(3.0, 4.5));
}

TEST_CASE("surrogate: forward is deterministic and shaped by the header") {
    SurrogateModel m(SurrogateConfig{});
    const auto ex = features(SplitName::val, 3);
    const auto a = m.forward(ex[1]);
    const auto b = m.forward(ex[1]);
    CHECK(a == b);
    CHECK(a.num_layers == static_cast<std::uint32_t>(m.config().layers));
    CHECK(a.tokens == static_cast<std::uint32_t>(m.config().tokens));
    CHECK(a.logits.size() == static_cast<size_t>(ex[1].n_options));
    // Resuming from a stored layer reproduces the full pass.
    for (int l = 0; l < m.config().layers; ++l) {
        CHECK(m.logits_from(l, TokenMatrix(a.layer(static_cast<std::uint32_t>(l))), ex[1]) == a.logits);
    }
}

TEST_CASE("surrogate: task difference at the plant layer aligns with the planted directions") {
    SurrogateModel m(SurrogateConfig{});
    ExampleFeatures e1 = features(SplitName::train, 1)[0];
    ExampleFeatures e2 = e1;
    e1.task = TaskType::pattern;
    e2.task = TaskType::global;
    const auto l = static_cast<std::uint32_t>(m.config().plant_layer);
    const Eigen::VectorXd d =
        pool_tokens(m.forward(e1), l, PoolScope::image_only, m.image_tokens()) -
        pool_tokens(m.forward(e2), l, PoolScope::image_only, m.image_tokens());
    const Eigen::VectorXd u = (m.task_directions().row(index_of(TaskType::pattern)) -
                               m.task_directions().row(index_of(TaskType::global)))
                                  .cast<double>()
                                  .transpose();
    CHECK(d.dot(u) / (d.norm() * u.norm()) > 0.9);
}

TEST_CASE("surrogate: without a plant the task is not decodable at the plant layer") {
    SurrogateConfig cfg;
    cfg.amplitudes = {0.0, 0.0, 0.0};
    SurrogateModel m(cfg);
    // Labels are drawn independently of the scenes, so only the plant could
    // carry task information (real pattern scenes reveal themselves by layout).
    auto relabel = [](std::vector<ExampleFeatures> ex, std::uint64_t seed) {
        Rng rng = make_rng(seed);
        for (auto& e : ex) e.task = kAllTaskTypes[static_cast<size_t>(uniform_int(rng, 0, kNumTaskTypes - 1))];
        return ex;
    };
    const auto tr = relabel(features(SplitName::train, 1400), 1);
    const auto va = relabel(features(SplitName::val, 700), 2);
    const auto acc = shuffled_label_control(pooled(m, tr, cfg.plant_layer), task_labels(tr),
                                            pooled(m, va, cfg.plant_layer), task_labels(va), kNumTaskTypes, {1},
                                            ProbeConfig{}, true);
    CHECK(acc[0] >= 0.10);
    CHECK(acc[0] <= 0.19);
}
