#include <doctest.h>

#include <cmath>
#include <fstream>
#include <set>

#include "svtc/common/error.hpp"
#include "svtc/common/hash.hpp"
#include "svtc/datagen/render.hpp"
#include "svtc/datagen/split.hpp"
#include "svtc/datagen/validator.hpp"
#include "support/oracles.hpp"
#include "support/tempdir.hpp"

using namespace svtc;

namespace {

const Vocabulary& vocab() { return Vocabulary::builtin(); }

SceneObject obj(const char* shape, const char* color, ObjectSize size, int x, int y) {
    return {vocab().shape_index(shape), vocab().color_index(color), size, {x, y}};
}

Predicate pred(const char* shape, const char* color) {
    Predicate p;
    if (shape) p.shape = vocab().shape_index(shape);
    if (color) p.color = vocab().color_index(color);
    return p;
}

nlohmann::json record(const Scene& scene, TaskType task, std::vector<std::string> options, int answer,
                      nlohmann::ordered_json query) {
    QAExample e;
    e.id = "t_00000";
    e.image = "images/t_00000.png";
    e.question = "q";
    e.options = std::move(options);
    e.answer = answer;
    e.task = task;
    e.scene = scene;
    e.query = std::move(query);
    return nlohmann::json::parse(example_to_json(e, vocab()).dump());
}

std::vector<std::string> count_options() {
    std::vector<std::string> o;
    for (int i = 0; i <= 12; ++i) o.push_back(std::to_string(i));
    return o;
}

} // namespace

TEST_CASE("sample_scene is deterministic under a fixed seed") {
    GenConfig cfg;
    const Scene a = sample_scene(7, TaskType::existence, Difficulty::easy, cfg, vocab());
    const Scene b = sample_scene(7, TaskType::existence, Difficulty::easy, cfg, vocab());
    CHECK(a == b);
    CHECK(sample_scene(8, TaskType::existence, Difficulty::easy, cfg, vocab()) != a);
}

TEST_CASE("pattern scenes carry a panel with exactly one masked tile") {
    GenConfig cfg;
    for (std::uint64_t seed = 0; seed < 60; ++seed) {
        const auto d = kAllDifficulties[seed % 3];
        const Scene s = sample_scene(seed, TaskType::pattern, d, cfg, vocab());
        REQUIRE(s.panel.has_value());
        const auto j = scene_to_json(s, vocab());
        int nulls = 0;
        for (const auto& row : j["panel"]["grid"]) {
            for (const auto& c : row) nulls += c.is_null();
        }
        CHECK(nulls == 1);
        for (const auto& o : s.objects) CHECK_FALSE(cell_in_panel(o.cell));
    }
}

TEST_CASE("object counts respect the difficulty table and cells are unique") {
    GenConfig cfg;
    const auto [lo, hi] = object_count_range(cfg, TaskType::counting, Difficulty::hard);
    const Scene s = sample_scene(42, TaskType::counting, Difficulty::hard, cfg, vocab());
    CHECK(static_cast<int>(s.objects.size()) >= lo);
    CHECK(static_cast<int>(s.objects.size()) <= hi);
    for (std::uint64_t seed = 0; seed < 300; ++seed) {
        const auto t = kAllTaskTypes[seed % kNumTaskTypes];
        const Scene sc = sample_scene(seed, t, kAllDifficulties[seed % 3], cfg, vocab());
        std::set<std::pair<int, int>> cells;
        for (const auto& o : sc.objects) cells.insert({o.cell.x, o.cell.y});
        CHECK(cells.size() == sc.objects.size());
    }
}

TEST_CASE("render: empty scene is the background") {
    const Image img = render_scene(Scene{}, vocab());
    CHECK(img.width == kCanvasPixels);
    CHECK(img.height == kCanvasPixels);
    CHECK(img == Image(kCanvasPixels, kCanvasPixels, kBackground));
}

TEST_CASE("render: a large red circle fills only its own cell") {
    Scene s;
    s.objects.push_back(obj("circle", "red", ObjectSize::large, 0, 0));
    const Image img = render_scene(s, vocab());
    const Rgb red = vocab().color(vocab().color_index("red")).rgb;
    CHECK(img.count(red, 0, 0, kCellPixels, kCellPixels) >= 300);
    for (int cy = 0; cy < kGridSize; ++cy) {
        for (int cx = 0; cx < kGridSize; ++cx) {
            if (cx == 0 && cy == 0) continue;
            CHECK(img.count(red, cx * kCellPixels, cy * kCellPixels, (cx + 1) * kCellPixels, (cy + 1) * kCellPixels) ==
                  0);
        }
    }
    CHECK(render_scene(s, vocab()) == img);
}

TEST_CASE("render: every shape has a rasterizer that stays inside its box") {
    for (const auto& sh : vocab().shapes()) {
        CHECK(has_rasterizer(sh.id));
        Scene s;
        s.objects.push_back(obj(sh.id.c_str(), "navy", ObjectSize::small, 2, 1));
        const Image img = render_scene(s, vocab());
        const Rgb navy = vocab().color(vocab().color_index("navy")).rgb;
        const int inside = img.count(navy, 2 * kCellPixels, kCellPixels, 3 * kCellPixels, 2 * kCellPixels);
        CHECK(inside > 0);
        CHECK(img.count(navy, 0, 0, kCanvasPixels, kCanvasPixels) == inside);
    }
}

TEST_CASE("validator: existence of an absent object is 'no'") {
    Scene s;
    s.objects = {obj("triangle", "navy", ObjectSize::small, 0, 0), obj("circle", "orange", ObjectSize::large, 1, 1)};
    const auto r = record(s, TaskType::existence, {"yes", "no"}, 1,
                          {{"template", "is_there"}, {"predicate", predicate_to_json(pred("triangle", "orange"), vocab())}});
    CHECK(recompute_answer(r, vocab()) == 'B');
}

TEST_CASE("validator: counting navy triangles") {
    Scene s;
    s.objects = {obj("triangle", "navy", ObjectSize::small, 0, 0), obj("triangle", "navy", ObjectSize::large, 3, 2),
                 obj("circle", "red", ObjectSize::large, 1, 1)};
    const auto r = record(s, TaskType::counting, count_options(), 2,
                          {{"template", "how_many"}, {"predicate", predicate_to_json(pred("triangle", "navy"), vocab())}});
    CHECK(recompute_answer(r, vocab()) == option_letter(2));
}

TEST_CASE("validator: 'more X than Y' with counts (3, 1) is 'yes'") {
    Scene s;
    s.objects = {obj("circle", "red", ObjectSize::small, 0, 0), obj("circle", "red", ObjectSize::small, 1, 0),
                 obj("circle", "red", ObjectSize::large, 2, 0), obj("square", "blue", ObjectSize::large, 0, 3)};
    const auto r = record(s, TaskType::comparison, {"yes", "no"}, 0,
                          {{"template", "more"},
                           {"left", predicate_to_json(pred("circle", "red"), vocab())},
                           {"right", predicate_to_json(pred("square", "blue"), vocab())}});
    CHECK(recompute_answer(r, vocab()) == 'A');
}

TEST_CASE("validator: row repetition forces the masked color") {
    Scene s;
    PatternPanel p;
    const int red = vocab().color_index("red");
    const int teal = vocab().color_index("teal");
    const int pink = vocab().color_index("pink");
    p.grid = {{{red, red, red}, {teal, teal, teal}, {pink, pink, pink}}};
    p.masked_row = 0;
    p.masked_col = 2;
    p.rule = PatternRule::row_repetition;
    s.panel = p;
    std::vector<std::string> colors;
    for (const auto& c : vocab().colors()) colors.push_back(c.name);
    const auto r = record(s, TaskType::pattern, colors, red, {{"template", "fill_position"}, {"position", "top-right"}});
    CHECK(recompute_answer(r, vocab()) == option_letter(red));
}

TEST_CASE("instantiated counting answers match an independent recount") {
    GenConfig cfg;
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        const auto d = kAllDifficulties[seed % 3];
        const Scene s = sample_scene(seed, TaskType::counting, d, cfg, vocab());
        const QAExample e = instantiate_question(s, TaskType::counting, d, seed, cfg, vocab());
        const auto& pj = e.query["predicate"];
        int n = 0;
        for (const auto& o : s.objects) {
            bool ok = true;
            if (!pj["shape"].is_null()) ok &= vocab().shape(o.shape).id == pj["shape"].get<std::string>();
            if (!pj["color"].is_null()) ok &= vocab().color(o.color).id == pj["color"].get<std::string>();
            if (!pj["size"].is_null()) ok &= to_string(o.size) == pj["size"].get<std::string>();
            if (!pj["exclude_color"].is_null()) ok &= vocab().color(o.color).id != pj["exclude_color"].get<std::string>();
            n += ok;
        }
        CHECK(e.options[static_cast<size_t>(e.answer)] == std::to_string(n));
    }
}

TEST_CASE("records survive a JSON round trip") {
    GenConfig cfg;
    for (std::size_t i = 0; i < 50; ++i) {
        const QAExample e = generate_example(SplitName::val, 77, i, cfg, vocab());
        const auto j = example_to_json(e, vocab());
        const QAExample back = example_from_json(nlohmann::json::parse(j.dump()), vocab());
        CHECK(back.id == e.id);
        CHECK(back.answer == e.answer);
        CHECK(back.options == e.options);
        CHECK(back.scene == e.scene);
        CHECK(back.task == e.task);
        CHECK(nlohmann::json::parse(example_to_json(back, vocab()).dump()) == nlohmann::json::parse(j.dump()));
    }
}

TEST_CASE("generate_split writes deterministic files independent of thread count") {
    testing::TempDir a("gen-a"), b("gen-b");
    GenConfig cfg;
    cfg.split_sizes = {40, 20, 20};
    const auto sa = generate_split(cfg, SplitName::train, 5, a.path(), vocab(), false, 1);
    const auto sb = generate_split(cfg, SplitName::train, 5, b.path(), vocab(), false, 4);
    CHECK(sa.records.size() == 40);
    CHECK(sha256_file(split_path(a.path(), SplitName::train)) == sha256_file(split_path(b.path(), SplitName::train)));
    for (const auto& e : sa.records) {
        CHECK(sha256_file(a.path() / e.image) == sha256_file(b.path() / e.image));
        CHECK(read_png(a.path() / e.image) == render_scene(e.scene, vocab()));
    }
    CHECK_THROWS_AS(generate_split(cfg, SplitName::train, 5, a.path(), vocab(), false, 1), Error);
    CHECK_NOTHROW(generate_split(cfg, SplitName::train, 5, a.path(), vocab(), true, 1));
    const auto back = read_split(a.path(), SplitName::train, vocab());
    CHECK(back.records.size() == 40);
    CHECK(example_id(SplitName::test, 12) == "test_00012");
}

TEST_CASE("task histogram over 6000 examples stays within three sigma of uniform") {
    GenConfig cfg;
    std::array<int, kNumTaskTypes> hist{};
    for (std::size_t i = 0; i < 6000; ++i) {
        ++hist[static_cast<size_t>(index_of(generate_example(SplitName::train, cfg.split_seed(SplitName::train), i, cfg,
                                                             vocab())
                                                .task))];
    }
    const double p = 1.0 / kNumTaskTypes;
    const double mu = 6000 * p;
    const double sigma = std::sqrt(6000 * p * (1 - p));
    for (int h : hist) CHECK(std::abs(h - mu) <= 3 * sigma);
}

TEST_CASE("validate_split: fresh split, corrupted answer, empty file, bad line") {
    testing::TempDir dir("val");
    GenConfig cfg;
    cfg.split_sizes = {100, 10, 10};
    generate_split(cfg, SplitName::train, 9, dir.path(), vocab(), false, 0);
    const auto path = split_path(dir.path(), SplitName::train);
    const auto fresh = validate_split(path, vocab());
    CHECK(fresh.records == 100);
    CHECK(fresh.mismatches == 0);
    CHECK(fresh.ok());

    std::vector<std::string> lines;
    {
        std::ifstream in(path);
        for (std::string l; std::getline(in, l);) lines.push_back(l);
    }
    auto j = nlohmann::ordered_json::parse(lines[37]);
    const char stored = j["answer"].get<std::string>()[0];
    j["answer"] = std::string(1, stored == 'A' ? 'B' : 'A');
    lines[37] = j.dump();
    const auto bad = dir / "bad.jsonl";
    {
        std::ofstream out(bad);
        for (const auto& l : lines) out << l << '\n';
    }
    const auto rep = validate_split(bad, vocab());
    CHECK(rep.mismatches == 1);
    CHECK(rep.parse_failures == 0);
    bool found = false;
    for (const auto& e : rep.entries) found |= (e.status == "mismatch" && e.line == 38);
    CHECK(found);

    const auto empty = dir / "empty.jsonl";
    std::ofstream(empty).close();
    const auto er = validate_split(empty, vocab());
    CHECK(er.records == 0);
    CHECK(er.mismatches == 0);
    CHECK_FALSE(er.warnings.empty());

    const auto broken = dir / "broken.jsonl";
    {
        std::ofstream out(broken);
        out << lines[0] << "\n{not json\n";
    }
    const auto br = validate_split(broken, vocab());
    CHECK(br.parse_failures == 1);
    CHECK(br.mismatches == 0);
}

TEST_CASE("vocabulary round trip and lookups") {
    const auto j = vocab().to_json();
    const Vocabulary v = Vocabulary::from_json(nlohmann::json::parse(j.dump()));
    CHECK(v.colors().size() == Vocabulary::kNumColors);
    CHECK(v.shapes().size() == Vocabulary::kNumShapes);
    CHECK(v.color_index("teal") == vocab().color_index("teal"));
    CHECK_THROWS_AS(v.shape_index("blob"), ValidationError);
    CHECK(pluralize("cross") == "crosses");
    CHECK(rgb_to_hex(hex_to_rgb("D62828")) == "D62828");
}

TEST_CASE("the shipped vocabulary file matches the built-in vocabulary") {
    const Vocabulary v = Vocabulary::load(std::filesystem::path(SVTC_SOURCE_DIR) / "data" / "vocab.json");
    CHECK(v.to_json() == Vocabulary::builtin().to_json());
    CHECK(v.color(v.color_index("navy")).rgb == Rgb{0x00, 0x30, 0x49});
    CHECK(v.color(v.color_index("red")).rgb == Rgb{0xD6, 0x28, 0x28});
}
