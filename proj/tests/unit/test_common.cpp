#include <doctest.h>

#include <set>
#include <sstream>

#include "svtc/common/binary_io.hpp"
#include "svtc/common/hash.hpp"
#include "svtc/common/image.hpp"
#include "svtc/common/parallel.hpp"
#include "svtc/common/seed.hpp"
#include "support/tempdir.hpp"

using namespace svtc;

TEST_CASE("derive_seed is order independent and tag sensitive") {
    CHECK(derive_seed(1, 5) == derive_seed(1, 5));
    CHECK(derive_seed(1, 5) != derive_seed(1, 6));
    CHECK(derive_seed(1, 5) != derive_seed(2, 5));
    CHECK(derive_seed(9, "a") != derive_seed(9, "b"));
    std::set<std::uint64_t> seen;
    for (std::uint64_t i = 0; i < 10000; ++i) seen.insert(derive_seed(42, i));
    CHECK(seen.size() == 10000);
}

TEST_CASE("portable distributions stay in range and are reproducible") {
    Rng a = make_rng(3), b = make_rng(3);
    for (int i = 0; i < 1000; ++i) {
        const int x = uniform_int(a, -2, 5);
        CHECK(x >= -2);
        CHECK(x <= 5);
        CHECK(x == uniform_int(b, -2, 5));
        const double u = uniform01(a);
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
        CHECK(u == uniform01(b));
    }
    Rng r = make_rng(11);
    double s = 0, s2 = 0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        const double z = standard_normal(r);
        s += z;
        s2 += z * z;
    }
    CHECK(std::abs(s / n) < 0.01);
    CHECK(std::abs(s2 / n - 1.0) < 0.02);
}

TEST_CASE("shuffle permutes and weighted_index skips zero weights") {
    std::vector<int> v(50);
    for (int i = 0; i < 50; ++i) v[i] = i;
    Rng r = make_rng(5);
    svtc::shuffle(v.begin(), v.end(), r);
    std::vector<int> sorted = v;
    std::sort(sorted.begin(), sorted.end());
    for (int i = 0; i < 50; ++i) CHECK(sorted[i] == i);
    const std::vector<double> w{0.0, 1.0, 0.0, 3.0};
    std::array<int, 4> hits{};
    for (int i = 0; i < 4000; ++i) ++hits[static_cast<size_t>(weighted_index(r, w))];
    CHECK(hits[0] == 0);
    CHECK(hits[2] == 0);
    CHECK(hits[3] > 2 * hits[1]);
}

TEST_CASE("parallel_for result does not depend on thread count") {
    std::vector<double> one(1000), four(1000);
    auto fn = [](std::vector<double>& out) {
        return [&out](std::size_t i) { out[i] = std::sqrt(static_cast<double>(i)) * derive_seed(7, i); };
    };
    parallel_for(one.size(), 1, fn(one));
    parallel_for(four.size(), 4, fn(four));
    CHECK(one == four);
    CHECK_THROWS_AS(parallel_for(10, 3, [](std::size_t i) {
                        if (i == 7) throw std::runtime_error("boom");
                    }),
                    std::runtime_error);
}

TEST_CASE("sha256 of known strings") {
    CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("little-endian helpers round trip and report truncation offsets") {
    std::stringstream ss;
    le::put_u32(ss, 0xA1B2C3D4u);
    le::put_f32(ss, -1.5f);
    const std::string bytes = ss.str();
    CHECK(static_cast<unsigned char>(bytes[0]) == 0xD4);
    CHECK(le::get_u32(ss, "x") == 0xA1B2C3D4u);
    char b[4];
    le::read_exact(ss, b, 4, "x");
    CHECK(le::decode_f32(b) == -1.5f);
    std::stringstream short_in(std::string("\x01\x02", 2));
    CHECK_THROWS_WITH_AS(le::get_u32(short_in, "hdr"), "hdr: truncated at byte offset 2", FormatError);
}

TEST_CASE("png round trip preserves pixels and bytes are deterministic") {
    testing::TempDir dir;
    Image img(7, 5, Rgb{1, 2, 3});
    img.fill_rect(2, 1, 5, 4, Rgb{200, 100, 0});
    CHECK(img.count(Rgb{200, 100, 0}, 0, 0, 7, 5) == 9);
    write_png(dir / "a.png", img);
    write_png(dir / "b.png", img);
    CHECK(read_png(dir / "a.png") == img);
    CHECK(sha256_file(dir / "a.png") == sha256_file(dir / "b.png"));
}
