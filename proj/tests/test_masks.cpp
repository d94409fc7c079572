#include <doctest.h>

#include "faceedit/masks.hpp"
#include "faceedit/rng.hpp"
#include "helpers.hpp"

using namespace faceedit;
using test_helpers::TempDir;

namespace {

BinaryMask random_mask(std::size_t h, std::size_t w, Rng& rng) {
    BinaryMask m(h, w);
    for (auto& v : m.grid) v = rng.uniform() < 0.5 ? 1 : 0;
    return m;
}

}  // namespace

TEST_SUITE("masks") {

TEST_CASE("construction validates values and dims") {
    CHECK_THROWS_AS(BinaryMask(0, 4), Error);
    BinaryMask m(2, 2);
    m.grid = {0, 1, 2, 0};
    CHECK_THROWS_AS(m.validate(), Error);
}

TEST_CASE("boolean lattice properties on random 8x8 grids") {
    Rng rng(41);
    for (int rep = 0; rep < 50; ++rep) {
        BinaryMask a = random_mask(8, 8, rng);
        BinaryMask b = random_mask(8, 8, rng);
        BinaryMask c = random_mask(8, 8, rng);
        CHECK(mask_union(a, b).grid == mask_union(b, a).grid);
        CHECK(mask_intersect(a, b).grid == mask_intersect(b, a).grid);
        CHECK(mask_union(a, a).grid == a.grid);
        CHECK(mask_intersect(a, a).grid == a.grid);
        CHECK(mask_union(mask_union(a, b), c).grid ==
              mask_union(a, mask_union(b, c)).grid);
        CHECK(mask_complement(mask_complement(a)).grid == a.grid);
        CHECK(mask_union(a, mask_complement(a)).all_one());
        BinaryMask zeros(8, 8, 0);
        CHECK(mask_intersect(a, zeros).all_zero());
    }
}

TEST_CASE("dimension mismatch is rejected") {
    BinaryMask a(4, 4), b(4, 5);
    CHECK_THROWS_AS(mask_union(a, b), Error);
    CHECK_THROWS_AS(mask_intersect(a, b), Error);
}

TEST_CASE("blend_latents selects per element") {
    BinaryMask zeros(2, 2, 0), ones(2, 2, 1);
    Tensor known({3, 2, 2});
    Tensor unknown({3, 2, 2});
    Rng rng(42);
    for (std::size_t i = 0; i < known.size(); ++i) {
        known[i] = rng.uniform();
        unknown[i] = rng.uniform();
    }
    CHECK(blend_latents(zeros, known, unknown).data()[3] == known[3]);
    for (std::size_t i = 0; i < known.size(); ++i) {
        CHECK(blend_latents(zeros, known, unknown)[i] == known[i]);
        CHECK(blend_latents(ones, known, unknown)[i] == unknown[i]);
    }

    BinaryMask checker(2, 2);
    checker.grid = {1, 0, 0, 1};
    Tensor blended = blend_latents(checker, known, unknown);
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t y = 0; y < 2; ++y)
            for (std::size_t x = 0; x < 2; ++x) {
                double want = checker.at(y, x) ? unknown[(c * 2 + y) * 2 + x]
                                               : known[(c * 2 + y) * 2 + x];
                CHECK(blended[(c * 2 + y) * 2 + x] == want);
            }

    Tensor wrong({3, 2, 3});
    CHECK_THROWS_AS(blend_latents(checker, known, wrong), Error);
    CHECK_THROWS_AS(blend_latents(BinaryMask(3, 2), known, unknown), Error);
}

TEST_CASE("blend background is bit-identical to the known side") {
    Rng rng(43);
    for (int rep = 0; rep < 20; ++rep) {
        BinaryMask m = random_mask(4, 4, rng);
        Tensor known({2, 4, 4});
        Tensor unknown({2, 4, 4});
        for (std::size_t i = 0; i < known.size(); ++i) {
            known[i] = rng.normal();
            unknown[i] = rng.normal();
        }
        Tensor out = blend_latents(m, known, unknown);
        for (std::size_t c = 0; c < 2; ++c)
            for (std::size_t y = 0; y < 4; ++y)
                for (std::size_t x = 0; x < 4; ++x)
                    if (!m.at(y, x))
                        CHECK(out[(c * 4 + y) * 4 + x] == known[(c * 4 + y) * 4 + x]);
    }
}

TEST_CASE("downsample_mask block-max semantics") {
    BinaryMask ones(16, 16, 1);
    CHECK(downsample_mask(ones, 4).all_one());

    BinaryMask single(16, 16, 0);
    single.at(9, 3) = 1;
    BinaryMask down = downsample_mask(single, 8);
    CHECK(down.height == 2);
    CHECK(down.foreground_count() == 1);
    CHECK(down.at(1, 0) == 1);

    CHECK_THROWS_AS(downsample_mask(single, 0), Error);

    // brute-force block scan oracle
    Rng rng(44);
    BinaryMask m = random_mask(16, 16, rng);
    BinaryMask got = downsample_mask(m, 4);
    for (std::size_t by = 0; by < 4; ++by)
        for (std::size_t bx = 0; bx < 4; ++bx) {
            std::uint8_t want = 0;
            for (std::size_t y = 0; y < 4; ++y)
                for (std::size_t x = 0; x < 4; ++x)
                    if (m.at(by * 4 + y, bx * 4 + x)) want = 1;
            CHECK(got.at(by, bx) == want);
        }
}

TEST_CASE("downsample never loses foreground (nearest-neighbor cover)") {
    Rng rng(45);
    for (int rep = 0; rep < 30; ++rep) {
        std::size_t h = 8 + rng.below(57), w = 8 + rng.below(57);
        BinaryMask m = random_mask(h, w, rng);
        std::size_t factor = 2 + rng.below(7);
        BinaryMask down = downsample_mask(m, factor);
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x)
                if (m.at(y, x)) CHECK(down.at(y / factor, x / factor) == 1);
    }
}

TEST_CASE("region library and make_mask") {
    RegionLibrary lib;
    BinaryMask l_lip(4, 4, 0), u_lip(4, 4, 0), l_eye(4, 4, 0), r_eye(4, 4, 0);
    l_lip.at(3, 1) = 1;
    u_lip.at(2, 1) = 1;
    l_eye.at(1, 0) = 1;
    r_eye.at(1, 3) = 1;
    lib.add("img0", "l_lip", l_lip);
    lib.add("img0", "u_lip", u_lip);
    lib.add("img0", "l_eye", l_eye);
    lib.add("img0", "r_eye", r_eye);

    BinaryMask lips = make_mask(lib, "img0", {"l_lip", "u_lip"});
    CHECK(lips.grid == mask_union(l_lip, u_lip).grid);
    CHECK(lips.foreground_count() == 2);

    // idempotent union when a region is listed twice
    CHECK(make_mask(lib, "img0", {"l_lip", "l_lip"}).grid == l_lip.grid);

    BinaryMask eyes = make_mask(lib, "img0", {"l_eye", "r_eye"});
    CHECK(eyes.foreground_count() == 2);

    CHECK_THROWS_AS(make_mask(lib, "img0", {"hair"}), Error);
    try {
        make_mask(lib, "img0", {"hair"});
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::missing_region);
        CHECK(std::string(e.what()).find("l_lip") != std::string::npos);
    }

    BinaryMask odd(5, 5, 0);
    CHECK_THROWS_AS(lib.add("img0", "odd", odd), Error);
}

TEST_CASE("mask PNG round trip and directory loading") {
    TempDir dir("masks");
    Rng rng(46);
    BinaryMask m = random_mask(16, 16, rng);
    save_mask_png(dir.path() / "hair.png", m);
    CHECK(load_mask_png(dir.path() / "hair.png").grid == m.grid);

    BinaryMask nose = random_mask(16, 16, rng);
    save_mask_png(dir.path() / "img7_nose.png", nose);
    RegionLibrary lib = RegionLibrary::load_directory(dir.path(), "img7");
    CHECK(lib.has("img7", "hair"));
    CHECK(lib.has("img7", "nose"));
    CHECK(lib.get("img7", "nose").grid == nose.grid);
}

TEST_CASE("dilation grows the foreground") {
    BinaryMask m(8, 8, 0);
    m.at(4, 4) = 1;
    BinaryMask d = dilate_mask(m, 1);
    CHECK(d.foreground_count() == 9);
    CHECK(dilate_mask(m, 0).grid == m.grid);
}

}  // TEST_SUITE
