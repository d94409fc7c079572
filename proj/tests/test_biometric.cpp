#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "faceedit/biometric.hpp"
#include "faceedit/clients.hpp"
#include "faceedit/rng.hpp"
#include "helpers.hpp"

using namespace faceedit;
using test_helpers::TempDir;
using test_helpers::toy_face;

namespace {

IdentityEmbedding unit_embedding(const std::vector<double>& raw,
                                 const std::string& subject,
                                 const std::string& matcher = "stub-arcface",
                                 const std::string& image_id = "") {
    IdentityEmbedding e;
    double n = 0.0;
    for (double v : raw) n += v * v;
    n = std::sqrt(n);
    e.vector = raw;
    for (auto& v : e.vector) v /= n;
    e.subject_id = subject;
    e.matcher_id = matcher;
    e.detect_ok = true;
    e.image_id = image_id.empty() ? subject : image_id;
    return e;
}

// Exhaustive-scan reference: tries every observed impostor score as the
// threshold (plus one value above the maximum) and reports the smallest
// threshold that meets the target, with its exact FMR and FNMR.
struct OracleRates {
    double threshold, fmr, fnmr;
};
OracleRates oracle_rates(std::vector<double> genuine, std::vector<double> impostor,
                         double target) {
    std::sort(impostor.begin(), impostor.end());
    auto fmr_at = [&](double t) {
        std::size_t c = 0;
        for (double s : impostor)
            if (s >= t) ++c;
        return static_cast<double>(c) / impostor.size();
    };
    std::vector<double> candidates = impostor;
    candidates.push_back(std::nextafter(impostor.back(),
                                        std::numeric_limits<double>::infinity()));
    double best = candidates.back();
    for (double t : candidates)
        if (fmr_at(t) <= target) {
            best = t;
            break;
        }
    std::size_t below = 0;
    for (double s : genuine)
        if (s < best) ++below;
    return {best, fmr_at(best), static_cast<double>(below) / genuine.size()};
}

}  // namespace

TEST_SUITE("biometric") {

TEST_CASE("similarity basics") {
    auto a = unit_embedding({1, 0, 0, 0}, "s1");
    auto b = unit_embedding({-1, 0, 0, 0}, "s2");
    CHECK(similarity(a, a) == doctest::Approx(1.0));
    CHECK(similarity(a, b) == doctest::Approx(-1.0));

    Rng rng(51);
    std::vector<double> x(16), y(16);
    for (auto& v : x) v = rng.normal();
    for (auto& v : y) v = rng.normal();
    auto ex = unit_embedding(x, "s1");
    auto ey = unit_embedding(y, "s2");
    double dot = 0.0;
    for (std::size_t i = 0; i < 16; ++i) dot += ex.vector[i] * ey.vector[i];
    CHECK(similarity(ex, ey) == doctest::Approx(dot).epsilon(1e-12));
    CHECK(similarity(ex, ey) == doctest::Approx(similarity(ey, ex)).epsilon(1e-12));

    auto other = unit_embedding(x, "s1", "stub-adaface");
    CHECK_THROWS_AS(similarity(ex, other), Error);
    try {
        similarity(ex, other);
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::incompatible_embedding);
    }
}

TEST_CASE("extract_embedding normalizes and flags blank frames") {
    StubMatcherClient client("stub-arcface");
    Image face = toy_face("frank", 0);
    IdentityEmbedding e =
        extract_embedding(client, face, "frank", EmbeddingSource::probe_original);
    CHECK(e.detect_ok);
    CHECK(e.vector.size() == 512);
    double n = 0.0;
    for (double v : e.vector) n += v * v;
    CHECK(std::sqrt(n) == doctest::Approx(1.0).epsilon(1e-9));

    // deterministic client contract: identical calls, identical vectors
    IdentityEmbedding e2 =
        extract_embedding(client, face, "frank", EmbeddingSource::probe_original);
    CHECK(e.vector == e2.vector);

    Image blank(3, 64, 64);
    IdentityEmbedding none =
        extract_embedding(client, blank, "frank", EmbeddingSource::probe_original);
    CHECK(!none.detect_ok);
}

TEST_CASE("compute_scores pair counting and gating") {
    // 2 subjects x 2 gallery x 1 probe each -> 2 genuine + 2 impostor
    std::vector<IdentityEmbedding> gallery = {
        unit_embedding({1, 0, 0.1, 0}, "s1", "m", "g1a"),
        unit_embedding({0, 1, 0, 0.1}, "s2", "m", "g2a"),
    };
    std::vector<IdentityEmbedding> probes = {
        unit_embedding({1, 0.05, 0, 0}, "s1", "m", "p1"),
        unit_embedding({0.05, 1, 0, 0}, "s2", "m", "p2"),
    };
    ScoreMatrix scores = compute_scores(gallery, probes);
    CHECK(scores.genuine_scores.size() == 2);
    CHECK(scores.impostor_scores.size() == 2);

    SUBCASE("undetected probes are excluded and tallied") {
        IdentityEmbedding failed;
        failed.subject_id = "s1";
        failed.matcher_id = "m";
        failed.detect_ok = false;
        probes.push_back(failed);
        ScoreMatrix gated = compute_scores(gallery, probes);
        CHECK(gated.genuine_scores.size() == 2);
        CHECK(gated.acquisition_failures == 1);
        CHECK(gated.failed_genuine_trials == 1);  // one s1 gallery entry
    }

    SUBCASE("empty gallery is a configuration error") {
        CHECK_THROWS_AS(compute_scores({}, probes), Error);
    }

    SUBCASE("multiset equals a nested-loop oracle") {
        Rng rng(52);
        std::vector<IdentityEmbedding> g, p;
        for (int i = 0; i < 6; ++i) {
            std::vector<double> v(8);
            for (auto& x : v) x = rng.normal();
            g.push_back(unit_embedding(v, "s" + std::to_string(i % 3), "m",
                                       "g" + std::to_string(i)));
        }
        for (int i = 0; i < 5; ++i) {
            std::vector<double> v(8);
            for (auto& x : v) x = rng.normal();
            p.push_back(unit_embedding(v, "s" + std::to_string(i % 3), "m",
                                       "p" + std::to_string(i)));
        }
        ScoreMatrix got = compute_scores(g, p);
        std::vector<double> want_genuine, want_impostor;
        for (const auto& probe : p)
            for (const auto& gal : g) {
                double s = similarity(probe, gal);
                (probe.subject_id == gal.subject_id ? want_genuine : want_impostor)
                    .push_back(s);
            }
        auto sorted = [](std::vector<double> v) {
            std::sort(v.begin(), v.end());
            return v;
        };
        CHECK(sorted(got.genuine_scores) == sorted(want_genuine));
        CHECK(sorted(got.impostor_scores) == sorted(want_impostor));
    }
}

TEST_CASE("max fusion collapses scores per (probe, subject)") {
    std::vector<IdentityEmbedding> gallery = {
        unit_embedding({1, 0, 0, 0}, "s1", "m", "g1a"),
        unit_embedding({1, 0.2, 0, 0}, "s1", "m", "g1b"),
        unit_embedding({0, 1, 0, 0}, "s2", "m", "g2a"),
        unit_embedding({0.2, 1, 0, 0}, "s2", "m", "g2b"),
    };
    std::vector<IdentityEmbedding> probes = {
        unit_embedding({1, 0.1, 0, 0}, "s1", "m", "p1"),
    };
    ScoreMatrix pairwise = compute_scores(gallery, probes, GenuineFusion::pairwise);
    CHECK(pairwise.genuine_scores.size() == 2);
    CHECK(pairwise.impostor_scores.size() == 2);

    ScoreMatrix fused = compute_scores(gallery, probes, GenuineFusion::max_per_subject);
    REQUIRE(fused.genuine_scores.size() == 1);
    REQUIRE(fused.impostor_scores.size() == 1);
    CHECK(fused.genuine_scores[0] ==
          doctest::Approx(std::max(pairwise.genuine_scores[0],
                                   pairwise.genuine_scores[1])));
    CHECK(fused.impostor_scores[0] ==
          doctest::Approx(std::max(pairwise.impostor_scores[0],
                                   pairwise.impostor_scores[1])));
}

TEST_CASE("calibrated thresholds apply across score pools") {
    ScoreMatrix calibration;
    for (int i = 0; i < 100; ++i) calibration.genuine_scores.push_back(0.9);
    for (int i = 0; i < 100; ++i)
        calibration.impostor_scores.push_back(i / 100.0 * 0.5);  // max 0.495
    ErrorRates calibrated = fnmr_at_fmr(calibration, {0.05, 0.2});

    ScoreMatrix other;
    other.genuine_scores = {0.1, 0.2, 0.8, 0.9};  // two below any threshold > 0.2
    other.impostor_scores = {0.0, 0.99};
    ErrorRates applied = fnmr_with_thresholds(other, calibrated);
    REQUIRE(applied.per_target.size() == 2);
    for (std::size_t i = 0; i < 2; ++i) {
        double t = calibrated.per_target[i].threshold;
        CHECK(applied.per_target[i].threshold == t);
        double below = 0;
        for (double s : other.genuine_scores)
            if (s < t) below += 1.0;
        CHECK(applied.per_target[i].fnmr == doctest::Approx(below / 4.0));
        double passing = 0;
        for (double s : other.impostor_scores)
            if (s >= t) passing += 1.0;
        CHECK(applied.per_target[i].achieved_fmr == doctest::Approx(passing / 2.0));
    }
}

TEST_CASE("threshold_at_fmr worked examples") {
    SUBCASE("ten evenly spaced impostors at target 0.10 give threshold 1.0") {
        std::vector<double> impostors = {0.1, 0.2, 0.3, 0.4, 0.5,
                                         0.6, 0.7, 0.8, 0.9, 1.0};
        ThresholdResult r = threshold_at_fmr(impostors, 0.10);
        CHECK(r.threshold == doctest::Approx(1.0));
        CHECK(r.achieved_fmr == doctest::Approx(0.10));
        CHECK(r.resolvable);
    }
    SUBCASE("fully separable impostors give zero FMR") {
        std::vector<double> impostors(50, -1.0);
        ThresholdResult r = threshold_at_fmr(impostors, 0.5);
        CHECK(r.achieved_fmr <= 0.5);
    }
    SUBCASE("too few impostors for the target is flagged unresolvable") {
        std::vector<double> impostors;
        for (int i = 0; i < 100; ++i) impostors.push_back(i / 100.0);
        ThresholdResult r = threshold_at_fmr(impostors, 1e-4);
        CHECK(!r.resolvable);
        CHECK(r.achieved_fmr == 0.0);
        CHECK(r.threshold > 0.99);
        CHECK(r.sample_size_warning);  // 100 < 10/1e-4
    }
    SUBCASE("parameter validation") {
        std::vector<double> impostors = {0.5};
        CHECK_THROWS_AS(threshold_at_fmr(impostors, 0.0), Error);
        CHECK_THROWS_AS(threshold_at_fmr(impostors, 1.0), Error);
        CHECK_THROWS_AS(threshold_at_fmr({}, 0.1), Error);
    }
}

TEST_CASE("fnmr_at_fmr basics") {
    ScoreMatrix scores;
    scores.genuine_scores = std::vector<double>(40, 0.9);
    scores.impostor_scores = std::vector<double>(40, 0.1);

    SUBCASE("perfect separation gives FNMR 0") {
        ErrorRates r = fnmr_at_fmr(scores, {0.02, 0.2});
        for (const auto& t : r.per_target) CHECK(t.fnmr == 0.0);
    }

    SUBCASE("monotonicity: looser target, lower (or equal) FNMR") {
        Rng rng(53);
        ScoreMatrix mix;
        for (int i = 0; i < 300; ++i) mix.genuine_scores.push_back(rng.uniform(0.2, 1.0));
        for (int i = 0; i < 3000; ++i)
            mix.impostor_scores.push_back(rng.uniform(-0.2, 0.7));
        ErrorRates r = fnmr_at_fmr(mix, {1e-3, 1e-2});
        CHECK(r.per_target[1].fnmr <= r.per_target[0].fnmr);
        CHECK(r.per_target[1].threshold <= r.per_target[0].threshold);
        CHECK(r.cell().find('/') != std::string::npos);
    }

    SUBCASE("empty genuine list raises no_genuine_trials") {
        ScoreMatrix empty;
        empty.impostor_scores = {0.1, 0.2};
        CHECK_THROWS_AS(fnmr_at_fmr(empty, {0.1}), Error);
    }

    SUBCASE("acquisition failures count as non-matches under the default policy") {
        ScoreMatrix with_failures = scores;
        with_failures.failed_genuine_trials = 40;
        ErrorRates counted =
            fnmr_at_fmr(with_failures, {0.2}, AcquisitionPolicy::count_as_nonmatch);
        CHECK(counted.per_target[0].fnmr == doctest::Approx(0.5));
        ErrorRates excluded =
            fnmr_at_fmr(with_failures, {0.2}, AcquisitionPolicy::exclude);
        CHECK(excluded.per_target[0].fnmr == doctest::Approx(0.0));
    }
}

TEST_CASE("random instances match the exhaustive-scan oracle exactly") {
    Rng rng(54);
    for (int rep = 0; rep < 25; ++rep) {
        std::vector<double> genuine, impostor;
        std::size_t ng = 20 + rng.below(480);
        std::size_t ni = 50 + rng.below(4500);
        for (std::size_t i = 0; i < ng; ++i) genuine.push_back(rng.uniform(-1.0, 1.0));
        for (std::size_t i = 0; i < ni; ++i) impostor.push_back(rng.uniform(-1.0, 1.0));
        ScoreMatrix scores;
        scores.genuine_scores = genuine;
        scores.impostor_scores = impostor;
        for (double target : {1e-3, 1e-2, 0.1}) {
            OracleRates want = oracle_rates(genuine, impostor, target);
            ErrorRates got = fnmr_at_fmr(scores, {target});
            CHECK(got.per_target[0].threshold == want.threshold);
            CHECK(got.per_target[0].achieved_fmr == want.fmr);
            CHECK(got.per_target[0].fnmr == want.fnmr);
        }
    }
}

TEST_CASE("decisions are invariant to raw embedding scale") {
    Rng rng(55);
    std::vector<std::vector<double>> raw;
    for (int i = 0; i < 12; ++i) {
        std::vector<double> v(16);
        for (auto& x : v) x = rng.normal();
        raw.push_back(v);
    }
    auto build = [&](double scale) {
        std::vector<IdentityEmbedding> gallery, probes;
        for (int i = 0; i < 6; ++i) {
            std::vector<double> v = raw[i];
            for (auto& x : v) x *= scale;
            gallery.push_back(unit_embedding(v, "s" + std::to_string(i % 3)));
        }
        for (int i = 6; i < 12; ++i) {
            std::vector<double> v = raw[i];
            for (auto& x : v) x *= scale;
            probes.push_back(unit_embedding(v, "s" + std::to_string(i % 3)));
        }
        return compute_scores(gallery, probes);
    };
    ScoreMatrix a = build(1.0);
    ScoreMatrix b = build(7.5);
    for (std::size_t i = 0; i < a.genuine_scores.size(); ++i)
        CHECK(a.genuine_scores[i] == doctest::Approx(b.genuine_scores[i]).epsilon(1e-9));
}

TEST_CASE("gallery quality filtering") {
    StubMatcherClient client("stub-arcface");
    std::vector<std::pair<std::string, Image>> images = {
        {"good", toy_face("gina", 0)},
        {"blank", Image(3, 64, 64)},
    };
    GalleryFilterResult result = filter_gallery_by_quality(images, client, "gina");
    CHECK(result.kept.size() == 1);
    REQUIRE(result.removed.size() == 1);
    CHECK(result.removed[0].image_id == "blank");
    CHECK(result.removed[0].reason == "no-face");

    // all pass -> empty log
    std::vector<std::pair<std::string, Image>> all_good = {
        {"a", toy_face("gina", 0)}, {"b", toy_face("gina", 1)}};
    GalleryFilterResult ok = filter_gallery_by_quality(all_good, client, "gina");
    CHECK(ok.kept.size() == 2);
    CHECK(ok.removed.empty());
}

TEST_CASE("degradation flags") {
    auto rates = [](double fnmr_strict, double fnmr_loose) {
        ErrorRates r;
        r.per_target = {{1e-4, 0.5, 1e-4, fnmr_strict, true, false},
                        {1e-3, 0.4, 1e-3, fnmr_loose, true, false}};
        return r;
    };
    SUBCASE("a large FNMR jump flags RED under arcface") {
        CHECK(flag_degradation(rates(0.10, 0.01), rates(0.87, 0.06), "arcface") ==
              DegradationFlag::red);
    }
    SUBCASE("no change, no flag") {
        CHECK(flag_degradation(rates(0.33, 0.09), rates(0.33, 0.09), "arcface") ==
              DegradationFlag::none);
    }
    SUBCASE("adaface uses the tighter 0.05 threshold") {
        CHECK(flag_degradation(rates(0.08, 0.07), rates(0.15, 0.08), "adaface") ==
              DegradationFlag::red);
        CHECK(flag_degradation(rates(0.08, 0.07), rates(0.12, 0.08), "arcface") ==
              DegradationFlag::none);
    }
    SUBCASE("mitigation goes GREEN only over a RED baseline") {
        ErrorRates original = rates(0.10, 0.01);
        ErrorRates baseline = rates(0.87, 0.06);
        ErrorRates better = rates(0.19, 0.03);
        DegradationFlag base_flag = flag_degradation(original, baseline, "arcface");
        CHECK(flag_mitigation(baseline, better, base_flag) == DegradationFlag::green);
        CHECK(flag_mitigation(baseline, better, DegradationFlag::none) ==
              DegradationFlag::none);
    }
    SUBCASE("mismatched targets raise a comparison error") {
        ErrorRates other;
        other.per_target = {{1e-2, 0.5, 1e-2, 0.1, true, false}};
        CHECK_THROWS_AS(flag_degradation(rates(0.1, 0.1), other, "arcface"), Error);
    }
}

TEST_CASE("embedding cache round trip") {
    TempDir dir("embeddings");
    StubMatcherClient client("stub-arcface");
    IdentityEmbedding e = extract_embedding(client, toy_face("hugo", 0), "hugo",
                                            EmbeddingSource::original_gallery, "hugo_0");
    e.save(dir.path() / "hugo_0");
    IdentityEmbedding back = IdentityEmbedding::load(dir.path() / "hugo_0");
    CHECK(back.vector == e.vector);
    CHECK(back.subject_id == "hugo");
    CHECK(back.matcher_id == "stub-arcface");
    CHECK(back.source == EmbeddingSource::original_gallery);
    CHECK(back.detect_ok);
}

}  // TEST_SUITE
