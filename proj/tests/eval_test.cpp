#include "mvanon/eval.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "mvanon/rng.hpp"
#include "vendor/doctest.h"

using namespace mvanon;

namespace {

BBox2D box(double x, double y, double w, double h) { return BBox2D{x, y, x + w, y + h}; }

FaceBox fb(int frame, std::string cam, int person, const BBox2D& b, bool occluded = false) {
    FaceBox f;
    f.frame_index = frame;
    f.camera_id = std::move(cam);
    f.person_id = person;
    f.box = b;
    f.fully_occluded = occluded;
    return f;
}

// Maximum-cardinality matching between detections and visible annotations,
// admissible when IoU clears the threshold. Exhaustive recursion over
// annotations with a detection-usage bitmask; fine for <=10 boxes a side.
int max_matching(const std::vector<BBox2D>& dets, const std::vector<BBox2D>& anns,
                 const std::vector<bool>& occluded, double thr) {
    const int na = static_cast<int>(anns.size());
    std::vector<std::vector<int>> adm(na);
    for (int a = 0; a < na; ++a) {
        if (occluded[a]) continue;
        for (int d = 0; d < static_cast<int>(dets.size()); ++d)
            if (iou(dets[d], anns[a]) >= thr) adm[a].push_back(d);
    }
    std::function<int(int, unsigned)> best = [&](int a, unsigned used) -> int {
        if (a == na) return 0;
        int top = best(a + 1, used);  // leave annotation a unmatched
        for (int d : adm[a])
            if (!(used & (1u << d))) top = std::max(top, 1 + best(a + 1, used | (1u << d)));
        return top;
    };
    return best(0, 0u);
}

Image8 random_image(Rng& rng, int w, int h) {
    Image8 img(w, h);
    for (auto& b : img.data) b = static_cast<std::uint8_t>(rng.uniform_int(0, 255));
    return img;
}

// Direct windowed SSIM: explicit 2D Gaussian weights, one window at a time.
double ssim_oracle(const Image8& a, const Image8& b, int window, double k1, double k2,
                   double range) {
    const int half = window / 2;
    std::vector<double> k(window);
    double ksum = 0.0;
    for (int i = 0; i < window; ++i) {
        const double d = i - half;
        k[i] = std::exp(-0.5 * d * d / 2.25);
        ksum += k[i];
    }
    for (double& v : k) v /= ksum;

    const double c1 = (k1 * range) * (k1 * range);
    const double c2 = (k2 * range) * (k2 * range);
    const int out_w = a.width - window + 1, out_h = a.height - window + 1;
    double channel_sum = 0.0;
    for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (int wy = 0; wy < out_h; ++wy)
            for (int wx = 0; wx < out_w; ++wx) {
                double mu_a = 0, mu_b = 0, m_aa = 0, m_bb = 0, m_ab = 0;
                for (int j = 0; j < window; ++j)
                    for (int i = 0; i < window; ++i) {
                        const double wgt = k[i] * k[j];
                        const double va = a.px(wx + i, wy + j)[c];
                        const double vb = b.px(wx + i, wy + j)[c];
                        mu_a += wgt * va;
                        mu_b += wgt * vb;
                        m_aa += wgt * va * va;
                        m_bb += wgt * vb * vb;
                        m_ab += wgt * va * vb;
                    }
                const double var_a = m_aa - mu_a * mu_a;
                const double var_b = m_bb - mu_b * mu_b;
                const double cov = m_ab - mu_a * mu_b;
                acc += ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) /
                       ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
            }
        channel_sum += acc / (static_cast<double>(out_w) * out_h);
    }
    return channel_sum / 3.0;
}

}  // namespace

TEST_CASE("iou on the standard examples") {
    const BBox2D a = box(0, 0, 10, 10);
    CHECK(iou(a, a) == 1.0);
    CHECK(iou(a, box(20, 20, 5, 5)) == 0.0);
    CHECK(iou(a, box(10, 0, 10, 10)) == 0.0);  // touching edges share no area
    CHECK(iou(a, BBox2D{5, 0, 15, 10}) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
    CHECK(iou(box(0, 0, 8, 5), a) == doctest::Approx(0.4).epsilon(1e-12));

    Rng rng(501);
    for (int i = 0; i < 200; ++i) {
        const BBox2D p = box(rng.uniform() * 50, rng.uniform() * 50, 1 + rng.uniform() * 30,
                             1 + rng.uniform() * 30);
        const BBox2D q = box(rng.uniform() * 50, rng.uniform() * 50, 1 + rng.uniform() * 30,
                             1 + rng.uniform() * 30);
        CHECK(iou(p, q) == iou(q, p));
        CHECK(iou(p, q) >= 0.0);
        CHECK(iou(p, q) <= 1.0);
    }

    const BBox2D degenerate{5, 5, 5, 9};
    CHECK_FALSE(degenerate.valid());
    CHECK(iou(degenerate, a) == 0.0);
}

TEST_CASE("match_and_score on hand-built scenes") {
    SUBCASE("identical sets score perfectly") {
        std::vector<FaceBox> gt{fb(0, "a", 0, box(10, 10, 20, 20)),
                                fb(0, "a", 1, box(50, 10, 20, 20)),
                                fb(1, "a", 0, box(12, 10, 20, 20))};
        const auto out = match_and_score(gt, gt, 0.4);
        CHECK(out.overall.tp == 3);
        CHECK(out.overall.fp == 0);
        CHECK(out.overall.fn == 0);
        CHECK(out.per_camera.at("a").precision() == 1.0);
        CHECK(out.per_camera.at("a").recall() == 1.0);
        CHECK(out.per_camera.at("a").f1() == 1.0);
        CHECK(out.matches.size() == 3);
        for (const auto& m : out.matches) CHECK(m.iou == 1.0);
    }

    SUBCASE("a missing detection is a false negative") {
        std::vector<FaceBox> gt{fb(0, "a", 0, box(10, 10, 20, 20)),
                                fb(0, "a", 1, box(60, 10, 20, 20))};
        std::vector<FaceBox> det{fb(0, "a", -1, box(11, 11, 20, 20))};
        const auto out = match_and_score(det, gt, 0.4);
        CHECK(out.overall.tp == 1);
        CHECK(out.overall.fp == 0);
        CHECK(out.overall.fn == 1);
        CHECK(out.per_camera.at("a").recall() == 0.5);
        CHECK(out.per_camera.at("a").precision() == 1.0);
        REQUIRE(out.matches.size() == 1);
        CHECK(out.matches[0].det_index == 0);
        CHECK(out.matches[0].ann_index == 0);
    }

    SUBCASE("fully occluded annotations are ignore regions") {
        std::vector<FaceBox> gt{fb(0, "a", 0, box(10, 10, 20, 20), true)};
        std::vector<FaceBox> det{fb(0, "a", -1, box(12, 12, 20, 20)),
                                 fb(0, "a", -1, box(70, 70, 20, 20))};
        const auto out = match_and_score(det, gt, 0.4);
        // The overlapping detection is ignored; the stray one is a plain FP.
        CHECK(out.overall.tp == 0);
        CHECK(out.overall.fn == 0);
        CHECK(out.overall.fp == 1);
        CHECK(out.matches.empty());
    }

    SUBCASE("cameras with annotations but no detections still report") {
        std::vector<FaceBox> gt{fb(0, "lonely", 2, box(5, 5, 10, 10))};
        const auto out = match_and_score({}, gt, 0.4);
        REQUIRE(out.per_camera.count("lonely") == 1);
        CHECK(out.per_camera.at("lonely").fn == 1);
        CHECK(out.per_camera.at("lonely").recall() == 0.0);
    }

    SUBCASE("overlap exactly at the threshold counts") {
        std::vector<FaceBox> gt{fb(0, "a", 0, box(0, 0, 10, 10))};
        std::vector<FaceBox> det{fb(0, "a", -1, box(0, 0, 8, 5))};  // IoU 0.4
        CHECK(match_and_score(det, gt, 0.4).overall.tp == 1);
        CHECK(match_and_score(det, gt, 0.45).overall.tp == 0);
    }

    SUBCASE("equal-overlap ties resolve to the lowest detection index") {
        std::vector<FaceBox> gt{fb(0, "a", 0, box(10, 10, 20, 20))};
        std::vector<FaceBox> det{fb(0, "a", -1, box(10, 10, 20, 20)),
                                 fb(0, "a", -1, box(10, 10, 20, 20))};
        const auto out = match_and_score(det, gt, 0.4);
        CHECK(out.overall.tp == 1);
        CHECK(out.overall.fp == 1);
        REQUIRE(out.matches.size() == 1);
        CHECK(out.matches[0].det_index == 0);
    }

    SUBCASE("frames never cross-match") {
        std::vector<FaceBox> gt{fb(0, "a", 0, box(10, 10, 20, 20))};
        std::vector<FaceBox> det{fb(1, "a", -1, box(10, 10, 20, 20))};
        const auto out = match_and_score(det, gt, 0.4);
        CHECK(out.overall.tp == 0);
        CHECK(out.overall.fp == 1);
        CHECK(out.overall.fn == 1);
    }
}

TEST_CASE("greedy matching tracks the exhaustive optimum") {
    Rng rng(503);
    int disagreements = 0;
    const int trials = 1000;
    for (int trial = 0; trial < trials; ++trial) {
        const int na = rng.uniform_int(0, 5);
        std::vector<BBox2D> anns;
        std::vector<bool> occ;
        for (int a = 0; a < na; ++a) {
            anns.push_back(box(rng.uniform() * 80, rng.uniform() * 80, 8 + rng.uniform() * 30,
                               8 + rng.uniform() * 30));
            occ.push_back(rng.uniform() < 0.15);
        }
        std::vector<BBox2D> dets;
        for (int a = 0; a < na; ++a)
            if (rng.uniform() < 0.75) {
                const BBox2D& g = anns[a];
                const double jx = rng.uniform() * 12 - 6, jy = rng.uniform() * 12 - 6;
                dets.push_back(BBox2D{g.x_min + jx, g.y_min + jy, g.x_max + jx, g.y_max + jy});
            }
        const int extra = rng.uniform_int(0, 2);
        for (int e = 0; e < extra; ++e)
            dets.push_back(box(rng.uniform() * 90, rng.uniform() * 90, 8 + rng.uniform() * 25,
                               8 + rng.uniform() * 25));

        std::vector<FaceBox> gt, dt;
        for (int a = 0; a < na; ++a) gt.push_back(fb(0, "c", a, anns[a], occ[a]));
        for (const BBox2D& d : dets) dt.push_back(fb(0, "c", -1, d));

        const auto out = match_and_score(dt, gt, 0.4);
        const int optimum = max_matching(dets, anns, occ, 0.4);
        CHECK(out.overall.tp <= optimum);  // greedy never overcounts
        if (out.overall.tp != optimum) {
            ++disagreements;
            continue;
        }
        // When the counts coincide the remaining tallies are pinned down.
        const int visible = static_cast<int>(std::count(occ.begin(), occ.end(), false));
        CHECK(out.overall.fn == visible - out.overall.tp);
        CHECK(out.overall.fp <= static_cast<int>(dets.size()) - out.overall.tp);
        CHECK(out.overall.fp >= 0);
    }
    MESSAGE("greedy/optimal disagreements: " << disagreements << " of " << trials);
    CHECK(disagreements < trials / 10);
}

TEST_CASE("holistic recall requires every visible camera") {
    const BBox2D b0 = box(10, 10, 20, 20);

    SUBCASE("all three views matched") {
        std::vector<FaceBox> gt{fb(0, "a", 0, b0), fb(0, "b", 0, b0), fb(0, "c", 0, b0)};
        const auto res = holistic_recall(gt, gt, 0.4);
        CHECK(res.total == 1);
        CHECK(res.detected == 1);
        CHECK(res.recall == 1.0);
        CHECK(res.per_person.at(0) == std::pair<int, int>{1, 1});
    }

    SUBCASE("two of three views is a holistic miss") {
        std::vector<FaceBox> gt{fb(0, "a", 0, b0), fb(0, "b", 0, b0), fb(0, "c", 0, b0)};
        std::vector<FaceBox> det{fb(0, "a", -1, b0), fb(0, "b", -1, b0)};
        const auto res = holistic_recall(det, gt, 0.4);
        CHECK(res.total == 1);
        CHECK(res.detected == 0);
        CHECK(res.recall == 0.0);
    }

    SUBCASE("fully occluded views do not count against the unit") {
        std::vector<FaceBox> gt{fb(0, "a", 0, b0), fb(0, "b", 0, b0),
                                fb(0, "c", 0, b0, true)};
        std::vector<FaceBox> det{fb(0, "a", -1, b0), fb(0, "b", -1, b0)};
        const auto res = holistic_recall(det, gt, 0.4);
        CHECK(res.total == 1);
        CHECK(res.detected == 1);
    }

    SUBCASE("a unit occluded everywhere leaves the denominator") {
        std::vector<FaceBox> gt{fb(0, "a", 0, b0, true), fb(0, "b", 0, b0, true),
                                fb(3, "a", 1, b0), fb(3, "b", 1, b0)};
        std::vector<FaceBox> det{fb(3, "a", -1, b0), fb(3, "b", -1, b0)};
        const auto res = holistic_recall(det, gt, 0.4);
        CHECK(res.total == 1);  // only (frame 3, person 1)
        CHECK(res.detected == 1);
        CHECK(res.per_person.count(0) == 0);
    }

    SUBCASE("no units no recall") {
        const auto res = holistic_recall({}, {}, 0.4);
        CHECK(res.total == 0);
        CHECK(res.recall == 0.0);
    }
}

TEST_CASE("holistic recall is bounded by every per-camera recall") {
    // Every person is annotated in every camera each frame, so a holistic
    // unit is strictly harder than any single-camera detection.
    Rng rng(504);
    const std::vector<std::string> cams{"a", "b", "c"};
    for (int run = 0; run < 20; ++run) {
        std::vector<FaceBox> gt, det;
        for (int f = 0; f < 10; ++f)
            for (int p = 0; p < 4; ++p)
                for (const auto& cam : cams) {
                    const BBox2D b = box(30.0 * p + f, 10 + 2 * p, 20, 20);
                    gt.push_back(fb(f, cam, p, b));
                    if (rng.uniform() < 0.8) {
                        const double jx = rng.uniform() * 4 - 2, jy = rng.uniform() * 4 - 2;
                        det.push_back(fb(f, cam, -1,
                                         BBox2D{b.x_min + jx, b.y_min + jy, b.x_max + jx,
                                                b.y_max + jy}));
                    }
                }
        const auto holo = holistic_recall(det, gt, 0.4);
        const auto match = match_and_score(det, gt, 0.4);
        for (const auto& cam : cams)
            CHECK(holo.recall <= match.per_camera.at(cam).recall() + 1e-12);
    }
}

TEST_CASE("ssim of an image with itself is exactly one") {
    Rng rng(505);
    const Image8 img = random_image(rng, 24, 24);
    CHECK(ssim(img, img) == 1.0);
}

TEST_CASE("ssim matches the direct windowed oracle") {
    Rng rng(506);
    for (int trial = 0; trial < 8; ++trial) {
        const Image8 a = random_image(rng, 64, 64);
        Image8 b = random_image(rng, 64, 64);
        if (trial % 2 == 0) {
            // Correlated pair: noisy copy instead of independent noise.
            b = a;
            for (auto& v : b.data)
                v = static_cast<std::uint8_t>(
                    std::clamp(static_cast<int>(v) + rng.uniform_int(-12, 12), 0, 255));
        }
        const double got = ssim(a, b);
        const double want = ssim_oracle(a, b, 11, 0.01, 0.03, 255.0);
        CHECK(std::abs(got - want) < 1e-9);
        CHECK(ssim(a, b) == ssim(b, a));
        CHECK(got <= 1.0 + 1e-12);
    }
}

TEST_CASE("ssim separates noisy copies from unrelated noise") {
    Rng rng(507);
    const Image8 a = random_image(rng, 48, 48);
    Image8 close = a;
    for (auto& v : close.data)
        v = static_cast<std::uint8_t>(std::clamp(static_cast<int>(v) + rng.uniform_int(-6, 6),
                                                 0, 255));
    const Image8 far = random_image(rng, 48, 48);
    CHECK(ssim(a, close) > 0.7);
    CHECK(ssim(a, far) < ssim(a, close));
}

TEST_CASE("ssim input validation") {
    Rng rng(508);
    const Image8 small = random_image(rng, 8, 8);
    CHECK_THROWS_AS(ssim(small, small, 11), TooSmall);
    const Image8 a = random_image(rng, 16, 16);
    const Image8 b = random_image(rng, 16, 17);
    CHECK_THROWS_AS(ssim(a, b), DimensionMismatch);
    const Image8 exact = random_image(rng, 11, 11);
    CHECK_NOTHROW(ssim(exact, exact, 11));
    CHECK_THROWS_AS(ssim(exact, exact, 0), TooSmall);
}
