#include "mvanon/render.hpp"

#include <Eigen/Sparse>
#include <vector>

#include "mvanon/rng.hpp"
#include "support.hpp"
#include "vendor/doctest.h"

using namespace mvanon;
using testsupport::make_camera;

namespace {

Camera unit_camera() {
    Camera cam;
    cam.id = "cam";
    cam.intrinsics = {100.0, 100.0, 50.0, 50.0, 100, 100};
    return cam;
}

Image8 flat_texture(int w, int h, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    Image8 img(w, h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) img.set(x, y, r, g, b);
    return img;
}

// One world-frame triangle at constant depth with throwaway uvs.
FaceInstance tri_face(const Vec3& a, const Vec3& b, const Vec3& c) {
    FaceInstance f;
    f.vertices = {a, b, c};
    f.uvs = {Vec2(0, 0), Vec2(1, 0), Vec2(0, 1)};
    f.triangles = {{0, 1, 2}};
    return f;
}

// Inclusive point-in-triangle test on screen coordinates, either winding.
bool pixel_in_triangle(double px, double py, const Vec2& a, const Vec2& b, const Vec2& c) {
    const auto cross = [&](const Vec2& p, const Vec2& q) {
        return (q.x() - p.x()) * (py - p.y()) - (q.y() - p.y()) * (px - p.x());
    };
    const double w0 = cross(b, c), w1 = cross(c, a), w2 = cross(a, b);
    return (w0 >= 0 && w1 >= 0 && w2 >= 0) || (w0 <= 0 && w1 <= 0 && w2 <= 0);
}

Vec2 screen_of(const Camera& cam, const Vec3& world) {
    const auto px = try_project(cam.intrinsics, cam.camera_from_world(), world);
    REQUIRE(px.has_value());
    return px->pixel;
}

Image8 random_image(Rng& rng, int w, int h) {
    Image8 img(w, h);
    for (auto& b : img.data) b = static_cast<std::uint8_t>(rng.uniform_int(0, 255));
    return img;
}

// Independent high-precision solve of the blend system for one channel.
// Discretization mirrors the solver contract: unknowns are mask pixels off the
// frame border, 5-point Laplacian, Dirichlet boundary from the frame, guidance
// is the alpha mix of composite and frame gradients.
std::vector<double> oracle_blend_channel(const Image8& frame, const RenderedFace& rf,
                                         double alpha, int channel,
                                         const std::vector<std::pair<int, int>>& coords) {
    const int bx = static_cast<int>(rf.bbox->x_min);
    const int by = static_cast<int>(rf.bbox->y_min);
    const int bw = rf.bbox_width();
    std::vector<int> index(static_cast<std::size_t>(bw) * rf.bbox_height(), -1);
    for (std::size_t i = 0; i < coords.size(); ++i) {
        const auto [fx, fy] = coords[i];
        index[static_cast<std::size_t>(fy - by) * bw + (fx - bx)] = static_cast<int>(i);
    }
    const auto composite = [&](int fx, int fy) {
        if (rf.covers(fx, fy)) {
            const std::size_t i = static_cast<std::size_t>(fy - by) * bw + (fx - bx);
            return static_cast<double>(rf.patch[i][channel]);
        }
        return static_cast<double>(frame.px(fx, fy)[channel]);
    };

    const int n = static_cast<int>(coords.size());
    Eigen::SparseMatrix<double> a(n, n);
    std::vector<Eigen::Triplet<double>> trips;
    Eigen::VectorXd b = Eigen::VectorXd::Zero(n);
    const int dx[] = {1, -1, 0, 0}, dy[] = {0, 0, 1, -1};
    for (int i = 0; i < n; ++i) {
        const auto [fx, fy] = coords[i];
        trips.emplace_back(i, i, 4.0);
        for (int d = 0; d < 4; ++d) {
            const int qx = fx + dx[d], qy = fy + dy[d];
            b(i) += alpha * (composite(fx, fy) - composite(qx, qy));
            b(i) += (1.0 - alpha) * (frame.px(fx, fy)[channel] - frame.px(qx, qy)[channel]);
            int j = -1;
            const int lx = qx - bx, ly = qy - by;
            if (lx >= 0 && ly >= 0 && lx < bw && ly < rf.bbox_height())
                j = index[static_cast<std::size_t>(ly) * bw + lx];
            if (j >= 0)
                trips.emplace_back(i, j, -1.0);
            else
                b(i) += static_cast<double>(frame.px(qx, qy)[channel]);
        }
    }
    a.setFromTriplets(trips.begin(), trips.end());
    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver(a);
    REQUIRE(solver.info() == Eigen::Success);
    const Eigen::VectorXd x = solver.solve(b);
    return {x.data(), x.data() + n};
}

std::vector<std::pair<int, int>> interior_mask_pixels(const Image8& frame,
                                                     const RenderedFace& rf) {
    std::vector<std::pair<int, int>> coords;
    const int bx = static_cast<int>(rf.bbox->x_min);
    const int by = static_cast<int>(rf.bbox->y_min);
    for (int y = 0; y < rf.bbox_height(); ++y)
        for (int x = 0; x < rf.bbox_width(); ++x) {
            if (!rf.mask[static_cast<std::size_t>(y) * rf.bbox_width() + x]) continue;
            const int fx = bx + x, fy = by + y;
            if (fx < 1 || fy < 1 || fx >= frame.width - 1 || fy >= frame.height - 1) continue;
            coords.emplace_back(fx, fy);
        }
    return coords;
}

// A rendered face that is pure mask+patch (no rasterization involved).
RenderedFace synthetic_patch(Rng& rng, int bx, int by, int bw, int bh, bool full) {
    RenderedFace rf;
    rf.camera_id = "cam";
    rf.bbox = BBox2D{static_cast<double>(bx), static_cast<double>(by),
                     static_cast<double>(bx + bw), static_cast<double>(by + bh)};
    rf.mask.assign(static_cast<std::size_t>(bw) * bh, 0);
    rf.patch.assign(rf.mask.size(), Color3{0, 0, 0});
    rf.depth.assign(rf.mask.size(), 1.0);
    for (int y = 0; y < bh; ++y)
        for (int x = 0; x < bw; ++x) {
            const std::size_t i = static_cast<std::size_t>(y) * bw + x;
            rf.mask[i] = full || rng.uniform() < 0.8 ? 1 : 0;
            rf.patch[i] = {static_cast<std::uint8_t>(rng.uniform_int(0, 255)),
                           static_cast<std::uint8_t>(rng.uniform_int(0, 255)),
                           static_cast<std::uint8_t>(rng.uniform_int(0, 255))};
        }
    return rf;
}

}  // namespace

TEST_CASE("rasterized triangle matches the half-space oracle") {
    const Camera cam = unit_camera();
    const FaceInstance face =
        tri_face(Vec3(-0.4, -0.3, 2.0), Vec3(0.5, -0.25, 2.0), Vec3(0.0, 0.45, 2.0));
    const Image8 tex = flat_texture(4, 4, 200, 10, 30);
    const DepthFrame no_depth(cam.intrinsics.width, cam.intrinsics.height);

    const RenderedFace rf = rasterize_face(face, tex, cam, no_depth);
    REQUIRE(rf.bbox.has_value());
    CHECK_FALSE(rf.degenerate_pose);

    const Vec2 a = screen_of(cam, face.vertices[0]);
    const Vec2 b = screen_of(cam, face.vertices[1]);
    const Vec2 c = screen_of(cam, face.vertices[2]);
    int oracle_count = 0;
    for (int y = 0; y < cam.intrinsics.height; ++y)
        for (int x = 0; x < cam.intrinsics.width; ++x) {
            const bool in = pixel_in_triangle(x + 0.5, y + 0.5, a, b, c);
            oracle_count += in;
            CHECK(rf.covers(x, y) == in);
        }
    CHECK(rf.mask_count() == oracle_count);
    CHECK(oracle_count > 100);

    // Fronto-parallel at z=2: every covered pixel stores that depth.
    for (std::size_t i = 0; i < rf.mask.size(); ++i)
        if (rf.mask[i]) {
            CHECK(rf.depth[i] == doctest::Approx(2.0).epsilon(1e-12));
            CHECK(rf.patch[i][0] == 200);
            CHECK(rf.patch[i][1] == 10);
            CHECK(rf.patch[i][2] == 30);
        }
    CHECK(rf.mean_depth == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("face behind the camera is degenerate") {
    const Camera cam = unit_camera();
    const FaceInstance face =
        tri_face(Vec3(-0.1, 0, -1.0), Vec3(0.1, 0, -1.0), Vec3(0, 0.1, -1.5));
    const Image8 tex = flat_texture(2, 2, 255, 255, 255);
    const DepthFrame no_depth(100, 100);
    const RenderedFace rf = rasterize_face(face, tex, cam, no_depth);
    CHECK(rf.degenerate_pose);
    CHECK_FALSE(rf.bbox.has_value());
    CHECK(rf.mask_count() == 0);
}

TEST_CASE("z-buffer keeps the nearer surface") {
    const Camera cam = unit_camera();
    // Two triangles with the same screen footprint at z=1 and z=2. The nearer
    // one samples the black texel, the farther one the white texel.
    FaceInstance face;
    face.vertices = {Vec3(-0.2, -0.2, 1), Vec3(0.25, -0.2, 1), Vec3(0, 0.25, 1),
                     Vec3(-0.4, -0.4, 2), Vec3(0.5, -0.4, 2),  Vec3(0, 0.5, 2)};
    face.uvs = {Vec2(0, 0), Vec2(0, 0), Vec2(0, 0), Vec2(1, 1), Vec2(1, 1), Vec2(1, 1)};
    face.triangles = {{0, 1, 2}, {3, 4, 5}};
    Image8 tex(2, 2);
    tex.set(0, 0, 0, 0, 0);
    tex.set(1, 0, 128, 128, 128);
    tex.set(0, 1, 128, 128, 128);
    tex.set(1, 1, 255, 255, 255);
    const DepthFrame no_depth(100, 100);

    const RenderedFace rf = rasterize_face(face, tex, cam, no_depth);
    REQUIRE(rf.bbox.has_value());
    for (std::size_t i = 0; i < rf.mask.size(); ++i)
        if (rf.mask[i]) {
            CHECK(rf.depth[i] == doctest::Approx(1.0).epsilon(1e-12));
            CHECK(rf.patch[i][0] == 0);
        }
}

TEST_CASE("scene depth clips occluded pixels") {
    const Camera cam = unit_camera();
    const FaceInstance face =
        tri_face(Vec3(-0.4, -0.3, 2.0), Vec3(0.5, -0.25, 2.0), Vec3(0.0, 0.45, 2.0));
    const Image8 tex = flat_texture(2, 2, 90, 90, 90);

    SUBCASE("an occluder in front of the whole face removes it") {
        DepthFrame wall(100, 100);
        for (auto& v : wall.values) v = 1500;  // 1.5 m < 2.0 - tau
        const RenderedFace rf = rasterize_face(face, tex, cam, wall);
        CHECK_FALSE(rf.bbox.has_value());
        CHECK(rf.mask_count() == 0);
        CHECK_FALSE(rf.degenerate_pose);  // geometry was fine, the scene hides it
    }

    SUBCASE("sensor surface just behind the face keeps it") {
        DepthFrame wall(100, 100);
        for (auto& v : wall.values) v = 1980;  // within tau=0.05 of the mesh
        const RenderedFace rf = rasterize_face(face, tex, cam, wall);
        REQUIRE(rf.bbox.has_value());
        CHECK(rf.mask_count() > 100);
    }

    SUBCASE("half occluder splits the mask along the oracle") {
        DepthFrame split(100, 100);
        for (int y = 0; y < 100; ++y)
            for (int x = 0; x < 100; ++x) split.at(x, y) = x < 50 ? 1000 : 2500;
        const RenderedFace rf = rasterize_face(face, tex, cam, split);
        REQUIRE(rf.bbox.has_value());
        const Vec2 a = screen_of(cam, face.vertices[0]);
        const Vec2 b = screen_of(cam, face.vertices[1]);
        const Vec2 c = screen_of(cam, face.vertices[2]);
        for (int y = 0; y < 100; ++y)
            for (int x = 0; x < 100; ++x) {
                const bool expect = x >= 50 && pixel_in_triangle(x + 0.5, y + 0.5, a, b, c);
                CHECK(rf.covers(x, y) == expect);
            }
    }

    SUBCASE("missing scene depth never clips") {
        DepthFrame holes(100, 100);
        const RenderedFace rf = rasterize_face(face, tex, cam, holes);
        REQUIRE(rf.bbox.has_value());
        CHECK(rf.mask_count() > 100);
    }
}

TEST_CASE("bbox_of_mask bounds are tight and half-open") {
    const std::vector<std::pair<int, int>> pts{{10, 20}, {30, 5}};
    const auto box = bbox_of_mask(pts);
    REQUIRE(box.has_value());
    CHECK(box->x_min == 10);
    CHECK(box->y_min == 5);
    CHECK(box->x_max == 31);
    CHECK(box->y_max == 21);

    CHECK_FALSE(bbox_of_mask({}).has_value());

    const std::vector<std::pair<int, int>> one{{7, 9}};
    const auto single = bbox_of_mask(one);
    REQUIRE(single.has_value());
    CHECK(single->x_max - single->x_min == 1);
    CHECK(single->y_max - single->y_min == 1);
}

TEST_CASE("blend with alpha zero reproduces the target frame") {
    Rng rng(401);
    Image8 frame(48, 48);
    for (int y = 0; y < 48; ++y)
        for (int x = 0; x < 48; ++x)
            frame.set(x, y, static_cast<std::uint8_t>(40 + 2 * x + y),
                      static_cast<std::uint8_t>(200 - 3 * y / 2),
                      static_cast<std::uint8_t>(30 + x + 2 * y));
    const Image8 original = frame;
    const RenderedFace rf = synthetic_patch(rng, 10, 12, 16, 16, true);

    BlendConfig cfg;
    cfg.alpha = 0.0;
    cfg.solver_tol = 1e-10;
    const BlendResult res = poisson_blend(frame, rf, cfg);
    CHECK_FALSE(res.solver_diverged);
    CHECK(frame.data == original.data);
}

TEST_CASE("blending a constant patch into an equal constant is a no-op") {
    Rng rng(402);
    Image8 frame(40, 40);
    for (auto& b : frame.data) b = 120;
    RenderedFace rf = synthetic_patch(rng, 8, 8, 12, 12, true);
    for (auto& c : rf.patch) c = {120, 120, 120};
    const BlendResult res = poisson_blend(frame, rf, BlendConfig{});
    CHECK_FALSE(res.solver_diverged);
    for (const auto& b : frame.data) CHECK(b == 120);
}

TEST_CASE("blend matches a direct sparse solve") {
    Rng rng(403);
    for (int trial = 0; trial < 12; ++trial) {
        Image8 frame = random_image(rng, 48, 48);
        const Image8 original = frame;
        const int bw = rng.uniform_int(6, 24), bh = rng.uniform_int(6, 24);
        const int bx = rng.uniform_int(0, 48 - bw), by = rng.uniform_int(0, 48 - bh);
        const RenderedFace rf = synthetic_patch(rng, bx, by, bw, bh, false);

        BlendConfig cfg;  // default alpha
        const auto coords = interior_mask_pixels(frame, rf);
        const BlendResult res = poisson_blend(frame, rf, cfg);
        if (coords.empty()) {
            CHECK(frame.data == original.data);
            continue;
        }
        CHECK_FALSE(res.solver_diverged);
        CHECK(res.final_residual < 1e-6);

        for (int c = 0; c < 3; ++c) {
            const auto exact = oracle_blend_channel(original, rf, cfg.alpha, c, coords);
            for (std::size_t i = 0; i < coords.size(); ++i) {
                const auto [fx, fy] = coords[i];
                const double got = frame.px(fx, fy)[c];
                const double want = std::clamp(exact[i], 0.0, 255.0);
                CHECK(std::abs(got - want) <= 0.51);
            }
        }

        // Pixels outside the unknown set are untouched.
        for (int y = 0; y < 48; ++y)
            for (int x = 0; x < 48; ++x) {
                const bool unknown =
                    std::find(coords.begin(), coords.end(), std::make_pair(x, y)) != coords.end();
                if (unknown) continue;
                for (int c = 0; c < 3; ++c) CHECK(frame.px(x, y)[c] == original.px(x, y)[c]);
            }
    }
}

TEST_CASE("border mask pixels are left alone") {
    Rng rng(404);
    Image8 frame = random_image(rng, 32, 32);
    const Image8 original = frame;
    // Patch overlapping the frame corner: border pixels are not unknowns.
    const RenderedFace rf = synthetic_patch(rng, 0, 0, 10, 10, true);
    poisson_blend(frame, rf, BlendConfig{});
    for (int x = 0; x < 32; ++x) {
        CHECK(frame.px(x, 0)[0] == original.px(x, 0)[0]);
        CHECK(frame.px(x, 31)[1] == original.px(x, 31)[1]);
    }
    for (int y = 0; y < 32; ++y) {
        CHECK(frame.px(0, y)[2] == original.px(0, y)[2]);
        CHECK(frame.px(31, y)[0] == original.px(31, y)[0]);
    }
}

TEST_CASE("starved solver falls back to a raw copy") {
    Rng rng(405);
    Image8 frame = random_image(rng, 32, 32);
    const Image8 original = frame;
    const RenderedFace rf = synthetic_patch(rng, 6, 6, 14, 14, true);
    BlendConfig cfg;
    cfg.solver_max_iters = 0;
    const BlendResult res = poisson_blend(frame, rf, cfg);
    CHECK(res.solver_diverged);
    const auto coords = interior_mask_pixels(original, rf);
    CHECK_FALSE(coords.empty());
    for (const auto& [fx, fy] : coords) {
        const std::size_t i =
            static_cast<std::size_t>(fy - static_cast<int>(rf.bbox->y_min)) * rf.bbox_width() +
            (fx - static_cast<int>(rf.bbox->x_min));
        for (int c = 0; c < 3; ++c) CHECK(frame.px(fx, fy)[c] == rf.patch[i][c]);
    }
}

TEST_CASE("rasterization and blending are deterministic") {
    const Camera cam = unit_camera();
    const FaceInstance face =
        tri_face(Vec3(-0.3, -0.2, 1.7), Vec3(0.4, -0.3, 2.2), Vec3(0.0, 0.4, 1.9));
    const Image8 tex = flat_texture(8, 8, 33, 66, 99);
    DepthFrame depth(100, 100);
    for (auto& v : depth.values) v = 2500;
    const RenderedFace a = rasterize_face(face, tex, cam, depth);
    const RenderedFace b = rasterize_face(face, tex, cam, depth);
    CHECK(a.mask == b.mask);
    CHECK(a.depth == b.depth);
    CHECK(a.mask_count() == b.mask_count());
    REQUIRE(a.bbox.has_value());
    REQUIRE(b.bbox.has_value());
    CHECK(a.bbox->x_min == b.bbox->x_min);
    CHECK(a.patch.size() == b.patch.size());
    for (std::size_t i = 0; i < a.patch.size(); ++i) CHECK(a.patch[i] == b.patch[i]);

    Rng rng(406);
    Image8 f1 = random_image(rng, 40, 40);
    Image8 f2 = f1;
    const RenderedFace rf = synthetic_patch(rng, 9, 9, 15, 15, false);
    poisson_blend(f1, rf, BlendConfig{});
    poisson_blend(f2, rf, BlendConfig{});
    CHECK(f1.data == f2.data);
}

TEST_CASE("render_scene fills background and writes metric depth") {
    const Camera cam = unit_camera();
    SceneMesh mesh;
    mesh.vertices = {Vec3(-0.3, -0.3, 2.0), Vec3(0.3, -0.3, 2.0), Vec3(0.0, 0.3, 2.0)};
    mesh.triangles = {{0, 1, 2}};
    mesh.color = {10, 200, 40};
    mesh.shaded = false;

    Image8 color;
    DepthFrame depth;
    render_scene(std::vector<SceneMesh>{mesh}, cam, Color3{7, 8, 9}, color, depth);
    REQUIRE(color.width == 100);
    REQUIRE(depth.height == 100);

    // Center pixel is covered; corners are background.
    CHECK(depth.at(50, 45) == 2000);
    CHECK(color.px(50, 45)[0] == 10);
    CHECK(color.px(50, 45)[1] == 200);
    CHECK(depth.at(0, 0) == DepthFrame::kMissing);
    CHECK(color.px(0, 0)[0] == 7);
    CHECK(color.px(0, 0)[2] == 9);

    // A nearer mesh wins the shared pixels.
    SceneMesh closer = mesh;
    for (auto& v : closer.vertices) v.z() = 1.0;
    closer.color = {250, 1, 2};
    render_scene(std::vector<SceneMesh>{mesh, closer}, cam, Color3{0, 0, 0}, color, depth);
    CHECK(depth.at(50, 45) == 1000);
    CHECK(color.px(50, 45)[0] == 250);

    // Hits never land on the missing sentinel.
    for (int y = 0; y < 100; ++y)
        for (int x = 0; x < 100; ++x)
            if (color.px(x, y)[0] != 0 || color.px(x, y)[1] != 0 || color.px(x, y)[2] != 0)
                CHECK(depth.at(x, y) != DepthFrame::kMissing);
}
