#include "mvanon/facemesh.hpp"

#include <fstream>
#include <set>

#include "mvanon/canonical_head.hpp"
#include "mvanon/render.hpp"
#include "mvanon/rng.hpp"
#include "support.hpp"
#include "vendor/doctest.h"

using namespace mvanon;
using testsupport::make_camera;
using testsupport::random_rotation;
using testsupport::TempDir;

namespace {

// The templated head posed upright at `head_center`, facing +z.
FaceInstance posed_face(const TemplateMesh& mesh, const Vec3& head_center, double scale = 1.0) {
    RigidTransform pose;
    pose.translation = head_center;
    return extract_face(mesh, pose, scale, 0, 0);
}

DepthFrame depth_of_face(const FaceInstance& face, const Camera& cam) {
    SceneMesh sm;
    sm.vertices = face.vertices;
    sm.triangles = face.triangles;
    Image8 color;
    DepthFrame depth;
    render_scene(std::vector<SceneMesh>{sm}, cam, Color3{0, 0, 0}, color, depth);
    return depth;
}

}  // namespace

TEST_CASE("canonical head satisfies its own contract") {
    const TemplateMesh mesh = build_canonical_head();
    CHECK_NOTHROW(mesh.validate());
    CHECK(mesh.vertices.size() == (canonical::kSegments + 1) * (canonical::kRings + 1));
    CHECK(mesh.probe_vertices.size() == 20);
    CHECK(mesh.face_submesh.size() == 77);

    // Landmarks sit exactly where the anchor math expects them.
    CHECK((mesh.vertices[mesh.landmarks.nose_tip] - canonical::nose_tip()).norm() < 1e-12);
    CHECK((mesh.vertices[mesh.landmarks.left_eye] - canonical::eye_center(false)).norm() < 1e-12);
    CHECK((mesh.vertices[mesh.landmarks.right_eye] - canonical::eye_center(true)).norm() < 1e-12);
    CHECK((mesh.vertices[mesh.landmarks.left_ear] - canonical::ear_center(false)).norm() < 1e-12);
    CHECK((mesh.vertices[mesh.landmarks.right_ear] - canonical::ear_center(true)).norm() < 1e-12);

    // Probes lie on the face patch.
    const std::set<int> face(mesh.face_submesh.begin(), mesh.face_submesh.end());
    for (int p : mesh.probe_vertices) CHECK(face.count(p) == 1);

    // The face patch faces +z: every submesh vertex has positive z.
    for (int v : mesh.face_submesh) CHECK(mesh.vertices[v].z() > 0.0);
}

TEST_CASE("template validation rejects broken meshes") {
    TemplateMesh mesh = build_canonical_head();

    TemplateMesh wrong_probes = mesh;
    wrong_probes.probe_vertices.pop_back();
    CHECK_THROWS_AS(wrong_probes.validate(), SpecInvalid);

    TemplateMesh stray_probe = mesh;
    stray_probe.probe_vertices[0] = 0;  // pole vertex, outside the face patch
    CHECK_THROWS_AS(stray_probe.validate(), SpecInvalid);

    TemplateMesh bad_tri = mesh;
    bad_tri.triangles[0] = {0, 0, 1};
    CHECK_THROWS_AS(bad_tri.validate(), SpecInvalid);

    TemplateMesh bad_uv = mesh;
    bad_uv.uvs[3] = Vec2(1.5, 0.0);
    CHECK_THROWS_AS(bad_uv.validate(), SpecInvalid);

    TemplateMesh bad_lm = mesh;
    bad_lm.landmarks.nose_tip = -1;
    CHECK_THROWS_AS(bad_lm.validate(), SpecInvalid);
}

TEST_CASE("face textures differ only under the mask") {
    const Image8 masked = build_face_texture(true);
    const Image8 open = build_face_texture(false);
    REQUIRE(masked.width == 256);
    REQUIRE(masked.height == 256);
    // Upper half (eyes, hair) is shared; lower half diverges.
    int diff_upper = 0, diff_lower = 0;
    for (int y = 0; y < 256; ++y)
        for (int x = 0; x < 256; ++x) {
            const bool same = std::equal(masked.px(x, y), masked.px(x, y) + 3, open.px(x, y));
            if (!same) (y < 128 ? diff_upper : diff_lower)++;
        }
    CHECK(diff_upper == 0);
    CHECK(diff_lower > 500);
}

TEST_CASE("template save/load roundtrip is exact") {
    TempDir dir("template_rt");
    const TemplateMesh mesh = build_canonical_head();
    const auto obj = (dir.path / "head.obj").string();
    const auto manifest = (dir.path / "head.json").string();
    save_template(mesh, obj, manifest);
    const TemplateMesh back = load_template(obj, manifest);

    REQUIRE(back.vertices.size() == mesh.vertices.size());
    for (std::size_t i = 0; i < mesh.vertices.size(); ++i)
        CHECK((back.vertices[i] - mesh.vertices[i]).norm() == 0.0);
    REQUIRE(back.uvs.size() == mesh.uvs.size());
    for (std::size_t i = 0; i < mesh.uvs.size(); ++i)
        CHECK((back.uvs[i] - mesh.uvs[i]).norm() == 0.0);
    CHECK(back.triangles == mesh.triangles);
    CHECK(back.face_submesh == mesh.face_submesh);
    CHECK(back.probe_vertices == mesh.probe_vertices);
    CHECK(back.landmarks.nose_tip == mesh.landmarks.nose_tip);
    CHECK(back.landmarks.left_ear == mesh.landmarks.left_ear);

    CHECK_THROWS_AS(load_template((dir.path / "missing.obj").string(), manifest), IoError);

    std::ofstream bad(dir.path / "bad.obj");
    bad << "v 1 2\n";
    bad.close();
    CHECK_THROWS_AS(load_template((dir.path / "bad.obj").string(), manifest), ParseError);
}

TEST_CASE("anchor_template identity, recovery and clamping") {
    const TemplateMesh mesh = build_canonical_head();
    Rng rng(307);

    Pose3D exact;
    const std::pair<int, int> pairs[] = {
        {kNose, mesh.landmarks.nose_tip},       {kLeftEye, mesh.landmarks.left_eye},
        {kRightEye, mesh.landmarks.right_eye},  {kLeftEar, mesh.landmarks.left_ear},
        {kRightEar, mesh.landmarks.right_ear},
    };
    for (const auto& [j, v] : pairs) {
        exact.joints[j] = mesh.vertices[v];
        exact.valid[j] = true;
    }
    const auto id = anchor_template(mesh, exact);
    CHECK(id.scale == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(rotation_angle(id.rotation) < 1e-7);
    CHECK(id.translation.norm() < 1e-9);

    SimilarityTransform truth;
    truth.scale = 0.9;
    truth.rotation = random_rotation(rng, 1.2);
    truth.translation = Vec3(0.4, 1.5, -0.3);
    Pose3D moved = exact;
    for (const auto& [j, v] : pairs) moved.joints[j] = truth.apply(mesh.vertices[v]);
    const auto got = anchor_template(mesh, moved);
    CHECK(got.scale == doctest::Approx(0.9).epsilon(1e-9));
    CHECK(rotation_distance(got.rotation, truth.rotation) < 1e-7);
    CHECK((got.translation - truth.translation).norm() < 1e-9);

    // Scale outside [0.8, 1.25] clamps but keeps the landmark centroid fixed.
    SimilarityTransform big = truth;
    big.scale = 1.6;
    Pose3D giant = exact;
    Vec3 mean_tpl = Vec3::Zero(), mean_world = Vec3::Zero();
    for (const auto& [j, v] : pairs) {
        giant.joints[j] = big.apply(mesh.vertices[v]);
        mean_tpl += mesh.vertices[v];
        mean_world += giant.joints[j];
    }
    mean_tpl /= 5.0;
    mean_world /= 5.0;
    const auto clamped = anchor_template(mesh, giant);
    CHECK(clamped.scale == 1.25);
    CHECK((clamped.apply(mean_tpl) - mean_world).norm() < 1e-9);

    Pose3D thin;
    thin.joints[kNose] = canonical::nose_tip();
    thin.joints[kLeftEye] = canonical::eye_center(false);
    thin.valid[kNose] = thin.valid[kLeftEye] = true;
    CHECK_THROWS_AS(anchor_template(mesh, thin), TooFewLandmarks);
}

TEST_CASE("extract_face reindexes the submesh and roundtrips") {
    const TemplateMesh mesh = build_canonical_head();
    RigidTransform pose;
    Rng rng(311);
    pose.rotation = random_rotation(rng, 0.8);
    pose.translation = Vec3(0.3, 1.6, 0.4);
    const double scale = 1.1;

    const FaceInstance face = extract_face(mesh, pose, scale, 7, 42);
    CHECK(face.person_id == 7);
    CHECK(face.frame_index == 42);
    CHECK(face.vertices.size() == mesh.face_submesh.size());
    CHECK(face.probe_points.size() == 20);

    // Inverse pose and scale reproduce the canonical submesh.
    const RigidTransform inv = pose.inverse();
    for (std::size_t i = 0; i < face.vertices.size(); ++i) {
        const Vec3 canon = inv.apply(face.vertices[i]) / scale;
        CHECK((canon - mesh.vertices[mesh.face_submesh[i]]).norm() < 1e-9);
    }

    // Triangles live entirely in submesh index space.
    CHECK_FALSE(face.triangles.empty());
    for (const auto& t : face.triangles)
        for (int i : t) {
            CHECK(i >= 0);
            CHECK(i < static_cast<int>(face.vertices.size()));
        }

    TemplateMesh no_face = mesh;
    no_face.face_submesh.clear();
    CHECK_THROWS_AS(extract_face(no_face, pose, 1.0, 0, 0), MissingFaceSubmesh);
}

TEST_CASE("check_visibility verdicts") {
    const TemplateMesh mesh = build_canonical_head();
    const Vec3 head(0, 1.6, 0);
    const FaceInstance face = posed_face(mesh, head);
    // Camera two meters in front of the face, on the face normal.
    const Camera cam = make_camera("c", head + Vec3(0, 0, 2.0), head);

    SUBCASE("depth rendered from the face itself is visible") {
        const DepthFrame depth = depth_of_face(face, cam);
        CHECK(check_visibility(face, cam, depth, 0.05, 0.5) == Visibility::visible);
    }

    SUBCASE("planar occluder at half distance occludes") {
        DepthFrame wall(cam.intrinsics.width, cam.intrinsics.height);
        for (auto& v : wall.values) v = 950;  // under half of the ~1.9 m face distance
        CHECK(check_visibility(face, cam, wall, 0.05, 0.5) == Visibility::occluded);
    }

    SUBCASE("holes everywhere give unknown_depth") {
        DepthFrame holes(cam.intrinsics.width, cam.intrinsics.height);
        CHECK(check_visibility(face, cam, holes, 0.05, 0.5) == Visibility::unknown_depth);
    }

    SUBCASE("probes outside every pixel give out_of_frame") {
        const Camera away = make_camera("c", head + Vec3(0, 0, 2.0), head + Vec3(0, 0, 4.0));
        DepthFrame depth(away.intrinsics.width, away.intrinsics.height);
        CHECK(check_visibility(face, away, depth, 0.05, 0.5) == Visibility::out_of_frame);
    }

    SUBCASE("verdict is monotone in tau") {
        // Perturbed scene depth: each probe pixel off by up to 4 cm.
        DepthFrame depth = depth_of_face(face, cam);
        Rng rng(313);
        for (auto& v : depth.values)
            if (v != DepthFrame::kMissing)
                v = static_cast<std::uint16_t>(v + rng.uniform_int(-40, 40));
        int prev_visible = -1;
        for (const double tau : {0.002, 0.01, 0.02, 0.05, 0.10}) {
            const int vis =
                check_visibility(face, cam, depth, tau, 0.5) == Visibility::visible ? 1 : 0;
            if (prev_visible >= 0) CHECK(vis >= prev_visible);
            prev_visible = vis;
        }
        CHECK(prev_visible == 1);  // tau far above the perturbation always agrees
    }
}

TEST_CASE("refine_alignment self-registration and fallback") {
    const TemplateMesh mesh = build_canonical_head();
    Rng rng(317);

    SimilarityTransform anchor;
    anchor.rotation = random_rotation(rng, 0.3);
    anchor.translation = Vec3(0.2, 1.5, 0.1);

    PointCloud scene;
    for (const Vec3& v : mesh.vertices) scene.points.push_back(anchor.apply(v));

    RegistrationConfig em, icp;
    icp.metric = RegistrationMetric::point_to_plane;

    SUBCASE("exact surface: refinement stays on the anchor") {
        const auto [pose, result] = refine_alignment(mesh, anchor, scene, 0.25, em, icp);
        CHECK(result.converged);
        CHECK(rotation_distance(pose.rotation, anchor.rotation) < deg_to_rad(0.5));
        CHECK((pose.translation - anchor.translation).norm() < 1e-3);
    }

    SUBCASE("one-centimeter offset is corrected") {
        const Vec3 shift(0.01, 0, 0);
        PointCloud shifted;
        for (const Vec3& p : scene.points) shifted.points.push_back(p + shift);
        const auto [pose, result] = refine_alignment(mesh, anchor, shifted, 0.25, em, icp);
        CHECK((pose.translation - (anchor.translation + shift)).norm() < 2e-3);
        CHECK(rotation_distance(pose.rotation, anchor.rotation) < deg_to_rad(1.0));
    }

    SUBCASE("empty crop falls back to the anchor") {
        PointCloud far;
        far.points.push_back(Vec3(50, 50, 50));
        const auto [pose, result] = refine_alignment(mesh, anchor, far, 0.25, em, icp);
        CHECK_FALSE(result.converged);
        CHECK(result.status == RegistrationStatus::no_correspondences);
        CHECK(rotation_distance(pose.rotation, anchor.rotation) == 0.0);
        CHECK((pose.translation - anchor.translation).norm() == 0.0);
    }
}

TEST_CASE("visibility to_string covers every verdict") {
    CHECK(to_string(Visibility::visible) == "visible");
    CHECK(to_string(Visibility::occluded) == "occluded");
    CHECK(to_string(Visibility::out_of_frame) == "out_of_frame");
    CHECK(to_string(Visibility::unknown_depth) == "unknown_depth");
}
