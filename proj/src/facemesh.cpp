#include "mvanon/facemesh.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "mvanon/canonical_head.hpp"
#include "mvanon/errors.hpp"
#include "mvanon/mathutil.hpp"

namespace mvanon {

using nlohmann::json;

void TemplateMesh::validate() const {
    const int n = static_cast<int>(vertices.size());
    if (n == 0) throw SpecInvalid("template has no vertices");
    if (uvs.size() != vertices.size()) throw SpecInvalid("template uv count mismatch");
    for (const Vec2& uv : uvs)
        if (uv.x() < 0 || uv.x() > 1 || uv.y() < 0 || uv.y() > 1)
            throw SpecInvalid("template uv out of [0,1]");
    for (const auto& t : triangles) {
        for (int i : t)
            if (i < 0 || i >= n) throw SpecInvalid("triangle index out of range");
        const Vec3 e1 = vertices[t[1]] - vertices[t[0]];
        const Vec3 e2 = vertices[t[2]] - vertices[t[0]];
        if (e1.cross(e2).norm() <= 1e-12) throw SpecInvalid("degenerate triangle");
    }
    const int lm[] = {landmarks.nose_tip, landmarks.left_eye, landmarks.right_eye,
                      landmarks.left_ear, landmarks.right_ear};
    for (int i : lm)
        if (i < 0 || i >= n) throw SpecInvalid("landmark index out of range");
    const std::set<int> face(face_submesh.begin(), face_submesh.end());
    for (int i : face_submesh)
        if (i < 0 || i >= n) throw SpecInvalid("face submesh index out of range");
    if (probe_vertices.size() != 20) throw SpecInvalid("expected exactly 20 probe vertices");
    for (int i : probe_vertices)
        if (!face.count(i)) throw SpecInvalid("probe vertex outside the face submesh");
}

std::string to_string(Visibility v) {
    switch (v) {
        case Visibility::visible: return "visible";
        case Visibility::occluded: return "occluded";
        case Visibility::out_of_frame: return "out_of_frame";
        case Visibility::unknown_depth: return "unknown_depth";
    }
    return "unknown";
}

TemplateMesh build_canonical_head() {
    using namespace canonical;
    TemplateMesh mesh;
    const int rings = kRings, segs = kSegments;
    const auto vid = [segs](int r, int s) { return r * (segs + 1) + s; };

    for (int r = 0; r <= rings; ++r) {
        const double theta = kPi * r / rings;
        for (int s = 0; s <= segs; ++s) {
            const double phi = 2.0 * kPi * s / segs - kPi;  // 0 at the face center
            const Vec3 dir(std::sin(theta) * std::sin(phi), std::cos(theta),
                           std::sin(theta) * std::cos(phi));
            Vec3 p(kSemiAxisX * dir.x(), kSemiAxisY * dir.y(), kSemiAxisZ * dir.z());
            // Nose: full bump on the center vertex, a shoulder on its 8 neighbors.
            const int dr = std::abs(r - rings / 2), ds = std::abs(s - segs / 2);
            if (dr <= 1 && ds <= 1) {
                const double amount = (dr == 0 && ds == 0) ? 1.0 : 0.35;
                p += dir * (kNoseBump * amount);
            }
            mesh.vertices.push_back(p);
            mesh.uvs.emplace_back(static_cast<double>(s) / segs, static_cast<double>(r) / rings);
        }
    }
    for (int r = 0; r < rings; ++r) {
        for (int s = 0; s < segs; ++s) {
            const int a = vid(r, s), b = vid(r + 1, s), c = vid(r + 1, s + 1), d = vid(r, s + 1);
            if (r < rings - 1) mesh.triangles.push_back({a, b, c});  // b,c collapse at the south pole
            if (r > 0) mesh.triangles.push_back({a, c, d});          // a,d collapse at the north pole
        }
    }

    mesh.landmarks.nose_tip = vid(rings / 2, segs / 2);
    mesh.landmarks.left_eye = vid(rings / 2, segs / 2 - 2);
    mesh.landmarks.right_eye = vid(rings / 2, segs / 2 + 2);
    mesh.landmarks.left_ear = vid(rings / 2, segs / 4);
    mesh.landmarks.right_ear = vid(rings / 2, 3 * segs / 4);

    for (int r = 5; r <= 11; ++r)
        for (int s = 11; s <= 21; ++s) mesh.face_submesh.push_back(vid(r, s));
    for (int r : {6, 7, 8, 9, 10})
        for (int s : {13, 15, 17, 19}) mesh.probe_vertices.push_back(vid(r, s));

    mesh.validate();
    return mesh;
}

namespace {

bool in_ellipse(double x, double y, double cx, double cy, double rx, double ry) {
    const double dx = (x - cx) / rx, dy = (y - cy) / ry;
    return dx * dx + dy * dy <= 1.0;
}

}  // namespace

Image8 build_face_texture(bool masked) {
    constexpr int kSize = 256;
    Image8 img(kSize, kSize);
    for (int py = 0; py < kSize; ++py) {
        for (int px = 0; px < kSize; ++px) {
            const double u = (px + 0.5) / kSize;
            const double v = (py + 0.5) / kSize;
            std::uint8_t r = 222, g = 188, b = 153;  // skin

            const bool hair = v < 0.20 || (std::abs(u - 0.5) > 0.42 && v < 0.72);
            if (hair) { r = 62; g = 44; b = 32; }

            for (const double ue : {0.4375, 0.5625}) {
                if (in_ellipse(u, v, ue, 0.50, 0.024, 0.013)) { r = 245; g = 245; b = 245; }
                if (in_ellipse(u, v, ue, 0.50, 0.010, 0.010)) { r = 70; g = 90; b = 120; }
                if (in_ellipse(u, v, ue, 0.50, 0.004, 0.005)) { r = 15; g = 15; b = 18; }
                if (v > 0.462 && v < 0.474 && std::abs(u - ue) < 0.026) { r = 75; g = 55; b = 40; }
            }
            if (in_ellipse(u, v, 0.5, 0.545, 0.013, 0.022)) { r = 205; g = 165; b = 132; }  // nose

            if (masked) {
                const double half = 0.150 - 0.35 * std::max(0.0, v - 0.52);
                if (v >= 0.52 && v <= 0.71 && std::abs(u - 0.5) <= half) {
                    r = 132; g = 170; b = 202;
                    if (v > 0.545 && v < 0.555) { r = 118; g = 155; b = 188; }  // pleat
                    if (v > 0.60 && v < 0.61) { r = 118; g = 155; b = 188; }
                }
            } else {
                if (in_ellipse(u, v, 0.5, 0.615, 0.050, 0.014)) { r = 150; g = 70; b = 70; }
            }
            img.set(px, py, r, g, b);
        }
    }
    return img;
}

void save_template(const TemplateMesh& mesh, const std::string& obj_path,
                   const std::string& manifest_path) {
    std::ofstream obj(obj_path);
    if (!obj) throw IoError("cannot write " + obj_path);
    char buf[128];
    for (const Vec3& v : mesh.vertices) {
        std::snprintf(buf, sizeof buf, "v %.17g %.17g %.17g\n", v.x(), v.y(), v.z());
        obj << buf;
    }
    for (const Vec2& uv : mesh.uvs) {
        std::snprintf(buf, sizeof buf, "vt %.17g %.17g\n", uv.x(), uv.y());
        obj << buf;
    }
    for (const auto& t : mesh.triangles)
        obj << "f " << t[0] + 1 << "/" << t[0] + 1 << " " << t[1] + 1 << "/" << t[1] + 1 << " "
            << t[2] + 1 << "/" << t[2] + 1 << "\n";
    if (!obj.good()) throw IoError("short write to " + obj_path);

    json manifest;
    manifest["landmarks"] = {{"nose_tip", mesh.landmarks.nose_tip},
                             {"left_eye", mesh.landmarks.left_eye},
                             {"right_eye", mesh.landmarks.right_eye},
                             {"left_ear", mesh.landmarks.left_ear},
                             {"right_ear", mesh.landmarks.right_ear}};
    manifest["face_submesh"] = mesh.face_submesh;
    manifest["probe_vertices"] = mesh.probe_vertices;
    std::ofstream mf(manifest_path);
    if (!mf) throw IoError("cannot write " + manifest_path);
    mf << manifest.dump(2) << "\n";
}

TemplateMesh load_template(const std::string& obj_path, const std::string& manifest_path) {
    std::ifstream obj(obj_path);
    if (!obj) throw IoError("cannot read " + obj_path);
    TemplateMesh mesh;
    std::string line;
    int lineno = 0;
    while (std::getline(obj, line)) {
        ++lineno;
        std::istringstream ss(line);
        std::string tag;
        ss >> tag;
        if (tag == "v") {
            Vec3 v;
            if (!(ss >> v.x() >> v.y() >> v.z()))
                throw ParseError(obj_path + ":" + std::to_string(lineno) + ": bad vertex");
            mesh.vertices.push_back(v);
        } else if (tag == "vt") {
            Vec2 uv;
            if (!(ss >> uv.x() >> uv.y()))
                throw ParseError(obj_path + ":" + std::to_string(lineno) + ": bad uv");
            mesh.uvs.push_back(uv);
        } else if (tag == "f") {
            std::array<int, 3> tri{};
            for (int i = 0; i < 3; ++i) {
                std::string corner;
                if (!(ss >> corner))
                    throw ParseError(obj_path + ":" + std::to_string(lineno) + ": bad face");
                tri[i] = std::stoi(corner.substr(0, corner.find('/'))) - 1;
            }
            mesh.triangles.push_back(tri);
        }
    }

    std::ifstream mf(manifest_path);
    if (!mf) throw IoError("cannot read " + manifest_path);
    json manifest;
    try {
        manifest = json::parse(mf);
    } catch (const json::exception& e) {
        throw ParseError(manifest_path + ": " + e.what());
    }
    try {
        const auto& lm = manifest.at("landmarks");
        mesh.landmarks.nose_tip = lm.at("nose_tip").get<int>();
        mesh.landmarks.left_eye = lm.at("left_eye").get<int>();
        mesh.landmarks.right_eye = lm.at("right_eye").get<int>();
        mesh.landmarks.left_ear = lm.at("left_ear").get<int>();
        mesh.landmarks.right_ear = lm.at("right_ear").get<int>();
        mesh.face_submesh = manifest.at("face_submesh").get<std::vector<int>>();
        mesh.probe_vertices = manifest.at("probe_vertices").get<std::vector<int>>();
    } catch (const json::exception& e) {
        throw ParseError(manifest_path + ": " + e.what());
    }
    mesh.validate();
    return mesh;
}

SimilarityTransform anchor_template(const TemplateMesh& mesh, const Pose3D& pose) {
    const std::pair<int, int> pairs[] = {
        {kNose, mesh.landmarks.nose_tip},   {kLeftEye, mesh.landmarks.left_eye},
        {kRightEye, mesh.landmarks.right_eye}, {kLeftEar, mesh.landmarks.left_ear},
        {kRightEar, mesh.landmarks.right_ear},
    };
    std::vector<Vec3> tpl, world;
    for (const auto& [joint, vertex] : pairs) {
        if (!pose.valid[joint]) continue;
        tpl.push_back(mesh.vertices[vertex]);
        world.push_back(pose.joints[joint]);
    }
    if (tpl.size() < 3) throw TooFewLandmarks();
    SimilarityTransform sim = umeyama_align(tpl, world, /*with_scale=*/true);
    const double clamped = std::clamp(sim.scale, 0.8, 1.25);
    if (clamped != sim.scale) {
        // Re-derive the translation so the landmark centroids still coincide.
        Vec3 mean_t = Vec3::Zero(), mean_w = Vec3::Zero();
        for (std::size_t i = 0; i < tpl.size(); ++i) {
            mean_t += tpl[i];
            mean_w += world[i];
        }
        mean_t /= static_cast<double>(tpl.size());
        mean_w /= static_cast<double>(world.size());
        sim.scale = clamped;
        sim.translation = mean_w - clamped * (sim.rotation * mean_t);
    }
    return sim;
}

std::pair<RigidTransform, RegistrationResult> refine_alignment(
    const TemplateMesh& mesh, const SimilarityTransform& anchor, const PointCloud& scene,
    double crop_radius, const RegistrationConfig& em_cfg, const RegistrationConfig& icp_cfg) {
    RegistrationResult fallback;
    fallback.pose = anchor.rigid();
    fallback.converged = false;
    fallback.status = RegistrationStatus::no_correspondences;

    const PointCloud crop = crop_sphere(scene, anchor.translation, crop_radius);
    if (crop.empty()) return {anchor.rigid(), fallback};

    PointCloud source;
    source.points.reserve(mesh.vertices.size());
    for (const Vec3& v : mesh.vertices) source.points.push_back(anchor.scale * v);

    const SpatialIndex crop_index(crop);
    RegistrationResult em = filterreg_rigid(source, crop, crop_index, anchor.rigid(), em_cfg);
    if (em.status == RegistrationStatus::no_correspondences) return {anchor.rigid(), fallback};

    RegistrationResult fine;
    if (icp_cfg.metric == RegistrationMetric::point_to_plane &&
        crop.size() >= 12 && !crop.has_normals()) {
        const PointCloud with_normals = estimate_normals(crop, 12, anchor.translation);
        fine = icp_rigid(source, with_normals, crop_index, em.pose, icp_cfg);
    } else if (icp_cfg.metric == RegistrationMetric::point_to_plane && !crop.has_normals()) {
        RegistrationConfig p2p = icp_cfg;  // crop too thin for normal estimation
        p2p.metric = RegistrationMetric::point_to_point;
        fine = icp_rigid(source, crop, crop_index, em.pose, p2p);
    } else {
        fine = icp_rigid(source, crop, crop_index, em.pose, icp_cfg);
    }

    const bool sane =
        (fine.pose.translation - anchor.translation).norm() <= crop_radius;
    if (!fine.converged || !sane) {
        fallback.final_residual = fine.final_residual;
        fallback.status = fine.status;
        return {anchor.rigid(), fallback};
    }
    return {fine.pose, fine};
}

FaceInstance extract_face(const TemplateMesh& mesh, const RigidTransform& pose, double scale,
                          int person_id, int frame_index) {
    if (mesh.face_submesh.empty()) throw MissingFaceSubmesh();
    FaceInstance face;
    face.person_id = person_id;
    face.frame_index = frame_index;
    face.world_pose = pose;
    face.scale = scale;

    std::vector<int> remap(mesh.vertices.size(), -1);
    for (std::size_t i = 0; i < mesh.face_submesh.size(); ++i) {
        const int v = mesh.face_submesh[i];
        remap[v] = static_cast<int>(i);
        face.vertices.push_back(pose.apply(scale * mesh.vertices[v]));
        face.uvs.push_back(mesh.uvs[v]);
    }
    for (const auto& t : mesh.triangles) {
        if (remap[t[0]] < 0 || remap[t[1]] < 0 || remap[t[2]] < 0) continue;
        face.triangles.push_back({remap[t[0]], remap[t[1]], remap[t[2]]});
    }
    for (int v : mesh.probe_vertices)
        face.probe_points.push_back(pose.apply(scale * mesh.vertices[v]));
    return face;
}

Visibility check_visibility(const FaceInstance& face, const Camera& camera,
                            const DepthFrame& depth, double tau, double quorum) {
    int in_frame = 0, with_depth = 0, agree = 0;
    for (const Vec3& probe : face.probe_points) {
        const auto proj = try_project(camera.intrinsics, camera.camera_from_world(), probe);
        if (!proj) continue;
        const int px = static_cast<int>(std::lround(proj->pixel.x()));
        const int py = static_cast<int>(std::lround(proj->pixel.y()));
        if (!depth.in_bounds(px, py)) continue;
        ++in_frame;
        const auto z = depth.depth_m(px, py);
        if (!z) continue;
        ++with_depth;
        const Vec3 measured = backproject(camera, proj->pixel, *z);
        if ((measured - probe).norm() <= tau) ++agree;
    }
    if (in_frame == 0) return Visibility::out_of_frame;
    if (with_depth == 0) return Visibility::unknown_depth;
    return static_cast<double>(agree) / with_depth >= quorum ? Visibility::visible
                                                            : Visibility::occluded;
}

}  // namespace mvanon
