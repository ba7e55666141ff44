#pragma once

#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mvanon/facemesh.hpp"
#include "mvanon/geometry.hpp"
#include "mvanon/image.hpp"
#include "mvanon/pointcloud.hpp"

namespace mvanon {

struct RenderOptions {
    double tau = 0.05;        // per-pixel occlusion clip margin, m
    bool depth_clip = true;   // clip mesh pixels behind the sensor surface
    bool bilinear = true;     // texture filter (nearest otherwise)
    double z_near = 0.01;     // near plane, m
};

// Rasterization result in bbox-local storage. mask/patch/depth are dense
// rasters over the (tight, half-open) bbox; mask is 0/1.
struct RenderedFace {
    std::string camera_id;
    std::optional<BBox2D> bbox;
    std::vector<std::uint8_t> mask;
    std::vector<Color3> patch;
    std::vector<double> depth;
    double mean_depth = 0.0;
    bool degenerate_pose = false;  // every triangle behind the camera

    int bbox_width() const;
    int bbox_height() const;
    int mask_count() const;
    bool covers(int frame_x, int frame_y) const;
};

struct BlendConfig {
    double alpha = 0.725;
    int target_preblur = 0;  // odd kernel size; 0 disables
    double solver_tol = 1e-6;
    int solver_max_iters = 10000;
};

struct BlendResult {
    bool solver_diverged = false;  // fell back to a direct patch copy
    int iterations = 0;
    double final_residual = 0.0;
};

// Projects the face triangles with near-plane clipping, z-buffers them over
// the local bbox, samples the texture with perspective-correct uv, and drops
// pixels whose mesh depth exceeds scene depth + tau.
RenderedFace rasterize_face(const FaceInstance& face, const Image8& texture,
                            const Camera& camera, const DepthFrame& scene_depth,
                            const RenderOptions& opts = {});

std::optional<BBox2D> bbox_of_mask(std::span<const std::pair<int, int>> pixels);

// Solves the discrete Poisson equation over the mask interior per channel
// (Dirichlet boundary = frame pixels, guidance = alpha-mix of composite and
// frame gradients) and writes the result into `frame`. Mask pixels on the
// frame border are discarded first. On solver failure the patch is copied
// directly and the result reports it.
BlendResult poisson_blend(Image8& frame, const RenderedFace& rendered, const BlendConfig& cfg);

// World-frame triangle batch for whole-frame rendering. uvs, when present,
// are parallel to vertices and sample `texture`; otherwise the flat color
// applies. Shading is flat per-triangle headlight diffuse.
struct SceneMesh {
    std::vector<Vec3> vertices;
    std::vector<std::array<int, 3>> triangles;
    std::vector<Vec2> uvs;
    const Image8* texture = nullptr;
    Color3 color{180, 180, 180};
    bool shaded = true;
};

// Z-buffers the meshes over the full frame. color_out/depth_out are resized
// to the camera resolution; pixels no triangle covers get the background
// color and missing depth. Depth is written in millimeters (rounded), so a
// hit never lands on the missing-depth sentinel.
void render_scene(std::span<const SceneMesh> meshes, const Camera& camera,
                  const Color3& background, Image8& color_out, DepthFrame& depth_out,
                  double z_near = 0.01);

}  // namespace mvanon
