#include "mvanon/render.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>

#include "mvanon/errors.hpp"

namespace mvanon {

int RenderedFace::bbox_width() const {
    return bbox ? static_cast<int>(bbox->x_max - bbox->x_min) : 0;
}
int RenderedFace::bbox_height() const {
    return bbox ? static_cast<int>(bbox->y_max - bbox->y_min) : 0;
}
int RenderedFace::mask_count() const {
    return static_cast<int>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
}
bool RenderedFace::covers(int frame_x, int frame_y) const {
    if (!bbox) return false;
    const int lx = frame_x - static_cast<int>(bbox->x_min);
    const int ly = frame_y - static_cast<int>(bbox->y_min);
    if (lx < 0 || ly < 0 || lx >= bbox_width() || ly >= bbox_height()) return false;
    return mask[static_cast<std::size_t>(ly) * bbox_width() + lx] != 0;
}

namespace {

struct ClipVtx {
    Vec3 p;   // camera space
    Vec2 uv;
};

// Sutherland-Hodgman against the plane z = z_near.
int clip_near(const ClipVtx in[3], double z_near, ClipVtx out[4]) {
    int n = 0;
    for (int i = 0; i < 3; ++i) {
        const ClipVtx& a = in[i];
        const ClipVtx& b = in[(i + 1) % 3];
        const bool a_in = a.p.z() >= z_near;
        const bool b_in = b.p.z() >= z_near;
        if (a_in) out[n++] = a;
        if (a_in != b_in) {
            const double t = (z_near - a.p.z()) / (b.p.z() - a.p.z());
            out[n++] = {a.p + t * (b.p - a.p), a.uv + t * (b.uv - a.uv)};
        }
    }
    return n;
}

struct RasterVtx {
    double sx, sy;
    double inv_z;
    double u_z, v_z;  // uv pre-divided by z
};

double edge(const RasterVtx& a, const RasterVtx& b, double px, double py) {
    return (b.sx - a.sx) * (py - a.sy) - (b.sy - a.sy) * (px - a.sx);
}

}  // namespace

RenderedFace rasterize_face(const FaceInstance& face, const Image8& texture,
                            const Camera& camera, const DepthFrame& scene_depth,
                            const RenderOptions& opts) {
    RenderedFace out;
    out.camera_id = camera.id;
    if (face.triangles.empty()) return out;

    const RigidTransform cam_from_world = camera.camera_from_world();
    std::vector<Vec3> cam_pts(face.vertices.size());
    bool any_front = false;
    for (std::size_t i = 0; i < face.vertices.size(); ++i) {
        cam_pts[i] = cam_from_world.apply(face.vertices[i]);
        any_front |= cam_pts[i].z() >= opts.z_near;
    }
    if (!any_front) {
        out.degenerate_pose = true;
        return out;
    }

    const CameraIntrinsics& k = camera.intrinsics;
    const auto to_raster = [&](const ClipVtx& v) {
        RasterVtx r;
        r.sx = k.fx * v.p.x() / v.p.z() + k.cx;
        r.sy = k.fy * v.p.y() / v.p.z() + k.cy;
        r.inv_z = 1.0 / v.p.z();
        r.u_z = v.uv.x() * r.inv_z;
        r.v_z = v.uv.y() * r.inv_z;
        return r;
    };

    std::vector<std::array<RasterVtx, 3>> tris;
    double min_x = 1e30, min_y = 1e30, max_x = -1e30, max_y = -1e30;
    for (const auto& t : face.triangles) {
        const ClipVtx in[3] = {{cam_pts[t[0]], face.uvs[t[0]]},
                               {cam_pts[t[1]], face.uvs[t[1]]},
                               {cam_pts[t[2]], face.uvs[t[2]]}};
        ClipVtx poly[4];
        const int n = clip_near(in, opts.z_near, poly);
        for (int i = 2; i < n; ++i) {
            const std::array<RasterVtx, 3> tri = {to_raster(poly[0]), to_raster(poly[i - 1]),
                                                  to_raster(poly[i])};
            for (const RasterVtx& v : tri) {
                min_x = std::min(min_x, v.sx);
                min_y = std::min(min_y, v.sy);
                max_x = std::max(max_x, v.sx);
                max_y = std::max(max_y, v.sy);
            }
            tris.push_back(tri);
        }
    }
    if (tris.empty()) return out;

    const int x0 = std::max(0, static_cast<int>(std::floor(min_x)));
    const int y0 = std::max(0, static_cast<int>(std::floor(min_y)));
    const int x1 = std::min(k.width, static_cast<int>(std::ceil(max_x)) + 1);
    const int y1 = std::min(k.height, static_cast<int>(std::ceil(max_y)) + 1);
    if (x0 >= x1 || y0 >= y1) return out;
    const int w = x1 - x0, h = y1 - y0;

    std::vector<double> zbuf(static_cast<std::size_t>(w) * h, 0.0);  // stores 1/z, larger wins
    std::vector<double> ubuf(zbuf.size()), vbuf(zbuf.size());
    for (const auto& tri : tris) {
        const double area = edge(tri[0], tri[1], tri[2].sx, tri[2].sy);
        if (area == 0.0) continue;
        const int tx0 = std::max(
            x0, static_cast<int>(std::floor(std::min({tri[0].sx, tri[1].sx, tri[2].sx}))));
        const int ty0 = std::max(
            y0, static_cast<int>(std::floor(std::min({tri[0].sy, tri[1].sy, tri[2].sy}))));
        const int tx1 = std::min(
            x1, static_cast<int>(std::ceil(std::max({tri[0].sx, tri[1].sx, tri[2].sx}))) + 1);
        const int ty1 = std::min(
            y1, static_cast<int>(std::ceil(std::max({tri[0].sy, tri[1].sy, tri[2].sy}))) + 1);
        for (int y = ty0; y < ty1; ++y) {
            for (int x = tx0; x < tx1; ++x) {
                const double px = x + 0.5, py = y + 0.5;
                const double w0 = edge(tri[1], tri[2], px, py);
                const double w1 = edge(tri[2], tri[0], px, py);
                const double w2 = edge(tri[0], tri[1], px, py);
                const bool inside = (w0 >= 0 && w1 >= 0 && w2 >= 0) ||
                                    (w0 <= 0 && w1 <= 0 && w2 <= 0);
                if (!inside) continue;
                const double b0 = w0 / area, b1 = w1 / area, b2 = w2 / area;
                const double inv_z =
                    b0 * tri[0].inv_z + b1 * tri[1].inv_z + b2 * tri[2].inv_z;
                if (inv_z <= 0) continue;
                const std::size_t idx = static_cast<std::size_t>(y - y0) * w + (x - x0);
                if (inv_z <= zbuf[idx]) continue;
                zbuf[idx] = inv_z;
                ubuf[idx] = (b0 * tri[0].u_z + b1 * tri[1].u_z + b2 * tri[2].u_z) / inv_z;
                vbuf[idx] = (b0 * tri[0].v_z + b1 * tri[1].v_z + b2 * tri[2].v_z) / inv_z;
            }
        }
    }

    // Occlusion clip against the sensor surface, then the tight bbox.
    std::vector<std::pair<int, int>> kept;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const std::size_t idx = static_cast<std::size_t>(y) * w + x;
            if (zbuf[idx] <= 0) continue;
            if (opts.depth_clip) {
                const auto scene_z = scene_depth.depth_m(x0 + x, y0 + y);
                if (scene_z && 1.0 / zbuf[idx] > *scene_z + opts.tau) continue;
            }
            kept.emplace_back(x0 + x, y0 + y);
        }
    }
    if (kept.empty()) return out;
    out.bbox = bbox_of_mask(kept);
    const int bw = out.bbox_width(), bh = out.bbox_height();
    out.mask.assign(static_cast<std::size_t>(bw) * bh, 0);
    out.patch.assign(out.mask.size(), Color3{0, 0, 0});
    out.depth.assign(out.mask.size(), 0.0);
    double depth_sum = 0.0;
    for (const auto& [fx, fy] : kept) {
        const std::size_t src = static_cast<std::size_t>(fy - y0) * w + (fx - x0);
        const std::size_t dst = static_cast<std::size_t>(fy - static_cast<int>(out.bbox->y_min)) * bw +
                                (fx - static_cast<int>(out.bbox->x_min));
        out.mask[dst] = 1;
        const double z = 1.0 / zbuf[src];
        out.depth[dst] = z;
        depth_sum += z;
        const double tx = std::clamp(ubuf[src], 0.0, 1.0) * (texture.width - 1);
        const double ty = std::clamp(vbuf[src], 0.0, 1.0) * (texture.height - 1);
        if (opts.bilinear) {
            const auto c = sample_bilinear(texture, tx, ty);
            out.patch[dst] = {static_cast<std::uint8_t>(std::lround(c[0])),
                              static_cast<std::uint8_t>(std::lround(c[1])),
                              static_cast<std::uint8_t>(std::lround(c[2]))};
        } else {
            const int ix = std::clamp(static_cast<int>(std::lround(tx)), 0, texture.width - 1);
            const int iy = std::clamp(static_cast<int>(std::lround(ty)), 0, texture.height - 1);
            const auto* p = texture.px(ix, iy);
            out.patch[dst] = {p[0], p[1], p[2]};
        }
    }
    out.mean_depth = depth_sum / static_cast<double>(kept.size());
    return out;
}

std::optional<BBox2D> bbox_of_mask(std::span<const std::pair<int, int>> pixels) {
    if (pixels.empty()) return std::nullopt;
    int min_x = pixels[0].first, max_x = min_x;
    int min_y = pixels[0].second, max_y = min_y;
    for (const auto& [x, y] : pixels) {
        min_x = std::min(min_x, x);
        max_x = std::max(max_x, x);
        min_y = std::min(min_y, y);
        max_y = std::max(max_y, y);
    }
    return BBox2D{static_cast<double>(min_x), static_cast<double>(min_y),
                  static_cast<double>(max_x + 1), static_cast<double>(max_y + 1)};
}

namespace {

// Conjugate Residual on the SPD Poisson system: minimizes the l2 residual
// over the Krylov subspace, so the residual norm never increases.
struct CrOutcome {
    bool converged = false;
    int iterations = 0;
    double relative_residual = 0.0;
};

CrOutcome conjugate_residual(const std::function<void(const std::vector<double>&, std::vector<double>&)>& apply_a,
                             const std::vector<double>& b, std::vector<double>& x, double tol,
                             int max_iters) {
    const std::size_t n = b.size();
    const auto dot = [n](const std::vector<double>& u, const std::vector<double>& v) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += u[i] * v[i];
        return s;
    };
    const double b_norm = std::sqrt(dot(b, b));
    CrOutcome outcome;
    if (b_norm == 0.0) {
        std::fill(x.begin(), x.end(), 0.0);
        outcome.converged = true;
        return outcome;
    }
    std::vector<double> r(n), ar(n), p(n), ap(n), tmp(n);
    apply_a(x, tmp);
    for (std::size_t i = 0; i < n; ++i) r[i] = b[i] - tmp[i];
    apply_a(r, ar);
    p = r;
    ap = ar;
    double r_ar = dot(r, ar);
    double r_norm = std::sqrt(dot(r, r));
    for (int it = 0; it < max_iters && r_norm > tol * b_norm; ++it) {
        const double ap_ap = dot(ap, ap);
        if (ap_ap == 0.0 || r_ar == 0.0) break;
        const double alpha = r_ar / ap_ap;
        for (std::size_t i = 0; i < n; ++i) {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        apply_a(r, ar);
        const double r_ar_next = dot(r, ar);
        const double beta = r_ar_next / r_ar;
        r_ar = r_ar_next;
        for (std::size_t i = 0; i < n; ++i) {
            p[i] = r[i] + beta * p[i];
            ap[i] = ar[i] + beta * ap[i];
        }
        r_norm = std::sqrt(dot(r, r));
        outcome.iterations = it + 1;
    }
    outcome.relative_residual = r_norm / b_norm;
    outcome.converged = r_norm <= tol * b_norm;
    return outcome;
}

}  // namespace

BlendResult poisson_blend(Image8& frame, const RenderedFace& rendered, const BlendConfig& cfg) {
    BlendResult result;
    if (!rendered.bbox) return result;
    const int bx = static_cast<int>(rendered.bbox->x_min);
    const int by = static_cast<int>(rendered.bbox->y_min);
    const int bw = rendered.bbox_width(), bh = rendered.bbox_height();

    // Unknowns: mask pixels with all four neighbors inside the frame.
    std::vector<std::pair<int, int>> coords;
    std::vector<int> index(static_cast<std::size_t>(bw) * bh, -1);
    for (int y = 0; y < bh; ++y)
        for (int x = 0; x < bw; ++x) {
            if (!rendered.mask[static_cast<std::size_t>(y) * bw + x]) continue;
            const int fx = bx + x, fy = by + y;
            if (fx < 1 || fy < 1 || fx >= frame.width - 1 || fy >= frame.height - 1) continue;
            index[static_cast<std::size_t>(y) * bw + x] = static_cast<int>(coords.size());
            coords.emplace_back(fx, fy);
        }
    const std::size_t n = coords.size();
    if (n == 0) return result;

    const auto mask_at = [&](int fx, int fy) { return rendered.covers(fx, fy); };
    const auto patch_at = [&](int fx, int fy, int c) {
        const std::size_t i =
            static_cast<std::size_t>(fy - by) * bw + (fx - bx);
        return static_cast<double>(rendered.patch[i][c]);
    };
    const auto composite_at = [&](int fx, int fy, int c) {
        return mask_at(fx, fy) ? patch_at(fx, fy, c)
                               : static_cast<double>(frame.px(fx, fy)[c]);
    };

    // Optionally smooth the frame copy used for the background-gradient term.
    Image8 target_grad_src;
    const Image8* tg = &frame;
    if (cfg.target_preblur >= 3) {
        target_grad_src = frame;
        const int pad = cfg.target_preblur;
        blur_rect(target_grad_src,
                  BBox2D{static_cast<double>(bx - pad), static_cast<double>(by - pad),
                         static_cast<double>(bx + bw + pad), static_cast<double>(by + bh + pad)},
                  cfg.target_preblur);
        tg = &target_grad_src;
    }

    constexpr int dx[] = {1, -1, 0, 0};
    constexpr int dy[] = {0, 0, 1, -1};
    const auto apply_a = [&](const std::vector<double>& v, std::vector<double>& out) {
        for (std::size_t i = 0; i < n; ++i) {
            const auto [fx, fy] = coords[i];
            double acc = 4.0 * v[i];
            for (int d = 0; d < 4; ++d) {
                const int qx = fx + dx[d] - bx, qy = fy + dy[d] - by;
                if (qx < 0 || qy < 0 || qx >= bw || qy >= bh) continue;
                const int j = index[static_cast<std::size_t>(qy) * bw + qx];
                if (j >= 0) acc -= v[j];
            }
            out[i] = acc;
        }
    };

    std::array<std::vector<double>, 3> solution;
    int max_iters = 0;
    double worst_residual = 0.0;
    bool diverged = false;
    for (int c = 0; c < 3 && !diverged; ++c) {
        std::vector<double> b(n), x(n);
        for (std::size_t i = 0; i < n; ++i) {
            const auto [fx, fy] = coords[i];
            double rhs = 0.0;
            for (int d = 0; d < 4; ++d) {
                const int qfx = fx + dx[d], qfy = fy + dy[d];
                rhs += cfg.alpha * (composite_at(fx, fy, c) - composite_at(qfx, qfy, c));
                rhs += (1.0 - cfg.alpha) *
                       (static_cast<double>(tg->px(fx, fy)[c]) -
                        static_cast<double>(tg->px(qfx, qfy)[c]));
                const int qx = qfx - bx, qy = qfy - by;
                const bool unknown = qx >= 0 && qy >= 0 && qx < bw && qy < bh &&
                                     index[static_cast<std::size_t>(qy) * bw + qx] >= 0;
                if (!unknown) rhs += static_cast<double>(frame.px(qfx, qfy)[c]);
            }
            b[i] = rhs;
            x[i] = patch_at(fx, fy, c);
        }
        const CrOutcome cr = conjugate_residual(apply_a, b, x, cfg.solver_tol, cfg.solver_max_iters);
        max_iters = std::max(max_iters, cr.iterations);
        worst_residual = std::max(worst_residual, cr.relative_residual);
        if (!cr.converged) diverged = true;
        solution[c] = std::move(x);
    }

    result.iterations = max_iters;
    result.final_residual = worst_residual;
    if (diverged) {
        result.solver_diverged = true;
        for (std::size_t i = 0; i < n; ++i) {
            const auto [fx, fy] = coords[i];
            frame.set(fx, fy, static_cast<std::uint8_t>(patch_at(fx, fy, 0)),
                      static_cast<std::uint8_t>(patch_at(fx, fy, 1)),
                      static_cast<std::uint8_t>(patch_at(fx, fy, 2)));
        }
        return result;
    }
    for (std::size_t i = 0; i < n; ++i) {
        const auto [fx, fy] = coords[i];
        const auto quant = [&](int c) {
            return static_cast<std::uint8_t>(
                std::clamp(std::lround(solution[c][i]), 0L, 255L));
        };
        frame.set(fx, fy, quant(0), quant(1), quant(2));
    }
    return result;
}

void render_scene(std::span<const SceneMesh> meshes, const Camera& camera,
                  const Color3& background, Image8& color_out, DepthFrame& depth_out,
                  double z_near) {
    const CameraIntrinsics& k = camera.intrinsics;
    color_out = Image8(k.width, k.height);
    for (int y = 0; y < k.height; ++y)
        for (int x = 0; x < k.width; ++x)
            color_out.set(x, y, background[0], background[1], background[2]);
    depth_out = DepthFrame(k.width, k.height);

    std::vector<double> zbuf(static_cast<std::size_t>(k.width) * k.height, 0.0);  // 1/z
    const RigidTransform cam_from_world = camera.camera_from_world();
    const auto to_raster = [&](const ClipVtx& v) {
        RasterVtx r;
        r.sx = k.fx * v.p.x() / v.p.z() + k.cx;
        r.sy = k.fy * v.p.y() / v.p.z() + k.cy;
        r.inv_z = 1.0 / v.p.z();
        r.u_z = v.uv.x() * r.inv_z;
        r.v_z = v.uv.y() * r.inv_z;
        return r;
    };

    for (const SceneMesh& mesh : meshes) {
        const bool textured = mesh.texture && !mesh.uvs.empty();
        std::vector<Vec3> cam_pts(mesh.vertices.size());
        for (std::size_t i = 0; i < mesh.vertices.size(); ++i)
            cam_pts[i] = cam_from_world.apply(mesh.vertices[i]);

        for (const auto& t : mesh.triangles) {
            const Vec2 zero = Vec2::Zero();
            const ClipVtx in[3] = {
                {cam_pts[t[0]], textured ? mesh.uvs[t[0]] : zero},
                {cam_pts[t[1]], textured ? mesh.uvs[t[1]] : zero},
                {cam_pts[t[2]], textured ? mesh.uvs[t[2]] : zero}};

            double shade = 1.0;
            if (mesh.shaded) {
                const Vec3 n = (in[1].p - in[0].p).cross(in[2].p - in[0].p);
                const Vec3 centroid = (in[0].p + in[1].p + in[2].p) / 3.0;
                const double nn = n.norm() * centroid.norm();
                // Orientation-independent headlight term.
                shade = nn > 1e-15 ? 0.55 + 0.45 * std::abs(n.dot(centroid)) / nn : 0.55;
            }

            ClipVtx poly[4];
            const int nclip = clip_near(in, z_near, poly);
            for (int i = 2; i < nclip; ++i) {
                const RasterVtx tri[3] = {to_raster(poly[0]), to_raster(poly[i - 1]),
                                          to_raster(poly[i])};
                const double area = edge(tri[0], tri[1], tri[2].sx, tri[2].sy);
                if (area == 0.0) continue;
                const int tx0 = std::max(
                    0, static_cast<int>(std::floor(std::min({tri[0].sx, tri[1].sx, tri[2].sx}))));
                const int ty0 = std::max(
                    0, static_cast<int>(std::floor(std::min({tri[0].sy, tri[1].sy, tri[2].sy}))));
                const int tx1 = std::min(
                    k.width,
                    static_cast<int>(std::ceil(std::max({tri[0].sx, tri[1].sx, tri[2].sx}))) + 1);
                const int ty1 = std::min(
                    k.height,
                    static_cast<int>(std::ceil(std::max({tri[0].sy, tri[1].sy, tri[2].sy}))) + 1);
                for (int y = ty0; y < ty1; ++y) {
                    for (int x = tx0; x < tx1; ++x) {
                        const double px = x + 0.5, py = y + 0.5;
                        const double w0 = edge(tri[1], tri[2], px, py);
                        const double w1 = edge(tri[2], tri[0], px, py);
                        const double w2 = edge(tri[0], tri[1], px, py);
                        const bool inside = (w0 >= 0 && w1 >= 0 && w2 >= 0) ||
                                            (w0 <= 0 && w1 <= 0 && w2 <= 0);
                        if (!inside) continue;
                        const double b0 = w0 / area, b1 = w1 / area, b2 = w2 / area;
                        const double inv_z =
                            b0 * tri[0].inv_z + b1 * tri[1].inv_z + b2 * tri[2].inv_z;
                        if (inv_z <= 0) continue;
                        const std::size_t idx = static_cast<std::size_t>(y) * k.width + x;
                        if (inv_z <= zbuf[idx]) continue;
                        zbuf[idx] = inv_z;

                        double r, g, b;
                        if (textured) {
                            const double u = std::clamp(
                                (b0 * tri[0].u_z + b1 * tri[1].u_z + b2 * tri[2].u_z) / inv_z,
                                0.0, 1.0);
                            const double v = std::clamp(
                                (b0 * tri[0].v_z + b1 * tri[1].v_z + b2 * tri[2].v_z) / inv_z,
                                0.0, 1.0);
                            const auto c = sample_bilinear(*mesh.texture,
                                                          u * (mesh.texture->width - 1),
                                                          v * (mesh.texture->height - 1));
                            r = c[0], g = c[1], b = c[2];
                        } else {
                            r = mesh.color[0], g = mesh.color[1], b = mesh.color[2];
                        }
                        const auto quant = [&](double c) {
                            return static_cast<std::uint8_t>(
                                std::clamp(std::lround(c * shade), 0L, 255L));
                        };
                        color_out.set(x, y, quant(r), quant(g), quant(b));
                        const double z_mm = std::clamp(std::round(1000.0 / inv_z), 1.0, 65535.0);
                        depth_out.at(x, y) = static_cast<std::uint16_t>(z_mm);
                    }
                }
            }
        }
    }
}

}  // namespace mvanon
