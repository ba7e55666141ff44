#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "mvanon/eval.hpp"
#include "mvanon/geometry.hpp"
#include "mvanon/image.hpp"
#include "mvanon/pointcloud.hpp"
#include "mvanon/pose.hpp"

// On-disk formats. All of these are deterministic: identical data serializes to
// identical bytes, which the end-to-end determinism check relies on.
namespace mvanon::io {

// "000042" -- frame names are fixed-width so lexical order equals numeric order.
std::string frame_name(int frame_index);

void ensure_dir(const std::filesystem::path& dir);

// -- Images ------------------------------------------------------------------
// Color frames are binary PPM (P6, maxval 255). Depth frames are binary PGM
// (P5, maxval 65535), big-endian u16 millimeters, 0 = missing.

Image8 load_ppm(const std::filesystem::path& path);
void save_ppm(const Image8& img, const std::filesystem::path& path);

DepthFrame load_depth_pgm(const std::filesystem::path& path);
void save_depth_pgm(const DepthFrame& depth, const std::filesystem::path& path);

// -- Calibration -------------------------------------------------------------
// JSON document:
//   { "cameras": [ { "id": "cam0", "role": "workflow",
//                    "width": 640, "height": 480,
//                    "fx": .., "fy": .., "cx": .., "cy": ..,
//                    "world_from_camera": [16 row-major values] }, ... ] }
// world_from_camera's last row must be 0 0 0 1 and its rotation block proper.

CameraRig load_calibration(const std::filesystem::path& path);
void save_calibration(const CameraRig& rig, const std::filesystem::path& path);

// -- 2D keypoints ------------------------------------------------------------
// One file per camera per frame; one line per detected person:
// 51 numbers = 17 x (x y confidence) in the fixed joint order.
// Keypoints landing outside the camera bounds are loaded with confidence 0.
// `camera` is borrowed into the returned poses and must outlive them.

std::vector<Pose2D> load_keypoints(const std::filesystem::path& path,
                                   const Camera& camera);
void save_keypoints(const std::vector<Pose2D>& poses,
                    const std::filesystem::path& path);

// -- 3D poses ----------------------------------------------------------------
// One file per frame; one line per person: 17 x (x y z valid), meters, world
// frame. Coordinates of invalid joints are written as zeros and ignored.

std::vector<Pose3D> load_poses3d(const std::filesystem::path& path,
                                 int frame_index);
void save_poses3d(const std::vector<Pose3D>& poses,
                  const std::filesystem::path& path);

// -- Face boxes --------------------------------------------------------------
// Whole-sequence text files, one record per line:
//   frame camera_id person_id x_min y_min width height [fully_occluded]
// Annotation files carry the trailing 0/1 flag; detection files omit it.

std::vector<FaceBox> load_face_boxes(const std::filesystem::path& path,
                                     bool with_flag);
void save_face_boxes(const std::vector<FaceBox>& boxes, bool with_flag,
                     const std::filesystem::path& path);

}  // namespace mvanon::io
