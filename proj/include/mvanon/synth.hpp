#pragma once

#include <cstdint>
#include <filesystem>

namespace mvanon::synth {

// Scene description for the synthetic fixture generator. The seed fully
// determines every output byte.
struct SynthSpec {
    std::uint64_t seed = 1;
    int cameras = 4;
    int width = 640;
    int height = 480;
    int persons = 3;
    int frames = 50;
    double keypoint_noise_px = 0.0;
    bool occluder = true;
    int occluder_camera = 1;  // index of the camera the plane slides in front of
    std::filesystem::path out_root;

    void validate() const;  // throws SpecInvalid
};

// Poses template heads on smooth trajectories in front of a clustered camera
// rig, renders per-camera color and depth, and writes the complete input
// tree: calibration.json, color/<cam>/, depth/<cam>/, keypoints/<cam>/,
// poses3d/, plus annotations.txt ground truth (boxes from rendered face
// masks; fully_occluded where the occluder hides every face pixel).
void generate(const SynthSpec& spec);

}  // namespace mvanon::synth
