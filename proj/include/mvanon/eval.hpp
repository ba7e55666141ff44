#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mvanon/geometry.hpp"
#include "mvanon/image.hpp"

namespace mvanon {

// One face record, detection or ground truth. Detections leave
// fully_occluded false and may carry person_id -1.
struct FaceBox {
    int frame_index = 0;
    std::string camera_id;
    int person_id = -1;
    BBox2D box;
    bool fully_occluded = false;
};

struct CameraScore {
    int tp = 0, fp = 0, fn = 0;
    double precision() const { return tp + fp > 0 ? static_cast<double>(tp) / (tp + fp) : 0.0; }
    double recall() const { return tp + fn > 0 ? static_cast<double>(tp) / (tp + fn) : 0.0; }
    double f1() const {
        const double p = precision(), r = recall();
        return p + r > 0 ? 2.0 * p * r / (p + r) : 0.0;
    }
};

struct MatchRecord {
    int det_index = -1;  // into the detections span
    int ann_index = -1;  // into the annotations span
    double iou = 0.0;
};

struct MatchOutcome {
    std::map<std::string, CameraScore> per_camera;
    CameraScore overall;  // summed counts
    std::vector<MatchRecord> matches;
};

struct HolisticResult {
    double recall = 0.0;
    int detected = 0, total = 0;
    std::map<int, std::pair<int, int>> per_person;  // id -> (detected, total units)
};

double iou(const BBox2D& a, const BBox2D& b);

// Greedy one-to-one matching in descending IoU order per (frame, camera).
// fully_occluded annotations act as ignore-regions: detections overlapping
// them at or above the threshold are neither TP nor FP.
MatchOutcome match_and_score(std::span<const FaceBox> detections,
                             std::span<const FaceBox> annotations, double iou_threshold = 0.4);

// A (frame, person) unit counts as detected iff the person's annotation is
// matched in every camera where it is visible that frame; units with no
// visible annotation are excluded from the denominator.
HolisticResult holistic_recall(std::span<const FaceBox> detections,
                               std::span<const FaceBox> annotations, double iou_threshold = 0.4);

// Mean of the windowed SSIM map (Gaussian window, sigma 1.5) over the three
// channels. Throws DimensionMismatch / TooSmall.
double ssim(const Image8& a, const Image8& b, int window = 11, double k1 = 0.01,
            double k2 = 0.03, double dynamic_range = 255.0);

}  // namespace mvanon
