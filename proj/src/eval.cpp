#include "mvanon/eval.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "mvanon/errors.hpp"

namespace mvanon {

double iou(const BBox2D& a, const BBox2D& b) {
    if (!a.valid() || !b.valid()) return 0.0;
    const double ix = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
    const double iy = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
    if (ix <= 0.0 || iy <= 0.0) return 0.0;
    const double inter = ix * iy;
    return inter / (a.area() + b.area() - inter);
}

MatchOutcome match_and_score(std::span<const FaceBox> detections,
                             std::span<const FaceBox> annotations, double iou_threshold) {
    MatchOutcome out;
    // Group record indices by (frame, camera); keys seed per_camera so
    // cameras with annotations but no detections still report.
    std::map<std::pair<int, std::string>, std::pair<std::vector<int>, std::vector<int>>> buckets;
    for (std::size_t i = 0; i < detections.size(); ++i)
        buckets[{detections[i].frame_index, detections[i].camera_id}].first.push_back(
            static_cast<int>(i));
    for (std::size_t i = 0; i < annotations.size(); ++i) {
        buckets[{annotations[i].frame_index, annotations[i].camera_id}].second.push_back(
            static_cast<int>(i));
        out.per_camera[annotations[i].camera_id];
    }

    for (const auto& [key, bucket] : buckets) {
        const auto& [dets, anns] = bucket;
        CameraScore& score = out.per_camera[key.second];

        struct Pair {
            double iou;
            int det, ann;
        };
        std::vector<Pair> pairs;
        for (int d : dets)
            for (int a : anns) {
                const double v = iou(detections[d].box, annotations[a].box);
                if (v >= iou_threshold) pairs.push_back({v, d, a});
            }
        std::sort(pairs.begin(), pairs.end(), [](const Pair& x, const Pair& y) {
            if (x.iou != y.iou) return x.iou > y.iou;
            if (x.det != y.det) return x.det < y.det;
            return x.ann < y.ann;
        });

        std::set<int> used_det, used_ann;
        std::set<int> ignored_det;
        // Visible annotations claim detections first, best overlap first.
        for (const Pair& p : pairs) {
            if (annotations[p.ann].fully_occluded) continue;
            if (used_det.count(p.det) || used_ann.count(p.ann)) continue;
            used_det.insert(p.det);
            used_ann.insert(p.ann);
            out.matches.push_back({p.det, p.ann, p.iou});
            ++score.tp;
        }
        // Leftover detections overlapping an ignore-region are dropped.
        for (const Pair& p : pairs) {
            if (!annotations[p.ann].fully_occluded || used_det.count(p.det)) continue;
            ignored_det.insert(p.det);
        }
        for (int d : dets)
            if (!used_det.count(d) && !ignored_det.count(d)) ++score.fp;
        for (int a : anns)
            if (!annotations[a].fully_occluded && !used_ann.count(a)) ++score.fn;
    }

    for (const auto& [cam, score] : out.per_camera) {
        out.overall.tp += score.tp;
        out.overall.fp += score.fp;
        out.overall.fn += score.fn;
    }
    return out;
}

HolisticResult holistic_recall(std::span<const FaceBox> detections,
                               std::span<const FaceBox> annotations, double iou_threshold) {
    const MatchOutcome matching = match_and_score(detections, annotations, iou_threshold);
    std::set<int> matched_ann;
    for (const MatchRecord& m : matching.matches) matched_ann.insert(m.ann_index);

    // (frame, person) -> [visible annotation count, matched count]
    std::map<std::pair<int, int>, std::pair<int, int>> units;
    for (std::size_t i = 0; i < annotations.size(); ++i) {
        const FaceBox& ann = annotations[i];
        if (ann.fully_occluded) continue;
        auto& unit = units[{ann.frame_index, ann.person_id}];
        ++unit.first;
        if (matched_ann.count(static_cast<int>(i))) ++unit.second;
    }

    HolisticResult out;
    for (const auto& [key, unit] : units) {
        const bool detected = unit.second == unit.first;
        ++out.total;
        out.detected += detected ? 1 : 0;
        auto& pp = out.per_person[key.second];
        ++pp.second;
        pp.first += detected ? 1 : 0;
    }
    out.recall = out.total > 0 ? static_cast<double>(out.detected) / out.total : 0.0;
    return out;
}

double ssim(const Image8& a, const Image8& b, int window, double k1, double k2,
            double dynamic_range) {
    if (a.width != b.width || a.height != b.height) throw DimensionMismatch();
    if (window < 1 || a.width < window || a.height < window) throw TooSmall();

    const int w = a.width, h = a.height;
    const int half = window / 2;
    std::vector<double> kernel(window);
    {
        const double sigma = 1.5;
        double sum = 0.0;
        for (int i = 0; i < window; ++i) {
            const double d = i - half;
            kernel[i] = std::exp(-0.5 * d * d / (sigma * sigma));
            sum += kernel[i];
        }
        for (double& v : kernel) v /= sum;
    }

    const double c1 = (k1 * dynamic_range) * (k1 * dynamic_range);
    const double c2 = (k2 * dynamic_range) * (k2 * dynamic_range);
    const int out_w = w - window + 1, out_h = h - window + 1;

    // Separable Gaussian window sums of x, y, x^2, y^2, xy per channel.
    const auto filter = [&](const std::vector<double>& img) {
        std::vector<double> hp(static_cast<std::size_t>(h) * out_w);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < out_w; ++x) {
                double acc = 0.0;
                for (int i = 0; i < window; ++i) acc += kernel[i] * img[y * w + x + i];
                hp[static_cast<std::size_t>(y) * out_w + x] = acc;
            }
        std::vector<double> vp(static_cast<std::size_t>(out_h) * out_w);
        for (int y = 0; y < out_h; ++y)
            for (int x = 0; x < out_w; ++x) {
                double acc = 0.0;
                for (int i = 0; i < window; ++i)
                    acc += kernel[i] * hp[static_cast<std::size_t>(y + i) * out_w + x];
                vp[static_cast<std::size_t>(y) * out_w + x] = acc;
            }
        return vp;
    };

    double channel_sum = 0.0;
    for (int c = 0; c < 3; ++c) {
        std::vector<double> xa(static_cast<std::size_t>(w) * h), xb(xa.size()), xaa(xa.size()),
            xbb(xa.size()), xab(xa.size());
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const double va = a.px(x, y)[c], vb = b.px(x, y)[c];
                const std::size_t i = static_cast<std::size_t>(y) * w + x;
                xa[i] = va;
                xb[i] = vb;
                xaa[i] = va * va;
                xbb[i] = vb * vb;
                xab[i] = va * vb;
            }
        const auto mu_a = filter(xa), mu_b = filter(xb);
        const auto m_aa = filter(xaa), m_bb = filter(xbb), m_ab = filter(xab);
        double acc = 0.0;
        for (std::size_t i = 0; i < mu_a.size(); ++i) {
            const double var_a = m_aa[i] - mu_a[i] * mu_a[i];
            const double var_b = m_bb[i] - mu_b[i] * mu_b[i];
            const double cov = m_ab[i] - mu_a[i] * mu_b[i];
            acc += ((2.0 * mu_a[i] * mu_b[i] + c1) * (2.0 * cov + c2)) /
                   ((mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1) * (var_a + var_b + c2));
        }
        channel_sum += acc / static_cast<double>(mu_a.size());
    }
    return channel_sum / 3.0;
}

}  // namespace mvanon
