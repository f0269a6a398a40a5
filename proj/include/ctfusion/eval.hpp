#pragma once

// Detection evaluation: greedy IoU matching with ignore-region neutrality,
// the miss rate vs. false-positives-per-image curve swept over every
// distinct detection score, and the 9-point log-average miss rate over
// FPPI in [1e-2, 1e0].

#include <array>
#include <span>
#include <string>
#include <vector>

namespace ctfusion {

enum class Occlusion { none, partial, heavy };

struct DetectionBox {
    std::string image_id;
    double x = 0.0;  // top-left
    double y = 0.0;
    double w = 0.0;
    double h = 0.0;
    double score = 0.0;
};

struct GroundTruthBox {
    std::string image_id;
    double x = 0.0;
    double y = 0.0;
    double w = 0.0;
    double h = 0.0;
    std::string category;
    Occlusion occlusion = Occlusion::none;
    bool ignore = false;
};

// Benchmark-style "reasonable" subset: ground truth below the height
// threshold or beyond the allowed occlusion levels is flagged ignore,
// never deleted.
struct ReasonableFilter {
    double min_height_px = 55.0;
    bool allow_none = true;
    bool allow_partial = true;
    bool allow_heavy = false;

    bool allows(Occlusion o) const {
        switch (o) {
            case Occlusion::none: return allow_none;
            case Occlusion::partial: return allow_partial;
            case Occlusion::heavy: return allow_heavy;
        }
        return false;
    }
};

struct MatchCounts {
    long tp = 0;
    long fp = 0;
    long fn = 0;
};

struct CurvePoint {
    double fppi = 0.0;
    double miss_rate = 0.0;
};

struct MissRateCurve {
    std::vector<CurvePoint> points;  // fppi ascending, miss rate non-increasing
    double log_average_mr = 0.0;
};

// Detections and ground truth of one image.
struct ImageEvalData {
    std::vector<DetectionBox> detections;
    std::vector<GroundTruthBox> ground_truths;
};

// Intersection area over union area of two (x, y, w, h) boxes.
double iou(double ax, double ay, double aw, double ah, double bx, double by,
           double bw, double bh);
double iou(const DetectionBox& a, const GroundTruthBox& b);

std::vector<GroundTruthBox> apply_reasonable_filter(
    std::span<const GroundTruthBox> gts, const ReasonableFilter& f);

// Greedy matching: detections below score_threshold are dropped, the rest
// processed by descending score (ties keep input order). A detection takes
// the unmatched non-ignored GT of highest IoU >= iou_threshold (TP); failing
// that, if its best overlap with an ignored GT reaches the threshold it is
// neutral; otherwise FP. Unmatched non-ignored GTs count as FN.
MatchCounts match_detections(std::span<const DetectionBox> dets,
                             std::span<const GroundTruthBox> gts,
                             double iou_threshold, double score_threshold);

// Threshold sweep over every distinct detection score plus +infinity;
// aggregates counts over all images at each threshold. Requires at least
// one image and one non-ignored GT.
MissRateCurve miss_rate_fppi_curve(std::span<const ImageEvalData> images,
                                   double iou_threshold);

// The 9 sampling abscissae 10^(-2 + k/4), k = 0..8.
std::array<double, 9> log_mr_sample_points();

// Geometric mean of the miss rates sampled at log_mr_sample_points() with
// previous-value (step) interpolation; samples left of the first point use
// the first point's miss rate. Values floored at 1e-10 before the log.
double log_average_miss_rate(std::span<const CurvePoint> points);

}  // namespace ctfusion
