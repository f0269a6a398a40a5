#include "ctfusion/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <stdexcept>

namespace ctfusion {

double iou(double ax, double ay, double aw, double ah, double bx, double by,
           double bw, double bh) {
    if (aw <= 0.0 || ah <= 0.0 || bw <= 0.0 || bh <= 0.0) {
        throw std::invalid_argument("iou: box extents must be positive");
    }
    const double ix = std::max(0.0, std::min(ax + aw, bx + bw) - std::max(ax, bx));
    const double iy = std::max(0.0, std::min(ay + ah, by + bh) - std::max(ay, by));
    const double inter = ix * iy;
    const double uni = aw * ah + bw * bh - inter;
    return inter / uni;
}

double iou(const DetectionBox& a, const GroundTruthBox& b) {
    return iou(a.x, a.y, a.w, a.h, b.x, b.y, b.w, b.h);
}

std::vector<GroundTruthBox> apply_reasonable_filter(
    std::span<const GroundTruthBox> gts, const ReasonableFilter& f) {
    if (f.min_height_px <= 0.0) {
        throw std::invalid_argument("ReasonableFilter: min height must be positive");
    }
    std::vector<GroundTruthBox> out(gts.begin(), gts.end());
    for (GroundTruthBox& gt : out) {
        if (gt.h < f.min_height_px || !f.allows(gt.occlusion)) {
            gt.ignore = true;
        }
    }
    return out;
}

MatchCounts match_detections(std::span<const DetectionBox> dets,
                             std::span<const GroundTruthBox> gts,
                             double iou_threshold, double score_threshold) {
    if (iou_threshold <= 0.0 || iou_threshold > 1.0) {
        throw std::invalid_argument("match_detections: IoU threshold must be in (0, 1]");
    }

    std::vector<std::size_t> order;
    order.reserve(dets.size());
    for (std::size_t i = 0; i < dets.size(); ++i) {
        if (dets[i].score >= score_threshold) order.push_back(i);
    }
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return dets[a].score > dets[b].score;
    });

    std::vector<bool> gt_matched(gts.size(), false);
    long non_ignored = 0;
    for (const GroundTruthBox& gt : gts) {
        if (!gt.ignore) ++non_ignored;
    }

    MatchCounts counts;
    for (std::size_t di : order) {
        double best_iou = 0.0;
        std::size_t best_gt = gts.size();
        for (std::size_t gi = 0; gi < gts.size(); ++gi) {
            if (gts[gi].ignore || gt_matched[gi]) continue;
            const double v = iou(dets[di], gts[gi]);
            if (v > best_iou) {
                best_iou = v;
                best_gt = gi;
            }
        }
        if (best_gt < gts.size() && best_iou >= iou_threshold) {
            gt_matched[best_gt] = true;
            ++counts.tp;
            continue;
        }
        double best_ignored = 0.0;
        for (std::size_t gi = 0; gi < gts.size(); ++gi) {
            if (!gts[gi].ignore) continue;
            best_ignored = std::max(best_ignored, iou(dets[di], gts[gi]));
        }
        if (best_ignored >= iou_threshold) continue;  // neutral
        ++counts.fp;
    }
    counts.fn = non_ignored - counts.tp;
    return counts;
}

MissRateCurve miss_rate_fppi_curve(std::span<const ImageEvalData> images,
                                   double iou_threshold) {
    if (images.empty()) {
        throw std::invalid_argument("miss_rate_fppi_curve: no images to evaluate");
    }
    long total_gt = 0;
    for (const ImageEvalData& img : images) {
        for (const GroundTruthBox& gt : img.ground_truths) {
            if (!gt.ignore) ++total_gt;
        }
    }
    if (total_gt == 0) {
        throw std::invalid_argument(
            "miss_rate_fppi_curve: no non-ignored ground truth to evaluate");
    }

    std::set<double, std::greater<double>> thresholds;
    thresholds.insert(std::numeric_limits<double>::infinity());
    for (const ImageEvalData& img : images) {
        for (const DetectionBox& d : img.detections) thresholds.insert(d.score);
    }

    MissRateCurve curve;
    const double n_images = static_cast<double>(images.size());
    for (double thr : thresholds) {
        MatchCounts agg;
        for (const ImageEvalData& img : images) {
            const MatchCounts c = match_detections(img.detections,
                                                   img.ground_truths,
                                                   iou_threshold, thr);
            agg.tp += c.tp;
            agg.fp += c.fp;
            agg.fn += c.fn;
        }
        const double mr = static_cast<double>(agg.fn) /
                          static_cast<double>(agg.tp + agg.fn);
        curve.points.push_back({static_cast<double>(agg.fp) / n_images, mr});
    }

    std::stable_sort(curve.points.begin(), curve.points.end(),
                     [](const CurvePoint& a, const CurvePoint& b) {
                         return a.fppi < b.fppi;
                     });
    double running_min = 1.0;
    for (CurvePoint& pt : curve.points) {
        running_min = std::min(running_min, pt.miss_rate);
        pt.miss_rate = running_min;
    }
    curve.log_average_mr = log_average_miss_rate(curve.points);
    return curve;
}

std::array<double, 9> log_mr_sample_points() {
    std::array<double, 9> pts{};
    for (int k = 0; k < 9; ++k) {
        pts[static_cast<std::size_t>(k)] = std::pow(10.0, -2.0 + 0.25 * k);
    }
    return pts;
}

double log_average_miss_rate(std::span<const CurvePoint> points) {
    if (points.empty()) {
        throw std::invalid_argument("log_average_miss_rate: empty curve");
    }
    constexpr double kFloor = 1e-10;
    double log_sum = 0.0;
    for (double sample : log_mr_sample_points()) {
        // step interpolation: last point with fppi <= sample, clamped left
        double mr = points.front().miss_rate;
        for (const CurvePoint& pt : points) {
            if (pt.fppi <= sample) {
                mr = pt.miss_rate;
            } else {
                break;
            }
        }
        log_sum += std::log(std::max(mr, kFloor));
    }
    return std::exp(log_sum / 9.0);
}

}  // namespace ctfusion
