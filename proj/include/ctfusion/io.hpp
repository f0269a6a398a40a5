#pragma once

// Text formats:
//
// Annotations, one ground-truth box per line:
//     image_id category x y w h occlusion
// with occlusion in {none, partial, heavy}. `#` starts a comment.
//
// Detections, one box per line:
//     image_id x y w h score
//
// Fusion parameters: a versioned document of named, shaped arrays,
//     ctfusion-params v1
//     channels <C>
//     reduction <r>
//     array <name> <dim0> <dim1> ...
//     <values...>
// Doubles are rendered with 17 significant digits, so save -> load
// round-trips bit-exactly.
//
// Curve export: CSV `fppi,miss_rate` rows (9 significant digits) plus a
// trailing `# log_average_mr=` comment.

#include <string>
#include <utility>
#include <vector>

#include "ctfusion/eval.hpp"
#include "ctfusion/fusion.hpp"

namespace ctfusion {

// Parse or file-format failure, carrying the file position.
class ParseError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct AnnotationSet {
    // first-seen order, one entry per image id
    std::vector<std::pair<std::string, std::vector<GroundTruthBox>>> images;
};

struct DetectionSet {
    std::vector<std::pair<std::string, std::vector<DetectionBox>>> images;
};

AnnotationSet parse_annotations(const std::string& path);
DetectionSet parse_detections(const std::string& path);

std::string occlusion_name(Occlusion o);

void save_params(const FusionParams& p, const std::string& path);
FusionParams load_params(const std::string& path);

void export_curve(const MissRateCurve& curve, const std::string& path);

// Per-image evaluation inputs: the image universe is the union of ids in
// both sets, annotation order first, then detection-only ids.
std::vector<ImageEvalData> group_for_evaluation(const AnnotationSet& ann,
                                                const DetectionSet& det);

}  // namespace ctfusion
