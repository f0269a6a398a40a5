// ctfusion command line: evaluation runs, fusion demos, gradient
// verification, and the built-in selftest.
//
// Exit codes: 0 success, 1 contract failure, 2 usage error.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ctfusion/eval.hpp"
#include "ctfusion/fusion.hpp"
#include "ctfusion/gradcheck.hpp"
#include "ctfusion/io.hpp"
#include "ctfusion/kernels.hpp"
#include "selftest.hpp"

namespace {

using namespace ctfusion;

struct Shape {
    int width = 5;
    int height = 5;
    int channels = 4;
};

Shape parse_shape(const std::string& text) {
    Shape s;
    if (std::sscanf(text.c_str(), "%dx%dx%d", &s.width, &s.height,
                    &s.channels) != 3 ||
        s.width <= 0 || s.height <= 0 || s.channels <= 0) {
        throw CLI::ValidationError("--shape", "expected WxHxC, e.g. 5x5x4");
    }
    return s;
}

bool want_color() { return std::getenv("NO_COLOR") == nullptr; }

// largest divisor of C not exceeding 4
int default_reduction(int channels) {
    for (int r = std::min(4, channels); r >= 1; --r) {
        if (channels % r == 0) return r;
    }
    return 1;
}

struct Stats {
    double min;
    double max;
    double mean;
};

Stats stats_of(std::span<const double> v) {
    Stats s{v[0], v[0], 0.0};
    for (double x : v) {
        s.min = std::min(s.min, x);
        s.max = std::max(s.max, x);
        s.mean += x;
    }
    s.mean /= static_cast<double>(v.size());
    return s;
}

void print_tensor_stats(const char* name, const Tensor& t) {
    const Stats s = stats_of(t.data());
    std::printf("%-18s %dx%dx%-4d min % .6f  max % .6f  mean % .6f\n", name,
                t.width(), t.height(), t.channels(), s.min, s.max, s.mean);
}

void print_weight_range(const char* name, std::span<const double> v) {
    const Stats s = stats_of(v);
    std::printf("%-18s range (%.6f, %.6f)\n", name, s.min, s.max);
}

int cmd_eval(const std::string& annotations, const std::string& detections,
             const std::string& out_path, double iou_threshold,
             double min_height) {
    AnnotationSet ann = parse_annotations(annotations);
    DetectionSet det = parse_detections(detections);

    ReasonableFilter filter;
    filter.min_height_px = min_height;
    for (auto& [id, gts] : ann.images) {
        gts = apply_reasonable_filter(gts, filter);
    }

    std::vector<ImageEvalData> images = group_for_evaluation(ann, det);
    MissRateCurve curve = miss_rate_fppi_curve(images, iou_threshold);
    if (!out_path.empty()) {
        export_curve(curve, out_path);
    }
    std::printf("MR=%.2f\n", 100.0 * curve.log_average_mr);
    return 0;
}

int cmd_demo(const std::string& params_path, const Shape& shape,
             std::uint64_t seed) {
    FusionParams params =
        params_path.empty()
            ? seeded_fusion_params(shape.channels, default_reduction(shape.channels), seed)
            : load_params(params_path);
    if (params.channels() != shape.channels) {
        throw std::runtime_error(
            "demo: parameter file has " + std::to_string(params.channels()) +
            " channels but --shape requests " + std::to_string(shape.channels));
    }

    Tensor f_color = seeded_tensor(shape.width, shape.height, shape.channels,
                                   seed + 1);
    Tensor f_thermal = seeded_tensor(shape.width, shape.height, shape.channels,
                                     seed + 2);
    FusionTrace t = fusion_forward_trace(f_color, f_thermal, params);

    std::printf("kernel backend: %s\n",
                kernels::backend_name(kernels::active_backend()));
    std::printf("seed %llu, shape %dx%dx%d\n",
                static_cast<unsigned long long>(seed), shape.width,
                shape.height, shape.channels);
    print_tensor_stats("color input", t.input_color);
    print_tensor_stats("thermal input", t.input_thermal);
    print_tensor_stats("fused", t.fused);
    print_weight_range("channel attention", t.w_ca.data());
    print_weight_range("spatial attention", t.w_pa.data());
    print_tensor_stats("enhanced color", t.color_enh);
    print_tensor_stats("enhanced thermal", t.thermal_enh);
    print_weight_range("thermal attention", t.w_t.data());
    print_weight_range("color attention", t.w_c.data());
    print_weight_range("global attention", t.w_ct.data());
    print_tensor_stats("output", t.output);
    return 0;
}

int cmd_gradcheck(const Shape& shape, std::uint64_t seed,
                  const std::string& corrupt_group) {
    GradCheckOptions opts;
    opts.width = shape.width;
    opts.height = shape.height;
    opts.channels = shape.channels;
    opts.reduction_ratio = default_reduction(shape.channels);
    opts.seed = seed;
    opts.corrupt_group = corrupt_group;

    GradCheckReport report = gradcheck_fusion(opts);
    std::printf("gradcheck: shape %dx%dx%d seed %llu step %g\n", shape.width,
                shape.height, shape.channels,
                static_cast<unsigned long long>(seed), opts.step);
    for (const GradCheckGroup& g : report.groups) {
        std::printf("  %-22s %5zu values   max rel err %.3e\n", g.name.c_str(),
                    g.size, g.max_rel_error);
    }
    const bool pass = report.passed(1e-5);
    const bool color = want_color();
    if (pass) {
        std::printf("%s worst group %s (%.3e), tolerance 1e-05\n",
                    color ? "\x1b[32mPASS\x1b[0m" : "PASS",
                    report.worst_group.c_str(), report.worst_error);
    } else {
        std::printf("%s worst group %s (%.3e), tolerance 1e-05\n",
                    color ? "\x1b[31mFAIL\x1b[0m" : "FAIL",
                    report.worst_group.c_str(), report.worst_error);
    }
    return pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"color/thermal fusion blocks, detection losses, and the "
                 "miss-rate/FPPI evaluation toolkit"};
    app.require_subcommand(1);

    std::string annotations, detections, params_path, out_path;
    std::string shape_text = "5x5x4";
    std::string corrupt_group;
    double iou_threshold = 0.5;
    double min_height = 55.0;
    std::uint64_t seed = 42;

    CLI::App* eval = app.add_subcommand(
        "eval", "evaluate detections against annotations");
    eval->add_option("--annotations", annotations, "ground-truth file")
        ->required();
    eval->add_option("--detections", detections, "detection file")->required();
    eval->add_option("--out", out_path, "curve CSV output path");
    eval->add_option("--iou-threshold", iou_threshold,
                     "IoU required for a true positive")
        ->check(CLI::Range(1e-9, 1.0));
    eval->add_option("--min-height", min_height,
                     "reasonable-subset height threshold (pixels)");

    CLI::App* demo = app.add_subcommand(
        "demo", "run the fusion pipeline on seeded inputs");
    demo->add_option("--params", params_path, "parameter file (default: seeded)");
    demo->add_option("--shape", shape_text, "input shape WxHxC");
    demo->add_option("--seed", seed, "pseudorandom seed");

    CLI::App* gradcheck = app.add_subcommand(
        "gradcheck", "verify analytic gradients against finite differences");
    gradcheck->add_option("--shape", shape_text, "input shape WxHxC");
    gradcheck->add_option("--seed", seed, "pseudorandom seed");
    gradcheck->add_option("--corrupt-group", corrupt_group,
                          "test hook: perturb one analytic gradient group")
        ->group("");

    CLI::App* selftest = app.add_subcommand(
        "selftest", "run the bundled invariant suites");
    (void)selftest;

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (eval->parsed()) {
            return cmd_eval(annotations, detections, out_path, iou_threshold,
                            min_height);
        }
        if (demo->parsed()) {
            return cmd_demo(params_path, parse_shape(shape_text), seed);
        }
        if (gradcheck->parsed()) {
            return cmd_gradcheck(parse_shape(shape_text), seed, corrupt_group);
        }
        return ctfusion::selftest::run(want_color());
    } catch (const CLI::ValidationError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
