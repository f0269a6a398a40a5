#include "ctfusion/io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

namespace ctfusion {
namespace {

struct Token {
    std::string text;
    int line;
};

[[noreturn]] void fail(const std::string& path, int line, const std::string& msg) {
    throw ParseError(path + ":" + std::to_string(line) + ": " + msg);
}

std::vector<std::string> read_lines(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw ParseError(path + ": cannot open file");
    }
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        lines.push_back(line);
    }
    return lines;
}

// comment-stripped whitespace tokens of one line
std::vector<std::string> tokenize(const std::string& line) {
    std::string body = line.substr(0, line.find('#'));
    std::vector<std::string> out;
    std::istringstream ss(body);
    std::string tok;
    while (ss >> tok) out.push_back(tok);
    return out;
}

double parse_double(const std::string& path, int line, const std::string& tok,
                    const char* what) {
    char* end = nullptr;
    const double v = std::strtod(tok.c_str(), &end);
    if (end != tok.c_str() + tok.size() || tok.empty()) {
        fail(path, line, std::string("expected a number for ") + what +
                             ", got '" + tok + "'");
    }
    if (!std::isfinite(v)) {
        fail(path, line, std::string(what) + " must be finite");
    }
    return v;
}

long parse_int(const std::string& path, int line, const std::string& tok,
               const char* what) {
    char* end = nullptr;
    const long v = std::strtol(tok.c_str(), &end, 10);
    if (end != tok.c_str() + tok.size() || tok.empty()) {
        fail(path, line, std::string("expected an integer for ") + what +
                             ", got '" + tok + "'");
    }
    return v;
}

Occlusion parse_occlusion(const std::string& path, int line,
                          const std::string& tok) {
    if (tok == "none") return Occlusion::none;
    if (tok == "partial") return Occlusion::partial;
    if (tok == "heavy") return Occlusion::heavy;
    fail(path, line, "unknown occlusion '" + tok +
                         "' (expected none, partial or heavy)");
}

std::string fmt(double v, int digits) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*g", digits, v);
    return buf;
}

}  // namespace

std::string occlusion_name(Occlusion o) {
    switch (o) {
        case Occlusion::none: return "none";
        case Occlusion::partial: return "partial";
        case Occlusion::heavy: return "heavy";
    }
    return "none";
}

AnnotationSet parse_annotations(const std::string& path) {
    const std::vector<std::string> lines = read_lines(path);
    AnnotationSet set;
    std::map<std::string, std::size_t> index;
    for (std::size_t li = 0; li < lines.size(); ++li) {
        const int line_no = static_cast<int>(li) + 1;
        const std::vector<std::string> tok = tokenize(lines[li]);
        if (tok.empty()) continue;
        if (tok.size() != 7) {
            fail(path, line_no,
                 "expected 7 fields (image_id category x y w h occlusion), got " +
                     std::to_string(tok.size()));
        }
        GroundTruthBox gt;
        gt.image_id = tok[0];
        gt.category = tok[1];
        gt.x = parse_double(path, line_no, tok[2], "x");
        gt.y = parse_double(path, line_no, tok[3], "y");
        gt.w = parse_double(path, line_no, tok[4], "w");
        gt.h = parse_double(path, line_no, tok[5], "h");
        gt.occlusion = parse_occlusion(path, line_no, tok[6]);
        if (gt.w <= 0.0 || gt.h <= 0.0) {
            fail(path, line_no, "box extents must be positive");
        }
        auto [it, inserted] = index.try_emplace(gt.image_id, set.images.size());
        if (inserted) set.images.push_back({gt.image_id, {}});
        set.images[it->second].second.push_back(std::move(gt));
    }
    return set;
}

DetectionSet parse_detections(const std::string& path) {
    const std::vector<std::string> lines = read_lines(path);
    DetectionSet set;
    std::map<std::string, std::size_t> index;
    for (std::size_t li = 0; li < lines.size(); ++li) {
        const int line_no = static_cast<int>(li) + 1;
        const std::vector<std::string> tok = tokenize(lines[li]);
        if (tok.empty()) continue;
        if (tok.size() != 6) {
            fail(path, line_no,
                 "expected 6 fields (image_id x y w h score), got " +
                     std::to_string(tok.size()));
        }
        DetectionBox det;
        det.image_id = tok[0];
        det.x = parse_double(path, line_no, tok[1], "x");
        det.y = parse_double(path, line_no, tok[2], "y");
        det.w = parse_double(path, line_no, tok[3], "w");
        det.h = parse_double(path, line_no, tok[4], "h");
        det.score = parse_double(path, line_no, tok[5], "score");
        if (det.w <= 0.0 || det.h <= 0.0) {
            fail(path, line_no, "box extents must be positive");
        }
        auto [it, inserted] = index.try_emplace(det.image_id, set.images.size());
        if (inserted) set.images.push_back({det.image_id, {}});
        set.images[it->second].second.push_back(std::move(det));
    }
    return set;
}

namespace {

struct NamedArray {
    std::string name;
    std::vector<long> dims;
    std::span<const double> values;
};

std::vector<NamedArray> layout(const FusionParams& p) {
    const long C = p.channels();
    const long h = p.ciem.hidden();
    return {
        {"ciem.conv1.weight", {1, 1, 2 * C, C}, p.ciem.conv1.weights()},
        {"ciem.conv1.bias", {C}, p.ciem.conv1.bias()},
        {"ciem.conv3.weight", {3, 3, C, C}, p.ciem.conv3.weights()},
        {"ciem.conv3.bias", {C}, p.ciem.conv3.bias()},
        {"ciem.bn.gamma", {C}, p.ciem.bn.gamma},
        {"ciem.bn.beta", {C}, p.ciem.bn.beta},
        {"ciem.bn.running_mean", {C}, p.ciem.bn.running_mean},
        {"ciem.bn.running_var", {C}, p.ciem.bn.running_var},
        {"ciem.bn.epsilon", {1}, std::span<const double>(&p.ciem.bn.epsilon, 1)},
        {"ciem.cam.w1", {C, h}, p.ciem.cam_w1},
        {"ciem.cam.w2", {h, C}, p.ciem.cam_w2},
        {"ciem.pam.weight", {7, 7, 2, 1}, p.ciem.pam_conv.weights()},
        {"ciem.pam.bias", {1}, p.ciem.pam_conv.bias()},
        {"caffm.conv_t.weight", {1, 1, C, C}, p.caffm.conv_t.weights()},
        {"caffm.conv_t.bias", {C}, p.caffm.conv_t.bias()},
        {"caffm.conv_c.weight", {1, 1, C, C}, p.caffm.conv_c.weights()},
        {"caffm.conv_c.bias", {C}, p.caffm.conv_c.bias()},
        {"caffm.conv_g.weight", {1, 1, C, C}, p.caffm.conv_g.weights()},
        {"caffm.conv_g.bias", {C}, p.caffm.conv_g.bias()},
    };
}

std::vector<std::pair<std::string, std::span<double>>> destinations(
    FusionParams& p) {
    std::vector<std::pair<std::string, std::span<double>>> out;
    for (const ParamGroupView& g : param_groups(p)) {
        out.push_back({g.name, std::span<double>(g.data, g.size)});
    }
    out.push_back({"ciem.bn.running_mean", p.ciem.bn.running_mean});
    out.push_back({"ciem.bn.running_var", p.ciem.bn.running_var});
    out.push_back({"ciem.bn.epsilon", std::span<double>(&p.ciem.bn.epsilon, 1)});
    return out;
}

}  // namespace

void save_params(const FusionParams& p, const std::string& path) {
    p.validate();
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error(path + ": cannot open for writing");
    }
    out << "ctfusion-params v1\n";
    out << "channels " << p.channels() << "\n";
    out << "reduction " << p.ciem.reduction_ratio << "\n";
    for (const NamedArray& arr : layout(p)) {
        out << "array " << arr.name;
        for (long d : arr.dims) out << " " << d;
        out << "\n";
        for (std::size_t i = 0; i < arr.values.size(); ++i) {
            out << fmt(arr.values[i], 17)
                << ((i + 1) % 8 == 0 || i + 1 == arr.values.size() ? "\n" : " ");
        }
    }
    if (!out) {
        throw std::runtime_error(path + ": write failed");
    }
}

FusionParams load_params(const std::string& path) {
    const std::vector<std::string> lines = read_lines(path);
    std::vector<Token> tokens;
    for (std::size_t li = 0; li < lines.size(); ++li) {
        for (std::string& t : tokenize(lines[li])) {
            tokens.push_back({std::move(t), static_cast<int>(li) + 1});
        }
    }
    std::size_t pos = 0;
    auto next = [&](const char* what) -> const Token& {
        if (pos >= tokens.size()) {
            fail(path, lines.empty() ? 1 : static_cast<int>(lines.size()),
                 std::string("unexpected end of file, expected ") + what);
        }
        return tokens[pos++];
    };

    const Token& magic = next("header");
    if (magic.text != "ctfusion-params") {
        fail(path, magic.line, "not a ctfusion parameter file");
    }
    const Token& version = next("version");
    if (version.text != "v1") {
        fail(path, version.line, "unsupported version '" + version.text + "'");
    }
    const Token& ch_key = next("'channels'");
    if (ch_key.text != "channels") fail(path, ch_key.line, "expected 'channels'");
    const Token& ch_val = next("channel count");
    const long C = parse_int(path, ch_val.line, ch_val.text, "channels");
    const Token& red_key = next("'reduction'");
    if (red_key.text != "reduction") fail(path, red_key.line, "expected 'reduction'");
    const Token& red_val = next("reduction ratio");
    const long r = parse_int(path, red_val.line, red_val.text, "reduction");
    if (C <= 0 || r <= 0 || C % r != 0) {
        fail(path, red_val.line, "reduction ratio must divide channels");
    }

    FusionParams p{
        CiemParams{ConvKernel(1, static_cast<int>(2 * C), static_cast<int>(C)),
                   ConvKernel(3, static_cast<int>(C), static_cast<int>(C)),
                   BatchNormParams(static_cast<int>(C)),
                   std::vector<double>(static_cast<std::size_t>(C * (C / r))),
                   std::vector<double>(static_cast<std::size_t>((C / r) * C)),
                   ConvKernel(7, 2, 1), static_cast<int>(r)},
        CaffmParams{ConvKernel(1, static_cast<int>(C), static_cast<int>(C)),
                    ConvKernel(1, static_cast<int>(C), static_cast<int>(C)),
                    ConvKernel(1, static_cast<int>(C), static_cast<int>(C))}};

    auto dests = destinations(p);
    const std::vector<NamedArray> expect = layout(p);
    std::vector<bool> seen(expect.size(), false);

    while (pos < tokens.size()) {
        const Token& kw = next("'array'");
        if (kw.text != "array") {
            fail(path, kw.line, "expected 'array', got '" + kw.text + "'");
        }
        const Token& name = next("array name");
        std::size_t ei = expect.size();
        for (std::size_t i = 0; i < expect.size(); ++i) {
            if (expect[i].name == name.text) {
                ei = i;
                break;
            }
        }
        if (ei == expect.size()) {
            fail(path, name.line, "unknown array '" + name.text + "'");
        }
        if (seen[ei]) {
            fail(path, name.line, "duplicate array '" + name.text + "'");
        }
        seen[ei] = true;

        std::vector<long> dims;
        long count = 1;
        for (std::size_t d = 0; d < expect[ei].dims.size(); ++d) {
            const Token& dim = next("array dimension");
            dims.push_back(parse_int(path, dim.line, dim.text, "dimension"));
            count *= dims.back();
        }
        if (dims != expect[ei].dims) {
            std::string want, got;
            for (long d : expect[ei].dims) want += std::to_string(d) + "x";
            for (long d : dims) got += std::to_string(d) + "x";
            if (!want.empty()) want.pop_back();
            if (!got.empty()) got.pop_back();
            fail(path, name.line, "array '" + name.text + "' has shape " + got +
                                      ", expected " + want);
        }

        std::span<double> dst;
        for (auto& [dname, dspan] : dests) {
            if (dname == name.text) dst = dspan;
        }
        for (long i = 0; i < count; ++i) {
            if (pos >= tokens.size() || tokens[pos].text == "array") {
                fail(path, tokens[pos - 1].line,
                     "array '" + name.text + "' declares " + std::to_string(count) +
                         " values but " + std::to_string(i) + " were given");
            }
            const Token& v = next("array value");
            dst[static_cast<std::size_t>(i)] =
                parse_double(path, v.line, v.text, "array value");
        }
    }

    for (std::size_t i = 0; i < expect.size(); ++i) {
        if (!seen[i]) {
            fail(path, lines.empty() ? 1 : static_cast<int>(lines.size()),
                 "missing array '" + expect[i].name + "'");
        }
    }
    p.validate();
    return p;
}

void export_curve(const MissRateCurve& curve, const std::string& path) {
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error(path + ": cannot open for writing");
    }
    std::vector<CurvePoint> pts(curve.points.begin(), curve.points.end());
    std::stable_sort(pts.begin(), pts.end(),
                     [](const CurvePoint& a, const CurvePoint& b) {
                         return a.fppi < b.fppi;
                     });
    out << "fppi,miss_rate\n";
    for (const CurvePoint& pt : pts) {
        out << fmt(pt.fppi, 9) << "," << fmt(pt.miss_rate, 9) << "\n";
    }
    out << "# log_average_mr=" << fmt(curve.log_average_mr, 9) << "\n";
    if (!out) {
        throw std::runtime_error(path + ": write failed");
    }
}

std::vector<ImageEvalData> group_for_evaluation(const AnnotationSet& ann,
                                                const DetectionSet& det) {
    std::vector<ImageEvalData> out;
    std::map<std::string, std::size_t> index;
    for (const auto& [id, gts] : ann.images) {
        index.try_emplace(id, out.size());
        out.push_back(ImageEvalData{{}, gts});
    }
    for (const auto& [id, dets] : det.images) {
        auto [it, inserted] = index.try_emplace(id, out.size());
        if (inserted) out.push_back(ImageEvalData{});
        out[it->second].detections = dets;
    }
    return out;
}

}  // namespace ctfusion
