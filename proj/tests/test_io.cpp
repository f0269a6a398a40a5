#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "ctfusion/io.hpp"

using namespace ctfusion;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("ctfusion-io-test-" + std::to_string(::getpid()));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string file(const std::string& name) const {
        return (path / name).string();
    }
};

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path);
    out << content;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("parse_annotations") {
    TempDir dir;
    SUBCASE("empty file parses to an empty set") {
        const std::string p = dir.file("empty.txt");
        write_file(p, "");
        CHECK(parse_annotations(p).images.empty());
    }
    SUBCASE("single line walkthrough") {
        const std::string p = dir.file("one.txt");
        write_file(p, "img1 person 10 20 30 60 none\n");
        AnnotationSet set = parse_annotations(p);
        REQUIRE(set.images.size() == 1);
        CHECK(set.images[0].first == "img1");
        REQUIRE(set.images[0].second.size() == 1);
        const GroundTruthBox& gt = set.images[0].second[0];
        CHECK(gt.x == 10.0);
        CHECK(gt.y == 20.0);
        CHECK(gt.w == 30.0);
        CHECK(gt.h == 60.0);
        CHECK(gt.category == "person");
        CHECK(gt.occlusion == Occlusion::none);
        CHECK(!gt.ignore);
    }
    SUBCASE("comments, blank lines, and grouping") {
        const std::string p = dir.file("multi.txt");
        write_file(p,
                   "# header comment\n"
                   "\n"
                   "img2 person 1 2 3 60 partial\n"
                   "img1 cyclist 5 6 7 70 heavy  # trailing comment\n"
                   "img2 people 8 9 10 80 none\n");
        AnnotationSet set = parse_annotations(p);
        REQUIRE(set.images.size() == 2);
        CHECK(set.images[0].first == "img2");
        CHECK(set.images[0].second.size() == 2);
        CHECK(set.images[1].first == "img1");
        CHECK(set.images[1].second[0].occlusion == Occlusion::heavy);
    }
    SUBCASE("zero width is rejected with the line number") {
        const std::string p = dir.file("bad.txt");
        write_file(p, "img1 person 10 20 30 60 none\nimg1 person 1 2 0 60 none\n");
        try {
            parse_annotations(p);
            FAIL("expected ParseError");
        } catch (const ParseError& e) {
            CHECK(std::string(e.what()).find(":2:") != std::string::npos);
        }
    }
    SUBCASE("wrong field count and bad occlusion are rejected") {
        const std::string p = dir.file("short.txt");
        write_file(p, "img1 person 10 20 30\n");
        CHECK_THROWS_AS(parse_annotations(p), ParseError);
        write_file(p, "img1 person 10 20 30 60 sideways\n");
        CHECK_THROWS_AS(parse_annotations(p), ParseError);
        write_file(p, "img1 person ten 20 30 60 none\n");
        CHECK_THROWS_AS(parse_annotations(p), ParseError);
    }
    SUBCASE("missing file is reported") {
        CHECK_THROWS_AS(parse_annotations(dir.file("nope.txt")), ParseError);
    }
}

TEST_CASE("parse_detections") {
    TempDir dir;
    SUBCASE("empty file") {
        const std::string p = dir.file("empty.txt");
        write_file(p, "");
        CHECK(parse_detections(p).images.empty());
    }
    SUBCASE("walkthrough") {
        const std::string p = dir.file("dets.txt");
        write_file(p, "img1 10 20 30 60 0.87\n");
        DetectionSet set = parse_detections(p);
        REQUIRE(set.images.size() == 1);
        const DetectionBox& d = set.images[0].second[0];
        CHECK(d.x == 10.0);
        CHECK(d.score == 0.87);
    }
    SUBCASE("non-numeric score is rejected") {
        const std::string p = dir.file("bad.txt");
        write_file(p, "img1 10 20 30 60 high\n");
        CHECK_THROWS_AS(parse_detections(p), ParseError);
        write_file(p, "img1 10 20 30 60 inf\n");
        CHECK_THROWS_AS(parse_detections(p), ParseError);
    }
}

TEST_CASE("parameter file round-trip") {
    TempDir dir;
    const std::string p = dir.file("params.txt");
    FusionParams params = seeded_fusion_params(4, 2, 777);
    save_params(params, p);
    FusionParams loaded = load_params(p);

    auto a = param_groups(params);
    auto b = param_groups(loaded);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        REQUIRE(a[i].size == b[i].size);
        CHECK(std::memcmp(a[i].data, b[i].data, a[i].size * sizeof(double)) == 0);
    }
    CHECK(loaded.ciem.bn.running_mean == params.ciem.bn.running_mean);
    CHECK(loaded.ciem.bn.running_var == params.ciem.bn.running_var);
    CHECK(loaded.ciem.bn.epsilon == params.ciem.bn.epsilon);
    CHECK(loaded.ciem.reduction_ratio == params.ciem.reduction_ratio);

    SUBCASE("saved bytes are stable across repeated saves") {
        const std::string p2 = dir.file("params2.txt");
        save_params(params, p2);
        CHECK(read_file(p) == read_file(p2));
    }
}

TEST_CASE("parameter file diagnostics") {
    TempDir dir;
    const std::string good = dir.file("good.txt");
    save_params(seeded_fusion_params(2, 2, 3), good);
    const std::string content = read_file(good);

    SUBCASE("missing array is reported by name") {
        std::string clipped = content.substr(0, content.find("array ciem.pam.weight"));
        const std::string p = dir.file("missing.txt");
        write_file(p, clipped);
        try {
            load_params(p);
            FAIL("expected ParseError");
        } catch (const ParseError& e) {
            CHECK(std::string(e.what()).find("ciem.pam.weight") != std::string::npos);
        }
    }
    SUBCASE("declared shape must match the expected field shape") {
        std::string mangled = content;
        const std::string key = "array ciem.conv3.weight 3 3 2 2";
        mangled.replace(mangled.find(key), key.size(),
                        "array ciem.conv3.weight 3 3 2 1");
        const std::string p = dir.file("shape.txt");
        write_file(p, mangled);
        CHECK_THROWS_AS(load_params(p), ParseError);
    }
    SUBCASE("value count must match the declared shape") {
        // drop one value from the 3x3x2x2 = 36 value array
        const std::string key = "array ciem.conv3.weight 3 3 2 2";
        const std::size_t start = content.find(key) + key.size();
        const std::size_t next = content.find("array ", start);
        std::string block = content.substr(start, next - start);
        block = block.substr(0, block.find_last_of("0123456789"));
        block = block.substr(0, block.find_last_of(" \n") + 1);
        std::string mangled = content.substr(0, start) + block + "\n" +
                              content.substr(next);
        const std::string p = dir.file("count.txt");
        write_file(p, mangled);
        try {
            load_params(p);
            FAIL("expected ParseError");
        } catch (const ParseError& e) {
            const std::string msg = e.what();
            CHECK(msg.find("ciem.conv3.weight") != std::string::npos);
            CHECK(msg.find("36") != std::string::npos);
        }
    }
    SUBCASE("unknown version is rejected") {
        std::string mangled = content;
        mangled.replace(mangled.find("v1"), 2, "v9");
        const std::string p = dir.file("version.txt");
        write_file(p, mangled);
        CHECK_THROWS_AS(load_params(p), ParseError);
    }
    SUBCASE("unknown array name is rejected") {
        const std::string p = dir.file("unknown.txt");
        write_file(p, content + "array mystery.blob 1\n0.5\n");
        CHECK_THROWS_AS(load_params(p), ParseError);
    }
}

TEST_CASE("export_curve") {
    TempDir dir;
    SUBCASE("single point plus the summary comment") {
        MissRateCurve curve;
        curve.points = {{0.0, 1.0}};
        curve.log_average_mr = 1.0;
        const std::string p = dir.file("single.csv");
        export_curve(curve, p);
        CHECK(read_file(p) == "fppi,miss_rate\n0,1\n# log_average_mr=1\n");
    }
    SUBCASE("points are written sorted by fppi") {
        MissRateCurve curve;
        curve.points = {{0.5, 0.25}, {0.0, 1.0}, {0.25, 0.5}};
        curve.log_average_mr = 0.42;
        const std::string p = dir.file("sorted.csv");
        export_curve(curve, p);
        const std::string text = read_file(p);
        CHECK(text.find("0,1\n0.25,0.5\n0.5,0.25\n") != std::string::npos);
    }
    SUBCASE("repeated export is byte-identical") {
        MissRateCurve curve;
        curve.points = {{0.0, 1.0}, {1.0 / 3.0, 0.456789123}, {2.0 / 3.0, 0.25}};
        curve.log_average_mr = 0.3215554443;
        const std::string p1 = dir.file("a.csv");
        const std::string p2 = dir.file("b.csv");
        export_curve(curve, p1);
        export_curve(curve, p2);
        CHECK(read_file(p1) == read_file(p2));
    }
    SUBCASE("unwritable path is reported") {
        MissRateCurve curve;
        curve.points = {{0.0, 1.0}};
        CHECK_THROWS_AS(export_curve(curve, "/nonexistent-dir/curve.csv"),
                        std::runtime_error);
    }
}

TEST_CASE("group_for_evaluation unions the image ids") {
    AnnotationSet ann;
    ann.images = {{"im1", {{"im1", 0, 0, 10, 60, "person", Occlusion::none, false}}},
                  {"im2", {{"im2", 0, 0, 10, 60, "person", Occlusion::none, false}}}};
    DetectionSet det;
    det.images = {{"im2", {{"im2", 0, 0, 10, 60, 0.9}}},
                  {"im3", {{"im3", 5, 5, 10, 60, 0.4}}}};
    std::vector<ImageEvalData> grouped = group_for_evaluation(ann, det);
    REQUIRE(grouped.size() == 3);
    CHECK(grouped[0].ground_truths.size() == 1);
    CHECK(grouped[0].detections.empty());
    CHECK(grouped[1].detections.size() == 1);
    CHECK(grouped[2].ground_truths.empty());
    CHECK(grouped[2].detections.size() == 1);
}
