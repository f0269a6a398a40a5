// End-to-end checks of the command-line surface: output contracts, exit
// codes, and lane-independence of the printed numbers.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <sys/wait.h>

#include "ctfusion/kernels.hpp"

namespace fs = std::filesystem;

namespace {

struct CliResult {
    int exit_code = -1;
    std::string stdout_text;
};

CliResult run_cli(const std::string& args, const std::string& extra_env = "") {
    const std::string cmd = "NO_COLOR=1 " + extra_env +
                            (extra_env.empty() ? "" : " ") +
                            std::string(CTFUSION_CLI_PATH) + " " + args +
                            " 2>/dev/null";
    CliResult r;
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    char buf[4096];
    std::size_t n;
    while ((n = fread(buf, 1, sizeof(buf), pipe)) > 0) {
        r.stdout_text.append(buf, n);
    }
    const int status = pclose(pipe);
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("ctfusion-cli-test-" + std::to_string(::getpid()));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string file(const std::string& name, const std::string& content) const {
        const fs::path p = path / name;
        std::ofstream out(p);
        out << content;
        return p.string();
    }
};

const char kFixtureAnnotations[] =
    "im1 person 10 10 20 60 none\n"
    "im1 person 100 10 20 60 none\n"
    "im2 person 50 50 25 60 none\n"
    "im3 cyclist 30 20 20 60 none\n";

const char kFixtureDetections[] =
    "im1 10 10 20 60 0.9\n"
    "im2 58 50 25 60 0.8\n"
    "im3 45 20 20 60 0.7\n"
    "im1 105 10 20 60 0.6\n"
    "im2 200 200 30 60 0.5\n";

}  // namespace

TEST_CASE("eval prints the log-average miss rate as a percentage") {
    TempDir dir;
    const std::string ann = dir.file("ann.txt", kFixtureAnnotations);

    SUBCASE("perfect detections floor to zero") {
        const std::string det = dir.file("det.txt",
                                         "im1 10 10 20 60 0.9\n"
                                         "im1 100 10 20 60 0.9\n"
                                         "im2 50 50 25 60 0.9\n"
                                         "im3 30 20 20 60 0.9\n");
        CliResult r = run_cli("eval --annotations " + ann + " --detections " + det);
        CHECK(r.exit_code == 0);
        CHECK(r.stdout_text == "MR=0.00\n");
    }
    SUBCASE("no detections miss everything") {
        const std::string det = dir.file("det.txt", "");
        CliResult r = run_cli("eval --annotations " + ann + " --detections " + det);
        CHECK(r.exit_code == 0);
        CHECK(r.stdout_text == "MR=100.00\n");
    }
    SUBCASE("three-image fixture") {
        const std::string det = dir.file("det.txt", kFixtureDetections);
        CliResult r = run_cli("eval --annotations " + ann + " --detections " + det);
        CHECK(r.exit_code == 0);
        // 100 * exp((7 ln 0.5 + 2 ln 0.25) / 9) = 42.8621...
        CHECK(r.stdout_text == "MR=42.86\n");
    }
    SUBCASE("curve export is written next to the summary") {
        const std::string det = dir.file("det.txt", kFixtureDetections);
        const std::string csv = (dir.path / "curve.csv").string();
        CliResult r = run_cli("eval --annotations " + ann + " --detections " +
                              det + " --out " + csv);
        CHECK(r.exit_code == 0);
        std::ifstream in(csv);
        std::string header;
        std::getline(in, header);
        CHECK(header == "fppi,miss_rate");
    }
}

TEST_CASE("exit codes separate usage errors from contract failures") {
    TempDir dir;
    SUBCASE("unknown flags and missing subcommand are usage errors") {
        CHECK(run_cli("eval --bogus-flag 1").exit_code == 2);
        CHECK(run_cli("").exit_code == 2);
        CHECK(run_cli("demo --shape not-a-shape").exit_code == 2);
    }
    SUBCASE("missing input files are contract failures") {
        CHECK(run_cli("eval --annotations /nope.txt --detections /nope.txt")
                  .exit_code == 1);
    }
    SUBCASE("annotation parse errors are contract failures") {
        const std::string ann = dir.file("bad.txt", "im1 person 1 2 0 60 none\n");
        const std::string det = dir.file("det.txt", "im1 1 2 3 60 0.5\n");
        CHECK(run_cli("eval --annotations " + ann + " --detections " + det)
                  .exit_code == 1);
    }
    SUBCASE("corrupted gradients make gradcheck fail") {
        CHECK(run_cli("gradcheck").exit_code == 0);
        CHECK(run_cli("gradcheck --corrupt-group ciem.conv3.weight").exit_code == 1);
    }
}

TEST_CASE("demo output is deterministic and seed dependent") {
    CliResult a = run_cli("demo --seed 7 --shape 6x4x4");
    CliResult b = run_cli("demo --seed 7 --shape 6x4x4");
    CliResult c = run_cli("demo --seed 8 --shape 6x4x4");
    CHECK(a.exit_code == 0);
    CHECK(a.stdout_text == b.stdout_text);
    CHECK(a.stdout_text != c.stdout_text);
}

TEST_CASE("kernel lanes do not change any printed number") {
    if (!ctfusion::kernels::avx2_supported()) {
        MESSAGE("AVX2 not available; lane comparison skipped");
        return;
    }
    auto strip_first_line = [](const std::string& text) {
        return text.substr(text.find('\n') + 1);
    };
    for (const char* cmd : {"demo --seed 3 --shape 7x5x4", "gradcheck --seed 3"}) {
        CliResult scalar = run_cli(cmd, "CTFUSION_SIMD=scalar");
        CliResult avx2 = run_cli(cmd, "CTFUSION_SIMD=avx2");
        CHECK(scalar.exit_code == avx2.exit_code);
        CHECK(strip_first_line(scalar.stdout_text) ==
              strip_first_line(avx2.stdout_text));
    }
}

TEST_CASE("selftest passes on a clean build") {
    CliResult r = run_cli("selftest");
    CHECK(r.exit_code == 0);
    CHECK(r.stdout_text.find(" 0 failed") != std::string::npos);
}
