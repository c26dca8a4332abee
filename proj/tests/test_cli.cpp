#include <doctest.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

#ifndef QTEWMA_CLI_PATH
#error "QTEWMA_CLI_PATH must point at the qtewma executable"
#endif

namespace fs = std::filesystem;

namespace {

struct Outcome {
    int code = -1;
    std::string out;
};

Outcome run(const std::string& args) {
    const std::string cmd = std::string(QTEWMA_CLI_PATH) + " " + args + " 2>/dev/null";
    Outcome o;
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    char buf[4096];
    std::size_t n;
    while ((n = fread(buf, 1, sizeof buf, pipe)) > 0) {
        o.out.append(buf, n);
    }
    const int status = pclose(pipe);
    o.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return o;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
}

struct Workdir {
    fs::path dir;
    Workdir() {
        dir = fs::temp_directory_path() / "qtewma_cli_test";
        fs::remove_all(dir);
        fs::create_directories(dir);
    }
    ~Workdir() { fs::remove_all(dir); }
    std::string operator/(const std::string& name) const { return (dir / name).string(); }
};

void write(const std::string& path, const std::string& body) { std::ofstream(path) << body; }

const char* kSpec = R"({"dim": 2, "phi0": {"type": "gaussian", "mean": [0, 0], "covariance": "identity"},
  "change": {"tau": 150, "post": {"type": "mean_shift", "skl": 4}}, "length": 1500, "seed": 7})";

}  // namespace

TEST_CASE("simulate, partition, calibrate, monitor") {
    Workdir w;
    write(w / "spec.json", kSpec);
    auto r = run("simulate --spec " + (w / "spec.json") + " --out " + (w / "s.csv") + " --n-train 64 --train-out " +
                 (w / "train.csv"));
    REQUIRE(r.code == 0);
    const auto stream = slurp(w / "s.csv");
    CHECK(std::count(stream.begin(), stream.end(), '\n') == 1500);
    r = run("simulate --spec " + (w / "spec.json") + " --out " + (w / "s2.csv") + " --n-train 64 --train-out " +
            (w / "train2.csv"));
    CHECK(slurp(w / "s2.csv") == stream);

    REQUIRE(run("partition --train " + (w / "train.csv") + " --k 8 --seed 1 --out " + (w / "p.json")).code == 0);
    REQUIRE(run("calibrate --arl0 200 --lambda 0.03 --k 8 --n 64 --replicates 10000 --length 500 --seed 2 --out " +
                (w / "t.json"))
                .code == 0);
    REQUIRE(run("calibrate --arl0 200 --lambda 0.03 --k 8 --n 64 --replicates 10000 --length 500 --seed 2 "
                "--workers 3 --out " +
                (w / "t3.json"))
                .code == 0);
    CHECK(slurp(w / "t.json") == slurp(w / "t3.json"));

    r = run("monitor --table " + (w / "t.json") + " --partition " + (w / "p.json") + " < " + (w / "s.csv"));
    REQUIRE(r.code == 0);
    std::istringstream lines(r.out);
    std::string line;
    std::size_t rows = 0;
    std::string last;
    while (std::getline(lines, line)) {
        if (line.rfind("DETECTED", 0) == 0) {
            last = line;
            break;
        }
        ++rows;
        CHECK(std::count(line.begin(), line.end(), ',') == 3);
        CHECK(line.rfind(std::to_string(rows) + ",", 0) == 0);
    }
    REQUIRE_FALSE(last.empty());
    CHECK(last == "DETECTED t*=" + std::to_string(rows));
    CHECK(r.out.find(",1\n") != std::string::npos);
}

TEST_CASE("batch calibration and monitoring") {
    Workdir w;
    write(w / "spec.json", kSpec);
    REQUIRE(run("simulate --spec " + (w / "spec.json") + " --out " + (w / "s.csv") + " --n-train 64 --train-out " +
                (w / "train.csv"))
                .code == 0);
    REQUIRE(run("partition --train " + (w / "train.csv") + " --k 8 --seed 1 --out " + (w / "p.json")).code == 0);
    REQUIRE(run("calibrate --arl0 500 --lambda 0.03 --k 8 --n 64 --replicates 10000 --length 1 --seed 2 "
                "--batch-size 16 --out " +
                (w / "b.json"))
                .code == 0);
    const auto r = run("monitor --table " + (w / "b.json") + " --partition " + (w / "p.json") + " --input " +
                       (w / "s.csv"));
    CHECK(r.code == 0);
    CHECK(r.out.rfind("16,", 0) == 0);
}

TEST_CASE("error exit codes are distinct") {
    Workdir w;
    write(w / "spec.json", kSpec);
    REQUIRE(run("simulate --spec " + (w / "spec.json") + " --out " + (w / "s.csv") + " --n-train 128 --train-out " +
                (w / "train.csv"))
                .code == 0);
    REQUIRE(run("partition --train " + (w / "train.csv") + " --k 8 --seed 1 --out " + (w / "p.json")).code == 0);
    REQUIRE(run("calibrate --arl0 200 --lambda 0.03 --k 8 --n 64 --replicates 10000 --length 100 --seed 2 --out " +
                (w / "t.json"))
                .code == 0);

    const int usage = run("calibrate --bogus-flag").code;
    const int io = run("monitor --table " + (w / "missing.json") + " --partition " + (w / "p.json")).code;
    const int mismatch = run("monitor --table " + (w / "t.json") + " --partition " + (w / "p.json") + " < " +
                             (w / "s.csv"))
                             .code;
    write(w / "bad.csv", "0.1,0.2\n0.3,oops\n");
    const int parse = run("simulate --spec " + (w / "bad.csv")).code;
    CHECK(usage == 2);
    CHECK(io == 3);
    CHECK(mismatch == 4);
    CHECK(parse == 5);
    CHECK(run("").code == 2);
}

TEST_CASE("bench writes a report with a deviations ledger") {
    Workdir w;
    const std::string config = R"({"name": "cli", "kind": "delay_far",
      "stream": {"dim": 2, "phi0": {"type": "gaussian", "mean": [0, 0], "covariance": "identity"},
                 "change": {"tau": 100, "post": {"type": "mean_shift", "skl": 3}}, "length": 400, "seed": 1},
      "histogram": {"bins": 8, "n_train": 64},
      "monitors": [{"label": "plain", "variant": "qt-ewma"}],
      "arl0": 100, "table": {"replicates": 10000, "length": 200, "seed": 3},
      "runs": 100, "seed": 5})";
    write(w / "exp.json", config);
    REQUIRE(run("bench --config " + (w / "exp.json") + " --out " + (w / "r1.json")).code == 0);
    REQUIRE(run("bench --config " + (w / "exp.json") + " --out " + (w / "r2.json") + " --workers 2").code == 0);
    const auto body = slurp(w / "r1.json");
    CHECK(body.find("\"deviations\"") != std::string::npos);
    CHECK(body.find("mean") != std::string::npos);
    CHECK(body == slurp(w / "r2.json"));
}
