#include <arzno/arzno.hpp>

#include <gtest/gtest.h>
#include <json.hpp>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;

namespace {

struct Result {
    int code = -1;
    std::string out, err;
};

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
}

class Cli : public ::testing::Test {
protected:
    static fs::path dir() {
        static const fs::path d = [] {
            const fs::path p = fs::path(::testing::TempDir()) / "arzno_cli";
            fs::remove_all(p);
            fs::create_directories(p);
            std::ofstream(p / "tiny.ini") << "[grid]\nt_end = 3\n"
                                             "[dataset]\nn_families = 4\nt_end = 2.5\n"
                                             "[deeponet]\nepochs = 5\nbatch_size = 16\nwidth = 32\nlatent = 16\n"
                                             "[bench]\nn = 5\nwarmup = 1\n";
            return p;
        }();
        return d;
    }

    static Result run(const std::string& args) {
        const fs::path o = dir() / "stdout.txt", e = dir() / "stderr.txt";
        const std::string cmd = std::string(ARZNO_CLI_PATH) + " " + args + " >" + o.string() + " 2>" + e.string();
        const int status = std::system(cmd.c_str());
        Result r;
        r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
        r.out = slurp(o);
        r.err = slurp(e);
        return r;
    }

    static std::string tiny() { return "-c " + (dir() / "tiny.ini").string(); }

    // Dataset and model shared by the pipeline tests, built once.
    static void ensure_pipeline() {
        static bool done = false;
        if (done) return;
        const Result g = run(tiny() + " gen-dataset -o " + (dir() / "data").string());
        ASSERT_EQ(g.code, 0) << g.err;
        const Result t = run(tiny() + " train -d " + (dir() / "data").string() + " -o " + (dir() / "model.bin").string());
        ASSERT_EQ(t.code, 0) << t.err;
        done = true;
    }
};

}  // namespace

TEST_F(Cli, UsageErrors) {
    EXPECT_EQ(run("").code, 1);
    EXPECT_EQ(run("frobnicate").code, 1);
    EXPECT_EQ(run("simulate --mode sideways").code, 1);
    EXPECT_EQ(run("--help").code, 0);
}

TEST_F(Cli, BadConfigIsUsageError) {
    std::ofstream(dir() / "bad.ini") << "[grid]\nwat = 1\n";
    const Result r = run("-c " + (dir() / "bad.ini").string() + " simulate --mode open-loop");
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("bad.ini:2:"), std::string::npos) << r.err;
    EXPECT_EQ(run("-c " + (dir() / "missing.ini").string() + " simulate -o " + (dir() / "r").string()).code, 1);
    std::ofstream(dir() / "cfl.ini") << "[grid]\ndt = 6\n";
    EXPECT_EQ(run("-c " + (dir() / "cfl.ini").string() + " simulate --mode open-loop -o " + (dir() / "r").string()).code,
              1);
}

TEST_F(Cli, MissingModelIsIoError) {
    const std::string missing = (dir() / "nope.bin").string();
    EXPECT_EQ(run(tiny() + " simulate --mode no --model " + missing + " -o " + (dir() / "r").string()).code, 3);
    EXPECT_EQ(run(tiny() + " eval --no-states --model " + missing).code, 3);
    EXPECT_EQ(run(tiny() + " bench --model " + missing).code, 3);
    EXPECT_EQ(run(tiny() + " simulate --mode no -o " + (dir() / "r").string()).code, 1);
}

TEST_F(Cli, BenchWithZeroNIsANoOp) {
    const Result r = run(tiny() + " bench -n 0");
    EXPECT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("nothing timed"), std::string::npos);
}

TEST_F(Cli, SimulateWritesArtifactsReproducibly) {
    const fs::path a = dir() / "sim_a", b = dir() / "sim_b";
    ASSERT_EQ(run(tiny() + " simulate --mode exact -o " + a.string()).code, 0);
    ASSERT_EQ(run(tiny() + " simulate --mode exact -o " + b.string()).code, 0);
    for (const char* f : {"trace.csv", "snapshots.csv", "report.json"}) EXPECT_TRUE(fs::exists(a / f)) << f;
    EXPECT_EQ(slurp(a / "snapshots.csv"), slurp(b / "snapshots.csv"));

    // Everything but the wall-clock column (last) must match byte for byte.
    auto strip_timing = [](const std::string& csv) {
        std::istringstream is(csv);
        std::string line, out;
        while (std::getline(is, line)) {
            if (!line.empty() && line[0] != '#') line = line.substr(0, line.rfind(','));
            out += line + "\n";
        }
        return out;
    };
    const std::string ta = slurp(a / "trace.csv");
    EXPECT_EQ(ta.rfind("# config_hash=", 0), 0u);
    EXPECT_EQ(strip_timing(ta), strip_timing(slurp(b / "trace.csv")));
    const auto lines = std::count(ta.begin(), ta.end(), '\n');
    EXPECT_EQ(lines, 2 + 31);  // hash comment, header, t = 0 .. 3 s

    const auto rep = nlohmann::json::parse(slurp(a / "report.json"));
    EXPECT_EQ(rep["mode"], "exact");
    EXPECT_TRUE(rep.contains("final"));
}

TEST_F(Cli, PipelineGenerateTrainEvalBench) {
    ensure_pipeline();
    const auto man = nlohmann::json::parse(slurp(dir() / "data" / "manifest.json"));
    EXPECT_EQ(man["total_records"], 100);
    EXPECT_EQ(man["families"].size(), 4u);

    EXPECT_TRUE(fs::exists(dir() / "model.bin"));
    const std::string hist = slurp(dir() / "model.bin.history.csv");
    EXPECT_EQ(std::count(hist.begin(), hist.end(), '\n'), 6);
    EXPECT_TRUE(fs::exists(dir() / "model.bin.meta.json"));

    const fs::path eval_json = dir() / "eval.json";
    const Result ev = run(tiny() + " eval --no-states -d " + (dir() / "data").string() + " --model " +
                          (dir() / "model.bin").string() + " -o " + eval_json.string());
    ASSERT_EQ(ev.code, 0) << ev.err;
    EXPECT_EQ(ev.err.find("WARNING"), std::string::npos) << ev.err;
    const auto rep = nlohmann::json::parse(slurp(eval_json));
    EXPECT_EQ(rep["test_records"], 25);
    for (const char* k : {"kernel_Ku", "kernel_Kv"}) {
        EXPECT_TRUE(rep[k].contains("max"));
        EXPECT_TRUE(rep[k].contains("mean"));
        EXPECT_TRUE(rep[k].contains("ref_mean"));
    }
    EXPECT_TRUE(rep.contains("epsilon0"));
    EXPECT_NE(ev.out.find("kernel Ku"), std::string::npos);

    const fs::path bench_json = dir() / "bench.json";
    const Result be = run(tiny() + " bench --no-closed-loop --model " + (dir() / "model.bin").string() + " -o " +
                          bench_json.string());
    ASSERT_EQ(be.code, 0) << be.err;
    const auto b = nlohmann::json::parse(slurp(bench_json));
    EXPECT_EQ(b["n"], 5);
    EXPECT_GT(b["speedup_median"].get<double>(), 0.0);
    EXPECT_FALSE(b.contains("closed_loop"));
}

TEST_F(Cli, NeuralOperatorModeRuns) {
    ensure_pipeline();
    const Result r = run(tiny() + " simulate --mode no --model " + (dir() / "model.bin").string() + " -o " +
                         (dir() / "sim_no").string());
    EXPECT_EQ(r.code, 0) << r.err;
    EXPECT_TRUE(fs::exists(dir() / "sim_no" / "trace.csv"));
}

TEST_F(Cli, MismatchedHashWarnsLoudly) {
    ensure_pipeline();
    std::ofstream(dir() / "other.ini") << slurp(dir() / "tiny.ini") << "[dataset]\nseed = 99\n";
    const Result r = run("-c " + (dir() / "other.ini").string() + " eval --no-states -d " + (dir() / "data").string() +
                         " --model " + (dir() / "model.bin").string());
    EXPECT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.err.find("WARNING"), std::string::npos);
    EXPECT_NE(r.err.find("config hash"), std::string::npos);
}

TEST_F(Cli, MissingDatasetIsIoError) {
    EXPECT_EQ(run(tiny() + " train -d " + (dir() / "no_such_data").string()).code, 3);
}
