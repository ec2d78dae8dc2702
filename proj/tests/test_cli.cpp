#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "cli.hpp"
#include "tpusim/isa.hpp"

namespace fs = std::filesystem;
using tpusim::cli::run;

namespace {

struct Result {
    int code;
    std::string out, err;
};

Result cli(const std::vector<std::string>& args, const std::string& stdin_data = "") {
    std::istringstream in(stdin_data);
    std::ostringstream out, err;
    const int code = run(args, in, out, err);
    return {code, out.str(), err.str()};
}

std::string first_line(const std::string& s) { return s.substr(0, s.find('\n')); }

std::string golden(const std::string& name) {
    std::ifstream f(std::string(TPUSIM_GOLDEN_DIR) + "/" + name);
    std::string line;
    std::getline(f, line);
    return line;
}

std::vector<std::string> split(const std::string& line) {
    std::vector<std::string> v;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) v.push_back(cell);
    return v;
}

fs::path scratch(const std::string& name) {
    const auto dir = fs::temp_directory_path() / "tpusim_cli_test";
    fs::create_directories(dir);
    return dir / name;
}

} // namespace

TEST(Cli, GoldenHeaders) {
    EXPECT_EQ(first_line(cli({"simulate", "--workload", "MLP0", "--timing-only"}).out), golden("simulate.csv.header"));
    EXPECT_EQ(first_line(cli({"roofline", "--devices", "k80"}).out), golden("roofline.csv.header"));
    EXPECT_EQ(first_line(cli({"sweep", "--knob", "clock", "--factors", "1"}).out), golden("sweep.csv.header"));
    EXPECT_EQ(first_line(cli({"tpu-prime"}).out), golden("tpu_prime.csv.header"));
    EXPECT_EQ(first_line(cli({"validate-model", "--workloads", "LSTM0"}).out), golden("validate_model.csv.header"));
    EXPECT_EQ(first_line(cli({"power"}).out), golden("power.csv.header"));
    EXPECT_EQ(first_line(cli({"power", "--curve"}).out), golden("power_curve.csv.header"));
}

TEST(Cli, HelpListsEveryFlag) {
    const std::map<std::string, std::vector<std::string>> flags = {
        {"simulate", {"--workload", "--timing-only", "--format", "--timeline", "--config", "--out", "--seed"}},
        {"lower", {"--workload", "--program", "--program-format", "--config", "--out", "--seed"}},
        {"roofline", {"--devices", "--workloads", "--no-measure", "--config", "--out", "--seed"}},
        {"sweep", {"--knob", "--factors", "--workloads", "--config", "--out", "--seed"}},
        {"tpu-prime", {"--host-scale", "--format", "--config", "--out"}},
        {"latency", {"--limit-ms", "--host-share", "--candidates", "--out"}},
        {"power", {"--device", "--baseline", "--format", "--curve", "--out"}},
        {"validate-model", {"--tolerance", "--workloads", "--config", "--out", "--seed"}},
        {"encode", {"--in", "--out"}},
        {"decode", {"--in", "--out"}},
    };
    const auto top = cli({"--help"});
    EXPECT_EQ(top.code, 0);
    for (const auto& [cmd, fl] : flags) {
        EXPECT_NE(top.out.find(cmd), std::string::npos) << cmd;
        const auto r = cli({cmd, "--help"});
        EXPECT_EQ(r.code, 0) << cmd;
        for (const auto& f : fl) EXPECT_NE(r.out.find(f), std::string::npos) << cmd << " " << f;
    }
}

TEST(Cli, UsageErrorsExitTwo) {
    EXPECT_EQ(cli({}).code, 2);
    EXPECT_EQ(cli({"frobnicate"}).code, 2);
    EXPECT_EQ(cli({"sweep", "--knob", "voltage"}).code, 2);
    EXPECT_EQ(cli({"simulate", "--workload", "MLP0"}).code, 2);  // functional run needs --seed
    EXPECT_EQ(cli({"simulate", "--workload", "random", "--timing-only"}).code, 2);
    EXPECT_EQ(cli({"simulate", "--workload", "NoSuchNet", "--timing-only"}).code, 2);
}

TEST(Cli, RuntimeErrorsCarryPath) {
    const auto r = cli({"decode", "--in", "/nonexistent/prog.bin"});
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("/nonexistent/prog.bin"), std::string::npos);
    EXPECT_EQ(cli({"sweep", "--knob", "memory", "--factors", "8"}).code, 1);
}

TEST(Cli, SimulateBucketsSumToHundred) {
    const auto r = cli({"simulate", "--workload", "MLP0", "--timing-only"});
    ASSERT_EQ(r.code, 0) << r.err;
    std::stringstream ss(r.out);
    std::string header, row;
    std::getline(ss, header);
    std::getline(ss, row);
    const auto h = split(header), v = split(row);
    ASSERT_EQ(h.size(), v.size());
    double sum = 0;
    for (std::size_t i = 0; i < h.size(); ++i)
        if (h[i] == "array_active_pct" || h[i] == "weight_stall_pct" || h[i] == "weight_shift_pct" ||
            h[i] == "non_matrix_pct")
            sum += std::stod(v[i]);
    EXPECT_NEAR(sum, 100.0, 1e-3);
}

TEST(Cli, FunctionalSimulateMatchesTimingOnly) {
    const auto a = cli({"simulate", "--workload", "LSTM1", "--seed", "3"});
    const auto b = cli({"simulate", "--workload", "LSTM1", "--timing-only"});
    ASSERT_EQ(a.code, 0) << a.err;
    EXPECT_EQ(a.out, b.out);
}

TEST(Cli, OutputsAreDeterministic) {
    for (const std::vector<std::string>& args :
         {std::vector<std::string>{"simulate", "--workload", "random", "--seed", "9"},
          {"roofline", "--devices", "all"},
          {"sweep", "--knob", "all"},
          {"tpu-prime", "--format", "json"},
          {"latency"},
          {"power", "--format", "json"}}) {
        const auto a = cli(args), b = cli(args);
        EXPECT_EQ(a.code, 0) << args[0] << a.err;
        EXPECT_EQ(a.out, b.out) << args[0];
    }
}

TEST(Cli, RooflineRidgeRows) {
    const auto r = cli({"roofline", "--devices", "tpu", "--no-measure"});
    EXPECT_NE(r.out.find("TPU,ridge,1349.2706,"), std::string::npos);
    EXPECT_NE(r.out.find("TPU,ridge_reference,1350.0000,"), std::string::npos);
}

TEST(Cli, OutFileAndSidecar) {
    const auto path = scratch("sweep.csv");
    fs::remove(path);
    const auto r = cli({"sweep", "--knob", "memory", "--factors", "1,2", "--out", path.string()});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_TRUE(r.out.empty());
    EXPECT_TRUE(fs::exists(path));
    std::ifstream meta(path.string() + ".meta.json");
    std::string text((std::istreambuf_iterator<char>(meta)), {});
    EXPECT_NE(text.find("\"command\": \"sweep\""), std::string::npos);
    std::ifstream data(path);
    std::string first;
    std::getline(data, first);
    EXPECT_EQ(first, golden("sweep.csv.header"));
}

TEST(Cli, EncodeDecodeIdentity) {
    const auto prog = scratch("mlp.bin");
    ASSERT_EQ(cli({"lower", "--workload", "MLP1", "--program", prog.string()}).code, 0);
    std::ifstream f(prog, std::ios::binary);
    const std::string original((std::istreambuf_iterator<char>(f)), {});
    ASSERT_FALSE(original.empty());

    const auto text = cli({"decode", "--in", prog.string()});
    ASSERT_EQ(text.code, 0) << text.err;
    const auto bin = cli({"encode"}, text.out);
    ASSERT_EQ(bin.code, 0) << bin.err;
    EXPECT_EQ(bin.out, original);
    const auto again = cli({"decode"}, bin.out);
    EXPECT_EQ(again.out, text.out);
}

TEST(Cli, ValidateModelPassesOnPresets) {
    const auto r = cli({"validate-model"});
    EXPECT_EQ(r.code, 0) << r.out;
    EXPECT_EQ(r.out.find("FAIL"), std::string::npos);
    // An impossible tolerance turns the same report into a validation failure.
    EXPECT_EQ(cli({"validate-model", "--tolerance", "1e-9"}).code, 1);
}

TEST(Cli, LatencyInfeasibleLimitFails) {
    EXPECT_EQ(cli({"latency", "--limit-ms", "0.001"}).code, 1);
    const auto r = cli({"latency", "--limit-ms", "7"});
    EXPECT_EQ(r.code, 0);
    EXPECT_NE(r.out.find("\"batch\": 200"), std::string::npos);
}
