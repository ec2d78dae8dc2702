#include <gtest/gtest.h>

#include <cmath>

#include "tpusim/analysis.hpp"
#include "tpusim/dse.hpp"

using namespace tpusim;
using namespace tpusim::dse;

namespace {

double cell(const SweepResult& r, double f, const std::string& w) {
    for (const auto& c : r.cells)
        if (c.factor == f && c.workload == w) return c.speedup;
    ADD_FAILURE() << "missing cell " << f << " " << w;
    return 0;
}

const SweepMean& mean(const SweepResult& r, double f) {
    for (const auto& m : r.means)
        if (m.factor == f) return m;
    throw std::runtime_error("missing mean");
}

} // namespace

TEST(Knobs, ApplyScalesOneField) {
    const arch::TpuConfig cfg;
    EXPECT_DOUBLE_EQ(apply_knob(cfg, Knob::Memory, 4).weight_bw, 136e9);
    EXPECT_DOUBLE_EQ(apply_knob(cfg, Knob::Clock, 2).clock_hz, 1400e6);
    EXPECT_EQ(apply_knob(cfg, Knob::Clock, 2).acc_entries, cfg.acc_entries);
    EXPECT_EQ(apply_knob(cfg, Knob::ClockPlus, 2).acc_entries, 2 * cfg.acc_entries);
    EXPECT_EQ(apply_knob(cfg, Knob::Matrix, 0.5).matrix_dim, 128u);
    EXPECT_EQ(apply_knob(cfg, Knob::MatrixPlus, 2).acc_entries, 4 * cfg.acc_entries);
    EXPECT_THROW(apply_knob(cfg, Knob::Memory, 0.2), ConfigError);
    EXPECT_THROW(apply_knob(cfg, Knob::Memory, 4.5), ConfigError);
    EXPECT_EQ(knob_from_string("matrix+"), Knob::MatrixPlus);
    EXPECT_THROW(knob_from_string("voltage"), ConfigError);
}

TEST(Sweep, UnitFactorIsBaseline) {
    const arch::TpuConfig cfg;
    const auto presets = workloads::all_presets();
    for (Knob k : all_knobs()) {
        const auto r = sweep(presets, k, {1.0}, cfg);
        for (const auto& c : r.cells) {
            EXPECT_EQ(c.speedup, 1.0) << to_string(k) << " " << c.workload;
            EXPECT_EQ(c.ops_per_s, analysis::estimate_perf(workloads::make_preset(c.workload), cfg).ops_per_s);
        }
        EXPECT_EQ(mean(r, 1.0).weighted, 1.0);
    }
}

TEST(Sweep, MemoryBandwidthHelpsMemoryBoundApps) {
    const auto r = sweep(workloads::all_presets(), Knob::Memory, {0.25, 0.5, 1, 2, 4}, arch::TpuConfig{});
    for (const char* w : {"MLP0", "MLP1", "LSTM0", "LSTM1"}) {
        EXPECT_GE(cell(r, 4, w), 2.5) << w;
        double prev = 0;
        for (double f : {0.25, 0.5, 1.0, 2.0, 4.0}) {
            EXPECT_GE(cell(r, f, w), prev) << w << " " << f;
            prev = cell(r, f, w);
        }
    }
}

TEST(Sweep, ClockHelpsOnlyCnns) {
    const auto r = sweep(workloads::all_presets(), Knob::Clock, {4}, arch::TpuConfig{});
    for (const char* w : {"MLP0", "MLP1", "LSTM0", "LSTM1"}) EXPECT_LE(cell(r, 4, w), 1.2) << w;
    for (const char* w : {"CNN0", "CNN1"}) {
        EXPECT_GE(cell(r, 4, w), 1.6) << w;
        EXPECT_LE(cell(r, 4, w), 2.4) << w;
    }
}

TEST(Sweep, BiggerMatrixDoesNotHelp) {
    const auto r = sweep(workloads::all_presets(), Knob::Matrix, {2}, arch::TpuConfig{});
    EXPECT_LE(mean(r, 2).weighted, 1.05);
}

TEST(Sweep, DoesNotFitCellsAreReported) {
    // Shrinking the accumulators by 16x leaves too few entries for some convolution chunks.
    const auto r = sweep(workloads::all_presets(), Knob::MatrixPlus, {0.25}, arch::TpuConfig{});
    bool missing = false;
    for (const auto& c : r.cells)
        if (!c.error.empty()) {
            missing = true;
            EXPECT_EQ(c.speedup, 0.0);
        }
    EXPECT_TRUE(missing);
    EXPECT_GT(mean(r, 0.25).geometric, 0.0);
    const auto csv = sweep_csv(r);
    EXPECT_EQ(csv.substr(0, csv.find('\n')), sweep_csv_header());
    EXPECT_NE(csv.find("does_not_fit:"), std::string::npos);
}

TEST(Tiling, WorkedExample) {
    const auto a = tiling_cost(600, 600, 256, 34e9);
    EXPECT_EQ(a.steps, 9u);
    EXPECT_NEAR(a.seconds, 9.0 * 65536 / 34e9, 1e-15);
    EXPECT_NEAR(a.seconds, 18e-6, 1.8e-6);
    const auto b = tiling_cost(600, 600, 512, 34e9);
    EXPECT_EQ(b.steps, 4u);
    EXPECT_NEAR(b.seconds, 32e-6, 3.2e-6);
    EXPECT_GT(b.seconds, a.seconds);
    EXPECT_THROW(tiling_cost(0, 600, 256, 34e9), Error);
}

TEST(Tiling, StepsCoverMatrix) {
    for (std::uint64_t n = 1; n < 700; n += 37)
        for (std::uint64_t t : {64u, 128u, 256u, 512u}) {
            const auto c = tiling_cost(n, 2 * n + 1, t, 1e9);
            EXPECT_GE(c.steps * t * t, n * (2 * n + 1));
        }
}

TEST(HostAdjust, Formula) {
    EXPECT_DOUBLE_EQ(host_adjusted(3.9, 0.0), 3.9);
    EXPECT_NEAR(host_adjusted(4.0, 0.5), 1.0 / (0.5 + 0.125), 1e-12);
    EXPECT_DOUBLE_EQ(host_adjusted(1.0, 0.3), 1.0);
    EXPECT_LT(host_adjusted(3.9, 0.1), 3.9);
    EXPECT_THROW(host_adjusted(2.0, 1.0), Error);
    EXPECT_THROW(host_adjusted(2.0, -0.1), Error);
    EXPECT_DOUBLE_EQ(host_share(0.21), 0.21 / 1.21);
    EXPECT_THROW(host_fraction("Bogus"), ConfigError);
}

TEST(Prime, Variants) {
    const auto r = tpu_prime(arch::TpuConfig{});
    ASSERT_EQ(r.variants.size(), 3u);
    EXPECT_NEAR(r.baseline_ridge, 1349.2, 1.0);
    const auto& clock = r.variants[0];
    const auto& mem = r.variants[1];
    EXPECT_LE(clock.wm, 1.1);
    EXPECT_GE(mem.wm, 3.0);
    EXPECT_LE(mem.wm, 4.5);
    EXPECT_NEAR(mem.ridge, 1349.27 / 5, 0.1);
    for (const auto& v : r.variants) {
        EXPECT_LT(v.adjusted_wm, v.wm) << v.name;
        EXPECT_LT(v.adjusted_gm, v.gm) << v.name;
    }
}

TEST(Prime, ZeroHostLeavesGains) {
    const auto r = tpu_prime(arch::TpuConfig{}, 0.0);
    for (const auto& v : r.variants) {
        EXPECT_DOUBLE_EQ(v.adjusted_wm, v.wm);
        EXPECT_DOUBLE_EQ(v.adjusted_gm, v.gm);
    }
}
