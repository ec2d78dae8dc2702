#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "tpusim/analysis.hpp"
#include "tpusim/lowering.hpp"

using namespace tpusim;
using namespace tpusim::analysis;

namespace {

timing::PerfCounters simulate(const workloads::WorkloadSpec& ws, const arch::TpuConfig& cfg) {
    const auto lp = lowering::lower(ws, cfg);
    timing::TimingOptions o;
    o.useful_macs = lp.useful_macs;
    return timing::simulate_timed(lp.program, cfg, o).counters;
}

workloads::WorkloadSpec fc_stack(std::uint32_t batch, std::uint32_t dim, int layers) {
    workloads::WorkloadSpec ws{"fc", {}, batch, 8};
    for (int i = 0; i < layers; ++i) ws.layers.push_back(workloads::fc(dim, dim));
    return ws;
}

} // namespace

TEST(Roofline, AttainableExamples) {
    const auto tpu = arch::tpu_device();
    EXPECT_NEAR(attainable(tpu, 200), 200 * 34e9, 1.0);
    EXPECT_LT(attainable(tpu, 200), tpu.peak_macs_per_s());
    EXPECT_DOUBLE_EQ(attainable(tpu, arch::ridge_point(tpu, arch::OpsConvention::Macs)), tpu.peak_macs_per_s());
    EXPECT_DOUBLE_EQ(attainable(tpu, 2888), tpu.peak_macs_per_s());
    EXPECT_EQ(bound_kind(tpu, 2888), Bound::Compute);
    EXPECT_EQ(bound_kind(tpu, 200), Bound::Memory);
    EXPECT_THROW(attainable(tpu, 0), Error);
}

TEST(Roofline, PiecewiseLinearNondecreasing) {
    const auto dev = arch::k80_device();
    const double ridge = arch::ridge_point(dev, arch::OpsConvention::Macs);
    double prev = 0;
    for (double i = 0.5; i < 100; i += 0.5) {
        const double a = attainable(dev, i);
        EXPECT_GE(a, prev);
        if (i < ridge) EXPECT_NEAR(a, i * dev.mem_bw, 1e-3 * a);
        else EXPECT_DOUBLE_EQ(a, dev.peak_macs_per_s());
        prev = a;
    }
}

TEST(Roofline, MeasuredRunsStayUnderRoof) {
    const arch::TpuConfig cfg;
    const auto dev = arch::roofline_device(cfg);
    for (const auto& ws : workloads::all_presets()) {
        const auto c = simulate(ws, cfg);
        const auto p = roofline_point(ws.name, dev, workloads::operational_intensity(ws), c.achieved_macs_per_s);
        EXPECT_TRUE(under_roofline(p)) << ws.name << " " << *p.measured << " > " << p.attainable;
    }
}

TEST(Estimator, MatchesTimesimOnPresets) {
    const arch::TpuConfig cfg;
    for (const auto& ws : workloads::all_presets()) {
        const double err = relative_cycle_error(estimate_perf(ws, cfg), simulate(ws, cfg));
        EXPECT_LE(std::abs(err), 0.10) << ws.name;
    }
}

TEST(Estimator, MatchesTimesimOnRandomWorkloads) {
    const arch::TpuConfig cfg;
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const auto ws = workloads::random_workload(seed);
        const double err = relative_cycle_error(estimate_perf(ws, cfg), simulate(ws, cfg));
        EXPECT_LE(std::abs(err), 0.10) << ws.name;
    }
}

TEST(Estimator, LargeBatchNearPeak) {
    const arch::TpuConfig cfg;
    const auto e = estimate_perf(fc_stack(2048, 2048, 6), cfg);
    EXPECT_GT(e.macs_per_s, 0.6 * cfg.peak_macs_per_s() * e.useful_fraction);
    EXPECT_LE(e.macs_per_s, cfg.peak_macs_per_s());
}

TEST(Estimator, SmallBatchBandwidthBound) {
    const arch::TpuConfig cfg;
    const auto e = estimate_perf(fc_stack(64, 2048, 6), cfg);
    EXPECT_NEAR(e.macs_per_s, 64 * cfg.weight_bw, 0.15 * 64 * cfg.weight_bw);
}

TEST(Latency, FitReproducesThroughput) {
    const auto pts = tpu_mlp0_points();
    const auto m = fit_latency_model(pts[0], pts[1]);
    EXPECT_NEAR(m.throughput(200), 225000, 1e-6);
    EXPECT_NEAR(m.throughput(250), 280000, 1e-6);
    EXPECT_NEAR(m.latency(200), 7.0e-3, 1e-12);
}

TEST(Latency, UnconstrainedPicksLargest) {
    const LatencyModel m{1e-6, 1e-3, 0.1, 2};
    EXPECT_EQ(max_throughput_under_latency(m, {8, 64, 16}).batch, 64u);
    EXPECT_THROW(max_throughput_under_latency(m, {8}, 1e-9), NoFeasibleBatch);
    EXPECT_THROW(max_throughput_under_latency(m, {}), Error);
}

TEST(Latency, SelectionMonotoneInLimit) {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(0, 1);
    const std::vector<std::uint32_t> cands = {1, 2, 4, 8, 16, 32, 64, 128, 200, 250, 512};
    for (int trial = 0; trial < 100; ++trial) {
        const LatencyModel m{1e-7 + 1e-5 * u(rng), 1e-4 * u(rng), 0.9 * u(rng), 1 + 9 * u(rng)};
        std::uint32_t prev = UINT32_MAX;
        double prev_tp = INFINITY;
        for (double limit = 1.0; limit > 1e-6; limit *= 0.8) {
            std::uint32_t b = 0;
            double tp = 0;
            try {
                const auto c = max_throughput_under_latency(m, cands, limit);
                b = c.batch;
                tp = c.throughput;
            } catch (const NoFeasibleBatch&) {
            }
            EXPECT_LE(b, prev);
            EXPECT_LE(tp, prev_tp);
            prev = b;
            prev_tp = tp;
        }
    }
}

TEST(Power, StoredPointsAtTenPercent) {
    const auto tpu = arch::tpu_device(), cpu = arch::haswell_device(), gpu = arch::k80_device();
    EXPECT_DOUBLE_EQ(power_at_load(tpu, 0.1) / tpu.die_busy_watts, 0.88);
    EXPECT_DOUBLE_EQ(power_at_load(cpu, 0.1) / cpu.die_busy_watts, 0.56);
    EXPECT_DOUBLE_EQ(power_at_load(gpu, 0.1) / gpu.die_busy_watts, 0.66);
    EXPECT_DOUBLE_EQ(power_at_load(tpu, 0.1, "LSTM1") / tpu.die_busy_watts, 0.94);
    EXPECT_DOUBLE_EQ(power_at_load(tpu, 1.0), tpu.die_busy_watts);
    EXPECT_THROW(power_at_load(tpu, 1.5), Error);
}

TEST(Power, Nondecreasing) {
    for (const auto& d : arch::preset_devices()) {
        double prev = 0;
        for (int i = 0; i <= 1000; ++i) {
            const double w = power_at_load(d, i / 1000.0);
            EXPECT_GE(w, prev);
            prev = w;
        }
    }
}

TEST(Power, PerfPerWattIdentityAndIncremental) {
    const auto tpu = arch::tpu_device(), cpu = arch::haswell_device();
    EXPECT_DOUBLE_EQ(perf_per_watt(3.0, tpu, 3.0, tpu, PowerMode::Total).ratio, 1.0);
    const double tot = perf_per_watt(29.2, tpu, 1.0, cpu, PowerMode::Total).ratio;
    const double inc = perf_per_watt(29.2, tpu, 1.0, cpu, PowerMode::Incremental).ratio;
    EXPECT_GE(inc, tot);
    auto bad = tpu;
    bad.host_watts = bad.server_busy_watts;
    EXPECT_THROW(perf_per_watt(1.0, bad, 1.0, cpu, PowerMode::Incremental), Error);
}

TEST(Power, ReportMeans) {
    const auto r = power_report(arch::tpu_device(), arch::haswell_device(), stored_relative_perf("tpu"));
    EXPECT_EQ(r.rows.size(), 6u);
    EXPECT_GE(r.incremental_gm, r.total_gm);
    EXPECT_GE(r.incremental_wm, r.total_wm);
}

TEST(Means, StoredTableMeans) {
    const auto tpu = stored_relative_perf("tpu");
    std::vector<double> v;
    for (const auto& [k, x] : tpu) v.push_back(x);
    EXPECT_NEAR(geometric_mean(v), 14.5, 0.05);
    // Pair shares 61/29/5% split evenly within each pair.
    const double wm = (0.305 * (41.0 + 18.5) + 0.145 * (3.5 + 1.2) + 0.025 * (40.3 + 71.0)) / 0.95;
    EXPECT_NEAR(weighted_mean(tpu), wm, 1e-12);
    const auto gpu = stored_relative_perf("k80");
    EXPECT_NEAR(weighted_mean(gpu), (0.305 * 2.8 + 0.145 * 1.6 + 0.025 * 4.3) / 0.95, 1e-12);
    EXPECT_THROW(geometric_mean({}), Error);
}
