#pragma once

// Analytical models over configurations and counters: roofline bounds, a
// closed-form performance estimate, latency-bounded batch selection,
// performance/Watt and energy proportionality.

#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tpusim/archconfig.hpp"
#include "tpusim/timesim.hpp"
#include "tpusim/workloads.hpp"

namespace tpusim::analysis {

enum class Bound { Memory, Compute };
std::string to_string(Bound b);

/// min(peak, intensity * mem_bw), in `conv` ops per second. Intensity is in `conv` ops per weight byte.
double attainable(const arch::RooflineDevice& dev, double intensity,
                  arch::OpsConvention conv = arch::OpsConvention::Macs);
Bound bound_kind(const arch::RooflineDevice& dev, double intensity,
                 arch::OpsConvention conv = arch::OpsConvention::Macs);

struct RooflinePoint {
    std::string workload;
    std::string device;
    double intensity = 0.0;           ///< MACs per weight byte
    double attainable = 0.0;          ///< MAC/s
    std::optional<double> measured;   ///< MAC/s
    Bound bound = Bound::Memory;
};

RooflinePoint roofline_point(const std::string& workload, const arch::RooflineDevice& dev, double intensity,
                             std::optional<double> measured = std::nullopt);
/// Measured must not exceed attainable by more than `tolerance` (relative).
bool under_roofline(const RooflinePoint& p, double tolerance = 0.01);

std::string roofline_csv_header();
std::string roofline_csv_row(const RooflinePoint& p);
void to_json(nlohmann::json& j, const RooflinePoint& p);

struct PerfEstimate {
    std::uint64_t cycles = 0;
    double seconds = 0.0;
    std::uint64_t useful_macs = 0;
    double macs_per_s = 0.0;
    double ops_per_s = 0.0;       ///< 2 x MAC/s
    double useful_fraction = 0.0; ///< true / padded MACs
};

/// Closed-form cycle estimate from the tiling plan; no instruction is simulated.
PerfEstimate estimate_perf(const workloads::WorkloadSpec& ws, const arch::TpuConfig& cfg);

/// Signed (estimate - simulated) / simulated cycles.
double relative_cycle_error(const PerfEstimate& est, const timing::PerfCounters& sim);

class NoFeasibleBatch : public Error {
public:
    using Error::Error;
};

struct LatencyModel {
    double a = 0.0;   ///< seconds per inference
    double c = 0.0;   ///< seconds per batch
    double h = 0.0;   ///< host share of response time
    double d = 1.0;   ///< pipeline depth folding in the tail percentile

    void validate() const;
    /// Modeled 99th-percentile response time of a batch.
    double latency(double batch) const { return d * (a * batch + c) / (1.0 - h); }
    /// Inferences per second.
    double throughput(double batch) const { return batch / (a * batch + c); }
};

struct LatencyPoint {
    double batch = 0.0;
    double latency_s = 0.0;
    double ips = 0.0;
};

/// Fits a and c from the throughput of two points, then d from the first point's latency.
LatencyModel fit_latency_model(const LatencyPoint& p1, const LatencyPoint& p2, double h = 0.0);
/// Stored TPU MLP0 rows of the batch/latency table.
std::vector<LatencyPoint> tpu_mlp0_points();

struct BatchChoice {
    std::uint32_t batch = 0;
    double latency_s = 0.0;
    double throughput = 0.0;
};

/// Largest candidate batch whose modeled latency is within `limit`.
BatchChoice max_throughput_under_latency(const LatencyModel& model, const std::vector<std::uint32_t>& candidates,
                                         double limit = std::numeric_limits<double>::infinity());

enum class PowerMode { Total, Incremental };
std::string to_string(PowerMode m);
PowerMode power_mode_from_string(const std::string& s);

struct PerfPerWatt {
    double perf_per_watt = 0.0;
    double baseline_perf_per_watt = 0.0;
    double ratio = 0.0;
};

/// Per-die performance scaled to a server and divided by server power
/// (incremental mode subtracts the host server's share first).
PerfPerWatt perf_per_watt(double perf, const arch::RooflineDevice& dev, double baseline_perf,
                          const arch::RooflineDevice& baseline, PowerMode mode);

/// Die power at `utilization` by linear interpolation over the proportionality curve.
double power_at_load(const arch::RooflineDevice& dev, double utilization, const std::string& workload = "");

double geometric_mean(const std::vector<double>& values);
/// Weighted by preset deployment share; names must be preset names.
double weighted_mean(const std::map<std::string, double>& by_workload);

struct PowerRow {
    std::string workload;
    double total_ratio = 0.0;
    double incremental_ratio = 0.0;
};

struct PowerReport {
    std::string device;
    std::string baseline;
    std::vector<PowerRow> rows;
    double total_gm = 0.0;
    double total_wm = 0.0;
    double incremental_gm = 0.0;
    double incremental_wm = 0.0;
};

/// `relative_perf` maps preset name to per-die performance relative to the baseline.
PowerReport power_report(const arch::RooflineDevice& dev, const arch::RooflineDevice& baseline,
                         const std::map<std::string, double>& relative_perf);
/// Per-die performance of TPU and K80 relative to Haswell, per preset.
std::map<std::string, double> stored_relative_perf(const std::string& device);

void to_json(nlohmann::json& j, const PowerReport& r);

} // namespace tpusim::analysis
