#include "tpusim/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "tpusim/lowering.hpp"

namespace tpusim::analysis {

std::string to_string(Bound b) { return b == Bound::Memory ? "memory" : "compute"; }

double attainable(const arch::RooflineDevice& dev, double intensity, arch::OpsConvention conv) {
    if (!(intensity > 0)) throw Error("attainable: intensity must be > 0");
    return std::min(dev.peak_ops_in(conv), intensity * dev.mem_bw);
}

Bound bound_kind(const arch::RooflineDevice& dev, double intensity, arch::OpsConvention conv) {
    return intensity * dev.mem_bw < dev.peak_ops_in(conv) ? Bound::Memory : Bound::Compute;
}

RooflinePoint roofline_point(const std::string& workload, const arch::RooflineDevice& dev, double intensity,
                             std::optional<double> measured) {
    RooflinePoint p;
    p.workload = workload;
    p.device = dev.name;
    p.intensity = intensity;
    p.attainable = attainable(dev, intensity);
    p.measured = measured;
    p.bound = bound_kind(dev, intensity);
    return p;
}

bool under_roofline(const RooflinePoint& p, double tolerance) {
    return !p.measured || *p.measured <= p.attainable * (1.0 + tolerance);
}

std::string roofline_csv_header() { return "device,workload,intensity_macs_per_byte,attainable_macs_per_s,measured_macs_per_s,bound"; }

std::string roofline_csv_row(const RooflinePoint& p) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%s,%s,%.4f,%.6e,", p.device.c_str(), p.workload.c_str(), p.intensity, p.attainable);
    std::string row = buf;
    if (p.measured) {
        std::snprintf(buf, sizeof buf, "%.6e", *p.measured);
        row += buf;
    }
    return row + "," + to_string(p.bound);
}

void to_json(nlohmann::json& j, const RooflinePoint& p) {
    j = {{"device", p.device},
         {"workload", p.workload},
         {"intensity", p.intensity},
         {"attainable", p.attainable},
         {"bound", to_string(p.bound)}};
    j["measured"] = p.measured ? nlohmann::json(*p.measured) : nlohmann::json(nullptr);
}

// Two-stage pipeline per layer: the weight-fetch chain runs ahead of the matrix
// unit by at most the FIFO capacity, and each tile pass occupies the matrix unit
// for max(compute, shift) once its tile has arrived.
PerfEstimate estimate_perf(const workloads::WorkloadSpec& ws, const arch::TpuConfig& cfg) {
    const auto lp = lowering::lower(ws, cfg);
    const auto& plan = lp.plan;
    const double dim = cfg.matrix_dim;
    const double cap = cfg.fifo_depth_tiles == 0 ? 0.0 : cfg.fifo_depth_tiles + 1.0;

    auto fetch = [&](const lowering::LayerPlan& l) {
        return static_cast<double>(cfg.weight_fetch_cycles(cfg.tile_bytes() * (l.wide_weights ? 2 : 1)));
    };
    auto compute = [](const lowering::LayerPlan& l) {
        return static_cast<double>(l.matrix_cycles) / static_cast<double>(l.tile_passes);
    };

    const auto& first = plan.layers.front();
    const auto& last = plan.layers.back();
    const double d_in = static_cast<double>(cfg.pcie_cycles(plan.input_dma_bytes));
    const double d_out = static_cast<double>(cfg.pcie_cycles(plan.output_dma_bytes));

    // One pass per input-channel tile of layer 0 streams behind the input DMA.
    double t = std::max(0.0, d_in - first.row_tiles * std::max(compute(first), dim));
    double fetched = 0.0;
    double prev_pass = 0.0;
    double first_column_end = 0.0;  // of the last layer
    for (std::size_t i = 0; i < plan.layers.size(); ++i) {
        const auto& l = plan.layers[i];
        const double n = static_cast<double>(l.tile_passes);
        const double m = compute(l), f = fetch(l);
        if (i > 0) {
            const auto& prev = plan.layers[i - 1];
            // A layer whose input is a single column tile must wait for its activation.
            if (prev.col_tiles * prev.groups == 1) t += std::max(0.0, dim + 1 - compute(prev));
        }
        const double k = n / (l.col_tiles * l.groups);
        if (cap == 0) {
            first_column_end = t + k * (f + dim + m);
            t += n * (f + dim + m);
            continue;
        }
        const double pass = std::max(m, dim);
        const double fetch_start = i == 0 ? 0.0 : std::max(fetched, t - cap * prev_pass);
        fetched = std::max(fetch_start + n * f, n > cap ? t + (n - cap) * pass + f : 0.0);
        first_column_end = std::max({t + k * pass, fetch_start + k * f + dim + m, fetch_start + f + dim + k * pass});
        t = std::max({t + n * pass, fetched + dim + m, fetch_start + f + dim + n * pass});
        prev_pass = std::max(pass, f);
    }

    // Tail: accumulator latency, last activation column, then whatever output DMA is left.
    const double cols = static_cast<double>(last.col_tiles) * last.groups;
    const double act = static_cast<double>(last.activation_rows) / cols;
    const double first_out = first_column_end + dim + act;
    const double end = std::max(t + dim + act + d_out / cols, first_out + d_out);

    PerfEstimate e;
    e.cycles = static_cast<std::uint64_t>(std::llround(end));
    e.seconds = static_cast<double>(e.cycles) / cfg.clock_hz;
    e.useful_macs = plan.true_macs;
    e.macs_per_s = static_cast<double>(e.useful_macs) / e.seconds;
    e.ops_per_s = 2.0 * e.macs_per_s;
    e.useful_fraction = lowering::useful_mac_fraction(plan);
    return e;
}

double relative_cycle_error(const PerfEstimate& est, const timing::PerfCounters& sim) {
    return (static_cast<double>(est.cycles) - static_cast<double>(sim.total_cycles)) /
           static_cast<double>(sim.total_cycles);
}

void LatencyModel::validate() const {
    if (!(a >= 0) || !(c >= 0)) throw ConfigError("latency", "a and c must be >= 0");
    if (!(h >= 0) || !(h < 1)) throw ConfigError("latency", "host share must be in [0, 1)");
    if (!(d >= 1)) throw ConfigError("latency", "pipeline depth must be >= 1");
}

LatencyModel fit_latency_model(const LatencyPoint& p1, const LatencyPoint& p2, double h) {
    if (p1.batch == p2.batch) throw Error("fit_latency_model: batches must differ");
    const double t1 = p1.batch / p1.ips, t2 = p2.batch / p2.ips;
    LatencyModel m;
    m.a = (t2 - t1) / (p2.batch - p1.batch);
    m.c = t1 - m.a * p1.batch;
    m.h = h;
    m.d = p1.latency_s * (1.0 - h) / t1;
    m.validate();
    return m;
}

std::vector<LatencyPoint> tpu_mlp0_points() { return {{200, 7.0e-3, 225000}, {250, 10.0e-3, 280000}}; }

BatchChoice max_throughput_under_latency(const LatencyModel& model, const std::vector<std::uint32_t>& candidates,
                                         double limit) {
    if (candidates.empty()) throw Error("max_throughput_under_latency: no candidate batches");
    model.validate();
    std::optional<BatchChoice> best;
    for (const std::uint32_t b : candidates) {
        const double lat = model.latency(b);
        if (lat > limit) continue;
        if (!best || b > best->batch) best = BatchChoice{b, lat, model.throughput(b)};
    }
    if (!best) throw NoFeasibleBatch("no candidate batch meets the latency limit");
    return *best;
}

std::string to_string(PowerMode m) { return m == PowerMode::Total ? "total" : "incremental"; }

PowerMode power_mode_from_string(const std::string& s) {
    if (s == "total") return PowerMode::Total;
    if (s == "incremental") return PowerMode::Incremental;
    throw Error("unknown power mode \"" + s + "\"");
}

namespace {

double server_watts(const arch::RooflineDevice& dev, PowerMode mode) {
    const double w = mode == PowerMode::Total ? dev.server_busy_watts : dev.server_busy_watts - dev.host_watts;
    if (!(w > 0)) throw Error(dev.name + ": non-positive " + to_string(mode) + " power");
    return w;
}

} // namespace

PerfPerWatt perf_per_watt(double perf, const arch::RooflineDevice& dev, double baseline_perf,
                          const arch::RooflineDevice& baseline, PowerMode mode) {
    if (!(perf >= 0) || !(baseline_perf > 0)) throw Error("perf_per_watt: performance must be positive");
    PerfPerWatt r;
    r.perf_per_watt = perf * dev.dies_per_server / server_watts(dev, mode);
    r.baseline_perf_per_watt = baseline_perf * baseline.dies_per_server / server_watts(baseline, mode);
    r.ratio = r.perf_per_watt / r.baseline_perf_per_watt;
    return r;
}

double power_at_load(const arch::RooflineDevice& dev, double utilization, const std::string& workload) {
    if (!(utilization >= 0) || !(utilization <= 1)) throw Error("power_at_load: utilization must be in [0, 1]");
    const auto it = dev.workload_curves.find(workload);
    const auto& curve = it == dev.workload_curves.end() ? dev.proportionality_curve : it->second;
    const double x = utilization * (arch::kCurvePoints - 1);
    const std::size_t i = std::min<std::size_t>(static_cast<std::size_t>(x), arch::kCurvePoints - 2);
    const double frac = curve[i] + (curve[i + 1] - curve[i]) * (x - static_cast<double>(i));
    return frac * dev.die_busy_watts;
}

double geometric_mean(const std::vector<double>& values) {
    if (values.empty()) throw Error("geometric_mean: no values");
    double s = 0;
    for (double v : values) {
        if (!(v > 0)) throw Error("geometric_mean: values must be positive");
        s += std::log(v);
    }
    return std::exp(s / static_cast<double>(values.size()));
}

double weighted_mean(const std::map<std::string, double>& by_workload) {
    double num = 0, den = 0;
    for (const auto& [name, v] : by_workload) {
        const double w = workloads::deployment_weight(name);
        num += w * v;
        den += w;
    }
    if (!(den > 0)) throw Error("weighted_mean: no weighted workloads");
    return num / den;
}

std::map<std::string, double> stored_relative_perf(const std::string& device) {
    const auto& names = workloads::preset_names();
    std::vector<double> v;
    const auto d = arch::device_by_name(device).name;
    if (d == "TPU") v = {41.0, 18.5, 3.5, 1.2, 40.3, 71.0};
    else if (d == "K80") v = {2.5, 0.3, 0.4, 1.2, 1.6, 2.7};
    else v = {1, 1, 1, 1, 1, 1};
    std::map<std::string, double> m;
    for (std::size_t i = 0; i < names.size(); ++i) m[names[i]] = v[i];
    return m;
}

PowerReport power_report(const arch::RooflineDevice& dev, const arch::RooflineDevice& baseline,
                         const std::map<std::string, double>& relative_perf) {
    PowerReport r;
    r.device = dev.name;
    r.baseline = baseline.name;
    std::vector<double> tot, inc;
    std::map<std::string, double> tot_m, inc_m;
    for (const auto& name : workloads::preset_names()) {
        const auto it = relative_perf.find(name);
        if (it == relative_perf.end()) continue;
        PowerRow row{name, perf_per_watt(it->second, dev, 1.0, baseline, PowerMode::Total).ratio,
                     perf_per_watt(it->second, dev, 1.0, baseline, PowerMode::Incremental).ratio};
        tot.push_back(row.total_ratio);
        inc.push_back(row.incremental_ratio);
        tot_m[name] = row.total_ratio;
        inc_m[name] = row.incremental_ratio;
        r.rows.push_back(row);
    }
    r.total_gm = geometric_mean(tot);
    r.incremental_gm = geometric_mean(inc);
    r.total_wm = weighted_mean(tot_m);
    r.incremental_wm = weighted_mean(inc_m);
    return r;
}

void to_json(nlohmann::json& j, const PowerReport& r) {
    j = {{"device", r.device},
         {"baseline", r.baseline},
         {"total_gm", r.total_gm},
         {"total_wm", r.total_wm},
         {"incremental_gm", r.incremental_gm},
         {"incremental_wm", r.incremental_wm}};
    auto& rows = j["rows"] = nlohmann::json::array();
    for (const auto& row : r.rows)
        rows.push_back({{"workload", row.workload}, {"total", row.total_ratio}, {"incremental", row.incremental_ratio}});
}

} // namespace tpusim::analysis
