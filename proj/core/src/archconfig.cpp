#include "tpusim/archconfig.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <set>

#include "tpusim/error.hpp"

namespace tpusim::arch {

using nlohmann::json;

std::string to_string(OpsConvention conv) {
    return conv == OpsConvention::Macs ? "macs" : "ops2x";
}

OpsConvention ops_convention_from_string(const std::string& s) {
    if (s == "macs") return OpsConvention::Macs;
    if (s == "ops2x") return OpsConvention::Ops2x;
    throw ConfigError("ops_convention", "expected \"macs\" or \"ops2x\", got \"" + s + "\"");
}

std::uint64_t TpuConfig::weight_fetch_cycles(std::uint64_t bytes) const {
    const double cycles = double(bytes) / weight_bw * clock_hz;
    return static_cast<std::uint64_t>(std::ceil(cycles - 1e-9)) + dram_latency_cycles;
}

std::uint64_t TpuConfig::pcie_cycles(std::uint64_t bytes) const {
    const double cycles = double(bytes) / pcie_bw * clock_hz;
    return static_cast<std::uint64_t>(std::ceil(cycles - 1e-9)) + pcie_latency_cycles;
}

namespace {

void require_positive(double v, const char* field) {
    if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError(field, "must be finite and > 0");
}

} // namespace

void TpuConfig::validate() const {
    if (matrix_dim == 0) throw ConfigError("matrix_dim", "must be > 0");
    require_positive(clock_hz, "clock_hz");
    require_positive(weight_bw, "weight_bw");
    require_positive(pcie_bw, "pcie_bw");
    require_positive(idle_watts, "idle_watts");
    require_positive(busy_watts, "busy_watts");
    if (weight_mem_bytes == 0) throw ConfigError("weight_mem_bytes", "must be > 0");
    if (weight_mem_bytes < tile_bytes()) throw ConfigError("weight_mem_bytes", "smaller than one weight tile");
    if (ub_bytes == 0) throw ConfigError("ub_bytes", "must be > 0");
    if (ub_bytes % ub_row_bytes() != 0)
        throw ConfigError("ub_bytes", "must be a multiple of matrix_dim (one UB row)");
    if (ub_rows() >= (std::uint64_t{1} << 24)) throw ConfigError("ub_bytes", "exceeds the 24-bit row address space");
    if (acc_width_bits != 32) throw ConfigError("acc_width_bits", "only 32-bit accumulators are modeled");
    if (std::uint64_t{acc_entries} < 2ull * matrix_dim)
        throw ConfigError("acc_entries", "must hold at least 2 x matrix_dim rows for double buffering");
    if (acc_entries > (1u << 16)) throw ConfigError("acc_entries", "exceeds the 16-bit accumulator address space");
    if (idle_watts > busy_watts) throw ConfigError("idle_watts", "exceeds busy_watts");
}

std::uint64_t config_hash(const TpuConfig& cfg) {
    const std::string canon = json(cfg).dump();
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : canon) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

ProportionalityCurve make_curve(double idle_fraction, double at_10_percent) {
    ProportionalityCurve c{};
    c[0] = idle_fraction;
    c[1] = at_10_percent;
    for (std::size_t i = 2; i < kCurvePoints; ++i) {
        c[i] = at_10_percent + (1.0 - at_10_percent) * double(i - 1) / double(kCurvePoints - 2);
    }
    c[kCurvePoints - 1] = 1.0;
    return c;
}

void RooflineDevice::validate() const {
    if (name.empty()) throw ConfigError("name", "must not be empty");
    require_positive(peak_ops, "peak_ops");
    require_positive(mem_bw, "mem_bw");
    if (dies_per_server == 0) throw ConfigError("dies_per_server", "must be > 0");
    require_positive(server_idle_watts, "server_idle_watts");
    require_positive(server_busy_watts, "server_busy_watts");
    require_positive(die_idle_watts, "die_idle_watts");
    require_positive(die_busy_watts, "die_busy_watts");
    if (host_watts < 0.0 || host_watts >= server_busy_watts)
        throw ConfigError("host_watts", "must be in [0, server_busy_watts)");
    auto check_curve = [](const ProportionalityCurve& c, const std::string& field) {
        for (std::size_t i = 0; i < kCurvePoints; ++i) {
            if (!(c[i] >= 0.0 && c[i] <= 1.0)) throw ConfigError(field, "entries must lie in [0, 1]");
            if (i > 0 && c[i] < c[i - 1]) throw ConfigError(field, "must be nondecreasing");
        }
        if (c[kCurvePoints - 1] != 1.0) throw ConfigError(field, "last entry (100% load) must be 1.0");
    };
    check_curve(proportionality_curve, "proportionality_curve");
    for (const auto& [wl, c] : workload_curves) check_curve(c, "workload_curves." + wl);
    if (reference_ridge && !(*reference_ridge > 0.0)) throw ConfigError("reference_ridge", "must be > 0");
}

double ridge_point(const RooflineDevice& dev) { return dev.peak_ops / dev.mem_bw; }

double ridge_point(const RooflineDevice& dev, OpsConvention conv) {
    return dev.peak_ops_in(conv) / dev.mem_bw;
}

RooflineDevice tpu_device() {
    RooflineDevice d = roofline_device(TpuConfig{}, "TPU");
    d.dies_per_server = 4;
    d.server_idle_watts = 290;
    d.server_busy_watts = 384;
    d.die_idle_watts = 28;
    d.die_busy_watts = 40;
    d.host_watts = 384 - 4 * 40;
    d.proportionality_curve = make_curve(28.0 / 40.0, 0.88);
    d.workload_curves["LSTM1"] = make_curve(28.0 / 40.0, 0.94);
    d.reference_ridge = 1350;
    return d;
}

RooflineDevice haswell_device() {
    RooflineDevice d;
    d.name = "Haswell";
    d.peak_ops = 1.3e12;
    d.ops_convention = OpsConvention::Ops2x;
    d.mem_bw = 51e9;
    d.dies_per_server = 2;
    d.server_idle_watts = 159;
    d.server_busy_watts = 455;
    d.die_idle_watts = 41;
    d.die_busy_watts = 145;
    d.host_watts = 0;
    d.proportionality_curve = make_curve(41.0 / 145.0, 0.56);
    d.workload_curves["LSTM1"] = make_curve(41.0 / 145.0, 0.47);
    d.reference_ridge = 13;
    return d;
}

RooflineDevice k80_device() {
    RooflineDevice d;
    d.name = "K80";
    d.peak_ops = 2.8e12;
    d.ops_convention = OpsConvention::Ops2x;
    d.mem_bw = 160e9;
    d.dies_per_server = 8;
    d.server_idle_watts = 357;
    d.server_busy_watts = 991;
    d.die_idle_watts = 25;
    d.die_busy_watts = 98;
    d.host_watts = 991 - 8 * 98;
    d.proportionality_curve = make_curve(25.0 / 98.0, 0.66);
    d.workload_curves["LSTM1"] = make_curve(25.0 / 98.0, 0.78);
    d.reference_ridge = 9;
    return d;
}

std::vector<RooflineDevice> preset_devices() { return {tpu_device(), haswell_device(), k80_device()}; }

RooflineDevice device_by_name(const std::string& name) {
    std::string lower = name;
    std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
    if (lower == "tpu") return tpu_device();
    if (lower == "haswell" || lower == "cpu") return haswell_device();
    if (lower == "k80" || lower == "gpu") return k80_device();
    throw ConfigError("devices", "unknown device \"" + name + "\"");
}

RooflineDevice roofline_device(const TpuConfig& cfg, const std::string& name) {
    RooflineDevice d;
    d.name = name;
    d.peak_ops = cfg.peak_macs_per_s();
    d.ops_convention = OpsConvention::Macs;
    d.mem_bw = cfg.weight_bw;
    d.dies_per_server = 1;
    d.server_idle_watts = cfg.idle_watts;
    d.server_busy_watts = cfg.busy_watts;
    d.die_idle_watts = cfg.idle_watts;
    d.die_busy_watts = cfg.busy_watts;
    d.proportionality_curve = make_curve(cfg.idle_watts / cfg.busy_watts, cfg.idle_watts / cfg.busy_watts);
    return d;
}

// JSON -----------------------------------------------------------------------

namespace {

template <typename T>
void read_field(const json& j, const char* key, T& out) {
    auto it = j.find(key);
    if (it == j.end()) return;
    try {
        if constexpr (std::is_unsigned_v<T>) {
            if (!it->is_number_unsigned() && !(it->is_number_integer() && it->get<std::int64_t>() >= 0))
                throw ConfigError(key, "expected a non-negative integer");
            const auto v = it->get<std::uint64_t>();
            if (v > std::numeric_limits<T>::max()) throw ConfigError(key, "value out of range");
            out = static_cast<T>(v);
        } else if constexpr (std::is_floating_point_v<T>) {
            if (!it->is_number()) throw ConfigError(key, "expected a number");
            out = it->get<T>();
        } else {
            out = it->get<T>();
        }
    } catch (const json::exception& e) {
        throw ConfigError(key, e.what());
    }
}

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
    if (!j.is_object()) throw ConfigError(where, "expected a JSON object");
    for (const auto& [key, _] : j.items()) {
        if (!known.count(key)) throw ConfigError(key, "unknown field in " + where);
    }
}

ProportionalityCurve read_curve(const json& j, const std::string& field) {
    if (!j.is_array() || j.size() != kCurvePoints) throw ConfigError(field, "expected an array of 11 numbers");
    ProportionalityCurve c{};
    for (std::size_t i = 0; i < kCurvePoints; ++i) {
        if (!j[i].is_number()) throw ConfigError(field, "expected numbers");
        c[i] = j[i].get<double>();
    }
    return c;
}

} // namespace

void to_json(json& j, const TpuConfig& c) {
    j = json{{"matrix_dim", c.matrix_dim},
             {"clock_hz", c.clock_hz},
             {"weight_bw", c.weight_bw},
             {"weight_mem_bytes", c.weight_mem_bytes},
             {"ub_bytes", c.ub_bytes},
             {"acc_entries", c.acc_entries},
             {"acc_width_bits", c.acc_width_bits},
             {"fifo_depth_tiles", c.fifo_depth_tiles},
             {"pcie_bw", c.pcie_bw},
             {"idle_watts", c.idle_watts},
             {"busy_watts", c.busy_watts},
             {"dram_latency_cycles", c.dram_latency_cycles},
             {"pcie_latency_cycles", c.pcie_latency_cycles}};
}

void from_json(const json& j, TpuConfig& c) {
    reject_unknown(j,
                   {"matrix_dim", "clock_hz", "weight_bw", "weight_mem_bytes", "ub_bytes", "acc_entries",
                    "acc_width_bits", "fifo_depth_tiles", "pcie_bw", "idle_watts", "busy_watts",
                    "dram_latency_cycles", "pcie_latency_cycles"},
                   "TpuConfig");
    c = TpuConfig{};
    read_field(j, "matrix_dim", c.matrix_dim);
    read_field(j, "clock_hz", c.clock_hz);
    read_field(j, "weight_bw", c.weight_bw);
    read_field(j, "weight_mem_bytes", c.weight_mem_bytes);
    read_field(j, "ub_bytes", c.ub_bytes);
    read_field(j, "acc_entries", c.acc_entries);
    read_field(j, "acc_width_bits", c.acc_width_bits);
    read_field(j, "fifo_depth_tiles", c.fifo_depth_tiles);
    read_field(j, "pcie_bw", c.pcie_bw);
    read_field(j, "idle_watts", c.idle_watts);
    read_field(j, "busy_watts", c.busy_watts);
    read_field(j, "dram_latency_cycles", c.dram_latency_cycles);
    read_field(j, "pcie_latency_cycles", c.pcie_latency_cycles);
    c.validate();
}

void to_json(json& j, const RooflineDevice& d) {
    j = json{{"name", d.name},
             {"peak_ops", d.peak_ops},
             {"ops_convention", to_string(d.ops_convention)},
             {"mem_bw", d.mem_bw},
             {"dies_per_server", d.dies_per_server},
             {"server_idle_watts", d.server_idle_watts},
             {"server_busy_watts", d.server_busy_watts},
             {"die_idle_watts", d.die_idle_watts},
             {"die_busy_watts", d.die_busy_watts},
             {"host_watts", d.host_watts},
             {"proportionality_curve", d.proportionality_curve}};
    if (!d.workload_curves.empty()) {
        json curves = json::object();
        for (const auto& [k, v] : d.workload_curves) curves[k] = v;
        j["workload_curves"] = curves;
    }
    if (d.reference_ridge) j["reference_ridge"] = *d.reference_ridge;
}

void from_json(const json& j, RooflineDevice& d) {
    reject_unknown(j,
                   {"name", "peak_ops", "ops_convention", "mem_bw", "dies_per_server", "server_idle_watts",
                    "server_busy_watts", "die_idle_watts", "die_busy_watts", "host_watts",
                    "proportionality_curve", "workload_curves", "reference_ridge"},
                   "RooflineDevice");
    d = RooflineDevice{};
    read_field(j, "name", d.name);
    read_field(j, "peak_ops", d.peak_ops);
    if (j.contains("ops_convention")) {
        if (!j["ops_convention"].is_string()) throw ConfigError("ops_convention", "expected a string");
        d.ops_convention = ops_convention_from_string(j["ops_convention"].get<std::string>());
    }
    read_field(j, "mem_bw", d.mem_bw);
    read_field(j, "dies_per_server", d.dies_per_server);
    read_field(j, "server_idle_watts", d.server_idle_watts);
    read_field(j, "server_busy_watts", d.server_busy_watts);
    read_field(j, "die_idle_watts", d.die_idle_watts);
    read_field(j, "die_busy_watts", d.die_busy_watts);
    read_field(j, "host_watts", d.host_watts);
    if (j.contains("proportionality_curve"))
        d.proportionality_curve = read_curve(j["proportionality_curve"], "proportionality_curve");
    if (j.contains("workload_curves")) {
        const auto& wc = j["workload_curves"];
        if (!wc.is_object()) throw ConfigError("workload_curves", "expected an object");
        for (const auto& [k, v] : wc.items()) d.workload_curves[k] = read_curve(v, "workload_curves." + k);
    }
    if (j.contains("reference_ridge")) {
        double r = 0;
        read_field(j, "reference_ridge", r);
        d.reference_ridge = r;
    }
    d.validate();
}

LoadedConfig parse_config(const json& j) {
    if (!j.is_object()) throw ConfigError("", "configuration must be a JSON object");
    if (j.contains("devices")) {
        reject_unknown(j, {"devices"}, "device set");
        if (!j["devices"].is_array() || j["devices"].empty())
            throw ConfigError("devices", "expected a non-empty array");
        std::vector<RooflineDevice> out;
        for (const auto& d : j["devices"]) out.push_back(d.get<RooflineDevice>());
        return out;
    }
    return j.get<TpuConfig>();
}

namespace {

json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("", "cannot open config file " + path);
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("", path + ": parse error: " + e.what());
    }
}

void write_json_file(const std::string& path, const json& j) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path);
    out << j.dump(2) << '\n';
}

} // namespace

LoadedConfig load_config(const std::string& path) { return parse_config(read_json_file(path)); }

TpuConfig load_tpu_config(const std::string& path) {
    auto loaded = load_config(path);
    if (auto* cfg = std::get_if<TpuConfig>(&loaded)) return *cfg;
    throw ConfigError("devices", path + " holds roofline devices, expected a TPU config");
}

void save_config(const std::string& path, const TpuConfig& cfg) { write_json_file(path, json(cfg)); }

void save_devices(const std::string& path, const std::vector<RooflineDevice>& devices) {
    write_json_file(path, json{{"devices", devices}});
}

} // namespace tpusim::arch
