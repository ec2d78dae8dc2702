#pragma once

/**
 * @file archconfig.hpp
 * @brief Parametric hardware descriptions: the TPU itself and generic roofline devices.
 *
 * A TpuConfig drives functional simulation, timing, lowering and the
 * design-space sweeps. A RooflineDevice is the coarser view used by the
 * analytical models (roofline, performance/Watt, energy proportionality);
 * Haswell and K80 only exist in that form.
 */

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

namespace tpusim::arch {

/// Whether one multiply-accumulate counts as one operation or two.
enum class OpsConvention : std::uint8_t {
    Macs,   ///< 1 MAC = 1 op (roofline figures, ridge 1350)
    Ops2x,  ///< 1 MAC = 2 ops (TOPS figures, 92 TOPS peak)
};

inline constexpr double kOps2xPerMac = 2.0;

/// Factor that converts a MAC count into `conv` operations.
constexpr double ops_per_mac(OpsConvention conv) {
    return conv == OpsConvention::Macs ? 1.0 : kOps2xPerMac;
}

std::string to_string(OpsConvention conv);
OpsConvention ops_convention_from_string(const std::string& s);

inline constexpr std::uint64_t kKiB = 1024;
inline constexpr std::uint64_t kMiB = 1024 * kKiB;
inline constexpr std::uint64_t kGiB = 1024 * kMiB;

struct TpuConfig {
    std::uint32_t matrix_dim = 256;
    double clock_hz = 700e6;
    double weight_bw = 34e9;                    ///< bytes/s from Weight Memory
    std::uint64_t weight_mem_bytes = 8 * kGiB;
    std::uint64_t ub_bytes = 24 * kMiB;
    std::uint32_t acc_entries = 4096;
    std::uint32_t acc_width_bits = 32;
    std::uint32_t fifo_depth_tiles = 4;         ///< 0 disables decoupled prefetch and the shadow tile
    double pcie_bw = 10e9;                      ///< effective host-link bytes/s
    double idle_watts = 28.0;
    double busy_watts = 40.0;
    std::uint32_t dram_latency_cycles = 0;      ///< fixed startup latency per weight tile fetch
    std::uint32_t pcie_latency_cycles = 0;      ///< fixed startup latency per host DMA transfer

    /// Bytes of one 8-bit weight tile (matrix_dim squared).
    std::uint64_t tile_bytes() const { return std::uint64_t{matrix_dim} * matrix_dim; }
    /// Unified Buffer row size; UB addresses count rows of this size.
    std::uint64_t ub_row_bytes() const { return matrix_dim; }
    std::uint64_t ub_rows() const { return ub_bytes / ub_row_bytes(); }
    double peak_macs_per_s() const { return double(matrix_dim) * matrix_dim * clock_hz; }
    /// Clock cycles to stream `bytes` from Weight Memory (flat-rate model).
    std::uint64_t weight_fetch_cycles(std::uint64_t bytes) const;
    std::uint64_t pcie_cycles(std::uint64_t bytes) const;

    /// Throws ConfigError naming the offending field.
    void validate() const;

    bool operator==(const TpuConfig&) const = default;
};

/// Stable FNV-1a hash of the canonical JSON form; stamped into Program metadata.
std::uint64_t config_hash(const TpuConfig& cfg);

inline constexpr std::size_t kCurvePoints = 11;
using ProportionalityCurve = std::array<double, kCurvePoints>;

/// Builds an 11-point curve from the idle fraction (0% load), the measured
/// fraction at 10% load, and a straight line from there to 1.0 at 100%.
ProportionalityCurve make_curve(double idle_fraction, double at_10_percent);

struct RooflineDevice {
    std::string name;
    double peak_ops = 0.0;                      ///< in `ops_convention` units per second
    OpsConvention ops_convention = OpsConvention::Macs;
    double mem_bw = 0.0;                        ///< bytes/s
    std::uint32_t dies_per_server = 1;
    double server_idle_watts = 0.0;
    double server_busy_watts = 0.0;
    double die_idle_watts = 0.0;
    double die_busy_watts = 0.0;
    /// Host server share of server_busy_watts; 0 for a CPU server that is its own host.
    double host_watts = 0.0;
    ProportionalityCurve proportionality_curve{};
    /// Extra measured curves keyed by workload name (e.g. "LSTM1").
    std::map<std::string, ProportionalityCurve> workload_curves;
    /// Published ridge point, carried as reference data.
    std::optional<double> reference_ridge;

    double peak_macs_per_s() const { return peak_ops / ops_per_mac(ops_convention); }
    double peak_ops_in(OpsConvention conv) const { return peak_macs_per_s() * ops_per_mac(conv); }

    void validate() const;

    bool operator==(const RooflineDevice&) const = default;
};

/// peak_ops / mem_bw in the device's own convention.
double ridge_point(const RooflineDevice& dev);
/// peak_ops / mem_bw after converting peak to `conv`.
double ridge_point(const RooflineDevice& dev, OpsConvention conv);

/// Device presets.
RooflineDevice tpu_device();
RooflineDevice haswell_device();
RooflineDevice k80_device();
std::vector<RooflineDevice> preset_devices();
/// Case-insensitive lookup of "tpu", "haswell", "k80".
RooflineDevice device_by_name(const std::string& name);

/// Roofline view of an arbitrary TpuConfig (MAC convention, power from the config).
RooflineDevice roofline_device(const TpuConfig& cfg, const std::string& name = "TPU");

void to_json(nlohmann::json& j, const TpuConfig& cfg);
void from_json(const nlohmann::json& j, TpuConfig& cfg);
void to_json(nlohmann::json& j, const RooflineDevice& dev);
void from_json(const nlohmann::json& j, RooflineDevice& dev);

/// Parses either a TpuConfig object or {"devices": [...]}. Omitted fields take
/// defaults, unknown fields are rejected, invariants are checked.
using LoadedConfig = std::variant<TpuConfig, std::vector<RooflineDevice>>;
LoadedConfig parse_config(const nlohmann::json& j);
LoadedConfig load_config(const std::string& path);
TpuConfig load_tpu_config(const std::string& path);

void save_config(const std::string& path, const TpuConfig& cfg);
void save_devices(const std::string& path, const std::vector<RooflineDevice>& devices);

} // namespace tpusim::arch
