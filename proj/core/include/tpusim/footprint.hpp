#pragma once

// Address footprint of one instruction iteration. Shared by the validator,
// the functional simulator and the timing model so that all three agree on
// which rows an instruction touches.

#include <array>
#include <cstdint>
#include <optional>
#include <string>

#include "tpusim/archconfig.hpp"
#include "tpusim/isa.hpp"

namespace tpusim::isa {

struct RegisterFile {
    std::array<std::uint32_t, kConfigRegCount> values{};

    RegisterFile();
    std::uint32_t get(ConfigReg r) const { return values[static_cast<std::size_t>(r)]; }
    void set(ConfigReg r, std::uint32_t v) { values[static_cast<std::size_t>(r)] = v; }

    std::int32_t requant_scale() const { return static_cast<std::int32_t>(get(ConfigReg::RequantScale)); }
    std::uint32_t requant_shift() const { return get(ConfigReg::RequantShift); }
};

/// Half-open row interval.
struct RowRange {
    std::uint64_t begin = 0;
    std::uint64_t end = 0;
    bool empty() const { return end <= begin; }
    std::uint64_t size() const { return empty() ? 0 : end - begin; }
};

struct ConvGeometry {
    std::uint32_t in_h = 0, in_w = 0;
    std::uint32_t out_h = 0, out_w = 0;
    std::uint32_t stride = 1, pad = 0;
    std::uint32_t tap_r = 0, tap_s = 0;
};

struct PoolGeometry {
    std::uint32_t in_h = 0, in_w = 0;
    std::uint32_t out_h = 0, out_w = 0;
    std::uint32_t window = 1, stride = 1, pad = 0;
};

struct Footprint {
    RowRange ub_read;
    RowRange ub_write;
    RowRange acc_read;
    RowRange acc_write;
    RowRange wmem_units;          ///< ReadWeights: tile-sized Weight Memory units
    std::uint64_t host_addr = 0;  ///< DMA: byte address in host memory
    std::uint64_t host_bytes = 0;
    std::uint64_t tiles = 0;      ///< ReadWeights: tiles fetched
    std::uint64_t work_rows = 0;  ///< vectors streamed through the unit (before speed scaling)
};

/// UB rows occupied by one activation vector of the given element width.
inline std::uint32_t row_span(bool sixteen_bit) { return sixteen_bit ? 2u : 1u; }

/// Weight Memory units occupied by one tile (a 16-bit tile takes two).
inline std::uint32_t tile_units(bool weight16) { return weight16 ? 2u : 1u; }

/// Decoded geometry, or an explanation of why it is malformed.
struct GeometryResult {
    std::optional<ConvGeometry> conv;
    std::optional<PoolGeometry> pool;
    std::string error;
};
GeometryResult conv_geometry(const Instruction& in, const RegisterFile& regs);
GeometryResult pool_geometry(const Instruction& in, const RegisterFile& regs);

/// Footprint of iteration `it` of `in`. Geometry must already be valid.
Footprint iteration_footprint(const Instruction& in, std::uint32_t it, const RegisterFile& regs,
                              const arch::TpuConfig& cfg);

/// Speed factor of the matrix unit: 1 for 8x8, 1/2 for mixed, 1/4 for 16x16.
double matrix_speed(bool input16, bool weight16);

} // namespace tpusim::isa
