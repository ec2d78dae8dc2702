#include "tpusim/footprint.hpp"

namespace tpusim::isa {

RegisterFile::RegisterFile() {
    set(ConfigReg::RequantScale, 1);
    set(ConfigReg::RequantShift, 0);
    set(ConfigReg::ConvStride, 1);
    set(ConfigReg::PoolWindow, 1);
    set(ConfigReg::PoolStride, 1);
}

GeometryResult conv_geometry(const Instruction& in, const RegisterFile& regs) {
    GeometryResult r;
    ConvGeometry g;
    const std::uint32_t dims = regs.get(ConfigReg::ConvInputDims);
    g.in_h = dims >> 16;
    g.in_w = dims & 0xFFFF;
    g.out_h = in.length_hi();
    g.out_w = in.length_lo();
    g.stride = regs.get(ConfigReg::ConvStride);
    g.pad = regs.get(ConfigReg::ConvPad);
    g.tap_r = (regs.get(ConfigReg::ConvTap) >> 8) & 0xFF;
    g.tap_s = regs.get(ConfigReg::ConvTap) & 0xFF;
    if (g.in_h == 0 || g.in_w == 0) {
        r.error = "convolution input dims not configured";
    } else if (g.out_h == 0 || g.out_w == 0) {
        r.error = "convolution output dims are zero";
    } else if (g.stride == 0 || g.stride > 0xFFFF) {
        r.error = "convolution stride out of range";
    } else if (g.pad > 0xFFFF) {
        r.error = "convolution pad out of range";
    } else {
        r.conv = g;
    }
    return r;
}

GeometryResult pool_geometry(const Instruction& in, const RegisterFile& regs) {
    GeometryResult r;
    PoolGeometry g;
    g.in_h = in.length_hi();
    g.in_w = in.length_lo();
    g.window = regs.get(ConfigReg::PoolWindow);
    g.stride = regs.get(ConfigReg::PoolStride);
    g.pad = regs.get(ConfigReg::PoolPad);
    if (g.in_h == 0 || g.in_w == 0) {
        r.error = "pool input dims are zero";
    } else if (g.window == 0 || g.window > 0xFFFF || g.stride == 0 || g.stride > 0xFFFF || g.pad > 0xFFFF) {
        r.error = "invalid pool window";
    } else if (g.pad >= g.window || g.in_h + 2 * g.pad < g.window || g.in_w + 2 * g.pad < g.window) {
        r.error = "invalid pool window";
    } else {
        g.out_h = (g.in_h + 2 * g.pad - g.window) / g.stride + 1;
        g.out_w = (g.in_w + 2 * g.pad - g.window) / g.stride + 1;
        r.pool = g;
    }
    return r;
}

double matrix_speed(bool input16, bool weight16) {
    if (input16 && weight16) return 0.25;
    if (input16 || weight16) return 0.5;
    return 1.0;
}

Footprint iteration_footprint(const Instruction& in, std::uint32_t it, const RegisterFile& regs,
                              const arch::TpuConfig& cfg) {
    Footprint f;
    const std::uint64_t i = it;
    switch (in.opcode) {
    case Opcode::ReadHostMemory:
    case Opcode::ReadHostMemoryAlt:
    case Opcode::WriteHostMemory:
    case Opcode::WriteHostMemoryAlt: {
        const bool alt = in.opcode == Opcode::ReadHostMemoryAlt || in.opcode == Opcode::WriteHostMemoryAlt;
        const bool read = in.opcode == Opcode::ReadHostMemory || in.opcode == Opcode::ReadHostMemoryAlt;
        const RowRange rows{in.ub_addr + i * in.length, in.ub_addr + (i + 1) * in.length};
        if (read) f.ub_write = rows;
        else f.ub_read = rows;
        f.host_bytes = std::uint64_t{in.length} * cfg.ub_row_bytes();
        f.host_addr = std::uint64_t{regs.get(alt ? ConfigReg::HostAddrAlt : ConfigReg::HostAddr)} + i * f.host_bytes;
        f.work_rows = in.length;
        break;
    }
    case Opcode::ReadWeights: {
        const std::uint64_t units = tile_units(in.flags & WeightFlag::kWeight16);
        const std::uint64_t n = std::uint64_t{in.length} * units;
        f.wmem_units = {in.ub_addr + i * n, in.ub_addr + (i + 1) * n};
        f.tiles = in.length;
        f.work_rows = in.length;
        break;
    }
    case Opcode::MatrixMultiply: {
        const std::uint64_t span = row_span(in.flags & MatMulFlag::kInput16);
        const bool acc = in.flags & MatMulFlag::kAccumulate;
        if (in.is_convolve()) {
            const auto g = *conv_geometry(in, regs).conv;
            const std::uint64_t in_rows = std::uint64_t{g.in_h} * g.in_w * span;
            const std::uint64_t out_rows = std::uint64_t{g.out_h} * g.out_w;
            f.ub_read = {in.ub_addr + i * in_rows, in.ub_addr + (i + 1) * in_rows};
            f.acc_write = {in.acc_addr + i * out_rows, in.acc_addr + (i + 1) * out_rows};
            f.work_rows = out_rows;
        } else {
            const std::uint64_t rows = in.length;
            f.ub_read = {in.ub_addr + i * rows * span, in.ub_addr + (i + 1) * rows * span};
            f.acc_write = {in.acc_addr + i * rows, in.acc_addr + (i + 1) * rows};
            f.work_rows = rows;
        }
        if (acc) f.acc_read = f.acc_write;
        break;
    }
    case Opcode::Activate: {
        const std::uint64_t span = row_span(in.flags & ActivateFlag::kOutput16);
        if (activate_pool(in) != PoolKind::None) {
            const auto g = *pool_geometry(in, regs).pool;
            const std::uint64_t in_rows = std::uint64_t{g.in_h} * g.in_w;
            const std::uint64_t out_rows = std::uint64_t{g.out_h} * g.out_w * span;
            f.acc_read = {in.acc_addr + i * in_rows, in.acc_addr + (i + 1) * in_rows};
            f.ub_write = {in.ub_addr + i * out_rows, in.ub_addr + (i + 1) * out_rows};
            f.work_rows = in_rows;
        } else {
            const std::uint64_t rows = in.length;
            f.acc_read = {in.acc_addr + i * rows, in.acc_addr + (i + 1) * rows};
            f.ub_write = {in.ub_addr + i * rows * span, in.ub_addr + (i + 1) * rows * span};
            f.work_rows = rows;
        }
        break;
    }
    default:
        break;
    }
    return f;
}

} // namespace tpusim::isa
