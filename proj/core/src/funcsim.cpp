#include "tpusim/funcsim.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

namespace tpusim::func {

using isa::ActivationFn;
using isa::Opcode;
using isa::PoolKind;

std::string_view to_string(ExecErrorKind kind) {
    switch (kind) {
    case ExecErrorKind::AddressFault: return "AddressFault";
    case ExecErrorKind::FifoUnderflow: return "FifoUnderflow";
    case ExecErrorKind::AccOutOfRange: return "AccOutOfRange";
    case ExecErrorKind::WeightMemOutOfRange: return "WeightMemOutOfRange";
    case ExecErrorKind::InvalidPoolWindow: return "InvalidPoolWindow";
    case ExecErrorKind::BadGeometry: return "BadGeometry";
    case ExecErrorKind::UnknownConfigRegister: return "UnknownConfigRegister";
    case ExecErrorKind::ReservedFlagSet: return "ReservedFlagSet";
    }
    return "Unknown";
}

// Memories -------------------------------------------------------------------

WeightMemory::WeightMemory(std::uint64_t capacity, std::uint64_t unit_bytes)
    : capacity_(capacity), unit_bytes_(unit_bytes) {}

void WeightMemory::write(std::uint64_t addr, std::span<const std::uint8_t> bytes) {
    if (addr + bytes.size() > capacity_) throw Error("Weight Memory write out of range");
    std::size_t done = 0;
    while (done < bytes.size()) {
        const std::uint64_t page = (addr + done) / unit_bytes_;
        const std::uint64_t off = (addr + done) % unit_bytes_;
        const std::size_t n = static_cast<std::size_t>(std::min<std::uint64_t>(unit_bytes_ - off, bytes.size() - done));
        auto& p = pages_[page];
        if (p.empty()) p.assign(unit_bytes_, 0);
        std::memcpy(p.data() + off, bytes.data() + done, n);
        done += n;
    }
}

void WeightMemory::read(std::uint64_t addr, std::span<std::uint8_t> out) const {
    if (addr + out.size() > capacity_) throw Error("Weight Memory read out of range");
    std::size_t done = 0;
    while (done < out.size()) {
        const std::uint64_t page = (addr + done) / unit_bytes_;
        const std::uint64_t off = (addr + done) % unit_bytes_;
        const std::size_t n = static_cast<std::size_t>(std::min<std::uint64_t>(unit_bytes_ - off, out.size() - done));
        auto it = pages_.find(page);
        if (it == pages_.end()) std::memset(out.data() + done, 0, n);
        else std::memcpy(out.data() + done, it->second.data() + off, n);
        done += n;
    }
}

bool WeightMemory::operator==(const WeightMemory& other) const {
    if (capacity_ != other.capacity_ || unit_bytes_ != other.unit_bytes_) return false;
    auto covers = [](const WeightMemory& a, const WeightMemory& b) {
        for (const auto& [k, v] : a.pages_) {
            auto it = b.pages_.find(k);
            if (it == b.pages_.end()) {
                if (std::any_of(v.begin(), v.end(), [](std::uint8_t x) { return x != 0; })) return false;
            } else if (it->second != v) {
                return false;
            }
        }
        return true;
    };
    return covers(*this, other) && covers(other, *this);
}

void HostMemory::read(std::uint64_t addr, std::span<std::uint8_t> out, std::size_t at) const {
    if (addr > data_.size() || out.size() > data_.size() - addr)
        throw ExecError(ExecErrorKind::AddressFault, at, "host read out of range");
    std::memcpy(out.data(), data_.data() + addr, out.size());
}

void HostMemory::write(std::uint64_t addr, std::span<const std::uint8_t> in, std::size_t at) {
    if (addr > data_.size() || in.size() > data_.size() - addr)
        throw ExecError(ExecErrorKind::AddressFault, at, "host write out of range");
    std::memcpy(data_.data() + addr, in.data(), in.size());
}

TpuState::TpuState(const arch::TpuConfig& c)
    : cfg(c),
      ub(c.ub_bytes, 0),
      wmem(c.weight_mem_bytes, c.tile_bytes()),
      acc(std::size_t{c.acc_entries} * c.matrix_dim, 0) {
    cfg.validate();
}

void TpuState::ub_store(std::uint64_t row, std::uint32_t col, std::int32_t value, bool wide) {
    const std::uint64_t base = row * cfg.ub_row_bytes();
    if (wide) {
        const auto v = static_cast<std::uint16_t>(value);
        ub[base + 2 * col] = static_cast<std::uint8_t>(v);
        ub[base + 2 * col + 1] = static_cast<std::uint8_t>(v >> 8);
    } else {
        ub[base + col] = static_cast<std::uint8_t>(value);
    }
}

std::int32_t TpuState::ub_load(std::uint64_t row, std::uint32_t col, bool wide, bool is_signed) const {
    const std::uint64_t base = row * cfg.ub_row_bytes();
    if (wide) {
        const std::uint16_t v = static_cast<std::uint16_t>(ub[base + 2 * col] | (ub[base + 2 * col + 1] << 8));
        return is_signed ? std::int32_t{static_cast<std::int16_t>(v)} : std::int32_t{v};
    }
    const std::uint8_t v = ub[base + col];
    return is_signed ? std::int32_t{static_cast<std::int8_t>(v)} : std::int32_t{v};
}

bool operator==(const WeightTile& a, const WeightTile& b) {
    return a.dim == b.dim && a.wide == b.wide && a.is_signed == b.is_signed && a.values == b.values;
}

bool TpuState::operator==(const TpuState& o) const {
    return cfg == o.cfg && ub == o.ub && wmem == o.wmem && wfifo == o.wfifo && pending == o.pending &&
           active_tile == o.active_tile && shadow_tile == o.shadow_tile && acc == o.acc &&
           overflow_count == o.overflow_count && regs.values == o.regs.values;
}

// Fixed point ------------------------------------------------------------------

std::int64_t div_round_away(std::int64_t num, std::int64_t den) {
    const bool neg = (num < 0) != (den < 0);
    const std::uint64_t n = num < 0 ? 0 - static_cast<std::uint64_t>(num) : static_cast<std::uint64_t>(num);
    const std::uint64_t d = den < 0 ? 0 - static_cast<std::uint64_t>(den) : static_cast<std::uint64_t>(den);
    const std::uint64_t q = (n + d / 2) / d;
    return neg ? -static_cast<std::int64_t>(q) : static_cast<std::int64_t>(q);
}

std::int64_t requantize(std::int64_t value, std::int32_t scale, std::uint32_t shift) {
    const std::int64_t prod = value * scale;
    if (shift == 0) return prod;
    const bool neg = prod < 0;
    const std::uint64_t mag = neg ? 0 - static_cast<std::uint64_t>(prod) : static_cast<std::uint64_t>(prod);
    const std::uint64_t r = (mag + (std::uint64_t{1} << (shift - 1))) >> shift;
    return neg ? -static_cast<std::int64_t>(r) : static_cast<std::int64_t>(r);
}

std::int32_t saturate(std::int64_t v, OutputFormat out) {
    std::int64_t lo, hi;
    if (out.wide) {
        lo = out.is_unsigned ? 0 : std::numeric_limits<std::int16_t>::min();
        hi = out.is_unsigned ? std::numeric_limits<std::uint16_t>::max() : std::numeric_limits<std::int16_t>::max();
    } else {
        lo = out.is_unsigned ? 0 : std::numeric_limits<std::int8_t>::min();
        hi = out.is_unsigned ? std::numeric_limits<std::uint8_t>::max() : std::numeric_limits<std::int8_t>::max();
    }
    return static_cast<std::int32_t>(std::clamp(v, lo, hi));
}

const std::array<std::uint8_t, 256>& sigmoid_table() {
    static const auto table = [] {
        std::array<std::uint8_t, 256> t{};
        for (int q = -128; q < 128; ++q) {
            const double y = 1.0 / (1.0 + std::exp(-q / kLutInputScale));
            t[q + 128] = static_cast<std::uint8_t>(std::clamp(std::lround(y * 256.0), 0L, 255L));
        }
        return t;
    }();
    return table;
}

const std::array<std::int8_t, 256>& tanh_table() {
    static const auto table = [] {
        std::array<std::int8_t, 256> t{};
        for (int q = -128; q < 128; ++q) {
            t[q + 128] = static_cast<std::int8_t>(std::lround(std::tanh(q / kLutInputScale) * 127.0));
        }
        return t;
    }();
    return table;
}

std::int32_t activation_pipeline(std::int64_t acc_value, ActivationFn fn, Requant rq, OutputFormat out) {
    const std::int64_t q = requantize(acc_value, rq.scale, rq.shift);
    switch (fn) {
    case ActivationFn::Identity:
        return saturate(q, out);
    case ActivationFn::ReLU:
        return saturate(std::max<std::int64_t>(q, 0), out);
    case ActivationFn::Sigmoid: {
        const auto idx = std::clamp<std::int64_t>(q, -128, 127) + 128;
        return saturate(sigmoid_table()[static_cast<std::size_t>(idx)], out);
    }
    case ActivationFn::Tanh: {
        const auto idx = std::clamp<std::int64_t>(q, -128, 127) + 128;
        return saturate(tanh_table()[static_cast<std::size_t>(idx)], out);
    }
    }
    return 0;
}

// Unit operations --------------------------------------------------------------

namespace {

void drain_pending(TpuState& s, std::size_t index) {
    while (!s.pending.empty() && s.wfifo.size() < s.fifo_capacity()) {
        const PendingFetch p = s.pending.front();
        s.pending.pop_front();
        const std::uint32_t dim = s.cfg.matrix_dim;
        WeightTile t{dim, p.wide, p.is_signed, {}};
        std::vector<std::uint8_t> raw(t.byte_size());
        if (p.unit + isa::tile_units(p.wide) > s.wmem.units())
            throw ExecError(ExecErrorKind::WeightMemOutOfRange, index, "Weight Memory tile out of range");
        s.wmem.read(p.unit * s.wmem.unit_bytes(), raw);
        t.values.resize(std::size_t{dim} * dim);
        for (std::size_t k = 0; k < t.values.size(); ++k) {
            if (p.wide) {
                const std::uint16_t v = static_cast<std::uint16_t>(raw[2 * k] | (raw[2 * k + 1] << 8));
                t.values[k] = p.is_signed ? std::int32_t{static_cast<std::int16_t>(v)} : std::int32_t{v};
            } else {
                t.values[k] = p.is_signed ? std::int32_t{static_cast<std::int8_t>(raw[k])} : std::int32_t{raw[k]};
            }
        }
        s.wfifo.push_back(std::move(t));
    }
}

void check_acc(const TpuState& s, std::uint64_t begin, std::uint64_t rows, std::size_t index) {
    if (begin + rows > s.cfg.acc_entries)
        throw ExecError(ExecErrorKind::AccOutOfRange, index, "accumulator rows out of range");
}

void check_ub(const TpuState& s, std::uint64_t begin, std::uint64_t rows, std::size_t index) {
    if (begin + rows > s.cfg.ub_rows())
        throw ExecError(ExecErrorKind::AddressFault, index, "Unified Buffer rows out of range");
}

const WeightTile& require_active(const TpuState& s, std::size_t index) {
    if (!s.active_tile) throw ExecError(ExecErrorKind::FifoUnderflow, index, "no active weight tile");
    return *s.active_tile;
}

/// acc_row (+)= x . W in 32-bit wrapping arithmetic, counting wraps.
void accumulate_row(TpuState& s, std::uint32_t acc_row, std::span<const std::int32_t> x, const WeightTile& w,
                    bool accumulate, std::vector<std::int64_t>& scratch64, std::vector<std::int32_t>& scratch32) {
    const std::uint32_t dim = s.cfg.matrix_dim;
    const bool narrow = !w.wide && std::all_of(x.begin(), x.end(), [](std::int32_t v) { return v >= -128 && v <= 255; });
    std::int32_t* dst = s.acc.data() + std::size_t{acc_row} * dim;
    auto commit = [&](std::uint32_t j, std::int64_t dot) {
        const std::int64_t exact = (accumulate ? std::int64_t{dst[j]} : 0) + dot;
        const auto wrapped = static_cast<std::int32_t>(static_cast<std::uint32_t>(static_cast<std::uint64_t>(exact)));
        if (wrapped != exact) ++s.overflow_count;
        dst[j] = wrapped;
    };
    if (narrow) {
        // 8-bit operands: |dot| <= dim * 255 * 128 stays far inside int32.
        scratch32.assign(dim, 0);
        for (std::uint32_t i = 0; i < dim; ++i) {
            const std::int32_t xi = x[i];
            if (xi == 0) continue;
            const std::int32_t* wr = w.values.data() + std::size_t{i} * dim;
            for (std::uint32_t j = 0; j < dim; ++j) scratch32[j] += xi * wr[j];
        }
        for (std::uint32_t j = 0; j < dim; ++j) commit(j, scratch32[j]);
    } else {
        scratch64.assign(dim, 0);
        for (std::uint32_t i = 0; i < dim; ++i) {
            const std::int64_t xi = x[i];
            if (xi == 0) continue;
            const std::int32_t* wr = w.values.data() + std::size_t{i} * dim;
            for (std::uint32_t j = 0; j < dim; ++j) scratch64[j] += xi * wr[j];
        }
        for (std::uint32_t j = 0; j < dim; ++j) commit(j, scratch64[j]);
    }
}

void load_vector(const TpuState& s, std::uint64_t row, bool wide, bool is_signed, std::vector<std::int32_t>& out) {
    const std::uint32_t dim = s.cfg.matrix_dim;
    out.resize(dim);
    for (std::uint32_t i = 0; i < dim; ++i) out[i] = s.ub_load(row, i, wide, is_signed);
}

} // namespace

void read_weights(TpuState& s, std::uint64_t wmem_unit, std::uint32_t n_tiles, bool wide, bool is_signed,
                  std::size_t index) {
    const std::uint64_t units = isa::tile_units(wide);
    if (wmem_unit + std::uint64_t{n_tiles} * units > s.wmem.units())
        throw ExecError(ExecErrorKind::WeightMemOutOfRange, index, "Weight Memory tiles out of range");
    for (std::uint32_t t = 0; t < n_tiles; ++t) s.pending.push_back({wmem_unit + t * units, wide, is_signed});
    drain_pending(s, index);
}

void switch_tile(TpuState& s, std::size_t index) {
    if (!s.shadow_tile) {
        if (s.wfifo.empty()) throw ExecError(ExecErrorKind::FifoUnderflow, index, "weight FIFO empty");
        s.shadow_tile = std::move(s.wfifo.front());
        s.wfifo.pop_front();
        drain_pending(s, index);
    }
    s.active_tile = std::move(s.shadow_tile);
    s.shadow_tile.reset();
    if (!s.wfifo.empty()) {
        s.shadow_tile = std::move(s.wfifo.front());
        s.wfifo.pop_front();
        drain_pending(s, index);
    }
}

void matrix_multiply(TpuState& s, std::uint64_t ub_row, std::uint32_t acc_base, std::uint32_t rows, bool accumulate,
                     bool input16, bool input_signed, std::size_t index) {
    const WeightTile& w = require_active(s, index);
    const std::uint32_t span = isa::row_span(input16);
    check_acc(s, acc_base, rows, index);
    check_ub(s, ub_row, std::uint64_t{rows} * span, index);
    std::vector<std::int32_t> x;
    std::vector<std::int64_t> s64;
    std::vector<std::int32_t> s32;
    for (std::uint32_t b = 0; b < rows; ++b) {
        load_vector(s, ub_row + std::uint64_t{b} * span, input16, input_signed, x);
        accumulate_row(s, acc_base + b, x, w, accumulate, s64, s32);
    }
}

void convolve(TpuState& s, std::uint64_t ub_row, std::uint32_t acc_base, const isa::ConvGeometry& g, bool accumulate,
              bool input16, bool input_signed, std::size_t index) {
    const WeightTile& w = require_active(s, index);
    const std::uint32_t span = isa::row_span(input16);
    const std::uint64_t out_rows = std::uint64_t{g.out_h} * g.out_w;
    check_acc(s, acc_base, out_rows, index);
    check_ub(s, ub_row, std::uint64_t{g.in_h} * g.in_w * span, index);
    std::vector<std::int32_t> x;
    std::vector<std::int64_t> s64;
    std::vector<std::int32_t> s32;
    for (std::uint32_t oy = 0; oy < g.out_h; ++oy) {
        for (std::uint32_t ox = 0; ox < g.out_w; ++ox) {
            const std::uint32_t acc_row = acc_base + oy * g.out_w + ox;
            const std::int64_t iy = std::int64_t{oy} * g.stride + g.tap_r - g.pad;
            const std::int64_t ix = std::int64_t{ox} * g.stride + g.tap_s - g.pad;
            if (iy < 0 || ix < 0 || iy >= g.in_h || ix >= g.in_w) {
                if (!accumulate) {
                    std::fill_n(s.acc.begin() + std::ptrdiff_t(std::size_t{acc_row} * s.cfg.matrix_dim),
                                s.cfg.matrix_dim, 0);
                }
                continue;
            }
            load_vector(s, ub_row + static_cast<std::uint64_t>(iy * g.in_w + ix) * span, input16, input_signed, x);
            accumulate_row(s, acc_row, x, w, accumulate, s64, s32);
        }
    }
}

void activate(TpuState& s, std::uint32_t acc_base, std::uint64_t ub_row, std::uint32_t rows, ActivationFn fn,
              Requant rq, OutputFormat out, std::size_t index) {
    const std::uint32_t span = isa::row_span(out.wide);
    check_acc(s, acc_base, rows, index);
    check_ub(s, ub_row, std::uint64_t{rows} * span, index);
    for (std::uint32_t r = 0; r < rows; ++r) {
        for (std::uint32_t j = 0; j < s.cfg.matrix_dim; ++j) {
            const std::int32_t y = activation_pipeline(s.acc_at(acc_base + r, j), fn, rq, out);
            s.ub_store(ub_row + std::uint64_t{r} * span, j, y, out.wide);
        }
    }
}

void activate_pooled(TpuState& s, std::uint32_t acc_base, std::uint64_t ub_row, const isa::PoolGeometry& g,
                     PoolKind kind, ActivationFn fn, Requant rq, OutputFormat out, std::size_t index) {
    if (kind == PoolKind::None) throw ExecError(ExecErrorKind::InvalidPoolWindow, index, "pool kind is None");
    const std::uint32_t span = isa::row_span(out.wide);
    check_acc(s, acc_base, std::uint64_t{g.in_h} * g.in_w, index);
    check_ub(s, ub_row, std::uint64_t{g.out_h} * g.out_w * span, index);
    const std::uint32_t dim = s.cfg.matrix_dim;
    for (std::uint32_t py = 0; py < g.out_h; ++py) {
        for (std::uint32_t px = 0; px < g.out_w; ++px) {
            const std::uint64_t dst = ub_row + (std::uint64_t{py} * g.out_w + px) * span;
            for (std::uint32_t j = 0; j < dim; ++j) {
                std::int64_t best = std::numeric_limits<std::int64_t>::min();
                std::int64_t sum = 0;
                std::int64_t count = 0;
                for (std::uint32_t ky = 0; ky < g.window; ++ky) {
                    const std::int64_t y = std::int64_t{py} * g.stride + ky - g.pad;
                    if (y < 0 || y >= g.in_h) continue;
                    for (std::uint32_t kx = 0; kx < g.window; ++kx) {
                        const std::int64_t x = std::int64_t{px} * g.stride + kx - g.pad;
                        if (x < 0 || x >= g.in_w) continue;
                        const std::int64_t v = s.acc_at(acc_base + static_cast<std::uint32_t>(y * g.in_w + x), j);
                        best = std::max(best, v);
                        sum += v;
                        ++count;
                    }
                }
                const std::int64_t pooled = kind == PoolKind::Max ? best : div_round_away(sum, count);
                s.ub_store(dst, j, activation_pipeline(pooled, fn, rq, out), out.wide);
            }
        }
    }
}

// Program execution ------------------------------------------------------------

void to_json(nlohmann::json& j, const ExecEvent& e) {
    j = nlohmann::json{{"index", e.index},
                       {"op", e.convolve ? std::string("Convolve") : std::string(isa::to_string(e.opcode))},
                       {"ub_addr", e.ub_addr},
                       {"acc_addr", e.acc_addr},
                       {"length", e.length},
                       {"repeat", e.repeat},
                       {"bytes", e.bytes}};
}

std::string events_to_jsonl(const std::vector<ExecEvent>& events) {
    std::string out;
    for (const auto& e : events) {
        out += nlohmann::json(e).dump();
        out += '\n';
    }
    return out;
}

ExecResult execute(const isa::Program& program, TpuState& s, HostMemory& host) {
    ExecResult result;
    const auto& cfg = s.cfg;
    const std::uint64_t row_bytes = cfg.ub_row_bytes();
    std::vector<std::uint8_t> buffer;
    for (std::size_t idx = 0; idx < program.instructions.size(); ++idx) {
        const isa::Instruction& in = program.instructions[idx];
        ExecEvent ev{idx, in.opcode, in.is_convolve(), in.ub_addr, in.acc_addr, in.length, in.repeat, 0};
        ++result.retired;
        if (in.opcode == Opcode::Halt) {
            result.events.push_back(ev);
            result.halted = true;
            break;
        }
        switch (in.opcode) {
        case Opcode::SetConfig:
            if (in.acc_addr >= isa::kConfigRegCount)
                throw ExecError(ExecErrorKind::UnknownConfigRegister, idx, "unknown config register");
            s.regs.set(static_cast<isa::ConfigReg>(in.acc_addr), in.length);
            break;
        case Opcode::ReadHostMemory:
        case Opcode::ReadHostMemoryAlt:
        case Opcode::WriteHostMemory:
        case Opcode::WriteHostMemoryAlt: {
            const bool alt = in.opcode == Opcode::ReadHostMemoryAlt || in.opcode == Opcode::WriteHostMemoryAlt;
            const bool to_ub = in.opcode == Opcode::ReadHostMemory || in.opcode == Opcode::ReadHostMemoryAlt;
            const auto reg = alt ? isa::ConfigReg::HostAddrAlt : isa::ConfigReg::HostAddr;
            for (std::uint32_t it = 0; it < in.iterations(); ++it) {
                const isa::Footprint f = isa::iteration_footprint(in, it, s.regs, cfg);
                const isa::RowRange rows = to_ub ? f.ub_write : f.ub_read;
                check_ub(s, rows.begin, rows.size(), idx);
                auto ub_span = std::span<std::uint8_t>(s.ub).subspan(rows.begin * row_bytes, f.host_bytes);
                if (to_ub) host.read(f.host_addr, ub_span, idx);
                else host.write(f.host_addr, ub_span, idx);
                ev.bytes += f.host_bytes;
            }
            s.regs.set(reg, static_cast<std::uint32_t>(s.regs.get(reg) + ev.bytes));
            break;
        }
        case Opcode::ReadWeights: {
            const bool wide = in.flags & isa::WeightFlag::kWeight16;
            const bool sgn = in.flags & isa::WeightFlag::kWeightSigned;
            for (std::uint32_t it = 0; it < in.iterations(); ++it) {
                const isa::Footprint f = isa::iteration_footprint(in, it, s.regs, cfg);
                read_weights(s, f.wmem_units.begin, in.length, wide, sgn, idx);
                ev.bytes += std::uint64_t{in.length} * cfg.tile_bytes() * isa::tile_units(wide);
            }
            break;
        }
        case Opcode::MatrixMultiply: {
            const bool accumulate = in.flags & isa::MatMulFlag::kAccumulate;
            const bool in16 = in.flags & isa::MatMulFlag::kInput16;
            const bool sgn = in.flags & isa::MatMulFlag::kInputSigned;
            if (in.flags & isa::MatMulFlag::kSwitchTile) switch_tile(s, idx);
            std::optional<isa::ConvGeometry> geom;
            if (in.is_convolve()) {
                auto g = isa::conv_geometry(in, s.regs);
                if (!g.conv) throw ExecError(ExecErrorKind::BadGeometry, idx, g.error);
                geom = g.conv;
            }
            for (std::uint32_t it = 0; it < in.iterations(); ++it) {
                const isa::Footprint f = isa::iteration_footprint(in, it, s.regs, cfg);
                if (f.acc_write.end > cfg.acc_entries)
                    throw ExecError(ExecErrorKind::AccOutOfRange, idx, "accumulator rows out of range");
                if (geom) convolve(s, f.ub_read.begin, static_cast<std::uint32_t>(f.acc_write.begin), *geom,
                                   accumulate, in16, sgn, idx);
                else matrix_multiply(s, f.ub_read.begin, static_cast<std::uint32_t>(f.acc_write.begin), in.length,
                                     accumulate, in16, sgn, idx);
                ev.bytes += f.ub_read.size() * row_bytes;
            }
            break;
        }
        case Opcode::Activate: {
            const ActivationFn fn = isa::activate_fn(in);
            const PoolKind pool = isa::activate_pool(in);
            const OutputFormat out{(in.flags & isa::ActivateFlag::kOutput16) != 0,
                                   (in.flags & isa::ActivateFlag::kOutputUnsigned) != 0};
            if (s.regs.requant_shift() > 62)
                throw ExecError(ExecErrorKind::BadGeometry, idx, "requant shift above 62");
            const Requant rq{s.regs.requant_scale(), s.regs.requant_shift()};
            std::optional<isa::PoolGeometry> geom;
            if (pool != PoolKind::None) {
                auto g = isa::pool_geometry(in, s.regs);
                if (!g.pool) throw ExecError(ExecErrorKind::InvalidPoolWindow, idx, g.error);
                geom = g.pool;
            }
            for (std::uint32_t it = 0; it < in.iterations(); ++it) {
                const isa::Footprint f = isa::iteration_footprint(in, it, s.regs, cfg);
                if (f.acc_read.end > cfg.acc_entries)
                    throw ExecError(ExecErrorKind::AccOutOfRange, idx, "accumulator rows out of range");
                if (geom) activate_pooled(s, static_cast<std::uint32_t>(f.acc_read.begin), f.ub_write.begin, *geom,
                                          pool, fn, rq, out, idx);
                else activate(s, static_cast<std::uint32_t>(f.acc_read.begin), f.ub_write.begin, in.length, fn, rq,
                              out, idx);
                ev.bytes += f.ub_write.size() * row_bytes;
            }
            break;
        }
        case Opcode::Nop:
        case Opcode::SyncA:
        case Opcode::SyncB:
        case Opcode::InterruptHost:
        case Opcode::DebugTag:
        case Opcode::Halt:
            break;
        }
        result.events.push_back(ev);
    }
    return result;
}

} // namespace tpusim::func
