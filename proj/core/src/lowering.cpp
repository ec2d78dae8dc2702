#include "tpusim/lowering.hpp"

#include <algorithm>
#include <optional>

namespace tpusim::lowering {

using isa::ConfigReg;
using isa::Instruction;
using workloads::ConvShape;
using workloads::LayerKind;
using workloads::LayerSpec;
using workloads::PoolShape;
using workloads::TensorShape;
using workloads::WorkloadSpec;

double useful_mac_fraction(const TilePlan& plan) {
    return plan.padded_macs == 0 ? 0.0 : static_cast<double>(plan.true_macs) / static_cast<double>(plan.padded_macs);
}

namespace {

std::uint32_t ceil_div(std::uint64_t a, std::uint64_t b) { return static_cast<std::uint32_t>((a + b - 1) / b); }

struct Stage {
    std::size_t layer = 0;
    const LayerSpec* spec = nullptr;
    const PoolShape* pool = nullptr;
    TensorShape in;
    TensorShape out;
};

struct Segment {
    std::uint32_t acc_row = 0;
    std::uint32_t first = 0;  ///< chunk offset within the group
    std::uint32_t count = 0;
};

struct Op {
    Instruction in;
    std::uint64_t useful = 0;
    bool marker = false;
    std::uint64_t unit = 0;
    bool wide = false;
};

class Builder {
public:
    Builder(const WorkloadSpec& ws, const arch::TpuConfig& cfg, const workloads::QuantizedModel* model,
            LoweredProgram& out)
        : ws_(ws), cfg_(cfg), model_(model), out_(out), dim_(cfg.matrix_dim) {}

    void run() {
        ws_.validate();
        cfg_.validate();
        if (model_ && model_->weights.size() != ws_.layers.size())
            throw Error("lower: model does not match workload");
        build_stages();
        layout_tensors();
        allocate_weights();
        for (std::size_t s = 0; s < stages_.size(); ++s) emit_stage(s);
        ops_.push_back({isa::make_halt()});
        finalize();
    }

private:
    const WorkloadSpec& ws_;
    const arch::TpuConfig& cfg_;
    const workloads::QuantizedModel* model_;
    LoweredProgram& out_;
    std::uint32_t dim_;

    std::vector<Stage> stages_;
    std::vector<TensorLayout> tensors_;
    std::vector<std::uint64_t> unit_base_;
    std::optional<std::uint64_t> identity_unit_;
    std::vector<Op> ops_;
    std::uint64_t acc_cursor_ = 0;

    void build_stages() {
        const auto shapes = ws_.layer_outputs();
        TensorShape cur = ws_.input_shape();
        for (std::size_t i = 0; i < ws_.layers.size(); ++i) {
            const auto& l = ws_.layers[i];
            if (l.kind() == LayerKind::Pool)
                throw DoesNotFit("pool", "pool layer " + std::to_string(i) + " does not follow a convolution");
            Stage st{i, &l, nullptr, cur, shapes[i]};
            if (l.kind() == LayerKind::Conv && i + 1 < ws_.layers.size() &&
                ws_.layers[i + 1].kind() == LayerKind::Pool) {
                st.pool = &std::get<PoolShape>(ws_.layers[i + 1].shape);
                st.out = shapes[i + 1];
                ++i;
            }
            stages_.push_back(st);
            cur = st.out;
        }
    }

    TensorLayout make_layout(const TensorShape& shape, bool is_unsigned) const {
        TensorLayout t;
        t.shape = shape;
        t.batch = ws_.batch;
        t.ctiles = ceil_div(shape.channels, dim_);
        t.wide = ws_.activation_bits == 16;
        t.is_unsigned = is_unsigned;
        return t;
    }

    void layout_tensors() {
        tensors_.push_back(make_layout(stages_.front().in, false));
        for (const auto& st : stages_)
            tensors_.push_back(make_layout(st.out, st.spec->activation == isa::ActivationFn::Sigmoid));
        const int n_stages = static_cast<int>(stages_.size());
        auto& alloc = out_.ub;
        for (std::size_t t = 0; t < tensors_.size(); ++t) {
            UbInterval iv;
            iv.tensor = t == 0 ? "input" : "layer" + std::to_string(stages_[t - 1].layer);
            iv.first_stage = static_cast<int>(t) - 1;
            iv.last_stage = std::min(static_cast<int>(t), n_stages - 1);
            const std::uint64_t rows = tensors_[t].rows();
            // First fit against every placed tensor whose lifetime overlaps.
            std::vector<std::pair<std::uint64_t, std::uint64_t>> busy;
            for (const auto& o : alloc.tensors)
                if (o.first_stage <= iv.last_stage && iv.first_stage <= o.last_stage)
                    busy.emplace_back(o.row_begin, o.row_end);
            std::sort(busy.begin(), busy.end());
            std::uint64_t pos = 0;
            for (const auto& [b, e] : busy) {
                if (pos + rows <= b) break;
                pos = std::max(pos, e);
            }
            iv.row_begin = pos;
            iv.row_end = pos + rows;
            tensors_[t].ub_row = pos;
            alloc.peak_rows = std::max(alloc.peak_rows, iv.row_end);
            alloc.tensors.push_back(iv);
        }
        alloc.peak_bytes = alloc.peak_rows * cfg_.ub_row_bytes();
        if (alloc.peak_rows > cfg_.ub_rows())
            throw DoesNotFit("unified_buffer", "needs " + std::to_string(alloc.peak_bytes) + " bytes, have " +
                                                   std::to_string(cfg_.ub_bytes));
        if (alloc.peak_rows > isa::kMaxUbAddr + 1ULL)
            throw DoesNotFit("unified_buffer", "row addresses exceed 24 bits");
        out_.input = tensors_.front();
        out_.output = tensors_.back();
        const std::uint64_t rb = cfg_.ub_row_bytes();
        out_.host.input_offset = 0;
        out_.host.input_bytes = out_.input.rows() * rb;
        out_.host.output_offset = out_.host.input_bytes;
        out_.host.output_bytes = out_.output.rows() * rb;
        if (out_.host.total_bytes() > 0xFFFFFFFFULL)
            throw DoesNotFit("host_memory", "host buffers exceed 32-bit DMA addresses");
    }

    std::uint32_t units_per_tile(const LayerSpec& l) const { return l.weight_bits == 16 ? 2u : 1u; }

    std::uint32_t taps(const Stage& st) const {
        if (const auto* c = std::get_if<ConvShape>(&st.spec->shape)) return c->kernel_h * c->kernel_w;
        return 1;
    }

    void allocate_weights() {
        std::uint64_t next = 0;
        const bool any_vector = std::any_of(stages_.begin(), stages_.end(),
                                            [](const Stage& s) { return s.spec->kind() == LayerKind::Vector; });
        if (any_vector) {
            identity_unit_ = next++;
            if (model_) {
                WeightBlob b{*identity_unit_, std::vector<std::uint8_t>(cfg_.tile_bytes(), 0)};
                for (std::uint32_t i = 0; i < dim_; ++i) b.bytes[std::size_t{i} * dim_ + i] = 1;
                out_.weights.push_back(std::move(b));
            }
        }
        for (const auto& st : stages_) {
            unit_base_.push_back(next);
            if (st.spec->kind() == LayerKind::Vector) continue;
            const std::uint64_t k = ceil_div(st.in.channels, dim_);
            const std::uint64_t j = ceil_div(st.out.channels, dim_);
            next += k * j * taps(st) * units_per_tile(*st.spec);
        }
        out_.plan.weight_units = next;
        if (next * cfg_.tile_bytes() > cfg_.weight_mem_bytes)
            throw DoesNotFit("weight_memory", "needs " + std::to_string(next * cfg_.tile_bytes()) + " bytes, have " +
                                                  std::to_string(cfg_.weight_mem_bytes));
        if (next > isa::kMaxUbAddr + 1ULL) throw DoesNotFit("weight_memory", "tile addresses exceed 24 bits");
    }

    std::uint64_t tile_unit(std::size_t s, std::uint32_t k, std::uint32_t tap, std::uint32_t j) const {
        const Stage& st = stages_[s];
        const std::uint64_t kt = ceil_div(st.in.channels, dim_);
        return unit_base_[s] + ((std::uint64_t{j} * taps(st) + tap) * kt + k) * units_per_tile(*st.spec);
    }

    void build_tile(std::size_t s, std::uint32_t k, std::uint32_t tap, std::uint32_t j) {
        const Stage& st = stages_[s];
        const auto& w = model_->weights[st.layer];
        const bool wide = st.spec->weight_bits == 16;
        WeightBlob b{tile_unit(s, k, tap, j), std::vector<std::uint8_t>(cfg_.tile_bytes() * (wide ? 2 : 1), 0)};
        const std::uint32_t cin = st.in.channels, cout = st.out.channels;
        for (std::uint32_t i = 0; i < dim_; ++i) {
            const std::uint64_t c = std::uint64_t{k} * dim_ + i;
            if (c >= cin) break;
            for (std::uint32_t o = 0; o < dim_; ++o) {
                const std::uint64_t m = std::uint64_t{j} * dim_ + o;
                if (m >= cout) break;
                // FC: [in][out]; conv: [r][s][c][m] so tap-major.
                const std::int32_t v = w[(std::uint64_t{tap} * cin + c) * cout + m];
                const std::size_t at = std::size_t{i} * dim_ + o;
                if (wide) {
                    b.bytes[2 * at] = static_cast<std::uint8_t>(v & 0xFF);
                    b.bytes[2 * at + 1] = static_cast<std::uint8_t>((v >> 8) & 0xFF);
                } else {
                    b.bytes[at] = static_cast<std::uint8_t>(v & 0xFF);
                }
            }
        }
        out_.weights.push_back(std::move(b));
    }

    void emit(const Instruction& in, std::uint64_t useful = 0) { ops_.push_back({in, useful}); }
    void marker(std::uint64_t unit, bool wide) { ops_.push_back({isa::make_nop(), 0, true, unit, wide}); }

    /// Ring allocation of `n` chunks of `chunk_rows` accumulator rows.
    std::vector<Segment> alloc_acc(std::uint32_t n, std::uint32_t chunk_rows) {
        const std::uint32_t cap = cfg_.acc_entries / chunk_rows;
        std::uint32_t slot = static_cast<std::uint32_t>(((acc_cursor_ + chunk_rows - 1) / chunk_rows) % cap);
        std::vector<Segment> segs;
        std::uint32_t done = 0;
        while (done < n) {
            const std::uint32_t run = std::min(n - done, cap - slot);
            segs.push_back({slot * chunk_rows, done, run});
            done += run;
            slot = (slot + run) % cap;
        }
        acc_cursor_ = std::uint64_t{slot} * chunk_rows;
        return segs;
    }

    std::vector<std::pair<std::uint32_t, std::uint32_t>> groups(std::uint32_t n, std::uint32_t chunk_rows) const {
        if (chunk_rows > cfg_.acc_entries)
            throw DoesNotFit("accumulators", "one sample needs " + std::to_string(chunk_rows) +
                                                 " accumulator rows, have " + std::to_string(cfg_.acc_entries));
        const std::uint32_t cap = cfg_.acc_entries / chunk_rows;
        std::uint32_t count = 1;
        if (n > cap) count = ceil_div(n, std::max<std::uint32_t>(1, cap / 2));
        const std::uint32_t size = ceil_div(n, count);
        std::vector<std::pair<std::uint32_t, std::uint32_t>> g;
        for (std::uint32_t c0 = 0; c0 < n; c0 += size) g.emplace_back(c0, std::min(size, n - c0));
        return g;
    }

    void emit_input_dma(std::uint32_t k) {
        const TensorLayout& x = tensors_.front();
        const std::uint64_t row = x.ub_row + k * x.rows_per_ctile();
        emit(isa::make_set_config(ConfigReg::HostAddr,
                                  static_cast<std::uint32_t>(out_.host.input_offset +
                                                             k * x.rows_per_ctile() * cfg_.ub_row_bytes())));
        emit(isa::make_read_host(static_cast<std::uint32_t>(row), static_cast<std::uint32_t>(x.rows_per_ctile())));
        out_.plan.input_dma_bytes += x.rows_per_ctile() * cfg_.ub_row_bytes();
    }

    void emit_output_dma(std::uint64_t ub_row, std::uint64_t rows) {
        const TensorLayout& y = tensors_.back();
        const std::uint64_t host = out_.host.output_offset + (ub_row - y.ub_row) * cfg_.ub_row_bytes();
        emit(isa::make_set_config(ConfigReg::HostAddrAlt, static_cast<std::uint32_t>(host)));
        emit(isa::make_write_host(static_cast<std::uint32_t>(ub_row), static_cast<std::uint32_t>(rows), 0, true));
        out_.plan.output_dma_bytes += rows * cfg_.ub_row_bytes();
    }

    std::uint32_t valid(std::uint32_t channels, std::uint32_t tile) const {
        return std::min<std::uint32_t>(dim_, channels - tile * dim_);
    }

    void emit_stage(std::size_t s) {
        const Stage& st = stages_[s];
        const LayerSpec& l = *st.spec;
        const TensorLayout& x = tensors_[s];
        const TensorLayout& y = tensors_[s + 1];
        const bool first = s == 0;
        const bool last = s + 1 == stages_.size();
        const LayerKind kind = l.kind();
        const bool wide_w = kind != LayerKind::Vector && l.weight_bits == 16;
        const std::uint32_t mult = (x.wide ? 2 : 1) * (wide_w ? 2 : 1);

        LayerPlan lp;
        lp.layer = st.layer;
        lp.kind = kind;
        lp.row_tiles = x.ctiles;
        lp.col_tiles = y.ctiles;
        lp.taps = taps(st);
        lp.pad_rows = x.ctiles * dim_ - st.in.channels;
        lp.pad_cols = y.ctiles * dim_ - st.out.channels;
        lp.wide_weights = wide_w;
        lp.wide_inputs = x.wide;
        if (kind == LayerKind::Vector) {
            lp.tile_useful.assign(std::size_t{y.ctiles}, 0.0);
        } else {
            for (std::uint32_t j = 0; j < y.ctiles; ++j)
                for (std::uint32_t t = 0; t < lp.taps; ++t)
                    for (std::uint32_t k = 0; k < x.ctiles; ++k)
                        lp.tile_useful.push_back(static_cast<double>(valid(st.in.channels, k)) *
                                                 valid(st.out.channels, j) / (double(dim_) * dim_));
        }
        if (model_ && kind != LayerKind::Vector)
            for (std::uint32_t j = 0; j < y.ctiles; ++j)
                for (std::uint32_t t = 0; t < lp.taps; ++t)
                    for (std::uint32_t k = 0; k < x.ctiles; ++k) build_tile(s, k, t, j);

        emit(isa::make_set_config(ConfigReg::RequantScale, static_cast<std::uint32_t>(l.requant.scale)));
        emit(isa::make_set_config(ConfigReg::RequantShift, l.requant.shift));

        const ConvShape* cs = std::get_if<ConvShape>(&l.shape);
        std::uint32_t out_h = 1, out_w = 1;  // accumulator image (before pooling)
        if (cs) {
            if (cs->image_h > 0xFFFF || cs->image_w > 0xFFFF) throw DoesNotFit("geometry", "image dims exceed 16 bits");
            out_h = cs->out_h();
            out_w = cs->out_w();
            emit(isa::make_set_config(ConfigReg::ConvInputDims, (cs->image_h << 16) | cs->image_w));
            emit(isa::make_set_config(ConfigReg::ConvStride, cs->stride));
            emit(isa::make_set_config(ConfigReg::ConvPad, cs->pad));
        } else if (kind == LayerKind::Vector) {
            out_h = st.in.h;
            out_w = st.in.w;
        }
        if (st.pool) {
            emit(isa::make_set_config(ConfigReg::PoolWindow, st.pool->window));
            emit(isa::make_set_config(ConfigReg::PoolStride, st.pool->stride));
            emit(isa::make_set_config(ConfigReg::PoolPad, st.pool->pad));
        }

        const std::uint32_t acc_pix = out_h * out_w;            // accumulator rows per sample
        const std::uint64_t in_rows = x.pixels() * x.span();    // UB rows per input sample
        const std::uint64_t out_rows = y.pixels() * y.span();   // UB rows per output sample
        const auto grp = groups(ws_.batch, acc_pix);
        lp.groups = static_cast<std::uint32_t>(grp.size());
        const std::uint8_t in_flags = (x.wide ? isa::MatMulFlag::kInput16 : 0) |
                                      (x.is_unsigned ? 0 : isa::MatMulFlag::kInputSigned);
        const std::uint64_t dim2 = std::uint64_t{dim_} * dim_;
        bool dma_done = !first;

        for (const auto& [c0, n] : grp) {
            for (std::uint32_t j = 0; j < y.ctiles; ++j) {
                const auto segs = alloc_acc(n, acc_pix);
                const std::uint32_t k_begin = kind == LayerKind::Vector ? j : 0;
                const std::uint32_t k_end = kind == LayerKind::Vector ? j + 1 : x.ctiles;
                bool first_pass = true;
                for (std::uint32_t k = k_begin; k < k_end; ++k) {
                    if (!dma_done) emit_input_dma(k);
                    for (std::uint32_t tap = 0; tap < lp.taps; ++tap) {
                        if (cs) {
                            const std::uint32_t r = tap / cs->kernel_w, c = tap % cs->kernel_w;
                            emit(isa::make_set_config(ConfigReg::ConvTap, (r << 8) | c));
                        }
                        if (kind == LayerKind::Vector) marker(*identity_unit_, false);
                        else marker(tile_unit(s, k, tap, j), wide_w);
                        ++lp.tile_passes;
                        const std::uint64_t useful_per_row =
                            kind == LayerKind::Vector
                                ? 0
                                : std::uint64_t{valid(st.in.channels, k)} * valid(st.out.channels, j);
                        bool switched = false;
                        for (const auto& seg : segs) {
                            const std::uint64_t ub_in = x.ub_row + k * x.rows_per_ctile() + (c0 + seg.first) * in_rows;
                            std::uint8_t flags = in_flags;
                            if (!first_pass) flags |= isa::MatMulFlag::kAccumulate;
                            if (cs) {
                                for (std::uint32_t p = 0; p < seg.count; p += 256) {
                                    const std::uint32_t cnt = std::min<std::uint32_t>(256, seg.count - p);
                                    std::uint8_t f = flags;
                                    if (!switched) f |= isa::MatMulFlag::kSwitchTile;
                                    switched = true;
                                    emit(isa::make_convolve(static_cast<std::uint32_t>(ub_in + p * in_rows),
                                                            static_cast<std::uint16_t>(seg.acc_row + p * acc_pix),
                                                            static_cast<std::uint16_t>(out_h),
                                                            static_cast<std::uint16_t>(out_w), f,
                                                            static_cast<std::uint8_t>(cnt - 1)),
                                         std::uint64_t{cnt} * acc_pix * useful_per_row);
                                    lp.matrix_cycles += std::uint64_t{cnt} * acc_pix * mult;
                                }
                            } else {
                                if (!switched) flags |= isa::MatMulFlag::kSwitchTile;
                                switched = true;
                                const std::uint32_t rows = seg.count * acc_pix;
                                emit(isa::make_matmul(static_cast<std::uint32_t>(ub_in),
                                                      static_cast<std::uint16_t>(seg.acc_row), rows, flags),
                                     rows * useful_per_row);
                                lp.matrix_cycles += std::uint64_t{rows} * mult;
                            }
                            const std::uint64_t rows = std::uint64_t{seg.count} * acc_pix;
                            lp.padded_macs += rows * dim2;
                            lp.true_macs += rows * useful_per_row;
                        }
                        first_pass = false;
                    }
                }
                dma_done = true;
                for (const auto& seg : segs) {
                    const std::uint64_t ub_out = y.ub_row + j * y.rows_per_ctile() + (c0 + seg.first) * out_rows;
                    if (st.pool) {
                        for (std::uint32_t p = 0; p < seg.count; p += 256) {
                            const std::uint32_t cnt = std::min<std::uint32_t>(256, seg.count - p);
                            emit(isa::make_activate(static_cast<std::uint32_t>(ub_out + p * out_rows),
                                                    static_cast<std::uint16_t>(seg.acc_row + p * acc_pix),
                                                    (out_h << 16) | out_w, l.activation, st.pool->kind, y.wide,
                                                    y.is_unsigned, static_cast<std::uint8_t>(cnt - 1)));
                        }
                    } else {
                        emit(isa::make_activate(static_cast<std::uint32_t>(ub_out), static_cast<std::uint16_t>(seg.acc_row),
                                                seg.count * acc_pix, l.activation, isa::PoolKind::None, y.wide,
                                                y.is_unsigned));
                    }
                    lp.activation_rows += std::uint64_t{seg.count} * acc_pix;
                    if (last) emit_output_dma(ub_out, std::uint64_t{seg.count} * out_rows);
                }
            }
        }
        out_.plan.true_macs += lp.true_macs;
        out_.plan.padded_macs += lp.padded_macs;
        out_.plan.layers.push_back(std::move(lp));
    }

    void finalize() {
        struct T {
            std::uint64_t unit;
            bool wide;
        };
        std::vector<T> tiles;
        for (const auto& op : ops_)
            if (op.marker) tiles.push_back({op.unit, op.wide});
        const std::size_t ahead = cfg_.fifo_depth_tiles == 0 ? 0 : cfg_.fifo_depth_tiles + 1;
        std::size_t requested = 0, consumed = 0;
        auto& prog = out_.program;
        prog.name = ws_.name;
        prog.config_hash = arch::config_hash(cfg_);
        for (const auto& op : ops_) {
            if (!op.marker) {
                prog.instructions.push_back(op.in);
                out_.useful_macs.push_back(op.useful);
                continue;
            }
            const std::size_t target = std::min(tiles.size(), consumed + 1 + ahead);
            while (requested < target) {
                std::size_t n = 1;
                const std::uint32_t units = tiles[requested].wide ? 2 : 1;
                while (requested + n < target && tiles[requested + n].wide == tiles[requested].wide &&
                       tiles[requested + n].unit == tiles[requested].unit + n * units)
                    ++n;
                prog.instructions.push_back(isa::make_read_weights(static_cast<std::uint32_t>(tiles[requested].unit),
                                                                   static_cast<std::uint32_t>(n),
                                                                   tiles[requested].wide, true));
                out_.useful_macs.push_back(0);
                requested += n;
            }
            ++consumed;
        }
    }
};

} // namespace

LoweredProgram lower(const WorkloadSpec& ws, const arch::TpuConfig& cfg, const workloads::QuantizedModel* model) {
    LoweredProgram out;
    Builder(ws, cfg, model, out).run();
    return out;
}

std::uint64_t ub_footprint(const WorkloadSpec& ws, const arch::TpuConfig& cfg) {
    return lower(ws, cfg).ub.peak_bytes;
}

func::HostMemory pack_input(const LoweredProgram& lp, const std::vector<std::vector<std::int32_t>>& samples,
                            const arch::TpuConfig& cfg) {
    const TensorLayout& x = lp.input;
    if (samples.size() != x.batch) throw Error("pack_input: expected " + std::to_string(x.batch) + " samples");
    func::HostMemory host(static_cast<std::size_t>(lp.host.total_bytes()));
    auto bytes = host.bytes();
    const std::uint64_t rb = cfg.ub_row_bytes();
    const std::uint32_t dim = cfg.matrix_dim;
    for (std::uint32_t n = 0; n < x.batch; ++n) {
        if (samples[n].size() != x.shape.elements()) throw Error("pack_input: sample has the wrong size");
        for (std::uint64_t p = 0; p < x.pixels(); ++p) {
            for (std::uint32_t c = 0; c < x.shape.channels; ++c) {
                const std::uint32_t k = c / dim, i = c % dim;
                const std::uint64_t row = k * x.rows_per_ctile() + (std::uint64_t{n} * x.pixels() + p) * x.span();
                const std::int32_t v = samples[n][p * x.shape.channels + c];
                const std::uint64_t at = lp.host.input_offset + row * rb;
                if (x.wide) {
                    bytes[at + 2 * i] = static_cast<std::uint8_t>(v & 0xFF);
                    bytes[at + 2 * i + 1] = static_cast<std::uint8_t>((v >> 8) & 0xFF);
                } else {
                    bytes[at + i] = static_cast<std::uint8_t>(v & 0xFF);
                }
            }
        }
    }
    return host;
}

std::vector<std::vector<std::int32_t>> unpack_output(const LoweredProgram& lp, const func::HostMemory& host,
                                                     const arch::TpuConfig& cfg) {
    const TensorLayout& y = lp.output;
    const auto bytes = host.bytes();
    const std::uint64_t rb = cfg.ub_row_bytes();
    const std::uint32_t dim = cfg.matrix_dim;
    std::vector<std::vector<std::int32_t>> out(y.batch, std::vector<std::int32_t>(y.shape.elements()));
    for (std::uint32_t n = 0; n < y.batch; ++n) {
        for (std::uint64_t p = 0; p < y.pixels(); ++p) {
            for (std::uint32_t c = 0; c < y.shape.channels; ++c) {
                const std::uint32_t k = c / dim, i = c % dim;
                const std::uint64_t row = k * y.rows_per_ctile() + (std::uint64_t{n} * y.pixels() + p) * y.span();
                const std::uint64_t at = lp.host.output_offset + row * rb;
                std::int32_t v;
                if (y.wide) {
                    const std::uint16_t u = static_cast<std::uint16_t>(bytes[at + 2 * i] | (bytes[at + 2 * i + 1] << 8));
                    v = y.is_unsigned ? std::int32_t{u} : std::int32_t{static_cast<std::int16_t>(u)};
                } else {
                    const std::uint8_t u = bytes[at + i];
                    v = y.is_unsigned ? std::int32_t{u} : std::int32_t{static_cast<std::int8_t>(u)};
                }
                out[n][p * y.shape.channels + c] = v;
            }
        }
    }
    return out;
}

void load_weights(const LoweredProgram& lp, func::TpuState& state) {
    for (const auto& b : lp.weights) state.wmem.write(b.unit * state.cfg.tile_bytes(), b.bytes);
}

nlohmann::json plan_report(const LoweredProgram& lp, const arch::TpuConfig& cfg) {
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& l : lp.plan.layers) {
        layers.push_back({{"layer", l.layer},
                          {"kind", std::string(workloads::to_string(l.kind))},
                          {"row_tiles", l.row_tiles},
                          {"col_tiles", l.col_tiles},
                          {"taps", l.taps},
                          {"pad_rows", l.pad_rows},
                          {"pad_cols", l.pad_cols},
                          {"groups", l.groups},
                          {"tile_passes", l.tile_passes},
                          {"matrix_cycles", l.matrix_cycles},
                          {"true_macs", l.true_macs},
                          {"padded_macs", l.padded_macs}});
    }
    nlohmann::json ub = nlohmann::json::array();
    for (const auto& t : lp.ub.tensors)
        ub.push_back({{"tensor", t.tensor},
                      {"first_stage", t.first_stage},
                      {"last_stage", t.last_stage},
                      {"row_begin", t.row_begin},
                      {"row_end", t.row_end}});
    return {{"program", lp.program.name},
            {"instructions", lp.program.instructions.size()},
            {"matrix_dim", cfg.matrix_dim},
            {"weight_tiles", lp.plan.weight_units},
            {"useful_mac_fraction", useful_mac_fraction(lp.plan)},
            {"true_macs", lp.plan.true_macs},
            {"padded_macs", lp.plan.padded_macs},
            {"ub_footprint_bytes", lp.ub.peak_bytes},
            {"host_bytes", lp.host.total_bytes()},
            {"layers", layers},
            {"ub_tensors", ub}};
}

} // namespace tpusim::lowering
