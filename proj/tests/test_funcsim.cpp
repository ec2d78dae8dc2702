#include <gtest/gtest.h>

#include <random>

#include "oracle.hpp"
#include "tpusim/funcsim.hpp"
#include "tpusim/lowering.hpp"

using namespace tpusim;
using namespace tpusim::func;
using isa::ActivationFn;
using isa::ConfigReg;
namespace MatMulFlag = isa::MatMulFlag;

namespace {

arch::TpuConfig small(std::uint32_t dim = 8) {
    arch::TpuConfig c;
    c.matrix_dim = dim;
    c.acc_entries = 64;
    c.ub_bytes = 64 * arch::kKiB;
    c.weight_mem_bytes = 1 * arch::kMiB;
    return c;
}

void put_tile(TpuState& s, std::uint64_t unit, const std::vector<std::int32_t>& w, bool wide) {
    std::vector<std::uint8_t> raw;
    for (std::int32_t v : w) {
        raw.push_back(static_cast<std::uint8_t>(v));
        if (wide) raw.push_back(static_cast<std::uint8_t>(static_cast<std::uint32_t>(v) >> 8));
    }
    s.wmem.write(unit * s.wmem.unit_bytes(), raw);
}

void put_rows(TpuState& s, std::uint64_t row, const std::vector<std::int32_t>& x, std::uint32_t rows, bool wide) {
    const std::uint32_t dim = s.cfg.matrix_dim;
    for (std::uint32_t b = 0; b < rows; ++b)
        for (std::uint32_t i = 0; i < dim; ++i) s.ub_store(row + b * (wide ? 2 : 1), i, x[b * dim + i], wide);
}

std::int32_t draw(std::mt19937_64& rng, bool wide, bool is_signed) {
    const std::int64_t span = wide ? 65536 : 256;
    const std::int64_t v = static_cast<std::int64_t>(rng() % span);
    return static_cast<std::int32_t>(is_signed ? v - span / 2 : v);
}

std::vector<std::int32_t> acc_rows(const TpuState& s, std::uint32_t base, std::uint32_t rows) {
    std::vector<std::int32_t> v;
    for (std::uint32_t r = 0; r < rows; ++r)
        for (std::int32_t x : s.acc_row(base + r)) v.push_back(x);
    return v;
}

isa::Program program(std::vector<isa::Instruction> ins) {
    isa::Program p;
    p.instructions = std::move(ins);
    p.instructions.push_back(isa::make_halt());
    return p;
}

} // namespace

TEST(Exec, HaltLeavesStateUnchanged) {
    const auto cfg = small();
    TpuState s(cfg);
    const TpuState before = s;
    HostMemory host(64);
    const auto r = execute(program({}), s, host);
    EXPECT_TRUE(r.halted);
    EXPECT_EQ(r.retired, 1u);
    EXPECT_TRUE(s == before);
}

TEST(Exec, HostRoundTrip) {
    const auto cfg = small();
    TpuState s(cfg);
    std::vector<std::uint8_t> data(4 * cfg.ub_row_bytes());
    std::mt19937_64 rng(3);
    for (auto& b : data) b = std::uint8_t(rng());
    HostMemory host(data);
    const auto p = program({isa::make_set_config(ConfigReg::HostAddr, 0), isa::make_read_host(10, 4),
                            isa::make_set_config(ConfigReg::HostAddr, 0), isa::make_write_host(10, 4)});
    execute(p, s, host);
    EXPECT_EQ(host, HostMemory(data));
    EXPECT_EQ(s.ub_load(10, 0, false, false), data[0]);
}

TEST(Matrix, TwoByTwoExample) {
    arch::TpuConfig cfg = small(2);
    cfg.acc_entries = 8;
    TpuState s(cfg);
    put_tile(s, 0, {5, 6, 7, 8}, false);
    put_rows(s, 0, {1, 2, 3, 4}, 2, false);
    HostMemory host;
    execute(program({isa::make_read_weights(0, 1), isa::make_matmul(0, 0, 2, MatMulFlag::kSwitchTile)}), s, host);
    EXPECT_EQ(acc_rows(s, 0, 2), (std::vector<std::int32_t>{19, 22, 43, 50}));
}

TEST(Matrix, IdentityAndAllOnes) {
    arch::TpuConfig cfg;
    cfg.weight_mem_bytes = 4 * arch::kMiB;
    TpuState s(cfg);
    const std::uint32_t d = cfg.matrix_dim;
    std::vector<std::int32_t> eye(d * d, 0), ones(d * d, 1);
    for (std::uint32_t i = 0; i < d; ++i) eye[i * d + i] = 1;
    put_tile(s, 0, eye, false);
    put_tile(s, 1, ones, false);
    std::vector<std::int32_t> x(d);
    for (std::uint32_t i = 0; i < d; ++i) x[i] = static_cast<std::int32_t>(i % 256) - 128;
    put_rows(s, 0, x, 1, false);
    put_rows(s, 1, std::vector<std::int32_t>(d, 1), 1, false);
    HostMemory host;
    execute(program({isa::make_read_weights(0, 2), isa::make_matmul(0, 0, 1, MatMulFlag::kSwitchTile | MatMulFlag::kInputSigned),
                     isa::make_matmul(1, 1, 1, MatMulFlag::kSwitchTile)}),
            s, host);
    EXPECT_EQ(acc_rows(s, 0, 1), x);
    EXPECT_EQ(acc_rows(s, 1, 1), std::vector<std::int32_t>(d, 256));
    EXPECT_EQ(cfg.tile_bytes(), 65536u);
}

TEST(Matrix, GemmEquivalenceRandomModes) {
    const auto cfg = small();
    const std::uint32_t d = cfg.matrix_dim;
    std::mt19937_64 rng(17);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::uint32_t rows = 1 + static_cast<std::uint32_t>(rng() % 16);
        const bool in16 = rng() & 1, w16 = rng() & 1, in_s = rng() & 1, w_s = rng() & 1, acc = rng() & 1;
        std::vector<std::int32_t> w(d * d), x(rows * d), x2(rows * d);
        for (auto& v : w) v = draw(rng, w16, w_s);
        for (auto& v : x) v = draw(rng, in16, in_s);
        for (auto& v : x2) v = draw(rng, in16, in_s);
        TpuState s(cfg);
        put_tile(s, 0, w, w16);
        put_rows(s, 0, x, rows, in16);
        put_rows(s, 40, x2, rows, in16);
        std::uint8_t flags = MatMulFlag::kSwitchTile | (in16 ? MatMulFlag::kInput16 : 0) |
                             (in_s ? MatMulFlag::kInputSigned : 0);
        std::uint8_t second = static_cast<std::uint8_t>((flags & ~MatMulFlag::kSwitchTile) |
                                                        (acc ? MatMulFlag::kAccumulate : 0));
        HostMemory host;
        execute(program({isa::make_read_weights(0, 1, w16, w_s), isa::make_matmul(0, 0, rows, flags),
                         isa::make_matmul(40, 0, rows, second)}),
                s, host);
        auto expect = oracle::gemm(x2, w, rows, d, d);
        if (acc) {
            const auto first = oracle::gemm(x, w, rows, d, d);
            for (std::size_t i = 0; i < expect.size(); ++i)
                expect[i] = oracle::wrap32(std::int64_t{expect[i]} + first[i]);
        }
        ASSERT_EQ(acc_rows(s, 0, rows), expect) << "trial " << trial;
    }
}

TEST(Matrix, OverflowWrapsAndCounts) {
    const auto cfg = small();
    const std::uint32_t d = cfg.matrix_dim;
    TpuState s(cfg);
    put_tile(s, 0, std::vector<std::int32_t>(d * d, 32767), true);
    put_rows(s, 0, std::vector<std::int32_t>(d, 32767), 1, true);
    HostMemory host;
    execute(program({isa::make_read_weights(0, 1, true, true),
                     isa::make_matmul(0, 0, 1, MatMulFlag::kSwitchTile | MatMulFlag::kInput16 |
                                                   MatMulFlag::kInputSigned)}),
            s, host);
    EXPECT_EQ(s.acc_at(0, 0), oracle::wrap32(std::int64_t{32767} * 32767 * d));
    EXPECT_GT(s.overflow_count, 0u);
}

TEST(Matrix, ConvolveMatchesDirectConvolution) {
    const auto cfg = small();  // C = M = 8
    const std::uint32_t C = cfg.matrix_dim, H = 5, W = 5, R = 3;
    std::mt19937_64 rng(23);
    for (std::uint32_t pad : {0u, 1u}) {
        const std::uint32_t oh = H + 2 * pad - R + 1, ow = W + 2 * pad - R + 1;
        std::vector<std::int32_t> img(H * W * C), ker(R * R * C * C);
        for (auto& v : img) v = draw(rng, false, true);
        for (auto& v : ker) v = draw(rng, false, true);
        TpuState s(cfg);
        for (std::uint32_t t = 0; t < R * R; ++t)
            put_tile(s, t, std::vector<std::int32_t>(ker.begin() + t * C * C, ker.begin() + (t + 1) * C * C), false);
        put_rows(s, 0, img, H * W, false);
        std::vector<isa::Instruction> ins = {isa::make_set_config(ConfigReg::ConvInputDims, (H << 16) | W),
                                             isa::make_set_config(ConfigReg::ConvStride, 1),
                                             isa::make_set_config(ConfigReg::ConvPad, pad),
                                             isa::make_read_weights(0, R * R)};
        for (std::uint32_t t = 0; t < R * R; ++t) {
            ins.push_back(isa::make_set_config(ConfigReg::ConvTap, ((t / R) << 8) | (t % R)));
            const std::uint8_t f = MatMulFlag::kSwitchTile | MatMulFlag::kInputSigned |
                                   (t ? MatMulFlag::kAccumulate : 0);
            ins.push_back(isa::make_convolve(0, 0, std::uint16_t(oh), std::uint16_t(ow), f));
        }
        HostMemory host;
        execute(program(ins), s, host);
        for (std::uint32_t oy = 0; oy < oh; ++oy)
            for (std::uint32_t ox = 0; ox < ow; ++ox)
                for (std::uint32_t m = 0; m < C; ++m) {
                    std::int64_t sum = 0;
                    for (std::uint32_t r = 0; r < R; ++r)
                        for (std::uint32_t q = 0; q < R; ++q) {
                            const int iy = int(oy + r) - int(pad), ix = int(ox + q) - int(pad);
                            if (iy < 0 || ix < 0 || iy >= int(H) || ix >= int(W)) continue;
                            for (std::uint32_t c = 0; c < C; ++c)
                                sum += std::int64_t{img[(iy * W + ix) * C + c]} * ker[((r * R + q) * C + c) * C + m];
                        }
                    ASSERT_EQ(s.acc_at(oy * ow + ox, m), sum) << pad << " " << oy << " " << ox << " " << m;
                }
    }
}

TEST(Matrix, Errors) {
    const auto cfg = small();
    TpuState s(cfg);
    HostMemory host;
    try {
        execute(program({isa::make_matmul(0, 0, 1, 0)}), s, host);
        FAIL();
    } catch (const ExecError& e) {
        EXPECT_EQ(e.kind(), ExecErrorKind::FifoUnderflow);
    }
    TpuState t(cfg);
    EXPECT_THROW(matrix_multiply(t, 0, cfg.acc_entries, 1, false, false, true), ExecError);
    EXPECT_THROW(read_weights(t, t.wmem.units(), 1, false, true), ExecError);
}

TEST(Fifo, FifthTileWaitsForSpace) {
    const auto cfg = small();
    TpuState s(cfg);
    for (std::uint32_t t = 0; t < 5; ++t) put_tile(s, t, std::vector<std::int32_t>(64, std::int32_t(t)), false);
    read_weights(s, 0, 5, false, true);
    EXPECT_EQ(s.wfifo.size(), 4u);
    EXPECT_EQ(s.pending.size(), 1u);
    switch_tile(s);
    EXPECT_EQ(s.active_tile->at(0, 0), 0);
    EXPECT_LE(s.wfifo.size(), 4u);
    EXPECT_TRUE(s.pending.empty());
    for (std::int32_t expect = 1; expect < 5; ++expect) {
        switch_tile(s);
        EXPECT_EQ(s.active_tile->at(0, 0), expect);
    }
    EXPECT_THROW(switch_tile(s), ExecError);
}

TEST(Activate, PipelineExamples) {
    const Requant unit{1, 0};
    EXPECT_EQ(activation_pipeline(-5, ActivationFn::ReLU, unit, {}), 0);
    EXPECT_EQ(activation_pipeline(100, ActivationFn::Identity, unit, {}), 100);
    EXPECT_EQ(activation_pipeline(0, ActivationFn::Sigmoid, unit, {false, true}), 128);
    EXPECT_EQ(activation_pipeline(1000, ActivationFn::Identity, unit, {}), 127);
    EXPECT_EQ(activation_pipeline(1000, ActivationFn::Identity, unit, {true, false}), 1000);
}

TEST(Activate, LutsMatchRealFunctions) {
    const Requant unit{1, 0};
    for (int q = -128; q < 128; ++q) {
        EXPECT_EQ(activation_pipeline(q, ActivationFn::Sigmoid, unit, {false, true}),
                  oracle::apply(q, ActivationFn::Sigmoid, unit, false))
            << q;
        EXPECT_EQ(activation_pipeline(q, ActivationFn::Tanh, unit, {}), oracle::apply(q, ActivationFn::Tanh, unit, false))
            << q;
    }
}

TEST(Activate, RequantMatchesRationalOracle) {
    std::mt19937_64 rng(8);
    for (int i = 0; i < 100000; ++i) {
        const std::int64_t v = static_cast<std::int32_t>(rng());
        const std::int32_t scale = static_cast<std::int32_t>(rng() % (1u << 31));
        const std::uint32_t shift = static_cast<std::uint32_t>(rng() % 63);
        ASSERT_EQ(requantize(v, scale, shift), oracle::requant(v, scale, shift)) << v << " " << scale << " " << shift;
    }
    EXPECT_EQ(div_round_away(5, 2), 3);
    EXPECT_EQ(div_round_away(-5, 2), -3);
}

TEST(Activate, UnitWritesUb) {
    const auto cfg = small();
    TpuState s(cfg);
    put_tile(s, 0, [] {
        std::vector<std::int32_t> eye(64, 0);
        for (int i = 0; i < 8; ++i) eye[i * 8 + i] = 1;
        return eye;
    }(), false);
    put_rows(s, 0, {-5, 100, 3, -128, 127, 0, 1, -1}, 1, false);
    HostMemory host;
    execute(program({isa::make_read_weights(0, 1),
                     isa::make_matmul(0, 0, 1, MatMulFlag::kSwitchTile | MatMulFlag::kInputSigned),
                     isa::make_activate(5, 0, 1, ActivationFn::ReLU)}),
            s, host);
    const std::vector<std::int32_t> expect = {0, 100, 3, 0, 127, 0, 1, 0};
    for (std::uint32_t i = 0; i < 8; ++i) EXPECT_EQ(s.ub_load(5, i, false, true), expect[i]);
}

TEST(Exec, LoweredFcLayerMatchesOracle) {
    const auto cfg = small();
    workloads::WorkloadSpec ws{"fc", {workloads::fc(20, 12), workloads::fc(12, 5, ActivationFn::Identity)}, 7, 8};
    const auto model = workloads::synthetic_model(ws, 4);
    const auto inputs = workloads::synthetic_inputs(ws, 4);
    const auto lp = lowering::lower(model.spec, cfg, &model);
    TpuState s(cfg);
    lowering::load_weights(lp, s);
    auto host = lowering::pack_input(lp, inputs, cfg);
    EXPECT_TRUE(execute(lp.program, s, host).halted);
    const auto out = lowering::unpack_output(lp, host, cfg);
    for (std::size_t b = 0; b < inputs.size(); ++b) EXPECT_EQ(out[b], oracle::forward(model, inputs[b])) << b;
}

TEST(Exec, DeterministicStateAndLog) {
    const auto cfg = small();
    workloads::WorkloadSpec ws{"fc", {workloads::fc(16, 16)}, 5, 8};
    const auto model = workloads::synthetic_model(ws, 1);
    const auto lp = lowering::lower(ws, cfg, &model);
    auto once = [&] {
        TpuState s(cfg);
        lowering::load_weights(lp, s);
        auto host = lowering::pack_input(lp, workloads::synthetic_inputs(ws, 1), cfg);
        auto r = execute(lp.program, s, host);
        return std::make_tuple(s, host, r.events);
    };
    const auto a = once(), b = once();
    EXPECT_TRUE(std::get<0>(a) == std::get<0>(b));
    EXPECT_EQ(std::get<1>(a), std::get<1>(b));
    EXPECT_EQ(std::get<2>(a), std::get<2>(b));
    const auto text = events_to_jsonl(std::get<2>(a));
    EXPECT_EQ(static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n')), std::get<2>(a).size());
}
