#include <benchmark/benchmark.h>

#include <random>

#include "tpusim/analysis.hpp"
#include "tpusim/funcsim.hpp"
#include "tpusim/isa.hpp"
#include "tpusim/lowering.hpp"
#include "tpusim/timesim.hpp"

using namespace tpusim;

namespace {

void BM_MatrixMultiply(benchmark::State& state) {
    const arch::TpuConfig cfg;
    func::TpuState s(cfg);
    const auto rows = static_cast<std::uint32_t>(state.range(0));
    for (std::uint32_t r = 0; r < rows; ++r)
        for (std::uint32_t i = 0; i < cfg.matrix_dim; ++i) s.ub_store(r, i, std::int32_t((r * 31 + i) % 255) - 127, false);
    for (auto _ : state) {
        func::read_weights(s, 0, 1, false, true);
        func::switch_tile(s);
        func::matrix_multiply(s, 0, 0, rows, false, false, true);
        benchmark::DoNotOptimize(s.acc.data());
    }
    state.counters["MAC/s"] = benchmark::Counter(double(rows) * cfg.matrix_dim * cfg.matrix_dim,
                                                 benchmark::Counter::kIsIterationInvariantRate);
}
BENCHMARK(BM_MatrixMultiply)->Arg(16)->Arg(256);

void BM_FunctionalFcNetwork(benchmark::State& state) {
    arch::TpuConfig cfg;
    workloads::WorkloadSpec ws{"fc", {workloads::fc(512, 512), workloads::fc(512, 256)}, 32, 8};
    const auto model = workloads::synthetic_model(ws, 1);
    const auto inputs = workloads::synthetic_inputs(ws, 1);
    const auto lp = lowering::lower(model.spec, cfg, &model);
    for (auto _ : state) {
        func::TpuState s(cfg);
        lowering::load_weights(lp, s);
        auto host = lowering::pack_input(lp, inputs, cfg);
        benchmark::DoNotOptimize(func::execute(lp.program, s, host).retired);
    }
}
BENCHMARK(BM_FunctionalFcNetwork)->Unit(benchmark::kMillisecond);

void BM_TimingPreset(benchmark::State& state, const char* name) {
    const arch::TpuConfig cfg;
    const auto lp = lowering::lower(workloads::make_preset(name), cfg);
    timing::TimingOptions o;
    o.useful_macs = lp.useful_macs;
    for (auto _ : state) benchmark::DoNotOptimize(timing::simulate_timed(lp.program, cfg, o).counters.total_cycles);
    state.counters["instructions"] = double(lp.program.instructions.size());
}
BENCHMARK_CAPTURE(BM_TimingPreset, MLP0, "MLP0")->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(BM_TimingPreset, CNN1, "CNN1")->Unit(benchmark::kMillisecond);

void BM_Estimate(benchmark::State& state) {
    const arch::TpuConfig cfg;
    const auto ws = workloads::make_preset("LSTM0");
    for (auto _ : state) benchmark::DoNotOptimize(analysis::estimate_perf(ws, cfg).cycles);
}
BENCHMARK(BM_Estimate);

void BM_EncodeDecode(benchmark::State& state) {
    std::mt19937_64 rng(7);
    std::vector<isa::Instruction> ins;
    while (ins.size() < 4096) {
        isa::Instruction in;
        in.opcode = isa::kAllOpcodes[rng() % isa::kOpcodeCount];
        in.ub_addr = std::uint32_t(rng() & isa::kMaxUbAddr);
        in.acc_addr = std::uint16_t(rng());
        in.length = std::uint32_t(rng());
        in.repeat = std::uint8_t(rng());
        try {
            isa::encode(in);
            ins.push_back(in);
        } catch (const isa::EncodeError&) {
        }
    }
    for (auto _ : state)
        for (const auto& in : ins) benchmark::DoNotOptimize(isa::decode(isa::encode(in)));
    state.SetItemsProcessed(state.iterations() * std::int64_t(ins.size()));
}
BENCHMARK(BM_EncodeDecode);

} // namespace

BENCHMARK_MAIN();
