#include <string>

#include <benchmark/benchmark.h>

#include "opfcert/acpf/acpf.hpp"
#include "opfcert/bounds/crown.hpp"
#include "opfcert/bounds/worst_case.hpp"
#include "opfcert/data/dataset.hpp"
#include "opfcert/data/sampling.hpp"
#include "opfcert/grid/grid_model.hpp"
#include "opfcert/nn/train.hpp"
#include "opfcert/opt/opf.hpp"
#include "opfcert/verify/certify.hpp"

namespace {

using namespace opfcert;

const char* kCases[] = {"case9", "case14", "case57"};

// Case, admittances, a few labels and a freshly initialized Table I network per head.
struct Fixture {
    grid::GridModel grid;
    grid::AdmittanceSet adm;
    nn::GridContext ctx;
    data::LabeledDataset data;
    nn::MlpModel voltage, power;
    bounds::Box box;

    explicit Fixture(const std::string& name)
        : grid(grid::load_case_file(std::string(OPFCERT_DATA_DIR) + "/cases/" + name + ".m")),
          adm(grid::build_admittances(grid)),
          ctx(grid, adm),
          data(labels(grid, adm)),
          voltage(model(nn::Head::Voltage)),
          power(model(nn::Head::Power)),
          box(bounds::Box::load_domain(grid)) {}

    static data::LabeledDataset labels(const grid::GridModel& g, const grid::AdmittanceSet& a) {
        data::SamplingConfig cfg;
        cfg.n_samples = 22;
        return data::generate_labels(g, a, data::sample_scenarios(g, cfg));
    }
    nn::MlpModel model(nn::Head head) const {
        return nn::make_model(head, ctx, data, nn::default_hyperparameters(grid.num_buses()).hidden, 0);
    }
    const nn::MlpModel& by_head(int head) const { return head == 0 ? voltage : power; }
};

const Fixture& fixture(int index) {
    static const Fixture f[] = {Fixture(kCases[0]), Fixture(kCases[1]), Fixture(kCases[2])};
    return f[index];
}

void BM_Forward(benchmark::State& state) {
    const Fixture& f = fixture(static_cast<int>(state.range(0)));
    const Eigen::VectorXd x = f.box.center();
    for (auto _ : state) benchmark::DoNotOptimize(nn::predict(f.voltage, x));
    state.SetLabel(kCases[state.range(0)]);
}
BENCHMARK(BM_Forward)->DenseRange(0, 2);

void BM_CrownBounds(benchmark::State& state) {
    const Fixture& f = fixture(static_cast<int>(state.range(0)));
    const auto mode = state.range(1) == 0 ? bounds::IntermediateMode::Crown : bounds::IntermediateMode::Interval;
    const Eigen::MatrixXd spec = Eigen::MatrixXd::Identity(f.voltage.output_dim(), f.voltage.output_dim());
    for (auto _ : state) benchmark::DoNotOptimize(bounds::crown_bounds(f.voltage, f.box, spec, {}, mode));
    state.SetLabel(std::string(kCases[state.range(0)]) + (state.range(1) == 0 ? " crown" : " interval"));
}
BENCHMARK(BM_CrownBounds)->ArgsProduct({{0, 1, 2}, {0, 1}})->Unit(benchmark::kMicrosecond);

// Penalty value and its gradient, as evaluated once per training step.
void BM_WorstCasePenaltyWithGradient(benchmark::State& state) {
    const Fixture& f = fixture(static_cast<int>(state.range(0)));
    const nn::MlpModel& m = f.by_head(static_cast<int>(state.range(1)));
    for (auto _ : state) {
        nn::ad::Tape tape;
        const nn::MlpVars vars = nn::bind(m, tape, true);
        const auto terms = bounds::worst_case_terms(tape, vars, m, f.ctx, f.box, {});
        tape.backward(terms.total);
        benchmark::DoNotOptimize(tape.grad(vars.weights.front()));
    }
    state.SetLabel(std::string(kCases[state.range(0)]) + (state.range(1) == 0 ? " voltage" : " power"));
}
BENCHMARK(BM_WorstCasePenaltyWithGradient)->ArgsProduct({{0, 1, 2}, {0, 1}})->Unit(benchmark::kMillisecond);

// Branch and bound on the first voltage-magnitude constraint with a fixed subdomain budget.
void BM_Certify(benchmark::State& state) {
    const Fixture& f = fixture(static_cast<int>(state.range(0)));
    verify::CertifyOptions opt;
    opt.budget = {static_cast<std::size_t>(state.range(1)), 0.0};
    opt.gap_tolerance = 0.0;
    const bounds::ConstraintId id{bounds::ConstraintKind::Vm, 0};
    for (auto _ : state) benchmark::DoNotOptimize(verify::certify(f.voltage, f.ctx, f.box, id, opt));
    state.SetLabel(std::string(kCases[state.range(0)]) + " vm[0]");
}
BENCHMARK(BM_Certify)->ArgsProduct({{0, 1}, {8, 64}})->Unit(benchmark::kMillisecond);

void BM_NewtonPf(benchmark::State& state) {
    const Fixture& f = fixture(static_cast<int>(state.range(0)));
    const data::LabeledSample& s = f.data.samples.front();
    const acpf::Setpoints sp{s.p_g, s.v_g};
    for (auto _ : state) benchmark::DoNotOptimize(acpf::newton_pf(f.grid, f.adm, s.load, sp));
    state.SetLabel(kCases[state.range(0)]);
}
BENCHMARK(BM_NewtonPf)->DenseRange(0, 2)->Unit(benchmark::kMicrosecond);

void BM_SolveOpf(benchmark::State& state) {
    const Fixture& f = fixture(static_cast<int>(state.range(0)));
    const data::LabeledSample& s = f.data.samples.front();
    const bool warm = state.range(1) == 1;
    const opt::OpfPoint init = opt::point_from_voltages(f.grid, f.adm, s.load, s.v);
    for (auto _ : state)
        benchmark::DoNotOptimize(warm ? opt::solve_opf(f.grid, f.adm, s.load, init) : opt::solve_opf(f.grid, f.adm, s.load));
    state.SetLabel(std::string(kCases[state.range(0)]) + (warm ? " warm" : " cold"));
}
BENCHMARK(BM_SolveOpf)->ArgsProduct({{0, 1, 2}, {0, 1}})->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
