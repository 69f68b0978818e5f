//! Sequential vs data-parallel execution of the hot paths. Build with
//! `--no-default-features` to see both modes collapse to the sequential one.

use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

use frontier_sis::dynamics::Simulator;
use frontier_sis::sweep::{Axis, AxisValues};
use frontier_sis::{
    parse_config, principal_eigenvalue, run_sweep, CoefficientModel, EigenOptions, EigenProblem, Exec, KernelSpec,
    KernelTable, QuadratureGrid, SimConfig, SweepPlan,
};

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn v1(exec: Exec) -> SimConfig {
    let text =
        std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/v1_vanishing.toml")).unwrap();
    parse_config(&text).unwrap().sim_config(exec).unwrap()
}

fn kernel_apply(c: &mut Criterion) {
    let mut group = c.benchmark_group("kernel_apply");
    let kernel = KernelSpec::truncated_gaussian(0.5, 3.0).unwrap();
    for n in [2_000, 8_000] {
        let grid = QuadratureGrid::symmetric(20.0, n).unwrap();
        let table = KernelTable::new(&kernel, &grid).unwrap();
        let x: Vec<f64> = grid.nodes().iter().map(|v| (-v * v / 50.0).exp()).collect();
        let mut out = vec![0.0; n];
        for (name, exec) in MODES {
            group.bench_with_input(BenchmarkId::new(name, n), &n, |b, _| {
                b.iter(|| table.apply(black_box(&x), &mut out, exec))
            });
        }
    }
    group.finish();
}

fn eigen_solve(c: &mut Criterion) {
    let mut group = c.benchmark_group("eigen_solve");
    group.sample_size(10);
    let kernel = KernelSpec::truncated_gaussian(0.5, 3.0).unwrap();
    let model = CoefficientModel::constant(1.0, 1.0, 0.5, 1.0, 0.4);
    let problem = EigenProblem::from_model(&kernel, &model, 1.0, -10.0, 10.0, 641).unwrap();
    for (name, exec) in MODES {
        let opts = EigenOptions { exec, ..EigenOptions::with_tol(1e-10) };
        group.bench_function(name, |b| b.iter(|| principal_eigenvalue(black_box(&problem), &opts).unwrap()));
    }
    group.finish();
}

fn simulation_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("simulation_step");
    for (name, exec) in MODES {
        let config = v1(exec);
        let sim = Simulator::new(&config).unwrap();
        let state = sim.initial_state();
        let dt = config.resolve_dt().unwrap();
        group.bench_function(name, |b| b.iter(|| sim.step(black_box(&state), dt).unwrap()));
    }
    group.finish();
}

fn sweep(c: &mut Criterion) {
    let mut group = c.benchmark_group("sweep");
    group.sample_size(10);
    for (name, jobs) in [("sequential", 1), ("parallel", 4)] {
        let base = SimConfig { n_nodes: 500, t_end: 20.0, early_exit: false, ..v1(Exec::Sequential) };
        let plan = SweepPlan {
            base,
            axes: vec![AxisValues { name: Axis::K, values: vec![0.25, 0.5, 1.0, 2.0] }],
            jobs,
            config_hash: String::new(),
        };
        group.bench_function(name, |b| b.iter(|| run_sweep(black_box(&plan)).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, kernel_apply, eigen_solve, simulation_step, sweep);
criterion_main!(benches);
