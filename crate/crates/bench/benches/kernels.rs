use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use tractable::aggregation::{appell_f1, hyp2f1, lauricella_fd};
use tractable::eoq::{estimate_beta, SelectionRules};
use tractable::laplace_log::{catalog_form, complete_monotonicity_test, DemandInput};
use tractable::monopoly::MonopolyProblem;
use tractable::poly_roots::{solve_iterative, solve_radicals};
use tractable::trade_equilibrium::loss_gradient;
use tractable::trade_firm::{choose_destinations, random_instance};
use tractable::PowerSum;
use tractable_bench::{income_demand, quartics, shipment_panel, small_world};

fn roots(c: &mut Criterion) {
    let polys = quartics(64);
    c.bench_function("quartic/radicals", |b| b.iter(|| polys.iter().map(|p| solve_radicals(black_box(p)).unwrap().len()).sum::<usize>()));
    c.bench_function("quartic/aberth", |b| b.iter(|| polys.iter().map(|p| solve_iterative(black_box(p), 1e-14).unwrap().len()).sum::<usize>()));
}

fn monopoly(c: &mut Criterion) {
    let problem = MonopolyProblem::new(income_demand(), PowerSum::constant(0.2));
    c.bench_function("monopoly/income_form", |b| b.iter(|| black_box(&problem).solve_foc().unwrap().q_star));
}

fn special_functions(c: &mut Criterion) {
    c.bench_function("hyp2f1/series", |b| b.iter(|| hyp2f1(black_box(0.7), 1.3, 2.9, 0.6).unwrap()));
    c.bench_function("hyp2f1/connection", |b| b.iter(|| hyp2f1(black_box(0.7), 1.3, 2.9, 0.97).unwrap()));
    c.bench_function("appell_f1", |b| b.iter(|| appell_f1(black_box(0.8), 0.4, -0.3, 2.1, 0.5, -0.6).unwrap()));
    c.bench_function("lauricella_fd/3", |b| b.iter(|| lauricella_fd(black_box(1.2), &[0.3, -0.5, 0.8], &[0.4, -2.0, 0.9]).unwrap()));
}

fn destinations(c: &mut Criterion) {
    let (firm, dests) = random_instance(10, 0.25, 3);
    c.bench_function("double_greedy/best_of_9", |b| b.iter(|| choose_destinations(&firm, black_box(&dests), None, 1, 0, 9).unwrap().profit));
}

fn equilibrium(c: &mut Criterion) {
    let (world, state) = small_world();
    c.bench_function("loss_gradient/3x4x2", |b| b.iter(|| loss_gradient(black_box(&state), &world).unwrap().0));
}

fn classification(c: &mut Criterion) {
    let logistic = DemandInput::Named(catalog_form("logistic").unwrap());
    c.bench_function("cm_test/logistic", |b| b.iter(|| complete_monotonicity_test(black_box(&logistic), 10).unwrap().verdict));
}

fn eoq(c: &mut Criterion) {
    let panel = shipment_panel(0);
    c.bench_function("eoq/estimate_beta", |b| b.iter(|| estimate_beta(black_box(&panel), &SelectionRules::default()).unwrap().pooled.beta));
}

criterion_group!(benches, roots, monopoly, special_functions, destinations, equilibrium, classification, eoq);
criterion_main!(benches);
