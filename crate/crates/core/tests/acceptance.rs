//! Acceptance battery. Runs every criterion at its pinned tolerance, prints
//! one PASS/FAIL line each, enforces the runtime budgets, and reruns the
//! whole battery to check bit-identical numeric output.

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use markov_circle::correspondence::{roundtrip_residuals, xi};
use markov_circle::kernel::{duality_identity_residual, duality_residual};
use markov_circle::measure::{
    fixed_point_stationary, markov_operator_direct, markov_operator_dual, sandwich_check,
    skew_invariance_residual, FixedPoint,
};
use markov_circle::sync::{local_sync_experiment, uniform_bound_scan, SyncSettings};
use markov_circle::trajectory::{
    birkhoff_average, check_conditional_bound, check_shift_duality, empirical_product_measure,
    iterate, sample_chain_with, trial_rng, ChainStart, CylinderFunction, EmpiricalSettings,
};
use markov_circle::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    summary: String,
    /// Every number the criterion produced, for the determinism rerun.
    values: Vec<f64>,
}

struct Criterion {
    id: usize,
    name: &'static str,
    budget: Option<Duration>,
    run: fn() -> Outcome,
}

fn worked_kernel() -> FiniteKernel {
    FiniteKernel::new(vec![vec![0.9, 0.1], vec![0.2, 0.8]]).unwrap()
}

fn worked_family() -> MapFamily {
    MapFamily::new(vec![
        CircleMap::hyperbolic(2.0, 0.0).unwrap(),
        CircleMap::hyperbolic(2.0, 0.25).unwrap(),
    ])
    .unwrap()
}

fn dual_kernel_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let (mut balance, mut involution) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let k = rng.random_range(1..=8);
        let p = FiniteKernel::random_positive(k, &mut rng);
        let m = stationary_distribution(&p).unwrap();
        let q = dual_kernel(&p, &m).unwrap();
        balance = balance.max(duality_residual(&p, &q, &m));
        let back = dual_kernel(&q, &m).unwrap();
        for i in 0..k {
            for j in 0..k {
                involution = involution.max((back.get(i, j) - p.get(i, j)).abs());
            }
        }
    }
    Outcome {
        pass: balance <= 1e-14 && involution <= 1e-12,
        summary: format!("detailed balance {balance:.2e} <= 1e-14, involution {involution:.2e} <= 1e-12"),
        values: vec![balance, involution],
    }
}

fn duality_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let k = rng.random_range(1..=4);
        let p = FiniteKernel::random_positive(k, &mut rng);
        let m = stationary_distribution(&p).unwrap();
        let q = dual_kernel(&p, &m).unwrap();
        let kappa: Vec<Vec<f64>> =
            (0..k).map(|_| (0..k).map(|_| rng.random::<f64>()).collect()).collect();
        worst = worst.max(duality_identity_residual(&p, &q, &m, &kappa));
    }
    Outcome {
        pass: worst <= 1e-12,
        summary: format!("worst residual {worst:.2e} <= 1e-12"),
        values: vec![worst],
    }
}

fn operator_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let mut worst = 0.0f64;
    let mut marginal_exact = true;
    for _ in 0..50 {
        let k = rng.random_range(1..=4);
        let n = rng.random_range(8..=128);
        let p = FiniteKernel::random_positive(k, &mut rng);
        let m = stationary_distribution(&p).unwrap();
        let q = dual_kernel(&p, &m).unwrap();
        let family = DiscreteFamily::new(&common::random_family(k, &mut rng), n);
        let nu = ProductMeasure::new(m.clone(), common::random_fibres(k, n, &mut rng)).unwrap();
        let dual = markov_operator_dual(&q, &family, &nu).unwrap();
        let direct = markov_operator_direct(&p, &m, &family, &nu).unwrap();
        worst = worst.max(dual.max_tv(&direct));
        marginal_exact &= direct.marginal == m;
    }
    Outcome {
        pass: worst <= 1e-12 && marginal_exact,
        summary: format!("worst per-state TV {worst:.2e} <= 1e-12, marginal preserved: {marginal_exact}"),
        values: vec![worst],
    }
}

struct BoundedInstance {
    pair: BoundedPair,
    dual: FiniteKernel,
    family: DiscreteFamily,
    solved: FixedPoint,
}

/// 20 random bounded pairs with contracting hyperbolic families, solved on
/// 256 bins at tolerance 1e-10.
fn bounded_instances() -> Vec<BoundedInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    (0..20)
        .map(|_| {
            let k = rng.random_range(2..=4);
            let pair = BoundedPair::from_kernel(FiniteKernel::random_positive(k, &mut rng)).unwrap();
            let dual = pair.dual();
            let family = DiscreteFamily::new(&common::contracting_family(k, &mut rng), 256);
            let solved = fixed_point_stationary(
                &pair.kernel,
                &pair.stationary,
                &family,
                &ProductMeasure::uniform(&pair.stationary, 256),
                1e-10,
                10_000,
            )
            .unwrap();
            BoundedInstance {
                pair,
                dual,
                family,
                solved,
            }
        })
        .collect()
}

fn round_trips() -> Outcome {
    let (mut r1, mut r2, mut skew) = (0.0f64, 0.0f64, 0.0f64);
    let mut values = Vec::new();
    for inst in bounded_instances() {
        let nu = &inst.solved.measure;
        let mu = xi(nu, &inst.dual).unwrap();
        let (a, b) = roundtrip_residuals(nu, &mu, &inst.family, &inst.dual).unwrap();
        let s = skew_invariance_residual(&inst.dual, &inst.family, &mu).unwrap();
        r1 = r1.max(a);
        r2 = r2.max(b);
        skew = skew.max(s);
        values.extend([a, b, s, inst.solved.residual]);
    }
    Outcome {
        pass: r1 <= 1e-8 && r2 <= 1e-8 && skew <= 1e-8,
        summary: format!("theta.xi {r1:.2e}, xi.theta {r2:.2e}, skew invariance {skew:.2e}, all <= 1e-8"),
        values,
    }
}

fn sandwich() -> Outcome {
    let mut worst = f64::INFINITY;
    let mut all_hold = true;
    let mut values = Vec::new();
    for inst in bounded_instances() {
        let nu = &inst.solved.measure;
        let mu = xi(nu, &inst.dual).unwrap();
        let report = sandwich_check(nu, &mu, inst.pair.constant);
        all_hold &= report.holds;
        worst = worst.min(report.worst_slack);
        values.push(report.worst_slack);
    }
    // i.i.d. drive: C = 1 and every fibre of xi(ν) is the second marginal
    let m = StationaryVector::new(vec![0.3, 0.5, 0.2]).unwrap();
    let iid = BoundedPair::from_kernel(FiniteKernel::iid(&m)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    let nu = ProductMeasure::new(iid.stationary.clone(), common::random_fibres(3, 64, &mut rng)).unwrap();
    let report = sandwich_check(&nu, &xi(&nu, &iid.dual()).unwrap(), iid.constant);
    let equality = report.worst_slack.abs();
    values.extend([iid.constant, equality]);
    Outcome {
        pass: all_hold && worst >= -1e-12 && (iid.constant - 1.0).abs() <= 1e-12 && equality <= 1e-12,
        summary: format!(
            "worst slack {worst:.2e} >= -1e-12 on 20 instances; i.i.d. C = {}, |slack| {equality:.2e} <= 1e-12",
            iid.constant
        ),
        values,
    }
}

fn lemma_enumeration() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(106);
    let mut shift = 0.0f64;
    for _ in 0..100 {
        let k = rng.random_range(1..=3);
        let depth = rng.random_range(0..=3);
        let p = FiniteKernel::random_positive(k, &mut rng);
        let m = stationary_distribution(&p).unwrap();
        let q = dual_kernel(&p, &m).unwrap();
        let g: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
        let table: Vec<f64> = (0..k.pow(depth as u32 + 1)).map(|_| rng.random()).collect();
        let u = |w: &[usize]| table[w.iter().fold(0, |acc, s| acc * k + s)];
        shift = shift.max(check_shift_duality(&p, &q, &m, &g, u, depth).unwrap());
    }

    let mut margin = f64::INFINITY;
    let mut checked = 0;
    let mut holds = true;
    for k in 1..=3 {
        for grid in [4, 8, 16] {
            for draw in 0..3 {
                let pair = BoundedPair::from_kernel(FiniteKernel::random_positive(k, &mut rng)).unwrap();
                let family = DiscreteFamily::new(
                    &if draw == 0 {
                        common::contracting_family(k, &mut rng)
                    } else {
                        common::random_family(k, &mut rng)
                    },
                    grid,
                );
                for depth in 0..=2 {
                    let mut hs = vec![
                        CylinderFunction::constant(k, depth, grid, 1.0).unwrap(),
                        CylinderFunction::constant(k, depth, grid, 0.0).unwrap(),
                    ];
                    for density in [0.02, 0.1, 0.3] {
                        hs.push(
                            CylinderFunction::random_admissible(&family, depth, density, &mut rng)
                                .unwrap(),
                        );
                    }
                    for h in &hs {
                        for n in 1..=3 {
                            let r = check_conditional_bound(&pair, &family, h, rng.random(), n)
                                .unwrap();
                            holds &= r.holds;
                            margin = margin.min(r.margin);
                            checked += 1;
                        }
                    }
                }
            }
        }
    }
    Outcome {
        pass: shift <= 1e-12 && holds && margin >= 0.0,
        summary: format!(
            "shift duality {shift:.2e} <= 1e-12; conditional bound on {checked} instances, min margin {margin:.2e} >= 0"
        ),
        values: vec![shift, margin],
    }
}

fn simulation_vs_solver() -> Outcome {
    let p = worked_kernel();
    let m = stationary_distribution(&p).unwrap();
    let family = worked_family();
    let grid = 64;
    let solved = fixed_point_stationary(
        &p,
        &m,
        &DiscreteFamily::new(&family, grid),
        &ProductMeasure::uniform(&m, grid),
        1e-12,
        100_000,
    )
    .unwrap();
    // 10 trials x 10⁵ counted steps = 10⁶ samples, 10³ burn-in steps each
    let settings = EmpiricalSettings {
        trials: 10,
        steps: 101_000,
        burn_in: 1_000,
        grid,
        x0: None,
        seed: 107,
    };
    let empirical =
        empirical_product_measure(&p, &ChainStart::Stationary(m.clone()), &family, &settings).unwrap();
    let tv: Vec<f64> = (0..2)
        .map(|a| empirical.fibre(a).tv(solved.measure.fibre(a)))
        .collect();
    let worst = tv.iter().copied().fold(0.0, f64::max);
    Outcome {
        pass: worst <= 0.05,
        summary: format!("per-state TV {:.4} / {:.4} <= 0.05 (N = 64, 10^6 samples)", tv[0], tv[1]),
        values: tv,
    }
}

fn birkhoff_from_starts<F: Fn(usize, f64) -> f64>(
    p: &FiniteKernel,
    m: &StationaryVector,
    family: &MapFamily,
    x0: f64,
    stream: u64,
    phis: &[F],
) -> Vec<f64> {
    let mut rng = trial_rng(108, stream);
    let states =
        sample_chain_with(p, &ChainStart::Stationary(m.clone()), 1_000_000, &mut rng).unwrap();
    let orbit = iterate(family, &states, x0, stream).unwrap();
    phis.iter().map(|phi| birkhoff_average(&orbit, phi).unwrap()).collect()
}

fn ergodicity() -> Outcome {
    use std::f64::consts::TAU;
    let p = worked_kernel();
    let m = stationary_distribution(&p).unwrap();
    let family = worked_family();
    let grid = 1024;
    let solved = fixed_point_stationary(
        &p,
        &m,
        &DiscreteFamily::new(&family, grid),
        &ProductMeasure::uniform(&m, grid),
        1e-12,
        100_000,
    )
    .unwrap();
    let phis: Vec<Box<dyn Fn(usize, f64) -> f64>> = vec![
        Box::new(|_, x| (TAU * x).cos()),
        Box::new(|_, x| (TAU * x).sin()),
        Box::new(|_, x| (2.0 * TAU * x).cos()),
        Box::new(|s, _| s as f64),
        Box::new(|s, x| if s == 0 { (TAU * x).cos() } else { 0.0 }),
        Box::new(|s, x| if s == 1 { (TAU * x).sin() } else { 0.0 }),
        Box::new(|_, x| (x < 0.125) as u8 as f64),
        Box::new(|_, x| (x > 0.0625 && x < 0.1875) as u8 as f64),
        Box::new(|_, x| 0.5 + 0.5 * (TAU * (x - 0.1)).sin()),
        Box::new(|s, x| (s as f64 + 2.0 * x).sin()),
    ];
    let expected: Vec<f64> = phis.iter().map(|phi| solved.measure.integrate(phi)).collect();
    let mut values = expected.clone();
    let mut worst = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(108);
    for start in 0..10u64 {
        let averages = birkhoff_from_starts(&p, &m, &family, rng.random(), start, &phis);
        for (a, e) in averages.iter().zip(&expected) {
            worst = worst.max((a - e).abs());
        }
        values.extend(averages);
    }

    // Both maps fix 0 and 1/2, so each half-circle is invariant. Inside a
    // half the maps push in opposite directions, and under the symmetric
    // drive both endpoints repel on average (mean log-slope (ln 3 - ln 2)/2),
    // so each half carries its own stationary measure.
    let sym = FiniteKernel::new(vec![vec![0.7, 0.3], vec![0.3, 0.7]]).unwrap();
    let sym_m = stationary_distribution(&sym).unwrap();
    let reducible = MapFamily::new(vec![
        CircleMap::piecewise_linear(vec![0.0, 0.1, 0.5, 0.6], vec![0.0, 0.3, 0.5, 0.8]).unwrap(),
        CircleMap::piecewise_linear(vec![0.0, 0.4, 0.5, 0.9], vec![0.0, 0.2, 0.5, 0.7]).unwrap(),
    ])
    .unwrap();
    let indicator = [|_: usize, x: f64| (x < 0.5) as u8 as f64];
    let left = birkhoff_from_starts(&sym, &sym_m, &reducible, 0.2, 20, &indicator)[0];
    let right = birkhoff_from_starts(&sym, &sym_m, &reducible, 0.7, 21, &indicator)[0];
    let gap = (left - right).abs();
    values.extend([left, right]);
    Outcome {
        pass: worst <= 0.02 && gap > 0.1,
        summary: format!(
            "irreducible: worst |average - integral| {worst:.4} <= 0.02; reducible: averages differ by {gap:.3} > 0.1"
        ),
        values,
    }
}

fn synchronization() -> Outcome {
    let p = worked_kernel();
    let m = stationary_distribution(&p).unwrap();
    let pair = boundedness_constant(&p, &m).unwrap();
    let family = worked_family();
    let settings = SyncSettings::new(200, 10_000, 109).unwrap();
    let report = local_sync_experiment(&family, &p, &m, 0.6, &settings).unwrap();

    let rotations =
        MapFamily::new(vec![CircleMap::rotation(0.2071), CircleMap::rotation(0.6180)]).unwrap();
    let control = local_sync_experiment(&rotations, &p, &m, 0.6, &SyncSettings::new(20, 1_000, 109).unwrap())
        .unwrap();
    let zero_slopes = control.per_trial_slopes.iter().all(|s| *s == 0.0);

    let scan = uniform_bound_scan(&family, &p, &m, 32, &SyncSettings::new(50, 2_000, 110).unwrap())
        .unwrap();

    let mut values = report.per_trial_slopes.clone();
    values.extend([report.lambda_hat, report.sync_fraction, scan.lambda0_hat]);
    values.extend(&scan.upper_slopes);
    Outcome {
        pass: (pair.constant - 0.3).abs() < 1e-12
            && !report.hypothesis_violated
            && report.lambda_hat < -0.01
            && report.sync_fraction >= 0.9
            && zero_slopes
            && control.hypothesis_violated
            && scan.lambda0_hat < -0.005,
        summary: format!(
            "C = {:.3}, lambda {:.4} < -0.01, sync {:.3} >= 0.9; rotations: zero slopes {zero_slopes}, flagged {}; lambda0 {:.4} < -0.005",
            pair.constant, report.lambda_hat, report.sync_fraction, control.hypothesis_violated, scan.lambda0_hat
        ),
        values,
    }
}

fn criteria() -> Vec<Criterion> {
    vec![
        Criterion { id: 1, name: "dual-kernel exactness", budget: Some(Duration::from_secs(1)), run: dual_kernel_exactness },
        Criterion { id: 2, name: "duality identity", budget: Some(Duration::from_secs(1)), run: duality_identity },
        Criterion { id: 3, name: "operator-form equivalence", budget: Some(Duration::from_secs(10)), run: operator_equivalence },
        Criterion { id: 4, name: "correspondence round trips", budget: Some(Duration::from_secs(60)), run: round_trips },
        Criterion { id: 5, name: "sandwich bounds", budget: None, run: sandwich },
        Criterion { id: 6, name: "exact lemma enumeration", budget: Some(Duration::from_secs(30)), run: lemma_enumeration },
        Criterion { id: 7, name: "simulation vs solver", budget: Some(Duration::from_secs(60)), run: simulation_vs_solver },
        Criterion { id: 8, name: "ergodicity behaviour", budget: Some(Duration::from_secs(120)), run: ergodicity },
        Criterion { id: 9, name: "synchronization", budget: Some(Duration::from_secs(300)), run: synchronization },
    ]
}

fn main() -> ExitCode {
    let mut failures = 0;
    let mut first_values = Vec::new();
    for c in criteria() {
        let start = Instant::now();
        let outcome = (c.run)();
        let elapsed = start.elapsed();
        let in_budget = c.budget.is_none_or(|b| elapsed < b);
        let pass = outcome.pass && in_budget;
        if !pass {
            failures += 1;
        }
        let budget = c.budget.map_or("no limit".to_string(), |b| format!("limit {}s", b.as_secs()));
        println!(
            "{} criterion {:>2} {:<28} {} [{:.2}s, {budget}]",
            if pass { "PASS" } else { "FAIL" },
            c.id,
            c.name,
            outcome.summary,
            elapsed.as_secs_f64()
        );
        first_values.push(outcome.values);
    }

    let start = Instant::now();
    let mut mismatched = Vec::new();
    for (c, before) in criteria().iter().zip(&first_values) {
        let again = (c.run)().values;
        let same = again.len() == before.len()
            && again.iter().zip(before).all(|(a, b)| a.to_bits() == b.to_bits());
        if !same {
            mismatched.push(c.id);
        }
    }
    let deterministic = mismatched.is_empty();
    if !deterministic {
        failures += 1;
    }
    println!(
        "{} criterion 10 {:<28} reran criteria 1-9 with the same seeds: {} [{:.2}s]",
        if deterministic { "PASS" } else { "FAIL" },
        "determinism",
        if deterministic {
            "all numeric outputs bit-identical".to_string()
        } else {
            format!("criteria {mismatched:?} changed")
        },
        start.elapsed().as_secs_f64()
    );

    if failures == 0 {
        println!("acceptance: 10/10 criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {failures} criteria failed");
        ExitCode::FAILURE
    }
}
