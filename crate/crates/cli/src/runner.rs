//! Pipelines behind the CLI verbs. Every pipeline computes first and writes
//! afterwards, one file at a time.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use markov_circle::correspondence::{roundtrip_residuals, xi};
use markov_circle::kernel::{duality_identity_residual, duality_residual, STATIONARY_RESIDUAL_TOL};
use markov_circle::measure::{
    fixed_point_stationary, markov_operator_direct, markov_operator_dual, sandwich_check,
    skew_invariance_residual, stationarity_residual, FixedPoint,
};
use markov_circle::sync::{
    local_sync_experiment, uniform_bound_scan, ContractionReport, LadderSettings, ScanReport,
    SyncSettings,
};
use markov_circle::trajectory::{
    check_conditional_bound, check_shift_duality, empirical_product_measure, iterate, sample_chain,
    ChainStart, CylinderFunction, EmpiricalSettings,
};
use markov_circle::{
    boundedness_constant, dual_kernel, stationary_distribution, BoundedPair, DiscreteFamily,
    Error as CoreError, FiniteKernel, GridMeasure, ProductMeasure, StationaryVector,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{tolerance_table, InitialMeasure, ResolvedExperiment};

/// Exit statuses of the binary.
pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NO_CONVERGENCE: i32 = 3;
pub const EXIT_RUNTIME: i32 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verb {
    Solve,
    Correspond,
    VerifyLemmas,
    Sync,
    Scan,
}

impl Verb {
    pub fn name(self) -> &'static str {
        match self {
            Verb::Solve => "solve",
            Verb::Correspond => "correspond",
            Verb::VerifyLemmas => "verify-lemmas",
            Verb::Sync => "sync",
            Verb::Scan => "scan",
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("writing {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub exit_code: i32,
    pub files: Vec<PathBuf>,
    /// Human-readable lines for stdout.
    pub lines: Vec<String>,
}

/// One file to be written, held in memory until the pipeline finishes.
struct Artifact {
    name: String,
    bytes: Vec<u8>,
}

fn meta(exp: &ResolvedExperiment, verb: Verb) -> Value {
    json!({
        "verb": verb.name(),
        "config_hash": exp.hash,
        "seed": exp.seed,
        "grid": exp.grid(),
        "tolerances": tolerance_table(&exp.config),
        "schema_version": crate::config::SCHEMA_VERSION,
    })
}

fn csv_header(exp: &ResolvedExperiment) -> Vec<(&'static str, String)> {
    let mut header = vec![
        ("config_hash", exp.hash.clone()),
        ("seed", exp.seed.to_string()),
        ("grid", exp.grid().to_string()),
    ];
    for (k, v) in tolerance_table(&exp.config) {
        header.push((k, format!("{v:e}")));
    }
    header
}

fn json_artifact(name: &str, value: &Value) -> Artifact {
    let mut bytes = serde_json::to_vec_pretty(value).expect("json serializes");
    bytes.push(b'\n');
    Artifact {
        name: name.into(),
        bytes,
    }
}

fn csv_artifact(
    name: &str,
    exp: &ResolvedExperiment,
    write: impl FnOnce(&mut Vec<u8>, &[(&str, String)]) -> std::io::Result<()>,
) -> Artifact {
    let mut bytes = Vec::new();
    write(&mut bytes, &csv_header(exp)).expect("in-memory write");
    Artifact {
        name: name.into(),
        bytes,
    }
}

fn write_all(dir: &Path, artifacts: Vec<Artifact>) -> Result<Vec<PathBuf>, RunError> {
    fs::create_dir_all(dir).map_err(|source| RunError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut written = Vec::new();
    for a in artifacts {
        let path = dir.join(&a.name);
        let io = |source| RunError::Io {
            path: path.clone(),
            source,
        };
        let mut f = BufWriter::new(File::create(&path).map_err(io)?);
        f.write_all(&a.bytes).map_err(io)?;
        f.flush().map_err(io)?;
        written.push(path);
    }
    Ok(written)
}

/// Stationary vector, dual kernel and (when the kernel is positive) the
/// bounded pair.
struct Base {
    m: StationaryVector,
    dual: FiniteKernel,
    pair: Option<BoundedPair>,
    family: DiscreteFamily,
}

fn base(exp: &ResolvedExperiment) -> Result<Base, CoreError> {
    let m = stationary_distribution(&exp.kernel)?;
    let dual = dual_kernel(&exp.kernel, &m)?;
    let pair = match boundedness_constant(&exp.kernel, &m) {
        Ok(p) => Some(p),
        Err(CoreError::NotBounded { .. }) => None,
        Err(e) => return Err(e),
    };
    Ok(Base {
        m,
        dual,
        pair,
        family: DiscreteFamily::new(&exp.family, exp.grid()),
    })
}

fn initial_measure(exp: &ResolvedExperiment, m: &StationaryVector) -> ProductMeasure {
    let n = exp.grid();
    match exp.config.solver.init {
        InitialMeasure::Uniform => ProductMeasure::uniform(m, n),
        InitialMeasure::Point => {
            let bin = GridMeasure::bin_of(n, markov_circle::circle::wrap(exp.config.solver.init_point));
            ProductMeasure::product(m, &GridMeasure::point_mass(n, bin))
        }
    }
}

enum Solved {
    Converged(FixedPoint),
    Stalled {
        residual: f64,
        max_iter: usize,
        last: ProductMeasure,
        cesaro: ProductMeasure,
    },
}

fn solve_fixed_point(exp: &ResolvedExperiment, b: &Base) -> Result<Solved, CoreError> {
    let init = initial_measure(exp, &b.m);
    match fixed_point_stationary(
        &exp.kernel,
        &b.m,
        &b.family,
        &init,
        exp.config.solver.tol,
        exp.config.solver.max_iter,
    ) {
        Ok(fp) => Ok(Solved::Converged(fp)),
        Err(CoreError::NoConvergence {
            max_iter,
            residual,
            last,
            cesaro,
        }) => Ok(Solved::Stalled {
            residual,
            max_iter,
            last: *last,
            cesaro: *cesaro,
        }),
        Err(e) => Err(e),
    }
}

fn kernel_summary(exp: &ResolvedExperiment, b: &Base) -> Value {
    json!({
        "kernel": exp.kernel.to_rows(),
        "stationary": b.m.as_slice(),
        "stationary_residual": b.m.residual(&exp.kernel),
        "dual": b.dual.to_rows(),
        "bounded_constant": b.pair.as_ref().map(|p| p.constant),
    })
}

pub fn run(verb: Verb, exp: &ResolvedExperiment) -> Result<RunOutcome, RunError> {
    let (exit_code, lines, artifacts) = match verb {
        Verb::Solve => solve(exp)?,
        Verb::Correspond => correspond(exp)?,
        Verb::VerifyLemmas => {
            let report = verify_all(exp);
            let lines = report.table();
            let code = if report.failed > 0 {
                EXIT_CHECK_FAILED
            } else {
                EXIT_OK
            };
            let mut doc = json!({ "meta": meta(exp, verb) });
            doc["rows"] = serde_json::to_value(&report.rows).expect("rows serialize");
            doc["passed"] = report.passed.into();
            doc["failed"] = report.failed.into();
            doc["flagged"] = report.flagged.into();
            (code, lines, vec![json_artifact("verify.json", &doc)])
        }
        Verb::Sync => sync(exp)?,
        Verb::Scan => scan(exp)?,
    };
    let files = write_all(exp.out_dir(), artifacts)?;
    Ok(RunOutcome {
        exit_code,
        files,
        lines,
    })
}

type Pipeline = (i32, Vec<String>, Vec<Artifact>);

fn solve(exp: &ResolvedExperiment) -> Result<Pipeline, RunError> {
    let b = base(exp)?;
    let mut doc = json!({ "meta": meta(exp, Verb::Solve) });
    doc["chain"] = kernel_summary(exp, &b);
    let mut lines = vec![format!("stationary vector {:?}", b.m.as_slice())];
    let mut artifacts = Vec::new();
    let code = match solve_fixed_point(exp, &b)? {
        Solved::Converged(fp) => {
            let stationarity = stationarity_residual(&b.dual, &b.family, &fp.measure)?;
            doc["fixed_point"] = json!({
                "converged": true,
                "iterations": fp.iterations,
                "step_residual": fp.residual,
                "stationarity_residual": stationarity,
            });
            lines.push(format!(
                "converged in {} iterations, stationarity residual {stationarity:.3e}",
                fp.iterations
            ));
            let sim = &exp.config.simulation;
            if sim.trials > 0 {
                let empirical = empirical_product_measure(
                    &exp.kernel,
                    &ChainStart::Stationary(b.m.clone()),
                    &exp.family,
                    &EmpiricalSettings {
                        trials: sim.trials,
                        steps: sim.steps,
                        burn_in: sim.burn_in,
                        grid: exp.grid(),
                        x0: None,
                        seed: exp.seed,
                    },
                )?;
                let tv = empirical.max_tv(&fp.measure);
                doc["empirical"] = json!({
                    "trials": sim.trials,
                    "steps": sim.steps,
                    "burn_in": sim.burn_in,
                    "max_fibre_tv": tv,
                });
                lines.push(format!("empirical measure: max fibre TV {tv:.4}"));
                artifacts.push(csv_artifact("nu_empirical.csv", exp, |o, h| empirical.write_csv(o, h)));
            }
            artifacts.push(csv_artifact("nu.csv", exp, |o, h| fp.measure.write_csv(o, h)));
            EXIT_OK
        }
        Solved::Stalled {
            residual,
            max_iter,
            last,
            cesaro,
        } => {
            let cesaro_residual = stationarity_residual(&b.dual, &b.family, &cesaro)?;
            doc["fixed_point"] = json!({
                "converged": false,
                "iterations": max_iter,
                "step_residual": residual,
                "cesaro_stationarity_residual": cesaro_residual,
            });
            lines.push(format!(
                "no convergence after {max_iter} iterations (step residual {residual:.3e}); \
                 Cesaro average written, its stationarity residual {cesaro_residual:.3e}"
            ));
            artifacts.push(csv_artifact("nu_last.csv", exp, |o, h| last.write_csv(o, h)));
            artifacts.push(csv_artifact("nu_cesaro.csv", exp, |o, h| cesaro.write_csv(o, h)));
            EXIT_NO_CONVERGENCE
        }
    };
    artifacts.insert(0, json_artifact("solve.json", &doc));
    Ok((code, lines, artifacts))
}

fn correspond(exp: &ResolvedExperiment) -> Result<Pipeline, RunError> {
    let b = base(exp)?;
    let (nu, converged) = match solve_fixed_point(exp, &b)? {
        Solved::Converged(fp) => (fp.measure, true),
        Solved::Stalled { cesaro, .. } => (cesaro, false),
    };
    let mu = xi(&nu, &b.dual)?;
    let (r1, r2) = roundtrip_residuals(&nu, &mu, &b.family, &b.dual)?;
    let skew = skew_invariance_residual(&b.dual, &b.family, &mu)?;
    let sandwich = b.pair.as_ref().map(|p| sandwich_check(&nu, &mu, p.constant));
    let mut doc = json!({ "meta": meta(exp, Verb::Correspond) });
    doc["chain"] = kernel_summary(exp, &b);
    doc["correspondence"] = json!({
        "source": if converged { "fixed point" } else { "Cesaro average (no convergence)" },
        "roundtrip_theta_xi": r1,
        "roundtrip_xi_theta": r2,
        "skew_invariance_residual": skew,
        "sandwich": sandwich,
    });
    let mut lines = vec![format!(
        "round trips {r1:.3e} / {r2:.3e}, skew invariance {skew:.3e}"
    )];
    if !converged {
        lines.push("fixed point did not converge; used the Cesaro average".into());
    }
    match &sandwich {
        Some(s) => lines.push(format!("sandwich holds: {} (worst slack {:.3e})", s.holds, s.worst_slack)),
        None => lines.push("kernel has zero entries: sandwich bound not applicable".into()),
    }
    let artifacts = vec![
        json_artifact("correspond.json", &doc),
        csv_artifact("nu.csv", exp, |o, h| nu.write_csv(o, h)),
        csv_artifact("mu.csv", exp, |o, h| mu.write_csv(o, h)),
    ];
    Ok((if converged { EXIT_OK } else { EXIT_NO_CONVERGENCE }, lines, artifacts))
}

fn sync_settings(exp: &ResolvedExperiment, trials: usize, steps: usize) -> Result<SyncSettings, CoreError> {
    let s = &exp.config.sync;
    let mut settings = SyncSettings::new(trials, steps, exp.seed)?;
    settings.ladder = LadderSettings::new(s.delta0, steps)?;
    settings.threshold = s.threshold;
    settings.detection_grid = exp.grid();
    Ok(settings)
}

fn run_local_sync(exp: &ResolvedExperiment, m: &StationaryVector) -> Result<ContractionReport, CoreError> {
    let s = &exp.config.sync;
    let settings = sync_settings(exp, s.trials, s.steps)?;
    local_sync_experiment(&exp.family, &exp.kernel, m, s.x, &settings)
}

fn run_scan(exp: &ResolvedExperiment, m: &StationaryVector) -> Result<ScanReport, CoreError> {
    let s = &exp.config.sync;
    let settings = sync_settings(exp, s.scan_trials, s.scan_steps)?;
    uniform_bound_scan(&exp.family, &exp.kernel, m, s.scan_points, &settings)
}

fn evidence_line(violated: bool, residual: f64, surrogate: bool) -> Vec<String> {
    let mut lines = Vec::new();
    if violated {
        lines.push(format!(
            "WARNING: the maps share an invariant measure (residual {residual:.2e}); \
             the contraction hypothesis fails"
        ));
    } else {
        lines.push(format!(
            "no common invariant measure found (evidence only, residual {residual:.2e})"
        ));
    }
    if surrogate {
        lines.push("non-smooth maps: the ladder slope is a surrogate".into());
    }
    lines
}

fn sync(exp: &ResolvedExperiment) -> Result<Pipeline, RunError> {
    let m = stationary_distribution(&exp.kernel)?;
    let mut report = run_local_sync(exp, &m)?;
    let scan = run_scan(exp, &m)?;
    report.lambda0_hat = Some(scan.lambda0_hat);
    let mut doc = json!({ "meta": meta(exp, Verb::Sync) });
    doc["report"] = serde_json::to_value(&report).expect("report serializes");
    let mut lines = vec![format!(
        "median slope {:.4}, rho {:.4}, synchronized fraction {:.3}, uniform bound {:.4}",
        report.lambda_hat, report.rho_hat, report.sync_fraction, scan.lambda0_hat
    )];
    lines.extend(evidence_line(
        report.hypothesis_violated,
        report.common_invariant_residual,
        report.surrogate,
    ));
    let mut slopes = Vec::new();
    write_commented(&mut slopes, exp);
    report.write_slopes_csv(&mut slopes).expect("in-memory write");
    let mut artifacts = vec![
        json_artifact("sync.json", &doc),
        Artifact {
            name: "slopes.csv".into(),
            bytes: slopes,
        },
    ];
    if exp.config.output.orbit_dump {
        let states = sample_chain(&exp.kernel, &ChainStart::Stationary(m.clone()), exp.config.sync.steps, exp.seed)?;
        let orbit = iterate(&exp.family, &states, exp.config.sync.x, exp.seed)?;
        let mut bytes = Vec::new();
        write_commented(&mut bytes, exp);
        orbit.write_csv(&mut bytes).expect("in-memory write");
        artifacts.push(Artifact {
            name: "orbit.csv".into(),
            bytes,
        });
    }
    Ok((EXIT_OK, lines, artifacts))
}

fn write_commented(out: &mut Vec<u8>, exp: &ResolvedExperiment) {
    for (key, value) in csv_header(exp) {
        writeln!(out, "# {key}={value}").expect("in-memory write");
    }
}

fn scan(exp: &ResolvedExperiment) -> Result<Pipeline, RunError> {
    let m = stationary_distribution(&exp.kernel)?;
    let report = run_scan(exp, &m)?;
    let mut doc = json!({ "meta": meta(exp, Verb::Scan) });
    doc["report"] = serde_json::to_value(&report).expect("report serializes");
    let mut lines = vec![format!(
        "uniform bound estimate {:.4} over {} points",
        report.lambda0_hat,
        report.points.len()
    )];
    lines.extend(evidence_line(
        report.hypothesis_violated,
        report.common_invariant_residual,
        report.surrogate,
    ));
    let mut csv = Vec::new();
    write_commented(&mut csv, exp);
    writeln!(csv, "x,upper_slope").unwrap();
    for (x, s) in report.points.iter().zip(&report.upper_slopes) {
        writeln!(csv, "{x:e},{s:e}").unwrap();
    }
    Ok((
        EXIT_OK,
        lines,
        vec![
            json_artifact("scan.json", &doc),
            Artifact {
                name: "scan.csv".into(),
                bytes: csv,
            },
        ],
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RowStatus {
    Pass,
    Fail,
    /// The statement's hypothesis is not met by this instance.
    NotApplicable,
    /// The experiment ran but its hypothesis was found to fail.
    HypothesisViolated,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyRow {
    pub statement_id: &'static str,
    pub residual: Option<f64>,
    pub threshold: Option<f64>,
    /// `None` when the row is not applicable or flagged.
    pub pass: Option<bool>,
    pub status: RowStatus,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub rows: Vec<VerifyRow>,
    pub passed: usize,
    pub failed: usize,
    pub flagged: usize,
}

impl VerifyReport {
    pub fn row(&self, id: &str) -> Option<&VerifyRow> {
        self.rows.iter().find(|r| r.statement_id == id)
    }

    pub fn table(&self) -> Vec<String> {
        let mut lines = vec![format!(
            "{:<30} {:>12} {:>10}  {}",
            "statement", "residual", "threshold", "status"
        )];
        for r in &self.rows {
            let num = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{:.3e}", v + 0.0));
            let status = match r.status {
                RowStatus::Pass => "PASS",
                RowStatus::Fail => "FAIL",
                RowStatus::NotApplicable => "n/a",
                RowStatus::HypothesisViolated => "HYPOTHESIS VIOLATED",
            };
            let mut line = format!(
                "{:<30} {:>12} {:>10}  {status}",
                r.statement_id,
                num(r.residual),
                num(r.threshold)
            );
            if !r.note.is_empty() {
                line.push_str(&format!("  ({})", r.note));
            }
            lines.push(line);
        }
        lines.push(format!(
            "{} passed, {} failed, {} flagged",
            self.passed, self.failed, self.flagged
        ));
        lines
    }
}

fn upper(id: &'static str, residual: f64, threshold: f64) -> VerifyRow {
    let ok = residual <= threshold;
    VerifyRow {
        statement_id: id,
        residual: Some(residual),
        threshold: Some(threshold),
        pass: Some(ok),
        status: if ok { RowStatus::Pass } else { RowStatus::Fail },
        note: String::new(),
    }
}

fn errored(id: &'static str, err: &dyn std::fmt::Display) -> VerifyRow {
    VerifyRow {
        statement_id: id,
        residual: None,
        threshold: None,
        pass: Some(false),
        status: RowStatus::Fail,
        note: err.to_string(),
    }
}

fn not_applicable(id: &'static str, note: &str) -> VerifyRow {
    VerifyRow {
        statement_id: id,
        residual: None,
        threshold: None,
        pass: None,
        status: RowStatus::NotApplicable,
        note: note.into(),
    }
}

fn row_from<T>(id: &'static str, r: Result<T, CoreError>, f: impl FnOnce(T) -> VerifyRow) -> VerifyRow {
    match r {
        Ok(v) => f(v),
        Err(e) => errored(id, &e),
    }
}

/// A kernel that is not the time reversal of `p` (negative control).
fn corrupted_dual(p: &FiniteKernel) -> FiniteKernel {
    let k = p.size();
    let identity = FiniteKernel::identity(k);
    if *p != identity {
        return identity;
    }
    FiniteKernel::new(
        (0..k)
            .map(|i| (0..k).map(|j| if j == (i + 1) % k { 1.0 } else { 0.0 }).collect())
            .collect(),
    )
    .expect("cyclic permutation is stochastic")
}

/// Depth of the cylinder functions used by the enumeration checks; kept small
/// so that `k^(depth + n)` stays enumerable.
const ENUMERATION_DEPTH: usize = 2;
const ENUMERATION_GRID: usize = 16;

/// Runs the whole battery. Errors inside a check become failing rows.
pub fn verify_all(exp: &ResolvedExperiment) -> VerifyReport {
    let mut rows = Vec::new();
    let p = &exp.kernel;
    let k = p.size();
    let mut rng = ChaCha8Rng::seed_from_u64(exp.seed);

    let m = match stationary_distribution(p) {
        Ok(m) => m,
        Err(e) => {
            rows.push(errored("stationary-vector-residual", &e));
            return tally(rows);
        }
    };
    rows.push(upper(
        "stationary-vector-residual",
        m.residual(p),
        STATIONARY_RESIDUAL_TOL,
    ));
    let q = if exp.config.verify.corrupt_dual {
        corrupted_dual(p)
    } else {
        match dual_kernel(p, &m) {
            Ok(q) => q,
            Err(e) => {
                rows.push(errored("dual-kernel-detailed-balance", &e));
                return tally(rows);
            }
        }
    };
    let control = |mut row: VerifyRow| {
        if exp.config.verify.corrupt_dual {
            row.note = "negative control: corrupted dual kernel".into();
        }
        row
    };

    rows.push(control(upper(
        "dual-kernel-detailed-balance",
        duality_residual(p, &q, &m),
        1e-14,
    )));

    let identity = (0..20)
        .map(|_| {
            let kappa: Vec<Vec<f64>> = (0..k).map(|_| (0..k).map(|_| rng.random()).collect()).collect();
            duality_identity_residual(p, &q, &m, &kappa)
        })
        .fold(0.0, f64::max);
    rows.push(control(upper("duality-identity", identity, 1e-12)));

    rows.push(control(row_from(
        "dual-involution",
        dual_kernel(&q, &m),
        |back| {
            let worst = (0..k)
                .flat_map(|i| (0..k).map(move |j| (i, j)))
                .map(|(i, j)| (back.get(i, j) - p.get(i, j)).abs())
                .fold(0.0, f64::max);
            upper("dual-involution", worst, 1e-12)
        },
    )));

    let pair = boundedness_constant(p, &m).ok();
    rows.push(match &pair {
        Some(pair) => {
            let ok = pair.constant > 0.0 && pair.constant <= 1.0;
            VerifyRow {
                statement_id: "bounded-pair",
                residual: Some(pair.constant),
                threshold: None,
                pass: Some(ok),
                status: if ok { RowStatus::Pass } else { RowStatus::Fail },
                note: "residual column holds the constant C".into(),
            }
        }
        None => not_applicable("bounded-pair", "kernel has zero entries"),
    });

    let n = exp.grid();
    let family = DiscreteFamily::new(&exp.family, n);
    let random_nu = ProductMeasure::new(
        m.clone(),
        (0..k)
            .map(|_| GridMeasure::from_weights((0..n).map(|_| rng.random::<f64>()).collect()))
            .collect::<Result<Vec<_>, _>>()
            .expect("positive weights"),
    )
    .expect("shapes agree");
    rows.push(control(row_from(
        "operator-forms-agree",
        markov_operator_dual(&q, &family, &random_nu)
            .and_then(|d| Ok(d.max_tv(&markov_operator_direct(p, &m, &family, &random_nu)?))),
        |tv| upper("operator-forms-agree", tv, 1e-12),
    )));

    let tol = exp.config.solver.tol;
    match fixed_point_stationary(
        p,
        &m,
        &family,
        &initial_measure(exp, &m),
        tol,
        exp.config.solver.max_iter,
    ) {
        Ok(fp) => {
            let nu = fp.measure;
            rows.push(control(row_from(
                "fixed-point-stationarity",
                stationarity_residual(&q, &family, &nu),
                |r| upper("fixed-point-stationarity", r, 10.0 * tol),
            )));
            match xi(&nu, &q) {
                Ok(mu) => {
                    rows.push(control(row_from(
                        "skew-invariance-of-xi",
                        skew_invariance_residual(&q, &family, &mu),
                        |r| upper("skew-invariance-of-xi", r, 1e-8),
                    )));
                    match roundtrip_residuals(&nu, &mu, &family, &q) {
                        Ok((r1, r2)) => {
                            rows.push(control(upper("roundtrip-theta-xi", r1, 1e-8)));
                            rows.push(control(upper("roundtrip-xi-theta", r2, 1e-8)));
                        }
                        Err(e) => {
                            rows.push(errored("roundtrip-theta-xi", &e));
                            rows.push(errored("roundtrip-xi-theta", &e));
                        }
                    }
                    rows.push(match &pair {
                        Some(pair) => {
                            let s = sandwich_check(&nu, &mu, pair.constant);
                            let mut row = upper("sandwich-bound", -s.worst_slack, 1e-12);
                            row.note = "residual column holds minus the worst slack".into();
                            control(row)
                        }
                        None => not_applicable("sandwich-bound", "kernel has zero entries"),
                    });
                }
                Err(e) => {
                    for id in [
                        "skew-invariance-of-xi",
                        "roundtrip-theta-xi",
                        "roundtrip-xi-theta",
                        "sandwich-bound",
                    ] {
                        rows.push(errored(id, &e));
                    }
                }
            }
        }
        Err(e) => {
            for id in [
                "fixed-point-stationarity",
                "skew-invariance-of-xi",
                "roundtrip-theta-xi",
                "roundtrip-xi-theta",
                "sandwich-bound",
            ] {
                rows.push(errored(id, &e));
            }
        }
    }

    let g: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
    let table: Vec<f64> = (0..k.pow(ENUMERATION_DEPTH as u32 + 1)).map(|_| rng.random()).collect();
    let u = |w: &[usize]| table[w.iter().fold(0, |acc, s| acc * k + s)];
    rows.push(control(row_from(
        "shift-duality",
        check_shift_duality(p, &q, &m, &g, u, ENUMERATION_DEPTH),
        |r| upper("shift-duality", r, 1e-12),
    )));

    rows.push(match &pair {
        Some(pair) => conditional_bound_row(exp, pair, &mut rng),
        None => not_applicable("conditional-bound", "kernel has zero entries"),
    });

    rows.push(match run_local_sync(exp, &m) {
        Ok(report) => sync_row(
            "sync-local-contraction",
            report.lambda_hat,
            report.synchronizes,
            report.hypothesis_violated,
            report.surrogate,
            format!("synchronized fraction {:.3}", report.sync_fraction),
        ),
        Err(e) => errored("sync-local-contraction", &e),
    });
    rows.push(match run_scan(exp, &m) {
        Ok(report) => sync_row(
            "uniform-contraction-bound",
            report.lambda0_hat,
            report.lambda0_hat < 0.0,
            report.hypothesis_violated,
            report.surrogate,
            String::new(),
        ),
        Err(e) => errored("uniform-contraction-bound", &e),
    });

    tally(rows)
}

fn conditional_bound_row(exp: &ResolvedExperiment, pair: &BoundedPair, rng: &mut ChaCha8Rng) -> VerifyRow {
    const ID: &str = "conditional-bound";
    let k = pair.size();
    let depth = ENUMERATION_DEPTH;
    let family = DiscreteFamily::new(&exp.family, ENUMERATION_GRID);
    let mut margin = f64::INFINITY;
    let mut checks = 0;
    for density in [0.2, 0.5] {
        let h = match CylinderFunction::random_admissible(&family, depth, density, rng) {
            Ok(h) => h,
            Err(e) => return errored(ID, &e),
        };
        for n in 1..=3 {
            if (k as u128).pow((depth + n) as u32) > markov_circle::trajectory::ENUMERATION_LIMIT {
                continue;
            }
            match check_conditional_bound(pair, &family, &h, rng.random(), n) {
                Ok(r) => {
                    margin = margin.min(r.margin);
                    checks += 1;
                }
                Err(e) => return errored(ID, &e),
            }
        }
    }
    if checks == 0 {
        return not_applicable(ID, "too many states to enumerate");
    }
    let ok = margin >= 0.0;
    VerifyRow {
        statement_id: ID,
        residual: Some(-margin),
        threshold: Some(0.0),
        pass: Some(ok),
        status: if ok { RowStatus::Pass } else { RowStatus::Fail },
        note: format!("{checks} exact checks; residual column holds minus the worst margin"),
    }
}

fn sync_row(
    id: &'static str,
    slope: f64,
    ok: bool,
    violated: bool,
    surrogate: bool,
    detail: String,
) -> VerifyRow {
    let mut notes = Vec::new();
    if !detail.is_empty() {
        notes.push(detail);
    }
    if violated {
        notes.push("maps share an invariant measure".into());
    } else {
        notes.push("no common invariant measure found (evidence)".into());
    }
    if surrogate {
        notes.push("surrogate slope for non-smooth maps".into());
    }
    let (pass, status) = if violated {
        (None, RowStatus::HypothesisViolated)
    } else if ok {
        (Some(true), RowStatus::Pass)
    } else {
        (Some(false), RowStatus::Fail)
    };
    VerifyRow {
        statement_id: id,
        residual: Some(slope),
        threshold: Some(0.0),
        pass,
        status,
        note: notes.join("; "),
    }
}

fn tally(rows: Vec<VerifyRow>) -> VerifyReport {
    let passed = rows.iter().filter(|r| r.pass == Some(true)).count();
    let failed = rows.iter().filter(|r| r.pass == Some(false)).count();
    let flagged = rows
        .iter()
        .filter(|r| r.status == RowStatus::HypothesisViolated)
        .count();
    VerifyReport {
        rows,
        passed,
        failed,
        flagged,
    }
}
