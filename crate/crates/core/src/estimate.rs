//! Monte Carlo estimators built on the sweep: conditional means of `log Z`,
//! free-energy ladders, concentration tails, additivity defects, coupled scans
//! in β and p, and exponential-decay fits.
//!
//! Every estimator draws sample `i` from a seed derived from the master seed,
//! computes per-sample values in parallel, and reduces them in index order, so
//! results are bit-for-bit reproducible regardless of thread count.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::env::{derive_seed, Environment, UniformField};
use crate::error::{invalid, Error, Result};
use crate::events::{GoodOracle, MarginConfig};
use crate::lattice::{check_dim, log_branching, LatticePoint, Pos};
use crate::perco::{binomial, connected_to_slice, coupled_zone_check, lifetime, CoupledZoneParams};
use crate::polymer::{ExtendedBeta, ScaledReal, Sweep};
use crate::stats::{compensated_sum, linear_fit, refined_mean, LinearFit, Moments};

/// One estimate with the parameters and seed that produced it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateRecord {
    pub experiment: String,
    pub d: usize,
    pub p: Option<f64>,
    pub beta: Option<ExtendedBeta>,
    pub n: Option<u64>,
    pub estimate: f64,
    pub stderr: f64,
    pub samples: usize,
    pub accepted: usize,
    pub seed: u64,
    #[serde(default)]
    pub wall_clock_secs: f64,
    #[serde(default)]
    pub extra: Value,
}

impl EstimateRecord {
    pub fn new(experiment: &str, d: usize, seed: u64) -> Self {
        EstimateRecord {
            experiment: experiment.to_string(),
            d,
            p: None,
            beta: None,
            n: None,
            estimate: 0.0,
            stderr: 0.0,
            samples: 0,
            accepted: 0,
            seed,
            wall_clock_secs: 0.0,
            extra: Value::Null,
        }
    }

    /// The record with its timing zeroed, for comparing runs.
    pub fn without_timing(&self) -> Self {
        EstimateRecord { wall_clock_secs: 0.0, ..self.clone() }
    }
}

/// Knobs shared by the experiments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Fluctuation exponent offset: deviations are measured at scale `n^{1/2+δ}`.
    pub delta: f64,
    /// Distance from criticality, `p - p_c` for experiments that pick `p`.
    pub epsilon: f64,
    /// Target polynomial order of tail decay.
    pub r: f64,
    /// Extra steps used to re-check connection past `n`.
    pub buffer: u64,
    pub samples: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig { delta: 0.2, epsilon: 0.1, r: 1.0, buffer: 0, samples: 1000 }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        check_delta(self.delta)?;
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return invalid(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if self.r.is_nan() || self.r <= 0.0 {
            return invalid(format!("r must be positive, got {}", self.r));
        }
        check_samples(self.samples)
    }
}

fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta < 0.5) {
        return invalid(format!("delta must lie in (0, 1/2), got {delta}"));
    }
    Ok(())
}

fn check_samples(samples: usize) -> Result<()> {
    if samples == 0 {
        return invalid("at least one sample is required");
    }
    Ok(())
}

fn check_p(p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return invalid(format!("p must lie in [0, 1], got {p}"));
    }
    Ok(())
}

/// Per-sample output of [`sample_partition`].
#[derive(Clone, Debug, PartialEq)]
pub struct SampleRow {
    pub index: usize,
    /// `connected[i]`: the origin reaches time `ns[i] + buffer`.
    pub connected: Vec<bool>,
    /// `log_z[i][c]`: `log Z_{ns[i]}` at `betas[c]`.
    pub log_z: Vec<Vec<f64>>,
    pub totals: Vec<Vec<ScaledReal>>,
}

/// Runs one multi-temperature sweep per sample, recording `log Z` at each
/// length in `ns`. Sample `i` uses the field `derive_seed(seed, role, i)`.
#[allow(clippy::too_many_arguments)]
pub fn sample_partition(
    d: usize,
    p: f64,
    betas: &[ExtendedBeta],
    ns: &[u64],
    buffer: u64,
    samples: usize,
    seed: u64,
    role: &str,
) -> Result<Vec<SampleRow>> {
    check_dim(d)?;
    check_p(p)?;
    check_samples(samples)?;
    let n_max = ns.iter().copied().max().ok_or_else(|| Error::InvalidArgument("no lengths requested".into()))?;
    let rows: Result<Vec<SampleRow>> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let env = Environment::from_seed(derive_seed(seed, role, i as u64), d, p)?;
            sample_row(&env, i, betas, ns, n_max, buffer)
        })
        .collect();
    rows
}

fn sample_row(env: &Environment, index: usize, betas: &[ExtendedBeta], ns: &[u64], n_max: u64, buffer: u64) -> Result<SampleRow> {
    let (checkpoints, _) = Sweep::new(env, LatticePoint::origin(), betas).run(n_max, ns)?;
    let life = if buffer > 0 { Some(lifetime(env, 0, &[Pos::ORIGIN], n_max + buffer)?) } else { None };
    let mut row = SampleRow { index, connected: Vec::new(), log_z: Vec::new(), totals: Vec::new() };
    for &n in ns {
        let cp = checkpoints.iter().find(|c| c.t == n).expect("checkpoint recorded for every requested length");
        row.connected.push(match life {
            Some(l) => l >= n + buffer,
            None => cp.connected,
        });
        row.log_z.push(cp.log_z.clone());
        row.totals.push(cp.totals.clone());
    }
    Ok(row)
}

/// Accepted values of `log Z_{ns[i]}` at channel `c`, in sample order.
fn accepted_values(rows: &[SampleRow], i: usize, c: usize) -> Vec<f64> {
    rows.iter().filter(|r| r.connected[i]).map(|r| r.log_z[i][c]).collect()
}

#[allow(clippy::too_many_arguments)]
fn conditional_record(
    experiment: &str,
    d: usize,
    p: f64,
    beta: ExtendedBeta,
    n: u64,
    values: &[f64],
    samples: usize,
    seed: u64,
) -> Result<EstimateRecord> {
    if values.is_empty() {
        return Err(Error::ZeroAcceptance { drawn: samples });
    }
    let m = Moments::from_slice(values);
    let mut rec = EstimateRecord::new(experiment, d, seed);
    rec.p = Some(p);
    rec.beta = Some(beta);
    rec.n = Some(n);
    rec.estimate = refined_mean(values);
    rec.stderr = m.stderr();
    rec.samples = samples;
    rec.accepted = values.len();
    Ok(rec)
}

/// `â_n^β`: mean of `log Z_n^β` over samples where the origin reaches time `n`.
pub fn conditional_mean_log(d: usize, p: f64, beta: ExtendedBeta, n: u64, samples: usize, seed: u64) -> Result<EstimateRecord> {
    conditional_mean_log_with(d, p, beta, n, 0, samples, seed)
}

/// As [`conditional_mean_log`], accepting only samples that reach `n + buffer`.
pub fn conditional_mean_log_with(
    d: usize,
    p: f64,
    beta: ExtendedBeta,
    n: u64,
    buffer: u64,
    samples: usize,
    seed: u64,
) -> Result<EstimateRecord> {
    let clock = Instant::now();
    let rows = sample_partition(d, p, &[beta], &[n], buffer, samples, seed, "env")?;
    let mut rec = conditional_record("conditional-mean", d, p, beta, n, &accepted_values(&rows, 0, 0), samples, seed)?;
    rec.extra = json!({ "buffer": buffer });
    rec.wall_clock_secs = clock.elapsed().as_secs_f64();
    Ok(rec)
}

/// Free energy `â_n/n` at `n_max`, with an error bar that adds the statistical
/// error to a geometric-tail extrapolation of the ladder `n_max/4, n_max/2, n_max`.
/// Differences shrinking like `n^{-1/2}` sum to `(√2+1)·|f_n - f_{n/2}|`.
pub fn free_energy_estimate(d: usize, p: f64, beta: ExtendedBeta, n_max: u64, samples: usize, seed: u64) -> Result<EstimateRecord> {
    if n_max < 8 {
        return invalid(format!("free-energy ladder needs n_max >= 8, got {n_max}"));
    }
    let clock = Instant::now();
    let ladder = [n_max / 4, n_max / 2, n_max];
    let rows = sample_partition(d, p, &[beta], &ladder, 0, samples, seed, "env")?;
    let mut rungs = Vec::new();
    for (i, &n) in ladder.iter().enumerate() {
        rungs.push(conditional_record("free-energy", d, p, beta, n, &accepted_values(&rows, i, 0), samples, seed)?);
    }
    let f: Vec<f64> = rungs.iter().zip(&ladder).map(|(r, &n)| r.estimate / n as f64).collect();
    let stat = rungs[2].stderr / n_max as f64;
    let tail = (std::f64::consts::SQRT_2 + 1.0) * (f[2] - f[1]).abs();
    let mut rec = rungs[2].clone();
    rec.estimate = f[2];
    rec.stderr = stat.hypot(tail);
    rec.extra = json!({
        "ladder": ladder,
        "per_step": f,
        "accepted": rungs.iter().map(|r| r.accepted).collect::<Vec<_>>(),
        "stat_stderr": stat,
        "ladder_error": tail,
        "log_branching": log_branching(d),
    });
    rec.wall_clock_secs = clock.elapsed().as_secs_f64();
    Ok(rec)
}

/// Conditional frequency of `|log Z_n^β - â_n^β| >= n^{1/2+δ}`. The centre is
/// the same-run mean, which biases the frequency slightly downward.
pub fn concentration_tail(d: usize, p: f64, beta: ExtendedBeta, n: u64, delta: f64, samples: usize, seed: u64) -> Result<EstimateRecord> {
    check_delta(delta)?;
    let clock = Instant::now();
    let rows = sample_partition(d, p, &[beta], &[n], 0, samples, seed, "env")?;
    let values = accepted_values(&rows, 0, 0);
    let base = conditional_record("concentration", d, p, beta, n, &values, samples, seed)?;
    let centre = base.estimate;
    let threshold = (n as f64).powf(0.5 + delta);
    let hits = values.iter().filter(|&&v| (v - centre).abs() >= threshold).count();
    let residual = compensated_sum(values.iter().map(|v| v - centre)) / values.len() as f64;
    let (freq, se) = binomial(hits, values.len());
    let mut rec = base;
    rec.estimate = freq;
    rec.stderr = se;
    rec.extra = json!({
        "delta": delta,
        "threshold": threshold,
        "exceedances": hits,
        "conditional_mean": centre,
        "conditional_stderr": Moments::from_slice(&values).stderr(),
        "centering_residual": residual,
    });
    rec.wall_clock_secs = clock.elapsed().as_secs_f64();
    Ok(rec)
}

/// A log-linear fit of measured values against a scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub label: String,
    pub abscissae: Vec<f64>,
    /// Frequencies (decay experiments) or variances (variance scaling).
    pub values: Vec<f64>,
    pub stderrs: Vec<f64>,
    /// Events counted and trials per abscissa.
    pub counts: Vec<usize>,
    pub trials: Vec<usize>,
    /// `(x, ln value)` for the nonzero values only.
    pub log_points: Vec<(f64, f64)>,
    pub fit: Option<LinearFit>,
    /// Smallest nonzero frequency resolvable, set when every frequency is zero.
    pub resolution_floor: Option<f64>,
    /// The slope's 95% interval lies strictly below zero.
    pub decaying: bool,
    /// Every value is zero (or constant) so no fit is attempted.
    pub degenerate: bool,
}

impl DecayFit {
    fn from_values(label: &str, xs: Vec<f64>, values: Vec<f64>, stderrs: Vec<f64>, counts: Vec<usize>, trials: Vec<usize>) -> Self {
        let log_points: Vec<(f64, f64)> = xs.iter().zip(&values).filter(|(_, v)| **v > 0.0).map(|(x, v)| (*x, v.ln())).collect();
        let (lx, ly): (Vec<f64>, Vec<f64>) = log_points.iter().copied().unzip();
        let fit = linear_fit(&lx, &ly, 0.95);
        let decaying = fit.as_ref().map(|f| f.slope_hi < 0.0).unwrap_or(false);
        let all_zero = values.iter().all(|&v| v == 0.0);
        let resolution_floor = if all_zero { trials.iter().max().map(|&t| 1.0 / t.max(1) as f64) } else { None };
        DecayFit {
            label: label.to_string(),
            abscissae: xs,
            values,
            stderrs,
            counts,
            trials,
            log_points,
            fit,
            resolution_floor,
            decaying,
            degenerate: all_zero,
        }
    }
}

fn is_geometric(ns: &[u64]) -> bool {
    let r = ns[1] as f64 / ns[0] as f64;
    r > 1.0 && ns.windows(2).all(|w| ((w[1] as f64 / w[0] as f64) - r).abs() < 1e-9)
}

/// Slope of `ln Var(log Z_n^β | connected)` against `ln n`. Inputs with zero
/// variance (β = 0, p = 1) come back flagged degenerate without a fit.
pub fn variance_scaling_fit(d: usize, p: f64, beta: ExtendedBeta, n_list: &[u64], samples: usize, seed: u64) -> Result<DecayFit> {
    if n_list.len() < 4 || n_list[0] == 0 || !is_geometric(n_list) {
        return invalid(format!("variance scaling needs a geometric list of at least 4 lengths, got {n_list:?}"));
    }
    let rows = sample_partition(d, p, &[beta], n_list, 0, samples, seed, "env")?;
    let mut vars = Vec::new();
    let mut ses = Vec::new();
    let mut acc = Vec::new();
    for i in 0..n_list.len() {
        let values = accepted_values(&rows, i, 0);
        if values.is_empty() {
            return Err(Error::ZeroAcceptance { drawn: samples });
        }
        let m = Moments::from_slice(&values);
        let v = m.variance();
        vars.push(v);
        // Normal-theory standard error of a sample variance.
        ses.push(v * (2.0 / (values.len().max(2) - 1) as f64).sqrt());
        acc.push(values.len());
    }
    let xs: Vec<f64> = n_list.iter().map(|&n| (n as f64).ln()).collect();
    let degenerate = vars.contains(&0.0);
    let mut fit = DecayFit::from_values("variance-scaling", xs, vars, ses, acc.clone(), vec![samples; n_list.len()]);
    if degenerate {
        fit.fit = None;
        fit.decaying = false;
        fit.degenerate = true;
        fit.resolution_floor = None;
    }
    Ok(fit)
}

/// Additivity defects from three independent runs at lengths `m`, `n`, `m+n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdditivityDefect {
    pub record: EstimateRecord,
    /// `â_{m+n} - â_m - â_n` and its standard error.
    pub superadditive: (f64, f64),
    /// `2â_n - â_{2n}` and its standard error, when `m == n`.
    pub doubling: Option<(f64, f64)>,
}

/// `â_{m+n} - â_m - â_n`, each term from its own seeds; for `m == n` also `2â_n - â_{2n}`.
pub fn additivity_defect(d: usize, p: f64, beta: ExtendedBeta, m: u64, n: u64, samples: usize, seed: u64) -> Result<AdditivityDefect> {
    if m > n || m == 0 {
        return invalid(format!("additivity needs 1 <= m <= n, got m={m}, n={n}"));
    }
    let clock = Instant::now();
    let run = |len: u64, role: &str| -> Result<EstimateRecord> {
        let rows = sample_partition(d, p, &[beta], &[len], 0, samples, seed, role)?;
        conditional_record("additivity", d, p, beta, len, &accepted_values(&rows, 0, 0), samples, seed)
    };
    let am = run(m, "additivity-m")?;
    let an = run(n, "additivity-n")?;
    let asum = run(m + n, "additivity-sum")?;
    let d1 = asum.estimate - am.estimate - an.estimate;
    let s1 = (asum.stderr.powi(2) + am.stderr.powi(2) + an.stderr.powi(2)).sqrt();
    let doubling = (m == n).then(|| (2.0 * an.estimate - asum.estimate, (4.0 * an.stderr.powi(2) + asum.stderr.powi(2)).sqrt()));
    let mut rec = asum.clone();
    rec.n = Some(n);
    rec.estimate = d1;
    rec.stderr = s1;
    rec.samples = 3 * samples;
    rec.accepted = am.accepted.min(an.accepted).min(asum.accepted);
    rec.extra = json!({
        "m": m,
        "a_m": [am.estimate, am.stderr, am.accepted],
        "a_n": [an.estimate, an.stderr, an.accepted],
        "a_sum": [asum.estimate, asum.stderr, asum.accepted],
        "doubling_defect": doubling.map(|x| x.0),
        "doubling_stderr": doubling.map(|x| x.1),
    });
    rec.wall_clock_secs = clock.elapsed().as_secs_f64();
    Ok(AdditivityDefect { record: rec, superadditive: (d1, s1), doubling })
}

/// Output of a coupled scan: one record per parameter value plus the number of
/// monotonicity violations found with exact comparisons.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanResult {
    pub records: Vec<EstimateRecord>,
    /// Samples where the per-sample value moved the wrong way along the scan.
    pub sample_violations: usize,
    /// Adjacent records whose estimates moved the wrong way.
    pub record_violations: usize,
    pub samples_checked: usize,
}

/// `â_n^β/n` for each β in the list, every β sharing the same environments.
/// Records come back in the order of `beta_list`; violations are counted after
/// sorting by β.
pub fn zero_temp_scan(d: usize, p: f64, n: u64, beta_list: &[ExtendedBeta], samples: usize, seed: u64) -> Result<ScanResult> {
    if !beta_list.iter().any(|b| b.is_infinite()) {
        return invalid("the inverse-temperature list must include inf");
    }
    if n == 0 {
        return invalid("scan length must be at least 1");
    }
    let clock = Instant::now();
    let rows = sample_partition(d, p, beta_list, &[n], 0, samples, seed, "env")?;
    let mut order: Vec<usize> = (0..beta_list.len()).collect();
    order.sort_by(|&a, &b| beta_list[a].partial_cmp(&beta_list[b]).expect("betas are ordered"));
    let accepted: Vec<&SampleRow> = rows.iter().filter(|r| r.connected[0]).collect();
    let sample_violations = accepted.iter().filter(|r| order.windows(2).any(|w| r.totals[0][w[1]] > r.totals[0][w[0]])).count();
    let mut records = Vec::new();
    for (c, &beta) in beta_list.iter().enumerate() {
        let values: Vec<f64> = accepted.iter().map(|r| r.log_z[0][c] / n as f64).collect();
        let mut rec = conditional_record("limit-beta", d, p, beta, n, &values, samples, seed)?;
        let gaps: Vec<f64> = accepted.iter().map(|r| r.log_z[0][c] - r.log_z[0][order[order.len() - 1]]).collect();
        rec.extra = json!({ "max_gap_to_inf": gaps.iter().cloned().fold(0.0, f64::max) });
        records.push(rec);
    }
    let record_violations = order.windows(2).filter(|w| records[w[1]].estimate > records[w[0]].estimate).count();
    let elapsed = clock.elapsed().as_secs_f64();
    records.iter_mut().for_each(|r| r.wall_clock_secs = elapsed);
    Ok(ScanResult { records, sample_violations, record_violations, samples_checked: accepted.len() })
}

/// `â_n(p)/n` across a sorted grid of `p`, every `p` reading the same uniform
/// field so that open sites only ever get added as `p` grows. The per-sample
/// value checked for monotonicity is `Z_n^β`, regularised at β = ∞ to
/// `Ñ_n = N_n` on connection and `1` otherwise.
pub fn continuity_scan(d: usize, p_list: &[f64], n: u64, beta: ExtendedBeta, samples: usize, seed: u64) -> Result<ScanResult> {
    check_dim(d)?;
    check_samples(samples)?;
    if p_list.is_empty() || p_list.windows(2).any(|w| w[0] > w[1]) {
        return invalid(format!("p grid must be nonempty and sorted, got {p_list:?}"));
    }
    for &p in p_list {
        check_p(p)?;
    }
    let clock = Instant::now();
    let per_sample: Result<Vec<Vec<(bool, f64, ScaledReal)>>> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let field = UniformField::new(derive_seed(seed, "env", i as u64), d);
            p_list
                .iter()
                .map(|&p| {
                    let env = Environment::bernoulli(field, p)?;
                    let (cps, _) = Sweep::new(&env, LatticePoint::origin(), &[beta]).run(n, &[n])?;
                    let cp = &cps[0];
                    Ok((cp.connected, cp.log_z[0], cp.totals[0]))
                })
                .collect()
        })
        .collect();
    let per_sample = per_sample?;
    let regularised = |&(conn, _, z): &(bool, f64, ScaledReal)| {
        if beta.is_infinite() && !conn {
            ScaledReal::ONE
        } else {
            z
        }
    };
    let sample_violations = per_sample.iter().filter(|vals| vals.windows(2).any(|w| regularised(&w[1]) < regularised(&w[0]))).count();
    let mut records = Vec::new();
    for (j, &p) in p_list.iter().enumerate() {
        let values: Vec<f64> = per_sample.iter().filter(|v| v[j].0).map(|v| v[j].1 / n as f64).collect();
        let regular: Vec<f64> = per_sample.iter().map(|v| if v[j].0 { v[j].1 } else { 0.0 } / n as f64).collect();
        let mut rec = conditional_record("continuity", d, p, beta, n, &values, samples, seed)?;
        rec.extra = json!({ "unconditional_mean": Moments::from_slice(&regular).mean });
        records.push(rec);
    }
    let record_violations = records.windows(2).filter(|w| w[1].estimate < w[0].estimate).count();
    let elapsed = clock.elapsed().as_secs_f64();
    records.iter_mut().for_each(|r| r.wall_clock_secs = elapsed);
    Ok(ScanResult { records, sample_violations, record_violations, samples_checked: samples })
}

/// Which failure event a decay experiment counts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecayKind {
    /// `(0,0) ↔ (n, Z^d)` but not `(n + buffer, Z^d)`.
    FiniteCluster,
    /// `(0,0) ↔ (k, Z^d)` but the coupled zone `C_k` fails.
    CoupledZone,
    /// The segment `{0, …, m-1}·e_1` at time 0 dies before the horizon.
    LargeInitial,
    /// `(0,0) ↔ (k, Z^d)` but the good event `G_k` fails.
    GoodEvent,
}

impl DecayKind {
    pub fn name(&self) -> &'static str {
        match self {
            DecayKind::FiniteCluster => "finite-cluster",
            DecayKind::CoupledZone => "coupled-zone",
            DecayKind::LargeInitial => "large-initial",
            DecayKind::GoodEvent => "good-event",
        }
    }
}

impl std::str::FromStr for DecayKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "finite-cluster" => Ok(DecayKind::FiniteCluster),
            "coupled-zone" => Ok(DecayKind::CoupledZone),
            "large-initial" => Ok(DecayKind::LargeInitial),
            "good-event" => Ok(DecayKind::GoodEvent),
            other => invalid(format!("unknown decay kind {other:?}")),
        }
    }
}

/// Secondary parameters of a decay experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayConfig {
    /// Finite-cluster re-check distance past `n`.
    pub buffer: u64,
    /// Large-initial survival horizon; defaults to the largest scale plus `buffer`.
    pub horizon: Option<u64>,
    /// Coupled-zone cone speed; defaults to `1/(2d)`.
    pub v: Option<f64>,
    pub margin: MarginConfig,
}

impl Default for DecayConfig {
    fn default() -> Self {
        DecayConfig { buffer: 64, horizon: None, v: None, margin: MarginConfig::default() }
    }
}

pub fn decay_experiment(kind: DecayKind, d: usize, p: f64, scales: &[u64], samples: usize, seed: u64) -> Result<DecayFit> {
    decay_experiment_with(kind, d, p, scales, samples, seed, &DecayConfig::default())
}

/// Failure frequency at each scale and its log-linear fit. Every scale reads
/// the same environments.
pub fn decay_experiment_with(
    kind: DecayKind,
    d: usize,
    p: f64,
    scales: &[u64],
    samples: usize,
    seed: u64,
    cfg: &DecayConfig,
) -> Result<DecayFit> {
    check_dim(d)?;
    check_p(p)?;
    check_samples(samples)?;
    if scales.is_empty() || scales[0] == 0 || scales.windows(2).any(|w| w[0] >= w[1]) {
        return invalid(format!("scales must be positive and strictly increasing, got {scales:?}"));
    }
    let max_scale = *scales.last().expect("nonempty");
    let horizon = cfg.horizon.unwrap_or(max_scale + cfg.buffer);
    if let Some(v) = cfg.v {
        CoupledZoneParams { v, k: 1 }.validate(d)?;
    }
    let failures: Result<Vec<Vec<bool>>> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let env = Environment::from_seed(derive_seed(seed, "decay", i as u64), d, p)?;
            decay_sample(kind, &env, scales, horizon, cfg, derive_seed(seed, "decay-margin", i as u64))
        })
        .collect();
    let failures = failures?;
    let counts: Vec<usize> = (0..scales.len()).map(|j| failures.iter().filter(|f| f[j]).count()).collect();
    let (freqs, ses): (Vec<f64>, Vec<f64>) = counts.iter().map(|&c| binomial(c, samples)).unzip();
    let xs = scales.iter().map(|&s| s as f64).collect();
    Ok(DecayFit::from_values(kind.name(), xs, freqs, ses, counts, vec![samples; scales.len()]))
}

fn decay_sample(
    kind: DecayKind,
    env: &Environment,
    scales: &[u64],
    horizon: u64,
    cfg: &DecayConfig,
    margin_seed: u64,
) -> Result<Vec<bool>> {
    let d = env.d();
    let origin = [Pos::ORIGIN];
    match kind {
        DecayKind::FiniteCluster => {
            let max_scale = *scales.last().expect("nonempty");
            let life = lifetime(env, 0, &origin, max_scale + cfg.buffer)?;
            Ok(scales.iter().map(|&n| life >= n && life < n + cfg.buffer).collect())
        }
        DecayKind::CoupledZone => {
            let life = lifetime(env, 0, &origin, *scales.last().expect("nonempty"))?;
            scales
                .iter()
                .map(|&k| {
                    if life < k {
                        return Ok(false);
                    }
                    let mut params = CoupledZoneParams::new(d, k);
                    if let Some(v) = cfg.v {
                        params.v = v;
                    }
                    Ok(!coupled_zone_check(env, 0, Pos::ORIGIN, &params)?)
                })
                .collect()
        }
        DecayKind::LargeInitial => scales
            .iter()
            .map(|&m| {
                let set: Vec<Pos> = (0..m as i64).map(Pos::line).collect();
                Ok(!connected_to_slice(env, 0, &set, horizon)?)
            })
            .collect(),
        DecayKind::GoodEvent => {
            let life = lifetime(env, 0, &origin, *scales.last().expect("nonempty"))?;
            let margin = MarginConfig { seed: margin_seed, ..cfg.margin.clone() };
            let mut oracle = GoodOracle::new(env, &margin);
            scales.iter().map(|&k| Ok(life >= k && !oracle.good(0, Pos::ORIGIN, k)?)).collect()
        }
    }
}
