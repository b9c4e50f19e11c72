//! One function per command: run the estimators, collect records and notes.

use std::fmt::Write as _;
use std::path::PathBuf;

use num_bigint::BigUint;
use percolymer::env::{derive_seed, SplitMix};
use percolymer::estimate::{self, DecayConfig, DecayFit, EstimateRecord};
use percolymer::events::{check_a_repair, check_b_repair, martingale_diff_estimate, EventReport, ScaleParams};
use percolymer::lattice::log_branching;
use percolymer::perco::critical_estimate;
use percolymer::polymer::{endpoint_counts, enumerate_paths, is_open_path, partition_log, total_energy, Path};
use percolymer::stats::Moments;
use percolymer::{Environment, ExtendedBeta, LatticePoint, Pos};
use rayon::prelude::*;
use serde_json::json;

use crate::config::{Command, EventMode, RunConfig};
use crate::error::CliError;
use crate::sink::{ResultSink, SinkMode};

/// What a run produced.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub command: Command,
    pub config: RunConfig,
    pub records: Vec<EstimateRecord>,
    /// Summary lines printed under the table.
    pub notes: Vec<String>,
    /// CSV and JSON-lines files written, if any.
    pub files: Option<(PathBuf, PathBuf)>,
}

/// Resolves `config`, runs `command` on a pool of the configured size and
/// writes the records when an output path is set.
pub fn run(command: Command, config: RunConfig, mode: SinkMode) -> Result<RunOutcome, CliError> {
    let config = config.resolve(command)?;
    let mut sink = match &config.out {
        Some(out) => Some(ResultSink::open(out, mode)?),
        None => None,
    };
    let (records, notes) = match config.threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| CliError::Other(e.to_string()))?
            .install(|| execute(command, &config))?,
        None => execute(command, &config)?,
    };
    let mut files = None;
    if let Some(sink) = sink.as_mut() {
        for r in &records {
            sink.write(command.name(), r, &config)?;
        }
        files = Some((sink.csv_path().to_path_buf(), sink.jsonl_path().to_path_buf()));
    }
    Ok(RunOutcome { command, config, records, notes, files })
}

/// Runs a resolved config without writing anything.
pub fn execute(command: Command, c: &RunConfig) -> Result<(Vec<EstimateRecord>, Vec<String>), CliError> {
    let d = c.d.expect("resolved");
    let samples = c.samples.expect("resolved");
    let seed = c.seed.expect("resolved");
    let p = c.p.unwrap_or(0.8);
    let n = c.n.unwrap_or(1);
    let mut records = Vec::new();
    let mut notes = Vec::new();
    match command {
        Command::FreeEnergy => {
            for beta in c.betas() {
                records.push(estimate::free_energy_estimate(d, p, beta, n, samples, seed)?);
            }
        }
        Command::Concentration => {
            for beta in c.betas() {
                records.push(estimate::concentration_tail(d, p, beta, n, c.delta.expect("resolved"), samples, seed)?);
            }
        }
        Command::Variance => {
            let ns = c.n_list.as_ref().expect("resolved");
            for beta in c.betas() {
                let fit = estimate::variance_scaling_fit(d, p, beta, ns, samples, seed)?;
                let base = base_record("variance", c, Some(p), Some(beta));
                records.extend(fit_records(&fit, &base, ns, &mut notes, &format!("variance at beta={beta}")));
            }
        }
        Command::Additivity => {
            let m = c.m.unwrap_or(n);
            for beta in c.betas() {
                let a = estimate::additivity_defect(d, p, beta, m, n, samples, seed)?;
                let rec = a.record.clone();
                notes.push(format!("beta={beta}: superadditive defect {:.6} +/- {:.6}", a.superadditive.0, a.superadditive.1));
                records.push(rec.clone());
                if let Some((v, s)) = a.doubling {
                    notes.push(format!("beta={beta}: doubling defect {v:.6} +/- {s:.6}"));
                    records.push(EstimateRecord { experiment: "additivity-doubling".into(), estimate: v, stderr: s, ..rec });
                }
            }
        }
        Command::LimitBeta => {
            let betas = c.beta_list.as_ref().expect("resolved");
            let scan = estimate::zero_temp_scan(d, p, n, betas, samples, seed)?;
            let ok = scan.sample_violations == 0 && scan.record_violations == 0;
            notes.push(format!(
                "monotone column: {} ({} sample violations over {} samples, {} record violations)",
                if ok { "verified" } else { "VIOLATED" },
                scan.sample_violations,
                scan.samples_checked,
                scan.record_violations
            ));
            records = scan.records;
        }
        Command::Continuity => {
            let ps = c.p_list.as_ref().expect("resolved");
            let beta = c.betas()[0];
            let scan = estimate::continuity_scan(d, ps, n, beta, samples, seed)?;
            notes.push(format!("p-monotonicity: {} sample violations over {} samples", scan.sample_violations, scan.samples_checked));
            let gaps: Vec<f64> = scan.records.windows(2).map(|w| w[1].estimate - w[0].estimate).collect();
            if let Some(max) = gaps.iter().cloned().reduce(f64::max) {
                notes.push(format!("largest step between neighbouring p: {max:.6}"));
            }
            records = scan.records;
        }
        Command::Decay => {
            let kind = c.kind.expect("resolved");
            let scales = c.scales.as_ref().expect("resolved");
            let cfg = DecayConfig { buffer: c.buffer.unwrap_or(64), v: c.v, ..DecayConfig::default() };
            let fit = estimate::decay_experiment_with(kind, d, p, scales, samples, seed, &cfg)?;
            let mut base = base_record(&format!("decay-{}", kind.name()), c, Some(p), None);
            base.extra = json!({ "kind": kind.name(), "buffer": cfg.buffer, "v": c.v });
            records.extend(fit_records(&fit, &base, scales, &mut notes, kind.name()));
        }
        Command::VerifyEvents => match c.mode.expect("resolved") {
            EventMode::Repair => verify_repairs(c, &mut records, &mut notes)?,
            EventMode::Martingale => verify_martingale(c, &mut records, &mut notes)?,
        },
        Command::Critical => {
            let tol = c.tol.expect("resolved");
            let pc = critical_estimate(d, n, samples, tol, seed)?;
            let mut rec = base_record("critical", c, None, None);
            rec.estimate = pc;
            rec.stderr = tol / 2.0;
            rec.samples = samples;
            rec.accepted = samples;
            rec.extra = json!({ "horizon": n, "tol": tol, "survival_threshold": 0.5 });
            notes.push(format!("survival-probability midpoint at horizon {n}: p = {pc:.4}"));
            records.push(rec);
        }
        Command::OracleCheck => {
            let matches = oracle_check(d, p, n, samples, seed)?;
            let mut rec = base_record("oracle-check", c, Some(p), None);
            rec.estimate = matches as f64 / samples as f64;
            rec.samples = samples;
            rec.accepted = matches;
            rec.extra = json!({ "betas": ["0", "0.5", "2", "inf"], "log_tolerance": LOG_TOLERANCE });
            notes.push(format!("{matches}/{samples} exact matches"));
            records.push(rec);
        }
    }
    Ok((records, notes))
}

fn base_record(experiment: &str, c: &RunConfig, p: Option<f64>, beta: Option<ExtendedBeta>) -> EstimateRecord {
    let mut rec = EstimateRecord::new(experiment, c.d.expect("resolved"), c.seed.expect("resolved"));
    rec.p = p;
    rec.beta = beta;
    rec.n = c.n;
    rec
}

/// One record per abscissa plus a `-fit` record with the slope when a fit exists.
fn fit_records(fit: &DecayFit, base: &EstimateRecord, scales: &[u64], notes: &mut Vec<String>, label: &str) -> Vec<EstimateRecord> {
    let mut out = Vec::new();
    for (i, &s) in scales.iter().enumerate() {
        let mut rec = base.clone();
        rec.n = Some(s);
        rec.estimate = fit.values[i];
        rec.stderr = fit.stderrs[i];
        rec.samples = fit.trials[i];
        rec.accepted = fit.counts[i];
        out.push(rec);
    }
    match &fit.fit {
        Some(f) if !fit.degenerate => {
            let mut rec = base.clone();
            rec.experiment = format!("{}-fit", base.experiment);
            rec.n = None;
            rec.estimate = f.slope;
            rec.stderr = f.slope_stderr;
            rec.samples = fit.trials.iter().sum();
            rec.accepted = f.points;
            let mut extra = json!({ "slope_lo": f.slope_lo, "slope_hi": f.slope_hi, "decaying": fit.decaying, "scales": scales });
            if let (Some(e), Some(b)) = (extra.as_object_mut(), base.extra.as_object()) {
                e.extend(b.clone());
            }
            rec.extra = extra;
            notes.push(format!(
                "{label}: slope {:.4} (95% interval [{:.4}, {:.4}]){}",
                f.slope,
                f.slope_lo,
                f.slope_hi,
                if fit.decaying { ", strictly negative" } else { "" }
            ));
            out.push(rec);
        }
        _ => match fit.resolution_floor {
            Some(floor) => notes.push(format!("{label}: every value is zero, resolution floor {floor:.3e}; no fit")),
            None => notes.push(format!("{label}: degenerate input, fit refused")),
        },
    }
    out
}

const LOG_TOLERANCE: f64 = 1e-10;

/// Environments `derive_seed(seed, "oracle", i)` for which the recursion's
/// endpoint counts equal brute-force enumeration exactly and its log partition
/// functions agree to a relative `1e-10` at β ∈ {0, 0.5, 2, ∞}.
pub fn oracle_check(d: usize, p: f64, n: u64, seeds: usize, seed: u64) -> Result<usize, CliError> {
    let betas = [ExtendedBeta::Finite(0.0), ExtendedBeta::Finite(0.5), ExtendedBeta::Finite(2.0), ExtendedBeta::Infinite];
    let results: Result<Vec<bool>, CliError> = (0..seeds)
        .into_par_iter()
        .map(|i| {
            let env = Environment::from_seed(derive_seed(seed, "oracle", i as u64), d, p)?;
            let origin = LatticePoint::origin();
            let exact = endpoint_counts(&env, origin, n)?;
            let brute = enumerate_paths(&env, ExtendedBeta::Infinite, n, origin)?;
            let mut by_end = std::collections::HashMap::new();
            for (path, h) in &brute.paths {
                if *h == 0 {
                    *by_end.entry(*path.positions.last().expect("nonempty")).or_insert(0u64) += 1;
                }
            }
            let mut ok = by_end.values().sum::<u64>() == brute.open_count() as u64;
            for (y, count) in exact.support() {
                ok &= count == BigUint::from(by_end.remove(&y).unwrap_or(0));
            }
            ok &= by_end.is_empty();
            for beta in betas {
                let z = partition_log(&env, beta, n, origin)?;
                let e = enumerate_paths(&env, beta, n, origin)?.log_value();
                ok &= if z == f64::NEG_INFINITY || e == f64::NEG_INFINITY {
                    z == e
                } else {
                    (z - e).abs() <= LOG_TOLERANCE * z.abs().max(e.abs()).max(1.0)
                };
            }
            Ok(ok)
        })
        .collect();
    Ok(results?.into_iter().filter(|&m| m).count())
}

/// Independent re-check of one repair witness against its defining constraints.
pub fn witness_violation(
    report_event: &str,
    original: &Path,
    repair: &Path,
    e1: &Environment,
    e2: &Environment,
    scale: &ScaleParams,
    k: u64,
) -> Result<Option<String>, CliError> {
    let (n, big_l) = (scale.n, scale.slab_len);
    if original.start != 0 || repair.start != 0 || original.len() != n || repair.len() != n {
        return Ok(Some("witness paths must run from time 0 to n".into()));
    }
    if original.at(0) != Some(Pos::ORIGIN) || repair.at(0) != Some(Pos::ORIGIN) {
        return Ok(Some("witness paths must start at the origin".into()));
    }
    for t in 0..=scale.prefix_end(k) {
        if original.at(t) != repair.at(t) {
            return Ok(Some(format!("prefix differs at time {t}")));
        }
    }
    if !scale.suffix_void(k) {
        for j in k + scale.ell2()..=n - big_l {
            if repair.at(j + big_l) != original.at(j) {
                return Ok(Some(format!("suffix pinning fails at time {j}")));
            }
        }
    }
    if report_event == "A_repair" {
        if !is_open_path(e1, original)? {
            return Ok(Some("original is not open in the plain splice".into()));
        }
        if !is_open_path(e2, repair)? {
            return Ok(Some("repair is not open in the slab splice".into()));
        }
    } else if total_energy(e2, repair)? > total_energy(e1, original)? {
        return Ok(Some("repair has higher energy than the original".into()));
    }
    Ok(None)
}

struct RepairTally {
    a: bool,
    b: bool,
    witnesses: usize,
    bad: Vec<String>,
}

fn check_instance(c: &RunConfig, i: u64) -> Result<RepairTally, CliError> {
    let (d, p, n, seed) = (c.d.unwrap(), c.p.unwrap(), c.n.unwrap(), c.seed.unwrap());
    let s = derive_seed(seed, "instance", i);
    let b = Environment::from_seed(derive_seed(s, "b", 0), d, p)?;
    let sl = Environment::from_seed(derive_seed(s, "sl", 0), d, p)?;
    let e = Environment::from_seed(derive_seed(s, "e", 0), d, p)?;
    let mut scale = ScaleParams::with_ell(n, c.ell.unwrap());
    if let Some(l) = c.slab {
        scale = scale.with_slab(l);
    }
    let k = 1 + SplitMix::new(s).next_u64() % n;
    let a = check_a_repair(&b, &sl, &e, &scale, k)?;
    let bb = check_b_repair(&b, &sl, &e, &scale, k)?;
    let e1 = Environment::splice(&b, &e, k)?;
    let e2 = Environment::splice_slab(&b, &sl, &e, k - 1, k + scale.slab_len)?;
    let mut bad = Vec::new();
    let mut witnesses = 0;
    for report in [&a, &bb] {
        for pair in &report.repairs {
            witnesses += 1;
            if let Some(why) = witness_violation(&report.event, &pair.original, &pair.repair, &e1, &e2, &scale, k)? {
                bad.push(format!("instance {i} {}: {why}", report.event));
            }
        }
        check_counterexample(report, &e1, &mut bad, i)?;
    }
    Ok(RepairTally { a: a.holds, b: bb.holds, witnesses, bad })
}

fn check_counterexample(report: &EventReport, e1: &Environment, bad: &mut Vec<String>, i: u64) -> Result<(), CliError> {
    if report.holds {
        return Ok(());
    }
    match &report.counterexample {
        Some(path) if report.event == "A_repair" && !is_open_path(e1, path)? => {
            bad.push(format!("instance {i} A_repair: counterexample is not open"));
        }
        None => bad.push(format!("instance {i} {}: failure without counterexample", report.event)),
        _ => {}
    }
    Ok(())
}

fn verify_repairs(c: &RunConfig, records: &mut Vec<EstimateRecord>, notes: &mut Vec<String>) -> Result<(), CliError> {
    let samples = c.samples.unwrap();
    let tallies: Result<Vec<RepairTally>, CliError> = (0..samples as u64).into_par_iter().map(|i| check_instance(c, i)).collect();
    let tallies = tallies?;
    let a_holds = tallies.iter().filter(|t| t.a).count();
    let b_holds = tallies.iter().filter(|t| t.b).count();
    let implication = tallies.iter().filter(|t| t.b && !t.a).count();
    let witnesses: usize = tallies.iter().map(|t| t.witnesses).sum();
    let bad: Vec<&String> = tallies.iter().flat_map(|t| &t.bad).collect();
    for (event, hits) in [("A_repair", a_holds), ("B_repair", b_holds)] {
        let mut rec = base_record(event, c, c.p, Some(ExtendedBeta::Infinite));
        let f = hits as f64 / samples as f64;
        rec.estimate = f;
        rec.stderr = (f * (1.0 - f) / samples as f64).sqrt();
        rec.samples = samples;
        rec.accepted = hits;
        rec.extra = json!({
            "ell": c.ell, "slab": c.slab, "witnesses_checked": witnesses,
            "witness_violations": bad.len(), "b_without_a": implication,
        });
        records.push(rec);
    }
    notes.push(format!("A_repair held on {a_holds}/{samples}, B_repair on {b_holds}/{samples}; B without A: {implication}"));
    notes.push(format!("{witnesses} witnesses re-verified, {} violations", bad.len()));
    for b in bad.iter().take(5) {
        notes.push(format!("  {b}"));
    }
    Ok(())
}

fn verify_martingale(c: &RunConfig, records: &mut Vec<EstimateRecord>, notes: &mut Vec<String>) -> Result<(), CliError> {
    let (d, p, n, seed) = (c.d.unwrap(), c.p.unwrap(), c.n.unwrap(), c.seed.unwrap());
    let bases = c.samples.unwrap();
    let outer = c.outer.unwrap_or(40);
    let mut scale = ScaleParams::with_ell(n, c.ell.unwrap_or(2));
    if let Some(l) = c.slab {
        scale = scale.with_slab(l);
    }
    let bound = 3.0 * scale.slab_len as f64 * log_branching(d);
    for &k in c.k_list.as_deref().unwrap_or(&[]) {
        let diffs: Result<Vec<f64>, CliError> = (0..bases as u64)
            .into_par_iter()
            .map(|i| {
                let b = Environment::from_seed(derive_seed(seed, "base", i), d, p)?;
                Ok(martingale_diff_estimate(&b, &scale, k, outer, derive_seed(seed, "outer", i))?.estimate)
            })
            .collect();
        let diffs = diffs?;
        let m = Moments::from_slice(&diffs);
        let within = diffs.iter().filter(|x| x.abs() <= bound).count();
        let mut rec = base_record(&format!("martingale-k{k}"), c, Some(p), Some(ExtendedBeta::Infinite));
        rec.estimate = m.mean;
        rec.stderr = m.stderr();
        rec.samples = bases;
        rec.accepted = within;
        rec.extra = json!({ "k": k, "ell": scale.ell, "slab": scale.slab_len, "outer": outer, "bound": bound, "within_bound": within });
        let mut line = String::new();
        let _ = write!(line, "k={k}: mean {:.4} +/- {:.4}, {within}/{bases} within {bound:.2}", m.mean, m.stderr());
        notes.push(line);
        records.push(rec);
    }
    Ok(())
}

/// A fixed-width table of the records, with a monotone column for β scans.
pub fn render_table(outcome: &RunOutcome) -> String {
    let monotone = outcome.command == Command::LimitBeta;
    let mut s = String::new();
    let _ = write!(
        s,
        "{:<24} {:>2} {:>8} {:>8} {:>6} {:>14} {:>12} {:>15}",
        "experiment", "d", "p", "beta", "n", "estimate", "stderr", "accepted"
    );
    if monotone {
        s.push_str("  monotone");
    }
    s.push('\n');
    let mut order: Vec<usize> = (0..outcome.records.len()).collect();
    if monotone {
        order.sort_by(|&a, &b| outcome.records[a].beta.partial_cmp(&outcome.records[b].beta).expect("betas are ordered"));
    }
    let mut prev: Option<f64> = None;
    for i in order {
        let r = &outcome.records[i];
        let opt = |v: Option<String>| v.unwrap_or_else(|| "-".into());
        let _ = write!(
            s,
            "{:<24} {:>2} {:>8} {:>8} {:>6} {:>14.6} {:>12.6} {:>15}",
            r.experiment,
            r.d,
            opt(r.p.map(|p| p.to_string())),
            opt(r.beta.map(|b| b.to_string())),
            opt(r.n.map(|n| n.to_string())),
            r.estimate,
            r.stderr,
            format!("{}/{}", r.accepted, r.samples)
        );
        if monotone {
            let ok = prev.is_none_or(|q| r.estimate <= q);
            s.push_str(if ok { "  yes" } else { "  NO" });
            prev = Some(r.estimate);
        }
        s.push('\n');
    }
    for note in &outcome.notes {
        s.push_str(note);
        s.push('\n');
    }
    if let Some((csv, jsonl)) = &outcome.files {
        let _ = writeln!(s, "wrote {} records to {} and {}", outcome.records.len(), csv.display(), jsonl.display());
    }
    s
}
