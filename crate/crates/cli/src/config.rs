//! Run configuration: a JSON file overlaid by command-line flags, resolved
//! against per-command defaults and validated before anything runs.

use std::path::{Path, PathBuf};

use percolymer::estimate::DecayKind;
use percolymer::ExtendedBeta;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Every command the driver knows.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    FreeEnergy,
    Concentration,
    Variance,
    Additivity,
    LimitBeta,
    Continuity,
    Decay,
    VerifyEvents,
    Critical,
    OracleCheck,
}

impl Command {
    pub const ALL: [Command; 10] = [
        Command::FreeEnergy,
        Command::Concentration,
        Command::Variance,
        Command::Additivity,
        Command::LimitBeta,
        Command::Continuity,
        Command::Decay,
        Command::VerifyEvents,
        Command::Critical,
        Command::OracleCheck,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Command::FreeEnergy => "free-energy",
            Command::Concentration => "concentration",
            Command::Variance => "variance",
            Command::Additivity => "additivity",
            Command::LimitBeta => "limit-beta",
            Command::Continuity => "continuity",
            Command::Decay => "decay",
            Command::VerifyEvents => "verify-events",
            Command::Critical => "critical",
            Command::OracleCheck => "oracle-check",
        }
    }

    pub fn from_name(name: &str) -> Option<Command> {
        Command::ALL.into_iter().find(|c| c.name() == name)
    }
}

/// Sub-modes of `verify-events`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventMode {
    /// Repair events on random spliced environments.
    Repair,
    /// Martingale differences over random base environments.
    Martingale,
}

/// All settings of one run. Fields left unset take the command's default.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_list: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<ExtendedBeta>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_list: Option<Vec<ExtendedBeta>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_list: Option<Vec<u64>>,
    /// Shorter length for `additivity`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    /// Refuse runs whose estimated work (site updates) exceeds this.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_work: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub buffer: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<DecayKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scales: Option<Vec<u64>>,
    /// Coupled-zone cone speed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<EventMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ell: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slab: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_list: Option<Vec<u64>>,
    /// Inner replicates per base in martingale mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outer: Option<usize>,
    /// Bisection tolerance for `critical`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
}

macro_rules! overlay {
    ($base:ident, $top:ident, $($f:ident),*) => {
        $( if $top.$f.is_some() { $base.$f = $top.$f; } )*
    };
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<RunConfig, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<RunConfig, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::config(format!("bad config: {e}")))
    }

    /// `self` with every field set in `top` replaced.
    pub fn overlay(mut self, top: RunConfig) -> RunConfig {
        overlay!(
            self, top, experiment, d, p, p_list, beta, beta_list, n, n_list, m, samples, seed, out, threads, max_work, delta, buffer, kind,
            scales, v, mode, ell, slab, k_list, outer, tol
        );
        self
    }

    /// Per-command defaults, then `self` on top, then validation.
    pub fn resolve(self, command: Command) -> Result<RunConfig, CliError> {
        if let Some(e) = &self.experiment {
            if e != command.name() {
                return Err(CliError::config(format!("config is for experiment {e:?}, not {:?}", command.name())));
            }
        }
        let resolved = defaults(command, self.mode).overlay(self);
        resolved.validate(command)?;
        Ok(resolved)
    }

    fn validate(&self, command: Command) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::config(msg));
        let d = self.d.expect("resolved");
        if !(1..=3).contains(&d) {
            return bad(format!("d must be 1, 2 or 3, got {d}"));
        }
        for (name, value) in [("p", self.p), ("delta", self.delta), ("v", self.v), ("tol", self.tol), ("max_work", self.max_work)] {
            if let Some(x) = value {
                if !x.is_finite() {
                    return bad(format!("{name} must be finite, got {x}"));
                }
            }
        }
        let probs = self.p.iter().chain(self.p_list.iter().flatten());
        for &p in probs {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("p must lie in [0, 1], got {p}"));
            }
        }
        if let Some(ps) = &self.p_list {
            if ps.is_empty() || ps.windows(2).any(|w| w[0] > w[1]) {
                return bad(format!("p_list must be nonempty and sorted, got {ps:?}"));
            }
        }
        if self.samples == Some(0) {
            return bad("samples must be positive".into());
        }
        if self.threads == Some(0) {
            return bad("threads must be positive".into());
        }
        if self.n == Some(0) {
            return bad("n must be positive".into());
        }
        if let Some(delta) = self.delta {
            if !(delta > 0.0 && delta < 0.5) {
                return bad(format!("delta must lie in (0, 1/2), got {delta}"));
            }
        }
        match command {
            Command::FreeEnergy if self.n.unwrap() < 8 => return bad("free-energy needs n >= 8".into()),
            Command::Additivity => {
                let (m, n) = (self.m.unwrap_or(self.n.unwrap()), self.n.unwrap());
                if m == 0 || m > n {
                    return bad(format!("additivity needs 1 <= m <= n, got m={m}, n={n}"));
                }
            }
            Command::LimitBeta => {
                if !self.beta_list.as_ref().unwrap().iter().any(|b| b.is_infinite()) {
                    return bad("beta_list must include \"inf\"".into());
                }
            }
            Command::Variance => {
                let ns = self.n_list.as_ref().unwrap();
                if ns.len() < 4 || ns[0] == 0 {
                    return bad(format!("variance needs at least 4 positive lengths, got {ns:?}"));
                }
            }
            Command::Decay => {
                let s = self.scales.as_ref().unwrap();
                if s.is_empty() || s[0] == 0 || s.windows(2).any(|w| w[0] >= w[1]) {
                    return bad(format!("scales must be positive and strictly increasing, got {s:?}"));
                }
            }
            Command::VerifyEvents => {
                if self.mode == Some(EventMode::Repair) && d != 1 {
                    return bad("repair verification runs in d = 1 only".into());
                }
                if self.ell == Some(0) || self.slab == Some(0) || self.outer == Some(0) {
                    return bad("ell, slab and outer must be positive".into());
                }
            }
            Command::Critical if self.tol.unwrap() <= 0.0 => return bad("tol must be positive".into()),
            _ => {}
        }
        let work = self.estimated_work(command);
        let cap = self.max_work.unwrap();
        if work > cap {
            return Err(CliError::Cap(format!("estimated work {work:.3e} site updates exceeds max_work {cap:.3e}")));
        }
        Ok(())
    }

    /// Rough count of site updates, `samples * n^(d+1)` summed over lengths.
    pub fn estimated_work(&self, command: Command) -> f64 {
        let d = self.d.unwrap_or(1) as i32;
        let samples = self.samples.unwrap_or(1) as f64;
        let n = self.n.unwrap_or(1) as f64;
        let sweep = |len: f64| samples * len.powi(d + 1);
        match command {
            Command::Variance => self.n_list.iter().flatten().map(|&x| sweep(x as f64)).sum(),
            Command::Additivity => sweep(n) * 4.0,
            Command::Decay => {
                let top = self.scales.as_ref().and_then(|s| s.last().copied()).unwrap_or(1) + self.buffer.unwrap_or(0);
                sweep(top as f64)
            }
            Command::Continuity => sweep(n) * self.p_list.as_ref().map_or(1, |v| v.len()) as f64,
            Command::OracleCheck => samples * (2.0 * d as f64 + 1.0).powf(n),
            _ => sweep(n),
        }
    }

    pub fn betas(&self) -> Vec<ExtendedBeta> {
        match (&self.beta_list, self.beta) {
            (Some(list), _) => list.clone(),
            (None, Some(b)) => vec![b],
            (None, None) => vec![ExtendedBeta::Infinite],
        }
    }
}

fn defaults(command: Command, mode: Option<EventMode>) -> RunConfig {
    let mut c = RunConfig {
        experiment: Some(command.name().to_string()),
        d: Some(1),
        p: Some(0.8),
        beta: Some(ExtendedBeta::Infinite),
        n: Some(128),
        samples: Some(1000),
        seed: Some(0),
        max_work: Some(1e13),
        ..RunConfig::default()
    };
    match command {
        Command::Concentration => c.delta = Some(0.2),
        Command::Variance => c.n_list = Some(vec![64, 128, 256, 512]),
        Command::LimitBeta => {
            c.beta = None;
            c.beta_list = Some([1.0, 2.0, 4.0, 8.0].map(ExtendedBeta::Finite).into_iter().chain([ExtendedBeta::Infinite]).collect());
        }
        Command::Continuity => {
            c.p = None;
            c.p_list = Some(vec![0.78, 0.79, 0.8, 0.81, 0.82]);
        }
        Command::Decay => {
            c.beta = None;
            c.n = None;
            c.kind = Some(DecayKind::FiniteCluster);
            c.scales = Some(vec![1, 2, 3, 4, 5, 6]);
            c.buffer = Some(64);
            c.samples = Some(10_000);
        }
        Command::VerifyEvents if mode == Some(EventMode::Martingale) => {
            c.beta = None;
            c.mode = mode;
            c.n = Some(64);
            c.ell = Some(2);
            c.samples = Some(50);
            c.outer = Some(40);
            c.k_list = Some(vec![10, 32, 54]);
        }
        Command::VerifyEvents => {
            c.beta = None;
            c.mode = Some(EventMode::Repair);
            c.n = Some(12);
            c.ell = Some(1);
            c.slab = Some(2);
            c.samples = Some(50);
        }
        Command::Critical => {
            c.p = None;
            c.beta = None;
            c.n = Some(100);
            c.samples = Some(200);
            c.tol = Some(0.01);
        }
        Command::OracleCheck => {
            c.beta = None;
            c.n = Some(6);
            c.samples = Some(100);
            c.p = Some(0.6);
        }
        _ => {}
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_json(r#"{"d": 1, "bogus": 3}"#).is_err());
        assert!(RunConfig::from_json(r#"{"d": 1, "beta": "inf"}"#).is_ok());
        assert!(RunConfig::from_json(r#"{"p": "inf"}"#).is_err());
        assert!(RunConfig::from_json(r#"{"n": "inf"}"#).is_err());
    }

    #[test]
    fn flags_override_file_values() {
        let file = RunConfig::from_json(r#"{"d": 2, "p": 0.7, "samples": 10}"#).unwrap();
        let flags = RunConfig { p: Some(0.9), ..Default::default() };
        let c = file.overlay(flags).resolve(Command::FreeEnergy).unwrap();
        assert_eq!((c.d, c.p, c.samples, c.n), (Some(2), Some(0.9), Some(10), Some(128)));
    }

    #[test]
    fn invalid_values_fail_validation() {
        let cases = [
            RunConfig { d: Some(4), ..Default::default() },
            RunConfig { p: Some(f64::INFINITY), ..Default::default() },
            RunConfig { p: Some(1.5), ..Default::default() },
            RunConfig { samples: Some(0), ..Default::default() },
            RunConfig { experiment: Some("decay".into()), ..Default::default() },
        ];
        for c in cases {
            assert!(matches!(c.resolve(Command::FreeEnergy), Err(CliError::Config(_))));
        }
        let c = RunConfig { beta_list: Some(vec![ExtendedBeta::Finite(1.0)]), ..Default::default() };
        assert!(c.resolve(Command::LimitBeta).is_err());
        let c = RunConfig { d: Some(3), n: Some(4000), samples: Some(100_000), ..Default::default() };
        assert!(matches!(c.resolve(Command::FreeEnergy), Err(CliError::Cap(_))));
    }
}
