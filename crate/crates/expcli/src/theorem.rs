//! Exact-iteration suite for low-rank updates of linear least squares.
//!
//! For each instance the exact merge/refactor iteration is run and compared
//! with the predicted step count `⌈rank(X W₀ − Π_X Y) / R⌉`, the best single
//! rank-`R` update is compared with its analytic lower bound, and the exact
//! iterates are compared with their non-recursive form.

use rosa_core::oracle::{
    add_orthogonal_noise, closed_form_iterate, lora_error_lower_bound, realizable_instance, rosa_exact_iterate,
    rrr_optimum, RegressionProblem,
};
use serde::{Deserialize, Serialize};

use crate::error::{ExpError, Result};

/// Relative excess error that counts as converged.
pub const CONVERGED_TOL: f64 = 1e-12;
/// Relative excess error that must remain one step before convergence.
pub const NOT_YET_TOL: f64 = 1e-6;
pub const BOUND_TOL: f64 = 1e-8;
pub const PLATEAU_TOL: f64 = 1e-9;
pub const CLOSED_FORM_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TheoremSuiteConfig {
    pub n: usize,
    pub d: usize,
    pub p: usize,
    pub residual_rank: usize,
    pub ranks: Vec<usize>,
    pub seeds: Vec<u64>,
    /// Scale of the noise added outside range(X) for the non-realizable
    /// rows; zero disables them.
    pub noise_scale: f64,
}

impl Default for TheoremSuiteConfig {
    fn default() -> Self {
        Self {
            n: 40,
            d: 16,
            p: 8,
            residual_rank: 6,
            ranks: vec![1, 2, 3, 6],
            seeds: vec![0],
            noise_scale: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TheoremRow {
    pub seed: u64,
    pub rank: usize,
    pub realizable: bool,
    pub t_predicted: usize,
    /// First step with relative excess error ≤ [`CONVERGED_TOL`].
    pub observed_step: Option<usize>,
    /// Relative excess error at `t_predicted`.
    pub excess_at_t: f64,
    /// Relative excess error at `t_predicted − 1`; `None` when `t_predicted = 0`.
    pub excess_before_t: Option<f64>,
    pub irreducible_error: f64,
    /// Error after the predicted number of steps.
    pub error_at_t: f64,
    pub lora_lower_bound: f64,
    /// Excess error of the single best rank-`R` update.
    pub best_update_excess: f64,
    /// Largest relative gap between exact and closed-form iterates.
    pub closed_form_gap: f64,
    pub steps_ok: bool,
    pub bound_ok: bool,
    pub closed_form_ok: bool,
    /// Non-realizable rows: the error at `t_predicted` equals the irreducible error.
    pub plateau_ok: bool,
}

impl TheoremRow {
    pub fn passed(&self) -> bool {
        self.steps_ok && self.bound_ok && self.closed_form_ok && self.plateau_ok
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TheoremReport {
    pub config: TheoremSuiteConfig,
    pub rows: Vec<TheoremRow>,
}

impl TheoremReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(TheoremRow::passed)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "seed,rank,realizable,t_predicted,observed_step,excess_at_t,excess_before_t,irreducible_error,\
             lora_lower_bound,best_update_excess,closed_form_gap,passed\n",
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{:e},{},{:e},{:e},{:e},{:e},{}\n",
                r.seed,
                r.rank,
                r.realizable,
                r.t_predicted,
                r.observed_step.map_or(String::new(), |s| s.to_string()),
                r.excess_at_t,
                r.excess_before_t.map_or(String::new(), |e| format!("{e:e}")),
                r.irreducible_error,
                r.lora_lower_bound,
                r.best_update_excess,
                r.closed_form_gap,
                r.passed()
            ));
        }
        out
    }
}

fn evaluate(prob: &RegressionProblem, seed: u64, rank: usize, realizable: bool) -> Result<TheoremRow> {
    let probe = rosa_exact_iterate(prob, rank, 0)?;
    let t_pred = probe.t_predicted;
    let trace = rosa_exact_iterate(prob, rank, t_pred + 1)?;
    let observed_step = trace.converged_at(CONVERGED_TOL);
    let excess_at_t = trace.relative_excess(t_pred);
    let excess_before_t = t_pred.checked_sub(1).map(|t| trace.relative_excess(t));
    let energy = trace.target_energy.max(f64::MIN_POSITIVE);

    let irreducible = prob.irreducible_error();
    let bound = lora_error_lower_bound(prob, rank)?;
    let best = prob.w0().add(&rrr_optimum(prob, rank)?.product())?;
    let best_update_excess = prob.squared_error(&best)? - irreducible;
    let bound_ok = (best_update_excess - bound).abs() <= BOUND_TOL * bound.max(1.0);

    let mut closed_form_gap = 0.0f64;
    for (t, step) in trace.steps.iter().enumerate() {
        let closed = closed_form_iterate(prob, rank, t)?;
        closed_form_gap = closed_form_gap.max(step.weight.relative_error(&closed)?);
    }

    let error_at_t = trace.steps[t_pred].error;
    let steps_ok = observed_step == Some(t_pred)
        && excess_at_t <= CONVERGED_TOL
        && excess_before_t.is_none_or(|e| e > NOT_YET_TOL);
    let plateau_ok = realizable || (error_at_t - irreducible).abs() <= PLATEAU_TOL * irreducible.max(energy * 1e-3);

    Ok(TheoremRow {
        seed,
        rank,
        realizable,
        t_predicted: t_pred,
        observed_step,
        excess_at_t,
        excess_before_t,
        irreducible_error: irreducible,
        error_at_t,
        lora_lower_bound: bound,
        best_update_excess,
        closed_form_gap,
        steps_ok,
        bound_ok,
        closed_form_ok: closed_form_gap <= CLOSED_FORM_TOL,
        plateau_ok,
    })
}

pub fn run_theorem_suite(config: &TheoremSuiteConfig) -> Result<TheoremReport> {
    if config.ranks.is_empty() || config.seeds.is_empty() {
        return Err(ExpError::config("ranks", "need at least one rank and one seed"));
    }
    if !(config.noise_scale >= 0.0 && config.noise_scale.is_finite()) {
        return Err(ExpError::config("noise_scale", "must be finite and >= 0"));
    }
    let mut rows = Vec::new();
    for &seed in &config.seeds {
        let prob = realizable_instance(config.n, config.d, config.p, config.residual_rank, seed)?;
        let noisy = if config.noise_scale > 0.0 {
            Some(add_orthogonal_noise(&prob, config.noise_scale, seed.wrapping_add(1 << 32))?)
        } else {
            None
        };
        for &rank in &config.ranks {
            rows.push(evaluate(&prob, seed, rank, true)?);
            if let Some(noisy) = &noisy {
                rows.push(evaluate(noisy, seed, rank, false)?);
            }
        }
    }
    Ok(TheoremReport {
        config: config.clone(),
        rows,
    })
}
