//! The stepwise rank-selection procedure.
//!
//! Ranks are tested in order `q = 1, 2, ...` and the scan stops at the first
//! acceptance: `r_hat = min{q : p_q > alpha}`. Because at most one of the
//! nested hypotheses is true, this controls the family-wise error rate, and
//! in particular bounds the probability of over-estimating the rank by
//! `alpha`. If every `q <= d` is rejected, the global hypothesis
//! `rank <= d` is rejected and no rank is reported.

use serde::{Deserialize, Serialize};

use crate::bootstrap::{bootstrap_pvalue_with_scree, BootstrapConfig};
use crate::error::{Error, Result};
use crate::fit::{scree_sequence, ScreeRow};
use crate::linalg::SampleMatrix;
use crate::objective::assumption_e_check;

/// Outcome of one rank in the stepwise scan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerRankRecord {
    pub q: usize,
    /// Statistic `T_q` (available for all ranks up to `d`).
    pub statistic: f64,
    /// Bootstrap p-value, present only for tested ranks.
    pub p_value: Option<f64>,
    /// Whether the stepwise scan reached this rank.
    pub tested: bool,
}

/// Full report of the stepwise procedure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankReport {
    pub per_q: Vec<PerRankRecord>,
    /// Selected rank: the smallest tested `q` with `p_q > alpha`; absent when
    /// every rank up to `d` was rejected.
    pub r_hat: Option<usize>,
    /// True iff all `d` local hypotheses were rejected.
    pub global_null_rejected: bool,
    pub alpha: f64,
    pub d: usize,
    /// The off-diagonal scree sequence `(q, T_q, T_q - T_(q-1))`.
    pub scree: Vec<ScreeRow>,
    /// `T_0`, the squared off-diagonal norm of the empirical covariance.
    pub t0: f64,
    /// Exact configuration used.
    pub config: BootstrapConfig,
    pub warnings: Vec<String>,
}

/// The recommended hypothesis boundary: `floor((L - 1) / 2)`, optionally
/// overridden by the caller (clamped back with a warning when too large).
/// The scree sequence, when available, is the tool for picking a smaller
/// boundary by eye; the automated rule ignores it.
pub fn choose_d(
    grid_len: usize,
    _scree: Option<&[ScreeRow]>,
    override_d: Option<usize>,
) -> Result<(usize, Option<String>)> {
    if grid_len < 3 {
        return Err(Error::Invalid(format!(
            "need a grid of at least 3 points, got {grid_len}"
        )));
    }
    let bound = (grid_len - 1) / 2;
    match override_d {
        None => Ok((bound, None)),
        Some(d) if d == 0 => Err(Error::Invalid("d must be at least 1".into())),
        Some(d) if d <= bound => Ok((d, None)),
        Some(d) => Ok((
            bound,
            Some(format!(
                "requested d = {d} exceeds (L - 1) / 2 = {bound}; clamped to {bound}"
            )),
        )),
    }
}

/// Run the stepwise procedure at level `alpha`.
pub fn sequential_rank_test(
    w: &SampleMatrix,
    alpha: f64,
    cfg: &BootstrapConfig,
) -> Result<RankReport> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Invalid(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let d = cfg.d;
    if d < 1 || d > w.grid_len() {
        return Err(Error::Invalid(format!(
            "hypothesis boundary d = {d} must lie in 1..={}",
            w.grid_len()
        )));
    }

    let mut warnings = Vec::new();
    let recommended = (w.grid_len() - 1) / 2;
    if d > recommended {
        warnings.push(format!(
            "d = {d} exceeds the recommended bound (L - 1) / 2 = {recommended}"
        ));
    }

    let k_hat = w.covariance(cfg.center)?;
    let scree = scree_sequence(&k_hat, d, &cfg.fit)?;

    let mut per_q: Vec<PerRankRecord> = scree
        .rows
        .iter()
        .map(|row| PerRankRecord {
            q: row.q,
            statistic: row.statistic,
            p_value: None,
            tested: false,
        })
        .collect();

    let mut r_hat = None;
    for q in 1..=d {
        let support = assumption_e_check(&k_hat, q, None)?;
        if !support.ok {
            warnings.push(format!(
                "leading eigenvector support check failed at q = {q} \
                 ({} near-zero entries); the test still runs",
                support.offending.len()
            ));
        }
        let outcome = bootstrap_pvalue_with_scree(w, q, cfg, &k_hat, &scree)?;
        per_q[q - 1].p_value = Some(outcome.p_value);
        per_q[q - 1].tested = true;
        if outcome.p_value > alpha {
            r_hat = Some(q);
            break;
        }
    }

    Ok(RankReport {
        per_q,
        r_hat,
        global_null_rejected: r_hat.is_none(),
        alpha,
        d,
        scree: scree.rows.clone(),
        t0: scree.t0,
        config: cfg.clone(),
        warnings,
    })
}
