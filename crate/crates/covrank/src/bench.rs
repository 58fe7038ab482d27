//! Scenario runner: repeated simulated datasets through the stepwise
//! procedure, aggregated into a frequency table of selected ranks.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bootstrap::{BootstrapConfig, MRuleScale};
use crate::error::{Error, Result};
use crate::fit::FitOptions;
use crate::rank::{choose_d, sequential_rank_test};
use crate::seedstream::{self, tag};
use crate::sim::{generate_model, ModelSpec, NoiseSpec};

/// A fully resolved benchmark scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub model: ModelSpec,
    pub n: usize,
    pub grid_len: usize,
    pub reps: usize,
    pub alpha: f64,
    pub bootstrap: BootstrapConfig,
    pub master_seed: u64,
}

impl ScenarioConfig {
    fn validate(&self) -> Result<()> {
        if self.reps < 1 {
            return Err(Error::Invalid("need at least one repetition".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Invalid(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        Ok(())
    }
}

/// What one repetition produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RepOutcome {
    Selected { r_hat: usize },
    /// Every rank up to `d` was rejected.
    GlobalNullRejected,
    Failed { message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepRecord {
    pub rep: usize,
    pub data_seed: u64,
    pub outcome: RepOutcome,
}

/// Aggregated scenario result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub config: ScenarioConfig,
    pub records: Vec<RepRecord>,
}

impl ScenarioResult {
    /// Number of repetitions that selected exactly `r`.
    pub fn count_selected(&self, r: usize) -> usize {
        self.records
            .iter()
            .filter(|rec| matches!(rec.outcome, RepOutcome::Selected { r_hat } if r_hat == r))
            .count()
    }

    /// Number of repetitions with `r_hat >= r`, counting a global-null
    /// rejection (rank beyond `d`) as well.
    pub fn count_at_least(&self, r: usize) -> usize {
        self.records
            .iter()
            .filter(|rec| match rec.outcome {
                RepOutcome::Selected { r_hat } => r_hat >= r,
                RepOutcome::GlobalNullRejected => true,
                RepOutcome::Failed { .. } => false,
            })
            .count()
    }

    pub fn count_failed(&self) -> usize {
        self.records
            .iter()
            .filter(|rec| matches!(rec.outcome, RepOutcome::Failed { .. }))
            .count()
    }

    /// Frequency table rows: `("1", c_1) .. ("d", c_d), (">=d+1", c), ("failed", c)`.
    pub fn table(&self) -> Vec<(String, usize)> {
        let d = self.config.bootstrap.d;
        let mut rows: Vec<(String, usize)> = (1..=d)
            .map(|r| (r.to_string(), self.count_selected(r)))
            .collect();
        let beyond = self
            .records
            .iter()
            .filter(|rec| matches!(rec.outcome, RepOutcome::GlobalNullRejected))
            .count();
        rows.push((format!(">={}", d + 1), beyond));
        rows.push(("failed".into(), self.count_failed()));
        rows
    }

    /// The frequency table as CSV with a `rank,count` header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("rank,count\n");
        for (label, count) in self.table() {
            out.push_str(&format!("{label},{count}\n"));
        }
        out
    }
}

/// Run every repetition of a scenario. Repetitions are independent and run
/// in parallel; a failed repetition is recorded, not dropped.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioResult> {
    cfg.validate()?;
    let records: Vec<RepRecord> = (0..cfg.reps)
        .into_par_iter()
        .map(|rep| {
            let data_seed = seedstream::mix(cfg.master_seed, &[tag::BENCH_REP, rep as u64, 0]);
            let boot_seed = seedstream::mix(cfg.master_seed, &[tag::BENCH_REP, rep as u64, 1]);
            let outcome = (|| -> Result<RepOutcome> {
                let (sample, _) = generate_model(&cfg.model, cfg.n, cfg.grid_len, data_seed)?;
                let mut bcfg = cfg.bootstrap.clone();
                bcfg.seed = boot_seed;
                bcfg.fit.seed = boot_seed;
                let report = sequential_rank_test(&sample, cfg.alpha, &bcfg)?;
                Ok(match report.r_hat {
                    Some(r_hat) => RepOutcome::Selected { r_hat },
                    None => RepOutcome::GlobalNullRejected,
                })
            })()
            .unwrap_or_else(|e| RepOutcome::Failed {
                message: e.to_string(),
            });
            RepRecord {
                rep,
                data_seed,
                outcome,
            }
        })
        .collect();
    Ok(ScenarioResult {
        config: cfg.clone(),
        records,
    })
}

/// On-disk scenario description (TOML). Optional fields fall back to the
/// desk-scale defaults; `d` defaults to `floor((L - 1) / 2)`.
#[derive(Debug, Clone, Deserialize)]
pub struct ScenarioFile {
    /// Named model (`"A1"`) or inline [`ModelSpec`] table.
    pub model: ModelRef,
    pub n: usize,
    #[serde(alias = "L")]
    pub l: usize,
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub master_seed: u64,
    /// Optional noise override, e.g. `{ kind = "blocked" }`.
    #[serde(default)]
    pub noise: Option<NoiseSpec>,
    #[serde(default)]
    pub bootstrap: BootstrapFileConfig,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum ModelRef {
    Name(String),
    Inline(Box<ModelSpec>),
}

#[derive(Debug, Clone, Deserialize)]
pub struct BootstrapFileConfig {
    #[serde(default = "default_replicates", alias = "B")]
    pub replicates: usize,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_m_rule_scale")]
    pub m_rule_scale: MRuleScale,
    #[serde(default)]
    pub d: Option<usize>,
    #[serde(default)]
    pub homoskedastic: bool,
    #[serde(default = "default_ridge")]
    pub ridge: f64,
    #[serde(default = "default_center")]
    pub center: bool,
    #[serde(default)]
    pub fit: Option<FitOptions>,
}

impl Default for BootstrapFileConfig {
    fn default() -> Self {
        Self {
            replicates: default_replicates(),
            epsilon: default_epsilon(),
            m_rule_scale: default_m_rule_scale(),
            d: None,
            homoskedastic: false,
            ridge: default_ridge(),
            center: default_center(),
            fit: None,
        }
    }
}

fn default_reps() -> usize {
    50
}
fn default_alpha() -> f64 {
    0.05
}
fn default_replicates() -> usize {
    200
}
fn default_epsilon() -> f64 {
    1.0
}
fn default_ridge() -> f64 {
    1e-10
}
fn default_center() -> bool {
    true
}
fn default_m_rule_scale() -> MRuleScale {
    MRuleScale::OffdiagNormSq
}

impl ScenarioFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Data(format!("malformed scenario config: {e}")))
    }

    /// Resolve names and defaults into a runnable configuration. Returns the
    /// configuration and any warnings (e.g. a clamped `d`).
    pub fn resolve(self) -> Result<(ScenarioConfig, Vec<String>)> {
        let mut warnings = Vec::new();
        let mut model = match self.model {
            ModelRef::Name(name) => ModelSpec::named(&name)?,
            ModelRef::Inline(spec) => *spec,
        };
        if let Some(noise) = self.noise {
            model = model.with_noise(noise);
        }
        let (d, warn) = choose_d(self.l, None, self.bootstrap.d)?;
        if let Some(w) = warn {
            warnings.push(w);
        }
        let bootstrap = BootstrapConfig {
            replicates: self.bootstrap.replicates,
            epsilon: self.bootstrap.epsilon,
            m_rule_scale: self.bootstrap.m_rule_scale,
            d,
            homoskedastic: self.bootstrap.homoskedastic,
            ridge: self.bootstrap.ridge,
            center: self.bootstrap.center,
            seed: self.master_seed,
            fit: self
                .bootstrap
                .fit
                .unwrap_or_else(|| FitOptions::default().with_seed(self.master_seed)),
        };
        Ok((
            ScenarioConfig {
                model,
                n: self.n,
                grid_len: self.l,
                reps: self.reps,
                alpha: self.alpha,
                bootstrap,
                master_seed: self.master_seed,
            },
            warnings,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_minimal_scenario() {
        let text = r#"
            model = "A1"
            n = 150
            L = 25
        "#;
        let (cfg, warnings) = ScenarioFile::parse(text).unwrap().resolve().unwrap();
        assert_eq!(cfg.model.name, "A1");
        assert_eq!(cfg.grid_len, 25);
        assert_eq!(cfg.reps, 50);
        assert_eq!(cfg.bootstrap.replicates, 200);
        assert_eq!(cfg.bootstrap.d, 12);
        assert!(warnings.is_empty());
    }

    #[test]
    fn parses_inline_custom_model_and_overrides() {
        let text = r#"
            n = 80
            L = 15
            reps = 3
            master_seed = 9
            noise = { kind = "blocked" }

            [model]
            name = "custom"
            mean = [0.0]
            scores = "gaussian"
            noise = { kind = "homoskedastic", sigma2 = 0.5 }

            [model.cov]
            kind = "finite"
            lambdas = [2.0, 1.0]

            [model.cov.basis]
            kind = "functions"
            functions = [{ kind = "const" }, { kind = "sin", k = 1 }]

            [bootstrap]
            B = 31
            d = 20
        "#;
        let (cfg, warnings) = ScenarioFile::parse(text).unwrap().resolve().unwrap();
        assert_eq!(cfg.model.name, "custom");
        // the blocked override replaces the model's own noise
        assert_eq!(cfg.model.noise, NoiseSpec::Blocked);
        assert_eq!(cfg.bootstrap.replicates, 31);
        // d = 20 exceeds (15 - 1) / 2 = 7 and is clamped with a warning
        assert_eq!(cfg.bootstrap.d, 7);
        assert_eq!(warnings.len(), 1);
    }

    #[test]
    fn small_noiseless_scenario_selects_true_rank() {
        let text = r#"
            model = "custom"
            n = 60
            L = 9
            reps = 3
            master_seed = 4

            [model]
            name = "noiseless-rank-2"
            mean = [0.0]
            scores = "gaussian"
            noise = { kind = "homoskedastic", sigma2 = 0.0 }

            [model.cov]
            kind = "finite"
            lambdas = [2.0, 1.0]

            [model.cov.basis]
            kind = "functions"
            functions = [{ kind = "const" }, { kind = "sin", k = 1 }]

            [bootstrap]
            B = 19
        "#;
        // `model` table overrides the string form; keep only the table
        let text = text.replacen("model = \"custom\"\n", "", 1);
        let (cfg, _) = ScenarioFile::parse(&text).unwrap().resolve().unwrap();
        let result = run_scenario(&cfg).unwrap();
        assert_eq!(result.count_failed(), 0);
        assert_eq!(result.count_selected(2), 3, "table: {:?}", result.table());
        let csv = result.to_csv();
        assert!(csv.starts_with("rank,count\n"));
        assert!(csv.contains("\n2,3\n"));
    }

    #[test]
    fn scenario_tables_are_reproducible() {
        let text = r#"
            model = "A1"
            n = 40
            L = 9
            reps = 2
            master_seed = 11
            [bootstrap]
            B = 9
        "#;
        let (cfg, _) = ScenarioFile::parse(text).unwrap().resolve().unwrap();
        let a = run_scenario(&cfg).unwrap();
        let b = run_scenario(&cfg).unwrap();
        assert_eq!(a.records, b.records);
    }
}
