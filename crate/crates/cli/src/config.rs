//! Run configuration (TOML). Every section is optional at parse time; each
//! command checks for the sections it needs before doing any work.

use serde::Deserialize;

use qvol::chmm::{ClassicalHmm, TableMode};
use qvol::estimate::{ClassicalKind, ClassicalSpec, FitConfig, FitSpec, ModelKind, PenaltyConstants};
use qvol::qhmm::{AnsatzSpec, Entanglement};
use qvol::volgrid::{build_observation_scheme, cir_spot_grid, CirParams, ObservationScheme};

use crate::CliError;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dgp: Option<DgpConfig>,
    pub experiment: Option<ExperimentConfig>,
    pub fit: Option<CandidateConfig>,
    pub optimizer: Option<FitConfig>,
    pub llr: Option<LlrConfig>,
    pub bounds: Option<BoundsConfig>,
    pub hankel: Option<HankelConfig>,
    pub markov: Option<MarkovConfig>,
}

/// CIR classical data-generating process.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DgpConfig {
    pub alpha: f64,
    pub beta: f64,
    pub sigma: f64,
    pub n_l: usize,
    pub k: usize,
    pub n_o: usize,
    /// Half-width of the symmetric return bins; 4√β when absent.
    pub half_width: Option<f64>,
    #[serde(default)]
    pub mode: TableMode,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_trials")]
    pub trials: usize,
    pub t: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_trials() -> usize {
    1
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataColumn {
    #[default]
    Symbols,
    Returns,
}

/// A candidate model class. For `qhmm`, `n_l` is the latent dimension
/// n_L^q and must be a power of two, as must the DGP's n_O.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CandidateConfig {
    pub kind: ModelKind,
    /// Defaults to the DGP's n_L for classical kinds and 2 for qhmm.
    pub n_l: Option<usize>,
    /// Substeps; defaults to the DGP's k.
    pub k: Option<usize>,
    pub mode: Option<TableMode>,
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default = "default_entanglement")]
    pub entanglement: Entanglement,
    pub start: Option<Vec<f64>>,
    /// Which column of the data file a classical fit reads.
    #[serde(default)]
    pub data: DataColumn,
}

fn default_reps() -> usize {
    3
}

fn default_entanglement() -> Entanglement {
    Entanglement::Full
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LlrConfig {
    pub model_i: CandidateConfig,
    pub model_j: CandidateConfig,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsConfig {
    pub kl_inf_estimate: Option<f64>,
    pub t: Option<usize>,
    pub n_l: Option<usize>,
    pub m_classical: Option<usize>,
    pub m_quantum: Option<usize>,
    /// Ansatz depth used for the default m_quantum.
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default)]
    pub constants: PenaltyConstants,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HankelConfig {
    pub depth: usize,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarkovConfig {
    pub prefix_a: Option<Vec<usize>>,
    pub prefix_b: Option<Vec<usize>>,
    pub horizon: Option<usize>,
    /// Random ansatz model used when no model file is given.
    pub random: Option<AnsatzSpec>,
}

impl RunConfig {
    pub fn parse(text: &str, origin: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::validation(format!("{origin}: {e}")))
    }

    pub fn dgp(&self) -> Result<&DgpConfig, CliError> {
        self.dgp.as_ref().ok_or_else(|| missing("dgp"))
    }

    pub fn experiment(&self) -> Result<&ExperimentConfig, CliError> {
        self.experiment.as_ref().ok_or_else(|| missing("experiment"))
    }

    pub fn optimizer(&self) -> FitConfig {
        self.optimizer.clone().unwrap_or_default()
    }
}

fn missing(section: &str) -> CliError {
    CliError::validation(format!("config is missing the [{section}] section"))
}

impl DgpConfig {
    pub fn params(&self) -> Result<CirParams, CliError> {
        Ok(CirParams::new(self.alpha, self.beta, self.sigma)?)
    }

    pub fn scheme(&self) -> Result<ObservationScheme, CliError> {
        let hw = self.half_width.unwrap_or(4.0 * self.beta.max(0.0).sqrt());
        Ok(build_observation_scheme(self.n_o, hw)?)
    }

    pub fn model(&self) -> Result<ClassicalHmm, CliError> {
        Ok(ClassicalHmm::cir(&self.params()?, self.n_l, self.k, self.scheme()?, self.mode)?)
    }
}

impl CandidateConfig {
    /// Resolves the candidate against the DGP. Non-parametric candidates
    /// live on the ergodic-quantile grid of the DGP's CIR parameters.
    pub fn spec(&self, dgp: &DgpConfig) -> Result<FitSpec, CliError> {
        let classical = |kind| -> Result<FitSpec, CliError> {
            Ok(FitSpec::Classical(ClassicalSpec {
                kind,
                k: self.k.unwrap_or(dgp.k),
                mode: self.mode.unwrap_or(dgp.mode),
                scheme: dgp.scheme()?,
                start: self.start.clone(),
            }))
        };
        match self.kind {
            ModelKind::Cir => classical(ClassicalKind::Cir { n_l: self.n_l.unwrap_or(dgp.n_l) }),
            ModelKind::Nonparam => {
                let grid = cir_spot_grid(&dgp.params()?, self.n_l.unwrap_or(dgp.n_l))?;
                classical(ClassicalKind::Nonparam { grid })
            }
            ModelKind::Qhmm => {
                if self.data == DataColumn::Returns {
                    return Err(CliError::validation("qhmm candidates fit symbols only"));
                }
                if self.start.is_some() {
                    return Err(CliError::validation("qhmm candidates use random starts; remove `start`"));
                }
                let spec = AnsatzSpec::for_sizes(self.n_l.unwrap_or(2), dgp.n_o, self.reps, self.entanglement)?;
                Ok(FitSpec::Qhmm(spec))
            }
        }
    }
}
