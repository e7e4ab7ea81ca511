//! JSON persistence for fitted models.
//!
//! A classical document stores the grid, the substep matrix, k, the table
//! mode, the bin edges and the initial law; the integrated-variance table is
//! rebuilt on load and the stored emission rows are checked against it. A
//! QHMM document stores the ansatz and its angles (when there is one), the
//! Kraus operators and the initial state. Floats round-trip exactly, so a
//! reloaded model reproduces every likelihood bit for bit.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::chmm::{ClassicalHmm, TableMode};
use crate::error::{Error, Result};
use crate::estimate::{FittedModel, ModelKind};
use crate::qhmm::{AnsatzSpec, ComplexMatrix, DensityMatrix, QhmmModel};
use crate::volgrid::{ObservationScheme, SpotGrid, TransitionMatrix};

/// Current document version.
pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Largest entrywise difference tolerated between stored and rebuilt
/// derived quantities (emission rows, Kraus operators).
const AUDIT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub version: u32,
    pub model: ModelDoc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum ModelDoc {
    Classical(ClassicalDoc),
    Qhmm(QhmmDoc),
}

/// Parameter vector a classical model was built from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamRecord {
    pub kind: ModelKind,
    pub theta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassicalDoc {
    pub grid: Vec<f64>,
    /// Substep transition matrix, row = from-state.
    pub a_hf: Vec<Vec<f64>>,
    pub dt: f64,
    pub k: usize,
    pub mode: TableMode,
    pub edges: Vec<f64>,
    pub x0: Vec<f64>,
    /// Emission rows, kept for inspection and checked on load.
    pub emission: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<ParamRecord>,
}

/// Complex matrix as rows of `[re, im]` pairs.
pub type ComplexRows = Vec<Vec<[f64; 2]>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QhmmDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<AnsatzSpec>,
    #[serde(default)]
    pub theta: Vec<f64>,
    #[serde(default)]
    pub theta_init: Vec<f64>,
    pub kraus: Vec<ComplexRows>,
    pub rho0: ComplexRows,
}

fn to_rows(m: &ComplexMatrix) -> ComplexRows {
    m.row_iter().map(|r| r.iter().map(|z| [z.re, z.im]).collect()).collect()
}

fn from_rows(rows: &ComplexRows, what: &str) -> Result<ComplexMatrix> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if n == 0 || rows.iter().any(|r| r.len() != m) {
        return Err(Error::Dimension(format!("{what}: ragged or empty matrix")));
    }
    Ok(ComplexMatrix::from_fn(n, m, |i, j| Complex64::new(rows[i][j][0], rows[i][j][1])))
}

fn max_diff<'a>(a: impl Iterator<Item = &'a f64>, b: impl Iterator<Item = &'a f64>) -> f64 {
    a.zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

impl ClassicalDoc {
    pub fn from_model(hmm: &ClassicalHmm, params: Option<ParamRecord>) -> Self {
        Self {
            grid: hmm.grid().values().to_vec(),
            a_hf: hmm.a_hf().to_rows(),
            dt: hmm.a_hf().dt(),
            k: hmm.k(),
            mode: hmm.table().mode(),
            edges: hmm.scheme().edges().to_vec(),
            x0: hmm.x0().to_vec(),
            emission: hmm.emission().to_rows(),
            params,
        }
    }

    pub fn to_model(&self) -> Result<ClassicalHmm> {
        let grid = SpotGrid::new(self.grid.clone())?;
        let a_hf = TransitionMatrix::from_rows(&self.a_hf, self.dt)?;
        let scheme = ObservationScheme::from_edges(self.edges.clone())?;
        let hmm = ClassicalHmm::new(grid, a_hf, self.k, self.mode, scheme, Some(self.x0.clone()))?;
        let rebuilt = hmm.emission().to_rows();
        if rebuilt.len() != self.emission.len() || rebuilt.iter().zip(&self.emission).any(|(a, b)| a.len() != b.len()) {
            return Err(Error::Dimension("stored emission matrix has the wrong shape".into()));
        }
        let d = max_diff(rebuilt.iter().flatten(), self.emission.iter().flatten());
        if !(d <= AUDIT_TOL) {
            return Err(Error::Invalid(format!("stored emission rows differ from the rebuilt ones by {d:e}")));
        }
        Ok(hmm)
    }
}

impl QhmmDoc {
    pub fn from_model(m: &QhmmModel) -> Self {
        Self {
            spec: m.spec().copied(),
            theta: m.theta().to_vec(),
            theta_init: m.theta_init().to_vec(),
            kraus: m.kraus().iter().map(to_rows).collect(),
            rho0: to_rows(m.rho0().matrix()),
        }
    }

    /// Rebuilds from the ansatz when one is stored (checking the Kraus
    /// operators agree), otherwise from the Kraus operators and ρ₀.
    pub fn to_model(&self) -> Result<QhmmModel> {
        let kraus = self
            .kraus
            .iter()
            .enumerate()
            .map(|(i, k)| from_rows(k, &format!("kraus[{i}]")))
            .collect::<Result<Vec<_>>>()?;
        match self.spec {
            Some(spec) => {
                let m = QhmmModel::from_ansatz(spec, &self.theta, &self.theta_init)?;
                if m.kraus().len() != kraus.len() || m.kraus().iter().zip(&kraus).any(|(a, b)| a.shape() != b.shape()) {
                    return Err(Error::Dimension("stored Kraus operators do not match the ansatz".into()));
                }
                let d = m
                    .kraus()
                    .iter()
                    .zip(&kraus)
                    .flat_map(|(a, b)| a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm()))
                    .fold(0.0, f64::max);
                if !(d <= AUDIT_TOL) {
                    return Err(Error::Invalid(format!("stored Kraus operators differ from the ansatz by {d:e}")));
                }
                Ok(m)
            }
            None => {
                let rho0 = DensityMatrix::new(from_rows(&self.rho0, "rho0")?)?;
                QhmmModel::from_kraus(kraus, rho0)
            }
        }
    }
}

impl ModelDoc {
    pub fn from_model(model: &FittedModel, params: Option<ParamRecord>) -> Self {
        match model {
            FittedModel::Classical(h) => ModelDoc::Classical(ClassicalDoc::from_model(h, params)),
            FittedModel::Qhmm(q) => ModelDoc::Qhmm(QhmmDoc::from_model(q)),
        }
    }

    pub fn to_model(&self) -> Result<FittedModel> {
        match self {
            ModelDoc::Classical(d) => d.to_model().map(FittedModel::Classical),
            ModelDoc::Qhmm(d) => d.to_model().map(FittedModel::Qhmm),
        }
    }
}

/// Pretty-printed model document.
pub fn model_to_json(model: &FittedModel, params: Option<ParamRecord>) -> String {
    let file = ModelFile { version: MODEL_FORMAT_VERSION, model: ModelDoc::from_model(model, params) };
    serde_json::to_string_pretty(&file).expect("model documents contain only finite numbers")
}

/// Parses and rebuilds a model document. Syntax errors carry line and column.
pub fn model_from_json(text: &str) -> Result<FittedModel> {
    let file: ModelFile = serde_json::from_str(text).map_err(|e| Error::Invalid(format!("model file: {e}")))?;
    if file.version != MODEL_FORMAT_VERSION {
        return Err(Error::Invalid(format!(
            "model file version {} is not supported (expected {MODEL_FORMAT_VERSION})",
            file.version
        )));
    }
    file.model.to_model()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SequenceModel;
    use crate::qhmm::{qhmm_simulate, Entanglement};
    use crate::seed::rng_from_seed;
    use crate::volgrid::{build_observation_scheme, CirParams};

    fn cir_model() -> ClassicalHmm {
        let p = CirParams::new(2.2, 0.077, 1.1).unwrap();
        let scheme = build_observation_scheme(4, 4.0 * 0.077f64.sqrt()).unwrap();
        ClassicalHmm::cir(&p, 6, 3, scheme, TableMode::Multiset).unwrap()
    }

    #[test]
    fn classical_round_trip_is_exact() {
        let hmm = cir_model();
        let obs = crate::chmm::simulate(&hmm, 300, 5).symbols;
        let params = ParamRecord { kind: ModelKind::Cir, theta: vec![2.2, 0.077, 1.1] };
        let model = FittedModel::Classical(hmm);
        let text = model_to_json(&model, Some(params.clone()));
        let back = model_from_json(&text).unwrap();
        assert_eq!(back, model);
        assert_eq!(back.log_prob(&obs).unwrap(), model.log_prob(&obs).unwrap());
        let file: ModelFile = serde_json::from_str(&text).unwrap();
        match file.model {
            ModelDoc::Classical(d) => assert_eq!(d.params, Some(params)),
            _ => panic!("wrong document type"),
        }
    }

    #[test]
    fn qhmm_round_trip_is_exact() {
        let spec = AnsatzSpec::new(1, 2, 2, Entanglement::Linear).unwrap();
        let mut rng = rng_from_seed(2);
        let q = crate::qhmm::tests::random_model(spec, &mut rng);
        let obs = qhmm_simulate(&q, 200, 8);
        let model = FittedModel::Qhmm(q);
        let back = model_from_json(&model_to_json(&model, None)).unwrap();
        assert_eq!(back, model);
        assert_eq!(back.log_prob(&obs).unwrap(), model.log_prob(&obs).unwrap());

        let h = FittedModel::Qhmm(crate::qhmm::tests::hadamard_model());
        let back = model_from_json(&model_to_json(&h, None)).unwrap();
        assert_eq!(back.log_prob(&[0, 1, 1]).unwrap(), h.log_prob(&[0, 1, 1]).unwrap());
    }

    #[test]
    fn tampered_documents_rejected() {
        let model = FittedModel::Classical(cir_model());
        let text = model_to_json(&model, None);
        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v["model"]["emission"][0][0] = serde_json::json!(0.5);
        assert!(model_from_json(&v.to_string()).is_err());

        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v["version"] = serde_json::json!(99);
        assert!(model_from_json(&v.to_string()).is_err());

        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v["model"]["surprise"] = serde_json::json!(1);
        assert!(model_from_json(&v.to_string()).is_err());

        let err = model_from_json("{\n  \"version\": 1,\n  \"model\": [\n").unwrap_err();
        assert!(err.to_string().contains("line"), "{err}");
        assert!(err.is_validation());
    }
}
