//! Versioned JSON run configuration.

use std::path::Path;

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::certify::TailSign;
use crate::error::{Result, RfdError};
use crate::firlin::{BoolMat, SparsityMask, TapConvention};
use crate::linalg::{Mat, Vector};
use crate::penalties::PenaltySpec;
use crate::plantmaps::{GeneralizedPlant, Setting};
use crate::systems::{build_chain10, build_network11};

pub const CONFIG_VERSION: u32 = 1;

fn config_err<T>(path: impl Into<String>, msg: impl Into<String>) -> Result<T> {
    Err(RfdError::Config {
        path: path.into(),
        msg: msg.into(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub plant: PlantSource,
    pub problem: ProblemConfig,
    pub penalty: PenaltyConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subspace: Option<SubspaceConfig>,
    #[serde(default)]
    pub outputs: OutputConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub certification: Option<CertificationConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver: Option<SolverConfig>,
}

/// Built-in plant, inline state-space matrices (row-major nested arrays) or a JSON file of them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(untagged)]
pub enum PlantSource {
    Builtin(BuiltinPlant),
    Inline(InlinePlant),
    File(FilePlant),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct BuiltinPlant {
    pub builtin: BuiltinName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct InlinePlant {
    pub matrices: PlantMatrices,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct FilePlant {
    /// Path to a JSON document holding `PlantMatrices`.
    pub file: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "lowercase")]
pub enum BuiltinName {
    Chain10,
    Network11,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct PlantMatrices {
    pub a: Vec<Vec<f64>>,
    pub b1: Vec<Vec<f64>>,
    pub b2: Vec<Vec<f64>>,
    pub c1: Vec<Vec<f64>>,
    pub c2: Vec<Vec<f64>>,
    pub d12: Vec<Vec<f64>>,
    pub d21: Vec<Vec<f64>>,
    pub rho_u: f64,
    pub rho_w: f64,
}

/// λ as a scalar or a grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(untagged)]
pub enum LambdaSpec {
    Scalar(f64),
    Grid(Vec<f64>),
}

impl LambdaSpec {
    /// Values sorted descending.
    pub fn grid(&self) -> Vec<f64> {
        let mut g = match self {
            LambdaSpec::Scalar(x) => vec![*x],
            LambdaSpec::Grid(v) => v.clone(),
        };
        g.sort_by(|a, b| b.total_cmp(a));
        g
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct Horizon {
    pub t: usize,
    pub v: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub setting: Setting,
    pub horizon_t: usize,
    pub order_v: usize,
    /// Overrides the plant-implied weight of `||U||²` in the regularized solve.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    /// Overrides the plant's control weight (rescaling `D12`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho_u: Option<f64>,
    pub lambda: LambdaSpec,
    #[serde(default)]
    pub tap_convention: TapConvention,
    /// Initial state for the basic LQR setting.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xi: Option<Vec<f64>>,
    /// Horizon and order of the debiasing solve.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval: Option<Horizon>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
pub enum PenaltyName {
    #[serde(rename = "act")]
    Act,
    #[serde(rename = "sns")]
    Sns,
    #[serde(rename = "act+sns")]
    ActSns,
    #[serde(rename = "comm")]
    Comm,
    #[serde(rename = "act+comm")]
    ActComm,
    #[serde(rename = "sns+comm")]
    SnsComm,
    #[serde(rename = "act+sns+comm")]
    ActSnsComm,
    #[serde(rename = "max(act,comm)")]
    MaxActComm,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct CommConfig {
    pub adjacency: Vec<Vec<bool>>,
    /// 1-based `[from, to]` node pairs.
    pub added_links: Vec<[usize; 2]>,
    #[serde(default = "yes")]
    pub bidirectional: bool,
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct PenaltyConfig {
    pub kind: PenaltyName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_a: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_s: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comm: Option<CommConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SubspaceConfig {
    /// No sparsity constraint.
    None,
    /// Base graph plus candidate links of the communication penalty.
    Comm,
    /// Explicit per-tap masks and tail.
    Mask {
        per_tap: Vec<Vec<Vec<bool>>>,
        tail: Vec<Vec<bool>>,
    },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Json,
    Csv,
    #[default]
    Both,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_dir")]
    pub dir: String,
    #[serde(default = "default_stem")]
    pub stem: String,
    #[serde(default)]
    pub format: OutputFormat,
}

fn default_dir() -> String {
    ".".into()
}

fn default_stem() -> String {
    "report".into()
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: default_dir(),
            stem: default_stem(),
            format: OutputFormat::Both,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct CertificationConfig {
    #[serde(default = "yes")]
    pub enabled: bool,
    /// 1-based architecture groups; defaults to the oracle's best support of size `s`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m_star: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_ref: Option<usize>,
    /// ρ used by the certificate (default 0).
    #[serde(default)]
    pub rho: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default)]
    pub tail_sign: TailSign,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iter: Option<usize>,
}

fn to_mat(rows: &[Vec<f64>], path: &str) -> Result<Mat> {
    let n = rows.len();
    let m = rows.first().map_or(0, |r| r.len());
    if let Some(i) = rows.iter().position(|r| r.len() != m) {
        return config_err(format!("{path}[{i}]"), format!("expected {m} columns"));
    }
    if let Some((i, j)) = rows
        .iter()
        .enumerate()
        .find_map(|(i, r)| r.iter().position(|x| !x.is_finite()).map(|j| (i, j)))
    {
        return config_err(format!("{path}[{i}][{j}]"), "not a finite number");
    }
    Ok(Mat::from_fn(n, m, |i, j| rows[i][j]))
}

fn to_bool_mat(rows: &[Vec<bool>], path: &str) -> Result<BoolMat> {
    let n = rows.len();
    let m = rows.first().map_or(0, |r| r.len());
    if let Some(i) = rows.iter().position(|r| r.len() != m) {
        return config_err(format!("{path}[{i}]"), format!("expected {m} columns"));
    }
    Ok(BoolMat::from_fn(n, m, |i, j| rows[i][j]))
}

/// Plant built from a config, with builtin graph data when present.
#[derive(Clone, Debug)]
pub struct ResolvedPlant {
    pub plant: GeneralizedPlant,
    /// Base communication graph and candidate links (0-based).
    pub graph: Option<(BoolMat, Vec<(usize, usize)>)>,
    pub design_space_count: Option<u64>,
    pub seed: Option<u64>,
}

impl ResolvedPlant {
    fn inline(m: &PlantMatrices, path: &str) -> Result<Self> {
        let plant = GeneralizedPlant::new(
            to_mat(&m.a, &format!("{path}.a"))?,
            to_mat(&m.b1, &format!("{path}.b1"))?,
            to_mat(&m.b2, &format!("{path}.b2"))?,
            to_mat(&m.c1, &format!("{path}.c1"))?,
            to_mat(&m.c2, &format!("{path}.c2"))?,
            to_mat(&m.d12, &format!("{path}.d12"))?,
            to_mat(&m.d21, &format!("{path}.d21"))?,
            m.rho_u,
            m.rho_w,
        )
        .map_err(|e| RfdError::Config {
            path: path.into(),
            msg: e.to_string(),
        })?;
        Ok(Self {
            plant,
            graph: None,
            design_space_count: None,
            seed: None,
        })
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig =
            serde_path_to_error::deserialize(de).map_err(|e| RfdError::Config {
                path: e.path().to_string(),
                msg: e.inner().to_string(),
            })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; a relative plant file is resolved against the config's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| RfdError::Config {
            path: path.display().to_string(),
            msg: e.to_string(),
        })?;
        let de = &mut serde_json::Deserializer::from_str(&text);
        let mut cfg: RunConfig =
            serde_path_to_error::deserialize(de).map_err(|e| RfdError::Config {
                path: e.path().to_string(),
                msg: e.inner().to_string(),
            })?;
        if let PlantSource::File(f) = &mut cfg.plant {
            let p = Path::new(&f.file);
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    f.file = dir.join(p).display().to_string();
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// JSON Schema of the config document.
    pub fn json_schema() -> String {
        serde_json::to_string_pretty(&schemars::schema_for!(RunConfig)).expect("schema serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return config_err(
                "version",
                format!(
                    "unsupported version {}, expected {CONFIG_VERSION}",
                    self.version
                ),
            );
        }
        let p = &self.problem;
        if p.horizon_t == 0 {
            return config_err("problem.horizon_t", "must be at least 1");
        }
        if p.order_v == 0 || p.order_v > p.horizon_t {
            return config_err("problem.order_v", "must satisfy 1 ≤ v ≤ t");
        }
        for (what, x) in [("problem.rho", p.rho), ("problem.rho_u", p.rho_u)] {
            if let Some(x) = x {
                if !(x >= 0.0 && x.is_finite()) {
                    return config_err(what, "must be a nonnegative number");
                }
            }
        }
        match &p.lambda {
            LambdaSpec::Scalar(x) if !(*x >= 0.0 && x.is_finite()) => {
                return config_err("problem.lambda", "must be a nonnegative number");
            }
            LambdaSpec::Grid(g) => {
                if g.is_empty() {
                    return config_err("problem.lambda", "grid is empty");
                }
                if let Some(i) = g.iter().position(|x| !(*x >= 0.0 && x.is_finite())) {
                    return config_err(
                        format!("problem.lambda[{i}]"),
                        "must be a nonnegative number",
                    );
                }
                let desc = g.windows(2).all(|w| w[0] > w[1]);
                let asc = g.windows(2).all(|w| w[0] < w[1]);
                if !(desc || asc) {
                    return config_err("problem.lambda", "grid must be strictly sorted");
                }
            }
            _ => {}
        }
        if let Some(e) = &p.eval {
            if e.t == 0 || e.v == 0 || e.v > e.t {
                return config_err("problem.eval", "must satisfy 1 ≤ v ≤ t");
            }
        }
        if p.setting == Setting::BasicLqr && p.xi.is_none() {
            return config_err("problem.xi", "basic LQR needs an initial state");
        }
        let pen = &self.penalty;
        if let Some(th) = pen.theta {
            if !(0.0..=1.0).contains(&th) {
                return config_err("penalty.theta", "must lie in [0, 1]");
            }
        }
        let joint = matches!(
            pen.kind,
            PenaltyName::ActComm
                | PenaltyName::SnsComm
                | PenaltyName::ActSnsComm
                | PenaltyName::MaxActComm
        );
        if joint && pen.theta.is_none() {
            return config_err("penalty.theta", "required for joint penalties");
        }
        match &self.plant {
            PlantSource::Builtin(b) if b.builtin == BuiltinName::Network11 && b.seed.is_none() => {
                return config_err("plant.seed", "network11 needs a seed");
            }
            PlantSource::File(f) if !Path::new(&f.file).is_file() => {
                return config_err("plant.file", format!("no such file: {}", f.file));
            }
            _ => {}
        }
        if let Some(c) = &self.certification {
            if let Some(m) = &c.m_star {
                if m.is_empty() || m.contains(&0) {
                    return config_err(
                        "certification.m_star",
                        "expected nonempty 1-based group indices",
                    );
                }
            }
            if !(c.rho >= 0.0) {
                return config_err("certification.rho", "must be nonnegative");
            }
        }
        if let Some(SubspaceConfig::Mask { per_tap, tail }) = &self.subspace {
            to_bool_mat(tail, "subspace.tail")?;
            for (k, m) in per_tap.iter().enumerate() {
                to_bool_mat(m, &format!("subspace.per_tap[{k}]"))?;
            }
        }
        Ok(())
    }

    /// Plant with overrides applied, plus builtin metadata.
    pub fn build_plant(&self) -> Result<ResolvedPlant> {
        let mut out = match &self.plant {
            PlantSource::Builtin(b) => match b.builtin {
                BuiltinName::Chain10 => ResolvedPlant {
                    plant: build_chain10(),
                    graph: None,
                    design_space_count: None,
                    seed: None,
                },
                BuiltinName::Network11 => {
                    let net = build_network11(b.seed.unwrap_or_default())?;
                    ResolvedPlant {
                        design_space_count: Some(net.design_space_count()),
                        seed: Some(net.seed),
                        graph: Some((net.adjacency, net.links)),
                        plant: net.plant,
                    }
                }
            },
            PlantSource::Inline(p) => ResolvedPlant::inline(&p.matrices, "plant.matrices")?,
            PlantSource::File(f) => {
                let text = std::fs::read_to_string(&f.file).map_err(|e| RfdError::Config {
                    path: "plant.file".into(),
                    msg: e.to_string(),
                })?;
                let de = &mut serde_json::Deserializer::from_str(&text);
                let m: PlantMatrices =
                    serde_path_to_error::deserialize(de).map_err(|e| RfdError::Config {
                        path: format!("plant.file:{}", e.path()),
                        msg: e.inner().to_string(),
                    })?;
                ResolvedPlant::inline(&m, "plant.file")?
            }
        };
        if let Some(r) = self.problem.rho_u {
            let plant = &mut out.plant;
            if plant.rho_u > 0.0 {
                plant.d12 *= (r / plant.rho_u).sqrt();
                plant.rho_u = r;
            } else if r != 0.0 {
                return config_err("problem.rho_u", "plant has no control weight to rescale");
            }
        }
        Ok(out)
    }

    pub fn xi(&self) -> Option<Vector> {
        self.problem
            .xi
            .as_ref()
            .map(|x| Vector::from_column_slice(x))
    }

    /// Penalty description with communication data resolved from the config or the builtin.
    pub fn penalty_spec(
        &self,
        graph: Option<&(BoolMat, Vec<(usize, usize)>)>,
    ) -> Result<PenaltySpec> {
        let pen = &self.penalty;
        let comm = || -> Result<PenaltySpec> {
            if let Some(c) = &pen.comm {
                let n = c.adjacency.len();
                for (i, l) in c.added_links.iter().enumerate() {
                    if l[0] == 0 || l[1] == 0 || l[0] > n || l[1] > n {
                        return config_err(
                            format!("penalty.comm.added_links[{i}]"),
                            "expected 1-based node indices",
                        );
                    }
                }
                return Ok(PenaltySpec::Comm {
                    adjacency: c.adjacency.clone(),
                    links: c.added_links.iter().map(|l| [l[0] - 1, l[1] - 1]).collect(),
                    bidirectional: c.bidirectional,
                });
            }
            match graph {
                Some((adj, links)) => Ok(PenaltySpec::Comm {
                    adjacency: (0..adj.nrows())
                        .map(|i| (0..adj.ncols()).map(|j| adj[(i, j)]).collect())
                        .collect(),
                    links: links.iter().map(|&(a, b)| [a, b]).collect(),
                    bidirectional: true,
                }),
                None => config_err("penalty.comm", "communication penalties need a graph"),
            }
        };
        let act_sns = || -> Result<PenaltySpec> {
            Ok(PenaltySpec::ActuatorSensor {
                k_a: pen.k_a.unwrap_or(1),
                k_s: pen.k_s.unwrap_or(1),
            })
        };
        let theta = pen.theta.unwrap_or(0.5);
        let joint = |second: PenaltySpec| -> Result<PenaltySpec> {
            Ok(PenaltySpec::JointSum {
                theta,
                first: Box::new(comm()?),
                second: Box::new(second),
            })
        };
        match pen.kind {
            PenaltyName::Act => Ok(PenaltySpec::Actuator),
            PenaltyName::Sns => Ok(PenaltySpec::Sensor),
            PenaltyName::ActSns => act_sns(),
            PenaltyName::Comm => comm(),
            PenaltyName::ActComm => joint(PenaltySpec::Actuator),
            PenaltyName::SnsComm => joint(PenaltySpec::Sensor),
            PenaltyName::ActSnsComm => joint(act_sns()?),
            PenaltyName::MaxActComm => Ok(PenaltySpec::JointMax {
                theta,
                first: Box::new(comm()?),
                second: Box::new(PenaltySpec::Actuator),
            }),
        }
    }

    /// Explicit sparsity mask, or the communication mask when requested or implied.
    pub fn subspace_mask(
        &self,
        spec: &PenaltySpec,
        layout: &crate::firlin::FirLayout,
    ) -> Result<Option<SparsityMask>> {
        match &self.subspace {
            Some(SubspaceConfig::None) => Ok(None),
            Some(SubspaceConfig::Mask { per_tap, tail }) => {
                let per = per_tap
                    .iter()
                    .enumerate()
                    .map(|(k, m)| to_bool_mat(m, &format!("subspace.per_tap[{k}]")))
                    .collect::<Result<Vec<_>>>()?;
                let mask =
                    SparsityMask::new(per, to_bool_mat(tail, "subspace.tail")?).map_err(|e| {
                        RfdError::Config {
                            path: "subspace".into(),
                            msg: e.to_string(),
                        }
                    })?;
                if mask.shape() != (layout.rows, layout.cols) {
                    return config_err("subspace", "mask shape differs from the Youla parameter");
                }
                Ok(Some(mask))
            }
            Some(SubspaceConfig::Comm) => match spec.subspace_mask(layout)? {
                Some(m) => Ok(Some(m)),
                None => config_err("subspace", "no communication penalty to derive a mask from"),
            },
            None => spec.subspace_mask(layout),
        }
    }
}
