//! Run configuration: one TOML document, dotted-path overrides, conversion into core types.

use std::f64::consts::PI;

use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use spdelab::control::{ControlFamily, CostSpec, OptimizerConfig, TargetProfile, TerminalPayoff};
use spdelab::ergodic::TestFunctional;
use spdelab::model::{ConvectionModel, FluxModel, JumpModel, WienerDiffusionModel};
use spdelab::{build_mesh, Field, Mesh, Model, Scheme};

use crate::CliError;

pub const DEFAULT_CONFIG: &str = include_str!("../configs/default.toml");

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub mesh: MeshConfig,
    pub model: ModelConfig,
    pub initial: InitialCondition,
    pub scheme: Scheme,
    pub rng: RngConfig,
    pub control: ControlConfig,
    pub cost: CostConfig,
    pub certify: CertifyConfig,
    pub uniqueness: UniquenessConfig,
    pub ergodic: ErgodicConfig,
    pub check: CheckConfig,
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeshConfig {
    /// Interior nodes.
    pub nodes: usize,
    pub domain: [f64; 2],
}

impl Default for MeshConfig {
    fn default() -> Self {
        MeshConfig { nodes: 31, domain: [0.0, 1.0] }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub flux: FluxModel<f64>,
    pub convection: ConvectionModel<f64>,
    pub diffusion: WienerDiffusionModel<f64>,
    pub jumps: JumpModel<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialCondition {
    Zero,
    /// `a·sin(kπy)`
    Sine { amplitude: f64, mode: u32 },
    /// `4a·y(1−y)`
    Parabola { amplitude: f64 },
    /// `a·Σ_n ξ_n n^{-2} sin(nπy)` with standard normal `ξ_n`.
    RandomH1 { amplitude: f64, modes: u32, seed: u64 },
    Values { values: Vec<f64> },
}

impl Default for InitialCondition {
    fn default() -> Self {
        InitialCondition::Sine { amplitude: 1.0, mode: 1 }
    }
}

impl InitialCondition {
    pub fn field(&self, mesh: &Mesh) -> Field {
        let y = |x: f64| mesh.unit_coordinate(x);
        match self {
            InitialCondition::Zero => Field::zeros(mesh.node_count()),
            InitialCondition::Sine { amplitude, mode } => {
                Field::interpolate(mesh, |x| amplitude * (*mode as f64 * PI * y(x)).sin())
            }
            InitialCondition::Parabola { amplitude } => Field::interpolate(mesh, |x| 4.0 * amplitude * y(x) * (1.0 - y(x))),
            InitialCondition::RandomH1 { amplitude, modes, seed } => {
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(*seed);
                let coeffs: Vec<f64> = (1..=*modes)
                    .map(|n| rand_distr::Distribution::<f64>::sample(&rand_distr::StandardNormal, &mut rng) / (n as f64).powi(2))
                    .collect();
                Field::interpolate(mesh, |x| {
                    amplitude * coeffs.iter().enumerate().map(|(i, c)| c * ((i + 1) as f64 * PI * y(x)).sin()).sum::<f64>()
                })
            }
            InitialCondition::Values { values } => Field::from(values.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RngConfig {
    pub seed: u64,
    pub paths: usize,
}

impl Default for RngConfig {
    fn default() -> Self {
        RngConfig { seed: 7, paths: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControlConfig {
    /// Piecewise-constant time blocks of the control family.
    pub time_blocks: usize,
    /// Spatial sine modes per block.
    pub modes: usize,
    /// Coefficients used by `simulate`; empty means `U ≡ 0`.
    pub theta: Vec<f64>,
    pub optimizer: OptimizerConfig<f64>,
}

impl Default for ControlConfig {
    fn default() -> Self {
        ControlConfig { time_blocks: 2, modes: 1, theta: Vec::new(), optimizer: OptimizerConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetConfig {
    Zero,
    /// `factor·u₀` at every time.
    ScaledInitial { factor: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TerminalConfig {
    None,
    /// `scale·‖u − target(T)‖ + offset`
    Affine { scale: f64, offset: f64 },
    /// `clamp((u, sin πy), lo, hi)`
    ClippedLinear { lo: f64, hi: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostConfig {
    pub target: TargetConfig,
    pub terminal: TerminalConfig,
    pub control_weight: f64,
}

impl Default for CostConfig {
    fn default() -> Self {
        CostConfig {
            target: TargetConfig::ScaledInitial { factor: 0.5 },
            terminal: TerminalConfig::None,
            control_weight: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CertifyConfig {
    /// Step counts of the refinement levels, coarse to fine.
    pub levels: Vec<usize>,
    pub paths: usize,
}

impl Default for CertifyConfig {
    fn default() -> Self {
        CertifyConfig { levels: vec![64, 128, 256], paths: 64 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UniquenessConfig {
    /// Second datum is `u₀ + perturbation·sin(2πy)`.
    pub perturbation: f64,
    pub thetas: Vec<f64>,
    pub paths: usize,
}

impl Default for UniquenessConfig {
    fn default() -> Self {
        UniquenessConfig { perturbation: 0.1, thetas: vec![1e-2, 1e-3, 1e-4], paths: 8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ErgodicConfig {
    pub steps: usize,
    pub horizon: f64,
    pub burn_in: usize,
    pub stride: usize,
    pub radii: Vec<f64>,
    /// Dissipativity constant for the analytic bound; half the Poincaré suggestion when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    pub functionals: Vec<TestFunctional<f64>>,
    /// Write the snapshots as raw little-endian f64 rows.
    pub dump_snapshots: bool,
}

impl Default for ErgodicConfig {
    fn default() -> Self {
        ErgodicConfig {
            steps: 20_000,
            horizon: 200.0,
            burn_in: 1_000,
            stride: 10,
            radii: vec![0.25, 0.5, 1.0, 2.0, 4.0, 8.0],
            delta: None,
            functionals: vec![TestFunctional::Exponential { c: 1.0 }, TestFunctional::Exponential { c: 4.0 }],
            dump_snapshots: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CheckConfig {
    pub sample_budget: usize,
}

impl Default for CheckConfig {
    fn default() -> Self {
        CheckConfig { sample_budget: 2000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: String,
    /// Write full state dumps next to the trajectory tables.
    pub states: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: "spdelab-out".into(), states: false }
    }
}

/// Parses `text`, applies `path=value` overrides and deserializes with path-aware errors.
pub fn load(text: &str, overrides: &[String]) -> Result<RunConfig, CliError> {
    let mut table: toml::Table = toml::from_str(text).map_err(|e| CliError::Config(format!("config is not valid TOML: {e}")))?;
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    let canonical = toml::to_string(&table).map_err(|e| CliError::Config(e.to_string()))?;
    let de = toml::Deserializer::parse(&canonical).map_err(|e| CliError::Config(e.to_string()))?;
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        CliError::Config(format!("invalid config at `{path}`: {}", e.into_inner().message().trim()))
    })
}

fn apply_override(table: &mut toml::Table, spec: &str) -> Result<(), CliError> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override `{spec}` is not of the form path=value")))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(CliError::Config(format!("override path `{path}` is malformed")));
    }
    let value = toml::from_str::<toml::Table>(&format!("v = {}", raw.trim()))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
    let mut cur = table;
    for k in &keys[..keys.len() - 1] {
        let entry = cur.entry(k.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("override `{path}`: `{k}` is not a table")))?;
    }
    cur.insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}

impl RunConfig {
    /// SHA-256 of the canonical TOML form, ignoring the output directory.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output.dir.clear();
        let text = toml::to_string(&c).expect("config serializes");
        Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn mesh(&self) -> Result<Mesh, CliError> {
        Ok(build_mesh(self.mesh.nodes, (self.mesh.domain[0], self.mesh.domain[1]))?)
    }

    pub fn model(&self) -> Result<Model, CliError> {
        let mesh = self.mesh()?;
        let u0 = self.initial.field(&mesh);
        let m = &self.model;
        let model = Model::new(mesh, m.flux.clone(), m.convection.clone(), m.diffusion.clone(), m.jumps.clone(), u0)?;
        self.scheme.validate(&model)?;
        Ok(model)
    }

    pub fn family(&self, mesh: &Mesh) -> Result<ControlFamily<f64>, CliError> {
        Ok(ControlFamily::tensor(mesh, self.scheme.horizon, self.scheme.steps, self.control.time_blocks, self.control.modes)?)
    }

    pub fn cost(&self, model: &Model) -> CostSpec<f64> {
        let mesh = &model.mesh;
        let target = match self.cost.target {
            TargetConfig::Zero => Field::zeros(mesh.node_count()),
            TargetConfig::ScaledInitial { factor } => model.initial.scaled(factor),
        };
        let terminal = match self.cost.terminal {
            TerminalConfig::None => TerminalPayoff::None,
            TerminalConfig::Affine { scale, offset } => TerminalPayoff::Affine { scale, reference: target.clone(), offset },
            TerminalConfig::ClippedLinear { lo, hi } => TerminalPayoff::ClippedLinear {
                weight: Field::interpolate(mesh, |x| (PI * mesh.unit_coordinate(x)).sin()),
                lo,
                hi,
            },
        };
        CostSpec { target: TargetProfile::Constant(target), terminal, control_weight: self.cost.control_weight }
    }
}
