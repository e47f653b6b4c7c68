//! JSON run configuration. Every section except `model` is optional and
//! falls back to the defaults below; unknown keys are rejected.

use std::path::Path;

use relaxdamp_core::damping::{self, EnergySlack};
use relaxdamp_core::dynamics::{Backend, PerturbationSpec, ShiftSpec};
use relaxdamp_core::model::{build_jinxin, ModelSpec};
use relaxdamp_core::poly::Poly;
use serde::{Deserialize, Serialize};

use crate::error::ConfigError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub model: ModelConfig,
    #[serde(default)]
    pub profile: ProfileConfig,
    #[serde(default)]
    pub spectral: SpectralConfig,
    #[serde(default)]
    pub dynamics: DynamicsConfig,
    #[serde(default)]
    pub verify: VerifyConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub seed: u64,
}

/// A monomial `coef * prod u_k^powers[k]`, written `[coef, [powers]]`.
pub type Term = (f64, Vec<u32>);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    JinXin {
        #[serde(default = "default_a")]
        a: f64,
        #[serde(default = "one")]
        eps: f64,
        /// Flux coefficients `f(u) = sum_i flux[i] u^i`.
        #[serde(default = "default_flux")]
        flux: Vec<f64>,
        #[serde(default = "one")]
        u_minus: f64,
        #[serde(default = "minus_one")]
        u_plus: f64,
    },
    Custom {
        name: String,
        dim: usize,
        /// Row-major `dim x dim` coefficient matrix.
        a: Vec<Vec<Term>>,
        q: Vec<Vec<Term>>,
        u_minus: Vec<f64>,
        u_plus: Vec<f64>,
        #[serde(default)]
        shock_speed: f64,
        #[serde(default)]
        state_box: Option<Vec<(f64, f64)>>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileMethod {
    Shooting,
    ClosedForm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileConfig {
    /// Half-width of the grid.
    #[serde(rename = "X", default = "default_half_width")]
    pub half_width: f64,
    #[serde(default = "default_nodes")]
    pub n: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_method")]
    pub method: ProfileMethod,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectralConfig {
    #[serde(default = "default_xi_max")]
    pub xi_max: f64,
    #[serde(default = "default_n_xi")]
    pub n_xi: usize,
    #[serde(default = "default_margin")]
    pub margin: f64,
    /// The certificate must hold from this frequency on.
    #[serde(default = "default_xi_threshold")]
    pub xi_threshold: f64,
    #[serde(default = "default_expansion_xi")]
    pub expansion_xi: Vec<f64>,
    /// Lower bound imposed on characteristic speeds along the profile.
    #[serde(default = "default_c_min")]
    pub c_min: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsConfig {
    #[serde(default = "default_perturbation")]
    pub perturbation: PerturbationSpec,
    #[serde(default = "default_shift")]
    pub shift: ShiftSpec,
    #[serde(rename = "T", default = "default_horizon")]
    pub t_final: f64,
    #[serde(default = "default_backend")]
    pub backend: Backend,
    #[serde(default = "default_dx")]
    pub dx: f64,
    #[serde(default = "default_cfl")]
    pub cfl: f64,
    #[serde(default = "default_n_out")]
    pub n_out: usize,
    #[serde(default = "default_eps_budget")]
    pub eps_budget: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThetaGrid {
    pub min: f64,
    pub max: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightOverride {
    pub c_big: f64,
    pub c_small: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    #[serde(default = "default_theta_grid")]
    pub theta_grid: ThetaGrid,
    #[serde(default = "default_c_cap")]
    pub c_cap: f64,
    #[serde(rename = "K", default = "default_k")]
    pub k: usize,
    /// Also fit the squared `L^2` and `H^2` norms (localised perturbations only).
    #[serde(default = "yes")]
    pub l2: bool,
    #[serde(default = "default_paths")]
    pub paths_per_family: usize,
    /// Characteristics start in `[-s, s]` with `s = max(2R, launch_span)`.
    #[serde(default = "default_launch_span")]
    pub launch_span: f64,
    #[serde(default)]
    pub weights: Option<WeightOverride>,
    #[serde(default)]
    pub energy_slack: EnergySlack,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default)]
    pub dir: Option<String>,
    /// Every `node_stride`-th node is written to trajectory.csv.
    #[serde(default = "default_stride")]
    pub node_stride: usize,
    /// Every `time_stride`-th snapshot is written to trajectory.csv.
    #[serde(default = "default_stride")]
    pub time_stride: usize,
}

fn one() -> f64 {
    1.0
}
fn minus_one() -> f64 {
    -1.0
}
fn yes() -> bool {
    true
}
fn default_a() -> f64 {
    2.0
}
fn default_flux() -> Vec<f64> {
    vec![0.0, 0.0, 0.5]
}
fn default_half_width() -> f64 {
    40.0
}
fn default_nodes() -> usize {
    4001
}
fn default_tol() -> f64 {
    1e-8
}
fn default_method() -> ProfileMethod {
    ProfileMethod::Shooting
}
fn default_xi_max() -> f64 {
    1000.0
}
fn default_n_xi() -> usize {
    2000
}
fn default_margin() -> f64 {
    0.1
}
fn default_xi_threshold() -> f64 {
    5.0
}
fn default_expansion_xi() -> Vec<f64> {
    vec![20.0, 40.0, 80.0, 160.0]
}
fn default_c_min() -> f64 {
    1e-3
}
fn default_perturbation() -> PerturbationSpec {
    PerturbationSpec::Gaussian {
        amplitude: 1e-2,
        width: 2.0,
        center: 0.0,
        direction: None,
    }
}
fn default_shift() -> ShiftSpec {
    ShiftSpec::Zero
}
fn default_horizon() -> f64 {
    80.0
}
fn default_backend() -> Backend {
    Backend::Moc
}
fn default_dx() -> f64 {
    0.02
}
fn default_cfl() -> f64 {
    0.45
}
fn default_n_out() -> usize {
    200
}
fn default_eps_budget() -> f64 {
    2e-2
}
fn default_theta_grid() -> ThetaGrid {
    ThetaGrid {
        min: 0.005,
        max: 0.5,
        n: 100,
    }
}
fn default_c_cap() -> f64 {
    damping::C_CAP
}
fn default_k() -> usize {
    2
}
fn default_paths() -> usize {
    21
}
fn default_launch_span() -> f64 {
    10.0
}
fn default_stride() -> usize {
    10
}

macro_rules! defaults_from_empty {
    ($($t:ty),*) => {$(
        impl Default for $t {
            fn default() -> Self {
                serde_json::from_str("{}").expect("all fields have defaults")
            }
        }
    )*};
}

defaults_from_empty!(ProfileConfig, SpectralConfig, DynamicsConfig, VerifyConfig, OutputConfig);

fn check(ok: bool, path: &str, reason: &str) -> Result<(), ConfigError> {
    if ok {
        Ok(())
    } else {
        Err(ConfigError::Validation {
            path: path.to_string(),
            reason: reason.to_string(),
        })
    }
}

fn positive(v: f64, path: &str) -> Result<(), ConfigError> {
    check(v.is_finite() && v > 0.0, path, "must be positive and finite")
}

impl Config {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Config = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            if inner.is_syntax() || inner.is_eof() {
                ConfigError::Parse(inner.to_string())
            } else {
                ConfigError::Validation {
                    path,
                    reason: inner.to_string(),
                }
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        match &self.model {
            ModelConfig::JinXin {
                a,
                eps,
                flux,
                u_minus,
                u_plus,
            } => {
                positive(*a, "model.a")?;
                positive(*eps, "model.eps")?;
                check(
                    !flux.is_empty() && flux.iter().all(|c| c.is_finite()),
                    "model.flux",
                    "need finite coefficients",
                )?;
                check(u_minus.is_finite(), "model.u_minus", "must be finite")?;
                check(u_plus.is_finite(), "model.u_plus", "must be finite")?;
            }
            ModelConfig::Custom {
                dim,
                a,
                q,
                u_minus,
                u_plus,
                shock_speed,
                state_box,
                ..
            } => {
                check(*dim >= 1, "model.dim", "must be positive")?;
                check(a.len() == dim * dim, "model.a", "need dim * dim entries")?;
                check(q.len() == *dim, "model.q", "need dim entries")?;
                for (name, poly) in [("model.a", a), ("model.q", q)] {
                    for terms in poly {
                        for (c, p) in terms {
                            check(c.is_finite() && p.len() == *dim, name, "terms are [coef, [dim powers]]")?;
                        }
                    }
                }
                check(u_minus.len() == *dim, "model.u_minus", "need dim entries")?;
                check(u_plus.len() == *dim, "model.u_plus", "need dim entries")?;
                check(shock_speed.is_finite(), "model.shock_speed", "must be finite")?;
                if let Some(b) = state_box {
                    check(
                        b.len() == *dim && b.iter().all(|(lo, hi)| lo <= hi),
                        "model.state_box",
                        "need one ordered interval per component",
                    )?;
                }
            }
        }
        let p = &self.profile;
        positive(p.half_width, "profile.X")?;
        check(p.n >= 101, "profile.n", "need at least 101 nodes")?;
        check(p.tol > 0.0 && p.tol <= 1e-2, "profile.tol", "must lie in (0, 1e-2]")?;

        let s = &self.spectral;
        check(s.xi_max > 1.0 && s.xi_max.is_finite(), "spectral.xi_max", "must exceed 1")?;
        check(s.n_xi >= 100, "spectral.n_xi", "need at least 100 frequencies")?;
        positive(s.margin, "spectral.margin")?;
        positive(s.xi_threshold, "spectral.xi_threshold")?;
        check(
            s.expansion_xi.iter().all(|x| x.is_finite() && *x > 0.0),
            "spectral.expansion_xi",
            "frequencies must be positive",
        )?;
        check(s.c_min >= 0.0 && s.c_min.is_finite(), "spectral.c_min", "must be non-negative")?;

        let d = &self.dynamics;
        positive(d.t_final, "dynamics.T")?;
        positive(d.dx, "dynamics.dx")?;
        check(d.dx <= 0.1 * p.half_width, "dynamics.dx", "grid too coarse for the profile window")?;
        check(d.cfl > 0.0 && d.cfl <= 0.9, "dynamics.cfl", "must lie in (0, 0.9]")?;
        check(d.n_out >= 2, "dynamics.n_out", "need at least two output intervals")?;
        positive(d.eps_budget, "dynamics.eps_budget")?;
        d.shift
            .validate()
            .map_err(|_| ConfigError::Validation {
                path: "dynamics.shift".into(),
                reason: "parameters must be finite".into(),
            })?;

        let v = &self.verify;
        let g = &v.theta_grid;
        check(
            g.min >= 0.0 && g.max > g.min && g.max.is_finite(),
            "verify.theta_grid",
            "need 0 <= min < max",
        )?;
        check(g.n >= 2, "verify.theta_grid.n", "need at least two rates")?;
        positive(v.c_cap, "verify.c_cap")?;
        check(v.k <= 2, "verify.K", "derivative order must be at most 2")?;
        check(
            v.paths_per_family >= relaxdamp_core::characteristics::MIN_PATHS,
            "verify.paths_per_family",
            "need at least 10 paths per family",
        )?;
        positive(v.launch_span, "verify.launch_span")?;
        if let Some(w) = &v.weights {
            positive(w.c_big, "verify.weights.c_big")?;
            positive(w.c_small, "verify.weights.c_small")?;
        }
        check(
            v.energy_slack.k_shift >= 0.0 && v.energy_slack.k_quad >= 0.0,
            "verify.energy_slack",
            "constants must be non-negative",
        )?;

        check(self.output.node_stride >= 1, "output.node_stride", "must be at least 1")?;
        check(self.output.time_stride >= 1, "output.time_stride", "must be at least 1")?;
        Ok(())
    }

    pub fn build_model(&self) -> relaxdamp_core::Result<ModelSpec> {
        match &self.model {
            ModelConfig::JinXin {
                a,
                eps,
                flux,
                u_minus,
                u_plus,
            } => build_jinxin(*a, *eps, flux, *u_minus, *u_plus),
            ModelConfig::Custom {
                name,
                dim,
                a,
                q,
                u_minus,
                u_plus,
                shock_speed,
                state_box,
            } => {
                let poly = |terms: &Vec<Term>| Poly::from_terms(*dim, terms.iter().cloned());
                let model = ModelSpec::custom(
                    name,
                    *dim,
                    a.iter().map(poly).collect(),
                    q.iter().map(poly).collect(),
                    u_minus.clone(),
                    u_plus.clone(),
                    *shock_speed,
                )?;
                match state_box {
                    Some(b) => model.with_state_box(b.clone()),
                    None => Ok(model),
                }
            }
        }
    }

    pub fn theta_grid(&self) -> Vec<f64> {
        let g = &self.verify.theta_grid;
        damping::theta_grid(g.min, g.max, g.n)
    }
}
