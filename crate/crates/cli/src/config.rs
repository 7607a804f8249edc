//! Run configuration: a TOML file with one table per subcommand.
//!
//! Every key has a default, so an empty file is a valid configuration for the
//! canonical nozzle (γ = 2, ζ₀ = 2, J = 1, S₀ = 1).  Unknown keys are
//! rejected.  Parse and validation errors carry the line of the offending key.

use std::path::{Path, PathBuf};

use keldysh_ep::background::PhysicalParams;
use keldysh_ep::galerkin::Schedule;
use keldysh_ep::nonlinear::Profile;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// A configuration that failed to parse or validate.
#[derive(Debug, thiserror::Error)]
#[error("{path}:{line}: {message}")]
pub struct ConfigError {
    pub path: String,
    /// 1-based line; 0 when the error is not tied to a line.
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub output: Output,
    pub physics: Physics,
    pub background: Background,
    pub keldysh: Keldysh,
    pub linearized: Linearized,
    pub nonlinear: Nonlinear,
    pub boundary: Boundary,
    pub admissibility: Admissibility,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output: Output::default(),
            physics: Physics::default(),
            background: Background::default(),
            keldysh: Keldysh::default(),
            linearized: Linearized::default(),
            nonlinear: Nonlinear::default(),
            boundary: Boundary::default(),
            admissibility: Admissibility::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Output {
    pub dir: PathBuf,
}

impl Default for Output {
    fn default() -> Self {
        Self { dir: PathBuf::from("out") }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Physics {
    pub gamma: f64,
    pub zeta0: f64,
    pub j: f64,
    pub s0: f64,
}

impl Default for Physics {
    fn default() -> Self {
        Self { gamma: 2.0, zeta0: 2.0, j: 1.0, s0: 1.0 }
    }
}

impl Physics {
    pub fn params(&self) -> keldysh_ep::Result<PhysicalParams> {
        PhysicalParams::new(self.gamma, self.zeta0, self.j, self.s0, 0.0)
    }
}

/// The nozzle is the part of the trajectory with κ = ū₁/u_s in [kappa0, kappa_l].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Background {
    pub kappa0: f64,
    pub kappa_l: f64,
    pub nx: usize,
    /// Integrate to the end of the trajectory instead of kappa_l.
    pub to_l_max: bool,
}

impl Default for Background {
    fn default() -> Self {
        Self { kappa0: 0.9, kappa_l: 1.1, nx: 201, to_l_max: false }
    }
}

/// Model problem a₁₁ = c(R/2 − x₁), a₁₂ = 0, a₁ = −1 with right side
/// f = amplitude·(1 + cos(mode·π(x₂+1)/2))·sin(πx₁/R).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Keldysh {
    pub c: f64,
    pub length: f64,
    pub nx1: usize,
    pub nx2: usize,
    pub regularity: usize,
    pub source_amplitude: f64,
    pub source_mode: u32,
    pub eps_list: Vec<f64>,
    pub tau_list: Vec<f64>,
    pub n_list: Vec<usize>,
    pub tol: f64,
}

impl Default for Keldysh {
    fn default() -> Self {
        let s = Schedule::default();
        Self {
            c: 1.0,
            length: 1.0,
            nx1: 201,
            nx2: 33,
            regularity: 4,
            source_amplitude: 1.0,
            source_mode: 2,
            eps_list: s.eps,
            tau_list: s.tau,
            n_list: s.n,
            tol: s.tol,
        }
    }
}

impl Keldysh {
    pub fn schedule(&self) -> Schedule {
        Schedule { eps: self.eps_list.clone(), tau: self.tau_list.clone(), n: self.n_list.clone(), tol: self.tol }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Linearized {
    pub nx2: usize,
    pub eta: f64,
    pub d0: f64,
}

impl Default for Linearized {
    fn default() -> Self {
        Self { nx2: 33, eta: 1.5, d0: keldysh_ep::linearized::DEFAULT_D0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Start {
    Zero,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Nonlinear {
    pub nx2: usize,
    pub n_modes: usize,
    pub tol: f64,
    pub inner_tol: f64,
    pub max_sweeps: usize,
    pub stall_sweeps: usize,
    pub relaxation: f64,
    pub d0: f64,
    pub p_max: f64,
    pub compat_tol: f64,
    pub initial: Start,
    pub random_amplitude: f64,
}

impl Default for Nonlinear {
    fn default() -> Self {
        let o = keldysh_ep::nonlinear::FixedPointOptions::default();
        Self {
            nx2: o.nx2,
            n_modes: o.n_modes,
            tol: o.tol,
            inner_tol: o.inner.tol,
            max_sweeps: o.max_sweeps,
            stall_sweeps: o.stall_sweeps,
            relaxation: o.relaxation,
            d0: o.d0,
            p_max: o.p_max,
            compat_tol: o.compat_tol,
            initial: Start::Zero,
            random_amplitude: 2e-3,
        }
    }
}

/// A boundary profile.  `base` and `value` default to the background value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ProfileSpec {
    Background,
    Constant { value: f64 },
    Cosine { base: Option<f64>, terms: Vec<(u32, f64)> },
    Sine { terms: Vec<(u32, f64)> },
    /// Two-column CSV `x2,value` with a header line; relative paths are
    /// resolved against the configuration file.
    Table { file: PathBuf },
}

impl ProfileSpec {
    /// Builds the profile; `background` is the value of the unperturbed flow.
    pub fn build(&self, background: f64, base_dir: &Path) -> anyhow::Result<Profile> {
        use anyhow::Context;
        Ok(match self {
            ProfileSpec::Background => Profile::Constant(background),
            ProfileSpec::Constant { value } => Profile::Constant(*value),
            ProfileSpec::Cosine { base, terms } => Profile::Cosine { base: base.unwrap_or(background), terms: terms.clone() },
            ProfileSpec::Sine { terms } => Profile::Sine { terms: terms.clone() },
            ProfileSpec::Table { file } => {
                let path = base_dir.join(file);
                let text = std::fs::read_to_string(&path).with_context(|| format!("reading profile table {}", path.display()))?;
                let (x, y) = parse_table(&text).map_err(|(line, message)| ConfigError {
                    path: path.display().to_string(),
                    line,
                    message,
                })?;
                Profile::table(x, y)?
            }
        })
    }
}

fn parse_table(text: &str) -> Result<(Vec<f64>, Vec<f64>), (usize, String)> {
    let mut x = Vec::new();
    let mut y = Vec::new();
    for (k, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        if cols.len() != 2 {
            return Err((k + 1, format!("expected 2 columns, found {}", cols.len())));
        }
        let parse = |s: &str| s.parse::<f64>().map_err(|e| (k + 1, format!("{s:?}: {e}")));
        x.push(parse(cols[0])?);
        y.push(parse(cols[1])?);
    }
    Ok((x, y))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Boundary {
    pub s_en: ProfileSpec,
    pub e_en: ProfileSpec,
    pub w_en: ProfileSpec,
}

impl Default for Boundary {
    fn default() -> Self {
        Self { s_en: ProfileSpec::Background, e_en: ProfileSpec::Background, w_en: ProfileSpec::Background }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Admissibility {
    pub j_list: Vec<f64>,
    /// κ-interval [1 − w, 1 + w].
    pub kappa_half_width: f64,
    /// Fixed η; when absent, η = 3γ/4 for J ≤ 1 and γ/4 for J > 1.
    pub eta: Option<f64>,
    /// Background nodes for the x₁-form comparison.
    pub nodes: usize,
}

impl Default for Admissibility {
    fn default() -> Self {
        Self { j_list: vec![0.01, 0.001, 100.0, 1000.0], kappa_half_width: 1e-3, eta: None, nodes: 401 }
    }
}

impl Admissibility {
    pub fn eta_for(&self, gamma: f64, j: f64) -> f64 {
        self.eta.unwrap_or(if j <= 1.0 { 0.75 * gamma } else { 0.25 * gamma })
    }
}

/// 1-based line of `key` inside `[section]` (or at top level for an empty
/// section), found by a textual scan.
fn key_line(text: &str, section: &str, key: &str) -> usize {
    let mut current = String::new();
    for (k, line) in text.lines().enumerate() {
        let t = line.trim();
        if let Some(name) = t.strip_prefix('[').and_then(|r| r.strip_suffix(']')) {
            current = name.trim().to_string();
            continue;
        }
        if current == section {
            if let Some((lhs, _)) = t.split_once('=') {
                if lhs.trim() == key {
                    return k + 1;
                }
            }
        }
    }
    0
}

impl RunConfig {
    /// Parses and validates `text`; `path` is used in error messages only.
    pub fn parse(text: &str, path: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let line = e.span().map_or(0, |s| text[..s.start.min(text.len())].matches('\n').count() + 1);
            ConfigError { path: path.into(), line, message: e.message().to_string() }
        })?;
        cfg.validate().map_err(|(section, key, message)| ConfigError {
            path: path.into(),
            line: key_line(text, section, key),
            message: format!("{}{key}: {message}", if section.is_empty() { String::new() } else { format!("{section}.") }),
        })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> anyhow::Result<(Self, String)> {
        use anyhow::Context;
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let cfg = Self::parse(&text, &path.display().to_string())?;
        Ok((cfg, text))
    }

    /// SHA-256 of the resolved configuration, so that files differing only
    /// in comments or key order hash equally.
    pub fn hash(&self) -> String {
        let canonical = toml::to_string(self).expect("configuration serialises");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    fn validate(&self) -> Result<(), (&'static str, &'static str, String)> {
        fn positive(section: &'static str, key: &'static str, v: f64) -> Result<(), (&'static str, &'static str, String)> {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err((section, key, format!("must be positive and finite (got {v})")))
            }
        }
        fn grid(section: &'static str, key: &'static str, n: usize) -> Result<(), (&'static str, &'static str, String)> {
            if n >= 16 {
                Ok(())
            } else {
                Err((section, key, format!("grid size must be at least 16 (got {n})")))
            }
        }
        let p = &self.physics;
        if !(p.gamma > 1.0) {
            return Err(("physics", "gamma", format!("must exceed 1 (got {})", p.gamma)));
        }
        if !(p.zeta0 > 1.0) {
            return Err(("physics", "zeta0", format!("must exceed 1 (got {})", p.zeta0)));
        }
        positive("physics", "j", p.j)?;
        positive("physics", "s0", p.s0)?;

        let b = &self.background;
        positive("background", "kappa0", b.kappa0)?;
        if !(b.kappa_l > b.kappa0) {
            return Err(("background", "kappa_l", format!("must exceed kappa0 (got {} <= {})", b.kappa_l, b.kappa0)));
        }
        grid("background", "nx", b.nx)?;

        let k = &self.keldysh;
        positive("keldysh", "c", k.c)?;
        positive("keldysh", "length", k.length)?;
        grid("keldysh", "nx1", k.nx1)?;
        grid("keldysh", "nx2", k.nx2)?;
        positive("keldysh", "tol", k.tol)?;
        if k.eps_list.is_empty() {
            return Err(("keldysh", "eps_list", "must not be empty".into()));
        }
        if k.eps_list.windows(2).any(|w| w[1] > w[0]) || k.eps_list.iter().any(|e| !(*e >= 0.0)) {
            return Err(("keldysh", "eps_list", "must be non-negative and non-increasing".into()));
        }
        if k.tau_list.is_empty() || k.tau_list.iter().any(|t| !(*t >= 0.0 && *t < 1.0)) {
            return Err(("keldysh", "tau_list", "must be non-empty with entries in [0, 1)".into()));
        }
        if k.n_list.is_empty() || k.n_list.contains(&0) {
            return Err(("keldysh", "n_list", "must be non-empty with positive entries".into()));
        }

        let l = &self.linearized;
        grid("linearized", "nx2", l.nx2)?;
        positive("linearized", "eta", l.eta)?;
        positive("linearized", "d0", l.d0)?;

        let n = &self.nonlinear;
        grid("nonlinear", "nx2", n.nx2)?;
        if n.n_modes == 0 {
            return Err(("nonlinear", "n_modes", "must be positive".into()));
        }
        positive("nonlinear", "tol", n.tol)?;
        positive("nonlinear", "inner_tol", n.inner_tol)?;
        positive("nonlinear", "d0", n.d0)?;
        positive("nonlinear", "p_max", n.p_max)?;
        positive("nonlinear", "compat_tol", n.compat_tol)?;
        positive("nonlinear", "random_amplitude", n.random_amplitude)?;
        if !(n.relaxation > 0.0 && n.relaxation <= 1.0) {
            return Err(("nonlinear", "relaxation", format!("must lie in (0, 1] (got {})", n.relaxation)));
        }
        if n.max_sweeps == 0 || n.stall_sweeps == 0 {
            return Err(("nonlinear", "max_sweeps", "sweep limits must be positive".into()));
        }

        let a = &self.admissibility;
        if a.j_list.is_empty() || a.j_list.iter().any(|j| !(*j > 0.0)) {
            return Err(("admissibility", "j_list", "must be non-empty with positive entries".into()));
        }
        if !(a.kappa_half_width > 0.0 && a.kappa_half_width < 1.0) {
            return Err(("admissibility", "kappa_half_width", format!("must lie in (0, 1) (got {})", a.kappa_half_width)));
        }
        if let Some(eta) = a.eta {
            positive("admissibility", "eta", eta)?;
        }
        grid("admissibility", "nodes", a.nodes)?;
        Ok(())
    }
}
