//! Run configuration: a nested TOML file, every table optional, with command-line
//! overrides applied on top.

use std::f64::consts::PI;
use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use kwflow_core::builtins;
use kwflow_core::flow::{FlowConfig, Scheme};
use kwflow_core::functionals::Weight;
use kwflow_core::green::GeometryConfig;
use kwflow_core::kwf;
use kwflow_core::stationary::SeedConfig;
use kwflow_core::{Grid, ScalarField, Surface};
use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// `rho` as a number or one of the strings `"8pi"`, `"4pi"`, `"2pi"`, `"pi"`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rho(pub f64);

impl Default for Rho {
    fn default() -> Self {
        Rho(8.0 * PI)
    }
}

impl std::str::FromStr for Rho {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Rho> {
        let t = s.trim().to_ascii_lowercase().replace(' ', "");
        if let Ok(v) = t.parse::<f64>() {
            return Ok(Rho(v));
        }
        let Some(coef) = t.strip_suffix("pi") else {
            bail!("cannot read rho from {s:?}; use a number or a multiple like \"8pi\"");
        };
        let coef = coef.trim_end_matches('*');
        let c = if coef.is_empty() {
            1.0
        } else {
            coef.parse::<f64>()
                .with_context(|| format!("cannot read rho from {s:?}"))?
        };
        Ok(Rho(c * PI))
    }
}

impl fmt::Display for Rho {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl Serialize for Rho {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_f64(self.0)
    }
}

impl<'de> Deserialize<'de> for Rho {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Rho, D::Error> {
        struct RhoVisitor;
        impl Visitor<'_> for RhoVisitor {
            type Value = Rho;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a number or a string such as \"8pi\"")
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<Rho, E> {
                Ok(Rho(v))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<Rho, E> {
                Ok(Rho(v as f64))
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<Rho, E> {
                Ok(Rho(v as f64))
            }
            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<Rho, E> {
                v.parse().map_err(|e: anyhow::Error| E::custom(e))
            }
        }
        d.deserialize_any(RhoVisitor)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub n: usize,
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection { n: 64 }
    }
}

/// Conformal factor: a builtin (`flat`, `cos`, `sin`) or a KWF1 file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurfaceSection {
    pub phi: String,
    pub amplitude: f64,
    pub file: Option<PathBuf>,
}

impl Default for SurfaceSection {
    fn default() -> Self {
        SurfaceSection {
            phi: "flat".into(),
            amplitude: 0.5,
            file: None,
        }
    }
}

/// Weight `h`: a builtin name or a KWF1 file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeightSection {
    pub h: String,
    pub file: Option<PathBuf>,
}

impl Default for WeightSection {
    fn default() -> Self {
        WeightSection {
            h: "const".into(),
            file: None,
        }
    }
}

/// Initial data: `zero`, `seed` for the constructed data with `J < C0`, or a
/// KWF1 file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialSection {
    pub u0: String,
    pub file: Option<PathBuf>,
}

impl Default for InitialSection {
    fn default() -> Self {
        InitialSection {
            u0: "zero".into(),
            file: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
    /// Time between `u_t<t>.kwf` snapshots; 0 writes only the first and last state.
    pub snapshot_interval: f64,
    /// Evaluate the convergence condition and C0 for the summary.
    pub condition: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: PathBuf::from("kwflow-out"),
            snapshot_interval: 0.0,
            condition: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NewtonSection {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for NewtonSection {
    fn default() -> Self {
        NewtonSection {
            tol: 1e-10,
            max_iter: 50,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub rho: Rho,
    /// Seed for randomized verification inputs.
    pub rng_seed: u64,
    pub grid: GridSection,
    pub surface: SurfaceSection,
    pub weight: WeightSection,
    pub initial: InitialSection,
    /// `rho` here is ignored in favour of the top-level key.
    pub flow: FlowConfig,
    pub geometry: GeometryConfig,
    pub seed: SeedConfig,
    pub newton: NewtonSection,
    pub output: OutputSection,
}

/// Command-line values that override the file.
#[derive(Clone, Debug, Default, clap::Args)]
pub struct Overrides {
    /// Grid size (power of two, at least 16) [default: 64]
    #[arg(long)]
    pub n: Option<usize>,
    /// Coupling constant, a number or e.g. "8pi" [default: 8pi]
    #[arg(long)]
    pub rho: Option<Rho>,
    /// Builtin weight: const, one_plus_half_cos, near_vanishing, vanishing_patch [default: const]
    #[arg(long)]
    pub weight: Option<String>,
    /// Weight from a KWF1 file
    #[arg(long)]
    pub weight_file: Option<PathBuf>,
    /// Builtin conformal factor: flat, cos, sin [default: flat]
    #[arg(long)]
    pub phi: Option<String>,
    /// Amplitude of the builtin conformal factor [default: 0.5]
    #[arg(long)]
    pub phi_amplitude: Option<f64>,
    /// Conformal factor from a KWF1 file
    #[arg(long)]
    pub phi_file: Option<PathBuf>,
    /// Initial data: zero, seed, or a KWF1 file path [default: zero]
    #[arg(long)]
    pub u0: Option<String>,
    /// Time scheme: imex or explicit [default: imex]
    #[arg(long, value_parser = parse_scheme)]
    pub scheme: Option<Scheme>,
    /// First time step [default: 1e-4]
    #[arg(long)]
    pub dt_init: Option<f64>,
    /// Time-step growth factor after accepted steps [default: 1.1]
    #[arg(long)]
    pub dt_growth: Option<f64>,
    /// Final time [default: 100]
    #[arg(long)]
    pub t_max: Option<f64>,
    /// Step budget [default: 1000000]
    #[arg(long)]
    pub step_max: Option<usize>,
    /// Stop once the L2 residual of the stationary equation drops below this [default: 1e-6]
    #[arg(long)]
    pub residual_tol: Option<f64>,
    /// Record diagnostics every this many steps [default: 1]
    #[arg(long)]
    pub sample_every: Option<usize>,
    /// Output directory [default: kwflow-out]
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    /// Time between snapshots; 0 keeps only the first and last [default: 0]
    #[arg(long)]
    pub snapshot_interval: Option<f64>,
    /// Skip the convergence-condition evaluation in run summaries
    #[arg(long)]
    pub no_condition: bool,
}

fn parse_scheme(s: &str) -> Result<Scheme> {
    match s {
        "imex" => Ok(Scheme::Imex),
        "explicit" => Ok(Scheme::Explicit),
        _ => bail!("unknown scheme {s:?}; expected imex or explicit"),
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<RunConfig> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).with_context(|| format!("cannot parse config {}", path.display()))?;
        // Relative field paths are taken relative to the config file.
        let base = path.parent().unwrap_or(Path::new(""));
        for f in [&mut cfg.surface.file, &mut cfg.weight.file, &mut cfg.initial.file]
            .into_iter()
            .flatten()
        {
            if f.is_relative() {
                *f = base.join(&*f);
            }
        }
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(n) = o.n {
            self.grid.n = n;
        }
        if let Some(r) = o.rho {
            self.rho = r;
        }
        if let Some(w) = &o.weight {
            self.weight.h = w.clone();
            self.weight.file = None;
        }
        if let Some(f) = &o.weight_file {
            self.weight.file = Some(f.clone());
        }
        if let Some(p) = &o.phi {
            self.surface.phi = p.clone();
            self.surface.file = None;
        }
        if let Some(a) = o.phi_amplitude {
            self.surface.amplitude = a;
        }
        if let Some(f) = &o.phi_file {
            self.surface.file = Some(f.clone());
        }
        if let Some(u) = &o.u0 {
            match u.as_str() {
                "zero" | "seed" => {
                    self.initial.u0 = u.clone();
                    self.initial.file = None;
                }
                path => {
                    self.initial.u0 = "file".into();
                    self.initial.file = Some(PathBuf::from(path));
                }
            }
        }
        if let Some(s) = o.scheme {
            self.flow.scheme = s;
        }
        if let Some(v) = o.dt_init {
            self.flow.dt_init = v;
        }
        if let Some(v) = o.dt_growth {
            self.flow.dt_growth = v;
        }
        if let Some(v) = o.t_max {
            self.flow.t_max = v;
        }
        if let Some(v) = o.step_max {
            self.flow.step_max = v;
        }
        if let Some(v) = o.residual_tol {
            self.flow.residual_tol = v;
        }
        if let Some(v) = o.sample_every {
            self.flow.sample_every = v;
        }
        if let Some(d) = &o.out {
            self.output.dir = d.clone();
        }
        if let Some(v) = o.snapshot_interval {
            self.output.snapshot_interval = v;
        }
        if o.no_condition {
            self.output.condition = false;
        }
        self.flow.rho = self.rho.0;
    }

    pub fn validate(&self) -> Result<()> {
        Grid::new(self.grid.n)?;
        if !(self.rho.0 > 0.0 && self.rho.0.is_finite()) {
            bail!("rho must be positive, got {}", self.rho.0);
        }
        self.flow.validate()?;
        if !(self.output.snapshot_interval >= 0.0) {
            bail!("snapshot_interval must be >= 0");
        }
        if self.geometry.stride == 0 || !self.grid.n.is_multiple_of(self.geometry.stride) {
            bail!("geometry.stride must divide n = {}", self.grid.n);
        }
        match self.initial.u0.as_str() {
            "zero" | "seed" => {}
            "file" if self.initial.file.is_some() => {}
            other => bail!("initial.u0 must be zero, seed or file (with initial.file), got {other:?}"),
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<Grid> {
        Ok(Grid::new(self.grid.n)?)
    }

    fn read_field(&self, path: &Path, what: &str) -> Result<ScalarField> {
        let f = kwf::read(path).with_context(|| format!("cannot load {what} from {}", path.display()))?;
        if f.grid().n() != self.grid.n {
            bail!("{what} file {} has n = {}, config has n = {}", path.display(), f.grid().n(), self.grid.n);
        }
        Ok(f)
    }

    pub fn surface(&self) -> Result<Surface> {
        let grid = self.grid()?;
        let phi = match &self.surface.file {
            Some(p) => self.read_field(p, "conformal factor")?,
            None => builtins::phi(&self.surface.phi, self.surface.amplitude, grid)?,
        };
        Ok(Surface::new(grid, &phi)?)
    }

    pub fn weight(&self) -> Result<Weight> {
        match &self.weight.file {
            Some(p) => Ok(Weight::new(self.read_field(p, "weight")?)?),
            None => Ok(builtins::weight(&self.weight.h, self.grid()?)?),
        }
    }

    /// Initial data from `zero` or a file; `seed` is resolved by the caller.
    pub fn initial_field(&self) -> Result<Option<ScalarField>> {
        match self.initial.u0.as_str() {
            "zero" => Ok(Some(ScalarField::zeros(self.grid()?))),
            "seed" => Ok(None),
            _ => {
                let p = self.initial.file.as_ref().expect("validated");
                Ok(Some(self.read_field(p, "initial data")?))
            }
        }
    }
}
