//! Run configuration: schema, defaults, and validation with line-anchored
//! diagnostics.

use std::fmt;
use std::path::{Path, PathBuf};

use nlmcmc::{Interaction, SamplerKind};
use serde::{Deserialize, Serialize};

pub const EXPERIMENTS: [&str; 5] = ["run2d", "oracle-suite", "poc", "mmd-selftest", "compare-dm"];
pub const TARGETS: [&str; 4] = ["gaussian", "circ_mog", "grid_mog", "two_rings"];
pub const INITS: [&str; 2] = ["uniform_box", "auxiliary_target"];
pub const DIVERGENCE: [&str; 2] = ["abort", "reinitialize"];

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub experiment: String,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default = "default_particles")]
    pub n_particles: usize,
    #[serde(default = "default_n_sim")]
    pub n_sim: usize,
    #[serde(default = "default_record_every")]
    pub record_every: usize,
    #[serde(default)]
    pub parallel_seeds: bool,
    #[serde(default = "default_divergence")]
    pub divergence: String,
    #[serde(default)]
    pub target: TargetSection,
    #[serde(default)]
    pub auxiliary_target: AuxiliarySection,
    #[serde(default)]
    pub primary_sampler: SamplerSection,
    #[serde(default)]
    pub auxiliary_sampler: SamplerSection,
    #[serde(default)]
    pub jump: JumpSection,
    #[serde(default)]
    pub init_primary: InitSection,
    #[serde(default)]
    pub init_auxiliary: InitSection,
    #[serde(default)]
    pub metrics: MetricsSection,
    #[serde(default)]
    pub oracle: OracleSection,
    #[serde(default)]
    pub poc: PocSection,
    #[serde(default)]
    pub mmd_selftest: MmdSelftestSection,
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2, 3, 4]
}
fn default_particles() -> usize {
    500
}
fn default_n_sim() -> usize {
    2000
}
fn default_record_every() -> usize {
    50
}
fn default_divergence() -> String {
    "abort".into()
}

/// Primary target. Parameters not given take the family's defaults.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TargetSection {
    pub name: String,
    pub dim: Option<usize>,
    pub mean: Option<Vec<f64>>,
    pub sigma: Option<f64>,
    pub radius: Option<f64>,
    pub n_components: Option<usize>,
    pub coords: Option<Vec<f64>>,
    pub radii: Option<[f64; 2]>,
    pub width: Option<f64>,
    pub weights: Option<[f64; 2]>,
}

impl Default for TargetSection {
    fn default() -> Self {
        Self {
            name: "grid_mog".into(),
            dim: None,
            mean: None,
            sigma: None,
            radius: None,
            n_components: None,
            coords: None,
            radii: None,
            width: None,
            weights: None,
        }
    }
}

impl TargetSection {
    /// Keys each family accepts.
    fn allowed(&self) -> &'static [&'static str] {
        match self.name.as_str() {
            "gaussian" => &["dim", "mean", "sigma"],
            "circ_mog" => &["sigma", "radius", "n_components"],
            "grid_mog" => &["sigma", "coords"],
            "two_rings" => &["radii", "width", "weights"],
            _ => &[],
        }
    }

    fn given(&self) -> Vec<&'static str> {
        let mut v = Vec::new();
        let pairs: [(&'static str, bool); 9] = [
            ("dim", self.dim.is_some()),
            ("mean", self.mean.is_some()),
            ("sigma", self.sigma.is_some()),
            ("radius", self.radius.is_some()),
            ("n_components", self.n_components.is_some()),
            ("coords", self.coords.is_some()),
            ("radii", self.radii.is_some()),
            ("width", self.width.is_some()),
            ("weights", self.weights.is_some()),
        ];
        for (k, set) in pairs {
            if set {
                v.push(k);
            }
        }
        v
    }

    pub fn dim(&self) -> usize {
        match self.name.as_str() {
            "gaussian" => self.dim.or(self.mean.as_ref().map(Vec::len)).unwrap_or(2),
            _ => 2,
        }
    }
}

/// eta* = N(0, sigma^2 I).
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuxiliarySection {
    pub sigma: f64,
}

impl Default for AuxiliarySection {
    fn default() -> Self {
        Self { sigma: 20.0 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerSection {
    pub kind: String,
    pub step: f64,
    pub tau: f64,
    pub rms_beta: f64,
    pub rms_eps: f64,
}

impl Default for SamplerSection {
    fn default() -> Self {
        Self {
            kind: "mala".into(),
            step: 0.001,
            tau: 1.0,
            rms_beta: 0.9,
            rms_eps: 1e-9,
        }
    }
}

impl SamplerSection {
    pub fn kind(&self) -> Option<SamplerKind> {
        SamplerKind::NAMES
            .iter()
            .position(|n| *n == self.kind)
            .map(|i| [SamplerKind::Ula, SamplerKind::Mala, SamplerKind::RmsUla, SamplerKind::RmsMala][i])
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JumpSection {
    pub kind: String,
    pub epsilon: f64,
}

impl Default for JumpSection {
    fn default() -> Self {
        Self {
            kind: "bg".into(),
            epsilon: 0.1,
        }
    }
}

impl JumpSection {
    pub fn kind(&self) -> Option<Interaction> {
        match self.kind.as_str() {
            "bg" => Some(Interaction::Bg),
            "ar" => Some(Interaction::Ar),
            "none" => Some(Interaction::None),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitSection {
    pub kind: String,
    pub low: f64,
    pub high: f64,
}

impl Default for InitSection {
    fn default() -> Self {
        Self {
            kind: "uniform_box".into(),
            low: -7.5,
            high: 7.5,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsSection {
    /// Exact draws from the target used as the MMD reference; 0 disables MMD.
    pub reference_samples: usize,
    pub reference_seed: u64,
    pub kernel_scales: Vec<f64>,
}

impl Default for MetricsSection {
    fn default() -> Self {
        Self {
            reference_samples: 2000,
            reference_seed: 99,
            kernel_scales: vec![1.0, 2.0],
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleSection {
    /// "bundled" or "random".
    pub instance: String,
    pub size: usize,
    pub instance_seed: u64,
    pub epsilon: f64,
    pub n_max: usize,
    pub mu0: usize,
    /// Dirac start for the transient run; a second run always starts at eta*.
    pub eta0: usize,
    pub beta: f64,
    /// Lyapunov function for the weighted norm; defaults to 0, 1, ..., S - 1.
    pub v: Option<Vec<f64>>,
    pub c_multiplier: f64,
}

impl Default for OracleSection {
    fn default() -> Self {
        Self {
            instance: "bundled".into(),
            size: 4,
            instance_seed: 0,
            epsilon: 0.5,
            n_max: 200,
            mu0: 0,
            eta0: 3,
            beta: 0.5,
            v: None,
            c_multiplier: 10.0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PocSection {
    pub kind: String,
    pub epsilon: f64,
    pub ns: Vec<usize>,
    pub n_step: usize,
    pub min_reps: usize,
    pub max_reps: usize,
    pub rel_se_target: f64,
    /// Per-N wall-clock budget in seconds.
    pub time_budget: Option<f64>,
    pub slope_band: [f64; 2],
}

impl Default for PocSection {
    fn default() -> Self {
        Self {
            kind: "bg".into(),
            epsilon: 0.5,
            ns: vec![8, 16, 32, 64, 128],
            n_step: 10,
            min_reps: 100_000,
            max_reps: 2_000_000,
            rel_se_target: 0.2,
            time_budget: None,
            slope_band: [-1.4, -0.6],
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MmdSelftestSection {
    pub reps: usize,
    pub samples: usize,
}

impl Default for MmdSelftestSection {
    fn default() -> Self {
        Self {
            reps: 200,
            samples: 300,
        }
    }
}

/// One validation failure, anchored to a source line when the key is present.
#[derive(Clone, Debug, PartialEq)]
pub struct Issue {
    pub key: String,
    pub message: String,
    pub line: Option<usize>,
}

#[derive(Debug)]
pub struct ConfigError {
    pub path: PathBuf,
    pub issues: Vec<Issue>,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, issue) in self.issues.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            match issue.line {
                Some(l) => write!(f, "{}:{l}: ", self.path.display())?,
                None => write!(f, "{}: ", self.path.display())?,
            }
            if issue.key.is_empty() {
                write!(f, "{}", issue.message)?;
            } else {
                write!(f, "{}: {}", issue.key, issue.message)?;
            }
        }
        Ok(())
    }
}

impl std::error::Error for ConfigError {}

fn line_of(src: &str, offset: usize) -> usize {
    src[..offset.min(src.len())].bytes().filter(|b| *b == b'\n').count() + 1
}

/// Line of a dotted key, or of its closest present ancestor.
fn locate(doc: &toml_edit::Document<&str>, src: &str, key: &str) -> Option<usize> {
    let mut table: &dyn toml_edit::TableLike = doc.as_table();
    let mut found = None;
    for part in key.split('.') {
        let (k, item) = table.get_key_value(part)?;
        if let Some(span) = k.span() {
            found = Some(line_of(src, span.start));
        }
        match item.as_table_like() {
            Some(t) => table = t,
            None => break,
        }
    }
    found
}

fn in_range(v: f64, lo: f64, hi: f64) -> bool {
    v > lo && v < hi
}

impl RunConfig {
    /// Defaults for an experiment run without a config file.
    pub fn defaults_for(experiment: &str) -> Self {
        toml::from_str(&format!("experiment = \"{experiment}\"")).expect("defaults parse")
    }

    /// Schema and cross-field checks. Keys are dotted paths.
    pub fn check(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        let mut bad = |k: &str, m: String| out.push((k.to_string(), m));
        if self.experiment.is_empty() {
            bad("experiment", format!("required; one of {}", EXPERIMENTS.join(", ")));
        } else if !EXPERIMENTS.contains(&self.experiment.as_str()) {
            bad(
                "experiment",
                format!("unknown experiment `{}`; expected one of {}", self.experiment, EXPERIMENTS.join(", ")),
            );
        }
        if self.seeds.is_empty() {
            bad("seeds", "at least one seed is required".into());
        }
        let simulates = matches!(self.experiment.as_str(), "run2d" | "compare-dm");
        if simulates {
            if self.n_particles == 0 {
                bad("n_particles", "must be at least 1".into());
            }
            if self.record_every == 0 {
                bad("record_every", "must be at least 1".into());
            }
            if !DIVERGENCE.contains(&self.divergence.as_str()) {
                bad(
                    "divergence",
                    format!("unknown policy `{}`; expected one of {}", self.divergence, DIVERGENCE.join(", ")),
                );
            }
            self.check_target(&mut bad);
            if !(self.auxiliary_target.sigma > 0.0) {
                bad("auxiliary_target.sigma", "must be positive".into());
            }
            for (name, s) in [("primary_sampler", &self.primary_sampler), ("auxiliary_sampler", &self.auxiliary_sampler)] {
                if s.kind().is_none() {
                    bad(
                        &format!("{name}.kind"),
                        format!("unknown sampler `{}`; expected one of {}", s.kind, SamplerKind::NAMES.join(", ")),
                    );
                }
                if !(s.step >= 0.0 && s.step.is_finite()) {
                    bad(&format!("{name}.step"), "must be finite and nonnegative".into());
                }
                if !(s.tau > 0.0 && s.tau.is_finite()) {
                    bad(&format!("{name}.tau"), "must be positive".into());
                }
                if !(0.0..=1.0).contains(&s.rms_beta) {
                    bad(&format!("{name}.rms_beta"), "must lie in [0, 1]".into());
                }
                if !(s.rms_eps > 0.0) {
                    bad(&format!("{name}.rms_eps"), "must be positive".into());
                }
            }
            self.check_jump(&self.jump.kind, self.jump.epsilon, "jump", &mut bad);
            for (name, init) in [("init_primary", &self.init_primary), ("init_auxiliary", &self.init_auxiliary)] {
                if !INITS.contains(&init.kind.as_str()) {
                    bad(
                        &format!("{name}.kind"),
                        format!("unknown initializer `{}`; expected one of {}", init.kind, INITS.join(", ")),
                    );
                }
                if !(init.low < init.high) {
                    bad(&format!("{name}.high"), "must exceed low".into());
                }
            }
            let m = &self.metrics;
            if m.reference_samples == 1 {
                bad("metrics.reference_samples", "must be 0 (disabled) or at least 2".into());
            }
            if m.kernel_scales.is_empty() || m.kernel_scales.iter().any(|s| !(*s > 0.0)) {
                bad("metrics.kernel_scales", "must be a nonempty list of positive numbers".into());
            }
        }
        if self.experiment == "oracle-suite" {
            let o = &self.oracle;
            if !["bundled", "random"].contains(&o.instance.as_str()) {
                bad("oracle.instance", format!("unknown instance `{}`; expected bundled, random", o.instance));
            }
            let s = if o.instance == "bundled" { 4 } else { o.size };
            if o.instance == "random" && !(2..=12).contains(&o.size) {
                bad("oracle.size", "must lie in 2..=12".into());
            }
            if !in_range(o.epsilon, 0.0, 1.0) {
                bad("oracle.epsilon", format!("must lie in (0, 1), got {}", o.epsilon));
            }
            if o.mu0 >= s {
                bad("oracle.mu0", format!("state index out of range for {s} states"));
            }
            if o.eta0 >= s {
                bad("oracle.eta0", format!("state index out of range for {s} states"));
            }
            if o.v.as_ref().is_some_and(|v| v.len() != s || v.iter().any(|x| !(*x >= 0.0))) {
                bad("oracle.v", format!("must list {s} nonnegative values"));
            }
            if !(o.beta >= 0.0) {
                bad("oracle.beta", "must be nonnegative".into());
            }
        }
        if self.experiment == "poc" {
            let p = &self.poc;
            self.check_jump(&p.kind, p.epsilon, "poc", &mut bad);
            if p.kind == "none" {
                bad("poc.kind", "needs an interaction (bg or ar)".into());
            }
            if p.ns.len() < 2 || p.ns.contains(&0) {
                bad("poc.ns", "needs at least two positive particle counts".into());
            }
            if p.min_reps == 0 || p.max_reps < p.min_reps {
                bad("poc.max_reps", "need 0 < min_reps <= max_reps".into());
            }
            if !(p.slope_band[0] < p.slope_band[1]) {
                bad("poc.slope_band", "lower end must be below upper end".into());
            }
        }
        if self.experiment == "mmd-selftest" && (self.mmd_selftest.reps < 2 || self.mmd_selftest.samples < 2) {
            bad("mmd_selftest.reps", "reps and samples must be at least 2".into());
        }
        out
    }

    fn check_jump(&self, kind: &str, eps: f64, section: &str, bad: &mut impl FnMut(&str, String)) {
        if !Interaction::NAMES.contains(&kind) {
            bad(
                &format!("{section}.kind"),
                format!("unknown interaction `{kind}`; expected one of {}", Interaction::NAMES.join(", ")),
            );
        } else if kind != "none" && !in_range(eps, 0.0, 1.0) {
            bad(&format!("{section}.epsilon"), format!("must lie in (0, 1), got {eps}"));
        }
    }

    fn check_target(&self, bad: &mut impl FnMut(&str, String)) {
        let t = &self.target;
        if !TARGETS.contains(&t.name.as_str()) {
            bad(
                "target.name",
                format!("unknown target `{}`; registered targets: {}", t.name, TARGETS.join(", ")),
            );
            return;
        }
        for k in t.given() {
            if !t.allowed().contains(&k) {
                bad(&format!("target.{k}"), format!("not a parameter of `{}`", t.name));
            }
        }
        let positive = |v: Option<f64>| v.is_none_or(|x| x > 0.0 && x.is_finite());
        if !positive(t.sigma) {
            bad("target.sigma", "must be positive".into());
        }
        if !positive(t.radius) {
            bad("target.radius", "must be positive".into());
        }
        if !positive(t.width) {
            bad("target.width", "must be positive".into());
        }
        if t.n_components == Some(0) {
            bad("target.n_components", "must be at least 1".into());
        }
        if t.dim == Some(0) {
            bad("target.dim", "must be at least 1".into());
        }
        if let (Some(d), Some(m)) = (t.dim, &t.mean) {
            if d != m.len() {
                bad("target.mean", format!("has {} entries but dim is {d}", m.len()));
            }
        }
        if t.coords.as_ref().is_some_and(Vec::is_empty) {
            bad("target.coords", "must be nonempty".into());
        }
        if t.weights.is_some_and(|w| w.iter().any(|x| !(*x >= 0.0)) || w[0] + w[1] <= 0.0) {
            bad("target.weights", "must be nonnegative with a positive sum".into());
        }
        if t.radii.is_some_and(|r| r.iter().any(|x| !(*x > 0.0))) {
            bad("target.radii", "must be positive".into());
        }
    }
}

/// Reads, parses and validates a config file. `experiment` overrides the
/// file's own `experiment` key.
pub fn load(path: &Path, experiment: Option<&str>) -> Result<RunConfig, ConfigError> {
    let fail = |issues| ConfigError {
        path: path.to_path_buf(),
        issues,
    };
    let src = std::fs::read_to_string(path).map_err(|e| {
        fail(vec![Issue {
            key: String::new(),
            message: format!("cannot read config: {e}"),
            line: None,
        }])
    })?;
    parse(&src, path, experiment)
}

/// Parses and validates config text; `path` is only used in messages.
pub fn parse(src: &str, path: &Path, experiment: Option<&str>) -> Result<RunConfig, ConfigError> {
    let fail = |issues| ConfigError {
        path: path.to_path_buf(),
        issues,
    };
    let mut cfg: RunConfig = toml::from_str(src).map_err(|e| {
        let message = e.message().trim().to_string();
        fail(vec![Issue {
            key: String::new(),
            message,
            line: e.span().map(|s| line_of(src, s.start)),
        }])
    })?;
    if let Some(e) = experiment {
        cfg.experiment = e.to_string();
    }
    let problems = cfg.check();
    if problems.is_empty() {
        return Ok(cfg);
    }
    let doc = toml_edit::Document::parse(src).ok();
    Err(fail(
        problems
            .into_iter()
            .map(|(key, message)| Issue {
                line: doc.as_ref().and_then(|d| locate(d, src, &key)),
                key,
                message,
            })
            .collect(),
    ))
}
