//! Experiment configuration: a single JSON document.

use std::path::{Path, PathBuf};

use noisy_chaos::diagnostics::{TimeGrid, TimeGridSpec};
use noisy_chaos::montecarlo::TrajectoryConfig;
use noisy_chaos::noise::{Ensemble, NoiseProfile, NoiseSpec};
use noisy_chaos::{CMat, C64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    SffScan,
    TwoPointScan,
    LanczosScan,
    OtocScan,
    TransferScan,
    ReturnScan,
    SffVarianceScan,
    OracleCompare,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Self::SffScan => "sff_scan",
            Self::TwoPointScan => "two_point_scan",
            Self::LanczosScan => "lanczos_scan",
            Self::OtocScan => "otoc_scan",
            Self::TransferScan => "transfer_scan",
            Self::ReturnScan => "return_scan",
            Self::SffVarianceScan => "sff_variance_scan",
            Self::OracleCompare => "oracle_compare",
        }
    }
}

/// Either `{sample, dim, n_realizations, seed}` or `{file}`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample: Option<Ensemble>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_realizations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
}

/// Validated spectrum source.
#[derive(Debug, Clone, PartialEq)]
pub enum SpectrumSource {
    Sample { ensemble: Ensemble, dim: usize, n_realizations: usize, seed: u64 },
    File(PathBuf),
}

impl SpectrumConfig {
    pub fn source(&self, base: &Path) -> Result<SpectrumSource, CliError> {
        let field = |f: &str, msg: &str| CliError::Config(format!("spectrum.{f}: {msg}"));
        match (&self.sample, &self.file) {
            (Some(_), Some(_)) => Err(field("file", "give either `sample` or `file`, not both")),
            (None, None) => Err(CliError::Config("spectrum: one of `sample` or `file` is required".into())),
            (Some(ensemble), None) => {
                let dim = self.dim.ok_or_else(|| field("dim", "required with `sample`"))?;
                if dim < 2 {
                    return Err(field("dim", "must be at least 2"));
                }
                let n_realizations = self.n_realizations.unwrap_or(1);
                if n_realizations == 0 {
                    return Err(field("n_realizations", "must be positive"));
                }
                Ok(SpectrumSource::Sample { ensemble: *ensemble, dim, n_realizations, seed: self.seed.unwrap_or(0) })
            }
            (None, Some(path)) => {
                for (name, set) in [("dim", self.dim.is_some()), ("n_realizations", self.n_realizations.is_some()), ("seed", self.seed.is_some())] {
                    if set {
                        return Err(field(name, "not allowed with `file`"));
                    }
                }
                let full = if path.is_absolute() { path.clone() } else { base.join(path) };
                if !full.is_file() {
                    return Err(field("file", &format!("{} does not exist", full.display())));
                }
                Ok(SpectrumSource::File(full))
            }
        }
    }
}

/// Operator used by the two-point and OTOC experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum OperatorSpec {
    /// Entries uniform in the unit square.
    Random { seed: u64 },
    /// Hermitian part of a random operator, optionally made traceless.
    RandomHermitian {
        seed: u64,
        #[serde(default)]
        traceless: bool,
    },
    Matrix {
        re: Vec<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        im: Option<Vec<Vec<f64>>>,
    },
}

impl OperatorSpec {
    pub fn build(&self, d: usize) -> Result<CMat, CliError> {
        let random = |seed: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            CMat::from_fn(d, d, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        };
        match self {
            Self::Random { seed } => Ok(random(*seed)),
            Self::RandomHermitian { seed, traceless } => {
                let m = random(*seed);
                let mut h = (&m + m.adjoint()) * C64::new(0.5, 0.0);
                if *traceless {
                    let shift = h.trace() / C64::new(d as f64, 0.0);
                    for k in 0..d {
                        h[(k, k)] -= shift;
                    }
                }
                Ok(h)
            }
            Self::Matrix { re, im } => {
                let square = |m: &Vec<Vec<f64>>| m.len() == d && m.iter().all(|r| r.len() == d);
                if !square(re) || !im.as_ref().map(square).unwrap_or(true) {
                    return Err(CliError::Config(format!("operator matrix must be {d} x {d}")));
                }
                Ok(CMat::from_fn(d, d, |i, j| C64::new(re[i][j], im.as_ref().map(|m| m[i][j]).unwrap_or(0.0))))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LanczosOptions {
    /// Width of the `sech(alpha t)` autocorrelation.
    #[serde(default = "one")]
    pub alpha: f64,
    #[serde(default = "default_n_max")]
    pub n_max: usize,
    /// Real weight `Tr O Tr O^dag / D^2` of the noisy moments.
    #[serde(default)]
    pub weight: f64,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
}

impl Default for LanczosOptions {
    fn default() -> Self {
        Self { alpha: 1.0, n_max: default_n_max(), weight: 0.0, threshold: default_threshold() }
    }
}

fn one() -> f64 {
    1.0
}

fn default_n_max() -> usize {
    30
}

fn default_threshold() -> f64 {
    noisy_chaos::diagnostics::DEFAULT_BREAKDOWN_THRESHOLD
}

fn default_z() -> f64 {
    3.0
}

fn default_identity_tol() -> f64 {
    1e-10
}

fn default_operator() -> OperatorSpec {
    OperatorSpec::Random { seed: 1 }
}

fn default_a() -> OperatorSpec {
    OperatorSpec::RandomHermitian { seed: 2, traceless: true }
}

fn default_b() -> OperatorSpec {
    OperatorSpec::RandomHermitian { seed: 3, traceless: true }
}

fn default_to() -> usize {
    1
}

/// Experiment-specific knobs, all defaulted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservableOptions {
    #[serde(default = "default_operator")]
    pub operator: OperatorSpec,
    #[serde(default = "default_a")]
    pub a: OperatorSpec,
    #[serde(default = "default_b")]
    pub b: OperatorSpec,
    #[serde(default)]
    pub from: usize,
    #[serde(default = "default_to")]
    pub to: usize,
    /// Groups of eigenstate indices, one projector per group; eigenbasis
    /// projectors when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partition: Option<Vec<Vec<usize>>>,
    #[serde(default)]
    pub lanczos: LanczosOptions,
    /// Largest accepted `|analytic - MC| / stderr`.
    #[serde(default = "default_z")]
    pub z_threshold: f64,
    /// Tolerance of closed form vs channel-contraction comparisons.
    #[serde(default = "default_identity_tol")]
    pub identity_tolerance: f64,
}

impl Default for ObservableOptions {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields defaulted")
    }
}

fn default_true() -> bool {
    true
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_out")]
    pub dir: PathBuf,
    #[serde(default = "default_true")]
    pub csv: bool,
    #[serde(default = "default_true")]
    pub json: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: default_out(), csv: true, json: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spectrum: Option<SpectrumConfig>,
    pub noise: NoiseSpec,
    pub t_grid: TimeGridSpec,
    #[serde(rename = "J_list")]
    pub j_list: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub montecarlo: Option<TrajectoryConfig>,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub observables: ObservableOptions,
}

impl ExperimentConfig {
    /// Parses JSON, reporting the path of the offending field.
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| CliError::Config(format!("{}: {}", e.path(), e.inner())))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Applies a seed override to the spectrum sampler and the trajectories.
    pub fn override_seed(&mut self, seed: u64) {
        if let Some(s) = &mut self.spectrum {
            if s.sample.is_some() {
                s.seed = Some(seed);
            }
        }
        if let Some(mc) = &mut self.montecarlo {
            mc.seed = seed;
        }
    }

    /// Checks every field that can be checked without running anything.
    pub fn validate(&self, base: &Path) -> Result<(), CliError> {
        let cfg = |m: String| CliError::Config(m);
        self.t_grid.build().map_err(|e| cfg(format!("t_grid: {e}")))?;
        if self.j_list.is_empty() {
            return Err(cfg("J_list: must be nonempty".into()));
        }
        if let Some((k, j)) = self.j_list.iter().enumerate().find(|(_, j)| !(j.is_finite() && **j >= 0.0)) {
            return Err(cfg(format!("J_list[{k}]: {j} is not finite and nonnegative")));
        }
        match &self.spectrum {
            Some(s) => {
                s.source(base)?;
            }
            None if self.experiment != Experiment::LanczosScan => return Err(cfg("spectrum: required for this experiment".into())),
            None => {}
        }
        if self.experiment == Experiment::OracleCompare && self.montecarlo.is_none() {
            return Err(cfg("montecarlo: required for oracle_compare".into()));
        }
        let needs_gue_const = matches!(self.experiment, Experiment::OtocScan | Experiment::ReturnScan | Experiment::SffVarianceScan);
        let gue_const = self.noise.ensemble == Ensemble::Gue && matches!(self.noise.profile, NoiseProfile::ConstantOverD { .. });
        if needs_gue_const && !gue_const {
            return Err(cfg(format!("noise: {} needs a gue `const` profile", self.experiment.name())));
        }
        let o = &self.observables;
        if !(o.z_threshold > 0.0) {
            return Err(cfg("observables.z_threshold: must be positive".into()));
        }
        if !(o.identity_tolerance > 0.0) {
            return Err(cfg("observables.identity_tolerance: must be positive".into()));
        }
        let l = &o.lanczos;
        if !(l.alpha.is_finite() && l.alpha > 0.0) {
            return Err(cfg("observables.lanczos.alpha: must be positive".into()));
        }
        if !l.weight.is_finite() {
            return Err(cfg("observables.lanczos.weight: must be finite".into()));
        }
        if l.n_max == 0 {
            return Err(cfg("observables.lanczos.n_max: must be positive".into()));
        }
        Ok(())
    }

    /// Noise descriptor at strength `j`: `J` replaces the profile strength
    /// of `const` and `gibbs`, and scales a `matrix` profile.
    pub fn noise_at(&self, j: f64) -> NoiseSpec {
        let profile = match &self.noise.profile {
            NoiseProfile::ConstantOverD { .. } => NoiseProfile::ConstantOverD { j },
            NoiseProfile::Gibbs { beta, .. } => NoiseProfile::Gibbs { j, beta: *beta },
            NoiseProfile::Matrix { lambda } => NoiseProfile::Matrix { lambda: lambda.iter().map(|r| r.iter().map(|x| x * j).collect()).collect() },
        };
        NoiseSpec { ensemble: self.noise.ensemble, profile }
    }

    pub fn grid(&self) -> Result<TimeGrid, CliError> {
        self.t_grid.build().map_err(|e| CliError::Config(format!("t_grid: {e}")))
    }

    /// SHA-256 of the canonical JSON form, without the output directory.
    pub fn sha256(&self) -> String {
        let mut c = self.clone();
        c.output.dir = PathBuf::new();
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        format!("{:x}", Sha256::digest(&bytes))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "experiment": "sff_scan",
        "spectrum": {"sample": "gue", "dim": 6, "n_realizations": 2, "seed": 4},
        "noise": {"ensemble": "gue", "profile": {"type": "const", "J": 1.0}},
        "t_grid": {"t_min": 0.1, "t_max": 10.0, "n_points": 5, "spacing": "log"},
        "J_list": [0.0, 1.0]
    }"#;

    #[test]
    fn parses_minimal_config() {
        let c = ExperimentConfig::from_json(MINIMAL).unwrap();
        assert_eq!(c.experiment, Experiment::SffScan);
        assert_eq!(c.observables.z_threshold, 3.0);
        assert!(c.output.csv && c.output.json);
        c.validate(Path::new(".")).unwrap();
        let src = c.spectrum.as_ref().unwrap().source(Path::new(".")).unwrap();
        assert_eq!(src, SpectrumSource::Sample { ensemble: Ensemble::Gue, dim: 6, n_realizations: 2, seed: 4 });
    }

    #[test]
    fn errors_carry_field_paths() {
        let bad = MINIMAL.replace("\"spacing\": \"log\"", "\"spacing\": \"cubic\"");
        let e = ExperimentConfig::from_json(&bad).unwrap_err().to_string();
        assert!(e.contains("t_grid.spacing"), "{e}");
        let bad = MINIMAL.replace("\"J\": 1.0", "\"J\": 1.0, \"K\": 2");
        let e = ExperimentConfig::from_json(&bad).unwrap_err().to_string();
        assert!(e.contains("noise.profile"), "{e}");
        let bad = MINIMAL.replace("[0.0, 1.0]", "[]");
        let e = ExperimentConfig::from_json(&bad).unwrap().validate(Path::new(".")).unwrap_err().to_string();
        assert!(e.contains("J_list"), "{e}");
        let bad = MINIMAL.replace("\"dim\": 6, ", "");
        let e = ExperimentConfig::from_json(&bad).unwrap().validate(Path::new(".")).unwrap_err().to_string();
        assert!(e.contains("spectrum.dim"), "{e}");
    }

    #[test]
    fn missing_spectrum_file_is_rejected() {
        let bad = MINIMAL.replace(r#""sample": "gue", "dim": 6, "n_realizations": 2, "seed": 4"#, r#""file": "no/such/file.json""#);
        let e = ExperimentConfig::from_json(&bad).unwrap().validate(Path::new(".")).unwrap_err().to_string();
        assert!(e.contains("spectrum.file"), "{e}");
    }

    #[test]
    fn hash_ignores_output_dir_but_not_seed() {
        let mut a = ExperimentConfig::from_json(MINIMAL).unwrap();
        let h = a.sha256();
        assert_eq!(h.len(), 64);
        a.output.dir = PathBuf::from("elsewhere");
        assert_eq!(a.sha256(), h);
        a.override_seed(9);
        assert_ne!(a.sha256(), h);
    }

    #[test]
    fn j_overrides_profile_strength() {
        let c = ExperimentConfig::from_json(MINIMAL).unwrap();
        assert_eq!(c.noise_at(2.5).profile, NoiseProfile::ConstantOverD { j: 2.5 });
    }

    #[test]
    fn operators_have_requested_structure() {
        let h = OperatorSpec::RandomHermitian { seed: 1, traceless: true }.build(4).unwrap();
        assert!((&h - h.adjoint()).iter().all(|z| z.norm() < 1e-15));
        assert!(h.trace().norm() < 1e-14);
        assert!(OperatorSpec::Matrix { re: vec![vec![1.0]], im: None }.build(2).is_err());
    }
}
