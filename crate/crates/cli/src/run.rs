//! Executes an experiment and writes its artifacts.

use std::fs;
use std::path::{Path, PathBuf};

use noisy_chaos::channel_two::{otoc, sff_variance};
use noisy_chaos::diagnostics::{
    eval_on_grid, noisy_lanczos, return_probability, sech_moments, sff_from_channel, sff_goe_const, sff_gue_const, transfer_probability,
    two_point_from_channel, two_point_goe_const, two_point_gue_const, DiagnosticSeries, Partition, SeriesMetadata, TimeGrid,
};
use noisy_chaos::montecarlo::{estimate, max_z_score, McObservable, TrajectoryConfig};
use noisy_chaos::noise::{Ensemble, NoiseModel};
use noisy_chaos::spectra::{sample_goe_spectrum, sample_gue_spectrum, Spectrum};
use noisy_chaos::{CMat, Error, C64};
use num::BigRational;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{Experiment, ExperimentConfig, SpectrumSource};
use crate::CliError;

/// Command-line overrides.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    /// Nothing was compared.
    None,
}

/// Closed form against Monte Carlo.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    #[serde(rename = "J")]
    pub j: f64,
    pub series: String,
    pub max_z: f64,
    pub threshold: f64,
    pub pass: bool,
}

/// Closed form against the channel-contraction route.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdentityCheck {
    #[serde(rename = "J")]
    pub j: f64,
    pub series: String,
    pub max_abs_diff: f64,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub config_sha256: String,
    pub experiment: Experiment,
    pub status: Status,
    pub files: Vec<String>,
    pub comparisons: Vec<Comparison>,
    pub identities: Vec<IdentityCheck>,
    pub notes: Vec<String>,
}

impl Summary {
    pub fn exit_code(&self) -> i32 {
        if self.status == Status::Fail {
            2
        } else {
            0
        }
    }
}

#[derive(Default)]
struct JobOutput {
    series: Vec<DiagnosticSeries>,
    comparisons: Vec<Comparison>,
    identities: Vec<IdentityCheck>,
    notes: Vec<String>,
}

struct Context<'a> {
    cfg: &'a ExperimentConfig,
    spectra: Vec<Spectrum>,
    grid: TimeGrid,
    ops: Operators,
}

#[derive(Default)]
struct Operators {
    o: Option<CMat>,
    a: Option<CMat>,
    b: Option<CMat>,
    partition: Option<Partition>,
}

/// Loads `path` and runs it, resolving relative spectrum files against the
/// config's directory.
pub fn run_file(path: &Path, opts: &RunOptions) -> Result<Summary, CliError> {
    let cfg = ExperimentConfig::load(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    run(cfg, base, opts)
}

pub fn run(mut cfg: ExperimentConfig, base: &Path, opts: &RunOptions) -> Result<Summary, CliError> {
    if let Some(out) = &opts.out {
        cfg.output.dir = out.clone();
    }
    if let Some(seed) = opts.seed {
        cfg.override_seed(seed);
    }
    cfg.validate(base)?;
    match opts.threads {
        Some(0) => Err(CliError::Config("--threads: must be positive".into())),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(n).build().map_err(|e| CliError::Config(format!("--threads: {e}")))?;
            pool.install(|| execute(&cfg, base))
        }
        None => execute(&cfg, base),
    }
}

fn execute(cfg: &ExperimentConfig, base: &Path) -> Result<Summary, CliError> {
    let hash = cfg.sha256();
    let spectra = match &cfg.spectrum {
        Some(s) => load_spectra(&s.source(base)?)?,
        None => Vec::new(),
    };
    let ops = build_operators(cfg, spectra.first().map(Spectrum::dim))?;
    let ctx = Context { cfg, spectra, grid: cfg.grid()?, ops };
    let jobs: Vec<JobOutput> = cfg.j_list.par_iter().map(|&j| job(&ctx, j)).collect::<Result<_, _>>()?;

    let out_dir = &cfg.output.dir;
    fs::create_dir_all(out_dir).map_err(|e| CliError::Io(format!("{}: {e}", out_dir.display())))?;
    let mut summary = Summary {
        config_sha256: hash.clone(),
        experiment: cfg.experiment,
        status: Status::None,
        files: Vec::new(),
        comparisons: Vec::new(),
        identities: Vec::new(),
        notes: Vec::new(),
    };
    let spectrum_hash = combined_hash(&ctx.spectra);
    for (&j, out) in cfg.j_list.iter().zip(jobs) {
        for mut s in out.series {
            s.metadata.config_sha256 = Some(hash.clone());
            s.metadata.extra.insert("experiment".into(), cfg.experiment.name().into());
            s.metadata.extra.insert("J".into(), j.into());
            if ctx.spectra.len() > 1 {
                s.metadata.spectrum_hash = spectrum_hash.clone();
                s.metadata.extra.insert("n_realizations".into(), ctx.spectra.len().into());
            }
            let stem = format!("{}_J{}_{}", cfg.experiment.name(), j, s.name);
            if cfg.output.csv {
                let name = format!("{stem}.csv");
                let file = fs::File::create(out_dir.join(&name)).map_err(|e| CliError::Io(format!("{name}: {e}")))?;
                s.write_csv(std::io::BufWriter::new(file))?;
                summary.files.push(name);
            }
            if cfg.output.json {
                let name = format!("{stem}.json");
                write(&out_dir.join(&name), s.to_json()?)?;
                summary.files.push(name);
            }
        }
        summary.comparisons.extend(out.comparisons);
        summary.identities.extend(out.identities);
        summary.notes.extend(out.notes);
    }
    let checked = !summary.comparisons.is_empty() || !summary.identities.is_empty();
    let ok = summary.comparisons.iter().all(|c| c.pass) && summary.identities.iter().all(|c| c.pass);
    summary.status = match (checked, ok) {
        (false, _) => Status::None,
        (true, true) => Status::Pass,
        (true, false) => Status::Fail,
    };
    let text = serde_json::to_string_pretty(&summary).map_err(|e| CliError::Io(e.to_string()))?;
    write(&out_dir.join("summary.json"), text)?;
    Ok(summary)
}

fn write(path: &Path, text: String) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn load_spectra(src: &SpectrumSource) -> Result<Vec<Spectrum>, CliError> {
    match src {
        SpectrumSource::File(path) => Ok(vec![Spectrum::load(path).map_err(|e| CliError::Config(format!("spectrum.file: {e}")))?]),
        SpectrumSource::Sample { ensemble, dim, n_realizations, seed } => (0..*n_realizations)
            .into_par_iter()
            .map(|r| {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                rng.set_stream(r as u64);
                let s = match ensemble {
                    Ensemble::Gue => sample_gue_spectrum(*dim, &mut rng),
                    Ensemble::Goe => sample_goe_spectrum(*dim, &mut rng),
                };
                Ok(s?)
            })
            .collect(),
    }
}

fn combined_hash(spectra: &[Spectrum]) -> String {
    let mut h = Sha256::new();
    for s in spectra {
        h.update(s.content_hash().as_bytes());
    }
    format!("{:x}", h.finalize())
}

fn build_operators(cfg: &ExperimentConfig, dim: Option<usize>) -> Result<Operators, CliError> {
    let Some(d) = dim else { return Ok(Operators::default()) };
    let o = &cfg.observables;
    let needs = |e: &[Experiment]| e.contains(&cfg.experiment);
    let field = |name: &'static str| move |e: CliError| CliError::Config(format!("observables.{name}: {e}"));
    let mut ops = Operators::default();
    if needs(&[Experiment::TwoPointScan, Experiment::OracleCompare]) {
        ops.o = Some(o.operator.build(d).map_err(field("operator"))?);
    }
    if needs(&[Experiment::OtocScan, Experiment::OracleCompare]) {
        ops.a = Some(o.a.build(d).map_err(field("a"))?);
        ops.b = Some(o.b.build(d).map_err(field("b"))?);
    }
    if needs(&[Experiment::TransferScan, Experiment::OracleCompare]) {
        for (name, k) in [("from", o.from), ("to", o.to)] {
            if k >= d {
                return Err(CliError::Config(format!("observables.{name}: index {k} out of range for D = {d}")));
            }
        }
    }
    if needs(&[Experiment::ReturnScan]) {
        let partition = match &o.partition {
            None => Partition::Eigenbasis,
            Some(groups) => Partition::Projectors(
                groups
                    .iter()
                    .map(|g| {
                        let mut p = CMat::zeros(d, d);
                        for &k in g {
                            if k >= d {
                                return Err(CliError::Config(format!("observables.partition: index {k} out of range for D = {d}")));
                            }
                            p[(k, k)] = C64::new(1.0, 0.0);
                        }
                        Ok(p)
                    })
                    .collect::<Result<_, _>>()?,
            ),
        };
        partition.validate(d).map_err(|e| CliError::Config(format!("observables.partition: {e}")))?;
        ops.partition = Some(partition);
    }
    Ok(ops)
}

fn job(ctx: &Context, j: f64) -> Result<JobOutput, CliError> {
    if ctx.cfg.experiment == Experiment::LanczosScan {
        return Ok(lanczos_job(ctx.cfg, j));
    }
    let noise = ctx.cfg.noise_at(j);
    let models: Vec<NoiseModel> = ctx.spectra.iter().map(|s| NoiseModel::from_spec(&noise, s)).collect::<Result<_, Error>>()?;
    let per_realization: Vec<(Vec<DiagnosticSeries>, Vec<IdentityCheck>)> = ctx
        .spectra
        .par_iter()
        .zip(&models)
        .map(|(s, m)| analytic(ctx, s, m, j))
        .collect::<Result<_, _>>()?;
    let mut out = JobOutput::default();
    let n_series = per_realization[0].0.len();
    for k in 0..n_series {
        let group: Vec<DiagnosticSeries> = per_realization.iter().map(|(s, _)| s[k].clone()).collect();
        out.series.push(DiagnosticSeries::mean(&group)?);
    }
    // worst identity mismatch over realizations
    for (k, first) in per_realization[0].1.iter().enumerate() {
        let worst = per_realization.iter().map(|(_, ids)| ids[k].max_abs_diff).fold(0.0, f64::max);
        out.identities.push(IdentityCheck { max_abs_diff: worst, pass: worst <= first.tolerance, ..first.clone() });
    }

    if let Some(mc) = &ctx.cfg.montecarlo {
        let observables = mc_observables(ctx, &models[0]);
        if observables.is_empty() {
            out.notes.push(format!("J={j}: no Monte Carlo estimator for {}", ctx.cfg.experiment.name()));
        } else {
            let runs: Vec<Vec<DiagnosticSeries>> = ctx
                .spectra
                .iter()
                .zip(&models)
                .enumerate()
                .map(|(r, (s, m))| {
                    let cfg = TrajectoryConfig { seed: mc.seed.wrapping_add(r as u64), ..mc.clone() };
                    estimate(s, m, &cfg, &ctx.grid, &observables)
                })
                .collect::<Result<_, Error>>()?;
            for k in 0..observables.len() {
                let group: Vec<&DiagnosticSeries> = runs.iter().map(|r| &r[k]).collect();
                let mut mean = average_mc(&group)?;
                let name = mean.name.clone();
                if let Some(a) = out.series.iter().find(|s| s.name == name) {
                    let max_z = max_z_score(a, &mean)?;
                    let threshold = ctx.cfg.observables.z_threshold;
                    out.comparisons.push(Comparison { j, series: name.clone(), max_z, threshold, pass: max_z <= threshold });
                }
                mean.name = format!("{name}_mc");
                out.series.push(mean);
            }
        }
    }
    Ok(out)
}

/// Mean of independent estimates; stderr `sqrt(sum se^2) / n`.
fn average_mc(group: &[&DiagnosticSeries]) -> Result<DiagnosticSeries, CliError> {
    let owned: Vec<DiagnosticSeries> = group.iter().map(|s| (*s).clone()).collect();
    let mut mean = DiagnosticSeries::mean(&owned)?;
    let n = group.len() as f64;
    let mut var = vec![0.0; mean.len()];
    for s in group {
        let se = s.stderr.as_ref().ok_or_else(|| CliError::Io("Monte Carlo series without stderr".into()))?;
        var.iter_mut().zip(se).for_each(|(v, e)| *v += e * e);
    }
    mean.stderr = Some(var.iter().map(|v| v.sqrt() / n).collect());
    Ok(mean)
}

fn is_gue_const(m: &NoiseModel) -> bool {
    m.ensemble() == Ensemble::Gue && m.constant_j().is_some()
}

fn sff(s: &Spectrum, m: &NoiseModel, grid: &TimeGrid) -> Result<DiagnosticSeries, Error> {
    match (m.ensemble(), m.constant_j()) {
        (Ensemble::Gue, Some(j)) => sff_gue_const(s, j, grid),
        (Ensemble::Goe, Some(j)) => sff_goe_const(s, j, grid),
        _ => sff_from_channel(s, m, grid),
    }
}

fn two_point(s: &Spectrum, m: &NoiseModel, o: &CMat, grid: &TimeGrid) -> Result<DiagnosticSeries, Error> {
    match (m.ensemble(), m.constant_j()) {
        (Ensemble::Gue, Some(j)) => two_point_gue_const(s, j, o, grid),
        (Ensemble::Goe, Some(j)) => two_point_goe_const(s, j, o, grid),
        _ => two_point_from_channel(s, m, o, grid),
    }
}

fn otoc_series(s: &Spectrum, m: &NoiseModel, j: f64, a: &CMat, b: &CMat, grid: &TimeGrid) -> Result<DiagnosticSeries, Error> {
    let values = eval_on_grid(grid, |t| otoc(s, j, t, a, b))?;
    Ok(DiagnosticSeries::new("otoc", grid, values, SeriesMetadata::new(s, m.describe())))
}

fn sff_moment_series(s: &Spectrum, m: &NoiseModel, j: f64, grid: &TimeGrid) -> Result<[DiagnosticSeries; 2], Error> {
    let moments: Vec<_> = grid.times().par_iter().map(|&t| sff_variance(s, j, t)).collect::<Result<_, _>>()?;
    let series = |name: &str, f: &dyn Fn(usize) -> f64| {
        let values = (0..grid.len()).map(|k| C64::new(f(k), 0.0)).collect();
        DiagnosticSeries::new(name, grid, values, SeriesMetadata::new(s, m.describe()))
    };
    Ok([series("sff_squared", &|k| moments[k].second_moment), series("sff_variance", &|k| moments[k].variance)])
}

fn identity(j: f64, name: &str, a: &DiagnosticSeries, b: &DiagnosticSeries, tolerance: f64) -> IdentityCheck {
    let max_abs_diff = a.values.iter().zip(&b.values).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
    IdentityCheck { j, series: name.into(), max_abs_diff, tolerance, pass: max_abs_diff <= tolerance }
}

fn analytic(ctx: &Context, s: &Spectrum, m: &NoiseModel, j: f64) -> Result<(Vec<DiagnosticSeries>, Vec<IdentityCheck>), CliError> {
    let grid = &ctx.grid;
    let ops = &ctx.ops;
    let o = &ctx.cfg.observables;
    let mut ids = Vec::new();
    let series = match ctx.cfg.experiment {
        Experiment::SffScan => vec![sff(s, m, grid)?],
        Experiment::TwoPointScan => vec![two_point(s, m, ops.o.as_ref().expect("operator built"), grid)?],
        Experiment::OtocScan => vec![otoc_series(s, m, j, ops.a.as_ref().expect("a built"), ops.b.as_ref().expect("b built"), grid)?],
        Experiment::TransferScan => vec![transfer_probability(s, m, o.from, o.to, grid)?],
        Experiment::ReturnScan => vec![return_probability(s, j, ops.partition.as_ref().expect("partition built"), grid)?],
        Experiment::SffVarianceScan => sff_moment_series(s, m, j, grid)?.into(),
        Experiment::OracleCompare => {
            let op = ops.o.as_ref().expect("operator built");
            let mut v = vec![sff(s, m, grid)?, two_point(s, m, op, grid)?, transfer_probability(s, m, o.from, o.to, grid)?];
            if m.constant_j().is_some() {
                let tol = o.identity_tolerance;
                ids.push(identity(j, "sff", &v[0], &sff_from_channel(s, m, grid)?, tol));
                ids.push(identity(j, "two_point", &v[1], &two_point_from_channel(s, m, op, grid)?, tol));
            }
            if is_gue_const(m) && s.dim() >= 3 {
                v.push(otoc_series(s, m, j, ops.a.as_ref().expect("a built"), ops.b.as_ref().expect("b built"), grid)?);
                let [sq, _] = sff_moment_series(s, m, j, grid)?;
                v.push(sq);
            }
            v
        }
        Experiment::LanczosScan => unreachable!("handled separately"),
    };
    Ok((series, ids))
}

fn mc_observables(ctx: &Context, m: &NoiseModel) -> Vec<McObservable> {
    let ops = &ctx.ops;
    let o = &ctx.cfg.observables;
    let otoc = || McObservable::Otoc { a: ops.a.clone().expect("a built"), b: ops.b.clone().expect("b built") };
    let transfer = McObservable::Transfer { from: o.from, to: o.to };
    match ctx.cfg.experiment {
        Experiment::SffScan => vec![McObservable::Sff],
        Experiment::TwoPointScan => vec![McObservable::TwoPoint(ops.o.clone().expect("operator built"))],
        Experiment::OtocScan => vec![otoc()],
        Experiment::TransferScan => vec![transfer],
        Experiment::SffVarianceScan => vec![McObservable::SffSquared],
        Experiment::OracleCompare => {
            let mut v = vec![McObservable::Sff, McObservable::TwoPoint(ops.o.clone().expect("operator built")), transfer];
            if is_gue_const(m) && m.dim() >= 3 {
                v.push(otoc());
                v.push(McObservable::SffSquared);
            }
            v
        }
        Experiment::ReturnScan | Experiment::LanczosScan => Vec::new(),
    }
}

/// Signed `b_n` of `sech(alpha t)` under noise strength `J`, indexed by `n`.
fn lanczos_job(cfg: &ExperimentConfig, j: f64) -> JobOutput {
    let l = &cfg.observables.lanczos;
    let mut out = JobOutput::default();
    let exact = |x: f64| BigRational::from_float(x).expect("validated finite");
    let mu = sech_moments(&exact(l.alpha), l.n_max);
    let b = match noisy_lanczos(&mu, &exact(j), &exact(l.weight), l.n_max, l.threshold) {
        Ok(r) => r.b_signed,
        Err(Error::KrylovBreakdown { level, computed }) => {
            out.notes.push(format!("J={j}: Krylov breakdown at n = {level}; {} coefficients kept", computed.len()));
            computed
        }
        Err(e) => {
            out.notes.push(format!("J={j}: {e}"));
            Vec::new()
        }
    };
    if b.is_empty() {
        return out;
    }
    let grid = TimeGrid::from_times((1..=b.len()).map(|n| n as f64).collect()).expect("increasing indices");
    let mut meta = SeriesMetadata { noise: format!("sech(alpha t), alpha={}, weight={}", l.alpha, l.weight), ..Default::default() };
    meta.extra.insert("abscissa".into(), "n".into());
    out.series.push(DiagnosticSeries::new("lanczos_b", &grid, b.iter().map(|&x| C64::new(x, 0.0)).collect(), meta));
    out
}
