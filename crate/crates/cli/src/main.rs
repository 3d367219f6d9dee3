use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use muchapro::design::RandomStudy;
use muchapro::io::{self, DirectionFile};
use muchapro::model::CMatrix;
use muchapro::sim::{CoherenceMap, MosaicRegion};
use muchapro::validate::{self, ValidationReport};
use muchapro::{
    build_operator, enforce_pd_field, invert_projections, make_phantom, optimize_directions, parse_despeckler,
    project, random_direction_study, render_composite, run_muchapro, sample_goodman, shipped_directions,
    CompositeMode, Decimated, Despeckler, DirectionSet, Error, LinearFilterWeights, MultiChannelSlc,
    Parameterization, PdEnforceParams, PdSetting, PhantomKind, PhantomSpec, PipelineOptions, Result,
    SmoothedConditionParams, Stretch, TransferKernel,
};
use num_complex::Complex64;
use serde::Serialize;

#[derive(Parser, Debug)]
#[command(name = "muchapro", version, about = "Multi-channel SAR despeckling through single-channel projections")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Random seed recorded in every output.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Log verbosity: -v info, -vv debug.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a phantom covariance field and a speckled multi-channel SLC.
    Simulate(SimulateArgs),
    /// Search for projection directions minimizing the condition number.
    OptimizeDirections(OptimizeArgs),
    /// Project a multi-channel SLC onto directions (one output channel per direction).
    Project(ProjectArgs),
    /// Despeckle every channel of an SLC into reflectivity rasters.
    Despeckle(DespeckleArgs),
    /// Recover covariances from despeckled projection rasters.
    Invert(InvertArgs),
    /// Full pipeline: project, despeckle, invert, optional enforce-pd and composite.
    Run(RunArgs),
    /// Floor reflectivities and cap coherences of a covariance field.
    EnforcePd(EnforcePdArgs),
    /// Render a covariance field as an 8-bit PNG.
    Composite(CompositeArgs),
    /// Statistical checks on an SLC and optionally on an estimate.
    Validate(ValidateArgs),
}

#[derive(Args, Debug, Serialize)]
struct SimulateArgs {
    /// constant | fringes | mosaic
    #[arg(long, default_value = "fringes")]
    phantom: String,
    /// Number of channels (fringes require 2).
    #[arg(long, default_value_t = 2)]
    dim: usize,
    #[arg(long, default_value_t = 256)]
    height: usize,
    #[arg(long, default_value_t = 256)]
    width: usize,
    #[arg(long, default_value_t = 1.0)]
    reflectivity: f64,
    /// Coherence `g` or a row ramp `from:to`.
    #[arg(long, default_value = "0.3:0.9")]
    coherence: String,
    /// Fringe frequency `fx,fy` in cycles per pixel.
    #[arg(long, default_value = "0.03125,0.0078125")]
    frequency: String,
    /// Interferometric phase step between consecutive channels (constant and mosaic).
    #[arg(long, default_value_t = 0.0)]
    phase: f64,
    /// Real system response applied after sampling: boxcar:N or gaussian:SIGMA:SIZE.
    #[arg(long)]
    transfer: Option<String>,
    /// Sample from this ground-truth field instead of a phantom.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Where to write the ground-truth field.
    #[arg(long)]
    truth_out: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct OptimizeArgs {
    #[arg(long)]
    dim: usize,
    /// Number of directions (default D^2).
    #[arg(long)]
    count: Option<usize>,
    #[arg(long, default_value = "hermitian")]
    mode: String,
    #[arg(long, default_value_t = 100)]
    restarts: usize,
    /// Comma-separated strictly decreasing smoothing parameters.
    #[arg(long, default_value = "1,0.3,0.1,0.03,0.01")]
    schedule: String,
    /// Instead of optimizing, report condition numbers of this many Gaussian draws.
    #[arg(long)]
    random_trials: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct ProjectArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    dirs: Option<PathBuf>,
    #[arg(long, default_value = "hermitian")]
    mode: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct DespeckleArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    despeckler: String,
    #[arg(long)]
    pre_decimate: Option<usize>,
    /// Output file for a single channel, or a directory receiving `kNNN.refl`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct InvertArgs {
    /// Reflectivity rasters, or one directory of `*.refl` files read in name order.
    #[arg(long = "in", required = true, num_args = 1..)]
    input: Vec<PathBuf>,
    #[arg(long)]
    dirs: PathBuf,
    #[arg(long, default_value = "hermitian")]
    mode: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct PdArgs {
    /// Reflectivity floor (default: 1e-3 times the median estimated reflectivity).
    #[arg(long)]
    rthml: Option<f64>,
    #[arg(long, default_value_t = muchapro::pd::DEFAULT_MAX_COHERENCE)]
    rhomax: f64,
}

#[derive(Args, Debug, Serialize)]
struct RunArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Direction file (default: the shipped K = D^2 set for the mode).
    #[arg(long)]
    dirs: Option<PathBuf>,
    #[arg(long, default_value = "boxcar:5")]
    despeckler: String,
    #[arg(long, default_value = "hermitian")]
    mode: String,
    #[arg(long)]
    pre_decimate: Option<usize>,
    /// Apply positive-definiteness enforcement.
    #[arg(long)]
    enforce_pd: bool,
    #[command(flatten)]
    #[serde(flatten)]
    pd: PdArgs,
    /// Replace the diagonals with despeckled per-channel reflectivities.
    #[arg(long)]
    substitute_reflectivities: bool,
    /// Also render an interferometric composite of channels 0 and 1 (or amplitude for D=1).
    #[arg(long)]
    composite: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct EnforcePdArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    pd: PdArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct CompositeArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// `insar:I,J` or `amplitude:D`.
    #[arg(long, default_value = "insar:0,1")]
    mode: String,
    #[arg(long, default_value_t = 0.99)]
    quantile: f64,
    #[arg(long, default_value_t = 0.7)]
    gamma: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct ValidateArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Directions for projection-level checks and the linear-filter equivalence check.
    #[arg(long)]
    dirs: Option<PathBuf>,
    #[arg(long, default_value = "hermitian")]
    mode: String,
    /// Estimated covariance field, compared against --truth.
    #[arg(long)]
    estimate: Option<PathBuf>,
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Report path (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Sidecar `<out>.prov` describing how a binary output was produced.
#[derive(Serialize)]
struct Provenance<'a, T: Serialize> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    seed: u64,
    parameters: &'a T,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    results: BTreeMap<String, String>,
}

struct Context {
    seed: u64,
    jobs: Option<usize>,
}

fn user(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

fn sidecar_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".prov");
    PathBuf::from(s)
}

fn write_provenance<T: Serialize>(
    out: &Path,
    command: &str,
    ctx: &Context,
    params: &T,
    results: BTreeMap<String, String>,
) -> Result<()> {
    let prov = Provenance {
        tool: "muchapro",
        version: muchapro::VERSION,
        command,
        seed: ctx.seed,
        parameters: params,
        results,
    };
    let text = toml::to_string(&prov).map_err(|e| Error::Format(format!("provenance: {e}")))?;
    std::fs::write(sidecar_path(out), text)?;
    Ok(())
}

fn parse_mode(s: &str) -> Result<Parameterization> {
    s.parse()
}

fn load_directions(path: Option<&Path>, dim: usize, mode: Parameterization) -> Result<DirectionSet> {
    let file = match path {
        Some(p) => io::read_direction_file(p)?,
        None => shipped_directions(dim, mode)?,
    };
    if file.directions.dim() != dim {
        return Err(user(format!(
            "direction file is for D={}, image has D={dim}",
            file.directions.dim()
        )));
    }
    Ok(file.directions)
}

fn despeckler(spec: &str, pre_decimate: Option<usize>) -> Result<Box<dyn Despeckler>> {
    let inner = parse_despeckler(spec)?;
    Ok(match pre_decimate {
        Some(0) => return Err(user("--pre-decimate must be at least 1")),
        Some(f) if f > 1 => Box::new(Decimated { inner, factor: f }),
        _ => inner,
    })
}

fn simulate(ctx: &Context, a: &SimulateArgs) -> Result<()> {
    let truth = match &a.truth {
        Some(p) => io::read_mccov_file(p)?,
        None => {
            let coherence = match a.coherence.split_once(':') {
                Some((f, t)) => CoherenceMap::RowRamp {
                    from: f.parse().map_err(|e| user(format!("bad coherence: {e}")))?,
                    to: t.parse().map_err(|e| user(format!("bad coherence: {e}")))?,
                },
                None => CoherenceMap::Constant(a.coherence.parse().map_err(|e| user(format!("bad coherence: {e}")))?),
            };
            let (gmin, _) = match coherence {
                CoherenceMap::Constant(g) => (g, g),
                CoherenceMap::RowRamp { from, to } | CoherenceMap::ColumnRamp { from, to } => (from, to),
            };
            let coherent = |r: f64, g: f64| {
                let mut m = CMatrix::identity(a.dim, a.dim) * Complex64::new(r * (1.0 - g), 0.0);
                let v: Vec<Complex64> = (0..a.dim).map(|d| Complex64::from_polar(1.0, a.phase * d as f64)).collect();
                for i in 0..a.dim {
                    for j in 0..a.dim {
                        m[(i, j)] += v[i] * v[j].conj() * r * g;
                    }
                }
                m
            };
            let kind = match a.phantom.as_str() {
                "constant" => PhantomKind::Constant(coherent(a.reflectivity, gmin)),
                "fringes" => {
                    let (fx, fy) = a
                        .frequency
                        .split_once(',')
                        .ok_or_else(|| user("--frequency expects fx,fy"))?;
                    PhantomKind::Fringes {
                        reflectivity: a.reflectivity,
                        frequency: (
                            fx.trim().parse().map_err(|e| user(format!("bad frequency: {e}")))?,
                            fy.trim().parse().map_err(|e| user(format!("bad frequency: {e}")))?,
                        ),
                        phase0: 0.0,
                        coherence,
                    }
                }
                "mosaic" => PhantomKind::Mosaic {
                    background: coherent(a.reflectivity, gmin),
                    regions: vec![MosaicRegion {
                        row: a.height / 4,
                        col: a.width / 2,
                        height: a.height / 2,
                        width: a.width / 2,
                        matrix: coherent(4.0 * a.reflectivity, 0.5 * gmin),
                    }],
                },
                other => return Err(user(format!("unknown phantom '{other}' (constant | fringes | mosaic)"))),
            };
            make_phantom(&PhantomSpec {
                kind,
                dim: a.dim,
                height: a.height,
                width: a.width,
            })?
        }
    };
    let mut img = sample_goodman(&truth, ctx.seed)?;
    if let Some(t) = &a.transfer {
        img = muchapro::apply_transfer(&img, &parse_transfer(t)?)?;
    }
    io::write_mcslc_file(&a.out, &img)?;
    write_provenance(&a.out, "simulate", ctx, a, BTreeMap::new())?;
    if let Some(p) = &a.truth_out {
        io::write_mccov_file(p, &truth)?;
        write_provenance(p, "simulate", ctx, a, BTreeMap::new())?;
    }
    Ok(())
}

fn parse_transfer(spec: &str) -> Result<TransferKernel> {
    let parts: Vec<&str> = spec.split(':').collect();
    let num = |s: &str| s.parse::<f64>().map_err(|e| user(format!("bad transfer '{spec}': {e}")));
    match parts.as_slice() {
        ["delta"] => Ok(TransferKernel::delta()),
        ["boxcar", n] => TransferKernel::boxcar(num(n)? as usize),
        ["gaussian", s, n] => TransferKernel::gaussian(num(s)?, num(n)? as usize),
        _ => Err(user(format!("bad transfer '{spec}' (delta | boxcar:N | gaussian:SIGMA:SIZE)"))),
    }
}

fn summary(study: &RandomStudy) -> String {
    let (edges, counts, infinite) = study.log_histogram(20);
    let mut out = format!(
        "# random-direction study\ntrials = {}\nmin = {}\nmedian = {}\ninfinite = {infinite}\n# bin_low bin_high count\n",
        study.conditions.len(),
        study.min(),
        study.median()
    );
    for (i, c) in counts.iter().enumerate() {
        out += &format!("{} {} {c}\n", edges[i], edges[i + 1]);
    }
    out
}

fn optimize(ctx: &Context, a: &OptimizeArgs) -> Result<()> {
    let mode = parse_mode(&a.mode)?;
    let count = a.count.unwrap_or(a.dim * a.dim);
    if let Some(trials) = a.random_trials {
        let study = random_direction_study(a.dim, count, mode, trials, ctx.seed)?;
        std::fs::write(&a.out, summary(&study))?;
        return write_provenance(&a.out, "optimize-directions", ctx, a, BTreeMap::new());
    }
    let schedule = a
        .schedule
        .split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|e| user(format!("bad schedule: {e}"))))
        .collect::<Result<Vec<_>>>()?;
    let params = SmoothedConditionParams {
        restarts: a.restarts,
        seed: ctx.seed,
        ..Default::default()
    }
    .with_schedule(schedule)?;
    let design = optimize_directions(a.dim, count, mode, &params)?;
    log::info!(
        "best condition number {} from restart {}",
        design.condition,
        design.best_restart
    );
    let mut file = DirectionFile::new(design.directions, mode, Some(ctx.seed))?;
    file.provenance.insert("restarts".into(), a.restarts.to_string());
    file.provenance.insert("schedule".into(), a.schedule.clone());
    file.provenance.insert("version".into(), muchapro::VERSION.into());
    io::write_direction_file(&a.out, &file)?;
    println!("condition number {}", file.condition);
    Ok(())
}

fn project_cmd(ctx: &Context, a: &ProjectArgs) -> Result<()> {
    let img = io::read_mcslc_file(&a.input)?;
    let dirs = load_directions(a.dirs.as_deref(), img.channels(), parse_mode(&a.mode)?)?;
    let out = MultiChannelSlc::from_channels(&project(&img, &dirs)?)?;
    io::write_mcslc_file(&a.out, &out)?;
    write_provenance(&a.out, "project", ctx, a, BTreeMap::new())
}

fn despeckle_cmd(ctx: &Context, a: &DespeckleArgs) -> Result<()> {
    let img = io::read_mcslc_file(&a.input)?;
    let f = despeckler(&a.despeckler, a.pre_decimate)?;
    if img.channels() == 1 {
        let v = f.despeckle(&img.channel(0))?;
        io::write_reflectivity_file(&a.out, &clip(v))?;
        return write_provenance(&a.out, "despeckle", ctx, a, BTreeMap::new());
    }
    std::fs::create_dir_all(&a.out)?;
    for k in 0..img.channels() {
        let path = a.out.join(format!("k{k:03}.refl"));
        let v = f.despeckle(&img.channel(k))?;
        io::write_reflectivity_file(&path, &clip(v))?;
    }
    write_provenance(&a.out.join("despeckle"), "despeckle", ctx, a, BTreeMap::new())
}

fn clip(v: muchapro::ReflectivityImage) -> muchapro::ReflectivityImage {
    muchapro::ReflectivityImage::new(v.into_inner().mapv(|x| x.max(0.0))).expect("clipping keeps values finite")
}

fn invert_cmd(ctx: &Context, a: &InvertArgs) -> Result<()> {
    let mut files = Vec::new();
    for p in &a.input {
        if p.is_dir() {
            let mut entries: Vec<PathBuf> = std::fs::read_dir(p)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|e| e.extension().is_some_and(|x| x == "refl"))
                .collect();
            entries.sort();
            files.extend(entries);
        } else {
            files.push(p.clone());
        }
    }
    let variances = files
        .iter()
        .map(|p| io::read_reflectivity_file(p))
        .collect::<Result<Vec<_>>>()?;
    let file = io::read_direction_file(&a.dirs)?;
    if variances.len() != file.directions.len() {
        return Err(user(format!(
            "{} reflectivity rasters for {} directions",
            variances.len(),
            file.directions.len()
        )));
    }
    let op = build_operator(&file.directions, parse_mode(&a.mode)?)?;
    let field = invert_projections(&op, &variances)?;
    io::write_mccov_file(&a.out, &field)?;
    let mut results = BTreeMap::new();
    results.insert("condition_number".into(), op.condition_number().to_string());
    write_provenance(&a.out, "invert", ctx, a, results)
}

fn pd_setting(p: &PdArgs) -> Result<PdSetting> {
    Ok(match p.rthml {
        Some(r) => PdSetting::Fixed(PdEnforceParams::new(r, p.rhomax)?),
        None => {
            PdEnforceParams::new(1.0, p.rhomax)?;
            PdSetting::SceneRelative { max_coherence: p.rhomax }
        }
    })
}

fn default_composite(dim: usize) -> CompositeMode {
    if dim >= 2 {
        CompositeMode::Insar(0, 1)
    } else {
        CompositeMode::Amplitude(0)
    }
}

fn run_cmd(ctx: &Context, a: &RunArgs) -> Result<()> {
    let img = io::read_mcslc_file(&a.input)?;
    let mode = parse_mode(&a.mode)?;
    let dirs = load_directions(a.dirs.as_deref(), img.channels(), mode)?;
    let f = despeckler(&a.despeckler, a.pre_decimate)?;
    let options = PipelineOptions {
        mode,
        enforce_pd: if a.enforce_pd { Some(pd_setting(&a.pd)?) } else { None },
        substitute_reflectivities: a.substitute_reflectivities,
        jobs: ctx.jobs,
    };
    let out = run_muchapro(&img, &dirs, &f, &options)?;
    io::write_mccov_file(&a.out, &out.field)?;
    let mut results = BTreeMap::new();
    results.insert("condition_number".into(), out.condition_number.to_string());
    results.insert("clipped_negative".into(), out.clipped_negative.to_string());
    if let Some(rate) = out.pd_pass_rate {
        results.insert("pd_pass_rate".into(), rate.to_string());
    }
    write_provenance(&a.out, "run", ctx, a, results)?;
    if let Some(png) = &a.composite {
        let rgb = render_composite(&out.field, default_composite(out.field.dim()), Stretch::default())?;
        io::write_png(png, &rgb)?;
        write_provenance(png, "run", ctx, a, BTreeMap::new())?;
    }
    Ok(())
}

fn enforce_pd_cmd(ctx: &Context, a: &EnforcePdArgs) -> Result<()> {
    let field = io::read_mccov_file(&a.input)?;
    let params = match pd_setting(&a.pd)? {
        PdSetting::Fixed(p) => p,
        PdSetting::SceneRelative { max_coherence } => PdEnforceParams::scene_relative(&field, max_coherence)?,
    };
    let out = enforce_pd_field(&field, &params);
    io::write_mccov_file(&a.out, &out)?;
    let mut results = BTreeMap::new();
    results.insert("thermal_floor".into(), params.thermal_floor().to_string());
    results.insert("pd_pass_rate".into(), muchapro::pd::pd_pass_rate(&out).to_string());
    write_provenance(&a.out, "enforce-pd", ctx, a, results)
}

fn parse_composite_mode(s: &str) -> Result<CompositeMode> {
    let bad = || user(format!("bad composite mode '{s}' (insar:I,J | amplitude:D)"));
    match s.split_once(':') {
        Some(("insar", ch)) => {
            let (i, j) = ch.split_once(',').ok_or_else(bad)?;
            Ok(CompositeMode::Insar(
                i.trim().parse().map_err(|_| bad())?,
                j.trim().parse().map_err(|_| bad())?,
            ))
        }
        Some(("amplitude", d)) => Ok(CompositeMode::Amplitude(d.trim().parse().map_err(|_| bad())?)),
        _ => Err(bad()),
    }
}

fn composite_cmd(ctx: &Context, a: &CompositeArgs) -> Result<()> {
    let field = io::read_mccov_file(&a.input)?;
    if !(a.quantile > 0.0 && a.quantile <= 1.0) || a.gamma.is_nan() || a.gamma <= 0.0 {
        return Err(user("quantile must lie in (0, 1] and gamma must be positive"));
    }
    let stretch = Stretch {
        quantile: a.quantile,
        gamma: a.gamma,
    };
    let rgb = render_composite(&field, parse_composite_mode(&a.mode)?, stretch)?;
    io::write_png(&a.out, &rgb)?;
    write_provenance(&a.out, "composite", ctx, a, BTreeMap::new())
}

fn tagged(mut e: muchapro::ValidationEntry, tag: String) -> muchapro::ValidationEntry {
    e.name = format!("{}.{tag}", e.name);
    e
}

fn validate_cmd(ctx: &Context, a: &ValidateArgs) -> Result<()> {
    let img = io::read_mcslc_file(&a.input)?;
    let mut report = ValidationReport::default();
    for d in 0..img.channels() {
        let s = img.channel(d);
        report.push(tagged(validate::check_reim_independence(&s), format!("channel{d}")));
        report.push(tagged(validate::check_spectrum_symmetry(&s), format!("channel{d}")));
    }
    let mode = parse_mode(&a.mode)?;
    if a.dirs.is_some() || (2..=4).contains(&img.channels()) {
        let dirs = load_directions(a.dirs.as_deref(), img.channels(), mode)?;
        for (k, s) in project(&img, &dirs)?.iter().enumerate() {
            report.push(tagged(validate::check_reim_independence(s), format!("projection{k}")));
        }
        let boxcar = LinearFilterWeights::boxcar(5)?;
        if img.height() >= 5 && img.width() >= 5 {
            report.push(tagged(
                validate::check_linear_equivalence(&img, &dirs, &boxcar, mode)?,
                "boxcar5".into(),
            ));
        }
    }
    match (&a.estimate, &a.truth) {
        (Some(e), Some(t)) => {
            let est = io::read_mccov_file(e)?;
            let truth = io::read_mccov_file(t)?;
            for i in 0..truth.dim() {
                for j in i + 1..truth.dim() {
                    let err = validate::phase_coherence_error(&est, &truth, i, j)?;
                    let mut components = BTreeMap::new();
                    components.insert("phase_rmse".into(), err.phase_rmse);
                    components.insert("coherence_mae".into(), err.coherence_mae);
                    components.insert("coherence_excluded".into(), err.coherence_excluded as f64);
                    report.push(muchapro::ValidationEntry {
                        name: format!("phase_coherence_error.pair{i}{j}"),
                        statistic: err.phase_rmse,
                        threshold: f64::NAN,
                        pass_if: validate::PassIf::Below,
                        status: validate::Status::Undefined,
                        sample_size: truth.pixels(),
                        formula: "phase rmse of arg(exp(i (phi_est - phi_true))); coherence mean absolute error".into(),
                        advisory: true,
                        components,
                    });
                }
            }
        }
        (None, None) => {}
        _ => return Err(user("--estimate and --truth must be given together")),
    }
    #[derive(Serialize)]
    struct Header<'a> {
        tool: &'static str,
        version: &'static str,
        seed: u64,
        input: &'a Path,
    }
    let header = toml::to_string(&Header {
        tool: "muchapro validate",
        version: muchapro::VERSION,
        seed: ctx.seed,
        input: &a.input,
    })
    .map_err(|e| Error::Format(e.to_string()))?;
    let text = format!("{header}\n{}", report.to_toml()?);
    match &a.out {
        Some(p) => std::fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<()> {
    let ctx = Context {
        seed: cli.seed,
        jobs: cli.jobs,
    };
    match &cli.command {
        Command::Simulate(a) => simulate(&ctx, a),
        Command::OptimizeDirections(a) => optimize(&ctx, a),
        Command::Project(a) => project_cmd(&ctx, a),
        Command::Despeckle(a) => despeckle_cmd(&ctx, a),
        Command::Invert(a) => invert_cmd(&ctx, a),
        Command::Run(a) => run_cmd(&ctx, a),
        Command::EnforcePd(a) => enforce_pd_cmd(&ctx, a),
        Command::Composite(a) => composite_cmd(&ctx, a),
        Command::Validate(a) => validate_cmd(&ctx, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.jobs {
        if n == 0 {
            eprintln!("error: --jobs must be at least 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_internal() { 2 } else { 1 })
        }
    }
}
