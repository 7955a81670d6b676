//! Command implementations behind the `skullstrip` binary.
//!
//! Every command returns a JSON report on success. Failures carry the exit
//! code convention: 2 for bad arguments or configuration, 1 for anything that
//! goes wrong while running a stage.

pub mod overlay;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use skullstrip_core::eval::dice;
use skullstrip_core::levelset::{
    edge_potential, evolve, extract_mask, signed_distance_from_mask, EvolutionConfig, EvolutionResult, LevelSetField,
};
use skullstrip_core::nifti::{load_nifti, save_nifti};
use skullstrip_core::phantom::{generate_atlas, generate_phantom, PhantomSpec};
use skullstrip_core::registration::{propagate_mask, register_affine, RegistrationConfig, RegistrationResult};
use skullstrip_core::{AffineTransform, BinaryMask, Volume};
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Runtime(e) => write!(f, "{e:#}"),
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

pub type CmdResult = Result<Value, CliError>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub registration: RegistrationConfig,
    pub evolution: EvolutionConfig,
    pub keep_largest_component: bool,
    /// Write QC overlays after `strip`; needs `overlay_dir` or `--overlay-dir`.
    pub overlay: bool,
    pub overlay_dir: Option<PathBuf>,
    pub phantom: PhantomSpec,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            registration: RegistrationConfig::default(),
            evolution: EvolutionConfig::default(),
            keep_largest_component: true,
            overlay: false,
            overlay_dir: None,
            phantom: PhantomSpec::default(),
        }
    }
}

impl PipelineConfig {
    /// Reads and validates a JSON config; `None` gives the defaults.
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let cfg: PipelineConfig = match path {
            None => PipelineConfig::default(),
            Some(p) => {
                require_file(p, "--config")?;
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Usage(format!("--config: cannot read {}: {e}", p.display())))?;
                serde_json::from_str(&text)
                    .map_err(|e| CliError::Usage(format!("--config: invalid JSON in {}: {e}", p.display())))?
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let usage = |e: skullstrip_core::Error| CliError::Usage(format!("config: {e}"));
        self.registration.validate().map_err(usage)?;
        self.evolution.validate().map_err(usage)?;
        self.phantom.validate().map_err(usage)?;
        Ok(())
    }
}

#[derive(Debug, Parser)]
#[command(name = "skullstrip", version, about = "Atlas-based brain extraction with level set refinement")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Register, propagate and refine: the full pipeline.
    Strip(StripArgs),
    /// Affine registration of the atlas onto the input.
    Register(RegisterArgs),
    /// Level set refinement of an initial mask.
    Evolve(EvolveArgs),
    /// Synthetic head phantom with its ground-truth mask.
    Phantom(PhantomArgs),
    /// Dice overlap of two masks.
    Dice(DiceArgs),
    /// Axial, coronal and sagittal QC images.
    Overlay(OverlayArgs),
}

#[derive(Clone, Debug, Args)]
pub struct StripArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub atlas: PathBuf,
    #[arg(long)]
    pub atlas_mask: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub output_mask: PathBuf,
    #[arg(long)]
    pub output_brain: Option<PathBuf>,
    #[arg(long)]
    pub output_transform: Option<PathBuf>,
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long)]
    pub overlay_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, Args)]
pub struct RegisterArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub atlas: PathBuf,
    /// Atlas brain mask; with --output-mask, written propagated onto the input.
    #[arg(long)]
    pub atlas_mask: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub output_transform: PathBuf,
    #[arg(long, requires = "atlas_mask")]
    pub output_mask: Option<PathBuf>,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Clone, Debug, Args)]
pub struct EvolveArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Initial mask on the input grid.
    #[arg(long)]
    pub mask: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub output_mask: PathBuf,
    #[arg(long)]
    pub output_brain: Option<PathBuf>,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Clone, Debug, Args)]
pub struct PhantomArgs {
    /// Pipeline config; only its `phantom` section is used.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the phantom noise seed from the config.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub output_volume: PathBuf,
    #[arg(long)]
    pub output_mask: PathBuf,
    /// Clean, untransformed, tumor-free reference volume.
    #[arg(long)]
    pub output_atlas: Option<PathBuf>,
    #[arg(long)]
    pub output_atlas_mask: Option<PathBuf>,
}

#[derive(Clone, Debug, Args)]
pub struct DiceArgs {
    pub a: PathBuf,
    pub b: PathBuf,
}

#[derive(Clone, Debug, Args)]
pub struct OverlayArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub mask: PathBuf,
    #[arg(long)]
    pub overlay_dir: PathBuf,
}

/// Runs a parsed command line: prints the report as one JSON line, writes it
/// to `--report` when given, and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let (result, report_path) = match cli.command {
        Command::Strip(a) => (cmd_strip(&a), a.report),
        Command::Register(a) => (cmd_register(&a), a.report),
        Command::Evolve(a) => (cmd_evolve(&a), a.report),
        Command::Phantom(a) => (cmd_phantom(&a), None),
        Command::Dice(a) => (cmd_dice(&a), None),
        Command::Overlay(a) => (cmd_overlay(&a), None),
    };
    let written = result.and_then(|report| {
        let line = report.to_string();
        if let Some(p) = report_path {
            std::fs::write(&p, format!("{line}\n"))
                .with_context(|| format!("writing report {}", p.display()))?;
        }
        Ok(line)
    });
    match written {
        Ok(line) => {
            println!("{line}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn require_file(p: &Path, flag: &str) -> Result<(), CliError> {
    if p.is_file() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{flag}: no such file: {}", p.display())))
    }
}

fn read_volume(p: &Path, flag: &str) -> Result<Volume<f32>, CliError> {
    require_file(p, flag)?;
    Ok(load_nifti(p).with_context(|| format!("{flag}: loading {}", p.display()))?)
}

/// Loads a mask stored as a volume; values >= 0.5 are inside.
fn read_mask(p: &Path, flag: &str) -> Result<BinaryMask, CliError> {
    Ok(read_volume(p, flag)?.threshold(0.5))
}

fn write_volume(v: &Volume<f32>, p: &Path) -> Result<(), CliError> {
    Ok(save_nifti(v, p).with_context(|| format!("writing {}", p.display()))?)
}

fn write_mask(m: &BinaryMask, p: &Path) -> Result<(), CliError> {
    write_volume(&m.to_volume::<f32>(), p)
}

fn write_text(text: &str, p: &Path) -> Result<(), CliError> {
    Ok(std::fs::write(p, text).with_context(|| format!("writing {}", p.display()))?)
}

pub fn read_transform(p: &Path, flag: &str) -> Result<AffineTransform, CliError> {
    require_file(p, flag)?;
    let text = std::fs::read_to_string(p).with_context(|| format!("{flag}: reading {}", p.display()))?;
    text.parse()
        .map_err(|e| CliError::Usage(format!("{flag}: {}: {e}", p.display())))
}

/// Wall-clock seconds per named stage, in run order.
#[derive(Default)]
struct Timings {
    stages: Map<String, Value>,
    start: Option<Instant>,
}

impl Timings {
    fn new() -> Self {
        Timings {
            stages: Map::new(),
            start: Some(Instant::now()),
        }
    }

    fn time<R>(&mut self, name: &str, f: impl FnOnce() -> R) -> R {
        let t = Instant::now();
        let r = f();
        self.stages.insert(name.into(), json!(t.elapsed().as_secs_f64()));
        r
    }

    fn finish(mut self) -> Value {
        if let Some(s) = self.start {
            self.stages.insert("total".into(), json!(s.elapsed().as_secs_f64()));
        }
        Value::Object(self.stages)
    }
}

fn ensure_same_grid(a: &Volume<f32>, b: &BinaryMask, what: &'static str) -> Result<(), CliError> {
    a.geometry()
        .ensure_same(b.geometry(), "input", what)
        .map_err(|e| CliError::Runtime(e.into()))
}

fn registration_report(r: &RegistrationResult) -> Value {
    json!({
        "transform": r.transform,
        "final_metric": r.final_metric,
        "iterations_used": r.iterations_used,
        "converged": r.converged,
        "level_metrics": r.level_metrics,
    })
}

struct Refined {
    mask: BinaryMask,
    result: EvolutionResult<f32>,
    edge_scale: f64,
}

/// edge_potential, signed distance, evolution and mask extraction.
fn refine(patient: &Volume<f32>, init: &BinaryMask, cfg: &PipelineConfig, t: &mut Timings) -> Result<Refined, CliError> {
    let ecfg = &cfg.evolution;
    let g = t
        .time("edge_potential", || edge_potential(patient, ecfg, Some(init)))
        .context("edge potential")?;
    let phi0: LevelSetField<f32> = t
        .time("signed_distance", || signed_distance_from_mask(init))
        .context("initial level set")?;
    let result = t.time("evolve", || evolve(&phi0, &g, ecfg)).context("evolution")?;
    let mask = t.time("extract_mask", || extract_mask(&result.phi, cfg.keep_largest_component));
    Ok(Refined {
        mask,
        result,
        edge_scale: g.scale,
    })
}

fn evolution_report(r: &Refined, init: &BinaryMask) -> Value {
    json!({
        "iterations_used": r.result.iterations_used,
        "converged": r.result.converged,
        "elapsed_time": r.result.elapsed_time,
        "edge_scale": r.edge_scale,
        "initial_voxels": init.count(),
        "mask_voxels": r.mask.count(),
    })
}

fn write_outputs(
    patient: &Volume<f32>,
    mask: &BinaryMask,
    output_mask: &Path,
    output_brain: Option<&Path>,
) -> Result<(), CliError> {
    write_mask(mask, output_mask)?;
    if let Some(p) = output_brain {
        let brain = patient.masked(mask, 0.0).context("masking brain")?;
        write_volume(&brain, p)?;
    }
    Ok(())
}

pub fn cmd_strip(a: &StripArgs) -> CmdResult {
    let cfg = PipelineConfig::load(a.config.as_deref())?;
    let overlay_dir = a.overlay_dir.clone().or_else(|| cfg.overlay.then(|| cfg.overlay_dir.clone()).flatten());
    if cfg.overlay && overlay_dir.is_none() {
        return Err(CliError::Usage("overlay is enabled but no overlay_dir or --overlay-dir was given".into()));
    }
    let mut t = Timings::new();
    let (patient, atlas, atlas_mask) = t.time("load", || -> Result<_, CliError> {
        Ok((
            read_volume(&a.input, "--input")?,
            read_volume(&a.atlas, "--atlas")?,
            read_mask(&a.atlas_mask, "--atlas-mask")?,
        ))
    })?;
    atlas
        .geometry()
        .ensure_same(atlas_mask.geometry(), "atlas", "atlas mask")
        .map_err(|e| CliError::Runtime(e.into()))?;

    let reg = t
        .time("register", || register_affine(&patient, &atlas, &cfg.registration, &AffineTransform::identity()))
        .context("registration")?;
    let propagated = t
        .time("propagate", || propagate_mask(&atlas_mask, &reg.transform, patient.geometry()))
        .context("mask propagation")?;
    let refined = refine(&patient, &propagated, &cfg, &mut t)?;

    t.time("write", || -> Result<(), CliError> {
        write_outputs(&patient, &refined.mask, &a.output_mask, a.output_brain.as_deref())?;
        if let Some(p) = &a.output_transform {
            write_text(&reg.transform.to_text(), p)?;
        }
        if let Some(dir) = &overlay_dir {
            write_overlays(&patient, &refined.mask, dir)?;
        }
        Ok(())
    })?;
    Ok(json!({
        "command": "strip",
        "registration": registration_report(&reg),
        "propagated_voxels": propagated.count(),
        "evolution": evolution_report(&refined, &propagated),
        "timings_s": t.finish(),
    }))
}

pub fn cmd_register(a: &RegisterArgs) -> CmdResult {
    let cfg = PipelineConfig::load(a.config.as_deref())?;
    let mut t = Timings::new();
    let patient = read_volume(&a.input, "--input")?;
    let atlas = read_volume(&a.atlas, "--atlas")?;
    let atlas_mask = a.atlas_mask.as_deref().map(|p| read_mask(p, "--atlas-mask")).transpose()?;
    let reg = t
        .time("register", || register_affine(&patient, &atlas, &cfg.registration, &AffineTransform::identity()))
        .context("registration")?;
    write_text(&reg.transform.to_text(), &a.output_transform)?;
    let mut report = json!({
        "command": "register",
        "registration": registration_report(&reg),
    });
    if let (Some(m), Some(out)) = (&atlas_mask, &a.output_mask) {
        let propagated = t
            .time("propagate", || propagate_mask(m, &reg.transform, patient.geometry()))
            .context("mask propagation")?;
        write_mask(&propagated, out)?;
        report["propagated_voxels"] = json!(propagated.count());
    }
    report["timings_s"] = t.finish();
    Ok(report)
}

pub fn cmd_evolve(a: &EvolveArgs) -> CmdResult {
    let cfg = PipelineConfig::load(a.config.as_deref())?;
    let mut t = Timings::new();
    let patient = read_volume(&a.input, "--input")?;
    let init = read_mask(&a.mask, "--mask")?;
    ensure_same_grid(&patient, &init, "initial mask")?;
    let refined = refine(&patient, &init, &cfg, &mut t)?;
    write_outputs(&patient, &refined.mask, &a.output_mask, a.output_brain.as_deref())?;
    Ok(json!({
        "command": "evolve",
        "evolution": evolution_report(&refined, &init),
        "timings_s": t.finish(),
    }))
}

pub fn cmd_phantom(a: &PhantomArgs) -> CmdResult {
    let cfg = PipelineConfig::load(a.config.as_deref())?;
    let mut spec = cfg.phantom;
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    let (volume, mask) = generate_phantom(&spec).context("phantom generation")?;
    write_volume(&volume, &a.output_volume)?;
    write_mask(&mask, &a.output_mask)?;
    if a.output_atlas.is_some() || a.output_atlas_mask.is_some() {
        let (atlas, atlas_mask) = generate_atlas(&spec).context("atlas generation")?;
        if let Some(p) = &a.output_atlas {
            write_volume(&atlas, p)?;
        }
        if let Some(p) = &a.output_atlas_mask {
            write_mask(&atlas_mask, p)?;
        }
    }
    Ok(json!({
        "command": "phantom",
        "seed": spec.seed,
        "dims": spec.dims,
        "mask_voxels": mask.count(),
    }))
}

pub fn cmd_dice(a: &DiceArgs) -> CmdResult {
    let ma = read_mask(&a.a, "first mask")?;
    let mb = read_mask(&a.b, "second mask")?;
    let r = dice(&ma, &mb).context("dice")?;
    Ok(json!({
        "command": "dice",
        "dice": r.dice,
        "true_voxels_a": r.true_voxels_a,
        "true_voxels_b": r.true_voxels_b,
        "intersection": r.intersection,
    }))
}

fn write_overlays(volume: &Volume<f32>, mask: &BinaryMask, dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let center = overlay::slice_center(mask);
    overlay::Plane::ALL
        .iter()
        .map(|&plane| {
            let path = dir.join(format!("{}.ppm", plane.name()));
            let img = overlay::render(volume, mask, plane, center);
            std::fs::write(&path, img.to_ppm()).with_context(|| format!("writing {}", path.display()))?;
            Ok(path)
        })
        .collect()
}

pub fn cmd_overlay(a: &OverlayArgs) -> CmdResult {
    let volume = read_volume(&a.input, "--input")?;
    let mask = read_mask(&a.mask, "--mask")?;
    ensure_same_grid(&volume, &mask, "mask")?;
    let paths = write_overlays(&volume, &mask, &a.overlay_dir)?;
    Ok(json!({
        "command": "overlay",
        "slice_center": overlay::slice_center(&mask),
        "files": paths,
    }))
}
