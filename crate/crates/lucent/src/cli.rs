//! The `lucent` command line.
//!
//! Every subcommand reads an optional `--config` TOML file, applies its flags
//! on top, validates the result and only then starts work. Exit status: 0 ok,
//! 1 usage, 2 validation failure, 3 I/O.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use lucent_core::basisgen::{assemble_matrix, build_sample_grid, decompose, error_report, ErrorRow};
use lucent_core::runtime::{bench, render_image, Clock, PathSummary, StageSummary, StageTimings};
use lucent_core::transfer::TransferSettings;

use crate::config::{CameraSpec, LightSpec, RunConfig};
use crate::container::{load_basis, save_basis, Container};
use crate::error::{LucentError, Result};
use crate::imageio::save_png;
use crate::precompute::precompute;
use crate::scene::{load_scene, scene_from_container, StdClock};
use crate::validate::{oracle_checks, pca_check, wavelet_checks, ValidationReport};

#[derive(Debug, Parser)]
#[command(name = "lucent", version, about = "Precomputed translucent-material relighting")]
pub struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker thread cap.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the diffusion basis and print its truncation error table.
    Basis(BasisArgs),
    /// Precompute and compress transfer for a mesh into a container.
    Precompute(PrecomputeArgs),
    /// Relight a precomputed scene and write a PNG.
    Render(RenderArgs),
    /// Compare against brute-force oracles and run property checks.
    Validate(ValidateArgs),
    /// Serve a scene for live editing over HTTP and WebSocket.
    Serve(ServeArgs),
    /// Time full relights against material edits.
    Bench(BenchArgs),
    /// Write a built-in mesh as OBJ.
    ExportMesh(ExportArgs),
}

#[derive(Debug, Args, Default)]
pub struct BasisFlags {
    /// Number of basis functions kept.
    #[arg(long)]
    pub k: Option<usize>,
    /// Existing basis file to use instead of building one.
    #[arg(long)]
    pub basis_file: Option<PathBuf>,
}

#[derive(Debug, Args, Default)]
pub struct MeshFlags {
    /// OBJ path or builtin:{icosphere,slab,bust,cube}.
    #[arg(long)]
    pub mesh: Option<String>,
    /// Precompute container.
    #[arg(long)]
    pub container: Option<PathBuf>,
}

#[derive(Debug, Args, Default)]
pub struct CompressionFlags {
    /// Step-1 coefficients kept per row, fraction of the atlas domain.
    #[arg(long)]
    pub step1: Option<f64>,
    /// Step-2 energy fraction kept per column.
    #[arg(long)]
    pub step2: Option<f64>,
    /// Keep everything (step 1, step 2 and irradiance).
    #[arg(long)]
    pub lossless: bool,
    /// Atlas parts.
    #[arg(long)]
    pub parts: Option<usize>,
    /// Atlas quadtree level.
    #[arg(long)]
    pub level: Option<u32>,
}

#[derive(Debug, Args, Default)]
pub struct SceneFlags {
    /// Reduced scattering coefficient, `v` or `r,g,b` (mm⁻¹).
    #[arg(long, value_parser = parse_rgb)]
    pub sigma_s: Option<[f64; 3]>,
    /// Absorption coefficient, `v` or `r,g,b` (mm⁻¹).
    #[arg(long, value_parser = parse_rgb)]
    pub sigma_a: Option<[f64; 3]>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub g: Option<f64>,
    /// Light, repeatable: `point:X,Y,Z:R,G,B`, `directional:X,Y,Z:R,G,B`,
    /// `sphere:X,Y,Z:RADIUS:R,G,B`, `ambient:R,G,B`.
    #[arg(long, value_parser = parse_light)]
    pub light: Vec<LightSpec>,
    /// Render with no lights at all.
    #[arg(long)]
    pub no_lights: bool,
    /// Camera position `x,y,z`.
    #[arg(long, value_parser = parse_vec)]
    pub eye: Option<[f64; 3]>,
    /// Camera target `x,y,z`.
    #[arg(long, value_parser = parse_vec)]
    pub look_at: Option<[f64; 3]>,
    /// Vertical field of view, degrees.
    #[arg(long)]
    pub fov: Option<f64>,
    /// Fraction of irradiance wavelet coefficients kept.
    #[arg(long)]
    pub irradiance_keep: Option<f64>,
}

#[derive(Debug, Args)]
pub struct BasisArgs {
    #[command(flatten)]
    pub basis: BasisFlags,
    /// Basis file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Error table CSV (stdout when omitted).
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Basis counts in the error table, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub error_counts: Option<Vec<usize>>,
}

#[derive(Debug, Args)]
pub struct PrecomputeArgs {
    #[command(flatten)]
    pub mesh: MeshFlags,
    #[command(flatten)]
    pub basis: BasisFlags,
    #[command(flatten)]
    pub compression: CompressionFlags,
    /// Also precompute visibility and fold it for environment lighting.
    #[arg(long)]
    pub visibility: bool,
    /// Cubemap face side for visibility.
    #[arg(long)]
    pub cube_side: Option<usize>,
    /// Refractive index baked into the folded environment operator.
    #[arg(long)]
    pub eta: Option<f64>,
    /// Directory for step-1 spill files.
    #[arg(long)]
    pub spill_dir: Option<PathBuf>,
    /// Container to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ImageFlags {
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub height: Option<usize>,
    #[arg(long)]
    pub exposure: Option<f64>,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[command(flatten)]
    pub mesh: MeshFlags,
    #[command(flatten)]
    pub scene: SceneFlags,
    #[command(flatten)]
    pub image: ImageFlags,
    /// PNG to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[command(flatten)]
    pub mesh: MeshFlags,
    #[command(flatten)]
    pub basis: BasisFlags,
    #[command(flatten)]
    pub compression: CompressionFlags,
    #[command(flatten)]
    pub scene: SceneFlags,
    /// Largest grid side for the wavelet checks.
    #[arg(long, default_value_t = 512)]
    pub wavelet_side: usize,
    /// Print the report as JSON.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub mesh: MeshFlags,
    #[command(flatten)]
    pub scene: SceneFlags,
    /// Address to listen on.
    #[arg(long)]
    pub bind: Option<String>,
    /// Static editor bundle served at `/`.
    #[arg(long)]
    pub ui_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub mesh: MeshFlags,
    #[command(flatten)]
    pub scene: SceneFlags,
    #[command(flatten)]
    pub image: ImageFlags,
    #[arg(long, default_value_t = 50)]
    pub iterations: usize,
    /// Print the report as JSON.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// Built-in mesh name.
    pub name: String,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_vec(s: &str) -> std::result::Result<[f64; 3], String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|_| format!("'{x}' is not a number")))
        .collect::<std::result::Result<_, _>>()?;
    v.try_into().map_err(|_| format!("expected x,y,z, got '{s}'"))
}

fn parse_rgb(s: &str) -> std::result::Result<[f64; 3], String> {
    match s.trim().parse::<f64>() {
        Ok(v) => Ok([v; 3]),
        Err(_) => parse_vec(s),
    }
}

fn parse_light(s: &str) -> std::result::Result<LightSpec, String> {
    let parts: Vec<&str> = s.split(':').collect();
    match parts.as_slice() {
        ["point", p, c] => Ok(LightSpec::Point { position: parse_vec(p)?, intensity: parse_rgb(c)? }),
        ["directional", d, c] => Ok(LightSpec::Directional { direction: parse_vec(d)?, irradiance: parse_rgb(c)? }),
        ["sphere", p, r, c] => Ok(LightSpec::Sphere {
            center: parse_vec(p)?,
            radius: r.parse().map_err(|_| format!("bad radius '{r}'"))?,
            radiance: parse_rgb(c)?,
        }),
        ["ambient", c] => {
            Ok(LightSpec::Ambient { constant: Some(parse_rgb(c)?), path: None, faces: None, side: 16, scale: 1.0 })
        }
        _ => Err(format!("unrecognised light '{s}'")),
    }
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn absolute(p: PathBuf) -> PathBuf {
    if p.is_relative() {
        std::env::current_dir().map(|d| d.join(&p)).unwrap_or(p)
    } else {
        p
    }
}

impl MeshFlags {
    fn apply(&self, c: &mut RunConfig) {
        if let Some(m) = &self.mesh {
            c.mesh = if m.starts_with("builtin:") { m.clone() } else { absolute(m.into()).to_string_lossy().into() };
        }
        if let Some(p) = &self.container {
            c.container = Some(absolute(p.clone()));
        }
    }
}

impl BasisFlags {
    fn apply(&self, c: &mut RunConfig) {
        set(&mut c.basis.k, self.k);
        if let Some(p) = &self.basis_file {
            c.basis_file = Some(absolute(p.clone()));
        }
    }
}

impl CompressionFlags {
    fn apply(&self, c: &mut RunConfig) {
        set(&mut c.precompute.step1_fraction, self.step1);
        set(&mut c.precompute.step2_fraction, self.step2);
        set(&mut c.precompute.parts, self.parts);
        if self.level.is_some() {
            c.precompute.level = self.level;
        }
        if self.lossless {
            let l = TransferSettings::lossless();
            c.precompute.step1_fraction = l.step1_fraction;
            c.precompute.step2_fraction = l.step2_fraction;
            c.render.irradiance_keep = 1.0;
            // largest value a TOML integer holds
            c.render.environment_coefficients = i64::MAX as usize;
        }
    }
}

impl SceneFlags {
    fn apply(&self, c: &mut RunConfig) {
        set(&mut c.material.sigma_s_prime, self.sigma_s);
        set(&mut c.material.sigma_a, self.sigma_a);
        set(&mut c.material.eta, self.eta);
        set(&mut c.material.g, self.g);
        set(&mut c.render.irradiance_keep, self.irradiance_keep);
        if self.no_lights {
            c.lights.clear();
            c.render.default_light = false;
        }
        if !self.light.is_empty() {
            c.lights = self.light.clone();
        }
        if self.eye.is_some() || self.look_at.is_some() || self.fov.is_some() {
            let mut cam = c.camera.unwrap_or(CameraSpec {
                position: [0.0, 0.0, 50.0],
                look_at: [0.0; 3],
                up: [0.0, 1.0, 0.0],
                fov_y: 40.0,
            });
            set(&mut cam.position, self.eye);
            set(&mut cam.look_at, self.look_at);
            set(&mut cam.fov_y, self.fov);
            c.camera = Some(cam);
        }
    }
}

impl ImageFlags {
    fn apply(&self, c: &mut RunConfig) {
        set(&mut c.render.width, self.width);
        set(&mut c.render.height, self.height);
        set(&mut c.render.exposure, self.exposure);
    }
}

fn base_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => {
            let mut c = RunConfig::load(p)?;
            let dir = absolute(p.parent().unwrap_or(Path::new(".")).to_path_buf());
            c.resolve_paths(&dir);
            Ok(c)
        }
        None => Ok(RunConfig::default()),
    }
}

fn progress(msg: &str) {
    eprintln!("{msg}");
}

const HERE: &str = ".";

/// Parses arguments and runs; returns the process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(LucentError::Config("--threads must be at least 1".into()));
        }
        // a second call in one process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let mut config = base_config(cli.config.as_deref())?;
    match cli.command {
        Command::Basis(a) => {
            a.basis.apply(&mut config);
            set(&mut config.basis.error_counts, a.error_counts.clone());
            config.validate()?;
            cmd_basis(&config, &a.out, a.csv.as_deref())
        }
        Command::Precompute(a) => {
            a.mesh.apply(&mut config);
            a.basis.apply(&mut config);
            a.compression.apply(&mut config);
            config.precompute.visibility |= a.visibility;
            set(&mut config.precompute.cube_side, a.cube_side);
            set(&mut config.material.eta, a.eta);
            if let Some(p) = &a.spill_dir {
                config.precompute.spill_dir = Some(absolute(p.clone()));
            }
            config.validate()?;
            cmd_precompute(&config, &a.out)
        }
        Command::Render(a) => {
            a.mesh.apply(&mut config);
            a.scene.apply(&mut config);
            a.image.apply(&mut config);
            config.validate()?;
            cmd_render(&config, &a.out)
        }
        Command::Validate(a) => {
            a.mesh.apply(&mut config);
            a.basis.apply(&mut config);
            a.compression.apply(&mut config);
            a.scene.apply(&mut config);
            config.validate()?;
            let report = cmd_validate(&config, a.wavelet_side)?;
            if a.json {
                println!("{}", report_json(&report));
            } else {
                print!("{report}");
            }
            if report.passed() {
                Ok(())
            } else {
                let failed: Vec<&str> = report.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
                Err(LucentError::Validation(failed.join("; ")))
            }
        }
        Command::Serve(a) => {
            a.mesh.apply(&mut config);
            a.scene.apply(&mut config);
            set(&mut config.serve.bind, a.bind.clone());
            if let Some(p) = &a.ui_dir {
                config.serve.ui_dir = Some(absolute(p.clone()));
            }
            config.validate()?;
            crate::service::serve_blocking(&config, Path::new(HERE))
        }
        Command::Bench(a) => {
            a.mesh.apply(&mut config);
            a.scene.apply(&mut config);
            a.image.apply(&mut config);
            config.validate()?;
            cmd_bench(&config, a.iterations, a.json)
        }
        Command::ExportMesh(a) => {
            let mesh = crate::config::builtin_mesh(&a.name)
                .ok_or_else(|| LucentError::Config(format!("unknown builtin mesh '{}'", a.name)))?;
            crate::obj::write_obj(&mesh, &a.out)
        }
    }
}

pub fn error_csv(rows: &[ErrorRow]) -> String {
    let mut s = String::from("K,l2rel,linfabs,linfrel\n");
    for r in rows {
        s.push_str(&format!("{},{:e},{:e},{:e}\n", r.count, r.l2_rel, r.linf_abs, r.linf_rel));
    }
    s
}

pub fn cmd_basis(config: &RunConfig, out: &Path, csv: Option<&Path>) -> Result<()> {
    let grid = build_sample_grid(&config.basis.grid())?;
    let matrix = assemble_matrix(&grid);
    let widest = config.basis.error_counts.iter().copied().chain([config.basis.k]).max().unwrap_or(1);
    let full = decompose(&matrix, widest)?;
    let rows = error_report(&full, &matrix, &config.basis.error_counts)?;
    let basis = full.truncated(config.basis.k)?;
    let table = error_csv(&rows);
    save_basis(&basis, out)?;
    match csv {
        Some(p) => std::fs::write(p, table).map_err(|e| LucentError::io(p, e))?,
        None => print!("{table}"),
    }
    Ok(())
}

fn basis_for(config: &RunConfig) -> Result<lucent_core::basisgen::DiffusionBasis> {
    match &config.basis_file {
        Some(p) => {
            let b = load_basis(p)?;
            if b.count < config.basis.k {
                return Err(LucentError::Config(format!("basis file holds {} functions, {} requested", b.count, config.basis.k)));
            }
            Ok(b.truncated(config.basis.k)?)
        }
        None => Ok(decompose(&assemble_matrix(&build_sample_grid(&config.basis.grid())?), config.basis.k)?),
    }
}

pub fn cmd_precompute(config: &RunConfig, out: &Path) -> Result<()> {
    let mesh = config.load_mesh(Path::new(HERE))?;
    let basis = basis_for(config)?;
    let container = precompute(&mesh, &basis, &config.precompute_options(), config.to_toml(), &mut progress)?;
    container.save(out)?;
    eprintln!(
        "wrote {} ({} samples, K={}, {} stored entries{})",
        out.display(),
        container.transfer.sample_count,
        container.basis.count,
        container.transfer.nnz(),
        if container.is_lossless() { ", lossless" } else { "" }
    );
    Ok(())
}

pub fn cmd_render(config: &RunConfig, out: &Path) -> Result<()> {
    let mut scene = load_scene(config, Path::new(HERE))?;
    let clock = StdClock::new();
    let mut frame = scene.relight(&clock)?;
    let t0 = clock.now_ms();
    let img = render_image(
        &scene.mesh,
        &frame.radiance,
        scene.camera(),
        config.render.width,
        config.render.height,
        config.render.exposure,
    )?;
    frame.timings.raster = clock.now_ms() - t0;
    save_png(&img, out)?;
    for w in &frame.stats.warnings {
        eprintln!("warning: {w}");
    }
    eprintln!("wrote {} in {:.2} ms", out.display(), frame.timings.total());
    Ok(())
}

/// Runs the checks for `config`; uses the container when one is given,
/// otherwise precomputes in memory.
pub fn cmd_validate(config: &RunConfig, wavelet_side: usize) -> Result<ValidationReport> {
    let mut report = ValidationReport::default();
    wavelet_checks(&mut report, wavelet_side, 7);
    let mesh = config.load_mesh(Path::new(HERE))?;
    let container = match &config.container {
        Some(p) => Container::load(p)?,
        None => {
            let basis = basis_for(config)?;
            precompute(&mesh, &basis, &config.precompute_options(), config.to_toml(), &mut |_| {})?
        }
    };
    pca_check(&mut report, &container.basis, &config.basis.grid())?;
    let lossless = container.is_lossless() && config.render.irradiance_keep >= 1.0;
    let mut scene = scene_from_container(container, mesh, config, Path::new(HERE))?;
    oracle_checks(&mut report, &mut scene, if lossless { 1e-6 } else { 0.02 })?;
    Ok(report)
}

pub fn report_json(r: &ValidationReport) -> String {
    let metrics = |m: crate::validate::ErrorMetrics| {
        json!({ "relative_rms": m.relative_rms, "max_abs": m.max_abs, "max_rel": m.max_rel })
    };
    json!({
        "passed": r.passed(),
        "checks": r.checks.iter().map(|c| json!({
            "name": c.name, "value": c.value, "bound": c.bound, "passed": c.passed,
        })).collect::<Vec<_>>(),
        "compression": metrics(r.compression),
        "end_to_end": metrics(r.end_to_end),
    })
    .to_string()
}

fn summary_json(p: &PathSummary) -> serde_json::Value {
    let stage = |s: &StageSummary| json!({ "median_ms": s.median, "p90_ms": s.p90 });
    let mut m = serde_json::Map::new();
    for (name, s) in StageTimings::NAMES.iter().zip(&p.stages) {
        m.insert((*name).into(), stage(s));
    }
    json!({ "iterations": p.samples, "stages": m, "total": stage(&p.total) })
}

pub fn cmd_bench(config: &RunConfig, iterations: usize, as_json: bool) -> Result<()> {
    let mut scene = load_scene(config, Path::new(HERE))?;
    let clock = StdClock::new();
    let mut report = bench(&mut scene, iterations, &clock)?;
    let ratio = report.edit.total.median / report.relight.total.median;
    // raster cost is the same for either path
    let frame = scene.frame(&clock)?;
    let mut raster = Vec::with_capacity(iterations.max(1));
    for _ in 0..iterations.max(1) {
        let t0 = clock.now_ms();
        render_image(&scene.mesh, &frame.radiance, scene.camera(), config.render.width, config.render.height, 1.0)?;
        raster.push(clock.now_ms() - t0);
    }
    raster.sort_by(f64::total_cmp);
    let pick = |q: f64| raster[(q * (raster.len() - 1) as f64).round() as usize];
    let r = StageSummary { median: pick(0.5), p90: pick(0.9) };
    for p in [&mut report.relight, &mut report.edit] {
        p.stages[5] = r;
        p.total.median += r.median;
        p.total.p90 += r.p90;
    }
    if as_json {
        println!(
            "{}",
            json!({
                "relight": summary_json(&report.relight),
                "edit": summary_json(&report.edit),
                "edit_over_relight_excluding_raster": ratio,
            })
        );
        return Ok(());
    }
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{:<16} {:>14} {:>12} {:>14} {:>12}", "stage", "relight median", "p90", "edit median", "p90");
    for (i, name) in StageTimings::NAMES.iter().enumerate() {
        let (a, b) = (report.relight.stages[i], report.edit.stages[i]);
        let _ = writeln!(out, "{name:<16} {:>14.4} {:>12.4} {:>14.4} {:>12.4}", a.median, a.p90, b.median, b.p90);
    }
    let (a, b) = (report.relight.total, report.edit.total);
    let _ = writeln!(out, "{:<16} {:>14.4} {:>12.4} {:>14.4} {:>12.4}", "total", a.median, a.p90, b.median, b.p90);
    let _ = writeln!(out, "edit / relight median, raster excluded: {ratio:.3} ({} iterations, ms)", report.relight.samples);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn light_flags() {
        assert_eq!(
            parse_light("point:1,2,3:4").unwrap(),
            LightSpec::Point { position: [1.0, 2.0, 3.0], intensity: [4.0; 3] }
        );
        assert!(matches!(parse_light("sphere:0,0,0:0.5:1,2,3").unwrap(), LightSpec::Sphere { radius, .. } if radius == 0.5));
        assert!(matches!(parse_light("ambient:0.2").unwrap(), LightSpec::Ambient { constant: Some(_), .. }));
        assert!(parse_light("laser:1,2,3").is_err());
        assert!(parse_vec("1,2").is_err());
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(main_with_args(["lucent", "render"]), 1);
        assert_eq!(main_with_args(["lucent", "frobnicate"]), 1);
        assert_eq!(main_with_args(["lucent", "--help"]), 0);
    }

    #[test]
    fn csv_header() {
        let rows = [ErrorRow { count: 1, l2_rel: 0.5, linf_abs: 1.0, linf_rel: 0.25 }];
        assert_eq!(error_csv(&rows).lines().next(), Some("K,l2rel,linfabs,linfrel"));
    }
}
