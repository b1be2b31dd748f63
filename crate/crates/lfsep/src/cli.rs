//! Command-line pipeline: scene synthesis, separation, evaluation,
//! blend-weight sweeps, refocusing, and per-frame video processing.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU8, Ordering};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::img::Image;
use crate::init_flow;
use crate::io;
use crate::lf_model::{self, DisparityMap, LightField};
use crate::metrics::{self, EvalReport};
use crate::refocus::{refocus, RefocusParams};
use crate::solver::{self, SeparationResult, SolveStatus, SolverConfig, SolverOptions, Workspace};
use crate::synth::{self, SyntheticSpec, TransmittedScene};
use crate::chart;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT_ERROR: i32 = 1;
pub const EXIT_NO_CONVERGENCE: i32 = 2;

static LOG_LEVEL: AtomicU8 = AtomicU8::new(2);

fn level_of(name: &str) -> u8 {
    match name {
        "off" => 0,
        "error" => 1,
        "debug" => 3,
        _ => 2,
    }
}

pub fn log_info(msg: &str) {
    if LOG_LEVEL.load(Ordering::Relaxed) >= 2 {
        eprintln!("info: {msg}");
    }
}

pub fn log_error(msg: &str) {
    if LOG_LEVEL.load(Ordering::Relaxed) >= 1 {
        eprintln!("error: {msg}");
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "lfsep",
    about = "Light-field layer separation and disparity refinement",
    version
)]
pub struct Cli {
    /// Solver configuration overrides (JSON file).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Directory of externally computed flow fields (`flow_{r}_{c}.flo`).
    #[arg(long, global = true)]
    pub flows: Option<PathBuf>,
    /// Seed override for synthetic rendering.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Log verbosity: off, error, info, debug.
    #[arg(long, global = true, default_value = "info")]
    pub log_level: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Render a synthetic light field with ground truth.
    Synth(SynthArgs),
    /// Separate a captured light field into layers plus disparity.
    Separate(SeparateArgs),
    /// Compare recovered layers and disparity against ground truth.
    Eval(EvalArgs),
    /// Render, separate, and evaluate across a range of blend weights.
    Sweep(SweepArgs),
    /// Depth-guided refocusing of a recovered transmitted layer.
    Refocus(RefocusArgs),
    /// Per-frame separation of an image sequence with warm-started disparity.
    Video(VideoArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Scene description (JSON); omit to use a preset.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Preset scene: "planar" or "two-plane".
    #[arg(long, default_value = "two-plane")]
    pub preset: String,
    #[arg(long, default_value_t = 0.2)]
    pub alpha: f64,
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, default_value_t = 3)]
    pub grid: usize,
}

#[derive(Args, Debug)]
pub struct SeparateArgs {
    /// Light-field directory (views plus lf.json).
    #[arg(long)]
    pub input: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Directory holding recovered T_ref.png, S_ref.png, d.pfm.
    #[arg(long)]
    pub recovered: PathBuf,
    /// Directory holding ground truth (a scene `gt/` folder).
    #[arg(long)]
    pub truth: PathBuf,
    /// Append a CSV row to this file.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    /// Scene description (JSON); omit to use the two-plane preset.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Comma-separated blend weights.
    #[arg(long, value_delimiter = ',', required = true)]
    pub alphas: Vec<f64>,
    #[arg(long, default_value_t = 64)]
    pub size: usize,
}

#[derive(Args, Debug)]
pub struct RefocusArgs {
    /// Directory holding T_ref.png and d.pfm (a `separate` output).
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub focal: f64,
    #[arg(long, default_value_t = 4.0)]
    pub aperture: f64,
}

#[derive(Args, Debug)]
pub struct VideoArgs {
    /// Directory of frames: frame_{k}/view_{r}_{c}.png.
    #[arg(long)]
    pub input: PathBuf,
    /// Inclusive frame range "start..end"; defaults to all present.
    #[arg(long)]
    pub frames: Option<String>,
}

/// FNV-1a, for stable input/config fingerprints in run manifests.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

#[derive(Serialize)]
struct RunManifest<'a> {
    mode: &'a str,
    version: &'a str,
    config: &'a SolverConfig,
    config_hash: String,
    input_hash: String,
    seed: Option<u64>,
    status: Option<SolveStatus>,
    outer_iterations: Option<usize>,
}

fn write_run_manifest(
    dir: &Path,
    mode: &str,
    cfg: &SolverConfig,
    input_hash: u64,
    seed: Option<u64>,
    result: Option<&SeparationResult>,
) -> Result<()> {
    let cfg_json = serde_json::to_string(cfg).unwrap();
    let manifest = RunManifest {
        mode,
        version: env!("CARGO_PKG_VERSION"),
        config: cfg,
        config_hash: format!("{:016x}", fnv1a(cfg_json.as_bytes())),
        input_hash: format!("{input_hash:016x}"),
        seed,
        status: result.map(|r| r.status),
        outer_iterations: result.map(|r| r.outer_iterations),
    };
    let path = dir.join("run.json");
    std::fs::write(&path, serde_json::to_string_pretty(&manifest).unwrap())
        .map_err(|e| Error::io(&path, e))
}

fn hash_lightfield(lf: &LightField) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for i in 0..lf.num_views() {
        for v in lf.view(i).data() {
            for b in v.to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        }
    }
    h
}

fn load_config_options(path: Option<&PathBuf>) -> Result<SolverOptions> {
    match path {
        None => Ok(SolverOptions::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str(&text).map_err(|e| Error::BadFormat {
                format: "config json",
                path: p.clone(),
                reason: e.to_string(),
            })
        }
    }
}

/// Resolve the solver configuration against data-dependent defaults.
fn resolve_config(lf: &LightField, d0: &DisparityMap, opts: &SolverOptions) -> Result<SolverConfig> {
    let ws = Workspace::build(lf, d0)?;
    let defaults = SolverConfig::defaults_for(
        lf.num_views(),
        lf.width() * lf.height(),
        ws.sigma1,
    );
    let cfg = opts.resolve(defaults);
    cfg.validate()?;
    Ok(cfg)
}

/// Compute (or load) the initial disparity for a light field.
fn initial_disparity_for(
    lf: &LightField,
    flows_dir: Option<&PathBuf>,
    dmin: f64,
    dmax: f64,
) -> Result<DisparityMap> {
    let flows = match flows_dir {
        Some(dir) => {
            let f = init_flow::flows_from_dir(dir, lf)?;
            log_info("using external flows; built-in matcher skipped");
            f
        }
        None => {
            let radius = (dmax.abs().max(dmin.abs()).ceil() as usize + 2)
                .min(lf.width().min(lf.height()) / 2);
            init_flow::flows_for_lightfield(lf, radius)?
        }
    };
    init_flow::prepare_initial_disparity(&flows, lf.offsets(), dmin, dmax)
}

fn write_separation_outputs(
    dir: &Path,
    res: &SeparationResult,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    io::save_png(&res.t_ref, &dir.join("T_ref.png"))?;
    io::save_png(&res.s_ref, &dir.join("S_ref.png"))?;
    res.disparity.save_pfm(&dir.join("d.pfm"))?;

    // Validity mask: white where every view observed the pixel.
    let mask_img = Image::from_planes(
        res.t_ref.width(),
        res.t_ref.height(),
        vec![res
            .valid_mask
            .iter()
            .map(|&v| if v { 1.0 } else { 0.0 })
            .collect()],
    )?;
    io::save_png(&mask_img, &dir.join("mask.png"))?;

    let mut diag = String::new();
    for rec in &res.inner_log {
        writeln!(
            diag,
            "outer={} inner={} objective={:.17e} feasibility={:.17e} mu={:.17e}",
            rec.outer, rec.inner, rec.objective, rec.feasibility, rec.mu
        )
        .unwrap();
    }
    writeln!(diag, "status={:?}", res.status).unwrap();
    let p = dir.join("diagnostics.log");
    std::fs::write(&p, diag).map_err(|e| Error::io(&p, e))?;

    let mut csv = String::from("outer,objective\n");
    for (i, obj) in res.objective_history.iter().enumerate() {
        writeln!(csv, "{},{:.17e}", i, obj).unwrap();
    }
    let p = dir.join("objective.csv");
    std::fs::write(&p, csv).map_err(|e| Error::io(&p, e))?;
    Ok(())
}

fn preset_spec(preset: &str, alpha: f64, size: usize, grid: usize, seed: u64) -> Result<SyntheticSpec> {
    let transmitted = match preset {
        "planar" => TransmittedScene::Plane { disparity: 0.6 },
        "two-plane" => TransmittedScene::TwoPlane {
            d_fg: 0.8,
            d_bg: -0.4,
        },
        other => {
            return Err(Error::InvalidConfig(format!(
                "unknown preset `{other}` (expected planar or two-plane)"
            )))
        }
    };
    Ok(SyntheticSpec {
        grid_size: grid,
        width: size,
        height: size,
        transmitted,
        secondary_motion: 3.5,
        secondary_texture: None,
        transmitted_texture: None,
        alpha,
        seed,
        transmitted_blur: 3,
        secondary_blur: 1,
    })
}

fn load_spec(args_spec: Option<&PathBuf>, fallback: SyntheticSpec) -> Result<SyntheticSpec> {
    match args_spec {
        None => Ok(fallback),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str(&text).map_err(|e| Error::BadFormat {
                format: "scene spec",
                path: p.clone(),
                reason: e.to_string(),
            })
        }
    }
}

fn out_dir(cli_out: &Option<PathBuf>) -> PathBuf {
    cli_out.clone().unwrap_or_else(|| PathBuf::from("out"))
}

pub fn cmd_synth(cli: &Cli, args: &SynthArgs) -> Result<i32> {
    let mut spec = load_spec(
        args.spec.as_ref(),
        preset_spec(
            &args.preset,
            args.alpha,
            args.size,
            args.grid,
            cli.seed.unwrap_or(17),
        )?,
    )?;
    if let Some(seed) = cli.seed {
        spec.seed = seed;
    }
    let (lf, gt) = synth::render(&spec)?;
    let dir = out_dir(&cli.out);
    synth::save_scene(&spec, &lf, &gt, &dir)?;
    log_info(&format!(
        "wrote {} views plus ground truth to {}",
        lf.num_views(),
        dir.display()
    ));
    Ok(EXIT_OK)
}

pub fn cmd_separate(cli: &Cli, args: &SeparateArgs) -> Result<i32> {
    let lf = lf_model::load_lightfield(&args.input)?;
    let opts = load_config_options(cli.config.as_ref())?;
    // A provisional range for the initializer; the resolved config re-clamps.
    let (dmin0, dmax0) = (opts.dmin.unwrap_or(-3.0), opts.dmax.unwrap_or(3.0));
    let d0 = initial_disparity_for(&lf, cli.flows.as_ref(), dmin0, dmax0)?;
    let cfg = resolve_config(&lf, &d0, &opts)?;
    let res = solver::separate(&lf, &d0, &cfg)?;
    let dir = out_dir(&cli.out);
    write_separation_outputs(&dir, &res)?;
    write_run_manifest(
        &dir,
        "separate",
        &cfg,
        hash_lightfield(&lf),
        cli.seed,
        Some(&res),
    )?;
    log_info(&format!(
        "separation {:?} after {} outer iterations",
        res.status, res.outer_iterations
    ));
    Ok(match res.status {
        SolveStatus::Converged => EXIT_OK,
        _ => EXIT_NO_CONVERGENCE,
    })
}

pub fn cmd_eval(cli: &Cli, args: &EvalArgs) -> Result<i32> {
    let t_rec = io::load_image(&args.recovered.join("T_ref.png"))?;
    let s_rec = io::load_image(&args.recovered.join("S_ref.png"))?;
    let d_rec = DisparityMap::load_pfm(&args.recovered.join("d.pfm"))?;
    let truth_dir = if args.truth.join("gt").is_dir() {
        args.truth.join("gt")
    } else {
        args.truth.clone()
    };
    let t_true = io::load_image(&truth_dir.join("T_ref.png"))?;
    let s_true = io::load_image(&truth_dir.join("S_ref.png"))?;
    let d_true = DisparityMap::load_pfm(&truth_dir.join("d_true.pfm"))?;

    let mask_path = args.recovered.join("mask.png");
    let mask: Option<Vec<bool>> = if mask_path.exists() {
        let m = io::load_image(&mask_path)?;
        Some(m.plane(0).iter().map(|&v| v > 0.5).collect())
    } else {
        None
    };

    let report = metrics::evaluate(
        &t_rec,
        &s_rec,
        &d_rec,
        &t_true,
        &s_true,
        &d_true,
        0.1,
        1.0,
        mask.as_deref(),
    )?;
    let dir = out_dir(&cli.out);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let path = dir.join("eval.json");
    std::fs::write(&path, serde_json::to_string_pretty(&report).unwrap())
        .map_err(|e| Error::io(&path, e))?;
    if let Some(csv) = &args.csv {
        let mut line = String::new();
        if !csv.exists() {
            writeln!(line, "{}", EvalReport::csv_header()).unwrap();
        }
        writeln!(line, "{}", report.csv_row()).unwrap();
        use std::io::Write;
        let mut f = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(csv)
            .map_err(|e| Error::io(csv, e))?;
        f.write_all(line.as_bytes()).map_err(|e| Error::io(csv, e))?;
    }
    println!("{}", serde_json::to_string_pretty(&report).unwrap());
    Ok(EXIT_OK)
}

/// One sweep row; failures carry the error message instead of numbers.
struct SweepRow {
    alpha: f64,
    outcome: std::result::Result<(EvalReport, SolveStatus), String>,
}

pub fn cmd_sweep(cli: &Cli, args: &SweepArgs) -> Result<i32> {
    if args.alphas.is_empty() {
        return Err(Error::InvalidConfig("empty alpha list".into()));
    }
    let base = load_spec(
        args.spec.as_ref(),
        preset_spec("two-plane", 0.0, args.size, 3, cli.seed.unwrap_or(17))?,
    )?;
    let dir = out_dir(&cli.out);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let opts = load_config_options(cli.config.as_ref())?;

    let mut rows: Vec<SweepRow> = Vec::new();
    for &alpha in &args.alphas {
        let outcome = (|| -> Result<(EvalReport, SolveStatus)> {
            let mut spec = base.clone();
            spec.alpha = alpha;
            let (lf, gt) = synth::render(&spec)?;
            let (dmin0, dmax0) = (opts.dmin.unwrap_or(-3.0), opts.dmax.unwrap_or(3.0));
            let d0 = initial_disparity_for(&lf, cli.flows.as_ref(), dmin0, dmax0)?;
            let cfg = resolve_config(&lf, &d0, &opts)?;
            let res = solver::separate(&lf, &d0, &cfg)?;
            let report = metrics::evaluate(
                &res.t_ref,
                &res.s_ref,
                &res.disparity,
                &gt.t_ref,
                &gt.s_ref,
                &gt.d_true,
                0.1,
                1.0,
                Some(&res.valid_mask),
            )?;
            write_separation_outputs(&dir.join(format!("alpha_{alpha:.2}")), &res)?;
            Ok((report, res.status))
        })();
        match &outcome {
            Ok((report, status)) => log_info(&format!(
                "alpha {alpha:.2}: T {:.2}% S {:.2}% bad-d {:.2}% ({status:?})",
                report.incorrect_pixel_pct_t,
                report.incorrect_pixel_pct_s,
                report.bad_pixel_pct_d
            )),
            Err(e) => log_error(&format!("alpha {alpha:.2} failed: {e}")),
        }
        rows.push(SweepRow {
            alpha,
            outcome: outcome.map_err(|e| e.to_string()),
        });
    }

    let mut csv = String::from("alpha,incorrect_pct_T,incorrect_pct_S,bad_pixel_pct_d\n");
    for row in &rows {
        match &row.outcome {
            Ok((r, _)) => writeln!(
                csv,
                "{},{},{},{}",
                row.alpha, r.incorrect_pixel_pct_t, r.incorrect_pixel_pct_s, r.bad_pixel_pct_d
            )
            .unwrap(),
            Err(e) => writeln!(csv, "# alpha={} failed: {}", row.alpha, e).unwrap(),
        }
    }
    let p = dir.join("sweep.csv");
    std::fs::write(&p, csv).map_err(|e| Error::io(&p, e))?;

    let ok_rows: Vec<(&f64, &EvalReport)> = rows
        .iter()
        .filter_map(|r| r.outcome.as_ref().ok().map(|(rep, _)| (&r.alpha, rep)))
        .collect();
    if !ok_rows.is_empty() {
        let xs: Vec<f64> = ok_rows.iter().map(|(a, _)| **a).collect();
        let t: Vec<f64> = ok_rows.iter().map(|(_, r)| r.incorrect_pixel_pct_t).collect();
        let s: Vec<f64> = ok_rows.iter().map(|(_, r)| r.incorrect_pixel_pct_s).collect();
        chart::plot_sweep(
            &xs,
            &[
                ("incorrect T", t, [0.8, 0.15, 0.1]),
                ("incorrect S", s, [0.1, 0.2, 0.8]),
            ],
            &dir.join("sweep.png"),
        )?;
    }
    Ok(if ok_rows.is_empty() {
        EXIT_INPUT_ERROR
    } else {
        EXIT_OK
    })
}

pub fn cmd_refocus(cli: &Cli, args: &RefocusArgs) -> Result<i32> {
    let t_ref = io::load_image(&args.input.join("T_ref.png"))?;
    let d = DisparityMap::load_pfm(&args.input.join("d.pfm"))?;
    let params = RefocusParams {
        focal_disparity: args.focal,
        aperture: args.aperture,
    };
    let out = refocus(&t_ref, &d, &params)?;
    let dir = out_dir(&cli.out);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    io::save_png(&out, &dir.join("refocused.png"))?;
    Ok(EXIT_OK)
}

fn frame_dirs(input: &Path, range: Option<&String>) -> Result<Vec<(usize, PathBuf)>> {
    let (lo, hi) = match range {
        None => (0usize, usize::MAX),
        Some(r) => {
            let parts: Vec<&str> = r.split("..").collect();
            if parts.len() != 2 {
                return Err(Error::InvalidConfig(format!("bad frame range `{r}`")));
            }
            (
                parts[0].parse().map_err(|_| {
                    Error::InvalidConfig(format!("bad frame range `{r}`"))
                })?,
                parts[1].parse().map_err(|_| {
                    Error::InvalidConfig(format!("bad frame range `{r}`"))
                })?,
            )
        }
    };
    let mut frames = Vec::new();
    let entries = std::fs::read_dir(input).map_err(|e| Error::io(input, e))?;
    for entry in entries.flatten() {
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(num) = name.strip_prefix("frame_") {
            if let Ok(k) = num.parse::<usize>() {
                if k >= lo && k <= hi && entry.path().is_dir() {
                    frames.push((k, entry.path()));
                }
            }
        }
    }
    frames.sort_by_key(|(k, _)| *k);
    Ok(frames)
}

pub fn cmd_video(cli: &Cli, args: &VideoArgs) -> Result<i32> {
    let frames = frame_dirs(&args.input, args.frames.as_ref())?;
    if frames.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "no frame_<k> directories under {}",
            args.input.display()
        )));
    }
    let opts = load_config_options(cli.config.as_ref())?;
    let out_root = out_dir(&cli.out);
    let mut warm_d: Option<DisparityMap> = None;
    let mut all_converged = true;
    for (k, frame_path) in frames {
        let lf = match lf_model::load_lightfield(&frame_path) {
            Ok(lf) => lf,
            Err(e) => {
                log_error(&format!("skipping frame {k}: {e}"));
                continue;
            }
        };
        let (dmin0, dmax0) = (opts.dmin.unwrap_or(-3.0), opts.dmax.unwrap_or(3.0));
        let d0 = match &warm_d {
            // Warm start: the previous frame's refined disparity.
            Some(d) if d.width() == lf.width() && d.height() == lf.height() => d.clone(),
            _ => initial_disparity_for(&lf, cli.flows.as_ref(), dmin0, dmax0)?,
        };
        let cfg = resolve_config(&lf, &d0, &opts)?;
        let res = solver::separate(&lf, &d0, &cfg)?;
        let dir = out_root.join(format!("frame_{k}"));
        write_separation_outputs(&dir, &res)?;
        write_run_manifest(&dir, "video", &cfg, hash_lightfield(&lf), cli.seed, Some(&res))?;
        log_info(&format!(
            "frame {k}: {:?} after {} outer iterations",
            res.status, res.outer_iterations
        ));
        if res.status != SolveStatus::Converged {
            all_converged = false;
        }
        warm_d = Some(res.disparity.clone());
    }
    Ok(if all_converged {
        EXIT_OK
    } else {
        EXIT_NO_CONVERGENCE
    })
}

/// Entry point shared by the binary and the integration tests.
pub fn run(cli: &Cli) -> i32 {
    LOG_LEVEL.store(level_of(&cli.log_level), Ordering::Relaxed);
    let outcome = match &cli.command {
        Command::Synth(args) => cmd_synth(cli, args),
        Command::Separate(args) => cmd_separate(cli, args),
        Command::Eval(args) => cmd_eval(cli, args),
        Command::Sweep(args) => cmd_sweep(cli, args),
        Command::Refocus(args) => cmd_refocus(cli, args),
        Command::Video(args) => cmd_video(cli, args),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            log_error(&e.to_string());
            EXIT_INPUT_ERROR
        }
    }
}
