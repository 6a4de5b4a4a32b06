use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand};
use evdeblur::capture::{capture_session, read_session, synth_scene, write_session, SessionConfig};
use evdeblur::imaging::{pnm, to_luma};
use evdeblur::optim::gradcheck::{default_step, default_tol, gradcheck, gradcheck_all};
use evdeblur::pipeline::{evaluate_run, make_session, reconstruct, RunConfig};
use evdeblur::structure::{extract_structure, weight_mask_parts, MaskConfig};
use evdeblur::{par, Error};

#[derive(Parser, Debug)]
#[command(name = "evdeblur", version, about = "Event-assisted deblurring of a 2D Gaussian scene")]
struct Cli {
    /// Worker threads for the parallel kernels.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct ConfigArgs {
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,

    /// Overrides the run seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug, Default)]
struct AblationArgs {
    #[arg(long)]
    disable_struct: bool,
    #[arg(long)]
    disable_reg_r: bool,
    #[arg(long)]
    disable_reg_e: bool,
    #[arg(long)]
    disable_evs: bool,
    #[arg(long)]
    rgb_only: bool,
    #[arg(long)]
    events_only: bool,
    #[arg(long)]
    no_pose_refine: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render the ground-truth scene of a config.
    Synth {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Output image (PPM).
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate the blurred RGB frames, events and test views into a session directory.
    Capture {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Session directory to create.
        #[arg(long)]
        out: PathBuf,
        /// Use this ground-truth PPM instead of synthesizing the scene.
        #[arg(long)]
        scene: Option<PathBuf>,
    },
    /// Train both stages on a session and write a run directory.
    Reconstruct {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Session directory written by `capture`.
        #[arg(long)]
        session: PathBuf,
        /// Parent directory for runs; overrides the config.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        stage1_iters: Option<usize>,
        #[arg(long)]
        stage2_iters: Option<usize>,
        #[command(flatten)]
        ablation: AblationArgs,
    },
    /// Score the test renders of a run and write strips and metrics.json.
    Eval {
        /// Run directory written by `reconstruct`.
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        session: PathBuf,
    },
    /// Compare analytic gradients with central differences.
    Gradcheck {
        /// One component; all when omitted.
        #[arg(long)]
        component: Option<String>,
        #[arg(long, default_value_t = 3)]
        trials: usize,
        /// Write the reports as JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Structure map and confidence mask of a grayscale image.
    Mask {
        /// Input PGM (a PPM is reduced to luma).
        #[arg(long)]
        image: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Take mask and structure settings from this run configuration.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn load_config(args: &ConfigArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn mkdir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        par::set_threads(n)?;
    }
    match cli.command {
        Command::Synth { cfg, out } => {
            let cfg = load_config(&cfg)?;
            pnm::write(&out, &synth_scene(&cfg.scene)?)?;
            println!("{}", out.display());
        }
        Command::Capture { cfg, out, scene } => {
            let cfg = load_config(&cfg)?;
            let session = match scene {
                None => make_session(&cfg)?,
                Some(path) => {
                    let gt = pnm::read(&path)?;
                    if gt.width() != cfg.scene.width || gt.height() != cfg.scene.height {
                        bail!(Error::Config(format!(
                            "scene file is {}x{}, config expects {}x{}",
                            gt.width(),
                            gt.height(),
                            cfg.scene.width,
                            cfg.scene.height
                        )));
                    }
                    let (pose_noise, _) = cfg.seeded();
                    let config = SessionConfig {
                        scene: None,
                        trajectory: cfg.motion.build()?,
                        pose_noise,
                        theta: cfg.theta,
                        options: cfg.capture,
                    };
                    capture_session(gt, config)?
                }
            };
            write_session(&out, &session)?;
            println!("{} ({} events)", out.display(), session.events.len());
        }
        Command::Reconstruct { cfg, session, out, stage1_iters, stage2_iters, ablation } => {
            let mut cfg = load_config(&cfg)?;
            if let Some(out) = out {
                cfg.output_dir = out;
            }
            if let Some(n) = stage1_iters {
                cfg.schedule.stage1_iters = n;
            }
            if let Some(n) = stage2_iters {
                cfg.schedule.stage2_iters = n;
            }
            let a = &mut cfg.ablation;
            a.disable_struct |= ablation.disable_struct;
            a.disable_reg_r |= ablation.disable_reg_r;
            a.disable_reg_e |= ablation.disable_reg_e;
            a.disable_evs |= ablation.disable_evs;
            a.rgb_only |= ablation.rgb_only;
            a.events_only |= ablation.events_only;
            a.no_pose_refine |= ablation.no_pose_refine;
            cfg.validate()?;
            let session = read_session(&session)?;
            if session.width() != cfg.scene.width || session.height() != cfg.scene.height {
                bail!(Error::Config("session size differs from the configured scene".into()));
            }
            let out = reconstruct(&session, &cfg)?;
            println!("{}", out.run_dir.display());
        }
        Command::Eval { run, session } => {
            let session = read_session(&session)?;
            let report = evaluate_run(&run, &session)?;
            print!("{}", report.table());
        }
        Command::Gradcheck { component, trials, out } => {
            let reports = match component {
                Some(c) => vec![gradcheck(&c, trials, default_step(&c), default_tol(&c))?],
                None => gradcheck_all(trials)?,
            };
            println!("{:<18} {:>10} {:>10}  result", "component", "max_rel", "tol");
            for r in &reports {
                let verdict = if r.pass { "pass" } else { "FAIL" };
                println!("{:<18} {:>10.3e} {:>10.1e}  {verdict}", r.component, r.max_rel_err, r.tol);
            }
            if let Some(path) = out {
                let json = serde_json::to_string_pretty(&reports)?;
                fs::write(&path, json).map_err(|e| Error::Io { path, source: e })?;
            }
            if reports.iter().any(|r| !r.pass) {
                bail!("gradient check failed");
            }
        }
        Command::Mask { image, out, config } => {
            let (mask_cfg, structure_cfg) = match config {
                Some(p) => {
                    let cfg = RunConfig::load(p)?;
                    (cfg.objective.mask, cfg.objective.structure)
                }
                None => (MaskConfig::default(), Default::default()),
            };
            let img = pnm::read(&image)?;
            let gray = if img.channels() == 1 { img } else { to_luma(&img) };
            let parts = weight_mask_parts(&gray, &mask_cfg)?;
            let structure = extract_structure(&gray, &structure_cfg)?;
            mkdir(&out)?;
            pnm::write(out.join("weight.pgm"), &parts.weight)?;
            pnm::write(out.join("gate.pgm"), &parts.gate)?;
            pnm::write(out.join("persistence.pgm"), &parts.persistence)?;
            pnm::write(out.join("structure.pgm"), &structure.s_norm)?;
            println!("{} (gate threshold {:.4})", out.display(), parts.tau);
        }
    }
    Ok(())
}

/// 2 for configuration errors, 3 for divergence, 4 for I/O, 1 otherwise.
fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<Error>() {
        Some(Error::Config(_)) => 2,
        Some(Error::Divergence { .. } | Error::NonFiniteGradient(_)) => 3,
        Some(Error::Io { .. } | Error::BadImageFile { .. } | Error::Aevt(_)) => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
