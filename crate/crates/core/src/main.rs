use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::json;

use spinproj::driver::{self, ReportFormat, ScanConfig, ScanMode};
use spinproj::fci::{solve_fci_with, FciOptions};
use spinproj::recoupling::{closed_form_blocks, verify_block_diagonal, OverlapInputs4e};
use spinproj::scf::{cuhf_solve, uhf_scf};
use spinproj::{read_fcidump, Error, IntegralSet, SystemSpec};

#[derive(Parser)]
#[command(name = "spinproj", version, about = "Spin-projected constrained UHF")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// FCIDUMP input; repeat for several systems.
    #[arg(long, global = true)]
    fcidump: Vec<PathBuf>,
    /// Output file (stdout when omitted).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, default_value = "csv")]
    format: String,
    #[arg(long, global = true)]
    epsilon_pair: Option<f64>,
    #[arg(long, global = true, default_value_t = 7)]
    seed: u64,
    /// Key-value configuration file; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Single constrained or fixed-multiplier SCF.
    #[command(allow_negative_numbers = true)]
    Scf {
        #[arg(long, conflicts_with = "lambda")]
        s2_target: Option<f64>,
        #[arg(long)]
        lambda: Option<f64>,
    },
    /// Scan over the imposed <S^2>.
    #[command(allow_negative_numbers = true)]
    Scan {
        /// `start:stop:step` or a comma separated list.
        #[arg(long)]
        grid: Option<String>,
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        n_states: Option<usize>,
        #[arg(long)]
        no_fci: bool,
        #[arg(long)]
        fci_reference: Option<f64>,
        #[arg(long)]
        no_refine: bool,
    },
    Fci {
        #[arg(long, default_value_t = 1)]
        n_states: usize,
    },
    /// Checks the four-electron recoupling identities.
    #[command(allow_negative_numbers = true)]
    RecoupleCheck {
        #[arg(long, requires_all = ["g23", "g03", "g21"])]
        g01: Option<f64>,
        #[arg(long)]
        g23: Option<f64>,
        #[arg(long)]
        g03: Option<f64>,
        #[arg(long)]
        g21: Option<f64>,
        #[arg(long)]
        random: Option<usize>,
    },
    /// Runs a fast internal consistency suite.
    Selfcheck,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Header { .. }
        | Error::Parse { .. }
        | Error::DataConsistency(_)
        | Error::InvalidInput(_)
        | Error::Unsupported(_)
        | Error::Domain(_)
        | Error::Io(_)
        | Error::Json(_)
        | Error::Csv(_) => 2,
        Error::SizeCap { .. } => 4,
        _ => 3,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn write_out(out: Option<&Path>, text: &str) -> spinproj::Result<()> {
    match out {
        Some(p) => std::fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn load(paths: &[PathBuf]) -> spinproj::Result<Vec<(PathBuf, SystemSpec, IntegralSet)>> {
    if paths.is_empty() {
        return Err(Error::InvalidInput("--fcidump is required".into()));
    }
    paths
        .iter()
        .map(|p| read_fcidump(p).map(|(s, i)| (p.clone(), s, i)))
        .collect()
}

fn base_config(g: &Global) -> spinproj::Result<ScanConfig> {
    let mut cfg = ScanConfig::default();
    if let Some(path) = &g.config {
        let text = std::fs::read_to_string(path)?;
        for (k, v) in driver::parse_key_values(&text)? {
            cfg.set(&k, &v)?;
        }
    }
    if let Some(e) = g.epsilon_pair {
        cfg.epsilon_pair = e;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> spinproj::Result<()> {
    let g = &cli.global;
    let format: ReportFormat = g.format.parse()?;
    let mut cfg = base_config(g)?;
    match cli.command {
        Command::Scf { s2_target, lambda } => {
            let mut rows = Vec::new();
            for (path, spec, ints) in load(&g.fcidump)? {
                let sol = match (s2_target, lambda) {
                    (Some(t), _) => cuhf_solve(&ints, &spec, t, None, &cfg.scf)?,
                    (None, l) => {
                        let s = uhf_scf(&ints, &spec, l.unwrap_or(0.0), None, &cfg.scf)?;
                        if !s.converged {
                            return Err(Error::NotConverged {
                                iterations: s.iterations,
                                energy: s.energy,
                            });
                        }
                        s
                    }
                };
                rows.push(json!({
                    "fcidump": path.display().to_string(),
                    "lambda": sol.lambda,
                    "energy": sol.energy,
                    "s2": sol.s2_achieved,
                    "iterations": sol.iterations,
                }));
            }
            let text = match format {
                ReportFormat::Json => serde_json::to_string_pretty(&rows)? + "\n",
                ReportFormat::Csv => {
                    let mut s = String::from("fcidump,lambda,energy,s2,iterations\n");
                    for r in &rows {
                        s += &format!("{},{},{},{},{}\n", r["fcidump"].as_str().unwrap_or(""), r["lambda"], r["energy"], r["s2"], r["iterations"]);
                    }
                    s
                }
            };
            write_out(g.out.as_deref(), &text)
        }
        Command::Scan {
            grid,
            mode,
            n_states,
            no_fci,
            fci_reference,
            no_refine,
        } => {
            if let Some(grid) = grid {
                cfg.set("grid", &grid)?;
            }
            if let Some(mode) = mode {
                cfg.mode = mode.parse::<ScanMode>()?;
            }
            if let Some(n) = n_states {
                cfg.n_states = n;
            }
            if no_fci {
                cfg.fci = false;
            }
            if fci_reference.is_some() {
                cfg.fci_reference = fci_reference;
            }
            if no_refine {
                cfg.refine = None;
            }
            let systems = load(&g.fcidump)?;
            let scans: Vec<_> = systems
                .par_iter()
                .map(|(_, spec, ints)| driver::run(&cfg, spec, ints))
                .collect::<spinproj::Result<_>>()?;
            for ((path, _, _), scan) in systems.iter().zip(&scans) {
                let m = &scan.minimum;
                eprintln!(
                    "{}: minimum E = {:.8} at <S^2> = {} (k_eff {}), capture rhf {:?} uhf {:?}",
                    path.display(),
                    m.energy,
                    m.s2_target,
                    m.k_eff,
                    scan.capture.rhf_baseline,
                    scan.capture.uhf_baseline
                );
            }
            match (&g.out, scans.len()) {
                (Some(out), 1) => driver::emit_report(&scans[0], format, cfg.n_states, out),
                (Some(out), _) => {
                    for ((path, _, _), scan) in systems.iter().zip(&scans) {
                        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("scan");
                        let ext = out.extension().and_then(|s| s.to_str()).unwrap_or("out");
                        let target = out.with_file_name(format!(
                            "{}_{stem}.{ext}",
                            out.file_stem().and_then(|s| s.to_str()).unwrap_or("report")
                        ));
                        driver::emit_report(scan, format, cfg.n_states, &target)?;
                    }
                    Ok(())
                }
                (None, _) => {
                    for scan in &scans {
                        let text = match format {
                            ReportFormat::Csv => driver::to_csv(scan, cfg.n_states)?,
                            ReportFormat::Json => driver::to_json(scan)?,
                        };
                        print!("{text}");
                    }
                    Ok(())
                }
            }
        }
        Command::Fci { n_states } => {
            let opts = FciOptions {
                cap: cfg.fci_cap,
                ..FciOptions::default()
            };
            let mut text = String::new();
            if format == ReportFormat::Csv {
                text += "fcidump,state,energy,s2\n";
            }
            let mut all = Vec::new();
            for (path, spec, ints) in load(&g.fcidump)? {
                let r = solve_fci_with(&spec, &ints, n_states, &opts)?;
                for (i, (e, s2)) in r.energies.iter().zip(&r.s2_values).enumerate() {
                    text += &format!("{},{i},{e},{s2}\n", path.display());
                }
                all.push(json!({"fcidump": path.display().to_string(), "result": r}));
            }
            if format == ReportFormat::Json {
                text = serde_json::to_string_pretty(&all)? + "\n";
            }
            write_out(g.out.as_deref(), &text)
        }
        Command::RecoupleCheck {
            g01,
            g23,
            g03,
            g21,
            random,
        } => {
            let mut inputs = Vec::new();
            if let (Some(a), Some(b), Some(c), Some(d)) = (g01, g23, g03, g21) {
                inputs.push(OverlapInputs4e::new(a, b, c, d)?);
            }
            let mut rng = ChaCha8Rng::seed_from_u64(g.seed);
            for _ in 0..random.unwrap_or(0) {
                let mut v = [0.0; 4];
                v.iter_mut().for_each(|x| *x = rng.random_range(-0.9..=0.9));
                inputs.push(OverlapInputs4e::new(v[0], v[1], v[2], v[3])?);
            }
            if inputs.is_empty() {
                return Err(Error::InvalidInput("give --g01 --g23 --g03 --g21 or --random N".into()));
            }
            let mut text = String::from("g01,g23,g03,g21,offblock_norm,closed_form_diff\n");
            let mut worst = 0.0_f64;
            for gi in &inputs {
                let b = verify_block_diagonal(gi);
                let d = b.max_abs_diff(&closed_form_blocks(gi));
                worst = worst.max(b.offblock_norm).max(d);
                text += &format!("{},{},{},{},{:e},{:e}\n", gi.g01, gi.g23, gi.g03, gi.g21, b.offblock_norm, d);
            }
            write_out(g.out.as_deref(), &text)?;
            if worst > 1e-12 {
                return Err(Error::Inconsistency(format!("recoupling deviation {worst:e}")));
            }
            Ok(())
        }
        Command::Selfcheck => {
            let report = spinproj::selfcheck::run(g.seed)?;
            write_out(g.out.as_deref(), &report)
        }
    }
}
