//! Command-line front door. Exit codes: 0 success, 1 property-suite
//! failure, 2 usage or domain error.

use bmdet::error::Error;
use bmdet::freeconv::FreeConvolution;
use bmdet::harness::{
    calibrate_sigma, estimate_logdet_tap, run_sweep, verify_ensemble_limit, write_records,
    PointKind, SweepPlan,
};
use bmdet::matrix::default_goe_scale;
use bmdet::measure::SpectralMeasure;
use bmdet::tap::TapPoint;
use bmdet::verify::run_suites;
use clap::{Args, Parser, Subcommand, ValueEnum};
use std::path::PathBuf;
use std::process::ExitCode;

const DEFAULT_SEED: u64 = 0x5EED;

#[derive(Parser)]
#[command(name = "bmdet", version, about = "TAP Hessian determinant toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Json,
    Csv,
}

#[derive(Args)]
struct TapArgs {
    /// Magnetization file: JSON array or newline-separated decimals.
    #[arg(long = "m-file")]
    m_file: PathBuf,
    #[arg(long)]
    beta: f64,
    #[arg(long, default_value_t = 0.0)]
    h: f64,
}

#[derive(Subcommand)]
enum Command {
    /// Density grid and log-potential of an atomic measure free-convolved
    /// with a semicircle.
    Freeconv {
        /// Atoms file: {"atoms": [[location, weight], ...]}.
        #[arg(long)]
        atoms: PathBuf,
        #[arg(long)]
        sigma2: f64,
        /// Number of density grid points.
        #[arg(long, default_value_t = 101)]
        grid: usize,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Variational value and branch only.
    Upsilon {
        #[command(flatten)]
        tap: TapArgs,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
    /// Full prediction: upsilon + outlier correction, region, degeneracy.
    Predict {
        #[command(flatten)]
        tap: TapArgs,
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
    /// Monte Carlo estimate of the conditioned-Hessian log-determinant
    /// (with --m-file) or of a deterministic-diagonal-plus-GOE ensemble
    /// (with --atoms and --n).
    Simulate {
        #[arg(long = "m-file")]
        m_file: Option<PathBuf>,
        #[arg(long)]
        atoms: Option<PathBuf>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long, default_value_t = 1.0)]
        beta: f64,
        #[arg(long, default_value_t = 0.0)]
        h: f64,
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        #[arg(long = "goe-scale")]
        goe_scale: Option<f64>,
        #[arg(long)]
        samples: usize,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// N-sweep of prediction vs Monte Carlo, persisted as JSONL + CSV.
    Sweep {
        /// Base magnetization pattern, tiled cyclically to each N.
        #[arg(long = "m-file")]
        m_file: PathBuf,
        #[arg(long)]
        beta: f64,
        #[arg(long, default_value_t = 0.0)]
        h: f64,
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        #[arg(long = "goe-scale")]
        goe_scale: Option<f64>,
        /// Comma-separated strictly increasing list, e.g. 32,64,128.
        #[arg(long = "n-list", value_delimiter = ',')]
        n_list: Vec<usize>,
        #[arg(long)]
        samples: usize,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the named property suite, or all of them.
    Verify {
        #[arg(long)]
        suite: Option<String>,
        #[arg(long, default_value_t = 100)]
        instances: usize,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
    /// Decide the semicircle variance realized by the sampler scale.
    Calibrate {
        #[arg(long)]
        beta: f64,
        #[arg(long = "goe-scale")]
        goe_scale: Option<f64>,
        #[arg(long, default_value_t = 256)]
        n: usize,
        #[arg(long, default_value_t = 16)]
        samples: usize,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
}

fn read_m_file(path: &PathBuf) -> Result<Vec<f64>, Error> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let trimmed = text.trim();
    if trimmed.starts_with('[') {
        serde_json::from_str::<Vec<f64>>(trimmed)
            .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
    } else {
        trimmed
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(|l| {
                l.parse::<f64>()
                    .map_err(|e| Error::Parse(format!("{}: '{l}': {e}", path.display())))
            })
            .collect()
    }
}

fn read_atoms_file(path: &PathBuf) -> Result<SpectralMeasure, Error> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    SpectralMeasure::from_json(&text)
}

fn emit(out: Option<&PathBuf>, content: &str) -> Result<(), Error> {
    match out {
        Some(p) => std::fs::write(p, content).map_err(|e| Error::Io(e.to_string())),
        None => {
            print!("{content}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<i32, Error> {
    match cli.command {
        Command::Freeconv { atoms, sigma2, grid, format, out } => {
            let nu = read_atoms_file(&atoms)?;
            let fc = FreeConvolution::new(nu, sigma2)?;
            let lp = fc.log_potential()?;
            let (lo, hi) = fc.support_hull();
            let mut rows = Vec::with_capacity(grid);
            for i in 0..grid {
                let x = lo + (hi - lo) * i as f64 / (grid.max(2) - 1) as f64;
                rows.push((x, fc.density_at(x)?));
            }
            let content = match format {
                Format::Text => {
                    let mut s = format!("log_potential = {lp:.16e}\n");
                    s.push_str(&format!("support_hull = [{lo:.16e}, {hi:.16e}]\n"));
                    for (x, d) in &rows {
                        s.push_str(&format!("{x:.16e}  {d:.16e}\n"));
                    }
                    s
                }
                Format::Csv => {
                    let mut s = String::from("x,density\n");
                    for (x, d) in &rows {
                        s.push_str(&format!("{x:.16e},{d:.16e}\n"));
                    }
                    s.push_str(&format!("# log_potential,{lp:.16e}\n"));
                    s
                }
                Format::Json => {
                    let payload = serde_json::json!({
                        "log_potential": lp,
                        "support_hull": [lo, hi],
                        "grid": rows,
                    });
                    format!("{}\n", serde_json::to_string_pretty(&payload).unwrap())
                }
            };
            emit(out.as_ref(), &content)?;
            Ok(0)
        }
        Command::Upsilon { tap, format } => {
            let p = TapPoint::new(read_m_file(&tap.m_file)?, tap.beta, tap.h)?;
            let sol = p.solve_upsilon()?;
            let content = match format {
                Format::Json => format!("{}\n", serde_json::to_string(&sol).unwrap()),
                _ => format!(
                    "g_star = {:.16e}\nupsilon = {:.16e}\nbranch = {:?}\nplefka_lhs = {:.16e}\n",
                    sol.g_star, sol.upsilon, sol.branch, sol.plefka_lhs
                ),
            };
            print!("{content}");
            Ok(0)
        }
        Command::Predict { tap, alpha, format } => {
            let p = TapPoint::new(read_m_file(&tap.m_file)?, tap.beta, tap.h)?;
            let sol = p.solve_upsilon()?;
            let pred = p.predict(alpha)?;
            let content = match format {
                Format::Json => {
                    let payload = serde_json::json!({
                        "upsilon": pred.upsilon,
                        "correction": pred.correction,
                        "total": pred.total,
                        "branch": sol.branch,
                        "g_star": sol.g_star,
                        "plefka_lhs": sol.plefka_lhs,
                        "region": pred.region,
                        "class": p.class(),
                        "degenerate": pred.degenerate,
                    });
                    format!("{}\n", serde_json::to_string(&payload).unwrap())
                }
                _ => format!(
                    "upsilon = {:.16e}\ncorrection = {:.16e}\ntotal = {:.16e}\nbranch = {:?}\n\
                     g_star = {:.16e}\nplefka_lhs = {:.16e}\nregion = {:?}\nclass = {:?}\ndegenerate: {}\n",
                    pred.upsilon,
                    pred.correction,
                    pred.total,
                    sol.branch,
                    sol.g_star,
                    sol.plefka_lhs,
                    pred.region,
                    p.class(),
                    pred.degenerate
                ),
            };
            print!("{content}");
            Ok(0)
        }
        Command::Simulate {
            m_file,
            atoms,
            n,
            beta,
            h,
            alpha,
            goe_scale,
            samples,
            seed,
            format,
            out,
        } => {
            if samples < 2 {
                return Err(Error::InvalidInput("need --samples >= 2".into()));
            }
            let record = match (m_file, atoms) {
                (Some(mf), None) => {
                    let p = TapPoint::new(read_m_file(&mf)?, beta, h)?;
                    let scale = goe_scale.unwrap_or_else(|| default_goe_scale(beta));
                    estimate_logdet_tap(&p, alpha, scale, samples, seed)?
                }
                (None, Some(af)) => {
                    let n = n.ok_or_else(|| Error::InvalidInput("--atoms mode needs --n".into()))?;
                    let nu = read_atoms_file(&af)?;
                    let scale = goe_scale.unwrap_or_else(|| default_goe_scale(beta));
                    let rep = verify_ensemble_limit(&nu, None, n, scale, samples, seed)?;
                    rep.record
                }
                _ => {
                    return Err(Error::InvalidInput(
                        "exactly one of --m-file or --atoms is required".into(),
                    ))
                }
            };
            let content = match format {
                Format::Csv => format!(
                    "N,prediction,quenched,q_lo,q_hi,annealed,residual,seed\n\
                     {},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{}\n",
                    record.n,
                    record.prediction,
                    record.quenched,
                    record.q_lo,
                    record.q_hi,
                    record.annealed,
                    record.residual,
                    record.master_seed
                ),
                _ => format!("{}\n", serde_json::to_string(&record).unwrap()),
            };
            emit(out.as_ref(), &content)?;
            Ok(0)
        }
        Command::Sweep { m_file, beta, h, alpha, goe_scale, n_list, samples, seed, out } => {
            let base = read_m_file(&m_file)?;
            let plan = SweepPlan {
                n_list,
                samples,
                beta,
                h,
                alpha,
                goe_scale,
                seed,
                kind: PointKind::Pattern { base },
            };
            let records = run_sweep(&plan, None)?;
            write_records(&records, &out)?;
            for r in &records {
                println!(
                    "N = {:4}  prediction = {:+.6}  quenched = {:+.6}  residual = {:+.6}",
                    r.n, r.prediction, r.quenched, r.residual
                );
            }
            Ok(0)
        }
        Command::Verify { suite, instances, seed, format } => {
            let results = run_suites(suite.as_deref(), instances, seed)?;
            let mut any_failed = false;
            if format == Format::Json {
                println!("{}", serde_json::to_string(&results).unwrap());
                any_failed = results.iter().any(|r| !r.passed());
            } else {
                for r in &results {
                    if r.passed() {
                        println!("suite {:<10} pass  ({} checks)", r.name, r.checks);
                    } else {
                        any_failed = true;
                        println!(
                            "suite {:<10} FAIL  ({} checks, {} violations)",
                            r.name,
                            r.checks,
                            r.failures.len()
                        );
                        for f in &r.failures {
                            println!("  {f}");
                        }
                    }
                }
            }
            Ok(if any_failed { 1 } else { 0 })
        }
        Command::Calibrate { beta, goe_scale, n, samples, seed, format } => {
            let scale = goe_scale.unwrap_or_else(|| default_goe_scale(beta));
            let rep = calibrate_sigma(beta, scale, n, samples, seed)?;
            match format {
                Format::Json => println!("{}", serde_json::to_string(&rep).unwrap()),
                _ => {
                    println!("chosen_sigma2 = {:.16e}", rep.chosen_sigma2);
                    for (s2, ks) in &rep.candidates {
                        println!("candidate sigma2 = {s2:.16e}  ks = {ks:.16e}");
                    }
                    println!("inconclusive = {}", rep.inconclusive);
                    println!(
                        "second_moment = {:.16e} (ok = {})",
                        rep.second_moment, rep.second_moment_ok
                    );
                }
            }
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
