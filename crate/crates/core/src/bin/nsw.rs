//! Command-line surface: solve, certify, oracle, instance generation, and a
//! batch benchmark harness writing one CSV row per instance.
//!
//! Exit codes: 0 ok, 2 input error, 3 internal invariant or iteration abort,
//! 4 certification failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};

use nsw_solver::certify::{auxiliary_upper_bound, certify, nsw_nth_power, CertifyError};
use nsw_solver::generators::{self, CapMode, RandomSpec};
use nsw_solver::instance::{instance_from_json, instance_to_json, Instance};
use nsw_solver::oracle::{brute_force_opt, max_states_from_env, state_space_size};
use nsw_solver::solver::{solve, SolveError, SolverOutput};
use nsw_solver::{cap_and_round, Rat};

#[derive(Parser)]
#[command(name = "nsw", version, about = "Approximate Nash social welfare solver for multi-copy goods with utility caps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve an instance and write the allocation, prices and MBB ratios.
    Solve {
        #[arg(long)]
        input: PathBuf,
        /// Approximation parameter as an exact rational in (0, 1/4], e.g. "1/100".
        #[arg(long)]
        epsilon: String,
        /// Output file; stdout when omitted.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Check a solver output against its instance and emit a certificate.
    Certify {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        solution: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Brute-force the exact optimum (refuses oversized state spaces;
    /// NSW_MAX_ORACLE_STATES overrides the guard).
    Oracle {
        #[arg(long)]
        input: PathBuf,
    },
    /// Generate a named instance family.
    Gen {
        #[command(subcommand)]
        family: GenFamily,
    },
    /// Solve, certify and (when small enough) brute-force every .json
    /// instance in a directory; one CSV row per instance.
    Bench {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long)]
        epsilon: String,
        #[arg(long)]
        csv: PathBuf,
    },
}

#[derive(Subcommand)]
enum GenFamily {
    /// s(k-1) goods of value K plus sk unit goods, sk identical agents.
    LowerBound {
        #[arg(long)]
        k: u64,
        #[arg(long)]
        s: u64,
        #[arg(long = "big-k")]
        big_k: u64,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Two agents, good 1 with 5 copies, good 2 with 2; utilities powers of r.
    MulticopyEnvy {
        #[arg(long)]
        epsilon: String,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Two agents, four unit goods all worth s, first agent capped at 3.
    CappedEnvy {
        #[arg(long)]
        epsilon: String,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Seeded random instance.
    Random {
        #[arg(long)]
        agents: usize,
        #[arg(long)]
        goods: usize,
        #[arg(long)]
        max_copies: usize,
        #[arg(long)]
        max_util: u64,
        #[arg(long, value_enum, default_value_t = CapModeArg::None)]
        cap_mode: CapModeArg,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Seeded uncapped market in which no item exceeds delta*u_i(G)/n.
    DeltaLarge {
        #[arg(long)]
        agents: usize,
        #[arg(long)]
        goods: usize,
        #[arg(long)]
        delta: String,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum CapModeArg {
    None,
    Random,
}

enum CliError {
    /// Unusable input: exit 2.
    Input(String),
    /// Internal invariant or iteration abort: exit 3.
    Internal(String),
    /// Certificate did not pass: exit 4.
    Certification,
}

impl From<SolveError> for CliError {
    fn from(e: SolveError) -> Self {
        match e {
            SolveError::Validation(_) | SolveError::Rounding(_) => CliError::Input(e.to_string()),
            SolveError::IterationCapExceeded { .. } | SolveError::MarketStuck { .. } => {
                CliError::Internal(e.to_string())
            }
        }
    }
}

impl From<CertifyError> for CliError {
    fn from(e: CertifyError) -> Self {
        match e {
            CertifyError::Mismatch(_) | CertifyError::Rounding(_) => CliError::Input(e.to_string()),
            other => CliError::Internal(other.to_string()),
        }
    }
}

fn read_instance(path: &Path) -> Result<Instance, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
    let inst = instance_from_json(&text).map_err(|e| CliError::Input(e.to_string()))?;
    inst.validate().map_err(|errs| {
        CliError::Input(errs.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("; "))
    })?;
    Ok(inst)
}

fn parse_epsilon(text: &str) -> Result<Rat, CliError> {
    Rat::parse(text).map_err(|e| CliError::Input(e.to_string()))
}

fn emit(output: &Option<PathBuf>, text: &str) -> Result<(), CliError> {
    match output {
        Some(path) => fs::write(path, text)
            .map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display()))),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Solve { input, epsilon, output } => {
            let inst = read_instance(&input)?;
            let eps = parse_epsilon(&epsilon)?;
            let out = solve(&inst, &eps)?;
            emit(&output, &out.to_json_string())
        }
        Command::Certify { input, solution, output } => {
            let inst = read_instance(&input)?;
            let text = fs::read_to_string(&solution)
                .map_err(|e| CliError::Input(format!("cannot read {}: {e}", solution.display())))?;
            let sol = SolverOutput::from_json_str(&text).map_err(CliError::Input)?;
            let cert = certify(&inst, &sol)?;
            emit(&output, &cert.to_json_string())?;
            if cert.pass() {
                Ok(())
            } else {
                Err(CliError::Certification)
            }
        }
        Command::Oracle { input } => {
            let inst = read_instance(&input)?;
            let res = brute_force_opt(&inst, max_states_from_env())
                .map_err(|e| CliError::Input(e.to_string()))?;
            println!("{}", res.to_json_string(inst.n()));
            Ok(())
        }
        Command::Gen { family } => {
            let (inst, output) = match family {
                GenFamily::LowerBound { k, s, big_k, output } => {
                    (generators::lower_bound(k, s, big_k), output)
                }
                GenFamily::MulticopyEnvy { epsilon, output } => {
                    let eps = parse_epsilon(&epsilon)?;
                    (generators::multicopy_envy(&eps), output)
                }
                GenFamily::CappedEnvy { epsilon, output } => {
                    let eps = parse_epsilon(&epsilon)?;
                    (generators::capped_envy(&eps), output)
                }
                GenFamily::Random { agents, goods, max_copies, max_util, cap_mode, seed, output } => {
                    let spec = RandomSpec {
                        n: agents,
                        m: goods,
                        max_copies,
                        max_util,
                        cap_mode: match cap_mode {
                            CapModeArg::None => CapMode::Uncapped,
                            CapModeArg::Random => CapMode::Random,
                        },
                        seed,
                    };
                    (generators::random_instance(&spec), output)
                }
                GenFamily::DeltaLarge { agents, goods, delta, seed, output } => {
                    let delta = parse_epsilon(&delta)?;
                    (generators::delta_large(agents, goods, &delta, seed), output)
                }
            };
            let inst = inst.map_err(|e| CliError::Input(e.to_string()))?;
            emit(&output, &instance_to_json(&inst))
        }
        Command::Bench { dir, epsilon, csv } => {
            let eps = parse_epsilon(&epsilon)?;
            bench(&dir, &eps, &csv)
        }
    }
}

const CSV_HEADER: &str = "id,n,m,M,epsilon,alg_nsw,oracle_nsw,upper_bound,ratio_ub,ratio_opt,iterations,wall_ms";

fn bench(dir: &Path, eps: &Rat, csv_path: &Path) -> Result<(), CliError> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| CliError::Input(format!("cannot read {}: {e}", dir.display())))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "json"))
        .collect();
    files.sort();
    let mut rows = vec![CSV_HEADER.to_string()];
    for path in &files {
        let id = path
            .file_stem()
            .map(|s| s.to_string_lossy().replace(',', "_"))
            .unwrap_or_default();
        match bench_one(path, eps) {
            Ok(row) => rows.push(format!("{id},{row}")),
            Err(msg) => {
                eprintln!("{id}: {msg}");
                rows.push(format!("{id},,,,,,,,,,,"));
            }
        }
    }
    fs::write(csv_path, rows.join("\n") + "\n")
        .map_err(|e| CliError::Input(format!("cannot write {}: {e}", csv_path.display())))
}

fn bench_one(path: &Path, eps: &Rat) -> Result<String, String> {
    let inst = read_instance(path).map_err(|e| match e {
        CliError::Input(m) | CliError::Internal(m) => m,
        CliError::Certification => "certification failure".into(),
    })?;
    let n = inst.n();
    let m = inst.m();
    let total_items: usize = inst.copies.iter().sum();
    let start = Instant::now();
    let out = solve(&inst, eps).map_err(|e| e.to_string())?;
    let wall_ms = start.elapsed().as_millis();
    // welfare columns live in the input's own utility domain (like the
    // oracle subcommand); the upper bound comes from the certificate and is
    // rounded-domain, so ratio_ub stays a conservative certified ratio
    let alg = nsw_nth_power(&inst, &out.allocation);
    let rounded = cap_and_round(&inst, eps).map_err(|e| e.to_string())?;
    let aux = auxiliary_upper_bound(&rounded, &out).map_err(|e| e.to_string())?;
    let root = |v: &Rat| v.to_f64().powf(1.0 / n as f64);
    let alg_nsw = root(&alg);
    let upper = root(&aux.bound_nth_power);
    let ratio_ub = if alg.is_positive() {
        format!("{}", root(&(&aux.bound_nth_power / &alg)))
    } else {
        String::new()
    };
    let max_states = max_states_from_env();
    let (oracle_nsw, ratio_opt) = if state_space_size(&inst) <= max_states.into() {
        let res = brute_force_opt(&inst, max_states).map_err(|e| e.to_string())?;
        let o = root(&res.best_nsw_nth_power);
        let r = if alg.is_positive() {
            format!("{}", root(&(&res.best_nsw_nth_power / &alg)))
        } else {
            String::new()
        };
        (format!("{o}"), r)
    } else {
        (String::new(), String::new())
    };
    Ok(format!(
        "{n},{m},{total_items},{eps},{alg_nsw},{oracle_nsw},{upper},{ratio_ub},{ratio_opt},{iters},{wall_ms}",
        iters = out.counters.iterations,
    ))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Internal(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
        Err(CliError::Certification) => {
            eprintln!("certification failed");
            ExitCode::from(4)
        }
    }
}
