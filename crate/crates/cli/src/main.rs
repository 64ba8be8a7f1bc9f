use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use locc_core::constructions::{delta_one_chain, delta_one_two_round, general_family, qubit_family};
use locc_core::deficit::{classify_with_report, Classification};
use locc_core::io;
use locc_core::measurement::{
    check_complete, distance_lower_detailed, distance_upper, DensityOperator, DistanceBudget,
    Measurement,
};
use locc_core::simulate::{
    convergence, run, write_csv, FamilyBuilder, GeneralFamilyBuilder, QubitFamilyBuilder,
};
use locc_core::tree::{leaf_measurement, validate, InfiniteProtocol, LoccTree, TREE_TOL};
use locc_core::{infinitize, Error, InfinitizeConfig, QubitFamilyParams, Tolerances};

const EXIT_INVALID: u8 = 1;
const EXIT_AMBIGUOUS: u8 = 2;
const EXIT_CERTIFICATE: u8 = 3;
const EXIT_THRESHOLD: u8 = 4;
const EXIT_BOUND: u8 = 5;

#[derive(Parser)]
#[command(name = "locc", version, about = "Separable measurements, LOCC trees and ray deficits")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check sibling sums, labels and isometries of a tree.
    ValidateTree {
        file: PathBuf,
        #[arg(long, default_value_t = TREE_TOL)]
        tol: f64,
    },
    /// Print the ray deficit report of a measurement.
    Delta(MeasurementArgs),
    /// Run the finite-round test; exits 3 when a certificate is found.
    Classify(MeasurementArgs),
    /// Write a constructed family to a directory.
    Build(BuildArgs),
    /// Append cycles to a finite tree so that its measurement has zero deficit.
    Infinitize {
        tree: PathBuf,
        #[arg(long)]
        eps: f64,
        #[arg(long = "L", default_value_t = 2)]
        half_length: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate the distance between two measurements.
    Distance {
        first: PathBuf,
        second: PathBuf,
        #[command(flatten)]
        budget: BudgetArgs,
    },
    /// Enumerate the branches of an infinite protocol truncated after some passes.
    Simulate {
        /// Protocol JSON, or a cycle JSON whose entry is the identity.
        protocol: PathBuf,
        /// `mixed`, `basis:K`, or a path to a density matrix JSON.
        #[arg(long, default_value = "mixed")]
        state: String,
        #[arg(long, default_value_t = 4)]
        passes: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Tabulate distances to the limit along a grid of epsilon.
    Converge {
        #[arg(long, value_enum, default_value_t = ConvergeFamily::Qubit)]
        family: ConvergeFamily,
        #[arg(long, default_value_t = 0.5)]
        q: f64,
        #[arg(long = "eps-grid", value_delimiter = ',', required = true)]
        eps_grid: Vec<f64>,
        #[arg(long = "dA", default_value_t = 2)]
        da: usize,
        #[arg(long = "dB", default_value_t = 2)]
        db: usize,
        #[arg(long = "L", default_value_t = 2)]
        half_length: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        budget: BudgetArgs,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(clap::Args)]
struct MeasurementArgs {
    file: PathBuf,
    /// Read a tree and use its leaf measurement.
    #[arg(long)]
    tree: bool,
    #[arg(long, default_value_t = Tolerances::RAY)]
    tol: f64,
}

#[derive(clap::Args)]
struct BudgetArgs {
    #[arg(long, default_value_t = 64)]
    samples: usize,
    #[arg(long, default_value_t = 4)]
    restarts: usize,
    #[arg(long = "budget-seed", default_value_t = 0)]
    budget_seed: u64,
}

impl BudgetArgs {
    fn budget(&self) -> DistanceBudget {
        DistanceBudget::new(self.samples, self.restarts, self.budget_seed)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Family {
    Qubit,
    General,
    DeltaOne,
}

#[derive(Clone, Copy, ValueEnum)]
enum ConvergeFamily {
    Qubit,
    General,
}

#[derive(clap::Args)]
struct BuildArgs {
    #[arg(long, value_enum)]
    family: Family,
    #[arg(long)]
    q: Option<f64>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long = "dA", default_value_t = 2)]
    da: usize,
    #[arg(long = "dB", default_value_t = 2)]
    db: usize,
    #[arg(long = "L", default_value_t = 2)]
    half_length: usize,
    #[arg(long = "N")]
    n: Option<usize>,
    /// Build the two-round variant of the deficit-one chain.
    #[arg(long)]
    two_round: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn load_measurement(path: &Path, tree: bool) -> Result<Measurement> {
    let text = read(path)?;
    if tree {
        let t = io::tree_from_json(&text)?;
        return Ok(leaf_measurement(&t)?);
    }
    Ok(io::measurement_from_json(&text)?)
}

fn load_protocol(path: &Path) -> Result<InfiniteProtocol> {
    let text = read(path)?;
    if let Ok(p) = io::protocol_from_json(&text) {
        return Ok(p);
    }
    let c = io::cycle_from_json(&text)?;
    let prefix = LoccTree::new(c.party_dims(), Vec::new());
    Ok(InfiniteProtocol {
        prefix,
        cycles: vec![(0, c)],
    })
}

fn load_state(spec: &str, dim: usize) -> Result<DensityOperator> {
    if spec == "mixed" {
        return Ok(DensityOperator::maximally_mixed(dim));
    }
    if let Some(k) = spec.strip_prefix("basis:") {
        let k: usize = k.parse().context("basis index")?;
        if k >= dim {
            bail!("basis index {k} out of range for dimension {dim}");
        }
        return Ok(DensityOperator::basis(dim, k));
    }
    let m: io::MatrixJson = serde_json::from_str(&read(Path::new(spec))?)?;
    let rho = DensityOperator::new(m.to_matrix()?)?;
    if rho.dim() != dim {
        bail!("state has dimension {}, protocol needs {dim}", rho.dim());
    }
    Ok(rho)
}

fn log_measurement(label: &str, m: &Measurement) -> Result<()> {
    let (c, r) = classify_with_report(m, Tolerances::RAY)?;
    println!(
        "{label}: outcomes={} complete={} delta={} classification={}",
        m.len(),
        check_complete(m, Tolerances::PSD),
        r.delta,
        c.as_str()
    );
    Ok(())
}

fn build(args: &BuildArgs) -> Result<u8> {
    fs::create_dir_all(&args.out)?;
    let out = |name: &str| args.out.join(name);
    match args.family {
        Family::Qubit => {
            let q = args.q.unwrap_or(0.5);
            let eps = args.eps.context("--eps is required")?;
            if eps >= 1.0 {
                return Err(Error::Threshold { epsilon: eps, threshold: 1.0 }.into());
            }
            let f = qubit_family(QubitFamilyParams::new(q, eps))?;
            write(&out("measurement.json"), &io::measurement_to_json(&f.m_eps))?;
            write(&out("m0.json"), &io::measurement_to_json(&f.m0))?;
            if let Some(c) = &f.cycle {
                write(&out("cycle.json"), &io::cycle_to_json(c))?;
            }
            log_measurement("measurement", &f.m_eps)?;
            log_measurement("m0", &f.m0)?;
        }
        Family::General => {
            let eps = args.eps.context("--eps is required")?;
            let f = general_family((args.da, args.db), args.half_length, args.q, eps, args.seed)?;
            write(&out("measurement.json"), &io::measurement_to_json(&f.m_eps))?;
            write(&out("m0.json"), &io::measurement_to_json(&f.m0))?;
            write(&out("cycle.json"), &io::cycle_to_json(&f.cycle))?;
            println!("epsilon_star={} q_star={} q={}", f.spec.epsilon_star, f.spec.q_star, f.spec.q);
            log_measurement("measurement", &f.m_eps)?;
            log_measurement("m0", &f.m0)?;
        }
        Family::DeltaOne => {
            let n = args.n.context("--N is required")?;
            let dims = (args.da, args.db);
            let t = if args.two_round {
                delta_one_two_round(n, dims, args.seed)?
            } else {
                delta_one_chain(n, dims, args.seed)?
            };
            let m = leaf_measurement(&t)?;
            write(&out("tree.json"), &io::tree_to_json(&t))?;
            write(&out("measurement.json"), &io::measurement_to_json(&m))?;
            log_measurement("measurement", &m)?;
        }
    }
    Ok(0)
}

fn execute(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::ValidateTree { file, tol } => {
            let t = io::tree_from_json(&read(&file)?)?;
            let report = validate(&t, tol);
            for v in &report.violations {
                println!("violation at {:?}: {}", v.path, v.message);
            }
            if !report.is_valid() {
                return Ok(EXIT_INVALID);
            }
            println!("valid: depth={} leaves={}", t.depth(), t.leaf_count());
            Ok(0)
        }
        Command::Delta(a) => {
            let m = load_measurement(&a.file, a.tree)?;
            let (_, r) = classify_with_report(&m, a.tol)?;
            print!("{}", io::report_to_json(&r, None));
            Ok(0)
        }
        Command::Classify(a) => {
            let m = load_measurement(&a.file, a.tree)?;
            let (c, r) = classify_with_report(&m, a.tol)?;
            print!("{}", io::report_to_json(&r, Some(c)));
            Ok(match c {
                Classification::NotFiniteRoundLocc => EXIT_CERTIFICATE,
                Classification::Inconclusive | Classification::TrivialIsometry => 0,
            })
        }
        Command::Build(a) => build(&a),
        Command::Infinitize {
            tree,
            eps,
            half_length,
            seed,
            out,
        } => {
            let t = io::tree_from_json(&read(&tree)?)?;
            let res = infinitize(&t, &InfinitizeConfig::new(eps, half_length, seed))?;
            fs::create_dir_all(&out)?;
            write(&out.join("protocol.json"), &io::protocol_to_json(&res.protocol))?;
            write(&out.join("measurement.json"), &io::measurement_to_json(&res.m_eps))?;
            println!("cycles={} attempts={}", res.protocol.cycles.len(), res.attempts);
            log_measurement("measurement", &res.m_eps)?;
            Ok(0)
        }
        Command::Distance { first, second, budget } => {
            let m1 = io::measurement_from_json(&read(&first)?)?;
            let m2 = io::measurement_from_json(&read(&second)?)?;
            let lower = distance_lower_detailed(&m1, &m2, budget.budget())?;
            let upper = distance_upper(&m1, &m2, &lower.assignment.rows)?;
            let v = serde_json::json!({
                "d_lower": lower.value,
                "d_upper": upper,
                "matching": lower.assignment.rows,
            });
            println!("{}", serde_json::to_string_pretty(&v)?);
            Ok(0)
        }
        Command::Simulate {
            protocol,
            state,
            passes,
            out,
        } => {
            let p = load_protocol(&protocol)?;
            let dim = p.prefix.party_dims.iter().product();
            let rho = load_state(&state, dim)?;
            let text = io::records_to_json(&run(&p, &rho, passes)?);
            match out {
                Some(path) => write(&path, &text)?,
                None => print!("{text}"),
            }
            Ok(0)
        }
        Command::Converge {
            family,
            q,
            eps_grid,
            da,
            db,
            half_length,
            seed,
            budget,
            out,
        } => {
            if let Some(e) = eps_grid.iter().find(|e| !(**e >= 0.0 && **e < 1.0)) {
                bail!("grid value {e} is outside [0, 1)");
            }
            let builder: Box<dyn FamilyBuilder> = match family {
                ConvergeFamily::Qubit => Box::new(QubitFamilyBuilder { q }),
                ConvergeFamily::General => Box::new(GeneralFamilyBuilder {
                    dims: (da, db),
                    l: half_length,
                    q: None,
                    seed,
                }),
            };
            let rows = convergence(builder.as_ref(), &eps_grid, budget.budget())?;
            let mut csv = Vec::new();
            write_csv(&rows, &mut csv)?;
            write(&out, std::str::from_utf8(&csv)?)?;
            let mut code = 0;
            for r in rows.iter().filter(|r| r.violates_bound()) {
                eprintln!(
                    "bound violated at eps={}: d_lower={} > {}",
                    r.epsilon,
                    r.d_lower,
                    r.paper_bound.unwrap_or(f64::NAN)
                );
                code = EXIT_BOUND;
            }
            Ok(code)
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<Error>() {
        Some(Error::GroupingAmbiguity { .. }) => EXIT_AMBIGUOUS,
        Some(Error::Threshold { .. }) => EXIT_THRESHOLD,
        _ => EXIT_INVALID,
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
