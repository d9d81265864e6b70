use std::error::Error;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use relaxkit::bench::{alpha_grid, generate_instance_with, parse_variants, CostRule, run_benchmark, BenchConfig, PolyInstance};
use relaxkit::expr::parse_model;
use relaxkit::milp::{branch_and_bound, external_solve, format_solution, read_lp, write_lp_file, BranchOptions, SolverCommand};
use relaxkit::relaxations::{build, BinaryFormulation, FactorableProblem, RelaxationVariant, ReportLine, SolveOptions, VariantTag};

#[derive(Parser)]
#[command(name = "relaxkit", version, about = "Relaxations of polynomial programs")]
struct Cli {
    /// TOML settings file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write random instances as JSON files.
    Gen {
        #[arg(long, default_value_t = 5)]
        n: usize,
        #[arg(long, default_value_t = 10)]
        m: usize,
        #[arg(long, default_value_t = 4)]
        r: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        count: u64,
        #[arg(long)]
        out: PathBuf,
        /// Sign rule for the linear cost.
        #[arg(long, value_enum, default_value_t = CostRule::Stationary)]
        cost: CostRule,
    },
    /// Build and solve one relaxation, printing a JSON report line.
    Relax {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long, default_value = "crmip")]
        variant: VariantTag,
        /// Tangent points per power node.
        #[arg(long)]
        alpha: Option<usize>,
        /// Discretization points per product factor.
        #[arg(long)]
        beta: Option<usize>,
        #[arg(long)]
        sep_limit: Option<usize>,
        #[arg(long)]
        formulation: Option<BinaryFormulation>,
        /// Also write the model as an LP file.
        #[arg(long)]
        emit_lp: Option<PathBuf>,
    },
    /// Solve an LP file with the embedded or an external solver.
    Solve {
        #[arg(long)]
        model: PathBuf,
        /// Command with `{input}` and `{output}` placeholders.
        #[arg(long)]
        external: Option<String>,
    },
    /// Run variants over every instance of a directory.
    Bench {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long, default_value = "mc,cr,mip,crmip")]
        variants: String,
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Points of the alpha grid minus one.
        #[arg(long, default_value_t = 100)]
        grid: usize,
    },
    /// Solve the CR relaxation with `x` fixed and print the violated pieces.
    Separate {
        #[arg(long)]
        instance: PathBuf,
        /// Comma separated values of `x`.
        #[arg(long)]
        point: String,
    },
}

fn load_problem(path: &Path) -> Result<(String, FactorableProblem), Box<dyn Error>> {
    let text = fs::read_to_string(path)?;
    let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    if path.extension().is_some_and(|e| e == "json") {
        let inst: PolyInstance = serde_json::from_str(&text)?;
        Ok((inst.id(), inst.to_problem()))
    } else {
        Ok((name, FactorableProblem::from_model(&parse_model(&text)?)))
    }
}

fn run(cli: Cli) -> Result<(), Box<dyn Error>> {
    let config = match &cli.config {
        Some(p) => BenchConfig::load(p)?,
        None => BenchConfig::default(),
    };
    let opts = SolveOptions { node_limit: config.node_limit, ..Default::default() };
    match cli.command {
        Command::Gen { n, m, r, seed, count, out, cost } => {
            fs::create_dir_all(&out)?;
            for s in seed..seed + count {
                let inst = generate_instance_with(n, m, r, s, cost)?;
                let path = out.join(format!("{}.json", inst.id()));
                inst.write_json(&path)?;
                println!("{}", path.display());
            }
        }
        Command::Relax { instance, variant, alpha, beta, sep_limit, formulation, emit_lp } => {
            let mut vc = config.variant.clone();
            if let Some(a) = alpha {
                vc.cut_points = a;
            }
            if let Some(b) = beta {
                vc.discretization_points = b;
            }
            if let Some(l) = sep_limit {
                vc.separation_rounds = l;
            }
            if let Some(f) = formulation {
                vc.formulation = f;
            }
            let (name, problem) = load_problem(&instance)?;
            let built = build(&problem, &RelaxationVariant::with_config(variant, vc))?;
            if let Some(p) = emit_lp {
                write_lp_file(&built.model, &p)?;
            }
            let out = built.solve(&opts);
            let line = ReportLine { instance: name, variant, bound: out.bound, status: out.status, seconds: out.seconds };
            println!("{}", serde_json::to_string(&line)?);
        }
        Command::Solve { model, external } => {
            let ir = read_lp(&fs::read_to_string(&model)?)?;
            let result = match external.or_else(|| config.solver_command()) {
                Some(cmd) => external_solve(&ir, &SolverCommand(cmd))?,
                None => branch_and_bound(&ir, &BranchOptions { node_limit: opts.node_limit, backend: opts.backend }),
            };
            print!("{}", format_solution(&ir, &result));
        }
        Command::Bench { dir, variants, csv, grid } => {
            let mut paths: Vec<PathBuf> = fs::read_dir(&dir)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|e| e == "json"))
                .collect();
            paths.sort();
            let instances = paths.iter().map(|p| PolyInstance::read_json(p)).collect::<Result<Vec<_>, _>>()?;
            let variants = parse_variants(&variants, &config.variant)?;
            let report = run_benchmark(&instances, &variants, &opts, config.descent_steps, config.workers)?;
            for res in &report.results {
                for v in &variants {
                    let key = v.tag.to_string();
                    let line = ReportLine {
                        instance: res.instance.clone(),
                        variant: v.tag,
                        bound: res.bounds[&key],
                        status: res.statuses[&key],
                        seconds: res.seconds[&key],
                    };
                    println!("{}", serde_json::to_string(&line)?);
                }
            }
            if let Some(p) = csv {
                fs::write(p, report.to_csv(&alpha_grid(grid.max(1))))?;
            }
        }
        Command::Separate { instance, point } => {
            let (_, problem) = load_problem(&instance)?;
            let x: Vec<f64> = point.split(',').map(|v| v.trim().parse()).collect::<Result<_, _>>()?;
            if x.len() != problem.domain.len() {
                return Err(format!("point has {} values, instance has {} variables", x.len(), problem.domain.len()).into());
            }
            let mut vc = config.variant.clone();
            vc.separation_rounds = 0;
            let mut built = build(&problem, &RelaxationVariant::with_config(VariantTag::Cr, vc))?;
            for (var, &v) in built.x.clone().iter().zip(&x) {
                built.model.variables[var.0].lower = v;
                built.model.variables[var.0].upper = v;
            }
            let out = built.solve(&opts);
            if !out.result.is_optimal() {
                return Err(format!("relaxation at the point is {:?}", out.status).into());
            }
            let cuts = built.separation_cuts(&out.result.values);
            println!("lp value {}", out.bound.unwrap_or(f64::NAN));
            println!("{} violated pieces", cuts.len());
            for c in cuts {
                let lhs = c.activity(&out.result.values);
                println!("{} {:?} rhs {} activity {}", c.name, c.cmp, c.rhs, lhs);
            }
        }
    }
    Ok(())
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
