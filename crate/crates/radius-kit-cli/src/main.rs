//! Command-line front end: instance validation and generation, end-to-end
//! estimate reports, violation-curve export, and the three-way estimator
//! comparison study. All randomness is seeded; identical configuration and
//! seed produce byte-identical outputs.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use radius_kit::error::Error;
use radius_kit::model::{regularize, validate, NormP, ProblemInstance};
use radius_kit::mve::sdp_violation;
use radius_kit::recipes::{generate_instance, run_comparison, ComparisonConfig, Recipe};
use radius_kit::sampling::RngStream;
use radius_kit::violation::{EstimateReport, SpsaConfig, ViolationSolver};

#[derive(Parser)]
#[command(name = "radius-kit", version, about = "Linear estimation under norm-bounded noise: worst-case and probabilistic radii of information")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize, Debug)]
#[serde(rename_all = "lowercase")]
enum MethodArg {
    /// exact low-dimensional volume oracle (n <= 3)
    Exact,
    /// SPSA center search on the randomized volume oracle
    Spsa,
    /// inscribed-ellipsoid relaxation (curve only)
    Sdp,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Debug)]
enum KindArg {
    Sec7,
    Fir2,
}

#[derive(Subcommand)]
enum Cmd {
    /// Check an instance file against the model assumptions
    Validate {
        #[arg(long)]
        instance: PathBuf,
    },
    /// Generate a seeded instance from a named recipe
    Gen {
        #[arg(long, value_enum)]
        kind: KindArg,
        #[arg(long)]
        m: Option<usize>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        s: Option<usize>,
        #[arg(long)]
        rho: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// write the instance JSON here (default: stdout)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Worst-case, probabilistic and least-squares estimates for one instance
    Estimate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        instance: Option<PathBuf>,
        #[arg(long, value_enum)]
        kind: Option<KindArg>,
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum)]
        method: Option<MethodArg>,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sample the violation function over a radius grid
    Curve {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        instance: Option<PathBuf>,
        #[arg(long, value_enum)]
        kind: Option<KindArg>,
        #[arg(long)]
        seed: Option<u64>,
        /// methods to overlay; repeat the flag for several
        #[arg(long = "method", value_enum)]
        methods: Vec<MethodArg>,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        r_min: Option<f64>,
        #[arg(long)]
        r_max: Option<f64>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte Carlo comparison of the three estimators on regenerated data
    Compare {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        kind: Option<KindArg>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// On-disk experiment configuration; every flag can override a field.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
struct FileConfig {
    instance_path: Option<String>,
    instance: Option<serde_json::Value>,
    recipe: Option<Recipe>,
    epsilon: Option<f64>,
    method: Option<MethodArg>,
    n_samples: Option<usize>,
    seed: Option<u64>,
    r_grid: Option<GridSpec>,
    trials: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct GridSpec {
    min: f64,
    max: f64,
    steps: usize,
}

#[derive(Serialize)]
struct ResolvedConfig<'a> {
    epsilon: f64,
    method: &'a str,
    n_samples: usize,
    seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    r_grid: Option<&'a GridSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    trials: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    recipe: Option<&'a Recipe>,
    instance_source: String,
}

#[derive(Serialize)]
struct ReportDoc<'a> {
    seed: u64,
    n_samples: usize,
    method: &'a str,
    report: &'a EstimateReport,
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::InvalidInstance(_)
        | Error::RankDeficientInfo { .. }
        | Error::RankDeficient { .. }
        | Error::InvalidConfig(_)
        | Error::InvalidEpsilon(_)
        | Error::UnsupportedNorm(_)
        | Error::TooManyFacets { .. }
        | Error::DimensionTooLarge(_)
        | Error::Io(_)
        | Error::Serde(_) => 2,
        _ => 3,
    }
}

fn load_config(path: &Option<PathBuf>) -> Result<FileConfig, Error> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            Ok(serde_json::from_str(&text)?)
        }
        None => Ok(FileConfig::default()),
    }
}

fn recipe_from(kind: KindArg, m: Option<usize>, n: Option<usize>, s: Option<usize>, rho: Option<f64>) -> Recipe {
    let mut r = match kind {
        KindArg::Sec7 => Recipe::sec7(),
        KindArg::Fir2 => Recipe::fir2(),
    };
    if let Some(m) = m {
        r.m = m;
    }
    if let Some(n) = n {
        r.n = n;
    }
    if let Some(s) = s {
        r.s = s;
    }
    if let Some(rho) = rho {
        r.rho = rho;
    }
    r
}

/// Resolves the instance from, in order: --instance file, inline config
/// instance, config instance_path, generator recipe.
fn resolve_instance(
    flag_path: &Option<PathBuf>,
    cfg: &FileConfig,
    kind: Option<KindArg>,
    seed: u64,
) -> Result<(ProblemInstance, String, Option<Recipe>), Error> {
    if let Some(p) = flag_path {
        let text = std::fs::read_to_string(p)?;
        return Ok((
            ProblemInstance::from_json(&text)?,
            format!("file:{}", p.display()),
            None,
        ));
    }
    if let Some(v) = &cfg.instance {
        return Ok((
            ProblemInstance::from_json(&v.to_string())?,
            "inline".into(),
            None,
        ));
    }
    if let Some(p) = &cfg.instance_path {
        let text = std::fs::read_to_string(p)?;
        return Ok((ProblemInstance::from_json(&text)?, format!("file:{p}"), None));
    }
    let recipe = match (&cfg.recipe, kind) {
        (_, Some(k)) => recipe_from(k, None, None, None, None),
        (Some(r), None) => r.clone(),
        (None, None) => {
            return Err(Error::InvalidConfig(
                "no instance given: pass --instance, --kind, or a config with instance/recipe".into(),
            ))
        }
    };
    let gen = generate_instance(&recipe, RngStream::new(seed, 0))?;
    Ok((
        gen.instance,
        format!("recipe:{:?}", recipe.kind),
        Some(recipe),
    ))
}

fn method_name(m: MethodArg) -> &'static str {
    match m {
        MethodArg::Exact => "exact",
        MethodArg::Spsa => "spsa",
        MethodArg::Sdp => "sdp",
    }
}

fn default_method(inst: &ProblemInstance) -> MethodArg {
    if inst.n() <= 3 && inst.norm_p != NormP::Two {
        MethodArg::Exact
    } else {
        MethodArg::Spsa
    }
}

fn write_out(dir: &Option<PathBuf>, name: &str, content: &str) -> Result<(), Error> {
    if let Some(d) = dir {
        std::fs::create_dir_all(d)?;
        std::fs::write(d.join(name), content)?;
    }
    Ok(())
}

fn threads_from_env(flag: Option<usize>) -> usize {
    flag.or_else(|| {
        std::env::var("RADIUS_KIT_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
    })
    .unwrap_or_else(|| {
        std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1)
    })
    .max(1)
}

fn run(cli: Cli) -> Result<u8, Error> {
    match cli.cmd {
        Cmd::Validate { instance } => {
            let text = std::fs::read_to_string(&instance)?;
            let inst = ProblemInstance::from_json(&text)?;
            let report = validate(&inst);
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(if report.passed() { 0 } else { 2 })
        }
        Cmd::Gen {
            kind,
            m,
            n,
            s,
            rho,
            seed,
            out,
        } => {
            let recipe = recipe_from(kind, m, n, s, rho);
            let gen = generate_instance(&recipe, RngStream::new(seed, 0))?;
            let json = gen.instance.to_json();
            match out {
                Some(p) => {
                    std::fs::write(&p, &json)?;
                    let meta = serde_json::json!({
                        "written": p.display().to_string(),
                        "x_true": gen.x_true.as_slice(),
                        "z_true": gen.z_true.as_slice(),
                        "seed": seed,
                    });
                    println!("{}", serde_json::to_string_pretty(&meta)?);
                }
                None => println!("{json}"),
            }
            Ok(0)
        }
        Cmd::Estimate {
            config,
            instance,
            kind,
            eps,
            seed,
            method,
            samples,
            out,
        } => {
            let cfg = load_config(&config)?;
            let seed = seed.or(cfg.seed).unwrap_or(0);
            let epsilon = eps.or(cfg.epsilon).unwrap_or(0.1);
            let n_samples = samples.or(cfg.n_samples).unwrap_or(2000);
            let (inst, source, recipe) = resolve_instance(&instance, &cfg, kind, seed)?;
            let method = method.or(cfg.method).unwrap_or_else(|| default_method(&inst));
            if method == MethodArg::Sdp {
                return Err(Error::InvalidConfig(
                    "estimate supports methods exact and spsa; sdp is curve-only".into(),
                ));
            }
            let reg = regularize(&inst)?;
            let solver = ViolationSolver::new(
                reg,
                method == MethodArg::Exact,
                1_000_000,
                RngStream::new(seed, 1),
            )?;
            let spsa = SpsaConfig {
                samples_per_eval: n_samples,
                ..SpsaConfig::default()
            };
            let report = solver.probabilistic_radius(epsilon, &spsa, RngStream::new(seed, 2))?;
            let doc = ReportDoc {
                seed,
                n_samples,
                method: method_name(method),
                report: &report,
            };
            let text = serde_json::to_string_pretty(&doc)?;
            println!("{text}");
            let resolved = ResolvedConfig {
                epsilon,
                method: method_name(method),
                n_samples,
                seed,
                r_grid: None,
                trials: None,
                recipe: recipe.as_ref(),
                instance_source: source,
            };
            write_out(&out, "config.json", &serde_json::to_string_pretty(&resolved)?)?;
            write_out(&out, "report.json", &text)?;
            Ok(0)
        }
        Cmd::Curve {
            config,
            instance,
            kind,
            seed,
            methods,
            samples,
            r_min,
            r_max,
            steps,
            out,
        } => {
            let cfg = load_config(&config)?;
            let seed = seed.or(cfg.seed).unwrap_or(0);
            let n_samples = samples.or(cfg.n_samples).unwrap_or(2000);
            let (inst, source, recipe) = resolve_instance(&instance, &cfg, kind, seed)?;
            let methods = if methods.is_empty() {
                match cfg.method {
                    Some(m) => vec![m],
                    None => vec![default_method(&inst)],
                }
            } else {
                methods
            };
            let reg = regularize(&inst)?;
            let need_exact = methods.contains(&MethodArg::Exact);
            let solver = ViolationSolver::new(
                reg.clone(),
                need_exact,
                1_000_000,
                RngStream::new(seed, 1),
            )?;
            let grid_spec = match (r_min, r_max, &cfg.r_grid) {
                (Some(min), Some(max), _) => GridSpec {
                    min,
                    max,
                    steps: steps.unwrap_or(20),
                },
                (None, None, Some(g)) => GridSpec {
                    min: g.min,
                    max: g.max,
                    steps: steps.unwrap_or(g.steps),
                },
                _ => GridSpec {
                    min: solver.r_cover / 20.0,
                    max: solver.r_cover,
                    steps: steps.unwrap_or(20),
                },
            };
            if grid_spec.steps < 2 || !(grid_spec.max > grid_spec.min) || grid_spec.min <= 0.0 {
                return Err(Error::InvalidConfig(
                    "r grid needs 0 < min < max and steps >= 2".into(),
                ));
            }
            let grid: Vec<f64> = (0..grid_spec.steps)
                .map(|i| {
                    grid_spec.min
                        + (grid_spec.max - grid_spec.min) * i as f64
                            / (grid_spec.steps - 1) as f64
                })
                .collect();
            let mut csv = String::from("r,v_hat,halfwidth,method\n");
            for (mi, &method) in methods.iter().enumerate() {
                match method {
                    MethodArg::Sdp => {
                        for (i, &r) in grid.iter().enumerate() {
                            let (v, _) = sdp_violation(
                                &reg,
                                r,
                                n_samples,
                                RngStream::new(seed, ((mi as u64 + 2) << 48) | (i as u64) << 8),
                            )?;
                            csv.push_str(&format!("{r},{v},0,sdp\n"));
                        }
                    }
                    MethodArg::Exact | MethodArg::Spsa => {
                        let sub_solver = if method == MethodArg::Exact {
                            ViolationSolver::new(
                                reg.clone(),
                                true,
                                1_000_000,
                                RngStream::new(seed, 1),
                            )?
                        } else {
                            ViolationSolver::new(
                                reg.clone(),
                                false,
                                1_000_000,
                                RngStream::new(seed, 1),
                            )?
                        };
                        let spsa = SpsaConfig {
                            samples_per_eval: n_samples,
                            ..SpsaConfig::default()
                        };
                        let curve = sub_solver.violation_curve(
                            &grid,
                            &spsa,
                            RngStream::new(seed, (mi as u64 + 2) << 48),
                        )?;
                        for p in &curve.points {
                            csv.push_str(&format!(
                                "{},{},{},{}\n",
                                p.r,
                                p.v_hat,
                                p.halfwidth,
                                method_name(method)
                            ));
                        }
                    }
                }
            }
            print!("{csv}");
            let resolved = ResolvedConfig {
                epsilon: cfg.epsilon.unwrap_or(0.1),
                method: method_name(methods[0]),
                n_samples,
                seed,
                r_grid: Some(&grid_spec),
                trials: None,
                recipe: recipe.as_ref(),
                instance_source: source,
            };
            write_out(&out, "config.json", &serde_json::to_string_pretty(&resolved)?)?;
            write_out(&out, "curve.csv", &csv)?;
            Ok(0)
        }
        Cmd::Compare {
            config,
            kind,
            trials,
            eps,
            seed,
            samples,
            threads,
            out,
        } => {
            let cfg = load_config(&config)?;
            let seed = seed.or(cfg.seed).unwrap_or(0);
            let epsilon = eps.or(cfg.epsilon).unwrap_or(0.1);
            let trials = trials.or(cfg.trials).unwrap_or(100);
            let recipe = match (kind, &cfg.recipe) {
                (Some(k), _) => recipe_from(k, None, None, None, None),
                (None, Some(r)) => r.clone(),
                (None, None) => Recipe::sec7(),
            };
            let mut ccfg = ComparisonConfig::new(recipe.clone(), trials, epsilon, seed);
            if let Some(s) = samples.or(cfg.n_samples) {
                ccfg.spsa.samples_per_eval = s;
            }
            ccfg.threads = threads_from_env(threads);
            let (summary, hist) = run_comparison(&ccfg)?;
            let text = serde_json::to_string_pretty(&summary)?;
            println!("{text}");
            let resolved = ResolvedConfig {
                epsilon,
                method: "spsa",
                n_samples: ccfg.spsa.samples_per_eval,
                seed,
                r_grid: None,
                trials: Some(trials),
                recipe: Some(&recipe),
                instance_source: format!("recipe:{:?}", recipe.kind),
            };
            write_out(&out, "config.json", &serde_json::to_string_pretty(&resolved)?)?;
            write_out(&out, "report.json", &text)?;
            write_out(&out, "histogram.csv", &hist.to_csv())?;
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
