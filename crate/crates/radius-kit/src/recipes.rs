//! Experiment recipes: seeded instance generators and the three-way
//! estimator comparison study (least squares vs worst case vs probabilistic).

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{numerical_rank, regularize, NormP, ProblemInstance};
use crate::sampling::RngStream;
use crate::violation::{SpsaConfig, ViolationSolver};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecipeKind {
    /// dense random integer measurements of a 5-dimensional parameter
    Sec7,
    /// second-order FIR identification from lagged Gaussian inputs
    Fir2,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Recipe {
    pub kind: RecipeKind,
    pub m: usize,
    pub n: usize,
    pub s: usize,
    pub rho: f64,
}

impl Recipe {
    pub fn sec7() -> Self {
        Self {
            kind: RecipeKind::Sec7,
            m: 150,
            n: 5,
            s: 3,
            rho: 5.0,
        }
    }

    pub fn fir2() -> Self {
        Self {
            kind: RecipeKind::Fir2,
            m: 100,
            n: 2,
            s: 2,
            rho: 0.5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GeneratedInstance {
    pub instance: ProblemInstance,
    pub x_true: DVector<f64>,
    pub z_true: DVector<f64>,
}

fn sec7_solution_matrix(n: usize, s: usize) -> DMatrix<f64> {
    if n == 5 && s == 3 {
        DMatrix::from_row_slice(
            3,
            5,
            &[
                -5.0, 10.0, -7.0, 0.0, 0.0, //
                3.0, -4.0, 7.0, 0.0, 0.0, //
                2.0, 6.0, 4.0, 0.0, 0.0,
            ],
        )
    } else {
        DMatrix::from_fn(s, n, |i, j| if i == j { 1.0 } else { 0.0 })
    }
}

/// Draws a fresh instance of the requested kind. Deterministic per stream.
pub fn generate_instance(recipe: &Recipe, stream: RngStream) -> Result<GeneratedInstance> {
    let (m, n, s) = (recipe.m, recipe.n, recipe.s);
    let rho = recipe.rho;
    match recipe.kind {
        RecipeKind::Sec7 => {
            // integer-rounded uniform information matrix; retry the rare
            // rank-deficient draws on a fresh substream
            for attempt in 0..100u64 {
                let mut rng = stream.substream(attempt).rng();
                let info =
                    DMatrix::from_fn(m, n, |_, _| (20.0 * rng.gen::<f64>() - 10.0).round());
                if numerical_rank(&info) < n {
                    continue;
                }
                let x_true = DVector::from_element(n, 1.0);
                let eta = DVector::from_fn(m, |_, _| rho * (2.0 * rng.gen::<f64>() - 1.0));
                let y = &info * &x_true + eta;
                let smat = sec7_solution_matrix(n, s);
                let z_true = &smat * &x_true;
                let instance = ProblemInstance::new(info, y, rho, NormP::Inf, smat);
                return Ok(GeneratedInstance {
                    instance,
                    x_true,
                    z_true,
                });
            }
            Err(Error::NumericalFailure(
                "could not draw a full-rank information matrix".into(),
            ))
        }
        RecipeKind::Fir2 => {
            if n != 2 || s != 2 {
                return Err(Error::InvalidConfig(
                    "the FIR recipe is a 2-parameter model (n = s = 2)".into(),
                ));
            }
            let mut rng = stream.rng();
            // lagged regressors from a Gaussian input sequence
            let u: Vec<f64> = (0..m + 1)
                .map(|_| {
                    use rand_distr::{Distribution, StandardNormal};
                    <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
                })
                .collect();
            let info = DMatrix::from_fn(m, 2, |t, j| u[t + 1 - j]);
            let x_true = DVector::from_vec(vec![1.25, 2.35]);
            let eta = DVector::from_fn(m, |_, _| rho * (2.0 * rng.gen::<f64>() - 1.0));
            let y = &info * &x_true + eta;
            let instance = ProblemInstance::new(
                info,
                y,
                rho,
                NormP::Inf,
                DMatrix::identity(2, 2),
            );
            let z_true = x_true.clone();
            Ok(GeneratedInstance {
                instance,
                x_true,
                z_true,
            })
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EstimatorStats {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub err_mean: f64,
    pub err_variance: f64,
    pub err_std_error: f64,
}

fn stats_of(estimates: &[Vec<f64>], errors: &[f64]) -> EstimatorStats {
    let n_tr = estimates.len();
    let dim = estimates.first().map_or(0, |e| e.len());
    let mut mean = vec![0.0; dim];
    for e in estimates {
        for (m, v) in mean.iter_mut().zip(e.iter()) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n_tr as f64;
    }
    let mut variance = vec![0.0; dim];
    if n_tr > 1 {
        for e in estimates {
            for (va, (v, m)) in variance.iter_mut().zip(e.iter().zip(mean.iter())) {
                *va += (v - m) * (v - m);
            }
        }
        for va in &mut variance {
            *va /= (n_tr - 1) as f64;
        }
    }
    let err_mean = errors.iter().sum::<f64>() / n_tr as f64;
    let err_variance = if n_tr > 1 {
        errors.iter().map(|e| (e - err_mean).powi(2)).sum::<f64>() / (n_tr - 1) as f64
    } else {
        0.0
    };
    EstimatorStats {
        mean,
        variance,
        err_mean,
        err_variance,
        err_std_error: (err_variance / n_tr as f64).sqrt(),
    }
}

/// Mean and standard error of a per-trial difference of errors; the pairing
/// removes the shared between-instance variance, so ordering claims get a
/// much tighter margin than the two marginal standard errors suggest.
#[derive(Debug, Clone, Serialize)]
pub struct PairedDiff {
    pub mean: f64,
    pub std_error: f64,
}

fn paired_diff(a: &[f64], b: &[f64]) -> PairedDiff {
    let n = a.len();
    let diffs: Vec<f64> = a.iter().zip(b.iter()).map(|(x, y)| x - y).collect();
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let var = if n > 1 {
        diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64
    } else {
        0.0
    };
    PairedDiff {
        mean,
        std_error: (var / n as f64).sqrt(),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonSummary {
    pub trials_requested: usize,
    pub trials_completed: usize,
    pub failures: usize,
    pub z_true: Vec<f64>,
    pub least_squares: EstimatorStats,
    pub worst_case: EstimatorStats,
    pub probabilistic: EstimatorStats,
    pub wc_minus_pr: PairedDiff,
    pub ls_minus_wc: PairedDiff,
}

/// Normalized frequency table of the sup-norm errors, shared bin edges.
#[derive(Debug, Clone, Serialize)]
pub struct HistogramTable {
    pub edges: Vec<f64>,
    pub least_squares: Vec<f64>,
    pub worst_case: Vec<f64>,
    pub probabilistic: Vec<f64>,
}

impl HistogramTable {
    fn build(bins: usize, ls: &[f64], wc: &[f64], pr: &[f64]) -> Self {
        let top = ls
            .iter()
            .chain(wc)
            .chain(pr)
            .cloned()
            .fold(0.0_f64, f64::max)
            .max(1e-12);
        let edges: Vec<f64> = (0..=bins).map(|i| top * i as f64 / bins as f64).collect();
        let count = |data: &[f64]| -> Vec<f64> {
            let mut c = vec![0.0; bins];
            for &v in data {
                let idx = ((v / top) * bins as f64) as usize;
                c[idx.min(bins - 1)] += 1.0;
            }
            let total = data.len().max(1) as f64;
            c.iter_mut().for_each(|x| *x /= total);
            c
        };
        Self {
            edges,
            least_squares: count(ls),
            worst_case: count(wc),
            probabilistic: count(pr),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_lo,bin_hi,ls,wc,pr\n");
        for i in 0..self.least_squares.len() {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                self.edges[i],
                self.edges[i + 1],
                self.least_squares[i],
                self.worst_case[i],
                self.probabilistic[i]
            ));
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct ComparisonConfig {
    pub recipe: Recipe,
    pub trials: usize,
    pub epsilon: f64,
    pub spsa: SpsaConfig,
    pub vol_samples: usize,
    pub seed: u64,
    pub threads: usize,
    pub bins: usize,
}

impl ComparisonConfig {
    pub fn new(recipe: Recipe, trials: usize, epsilon: f64, seed: u64) -> Self {
        // reduced search budget so large studies stay fast; single estimates
        // should use SpsaConfig::default() instead
        let spsa = SpsaConfig {
            iterations: 20,
            samples_per_eval: 200,
            restarts: 1,
            stability_a: 4.0,
            bisection_tol_rel: 0.15,
            escalation_cap: 30_000,
            ..SpsaConfig::default()
        };
        Self {
            recipe,
            trials,
            epsilon,
            spsa,
            vol_samples: 40_000,
            seed,
            threads: 1,
            bins: 30,
        }
    }
}

fn one_trial(cfg: &ComparisonConfig, trial: usize) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let stream = RngStream::new(cfg.seed, (trial as u64) << 24);
    let gen = generate_instance(&cfg.recipe, stream)?;
    let reg = regularize(&gen.instance)?;
    let use_exact = reg.n() <= 3;
    let solver = ViolationSolver::new(reg, use_exact, cfg.vol_samples, stream.substream(1))?;
    let report = solver.probabilistic_radius(cfg.epsilon, &cfg.spsa, stream.substream(2))?;
    Ok((report.z_ls, report.z_wc, report.z_pr))
}

/// Regenerates a fresh instance per trial and aggregates the three
/// estimators' statistics. Trials run on disjoint RNG streams; the result is
/// independent of the worker count.
pub fn run_comparison(cfg: &ComparisonConfig) -> Result<(ComparisonSummary, HistogramTable)> {
    if cfg.trials == 0 {
        return Err(Error::InvalidConfig("trials must be >= 1".into()));
    }
    if !(cfg.epsilon > 0.0 && cfg.epsilon < 1.0) {
        return Err(Error::InvalidEpsilon(cfg.epsilon));
    }
    let workers = cfg.threads.max(1).min(cfg.trials);
    let mut results: Vec<Option<Result<(Vec<f64>, Vec<f64>, Vec<f64>)>>> =
        (0..cfg.trials).map(|_| None).collect();
    if workers == 1 {
        for (t, slot) in results.iter_mut().enumerate() {
            *slot = Some(one_trial(cfg, t));
        }
    } else {
        let chunks: Vec<Vec<usize>> = (0..workers)
            .map(|w| (w..cfg.trials).step_by(workers).collect())
            .collect();
        let outputs = std::thread::scope(|scope| {
            let handles: Vec<_> = chunks
                .iter()
                .map(|chunk| {
                    scope.spawn(move || {
                        chunk
                            .iter()
                            .map(|&t| (t, one_trial(cfg, t)))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("comparison worker panicked"))
                .collect::<Vec<_>>()
        });
        for (t, res) in outputs {
            results[t] = Some(res);
        }
    }

    let z_true: Vec<f64> = {
        let gen = generate_instance(&cfg.recipe, RngStream::new(cfg.seed, 0))?;
        gen.z_true.iter().cloned().collect()
    };
    let linf = |z: &[f64]| -> f64 {
        z.iter()
            .zip(z_true.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    };

    let mut ls_est = Vec::new();
    let mut wc_est = Vec::new();
    let mut pr_est = Vec::new();
    let (mut ls_err, mut wc_err, mut pr_err) = (Vec::new(), Vec::new(), Vec::new());
    let mut failures = 0usize;
    for res in results.into_iter().flatten() {
        match res {
            Ok((ls, wc, pr)) => {
                ls_err.push(linf(&ls));
                wc_err.push(linf(&wc));
                pr_err.push(linf(&pr));
                ls_est.push(ls);
                wc_est.push(wc);
                pr_est.push(pr);
            }
            Err(_) => failures += 1,
        }
    }
    if ls_est.is_empty() {
        return Err(Error::NumericalFailure("every trial failed".into()));
    }
    let summary = ComparisonSummary {
        trials_requested: cfg.trials,
        trials_completed: ls_est.len(),
        failures,
        z_true,
        least_squares: stats_of(&ls_est, &ls_err),
        worst_case: stats_of(&wc_est, &wc_err),
        probabilistic: stats_of(&pr_est, &pr_err),
        wc_minus_pr: paired_diff(&wc_err, &pr_err),
        ls_minus_wc: paired_diff(&ls_err, &wc_err),
    };
    let hist = HistogramTable::build(cfg.bins, &ls_err, &wc_err, &pr_err);
    Ok((summary, hist))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::validate;

    #[test]
    fn sec7_instance_is_consistent_by_construction() {
        let gen = generate_instance(&Recipe::sec7(), RngStream::new(60, 0)).unwrap();
        let inst = &gen.instance;
        assert!(validate(inst).passed());
        let resid = &inst.info_matrix * &gen.x_true - &inst.data;
        assert!(resid.amax() <= inst.noise_radius + 1e-12);
        // integer entries in [-10, 10]
        for v in inst.info_matrix.iter() {
            assert!(v.fract() == 0.0 && v.abs() <= 10.0);
        }
        assert_eq!((inst.m(), inst.n(), inst.s()), (150, 5, 3));
    }

    #[test]
    fn fir2_instance_contains_nominal_parameters() {
        let gen = generate_instance(&Recipe::fir2(), RngStream::new(61, 0)).unwrap();
        assert!(validate(&gen.instance).passed());
        let poly = crate::model::consistency_polytope(&gen.instance).unwrap();
        assert!(poly.contains(&gen.x_true, 1e-9));
        assert_eq!(gen.x_true.as_slice(), &[1.25, 2.35]);
    }

    #[test]
    fn generation_is_deterministic_per_stream() {
        let a = generate_instance(&Recipe::sec7(), RngStream::new(62, 3)).unwrap();
        let b = generate_instance(&Recipe::sec7(), RngStream::new(62, 3)).unwrap();
        assert_eq!(a.instance.to_json(), b.instance.to_json());
        let c = generate_instance(&Recipe::sec7(), RngStream::new(62, 4)).unwrap();
        assert_ne!(a.instance.to_json(), c.instance.to_json());
    }

    #[test]
    fn single_trial_summary_has_zero_variance() {
        let mut cfg = ComparisonConfig::new(Recipe::fir2(), 1, 0.1, 63);
        cfg.spsa.iterations = 20;
        cfg.spsa.samples_per_eval = 200;
        let (summary, _) = run_comparison(&cfg).unwrap();
        assert_eq!(summary.trials_completed, 1);
        assert!(summary.least_squares.variance.iter().all(|&v| v == 0.0));
        assert!(summary.probabilistic.err_variance == 0.0);
    }

    #[test]
    fn comparison_worker_count_does_not_change_results() {
        let mut cfg = ComparisonConfig::new(Recipe::fir2(), 6, 0.1, 64);
        cfg.spsa.iterations = 15;
        cfg.spsa.samples_per_eval = 150;
        let (one, _) = run_comparison(&cfg).unwrap();
        cfg.threads = 3;
        let (three, _) = run_comparison(&cfg).unwrap();
        assert_eq!(
            serde_json::to_string(&one).unwrap(),
            serde_json::to_string(&three).unwrap()
        );
    }

    #[test]
    fn histogram_rows_normalized() {
        let hist = HistogramTable::build(
            10,
            &[0.1, 0.2, 0.3, 0.4],
            &[0.15, 0.25, 0.2, 0.1],
            &[0.05, 0.1, 0.12, 0.2],
        );
        for col in [&hist.least_squares, &hist.worst_case, &hist.probabilistic] {
            assert!((col.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let csv = hist.to_csv();
        assert!(csv.starts_with("bin_lo,bin_hi,ls,wc,pr\n"));
        assert_eq!(csv.lines().count(), 11);
    }
}
