//! Monte Carlo verification of the statistical laws: Poisson cycle
//! counts, tilted cycle-moment ratios, the first-moment formula, the
//! limit variable W, and overlap histograms.
//!
//! Every experiment is a pure function of its configuration and seed.
//! Samples run on substreams derived from (seed, index) so parallel runs
//! aggregate deterministically, and each report echoes the resolved
//! configuration it ran under.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::bp_solver::{enumerate_color_space, solve_fixed_point, BpError};
use crate::cycle_effects::{delta_table, pair_space, transfer_matrices, CycleError, DeltaRow};
use crate::frozen::FrozenError;
use crate::instance::{mu, Instance, InstanceError};
use crate::solutions::{enumerate_solutions, SolutionsError};
use crate::util::{derive_seed, mean_var_se};
use crate::weights::{partition_exhaustive, PartitionMode, WeightsError};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Instance(#[from] InstanceError),
    #[error(transparent)]
    Solutions(#[from] SolutionsError),
    #[error(transparent)]
    Frozen(#[from] FrozenError),
    #[error(transparent)]
    Weights(#[from] WeightsError),
    #[error(transparent)]
    Bp(#[from] BpError),
    #[error(transparent)]
    Cycle(#[from] CycleError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0} = {1} exceeds the limit {2}")]
    Guard(&'static str, usize, usize),
    #[error("need at least {1} samples, got {0}")]
    TooFewSamples(usize, usize),
    #[error("1 + delta = {1:.3e} is not positive for word {0:?}")]
    NonpositiveFactor(Vec<u8>, f64),
}

/// One estimated quantity; `z` is present whenever a target and a
/// positive standard error are.
#[derive(Debug, Clone, Serialize)]
pub struct Statistic {
    pub name: String,
    pub estimate: f64,
    pub se: f64,
    pub target: Option<f64>,
    pub z: Option<f64>,
}

impl Statistic {
    pub fn plain(name: impl Into<String>, estimate: f64) -> Statistic {
        Statistic {
            name: name.into(),
            estimate,
            se: 0.0,
            target: None,
            z: None,
        }
    }

    pub fn vs(name: impl Into<String>, estimate: f64, se: f64, target: f64) -> Statistic {
        let z = if se > 0.0 {
            Some((estimate - target) / se)
        } else {
            None
        };
        Statistic {
            name: name.into(),
            estimate,
            se,
            target: Some(target),
            z,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentReport {
    pub experiment: String,
    /// Resolved run configuration, seed included.
    pub config: Map<String, Value>,
    pub statistics: Vec<Statistic>,
    pub notes: Vec<String>,
    /// Where raw per-sample rows went, when a sink was attached.
    pub raw_path: Option<String>,
}

impl ExperimentReport {
    fn new(experiment: &str, config: Map<String, Value>) -> ExperimentReport {
        ExperimentReport {
            experiment: experiment.to_string(),
            config,
            statistics: Vec::new(),
            notes: vec![DISCLAIMER.to_string()],
            raw_path: None,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn stat(&self, name: &str) -> Option<&Statistic> {
        self.statistics.iter().find(|s| s.name == name)
    }

    /// Largest |z| over every targeted statistic.
    pub fn max_abs_z(&self) -> f64 {
        self.statistics
            .iter()
            .filter_map(|s| s.z)
            .fold(0.0, |m, z| m.max(z.abs()))
    }
}

const DISCLAIMER: &str = "desk-scale run: the limit laws compared against are \
asymptotic and sharpest at much larger degrees; z-scores here check the \
formulas, not the thresholds";

/// Every literal word of half-length 1..=l_max, lexicographic with the
/// first letter most significant (the `delta_table` order).
pub fn all_words(l_max: usize) -> Vec<Vec<u8>> {
    let mut out = Vec::new();
    for l in 1..=l_max {
        for mask in 0u64..1 << (2 * l) {
            out.push(
                (0..2 * l)
                    .map(|j| ((mask >> (2 * l - 1 - j)) & 1) as u8)
                    .collect(),
            );
        }
    }
    out
}

fn word_name(zeta: &[u8]) -> String {
    zeta.iter().map(|&b| char::from(b'0' + b)).collect()
}

/// Sample covariance with its asymptotic standard error.
fn cov_se(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let s = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / s;
    let my = ys.iter().sum::<f64>() / s;
    let prods: Vec<f64> = xs
        .iter()
        .zip(ys)
        .map(|(&x, &y)| (x - mx) * (y - my))
        .collect();
    let cov = prods.iter().sum::<f64>() / (s - 1.0);
    let (_, var, _) = mean_var_se(&prods);
    (cov, (var / s).sqrt())
}

/// Standard error of the sample variance, from the fourth central moment.
fn variance_se(xs: &[f64], mean: f64, var: f64) -> f64 {
    let s = xs.len() as f64;
    let m4 = xs.iter().map(|&x| (x - mean).powi(4)).sum::<f64>() / s;
    ((m4 - var * var * (s - 3.0) / (s - 1.0)) / s).max(0.0).sqrt()
}

/// Cycle counts over random instances versus the joint Poisson law:
/// per word, E X(ζ) vs μ(ζ) and E X(X−1) vs μ(ζ)²; pairwise covariances
/// vs 0 (reported individually for the four length-one words, in
/// aggregate beyond).
pub fn poisson_experiment(
    n: usize,
    d: usize,
    k: usize,
    samples: usize,
    l_max: usize,
    seed: u64,
    raw: Option<&mut dyn Write>,
) -> Result<ExperimentReport, ExperimentError> {
    if samples < 100 {
        return Err(ExperimentError::TooFewSamples(samples, 100));
    }
    let words = all_words(l_max);
    let xs: Vec<Vec<u64>> = (0..samples)
        .into_par_iter()
        .map(|i| -> Result<Vec<u64>, ExperimentError> {
            let inst = Instance::sample(n, d, k, derive_seed(seed, i as u64))?;
            let counts = inst.enumerate_zeta_cycles(l_max);
            Ok(words
                .iter()
                .map(|w| counts.get(w).copied().unwrap_or(0))
                .collect())
        })
        .collect::<Result<_, _>>()?;

    if let Some(sink) = raw {
        let header: Vec<String> = words.iter().map(|w| word_name(w)).collect();
        writeln!(sink, "sample,{}", header.join(","))?;
        for (i, row) in xs.iter().enumerate() {
            let cells: Vec<String> = row.iter().map(|x| x.to_string()).collect();
            writeln!(sink, "{i},{}", cells.join(","))?;
        }
    }

    let mut report = ExperimentReport::new(
        "poisson",
        json_config(&[
            ("n", json!(n)),
            ("d", json!(d)),
            ("k", json!(k)),
            ("samples", json!(samples)),
            ("l_max", json!(l_max)),
            ("seed", json!(seed)),
        ]),
    );
    let cols: Vec<Vec<f64>> = (0..words.len())
        .map(|w| xs.iter().map(|row| row[w] as f64).collect())
        .collect();
    for (w, zeta) in words.iter().enumerate() {
        let target = mu(zeta.len() / 2, k, d);
        let (m, _, se) = mean_var_se(&cols[w]);
        report
            .statistics
            .push(Statistic::vs(format!("EX({})", word_name(zeta)), m, se, target));
        let fac: Vec<f64> = cols[w].iter().map(|&x| x * (x - 1.0)).collect();
        let (m2, _, se2) = mean_var_se(&fac);
        report.statistics.push(Statistic::vs(
            format!("EX2({})", word_name(zeta)),
            m2,
            se2,
            target * target,
        ));
    }
    let mut pair_count = 0usize;
    let mut pair_ok = 0usize;
    let mut max_abs_z = 0.0f64;
    for i in 0..words.len() {
        for j in i + 1..words.len() {
            let (cov, se) = cov_se(&cols[i], &cols[j]);
            let z = if se > 0.0 { cov / se } else { 0.0 };
            pair_count += 1;
            if z.abs() <= 4.0 {
                pair_ok += 1;
            }
            max_abs_z = max_abs_z.max(z.abs());
            if words[i].len() == 2 && words[j].len() == 2 {
                report.statistics.push(Statistic::vs(
                    format!("cov({},{})", word_name(&words[i]), word_name(&words[j])),
                    cov,
                    se,
                    0.0,
                ));
            }
        }
    }
    report
        .statistics
        .push(Statistic::plain("cov_pairs_total", pair_count as f64));
    report.statistics.push(Statistic::plain(
        "cov_pairs_within_4se",
        pair_ok as f64 / pair_count.max(1) as f64,
    ));
    report
        .statistics
        .push(Statistic::plain("cov_max_abs_z", max_abs_z));
    Ok(report)
}

/// Sample mean of the exact solution count against 2^n (1 − 2^{1−k})^m.
pub fn ez_experiment(
    n: usize,
    d: usize,
    k: usize,
    samples: usize,
    seed: u64,
    raw: Option<&mut dyn Write>,
) -> Result<ExperimentReport, ExperimentError> {
    if n > 20 {
        return Err(ExperimentError::Guard("n", n, 20));
    }
    let zs: Vec<f64> = (0..samples)
        .into_par_iter()
        .map(|i| -> Result<f64, ExperimentError> {
            let inst = Instance::sample(n, d, k, derive_seed(seed, i as u64))?;
            Ok(enumerate_solutions(&inst)?.len() as f64)
        })
        .collect::<Result<_, _>>()?;
    if let Some(sink) = raw {
        writeln!(sink, "sample,z_n")?;
        for (i, z) in zs.iter().enumerate() {
            writeln!(sink, "{i},{z}")?;
        }
    }
    let m = n * d / k;
    let target = 2f64.powi(n as i32) * (1.0 - 2f64.powi(1 - k as i32)).powi(m as i32);
    let (mean, var, se) = mean_var_se(&zs);
    let mut report = ExperimentReport::new(
        "ez",
        json_config(&[
            ("n", json!(n)),
            ("d", json!(d)),
            ("k", json!(k)),
            ("samples", json!(samples)),
            ("seed", json!(seed)),
        ]),
    );
    report
        .statistics
        .push(Statistic::vs("EZ", mean, se, target));
    report
        .statistics
        .push(Statistic::plain("var_Z", var));
    Ok(report)
}

/// Which partition sum weighs the cycle-moment ratio.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ZVariant {
    /// Z^tr: free-cycle-free configurations.
    Tr,
    /// Z^{(L),tr}: additionally every free piece within the truncation.
    TruncTr,
    /// Z ≡ 1, reducing the ratio to the plain Poisson mean.
    Unit,
}

#[derive(Debug, Clone, Serialize)]
pub struct RatioRow {
    pub n: usize,
    pub zeta: Vec<u8>,
    pub ratio: f64,
    pub se: f64,
    pub target: f64,
}

#[derive(Debug, Clone)]
pub struct CycleMomentOutcome {
    pub report: ExperimentReport,
    pub rows: Vec<RatioRow>,
}

/// Ratio-of-means estimate of E[Z·X(ζ)]/(μ(ζ)·E[Z]) against 1 + δ_L(ζ),
/// tracked over an n-grid; the standard error is the delta method on the
/// joint (Z·X, Z) sample.
#[allow(clippy::too_many_arguments)]
pub fn cycle_moment_experiment(
    ns: &[usize],
    d: usize,
    k: usize,
    lambda: f64,
    trunc: usize,
    variant: ZVariant,
    zetas: &[Vec<u8>],
    samples: usize,
    seed: u64,
    raw: Option<&mut dyn Write>,
) -> Result<CycleMomentOutcome, ExperimentError> {
    let targets: Vec<f64> = if variant == ZVariant::Unit {
        vec![1.0; zetas.len()]
    } else {
        // sparse degrees contract slowly; the targets only need to beat
        // the Monte Carlo error, so run the solver at a forgiving tolerance
        let space = enumerate_color_space(k, d, trunc)?;
        let fp = solve_fixed_point(&space, lambda, 1e-9, 200_000, None)?;
        let ps = pair_space(&space, &fp.q.w, lambda)?;
        let tr = transfer_matrices(&space, &ps);
        zetas
            .iter()
            .map(|z| Ok(1.0 + crate::cycle_effects::delta(&tr, z)?))
            .collect::<Result<_, CycleError>>()?
    };
    let l_top = zetas.iter().map(|z| z.len() / 2).max().unwrap_or(1);

    let mut report = ExperimentReport::new(
        "cycle-moment",
        json_config(&[
            ("ns", json!(ns)),
            ("d", json!(d)),
            ("k", json!(k)),
            ("lambda", json!(lambda)),
            ("trunc", json!(trunc)),
            ("variant", json!(format!("{variant:?}"))),
            ("zetas", json!(zetas.iter().map(|z| word_name(z)).collect::<Vec<_>>())),
            ("samples", json!(samples)),
            ("seed", json!(seed)),
        ]),
    );
    let mut rows = Vec::new();
    let mut raw_rows: Vec<String> = Vec::new();
    for (ni, &n) in ns.iter().enumerate() {
        let per: Vec<(f64, Vec<u64>)> = (0..samples)
            .into_par_iter()
            .map(|i| -> Result<(f64, Vec<u64>), ExperimentError> {
                let sub = derive_seed(seed, ((ni as u64) << 40) | i as u64);
                let inst = Instance::sample(n, d, k, sub)?;
                let z = match variant {
                    ZVariant::Unit => 1.0,
                    _ => {
                        let table = partition_exhaustive(
                            &inst,
                            lambda,
                            Some(trunc),
                            0.25,
                            PartitionMode::AllValid,
                        )?;
                        match variant {
                            ZVariant::Tr => table.z_tr_lambda,
                            ZVariant::TruncTr => table.z_trunc_tr_lambda.unwrap_or(0.0),
                            ZVariant::Unit => unreachable!(),
                        }
                    }
                };
                let counts = inst.enumerate_zeta_cycles(l_top);
                let x = zetas
                    .iter()
                    .map(|zeta| counts.get(zeta).copied().unwrap_or(0))
                    .collect();
                Ok((z, x))
            })
            .collect::<Result<_, _>>()?;
        for (i, (z, x)) in per.iter().enumerate() {
            let cells: Vec<String> = x.iter().map(|v| v.to_string()).collect();
            raw_rows.push(format!("{n},{i},{z},{}", cells.join(",")));
        }
        let bs: Vec<f64> = per.iter().map(|(z, _)| *z).collect();
        let (bm, bv, _) = mean_var_se(&bs);
        for (w, zeta) in zetas.iter().enumerate() {
            let m_w = mu(zeta.len() / 2, k, d);
            let a: Vec<f64> = per.iter().map(|(z, x)| z * x[w] as f64).collect();
            let (am, av, _) = mean_var_se(&a);
            let (cov, _) = cov_se(&a, &bs);
            let s = samples as f64;
            let ratio = am / (m_w * bm);
            let ga = 1.0 / (m_w * bm);
            let gb = -am / (m_w * bm * bm);
            let var_r = (ga * ga * av + gb * gb * bv + 2.0 * ga * gb * cov) / s;
            let se = var_r.max(0.0).sqrt();
            report.statistics.push(Statistic::vs(
                format!("ratio(n={n},zeta={})", word_name(zeta)),
                ratio,
                se,
                targets[w],
            ));
            rows.push(RatioRow {
                n,
                zeta: zeta.clone(),
                ratio,
                se,
                target: targets[w],
            });
        }
    }
    for (w, zeta) in zetas.iter().enumerate() {
        let gaps: Vec<f64> = ns
            .iter()
            .map(|&n| {
                rows.iter()
                    .find(|r| r.n == n && r.zeta == *zeta)
                    .map(|r| (r.ratio - r.target).abs())
                    .unwrap_or(f64::NAN)
            })
            .collect();
        let first = gaps.first().copied().unwrap_or(f64::NAN);
        let last = gaps.last().copied().unwrap_or(f64::NAN);
        report.statistics.push(Statistic::plain(
            format!("trend(zeta={})", word_name(zeta)),
            last - first,
        ));
        let _ = w;
    }
    if let Some(sink) = raw {
        let header: Vec<String> = zetas.iter().map(|z| word_name(z)).collect();
        writeln!(sink, "n,sample,z,{}", header.join(","))?;
        for row in &raw_rows {
            writeln!(sink, "{row}")?;
        }
    }
    Ok(CycleMomentOutcome { report, rows })
}

/// Draw W = Π_ζ (1+δ)^{X̄(ζ)} e^{−μ(ζ)δ(ζ)} with independent
/// X̄(ζ) ~ Poisson(μ(ζ)), accumulating in log scale.
pub fn sample_w(rows: &[DeltaRow], samples: usize, seed: u64) -> Vec<f64> {
    let dists: Vec<(Poisson<f64>, f64, f64)> = rows
        .iter()
        .map(|r| {
            (
                Poisson::new(r.mu).expect("positive mean"),
                r.delta.ln_1p(),
                r.mu * r.delta,
            )
        })
        .collect();
    (0..samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(seed, i as u64));
            let mut ln_w = 0.0;
            for (dist, ln1p_delta, mu_delta) in &dists {
                let x: f64 = dist.sample(&mut rng);
                ln_w += x * ln1p_delta - mu_delta;
            }
            ln_w.exp()
        })
        .collect()
}

/// The distributional-limit variable: mean against 1 and variance against
/// exp(Σ μδ²) − 1, with the δ table built at (k, d, λ, L).
#[allow(clippy::too_many_arguments)]
pub fn w_limit_experiment(
    k: usize,
    d: usize,
    lambda: f64,
    trunc: usize,
    l_max: usize,
    samples: usize,
    seed: u64,
    raw: Option<&mut dyn Write>,
) -> Result<ExperimentReport, ExperimentError> {
    let space = enumerate_color_space(k, d, trunc)?;
    let fp = solve_fixed_point(&space, lambda, 1e-12, 50_000, None)?;
    let ps = pair_space(&space, &fp.q.w, lambda)?;
    let tr = transfer_matrices(&space, &ps);
    let rows = delta_table(&tr, k, d, l_max)?;
    for r in &rows {
        if 1.0 + r.delta <= 0.0 {
            return Err(ExperimentError::NonpositiveFactor(r.zeta.clone(), 1.0 + r.delta));
        }
    }
    let sum_mu_d2: f64 = rows.iter().map(|r| r.weighted).sum();
    let ws = sample_w(&rows, samples, seed);
    if let Some(sink) = raw {
        writeln!(sink, "sample,w")?;
        for (i, w) in ws.iter().enumerate() {
            writeln!(sink, "{i},{w}")?;
        }
    }
    let (mean, var, se) = mean_var_se(&ws);
    let var_target = sum_mu_d2.exp() - 1.0;
    let mut report = ExperimentReport::new(
        "w-limit",
        json_config(&[
            ("k", json!(k)),
            ("d", json!(d)),
            ("lambda", json!(lambda)),
            ("trunc", json!(trunc)),
            ("l_max", json!(l_max)),
            ("samples", json!(samples)),
            ("seed", json!(seed)),
        ]),
    );
    report
        .statistics
        .push(Statistic::vs("mean_W", mean, se, 1.0));
    report.statistics.push(Statistic::vs(
        "var_W",
        var,
        variance_se(&ws, mean, var),
        var_target,
    ));
    report
        .statistics
        .push(Statistic::plain("sum_mu_delta_sq", sum_mu_d2));
    let mut sorted = ws.clone();
    sorted.sort_by(|a, b| a.total_cmp(b));
    for (q, name) in [(0.05, "q05"), (0.25, "q25"), (0.5, "q50"), (0.75, "q75"), (0.95, "q95")] {
        let idx = ((sorted.len() - 1) as f64 * q).round() as usize;
        report
            .statistics
            .push(Statistic::plain(name, sorted[idx]));
    }
    Ok(report)
}

/// Histogram of |ρ| over independent uniform solution pairs, on the
/// natural lattice of width 2/n; reports the mass below 1/2 and the
/// heaviest bin at or above it.
pub fn overlap_experiment(
    n: usize,
    d: usize,
    k: usize,
    samples: usize,
    pairs: usize,
    seed: u64,
    raw: Option<&mut dyn Write>,
) -> Result<ExperimentReport, ExperimentError> {
    if n > 24 {
        return Err(ExperimentError::Guard("n", n, 24));
    }
    let per: Vec<Option<Vec<usize>>> = (0..samples)
        .into_par_iter()
        .map(|i| -> Result<Option<Vec<usize>>, ExperimentError> {
            let inst = Instance::sample(n, d, k, derive_seed(seed, 2 * i as u64))?;
            let sols = enumerate_solutions(&inst)?;
            if sols.len() < 2 {
                return Ok(None);
            }
            let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(seed, 2 * i as u64 + 1));
            let mut us = Vec::with_capacity(pairs);
            for _ in 0..pairs {
                let x1 = sols[rand::Rng::gen_range(&mut rng, 0..sols.len())];
                let x2 = sols[rand::Rng::gen_range(&mut rng, 0..sols.len())];
                let h = (x1 ^ x2).count_ones() as i64;
                us.push((n as i64 - 2 * h).unsigned_abs() as usize);
            }
            Ok(Some(us))
        })
        .collect::<Result<_, _>>()?;

    let mut hist = vec![0u64; n + 1];
    let mut skipped = 0u64;
    for row in &per {
        match row {
            Some(us) => us.iter().for_each(|&u| hist[u] += 1),
            None => skipped += 1,
        }
    }
    let total: u64 = hist.iter().sum();
    let mut report = ExperimentReport::new(
        "overlap",
        json_config(&[
            ("n", json!(n)),
            ("d", json!(d)),
            ("k", json!(k)),
            ("samples", json!(samples)),
            ("pairs", json!(pairs)),
            ("seed", json!(seed)),
        ]),
    );
    if let Some(sink) = raw {
        writeln!(sink, "abs_rho,count,frequency")?;
        for (u, &c) in hist.iter().enumerate() {
            if c > 0 {
                writeln!(
                    sink,
                    "{},{},{}",
                    u as f64 / n as f64,
                    c,
                    c as f64 / total.max(1) as f64
                )?;
            }
        }
    }
    let mass_low: u64 = hist
        .iter()
        .enumerate()
        .filter(|(u, _)| (*u as f64) < 0.5 * n as f64)
        .map(|(_, &c)| c)
        .sum();
    report
        .statistics
        .push(Statistic::plain("pairs_total", total as f64));
    report
        .statistics
        .push(Statistic::plain("instances_skipped", skipped as f64));
    report.statistics.push(Statistic::plain(
        "mass_below_half",
        mass_low as f64 / total.max(1) as f64,
    ));
    if let Some((u, &c)) = hist
        .iter()
        .enumerate()
        .filter(|(u, &c)| c > 0 && *u as f64 >= 0.5 * n as f64)
        .max_by_key(|(_, &c)| c)
    {
        report
            .statistics
            .push(Statistic::plain("secondary_mode_rho", u as f64 / n as f64));
        report.statistics.push(Statistic::plain(
            "secondary_mode_mass",
            c as f64 / total.max(1) as f64,
        ));
    }
    Ok(report)
}

fn json_config(pairs: &[(&str, Value)]) -> Map<String, Value> {
    pairs
        .iter()
        .map(|(k, v)| (k.to_string(), v.clone()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn poisson_calibrated_and_deterministic() {
        let a = poisson_experiment(40, 3, 3, 150, 2, 9, None).unwrap();
        let b = poisson_experiment(40, 3, 3, 150, 2, 9, None).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        for s in &a.statistics {
            if let Some(z) = s.z {
                assert!(z.abs() <= 6.0, "{}: z = {z}", s.name);
            }
        }
        assert_eq!(
            a.statistics.iter().filter(|s| s.name.starts_with("EX(")).count(),
            20
        );
        assert!(a.stat("cov(00,01)").is_some());
        assert!(a.stat("cov_max_abs_z").is_some());
    }

    #[test]
    fn poisson_guards_sample_count() {
        assert!(matches!(
            poisson_experiment(10, 3, 3, 10, 1, 0, None),
            Err(ExperimentError::TooFewSamples(10, 100))
        ));
    }

    #[test]
    fn ez_matches_closed_form() {
        let mut raw = Vec::new();
        let rep = ez_experiment(4, 2, 4, 400, 3, Some(&mut raw)).unwrap();
        let s = rep.stat("EZ").unwrap();
        assert_eq!(s.target, Some(12.25));
        assert!(s.z.unwrap().abs() <= 6.0, "z = {:?}", s.z);
        let text = String::from_utf8(raw).unwrap();
        assert_eq!(text.lines().count(), 401);
        assert!(text.starts_with("sample,z_n"));
    }

    #[test]
    fn cycle_moment_unit_variant_recovers_poisson() {
        let out = cycle_moment_experiment(
            &[10],
            3,
            3,
            0.5,
            3,
            ZVariant::Unit,
            &[vec![0, 0], vec![0, 1]],
            400,
            11,
            None,
        )
        .unwrap();
        for row in &out.rows {
            assert_eq!(row.target, 1.0);
            assert!((row.ratio - 1.0).abs() <= 6.0 * row.se, "{row:?}");
        }
    }

    #[test]
    fn cycle_moment_full_pipeline_smoke() {
        let out = cycle_moment_experiment(
            &[6, 8],
            3,
            3,
            0.5,
            3,
            ZVariant::TruncTr,
            &[vec![0, 0]],
            40,
            5,
            None,
        )
        .unwrap();
        assert_eq!(out.rows.len(), 2);
        for row in &out.rows {
            assert!(row.ratio.is_finite() && row.se.is_finite());
            assert!(row.target.is_finite());
        }
        assert!(out.report.stat("trend(zeta=00)").is_some());
    }

    #[test]
    fn w_is_identically_one_without_cycle_effects() {
        let rows = vec![
            DeltaRow {
                zeta: vec![0, 0],
                l: 1,
                mu: 2.5,
                delta: 0.0,
                weighted: 0.0,
            },
            DeltaRow {
                zeta: vec![0, 1],
                l: 1,
                mu: 0.7,
                delta: 0.0,
                weighted: 0.0,
            },
        ];
        for w in sample_w(&rows, 50, 17) {
            assert_eq!(w, 1.0);
        }
    }

    #[test]
    fn w_limit_moments_match_poisson_identities() {
        let rep = w_limit_experiment(7, 35, 0.5, 3, 2, 4000, 1, None).unwrap();
        let mean = rep.stat("mean_W").unwrap();
        assert!(mean.z.unwrap().abs() <= 6.0, "mean z = {:?}", mean.z);
        let var = rep.stat("var_W").unwrap();
        assert!(var.z.unwrap().abs() <= 6.0, "var z = {:?}", var.z);
        assert!(rep.stat("sum_mu_delta_sq").unwrap().estimate > 0.0);
    }

    #[test]
    fn overlap_histogram_is_normalized() {
        let mut raw = Vec::new();
        let rep = overlap_experiment(8, 2, 4, 30, 20, 2, Some(&mut raw)).unwrap();
        let total = rep.stat("pairs_total").unwrap().estimate;
        assert!(total > 0.0);
        let text = String::from_utf8(raw).unwrap();
        let freq_sum: f64 = text
            .lines()
            .skip(1)
            .map(|l| l.rsplit(',').next().unwrap().parse::<f64>().unwrap())
            .sum();
        assert!((freq_sum - 1.0).abs() < 1e-9);
        let rep2 = overlap_experiment(8, 2, 4, 30, 20, 2, None).unwrap();
        assert_eq!(rep.to_json(), rep2.to_json());
    }
}
