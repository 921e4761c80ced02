//! Class-coverage simulation and closed-form coverage bounds.
//!
//! `Z` counts the distinct classes seen in `N` sampled `n`-class tuples from a
//! pool of `L` classes. The bound functions give a lower bound on `E[Z]`, an
//! upper bound on `Var[Z]`, a bound on the probability that independent train
//! and test samples share no class, the sample count guaranteeing overlap, and
//! a bound on the probability of unusually small coverage. Appearance
//! probabilities are assumed to satisfy `p_i >= gamma n / L`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, SimRng};
use crate::sampling::{partial_fisher_yates, WeightTree};

const TRIALS_PER_CHUNK: u64 = 1024;
const MIN_TRIALS: usize = 30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TupleDistributionModel {
    pub l: usize,
    pub n: usize,
    /// Appearance probability of every class; `None` means the uniform model.
    #[serde(default)]
    pub probs: Option<Vec<f64>>,
    #[serde(default = "one")]
    pub gamma: f64,
}

fn one() -> f64 {
    1.0
}

impl TupleDistributionModel {
    pub fn uniform(l: usize, n: usize) -> Self {
        TupleDistributionModel { l, n, probs: None, gamma: 1.0 }
    }

    pub fn is_uniform(&self) -> bool {
        self.probs.is_none()
    }

    fn check_shape(&self) -> Result<()> {
        if self.n == 0 || self.n > self.l {
            return Err(Error::config(format!("need 1 <= n <= L, got n = {}, L = {}", self.n, self.l)));
        }
        if self.l > u32::MAX as usize {
            return Err(Error::config("L too large"));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::config(format!("gamma {} outside (0, 1]", self.gamma)));
        }
        Ok(())
    }
}

/// Compensated (Neumaier) sum.
fn neumaier_sum(xs: &[f64]) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for &x in xs {
        let t = sum + x;
        comp += if sum.abs() >= x.abs() { (sum - t) + x } else { (x - t) + sum };
        sum = t;
    }
    sum + comp
}

/// Appearance probabilities, validated to sum to `n` and to respect the floor
/// `gamma n / L`.
pub fn class_appearance_probs(model: &TupleDistributionModel) -> Result<Vec<f64>> {
    model.check_shape()?;
    let (l, n) = (model.l, model.n);
    let p = match &model.probs {
        None => vec![n as f64 / l as f64; l],
        Some(p) => {
            if p.len() != l {
                return Err(Error::LengthMismatch(p.len(), l));
            }
            p.clone()
        }
    };
    let sum = neumaier_sum(&p);
    if (sum - n as f64).abs() > 1e-12 * (n as f64).max(1.0) {
        return Err(Error::ProbabilitySum { sum, n });
    }
    let floor = model.gamma * n as f64 / l as f64;
    // A relative tolerance keeps exact-floor entries from failing on rounding.
    let tol = 1e-12 * floor.max(1e-300);
    if let Some((index, &value)) = p.iter().enumerate().find(|(_, &v)| !(v >= floor - tol && v <= 1.0 + 1e-12)) {
        return Err(Error::ProbabilityFloor { index, value, floor });
    }
    Ok(p)
}

/// Probabilities rising linearly from the floor `gamma n / L`, summing to `n`.
pub fn linear_skew_probs(l: usize, n: usize, gamma: f64) -> Result<Vec<f64>> {
    if l < 2 {
        return Err(Error::config("linear skew needs L >= 2"));
    }
    let floor = gamma * n as f64 / l as f64;
    let total_w = (l * (l - 1) / 2) as f64;
    let p: Vec<f64> = (0..l).map(|i| floor + (1.0 - gamma) * n as f64 * i as f64 / total_w).collect();
    let model = TupleDistributionModel { l, n, probs: Some(p), gamma };
    class_appearance_probs(&model)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageSimResult {
    /// Distinct classes covered by the training draws of each trial.
    pub z_samples: Vec<u32>,
    /// Trials whose training and test draws share no class.
    pub disjoint_trials: Option<u64>,
    pub n_train: usize,
    pub n_test: usize,
    pub trials: usize,
    /// Realised per-class appearance frequency in training tuples (explicit-p models only).
    pub realized_probs: Option<Vec<f64>>,
}

impl CoverageSimResult {
    pub fn mean_z(&self) -> f64 {
        self.z_samples.iter().map(|&z| z as f64).sum::<f64>() / self.z_samples.len() as f64
    }

    /// Unbiased sample variance of `Z`.
    pub fn var_z(&self) -> f64 {
        let m = self.mean_z();
        let k = self.z_samples.len();
        if k < 2 {
            return 0.0;
        }
        self.z_samples.iter().map(|&z| (z as f64 - m).powi(2)).sum::<f64>() / (k - 1) as f64
    }

    pub fn disjoint_freq(&self) -> Option<f64> {
        self.disjoint_trials.map(|d| d as f64 / self.trials as f64)
    }

    /// Fraction of trials with `Z <= threshold`.
    pub fn fraction_at_most(&self, threshold: f64) -> f64 {
        self.z_samples.iter().filter(|&&z| z as f64 <= threshold).count() as f64 / self.z_samples.len() as f64
    }
}

struct Scratch {
    stamps: Vec<u32>,
    generation: u32,
    tree: Option<WeightTree>,
    drawn: Vec<usize>,
    saved: Vec<(usize, f64)>,
}

impl Scratch {
    fn next_generation(&mut self) -> u32 {
        if self.generation == u32::MAX {
            self.stamps.iter_mut().for_each(|s| *s = 0);
            self.generation = 0;
        }
        self.generation += 1;
        self.generation
    }
}

/// One tuple of `n` distinct classes, written into `scratch.drawn`.
fn draw_tuple(l: usize, n: usize, scratch: &mut Scratch, rng: &mut SimRng) {
    scratch.drawn.clear();
    match &mut scratch.tree {
        None => scratch.drawn.extend(partial_fisher_yates(l, n, rng)),
        Some(tree) => {
            // Sequential weighted draws without replacement, renormalised per
            // position; weights are restored once the tuple is complete.
            scratch.saved.clear();
            for _ in 0..n {
                let i = tree.draw(rng).expect("positive total weight");
                scratch.saved.push((i, tree.weight(i)));
                scratch.drawn.push(i);
                tree.set(i, 0.0);
            }
            for &(i, w) in &scratch.saved {
                tree.set(i, w);
            }
        }
    }
}

struct TrialOutcome {
    z: u32,
    disjoint: bool,
}

fn run(
    model: &TupleDistributionModel,
    n_train: usize,
    n_test: usize,
    trials: usize,
    seed: u64,
    paired: bool,
) -> Result<CoverageSimResult> {
    let p = class_appearance_probs(model)?;
    if trials == 0 {
        return Err(Error::config("trials must be at least 1"));
    }
    let (l, n) = (model.l, model.n);
    // Explicit probabilities use weighted draws; the uniform model uses Fisher-Yates.
    let tree = model.probs.as_ref().map(|_| WeightTree::new(&p));
    let track = tree.is_some();
    let chunks = (trials as u64).div_ceil(TRIALS_PER_CHUNK);
    let parts: Vec<(Vec<TrialOutcome>, Vec<u64>)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut scratch = Scratch {
                stamps: vec![0; l],
                generation: 0,
                tree: tree.clone(),
                drawn: Vec::with_capacity(n),
                saved: Vec::with_capacity(n),
            };
            let mut counts = if track { vec![0u64; l] } else { Vec::new() };
            let lo = c * TRIALS_PER_CHUNK;
            let hi = ((c + 1) * TRIALS_PER_CHUNK).min(trials as u64);
            let outcomes = (lo..hi)
                .map(|t| {
                    let mut rng = stream(seed, "coverage-trial", t);
                    let train_gen = scratch.next_generation();
                    let mut z = 0u32;
                    for _ in 0..n_train {
                        draw_tuple(l, n, &mut scratch, &mut rng);
                        for k in 0..scratch.drawn.len() {
                            let i = scratch.drawn[k];
                            if track {
                                counts[i] += 1;
                            }
                            if scratch.stamps[i] != train_gen {
                                scratch.stamps[i] = train_gen;
                                z += 1;
                            }
                        }
                    }
                    let mut disjoint = true;
                    if paired {
                        for _ in 0..n_test {
                            draw_tuple(l, n, &mut scratch, &mut rng);
                            if scratch.drawn.iter().any(|&i| scratch.stamps[i] == train_gen) {
                                disjoint = false;
                            }
                        }
                    }
                    TrialOutcome { z, disjoint }
                })
                .collect();
            (outcomes, counts)
        })
        .collect();

    let mut z_samples = Vec::with_capacity(trials);
    let mut disjoint = 0u64;
    let mut counts = if track { vec![0u64; l] } else { Vec::new() };
    for (outcomes, c) in parts {
        for o in outcomes {
            z_samples.push(o.z);
            disjoint += u64::from(o.disjoint);
        }
        for (a, b) in counts.iter_mut().zip(c) {
            *a += b;
        }
    }
    let denom = (n_train * trials) as f64;
    Ok(CoverageSimResult {
        z_samples,
        disjoint_trials: paired.then_some(disjoint),
        n_train,
        n_test: if paired { n_test } else { 0 },
        trials,
        realized_probs: (track && n_train > 0).then(|| counts.iter().map(|&c| c as f64 / denom).collect()),
    })
}

/// `Z` over `trials` independent runs of `n_draws` tuples each. Trial `t`
/// uses its own stream, so results do not depend on the thread count.
pub fn simulate_coverage(model: &TupleDistributionModel, n_draws: usize, trials: usize, seed: u64) -> Result<CoverageSimResult> {
    run(model, n_draws, 0, trials, seed, false)
}

/// Like [`simulate_coverage`] for the training draws, plus an independent set
/// of `n_test` test tuples per trial to count train/test disjointness.
pub fn simulate_train_test(
    model: &TupleDistributionModel,
    n_train: usize,
    n_test: usize,
    trials: usize,
    seed: u64,
) -> Result<CoverageSimResult> {
    run(model, n_train, n_test, trials, seed, true)
}

/// `L (1 - (1 - gamma n / L)^N)`.
pub fn ez_lower_bound(l: usize, n: usize, gamma: f64, n_draws: usize) -> f64 {
    let l = l as f64;
    l * (1.0 - (1.0 - gamma * n as f64 / l).powf(n_draws as f64))
}

/// Exact `E[Z]` for the uniform model (the `gamma = 1` lower bound).
pub fn exact_uniform_ez(l: usize, n: usize, n_draws: usize) -> f64 {
    ez_lower_bound(l, n, 1.0, n_draws)
}

/// `n^2 N / 2`.
pub fn vz_upper_bound(n: usize, n_draws: usize) -> f64 {
    (n * n) as f64 * n_draws as f64 / 2.0
}

/// `min(1, 4 (1 - gamma n / L)^min(N_train, N_test))`.
pub fn disjoint_prob_bound(l: usize, n: usize, gamma: f64, n_train: usize, n_test: usize) -> f64 {
    let base = (1.0 - gamma * n as f64 / l as f64).max(0.0);
    (4.0 * base.powf(n_train.min(n_test) as f64)).min(1.0)
}

/// Smallest `min(N_train, N_test)` for which the disjointness bound is at most
/// `rho`: `ceil(ln(4 / rho) L / (gamma n))`.
pub fn min_samples_for_overlap(l: usize, n: usize, gamma: f64, rho: f64) -> Result<u64> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::config(format!("rho {rho} outside (0, 1)")));
    }
    if !(gamma > 0.0 && gamma <= 1.0) || n == 0 {
        return Err(Error::config("need gamma in (0, 1] and n >= 1"));
    }
    Ok(((4.0 / rho).ln() * l as f64 / (gamma * n as f64)).ceil() as u64)
}

/// `min(1, (1 + gamma)^2 / (2 (1 - eta)^2 gamma^2 N))`, bounding
/// `P(Z <= eta gamma n N / (1 + gamma))`.
pub fn small_coverage_prob_bound(gamma: f64, eta: f64, n_draws: usize) -> Result<f64> {
    if !(eta > 0.0 && eta < 1.0) || !(gamma > 0.0 && gamma <= 1.0) || n_draws == 0 {
        return Err(Error::config("need eta in (0, 1), gamma in (0, 1] and N >= 1"));
    }
    let v = (1.0 + gamma).powi(2) / (2.0 * (1.0 - eta).powi(2) * gamma * gamma * n_draws as f64);
    Ok(v.min(1.0))
}

/// The coverage level `eta gamma n N / (1 + gamma)`.
pub fn small_coverage_threshold(gamma: f64, eta: f64, n: usize, n_draws: usize) -> f64 {
    eta * gamma * n as f64 * n_draws as f64 / (1.0 + gamma)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundEntry {
    pub name: String,
    pub formula_value: f64,
    pub empirical_value: f64,
    /// Slack-adjusted distance from violation; non-negative when the bound holds.
    pub margin: f64,
    pub pass: bool,
}

impl BoundEntry {
    fn new(name: &str, formula_value: f64, empirical_value: f64, margin: f64) -> Self {
        BoundEntry {
            name: name.to_string(),
            formula_value,
            empirical_value,
            margin,
            pass: margin >= 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub l: usize,
    pub n: usize,
    pub gamma: f64,
    pub eta: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub trials: usize,
    /// Closed-form `E[Z]`, for uniform models.
    pub exact_ez: Option<f64>,
    pub entries: Vec<BoundEntry>,
    /// Bounds skipped because their assumptions do not hold.
    #[serde(default)]
    pub not_applicable: Vec<String>,
    pub warnings: Vec<String>,
}

impl BoundReport {
    pub fn all_pass(&self) -> bool {
        self.entries.iter().all(|e| e.pass)
    }

    pub fn entry(&self, name: &str) -> Option<&BoundEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Simulate train/test draws and check every bound against the simulation.
///
/// Slack: the mean check allows 3 standard errors, the variance check a
/// factor 1.05, and the two probability checks 3 binomial standard deviations
/// taken at the bound value.
pub fn verify_bounds(
    model: &TupleDistributionModel,
    n_train: usize,
    n_test: usize,
    trials: usize,
    eta: f64,
    seed: u64,
) -> Result<BoundReport> {
    if n_train == 0 {
        return Err(Error::config("n_train must be at least 1"));
    }
    let sim = simulate_train_test(model, n_train, n_test, trials, seed)?;
    let (l, n, gamma) = (model.l, model.n, model.gamma);
    let t = trials as f64;
    let mut entries = Vec::new();

    let mean = sim.mean_z();
    let var = sim.var_z();
    let ez = ez_lower_bound(l, n, gamma, n_train);
    entries.push(BoundEntry::new("ez_lower_bound", ez, mean, mean - (ez - 3.0 * (var / t).sqrt())));

    let vz = vz_upper_bound(n, n_train);
    entries.push(BoundEntry::new("vz_upper_bound", vz, var, 1.05 * vz - var));

    let binomial_sd = |p: f64| (p.clamp(0.0, 1.0) * (1.0 - p.clamp(0.0, 1.0)) / t).sqrt();
    let dp = disjoint_prob_bound(l, n, gamma, n_train, n_test);
    let df = sim.disjoint_freq().unwrap_or(0.0);
    entries.push(BoundEntry::new("disjoint_prob_bound", dp, df, dp + 3.0 * binomial_sd(dp) - df));

    // The small-coverage bound only holds when L >= nN.
    let mut not_applicable = Vec::new();
    if l >= n * n_train {
        let sp = small_coverage_prob_bound(gamma, eta, n_train)?;
        let sf = sim.fraction_at_most(small_coverage_threshold(gamma, eta, n, n_train));
        entries.push(BoundEntry::new("small_coverage_prob_bound", sp, sf, sp + 3.0 * binomial_sd(sp) - sf));
    } else {
        not_applicable.push(format!("small_coverage_prob_bound: needs L >= nN, got L = {l} < {}", n * n_train));
    }

    let mut warnings = Vec::new();
    if let Some(p_hat) = &sim.realized_probs {
        let floor = gamma * n as f64 / l as f64;
        let min = p_hat.iter().copied().fold(f64::INFINITY, f64::min);
        let sd = (floor * (1.0 - floor).max(0.0) / (n_train as f64 * t)).sqrt();
        let e = BoundEntry::new("realized_probability_floor", floor, min, min - (floor - 3.0 * sd));
        if !e.pass {
            warnings.push(format!("realised appearance probability {min} falls below the floor {floor}"));
        }
        entries.push(e);
    }
    if trials < MIN_TRIALS {
        warnings.push(format!("only {trials} trials; at least {MIN_TRIALS} are needed for meaningful checks"));
    }
    Ok(BoundReport {
        l,
        n,
        gamma,
        eta,
        n_train,
        n_test,
        trials,
        exact_ez: model.is_uniform().then(|| exact_uniform_ez(l, n, n_train)),
        entries,
        not_applicable,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn uniform_probs_match_brute_force() {
        // All 12 ordered pairs over 4 classes; each class is in 6 of them.
        let mut counts = [0usize; 4];
        let mut total = 0;
        for a in 0..4 {
            for b in 0..4 {
                if a != b {
                    counts[a] += 1;
                    counts[b] += 1;
                    total += 1;
                }
            }
        }
        let p = class_appearance_probs(&TupleDistributionModel::uniform(4, 2)).unwrap();
        for i in 0..4 {
            assert_eq!(p[i], counts[i] as f64 / total as f64);
        }
        assert_eq!(p.iter().sum::<f64>(), 2.0);
    }

    #[test]
    fn explicit_probs_validation() {
        let m = |p: Vec<f64>, gamma| TupleDistributionModel { l: 4, n: 2, probs: Some(p), gamma };
        assert!(class_appearance_probs(&m(vec![0.5, 0.5, 0.5, 0.5], 1.0)).is_ok());
        assert!(matches!(
            class_appearance_probs(&m(vec![0.1, 0.9, 0.5, 0.5], 0.5)),
            Err(Error::ProbabilityFloor { index: 0, .. })
        ));
        assert!(matches!(class_appearance_probs(&m(vec![0.5; 4].into_iter().map(|x| x * 1.1).collect(), 0.5)), Err(Error::ProbabilitySum { .. })));
        assert!(class_appearance_probs(&m(vec![0.5; 3], 1.0)).is_err());
    }

    #[test]
    fn one_draw_covers_n() {
        let s = simulate_coverage(&TupleDistributionModel::uniform(50, 4), 1, 200, 0).unwrap();
        assert!(s.z_samples.iter().all(|&z| z == 4));
    }

    #[test]
    fn full_tuples_cover_everything() {
        let s = simulate_coverage(&TupleDistributionModel::uniform(6, 6), 3, 200, 0).unwrap();
        assert!(s.z_samples.iter().all(|&z| z == 6));
    }

    #[test]
    fn uniform_mean_matches_closed_form() {
        let s = simulate_coverage(&TupleDistributionModel::uniform(10, 3), 5, 100_000, 1).unwrap();
        let exact = exact_uniform_ez(10, 3, 5);
        assert!((exact - 10.0 * (1.0 - 0.7f64.powi(5))).abs() < 1e-12);
        let se = (s.var_z() / 1e5).sqrt();
        assert!((s.mean_z() - exact).abs() < 3.0 * se, "{} vs {exact}", s.mean_z());
        assert!(s.var_z() <= 22.5 * 1.05);
    }

    #[test]
    fn simulation_is_deterministic() {
        let m = TupleDistributionModel { l: 30, n: 3, probs: Some(linear_skew_probs(30, 3, 0.5).unwrap()), gamma: 0.5 };
        let a = simulate_train_test(&m, 7, 5, 3000, 9).unwrap();
        let b = simulate_train_test(&m, 7, 5, 3000, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn weighted_sampler_realizes_marginals() {
        let p = linear_skew_probs(20, 2, 0.5).unwrap();
        let m = TupleDistributionModel { l: 20, n: 2, probs: Some(p.clone()), gamma: 0.5 };
        let s = simulate_coverage(&m, 4, 20_000, 2).unwrap();
        let p_hat = s.realized_probs.unwrap();
        assert!((p_hat.iter().sum::<f64>() - 2.0).abs() < 1e-9);
        // Sequential renormalised draws only approximate the target marginals;
        // check the realised ones stay close and keep the ordering trend.
        for (a, b) in p.iter().zip(&p_hat) {
            assert!((a - b).abs() < 0.03, "{a} vs {b}");
        }
        assert!(p_hat[19] > p_hat[0]);
    }

    #[test]
    fn bound_formula_examples() {
        assert_eq!(ez_lower_bound(10, 3, 1.0, 0), 0.0);
        assert_eq!(vz_upper_bound(5, 100), 1250.0);
        assert_eq!(vz_upper_bound(1, 7), 3.5);
        assert_eq!(disjoint_prob_bound(10, 10, 1.0, 3, 3), 0.0);
        assert!((disjoint_prob_bound(10, 3, 1.0, 5, 5) - 4.0 * 0.7f64.powi(5)).abs() < 1e-15);
        assert_eq!(disjoint_prob_bound(10, 3, 1.0, 0, 5), 1.0);
        assert!((small_coverage_prob_bound(1.0, 0.5, 800).unwrap() - 0.01).abs() < 1e-15);
        assert_eq!(
            small_coverage_prob_bound(0.7, 0.3, 400).unwrap(),
            small_coverage_prob_bound(0.7, 0.3, 200).unwrap() / 2.0
        );
        assert!(min_samples_for_overlap(100, 5, 0.5, 1.0).is_err());
        assert!(min_samples_for_overlap(100, 5, 0.5, 4.0).is_err());
        let coef = min_samples_for_overlap(1000, 5, 0.5, 0.01).unwrap() as f64 / 1000.0;
        assert!((2.39..=2.40).contains(&coef), "{coef}");
    }

    #[test]
    fn overlap_sample_count_achieves_rho() {
        let (l, n, rho) = (40, 2, 0.05);
        let nmin = min_samples_for_overlap(l, n, 1.0, rho).unwrap() as usize;
        let trials = 20_000;
        let s = simulate_train_test(&TupleDistributionModel::uniform(l, n), nmin, nmin, trials, 4).unwrap();
        assert!(s.disjoint_freq().unwrap() <= rho + 3.0 * (rho / trials as f64).sqrt());
    }

    #[test]
    fn small_coverage_in_sparse_regime() {
        let m = TupleDistributionModel::uniform(1_000_000, 5);
        let s = simulate_coverage(&m, 1000, 10_000, 5).unwrap();
        let bound = small_coverage_prob_bound(1.0, 0.5, 1000).unwrap();
        assert!(s.fraction_at_most(small_coverage_threshold(1.0, 0.5, 5, 1000)) <= bound);
    }

    #[test]
    fn report_contents() {
        let r = verify_bounds(&TupleDistributionModel::uniform(10, 3), 5, 5, 20_000, 0.5, 0).unwrap();
        assert!(r.all_pass(), "{r:?}");
        assert_eq!(r.exact_ez, Some(exact_uniform_ez(10, 3, 5)));
        assert!(r.warnings.is_empty());
        assert!(r.entry("small_coverage_prob_bound").is_none());
        assert_eq!(r.not_applicable.len(), 1);
        let r = verify_bounds(&TupleDistributionModel::uniform(100, 3), 5, 5, 2000, 0.5, 0).unwrap();
        assert!(r.entry("small_coverage_prob_bound").is_some() && r.not_applicable.is_empty());
        let r = verify_bounds(&TupleDistributionModel::uniform(10, 3), 5, 5, 1, 0.5, 0).unwrap();
        assert!(r.warnings.iter().any(|w| w.contains("trials")));
        let json = r.to_json().unwrap();
        assert!(json.contains("\"formula_value\"") && json.contains("\"margin\""));
    }

    proptest! {
        #[test]
        fn z_stays_in_range(l in 1usize..40, n_frac in 0.0f64..1.0, draws in 1usize..12, seed in 0u64..1000) {
            let n = 1 + ((l - 1) as f64 * n_frac) as usize;
            let s = simulate_coverage(&TupleDistributionModel::uniform(l, n), draws, 20, seed).unwrap();
            for &z in &s.z_samples {
                prop_assert!(z as usize >= n && z as usize <= l.min(n * draws));
            }
        }

        #[test]
        fn bounds_are_monotone(l in 2usize..500, n_frac in 0.0f64..1.0, gamma in 0.05f64..1.0, draws in 1usize..200) {
            let n = 1 + ((l - 1) as f64 * n_frac) as usize;
            prop_assert!(ez_lower_bound(l, n, gamma, draws + 1) >= ez_lower_bound(l, n, gamma, draws));
            prop_assert!(ez_lower_bound(l, n, (gamma + 0.01).min(1.0), draws) >= ez_lower_bound(l, n, gamma, draws));
            prop_assert!(disjoint_prob_bound(l, n, gamma, draws + 1, draws + 3) <= disjoint_prob_bound(l, n, gamma, draws, draws + 3));
            prop_assert!(small_coverage_prob_bound(gamma, 0.5, draws + 1).unwrap() <= small_coverage_prob_bound(gamma, 0.5, draws).unwrap());
        }
    }
}
