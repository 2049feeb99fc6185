//! Imitation data and network training.
//!
//! The MPC expert is rolled out in closed loop and every control decision
//! becomes a labelled sample. The network is fit by Levenberg–Marquardt on
//!
//! ```text
//! F = beta·E_D + alpha·E_W,   E_D = Σ (y - t)²,   E_W = Σ w²
//! ```
//!
//! with `alpha` and `beta` re-estimated after every accepted step from the
//! effective parameter count `gamma = P - alpha·tr((beta·JᵀJ + alpha·I)⁻¹)`:
//! `alpha = gamma / 2E_W`, `beta = (N - gamma) / 2E_D`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::ann::{FeatureVector, InputScale, Mlp, INPUT_DIM};
use crate::error::{Error, Result};
use crate::harness::{simulate, ControllerSpec, ScenarioSpec};
use crate::mpc::MpcController;
use crate::plant::{ConverterParams, SwitchState};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sample {
    pub features: FeatureVector,
    pub label: SwitchState,
}

/// Index partitions of a dataset.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub seed: u64,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub validation: Vec<usize>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    /// Control instant of each sample.
    pub times: Vec<f64>,
    /// Load conductance at each sample, when known.
    pub loads: Option<Vec<f64>>,
    pub split: Option<Split>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn subset(&self, idx: &[usize]) -> Vec<Sample> {
        idx.iter().map(|&i| self.samples[i]).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.samples.len() * 64 + 32);
        out.push_str("t,v_ref,v_c,i_l,u\n");
        for (s, t) in self.samples.iter().zip(&self.times) {
            let f = &s.features;
            writeln!(out, "{t},{},{},{},{}", f.v_ref, f.v_c, f.i_l, s.label.as_u8()).unwrap();
        }
        out
    }

    pub fn from_csv(text: &str, path: &Path) -> Result<Self> {
        let err = |line: usize, msg: &str| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg: msg.to_string(),
        };
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == "t,v_ref,v_c,i_l,u" => {}
            _ => return Err(err(1, "expected header t,v_ref,v_c,i_l,u")),
        }
        let mut d = Dataset::default();
        for (idx, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != 5 {
                return Err(err(idx + 1, "expected 5 fields"));
            }
            let num = |s: &str| -> Result<f64> {
                match s.parse::<f64>() {
                    Ok(v) if v.is_finite() => Ok(v),
                    _ => Err(err(idx + 1, &format!("`{s}` is not a finite number"))),
                }
            };
            let label = f[4]
                .parse::<u8>()
                .ok()
                .and_then(SwitchState::from_u8)
                .ok_or_else(|| err(idx + 1, "label must be 0 or 1"))?;
            d.times.push(num(f[0])?);
            d.samples.push(Sample {
                features: FeatureVector::new(num(f[1])?, num(f[2])?, num(f[3])?),
                label,
            });
        }
        Ok(d)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text, path)
    }
}

/// Roll out the MPC expert and record `(v_ref, v_c, i_l) -> u` at every
/// control instant, both endpoints included.
pub fn collect_dataset(scenario: &ScenarioSpec, params: &ConverterParams) -> Result<Dataset> {
    if !matches!(scenario.controller, ControllerSpec::Mpc(_)) {
        return Err(Error::InvalidScenario(format!(
            "{}: data collection needs the MPC controller, got {}",
            scenario.name,
            scenario.controller.label()
        )));
    }
    let mut d = Dataset {
        loads: Some(Vec::new()),
        ..Default::default()
    };
    let loads = d.loads.as_mut().unwrap();
    let mut last = None;
    let result = simulate(scenario, params, usize::MAX, |ev| {
        d.samples.push(Sample {
            features: FeatureVector::new(ev.v_ref, ev.state.v_c, ev.state.i_l),
            label: ev.u,
        });
        d.times.push(ev.t);
        loads.push(ev.load_g);
        last = Some(*ev);
    });
    if let Err(aborted) = result {
        let trail = last
            .map(|ev| {
                format!(
                    " (last control instant t = {} s, i_l = {}, v_c = {})",
                    ev.t, ev.state.i_l, ev.state.v_c
                )
            })
            .unwrap_or_default();
        return Err(Error::InvalidDataset(format!(
            "collection aborted: {}{trail}",
            aborted.error
        )));
    }
    Ok(d)
}

/// Re-run the expert on every stored sample and count disagreements.
/// Needs the logged loads.
pub fn label_mismatches(d: &Dataset, params: &ConverterParams, ctrl: &MpcController) -> Result<usize> {
    let loads = d
        .loads
        .as_ref()
        .ok_or_else(|| Error::InvalidDataset("no logged loads".into()))?;
    let mut prev = SwitchState::Off;
    let mut bad = 0;
    for (s, &g) in d.samples.iter().zip(loads) {
        let f = s.features;
        let state = crate::plant::ConverterState::new(f.i_l, f.v_c);
        let u = ctrl.select_switch(state, f.v_ref, params, g, prev).u;
        if u != s.label {
            bad += 1;
        }
        prev = s.label;
    }
    Ok(bad)
}

/// Sizes of the 60/20/20 partition for `n` samples.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let train = (0.6 * n as f64).round() as usize;
    let rest = n - train;
    let test = rest / 2;
    (train, test, rest - test)
}

/// Seeded shuffle followed by a contiguous 60/20/20 partition.
pub fn split_dataset(mut d: Dataset, seed: u64) -> Result<Dataset> {
    let n = d.len();
    if n < 5 {
        return Err(Error::InvalidDataset(format!(
            "{n} samples cannot form three nonempty splits (need at least 5)"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (n_train, n_test, _) = split_sizes(n);
    let validation = order.split_off(n_train + n_test);
    let test = order.split_off(n_train);
    d.split = Some(Split {
        seed,
        train: order,
        test,
        validation,
    });
    Ok(d)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainOptions {
    pub max_epochs: usize,
    pub mu_init: f64,
    pub mu_dec: f64,
    pub mu_inc: f64,
    pub mu_max: f64,
    pub min_grad: f64,
    pub hidden_activation: crate::ann::Activation,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            max_epochs: 300,
            mu_init: 1e-3,
            mu_dec: 0.1,
            mu_inc: 10.0,
            mu_max: 1e10,
            min_grad: 1e-7,
            hidden_activation: crate::ann::Activation::Tanh,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    MaxEpochs,
    DampingOverflow,
    GradientConverged,
}

impl StopReason {
    pub fn name(self) -> &'static str {
        match self {
            StopReason::MaxEpochs => "max_epochs",
            StopReason::DampingOverflow => "damping_overflow",
            StopReason::GradientConverged => "gradient_converged",
        }
    }
}

/// Objective before and after one accepted step, at fixed `alpha`, `beta`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AcceptedStep {
    pub before: f64,
    pub after: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub hidden_dim: usize,
    pub seed: u64,
    pub final_objective: f64,
    pub alpha: f64,
    pub beta: f64,
    pub effective_params_gamma: f64,
    pub param_count: usize,
    pub epochs_run: usize,
    pub stop_reason: StopReason,
    pub train_accuracy: f64,
    pub validation_accuracy: f64,
    /// Filled in only once a model is final.
    pub test_accuracy: Option<f64>,
    pub steps: Vec<AcceptedStep>,
}

impl TrainReport {
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        writeln!(out, "hidden_dim = {}", self.hidden_dim).unwrap();
        writeln!(out, "param_count = {}", self.param_count).unwrap();
        writeln!(out, "seed = {}", self.seed).unwrap();
        writeln!(out, "epochs_run = {}", self.epochs_run).unwrap();
        writeln!(out, "stop_reason = {}", self.stop_reason.name()).unwrap();
        writeln!(out, "final_objective = {}", self.final_objective).unwrap();
        writeln!(out, "alpha = {}", self.alpha).unwrap();
        writeln!(out, "beta = {}", self.beta).unwrap();
        writeln!(out, "gamma = {}", self.effective_params_gamma).unwrap();
        writeln!(out, "train_accuracy = {}", self.train_accuracy).unwrap();
        writeln!(out, "validation_accuracy = {}", self.validation_accuracy).unwrap();
        if let Some(t) = self.test_accuracy {
            writeln!(out, "test_accuracy = {t}").unwrap();
        }
        out
    }
}

/// Scaled features and {0, 1} targets for a set of indices.
fn design(net: &Mlp, d: &Dataset, idx: &[usize]) -> (Vec<[f64; INPUT_DIM]>, Vec<f64>) {
    idx.iter()
        .map(|&i| {
            let s = &d.samples[i];
            (net.input_scale.apply(&s.features), s.label.as_f64())
        })
        .unzip()
}

fn sum_sq_error(net: &Mlp, xs: &[[f64; INPUT_DIM]], ts: &[f64]) -> f64 {
    xs.iter()
        .zip(ts)
        .map(|(x, t)| {
            let e = net.forward_scaled(x) - t;
            e * e
        })
        .sum()
}

/// Gauss–Newton pieces: `JᵀJ`, `Jᵀe` and `E_D`, with `e = y - t`.
fn normal_equations(net: &Mlp, xs: &[[f64; INPUT_DIM]], ts: &[f64]) -> (DMatrix<f64>, DVector<f64>, f64) {
    let p = net.param_count();
    let mut jtj = vec![0.0; p * p];
    let mut jte = vec![0.0; p];
    let mut grad = vec![0.0; p];
    let mut ed = 0.0;
    for (x, t) in xs.iter().zip(ts) {
        let y = net.forward_with_gradient(x, &mut grad);
        let e = y - t;
        ed += e * e;
        for a in 0..p {
            let ga = grad[a];
            if ga == 0.0 {
                continue;
            }
            jte[a] += ga * e;
            let row = &mut jtj[a * p..(a + 1) * p];
            for b in a..p {
                row[b] += ga * grad[b];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            jtj[a * p + b] = jtj[b * p + a];
        }
    }
    (DMatrix::from_row_slice(p, p, &jtj), DVector::from_vec(jte), ed)
}

fn accuracy_on(net: &Mlp, d: &Dataset, idx: &[usize]) -> f64 {
    if idx.is_empty() {
        return 0.0;
    }
    let hits = idx
        .iter()
        .filter(|&&i| net.classify(&d.samples[i].features) == d.samples[i].label)
        .count();
    hits as f64 / idx.len() as f64
}

/// Bayesian-regularized Levenberg–Marquardt fit of a fresh network on the
/// training split. The test split is not read.
pub fn train_brt(d: &Dataset, hidden_dim: usize, seed: u64, opts: &TrainOptions) -> Result<(Mlp, TrainReport)> {
    let split = d
        .split
        .as_ref()
        .ok_or_else(|| Error::InvalidDataset("dataset has not been split".into()))?;
    if hidden_dim == 0 {
        return Err(Error::Training("hidden_dim must be at least 1".into()));
    }
    if !opts.hidden_activation.is_smooth() {
        return Err(Error::Unsupported(format!(
            "Levenberg–Marquardt needs a smooth hidden activation, got {}",
            opts.hidden_activation
        )));
    }
    let mut net = Mlp::zeros(hidden_dim);
    net.hidden_activation = opts.hidden_activation;
    net.input_scale = InputScale::fit(split.train.iter().map(|&i| &d.samples[i].features));
    let p = net.param_count();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w: Vec<f64> = (0..p).map(|_| rng.gen_range(-0.5..=0.5)).collect();
    net.set_params(&w);

    let (xs, ts) = design(&net, d, &split.train);
    let n = xs.len() as f64;
    let identity = DMatrix::<f64>::identity(p, p);

    let mut alpha = 0.0;
    let mut beta = 1.0;
    // gamma never exceeds the rank of J, which is at most min(P, N)
    let gamma_cap = (p as f64).min(n);
    let mut gamma = gamma_cap;
    let mut mu = opts.mu_init;
    let (mut jtj, mut jte, mut ed) = normal_equations(&net, &xs, &ts);
    let mut ew: f64 = w.iter().map(|x| x * x).sum();
    let mut objective = beta * ed + alpha * ew;
    if !objective.is_finite() {
        return Err(Error::Training("initial objective is not finite".into()));
    }
    let mut steps = Vec::new();
    let mut epochs_run = 0;
    let mut stop_reason = StopReason::MaxEpochs;

    'epochs: for _ in 0..opts.max_epochs {
        let w_vec = DVector::from_column_slice(&w);
        let half_grad = &jte * beta + &w_vec * alpha;
        if 2.0 * half_grad.norm() < opts.min_grad {
            stop_reason = StopReason::GradientConverged;
            break;
        }
        epochs_run += 1;

        // damping loop
        let (w_new, ed_new, ew_new) = loop {
            if mu > opts.mu_max {
                stop_reason = StopReason::DampingOverflow;
                break 'epochs;
            }
            let system = &jtj * beta + &identity * (alpha + mu);
            let Some(chol) = system.cholesky() else {
                mu *= opts.mu_inc;
                continue;
            };
            let delta = chol.solve(&half_grad);
            let candidate: Vec<f64> = w.iter().zip(delta.iter()).map(|(a, b)| a - b).collect();
            net.set_params(&candidate);
            let ed_c = sum_sq_error(&net, &xs, &ts);
            let ew_c: f64 = candidate.iter().map(|x| x * x).sum();
            let f_c = beta * ed_c + alpha * ew_c;
            if f_c.is_finite() && f_c < objective {
                steps.push(AcceptedStep {
                    before: objective,
                    after: f_c,
                });
                mu *= opts.mu_dec;
                break (candidate, ed_c, ew_c);
            }
            mu *= opts.mu_inc;
        };

        // evidence update with the curvature of the step just taken
        gamma = if alpha > 0.0 {
            let h = &jtj * beta + &identity * alpha;
            match h.cholesky() {
                Some(c) => p as f64 - alpha * c.inverse().trace(),
                None => gamma,
            }
        } else {
            gamma_cap
        }
        .clamp(0.0, gamma_cap);

        w = w_new;
        ed = ed_new;
        ew = ew_new;
        let alpha_new = if ew > 0.0 { gamma / (2.0 * ew) } else { 1.0 };
        // at least one degree of freedom is left to the noise when N <= P
        let beta_new = (n - gamma).max(1.0) / (2.0 * ed.max(f64::MIN_POSITIVE));
        // a collapsed posterior (gamma -> 0, or E_W -> 0) keeps the last usable estimate
        if alpha_new.is_finite() && alpha_new > 0.0 && beta_new.is_finite() && beta_new > 0.0 {
            alpha = alpha_new;
            beta = beta_new;
        }
        net.set_params(&w);
        (jtj, jte, _) = normal_equations(&net, &xs, &ts);
        objective = beta * ed + alpha * ew;
        if !objective.is_finite() {
            return Err(Error::Training(format!(
                "objective became non-finite after epoch {epochs_run} (E_D = {ed}, E_W = {ew})"
            )));
        }
    }

    net.set_params(&w);
    let report = TrainReport {
        hidden_dim,
        seed,
        final_objective: objective,
        alpha,
        beta,
        effective_params_gamma: gamma,
        param_count: p,
        epochs_run,
        stop_reason,
        train_accuracy: accuracy_on(&net, d, &split.train),
        validation_accuracy: accuracy_on(&net, d, &split.validation),
        test_accuracy: None,
        steps,
    };
    Ok((net, report))
}

pub const DEFAULT_GRID: [usize; 5] = [5, 10, 15, 20, 25];

#[derive(Clone, Debug)]
pub struct GridResult {
    pub best: Mlp,
    pub best_index: usize,
    pub reports: Vec<TrainReport>,
}

/// Train every candidate hidden size (in parallel) and keep the one with the
/// best validation accuracy; ties go to the smaller network.
pub fn grid_search(d: &Dataset, candidates: &[usize], seed: u64, opts: &TrainOptions) -> Result<GridResult> {
    if candidates.is_empty() {
        return Err(Error::Training("grid search needs at least one candidate".into()));
    }
    let trained = candidates
        .par_iter()
        .map(|&h| train_brt(d, h, seed, opts))
        .collect::<Result<Vec<_>>>()?;
    let best_index = select_best(&trained.iter().map(|(_, r)| r).collect::<Vec<_>>());
    let reports = trained.iter().map(|(_, r)| r.clone()).collect();
    let best = trained.into_iter().nth(best_index).unwrap().0;
    Ok(GridResult {
        best,
        best_index,
        reports,
    })
}

fn select_best(reports: &[&TrainReport]) -> usize {
    let mut best = 0;
    for (i, r) in reports.iter().enumerate().skip(1) {
        let b = reports[best];
        let better = r.validation_accuracy > b.validation_accuracy
            || (r.validation_accuracy == b.validation_accuracy && r.hidden_dim < b.hidden_dim);
        if better {
            best = i;
        }
    }
    best
}

/// Counts indexed `[true class][predicted class]`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub counts: [[u64; 2]; 2],
}

impl ConfusionMatrix {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (SwitchState, SwitchState)>) -> Self {
        let mut m = Self::default();
        for (t, p) in pairs {
            m.counts[t.as_u8() as usize][p.as_u8() as usize] += 1;
        }
        m
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        (self.counts[0][0] + self.counts[1][1]) as f64 / total as f64
    }

    /// Fraction of class `c` samples predicted as `c`.
    pub fn recall(&self, c: usize) -> f64 {
        let row = self.counts[c][0] + self.counts[c][1];
        if row == 0 {
            0.0
        } else {
            self.counts[c][c] as f64 / row as f64
        }
    }

    /// Fraction of `c` predictions that are truly `c`.
    pub fn precision(&self, c: usize) -> f64 {
        let col = self.counts[0][c] + self.counts[1][c];
        if col == 0 {
            0.0
        } else {
            self.counts[c][c] as f64 / col as f64
        }
    }

    pub fn to_kv(&self, prefix: &str) -> String {
        let c = &self.counts;
        let mut out = String::new();
        writeln!(out, "{prefix}.total = {}", self.total()).unwrap();
        for t in 0..2 {
            for p in 0..2 {
                writeln!(out, "{prefix}.true{t}_pred{p} = {}", c[t][p]).unwrap();
            }
        }
        writeln!(out, "{prefix}.accuracy = {}", self.accuracy()).unwrap();
        for k in 0..2 {
            writeln!(out, "{prefix}.recall{k} = {}", self.recall(k)).unwrap();
            writeln!(out, "{prefix}.precision{k} = {}", self.precision(k)).unwrap();
        }
        out
    }

    /// Grid in the usual layout: rows are predicted class, columns true class,
    /// with each cell's share of the total and per-row/column rates.
    pub fn to_text(&self, title: &str) -> String {
        let total = self.total().max(1) as f64;
        let c = &self.counts;
        let pct = |x: f64| format!("{:.1}%", 100.0 * x);
        let mut out = String::new();
        writeln!(out, "{title} (rows: predicted, columns: true), n = {}", self.total()).unwrap();
        writeln!(out, "{:>10} {:>16} {:>16} {:>10}", "", "true 0", "true 1", "precision").unwrap();
        for p in 0..2 {
            writeln!(
                out,
                "{:>10} {:>9} {:>6} {:>9} {:>6} {:>10}",
                format!("pred {p}"),
                c[0][p],
                pct(c[0][p] as f64 / total),
                c[1][p],
                pct(c[1][p] as f64 / total),
                pct(self.precision(p))
            )
            .unwrap();
        }
        writeln!(
            out,
            "{:>10} {:>16} {:>16} {:>10}",
            "recall",
            pct(self.recall(0)),
            pct(self.recall(1)),
            pct(self.accuracy())
        )
        .unwrap();
        out
    }
}

pub fn confusion(net: &Mlp, samples: &[Sample]) -> ConfusionMatrix {
    ConfusionMatrix::from_pairs(samples.iter().map(|s| (s.label, net.classify(&s.features))))
}

#[derive(Clone, Debug)]
pub struct SplitConfusion {
    pub all: ConfusionMatrix,
    pub train: ConfusionMatrix,
    pub test: ConfusionMatrix,
    pub validation: ConfusionMatrix,
}

pub fn evaluate_splits(net: &Mlp, d: &Dataset) -> Result<SplitConfusion> {
    let split = d
        .split
        .as_ref()
        .ok_or_else(|| Error::InvalidDataset("dataset has not been split".into()))?;
    Ok(SplitConfusion {
        all: confusion(net, &d.samples),
        train: confusion(net, &d.subset(&split.train)),
        test: confusion(net, &d.subset(&split.test)),
        validation: confusion(net, &d.subset(&split.validation)),
    })
}

impl SplitConfusion {
    pub fn to_kv(&self) -> String {
        [
            self.all.to_kv("all"),
            self.train.to_kv("train"),
            self.test.to_kv("test"),
            self.validation.to_kv("validation"),
        ]
        .concat()
    }

    pub fn to_text(&self) -> String {
        [
            self.all.to_text("all samples"),
            self.train.to_text("train split"),
            self.test.to_text("test split"),
            self.validation.to_text("validation split"),
        ]
        .join("\n")
    }
}

/// Largest relative gap between the analytic parameter gradient of the
/// network output and a central difference (step `1e-6·max(1, |p|)`).
/// Relative errors use `max(|analytic|, |numeric|, 1e-3)` as denominator so
/// vanishing entries are compared absolutely.
pub fn gradient_check(net: &Mlp, sample: &FeatureVector) -> Result<f64> {
    if !net.hidden_activation.is_smooth() || !net.output_activation.is_smooth() {
        return Err(Error::Unsupported(format!(
            "gradient check needs smooth activations, got {}/{}",
            net.hidden_activation, net.output_activation
        )));
    }
    let x = net.input_scale.apply(sample);
    let mut analytic = vec![0.0; net.param_count()];
    net.forward_with_gradient(&x, &mut analytic);
    let base = net.params();
    let mut probe = net.clone();
    let mut worst: f64 = 0.0;
    for (k, a) in analytic.iter().enumerate() {
        let step = 1e-6 * base[k].abs().max(1.0);
        let mut p = base.clone();
        p[k] = base[k] + step;
        probe.set_params(&p);
        let up = probe.forward_scaled(&x);
        p[k] = base[k] - step;
        probe.set_params(&p);
        let down = probe.forward_scaled(&x);
        let numeric = (up - down) / (2.0 * step);
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-3);
        worst = worst.max(rel);
    }
    Ok(worst)
}

pub fn default_dataset_path(out: &Path) -> PathBuf {
    out.join("dataset.csv")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ann::Activation;

    fn toy(points: &[(f64, f64, u8)], copies: usize) -> Dataset {
        let mut d = Dataset::default();
        for _ in 0..copies {
            for &(a, b, l) in points {
                d.samples.push(Sample {
                    features: FeatureVector::new(95.0, a, b),
                    label: SwitchState::from_u8(l).unwrap(),
                });
                d.times.push(d.times.len() as f64);
            }
        }
        d
    }

    /// Use every sample for training and validation.
    fn all_in_train(mut d: Dataset) -> Dataset {
        let idx: Vec<usize> = (0..d.len()).collect();
        d.split = Some(Split {
            seed: 0,
            train: idx.clone(),
            test: vec![],
            validation: idx,
        });
        d
    }

    #[test]
    fn split_sizes_for_full_dataset() {
        assert_eq!(split_sizes(30001), (18001, 6000, 6000));
        assert_eq!(split_sizes(5), (3, 1, 1));
        for n in 5..200 {
            let (a, b, c) = split_sizes(n);
            assert_eq!(a + b + c, n);
            assert!(b > 0 && c > 0);
            assert!((b as f64 - 0.2 * n as f64).abs() <= 1.0);
            assert!((c as f64 - 0.2 * n as f64).abs() <= 1.0);
        }
    }

    #[test]
    fn split_is_deterministic_partition() {
        let d = toy(&[(1.0, 2.0, 0), (3.0, 4.0, 1)], 50);
        let a = split_dataset(d.clone(), 9).unwrap().split.unwrap();
        let b = split_dataset(d.clone(), 9).unwrap().split.unwrap();
        assert_eq!(a, b);
        let mut all: Vec<usize> = a.train.iter().chain(&a.test).chain(&a.validation).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        let c = split_dataset(d, 10).unwrap().split.unwrap();
        assert_ne!(a.train, c.train);
    }

    #[test]
    fn tiny_dataset_cannot_split() {
        let d = toy(&[(1.0, 2.0, 0)], 4);
        assert!(split_dataset(d, 1).is_err());
    }

    #[test]
    fn xor_is_learned() {
        // replicated so the noise estimate has more samples than parameters
        let d = all_in_train(toy(
            &[(-1.0, -1.0, 0), (-1.0, 1.0, 1), (1.0, -1.0, 1), (1.0, 1.0, 0)],
            25,
        ));
        let (net, report) = train_brt(&d, 3, 0, &TrainOptions::default()).unwrap();
        // brute-force check of every point
        for s in &d.samples {
            assert_eq!(net.classify(&s.features), s.label, "{report:?}");
        }
        assert_eq!(report.train_accuracy, 1.0);
    }

    #[test]
    fn constant_labels() {
        let pts: Vec<(f64, f64, u8)> = (0..40).map(|k| (k as f64, (k * 7 % 13) as f64, 1)).collect();
        let d = all_in_train(toy(&pts, 1));
        let (net, report) = train_brt(&d, 4, 2, &TrainOptions::default()).unwrap();
        assert!(d.samples.iter().all(|s| net.classify(&s.features) == SwitchState::On));
        assert_eq!(report.train_accuracy, 1.0);
    }

    #[test]
    fn accepted_steps_never_increase_objective() {
        let pts: Vec<(f64, f64, u8)> = (0..60)
            .map(|k| {
                let a = (k as f64 * 0.37).sin() * 10.0;
                let b = (k as f64 * 0.91).cos() * 10.0;
                (a, b, u8::from(a + 0.5 * b > 1.0))
            })
            .collect();
        let d = split_dataset(toy(&pts, 1), 4).unwrap();
        let (_, report) = train_brt(&d, 5, 4, &TrainOptions::default()).unwrap();
        assert!(!report.steps.is_empty());
        assert!(report.steps.iter().all(|s| s.after <= s.before));
        assert!(report.alpha > 0.0 && report.beta > 0.0);
        assert!((0.0..=report.param_count as f64).contains(&report.effective_params_gamma));
    }

    #[test]
    fn relu_is_refused() {
        let d = all_in_train(toy(&[(0.0, 0.0, 0), (1.0, 1.0, 1)], 3));
        let opts = TrainOptions {
            hidden_activation: Activation::Relu,
            ..Default::default()
        };
        assert!(matches!(train_brt(&d, 2, 0, &opts), Err(Error::Unsupported(_))));
        let mut net = Mlp::zeros(2);
        net.hidden_activation = Activation::Relu;
        assert!(matches!(
            gradient_check(&net, &FeatureVector::new(95.0, 1.0, 1.0)),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn zero_net_output_bias_gradient() {
        let net = Mlp::zeros(3);
        let x = [0.2, -0.4, 0.9];
        let mut g = vec![0.0; net.param_count()];
        net.forward_with_gradient(&x, &mut g);
        assert_eq!(*g.last().unwrap(), 0.25);
        assert!(gradient_check(&net, &FeatureVector::new(0.2, -0.4, 0.9)).unwrap() < 1e-9);
    }

    #[test]
    fn confusion_toy() {
        use SwitchState::*;
        let m = ConfusionMatrix::from_pairs([(Off, Off), (On, On), (On, Off)]);
        assert_eq!(m.counts, [[1, 0], [1, 1]]);
        assert!((m.accuracy() - 2.0 / 3.0).abs() < 1e-15);
        let perfect = ConfusionMatrix::from_pairs((0..10).map(|k| {
            let s = if k % 3 == 0 { On } else { Off };
            (s, s)
        }));
        assert_eq!(perfect.counts[0][1] + perfect.counts[1][0], 0);
        assert_eq!(perfect.accuracy(), 1.0);
    }

    #[test]
    fn reported_matrix_rates() {
        // cell values of the reference confusion grid
        let m = ConfusionMatrix {
            counts: [[6342, 825], [0, 22834]],
        };
        assert_eq!(m.total(), 30001);
        assert!((m.accuracy() - 0.973).abs() < 5e-4);
        assert!((m.recall(0) - 0.885).abs() < 5e-4);
        assert!((m.precision(1) - 0.965).abs() < 5e-4);
        assert_eq!(m.precision(0), 1.0);
        assert_eq!(m.recall(1), 1.0);
    }

    #[test]
    fn dataset_csv_round_trip() {
        let mut d = toy(&[(0.1, 1.0 / 3.0, 0), (94.99999999999, -2e-17, 1)], 2);
        d.times = vec![0.0, 5e-5, 1e-4, 1.5e-4];
        let text = d.to_csv();
        assert!(text.starts_with("t,v_ref,v_c,i_l,u\n"));
        let back = Dataset::from_csv(&text, Path::new("x.csv")).unwrap();
        assert_eq!(back.samples, d.samples);
        assert_eq!(back.times, d.times);
        assert!(Dataset::from_csv("t,v_ref,v_c,i_l,u\n0,1,2,3,7\n", Path::new("x")).is_err());
    }

    #[test]
    fn grid_tie_prefers_smaller() {
        let mk = |h, acc| TrainReport {
            hidden_dim: h,
            seed: 0,
            final_objective: 0.0,
            alpha: 1.0,
            beta: 1.0,
            effective_params_gamma: 1.0,
            param_count: 1,
            epochs_run: 1,
            stop_reason: StopReason::MaxEpochs,
            train_accuracy: 1.0,
            validation_accuracy: acc,
            test_accuracy: None,
            steps: vec![],
        };
        let (a, b, c) = (mk(20, 0.9), mk(10, 0.9), mk(15, 0.8));
        assert_eq!(select_best(&[&a, &b, &c]), 1);
        assert_eq!(select_best(&[&c]), 0);
        let d = mk(25, 0.95);
        assert_eq!(select_best(&[&a, &b, &c, &d]), 3);
    }
}
