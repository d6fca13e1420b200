//! Interacting Multiple Model estimator over a bank of scalar Kalman filters.
//!
//! One step runs, in order:
//!
//! 1. **Mixing.** `c̄_j = Σ_i w_i Tr_ij`, `μ_{i|j} = w_i Tr_ij / c̄_j`; each
//!    filter restarts from `x̄_j = Σ_i μ_{i|j} x_i` with variance
//!    `Σ_i μ_{i|j} (P_i + (x_i − x̄_j)²)`.
//! 2. **Filtering.** Every filter predicts with its own `(a, b1, b2)` and
//!    updates on the same measurement.
//! 3. **Model probabilities.** `L_j = N(y_j; 0, S_j)`, `w_j ∝ L_j · prior_j`
//!    where the prior is `c̄_j` ([`WeightPrior::Predicted`], default) or the
//!    previous weight ([`WeightPrior::Previous`]).
//! 4. **Combination.** `x̂ = Σ w_j x_j`, `P̂ = Σ w_j (P_j + (x_j − x̂)²)`.

use std::f64::consts::PI;

use crate::filter::{initial_state, kf_predict, kf_update, FilterState, UpdateOutcome, DEFAULT_P0};
use crate::sysid::LinearModel;
use crate::trajectory::Trajectory;
use crate::{Error, Result};

pub const DEFAULT_TR_DIAG: f64 = 0.95;
pub const LIKELIHOOD_FLOOR: f64 = 1e-300;
pub const WEIGHT_FLOOR: f64 = 1e-12;
/// Mixing normalizers below this fall back to a uniform mixing column.
pub const MIXING_UNDERFLOW: f64 = 1e-300;

/// Row-stochastic model transition matrix, `Tr[i][j] = P(model j | model i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    m: usize,
    data: Vec<f64>,
}

impl TransitionMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let m = rows.len();
        if m == 0 {
            return Err(Error::param("transition matrix is empty"));
        }
        let mut data = Vec::with_capacity(m * m);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != m {
                return Err(Error::param(format!("transition row {i} has {} entries, expected {m}", row.len())));
            }
            if row.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
                return Err(Error::param(format!("transition row {i} has a negative or non-finite entry")));
            }
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > 1e-12 {
                return Err(Error::param(format!("transition row {i} sums to {total}")));
            }
            data.extend(row);
        }
        Ok(Self { m, data })
    }

    /// `diag` on the diagonal, the rest of each row split evenly. A 1×1
    /// matrix is `[[1]]` whatever `diag` is.
    pub fn sticky(m: usize, diag: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&diag) {
            return Err(Error::param(format!("transition diagonal must lie in [0, 1], got {diag}")));
        }
        if m == 1 {
            return Self::new(vec![vec![1.0]]);
        }
        let off = (1.0 - diag) / (m - 1) as f64;
        let rows = (0..m)
            .map(|i| {
                let mut row: Vec<f64> = (0..m).map(|j| if i == j { diag } else { off }).collect();
                // absorb rounding so each row sums to one
                let total: f64 = row.iter().sum();
                row[i] += 1.0 - total;
                row
            })
            .collect();
        Self::new(rows)
    }

    pub fn size(&self) -> usize {
        self.m
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.m + j]
    }

    /// Same chain with models relabeled: new index `k` is old `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let m = self.m;
        let data = (0..m * m).map(|idx| self.get(perm[idx / m], perm[idx % m])).collect();
        Self { m, data }
    }
}

/// How the transition matrix is chosen for a bank of a given size.
#[derive(Debug, Clone, PartialEq)]
pub enum TransitionConfig {
    Sticky(f64),
    Full(TransitionMatrix),
}

impl Default for TransitionConfig {
    fn default() -> Self {
        TransitionConfig::Sticky(DEFAULT_TR_DIAG)
    }
}

impl TransitionConfig {
    pub fn build(&self, m: usize) -> Result<TransitionMatrix> {
        match self {
            TransitionConfig::Sticky(d) => TransitionMatrix::sticky(m, *d),
            TransitionConfig::Full(t) if t.size() == m => Ok(t.clone()),
            TransitionConfig::Full(t) => Err(Error::param(format!(
                "transition matrix is {0}×{0} but the bank has {m} models",
                t.size()
            ))),
        }
    }
}

/// Prior used in the model-probability update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WeightPrior {
    /// `c̄_j = Σ_i w_i Tr_ij`
    #[default]
    Predicted,
    /// `w_j` from the previous step.
    Previous,
}

impl std::str::FromStr for WeightPrior {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "predicted" => Ok(WeightPrior::Predicted),
            "previous" => Ok(WeightPrior::Previous),
            other => Err(Error::param(format!("unknown weight prior `{other}` (predicted | previous)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImmBank {
    pub models: Vec<LinearModel>,
    pub states: Vec<FilterState>,
    pub weights: Vec<f64>,
    pub transition: TransitionMatrix,
}

impl ImmBank {
    /// All filters start from `init` with equal weights.
    pub fn new(models: Vec<LinearModel>, init: FilterState, transition: TransitionMatrix) -> Result<Self> {
        let m = models.len();
        let bank = Self {
            states: vec![init; m],
            weights: vec![1.0 / m.max(1) as f64; m],
            models,
            transition,
        };
        bank.validate()?;
        Ok(bank)
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.models.len();
        if m == 0 {
            return Err(Error::param("bank needs at least one model"));
        }
        if self.states.len() != m || self.weights.len() != m || self.transition.size() != m {
            return Err(Error::param("bank dimensions disagree"));
        }
        for model in &self.models {
            model.validate()?;
        }
        for s in &self.states {
            s.validate()?;
        }
        check_simplex(&self.weights)
    }
}

fn check_simplex(w: &[f64]) -> Result<()> {
    if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::invariant(format!("model weights not nonnegative: {w:?}")));
    }
    let total: f64 = w.iter().sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::invariant(format!("model weights sum to {total}")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mixing {
    pub states: Vec<FilterState>,
    /// `c̄_j`, the predicted model probabilities.
    pub predicted: Vec<f64>,
    /// Some normalizer underflowed and its column was mixed uniformly.
    pub fallback: bool,
}

pub fn imm_mix(bank: &ImmBank) -> Mixing {
    let m = bank.len();
    let mut states = Vec::with_capacity(m);
    let mut predicted = Vec::with_capacity(m);
    let mut fallback = false;
    let mut mu = vec![0.0; m];
    for j in 0..m {
        let c: f64 = (0..m).map(|i| bank.weights[i] * bank.transition.get(i, j)).sum();
        predicted.push(c);
        if c < MIXING_UNDERFLOW {
            fallback = true;
            mu.fill(1.0 / m as f64);
        } else {
            for (i, v) in mu.iter_mut().enumerate() {
                *v = bank.weights[i] * bank.transition.get(i, j) / c;
            }
        }
        let x: f64 = mu.iter().zip(&bank.states).map(|(u, s)| u * s.x).sum();
        let p: f64 = mu
            .iter()
            .zip(&bank.states)
            .map(|(u, s)| u * (s.p + (s.x - x) * (s.x - x)))
            .sum();
        states.push(FilterState { x, p });
    }
    Mixing {
        states,
        predicted,
        fallback,
    }
}

/// Gaussian density of innovation `y` with variance `s`, floored at
/// [`LIKELIHOOD_FLOOR`].
pub fn model_likelihood(outcome: &UpdateOutcome) -> f64 {
    let s = outcome.innovation_var;
    let y = outcome.innovation;
    let l = (-0.5 * y * y / s).exp() / (2.0 * PI * s).sqrt();
    if l.is_nan() {
        LIKELIHOOD_FLOOR
    } else {
        l.max(LIKELIHOOD_FLOOR)
    }
}

/// An innovation and its variance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Innovation {
    pub y: f64,
    pub s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImmStepOutput {
    pub combined: FilterState,
    pub weights: Vec<f64>,
    pub per_model: Vec<UpdateOutcome>,
    /// Innovation of the model with the largest predicted probability.
    pub dominant: Innovation,
    /// Moment-matched innovation of the predictive mixture, weighted by the
    /// predicted model probabilities.
    pub mixture: Innovation,
    pub mixing_fallback: bool,
    /// Every likelihood hit the floor; weights were carried over.
    pub likelihoods_floored: bool,
}

pub fn imm_step(bank: &ImmBank, u: [f64; 2], z: f64, prior: WeightPrior) -> Result<(ImmBank, ImmStepOutput)> {
    if !z.is_finite() {
        return Err(Error::param(format!("measurement is not finite: {z}")));
    }
    let m = bank.len();
    let mix = imm_mix(bank);

    let per_model: Vec<UpdateOutcome> = bank
        .models
        .iter()
        .zip(&mix.states)
        .map(|(model, s)| kf_update(kf_predict(*s, model, u), z, model.r))
        .collect();
    for o in &per_model {
        o.state.validate()?;
    }

    let likelihoods: Vec<f64> = per_model.iter().map(model_likelihood).collect();
    let floored = likelihoods.iter().all(|&l| l <= LIKELIHOOD_FLOOR);
    let prior_w = match prior {
        WeightPrior::Predicted => &mix.predicted,
        WeightPrior::Previous => &bank.weights,
    };
    let mut weights: Vec<f64> = if floored {
        bank.weights.clone()
    } else {
        let raw: Vec<f64> = likelihoods.iter().zip(prior_w).map(|(l, w)| l * w).collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / total).collect()
    };
    weights.iter_mut().for_each(|w| *w = w.max(WEIGHT_FLOOR));
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    check_simplex(&weights)?;

    let x: f64 = weights.iter().zip(&per_model).map(|(w, o)| w * o.state.x).sum();
    let p: f64 = weights
        .iter()
        .zip(&per_model)
        .map(|(w, o)| w * (o.state.p + (o.state.x - x) * (o.state.x - x)))
        .sum();
    let combined = FilterState::new(x, p)?;

    let c_total: f64 = mix.predicted.iter().sum();
    let y_mix: f64 = mix
        .predicted
        .iter()
        .zip(&per_model)
        .map(|(c, o)| c / c_total * o.innovation)
        .sum();
    let s_mix: f64 = mix
        .predicted
        .iter()
        .zip(&per_model)
        .map(|(c, o)| c / c_total * (o.innovation_var + (o.innovation - y_mix) * (o.innovation - y_mix)))
        .sum();
    let dom = (0..m)
        .max_by(|&a, &b| mix.predicted[a].total_cmp(&mix.predicted[b]).then(b.cmp(&a)))
        .expect("non-empty bank");

    let next = ImmBank {
        models: bank.models.clone(),
        states: per_model.iter().map(|o| o.state).collect(),
        weights: weights.clone(),
        transition: bank.transition.clone(),
    };
    let out = ImmStepOutput {
        combined,
        weights,
        dominant: Innovation {
            y: per_model[dom].innovation,
            s: per_model[dom].innovation_var,
        },
        mixture: Innovation { y: y_mix, s: s_mix },
        per_model,
        mixing_fallback: mix.fallback,
        likelihoods_floored: floored,
    };
    Ok((next, out))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImmConfig {
    pub transition: TransitionConfig,
    pub p0: f64,
    pub weight_prior: WeightPrior,
}

impl Default for ImmConfig {
    fn default() -> Self {
        Self {
            transition: TransitionConfig::default(),
            p0: DEFAULT_P0,
            weight_prior: WeightPrior::default(),
        }
    }
}

/// Runs the bank over a whole run with equal initial weights, every filter
/// starting at the first measurement. One output per sample.
pub fn run_imm(models: &[LinearModel], traj: &Trajectory, config: &ImmConfig) -> Result<Vec<ImmStepOutput>> {
    if models.is_empty() {
        return Err(Error::param("bank needs at least one model"));
    }
    let tr = config.transition.build(models.len())?;
    let mut bank = ImmBank::new(models.to_vec(), initial_state(traj, config.p0)?, tr)?;
    let mut out = Vec::with_capacity(traj.len());
    for s in traj.samples() {
        let (next, step) = imm_step(&bank, s.u, s.x_next, config.weight_prior)?;
        bank = next;
        out.push(step);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sysid::NoiseParams;

    fn model(a: f64) -> LinearModel {
        LinearModel::new([a, 0.05, 0.05], NoiseParams::default()).unwrap()
    }

    fn bank2() -> ImmBank {
        ImmBank {
            models: vec![model(0.9), model(0.5)],
            states: vec![FilterState { x: 0.0, p: 1.0 }, FilterState { x: 1.0, p: 1.0 }],
            weights: vec![0.5, 0.5],
            transition: TransitionMatrix::new(vec![vec![0.9, 0.1], vec![0.1, 0.9]]).unwrap(),
        }
    }

    #[test]
    fn sticky_rows_are_stochastic() {
        for m in 1..30 {
            let t = TransitionMatrix::sticky(m, 0.95).unwrap();
            for i in 0..m {
                let s: f64 = (0..m).map(|j| t.get(i, j)).sum();
                assert!((s - 1.0).abs() <= 1e-12);
            }
        }
        assert_eq!(TransitionMatrix::sticky(1, 0.3).unwrap().get(0, 0), 1.0);
        assert!(TransitionMatrix::sticky(3, 1.2).is_err());
    }

    #[test]
    fn bad_transition_rows_are_rejected() {
        assert!(TransitionMatrix::new(vec![vec![0.5, 0.4], vec![0.5, 0.5]]).is_err());
        assert!(TransitionMatrix::new(vec![vec![1.5, -0.5], vec![0.5, 0.5]]).is_err());
        assert!(TransitionMatrix::new(vec![vec![1.0], vec![1.0]]).is_err());
    }

    #[test]
    fn single_model_mix_is_identity() {
        let s = FilterState { x: 0.37, p: 0.21 };
        let bank = ImmBank::new(vec![model(0.9)], s, TransitionMatrix::sticky(1, 0.95).unwrap()).unwrap();
        let mix = imm_mix(&bank);
        assert_eq!(mix.states, vec![s]);
        assert!(!mix.fallback);
    }

    #[test]
    fn identical_states_mix_to_themselves() {
        let s = FilterState { x: -0.4, p: 0.3 };
        let bank = ImmBank::new(vec![model(0.9); 3], s, TransitionMatrix::sticky(3, 0.8).unwrap()).unwrap();
        for mixed in imm_mix(&bank).states {
            assert!((mixed.x - s.x).abs() < 1e-15);
            assert!((mixed.p - s.p).abs() < 1e-15);
        }
    }

    #[test]
    fn hand_evaluated_mixing() {
        let mix = imm_mix(&bank2());
        assert!((mix.states[0].x - 0.1).abs() < 1e-15);
        assert!((mix.states[1].x - 0.9).abs() < 1e-15);
        assert!((mix.states[0].p - 1.09).abs() < 1e-14);
        assert!((mix.states[1].p - 1.09).abs() < 1e-14);
        assert!((mix.predicted[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn underflowing_column_mixes_uniformly() {
        let mut bank = bank2();
        bank.weights = vec![1.0, 0.0];
        bank.transition = TransitionMatrix::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let mix = imm_mix(&bank);
        assert!(mix.fallback);
        assert_eq!(mix.states[0].x, 0.0);
        assert!((mix.states[1].x - 0.5).abs() < 1e-15);
    }

    fn outcome(y: f64, s: f64) -> UpdateOutcome {
        UpdateOutcome {
            state: FilterState { x: 0.0, p: 1.0 },
            innovation: y,
            innovation_var: s,
        }
    }

    #[test]
    fn likelihood_values() {
        assert!((model_likelihood(&outcome(0.0, 1.0)) - 0.398_942_280_401_432_7).abs() < 1e-15);
        let want = (-0.5f64).exp() / (2.0 * PI).sqrt();
        assert!((model_likelihood(&outcome(1.0, 1.0)) - want).abs() < 1e-15);
        assert!((want - 0.241_970_724_519_143_37).abs() < 1e-15);
        assert_eq!(model_likelihood(&outcome(1e3, 0.5)), LIKELIHOOD_FLOOR);
    }

    #[test]
    fn all_floored_keeps_weights() {
        let mut bank = bank2();
        bank.weights = vec![0.3, 0.7];
        let (next, out) = imm_step(&bank, [0.0, 0.0], 1e6, WeightPrior::Predicted).unwrap();
        assert!(out.likelihoods_floored);
        assert!((next.weights[0] - 0.3).abs() < 1e-15);
        assert!((next.weights[1] - 0.7).abs() < 1e-15);
    }

    #[test]
    fn weight_floor_keeps_models_alive() {
        let bank = bank2();
        let (next, _) = imm_step(&bank, [0.0, 0.0], 30.0, WeightPrior::Previous).unwrap();
        assert!(next.weights.iter().all(|&w| w >= WEIGHT_FLOOR * 0.999));
        assert!((next.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn combined_variance_includes_spread() {
        let (_, out) = imm_step(&bank2(), [1.0, -1.0], 0.4, WeightPrior::Predicted).unwrap();
        let floor: f64 = out.weights.iter().zip(&out.per_model).map(|(w, o)| w * o.state.p).sum();
        assert!(out.combined.p >= floor);
    }

    #[test]
    fn non_finite_measurement_is_rejected() {
        assert!(imm_step(&bank2(), [0.0, 0.0], f64::NAN, WeightPrior::Predicted).is_err());
    }

    #[test]
    fn transition_config_size_mismatch() {
        let t = TransitionMatrix::sticky(2, 0.9).unwrap();
        assert!(TransitionConfig::Full(t.clone()).build(3).is_err());
        assert_eq!(TransitionConfig::Full(t.clone()).build(2).unwrap(), t);
    }
}
