//! Two-parameter logistic item response model.

use serde::{Deserialize, Serialize};

use crate::error::HarnessError;
use crate::scalar::Scalar;

/// Ability estimates are clamped to `[-THETA_MAX, THETA_MAX]`.
pub const THETA_MAX: f64 = 4.0;
const NEWTON_TOLERANCE: f64 = 1e-6;
const NEWTON_MAX_ITERATIONS: usize = 100;
const MAX_HALVINGS: usize = 30;
const GRID_STEP: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IrtItem<T> {
    pub task_id: String,
    /// Discrimination, > 0.
    pub a: T,
    /// Difficulty on the logit scale.
    pub b: T,
}

impl<T: Scalar> IrtItem<T> {
    pub fn new(task_id: impl Into<String>, a: T, b: T) -> Result<Self, HarnessError> {
        check_discrimination(a)?;
        Ok(Self {
            task_id: task_id.into(),
            a,
            b,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AbilityEstimate<T> {
    pub theta: T,
    /// `+∞` until the responses are mixed.
    pub standard_error: T,
    pub n_responses: usize,
}

impl<T: Scalar> AbilityEstimate<T> {
    /// The estimate before any response.
    pub fn prior() -> Self {
        Self {
            theta: T::zero(),
            standard_error: T::infinity(),
            n_responses: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StopRule {
    pub max_items: usize,
    pub se_threshold: f64,
}

fn check_discrimination<T: Scalar>(a: T) -> Result<(), HarnessError> {
    if a > T::zero() && a.is_finite() {
        Ok(())
    } else {
        Err(HarnessError::config(format!("item discrimination must be > 0, got {a}")))
    }
}

fn p<T: Scalar>(theta: T, a: T, b: T) -> T {
    T::one() / (T::one() + (-(a * (theta - b))).exp())
}

/// `P(correct) = 1 / (1 + exp(-a (θ - b)))`.
pub fn irt_probability<T: Scalar>(theta: T, a: T, b: T) -> Result<T, HarnessError> {
    check_discrimination(a)?;
    Ok(p(theta, a, b))
}

/// Fisher information `a² P (1 - P)` of an item at `theta`.
pub fn fisher_information<T: Scalar>(theta: T, item: &IrtItem<T>) -> T {
    let prob = p(theta, item.a, item.b);
    item.a * item.a * prob * (T::one() - prob)
}

fn log_likelihood<T: Scalar>(theta: T, responses: &[(IrtItem<T>, bool)]) -> T {
    responses.iter().fold(T::zero(), |acc, (item, correct)| {
        // log P = -ln(1 + e^{-z}), log(1 - P) = -ln(1 + e^{z})
        let z = item.a * (theta - item.b);
        let term = if *correct { -z } else { z };
        acc - softplus(term)
    })
}

fn softplus<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn total_information<T: Scalar>(theta: T, responses: &[(IrtItem<T>, bool)]) -> T {
    responses
        .iter()
        .fold(T::zero(), |acc, (item, _)| acc + fisher_information(theta, item))
}

fn clamp<T: Scalar>(theta: T) -> T {
    let max = T::lit(THETA_MAX);
    theta.max(-max).min(max)
}

fn newton<T: Scalar>(responses: &[(IrtItem<T>, bool)]) -> Option<T> {
    let tolerance = T::lit(NEWTON_TOLERANCE);
    let mut theta = T::zero();
    let mut ll = log_likelihood(theta, responses);
    for _ in 0..NEWTON_MAX_ITERATIONS {
        let gradient = responses.iter().fold(T::zero(), |acc, (item, correct)| {
            let y = if *correct { T::one() } else { T::zero() };
            acc + item.a * (y - p(theta, item.a, item.b))
        });
        let information = total_information(theta, responses);
        if !(information > T::zero()) {
            return None;
        }
        let mut step = gradient / information;
        let mut candidate = clamp(theta + step);
        let mut candidate_ll = log_likelihood(candidate, responses);
        let mut halvings = 0;
        while candidate_ll < ll && halvings < MAX_HALVINGS {
            step = step / T::lit(2.0);
            candidate = clamp(theta + step);
            candidate_ll = log_likelihood(candidate, responses);
            halvings += 1;
        }
        let moved = (candidate - theta).abs();
        if candidate_ll >= ll {
            theta = candidate;
            ll = candidate_ll;
        }
        if moved < tolerance {
            return Some(theta);
        }
    }
    None
}

/// Maximum-likelihood θ on a uniform grid over `[-4, 4]`, smallest θ on ties.
pub fn grid_search_theta<T: Scalar>(responses: &[(IrtItem<T>, bool)]) -> T {
    let steps = (2.0 * THETA_MAX / GRID_STEP).round() as usize;
    let mut best = (T::lit(-THETA_MAX), T::neg_infinity());
    for i in 0..=steps {
        let theta = T::lit(-THETA_MAX + i as f64 * GRID_STEP);
        let ll = log_likelihood(theta, responses);
        if ll > best.1 {
            best = (theta, ll);
        }
    }
    best.0
}

/// Maximum-likelihood ability by damped Newton from θ = 0, falling back to
/// a grid search. Uniform response sets clamp to ±4 with infinite SE.
pub fn estimate_ability<T: Scalar>(responses: &[(IrtItem<T>, bool)]) -> Result<AbilityEstimate<T>, HarnessError> {
    if responses.is_empty() {
        return Err(HarnessError::config("ability estimation needs at least one response"));
    }
    for (item, _) in responses {
        check_discrimination(item.a)?;
    }
    let n_correct = responses.iter().filter(|(_, c)| *c).count();
    if n_correct == 0 || n_correct == responses.len() {
        let max = T::lit(THETA_MAX);
        return Ok(AbilityEstimate {
            theta: if n_correct == 0 { -max } else { max },
            standard_error: T::infinity(),
            n_responses: responses.len(),
        });
    }
    let theta = newton(responses).unwrap_or_else(|| {
        log::debug!("newton did not converge, using grid search");
        grid_search_theta(responses)
    });
    Ok(AbilityEstimate {
        theta,
        standard_error: T::one() / total_information(theta, responses).sqrt(),
        n_responses: responses.len(),
    })
}

/// The remaining item with maximal information at the current estimate;
/// ties go to the smallest task id.
pub fn select_next<'a, T: Scalar>(estimate: &AbilityEstimate<T>, remaining: &'a [IrtItem<T>]) -> Option<&'a IrtItem<T>> {
    let mut best: Option<(&IrtItem<T>, T)> = None;
    for item in remaining {
        let info = fisher_information(estimate.theta, item);
        best = match best {
            None => Some((item, info)),
            Some((b, bi)) if info > bi || (info == bi && item.task_id < b.task_id) => Some((item, info)),
            keep => keep,
        };
    }
    best.map(|(item, _)| item)
}

pub fn adaptive_stop<T: Scalar>(estimate: &AbilityEstimate<T>, administered: usize, limits: &StopRule) -> bool {
    administered >= limits.max_items || estimate.standard_error.to_f64_lossy() <= limits.se_threshold
}
