//! Multivariate Hawkes process with a shared exponential kernel.
//!
//! The type-`k` conditional intensity is
//!
//! ```text
//! λ_k(t) = μ_k + Σ_j Σ_{t_i^j < t} α_kj · β · exp(−β (t − t_i^j))
//! ```
//!
//! The kernel `β·exp(−βu)` integrates to one, so `α` is the branching matrix:
//! entry `(k, j)` is the expected number of type-`k` children of one type-`j`
//! event, and the process is stationary iff its spectral radius is below one.
//!
//! Because the kernel is exponential, the per-type sums
//! `A_j(t) = Σ_{t_i^j < t} exp(−β (t − t_i^j))` obey a one-step recursion,
//! which is what the likelihood, its gradient and the simulator use.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngExt};
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Lower bound applied to `μ` and `α` entries while fitting.
pub const PARAM_FLOOR: f64 = 1e-10;
/// Spectral radius ceiling enforced while fitting.
pub const STATIONARITY_MARGIN: f64 = 0.999;
/// Default cap on simulated events before [`HawkesError::ExplosionGuard`].
pub const DEFAULT_EVENT_CAP: usize = 10_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HawkesError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("excitation matrix has spectral radius {0:.6} >= 1; the process is not stationary")]
    NonStationary(f64),
    #[error("event type {kind} out of range for K = {k}")]
    TypeOutOfRange { kind: usize, k: usize },
    #[error("invalid event sequence: {0}")]
    InvalidSequence(String),
    #[error("simulation exceeded the cap of {cap} events")]
    ExplosionGuard { cap: usize },
    #[error("intensity is zero at event {index} (t = {time}); log-likelihood is -inf")]
    NonFiniteLikelihood { index: usize, time: f64 },
    #[error("cannot fit an empty event sequence")]
    EmptySequence,
}

/// Baseline rates, branching matrix and shared decay of a `K`-type process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "HawkesParamsFile", into = "HawkesParamsFile")]
pub struct HawkesParams {
    k: usize,
    mu: Vec<f64>,
    /// Row-major `k × k`; entry `(row, col)` is the effect of `col` on `row`.
    alpha: Vec<f64>,
    beta: f64,
}

impl HawkesParams {
    /// Validated constructor: nonnegative finite `mu` and `alpha`, square
    /// `alpha`, `beta > 0`, and spectral radius of `alpha` below one.
    pub fn new(mu: Vec<f64>, alpha: Vec<Vec<f64>>, beta: f64) -> Result<Self, HawkesError> {
        let k = mu.len();
        if k == 0 {
            return Err(HawkesError::InvalidParams("K must be at least 1".into()));
        }
        if alpha.len() != k || alpha.iter().any(|r| r.len() != k) {
            return Err(HawkesError::InvalidParams(format!(
                "alpha must be {k}x{k}"
            )));
        }
        let flat: Vec<f64> = alpha.into_iter().flatten().collect();
        let p = HawkesParams {
            k,
            mu,
            alpha: flat,
            beta,
        };
        p.check()?;
        Ok(p)
    }

    fn check(&self) -> Result<(), HawkesError> {
        if self
            .mu
            .iter()
            .chain(&self.alpha)
            .any(|v| !v.is_finite() || *v < 0.0)
        {
            return Err(HawkesError::InvalidParams(
                "mu and alpha entries must be finite and nonnegative".into(),
            ));
        }
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(HawkesError::InvalidParams(format!(
                "beta must be positive, got {}",
                self.beta
            )));
        }
        let rho = self.spectral_radius();
        if rho >= 1.0 {
            return Err(HawkesError::NonStationary(rho));
        }
        Ok(())
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn alpha(&self, row: usize, col: usize) -> f64 {
        self.alpha[row * self.k + col]
    }

    pub fn alpha_rows(&self) -> Vec<Vec<f64>> {
        self.alpha.chunks(self.k).map(<[f64]>::to_vec).collect()
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn spectral_radius(&self) -> f64 {
        spectral_radius(self.k, &self.alpha)
    }

    /// Long-run event rate per type, `(I − α)⁻¹ μ`.
    pub fn stationary_rates(&self) -> Vec<f64> {
        let a = DMatrix::from_row_slice(self.k, self.k, &self.alpha);
        let m = DMatrix::identity(self.k, self.k) - a;
        let mu = DVector::from_column_slice(&self.mu);
        m.lu()
            .solve(&mu)
            .map(|v| v.iter().copied().collect())
            .unwrap_or_else(|| vec![f64::INFINITY; self.k])
    }

    /// Parameters as one vector: `μ`, then `α` row-major, then `ln β`.
    fn to_vector(&self) -> Vec<f64> {
        let mut x = self.mu.clone();
        x.extend_from_slice(&self.alpha);
        x.push(self.beta.ln());
        x
    }

    fn from_vector(k: usize, x: &[f64]) -> Self {
        HawkesParams {
            k,
            mu: x[..k].to_vec(),
            alpha: x[k..k + k * k].to_vec(),
            beta: x[k + k * k].exp(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&HawkesParamsFile::from(self)).expect("params serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, HawkesError> {
        let f: HawkesParamsFile =
            serde_json::from_str(text).map_err(|e| HawkesError::InvalidParams(e.to_string()))?;
        HawkesParams::try_from(f)
    }
}

fn spectral_radius(k: usize, alpha: &[f64]) -> f64 {
    if k == 1 {
        return alpha[0].abs();
    }
    crate::linalg::spectral_radius(&DMatrix::from_row_slice(k, k, alpha))
}

/// On-disk layout: `{"K": .., "mu": [..], "alpha": [[..], ..], "beta": ..}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HawkesParamsFile {
    #[serde(rename = "K")]
    pub k: usize,
    pub mu: Vec<f64>,
    pub alpha: Vec<Vec<f64>>,
    pub beta: f64,
}

impl From<HawkesParams> for HawkesParamsFile {
    fn from(p: HawkesParams) -> Self {
        HawkesParamsFile::from(&p)
    }
}

impl From<&HawkesParams> for HawkesParamsFile {
    fn from(p: &HawkesParams) -> Self {
        HawkesParamsFile {
            k: p.k,
            mu: p.mu.clone(),
            alpha: p.alpha_rows(),
            beta: p.beta,
        }
    }
}

impl TryFrom<HawkesParamsFile> for HawkesParams {
    type Error = HawkesError;

    fn try_from(f: HawkesParamsFile) -> Result<Self, Self::Error> {
        if f.mu.len() != f.k {
            return Err(HawkesError::InvalidParams(format!(
                "K = {} but mu has {} entries",
                f.k,
                f.mu.len()
            )));
        }
        HawkesParams::new(f.mu, f.alpha, f.beta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Arrival {
    pub time: f64,
    pub kind: usize,
}

/// Time-sorted arrivals observed on `[0, horizon]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EventSequence {
    events: Vec<Arrival>,
    horizon: f64,
}

impl EventSequence {
    pub fn new(events: Vec<Arrival>, horizon: f64) -> Result<Self, HawkesError> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(HawkesError::InvalidSequence(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        let mut prev = 0.0;
        for (i, e) in events.iter().enumerate() {
            if !(e.time.is_finite() && e.time >= 0.0 && e.time <= horizon) {
                return Err(HawkesError::InvalidSequence(format!(
                    "event {i} at t = {} lies outside [0, {horizon}]",
                    e.time
                )));
            }
            if e.time < prev {
                return Err(HawkesError::InvalidSequence(format!(
                    "event {i} at t = {} precedes the previous event",
                    e.time
                )));
            }
            prev = e.time;
        }
        Ok(EventSequence { events, horizon })
    }

    /// Sorts by time (stable) before validating.
    pub fn from_unsorted(mut events: Vec<Arrival>, horizon: f64) -> Result<Self, HawkesError> {
        events.sort_by(|a, b| a.time.total_cmp(&b.time));
        Self::new(events, horizon)
    }

    pub fn events(&self) -> &[Arrival] {
        &self.events
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn counts(&self, k: usize) -> Vec<usize> {
        let mut c = vec![0; k];
        for e in &self.events {
            if e.kind < k {
                c[e.kind] += 1;
            }
        }
        c
    }

    /// Largest type index plus one, or 0 when empty.
    pub fn type_count(&self) -> usize {
        self.events.iter().map(|e| e.kind + 1).max().unwrap_or(0)
    }

    pub fn check_types(&self, k: usize) -> Result<(), HawkesError> {
        match self.events.iter().find(|e| e.kind >= k) {
            Some(e) => Err(HawkesError::TypeOutOfRange { kind: e.kind, k }),
            None => Ok(()),
        }
    }
}

/// `λ_k(t)` by direct summation over history events strictly before `t`.
pub fn intensity(
    params: &HawkesParams,
    history: &EventSequence,
    t: f64,
    k: usize,
) -> Result<f64, HawkesError> {
    if k >= params.k {
        return Err(HawkesError::TypeOutOfRange { kind: k, k: params.k });
    }
    let mut lam = params.mu[k];
    for e in history.events.iter().take_while(|e| e.time < t) {
        if e.kind >= params.k {
            return Err(HawkesError::TypeOutOfRange {
                kind: e.kind,
                k: params.k,
            });
        }
        lam += params.alpha(k, e.kind) * params.beta * (-params.beta * (t - e.time)).exp();
    }
    Ok(lam)
}

/// `λ_{k_i}(t_i)` at every event, via the exponential recursion.
pub fn event_intensities(
    params: &HawkesParams,
    seq: &EventSequence,
) -> Result<Vec<f64>, HawkesError> {
    seq.check_types(params.k)?;
    let mut out = Vec::with_capacity(seq.len());
    let mut state = DecayState::new(params.k);
    state.walk(seq, params.beta, |a, _, ev| {
        let lam = params.mu[ev.kind]
            + params.beta
                * (0..params.k)
                    .map(|j| params.alpha(ev.kind, j) * a[j])
                    .sum::<f64>();
        out.push(lam);
    });
    Ok(out)
}

/// Running `A_j` and `B_j = Σ (t − t_i) exp(−β(t − t_i))` sums.
struct DecayState {
    a: Vec<f64>,
    b: Vec<f64>,
    pending: Vec<usize>,
}

impl DecayState {
    fn new(k: usize) -> Self {
        DecayState {
            a: vec![0.0; k],
            b: vec![0.0; k],
            pending: Vec::new(),
        }
    }

    /// Calls `visit(A, B, event)` for every event with the sums taken over
    /// events strictly earlier in time, so simultaneous events do not see
    /// each other.
    fn walk<F: FnMut(&[f64], &[f64], &Arrival)>(
        &mut self,
        seq: &EventSequence,
        beta: f64,
        mut visit: F,
    ) {
        let mut now = 0.0;
        for ev in &seq.events {
            if ev.time > now {
                for j in self.pending.drain(..) {
                    self.a[j] += 1.0;
                }
                let dt = ev.time - now;
                let decay = (-beta * dt).exp();
                for (a, b) in self.a.iter_mut().zip(self.b.iter_mut()) {
                    *b = decay * (*b + dt * *a);
                    *a *= decay;
                }
                now = ev.time;
            }
            visit(&self.a, &self.b, ev);
            self.pending.push(ev.kind);
        }
    }
}

/// Ogata thinning on `[0, horizon]` with the default event cap.
pub fn simulate<R: Rng + ?Sized>(
    params: &HawkesParams,
    horizon: f64,
    rng: &mut R,
) -> Result<EventSequence, HawkesError> {
    simulate_with_cap(params, horizon, rng, DEFAULT_EVENT_CAP)
}

/// Ogata thinning. Between events the total intensity only decays, so its
/// value right after the latest candidate bounds it until the next one.
pub fn simulate_with_cap<R: Rng + ?Sized>(
    params: &HawkesParams,
    horizon: f64,
    rng: &mut R,
    cap: usize,
) -> Result<EventSequence, HawkesError> {
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(HawkesError::InvalidSequence(format!(
            "horizon must be positive, got {horizon}"
        )));
    }
    let k = params.k;
    let base: f64 = params.mu.iter().sum();
    // excite[k] = λ_k(t) − μ_k
    let mut excite = vec![0.0; k];
    let mut events = Vec::new();
    let mut t = 0.0;
    loop {
        let bound = base + excite.iter().sum::<f64>();
        if bound <= 0.0 {
            break;
        }
        let wait: f64 = Exp1.sample(rng);
        let dt = wait / bound;
        t += dt;
        if t > horizon {
            break;
        }
        let decay = (-params.beta * dt).exp();
        excite.iter_mut().for_each(|x| *x *= decay);
        let total = base + excite.iter().sum::<f64>();
        let u: f64 = rng.random();
        if u * bound >= total {
            continue;
        }
        let mut pick = rng.random::<f64>() * total;
        let mut kind = k - 1;
        for j in 0..k {
            let lam = params.mu[j] + excite[j];
            if pick < lam {
                kind = j;
                break;
            }
            pick -= lam;
        }
        events.push(Arrival { time: t, kind });
        if events.len() > cap {
            return Err(HawkesError::ExplosionGuard { cap });
        }
        for (row, x) in excite.iter_mut().enumerate() {
            *x += params.alpha(row, kind) * params.beta;
        }
    }
    Ok(EventSequence { events, horizon })
}

/// Exact log-likelihood with the closed-form compensator.
pub fn log_likelihood(params: &HawkesParams, seq: &EventSequence) -> Result<f64, HawkesError> {
    seq.check_types(params.k)?;
    Ok(evaluate(params, seq, Want::Value)?.value)
}

/// `∫₀ᵀ λ_k(t) dt` for every type, in closed form.
pub fn compensator(params: &HawkesParams, seq: &EventSequence) -> Result<Vec<f64>, HawkesError> {
    seq.check_types(params.k)?;
    let k = params.k;
    let horizon = seq.horizon;
    let mut per_source = vec![0.0; k];
    for e in &seq.events {
        per_source[e.kind] += 1.0 - (-params.beta * (horizon - e.time)).exp();
    }
    Ok((0..k)
        .map(|row| {
            params.mu[row] * horizon
                + (0..k)
                    .map(|j| params.alpha(row, j) * per_source[j])
                    .sum::<f64>()
        })
        .collect())
}

#[derive(Clone, Copy, PartialEq)]
enum Want {
    Value,
    Gradient,
    Hessian,
}

struct Evaluation {
    value: f64,
    /// d/dx over the packed vector (μ, α, ln β).
    grad: Vec<f64>,
    /// Exact Hessian block over (μ, α); zero elsewhere.
    hess: DMatrix<f64>,
}

fn evaluate(params: &HawkesParams, seq: &EventSequence, want: Want) -> Result<Evaluation, HawkesError> {
    let k = params.k;
    let beta = params.beta;
    let horizon = seq.horizon;
    let dim = k + k * k + 1;
    let mut value = 0.0;
    let mut grad = vec![0.0; dim];
    let mut dbeta = 0.0;
    let mut hess = DMatrix::zeros(
        if want == Want::Hessian { dim } else { 0 },
        if want == Want::Hessian { dim } else { 0 },
    );
    let mut failure = None;
    let mut state = DecayState::new(k);
    let mut index = 0;
    state.walk(seq, beta, |a, b, ev| {
        let row = ev.kind;
        let mut lam = params.mu[row];
        for j in 0..k {
            lam += params.alpha(row, j) * beta * a[j];
        }
        if !(lam > 0.0) {
            failure.get_or_insert(HawkesError::NonFiniteLikelihood {
                index,
                time: ev.time,
            });
        }
        index += 1;
        value += lam.ln();
        if want == Want::Value {
            return;
        }
        let inv = 1.0 / lam;
        grad[row] += inv;
        let mut dl_dbeta = 0.0;
        for j in 0..k {
            grad[k + row * k + j] += beta * a[j] * inv;
            dl_dbeta += params.alpha(row, j) * (a[j] - beta * b[j]);
        }
        dbeta += dl_dbeta * inv;
        if want == Want::Hessian {
            // λ_row is linear in (μ_row, α_row·) with coefficients v.
            let mut idx = Vec::with_capacity(k + 1);
            let mut v = Vec::with_capacity(k + 1);
            idx.push(row);
            v.push(1.0);
            for j in 0..k {
                idx.push(k + row * k + j);
                v.push(beta * a[j]);
            }
            let w = inv * inv;
            for (p, &ip) in idx.iter().enumerate() {
                for (q, &iq) in idx.iter().enumerate() {
                    hess[(ip, iq)] -= v[p] * v[q] * w;
                }
            }
        }
    });
    if let Some(err) = failure {
        return Err(err);
    }
    // Compensator.
    let mut source = vec![0.0; k];
    let mut source_dbeta = vec![0.0; k];
    for e in &seq.events {
        let age = horizon - e.time;
        let d = (-beta * age).exp();
        source[e.kind] += 1.0 - d;
        source_dbeta[e.kind] += age * d;
    }
    for row in 0..k {
        value -= params.mu[row] * horizon;
        grad[row] -= horizon;
        for j in 0..k {
            let a = params.alpha(row, j);
            value -= a * source[j];
            grad[k + row * k + j] -= source[j];
            dbeta -= a * source_dbeta[j];
        }
    }
    grad[dim - 1] = dbeta * beta;
    Ok(Evaluation { value, grad, hess })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub max_iter: usize,
    /// Stop once the relative log-likelihood gain of an iteration drops below this.
    pub tolerance: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_iter: 5000,
            tolerance: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub params: HawkesParams,
    pub log_likelihood: f64,
    pub initial_log_likelihood: f64,
    pub iterations: usize,
    /// False when the iteration budget ran out first; `params` is then the
    /// best point seen.
    pub converged: bool,
}

/// Default starting point: `μ_k = N_k / T`, uniform `α = 0.1`, `β = 1`.
pub fn default_init(seq: &EventSequence, k: usize) -> HawkesParams {
    let mut x: Vec<f64> = seq
        .counts(k)
        .iter()
        .map(|&n| n as f64 / seq.horizon)
        .collect();
    x.extend(std::iter::repeat_n(0.1, k * k));
    x.push(0.0);
    project(k, &mut x);
    HawkesParams::from_vector(k, &x)
}

/// Clip `μ, α ≥ PARAM_FLOOR` and shrink `α` onto the stationarity margin.
fn project(k: usize, x: &mut [f64]) {
    for v in &mut x[..k + k * k] {
        if !(*v >= PARAM_FLOOR) {
            *v = PARAM_FLOOR;
        }
    }
    let alpha = &mut x[k..k + k * k];
    let rho = spectral_radius(k, alpha);
    if rho >= STATIONARITY_MARGIN {
        let scale = STATIONARITY_MARGIN / rho * (1.0 - 1e-9);
        alpha.iter_mut().for_each(|v| *v = (*v * scale).max(PARAM_FLOOR));
    }
}

/// Maximum-likelihood fit by projected ascent.
///
/// Each step moves along a Newton-preconditioned ascent direction: the
/// `(μ, α)` block of the Hessian is exact, the `ln β` row comes from a
/// central difference of the analytic gradient. Coordinates pinned at the
/// lower bound with an outward gradient are held fixed for the step. A
/// halving line search on the projected point guarantees monotone ascent,
/// so the result never scores below the starting point.
pub fn fit(
    seq: &EventSequence,
    k: usize,
    init: Option<&HawkesParams>,
    options: FitOptions,
) -> Result<FitOutcome, HawkesError> {
    if seq.is_empty() {
        return Err(HawkesError::EmptySequence);
    }
    if k == 0 {
        return Err(HawkesError::InvalidParams("K must be at least 1".into()));
    }
    seq.check_types(k)?;
    let start = match init {
        Some(p) if p.k != k => {
            return Err(HawkesError::InvalidParams(format!(
                "initial parameters have K = {}, expected {k}",
                p.k
            )))
        }
        Some(p) => p.clone(),
        None => default_init(seq, k),
    };
    let initial_log_likelihood = log_likelihood(&start, seq)?;

    let dim = k + k * k + 1;
    let n_lin = k + k * k;
    let mut x = start.to_vector();
    project(k, &mut x);
    let score = |x: &[f64]| -> f64 {
        evaluate(&HawkesParams::from_vector(k, x), seq, Want::Value)
            .map(|e| e.value)
            .unwrap_or(f64::NEG_INFINITY)
    };
    let mut current = score(&x);
    if current < initial_log_likelihood {
        // Projection moved an infeasible start; keep the caller's point.
        x = start.to_vector();
        current = initial_log_likelihood;
    }

    let mut converged = false;
    let mut iterations = 0;
    while iterations < options.max_iter {
        iterations += 1;
        let p = HawkesParams::from_vector(k, &x);
        let eval = evaluate(&p, seq, Want::Hessian)?;
        let mut hess = eval.hess;
        // ln β column by central difference of the gradient.
        let h = 1e-5;
        let mut hi = x.clone();
        let mut lo = x.clone();
        hi[dim - 1] += h;
        lo[dim - 1] -= h;
        let g_hi = evaluate(&HawkesParams::from_vector(k, &hi), seq, Want::Gradient).map(|e| e.grad);
        let g_lo = evaluate(&HawkesParams::from_vector(k, &lo), seq, Want::Gradient).map(|e| e.grad);
        if let (Ok(g_hi), Ok(g_lo)) = (g_hi, g_lo) {
            for i in 0..dim {
                let d = (g_hi[i] - g_lo[i]) / (2.0 * h);
                hess[(i, dim - 1)] = d;
                hess[(dim - 1, i)] = d;
            }
        }
        let grad = eval.grad;

        let free: Vec<usize> = (0..dim)
            .filter(|&i| !(i < n_lin && x[i] <= 2.0 * PARAM_FLOOR && grad[i] <= 0.0))
            .collect();
        let newton = newton_direction(&hess, &grad, &free);

        let mut improved = None;
        for dir in [newton, scaled_gradient(&hess, &grad, &free)] {
            if let Some(found) = line_search(k, &x, &dir, current, &score) {
                improved = Some(found);
                break;
            }
        }
        let Some((next, value)) = improved else {
            converged = true;
            break;
        };
        let gain = (value - current) / current.abs().max(1.0);
        x = next;
        current = value;
        if gain < options.tolerance {
            converged = true;
            break;
        }
    }
    let params = HawkesParams::from_vector(k, &x);
    Ok(FitOutcome {
        params,
        log_likelihood: current,
        initial_log_likelihood,
        iterations,
        converged,
    })
}

/// Solve `(−H_FF) d_F = g_F`, adding diagonal damping until `−H_FF` factors.
fn newton_direction(hess: &DMatrix<f64>, grad: &[f64], free: &[usize]) -> Vec<f64> {
    let n = free.len();
    let mut neg = DMatrix::zeros(n, n);
    let mut g = DVector::zeros(n);
    for (a, &i) in free.iter().enumerate() {
        g[a] = grad[i];
        for (b, &j) in free.iter().enumerate() {
            neg[(a, b)] = -hess[(i, j)];
        }
    }
    let scale = (0..n).map(|i| neg[(i, i)].abs()).fold(0.0, f64::max).max(1e-12);
    let mut damping = 0.0;
    let mut out = vec![0.0; grad.len()];
    for _ in 0..30 {
        let mut m = neg.clone();
        for i in 0..n {
            m[(i, i)] += damping;
        }
        if let Some(ch) = m.cholesky() {
            let d = ch.solve(&g);
            for (a, &i) in free.iter().enumerate() {
                out[i] = d[a];
            }
            return out;
        }
        damping = if damping == 0.0 { scale * 1e-10 } else { damping * 10.0 };
    }
    scaled_gradient(hess, grad, free)
}

fn scaled_gradient(hess: &DMatrix<f64>, grad: &[f64], free: &[usize]) -> Vec<f64> {
    let mut out = vec![0.0; grad.len()];
    for &i in free {
        let curv = hess[(i, i)].abs().max(1.0);
        out[i] = grad[i] / curv;
    }
    out
}

fn line_search<F: Fn(&[f64]) -> f64>(
    k: usize,
    x: &[f64],
    dir: &[f64],
    current: f64,
    score: &F,
) -> Option<(Vec<f64>, f64)> {
    if dir.iter().all(|d| *d == 0.0) || dir.iter().any(|d| !d.is_finite()) {
        return None;
    }
    let mut step = 1.0;
    for _ in 0..60 {
        let mut trial: Vec<f64> = x.iter().zip(dir).map(|(a, d)| a + step * d).collect();
        // keep β within a sane range
        let last = trial.len() - 1;
        trial[last] = trial[last].clamp(-30.0, 30.0);
        project(k, &mut trial);
        let value = score(&trial);
        if value.is_finite() && value > current {
            return Some((trial, value));
        }
        step *= 0.5;
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn one_type(mu: f64, alpha: f64, beta: f64) -> HawkesParams {
        HawkesParams::new(vec![mu], vec![vec![alpha]], beta).unwrap()
    }

    fn seq(times: &[(f64, usize)], horizon: f64) -> EventSequence {
        EventSequence::new(
            times
                .iter()
                .map(|&(time, kind)| Arrival { time, kind })
                .collect(),
            horizon,
        )
        .unwrap()
    }

    #[test]
    fn baseline_only_intensity() {
        let p = one_type(0.5, 0.0, 1.0);
        let empty = seq(&[], 10.0);
        for t in [0.0, 1.0, 9.9] {
            assert_eq!(intensity(&p, &empty, t, 0).unwrap(), 0.5);
        }
        let h = seq(&[(0.5, 0), (2.0, 0)], 10.0);
        assert_eq!(intensity(&p, &h, 3.0, 0).unwrap(), 0.5);
    }

    #[test]
    fn single_event_intensity() {
        let p = one_type(0.5, 0.4, 1.0);
        let h = seq(&[(0.0, 0)], 10.0);
        let lam = intensity(&p, &h, 1.0, 0).unwrap();
        assert!((lam - (0.5 + 0.4 * (-1.0f64).exp())).abs() < 1e-15);
        assert!((lam - 0.64715).abs() < 1e-5);
        // the event itself is not in its own history
        assert_eq!(intensity(&p, &h, 0.0, 0).unwrap(), 0.5);
        assert!(matches!(
            intensity(&p, &h, 1.0, 1),
            Err(HawkesError::TypeOutOfRange { kind: 1, k: 1 })
        ));
    }

    #[test]
    fn constructor_rejects_bad_params() {
        assert!(matches!(
            HawkesParams::new(vec![0.1], vec![vec![1.2]], 1.0),
            Err(HawkesError::NonStationary(_))
        ));
        assert!(HawkesParams::new(vec![-0.1], vec![vec![0.2]], 1.0).is_err());
        assert!(HawkesParams::new(vec![0.1], vec![vec![0.2]], 0.0).is_err());
        assert!(HawkesParams::new(vec![0.1, 0.1], vec![vec![0.2]], 1.0).is_err());
        let p = HawkesParams::new(
            vec![0.1, 0.2],
            vec![vec![0.3, 0.1], vec![0.2, 0.25]],
            1.5,
        )
        .unwrap();
        // 2x2 eigenvalues by hand: (tr ± sqrt(tr² − 4 det)) / 2
        let (tr, det): (f64, f64) = (0.55, 0.3 * 0.25 - 0.1 * 0.2);
        let rho = (tr + (tr * tr - 4.0 * det).sqrt()) / 2.0;
        assert!((p.spectral_radius() - rho).abs() < 1e-12);
    }

    #[test]
    fn sequence_validation() {
        assert!(EventSequence::new(vec![Arrival { time: 2.0, kind: 0 }, Arrival { time: 1.0, kind: 0 }], 5.0).is_err());
        assert!(EventSequence::new(vec![Arrival { time: 6.0, kind: 0 }], 5.0).is_err());
        assert!(EventSequence::new(vec![], 0.0).is_err());
        let s = EventSequence::from_unsorted(
            vec![Arrival { time: 2.0, kind: 1 }, Arrival { time: 1.0, kind: 0 }],
            5.0,
        )
        .unwrap();
        assert_eq!(s.events()[0].time, 1.0);
        assert_eq!(s.type_count(), 2);
        assert!(s.check_types(1).is_err());
    }

    #[test]
    fn empty_sequence_likelihood() {
        let p = one_type(0.5, 0.4, 1.0);
        let ll = log_likelihood(&p, &seq(&[], 10.0)).unwrap();
        assert!((ll - -5.0).abs() < 1e-15);
    }

    #[test]
    fn single_event_likelihood() {
        let p = one_type(0.5, 0.4, 1.0);
        let ll = log_likelihood(&p, &seq(&[(2.0, 0)], 10.0)).unwrap();
        let want = 0.5f64.ln() - 5.0 - 0.4 * (1.0 - (-8.0f64).exp());
        assert!((ll - want).abs() < 1e-14);
    }

    #[test]
    fn zero_intensity_is_reported() {
        let p = HawkesParams::new(vec![0.0, 0.5], vec![vec![0.0; 2]; 2], 1.0).unwrap();
        let err = log_likelihood(&p, &seq(&[(1.0, 1), (2.0, 0)], 10.0)).unwrap_err();
        assert_eq!(err, HawkesError::NonFiniteLikelihood { index: 1, time: 2.0 });
    }

    #[test]
    fn simultaneous_events_do_not_excite_each_other() {
        let p = one_type(0.5, 0.4, 1.0);
        let s = seq(&[(1.0, 0), (1.0, 0), (2.0, 0)], 5.0);
        let lams = event_intensities(&p, &s).unwrap();
        assert_eq!(lams[0], 0.5);
        assert_eq!(lams[1], 0.5);
        let want = 0.5 + 2.0 * 0.4 * (-1.0f64).exp();
        assert!((lams[2] - want).abs() < 1e-14);
    }

    #[test]
    fn zero_baseline_simulates_nothing() {
        let p = HawkesParams::new(vec![0.0, 0.0], vec![vec![0.2, 0.1], vec![0.1, 0.2]], 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(simulate(&p, 1000.0, &mut rng).unwrap().is_empty());
    }

    #[test]
    fn explosion_guard_trips() {
        let p = one_type(5.0, 0.0, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert_eq!(
            simulate_with_cap(&p, 1000.0, &mut rng, 100).unwrap_err(),
            HawkesError::ExplosionGuard { cap: 100 }
        );
    }

    #[test]
    fn simulation_is_seed_deterministic() {
        let p = HawkesParams::new(vec![0.3, 0.2], vec![vec![0.3, 0.1], vec![0.2, 0.25]], 1.5).unwrap();
        let a = simulate(&p, 500.0, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = simulate(&p, 500.0, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
        assert!(a.events().windows(2).all(|w| w[0].time <= w[1].time));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let p = HawkesParams::new(vec![0.3, 0.2], vec![vec![0.3, 0.1], vec![0.2, 0.25]], 1.5).unwrap();
        let s = simulate(&p, 200.0, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let x = p.to_vector();
        let g = evaluate(&p, &s, Want::Gradient).unwrap().grad;
        for i in 0..x.len() {
            let h = 1e-6;
            let mut hi = x.clone();
            let mut lo = x.clone();
            hi[i] += h;
            lo[i] -= h;
            let f = |v: &[f64]| log_likelihood(&HawkesParams::from_vector(2, v), &s).unwrap();
            let fd = (f(&hi) - f(&lo)) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-4 * fd.abs().max(1.0), "coord {i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn fit_improves_on_its_start() {
        let truth = one_type(0.5, 0.4, 1.0);
        let s = simulate(&truth, 2000.0, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        let out = fit(&s, 1, None, FitOptions::default()).unwrap();
        assert!(out.converged);
        assert!(out.log_likelihood >= out.initial_log_likelihood);
        assert!(out.log_likelihood >= log_likelihood(&truth, &s).unwrap());
        assert!((out.log_likelihood - log_likelihood(&out.params, &s).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn fit_rejects_bad_input() {
        let s = seq(&[], 10.0);
        assert_eq!(fit(&s, 1, None, FitOptions::default()).unwrap_err(), HawkesError::EmptySequence);
        let s = seq(&[(1.0, 2)], 10.0);
        assert!(matches!(
            fit(&s, 2, None, FitOptions::default()),
            Err(HawkesError::TypeOutOfRange { kind: 2, k: 2 })
        ));
    }

    #[test]
    fn budget_exhaustion_reports_not_converged() {
        let truth = one_type(0.5, 0.4, 1.0);
        let s = simulate(&truth, 2000.0, &mut ChaCha8Rng::seed_from_u64(12)).unwrap();
        let out = fit(&s, 1, None, FitOptions { max_iter: 1, tolerance: 1e-8 }).unwrap();
        assert!(!out.converged);
        assert!(out.log_likelihood >= out.initial_log_likelihood);
    }

    #[test]
    fn params_file_round_trip() {
        let p = HawkesParams::new(vec![0.3, 0.2], vec![vec![0.3, 0.1], vec![0.2, 0.25]], 1.5).unwrap();
        let text = p.to_json();
        assert!(text.contains("\"K\": 2"));
        assert_eq!(HawkesParams::from_json(&text).unwrap(), p);
        assert!(HawkesParams::from_json(r#"{"K":3,"mu":[0.1],"alpha":[[0.1]],"beta":1}"#).is_err());
    }
}
