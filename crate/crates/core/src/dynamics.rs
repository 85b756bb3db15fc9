//! Impulse responses and AR(4) background dynamics, both on first
//! differences `Δy_t = y_t − y_{t−1}`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hawkes::EventSequence;

/// Relative singular-value cutoff below which a design matrix is singular.
pub const RANK_TOLERANCE: f64 = 1e-10;
pub const DEFAULT_HORIZON: usize = 8;
pub const AR_ORDER: usize = 4;
pub const MIN_AR_LEN: usize = 20;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("invalid series: {0}")]
    InvalidSeries(String),
    #[error("event type {0} never occurs within the sample")]
    InsufficientTreatment(usize),
    #[error("design matrix is rank deficient (horizon {horizon}, condition {condition:.3e})")]
    RankDeficient { horizon: usize, condition: f64 },
    #[error("need more than {needed} usable rows at horizon {horizon}, have {have}")]
    InsufficientRows {
        horizon: usize,
        needed: usize,
        have: usize,
    },
    #[error("series too short for AR(4): need at least {MIN_AR_LEN} differences, got {0}")]
    TooShort(usize),
    #[error("series has no initial level")]
    MissingInitialLevel,
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
}

/// First differences on an evenly spaced time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffSeries {
    times: Vec<f64>,
    dy: Vec<f64>,
    y0: Option<f64>,
}

impl DiffSeries {
    pub fn new(times: Vec<f64>, dy: Vec<f64>, y0: Option<f64>) -> Result<Self, DynamicsError> {
        if times.len() != dy.len() {
            return Err(DynamicsError::InvalidSeries(format!(
                "{} timestamps but {} differences",
                times.len(),
                dy.len()
            )));
        }
        if let Some(bad) = dy.iter().position(|v| !v.is_finite()) {
            return Err(DynamicsError::InvalidSeries(format!(
                "non-finite value at row {bad}"
            )));
        }
        if times.len() >= 2 {
            let step = times[1] - times[0];
            if !(step > 0.0) {
                return Err(DynamicsError::InvalidSeries(
                    "timestamps must be strictly increasing".into(),
                ));
            }
            for (i, w) in times.windows(2).enumerate() {
                let d = w[1] - w[0];
                if !(d > 0.0) {
                    return Err(DynamicsError::InvalidSeries(
                        "timestamps must be strictly increasing".into(),
                    ));
                }
                if (d - step).abs() > 1e-9 * step.max(1.0) {
                    return Err(DynamicsError::InvalidSeries(format!(
                        "timestamps are not evenly spaced at row {}",
                        i + 1
                    )));
                }
            }
        }
        Ok(DiffSeries { times, dy, y0 })
    }

    /// Difference a level series; the first level becomes `y0`.
    pub fn from_levels(times: &[f64], levels: &[f64]) -> Result<Self, DynamicsError> {
        if times.len() != levels.len() || levels.is_empty() {
            return Err(DynamicsError::InvalidSeries(
                "need matching, nonempty timestamps and levels".into(),
            ));
        }
        DiffSeries::new(
            times[1..].to_vec(),
            difference(levels[0], &levels[1..]),
            Some(levels[0]),
        )
    }

    /// Unit-spaced grid `0, 1, …, n−1`.
    pub fn from_steps(dy: Vec<f64>, y0: Option<f64>) -> Self {
        let times = (0..dy.len()).map(|i| i as f64).collect();
        DiffSeries { times, dy, y0 }
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn dy(&self) -> &[f64] {
        &self.dy
    }

    pub fn y0(&self) -> Option<f64> {
        self.y0
    }

    pub fn len(&self) -> usize {
        self.dy.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dy.is_empty()
    }

    /// Grid index of time `t`: the last grid point at or before it.
    pub fn step_of(&self, t: f64) -> Option<usize> {
        let first = *self.times.first()?;
        let spacing = if self.times.len() >= 2 {
            self.times[1] - self.times[0]
        } else {
            1.0
        };
        if t < first {
            return None;
        }
        let idx = ((t - first) / spacing + 1e-9).floor() as usize;
        (idx < self.times.len()).then_some(idx)
    }
}

/// `Δ` of `levels` relative to a starting level `y0`.
pub fn difference(y0: f64, levels: &[f64]) -> Vec<f64> {
    let mut prev = y0;
    levels
        .iter()
        .map(|&y| {
            let d = y - prev;
            prev = y;
            d
        })
        .collect()
}

/// `y_t = y0 + Σ_{s≤t} Δy_s`.
pub fn to_levels(series: &DiffSeries) -> Result<Vec<f64>, DynamicsError> {
    let y0 = series.y0.ok_or(DynamicsError::MissingInitialLevel)?;
    let mut level = y0;
    Ok(series
        .dy
        .iter()
        .map(|d| {
            level += d;
            level
        })
        .collect())
}

/// Horizon-indexed shock coefficients `β_k(h)`, `h = 0..=H`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IrfKernel {
    #[serde(rename = "H")]
    pub horizon: usize,
    /// `K × (H+1)`.
    pub beta: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub se: Option<Vec<Vec<f64>>>,
}

impl IrfKernel {
    pub fn new(beta: Vec<Vec<f64>>) -> Result<Self, DynamicsError> {
        let width = beta.first().map(Vec::len).unwrap_or(0);
        if width == 0 {
            return Err(DynamicsError::InvalidParams(
                "kernel needs at least one type and one horizon".into(),
            ));
        }
        if beta.iter().any(|r| r.len() != width) {
            return Err(DynamicsError::InvalidParams("ragged kernel rows".into()));
        }
        if beta.iter().flatten().any(|v| !v.is_finite()) {
            return Err(DynamicsError::InvalidParams("non-finite kernel entry".into()));
        }
        Ok(IrfKernel {
            horizon: width - 1,
            beta,
            se: None,
        })
    }

    pub fn types(&self) -> usize {
        self.beta.len()
    }

    /// `β_k(h)`, zero past the horizon.
    pub fn coef(&self, k: usize, h: usize) -> f64 {
        if h > self.horizon {
            0.0
        } else {
            self.beta[k][h]
        }
    }

    pub fn validate(&self) -> Result<(), DynamicsError> {
        let again = IrfKernel::new(self.beta.clone())?;
        if again.horizon != self.horizon {
            return Err(DynamicsError::InvalidParams(format!(
                "H = {} but rows have {} entries",
                self.horizon,
                again.horizon + 1
            )));
        }
        Ok(())
    }
}

/// Regressors added alongside the event indicators in each local projection.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlsSpec {
    /// Lags `Δy_{t−1} … Δy_{t−L}`.
    pub dy_lags: usize,
    /// Also include the indicators of every type at the other offsets of the
    /// kernel support, `1{k at t+h−j}` for `j ≠ h`. Without these,
    /// neighbouring events' kernels are omitted regressors and even a
    /// noiseless series does not identify `β` exactly.
    pub kernel_indicators: bool,
    /// Code treatment as the number of same-type events on a step rather
    /// than a 0/1 indicator. Off by default; turn on for data whose
    /// coincident same-type events each add a full kernel.
    pub count_events: bool,
    /// Extra control columns, one value per series row.
    pub exogenous: Vec<Vec<f64>>,
}

impl Default for ControlsSpec {
    fn default() -> Self {
        ControlsSpec {
            dy_lags: AR_ORDER,
            kernel_indicators: true,
            count_events: false,
            exogenous: Vec::new(),
        }
    }
}

/// Result of one least-squares solve.
#[derive(Debug, Clone)]
pub struct OlsFit {
    pub coef: Vec<f64>,
    pub se: Vec<f64>,
    pub rss: f64,
    pub rows: usize,
}

/// OLS through the SVD, with homoskedastic standard errors.
pub fn ols(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<OlsFit, DynamicsError> {
    let (n, p) = x.shape();
    if n <= p {
        return Err(DynamicsError::InsufficientRows {
            horizon: 0,
            needed: p,
            have: n,
        });
    }
    let svd = x.clone().svd(true, true);
    let s = &svd.singular_values;
    let smax = s.max();
    let smin = s.min();
    if !(smin > RANK_TOLERANCE * smax) {
        return Err(DynamicsError::RankDeficient {
            horizon: 0,
            condition: if smin > 0.0 { smax / smin } else { f64::INFINITY },
        });
    }
    let u = svd.u.as_ref().expect("u requested");
    let vt = svd.v_t.as_ref().expect("v_t requested");
    let uty = u.transpose() * y;
    let scaled = DVector::from_iterator(p, uty.iter().zip(s.iter()).map(|(a, b)| a / b));
    let coef = vt.transpose() * scaled;
    let resid = y - x * &coef;
    let rss = resid.norm_squared();
    let s2 = rss / (n - p) as f64;
    // diag((XᵀX)⁻¹) = Σ_j V_ij² / s_j²
    let se = (0..p)
        .map(|i| {
            let var: f64 = (0..p).map(|j| (vt[(j, i)] / s[j]).powi(2)).sum();
            (s2 * var).sqrt()
        })
        .collect();
    Ok(OlsFit {
        coef: coef.iter().copied().collect(),
        se,
        rss,
        rows: n,
    })
}

/// Local projections of `Δy_{t+h}` on type indicators at `t`, `h = 0..=H`.
///
/// Returns the indicator coefficients as `β_k(h)` with homoskedastic
/// standard errors. Events are placed on the grid by [`DiffSeries::step_of`];
/// same-type events sharing a step count once unless
/// [`ControlsSpec::count_events`] is on.
pub fn estimate_irf(
    series: &DiffSeries,
    events: &EventSequence,
    k: usize,
    horizon: usize,
    controls: &ControlsSpec,
) -> Result<IrfKernel, DynamicsError> {
    let n = series.len();
    if k == 0 {
        return Err(DynamicsError::InvalidParams("K must be at least 1".into()));
    }
    if let Some(col) = controls.exogenous.iter().position(|c| c.len() != n) {
        return Err(DynamicsError::InvalidParams(format!(
            "exogenous column {col} has the wrong length"
        )));
    }
    let mut hit = vec![vec![0.0f64; n]; k];
    for e in events.events() {
        if e.kind >= k {
            return Err(DynamicsError::InvalidParams(format!(
                "event type {} out of range for K = {k}",
                e.kind
            )));
        }
        if let Some(step) = series.step_of(e.time) {
            hit[e.kind][step] += 1.0;
        }
    }
    if let Some(missing) = hit.iter().position(|row| !row.iter().any(|&c| c > 0.0)) {
        return Err(DynamicsError::InsufficientTreatment(missing));
    }
    let indicator = |kind: usize, step: usize| {
        let c = hit[kind][step];
        if controls.count_events { c } else { c.min(1.0) }
    };

    let mut beta = vec![vec![0.0; horizon + 1]; k];
    let mut se = vec![vec![0.0; horizon + 1]; k];
    for h in 0..=horizon {
        let first = controls.dy_lags.max(if controls.kernel_indicators {
            horizon - h
        } else {
            0
        });
        let last = n.checked_sub(h + 1);
        let rows: Vec<usize> = match last {
            Some(last) if last >= first => (first..=last).collect(),
            _ => Vec::new(),
        };
        let offsets: Vec<usize> = if controls.kernel_indicators {
            (0..=horizon).filter(|&j| j != h).collect()
        } else {
            Vec::new()
        };
        let cols = k + offsets.len() * k + controls.dy_lags + controls.exogenous.len();
        if rows.len() <= cols {
            return Err(DynamicsError::InsufficientRows {
                horizon: h,
                needed: cols,
                have: rows.len(),
            });
        }
        let mut x = DMatrix::zeros(rows.len(), cols);
        let mut y = DVector::zeros(rows.len());
        for (r, &t) in rows.iter().enumerate() {
            y[r] = series.dy[t + h];
            let mut c = 0;
            for kind in 0..k {
                x[(r, c)] = indicator(kind, t);
                c += 1;
            }
            for &j in &offsets {
                for kind in 0..k {
                    x[(r, c)] = indicator(kind, t + h - j);
                    c += 1;
                }
            }
            for lag in 1..=controls.dy_lags {
                x[(r, c)] = series.dy[t - lag];
                c += 1;
            }
            for col in &controls.exogenous {
                x[(r, c)] = col[t];
                c += 1;
            }
        }
        let fit = ols(&x, &y).map_err(|e| match e {
            DynamicsError::RankDeficient { condition, .. } => {
                DynamicsError::RankDeficient { horizon: h, condition }
            }
            DynamicsError::InsufficientRows { needed, have, .. } => {
                DynamicsError::InsufficientRows { horizon: h, needed, have }
            }
            other => other,
        })?;
        for kind in 0..k {
            beta[kind][h] = fit.coef[kind];
            se[kind][h] = fit.se[kind];
        }
    }
    Ok(IrfKernel {
        horizon,
        beta,
        se: Some(se),
    })
}

/// AR(4) coefficients (most recent lag first) and innovation scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArParams {
    pub phi: [f64; 4],
    pub sigma: f64,
}

impl ArParams {
    pub fn new(phi: [f64; 4], sigma: f64) -> Result<Self, DynamicsError> {
        if phi.iter().any(|v| !v.is_finite()) || !(sigma.is_finite() && sigma >= 0.0) {
            return Err(DynamicsError::InvalidParams(
                "phi must be finite and sigma nonnegative".into(),
            ));
        }
        Ok(ArParams { phi, sigma })
    }

    pub fn zero() -> Self {
        ArParams {
            phi: [0.0; 4],
            sigma: 0.0,
        }
    }

    /// Spectral radius of the companion matrix.
    pub fn companion_radius(&self) -> f64 {
        let mut m = DMatrix::zeros(4, 4);
        for (j, p) in self.phi.iter().enumerate() {
            m[(0, j)] = *p;
        }
        for i in 1..4 {
            m[(i, i - 1)] = 1.0;
        }
        crate::linalg::spectral_radius(&m)
    }

    pub fn is_stationary(&self) -> bool {
        self.companion_radius() < 1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArWarning {
    /// Constant input; `φ = 0`, `σ = 0` returned.
    DegenerateSeries,
    NonStationary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArFit {
    pub params: ArParams,
    pub se: [f64; 4],
    pub warnings: Vec<ArWarning>,
}

/// OLS of `Δy_t` on its four lags, no intercept. `σ` uses the residual sum
/// of squares over `n − 5`, with `n` the number of differences.
pub fn fit_ar(series: &DiffSeries) -> Result<ArFit, DynamicsError> {
    let dy = &series.dy;
    let n = dy.len();
    if n < MIN_AR_LEN {
        return Err(DynamicsError::TooShort(n));
    }
    if dy.iter().all(|&v| v == dy[0]) {
        return Ok(ArFit {
            params: ArParams::zero(),
            se: [0.0; 4],
            warnings: vec![ArWarning::DegenerateSeries],
        });
    }
    let rows = n - AR_ORDER;
    let x = DMatrix::from_fn(rows, AR_ORDER, |r, c| dy[r + AR_ORDER - 1 - c]);
    let y = DVector::from_iterator(rows, dy[AR_ORDER..].iter().copied());
    let fit = ols(&x, &y)?;
    let phi = [fit.coef[0], fit.coef[1], fit.coef[2], fit.coef[3]];
    let sigma = (fit.rss / (n - 5) as f64).sqrt();
    let params = ArParams { phi, sigma };
    let mut warnings = Vec::new();
    if !params.is_stationary() {
        warnings.push(ArWarning::NonStationary);
    }
    Ok(ArFit {
        params,
        se: [fit.se[0], fit.se[1], fit.se[2], fit.se[3]],
        warnings,
    })
}

/// One step of `Δy_t = φ·(Δy_{t−1}, …, Δy_{t−4}) + shock + innovation`.
/// `last4[0]` is the most recent difference.
pub fn ar_step(params: &ArParams, last4: [f64; 4], shock: f64, innovation: f64) -> f64 {
    params
        .phi
        .iter()
        .zip(last4)
        .map(|(p, v)| p * v)
        .sum::<f64>()
        + shock
        + innovation
}
