//! Synthetic paired samples: Hawkes arrivals carry AAOD marks and add
//! impulse-response shocks to an AR(4) process on first differences.
//!
//! For a configuration with kernel `β_k(h)` (zero past `H`), the simulated
//! differences are
//!
//! ```text
//! Δy_t = Σ_{i=1..4} φ_i Δy_{t−i} + Σ_k Σ_{s_j^k ≤ t} β_k(t − s_j^k) + σ ε_t
//! ```
//!
//! where `s_j^k` are arrival times floored onto integer steps. Levels are the
//! running sum from `y0`, and the level path is cut into windows of `m`
//! values, each paired with the events whose step falls inside it.

use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dynamics::{self, ar_step, ArParams, DiffSeries, DynamicsError, IrfKernel};
use crate::evaluator::{Calendar, EvalError};
use crate::hawkes::{self, HawkesError, HawkesParams};
use crate::vocab::{
    dedup_event_set, validate_event, AaodEvent, EventSet, SlotKind, Token, Vocabulary,
};

/// Redraws allowed for a mark tuple that breaks a composition rule.
pub const MARK_RETRIES: usize = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeneratorError {
    #[error(transparent)]
    Hawkes(#[from] HawkesError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Calendar(#[from] EvalError),
    #[error("no mark table for event type {0}")]
    MarkTableGap(usize),
    #[error("mark table for type {kind} uses {slot} token {token:?} missing from the vocabulary")]
    UnknownMarkToken {
        kind: usize,
        slot: SlotKind,
        token: String,
    },
    #[error("mark table for type {kind}: {reason}")]
    BadMarkTable { kind: usize, reason: String },
    #[error("type {kind}: no rule-compliant mark tuple after {MARK_RETRIES} draws")]
    MarkRejection { kind: usize },
    #[error("forced event at step {step} outside [0, {steps})")]
    StepOutOfRange { step: usize, steps: usize },
    #[error("forced event type {kind} out of range for K = {k}")]
    TypeOutOfRange { kind: usize, k: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

/// Weighted token choices for one slot.
pub type SlotTable = Vec<(Token, f64)>;

/// Independent categorical distributions over each slot for one event type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkTable {
    pub actor: SlotTable,
    pub action: SlotTable,
    pub object: SlotTable,
    pub direction: SlotTable,
}

impl MarkTable {
    fn slot(&self, kind: SlotKind) -> &SlotTable {
        match kind {
            SlotKind::Actor => &self.actor,
            SlotKind::Action => &self.action,
            SlotKind::Object => &self.object,
            SlotKind::Direction => &self.direction,
        }
    }

    fn draw(&self, kind: SlotKind, rng: &mut ChaCha8Rng) -> Token {
        use rand::RngExt;
        let table = self.slot(kind);
        let total: f64 = table.iter().map(|(_, w)| w).sum();
        let mut u = rng.random::<f64>() * total;
        for (tok, w) in table {
            if u < *w {
                return tok.clone();
            }
            u -= w;
        }
        table.last().expect("nonempty table").0.clone()
    }
}

/// Full generative configuration, generic over how the vocabulary is held:
/// inline ([`GeneratorConfig`]) or as a file reference ([`GeneratorConfigFile`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec<V> {
    pub vocabulary: V,
    pub hawkes: HawkesParams,
    pub irf: IrfKernel,
    pub ar: ArParams,
    /// One table per event type, indexed by type.
    pub mark_tables: Vec<MarkTable>,
    /// Number of simulated steps `T`.
    pub steps: usize,
    pub y0: f64,
    /// Window length `m`.
    pub window: usize,
    /// Offset between consecutive window starts; defaults to `window`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stride: Option<usize>,
    pub seed: u64,
    #[serde(default)]
    pub calendar: Calendar,
}

pub type GeneratorConfig = GeneratorSpec<Vocabulary>;
pub type GeneratorConfigFile = GeneratorSpec<PathBuf>;

impl GeneratorConfigFile {
    pub fn resolve(self, vocabulary: Vocabulary) -> GeneratorConfig {
        GeneratorSpec {
            vocabulary,
            hawkes: self.hawkes,
            irf: self.irf,
            ar: self.ar,
            mark_tables: self.mark_tables,
            steps: self.steps,
            y0: self.y0,
            window: self.window,
            stride: self.stride,
            seed: self.seed,
            calendar: self.calendar,
        }
    }
}

impl GeneratorConfig {
    pub fn stride(&self) -> usize {
        self.stride.unwrap_or(self.window)
    }

    /// Leading steps never covered by a window.
    pub fn warmup(&self) -> usize {
        self.irf.horizon.max(dynamics::AR_ORDER)
    }

    pub fn validate(&self) -> Result<(), GeneratorError> {
        let k = self.hawkes.k();
        if self.window == 0 || self.stride() == 0 {
            return Err(GeneratorError::InvalidConfig(
                "window and stride must be at least 1".into(),
            ));
        }
        if self.steps == 0 {
            return Err(GeneratorError::InvalidConfig("steps must be at least 1".into()));
        }
        if !self.y0.is_finite() {
            return Err(GeneratorError::InvalidConfig("y0 must be finite".into()));
        }
        self.irf.validate()?;
        if self.irf.types() != k {
            return Err(GeneratorError::InvalidConfig(format!(
                "kernel has {} types but the Hawkes process has {k}",
                self.irf.types()
            )));
        }
        ArParams::new(self.ar.phi, self.ar.sigma)?;
        Calendar::new(&self.calendar.origin, self.calendar.days_per_unit)?;
        if self.mark_tables.len() < k {
            return Err(GeneratorError::MarkTableGap(self.mark_tables.len()));
        }
        for (kind, table) in self.mark_tables.iter().enumerate() {
            for slot in SlotKind::ALL {
                let entries = table.slot(slot);
                if entries.is_empty() {
                    return Err(GeneratorError::BadMarkTable {
                        kind,
                        reason: format!("{slot} table is empty"),
                    });
                }
                if entries.iter().any(|(_, w)| !(w.is_finite() && *w >= 0.0))
                    || entries.iter().map(|(_, w)| w).sum::<f64>() <= 0.0
                {
                    return Err(GeneratorError::BadMarkTable {
                        kind,
                        reason: format!("{slot} weights must be nonnegative with a positive sum"),
                    });
                }
                if let Some((tok, _)) = entries.iter().find(|(t, _)| !self.vocabulary.contains(slot, t)) {
                    return Err(GeneratorError::UnknownMarkToken {
                        kind,
                        slot,
                        token: tok.to_string(),
                    });
                }
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, vocabulary inlined.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// One numeric window with its gold events.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedSample {
    pub id: usize,
    /// `m` consecutive levels.
    pub window: Vec<f64>,
    pub window_end: f64,
    pub month: String,
    pub gold: EventSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
    pub steps: usize,
    pub warmup: usize,
    pub window: usize,
    pub stride: usize,
    pub arrivals: usize,
    /// How continuous arrival times map onto steps.
    pub step_rule: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub samples: Vec<PairedSample>,
    pub provenance: Provenance,
    /// Full difference path `Δy_0 … Δy_{T−1}`.
    pub dy: Vec<f64>,
    /// Levels after each step.
    pub levels: Vec<f64>,
    /// Every marked arrival, warm-up included, with time set to its step.
    pub events: Vec<AaodEvent>,
    pub y0: f64,
}

impl SyntheticDataset {
    pub fn diff_series(&self) -> DiffSeries {
        DiffSeries::from_steps(self.dy.clone(), Some(self.y0))
    }

    /// Arrivals as a Hawkes sequence on the step grid.
    pub fn arrival_sequence(&self) -> hawkes::EventSequence {
        let arrivals = self
            .events
            .iter()
            .map(|e| hawkes::Arrival {
                time: e.time,
                kind: e.type_index,
            })
            .collect();
        hawkes::EventSequence::new(arrivals, self.dy.len().max(1) as f64)
            .expect("generated arrivals lie on the grid")
    }
}

const HAWKES_STREAM: u64 = 0;
const MARK_STREAM: u64 = 1;
const NOISE_STREAM: u64 = 2;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Simulate arrivals from the configured Hawkes process, then build the dataset.
pub fn generate(config: &GeneratorConfig) -> Result<SyntheticDataset, GeneratorError> {
    config.validate()?;
    let mut rng = stream(config.seed, HAWKES_STREAM);
    let seq = hawkes::simulate(&config.hawkes, config.steps as f64, &mut rng)?;
    let arrivals: Vec<(usize, usize)> = seq
        .events()
        .iter()
        .map(|a| (a.time.floor() as usize, a.kind))
        .filter(|&(step, _)| step < config.steps)
        .collect();
    build(config, &arrivals)
}

/// Same pipeline as [`generate`] with a caller-supplied `(step, type)` list.
pub fn force_events(
    config: &GeneratorConfig,
    events: &[(usize, usize)],
) -> Result<SyntheticDataset, GeneratorError> {
    config.validate()?;
    let k = config.hawkes.k();
    for &(step, kind) in events {
        if step >= config.steps {
            return Err(GeneratorError::StepOutOfRange {
                step,
                steps: config.steps,
            });
        }
        if kind >= k {
            return Err(GeneratorError::TypeOutOfRange { kind, k });
        }
    }
    let mut sorted = events.to_vec();
    sorted.sort_by_key(|&(step, _)| step);
    build(config, &sorted)
}

fn draw_marks(
    config: &GeneratorConfig,
    arrivals: &[(usize, usize)],
) -> Result<Vec<AaodEvent>, GeneratorError> {
    let mut rng = stream(config.seed, MARK_STREAM);
    let mut out = Vec::with_capacity(arrivals.len());
    for &(step, kind) in arrivals {
        let table = &config.mark_tables[kind];
        let mut accepted = None;
        for _ in 0..MARK_RETRIES {
            let e = AaodEvent {
                actor: table.draw(SlotKind::Actor, &mut rng),
                action: table.draw(SlotKind::Action, &mut rng),
                object: table.draw(SlotKind::Object, &mut rng),
                direction: table.draw(SlotKind::Direction, &mut rng),
                time: step as f64,
                type_index: kind,
            };
            if validate_event(&e, &config.vocabulary).is_accept() {
                accepted = Some(e);
                break;
            }
        }
        out.push(accepted.ok_or(GeneratorError::MarkRejection { kind })?);
    }
    Ok(out)
}

fn build(
    config: &GeneratorConfig,
    arrivals: &[(usize, usize)],
) -> Result<SyntheticDataset, GeneratorError> {
    let steps = config.steps;
    let events = draw_marks(config, arrivals)?;

    let mut shock = vec![0.0; steps];
    for &(step, kind) in arrivals {
        for h in 0..=config.irf.horizon {
            if step + h >= steps {
                break;
            }
            shock[step + h] += config.irf.coef(kind, h);
        }
    }

    let mut noise = stream(config.seed, NOISE_STREAM);
    let mut dy = Vec::with_capacity(steps);
    let mut last = [0.0; 4];
    for s in shock.iter() {
        let z: f64 = StandardNormal.sample(&mut noise);
        let d = ar_step(&config.ar, last, *s, config.ar.sigma * z);
        dy.push(d);
        last = [d, last[0], last[1], last[2]];
    }
    let levels = dynamics::to_levels(&DiffSeries::from_steps(dy.clone(), Some(config.y0)))?;

    let m = config.window;
    let mut samples = Vec::new();
    let mut start = config.warmup();
    while start + m <= steps {
        let end = start + m - 1;
        let inside: Vec<AaodEvent> = events
            .iter()
            .filter(|e| {
                let s = e.time as usize;
                s >= start && s <= end
            })
            .cloned()
            .collect();
        let id = samples.len();
        let gold = dedup_event_set(&EventSet::new(id as i64, inside));
        samples.push(PairedSample {
            id,
            window: levels[start..=end].to_vec(),
            window_end: end as f64,
            month: config.calendar.month_key(end as f64)?,
            gold,
        });
        start += config.stride();
    }

    let provenance = Provenance {
        config_hash: config.hash(),
        seed: config.seed,
        steps,
        warmup: config.warmup(),
        window: m,
        stride: config.stride(),
        arrivals: arrivals.len(),
        step_rule: "floor".into(),
    };
    Ok(SyntheticDataset {
        samples,
        provenance,
        dy,
        levels,
        events,
        y0: config.y0,
    })
}
