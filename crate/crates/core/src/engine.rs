//! Particle-level dynamics.
//!
//! A [`Landscape`] holds the ranked N-tuple in an [`OrderStatTree`]. One step
//! samples K ranks from the selection model, removes those elements (all
//! ranks refer to the pre-step snapshot), and inserts K fresh draws from the
//! replacement law. Randomness is consumed in a fixed order: ranks first,
//! then the K draws.

use std::cmp::Ordering;
use std::f64::consts::FRAC_PI_4;
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ostree::OrderStatTree;
use crate::rng::SimRng;
use crate::selection::{ModelDoc, SelectionModel};

/// Totally ordered wrapper for a finite fitness value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Value(pub f64);

impl Eq for Value {}

impl PartialOrd for Value {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Value {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Initial configuration.
#[derive(Debug, Clone, PartialEq)]
pub enum InitSpec {
    IidUniform,
    AllOnes,
    Explicit(Vec<f64>),
    /// N independent draws from a replacement law.
    IidFrom(ReplacementLaw),
    /// N independent draws from `U(s, 1]`, so that `count_at(s) = 0`.
    UniformAbove(f64),
}

/// Invertible transformed CDF for non-uniform replacements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TransformedCdf {
    /// `rho(x) = x^exponent` on `[0, 1]`.
    Power { exponent: f64 },
    /// Law of the Euclidean norm of a uniform point in the unit square:
    /// `pi x^2 / 4` on `[0, 1]`, then `x^2 (pi/4 - acos(1/x)) + sqrt(x^2 - 1)`
    /// up to `sqrt(2)`.
    PlanarNorm,
    /// Piecewise-linear CDF through `(x, rho(x))` knots.
    Tabulated { knots: Vec<(f64, f64)> },
}

impl TransformedCdf {
    pub fn cdf(&self, x: f64) -> f64 {
        match self {
            TransformedCdf::Power { exponent } => x.clamp(0.0, 1.0).powf(*exponent),
            TransformedCdf::PlanarNorm => planar_norm_cdf(x),
            TransformedCdf::Tabulated { knots } => {
                let first = knots[0];
                let last = knots[knots.len() - 1];
                if x <= first.0 {
                    return 0.0;
                }
                if x >= last.0 {
                    return 1.0;
                }
                let i = knots.partition_point(|k| k.0 <= x);
                let (x0, p0) = knots[i - 1];
                let (x1, p1) = knots[i];
                p0 + (p1 - p0) * (x - x0) / (x1 - x0)
            }
        }
    }

    pub fn inverse(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        match self {
            TransformedCdf::Power { exponent } => u.powf(1.0 / exponent),
            TransformedCdf::PlanarNorm => planar_norm_inverse(u),
            TransformedCdf::Tabulated { knots } => {
                let i = knots.partition_point(|k| k.1 <= u).clamp(1, knots.len() - 1);
                let (x0, p0) = knots[i - 1];
                let (x1, p1) = knots[i];
                x0 + (x1 - x0) * (u - p0) / (p1 - p0)
            }
        }
    }

    pub fn support(&self) -> (f64, f64) {
        match self {
            TransformedCdf::Power { .. } => (0.0, 1.0),
            TransformedCdf::PlanarNorm => (0.0, std::f64::consts::SQRT_2),
            TransformedCdf::Tabulated { knots } => (knots[0].0, knots[knots.len() - 1].0),
        }
    }
}

fn planar_norm_cdf(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else if x <= 1.0 {
        FRAC_PI_4 * x * x
    } else if x < std::f64::consts::SQRT_2 {
        x * x * (FRAC_PI_4 - (1.0 / x).acos()) + (x * x - 1.0).sqrt()
    } else {
        1.0
    }
}

fn planar_norm_inverse(u: f64) -> f64 {
    if u <= FRAC_PI_4 {
        return (u / FRAC_PI_4).sqrt();
    }
    let (mut lo, mut hi) = (1.0f64, std::f64::consts::SQRT_2);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if planar_norm_cdf(mid) < u {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Law of the fresh values inserted at each step.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum ReplacementLaw {
    #[default]
    Uniform01,
    Transformed { rho: TransformedCdf },
}

impl ReplacementLaw {
    pub fn power(exponent: f64) -> Result<Self> {
        if !exponent.is_finite() || exponent <= 0.0 {
            return Err(Error::NonInvertibleCdf(format!(
                "power law needs a positive finite exponent, got {exponent}"
            )));
        }
        Ok(Self::Transformed {
            rho: TransformedCdf::Power { exponent },
        })
    }

    pub fn planar_norm() -> Self {
        Self::Transformed {
            rho: TransformedCdf::PlanarNorm,
        }
    }

    /// Piecewise-linear CDF; knots must be strictly increasing in both
    /// coordinates, starting at probability 0 and ending at 1.
    pub fn tabulated(knots: Vec<(f64, f64)>) -> Result<Self> {
        if knots.len() < 2 {
            return Err(Error::NonInvertibleCdf("need at least two knots".into()));
        }
        if knots.iter().any(|(x, p)| !x.is_finite() || !p.is_finite()) {
            return Err(Error::NonInvertibleCdf("knots must be finite".into()));
        }
        if knots[0].1 != 0.0 || knots[knots.len() - 1].1 != 1.0 {
            return Err(Error::NonInvertibleCdf(
                "tabulated cdf must run from 0 to 1".into(),
            ));
        }
        if knots.windows(2).any(|w| w[1].0 <= w[0].0 || w[1].1 <= w[0].1) {
            return Err(Error::NonInvertibleCdf(
                "tabulated cdf must be strictly increasing".into(),
            ));
        }
        Ok(Self::Transformed {
            rho: TransformedCdf::Tabulated { knots },
        })
    }

    /// Maps a uniform draw to the law: identity, or `rho^{-1}(u)`.
    pub fn transform(&self, u: f64) -> f64 {
        match self {
            ReplacementLaw::Uniform01 => u,
            ReplacementLaw::Transformed { rho } => rho.inverse(u),
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match self {
            ReplacementLaw::Uniform01 => x.clamp(0.0, 1.0),
            ReplacementLaw::Transformed { rho } => rho.cdf(x),
        }
    }

    pub fn support(&self) -> (f64, f64) {
        match self {
            ReplacementLaw::Uniform01 => (0.0, 1.0),
            ReplacementLaw::Transformed { rho } => rho.support(),
        }
    }
}

/// See [`ReplacementLaw::transform`].
pub fn transform_replacement(law: &ReplacementLaw, u: f64) -> f64 {
    law.transform(u)
}

/// The ranked state `X_t`.
#[derive(Debug, Clone)]
pub struct Landscape {
    values: OrderStatTree<Value>,
    time: u64,
    ranks_buf: Vec<usize>,
    draws_buf: Vec<f64>,
    removed_buf: Vec<f64>,
}

impl Landscape {
    pub fn init(n_points: usize, init: &InitSpec, rng: &mut SimRng) -> Result<Self> {
        if n_points == 0 {
            return Err(Error::BadInitialData("N must be positive".into()));
        }
        let values: Vec<f64> = match init {
            InitSpec::IidUniform => (0..n_points).map(|_| rng.uniform()).collect(),
            InitSpec::AllOnes => vec![1.0; n_points],
            InitSpec::Explicit(v) => {
                if v.len() != n_points {
                    return Err(Error::BadInitialData(format!(
                        "explicit init has {} values, expected {n_points}",
                        v.len()
                    )));
                }
                if let Some(bad) = v.iter().find(|x| !(0.0..=1.0).contains(*x)) {
                    return Err(Error::BadInitialData(format!(
                        "value {bad} outside [0, 1]"
                    )));
                }
                v.clone()
            }
            InitSpec::IidFrom(law) => (0..n_points).map(|_| law.transform(rng.uniform())).collect(),
            InitSpec::UniformAbove(s) => {
                if !(0.0..1.0).contains(s) {
                    return Err(Error::BadInitialData(format!("level {s} outside [0, 1)")));
                }
                // 1 - U lies in (0, 1], so s + (1 - s)(1 - U) lies in (s, 1]
                (0..n_points)
                    .map(|_| s + (1.0 - s) * (1.0 - rng.uniform()))
                    .collect()
            }
        };
        Ok(Self::from_values(&values))
    }

    fn from_values(values: &[f64]) -> Self {
        let mut tree = OrderStatTree::with_capacity(values.len());
        for &v in values {
            tree.insert(Value(v));
        }
        Self {
            values: tree,
            time: 0,
            ranks_buf: Vec::new(),
            draws_buf: Vec::new(),
            removed_buf: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn time(&self) -> u64 {
        self.time
    }

    /// Ranked values `X^(1) <= ... <= X^(N)`.
    pub fn values(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.0).collect()
    }

    /// `#{i : X^(i) <= s}`.
    pub fn count_at(&self, s: f64) -> usize {
        self.values.count_le(&Value(s))
    }

    /// `X^(n)`, one-based.
    pub fn order_stat(&self, n: usize) -> Result<f64> {
        if n == 0 || n > self.len() {
            return Err(Error::RankOutOfRange {
                rank: n,
                n: self.len(),
            });
        }
        Ok(self.values.get(n - 1).map(|v| v.0).expect("rank checked"))
    }

    /// Value at a uniformly random rank.
    pub fn typical_point(&self, rng: &mut SimRng) -> f64 {
        let i = rng.below(self.len());
        self.values.get(i).map(|v| v.0).expect("nonempty")
    }

    /// Replaces the elements at the given distinct pre-step ranks by `draws`.
    /// Removed values are appended to `removed` in descending rank order.
    pub fn apply_replacement(
        &mut self,
        ranks: &[usize],
        draws: &[f64],
        removed: &mut Vec<f64>,
    ) -> Result<()> {
        let n = self.len();
        if ranks.len() != draws.len() {
            return Err(Error::InvalidParameter(format!(
                "{} ranks but {} draws",
                ranks.len(),
                draws.len()
            )));
        }
        let mut sorted: Vec<usize> = ranks.to_vec();
        sorted.sort_unstable_by(|a, b| b.cmp(a));
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidParameter("ranks must be distinct".into()));
        }
        if let Some(&r) = sorted.iter().find(|&&r| r == 0 || r > n) {
            return Err(Error::RankOutOfRange { rank: r, n });
        }
        self.remove_and_insert(&sorted, draws, removed);
        Ok(())
    }

    /// `ranks` sorted descending and valid.
    fn remove_and_insert(&mut self, ranks_desc: &[usize], draws: &[f64], removed: &mut Vec<f64>) {
        // descending order keeps the remaining pre-step ranks valid
        for &r in ranks_desc {
            let v = self.values.remove_at(r - 1).expect("rank in range");
            removed.push(v.0);
        }
        for &d in draws {
            self.values.insert(Value(d));
        }
        self.time += 1;
    }

    /// One replacement step.
    pub fn step(&mut self, model: &SelectionModel, law: &ReplacementLaw, rng: &mut SimRng) {
        let mut ranks = std::mem::take(&mut self.ranks_buf);
        let mut draws = std::mem::take(&mut self.draws_buf);
        let mut removed = std::mem::take(&mut self.removed_buf);
        model.sample_ranks_into(rng, &mut ranks);
        draws.clear();
        draws.extend((0..ranks.len()).map(|_| law.transform(rng.uniform())));
        removed.clear();
        ranks.sort_unstable_by(|a, b| b.cmp(a));
        self.remove_and_insert(&ranks, &draws, &mut removed);
        self.ranks_buf = ranks;
        self.draws_buf = draws;
        self.removed_buf = removed;
    }

    /// Like [`step`](Self::step) but returns the draws and removed values.
    pub fn step_traced(
        &mut self,
        model: &SelectionModel,
        law: &ReplacementLaw,
        rng: &mut SimRng,
    ) -> StepDelta {
        self.step(model, law, rng);
        StepDelta {
            draws: self.draws_buf.clone(),
            removed: self.removed_buf.clone(),
        }
    }
}

/// Values exchanged in one step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepDelta {
    pub draws: Vec<f64>,
    pub removed: Vec<f64>,
}

/// A recorded quantity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Observable {
    CountAt(f64),
    OrderStat(usize),
    TypicalPoint,
}

impl fmt::Display for Observable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Observable::CountAt(s) => write!(f, "count_at({s})"),
            Observable::OrderStat(n) => write!(f, "order_stat({n})"),
            Observable::TypicalPoint => f.write_str("typical_point"),
        }
    }
}

impl std::str::FromStr for Observable {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let inner = |prefix: &str| {
            s.strip_prefix(prefix)
                .and_then(|r| r.strip_prefix('('))
                .and_then(|r| r.strip_suffix(')'))
        };
        if s == "typical_point" {
            Ok(Observable::TypicalPoint)
        } else if let Some(v) = inner("count_at") {
            v.parse()
                .map(Observable::CountAt)
                .map_err(|_| Error::Config(format!("bad observable `{s}`")))
        } else if let Some(v) = inner("order_stat") {
            v.parse()
                .map(Observable::OrderStat)
                .map_err(|_| Error::Config(format!("bad observable `{s}`")))
        } else {
            Err(Error::Config(format!("unknown observable `{s}`")))
        }
    }
}

impl Serialize for Observable {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Observable {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Which observables to record, and when: after every step `t` with
/// `t > burn_in` and `(t - burn_in) % every == 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub burn_in: u64,
    pub every: u64,
    pub observables: Vec<Observable>,
}

impl Schedule {
    pub fn new(burn_in: u64, every: u64, observables: Vec<Observable>) -> Self {
        Self {
            burn_in,
            every: every.max(1),
            observables,
        }
    }

    /// Default burn-in of `10 N` steps.
    pub fn default_burn_in(n_points: usize) -> u64 {
        10 * n_points as u64
    }

    pub fn is_recorded(&self, t: u64) -> bool {
        t > self.burn_in && (t - self.burn_in).is_multiple_of(self.every)
    }

    /// Number of recording times in `1..=steps`.
    pub fn len_for(&self, steps: u64) -> u64 {
        steps.saturating_sub(self.burn_in) / self.every
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Record {
    pub step: u64,
    pub observable: usize,
    pub value: f64,
}

/// Output of [`run`].
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub seed: u64,
    pub model: ModelDoc,
    pub law: ReplacementLaw,
    pub schedule: Schedule,
    pub step_count: u64,
    pub records: Vec<Record>,
}

#[derive(Serialize, Deserialize)]
struct RecordDoc {
    step: u64,
    observable: Observable,
    value: f64,
}

#[derive(Serialize, Deserialize)]
struct TraceDoc {
    seed: u64,
    model: ModelDoc,
    law: ReplacementLaw,
    schedule: Schedule,
    step_count: u64,
    records: Vec<RecordDoc>,
}

impl Trace {
    /// Recorded values of one observable, in step order.
    pub fn values(&self, observable: &Observable) -> Vec<f64> {
        match self.schedule.observables.iter().position(|o| o == observable) {
            Some(idx) => self
                .records
                .iter()
                .filter(|r| r.observable == idx)
                .map(|r| r.value)
                .collect(),
            None => Vec::new(),
        }
    }

    /// Concatenates shards recorded under the same schedule.
    pub fn merge(mut self, other: Trace) -> Result<Trace> {
        if self.schedule.observables != other.schedule.observables {
            return Err(Error::InvalidParameter(
                "cannot merge traces with different observables".into(),
            ));
        }
        self.step_count += other.step_count;
        self.records.extend(other.records);
        Ok(self)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(w);
        wr.write_record(["step", "observable", "value"])?;
        let names: Vec<String> = self.schedule.observables.iter().map(|o| o.to_string()).collect();
        for r in &self.records {
            wr.write_record([
                r.step.to_string(),
                names[r.observable].clone(),
                r.value.to_string(),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = TraceDoc {
            seed: self.seed,
            model: self.model.clone(),
            law: self.law.clone(),
            schedule: self.schedule.clone(),
            step_count: self.step_count,
            records: self
                .records
                .iter()
                .map(|r| RecordDoc {
                    step: r.step,
                    observable: self.schedule.observables[r.observable],
                    value: r.value,
                })
                .collect(),
        };
        Ok(serde_json::to_string(&doc)?)
    }

    pub fn from_json(s: &str) -> Result<Trace> {
        let doc: TraceDoc = serde_json::from_str(s)?;
        let mut records = Vec::with_capacity(doc.records.len());
        for r in doc.records {
            let idx = doc
                .schedule
                .observables
                .iter()
                .position(|o| *o == r.observable)
                .ok_or_else(|| Error::Config(format!("record for unscheduled {}", r.observable)))?;
            records.push(Record {
                step: r.step,
                observable: idx,
                value: r.value,
            });
        }
        Ok(Trace {
            seed: doc.seed,
            model: doc.model,
            law: doc.law,
            schedule: doc.schedule,
            step_count: doc.step_count,
            records,
        })
    }
}

fn observe(landscape: &Landscape, obs: &Observable, rng: &mut SimRng) -> f64 {
    match obs {
        Observable::CountAt(s) => landscape.count_at(*s) as f64,
        Observable::OrderStat(n) => landscape
            .order_stat(*n)
            .unwrap_or(f64::NAN),
        Observable::TypicalPoint => landscape.typical_point(rng),
    }
}

/// Advances `landscape` by `steps` and records the scheduled observables.
/// Typical-point observations draw their rank from `rng` after the step.
pub fn run(
    landscape: &mut Landscape,
    model: &SelectionModel,
    law: &ReplacementLaw,
    steps: u64,
    schedule: &Schedule,
    rng: &mut SimRng,
) -> Result<Trace> {
    if model.n_points() != landscape.len() {
        return Err(Error::InvalidParameter(format!(
            "model has N = {} but landscape has {} points",
            model.n_points(),
            landscape.len()
        )));
    }
    for o in &schedule.observables {
        if let Observable::OrderStat(n) = o {
            if *n == 0 || *n > landscape.len() {
                return Err(Error::RankOutOfRange {
                    rank: *n,
                    n: landscape.len(),
                });
            }
        }
    }
    let cap = schedule.len_for(steps) as usize * schedule.observables.len();
    let mut records = Vec::with_capacity(cap);
    for t in 1..=steps {
        landscape.step(model, law, rng);
        if schedule.is_recorded(t) {
            for (idx, o) in schedule.observables.iter().enumerate() {
                records.push(Record {
                    step: t,
                    observable: idx,
                    value: observe(landscape, o, rng),
                });
            }
        }
    }
    Ok(Trace {
        seed: rng.seed(),
        model: model.to_doc(),
        law: law.clone(),
        schedule: schedule.clone(),
        step_count: steps,
        records,
    })
}

/// Runs `steps` steps and returns the time average of `count_at(s)` over
/// the steps after `burn_in`, without storing a trace.
pub fn time_averaged_count(
    landscape: &mut Landscape,
    model: &SelectionModel,
    law: &ReplacementLaw,
    s: f64,
    burn_in: u64,
    steps: u64,
    rng: &mut SimRng,
) -> f64 {
    let mut acc = 0u64;
    let mut n = 0u64;
    for t in 1..=steps {
        landscape.step(model, law, rng);
        if t > burn_in {
            acc += landscape.count_at(s) as u64;
            n += 1;
        }
    }
    if n == 0 {
        f64::NAN
    } else {
        acc as f64 / n as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::selection::Family;
    use proptest::prelude::*;

    fn e2(n: usize) -> SelectionModel {
        SelectionModel::build(Family::MinPlusUniform, n, 2).unwrap()
    }

    #[test]
    fn init_explicit_sorted() {
        let mut rng = SimRng::new(0);
        let l = Landscape::init(3, &InitSpec::Explicit(vec![0.9, 0.1, 0.5]), &mut rng).unwrap();
        assert_eq!(l.values(), vec![0.1, 0.5, 0.9]);
        let l = Landscape::init(4, &InitSpec::AllOnes, &mut rng).unwrap();
        assert_eq!(l.values(), vec![1.0; 4]);
        assert_eq!(l.order_stat(1).unwrap(), 1.0);
    }

    #[test]
    fn init_errors() {
        let mut rng = SimRng::new(0);
        assert!(matches!(
            Landscape::init(3, &InitSpec::Explicit(vec![0.1, 0.2]), &mut rng),
            Err(Error::BadInitialData(_))
        ));
        assert!(matches!(
            Landscape::init(2, &InitSpec::Explicit(vec![0.1, 1.2]), &mut rng),
            Err(Error::BadInitialData(_))
        ));
    }

    #[test]
    fn iid_uniform_init_ks() {
        let mut rng = SimRng::new(42);
        let l = Landscape::init(10_000, &InitSpec::IidUniform, &mut rng).unwrap();
        let d = crate::stats::ks_distance(&l.values(), |x| x.clamp(0.0, 1.0)).unwrap();
        // 1e-3 critical value of the one-sample KS statistic: 1.95 / sqrt(n)
        assert!(d < 1.95 / 100.0, "KS = {d}");
    }

    #[test]
    fn uniform_above_has_zero_count() {
        let mut rng = SimRng::new(1);
        let l = Landscape::init(1000, &InitSpec::UniformAbove(0.3), &mut rng).unwrap();
        assert_eq!(l.count_at(0.3), 0);
    }

    #[test]
    fn single_replacement() {
        let mut rng = SimRng::new(0);
        let mut l = Landscape::init(2, &InitSpec::Explicit(vec![0.2, 0.8]), &mut rng).unwrap();
        let mut removed = Vec::new();
        l.apply_replacement(&[1], &[0.5], &mut removed).unwrap();
        assert_eq!(l.values(), vec![0.5, 0.8]);
        assert_eq!(removed, vec![0.2]);
        assert_eq!(l.time(), 1);
    }

    #[test]
    fn two_ranks_reference_pre_step_snapshot() {
        let mut rng = SimRng::new(0);
        let mut l =
            Landscape::init(3, &InitSpec::Explicit(vec![0.1, 0.4, 0.9]), &mut rng).unwrap();
        let mut removed = Vec::new();
        l.apply_replacement(&[1, 3], &[0.2, 0.3], &mut removed).unwrap();
        assert_eq!(l.values(), vec![0.2, 0.3, 0.4]);
        assert_eq!(removed, vec![0.9, 0.1]);
    }

    #[test]
    fn duplicate_removal_takes_one() {
        let mut rng = SimRng::new(0);
        let mut l =
            Landscape::init(3, &InitSpec::Explicit(vec![0.5, 0.5, 0.5]), &mut rng).unwrap();
        let mut removed = Vec::new();
        l.apply_replacement(&[2], &[0.1], &mut removed).unwrap();
        assert_eq!(l.values(), vec![0.1, 0.5, 0.5]);
        assert_eq!(l.count_at(0.5), 3);
    }

    #[test]
    fn count_and_order_stat_examples() {
        let mut rng = SimRng::new(0);
        let l = Landscape::init(3, &InitSpec::Explicit(vec![0.1, 0.5, 0.9]), &mut rng).unwrap();
        assert_eq!(l.count_at(0.5), 2);
        assert_eq!(l.count_at(1.0), 3);
        assert_eq!(l.order_stat(2).unwrap(), 0.5);
        assert!(matches!(l.order_stat(0), Err(Error::RankOutOfRange { .. })));
        assert!(matches!(l.order_stat(4), Err(Error::RankOutOfRange { .. })));
    }

    #[test]
    fn transforms() {
        assert_eq!(transform_replacement(&ReplacementLaw::Uniform01, 0.3), 0.3);
        let planar = ReplacementLaw::planar_norm();
        let r = planar.transform(0.5);
        assert!((r - (2.0 / std::f64::consts::PI).sqrt()).abs() < 1e-12);
        assert!((r - 0.7979).abs() < 1e-4);
        let sq = ReplacementLaw::power(2.0).unwrap();
        assert!((sq.transform(0.25) - 0.5).abs() < 1e-15);
        assert!(matches!(ReplacementLaw::power(0.0), Err(Error::NonInvertibleCdf(_))));
        assert!(matches!(
            ReplacementLaw::tabulated(vec![(0.0, 0.0), (0.5, 0.5), (0.6, 0.5), (1.0, 1.0)]),
            Err(Error::NonInvertibleCdf(_))
        ));
        let tab = ReplacementLaw::tabulated(vec![(0.0, 0.0), (0.5, 0.8), (2.0, 1.0)]).unwrap();
        assert!((tab.transform(0.4) - 0.25).abs() < 1e-15);
        assert!((tab.cdf(tab.transform(0.9)) - 0.9).abs() < 1e-12);
    }

    #[test]
    fn planar_norm_cdf_continuous_and_inverse() {
        let rho = TransformedCdf::PlanarNorm;
        assert!((rho.cdf(1.0) - FRAC_PI_4).abs() < 1e-15);
        assert!((rho.cdf(1.0 + 1e-9) - FRAC_PI_4).abs() < 1e-6);
        assert!((rho.cdf(std::f64::consts::SQRT_2) - 1.0).abs() < 1e-15);
        for i in 0..=100 {
            let u = i as f64 / 100.0;
            assert!((rho.cdf(rho.inverse(u)) - u).abs() < 1e-12, "u = {u}");
        }
        // Monte Carlo check of the law of |Z|
        let mut rng = SimRng::new(5);
        let norms: Vec<f64> = (0..50_000)
            .map(|_| {
                let (x, y) = (rng.uniform(), rng.uniform());
                (x * x + y * y).sqrt()
            })
            .collect();
        let d = crate::stats::ks_distance(&norms, |x| rho.cdf(x)).unwrap();
        assert!(d < 0.01, "KS = {d}");
    }

    #[test]
    fn drift_matches_two_s_minus_one_plus_f() {
        // E2, N = 11, s = 0.4, count conditioned on 3: mean increment -0.4
        let model = e2(11);
        let law = ReplacementLaw::Uniform01;
        let mut rng = SimRng::new(2024);
        let s = 0.4;
        let base = [0.05, 0.2, 0.35, 0.45, 0.5, 0.6, 0.7, 0.75, 0.8, 0.9, 0.95];
        let trials = 100_000;
        let mut total = 0i64;
        for _ in 0..trials {
            let mut l = Landscape::init(11, &InitSpec::Explicit(base.to_vec()), &mut rng).unwrap();
            assert_eq!(l.count_at(s), 3);
            l.step(&model, &law, &mut rng);
            total += l.count_at(s) as i64 - 3;
        }
        let mean = total as f64 / trials as f64;
        assert!((mean + 0.4).abs() < 0.01, "mean drift {mean}");
    }

    #[test]
    fn run_zero_steps_is_empty() {
        let model = e2(10);
        let mut rng = SimRng::new(1);
        let mut l = Landscape::init(10, &InitSpec::IidUniform, &mut rng).unwrap();
        let sched = Schedule::new(0, 1, vec![Observable::CountAt(0.5)]);
        let t = run(&mut l, &model, &ReplacementLaw::Uniform01, 0, &sched, &mut rng).unwrap();
        assert!(t.records.is_empty());
    }

    #[test]
    fn run_record_count_matches_schedule() {
        let model = e2(20);
        let mut rng = SimRng::new(1);
        let mut l = Landscape::init(20, &InitSpec::IidUniform, &mut rng).unwrap();
        let sched = Schedule::new(
            7,
            3,
            vec![Observable::CountAt(0.5), Observable::OrderStat(1), Observable::TypicalPoint],
        );
        let t = run(&mut l, &model, &ReplacementLaw::Uniform01, 100, &sched, &mut rng).unwrap();
        assert_eq!(t.records.len() as u64, 3 * sched.len_for(100));
        assert_eq!(sched.len_for(100), 31);
        assert_eq!(t.records[0].step, 10);
    }

    #[test]
    fn trace_roundtrip_and_determinism() {
        let model = e2(50);
        let sched = Schedule::new(10, 5, vec![Observable::CountAt(0.25), Observable::TypicalPoint]);
        let go = || {
            let mut rng = SimRng::new(99);
            let mut l = Landscape::init(50, &InitSpec::IidUniform, &mut rng).unwrap();
            run(&mut l, &model, &ReplacementLaw::Uniform01, 500, &sched, &mut rng).unwrap()
        };
        let (a, b) = (go(), go());
        let (ja, jb) = (a.to_json().unwrap(), b.to_json().unwrap());
        assert_eq!(ja, jb);
        let mut ca = Vec::new();
        let mut cb = Vec::new();
        a.write_csv(&mut ca).unwrap();
        b.write_csv(&mut cb).unwrap();
        assert_eq!(ca, cb);
        let text = String::from_utf8(ca).unwrap();
        assert!(text.starts_with("step,observable,value\n"));
        assert!(!text.contains('\r'));
        assert_eq!(Trace::from_json(&ja).unwrap(), a);
    }

    #[test]
    fn observable_names_parse() {
        for o in [Observable::CountAt(0.25), Observable::OrderStat(3), Observable::TypicalPoint] {
            assert_eq!(o.to_string().parse::<Observable>().unwrap(), o);
        }
        assert!("foo".parse::<Observable>().is_err());
    }

    #[test]
    fn permutation_invariant_init() {
        let mut rng = SimRng::new(0);
        let a = Landscape::init(4, &InitSpec::Explicit(vec![0.3, 0.1, 0.7, 0.1]), &mut rng).unwrap();
        let b = Landscape::init(4, &InitSpec::Explicit(vec![0.7, 0.1, 0.1, 0.3]), &mut rng).unwrap();
        assert_eq!(a.values(), b.values());
    }

    proptest! {
        #[test]
        fn step_invariants_and_increment_identity(
            seed in any::<u64>(),
            n in 3usize..40,
            s in 0.0f64..1.0,
            steps in 1usize..60,
            kind in 0usize..3,
        ) {
            let model = match kind {
                0 => e2(n),
                1 => SelectionModel::build(Family::MinPlusMax, n, 2).unwrap(),
                _ => SelectionModel::build(Family::ReplaceKth { k: 1 + n / 3 }, n, 1).unwrap(),
            };
            let law = ReplacementLaw::Uniform01;
            let mut rng = SimRng::new(seed);
            let mut l = Landscape::init(n, &InitSpec::IidUniform, &mut rng).unwrap();
            for _ in 0..steps {
                let before = l.count_at(s) as i64;
                let delta = l.step_traced(&model, &law, &mut rng);
                let after = l.count_at(s) as i64;
                let born = delta.draws.iter().filter(|&&u| u <= s).count() as i64;
                let died = delta.removed.iter().filter(|&&x| x <= s).count() as i64;
                prop_assert_eq!(after - before, born - died);
                prop_assert_eq!(l.len(), n);
                let v = l.values();
                prop_assert!(v.windows(2).all(|w| w[0] <= w[1]));
                prop_assert!(v.iter().all(|x| (0.0..=1.0).contains(x)));
            }
        }

        #[test]
        fn queries_match_linear_scan(seed in any::<u64>(), n in 1usize..200, s in 0.0f64..1.0) {
            let mut rng = SimRng::new(seed);
            let raw: Vec<f64> = (0..n).map(|_| rng.uniform()).collect();
            let l = Landscape::init(n, &InitSpec::Explicit(raw.clone()), &mut rng).unwrap();
            prop_assert_eq!(l.count_at(s), raw.iter().filter(|&&x| x <= s).count());
            let mut sorted = raw;
            sorted.sort_by(f64::total_cmp);
            for (i, x) in sorted.iter().enumerate() {
                prop_assert_eq!(l.order_stat(i + 1).unwrap(), *x);
            }
        }
    }
}
