//! Named experiment configurations with their expected diagnostics, and the
//! special planar, partial-order and beauty-contest dynamics.

use std::io::Write;

use serde::Serialize;
use serde_json::json;

use crate::counting::closed_form_pi;
use crate::engine::{self, InitSpec, Landscape, Observable, ReplacementLaw, Schedule, Value};
use crate::error::{Error, Result};
use crate::ostree::{OrderStatTree, Summary};
use crate::rng::SimRng;
use crate::selection::{Family, SelectionModel, Threshold};
use crate::stats::{batch_means, ks_distance, ks_two_sample, ComparisonReport, DEFAULT_BATCHES};

pub const SCENARIO_NAMES: [&str; 7] = [
    "warmup_kth",
    "warmup_median",
    "min_plus_uniform",
    "min_plus_max",
    "planar_norm",
    "partial_order",
    "beauty_contest",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PlanarPoint {
    pub x: f64,
    pub y: f64,
}

impl PlanarPoint {
    pub fn new(x: f64, y: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&x) || !(0.0..=1.0).contains(&y) {
            return Err(Error::BadInitialData(format!("point ({x}, {y}) outside the unit square")));
        }
        Ok(Self { x, y })
    }

    pub fn uniform(rng: &mut SimRng) -> Self {
        let x = rng.uniform();
        let y = rng.uniform();
        Self { x, y }
    }

    pub fn norm(&self) -> f64 {
        self.x.hypot(self.y)
    }

    /// Coordinatewise order.
    pub fn precedes(&self, other: &PlanarPoint) -> bool {
        self.x <= other.x && self.y <= other.y
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct NormKey {
    norm: Value,
    x: Value,
    y: Value,
}

impl NormKey {
    fn of(p: PlanarPoint) -> Self {
        Self {
            norm: Value(p.norm()),
            x: Value(p.x),
            y: Value(p.y),
        }
    }

    fn point(&self) -> PlanarPoint {
        PlanarPoint {
            x: self.x.0,
            y: self.y.0,
        }
    }
}

/// Points in the unit square ranked by distance from the origin; each step
/// replaces the closest point and one other uniformly chosen point.
#[derive(Debug, Clone)]
pub struct PlanarSystem {
    points: OrderStatTree<NormKey>,
    model: SelectionModel,
    ranks: Vec<usize>,
}

impl PlanarSystem {
    pub fn new(points: &[PlanarPoint]) -> Result<Self> {
        let model = SelectionModel::build(Family::MinPlusUniform, points.len(), 2)?;
        Ok(Self {
            points: points.iter().map(|&p| NormKey::of(p)).collect(),
            model,
            ranks: Vec::with_capacity(2),
        })
    }

    pub fn uniform(n_points: usize, rng: &mut SimRng) -> Result<Self> {
        let pts: Vec<PlanarPoint> = (0..n_points).map(|_| PlanarPoint::uniform(rng)).collect();
        Self::new(&pts)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn step(&mut self, rng: &mut SimRng) {
        self.model.sample_ranks_into(rng, &mut self.ranks);
        for &r in self.ranks.iter().rev() {
            self.points.remove_at(r - 1);
        }
        for _ in 0..self.ranks.len() {
            self.points.insert(NormKey::of(PlanarPoint::uniform(rng)));
        }
    }

    pub fn norms(&self) -> Vec<f64> {
        self.points.iter().map(|k| k.norm.0).collect()
    }

    pub fn points(&self) -> Vec<PlanarPoint> {
        self.points.iter().map(NormKey::point).collect()
    }

    pub fn typical_norm(&self, rng: &mut SimRng) -> f64 {
        let i = rng.below(self.len());
        self.points.get(i).expect("nonempty").norm.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct XyKey {
    x: Value,
    y: Value,
}

impl XyKey {
    fn of(p: PlanarPoint) -> Self {
        Self {
            x: Value(p.x),
            y: Value(p.y),
        }
    }

    fn point(&self) -> PlanarPoint {
        PlanarPoint {
            x: self.x.0,
            y: self.y.0,
        }
    }

    fn lowest_at(x: f64) -> Self {
        Self {
            x: Value(x),
            y: Value(f64::NEG_INFINITY),
        }
    }
}

/// Subtree aggregate: the point with the smallest `y`.
#[derive(Debug, Clone, Copy)]
struct LowestY;

impl Summary<XyKey> for LowestY {
    type Value = XyKey;
    fn leaf(k: &XyKey) -> XyKey {
        *k
    }
    fn combine(a: XyKey, b: XyKey) -> XyKey {
        if b.y < a.y {
            b
        } else {
            a
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum StepOutcome {
    Regular,
    /// Every point was minimal, so only a minimal point was replaced.
    Degenerate,
}

/// Points in the unit square under the coordinatewise partial order. Each step
/// replaces a uniformly chosen minimal point and a uniformly chosen
/// non-minimal point.
///
/// The minimal points form a staircase: sorted by `x`, strictly decreasing in `y`.
#[derive(Debug, Clone)]
pub struct PartialOrderSystem {
    all: OrderStatTree<XyKey, LowestY>,
    front: OrderStatTree<XyKey>,
}

impl PartialOrderSystem {
    pub fn new(points: &[PlanarPoint]) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::BadInitialData("need at least two points".into()));
        }
        let mut sys = Self {
            all: OrderStatTree::with_capacity(points.len()),
            front: OrderStatTree::new(),
        };
        for &p in points {
            let p = PlanarPoint::new(p.x, p.y)?;
            let key = XyKey::of(p);
            if sys.all.count_le(&key) != sys.all.count_lt(&key) {
                return Err(Error::BadInitialData(format!("duplicate point ({}, {})", p.x, p.y)));
            }
            sys.insert(key);
        }
        Ok(sys)
    }

    pub fn uniform(n_points: usize, rng: &mut SimRng) -> Result<Self> {
        let pts: Vec<PlanarPoint> = (0..n_points).map(|_| PlanarPoint::uniform(rng)).collect();
        Self::new(&pts)
    }

    pub fn len(&self) -> usize {
        self.all.len()
    }

    pub fn is_empty(&self) -> bool {
        self.all.is_empty()
    }

    pub fn points(&self) -> Vec<PlanarPoint> {
        self.all.iter().map(XyKey::point).collect()
    }

    /// Minimal points sorted by `x`.
    pub fn minimal_points(&self) -> Vec<PlanarPoint> {
        self.front.iter().map(XyKey::point).collect()
    }

    pub fn num_minimal(&self) -> usize {
        self.front.len()
    }

    fn in_front(&self, k: &XyKey) -> bool {
        self.front.count_le(k) != self.front.count_lt(k)
    }

    fn insert(&mut self, p: XyKey) {
        self.all.insert(p);
        let idx = self.front.count_lt(&XyKey::lowest_at(p.x.0));
        if idx > 0 && self.front.get(idx - 1).expect("in range").y <= p.y {
            return;
        }
        if let Some(q) = self.front.get(idx) {
            if q.x == p.x && q.y <= p.y {
                return;
            }
        }
        while let Some(q) = self.front.get(idx) {
            if q.y >= p.y {
                self.front.remove_at(idx);
            } else {
                break;
            }
        }
        self.front.insert(p);
    }

    fn remove_non_minimal(&mut self, p: &XyKey) {
        let i = self.all.count_lt(p);
        self.all.remove_at(i);
    }

    fn remove_minimal(&mut self, m: &XyKey) {
        let i = self.all.count_lt(m);
        self.all.remove_at(i);
        let f = self.front.count_lt(m);
        self.front.remove_at(f);
        let pred_y = if f > 0 {
            self.front.get(f - 1).expect("in range").y
        } else {
            Value(f64::INFINITY)
        };
        let lo = self.all.count_lt(&XyKey::lowest_at(m.x.0));
        let mut hi = match self.front.get(f) {
            Some(succ) => self.all.count_lt(&XyKey::lowest_at(succ.x.0)),
            None => self.all.len(),
        };
        // points freed by m lie in the strip [m.x, succ.x) below pred.y; nothing
        // in the strip lies below m.y. The lowest point of the strip is freed,
        // and the rest of the staircase lies to its left.
        while let Some(q) = self.all.fold(lo, hi) {
            if q.y >= pred_y {
                break;
            }
            self.front.insert(q);
            hi = self.all.count_lt(&q);
        }
    }

    pub fn step(&mut self, rng: &mut SimRng) -> StepOutcome {
        let m = *self.front.get(rng.below(self.front.len())).expect("front nonempty");
        if self.front.len() == self.all.len() {
            self.remove_minimal(&m);
            self.insert(XyKey::of(PlanarPoint::uniform(rng)));
            return StepOutcome::Degenerate;
        }
        let q = loop {
            let cand = *self.all.get(rng.below(self.all.len())).expect("in range");
            if !self.in_front(&cand) {
                break cand;
            }
        };
        self.remove_non_minimal(&q);
        self.remove_minimal(&m);
        self.insert(XyKey::of(PlanarPoint::uniform(rng)));
        self.insert(XyKey::of(PlanarPoint::uniform(rng)));
        StepOutcome::Regular
    }
}

/// Minimal points by pairwise dominance, sorted by `x`.
pub fn minimal_brute_force(points: &[PlanarPoint]) -> Vec<PlanarPoint> {
    let mut out: Vec<PlanarPoint> = points
        .iter()
        .enumerate()
        .filter(|(i, p)| {
            !points
                .iter()
                .enumerate()
                .any(|(j, q)| j != *i && q.precedes(p))
        })
        .map(|(_, p)| *p)
        .collect();
    out.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Replaced {
    Min,
    Max,
}

/// Each step replaces the value farthest from `p` times the current mean;
/// when the minimum and maximum are equally far the maximum goes.
#[derive(Debug, Clone)]
pub struct BeautyContest {
    values: OrderStatTree<Value>,
    sum: f64,
    p: f64,
    since_resum: usize,
}

impl BeautyContest {
    pub fn new(values: &[f64], p: f64) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::BadInitialData("need at least one value".into()));
        }
        if !(p.is_finite() && p >= 0.0) {
            return Err(Error::InvalidParameter(format!("p = {p} must be nonnegative")));
        }
        if let Some(bad) = values.iter().find(|x| !(0.0..=1.0).contains(*x)) {
            return Err(Error::BadInitialData(format!("value {bad} outside [0, 1]")));
        }
        Ok(Self {
            values: values.iter().map(|&v| Value(v)).collect(),
            sum: values.iter().sum(),
            p,
            since_resum: 0,
        })
    }

    pub fn uniform(n_points: usize, p: f64, rng: &mut SimRng) -> Result<Self> {
        let v: Vec<f64> = (0..n_points).map(|_| rng.uniform()).collect();
        Self::new(&v, p)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.0).collect()
    }

    pub fn mean(&self) -> f64 {
        self.sum / self.len() as f64
    }

    pub fn step(&mut self, rng: &mut SimRng) -> Replaced {
        let target = self.p * self.mean();
        let lo = self.values.first().expect("nonempty").0;
        let hi = self.values.last().expect("nonempty").0;
        let which = if (hi - target).abs() >= (lo - target).abs() {
            Replaced::Max
        } else {
            Replaced::Min
        };
        let idx = match which {
            Replaced::Min => 0,
            Replaced::Max => self.len() - 1,
        };
        let old = self.values.remove_at(idx).expect("nonempty").0;
        let new = rng.uniform();
        self.values.insert(Value(new));
        self.sum += new - old;
        self.since_resum += 1;
        if self.since_resum >= self.len() {
            self.sum = self.values.iter().map(|v| v.0).sum();
            self.since_resum = 0;
        }
        which
    }
}

/// What a scenario simulates.
#[derive(Debug, Clone, PartialEq)]
pub enum Dynamics {
    /// Rank-driven selection through the engine.
    Ranked {
        family: Family,
        k_replace: usize,
        law: ReplacementLaw,
    },
    PartialOrder,
    BeautyContest { p: f64 },
}

/// Expected behaviour checked by [`verify`].
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Diagnostic {
    /// KS distance of the sampled `X^(rank)` to U[0, 1] below `tol`.
    OrderStatUniform { rank: usize, tol: f64 },
    /// Empirical `P[X^(rank) > level]` below `bound`.
    OrderStatAbove { rank: usize, level: f64, bound: f64 },
    /// Empirical `P[X^(rank) < level]` below `bound`.
    OrderStatBelow { rank: usize, level: f64, bound: f64 },
    /// KS distance of the sampled `X^(rank)` to its limit law `h_rank`.
    OrderStatLimit { rank: usize, tol: f64 },
    /// Typical-point mass within 0.01 of 0 and of 1.
    TypicalAtoms { at_zero: f64, at_one: f64, tol: f64 },
    /// Threshold of the model, in the value scale of the replacement law.
    Threshold { expected: f64, tol: f64 },
    /// KS distance of the law-transformed typical point to U[s*, 1].
    TypicalUniformAbove { s_star: f64, tol: f64 },
    /// Time-averaged `count_at(s)`.
    CountMean { s: f64, expected: f64, tol: f64 },
    /// Typical-point mass in `[lo, hi]` at least `min_mass`.
    BandMass { lo: f64, hi: f64, min_mass: f64 },
    /// Expected verdict of the eventual-uniformity check at `n0 = 2`.
    A4 { expected_holds: bool, tol: f64 },
    /// Typical-point value below which a `quantile` fraction lies.
    ThresholdRadius { expected: f64, quantile: f64, tol: f64 },
    /// Two-sample KS between the transformed 1-D run and a direct 2-D run.
    DirectPlanarAgreement { tol: f64 },
    /// Data only; `note` describes what is reported.
    Exploratory { note: String },
}

impl Diagnostic {
    pub fn name(&self) -> String {
        match self {
            Diagnostic::OrderStatUniform { rank, .. } => format!("order_stat({rank}) ~ U[0,1]"),
            Diagnostic::OrderStatAbove { rank, level, .. } => format!("P[order_stat({rank}) > {level}]"),
            Diagnostic::OrderStatBelow { rank, level, .. } => format!("P[order_stat({rank}) < {level}]"),
            Diagnostic::OrderStatLimit { rank, .. } => format!("order_stat({rank}) limit law"),
            Diagnostic::TypicalAtoms { .. } => "typical point atoms at 0 and 1".into(),
            Diagnostic::Threshold { .. } => "threshold s*".into(),
            Diagnostic::TypicalUniformAbove { .. } => "typical point ~ U[s*,1]".into(),
            Diagnostic::CountMean { s, .. } => format!("mean count_at({s})"),
            Diagnostic::BandMass { lo, hi, .. } => format!("typical point mass in [{lo},{hi}]"),
            Diagnostic::A4 { .. } => "eventual uniformity holds".into(),
            Diagnostic::ThresholdRadius { quantile, .. } => format!("threshold radius ({quantile} quantile)"),
            Diagnostic::DirectPlanarAgreement { .. } => "transformed 1-D vs direct 2-D norms".into(),
            Diagnostic::Exploratory { .. } => "exploratory".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RunParams {
    pub n_points: usize,
    pub steps: u64,
    pub burn_in: u64,
    pub seed: u64,
    /// Record every `every` steps after burn-in.
    pub every: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub dynamics: Dynamics,
    pub defaults: RunParams,
    pub diagnostics: Vec<Diagnostic>,
}

fn ranked(family: Family, k_replace: usize, law: ReplacementLaw) -> Dynamics {
    Dynamics::Ranked {
        family,
        k_replace,
        law,
    }
}

/// Replace only the `k`-th ranked of `n_points` values.
pub fn scenario_warmup_kth(n_points: usize, k: usize) -> Result<Scenario> {
    if k == 0 || k > n_points {
        return Err(Error::RankOutOfRange { rank: k, n: n_points });
    }
    let mut diagnostics = vec![Diagnostic::OrderStatUniform { rank: k, tol: 0.02 }];
    if k > 1 {
        diagnostics.push(Diagnostic::OrderStatAbove {
            rank: k - 1,
            level: 0.1,
            bound: 0.01,
        });
    }
    if k < n_points {
        diagnostics.push(Diagnostic::OrderStatBelow {
            rank: k + 1,
            level: 0.9,
            bound: 0.01,
        });
    }
    Ok(Scenario {
        name: "warmup_kth".into(),
        dynamics: ranked(Family::ReplaceKth { k }, 1, ReplacementLaw::Uniform01),
        defaults: RunParams {
            n_points,
            steps: 110_000,
            burn_in: 10_000,
            seed: 1,
            every: 1,
        },
        diagnostics,
    })
}

/// Replace the median of an odd number of values.
pub fn scenario_warmup_median(n_points: usize) -> Result<Scenario> {
    let k = n_points.div_ceil(2);
    let mut sc = scenario_warmup_kth(n_points, k)?;
    sc.name = "warmup_median".into();
    sc.defaults.steps = 400_000;
    sc.defaults.burn_in = 100_000;
    sc.defaults.every = 10;
    let n = n_points as f64;
    sc.diagnostics = vec![Diagnostic::TypicalAtoms {
        at_zero: 0.5,
        at_one: 0.5,
        tol: 0.02_f64.max(1.5 / n),
    }];
    Ok(sc)
}

pub fn scenario_min_plus_uniform() -> Scenario {
    Scenario {
        name: "min_plus_uniform".into(),
        dynamics: ranked(Family::MinPlusUniform, 2, ReplacementLaw::Uniform01),
        defaults: RunParams {
            n_points: 1000,
            steps: 1_000_000,
            burn_in: 100_000,
            seed: 7,
            every: 10,
        },
        diagnostics: vec![
            Diagnostic::Threshold {
                expected: 0.5,
                tol: 1e-12,
            },
            Diagnostic::CountMean {
                s: 0.25,
                expected: 0.625,
                tol: 0.02,
            },
            Diagnostic::OrderStatLimit { rank: 1, tol: 0.02 },
            Diagnostic::TypicalUniformAbove {
                s_star: 0.5,
                tol: 0.03,
            },
        ],
    }
}

pub fn scenario_min_plus_max() -> Scenario {
    Scenario {
        name: "min_plus_max".into(),
        dynamics: ranked(Family::MinPlusMax, 2, ReplacementLaw::Uniform01),
        defaults: RunParams {
            n_points: 4000,
            steps: 400_000,
            burn_in: 200_000,
            seed: 11,
            every: 10,
        },
        diagnostics: vec![
            Diagnostic::Threshold {
                expected: 0.5,
                tol: 1e-12,
            },
            Diagnostic::BandMass {
                lo: 0.45,
                hi: 0.55,
                min_mass: 0.9,
            },
            Diagnostic::A4 {
                expected_holds: false,
                tol: 0.05,
            },
            Diagnostic::CountMean {
                s: 0.25,
                expected: closed_form_pi(0.25).map(|p| p.mean).unwrap_or(f64::NAN),
                tol: 0.05,
            },
        ],
    }
}

pub fn scenario_planar_norm() -> Scenario {
    let radius = (2.0 / std::f64::consts::PI).sqrt();
    Scenario {
        name: "planar_norm".into(),
        dynamics: ranked(Family::MinPlusUniform, 2, ReplacementLaw::planar_norm()),
        defaults: RunParams {
            n_points: 10_000,
            steps: 1_000_000,
            burn_in: 100_000,
            seed: 5,
            every: 10,
        },
        diagnostics: vec![
            Diagnostic::Threshold {
                expected: radius,
                tol: 1e-9,
            },
            Diagnostic::ThresholdRadius {
                expected: radius,
                quantile: 0.01,
                tol: 0.02,
            },
            Diagnostic::TypicalUniformAbove {
                s_star: 0.5,
                tol: 0.02,
            },
            Diagnostic::DirectPlanarAgreement { tol: 0.02 },
        ],
    }
}

pub fn scenario_partial_order() -> Scenario {
    Scenario {
        name: "partial_order".into(),
        dynamics: Dynamics::PartialOrder,
        defaults: RunParams {
            n_points: 10_000,
            steps: 1_000_000,
            burn_in: 100_000,
            seed: 3,
            every: 1000,
        },
        diagnostics: vec![Diagnostic::Exploratory {
            note: "minimal-set size and consistency; threshold curve uncharacterized".into(),
        }],
    }
}

pub fn scenario_beauty_contest(p: f64) -> Result<Scenario> {
    if !(p.is_finite() && p >= 0.0) {
        return Err(Error::InvalidParameter(format!("p = {p} must be nonnegative")));
    }
    Ok(Scenario {
        name: "beauty_contest".into(),
        dynamics: Dynamics::BeautyContest { p },
        defaults: RunParams {
            n_points: 1000,
            steps: 100_000,
            burn_in: 0,
            seed: 13,
            every: 1000,
        },
        diagnostics: vec![Diagnostic::Exploratory {
            note: "mass near 0 expected for p < 1 and near 1 for p > 1; not asserted".into(),
        }],
    })
}

/// Scenario by name with its default parameters.
pub fn scenario_by_name(name: &str) -> Result<Scenario> {
    match name {
        "warmup_kth" => scenario_warmup_kth(9, 5),
        "warmup_median" => scenario_warmup_median(101),
        "min_plus_uniform" => Ok(scenario_min_plus_uniform()),
        "min_plus_max" => Ok(scenario_min_plus_max()),
        "planar_norm" => Ok(scenario_planar_norm()),
        "partial_order" => Ok(scenario_partial_order()),
        "beauty_contest" => scenario_beauty_contest(0.5),
        other => Err(Error::UnknownScenario(other.into())),
    }
}

impl Scenario {
    /// Selection model and replacement law for rank-driven scenarios.
    pub fn ranked_parts(&self, n_points: usize) -> Result<Option<(SelectionModel, ReplacementLaw)>> {
        match &self.dynamics {
            Dynamics::Ranked {
                family,
                k_replace,
                law,
            } => Ok(Some((
                SelectionModel::build(family.clone(), n_points, *k_replace)?,
                law.clone(),
            ))),
            _ => Ok(None),
        }
    }

    /// JSON description for provenance headers.
    pub fn describe(&self, params: &RunParams) -> serde_json::Value {
        let dynamics = match &self.dynamics {
            Dynamics::Ranked {
                family,
                k_replace,
                law,
            } => json!({"family": family.name(), "K": k_replace, "law": law}),
            Dynamics::PartialOrder => json!({"dynamics": "partial_order"}),
            Dynamics::BeautyContest { p } => json!({"dynamics": "beauty_contest", "p": p}),
        };
        json!({
            "scenario": self.name,
            "model": dynamics,
            "params": params,
            "diagnostics": self.diagnostics,
        })
    }

    fn observables(&self) -> Vec<Observable> {
        let mut obs = vec![Observable::TypicalPoint];
        for d in &self.diagnostics {
            let o = match d {
                Diagnostic::OrderStatUniform { rank, .. }
                | Diagnostic::OrderStatAbove { rank, .. }
                | Diagnostic::OrderStatBelow { rank, .. }
                | Diagnostic::OrderStatLimit { rank, .. } => Observable::OrderStat(*rank),
                Diagnostic::CountMean { s, .. } => Observable::CountAt(*s),
                _ => continue,
            };
            if !obs.contains(&o) {
                obs.push(o);
            }
        }
        obs
    }
}

fn check_params(p: &RunParams) -> Result<()> {
    if p.steps <= p.burn_in {
        return Err(Error::Config(format!(
            "steps ({}) must exceed burn-in ({})",
            p.steps, p.burn_in
        )));
    }
    if p.every == 0 {
        return Err(Error::Config("recording interval must be positive".into()));
    }
    Ok(())
}

/// Empirical quantile by the nearest-rank rule.
pub fn quantile(sample: &[f64], q: f64) -> Result<f64> {
    if sample.is_empty() {
        return Err(Error::EmptySample);
    }
    let mut s = sample.to_vec();
    s.sort_by(f64::total_cmp);
    let idx = ((q * s.len() as f64).ceil() as usize).clamp(1, s.len()) - 1;
    Ok(s[idx])
}

fn fraction(sample: &[f64], pred: impl Fn(f64) -> bool) -> f64 {
    sample.iter().filter(|&&x| pred(x)).count() as f64 / sample.len() as f64
}

struct Report<'a> {
    scenario: &'a str,
    out: Vec<ComparisonReport>,
}

impl Report<'_> {
    fn push(
        &mut self,
        d: &Diagnostic,
        expected: serde_json::Value,
        observed: serde_json::Value,
        distance: Option<f64>,
        pass: bool,
    ) {
        self.out.push(ComparisonReport {
            scenario: self.scenario.into(),
            diagnostic: d.name(),
            expected,
            observed,
            distance,
            pass,
            note: None,
        });
    }

    fn note_last(&mut self, note: String) {
        if let Some(r) = self.out.last_mut() {
            r.note = Some(note);
        }
    }
}

/// Runs the scenario under `params` and evaluates its diagnostics.
pub fn verify(scenario: &Scenario, params: &RunParams) -> Result<Vec<ComparisonReport>> {
    check_params(params)?;
    match &scenario.dynamics {
        Dynamics::Ranked { .. } => verify_ranked(scenario, params),
        Dynamics::PartialOrder => verify_partial_order(scenario, params),
        Dynamics::BeautyContest { p } => verify_beauty_contest(scenario, params, *p),
    }
}

fn verify_ranked(scenario: &Scenario, params: &RunParams) -> Result<Vec<ComparisonReport>> {
    let (model, law) = scenario.ranked_parts(params.n_points)?.expect("ranked dynamics");
    let mut rng = SimRng::new(params.seed);
    let init = match law {
        ReplacementLaw::Uniform01 => InitSpec::IidUniform,
        ref l => InitSpec::IidFrom(l.clone()),
    };
    let mut landscape = Landscape::init(params.n_points, &init, &mut rng)?;
    let observables = scenario.observables();
    let schedule = Schedule::new(params.burn_in, params.every, observables.clone());
    let trace = engine::run(&mut landscape, &model, &law, params.steps, &schedule, &mut rng)?;
    let typical = trace.values(&Observable::TypicalPoint);
    let mut rep = Report {
        scenario: &scenario.name,
        out: Vec::new(),
    };
    for d in &scenario.diagnostics {
        match d {
            Diagnostic::OrderStatUniform { rank, tol } => {
                let x = trace.values(&Observable::OrderStat(*rank));
                let ks = ks_distance(&x, |v| v.clamp(0.0, 1.0))?;
                rep.push(d, json!({"ks_below": tol}), json!({"ks": ks}), Some(ks), ks < *tol);
            }
            Diagnostic::OrderStatAbove { rank, level, bound } => {
                let x = trace.values(&Observable::OrderStat(*rank));
                let f = fraction(&x, |v| v > *level);
                rep.push(d, json!({"below": bound}), json!(f), None, f < *bound);
            }
            Diagnostic::OrderStatBelow { rank, level, bound } => {
                let x = trace.values(&Observable::OrderStat(*rank));
                let f = fraction(&x, |v| v < *level);
                rep.push(d, json!({"below": bound}), json!(f), None, f < *bound);
            }
            Diagnostic::OrderStatLimit { rank, tol } => {
                let x = trace.values(&Observable::OrderStat(*rank));
                let u: Vec<f64> = x.iter().map(|&v| law.cdf(v)).collect();
                let ks = ks_distance(&u, |v| crate::analytic::order_stat_cdf(*rank, v))?;
                rep.push(d, json!({"ks_below": tol}), json!({"ks": ks}), Some(ks), ks < *tol);
            }
            Diagnostic::TypicalAtoms { at_zero, at_one, tol } => {
                let z = fraction(&typical, |v| v <= 0.01);
                let o = fraction(&typical, |v| v >= 0.99);
                let dist = (z - at_zero).abs().max((o - at_one).abs());
                rep.push(
                    d,
                    json!({"at_zero": at_zero, "at_one": at_one}),
                    json!({"at_zero": z, "at_one": o}),
                    Some(dist),
                    dist < *tol,
                );
            }
            Diagnostic::Threshold { expected, tol } => {
                let observed = match model.threshold_s_star() {
                    Threshold::Known(s) => law.transform(s),
                    Threshold::Unknown => f64::NAN,
                };
                let dist = (observed - expected).abs();
                rep.push(d, json!(expected), json!(observed), Some(dist), dist < *tol);
            }
            Diagnostic::TypicalUniformAbove { s_star, tol } => {
                let u: Vec<f64> = typical.iter().map(|&v| law.cdf(v)).collect();
                let ks = ks_distance(&u, |v| ((v - s_star) / (1.0 - s_star)).clamp(0.0, 1.0))?;
                rep.push(d, json!({"ks_below": tol}), json!({"ks": ks}), Some(ks), ks < *tol);
            }
            Diagnostic::CountMean { s, expected, tol } => {
                let c = trace.values(&Observable::CountAt(*s));
                let (mean, se) = batch_means(&c, DEFAULT_BATCHES)?;
                let dist = (mean - expected).abs();
                rep.push(
                    d,
                    json!(expected),
                    json!({"mean": mean, "stderr": se}),
                    Some(dist),
                    dist < *tol,
                );
                if 3.0 * se > *tol {
                    rep.note_last(format!(
                        "budget too small: 3 stderr = {:.4} exceeds tolerance {tol}",
                        3.0 * se
                    ));
                }
            }
            Diagnostic::BandMass { lo, hi, min_mass } => {
                let m = fraction(&typical, |v| v >= *lo && v <= *hi);
                rep.push(d, json!({"at_least": min_mass}), json!(m), None, m > *min_mass);
            }
            Diagnostic::A4 { expected_holds, tol } => {
                let a4 = model.check_a4(2, *tol)?;
                rep.push(
                    d,
                    json!(expected_holds),
                    json!({"holds": a4.holds, "sup_deviation": a4.sup_deviation}),
                    Some(a4.sup_deviation),
                    a4.holds == *expected_holds,
                );
            }
            Diagnostic::ThresholdRadius {
                expected,
                quantile: q,
                tol,
            } => {
                let r = quantile(&typical, *q)?;
                let dist = (r - expected).abs();
                rep.push(d, json!(expected), json!(r), Some(dist), dist < *tol);
            }
            Diagnostic::DirectPlanarAgreement { tol } => {
                let direct = direct_planar_norms(params)?;
                let ks = ks_two_sample(&typical, &direct)?;
                rep.push(d, json!({"ks_below": tol}), json!({"ks": ks}), Some(ks), ks < *tol);
            }
            Diagnostic::Exploratory { note } => {
                rep.push(d, json!(note), json!({"samples": typical.len()}), None, true);
            }
        }
    }
    Ok(rep.out)
}

/// Typical-point norms of the direct 2-D run on the same recording schedule,
/// on stream 1 of the seed.
pub fn direct_planar_norms(params: &RunParams) -> Result<Vec<f64>> {
    let mut rng = SimRng::with_stream(params.seed, 1);
    let mut sys = PlanarSystem::uniform(params.n_points, &mut rng)?;
    let schedule = Schedule::new(params.burn_in, params.every, vec![Observable::TypicalPoint]);
    let mut out = Vec::with_capacity(schedule.len_for(params.steps) as usize);
    for t in 1..=params.steps {
        sys.step(&mut rng);
        if schedule.is_recorded(t) {
            out.push(sys.typical_norm(&mut rng));
        }
    }
    Ok(out)
}

fn verify_partial_order(scenario: &Scenario, params: &RunParams) -> Result<Vec<ComparisonReport>> {
    let mut rng = SimRng::new(params.seed);
    let mut sys = PartialOrderSystem::uniform(params.n_points, &mut rng)?;
    let mut degenerate = 0u64;
    let mut front_sizes = Vec::new();
    for t in 1..=params.steps {
        if sys.step(&mut rng) == StepOutcome::Degenerate {
            degenerate += 1;
        }
        if t > params.burn_in && (t - params.burn_in).is_multiple_of(params.every) {
            front_sizes.push(sys.num_minimal() as f64);
        }
    }
    let front = sys.minimal_points();
    let antichain = front.windows(2).all(|w| w[0].x < w[1].x && w[0].y > w[1].y);
    let consistent = if sys.len() <= 2000 {
        minimal_brute_force(&sys.points()) == front
    } else {
        antichain
    };
    let (mean_front, _) = batch_means(&front_sizes, DEFAULT_BATCHES).unwrap_or((f64::NAN, f64::NAN));
    let pts = sys.points();
    let below_half = fraction(&pts.iter().map(|p| p.x + p.y).collect::<Vec<_>>(), |v| v < 0.5);
    let mut rep = Report {
        scenario: &scenario.name,
        out: Vec::new(),
    };
    for d in &scenario.diagnostics {
        rep.push(
            d,
            json!("exploratory"),
            json!({
                "mean_minimal_points": mean_front,
                "degenerate_steps": degenerate,
                "fraction_x_plus_y_below_half": below_half,
                "minimal_set_consistent": consistent,
            }),
            None,
            consistent,
        );
    }
    Ok(rep.out)
}

fn verify_beauty_contest(scenario: &Scenario, params: &RunParams, p: f64) -> Result<Vec<ComparisonReport>> {
    let mut rng = SimRng::new(params.seed);
    let mut sys = BeautyContest::uniform(params.n_points, p, &mut rng)?;
    for _ in 0..params.steps {
        sys.step(&mut rng);
    }
    let v = sys.values();
    let mut rep = Report {
        scenario: &scenario.name,
        out: Vec::new(),
    };
    for d in &scenario.diagnostics {
        rep.push(
            d,
            json!("exploratory"),
            json!({
                "p": p,
                "mean": sys.mean(),
                "fraction_below_0.1": fraction(&v, |x| x < 0.1),
                "fraction_above_0.9": fraction(&v, |x| x > 0.9),
            }),
            None,
            true,
        );
    }
    Ok(rep.out)
}

/// `x,y` rows under a header.
pub fn write_points_csv<W: Write>(points: &[PlanarPoint], w: W) -> Result<()> {
    let mut out = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w);
    out.write_record(["x", "y"])?;
    for p in points {
        out.write_record([p.x.to_string(), p.y.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

/// One `value` per row under a header.
pub fn write_values_csv<W: Write>(values: &[f64], w: W) -> Result<()> {
    let mut out = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w);
    out.write_record(["value"])?;
    for v in values {
        out.write_record([v.to_string()])?;
    }
    out.flush()?;
    Ok(())
}
