//! Selection distributions over K-tuples of distinct ranks.
//!
//! A model is stored in ranked form: a table of strictly increasing rank
//! tuples `i_1 < ... < i_K` with weights `gamma_N(i_1, ..., i_K)` summing to
//! one. The exchangeable law on ordered tuples is `gamma_N / K!` and is never
//! materialized, so exchangeability holds by construction.

use num_traits::{FromPrimitive, Num};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SimRng;

/// Largest K accepted for explicit weight tables.
pub const MAX_TABLE_K: usize = 3;

const EXTERNAL_SUM_TOL: f64 = 1e-9;

/// One entry of a ranked weight table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableEntry {
    pub ranks: Vec<usize>,
    pub weight: f64,
}

impl TableEntry {
    pub fn new(ranks: Vec<usize>, weight: f64) -> Self {
        Self { ranks, weight }
    }
}

/// The selection rule, before it is bound to a particular N and K.
#[derive(Debug, Clone, PartialEq)]
pub enum Family {
    /// Replace the k-th ranked value only (K = 1).
    ReplaceKth { k: usize },
    /// Replace the minimum and one uniformly chosen other point (K = 2).
    MinPlusUniform,
    /// Replace the minimum and K-1 others drawn from a ranked table over
    /// `{2, ..., N}`; `alpha` is the user-supplied limit of `F_N`.
    MinPlusOthers {
        table: Vec<TableEntry>,
        alpha: Option<f64>,
    },
    /// Replace the smallest and the largest point (K = 2).
    MinPlusMax,
    /// Arbitrary ranked table; limit data must be supplied by the caller.
    CustomRanked {
        table: Vec<TableEntry>,
        s_star: Option<f64>,
        alpha: Option<f64>,
    },
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::ReplaceKth { .. } => "replace_kth",
            Family::MinPlusUniform => "min_plus_uniform",
            Family::MinPlusOthers { .. } => "min_plus_others",
            Family::MinPlusMax => "min_plus_max",
            Family::CustomRanked { .. } => "custom_ranked",
        }
    }
}

/// Limit threshold `s*`; `Unknown` is an ordinary value, not an error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Threshold {
    Known(f64),
    Unknown,
}

impl Threshold {
    pub fn value(self) -> Option<f64> {
        match self {
            Threshold::Known(v) => Some(v),
            Threshold::Unknown => None,
        }
    }
}

#[derive(Debug, Clone)]
enum Sampler {
    Fixed(Vec<usize>),
    MinPlusUniform,
    Table(Vec<f64>),
}

/// A validated selection model bound to N points and K replacements.
#[derive(Debug, Clone)]
pub struct SelectionModel {
    n_points: usize,
    k_replace: usize,
    family: Family,
    table: Vec<TableEntry>,
    sampler: Sampler,
}

/// Marginals and limit data of a selection model.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarginalData {
    /// `g[i - 1] = g_N(i)`.
    pub g: Vec<f64>,
    /// `cdf[n] = G_N(n)` for `n = 0..=N`.
    #[serde(rename = "G")]
    pub cdf: Vec<f64>,
    pub s_star: Threshold,
    pub alpha: Option<f64>,
    pub a4_witness: Option<(usize, f64)>,
}

/// Finite-N diagnostic of the eventual-uniformity condition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct A4Check {
    pub holds: bool,
    pub sup_deviation: f64,
}

/// Marginal of a single component, from a ranked table.
///
/// Each tuple containing rank `i` contributes `gamma / K` to `g(i)`; this is
/// the per-position sum over all placements of `i` within the ranked tuple.
/// Generic so that tests and the exact drift check can run it over rationals.
pub fn ggamma_marginal<'a, T, I>(n_points: usize, k_replace: usize, entries: I) -> Vec<T>
where
    T: Num + Clone + FromPrimitive + 'a,
    I: IntoIterator<Item = (&'a [usize], T)>,
{
    let mut g = vec![T::zero(); n_points];
    let k = T::from_usize(k_replace).expect("K representable");
    for (ranks, w) in entries {
        let share = w / k.clone();
        for &r in ranks {
            g[r - 1] = g[r - 1].clone() + share.clone();
        }
    }
    g
}

/// `G_N(n)` for `n = 0..=N` as running sums of `g`.
pub fn cumulative<T: Num + Clone>(g: &[T]) -> Vec<T> {
    let mut out = Vec::with_capacity(g.len() + 1);
    let mut acc = T::zero();
    out.push(acc.clone());
    for x in g {
        acc = acc + x.clone();
        out.push(acc.clone());
    }
    out
}

/// `s* = (1 + (K-1) alpha) / K` for the min-plus-others family.
pub fn min_plus_others_threshold(k_replace: usize, alpha: f64) -> f64 {
    let k = k_replace as f64;
    (1.0 + (k - 1.0) * alpha) / k
}

fn validate_table(
    table: &[TableEntry],
    n_points: usize,
    width: usize,
    min_rank: usize,
) -> Result<Vec<TableEntry>> {
    if table.is_empty() {
        return Err(Error::InvalidTable("table is empty".into()));
    }
    let mut rows: Vec<TableEntry> = Vec::with_capacity(table.len());
    for e in table {
        if e.ranks.len() != width {
            return Err(Error::InvalidTable(format!(
                "entry {:?} has {} ranks, expected {}",
                e.ranks,
                e.ranks.len(),
                width
            )));
        }
        if !e.weight.is_finite() || e.weight < 0.0 {
            return Err(Error::InvalidTable(format!(
                "entry {:?} has invalid weight {}",
                e.ranks, e.weight
            )));
        }
        let mut ranks = e.ranks.clone();
        ranks.sort_unstable();
        if ranks.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidTable(format!(
                "entry {:?} has repeated ranks",
                e.ranks
            )));
        }
        if ranks.iter().any(|&r| r < min_rank || r > n_points) {
            return Err(Error::InvalidTable(format!(
                "entry {:?} has ranks outside {}..={}",
                e.ranks, min_rank, n_points
            )));
        }
        rows.push(TableEntry::new(ranks, e.weight));
    }
    rows.sort_by(|a, b| a.ranks.cmp(&b.ranks));
    // merge duplicate tuples
    let mut merged: Vec<TableEntry> = Vec::with_capacity(rows.len());
    for r in rows {
        match merged.last_mut() {
            Some(last) if last.ranks == r.ranks => last.weight += r.weight,
            _ => merged.push(r),
        }
    }
    let total: f64 = merged.iter().map(|e| e.weight).sum();
    if (total - 1.0).abs() > EXTERNAL_SUM_TOL {
        return Err(Error::InvalidTable(format!(
            "weights sum to {total}, expected 1 within {EXTERNAL_SUM_TOL:e}"
        )));
    }
    for e in &mut merged {
        e.weight /= total;
    }
    Ok(merged)
}

fn require_k(family: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::IncompatibleK {
            family,
            expected,
            got,
        })
    }
}

impl SelectionModel {
    /// Validates `family` against `n_points` and `k_replace`.
    pub fn build(family: Family, n_points: usize, k_replace: usize) -> Result<Self> {
        if n_points == 0 {
            return Err(Error::InvalidParameter("N must be positive".into()));
        }
        if k_replace == 0 || k_replace > n_points {
            return Err(Error::InvalidParameter(format!(
                "K = {k_replace} must satisfy 1 <= K <= N = {n_points}"
            )));
        }
        let (table, sampler) = match &family {
            Family::ReplaceKth { k } => {
                require_k("replace_kth", 1, k_replace)?;
                if *k == 0 || *k > n_points {
                    return Err(Error::RankOutOfRange {
                        rank: *k,
                        n: n_points,
                    });
                }
                (
                    vec![TableEntry::new(vec![*k], 1.0)],
                    Sampler::Fixed(vec![*k]),
                )
            }
            Family::MinPlusUniform => {
                require_k("min_plus_uniform", 2, k_replace)?;
                let w = 1.0 / (n_points - 1) as f64;
                let table = (2..=n_points)
                    .map(|j| TableEntry::new(vec![1, j], w))
                    .collect();
                (table, Sampler::MinPlusUniform)
            }
            Family::MinPlusMax => {
                require_k("min_plus_max", 2, k_replace)?;
                (
                    vec![TableEntry::new(vec![1, n_points], 1.0)],
                    Sampler::Fixed(vec![1, n_points]),
                )
            }
            Family::MinPlusOthers { table, alpha } => {
                if !(2..=MAX_TABLE_K).contains(&k_replace) {
                    return Err(Error::InvalidTable(format!(
                        "min_plus_others tables need 2 <= K <= {MAX_TABLE_K}, got {k_replace}"
                    )));
                }
                check_unit(*alpha, "alpha")?;
                let others = validate_table(table, n_points, k_replace - 1, 2)?;
                let full: Vec<TableEntry> = others
                    .into_iter()
                    .map(|e| {
                        let mut ranks = Vec::with_capacity(k_replace);
                        ranks.push(1);
                        ranks.extend(e.ranks);
                        TableEntry::new(ranks, e.weight)
                    })
                    .collect();
                let cum = cumulative_weights(&full);
                (full, Sampler::Table(cum))
            }
            Family::CustomRanked {
                table,
                s_star,
                alpha,
            } => {
                if k_replace > MAX_TABLE_K {
                    return Err(Error::InvalidTable(format!(
                        "custom tables support K <= {MAX_TABLE_K}, got {k_replace}"
                    )));
                }
                check_unit(*s_star, "s_star")?;
                check_unit(*alpha, "alpha")?;
                let full = validate_table(table, n_points, k_replace, 1)?;
                let cum = cumulative_weights(&full);
                (full, Sampler::Table(cum))
            }
        };
        Ok(Self {
            n_points,
            k_replace,
            family,
            table,
            sampler,
        })
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn k_replace(&self) -> usize {
        self.k_replace
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    /// The ranked table `gamma_N` with strictly increasing rank tuples.
    pub fn ranked_table(&self) -> &[TableEntry] {
        &self.table
    }

    /// Ranked table with exact weights, for the parametric families.
    pub fn ranked_table_exact<T: Num + Clone + FromPrimitive>(&self) -> Option<Vec<(Vec<usize>, T)>> {
        match self.family {
            Family::ReplaceKth { k } => Some(vec![(vec![k], T::one())]),
            Family::MinPlusMax => Some(vec![(vec![1, self.n_points], T::one())]),
            Family::MinPlusUniform => {
                let w = T::one() / T::from_usize(self.n_points - 1)?;
                Some((2..=self.n_points).map(|j| (vec![1, j], w.clone())).collect())
            }
            _ => None,
        }
    }

    /// `g_N(i)` for `i = 1..=N`, stored at index `i - 1`.
    pub fn marginal_g(&self) -> Vec<f64> {
        ggamma_marginal(
            self.n_points,
            self.k_replace,
            self.table.iter().map(|e| (e.ranks.as_slice(), e.weight)),
        )
    }

    /// Exact `g_N` over any numeric field, when the family has exact weights.
    pub fn marginal_g_exact<T: Num + Clone + FromPrimitive>(&self) -> Option<Vec<T>> {
        let table = self.ranked_table_exact::<T>()?;
        Some(ggamma_marginal(
            self.n_points,
            self.k_replace,
            table.iter().map(|(r, w)| (r.as_slice(), w.clone())),
        ))
    }

    pub fn marginals(&self) -> MarginalData {
        let g = self.marginal_g();
        let cdf = cumulative(&g);
        let s_star = self.threshold_s_star();
        let a4_witness = s_star
            .value()
            .map(|s| (2, a4_deviation(&cdf, self.n_points, 2, s)));
        MarginalData {
            g,
            cdf,
            s_star,
            alpha: self.alpha(),
            a4_witness,
        }
    }

    /// `G_N(n)`; `G_N(0) = 0`.
    pub fn cdf_g(&self, n: usize) -> Result<f64> {
        if n > self.n_points {
            return Err(Error::RankOutOfRange {
                rank: n,
                n: self.n_points,
            });
        }
        let g = self.marginal_g();
        Ok(g[..n].iter().sum::<f64>().min(1.0))
    }

    pub fn alpha(&self) -> Option<f64> {
        match &self.family {
            Family::MinPlusUniform | Family::MinPlusMax => Some(0.0),
            Family::MinPlusOthers { alpha, .. } | Family::CustomRanked { alpha, .. } => *alpha,
            Family::ReplaceKth { .. } => None,
        }
    }

    /// Limit threshold `s*` of the family.
    pub fn threshold_s_star(&self) -> Threshold {
        match &self.family {
            Family::ReplaceKth { .. } => Threshold::Known(1.0),
            Family::MinPlusUniform | Family::MinPlusMax => Threshold::Known(0.5),
            Family::MinPlusOthers { alpha, .. } => match alpha {
                Some(a) => Threshold::Known(min_plus_others_threshold(self.k_replace, *a)),
                None => Threshold::Unknown,
            },
            Family::CustomRanked { s_star, .. } => match s_star {
                Some(s) => Threshold::Known(*s),
                None => Threshold::Unknown,
            },
        }
    }

    /// Sup over `n0 <= n <= N` of `|N (G_N(n) - s*) / (n - n0 + 1) - (1 - s*)|`.
    ///
    /// This evaluates the eventual-uniformity condition at one finite N; it
    /// can falsify the condition but not certify the N -> infinity limit.
    pub fn check_a4(&self, n0: usize, tolerance: f64) -> Result<A4Check> {
        let s_star = self.threshold_s_star().value().ok_or(Error::UnknownThreshold)?;
        if n0 < 1 || n0 > self.n_points {
            return Err(Error::RankOutOfRange {
                rank: n0,
                n: self.n_points,
            });
        }
        let cdf = cumulative(&self.marginal_g());
        let sup_deviation = a4_deviation(&cdf, self.n_points, n0, s_star);
        Ok(A4Check {
            holds: sup_deviation < tolerance,
            sup_deviation,
        })
    }

    /// Draws a ranked tuple (ascending ranks) from `gamma_N`.
    pub fn sample_ranks(&self, rng: &mut SimRng) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.k_replace);
        self.sample_ranks_into(rng, &mut out);
        out
    }

    pub fn sample_ranks_into(&self, rng: &mut SimRng, out: &mut Vec<usize>) {
        out.clear();
        match &self.sampler {
            Sampler::Fixed(r) => out.extend_from_slice(r),
            Sampler::MinPlusUniform => {
                out.push(1);
                out.push(2 + rng.below(self.n_points - 1));
            }
            Sampler::Table(cum) => {
                let u = rng.uniform() * cum.last().copied().unwrap_or(1.0);
                let idx = cum.partition_point(|c| *c <= u).min(cum.len() - 1);
                out.extend_from_slice(&self.table[idx].ranks);
            }
        }
    }

    pub fn to_doc(&self) -> ModelDoc {
        let (k, table, s_star, alpha) = match &self.family {
            Family::ReplaceKth { k } => (Some(*k), None, None, None),
            Family::MinPlusUniform | Family::MinPlusMax => (None, None, None, None),
            Family::MinPlusOthers { table, alpha } => (None, Some(table.clone()), None, *alpha),
            Family::CustomRanked {
                table,
                s_star,
                alpha,
            } => (None, Some(table.clone()), *s_star, *alpha),
        };
        ModelDoc {
            family: self.family.name().to_string(),
            n_points: self.n_points,
            k_replace: self.k_replace,
            k,
            table,
            s_star,
            alpha,
        }
    }

    pub fn from_doc(doc: &ModelDoc) -> Result<Self> {
        let table = || {
            doc.table
                .clone()
                .ok_or_else(|| Error::InvalidTable(format!("family {} needs a table", doc.family)))
        };
        let family = match doc.family.as_str() {
            "replace_kth" => Family::ReplaceKth {
                k: doc
                    .k
                    .ok_or_else(|| Error::Config("replace_kth needs field `k`".into()))?,
            },
            "min_plus_uniform" => Family::MinPlusUniform,
            "min_plus_max" => Family::MinPlusMax,
            "min_plus_others" => Family::MinPlusOthers {
                table: table()?,
                alpha: doc.alpha,
            },
            "custom_ranked" => Family::CustomRanked {
                table: table()?,
                s_star: doc.s_star,
                alpha: doc.alpha,
            },
            other => return Err(Error::Config(format!("unknown family `{other}`"))),
        };
        Self::build(family, doc.n_points, doc.k_replace)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_doc())?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_doc(&serde_json::from_str(s)?)
    }
}

fn check_unit(v: Option<f64>, what: &str) -> Result<()> {
    match v {
        Some(x) if !(0.0..=1.0).contains(&x) => Err(Error::InvalidParameter(format!(
            "{what} = {x} must lie in [0, 1]"
        ))),
        _ => Ok(()),
    }
}

fn cumulative_weights(table: &[TableEntry]) -> Vec<f64> {
    let mut acc = 0.0;
    table
        .iter()
        .map(|e| {
            acc += e.weight;
            acc
        })
        .collect()
}

fn a4_deviation(cdf: &[f64], n_points: usize, n0: usize, s_star: f64) -> f64 {
    let nf = n_points as f64;
    (n0..=n_points)
        .map(|n| {
            let ratio = nf * (cdf[n] - s_star) / (n - n0 + 1) as f64;
            (ratio - (1.0 - s_star)).abs()
        })
        .fold(0.0, f64::max)
}

/// JSON form of a selection model: `{family, N, K, table?}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDoc {
    pub family: String,
    #[serde(rename = "N")]
    pub n_points: usize,
    #[serde(rename = "K")]
    pub k_replace: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<Vec<TableEntry>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s_star: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::Ratio;
    use proptest::prelude::*;

    type Q = Ratio<i128>;

    fn q(n: i128, d: i128) -> Q {
        Q::new(n, d)
    }

    #[test]
    fn min_plus_uniform_table() {
        let m = SelectionModel::build(Family::MinPlusUniform, 10, 2).unwrap();
        assert_eq!(m.ranked_table().len(), 9);
        for (j, e) in m.ranked_table().iter().enumerate() {
            assert_eq!(e.ranks, vec![1, j + 2]);
            assert!((e.weight - 1.0 / 9.0).abs() < 1e-15);
        }
        let g = m.marginal_g();
        assert!((g[0] - 0.5).abs() < 1e-15);
        for gi in &g[1..] {
            assert!((gi - 1.0 / 18.0).abs() < 1e-15);
        }
        let exact: Vec<Q> = m.marginal_g_exact().unwrap();
        assert_eq!(exact[0], q(1, 2));
        assert!(exact[1..].iter().all(|x| *x == q(1, 18)));
    }

    #[test]
    fn replace_kth_point_mass() {
        let m = SelectionModel::build(Family::ReplaceKth { k: 1 }, 5, 1).unwrap();
        assert_eq!(m.marginal_g(), vec![1.0, 0.0, 0.0, 0.0, 0.0]);
        let m = SelectionModel::build(Family::ReplaceKth { k: 3 }, 5, 1).unwrap();
        assert_eq!(m.marginal_g(), vec![0.0, 0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn min_plus_max_marginal_and_cdf() {
        let m = SelectionModel::build(Family::MinPlusMax, 4, 2).unwrap();
        assert_eq!(m.marginal_g(), vec![0.5, 0.0, 0.0, 0.5]);
        assert_eq!(m.cdf_g(2).unwrap(), 0.5);
        assert_eq!(m.cdf_g(4).unwrap(), 1.0);
    }

    #[test]
    fn custom_k2_n3() {
        let fam = Family::CustomRanked {
            table: vec![
                TableEntry::new(vec![1, 2], 0.5),
                TableEntry::new(vec![3, 1], 0.5),
            ],
            s_star: None,
            alpha: None,
        };
        let m = SelectionModel::build(fam, 3, 2).unwrap();
        // brute force over ordered pairs: kappa(i, j) = gamma(min, max) / 2
        let mut brute = [0.0; 3];
        for i in 1..=3usize {
            for j in 1..=3usize {
                if i == j {
                    continue;
                }
                let key = vec![i.min(j), i.max(j)];
                let w = m
                    .ranked_table()
                    .iter()
                    .find(|e| e.ranks == key)
                    .map_or(0.0, |e| e.weight);
                brute[i - 1] += w / 2.0;
            }
        }
        assert_eq!(brute, [0.5, 0.25, 0.25]);
        assert_eq!(m.marginal_g(), brute.to_vec());
    }

    #[test]
    fn cdf_examples() {
        let m = SelectionModel::build(Family::MinPlusUniform, 11, 2).unwrap();
        assert!((m.cdf_g(3).unwrap() - 0.6).abs() < 1e-15);
        assert_eq!(m.cdf_g(0).unwrap(), 0.0);
        assert!((m.cdf_g(11).unwrap() - 1.0).abs() < 1e-12);
        assert!(matches!(
            m.cdf_g(12),
            Err(Error::RankOutOfRange { rank: 12, n: 11 })
        ));
    }

    #[test]
    fn thresholds() {
        let e2 = SelectionModel::build(Family::MinPlusUniform, 10, 2).unwrap();
        assert_eq!(e2.threshold_s_star(), Threshold::Known(0.5));
        let e1 = SelectionModel::build(Family::ReplaceKth { k: 2 }, 10, 1).unwrap();
        assert_eq!(e1.threshold_s_star(), Threshold::Known(1.0));
        let mpm = SelectionModel::build(Family::MinPlusMax, 10, 2).unwrap();
        assert_eq!(mpm.threshold_s_star(), Threshold::Known(0.5));
        assert!((min_plus_others_threshold(3, 0.0) - 1.0 / 3.0).abs() < 1e-15);
        let e3 = SelectionModel::build(
            Family::MinPlusOthers {
                table: vec![TableEntry::new(vec![2, 3], 0.5), TableEntry::new(vec![4, 5], 0.5)],
                alpha: Some(0.0),
            },
            6,
            3,
        )
        .unwrap();
        assert!((e3.threshold_s_star().value().unwrap() - 1.0 / 3.0).abs() < 1e-15);
        let custom = SelectionModel::build(
            Family::CustomRanked {
                table: vec![TableEntry::new(vec![1], 1.0)],
                s_star: None,
                alpha: None,
            },
            10,
            1,
        )
        .unwrap();
        assert_eq!(custom.threshold_s_star(), Threshold::Unknown);
        assert!(matches!(custom.check_a4(2, 0.1), Err(Error::UnknownThreshold)));
    }

    #[test]
    fn a4_min_plus_uniform() {
        // G_N(n) = 1/2 + (n-1)/(2(N-1)), so the finite-N deviation is 1/(2(N-1)).
        let m = SelectionModel::build(Family::MinPlusUniform, 100, 2).unwrap();
        let c = m.check_a4(2, 0.01).unwrap();
        assert!((c.sup_deviation - 1.0 / 198.0).abs() < 1e-12);
        assert!(c.holds);
        let mplus = SelectionModel::build(Family::MinPlusUniform, 10_000, 2).unwrap();
        assert!(mplus.check_a4(2, 1e-3).unwrap().sup_deviation < 1e-4);
    }

    #[test]
    fn a4_min_plus_max_fails() {
        let m = SelectionModel::build(Family::MinPlusMax, 100, 2).unwrap();
        let c = m.check_a4(2, 0.05).unwrap();
        assert!(!c.holds);
        assert!((c.sup_deviation - 0.5).abs() < 1e-12);
    }

    #[test]
    fn construction_errors() {
        assert!(matches!(
            SelectionModel::build(Family::MinPlusUniform, 10, 3),
            Err(Error::IncompatibleK { expected: 2, got: 3, .. })
        ));
        assert!(matches!(
            SelectionModel::build(Family::ReplaceKth { k: 1 }, 10, 2),
            Err(Error::IncompatibleK { expected: 1, .. })
        ));
        assert!(matches!(
            SelectionModel::build(Family::ReplaceKth { k: 11 }, 10, 1),
            Err(Error::RankOutOfRange { .. })
        ));
        let bad = |table: Vec<TableEntry>| {
            SelectionModel::build(
                Family::CustomRanked {
                    table,
                    s_star: None,
                    alpha: None,
                },
                5,
                2,
            )
        };
        assert!(matches!(
            bad(vec![TableEntry::new(vec![1, 2], -0.5), TableEntry::new(vec![1, 3], 1.5)]),
            Err(Error::InvalidTable(_))
        ));
        assert!(matches!(
            bad(vec![TableEntry::new(vec![2, 2], 1.0)]),
            Err(Error::InvalidTable(_))
        ));
        assert!(matches!(
            bad(vec![TableEntry::new(vec![1, 2], 0.9)]),
            Err(Error::InvalidTable(_))
        ));
        assert!(matches!(
            bad(vec![TableEntry::new(vec![1, 6], 1.0)]),
            Err(Error::InvalidTable(_))
        ));
        // within 1e-9: renormalized
        let m = bad(vec![
            TableEntry::new(vec![1, 2], 0.5 + 2e-10),
            TableEntry::new(vec![1, 3], 0.5),
        ])
        .unwrap();
        let total: f64 = m.ranked_table().iter().map(|e| e.weight).sum();
        assert!((total - 1.0).abs() < 1e-15);
    }

    #[test]
    fn e3_identity() {
        // phi over K-1 = 2 other ranks, unranked marginal f_N computed by brute force
        let others = vec![
            TableEntry::new(vec![2, 3], 0.2),
            TableEntry::new(vec![2, 5], 0.3),
            TableEntry::new(vec![4, 6], 0.5),
        ];
        let n = 6;
        let m = SelectionModel::build(
            Family::MinPlusOthers {
                table: others.clone(),
                alpha: None,
            },
            n,
            3,
        )
        .unwrap();
        // unranked symmetric phi(i, j) = phi_ranked / 2!
        let mut f = vec![0.0; n + 1];
        for e in &others {
            for &a in &e.ranks {
                f[a] += e.weight / 2.0;
            }
        }
        let g = m.marginal_g();
        assert!((g[0] - 1.0 / 3.0).abs() < 1e-15);
        for i in 2..=n {
            assert!((g[i - 1] - 2.0 / 3.0 * f[i]).abs() < 1e-15, "rank {i}");
        }
    }

    #[test]
    fn sample_fixed_and_e2() {
        let m = SelectionModel::build(Family::ReplaceKth { k: 2 }, 5, 1).unwrap();
        let mut rng = SimRng::new(3);
        for _ in 0..100 {
            assert_eq!(m.sample_ranks(&mut rng), vec![2]);
        }
        let m = SelectionModel::build(Family::MinPlusUniform, 10, 2).unwrap();
        let draws = 100_000;
        let mut counts = [0u64; 11];
        let mut with_min = 0;
        for _ in 0..draws {
            let r = m.sample_ranks(&mut rng);
            if r[0] == 1 {
                with_min += 1;
            }
            counts[r[1]] += 1;
        }
        assert_eq!(with_min, draws);
        let expected = draws as f64 / 9.0;
        let chi2: f64 = counts[2..]
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let p = 1.0 - ChiSquared::new(8.0).unwrap().cdf(chi2);
        assert!(p > 1e-3, "chi2 = {chi2}, p = {p}");
    }

    #[test]
    fn sample_marginal_matches_g() {
        let fam = Family::CustomRanked {
            table: vec![
                TableEntry::new(vec![1, 2, 3], 0.1),
                TableEntry::new(vec![1, 4, 6], 0.4),
                TableEntry::new(vec![2, 5, 6], 0.3),
                TableEntry::new(vec![3, 4, 5], 0.2),
            ],
            s_star: None,
            alpha: None,
        };
        let m = SelectionModel::build(fam, 6, 3).unwrap();
        let g = m.marginal_g();
        let mut rng = SimRng::new(11);
        let draws = 100_000usize;
        let mut hits = [0usize; 6];
        for _ in 0..draws {
            for r in m.sample_ranks(&mut rng) {
                hits[r - 1] += 1;
            }
        }
        // each draw picks K ranks; P[rank i selected] = K g(i)
        for i in 0..6 {
            let p = 3.0 * g[i];
            let sd = (p * (1.0 - p) / draws as f64).sqrt();
            let obs = hits[i] as f64 / draws as f64;
            assert!((obs - p).abs() <= 3.0 * sd + 1e-12, "rank {}: {obs} vs {p}", i + 1);
        }
    }

    #[test]
    fn json_roundtrip() {
        let fam = Family::CustomRanked {
            table: vec![TableEntry::new(vec![1, 2], 0.25), TableEntry::new(vec![1, 3], 0.75)],
            s_star: Some(0.5),
            alpha: None,
        };
        let m = SelectionModel::build(fam, 3, 2).unwrap();
        let json = m.to_json().unwrap();
        assert!(json.contains("\"N\": 3"));
        let back = SelectionModel::from_json(&json).unwrap();
        assert_eq!(back.to_doc(), m.to_doc());
        let e2 = SelectionModel::from_json(r#"{"family":"min_plus_uniform","N":10,"K":2}"#).unwrap();
        assert_eq!(e2.ranked_table().len(), 9);
    }

    fn custom_table_k2(n: usize) -> impl Strategy<Value = Vec<(usize, usize, u32)>> {
        proptest::collection::vec((1..=n, 1..=n, 1u32..20), 1..10)
            .prop_filter("distinct ranks", |v| v.iter().all(|(a, b, _)| a != b))
    }

    proptest! {
        #[test]
        fn ggamma_matches_brute_force_exactly(n in 2usize..=8, raw in custom_table_k2(8)) {
            let raw: Vec<_> = raw.into_iter().filter(|(a, b, _)| *a <= n && *b <= n).collect();
            prop_assume!(!raw.is_empty());
            let total: i128 = raw.iter().map(|t| t.2 as i128).sum();
            let entries: Vec<(Vec<usize>, Q)> = raw
                .iter()
                .map(|(a, b, w)| (vec![*a.min(b), *a.max(b)], q(*w as i128, total)))
                .collect();
            let g: Vec<Q> = ggamma_marginal(n, 2, entries.iter().map(|(r, w)| (r.as_slice(), *w)));
            // kappa on ordered pairs: each ranked tuple spread over its 2! orderings
            let mut brute = vec![Q::from_integer(0); n];
            for i in 1..=n {
                for j in 1..=n {
                    if i == j { continue; }
                    let key = vec![i.min(j), i.max(j)];
                    for (r, w) in &entries {
                        if *r == key {
                            brute[i - 1] += *w / Q::from_integer(2);
                        }
                    }
                }
            }
            prop_assert_eq!(&g, &brute);
            let total_g: Q = g.iter().copied().sum();
            prop_assert_eq!(total_g, Q::from_integer(1));
        }

        #[test]
        fn marginals_are_distributions(n in 3usize..60, kind in 0usize..3) {
            let m = match kind {
                0 => SelectionModel::build(Family::MinPlusUniform, n, 2).unwrap(),
                1 => SelectionModel::build(Family::MinPlusMax, n, 2).unwrap(),
                _ => SelectionModel::build(Family::ReplaceKth { k: 1 + n / 2 }, n, 1).unwrap(),
            };
            let md = m.marginals();
            prop_assert!((md.g.iter().sum::<f64>() - 1.0).abs() < 1e-10);
            prop_assert!(md.cdf.windows(2).all(|w| w[1] >= w[0]));
            prop_assert!((md.cdf[n] - 1.0).abs() < 1e-10);
            prop_assert!(md.g.iter().all(|x| *x >= 0.0));
        }
    }
}
