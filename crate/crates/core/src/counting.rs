//! Counting-function chains: the finite-N chain of `C_t(s) = #{i : X^(i) <= s}`
//! and its `N = infinity` limit, with exact stationary solves.

use std::io::Write;

use num_traits::{FromPrimitive, Num};
use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use serde::Serialize;

use crate::engine::{InitSpec, Landscape, ReplacementLaw};
use crate::error::{Error, Result};
use crate::rng::SimRng;
use crate::selection::SelectionModel;
use crate::stats::{excursion_stats_from_lengths, ExcursionStats};

/// Transition kernel whose row `n` is supported on `n - K ..= n + K`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BandedKernel<T> {
    bandwidth: usize,
    /// `rows[n] = (lo, p)` with `p[j] = P(n, lo + j)`.
    rows: Vec<(usize, Vec<T>)>,
}

impl<T: Num + Clone> BandedKernel<T> {
    fn zeroed(n_states: usize, bandwidth: usize) -> Self {
        let rows = (0..n_states)
            .map(|n| {
                let lo = n.saturating_sub(bandwidth);
                let hi = (n + bandwidth).min(n_states - 1);
                (lo, vec![T::zero(); hi - lo + 1])
            })
            .collect();
        Self { bandwidth, rows }
    }

    /// Adds `mass` to `P(n, target)`; targets outside the state space stay at `n`.
    fn add(&mut self, n: usize, target: isize, mass: T) {
        let last = self.rows.len() as isize - 1;
        let m = if target < 0 || target > last {
            n
        } else {
            target as usize
        };
        let (lo, row) = &mut self.rows[n];
        let j = m - *lo;
        row[j] = row[j].clone() + mass;
    }

    pub fn n_states(&self) -> usize {
        self.rows.len()
    }

    pub fn bandwidth(&self) -> usize {
        self.bandwidth
    }

    /// `(lo, p)` with `p[j] = P(n, lo + j)`.
    pub fn row(&self, n: usize) -> (usize, &[T]) {
        let (lo, p) = &self.rows[n];
        (*lo, p)
    }

    pub fn get(&self, n: usize, m: usize) -> T {
        let (lo, p) = &self.rows[n];
        if m < *lo {
            return T::zero();
        }
        p.get(m - lo).cloned().unwrap_or_else(T::zero)
    }

    pub fn row_sum(&self, n: usize) -> T {
        self.rows[n].1.iter().cloned().fold(T::zero(), |a, b| a + b)
    }

    pub fn map<U, F: Fn(&T) -> U>(&self, f: F) -> BandedKernel<U> {
        BandedKernel {
            bandwidth: self.bandwidth,
            rows: self
                .rows
                .iter()
                .map(|(lo, p)| (*lo, p.iter().map(&f).collect()))
                .collect(),
        }
    }
}

impl<T: Num + Clone + FromPrimitive> BandedKernel<T> {
    /// Expected increment `sum_m (m - n) P(n, m)`.
    pub fn drift(&self, n: usize) -> T {
        let (lo, p) = &self.rows[n];
        let mut acc = T::zero();
        for (j, x) in p.iter().enumerate() {
            let m = lo + j;
            let d = if m >= n {
                T::from_usize(m - n).expect("small integer")
            } else {
                T::zero() - T::from_usize(n - m).expect("small integer")
            };
            acc = acc + d * x.clone();
        }
        acc
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ChainKind {
    FiniteN(usize),
    /// Truncated at the largest state.
    LimitChain,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CountingChain {
    pub kind: ChainKind,
    pub s: f64,
    pub kernel: BandedKernel<f64>,
    /// `F_N(n)` for `n = 0..=N`, for two-point min-plus-other models.
    pub f_table: Option<Vec<f64>>,
    /// `G_N(n)` for `n = 0..=N`, for chains built from a general model.
    pub g_table: Option<Vec<f64>>,
}

fn check_level(s: f64) -> Result<()> {
    if s > 0.0 && s < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("level s = {s} must lie in (0, 1)")))
    }
}

fn validate_f_table<T: Num + Clone + PartialOrd>(n_points: usize, f: &[T]) -> Result<()> {
    if n_points < 2 {
        return Err(Error::BadFTable("need at least two points".into()));
    }
    if f.len() != n_points + 1 {
        return Err(Error::BadFTable(format!(
            "expected {} entries for n = 0..=N, got {}",
            n_points + 1,
            f.len()
        )));
    }
    if !(f[0].is_zero() && f[1].is_zero()) {
        return Err(Error::BadFTable("F(0) and F(1) must be 0".into()));
    }
    if !f[n_points].is_one() {
        return Err(Error::BadFTable("F(N) must be 1".into()));
    }
    if f.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::BadFTable("F must be nondecreasing".into()));
    }
    Ok(())
}

/// Kernel of the count at level `s` when each step removes the minimum and one
/// other point whose rank has CDF `f_table`, then inserts two fresh uniforms.
pub fn build_finite_kernel_exact<T>(n_points: usize, s: T, f_table: &[T]) -> Result<BandedKernel<T>>
where
    T: Num + Clone + PartialOrd,
{
    validate_f_table(n_points, f_table)?;
    let one = T::one();
    let two = one.clone() + one.clone();
    let q = one.clone() - s.clone();
    let (qq, sq, ss) = (
        q.clone() * q.clone(),
        two * s.clone() * q.clone(),
        s.clone() * s.clone(),
    );
    let mut k = BandedKernel::zeroed(n_points + 1, 2);
    k.add(0, 0, qq.clone());
    k.add(0, 1, sq.clone());
    k.add(0, 2, ss.clone());
    for n in 1..=n_points {
        let f = f_table[n].clone();
        let nf = one.clone() - f.clone();
        let ni = n as isize;
        k.add(n, ni - 2, qq.clone() * f.clone());
        k.add(n, ni - 1, sq.clone() * f.clone() + qq.clone() * nf.clone());
        k.add(n, ni, ss.clone() * f.clone() + sq.clone() * nf.clone());
        k.add(n, ni + 1, ss.clone() * nf);
    }
    Ok(k)
}

/// Floating-point finite chain; `f_table` entries within 1e-12 of 0 or 1 snap.
pub fn build_finite_kernel(n_points: usize, s: f64, f_table: &[f64]) -> Result<CountingChain> {
    check_level(s)?;
    let f: Vec<f64> = f_table
        .iter()
        .map(|&x| {
            if x.abs() < 1e-12 {
                0.0
            } else if (x - 1.0).abs() < 1e-12 {
                1.0
            } else {
                x
            }
        })
        .collect();
    if f.iter().any(|x| !(0.0..=1.0).contains(x)) {
        return Err(Error::BadFTable("entries must lie in [0, 1]".into()));
    }
    let kernel = build_finite_kernel_exact(n_points, s, &f)?;
    Ok(CountingChain {
        kind: ChainKind::FiniteN(n_points),
        s,
        kernel,
        f_table: Some(f),
        g_table: None,
    })
}

/// `F_N(n)`: CDF of the non-minimal selected rank of a two-point model that
/// always selects rank 1.
pub fn f_table_from_model(model: &SelectionModel) -> Result<Vec<f64>> {
    if model.k_replace() != 2 {
        return Err(Error::IncompatibleK {
            family: model.family().name(),
            expected: 2,
            got: model.k_replace(),
        });
    }
    let n = model.n_points();
    let mut f = vec![0.0; n + 1];
    for e in model.ranked_table() {
        if e.ranks[0] != 1 {
            return Err(Error::BadFTable(format!(
                "tuple {:?} does not contain the minimum",
                e.ranks
            )));
        }
        f[e.ranks[1]] += e.weight;
    }
    for i in 1..=n {
        f[i] += f[i - 1];
    }
    Ok(f)
}

fn binomial_row<T: Num + Clone + FromPrimitive>(k: usize, s: &T) -> Vec<T> {
    let q = T::one() - s.clone();
    let mut c = 1u64;
    (0..=k)
        .map(|b| {
            if b > 0 {
                c = c * (k - b + 1) as u64 / b as u64;
            }
            let mut p = T::from_u64(c).expect("small integer");
            for _ in 0..b {
                p = p * s.clone();
            }
            for _ in b..k {
                p = p * q.clone();
            }
            p
        })
        .collect()
}

/// Kernel of the count for an arbitrary ranked table with `K`-tuples.
///
/// With `A(n)` the number of selected ranks at most `n` and `B ~ Bin(K, s)`
/// the fresh values at most `s`, the count moves from `n` to `n - A(n) + B`.
pub fn build_kernel_from_table<T>(
    n_points: usize,
    k_replace: usize,
    entries: &[(Vec<usize>, T)],
    s: T,
) -> BandedKernel<T>
where
    T: Num + Clone + FromPrimitive,
{
    // a[j][n] = P[A(n) = j] via difference arrays over n
    let mut diff = vec![vec![T::zero(); n_points + 2]; k_replace + 1];
    for (ranks, w) in entries {
        let mut prev = 0;
        for j in 0..=k_replace {
            let next = ranks.get(j).copied().unwrap_or(n_points + 1);
            diff[j][prev] = diff[j][prev].clone() + w.clone();
            diff[j][next] = diff[j][next].clone() - w.clone();
            prev = next;
        }
    }
    let bin = binomial_row(k_replace, &s);
    let mut kernel = BandedKernel::zeroed(n_points + 1, k_replace);
    let mut a = vec![T::zero(); k_replace + 1];
    for n in 0..=n_points {
        for j in 0..=k_replace {
            a[j] = a[j].clone() + diff[j][n].clone();
        }
        for (j, pa) in a.iter().enumerate() {
            if pa.is_zero() {
                continue;
            }
            for (b, pb) in bin.iter().enumerate() {
                let m = n as isize - j as isize + b as isize;
                kernel.add(n, m, pa.clone() * pb.clone());
            }
        }
    }
    kernel
}

/// Finite-N chain of the count at level `s` for any selection model.
pub fn build_chain_from_model(model: &SelectionModel, s: f64) -> Result<CountingChain> {
    check_level(s)?;
    let entries: Vec<(Vec<usize>, f64)> = model
        .ranked_table()
        .iter()
        .map(|e| (e.ranks.clone(), e.weight))
        .collect();
    let kernel = build_kernel_from_table(model.n_points(), model.k_replace(), &entries, s);
    let f_table = f_table_from_model(model).ok();
    Ok(CountingChain {
        kind: ChainKind::FiniteN(model.n_points()),
        s,
        kernel,
        f_table,
        g_table: Some(model.marginals().cdf),
    })
}

/// `n -> K (s - G_N(n))`, the expected one-step increment of the count.
/// Arguments beyond `N` are treated as `N`.
pub fn build_general_drift(model: &SelectionModel, s: f64) -> impl Fn(usize) -> f64 + Send + Sync {
    let cdf = model.marginals().cdf;
    let k = model.k_replace() as f64;
    move |n| k * (s - cdf[n.min(cdf.len() - 1)])
}

/// Default truncation: tail of the limiting stationary law beyond it is below 1e-10.
pub fn default_limit_cap(s: f64) -> usize {
    let r2 = (s / (1.0 - s)).powi(2);
    let c = (24.0 / r2.ln().abs()).ceil();
    if c.is_finite() {
        (c as usize).max(10)
    } else {
        10
    }
}

/// The `N = infinity` chain on `{0, ..., cap}`; mass above `cap` stays at `cap`.
pub fn build_limit_kernel(s: f64, cap: usize) -> Result<CountingChain> {
    check_level(s)?;
    if cap < 10 {
        return Err(Error::InvalidParameter(format!("cap {cap} below 10")));
    }
    let q = 1.0 - s;
    let (down, stay, up) = (q * q, 2.0 * s * q, s * s);
    let mut k = BandedKernel::zeroed(cap + 1, 2);
    k.add(0, 0, down);
    k.add(0, 1, stay);
    k.add(0, 2, up);
    for n in 1..=cap {
        let ni = n as isize;
        k.add(n, ni - 1, down);
        k.add(n, ni, stay);
        k.add(n, ni + 1, up);
    }
    Ok(CountingChain {
        kind: ChainKind::LimitChain,
        s,
        kernel: k,
        f_table: None,
        g_table: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Provenance {
    ExactSolve,
    ClosedForm,
    Empirical(u64),
}

impl Provenance {
    fn label(&self) -> String {
        match self {
            Provenance::ExactSolve => "exact_solve".into(),
            Provenance::ClosedForm => "closed_form".into(),
            Provenance::Empirical(n) => format!("empirical({n})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StationaryDist {
    pub probs: Vec<f64>,
    pub provenance: Provenance,
    pub mean: f64,
}

impl StationaryDist {
    fn with_mean(probs: Vec<f64>, provenance: Provenance) -> Self {
        let mean = probs.iter().enumerate().map(|(n, p)| n as f64 * p).sum();
        Self {
            probs,
            provenance,
            mean,
        }
    }

    /// Empirical frequencies of a count histogram.
    pub fn empirical(counts: &[u64]) -> Result<Self> {
        let total: u64 = counts.iter().sum();
        if total == 0 {
            return Err(Error::EmptySample);
        }
        let probs = counts.iter().map(|&c| c as f64 / total as f64).collect();
        Ok(Self::with_mean(probs, Provenance::Empirical(total)))
    }

    pub fn prob(&self, n: usize) -> f64 {
        self.probs.get(n).copied().unwrap_or(0.0)
    }

    /// `P[C <= n]`.
    pub fn cdf(&self, n: usize) -> f64 {
        self.probs.iter().take(n + 1).sum()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(w);
        out.write_record(["state", "probability", "provenance"])?;
        let label = self.provenance.label();
        for (n, p) in self.probs.iter().enumerate() {
            out.write_record([n.to_string(), format!("{p:e}"), label.clone()])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Closed classes of the kernel's support graph, each sorted.
pub fn closed_classes(kernel: &BandedKernel<f64>) -> Vec<Vec<usize>> {
    let n = kernel.n_states();
    let mut g = DiGraph::<(), ()>::with_capacity(n, n * (2 * kernel.bandwidth() + 1));
    let nodes: Vec<_> = (0..n).map(|_| g.add_node(())).collect();
    for i in 0..n {
        let (lo, p) = kernel.row(i);
        for (j, &x) in p.iter().enumerate() {
            if x > 0.0 && lo + j != i {
                g.add_edge(nodes[i], nodes[lo + j], ());
            }
        }
    }
    let sccs = tarjan_scc(&g);
    let mut comp = vec![0usize; n];
    for (c, scc) in sccs.iter().enumerate() {
        for v in scc {
            comp[v.index()] = c;
        }
    }
    let mut closed = vec![true; sccs.len()];
    for e in g.raw_edges() {
        let (a, b) = (comp[e.source().index()], comp[e.target().index()]);
        if a != b {
            closed[a] = false;
        }
    }
    let mut out: Vec<Vec<usize>> = sccs
        .into_iter()
        .zip(closed)
        .filter(|(_, c)| *c)
        .map(|(scc, _)| {
            let mut v: Vec<usize> = scc.into_iter().map(|x| x.index()).collect();
            v.sort_unstable();
            v
        })
        .collect();
    out.sort();
    out
}

/// Grassmann-Taksar-Heyman state reduction on `m` states whose entries
/// satisfy `P(i, j) = 0` for `|i - j| > b`. Returns the normalized solution.
fn gth(m: usize, b: usize, entry: impl Fn(usize, usize) -> f64) -> Vec<f64> {
    let w = 2 * b + 1;
    let mut a = vec![0.0; m * w];
    let idx = |i: usize, j: usize| i * w + (j + b - i);
    for i in 0..m {
        for j in i.saturating_sub(b)..=(i + b).min(m - 1) {
            a[idx(i, j)] = entry(i, j);
        }
    }
    let mut exit = vec![0.0; m];
    for n in (1..m).rev() {
        let lo = n.saturating_sub(b);
        let sn: f64 = (lo..n).map(|j| a[idx(n, j)]).sum();
        exit[n] = sn;
        if sn <= 0.0 {
            continue;
        }
        for i in lo..n {
            let f = a[idx(i, n)] / sn;
            if f == 0.0 {
                continue;
            }
            for j in lo..n {
                a[idx(i, j)] += f * a[idx(n, j)];
            }
        }
    }
    let mut pi = vec![0.0; m];
    pi[0] = 1.0;
    for n in 1..m {
        let lo = n.saturating_sub(b);
        let inflow: f64 = (lo..n).map(|i| pi[i] * a[idx(i, n)]).sum();
        pi[n] = if exit[n] > 0.0 { inflow / exit[n] } else { 0.0 };
    }
    let total: f64 = pi.iter().sum();
    pi.iter_mut().for_each(|x| *x /= total);
    pi
}

/// Stationary law of a banded kernel with a unique closed class; transient
/// states get probability 0.
pub fn solve_kernel(kernel: &BandedKernel<f64>) -> Result<Vec<f64>> {
    let classes = closed_classes(kernel);
    if classes.len() != 1 {
        return Err(Error::ReducibleChain {
            closed_classes: classes.len(),
        });
    }
    let class = &classes[0];
    let (first, last) = (class[0], class[class.len() - 1]);
    let mut probs = vec![0.0; kernel.n_states()];
    if last - first + 1 == class.len() {
        let pi = gth(class.len(), kernel.bandwidth(), |i, j| {
            kernel.get(first + i, first + j)
        });
        probs[first..=last].copy_from_slice(&pi);
    } else {
        let m = class.len();
        let pi = gth(m, m - 1, |i, j| kernel.get(class[i], class[j]));
        for (i, &state) in class.iter().enumerate() {
            probs[state] = pi[i];
        }
    }
    Ok(probs)
}

pub fn solve_stationary(chain: &CountingChain) -> Result<StationaryDist> {
    Ok(StationaryDist::with_mean(
        solve_kernel(&chain.kernel)?,
        Provenance::ExactSolve,
    ))
}

fn check_subcritical(s: f64) -> Result<()> {
    check_level(s)?;
    if s >= 0.5 {
        return Err(Error::Supercritical { s });
    }
    Ok(())
}

/// `pi^s(n)` of the limit chain, for `0 < s < 1/2`.
pub fn closed_form_pi_at(s: f64, n: usize) -> f64 {
    let r2 = (s / (1.0 - s)).powi(2);
    match n {
        0 => 1.0 - 2.0 * s,
        1 => 2.0 * s - r2,
        _ => (1.0 - r2) * r2.powi(n as i32 - 1),
    }
}

/// Closed-form limiting stationary law, truncated where the tail drops
/// below 1e-15; `mean` is exact.
pub fn closed_form_pi(s: f64) -> Result<StationaryDist> {
    check_subcritical(s)?;
    let r2 = (s / (1.0 - s)).powi(2);
    let cap = ((34.6 / r2.ln().abs()).ceil() as usize + 1).max(10);
    let probs = (0..=cap).map(|n| closed_form_pi_at(s, n)).collect();
    Ok(StationaryDist {
        probs,
        provenance: Provenance::ClosedForm,
        mean: 2.0 * s + s * s / (1.0 - 2.0 * s),
    })
}

/// Birth-death chain obtained by merging states 0 and 1 of the limit chain.
/// Merged state `k` stands for `{0, 1}` when `k = 0` and for `k + 1` otherwise.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MergedChain {
    pub s: f64,
    /// Truncated at its largest state; mass above stays put.
    pub kernel: BandedKernel<f64>,
}

impl MergedChain {
    /// Detailed-balance stationary law `(1 - r^2) r^(2k)`, `r = s / (1 - s)`.
    pub fn pi_bar(&self, k: usize) -> f64 {
        let r2 = (self.s / (1.0 - self.s)).powi(2);
        (1.0 - r2) * r2.powi(k as i32)
    }

    pub fn stationary(&self) -> StationaryDist {
        let probs = (0..self.kernel.n_states()).map(|k| self.pi_bar(k)).collect();
        StationaryDist::with_mean(probs, Provenance::ClosedForm)
    }

    /// Recovers `(pi(0), pi(1))` from `pi(0) = (1 - s)^2 (pi(0) + pi(1))`.
    pub fn disentangle(&self) -> (f64, f64) {
        let merged = self.pi_bar(0);
        let p0 = (1.0 - self.s).powi(2) * merged;
        (p0, merged - p0)
    }
}

pub fn merged_chain_reduction(s: f64) -> Result<MergedChain> {
    check_subcritical(s)?;
    let cap = default_limit_cap(s);
    let q = 1.0 - s;
    let (down, stay, up) = (q * q, 2.0 * s * q, s * s);
    let mut k = BandedKernel::zeroed(cap + 1, 1);
    k.add(0, 0, 1.0 - up);
    k.add(0, 1, up);
    for n in 1..=cap {
        let ni = n as isize;
        k.add(n, ni - 1, down);
        k.add(n, ni, stay);
        k.add(n, ni + 1, up);
    }
    Ok(MergedChain { s, kernel: k })
}

/// Mean return time of the limit count to 0.
pub fn return_time_expectation(s: f64) -> f64 {
    if s < 0.5 {
        1.0 / (1.0 - 2.0 * s)
    } else {
        f64::INFINITY
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReturnTimeEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub trials: usize,
    pub total_steps: u64,
}

/// Mean first-return time of the count at level `s` to 0.
///
/// The count is itself a Markov chain, so successive excursions from 0 of one
/// long run are independent trials. The run starts with every value above `s`.
/// An excursion longer than `step_cap` aborts with `TrialBudgetExceeded`.
pub fn estimate_return_time(
    model: &SelectionModel,
    law: &ReplacementLaw,
    s: f64,
    trials: usize,
    step_cap: u64,
    rng: &mut SimRng,
) -> Result<ReturnTimeEstimate> {
    check_level(s)?;
    if trials == 0 {
        return Err(Error::InvalidParameter("need at least one trial".into()));
    }
    let mut landscape = Landscape::init(model.n_points(), &InitSpec::UniformAbove(s), rng)?;
    let mut lengths = Vec::with_capacity(trials);
    let mut t = 0u64;
    let mut total = 0u64;
    while lengths.len() < trials {
        landscape.step(model, law, rng);
        t += 1;
        total += 1;
        if landscape.count_at(s) == 0 {
            lengths.push(t);
            t = 0;
        } else if t >= step_cap {
            return Err(Error::TrialBudgetExceeded {
                cap: step_cap,
                completed: lengths.len(),
            });
        }
    }
    let ExcursionStats {
        mean_length,
        stderr,
        num_excursions,
        ..
    } = excursion_stats_from_lengths(lengths)?;
    Ok(ReturnTimeEstimate {
        mean: mean_length,
        stderr,
        trials: num_excursions,
        total_steps: total,
    })
}
