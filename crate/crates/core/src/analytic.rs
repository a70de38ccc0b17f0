//! Closed-form limit laws of the typical point and of the lower order
//! statistics, with a quadrature cross-check for the moments.

use serde::Serialize;

use crate::error::{Error, Result};

/// Limiting CDF of a typical point: `0` below `s*`, then linear to 1 at `s = 1`.
/// When `s* = 1` the law is the point mass at 1.
pub fn v_of_s(s: f64, s_star: f64) -> f64 {
    if s >= 1.0 {
        return 1.0;
    }
    if s < s_star || s_star >= 1.0 {
        return 0.0;
    }
    (s - s_star) / (1.0 - s_star)
}

/// `h_n(s)`, the limiting CDF of the `n`-th smallest value when `s* = 1/2`.
pub fn order_stat_cdf(n: usize, s: f64) -> f64 {
    assert!(n >= 1, "order statistics are one-based");
    if s <= 0.0 {
        0.0
    } else if s >= 0.5 {
        1.0
    } else if n == 1 {
        2.0 * s
    } else {
        (s / (1.0 - s)).powi(2 * (n as i32 - 1))
    }
}

/// Gauss hypergeometric series `2F1(a, b; c; z)` for `|z| < 1`, summed with
/// compensation until the remaining tail is below machine precision.
pub fn hyp2f1_series(a: f64, b: f64, c: f64, z: f64) -> f64 {
    assert!(z.abs() < 1.0, "series needs |z| < 1");
    let mut sum = 1.0f64;
    let mut comp = 0.0f64;
    let mut term = 1.0f64;
    for j in 0..100_000 {
        let j = j as f64;
        term *= (a + j) * (b + j) / ((c + j) * (j + 1.0)) * z;
        let y = term - comp;
        let t = sum + y;
        comp = (t - sum) - y;
        sum = t;
        if term.abs() <= f64::EPSILON * sum.abs() * (1.0 - z.abs()) {
            break;
        }
    }
    sum
}

/// `E[X^k]` under `h_n`.
pub fn order_stat_moment(n: usize, k: u32) -> f64 {
    assert!(n >= 1 && k >= 1);
    let half_k = 0.5f64.powi(k as i32);
    if n == 1 {
        return half_k / (k as f64 + 1.0);
    }
    let b = (2 * n) as f64 + k as f64 - 2.0;
    let a = (2 * n) as f64 - 2.0;
    half_k - k as f64 * 0.5f64.powf(b) / b * hyp2f1_series(a, b, b + 1.0, 0.5)
}

fn simpson(f: &impl Fn(f64) -> f64, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
    let m = 0.5 * (a + b);
    let fm = f(m);
    (m, fm, (b - a) / 6.0 * (fa + 4.0 * fm + fb))
}

#[allow(clippy::too_many_arguments)]
fn adaptive(
    f: &impl Fn(f64) -> f64,
    a: f64,
    fa: f64,
    b: f64,
    fb: f64,
    m: f64,
    fm: f64,
    whole: f64,
    tol: f64,
    depth: u32,
    worst: &mut f64,
) -> f64 {
    let (lm, flm, left) = simpson(f, a, fa, m, fm);
    let (rm, frm, right) = simpson(f, m, fm, b, fb);
    let delta = left + right - whole;
    if delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    if depth == 0 {
        *worst = worst.max(delta.abs());
        return left + right + delta / 15.0;
    }
    adaptive(f, a, fa, m, fm, lm, flm, left, tol / 2.0, depth - 1, worst)
        + adaptive(f, m, fm, b, fb, rm, frm, right, tol / 2.0, depth - 1, worst)
}

/// Adaptive Simpson quadrature to absolute tolerance `tol`.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> Result<f64> {
    integrate_to_depth(f, a, b, tol, 40)
}

fn integrate_to_depth(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> Result<f64> {
    let (fa, fb) = (f(a), f(b));
    let (m, fm, whole) = simpson(&f, a, fa, b, fb);
    let mut worst = 0.0;
    let v = adaptive(&f, a, fa, b, fb, m, fm, whole, tol, depth, &mut worst);
    if worst > 0.0 {
        return Err(Error::QuadratureNonConvergence { error: worst });
    }
    Ok(v)
}

/// `k * int_0^{1/2} s^(k-1) (1 - h_n(s)) ds` by quadrature, an oracle for
/// [`order_stat_moment`].
pub fn quadrature_moment_oracle(n: usize, k: u32) -> Result<f64> {
    assert!(n >= 1 && k >= 1);
    let kf = k as f64;
    integrate(
        |s| kf * s.powi(k as i32 - 1) * (1.0 - order_stat_cdf(n, s)),
        0.0,
        0.5,
        1e-10,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum LawLabel {
    TypicalPoint,
    OrderStat(usize),
}

/// A limiting one-dimensional law, parametrized by the threshold `s*`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LimitLaw {
    pub s_star: f64,
    pub label: LawLabel,
}

impl LimitLaw {
    pub fn typical_point(s_star: f64) -> Self {
        Self {
            s_star,
            label: LawLabel::TypicalPoint,
        }
    }

    /// Order-statistic law; defined for `s* = 1/2`.
    pub fn order_stat(n: usize) -> Self {
        Self {
            s_star: 0.5,
            label: LawLabel::OrderStat(n),
        }
    }

    pub fn cdf(&self, s: f64) -> f64 {
        match self.label {
            LawLabel::TypicalPoint => {
                if s <= 0.0 {
                    0.0
                } else {
                    v_of_s(s, self.s_star)
                }
            }
            LawLabel::OrderStat(n) => order_stat_cdf(n, s),
        }
    }

    /// Smallest `s` at which the CDF reaches 1.
    pub fn upper_edge(&self) -> f64 {
        match self.label {
            LawLabel::TypicalPoint => 1.0,
            LawLabel::OrderStat(_) => self.s_star,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum CoordinateLaw {
    PointMass(f64),
    Uniform01,
}

/// Limit of replacing only the `k`-th ranked value: ranks below `k` sit at 0,
/// rank `k` is uniform, ranks above sit at 1. For `k / N -> theta` a typical
/// point has atoms `theta` at 0 and `1 - theta` at 1.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WarmupLimit {
    pub coordinates: Vec<CoordinateLaw>,
    pub typical_atoms: Option<(f64, f64)>,
}

pub fn warmup_limit(n_points: usize, k: usize, theta: Option<f64>) -> Result<WarmupLimit> {
    if k == 0 || k > n_points {
        return Err(Error::RankOutOfRange { rank: k, n: n_points });
    }
    if let Some(t) = theta {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::InvalidParameter(format!("theta {t} outside [0, 1]")));
        }
    }
    let coordinates = (1..=n_points)
        .map(|i| match i.cmp(&k) {
            std::cmp::Ordering::Less => CoordinateLaw::PointMass(0.0),
            std::cmp::Ordering::Equal => CoordinateLaw::Uniform01,
            std::cmp::Ordering::Greater => CoordinateLaw::PointMass(1.0),
        })
        .collect();
    Ok(WarmupLimit {
        coordinates,
        typical_atoms: theta.map(|t| (t, 1.0 - t)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::counting::closed_form_pi_at;

    #[test]
    fn v_examples() {
        assert!((v_of_s(0.6, 0.5) - 0.2).abs() < 1e-15);
        assert_eq!(v_of_s(0.3, 0.3), 0.0);
        assert_eq!(v_of_s(1.0, 0.4), 1.0);
        assert_eq!(v_of_s(0.999, 1.0), 0.0);
        assert_eq!(v_of_s(1.0, 1.0), 1.0);
    }

    #[test]
    fn order_stat_cdf_examples() {
        assert_eq!(order_stat_cdf(1, 0.25), 0.5);
        assert!((order_stat_cdf(2, 0.25) - 1.0 / 9.0).abs() < 1e-15);
        assert!(order_stat_cdf(40, 0.4) < 1e-13);
        for n in 1..10 {
            assert_eq!(order_stat_cdf(n, 0.5), 1.0);
            assert_eq!(order_stat_cdf(n, 0.0), 0.0);
        }
    }

    #[test]
    fn order_stat_cdf_monotone() {
        for i in 1..50 {
            let s = i as f64 / 100.0;
            for n in 1..12 {
                assert!(order_stat_cdf(n, s) <= order_stat_cdf(n, s + 0.01));
                assert!(order_stat_cdf(n + 1, s) <= order_stat_cdf(n, s));
            }
        }
    }

    #[test]
    fn hyp2f1_known_values() {
        // 2F1(1, 1; 2; z) = -ln(1 - z) / z
        let z = 0.5f64;
        assert!((hyp2f1_series(1.0, 1.0, 2.0, z) - (-(1.0 - z).ln() / z)).abs() < 1e-13);
        // 2F1(a, b; b; z) = (1 - z)^(-a)
        assert!((hyp2f1_series(3.0, 5.0, 5.0, z) - 8.0).abs() < 1e-11);
    }

    #[test]
    fn moment_examples() {
        assert!((order_stat_moment(1, 1) - 0.25).abs() < 1e-15);
        assert!((order_stat_moment(1, 2) - 1.0 / 12.0).abs() < 1e-15);
        assert!((quadrature_moment_oracle(1, 1).unwrap() - 0.25).abs() < 1e-12);
        // E[X] for n = 2: 1/2 - int_0^{1/2} (s/(1-s))^2 ds = 1/2 - (3/2 - 2 ln 2)
        let exact = 0.5 - (1.5 - 2.0 * 2f64.ln());
        assert!((order_stat_moment(2, 1) - exact).abs() < 1e-12);
    }

    #[test]
    fn moments_agree_with_quadrature() {
        for n in 1..=6 {
            for k in 1..=4 {
                let a = order_stat_moment(n, k);
                let b = quadrature_moment_oracle(n, k).unwrap();
                assert!((a - b).abs() < 1e-8, "n={n} k={k}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn moments_bounded_and_monotone_in_n() {
        for k in 1..=4 {
            let cap = 0.5f64.powi(k as i32);
            let m: Vec<f64> = (2..=20).map(|n| order_stat_moment(n, k)).collect();
            assert!(m.iter().all(|&x| (0.0..=cap).contains(&x)));
            assert!(m.windows(2).all(|w| w[1] > w[0]));
            assert!(cap - order_stat_moment(200, k) < 1e-2);
        }
    }

    #[test]
    fn consistent_with_counting_law() {
        for i in 1..50 {
            let s = i as f64 / 100.0;
            for n in 1..=8 {
                let below: f64 = (0..n).map(|m| closed_form_pi_at(s, m)).sum();
                assert!((below - (1.0 - order_stat_cdf(n, s))).abs() < 1e-12, "s={s} n={n}");
            }
        }
    }

    #[test]
    fn quadrature_reports_nonconvergence() {
        let r = integrate_to_depth(|x| if x < 0.123_456_7 { 0.0 } else { 1.0 }, 0.0, 1.0, 1e-12, 6);
        assert!(matches!(r, Err(Error::QuadratureNonConvergence { .. })));
    }

    #[test]
    fn limit_law_shapes() {
        let t = LimitLaw::typical_point(0.5);
        assert_eq!(t.cdf(-1.0), 0.0);
        assert_eq!(t.cdf(0.5), 0.0);
        assert_eq!(t.cdf(1.0), 1.0);
        let o = LimitLaw::order_stat(3);
        assert_eq!(o.cdf(o.upper_edge()), 1.0);
        for i in 0..100 {
            let s = i as f64 / 100.0;
            assert!(t.cdf(s) <= t.cdf(s + 0.01) && o.cdf(s) <= o.cdf(s + 0.01));
        }
    }

    #[test]
    fn warmup_examples() {
        let w = warmup_limit(5, 1, None).unwrap();
        assert_eq!(w.coordinates[0], CoordinateLaw::Uniform01);
        assert!(w.coordinates[1..].iter().all(|c| *c == CoordinateLaw::PointMass(1.0)));
        let w = warmup_limit(5, 5, Some(0.5)).unwrap();
        assert!(w.coordinates[..4].iter().all(|c| *c == CoordinateLaw::PointMass(0.0)));
        assert_eq!(w.typical_atoms, Some((0.5, 0.5)));
        assert!(warmup_limit(5, 6, None).is_err());
    }
}
