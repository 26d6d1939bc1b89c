//! ArcTanh envelope fits of actual change against predicted rank, and the
//! correct/inverted mixture weights built from them.

use std::io::Write;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::DecompositionError;
use crate::quarter::QuarterLabel;
use crate::stats;

pub const MIN_POINTS: usize = 10;
pub const CLAMP: f64 = 1e-6;
pub const MAX_ITERATIONS: usize = 500;
pub const GRADIENT_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArcTanhFit {
    pub c0: f64,
    pub c1: f64,
    /// Rank scale; `s · N` stays inside (0, 2).
    pub s: f64,
    pub r_squared: f64,
}

fn clamp_arg(u: f64) -> (f64, bool) {
    let lim = 1.0 - CLAMP;
    if u > lim {
        (lim, true)
    } else if u < -lim {
        (-lim, true)
    } else {
        (u, false)
    }
}

impl ArcTanhFit {
    /// Curve value at rank `r` (1-based).
    pub fn value(&self, r: usize) -> f64 {
        self.c0 + self.c1 * clamp_arg(1.0 - self.s * r as f64).0.atanh()
    }

    pub fn curve(&self, n: usize) -> Vec<f64> {
        (1..=n).map(|r| self.value(r)).collect()
    }
}

/// Model in the internal parameterization `tau = s · N`.
struct Model<'a> {
    y: &'a [f64],
    n: f64,
}

impl Model<'_> {
    fn args(&self, tau: f64) -> impl Iterator<Item = (f64, bool, f64)> + '_ {
        (1..=self.y.len()).map(move |r| {
            let rn = r as f64 / self.n;
            let (u, clamped) = clamp_arg(1.0 - tau * rn);
            (u, clamped, rn)
        })
    }

    fn cost(&self, p: [f64; 3]) -> f64 {
        self.args(p[2])
            .zip(self.y)
            .map(|((u, _, _), y)| (y - p[0] - p[1] * u.atanh()).powi(2))
            .sum::<f64>()
            * 0.5
    }

    /// Normal matrix and gradient of the half squared residual.
    fn normal(&self, p: [f64; 3]) -> ([[f64; 3]; 3], [f64; 3]) {
        let mut a = [[0.0; 3]; 3];
        let mut g = [0.0; 3];
        for ((u, clamped, rn), y) in self.args(p[2]).zip(self.y) {
            let at = u.atanh();
            let res = y - p[0] - p[1] * at;
            let dtau = if clamped { 0.0 } else { -p[1] * rn / (1.0 - u * u) };
            let j = [1.0, at, dtau];
            for i in 0..3 {
                g[i] += j[i] * res;
                for k in 0..3 {
                    a[i][k] += j[i] * j[k];
                }
            }
        }
        (a, g)
    }

    /// Best (c0, c1) for a fixed `tau` and the resulting cost.
    fn linear(&self, tau: f64) -> ([f64; 3], f64) {
        let at: Vec<f64> = self.args(tau).map(|(u, _, _)| u.atanh()).collect();
        let var = stats::variance(&at);
        let c1 = if var > 0.0 { stats::covariance(&at, self.y) / var } else { 0.0 };
        let c0 = stats::mean(self.y) - c1 * stats::mean(&at);
        let p = [c0, c1, tau];
        (p, self.cost(p))
    }
}

fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let piv = (col..3).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..3 {
            let f = a[row][col] / a[col][col];
            for k in col..3 {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let s: f64 = (row + 1..3).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Some(x)
}

fn norm(v: [f64; 3]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Least-squares fit of `c0 + c1·atanh(1 − s·r)`, r = 1..N, by damped
/// Gauss-Newton. Starts from the best linear fit over a grid of scales.
pub fn fit_arctanh(ordered_changes: &[f64]) -> Result<ArcTanhFit, DecompositionError> {
    let y = ordered_changes;
    if y.len() < MIN_POINTS {
        return Err(DecompositionError::TooShort(y.len()));
    }
    let n = y.len() as f64;
    let model = Model { y, n };
    let tau_min = 1e-9;
    let tau_max = 2.0 - 1e-9;

    let (mut p, mut cost) = (1..40)
        .map(|k| model.linear(k as f64 * 0.05))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("grid is nonempty");

    let mut lambda = 1e-3;
    let mut converged = false;
    let mut gnorm = f64::INFINITY;
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let (mut a, mut g) = model.normal(p);
        // scale pinned at a bound by a gradient pointing outward: solve for the
        // coefficients alone
        let pinned = (p[2] >= tau_max && g[2] > 0.0) || (p[2] <= tau_min && g[2] < 0.0);
        if pinned {
            for i in 0..3 {
                a[2][i] = 0.0;
                a[i][2] = 0.0;
            }
            a[2][2] = 1.0;
            g[2] = 0.0;
        }
        gnorm = norm(g);
        if gnorm < GRADIENT_TOLERANCE {
            converged = true;
            break;
        }
        let mut improved = false;
        while lambda < 1e20 {
            let mut damped = a;
            for (i, row) in damped.iter_mut().enumerate() {
                row[i] += lambda * a[i][i].max(1e-12);
            }
            if let Some(step) = solve3(damped, g) {
                let mut q = [p[0] + step[0], p[1] + step[1], p[2] + step[2]];
                q[2] = q[2].clamp(tau_min, tau_max);
                let c = model.cost(q);
                if c < cost {
                    p = q;
                    cost = c;
                    lambda = (lambda / 10.0).max(1e-15);
                    improved = true;
                    break;
                }
            }
            lambda *= 10.0;
        }
        if !improved {
            // no descent step exists at working precision
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(DecompositionError::NoConvergence {
            iterations,
            c0: p[0],
            c1: p[1],
            s: p[2] / n,
            gradient_norm: gnorm,
        });
    }

    let my = stats::mean(y);
    let ss_tot: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let ss_res = 2.0 * cost;
    let r_squared = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    Ok(ArcTanhFit {
        c0: p[0],
        c1: p[1],
        s: p[2] / n,
        r_squared,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureWeights {
    pub theta1: f64,
    pub theta2: f64,
    pub ci95: f64,
    pub w_success: f64,
}

impl MixtureWeights {
    pub fn success(&self) -> bool {
        self.w_success > 0.0
    }
}

/// Weight of the correct curve in `actual ≈ θ·correct + (1 − θ)·incorrect`,
/// clamped to [0, 1].
pub fn decompose_weights(
    actual_by_predicted_rank: &[f64],
    correct_fit: &ArcTanhFit,
    incorrect_fit: &ArcTanhFit,
) -> Result<MixtureWeights, DecompositionError> {
    let y = actual_by_predicted_rank;
    let n = y.len();
    if n < MIN_POINTS {
        return Err(DecompositionError::TooShort(n));
    }
    let c = correct_fit.curve(n);
    let i = incorrect_fit.curve(n);
    let d: Vec<f64> = c.iter().zip(&i).map(|(a, b)| a - b).collect();
    let sdd: f64 = d.iter().map(|x| x * x).sum();
    let scale: f64 = c.iter().chain(&i).map(|x| x * x).sum::<f64>().max(f64::MIN_POSITIVE);
    if sdd <= 1e-24 * scale {
        return Err(DecompositionError::Degenerate);
    }
    let sdy: f64 = d.iter().zip(y.iter().zip(&i)).map(|(d, (y, i))| d * (y - i)).sum();
    let raw = sdy / sdd;
    let ss_res: f64 = d
        .iter()
        .zip(y.iter().zip(&i))
        .map(|(d, (y, i))| (y - i - raw * d).powi(2))
        .sum();
    let se = (ss_res / (n - 1) as f64 / sdd).sqrt();
    let theta1 = raw.clamp(0.0, 1.0);
    let theta2 = 1.0 - theta1;
    Ok(MixtureWeights {
        theta1,
        theta2,
        ci95: 1.96 * se,
        w_success: theta1 - theta2,
    })
}

/// Envelope fits for one cross-section: descending sort for the correct
/// curve, ascending for the inverted one, then the mixture weights.
pub fn quarter_weights(actual_by_predicted_rank: &[f64]) -> Result<MixtureWeights, DecompositionError> {
    let mut desc = actual_by_predicted_rank.to_vec();
    desc.sort_by(|a, b| b.total_cmp(a));
    let correct = fit_arctanh(&desc)?;
    desc.reverse();
    let incorrect = fit_arctanh(&desc)?;
    decompose_weights(actual_by_predicted_rank, &correct, &incorrect)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuarterWeights {
    pub quarter: QuarterLabel,
    pub weights: Option<MixtureWeights>,
    /// Why the quarter could not be decomposed.
    pub failure: Option<String>,
}

impl QuarterWeights {
    pub fn success(&self) -> Option<bool> {
        self.weights.map(|w| w.success())
    }
}

/// Mixture weights per quarter from the actual changes listed in predicted
/// order (missing changes are skipped). Failed quarters are flagged.
pub fn success_weight_series(quarters: &[QuarterLabel], ranked_changes: &[Vec<Option<f64>>]) -> Result<Vec<QuarterWeights>, DecompositionError> {
    if quarters.len() != ranked_changes.len() {
        return Err(DecompositionError::LengthMismatch(quarters.len(), ranked_changes.len()));
    }
    Ok(quarters
        .par_iter()
        .zip(ranked_changes)
        .map(|(&quarter, row)| {
            let ys: Vec<f64> = row.iter().filter_map(|x| *x).collect();
            match quarter_weights(&ys) {
                Ok(w) => QuarterWeights {
                    quarter,
                    weights: Some(w),
                    failure: None,
                },
                Err(e) => {
                    warn!("quarter {quarter}: decomposition failed: {e}");
                    QuarterWeights {
                        quarter,
                        weights: None,
                        failure: Some(e.to_string()),
                    }
                }
            }
        })
        .collect())
}

/// `quarter,theta1,theta2,ci95,W_success,success_flag`; failed quarters have
/// empty cells.
pub fn write_weights_csv<W: Write>(series: &[QuarterWeights], sink: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["quarter", "theta1", "theta2", "ci95", "W_success", "success_flag"])?;
    for q in series {
        match q.weights {
            Some(m) => w.write_record([
                q.quarter.to_string(),
                m.theta1.to_string(),
                m.theta2.to_string(),
                m.ci95.to_string(),
                m.w_success.to_string(),
                u8::from(m.success()).to_string(),
            ])?,
            None => w.write_record([q.quarter.to_string(), String::new(), String::new(), String::new(), String::new(), String::new()])?,
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    const CORRECT: ArcTanhFit = ArcTanhFit {
        c0: -0.254,
        c1: 0.346,
        s: 0.000689,
        r_squared: 1.0,
    };

    #[test]
    fn exact_recovery() {
        let y = CORRECT.curve(1452);
        let fit = fit_arctanh(&y).unwrap();
        assert!((fit.c0 - CORRECT.c0).abs() < 1e-6, "{fit:?}");
        assert!((fit.c1 - CORRECT.c1).abs() < 1e-6, "{fit:?}");
        assert!((fit.s - CORRECT.s).abs() < 1e-6, "{fit:?}");
        assert!(fit.r_squared > 1.0 - 1e-9);
        assert!(fit.s * 1452.0 > 0.0 && fit.s * 1452.0 < 2.0);
    }

    #[test]
    fn noisy_recovery_is_unbiased() {
        let clean = CORRECT.curve(1452);
        let mut sums = [0.0; 3];
        for seed in 0..20u64 {
            let mut rng = crate::rng::stream(seed);
            let y: Vec<f64> = clean.iter().map(|v| v + 0.05 * rng.sample::<f64, _>(StandardNormal)).collect();
            let fit = fit_arctanh(&y).unwrap();
            sums[0] += fit.c0 / CORRECT.c0;
            sums[1] += fit.c1 / CORRECT.c1;
            sums[2] += fit.s / CORRECT.s;
        }
        for ratio in sums {
            assert!((ratio / 20.0 - 1.0).abs() < 0.1, "{sums:?}");
        }
    }

    #[test]
    fn constant_data() {
        let fit = fit_arctanh(&[0.03; 50]).unwrap();
        assert!(fit.c1.abs() < 1e-6);
        assert!((fit.c0 - 0.03).abs() < 1e-9);
    }

    #[test]
    fn reversal_flips_amplitude() {
        let mut rng = crate::rng::stream(5);
        let mut y: Vec<f64> = (0..400).map(|_| 0.2 * rng.sample::<f64, _>(StandardNormal)).collect();
        y.sort_by(|a, b| b.total_cmp(a));
        let down = fit_arctanh(&y).unwrap();
        y.reverse();
        let up = fit_arctanh(&y).unwrap();
        assert!(down.c1 > 0.0 && up.c1 < 0.0);
        assert!(((down.c1 + up.c1) / down.c1).abs() < 0.05, "{down:?} {up:?}");
    }

    #[test]
    fn beats_straight_line_on_own_family() {
        let y = ArcTanhFit {
            c0: 0.1,
            c1: -0.2,
            s: 1.3 / 300.0,
            r_squared: 1.0,
        }
        .curve(300);
        let fit = fit_arctanh(&y).unwrap();
        let xs: Vec<f64> = (1..=300).map(|r| r as f64).collect();
        let b = stats::covariance(&xs, &y) / stats::variance(&xs);
        let a = stats::mean(&y) - b * stats::mean(&xs);
        let line: f64 = xs.iter().zip(&y).map(|(x, y)| (y - a - b * x).powi(2)).sum();
        let own: f64 = fit.curve(300).iter().zip(&y).map(|(f, y)| (y - f).powi(2)).sum();
        assert!(own <= line);
    }

    #[test]
    fn too_short() {
        assert!(matches!(fit_arctanh(&[0.0; 9]), Err(DecompositionError::TooShort(9))));
    }

    #[test]
    fn pure_components() {
        let mut rng = crate::rng::stream(8);
        let mut y: Vec<f64> = (0..600).map(|_| 0.15 * rng.sample::<f64, _>(StandardNormal)).collect();
        y.sort_by(|a, b| b.total_cmp(a));
        let w = quarter_weights(&y).unwrap();
        assert!(w.theta1 > 0.99, "{w:?}");
        y.reverse();
        let w = quarter_weights(&y).unwrap();
        assert!(w.theta2 > 0.99, "{w:?}");
    }

    #[test]
    fn degenerate_curves() {
        assert!(matches!(
            decompose_weights(&[0.1; 20], &CORRECT, &CORRECT),
            Err(DecompositionError::Degenerate)
        ));
    }

    #[test]
    fn planted_mixture() {
        let n = 1452;
        let incorrect = ArcTanhFit {
            c0: 0.227,
            c1: -0.350,
            ..CORRECT
        };
        let (c, i) = (CORRECT.curve(n), incorrect.curve(n));
        let mean: f64 = (0..100u64)
            .map(|seed| {
                let mut rng = crate::rng::stream(seed);
                let y: Vec<f64> = c
                    .iter()
                    .zip(&i)
                    .map(|(c, i)| 0.6 * c + 0.4 * i + 0.05 * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                decompose_weights(&y, &CORRECT, &incorrect).unwrap().theta1
            })
            .sum::<f64>()
            / 100.0;
        assert!((mean - 0.6).abs() < 0.03, "{mean}");
    }

    #[test]
    fn series_flags_failures() {
        let q: QuarterLabel = "2000Q1".parse().unwrap();
        let good: Vec<Option<f64>> = (0..50).map(|k| Some(0.5 - k as f64 / 50.0)).collect();
        let short = vec![Some(0.1); 5];
        let out = success_weight_series(&[q, q.next()], &[good, short]).unwrap();
        assert_eq!(out[0].success(), Some(true));
        assert!(out[1].weights.is_none() && out[1].failure.is_some());
        let mut buf = Vec::new();
        write_weights_csv(&out, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("quarter,theta1,theta2,ci95,W_success,success_flag\n2000Q1,"));
        assert!(text.ends_with("2000Q2,,,,,\n"));
    }

    proptest! {
        #[test]
        fn weights_sum_to_one(ys in prop::collection::vec(-1.0f64..1.0, 10..60)) {
            if let Ok(w) = quarter_weights(&ys) {
                prop_assert_eq!(w.theta1 + w.theta2, 1.0);
                prop_assert!((0.0..=1.0).contains(&w.theta1));
                prop_assert!((-1.0..=1.0).contains(&w.w_success));
            }
        }
    }
}
