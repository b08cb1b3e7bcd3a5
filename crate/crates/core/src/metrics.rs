//! Ranking and regression metrics.
//!
//! `J` are true objective values, `J_hat` predictions, both indexed by graph.
//! Argmax ties resolve to the lowest index; counts use strict `>`.

use std::cmp::Ordering;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_pair(x: &[f64], y: &[f64], min_len: usize) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!(
            "length mismatch: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < min_len {
        return Err(Error::Shape(format!(
            "need at least {min_len} values, got {}",
            x.len()
        )));
    }
    if x.iter().chain(y).any(|v| v.is_nan()) {
        return Err(Error::Shape("NaN in input".into()));
    }
    Ok(())
}

/// Number of pairs within runs of equal values in a sorted sequence.
fn tied_pairs<T: PartialEq>(sorted: &[T]) -> u64 {
    let mut total = 0u64;
    let mut run = 1u64;
    for w in sorted.windows(2) {
        if w[0] == w[1] {
            run += 1;
        } else {
            total += run * (run - 1) / 2;
            run = 1;
        }
    }
    total + run * (run - 1) / 2
}

/// Bottom-up merge sort of `v`, returning the number of inversions.
fn merge_sort_count(v: &mut Vec<f64>) -> u64 {
    let n = v.len();
    let mut buf = vec![0.0; n];
    let mut swaps = 0u64;
    let mut width = 1;
    while width < n {
        let mut lo = 0;
        while lo < n {
            let mid = (lo + width).min(n);
            let hi = (lo + 2 * width).min(n);
            let (mut i, mut j, mut k) = (lo, mid, lo);
            while i < mid && j < hi {
                if v[i] <= v[j] {
                    buf[k] = v[i];
                    i += 1;
                } else {
                    buf[k] = v[j];
                    j += 1;
                    swaps += (mid - i) as u64;
                }
                k += 1;
            }
            buf[k..k + (mid - i)].copy_from_slice(&v[i..mid]);
            k += mid - i;
            buf[k..k + (hi - j)].copy_from_slice(&v[j..hi]);
            lo = hi;
        }
        std::mem::swap(v, &mut buf);
        width *= 2;
    }
    swaps
}

/// Tie-adjusted Kendall tau-b in O(n log n) (Knight's algorithm).
pub fn kendall_tau(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y, 2)?;
    let n = x.len() as u64;
    let mut pairs: Vec<(f64, f64)> = x.iter().copied().zip(y.iter().copied()).collect();
    pairs.sort_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .unwrap_or(Ordering::Equal)
            .then(a.1.partial_cmp(&b.1).unwrap_or(Ordering::Equal))
    });
    let n0 = n * (n - 1) / 2;
    let xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let n1 = tied_pairs(&xs);
    let n3 = tied_pairs(&pairs);
    let mut ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let swaps = merge_sort_count(&mut ys);
    let n2 = tied_pairs(&ys);
    if n0 == n1 || n0 == n2 {
        return Err(Error::UndefinedTau("one input is constant".into()));
    }
    // concordant - discordant = n0 - n1 - n2 + n3 - 2 * swaps
    let numer = n0 as f64 - n1 as f64 - n2 as f64 + n3 as f64 - 2.0 * swaps as f64;
    let denom = ((n0 - n1) as f64).sqrt() * ((n0 - n2) as f64).sqrt();
    Ok((numer / denom).clamp(-1.0, 1.0))
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(v: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &x) in v.iter().enumerate() {
        if best.is_none_or(|b| x > v[b]) {
            best = Some(i);
        }
    }
    best
}

fn non_empty(j: &[f64], j_hat: &[f64]) -> Result<()> {
    check_pair(j, j_hat, 1)
}

/// Graphs predicted strictly above the prediction of the true optimum.
/// `n_ol + 1` oracle evaluations certify the true best from the predicted order.
pub fn n_ol(j: &[f64], j_hat: &[f64]) -> Result<usize> {
    non_empty(j, j_hat)?;
    let star = argmax(j).expect("non-empty");
    Ok(j_hat.iter().filter(|&&p| p > j_hat[star]).count())
}

/// Graphs whose true value strictly exceeds that of the predicted optimum.
pub fn n_sub(j: &[f64], j_hat: &[f64]) -> Result<usize> {
    non_empty(j, j_hat)?;
    let hat_star = argmax(j_hat).expect("non-empty");
    Ok(j.iter().filter(|&&v| v > j[hat_star]).count())
}

/// True value of the predicted optimum over the true optimum.
pub fn j_sub(j: &[f64], j_hat: &[f64]) -> Result<f64> {
    non_empty(j, j_hat)?;
    let star = argmax(j).expect("non-empty");
    if !(j[star] > 0.0) {
        return Err(Error::Domain(format!("max J = {} is not positive", j[star])));
    }
    let hat_star = argmax(j_hat).expect("non-empty");
    Ok(j[hat_star] / j[star])
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionReport {
    pub mse: f64,
    pub mae: f64,
    pub rmse: f64,
    pub r2: f64,
}

pub fn regression_report(j: &[f64], j_hat: &[f64]) -> Result<RegressionReport> {
    check_pair(j, j_hat, 2)?;
    let n = j.len() as f64;
    let mean = j.iter().sum::<f64>() / n;
    let ss_tot: f64 = j.iter().map(|v| (v - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(Error::UndefinedR2("true values have zero variance".into()));
    }
    let ss_res: f64 = j.iter().zip(j_hat).map(|(a, b)| (a - b).powi(2)).sum();
    let mae = j.iter().zip(j_hat).map(|(a, b)| (a - b).abs()).sum::<f64>() / n;
    let mse = ss_res / n;
    Ok(RegressionReport {
        mse,
        mae,
        rmse: mse.sqrt(),
        r2: 1.0 - ss_res / ss_tot,
    })
}

/// Per-scenario ranking summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioEval {
    pub scenario_id: u64,
    pub j: Vec<f64>,
    pub j_hat: Vec<f64>,
    pub i_star: usize,
    pub i_hat_star: usize,
    pub n_ol: usize,
    pub n_sub: usize,
    pub j_sub: f64,
    /// `None` when tau is undefined (a constant vector or a single graph).
    pub tau: Option<f64>,
}

impl ScenarioEval {
    pub fn new(scenario_id: u64, j: Vec<f64>, j_hat: Vec<f64>) -> Result<Self> {
        let n_ol = n_ol(&j, &j_hat)?;
        let n_sub = n_sub(&j, &j_hat)?;
        let j_sub = j_sub(&j, &j_hat)?;
        let tau = if j.len() >= 2 {
            match kendall_tau(&j, &j_hat) {
                Ok(t) => Some(t),
                Err(Error::UndefinedTau(_)) => None,
                Err(e) => return Err(e),
            }
        } else {
            None
        };
        Ok(ScenarioEval {
            scenario_id,
            i_star: argmax(&j).expect("non-empty"),
            i_hat_star: argmax(&j_hat).expect("non-empty"),
            j,
            j_hat,
            n_ol,
            n_sub,
            j_sub,
            tau,
        })
    }

    pub fn n_graphs(&self) -> usize {
        self.j.len()
    }
}

pub const SCENARIO_CSV_HEADER: &str = "scenario_id,n_graphs,tau,N_OL,N_sub,J_sub";

pub fn scenario_evals_csv(rows: &[ScenarioEval]) -> String {
    let mut out = format!("{SCENARIO_CSV_HEADER}\n");
    for r in rows {
        let tau = r.tau.map_or_else(|| "nan".to_string(), |t| format!("{t:.6}"));
        let _ = writeln!(
            out,
            "{},{},{},{},{},{:.6}",
            r.scenario_id,
            r.n_graphs(),
            tau,
            r.n_ol,
            r.n_sub,
            r.j_sub
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_tau_b(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len();
        let (mut c, mut d, mut tx, mut ty) = (0i64, 0i64, 0i64, 0i64);
        for i in 0..n {
            for j in (i + 1)..n {
                let sx = (x[i] - x[j]).signum() as i64 * i64::from(x[i] != x[j]);
                let sy = (y[i] - y[j]).signum() as i64 * i64::from(y[i] != y[j]);
                match (sx, sy) {
                    (0, 0) => {}
                    (0, _) => tx += 1,
                    (_, 0) => ty += 1,
                    _ if sx == sy => c += 1,
                    _ => d += 1,
                }
            }
        }
        (c - d) as f64 / (((c + d + tx) as f64) * ((c + d + ty) as f64)).sqrt()
    }

    #[test]
    fn tau_extremes() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(kendall_tau(&x, &x).unwrap(), 1.0);
        let r = [4.0, 3.0, 2.0, 1.0];
        assert_eq!(kendall_tau(&x, &r).unwrap(), -1.0);
    }

    #[test]
    fn tau_errors() {
        assert!(matches!(kendall_tau(&[1.0, 2.0], &[1.0]), Err(Error::Shape(_))));
        assert!(matches!(kendall_tau(&[1.0], &[1.0]), Err(Error::Shape(_))));
        assert!(matches!(
            kendall_tau(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
            Err(Error::UndefinedTau(_))
        ));
    }

    #[test]
    fn tau_with_ties_matches_brute_force() {
        let x = [1.0, 2.0, 2.0, 3.0, 3.0, 3.0, 5.0];
        let y = [2.0, 1.0, 2.0, 2.0, 4.0, 4.0, 0.0];
        assert!((kendall_tau(&x, &y).unwrap() - brute_tau_b(&x, &y)).abs() < 1e-12);
    }

    #[test]
    fn hand_counted_metric_cases() {
        let j = [1.0, 2.0, 3.0];
        let jh = [3.0, 2.0, 1.0];
        assert_eq!(n_ol(&j, &jh).unwrap(), 2);
        assert_eq!(n_sub(&j, &jh).unwrap(), 2);
        assert_eq!(n_ol(&j, &j).unwrap(), 0);
        assert_eq!(n_sub(&j, &j).unwrap(), 0);
        assert_eq!(j_sub(&j, &j).unwrap(), 1.0);
        assert!((j_sub(&[10.0, 9.0], &[0.0, 1.0]).unwrap() - 0.9).abs() < 1e-15);
        assert!(matches!(n_ol(&[], &[]), Err(Error::Shape(_))));
        assert!(matches!(j_sub(&[0.0, -1.0], &[1.0, 0.0]), Err(Error::Domain(_))));
    }

    #[test]
    fn argmax_prefers_lowest_index() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), Some(1));
        assert_eq!(argmax(&[]), None);
    }

    #[test]
    fn regression_cases() {
        let r = regression_report(&[0.0, 2.0], &[1.0, 1.0]).unwrap();
        assert_eq!((r.mse, r.mae, r.rmse, r.r2), (1.0, 1.0, 1.0, 0.0));
        let j = [1.0, 5.0, 2.0];
        let r = regression_report(&j, &j).unwrap();
        assert_eq!((r.mse, r.mae, r.rmse, r.r2), (0.0, 0.0, 0.0, 1.0));
        let mean = [8.0 / 3.0; 3];
        assert!(regression_report(&j, &mean).unwrap().r2.abs() < 1e-12);
        assert!(matches!(
            regression_report(&[2.0, 2.0], &[1.0, 3.0]),
            Err(Error::UndefinedR2(_))
        ));
    }

    #[test]
    fn csv_header() {
        let e = ScenarioEval::new(7, vec![1.0, 2.0], vec![1.0, 2.0]).unwrap();
        let csv = scenario_evals_csv(&[e]);
        assert!(csv.starts_with("scenario_id,n_graphs,tau,N_OL,N_sub,J_sub\n7,2,1.000000,0,0,1.000000"));
    }

    fn vec_pair(max: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (2..max).prop_flat_map(|n| {
            (
                prop::collection::vec((0i32..20).prop_map(f64::from), n),
                prop::collection::vec((0i32..20).prop_map(f64::from), n),
            )
        })
    }

    proptest! {
        #[test]
        fn tau_equals_brute_force((x, y) in vec_pair(60)) {
            match kendall_tau(&x, &y) {
                Ok(t) => prop_assert!((t - brute_tau_b(&x, &y)).abs() < 1e-12),
                Err(Error::UndefinedTau(_)) => {
                    let bx = x.iter().all(|v| *v == x[0]);
                    let by = y.iter().all(|v| *v == y[0]);
                    prop_assert!(bx || by);
                }
                Err(e) => prop_assert!(false, "{e}"),
            }
        }

        #[test]
        fn tau_symmetric_and_monotone_invariant((x, y) in vec_pair(40)) {
            if let Ok(t) = kendall_tau(&x, &y) {
                let t2 = kendall_tau(&y, &x).unwrap();
                prop_assert!((t - t2).abs() < 1e-12);
                let y3: Vec<f64> = y.iter().map(|v| v.powi(3) + 2.0 * v).collect();
                prop_assert!((kendall_tau(&x, &y3).unwrap() - t).abs() < 1e-12);
            }
        }

        #[test]
        fn counts_bounded_and_monotone_invariant((j, jh) in vec_pair(40)) {
            let j: Vec<f64> = j.iter().map(|v| v + 1.0).collect();
            let n = j.len();
            let a = n_ol(&j, &jh).unwrap();
            let b = n_sub(&j, &jh).unwrap();
            let s = j_sub(&j, &jh).unwrap();
            prop_assert!(a < n && b < n);
            prop_assert!(s > 0.0 && s <= 1.0);
            prop_assert_eq!(s == 1.0, b == 0);
            let warped: Vec<f64> = jh.iter().map(|v| (v * 0.3).exp()).collect();
            prop_assert_eq!(n_ol(&j, &warped).unwrap(), a);
            prop_assert_eq!(n_sub(&j, &warped).unwrap(), b);
        }

        #[test]
        fn zero_n_ol_with_unique_predicted_max_gives_zero_n_sub((j, jh) in vec_pair(40)) {
            let top = argmax(&jh).unwrap();
            let unique = jh.iter().filter(|&&v| v == jh[top]).count() == 1;
            if n_ol(&j, &jh).unwrap() == 0 && unique {
                prop_assert_eq!(n_sub(&j, &jh).unwrap(), 0);
            }
        }
    }
}
