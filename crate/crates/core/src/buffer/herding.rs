use ndarray::{Array1, ArrayView2, Axis};

use crate::error::{Error, Result};

/// Greedy herding: at step `k` pick the unselected row `x` minimising
/// `‖μ − (φ(x) + Σ_{j<k} φ(p_j)) / k‖`, where `μ` is the mean of all rows.
/// Returns `m` row indices in selection order; ties go to the lowest index.
pub fn herding_select(features: ArrayView2<f64>, m: usize) -> Result<Vec<usize>> {
    let n = features.nrows();
    if n == 0 {
        return Err(Error::Precondition("herding over an empty class".into()));
    }
    if m > n {
        return Err(Error::Precondition(format!("herding asked for {m} exemplars from {n} samples")));
    }
    let mu = features.mean_axis(Axis(0)).expect("nonempty");
    let mut running = Array1::<f64>::zeros(features.ncols());
    let mut taken = vec![false; n];
    let mut order = Vec::with_capacity(m);
    for k in 1..=m {
        let inv_k = 1.0 / k as f64;
        let mut best: Option<(usize, f64)> = None;
        for (i, row) in features.rows().into_iter().enumerate() {
            if taken[i] {
                continue;
            }
            let dist: f64 = mu
                .iter()
                .zip(&running)
                .zip(row)
                .map(|((m, s), x)| {
                    let d = m - (s + x) * inv_k;
                    d * d
                })
                .sum();
            if best.is_none_or(|(_, b)| dist < b) {
                best = Some((i, dist));
            }
        }
        let (i, _) = best.expect("an unselected row remains");
        taken[i] = true;
        running += &features.row(i);
        order.push(i);
    }
    Ok(order)
}
