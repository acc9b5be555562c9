use ndarray::{Array1, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;

use super::{NsrStrategy, Origin, StoredSample};

pub fn pixel_sum(x: ArrayView1<f64>) -> f64 {
    x.sum()
}

/// Sum of squared deviations of `x` from `mean`.
pub fn squared_deviation(x: ArrayView1<f64>, mean: &Array1<f64>) -> f64 {
    x.iter().zip(mean).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Indices sorted by `key`, ascending or descending, ties to the lower index.
fn ranked_by(keys: &[f64], ascending: bool) -> Vec<usize> {
    let mut order: Vec<usize> = (0..keys.len()).collect();
    order.sort_by(|&a, &b| {
        let c = keys[a].total_cmp(&keys[b]);
        if ascending {
            c
        } else {
            c.reverse()
        }
    });
    order
}

/// Ranked selection of `n` samples from the rows of one class. The result is
/// ordered best-first, so its prefixes are the selections for smaller `n`.
/// When `n` exceeds the class size every sample is returned.
pub fn nsr_select_class(rows: ArrayView2<f64>, label: usize, strategy: NsrStrategy, n: usize, rng: &mut impl Rng) -> Vec<StoredSample> {
    let size = rows.nrows();
    if n > size {
        log::warn!("requested {n} samples of class {label} but only {size} are available; taking all");
    }
    let n = n.min(size);
    if n == 0 {
        return Vec::new();
    }
    let real = |i: usize| StoredSample::new(rows.row(i).to_vec(), label);
    let pick = |order: Vec<usize>| order.into_iter().take(n).map(real).collect();

    match strategy {
        NsrStrategy::RandomN => {
            let mut order: Vec<usize> = (0..size).collect();
            order.shuffle(rng);
            pick(order)
        }
        NsrStrategy::AveragedN => {
            let mut order: Vec<usize> = (0..size).collect();
            order.shuffle(rng);
            // n parts whose sizes differ by at most one
            let (base, rem) = (size / n, size % n);
            let mut start = 0;
            (0..n)
                .map(|part| {
                    let len = base + usize::from(part < rem);
                    let members = &order[start..start + len];
                    start += len;
                    let mean = rows.select(Axis(0), members).mean_axis(Axis(0)).expect("nonempty part");
                    StoredSample {
                        origin: Origin::Averaged,
                        ..StoredSample::new(mean.to_vec(), label)
                    }
                })
                .collect()
        }
        NsrStrategy::IntensityMin | NsrStrategy::IntensityMax => {
            let keys: Vec<f64> = rows.rows().into_iter().map(pixel_sum).collect();
            pick(ranked_by(&keys, strategy == NsrStrategy::IntensityMin))
        }
        NsrStrategy::MeanNearest | NsrStrategy::MeanFarthest => {
            let mean = rows.mean_axis(Axis(0)).expect("nonempty class");
            let keys: Vec<f64> = rows.rows().into_iter().map(|r| squared_deviation(r, &mean).sqrt()).collect();
            pick(ranked_by(&keys, strategy == NsrStrategy::MeanNearest))
        }
        NsrStrategy::VarianceLowest | NsrStrategy::VarianceHighest => {
            let mean = rows.mean_axis(Axis(0)).expect("nonempty class");
            let keys: Vec<f64> = rows.rows().into_iter().map(|r| squared_deviation(r, &mean)).collect();
            pick(ranked_by(&keys, strategy == NsrStrategy::VarianceLowest))
        }
    }
}

/// Applies [`nsr_select_class`] to every class present in `labels`, taking
/// `n_per_class` from each. Classes are visited in ascending order.
pub fn nsr_select(features: ArrayView2<f64>, labels: &[usize], strategy: NsrStrategy, n_per_class: usize, rng: &mut impl Rng) -> Vec<StoredSample> {
    let mut classes: Vec<usize> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    classes
        .into_iter()
        .flat_map(|c| {
            let idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
            nsr_select_class(features.select(Axis(0), &idx).view(), c, strategy, n_per_class, rng)
        })
        .collect()
}
