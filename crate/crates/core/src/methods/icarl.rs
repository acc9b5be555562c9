use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::buffer::ReplayBuffer;
use crate::error::{Error, Result};
use crate::nn::Network;

/// Mean penultimate feature vector of each class's stored exemplars.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassMeans {
    pub means: BTreeMap<usize, Vec<f64>>,
    /// Sub-task after which the means were last computed.
    pub computed_after: Option<usize>,
}

impl ClassMeans {
    /// Recomputes every class mean from the buffer with the current network.
    pub fn compute(net: &Network, buffer: &ReplayBuffer, after: usize) -> Result<Self> {
        let mut by_class: BTreeMap<usize, Vec<&[f64]>> = BTreeMap::new();
        for s in buffer.iter() {
            by_class.entry(s.label).or_default().push(&s.features);
        }
        let mut means = BTreeMap::new();
        for (label, rows) in by_class {
            let d = rows[0].len();
            let x = Array2::from_shape_vec((rows.len(), d), rows.concat()).expect("uniform rows");
            let phi = net.penultimate_features(x.view())?;
            means.insert(label, phi.mean_axis(Axis(0)).expect("nonempty").to_vec());
        }
        Ok(Self {
            means,
            computed_after: Some(after),
        })
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }
}

/// Nearest-mean-of-exemplars labels; ties go to the lowest class id.
pub fn icarl_classify(net: &Network, means: &ClassMeans, batch: ArrayView2<f64>) -> Result<Vec<usize>> {
    if means.is_empty() {
        return Err(Error::Classification("no class means have been computed".into()));
    }
    let phi = net.penultimate_features(batch)?;
    Ok(phi
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = (usize::MAX, f64::INFINITY);
            for (&label, mu) in &means.means {
                let d: f64 = row.iter().zip(mu).map(|(a, b)| (a - b) * (a - b)).sum();
                if d < best.1 {
                    best = (label, d);
                }
            }
            best.0
        })
        .collect())
}
