//! Sample-weighted federated averaging.

use crate::lsnet::{NamedArray, ParameterSet};
use crate::tensor::Scalar;
use crate::{Error, Result};

/// Weighted mean of parameter sets, accumulated in `f64`.
///
/// Every array is averaged, including normalization running statistics.
/// A single update is returned unchanged so a one-client federation
/// carries its model forward bit for bit.
pub fn aggregate<T: Scalar>(updates: &[(&ParameterSet<T>, f64)]) -> Result<ParameterSet<T>> {
    let Some(&(first, _)) = updates.first() else {
        return Err(Error::Validation("nothing to aggregate".into()));
    };
    if updates.iter().any(|(_, w)| !(*w > 0.0 && w.is_finite())) {
        return Err(Error::Validation(
            "aggregation weights must be positive and finite".into(),
        ));
    }
    if let Some((p, _)) = updates.iter().find(|(p, _)| !p.same_layout(first)) {
        return Err(Error::shape(
            format!("{} arrays", first.entries.len()),
            format!("{} arrays", p.entries.len()),
        ));
    }
    if updates.len() == 1 {
        return Ok(first.clone());
    }
    let total: f64 = updates.iter().map(|(_, w)| w).sum();
    let entries = first
        .entries
        .iter()
        .enumerate()
        .map(|(a, e)| {
            let mut acc = vec![0.0f64; e.data.len()];
            for (p, w) in updates {
                let share = w / total;
                for (s, v) in acc.iter_mut().zip(&p.entries[a].data) {
                    *s += share * v.as_f64();
                }
            }
            NamedArray {
                name: e.name.clone(),
                shape: e.shape.clone(),
                trainable: e.trainable,
                data: acc.into_iter().map(T::lit).collect(),
            }
        })
        .collect();
    Ok(ParameterSet { entries })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(v: &[f64]) -> ParameterSet<f64> {
        ParameterSet {
            entries: vec![NamedArray {
                name: "w".into(),
                shape: vec![v.len()],
                trainable: true,
                data: v.to_vec(),
            }],
        }
    }

    #[test]
    fn weights_by_sample_count() {
        let a = set(&[1.0, 0.0]);
        let b = set(&[4.0, 3.0]);
        let g = aggregate(&[(&a, 2.0), (&b, 1.0)]).unwrap();
        assert_eq!(g.entries[0].data, vec![2.0, 1.0]);
    }

    #[test]
    fn single_update_is_returned_verbatim() {
        let a = set(&[0.1, 0.7]);
        assert_eq!(aggregate(&[(&a, 3.0)]).unwrap(), a);
    }

    #[test]
    fn rejects_empty_or_mismatched_input() {
        assert!(aggregate::<f64>(&[]).is_err());
        assert!(aggregate(&[(&set(&[1.0]), 1.0), (&set(&[1.0, 2.0]), 1.0)]).is_err());
        assert!(aggregate(&[(&set(&[1.0]), 0.0)]).is_err());
    }
}
