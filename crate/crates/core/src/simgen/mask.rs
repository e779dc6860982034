use rand::Rng;

use super::GeneratedDataset;
use crate::error::{PanelError, Result};
use crate::panel::ObservationMask;
use crate::rng::stream_rng;

/// Drops each score independently with probability `rate`. A student left
/// with no scores has the whole row of draws repeated until one survives.
/// Design rows and responses are dropped together.
pub fn apply_mar_mask(ds: &GeneratedDataset, rate: f64, seed: u64) -> Result<(GeneratedDataset, ObservationMask)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(PanelError::InvalidParameter(format!(
            "missing rate {rate} outside [0, 1)"
        )));
    }
    let t = ds.design.n_times();
    let present: Vec<Vec<bool>> = ds
        .design
        .blocks()
        .iter()
        .enumerate()
        .map(|(i, block)| {
            let mut rng = stream_rng(seed, i as u64);
            loop {
                let mut row = vec![false; t];
                for &s in &block.times {
                    row[s] = rng.random::<f64>() >= rate;
                }
                if row.iter().any(|&x| x) {
                    return row;
                }
            }
        })
        .collect();
    let mask = ObservationMask::new(t, present)?;
    let (design, y) = ds.design.apply_mask(&ds.y, &mask)?;
    let out = GeneratedDataset {
        y,
        design,
        ..ds.clone()
    };
    Ok((out, mask))
}
