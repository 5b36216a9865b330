use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::Tensor;

/// Rotates every (square) image counter-clockwise by `angle_degrees` about
/// its center using bilinear interpolation; pixels sampled from outside the
/// source image are zero.
pub fn rotate_images(ds: &LabeledDataset, angle_degrees: f64) -> Result<LabeledDataset> {
    let dim = ds.input_dim();
    let side = (dim as f64).sqrt().round() as usize;
    if side * side != dim {
        return Err(Error::Input(format!(
            "feature width {dim} is not a square image"
        )));
    }
    if angle_degrees == 0.0 {
        return Ok(ds.clone());
    }
    let (sin, cos) = angle_degrees.to_radians().sin_cos();
    let center = (side as f64 - 1.0) / 2.0;
    // Source coordinates for each destination pixel, shared by all images.
    let taps: Vec<Option<[(usize, f64); 4]>> = (0..dim)
        .map(|p| {
            let (r, c) = ((p / side) as f64 - center, (p % side) as f64 - center);
            // inverse of the visual CCW rotation (rows grow downward)
            let sx = c * cos - r * sin + center;
            let sy = c * sin + r * cos + center;
            bilinear_taps(sx, sy, side)
        })
        .collect();

    let mut out = Vec::with_capacity(ds.len() * dim);
    for img in ds.features().iter_rows() {
        for tap in &taps {
            let v = tap.map_or(0.0, |t| t.iter().map(|&(i, w)| w * img[i]).sum::<f64>());
            out.push(v.clamp(0.0, 1.0));
        }
    }
    let features = Tensor::matrix(ds.len(), dim, out)?;
    LabeledDataset::new(features, ds.labels().to_vec(), ds.num_classes())
}

fn bilinear_taps(x: f64, y: f64, side: usize) -> Option<[(usize, f64); 4]> {
    // snap values within rounding noise of the grid
    let snap = |v: f64| if (v - v.round()).abs() < 1e-9 { v.round() } else { v };
    let (x, y) = (snap(x), snap(y));
    let max = (side - 1) as f64;
    if x < -1.0 || y < -1.0 || x > max + 1.0 || y > max + 1.0 {
        return None;
    }
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let mut taps = [(0usize, 0.0); 4];
    let corners = [
        (x0, y0, (1.0 - fx) * (1.0 - fy)),
        (x0 + 1.0, y0, fx * (1.0 - fy)),
        (x0, y0 + 1.0, (1.0 - fx) * fy),
        (x0 + 1.0, y0 + 1.0, fx * fy),
    ];
    for (slot, (cx, cy, w)) in taps.iter_mut().zip(corners) {
        if cx >= 0.0 && cy >= 0.0 && cx <= max && cy <= max {
            *slot = (cy as usize * side + cx as usize, w);
        }
    }
    Some(taps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic_blobs;

    #[test]
    fn zero_and_full_turn_are_identity() {
        let ds = synthetic_blobs(3, 2, 16, 0.2, 9).unwrap();
        assert_eq!(rotate_images(&ds, 0.0).unwrap(), ds);
        let full = rotate_images(&ds, 360.0).unwrap();
        for (a, b) in full.features().data().iter().zip(ds.features().data()) {
            assert!((a - b).abs() < 1e-6);
        }
        assert_eq!(full.labels(), ds.labels());
    }

    #[test]
    fn non_square_is_rejected() {
        let ds = synthetic_blobs(1, 2, 5, 0.0, 0).unwrap();
        assert!(matches!(rotate_images(&ds, 15.0), Err(Error::Input(_))));
    }

    #[test]
    fn values_stay_in_unit_range() {
        let ds = synthetic_blobs(5, 2, 49, 0.5, 2).unwrap();
        let rot = rotate_images(&ds, 37.0).unwrap();
        assert!(rot.features().data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
