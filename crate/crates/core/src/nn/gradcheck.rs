//! Central finite-difference gradient checking.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Gradients smaller than this are compared in absolute rather than
/// relative terms; central differences cannot resolve them any better.
pub const MAGNITUDE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Coordinate where the worst error occurred.
    pub worst_index: usize,
    pub checked: usize,
}

/// Compares the analytic gradient returned by `loss_fn` at `params` against
/// central differences `(L(p + εe_i) − L(p − εe_i)) / 2ε`.
///
/// At most `max_coords` coordinates are checked, chosen with a seeded
/// sampler when the parameter vector is larger. The relative error of a
/// coordinate is `|a − n| / max(|a|, |n|, MAGNITUDE_FLOOR)`.
pub fn finite_diff_check<F>(
    mut loss_fn: F,
    params: &[f64],
    epsilon: f64,
    max_coords: usize,
    seed: u64,
) -> GradCheckReport
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    assert!(
        epsilon > 0.0 && epsilon <= 1e-2,
        "epsilon must lie in (0, 1e-2], got {epsilon}"
    );
    let (_, analytic) = loss_fn(params);
    assert_eq!(analytic.len(), params.len(), "gradient length mismatch");
    let coords: Vec<usize> = if params.len() <= max_coords {
        (0..params.len()).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v = index::sample(&mut rng, params.len(), max_coords).into_vec();
        v.sort_unstable();
        v
    };
    let mut probe = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: 0,
        checked: coords.len(),
    };
    for &i in &coords {
        let orig = probe[i];
        probe[i] = orig + epsilon;
        let (up, _) = loss_fn(&probe);
        probe[i] = orig - epsilon;
        let (down, _) = loss_fn(&probe);
        probe[i] = orig;
        let numeric = (up - down) / (2.0 * epsilon);
        let a = analytic[i];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(MAGNITUDE_FLOOR);
        if err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst_index = i;
        }
    }
    report
}
