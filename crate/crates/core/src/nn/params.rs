//! Flat-parameter view shared by networks, models and gradient sets, plus
//! the update and aggregation rules that operate on it.

use crate::error::{Error, Result};

/// Anything that can be viewed as an ordered list of real-valued tensors.
///
/// Two values are "shape-compatible" when their slice lists have the same
/// number of entries with the same lengths.
pub trait ParamSet {
    fn slices(&self) -> Vec<&[f64]>;
    fn slices_mut(&mut self) -> Vec<&mut [f64]>;

    fn num_params(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    fn to_flat(&self) -> Vec<f64> {
        self.slices().concat()
    }

    fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::Internal(format!(
                "flat vector of {} values for {} parameters",
                flat.len(),
                self.num_params()
            )));
        }
        let mut offset = 0;
        for s in self.slices_mut() {
            s.copy_from_slice(&flat[offset..offset + s.len()]);
            offset += s.len();
        }
        Ok(())
    }

    fn fill(&mut self, value: f64) {
        for s in self.slices_mut() {
            s.fill(value);
        }
    }
}

pub(crate) fn check_compatible<A, B>(a: &A, b: &B) -> Result<()>
where
    A: ParamSet + ?Sized,
    B: ParamSet + ?Sized,
{
    let sa = a.slices();
    let sb = b.slices();
    if sa.len() != sb.len() || sa.iter().zip(&sb).any(|(x, y)| x.len() != y.len()) {
        return Err(Error::Internal("parameter shapes do not match".into()));
    }
    Ok(())
}

/// `target += factor * source`, slice by slice.
pub fn add_scaled<A, B>(target: &mut A, source: &B, factor: f64) -> Result<()>
where
    A: ParamSet + ?Sized,
    B: ParamSet + ?Sized,
{
    check_compatible(target, source)?;
    for (t, s) in target.slices_mut().into_iter().zip(source.slices()) {
        for (x, y) in t.iter_mut().zip(s) {
            *x += factor * y;
        }
    }
    Ok(())
}

/// Gradient descent: `p ← p − lr·g`.
pub fn sgd_step<P, G>(params: &mut P, grads: &G, lr: f64) -> Result<()>
where
    P: ParamSet + ?Sized,
    G: ParamSet + ?Sized,
{
    check_lr(lr)?;
    if lr == 0.0 {
        return check_compatible(params, grads);
    }
    add_scaled(params, grads, -lr)
}

/// Gradient ascent: `p ← p + lr·g`.
pub fn ascent_step<P, G>(params: &mut P, grads: &G, lr: f64) -> Result<()>
where
    P: ParamSet + ?Sized,
    G: ParamSet + ?Sized,
{
    check_lr(lr)?;
    if lr == 0.0 {
        return check_compatible(params, grads);
    }
    add_scaled(params, grads, lr)
}

fn check_lr(lr: f64) -> Result<()> {
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(Error::Config(format!(
            "learning rate must be finite and non-negative, got {lr}"
        )));
    }
    Ok(())
}

/// Convex combination `Σ wᵢ·pᵢ`, reduced in entry order.
///
/// Weights must be non-negative and sum to one within 1e-9.
pub fn weighted_average_params<P>(entries: &[(&P, f64)]) -> Result<P>
where
    P: ParamSet + Clone,
{
    let (first, _) = entries
        .first()
        .ok_or_else(|| Error::Input("nothing to average".into()))?;
    let mut total = 0.0;
    for (i, (p, w)) in entries.iter().enumerate() {
        if !(*w >= 0.0) || !w.is_finite() {
            return Err(Error::Input(format!("weight {i} is {w}")));
        }
        check_compatible(*first, *p)?;
        total += w;
    }
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Input(format!(
            "aggregation weights sum to {total}, expected 1"
        )));
    }
    let mut out = (*first).clone();
    for (o, s) in out.slices_mut().into_iter().zip(first.slices()) {
        let w = entries[0].1;
        for (x, y) in o.iter_mut().zip(s) {
            *x = w * y;
        }
    }
    for (p, w) in &entries[1..] {
        add_scaled(&mut out, *p, *w)?;
    }
    Ok(out)
}

impl ParamSet for Vec<f64> {
    fn slices(&self) -> Vec<&[f64]> {
        vec![self.as_slice()]
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        vec![self.as_mut_slice()]
    }
}
