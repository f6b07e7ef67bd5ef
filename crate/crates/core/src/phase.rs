//! Phase-space points and the gradient-field abstraction shared by the
//! analytic systems, the learned networks and the integrators.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// One point `(q, p)` of a `2N`-dimensional phase space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawState")]
pub struct PhaseState {
    q: Vec<f64>,
    p: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawState {
    q: Vec<f64>,
    p: Vec<f64>,
}

impl TryFrom<RawState> for PhaseState {
    type Error = Error;

    fn try_from(raw: RawState) -> Result<Self> {
        PhaseState::new(raw.q, raw.p)
    }
}

impl PhaseState {
    pub fn new(q: Vec<f64>, p: Vec<f64>) -> Result<Self> {
        if q.is_empty() {
            return Err(Error::InvalidState("dimension must be at least 1".into()));
        }
        if q.len() != p.len() {
            return Err(Error::InvalidState(format!(
                "q has {} components but p has {}",
                q.len(),
                p.len()
            )));
        }
        if q.iter().chain(&p).any(|v| !v.is_finite()) {
            return Err(Error::InvalidState("non-finite component".into()));
        }
        Ok(PhaseState { q, p })
    }

    /// Caller guarantees equal non-zero lengths and finite entries.
    pub(crate) fn from_parts(q: Vec<f64>, p: Vec<f64>) -> Self {
        debug_assert_eq!(q.len(), p.len());
        PhaseState { q, p }
    }

    pub fn zeros(dim: usize) -> Self {
        PhaseState { q: vec![0.0; dim], p: vec![0.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }

    pub fn p(&self) -> &[f64] {
        &self.p
    }

    pub fn into_parts(self) -> (Vec<f64>, Vec<f64>) {
        (self.q, self.p)
    }

    /// `(q, p)` flattened into one vector of length `2N`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(2 * self.dim());
        v.extend_from_slice(&self.q);
        v.extend_from_slice(&self.p);
        v
    }

    pub fn from_flat(x: &[f64]) -> Result<Self> {
        if !x.len().is_multiple_of(2) {
            return Err(Error::InvalidState(format!("odd flat length {}", x.len())));
        }
        let n = x.len() / 2;
        PhaseState::new(x[..n].to_vec(), x[n..].to_vec())
    }

    /// `‖q − q'‖₁ + ‖p − p'‖₁`.
    pub fn l1_distance(&self, other: &PhaseState) -> f64 {
        self.q
            .iter()
            .zip(&other.q)
            .chain(self.p.iter().zip(&other.p))
            .map(|(a, b)| (a - b).abs())
            .sum()
    }
}

/// A map `R^N → R^N` used as `∂T/∂p` or `∂V/∂q`.
pub trait GradientField: Sync {
    fn dim(&self) -> usize;

    /// Writes the field at `x` into `out`. Both slices have length `dim()`.
    fn eval_into(&self, x: &[f64], out: &mut [f64]) -> Result<()>;

    fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), x.len())?;
        let mut out = vec![0.0; x.len()];
        self.eval_into(x, &mut out)?;
        Ok(out)
    }
}

impl<F: GradientField + ?Sized> GradientField for &F {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn eval_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        (**self).eval_into(x, out)
    }
}

/// Adapter turning a closure into a [`GradientField`].
pub struct FnField<F> {
    dim: usize,
    f: F,
}

impl<F> FnField<F>
where
    F: Fn(&[f64], &mut [f64]) + Sync,
{
    pub fn new(dim: usize, f: F) -> Self {
        FnField { dim, f }
    }
}

impl<F> GradientField for FnField<F>
where
    F: Fn(&[f64], &mut [f64]) + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        (self.f)(x, out);
        Ok(())
    }
}

/// The identically-zero field.
pub struct ZeroField(pub usize);

impl GradientField for ZeroField {
    fn dim(&self) -> usize {
        self.0
    }

    fn eval_into(&self, _x: &[f64], out: &mut [f64]) -> Result<()> {
        out.fill(0.0);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_mismatched_and_non_finite() {
        assert!(PhaseState::new(vec![], vec![]).is_err());
        assert!(PhaseState::new(vec![1.0], vec![1.0, 2.0]).is_err());
        assert!(PhaseState::new(vec![f64::NAN], vec![0.0]).is_err());
        assert!(PhaseState::new(vec![0.0], vec![f64::INFINITY]).is_err());
        assert_eq!(PhaseState::new(vec![1.0, 2.0], vec![3.0, 4.0]).unwrap().dim(), 2);
    }

    #[test]
    fn flat_round_trip() {
        let s = PhaseState::new(vec![1.0, 2.0], vec![3.0, 4.0]).unwrap();
        assert_eq!(s.to_flat(), vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(PhaseState::from_flat(&s.to_flat()).unwrap(), s);
    }

    #[test]
    fn deserialize_validates() {
        let bad: std::result::Result<PhaseState, _> = serde_json::from_str(r#"{"q":[1.0],"p":[]}"#);
        assert!(bad.is_err());
    }
}
