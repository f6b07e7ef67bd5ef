//! Symmetric Taylor-series gradient network
//!
//! ```text
//! out(x) = Σ_{i=1..M} A_iᵀ f_i(A_i x) − B_iᵀ f_i(B_i x) + b,   f_i(z) = zⁱ / i!
//! ```
//!
//! Each term is a linear–activation–linear block whose two linear maps are
//! transposes of each other, so the Jacobian
//! `Σ A_iᵀ diag(f_i'(A_i x)) A_i − B_iᵀ diag(f_i'(B_i x)) B_i` is symmetric at
//! every input. Such a map is the gradient of a scalar function, which is
//! what makes the integrator substeps built on it symplectic.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::phase::GradientField;

/// Largest supported Taylor order.
pub const MAX_TERMS: usize = 30;

const fn factorials() -> [f64; MAX_TERMS + 1] {
    let mut t = [1.0; MAX_TERMS + 1];
    let mut i = 1;
    while i <= MAX_TERMS {
        t[i] = t[i - 1] * i as f64;
        i += 1;
    }
    t
}

const FACTORIAL: [f64; MAX_TERMS + 1] = factorials();

/// `x^i / i!` for `1 <= i <= 30`.
pub fn taylor_term(i: usize, x: f64) -> Result<f64> {
    if !(1..=MAX_TERMS).contains(&i) {
        return Err(Error::TermOrder(i));
    }
    let v = x.powi(i as i32) / FACTORIAL[i];
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::TermOverflow { order: i, x })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    /// `f_i(z) = zⁱ / i!`
    TaylorTerm,
    /// `f_i(z) = max(0, z)` for every term.
    Relu,
}

impl Activation {
    /// `(f_i(z), f_i'(z))` for the 1-based term order `i`.
    #[inline]
    fn eval(self, order: usize, z: f64) -> (f64, f64) {
        match self {
            Activation::TaylorTerm => {
                let d = z.powi(order as i32 - 1) / FACTORIAL[order - 1];
                (d * z / order as f64, d)
            }
            Activation::Relu => {
                if z > 0.0 {
                    (z, 1.0)
                } else {
                    (0.0, 0.0)
                }
            }
        }
    }
}

/// A symmetric gradient network `R^N → R^N` with `M` terms of hidden width `N_h`.
///
/// Parameters live in one flat vector: `A_1..A_M`, then `B_1..B_M` (each
/// `N_h × N`, row-major), then the bias.
#[derive(Debug, Clone, PartialEq)]
pub struct TaylorGradNet {
    dim: usize,
    hidden: usize,
    terms: usize,
    activation: Activation,
    params: Vec<f64>,
}

impl TaylorGradNet {
    pub fn zeros(dim: usize, hidden: usize, terms: usize, activation: Activation) -> Result<Self> {
        if dim == 0 || hidden == 0 {
            return Err(Error::Config("dim and hidden width must be >= 1".into()));
        }
        if !(1..=MAX_TERMS).contains(&terms) {
            return Err(Error::TermOrder(terms));
        }
        let len = 2 * terms * hidden * dim + dim;
        Ok(TaylorGradNet { dim, hidden, terms, activation, params: vec![0.0; len] })
    }

    /// Builds a net from explicit matrices (`a[i]` and `b[i]` row-major `hidden × dim`).
    pub fn from_parts(
        dim: usize,
        hidden: usize,
        activation: Activation,
        a: &[Vec<f64>],
        b: &[Vec<f64>],
        bias: &[f64],
    ) -> Result<Self> {
        if a.len() != b.len() {
            return Err(Error::Config(format!("{} A matrices but {} B matrices", a.len(), b.len())));
        }
        let mut net = Self::zeros(dim, hidden, a.len(), activation)?;
        check_dim(dim, bias.len())?;
        for (i, (ai, bi)) in a.iter().zip(b).enumerate() {
            check_dim(hidden * dim, ai.len())?;
            check_dim(hidden * dim, bi.len())?;
            net.a_mut(i).copy_from_slice(ai);
            net.b_mut(i).copy_from_slice(bi);
        }
        net.bias_mut().copy_from_slice(bias);
        Ok(net)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn terms(&self) -> usize {
        self.terms
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn set_activation(&mut self, activation: Activation) {
        self.activation = activation;
    }

    fn block(&self) -> usize {
        self.hidden * self.dim
    }

    /// `A_{i+1}` (0-based term index), row-major.
    pub fn a(&self, i: usize) -> &[f64] {
        let n = self.block();
        &self.params[i * n..(i + 1) * n]
    }

    pub fn a_mut(&mut self, i: usize) -> &mut [f64] {
        let n = self.block();
        &mut self.params[i * n..(i + 1) * n]
    }

    /// `B_{i+1}` (0-based term index), row-major.
    pub fn b(&self, i: usize) -> &[f64] {
        let n = self.block();
        let off = (self.terms + i) * n;
        &self.params[off..off + n]
    }

    pub fn b_mut(&mut self, i: usize) -> &mut [f64] {
        let n = self.block();
        let off = (self.terms + i) * n;
        &mut self.params[off..off + n]
    }

    pub fn bias(&self) -> &[f64] {
        &self.params[2 * self.terms * self.block()..]
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        let off = 2 * self.terms * self.block();
        &mut self.params[off..]
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    /// Iterates `(sign, term order, matrix)` over all `2M` blocks.
    fn blocks(&self) -> impl Iterator<Item = (f64, usize, &[f64])> {
        let n = self.block();
        let m = self.terms;
        self.params[..2 * m * n]
            .chunks_exact(n)
            .enumerate()
            .map(move |(k, w)| if k < m { (1.0, k + 1, w) } else { (-1.0, k - m + 1, w) })
    }

    /// Forward pass without the finiteness check.
    pub(crate) fn forward_unchecked(&self, x: &[f64], out: &mut [f64]) {
        let n = self.dim;
        out.copy_from_slice(self.bias());
        for (sign, order, w) in self.blocks() {
            for row in w.chunks_exact(n) {
                let z: f64 = row.iter().zip(x).map(|(a, b)| a * b).sum();
                let (f, _) = self.activation.eval(order, z);
                let f = sign * f;
                for (o, a) in out.iter_mut().zip(row) {
                    *o += a * f;
                }
            }
        }
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim, x.len())?;
        let mut out = vec![0.0; self.dim];
        self.forward_unchecked(x, &mut out);
        if out.iter().all(|v| v.is_finite()) {
            Ok(out)
        } else {
            Err(Error::NumericFailure { step: 0, substep: 0 })
        }
    }

    /// Analytic Jacobian `Σ ± Wᵀ diag(f'(W x)) W`. For ReLU, `f'(0) = 0`.
    pub fn jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        check_dim(self.dim, x.len())?;
        let n = self.dim;
        let mut j = DMatrix::<f64>::zeros(n, n);
        for (sign, order, w) in self.blocks() {
            for row in w.chunks_exact(n) {
                let z: f64 = row.iter().zip(x).map(|(a, b)| a * b).sum();
                let (_, d) = self.activation.eval(order, z);
                let d = sign * d;
                if d == 0.0 {
                    continue;
                }
                for r in 0..n {
                    let dr = d * row[r];
                    for c in 0..n {
                        j[(r, c)] += dr * row[c];
                    }
                }
            }
        }
        Ok(j)
    }

    /// Vector–Jacobian product for the scalar `g · out(x)`.
    ///
    /// Adds `scale · ∂(g·out)/∂θ` into `param_grad` (same layout as
    /// [`params`](Self::params)) and overwrites `input_grad` with `Jᵀ g`.
    pub fn vjp(&self, x: &[f64], g: &[f64], scale: f64, param_grad: &mut [f64], input_grad: &mut [f64]) {
        let n = self.dim;
        let block = self.block();
        debug_assert_eq!(param_grad.len(), self.params.len());
        input_grad.fill(0.0);
        let (weights, bias) = self.params.split_at(2 * self.terms * block);
        let (wgrad, bgrad) = param_grad.split_at_mut(2 * self.terms * block);
        for (k, (w, gw)) in weights.chunks_exact(block).zip(wgrad.chunks_exact_mut(block)).enumerate() {
            let (sign, order) =
                if k < self.terms { (1.0, k + 1) } else { (-1.0, k - self.terms + 1) };
            for (row, grow) in w.chunks_exact(n).zip(gw.chunks_exact_mut(n)) {
                let z: f64 = row.iter().zip(x).map(|(a, b)| a * b).sum();
                let u: f64 = row.iter().zip(g).map(|(a, b)| a * b).sum();
                let (f, d) = self.activation.eval(order, z);
                let sf = scale * sign * f;
                let sdu = scale * sign * d * u;
                for l in 0..n {
                    grow[l] += sf * g[l] + sdu * x[l];
                }
                let du = sign * d * u;
                for (ig, a) in input_grad.iter_mut().zip(row) {
                    *ig += a * du;
                }
            }
        }
        debug_assert_eq!(bias.len(), n);
        for (bg, gl) in bgrad.iter_mut().zip(g) {
            *bg += scale * gl;
        }
    }
}

impl TaylorGradNet {
    /// Writes `J(x) v` into `out`.
    pub fn jacobian_vec(&self, x: &[f64], v: &[f64], out: &mut [f64]) {
        let n = self.dim;
        out.fill(0.0);
        for (sign, order, w) in self.blocks() {
            for row in w.chunks_exact(n) {
                let z: f64 = row.iter().zip(x).map(|(a, b)| a * b).sum();
                let (_, d) = self.activation.eval(order, z);
                if d == 0.0 {
                    continue;
                }
                let u: f64 = row.iter().zip(v).map(|(a, b)| a * b).sum();
                let du = sign * d * u;
                for (o, a) in out.iter_mut().zip(row) {
                    *o += a * du;
                }
            }
        }
    }
}

/// Random initialization: every entry of `A_i` and `B_i` is drawn from a
/// normal with standard deviation `sqrt(2 / (N·N_h·(i+1)))`; bias is zero.
pub fn init_net(dim: usize, hidden: usize, terms: usize, seed: u64) -> Result<TaylorGradNet> {
    init_net_with(dim, hidden, terms, Activation::TaylorTerm, seed)
}

pub fn init_net_with(
    dim: usize,
    hidden: usize,
    terms: usize,
    activation: Activation,
    seed: u64,
) -> Result<TaylorGradNet> {
    let mut net = TaylorGradNet::zeros(dim, hidden, terms, activation)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..terms {
        let order = (i + 1) as f64;
        let std = (2.0 / (dim as f64 * hidden as f64 * (order + 1.0))).sqrt();
        let normal = Normal::new(0.0, std).map_err(|e| Error::Config(e.to_string()))?;
        for w in net.a_mut(i) {
            *w = normal.sample(&mut rng);
        }
        for w in net.b_mut(i) {
            *w = normal.sample(&mut rng);
        }
    }
    Ok(net)
}

impl GradientField for TaylorGradNet {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        self.forward_unchecked(x, out);
        if out.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NumericFailure { step: 0, substep: 0 })
        }
    }
}

#[derive(Serialize, Deserialize)]
struct NetDocument {
    dim: usize,
    hidden: usize,
    terms: usize,
    activation: Activation,
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    b: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

impl Serialize for TaylorGradNet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        NetDocument {
            dim: self.dim,
            hidden: self.hidden,
            terms: self.terms,
            activation: self.activation,
            a: (0..self.terms).map(|i| self.a(i).to_vec()).collect(),
            b: (0..self.terms).map(|i| self.b(i).to_vec()).collect(),
            bias: self.bias().to_vec(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for TaylorGradNet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let doc = NetDocument::deserialize(d)?;
        if doc.a.len() != doc.terms {
            return Err(serde::de::Error::custom(format!(
                "terms = {} but {} A matrices",
                doc.terms,
                doc.a.len()
            )));
        }
        TaylorGradNet::from_parts(doc.dim, doc.hidden, doc.activation, &doc.a, &doc.b, &doc.bias)
            .map_err(serde::de::Error::custom)
    }
}

impl TaylorGradNet {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn taylor_term_values() {
        assert_eq!(taylor_term(1, 3.0).unwrap(), 3.0);
        assert_eq!(taylor_term(2, 2.0).unwrap(), 2.0);
        assert!((taylor_term(3, 2.0).unwrap() - 4.0 / 3.0).abs() < 1e-15);
        assert!(matches!(taylor_term(0, 1.0), Err(Error::TermOrder(0))));
        assert!(matches!(taylor_term(31, 1.0), Err(Error::TermOrder(31))));
        assert!(matches!(taylor_term(30, 1e20), Err(Error::TermOverflow { order: 30, .. })));
    }

    #[test]
    fn factorial_table_is_accurate() {
        // 30! = 265252859812191058636308480000000
        let exact = 265_252_859_812_191_058_636_308_480_000_000f64;
        assert!((FACTORIAL[30] - exact).abs() / exact < 1e-15);
        assert_eq!(FACTORIAL[20], 2_432_902_008_176_640_000.0);
    }

    #[test]
    fn init_is_deterministic_with_zero_bias() {
        let a = init_net(2, 8, 4, 7).unwrap();
        let b = init_net(2, 8, 4, 7).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, init_net(2, 8, 4, 8).unwrap());
        assert!(a.bias().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn init_standard_deviation() {
        // 6250 nets × 16 entries of A_1 = 10^5 draws.
        let mut sum = 0.0;
        let mut sq = 0.0;
        let mut count = 0.0;
        for seed in 0..6250 {
            let net = init_net(1, 16, 8, seed).unwrap();
            for w in net.a(0) {
                sum += w;
                sq += w * w;
                count += 1.0;
            }
        }
        let mean = sum / count;
        let std = (sq / count - mean * mean).sqrt();
        let want = (2.0f64 / 32.0).sqrt();
        assert!((std - want).abs() / want < 0.03, "std {std} want {want}");
    }

    #[test]
    fn zero_weights_output_bias() {
        let mut net = TaylorGradNet::zeros(3, 4, 2, Activation::TaylorTerm).unwrap();
        net.bias_mut().copy_from_slice(&[1.0, -2.0, 0.5]);
        assert_eq!(net.forward(&[0.3, 0.2, 0.1]).unwrap(), vec![1.0, -2.0, 0.5]);
        let j = net.jacobian(&[0.3, 0.2, 0.1]).unwrap();
        assert!(j.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn identity_first_term_is_identity_map() {
        let eye = vec![1.0, 0.0, 0.0, 1.0];
        let net = TaylorGradNet::from_parts(
            2,
            2,
            Activation::TaylorTerm,
            &[eye],
            &[vec![0.0; 4]],
            &[0.0, 0.0],
        )
        .unwrap();
        assert_eq!(net.forward(&[0.7, -1.3]).unwrap(), vec![0.7, -1.3]);
    }

    // Independent evaluation of the network with nested Vec matrices and
    // the textbook factorial, used as the second implementation.
    fn reference_forward(net: &TaylorGradNet, x: &[f64]) -> Vec<f64> {
        let (n, h) = (net.dim(), net.hidden());
        let mut out = net.bias().to_vec();
        for i in 0..net.terms() {
            let order = i + 1;
            let fact: f64 = (1..=order).map(|k| k as f64).product();
            for (w, sign) in [(net.a(i), 1.0), (net.b(i), -1.0)] {
                let m: Vec<Vec<f64>> = (0..h).map(|r| w[r * n..(r + 1) * n].to_vec()).collect();
                let z: Vec<f64> = m.iter().map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum()).collect();
                let f: Vec<f64> = z.iter().map(|v| v.powi(order as i32) / fact).collect();
                for c in 0..n {
                    out[c] += sign * (0..h).map(|r| m[r][c] * f[r]).sum::<f64>();
                }
            }
        }
        out
    }

    #[test]
    fn forward_matches_reference() {
        let mut net = init_net(2, 3, 2, 11).unwrap();
        net.bias_mut().copy_from_slice(&[0.1, -0.2]);
        for x in [[0.5, -0.25], [1.5, 2.0], [-3.0, 0.0]] {
            let got = net.forward(&x).unwrap();
            let want = reference_forward(&net, &x);
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() < 1e-14 * (1.0 + w.abs()), "{got:?} vs {want:?}");
            }
        }
    }

    #[test]
    fn relu_forward_and_subgradient() {
        let net = TaylorGradNet::from_parts(
            1,
            2,
            Activation::Relu,
            &[vec![1.0, -1.0]],
            &[vec![0.0, 0.0]],
            &[0.0],
        )
        .unwrap();
        // Aᵀ max(0, A x) = |x| for A = [1, −1]ᵀ.
        assert_eq!(net.forward(&[-2.0]).unwrap(), vec![-2.0]);
        assert_eq!(net.forward(&[3.0]).unwrap(), vec![3.0]);
        assert_eq!(net.jacobian(&[0.0]).unwrap()[(0, 0)], 0.0);
        assert_eq!(net.jacobian(&[1.0]).unwrap()[(0, 0)], 1.0);
    }

    #[test]
    fn non_finite_output_is_error() {
        let net = TaylorGradNet::from_parts(
            1,
            1,
            Activation::TaylorTerm,
            &[vec![1.0], vec![1.0]],
            &[vec![0.0], vec![0.0]],
            &[0.0],
        )
        .unwrap();
        assert!(net.forward(&[1e200]).is_err());
    }

    #[test]
    fn json_round_trip_is_exact() {
        let mut net = init_net(3, 5, 4, 99).unwrap();
        net.bias_mut()[1] = 1.0 / 3.0;
        let text = net.to_json().unwrap();
        let back = TaylorGradNet::from_json(&text).unwrap();
        assert_eq!(back, net);
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["activation"], "taylor_term");
        assert_eq!(v["A"].as_array().unwrap().len(), 4);
        assert_eq!(v["A"][0].as_array().unwrap().len(), 15);
    }

    #[test]
    fn json_rejects_bad_shapes() {
        let bad = r#"{"dim":1,"hidden":2,"terms":1,"activation":"relu","A":[[1.0]],"B":[[1.0,2.0]],"bias":[0.0]}"#;
        assert!(TaylorGradNet::from_json(bad).is_err());
    }

    fn random_net() -> impl Strategy<Value = (TaylorGradNet, Vec<f64>)> {
        (1usize..5, 1usize..6, 1usize..6, any::<u64>()).prop_flat_map(|(n, h, m, seed)| {
            let net = init_net(n, h, m, seed).unwrap();
            (Just(net), proptest::collection::vec(-2.0f64..2.0, n))
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn jacobian_is_symmetric((net, x) in random_net()) {
            let j = net.jacobian(&x).unwrap();
            let asym = (&j - j.transpose()).amax();
            prop_assert!(asym <= 1e-12 * (1.0 + j.amax()));
        }
    }

    proptest! {
        #[test]
        fn jacobian_matches_finite_differences((net, x) in random_net()) {
            let j = net.jacobian(&x).unwrap();
            let n = x.len();
            let scale = 1.0 + j.amax();
            for c in 0..n {
                let h = 1e-5 * (1.0 + x[c].abs());
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[c] += h;
                xm[c] -= h;
                let fp = net.forward(&xp).unwrap();
                let fm = net.forward(&xm).unwrap();
                for r in 0..n {
                    let fd = (fp[r] - fm[r]) / (xp[c] - xm[c]);
                    prop_assert!((fd - j[(r, c)]).abs() < 1e-6 * scale, "J[{r},{c}] {} vs fd {}", j[(r, c)], fd);
                }
            }
        }

        #[test]
        fn forward_is_affine_in_bias((net, x) in random_net(), shift in -1.0f64..1.0) {
            let mut shifted = net.clone();
            shifted.bias_mut().iter_mut().for_each(|b| *b = shift);
            let base = net.forward(&x).unwrap();
            let moved = shifted.forward(&x).unwrap();
            for (a, b) in moved.iter().zip(&base) {
                prop_assert!((a - b - shift).abs() < 1e-12 * (1.0 + b.abs()));
            }
        }

        #[test]
        fn vjp_matches_jacobian_transpose((net, x) in random_net(), seed in any::<u64>()) {
            use rand::Rng;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g: Vec<f64> = (0..x.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let j = net.jacobian(&x).unwrap();
            let mut pg = vec![0.0; net.n_params()];
            let mut ig = vec![0.0; x.len()];
            net.vjp(&x, &g, 1.0, &mut pg, &mut ig);
            for c in 0..x.len() {
                let want: f64 = (0..x.len()).map(|r| j[(r, c)] * g[r]).sum();
                prop_assert!((ig[c] - want).abs() < 1e-12 * (1.0 + want.abs()));
            }
        }
    }

    #[test]
    fn vjp_parameter_gradient_matches_finite_differences() {
        let mut net = init_net(2, 3, 3, 5).unwrap();
        net.bias_mut().copy_from_slice(&[0.2, -0.1]);
        let x = [0.8, -1.1];
        let g = [0.3, -0.7];
        let mut pg = vec![0.0; net.n_params()];
        let mut ig = vec![0.0; 2];
        net.vjp(&x, &g, 2.0, &mut pg, &mut ig);
        let objective = |n: &TaylorGradNet| {
            let o = n.forward(&x).unwrap();
            2.0 * (o[0] * g[0] + o[1] * g[1])
        };
        for k in 0..net.n_params() {
            let h = 1e-6;
            let mut plus = net.clone();
            let mut minus = net.clone();
            plus.params_mut()[k] += h;
            minus.params_mut()[k] -= h;
            let fd = (objective(&plus) - objective(&minus)) / (2.0 * h);
            assert!((fd - pg[k]).abs() < 1e-8 * (1.0 + fd.abs()), "param {k}: {} vs {fd}", pg[k]);
        }
    }
}
