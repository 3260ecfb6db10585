//! Weighted `L²` machinery: composite Gauss–Legendre inner products,
//! orthonormalisation of score directions, and the reflection chain that
//! carries the target's Legendre directions onto the fitted model's.
//!
//! Functions are expanded over a small set of smooth "atoms" (for a fitted
//! model: `ℓ`, the score directions `α_j` and `ℓ p_j(·/T)`), optionally plus
//! one truncated atom `atom·𝟙_{[0,t]}`. Every reflection of such a function
//! stays in that form, so the whole chain is linear algebra on coefficient
//! vectors against a precomputed Gram matrix.

use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::legendre;
use crate::models::{Family, ModelSpec};
use crate::path::ObservedPath;

pub const DEFAULT_PANELS: usize = 256;
pub const DEFAULT_ORDER: usize = 8;
/// Unit-norm tolerance for reflection inputs.
pub const UNIT_TOL: f64 = 1e-6;
/// Relative threshold below which a reflection stage is treated as identity.
pub const DEGENERATE_EPS: f64 = 1e-12;

/// Composite Gauss–Legendre rule on `[0, T]`.
#[derive(Debug, Clone)]
pub struct QuadratureGrid {
    breaks: Vec<f64>,
    order: usize,
    rule_x: Vec<f64>,
    rule_w: Vec<f64>,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl QuadratureGrid {
    pub fn uniform(horizon: f64, panels: usize, order: usize) -> Self {
        Self::with_breaks(horizon, panels, order, &[])
    }

    /// Uniform panels refined so that every point of `extra` inside
    /// `(0, T)` is a panel boundary.
    pub fn with_breaks(horizon: f64, panels: usize, order: usize, extra: &[f64]) -> Self {
        assert!(horizon > 0.0 && panels >= 1 && order >= 1);
        let mut breaks: Vec<f64> = (0..=panels)
            .map(|k| horizon * k as f64 / panels as f64)
            .collect();
        breaks[panels] = horizon;
        breaks.extend(extra.iter().copied().filter(|&t| t > 0.0 && t < horizon));
        breaks.sort_by(f64::total_cmp);
        breaks.dedup();
        let (rule_x, rule_w) = legendre::gauss_legendre(order);
        let mut nodes = Vec::with_capacity((breaks.len() - 1) * order);
        let mut weights = Vec::with_capacity(nodes.capacity());
        for w in breaks.windows(2) {
            let (a, b) = (w[0], w[1]);
            let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
            for (x, wt) in rule_x.iter().zip(&rule_w) {
                nodes.push(mid + half * x);
                weights.push(half * wt);
            }
        }
        Self {
            breaks,
            order,
            rule_x,
            rule_w,
            nodes,
            weights,
        }
    }

    pub fn horizon(&self) -> f64 {
        self.breaks[self.breaks.len() - 1]
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn breaks(&self) -> &[f64] {
        &self.breaks
    }

    pub fn n_panels(&self) -> usize {
        self.breaks.len() - 1
    }

    pub fn panels(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.breaks.windows(2).map(|w| (w[0], w[1]))
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Gauss rule of the same order on `[a, b]`.
    pub fn rule_on(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
        self.rule_x
            .iter()
            .zip(&self.rule_w)
            .map(move |(x, w)| (mid + half * x, half * w))
    }

    /// Panels fully inside `[0, t]`, and the partial panel `[left, t]` if `t`
    /// is not a boundary.
    fn split(&self, t: f64) -> (usize, Option<(usize, f64)>) {
        let t = t.clamp(0.0, self.horizon());
        let k = self.breaks.partition_point(|&b| b <= t);
        // breaks[k-1] <= t < breaks[k]
        let full = k - 1;
        if self.breaks[k - 1] == t || k == self.breaks.len() {
            (full.min(self.n_panels()), None)
        } else {
            (full, Some((full, self.breaks[full])))
        }
    }
}

/// A finite family of smooth functions on `[0, T]` plus the weight of the
/// inner product `⟨f, g⟩ = ∫ f g w`.
pub trait Basis: Send + Sync {
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    fn eval(&self, s: f64, out: &mut [f64]);
    fn weight(&self, s: f64) -> f64;
}

/// How a [`FunctionRep`] is anchored: nothing, or one atom truncated to
/// `[0, cutoff]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Base {
    Zero,
    Indicator { atom: usize, cutoff: f64 },
}

/// `base(s) + Σ_k coef_k · (direction_k · atoms)(s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionRep {
    base: Base,
    terms: Vec<(f64, Arc<[f64]>)>,
}

impl FunctionRep {
    pub fn zero() -> Self {
        Self {
            base: Base::Zero,
            terms: Vec::new(),
        }
    }

    /// Smooth function with atom coefficients `coefs`.
    pub fn smooth(coefs: Vec<f64>) -> Self {
        Self {
            base: Base::Zero,
            terms: vec![(1.0, coefs.into())],
        }
    }

    pub fn atom(index: usize, n_atoms: usize) -> Self {
        let mut c = vec![0.0; n_atoms];
        c[index] = 1.0;
        Self::smooth(c)
    }

    /// `atom · 𝟙_{[0, cutoff]}`.
    pub fn indicator(atom: usize, cutoff: f64) -> Self {
        Self {
            base: Base::Indicator { atom, cutoff },
            terms: Vec::new(),
        }
    }

    pub fn base(&self) -> Base {
        self.base
    }

    pub fn terms(&self) -> &[(f64, Arc<[f64]>)] {
        &self.terms
    }

    pub fn is_smooth(&self) -> bool {
        self.base == Base::Zero
    }

    pub fn with_term(mut self, coef: f64, direction: Arc<[f64]>) -> Self {
        self.terms.push((coef, direction));
        self
    }

    /// Collapsed coefficient vector of the smooth part.
    pub fn smooth_coefs(&self, n_atoms: usize) -> Vec<f64> {
        let mut out = vec![0.0; n_atoms];
        for (c, dir) in &self.terms {
            for (o, d) in out.iter_mut().zip(dir.iter()) {
                *o += c * d;
            }
        }
        out
    }
}

/// A basis evaluated on a quadrature grid, with its Gram matrix and
/// cumulative Gram matrices at every panel boundary.
pub struct WeightedSpace<B: Basis> {
    basis: B,
    grid: QuadratureGrid,
    k: usize,
    values: Vec<f64>,
    mass: Vec<f64>,
    gram: DMatrix<f64>,
    cumulative: Vec<f64>,
}

impl<B: Basis> WeightedSpace<B> {
    /// Fails with a support error if the weight is negative (or not finite)
    /// at a node.
    pub fn new(basis: B, grid: QuadratureGrid) -> Result<Self> {
        let k = basis.len();
        let nodes = grid.nodes();
        let mut values = vec![0.0; nodes.len() * k];
        let mut mass = vec![0.0; nodes.len()];
        for (i, (&s, &w)) in nodes.iter().zip(grid.weights()).enumerate() {
            let beta = basis.weight(s);
            if !(beta >= 0.0 && beta.is_finite()) {
                return Err(Error::Support { t: s });
            }
            mass[i] = w * beta;
            basis.eval(s, &mut values[i * k..(i + 1) * k]);
        }
        let order = grid.order();
        let panels = grid.n_panels();
        let mut cumulative = vec![0.0; (panels + 1) * k * k];
        for p in 0..panels {
            let (prev, rest) = cumulative.split_at_mut((p + 1) * k * k);
            let cur = &mut rest[..k * k];
            cur.copy_from_slice(&prev[p * k * k..]);
            for i in p * order..(p + 1) * order {
                let row = &values[i * k..(i + 1) * k];
                for a in 0..k {
                    let wa = mass[i] * row[a];
                    for b in 0..k {
                        cur[a * k + b] += wa * row[b];
                    }
                }
            }
        }
        let gram = DMatrix::from_row_slice(k, k, &cumulative[panels * k * k..]);
        Ok(Self {
            basis,
            grid,
            k,
            values,
            mass,
            gram,
            cumulative,
        })
    }

    pub fn basis(&self) -> &B {
        &self.basis
    }

    pub fn grid(&self) -> &QuadratureGrid {
        &self.grid
    }

    pub fn n_atoms(&self) -> usize {
        self.k
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    /// Atom values at quadrature node `i`.
    pub fn node_values(&self, i: usize) -> &[f64] {
        &self.values[i * self.k..(i + 1) * self.k]
    }

    /// Quadrature weight times inner-product weight at node `i`.
    pub fn node_mass(&self, i: usize) -> f64 {
        self.mass[i]
    }

    /// `C_{ab}(t) = ∫_0^t atom_a atom_b w`, row-major `k × k`.
    pub fn cumulative(&self, t: f64) -> Vec<f64> {
        let k = self.k;
        let (full, partial) = self.grid.split(t);
        let mut out = self.cumulative[full * k * k..(full + 1) * k * k].to_vec();
        if let Some((_, left)) = partial {
            let mut row = vec![0.0; k];
            for (s, w) in self.grid.rule_on(left, t.min(self.grid.horizon())) {
                self.basis.eval(s, &mut row);
                let m = w * self.basis.weight(s);
                for a in 0..k {
                    for b in 0..k {
                        out[a * k + b] += m * row[a] * row[b];
                    }
                }
            }
        }
        out
    }

    /// `xᵀ M y` for smooth coefficient vectors.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        let k = self.k;
        let mut acc = 0.0;
        for a in 0..k {
            if x[a] == 0.0 {
                continue;
            }
            let mut row = 0.0;
            for b in 0..k {
                row += self.gram[(a, b)] * y[b];
            }
            acc += x[a] * row;
        }
        acc
    }

    pub fn inner(&self, f: &FunctionRep, g: &FunctionRep) -> f64 {
        let k = self.k;
        let fs = f.smooth_coefs(k);
        let gs = g.smooth_coefs(k);
        let mut acc = self.bilinear(&fs, &gs);
        let ind_smooth = |atom: usize, cutoff: f64, other: &[f64]| {
            let c = self.cumulative(cutoff);
            (0..k).map(|b| c[atom * k + b] * other[b]).sum::<f64>()
        };
        if let Base::Indicator { atom, cutoff } = f.base {
            acc += ind_smooth(atom, cutoff, &gs);
        }
        if let Base::Indicator { atom, cutoff } = g.base {
            acc += ind_smooth(atom, cutoff, &fs);
        }
        if let (
            Base::Indicator {
                atom: a,
                cutoff: s,
            },
            Base::Indicator {
                atom: b,
                cutoff: t,
            },
        ) = (f.base, g.base)
        {
            acc += self.cumulative(s.min(t))[a * k + b];
        }
        acc
    }

    pub fn norm(&self, f: &FunctionRep) -> f64 {
        self.inner(f, f).max(0.0).sqrt()
    }

    pub fn eval(&self, f: &FunctionRep, s: f64) -> f64 {
        let mut row = vec![0.0; self.k];
        self.basis.eval(s, &mut row);
        let mut v: f64 = f
            .smooth_coefs(self.k)
            .iter()
            .zip(&row)
            .map(|(c, r)| c * r)
            .sum();
        if let Base::Indicator { atom, cutoff } = f.base {
            if s <= cutoff {
                v += row[atom];
            }
        }
        v
    }

    /// `R_{a,b} φ = φ − 2⟨a − b, φ⟩ / ‖a − b‖² · (a − b)` for smooth unit
    /// vectors `a`, `b`; identity if `a ≈ b`.
    pub fn reflect(&self, a: &FunctionRep, b: &FunctionRep, phi: &FunctionRep) -> Result<FunctionRep> {
        if !(a.is_smooth() && b.is_smooth()) {
            return Err(Error::Argument("reflection vectors must be smooth".into()));
        }
        let (na, nb) = (self.norm(a), self.norm(b));
        if (na - 1.0).abs() > UNIT_TOL || (nb - 1.0).abs() > UNIT_TOL {
            return Err(Error::UnitNorm {
                stage: 0,
                norm_a: na,
                norm_b: nb,
            });
        }
        let ac = a.smooth_coefs(self.k);
        let bc = b.smooth_coefs(self.k);
        let u: Vec<f64> = ac.iter().zip(&bc).map(|(x, y)| x - y).collect();
        let norm2 = self.bilinear(&u, &u);
        if norm2 < DEGENERATE_EPS * (na * na + nb * nb) {
            return Ok(phi.clone());
        }
        let dir: Arc<[f64]> = u.into();
        let proj = self.inner(&FunctionRep::smooth(dir.to_vec()), phi);
        Ok(phi.clone().with_term(-2.0 * proj / norm2, dir))
    }

    /// Max over quadrature nodes of `|f(s)|` for a smooth coefficient vector.
    pub fn sup_on_nodes(&self, coefs: &[f64]) -> f64 {
        (0..self.grid.nodes().len())
            .map(|i| {
                self.node_values(i)
                    .iter()
                    .zip(coefs)
                    .map(|(v, c)| v * c)
                    .sum::<f64>()
                    .abs()
            })
            .fold(0.0, f64::max)
    }
}

/// Orthonormalised score directions `q = Γ^{-1/2} α`.
///
/// The root is taken after rescaling every coordinate to a unit-norm score
/// (`α̃ = Dα`, `D = diag(Γ)^{-1/2}`), i.e. in the parametrisation where
/// `Γ̃ = DΓD` is a correlation matrix. Any positive rescaling of individual
/// parameters (time units, `p ↦ p/c` with `n ↦ cn`) then leaves `q` unchanged.
#[derive(Debug, Clone)]
pub struct Orthonormal {
    /// `Γ = ∫ α αᵀ w` in the model's own parametrisation.
    pub gamma: DMatrix<f64>,
    /// `diag(Γ)^{-1/2}`.
    pub scale: Vec<f64>,
    /// Eigenvalues of `Γ̃`.
    pub eigenvalues: Vec<f64>,
    /// `Γ̃^{-1/2}`.
    pub inv_sqrt: DMatrix<f64>,
    /// Atom coefficients of `q_1..q_m`.
    pub q: Vec<Vec<f64>>,
}

/// `Γ̃^{-1/2} D α`, with `α_j` the atoms listed in `alpha_atoms`.
pub fn orthonormalize<B: Basis>(space: &WeightedSpace<B>, alpha_atoms: &[usize]) -> Result<Orthonormal> {
    let m = alpha_atoms.len();
    let gamma = DMatrix::from_fn(m, m, |i, j| space.gram[(alpha_atoms[i], alpha_atoms[j])]);
    let scale: Vec<f64> = (0..m).map(|i| 1.0 / gamma[(i, i)].sqrt()).collect();
    if scale.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(Error::Identifiability {
            smallest: (0..m).map(|i| gamma[(i, i)]).fold(f64::INFINITY, f64::min),
            condition: f64::INFINITY,
        });
    }
    let corr = DMatrix::from_fn(m, m, |i, j| gamma[(i, j)] * scale[i] * scale[j]);
    let eig = SymmetricEigen::new(corr);
    let trace: f64 = eig.eigenvalues.iter().sum();
    let smallest = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let largest = eig.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let condition = largest / smallest;
    if !(smallest > 1e-12 * trace) || !(condition < 1e12) {
        return Err(Error::Identifiability {
            smallest,
            condition,
        });
    }
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| 1.0 / v.sqrt()));
    let inv_sqrt = &eig.eigenvectors * d * eig.eigenvectors.transpose();
    let k = space.n_atoms();
    let q = (0..m)
        .map(|i| {
            let mut c = vec![0.0; k];
            for j in 0..m {
                c[alpha_atoms[j]] += inv_sqrt[(i, j)] * scale[j];
            }
            c
        })
        .collect();
    Ok(Orthonormal {
        gamma,
        scale,
        eigenvalues: eig.eigenvalues.iter().copied().collect(),
        inv_sqrt,
        q,
    })
}

/// `U⁽ᵐ⁾ = R_m ∘ … ∘ R_1` with `R_k = R_{a_k, b_k}`, `a_k = q̂_k`,
/// `b_k = U⁽ᵏ⁻¹⁾ ℓ q_{μ,k}`.
#[derive(Debug, Clone)]
pub struct UnitaryChain {
    m: usize,
    k: usize,
    a: Vec<Arc<[f64]>>,
    b: Vec<Arc<[f64]>>,
    directions: Vec<Arc<[f64]>>,
    norms2: Vec<f64>,
    degenerate: Vec<bool>,
    /// `u_jᵀ M u_k`.
    cross: Vec<f64>,
}

impl UnitaryChain {
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn directions(&self) -> &[Arc<[f64]>] {
        &self.directions
    }

    pub fn norms2(&self) -> &[f64] {
        &self.norms2
    }

    pub fn targets(&self) -> &[Arc<[f64]>] {
        &self.b
    }

    pub fn sources(&self) -> &[Arc<[f64]>] {
        &self.a
    }

    pub fn degenerate(&self) -> &[bool] {
        &self.degenerate
    }

    /// `U⁽ᵐ⁾ φ` for any representable `φ`.
    pub fn apply<B: Basis>(&self, space: &WeightedSpace<B>, phi: &FunctionRep) -> FunctionRep {
        let mut out = phi.clone();
        for k in 0..self.m {
            if self.degenerate[k] {
                continue;
            }
            let u = FunctionRep::smooth(self.directions[k].to_vec());
            let proj = space.inner(&u, &out);
            out = out.with_term(-2.0 * proj / self.norms2[k], self.directions[k].clone());
        }
        out
    }

    /// Reflection coefficients `c_k` of `U⁽ᵐ⁾ φ = φ + Σ c_k u_k`, given the
    /// inner products `⟨u_k, φ⟩` of the unreflected `φ`.
    pub fn coefficients(&self, raw: &[f64]) -> Vec<f64> {
        let mut c = vec![0.0; self.m];
        for k in 0..self.m {
            if self.degenerate[k] {
                continue;
            }
            let mut proj = raw[k];
            for j in 0..k {
                proj += c[j] * self.cross[j * self.m + k];
            }
            c[k] = -2.0 * proj / self.norms2[k];
        }
        c
    }

    /// `c_k` for `φ = atom · 𝟙_{[0,t]}` from the row `C_{atom,·}(t)`.
    pub fn indicator_coefficients(&self, cum_row: &[f64]) -> Vec<f64> {
        let raw: Vec<f64> = self
            .directions
            .iter()
            .map(|u| u.iter().zip(cum_row).map(|(a, b)| a * b).sum())
            .collect();
        self.coefficients(&raw)
    }

    pub fn n_atoms(&self) -> usize {
        self.k
    }
}

/// Builds the chain from `a_k` (orthonormal model directions) and the
/// unreflected targets `ℓ q_{μ,k}`, all smooth atom coefficient vectors.
pub fn build_chain<B: Basis>(
    space: &WeightedSpace<B>,
    sources: &[Vec<f64>],
    targets: &[Vec<f64>],
) -> Result<UnitaryChain> {
    let m = sources.len();
    assert_eq!(m, targets.len(), "one target per source direction");
    let k = space.n_atoms();
    let mut chain = UnitaryChain {
        m,
        k,
        a: Vec::with_capacity(m),
        b: Vec::with_capacity(m),
        directions: Vec::with_capacity(m),
        norms2: Vec::with_capacity(m),
        degenerate: Vec::with_capacity(m),
        cross: vec![0.0; m * m],
    };
    for stage in 0..m {
        let a = sources[stage].clone();
        // b_k = U⁽ᵏ⁻¹⁾ ℓ q_{μ,k}
        let mut b = targets[stage].clone();
        for j in 0..stage {
            if chain.degenerate[j] {
                continue;
            }
            let u = &chain.directions[j];
            let proj = space.bilinear(u, &b);
            let c = -2.0 * proj / chain.norms2[j];
            for (bi, ui) in b.iter_mut().zip(u.iter()) {
                *bi += c * ui;
            }
        }
        let na = space.bilinear(&a, &a).max(0.0).sqrt();
        let nb = space.bilinear(&b, &b).max(0.0).sqrt();
        if (na - 1.0).abs() > UNIT_TOL || (nb - 1.0).abs() > UNIT_TOL {
            return Err(Error::UnitNorm {
                stage: stage + 1,
                norm_a: na,
                norm_b: nb,
            });
        }
        let u: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
        let norm2 = space.bilinear(&u, &u);
        let degenerate = norm2 < DEGENERATE_EPS * (na * na + nb * nb);
        if degenerate {
            log::warn!("reflection stage {} is degenerate (|a - b|^2 = {norm2:e}); using identity", stage + 1);
        }
        chain.a.push(a.into());
        chain.b.push(b.into());
        chain.directions.push(u.into());
        chain.norms2.push(norm2);
        chain.degenerate.push(degenerate);
    }
    for i in 0..m {
        for j in 0..m {
            chain.cross[i * m + j] = space.bilinear(&chain.directions[i], &chain.directions[j]);
        }
    }
    Ok(chain)
}

/// `U⁽ᵐ⁾ (atom · 𝟙_{[0,t]})` in expansion form.
pub fn transform_indicator<B: Basis>(
    chain: &UnitaryChain,
    space: &WeightedSpace<B>,
    atom: usize,
    t: f64,
) -> FunctionRep {
    let k = space.n_atoms();
    let cum = space.cumulative(t);
    let c = chain.indicator_coefficients(&cum[atom * k..(atom + 1) * k]);
    let mut out = FunctionRep::indicator(atom, t);
    for (ck, u) in c.into_iter().zip(chain.directions.iter()) {
        if ck != 0.0 {
            out = out.with_term(ck, u.clone());
        }
    }
    out
}

/// Atoms of a fitted model: `[ℓ, α_1..α_m, ℓ p_1(·/T)..ℓ p_m(·/T)]`,
/// weighted by `β̂` (the empirical `λ̂/n` for the censored family).
#[derive(Debug, Clone)]
pub struct ModelBasis {
    spec: ModelSpec,
    theta: Vec<f64>,
    path: Option<ObservedPath>,
    horizon: f64,
}

impl ModelBasis {
    pub const ELL: usize = 0;

    pub fn new(spec: &ModelSpec, theta: &[f64], path: &ObservedPath) -> Self {
        let path = (spec.family() == Family::AalenWeibullCensored).then(|| path.clone());
        Self {
            spec: spec.clone(),
            theta: theta.to_vec(),
            path,
            horizon: spec.horizon(),
        }
    }

    pub fn m(&self) -> usize {
        self.spec.m()
    }

    pub fn alpha_atoms(&self) -> Vec<usize> {
        (1..=self.m()).collect()
    }

    pub fn target_atoms(&self) -> Vec<usize> {
        (self.m() + 1..=2 * self.m()).collect()
    }

    pub fn beta(&self, s: f64) -> f64 {
        self.spec.beta_raw(&self.theta, s, self.path.as_ref())
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }
}

impl Basis for ModelBasis {
    fn len(&self) -> usize {
        2 * self.m() + 1
    }

    fn eval(&self, s: f64, out: &mut [f64]) {
        let m = self.m();
        let beta = self.beta(s);
        let ell = (1.0 / (self.horizon * beta)).sqrt();
        out[0] = ell;
        self.spec.alpha_into(&self.theta, s, &mut out[1..=m]);
        legendre::orthonormal(s / self.horizon, &mut out[m + 1..]);
        for v in &mut out[m + 1..] {
            *v *= ell;
        }
    }

    fn weight(&self, s: f64) -> f64 {
        self.beta(s)
    }
}

/// Everything needed to transform paths under one fitted model.
pub struct FittedChain {
    pub space: WeightedSpace<ModelBasis>,
    pub ortho: Orthonormal,
    pub chain: UnitaryChain,
}

/// Grid, orthonormalisation and chain for `spec` at `theta`, with panel
/// boundaries at every path time and every point of `cutoffs`.
pub fn fitted_chain(
    spec: &ModelSpec,
    theta: &[f64],
    path: &ObservedPath,
    cutoffs: &[f64],
    panels: usize,
) -> Result<FittedChain> {
    let spec = if spec.horizon() != path.horizon() {
        spec.with_horizon(path.horizon())?
    } else {
        spec.clone()
    };
    let mut breaks: Vec<f64> = path.times().to_vec();
    breaks.extend_from_slice(cutoffs);
    let grid = QuadratureGrid::with_breaks(path.horizon(), panels, DEFAULT_ORDER, &breaks);
    let basis = ModelBasis::new(&spec, theta, path);
    for &s in grid.nodes() {
        let b = basis.beta(s);
        if !(b > 0.0) {
            return Err(Error::Support { t: s });
        }
    }
    let space = WeightedSpace::new(basis, grid)?;
    let alpha_atoms = space.basis().alpha_atoms();
    for &a in &alpha_atoms {
        if !space.gram()[(a, a)].is_finite() {
            return Err(Error::Overflow(format!(
                "score direction {a} is not square-integrable on the grid"
            )));
        }
    }
    let ortho = orthonormalize(&space, &alpha_atoms)?;
    let k = space.n_atoms();
    let targets: Vec<Vec<f64>> = space
        .basis()
        .target_atoms()
        .into_iter()
        .map(|i| {
            let mut c = vec![0.0; k];
            c[i] = 1.0;
            c
        })
        .collect();
    let chain = build_chain(&space, &ortho.q, &targets)?;
    Ok(FittedChain {
        space,
        ortho,
        chain,
    })
}

impl FittedChain {
    /// `max_k sup_nodes |U⁽ᵐ⁾ ℓ q_{μ,k} − q̂_k|`.
    pub fn mapping_error(&self) -> f64 {
        let k = self.space.n_atoms();
        let targets = self.space.basis().target_atoms();
        let mut worst: f64 = 0.0;
        for (stage, &atom) in targets.iter().enumerate() {
            let img = self.chain.apply(&self.space, &FunctionRep::atom(atom, k));
            let diff: Vec<f64> = img
                .smooth_coefs(k)
                .iter()
                .zip(self.ortho.q[stage].iter())
                .map(|(x, y)| x - y)
                .collect();
            worst = worst.max(self.space.sup_on_nodes(&diff));
        }
        worst
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::fit;
    use crate::models::ParamVector;
    use crate::sampler::simulate_path;

    struct Legendre {
        m: usize,
        horizon: f64,
    }

    impl Basis for Legendre {
        fn len(&self) -> usize {
            self.m
        }
        fn eval(&self, s: f64, out: &mut [f64]) {
            legendre::orthonormal(s / self.horizon, out);
        }
        fn weight(&self, _s: f64) -> f64 {
            1.0 / self.horizon
        }
    }

    /// Monomials under a Weibull(θ1 = 1.3, θ2 = 2.2) density.
    struct Monomials;

    impl Basis for Monomials {
        fn len(&self) -> usize {
            4
        }
        fn eval(&self, s: f64, out: &mut [f64]) {
            for (j, o) in out.iter_mut().enumerate() {
                *o = s.powi(j as i32);
            }
        }
        fn weight(&self, s: f64) -> f64 {
            let (a, b) = (1.3f64, 2.2f64);
            (b / a) * (s / a).powf(b - 1.0) * (-(s / a).powf(b)).exp()
        }
    }

    fn weibull_chain() -> FittedChain {
        let spec = ModelSpec::aalen_weibull(50.0, 50.0).unwrap();
        let path = simulate_path(&spec, &ParamVector::new(vec![86.0, 9.0]), 1000, 50.0, 17).unwrap();
        let f = fit(&spec, &path).unwrap();
        fitted_chain(&spec, f.theta_hat.as_slice(), &path, &[], DEFAULT_PANELS).unwrap()
    }

    #[test]
    fn legendre_atoms_are_orthonormal() {
        let space = WeightedSpace::new(
            Legendre { m: 3, horizon: 7.0 },
            QuadratureGrid::uniform(7.0, DEFAULT_PANELS, DEFAULT_ORDER),
        )
        .unwrap();
        for j in 0..3 {
            for k in 0..3 {
                let v = space.inner(&FunctionRep::atom(j, 3), &FunctionRep::atom(k, 3));
                let expect = if j == k { 1.0 } else { 0.0 };
                assert!((v - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn empty_indicator_is_null() {
        let space = WeightedSpace::new(
            Legendre { m: 3, horizon: 1.0 },
            QuadratureGrid::uniform(1.0, 16, 8),
        )
        .unwrap();
        let g = FunctionRep::smooth(vec![0.3, -1.0, 2.0]);
        assert_eq!(space.inner(&FunctionRep::indicator(1, 0.0), &g), 0.0);
    }

    fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> f64 {
        fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> f64 {
            let c = 0.5 * (a + b);
            (b - a) / 6.0 * (f(a) + 4.0 * f(c) + f(b))
        }
        fn rec<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, whole: f64, depth: u32) -> f64 {
            let c = 0.5 * (a + b);
            let (l, r) = (simpson(f, a, c), simpson(f, c, b));
            if depth == 0 || (l + r - whole).abs() < 1e-13 {
                l + r + (l + r - whole) / 15.0
            } else {
                rec(f, a, c, l, depth - 1) + rec(f, c, b, r, depth - 1)
            }
        }
        rec(f, a, b, simpson(f, a, b), 40)
    }

    #[test]
    fn weibull_weighted_polynomials_match_refinement_oracle() {
        let horizon = 3.0;
        let space = WeightedSpace::new(Monomials, QuadratureGrid::uniform(horizon, DEFAULT_PANELS, DEFAULT_ORDER)).unwrap();
        let f = FunctionRep::smooth(vec![0.5, -1.0, 0.25, 0.1]);
        let g = FunctionRep::smooth(vec![-2.0, 0.0, 1.5, -0.3]);
        let poly = |c: &[f64], s: f64| c.iter().enumerate().map(|(j, v)| v * s.powi(j as i32)).sum::<f64>();
        let integrand = |s: f64| {
            poly(&[0.5, -1.0, 0.25, 0.1], s) * poly(&[-2.0, 0.0, 1.5, -0.3], s) * Monomials.weight(s)
        };
        // split at 1e-3 to keep the s^{1.2} cusp from stalling the recursion
        let oracle = adaptive_simpson(&integrand, 0.0, 1e-3) + adaptive_simpson(&integrand, 1e-3, horizon);
        let quad = space.inner(&f, &g);
        assert!((quad - oracle).abs() < 1e-9, "{quad} vs {oracle}");
    }

    #[test]
    fn doubling_panels_is_stable() {
        let spec = ModelSpec::aalen_gompertz(50.0, 50.0).unwrap();
        let theta = [0.003, 0.073];
        let path = ObservedPath::from_events(vec![], 1000, 50.0).unwrap();
        let a = fitted_chain(&spec, &theta, &path, &[], 256).unwrap();
        let b = fitted_chain(&spec, &theta, &path, &[], 512).unwrap();
        let (ga, gb) = (a.space.gram(), b.space.gram());
        for i in 0..ga.nrows() {
            for j in 0..ga.ncols() {
                assert!((ga[(i, j)] - gb[(i, j)]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn indicator_cutoffs_inside_panels_are_exact() {
        let space = WeightedSpace::new(
            Legendre { m: 2, horizon: 1.0 },
            QuadratureGrid::uniform(1.0, 4, 8),
        )
        .unwrap();
        // ∫_0^t p_2 = sqrt(3)(t² − t)
        let t = 0.3;
        let v = space.inner(&FunctionRep::indicator(0, t), &FunctionRep::atom(1, 2));
        assert!((v - 3f64.sqrt() * (t * t - t)).abs() < 1e-14);
        let both = space.inner(&FunctionRep::indicator(1, 0.3), &FunctionRep::indicator(1, 0.8));
        // ∫_0^0.3 p_2²
        let exact = 12.0 * ((0.3f64 - 0.5).powi(3) + 0.125) / 3.0;
        assert!((both - exact).abs() < 1e-13);
    }

    #[test]
    fn target_at_null_has_identity_information() {
        let spec = ModelSpec::poisson_legendre(3, 2.0).unwrap();
        let path = ObservedPath::from_events(vec![], 100, 2.0).unwrap();
        let fc = fitted_chain(&spec, spec.target_null().as_slice(), &path, &[], DEFAULT_PANELS).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((fc.ortho.gamma[(i, j)] - e).abs() < 1e-10);
            }
        }
        // identical measures: ℓ = 1 and q̂ = ℓ q_μ, every stage degenerate
        assert!(fc.chain.degenerate().iter().all(|&d| d));
        assert!(fc.mapping_error() < 1e-10);
    }

    #[test]
    fn one_dimensional_orthonormalisation_is_scalar_normalisation() {
        let space = WeightedSpace::new(Monomials, QuadratureGrid::uniform(3.0, 64, 8)).unwrap();
        let o = orthonormalize(&space, &[2]).unwrap();
        let norm = space.norm(&FunctionRep::atom(2, 4));
        assert!((o.q[0][2] - 1.0 / norm).abs() < 1e-12);
    }

    #[test]
    fn collinear_scores_are_not_identifiable() {
        struct Twice;
        impl Basis for Twice {
            fn len(&self) -> usize {
                2
            }
            fn eval(&self, s: f64, out: &mut [f64]) {
                out[0] = s;
                out[1] = 2.0 * s;
            }
            fn weight(&self, _: f64) -> f64 {
                1.0
            }
        }
        let space = WeightedSpace::new(Twice, QuadratureGrid::uniform(1.0, 8, 4)).unwrap();
        assert!(matches!(
            orthonormalize(&space, &[0, 1]),
            Err(Error::Identifiability { .. })
        ));
    }

    #[test]
    fn operator_laws_on_weibull_fit() {
        let fc = weibull_chain();
        let space = &fc.space;
        let k = space.n_atoms();
        let a = FunctionRep::smooth(fc.ortho.q[0].clone());
        let ell_p = FunctionRep::atom(space.basis().target_atoms()[0], k);
        // R_{a,b} a = b
        let ra = space.reflect(&a, &ell_p, &a).unwrap();
        let diff: Vec<f64> = ra.smooth_coefs(k).iter().zip(ell_p.smooth_coefs(k)).map(|(x, y)| x - y).collect();
        assert!(space.sup_on_nodes(&diff) < 1e-8);
        let phi = FunctionRep::indicator(0, 21.3).with_term(0.7, vec![0.0, 1.0, -0.2, 0.0, 0.4].into());
        let psi = FunctionRep::indicator(0, 40.0);
        let r_phi = space.reflect(&a, &ell_p, &phi).unwrap();
        let r_psi = space.reflect(&a, &ell_p, &psi).unwrap();
        // self-adjoint
        assert!((space.inner(&r_phi, &psi) - space.inner(&phi, &r_psi)).abs() < 1e-8);
        // involution, pointwise
        let back = space.reflect(&a, &ell_p, &r_phi).unwrap();
        for j in 0..100 {
            let s = 50.0 * (j as f64 + 0.37) / 100.0;
            assert!((space.eval(&back, s) - space.eval(&phi, s)).abs() < 1e-8);
        }
        // isometry
        assert!((space.inner(&r_phi, &r_psi) - space.inner(&phi, &psi)).abs() < 1e-8);
    }

    #[test]
    fn reflection_fixes_orthogonal_complement() {
        let space = WeightedSpace::new(
            Legendre { m: 4, horizon: 1.0 },
            QuadratureGrid::uniform(1.0, 32, 8),
        )
        .unwrap();
        let a = FunctionRep::atom(0, 4);
        let b = FunctionRep::atom(1, 4);
        let phi = FunctionRep::smooth(vec![0.0, 0.0, 1.5, -2.0]);
        let r = space.reflect(&a, &b, &phi).unwrap();
        for j in 0..20 {
            let s = j as f64 / 19.0;
            assert!((space.eval(&r, s) - space.eval(&phi, s)).abs() < 1e-12);
        }
        let long = FunctionRep::smooth(vec![2.0, 0.0, 0.0, 0.0]);
        assert!(matches!(space.reflect(&long, &b, &phi), Err(Error::UnitNorm { .. })));
    }

    #[test]
    fn chain_maps_targets_onto_model_directions() {
        let fc = weibull_chain();
        assert!(fc.mapping_error() < 1e-6, "{}", fc.mapping_error());
        let space = &fc.space;
        let k = space.n_atoms();
        let targets = space.basis().target_atoms();
        for (i, &ti) in targets.iter().enumerate() {
            for (j, &tj) in targets.iter().enumerate() {
                let ui = fc.chain.apply(space, &FunctionRep::atom(ti, k));
                let uj = fc.chain.apply(space, &FunctionRep::atom(tj, k));
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((space.inner(&ui, &uj) - e).abs() < 1e-6);
                // ℓ is an isometry from the target space
                let li = FunctionRep::atom(ti, k);
                let lj = FunctionRep::atom(tj, k);
                assert!((space.inner(&li, &lj) - e).abs() < 1e-8);
            }
        }
        for i in 0..2 {
            for j in 0..2 {
                let qi = FunctionRep::smooth(fc.ortho.q[i].clone());
                let qj = FunctionRep::smooth(fc.ortho.q[j].clone());
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((space.inner(&qi, &qj) - e).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn chain_preserves_inner_products() {
        use rand::{Rng, SeedableRng};
        let fc = weibull_chain();
        let space = &fc.space;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let mut rand_fn = || {
                let coefs: Vec<f64> = (0..space.n_atoms()).map(|_| rng.random_range(-1.0..1.0)).collect();
                FunctionRep::indicator(0, rng.random_range(0.0..50.0)).with_term(1.0, coefs.into())
            };
            let (f, g) = (rand_fn(), rand_fn());
            let (uf, ug) = (fc.chain.apply(space, &f), fc.chain.apply(space, &g));
            let before = space.inner(&f, &g);
            assert!((space.inner(&uf, &ug) - before).abs() < 1e-8 * before.abs().max(1.0));
        }
    }

    #[test]
    fn transformed_indicator_properties() {
        let fc = weibull_chain();
        let space = &fc.space;
        let g0 = transform_indicator(&fc.chain, space, ModelBasis::ELL, 0.0);
        for j in 0..10 {
            assert!(space.eval(&g0, 5.0 * j as f64 + 0.1).abs() < 1e-12);
        }
        let g_t = transform_indicator(&fc.chain, space, ModelBasis::ELL, 50.0);
        let ell = FunctionRep::atom(ModelBasis::ELL, space.n_atoms());
        assert!((space.norm(&g_t) - space.norm(&ell)).abs() < 1e-8);
        // expansion coefficients agree with applying the chain generically
        for &t in &[3.3, 12.0, 27.9, 44.4] {
            let direct = fc.chain.apply(space, &FunctionRep::indicator(ModelBasis::ELL, t));
            let fast = transform_indicator(&fc.chain, space, ModelBasis::ELL, t);
            for j in 0..25 {
                let s = 2.0 * j as f64 + 0.5;
                assert!((space.eval(&direct, s) - space.eval(&fast, s)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn censored_ell_jumps_only_at_path_times() {
        let cens = crate::models::Censoring {
            probability: 0.4,
            rate: 1.0 / 15.0,
        };
        let spec = ModelSpec::aalen_weibull_censored(50.0, 50.0, cens).unwrap();
        let path = ObservedPath::new(vec![10.0, 20.0, 30.0], vec![true, false, true], 5, 50.0).unwrap();
        let basis = ModelBasis::new(&spec, &[86.0, 9.0], &path);
        let ell = |s: f64| {
            let mut out = vec![0.0; 5];
            basis.eval(s, &mut out);
            out[0]
        };
        let eps = 1e-9;
        for &t in &[10.0, 20.0, 30.0] {
            assert!((ell(t + eps) - ell(t - eps)).abs() > 1e-3);
        }
        assert!((ell(15.0 + eps) - ell(15.0 - eps)).abs() < 1e-6);
    }
}
