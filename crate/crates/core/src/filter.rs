//! Grid filter for the conditional density of X̃ mod 1, X̃ = X − κY.
//!
//! X̃ is uncorrelated with the order flow, so its unnormalized conditional
//! density solves a Zakai equation with 1-periodic coefficients:
//!
//! ```text
//! du = [½A² ∂²u − C ∂(μ(x + κY) u)] dt + (β/σ̄²) μ(x + κY) u dY
//! ```
//!
//! Each observation step applies the transport-diffusion operator G₁ (the
//! Fokker–Planck part: transport along the drift flow, then the
//! wrapped-Gaussian kernel) followed by the pointwise observation update G₂,
//! and renormalizes.

use std::f64::consts::PI;
use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::model::{frac, ModelParams};
use crate::simulate::MarketPath;

static KERNEL_BUILDS: AtomicUsize = AtomicUsize::new(0);

/// Number of wrapped-Gaussian kernel tables built by this process so far.
pub fn kernel_builds() -> usize {
    KERNEL_BUILDS.load(Ordering::Relaxed)
}

/// Minimum variance A²Δt accepted by [`WrappedKernel::new`].
pub const MIN_KERNEL_VARIANCE: f64 = 1e-12;
const KERNEL_TAIL: f64 = 1e-12;
/// Kernels with a band at least this wide are applied through the FFT.
const FFT_MIN_BAND: usize = 25;
/// Normalized density values below this are set to zero.
const DENSITY_FLOOR: f64 = 1e-200;

/// Periodic grid of `n_cells` equal cells on [0, 1); values live at cell
/// centers x_j = (j + ½)Δx.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FilterGrid {
    n_cells: usize,
}

impl Default for FilterGrid {
    fn default() -> Self {
        Self { n_cells: 100 }
    }
}

impl FilterGrid {
    pub fn new(n_cells: usize) -> Result<Self> {
        if n_cells < 8 {
            return Err(Error::InvalidConfig(format!("filter grid needs at least 8 cells, got {n_cells}")));
        }
        Ok(Self { n_cells })
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn dx(&self) -> f64 {
        1.0 / self.n_cells as f64
    }

    pub fn center(&self, j: usize) -> f64 {
        (j as f64 + 0.5) * self.dx()
    }

    pub fn centers(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_cells).map(|j| self.center(j))
    }
}

/// Coefficients of the X̃ dynamics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitCoefficients {
    /// A² = σ²(α²σ̄² − σ²)/(α²σ̄²)
    pub a2: f64,
    /// C = β(α²σ̄² − σ²)/(ασ̄²)
    pub c: f64,
    /// κ = σ²/(ασ̄²)
    pub kappa: f64,
}

impl SplitCoefficients {
    pub fn new(p: &ModelParams) -> Self {
        let excess = p.alpha2() * p.sigma_bar2 - p.sigma2;
        Self {
            a2: p.sigma2 * excess / (p.alpha2() * p.sigma_bar2),
            c: p.beta * excess / (p.alpha * p.sigma_bar2),
            kappa: p.kappa(),
        }
    }
}

/// Density of the wrapped normal law N(0, var) mod 1 at `d`, summing
/// `|n| <= terms` images.
pub fn wrapped_gaussian(d: f64, var: f64, terms: i64) -> f64 {
    let norm = 1.0 / (2.0 * PI * var).sqrt();
    (-terms..=terms)
        .map(|n| {
            let z = d + n as f64;
            (-z * z / (2.0 * var)).exp()
        })
        .sum::<f64>()
        * norm
}

/// Image count such that omitted terms are below 1e-12.
fn image_terms(var: f64) -> i64 {
    let peak = 1.0 / (2.0 * PI * var).sqrt();
    let log_ratio = (peak / KERNEL_TAIL).ln().max(0.0);
    let r = (2.0 * var * log_ratio).sqrt();
    r.ceil() as i64 + 1
}

/// Wrapped-Gaussian transition kernel of A·W on the unit circle over one
/// step, tabulated at the grid distances mΔx, m = 0..n.
#[derive(Debug, Clone)]
pub struct WrappedKernel {
    /// K̃(mΔx), normalized so that Σ_m K̃(mΔx)Δx = 1; stored twice over for
    /// contiguous circular access.
    doubled: Vec<f64>,
    /// K̃ at offsets −h..=h, where h is the largest offset with a value above
    /// the tail cutoff.
    band: Vec<f64>,
    spectral: Option<Spectral>,
    n: usize,
    variance: f64,
    terms: i64,
    raw_mass: f64,
}

impl WrappedKernel {
    pub fn new(a2: f64, dt: f64, grid: FilterGrid) -> Result<Self> {
        let variance = a2 * dt;
        if !(variance >= MIN_KERNEL_VARIANCE) || !variance.is_finite() {
            return Err(Error::InvalidParams(format!(
                "kernel variance A^2 dt = {variance:e} below {MIN_KERNEL_VARIANCE:e}"
            )));
        }
        KERNEL_BUILDS.fetch_add(1, Ordering::Relaxed);
        let n = grid.n_cells();
        let dx = grid.dx();
        let terms = image_terms(variance);
        let mut table: Vec<f64> = (0..n)
            .map(|m| wrapped_gaussian(m as f64 * dx, variance, terms))
            .collect();
        let raw_mass = table.iter().sum::<f64>() * dx;
        for v in &mut table {
            if *v < KERNEL_TAIL {
                *v = 0.0;
            }
        }
        let kept = table.iter().sum::<f64>() * dx;
        for v in &mut table {
            *v /= kept;
        }
        let half = (0..=n / 2).rev().find(|&m| table[m] > 0.0).unwrap_or(0);
        let band = (0..=2 * half).map(|i| table[i.abs_diff(half)]).collect();
        let spectral = (2 * half + 1 >= FFT_MIN_BAND).then(|| Spectral::new(&table));
        let mut doubled = table.clone();
        doubled.extend_from_slice(&table);
        Ok(Self {
            doubled,
            band,
            spectral,
            n,
            variance,
            terms,
            raw_mass,
        })
    }

    /// Table value at grid offset `m` (mod n).
    pub fn at(&self, m: usize) -> f64 {
        self.doubled[m % self.n]
    }

    pub fn table(&self) -> &[f64] {
        &self.doubled[..self.n]
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }

    pub fn image_terms(&self) -> i64 {
        self.terms
    }

    /// Σ_m K̃(mΔx)Δx before normalization.
    pub fn raw_mass(&self) -> f64 {
        self.raw_mass
    }

    /// w_j = Σ_k K̃(x_j − x_k) u_k Δx.
    fn convolve_into(&self, u: &[f64], out: &mut [f64], buf: &mut Vec<Complex<f64>>) {
        let n = self.n;
        let dx = 1.0 / n as f64;
        if let Some(sp) = &self.spectral {
            sp.convolve_into(u, out, buf);
            return;
        }
        let width = self.band.len();
        if width >= n {
            // K̃ is even, so K̃((j − k) mod n) = K̃((k − j) mod n) = doubled[n − j + k]
            for (j, o) in out.iter_mut().enumerate() {
                *o = dot(u, &self.doubled[n - j..2 * n - j]) * dx;
            }
            return;
        }
        let half = width / 2;
        for (j, o) in out.iter_mut().enumerate() {
            *o = if j >= half && j + half < n {
                dot(&u[j - half..=j + half], &self.band)
            } else {
                self.band
                    .iter()
                    .enumerate()
                    .map(|(i, k)| k * u[(j + n + i - half) % n])
                    .sum()
            } * dx;
        }
    }
}

/// Circular convolution with a fixed table as a product of discrete
/// Fourier transforms.
#[derive(Clone)]
struct Spectral {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    /// DFT of the table, scaled by Δx/n.
    multiplier: Vec<Complex<f64>>,
    scratch_len: usize,
}

impl fmt::Debug for Spectral {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Spectral").field("len", &self.multiplier.len()).finish()
    }
}

impl Spectral {
    fn new(table: &[f64]) -> Self {
        let n = table.len();
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(n);
        let inverse = planner.plan_fft_inverse(n);
        let scale = 1.0 / (n * n) as f64;
        let mut multiplier: Vec<Complex<f64>> = table.iter().map(|&v| Complex::new(v * scale, 0.0)).collect();
        forward.process(&mut multiplier);
        let scratch_len = forward
            .get_inplace_scratch_len()
            .max(inverse.get_inplace_scratch_len());
        Self {
            forward,
            inverse,
            multiplier,
            scratch_len,
        }
    }

    fn convolve_into(&self, u: &[f64], out: &mut [f64], buf: &mut Vec<Complex<f64>>) {
        let n = u.len();
        buf.clear();
        buf.resize(n + self.scratch_len, Complex::new(0.0, 0.0));
        let (data, scratch) = buf.split_at_mut(n);
        for (d, &v) in data.iter_mut().zip(u) {
            *d = Complex::new(v, 0.0);
        }
        self.forward.process_with_scratch(data, scratch);
        for (d, m) in data.iter_mut().zip(&self.multiplier) {
            *d *= m;
        }
        self.inverse.process_with_scratch(data, scratch);
        for (o, d) in out.iter_mut().zip(data.iter()) {
            *o = d.re.max(0.0);
        }
    }
}

pub fn wrapped_gaussian_kernel(a2: f64, dt: f64, grid: FilterGrid) -> Result<WrappedKernel> {
    WrappedKernel::new(a2, dt, grid)
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut s = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

/// Discretized conditional density of X̃_t mod 1 at the cell centers.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    pub u: Vec<f64>,
    pub t: f64,
    /// Order-flow level Y_t.
    pub y: f64,
}

impl FilterState {
    pub fn uniform(grid: FilterGrid) -> Self {
        Self {
            u: vec![1.0; grid.n_cells()],
            t: 0.0,
            y: 0.0,
        }
    }

    /// Prior from arbitrary non-negative cell values, rescaled to unit mass.
    pub fn from_density(mut u: Vec<f64>) -> Result<Self> {
        if u.len() < 8 {
            return Err(Error::InvalidConfig("prior needs at least 8 cells".into()));
        }
        if u.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidInput("prior density must be finite and non-negative".into()));
        }
        let mass = u.iter().sum::<f64>() / u.len() as f64;
        if !(mass > 0.0) {
            return Err(Error::InvalidInput("prior density has zero mass".into()));
        }
        for v in &mut u {
            *v /= mass;
        }
        Ok(Self { u, t: 0.0, y: 0.0 })
    }

    pub fn grid(&self) -> FilterGrid {
        FilterGrid { n_cells: self.u.len() }
    }

    /// Σ_j u_j Δx
    pub fn mass(&self) -> f64 {
        self.u.iter().sum::<f64>() / self.u.len() as f64
    }

    /// Conditional micro-drift Σ_j μ(κY + x_j) u_j Δx.
    pub fn conditional_mu(&self, kappa: f64) -> f64 {
        let n = self.u.len();
        let dx = 1.0 / n as f64;
        let (s0, cut) = sawtooth_split(n, kappa * self.y);
        let mut s = 0.0;
        let mut tail = 0.0;
        for (j, &u) in self.u.iter().enumerate() {
            s += (s0 + j as f64 * dx - 0.5) * u;
            if j >= cut {
                tail += u;
            }
        }
        (s - tail) * dx
    }
}

/// (frac(x₀ + shift), first index j at which x_j + shift wraps past an
/// integer), so that frac(x_j + shift) = s₀ + jΔx − [j ≥ cut].
fn sawtooth_split(n: usize, shift: f64) -> (f64, usize) {
    let nf = n as f64;
    let s0 = frac(0.5 / nf + shift);
    let cut = ((1.0 - s0) * nf).ceil().max(0.0) as usize;
    (s0, cut.min(n))
}

/// μ(x_j + shift) at every cell center.
fn sawtooth_into(shift: f64, out: &mut [f64]) {
    let n = out.len();
    let dx = 1.0 / n as f64;
    let (s0, cut) = sawtooth_split(n, shift);
    for (j, m) in out.iter_mut().enumerate() {
        let wrap = if j < cut { 0.5 } else { 1.5 };
        *m = s0 + j as f64 * dx - wrap;
    }
}

fn renormalize(u: &mut [f64]) -> f64 {
    let mass = u.iter().sum::<f64>() / u.len() as f64;
    if mass > 0.0 && mass.is_finite() {
        let inv = 1.0 / mass;
        for v in u.iter_mut() {
            *v *= inv;
            if *v < DENSITY_FLOOR {
                *v = 0.0;
            }
        }
    }
    mass
}

/// Discretization of the transport-diffusion step G₁.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Transport {
    /// Cell masses are carried along the exact flow of the drift
    /// x' = C·(x − η) on the circle, with mass reaching the attracting point
    /// η + ½ deposited there, then convolved with K̃.
    #[default]
    Conservative,
    /// Convolution with K̃ evaluated at the backward characteristic
    /// b(x) = η + e^{−CΔt}(x − η).
    Characteristic,
}

/// Signed circle offset of `x` from `eta`, in [−½, ½).
#[inline]
fn circle_offset(x: f64, eta: f64) -> f64 {
    frac(x - eta + 0.5) - 0.5
}

/// Adds `mass` spread uniformly over the absolute interval [p, q] (q > p,
/// q − p < 1, possibly wrapping) to the cells of `out`.
fn deposit_interval(out: &mut [f64], p: f64, q: f64, mass: f64) {
    let n = out.len() as i64;
    let nf = n as f64;
    let (lo, hi) = (p * nf, q * nf);
    let width = hi - lo;
    if !(width > 0.0) {
        deposit_point(out, 0.5 * (p + q), mass);
        return;
    }
    let first = lo.floor() as i64;
    let last = (hi.ceil() as i64 - 1).max(first);
    for c in first..=last {
        let overlap = hi.min((c + 1) as f64) - lo.max(c as f64);
        if overlap > 0.0 {
            out[c.rem_euclid(n) as usize] += mass * overlap / width;
        }
    }
}

/// Adds a point mass at `x`, split linearly between the two nearest centers.
fn deposit_point(out: &mut [f64], x: f64, mass: f64) {
    let n = out.len();
    let pos = frac(x) * n as f64 - 0.5;
    let base = pos.floor();
    let w = pos - base;
    let i0 = (base as i64).rem_euclid(n as i64) as usize;
    let i1 = if i0 + 1 == n { 0 } else { i0 + 1 };
    out[i0] += (1.0 - w) * mass;
    out[i1] += w * mass;
}

/// Pushes cell masses forward along d ↦ e^{CΔt}d (d the circle offset from
/// η); whatever crosses |d| = ½ collapses onto the attracting point.
fn advect_into(u: &[f64], eta: f64, stretch: f64, out: &mut [f64]) {
    let n = u.len();
    let dx = 1.0 / n as f64;
    out.iter_mut().for_each(|v| *v = 0.0);
    let mut attractor = 0.0;
    let mut push = |a: f64, b: f64, mass: f64, out: &mut [f64]| {
        let (sa, sb) = (stretch * a, stretch * b);
        let (ia, ib) = (sa.max(-0.5), sb.min(0.5));
        let inside = if ib > ia { (ib - ia) / (sb - sa) } else { 0.0 };
        if inside > 0.0 {
            deposit_interval(out, eta + ia, eta + ib, mass * inside);
        }
        attractor += mass * (1.0 - inside);
    };
    let (s0, cut) = sawtooth_split(n, 0.5 - eta);
    for (k, &m) in u.iter().enumerate() {
        if m == 0.0 {
            continue;
        }
        let dc = s0 + k as f64 * dx - if k < cut { 0.5 } else { 1.5 };
        let (lo, hi) = (dc - 0.5 * dx, dc + 0.5 * dx);
        if lo < -0.5 {
            let f = (-0.5 - lo) / dx;
            push(lo + 1.0, 0.5, m * f, out);
            push(-0.5, hi, m * (1.0 - f), out);
        } else if hi > 0.5 {
            let f = (hi - 0.5) / dx;
            push(lo, 0.5, m * (1.0 - f), out);
            push(-0.5, hi - 1.0, m * f, out);
        } else {
            push(lo, hi, m, out);
        }
    }
    deposit_point(out, eta + 0.5, attractor);
}

/// G₁ in place, using the left-endpoint order-flow level `y`; output
/// renormalized to unit mass.
#[allow(clippy::too_many_arguments)]
fn transport_diffusion_into(
    u: &[f64],
    y: f64,
    coeffs: &SplitCoefficients,
    kernel: &WrappedKernel,
    dt: f64,
    transport: Transport,
    conv: &mut [f64],
    buf: &mut Vec<Complex<f64>>,
    out: &mut [f64],
) {
    let n = u.len();
    let nf = n as f64;
    if coeffs.c == 0.0 {
        kernel.convolve_into(u, out, buf);
        renormalize(out);
        return;
    }
    let eta = frac(0.5 - coeffs.kappa * y);
    match transport {
        Transport::Conservative => {
            advect_into(u, eta, (coeffs.c * dt).exp(), conv);
            kernel.convolve_into(conv, out, buf);
        }
        Transport::Characteristic => {
            kernel.convolve_into(u, conv, buf);
            let contraction = (-coeffs.c * dt).exp();
            for (j, o) in out.iter_mut().enumerate() {
                let x = (j as f64 + 0.5) / nf;
                let b = frac(eta + contraction * circle_offset(x, eta));
                let pos = b * nf - 0.5;
                let base = pos.floor();
                let w = pos - base;
                let i0 = (base as i64).rem_euclid(n as i64) as usize;
                let i1 = if i0 + 1 == n { 0 } else { i0 + 1 };
                *o = (1.0 - w) * conv[i0] + w * conv[i1];
            }
        }
    }
    renormalize(out);
}

/// G₁ applied to a state; returns the renormalized transported density.
pub fn apply_transport_diffusion(
    state: &FilterState,
    coeffs: &SplitCoefficients,
    kernel: &WrappedKernel,
    dt: f64,
    transport: Transport,
) -> FilterState {
    let n = state.u.len();
    assert_eq!(n, kernel.n, "kernel and state grids differ");
    let mut conv = vec![0.0; n];
    let mut out = vec![0.0; n];
    let mut buf = Vec::new();
    transport_diffusion_into(&state.u, state.y, coeffs, kernel, dt, transport, &mut conv, &mut buf, &mut out);
    FilterState {
        u: out,
        t: state.t,
        y: state.y,
    }
}

/// Observation weights as log-values: −(β²/2σ̄²)μ²Δt + (β/σ̄²)μΔY with
/// μ = μ(x_j + κY) at the left endpoint Y. Multiplies `u` in place,
/// renormalizes, and returns ln Σ_j w_j u_j Δx.
fn observation_update_in_place(u: &mut [f64], expo: &mut [f64], y: f64, p: &ModelParams, dt: f64, dy: f64) -> Option<f64> {
    if p.beta == 0.0 {
        return Some(0.0);
    }
    let quad = -p.beta * p.beta / (2.0 * p.sigma_bar2) * dt;
    let lin = p.beta / p.sigma_bar2 * dy;
    sawtooth_into(p.kappa() * y, expo);
    let mut max = f64::NEG_INFINITY;
    for e in expo.iter_mut() {
        let m = *e;
        *e = quad * m * m + lin * m;
        max = max.max(*e);
    }
    if !max.is_finite() {
        return None;
    }
    for (v, e) in u.iter_mut().zip(expo.iter()) {
        *v *= (e - max).exp();
    }
    let mass = renormalize(u);
    (mass > 0.0 && mass.is_finite()).then(|| max + mass.ln())
}

/// G₂ applied to a state. Returns the renormalized density and the log of
/// the normalization constant.
pub fn apply_observation_update(state: &FilterState, params: &ModelParams, dt: f64, dy: f64) -> Result<(FilterState, f64)> {
    let mut u = state.u.clone();
    let mut expo = vec![0.0; u.len()];
    let log_norm = observation_update_in_place(&mut u, &mut expo, state.y, params, dt, dy).ok_or_else(|| {
        Error::FilterBreakdown {
            step: 0,
            t: state.t,
            reason: "density vanished or overflowed in observation update".into(),
            density: state.u.clone(),
        }
    })?;
    Ok((
        FilterState {
            u,
            t: state.t,
            y: state.y,
        },
        log_norm,
    ))
}

/// Composition order within one observation step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Splitting {
    /// G₂ ∘ G₁
    #[default]
    Lie,
    /// G₁(Δt/2) then G₂ then G₁(Δt/2), the second half at the updated Y.
    Strang,
}

#[derive(Debug, Clone)]
pub struct FilterConfig {
    pub grid: FilterGrid,
    pub dt: f64,
    pub splitting: Splitting,
    pub transport: Transport,
    /// Prior density at t = 0; uniform when absent.
    pub prior: Option<Vec<f64>>,
    /// Record the density every k steps.
    pub snapshot_every: Option<usize>,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            grid: FilterGrid::default(),
            dt: 1.0,
            splitting: Splitting::Lie,
            transport: Transport::Conservative,
            prior: None,
            snapshot_every: None,
        }
    }
}

/// Filter for one parameter candidate. Holds the kernel table, which only
/// depends on (A², Δt, grid) and is reused across all steps.
#[derive(Debug, Clone)]
pub struct ZakaiFilter {
    params: ModelParams,
    coeffs: SplitCoefficients,
    grid: FilterGrid,
    dt: f64,
    splitting: Splitting,
    transport: Transport,
    kernel: WrappedKernel,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutput {
    /// μ^θ at the end of the step.
    pub conditional_mu: f64,
    /// Log of the observation-update normalizer.
    pub log_increment: f64,
}

/// Scratch buffers for in-place stepping.
#[derive(Debug, Clone)]
pub struct Workspace {
    conv: Vec<f64>,
    tmp: Vec<f64>,
    spectrum: Vec<Complex<f64>>,
}

impl Workspace {
    pub fn new(grid: FilterGrid) -> Self {
        Self {
            conv: vec![0.0; grid.n_cells()],
            tmp: vec![0.0; grid.n_cells()],
            spectrum: Vec::new(),
        }
    }
}

impl ZakaiFilter {
    pub fn new(params: ModelParams, grid: FilterGrid, dt: f64, splitting: Splitting) -> Result<Self> {
        params.validate()?;
        if !(dt > 0.0) {
            return Err(Error::InvalidConfig(format!("filter step must be positive, got {dt}")));
        }
        let coeffs = SplitCoefficients::new(&params);
        let kernel_dt = match splitting {
            Splitting::Lie => dt,
            Splitting::Strang => 0.5 * dt,
        };
        let kernel = WrappedKernel::new(coeffs.a2, kernel_dt, grid)?;
        Ok(Self {
            params,
            coeffs,
            grid,
            dt,
            splitting,
            transport: Transport::default(),
            kernel,
        })
    }

    /// Filter with the grid, step, splitting and transport of `cfg`.
    pub fn from_config(params: ModelParams, cfg: &FilterConfig) -> Result<Self> {
        Ok(Self::new(params, cfg.grid, cfg.dt, cfg.splitting)?.with_transport(cfg.transport))
    }

    pub fn with_transport(mut self, transport: Transport) -> Self {
        self.transport = transport;
        self
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn coefficients(&self) -> &SplitCoefficients {
        &self.coeffs
    }

    pub fn kernel(&self) -> &WrappedKernel {
        &self.kernel
    }

    pub fn grid(&self) -> FilterGrid {
        self.grid
    }

    /// Advances `state` by one observation step with order-flow increment `dy`.
    pub fn step(&self, state: &mut FilterState, dy: f64, ws: &mut Workspace) -> Result<StepOutput> {
        let (step_dt, half) = match self.splitting {
            Splitting::Lie => (self.dt, self.dt),
            Splitting::Strang => (self.dt, 0.5 * self.dt),
        };
        transport_diffusion_into(
            &state.u,
            state.y,
            &self.coeffs,
            &self.kernel,
            half,
            self.transport,
            &mut ws.conv,
            &mut ws.spectrum,
            &mut ws.tmp,
        );
        std::mem::swap(&mut state.u, &mut ws.tmp);
        let log_increment = observation_update_in_place(&mut state.u, &mut ws.conv, state.y, &self.params, step_dt, dy)
            .ok_or_else(|| Error::FilterBreakdown {
                step: 0,
                t: state.t,
                reason: "density vanished or overflowed in observation update".into(),
                density: state.u.clone(),
            })?;
        state.y += dy;
        if self.splitting == Splitting::Strang {
            transport_diffusion_into(
                &state.u,
                state.y,
                &self.coeffs,
                &self.kernel,
                half,
                self.transport,
                &mut ws.conv,
                &mut ws.spectrum,
                &mut ws.tmp,
            );
            std::mem::swap(&mut state.u, &mut ws.tmp);
        }
        state.t += step_dt;
        if !state.u.iter().all(|v| v.is_finite()) {
            return Err(Error::FilterBreakdown {
                step: 0,
                t: state.t,
                reason: "non-finite density".into(),
                density: state.u.clone(),
            });
        }
        Ok(StepOutput {
            conditional_mu: state.conditional_mu(self.coeffs.kappa),
            log_increment,
        })
    }
}

/// One G₂∘G₁ step on an owned state.
pub fn filter_step(filter: &ZakaiFilter, state: &FilterState, dy: f64) -> Result<(FilterState, f64, f64)> {
    let mut next = state.clone();
    let mut ws = Workspace::new(filter.grid());
    let out = filter.step(&mut next, dy, &mut ws)?;
    Ok((next, out.conditional_mu, out.log_increment))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutput {
    pub times: Vec<f64>,
    /// μ^θ_{t_i} for every observation i (length N).
    pub mu: Vec<f64>,
    /// ln of the G₂ normalizer of each step (length N − 1); their sum is the
    /// unnormalized-filter log-likelihood.
    pub log_normalizers: Vec<f64>,
    /// (step index, density) pairs when snapshots were requested.
    pub snapshots: Vec<(usize, Vec<f64>)>,
}

impl FilterOutput {
    pub fn zakai_log_likelihood(&self) -> f64 {
        self.log_normalizers.iter().sum()
    }
}

/// Runs the filter along an observed path.
pub fn run_filter(path: &MarketPath, params: &ModelParams, cfg: &FilterConfig) -> Result<FilterOutput> {
    let filter = ZakaiFilter::from_config(*params, cfg)?;
    run_filter_with(&filter, path, cfg)
}

/// Runs a prepared filter along an observed path.
pub fn run_filter_with(filter: &ZakaiFilter, path: &MarketPath, cfg: &FilterConfig) -> Result<FilterOutput> {
    if path.is_empty() {
        return Err(Error::InvalidInput("empty path".into()));
    }
    if (path.dt_obs - filter.dt).abs() > 1e-9 * filter.dt {
        return Err(Error::InvalidConfig(format!(
            "observation spacing {} differs from filter step {}",
            path.dt_obs, filter.dt
        )));
    }
    let mut state = match &cfg.prior {
        Some(p) => {
            if p.len() != filter.grid.n_cells() {
                return Err(Error::InvalidConfig("prior length differs from grid".into()));
            }
            FilterState::from_density(p.clone())?
        }
        None => FilterState::uniform(filter.grid),
    };
    state.t = path.times[0];
    state.y = path.order_flow[0];
    let n = path.len();
    let mut mu = Vec::with_capacity(n);
    let mut log_normalizers = Vec::with_capacity(n.saturating_sub(1));
    let mut snapshots = Vec::new();
    let kappa = filter.coeffs.kappa;
    mu.push(state.conditional_mu(kappa));
    if cfg.snapshot_every.is_some() {
        snapshots.push((0, state.u.clone()));
    }
    let mut ws = Workspace::new(filter.grid);
    for i in 1..n {
        let dy = path.order_flow[i] - path.order_flow[i - 1];
        let out = filter.step(&mut state, dy, &mut ws).map_err(|e| match e {
            Error::FilterBreakdown { reason, density, .. } => Error::FilterBreakdown {
                step: i,
                t: path.times[i],
                reason,
                density,
            },
            other => other,
        })?;
        // keep the recorded clock rather than accumulated dt
        state.t = path.times[i];
        mu.push(out.conditional_mu);
        log_normalizers.push(out.log_increment);
        if let Some(k) = cfg.snapshot_every {
            if k > 0 && i % k == 0 {
                snapshots.push((i, state.u.clone()));
            }
        }
    }
    Ok(FilterOutput {
        times: path.times.clone(),
        mu,
        log_normalizers,
        snapshots,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn params() -> ModelParams {
        ModelParams::new(1.0, 0.4, 0.2, 0.5, 0.1).unwrap()
    }

    fn bumpy(n: usize) -> Vec<f64> {
        (0..n)
            .map(|j| {
                let x = (j as f64 + 0.5) / n as f64;
                1.0 + 0.8 * (2.0 * PI * x).sin() + 0.15 * (6.0 * PI * x).cos()
            })
            .collect()
    }

    #[test]
    fn grid_basics() {
        let g = FilterGrid::default();
        assert_eq!(g.n_cells(), 100);
        assert_abs_diff_eq!(g.dx() * 100.0, 1.0);
        assert_abs_diff_eq!(g.center(0), 0.005);
        assert!(FilterGrid::new(7).is_err());
    }

    #[test]
    fn coefficients_from_params() {
        let p = ModelParams::new(2.0, 0.5, 1.0, 1.0, 0.1).unwrap();
        let c = SplitCoefficients::new(&p);
        assert_abs_diff_eq!(c.a2, 0.75, epsilon = 1e-15);
        assert_abs_diff_eq!(c.c, 0.5 * 3.0 / 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(c.kappa, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn kernel_rows_normalized_and_even() {
        let g = FilterGrid::default();
        for var in [1e-4, 0.01, 0.3, 2.0] {
            let k = WrappedKernel::new(var, 1.0, g).unwrap();
            assert_abs_diff_eq!(k.table().iter().sum::<f64>() * g.dx(), 1.0, epsilon = 1e-12);
            for m in 1..50 {
                assert_abs_diff_eq!(k.at(m), k.at(100 - m), epsilon = 1e-12 * k.at(0));
            }
        }
        let k = WrappedKernel::new(0.3, 1.0, g).unwrap();
        assert_abs_diff_eq!(k.raw_mass(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn kernel_rejects_degenerate_variance() {
        assert!(WrappedKernel::new(1e-13, 1.0, FilterGrid::default()).is_err());
        assert!(WrappedKernel::new(0.0, 1.0, FilterGrid::default()).is_err());
    }

    #[test]
    fn uniform_is_fixed_point_without_drift() {
        let p = ModelParams::new(1.0, 0.0, 0.2, 0.5, 0.1).unwrap();
        let c = SplitCoefficients::new(&p);
        let g = FilterGrid::default();
        let k = WrappedKernel::new(c.a2, 1.0, g).unwrap();
        let out = apply_transport_diffusion(&FilterState::uniform(g), &c, &k, 1.0, Transport::Conservative);
        for v in out.u {
            assert_abs_diff_eq!(v, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_drift_is_circular_convolution() {
        let g = FilterGrid::new(64).unwrap();
        let c = SplitCoefficients {
            a2: 0.01,
            c: 0.0,
            kappa: 0.3,
        };
        let k = WrappedKernel::new(c.a2, 1.0, g).unwrap();
        let mut state = FilterState::from_density(bumpy(64)).unwrap();
        state.y = 1.7;
        let out = apply_transport_diffusion(&state, &c, &k, 1.0, Transport::Conservative);
        let n = 64;
        for j in 0..n {
            let direct: f64 = (0..n)
                .map(|i| {
                    let d = (j as f64 - i as f64).abs() / n as f64;
                    wrapped_gaussian(d, 0.01, 10) * state.u[i] / n as f64
                })
                .sum();
            assert_abs_diff_eq!(out.u[j], direct, epsilon = 1e-9);
        }
    }

    #[test]
    fn observation_update_identity_without_drift() {
        let p = ModelParams::new(1.0, 0.0, 0.2, 0.5, 0.1).unwrap();
        let s = FilterState::from_density(bumpy(100)).unwrap();
        let (out, ln) = apply_observation_update(&s, &p, 1.0, 3.0).unwrap();
        assert_eq!(ln, 0.0);
        assert_eq!(out.u, s.u);
    }

    #[test]
    fn observation_update_weights() {
        let p = params();
        let g = FilterGrid::default();
        let mut s = FilterState::uniform(g);
        s.y = 0.37;
        let (out, ln) = apply_observation_update(&s, &p, 1.0, 0.0).unwrap();
        let w: Vec<f64> = g
            .centers()
            .map(|x| {
                let m = frac(x + p.kappa() * s.y) - 0.5;
                (-p.beta * p.beta * m * m / (2.0 * p.sigma_bar2)).exp()
            })
            .collect();
        let z = w.iter().sum::<f64>() * g.dx();
        assert_abs_diff_eq!(ln, z.ln(), epsilon = 1e-14);
        for (o, wj) in out.u.iter().zip(&w) {
            assert_abs_diff_eq!(*o, wj / z, epsilon = 1e-13);
        }
    }

    #[test]
    fn huge_increment_does_not_overflow() {
        let p = params();
        let s = FilterState::uniform(FilterGrid::default());
        let (out, ln) = apply_observation_update(&s, &p, 1.0, 1e5).unwrap();
        assert!(ln.is_finite());
        assert_abs_diff_eq!(out.mass(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn conditional_mu_cases() {
        let g = FilterGrid::default();
        let s = FilterState::uniform(g);
        assert_abs_diff_eq!(s.conditional_mu(0.5), 0.0, epsilon = 1e-12);
        let mut spike = vec![0.0; 100];
        spike[30] = 1.0;
        let mut s = FilterState::from_density(spike).unwrap();
        s.y = 0.4;
        let expect = frac(g.center(30) + 0.5 * 0.4) - 0.5;
        assert_abs_diff_eq!(s.conditional_mu(0.5), expect, epsilon = 1e-12);
    }

    #[test]
    fn step_keeps_positive_normalized_density() {
        let p = params();
        let f = ZakaiFilter::new(p, FilterGrid::default(), 1.0, Splitting::Lie).unwrap();
        let mut s = FilterState::from_density(bumpy(100)).unwrap();
        let mut ws = Workspace::new(f.grid());
        for (i, dy) in [0.3, -1.2, 0.8, 2.5, -0.1].into_iter().enumerate() {
            let out = f.step(&mut s, dy, &mut ws).unwrap();
            assert!(s.u.iter().all(|&v| v > 0.0));
            assert_abs_diff_eq!(s.mass(), 1.0, epsilon = 1e-12);
            assert!((-0.5..0.5).contains(&out.conditional_mu));
            assert_abs_diff_eq!(s.t, (i + 1) as f64);
        }
    }

    #[test]
    fn strang_step_runs() {
        let f = ZakaiFilter::new(params(), FilterGrid::default(), 1.0, Splitting::Strang).unwrap();
        let mut s = FilterState::uniform(f.grid());
        let mut ws = Workspace::new(f.grid());
        f.step(&mut s, 0.7, &mut ws).unwrap();
        assert_abs_diff_eq!(s.mass(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.y, 0.7);
    }

    #[test]
    fn translation_equivariance() {
        let p = params();
        let f = ZakaiFilter::new(p, FilterGrid::default(), 1.0, Splitting::Lie).unwrap();
        let kappa = p.kappa();
        let base = bumpy(100);
        let k = 13;
        let shifted: Vec<f64> = (0..100).map(|j| base[(j + 100 - k) % 100]).collect();
        let mut a = FilterState::from_density(base).unwrap();
        a.y = 0.9;
        let mut b = FilterState::from_density(shifted).unwrap();
        b.y = a.y - k as f64 * 0.01 / kappa;
        let mut ws = Workspace::new(f.grid());
        let oa = f.step(&mut a, 0.4, &mut ws).unwrap();
        let ob = f.step(&mut b, 0.4, &mut ws).unwrap();
        for j in 0..100 {
            assert_abs_diff_eq!(b.u[(j + k) % 100], a.u[j], epsilon = 1e-9);
        }
        assert_abs_diff_eq!(oa.conditional_mu, ob.conditional_mu, epsilon = 1e-9);
    }

    #[test]
    fn run_filter_requires_matching_spacing() {
        let mut path = MarketPath::empty(0.5);
        path.times = vec![0.0, 0.5];
        path.order_flow = vec![0.0, 1.0];
        path.bid = vec![1, 1];
        path.ask = vec![2, 2];
        assert!(run_filter(&path, &params(), &FilterConfig::default()).is_err());
        assert!(run_filter(&MarketPath::empty(1.0), &params(), &FilterConfig::default()).is_err());
    }
}
