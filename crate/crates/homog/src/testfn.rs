//! Smooth test functions: initial data, cutoff family, and manufactured
//! source terms whose limiting solution is known in closed form.
//!
//! Every profile is radial around its center and evaluated through
//! derivatives of phi(rho) with rho = |x - c|^2, which gives analytic
//! gradients, Hessians and third derivatives from one scalar routine.

use crate::lattice::{Field, Lattice, MAX_D};
use crate::operators::{apply_bar_continuum, fft_forward, fft_inverse_real, TorusField, TorusGrid};
use crate::{HomogError, Result};

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ProfileKind {
    /// mollifier bump exp(1 - 1/(1 - |x-c|^2/r^2)), zero outside radius r
    CompactBump { radius: f64 },
    /// (1 + |x-c|^2/s^2)^(-(d+beta)/2), algebraic tails of order d+beta
    PolynomialDecay { scale: f64, beta: f64 },
    /// exp(-|x-c|^2 / (2 s^2))
    Gaussian { scale: f64 },
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmoothProfile {
    pub d: usize,
    #[serde(flatten)]
    pub kind: ProfileKind,
    pub amplitude: f64,
    pub center: Vec<f64>,
}

impl SmoothProfile {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.d > MAX_D {
            return Err(HomogError::Config(format!("profile dimension {} out of range", self.d)));
        }
        if self.center.len() != self.d {
            return Err(HomogError::Config("profile center length does not match d".into()));
        }
        let scale_ok = match self.kind {
            ProfileKind::CompactBump { radius } => radius > 0.0,
            ProfileKind::PolynomialDecay { scale, beta } => scale > 0.0 && beta > 0.0,
            ProfileKind::Gaussian { scale } => scale > 0.0,
        };
        if !scale_ok {
            return Err(HomogError::Config("profile scale parameters must be positive".into()));
        }
        Ok(())
    }

    /// phi(rho) and its first three rho-derivatives, rho = |x - c|^2.
    fn phi(&self, rho: f64) -> [f64; 4] {
        let a = self.amplitude;
        match self.kind {
            ProfileKind::CompactBump { radius } => {
                let r2 = radius * radius;
                let u = rho / r2;
                if u >= 1.0 - 1e-12 {
                    return [0.0; 4];
                }
                let q = 1.0 / (1.0 - u);
                let v = a * (1.0 - q).exp();
                [
                    v,
                    -v * q * q / r2,
                    v * q.powi(3) * (q - 2.0) / (r2 * r2),
                    v * q.powi(4) * (-q * q + 6.0 * q - 6.0) / (r2 * r2 * r2),
                ]
            }
            ProfileKind::PolynomialDecay { scale, beta } => {
                let s2 = scale * scale;
                let p = 0.5 * (self.d as f64 + beta);
                let b = 1.0 + rho / s2;
                let v = a * b.powf(-p);
                [
                    v,
                    -a * p / s2 * b.powf(-p - 1.0),
                    a * p * (p + 1.0) / (s2 * s2) * b.powf(-p - 2.0),
                    -a * p * (p + 1.0) * (p + 2.0) / (s2 * s2 * s2) * b.powf(-p - 3.0),
                ]
            }
            ProfileKind::Gaussian { scale } => {
                let h = 1.0 / (2.0 * scale * scale);
                let v = a * (-rho * h).exp();
                [v, -h * v, h * h * v, -h * h * h * v]
            }
        }
    }

    fn rho(&self, x: &[f64]) -> f64 {
        (0..self.d).map(|i| (x[i] - self.center[i]).powi(2)).sum()
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.phi(self.rho(x))[0]
    }

    pub fn gradient(&self, x: &[f64]) -> [f64; MAX_D] {
        let p = self.phi(self.rho(x));
        let mut g = [0.0; MAX_D];
        for i in 0..self.d {
            g[i] = 2.0 * p[1] * (x[i] - self.center[i]);
        }
        g
    }

    pub fn hessian(&self, x: &[f64]) -> [[f64; MAX_D]; MAX_D] {
        let p = self.phi(self.rho(x));
        let mut h = [[0.0; MAX_D]; MAX_D];
        for i in 0..self.d {
            let yi = x[i] - self.center[i];
            for j in 0..self.d {
                let yj = x[j] - self.center[j];
                h[i][j] = 4.0 * p[2] * yi * yj;
            }
            h[i][i] += 2.0 * p[1];
        }
        h
    }

    pub fn third(&self, x: &[f64]) -> [[[f64; MAX_D]; MAX_D]; MAX_D] {
        let p = self.phi(self.rho(x));
        let mut y = [0.0; MAX_D];
        for i in 0..self.d {
            y[i] = x[i] - self.center[i];
        }
        let mut t = [[[0.0; MAX_D]; MAX_D]; MAX_D];
        for i in 0..self.d {
            for j in 0..self.d {
                for k in 0..self.d {
                    let mut v = 8.0 * p[3] * y[i] * y[j] * y[k];
                    if i == j {
                        v += 4.0 * p[2] * y[k];
                    }
                    if i == k {
                        v += 4.0 * p[2] * y[j];
                    }
                    if j == k {
                        v += 4.0 * p[2] * y[i];
                    }
                    t[i][j][k] = v;
                }
            }
        }
        t
    }

    /// Support radius for compactly supported kinds.
    pub fn support_radius(&self) -> Option<f64> {
        match self.kind {
            ProfileKind::CompactBump { radius } => Some(radius),
            _ => None,
        }
    }

    /// Weighted derivative envelope max_i |d^i f(x)| (1+|x-c|)^(d+beta) over
    /// i = 0..3, probed along the first axis at distance r from the center.
    fn weighted_envelope(&self, beta: f64, r: f64) -> f64 {
        let mut worst: f64 = 0.0;
        for sgn in [-1.0, 1.0] {
            let mut x = self.center.clone();
            x[0] += sgn * r;
            let weight = (1.0 + r).powf(self.d as f64 + beta);
            let g = self.gradient(&x);
            let h = self.hessian(&x);
            let t = self.third(&x);
            let gmax = (0..self.d).map(|i| g[i].abs()).fold(0.0, f64::max);
            let hmax = (0..self.d)
                .flat_map(|i| (0..self.d).map(move |j| (i, j)))
                .map(|(i, j)| h[i][j].abs())
                .fold(0.0, f64::max);
            let tmax = t[0][0][0].abs();
            let amp = self.value(&x).abs().max(gmax).max(hmax).max(tmax);
            worst = worst.max(amp * weight);
        }
        worst
    }

    /// Max over a log-spaced radial grid of |d^i f|(1+|x|)^(d+beta), i = 0..3.
    /// Finite, non-growing values certify the algebraic decay of the profile
    /// and its derivatives at the stated order.
    pub fn decay_certificate(&self, beta: f64) -> f64 {
        let mut worst: f64 = 0.0;
        let mut r = 1e-3;
        while r <= 1e4 {
            worst = worst.max(self.weighted_envelope(beta, r));
            r *= 1.5;
        }
        worst
    }

    /// Sample onto a lattice field using cell representatives.
    pub fn sample_field(&self, lat: Lattice) -> Field {
        Field::from_fn(lat, |x| self.value(x))
    }
}

/// Compactly supported initial datum; only the bump kind qualifies.
#[derive(Debug, Clone)]
pub struct InitialDatum {
    pub profile: SmoothProfile,
    pub support_radius: f64,
}

pub fn make_initial_g(profile: SmoothProfile) -> Result<InitialDatum> {
    profile.validate()?;
    match profile.support_radius() {
        Some(r) => Ok(InitialDatum { support_radius: r, profile }),
        None => Err(HomogError::Config(
            "initial datum must be compactly supported; use the compact-bump kind".into(),
        )),
    }
}

// ---------------------------------------------------------------------------
// cutoff family

/// C^2 radial cutoff: 1 for |x| <= R/2, 0 for |x| >= R, quintic bridge in
/// between with vanishing first and second derivatives at both ends.
#[derive(Debug, Clone, Copy)]
pub struct Cutoff {
    pub radius: f64,
}

fn bridge(s: f64) -> (f64, f64, f64) {
    // smooth step 10s^3 - 15s^4 + 6s^5 and two derivatives
    let v = s * s * s * (10.0 + s * (-15.0 + 6.0 * s));
    let d1 = 30.0 * s * s * (1.0 - s) * (1.0 - s);
    let d2 = 60.0 * s * (1.0 - s) * (1.0 - 2.0 * s);
    (v, d1, d2)
}

impl Cutoff {
    pub fn new(radius: f64) -> Result<Cutoff> {
        if radius < 1.0 {
            return Err(HomogError::Argument(format!("cutoff radius must be >= 1, got {radius}")));
        }
        Ok(Cutoff { radius })
    }

    fn radial(&self, r: f64) -> (f64, f64, f64) {
        // value and derivatives with respect to r = |x|
        let half = 0.5 * self.radius;
        if r <= half {
            (1.0, 0.0, 0.0)
        } else if r >= self.radius {
            (0.0, 0.0, 0.0)
        } else {
            let s = (r - half) / half;
            let (v, d1, d2) = bridge(s);
            (1.0 - v, -d1 / half, -d2 / (half * half))
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        self.radial(r).0
    }

    pub fn gradient(&self, x: &[f64]) -> [f64; MAX_D] {
        let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut g = [0.0; MAX_D];
        let (_, d1, _) = self.radial(r);
        if d1 != 0.0 {
            for (i, &xi) in x.iter().enumerate() {
                g[i] = d1 * xi / r;
            }
        }
        g
    }

    pub fn hessian(&self, x: &[f64]) -> [[f64; MAX_D]; MAX_D] {
        let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut h = [[0.0; MAX_D]; MAX_D];
        let (_, d1, d2) = self.radial(r);
        if d1 == 0.0 && d2 == 0.0 {
            return h;
        }
        for (i, &xi) in x.iter().enumerate() {
            for (j, &xj) in x.iter().enumerate() {
                h[i][j] = (d2 - d1 / r) * xi * xj / (r * r);
            }
            h[i][i] += d1 / r;
        }
        h
    }
}

/// Convenience point evaluator for the cutoff at radius R.
pub fn cutoff_psi(radius: f64, x: &[f64]) -> Result<f64> {
    Ok(Cutoff::new(radius)?.value(x))
}

// ---------------------------------------------------------------------------
// manufactured sources for the limiting equation (d = 1)

/// Polynomial time modulation a(t) = sum_j coeffs[j] t^j.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeModulation {
    pub coeffs: Vec<f64>,
}

impl TimeModulation {
    pub fn value(&self, t: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * t + c)
    }

    pub fn derivative(&self, t: f64) -> f64 {
        let mut acc = 0.0;
        for (j, &c) in self.coeffs.iter().enumerate().skip(1).rev() {
            acc = acc * t + j as f64 * c;
        }
        acc
    }
}

/// Cubic (Catmull-Rom) interpolation on a uniform grid of values, clamped at
/// the ends; `pos` is the fractional index.
fn cubic_uniform(vals: &[f64], pos: f64) -> f64 {
    let n = vals.len();
    if n == 1 {
        return vals[0];
    }
    let pos = pos.clamp(0.0, (n - 1) as f64);
    let i = (pos.floor() as usize).min(n - 2);
    let s = pos - i as f64;
    let at = |j: i64| vals[j.clamp(0, n as i64 - 1) as usize];
    let (p0, p1, p2, p3) = (at(i as i64 - 1), at(i as i64), at(i as i64 + 1), at(i as i64 + 2));
    let (a, b, c, d) = (
        -0.5 * p0 + 1.5 * p1 - 1.5 * p2 + 0.5 * p3,
        p0 - 2.5 * p1 + 2.0 * p2 - 0.5 * p3,
        -0.5 * p0 + 0.5 * p2,
        p1,
    );
    ((a * s + b) * s + c) * s + d
}

/// Periodic cubic interpolation over raw grid values (allocation-free twin
/// of TorusField::interp for hot loops).
pub(crate) fn torus_interp(grid: &TorusGrid, vals: &[f64], x: f64) -> f64 {
    let pos = (x + grid.l) / grid.spacing();
    let n = vals.len() as i64;
    let i = pos.floor() as i64;
    let s = pos - i as f64;
    let at = |j: i64| vals[j.rem_euclid(n) as usize];
    let (p0, p1, p2, p3) = (at(i - 1), at(i), at(i + 1), at(i + 2));
    let (a, b, c, d) = (
        -0.5 * p0 + 1.5 * p1 - 1.5 * p2 + 0.5 * p3,
        p0 - 2.5 * p1 + 2.0 * p2 - 0.5 * p3,
        -0.5 * p0 + 0.5 * p2,
        p1,
    );
    ((a * s + b) * s + c) * s + d
}

/// A manufactured pair (g, h) for the limiting equation together with the
/// exact solution it produces.
pub trait LimitSource: Sync {
    /// source h(t, x)
    fn source_at(&self, t: f64, x: f64) -> f64;
    /// exact limiting solution at (t, x)
    fn target_at(&self, t: f64, x: f64) -> f64;
    /// initial datum g(x) = target at t = 0
    fn initial_at(&self, x: f64) -> f64 {
        self.target_at(0.0, x)
    }
}

/// Separated source: target a(t) f0(x), so h = a' f0 - a Lbar f0.  The
/// nonlocal image Lbar f0 is cached once on a fine periodic grid.
pub struct SeparatedSource {
    pub profile: SmoothProfile,
    pub modulation: TimeModulation,
    pub beta: f64,
    pub decay_c0: f64,
    grid: TorusGrid,
    lbar_f0: Vec<f64>,
}

/// Builds a finite-decay source sampler on a fine torus of half-length `l`
/// with `n` points; errors if the profile's tails are heavier than the
/// requested decay order beta.
pub fn make_source_h(
    profile: SmoothProfile,
    modulation: TimeModulation,
    beta: f64,
    alpha: f64,
    kbar: f64,
    n: usize,
    l: f64,
) -> Result<SeparatedSource> {
    profile.validate()?;
    if profile.d != 1 {
        return Err(HomogError::Config("manufactured sources are one-dimensional".into()));
    }
    if !(beta > 0.0) {
        return Err(HomogError::Config(format!("decay order must be positive, got {beta}")));
    }
    let decay_c0 = profile.decay_certificate(beta);
    // heavier tails than requested show up as growth of the weighted
    // envelope along the radial probe grid
    let far = profile.weighted_envelope(beta, 1e4);
    let mid = profile.weighted_envelope(beta, 1e2);
    if !decay_c0.is_finite() || far > 8.0 * mid.max(1e-300) {
        return Err(HomogError::Config(format!(
            "profile violates the decay condition of order {beta} \
             (weighted envelope grows from {mid:.3e} at r=1e2 to {far:.3e} at r=1e4)"
        )));
    }
    let grid = TorusGrid::new(n, l)?;
    let f0 = TorusField::from_fn(grid, |x| profile.value(&[x]));
    let lbar_f0 = apply_bar_continuum(&f0, alpha, kbar)?.values;
    Ok(SeparatedSource { profile, modulation, beta, decay_c0, grid, lbar_f0 })
}

impl LimitSource for SeparatedSource {
    fn source_at(&self, t: f64, x: f64) -> f64 {
        self.modulation.derivative(t) * self.profile.value(&[x])
            - self.modulation.value(t) * torus_interp(&self.grid, &self.lbar_f0, x)
    }

    fn target_at(&self, t: f64, x: f64) -> f64 {
        self.modulation.value(t) * self.profile.value(&[x])
    }
}

/// Compactly supported source: the target is psi(x) (Pbar_t g)(x), the
/// cutoff of a freely evolved bump, and h = psi Lbar Pbar_t g -
/// Lbar(psi Pbar_t g).  Both spatial images are cached on >= 64 time nodes
/// and interpolated cubically in t.
pub struct CompactSource {
    pub cutoff: Cutoff,
    pub t_horizon: f64,
    grid: TorusGrid,
    n_nodes: usize,
    pbar_g: Vec<Vec<f64>>,
    h_grids: Vec<Vec<f64>>,
}

pub fn make_compact_source(
    g: &InitialDatum,
    cutoff_radius: f64,
    t_horizon: f64,
    alpha: f64,
    kbar: f64,
    n: usize,
    l: f64,
) -> Result<CompactSource> {
    if g.profile.d != 1 {
        return Err(HomogError::Config("manufactured sources are one-dimensional".into()));
    }
    let c0 = g.profile.center[0].abs();
    if c0 + g.support_radius > 0.5 * cutoff_radius {
        return Err(HomogError::Config(
            "initial bump must be supported where the cutoff equals one".into(),
        ));
    }
    if t_horizon <= 0.0 {
        return Err(HomogError::Argument("horizon must be positive".into()));
    }
    let cutoff = Cutoff::new(cutoff_radius)?;
    if cutoff_radius >= l {
        return Err(HomogError::Config("torus must strictly contain the cutoff support".into()));
    }
    let grid = TorusGrid::new(n, l)?;
    let c = crate::operators::c_d_alpha(1, alpha)?;
    let mult: Vec<f64> = (0..n).map(|j| -kbar * c * grid.freq(j).abs().powf(alpha)).collect();
    let gspec = fft_forward(&TorusField::from_fn(grid, |x| g.profile.value(&[x])).values);
    let psi: Vec<f64> = (0..n).map(|j| cutoff.value(&[grid.point(j)])).collect();

    let n_nodes = 65;
    let mut pbar_g = Vec::with_capacity(n_nodes);
    let mut h_grids = Vec::with_capacity(n_nodes);
    for node in 0..n_nodes {
        let t = t_horizon * node as f64 / (n_nodes - 1) as f64;
        // Pbar_t g and Lbar Pbar_t g from the single forward transform
        let mut spec_p = gspec.clone();
        let mut spec_lp = gspec.clone();
        for j in 0..n {
            let e = (mult[j] * t).exp();
            spec_p[j] *= e;
            spec_lp[j] *= e * mult[j];
        }
        let p = fft_inverse_real(spec_p);
        let lp = fft_inverse_real(spec_lp);
        // Lbar(psi * Pbar_t g)
        let cut: Vec<f64> = (0..n).map(|j| psi[j] * p[j]).collect();
        let mut spec_c = fft_forward(&cut);
        for j in 0..n {
            spec_c[j] *= mult[j];
        }
        let lcut = fft_inverse_real(spec_c);
        let h: Vec<f64> = (0..n).map(|j| psi[j] * lp[j] - lcut[j]).collect();
        pbar_g.push(p);
        h_grids.push(h);
    }
    Ok(CompactSource { cutoff, t_horizon, grid, n_nodes, pbar_g, h_grids })
}

impl CompactSource {
    fn node_pos(&self, t: f64) -> f64 {
        (t / self.t_horizon) * (self.n_nodes - 1) as f64
    }

    fn interp_tx(&self, grids: &[Vec<f64>], t: f64, x: f64) -> f64 {
        let pos = self.node_pos(t);
        let vals: Vec<f64> = {
            // cubic in t through the four bracketing nodes, cubic in x on each
            let n = grids.len() as i64;
            let i = pos.floor() as i64;
            (-1..=2)
                .map(|o| {
                    let j = (i + o).clamp(0, n - 1) as usize;
                    torus_interp(&self.grid, &grids[j], x)
                })
                .collect()
        };
        let s = pos - pos.floor();
        cubic_uniform(&vals, 1.0 + s)
    }
}

impl LimitSource for CompactSource {
    fn source_at(&self, t: f64, x: f64) -> f64 {
        self.interp_tx(&self.h_grids, t, x)
    }

    fn target_at(&self, t: f64, x: f64) -> f64 {
        self.cutoff.value(&[x]) * self.interp_tx(&self.pbar_g, t, x)
    }
}

/// Duhamel round trip: evolve initial_at under source_at with the spectral
/// integrator and report the sup-norm residual against target_at at t = T.
/// This is the correctness gate for every constructed source.
pub fn duhamel_residual(
    src: &dyn LimitSource,
    alpha: f64,
    kbar: f64,
    t_horizon: f64,
    n: usize,
    l: f64,
) -> Result<f64> {
    use crate::solver::{solve_limit, SolveParams, Scheme};
    let grid = TorusGrid::new(n, l)?;
    let g = TorusField::from_fn(grid, |x| src.initial_at(x));
    let h = |t: f64, x: f64| src.source_at(t, x);
    let params = SolveParams {
        t_horizon,
        cfl_fraction: 0.5,
        snapshots: 129,
        dt_override: None,
        scheme: Scheme::Euler,
    };
    let traj = solve_limit(&g, Some(&h), alpha, kbar, &params)?;
    let last = traj.last();
    let mut worst: f64 = 0.0;
    for j in 0..grid.n {
        worst = worst.max((last.values[j] - src.target_at(t_horizon, grid.point(j))).abs());
    }
    Ok(worst)
}
