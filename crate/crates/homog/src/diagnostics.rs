//! Measurable quantities: good-vertex fractions, Poincare-type constants,
//! deterministic and random operator gaps, the cutoff defect, sup-in-time
//! L2 errors, and log-log rate fitting.

use crate::environment::Environment;
use crate::lattice::{dyadic_blocks, MAX_D};
use crate::operators::{
    apply_bar_continuum, apply_hat, apply_scaled, bar_pointwise_1d, build_kernel, default_rho,
    BoundaryMode, OperatorHandle, TorusField, TorusGrid,
};
use crate::solver::Trajectory;
use crate::testfn::{Cutoff, SmoothProfile};
use crate::{HomogError, Result};

// ---------------------------------------------------------------------------
// rate fitting

/// Ordinary least squares in log-log coordinates.
#[derive(Debug, Clone, serde::Serialize)]
pub struct RateFit {
    /// retained (abscissa, value) pairs, both positive
    pub points: Vec<(f64, f64)>,
    pub slope: f64,
    pub intercept: f64,
    pub residual_rms: f64,
    /// points dropped because their value was not positive
    pub excluded: usize,
}

impl RateFit {
    /// Re-derives the slope from the stored points (consistency check).
    pub fn recompute_slope(&self) -> f64 {
        ols(&self.points).0
    }
}

fn ols(points: &[(f64, f64)]) -> (f64, f64) {
    let n = points.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for &(x, y) in points {
        let (lx, ly) = (x.ln(), y.ln());
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    (slope, (sy - slope * sx) / n)
}

pub fn fit_rate(points: &[(f64, f64)]) -> Result<RateFit> {
    let kept: Vec<(f64, f64)> = points.iter().copied().filter(|&(_, y)| y > 0.0).collect();
    let excluded = points.len() - kept.len();
    if excluded > 0 {
        eprintln!("warning: rate fit excluded {excluded} non-positive value(s)");
    }
    if kept.len() < 3 {
        return Err(HomogError::Argument(format!(
            "rate fit needs at least 3 positive points, got {}",
            kept.len()
        )));
    }
    for w in kept.windows(2) {
        if w[1].0 <= w[0].0 {
            return Err(HomogError::Argument("rate fit abscissae must be strictly increasing".into()));
        }
    }
    let (slope, intercept) = ols(&kept);
    let mut ss = 0.0;
    for &(x, y) in &kept {
        let r = y.ln() - (slope * x.ln() + intercept);
        ss += r * r;
    }
    let residual_rms = (ss / kept.len() as f64).sqrt();
    Ok(RateFit { points: kept, slope, intercept, residual_rms, excluded })
}

// ---------------------------------------------------------------------------
// good vertices and Poincare constants

/// Integer sites of the box y + (-r, r]^d.
fn box_sites(d: usize, y: &[i64], r: i64) -> Vec<Vec<i64>> {
    let mut out = vec![Vec::with_capacity(d)];
    for i in 0..d {
        let mut next = Vec::with_capacity(out.len() * (2 * r) as usize);
        for prefix in &out {
            for s in (1 - r)..=r {
                let mut v = prefix.clone();
                v.push(y[i] + s);
                next.push(v);
            }
        }
        out = next;
    }
    out
}

/// Fraction of vertices z in the box around y whose conductances to both
/// probe sites clear the threshold delta; x1 and x2 themselves never count.
pub fn good_vertex_fraction(
    env: &Environment,
    t: f64,
    x1: &[i64],
    x2: &[i64],
    y: &[i64],
    r: i64,
    delta: f64,
) -> Result<f64> {
    if x1 == x2 {
        return Err(HomogError::Argument("good-vertex probes must be distinct".into()));
    }
    if r < 1 {
        return Err(HomogError::Argument(format!("good-vertex radius must be >= 1, got {r}")));
    }
    let d = x1.len();
    let sites = box_sites(d, y, r);
    let total = sites.len() as f64;
    let mut good = 0usize;
    for z in &sites {
        if z[..] == *x1 || z[..] == *x2 {
            continue;
        }
        if env.eval_w(t, x1, z)? >= delta && env.eval_w(t, x2, z)? >= delta {
            good += 1;
        }
    }
    Ok(good as f64 / total)
}

/// All-pairs Dirichlet energy over an explicit integer site list.
fn pair_energy(
    env: &Environment,
    t: f64,
    alpha: f64,
    sites: &[Vec<i64>],
    f: &[f64],
) -> Result<f64> {
    let d = sites[0].len();
    let basis = env.basis_at(t)?;
    let mut total = 0.0;
    for i in 0..sites.len() {
        for j in (i + 1)..sites.len() {
            let df = f[i] - f[j];
            if df == 0.0 {
                continue;
            }
            let norm2: f64 =
                (0..d).map(|c| ((sites[i][c] - sites[j][c]) * (sites[i][c] - sites[j][c])) as f64).sum();
            let w: f64 =
                basis.iter().map(|&(key, c)| c * env.basis_sample(key, &sites[i], &sites[j])).sum();
            total += w * df * df * norm2.powf(-0.5 * (d as f64 + alpha));
        }
    }
    Ok(total)
}

/// Empirical Poincare constant: Var(f) / (r^(alpha-d) E(f, f)) on the box
/// around y.  Constant f gives 0; positive variance with zero energy is a
/// disconnection event reported as infinity.
pub fn poincare_ratio(
    env: &Environment,
    t: f64,
    alpha: f64,
    y: &[i64],
    r: i64,
    f: &dyn Fn(&[i64]) -> f64,
) -> Result<f64> {
    if r < 1 {
        return Err(HomogError::Argument(format!("box radius must be >= 1, got {r}")));
    }
    let d = y.len();
    let sites = box_sites(d, y, r);
    let vals: Vec<f64> = sites.iter().map(|z| f(z)).collect();
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    if var == 0.0 {
        return Ok(0.0);
    }
    let energy = pair_energy(env, t, alpha, &sites, &vals)?;
    if energy == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(var / ((r as f64).powf(alpha - d as f64) * energy))
}

/// The three quantities of the multi-scale Poincare comparison on the box
/// (-2^m, 2^m]^d with block level n, plus the empirical constant.
#[derive(Debug, Clone, serde::Serialize)]
pub struct MultiscaleGap {
    pub lhs: f64,
    pub block_term: f64,
    pub energy_term: f64,
    /// (|lhs| - |block term|) / energy term when the latter is positive
    pub c2: Option<f64>,
}

pub fn multiscale_poincare_gap(
    env: &Environment,
    t: f64,
    alpha: f64,
    d: usize,
    m: u32,
    n: u32,
    f: &dyn Fn(&[i64]) -> f64,
    g: &dyn Fn(&[i64]) -> f64,
) -> Result<MultiscaleGap> {
    if n > m {
        return Err(HomogError::Argument(format!("multiscale levels need n <= m, got n={n} m={m}")));
    }
    let half = 1i64 << m;
    let all = box_sites(d, &vec![0; d], half);
    let fv: Vec<f64> = all.iter().map(|z| f(z)).collect();
    let gv: Vec<f64> = all.iter().map(|z| g(z)).collect();
    let gbar = gv.iter().sum::<f64>() / gv.len() as f64;
    let lhs: f64 = fv.iter().zip(&gv).map(|(a, b)| a * (b - gbar)).sum();

    // block term at level n
    let mut block_term = 0.0;
    for block in dyadic_blocks(d, m, n)? {
        let sites = block.sites(d);
        let bg: Vec<f64> = sites.iter().map(|z| g(z)).collect();
        let bf: Vec<f64> = sites.iter().map(|z| f(z)).collect();
        let mean = bg.iter().sum::<f64>() / bg.len() as f64;
        block_term += bf.iter().zip(&bg).map(|(a, b)| a * (b - mean)).sum::<f64>();
    }

    // energy term: E(g,g)^(1/2) * sum_k 2^(k(d+alpha)/2) (sum of squared
    // block averages of f at level k)^(1/2)
    let energy = pair_energy(env, t, alpha, &all, &gv)?;
    let mut scale_sum = 0.0;
    for k in n..m {
        let mut sq = 0.0;
        for block in dyadic_blocks(d, m, k)? {
            let sites = block.sites(d);
            let mean = sites.iter().map(|z| f(z)).sum::<f64>() / sites.len() as f64;
            sq += mean * mean;
        }
        scale_sum += (k as f64 * (d as f64 + alpha) / 2.0).exp2() * sq.sqrt();
    }
    let energy_term = energy.sqrt() * scale_sum;
    let c2 = if energy_term > 0.0 {
        Some((lhs.abs() - block_term.abs()) / energy_term)
    } else {
        None
    };
    Ok(MultiscaleGap { lhs, block_term, energy_term, c2 })
}

// ---------------------------------------------------------------------------
// operator gaps

/// Per-k decomposition of the time-integrated squared gap between the
/// discrete mean operator and the limiting one.
#[derive(Debug, Clone, serde::Serialize)]
pub struct GapRow {
    pub k: u32,
    /// full D(k) = int_0^T sum_x |gap|^2 mu dt
    pub total: f64,
    /// time-averaging contribution ||a||^2 T pi(k^alpha T)
    pub pi_term: f64,
    /// mixed contribution 2 kbar <a, a-b> int (K(s) - kbar) dt
    pub cross_term: f64,
    /// pure spatial gap kbar^2 T ||a - b||^2
    pub residual: f64,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct GapReport {
    pub rows: Vec<GapRow>,
    /// log-log fit of the residual (spatial) part against k
    pub fit: RateFit,
}

/// Deterministic operator gap: for each k computes the exact decomposition
/// of D(k) into the analytic time-averaging term and the spatial residual,
/// and fits the residual's decay.  One-dimensional.
pub fn operator_gap_bar(
    f: &SmoothProfile,
    mean: &crate::environment::MeanProfile,
    alpha: f64,
    t_horizon: f64,
    k_list: &[u32],
    r_box: f64,
) -> Result<GapReport> {
    if f.d != 1 {
        return Err(HomogError::Config("the deterministic gap is one-dimensional".into()));
    }
    if k_list.len() < 4 {
        return Err(HomogError::Argument("gap fit needs at least 4 values of k".into()));
    }
    let kbar = mean.kbar();
    // shared jump truncation matching the solver kernel default; both sides
    // carry the same analytic far tail so the omitted region cancels exactly
    let rho = 2.0 * r_box * (f.d as f64).sqrt();
    let mut rows = Vec::with_capacity(k_list.len());
    for &k in k_list {
        let kf = k as f64;
        let n_side = (2.0 * r_box * kf) as i64;
        // unit-coefficient discrete image a(x) and continuum image b(x)
        // at the cell representatives x = (j+1)/k - R
        let mut a2 = 0.0;
        let mut ab = 0.0;
        let mut b2 = 0.0;
        let nmax = (rho * kf) as i64;
        let kalpha = kf.powf(alpha);
        for j in 0..n_side {
            let x = (j + 1) as f64 / kf - r_box;
            let fx = f.value(&[x]);
            let mut a = 0.0;
            for nz in 1..=nmax {
                let y = nz as f64 / kf;
                a += (f.value(&[x + y]) + f.value(&[x - y]) - 2.0 * fx)
                    * (nz as f64).powf(-1.0 - alpha);
            }
            let a = a * kalpha - 2.0 * fx * rho.powf(-alpha) / alpha;
            let b = bar_pointwise_1d(&|u| f.value(&[u]), x, alpha, 1.0, rho, 1e-8);
            let mu = 1.0 / kf;
            a2 += a * a * mu;
            ab += a * b * mu;
            b2 += b * b * mu;
        }
        // time integrals of the mean-profile deviation delta = K - kbar
        let s_end = kalpha * t_horizon;
        let j1 = (mean.a_int(s_end) - kbar * s_end) / kalpha;
        let j2 = t_horizon * if mean.k1() == mean.k2() { 0.0 } else { mean.pi(s_end)? };
        let pi_term = a2 * j2;
        let cross_term = 2.0 * kbar * (a2 - ab) * j1;
        let residual = kbar * kbar * t_horizon * (a2 - 2.0 * ab + b2);
        rows.push(GapRow { k, total: residual + pi_term + cross_term, pi_term, cross_term, residual });
    }
    let fit = fit_rate(&rows.iter().map(|r| (r.k as f64, r.residual)).collect::<Vec<_>>())?;
    Ok(GapReport { rows, fit })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GapVariant {
    Scaled,
    Hat,
}

/// Random operator gap: time-integrated squared distance between the random
/// operator (scaled or compensated) and its mean counterpart, over a box.
pub fn operator_gap_random(
    env: &Environment,
    f: &SmoothProfile,
    alpha: f64,
    k: u32,
    r_box: f64,
    t_horizon: f64,
    variant: GapVariant,
) -> Result<f64> {
    use crate::environment::{make_environment, EnvironmentKind, EnvironmentSpec, MarginalLaw};
    let lat = crate::lattice::build_lattice(f.d, k, r_box)?;
    let kernel = build_kernel(lat, alpha, default_rho(&lat))?;
    let mean_env = make_environment(EnvironmentSpec {
        kind: EnvironmentKind::Constant,
        marginal: MarginalLaw::Uniform02,
        profile: env.spec.profile.clone(),
        seed: 0,
    })?;
    let field = f.sample_field(lat);
    let grads: Vec<[f64; MAX_D]> = (0..lat.num_sites())
        .map(|i| {
            let x = lat.coord(i);
            f.gradient(&x[..lat.d])
        })
        .collect();
    let (op_r, op_m) = match variant {
        GapVariant::Scaled => (
            OperatorHandle::scaled(env.clone(), kernel.clone(), BoundaryMode::Regional),
            OperatorHandle::scaled(mean_env, kernel, BoundaryMode::Regional),
        ),
        GapVariant::Hat => (
            OperatorHandle::hat(env.clone(), kernel.clone(), BoundaryMode::Regional),
            OperatorHandle::hat(mean_env, kernel, BoundaryMode::Regional),
        ),
    };
    // 64-interval trapezoid in time
    let nt = 64;
    let dt = t_horizon / nt as f64;
    let mu = lat.cell_measure();
    let mut total = 0.0;
    for node in 0..=nt {
        let t = node as f64 * dt;
        let (lr, lm) = match variant {
            GapVariant::Scaled => (apply_scaled(&op_r, t, &field)?, apply_scaled(&op_m, t, &field)?),
            GapVariant::Hat => (
                apply_hat(&op_r, t, &field, &grads)?,
                apply_hat(&op_m, t, &field, &grads)?,
            ),
        };
        let sq: f64 = lr
            .values
            .iter()
            .zip(&lm.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            * mu;
        let w = if node == 0 || node == nt { 0.5 } else { 1.0 };
        total += w * sq * dt;
    }
    Ok(total)
}

/// Cutoff defect G(R) = int |Lbar(f (1 - psi_R))|^2 dx on a fine periodic
/// grid, with a log-log fit against R.  One-dimensional.
pub fn cutoff_gap(
    f: &SmoothProfile,
    alpha: f64,
    kbar: f64,
    r_list: &[f64],
    n: usize,
    l: f64,
) -> Result<GapReport> {
    if f.d != 1 {
        return Err(HomogError::Config("the cutoff defect is one-dimensional".into()));
    }
    let grid = TorusGrid::new(n, l)?;
    let mut rows = Vec::with_capacity(r_list.len());
    for &r in r_list {
        let cutoff = Cutoff::new(r)?;
        let g = TorusField::from_fn(grid, |x| f.value(&[x]) * (1.0 - cutoff.value(&[x])));
        let image = apply_bar_continuum(&g, alpha, kbar)?;
        let v = image.l2();
        let total = v * v;
        rows.push(GapRow { k: r as u32, total, pi_term: 0.0, cross_term: 0.0, residual: total });
    }
    let fit = fit_rate(&rows.iter().map(|r| (r.k as f64, r.residual)).collect::<Vec<_>>())?;
    Ok(GapReport { rows, fit })
}

// ---------------------------------------------------------------------------
// sup-in-time L2 error

#[derive(Debug, Clone, serde::Serialize)]
pub struct SupL2 {
    /// max over snapshots of the in-box L2(dx) distance
    pub value: f64,
    /// sqrt of the limiting field's squared mass outside the box (max over
    /// snapshots), reported as an additive error bar
    pub outside_bar: f64,
    pub per_snapshot: Vec<f64>,
}

/// Max over aligned snapshots of the L2(R^d, dx) distance between the
/// piecewise-constant extension of the lattice solution and the limiting
/// solution sampled at cell representatives.
pub fn sup_l2_error(u: &Trajectory, ubar: &crate::solver::TorusTrajectory) -> Result<SupL2> {
    if u.times.len() != ubar.times.len() {
        return Err(HomogError::Argument("snapshot grids differ in length".into()));
    }
    let t_end = *u.times.last().unwrap();
    for (a, b) in u.times.iter().zip(&ubar.times) {
        if (a - b).abs() > 1e-9 * t_end.max(1.0) {
            return Err(HomogError::Argument("snapshot times are misaligned".into()));
        }
    }
    let lat = u.snaps[0].lattice;
    if lat.d != 1 {
        return Err(HomogError::Argument("the limiting trajectory comparison is one-dimensional".into()));
    }
    let mu = lat.cell_measure();
    let mut per_snapshot = Vec::with_capacity(u.times.len());
    let mut outside_sq: f64 = 0.0;
    for (snap, bar) in u.snaps.iter().zip(&ubar.snaps) {
        let mut sq = 0.0;
        for site in 0..lat.num_sites() {
            let x = lat.coord(site);
            let diff = snap.values[site] - bar.interp(x[0]);
            sq += diff * diff * mu;
        }
        per_snapshot.push(sq.sqrt());
        // limiting mass outside the comparison box
        let mut out = 0.0;
        for j in 0..bar.grid.n {
            let x = bar.grid.point(j);
            if x <= -lat.r || x > lat.r {
                out += bar.values[j] * bar.values[j] * bar.grid.spacing();
            }
        }
        outside_sq = outside_sq.max(out);
    }
    let value = per_snapshot.iter().cloned().fold(0.0, f64::max);
    Ok(SupL2 { value, outside_bar: outside_sq.sqrt(), per_snapshot })
}
