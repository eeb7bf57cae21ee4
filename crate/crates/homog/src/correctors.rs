//! Time-dependent correctors on dyadic boxes: the drift field V, the
//! vector-valued corrector solve, its scaling report across box levels, and
//! the two-scale ansatz built from it.

use std::collections::BTreeMap;

use crate::environment::{BasisKey, Environment};
use crate::lattice::{build_lattice, Field, Lattice, MAX_D};
use crate::operators::{build_kernel, default_rho, BoundaryMode, OperatorHandle};
use crate::solver::{CachedOp, SolveParams};
use crate::{HomogError, Result};

/// Sum of z / |z|^(d+alpha) * w(z) over integer offsets 0 < |z| <= radius.
/// The weight callback receives the offset z; used directly by the drift
/// fields and by tests with hand-built weights.
pub fn drift_sum_with(
    d: usize,
    alpha: f64,
    radius: f64,
    mut weight: impl FnMut(&[i64]) -> f64,
) -> [f64; MAX_D] {
    let rmax = radius.floor() as i64;
    let mut v = [0.0; MAX_D];
    let mut z = [-rmax; MAX_D];
    for i in d..MAX_D {
        z[i] = 0;
    }
    loop {
        // pair z with -z so symmetric weights cancel exactly; only
        // lexicographically positive offsets are visited
        let positive = (0..d).any(|i| z[i] != 0) && z[(0..d).find(|&i| z[i] != 0).unwrap()] > 0;
        let norm2: f64 = (0..d).map(|i| (z[i] * z[i]) as f64).sum();
        if positive && norm2 <= radius * radius {
            let scale = norm2.powf(-0.5 * (d as f64 + alpha) - 0.5);
            let mut neg = [0i64; MAX_D];
            for i in 0..d {
                neg[i] = -z[i];
            }
            let dw = weight(&z[..d]) - weight(&neg[..d]);
            if dw != 0.0 {
                for i in 0..d {
                    v[i] += z[i] as f64 * scale * dw;
                }
            }
        }
        // odometer over the cube [-rmax, rmax]^d
        let mut i = 0;
        loop {
            if i == d {
                return v;
            }
            z[i] += 1;
            if z[i] <= rmax {
                break;
            }
            z[i] = -rmax;
            i += 1;
        }
    }
}

/// Analytic bound on the drift tail sum C1 * sum_{|z| > r} |z|^(1-d-alpha),
/// valid for alpha > 1.
pub fn drift_tail_bound(d: usize, alpha: f64, c1: f64, radius: f64) -> f64 {
    let sigma = match d {
        1 => 2.0,
        2 => 2.0 * std::f64::consts::PI,
        _ => 4.0 * std::f64::consts::PI,
    };
    // every lattice point beyond r sits in a unit cell within sqrt(d)/2 of it
    let shifted = (radius - (d as f64).sqrt()).max(1.0);
    c1 * sigma * shifted.powf(1.0 - alpha) / (alpha - 1.0)
}

/// Drift field V(t, x) = sum_z z/|z|^(d+alpha) w(t, x, x+z), truncated at
/// `radius` with the tail bound recorded.  Absolute convergence needs
/// alpha > 1; smaller alpha must use the level-truncated variant.
pub fn drift_field_v(
    env: &Environment,
    alpha: f64,
    t: f64,
    x: &[i64],
    radius: f64,
) -> Result<([f64; MAX_D], f64)> {
    if alpha <= 1.0 {
        return Err(HomogError::Argument(
            "drift sum diverges for alpha <= 1; use the level-truncated drift_field_vm".into(),
        ));
    }
    let d = x.len();
    let basis = env.basis_at(t)?;
    let v = drift_sum_with(d, alpha, radius, |z| {
        let mut y = [0i64; MAX_D];
        for i in 0..d {
            y[i] = x[i] + z[i];
        }
        basis.iter().map(|&(key, c)| c * env.basis_sample(key, x, &y[..d])).sum()
    });
    Ok((v, drift_tail_bound(d, alpha, env.c1(), radius)))
}

/// Level-m drift: the same sum restricted to |z| <= 2^m, exact for any
/// alpha in (0, 2).
pub fn drift_field_vm(
    env: &Environment,
    alpha: f64,
    t: f64,
    x: &[i64],
    m: u32,
) -> Result<[f64; MAX_D]> {
    let d = x.len();
    let basis = env.basis_at(t)?;
    Ok(drift_sum_with(d, alpha, (1u64 << m) as f64, |z| {
        let mut y = [0i64; MAX_D];
        for i in 0..d {
            y[i] = x[i] + z[i];
        }
        basis.iter().map(|&(key, c)| c * env.basis_sample(key, x, &y[..d])).sum()
    }))
}

/// One corrector solve on the box (-2^m, 2^m]^d: the vector field phi, its
/// running energy integral, and the certificates used by the scaling report.
#[derive(Debug, Clone)]
pub struct CorrectorRun {
    pub m: u32,
    pub d: usize,
    pub alpha: f64,
    pub lattice: Lattice,
    pub times: Vec<f64>,
    /// snapshots of phi: per snapshot, per site, one vector
    pub snaps: Vec<Vec<[f64; MAX_D]>>,
    /// sup over steps of the squared L2(mu) norm of phi
    pub sup_l2_sq: f64,
    /// trapezoid integral of the Dirichlet energy over [0, horizon]
    pub energy_integral: f64,
    pub dt: f64,
    pub steps: usize,
    pub t_horizon: f64,
    /// drift truncation certificate (alpha > 1; zero otherwise)
    pub tail_bound: f64,
    /// mean-zero re-projections triggered during the solve
    pub reprojections: usize,
    /// max over steps of the defect in the discrete energy balance
    /// d/dt ||phi||^2 = -2 E + 2 <V - avg V, phi>; O(dt) by construction
    pub energy_identity_defect: f64,
}

impl CorrectorRun {
    /// phi(t, z) for integer z, zero outside the box, linear in t.
    pub fn phi_at(&self, t: f64, z: &[i64]) -> [f64; MAX_D] {
        let mut idx = [0usize; MAX_D];
        let half = 1i64 << self.m;
        for i in 0..self.d {
            if z[i] <= -half || z[i] > half {
                return [0.0; MAX_D];
            }
            idx[i] = (z[i] + half - 1) as usize;
        }
        let site = self.lattice.flatten(&idx[..self.d]);
        let tn = *self.times.last().unwrap();
        let t = t.clamp(0.0, tn);
        let pos = self.times.partition_point(|&s| s <= t).min(self.times.len() - 1);
        let (i0, i1) = (pos - 1, pos);
        let (t0, t1) = (self.times[i0], self.times[i1]);
        let th = if t1 > t0 { (t - t0) / (t1 - t0) } else { 0.0 };
        let mut out = [0.0; MAX_D];
        for i in 0..self.d {
            out[i] = (1.0 - th) * self.snaps[i0][site][i] + th * self.snaps[i1][site][i];
        }
        out
    }

    /// Scale-normalized size used by the scaling report.
    pub fn q(&self) -> f64 {
        let m = self.m as f64;
        let d = self.d as f64;
        let a = self.alpha;
        let scale = if a > 1.0 {
            (m * (a + d)).exp2()
        } else if a == 1.0 {
            (m * (d + 1.0)).exp2()
        } else {
            (m * (d + 2.0 * (1.0 - a) + a)).exp2()
        };
        (self.sup_l2_sq + self.energy_integral) / (scale * self.t_base())
    }

    fn t_base(&self) -> f64 {
        self.t_horizon / (self.m as f64 * self.alpha).exp2()
    }
}

/// Explicit Euler solve of d/dt phi = L_B phi + V - avg(V) on the box
/// (-2^m, 2^m]^d with phi(0) = 0, horizon 2^(m alpha) * t_base.
pub fn solve_corrector(
    env: &Environment,
    alpha: f64,
    d: usize,
    m: u32,
    t_base: f64,
    params: &SolveParams,
) -> Result<CorrectorRun> {
    let half = (1u64 << m) as f64;
    let lat = build_lattice(d, 1, half)?;
    let kernel = build_kernel(lat, alpha, default_rho(&lat))?;
    let op = OperatorHandle::scaled(env.clone(), kernel, BoundaryMode::Regional);
    let horizon = (m as f64 * alpha).exp2() * t_base;
    let s_max = op.s_max();
    let nsnap = params.snapshots.max(2);
    let q = (nsnap - 1) as f64;
    let per = ((horizon / q) / (params.cfl_fraction / s_max)).ceil().max(1.0);
    let dt = horizon / (q * per);
    let steps = (q * per) as usize;
    let snap_stride = steps / (nsnap - 1);

    let n = lat.num_sites();
    let ints: Vec<[i64; MAX_D]> = (0..n).map(|i| lat.int_coord(i)).collect();
    let mut cached = CachedOp::new(&op);

    // per-basis-key drift tables, rebuilt lazily as blocks change
    let mut drift_tables: BTreeMap<BasisKey, Vec<[f64; MAX_D]>> = BTreeMap::new();
    let radius = half; // truncation level 2^m for every alpha
    let tail_bound = if alpha > 1.0 { drift_tail_bound(d, alpha, env.c1(), radius) } else { 0.0 };

    let mut phi: Vec<Vec<f64>> = vec![vec![0.0; n]; d];
    let mut lphi = vec![0.0; n];
    let mut v = vec![[0.0f64; MAX_D]; n];

    let mut times = vec![0.0];
    let mut snaps: Vec<Vec<[f64; MAX_D]>> = vec![vec![[0.0; MAX_D]; n]];
    let mut sup_l2_sq: f64 = 0.0;
    let mut energy_integral = 0.0;
    let mut prev_energy = 0.0;
    let mut reprojections = 0usize;
    let mut identity_defect: f64 = 0.0;
    let mut norm_sq_prev = 0.0;

    for step in 0..steps {
        let t = step as f64 * dt;
        let basis = env.basis_at(t)?;
        for &(key, _) in &basis {
            drift_tables.entry(key).or_insert_with(|| {
                let mut table = vec![[0.0f64; MAX_D]; n];
                for (x, row) in table.iter_mut().enumerate() {
                    *row = drift_sum_with(d, alpha, radius, |z| {
                        let mut y = [0i64; MAX_D];
                        for i in 0..d {
                            y[i] = ints[x][i] + z[i];
                        }
                        env.basis_sample(key, &ints[x][..d], &y[..d])
                    });
                }
                table
            });
        }
        while drift_tables.len() > 5 {
            let oldest = *drift_tables.keys().next().unwrap();
            drift_tables.remove(&oldest);
        }
        // assemble V(t, .) and its box average
        let mut mean = [0.0f64; MAX_D];
        for (x, vx) in v.iter_mut().enumerate() {
            let mut acc = [0.0f64; MAX_D];
            for &(key, c) in &basis {
                let row = &drift_tables[&key][x];
                for i in 0..d {
                    acc[i] += c * row[i];
                }
            }
            *vx = acc;
            for i in 0..d {
                mean[i] += acc[i];
            }
        }
        for mi in mean.iter_mut() {
            *mi /= n as f64;
        }

        // energy, inner products and the step itself, componentwise
        let mut energy = 0.0;
        let mut source_ip = 0.0;
        for comp in 0..d {
            cached.apply(t, &phi[comp], &mut lphi)?;
            for x in 0..n {
                let vc = v[x][comp] - mean[comp];
                energy += -phi[comp][x] * lphi[x];
                source_ip += vc * phi[comp][x];
                phi[comp][x] += dt * (lphi[x] + vc);
            }
        }
        energy_integral += 0.5 * (prev_energy + energy) * dt;
        prev_energy = energy;

        let mut norm_sq = 0.0;
        let mut drift = [0.0f64; MAX_D];
        for comp in 0..d {
            for x in 0..n {
                norm_sq += phi[comp][x] * phi[comp][x];
                drift[comp] += phi[comp][x];
            }
        }
        if !norm_sq.is_finite() {
            return Err(HomogError::Numerical(format!("NaN/inf at corrector step {}", step + 1)));
        }
        let defect = ((norm_sq - norm_sq_prev) / dt - (-2.0 * energy + 2.0 * source_ip)).abs();
        identity_defect = identity_defect.max(defect);
        // mean-zero re-projection against accumulated floating-point drift
        let norm = norm_sq.sqrt();
        for comp in 0..d {
            if drift[comp].abs() > 1e-10 * norm.max(1e-300) {
                let shift = drift[comp] / n as f64;
                for x in 0..n {
                    phi[comp][x] -= shift;
                }
                reprojections += 1;
            }
        }
        norm_sq_prev = phi.iter().flatten().map(|p| p * p).sum();
        sup_l2_sq = sup_l2_sq.max(norm_sq_prev);

        if (step + 1) % snap_stride == 0 {
            let mut snap = vec![[0.0f64; MAX_D]; n];
            for (x, s) in snap.iter_mut().enumerate() {
                for comp in 0..d {
                    s[comp] = phi[comp][x];
                }
            }
            times.push((step + 1) as f64 * dt);
            snaps.push(snap);
        }
    }
    // close the trapezoid with the energy of the final state
    let mut final_energy = 0.0;
    for comp in 0..d {
        cached.apply(horizon, &phi[comp], &mut lphi)?;
        for x in 0..n {
            final_energy += -phi[comp][x] * lphi[x];
        }
    }
    energy_integral += 0.5 * (prev_energy + final_energy) * dt;

    Ok(CorrectorRun {
        m,
        d,
        alpha,
        lattice: lat,
        times,
        snaps,
        sup_l2_sq,
        energy_integral,
        dt,
        steps,
        t_horizon: horizon,
        tail_bound,
        reprojections,
        energy_identity_defect: identity_defect,
    })
}

/// One row per box level plus a power-law fit of the normalized size
/// against the level: log q = power * log m + intercept.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ScalingReport {
    pub rows: Vec<ScalingRow>,
    pub power: f64,
    pub intercept: f64,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct ScalingRow {
    pub m: u32,
    pub sup_l2_sq: f64,
    pub energy_integral: f64,
    pub q: f64,
}

pub fn corrector_scaling_report(runs: &[CorrectorRun]) -> Result<ScalingReport> {
    if runs.len() < 3 {
        return Err(HomogError::Argument("scaling report needs at least 3 levels".into()));
    }
    let rows: Vec<ScalingRow> = runs
        .iter()
        .map(|r| ScalingRow {
            m: r.m,
            sup_l2_sq: r.sup_l2_sq,
            energy_integral: r.energy_integral,
            q: r.q(),
        })
        .collect();
    // least squares in (log m, log q); zero rows (deterministic
    // environments) give q = 0 and an identically zero fit
    let pts: Vec<(f64, f64)> =
        rows.iter().filter(|r| r.q > 0.0).map(|r| ((r.m as f64).ln(), r.q.ln())).collect();
    let (power, intercept) = if pts.len() >= 2 {
        let n = pts.len() as f64;
        let sx: f64 = pts.iter().map(|p| p.0).sum();
        let sy: f64 = pts.iter().map(|p| p.1).sum();
        let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
        let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
        let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
        (slope, (sy - slope * sx) / n)
    } else {
        (0.0, f64::NEG_INFINITY)
    };
    Ok(ScalingReport { rows, power, intercept })
}

/// Two-scale ansatz v_k(t, x) = (ubar psi)(x) + k^(-1) <grad(ubar psi)(x),
/// phi(k^alpha t, k x)> on a scale-k lattice; the caller supplies the value
/// and analytic gradient of the cut-off limit profile.
pub fn build_two_scale(
    lat: Lattice,
    t: f64,
    ubar_psi: &dyn Fn(&[f64]) -> (f64, [f64; MAX_D]),
    phi: &CorrectorRun,
    alpha: f64,
) -> Result<Field> {
    if lat.d != phi.d {
        return Err(HomogError::Argument("dimension mismatch in two-scale ansatz".into()));
    }
    let k = lat.k as f64;
    let fast_t = k.powf(alpha) * t;
    let mut out = Field::zeros(lat);
    for site in 0..lat.num_sites() {
        let x = lat.coord(site);
        let (val, grad) = ubar_psi(&x[..lat.d]);
        // k x rounded to the integer lattice of the corrector box
        let mut z = [0i64; MAX_D];
        for i in 0..lat.d {
            z[i] = (k * x[i]).round() as i64;
        }
        let ph = phi.phi_at(fast_t, &z[..lat.d]);
        let mut corr = 0.0;
        for i in 0..lat.d {
            corr += grad[i] * ph[i];
        }
        out.values[site] = val + corr / k;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::{
        make_environment, EnvironmentKind, EnvironmentSpec, MarginalLaw, MeanProfile,
    };
    use crate::operators::dirichlet_energy;
    use crate::solver::Scheme;

    fn const_env(kbar: f64) -> Environment {
        make_environment(EnvironmentSpec {
            kind: EnvironmentKind::Constant,
            marginal: MarginalLaw::Uniform02,
            profile: MeanProfile::Constant { kbar },
            seed: 0,
        })
        .unwrap()
    }

    fn random_env(seed: u64) -> Environment {
        make_environment(EnvironmentSpec {
            kind: EnvironmentKind::PiecewiseLinear,
            marginal: MarginalLaw::Uniform02,
            profile: MeanProfile::Constant { kbar: 1.0 },
            seed,
        })
        .unwrap()
    }

    #[test]
    fn drift_vanishes_for_constant_weights() {
        let env = const_env(1.4);
        let (v, tail) = drift_field_v(&env, 1.5, 0.3, &[2], 20.0).unwrap();
        assert_eq!(v[0], 0.0);
        assert!(tail > 0.0);
        let vm = drift_field_vm(&env, 0.7, 0.3, &[0], 4).unwrap();
        assert_eq!(vm[0], 0.0);
    }

    #[test]
    fn single_pair_hand_sum() {
        // weight 1 on the pair (x, x+1) only: V = +1 / 1^(1+alpha) = 1
        let v = drift_sum_with(1, 1.5, 10.0, |z| if z[0] == 1 { 1.0 } else { 0.0 });
        assert_eq!(v[0], 1.0);
        // m = 0 restricts to z in {-1, +1}
        let v = drift_sum_with(1, 1.5, 1.0, |z| (2 + z[0]) as f64);
        assert!((v[0] - (3.0 - 1.0)).abs() < 1e-14);
    }

    #[test]
    fn alpha_below_one_is_rejected_for_untruncated_drift() {
        let env = random_env(3);
        assert!(drift_field_v(&env, 0.9, 0.0, &[0], 10.0).is_err());
        assert!(drift_field_vm(&env, 0.9, 0.0, &[0], 3).is_ok());
    }

    #[test]
    fn tail_bound_dominates_radius_doubling() {
        let env = make_environment(EnvironmentSpec {
            kind: EnvironmentKind::StaticIid,
            marginal: MarginalLaw::Uniform02,
            profile: MeanProfile::Constant { kbar: 1.0 },
            seed: 11,
        })
        .unwrap();
        for x in [-3i64, 0, 5] {
            let (v1, tail) = drift_field_v(&env, 1.5, 0.0, &[x], 20.0).unwrap();
            let (v2, _) = drift_field_v(&env, 1.5, 0.0, &[x], 40.0).unwrap();
            assert!((v2[0] - v1[0]).abs() <= tail, "change {} tail {}", (v2[0] - v1[0]).abs(), tail);
        }
    }

    #[test]
    fn level_drift_sup_bounds() {
        // |V_m| <= C1 sum_{0<|z|<=2^m} |z|^(-alpha) in d = 1; compare the
        // realized field against the analytic envelope per level
        let env = make_environment(EnvironmentSpec {
            kind: EnvironmentKind::StaticIid,
            marginal: MarginalLaw::Uniform02,
            profile: MeanProfile::Constant { kbar: 1.0 },
            seed: 5,
        })
        .unwrap();
        let c1 = env.c1();
        let cases: [(f64, fn(f64, u32) -> f64); 2] = [
            (1.0, |c1, m| 2.0 * c1 * (1.0 + m as f64 * std::f64::consts::LN_2)),
            (0.5, |c1, m| 4.0 * c1 * (m as f64 * 0.5).exp2()),
        ];
        for (alpha, envelope) in cases {
            for m in 1..=6u32 {
                let bound = envelope(c1, m);
                for x in [-7i64, 0, 13] {
                    let v = drift_field_vm(&env, alpha, 0.2, &[x], m).unwrap();
                    assert!(v[0].abs() <= bound, "alpha {alpha} m {m}: {} > {bound}", v[0].abs());
                }
            }
        }
    }

    fn small_params() -> SolveParams {
        SolveParams {
            t_horizon: 0.0, // unused by solve_corrector
            cfl_fraction: 0.5,
            snapshots: 5,
            dt_override: None,
            scheme: Scheme::Euler,
        }
    }

    #[test]
    fn corrector_trivial_for_constant_weights() {
        let run = solve_corrector(&const_env(1.0), 1.5, 1, 3, 0.05, &small_params()).unwrap();
        assert_eq!(run.sup_l2_sq, 0.0);
        assert_eq!(run.energy_integral, 0.0);
        for snap in &run.snaps {
            assert!(snap.iter().all(|v| v[0] == 0.0));
        }
    }

    #[test]
    fn corrector_mean_zero_and_energy() {
        let env = random_env(21);
        let run = solve_corrector(&env, 1.5, 1, 4, 0.05, &small_params()).unwrap();
        assert!(run.sup_l2_sq > 0.0);
        let n = run.lattice.num_sites() as f64;
        for snap in &run.snaps {
            let mean: f64 = snap.iter().map(|v| v[0]).sum::<f64>() / n;
            let norm: f64 = snap.iter().map(|v| v[0] * v[0]).sum::<f64>().sqrt();
            assert!(mean.abs() <= 1e-10 * norm.max(1e-300) + 1e-15, "mean {mean} norm {norm}");
        }
        // energy accumulator is nondecreasing information: strictly positive
        assert!(run.energy_integral > 0.0);
        let run2 = solve_corrector(
            &env,
            1.5,
            1,
            4,
            0.05,
            &SolveParams { dt_override: None, cfl_fraction: 0.25, ..small_params() },
        )
        .unwrap();
        // halving dt roughly halves the balance defect (first-order term)
        let ratio = run.energy_identity_defect / run2.energy_identity_defect;
        assert!(ratio > 1.3 && ratio < 3.0, "defect ratio {ratio}");
    }

    #[test]
    fn corrector_energy_matches_independent_recomputation() {
        // recompute int E dt by trapezoid over every step using the
        // independent all-pairs regional energy; with snapshot stride 1 the
        // two quadratures use the same nodes and must agree to rounding
        let env = random_env(8);
        let params = SolveParams { snapshots: 1025, ..small_params() };
        let run = solve_corrector(&env, 1.2, 1, 3, 0.05, &params).unwrap();
        assert_eq!(run.snaps.len(), run.steps + 1, "expected snapshot stride 1");
        let lat = run.lattice;
        let sites: Vec<usize> = (0..lat.num_sites()).collect();
        let mut indep = 0.0;
        let mut prev = 0.0;
        for (j, snap) in run.snaps.iter().enumerate() {
            let f = Field {
                lattice: lat,
                values: snap.iter().map(|v| v[0]).collect(),
            };
            let e = dirichlet_energy(&env, &lat, &sites, 1.2, run.times[j], &f).unwrap();
            if j > 0 {
                indep += 0.5 * (prev + e) * (run.times[j] - run.times[j - 1]);
            }
            prev = e;
        }
        assert!(indep > 0.0);
        let rel = (indep - run.energy_integral).abs() / run.energy_integral;
        assert!(rel < 1e-8, "relative gap {rel}");
    }

    #[test]
    fn corrector_step_energy_identity_exact_recheck() {
        // replay the first step by hand: phi(dt) = dt (V - avg V), so
        // ||phi(dt)||^2 = dt^2 ||V - avg V||^2
        let env = random_env(40);
        let alpha = 1.5;
        let m = 3u32;
        let run = solve_corrector(&env, alpha, 1, m, 0.02, &small_params()).unwrap();
        let lat = run.lattice;
        let n = lat.num_sites();
        let mut v = Vec::with_capacity(n);
        for site in 0..n {
            let ic = lat.int_coord(site);
            let (vx, _) = drift_field_v(&env, alpha, 0.0, &ic[..1], (1u64 << m) as f64).unwrap();
            v.push(vx[0]);
        }
        let mean = v.iter().sum::<f64>() / n as f64;
        // first step from phi = 0: phi(dt) = dt (V - avg V), so the balance
        // defect at step 0 is exactly ||phi(dt)||^2 / dt = dt ||V - avg V||^2
        let step0_defect: f64 =
            run.dt * v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>();
        assert!(step0_defect > 0.0);
        assert!(run.energy_identity_defect >= 0.999 * step0_defect);
    }

    #[test]
    fn scaling_report_shapes() {
        let env = random_env(30);
        let runs: Vec<CorrectorRun> = (3..=5)
            .map(|m| solve_corrector(&env, 1.5, 1, m, 0.02, &small_params()).unwrap())
            .collect();
        assert!(corrector_scaling_report(&runs[..2]).is_err());
        let rep = corrector_scaling_report(&runs).unwrap();
        assert_eq!(rep.rows.len(), 3);
        assert!(rep.rows.iter().all(|r| r.q.is_finite() && r.q >= 0.0));
        // constant environment: all-zero rows and a null fit
        let zruns: Vec<CorrectorRun> = (3..=5)
            .map(|m| solve_corrector(&const_env(1.0), 1.5, 1, m, 0.02, &small_params()).unwrap())
            .collect();
        let zrep = corrector_scaling_report(&zruns).unwrap();
        assert!(zrep.rows.iter().all(|r| r.q == 0.0));
        assert_eq!(zrep.power, 0.0);
    }

    #[test]
    fn two_scale_trivial_cases() {
        let env = random_env(4);
        let run = solve_corrector(&env, 1.5, 1, 3, 0.02, &small_params()).unwrap();
        let lat = build_lattice(1, 4, 2.0).unwrap();
        // phi = 0 snapshot at t = 0: v_k = ubar psi exactly
        let profile = |x: &[f64]| ((1.0 - x[0] * x[0]).max(0.0), [0.0; MAX_D]);
        let v = build_two_scale(lat, 0.0, &profile, &run, 1.5).unwrap();
        for site in 0..lat.num_sites() {
            let x = lat.coord(site);
            assert_eq!(v.values[site], (1.0 - x[0] * x[0]).max(0.0));
        }
        // zero gradient kills the corrector term at any time
        let flat = |_: &[f64]| (2.0, [0.0; MAX_D]);
        let v = build_two_scale(lat, 0.01, &flat, &run, 1.5).unwrap();
        assert!(v.values.iter().all(|&x| x == 2.0));
    }
}
