//! Discrete geometry: half-open boxes on the scale-k grid, normalized cell
//! measures, block averages, and the dyadic decomposition of integer boxes.

use crate::{HomogError, Result};

pub const MAX_D: usize = 3;

/// A box (-R, R]^d intersected with the grid of spacing 1/k.
///
/// Sites are generated on demand; only (d, k, R) is stored. Site j along an
/// axis has continuum coordinate (j+1)/k - R, so coordinates run over
/// (-R, R] in steps of 1/k with the right endpoint included.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lattice {
    pub d: usize,
    pub k: u32,
    pub r: f64,
    n_side: usize,
}

pub fn build_lattice(d: usize, k: u32, r: f64) -> Result<Lattice> {
    if !(1..=MAX_D).contains(&d) {
        return Err(HomogError::Config(format!("dimension d={d} not in 1..=3")));
    }
    if k < 1 {
        return Err(HomogError::Config("scale k must be >= 1".into()));
    }
    let side = 2.0 * r * k as f64;
    if side <= 0.0 || (side - side.round()).abs() > 1e-9 || side.round() < 1.0 {
        return Err(HomogError::Config(format!(
            "2*R*k = {side} is not a positive integer (R={r}, k={k})"
        )));
    }
    Ok(Lattice { d, k, r, n_side: side.round() as usize })
}

impl Lattice {
    pub fn n_side(&self) -> usize {
        self.n_side
    }

    pub fn num_sites(&self) -> usize {
        self.n_side.pow(self.d as u32)
    }

    /// Measure of a single cell under the normalized counting measure.
    pub fn cell_measure(&self) -> f64 {
        (self.k as f64).powi(-(self.d as i32))
    }

    pub fn total_measure(&self) -> f64 {
        self.num_sites() as f64 * self.cell_measure()
    }

    /// Flat index -> per-axis integer indices in [0, n_side).
    pub fn unflatten(&self, mut flat: usize) -> [usize; MAX_D] {
        let mut idx = [0usize; MAX_D];
        for i in (0..self.d).rev() {
            idx[i] = flat % self.n_side;
            flat /= self.n_side;
        }
        idx
    }

    pub fn flatten(&self, idx: &[usize]) -> usize {
        let mut flat = 0usize;
        for i in 0..self.d {
            flat = flat * self.n_side + idx[i];
        }
        flat
    }

    /// Continuum coordinates of a site.
    pub fn coord(&self, flat: usize) -> [f64; MAX_D] {
        let idx = self.unflatten(flat);
        let mut x = [0.0; MAX_D];
        for i in 0..self.d {
            x[i] = (idx[i] as f64 + 1.0) / self.k as f64 - self.r;
        }
        x
    }

    /// Integer coordinates on the unscaled lattice, i.e. k * coord.
    /// Only meaningful when R*k is integral, which build_lattice enforces
    /// via 2Rk; offsets by half-integers cannot occur because site
    /// coordinates are (j+1)/k - R and k*coord = j+1 - Rk.
    pub fn int_coord(&self, flat: usize) -> [i64; MAX_D] {
        let idx = self.unflatten(flat);
        let rk2 = (2.0 * self.r * self.k as f64).round() as i64;
        // j + 1 - Rk, computed in halves to stay exact when 2Rk is odd:
        // 2*(j+1) - 2Rk is always even plus parity of 2Rk; for our use the
        // environment only needs a consistent injective integer labeling,
        // so we use 2*(j+1) - 2Rk when 2Rk is odd and (j+1) - Rk otherwise.
        let mut x = [0i64; MAX_D];
        if rk2 % 2 == 0 {
            for i in 0..self.d {
                x[i] = idx[i] as i64 + 1 - rk2 / 2;
            }
        } else {
            for i in 0..self.d {
                x[i] = 2 * (idx[i] as i64 + 1) - rk2;
            }
        }
        x
    }

    /// Whether 2Rk is odd (integer coordinates are then doubled).
    pub fn int_coord_doubled(&self) -> bool {
        ((2.0 * self.r * self.k as f64).round() as i64) % 2 != 0
    }

    /// Flat index of the cell containing x under the half-open convention
    /// x in prod (z_i, z_i + 1/k], or None when x is outside the box.
    pub fn cell_of(&self, x: &[f64]) -> Option<usize> {
        let mut idx = [0usize; MAX_D];
        for i in 0..self.d {
            // site j covers ((j/k - R), ((j+1)/k - R)]
            let s = (x[i] + self.r) * self.k as f64;
            let j = s.ceil() - 1.0;
            // guard against exact-boundary round-off at the left edge
            let j = if s - s.round() == 0.0 { s.round() - 1.0 } else { j };
            if j < 0.0 || j >= self.n_side as f64 {
                return None;
            }
            idx[i] = j as usize;
        }
        Some(self.flatten(&idx[..self.d]))
    }
}

/// Scalar field on the sites of a lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub lattice: Lattice,
    pub values: Vec<f64>,
}

impl Field {
    pub fn zeros(lattice: Lattice) -> Field {
        Field { lattice, values: vec![0.0; lattice.num_sites()] }
    }

    pub fn from_fn(lattice: Lattice, f: impl Fn(&[f64]) -> f64) -> Field {
        let values = (0..lattice.num_sites())
            .map(|i| f(&lattice.coord(i)[..lattice.d]))
            .collect();
        Field { lattice, values }
    }

    pub fn constant(lattice: Lattice, c: f64) -> Field {
        Field { lattice, values: vec![c; lattice.num_sites()] }
    }

    /// Integral against the normalized counting measure.
    pub fn integral_mu(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.lattice.cell_measure()
    }

    /// L2 norm under the cell measure.
    pub fn l2_mu(&self) -> f64 {
        (self.values.iter().map(|v| v * v).sum::<f64>() * self.lattice.cell_measure()).sqrt()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

/// Dyadic block of the decomposition of B_{2^m} (n <= m): the sub-box
/// B_{2^n}(center) with center coordinates (odd integer) * 2^n.
#[derive(Debug, Clone, PartialEq)]
pub struct DyadicBlock {
    pub m: u32,
    pub n: u32,
    pub center: Vec<i64>,
    pub extent: i64,
}

impl DyadicBlock {
    /// Integer sites of the block: center + (-2^n, 2^n]^d.
    pub fn sites(&self, d: usize) -> Vec<Vec<i64>> {
        let side: Vec<i64> = (1 - self.extent..=self.extent).collect();
        let mut out = vec![Vec::with_capacity(d)];
        for i in 0..d {
            let mut next = Vec::with_capacity(out.len() * side.len());
            for prefix in &out {
                for &s in &side {
                    let mut v = prefix.clone();
                    v.push(self.center[i] + s);
                    next.push(v);
                }
            }
            out = next;
        }
        out
    }
}

/// All blocks of level n inside B_{2^m}. For m == n the single block is
/// centered at the origin and covers the whole box.
pub fn dyadic_blocks(d: usize, m: u32, n: u32) -> Result<Vec<DyadicBlock>> {
    if n > m {
        return Err(HomogError::Argument(format!("dyadic levels need n <= m, got n={n} m={m}")));
    }
    let extent = 1i64 << n;
    if m == n {
        return Ok(vec![DyadicBlock { m, n, center: vec![0; d], extent }]);
    }
    // odd integers q with -2^{m-n} < q <= 2^{m-n}
    let half = 1i64 << (m - n);
    let odd: Vec<i64> = (-half + 1..=half).filter(|q| q % 2 != 0).collect();
    let mut centers = vec![Vec::with_capacity(d)];
    for _ in 0..d {
        let mut next = Vec::with_capacity(centers.len() * odd.len());
        for prefix in &centers {
            for &q in &odd {
                let mut v = prefix.clone();
                v.push(q * extent);
                next.push(v);
            }
        }
        centers = next;
    }
    Ok(centers.into_iter().map(|center| DyadicBlock { m, n, center, extent }).collect())
}

/// Normalized average of f over an explicit nonempty set of flat indices.
pub fn block_average(f: &Field, block: &[usize]) -> Result<f64> {
    if block.is_empty() {
        return Err(HomogError::Argument("block_average over an empty block".into()));
    }
    let mut s = 0.0;
    for &i in block {
        let v = f.values.get(i).ok_or_else(|| {
            HomogError::Argument(format!("site index {i} outside the field's lattice"))
        })?;
        s += v;
    }
    Ok(s / block.len() as f64)
}

/// Flat lattice indices of a dyadic block inside the k=1 lattice on B_{2^m}.
pub fn block_indices(lat: &Lattice, block: &DyadicBlock) -> Vec<usize> {
    debug_assert_eq!(lat.k, 1);
    let r = lat.r as i64;
    block
        .sites(lat.d)
        .into_iter()
        .map(|z| {
            let idx: Vec<usize> = z.iter().map(|&zi| (zi + r - 1) as usize).collect();
            lat.flatten(&idx)
        })
        .collect()
}
