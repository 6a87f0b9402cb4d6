//! 25-point acoustic wave stencil (2nd order in time, 8th order in space).
//!
//! The same [`step`] routine runs inside device working buffers and in the
//! in-core reference, so every out-of-core mode can be compared bitwise.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{GridSpec, PlaneRange};
use crate::error::{Error, Result};

pub const STENCIL_RADIUS: usize = 4;
pub const DEFAULT_CFL: f64 = 0.4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StencilCoeffs {
    /// Second-derivative weights `c0..c4` for unit grid spacing.
    pub axis: [f64; STENCIL_RADIUS + 1],
    /// Time step for unit grid spacing.
    pub dt: f64,
}

impl StencilCoeffs {
    /// Picks `dt` so that `max_velocity · dt = cfl`.
    pub fn with_cfl(mut self, cfl: f64, max_velocity: f64) -> Self {
        self.dt = cfl / max_velocity;
        self
    }

    /// `c0 + 2·(c1 + c2 + c3 + c4)`, zero for a consistent Laplacian.
    pub fn constant_residual(&self) -> f64 {
        self.axis[0] + 2.0 * self.axis[1..].iter().sum::<f64>()
    }
}

/// Central-difference weights of order 8, solved exactly over the rationals.
pub fn coefficients_8th_order() -> StencilCoeffs {
    // symmetric stencil: sum_m c_m m^(2j) = [j == 1] for j = 1..=4
    let n = STENCIL_RADIUS;
    let mut a: Vec<Vec<Ratio>> = (1..=n)
        .map(|j| {
            let mut row: Vec<Ratio> = (1..=n)
                .map(|m| Ratio::int((m as i128).pow(2 * j as u32)))
                .collect();
            row.push(Ratio::int(i128::from(j == 1)));
            row
        })
        .collect();
    for col in 0..n {
        let pivot = (col..n).find(|&r| a[r][col].num != 0).expect("nonsingular");
        a.swap(col, pivot);
        let p = a[col][col];
        for v in a[col].iter_mut() {
            *v = v.div(p);
        }
        for r in 0..n {
            if r != col && a[r][col].num != 0 {
                let f = a[r][col];
                for c in 0..=n {
                    let sub = a[col][c].mul(f);
                    a[r][c] = a[r][c].sub(sub);
                }
            }
        }
    }
    let mut exact = [Ratio::int(0); STENCIL_RADIUS + 1];
    for m in 1..=n {
        exact[m] = a[m - 1][n];
        exact[0] = exact[0].sub(exact[m].mul(Ratio::int(2)));
    }
    StencilCoeffs {
        axis: exact.map(|r| r.to_f64()),
        dt: DEFAULT_CFL,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Ratio {
    num: i128,
    den: i128,
}

impl Ratio {
    fn int(v: i128) -> Self {
        Self { num: v, den: 1 }
    }

    fn new(num: i128, den: i128) -> Self {
        let g = gcd(num.abs(), den.abs()).max(1);
        let s = if den < 0 { -1 } else { 1 };
        Self {
            num: s * num / g,
            den: s * den / g,
        }
    }

    fn mul(self, o: Self) -> Self {
        Self::new(self.num * o.num, self.den * o.den)
    }

    fn div(self, o: Self) -> Self {
        Self::new(self.num * o.den, self.den * o.num)
    }

    fn sub(self, o: Self) -> Self {
        Self::new(self.num * o.den - o.num * self.den, self.den * o.den)
    }

    fn to_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

fn gcd(a: i128, b: i128) -> i128 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Allocated shape of a field or working buffer: x fastest, z slowest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldDims {
    pub nx: usize,
    pub ny: usize,
    pub planes: usize,
}

impl FieldDims {
    pub fn of_grid(grid: &GridSpec) -> Self {
        Self {
            nx: grid.alloc_x(),
            ny: grid.alloc_y(),
            planes: grid.alloc_z(),
        }
    }

    pub fn plane_elems(&self) -> usize {
        self.nx * self.ny
    }

    pub fn len(&self) -> usize {
        self.plane_elems() * self.planes
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (z * self.ny + y) * self.nx + x
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub dims: FieldDims,
    pub data: Vec<f64>,
}

impl Field {
    pub fn zeros(dims: FieldDims) -> Self {
        Self {
            dims,
            data: vec![0.0; dims.len()],
        }
    }

    pub fn planes(&self, range: PlaneRange) -> &[f64] {
        let p = self.dims.plane_elems();
        &self.data[range.start * p..range.end * p]
    }

    pub fn planes_mut(&mut self, range: PlaneRange) -> &mut [f64] {
        let p = self.dims.plane_elems();
        &mut self.data[range.start * p..range.end * p]
    }

    /// Raw little-endian dump of the whole allocated array.
    pub fn write_raw(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        for v in &self.data {
            f.write_all(&v.to_le_bytes())?;
        }
        f.flush()?;
        Ok(())
    }

    pub fn max_abs_diff(&self, other: &Field) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn bitwise_eq(&self, other: &Field) -> bool {
        self.dims == other.dims
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// One wave-equation update over the interior columns of `region`.
///
/// `next = 2·curr − prev + (v·dt)²·Lap25(curr)` for every cell with x and y
/// at least `R` from the allocation edge and z inside `region`. Cells outside
/// that set are left untouched. The Laplacian sums x offsets `-4..=4` (center
/// weight `3·c0`), then y offsets, then z offsets, each ascending.
pub fn step(
    prev: &[f64],
    curr: &[f64],
    vel: &[f64],
    next: &mut [f64],
    dims: FieldDims,
    region: PlaneRange,
    coeffs: &StencilCoeffs,
) -> Result<()> {
    const R: usize = STENCIL_RADIUS;
    if region.is_empty() {
        return Ok(());
    }
    if region.start < R || region.end + R > dims.planes {
        return Err(Error::RegionOutOfBounds {
            lo: region.start,
            hi: region.end,
            planes: dims.planes,
            radius: R,
        });
    }
    let n = dims.len();
    if prev.len() < n || curr.len() < n || vel.len() < n || next.len() < n {
        return Err(Error::Config(format!(
            "field buffers shorter than {n} elements for dims {dims:?}"
        )));
    }
    if dims.nx < 2 * R + 1 || dims.ny < 2 * R + 1 {
        return Ok(());
    }

    let c = &coeffs.axis;
    let center = 3.0 * c[0];
    let sx = 1isize;
    let sy = dims.nx as isize;
    let sz = dims.plane_elems() as isize;
    let dt = coeffs.dt;

    for z in region.as_range() {
        for y in R..dims.ny - R {
            let row = dims.index(0, y, z);
            for x in R..dims.nx - R {
                let i = row + x;
                let at = |off: isize| curr[(i as isize + off) as usize];
                let mut lap = 0.0;
                for m in (1..=R).rev() {
                    lap += c[m] * at(-(m as isize) * sx);
                }
                lap += center * curr[i];
                for m in 1..=R {
                    lap += c[m] * at(m as isize * sx);
                }
                for stride in [sy, sz] {
                    for m in (1..=R).rev() {
                        lap += c[m] * at(-(m as isize) * stride);
                    }
                    for m in 1..=R {
                        lap += c[m] * at(m as isize * stride);
                    }
                }
                let vdt = vel[i] * dt;
                next[i] = 2.0 * curr[i] - prev[i] + vdt * vdt * lap;
            }
        }
    }
    Ok(())
}

/// Host-resident state of the acoustic model.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveState {
    pub prev: Field,
    pub curr: Field,
    pub vel: Field,
}

impl WaveState {
    pub fn max_velocity(&self) -> f64 {
        self.vel.data.iter().copied().fold(0.0, f64::max)
    }

    /// Advances the whole interior by `steps`, rotating the three pressure roles.
    pub fn advance(&mut self, coeffs: &StencilCoeffs, steps: usize) -> Result<()> {
        let dims = self.curr.dims;
        let interior = PlaneRange::new(STENCIL_RADIUS, dims.planes - STENCIL_RADIUS);
        let mut scratch = Field::zeros(dims);
        for _ in 0..steps {
            step(
                &self.prev.data,
                &self.curr.data,
                &self.vel.data,
                &mut scratch.data,
                dims,
                interior,
                coeffs,
            )?;
            std::mem::swap(&mut self.prev, &mut self.curr);
            std::mem::swap(&mut self.curr, &mut scratch);
        }
        Ok(())
    }

    pub fn checksum(&self) -> Checksum {
        Checksum::of(&self.curr)
    }
}

/// Sum and sum of squares over a field's allocated array in raster order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Checksum {
    pub sum: f64,
    pub sum_sq: f64,
}

impl Checksum {
    pub fn of(field: &Field) -> Self {
        let (sum, sum_sq) = field
            .data
            .iter()
            .fold((0.0, 0.0), |(s, q), v| (s + v, q + v * v));
        Self { sum, sum_sq }
    }

    pub fn bitwise_eq(&self, other: &Checksum) -> bool {
        self.sum.to_bits() == other.sum.to_bits() && self.sum_sq.to_bits() == other.sum_sq.to_bits()
    }
}

/// Initial condition; halo cells are always zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Initializer {
    /// Centered Gaussian at rest with unit velocity everywhere.
    GaussianPulse { sigma_fraction: f64 },
    /// Uniform pressure in `[-1, 1)` and velocity in `[0.5, 1)`.
    Random { seed: u64 },
}

impl Default for Initializer {
    fn default() -> Self {
        Self::GaussianPulse {
            sigma_fraction: 0.1,
        }
    }
}

impl Initializer {
    pub fn build(&self, grid: &GridSpec) -> WaveState {
        let dims = FieldDims::of_grid(grid);
        let r = grid.halo_radius;
        let mut curr = Field::zeros(dims);
        let mut vel = Field::zeros(dims);
        match *self {
            Self::GaussianPulse { sigma_fraction } => {
                let sigma = (sigma_fraction * grid.nx.min(grid.ny).min(grid.nz) as f64).max(1.0);
                let center = |n: usize| (n as f64 - 1.0) / 2.0;
                let (cx, cy, cz) = (center(grid.nx), center(grid.ny), center(grid.nz));
                for z in 0..grid.nz {
                    for y in 0..grid.ny {
                        for x in 0..grid.nx {
                            let d2 = (x as f64 - cx).powi(2)
                                + (y as f64 - cy).powi(2)
                                + (z as f64 - cz).powi(2);
                            let i = dims.index(x + r, y + r, z + r);
                            curr.data[i] = (-d2 / (2.0 * sigma * sigma)).exp();
                            vel.data[i] = 1.0;
                        }
                    }
                }
                // boundary cells carry the velocity too; they are never updated
                for v in vel.data.iter_mut() {
                    *v = 1.0;
                }
            }
            Self::Random { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                for z in 0..grid.nz {
                    for y in 0..grid.ny {
                        for x in 0..grid.nx {
                            let i = dims.index(x + r, y + r, z + r);
                            curr.data[i] = rng.random_range(-1.0..1.0);
                            vel.data[i] = rng.random_range(0.5..1.0);
                        }
                    }
                }
            }
        }
        let prev = curr.clone();
        WaveState { prev, curr, vel }
    }
}

#[derive(Debug, Clone)]
pub struct InCoreRun {
    pub state: WaveState,
    pub checksum: Checksum,
}

/// Reference run of `steps` full-interior updates.
pub fn run_in_core(
    grid: &GridSpec,
    coeffs: &StencilCoeffs,
    steps: usize,
    init: &Initializer,
) -> Result<InCoreRun> {
    if grid.halo_radius != STENCIL_RADIUS {
        return Err(Error::Config(format!(
            "the 25-point stencil needs halo radius {STENCIL_RADIUS}, grid has {}",
            grid.halo_radius
        )));
    }
    let mut state = init.build(grid);
    state.advance(coeffs, steps)?;
    let checksum = state.checksum();
    Ok(InCoreRun { state, checksum })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_dims(planes: usize) -> FieldDims {
        FieldDims {
            nx: 11,
            ny: 10,
            planes,
        }
    }

    #[test]
    fn coefficients_match_known_rationals() {
        let c = coefficients_8th_order();
        let expected = [-205.0 / 72.0, 8.0 / 5.0, -1.0 / 5.0, 8.0 / 315.0, -1.0 / 560.0];
        for (a, b) in c.axis.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15, "{a} vs {b}");
        }
        assert!(c.constant_residual().abs() < 1e-12);
    }

    #[test]
    fn reproduces_second_derivative_of_square() {
        let c = coefficients_8th_order();
        for x0 in [-3.0f64, 0.0, 2.5, 17.0] {
            let f = |x: f64| x * x;
            let mut d2 = c.axis[0] * f(x0);
            for m in 1..=4 {
                d2 += c.axis[m] * (f(x0 - m as f64) + f(x0 + m as f64));
            }
            assert!((d2 - 2.0).abs() / 2.0 < 1e-9, "x0={x0}: {d2}");
        }
    }

    #[test]
    fn eighth_order_convergence_on_sine() {
        let c = coefficients_8th_order();
        let err = |h: f64| {
            let x0 = 0.7f64;
            let mut d2 = c.axis[0] * x0.sin();
            for m in 1..=4 {
                let o = m as f64 * h;
                d2 += c.axis[m] * ((x0 - o).sin() + (x0 + o).sin());
            }
            (d2 / (h * h) + x0.sin()).abs()
        };
        let (e1, e2) = (err(0.4), err(0.2));
        let order = (e1 / e2).log2();
        assert!((order - 8.0).abs() < 0.5, "observed order {order}");
    }

    #[test]
    fn constant_field_is_stationary() {
        let dims = small_dims(12);
        let c = coefficients_8th_order();
        let p = vec![2.5; dims.len()];
        let v = vec![1.3; dims.len()];
        let mut out = vec![0.0; dims.len()];
        step(&p, &p, &v, &mut out, dims, PlaneRange::new(4, 8), &c).unwrap();
        for z in 4..8 {
            for y in 4..6 {
                for x in 4..7 {
                    let got = out[dims.index(x, y, z)];
                    assert!((got - 2.5).abs() < 1e-12, "{got}");
                }
            }
        }
    }

    #[test]
    fn zero_fields_stay_zero() {
        let dims = small_dims(9);
        let z = vec![0.0; dims.len()];
        let mut out = vec![0.0; dims.len()];
        step(&z, &z, &z, &mut out, dims, PlaneRange::new(4, 5), &coefficients_8th_order())
            .unwrap();
        assert!(out.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn impulse_matches_direct_sum() {
        let dims = FieldDims {
            nx: 9,
            ny: 9,
            planes: 9,
        };
        let mut c = coefficients_8th_order();
        c.dt = 1.0;
        let mut curr = vec![0.0; dims.len()];
        let center = dims.index(4, 4, 4);
        curr[center] = 1.0;
        let prev = vec![0.0; dims.len()];
        let vel = vec![1.0; dims.len()];
        let mut out = vec![0.0; dims.len()];
        step(&prev, &curr, &vel, &mut out, dims, PlaneRange::new(4, 5), &c).unwrap();

        // independent 25-term dot product at the center
        let mut terms = vec![(0isize, 0isize, 0isize, 3.0 * c.axis[0])];
        for m in 1..=4isize {
            for s in [-m, m] {
                let w = c.axis[m as usize];
                terms.push((s, 0, 0, w));
                terms.push((0, s, 0, w));
                terms.push((0, 0, s, w));
            }
        }
        assert_eq!(terms.len(), 25);
        let lap: f64 = terms
            .iter()
            .map(|&(dx, dy, dz, w)| {
                let i = dims.index(
                    (4 + dx) as usize,
                    (4 + dy) as usize,
                    (4 + dz) as usize,
                );
                w * curr[i]
            })
            .sum();
        let expected = 2.0 * 1.0 - 0.0 + lap;
        assert!((out[center] - expected).abs() < 1e-14);
        assert!((out[center] - (2.0 + 3.0 * c.axis[0])).abs() < 1e-14);
    }

    #[test]
    fn rejects_out_of_bounds_region() {
        let dims = small_dims(10);
        let z = vec![0.0; dims.len()];
        let mut out = vec![0.0; dims.len()];
        let c = coefficients_8th_order();
        assert!(matches!(
            step(&z, &z, &z, &mut out, dims, PlaneRange::new(3, 6), &c),
            Err(Error::RegionOutOfBounds { .. })
        ));
        assert!(step(&z, &z, &z, &mut out, dims, PlaneRange::new(4, 7), &c).is_err());
        assert!(step(&z, &z, &z, &mut out, dims, PlaneRange::new(4, 6), &c).is_ok());
    }

    #[test]
    fn touches_only_the_region() {
        let grid = GridSpec::new(6, 5, 12, 4).unwrap();
        let s = Initializer::Random { seed: 7 }.build(&grid);
        let dims = s.curr.dims;
        let guard = -123.0;
        let mut out = vec![guard; dims.len()];
        let region = PlaneRange::new(6, 9);
        step(
            &s.prev.data,
            &s.curr.data,
            &s.vel.data,
            &mut out,
            dims,
            region,
            &coefficients_8th_order(),
        )
        .unwrap();
        for z in 0..dims.planes {
            for y in 0..dims.ny {
                for x in 0..dims.nx {
                    let inside = region.contains(z)
                        && (4..dims.ny - 4).contains(&y)
                        && (4..dims.nx - 4).contains(&x);
                    let v = out[dims.index(x, y, z)];
                    assert_eq!(inside, v.to_bits() != guard.to_bits(), "({x},{y},{z})");
                }
            }
        }
    }

    #[test]
    fn translation_equivariant_in_z() {
        let grid = GridSpec::new(5, 5, 14, 4).unwrap();
        let s = Initializer::Random { seed: 3 }.build(&grid);
        let dims = s.curr.dims;
        let p = dims.plane_elems();
        let shift = |f: &[f64]| {
            let mut g = vec![0.0; f.len()];
            g[p..].copy_from_slice(&f[..f.len() - p]);
            g
        };
        let c = coefficients_8th_order();
        let region = PlaneRange::new(6, 12);
        let mut a = vec![0.0; dims.len()];
        step(&s.prev.data, &s.curr.data, &s.vel.data, &mut a, dims, region, &c).unwrap();
        let (sp, sc, sv) = (shift(&s.prev.data), shift(&s.curr.data), shift(&s.vel.data));
        let mut b = vec![0.0; dims.len()];
        step(&sp, &sc, &sv, &mut b, dims, PlaneRange::new(7, 13), &c).unwrap();
        for z in 6..12 {
            assert_eq!(
                &a[z * p..(z + 1) * p].iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                &b[(z + 1) * p..(z + 2) * p].iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            );
        }
    }

    #[test]
    fn zero_steps_is_identity_and_runs_are_deterministic() {
        let grid = GridSpec::cubic(12, 4).unwrap();
        let init = Initializer::default();
        let c = coefficients_8th_order();
        let r0 = run_in_core(&grid, &c, 0, &init).unwrap();
        assert_eq!(r0.state, init.build(&grid));
        let a = run_in_core(&grid, &c, 5, &init).unwrap();
        let b = run_in_core(&grid, &c, 5, &init).unwrap();
        assert!(a.checksum.bitwise_eq(&b.checksum));
        assert!(a.state.curr.bitwise_eq(&b.state.curr));
    }

    #[test]
    fn wrong_radius_rejected() {
        let grid = GridSpec::cubic(12, 2).unwrap();
        assert!(run_in_core(&grid, &coefficients_8th_order(), 1, &Initializer::default()).is_err());
    }
}
