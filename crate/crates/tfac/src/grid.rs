//! Periodic square-grid fields, the five-point Laplacian and discrete norms.
//!
//! Fields are `M1×M1` row-major with periodic index wraparound and no ghost
//! cells. Reductions use compensated (Neumaier) summation so that identity
//! tests stay near machine precision on large grids.

use std::io::{Read, Write};

use crate::error::{Error, Result};

/// Geometry of the periodic square `[0, L)²` sampled on `M1×M1` points with
/// spacing `h = L/M1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    m1: usize,
    len: f64,
    h: f64,
}

impl GridSpec {
    pub fn new(m1: usize, len: f64) -> Result<Self> {
        if m1 < 2 {
            return Err(Error::invalid("grid needs at least 2 points per side"));
        }
        if !(len > 0.0) {
            return Err(Error::invalid("domain length must be positive"));
        }
        Ok(GridSpec {
            m1,
            len,
            h: len / m1 as f64,
        })
    }

    pub fn m1(&self) -> usize {
        self.m1
    }

    pub fn len(&self) -> f64 {
        self.len
    }

    pub fn spacing(&self) -> f64 {
        self.h
    }

    pub fn num_points(&self) -> usize {
        self.m1 * self.m1
    }

    /// Coordinate of index `i` along either axis.
    pub fn coord(&self, i: usize) -> f64 {
        self.h * i as f64
    }
}

/// Real field on a periodic grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    spec: GridSpec,
    values: Vec<f64>,
}

impl GridField {
    pub fn zeros(spec: GridSpec) -> Self {
        GridField {
            spec,
            values: vec![0.0; spec.num_points()],
        }
    }

    pub fn constant(spec: GridSpec, c: f64) -> Self {
        GridField {
            spec,
            values: vec![c; spec.num_points()],
        }
    }

    /// Samples `f(x, y)` at the grid points.
    pub fn from_fn(spec: GridSpec, f: impl Fn(f64, f64) -> f64) -> Self {
        let m = spec.m1();
        let mut values = Vec::with_capacity(m * m);
        for i in 0..m {
            let x = spec.coord(i);
            for j in 0..m {
                values.push(f(x, spec.coord(j)));
            }
        }
        GridField { spec, values }
    }

    pub fn from_values(spec: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != spec.num_points() {
            return Err(Error::GridMismatch(format!(
                "expected {} values, got {}",
                spec.num_points(),
                values.len()
            )));
        }
        Ok(GridField { spec, values })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.spec.m1 + j]
    }

    /// Five-point periodic Laplacian
    /// `(u_{i+1,j} + u_{i−1,j} + u_{i,j+1} + u_{i,j−1} − 4 u_{i,j}) / h²`.
    pub fn laplacian(&self) -> GridField {
        let mut out = GridField::zeros(self.spec);
        self.laplacian_into(&mut out);
        out
    }

    pub fn laplacian_into(&self, out: &mut GridField) {
        let m = self.spec.m1;
        let inv_h2 = 1.0 / (self.spec.h * self.spec.h);
        let u = &self.values;
        let v = &mut out.values;
        for i in 0..m {
            let up = if i == 0 { m - 1 } else { i - 1 } * m;
            let dn = if i == m - 1 { 0 } else { i + 1 } * m;
            let row = i * m;
            for j in 0..m {
                let lf = row + if j == 0 { m - 1 } else { j - 1 };
                let rt = row + if j == m - 1 { 0 } else { j + 1 };
                v[row + j] =
                    (u[up + j] + u[dn + j] + u[lf] + u[rt] - 4.0 * u[row + j]) * inv_h2;
            }
        }
    }

    /// Discrete inner product `h² Σ u_{ij} w_{ij}`.
    pub fn inner_h(&self, other: &GridField) -> Result<f64> {
        if self.spec != other.spec {
            return Err(Error::GridMismatch("inner product across grids".into()));
        }
        let s = neumaier_sum(
            self.values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a * b),
        );
        Ok(self.spec.h * self.spec.h * s)
    }

    pub fn norm_inf(&self) -> f64 {
        self.values.iter().fold(0.0, |m, &x| m.max(x.abs()))
    }

    pub fn norm_l2h(&self) -> f64 {
        let s = neumaier_sum(self.values.iter().map(|a| a * a));
        self.spec.h * (s.max(0.0)).sqrt()
    }

    /// `self += scale * other`, matching specs assumed.
    pub fn add_scaled(&mut self, other: &GridField, scale: f64) {
        debug_assert_eq!(self.spec, other.spec);
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a = b.mul_add(scale, *a);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for a in self.values.iter_mut() {
            *a *= s;
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> GridField {
        GridField {
            spec: self.spec,
            values: self.values.iter().map(|&x| f(x)).collect(),
        }
    }

    /// CSV rows `i,j,value`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "i,j,value")?;
        let m = self.spec.m1;
        for i in 0..m {
            for j in 0..m {
                writeln!(w, "{},{},{:.17e}", i, j, self.values[i * m + j])?;
            }
        }
        Ok(())
    }

    /// Flat little-endian binary snapshot: a 16-byte header (`u64` M1,
    /// `f64` L) followed by the M1² values row-major.
    pub fn write_binary<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(&(self.spec.m1 as u64).to_le_bytes())?;
        w.write_all(&self.spec.len.to_le_bytes())?;
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<GridField> {
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8)?;
        let m1 = u64::from_le_bytes(b8) as usize;
        r.read_exact(&mut b8)?;
        let len = f64::from_le_bytes(b8);
        let spec = GridSpec::new(m1, len)?;
        let mut values = vec![0.0; spec.num_points()];
        for v in values.iter_mut() {
            r.read_exact(&mut b8)?;
            *v = f64::from_le_bytes(b8);
        }
        Ok(GridField { spec, values })
    }
}

/// Compensated summation (Neumaier variant).
pub(crate) fn neumaier_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for x in values {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Dense `M×M` matrix of the periodic five-point Laplacian, for the small
/// matrix-property tests only.
pub fn dense_laplacian(spec: GridSpec) -> Result<Vec<Vec<f64>>> {
    let m1 = spec.m1();
    if m1 > 16 {
        return Err(Error::invalid(
            "dense Laplacian helper is limited to M1 <= 16",
        ));
    }
    let m = m1 * m1;
    let inv_h2 = 1.0 / (spec.spacing() * spec.spacing());
    let mut mat = vec![vec![0.0; m]; m];
    for i in 0..m1 {
        for j in 0..m1 {
            let r = i * m1 + j;
            mat[r][r] = -4.0 * inv_h2;
            let up = (if i == 0 { m1 - 1 } else { i - 1 }) * m1 + j;
            let dn = (if i == m1 - 1 { 0 } else { i + 1 }) * m1 + j;
            let lf = i * m1 + if j == 0 { m1 - 1 } else { j - 1 };
            let rt = i * m1 + if j == m1 - 1 { 0 } else { j + 1 };
            for c in [up, dn, lf, rt] {
                mat[r][c] += inv_h2;
            }
        }
    }
    Ok(mat)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn random_field(spec: GridSpec, seed: u64, amp: f64) -> GridField {
        let mut rng = SplitMix64::new(seed);
        GridField::from_values(
            spec,
            (0..spec.num_points())
                .map(|_| rng.next_symmetric(amp))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn laplacian_of_constant_is_zero() {
        let spec = GridSpec::new(8, 1.0).unwrap();
        let lap = GridField::constant(spec, 3.7).laplacian();
        assert_eq!(lap.norm_inf(), 0.0);
    }

    #[test]
    fn laplacian_eigenmode() {
        // For L=1, M1=4 the mode sin(2πx) has eigenvalue
        // -(2 - 2cos(2πh))/h² = -32.
        let spec = GridSpec::new(4, 1.0).unwrap();
        let u = GridField::from_fn(spec, |x, _| (2.0 * PI * x).sin());
        let lap = u.laplacian();
        for (l, v) in lap.values().iter().zip(u.values()) {
            assert!((l - (-32.0) * v).abs() < 1e-12);
        }
    }

    #[test]
    fn laplacian_symmetry() {
        let spec = GridSpec::new(12, 2.0).unwrap();
        let u = random_field(spec, 1, 1.0);
        let w = random_field(spec, 2, 1.0);
        let a = u.laplacian().inner_h(&w).unwrap();
        let b = u.inner_h(&w.laplacian()).unwrap();
        assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
    }

    #[test]
    fn laplacian_negative_semidefinite() {
        let spec = GridSpec::new(12, 2.0).unwrap();
        for seed in 0..5 {
            let u = random_field(spec, seed, 2.0);
            let quad = u.inner_h(&u.laplacian()).unwrap();
            let norm = u.inner_h(&u).unwrap();
            assert!(quad <= 1e-12 * norm);
        }
    }

    #[test]
    fn norms_and_inner() {
        let spec = GridSpec::new(10, 1.0).unwrap();
        let one = GridField::constant(spec, 1.0);
        assert!((one.norm_l2h() - 1.0).abs() < 1e-14);
        let u = random_field(spec, 3, 1.0);
        assert!((u.map(|x| -2.0 * x).norm_inf() - 2.0 * u.norm_inf()).abs() < 1e-15);
        let w = random_field(spec, 4, 1.0);
        assert_eq!(u.inner_h(&w).unwrap(), w.inner_h(&u).unwrap());
    }

    #[test]
    fn inner_rejects_mismatched_specs() {
        let a = GridField::zeros(GridSpec::new(4, 1.0).unwrap());
        let b = GridField::zeros(GridSpec::new(8, 1.0).unwrap());
        assert!(a.inner_h(&b).is_err());
    }

    #[test]
    fn dense_stencil_row_structure() {
        // Diagonal equals minus the sum of absolute off-diagonal entries.
        let spec = GridSpec::new(5, 1.0).unwrap();
        let m = dense_laplacian(spec).unwrap();
        for (r, row) in m.iter().enumerate() {
            let off: f64 = row
                .iter()
                .enumerate()
                .filter(|(c, _)| *c != r)
                .map(|(_, v)| v.abs())
                .sum();
            assert!((row[r] + off).abs() < 1e-9);
            // Row sums vanish for the periodic stencil.
            let s: f64 = row.iter().sum();
            assert!(s.abs() < 1e-9);
        }
        assert!(dense_laplacian(GridSpec::new(32, 1.0).unwrap()).is_err());
    }

    #[test]
    fn dense_matches_matrix_free() {
        let spec = GridSpec::new(6, 1.5).unwrap();
        let m = dense_laplacian(spec).unwrap();
        let u = random_field(spec, 9, 1.0);
        let lap = u.laplacian();
        for r in 0..spec.num_points() {
            let dense: f64 = m[r]
                .iter()
                .zip(u.values())
                .map(|(a, b)| a * b)
                .sum();
            assert!((dense - lap.values()[r]).abs() < 1e-9);
        }
    }

    #[test]
    fn binary_round_trip() {
        let spec = GridSpec::new(7, 2.5).unwrap();
        let u = random_field(spec, 11, 3.0);
        let mut buf = Vec::new();
        u.write_binary(&mut buf).unwrap();
        assert_eq!(buf.len(), 16 + 8 * spec.num_points());
        let v = GridField::read_binary(&buf[..]).unwrap();
        assert_eq!(u, v);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn shifted_operator_norm_bounds(seed in 0u64..10_000, a in 0.01f64..50.0, c in 0.01f64..10.0) {
            // |(aI - D_h)V|_inf >= a |V|_inf, and the cubic variant holds with
            // the U factor taken at the index attaining max |V|.
            let spec = GridSpec::new(8, 1.0).unwrap();
            let v = random_field(spec, seed, 2.0);
            let u = random_field(spec, seed ^ 0x5555, 2.0);
            let lap = v.laplacian();

            let mut shifted = v.clone();
            shifted.scale(a);
            shifted.add_scaled(&lap, -1.0);
            prop_assert!(shifted.norm_inf() >= a * v.norm_inf() * (1.0 - 1e-13));

            let i_star = v
                .values()
                .iter()
                .enumerate()
                .max_by(|x, y| x.1.abs().total_cmp(&y.1.abs()))
                .unwrap()
                .0;
            let mut full = shifted.clone();
            for (f, (&uu, &vv)) in full
                .values_mut()
                .iter_mut()
                .zip(u.values().iter().zip(v.values()))
            {
                *f += uu * uu * vv + c * vv * vv * vv;
            }
            let vn = v.norm_inf();
            let u_at = u.values()[i_star];
            let lower = a * vn + u_at * u_at * vn + c * vn * vn * vn;
            prop_assert!(full.norm_inf() >= lower * (1.0 - 1e-13),
                "norm {} < bound {}", full.norm_inf(), lower);
        }

        #[test]
        fn inner_h_symmetry(seed in 0u64..1000) {
            let spec = GridSpec::new(9, 1.0).unwrap();
            let u = random_field(spec, seed, 1.0);
            let w = random_field(spec, seed ^ 0xAA, 1.0);
            prop_assert_eq!(u.inner_h(&w).unwrap(), w.inner_h(&u).unwrap());
        }
    }
}
