//! Cylindrical velocity mesh and scalar fields on it.
//!
//! The mesh is a tensor product of Gauss radii on (0, v_max_perp], uniform
//! angles, and Gauss parallel velocities on [-v_max_par, v_max_par]. The
//! radial and parallel rules are orthogonal w.r.t. the Maxwellian-weighted
//! measure (r e^{-r^2/2} dr and e^{-z^2/2} dz), so Gaussian-profile moments
//! are integrated to truncation accuracy already at small node counts.
//! Nodes are stored ring-major: all angles of one
//! (radius, parallel) ring are contiguous. Rotations about the parallel axis
//! by grid angles are index permutations, and the rotation generator acts as
//! an exact spectral derivative on each ring, so the continuous operator
//! identities (projector property of the cylindrical average, skew-adjointness
//! of the generator, ...) hold discretely to rounding error.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use crate::angular::AngularBasis;
use crate::error::{CoreError, Result};
use crate::par;
use crate::quadrature::gauss_weighted;

/// Rings whose Maxwellian weight falls below this are dropped at build time;
/// it keeps f^2/M sums finite for any stored field.
pub const MAXWELLIAN_FLOOR: f64 = 1e-300;

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

/// One (radius, parallel velocity) ring of the mesh.
#[derive(Debug, Clone, Copy)]
pub struct Ring {
    pub radius: f64,
    pub z: f64,
    /// Quadrature weight of each node on this ring (radial weight x radius
    /// Jacobian x angle spacing x parallel weight).
    pub node_weight: f64,
    /// Maxwellian value on this ring.
    pub maxwellian: f64,
}

#[derive(Debug)]
pub struct VelocityGrid {
    n_radial: usize,
    n_angle: usize,
    n_parallel: usize,
    v_max_perp: f64,
    v_max_par: f64,
    rings: Vec<Ring>,
    nodes: Vec<[f64; 3]>,
    weights: Vec<f64>,
    maxwellian: Vec<f64>,
    mass_m: f64,
    deficit: f64,
    basis: AngularBasis,
    /// Per-ring matrix of the rotation generator (v x e_z) . grad_v.
    generator: Vec<f64>,
}

impl VelocityGrid {
    /// Build the mesh. Counts must be at least 2 and the truncation radii
    /// positive. The mass deficit 1 - sum(w M) is recorded, never hidden.
    pub fn build(
        n_radial: usize,
        n_angle: usize,
        n_parallel: usize,
        v_max_perp: f64,
        v_max_par: f64,
    ) -> Result<Arc<Self>> {
        if n_radial < 2 || n_angle < 2 || n_parallel < 2 {
            return Err(CoreError::Grid(format!(
                "grid sizes must be >= 2, got ({n_radial}, {n_angle}, {n_parallel})"
            )));
        }
        if !(v_max_perp > 0.0) || !(v_max_par > 0.0) {
            return Err(CoreError::Grid(format!(
                "velocity truncations must be positive, got ({v_max_perp}, {v_max_par})"
            )));
        }

        // Gauss rules for the Maxwellian-weighted measures; the plain-measure
        // node weight is recovered by dividing the Gaussian factor back out,
        // with the radial Jacobian r kept inside the radial rule.
        let (xr, wr) = gauss_weighted(n_radial, 0.0, v_max_perp, |r| r * (-0.5 * r * r).exp(), false);
        let (xz, wz) = gauss_weighted(
            n_parallel,
            -v_max_par,
            v_max_par,
            |z| (-0.5 * z * z).exp(),
            true,
        );
        let dtheta = TWO_PI / n_angle as f64;
        let norm = (TWO_PI).powf(-1.5);

        let mut rings = Vec::with_capacity(n_radial * n_parallel);
        for ir in 0..n_radial {
            let r = xr[ir];
            let w_r = wr[ir] * (0.5 * r * r).exp();
            for iz in 0..n_parallel {
                let z = xz[iz];
                let w_z = wz[iz] * (0.5 * z * z).exp();
                let m = norm * (-0.5 * (r * r + z * z)).exp();
                let node_weight = w_r * dtheta * w_z;
                if m < MAXWELLIAN_FLOOR || !node_weight.is_finite() || node_weight <= 0.0 {
                    continue;
                }
                rings.push(Ring {
                    radius: r,
                    z,
                    node_weight,
                    maxwellian: m,
                });
            }
        }
        if rings.is_empty() {
            return Err(CoreError::Grid(
                "all rings fall below the Maxwellian floor; reduce the truncation radii".into(),
            ));
        }

        let n_nodes = rings.len() * n_angle;
        let mut nodes = Vec::with_capacity(n_nodes);
        let mut weights = Vec::with_capacity(n_nodes);
        let mut maxwellian = Vec::with_capacity(n_nodes);
        for ring in &rings {
            for k in 0..n_angle {
                let theta = dtheta * k as f64;
                nodes.push([ring.radius * theta.cos(), ring.radius * theta.sin(), ring.z]);
                weights.push(ring.node_weight);
                maxwellian.push(ring.maxwellian);
            }
        }
        let mass_m: f64 = weights
            .iter()
            .zip(&maxwellian)
            .map(|(w, m)| w * m)
            .sum();
        let basis = AngularBasis::new(n_angle);
        let generator = basis.generator_matrix();

        Ok(Arc::new(Self {
            n_radial,
            n_angle,
            n_parallel,
            v_max_perp,
            v_max_par,
            rings,
            nodes,
            weights,
            maxwellian,
            mass_m,
            deficit: 1.0 - mass_m,
            basis,
            generator,
        }))
    }

    pub fn n_radial(&self) -> usize {
        self.n_radial
    }
    pub fn n_angle(&self) -> usize {
        self.n_angle
    }
    pub fn n_parallel(&self) -> usize {
        self.n_parallel
    }
    pub fn v_max_perp(&self) -> f64 {
        self.v_max_perp
    }
    pub fn v_max_par(&self) -> f64 {
        self.v_max_par
    }
    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }
    pub fn n_rings(&self) -> usize {
        self.rings.len()
    }
    pub fn rings(&self) -> &[Ring] {
        &self.rings
    }
    pub fn nodes(&self) -> &[[f64; 3]] {
        &self.nodes
    }
    pub fn node(&self, i: usize) -> [f64; 3] {
        self.nodes[i]
    }
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }
    pub fn maxwellian_values(&self) -> &[f64] {
        &self.maxwellian
    }
    pub fn maxwellian_at(&self, i: usize) -> f64 {
        self.maxwellian[i]
    }
    /// Discrete mass of the Maxwellian, sum(w M); equals 1 minus the deficit.
    pub fn mass_m(&self) -> f64 {
        self.mass_m
    }
    /// Truncation + quadrature mass deficit 1 - sum(w M).
    pub fn deficit(&self) -> f64 {
        self.deficit
    }
    pub fn basis(&self) -> &AngularBasis {
        &self.basis
    }

    pub fn ring_of(&self, node: usize) -> usize {
        node / self.n_angle
    }
    pub fn angle_index(&self, node: usize) -> usize {
        node % self.n_angle
    }
    pub fn node_index(&self, ring: usize, angle: usize) -> usize {
        ring * self.n_angle + angle
    }

    /// Index of R(theta_k) v_i on the grid (rotations by grid angles permute
    /// nodes within a ring).
    pub fn rotated_index(&self, node: usize, k: usize) -> usize {
        let n = self.n_angle;
        let ring = node / n;
        let a = node % n;
        ring * n + (a + n - (k % n)) % n
    }

    // ---- ring-wise spectral operations on raw value slices ----

    pub fn rotate_slice(&self, vals: &[f64], tau: f64, out: &mut [f64]) {
        let n = self.n_angle;
        par::for_each_chunk_mut(out, n, |ring, chunk| {
            self.basis.rotate(&vals[ring * n..(ring + 1) * n], chunk, tau);
        });
    }

    pub fn cyl_average_slice(&self, vals: &[f64], out: &mut [f64]) {
        let n = self.n_angle;
        par::for_each_chunk_mut(out, n, |ring, chunk| {
            let mean = self.basis.mean(&vals[ring * n..(ring + 1) * n]);
            chunk.fill(mean);
        });
    }

    pub fn partial_average_slice(&self, vals: &[f64], tau: f64, out: &mut [f64]) -> Result<()> {
        if !(-1e-12..=TWO_PI + 1e-12).contains(&tau) {
            return Err(CoreError::Param(format!(
                "partial average angle must lie in [0, 2*pi], got {tau}"
            )));
        }
        let n = self.n_angle;
        par::for_each_chunk_mut(out, n, |ring, chunk| {
            self.basis
                .partial_average(&vals[ring * n..(ring + 1) * n], chunk, tau);
        });
        Ok(())
    }

    pub fn gyration_slice(&self, vals: &[f64], out: &mut [f64]) {
        let n = self.n_angle;
        let g = &self.generator;
        par::for_each_chunk_mut(out, n, |ring, chunk| {
            let src = &vals[ring * n..(ring + 1) * n];
            for k in 0..n {
                let mut acc = 0.0;
                for l in 0..n {
                    acc += g[k * n + l] * src[l];
                }
                chunk[k] = acc;
            }
        });
    }

    /// nu-weighted inverse of the rotation generator on zero-average data,
    /// ring by ring.
    pub fn a1_slice(&self, vals: &[f64], nu: &[f64], out: &mut [f64]) {
        let n = self.n_angle;
        par::for_each_chunk_mut(out, n, |ring, chunk| {
            self.basis
                .a1(&vals[ring * n..(ring + 1) * n], &nu[ring * n..(ring + 1) * n], chunk);
        });
    }

    // ---- quadrature functionals ----

    pub fn mass_of(&self, vals: &[f64]) -> f64 {
        self.weights.iter().zip(vals).map(|(w, f)| w * f).sum()
    }

    pub fn flux_of(&self, vals: &[f64]) -> [f64; 3] {
        let mut acc = [0.0; 3];
        for ((w, v), f) in self.weights.iter().zip(&self.nodes).zip(vals) {
            let wf = w * f;
            acc[0] += wf * v[0];
            acc[1] += wf * v[1];
            acc[2] += wf * v[2];
        }
        acc
    }

    /// Maxwellian-weighted inner product sum(w a b / M).
    pub fn inner_m_of(&self, a: &[f64], b: &[f64]) -> f64 {
        let w = &self.weights;
        let m = &self.maxwellian;
        (0..a.len()).map(|i| w[i] * a[i] * b[i] / m[i]).sum()
    }

    pub fn norm_m_of(&self, a: &[f64]) -> f64 {
        self.inner_m_of(a, a).sqrt()
    }
}

/// Scalar field on a velocity grid. Immutable after construction; all
/// operations return fresh distributions and are safe to run concurrently.
#[derive(Debug, Clone)]
pub struct Distribution {
    grid: Arc<VelocityGrid>,
    values: Vec<f64>,
}

/// The normalized Maxwellian equilibrium on `grid`.
pub fn maxwellian(grid: &Arc<VelocityGrid>) -> Distribution {
    Distribution {
        grid: grid.clone(),
        values: grid.maxwellian_values().to_vec(),
    }
}

impl Distribution {
    pub fn zeros(grid: &Arc<VelocityGrid>) -> Self {
        Self {
            grid: grid.clone(),
            values: vec![0.0; grid.n_nodes()],
        }
    }

    pub fn from_values(grid: &Arc<VelocityGrid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_nodes() {
            return Err(CoreError::Grid(format!(
                "value count {} does not match grid with {} nodes",
                values.len(),
                grid.n_nodes()
            )));
        }
        Ok(Self {
            grid: grid.clone(),
            values,
        })
    }

    pub fn from_fn(grid: &Arc<VelocityGrid>, f: impl Fn([f64; 3]) -> f64) -> Self {
        let values = grid.nodes().iter().map(|&v| f(v)).collect();
        Self {
            grid: grid.clone(),
            values,
        }
    }

    pub fn grid(&self) -> &Arc<VelocityGrid> {
        &self.grid
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    fn same_grid(&self, other: &Distribution) -> Result<()> {
        if Arc::ptr_eq(&self.grid, &other.grid) {
            Ok(())
        } else {
            Err(CoreError::GridMismatch)
        }
    }

    /// f(R(tau) v): rotation about the parallel axis.
    pub fn rotate(&self, tau: f64) -> Distribution {
        let mut out = vec![0.0; self.values.len()];
        self.grid.rotate_slice(&self.values, tau, &mut out);
        Distribution {
            grid: self.grid.clone(),
            values: out,
        }
    }

    /// Cylindrical average: mean over all rotations; an exact orthogonal
    /// projector on the discrete grid.
    pub fn cyl_average(&self) -> Distribution {
        let mut out = vec![0.0; self.values.len()];
        self.grid.cyl_average_slice(&self.values, &mut out);
        Distribution {
            grid: self.grid.clone(),
            values: out,
        }
    }

    /// Partial average (1/2pi) int_0^tau f(R(s) v) ds.
    pub fn partial_average(&self, tau: f64) -> Result<Distribution> {
        let mut out = vec![0.0; self.values.len()];
        self.grid
            .partial_average_slice(&self.values, tau, &mut out)?;
        Ok(Distribution {
            grid: self.grid.clone(),
            values: out,
        })
    }

    /// Rotation generator (v x e_z) . grad_v f, an exact spectral derivative
    /// in the angle.
    pub fn gyration(&self) -> Distribution {
        let mut out = vec![0.0; self.values.len()];
        self.grid.gyration_slice(&self.values, &mut out);
        Distribution {
            grid: self.grid.clone(),
            values: out,
        }
    }

    pub fn mass(&self) -> f64 {
        self.grid.mass_of(&self.values)
    }

    pub fn flux(&self) -> [f64; 3] {
        self.grid.flux_of(&self.values)
    }

    pub fn weighted_inner(&self, other: &Distribution) -> Result<f64> {
        self.same_grid(other)?;
        Ok(self.grid.inner_m_of(&self.values, &other.values))
    }

    pub fn weighted_norm(&self) -> f64 {
        self.grid.norm_m_of(&self.values)
    }

    pub fn scale(&self, s: f64) -> Distribution {
        Distribution {
            grid: self.grid.clone(),
            values: self.values.iter().map(|v| v * s).collect(),
        }
    }

    /// self + s * other. Panics on grid mismatch (programmer error).
    pub fn axpy(&self, s: f64, other: &Distribution) -> Distribution {
        self.same_grid(other).expect("axpy on mismatched grids");
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a + s * b)
            .collect();
        Distribution {
            grid: self.grid.clone(),
            values,
        }
    }

    pub fn sub(&self, other: &Distribution) -> Distribution {
        self.axpy(-1.0, other)
    }

    /// Write as CSV with columns (v_x, v_y, v_z, weight, value), one row per
    /// node in index order.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "v_x,v_y,v_z,weight,value")?;
        for (i, val) in self.values.iter().enumerate() {
            let v = self.grid.node(i);
            writeln!(
                out,
                "{:e},{:e},{:e},{:e},{:e}",
                v[0],
                v[1],
                v[2],
                self.grid.weight(i),
                val
            )?;
        }
        Ok(())
    }

    /// Read a distribution written by `write_csv` back onto `grid`. Node
    /// coordinates and weights must match the grid.
    pub fn read_csv(grid: &Arc<VelocityGrid>, path: &Path) -> Result<Distribution> {
        let file = BufReader::new(std::fs::File::open(path)?);
        let mut lines = file.lines();
        match lines.next() {
            Some(Ok(h)) if h.trim() == "v_x,v_y,v_z,weight,value" => {}
            _ => {
                return Err(CoreError::Format(
                    "distribution CSV must start with header v_x,v_y,v_z,weight,value".into(),
                ))
            }
        }
        let mut values = Vec::with_capacity(grid.n_nodes());
        for (row, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<f64> = line
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|_| CoreError::Format(format!("bad number in CSV row {row}")))
                })
                .collect::<Result<_>>()?;
            if fields.len() != 5 {
                return Err(CoreError::Format(format!(
                    "CSV row {row} has {} fields, expected 5",
                    fields.len()
                )));
            }
            let i = values.len();
            if i >= grid.n_nodes() {
                return Err(CoreError::Format("CSV has more rows than grid nodes".into()));
            }
            let v = grid.node(i);
            let ok = (0..3).all(|c| (fields[c] - v[c]).abs() <= 1e-9 * (1.0 + v[c].abs()))
                && (fields[3] - grid.weight(i)).abs() <= 1e-9 * grid.weight(i);
            if !ok {
                return Err(CoreError::Format(format!(
                    "CSV row {row} does not match grid node {i}"
                )));
            }
            values.push(fields[4]);
        }
        if values.len() != grid.n_nodes() {
            return Err(CoreError::Format(format!(
                "CSV has {} rows, grid has {} nodes",
                values.len(),
                grid.n_nodes()
            )));
        }
        Distribution::from_values(grid, values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn default_grid() -> Arc<VelocityGrid> {
        VelocityGrid::build(8, 16, 16, 6.0, 6.0).unwrap()
    }

    fn random_distribution(grid: &Arc<VelocityGrid>, rng: &mut ChaCha8Rng) -> Distribution {
        let vals: Vec<f64> = (0..grid.n_nodes()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Distribution::from_values(grid, vals).unwrap()
    }

    #[test]
    fn build_rejects_bad_sizes() {
        assert!(VelocityGrid::build(0, 16, 16, 6.0, 6.0).is_err());
        assert!(VelocityGrid::build(8, 1, 16, 6.0, 6.0).is_err());
        assert!(VelocityGrid::build(8, 16, 16, -1.0, 6.0).is_err());
    }

    #[test]
    fn default_grid_deficit_is_small_and_shrinks_with_domain() {
        let g = default_grid();
        assert_eq!(g.n_nodes(), 8 * 16 * 16);
        assert!(g.deficit().abs() < 1e-6, "deficit = {}", g.deficit());
        // refining the truncation radius reduces the truncation part
        let g8 = VelocityGrid::build(12, 16, 24, 8.0, 8.0).unwrap();
        assert!(g8.deficit().abs() < g.deficit().abs());
    }

    #[test]
    fn coarse_grid_is_legal_with_large_deficit() {
        let g = VelocityGrid::build(2, 2, 2, 1.0, 1.0).unwrap();
        assert_eq!(g.n_nodes(), 8);
        assert!(g.deficit() > 0.5);
        assert!(g.weights().iter().all(|&w| w > 0.0));
    }

    #[test]
    fn maxwellian_values() {
        let g = VelocityGrid::build(4, 8, 5, 3.0, 3.0).unwrap();
        let m = maxwellian(&g);
        let norm = (2.0 * std::f64::consts::PI).powf(-1.5);
        assert_relative_eq!(norm, 0.063493635934241, epsilon = 1e-12);
        for (i, &v) in m.values().iter().enumerate() {
            let x = g.node(i);
            let v2 = x[0] * x[0] + x[1] * x[1] + x[2] * x[2];
            assert_relative_eq!(v, norm * (-0.5 * v2).exp(), epsilon = 1e-14);
        }
        let g6 = default_grid();
        assert_relative_eq!(maxwellian(&g6).mass(), 1.0, epsilon = 2e-6);
    }

    #[test]
    fn rotation_identity_and_period() {
        let g = default_grid();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let f = random_distribution(&g, &mut rng);
        let same = f.rotate(0.0);
        assert_eq!(f.values(), same.values());
        let full = f.rotate(2.0 * std::f64::consts::PI);
        assert_eq!(f.values(), full.values());
    }

    #[test]
    fn quarter_turn_maps_vx_to_vy() {
        let g = default_grid();
        let m = maxwellian(&g);
        let vx_m = Distribution::from_fn(&g, |v| v[0]) ;
        let vx_m = Distribution::from_values(
            &g,
            vx_m.values()
                .iter()
                .zip(m.values())
                .map(|(a, b)| a * b)
                .collect(),
        )
        .unwrap();
        let rot = vx_m.rotate(std::f64::consts::FRAC_PI_2);
        for (i, &v) in rot.values().iter().enumerate() {
            let x = g.node(i);
            assert_relative_eq!(v, x[1] * g.maxwellian_at(i), epsilon = 1e-12, max_relative = 1e-12);
        }
    }

    #[test]
    fn cyl_average_is_projector() {
        let g = default_grid();
        let m = maxwellian(&g);
        let am = m.cyl_average();
        for (a, b) in am.values().iter().zip(m.values()) {
            // M is ring-constant; the ring mean agrees to a rounding ulp
            assert_relative_eq!(a, b, max_relative = 1e-15);
        }
        let vx_m = Distribution::from_fn(&g, |v| v[0] * (-0.25 * (v[0] * v[0] + v[1] * v[1])).exp());
        let avg = vx_m.cyl_average();
        assert!(avg.values().iter().all(|v| v.abs() < 1e-14));

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let f = random_distribution(&g, &mut rng);
        let a1 = f.cyl_average();
        let a2 = a1.cyl_average();
        let diff: f64 = a1
            .values()
            .iter()
            .zip(a2.values())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!(diff < 1e-14);
        // self-adjointness in the Maxwellian-weighted inner product
        let h = random_distribution(&g, &mut rng);
        let lhs = f.cyl_average().weighted_inner(&h).unwrap();
        let rhs = f.weighted_inner(&h.cyl_average()).unwrap();
        assert_relative_eq!(lhs, rhs, epsilon = 1e-10, max_relative = 1e-12);
    }

    #[test]
    fn partial_average_limits() {
        let g = default_grid();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = random_distribution(&g, &mut rng);
        let full = f.partial_average(2.0 * std::f64::consts::PI).unwrap();
        let avg = f.cyl_average();
        for (a, b) in full.values().iter().zip(avg.values()) {
            assert_relative_eq!(a, b, epsilon = 1e-13, max_relative = 1e-12);
        }
        let zero = f.partial_average(0.0).unwrap();
        assert!(zero.values().iter().all(|v| v.abs() < 1e-13));
        let m = maxwellian(&g);
        let half = m.partial_average(std::f64::consts::PI).unwrap();
        for (a, b) in half.values().iter().zip(m.values()) {
            assert_relative_eq!(*a, 0.5 * b, epsilon = 1e-14, max_relative = 1e-13);
        }
        assert!(f.partial_average(7.0).is_err());
    }

    #[test]
    fn gyration_kernel_and_hand_value() {
        let g = default_grid();
        let m = maxwellian(&g);
        let gm = m.gyration();
        assert!(gm.values().iter().all(|v| v.abs() < 1e-15));

        // (v_y d/dv_x - v_x d/dv_y)(v_x M) = v_y M
        let vx_m = Distribution::from_fn(&g, |v| {
            v[0] * (2.0 * std::f64::consts::PI).powf(-1.5) * (-0.5 * (v[0] * v[0] + v[1] * v[1] + v[2] * v[2])).exp()
        });
        let gv = vx_m.gyration();
        for (i, &val) in gv.values().iter().enumerate() {
            let x = g.node(i);
            assert_relative_eq!(val, x[1] * g.maxwellian_at(i), epsilon = 1e-13, max_relative = 1e-11);
        }
    }

    #[test]
    fn gyration_matches_finite_difference_of_rotations() {
        // independent derivative oracle: d/dtau f(R(tau) v) at tau = 0
        let g = default_grid();
        let f = Distribution::from_fn(&g, |v| {
            (v[0] + 0.5 * v[1] * v[1] - 0.3 * v[2]) * (-0.3 * (v[0] * v[0] + v[1] * v[1])).exp()
        });
        let h = 1e-6;
        let fd = f.rotate(h).axpy(-1.0, &f.rotate(-h)).scale(0.5 / h);
        let gy = f.gyration();
        for (a, b) in fd.values().iter().zip(gy.values()) {
            assert_relative_eq!(a, b, epsilon = 1e-8, max_relative = 1e-6);
        }
    }

    #[test]
    fn gyration_has_zero_mean_and_is_skew() {
        let g = default_grid();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..20 {
            let f = random_distribution(&g, &mut rng);
            let gf = f.gyration();
            assert!(gf.mass().abs() < 1e-13 * (1.0 + f.weighted_norm()));
            let skew = gf.weighted_inner(&f).unwrap();
            assert!(
                skew.abs() < 1e-12 * f.weighted_norm() * f.weighted_norm(),
                "skew defect {skew}"
            );
        }
    }

    #[test]
    fn average_annihilates_gyration() {
        let g = default_grid();
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let f = random_distribution(&g, &mut rng);
        let ag = f.gyration().cyl_average();
        assert!(ag.values().iter().all(|v| v.abs() < 1e-12));
        // G f = 0 iff A f = f: ring-constant fields are the kernel
        let sym = f.cyl_average();
        assert!(sym.gyration().values().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn moments_and_norms() {
        let g = default_grid();
        let m = maxwellian(&g);
        let norm2 = m.weighted_inner(&m).unwrap();
        assert_relative_eq!(norm2, g.mass_m(), epsilon = 1e-13);

        let vz_m = Distribution::from_fn(&g, |v| v[2]);
        let vz_m = Distribution::from_values(
            &g,
            vz_m.values().iter().zip(m.values()).map(|(a, b)| a * b).collect(),
        )
        .unwrap();
        assert!(vz_m.mass().abs() < 1e-15);
        let fl = vz_m.flux();
        assert_relative_eq!(fl[2], 1.0, epsilon = 1e-5);
        assert!(fl[0].abs() < 1e-15 && fl[1].abs() < 1e-15);

        let other = VelocityGrid::build(4, 8, 4, 3.0, 3.0).unwrap();
        let f2 = maxwellian(&other);
        assert!(m.weighted_inner(&f2).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let g = VelocityGrid::build(3, 4, 3, 2.0, 2.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f = random_distribution(&g, &mut rng);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.csv");
        f.write_csv(&path).unwrap();
        let back = Distribution::read_csv(&g, &path).unwrap();
        assert_eq!(f.values(), back.values());

        let other = VelocityGrid::build(3, 4, 3, 2.5, 2.0).unwrap();
        assert!(Distribution::read_csv(&other, &path).is_err());
    }

    #[test]
    fn extreme_truncation_stays_above_floor() {
        // the weighted rules keep nodes where the Maxwellian lives, so even an
        // absurd truncation radius yields a usable grid with guarded weights
        let g = VelocityGrid::build(8, 4, 8, 60.0, 60.0).unwrap();
        assert!(g.maxwellian_values().iter().all(|&m| m >= MAXWELLIAN_FLOOR));
        assert!(g.weights().iter().all(|&w| w > 0.0 && w.is_finite()));
        assert!(g.deficit().abs() < 1e-6);
    }
}
