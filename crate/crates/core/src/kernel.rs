//! Collision operators on a velocity grid.
//!
//! The full operator splits as Q(f) = Q+(f) - nu f with gain
//! Q+(f) = M(v) int sigma(v,v') f(v') dv' and collision frequency
//! nu(v) = int sigma(v,v') M(v') dv'. Gyroaveraging the cross-section in its
//! first argument gives sigma_bar, in both arguments sigma_bbar, and the
//! corresponding operators Q_bar / Q_bbar; both keep the loss coefficient
//! nu_bar = A(nu). The rotation-augmented operator is
//! Q_eta = Q - G/eta^2 with G the rotation generator, its adjoint flips the
//! sign of G. S_eta = G/eta^2 + nu is the transport part of -Q_eta; its exact
//! discrete inverse L_eta is realized ring by ring through LU factorizations
//! of the spectral generator blocks.
//!
//! On grid averages the discretization is exact: rotations by grid angles
//! permute nodes with shared weights, so mass conservation, self-adjointness
//! of Q, and the averaging identities hold to rounding error.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::cross_section::CrossSection;
use crate::error::{CoreError, Result};
use crate::grid::{Distribution, VelocityGrid};
use crate::par;

/// Storage policy for the n x n kernel matrices.
#[derive(Debug, Clone)]
pub struct KernelOptions {
    /// Dense sigma / sigma_bar / sigma_bbar matrices are precomputed when the
    /// node count does not exceed this budget (constant cross-sections never
    /// need them).
    pub dense_node_budget: usize,
}

impl Default for KernelOptions {
    fn default() -> Self {
        Self {
            dense_node_budget: 4096,
        }
    }
}

enum Storage {
    /// sigma identically equal to `rate`; all averages coincide with it.
    Constant { rate: f64 },
    /// Row-major dense matrices of sigma, sigma_bar, sigma_bbar.
    Dense {
        sigma: Vec<f64>,
        sigma_bar: Vec<f64>,
        sigma_bbar: Vec<f64>,
    },
    /// Everything evaluated on the fly (large grids, analytic sigma).
    MatrixFree,
}

pub struct CollisionKernel {
    grid: Arc<VelocityGrid>,
    cs: CrossSection,
    storage: Storage,
    nu: Vec<f64>,
    nubar: Vec<f64>,
}

impl CollisionKernel {
    pub fn build(
        grid: &Arc<VelocityGrid>,
        cs: CrossSection,
        opts: &KernelOptions,
    ) -> Result<Self> {
        let n = grid.n_nodes();
        let na = grid.n_angle();
        let storage = if cs.is_constant() {
            let rate = cs.eval_nodes(grid, 0, 0);
            Storage::Constant { rate }
        } else if n <= opts.dense_node_budget {
            let sigma: Vec<f64> = {
                let rows = par::map_collect(n, |i| {
                    (0..n).map(|j| cs.eval_nodes(grid, i, j)).collect::<Vec<f64>>()
                });
                rows.concat()
            };
            // sigma_bar(i, j): average of sigma over the rotation orbit of i
            let sigma_bar: Vec<f64> = {
                let rows = par::map_collect(n, |i| {
                    (0..n)
                        .map(|j| {
                            let mut acc = 0.0;
                            for k in 0..na {
                                acc += sigma[grid.rotated_index(i, k) * n + j];
                            }
                            acc / na as f64
                        })
                        .collect::<Vec<f64>>()
                });
                rows.concat()
            };
            // sigma_bbar(i, j): additionally average over the orbit of j
            let sigma_bbar: Vec<f64> = {
                let rows = par::map_collect(n, |i| {
                    (0..n)
                        .map(|j| {
                            let mut acc = 0.0;
                            for k in 0..na {
                                acc += sigma_bar[i * n + grid.rotated_index(j, k)];
                            }
                            acc / na as f64
                        })
                        .collect::<Vec<f64>>()
                });
                rows.concat()
            };
            Storage::Dense {
                sigma,
                sigma_bar,
                sigma_bbar,
            }
        } else {
            Storage::MatrixFree
        };

        let mut kernel = Self {
            grid: grid.clone(),
            cs,
            storage,
            nu: Vec::new(),
            nubar: Vec::new(),
        };
        kernel.nu = kernel.compute_nu();
        kernel.nubar = {
            let mut out = vec![0.0; n];
            grid.cyl_average_slice(&kernel.nu, &mut out);
            out
        };
        debug_assert!(kernel.frequency_within_bounds());
        Ok(kernel)
    }

    fn compute_nu(&self) -> Vec<f64> {
        let grid = &self.grid;
        let n = grid.n_nodes();
        match &self.storage {
            Storage::Constant { rate } => vec![rate * grid.mass_m(); n],
            _ => par::map_collect(n, |i| {
                (0..n)
                    .map(|j| self.sigma(i, j) * grid.weight(j) * grid.maxwellian_at(j))
                    .sum()
            }),
        }
    }

    fn frequency_within_bounds(&self) -> bool {
        let lo = self.cs.alpha1() * self.grid.mass_m() * (1.0 - 1e-12);
        let hi = self.cs.alpha2() * self.grid.mass_m() * (1.0 + 1e-12);
        self.nu.iter().all(|&v| v >= lo && v <= hi)
    }

    pub fn grid(&self) -> &Arc<VelocityGrid> {
        &self.grid
    }
    pub fn cross_section(&self) -> &CrossSection {
        &self.cs
    }
    pub fn is_dense(&self) -> bool {
        matches!(self.storage, Storage::Dense { .. })
    }

    pub fn sigma(&self, i: usize, j: usize) -> f64 {
        match &self.storage {
            Storage::Constant { rate } => *rate,
            Storage::Dense { sigma, .. } => sigma[i * self.grid.n_nodes() + j],
            Storage::MatrixFree => self.cs.eval_nodes(&self.grid, i, j),
        }
    }

    pub fn sigma_bar(&self, i: usize, j: usize) -> f64 {
        match &self.storage {
            Storage::Constant { rate } => *rate,
            Storage::Dense { sigma_bar, .. } => sigma_bar[i * self.grid.n_nodes() + j],
            Storage::MatrixFree => {
                let na = self.grid.n_angle();
                let mut acc = 0.0;
                for k in 0..na {
                    acc += self.cs.eval_nodes(&self.grid, self.grid.rotated_index(i, k), j);
                }
                acc / na as f64
            }
        }
    }

    pub fn sigma_bbar(&self, i: usize, j: usize) -> f64 {
        match &self.storage {
            Storage::Constant { rate } => *rate,
            Storage::Dense { sigma_bbar, .. } => sigma_bbar[i * self.grid.n_nodes() + j],
            Storage::MatrixFree => {
                let na = self.grid.n_angle();
                let mut acc = 0.0;
                for k in 0..na {
                    acc += self.sigma_bar(i, self.grid.rotated_index(j, k));
                }
                acc / na as f64
            }
        }
    }

    /// Collision frequency nu(v) = int sigma(v, v') M(v') dv'.
    pub fn collision_frequency(&self) -> Distribution {
        Distribution::from_values(&self.grid, self.nu.clone()).expect("nu matches grid")
    }

    /// Gyroaverage of the collision frequency (ring-constant).
    pub fn nubar(&self) -> Distribution {
        Distribution::from_values(&self.grid, self.nubar.clone()).expect("nubar matches grid")
    }

    pub(crate) fn nu_slice(&self) -> &[f64] {
        &self.nu
    }
    pub(crate) fn nubar_slice(&self) -> &[f64] {
        &self.nubar
    }

    fn check_grid(&self, f: &Distribution) {
        assert!(
            Arc::ptr_eq(f.grid(), &self.grid),
            "distribution does not live on the kernel's grid"
        );
    }

    fn gain_slice(&self, f: &[f64], sigma_of: impl Fn(usize, usize) -> f64 + Sync + Send) -> Vec<f64> {
        let grid = &self.grid;
        let n = grid.n_nodes();
        let wf: Vec<f64> = (0..n).map(|j| grid.weight(j) * f[j]).collect();
        par::map_collect(n, |i| {
            let mut acc = 0.0;
            for (j, &wfj) in wf.iter().enumerate() {
                acc += sigma_of(i, j) * wfj;
            }
            acc * grid.maxwellian_at(i)
        })
    }

    /// Gain part Q+(f) = M(v) int sigma(v, v') f(v') dv'.
    pub fn apply_gain(&self, f: &Distribution) -> Distribution {
        self.check_grid(f);
        let vals = match &self.storage {
            Storage::Constant { rate } => {
                let c = rate * f.mass();
                self.grid
                    .maxwellian_values()
                    .iter()
                    .map(|m| c * m)
                    .collect()
            }
            _ => self.gain_slice(f.values(), |i, j| self.sigma(i, j)),
        };
        Distribution::from_values(&self.grid, vals).expect("gain matches grid")
    }

    fn gain_bar(&self, f: &[f64]) -> Vec<f64> {
        match &self.storage {
            Storage::Constant { rate } => {
                let c = rate * self.grid.mass_of(f);
                self.grid
                    .maxwellian_values()
                    .iter()
                    .map(|m| c * m)
                    .collect()
            }
            _ => self.gain_slice(f, |i, j| self.sigma_bar(i, j)),
        }
    }

    fn gain_bbar(&self, f: &[f64]) -> Vec<f64> {
        match &self.storage {
            Storage::Constant { rate } => {
                let c = rate * self.grid.mass_of(f);
                self.grid
                    .maxwellian_values()
                    .iter()
                    .map(|m| c * m)
                    .collect()
            }
            _ => self.gain_slice(f, |i, j| self.sigma_bbar(i, j)),
        }
    }

    /// Q(f) = Q+(f) - nu f.
    pub fn apply_q(&self, f: &Distribution) -> Distribution {
        let mut gain = self.apply_gain(f).into_values();
        for (i, g) in gain.iter_mut().enumerate() {
            *g -= self.nu[i] * f.values()[i];
        }
        Distribution::from_values(&self.grid, gain).expect("q matches grid")
    }

    /// Collision operator with the once-averaged cross-section sigma_bar.
    pub fn apply_qbar(&self, f: &Distribution) -> Distribution {
        self.check_grid(f);
        let mut out = self.gain_bar(f.values());
        for (i, g) in out.iter_mut().enumerate() {
            *g -= self.nubar[i] * f.values()[i];
        }
        Distribution::from_values(&self.grid, out).expect("qbar matches grid")
    }

    /// Collision operator with the doubly averaged cross-section sigma_bbar.
    pub fn apply_qbarbar(&self, f: &Distribution) -> Distribution {
        self.check_grid(f);
        let mut out = self.gain_bbar(f.values());
        for (i, g) in out.iter_mut().enumerate() {
            *g -= self.nubar[i] * f.values()[i];
        }
        Distribution::from_values(&self.grid, out).expect("qbarbar matches grid")
    }

    fn check_eta(eta: f64) -> Result<()> {
        if !(eta > 0.0) {
            return Err(CoreError::Param(format!("eta must be positive, got {eta}")));
        }
        Ok(())
    }

    /// Q_eta(f) = Q(f) - G(f)/eta^2.
    pub fn apply_qeta(&self, f: &Distribution, eta: f64) -> Result<Distribution> {
        Self::check_eta(eta)?;
        let q = self.apply_q(f);
        let g = f.gyration();
        Ok(q.axpy(-1.0 / (eta * eta), &g))
    }

    /// Adjoint in the Maxwellian-weighted inner product: the sign of the
    /// rotation generator flips.
    pub fn apply_qeta_adjoint(&self, f: &Distribution, eta: f64) -> Result<Distribution> {
        Self::check_eta(eta)?;
        let q = self.apply_q(f);
        let g = f.gyration();
        Ok(q.axpy(1.0 / (eta * eta), &g))
    }

    /// S_eta(f) = G(f)/eta^2 + nu f, the invertible transport part of -Q_eta.
    pub fn apply_s_eta(&self, f: &Distribution, eta: f64) -> Result<Distribution> {
        Self::check_eta(eta)?;
        self.check_grid(f);
        let mut g = f.gyration().into_values();
        let inv = 1.0 / (eta * eta);
        for (i, gi) in g.iter_mut().enumerate() {
            *gi = *gi * inv + self.nu[i] * f.values()[i];
        }
        Ok(Distribution::from_values(&self.grid, g).expect("s matches grid"))
    }

    /// Adjoint of S_eta (rotation generator reversed).
    pub fn apply_s_eta_adjoint(&self, f: &Distribution, eta: f64) -> Result<Distribution> {
        Self::check_eta(eta)?;
        self.check_grid(f);
        let mut g = f.gyration().into_values();
        let inv = -1.0 / (eta * eta);
        for (i, gi) in g.iter_mut().enumerate() {
            *gi = *gi * inv + self.nu[i] * f.values()[i];
        }
        Ok(Distribution::from_values(&self.grid, g).expect("s* matches grid"))
    }

    /// Build the exact inverse of S_eta (or of its adjoint).
    pub fn l_eta_operator(&self, eta: f64, adjoint: bool) -> Result<LEtaOperator> {
        Self::check_eta(eta)?;
        LEtaOperator::build(self, eta, adjoint)
    }

    /// L_eta(f): inverse of S_eta along the rotation characteristics,
    /// equivalently e^{2 pi eta^2 nubar} - 1 normalized exponential averaging
    /// of f over the gyration orbit.
    pub fn apply_l_eta(&self, f: &Distribution, eta: f64) -> Result<Distribution> {
        let op = self.l_eta_operator(eta, false)?;
        Ok(op.apply(f))
    }

    pub fn apply_l_eta_adjoint(&self, f: &Distribution, eta: f64) -> Result<Distribution> {
        let op = self.l_eta_operator(eta, true)?;
        Ok(op.apply(f))
    }
}

/// Ring-blocked LU factorization of S_eta = G/eta^2 + nu (or its adjoint).
/// The generator acts within each ring, so the factorization splits into
/// n_angle x n_angle blocks.
pub struct LEtaOperator {
    grid: Arc<VelocityGrid>,
    factors: Vec<nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>>,
}

impl LEtaOperator {
    fn build(kernel: &CollisionKernel, eta: f64, adjoint: bool) -> Result<Self> {
        let grid = &kernel.grid;
        let na = grid.n_angle();
        let gen = grid.basis().generator_matrix();
        let sign = if adjoint { -1.0 } else { 1.0 };
        let inv = sign / (eta * eta);
        let factors = par::map_collect(grid.n_rings(), |ring| {
            let mut s = DMatrix::<f64>::zeros(na, na);
            for k in 0..na {
                for l in 0..na {
                    s[(k, l)] = inv * gen[k * na + l];
                }
                s[(k, k)] += kernel.nu[ring * na + k];
            }
            s.lu()
        });
        Ok(Self {
            grid: grid.clone(),
            factors,
        })
    }

    pub fn apply_slice(&self, f: &[f64], out: &mut [f64]) {
        let na = self.grid.n_angle();
        par::for_each_chunk_mut(out, na, |ring, chunk| {
            let rhs = DVector::from_column_slice(&f[ring * na..(ring + 1) * na]);
            let sol = self.factors[ring].solve(&rhs).expect("S_eta ring block is invertible");
            chunk.copy_from_slice(sol.as_slice());
        });
    }

    pub fn apply(&self, f: &Distribution) -> Distribution {
        let mut out = vec![0.0; f.values().len()];
        self.apply_slice(f.values(), &mut out);
        Distribution::from_values(&self.grid, out).expect("l_eta matches grid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{maxwellian, VelocityGrid};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid() -> Arc<VelocityGrid> {
        VelocityGrid::build(6, 8, 8, 6.0, 6.0).unwrap()
    }

    fn random_f(g: &Arc<VelocityGrid>, seed: u64) -> Distribution {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vals: Vec<f64> = (0..g.n_nodes()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Distribution::from_values(g, vals).unwrap()
    }

    fn build(g: &Arc<VelocityGrid>, cs: CrossSection) -> CollisionKernel {
        CollisionKernel::build(g, cs, &KernelOptions::default()).unwrap()
    }

    #[test]
    fn constant_sigma_frequency() {
        let g = grid();
        let k = build(&g, CrossSection::constant(2.0).unwrap());
        let nu = k.collision_frequency();
        for &v in nu.values() {
            assert_relative_eq!(v, 0.5 * g.mass_m(), epsilon = 1e-14);
        }
    }

    #[test]
    fn frequency_bounds_and_gauss_mix_closed_form() {
        let g = grid();
        let (a, b) = (1.0, 0.5);
        let k = build(&g, CrossSection::gauss_mix(a, b).unwrap());
        let nu = k.collision_frequency();
        let lo = k.cross_section().alpha1() * g.mass_m();
        let hi = k.cross_section().alpha2() * g.mass_m();
        assert!(nu.values().iter().all(|&v| v >= lo - 1e-12 && v <= hi + 1e-12));

        // independent oracle: nu(v) = a + b 3^{-3/2} exp(-|v|^2/3) exactly on
        // the untruncated domain
        for i in (0..g.n_nodes()).step_by(37) {
            let v = g.node(i);
            let v2 = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
            let exact = a + b * 3.0f64.powf(-1.5) * (-v2 / 3.0).exp();
            assert_relative_eq!(nu.values()[i], exact, epsilon = 1e-3, max_relative = 1e-3);
        }
    }

    #[test]
    fn gain_constant_sigma() {
        let g = grid();
        let k = build(&g, CrossSection::constant(1.0).unwrap());
        let m = maxwellian(&g);
        // zero-mass input: gain vanishes
        let vx_m = Distribution::from_fn(&g, |v| v[0]).scale(1.0);
        let vx_m = Distribution::from_values(
            &g,
            vx_m.values().iter().zip(m.values()).map(|(a, b)| a * b).collect(),
        )
        .unwrap();
        let gain = k.apply_gain(&vx_m);
        assert!(gain.weighted_norm() < 1e-14);
        // f = M: gain = massM * M
        let gm = k.apply_gain(&m);
        for (a, b) in gm.values().iter().zip(m.values()) {
            assert_relative_eq!(*a, g.mass_m() * b, epsilon = 1e-14);
        }
    }

    #[test]
    fn gain_is_self_adjoint() {
        let g = grid();
        let k = build(&g, CrossSection::gauss_mix(1.0, 0.5).unwrap());
        let f = random_f(&g, 1);
        let h = random_f(&g, 2);
        let lhs = k.apply_gain(&f).weighted_inner(&h).unwrap();
        let rhs = f.weighted_inner(&k.apply_gain(&h)).unwrap();
        assert_relative_eq!(lhs, rhs, max_relative = 1e-11);
    }

    #[test]
    fn q_annihilates_maxwellian_and_conserves_mass() {
        let g = grid();
        for cs in [
            CrossSection::constant(1.0).unwrap(),
            CrossSection::gauss_mix(1.0, 0.5).unwrap(),
        ] {
            let k = build(&g, cs);
            let m = maxwellian(&g);
            let qm = k.apply_q(&m);
            assert!(qm.weighted_norm() <= 1e-14 * m.weighted_norm());
            for seed in 0..5 {
                let f = random_f(&g, seed);
                let mass = k.apply_q(&f).mass();
                assert!(mass.abs() < 1e-13 * (1.0 + f.weighted_norm()), "mass {mass}");
            }
        }
    }

    #[test]
    fn relaxation_algebra() {
        let g = grid();
        let tau = 2.0;
        let k = build(&g, CrossSection::constant(tau).unwrap());
        let f = random_f(&g, 3);
        let q = k.apply_q(&f);
        let m = maxwellian(&g);
        // Q(f) = (mass(f) M - massM f) / tau on the grid
        for i in 0..g.n_nodes() {
            let expect = (f.mass() * m.values()[i] - g.mass_m() * f.values()[i]) / tau;
            assert_relative_eq!(q.values()[i], expect, epsilon = 1e-13, max_relative = 1e-11);
        }
    }

    #[test]
    fn averaged_sigma_properties() {
        let g = grid();
        let k = build(&g, CrossSection::gauss_mix(1.0, 0.5).unwrap());
        let n = g.n_nodes();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let i = rng.gen_range(0..n);
            let j = rng.gen_range(0..n);
            // symmetric average is symmetric
            assert_relative_eq!(k.sigma_bbar(i, j), k.sigma_bbar(j, i), max_relative = 1e-12);
            // averaging is a projector: sigma_bar is rotation-invariant in i
            let ri = g.rotated_index(i, 3);
            assert_relative_eq!(k.sigma_bar(i, j), k.sigma_bar(ri, j), max_relative = 1e-12);
        }
        // constant sigma is a fixed point of both averages
        let kc = build(&g, CrossSection::constant(1.5).unwrap());
        assert_relative_eq!(kc.sigma_bar(5, 17), kc.sigma(5, 17));
        assert_relative_eq!(kc.sigma_bbar(5, 17), kc.sigma(5, 17));
    }

    #[test]
    fn first_argument_invariant_sigma_is_fixed_by_bar() {
        // sigma depending on |v_perp|, v_z, v' only through rotation
        // invariants of the first argument: sigma_bar = sigma
        let g = VelocityGrid::build(3, 4, 3, 2.0, 2.0).unwrap();
        let n = g.n_nodes();
        let mut vals = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let vi = g.node(i);
                let vj = g.node(j);
                let ri2 = vi[0] * vi[0] + vi[1] * vi[1];
                let rj2 = vj[0] * vj[0] + vj[1] * vj[1];
                vals[i * n + j] = 1.0 + 0.3 * (-(ri2 + rj2 + (vi[2] - vj[2]).powi(2))).exp();
            }
        }
        // symmetrize exactly against rounding asymmetry
        for i in 0..n {
            for j in 0..i {
                let s = 0.5 * (vals[i * n + j] + vals[j * n + i]);
                vals[i * n + j] = s;
                vals[j * n + i] = s;
            }
        }
        let k = build(&g, CrossSection::tabulated(&g, vals).unwrap());
        for i in 0..n {
            for j in 0..n {
                assert_relative_eq!(k.sigma_bar(i, j), k.sigma(i, j), max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn qbar_equals_averaged_q_on_symmetric_input() {
        let g = grid();
        let k = build(&g, CrossSection::gauss_mix(1.0, 0.5).unwrap());
        let f = random_f(&g, 11).cyl_average();
        let qbar = k.apply_qbar(&f);
        let qbbar = k.apply_qbarbar(&f);
        let aq = k.apply_q(&f).cyl_average();
        let scale = f.weighted_norm();
        assert!(qbar.sub(&qbbar).weighted_norm() <= 1e-12 * scale);
        assert!(qbar.sub(&aq).weighted_norm() <= 1e-12 * scale);
        // and the Maxwellian is in the kernel of the doubly averaged operator
        let m = maxwellian(&g);
        assert!(k.apply_qbarbar(&m).weighted_norm() <= 1e-13);
    }

    #[test]
    fn qeta_kernel_mass_and_adjoint() {
        let g = grid();
        let k = build(&g, CrossSection::gauss_mix(1.0, 0.5).unwrap());
        let m = maxwellian(&g);
        let eta = 0.7;
        assert!(k.apply_qeta(&m, eta).unwrap().weighted_norm() <= 1e-13);
        assert!(k.apply_qeta(&m.scale(3.5), eta).unwrap().weighted_norm() <= 1e-12);
        for seed in 0..5 {
            let f = random_f(&g, 20 + seed);
            let h = random_f(&g, 40 + seed);
            assert!(k.apply_qeta(&f, eta).unwrap().mass().abs() < 1e-12);
            let lhs = k.apply_qeta(&f, eta).unwrap().weighted_inner(&h).unwrap();
            let rhs = f
                .weighted_inner(&k.apply_qeta_adjoint(&h, eta).unwrap())
                .unwrap();
            assert_relative_eq!(lhs, rhs, max_relative = 1e-10);
        }
        assert!(k.apply_qeta(&m, -1.0).is_err());
    }

    #[test]
    fn coercivity_of_q_eta() {
        let g = grid();
        for cs in [
            CrossSection::constant(1.0).unwrap(),
            CrossSection::gauss_mix(1.0, 0.5).unwrap(),
        ] {
            let alpha1 = cs.alpha1();
            let k = build(&g, cs);
            let m = maxwellian(&g);
            for seed in 0..10 {
                let f = random_f(&g, 100 + seed);
                let p = m.scale(f.mass() / g.mass_m());
                let fluct = f.sub(&p);
                let lhs = -k
                    .apply_qeta(&f, 0.5)
                    .unwrap()
                    .weighted_inner(&f)
                    .unwrap();
                let rhs = alpha1 * g.mass_m() * fluct.weighted_inner(&fluct).unwrap();
                assert!(lhs >= rhs * (1.0 - 1e-10), "coercivity defect {lhs} < {rhs}");
            }
        }
    }

    #[test]
    fn l_eta_constant_nu_closed_form() {
        let g = grid();
        let tau = 1.5;
        let k = build(&g, CrossSection::constant(tau).unwrap());
        let f = random_f(&g, 33).cyl_average();
        let eta = 0.8;
        let l = k.apply_l_eta(&f, eta).unwrap();
        let nu0 = g.mass_m() / tau;
        for (a, b) in l.values().iter().zip(f.values()) {
            assert_relative_eq!(*a, b / nu0, epsilon = 1e-13, max_relative = 1e-12);
        }
    }

    #[test]
    fn l_eta_inverts_s_eta() {
        let g = grid();
        let k = build(&g, CrossSection::gauss_mix(1.0, 0.5).unwrap());
        for eta in [0.25, 1.0] {
            for seed in 0..5 {
                let f = random_f(&g, 200 + seed);
                let slf = k
                    .apply_s_eta(&k.apply_l_eta(&f, eta).unwrap(), eta)
                    .unwrap();
                let defect = slf.sub(&f).weighted_norm() / f.weighted_norm();
                assert!(defect <= 1e-11, "S(L(f)) defect {defect} at eta {eta}");
                // adjoint pair
                let slf = k
                    .apply_s_eta_adjoint(&k.apply_l_eta_adjoint(&f, eta).unwrap(), eta)
                    .unwrap();
                let defect = slf.sub(&f).weighted_norm() / f.weighted_norm();
                assert!(defect <= 1e-11, "S*(L*(f)) defect {defect} at eta {eta}");
            }
        }
    }

    #[test]
    fn l_eta_respects_exponential_envelope() {
        // |L(f)| <= eta^2/(e^{2 pi a1 eta^2}-1) * int |f(R(tau) v)| e^{a2 eta^2 tau} dtau
        // checked with a smooth positive f and a fine rectangle rule
        let g = grid();
        let k = build(&g, CrossSection::gauss_mix(1.0, 0.5).unwrap());
        let f = Distribution::from_fn(&g, |v| {
            (1.0 + 0.5 * (v[0] + 0.2 * v[1]).sin().powi(2))
                * (-0.5 * (v[0] * v[0] + v[1] * v[1] + v[2] * v[2])).exp()
        });
        let eta = 0.6;
        let l = k.apply_l_eta(&f, eta).unwrap();
        let (a1, a2) = (k.cross_section().alpha1(), k.cross_section().alpha2());
        let e2 = eta * eta;
        let pref = e2 / ((2.0 * std::f64::consts::PI * a1 * e2).exp() - 1.0);
        let nq = 2000;
        let dtau = 2.0 * std::f64::consts::PI / nq as f64;
        let na = g.n_angle();
        for i in (0..g.n_nodes()).step_by(17) {
            let ring = g.ring_of(i);
            let theta0 = 2.0 * std::f64::consts::PI * g.angle_index(i) as f64 / na as f64;
            let ringvals = &f.values()[ring * na..(ring + 1) * na];
            let mut bound = 0.0;
            let mut w = vec![0.0; na];
            for q in 0..nq {
                let tau = (q as f64 + 0.5) * dtau;
                g.basis().interp_weights(theta0 - tau, &mut w);
                let fv: f64 = w.iter().zip(ringvals).map(|(wi, fi)| wi * fi).sum();
                bound += fv.abs() * (a2 * e2 * tau).exp() * dtau;
            }
            assert!(
                l.values()[i].abs() <= pref * bound * (1.0 + 1e-6),
                "envelope violated at node {i}"
            );
        }
    }
}
