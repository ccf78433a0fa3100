//! Spectral operations on a uniform periodic angle grid.
//!
//! Every velocity-grid "ring" (fixed radius and parallel velocity) carries
//! `n` samples at angles theta_k = 2*pi*k/n. Trigonometric interpolation is
//! exact for modes |m| < n/2; the Nyquist mode of an even grid is represented
//! as a pure cosine, so its spectral derivative is zero and rotations scale it
//! by cos(n*tau/2). All routines here follow that single convention, which
//! keeps the discrete rotation/average/derivative identities exact.

use num_complex::Complex64;

/// Cached twiddle factors for one ring size.
#[derive(Debug, Clone)]
pub struct AngularBasis {
    n: usize,
    /// twiddle[k] = exp(2*pi*i*k/n)
    twiddle: Vec<Complex64>,
}

impl AngularBasis {
    pub fn new(n: usize) -> Self {
        assert!(n >= 2, "angle grid needs at least 2 points");
        let twiddle = (0..n)
            .map(|k| {
                let phi = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
                Complex64::new(phi.cos(), phi.sin())
            })
            .collect();
        Self { n, twiddle }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    /// Forward DFT: c_m = sum_k u_k e^{-2 pi i m k / n}.
    pub fn dft(&self, ring: &[f64], coeffs: &mut [Complex64]) {
        let n = self.n;
        debug_assert_eq!(ring.len(), n);
        debug_assert_eq!(coeffs.len(), n);
        for (m, c) in coeffs.iter_mut().enumerate() {
            let mut acc = Complex64::new(0.0, 0.0);
            for (k, &u) in ring.iter().enumerate() {
                acc += u * self.twiddle[(m * k) % n].conj();
            }
            *c = acc;
        }
    }

    /// Inverse DFT, real part: u_k = Re[(1/n) sum_m c_m e^{2 pi i m k / n}].
    pub fn idft_real(&self, coeffs: &[Complex64], ring: &mut [f64]) {
        let n = self.n;
        for (k, out) in ring.iter_mut().enumerate() {
            let mut acc = Complex64::new(0.0, 0.0);
            for (m, c) in coeffs.iter().enumerate() {
                acc += c * self.twiddle[(m * k) % n];
            }
            *out = acc.re / n as f64;
        }
    }

    /// Signed mode number for storage index `m`.
    pub fn signed_mode(&self, m: usize) -> i64 {
        if 2 * m <= self.n {
            m as i64
        } else {
            m as i64 - self.n as i64
        }
    }

    fn is_nyquist(&self, m: usize) -> bool {
        self.n % 2 == 0 && 2 * m == self.n
    }

    /// Apply a per-mode multiplier lambda(mu). The Nyquist mode of an even
    /// grid receives the average of lambda(n/2) and lambda(-n/2), which is the
    /// real trigonometric (split-Nyquist) convention.
    pub fn apply_multiplier(
        &self,
        ring: &[f64],
        out: &mut [f64],
        lambda: impl Fn(i64) -> Complex64,
    ) {
        let n = self.n;
        let mut coeffs = vec![Complex64::new(0.0, 0.0); n];
        self.dft(ring, &mut coeffs);
        for (m, c) in coeffs.iter_mut().enumerate() {
            let mult = if self.is_nyquist(m) {
                let h = n as i64 / 2;
                0.5 * (lambda(h) + lambda(-h))
            } else {
                lambda(self.signed_mode(m))
            };
            *c *= mult;
        }
        self.idft_real(&coeffs, out);
    }

    /// Samples of f(theta_k - tau): rotation about the parallel axis by `tau`.
    /// Grid-multiple angles reduce to an exact index permutation.
    pub fn rotate(&self, ring: &[f64], out: &mut [f64], tau: f64) {
        let n = self.n;
        let dtheta = 2.0 * std::f64::consts::PI / n as f64;
        let steps = (tau / dtheta).round();
        if (tau - steps * dtheta).abs() <= 1e-12 && steps.abs() < 1e15 {
            let s = (steps as i64).rem_euclid(n as i64) as usize;
            for j in 0..n {
                out[j] = ring[(j + n - s) % n];
            }
            return;
        }
        self.apply_multiplier(ring, out, |mu| {
            Complex64::new(0.0, -(mu as f64) * tau).exp()
        });
    }

    /// Ring mean: the cylindrical average restricted to one ring.
    pub fn mean(&self, ring: &[f64]) -> f64 {
        ring.iter().sum::<f64>() / self.n as f64
    }

    /// (1/2pi) * int_0^tau f(theta_k - s) ds, each oscillatory mode integrated
    /// in closed form.
    pub fn partial_average(&self, ring: &[f64], out: &mut [f64], tau: f64) {
        let two_pi = 2.0 * std::f64::consts::PI;
        self.apply_multiplier(ring, out, |mu| {
            if mu == 0 {
                Complex64::new(tau / two_pi, 0.0)
            } else {
                let imu = Complex64::new(0.0, mu as f64);
                (Complex64::new(1.0, 0.0) - (-imu * tau).exp()) / (imu * two_pi)
            }
        });
    }

    /// Circulant matrix (row-major n x n) of the rotation generator
    /// g = -d/dtheta, exactly antisymmetric by construction.
    pub fn generator_matrix(&self) -> Vec<f64> {
        let n = self.n;
        let mut kernel = vec![0.0; n]; // kernel[p] = G_{k,k-p}
        for p in 1..n {
            let x = std::f64::consts::PI * p as f64 / n as f64;
            let d = if n % 2 == 0 {
                // d/dtheta spectral kernel for even n
                0.5 * neg_one_pow(p) / x.tan()
            } else {
                0.5 * neg_one_pow(p) / x.sin()
            };
            kernel[p] = -d;
        }
        // enforce exact antisymmetry of the circulant: kernel[n-p] = -kernel[p]
        for p in 1..=(n - 1) / 2 {
            kernel[n - p] = -kernel[p];
        }
        if n % 2 == 0 {
            kernel[n / 2] = 0.0;
        }
        let mut mat = vec![0.0; n * n];
        for k in 0..n {
            for l in 0..n {
                mat[k * n + l] = kernel[(k + n - l) % n];
            }
        }
        mat
    }

    /// Trigonometric interpolation weights at angle `theta`:
    /// f(theta) = sum_l w_l f(theta_l).
    pub fn interp_weights(&self, theta: f64, weights: &mut [f64]) {
        let n = self.n;
        let dtheta = 2.0 * std::f64::consts::PI / n as f64;
        let half = n / 2;
        for (l, w) in weights.iter_mut().enumerate() {
            let delta = theta - l as f64 * dtheta;
            let mut acc = 1.0;
            if n % 2 == 0 {
                for mu in 1..half {
                    acc += 2.0 * (mu as f64 * delta).cos();
                }
                acc += (half as f64 * delta).cos();
            } else {
                for mu in 1..=half {
                    acc += 2.0 * (mu as f64 * delta).cos();
                }
            }
            *w = acc / n as f64;
        }
    }

    /// The averaging operator that inverts the rotation generator on
    /// zero-mean data, weighted by the angular antiderivative of `nu`:
    ///
    ///   a1(g)(v) = 1/(2 pi nubar) * int_0^2pi g(R(tau) v) int_0^tau nu(R(s) v) ds dtau
    ///
    /// computed term-by-term from the exact mode integrals.
    pub fn a1(&self, g_ring: &[f64], nu_ring: &[f64], out: &mut [f64]) {
        let n = self.n;
        let mut gamma = vec![Complex64::new(0.0, 0.0); n];
        let mut d = vec![Complex64::new(0.0, 0.0); n];
        self.dft(g_ring, &mut gamma);
        self.dft(nu_ring, &mut d);
        let d0 = d[0].re;
        let mut cout = vec![Complex64::new(0.0, 0.0); n];

        // mode-zero output: gamma_0 * pi + (i/d0) * sum_{mu != 0} d_mu gamma_{-mu} / mu
        let mut corr = Complex64::new(0.0, 0.0);
        for m in 1..n {
            if self.is_nyquist(m) {
                continue; // the +-n/2 halves cancel
            }
            let mu = self.signed_mode(m) as f64;
            corr += d[m] * gamma[(n - m) % n] / mu;
        }
        cout[0] = gamma[0] * std::f64::consts::PI + Complex64::new(0.0, 1.0) * corr / d0;

        for m in 1..n {
            if self.is_nyquist(m) {
                continue; // no grid-visible Nyquist output
            }
            let mu = self.signed_mode(m) as f64;
            let i_over_mu = Complex64::new(0.0, 1.0 / mu);
            cout[m] = i_over_mu * (gamma[m] - gamma[0] * d[m] / d0);
        }
        self.idft_real(&cout, out);
    }
}

fn neg_one_pow(p: usize) -> f64 {
    if p % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}
