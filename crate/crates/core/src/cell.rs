//! Constrained cell problems.
//!
//! The central object is the zero-mass solution of -Q_eta(X) = g for
//! admissible right-hand sides (zero velocity integral). Two routes are
//! implemented and cross-checked: a bordered dense solve of the assembled
//! operator with the mass constraint appended (the operator is singular
//! exactly on the Maxwellian line, bordering restores unique solvability),
//! and the characteristics fixed point f = L_eta(Q+(f) + g). On top of that
//! sit the solvers for the gyroaveraged operators (which collapse to the
//! (radius, parallel) subgrid), the coupled rotation/average system, and the
//! expansion of the cell solutions in powers of eta^2.

use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::grid::{maxwellian, Distribution, VelocityGrid};
use crate::kernel::CollisionKernel;
use crate::par;

/// Relative tolerance for "this datum must have zero mass / zero average":
/// wide enough for quadrature-level noise, tight enough to flag real
/// violations.
pub const DEFAULT_ZERO_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellMethod {
    Direct,
    FixedPoint,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveOptions {
    pub method: CellMethod,
    /// Fixed-point stop: relative update below this.
    pub fp_tol: f64,
    pub fp_max_iter: usize,
    /// Relative tolerance for zero-mass / zero-average preconditions.
    pub zero_tol: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            method: CellMethod::Direct,
            fp_tol: 1e-10,
            fp_max_iter: 10_000,
            zero_tol: DEFAULT_ZERO_TOL,
        }
    }
}

impl SolveOptions {
    pub fn fixed_point() -> Self {
        Self {
            method: CellMethod::FixedPoint,
            ..Self::default()
        }
    }
}

/// Outcome of one constrained solve.
#[derive(Debug, Clone)]
pub struct QetaSolve {
    pub f: Distribution,
    /// Relative operator residual ||Q_eta f + g|| / ||g||.
    pub residual: f64,
    pub mass_defect: f64,
    pub iterations: Option<usize>,
    pub contraction: Option<f64>,
}

/// The three cell solutions driven by (v_perp/eta^2, v_z) M.
#[derive(Debug, Clone)]
pub struct CellSolution {
    pub x_perp: [Distribution; 2],
    pub x_z: Distribution,
    pub eta: f64,
    /// Largest relative residual over the three component solves.
    pub residual_norm: f64,
    /// Largest |mass| over the three components.
    pub mass_defect: f64,
    pub method: CellMethod,
}

/// Leading and first-order terms of the eta^2 expansion of the cell
/// solutions.
#[derive(Debug, Clone)]
pub struct ExpansionTerms {
    pub xz0: Distribution,
    pub xz1: Distribution,
    pub xperp0: [Distribution; 2],
    pub xperp1: [Distribution; 2],
}

fn norm_or_one(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        1.0
    }
}

/// nu-weighted inverse of the rotation generator on data with zero
/// cylindrical average.
pub fn average_a1(kernel: &CollisionKernel, g: &Distribution) -> Result<Distribution> {
    average_a1_with_tol(kernel, g, DEFAULT_ZERO_TOL)
}

pub fn average_a1_with_tol(
    kernel: &CollisionKernel,
    g: &Distribution,
    zero_tol: f64,
) -> Result<Distribution> {
    let avg = g.cyl_average().weighted_norm();
    if avg > zero_tol * norm_or_one(g.weighted_norm()) {
        return Err(CoreError::Precondition(format!(
            "a1 needs zero cylindrical average; ||A g|| / ||g|| = {:.3e}",
            avg / norm_or_one(g.weighted_norm())
        )));
    }
    let grid = kernel.grid();
    let mut out = vec![0.0; grid.n_nodes()];
    grid.a1_slice(g.values(), kernel.nu_slice(), &mut out);
    Ok(Distribution::from_values(grid, out).expect("a1 matches grid"))
}

fn check_admissible(g: &Distribution, zero_tol: f64) -> Result<()> {
    let mass = g.mass();
    if mass.abs() > zero_tol * norm_or_one(g.weighted_norm()) {
        return Err(CoreError::Solvability(format!(
            "right-hand side must have zero mass; |mass| / ||g|| = {:.3e}",
            mass.abs() / norm_or_one(g.weighted_norm())
        )));
    }
    Ok(())
}

/// Assemble the dense matrix of -Q_eta (adjoint: generator sign flipped),
/// bordered with the Maxwellian column and the mass row.
fn assemble_bordered(kernel: &CollisionKernel, eta: f64, adjoint: bool) -> DMatrix<f64> {
    let grid = kernel.grid();
    let n = grid.n_nodes();
    let na = grid.n_angle();
    let gen = grid.basis().generator_matrix();
    let sign = if adjoint { -1.0 } else { 1.0 };
    let inv = sign / (eta * eta);
    let nu = kernel.nu_slice();

    let rows: Vec<Vec<f64>> = par::map_collect(n, |i| {
        let mut row = vec![0.0; n + 1];
        let mi = grid.maxwellian_at(i);
        for (j, rj) in row.iter_mut().enumerate().take(n) {
            *rj = -mi * grid.weight(j) * kernel.sigma(i, j);
        }
        row[i] += nu[i];
        let ring = i / na;
        let k = i % na;
        for l in 0..na {
            row[ring * na + l] += inv * gen[k * na + l];
        }
        row[n] = mi;
        row
    });
    let mut b = DMatrix::<f64>::zeros(n + 1, n + 1);
    for (i, row) in rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            b[(i, j)] = v;
        }
    }
    for j in 0..n {
        b[(n, j)] = grid.weight(j);
    }
    b
}

/// Reusable direct solver: one LU factorization of the bordered operator,
/// many right-hand sides.
pub struct DirectCellSolver {
    kernel_grid: Arc<VelocityGrid>,
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl DirectCellSolver {
    pub fn new(kernel: &CollisionKernel, eta: f64, adjoint: bool) -> Result<Self> {
        if !(eta > 0.0) {
            return Err(CoreError::Param(format!("eta must be positive, got {eta}")));
        }
        let b = assemble_bordered(kernel, eta, adjoint);
        Ok(Self {
            kernel_grid: kernel.grid().clone(),
            lu: b.lu(),
        })
    }

    fn solve(&self, g: &Distribution) -> Result<Distribution> {
        let n = self.kernel_grid.n_nodes();
        let mut rhs = DVector::<f64>::zeros(n + 1);
        for (i, &v) in g.values().iter().enumerate() {
            rhs[i] = v;
        }
        let sol = self
            .lu
            .solve(&rhs)
            .ok_or_else(|| CoreError::Solvability("bordered operator is singular".into()))?;
        let vals: Vec<f64> = sol.as_slice()[..n].to_vec();
        Ok(Distribution::from_values(&self.kernel_grid, vals).expect("solution matches grid"))
    }
}

fn fixed_point_solve(
    kernel: &CollisionKernel,
    g: &Distribution,
    eta: f64,
    adjoint: bool,
    opts: &SolveOptions,
) -> Result<(Distribution, usize, Option<f64>)> {
    let grid = kernel.grid();
    let l_op = kernel.l_eta_operator(eta, adjoint)?;
    let m = maxwellian(grid);
    let mass_m = grid.mass_m();
    let mut f = Distribution::zeros(grid);
    let mut last_update = f64::INFINITY;
    let mut contraction = None;
    let mut prev_update = f64::NAN;
    for it in 1..=opts.fp_max_iter {
        let rhs = kernel.apply_gain(&f).axpy(1.0, g);
        let mut next = l_op.apply(&rhs);
        // project out the neutral Maxwellian direction every sweep
        next = next.axpy(-next.mass() / mass_m, &m);
        last_update = next.sub(&f).weighted_norm();
        let scale = norm_or_one(next.weighted_norm());
        if prev_update.is_finite() && prev_update > 0.0 {
            contraction = Some(last_update / prev_update);
        }
        prev_update = last_update;
        f = next;
        if last_update <= opts.fp_tol * scale {
            return Ok((f, it, contraction));
        }
    }
    Err(CoreError::NonConvergence {
        iterations: opts.fp_max_iter,
        last_update,
        contraction: contraction.unwrap_or(f64::NAN),
    })
}

fn solve_qeta_cell_impl(
    kernel: &CollisionKernel,
    g: &Distribution,
    eta: f64,
    adjoint: bool,
    opts: &SolveOptions,
) -> Result<QetaSolve> {
    check_admissible(g, opts.zero_tol)?;
    let (f, iterations, contraction) = match opts.method {
        CellMethod::Direct => {
            let solver = DirectCellSolver::new(kernel, eta, adjoint)?;
            (solver.solve(g)?, None, None)
        }
        CellMethod::FixedPoint => {
            let (f, it, c) = fixed_point_solve(kernel, g, eta, adjoint, opts)?;
            (f, Some(it), c)
        }
    };
    let applied = if adjoint {
        kernel.apply_qeta_adjoint(&f, eta)?
    } else {
        kernel.apply_qeta(&f, eta)?
    };
    let residual = applied.axpy(1.0, g).weighted_norm() / norm_or_one(g.weighted_norm());
    Ok(QetaSolve {
        mass_defect: f.mass(),
        f,
        residual,
        iterations,
        contraction,
    })
}

/// Zero-mass f with Q_eta(f) = -g.
pub fn solve_qeta_cell(
    kernel: &CollisionKernel,
    g: &Distribution,
    eta: f64,
    opts: &SolveOptions,
) -> Result<QetaSolve> {
    solve_qeta_cell_impl(kernel, g, eta, false, opts)
}

/// Zero-mass f with Q_eta^*(f) = -g (generator sign flipped).
pub fn solve_qeta_cell_adjoint(
    kernel: &CollisionKernel,
    g: &Distribution,
    eta: f64,
    opts: &SolveOptions,
) -> Result<QetaSolve> {
    solve_qeta_cell_impl(kernel, g, eta, true, opts)
}

fn solve_chi_eta_impl(
    kernel: &CollisionKernel,
    eta: f64,
    adjoint: bool,
    opts: &SolveOptions,
) -> Result<CellSolution> {
    if !(eta > 0.0) {
        return Err(CoreError::Param(format!("eta must be positive, got {eta}")));
    }
    let grid = kernel.grid();
    let e2 = eta * eta;
    let rhs = |component: usize, scale: f64| {
        Distribution::from_values(
            grid,
            grid.nodes()
                .iter()
                .zip(grid.maxwellian_values())
                .map(|(v, m)| scale * v[component] * m)
                .collect(),
        )
        .expect("rhs matches grid")
    };
    let sources = [rhs(0, 1.0 / e2), rhs(1, 1.0 / e2), rhs(2, 1.0)];

    let mut solves = Vec::with_capacity(3);
    match opts.method {
        CellMethod::Direct => {
            let solver = DirectCellSolver::new(kernel, eta, adjoint)?;
            for g in &sources {
                check_admissible(g, opts.zero_tol)?;
                let f = solver.solve(g)?;
                let applied = if adjoint {
                    kernel.apply_qeta_adjoint(&f, eta)?
                } else {
                    kernel.apply_qeta(&f, eta)?
                };
                let residual = applied.axpy(1.0, g).weighted_norm() / g.weighted_norm();
                solves.push(QetaSolve {
                    mass_defect: f.mass(),
                    f,
                    residual,
                    iterations: None,
                    contraction: None,
                });
            }
        }
        CellMethod::FixedPoint => {
            for g in &sources {
                solves.push(solve_qeta_cell_impl(kernel, g, eta, adjoint, opts)?);
            }
        }
    }

    let residual_norm = solves.iter().map(|s| s.residual).fold(0.0, f64::max);
    let mass_defect = solves.iter().map(|s| s.mass_defect.abs()).fold(0.0, f64::max);

    // a priori component bounds from coercivity:
    // ||X_c|| <= ||rhs_c|| / (alpha1 massM); grossly exceeding them means the
    // solve went wrong.
    let cap = 1.0 / (kernel.cross_section().alpha1() * grid.mass_m());
    for (s, g) in solves.iter().zip(&sources) {
        let bound = cap * g.weighted_norm();
        if s.f.weighted_norm() > 2.0 * bound {
            return Err(CoreError::Solvability(format!(
                "cell solution norm {:.3e} exceeds twice its a priori bound {:.3e}",
                s.f.weighted_norm(),
                bound
            )));
        }
    }

    let mut it = solves.into_iter();
    let x_x = it.next().unwrap().f;
    let x_y = it.next().unwrap().f;
    let x_z = it.next().unwrap().f;
    Ok(CellSolution {
        x_perp: [x_x, x_y],
        x_z,
        eta,
        residual_norm,
        mass_defect,
        method: opts.method,
    })
}

/// The three zero-mass solutions of -Q_eta(X) = (v_perp/eta^2, v_z) M.
pub fn solve_chi_eta(kernel: &CollisionKernel, eta: f64, opts: &SolveOptions) -> Result<CellSolution> {
    solve_chi_eta_impl(kernel, eta, false, opts)
}

/// Adjoint counterpart: -Q_eta^*(X*) = (v_perp/eta^2, v_z) M.
pub fn solve_chi_eta_adjoint(
    kernel: &CollisionKernel,
    eta: f64,
    opts: &SolveOptions,
) -> Result<CellSolution> {
    solve_chi_eta_impl(kernel, eta, true, opts)
}

/// Zero-mass cylindrically symmetric f with Q_bbar(f) = g. The solve runs on
/// the (radius, parallel) subgrid because both f and the doubly averaged
/// kernel are ring-constant.
pub fn solve_qbarbar(kernel: &CollisionKernel, g: &Distribution) -> Result<Distribution> {
    solve_qbarbar_with_tol(kernel, g, DEFAULT_ZERO_TOL)
}

pub fn solve_qbarbar_with_tol(
    kernel: &CollisionKernel,
    g: &Distribution,
    zero_tol: f64,
) -> Result<Distribution> {
    let grid = kernel.grid();
    let scale = norm_or_one(g.weighted_norm());
    let asym = g.sub(&g.cyl_average()).weighted_norm();
    if asym > zero_tol * scale {
        return Err(CoreError::Precondition(format!(
            "q_bbar solve needs cylindrically symmetric data; anisotropy {:.3e}",
            asym / scale
        )));
    }
    check_admissible(g, zero_tol)?;

    let na = grid.n_angle();
    let nr = grid.n_rings();
    let rings = grid.rings();
    // bordered subgrid system for Q_bbar with ring weights W = n_angle * w
    let mut b = DMatrix::<f64>::zeros(nr + 1, nr + 1);
    for p in 0..nr {
        let rep_p = grid.node_index(p, 0);
        let mp = rings[p].maxwellian;
        for q in 0..nr {
            let rep_q = grid.node_index(q, 0);
            let wq = na as f64 * rings[q].node_weight;
            b[(p, q)] = mp * wq * kernel.sigma_bbar(rep_p, rep_q);
        }
        b[(p, p)] -= kernel.nubar_slice()[rep_p];
        b[(p, nr)] = mp;
        b[(nr, p)] = na as f64 * rings[p].node_weight;
    }
    let mut rhs = DVector::<f64>::zeros(nr + 1);
    for p in 0..nr {
        rhs[p] = g.values()[grid.node_index(p, 0)];
    }
    let sol = b
        .lu()
        .solve(&rhs)
        .ok_or_else(|| CoreError::Solvability("q_bbar subgrid system is singular".into()))?;
    let mut vals = vec![0.0; grid.n_nodes()];
    for p in 0..nr {
        for k in 0..na {
            vals[grid.node_index(p, k)] = sol[p];
        }
    }
    Distribution::from_values(grid, vals)
}

/// Result of a Q_bar solve with its reported stability ratio.
#[derive(Debug, Clone)]
pub struct QbarSolve {
    pub f: Distribution,
    /// ||f|| / ||g||, the measured stability constant of the solve.
    pub stability_ratio: f64,
    /// Relative residual ||Q_bar f - g|| / ||g||.
    pub residual: f64,
}

/// Zero-mass f with Q_bar(f) = g. Solvable iff int nu g / nubar dv = 0;
/// the anisotropic part is algebraic, the symmetric part reduces to a
/// Q_bbar subgrid solve.
pub fn solve_qbar(kernel: &CollisionKernel, g: &Distribution) -> Result<QbarSolve> {
    solve_qbar_with_tol(kernel, g, DEFAULT_ZERO_TOL)
}

pub fn solve_qbar_with_tol(
    kernel: &CollisionKernel,
    g: &Distribution,
    zero_tol: f64,
) -> Result<QbarSolve> {
    let grid = kernel.grid();
    let scale = norm_or_one(g.weighted_norm());
    let nu = kernel.nu_slice();
    let nubar = kernel.nubar_slice();
    let solvability: f64 = (0..grid.n_nodes())
        .map(|i| grid.weight(i) * nu[i] * g.values()[i] / nubar[i])
        .sum();
    if solvability.abs() > zero_tol * scale {
        return Err(CoreError::Solvability(format!(
            "q_bar solvability integral int nu g / nubar = {:.3e} (relative {:.3e})",
            solvability,
            solvability.abs() / scale
        )));
    }

    let gbar = g.cyl_average();
    // anisotropic part (gbar - g)/nubar
    let h = Distribution::from_values(
        grid,
        (0..grid.n_nodes())
            .map(|i| (gbar.values()[i] - g.values()[i]) / nubar[i])
            .collect(),
    )
    .expect("h matches grid");
    // symmetric part from Q_bbar(fbar) = gbar + gain_bar((g - gbar)/nubar),
    // with gain_bar(x) = Q_bar(x) + nubar x
    let minus_h = h.scale(-1.0);
    let gain_bar_minus_h = {
        let mut vals = kernel.apply_qbar(&minus_h).into_values();
        for (i, v) in vals.iter_mut().enumerate() {
            *v += nubar[i] * minus_h.values()[i];
        }
        Distribution::from_values(grid, vals).expect("gain matches grid")
    };
    let rhs = gbar.axpy(1.0, &gain_bar_minus_h);
    let fbar = solve_qbarbar_with_tol(kernel, &rhs, zero_tol.max(1e-7))?;

    let mut f = fbar.axpy(1.0, &h);
    let m = maxwellian(grid);
    f = f.axpy(-f.mass() / grid.mass_m(), &m);

    let residual = kernel.apply_qbar(&f).sub(g).weighted_norm() / scale;
    let stability_ratio = f.weighted_norm() / scale;
    Ok(QbarSolve {
        f,
        stability_ratio,
        residual,
    })
}

/// Zero-mass solution of the coupled system G(f) = g, A(Q(f)) = h for
/// zero-average g and symmetric zero-mass h.
pub fn solve_gyration_system(
    kernel: &CollisionKernel,
    g: &Distribution,
    h: &Distribution,
) -> Result<Distribution> {
    solve_gyration_system_with_tol(kernel, g, h, DEFAULT_ZERO_TOL)
}

pub fn solve_gyration_system_with_tol(
    kernel: &CollisionKernel,
    g: &Distribution,
    h: &Distribution,
    zero_tol: f64,
) -> Result<Distribution> {
    let g_scale = norm_or_one(g.weighted_norm());
    let h_scale = norm_or_one(h.weighted_norm());
    let g_avg = g.cyl_average().weighted_norm();
    if g_avg > zero_tol * g_scale {
        return Err(CoreError::Precondition(format!(
            "gyration system needs A(g) = 0; relative average {:.3e}",
            g_avg / g_scale
        )));
    }
    let h_aniso = h.sub(&h.cyl_average()).weighted_norm();
    if h_aniso > zero_tol * h_scale {
        return Err(CoreError::Precondition(format!(
            "gyration system needs symmetric h; relative anisotropy {:.3e}",
            h_aniso / h_scale
        )));
    }
    if h.mass().abs() > zero_tol * h_scale {
        return Err(CoreError::Precondition(format!(
            "gyration system needs zero-mass h; relative mass {:.3e}",
            h.mass().abs() / h_scale
        )));
    }

    let a1g = average_a1_with_tol(kernel, g, zero_tol)?;
    let nubar = kernel.nubar_slice();
    let grid = kernel.grid();
    let rhs = Distribution::from_values(
        grid,
        (0..grid.n_nodes())
            .map(|i| -nubar[i] * a1g.values()[i] + h.values()[i])
            .collect(),
    )
    .expect("rhs matches grid");
    Ok(solve_qbar_with_tol(kernel, &rhs, zero_tol.max(1e-7))?.f)
}

/// Compute the order-0 and order-1 expansion terms of the cell solutions.
pub fn compute_expansion(kernel: &CollisionKernel) -> Result<ExpansionTerms> {
    let grid = kernel.grid();
    let vz_m = moment_source(grid, 2);
    let vx_m = moment_source(grid, 0);
    let vy_m = moment_source(grid, 1);

    // parallel, order 0: Q_bbar(X) = -v_z M
    let xz0 = solve_qbarbar(kernel, &vz_m.scale(-1.0))?;

    // parallel, order 1: G(X) = Q(X0) + v_z M with A(Q(X)) = 0
    let g1 = kernel.apply_q(&xz0).axpy(1.0, &vz_m);
    let zero = Distribution::zeros(grid);
    let xz1 = solve_gyration_system_with_tol(kernel, &g1, &zero, 1e-6)?;

    // perpendicular, order 0: G(X) = v_perp M with A(Q(X)) = 0
    let xp0x = solve_gyration_system(kernel, &vx_m, &zero)?;
    let xp0y = solve_gyration_system(kernel, &vy_m, &zero)?;

    // perpendicular, order 1: G(X) = Q(X0) with A(Q(X)) = 0
    let xp1x = solve_gyration_system_with_tol(kernel, &kernel.apply_q(&xp0x), &zero, 1e-6)?;
    let xp1y = solve_gyration_system_with_tol(kernel, &kernel.apply_q(&xp0y), &zero, 1e-6)?;

    Ok(ExpansionTerms {
        xz0,
        xz1,
        xperp0: [xp0x, xp0y],
        xperp1: [xp1x, xp1y],
    })
}

/// Sidecar metadata stored next to serialized solutions.
#[derive(Debug, Serialize, Deserialize)]
pub struct CellSidecar {
    pub eta: f64,
    pub residual_norm: f64,
    pub mass_defect: f64,
    pub method: CellMethod,
    pub zero_tol: f64,
}

impl CellSolution {
    /// Write the three components as distribution CSVs plus a JSON sidecar.
    pub fn write_files(&self, dir: &Path, prefix: &str) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.x_perp[0].write_csv(&dir.join(format!("{prefix}_x_perp_x.csv")))?;
        self.x_perp[1].write_csv(&dir.join(format!("{prefix}_x_perp_y.csv")))?;
        self.x_z.write_csv(&dir.join(format!("{prefix}_x_z.csv")))?;
        let sidecar = CellSidecar {
            eta: self.eta,
            residual_norm: self.residual_norm,
            mass_defect: self.mass_defect,
            method: self.method,
            zero_tol: DEFAULT_ZERO_TOL,
        };
        let file = std::fs::File::create(dir.join(format!("{prefix}_meta.json")))?;
        serde_json::to_writer_pretty(file, &sidecar)?;
        Ok(())
    }
}

impl ExpansionTerms {
    pub fn write_files(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.xz0.write_csv(&dir.join("xz0.csv"))?;
        self.xz1.write_csv(&dir.join("xz1.csv"))?;
        self.xperp0[0].write_csv(&dir.join("xperp0_x.csv"))?;
        self.xperp0[1].write_csv(&dir.join("xperp0_y.csv"))?;
        self.xperp1[0].write_csv(&dir.join("xperp1_x.csv"))?;
        self.xperp1[1].write_csv(&dir.join("xperp1_y.csv"))?;
        Ok(())
    }
}

/// Moment source v_component * M, the driving term of the cell problems.
pub fn moment_source(grid: &Arc<VelocityGrid>, component: usize) -> Distribution {
    Distribution::from_values(
        grid,
        grid.nodes()
            .iter()
            .zip(grid.maxwellian_values())
            .map(|(v, m)| v[component] * m)
            .collect(),
    )
    .expect("moment source matches grid")
}
