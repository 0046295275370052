//! Homogeneous self-dual interior-point method for real block SDPs
//!
//! ```text
//! min ⟨c, x⟩  s.t.  ⟨a_i, x⟩ = b_i,  x ≽ 0
//! max bᵀy     s.t.  c − Σ y_i a_i = z ≽ 0
//! ```
//!
//! with Nesterov–Todd scaling and a Mehrotra predictor–corrector. Rows are
//! assumed linearly independent.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::{SolveStatus, SolverSettings};

pub(crate) type Blocks = Vec<DMatrix<f64>>;

pub(crate) struct RealProblem {
    pub dims: Vec<usize>,
    pub c: Blocks,
    /// Sparse-by-block rows: `(block, coefficient)`.
    pub rows: Vec<Vec<(usize, DMatrix<f64>)>>,
    pub b: DVector<f64>,
}

pub(crate) struct RealSolution {
    pub status: SolveStatus,
    /// Normalized by `τ` when optimal; raw ray otherwise.
    pub x: Blocks,
    pub y: DVector<f64>,
    pub z: Blocks,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub gap: f64,
}

fn dot(a: &[DMatrix<f64>], b: &[DMatrix<f64>]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p.dot(q)).sum()
}

fn sym(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

fn max_abs(blocks: &[DMatrix<f64>]) -> f64 {
    blocks.iter().flat_map(|m| m.iter()).fold(0.0_f64, |a, v| a.max(v.abs()))
}

impl RealProblem {
    fn apply(&self, x: &[DMatrix<f64>]) -> DVector<f64> {
        DVector::from_iterator(
            self.rows.len(),
            self.rows.iter().map(|row| row.iter().map(|(k, a)| a.dot(&x[*k])).sum::<f64>()),
        )
    }

    fn adjoint(&self, y: &DVector<f64>) -> Blocks {
        let mut out: Blocks = self.dims.iter().map(|&n| DMatrix::zeros(n, n)).collect();
        for (i, row) in self.rows.iter().enumerate() {
            for (k, a) in row {
                out[*k] += a * y[i];
            }
        }
        out
    }
}

/// Any `L` with `m = L Lᵀ`.
fn factor(m: &DMatrix<f64>) -> DMatrix<f64> {
    if let Some(ch) = m.clone().cholesky() {
        return ch.l();
    }
    let eig = SymmetricEigen::new(m.clone());
    let d = eig.eigenvalues.map(|v| v.max(1e-300).sqrt());
    eig.eigenvectors * DMatrix::from_diagonal(&d)
}

struct Scaling {
    r: DMatrix<f64>,
    rinv: DMatrix<f64>,
    lambda: DVector<f64>,
    w: DMatrix<f64>,
}

impl Scaling {
    fn new(x: &DMatrix<f64>, z: &DMatrix<f64>) -> Scaling {
        let lx = factor(x);
        let lz = factor(z);
        let svd = (lz.transpose() * &lx).svd(true, true);
        let u = svd.u.expect("svd requested u");
        let vt = svd.v_t.expect("svd requested v");
        let lambda = svd.singular_values.map(|s| s.max(1e-300));
        let isq = DMatrix::from_diagonal(&lambda.map(|l| 1.0 / l.sqrt()));
        let r = &lx * vt.transpose() * &isq;
        let rinv = &isq * u.transpose() * lz.transpose();
        let w = sym(&r * r.transpose());
        Scaling { r, rinv, lambda, w }
    }

    fn wmw(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        sym(&self.w * m * &self.w)
    }

    /// Scaled primal direction `R⁻¹ dx R⁻ᵀ`.
    fn scale_x(&self, dx: &DMatrix<f64>) -> DMatrix<f64> {
        sym(&self.rinv * dx * self.rinv.transpose())
    }

    /// Scaled dual direction `Rᵀ dz R`.
    fn scale_z(&self, dz: &DMatrix<f64>) -> DMatrix<f64> {
        sym(self.r.transpose() * dz * &self.r)
    }

    /// Largest `α` keeping `Λ + α d ≽ 0`.
    fn max_step(&self, d: &DMatrix<f64>) -> f64 {
        let s = self.lambda.map(|l| 1.0 / l.sqrt());
        let n = d.nrows();
        let m = DMatrix::from_fn(n, n, |i, j| d[(i, j)] * s[i] * s[j]);
        let emin = SymmetricEigen::new(m).eigenvalues.min();
        if emin >= 0.0 {
            f64::INFINITY
        } else {
            -1.0 / emin
        }
    }
}

fn jordan(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    (a * b + b * a) * 0.5
}

enum SchurFactor {
    Chol(nalgebra::Cholesky<f64, nalgebra::Dyn>),
    Lu(nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>),
}

impl SchurFactor {
    fn new(m: DMatrix<f64>) -> Option<SchurFactor> {
        if let Some(ch) = m.clone().cholesky() {
            return Some(SchurFactor::Chol(ch));
        }
        let scale = m.diagonal().amax().max(1e-300);
        for k in [1e-14, 1e-12, 1e-10] {
            let shifted = &m + DMatrix::identity(m.nrows(), m.nrows()) * (k * scale);
            if let Some(ch) = shifted.cholesky() {
                return Some(SchurFactor::Chol(ch));
            }
        }
        let lu = m.lu();
        if lu.is_invertible() {
            Some(SchurFactor::Lu(lu))
        } else {
            None
        }
    }

    fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        match self {
            SchurFactor::Chol(c) => c.solve(rhs),
            SchurFactor::Lu(l) => l.solve(rhs).unwrap_or_else(|| DVector::zeros(rhs.len())),
        }
    }
}

struct Iterate {
    x: Blocks,
    y: DVector<f64>,
    z: Blocks,
    tau: f64,
    kappa: f64,
}

struct Direction {
    dx: Blocks,
    dy: DVector<f64>,
    dz: Blocks,
    dtau: f64,
    dkappa: f64,
}

struct Residuals {
    rp: DVector<f64>,
    rd: Blocks,
    rg: f64,
}

struct Newton<'a> {
    p: &'a RealProblem,
    sc: Vec<Scaling>,
    schur: SchurFactor,
    g: DVector<f64>,
    v: DVector<f64>,
    s0: f64,
}

impl<'a> Newton<'a> {
    fn new(p: &'a RealProblem, it: &Iterate) -> Option<Newton<'a>> {
        let sc: Vec<Scaling> = it.x.iter().zip(&it.z).map(|(x, z)| Scaling::new(x, z)).collect();
        let m = p.rows.len();
        let mut schur = DMatrix::zeros(m, m);
        let mut by_block: Vec<Vec<(usize, &DMatrix<f64>)>> = vec![Vec::new(); p.dims.len()];
        for (i, row) in p.rows.iter().enumerate() {
            for (k, a) in row {
                by_block[*k].push((i, a));
            }
        }
        for (k, entries) in by_block.iter().enumerate() {
            for (ii, &(i, ai)) in entries.iter().enumerate() {
                let wa = &sc[k].w * ai * &sc[k].w;
                for &(j, aj) in &entries[ii..] {
                    let v = wa.dot(aj);
                    schur[(i, j)] += v;
                    if i != j {
                        schur[(j, i)] += v;
                    }
                }
            }
        }
        let schur = SchurFactor::new(schur)?;
        let wcw: Blocks = sc.iter().zip(&p.c).map(|(s, c)| s.wmw(c)).collect();
        let g = p.apply(&wcw);
        let v = schur.solve(&(&g + &p.b));
        let s0 = dot(&p.c, &wcw);
        Some(Newton { p, sc, schur, g, v, s0 })
    }

    fn solve(&self, it: &Iterate, res: &Residuals, eta: f64, rc: &[DMatrix<f64>], rtk: f64) -> Direction {
        let p = self.p;
        let pmat: Blocks = self
            .sc
            .iter()
            .zip(rc)
            .map(|(s, r)| {
                let n = r.nrows();
                let rt = DMatrix::from_fn(n, n, |i, j| 2.0 * r[(i, j)] / (s.lambda[i] + s.lambda[j]));
                sym(&s.r * rt * s.r.transpose())
            })
            .collect();
        let q: Blocks = self.sc.iter().zip(&res.rd).map(|(s, r)| s.wmw(r)).collect();
        let h1 = &res.rp * eta - p.apply(&pmat) + p.apply(&q) * eta;
        let u = self.schur.solve(&h1);
        let bg = &p.b - &self.g;
        let rhs = -eta * res.rg + dot(&p.c, &pmat) - eta * dot(&p.c, &q) + rtk / it.tau;
        let den = bg.dot(&self.v) + self.s0 + it.kappa / it.tau;
        let dtau = (rhs - bg.dot(&u)) / den;
        let dy = &u + &self.v * dtau;
        let aty = p.adjoint(&dy);
        let dz: Blocks = res
            .rd
            .iter()
            .zip(&aty)
            .zip(&p.c)
            .map(|((r, a), c)| sym(r * eta - a + c * dtau))
            .collect();
        let dx: Blocks = pmat.iter().zip(&dz).zip(&self.sc).map(|((pm, d), s)| sym(pm - s.wmw(d))).collect();
        let dkappa = (rtk - it.kappa * dtau) / it.tau;
        Direction { dx, dy, dz, dtau, dkappa }
    }

    fn scaled(&self, d: &Direction) -> (Blocks, Blocks) {
        let dxs = self.sc.iter().zip(&d.dx).map(|(s, m)| s.scale_x(m)).collect();
        let dzs = self.sc.iter().zip(&d.dz).map(|(s, m)| s.scale_z(m)).collect();
        (dxs, dzs)
    }

    fn step(&self, it: &Iterate, d: &Direction, dxs: &[DMatrix<f64>], dzs: &[DMatrix<f64>]) -> f64 {
        let mut a = f64::INFINITY;
        for (s, (dx, dz)) in self.sc.iter().zip(dxs.iter().zip(dzs)) {
            a = a.min(s.max_step(dx)).min(s.max_step(dz));
        }
        if d.dtau < 0.0 {
            a = a.min(-it.tau / d.dtau);
        }
        if d.dkappa < 0.0 {
            a = a.min(-it.kappa / d.dkappa);
        }
        a
    }
}

pub(crate) fn solve(p: &RealProblem, settings: &SolverSettings) -> RealSolution {
    let nu: usize = p.dims.iter().sum();
    let b_inf = p.b.amax();
    let c_inf = max_abs(&p.c);
    let alpha0 = 1.0 + b_inf;
    let beta0 = 1.0 + c_inf;
    let mut it = Iterate {
        x: p.dims.iter().map(|&n| DMatrix::identity(n, n) * alpha0).collect(),
        y: DVector::zeros(p.rows.len()),
        z: p.dims.iter().map(|&n| DMatrix::identity(n, n) * beta0).collect(),
        tau: 1.0,
        kappa: alpha0 * beta0,
    };

    let mut last = (f64::INFINITY, f64::INFINITY, f64::INFINITY);
    // After the acceptance tolerances are met, keep iterating a little
    // towards the polish targets and fall back to the accepted point.
    let mut accepted: Option<RealSolution> = None;
    let mut polish_left = settings.polish_iterations;
    for iter in 0..=settings.max_iterations {
        let ax = p.apply(&it.x);
        let aty = p.adjoint(&it.y);
        let rp = &p.b * it.tau - &ax;
        let rd: Blocks = p
            .c
            .iter()
            .zip(&aty)
            .zip(&it.z)
            .map(|((c, a), z)| c * it.tau - a - z)
            .collect();
        let cx = dot(&p.c, &it.x);
        let by = p.b.dot(&it.y);
        let rg = by - cx - it.kappa;

        let pres = rp.amax() / it.tau / (1.0 + b_inf);
        let dres = max_abs(&rd) / it.tau / (1.0 + c_inf);
        let pobj = cx / it.tau;
        let dobj = by / it.tau;
        let gap = (pobj - dobj).abs() / (1.0 + pobj.abs() + dobj.abs());
        last = (pres, dres, gap);

        let finish = |status: SolveStatus, it: &Iterate, normalize: bool| {
            let s = if normalize { 1.0 / it.tau } else { 1.0 };
            RealSolution {
                status,
                x: it.x.iter().map(|m| m * s).collect(),
                y: &it.y * s,
                z: it.z.iter().map(|m| m * s).collect(),
                iterations: iter,
                primal_residual: pres,
                dual_residual: dres,
                gap,
            }
        };

        if pres <= settings.residual_tol && dres <= settings.residual_tol && gap <= settings.gap_tol {
            let polish_res = settings.residual_tol * settings.polish_factor;
            let polished =
                pres <= polish_res && dres <= polish_res && gap <= settings.gap_tol * settings.polish_factor;
            if polished || polish_left == 0 {
                return finish(SolveStatus::Optimal, &it, true);
            }
            polish_left -= 1;
            accepted = Some(finish(SolveStatus::Optimal, &it, true));
        } else if let Some(a) = accepted.take() {
            return a;
        }
        if by > 0.0 {
            let ray: Blocks = aty.iter().zip(&it.z).map(|(a, z)| a + z).collect();
            if max_abs(&ray) / by <= settings.residual_tol {
                return finish(SolveStatus::PrimalInfeasible, &it, false);
            }
        }
        if cx < 0.0 && ax.amax() / -cx <= settings.residual_tol {
            return finish(SolveStatus::DualInfeasible, &it, false);
        }
        if iter == settings.max_iterations {
            break;
        }

        let Some(newton) = Newton::new(p, &it) else {
            return accepted.unwrap_or_else(|| finish(SolveStatus::NumericalFailure, &it, true));
        };
        let res = Residuals { rp, rd, rg };
        let mu = (dot(&it.x, &it.z) + it.tau * it.kappa) / (nu as f64 + 1.0);

        let lam2: Blocks = newton.sc.iter().map(|s| DMatrix::from_diagonal(&s.lambda.map(|l| -l * l))).collect();
        let aff = newton.solve(&it, &res, 1.0, &lam2, -it.tau * it.kappa);
        let (dxa, dza) = newton.scaled(&aff);
        let alpha_aff = newton.step(&it, &aff, &dxa, &dza).min(1.0);
        let sigma = (1.0 - alpha_aff).powi(3).clamp(0.0, 1.0);

        let rc: Blocks = lam2
            .iter()
            .zip(dxa.iter().zip(&dza))
            .map(|(l2, (dx, dz))| {
                let n = l2.nrows();
                l2 + DMatrix::identity(n, n) * (sigma * mu) - jordan(dx, dz)
            })
            .collect();
        let rtk = -it.tau * it.kappa + sigma * mu - aff.dtau * aff.dkappa;
        let d = newton.solve(&it, &res, 1.0 - sigma, &rc, rtk);
        let (dxs, dzs) = newton.scaled(&d);
        let alpha = (settings.step_fraction * newton.step(&it, &d, &dxs, &dzs)).min(1.0);
        if !alpha.is_finite() || alpha < 1e-14 {
            return accepted.unwrap_or_else(|| finish(SolveStatus::NumericalFailure, &it, true));
        }

        for (x, dx) in it.x.iter_mut().zip(&d.dx) {
            *x = sym(&*x + dx * alpha);
        }
        for (z, dz) in it.z.iter_mut().zip(&d.dz) {
            *z = sym(&*z + dz * alpha);
        }
        it.y += &d.dy * alpha;
        it.tau += alpha * d.dtau;
        it.kappa += alpha * d.dkappa;
    }

    if let Some(a) = accepted {
        return a;
    }
    let s = 1.0 / it.tau;
    RealSolution {
        status: SolveStatus::NumericalFailure,
        x: it.x.iter().map(|m| m * s).collect(),
        y: &it.y * s,
        z: it.z.iter().map(|m| m * s).collect(),
        iterations: settings.max_iterations,
        primal_residual: last.0,
        dual_residual: last.1,
        gap: last.2,
    }
}
