//! Small smooth convex programs by the log-barrier method.
//!
//! Maximizes a concave `f0` subject to convex `f_i(x) <= 0`. Each centering
//! step is a damped Newton method on `t f0 + sum ln(-f_i)`; `t` grows until
//! the duality gap `m / t` falls below tolerance. A phase-one problem finds a
//! strictly feasible start when the given point is not.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Value, gradient and Hessian of a twice-differentiable function.
#[derive(Debug, Clone)]
pub struct Eval {
    pub value: f64,
    pub grad: DVector<f64>,
    pub hess: DMatrix<f64>,
}

pub trait ConvexProgram {
    fn dim(&self) -> usize;
    /// Concave objective to maximize.
    fn objective(&self, x: &DVector<f64>) -> Eval;
    fn num_constraints(&self) -> usize;
    /// Convex constraint `f_i(x) <= 0`.
    fn constraint(&self, i: usize, x: &DVector<f64>) -> Eval;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BarrierOptions {
    /// Target duality gap `m / t`.
    pub gap_tol: f64,
    /// Newton decrement threshold for one centering step.
    pub newton_tol: f64,
    pub t0: f64,
    pub growth: f64,
    pub max_newton: usize,
}

impl Default for BarrierOptions {
    fn default() -> Self {
        BarrierOptions { gap_tol: 1e-8, newton_tol: 1e-10, t0: 1.0, growth: 20.0, max_newton: 2_000 }
    }
}

#[derive(Debug, Clone)]
pub struct BarrierSolution {
    pub x: DVector<f64>,
    pub value: f64,
    /// Multipliers `lambda_i = -1 / (t f_i(x))`.
    pub duals: Vec<f64>,
    /// Largest of the scaled stationarity residual and the complementarity gap.
    pub kkt_residual: f64,
    pub newton_steps: usize,
}

/// Maximizes from a strictly feasible `x0`; falls back to a phase-one search
/// when `x0` is not strictly feasible. Returns `Ok(None)` when no strictly
/// feasible point exists.
pub fn maximize<P: ConvexProgram>(p: &P, x0: DVector<f64>, opts: &BarrierOptions) -> Result<Option<BarrierSolution>> {
    let start = if strictly_feasible(p, &x0) {
        x0
    } else {
        match phase_one(p, x0, opts)? {
            Some(x) => x,
            None => return Ok(None),
        }
    };
    barrier(p, start, opts, |_| false).map(Some)
}

pub fn strictly_feasible<P: ConvexProgram>(p: &P, x: &DVector<f64>) -> bool {
    x.iter().all(|v| v.is_finite()) && (0..p.num_constraints()).all(|i| p.constraint(i, x).value < 0.0)
}

/// Worst constraint value at `x`.
pub fn max_constraint<P: ConvexProgram>(p: &P, x: &DVector<f64>) -> f64 {
    (0..p.num_constraints()).map(|i| p.constraint(i, x).value).fold(f64::NEG_INFINITY, f64::max)
}

fn barrier_eval<P: ConvexProgram>(p: &P, x: &DVector<f64>, t: f64, with_derivs: bool) -> Option<Eval> {
    let n = p.dim();
    let obj = p.objective(x);
    if !obj.value.is_finite() {
        return None;
    }
    let mut value = t * obj.value;
    let (mut grad, mut hess) = if with_derivs {
        (obj.grad * t, obj.hess * t)
    } else {
        (DVector::zeros(n), DMatrix::zeros(n, n))
    };
    for i in 0..p.num_constraints() {
        let c = p.constraint(i, x);
        if !(c.value < 0.0) {
            return None;
        }
        value += (-c.value).ln();
        if with_derivs {
            grad += &c.grad / c.value;
            hess += &c.hess / c.value;
            hess -= (&c.grad * c.grad.transpose()) / (c.value * c.value);
        }
    }
    Some(Eval { value, grad, hess })
}

const MAX_CENTERING_STEPS: usize = 100;

/// Path-following loop. `stop` may end the run early after any Newton step.
fn barrier<P: ConvexProgram>(
    p: &P,
    mut x: DVector<f64>,
    opts: &BarrierOptions,
    stop: impl Fn(&DVector<f64>) -> bool,
) -> Result<BarrierSolution> {
    let m = p.num_constraints().max(1) as f64;
    let mut t = opts.t0;
    let mut steps = 0;
    loop {
        // Centering by damped Newton; a stalled centering still advances `t`.
        for _ in 0..MAX_CENTERING_STEPS {
            let e = barrier_eval(p, &x, t, true)
                .ok_or_else(|| Error::Numerical("barrier iterate left the feasible set".into()))?;
            let neg_hess = -e.hess.clone();
            let dx = match neg_hess.clone().cholesky() {
                Some(ch) => ch.solve(&e.grad),
                None => {
                    let shift = 1e-10 * (1.0 + neg_hess.diagonal().amax());
                    let reg = neg_hess + DMatrix::identity(x.len(), x.len()) * shift;
                    reg.lu()
                        .solve(&e.grad)
                        .ok_or_else(|| Error::Numerical("singular Newton system".into()))?
                }
            };
            let decrement = e.grad.dot(&dx);
            if decrement / 2.0 <= opts.newton_tol || !decrement.is_finite() {
                break;
            }
            let mut step = 1.0;
            let accepted = loop {
                let cand = &x + &dx * step;
                if let Some(v) = barrier_eval(p, &cand, t, false) {
                    if v.value >= e.value + 0.25 * step * decrement {
                        break Some(cand);
                    }
                }
                step *= 0.5;
                if step < 1e-16 {
                    break None;
                }
            };
            steps += 1;
            match accepted {
                Some(cand) => x = cand,
                None => break,
            }
            if stop(&x) {
                return Ok(finish(p, x, t, steps));
            }
            if steps >= opts.max_newton {
                return Err(Error::Numerical("barrier method exceeded its Newton budget".into()));
            }
        }
        if m / t <= opts.gap_tol {
            return Ok(finish(p, x, t, steps));
        }
        t *= opts.growth;
    }
}

fn finish<P: ConvexProgram>(p: &P, x: DVector<f64>, t: f64, newton_steps: usize) -> BarrierSolution {
    let obj = p.objective(&x);
    let cons: Vec<Eval> = (0..p.num_constraints()).map(|i| p.constraint(i, &x)).collect();
    let scale = 1.0 + obj.grad.amax();
    // Central-path duals lose precision once slacks approach rounding level,
    // so a least-squares refit on the near-active set is tried as well.
    let central: Vec<f64> = cons.iter().map(|c| -1.0 / (t * c.value)).collect();
    let refit = refit_duals(&obj, &cons, &central);
    let central_res = kkt_residual(&obj, &cons, &central, scale);
    let (duals, kkt) = match refit {
        Some(d) => {
            let r = kkt_residual(&obj, &cons, &d, scale);
            if r < central_res { (d, r) } else { (central, central_res) }
        }
        None => (central, central_res),
    };
    BarrierSolution { value: obj.value, x, duals, kkt_residual: kkt, newton_steps }
}

fn kkt_residual(obj: &Eval, cons: &[Eval], duals: &[f64], scale: f64) -> f64 {
    let mut stationarity = obj.grad.clone();
    let mut complementarity: f64 = 0.0;
    for (c, &l) in cons.iter().zip(duals) {
        stationarity -= &c.grad * l;
        complementarity = complementarity.max((l * c.value).abs());
    }
    (stationarity.amax() / scale).max(complementarity)
}

/// Nonnegative least-squares duals on constraints whose central dual is not
/// negligible; negative components are dropped and the fit repeated.
fn refit_duals(obj: &Eval, cons: &[Eval], central: &[f64]) -> Option<Vec<f64>> {
    let top = central.iter().copied().fold(0.0, f64::max);
    let mut active: Vec<usize> = (0..cons.len()).filter(|&i| central[i] > 1e-6 * top).collect();
    while !active.is_empty() {
        let n = obj.grad.len();
        let jac = DMatrix::from_fn(n, active.len(), |r, c| cons[active[c]].grad[r]);
        let sol = jac.svd(true, true).solve(&obj.grad, 1e-14).ok()?;
        if let Some(neg) = (0..active.len()).find(|&i| sol[i] < 0.0) {
            active.remove(neg);
            continue;
        }
        let mut duals = vec![0.0; cons.len()];
        for (k, &i) in active.iter().enumerate() {
            duals[i] = sol[k];
        }
        return Some(duals);
    }
    None
}

/// Phase one over `(x, s)`: maximize `-s` subject to `f_i(x) <= s` and `s >= -1`.
struct PhaseOne<'a, P> {
    inner: &'a P,
}

impl<P: ConvexProgram> ConvexProgram for PhaseOne<'_, P> {
    fn dim(&self) -> usize {
        self.inner.dim() + 1
    }

    fn objective(&self, z: &DVector<f64>) -> Eval {
        let n = self.dim();
        let mut grad = DVector::zeros(n);
        grad[n - 1] = -1.0;
        Eval { value: -z[n - 1], grad, hess: DMatrix::zeros(n, n) }
    }

    fn num_constraints(&self) -> usize {
        self.inner.num_constraints() + 1
    }

    fn constraint(&self, i: usize, z: &DVector<f64>) -> Eval {
        let n = self.dim();
        if i == self.inner.num_constraints() {
            let mut grad = DVector::zeros(n);
            grad[n - 1] = -1.0;
            return Eval { value: -1.0 - z[n - 1], grad, hess: DMatrix::zeros(n, n) };
        }
        let x = z.rows(0, n - 1).into_owned();
        let c = self.inner.constraint(i, &x);
        let mut grad = DVector::zeros(n);
        grad.rows_mut(0, n - 1).copy_from(&c.grad);
        grad[n - 1] = -1.0;
        let mut hess = DMatrix::zeros(n, n);
        hess.view_mut((0, 0), (n - 1, n - 1)).copy_from(&c.hess);
        Eval { value: c.value - z[n - 1], grad, hess }
    }
}

/// Margin at which a phase-one point counts as comfortably interior.
const PHASE_ONE_MARGIN: f64 = 1e-4;

fn phase_one<P: ConvexProgram>(p: &P, x0: DVector<f64>, opts: &BarrierOptions) -> Result<Option<DVector<f64>>> {
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("phase one needs a finite start".into()));
    }
    let n = p.dim();
    let worst = max_constraint(p, &x0);
    if !worst.is_finite() {
        return Ok(None);
    }
    let mut z = DVector::zeros(n + 1);
    z.rows_mut(0, n).copy_from(&x0);
    z[n] = worst.max(-1.0 + 1e-3) + 1.0;
    let aux = PhaseOne { inner: p };
    let sol = barrier(&aux, z, opts, |z| z[n] < -PHASE_ONE_MARGIN)?;
    let x = sol.x.rows(0, n).into_owned();
    Ok(strictly_feasible(p, &x).then_some(x))
}
