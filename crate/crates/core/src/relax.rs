//! The residual-augmented accumulator dynamics, evolved matrix-free.
//!
//! The joint state z = (x, r, s) follows
//!     x' = r,    r' = -G^T s,    s' = G r - s,
//! so a cold start (x, r, s) = (0, b, 0) drives x toward the solution of
//! G^T G x = b while the residual block w = (r, s) decays. The affine
//! invariant r + G^T (G x - s) = b is preserved exactly by Runge-Kutta
//! steps, which is what the per-step invariant monitor checks.

use crate::error::{Error, Result};
use crate::fem::EllipticSystem;
use crate::linalg::{dot, norm};

#[derive(Debug, Clone)]
pub struct RelaxState {
    pub t: f64,
    /// Solution accumulator.
    pub x: Vec<f64>,
    /// Conservation residual.
    pub r: Vec<f64>,
    /// Flux residual.
    pub s: Vec<f64>,
}

impl RelaxState {
    /// Cold start: x = 0, r = b, s = 0 at t = 0.
    pub fn cold(system: &EllipticSystem) -> Self {
        RelaxState {
            t: 0.0,
            x: vec![0.0; system.n_dof()],
            r: system.load.clone(),
            s: vec![0.0; system.gradient_rows()],
        }
    }

    /// Warm start from a guess x0 and flux guess q0:
    /// r = b - G^T q0, s = G x0 - q0.
    pub fn warm(system: &EllipticSystem, x0: &[f64], q0: &[f64]) -> Result<Self> {
        if x0.len() != system.n_dof() || q0.len() != system.gradient_rows() {
            return Err(Error::DimensionMismatch(
                "warm start: x0 / q0 lengths".into(),
            ));
        }
        let gtq = system.gradient.spmv_transpose(q0)?;
        let r: Vec<f64> = system.load.iter().zip(&gtq).map(|(b, g)| b - g).collect();
        let gx = system.gradient.spmv(x0)?;
        let s: Vec<f64> = gx.iter().zip(q0).map(|(g, q)| g - q).collect();
        Ok(RelaxState {
            t: 0.0,
            x: x0.to_vec(),
            r,
            s,
        })
    }

    /// ||w|| with w = (r, s).
    pub fn residual_norm(&self) -> f64 {
        (dot(&self.r, &self.r) + dot(&self.s, &self.s)).sqrt()
    }

    pub fn solution_norm(&self) -> f64 {
        norm(&self.x)
    }

    /// Residual-register probability ||w||^2 / (||x||^2 + ||w||^2).
    pub fn residual_probability(&self) -> Result<f64> {
        let w2 = dot(&self.r, &self.r) + dot(&self.s, &self.s);
        let x2 = dot(&self.x, &self.x);
        if w2 + x2 == 0.0 {
            return Err(Error::UndefinedProbability);
        }
        Ok(w2 / (x2 + w2))
    }

    /// Solution-block weight, the complement of the residual probability.
    pub fn solution_block_weight(&self) -> Result<f64> {
        Ok(1.0 - self.residual_probability()?)
    }

    /// Algebraic residual r - G^T s; equals b - A x along consistent states.
    pub fn algebraic_residual(&self, system: &EllipticSystem) -> Result<Vec<f64>> {
        let gts = system.gradient.spmv_transpose(&self.s)?;
        Ok(self.r.iter().zip(&gts).map(|(r, g)| r - g).collect())
    }

    /// Recovered flux q = G x - s.
    pub fn recover_flux(&self, system: &EllipticSystem) -> Result<Vec<f64>> {
        let gx = system.gradient.spmv(&self.x)?;
        Ok(gx.iter().zip(&self.s).map(|(g, s)| g - s).collect())
    }

    /// || r + G^T (G x - s) - b || / ||b||, zero for exact trajectories.
    pub fn invariant_residual(&self, system: &EllipticSystem) -> Result<f64> {
        let q = self.recover_flux(system)?;
        let gtq = system.gradient.spmv_transpose(&q)?;
        let mut sq = 0.0;
        for i in 0..self.r.len() {
            let d = self.r[i] + gtq[i] - system.load[i];
            sq += d * d;
        }
        Ok(sq.sqrt() / norm(&system.load).max(f64::MIN_POSITIVE))
    }
}

/// Time derivative (dx, dr, ds) of the joint dynamics; two sparse products.
pub fn apply_generator(
    system: &EllipticSystem,
    state: &RelaxState,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let dx = state.r.clone();
    let gts = system.gradient.spmv_transpose(&state.s)?;
    let dr: Vec<f64> = gts.iter().map(|g| -g).collect();
    let gr = system.gradient.spmv(&state.r)?;
    let ds: Vec<f64> = gr.iter().zip(&state.s).map(|(g, s)| g - s).collect();
    Ok((dx, dr, ds))
}

/// Norms of the Hermitian and damping parts of the residual-block generator,
/// reported as a diagnostic only.
pub struct GeneratorNorms {
    pub hermitian: f64,
    pub damping: f64,
}

pub fn generator_norms(system: &EllipticSystem) -> GeneratorNorms {
    GeneratorNorms {
        hermitian: system.norm_g_est(),
        damping: 1.0,
    }
}

/// Fixed-step policy: dt = theta / (1 + ||G||).
#[derive(Debug, Clone, Copy)]
pub struct StepPolicy {
    pub theta: f64,
}

impl Default for StepPolicy {
    fn default() -> Self {
        StepPolicy { theta: 0.5 }
    }
}

impl StepPolicy {
    pub fn new(theta: f64) -> Result<Self> {
        if !(theta > 0.0 && theta <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "step policy: theta = {theta} outside (0, 1]"
            )));
        }
        Ok(StepPolicy { theta })
    }

    pub fn step_size(&self, system: &EllipticSystem) -> f64 {
        self.theta / (1.0 + system.norm_g_est())
    }
}

struct Workspace {
    kx: [Vec<f64>; 4],
    kr: [Vec<f64>; 4],
    ks: [Vec<f64>; 4],
    tmp: RelaxState,
}

impl Workspace {
    fn new(state: &RelaxState) -> Self {
        let zx = vec![0.0; state.x.len()];
        let zr = vec![0.0; state.r.len()];
        let zs = vec![0.0; state.s.len()];
        Workspace {
            kx: [zx.clone(), zx.clone(), zx.clone(), zx],
            kr: [zr.clone(), zr.clone(), zr.clone(), zr],
            ks: [zs.clone(), zs.clone(), zs.clone(), zs],
            tmp: state.clone(),
        }
    }
}

fn stage(
    system: &EllipticSystem,
    base: &RelaxState,
    ws: &mut Workspace,
    from: usize,
    into: usize,
    frac: f64,
    dt: f64,
) -> Result<()> {
    if frac == 0.0 {
        ws.tmp.x.copy_from_slice(&base.x);
        ws.tmp.r.copy_from_slice(&base.r);
        ws.tmp.s.copy_from_slice(&base.s);
    } else {
        for i in 0..base.x.len() {
            ws.tmp.x[i] = base.x[i] + frac * dt * ws.kx[from][i];
        }
        for i in 0..base.r.len() {
            ws.tmp.r[i] = base.r[i] + frac * dt * ws.kr[from][i];
        }
        for i in 0..base.s.len() {
            ws.tmp.s[i] = base.s[i] + frac * dt * ws.ks[from][i];
        }
    }
    let (dx, dr, ds) = apply_generator(system, &ws.tmp)?;
    ws.kx[into] = dx;
    ws.kr[into] = dr;
    ws.ks[into] = ds;
    Ok(())
}

/// One classical Runge-Kutta step of (possibly negative) size dt.
pub(crate) fn rk4_step(
    system: &EllipticSystem,
    state: &RelaxState,
    dt: f64,
) -> Result<RelaxState> {
    let mut ws = Workspace::new(state);
    rk4_step_into(system, state, dt, &mut ws)
}

fn rk4_step_into(
    system: &EllipticSystem,
    state: &RelaxState,
    dt: f64,
    ws: &mut Workspace,
) -> Result<RelaxState> {
    stage(system, state, ws, 0, 0, 0.0, dt)?;
    stage(system, state, ws, 0, 1, 0.5, dt)?;
    stage(system, state, ws, 1, 2, 0.5, dt)?;
    stage(system, state, ws, 2, 3, 1.0, dt)?;
    let mut next = state.clone();
    for i in 0..state.x.len() {
        next.x[i] += dt / 6.0
            * (ws.kx[0][i] + 2.0 * ws.kx[1][i] + 2.0 * ws.kx[2][i] + ws.kx[3][i]);
    }
    for i in 0..state.r.len() {
        next.r[i] += dt / 6.0
            * (ws.kr[0][i] + 2.0 * ws.kr[1][i] + 2.0 * ws.kr[2][i] + ws.kr[3][i]);
    }
    for i in 0..state.s.len() {
        next.s[i] += dt / 6.0
            * (ws.ks[0][i] + 2.0 * ws.ks[1][i] + 2.0 * ws.ks[2][i] + ws.ks[3][i]);
    }
    next.t = state.t + dt;
    Ok(next)
}

fn all_finite(state: &RelaxState) -> bool {
    state.x.iter().all(|v| v.is_finite())
        && state.r.iter().all(|v| v.is_finite())
        && state.s.iter().all(|v| v.is_finite())
}

/// Evolves to `t_target` with a per-step callback (step index, state).
fn evolve_with(
    system: &EllipticSystem,
    mut state: RelaxState,
    t_target: f64,
    policy: &StepPolicy,
    mut on_step: impl FnMut(usize, &RelaxState),
) -> Result<RelaxState> {
    if t_target < state.t {
        return Err(Error::InvalidParameter(format!(
            "evolve: target time {t_target} before state time {}",
            state.t
        )));
    }
    let dt = policy.step_size(system);
    let mut ws = Workspace::new(&state);
    let mut step = 0usize;
    while state.t < t_target {
        let remaining = t_target - state.t;
        let this_dt = if remaining <= dt * (1.0 + 1e-9) {
            remaining
        } else {
            dt
        };
        state = rk4_step_into(system, &state, this_dt, &mut ws)?;
        if remaining <= dt * (1.0 + 1e-9) {
            state.t = t_target;
        }
        step += 1;
        if !all_finite(&state) {
            return Err(Error::Divergence { step, t: state.t });
        }
        on_step(step, &state);
    }
    Ok(state)
}

/// Evolves the state to `t_target` with fixed-step RK4.
pub fn evolve(
    system: &EllipticSystem,
    state: RelaxState,
    t_target: f64,
    policy: &StepPolicy,
) -> Result<RelaxState> {
    evolve_with(system, state, t_target, policy, |_, _| {})
}

/// Evolves while tracking the worst per-step invariant residual.
pub fn evolve_invariant_max(
    system: &EllipticSystem,
    state: RelaxState,
    t_target: f64,
    policy: &StepPolicy,
) -> Result<(RelaxState, f64)> {
    let mut worst = state.invariant_residual(system)?;
    let mut err: Option<Error> = None;
    let out = evolve_with(system, state, t_target, policy, |_, st| {
        if err.is_none() {
            match st.invariant_residual(system) {
                Ok(v) => worst = worst.max(v),
                Err(e) => err = Some(e),
            }
        }
    })?;
    if let Some(e) = err {
        return Err(e);
    }
    Ok((out, worst))
}

#[derive(Debug, Clone)]
pub struct TrajectorySample {
    pub t: f64,
    pub norm_x: f64,
    pub norm_w: f64,
    pub p_res: f64,
    pub norm_ra: f64,
    /// Relative error against the supplied reference, when one was given.
    pub rel_err: Option<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    pub samples: Vec<TrajectorySample>,
    /// Full state snapshots, kept only on request.
    pub states: Vec<RelaxState>,
}

#[derive(Debug, Clone, Copy)]
pub struct TraceSpec {
    /// Sample every `stride` steps.
    pub stride: usize,
    /// Keep full state snapshots alongside the scalar samples.
    pub keep_states: bool,
}

impl Default for TraceSpec {
    fn default() -> Self {
        TraceSpec {
            stride: 10,
            keep_states: false,
        }
    }
}

/// Evolves and records a sampled trajectory (entry state, every `stride`
/// steps, and the final state).
pub fn evolve_traced(
    system: &EllipticSystem,
    state: RelaxState,
    t_target: f64,
    policy: &StepPolicy,
    trace: &TraceSpec,
    reference: Option<&[f64]>,
) -> Result<(RelaxState, Trajectory)> {
    let stride = trace.stride.max(1);
    let mut traj = Trajectory::default();
    push_sample(system, &state, reference, trace.keep_states, &mut traj)?;
    let mut err: Option<Error> = None;
    let final_state = evolve_with(system, state, t_target, policy, |step, st| {
        if err.is_none() && (step % stride == 0 || st.t == t_target) {
            if let Err(e) = push_sample(system, st, reference, trace.keep_states, &mut traj) {
                err = Some(e);
            }
        }
    })?;
    if let Some(e) = err {
        return Err(e);
    }
    Ok((final_state, traj))
}

fn push_sample(
    system: &EllipticSystem,
    state: &RelaxState,
    reference: Option<&[f64]>,
    keep: bool,
    traj: &mut Trajectory,
) -> Result<()> {
    if let Some(last) = traj.samples.last() {
        if state.t <= last.t {
            return Ok(());
        }
    }
    let w2 = dot(&state.r, &state.r) + dot(&state.s, &state.s);
    let x2 = dot(&state.x, &state.x);
    let total = w2 + x2;
    let p_res = if total > 0.0 { w2 / total } else { f64::NAN };
    let ra = state.algebraic_residual(system)?;
    let rel_err = reference.map(|xr| {
        let mut d = 0.0;
        for i in 0..xr.len() {
            let e = state.x[i] - xr[i];
            d += e * e;
        }
        d.sqrt() / norm(xr).max(f64::MIN_POSITIVE)
    });
    traj.samples.push(TrajectorySample {
        t: state.t,
        norm_x: x2.sqrt(),
        norm_w: w2.sqrt(),
        p_res,
        norm_ra: norm(&ra),
        rel_err,
    });
    if keep {
        traj.states.push(state.clone());
    }
    Ok(())
}

/// Relative-error-vs-time curves for a set of right-hand sides, with the
/// first crossing of `epsilon` per case.
pub struct TimeSweep {
    /// (label, t, relative error) rows in sweep order.
    pub rows: Vec<(String, f64, f64)>,
    /// First sampled time at or below `epsilon` per case.
    pub crossings: Vec<(String, Option<f64>)>,
}

pub fn relative_error_sweep(
    system_for: impl Fn(&str) -> Result<(Vec<f64>, Vec<f64>)>,
    labels: &[&str],
    base: &EllipticSystem,
    epsilon: f64,
    t_max: f64,
    policy: &StepPolicy,
    stride: usize,
) -> Result<TimeSweep> {
    let mut rows = Vec::new();
    let mut crossings = Vec::new();
    for &label in labels {
        let (b, x_star) = system_for(label)?;
        let state = RelaxState {
            t: 0.0,
            x: vec![0.0; base.n_dof()],
            r: b,
            s: vec![0.0; base.gradient_rows()],
        };
        let (_, traj) = evolve_traced(
            base,
            state,
            t_max,
            policy,
            &TraceSpec {
                stride,
                keep_states: false,
            },
            Some(&x_star),
        )?;
        let mut crossing = None;
        for s in &traj.samples {
            let e = s.rel_err.unwrap_or(f64::NAN);
            rows.push((label.to_string(), s.t, e));
            if crossing.is_none() && e <= epsilon {
                crossing = Some(s.t);
            }
        }
        crossings.push((label.to_string(), crossing));
    }
    Ok(TimeSweep { rows, crossings })
}
