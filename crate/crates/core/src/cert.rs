//! Executable stability certificate for the residual-block generator.
//!
//! A Lyapunov functional E(r, s) = ||r||^2 + ||s||^2 - 2 eta Re<r, K s> with
//! K = A^{-1} G^T yields closed-form constants: with m± = 1 ± eta/gamma0,
//! the decay E' <= -c0 ||w||^2 and the equivalence m- ||w||^2 <= E <= m+
//! ||w||^2 give
//!     ||w(t)|| <= C_st exp(-c_st t) ||w(0)||,
//!     C_st = sqrt(m+/m-),  c_st = c0 / (2 m+),  C_tail = C_st / c_st.
//! The constants are deliberately conservative; the empirical fit exists to
//! quantify that conservatism, not to replace it.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::fem::EllipticSystem;
use crate::linalg::{self, dot};
use crate::relax::{self, RelaxState};

#[derive(Debug, Clone, Copy)]
pub struct StabilityCertificate {
    /// Smallest singular value of the factor (discrete Poincare constant).
    pub gamma0: f64,
    /// Lyapunov coupling weight.
    pub eta: f64,
    /// Dissipation constant.
    pub c0: f64,
    /// Semigroup prefactor C_st >= 1.
    pub prefactor: f64,
    /// Certified decay rate c_st > 0.
    pub rate: f64,
    /// Tail constant C_st / c_st.
    pub tail_gain: f64,
}

impl StabilityCertificate {
    /// eta0(p) = sqrt(p / (1 - p)).
    pub fn threshold_ratio(p0: f64) -> f64 {
        (p0 / (1.0 - p0)).sqrt()
    }

    /// beta0 = C_tail * sqrt(p0 / (1 - p0)); the stopping theorem needs < 1.
    pub fn beta0(&self, p0: f64) -> f64 {
        self.tail_gain * Self::threshold_ratio(p0)
    }
}

/// gamma0 = sigma_min(G) from the dense spectral summary.
pub fn poincare_constant(system: &EllipticSystem) -> Result<f64> {
    Ok(system.spectral()?.sigma_min_g)
}

/// Certificate constants from gamma0; the default eta takes half the slack
/// of the binding constraint so both inequalities stay strict.
pub fn lyapunov_constants(
    gamma0: f64,
    eta_override: Option<f64>,
) -> Result<StabilityCertificate> {
    if !(gamma0 > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "lyapunov_constants: gamma0 = {gamma0} must be positive"
        )));
    }
    let g2 = gamma0 * gamma0;
    let eta_cap = 2.0 * g2 / (2.0 * g2 + 1.0);
    let eta = match eta_override {
        Some(e) => {
            if !(e > 0.0 && e < gamma0 && 2.0 * (1.0 - e) - e / g2 > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "lyapunov_constants: eta = {e} violates 0 < eta < gamma0 and \
                     2(1 - eta) - eta/gamma0^2 > 0"
                )));
            }
            e
        }
        None => 0.5 * gamma0.min(eta_cap),
    };
    let c0 = eta.min(2.0 * (1.0 - eta) - eta / g2);
    let m_plus = 1.0 + eta / gamma0;
    let m_minus = 1.0 - eta / gamma0;
    let prefactor = (m_plus / m_minus).sqrt();
    let rate = c0 / (2.0 * m_plus);
    Ok(StabilityCertificate {
        gamma0,
        eta,
        c0,
        prefactor,
        rate,
        tail_gain: prefactor / rate,
    })
}

/// Full certificate for an assembled system.
pub fn certificate_for(system: &EllipticSystem) -> Result<StabilityCertificate> {
    lyapunov_constants(poincare_constant(system)?, None)
}

/// Dense residual-block generator [[0, -G^T], [G, -I]].
pub fn dense_residual_generator(system: &EllipticSystem) -> DMatrix<f64> {
    let g = system.dense_gradient();
    let n = g.ncols();
    let r = g.nrows();
    let mut m = DMatrix::zeros(n + r, n + r);
    m.view_mut((0, n), (n, r)).copy_from(&(-g.transpose()));
    m.view_mut((n, 0), (r, n)).copy_from(&g);
    for i in 0..r {
        m[(n + i, n + i)] = -1.0;
    }
    m
}

#[derive(Debug, Clone)]
pub struct DecayFit {
    pub prefactor: f64,
    pub rate: f64,
    /// Sampled (t, ||exp(t M)||) pairs.
    pub samples: Vec<(f64, f64)>,
}

/// Samples the semigroup operator norm on a uniform grid and fits
/// log-norm vs t by least squares, skipping the initial transient.
pub fn empirical_decay(
    system: &EllipticSystem,
    horizon: f64,
    samples: usize,
) -> Result<DecayFit> {
    if !(horizon > 0.0) || samples < 5 {
        return Err(Error::InvalidParameter(
            "empirical_decay: need horizon > 0 and at least 5 samples".into(),
        ));
    }
    let dim = system.n_dof() + system.gradient_rows();
    if dim > system.dense_ceiling() {
        return Err(Error::DenseRefusal(format!(
            "empirical_decay: generator dimension {dim} exceeds the ceiling {}",
            system.dense_ceiling()
        )));
    }
    let m = dense_residual_generator(system);
    fit_semigroup_decay(&m, horizon, samples)
}

/// Decay fit on an explicit generator (testable without an assembled system).
pub fn fit_semigroup_decay(m: &DMatrix<f64>, horizon: f64, samples: usize) -> Result<DecayFit> {
    let dt = horizon / (samples - 1) as f64;
    let e1 = linalg::dense_expm(&(m * dt));
    let mut ek = DMatrix::identity(m.nrows(), m.ncols());
    let mut pairs = Vec::with_capacity(samples);
    for j in 0..samples {
        let nrm = ek
            .clone()
            .singular_values()
            .iter()
            .fold(0.0f64, |a, &b| a.max(b));
        pairs.push((j as f64 * dt, nrm));
        if j + 1 < samples {
            ek = &e1 * ek;
        }
    }
    // transient: leading samples where the norm has not yet dropped by 5%
    let n0 = pairs[0].1;
    let first = pairs
        .iter()
        .position(|&(_, n)| n < 0.95 * n0)
        .unwrap_or(pairs.len());
    if pairs.len() - first < 4 {
        return Err(Error::InvalidParameter(format!(
            "empirical_decay: only {} samples past the transient; extend the horizon",
            pairs.len() - first
        )));
    }
    let (mut st, mut st2, mut sy, mut sty, mut cnt) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &(t, nrm) in &pairs[first..] {
        let y = nrm.ln();
        st += t;
        st2 += t * t;
        sy += y;
        sty += t * y;
        cnt += 1.0;
    }
    let denom = cnt * st2 - st * st;
    let slope = (cnt * sty - st * sy) / denom;
    let intercept = (sy * st2 - st * sty) / denom;
    Ok(DecayFit {
        prefactor: intercept.exp(),
        rate: -slope,
        samples: pairs,
    })
}

#[derive(Debug, Clone)]
pub struct MonitorReport {
    /// max over snapshots of dE/dt + c0 (||r||^2 + ||s||^2); certified <= 0.
    pub worst_margin: f64,
    /// Worst violation of the E-equivalence window (0 when it holds).
    pub worst_equivalence_violation: f64,
    pub snapshots: usize,
}

/// Evaluates the Lyapunov functional and its finite-difference derivative
/// along stored trajectory snapshots. K s is applied as A^{-1}(G^T s) through
/// the direct solver; K is never formed.
pub fn lyapunov_monitor(
    system: &EllipticSystem,
    cert: &StabilityCertificate,
    snapshots: &[RelaxState],
    dt_monitor: f64,
) -> Result<MonitorReport> {
    if !(dt_monitor > 0.0) {
        return Err(Error::InvalidParameter(
            "lyapunov_monitor: dt_monitor must be positive".into(),
        ));
    }
    let energy = |st: &RelaxState| -> Result<f64> {
        let gts = system.gradient.spmv_transpose(&st.s)?;
        let ks = system.direct_solve(&gts)?;
        Ok(dot(&st.r, &st.r) + dot(&st.s, &st.s) - 2.0 * cert.eta * dot(&st.r, &ks))
    };
    let mut worst_margin = f64::NEG_INFINITY;
    let mut worst_equiv = 0.0f64;
    for st in snapshots {
        let w2 = dot(&st.r, &st.r) + dot(&st.s, &st.s);
        let e = energy(st)?;
        let lo = (1.0 - cert.eta / cert.gamma0) * w2;
        let hi = (1.0 + cert.eta / cert.gamma0) * w2;
        let tol = 1e-12 * w2.max(1.0);
        worst_equiv = worst_equiv.max(lo - e - tol).max(e - hi - tol).max(0.0);
        let fwd = relax::rk4_step(system, st, dt_monitor)?;
        let bwd = relax::rk4_step(system, st, -dt_monitor)?;
        let de = (energy(&fwd)? - energy(&bwd)?) / (2.0 * dt_monitor);
        worst_margin = worst_margin.max(de + cert.c0 * w2);
    }
    if snapshots.is_empty() {
        worst_margin = 0.0;
    }
    Ok(MonitorReport {
        worst_margin,
        worst_equivalence_violation: worst_equiv,
        snapshots: snapshots.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cases::rhs_case;
    use crate::fem::{assemble_system, CoefficientField};
    use crate::mesh::build_uniform_mesh;
    use crate::relax::{evolve_traced, RelaxState, StepPolicy, TraceSpec};
    use approx::assert_relative_eq;

    fn system(n: usize, label: &str) -> EllipticSystem {
        let mesh = build_uniform_mesh(n).unwrap();
        let f = rhs_case(label).unwrap();
        assemble_system(mesh, &CoefficientField::constant(1.0), &|x, y| f.eval(x, y)).unwrap()
    }

    #[test]
    fn poincare_constant_n2() {
        let sys = system(2, "I");
        assert_relative_eq!(poincare_constant(&sys).unwrap(), 4.0, max_relative = 1e-12);
    }

    #[test]
    fn poincare_mesh_stability() {
        let g8 = poincare_constant(&system(8, "I")).unwrap();
        let g16 = poincare_constant(&system(16, "I")).unwrap();
        assert!((g8 - g16).abs() / g8 < 0.10);
    }

    #[test]
    fn hand_evaluated_constants() {
        // gamma0 = 1, eta = 1/2: c0 = 1/2, m+ = 3/2, m- = 1/2, C_st = sqrt(3)
        let c = lyapunov_constants(1.0, Some(0.5)).unwrap();
        assert_relative_eq!(c.c0, 0.5);
        assert_relative_eq!(c.prefactor, 3.0f64.sqrt(), max_relative = 1e-14);
        assert_relative_eq!(c.rate, 0.5 / 3.0, max_relative = 1e-14);
        assert_relative_eq!(c.tail_gain, c.prefactor / c.rate, max_relative = 1e-15);
    }

    #[test]
    fn small_eta_degenerates_gracefully() {
        let c = lyapunov_constants(1.0, Some(1e-9)).unwrap();
        assert!(c.prefactor - 1.0 < 1e-8);
        assert!(c.rate > 0.0 && c.rate < 1e-8);
    }

    #[test]
    fn eta_constraint_enforced() {
        // 2(1 - eta) - eta / gamma0^2 <= 0 must be rejected
        assert!(lyapunov_constants(0.5, Some(0.45)).is_err());
        assert!(lyapunov_constants(1.0, Some(1.0)).is_err());
        assert!(lyapunov_constants(-1.0, None).is_err());
    }

    #[test]
    fn default_eta_satisfies_both_constraints() {
        for g in [0.3, 1.0, 4.4, 20.0] {
            let c = lyapunov_constants(g, None).unwrap();
            assert!(c.eta > 0.0 && c.eta < g);
            assert!(2.0 * (1.0 - c.eta) - c.eta / (g * g) > 0.0);
            assert!(c.prefactor >= 1.0);
            assert!(c.rate > 0.0);
        }
    }

    #[test]
    fn scalar_decay_fit_exact() {
        let m = -DMatrix::<f64>::identity(3, 3);
        let fit = fit_semigroup_decay(&m, 5.0, 21).unwrap();
        assert_relative_eq!(fit.rate, 1.0, max_relative = 1e-6);
        assert_relative_eq!(fit.prefactor, 1.0, max_relative = 1e-6);
    }

    #[test]
    fn fit_needs_samples_past_transient() {
        let m = -DMatrix::<f64>::identity(2, 2) * 1e-6;
        // norm barely decays over the horizon: everything is transient
        assert!(fit_semigroup_decay(&m, 1.0, 6).is_err());
    }

    #[test]
    fn empirical_rate_dominates_certificate() {
        let sys = system(8, "I");
        let cert = certificate_for(&sys).unwrap();
        let fit = empirical_decay(&sys, 20.0, 21).unwrap();
        assert!(
            fit.rate >= cert.rate,
            "fitted {} vs certified {}",
            fit.rate,
            cert.rate
        );
    }

    #[test]
    fn fit_stable_under_horizon_doubling() {
        let sys = system(8, "I");
        let f1 = empirical_decay(&sys, 20.0, 21).unwrap();
        let f2 = empirical_decay(&sys, 40.0, 41).unwrap();
        assert!((f2.rate - f1.rate).abs() / f1.rate < 0.05);
    }

    #[test]
    fn monitor_on_cold_trajectory() {
        let sys = system(8, "I");
        let cert = certificate_for(&sys).unwrap();
        let (_, traj) = evolve_traced(
            &sys,
            RelaxState::cold(&sys),
            20.0,
            &StepPolicy::default(),
            &TraceSpec {
                stride: 40,
                keep_states: true,
            },
            None,
        )
        .unwrap();
        let rep = lyapunov_monitor(&sys, &cert, &traj.states, 1e-3).unwrap();
        assert!(rep.worst_margin <= 1e-6, "margin {}", rep.worst_margin);
        assert_eq!(rep.worst_equivalence_violation, 0.0);
    }

    #[test]
    fn monitor_fixed_point_is_flat() {
        let sys = system(4, "I");
        let cert = certificate_for(&sys).unwrap();
        let x_star = sys.direct_solve(&sys.load).unwrap();
        let q_star = sys.gradient.spmv(&x_star).unwrap();
        let st = RelaxState::warm(&sys, &x_star, &q_star).unwrap();
        let rep = lyapunov_monitor(&sys, &cert, &[st], 1e-3).unwrap();
        assert!(rep.worst_margin.abs() <= 1e-10);
    }

    #[test]
    fn certificate_bounds_trajectory_decay() {
        let sys = system(8, "III");
        let cert = certificate_for(&sys).unwrap();
        let (_, traj) = evolve_traced(
            &sys,
            RelaxState::cold(&sys),
            30.0,
            &StepPolicy::default(),
            &TraceSpec::default(),
            None,
        )
        .unwrap();
        let w0 = traj.samples[0].norm_w;
        for s in &traj.samples {
            let bound = cert.prefactor * (-cert.rate * s.t).exp() * w0;
            assert!(
                s.norm_w <= bound * (1.0 + 1e-9),
                "t = {}: {} > {}",
                s.t,
                s.norm_w,
                bound
            );
        }
    }
}
