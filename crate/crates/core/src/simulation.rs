//! Closed-loop integration and exponential-envelope fitting.

use std::fmt::Write as _;
use std::thread;

use nalgebra::DVector;
use rand::rngs::StdRng;
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::serde_ext;
use crate::synthesis::{ClosedLoop, FeedbackLaw, Provenance};
use crate::vf::SystemDef;

/// Samples below this norm are left out of the log-linear fit.
pub const NORM_FLOOR: f64 = 1e-14;
/// Multiplicative slack when re-checking the fitted envelope.
pub const ENVELOPE_SLACK: f64 = 1.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub x0: Vec<f64>,
    pub law_tag: Provenance,
    /// Set when the state left the law's domain before `t_end`.
    pub truncated: bool,
}

impl Trajectory {
    pub fn norms(&self) -> impl Iterator<Item = f64> + '_ {
        self.states.iter().map(|s| s.iter().map(|v| v * v).sum::<f64>().sqrt())
    }

    pub fn last(&self) -> &[f64] {
        self.states.last().expect("trajectory is never empty")
    }

    /// Columns `t, x1..xn, norm`.
    pub fn to_csv(&self) -> String {
        let n = self.x0.len();
        let mut s = String::from("t");
        for i in 1..=n {
            let _ = write!(s, ",x{i}");
        }
        s.push_str(",norm\n");
        for ((t, x), norm) in self.times.iter().zip(&self.states).zip(self.norms()) {
            let _ = write!(s, "{t:?}");
            for v in x {
                let _ = write!(s, ",{v:?}");
            }
            let _ = writeln!(s, ",{norm:?}");
        }
        s
    }
}

fn rk4_step(cl: &ClosedLoop<'_>, x: &DVector<f64>, h: f64) -> Result<Option<DVector<f64>>> {
    let f = |y: &DVector<f64>| -> Result<Option<DVector<f64>>> {
        if !cl.law.contains(y.as_slice()) {
            return Ok(None);
        }
        cl.rhs(y.as_slice()).map(Some)
    };
    let Some(k1) = f(x)? else { return Ok(None) };
    let Some(k2) = f(&(x + &k1 * (h / 2.0)))? else { return Ok(None) };
    let Some(k3) = f(&(x + &k2 * (h / 2.0)))? else { return Ok(None) };
    let Some(k4) = f(&(x + &k3 * h))? else { return Ok(None) };
    let next = x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    Ok(cl.law.contains(next.as_slice()).then_some(next))
}

/// Fixed-step RK4 on an already-built closed loop.
pub fn integrate_closed(cl: &ClosedLoop<'_>, x0: &[f64], t_end: f64, step: f64) -> Result<Trajectory> {
    if !(step > 0.0) || !(t_end >= 0.0) {
        return Err(Error::pre("need step > 0 and t_end ≥ 0"));
    }
    if x0.len() != cl.n() {
        return Err(Error::dim(format!("x0 has {} entries, system has n = {}", x0.len(), cl.n())));
    }
    if !cl.law.contains(x0) {
        return Err(Error::OutOfDomain(format!("x0 = {x0:?} is outside the law's domain")));
    }
    let steps = (t_end / step).round() as usize;
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    let mut x = DVector::from_column_slice(x0);
    times.push(0.0);
    states.push(x0.to_vec());
    let mut truncated = false;
    for k in 1..=steps {
        match rk4_step(cl, &x, step)? {
            Some(next) => x = next,
            None => {
                truncated = true;
                break;
            }
        }
        times.push(k as f64 * step);
        states.push(x.as_slice().to_vec());
    }
    Ok(Trajectory {
        times,
        states,
        x0: x0.to_vec(),
        law_tag: cl.law.provenance,
        truncated,
    })
}

pub fn integrate(sys: &SystemDef, law: &FeedbackLaw, x0: &[f64], t_end: f64, step: f64) -> Result<Trajectory> {
    integrate_closed(&ClosedLoop::new(sys, law)?, x0, t_end, step)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    #[serde(with = "serde_ext::ext_f64")]
    pub alpha: f64,
    /// Amplitude factor `M` of the envelope `M‖x₀‖e^{−αt}`.
    #[serde(rename = "m", with = "serde_ext::ext_f64")]
    pub m_factor: f64,
    #[serde(with = "serde_ext::ext_f64")]
    pub r2: f64,
    pub envelope_ok: bool,
    pub delta: f64,
    pub trajectories: usize,
    pub samples_used: usize,
    /// Trajectories cut short by leaving the law's domain.
    pub truncated: usize,
}

/// Pooled fit of `log(‖φ(t)‖/‖x₀‖)` against `t`.
pub fn fit_decay(trajs: &[Trajectory], delta: f64) -> Result<DecayFit> {
    if trajs.is_empty() {
        return Err(Error::pre("no trajectories to fit"));
    }
    let mut pts: Vec<(f64, f64)> = Vec::new();
    for tr in trajs {
        let n0 = tr.norms().next().unwrap_or(0.0);
        if n0 >= delta {
            return Err(Error::pre(format!("‖x0‖ = {n0} is not below delta = {delta}")));
        }
        if n0 < NORM_FLOOR {
            continue;
        }
        for (t, nv) in tr.times.iter().zip(tr.norms()) {
            if nv >= NORM_FLOOR {
                pts.push((*t, (nv / n0).ln()));
            }
        }
    }
    if pts.len() < 2 {
        return Err(Error::Degenerate("fewer than two samples above the norm floor".into()));
    }
    let k = pts.len() as f64;
    let (mt, my) = pts.iter().fold((0.0, 0.0), |(a, b), (t, y)| (a + t / k, b + y / k));
    let (mut stt, mut sty, mut syy) = (0.0, 0.0, 0.0);
    for (t, y) in &pts {
        stt += (t - mt) * (t - mt);
        sty += (t - mt) * (y - my);
        syy += (y - my) * (y - my);
    }
    if stt == 0.0 {
        return Err(Error::Degenerate("all samples at the same time".into()));
    }
    let slope = sty / stt;
    let alpha = -slope;
    let r2 = if syy == 0.0 { 1.0 } else { sty * sty / (stt * syy) };

    let mut m_factor: f64 = 0.0;
    for tr in trajs {
        let n0 = tr.norms().next().unwrap_or(0.0);
        if n0 < NORM_FLOOR {
            continue;
        }
        for (t, nv) in tr.times.iter().zip(tr.norms()) {
            m_factor = m_factor.max(nv * (alpha * t).exp() / n0);
        }
    }
    let truncated = trajs.iter().filter(|t| t.truncated).count();
    let within = trajs.iter().all(|tr| {
        let n0 = tr.norms().next().unwrap_or(0.0);
        tr.times
            .iter()
            .zip(tr.norms())
            .all(|(t, nv)| nv <= ENVELOPE_SLACK * m_factor * n0 * (-alpha * t).exp())
    });
    Ok(DecayFit {
        alpha,
        m_factor,
        r2,
        envelope_ok: alpha > 0.0 && m_factor.is_finite() && within && truncated == 0,
        delta,
        trajectories: trajs.len(),
        samples_used: pts.len(),
        truncated,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LesConfig {
    pub delta: f64,
    pub samples: usize,
    pub t_end: f64,
    pub step: f64,
    pub seed: u64,
}

impl Default for LesConfig {
    fn default() -> Self {
        LesConfig {
            delta: 0.05,
            samples: 12,
            t_end: 8.0,
            step: 1e-3,
            seed: 0x5eed,
        }
    }
}

pub const LES_SCALES: [f64; 3] = [1.0, 0.5, 0.25];

/// Initial states: `samples` random directions at radius `delta/2`, each
/// also scaled by ½ and ¼. A direction whose points fall outside the law's
/// domain is flipped, and redrawn if that fails too.
pub fn les_initial_states(law: &FeedbackLaw, n: usize, cfg: &LesConfig) -> Result<Vec<Vec<f64>>> {
    let mut rng = StdRng::seed_from_u64(cfg.seed);
    let mut out = Vec::with_capacity(cfg.samples * LES_SCALES.len());
    let fits = |d: &[f64]| {
        LES_SCALES.iter().all(|s| {
            let x: Vec<f64> = d.iter().map(|v| v * s * cfg.delta / 2.0).collect();
            law.contains(&x)
        })
    };
    for _ in 0..cfg.samples {
        let mut found = None;
        for _ in 0..100 {
            let d: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = d.iter().map(|v: &f64| v * v).sum::<f64>().sqrt();
            if norm == 0.0 {
                continue;
            }
            let d: Vec<f64> = d.iter().map(|v| v / norm).collect();
            let flipped: Vec<f64> = d.iter().map(|v| -v).collect();
            if fits(&d) {
                found = Some(d);
            } else if fits(&flipped) {
                found = Some(flipped);
            }
            if found.is_some() {
                break;
            }
        }
        let d = found.ok_or_else(|| {
            Error::OutOfDomain(format!("no initial direction at radius {} fits the law's domain", cfg.delta / 2.0))
        })?;
        for s in LES_SCALES {
            out.push(d.iter().map(|v| v * s * cfg.delta / 2.0).collect());
        }
    }
    Ok(out)
}

/// Integrate from every sampled initial state and fit the envelope.
pub fn verify_les_with_trajectories(
    sys: &SystemDef,
    law: &FeedbackLaw,
    cfg: &LesConfig,
) -> Result<(DecayFit, Vec<Trajectory>)> {
    if cfg.samples == 0 {
        return Err(Error::pre("need at least one sample"));
    }
    if !(cfg.delta > 0.0) {
        return Err(Error::pre("delta must be positive"));
    }
    let cl = ClosedLoop::new(sys, law)?;
    let starts = les_initial_states(law, sys.n(), cfg)?;
    let trajs: Vec<Result<Trajectory>> = thread::scope(|scope| {
        let handles: Vec<_> = starts
            .iter()
            .map(|x0| {
                let cl = &cl;
                scope.spawn(move || integrate_closed(cl, x0, cfg.t_end, cfg.step))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("integration worker panicked")).collect()
    });
    let trajs = trajs.into_iter().collect::<Result<Vec<_>>>()?;
    Ok((fit_decay(&trajs, cfg.delta)?, trajs))
}

pub fn verify_les(sys: &SystemDef, law: &FeedbackLaw, cfg: &LesConfig) -> Result<DecayFit> {
    Ok(verify_les_with_trajectories(sys, law, cfg)?.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescentCheck {
    pub fraction_descending: f64,
    pub worst: Vec<f64>,
    pub worst_vdot: f64,
}

pub fn lyapunov_descent_check(sys: &SystemDef, law: &FeedbackLaw, grid: &[Vec<f64>]) -> Result<DescentCheck> {
    if grid.is_empty() {
        return Err(Error::pre("empty node list"));
    }
    if grid.iter().any(|x| x.iter().all(|&v| v == 0.0)) {
        return Err(Error::pre("node list must exclude the origin"));
    }
    let cl = ClosedLoop::new(sys, law)?;
    let mut descending = 0;
    let mut worst = (f64::NEG_INFINITY, grid[0].clone());
    for x in grid {
        let (_, vdot) = cl.lyapunov(x)?;
        if vdot < 0.0 {
            descending += 1;
        }
        if vdot > worst.0 {
            worst = (vdot, x.clone());
        }
    }
    Ok(DescentCheck {
        fraction_descending: descending as f64 / grid.len() as f64,
        worst: worst.1,
        worst_vdot: worst.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthesis::build_composition_h;
    use crate::vf::{parse_expr, parse_system};
    use nalgebra::DMatrix;

    fn minus_x() -> (SystemDef, FeedbackLaw) {
        let sontag = parse_system("n=1 m=1; f1 = x1 + u1^3").unwrap();
        let law = FeedbackLaw::composition(build_composition_h(&sontag).unwrap());
        (sontag, law)
    }

    #[test]
    fn integrate_examples() {
        let (sys, law) = minus_x();
        let tr = integrate(&sys, &law, &[0.1], 5.0, 1e-3).unwrap();
        assert_eq!(tr.times.len(), 5001);
        assert!((tr.last()[0] - 0.1 * (-5.0f64).exp()).abs() < 1e-6);

        let tr = integrate(&sys, &law, &[0.0], 1.0, 1e-2).unwrap();
        assert!(tr.states.iter().all(|s| s[0] == 0.0));

        let lin = parse_system("n=1 m=1; f1 = x1 + u1").unwrap();
        let k = FeedbackLaw::linear(DMatrix::from_element(1, 1, -2.0), Provenance::QTI);
        let tr = integrate(&lin, &k, &[0.05], 5.0, 1e-3).unwrap();
        for (t, s) in tr.times.iter().zip(&tr.states) {
            assert!((s[0] - 0.05 * (-t).exp()).abs() < 1e-6);
        }
        assert_eq!(tr.to_csv().lines().next(), Some("t,x1,norm"));
    }

    #[test]
    fn rk4_is_fourth_order() {
        let (sys, law) = minus_x();
        let exact = (-5.0f64).exp();
        let e1 = (integrate(&sys, &law, &[1.0], 5.0, 0.02).unwrap().last()[0] - exact).abs();
        let e2 = (integrate(&sys, &law, &[1.0], 5.0, 0.01).unwrap().last()[0] - exact).abs();
        assert!((e1 / e2 - 16.0).abs() < 0.5, "{}", e1 / e2);
        let fine = integrate(&sys, &law, &[1.0], 5.0, 1e-3).unwrap().last()[0];
        assert!((fine - exact).abs() / exact <= 1e-10);
    }

    #[test]
    fn grid_domain_exit_truncates() {
        let lin = parse_system("n=1 m=1; f1 = x1 + u1").unwrap();
        let g = crate::synthesis::GridControl::on_box(0.5, &[-0.5], &[0.5], 4, &[0.0]).unwrap();
        let law = FeedbackLaw::grid(g, Provenance::STII);
        let tr = integrate(&lin, &law, &[0.4], 5.0, 1e-2).unwrap();
        assert!(tr.truncated && tr.last()[0] <= 0.5);
        assert!(matches!(integrate(&lin, &law, &[0.6], 1.0, 1e-2), Err(Error::OutOfDomain(_))));
    }

    #[test]
    fn fit_examples() {
        let (sys, law) = minus_x();
        let trajs: Vec<_> = [0.02, -0.01, 0.005]
            .iter()
            .map(|&x| integrate(&sys, &law, &[x], 8.0, 1e-3).unwrap())
            .collect();
        let fit = fit_decay(&trajs, 0.05).unwrap();
        assert!((fit.alpha - 1.0).abs() < 0.02 && (fit.m_factor - 1.0).abs() < 0.05 && fit.envelope_ok);

        let up = parse_system("n=1 m=1; f1 = x1 + u1").unwrap();
        let zero = FeedbackLaw::trivial(1, 1);
        let tr = integrate(&up, &zero, &[0.01], 3.0, 1e-3).unwrap();
        let fit = fit_decay(&[tr], 0.05).unwrap();
        assert!(fit.alpha < 0.0 && !fit.envelope_ok);

        let tr = integrate(&up, &zero, &[0.0], 1.0, 1e-2).unwrap();
        assert!(matches!(fit_decay(&[tr], 0.05), Err(Error::Degenerate(_))));
    }

    #[test]
    fn les_examples() {
        let (sys, law) = minus_x();
        let cfg = LesConfig { delta: 0.2, ..LesConfig::default() };
        let fit = verify_les(&sys, &law, &cfg).unwrap();
        assert!(fit.envelope_ok && fit.alpha >= 0.9 && fit.trajectories == 36);

        let closed = FeedbackLaw::expression(1, vec![parse_expr("cbrt(-2*x1)", 1, 0).unwrap()], Provenance::ClosedForm).unwrap();
        let cfg = LesConfig { delta: 0.1, ..LesConfig::default() };
        assert!(verify_les(&sys, &closed, &cfg).unwrap().envelope_ok);
        assert!(!verify_les(&sys, &FeedbackLaw::trivial(1, 1), &cfg).unwrap().envelope_ok);
    }

    #[test]
    fn descent_examples() {
        let (sys, law) = minus_x();
        let nodes: Vec<Vec<f64>> = [0.1, -0.1, 0.2, -0.2].iter().map(|&v| vec![v]).collect();
        assert_eq!(lyapunov_descent_check(&sys, &law, &nodes).unwrap().fraction_descending, 1.0);
        let up = parse_system("n=1 m=1; f1 = x1 + u1").unwrap();
        let d = lyapunov_descent_check(&up, &FeedbackLaw::trivial(1, 1), &nodes).unwrap();
        assert_eq!(d.fraction_descending, 0.0);
        assert!(lyapunov_descent_check(&up, &FeedbackLaw::trivial(1, 1), &[vec![0.0]]).is_err());
    }
}
