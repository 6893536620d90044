//! Implicit-Euler flows built by chaining resolvents, and the q-power and
//! Moreau–Yosida approximations of the linear-growth flow.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::diffop::{DualField, GridFunction};
use crate::energy::{Boundary, Problem};
use crate::error::{invalid, Result};
use crate::linalg::norm;
use crate::resolvent::{resolve_below, verify_certificate, CertificateReport, SolverOptions};

#[derive(Debug, Clone)]
pub struct FlowTrace {
    pub times: Vec<f64>,
    pub states: Vec<GridFunction>,
    pub energies: Vec<f64>,
    /// One per step; the entry for the initial state comes from `z = 0`.
    pub certificates: Vec<CertificateReport>,
    /// `Σ W_i u_i` summed over components.
    pub mass: Vec<f64>,
    pub iterations: Vec<usize>,
    /// Extra per-state series (e.g. Young slack), aligned with `times`.
    pub diagnostics: BTreeMap<String, Vec<f64>>,
    /// Set when a step failed to converge or raised the energy.
    pub failure: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FlowOptions {
    pub solver: SolverOptions,
    /// Allowed energy increase per step, relative to `1 + E`.
    pub energy_tol: f64,
}

impl Default for FlowOptions {
    fn default() -> Self {
        FlowOptions { solver: SolverOptions::default(), energy_tol: 1e-7 }
    }
}

impl FlowTrace {
    pub fn truncated(&self) -> bool {
        self.failure.is_some()
    }

    pub fn last(&self) -> &GridFunction {
        self.states.last().expect("a trace holds the initial state")
    }

    /// State at the last recorded time `≤ t`.
    pub fn state_at(&self, t: f64) -> &GridFunction {
        let k = self.times.partition_point(|&s| s <= t + 1e-12).max(1) - 1;
        &self.states[k]
    }

    fn push_diag(&mut self, key: &str, value: f64) {
        self.diagnostics.entry(key.to_string()).or_default().push(value);
    }
}

fn total_mass(u: &GridFunction) -> f64 {
    u.mass().iter().sum()
}

/// Relaxed energy of `u` read off a certificate evaluation.
fn energy_of(p: &Problem, u: &GridFunction, bc: &Boundary) -> Result<(f64, CertificateReport)> {
    let z = DualField::zeros(*p.grid(), p.op().m(), p.op().n());
    let cert = verify_certificate(p, u, 1.0, u, &z, bc)?;
    Ok((cert.energy, cert))
}

/// Chains `steps` resolvent steps of size `dt` from `u0`.
pub fn evolve(p: &Problem, u0: &GridFunction, dt: f64, steps: usize, bc: &Boundary, opts: &FlowOptions) -> Result<FlowTrace> {
    evolve_with(p, u0, dt, steps, bc, opts, |_, _, _| Ok(()))
}

fn evolve_with(
    p: &Problem,
    u0: &GridFunction,
    dt: f64,
    steps: usize,
    bc: &Boundary,
    opts: &FlowOptions,
    mut record: impl FnMut(&mut FlowTrace, &GridFunction, f64) -> Result<()>,
) -> Result<FlowTrace> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(invalid("dt", "must be positive"));
    }
    let (e0, c0) = energy_of(p, u0, bc)?;
    let mut trace = FlowTrace {
        times: vec![0.0],
        states: vec![u0.clone()],
        energies: vec![e0],
        certificates: vec![c0],
        mass: vec![total_mass(u0)],
        iterations: vec![0],
        diagnostics: BTreeMap::new(),
        failure: None,
    };
    record(&mut trace, u0, e0)?;
    let mut warm: Option<DualField> = None;
    for k in 1..=steps {
        let prev = trace.last().clone();
        let before = *trace.energies.last().unwrap();
        let res = resolve_below(p, &prev, dt, bc, &opts.solver, warm.as_ref(), Some(before))?;
        if !res.converged {
            trace.failure = Some(format!("step {k}: resolvent did not converge in {} iterations", res.iterations));
            break;
        }
        let energy = res.certificate.energy;
        if energy > before + opts.energy_tol * (1.0 + before.abs()) {
            trace.failure = Some(format!("step {k}: energy rose from {before} to {energy}"));
            break;
        }
        trace.times.push(k as f64 * dt);
        trace.mass.push(total_mass(&res.u));
        trace.energies.push(energy);
        trace.iterations.push(res.iterations);
        record(&mut trace, &res.u, energy)?;
        trace.certificates.push(res.certificate);
        trace.states.push(res.u);
        warm = Some(res.z);
    }
    Ok(trace)
}

/// The flow of `∫ f^q(x, 𝔸u)` for `q ∈ (1, 2]`, recording the Young slack
/// `Σ hⁿ [f^q/q − f + (1 − 1/q)] ≥ 0`.
pub fn qflow(
    p: &Problem,
    q: f64,
    u0: &GridFunction,
    dt: f64,
    steps: usize,
    bc: &Boundary,
    opts: &FlowOptions,
) -> Result<FlowTrace> {
    if let Boundary::Dirichlet(d) = bc {
        if d.extension.is_none() {
            return Err(invalid("extension", "q-flows with boundary data need an interior extension"));
        }
    }
    let fq = p.integrand().qpower(q)?;
    let pq = Problem::new(p.op().clone(), *p.grid(), &fq)?;
    let base = p.clone();
    evolve_with(&pq, u0, dt, steps, bc, opts, move |trace, u, _| {
        let y = base.op().apply(u)?;
        let vol = base.grid().cell_volume();
        let slack: f64 = (0..base.grid().cells())
            .map(|c| {
                let f = base.cell(c).primal(y.cell(c));
                vol * (f.powf(q) / q - f + (1.0 - 1.0 / q))
            })
            .sum();
        trace.push_diag("young_slack", slack);
        Ok(())
    })
}

/// The flow of `∫ (f_λ)^q(x, 𝔸u)`; `lambda = None` couples `λ = q − 1`.
///
/// Records `‖z_q‖_∞` for the smooth field `z_q = D_y f_λ^q(x, 𝔸u)` and the
/// bound `q C₀^{q−1} (1 + max|𝔸u|)^{q−1} C₀`.
#[allow(clippy::too_many_arguments)]
pub fn moreau_flow(
    p: &Problem,
    lambda: Option<f64>,
    q: f64,
    u0: &GridFunction,
    dt: f64,
    steps: usize,
    bc: &Boundary,
    opts: &FlowOptions,
) -> Result<FlowTrace> {
    let lambda = lambda.unwrap_or(q - 1.0);
    let smooth = p.integrand().moreau_of(lambda)?.qpower(q)?;
    let c0 = p.integrand().lipschitz();
    let ps = Problem::new(p.op().clone(), *p.grid(), &smooth)?;
    let grid = *p.grid();
    let op = p.op().clone();
    evolve_with(&ps, u0, dt, steps, bc, opts, move |trace, u, _| {
        let y = op.apply(u)?;
        let mut sup: f64 = 0.0;
        for c in 0..grid.cells() {
            let (_, _, x) = grid.cell_box(c);
            sup = sup.max(norm(&smooth.subgradient(x, y.cell(c))));
        }
        let bound = q * c0.powf(q - 1.0) * (1.0 + y.max_cell_norm()).powf(q - 1.0) * c0;
        trace.push_diag("zq_sup", sup);
        trace.push_diag("zq_bound", bound);
        Ok(())
    })
}

/// Flows for a ladder of exponents, run concurrently; `None` stands for the
/// linear-growth flow itself.
pub fn qladder(
    p: &Problem,
    qs: &[Option<f64>],
    u0: &GridFunction,
    dt: f64,
    steps: usize,
    bc: &Boundary,
    opts: &FlowOptions,
) -> Vec<Result<FlowTrace>> {
    use rayon::prelude::*;
    qs.par_iter()
        .map(|q| match q {
            Some(q) => qflow(p, *q, u0, dt, steps, bc, opts),
            None => evolve(p, u0, dt, steps, bc, opts),
        })
        .collect()
}
