//! Independent reference solvers shared by the integration tests.

#![allow(dead_code)]

/// Minimizer of `½ Σ W_i (u_i − w_i)² + λ Σ_c |u_{c+1} − u_c|` on a uniform
/// 1D grid with trapezoid weights `W`, by exact coordinate descent on the dual
/// box QP in `p ∈ [−1, 1]^cells`, `u = w − λ W⁻¹ Dᵀp`. Sweeps until no
/// coordinate moves by more than `tol`.
pub fn tv_denoise_1d(w: &[f64], h: f64, lambda: f64, tol: f64) -> Vec<f64> {
    let nodes = w.len();
    let cells = nodes - 1;
    let weight: Vec<f64> = (0..nodes).map(|i| if i == 0 || i == cells { h / 2.0 } else { h }).collect();
    let mut p = vec![0.0; cells];
    // u_i = w_i − λ (p_{i−1} − p_i)/W_i
    let u_of = |p: &[f64]| -> Vec<f64> {
        (0..nodes)
            .map(|i| {
                let left = if i > 0 { p[i - 1] } else { 0.0 };
                let right = if i < cells { p[i] } else { 0.0 };
                w[i] - lambda * (left - right) / weight[i]
            })
            .collect()
    };
    let mut u = u_of(&p);
    for _ in 0..10_000_000 {
        let mut moved: f64 = 0.0;
        for c in 0..cells {
            // The dual objective restricted to p_c is a parabola whose slope
            // is λ (u_{c+1} − u_c) and whose curvature is λ² (1/W_c + 1/W_{c+1}).
            let curv = lambda * lambda * (1.0 / weight[c] + 1.0 / weight[c + 1]);
            let slope = lambda * (u[c + 1] - u[c]);
            let next = (p[c] + slope / curv).clamp(-1.0, 1.0);
            let dp = next - p[c];
            if dp != 0.0 {
                p[c] = next;
                u[c] += lambda * dp / weight[c];
                u[c + 1] -= lambda * dp / weight[c + 1];
                moved = moved.max(dp.abs());
            }
        }
        if moved <= tol {
            break;
        }
    }
    u_of(&p)
}

/// `½ Σ W_i (u_i − w_i)² + λ Σ_c |u_{c+1} − u_c|`.
pub fn tv_objective_1d(u: &[f64], w: &[f64], h: f64, lambda: f64) -> f64 {
    let n = u.len() - 1;
    let fid: f64 = (0..=n)
        .map(|i| {
            let wi = if i == 0 || i == n { h / 2.0 } else { h };
            0.5 * wi * (u[i] - w[i]).powi(2)
        })
        .sum();
    let tv: f64 = u.windows(2).map(|p| (p[1] - p[0]).abs()).sum();
    fid + lambda * tv
}

/// Plateau ODE for the 1D total variation flow of a piecewise-constant
/// profile with Neumann ends: each plateau moves at `(ζ_right − ζ_left)/length`,
/// `ζ = sign` of the adjacent jump, and plateaus merge once their values are
/// within `1e−9`. Returns `(time, values)` samples every `dt` up to `t_end`.
pub fn plateau_flow(lengths: &[f64], values: &[f64], dt_out: f64, t_end: f64) -> Vec<(f64, Vec<f64>)> {
    let mut len = lengths.to_vec();
    let mut val = values.to_vec();
    // Track the original plateaus through merges.
    let mut members: Vec<Vec<usize>> = (0..len.len()).map(|i| vec![i]).collect();
    let mut t = 0.0;
    let mut out = vec![(0.0, values.to_vec())];
    let mut next_out = dt_out;
    let expand = |val: &[f64], members: &[Vec<usize>]| {
        let mut v = vec![0.0; lengths.len()];
        for (k, m) in members.iter().enumerate() {
            for &i in m {
                v[i] = val[k];
            }
        }
        v
    };
    while t < t_end - 1e-15 {
        let k = val.len();
        let rate: Vec<f64> = (0..k)
            .map(|i| {
                let zl = if i == 0 { 0.0 } else { (val[i] - val[i - 1]).signum() };
                let zr = if i + 1 == k { 0.0 } else { (val[i + 1] - val[i]).signum() };
                (zr - zl) / len[i]
            })
            .collect();
        // Time to the next merge.
        let mut hit = f64::INFINITY;
        for i in 0..k.saturating_sub(1) {
            let closing = rate[i] - rate[i + 1];
            let gap = val[i] - val[i + 1];
            if closing != 0.0 && gap / closing > 0.0 {
                hit = hit.min(gap / closing);
            }
        }
        let step = hit.min(next_out - t).min(t_end - t);
        for i in 0..k {
            val[i] += rate[i] * step;
        }
        t += step;
        let mut i = 0;
        while i + 1 < val.len() {
            if (val[i] - val[i + 1]).abs() < 1e-9 {
                let total = len[i] + len[i + 1];
                val[i] = (val[i] * len[i] + val[i + 1] * len[i + 1]) / total;
                len[i] = total;
                let tail = members.remove(i + 1);
                members[i].extend(tail);
                val.remove(i + 1);
                len.remove(i + 1);
            } else {
                i += 1;
            }
        }
        if (t - next_out).abs() < 1e-12 {
            out.push((t, expand(&val, &members)));
            next_out += dt_out;
        }
    }
    out
}
