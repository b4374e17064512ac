//! Shared oracle implementations used by the oracle and acceptance
//! test targets.
#![allow(dead_code)]

use el_opeval::{build_dataset, BoxSupport, LoggedDataset};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

pub fn random_micro_dataset(rng: &mut ChaCha8Rng, policies: usize) -> LoggedDataset {
    let n = rng.gen_range(2..=5);
    let bounds: Vec<(f64, f64)> = (0..policies)
        .map(|_| (0.0, rng.gen_range(1.5..4.0)))
        .collect();
    let weights: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            bounds
                .iter()
                .map(|&(lo, hi)| rng.gen_range(lo + 0.1 * (hi - lo)..hi - 0.1 * (hi - lo)))
                .collect()
        })
        .collect();
    let rewards: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..0.95)).collect();
    build_dataset(&weights, &rewards, BoxSupport::new(bounds).unwrap()).unwrap()
}

/// Per-sample coefficient rows and vertex constraint rows of the value dual:
/// the objective is `sum_i log(1 + row_i . theta)` over theta with
/// `1 + c . theta >= 0` for every vertex row c.
pub fn value_rows(ds: &LoggedDataset, v: &[f64]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let l = ds.policy_count();
    let row = |w: &[f64], r: f64| -> Vec<f64> {
        let mut x = vec![0.0; 2 * l];
        for j in 0..l {
            x[j] = w[j] - 1.0;
            x[l + j] = w[j] * r - v[j];
        }
        x
    };
    let samples = ds.samples().iter().map(|s| row(&s.weights, s.reward)).collect();
    let vertices = ds.support().vertices().into_iter().map(|(w, r)| row(&w, r)).collect();
    (samples, vertices)
}

pub fn diff_rows(ds: &LoggedDataset, d: f64) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let row = |w: &[f64], r: f64| -> Vec<f64> {
        vec![w[0] - 1.0, w[1] - 1.0, (w[1] - w[0]) * r - d]
    };
    let samples = ds.samples().iter().map(|s| row(&s.weights, s.reward)).collect();
    let vertices = ds.support().vertices().into_iter().map(|(w, r)| row(&w, r)).collect();
    (samples, vertices)
}

pub fn eval_point(samples: &[Vec<f64>], vertices: &[Vec<f64>], theta: &[f64]) -> Option<f64> {
    let dot = |x: &[f64]| 1.0 + x.iter().zip(theta).map(|(a, b)| a * b).sum::<f64>();
    for c in vertices {
        if dot(c) < 0.0 {
            return None;
        }
    }
    let mut total = 0.0;
    for x in samples {
        let g = dot(x);
        if g <= 0.0 {
            return None;
        }
        total += g.ln();
    }
    Some(total)
}

/// Orthonormal basis computations for one active set: a particular solution
/// of `1 + c . theta = 0` for every row in `rows`, and an orthonormal basis
/// of the common tangent space. Returns `None` when the system is
/// inconsistent.
pub fn active_set_subspace(rows: &[&Vec<f64>], dim: usize) -> Option<(Vec<f64>, Vec<Vec<f64>>)> {
    // Gram-Schmidt over the constraint normals.
    let mut q: Vec<Vec<f64>> = Vec::new();
    let mut independent: Vec<&Vec<f64>> = Vec::new();
    for c in rows {
        let mut r = (*c).clone();
        for qk in &q {
            let ip: f64 = r.iter().zip(qk).map(|(a, b)| a * b).sum();
            for (ri, qi) in r.iter_mut().zip(qk) {
                *ri -= ip * qi;
            }
        }
        let norm = r.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-10 {
            for ri in r.iter_mut() {
                *ri /= norm;
            }
            q.push(r);
            independent.push(c);
        }
    }
    // Solve for theta0 in the row space: A alpha = -1 with A[k][j] = c_k . q_j.
    let r = q.len();
    let mut a = vec![vec![0.0; r + 1]; r];
    for (k, c) in independent.iter().enumerate() {
        for (j, qj) in q.iter().enumerate() {
            a[k][j] = c.iter().zip(qj).map(|(x, y)| x * y).sum();
        }
        a[k][r] = -1.0;
    }
    for col in 0..r {
        let piv = (col..r).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        a.swap(col, piv);
        if a[col][col].abs() < 1e-12 {
            return None;
        }
        for row in 0..r {
            if row != col {
                let factor = a[row][col] / a[col][col];
                for k in col..=r {
                    a[row][k] -= factor * a[col][k];
                }
            }
        }
    }
    let mut theta0 = vec![0.0; dim];
    for (k, qk) in q.iter().enumerate() {
        let alpha = a[k][r] / a[k][k];
        for (t, qi) in theta0.iter_mut().zip(qk) {
            *t += alpha * qi;
        }
    }
    // Dependent rows must still be satisfied for the set to be consistent.
    for c in rows {
        let s = 1.0 + c.iter().zip(&theta0).map(|(a, b)| a * b).sum::<f64>();
        if s.abs() > 1e-8 {
            return None;
        }
    }
    // Complete to an orthonormal basis of the tangent space.
    let mut basis = Vec::new();
    for axis in 0..dim {
        let mut r = vec![0.0; dim];
        r[axis] = 1.0;
        for qk in q.iter().chain(&basis) {
            let ip: f64 = r.iter().zip(qk).map(|(a, b)| a * b).sum();
            for (ri, qi) in r.iter_mut().zip(qk) {
                *ri -= ip * qi;
            }
        }
        let norm = r.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            for ri in r.iter_mut() {
                *ri /= norm;
            }
            basis.push(r);
        }
    }
    Some((theta0, basis))
}

/// Maximize the sample sum-of-logs over `theta0 + basis . t` by nested grid
/// refinement followed by golden-section searches along random directions.
/// The objective tends to minus infinity at the domain boundary, so the
/// reduced problem is smooth and unconstrained.
pub fn maximize_in_subspace(
    samples: &[Vec<f64>],
    theta0: &[f64],
    basis: &[Vec<f64>],
) -> (Vec<f64>, f64) {
    let m = basis.len();
    let lift = |t: &[f64]| -> Vec<f64> {
        let mut theta = theta0.to_vec();
        for (tk, bk) in t.iter().zip(basis) {
            for (x, b) in theta.iter_mut().zip(bk) {
                *x += tk * b;
            }
        }
        theta
    };
    let eval = |t: &[f64]| -> f64 {
        let theta = lift(t);
        let mut total = 0.0;
        for x in samples {
            let g = 1.0 + x.iter().zip(&theta).map(|(a, b)| a * b).sum::<f64>();
            if g <= 0.0 {
                return f64::NEG_INFINITY;
            }
            total += g.ln();
        }
        total
    };
    let mut center = vec![0.0; m];
    let mut best = eval(&center);
    if m == 0 {
        return (lift(&center), best);
    }
    let points_per_axis = 9usize;
    let mut half = 60.0_f64;
    for _ in 0..50 {
        let mut stage_best = best;
        let mut stage_arg = center.clone();
        let mut idx = vec![0usize; m];
        let mut t = vec![0.0; m];
        'outer: loop {
            for a in 0..m {
                let frac = idx[a] as f64 / (points_per_axis - 1) as f64;
                t[a] = center[a] - half + 2.0 * half * frac;
            }
            let val = eval(&t);
            if val > stage_best {
                stage_best = val;
                stage_arg = t.clone();
            }
            for a in 0..m {
                idx[a] += 1;
                if idx[a] < points_per_axis {
                    continue 'outer;
                }
                idx[a] = 0;
            }
            break;
        }
        best = stage_best;
        center = stage_arg;
        // Keep the window wider than the old spacing so the maximizer cannot
        // escape between stages.
        half *= 0.55;
    }
    let gold = 0.5 * (5.0_f64.sqrt() - 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for round in 0..(60 * m + 40) {
        let dir: Vec<f64> = if round % (m + 1) < m {
            (0..m).map(|a| f64::from(a == round % (m + 1))).collect()
        } else {
            let raw: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-9);
            raw.into_iter().map(|x| x / norm).collect()
        };
        let probe = |s: f64| {
            let t: Vec<f64> = center.iter().zip(&dir).map(|(c, d)| c + s * d).collect();
            eval(&t)
        };
        let (mut lo, mut hi) = (-1.0_f64, 1.0_f64);
        for _ in 0..80 {
            let m1 = hi - gold * (hi - lo);
            let m2 = lo + gold * (hi - lo);
            if probe(m1) < probe(m2) {
                lo = m1;
            } else {
                hi = m2;
            }
        }
        let s = 0.5 * (lo + hi);
        if probe(s) > best {
            best = probe(s);
            for (c, d) in center.iter_mut().zip(&dir) {
                *c += s * d;
            }
        }
    }
    (lift(&center), best)
}

/// Brute-force maximization of the constrained dual by enumerating candidate
/// active sets of vertex constraints: each subset pins its constraints as
/// equalities, the reduced smooth problem is maximized by grid refinement,
/// and candidates violating any remaining constraint are discarded. The
/// winner over all subsets is the constrained supremum.
pub fn grid_dual_sup(samples: &[Vec<f64>], vertices: &[Vec<f64>]) -> f64 {
    let dim = samples[0].len();
    let mut best = eval_point(samples, vertices, &vec![0.0; dim])
        .expect("theta = 0 must be feasible");
    let subsets = 1usize << vertices.len();
    for mask in 0..subsets {
        if (mask as u32).count_ones() as usize > dim {
            continue;
        }
        let rows: Vec<&Vec<f64>> = vertices
            .iter()
            .enumerate()
            .filter(|(k, _)| mask >> k & 1 == 1)
            .map(|(_, c)| c)
            .collect();
        let Some((theta0, basis)) = active_set_subspace(&rows, dim) else {
            continue;
        };
        let (theta, value) = maximize_in_subspace(samples, &theta0, &basis);
        if value > best {
            let feasible = vertices.iter().all(|c| {
                1.0 + c.iter().zip(&theta).map(|(a, b)| a * b).sum::<f64>() >= -1e-9
            });
            if feasible {
                best = value;
            }
        }
    }
    best
}


/// Primal oracle: maximize `sum_i log Q_i` over data masses Q and vertex
/// masses P subject to total mass 1 and unit weight means. The linear
/// constraints enter as quadratic penalties with an increasing ladder, and
/// each penalized problem is solved by exact cyclic coordinate maximization
/// (the per-coordinate update has a closed form).
pub fn primal_mele_oracle(ds: &LoggedDataset) -> (Vec<f64>, f64) {
    let n = ds.len();
    let l = ds.policy_count();
    let verts = ds.support().vertices();
    let total = n + verts.len();
    // Stacked weight rows: data first, then vertices.
    let mut wrows: Vec<Vec<f64>> = ds.samples().iter().map(|s| s.weights.clone()).collect();
    for (w, _) in &verts {
        wrows.push(w.clone());
    }
    let mut u = vec![1.0 / total as f64; total];
    for &rho in &[1e2, 1e3, 1e4, 1e5, 1e6, 1e7, 1e8, 1e9, 1e10] {
        // Constraint residuals: total mass and per-policy weight moments.
        let mut r0: f64 = u.iter().sum::<f64>() - 1.0;
        let mut rj: Vec<f64> = (0..l)
            .map(|j| u.iter().zip(&wrows).map(|(ui, w)| ui * w[j]).sum::<f64>() - 1.0)
            .collect();
        for _ in 0..100_000 {
            let mut moved = 0.0_f64;
            for a in 0..total {
                let w = &wrows[a];
                // Penalty part as a function of the step delta in u[a]:
                // -rho/2 [(r0+delta)^2 + sum_j (rj + delta w_j)^2].
                let grad = -rho * (r0 + rj.iter().zip(w).map(|(r, wj)| r * wj).sum::<f64>());
                let curv = rho * (1.0 + w.iter().map(|wj| wj * wj).sum::<f64>());
                let unconstrained = u[a] + grad / curv;
                let new = if a < n {
                    // Maximize log(u) - curv/2 (u - unconstrained)^2: the
                    // positive root of curv u^2 - curv t u - 1 = 0.
                    0.5 * (unconstrained + (unconstrained * unconstrained + 4.0 / curv).sqrt())
                } else {
                    unconstrained.max(0.0)
                };
                let delta = new - u[a];
                if delta != 0.0 {
                    u[a] = new;
                    r0 += delta;
                    for (r, wj) in rj.iter_mut().zip(w) {
                        *r += delta * wj;
                    }
                    moved = moved.max(delta.abs());
                }
            }
            if moved < 1e-16 {
                break;
            }
        }
    }
    let loglik = u[..n].iter().map(|q| q.ln()).sum::<f64>() + n as f64 * (n as f64).ln();
    (u, loglik)
}

