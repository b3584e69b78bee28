//! Projected Levenberg-Marquardt on the reweighted normal equations.

use nalgebra::{DMatrix, DVector, Matrix2};

use crate::error::{Error, Result};
use crate::optimize::RefinementProblem;
use crate::Point2;

const INITIAL_DAMPING: f64 = 1e-4;
const DAMPING_UP: f64 = 10.0;
const DAMPING_DOWN: f64 = 0.3;
const MAX_DAMPING: f64 = 1e14;
const RELATIVE_DECREASE_TOL: f64 = 1e-8;
const STEP_TOL: f64 = 1e-4;
/// Above this many free nodes the normal equations are solved iteratively.
const DENSE_LIMIT: usize = 200;
const PCG_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    /// LM iterations, accepted or not.
    pub iterations: usize,
    pub initial_objective: f64,
    pub final_objective: f64,
    /// Largest per-node step of the last accepted iteration.
    pub max_step: f64,
    /// Per local node, distance from the initial position.
    pub moved: Vec<f64>,
    pub converged: bool,
    /// Objective after every accepted step, starting with the initial value.
    pub history: Vec<f64>,
}

/// Euclidean projection onto the L1 ball of radius `k`.
pub fn project_l1(p: Point2, k: f64) -> Point2 {
    let (ax, ay) = (p.x.abs(), p.y.abs());
    if ax + ay <= k {
        return p;
    }
    if ax - ay >= k {
        return Point2::new(k * p.x.signum(), 0.0);
    }
    if ay - ax >= k {
        return Point2::new(0.0, k * p.y.signum());
    }
    let theta = 0.5 * (ax + ay - k);
    Point2::new(p.x.signum() * (ax - theta), p.y.signum() * (ay - theta))
}

/// Objective `sum w * rho(|r|^2)` at the given per-node offsets.
pub fn objective_value(problem: &RefinementProblem, offsets: &[Point2]) -> f64 {
    problem
        .blocks
        .iter()
        .map(|b| {
            let e = b.evaluate(offsets[b.from], offsets[b.to], problem.flow_model);
            b.weight * b.loss.evaluate(e.residual.norm_squared()).0
        })
        .sum()
}

/// Damped normal equations over the free variables, in 2x2 blocks.
struct Normal {
    diag: Vec<Matrix2<f64>>,
    /// `(i, j, H_ij)` with `i < j`, merged and sorted.
    off: Vec<(usize, usize, Matrix2<f64>)>,
    grad: Vec<Point2>,
}

fn linearize(problem: &RefinementProblem, var_of: &[Option<usize>], offsets: &[Point2], n: usize) -> Result<Normal> {
    let mut diag = vec![Matrix2::zeros(); n];
    let mut grad = vec![Point2::zeros(); n];
    let mut off = Vec::new();
    for b in &problem.blocks {
        let e = b.evaluate(offsets[b.from], offsets[b.to], problem.flow_model);
        if !(e.residual.iter().all(|v| v.is_finite()) && e.jac_from.iter().all(|v| v.is_finite())) {
            return Err(Error::NonFinite {
                from: problem.nodes[b.from],
                to: problem.nodes[b.to],
            });
        }
        let c = b.weight * b.loss.evaluate(e.residual.norm_squared()).1;
        if c == 0.0 {
            continue;
        }
        let (vi, vj) = (var_of[b.from], var_of[b.to]);
        if let Some(i) = vi {
            diag[i] += c * e.jac_from.transpose() * e.jac_from;
            grad[i] += c * e.jac_from.transpose() * e.residual;
        }
        if let Some(j) = vj {
            diag[j] += c * e.jac_to.transpose() * e.jac_to;
            grad[j] += c * e.jac_to.transpose() * e.residual;
        }
        if let (Some(i), Some(j)) = (vi, vj) {
            let m = c * e.jac_from.transpose() * e.jac_to;
            if i < j {
                off.push((i, j, m));
            } else {
                off.push((j, i, m.transpose()));
            }
        }
    }
    off.sort_by_key(|&(i, j, _)| (i, j));
    let mut merged: Vec<(usize, usize, Matrix2<f64>)> = Vec::with_capacity(off.len());
    for (i, j, m) in off {
        match merged.last_mut() {
            Some(last) if (last.0, last.1) == (i, j) => last.2 += m,
            _ => merged.push((i, j, m)),
        }
    }
    Ok(Normal {
        diag,
        off: merged,
        grad,
    })
}

fn damped_diag(normal: &Normal, lambda: f64) -> Vec<Matrix2<f64>> {
    normal
        .diag
        .iter()
        .map(|d| {
            let mut d = *d;
            d[(0, 0)] += lambda * d[(0, 0)].max(1e-6);
            d[(1, 1)] += lambda * d[(1, 1)].max(1e-6);
            d
        })
        .collect()
}

/// Solves `(H + lambda D) delta = -g`; `None` if the system is not positive definite.
fn solve_step(normal: &Normal, lambda: f64) -> Option<Vec<Point2>> {
    let n = normal.diag.len();
    let diag = damped_diag(normal, lambda);
    if n <= DENSE_LIMIT {
        let mut a = DMatrix::<f64>::zeros(2 * n, 2 * n);
        for (i, d) in diag.iter().enumerate() {
            a.fixed_view_mut::<2, 2>(2 * i, 2 * i).copy_from(d);
        }
        for &(i, j, m) in &normal.off {
            a.fixed_view_mut::<2, 2>(2 * i, 2 * j).copy_from(&m);
            a.fixed_view_mut::<2, 2>(2 * j, 2 * i).copy_from(&m.transpose());
        }
        let rhs = DVector::from_iterator(2 * n, normal.grad.iter().flat_map(|g| [-g.x, -g.y]));
        let x = a.cholesky()?.solve(&rhs);
        Some((0..n).map(|i| Point2::new(x[2 * i], x[2 * i + 1])).collect())
    } else {
        pcg(&diag, &normal.off, &normal.grad)
    }
}

/// Conjugate gradients with a block-Jacobi preconditioner.
fn pcg(diag: &[Matrix2<f64>], off: &[(usize, usize, Matrix2<f64>)], grad: &[Point2]) -> Option<Vec<Point2>> {
    let n = diag.len();
    let inv: Vec<Matrix2<f64>> = diag.iter().map(|d| d.try_inverse()).collect::<Option<_>>()?;
    let mul = |x: &[Point2], y: &mut [Point2]| {
        for i in 0..n {
            y[i] = diag[i] * x[i];
        }
        for &(i, j, m) in off {
            y[i] += m * x[j];
            y[j] += m.transpose() * x[i];
        }
    };
    let dot = |a: &[Point2], b: &[Point2]| a.iter().zip(b).map(|(p, q)| p.dot(q)).sum::<f64>();

    let mut x = vec![Point2::zeros(); n];
    let mut r: Vec<Point2> = grad.iter().map(|g| -g).collect();
    let b_norm = dot(&r, &r).sqrt();
    if b_norm == 0.0 {
        return Some(x);
    }
    let mut z: Vec<Point2> = r.iter().zip(&inv).map(|(r, m)| m * r).collect();
    let mut p = z.clone();
    let mut ap = vec![Point2::zeros(); n];
    let mut rz = dot(&r, &z);
    for _ in 0..(2 * n).max(100) {
        mul(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return None;
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        if dot(&r, &r).sqrt() <= PCG_TOL * b_norm {
            break;
        }
        for i in 0..n {
            z[i] = inv[i] * r[i];
        }
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Some(x)
}

/// Minimizes the problem's objective from zero offsets. Returns the final
/// per-node offsets (fixed nodes stay exactly zero) and a report.
pub fn solve_component(problem: &RefinementProblem, max_iterations: usize) -> Result<(Vec<Point2>, SolveReport)> {
    let mut var_of = vec![None; problem.nodes.len()];
    let mut free = Vec::new();
    for (i, &fixed) in problem.fixed.iter().enumerate() {
        if !fixed {
            var_of[i] = Some(free.len());
            free.push(i);
        }
    }
    let mut x = vec![Point2::zeros(); problem.nodes.len()];
    let mut f = objective_value(problem, &x);
    if !f.is_finite() {
        // Name the first offending edge.
        linearize(problem, &var_of, &x, free.len())?;
        return Err(Error::InvalidInput(
            "objective is not finite at the initial point".into(),
        ));
    }
    let mut report = SolveReport {
        iterations: 0,
        initial_objective: f,
        final_objective: f,
        max_step: 0.0,
        moved: vec![0.0; problem.nodes.len()],
        converged: true,
        history: vec![f],
    };
    if free.is_empty() || f == 0.0 {
        return Ok((x, report));
    }

    report.converged = false;
    let mut lambda = INITIAL_DAMPING;
    let mut normal = linearize(problem, &var_of, &x, free.len())?;
    while report.iterations < max_iterations {
        report.iterations += 1;
        let Some(delta) = solve_step(&normal, lambda) else {
            lambda *= DAMPING_UP;
            if lambda > MAX_DAMPING {
                report.converged = true;
                break;
            }
            continue;
        };
        let mut candidate = x.clone();
        let mut max_step: f64 = 0.0;
        for (v, &i) in free.iter().enumerate() {
            candidate[i] = project_l1(x[i] + delta[v], problem.bound);
            max_step = max_step.max((candidate[i] - x[i]).norm());
        }
        let f_new = objective_value(problem, &candidate);
        if f_new < f {
            let decrease = (f - f_new) / f;
            x = candidate;
            f = f_new;
            report.history.push(f);
            report.max_step = max_step;
            lambda = (lambda * DAMPING_DOWN).max(1e-12);
            if decrease < RELATIVE_DECREASE_TOL || max_step < STEP_TOL || f == 0.0 {
                report.converged = true;
                break;
            }
            normal = linearize(problem, &var_of, &x, free.len())?;
        } else {
            lambda *= DAMPING_UP;
            if lambda > MAX_DAMPING || max_step < STEP_TOL * 1e-3 {
                // No descent direction left at this resolution.
                report.converged = true;
                break;
            }
        }
    }
    report.final_objective = f;
    report.moved = x.iter().map(|p| p.norm()).collect();
    Ok((x, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::align::FlowField;
    use crate::optimize::{FlowModel, Mode, ResidualBlock, RobustLoss};
    use rand::{Rng, SeedableRng};

    fn block(from: usize, to: usize, d: Point2, w: f64, loss: RobustLoss) -> ResidualBlock {
        ResidualBlock {
            edge: 0,
            from,
            to,
            weight: w,
            loss,
            flow: FlowField::constant(from, to, 8.0, d),
        }
    }

    fn problem(n: usize, fixed: &[usize], blocks: Vec<ResidualBlock>) -> RefinementProblem {
        let mut blocks = blocks;
        for (e, b) in blocks.iter_mut().enumerate() {
            b.edge = e;
        }
        RefinementProblem {
            nodes: (0..n).collect(),
            fixed: (0..n).map(|i| fixed.contains(&i)).collect(),
            blocks,
            bound: 16.0,
            mode: Mode::Full,
            flow_model: FlowModel::Grid,
        }
    }

    #[test]
    fn l1_projection() {
        let k = 16.0;
        assert_eq!(project_l1(Point2::new(40.0, 0.0), k), Point2::new(16.0, 0.0));
        assert_eq!(project_l1(Point2::new(3.0, -4.0), k), Point2::new(3.0, -4.0));
        assert_eq!(project_l1(Point2::new(-30.0, 2.0), k), Point2::new(-16.0, 0.0));
        let p = project_l1(Point2::new(10.0, 10.0), k);
        assert!((p - Point2::new(8.0, 8.0)).norm() < 1e-12);
        // Against a brute-force nearest point on the ball's boundary.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let q = Point2::new(rng.random_range(-40.0..40.0), rng.random_range(-40.0..40.0));
            let p = project_l1(q, k);
            assert!(p.x.abs() + p.y.abs() <= k + 1e-9);
            let best = (0..40000)
                .map(|s| {
                    let t = s as f64 / 40000.0 * 4.0;
                    let (sx, sy, u) = match t as usize {
                        0 => (1.0, 1.0, t),
                        1 => (-1.0, 1.0, t - 1.0),
                        2 => (-1.0, -1.0, t - 2.0),
                        _ => (1.0, -1.0, t - 3.0),
                    };
                    Point2::new(sx * k * (1.0 - u), sy * k * u)
                })
                .chain(std::iter::once(q))
                .filter(|c| c.x.abs() + c.y.abs() <= k + 1e-9)
                .map(|c| (c - q).norm())
                .fold(f64::INFINITY, f64::min);
            assert!((p - q).norm() <= best + 1e-3);
        }
    }

    #[test]
    fn exact_single_edge() {
        let p = problem(
            2,
            &[0],
            vec![block(0, 1, Point2::new(2.0, 0.0), 1.0, RobustLoss::cauchy(4.0))],
        );
        let (x, report) = solve_component(&p, 200).unwrap();
        assert!((x[1] - Point2::new(2.0, 0.0)).norm() < 1e-6);
        assert!(report.final_objective < 1e-12);
        assert_eq!(x[0], Point2::zeros());
    }

    #[test]
    fn far_target_is_projected() {
        let p = problem(
            2,
            &[0],
            vec![block(0, 1, Point2::new(40.0, 0.0), 1.0, RobustLoss::cauchy(4.0))],
        );
        let (x, _) = solve_component(&p, 200).unwrap();
        assert!((x[1] - Point2::new(16.0, 0.0)).norm() < 1e-6, "{x:?}");
    }

    #[test]
    fn objective_closed_form() {
        let p = problem(
            2,
            &[0],
            vec![block(0, 1, Point2::new(2.0, 0.0), 1.0, RobustLoss::cauchy(4.0))],
        );
        let f = objective_value(&p, &[Point2::zeros(); 2]);
        assert!((f - 16.0 * (1.25f64).ln()).abs() < 1e-12);
        assert!((f - 3.5700).abs() < 1e-3);
        let zero = problem(
            2,
            &[0],
            vec![block(0, 1, Point2::zeros(), 1.0, RobustLoss::cauchy(4.0))],
        );
        assert_eq!(objective_value(&zero, &[Point2::zeros(); 2]), 0.0);
    }

    #[test]
    fn conflicting_flows_match_grid_search() {
        let p = problem(
            3,
            &[0, 1],
            vec![
                block(0, 2, Point2::zeros(), 1.0, RobustLoss::cauchy(4.0)),
                block(1, 2, Point2::new(2.0, 0.0), 1.0, RobustLoss::cauchy(4.0)),
            ],
        );
        let (x, report) = solve_component(&p, 200).unwrap();
        // 1-D search along the segment; symmetric objective gives x = 1.
        let scalar = |t: f64| {
            let mut o = vec![Point2::zeros(); 3];
            o[2] = Point2::new(t, 0.0);
            objective_value(&p, &o)
        };
        let best = (0..=4000)
            .map(|i| -1.0 + i as f64 * 1e-3)
            .min_by(|a, b| scalar(*a).total_cmp(&scalar(*b)))
            .unwrap();
        assert!(
            (x[2].x - best).abs() <= 1e-3 && x[2].y.abs() <= 1e-6,
            "{:?} vs {best}",
            x[2]
        );
        assert!(report.history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn fixed_nodes_do_not_move() {
        let p = problem(
            3,
            &[0],
            vec![
                block(0, 1, Point2::new(1.0, 1.0), 1.0, RobustLoss::cauchy(4.0)),
                block(1, 2, Point2::new(0.5, -1.0), 0.7, RobustLoss::tukey(1.0)),
                block(2, 0, Point2::new(-1.0, 0.2), 0.9, RobustLoss::cauchy(4.0)),
            ],
        );
        let (x, report) = solve_component(&p, 200).unwrap();
        assert_eq!(x[0].x.to_bits(), 0f64.to_bits());
        assert_eq!(x[0].y.to_bits(), 0f64.to_bits());
        assert!(report.final_objective <= report.initial_objective);
    }

    #[test]
    fn no_free_variables() {
        let p = problem(
            2,
            &[0, 1],
            vec![block(0, 1, Point2::new(3.0, 0.0), 1.0, RobustLoss::cauchy(4.0))],
        );
        let (x, report) = solve_component(&p, 200).unwrap();
        assert_eq!(x, vec![Point2::zeros(); 2]);
        assert_eq!(report.iterations, 0);
    }

    #[test]
    fn non_finite_flow_names_edge() {
        let mut p = problem(
            2,
            &[0],
            vec![block(0, 1, Point2::new(f64::NAN, 0.0), 1.0, RobustLoss::cauchy(4.0))],
        );
        p.nodes = vec![7, 9];
        match solve_component(&p, 200) {
            Err(Error::NonFinite { from, to }) => assert_eq!((from, to), (7, 9)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn iterative_path_agrees_with_dense() {
        // A chain long enough for the iterative solver.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let n = DENSE_LIMIT + 40;
        let mut blocks = Vec::new();
        for i in 0..n - 1 {
            let d = Point2::new(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1));
            blocks.push(block(i, i + 1, d, 1.0, RobustLoss::cauchy(4.0)));
            blocks.push(block(i + 1, i, -d, 1.0, RobustLoss::cauchy(4.0)));
        }
        let p = problem(n, &[0], blocks);
        let (x, report) = solve_component(&p, 200).unwrap();
        assert!(report.final_objective < 1e-10, "{}", report.final_objective);
        // Every node sits at the running sum of displacements, within the bound.
        let mut expected = Point2::zeros();
        for (i, xi) in x.iter().enumerate().skip(1) {
            expected += p.blocks[2 * (i - 1)].flow.center();
            if expected.x.abs() + expected.y.abs() < 15.0 {
                assert!((xi - expected).norm() < 1e-5);
            } else {
                break;
            }
        }
    }
}
