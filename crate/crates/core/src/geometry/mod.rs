//! Convex-hull geometry over the columns of a context matrix.

pub mod simplex;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{ContextDistribution, ContextMatrix};
use simplex::{LinearProgram, LpOutcome, Relation};

/// Tolerance separating points inside the hull from points outside.
pub const MEMBERSHIP_TOL: f64 = 1e-8;
/// Rays shorter than this (sup norm) are treated as degenerate.
pub const DEGENERATE_RAY_TOL: f64 = 1e-12;

/// A distribution over arms together with the context distribution it induces.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArmMixture {
    pub pi: Vec<f64>,
    pub target: ContextDistribution,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RayExit {
    pub exit_point: ContextDistribution,
    pub scale: f64,
    pub mixture: ArmMixture,
}

fn sup_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).fold(0.0, |m, (a, b)| m.max((a - b).abs()))
}

fn clean_simplex(v: &mut [f64]) {
    for x in v.iter_mut() {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
    let s: f64 = v.iter().sum();
    if s > 0.0 {
        for x in v.iter_mut() {
            *x /= s;
        }
    }
}

// Rows `A lambda - direction * s = origin` for the first k-1 contexts plus
// `sum lambda = 1`. The last context row follows from the column sums.
fn hull_program(a: &ContextMatrix, origin: &[f64], direction: Option<&[f64]>) -> LinearProgram {
    let (k, n) = (a.k(), a.n());
    let extra = usize::from(direction.is_some());
    let mut lp = LinearProgram::new(n + extra);
    for j in 0..k.saturating_sub(1) {
        let mut row: Vec<f64> = (0..n).map(|i| a.get(j, i)).collect();
        if let Some(d) = direction {
            row.push(-d[j]);
        }
        lp.add_row(row, Relation::Eq, origin[j]);
    }
    let mut row = vec![1.0; n];
    if direction.is_some() {
        row.push(0.0);
    }
    lp.add_row(row, Relation::Eq, 1.0);
    if direction.is_some() {
        let mut c = vec![0.0; n + 1];
        c[n] = 1.0;
        lp.set_objective(c);
    }
    lp
}

/// Returns a mixture of arms reproducing `p`, or `None` when `p` lies outside
/// the convex hull of the columns of `a`.
pub fn hull_membership(p: &[f64], a: &ContextMatrix) -> Option<ArmMixture> {
    assert_eq!(p.len(), a.k(), "point dimension must match the number of contexts");
    let LpOutcome::Optimal { x: mut pi, .. } = hull_program(a, p, None).solve() else {
        return None;
    };
    clean_simplex(&mut pi);
    if sup_dist(&a.mix(&pi), p) > MEMBERSHIP_TOL {
        return None;
    }
    Some(ArmMixture {
        pi,
        target: ContextDistribution::new_unchecked(p.to_vec()),
    })
}

/// Maximizes `s` such that `origin + s * direction` is in the hull. Returns
/// the scale and the arm mixture attaining it.
pub fn solve_scale_lp(
    origin: &[f64],
    direction: &[f64],
    a: &ContextMatrix,
) -> Result<(f64, Vec<f64>)> {
    if direction.len() != a.k() || origin.len() != a.k() {
        return Err(Error::Geometry("dimension mismatch".into()));
    }
    if direction.iter().all(|d| d.abs() <= DEGENERATE_RAY_TOL) {
        return Err(Error::DegenerateRay);
    }
    let n = a.n();
    match hull_program(a, origin, Some(direction)).solve() {
        LpOutcome::Optimal { x, value } => {
            let mut lambda = x[..n].to_vec();
            clean_simplex(&mut lambda);
            Ok((value, lambda))
        }
        LpOutcome::Infeasible { residual } => Err(Error::Geometry(format!(
            "ray does not meet the hull (residual {residual:e})"
        ))),
        LpOutcome::Unbounded => Err(Error::Geometry("unbounded scale".into())),
    }
}

/// Extends the ray from `origin` through `through` until it leaves the hull.
///
/// `through` must lie in the hull. Fails with [`Error::DegenerateRay`] when the
/// two points coincide.
pub fn ray_exit(origin: &[f64], through: &[f64], a: &ContextMatrix) -> Result<RayExit> {
    let k = a.k();
    if origin.len() != k || through.len() != k {
        return Err(Error::Geometry("dimension mismatch".into()));
    }
    let direction: Vec<f64> = through.iter().zip(origin).map(|(t, o)| t - o).collect();
    if sup_dist(origin, through) <= DEGENERATE_RAY_TOL {
        return Err(Error::DegenerateRay);
    }
    let (scale, pi) = solve_scale_lp(origin, &direction, a)?;
    if scale < 1.0 - 1e-6 {
        return Err(Error::Geometry(format!(
            "through point outside the hull (max scale {scale})"
        )));
    }
    let scale = scale.max(1.0);
    let mut exit: Vec<f64> = origin
        .iter()
        .zip(&direction)
        .map(|(o, d)| o + scale * d)
        .collect();
    clean_simplex(&mut exit);
    let err = sup_dist(&a.mix(&pi), &exit);
    if err > MEMBERSHIP_TOL {
        return Err(Error::Geometry(format!("mixture certificate off by {err:e}")));
    }
    let exit_point = ContextDistribution::new_unchecked(exit);
    Ok(RayExit {
        exit_point: exit_point.clone(),
        scale,
        mixture: ArmMixture {
            pi,
            target: exit_point,
        },
    })
}
