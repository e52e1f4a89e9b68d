//! The per-stratum fractional program
//!
//! ```text
//! min  c1 / (a0 + Σ a_j e_j) + c0 / (b0 + Σ b_j (1 - e_j))   over e ∈ [low, up]^J
//! ```
//!
//! solved by pivot enumeration over stages sorted by a_j / b_j.

use std::cmp::Ordering;

use serde::Serialize;

use crate::error::{CaraError, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FractionalProgram {
    pub c1: f64,
    pub c0: f64,
    pub a0: f64,
    pub b0: f64,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub low: f64,
    pub up: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum BoundaryTag {
    AtLow,
    AtUp,
    Interior,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveReport {
    pub allocation: Vec<f64>,
    pub objective: f64,
    /// Stage left strictly inside the box, if any.
    pub pivot_index: Option<usize>,
    pub boundary_pattern: Vec<BoundaryTag>,
    pub feasible: bool,
    /// Stages with a_j = b_j = 0, set to 0.5.
    pub degenerate: Vec<usize>,
}

impl FractionalProgram {
    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(CaraError::InvalidProgram(m.to_string()));
        if !(self.c1 > 0.0 && self.c0 > 0.0) {
            return bad("c1 and c0 must be positive");
        }
        if !(self.a0 >= 0.0 && self.b0 >= 0.0) {
            return bad("a0 and b0 must be non-negative");
        }
        if self.a.len() != self.b.len() {
            return bad("a and b differ in length");
        }
        if self.a.iter().chain(&self.b).any(|&v| !(v >= 0.0 && v.is_finite())) {
            return bad("stage weights must be non-negative");
        }
        if !(0.0 < self.low && self.low < self.up && self.up < 1.0) {
            return bad("box must satisfy 0 < low < up < 1");
        }
        Ok(())
    }

    /// (α, β) = (a0 + Σ a e, b0 + Σ b (1 - e)).
    pub fn masses(&self, e: &[f64]) -> (f64, f64) {
        let mut alpha = self.a0;
        let mut beta = self.b0;
        for ((a, b), e) in self.a.iter().zip(&self.b).zip(e) {
            alpha += a * e;
            beta += b * (1.0 - e);
        }
        (alpha, beta)
    }

    pub fn objective(&self, e: &[f64]) -> f64 {
        let (alpha, beta) = self.masses(e);
        self.c1 / alpha + self.c0 / beta
    }

    /// Non-degenerate stages ordered by a/b ascending; among equal ratios
    /// later stages come first so the earliest one is the last sent to `low`.
    pub fn ratio_order(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.len())
            .filter(|&j| self.a[j] > 0.0 || self.b[j] > 0.0)
            .collect();
        idx.sort_by(|&i, &j| {
            let lhs = self.a[i] * self.b[j];
            let rhs = self.a[j] * self.b[i];
            lhs.partial_cmp(&rhs).unwrap_or(Ordering::Equal).then(j.cmp(&i))
        });
        idx
    }
}

/// Minimizer of c1/(A + a e) + c0/(B + b (1 - e)) over [low, up].
#[allow(clippy::too_many_arguments)]
pub fn one_dim_minimizer(c1: f64, c0: f64, big_a: f64, big_b: f64, a: f64, b: f64, low: f64, up: f64) -> f64 {
    if a == 0.0 {
        return low;
    }
    if b == 0.0 {
        return up;
    }
    let s1 = (c1 * a).sqrt();
    let s0 = (c0 * b).sqrt();
    let e = (s1 * (big_b + b) - s0 * big_a) / (s1 * b + s0 * a);
    e.clamp(low, up)
}

fn tag(e: f64, low: f64, up: f64) -> BoundaryTag {
    if e <= low {
        BoundaryTag::AtLow
    } else if e >= up {
        BoundaryTag::AtUp
    } else {
        BoundaryTag::Interior
    }
}

pub fn solve_fractional(fp: &FractionalProgram) -> Result<SolveReport> {
    fp.validate()?;
    let order = fp.ratio_order();
    let mut alloc = vec![0.5; fp.len()];
    let degenerate: Vec<usize> = (0..fp.len())
        .filter(|&j| fp.a[j] == 0.0 && fp.b[j] == 0.0)
        .collect();

    if order.is_empty() {
        let objective = fp.objective(&alloc);
        if !objective.is_finite() {
            return Err(CaraError::InvalidProgram("no observation mass in either arm".into()));
        }
        return Ok(SolveReport {
            boundary_pattern: vec![BoundaryTag::Interior; fp.len()],
            allocation: alloc,
            objective,
            pivot_index: None,
            feasible: true,
            degenerate,
        });
    }

    // fixed masses with every sorted stage at `up`
    let mut alpha_up = fp.a0;
    let mut beta_up = fp.b0;
    for &j in &order {
        alpha_up += fp.a[j] * fp.up;
        beta_up += fp.b[j] * (1.0 - fp.up);
    }
    let mut best: Option<(f64, usize, f64)> = None;
    let mut alpha = alpha_up;
    let mut beta = beta_up;
    for (k, &j) in order.iter().enumerate() {
        // stages before k sit at low, after k at up; remove j's own mass
        let big_a = alpha - fp.a[j] * fp.up;
        let big_b = beta - fp.b[j] * (1.0 - fp.up);
        let e = one_dim_minimizer(fp.c1, fp.c0, big_a, big_b, fp.a[j], fp.b[j], fp.low, fp.up);
        let obj = fp.c1 / (big_a + fp.a[j] * e) + fp.c0 / (big_b + fp.b[j] * (1.0 - e));
        if obj.is_finite() && best.is_none_or(|(o, _, _)| obj < o) {
            best = Some((obj, k, e));
        }
        alpha = big_a + fp.a[j] * fp.low;
        beta = big_b + fp.b[j] * (1.0 - fp.low);
    }
    let (_, k, e) = best.ok_or_else(|| CaraError::InvalidProgram("objective infinite at every pivot".into()))?;
    for (pos, &j) in order.iter().enumerate() {
        alloc[j] = match pos.cmp(&k) {
            Ordering::Less => fp.low,
            Ordering::Equal => e,
            Ordering::Greater => fp.up,
        };
    }
    let pattern: Vec<BoundaryTag> = (0..fp.len())
        .map(|j| {
            if degenerate.contains(&j) {
                BoundaryTag::Interior
            } else {
                tag(alloc[j], fp.low, fp.up)
            }
        })
        .collect();
    let pivot_index = (tag(e, fp.low, fp.up) == BoundaryTag::Interior).then_some(order[k]);
    Ok(SolveReport {
        objective: fp.objective(&alloc),
        allocation: alloc,
        pivot_index,
        boundary_pattern: pattern,
        feasible: true,
        degenerate,
    })
}

/// Vertices (α_j, β_j) of the upper boundary of the reachable (α, β) set:
/// vertex j has the j lowest-ratio stages at `low` and the rest at `up`.
pub fn upper_boundary_vertices(fp: &FractionalProgram) -> Vec<(f64, f64)> {
    let order = fp.ratio_order();
    let mut e = vec![0.5; fp.len()];
    for &j in &order {
        e[j] = fp.up;
    }
    let mut out = vec![fp.masses(&e)];
    for &j in &order {
        e[j] = fp.low;
        out.push(fp.masses(&e));
    }
    out
}

/// Euclidean distance from `point` to the polyline through `vertices`.
pub fn distance_to_polyline(vertices: &[(f64, f64)], point: (f64, f64)) -> f64 {
    let (px, py) = point;
    if vertices.len() == 1 {
        return ((px - vertices[0].0).powi(2) + (py - vertices[0].1).powi(2)).sqrt();
    }
    vertices
        .windows(2)
        .map(|w| {
            let (x0, y0) = w[0];
            let (dx, dy) = (w[1].0 - x0, w[1].1 - y0);
            let len2 = dx * dx + dy * dy;
            let s = if len2 == 0.0 {
                0.0
            } else {
                (((px - x0) * dx + (py - y0) * dy) / len2).clamp(0.0, 1.0)
            };
            ((px - x0 - s * dx).powi(2) + (py - y0 - s * dy).powi(2)).sqrt()
        })
        .fold(f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fp(c1: f64, c0: f64, a: Vec<f64>, b: Vec<f64>) -> FractionalProgram {
        FractionalProgram {
            c1,
            c0,
            a0: 0.0,
            b0: 0.0,
            a,
            b,
            low: 0.1,
            up: 0.9,
        }
    }

    fn grid_min(p: &FractionalProgram) -> f64 {
        let steps = ((p.up - p.low) / 1e-3).round() as usize;
        let pts: Vec<f64> = (0..=steps).map(|i| p.low + i as f64 * 1e-3).collect();
        let mut best = f64::INFINITY;
        match p.len() {
            2 => {
                for &x in &pts {
                    for &y in &pts {
                        best = best.min(p.objective(&[x, y]));
                    }
                }
            }
            3 => {
                // exact in the third coordinate given the first two
                for &x in &pts {
                    for &y in &pts {
                        let (al, be) = p.masses(&[x, y, 0.0]);
                        let be = be - p.b[2];
                        let z = one_dim_minimizer(p.c1, p.c0, al, be, p.a[2], p.b[2], p.low, p.up);
                        let zs = [z, (z / 1e-3).floor() * 1e-3, (z / 1e-3).ceil() * 1e-3];
                        for z in zs.into_iter().filter(|z| (p.low..=p.up).contains(z)) {
                            best = best.min(p.objective(&[x, y, z]));
                        }
                    }
                }
            }
            _ => unreachable!(),
        }
        best
    }

    #[test]
    fn single_stage_closed_form() {
        let r = solve_fractional(&fp(1.0, 4.0, vec![1.0], vec![1.0])).unwrap();
        assert!((r.allocation[0] - 1.0 / 3.0).abs() < 1e-14);
        assert!((r.objective - 9.0).abs() < 1e-12);
        assert_eq!(r.pivot_index, Some(0));
        assert_eq!(r.boundary_pattern, vec![BoundaryTag::Interior]);
    }

    #[test]
    fn symmetric_arms_average_half() {
        let r = solve_fractional(&fp(2.0, 2.0, vec![0.3, 0.2, 0.1], vec![0.3, 0.2, 0.1])).unwrap();
        let avg: f64 = r.allocation.iter().zip([0.3, 0.2, 0.1]).map(|(e, w)| e * w).sum::<f64>() / 0.6;
        assert!((avg - 0.5).abs() < 1e-12);
        assert!((r.objective - 2.0 / 0.3 * 2.0).abs() < 1e-12);
    }

    #[test]
    fn earliest_tied_stage_goes_up() {
        let r = solve_fractional(&fp(1.0, 1.0, vec![0.25; 4], vec![0.25; 4])).unwrap();
        // ē = 0.5 with one interior stage: stages 0, 1 up, 2 interior-or-low
        assert_eq!(r.allocation[0], 0.9);
        assert!(r.allocation[3] <= r.allocation[2] && r.allocation[2] <= r.allocation[1]);
        assert!(r.boundary_pattern.iter().filter(|&&t| t == BoundaryTag::Interior).count() <= 1);
    }

    #[test]
    fn degenerate_stage_is_reported() {
        let r = solve_fractional(&fp(1.0, 1.0, vec![0.5, 0.0], vec![0.5, 0.0])).unwrap();
        assert_eq!(r.degenerate, vec![1]);
        assert_eq!(r.allocation[1], 0.5);
    }

    #[test]
    fn invalid_box_rejected() {
        let mut p = fp(1.0, 1.0, vec![1.0], vec![1.0]);
        p.low = 0.6;
        p.up = 0.4;
        assert!(matches!(solve_fractional(&p), Err(CaraError::InvalidProgram(_))));
    }

    #[test]
    fn matches_grid_on_random_instances() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let j = rng.random_range(2..=3);
            let p = FractionalProgram {
                c1: rng.random_range(0.1..2.0),
                c0: rng.random_range(0.1..2.0),
                a0: rng.random_range(0.0..0.5),
                b0: rng.random_range(0.0..0.5),
                a: (0..j).map(|_| rng.random_range(0.1..2.0)).collect(),
                b: (0..j).map(|_| rng.random_range(0.1..2.0)).collect(),
                low: 0.1,
                up: 0.9,
            };
            let s = solve_fractional(&p).unwrap();
            let g = grid_min(&p);
            assert!(s.objective <= g * (1.0 + 1e-4), "{} vs {}", s.objective, g);
        }
    }

    proptest! {
        #[test]
        fn report_is_self_consistent(
            c1 in 0.1f64..2.0, c0 in 0.1f64..2.0,
            a in prop::collection::vec(0.0f64..2.0, 1..6),
            seed in prop::collection::vec(0.0f64..2.0, 6),
        ) {
            let b: Vec<f64> = seed.iter().take(a.len()).copied().collect();
            let p = FractionalProgram { c1, c0, a0: 0.05, b0: 0.05, a, b, low: 0.1, up: 0.9 };
            let r = solve_fractional(&p).unwrap();
            prop_assert!((r.objective - p.objective(&r.allocation)).abs() <= 1e-10 * r.objective);
            prop_assert!(r.boundary_pattern.iter().filter(|&&t| t == BoundaryTag::Interior).count() <= 1 + r.degenerate.len());
            let verts = upper_boundary_vertices(&p);
            prop_assert!(distance_to_polyline(&verts, p.masses(&r.allocation)) < 1e-9);
            // stages with a lower ratio than the pivot sit at low, higher at up
            if let Some(piv) = r.pivot_index {
                for j in 0..p.len() {
                    if r.degenerate.contains(&j) { continue; }
                    let lhs = p.a[j] * p.b[piv];
                    let rhs = p.a[piv] * p.b[j];
                    if lhs < rhs - 1e-15 { prop_assert_eq!(r.allocation[j], p.low); }
                    if lhs > rhs + 1e-15 { prop_assert_eq!(r.allocation[j], p.up); }
                }
            }
        }
    }
}
