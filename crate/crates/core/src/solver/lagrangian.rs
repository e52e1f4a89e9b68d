//! Fractional program plus a linear term:
//!
//! ```text
//! min  c1 / (a0 + Σ a_j e_j) + c0 / (b0 + Σ b_j (1 - e_j)) + κ Σ r_j e_j
//! ```
//!
//! At an optimum the sign of the partial derivative in e_j is the sign of
//! ⟨N, (a_j, b_j, r_j)⟩ for a fixed normal N, so stages split by a plane
//! through the origin and generically at most two stay interior. Every
//! plane through two stage directions is enumerated and the two free
//! coordinates are solved exactly.

use crate::error::{CaraError, Result};
use crate::solver::fractional::{solve_fractional, FractionalProgram};
use crate::solver::onedim::argmin_convex;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearFractional {
    pub fp: FractionalProgram,
    pub r: Vec<f64>,
    pub kappa: f64,
}

/// Stages sharing one direction in (a, b, r) space, merged into a single
/// variable S = Σ c_k e_k.
#[derive(Debug, Clone)]
struct Group {
    u: [f64; 3],
    stages: Vec<usize>,
    scale: Vec<f64>,
    total: f64,
}

struct Problem<'a> {
    lf: &'a LinearFractional,
    b_total: f64,
    groups: Vec<Group>,
    tol: f64,
}

fn norm(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

fn cross(x: [f64; 3], y: [f64; 3]) -> [f64; 3] {
    [
        x[1] * y[2] - x[2] * y[1],
        x[2] * y[0] - x[0] * y[2],
        x[0] * y[1] - x[1] * y[0],
    ]
}

fn dot(x: [f64; 3], y: [f64; 3]) -> f64 {
    x[0] * y[0] + x[1] * y[1] + x[2] * y[2]
}

impl LinearFractional {
    pub fn objective(&self, e: &[f64]) -> f64 {
        let lin: f64 = self.r.iter().zip(e).map(|(r, e)| r * e).sum();
        self.fp.objective(e) + self.kappa * lin
    }
}

impl<'a> Problem<'a> {
    fn new(lf: &'a LinearFractional) -> Self {
        let fp = &lf.fp;
        let mut groups: Vec<Group> = Vec::new();
        for j in 0..fp.len() {
            let v = [fp.a[j], fp.b[j], lf.r[j]];
            let c = norm(v);
            if c == 0.0 {
                continue;
            }
            let u = [v[0] / c, v[1] / c, v[2] / c];
            match groups.iter_mut().find(|g| norm(cross(g.u, u)) < 1e-12) {
                Some(g) => {
                    g.stages.push(j);
                    g.scale.push(c);
                    g.total += c;
                }
                None => groups.push(Group {
                    u,
                    stages: vec![j],
                    scale: vec![c],
                    total: c,
                }),
            }
        }
        let b_total = fp.b0 + fp.b.iter().sum::<f64>();
        Problem {
            lf,
            b_total,
            groups,
            tol: 1e-13,
        }
    }

    fn bounds(&self, g: usize) -> (f64, f64) {
        let t = self.groups[g].total;
        (self.lf.fp.low * t, self.lf.fp.up * t)
    }

    /// Stage allocation for group masses, filling the earliest stages first.
    fn expand(&self, s: &[f64]) -> Vec<f64> {
        let fp = &self.lf.fp;
        let mut e = vec![0.5; fp.len()];
        for (g, grp) in self.groups.iter().enumerate() {
            let mut rest = (s[g] - fp.low * grp.total).max(0.0);
            for (k, &j) in grp.stages.iter().enumerate() {
                let room = grp.scale[k] * (fp.up - fp.low);
                let add = rest.min(room);
                rest -= add;
                e[j] = fp.low + add / grp.scale[k];
            }
        }
        e
    }

    /// (α, β, linear part) at group masses.
    fn state(&self, s: &[f64]) -> (f64, f64, f64) {
        let mut alpha = self.lf.fp.a0;
        let mut beta = self.b_total;
        let mut lin = 0.0;
        for (g, grp) in self.groups.iter().enumerate() {
            alpha += grp.u[0] * s[g];
            beta -= grp.u[1] * s[g];
            lin += grp.u[2] * s[g];
        }
        (alpha, beta, lin)
    }

    fn deriv(&self, alpha: f64, beta: f64, u: [f64; 3]) -> f64 {
        let fp = &self.lf.fp;
        -fp.c1 * u[0] / (alpha * alpha) + fp.c0 * u[1] / (beta * beta) + self.lf.kappa * u[2]
    }

    /// Minimizes over groups `g` (and `h`) with every other group fixed at `s`.
    fn solve_free(&self, s: &mut [f64], g: usize, h: Option<usize>) {
        let ug = self.groups[g].u;
        let (glo, ghi) = self.bounds(g);
        let mut base = s.to_vec();
        base[g] = 0.0;
        if let Some(h) = h {
            base[h] = 0.0;
        }
        let (al0, be0, _) = self.state(&base);
        let tol = self.tol * (1.0 + ghi);
        let inner = |al: f64, be: f64| -> f64 {
            argmin_convex(|x| self.deriv(al + ug[0] * x, be - ug[1] * x, ug), glo, ghi, tol)
        };
        match h {
            None => s[g] = inner(al0, be0),
            Some(h) => {
                let uh = self.groups[h].u;
                let (hlo, hhi) = self.bounds(h);
                // envelope: the outer derivative is the partial at the inner optimum
                let sh = argmin_convex(
                    |y| {
                        let (al, be) = (al0 + uh[0] * y, be0 - uh[1] * y);
                        let x = inner(al, be);
                        self.deriv(al + ug[0] * x, be - ug[1] * x, uh)
                    },
                    hlo,
                    hhi,
                    self.tol * (1.0 + hhi),
                );
                s[h] = sh;
                s[g] = inner(al0 + uh[0] * sh, be0 - uh[1] * sh);
            }
        }
    }

    fn candidates(&self) -> Vec<Vec<f64>> {
        let m = self.groups.len();
        let mut out = Vec::new();
        if m == 0 {
            return out;
        }
        if m == 1 {
            let mut s = vec![self.bounds(0).0];
            self.solve_free(&mut s, 0, None);
            out.push(s);
            return out;
        }
        for g in 0..m {
            for h in g + 1..m {
                let n = cross(self.groups[g].u, self.groups[h].u);
                for sign in [1.0, -1.0] {
                    let normal = [sign * n[0], sign * n[1], sign * n[2]];
                    let mut s: Vec<f64> = (0..m)
                        .map(|k| {
                            let (lo, hi) = self.bounds(k);
                            if dot(normal, self.groups[k].u) > 0.0 {
                                lo
                            } else {
                                hi
                            }
                        })
                        .collect();
                    self.solve_free(&mut s, g, Some(h));
                    out.push(s);
                }
            }
        }
        out
    }
}

fn polish(lf: &LinearFractional, e: &mut [f64], sweeps: usize) {
    let fp = &lf.fp;
    for _ in 0..sweeps {
        let before = lf.objective(e);
        for j in 0..fp.len() {
            let (alpha, beta) = fp.masses(e);
            let big_a = alpha - fp.a[j] * e[j];
            let big_b = beta - fp.b[j] * (1.0 - e[j]);
            let (aj, bj, rj) = (fp.a[j], fp.b[j], lf.r[j]);
            e[j] = argmin_convex(
                |x| {
                    let al = big_a + aj * x;
                    let be = big_b + bj * (1.0 - x);
                    -fp.c1 * aj / (al * al) + fp.c0 * bj / (be * be) + lf.kappa * rj
                },
                fp.low,
                fp.up,
                1e-13,
            );
        }
        if before - lf.objective(e) <= 1e-15 * before.abs() {
            break;
        }
    }
}

/// Exact minimizer of the fractional-plus-linear program over the box.
pub fn solve_lagrangian(lf: &LinearFractional) -> Result<Vec<f64>> {
    let fp = &lf.fp;
    fp.validate()?;
    if lf.r.len() != fp.len() || lf.r.iter().any(|&v| !(v >= 0.0)) || !lf.kappa.is_finite() {
        return Err(CaraError::InvalidProgram("bad linear term".into()));
    }
    let alpha_min = fp.a0 + fp.low * fp.a.iter().sum::<f64>();
    let beta_min = fp.b0 + (1.0 - fp.up) * fp.b.iter().sum::<f64>();
    if !(alpha_min > 0.0 && beta_min > 0.0) {
        return Err(CaraError::InvalidProgram("an arm has no observation mass".into()));
    }

    let problem = Problem::new(lf);
    let mut cands: Vec<Vec<f64>> = problem.candidates().iter().map(|s| problem.expand(s)).collect();
    cands.push(solve_fractional(fp)?.allocation);
    cands.push(vec![fp.low; fp.len()]);
    cands.push(vec![fp.up; fp.len()]);

    let mut best = cands
        .into_iter()
        .map(|e| (lf.objective(&e), e))
        .min_by(|x, y| x.0.total_cmp(&y.0))
        .map(|(_, e)| e)
        .expect("at least the corner candidates exist");
    let mut polished = best.clone();
    polish(lf, &mut polished, 4);
    let (before, after) = (lf.objective(&best), lf.objective(&polished));
    if after < before - 1e-14 * before.abs() {
        best = polished;
    }
    Ok(best)
}
