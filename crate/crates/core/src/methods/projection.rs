//! Gradient projections for constraint-based replay.

use crate::error::{Error, Result};
use crate::nn::{dot, FlatGradient};

/// Iteration cap of the dual solver.
pub const QP_MAX_ITERATIONS: usize = 10_000;
/// KKT residual accepted as converged.
pub const QP_TOLERANCE: f64 = 1e-8;

/// Projects `g` onto the half-space `⟨·, g_ref⟩ ≥ 0` when it points away
/// from `g_ref`; otherwise returns it unchanged.
pub fn agem_project(g: &FlatGradient, g_ref: &FlatGradient) -> Result<FlatGradient> {
    let d = g.dot(g_ref)?;
    if d >= 0.0 {
        return Ok(g.clone());
    }
    let mut out = g.clone();
    out.add_scaled(-d / g_ref.norm_sq(), g_ref)?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub v: Vec<f64>,
    pub iterations: usize,
    /// `max_k |min(v_k, ∂_k)|` with `∂` the dual gradient.
    pub kkt_residual: f64,
}

/// The dual problem in Gram form: `min ½ vᵀQv + pᵀv` subject to `v ≥ 0`.
#[derive(Debug, Clone)]
pub struct DualQp {
    q: Vec<Vec<f64>>,
    p: Vec<f64>,
}

impl DualQp {
    /// Builds `Q = GGᵀ` and `p = Gg` from the reference rows of `G`.
    pub fn new(refs: &[FlatGradient], g: &FlatGradient) -> Result<Self> {
        if refs.is_empty() {
            return Err(Error::Precondition("projection needs at least one reference gradient".into()));
        }
        for r in refs {
            if r.len() != g.len() {
                return Err(Error::Shape {
                    what: "reference gradient",
                    expected: g.len(),
                    got: r.len(),
                });
            }
            if r.as_slice().iter().any(|v| !v.is_finite()) {
                return Err(Error::Precondition("reference gradient is not finite".into()));
            }
        }
        let k = refs.len();
        let mut q = vec![vec![0.0; k]; k];
        for i in 0..k {
            for j in i..k {
                let v = dot(refs[i].as_slice(), refs[j].as_slice());
                q[i][j] = v;
                q[j][i] = v;
            }
        }
        let p = refs.iter().map(|r| dot(r.as_slice(), g.as_slice())).collect();
        Ok(Self { q, p })
    }

    pub fn from_parts(q: Vec<Vec<f64>>, p: Vec<f64>) -> Self {
        Self { q, p }
    }

    pub fn dim(&self) -> usize {
        self.p.len()
    }

    pub fn gradient(&self, v: &[f64]) -> Vec<f64> {
        self.q.iter().zip(&self.p).map(|(row, p)| dot(row, v) + p).collect()
    }

    pub fn objective(&self, v: &[f64]) -> f64 {
        let qv: Vec<f64> = self.q.iter().map(|row| dot(row, v)).collect();
        0.5 * dot(v, &qv) + dot(&self.p, v)
    }

    pub fn kkt_residual(&self, v: &[f64]) -> f64 {
        self.gradient(v)
            .iter()
            .zip(v)
            .map(|(d, x)| x.min(*d).abs())
            .fold(0.0, f64::max)
    }

    /// Solves `Q_SS v_S = -p_S` on the support `S`, zero elsewhere.
    fn solve_on_support(&self, support: &[usize]) -> Option<Vec<f64>> {
        let m = support.len();
        let mut a: Vec<Vec<f64>> = support
            .iter()
            .map(|&i| {
                let mut row: Vec<f64> = support.iter().map(|&j| self.q[i][j]).collect();
                row.push(-self.p[i]);
                row
            })
            .collect();
        let scale = support.iter().map(|&i| self.q[i][i]).fold(0.0, f64::max);
        for col in 0..m {
            let pivot = (col..m).max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))?;
            if a[pivot][col].abs() <= 1e-12 * scale {
                return None;
            }
            a.swap(col, pivot);
            for r in 0..m {
                if r != col {
                    let f = a[r][col] / a[col][col];
                    if f != 0.0 {
                        for c in col..=m {
                            a[r][c] -= f * a[col][c];
                        }
                    }
                }
            }
        }
        let mut v = vec![0.0; self.dim()];
        for (row, &i) in support.iter().enumerate() {
            v[i] = a[row][m] / a[row][row];
        }
        Some(v)
    }

    /// Lawson–Hanson active-set iteration on the Gram form: the dual is the
    /// non-negative least-squares problem `min ‖Gᵀv + g‖²`. Returns the
    /// solution and the number of support changes, or `None` when a
    /// sub-problem is numerically singular.
    fn active_set(&self) -> Option<(Vec<f64>, usize)> {
        let k = self.dim();
        let mut v = vec![0.0; k];
        let mut passive = vec![false; k];
        let mut changes = 0;
        let scale = self.q.iter().enumerate().map(|(i, r)| r[i]).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
        let entering_tol = 1e-13 * scale.sqrt() * self.p.iter().fold(0.0, |m: f64, x| m.max(x.abs())).max(f64::MIN_POSITIVE).sqrt();
        while changes < QP_MAX_ITERATIONS {
            let d = self.gradient(&v);
            let entering = (0..k)
                .filter(|&i| !passive[i] && -d[i] > entering_tol)
                .max_by(|&a, &b| (-d[a]).total_cmp(&-d[b]).then(b.cmp(&a)));
            let Some(t) = entering else {
                return Some((v, changes));
            };
            passive[t] = true;
            changes += 1;
            loop {
                let support: Vec<usize> = (0..k).filter(|&i| passive[i]).collect();
                let s = self.solve_on_support(&support)?;
                if support.iter().all(|&i| s[i] > 0.0) {
                    v = s;
                    break;
                }
                // step towards s until the first support coordinate hits zero
                let (blocking, alpha) = support
                    .iter()
                    .filter(|&&i| s[i] <= 0.0)
                    .map(|&i| (i, v[i] / (v[i] - s[i])))
                    .fold((usize::MAX, f64::INFINITY), |b, c| if c.1 < b.1 { c } else { b });
                for &i in &support {
                    v[i] += alpha * (s[i] - v[i]);
                    if i == blocking || v[i] <= 0.0 {
                        v[i] = 0.0;
                        passive[i] = false;
                    }
                }
                changes += 1;
                if changes >= QP_MAX_ITERATIONS {
                    return None;
                }
            }
        }
        None
    }

    /// Exact active-set solve; if that breaks down numerically, projected
    /// gradient descent with step `1/L` (`L` a Gershgorin bound on the
    /// largest eigenvalue of `Q`) from the best point so far, with an exact
    /// solve on the iterate's support every few iterations.
    pub fn solve(&self) -> Result<QpSolution> {
        let k = self.dim();
        if let Some((v, iterations)) = self.active_set() {
            let residual = self.kkt_residual(&v);
            if residual <= QP_TOLERANCE {
                return Ok(QpSolution {
                    v,
                    iterations,
                    kkt_residual: residual,
                });
            }
        }
        let lipschitz = self
            .q
            .iter()
            .map(|row| row.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max);
        let mut v = vec![0.0; k];
        if lipschitz == 0.0 {
            // Q = 0 means every reference is zero, so p = 0 as well
            return Ok(QpSolution {
                v,
                iterations: 0,
                kkt_residual: 0.0,
            });
        }
        let step = 1.0 / lipschitz;
        let mut residual = self.kkt_residual(&v);
        for it in 1..=QP_MAX_ITERATIONS {
            if residual <= QP_TOLERANCE {
                return Ok(QpSolution {
                    v,
                    iterations: it - 1,
                    kkt_residual: residual,
                });
            }
            let d = self.gradient(&v);
            for (x, g) in v.iter_mut().zip(&d) {
                *x = (*x - step * g).max(0.0);
            }
            residual = self.kkt_residual(&v);
            if it % 5 == 0 {
                let support: Vec<usize> = (0..k).filter(|&i| v[i] > 0.0).collect();
                if let Some(exact) = self.solve_on_support(&support) {
                    if exact.iter().all(|&x| x >= 0.0) {
                        let r = self.kkt_residual(&exact);
                        if r < residual {
                            v = exact;
                            residual = r;
                        }
                    }
                }
            }
        }
        if residual <= QP_TOLERANCE {
            return Ok(QpSolution {
                v,
                iterations: QP_MAX_ITERATIONS,
                kkt_residual: residual,
            });
        }
        Err(Error::Solver {
            iterations: QP_MAX_ITERATIONS,
            residual,
        })
    }
}

/// Dual solution `v ≥ 0` of the projection of `g` onto the cone
/// `{z : ⟨z, r⟩ ≥ 0 for every reference r}`.
pub fn solve_nonneg_qp(refs: &[FlatGradient], g: &FlatGradient) -> Result<QpSolution> {
    DualQp::new(refs, g)?.solve()
}

/// Returns `g` when it violates no reference; otherwise
/// `Gᵀ(v* + γ·1) + g` with `v*` the dual solution.
pub fn gem_project(g: &FlatGradient, refs: &[FlatGradient], memory_strength: f64) -> Result<FlatGradient> {
    if refs.is_empty() {
        return Err(Error::Precondition("projection needs at least one reference gradient".into()));
    }
    let mut feasible = true;
    for r in refs {
        if g.dot(r)? < 0.0 {
            feasible = false;
        }
    }
    if feasible {
        return Ok(g.clone());
    }
    let sol = solve_nonneg_qp(refs, g)?;
    let mut z = g.clone();
    for (r, v) in refs.iter().zip(&sol.v) {
        z.add_scaled(v + memory_strength, r)?;
    }
    Ok(z)
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn fg(v: &[f64]) -> FlatGradient {
        FlatGradient::new(v.to_vec())
    }

    fn random(rng: &mut ChaCha8Rng, n: usize) -> FlatGradient {
        FlatGradient::new((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    #[test]
    fn agem_examples() {
        assert_eq!(agem_project(&fg(&[1.0, 0.0]), &fg(&[0.0, 1.0])).unwrap(), fg(&[1.0, 0.0]));
        assert_eq!(agem_project(&fg(&[1.0, -1.0]), &fg(&[0.0, 1.0])).unwrap(), fg(&[1.0, 0.0]));
        assert_eq!(agem_project(&fg(&[1.0, 2.0]), &fg(&[0.0, 0.0])).unwrap(), fg(&[1.0, 2.0]));
    }

    #[test]
    fn agem_random_projection_is_orthogonal_and_minimal() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut done = 0;
        while done < 200 {
            let g = random(&mut rng, 50);
            let r = random(&mut rng, 50);
            if g.dot(&r).unwrap() >= 0.0 {
                continue;
            }
            done += 1;
            let out = agem_project(&g, &r).unwrap();
            assert!(out.dot(&r).unwrap().abs() < 1e-10);
            // KKT: g - out is a non-negative multiple of r
            let mut diff = g.clone();
            diff.add_scaled(-1.0, &out).unwrap();
            let lambda = -diff.dot(&r).unwrap() / r.norm_sq();
            assert!(lambda > 0.0);
            let mut resid = diff.clone();
            resid.add_scaled(lambda, &r).unwrap();
            assert!(resid.norm_sq().sqrt() < 1e-10);
        }
    }

    #[test]
    fn agem_2d_grid_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let g = random(&mut rng, 2);
            let r = random(&mut rng, 2);
            if g.dot(&r).unwrap() >= 0.0 {
                continue;
            }
            let out = agem_project(&g, &r).unwrap();
            // nearest point to g on the boundary line, by scanning it finely
            let dir = [-r.as_slice()[1], r.as_slice()[0]];
            let norm = (dir[0] * dir[0] + dir[1] * dir[1]).sqrt();
            let mut best = (f64::INFINITY, [0.0, 0.0]);
            for i in -200_000..=200_000 {
                let t = f64::from(i) * 1e-5;
                let p = [t * dir[0] / norm, t * dir[1] / norm];
                let d = (p[0] - g.as_slice()[0]).powi(2) + (p[1] - g.as_slice()[1]).powi(2);
                if d < best.0 {
                    best = (d, p);
                }
            }
            assert!((out.as_slice()[0] - best.1[0]).abs() < 1e-4);
            assert!((out.as_slice()[1] - best.1[1]).abs() < 1e-4);
        }
    }

    #[test]
    fn single_constraint_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let g = random(&mut rng, 6);
            let r = random(&mut rng, 6);
            let sol = solve_nonneg_qp(std::slice::from_ref(&r), &g).unwrap();
            let want = (-g.dot(&r).unwrap() / r.norm_sq()).max(0.0);
            assert!((sol.v[0] - want).abs() < 1e-10);
            if g.dot(&r).unwrap() < 0.0 {
                let z = gem_project(&g, std::slice::from_ref(&r), 0.0).unwrap();
                let a = agem_project(&g, &r).unwrap();
                for (x, y) in z.as_slice().iter().zip(a.as_slice()) {
                    assert!((x - y).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn feasible_gradient_is_untouched() {
        let g = fg(&[1.0, 1.0, 0.0]);
        let refs = [fg(&[1.0, 0.0, 0.0]), fg(&[0.0, 2.0, -1.0])];
        assert_eq!(solve_nonneg_qp(&refs, &g).unwrap().v, vec![0.0, 0.0]);
        assert_eq!(gem_project(&g, &refs, 0.5).unwrap(), g);
    }

    #[test]
    fn qp_matches_grid_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..3 {
            let refs: Vec<FlatGradient> = (0..3).map(|_| random(&mut rng, 5)).collect();
            let g = random(&mut rng, 5);
            let qp = DualQp::new(&refs, &g).unwrap();
            let sol = qp.solve().unwrap();
            assert!(sol.kkt_residual <= QP_TOLERANCE);
            // coarse scan of [0,5]^3 then a 1e-3 scan around the best cell
            let mut best = (f64::INFINITY, [0.0; 3]);
            let coarse = 0.05;
            for a in 0..=100 {
                for b in 0..=100 {
                    for c in 0..=100 {
                        let v = [f64::from(a) * coarse, f64::from(b) * coarse, f64::from(c) * coarse];
                        let f = qp.objective(&v);
                        if f < best.0 {
                            best = (f, v);
                        }
                    }
                }
            }
            let centre = best.1;
            let fine = 1e-3;
            for a in -60..=60 {
                for b in -60..=60 {
                    for c in -60..=60 {
                        let v = [
                            (centre[0] + f64::from(a) * fine).clamp(0.0, 5.0),
                            (centre[1] + f64::from(b) * fine).clamp(0.0, 5.0),
                            (centre[2] + f64::from(c) * fine).clamp(0.0, 5.0),
                        ];
                        let f = qp.objective(&v);
                        if f < best.0 {
                            best = (f, v);
                        }
                    }
                }
            }
            let f_sol = qp.objective(&sol.v);
            assert!(f_sol <= best.0 + 1e-12);
            assert!((f_sol - best.0).abs() < 1e-4, "{f_sol} vs {}", best.0);
        }
    }

    #[test]
    fn qp_kkt_and_complementary_slackness() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let k = rng.gen_range(1..10);
            let refs: Vec<FlatGradient> = (0..k).map(|_| random(&mut rng, 20)).collect();
            let g = random(&mut rng, 20);
            let sol = solve_nonneg_qp(&refs, &g).unwrap();
            assert!(sol.kkt_residual <= QP_TOLERANCE);
            assert!(sol.v.iter().all(|&v| v >= 0.0));
            let z = gem_project(&g, &refs, 0.0).unwrap();
            for (r, v) in refs.iter().zip(&sol.v) {
                let c = z.dot(r).unwrap();
                assert!(c >= -1e-6, "{c}");
                assert!((v * c).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn nearly_collinear_references_converge() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let base: Vec<f64> = (0..60).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for trial in 0..20 {
            let refs: Vec<FlatGradient> = (0..9)
                .map(|_| fg(&base.iter().map(|b| b + 1e-3 * rng.gen_range(-1.0..1.0)).collect::<Vec<_>>()))
                .collect();
            let g = fg(&base.iter().map(|b| -b + 0.5 * rng.gen_range(-1.0..1.0)).collect::<Vec<_>>());
            let sol = solve_nonneg_qp(&refs, &g).unwrap();
            assert!(sol.kkt_residual <= QP_TOLERANCE, "trial {trial}: {}", sol.kkt_residual);
            let z = gem_project(&g, &refs, 0.0).unwrap();
            for r in &refs {
                assert!(z.dot(r).unwrap() >= -1e-6);
            }
        }
    }

    #[test]
    fn qp_with_dependent_references() {
        let r = fg(&[1.0, -2.0, 0.5]);
        let mut r2 = r.clone();
        r2.scale(2.0);
        let g = fg(&[-1.0, 1.0, 0.0]);
        let sol = solve_nonneg_qp(&[r.clone(), r2.clone(), r], &g).unwrap();
        assert!(sol.kkt_residual <= QP_TOLERANCE);
        let z = gem_project(&g, &[fg(&[1.0, -2.0, 0.5]), r2], 0.0).unwrap();
        assert!(z.dot(&fg(&[1.0, -2.0, 0.5])).unwrap() >= -QP_TOLERANCE);
    }

    /// Nearest point of the 2D cone `{z : ⟨z, a⟩ ≥ 0, ⟨z, b⟩ ≥ 0}` to `g`,
    /// by scanning a polar grid.
    fn polar_oracle(g: [f64; 2], a: [f64; 2], b: [f64; 2], radius: f64) -> [f64; 2] {
        let feasible = |c: f64, s: f64| c * a[0] + s * a[1] >= 0.0 && c * b[0] + s * b[1] >= 0.0;
        let dist = |p: [f64; 2]| (p[0] - g[0]).powi(2) + (p[1] - g[1]).powi(2);
        let scan = |th0: f64, th1: f64, r0: f64, r1: f64, best: &mut (f64, [f64; 2], f64, f64)| {
            let (n_theta, n_r) = (1000, 1000);
            for i in 0..=n_theta {
                let th = th0 + (th1 - th0) * f64::from(i) / f64::from(n_theta);
                let (c, s) = (th.cos(), th.sin());
                if !feasible(c, s) {
                    continue;
                }
                for j in 0..=n_r {
                    let rad = (r0 + (r1 - r0) * f64::from(j) / f64::from(n_r)).max(0.0);
                    let p = [rad * c, rad * s];
                    let d = dist(p);
                    if d < best.0 {
                        *best = (d, p, th, rad);
                    }
                }
            }
        };
        // 10^6 points over the whole disc, then 10^6 around the best cell
        let mut best = (dist([0.0, 0.0]), [0.0, 0.0], 0.0, 0.0);
        let tau = std::f64::consts::TAU;
        scan(0.0, tau, 0.0, radius, &mut best);
        let (dth, dr) = (2.0 * tau / 1000.0, 2.0 * radius / 1000.0);
        let (th, rad) = (best.2, best.3);
        scan(th - dth, th + dth, rad - dr, rad + dr, &mut best);
        best.1
    }

    #[test]
    fn gem_matches_polar_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut done = 0;
        while done < 10 {
            let a = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let b = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let g = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let z = gem_project(&fg(&g), &[fg(&a), fg(&b)], 0.0).unwrap();
            if z.as_slice() == g {
                continue;
            }
            done += 1;
            let o = polar_oracle(g, a, b, 1.5);
            let dist = ((z.as_slice()[0] - o[0]).powi(2) + (z.as_slice()[1] - o[1]).powi(2)).sqrt();
            assert!(dist < 1e-3, "{z:?} vs {o:?}");
        }
    }

    #[test]
    fn projection_is_minimal_among_cone_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for dim in [2, 3] {
            for _ in 0..20 {
                let refs: Vec<FlatGradient> = (0..dim).map(|_| random(&mut rng, dim)).collect();
                let g = random(&mut rng, dim);
                let z = gem_project(&g, &refs, 0.0).unwrap();
                let mut dz = z.clone();
                dz.add_scaled(-1.0, &g).unwrap();
                let mut checked = 0;
                while checked < 1000 {
                    let y = FlatGradient::new((0..dim).map(|_| rng.gen_range(-3.0..3.0)).collect());
                    if refs.iter().any(|r| y.dot(r).unwrap() < 0.0) {
                        continue;
                    }
                    checked += 1;
                    let mut dy = y.clone();
                    dy.add_scaled(-1.0, &g).unwrap();
                    assert!(dz.norm_sq() <= dy.norm_sq() + 1e-12);
                }
            }
        }
    }

    #[test]
    fn memory_strength_offsets_the_dual() {
        let g = fg(&[1.0, -1.0]);
        let r = fg(&[0.0, 1.0]);
        let z = gem_project(&g, std::slice::from_ref(&r), 0.5).unwrap();
        assert_eq!(z, fg(&[1.0, 0.5]));
    }

    #[test]
    fn errors() {
        assert!(matches!(gem_project(&fg(&[1.0]), &[], 0.0), Err(Error::Precondition(_))));
        assert!(matches!(solve_nonneg_qp(&[fg(&[1.0, 2.0])], &fg(&[1.0])), Err(Error::Shape { .. })));
        assert!(solve_nonneg_qp(&[fg(&[f64::NAN])], &fg(&[1.0])).is_err());
    }
}
