//! Floating-point view of a generating family: ẋ = Σ u_i X_i(x).
//!
//! Fields and their Jacobians are compiled once; evaluation shares a power
//! table per point.  The integrators here are the building blocks for the
//! distance solvers.

use crate::expr::{fill_powers, CompiledExpr};
use crate::field::VectorField;

#[derive(Debug, Clone)]
pub struct ControlSystem {
    pub n: usize,
    pub m: usize,
    stride: usize,
    /// f[i*n + k] = X_i^k
    f: Vec<CompiledExpr>,
    /// df[(i*n + k)*n + j] = ∂_j X_i^k
    df: Vec<CompiledExpr>,
}

/// Scratch buffers reused across evaluations.
#[derive(Default, Clone, Debug)]
pub struct Workspace {
    pw: Vec<f64>,
    pub(crate) f: Vec<f64>,
    pub(crate) df: Vec<f64>,
    tmp: Vec<f64>,
}

impl ControlSystem {
    pub fn new(fields: &[VectorField]) -> Self {
        let n = fields[0].dim();
        assert!(n <= 8, "dimension above 8 is not supported");
        let m = fields.len();
        let mut maxp = 1;
        let mut f = Vec::with_capacity(m * n);
        let mut df = Vec::with_capacity(m * n * n);
        for x in fields {
            for k in 0..n {
                let e = x.comp(k);
                maxp = maxp.max(e.max_powers().into_iter().max().unwrap_or(0));
                f.push(CompiledExpr::new(e));
                for j in 0..n {
                    df.push(CompiledExpr::new(&e.diff(j)));
                }
            }
        }
        ControlSystem { n, m, stride: maxp as usize + 1, f, df }
    }

    /// Fill `ws.f` (m×n) and optionally `ws.df` (m×n×n) at x.
    #[inline]
    pub fn eval(&self, x: &[f64], ws: &mut Workspace, jac: bool) {
        fill_powers(x, self.stride, &mut ws.pw);
        ws.f.resize(self.m * self.n, 0.0);
        for (o, c) in ws.f.iter_mut().zip(&self.f) {
            *o = c.eval_table(&ws.pw, self.stride);
        }
        if jac {
            ws.df.resize(self.m * self.n * self.n, 0.0);
            for (o, c) in ws.df.iter_mut().zip(&self.df) {
                *o = if c.is_zero() { 0.0 } else { c.eval_table(&ws.pw, self.stride) };
            }
        }
    }

    /// Field values X_i(x) as rows (m × n).
    pub fn fields_at(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut ws = Workspace::default();
        self.eval(x, &mut ws, false);
        ws.f.chunks(self.n).map(<[f64]>::to_vec).collect()
    }

    /// Velocity Σ u_i X_i(x).
    pub fn velocity(&self, x: &[f64], u: &[f64], ws: &mut Workspace, out: &mut [f64]) {
        self.eval(x, ws, false);
        let n = self.n;
        out.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..self.m {
            if u[i] == 0.0 {
                continue;
            }
            for k in 0..n {
                out[k] += u[i] * ws.f[i * n + k];
            }
        }
    }

    /// Largest operator norm of the m×n field matrix over sample points.
    pub fn max_field_norm(&self, pts: &[Vec<f64>]) -> f64 {
        let mut ws = Workspace::default();
        let mut best: f64 = 0.0;
        for p in pts {
            self.eval(p, &mut ws, false);
            let mat = nalgebra::DMatrix::from_fn(self.n, self.m, |k, i| ws.f[i * self.n + k]);
            best = best.max(mat.singular_values().max());
        }
        best
    }

    /// One interval of constant control u over time h with `sub` RK4
    /// substeps.  Updates x and, if requested, the tangent T = ∂x_end/∂(x,u)
    /// stored row-major as n × (n+m).
    pub fn flow_interval(&self, x: &mut [f64], u: &[f64], h: f64, sub: usize, tan: Option<&mut [f64]>, ws: &mut Workspace) {
        let n = self.n;
        let m = self.m;
        let dt = h / sub as f64;
        match tan {
            None => {
                let mut k = [[0.0f64; 8]; 4];
                let mut xs = [0.0f64; 8];
                for _ in 0..sub {
                    for s in 0..4 {
                        let c = [0.0, 0.5, 0.5, 1.0][s];
                        for j in 0..n {
                            xs[j] = x[j] + if s == 0 { 0.0 } else { c * dt * k[s - 1][j] };
                        }
                        let mut kv = [0.0f64; 8];
                        self.velocity(&xs[..n], u, ws, &mut kv[..n]);
                        k[s] = kv;
                    }
                    for j in 0..n {
                        x[j] += dt / 6.0 * (k[0][j] + 2.0 * k[1][j] + 2.0 * k[2][j] + k[3][j]);
                    }
                }
            }
            Some(t) => {
                let w = n + m;
                // Tangent starts as [I | 0].
                t.iter_mut().for_each(|v| *v = 0.0);
                for j in 0..n {
                    t[j * w + j] = 1.0;
                }
                let mut xs = [0.0f64; 8];
                let mut k = [[0.0f64; 8]; 4];
                ws.tmp.resize(4 * n * w + n * w, 0.0);
                for _ in 0..sub {
                    for s in 0..4 {
                        let c = [0.0, 0.5, 0.5, 1.0][s];
                        for j in 0..n {
                            xs[j] = x[j] + if s == 0 { 0.0 } else { c * dt * k[s - 1][j] };
                        }
                        self.eval(&xs[..n], ws, true);
                        // Stage tangent input: Ts = T + c dt dK_{s-1}
                        let (dks, stage) = ws.tmp.split_at_mut(4 * n * w);
                        for idx in 0..n * w {
                            stage[idx] = t[idx] + if s == 0 { 0.0 } else { c * dt * dks[(s - 1) * n * w + idx] };
                        }
                        // k_s = F u ; dK_s = (Σ u_i DX_i) Ts + [0 | F]
                        for r in 0..n {
                            let mut v = 0.0;
                            for i in 0..m {
                                v += u[i] * ws.f[i * n + r];
                            }
                            k[s][r] = v;
                        }
                        let dk = &mut dks[s * n * w..(s + 1) * n * w];
                        for r in 0..n {
                            for col in 0..w {
                                let mut v = 0.0;
                                for j in 0..n {
                                    let mut a = 0.0;
                                    for i in 0..m {
                                        a += u[i] * ws.df[(i * n + r) * n + j];
                                    }
                                    v += a * stage[j * w + col];
                                }
                                if col >= n {
                                    v += ws.f[(col - n) * n + r];
                                }
                                dk[r * w + col] = v;
                            }
                        }
                    }
                    for j in 0..n {
                        x[j] += dt / 6.0 * (k[0][j] + 2.0 * k[1][j] + 2.0 * k[2][j] + k[3][j]);
                    }
                    let nw = n * w;
                    for idx in 0..nw {
                        t[idx] += dt / 6.0
                            * (ws.tmp[idx] + 2.0 * ws.tmp[nw + idx] + 2.0 * ws.tmp[2 * nw + idx] + ws.tmp[3 * nw + idx]);
                    }
                }
            }
        }
    }

    /// Right-hand side of the normal Hamiltonian system for
    /// H(q,λ) = ½ Σ ⟨λ, X_i(q)⟩².  State layout [q; λ].
    pub fn hamiltonian_rhs(&self, y: &[f64], out: &mut [f64], ws: &mut Workspace) {
        let n = self.n;
        let (q, lam) = y.split_at(n);
        self.eval(q, ws, true);
        out.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..self.m {
            let h: f64 = (0..n).map(|k| lam[k] * ws.f[i * n + k]).sum();
            if h == 0.0 {
                continue;
            }
            for k in 0..n {
                out[k] += h * ws.f[i * n + k];
            }
            // λ̇_j = − Σ_i h_i Σ_k λ_k ∂_j X_i^k
            for j in 0..n {
                let mut s = 0.0;
                for k in 0..n {
                    s += lam[k] * ws.df[(i * n + k) * n + j];
                }
                out[n + j] -= h * s;
            }
        }
    }

    /// Hamiltonian value and the controls h_i = ⟨λ, X_i(q)⟩.
    pub fn hamiltonian(&self, q: &[f64], lam: &[f64], ws: &mut Workspace) -> (f64, Vec<f64>) {
        self.eval(q, ws, false);
        let n = self.n;
        let h: Vec<f64> = (0..self.m).map(|i| (0..n).map(|k| lam[k] * ws.f[i * n + k]).sum()).collect();
        (0.5 * h.iter().map(|v| v * v).sum::<f64>(), h)
    }

    /// Integrate the Hamiltonian system over [0, t_end] with `steps` RK4 steps.
    /// Returns the final [q; λ], or `None` on non-finite blowup.
    pub fn shoot(&self, q0: &[f64], lam0: &[f64], t_end: f64, steps: usize, ws: &mut Workspace, mut visit: impl FnMut(&[f64])) -> Option<Vec<f64>> {
        let n = self.n;
        let mut y: Vec<f64> = q0.iter().chain(lam0).cloned().collect();
        let dt = t_end / steps as f64;
        let mut k1 = vec![0.0; 2 * n];
        let mut k2 = vec![0.0; 2 * n];
        let mut k3 = vec![0.0; 2 * n];
        let mut k4 = vec![0.0; 2 * n];
        let mut ys = vec![0.0; 2 * n];
        visit(&y);
        for _ in 0..steps {
            self.hamiltonian_rhs(&y, &mut k1, ws);
            for j in 0..2 * n {
                ys[j] = y[j] + 0.5 * dt * k1[j];
            }
            self.hamiltonian_rhs(&ys, &mut k2, ws);
            for j in 0..2 * n {
                ys[j] = y[j] + 0.5 * dt * k2[j];
            }
            self.hamiltonian_rhs(&ys, &mut k3, ws);
            for j in 0..2 * n {
                ys[j] = y[j] + dt * k3[j];
            }
            self.hamiltonian_rhs(&ys, &mut k4, ws);
            for j in 0..2 * n {
                y[j] += dt / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
            }
            if !y.iter().all(|v| v.is_finite()) {
                return None;
            }
            visit(&y);
        }
        Some(y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::structure::{grushin, heisenberg};

    #[test]
    fn tangent_matches_finite_differences() {
        let s = grushin();
        let sys = s.system();
        let x0 = [0.3, -0.2];
        let u = [0.7, -1.1];
        let mut ws = Workspace::default();
        let w = sys.n + sys.m;
        let mut t = vec![0.0; sys.n * w];
        let mut x = x0;
        sys.flow_interval(&mut x, &u, 0.1, 2, Some(&mut t), &mut ws);
        let h = 1e-6;
        for col in 0..w {
            let mut xp = x0;
            let mut up = u;
            let mut xm = x0;
            let mut um = u;
            if col < sys.n {
                xp[col] += h;
                xm[col] -= h;
            } else {
                up[col - sys.n] += h;
                um[col - sys.n] -= h;
            }
            sys.flow_interval(&mut xp, &up, 0.1, 2, None, &mut ws);
            sys.flow_interval(&mut xm, &um, 0.1, 2, None, &mut ws);
            for r in 0..sys.n {
                let fd = (xp[r] - xm[r]) / (2.0 * h);
                assert!((fd - t[r * w + col]).abs() < 1e-7, "col {col} row {r}: {fd} vs {}", t[r * w + col]);
            }
        }
    }

    #[test]
    fn heisenberg_straight_geodesic() {
        let s = heisenberg();
        let sys = s.system();
        let mut ws = Workspace::default();
        let y = sys.shoot(&[0.0; 3], &[1.0, 0.0, 0.0], 1.0, 50, &mut ws, |_| {}).unwrap();
        assert!((y[0] - 1.0).abs() < 1e-12 && y[1].abs() < 1e-12 && y[2].abs() < 1e-12);
    }
}
