//! Dense QR factorization of the working-set matrix with Givens updates.
//!
//! Maintains `A_W = Q [R; 0]` where the columns of `A_W` are constraint
//! normals. `Q` is `n×n` orthogonal (row-major), `R` is `k×k` upper triangular
//! stored by columns. The trailing `n−k` columns of `Q` span the null space of
//! `A_Wᵀ`.

#[derive(Debug, Clone)]
pub struct UpdatingQr {
    n: usize,
    q: Vec<f64>,
    r: Vec<Vec<f64>>,
}

#[inline]
fn givens(a: f64, b: f64) -> (f64, f64, f64) {
    if b == 0.0 {
        return (1.0, 0.0, a);
    }
    let r = a.hypot(b);
    (a / r, b / r, r)
}

impl UpdatingQr {
    pub fn new(n: usize) -> Self {
        let mut q = vec![0.0; n * n];
        for i in 0..n {
            q[i * n + i] = 1.0;
        }
        Self { n, q, r: Vec::new() }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of columns currently factored.
    pub fn k(&self) -> usize {
        self.r.len()
    }

    pub fn nullity(&self) -> usize {
        self.n - self.r.len()
    }

    #[inline]
    pub fn q(&self, i: usize, j: usize) -> f64 {
        self.q[i * self.n + j]
    }

    #[inline]
    fn rotate_q(&mut self, j1: usize, j2: usize, c: f64, s: f64) {
        let n = self.n;
        for i in 0..n {
            let row = &mut self.q[i * n..(i + 1) * n];
            let a = row[j1];
            let b = row[j2];
            row[j1] = c * a + s * b;
            row[j2] = -s * a + c * b;
        }
    }

    /// `Qᵀa` for a sparse vector.
    pub fn qt_sparse(&self, a: &[(usize, f64)]) -> Vec<f64> {
        let n = self.n;
        let mut w = vec![0.0; n];
        for &(i, v) in a {
            let row = &self.q[i * n..(i + 1) * n];
            for (wj, qj) in w.iter_mut().zip(row) {
                *wj += v * qj;
            }
        }
        w
    }

    /// Norm of the component of `a` outside the current column space.
    pub fn residual_norm(&self, a: &[(usize, f64)]) -> f64 {
        let w = self.qt_sparse(a);
        w[self.k()..].iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Appends the column `a` if it is independent of the current columns:
    /// `‖(Qᵀa)_{k..}‖ > tol·‖a‖`. Returns whether it was added.
    pub fn try_add(&mut self, a: &[(usize, f64)], tol: f64) -> bool {
        let k = self.k();
        if k >= self.n {
            return false;
        }
        let anorm = a.iter().map(|(_, v)| v * v).sum::<f64>().sqrt();
        let mut w = self.qt_sparse(a);
        let tail = w[k..].iter().map(|v| v * v).sum::<f64>().sqrt();
        if anorm == 0.0 || tail <= tol * anorm {
            return false;
        }
        for i in (k + 1..self.n).rev() {
            if w[i] == 0.0 {
                continue;
            }
            let (c, s, r) = givens(w[i - 1], w[i]);
            w[i - 1] = r;
            w[i] = 0.0;
            self.rotate_q(i - 1, i, c, s);
        }
        w.truncate(k + 1);
        self.r.push(w);
        true
    }

    /// Removes column `idx`, restoring triangularity with Givens rotations.
    pub fn remove(&mut self, idx: usize) {
        self.r.remove(idx);
        let k = self.r.len();
        for j in idx..k {
            // column j now has a subdiagonal entry at row j+1
            let a = self.r[j][j];
            let b = self.r[j][j + 1];
            let (c, s, r) = givens(a, b);
            self.r[j][j] = r;
            self.r[j].truncate(j + 1);
            for col in self.r.iter_mut().skip(j + 1) {
                let x = col[j];
                let y = col[j + 1];
                col[j] = c * x + s * y;
                col[j + 1] = -s * x + c * y;
            }
            self.rotate_q(j, j + 1, c, s);
        }
    }

    /// Solves `R x = b` (length `k`).
    pub fn solve_r(&self, b: &[f64]) -> Vec<f64> {
        let k = self.k();
        let mut x = b[..k].to_vec();
        for j in (0..k).rev() {
            x[j] /= self.r[j][j];
            let xj = x[j];
            for i in 0..j {
                x[i] -= self.r[j][i] * xj;
            }
        }
        x
    }

    /// Solves `Rᵀ x = b` (length `k`).
    pub fn solve_rt(&self, b: &[f64]) -> Vec<f64> {
        let k = self.k();
        let mut x = b[..k].to_vec();
        for j in 0..k {
            let col = &self.r[j];
            let s: f64 = (0..j).map(|i| col[i] * x[i]).sum();
            x[j] = (x[j] - s) / col[j];
        }
        x
    }

    /// `Q_Yᵀ v` (first `k` components of `Qᵀv`) for dense `v`.
    pub fn qyt(&self, v: &[f64]) -> Vec<f64> {
        let (n, k) = (self.n, self.k());
        let mut out = vec![0.0; k];
        for i in 0..n {
            let vi = v[i];
            if vi == 0.0 {
                continue;
            }
            let row = &self.q[i * n..i * n + k];
            for (o, qj) in out.iter_mut().zip(row) {
                *o += vi * qj;
            }
        }
        out
    }

    /// `Q_Y y`.
    pub fn qy(&self, y: &[f64]) -> Vec<f64> {
        let (n, k) = (self.n, self.k());
        (0..n)
            .map(|i| self.q[i * n..i * n + k].iter().zip(y).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// `Zᵀv` where `Z` is the trailing null-space block of `Q`.
    pub fn zt(&self, v: &[f64]) -> Vec<f64> {
        let (n, k) = (self.n, self.k());
        let mut out = vec![0.0; n - k];
        for i in 0..n {
            let vi = v[i];
            if vi == 0.0 {
                continue;
            }
            let row = &self.q[i * n + k..(i + 1) * n];
            for (o, qj) in out.iter_mut().zip(row) {
                *o += vi * qj;
            }
        }
        out
    }

    /// `Z w`.
    pub fn z(&self, w: &[f64]) -> Vec<f64> {
        let (n, k) = (self.n, self.k());
        (0..n)
            .map(|i| self.q[i * n + k..(i + 1) * n].iter().zip(w).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Row `i` of `Z`.
    pub fn z_row(&self, i: usize) -> &[f64] {
        let (n, k) = (self.n, self.k());
        &self.q[i * n + k..(i + 1) * n]
    }
}
