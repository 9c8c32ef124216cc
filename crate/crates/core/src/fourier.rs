//! Real Fourier collocation on an equispaced periodic grid of even size.
//!
//! Modal ordering: index 0 is the constant, `2k-1`/`2k` are `cos kθ`/`sin kθ`
//! for `1 <= k < n/2`, and `n-1` is the Nyquist cosine.

use std::f64::consts::PI;

#[derive(Clone, Debug)]
pub struct Fourier {
    n: usize,
    theta: Vec<f64>,
    synth: Vec<f64>,
    analysis: Vec<f64>,
    wavenumber: Vec<f64>,
    d1: Vec<f64>,
    d2: Vec<f64>,
}

impl Fourier {
    pub fn new(n: usize) -> Self {
        assert!(n >= 4 && n % 2 == 0, "theta resolution must be even and >= 4");
        let h = 2.0 * PI / n as f64;
        let theta: Vec<f64> = (0..n).map(|m| m as f64 * h).collect();
        let mut wavenumber = vec![0.0; n];
        for k in 1..n / 2 {
            wavenumber[2 * k - 1] = k as f64;
            wavenumber[2 * k] = k as f64;
        }
        wavenumber[n - 1] = (n / 2) as f64;

        let mut synth = vec![0.0; n * n];
        let mut analysis = vec![0.0; n * n];
        for m in 0..n {
            for j in 0..n {
                synth[m * n + j] = basis(n, j, theta[m]);
            }
        }
        for j in 0..n {
            let scale = if j == 0 || j == n - 1 { 1.0 } else { 2.0 } / n as f64;
            for m in 0..n {
                analysis[j * n + m] = scale * basis(n, j, theta[m]);
            }
        }

        // nodal derivative matrices built as B * M * A
        let mut m1 = vec![0.0; n * n];
        for k in 1..n / 2 {
            let kk = k as f64;
            m1[(2 * k) * n + (2 * k - 1)] = -kk;
            m1[(2 * k - 1) * n + (2 * k)] = kk;
        }
        let mut d1 = vec![0.0; n * n];
        let mut d2 = vec![0.0; n * n];
        for a in 0..n {
            for b in 0..n {
                let mut s1 = 0.0;
                let mut s2 = 0.0;
                for j in 0..n {
                    let bj = synth[a * n + j];
                    if bj == 0.0 {
                        continue;
                    }
                    let mut t = 0.0;
                    for i in 0..n {
                        t += m1[j * n + i] * analysis[i * n + b];
                    }
                    s1 += bj * t;
                    s2 -= bj * wavenumber[j] * wavenumber[j] * analysis[j * n + b];
                }
                d1[a * n + b] = s1;
                d2[a * n + b] = s2;
            }
        }
        Self { n, theta, synth, analysis, wavenumber, d1, d2 }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn wavenumber(&self, j: usize) -> f64 {
        self.wavenumber[j]
    }

    /// Synthesis matrix entry: value of mode `j` at node `m`.
    pub fn synth(&self, m: usize, j: usize) -> f64 {
        self.synth[m * self.n + j]
    }

    /// Analysis matrix entry: coefficient `j` picks up `analysis(j, m)` of node `m`.
    pub fn analysis(&self, j: usize, m: usize) -> f64 {
        self.analysis[j * self.n + m]
    }

    pub fn analyze(&self, nodal: &[f64], modal: &mut [f64]) {
        let n = self.n;
        for j in 0..n {
            let row = &self.analysis[j * n..(j + 1) * n];
            modal[j] = row.iter().zip(nodal).map(|(a, b)| a * b).sum();
        }
    }

    pub fn synthesize(&self, modal: &[f64], nodal: &mut [f64]) {
        let n = self.n;
        for m in 0..n {
            let row = &self.synth[m * n..(m + 1) * n];
            nodal[m] = row.iter().zip(modal).map(|(a, b)| a * b).sum();
        }
    }

    /// First derivative at the nodes.
    pub fn d1(&self, nodal: &[f64], out: &mut [f64]) {
        matvec(&self.d1, self.n, nodal, out);
    }

    /// Second derivative at the nodes.
    pub fn d2(&self, nodal: &[f64], out: &mut [f64]) {
        matvec(&self.d2, self.n, nodal, out);
    }

    /// Second derivative with modes of magnitude at most `floor` dropped
    /// first, so that round-off in the nodal values is not amplified by the
    /// large factors multiplying this term far out on an end.
    pub fn d2_filtered(&self, nodal: &[f64], out: &mut [f64], floor: f64) {
        let mut modal = vec![0.0; self.n];
        self.analyze(nodal, &mut modal);
        for (j, c) in modal.iter_mut().enumerate() {
            let k = self.wavenumber[j];
            *c = if c.abs() <= floor { 0.0 } else { -k * k * *c };
        }
        self.synthesize(&modal, out);
    }

    pub fn d2_entry(&self, a: usize, b: usize) -> f64 {
        self.d2[a * self.n + b]
    }

    /// Nodal weights of the trigonometric interpolant evaluated at `theta`.
    pub fn interp_weights(&self, theta: f64) -> Vec<f64> {
        let n = self.n;
        let b: Vec<f64> = (0..n).map(|j| basis(n, j, theta)).collect();
        (0..n)
            .map(|m| (0..n).map(|j| b[j] * self.analysis[j * n + m]).sum())
            .collect()
    }

    /// Modal basis values at `theta`.
    pub fn basis_at(&self, theta: f64) -> Vec<f64> {
        (0..self.n).map(|j| basis(self.n, j, theta)).collect()
    }
}

fn basis(n: usize, j: usize, theta: f64) -> f64 {
    if j == 0 {
        1.0
    } else if j == n - 1 {
        ((n / 2) as f64 * theta).cos()
    } else {
        let k = ((j + 1) / 2) as f64;
        if j % 2 == 1 {
            (k * theta).cos()
        } else {
            (k * theta).sin()
        }
    }
}

fn matvec(a: &[f64], n: usize, x: &[f64], y: &mut [f64]) {
    for i in 0..n {
        y[i] = a[i * n..(i + 1) * n].iter().zip(x).map(|(p, q)| p * q).sum();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn analysis_inverts_synthesis() {
        let f = Fourier::new(16);
        let nodal: Vec<f64> = f.theta().iter().map(|t| (3.0 * t).sin() + 0.2 * (8.0 * t).cos() + 1.5).collect();
        let mut modal = vec![0.0; 16];
        let mut back = vec![0.0; 16];
        f.analyze(&nodal, &mut modal);
        f.synthesize(&modal, &mut back);
        for (a, b) in nodal.iter().zip(&back) {
            assert!((a - b).abs() < 1e-13);
        }
        assert!((modal[0] - 1.5).abs() < 1e-14);
        assert!((modal[6] - 1.0).abs() < 1e-14);
        assert!((modal[15] - 0.2).abs() < 1e-14);
    }

    #[test]
    fn derivative_matrices_match_trefethen_closed_form() {
        let n = 16;
        let f = Fourier::new(n);
        let h = 2.0 * PI / n as f64;
        for a in 0..n {
            for b in 0..n {
                let (e1, e2) = if a == b {
                    (0.0, -PI * PI / (3.0 * h * h) - 1.0 / 6.0)
                } else {
                    let d = (a as f64 - b as f64) * h;
                    let sg = if (a + n - b) % 2 == 0 { 1.0 } else { -1.0 };
                    (0.5 * sg / (d / 2.0).tan(), -sg / (2.0 * (d / 2.0).sin().powi(2)))
                };
                assert!((f.d1[a * n + b] - e1).abs() < 1e-11, "d1 {a} {b}");
                assert!((f.d2[a * n + b] - e2).abs() < 1e-10, "d2 {a} {b}");
            }
        }
    }

    #[test]
    fn interpolant_reproduces_band_limited_data() {
        let f = Fourier::new(8);
        let g = |t: f64| 0.3 + (2.0 * t).cos() - 0.7 * (3.0 * t).sin();
        let nodal: Vec<f64> = f.theta().iter().map(|&t| g(t)).collect();
        for &t in &[0.1, 1.3, 4.4] {
            let w = f.interp_weights(t);
            let v: f64 = w.iter().zip(&nodal).map(|(a, b)| a * b).sum();
            assert!((v - g(t)).abs() < 1e-13);
        }
    }
}
