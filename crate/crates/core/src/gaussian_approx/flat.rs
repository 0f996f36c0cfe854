//! Fixed-size dense helpers and mass-action kernels for the inner loops.

use crate::model::CompartmentalModel;

pub type Vector<const D: usize> = [f64; D];
pub type Matrix<const D: usize> = [[f64; D]; D];

#[inline]
pub fn identity<const D: usize>() -> Matrix<D> {
    let mut out = [[0.0; D]; D];
    for (i, row) in out.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    out
}

#[inline]
pub fn matmul<const D: usize>(a: &Matrix<D>, b: &Matrix<D>) -> Matrix<D> {
    let mut out = [[0.0; D]; D];
    for i in 0..D {
        for j in 0..D {
            let mut s = 0.0;
            for k in 0..D {
                s += a[i][k] * b[k][j];
            }
            out[i][j] = s;
        }
    }
    out
}

/// `a * s * a^T`.
#[inline]
pub fn sandwich<const D: usize>(a: &Matrix<D>, s: &Matrix<D>) -> Matrix<D> {
    let tmp = matmul(a, s);
    let mut out = [[0.0; D]; D];
    for i in 0..D {
        for j in 0..D {
            let mut v = 0.0;
            for k in 0..D {
                v += tmp[i][k] * a[j][k];
            }
            out[i][j] = v;
        }
    }
    out
}

/// Gauss-Jordan inverse with partial pivoting; `None` when singular.
pub fn inverse<const D: usize>(a: &Matrix<D>) -> Option<Matrix<D>> {
    let mut m = *a;
    let mut out = identity::<D>();
    for col in 0..D {
        let mut pivot = col;
        for r in col + 1..D {
            if m[r][col].abs() > m[pivot][col].abs() {
                pivot = r;
            }
        }
        let pv = m[pivot][col];
        if pv == 0.0 || !pv.is_finite() {
            return None;
        }
        m.swap(pivot, col);
        out.swap(pivot, col);
        let inv = 1.0 / pv;
        for k in 0..D {
            m[col][k] *= inv;
            out[col][k] *= inv;
        }
        for r in 0..D {
            if r != col {
                let f = m[r][col];
                if f != 0.0 {
                    for k in 0..D {
                        m[r][k] -= f * m[col][k];
                        out[r][k] -= f * out[col][k];
                    }
                }
            }
        }
    }
    Some(out)
}

pub fn to_row_major<const D: usize>(m: &Matrix<D>) -> Vec<f64> {
    m.iter().flatten().copied().collect()
}

/// One mass-action jump with its rate constant baked in.
#[derive(Clone, Copy)]
struct Channel<const D: usize> {
    rate: f64,
    factors: [usize; 2],
    n_factors: usize,
    delta: Vector<D>,
}

/// Drift, Jacobian and diffusion of a model at fixed rates.
pub struct Kernel<const D: usize> {
    channels: Vec<Channel<D>>,
}

impl<const D: usize> Kernel<D> {
    /// `None` when the model has a different dimension or an intensity
    /// with more than two factors.
    pub fn new(model: &CompartmentalModel, zeta: &[f64]) -> Option<Self> {
        if model.dim() != D {
            return None;
        }
        let channels = model
            .jumps()
            .iter()
            .map(|j| {
                let f = &j.intensity.factors;
                if f.len() > 2 {
                    return None;
                }
                let mut factors = [0; 2];
                factors[..f.len()].copy_from_slice(f);
                let mut delta = [0.0; D];
                for (d, l) in delta.iter_mut().zip(&j.delta) {
                    *d = *l as f64;
                }
                Some(Channel {
                    rate: zeta[j.intensity.rate],
                    factors,
                    n_factors: f.len(),
                    delta,
                })
            })
            .collect::<Option<Vec<_>>>()?;
        Some(Kernel { channels })
    }

    #[inline]
    fn intensity(c: &Channel<D>, x: &Vector<D>) -> f64 {
        let mut beta = c.rate;
        for &f in &c.factors[..c.n_factors] {
            beta *= x[f];
        }
        beta
    }

    #[inline]
    pub fn drift(&self, x: &Vector<D>) -> Vector<D> {
        let mut out = [0.0; D];
        for c in &self.channels {
            let beta = Self::intensity(c, x);
            for i in 0..D {
                out[i] += c.delta[i] * beta;
            }
        }
        out
    }

    #[inline]
    pub fn jacobian(&self, x: &Vector<D>) -> Matrix<D> {
        let mut out = [[0.0; D]; D];
        for c in &self.channels {
            let mut grad = [0.0; D];
            match c.n_factors {
                1 => grad[c.factors[0]] += c.rate,
                2 => {
                    grad[c.factors[0]] += c.rate * x[c.factors[1]];
                    grad[c.factors[1]] += c.rate * x[c.factors[0]];
                }
                _ => {}
            }
            for i in 0..D {
                if c.delta[i] != 0.0 {
                    for j in 0..D {
                        out[i][j] += c.delta[i] * grad[j];
                    }
                }
            }
        }
        out
    }

    #[inline]
    pub fn diffusion(&self, x: &Vector<D>) -> Matrix<D> {
        let mut out = [[0.0; D]; D];
        for c in &self.channels {
            let beta = Self::intensity(c, x);
            for i in 0..D {
                if c.delta[i] != 0.0 {
                    for j in 0..D {
                        out[i][j] += beta * c.delta[i] * c.delta[j];
                    }
                }
            }
        }
        out
    }
}
