use crate::nn::Tensor;

use super::PosEncError;

fn check_dim(d: usize) -> Result<(), PosEncError> {
    if d == 0 || d % 2 != 0 {
        return Err(PosEncError::OddDimension(d));
    }
    Ok(())
}

/// Rotation frequencies `theta_i = base^(-2(i-1)/d)` for `i = 1..=d/2`.
pub fn rope_angles(d_model: usize, base: f64) -> Result<Vec<f64>, PosEncError> {
    check_dim(d_model)?;
    if !(base > 1.0) || !base.is_finite() {
        return Err(PosEncError::InvalidBase(base));
    }
    Ok((0..d_model / 2).map(|i| base.powf(-2.0 * i as f64 / d_model as f64)).collect())
}

/// `[max_len, d_model]` table with `p[pos][2i] = sin(pos theta_i)` and
/// `p[pos][2i+1] = cos(pos theta_i)`.
pub fn sinusoidal_table(max_len: usize, d_model: usize, base: f64) -> Result<Tensor, PosEncError> {
    let theta = rope_angles(d_model, base)?;
    let mut data = Vec::with_capacity(max_len * d_model);
    for pos in 0..max_len {
        for &t in &theta {
            let a = pos as f64 * t;
            data.push(a.sin());
            data.push(a.cos());
        }
    }
    Ok(Tensor::matrix(max_len, d_model, data).expect("table size"))
}

/// Direction of a rotation: `Forward` rotates by `m theta`, `Inverse` by `-m theta`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Sign {
    Forward,
    Inverse,
}

impl Sign {
    pub fn from_flag(flag: i8) -> Sign {
        if flag < 0 {
            Sign::Inverse
        } else {
            Sign::Forward
        }
    }

    pub fn value(self) -> f64 {
        match self {
            Sign::Forward => 1.0,
            Sign::Inverse => -1.0,
        }
    }
}

/// Cached `cos(m theta_i)`, `sin(m theta_i)` for `m < max_len`.
#[derive(Debug, Clone, PartialEq)]
pub struct RotaryTable {
    theta: Vec<f64>,
    max_len: usize,
    cos: Vec<f64>,
    sin: Vec<f64>,
}

impl RotaryTable {
    pub fn new(d_model: usize, base: f64, max_len: usize) -> Result<Self, PosEncError> {
        let theta = rope_angles(d_model, base)?;
        let h = theta.len();
        let mut cos = Vec::with_capacity(max_len * h);
        let mut sin = Vec::with_capacity(max_len * h);
        for m in 0..max_len {
            for &t in &theta {
                let (s, c) = (m as f64 * t).sin_cos();
                cos.push(c);
                sin.push(s);
            }
        }
        Ok(RotaryTable { theta, max_len, cos, sin })
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn d_model(&self) -> usize {
        2 * self.theta.len()
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    /// `(cos, sin)` of every block at position `m`; positions past the
    /// cache are computed on the spot.
    pub fn coeffs(&self, m: usize) -> (Vec<f64>, Vec<f64>) {
        let h = self.theta.len();
        if m < self.max_len {
            (self.cos[m * h..(m + 1) * h].to_vec(), self.sin[m * h..(m + 1) * h].to_vec())
        } else {
            self.theta.iter().map(|&t| (m as f64 * t).sin_cos()).map(|(s, c)| (c, s)).unzip()
        }
    }

    /// The 2x2 rotation block `i` (0-based) at position `m`.
    pub fn block(&self, m: usize, i: usize) -> [[f64; 2]; 2] {
        let (c, s) = if m < self.max_len {
            let h = self.theta.len();
            (self.cos[m * h + i], self.sin[m * h + i])
        } else {
            let (s, c) = (m as f64 * self.theta[i]).sin_cos();
            (c, s)
        };
        [[c, -s], [s, c]]
    }
}

/// Rotates each pair `(x[2i], x[2i+1])` by `sign * m * theta_i`.
pub fn apply_rotary(x: &[f64], m: usize, table: &RotaryTable, sign: Sign) -> Result<Vec<f64>, PosEncError> {
    if x.len() != table.d_model() {
        return Err(PosEncError::LengthMismatch { what: "rotary input", expected: table.d_model(), got: x.len() });
    }
    let (cos, sin) = table.coeffs(m);
    let s = sign.value();
    let mut out = vec![0.0; x.len()];
    for i in 0..cos.len() {
        let (c, sn) = (cos[i], s * sin[i]);
        out[2 * i] = c * x[2 * i] - sn * x[2 * i + 1];
        out[2 * i + 1] = sn * x[2 * i] + c * x[2 * i + 1];
    }
    Ok(out)
}
