use serde::{Deserialize, Serialize};

use super::tables::{RotaryTable, Sign};
use super::PosEncError;

/// Per-position rotation-direction flags: `-1` at switching points, `+1`
/// elsewhere.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignPattern {
    flags: Vec<i8>,
}

impl SignPattern {
    pub fn all_forward(len: usize) -> Self {
        SignPattern { flags: vec![1; len] }
    }

    /// `-1` wherever `mask` is set, including position 0 (bigram streams
    /// can start on a switch).
    pub fn from_mask(mask: &[bool]) -> Self {
        SignPattern { flags: mask.iter().map(|&m| if m { -1 } else { 1 }).collect() }
    }

    pub fn flags(&self) -> &[i8] {
        &self.flags
    }

    pub fn len(&self) -> usize {
        self.flags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flags.is_empty()
    }

    pub fn sign(&self, i: usize) -> Sign {
        Sign::from_flag(self.flags[i])
    }
}

pub fn build_spm(sp_indices: &[usize], seq_len: usize) -> Result<SignPattern, PosEncError> {
    let mut flags = vec![1i8; seq_len];
    for &i in sp_indices {
        if i == 0 || i >= seq_len {
            return Err(PosEncError::InvalidSwitchingPoint { index: i, len: seq_len });
        }
        flags[i] = -1;
    }
    Ok(SignPattern { flags })
}

/// How a `-1` flag acts on a rotation block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SprmMode {
    /// Flip the sine entries, giving the transposed (inverse) rotation.
    #[default]
    Transpose,
    /// Negate the whole block (rotation by `m theta + pi`).
    Negate,
}

/// Effective rotation coefficients `(cos, sin)` of the block
/// `[[c, -s], [s, c]]` for one position.
pub fn sprm_coeffs(table: &RotaryTable, m: usize, flag: i8, mode: SprmMode) -> (Vec<f64>, Vec<f64>) {
    let (mut cos, mut sin) = table.coeffs(m);
    if flag < 0 {
        match mode {
            SprmMode::Transpose => sin.iter_mut().for_each(|s| *s = -*s),
            SprmMode::Negate => {
                cos.iter_mut().for_each(|c| *c = -*c);
                sin.iter_mut().for_each(|s| *s = -*s);
            }
        }
    }
    (cos, sin)
}

/// Per-position switching-point rotary blocks: `blocks[pos][i]` is the
/// 2x2 matrix acting on pair `i` at position `positions[pos]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sprm {
    pub blocks: Vec<Vec<[[f64; 2]; 2]>>,
}

pub fn build_sprm(positions: &[usize], sign: &SignPattern, table: &RotaryTable, mode: SprmMode) -> Result<Sprm, PosEncError> {
    if positions.len() != sign.len() {
        return Err(PosEncError::LengthMismatch { what: "sign pattern", expected: positions.len(), got: sign.len() });
    }
    let blocks = positions
        .iter()
        .zip(sign.flags())
        .map(|(&m, &f)| {
            let (c, s) = sprm_coeffs(table, m, f, mode);
            c.iter().zip(&s).map(|(&c, &s)| [[c, -s], [s, c]]).collect()
        })
        .collect();
    Ok(Sprm { blocks })
}

/// Flattened `(cos, sin)` for every position, as consumed by
/// [`crate::nn::Graph::rotate`].
pub fn rotation_coeffs(
    positions: &[usize],
    sign: Option<&SignPattern>,
    table: &RotaryTable,
    mode: SprmMode,
) -> Result<(Vec<f64>, Vec<f64>), PosEncError> {
    if let Some(s) = sign {
        if s.len() != positions.len() {
            return Err(PosEncError::LengthMismatch { what: "sign pattern", expected: positions.len(), got: s.len() });
        }
    }
    let mut cos = Vec::new();
    let mut sin = Vec::new();
    for (k, &m) in positions.iter().enumerate() {
        let flag = sign.map_or(1, |s| s.flags()[k]);
        let (c, s) = sprm_coeffs(table, m, flag, mode);
        cos.extend(c);
        sin.extend(s);
    }
    Ok((cos, sin))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{detect_switching_points_in_tags, LanguageTag::*};
    use rand::{Rng, SeedableRng};

    #[test]
    fn spm_rules() {
        assert_eq!(build_spm(&[], 3).unwrap().flags(), &[1, 1, 1]);
        assert_eq!(build_spm(&[2], 4).unwrap().flags(), &[1, 1, -1, 1]);
        let sp = detect_switching_points_in_tags([L1, L2, L1, L2]);
        assert_eq!(build_spm(&sp, 4).unwrap().flags(), &[1, -1, -1, -1]);
        assert!(build_spm(&[0], 3).is_err());
        assert!(build_spm(&[3], 3).is_err());
    }

    #[test]
    fn all_forward_is_plain_rotary() {
        let table = RotaryTable::new(6, 10000.0, 16).unwrap();
        let pos: Vec<usize> = (0..5).collect();
        let s = build_sprm(&pos, &SignPattern::all_forward(5), &table, SprmMode::Transpose).unwrap();
        for (m, row) in s.blocks.iter().enumerate() {
            for (i, b) in row.iter().enumerate() {
                assert_eq!(*b, table.block(m, i));
            }
        }
    }

    #[test]
    fn flagged_block_is_transpose() {
        let table = RotaryTable::new(4, 10000.0, 16).unwrap();
        let sign = build_spm(&[3], 5).unwrap();
        let pos: Vec<usize> = (0..5).collect();
        let s = build_sprm(&pos, &sign, &table, SprmMode::Transpose).unwrap();
        for i in 0..2 {
            let rm = table.block(3, i);
            let (c, sn) = (rm[0][0], rm[1][0]);
            assert_eq!(s.blocks[3][i], [[c, sn], [-sn, c]]);
        }
        let neg = build_sprm(&pos, &sign, &table, SprmMode::Negate).unwrap();
        let rm = table.block(3, 1);
        assert_eq!(neg.blocks[3][1], [[-rm[0][0], -rm[0][1]], [-rm[1][0], -rm[1][1]]]);
    }

    #[test]
    fn blocks_orthogonal_for_random_flags() {
        let table = RotaryTable::new(8, 10000.0, 32).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let n = 12;
            let sp: Vec<usize> = (1..n).filter(|_| rng.random_bool(0.4)).collect();
            let sign = build_spm(&sp, n).unwrap();
            let pos: Vec<usize> = (0..n).collect();
            for mode in [SprmMode::Transpose, SprmMode::Negate] {
                for row in build_sprm(&pos, &sign, &table, mode).unwrap().blocks {
                    for b in row {
                        let mtm = [
                            [b[0][0] * b[0][0] + b[1][0] * b[1][0], b[0][0] * b[0][1] + b[1][0] * b[1][1]],
                            [b[0][1] * b[0][0] + b[1][1] * b[1][0], b[0][1] * b[0][1] + b[1][1] * b[1][1]],
                        ];
                        assert!((mtm[0][0] - 1.0).abs() < 1e-9 && (mtm[1][1] - 1.0).abs() < 1e-9);
                        assert!(mtm[0][1].abs() < 1e-9 && mtm[1][0].abs() < 1e-9);
                        let det = b[0][0] * b[1][1] - b[0][1] * b[1][0];
                        assert!((det - 1.0).abs() < 1e-9);
                    }
                }
            }
        }
    }
}
