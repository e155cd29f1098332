use crate::nn::{Graph, Tensor, Var};

use super::sign::{rotation_coeffs, SignPattern, SprmMode};
use super::tables::RotaryTable;
use super::PosEncError;

/// Query/key (and optionally value) projections of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionSet {
    pub w_q: Tensor,
    pub w_k: Tensor,
    pub w_v: Option<Tensor>,
}

impl ProjectionSet {
    pub fn new(w_q: Tensor, w_k: Tensor) -> Self {
        ProjectionSet { w_q, w_k, w_v: None }
    }

    pub fn identity(d: usize) -> Self {
        ProjectionSet::new(Tensor::identity(d), Tensor::identity(d))
    }
}

/// Positional ingredient of a logit computation, expressed over graph nodes.
#[derive(Debug, Clone)]
pub enum PositionTerm {
    None,
    /// `table[index[i]]` added to input row `i`.
    Additive { table: Var, index: Vec<usize> },
    /// Clipped relative key term `q_i . a[i - j]`.
    Relative { table: Var, clip: usize },
    /// Additive lookup plus relative key term.
    AdditiveRelative { table: Var, index: Vec<usize>, rel: Var, clip: usize },
    /// Per-row rotation of queries and keys (`cos`/`sin` flattened by row).
    Rotation { cos: Vec<f64>, sin: Vec<f64> },
}

fn gather_checked(g: &mut Graph, table: Var, index: &[usize], n: usize) -> Result<Var, PosEncError> {
    if index.len() != n {
        return Err(PosEncError::LengthMismatch { what: "position index", expected: n, got: index.len() });
    }
    let rows = g.shape(table).0;
    if let Some(&bad) = index.iter().find(|&&i| i >= rows) {
        return Err(PosEncError::IndexOutOfRange { index: bad, len: rows });
    }
    Ok(g.gather_rows(table, index.to_vec()))
}

/// Input rows after any additive positional term.
pub fn positioned_input(g: &mut Graph, x: Var, pos: &PositionTerm) -> Result<Var, PosEncError> {
    let (n, d) = g.shape(x);
    match pos {
        PositionTerm::Additive { table, index } | PositionTerm::AdditiveRelative { table, index, .. } => {
            if g.shape(*table).1 != d {
                return Err(PosEncError::Shape(format!("position table width {} vs input {d}", g.shape(*table).1)));
            }
            let p = gather_checked(g, *table, index, n)?;
            Ok(g.add(x, p))
        }
        _ => Ok(x),
    }
}

/// Scaled logits from projected queries and keys of one head.
pub fn head_logits(g: &mut Graph, q: Var, k: Var, pos: &PositionTerm) -> Result<Var, PosEncError> {
    let (n, dk) = g.shape(q);
    let m = g.shape(k).0;
    if g.shape(k).1 != dk {
        return Err(PosEncError::Shape(format!("query {:?} vs key {:?}", g.shape(q), g.shape(k))));
    }
    if m != n && !matches!(pos, PositionTerm::None) {
        return Err(PosEncError::Shape(format!("positional terms need self-attention, got {n} queries and {m} keys")));
    }
    let (q, k) = match pos {
        PositionTerm::Rotation { cos, sin } => {
            if cos.len() != n * dk / 2 || sin.len() != cos.len() {
                return Err(PosEncError::LengthMismatch { what: "rotation coefficients", expected: n * dk / 2, got: cos.len() });
            }
            (g.rotate(q, cos.clone(), sin.clone()), g.rotate(k, cos.clone(), sin.clone()))
        }
        _ => (q, k),
    };
    let mut e = g.matmul_nt(q, k);
    match pos {
        PositionTerm::Relative { table, clip } | PositionTerm::AdditiveRelative { rel: table, clip, .. } => {
            if g.shape(*table) != (2 * clip + 1, dk) {
                return Err(PosEncError::Shape(format!("relative table {:?}, expected [{}, {dk}]", g.shape(*table), 2 * clip + 1)));
            }
            let r = g.rel_logits(q, *table, *clip);
            e = g.add(e, r);
        }
        _ => {}
    }
    Ok(g.scale(e, 1.0 / (dk as f64).sqrt()))
}

/// Full single-head logit computation over graph nodes.
pub fn logits_graph(g: &mut Graph, x: Var, w_q: Var, w_k: Var, pos: &PositionTerm) -> Result<Var, PosEncError> {
    let d = g.shape(x).1;
    if g.shape(w_q).0 != d || g.shape(w_k).0 != d || g.shape(w_q) != g.shape(w_k) {
        return Err(PosEncError::Shape(format!("projections {:?}, {:?} for width {d}", g.shape(w_q), g.shape(w_k))));
    }
    let xin = positioned_input(g, x, pos)?;
    let q = g.matmul(xin, w_q);
    let k = g.matmul(xin, w_k);
    head_logits(g, q, k, pos)
}

fn eval(x: &Tensor, proj: &ProjectionSet, build: impl FnOnce(&mut Graph) -> Result<PositionTerm, PosEncError>) -> Result<Tensor, PosEncError> {
    if x.rows() == 0 {
        return Err(PosEncError::Shape("empty input sequence".into()));
    }
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let wq = g.constant(proj.w_q.clone());
    let wk = g.constant(proj.w_k.clone());
    let pos = build(&mut g)?;
    let e = logits_graph(&mut g, xv, wq, wk, &pos)?;
    Ok(g.value(e).clone())
}

/// Content-only logits `(x W_q)(x W_k)^T / sqrt(d)`.
pub fn attn_content(x: &Tensor, proj: &ProjectionSet) -> Result<Tensor, PosEncError> {
    eval(x, proj, |_| Ok(PositionTerm::None))
}

/// Logits with the fixed sinusoidal table `p` added to the inputs.
pub fn attn_sinusoidal(x: &Tensor, p: &Tensor, proj: &ProjectionSet) -> Result<Tensor, PosEncError> {
    let n = x.rows();
    eval(x, proj, |g| Ok(PositionTerm::Additive { table: g.constant(p.clone()), index: (0..n).collect() }))
}

/// Logits with a learned absolute table.
pub fn attn_dynamic(x: &Tensor, theta: &Tensor, proj: &ProjectionSet) -> Result<Tensor, PosEncError> {
    attn_sinusoidal(x, theta, proj)
}

/// Logits with a clipped relative key term; `rel` is `[2k+1, d]` with row
/// `o + k` holding offset `o = i - j`.
pub fn attn_relative(x: &Tensor, rel: &Tensor, clip: usize, proj: &ProjectionSet) -> Result<Tensor, PosEncError> {
    eval(x, proj, |g| Ok(PositionTerm::Relative { table: g.constant(rel.clone()), clip }))
}

/// Logits with a learned table indexed by switching-point index plus a
/// relative key term.
pub fn attn_spdrpe(
    x: &Tensor,
    theta: &Tensor,
    rel: &Tensor,
    clip: usize,
    spi: &[usize],
    proj: &ProjectionSet,
) -> Result<Tensor, PosEncError> {
    eval(x, proj, |g| {
        Ok(PositionTerm::AdditiveRelative { table: g.constant(theta.clone()), index: spi.to_vec(), rel: g.constant(rel.clone()), clip })
    })
}

pub fn attn_rotary(x: &Tensor, positions: &[usize], table: &RotaryTable, proj: &ProjectionSet) -> Result<Tensor, PosEncError> {
    check_positions(x, positions)?;
    let (cos, sin) = rotation_coeffs(positions, None, table, SprmMode::Transpose)?;
    eval(x, proj, |_| Ok(PositionTerm::Rotation { cos, sin }))
}

pub fn attn_sp_rotary(
    x: &Tensor,
    positions: &[usize],
    sign: &SignPattern,
    table: &RotaryTable,
    mode: SprmMode,
    proj: &ProjectionSet,
) -> Result<Tensor, PosEncError> {
    check_positions(x, positions)?;
    let (cos, sin) = rotation_coeffs(positions, Some(sign), table, mode)?;
    eval(x, proj, |_| Ok(PositionTerm::Rotation { cos, sin }))
}

fn check_positions(x: &Tensor, positions: &[usize]) -> Result<(), PosEncError> {
    if positions.len() != x.rows() {
        return Err(PosEncError::LengthMismatch { what: "positions", expected: x.rows(), got: positions.len() });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::posenc::{build_spm, rope_angles, sinusoidal_table};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
        Tensor::matrix(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn random_proj(rng: &mut ChaCha8Rng, d: usize) -> ProjectionSet {
        ProjectionSet::new(random(rng, d, d), random(rng, d, d))
    }

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    fn vec_mat(v: &[f64], w: &Tensor) -> Vec<f64> {
        (0..w.cols()).map(|c| (0..v.len()).map(|r| v[r] * w.get(r, c)).sum()).collect()
    }


    #[test]
    fn zero_projections_and_single_token() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random(&mut rng, 3, 4);
        let zero = ProjectionSet::new(Tensor::zeros(&[4, 4]), Tensor::zeros(&[4, 4]));
        let p = sinusoidal_table(8, 4, 10000.0).unwrap();
        assert!(attn_sinusoidal(&x, &p, &zero).unwrap().data().iter().all(|&v| v == 0.0));
        let one = random(&mut rng, 1, 4);
        assert_eq!(attn_sinusoidal(&one, &p, &random_proj(&mut rng, 4)).unwrap().shape(), &[1, 1]);
        let bad = random(&mut rng, 3, 5);
        assert!(attn_sinusoidal(&bad, &p, &zero).is_err());
    }

    #[test]
    fn sinusoidal_termwise_oracle() {
        let x = Tensor::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let p = sinusoidal_table(2, 2, 10000.0).unwrap();
        let e = attn_sinusoidal(&x, &p, &ProjectionSet::identity(2)).unwrap();
        // rows: (1, 1) and (sin 1, 1 + cos 1)
        let r0 = [1.0, 1.0];
        let r1 = [1f64.sin(), 1.0 + 1f64.cos()];
        let rows = [r0, r1];
        for i in 0..2 {
            for j in 0..2 {
                let want = dot(&rows[i], &rows[j]) / 2f64.sqrt();
                assert!((e.get(i, j) - want).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn dynamic_reductions() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random(&mut rng, 5, 6);
        let proj = random_proj(&mut rng, 6);
        let content = attn_content(&x, &proj).unwrap();
        assert_eq!(attn_dynamic(&x, &Tensor::zeros(&[16, 6]), &proj).unwrap(), content);
        let p = sinusoidal_table(16, 6, 10000.0).unwrap();
        assert_eq!(attn_dynamic(&x, &p, &proj).unwrap(), attn_sinusoidal(&x, &p, &proj).unwrap());
        assert!(matches!(
            attn_dynamic(&x, &Tensor::zeros(&[4, 6]), &proj),
            Err(PosEncError::IndexOutOfRange { index: 4, len: 4 })
        ));
    }

    #[test]
    fn relative_offsets_and_clipping() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = 4;
        let k = 8;
        let row = random(&mut rng, 1, d);
        let n = 20;
        let x = Tensor::from_rows(&vec![row.row(0).to_vec(); n]).unwrap();
        let proj = random_proj(&mut rng, d);
        let rel = random(&mut rng, 2 * k + 1, d);
        let e = attn_relative(&x, &rel, k, &proj).unwrap();
        assert!((e.get(2, 5) - e.get(10, 13)).abs() < 1e-12);
        assert_eq!(e.get(0, k + 5), e.get(0, k));
        assert_ne!(e.get(0, 3), e.get(0, 4));
        assert_eq!(attn_relative(&x, &Tensor::zeros(&[2 * k + 1, d]), k, &proj).unwrap(), attn_content(&x, &proj).unwrap());
    }

    #[test]
    fn relative_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (n, d, k) = (6, 4, 2);
        let x = random(&mut rng, n, d);
        let proj = random_proj(&mut rng, d);
        let rel = random(&mut rng, 2 * k + 1, d);
        let e = attn_relative(&x, &rel, k, &proj).unwrap();
        for i in 0..n {
            for j in 0..n {
                let q = vec_mat(x.row(i), &proj.w_q);
                let kv = vec_mat(x.row(j), &proj.w_k);
                let off = (i as i64 - j as i64).clamp(-(k as i64), k as i64) + k as i64;
                let key: Vec<f64> = kv.iter().zip(rel.row(off as usize)).map(|(a, b)| a + b).collect();
                assert!((e.get(i, j) - dot(&q, &key) / 2.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn spdrpe_reductions() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (n, d, k) = (5, 4, 3);
        let x = random(&mut rng, n, d);
        let proj = random_proj(&mut rng, d);
        let theta = random(&mut rng, 16, d);
        let rel = random(&mut rng, 2 * k + 1, d);
        let idx: Vec<usize> = (0..n).collect();
        // Monolingual: SPI is the plain index.
        let a = attn_spdrpe(&x, &theta, &rel, k, &idx, &proj).unwrap();
        let mut g = Graph::new();
        let (xv, wq, wk) = (g.constant(x.clone()), g.constant(proj.w_q.clone()), g.constant(proj.w_k.clone()));
        let t = g.constant(theta.clone());
        let xin = positioned_input(&mut g, xv, &PositionTerm::Additive { table: t, index: idx.clone() }).unwrap();
        let r = g.constant(rel.clone());
        let b = logits_graph(&mut g, xin, wq, wk, &PositionTerm::Relative { table: r, clip: k }).unwrap();
        assert_eq!(&a, g.value(b));

        let zeros = attn_spdrpe(&x, &Tensor::zeros(&[16, d]), &Tensor::zeros(&[2 * k + 1, d]), k, &[0, 1, 0, 0, 1], &proj).unwrap();
        assert_eq!(zeros, attn_content(&x, &proj).unwrap());
        assert!(attn_spdrpe(&x, &theta, &rel, k, &[0, 1, 0, 0, 16], &proj).is_err());
    }

    #[test]
    fn spdrpe_uses_spi_lookups() {
        // "ye gaana enjoy kare": SPI (0, 1, 0, 0), so rows 0, 2, 3 see the same table row.
        let d = 2;
        let x = Tensor::zeros(&[4, d]);
        let theta = Tensor::from_rows(&[[1.0, 0.0], [0.0, 1.0], [5.0, 5.0]]).unwrap();
        let rel = Tensor::zeros(&[3, d]);
        let e = attn_spdrpe(&x, &theta, &rel, 1, &[0, 1, 0, 0], &ProjectionSet::identity(d)).unwrap();
        let s = 1.0 / 2f64.sqrt();
        assert_eq!(e.get(0, 2), s);
        assert_eq!(e.get(0, 1), 0.0);
        assert_eq!(e.get(1, 1), s);
        assert_eq!(e.get(2, 3), s);
    }

    #[test]
    fn rotary_identity_at_origin_and_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let d = 6;
        let table = RotaryTable::new(d, 10000.0, 32).unwrap();
        let x = random(&mut rng, 4, d);
        let proj = random_proj(&mut rng, d);
        assert_eq!(attn_rotary(&x, &[0; 4], &table, &proj).unwrap(), attn_content(&x, &proj).unwrap());

        let row = random(&mut rng, 1, d);
        let same = Tensor::from_rows(&vec![row.row(0).to_vec(); 10]).unwrap();
        let pos: Vec<usize> = (0..10).collect();
        let e = attn_rotary(&same, &pos, &table, &proj).unwrap();
        assert!((e.get(2, 3) - e.get(7, 8)).abs() < 1e-9);
        assert!(attn_rotary(&x, &[0, 1], &table, &proj).is_err());
    }

    #[test]
    fn rotary_complex_form_d2() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let table = RotaryTable::new(2, 10000.0, 16).unwrap();
        let theta = rope_angles(2, 10000.0).unwrap()[0];
        let x = random(&mut rng, 5, 2);
        let proj = random_proj(&mut rng, 2);
        let pos: Vec<usize> = (0..5).collect();
        let e = attn_rotary(&x, &pos, &table, &proj).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let q = vec_mat(x.row(i), &proj.w_q);
                let k = vec_mat(x.row(j), &proj.w_k);
                // q * conj(k) * e^{i (i - j) theta}, real part
                let (qr, qi, kr, ki) = (q[0], q[1], k[0], -k[1]);
                let (pr, pi) = (qr * kr - qi * ki, qr * ki + qi * kr);
                let ang = (i as f64 - j as f64) * theta;
                let re = pr * ang.cos() - pi * ang.sin();
                assert!((e.get(i, j) - re / 2f64.sqrt()).abs() < 1e-9, "({i},{j})");
            }
        }
    }

    #[test]
    fn sp_rotary_reduces_and_follows_angle_algebra() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let table = RotaryTable::new(2, 10000.0, 32).unwrap();
        let x = random(&mut rng, 6, 2);
        let proj = random_proj(&mut rng, 2);
        let pos: Vec<usize> = (0..6).collect();
        let plain = attn_rotary(&x, &pos, &table, &proj).unwrap();
        let none = build_spm(&[], 6).unwrap();
        assert_eq!(attn_sp_rotary(&x, &pos, &none, &table, SprmMode::Transpose, &proj).unwrap(), plain);

        let j = 3;
        let sign = build_spm(&[j], 6).unwrap();
        let sp = attn_sp_rotary(&x, &pos, &sign, &table, SprmMode::Transpose, &proj).unwrap();
        for i in 0..6 {
            if i == j {
                continue;
            }
            // Same content rows placed at positions (i + j, 0) under plain rotary.
            let pair = Tensor::from_rows(&[x.row(i), x.row(j)]).unwrap();
            let shifted = attn_rotary(&pair, &[i + j, 0], &table, &proj).unwrap();
            assert!((sp.get(i, j) - shifted.get(0, 1)).abs() < 1e-9, "i={i}");
        }

        let moved = attn_sp_rotary(&x, &pos, &build_spm(&[4], 6).unwrap(), &table, SprmMode::Transpose, &proj).unwrap();
        assert!(sp.max_abs_diff(&moved) > 1e-6);
        assert!(attn_sp_rotary(&x, &pos, &build_spm(&[], 5).unwrap(), &table, SprmMode::Transpose, &proj).is_err());
    }
}
