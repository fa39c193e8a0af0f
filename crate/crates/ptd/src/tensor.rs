//! Dense 3-way tensor storage and mode contractions.
//!
//! Values are stored with mode 1 fastest varying: entry `(l, t, s)` of an
//! `L x T x S` tensor lives at `l + L * (t + T * s)`. Missing entries are
//! tracked by an optional boolean mask (`true` = observed); operations on a
//! masked tensor let missing entries contribute zero to every linear term,
//! which is the same as operating on the zero-filled tensor.

use crate::decompose::ParafacModel;
use crate::error::{Error, Result};

/// Dense 3-way tensor with an optional observation mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    dims: (usize, usize, usize),
    values: Vec<f64>,
    mask: Option<Vec<bool>>,
}

impl Tensor3 {
    pub fn new(dims: (usize, usize, usize), values: Vec<f64>) -> Result<Self> {
        let (l, t, s) = dims;
        if l == 0 || t == 0 || s == 0 {
            return Err(Error::InvalidArgument("tensor dims must be positive".into()));
        }
        if values.len() != l * t * s {
            return Err(Error::DimensionMismatch(format!(
                "expected {} values for dims {}x{}x{}, got {}",
                l * t * s,
                l,
                t,
                s,
                values.len()
            )));
        }
        Ok(Self { dims, values, mask: None })
    }

    pub fn with_mask(dims: (usize, usize, usize), values: Vec<f64>, mask: Vec<bool>) -> Result<Self> {
        let mut t = Self::new(dims, values)?;
        if mask.len() != t.values.len() {
            return Err(Error::DimensionMismatch(format!(
                "mask length {} does not match value count {}",
                mask.len(),
                t.values.len()
            )));
        }
        if !mask.iter().any(|&m| m) {
            return Err(Error::InvalidArgument("mask has no observed entries".into()));
        }
        t.mask = Some(mask);
        Ok(t)
    }

    pub fn zeros(dims: (usize, usize, usize)) -> Result<Self> {
        let (l, t, s) = dims;
        Self::new(dims, vec![0.0; l * t * s])
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mask(&self) -> Option<&[bool]> {
        self.mask.as_deref()
    }

    #[inline]
    pub fn index(&self, l: usize, t: usize, s: usize) -> usize {
        let (ld, td, _) = self.dims;
        l + ld * (t + td * s)
    }

    #[inline]
    pub fn get(&self, l: usize, t: usize, s: usize) -> f64 {
        self.values[self.index(l, t, s)]
    }

    pub fn is_observed(&self, l: usize, t: usize, s: usize) -> bool {
        match &self.mask {
            Some(m) => m[self.index(l, t, s)],
            None => true,
        }
    }

    pub fn n_observed(&self) -> usize {
        match &self.mask {
            Some(m) => m.iter().filter(|&&b| b).count(),
            None => self.values.len(),
        }
    }

    /// Replaces the observation mask. `None` marks every entry observed.
    pub fn set_mask(&mut self, mask: Option<Vec<bool>>) -> Result<()> {
        if let Some(m) = &mask {
            if m.len() != self.values.len() {
                return Err(Error::DimensionMismatch("mask length mismatch".into()));
            }
            if !m.iter().any(|&b| b) {
                return Err(Error::InvalidArgument("mask has no observed entries".into()));
            }
        }
        self.mask = mask;
        Ok(())
    }

    /// Frobenius norm over observed entries.
    pub fn frobenius_norm(&self) -> f64 {
        match &self.mask {
            None => self.values.iter().map(|v| v * v).sum::<f64>().sqrt(),
            Some(m) => self
                .values
                .iter()
                .zip(m)
                .filter(|(_, &obs)| obs)
                .map(|(v, _)| v * v)
                .sum::<f64>()
                .sqrt(),
        }
    }

    /// `Y x_2 v x_3 w`: contracts modes 2 and 3, returning a length-L vector.
    /// Missing entries contribute zero.
    pub fn contract_mode1(&self, v: &[f64], w: &[f64]) -> Vec<f64> {
        let (l_dim, t_dim, s_dim) = self.dims;
        debug_assert_eq!(v.len(), t_dim);
        debug_assert_eq!(w.len(), s_dim);
        let mut out = vec![0.0; l_dim];
        match &self.mask {
            None => {
                for s in 0..s_dim {
                    let ws = w[s];
                    for t in 0..t_dim {
                        let f = v[t] * ws;
                        let base = l_dim * (t + t_dim * s);
                        for l in 0..l_dim {
                            out[l] += self.values[base + l] * f;
                        }
                    }
                }
            }
            Some(m) => {
                for s in 0..s_dim {
                    let ws = w[s];
                    for t in 0..t_dim {
                        let f = v[t] * ws;
                        let base = l_dim * (t + t_dim * s);
                        for l in 0..l_dim {
                            if m[base + l] {
                                out[l] += self.values[base + l] * f;
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// `Y x_1 u x_3 w`: contracts modes 1 and 3, returning a length-T vector.
    pub fn contract_mode2(&self, u: &[f64], w: &[f64]) -> Vec<f64> {
        let (l_dim, t_dim, s_dim) = self.dims;
        debug_assert_eq!(u.len(), l_dim);
        debug_assert_eq!(w.len(), s_dim);
        let mut out = vec![0.0; t_dim];
        match &self.mask {
            None => {
                for s in 0..s_dim {
                    let ws = w[s];
                    for t in 0..t_dim {
                        let base = l_dim * (t + t_dim * s);
                        let mut acc = 0.0;
                        for l in 0..l_dim {
                            acc += self.values[base + l] * u[l];
                        }
                        out[t] += acc * ws;
                    }
                }
            }
            Some(m) => {
                for s in 0..s_dim {
                    let ws = w[s];
                    for t in 0..t_dim {
                        let base = l_dim * (t + t_dim * s);
                        let mut acc = 0.0;
                        for l in 0..l_dim {
                            if m[base + l] {
                                acc += self.values[base + l] * u[l];
                            }
                        }
                        out[t] += acc * ws;
                    }
                }
            }
        }
        out
    }

    /// `Y x_1 u x_2 v`: contracts modes 1 and 2, returning a length-S vector.
    pub fn contract_mode3(&self, u: &[f64], v: &[f64]) -> Vec<f64> {
        let (l_dim, t_dim, s_dim) = self.dims;
        debug_assert_eq!(u.len(), l_dim);
        debug_assert_eq!(v.len(), t_dim);
        let mut out = vec![0.0; s_dim];
        match &self.mask {
            None => {
                for s in 0..s_dim {
                    let mut acc_s = 0.0;
                    for t in 0..t_dim {
                        let base = l_dim * (t + t_dim * s);
                        let mut acc = 0.0;
                        for l in 0..l_dim {
                            acc += self.values[base + l] * u[l];
                        }
                        acc_s += acc * v[t];
                    }
                    out[s] = acc_s;
                }
            }
            Some(m) => {
                for s in 0..s_dim {
                    let mut acc_s = 0.0;
                    for t in 0..t_dim {
                        let base = l_dim * (t + t_dim * s);
                        let mut acc = 0.0;
                        for l in 0..l_dim {
                            if m[base + l] {
                                acc += self.values[base + l] * u[l];
                            }
                        }
                        acc_s += acc * v[t];
                    }
                    out[s] = acc_s;
                }
            }
        }
        out
    }

    /// Full contraction `Y x_1 u x_2 v x_3 w` over observed entries.
    pub fn contract3(&self, u: &[f64], v: &[f64], w: &[f64]) -> f64 {
        let out = self.contract_mode1(v, w);
        out.iter().zip(u).map(|(x, y)| x * y).sum()
    }
}

fn check_contract_args(
    y: &Tensor3,
    a: &[f64],
    mode_a: usize,
    b: &[f64],
    mode_b: usize,
) -> Result<()> {
    if !(1..=3).contains(&mode_a) || !(1..=3).contains(&mode_b) {
        return Err(Error::InvalidArgument(format!(
            "modes must be in 1..=3, got {mode_a} and {mode_b}"
        )));
    }
    if mode_a == mode_b {
        return Err(Error::InvalidArgument(format!("duplicate contraction mode {mode_a}")));
    }
    let dim_of = |m: usize| match m {
        1 => y.dims.0,
        2 => y.dims.1,
        _ => y.dims.2,
    };
    if a.len() != dim_of(mode_a) {
        return Err(Error::DimensionMismatch(format!(
            "vector for mode {mode_a} has length {}, expected {}",
            a.len(),
            dim_of(mode_a)
        )));
    }
    if b.len() != dim_of(mode_b) {
        return Err(Error::DimensionMismatch(format!(
            "vector for mode {mode_b} has length {}, expected {}",
            b.len(),
            dim_of(mode_b)
        )));
    }
    Ok(())
}

fn contract_dispatch(y: &Tensor3, a: &[f64], mode_a: usize, b: &[f64], mode_b: usize) -> Vec<f64> {
    // Reorder so the pair is (earlier mode, later mode).
    let (first, mf, second, ms) = if mode_a < mode_b {
        (a, mode_a, b, mode_b)
    } else {
        (b, mode_b, a, mode_a)
    };
    match (mf, ms) {
        (2, 3) => y.contract_mode1(first, second),
        (1, 3) => y.contract_mode2(first, second),
        (1, 2) => y.contract_mode3(first, second),
        _ => unreachable!(),
    }
}

/// Rank-one outer product `d * u o v o w`.
pub fn outer3(u: &[f64], v: &[f64], w: &[f64], d: f64) -> Result<Tensor3> {
    if u.is_empty() || v.is_empty() || w.is_empty() {
        return Err(Error::InvalidArgument("outer3 factors must be nonempty".into()));
    }
    let (l_dim, t_dim, s_dim) = (u.len(), v.len(), w.len());
    let mut values = vec![0.0; l_dim * t_dim * s_dim];
    for s in 0..s_dim {
        let dws = d * w[s];
        for t in 0..t_dim {
            let f = dws * v[t];
            let base = l_dim * (t + t_dim * s);
            for l in 0..l_dim {
                values[base + l] = f * u[l];
            }
        }
    }
    Tensor3::new((l_dim, t_dim, s_dim), values)
}

/// Contraction of two modes of an unmasked tensor against vectors `a` and `b`.
pub fn mode_contract(y: &Tensor3, a: &[f64], mode_a: usize, b: &[f64], mode_b: usize) -> Result<Vec<f64>> {
    check_contract_args(y, a, mode_a, b, mode_b)?;
    if y.mask.is_some() {
        return Err(Error::InvalidArgument(
            "tensor has a mask; use masked_contract".into(),
        ));
    }
    Ok(contract_dispatch(y, a, mode_a, b, mode_b))
}

/// As [`mode_contract`] but restricted to observed entries of a masked tensor.
pub fn masked_contract(y: &Tensor3, a: &[f64], mode_a: usize, b: &[f64], mode_b: usize) -> Result<Vec<f64>> {
    check_contract_args(y, a, mode_a, b, mode_b)?;
    if y.mask.is_none() {
        return Err(Error::InvalidArgument(
            "tensor has no mask; use mode_contract".into(),
        ));
    }
    Ok(contract_dispatch(y, a, mode_a, b, mode_b))
}

/// Frobenius norm of `A - B`. If either tensor carries a mask the sum runs
/// over its observed entries; when both carry masks they must agree.
pub fn frobenius_error(a: &Tensor3, b: &Tensor3) -> Result<f64> {
    if a.dims != b.dims {
        return Err(Error::DimensionMismatch(format!(
            "tensor dims {:?} vs {:?}",
            a.dims, b.dims
        )));
    }
    let mask = match (&a.mask, &b.mask) {
        (Some(ma), Some(mb)) => {
            if ma != mb {
                return Err(Error::InvalidArgument(
                    "masks disagree between the two tensors".into(),
                ));
            }
            Some(ma)
        }
        (Some(ma), None) => Some(ma),
        (None, Some(mb)) => Some(mb),
        (None, None) => None,
    };
    let sum: f64 = match mask {
        None => a
            .values
            .iter()
            .zip(&b.values)
            .map(|(x, y)| (x - y) * (x - y))
            .sum(),
        Some(m) => a
            .values
            .iter()
            .zip(&b.values)
            .zip(m)
            .filter(|(_, &obs)| obs)
            .map(|((x, y), _)| (x - y) * (x - y))
            .sum(),
    };
    Ok(sum.sqrt())
}

/// `Y - sum_j d_j u_j o v_j o w_j`, with Y's mask propagated.
pub fn model_residual(y: &Tensor3, model: &ParafacModel) -> Result<Tensor3> {
    let (l_dim, t_dim, s_dim) = y.dims;
    for term in model.terms() {
        if term.u.len() != l_dim || term.v.len() != t_dim || term.w.len() != s_dim {
            return Err(Error::DimensionMismatch(format!(
                "model factor lengths ({}, {}, {}) do not match tensor dims {:?}",
                term.u.len(),
                term.v.len(),
                term.w.len(),
                y.dims
            )));
        }
    }
    let mut values = y.values.clone();
    for term in model.terms() {
        for s in 0..s_dim {
            let dws = term.d * term.w[s];
            for t in 0..t_dim {
                let f = dws * term.v[t];
                let base = l_dim * (t + t_dim * s);
                for l in 0..l_dim {
                    values[base + l] -= f * term.u[l];
                }
            }
        }
    }
    Ok(Tensor3 {
        dims: y.dims,
        values,
        mask: y.mask.clone(),
    })
}

/// Tensor text format.
///
/// First line: `L T S dense` or `L T S sparse`. Each following line is
/// `l t s value` with 0-based indices. With `dense`, every triple must be
/// present; with `sparse`, absent triples are missing (mask = false).
pub mod textio {
    use super::Tensor3;
    use crate::error::{Error, Result};
    use std::io::{BufRead, BufWriter, Write};
    use std::path::Path;

    pub fn write_tensor<W: Write>(out: W, tensor: &Tensor3) -> Result<()> {
        let mut out = BufWriter::new(out);
        let (l_dim, t_dim, s_dim) = tensor.dims();
        let kind = if tensor.mask().is_some() { "sparse" } else { "dense" };
        writeln!(out, "{l_dim} {t_dim} {s_dim} {kind}")?;
        for s in 0..s_dim {
            for t in 0..t_dim {
                for l in 0..l_dim {
                    if tensor.is_observed(l, t, s) {
                        writeln!(out, "{l} {t} {s} {}", tensor.get(l, t, s))?;
                    }
                }
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_tensor_file(path: &Path, tensor: &Tensor3) -> Result<()> {
        let file = std::fs::File::create(path)?;
        write_tensor(file, tensor)
    }

    pub fn read_tensor<R: BufRead>(input: R) -> Result<Tensor3> {
        let mut lines = input.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty tensor file".into()))??;
        let tokens: Vec<&str> = header.split_whitespace().collect();
        if tokens.len() < 3 || tokens.len() > 4 {
            return Err(Error::Parse(format!(
                "tensor header must be `L T S [dense|sparse]`, got `{header}`"
            )));
        }
        let parse_dim = |s: &str| -> Result<usize> {
            s.parse::<usize>()
                .map_err(|_| Error::Parse(format!("bad dimension `{s}` in tensor header")))
        };
        let (l_dim, t_dim, s_dim) = (parse_dim(tokens[0])?, parse_dim(tokens[1])?, parse_dim(tokens[2])?);
        let sparse = match tokens.get(3) {
            None => false,
            Some(&"dense") => false,
            Some(&"sparse") => true,
            Some(other) => {
                return Err(Error::Parse(format!(
                    "tensor header token must be `dense` or `sparse`, got `{other}`"
                )))
            }
        };
        if l_dim == 0 || t_dim == 0 || s_dim == 0 {
            return Err(Error::Parse("tensor dims must be positive".into()));
        }
        let total = l_dim * t_dim * s_dim;
        let mut values = vec![0.0; total];
        let mut seen = vec![false; total];
        let mut count = 0usize;
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut it = line.split_whitespace();
            let mut idx3 = [0usize; 3];
            for slot in &mut idx3 {
                *slot = it
                    .next()
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| Error::Parse(format!("line {}: expected `l t s value`", lineno + 2)))?;
            }
            let value: f64 = it
                .next()
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Parse(format!("line {}: expected `l t s value`", lineno + 2)))?;
            if it.next().is_some() {
                return Err(Error::Parse(format!("line {}: trailing tokens", lineno + 2)));
            }
            let (l, t, s) = (idx3[0], idx3[1], idx3[2]);
            if l >= l_dim || t >= t_dim || s >= s_dim {
                return Err(Error::Parse(format!(
                    "line {}: index ({l}, {t}, {s}) out of bounds for {l_dim}x{t_dim}x{s_dim}",
                    lineno + 2
                )));
            }
            let flat = l + l_dim * (t + t_dim * s);
            if seen[flat] {
                return Err(Error::Parse(format!(
                    "line {}: duplicate entry ({l}, {t}, {s})",
                    lineno + 2
                )));
            }
            seen[flat] = true;
            values[flat] = value;
            count += 1;
        }
        if sparse {
            if count == 0 {
                return Err(Error::Parse("sparse tensor has no observed entries".into()));
            }
            if count == total {
                // fully observed sparse file behaves as dense
                return Tensor3::new((l_dim, t_dim, s_dim), values);
            }
            Tensor3::with_mask((l_dim, t_dim, s_dim), values, seen)
        } else {
            if count != total {
                return Err(Error::Parse(format!(
                    "dense tensor is missing {} of {} entries (use the `sparse` header for missing data)",
                    total - count,
                    total
                )));
            }
            Tensor3::new((l_dim, t_dim, s_dim), values)
        }
    }

    pub fn read_tensor_file(path: &Path) -> Result<Tensor3> {
        let file = std::fs::File::open(path)?;
        read_tensor(std::io::BufReader::new(file))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decompose::{ParafacModel, RankOneTerm};

    fn brute_contract(y: &Tensor3, a: &[f64], mode_a: usize, b: &[f64], mode_b: usize) -> Vec<f64> {
        let (ld, td, sd) = y.dims();
        let out_mode = 6 - mode_a - mode_b;
        let out_len = match out_mode {
            1 => ld,
            2 => td,
            _ => sd,
        };
        let mut out = vec![0.0; out_len];
        for s in 0..sd {
            for t in 0..td {
                for l in 0..ld {
                    if !y.is_observed(l, t, s) {
                        continue;
                    }
                    let pick = |mode: usize| match mode {
                        1 => l,
                        2 => t,
                        _ => s,
                    };
                    let val = y.get(l, t, s) * a[pick(mode_a)] * b[pick(mode_b)];
                    out[pick(out_mode)] += val;
                }
            }
        }
        out
    }

    fn assert_close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= tol, "{x} vs {y}");
        }
    }

    #[test]
    fn outer3_basis_vectors() {
        let t = outer3(&[1.0, 0.0], &[1.0, 0.0], &[1.0, 0.0], 2.0).unwrap();
        assert_eq!(t.get(0, 0, 0), 2.0);
        let total: f64 = t.values().iter().map(|v| v.abs()).sum();
        assert_eq!(total, 2.0);
    }

    #[test]
    fn outer3_zero_scale() {
        let t = outer3(&[0.6, 0.8], &[1.0], &[0.5, 0.5], 0.0).unwrap();
        assert!(t.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn outer3_direct_multiplication() {
        let t = outer3(&[1.0, 1.0], &[1.0, -1.0], &[2.0], 1.0).unwrap();
        assert_eq!(t.get(0, 0, 0), 2.0);
        assert_eq!(t.get(1, 0, 0), 2.0);
        assert_eq!(t.get(0, 1, 0), -2.0);
        assert_eq!(t.get(1, 1, 0), -2.0);
    }

    #[test]
    fn contract_rank_one_identity() {
        let u = [0.6, 0.8];
        let v = [1.0 / 2.0_f64.sqrt(), -1.0 / 2.0_f64.sqrt()];
        let w = [0.0, 1.0];
        let y = outer3(&u, &v, &w, 3.5).unwrap();
        let got = mode_contract(&y, &v, 2, &w, 3).unwrap();
        assert_close(&got, &[3.5 * 0.6, 3.5 * 0.8], 1e-12);
    }

    #[test]
    fn contract_zero_tensor() {
        let y = Tensor3::zeros((2, 3, 2)).unwrap();
        let got = mode_contract(&y, &[1.0, 1.0, 1.0], 2, &[1.0, 1.0], 3).unwrap();
        assert_close(&got, &[0.0, 0.0], 0.0);
    }

    #[test]
    fn contract_sum_tensor_hand_value() {
        // y_{l,t,s} = l + t + s (0-based), dims 2x2x2; contracting modes 2,3
        // with ones gives out[l] = sum_{t,s} (l+t+s) = 4l + 4 = [4, 8],
        // frozen from the brute-force triple loop.
        let mut values = vec![0.0; 8];
        let mut y = Tensor3::new((2, 2, 2), values.clone()).unwrap();
        for s in 0..2 {
            for t in 0..2 {
                for l in 0..2 {
                    values[y.index(l, t, s)] = (l + t + s) as f64;
                }
            }
        }
        y = Tensor3::new((2, 2, 2), values).unwrap();
        let got = mode_contract(&y, &[1.0, 1.0], 2, &[1.0, 1.0], 3).unwrap();
        let oracle = brute_contract(&y, &[1.0, 1.0], 2, &[1.0, 1.0], 3);
        assert_close(&got, &oracle, 1e-12);
        assert_close(&got, &[4.0, 8.0], 1e-12);
    }

    #[test]
    fn contract_matches_brute_force_small_dims() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        for ld in 1..=4usize {
            for td in 1..=4usize {
                for sd in 1..=4usize {
                    let values: Vec<f64> = (0..ld * td * sd).map(|_| rng.gen_range(-1.0..1.0)).collect();
                    let y = Tensor3::new((ld, td, sd), values).unwrap();
                    let dim_of = |m: usize| match m {
                        1 => ld,
                        2 => td,
                        _ => sd,
                    };
                    for (ma, mb) in [(1, 2), (1, 3), (2, 3), (2, 1), (3, 1), (3, 2)] {
                        let a: Vec<f64> = (0..dim_of(ma)).map(|_| rng.gen_range(-1.0..1.0)).collect();
                        let b: Vec<f64> = (0..dim_of(mb)).map(|_| rng.gen_range(-1.0..1.0)).collect();
                        let got = mode_contract(&y, &a, ma, &b, mb).unwrap();
                        let want = brute_contract(&y, &a, ma, &b, mb);
                        assert_close(&got, &want, 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn contract_linear_in_inputs() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let dims = (3, 4, 2);
        let n = dims.0 * dims.1 * dims.2;
        for _ in 0..20 {
            let y1 = Tensor3::new(dims, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
            let y2 = Tensor3::new(dims, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
            let a: Vec<f64> = (0..dims.1).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..dims.2).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let alpha: f64 = rng.gen_range(-2.0..2.0);
            let combo_vals: Vec<f64> = y1
                .values()
                .iter()
                .zip(y2.values())
                .map(|(x, y)| x + alpha * y)
                .collect();
            let combo = Tensor3::new(dims, combo_vals).unwrap();
            let lhs = mode_contract(&combo, &a, 2, &b, 3).unwrap();
            let r1 = mode_contract(&y1, &a, 2, &b, 3).unwrap();
            let r2 = mode_contract(&y2, &a, 2, &b, 3).unwrap();
            let rhs: Vec<f64> = r1.iter().zip(&r2).map(|(x, y)| x + alpha * y).collect();
            assert_close(&lhs, &rhs, 1e-10);
            // linear in a as well
            let a2: Vec<f64> = (0..dims.1).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let asum: Vec<f64> = a.iter().zip(&a2).map(|(x, y)| x + y).collect();
            let lhs2 = mode_contract(&y1, &asum, 2, &b, 3).unwrap();
            let rhs2: Vec<f64> = mode_contract(&y1, &a, 2, &b, 3)
                .unwrap()
                .iter()
                .zip(&mode_contract(&y1, &a2, 2, &b, 3).unwrap())
                .map(|(x, y)| x + y)
                .collect();
            assert_close(&lhs2, &rhs2, 1e-10);
        }
    }

    #[test]
    fn masked_contract_full_mask_equals_unmasked() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let dims = (3, 2, 4);
        let n = 24;
        let values: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let plain = Tensor3::new(dims, values.clone()).unwrap();
        let masked = Tensor3::with_mask(dims, values, vec![true; n]).unwrap();
        let a: Vec<f64> = (0..dims.0).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..dims.2).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let got = masked_contract(&masked, &a, 1, &b, 3).unwrap();
        let want = mode_contract(&plain, &a, 1, &b, 3).unwrap();
        assert_eq!(got, want);
    }

    #[test]
    fn masked_contract_single_observation() {
        let mut mask = vec![false; 8];
        mask[0] = true;
        let mut values = vec![0.0; 8];
        values[0] = 3.0;
        let y = Tensor3::with_mask((2, 2, 2), values, mask).unwrap();
        let got = masked_contract(&y, &[1.0, 0.0], 1, &[1.0, 0.0], 3).unwrap();
        assert_close(&got, &[3.0, 0.0], 0.0);
    }

    #[test]
    fn masked_contract_equals_zero_filled() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let dims = (3, 3, 3);
        let n = 27;
        let values: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mask: Vec<bool> = (0..n).map(|i| i == 0 || rng.gen_bool(0.6)).collect();
        let zero_filled: Vec<f64> = values
            .iter()
            .zip(&mask)
            .map(|(v, &m)| if m { *v } else { 0.0 })
            .collect();
        let masked = Tensor3::with_mask(dims, values, mask).unwrap();
        let plain = Tensor3::new(dims, zero_filled).unwrap();
        let a: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for (ma, mb) in [(2, 3), (1, 3), (1, 2)] {
            let got = masked_contract(&masked, &a, ma, &b, mb).unwrap();
            let want = mode_contract(&plain, &a, ma, &b, mb).unwrap();
            let oracle = brute_contract(&masked, &a, ma, &b, mb);
            assert_close(&got, &want, 1e-12);
            assert_close(&got, &oracle, 1e-12);
        }
    }

    #[test]
    fn mode_contract_rejects_bad_modes() {
        let y = Tensor3::zeros((2, 2, 2)).unwrap();
        assert!(mode_contract(&y, &[1.0, 1.0], 2, &[1.0, 1.0], 2).is_err());
        assert!(mode_contract(&y, &[1.0], 2, &[1.0, 1.0], 3).is_err());
        assert!(mode_contract(&y, &[1.0, 1.0], 0, &[1.0, 1.0], 3).is_err());
    }

    #[test]
    fn frobenius_error_identical_and_unit_rank_one() {
        let u = [1.0, 0.0];
        let v = [0.0, 1.0];
        let w = [1.0, 0.0];
        let a = outer3(&u, &v, &w, 3.0).unwrap();
        assert_eq!(frobenius_error(&a, &a).unwrap(), 0.0);
        let zero = Tensor3::zeros((2, 2, 2)).unwrap();
        assert!((frobenius_error(&a, &zero).unwrap() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn frobenius_error_hand_sum() {
        let a = Tensor3::new((2, 2, 2), vec![1., 2., 3., 4., 5., 6., 7., 8.]).unwrap();
        let b = Tensor3::new((2, 2, 2), vec![0., 2., 3., 4., 5., 6., 7., 10.]).unwrap();
        // differences: 1 and -2 -> sqrt(5)
        assert!((frobenius_error(&a, &b).unwrap() - 5.0_f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn frobenius_unit_outer_scaling_random() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let mk = |n: usize, rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
                let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
                crate::vecmath::normalized(&v).unwrap()
            };
            let u = mk(3, &mut rng);
            let v = mk(4, &mut rng);
            let w = mk(2, &mut rng);
            let d: f64 = rng.gen_range(-3.0..3.0);
            let t = outer3(&u, &v, &w, d).unwrap();
            let zero = Tensor3::zeros(t.dims()).unwrap();
            assert!((frobenius_error(&t, &zero).unwrap() - d.abs()).abs() < 1e-12);
        }
    }

    #[test]
    fn model_residual_exact_and_empty() {
        let u = crate::vecmath::normalized(&[1.0, 2.0]).unwrap();
        let v = crate::vecmath::normalized(&[0.5, -1.0, 2.0]).unwrap();
        let w = crate::vecmath::normalized(&[1.0, 1.0]).unwrap();
        let y = outer3(&u, &v, &w, 2.5).unwrap();
        let model = ParafacModel::new(vec![RankOneTerm {
            d: 2.5,
            u: u.clone(),
            v: v.clone(),
            w: w.clone(),
        }]);
        let resid = model_residual(&y, &model).unwrap();
        assert!(resid.values().iter().all(|v| v.abs() < 1e-12));
        let empty = ParafacModel::new(vec![]);
        let resid2 = model_residual(&y, &empty).unwrap();
        assert_eq!(resid2.values(), y.values());
    }

    #[test]
    fn text_format_round_trip() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(200);
        let dims = (2, 3, 2);
        let values: Vec<f64> = (0..12).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let t = Tensor3::new(dims, values).unwrap();
        let mut buf = Vec::new();
        textio::write_tensor(&mut buf, &t).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("2 3 2 dense\n"));
        let back = textio::read_tensor(std::io::BufReader::new(&buf[..])).unwrap();
        assert_eq!(back, t);

        // sparse round trip with a mask
        let mask: Vec<bool> = (0..12).map(|i| i % 3 != 1).collect();
        let vals2: Vec<f64> = (0..12).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let masked = Tensor3::with_mask(dims, vals2, mask.clone()).unwrap();
        let mut buf2 = Vec::new();
        textio::write_tensor(&mut buf2, &masked).unwrap();
        let back2 = textio::read_tensor(std::io::BufReader::new(&buf2[..])).unwrap();
        assert_eq!(back2.mask().unwrap(), &mask[..]);
        for i in 0..12 {
            if mask[i] {
                assert_eq!(back2.values()[i], masked.values()[i]);
            }
        }
    }

    #[test]
    fn text_format_errors() {
        let parse = |s: &str| textio::read_tensor(std::io::BufReader::new(s.as_bytes()));
        // dense with a missing entry
        assert!(parse("1 1 2 dense\n0 0 0 1.5\n").is_err());
        // bare header defaults to dense
        assert!(parse("1 1 2\n0 0 0 1.0\n0 0 1 2.0\n").is_ok());
        // sparse with a missing entry carries a mask
        let t = parse("1 1 2 sparse\n0 0 0 1.5\n").unwrap();
        assert!(t.mask().is_some());
        assert!(parse("1 1 1 banana\n0 0 0 1\n").is_err());
        assert!(parse("1 1 1 dense\n0 0 5 1\n").is_err());
        assert!(parse("").is_err());
        assert!(parse("1 1 1 dense\n0 0 0 1\n0 0 0 2\n").is_err());
    }

    #[test]
    fn model_residual_hand_computation() {
        let y = Tensor3::new((2, 2, 2), vec![1., 2., 3., 4., 5., 6., 7., 8.]).unwrap();
        let model = ParafacModel::new(vec![RankOneTerm {
            d: 2.0,
            u: vec![1.0, 0.0],
            v: vec![1.0, 0.0],
            w: vec![1.0, 0.0],
        }]);
        let resid = model_residual(&y, &model).unwrap();
        // only entry (0,0,0) changes: 1 - 2 = -1
        assert_eq!(resid.get(0, 0, 0), -1.0);
        assert_eq!(resid.get(1, 0, 0), 2.0);
        assert_eq!(resid.get(1, 1, 1), 8.0);
    }
}
