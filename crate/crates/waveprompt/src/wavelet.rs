//! Single-level 2-D Haar transform on token matrices and the wavelet
//! prompt assembly built on it.
//!
//! The analysis filters are L = (1/sqrt 2)[1, 1]^T and
//! H = (1/sqrt 2)[1, -1]^T, applied along both axes with stride 2. For a
//! 2x2 block [[a, b], [c, d]] the four sub-band coefficients are
//!
//! ```text
//! LL = (a+b+c+d)/2    LH = (a-b+c-d)/2
//! HL = (a+b-c-d)/2    HH = (a-b-c+d)/2
//! ```
//!
//! The transform is orthonormal, so the inverse is its transpose and both
//! energy and gradients pass through exactly.

use crate::error::{Error, Result};
use crate::tensor::{Graph, NodeId, Tensor};

/// Frequency sub-band labels of the single-level 2-D decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Band {
    /// Low-low approximation.
    LL,
    /// Column-axis detail.
    LH,
    /// Row-axis detail.
    HL,
    /// Diagonal detail.
    HH,
}

impl Band {
    pub const ORDER: [Band; 4] = [Band::LL, Band::LH, Band::HL, Band::HH];

    pub fn label(self) -> &'static str {
        match self {
            Band::LL => "LL",
            Band::LH => "LH",
            Band::HL => "HL",
            Band::HH => "HH",
        }
    }
}

/// The four sub-bands of a single-level decomposition, each (w/2) x (d/2).
#[derive(Debug, Clone)]
pub struct SubBands {
    pub ll: Tensor,
    pub lh: Tensor,
    pub hl: Tensor,
    pub hh: Tensor,
}

impl SubBands {
    pub fn band(&self, b: Band) -> &Tensor {
        match b {
            Band::LL => &self.ll,
            Band::LH => &self.lh,
            Band::HL => &self.hl,
            Band::HH => &self.hh,
        }
    }

    pub fn total_energy(&self) -> f64 {
        Band::ORDER.iter().map(|&b| self.band(b).sq_norm()).sum()
    }
}

/// A w x d wavelet prompt: reshaped sub-bands stacked in LL, LH, HL, HH
/// order, with a row-to-band legend for interpretability exports.
#[derive(Debug, Clone)]
pub struct WaveletPrompt {
    pub tokens: Tensor,
    pub band_of_row: Vec<Band>,
}

fn even_dims(t: &Tensor, what: &str) -> Result<(usize, usize)> {
    if !t.is_matrix() {
        return Err(Error::Shape(format!("{what} must be 2-D, got {:?}", t.shape())));
    }
    let (w, d) = (t.rows(), t.cols());
    if w % 2 != 0 || d % 2 != 0 {
        return Err(Error::Shape(format!("{what} dimensions must be even, got {w} x {d}")));
    }
    Ok((w, d))
}

/// Single-level 2-D Haar analysis of a w x d matrix (w, d even).
pub fn haar_dwt2(t: &Tensor) -> Result<SubBands> {
    let (w, d) = even_dims(t, "haar_dwt2 input")?;
    let (hw, hd) = (w / 2, d / 2);
    let x = t.data();
    let mut ll = vec![0.0; hw * hd];
    let mut lh = vec![0.0; hw * hd];
    let mut hl = vec![0.0; hw * hd];
    let mut hh = vec![0.0; hw * hd];
    for i in 0..hw {
        for j in 0..hd {
            let a = x[2 * i * d + 2 * j];
            let b = x[2 * i * d + 2 * j + 1];
            let c = x[(2 * i + 1) * d + 2 * j];
            let e = x[(2 * i + 1) * d + 2 * j + 1];
            ll[i * hd + j] = (a + b + c + e) / 2.0;
            lh[i * hd + j] = (a - b + c - e) / 2.0;
            hl[i * hd + j] = (a + b - c - e) / 2.0;
            hh[i * hd + j] = (a - b - c + e) / 2.0;
        }
    }
    let shape = vec![hw, hd];
    Ok(SubBands {
        ll: Tensor::new(shape.clone(), ll)?,
        lh: Tensor::new(shape.clone(), lh)?,
        hl: Tensor::new(shape.clone(), hl)?,
        hh: Tensor::new(shape, hh)?,
    })
}

/// Exact inverse of [`haar_dwt2`].
pub fn haar_idwt2(bands: &SubBands) -> Result<Tensor> {
    let shape = bands.ll.shape().to_vec();
    for b in Band::ORDER {
        if bands.band(b).shape() != shape.as_slice() {
            return Err(Error::Shape(format!(
                "sub-band {} has shape {:?}, expected {:?}",
                b.label(),
                bands.band(b).shape(),
                shape
            )));
        }
    }
    if shape.len() != 2 {
        return Err(Error::Shape(format!("sub-bands must be 2-D, got {shape:?}")));
    }
    let (hw, hd) = (shape[0], shape[1]);
    let (w, d) = (hw * 2, hd * 2);
    let mut out = vec![0.0; w * d];
    for i in 0..hw {
        for j in 0..hd {
            let ll = bands.ll.data()[i * hd + j];
            let lh = bands.lh.data()[i * hd + j];
            let hl = bands.hl.data()[i * hd + j];
            let hh = bands.hh.data()[i * hd + j];
            out[2 * i * d + 2 * j] = (ll + lh + hl + hh) / 2.0;
            out[2 * i * d + 2 * j + 1] = (ll - lh + hl - hh) / 2.0;
            out[(2 * i + 1) * d + 2 * j] = (ll + lh - hl - hh) / 2.0;
            out[(2 * i + 1) * d + 2 * j + 1] = (ll - lh - hl + hh) / 2.0;
        }
    }
    Tensor::new(vec![w, d], out)
}

/// Row-major regrouping of a (w/2) x (d/2) sub-band into w/4 rows of
/// length d. Lossless; [`inverse_reshape_subband`] is its inverse.
pub fn reshape_subband(band: &Tensor, w: usize, d: usize) -> Result<Tensor> {
    if w % 4 != 0 || d % 2 != 0 {
        return Err(Error::Shape(format!("reshape_subband requires w % 4 == 0, d even; got w={w}, d={d}")));
    }
    if band.shape() != [w / 2, d / 2] {
        return Err(Error::Shape(format!(
            "sub-band shape {:?} does not match w={w}, d={d}",
            band.shape()
        )));
    }
    Tensor::new(vec![w / 4, d], band.data().to_vec())
}

/// Inverse of [`reshape_subband`]: recover the (w/2) x (d/2) sub-band.
pub fn inverse_reshape_subband(rows: &Tensor, w: usize, d: usize) -> Result<Tensor> {
    if rows.shape() != [w / 4, d] {
        return Err(Error::Shape(format!(
            "reshaped band {:?} does not match w={w}, d={d}",
            rows.shape()
        )));
    }
    Tensor::new(vec![w / 2, d / 2], rows.data().to_vec())
}

/// Row-to-band legend of a w-row wavelet prompt: w/4 rows per band in
/// LL, LH, HL, HH order.
pub fn band_of_row(w: usize) -> Vec<Band> {
    let per = w / 4;
    Band::ORDER.iter().flat_map(|&b| std::iter::repeat_n(b, per)).collect()
}

/// Assemble the w x d wavelet prompt from initial tokens: decompose,
/// regroup each sub-band to w/4 rows of length d, and stack the bands.
pub fn build_wavelet_prompt(t_init: &Tensor) -> Result<WaveletPrompt> {
    let (w, d) = even_dims(t_init, "wavelet prompt input")?;
    if w % 4 != 0 {
        return Err(Error::Shape(format!("wavelet token count must be divisible by 4, got {w}")));
    }
    let bands = haar_dwt2(t_init)?;
    let parts: Vec<Tensor> = Band::ORDER
        .iter()
        .map(|&b| reshape_subband(bands.band(b), w, d))
        .collect::<Result<_>>()?;
    let mut data = Vec::with_capacity(w * d);
    for p in &parts {
        data.extend_from_slice(p.data());
    }
    Ok(WaveletPrompt { tokens: Tensor::new(vec![w, d], data)?, band_of_row: band_of_row(w) })
}

/// Orthonormal Haar analysis matrix of size n x n: top half averages
/// sample pairs, bottom half differences them.
fn haar_matrix(n: usize) -> Tensor {
    let h = n / 2;
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut m = vec![0.0; n * n];
    for i in 0..h {
        m[i * n + 2 * i] = s;
        m[i * n + 2 * i + 1] = s;
        m[(h + i) * n + 2 * i] = s;
        m[(h + i) * n + 2 * i + 1] = -s;
    }
    Tensor::new(vec![n, n], m).expect("square")
}

/// Tape-recorded wavelet prompt: `concat(reshape(LL..HH))` expressed with
/// differentiable primitives so gradients reach the initial tokens.
///
/// Computes B = Hr (x) Hc^T via two matmuls; the four quadrants of B are
/// exactly the sub-bands of [`haar_dwt2`].
pub fn wavelet_prompt_node(g: &mut Graph, t_init: NodeId) -> Result<NodeId> {
    let shape = g.shape(t_init).to_vec();
    if shape.len() != 2 {
        return Err(Error::Shape(format!("wavelet prompt input must be 2-D, got {shape:?}")));
    }
    let (w, d) = (shape[0], shape[1]);
    if w % 4 != 0 || d % 2 != 0 {
        return Err(Error::Shape(format!(
            "wavelet prompt needs w % 4 == 0 and even d, got {w} x {d}"
        )));
    }
    let hr = haar_matrix(w);
    let hc = haar_matrix(d);
    let hr_id = g.input(&hr);
    let hc_id = g.input(&hc);
    let rows_done = g.matmul(hr_id, t_init)?;
    let full = g.matmul_nt(rows_done, hc_id)?;
    let (hw, hd) = (w / 2, d / 2);
    let mut parts = Vec::with_capacity(4);
    for (r0, c0) in [(0, 0), (0, hd), (hw, 0), (hw, hd)] {
        let rows = g.slice_rows(full, r0, hw)?;
        let quad = g.slice_cols(rows, c0, hd)?;
        parts.push(g.reshape(quad, vec![w / 4, d])?);
    }
    g.concat_rows(&parts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::xavier_uniform_init;

    fn t2(a: f64, b: f64, c: f64, d: f64) -> Tensor {
        Tensor::new(vec![2, 2], vec![a, b, c, d]).unwrap()
    }

    #[test]
    fn constant_block_is_pure_low_frequency() {
        let bands = haar_dwt2(&t2(1.0, 1.0, 1.0, 1.0)).unwrap();
        assert_eq!(bands.ll.data(), &[2.0]);
        assert_eq!(bands.lh.data(), &[0.0]);
        assert_eq!(bands.hl.data(), &[0.0]);
        assert_eq!(bands.hh.data(), &[0.0]);
    }

    #[test]
    fn checkerboard_is_pure_diagonal_detail() {
        let bands = haar_dwt2(&t2(1.0, -1.0, -1.0, 1.0)).unwrap();
        assert_eq!(bands.hh.data(), &[2.0]);
        assert_eq!(bands.ll.data(), &[0.0]);
        assert_eq!(bands.lh.data(), &[0.0]);
        assert_eq!(bands.hl.data(), &[0.0]);
    }

    #[test]
    fn odd_dimension_rejected() {
        let t = Tensor::zeros(vec![3, 4]);
        assert!(matches!(haar_dwt2(&t), Err(Error::Shape(_))));
    }

    #[test]
    fn matches_direct_convolution_oracle() {
        // independent oracle: correlate with the separable filter taps and
        // downsample by 2 along both axes
        let t = xavier_uniform_init(4, 8, 99);
        let bands = haar_dwt2(&t).unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let taps = |band: Band| -> ([f64; 2], [f64; 2]) {
            match band {
                Band::LL => ([s, s], [s, s]),
                Band::LH => ([s, s], [s, -s]),
                Band::HL => ([s, -s], [s, s]),
                Band::HH => ([s, -s], [s, -s]),
            }
        };
        for band in Band::ORDER {
            let (row_taps, col_taps) = taps(band);
            for i in 0..2 {
                for j in 0..4 {
                    let mut acc = 0.0;
                    for (ri, rt) in row_taps.iter().enumerate() {
                        for (cj, ct) in col_taps.iter().enumerate() {
                            acc += rt * ct * t.data()[(2 * i + ri) * 8 + 2 * j + cj];
                        }
                    }
                    let got = bands.band(band).data()[i * 4 + j];
                    assert!((got - acc).abs() <= 1e-12, "{} [{i},{j}]: {got} vs {acc}", band.label());
                }
            }
        }
    }

    #[test]
    fn perfect_reconstruction() {
        let t = xavier_uniform_init(8, 16, 7);
        let back = haar_idwt2(&haar_dwt2(&t).unwrap()).unwrap();
        let max = t
            .data()
            .iter()
            .zip(back.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(max <= 1e-10, "max abs diff {max}");
    }

    #[test]
    fn idwt_of_isolated_bands() {
        let one = Tensor::new(vec![1, 1], vec![2.0]).unwrap();
        let zero = Tensor::zeros(vec![1, 1]);
        let ll_only = SubBands { ll: one.clone(), lh: zero.clone(), hl: zero.clone(), hh: zero.clone() };
        assert_eq!(haar_idwt2(&ll_only).unwrap().data(), &[1.0, 1.0, 1.0, 1.0]);
        let hh_only = SubBands { ll: zero.clone(), lh: zero.clone(), hl: zero, hh: one };
        assert_eq!(haar_idwt2(&hh_only).unwrap().data(), &[1.0, -1.0, -1.0, 1.0]);
    }

    #[test]
    fn reshape_flattens_row_major() {
        let band = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let r = reshape_subband(&band, 4, 4).unwrap();
        assert_eq!(r.shape(), &[1, 4]);
        assert_eq!(r.data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn reshape_preserves_row_major_order_and_inverts() {
        // w=8, d=4: 4x2 band -> 2x4, enumerating the index bijection
        let band = Tensor::new(vec![4, 2], (0..8).map(f64::from).collect()).unwrap();
        let r = reshape_subband(&band, 8, 4).unwrap();
        assert_eq!(r.shape(), &[2, 4]);
        for (flat, v) in r.data().iter().enumerate() {
            assert_eq!(*v, band.data()[flat]);
        }
        let back = inverse_reshape_subband(&r, 8, 4).unwrap();
        assert_eq!(back.shape(), band.shape());
        assert_eq!(back.data(), band.data());
    }

    #[test]
    fn wavelet_prompt_single_row_per_band_at_w4() {
        for d in [8usize, 1024] {
            let t = xavier_uniform_init(4, d, 5);
            let wp = build_wavelet_prompt(&t).unwrap();
            assert_eq!(wp.tokens.shape(), &[4, d]);
            assert_eq!(wp.band_of_row, vec![Band::LL, Band::LH, Band::HL, Band::HH]);
        }
    }

    #[test]
    fn constant_init_zeroes_detail_rows() {
        let t = Tensor::new(vec![4, 8], vec![0.7; 32]).unwrap();
        let wp = build_wavelet_prompt(&t).unwrap();
        assert!(wp.tokens.row(0).iter().any(|v| v.abs() > 0.5));
        for r in 1..4 {
            assert!(wp.tokens.row(r).iter().all(|v| v.abs() < 1e-12), "row {r} not zero");
        }
    }

    #[test]
    fn prompt_preserves_energy() {
        let t = xavier_uniform_init(8, 16, 42);
        let wp = build_wavelet_prompt(&t).unwrap();
        let rel = (wp.tokens.sq_norm() - t.sq_norm()).abs() / t.sq_norm();
        assert!(rel <= 1e-10, "relative energy drift {rel}");
    }

    #[test]
    fn taped_prompt_matches_pure_composition() {
        let t = xavier_uniform_init(8, 6, 11);
        let pure = build_wavelet_prompt(&t).unwrap();
        let mut g = Graph::new();
        let x = g.input(&t);
        let node = wavelet_prompt_node(&mut g, x).unwrap();
        assert_eq!(g.shape(node), &[8, 6]);
        for (a, b) in g.value(node).iter().zip(pure.tokens.data()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }
}
