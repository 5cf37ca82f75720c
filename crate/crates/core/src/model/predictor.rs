//! Binaural signal predictors: RATF restoration and complex masking.
//!
//! Public functions take the noisy low band as `[2, frames, q]` (left, right)
//! and the per-bin head outputs as `[frames, q]`.

use crate::error::{Error, Result};
use crate::tensor::{Tensor, C64};

/// Denominator `w_x - w_n`, pushed out to radius `eps` (phase kept) when it
/// falls inside it. Returns the used value and whether the floor applied.
#[inline]
pub(crate) fn floored_denominator(wx: C64, wn: C64, eps: f64) -> (C64, bool) {
    let d = wx - wn;
    let m = d.norm();
    if m >= eps {
        (d, false)
    } else if m == 0.0 {
        (C64::new(eps, 0.0), true)
    } else {
        (d * (eps / m), true)
    }
}

/// Restores `(x_L, x_R)` at one bin from the noisy pair and the two RATFs.
#[inline]
pub(crate) fn restore_bin(yl: C64, yr: C64, wx: C64, wn: C64, eps: f64) -> (C64, C64) {
    let (d, _) = floored_denominator(wx, wn, eps);
    let xr = (yl - wn * yr) / d;
    (wx * xr, xr)
}

/// Gradients of [`restore_bin`] with respect to `(wx, wn)` given the output
/// gradients `(g_l, g_r)`.
#[inline]
pub(crate) fn restore_bin_grad(yl: C64, yr: C64, wx: C64, wn: C64, eps: f64, g_l: C64, g_r: C64) -> (C64, C64) {
    let raw = wx - wn;
    let (d, floored) = floored_denominator(wx, wn, eps);
    let xr = (yl - wn * yr) / d;
    let g_xr = g_r + wx.conj() * g_l;
    let mut g_wx = xr.conj() * g_l;
    let mut g_wn = (-yr / d).conj() * g_xr;
    let g_d = (-xr / d).conj() * g_xr;
    let g_raw = if !floored {
        g_d
    } else if raw.norm() == 0.0 {
        C64::new(0.0, 0.0)
    } else {
        // projection onto the circle of radius eps
        let m = raw.norm();
        let u = raw / m;
        let radial = u.re * g_d.re + u.im * g_d.im;
        (g_d - u * radial) * (eps / m)
    };
    g_wx += g_raw;
    g_wn -= g_raw;
    (g_wx, g_wn)
}

fn check(y: &Tensor, a: &Tensor, b: &Tensor) -> Result<(usize, usize)> {
    let s = y.shape();
    if s.len() != 3 || s[0] != 2 {
        return Err(Error::shape(format!(
            "noisy low band must be [2, frames, q], got {s:?}"
        )));
    }
    for t in [a, b] {
        if t.shape() != [s[1], s[2]] {
            return Err(Error::shape(format!(
                "head output {:?} does not match [frames, q] = [{}, {}]",
                t.shape(),
                s[1],
                s[2]
            )));
        }
    }
    if !(y.all_finite() && a.all_finite() && b.all_finite()) {
        return Err(Error::Numeric("non-finite predictor input".into()));
    }
    Ok((s[1], s[2]))
}

fn per_bin(
    y: &Tensor,
    a: &Tensor,
    b: &Tensor,
    f: impl Fn(C64, C64, C64, C64) -> (C64, C64),
) -> Result<(Tensor, Tensor)> {
    let (frames, q) = check(y, a, b)?;
    let n = frames * q;
    let (yl, yr) = y.data().split_at(n);
    let mut xl = Vec::with_capacity(n);
    let mut xr = Vec::with_capacity(n);
    for i in 0..n {
        let (l, r) = f(yl[i], yr[i], a.data()[i], b.data()[i]);
        xl.push(l);
        xr.push(r);
    }
    Ok((Tensor::from_vec(&[frames, q], xl)?, Tensor::from_vec(&[frames, q], xr)?))
}

/// `x_R = (Y_L - w_n Y_R) / (w_x - w_n)`, `x_L = w_x x_R`, with the
/// denominator floored at `eps`.
pub fn restore(y_low: &Tensor, w_x: &Tensor, w_n: &Tensor, eps: f64) -> Result<(Tensor, Tensor)> {
    if !(eps > 0.0) {
        return Err(Error::config("restore eps must be positive"));
    }
    per_bin(y_low, w_x, w_n, |yl, yr, wx, wn| restore_bin(yl, yr, wx, wn, eps))
}

/// `x_i = m_i * Y_i` per bin.
pub fn apply_masks(y_low: &Tensor, m_l: &Tensor, m_r: &Tensor) -> Result<(Tensor, Tensor)> {
    per_bin(y_low, m_l, m_r, |yl, yr, ml, mr| (ml * yl, mr * yr))
}

/// `x_R = m_R * Y_R`, `x_L = w_x * x_R`.
pub fn apply_mask_plus_ratf(y_low: &Tensor, m_r: &Tensor, w_x: &Tensor) -> Result<(Tensor, Tensor)> {
    per_bin(y_low, m_r, w_x, |_, yr, mr, wx| {
        let xr = mr * yr;
        (wx * xr, xr)
    })
}
