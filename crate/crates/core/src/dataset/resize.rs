use crate::dataset::pnm::Frame;
use crate::error::{Error, Result};
use crate::network::{INPUT_CHANNELS, INPUT_SIZE};
use crate::tensor::{Shape4, Tensor4};

/// Bilinear resize with corner-aligned sampling: destination pixel `x` maps
/// to source coordinate `x·(W−1)/(D−1)`. Returns planar `3 x out_h x out_w`
/// samples on the 0–255 scale.
pub fn resize_bilinear(frame: &Frame, out_w: usize, out_h: usize) -> Result<Vec<f64>> {
    let (sw, sh) = (frame.width(), frame.height());
    if sw < 2 || sh < 2 {
        return Err(Error::Image(format!("source {sw}x{sh} too small to resize (need >= 2x2)")));
    }
    if out_w < 2 || out_h < 2 {
        return Err(Error::InvalidArgument(format!("target {out_w}x{out_h} must be >= 2x2")));
    }
    let coords = |dst: usize, src: usize| -> Vec<(usize, usize, f64)> {
        (0..dst)
            .map(|i| {
                let pos = (i * (src - 1)) as f64 / (dst - 1) as f64;
                let lo = (pos.floor() as usize).min(src - 1);
                let hi = (lo + 1).min(src - 1);
                (lo, hi, pos - lo as f64)
            })
            .collect()
    };
    let xs = coords(out_w, sw);
    let ys = coords(out_h, sh);
    let rgb = frame.rgb();
    let at = |x: usize, y: usize, c: usize| f64::from(rgb[(y * sw + x) * 3 + c]);
    let mut out = vec![0.0; 3 * out_w * out_h];
    for c in 0..3 {
        for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                let top = at(x0, y0, c) + (at(x1, y0, c) - at(x0, y0, c)) * fx;
                let bottom = at(x0, y1, c) + (at(x1, y1, c) - at(x0, y1, c)) * fx;
                out[(c * out_h + oy) * out_w + ox] = top + (bottom - top) * fy;
            }
        }
    }
    Ok(out)
}

/// Input conditioning applied after resizing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Preprocess {
    /// Subtract each channel's mean over the frame after scaling to [0, 1].
    pub mean_subtract: bool,
}

/// Resizes to the 3x118x118 network input and scales to [0, 1].
pub fn resize_to_input(frame: &Frame) -> Result<Tensor4> {
    resize_to_input_with(frame, Preprocess::default())
}

pub fn resize_to_input_with(frame: &Frame, pre: Preprocess) -> Result<Tensor4> {
    let mut v = resize_bilinear(frame, INPUT_SIZE, INPUT_SIZE)?;
    for x in &mut v {
        *x /= 255.0;
    }
    if pre.mean_subtract {
        let plane = INPUT_SIZE * INPUT_SIZE;
        for chan in v.chunks_exact_mut(plane) {
            let mean = chan.iter().sum::<f64>() / plane as f64;
            chan.iter_mut().for_each(|x| *x -= mean);
        }
    }
    Tensor4::from_vec(Shape4::new(1, INPUT_CHANNELS, INPUT_SIZE, INPUT_SIZE), v)
}
