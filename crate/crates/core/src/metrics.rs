//! Image quality metrics on `[0, 1]` images.

use serde::{Deserialize, Serialize};

use crate::dataset::ImageBuffer;
use crate::error::{Error, Result};

/// PSNR reported for identical images.
pub const PSNR_CAP: f64 = 100.0;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn check_pair(a: &ImageBuffer, b: &ImageBuffer) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::invalid(format!("image shapes differ: {:?} vs {:?}", a.shape(), b.shape())));
    }
    if a.data.is_empty() {
        return Err(Error::invalid("images are empty"));
    }
    Ok(())
}

pub fn mse(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    check_pair(a, b)?;
    let sum: f64 = a.data.iter().zip(&b.data).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum();
    Ok(sum / a.data.len() as f64)
}

/// `10·log10(1/mse)` in dB, capped at [`PSNR_CAP`].
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP;
    }
    (10.0 * (1.0 / mse).log10()).min(PSNR_CAP)
}

pub fn psnr(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?))
}

fn gaussian_window() -> Vec<f64> {
    let c = (SSIM_WINDOW / 2) as f64;
    let w: Vec<f64> =
        (0..SSIM_WINDOW).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Separable valid-region filtering of a single-channel plane.
fn filter_valid(plane: &[f64], height: usize, width: usize, w: &[f64]) -> (Vec<f64>, usize, usize) {
    let k = w.len();
    let ow = width - k + 1;
    let oh = height - k + 1;
    let mut rows = vec![0.0; height * ow];
    for r in 0..height {
        for c in 0..ow {
            rows[r * ow + c] = (0..k).map(|i| w[i] * plane[r * width + c + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = (0..k).map(|i| w[i] * rows[(r + i) * ow + c]).sum();
        }
    }
    (out, oh, ow)
}

/// Structural similarity with an 11×11 Gaussian window (σ = 1.5) over the
/// valid region, averaged over channels.
pub fn ssim(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    check_pair(a, b)?;
    if a.height < SSIM_WINDOW || a.width < SSIM_WINDOW {
        return Err(Error::invalid(format!(
            "SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {}x{}",
            a.height, a.width
        )));
    }
    let w = gaussian_window();
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let (h, wd, ch) = (a.height, a.width, a.channels);
    let mut total = 0.0;
    for c in 0..ch {
        let x: Vec<f64> = (0..h * wd).map(|i| a.data[i * ch + c] as f64).collect();
        let y: Vec<f64> = (0..h * wd).map(|i| b.data[i * ch + c] as f64).collect();
        let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(u, v)| u * v).collect::<Vec<f64>>();
        let (mx, _, _) = filter_valid(&x, h, wd, &w);
        let (my, _, _) = filter_valid(&y, h, wd, &w);
        let (sxx, _, _) = filter_valid(&prod(&x, &x), h, wd, &w);
        let (syy, _, _) = filter_valid(&prod(&y, &y), h, wd, &w);
        let (sxy, _, _) = filter_valid(&prod(&x, &y), h, wd, &w);
        let n = mx.len();
        let mut acc = 0.0;
        for i in 0..n {
            let vx = sxx[i] - mx[i] * mx[i];
            let vy = syy[i] - my[i] * my[i];
            let cov = sxy[i] - mx[i] * my[i];
            acc += ((2.0 * mx[i] * my[i] + c1) * (2.0 * cov + c2))
                / ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
        }
        total += acc / n as f64;
    }
    Ok(total / ch as f64)
}

/// Per-view scores plus their means.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub views: Vec<ViewScore>,
    pub mean_psnr: f64,
    pub mean_ssim: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewScore {
    pub name: String,
    pub psnr: f64,
    pub ssim: Option<f64>,
}

impl MetricReport {
    /// Scores each rendered image against its reference. SSIM is skipped for
    /// images smaller than the window.
    pub fn evaluate(pairs: &[(String, &ImageBuffer, &ImageBuffer)]) -> Result<Self> {
        let mut views = Vec::with_capacity(pairs.len());
        for (name, rendered, reference) in pairs {
            let p = psnr(rendered, reference)?;
            let s = if rendered.height >= SSIM_WINDOW && rendered.width >= SSIM_WINDOW {
                Some(ssim(rendered, reference)?)
            } else {
                None
            };
            views.push(ViewScore { name: name.clone(), psnr: p, ssim: s });
        }
        Ok(Self::from_views(views))
    }

    pub fn from_views(views: Vec<ViewScore>) -> Self {
        let n = views.len().max(1) as f64;
        let mean_psnr = views.iter().map(|v| v.psnr).sum::<f64>() / n;
        let mean_ssim = if !views.is_empty() && views.iter().all(|v| v.ssim.is_some()) {
            Some(views.iter().filter_map(|v| v.ssim).sum::<f64>() / n)
        } else {
            None
        };
        Self { views, mean_psnr, mean_ssim }
    }

    /// CSV with a header row, one row per view, and a final `mean` row.
    pub fn to_csv(&self) -> String {
        let fmt = |s: Option<f64>| s.map(|s| format!("{s:.6}")).unwrap_or_default();
        let mut out = String::from("view,psnr,ssim\n");
        for v in &self.views {
            out.push_str(&format!("{},{:.6},{}\n", v.name, v.psnr, fmt(v.ssim)));
        }
        out.push_str(&format!("mean,{:.6},{}\n", self.mean_psnr, fmt(self.mean_ssim)));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant(h: usize, w: usize, v: f32) -> ImageBuffer {
        ImageBuffer::new(h, w, 3, vec![v; h * w * 3]).unwrap()
    }

    #[test]
    fn psnr_examples() {
        assert_eq!(psnr(&constant(4, 4, 0.3), &constant(4, 4, 0.3)).unwrap(), PSNR_CAP);
        assert!((psnr(&constant(4, 4, 0.0), &constant(4, 4, 0.1)).unwrap() - 20.0).abs() < 1e-5);
        assert!((psnr_from_mse(1e-4) - 40.0).abs() < 1e-12);
        assert!((psnr(&constant(4, 4, 0.0), &constant(4, 4, 1.0)).unwrap()).abs() < 1e-12);
        assert_eq!(psnr_from_mse(1e-20), PSNR_CAP);
    }

    #[test]
    fn shape_mismatch_rejected() {
        assert!(psnr(&constant(4, 4, 0.0), &constant(4, 5, 0.0)).is_err());
        assert!(ssim(&constant(11, 11, 0.0), &constant(11, 12, 0.0)).is_err());
        assert!(ssim(&constant(10, 10, 0.0), &constant(10, 10, 0.0)).is_err());
    }

    #[test]
    fn ssim_identity_and_constant_offset() {
        let mut data = Vec::new();
        for i in 0..16 * 16 * 3 {
            data.push(((i * 37) % 101) as f32 / 100.0);
        }
        let img = ImageBuffer::new(16, 16, 3, data).unwrap();
        assert!((ssim(&img, &img).unwrap() - 1.0).abs() < 1e-12);
        // constant images: only the luminance term survives
        let s = ssim(&constant(12, 12, 0.2), &constant(12, 12, 0.6)).unwrap();
        let c1 = SSIM_K1 * SSIM_K1;
        let (a, b) = (0.2f32 as f64, 0.6f32 as f64);
        let expect = (2.0 * a * b + c1) / (a * a + b * b + c1);
        assert!((s - expect).abs() < 1e-9, "{s} vs {expect}");
    }

    #[test]
    fn gaussian_window_is_normalized_and_symmetric() {
        let w = gaussian_window();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        for i in 0..SSIM_WINDOW {
            assert_eq!(w[i], w[SSIM_WINDOW - 1 - i]);
        }
    }

    #[test]
    fn report_means_and_csv() {
        let a = constant(4, 4, 0.0);
        let b = constant(4, 4, 0.1);
        let r = MetricReport::evaluate(&[("a".into(), &a, &a), ("b".into(), &a, &b)]).unwrap();
        assert!((r.mean_psnr - 60.0).abs() < 1e-4);
        assert_eq!(r.mean_ssim, None);
        let csv = r.to_csv();
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.starts_with("view,psnr,ssim\na,100.000000,\n"));
        assert!(csv.ends_with("mean,60.000000,\n"));
    }
}
