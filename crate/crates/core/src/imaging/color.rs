use super::{ImagePlane, ImagingError, Result};

/// Minkowski-norm color constancy: each channel is scaled so that its
/// `p`-mean matches the average `p`-mean of the three channels. Channels
/// whose `p`-mean is zero are left untouched.
pub fn shades_of_gray(img: &ImagePlane, p: f64) -> Result<ImagePlane> {
    if !(p >= 1.0) {
        return Err(ImagingError::Precondition(format!("Minkowski order must be >= 1, got {p}")));
    }
    if img.channels() != 3 {
        return Err(ImagingError::Precondition("shades_of_gray needs an RGB image".into()));
    }
    let n = (img.height() * img.width()) as f64;
    let mut means = [0.0f64; 3];
    for px in img.data().chunks_exact(3) {
        for (m, &v) in means.iter_mut().zip(px) {
            *m += v.powf(p);
        }
    }
    for m in &mut means {
        *m = (*m / n).powf(1.0 / p);
    }
    let gray = means.iter().sum::<f64>() / 3.0;
    let gains = means.map(|m| if m > 0.0 { gray / m } else { 1.0 });
    let data = img
        .data()
        .chunks_exact(3)
        .flat_map(|px| [px[0] * gains[0], px[1] * gains[1], px[2] * gains[2]])
        .collect();
    ImagePlane::new(img.height(), img.width(), 3, data)
}
