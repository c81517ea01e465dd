use super::{ImagePlane, ImagingError, Result};

/// Pixelwise arithmetic mean of equally sized images, summed sequentially in
/// list order so the result is reproducible.
pub fn build_content_image(images: &[ImagePlane]) -> Result<ImagePlane> {
    let first = images
        .first()
        .ok_or_else(|| ImagingError::Precondition("content image needs at least one image".into()))?;
    let dims = first.dims();
    let mut acc = vec![0.0; first.data().len()];
    for (index, img) in images.iter().enumerate() {
        if img.dims() != dims {
            return Err(ImagingError::ShapeMismatch {
                index,
                expected: dims,
                actual: img.dims(),
            });
        }
        for (a, &v) in acc.iter_mut().zip(img.data()) {
            *a += v;
        }
    }
    let n = images.len() as f64;
    acc.iter_mut().for_each(|v| *v /= n);
    ImagePlane::new(dims.0, dims.1, dims.2, acc)
}
