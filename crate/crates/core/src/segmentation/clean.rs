use super::{BinaryMask, Result, SegmentationError};
use std::collections::{HashSet, VecDeque};

const BLUR_WINDOW: usize = 9;

const N4: [(isize, isize); 4] = [(-1, 0), (0, -1), (0, 1), (1, 0)];

fn neighbours4(h: usize, w: usize, i: usize) -> impl Iterator<Item = usize> {
    let (y, x) = ((i / w) as isize, (i % w) as isize);
    N4.iter().filter_map(move |&(dy, dx)| {
        let (ny, nx) = (y + dy, x + dx);
        (ny >= 0 && nx >= 0 && ny < h as isize && nx < w as isize).then(|| ny as usize * w + nx as usize)
    })
}

/// Largest 4-connected foreground component. Components are discovered in
/// row-major order of their first pixel, so on equal size the one holding the
/// lexicographically smallest pixel wins.
pub fn largest_component(mask: &BinaryMask) -> Result<BinaryMask> {
    let (h, w) = (mask.height(), mask.width());
    let data = mask.data();
    let mut label = vec![0u32; h * w];
    let mut best = (0u32, 0usize);
    let mut next = 0u32;
    let mut queue = VecDeque::new();
    for start in 0..h * w {
        if data[start] == 0 || label[start] != 0 {
            continue;
        }
        next += 1;
        label[start] = next;
        queue.push_back(start);
        let mut size = 0;
        while let Some(i) = queue.pop_front() {
            size += 1;
            for j in neighbours4(h, w, i) {
                if data[j] == 1 && label[j] == 0 {
                    label[j] = next;
                    queue.push_back(j);
                }
            }
        }
        if size > best.1 {
            best = (next, size);
        }
    }
    if best.0 == 0 {
        return Err(SegmentationError::EmptyMask);
    }
    let out = label.iter().map(|&l| u8::from(l == best.0)).collect();
    BinaryMask::new(h, w, out)
}

/// Fills every background region not 4-connected to the image border.
pub fn fill_holes(mask: &BinaryMask) -> BinaryMask {
    let (h, w) = (mask.height(), mask.width());
    let data = mask.data();
    let mut outside = vec![false; h * w];
    let mut queue = VecDeque::new();
    for i in 0..h * w {
        let (y, x) = (i / w, i % w);
        let border = y == 0 || x == 0 || y == h - 1 || x == w - 1;
        if border && data[i] == 0 {
            outside[i] = true;
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        for j in neighbours4(h, w, i) {
            if data[j] == 0 && !outside[j] {
                outside[j] = true;
                queue.push_back(j);
            }
        }
    }
    BinaryMask::from_fn(h, w, |y, x| !outside[y * w + x])
}

/// Binary median: a pixel is foreground when strictly more than half of its
/// `k×k` window (replicated borders) is foreground.
pub fn majority_blur(mask: &BinaryMask, k: usize) -> BinaryMask {
    let (h, w) = (mask.height(), mask.width());
    let r = (k / 2) as isize;
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut rows = vec![0u32; h * w];
    for y in 0..h {
        for x in 0..w {
            rows[y * w + x] = (-r..=r)
                .map(|d| mask.data()[y * w + clamp(x as isize + d, w)] as u32)
                .sum();
        }
    }
    let half = (k * k) as u32 / 2;
    BinaryMask::from_fn(h, w, |y, x| {
        let total: u32 = (-r..=r).map(|d| rows[clamp(y as isize + d, h) * w + x]).sum();
        total > half
    })
}

fn blob_and_holes(mask: &BinaryMask) -> Result<BinaryMask> {
    Ok(fill_holes(&largest_component(mask)?))
}

/// Largest blob, hole fill, 9×9 majority blur, then blob and hole passes
/// again, repeated until the mask stops changing so the result is a fixed
/// point of the whole procedure. If the blur erases a small lesion entirely
/// the last nonempty mask is returned.
pub fn clean_mask(mask: &BinaryMask) -> Result<BinaryMask> {
    let mut current = blob_and_holes(mask)?;
    let mut seen = HashSet::new();
    loop {
        let blurred = majority_blur(&current, BLUR_WINDOW);
        if blurred.is_empty() {
            return Ok(current);
        }
        let next = blob_and_holes(&blurred)?;
        if next == current || !seen.insert(next.clone()) {
            return Ok(current);
        }
        current = next;
    }
}
