//! Brute-force reference Canny detector.
//!
//! Written before and independently of the library implementation: nested
//! `Vec` buffers, full (non-separable) 2-D Gaussian convolution, direct Sobel
//! loops, and a queue-based hysteresis pass. Slow and simple on purpose.
//!
//! Pipeline contract shared with the library (both follow the same published
//! algorithm and local conventions):
//! - Gaussian kernel radius `ceil(3 sigma)`, clamp-to-edge borders;
//! - Sobel 3x3 gradients, zero at the one-pixel border;
//! - orientation quantized to 4 bins (0, 45, 90, 135 degrees), y axis down;
//! - non-maximum suppression keeps a pixel iff its magnitude is strictly
//!   greater than the neighbor against the gradient direction and >= the
//!   neighbor along it (deterministic on symmetric ridges);
//! - thresholds are fractions of the maximum suppressed magnitude;
//! - weak pixels survive iff 8-connected to a strong pixel through weak ones;
//! - border pixels are never edges.

pub type Plane = Vec<Vec<f64>>;

pub fn reference_canny(plane: &Plane, sigma: f64, low: f64, high: f64) -> Vec<Vec<u8>> {
    let h = plane.len();
    let w = plane[0].len();
    assert!(h >= 3 && w >= 3, "reference canny needs at least 3x3 input");

    let blurred = blur_2d(plane, sigma);

    // Sobel gradients, zero on the border.
    let sx = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
    let sy = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];
    let mut gx = vec![vec![0.0; w]; h];
    let mut gy = vec![vec![0.0; w]; h];
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let mut ax = 0.0;
            let mut ay = 0.0;
            for ky in 0..3 {
                for kx in 0..3 {
                    let v = blurred[y + ky - 1][x + kx - 1];
                    ax += sx[ky][kx] * v;
                    ay += sy[ky][kx] * v;
                }
            }
            gx[y][x] = ax;
            gy[y][x] = ay;
        }
    }

    let mut mag = vec![vec![0.0; w]; h];
    for y in 0..h {
        for x in 0..w {
            mag[y][x] = gx[y][x].hypot(gy[y][x]);
        }
    }

    // Non-maximum suppression along the quantized gradient direction.
    let mut thinned = vec![vec![0.0; w]; h];
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            if mag[y][x] == 0.0 {
                continue;
            }
            let mut angle = gy[y][x].atan2(gx[y][x]).to_degrees();
            if angle < 0.0 {
                angle += 180.0;
            }
            // (prev, next): against and along the gradient direction.
            let (prev, next) = if !(22.5..157.5).contains(&angle) {
                (mag[y][x - 1], mag[y][x + 1])
            } else if angle < 67.5 {
                (mag[y - 1][x - 1], mag[y + 1][x + 1])
            } else if angle < 112.5 {
                (mag[y - 1][x], mag[y + 1][x])
            } else {
                (mag[y - 1][x + 1], mag[y + 1][x - 1])
            };
            if mag[y][x] > prev && mag[y][x] >= next {
                thinned[y][x] = mag[y][x];
            }
        }
    }

    // Double threshold relative to the max suppressed magnitude + hysteresis.
    let peak = thinned
        .iter()
        .flatten()
        .cloned()
        .fold(0.0_f64, f64::max);
    let mut edges = vec![vec![0u8; w]; h];
    if peak <= 0.0 {
        return edges;
    }
    let lo = low * peak;
    let hi = high * peak;

    let mut queue = Vec::new();
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            if thinned[y][x] >= hi {
                edges[y][x] = 1;
                queue.push((y, x));
            }
        }
    }
    while let Some((y, x)) = queue.pop() {
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                let ny = y as i64 + dy;
                let nx = x as i64 + dx;
                if ny < 1 || nx < 1 || ny >= h as i64 - 1 || nx >= w as i64 - 1 {
                    continue;
                }
                let (ny, nx) = (ny as usize, nx as usize);
                if edges[ny][nx] == 0 && thinned[ny][nx] >= lo {
                    edges[ny][nx] = 1;
                    queue.push((ny, nx));
                }
            }
        }
    }
    edges
}

fn blur_2d(plane: &Plane, sigma: f64) -> Plane {
    let h = plane.len();
    let w = plane[0].len();
    if sigma <= 0.0 {
        return plane.clone();
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let mut kernel = vec![vec![0.0; (2 * radius + 1) as usize]; (2 * radius + 1) as usize];
    let mut sum = 0.0;
    for ky in -radius..=radius {
        for kx in -radius..=radius {
            let v = (-((ky * ky + kx * kx) as f64) / (2.0 * sigma * sigma)).exp();
            kernel[(ky + radius) as usize][(kx + radius) as usize] = v;
            sum += v;
        }
    }
    for row in &mut kernel {
        for v in row {
            *v /= sum;
        }
    }
    let mut out = vec![vec![0.0; w]; h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for ky in -radius..=radius {
                for kx in -radius..=radius {
                    let sy = (y as i64 + ky).clamp(0, h as i64 - 1) as usize;
                    let sx = (x as i64 + kx).clamp(0, w as i64 - 1) as usize;
                    acc += kernel[(ky + radius) as usize][(kx + radius) as usize] * plane[sy][sx];
                }
            }
            out[y][x] = acc;
        }
    }
    out
}

pub fn edge_count(edges: &[Vec<u8>]) -> usize {
    edges.iter().flatten().filter(|&&v| v == 1).count()
}

/// Columns that contain at least one edge pixel.
pub fn edge_columns(edges: &[Vec<u8>]) -> Vec<usize> {
    let w = edges[0].len();
    (0..w)
        .filter(|&x| edges.iter().any(|row| row[x] == 1))
        .collect()
}
