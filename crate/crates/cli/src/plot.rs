use kbuffers::scene::Image;

const PALETTE: [[f32; 3]; 6] = [
    [0.26, 0.45, 0.70],
    [0.87, 0.52, 0.20],
    [0.33, 0.66, 0.41],
    [0.77, 0.31, 0.32],
    [0.51, 0.45, 0.70],
    [0.58, 0.47, 0.38],
];

/// Bar chart of `values` on a white canvas. Bars share a baseline a little
/// below the smallest value so small differences stay visible; a gray rule
/// marks that baseline.
pub fn bar_chart(values: &[f64], width: usize, height: usize) -> Image {
    let mut img = Image::from_hwc(width, height, vec![1.0; width * height * 3]).expect("sized buffer");
    if values.is_empty() {
        return img;
    }
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = (hi - lo).max(1e-6);
    let base = lo - 0.25 * span;
    let top = hi + 0.05 * span;
    let margin = 8;
    let plot_h = height - 2 * margin;
    let slot = (width - 2 * margin) / values.len();
    let bar_w = (slot * 3 / 4).max(1);
    for (i, &v) in values.iter().enumerate() {
        let frac = ((v - base) / (top - base)).clamp(0.0, 1.0);
        let bar_h = (frac * plot_h as f64).round() as usize;
        let x0 = margin + i * slot + (slot - bar_w) / 2;
        for y in height - margin - bar_h..height - margin {
            for x in x0..x0 + bar_w {
                img.set_pixel(x, y, PALETTE[i % PALETTE.len()]);
            }
        }
    }
    for x in margin..width - margin {
        img.set_pixel(x, height - margin, [0.4, 0.4, 0.4]);
    }
    img
}
