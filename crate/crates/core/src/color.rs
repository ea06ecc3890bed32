//! sRGB to CIE L*a*b* (D65) and HSV conversions.

fn srgb_to_linear(c: f64) -> f64 {
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

fn lab_f(t: f64) -> f64 {
    const DELTA: f64 = 6.0 / 29.0;
    if t > DELTA * DELTA * DELTA {
        t.cbrt()
    } else {
        t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
    }
}

/// 8-bit sRGB to L*a*b* with L in [0,100] and a, b roughly in [-128,128].
pub fn rgb_to_lab(rgb: [u8; 3]) -> [f64; 3] {
    let [r, g, b] = rgb.map(|c| srgb_to_linear(c as f64 / 255.0));
    let x = 0.4124564 * r + 0.3575761 * g + 0.1804375 * b;
    let y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b;
    let z = 0.0193339 * r + 0.1191920 * g + 0.9503041 * b;
    let (fx, fy, fz) = (lab_f(x / 0.95047), lab_f(y), lab_f(z / 1.08883));
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

/// [`rgb_to_lab`] with the per-channel linearization cached.
pub(crate) struct LabConverter {
    linear: [f64; 256],
}

impl LabConverter {
    pub fn new() -> Self {
        let mut linear = [0.0; 256];
        for (i, v) in linear.iter_mut().enumerate() {
            *v = srgb_to_linear(i as f64 / 255.0);
        }
        Self { linear }
    }

    pub fn convert(&self, rgb: [u8; 3]) -> [f64; 3] {
        let [r, g, b] = rgb.map(|c| self.linear[c as usize]);
        let x = 0.4124564 * r + 0.3575761 * g + 0.1804375 * b;
        let y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b;
        let z = 0.0193339 * r + 0.1191920 * g + 0.9503041 * b;
        let (fx, fy, fz) = (lab_f(x / 0.95047), lab_f(y), lab_f(z / 1.08883));
        [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
    }
}

/// 8-bit RGB to HSV, all components in [0,1]. Hue of a gray pixel is 0.
pub fn rgb_to_hsv(rgb: [u8; 3]) -> [f64; 3] {
    let [r, g, b] = rgb.map(|c| c as f64 / 255.0);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        (b - r) / delta + 2.0
    } else {
        (r - g) / delta + 4.0
    } / 6.0;
    let s = if max == 0.0 { 0.0 } else { delta / max };
    [h, s, max]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lab_reference_values() {
        let white = rgb_to_lab([255, 255, 255]);
        assert!((white[0] - 100.0).abs() < 1e-3 && white[1].abs() < 1e-2 && white[2].abs() < 1e-2);
        assert_eq!(rgb_to_lab([0, 0, 0]), [0.0, 0.0, 0.0]);
        // sRGB red: L* 53.24, a* 80.09, b* 67.20
        let red = rgb_to_lab([255, 0, 0]);
        assert!((red[0] - 53.24).abs() < 0.05);
        assert!((red[1] - 80.09).abs() < 0.05);
        assert!((red[2] - 67.20).abs() < 0.05);
        let conv = LabConverter::new();
        assert_eq!(conv.convert([12, 200, 99]), rgb_to_lab([12, 200, 99]));
    }

    #[test]
    fn hsv_reference_values() {
        assert_eq!(rgb_to_hsv([255, 0, 0]), [0.0, 1.0, 1.0]);
        assert_eq!(rgb_to_hsv([0, 255, 0]), [1.0 / 3.0, 1.0, 1.0]);
        assert_eq!(rgb_to_hsv([0, 0, 255]), [2.0 / 3.0, 1.0, 1.0]);
        assert_eq!(rgb_to_hsv([128, 128, 128])[..2], [0.0, 0.0]);
        let magenta_ish = rgb_to_hsv([255, 0, 128]);
        assert!(magenta_ish[0] > 0.9 && magenta_ish[0] < 1.0);
    }
}
