//! sRGB to CIELab lightness.
//!
//! Only L* is needed for the brightness factor, and L* depends solely on the
//! luminance Y, so the full XYZ transform reduces to its middle row.

/// Middle row of the linear-sRGB to XYZ matrix (D65 white).
const Y_ROW: [f64; 3] = [0.212_672_9, 0.715_152_2, 0.072_175_0];

/// CIE constants in their exact rational form.
const LAB_EPSILON: f64 = 216.0 / 24389.0;
const LAB_KAPPA: f64 = 24389.0 / 27.0;

/// Inverse sRGB companding of one channel in `[0, 1]`.
pub fn srgb_to_linear(v: f64) -> f64 {
    if v <= 0.040_45 {
        v / 12.92
    } else {
        libm::pow((v + 0.055) / 1.055, 2.4)
    }
}

fn luminance(rgb: [f64; 3]) -> f64 {
    Y_ROW[0] * srgb_to_linear(rgb[0]) + Y_ROW[1] * srgb_to_linear(rgb[1]) + Y_ROW[2] * srgb_to_linear(rgb[2])
}

/// CIELab L* of a single sRGB pixel, in `[0, 100]`.
pub fn lightness(rgb: [f64; 3]) -> f64 {
    // White luminance evaluated through the same expression so that Y/Yn is
    // exactly 1 for white.
    let yn = luminance([1.0, 1.0, 1.0]);
    let t = luminance(rgb) / yn;
    if t > LAB_EPSILON {
        116.0 * libm::cbrt(t) - 16.0
    } else {
        LAB_KAPPA * t
    }
}

/// Mean L* over a sequence of sRGB pixels. Returns 0 for an empty sequence.
pub fn mean_lightness<I: IntoIterator<Item = [f64; 3]>>(pixels: I) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for p in pixels {
        sum += lightness(p);
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Average CIELab lightness of an image.
pub fn compute_brightness(image: &crate::world::Image) -> f64 {
    mean_lightness(image.pixels())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn black_and_white_are_exact() {
        assert_eq!(lightness([0.0, 0.0, 0.0]), 0.0);
        assert_eq!(lightness([1.0, 1.0, 1.0]), 100.0);
    }

    #[test]
    fn mid_gray_matches_reference() {
        // 116 * cbrt(((0.5 + 0.055) / 1.055)^2.4) - 16, evaluated independently.
        let l = lightness([0.5, 0.5, 0.5]);
        assert!((l - 53.388_964_741_114_32).abs() < 1e-6, "{l}");
    }

    #[test]
    fn lightness_is_monotone_in_gray_level() {
        let mut prev = -1.0;
        for i in 0..=255 {
            let v = f64::from(i) / 255.0;
            let l = lightness([v, v, v]);
            assert!(l > prev);
            prev = l;
        }
    }

    #[test]
    fn dark_branch_is_continuous() {
        let below = LAB_KAPPA * LAB_EPSILON;
        let above = 116.0 * libm::cbrt(LAB_EPSILON) - 16.0;
        assert!((below - above).abs() < 1e-9);
    }
}
