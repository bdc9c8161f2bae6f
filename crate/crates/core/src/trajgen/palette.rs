const GOLDEN_ANGLE_DEG: f64 = 137.508;

/// Palette color of component `j >= 1`: golden-angle hue steps at full saturation and value.
pub fn component_color(j: u32) -> [f64; 3] {
    let hue = ((j.max(1) - 1) as f64 * GOLDEN_ANGLE_DEG).rem_euclid(360.0);
    hsv_to_rgb(hue, 1.0, 1.0)
}

fn hsv_to_rgb(hue: f64, s: f64, v: f64) -> [f64; 3] {
    let c = v * s;
    let h = hue / 60.0;
    let x = c * (1.0 - (h.rem_euclid(2.0) - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}
