/// `(sin, cos)` of an angle in degrees, exact at multiples of 90°.
pub fn sin_cos_deg(deg: f64) -> (f64, f64) {
    let d = deg.rem_euclid(360.0);
    if d == 0.0 {
        (0.0, 1.0)
    } else if d == 90.0 {
        (1.0, 0.0)
    } else if d == 180.0 {
        (0.0, -1.0)
    } else if d == 270.0 {
        (-1.0, 0.0)
    } else {
        d.to_radians().sin_cos()
    }
}

/// Maps any angle into `[0, 360)`.
pub fn wrap_deg_360(deg: f64) -> f64 {
    let w = deg.rem_euclid(360.0);
    // rem_euclid can round up to exactly 360 for tiny negative inputs
    if w >= 360.0 {
        0.0
    } else {
        w
    }
}

/// Signed difference `a - b` wrapped into `(-180, 180]`.
pub fn circular_diff_deg(a: f64, b: f64) -> f64 {
    let d = wrap_deg_360(a - b);
    if d > 180.0 {
        d - 360.0
    } else {
        d
    }
}

pub fn street_column_azimuth(col: usize, width: usize) -> f64 {
    360.0 * (col as f64 + 0.5) / width as f64
}

/// Radius of the circular validity mask for a `size × size` aerial map.
pub fn disk_radius(size: usize) -> f64 {
    size as f64 / 2.0
}

fn center(size: usize) -> f64 {
    (size as f64 - 1.0) / 2.0
}

/// Offset of a pixel from the aerial center as `(down, left)`, i.e. the
/// south and west components.
fn offset(row: usize, col: usize, size: usize) -> (f64, f64) {
    let c = center(size);
    (row as f64 - c, c - col as f64)
}

pub fn in_disk(row: usize, col: usize, size: usize) -> bool {
    let (s, w) = offset(row, col, size);
    (s * s + w * w).sqrt() <= disk_radius(size)
}

/// Polar angle (degrees, clockwise from south) and radius of a pixel, or
/// `None` for the center pixel (radius below 0.5).
pub fn aerial_polar_angle(row: usize, col: usize, size: usize) -> Option<(f64, f64)> {
    let (s, w) = offset(row, col, size);
    let r = (s * s + w * w).sqrt();
    if r < 0.5 {
        return None;
    }
    Some((wrap_deg_360(w.atan2(s).to_degrees()), r))
}

/// Unit step `(d_row, d_col)` pointing along the given aerial angle.
pub fn aerial_direction(deg: f64) -> (f64, f64) {
    let (sin, cos) = sin_cos_deg(deg);
    (cos, -sin)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polar_convention() {
        // 5x5, center (2,2)
        let (a, _) = aerial_polar_angle(4, 2, 5).unwrap();
        assert_eq!(a, 0.0);
        let (a, _) = aerial_polar_angle(2, 0, 5).unwrap();
        assert_eq!(a, 90.0);
        let (a, _) = aerial_polar_angle(0, 2, 5).unwrap();
        assert_eq!(a, 180.0);
        let (a, _) = aerial_polar_angle(2, 4, 5).unwrap();
        assert_eq!(a, 270.0);
        assert!(aerial_polar_angle(2, 2, 5).is_none());
    }

    #[test]
    fn direction_matches_polar_angle() {
        for deg in [0.0, 37.0, 90.0, 200.0, 315.0] {
            let (dr, dc) = aerial_direction(deg);
            let size = 101;
            let row = (50.0 + 40.0 * dr).round() as usize;
            let col = (50.0 + 40.0 * dc).round() as usize;
            let (a, _) = aerial_polar_angle(row, col, size).unwrap();
            assert!(circular_diff_deg(a, deg).abs() < 1.5, "{deg} -> {a}");
        }
    }

    #[test]
    fn wrapping() {
        assert_eq!(circular_diff_deg(190.0, 0.0), -170.0);
        assert_eq!(circular_diff_deg(0.0, 180.0), 180.0);
        assert_eq!(wrap_deg_360(-1e-20), 0.0);
        assert_eq!(wrap_deg_360(725.0), 5.0);
    }
}
