//! Small shared helpers: hashing and exact integer-degree trigonometry.

/// FNV-1a 64-bit hash (stable across platforms; used for config hashes and
/// per-parameter RNG stream derivation).
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Cosine and sine of an integer angle in degrees.
///
/// The angle is reduced to the first octant in exact integer arithmetic
/// before any floating-point evaluation, so quadrant identities hold
/// *bitwise*: `cos_sin_deg(d + 90)` is exactly `(-sin, cos)` of
/// `cos_sin_deg(d)`, `cos_sin_deg(-d)` is exactly `(cos, -sin)`, etc.
/// The spatial rotation/reflection augmentations rely on this to commute
/// with encoding sample-exactly on the integer-degree label grid.
pub fn cos_sin_deg(deg: i64) -> (f64, f64) {
    let r = deg.rem_euclid(360);
    let q = r / 90; // quadrant 0..3
    let a = r % 90;
    let (c0, s0) = if a == 45 {
        // Single primitive at the octant boundary so cos(45) == sin(45).
        let c = (std::f64::consts::PI / 4.0).cos();
        (c, c)
    } else if a < 45 {
        let rad = a as f64 * std::f64::consts::PI / 180.0;
        (rad.cos(), rad.sin())
    } else {
        let rad = (90 - a) as f64 * std::f64::consts::PI / 180.0;
        (rad.sin(), rad.cos())
    };
    match q {
        0 => (c0, s0),
        1 => (-s0, c0),
        2 => (-c0, -s0),
        _ => (s0, -c0),
    }
}

/// Cartesian unit vector for integer (azimuth, elevation) degrees.
/// x points at azimuth 0, y at azimuth 90, z up.
pub fn unit_vec_deg(az: i64, el: i64) -> [f64; 3] {
    let (ca, sa) = cos_sin_deg(az);
    let (ce, se) = cos_sin_deg(el);
    [ca * ce, sa * ce, se]
}

/// Wraps a degree value into [-180, 180).
pub fn wrap_az_deg(az: i64) -> i64 {
    let mut a = az.rem_euclid(360);
    if a >= 180 {
        a -= 360;
    }
    a
}

/// Cartesian unit vector -> (azimuth, elevation) in degrees,
/// azimuth in [-180, 180), elevation in [-90, 90].
pub fn vec_to_angles(v: [f64; 3]) -> (f64, f64) {
    let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    if norm == 0.0 {
        return (0.0, 0.0);
    }
    let mut az = v[1].atan2(v[0]).to_degrees();
    if az >= 180.0 {
        az -= 360.0;
    }
    let el = (v[2] / norm).clamp(-1.0, 1.0).asin().to_degrees();
    (az, el)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadrant_identities_are_exact() {
        // IEEE equality: exact values, with +-0 treated as equal.
        for d in -720..=720i64 {
            let (c, s) = cos_sin_deg(d);
            let (c90, s90) = cos_sin_deg(d + 90);
            assert!(c90 == -s, "cos(d+90) != -sin(d) at {d}");
            assert!(s90 == c, "sin(d+90) != cos(d) at {d}");
            let (cn, sn) = cos_sin_deg(-d);
            assert!(cn == c);
            assert!(sn == -s);
        }
    }

    #[test]
    fn matches_reference_trig() {
        for d in -360..=360i64 {
            let (c, s) = cos_sin_deg(d);
            let rad = d as f64 * std::f64::consts::PI / 180.0;
            assert!((c - rad.cos()).abs() < 1e-15, "cos mismatch at {d}");
            assert!((s - rad.sin()).abs() < 1e-15, "sin mismatch at {d}");
        }
    }

    #[test]
    fn angle_round_trip() {
        for &(az, el) in &[(0i64, 0i64), (90, 0), (-45, 30), (135, -40), (-180, 10)] {
            let v = unit_vec_deg(az, el);
            let (a2, e2) = vec_to_angles(v);
            assert!((a2 - az as f64).abs() < 1e-10);
            assert!((e2 - el as f64).abs() < 1e-10);
        }
    }
}
