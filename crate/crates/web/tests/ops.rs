use driftdeploy_web::{descriptor_values, placement, speed_values};

#[test]
fn maps_are_normalized_and_seeded() {
    let a = descriptor_values(2, 0.5, 3, 4, 8, 0.2).unwrap();
    assert_eq!(a.len(), 64);
    let max = a.iter().cloned().fold(f64::MIN, f64::max);
    assert!((max - 1.0).abs() < 1e-12);
    assert!(a.iter().all(|&v| v >= 0.0));
    assert_eq!(a, descriptor_values(2, 0.5, 3, 4, 8, 0.2).unwrap());
    assert_ne!(a, descriptor_values(2, 0.5, 4, 4, 8, 0.2).unwrap());
    assert!(descriptor_values(2, 0.5, 3, 0, 8, 0.2).is_err());
    assert!(descriptor_values(2, 0.5, 3, 4, 8, 0.0).is_err());
}

#[test]
fn placement_keeps_its_distance() {
    let map = descriptor_values(3, 0.5, 1, 2, 16, 0.3).unwrap();
    let existing = [0.0, 0.0, 2.0, -1.0];
    let placed = placement(&map, 16, &existing, 3, 1.0).unwrap();
    assert_eq!(placed.len(), 6);
    let pts: Vec<[f64; 2]> = placed.chunks(2).map(|c| [c[0], c[1]]).collect();
    let others = [[0.0, 0.0], [2.0, -1.0]];
    for (k, p) in pts.iter().enumerate() {
        for q in others.iter().chain(&pts[..k]) {
            assert!(driftdeploy::tracer::torus_distance(*p, *q) >= 1.0);
        }
    }
    assert!(placement(&map, 16, &[0.0], 1, 1.0).is_err());
    assert!(placement(&map[..10], 16, &[], 1, 1.0).is_err());
}

#[test]
fn speed_field_is_nonnegative() {
    let s = speed_values(3, 0.5, 9, 12).unwrap();
    assert_eq!(s.len(), 144);
    assert!(s.iter().all(|&v| v >= 0.0) && s.iter().any(|&v| v > 0.0));
}
