mod common;

#[test]
fn slab_oracle_matches_frozen_value() {
    let p = common::slab_escape(1.0, 2.0, 0.01);
    assert!((p - common::SLAB_ESCAPE).abs() <= 1e-9, "{p}");
}

#[test]
fn e2_known_values() {
    assert!((common::e2(0.0) - 1.0).abs() < 1e-12);
    // E₂(1) = e⁻¹ − E₁(1)
    assert!((common::e2(1.0) - 0.148_495_506_775_922).abs() < 1e-9);
}
