mod common;

use common::{default_waves, dense_sampling_mask};
use proptest::prelude::*;
use speedfield::masks::{build_anisotropic_mask, build_isotropic_mask, WaveParams};

#[test]
fn seven_by_seven_cells() {
    let m = build_anisotropic_mask(7, 7, &default_waves(), 10.0, 1.0).unwrap();
    assert_eq!(m.cardinality(), 21);
    let congested = [(0, 1), (-1, 1), (-1, 2), (-1, 3), (-2, 3)];
    let free = [(1, 1), (2, 1), (3, 1), (2, 2), (3, 2)];
    for (i, j) in congested.into_iter().chain(free) {
        assert!(m.contains(i, j), "({i}, {j}) missing");
        assert!(m.contains(-i, -j), "({}, {}) missing", -i, -j);
    }
    // 5 congested + 5 free on each side of the centre column, plus the centre
    assert_eq!(2 * (congested.len() + free.len()) + 1, 21);
}

#[test]
fn cardinalities_by_size() {
    for (k, n) in [(5, 13), (7, 21), (9, 29)] {
        assert_eq!(
            build_anisotropic_mask(k, k, &default_waves(), 10.0, 1.0)
                .unwrap()
                .cardinality(),
            n
        );
    }
    assert_eq!(build_isotropic_mask(9, 9).unwrap().cardinality(), 81);
}

#[test]
fn matches_dense_sampling_oracle() {
    for k in [3, 5, 7, 9] {
        let m = build_anisotropic_mask(k, k, &default_waves(), 10.0, 1.0).unwrap();
        assert_eq!(
            m.cells(),
            dense_sampling_mask(k, &default_waves(), 10.0, 1.0).as_slice(),
            "k = {k}"
        );
    }
}

#[test]
fn text_rows_are_upstream_first() {
    let m = build_anisotropic_mask(7, 7, &default_waves(), 10.0, 1.0).unwrap();
    let text = m.to_string();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows.len(), 7);
    // row 0 is the most upstream offset (i = −3): reached only by the
    // free-flow cone one and two steps in the past
    assert_eq!(rows[0], "0110000");
    assert_eq!(rows[3], "0011100");
}

fn waves() -> impl Strategy<Value = WaveParams> {
    (20.0..80.0f64, 0.0..60.0f64, 5.0..40.0f64).prop_map(|(lo, extra, w)| WaveParams {
        c_v_min: lo,
        c_v_max: lo + extra,
        c_w: w,
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn point_symmetric(w in waves(), k in prop::sample::select(vec![3usize, 5, 7, 9]), dx in 5.0..30.0f64) {
        let m = build_anisotropic_mask(k, k, &w, dx, 1.0).unwrap();
        let h = (k / 2) as isize;
        for i in -h..=h {
            for j in -h..=h {
                prop_assert_eq!(m.contains(i, j), m.contains(-i, -j));
            }
        }
    }

    #[test]
    fn quadrant_signs(w in waves(), k in prop::sample::select(vec![5usize, 7, 9]), dx in 5.0..30.0f64) {
        // in the future half the cone reaches only downstream cells and the
        // congested line only upstream ones; cells strictly downstream are
        // explained by the cone, strictly upstream by the congested line
        let m = build_anisotropic_mask(k, k, &w, dx, 1.0).unwrap();
        let h = (k / 2) as isize;
        let slope = |kmph: f64| kmph / 3.6 / dx;
        for j in 1..=h {
            let t = (j as f64 - 0.5, j as f64 + 0.5);
            for i in -h..=h {
                if !m.contains(i, j) || i == 0 {
                    continue;
                }
                let (lo, hi) = (i as f64 - 0.5, i as f64 + 0.5);
                if i > 0 {
                    prop_assert!(slope(w.c_v_max) * t.1 >= lo && slope(w.c_v_min) * t.0 <= hi);
                } else {
                    prop_assert!(-slope(w.c_w) * t.0 >= lo && -slope(w.c_w) * t.1 <= hi);
                }
            }
        }
    }

}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn oracle_agrees_on_random_parameters(w in waves(), dx in 8.0..25.0f64) {
        let m = build_anisotropic_mask(7, 7, &w, dx, 1.0).unwrap();
        let oracle = dense_sampling_mask(7, &w, dx, 1.0);
        prop_assert_eq!(m.cells(), oracle.as_slice());
    }

    #[test]
    fn never_larger_than_isotropic(w in waves(), k in prop::sample::select(vec![1usize, 3, 5, 7, 9, 11])) {
        let m = build_anisotropic_mask(k, k, &w, 10.0, 1.0).unwrap();
        prop_assert!(m.cardinality() <= k * k);
        prop_assert!(m.contains(0, 0));
    }
}
