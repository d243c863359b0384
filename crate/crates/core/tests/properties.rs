use flexgrid::convexify::{convex_hull, half_spaces, hull_of_for, Point3};
use flexgrid::geometry::{parse_for, segment_3d, synth_for};
use flexgrid::grid::{parse_grid, synth_grid};
use flexgrid::powerflow::{solve_power_flow, PowerFlowOptions};
use num_complex::Complex64;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn grid_json_round_trips(n in 3usize..25, seed in 0u64..1000) {
        let g = synth_grid(n, seed).unwrap();
        prop_assert_eq!(parse_grid(&g.to_json(), "memory").unwrap(), g);
    }

    #[test]
    fn for_json_round_trips(bus in 0usize..40, seed in 0u64..1000, slices in 1usize..9) {
        let f = synth_for(bus, seed, slices);
        prop_assert_eq!(parse_for(&f.to_json(), "memory").unwrap(), f);
    }

    /// Resistive lines dissipate: the injections of a solved state sum to
    /// a non-negative loss, and the stated mismatch is met.
    #[test]
    fn power_flow_losses_are_non_negative(n in 3usize..20, seed in 0u64..500) {
        let g = synth_grid(n, seed).unwrap();
        let st = solve_power_flow(&g, None, g.buses[g.slack()].v0, &PowerFlowOptions::default()).unwrap();
        prop_assert!(st.mismatch <= 1e-8);
        let mut loss = 0.0;
        for br in &g.branches {
            let y = Complex64::from_polar(br.y_mag, br.theta);
            let uf = Complex64::from_polar(st.v[br.from_bus], st.delta[br.from_bus]);
            let ut = Complex64::from_polar(st.v[br.to_bus], st.delta[br.to_bus]);
            let i = y * (uf - ut);
            loss += ((uf - ut) * i.conj()).re;
        }
        prop_assert!(loss >= -1e-12, "loss {}", loss);
    }

    #[test]
    fn hull_rows_hold_at_every_input_point(pts in prop::collection::vec(prop::array::uniform3(-5.0f64..5.0), 4..40)) {
        let pts: Vec<Point3> = pts;
        // Degenerate (flat) clouds are rejected, not mis-hulled.
        if let Ok(h) = convex_hull(&pts) {
            prop_assert!(h.volume > 0.0);
            let hs = half_spaces(&h, 0).unwrap();
            for p in &pts {
                prop_assert!(hs.max_excess(*p) <= 1e-9);
            }
        }
    }

    #[test]
    fn segments_and_hull_bracket_the_region(bus in 0usize..40, seed in 0u64..1000, k in 1usize..4, l in 1usize..4) {
        let f = synth_for(bus, seed, 5);
        let whole = f.volume().unwrap();
        let inner = segment_3d(&f, k, l).unwrap().volume();
        let outer = hull_of_for(&f).unwrap().volume;
        prop_assert!(inner <= whole * (1.0 + 1e-9));
        prop_assert!(whole <= outer * (1.0 + 1e-9));
    }
}
