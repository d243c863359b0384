//! Every point of every convex segment must lie in the region it was cut
//! from. Checked by dense sampling against `PqvFor::contains`.

use flexgrid::geometry::{segment_2d, segment_3d, synth_for, PqvFor, Segments};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn fors() -> Vec<PqvFor> {
    (0..10u64).map(|s| synth_for(s as usize, 40 + s, 7)).collect()
}

/// Samples per segment; corners are always included on top.
const PER_SEGMENT: usize = 40;

#[test]
fn planar_segments_stay_inside() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut samples, mut escapes) = (0usize, Vec::new());
    for fr in fors() {
        for (slice, sl) in fr.slices.iter().enumerate() {
            for k in 1..=4 {
                let seg = segment_2d(&fr, slice, k).unwrap();
                let Segments::Planar { segments, v_slack, .. } = &seg.segments else {
                    panic!("expected planar segments");
                };
                assert_eq!(*v_slack, sl.v_slack);
                assert_eq!(segments.len(), k);
                for s in segments {
                    let mut pts: Vec<(f64, f64)> = Vec::new();
                    for dp in [0.0, s.dp_max] {
                        pts.push((dp, s.lower_at(dp)));
                        pts.push((dp, s.upper_at(dp)));
                    }
                    for _ in 0..PER_SEGMENT {
                        let dp = rng.random_range(0.0..=s.dp_max);
                        let t: f64 = rng.random();
                        pts.push((dp, s.lower_at(dp) + t * (s.upper_at(dp) - s.lower_at(dp))));
                    }
                    for (dp, q) in pts {
                        samples += 1;
                        let p = s.p_c_min + dp;
                        if !fr.contains(p, q, sl.v_slack).unwrap() {
                            escapes.push((fr.bus_id, slice, k, s.ki, p, q));
                        }
                    }
                }
            }
        }
    }
    assert!(samples >= 10_000, "only {samples} samples");
    assert!(escapes.is_empty(), "{} escapes, first {:?}", escapes.len(), &escapes[..escapes.len().min(5)]);
}

#[test]
fn volumetric_segments_stay_inside() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let (mut samples, mut escapes) = (0usize, Vec::new());
    for fr in fors() {
        for k in 1..=3 {
            for l in 1..=3 {
                let seg = segment_3d(&fr, k, l).unwrap();
                let Segments::Volumetric { n_p, n_v, cells } = &seg.segments else {
                    panic!("expected volumetric segments");
                };
                assert_eq!((*n_p, *n_v), (2 * k, l));
                assert_eq!(cells.len(), n_p * n_v);
                for c in cells {
                    let mut pts = Vec::new();
                    for dp in [0.0, c.dp_max] {
                        for dv in [0.0, c.dv_max] {
                            pts.push((dp, dv, c.lower_at(dv)));
                            pts.push((dp, dv, c.upper_at(dv)));
                        }
                    }
                    for _ in 0..PER_SEGMENT {
                        let dp = rng.random_range(0.0..=c.dp_max);
                        let dv = rng.random_range(0.0..=c.dv_max);
                        let t: f64 = rng.random();
                        pts.push((dp, dv, c.lower_at(dv) + t * (c.upper_at(dv) - c.lower_at(dv))));
                    }
                    for (dp, dv, q) in pts {
                        samples += 1;
                        let (p, v) = (c.p_c_min + dp, c.v_c_min + dv);
                        if !fr.contains(p, q, v).unwrap() {
                            escapes.push((fr.bus_id, k, l, c.ki, c.li, p, q, v));
                        }
                    }
                }
            }
        }
    }
    assert!(samples >= 10_000, "only {samples} samples");
    assert!(escapes.is_empty(), "{} escapes, first {:?}", escapes.len(), &escapes[..escapes.len().min(5)]);
}

/// Inscribed pieces cannot cover more than the region, and more pieces
/// should not lose much coverage.
#[test]
fn segment_volume_is_bounded_by_the_region() {
    for fr in fors() {
        let whole = fr.volume().unwrap();
        let mut last = 0.0;
        for k in [1, 2, 4] {
            let vol = segment_3d(&fr, k, 3).unwrap().volume();
            assert!(vol <= whole * (1.0 + 1e-9), "bus {}: {vol} > {whole}", fr.bus_id);
            assert!(vol > 0.0);
            last = vol;
        }
        // With 8 P pieces and 3 voltage pieces the cover is substantial.
        assert!(last > 0.5 * whole, "bus {}: coverage {}", fr.bus_id, last / whole);
        for (slice, sl) in fr.slices.iter().enumerate() {
            let area = fr.section_at(sl.v_slack).unwrap().area();
            let seg = segment_2d(&fr, slice, 4).unwrap().volume();
            assert!(seg <= area * (1.0 + 1e-9) && seg > 0.0);
        }
    }
}

#[test]
fn segment_constants_are_absolute() {
    let fr = synth_for(3, 5, 5);
    let seg = segment_3d(&fr, 2, 2).unwrap();
    let Segments::Volumetric { cells, n_p, .. } = &seg.segments else {
        unreachable!()
    };
    let (vlo, vhi) = fr.v_range();
    // P cells tile the region's P extent; voltage cells tile the slack range.
    let sec = fr.section_at(vlo).unwrap();
    assert!((cells[0].p_c_min - sec.pmin()).abs() < 1e-12);
    let last = &cells[n_p - 1];
    assert!((last.p_c_min + last.dp_max - sec.pmax()).abs() < 1e-9);
    assert!((cells[0].v_c_min - vlo).abs() < 1e-12);
    let top = cells.last().unwrap();
    assert!((top.v_c_min + top.dv_max - vhi).abs() < 1e-12);
    assert!(seg.c_max >= 2.0 * fr.max_abs_q() - 1e-12);
}
