mod common;

use ban::eval::{ap_from_flags, average_precision, match_detections, ApProtocol, DetectionRecord, GroundTruth};
use common::{area_ap_oracle, grid_box, match_oracle, random_box, rng, voc07_ap_oracle};
use rand::Rng;

fn all_flag_sequences(max_len: usize) -> impl Iterator<Item = Vec<bool>> {
    (0..=max_len).flat_map(|n| (0u32..(1 << n)).map(move |m| (0..n).map(|i| m & (1 << i) != 0).collect()))
}

#[test]
fn exhaustive_rankings_match_exact_oracle() {
    let mut cases = 0;
    for flags in all_flag_sequences(5) {
        let tp = flags.iter().filter(|f| **f).count();
        for npos in tp.max(1)..=3 {
            let area = ap_from_flags(&flags, npos, ApProtocol::Area).unwrap();
            let voc = ap_from_flags(&flags, npos, ApProtocol::Voc07).unwrap();
            assert!((area - area_ap_oracle(&flags, npos).value()).abs() < 1e-12, "{flags:?} npos {npos}");
            assert!((voc - voc07_ap_oracle(&flags, npos).value()).abs() < 1e-12, "{flags:?} npos {npos}");
            cases += 1;
        }
    }
    assert!(cases > 100);
}

#[test]
fn matching_agrees_with_reference_on_grid_instances() {
    let mut r = rng(17);
    for _ in 0..2000 {
        let ngt = r.random_range(0..=3);
        let ndet = r.random_range(0..=5);
        let gts: Vec<(usize, _)> = (0..ngt).map(|_| (r.random_range(0..2), grid_box(&mut r))).collect();
        // few distinct score values so ties occur
        let dets: Vec<(usize, f64, _)> = (0..ndet)
            .map(|_| (r.random_range(0..2), f64::from(r.random_range(0..3u8)), grid_box(&mut r)))
            .collect();
        let thresh = [0.5, 0.25, 1.0 / 3.0][r.random_range(0..3)];
        let g: Vec<GroundTruth> = gts
            .iter()
            .map(|(img, b)| GroundTruth { image_id: img.to_string(), class_id: 1, bbox: *b })
            .collect();
        let d: Vec<DetectionRecord> = dets
            .iter()
            .map(|(img, s, b)| DetectionRecord { image_id: img.to_string(), class_id: 1, score: *s, bbox: *b })
            .collect();
        let expected = match_oracle(&dets, &gts, thresh);
        assert_eq!(match_detections(&d, &g, 1, thresh).0, expected);
        if ngt > 0 {
            let ap = average_precision(&d, &g, 1, thresh, ApProtocol::Area).unwrap();
            assert!((ap - area_ap_oracle(&expected, ngt).value()).abs() < 1e-12);
        }
    }
}

#[test]
fn larger_random_cases_agree_to_1e9() {
    let mut r = rng(5);
    for _ in 0..10 {
        let gts: Vec<(usize, _)> = (0..r.random_range(5..20)).map(|_| (r.random_range(0..4), random_box(&mut r, 60.0))).collect();
        let dets: Vec<(usize, f64, _)> = (0..r.random_range(20..60))
            .map(|_| (r.random_range(0..4), r.random::<f64>(), random_box(&mut r, 60.0)))
            .collect();
        let g: Vec<GroundTruth> = gts.iter().map(|(i, b)| GroundTruth { image_id: i.to_string(), class_id: 1, bbox: *b }).collect();
        let d: Vec<DetectionRecord> = dets
            .iter()
            .map(|(i, s, b)| DetectionRecord { image_id: i.to_string(), class_id: 1, score: *s, bbox: *b })
            .collect();
        let flags = match_oracle(&dets, &gts, 0.1);
        for (p, oracle) in [(ApProtocol::Area, area_ap_oracle(&flags, gts.len())), (ApProtocol::Voc07, voc07_ap_oracle(&flags, gts.len()))] {
            let ap = average_precision(&d, &g, 1, 0.1, p).unwrap();
            assert!((ap - oracle.value()).abs() < 1e-9);
        }
    }
}

#[test]
fn worked_example_is_five_sixths() {
    let oracle = area_ap_oracle(&[true, false, true], 2);
    assert_eq!((oracle.num, oracle.den), (5, 6));
    assert!((ap_from_flags(&[true, false, true], 2, ApProtocol::Area).unwrap() - 5.0 / 6.0).abs() < 1e-15);
}
