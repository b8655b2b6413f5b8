//! Average precision on a hand-made ranking: a hit, a false alarm, then a hit.

use ban::eval::{average_precision, map_coco_style, ApProtocol, DetectionRecord, GroundTruth};
use ban::geometry::BBox;

fn main() -> ban::Result<()> {
    let gt = |x| GroundTruth {
        image_id: "img".into(),
        class_id: 1,
        bbox: BBox::from_corners(x, 0.0, x + 10.0, 10.0).expect("box"),
    };
    let det = |x, score| DetectionRecord {
        image_id: "img".into(),
        class_id: 1,
        score,
        bbox: BBox::from_corners(x, 0.0, x + 10.0, 10.0).expect("box"),
    };
    let gts = [gt(0.0), gt(20.0)];
    let dets = [det(0.0, 0.9), det(50.0, 0.8), det(20.0, 0.7)];
    for p in [ApProtocol::Area, ApProtocol::Voc07] {
        let ap = average_precision(&dets, &gts, 1, 0.5, p).unwrap_or(0.0);
        println!("{p:?} AP = {ap:.6}");
    }
    println!("COCO-style mAP = {:.6}", map_coco_style(&dets, &gts, 1));
    Ok(())
}
