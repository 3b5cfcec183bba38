use sessd::geom::{bev_intersection_area, iou_3d, iou_bev, Box3D};
use sessd::losses::{odiou_loss, LossWeights};

use crate::args::IouArgs;
use crate::error::{print_resolved, Classify, Failure};

pub fn run(a: IouArgs) -> Result<(), Failure> {
    let gamma = a.gamma.unwrap_or(LossWeights::default().gamma);
    let mk = |v: &[f64]| Box3D::from_array([v[0], v[1], v[2], v[3], v[4], v[5], v[6]]).usage();
    let (p, g) = (mk(&a.values[..7])?, mk(&a.values[7..])?);
    print_resolved(&serde_json::json!({ "command": "iou", "box_a": p, "box_b": g, "gamma": gamma }));
    let o = odiou_loss(&p, &g, gamma);
    for (name, v) in [
        ("bev_intersection", bev_intersection_area(&p, &g)),
        ("iou_bev", iou_bev(&p, &g)),
        ("iou_3d", iou_3d(&p, &g)),
        ("odiou_iou_term", o.iou_term),
        ("odiou_center_term", o.center_term),
        ("odiou_orient_term", o.orient_term),
        ("odiou_total", o.total),
    ] {
        println!("{name:<18} {v:.9}");
    }
    Ok(())
}
