use okplan::artifacts;
use okplan::config::CaseConfig;
use okplan_core::implant::*;
use okplan_core::morphometry::*;
use std::path::Path;

fn main() {
    let out = Path::new("/tmp/smoke/out1");
    let femur = artifacts::read_mesh(&out.join("femur_mesh.txt")).unwrap();
    let tibia = artifacts::read_mesh(&out.join("tibia_mesh.txt")).unwrap();
    let fem_lm = artifacts::read_landmarks(&out.join("femur_landmarks.txt")).unwrap();
    let tib_lm = artifacts::read_landmarks(&out.join("tibia_landmarks.txt")).unwrap();
    let cfg = CaseConfig::default();
    let fc = femoral_core_chain(&fem_lm, &femur, &FemoralCoreConfig::default()).unwrap();
    let tc = tibial_core_chain(&tib_lm, &tibia, &TibialCoreConfig::default()).unwrap();
    let res = compute_resections(&fc, &tc, &femur, &ResectionConfig::default()).unwrap();
    let fitted = artifacts::read_mesh(&out.join("femur_fitted.txt")).unwrap();
    let fit = artifacts::read_fit(&out.join("femur_fit.txt"), fitted).unwrap();
    let premorbid = fit.fitted_mesh.transformed(&fit.transform.inverse());
    let fem = design_femoral(&fc, &premorbid, &res, &FemoralDesignParams::default()).unwrap();
    let _ = cfg;
    for skip in [0usize, 1] {
        let planes: Vec<_> = res.femoral_ordered().iter().skip(skip).map(|p| (*p).clone()).collect();
        let pair = flatten_contours_multi(&femur, &fem, &planes, &[]).unwrap();
        println!("skip {}: bone perim {:.1} ({} pts), implant perim {:.1} ({} pts)",
            skip, pair.bone.perimeter(), pair.bone.points.len(),
            pair.implant.perimeter(), pair.implant.points.len());
        let (blo, bhi) = bbox(&pair.bone.points);
        let (ilo, ihi) = bbox(&pair.implant.points);
        println!("  bone bbox {:?} {:?}", blo, bhi);
        println!("  impl bbox {:?} {:?}", ilo, ihi);
        // per-plane section loop stats on the bone
        for (i, pl) in planes.iter().enumerate() {
            let loops = section_loops(&femur, pl);
            let sizes: Vec<usize> = loops.iter().map(|l| l.len()).collect();
            println!("  bone plane {i}: {} loops, sizes {:?}", loops.len(), sizes);
        }
    }
}

fn bbox(pts: &[nalgebra::Point2<f64>]) -> ((f64, f64), (f64, f64)) {
    let mut lo = (f64::INFINITY, f64::INFINITY);
    let mut hi = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in pts {
        lo.0 = lo.0.min(p.x); lo.1 = lo.1.min(p.y);
        hi.0 = hi.0.max(p.x); hi.1 = hi.1.max(p.y);
    }
    (lo, hi)
}
