use std::sync::Arc;

use kdvlab::hierarchy::{build_profiles, residual_cascade, HierarchyOptions};
use kdvlab::kdv::soliton;
use kdvlab::{Grid, GridField, LabError, Preset};

fn grid() -> Arc<Grid> {
    Grid::new(256, 40.0).unwrap()
}

#[test]
fn soliton_cascade_is_consistent() {
    let g = grid();
    for preset in [Preset::Cold, Preset::Warm] {
        let p = preset.params();
        let z = GridField::zeros(&g);
        let init = [soliton(&g, &p, 1.0, 0.0, 0.0), z.clone(), z.clone(), z];
        let set = build_profiles(&init, 0.2, &p, 2.5e-3, 8, &HierarchyOptions::default()).unwrap();
        assert_eq!(set.len(), 11);
        assert_eq!(set.sign.selected, -1);
        for i in [0, 5, 10] {
            let c = residual_cascade(&set, i, HierarchyOptions::default().mean_tol).unwrap();
            assert!(c.max() < 1e-7, "{preset:?} t={}: {}", c.t, c.max());
        }
        // higher profiles are generated from zero data by the forcing
        assert!(set.n[1][10].max_abs() > 0.0);
        assert!(set.n[3][10].is_finite());
    }
}

#[test]
fn zero_data_gives_zero_profiles() {
    let g = Grid::new(64, 20.0).unwrap();
    let p = Preset::Cold.params();
    let z = GridField::zeros(&g);
    let init = [z.clone(), z.clone(), z.clone(), z];
    let set = build_profiles(&init, 0.1, &p, 1e-2, 5, &HierarchyOptions::default()).unwrap();
    for family in [&set.n, &set.u, &set.phi, &set.h, &set.g, &set.big_g] {
        assert!(family.iter().flatten().all(|f| f.max_abs() == 0.0));
    }
}

#[test]
fn subsampling_keeps_every_stride() {
    let g = Grid::new(64, 20.0).unwrap();
    let p = Preset::Cold.params();
    let z = GridField::zeros(&g);
    let init = [soliton(&g, &p, 1.0, 0.0, 0.0), z.clone(), z.clone(), z];
    let set = build_profiles(&init, 0.08, &p, 1e-2, 1, &HierarchyOptions::default()).unwrap();
    assert_eq!(set.len(), 9);
    let half = set.subsample(2).unwrap();
    assert_eq!(half.len(), 5);
    assert_eq!(half.n[2][2].values(), set.n[2][4].values());
    assert!(matches!(set.subsample(3), Err(LabError::Parameter(_))));
    assert_eq!(set.index_near(0.031), 3);
}
