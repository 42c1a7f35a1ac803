use proptest::prelude::*;

use kdvlab::{acoustic_determinant, make_params, Grid, GridField, LabError, Preset};

proptest! {
    #[test]
    fn determinant_vanishes_at_frame_speed(
        e in 0.2f64..5.0, m in 0.2f64..5.0, ti in 0.0f64..5.0, te in 0.2f64..5.0, nb in 0.01f64..2.0
    ) {
        let p = make_params(e, m, ti, te, nb).unwrap();
        let scale = 1.0 + p.v() * p.kappa() * p.v() + p.ion_pressure() * p.kappa() + p.charge_to_mass();
        prop_assert!(acoustic_determinant(p.v(), &p).abs() <= 1e-14 * scale);
    }

    #[test]
    fn determinant_is_nonzero_off_root(shift in 0.05f64..1.0) {
        let p = Preset::Warm.params();
        prop_assert!(acoustic_determinant(p.v() + shift, &p).abs() > 0.0);
        prop_assert!(acoustic_determinant(p.v() - shift, &p).abs() > 0.0);
    }
}

#[test]
fn presets_match_their_descriptions() {
    let warm = Preset::Warm.params();
    assert_eq!(warm.t_i, 1.0);
    assert!((warm.poisson_coupling() - 1.0).abs() < 1e-15);
    let cold = Preset::Cold.params();
    assert_eq!(cold.ion_pressure(), 0.0);
    assert_eq!("warm".parse::<Preset>().unwrap(), Preset::Warm);
    assert!(matches!("hot".parse::<Preset>(), Err(LabError::Config(_))));
}

#[test]
fn grid_geometry() {
    let g = Grid::new(16, 8.0).unwrap();
    assert_eq!(g.spacing(), 0.5);
    assert_eq!(g.coordinates()[2], -3.0);
    let k = g.wavenumbers();
    assert_eq!(k[0], 0.0);
    assert!((k[1] - 2.0 * std::f64::consts::PI / 8.0).abs() < 1e-15);
    assert!(k[15] < 0.0);
    assert!(Grid::new(15, 8.0).is_err());
    assert!(Grid::new(16, 0.0).is_err());
}

#[test]
fn fields_reject_wrong_length_and_nan() {
    let g = Grid::new(8, 1.0).unwrap();
    assert!(matches!(GridField::new(&g, vec![0.0; 7]), Err(LabError::Shape(_))));
    assert!(GridField::new(&g, vec![f64::NAN; 8]).is_err());
    let blown = GridField::constant(&g, 1e300).scale(1e10);
    assert!(!blown.is_finite());
    assert!(blown.checked("test").is_err());
}
