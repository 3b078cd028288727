use ulmv_core::data::RoiThresholds;
use ulmv_web::{impulse_response, make_tile, onecycle_schedule, FORGET_BOOST};

#[test]
fn impulse_decays_geometrically() {
    let (decay, step) = (0.5, 0.2);
    let y = impulse_response(40, decay, step, 40, false).unwrap();
    let ratio = (-decay * step).exp();
    for (t, v) in y.iter().enumerate() {
        let want = step * ratio.powi(t as i32);
        assert!((v - want).abs() < 1e-15, "t={t}");
    }
    let p = impulse_response(40, decay, step, 40, true).unwrap();
    assert!(y.iter().zip(&p).all(|(a, b)| (a - b).abs() < 1e-12));
}

#[test]
fn forgetting_step_collapses_state() {
    let y = impulse_response(30, 1.0, 0.1, 10, true).unwrap();
    let before = y[9];
    let after = y[10];
    assert!((after / before - (-0.1 * FORGET_BOOST).exp()).abs() < 1e-12);
    assert!(impulse_response(0, 1.0, 0.1, 0, true).is_err());
    assert!(impulse_response(5, 1.0, 0.0, 0, true).is_err());
}

#[test]
fn schedule_curve_endpoints() {
    let lr = onecycle_schedule(100, 0.05, 0.3, 25.0, 1000.0).unwrap();
    assert_eq!(lr.len(), 100);
    assert_eq!(lr[0], 0.002);
    assert_eq!(lr[30], 0.05);
    assert!((lr[99] - 0.05 / 1000.0).abs() < 1e-15);
    assert!(onecycle_schedule(100, 0.05, 1.5, 25.0, 1000.0).is_err());
}

#[test]
fn tiles_report_roi_verdicts() {
    let t = make_tile(1, 3, 48, RoiThresholds::default()).unwrap();
    assert_eq!(t.rgba().len(), 48 * 48 * 4);
    assert_eq!(t.mask().len(), t.rgba().len());
    assert!((0.3..0.7).contains(&t.tissue_fraction()));
    assert!(t.keep());
    let strict = RoiThresholds { min_tissue: 0.9, ..RoiThresholds::default() };
    assert!(!make_tile(1, 3, 48, strict).unwrap().keep());
    let pair = make_tile(0, 3, 48, RoiThresholds::default()).unwrap();
    assert_eq!(pair.tissue_fraction(), t.tissue_fraction());
    assert!(make_tile(2, 3, 48, RoiThresholds::default()).is_err());
}
