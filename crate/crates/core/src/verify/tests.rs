use super::*;
use crate::measures::Family;

fn seed() -> Seed {
    Seed::new(2024)
}

#[test]
fn tags_round_trip() {
    for r in RelationId::ALL {
        assert_eq!(r.tag().parse::<RelationId>().unwrap(), r);
        let json = serde_json::to_string(&r).unwrap();
        assert_eq!(json, format!("\"{}\"", r.tag()));
        assert_eq!(serde_json::from_str::<RelationId>(&json).unwrap(), r);
    }
    assert!("nope".parse::<RelationId>().is_err());
}

#[test]
fn section_formula_gaussian_plane() {
    let m = MeasureModel::gaussian(2).unwrap();
    let r = run_check(
        RelationId::SectionFormula,
        &m,
        &GridPoint::new(2).with_k(1),
        &Budget::quick(),
        seed(),
    )
    .unwrap();
    let want = (2.0 / std::f64::consts::PI).sqrt();
    assert!((r.lhs.as_ref().unwrap().value - want).abs() < 1e-12);
    assert!((r.rhs.as_ref().unwrap().value - want).abs() < 1e-12);
    assert_eq!(r.verdict, Verdict::Pass);
}

#[test]
fn projection_identity_is_tight() {
    let m = MeasureModel::cube(5).unwrap();
    let r = run_check(
        RelationId::ProjectionIdentity,
        &m,
        &GridPoint::new(5).with_k(2),
        &Budget::quick(),
        seed(),
    )
    .unwrap();
    assert_eq!(r.verdict, Verdict::Pass);
}

#[test]
fn reverse_inclusion_gaussian_constant() {
    let m = MeasureModel::gaussian(4).unwrap();
    let gp = GridPoint::new(4).with_p(1.0).with_q(2.0);
    let r = run_check(
        RelationId::ReverseInclusion,
        &m,
        &gp,
        &Budget::quick(),
        seed(),
    )
    .unwrap();
    let want = (std::f64::consts::PI / 2.0).sqrt() / 2.0;
    assert!((r.fitted_constant.unwrap() - want).abs() < 1e-12);
    assert!(
        (fit_constant(RelationId::ReverseInclusion, &[r])
            .unwrap()
            .constant
            - want)
            .abs()
            < 1e-12
    );
}

#[test]
fn fradelizi_multiplier_is_one_for_analytic_families() {
    for fam in [Family::Gaussian, Family::Cube, Family::ProductExponential] {
        let m = fam.build(4).unwrap();
        let r = run_check(
            RelationId::Fradelizi,
            &m,
            &GridPoint::new(4),
            &Budget::quick(),
            seed(),
        )
        .unwrap();
        assert_eq!(r.fitted_constant, Some(1.0), "{fam:?}");
        assert_eq!(r.verdict, Verdict::Pass);
    }
}

#[test]
fn good_marginals_gaussian_fraction_is_one() {
    let m = MeasureModel::gaussian(8).unwrap();
    let b = Budget {
        haar: 500,
        ..Budget::quick()
    };
    let r = run_check(
        RelationId::GoodMarginals,
        &m,
        &GridPoint::new(8).with_k(3),
        &b,
        seed(),
    )
    .unwrap();
    assert_eq!(r.fitted_constant, Some(1.0));
    assert_eq!(r.verdict, Verdict::Pass);
}

#[test]
fn dimension_must_match_grid_point() {
    let m = MeasureModel::gaussian(3).unwrap();
    let err = run_check(
        RelationId::Fradelizi,
        &m,
        &GridPoint::new(4),
        &Budget::quick(),
        seed(),
    )
    .unwrap_err();
    assert!(matches!(err, Error::DimensionMismatch { .. }));
}

#[test]
fn volume_relations_refuse_large_dimension() {
    let m = MeasureModel::cube(7).unwrap();
    let err = run_check(
        RelationId::LZnIdentity,
        &m,
        &GridPoint::new(7),
        &Budget::quick(),
        seed(),
    )
    .unwrap_err();
    assert!(matches!(err, Error::ScaleRefusal { .. }));
    assert!(default_points(RelationId::LZnIdentity, 7).is_empty());
}

#[test]
fn empty_grid_is_usage_error() {
    let err = run_grid(
        RelationId::IkWidth,
        &[],
        &[4],
        &Budget::quick(),
        seed(),
        None,
    )
    .unwrap_err();
    assert!(matches!(err, Error::Usage(_)));
    let spec: MeasureSpec = "gaussian".parse().unwrap();
    let err = run_grid(
        RelationId::IkWidth,
        &[spec],
        &[],
        &Budget::quick(),
        seed(),
        None,
    )
    .unwrap_err();
    assert!(matches!(err, Error::Usage(_)));
}

fn fake(relation: RelationId, n: usize, c: f64, verdict: Verdict) -> RelationReport {
    RelationReport {
        relation,
        measure_spec: "x".into(),
        grid_point: GridPoint::new(n),
        lhs: None,
        rhs: None,
        fitted_constant: Some(c),
        fitted_stderr: None,
        band: None,
        verdict,
        seed: seed(),
        notes: vec![],
        diagnostics: Default::default(),
    }
}

#[test]
fn fit_constant_orientations() {
    let two = [
        fake(RelationId::IkWidth, 4, 0.25, Verdict::Pass),
        fake(RelationId::IkWidth, 4, 3.0, Verdict::Pass),
        fake(RelationId::IkWidth, 4, 100.0, Verdict::Indeterminate),
    ];
    let f = fit_constant(RelationId::IkWidth, &two).unwrap();
    assert_eq!((f.constant, f.used, f.excluded), (4.0, 2, 1));
    let low = [
        fake(RelationId::VolumeLower, 4, 0.5, Verdict::Pass),
        fake(RelationId::VolumeLower, 5, 0.2, Verdict::Pass),
    ];
    assert_eq!(
        fit_constant(RelationId::VolumeLower, &low)
            .unwrap()
            .constant,
        0.2
    );
    let id = [
        fake(RelationId::SectionFormula, 4, 1.01, Verdict::Pass),
        fake(RelationId::SectionFormula, 4, 0.98, Verdict::Pass),
    ];
    assert_eq!(
        fit_constant(RelationId::SectionFormula, &id)
            .unwrap()
            .constant,
        0.98
    );
    assert!(fit_constant(RelationId::Fradelizi, &two).is_err());
}

#[test]
fn trend_slope_recovers_power_law() {
    let pts: Vec<(usize, f64)> = [2usize, 4, 8, 16]
        .iter()
        .map(|&n| (n, 3.0 * (n as f64).powf(0.5)))
        .collect();
    assert!((trend_slope(&pts).unwrap() - 0.5).abs() < 1e-12);
    assert!(trend_slope(&[(4, 1.0)]).is_none());
}

#[test]
fn every_relation_runs_on_a_shipped_family() {
    let b = Budget::quick();
    let m = MeasureModel::gaussian(4).unwrap();
    let cube = MeasureModel::cube(4).unwrap();
    for r in RelationId::ALL {
        let points = default_points(r, 4);
        assert!(!points.is_empty(), "{r}");
        for gp in &points {
            for model in [&m, &cube] {
                let rep = run_check(r, model, gp, &b, seed())
                    .unwrap_or_else(|e| panic!("{r} on {}: {e}", model.label()));
                assert_eq!(rep.relation, r);
            }
        }
    }
}

#[test]
fn grid_is_deterministic_and_ordered() {
    let specs: Vec<MeasureSpec> = vec!["gaussian".parse().unwrap(), "cube".parse().unwrap()];
    let b = Budget::quick();
    let a = run_grid(RelationId::IkWidth, &specs, &[4, 6], &b, seed(), None).unwrap();
    let again = run_grid(RelationId::IkWidth, &specs, &[4, 6], &b, seed(), None).unwrap();
    assert_eq!(
        serde_json::to_string(&a).unwrap(),
        serde_json::to_string(&again).unwrap()
    );
    let ns: Vec<usize> = a.reports.iter().map(|r| r.grid_point.n).collect();
    assert_eq!(ns, vec![4, 4, 4, 6, 6, 6, 6, 4, 4, 4, 6, 6, 6, 6]);
    assert!(a.summary.trend_slope.is_some());
}

#[test]
fn familywise_threshold() {
    assert_eq!(familywise_z(1), 3.0);
    assert!((familywise_z(2) - 3.205).abs() < 0.01);
    assert!(familywise_z(78) > familywise_z(6));
    assert!((familywise_z(78) - 4.1408).abs() < 1e-3);
    assert!((familywise_z(6) - 3.5089).abs() < 1e-3);
}
