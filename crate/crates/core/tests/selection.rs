mod common;

use common::{random_data, response_scale, tau};
use ndarray::{arr1, Array2};
use qdlag::admm::{admm_fit, AdmmConfig};
use qdlag::selection::{
    fit_estimator, select_cv, select_holdout, validation_score, Estimator, TuningGrid,
};
use qdlag::sim::{gen_dataset, Model, SimConfig};
use qdlag::unimodal::DescentConfig;
use qdlag::{CovariateCoefficients, LagCoefficients, PenaltyConfig, RegressionData, Shape};

#[test]
fn validation_score_examples() {
    let data = RegressionData::from_flat(
        Array2::zeros((1, 3)),
        1,
        3,
        Array2::zeros((1, 0)),
        arr1(&[1.0]),
        None,
    )
    .unwrap();
    let cfg = PenaltyConfig::new(0.0, 1.0, Shape::None).unwrap();
    let mut fit = admm_fit(&data, tau(0.25), &cfg, None, &AdmmConfig::default(), None).unwrap();
    fit.beta = LagCoefficients::zeros(1, 3);
    fit.gamma = CovariateCoefficients::zeros(0);
    assert_eq!(validation_score(&fit, &data, tau(0.25)).unwrap(), 0.25);
    let perfect = data.with_response(arr1(&[0.0])).unwrap();
    assert_eq!(validation_score(&fit, &perfect, tau(0.25)).unwrap(), 0.0);
}

#[test]
fn single_cell_cv_refits_the_direct_fit() {
    let data = random_data(61, 60, 2, 6, 2, true);
    let grid = TuningGrid::new(vec![0.2], vec![0.05]).unwrap();
    let config = DescentConfig::default();
    for est in [Estimator::Concave, Estimator::Unimodal] {
        let sel = select_cv(&data, tau(0.5), &grid, 3, est, &config).unwrap();
        assert_eq!(sel.best, (0.2, 0.05));
        let direct = fit_estimator(&data, tau(0.5), est, 0.2, 0.05, &config, None).unwrap();
        assert_eq!(sel.refit, direct);
    }
}

#[test]
fn duplicate_grid_values_are_fitted_once() {
    let data = random_data(62, 50, 1, 5, 1, true);
    let config = DescentConfig::default();
    let a = select_cv(
        &data,
        tau(0.5),
        &TuningGrid::new(vec![0.1, 0.1, 1.0], vec![0.1, 0.1]).unwrap(),
        3,
        Estimator::Concave,
        &config,
    )
    .unwrap();
    let b = select_cv(
        &data,
        tau(0.5),
        &TuningGrid::new(vec![1.0, 0.1], vec![0.1]).unwrap(),
        3,
        Estimator::Concave,
        &config,
    )
    .unwrap();
    assert_eq!(a.score_table.dim(), (2, 1));
    assert_eq!(a, b);
}

#[test]
fn cv_is_reproducible_and_seed_dependent() {
    let data = random_data(63, 60, 2, 5, 1, true);
    let grid = TuningGrid::new(vec![0.0, 0.1, 1.0], vec![0.01, 1.0]).unwrap();
    let config = DescentConfig {
        seed: 4,
        ..DescentConfig::default()
    };
    let a = select_cv(&data, tau(0.3), &grid, 4, Estimator::Unimodal, &config).unwrap();
    let b = select_cv(&data, tau(0.3), &grid, 4, Estimator::Unimodal, &config).unwrap();
    assert_eq!(a, b);
    assert!(a.score_table.iter().all(|v| v.is_finite()));
    let min = a.score_table.iter().copied().fold(f64::INFINITY, f64::min);
    assert_eq!(a.score_table[a.best_index], min);
    let other = select_cv(
        &data,
        tau(0.3),
        &grid,
        4,
        Estimator::Unimodal,
        &DescentConfig { seed: 5, ..config },
    )
    .unwrap();
    assert_ne!(a.score_table, other.score_table);
}

#[test]
fn too_many_folds_is_an_error() {
    let data = random_data(64, 4, 1, 3, 1, true);
    let grid = TuningGrid::new(vec![0.1], vec![0.1]).unwrap();
    assert!(select_cv(
        &data,
        tau(0.5),
        &grid,
        5,
        Estimator::Concave,
        &DescentConfig::default()
    )
    .is_err());
}

#[test]
fn holdout_on_training_data_scores_in_sample_loss() {
    let data = random_data(65, 60, 2, 5, 1, true);
    let grid = TuningGrid::new(vec![0.0, 0.5], vec![0.01, 0.5]).unwrap();
    let config = DescentConfig::default();
    let sel = select_holdout(&data, &data, tau(0.5), &grid, Estimator::Concave, &config).unwrap();
    for (i, &a) in grid.lambda1_values().iter().enumerate() {
        for (j, &b) in grid.lambda2_values().iter().enumerate() {
            let cold =
                fit_estimator(&data, tau(0.5), Estimator::Concave, a, b, &config, None).unwrap();
            let loss = validation_score(&cold, &data, tau(0.5)).unwrap();
            assert!(
                (sel.score_table[[i, j]] - loss).abs() <= 1e-3 * loss,
                "{} vs {loss}",
                sel.score_table[[i, j]]
            );
        }
    }
    let min = sel
        .score_table
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    assert_eq!(sel.score_table[sel.best_index], min);
}

#[test]
fn holdout_rejects_mismatched_validation() {
    let train = random_data(66, 30, 1, 5, 1, true);
    let val = random_data(67, 30, 1, 6, 1, true);
    let grid = TuningGrid::new(vec![0.1], vec![0.1]).unwrap();
    let err = select_holdout(
        &train,
        &val,
        tau(0.5),
        &grid,
        Estimator::Concave,
        &DescentConfig::default(),
    )
    .unwrap_err();
    assert!(err.to_string().contains('6'), "{err}");
}

#[test]
fn elastic_net_grid_selects_a_valid_cell() {
    let train = random_data(68, 80, 2, 5, 1, true);
    let val = random_data(69, 80, 2, 5, 1, true);
    let grid = TuningGrid::elastic_net(vec![0.01, 0.1, 1.0], vec![0.0, 0.5, 1.0]).unwrap();
    let sel = select_holdout(
        &train,
        &val,
        tau(0.5),
        &grid,
        Estimator::ElasticNet,
        &DescentConfig::default(),
    )
    .unwrap();
    assert!(sel.score_table.iter().all(|v| v.is_finite()));
    let (l, a) = sel.best;
    let direct = fit_estimator(
        &train,
        tau(0.5),
        Estimator::ElasticNet,
        l,
        a,
        &DescentConfig::default(),
        None,
    )
    .unwrap();
    assert_eq!(sel.refit, direct);
}

#[test]
#[ignore = "slow simulation oracle"]
fn cross_validation_engages_the_shape_penalty_on_unimodal_truth() {
    let q = tau(0.25);
    let mut engaged = 0;
    for seed in 0..50 {
        let cfg = SimConfig {
            n: 500,
            model: Model::A,
            tau: q,
            seed,
            ..SimConfig::default()
        };
        let data = gen_dataset(&cfg).unwrap().fitting_data();
        let inv = 1.0 / response_scale(&data, q);
        let grid = TuningGrid::new(
            vec![0.0, 0.01, 0.1, 1.0, 10.0, 100.0],
            [0.01, 0.1, 1.0, 10.0, 100.0]
                .iter()
                .map(|v| v * inv)
                .collect(),
        )
        .unwrap();
        let sel = select_cv(
            &data,
            q,
            &grid,
            5,
            Estimator::Unimodal,
            &DescentConfig::default(),
        )
        .unwrap();
        engaged += (sel.best.0 > 0.0) as usize;
    }
    assert!(engaged >= 40, "{engaged}/50");
}
