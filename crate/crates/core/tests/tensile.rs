use cgrf::apps::tensile::*;
use cgrf::cgrf::Query;
use cgrf::geometry::{DogBone, Point};
use cgrf::gp::{condition, mspe, Moments};

const H: [f64; 4] = [4e4, 1.0, 4.0, 5.0];

#[test]
fn cgrf_holds_both_ends_whatever_the_noise() {
    let bone = DogBone::default();
    for noise in [1e-4, 1e-2] {
        let cfg = TensileConfig { noise_sd: noise, design: Design::Low, ..Default::default() };
        let (train, _) = simulate(&cfg, 7, 0).unwrap();
        let post = condition(prior_for(PriorKind::Cgrf, &bone, &H).unwrap(), &train).unwrap();
        for &t in TEST_TIMES.iter().chain(&TRAIN_TIMES) {
            for x1 in [-3.5, 0.0, 2.2] {
                let qs = vec![Query::value(Point::from([t, x1, -10.0])), Query::value(Point::from([t, x1, 10.0]))];
                let m = post.mean(&qs).unwrap();
                assert!(m[0].abs() < 1e-6, "bottom {t} {x1}: {}", m[0]);
                assert!((m[1] - 0.005 * t).abs() < 1e-6, "top {t} {x1}: {}", m[1]);
            }
        }
    }
}

#[test]
fn noiseless_interpolation_of_the_test_set() {
    let cfg = TensileConfig { noise_sd: 0.0, design: Design::Medium, ..Default::default() };
    let test = exact_data(cfg.test_points(), 0.0).unwrap();
    for prior in [PriorKind::Cgrf, PriorKind::Grf] {
        let post = condition(prior_for(prior, &cfg.bone, &H).unwrap(), &test).unwrap();
        let e = mspe(&post, &test).unwrap();
        assert!(e < 1e-12, "{prior:?}: {e}");
    }
}

#[test]
fn cgrf_beats_grf_on_dense_low_noise() {
    let cfg = TensileConfig { noise_sd: 1e-4, design: Design::Dense, ..Default::default() };
    let e = tensile_experiment(&cfg, 6, 0).unwrap();
    assert!(e.rows.iter().all(|r| r.error.is_none()));
    assert!(e.median_log_mspe_cgrf < e.median_log_mspe_grf, "{} vs {}", e.median_log_mspe_cgrf, e.median_log_mspe_grf);
}

#[test]
fn experiment_is_reproducible() {
    let cfg = TensileConfig { design: Design::Sparse, noise_sd: 1e-3, ..Default::default() };
    let a = tensile_experiment(&cfg, 3, 11).unwrap();
    let b = tensile_experiment(&cfg, 3, 11).unwrap();
    let la: Vec<u64> = a.rows.iter().map(|r| r.log_mspe.to_bits()).collect();
    let lb: Vec<u64> = b.rows.iter().map(|r| r.log_mspe.to_bits()).collect();
    assert_eq!(la, lb);
}

#[test]
fn fixed_hyperparameters_skip_tuning() {
    let cfg = TensileConfig { hyperparameters: Some(H), design: Design::Low, ..Default::default() };
    let (train, val) = simulate(&cfg, 1, 0).unwrap();
    let f = fit(&cfg, &train, &val).unwrap();
    assert_eq!(f.hyperparameters, H);
    assert!(f.validation_mspe.is_none());
    assert!(f.test_mspe.is_finite() && f.test_mspe >= 0.0);
}
