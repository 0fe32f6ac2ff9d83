use qpma::averaging::{candidate_specs, loo_predictions, SplineOptions};
use qpma::baselines::{fit_qlrm, fit_qrcm_linear};
use qpma::simulation::gen_example1;
use qpma::solver::default_smoothing;
use qpma::tau_basis::tau_grid;
use qpma::{build_design, fit, fit_loo, CandidateModel, ColumnOrder, Dataset, FitConfig, TauBasis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[test]
fn warm_and_cold_leave_one_out_fits_agree() {
    let data = gen_example1(50, 1, 0.5, 0.8, 5).unwrap().train;
    let specs = candidate_specs(&data, &SplineOptions::default()).unwrap();
    let basis = TauBasis::Gaussian;
    let cfg = FitConfig::default();
    for (s, spec) in specs.iter().enumerate().step_by(2) {
        let design = build_design(&data, s, spec).unwrap();
        let full = fit(&design, &data.y, &basis, &cfg).unwrap();
        for i in [0, 17, 49] {
            let cold = fit_loo(&design, &data.y, &basis, &cfg, i).unwrap();
            let warm_cfg = FitConfig { warm_start: Some(full.theta.clone()), ..cfg.clone() };
            let warm = fit_loo(&design, &data.y, &basis, &warm_cfg, i).unwrap();
            assert!(cold.converged && warm.converged);
            assert_eq!(cold.smoothing, warm.smoothing);
            let gap = (cold.smoothed_loss - warm.smoothed_loss).abs() / cold.smoothed_loss.abs().max(1.0);
            assert!(gap <= 10.0 * cfg.tol, "candidate {s}, row {i}: relative gap {gap:e}");
        }
    }
}

#[test]
fn leave_one_out_tensor_matches_direct_refits() {
    let data = gen_example1(40, 1, 1.0, 0.7, 6).unwrap().train;
    let specs = candidate_specs(&data, &SplineOptions::default()).unwrap();
    let basis = TauBasis::Gaussian;
    let cfg = FitConfig::default();
    let grid = tau_grid(9).unwrap();
    let loo = loo_predictions(&data, &specs, &basis, &cfg, &grid, None).unwrap();

    // refit from scratch on the reduced data with the full-sample objective
    let direct_cfg =
        FitConfig { grid_size: Some(data.n()), smoothing: Some(default_smoothing(&data.y)), ..cfg.clone() };
    for s in [0, 3, 5] {
        for i in [0, 21, 39] {
            let keep: Vec<usize> = (0..data.n()).filter(|&r| r != i).collect();
            let reduced = data.subset(&keep);
            let design = build_design(&reduced, s, &specs[s]).unwrap();
            let res = fit(&design, &reduced.y, &basis, &direct_cfg).unwrap();
            let model = CandidateModel::new(
                specs[s].clone(),
                basis.clone(),
                ColumnOrder::for_candidate(s, data.width()),
                res.theta,
            )
            .unwrap();
            for (k, &tau) in grid.iter().enumerate() {
                let direct = model.predict_quantile(data.row(i), tau).unwrap();
                let got = loo.get(i, k, s);
                assert!((direct - got).abs() <= 1e-8, "s={s} i={i} k={k}: {direct} vs {got}");
            }
        }
    }
}

#[test]
fn single_candidate_tensor_is_the_fit_loo_slice() {
    let full = gen_example1(30, 1, 0.0, 0.8, 8).unwrap().train;
    let x: Vec<f64> = (0..full.n()).map(|i| full.row(i)[2]).collect();
    let data = Dataset::new(full.y.clone(), x, 1, 0).unwrap();
    let specs = candidate_specs(&data, &SplineOptions::default()).unwrap();
    let basis = TauBasis::Mixed;
    let cfg = FitConfig::default();
    let grid = tau_grid(5).unwrap();
    let loo = loo_predictions(&data, &specs, &basis, &cfg, &grid, None).unwrap();
    let design = build_design(&data, 0, &specs[0]).unwrap();
    for i in 0..data.n() {
        let res = fit_loo(&design, &data.y, &basis, &cfg, i).unwrap();
        let zt = res.theta.times_row(design.row(i));
        for (k, &tau) in grid.iter().enumerate() {
            let b = basis.eval(tau).unwrap();
            let want: f64 = zt.iter().zip(&b).map(|(a, c)| a * c).sum();
            assert_eq!(loo.get(i, k, 0), want);
        }
    }
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

#[test]
fn qlrm_median_with_binary_covariate_hits_group_medians() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..5 {
        let n = 202;
        let g: Vec<f64> = (0..n).map(|i| f64::from(i % 2 == 0)).collect();
        let y: Vec<f64> = g.iter().map(|&gi| 2.0 * gi + rng.sample::<f64, _>(StandardNormal)).collect();
        let data = Dataset::new(y.clone(), g.clone(), 1, 0).unwrap();
        let model = fit_qlrm(&data, &[0.5], &FitConfig::default()).unwrap();
        let mut y0: Vec<f64> = y.iter().zip(&g).filter(|(_, &gi)| gi == 0.0).map(|(v, _)| *v).collect();
        let mut y1: Vec<f64> = y.iter().zip(&g).filter(|(_, &gi)| gi == 1.0).map(|(v, _)| *v).collect();
        let (m0, m1) = (median(&mut y0), median(&mut y1));
        let beta = &model.coefficients[0];
        assert!((beta[0] - m0).abs() < 0.05, "{} vs {m0}", beta[0]);
        assert!((beta[0] + beta[1] - m1).abs() < 0.05, "{} vs {m1}", beta[0] + beta[1]);
    }
}

fn linear_location_data(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
    let y = x.iter().map(|xi| 1.0 + 2.0 * xi + rng.sample::<f64, _>(StandardNormal)).collect();
    Dataset::new(y, x, 1, 0).unwrap()
}

#[test]
fn qlrm_recovers_normal_upper_quantile() {
    let data = linear_location_data(5000, 13);
    let model = fit_qlrm(&data, &[0.5, 0.9], &FitConfig::default()).unwrap();
    let q90 = model.predict_quantile(&[0.0], 0.9).unwrap();
    assert!((q90 - (1.0 + 1.2816)).abs() < 0.08, "{q90}");
    let slope = model.coefficients[1][1];
    assert!((slope - 2.0).abs() < 0.15, "{slope}");
}

#[test]
fn qlrm_and_qrcm_agree_on_a_correct_linear_model() {
    // Sampling noise dominates the difference, so the tolerance is statistical.
    let data = linear_location_data(2000, 14);
    let taus = [0.25, 0.5, 0.75];
    let qlrm = fit_qlrm(&data, &taus, &FitConfig::default()).unwrap();
    let qrcm = fit_qrcm_linear(&data, &TauBasis::Gaussian, &FitConfig::default()).unwrap();
    for x in [0.1, 0.5, 0.9] {
        for tau in taus {
            let a = qlrm.predict_quantile(&[x], tau).unwrap();
            let b = qrcm.predict_quantile(&[x], tau).unwrap();
            assert!((a - b).abs() < 0.15, "x={x} tau={tau}: {a} vs {b}");
        }
    }
}
