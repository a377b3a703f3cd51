//! Loss terms against naive per-scalar references and finite differences.

mod common;

use bsann_core::losses::*;
use bsann_core::nn::{self, FilterBank, PoseInput};
use common::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn vectorised_losses_match_naive_loops(seed in any::<u64>(), speakers in 1usize..=3, points in 1usize..=2, bins in 2usize..=5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = grid_with_bins(bins);
        let atf = random_atf(&mut rng, points, speakers, &grid);
        let g = random_bank(&mut rng, speakers, &grid, 3.0);
        let t = random_targets(&mut rng, points, bins);
        let xt = random_xtc_targets(&mut rng, points, bins);
        let teacher = random_bank(&mut rng, speakers, &grid, 1.0);
        let w = LossWeights { kappa_min: 2.0, beta0: 0.3, g_max: 1.5, ..LossWeights::default() };

        prop_assert!(rel_close(loss_bright(&atf, &g, &t).unwrap(), naive_bright(&atf, &g, &t), 1e-10));
        prop_assert!(rel_close(loss_dark(&atf, &g).unwrap(), naive_dark(&atf, &g), 1e-10));
        prop_assert!(rel_close(loss_gain(&g, w.g_max), naive_gain(&g, w.g_max), 1e-10));
        let e = energies(&atf, &g);
        prop_assert!(rel_close(xtc_off_loss(&atf, &g, w.epsilon).unwrap(), naive_off_with(&atf, &g, w.epsilon, &e), 1e-10));
        prop_assert!(rel_close(xtc_diag_loss(&atf, &g, &xt).unwrap(), naive_diag(&atf, &g, &xt), 1e-10));
        prop_assert!(rel_close(xtc_reg_loss(&atf, &g, &w).unwrap(), naive_reg(&atf, &g, &w), 1e-8));
        prop_assert!(rel_close(loss_teacher(&g, &teacher).unwrap(), naive_teacher(&g, &teacher), 1e-10));
        let cfg = random_compactness(&mut rng, grid.fft_size);
        prop_assert!(rel_close(loss_compact(&g, &cfg).unwrap(), naive_compact(&g, &cfg), 1e-10));

        let paper = LossWeights::default();
        let (psz, _) = psz_objective(&atf, &g, &t, &cfg, &paper).unwrap();
        prop_assert!(rel_close(psz.total, naive_psz(&atf, &g, &t, &cfg, &paper), 1e-10));
        let (total, _) = total_objective(&atf, &g, &t, &xt, &teacher, &cfg, &paper).unwrap();
        prop_assert!(rel_close(total.total, naive_total(&atf, &g, &t, &xt, &teacher, &cfg, &paper), 1e-10));
    }

    #[test]
    fn off_loss_is_scale_invariant(seed in any::<u64>(), re in 0.1f64..20.0, im in -20.0f64..20.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = grid_with_bins(4);
        let atf = random_atf(&mut rng, 2, 3, &grid);
        let g = random_bank(&mut rng, 3, &grid, 1.0);
        let scaled = g.scaled(C::new(re, im));
        let a = xtc_off_loss(&atf, &g, 0.0).unwrap();
        let b = xtc_off_loss(&atf, &scaled, 0.0).unwrap();
        prop_assert!(rel_close(a, b, 1e-9));
    }

    #[test]
    fn losses_are_nonnegative(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = grid_with_bins(5);
        let atf = random_atf(&mut rng, 2, 2, &grid);
        let g = random_bank(&mut rng, 2, &grid, 5.0);
        let w = LossWeights::default();
        let cfg = CompactnessConfig { filter_len: 8, window: vec![0.0, 0.0, 0.0, 0.5, 1.0, 1.0, 1.0, 1.0], bandpass_fir: vec![0.25, 0.5, 0.25] };
        prop_assert!(loss_bright(&atf, &g, &random_targets(&mut rng, 2, 5)).unwrap() >= 0.0);
        prop_assert!(loss_dark(&atf, &g).unwrap() >= 0.0);
        prop_assert!(loss_gain(&g, w.g_max) >= 0.0);
        prop_assert!(loss_compact(&g, &cfg).unwrap() >= 0.0);
        prop_assert!(xtc_off_loss(&atf, &g, w.epsilon).unwrap() >= 0.0);
        prop_assert!(xtc_diag_loss(&atf, &g, &random_xtc_targets(&mut rng, 2, 5)).unwrap() >= 0.0);
        prop_assert!(xtc_reg_loss(&atf, &g, &w).unwrap() >= 0.0);
    }
}

#[test]
fn every_term_gradient_matches_finite_differences() {
    let (atf, g, t, xt, teacher, cfg) = toy();
    let w = LossWeights { kappa_min: 1.5, beta0: 0.2, g_max: 1.0, ..LossWeights::default() };
    let h = 1e-6;

    let (_, a) = loss_bright_grad(&atf, &g, &t).unwrap();
    assert_grad_close("bright", &a, &fd_bank(&g, &|b| loss_bright(&atf, b, &t).unwrap(), h));
    let (_, a) = loss_dark_grad(&atf, &g).unwrap();
    assert_grad_close("dark", &a, &fd_bank(&g, &|b| loss_dark(&atf, b).unwrap(), h));
    let (_, a) = loss_gain_grad(&g, w.g_max);
    assert_grad_close("gain", &a, &fd_bank(&g, &|b| loss_gain(b, w.g_max), h));
    let (_, a) = loss_compact_grad(&g, &cfg).unwrap();
    assert_grad_close("compact", &a, &fd_bank(&g, &|b| loss_compact(b, &cfg).unwrap(), h));
    let (_, a) = xtc_reg_loss_grad(&atf, &g, &w).unwrap();
    assert_grad_close("reg", &a, &fd_bank(&g, &|b| xtc_reg_loss(&atf, b, &w).unwrap(), h));
    let (_, a) = loss_teacher_grad(&g, &teacher).unwrap();
    assert_grad_close("teacher", &a, &fd_bank(&g, &|b| loss_teacher(b, &teacher).unwrap(), h));

    let field = radiate(&atf, &g).unwrap();
    let (_, gz) = xtc_diag_term(&field, &xt).unwrap();
    assert_grad_close("diag", &field_adjoint(&atf, &gz), &fd_bank(&g, &|b| xtc_diag_loss(&atf, b, &xt).unwrap(), h));

    // The energy weight is a constant in the gradient: hold it at its current value.
    let e = energies(&atf, &g);
    let (_, gz) = xtc_off_term(&field, w.epsilon).unwrap();
    assert_grad_close("off", &field_adjoint(&atf, &gz), &fd_bank(&g, &|b| naive_off_with(&atf, b, w.epsilon, &e), h));
}

#[test]
fn stop_gradient_energy_differs_from_full_derivative() {
    let (atf, g, ..) = toy();
    let field = radiate(&atf, &g).unwrap();
    let (_, gz) = xtc_off_term(&field, 1e-8).unwrap();
    let analytic = field_adjoint(&atf, &gz);
    let through_e = fd_bank(&g, &|b| xtc_off_loss(&atf, b, 1e-8).unwrap(), 1e-6);
    let gap = analytic.values.iter().zip(&through_e.values).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
    assert!(gap > 1e-6, "energy weight leaked no gradient difference: {gap}");
}

#[test]
fn combined_objectives_match_finite_differences() {
    let (atf, g, t, xt, teacher, cfg) = toy();
    let w = LossWeights { kappa_min: 1.5, beta0: 0.2, g_max: 1.0, ..LossWeights::default() };
    let (_, a) = psz_objective(&atf, &g, &t, &cfg, &w).unwrap();
    let num = fd_bank(&g, &|b| psz_objective(&atf, b, &t, &cfg, &w).unwrap().0.total, 1e-6);
    assert_grad_close("psz", &a, &num);

    let e = energies(&atf, &g);
    let (_, a) = total_objective(&atf, &g, &t, &xt, &teacher, &cfg, &w).unwrap();
    let frozen = |b: &FilterBank| {
        let (terms, _) = total_objective(&atf, b, &t, &xt, &teacher, &cfg, &w).unwrap();
        let off = naive_off_with(&atf, b, w.epsilon, &e);
        terms.total + w.lambda_xtc * w.lambda_off * (off - terms.off)
    };
    assert_grad_close("total", &a, &fd_bank(&g, &frozen, 1e-6));
}

#[test]
fn network_gradient_of_squared_norm() {
    let grid = grid_with_bins(4);
    let params = tiny_net(&grid);
    let pose = PoseInput { listener1_xy_m: [-0.42, 1.1], listener2_xy_m: [0.61, 0.93] };
    let sq = |b: &FilterBank| b.values.iter().map(|z| z.norm_sqr()).sum::<f64>();
    let (_, grads) = nn::backward(&params, &pose, |b| Ok((sq(b), b.scaled(C::new(2.0, 0.0))))).unwrap();
    assert_vec_close("squared norm", &flatten(&grads), &fd_params(&params, &pose, &sq));
}

#[test]
fn network_gradient_of_every_loss_term() {
    let (atf, _, t, xt, teacher, cfg) = toy();
    let grid = atf.grid;
    let params = tiny_net(&grid);
    let pose = PoseInput { listener1_xy_m: [-0.55, 0.95], listener2_xy_m: [0.4, 1.2] };
    let w = LossWeights { kappa_min: 1.5, beta0: 0.2, g_max: 0.5, ..LossWeights::default() };
    let g0 = nn::forward(&params, &pose).unwrap();
    let e = energies(&atf, &g0);

    type Term<'a> = (&'a str, Box<dyn Fn(&FilterBank) -> (f64, FilterBank) + 'a>, Box<dyn Fn(&FilterBank) -> f64 + 'a>);
    let terms: Vec<Term> = vec![
        ("bright", Box::new(|b| loss_bright_grad(&atf, b, &t).unwrap()), Box::new(|b| loss_bright(&atf, b, &t).unwrap())),
        ("dark", Box::new(|b| loss_dark_grad(&atf, b).unwrap()), Box::new(|b| loss_dark(&atf, b).unwrap())),
        ("gain", Box::new(|b| loss_gain_grad(b, w.g_max)), Box::new(|b| loss_gain(b, w.g_max))),
        ("compact", Box::new(|b| loss_compact_grad(b, &cfg).unwrap()), Box::new(|b| loss_compact(b, &cfg).unwrap())),
        ("reg", Box::new(|b| xtc_reg_loss_grad(&atf, b, &w).unwrap()), Box::new(|b| xtc_reg_loss(&atf, b, &w).unwrap())),
        ("teacher", Box::new(|b| loss_teacher_grad(b, &teacher).unwrap()), Box::new(|b| loss_teacher(b, &teacher).unwrap())),
        (
            "diag",
            Box::new(|b| {
                let f = radiate(&atf, b).unwrap();
                let (v, gz) = xtc_diag_term(&f, &xt).unwrap();
                (v, field_adjoint(&atf, &gz))
            }),
            Box::new(|b| xtc_diag_loss(&atf, b, &xt).unwrap()),
        ),
        (
            "off",
            Box::new(|b| {
                let f = radiate(&atf, b).unwrap();
                let (v, gz) = xtc_off_term(&f, w.epsilon).unwrap();
                (v, field_adjoint(&atf, &gz))
            }),
            Box::new(|b| naive_off_with(&atf, b, w.epsilon, &e)),
        ),
    ];
    for (name, grad_fn, value_fn) in &terms {
        let (_, grads) = nn::backward(&params, &pose, |b| Ok(grad_fn(b))).unwrap();
        assert_vec_close(name, &flatten(&grads), &fd_params(&params, &pose, value_fn.as_ref()));
    }
}
