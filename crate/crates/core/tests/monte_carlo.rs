//! Statistical checks of the noise models and engines against closed forms.

use banach_sa::diagnostics::{decay_fit, mean_square_increment, median, Estimate};
use banach_sa::noise::{
    pareto_tail_probability, truncate_global, truncate_pointwise, NoiseModel, ScaleRule,
};
use banach_sa::operators::linear_contraction;
use banach_sa::sa::{run_controlled, run_stochastic, ClippedNormGain};
use banach_sa::schedule::StepSchedule;
use banach_sa::space::{GridFunction, SpaceDescriptor};
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

fn endpoint(z: &GridFunction) -> f64 {
    z.node(z.m() - 1)[0]
}

fn close(est: Estimate, truth: f64, sds: f64) -> bool {
    (est.mean - truth).abs() <= sds * est.standard_error
}

#[test]
fn brownian_endpoint_is_normal() {
    let sigma = 1.7;
    let model = NoiseModel::gaussian(sigma, SpaceDescriptor::sup(65, 1).unwrap()).unwrap();
    let mut xs: Vec<f64> = (0..20_000)
        .map(|k| endpoint(&model.sample(k, 11)))
        .collect();
    let sq = Estimate::from_samples(&xs.iter().map(|x| x * x).collect::<Vec<_>>());
    assert!(close(sq, sigma * sigma, 4.0), "{sq:?}");

    xs.sort_by(f64::total_cmp);
    let normal = Normal::new(0.0, sigma).unwrap();
    let n = xs.len() as f64;
    let ks = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = normal.cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max);
    // 1% critical value of the Kolmogorov statistic.
    assert!(ks * n.sqrt() < 1.63, "KS statistic {ks}");
}

#[test]
fn martingale_endpoint_has_unit_energy() {
    for d in [1, 3] {
        let sigma = 1.3;
        let model = NoiseModel::martingale(sigma, SpaceDescriptor::sup(41, d).unwrap()).unwrap();
        let draws: Vec<GridFunction> = (0..20_000).map(|k| model.sample(k, 12)).collect();
        let last = |z: &GridFunction| z.node(z.m() - 1).to_vec();
        let energy = Estimate::from_samples(
            &draws
                .iter()
                .map(|z| last(z).iter().map(|x| x * x).sum())
                .collect::<Vec<f64>>(),
        );
        assert!(close(energy, sigma * sigma, 4.0), "d = {d}: {energy:?}");
        let first = Estimate::from_samples(&draws.iter().map(|z| last(z)[0]).collect::<Vec<_>>());
        assert!(close(first, 0.0, 4.0), "d = {d}: {first:?}");
        assert!(draws.iter().all(|z| z.node(0).iter().all(|&x| x == 0.0)));
    }
}

#[test]
fn calibrated_pointwise_noise_has_truncated_energy_n() {
    let schedule = StepSchedule::log_harmonic();
    let space = SpaceDescriptor::lp(2.0, 33, 1).unwrap();
    let model = NoiseModel::heavy_tailed_pointwise(
        1.5,
        ScaleRule::Calibrated {
            schedule: schedule.clone(),
        },
        space,
    )
    .unwrap();
    for n in [10usize, 100] {
        let alpha = schedule.alpha(n);
        let xs: Vec<f64> = (0..10_000u64)
            .into_par_iter()
            .map(|seed| {
                let z = model.sample(n, seed);
                let split = truncate_pointwise(&z, alpha, &space.zeros()).unwrap();
                space.norm(&split.truncated).powi(2)
            })
            .collect();
        let est = Estimate::from_samples(&xs);
        assert!(close(est, n as f64, 3.0), "n = {n}: {est:?}");
    }
}

#[test]
fn global_tail_probability_matches_pareto() {
    let space = SpaceDescriptor::lp(1.5, 33, 2).unwrap();
    let (tail, scale) = (1.3, 0.4);
    let model =
        NoiseModel::heavy_tailed_global(tail, ScaleRule::Fixed { scale, growth: 0.0 }, space)
            .unwrap();
    for alpha in [0.05, 0.2, 0.6] {
        let xs: Vec<f64> = (0..40_000u64)
            .map(|seed| {
                let z = model.sample(3, seed);
                let over = !truncate_global(&z, alpha, &space.zeros(), &space)
                    .unwrap()
                    .hat
                    .is_zero();
                over as u8 as f64
            })
            .collect();
        let est = Estimate::from_samples(&xs);
        let truth = pareto_tail_probability(tail, scale, 1.0 / alpha);
        assert!(
            (est.mean - truth).abs() <= 4.0 * est.standard_error + 1e-3,
            "alpha = {alpha}: {est:?} vs {truth}"
        );
    }
}

#[test]
fn noise_increment_energy_scales_with_step_squares() {
    // Independent Brownian paths add to a Brownian path, so the constant is E||Z||^2.
    let space = SpaceDescriptor::sup(33, 1).unwrap();
    let model = NoiseModel::gaussian(1.0, space).unwrap();
    let schedule = StepSchedule::power_law(1.0, 10.0, 1.0).unwrap();
    let k = Estimate::from_samples(
        &(0..20_000)
            .map(|i| space.norm(&model.sample(i, 99)).powi(2))
            .collect::<Vec<_>>(),
    );
    for (m, n) in [(0, 20), (50, 400)] {
        let sq: f64 = (m..=n).map(|j| schedule.alpha(j).powi(2)).sum();
        let inc = mean_square_increment(&model, &schedule, m, n, 4000, 5).unwrap();
        let se = (inc.standard_error.powi(2) + (sq * k.standard_error).powi(2)).sqrt();
        assert!(
            (inc.mean - k.mean * sq).abs() <= 4.0 * se,
            "({m}, {n}): {inc:?} vs {}",
            k.mean * sq
        );
    }
}

#[test]
fn gaussian_median_error_decays_like_root_step() {
    let space = SpaceDescriptor::sup(33, 1).unwrap();
    let p = linear_contraction(0.5, space.zeros(), space).unwrap();
    let noise = NoiseModel::gaussian(1.0, space).unwrap();
    let schedule = StepSchedule::power_law(1.0, 10.0, 1.0).unwrap();
    let x0 = GridFunction::from_scalar_fn(33, 1, |_| 1.0).unwrap();
    let n = 20_000;
    let runs: Vec<Vec<f64>> = (0..24u64)
        .into_par_iter()
        .map(|s| {
            run_stochastic(&p, &noise, &schedule, &x0, n, s)
                .unwrap()
                .error_curve
        })
        .collect();
    let curve: Vec<f64> = (0..=n)
        .map(|k| median(&runs.iter().map(|r| r[k]).collect::<Vec<_>>()))
        .collect();
    let fit = decay_fit(&curve, 500).unwrap();
    assert!((-0.75..=-0.3).contains(&fit.rate), "{fit:?}");
}

#[test]
fn clipped_gain_run_stays_below_envelope() {
    let space = SpaceDescriptor::lp(2.0, 33, 2)
        .unwrap()
        .with_smoothness(2.0, 2.0)
        .unwrap();
    let target = GridFunction::from_scalar_fn(33, 2, |t| 0.3 * t).unwrap();
    let p = linear_contraction(0.4, target, space).unwrap();
    let noise = NoiseModel::heavy_tailed_global(
        1.5,
        ScaleRule::Fixed {
            scale: 0.2,
            growth: 0.0,
        },
        space,
    )
    .unwrap();
    let schedule = StepSchedule::power_law(1.0, 10.0, 1.0).unwrap();
    let run = run_controlled(
        &p,
        &noise,
        &schedule,
        &mut ClippedNormGain,
        1.0,
        &space.zeros(),
        20_000,
        4,
    )
    .unwrap();
    assert!(run
        .gain_curve
        .iter()
        .zip(&run.psi_curve)
        .all(|(g, psi)| g.abs() <= *psi));
    assert!(run.gain_curve.iter().all(|g| (0.0..=1.0).contains(g)));
    assert!(run.psi_curve.windows(2).all(|w| w[1] >= w[0]));
    assert!(
        run.final_error() < 0.2 * run.error_curve[0],
        "{}",
        run.final_error()
    );
}
