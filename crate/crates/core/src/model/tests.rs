use super::*;
use crate::data::{gen_lotka_volterra, normalize, uniform_grid, Dataset};
use crate::library::build_polynomial_library;
use crate::mcmc::TargetDensity;
use crate::odeint::integrate;
use crate::priors::SpikeSlabSpec;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const LN_2PI: f64 = 1.8378770664093453;

fn lv_library(eps: f64) -> FunctionLibrary {
    let mut lib = build_polynomial_library(2, 2);
    lib.stab_eps = eps;
    lib
}

fn lv_xi(lib: &FunctionLibrary) -> CoefficientMatrix {
    let mut xi = CoefficientMatrix::zeros(lib);
    xi.values[(1, 0)] = 1.0;
    xi.values[(4, 0)] = -0.1;
    xi.values[(2, 1)] = -1.5;
    xi.values[(4, 1)] = 0.075;
    xi
}

fn small_lv_dataset() -> Dataset {
    let times = uniform_grid(0.0, 4.0, 5);
    gen_lotka_volterra(1.0, 0.1, 1.5, 0.075, [10.0, 5.0], &times).unwrap()
}

fn normal_model(lib: FunctionLibrary, prior: CoeffPrior) -> UqSindyModel {
    UqSindyModel {
        library: lib,
        coeff_prior: prior,
        x0_prior: vec![DistributionSpec::Lognormal { mu: 0.0, sigma: 1.0 }; 2],
        obs: ObservationModel {
            kind: ObservationKind::Normal,
            noise_prior: vec![DistributionSpec::Lognormal { mu: -1.0, sigma: 0.1 }; 2],
        },
        integrator: IntegratorConfig::default(),
    }
}

#[test]
fn log_likelihood_of_a_perfect_fit() {
    // Observations produced by the same integrator and coefficients give
    // exactly zero residuals.
    let lib = lv_library(0.0);
    let xi = lv_xi(&lib);
    let times = uniform_grid(0.0, 4.0, 7);
    let x0 = [10.0, 5.0];
    let traj = integrate(&lib, &xi, &x0, &times, &IntegratorConfig::default()).unwrap();
    let data = Dataset {
        times: times.clone(),
        observations: traj.states.clone(),
        labels: vec!["u".to_string(), "v".to_string()],
        scales: vec![1.0, 1.0],
    };
    let model = normal_model(lib, CoeffPrior::NormalReference);
    let ll = log_likelihood(&model, &data, &xi, &x0, &[1.0, 1.0]).unwrap();
    let want = -(7.0 * 2.0) * 0.5 * LN_2PI;
    assert!((ll - want).abs() < 1e-9, "{ll} vs {want}");
}

#[test]
fn lognormal_likelihood_is_normal_on_logs_minus_log_data() {
    let lib = lv_library(0.0);
    let xi = lv_xi(&lib);
    let data = small_lv_dataset();
    let x0 = [10.0, 5.0];
    let sigmas = [0.3, 0.4];

    let mut lognormal_model = normal_model(lib.clone(), CoeffPrior::NormalReference);
    lognormal_model.obs.kind = ObservationKind::Lognormal;
    let ll_lognormal =
        log_likelihood(&lognormal_model, &data, &xi, &x0, &sigmas).unwrap();

    // Oracle: the normal likelihood on hand-logged predictions and data.
    let traj = integrate(&lib, &xi, &x0, &data.times, &IntegratorConfig::default()).unwrap();
    let mut want = 0.0;
    for i in 0..data.n_samples() {
        for j in 0..2 {
            let y = data.observations[(i, j)];
            let s = y.ln() - traj.states[(i, j)].ln();
            want +=
                -sigmas[j].ln() - 0.5 * LN_2PI - 0.5 * s * s / (sigmas[j] * sigmas[j]) - y.ln();
        }
    }
    assert!(
        (ll_lognormal - want).abs() < 1e-9,
        "{ll_lognormal} vs {want}"
    );
}

#[test]
fn integration_failure_yields_negative_infinity() {
    let lib = lv_library(0.0);
    let mut model = normal_model(lib.clone(), CoeffPrior::NormalReference);
    model.integrator.max_steps = 200;
    let data = small_lv_dataset();
    // Explosive quadratic feedback blows up before t = 4.
    let mut xi = CoefficientMatrix::zeros(&lib);
    xi.values[(3, 0)] = 4.0;
    let ll = log_likelihood(&model, &data, &xi, &[10.0, 5.0], &[1.0, 1.0]).unwrap();
    assert_eq!(ll, f64::NEG_INFINITY);
}

#[test]
fn lognormal_prediction_must_stay_positive() {
    let lib = lv_library(0.0);
    let mut model = normal_model(lib.clone(), CoeffPrior::NormalReference);
    model.obs.kind = ObservationKind::Lognormal;
    let data = small_lv_dataset();
    // Strong constant drain pushes the trajectory through zero.
    let mut xi = CoefficientMatrix::zeros(&lib);
    xi.values[(0, 0)] = -20.0;
    let ll = log_likelihood(&model, &data, &xi, &[1.0, 5.0], &[0.3, 0.3]).unwrap();
    assert_eq!(ll, f64::NEG_INFINITY);
}

/// End-to-end gradient checks for every target family on a 5-point
/// Lotka-Volterra instance, against central finite differences of the
/// target's own log density at tight integrator tolerances.
#[test]
fn target_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let data = {
        let d = small_lv_dataset();
        normalize(&d).unwrap()
    };
    let tight = IntegratorConfig {
        rel_tol: 1e-10,
        abs_tol: 1e-12,
        ..Default::default()
    };

    let mut check = |target: &ModelTarget, indicators: &[u8], points: usize| {
        let dim = target.continuous_dim();
        for trial in 0..points {
            let theta = target.initial_position(&mut rng);
            let mut grad = vec![0.0; dim];
            let lp = target.log_density_grad(&theta, indicators, &mut grad);
            assert!(lp.is_finite(), "trial {trial} landed outside the support");
            let h = 1e-5;
            let mut fd = vec![0.0; dim];
            for i in 0..dim {
                let mut tp = theta.clone();
                let mut tm = theta.clone();
                tp[i] += h;
                tm[i] -= h;
                fd[i] = (target.log_density(&tp, indicators)
                    - target.log_density(&tm, indicators))
                    / (2.0 * h);
            }
            let err: f64 = grad
                .iter()
                .zip(&fd)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            let norm: f64 = fd.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(
                err / norm.max(1.0) < 1e-4,
                "trial {trial}: gradient error {err} against norm {norm}"
            );
        }
    };

    let mut model = normal_model(
        lv_library(1e-6),
        CoeffPrior::SpikeSlab(SpikeSlabSpec::new(6, 2)),
    );
    model.integrator = tight.clone();
    let target = build_target(&model, &data).unwrap();
    let mut indicators = vec![0u8; 12];
    indicators[1] = 1;
    indicators[4] = 1;
    indicators[8] = 1;
    check(&target, &indicators, 5);

    let mut model = normal_model(
        lv_library(1e-6),
        CoeffPrior::RegHorseshoe(crate::priors::RegHorseshoeSpec::new(6, 2)),
    );
    model.integrator = tight.clone();
    let target = build_target(&model, &data).unwrap();
    check(&target, &[], 5);

    let mut model = normal_model(lv_library(1e-6), CoeffPrior::Laplace { b: 1.0 });
    model.integrator = tight;
    let target = build_target(&model, &data).unwrap();
    check(&target, &[], 5);
}

#[test]
fn normal_reference_gradient_at_origin_is_the_likelihood_gradient() {
    let data = normalize(&small_lv_dataset()).unwrap();
    let mut model = normal_model(lv_library(1e-6), CoeffPrior::NormalReference);
    model.integrator = IntegratorConfig {
        rel_tol: 1e-10,
        abs_tol: 1e-12,
        ..Default::default()
    };
    let target = build_target(&model, &data).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut theta = target.initial_position(&mut rng);
    for v in theta.iter_mut().take(12) {
        *v = 0.0;
    }
    let mut grad = vec![0.0; theta.len()];
    target.log_density_grad(&theta, &[], &mut grad);

    // The likelihood-only gradient by finite differences of log_likelihood.
    let x0 = [
        model.x0_prior[0].constrain(theta[12]),
        model.x0_prior[1].constrain(theta[13]),
    ];
    let sigmas = [
        model.obs.noise_prior[0].constrain(theta[14]),
        model.obs.noise_prior[1].constrain(theta[15]),
    ];
    let h = 1e-6;
    for q in 0..12 {
        let (i, j) = (q % 6, q / 6);
        let mut xp = CoefficientMatrix::zeros(&model.library);
        let mut xm = CoefficientMatrix::zeros(&model.library);
        xp.values[(i, j)] = h;
        xm.values[(i, j)] = -h;
        let fp = log_likelihood(&model, &data, &xp, &x0, &sigmas).unwrap();
        let fm = log_likelihood(&model, &data, &xm, &x0, &sigmas).unwrap();
        let fd = (fp - fm) / (2.0 * h);
        assert!(
            (grad[q] - fd).abs() / fd.abs().max(1.0) < 1e-4,
            "coefficient {q}: target grad {} vs likelihood grad {fd}",
            grad[q]
        );
    }
}

#[test]
fn target_log_density_decomposes_additively() {
    let data = normalize(&small_lv_dataset()).unwrap();
    let model = normal_model(lv_library(1e-6), CoeffPrior::NormalReference);
    let target = build_target(&model, &data).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let theta = target.initial_position(&mut rng);

    // Perturb one coefficient: the density change must equal the prior
    // change plus the likelihood change, each computed independently.
    let mut theta2 = theta.clone();
    theta2[3] += 0.2;
    let delta_target = target.log_density(&theta2, &[]) - target.log_density(&theta, &[]);

    let prior = DistributionSpec::Normal { mu: 0.0, sigma: 1.0 };
    let delta_prior = prior.logpdf(theta2[3]) - prior.logpdf(theta[3]);
    let xi_of = |t: &[f64]| CoefficientMatrix {
        values: nalgebra::DMatrix::from_fn(6, 2, |i, j| t[j * 6 + i]),
    };
    let x0 = [
        model.x0_prior[0].constrain(theta[12]),
        model.x0_prior[1].constrain(theta[13]),
    ];
    let sigmas = [
        model.obs.noise_prior[0].constrain(theta[14]),
        model.obs.noise_prior[1].constrain(theta[15]),
    ];
    let delta_lik = log_likelihood(&model, &data, &xi_of(&theta2), &x0, &sigmas).unwrap()
        - log_likelihood(&model, &data, &xi_of(&theta), &x0, &sigmas).unwrap();
    assert!(
        (delta_target - (delta_prior + delta_lik)).abs() < 1e-9,
        "{delta_target} vs {}",
        delta_prior + delta_lik
    );
}

fn tiny_chain_config(seed: u64) -> ChainConfig {
    ChainConfig {
        n_warmup: 150,
        n_draws: 150,
        n_chains: 2,
        seed,
        ..Default::default()
    }
}

#[test]
fn fit_layout_is_stable_across_runs() {
    let data = normalize(&small_lv_dataset()).unwrap();
    let model = normal_model(
        lv_library(1e-6),
        CoeffPrior::SpikeSlab(SpikeSlabSpec::new(6, 2)),
    );
    let a = fit(&model, &data, &tiny_chain_config(4)).unwrap();
    let b = fit(&model, &data, &tiny_chain_config(4)).unwrap();
    assert_eq!(a.names, b.names);
    assert_eq!(a.raw_names, b.raw_names);
    assert_eq!(a.store, b.store);
    assert_eq!(a.names[0], "xi[1->u]");
    assert!(a.names.contains(&"xi[u*v->v]".to_string()));
    assert!(a.names.contains(&"lambda[u^2->u]".to_string()));
    assert!(a.names.contains(&"sigma[v]".to_string()));
}

#[test]
fn spike_slab_draws_have_exact_zeros_where_excluded() {
    let data = normalize(&small_lv_dataset()).unwrap();
    let model = normal_model(
        lv_library(1e-6),
        CoeffPrior::SpikeSlab(SpikeSlabSpec::new(6, 2)),
    );
    let samples = fit(&model, &data, &tiny_chain_config(6)).unwrap();
    let mut saw_exclusion = false;
    for q in 0..12 {
        let (i, j) = (q % 6, q / 6);
        let name = samples.coefficient_name(i, j);
        let xi = samples.pooled(&name).unwrap();
        let lam = samples.store.pooled_indicator(q);
        for (x, l) in xi.iter().zip(&lam) {
            if *l == 0 {
                saw_exclusion = true;
                assert_eq!(*x, 0.0, "{name} draw with lambda = 0 must be exactly zero");
            }
        }
    }
    assert!(saw_exclusion, "test needs at least one excluded draw");
}

/// Build a PosteriorSamples carcass with prescribed named draws, for
/// exercising summaries without running a sampler.
fn synthetic_samples(
    names: Vec<String>,
    chains: Vec<DMatrix<f64>>,
    prior_kind: &'static str,
) -> PosteriorSamples {
    use crate::mcmc::{ChainStats, SampleStore};
    let n = chains[0].nrows();
    let n_chains = chains.len();
    let store = SampleStore {
        continuous_dim: chains[0].ncols(),
        indicator_dim: 0,
        draws: chains.clone(),
        indicators: vec![DMatrix::zeros(n, 0); n_chains],
        log_density: vec![vec![0.0; n]; n_chains],
        stats: vec![
            ChainStats {
                step_size: 1.0,
                tree_depths: vec![1; n],
                divergences: vec![false; n],
            };
            n_chains
        ],
    };
    let diagnostics = crate::mcmc::diagnostics(&store);
    PosteriorSamples {
        store,
        raw_names: names.clone(),
        names,
        chains,
        diagnostics,
        prior_kind,
        state_labels: vec!["u".to_string()],
        term_names: vec!["1".to_string(), "u".to_string()],
        n_terms: 2,
        dim: 1,
        t0: 0.0,
    }
}

#[test]
fn shrinkage_factor_edge_cases() {
    let names = vec![
        "xi[1->u]".to_string(),
        "xi[u->u]".to_string(),
        "x0[u]".to_string(),
        "sigma[u]".to_string(),
    ];
    let chains = |a: f64, b: f64| {
        vec![DMatrix::from_fn(200, 4, |_, c| match c {
            0 => a,
            1 => b,
            _ => 1.0,
        })]
    };
    let sparse = synthetic_samples(names.clone(), chains(1.2, 0.0), "reg_horseshoe");
    let reference = synthetic_samples(names.clone(), chains(1.2, 0.8), "normal_reference");
    let kappas = shrinkage_from_fits(&sparse, &reference);
    // Identical modes give kappa = 1; a zero sparse mode over a nonzero
    // reference gives kappa = 0.
    assert!((kappas[(0, 0)].kappa.unwrap() - 1.0).abs() < 1e-9);
    assert!(kappas[(1, 0)].kappa.unwrap().abs() < 1e-9);

    // Near-zero reference mode is flagged undefined.
    let reference_zero = synthetic_samples(names, chains(0.0, 0.8), "normal_reference");
    let kappas = shrinkage_from_fits(&sparse, &reference_zero);
    assert!(kappas[(0, 0)].kappa.is_none());
}

#[test]
fn inclusion_probabilities_require_spike_slab() {
    let data = normalize(&small_lv_dataset()).unwrap();
    let model = normal_model(lv_library(1e-6), CoeffPrior::NormalReference);
    let samples = fit(&model, &data, &tiny_chain_config(3)).unwrap();
    assert!(matches!(
        inclusion_probabilities(&samples),
        Err(ModelError::WrongPriorKind { .. })
    ));
}

#[test]
fn ppd_collapsed_posterior_reproduces_the_trajectory() {
    // One single repeated draw: the band collapses onto that trajectory.
    let lib = lv_library(0.0);
    let xi = lv_xi(&lib);
    let model = normal_model(lib.clone(), CoeffPrior::NormalReference);
    let mut names: Vec<String> = Vec::new();
    let labels = ["u", "v"];
    let terms = lib.term_names(&["u".to_string(), "v".to_string()]);
    for j in 0..2 {
        for t in &terms {
            names.push(format!("xi[{t}->{}]", labels[j]));
        }
    }
    names.extend(["x0[u]".into(), "x0[v]".into(), "sigma[u]".into(), "sigma[v]".into()]);
    let mut row = Vec::new();
    for j in 0..2 {
        for i in 0..6 {
            row.push(xi.values[(i, j)]);
        }
    }
    row.extend([10.0, 5.0, 0.2, 0.2]);
    let chains = vec![DMatrix::from_fn(8, row.len(), |_, c| row[c])];
    let mut samples = synthetic_samples(names, chains, "normal_reference");
    samples.n_terms = 6;
    samples.dim = 2;
    samples.state_labels = vec!["u".to_string(), "v".to_string()];
    samples.term_names = terms;

    let times = uniform_grid(0.0, 4.0, 9);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let quiet = PpdOptions {
        include_noise: false,
        ..Default::default()
    };
    let summary = ppd(&model, &samples, &times, 8, &mut rng, &quiet).unwrap();
    let traj = integrate(&lib, &xi, &[10.0, 5.0], &times, &model.integrator).unwrap();
    for i in 0..9 {
        for j in 0..2 {
            assert!((summary.mean[(i, j)] - traj.states[(i, j)]).abs() < 1e-9);
            assert!((summary.upper[(i, j)] - summary.lower[(i, j)]).abs() < 1e-12);
        }
    }

    // Observation noise must widen every interval.
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let noisy = ppd(&model, &samples, &times, 8, &mut rng, &PpdOptions::default()).unwrap();
    for i in 0..9 {
        for j in 0..2 {
            let w_noisy = noisy.upper[(i, j)] - noisy.lower[(i, j)];
            assert!(w_noisy > 0.0, "noise must widen the band at ({i},{j})");
        }
    }
}

#[test]
fn ppd_bands_are_nested_across_levels() {
    let data = normalize(&small_lv_dataset()).unwrap();
    let model = normal_model(
        lv_library(1e-6),
        CoeffPrior::SpikeSlab(SpikeSlabSpec::new(6, 2)),
    );
    let samples = fit(&model, &data, &tiny_chain_config(10)).unwrap();
    let times = uniform_grid(0.0, 4.0, 6);
    let narrow = PpdOptions {
        include_noise: true,
        lower_q: 0.10,
        upper_q: 0.90,
    };
    let wide = PpdOptions {
        include_noise: true,
        lower_q: 0.025,
        upper_q: 0.975,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = ppd(&model, &samples, &times, 100, &mut rng, &narrow).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let b = ppd(&model, &samples, &times, 100, &mut rng, &wide).unwrap();
    for i in 0..times.len() {
        for j in 0..2 {
            assert!(b.lower[(i, j)] <= a.lower[(i, j)] + 1e-12);
            assert!(b.upper[(i, j)] >= a.upper[(i, j)] - 1e-12);
        }
    }
}

#[test]
fn all_zero_data_yields_no_confident_inclusions() {
    // No signal: zero observations never provide evidence FOR a term. A
    // constant drift hurts the fit in both directions and is excluded; a
    // linear self-decay term is harmless when the state sits at zero (its
    // negative-coefficient half-space is unidentifiable), so its inclusion
    // hovers near, never above, the prior.
    let times = uniform_grid(0.0, 10.0, 40);
    let data = Dataset {
        times: times.clone(),
        observations: DMatrix::zeros(40, 1),
        labels: vec!["x".to_string()],
        scales: vec![1.0],
    };
    let mut lib = build_polynomial_library(1, 1);
    lib.stab_eps = 1e-6;
    let model = UqSindyModel {
        library: lib,
        coeff_prior: CoeffPrior::SpikeSlab(SpikeSlabSpec::new(2, 1)),
        x0_prior: vec![DistributionSpec::Normal { mu: 0.0, sigma: 0.5 }],
        obs: ObservationModel {
            kind: ObservationKind::Normal,
            noise_prior: vec![DistributionSpec::Lognormal { mu: (0.05f64).ln(), sigma: 0.2 }],
        },
        integrator: IntegratorConfig { max_steps: 2000, ..Default::default() },
    };
    let cfg = ChainConfig {
        n_warmup: 300,
        n_draws: 300,
        n_chains: 2,
        seed: 5,
        ..Default::default()
    };
    let samples = fit(&model, &data, &cfg).unwrap();
    let inclusion = inclusion_probabilities(&samples).unwrap();
    assert!(
        inclusion[(0, 0)] <= 0.2,
        "constant term inclusion {}",
        inclusion[(0, 0)]
    );
    assert!(
        inclusion[(1, 0)] <= 0.75,
        "zero data must never make the linear term look confidently included, got {}",
        inclusion[(1, 0)]
    );
}

#[test]
fn noise_free_data_with_tight_noise_prior_concentrates_on_truth() {
    // Near-deterministic limit: densely sampled noise-free observations
    // and a tight noise prior pin the posterior at the generating
    // coefficients.
    let times = uniform_grid(0.0, 16.0, 134);
    let clean = gen_lotka_volterra(1.0, 0.1, 1.5, 0.075, [10.0, 5.0], &times).unwrap();
    let normed = normalize(&clean).unwrap();
    let (s_u, s_v) = (normed.scales[0], normed.scales[1]);
    let mut model = normal_model(lv_library(1e-6), CoeffPrior::NormalReference);
    model.obs.kind = ObservationKind::Lognormal;
    model.obs.noise_prior =
        vec![DistributionSpec::Lognormal { mu: (0.05f64).ln(), sigma: 0.1 }; 2];
    model.integrator.max_steps = 2000;
    let cfg = ChainConfig {
        n_warmup: 300,
        n_draws: 200,
        n_chains: 2,
        seed: 12,
        ..Default::default()
    };
    let samples = fit(&model, &normed, &cfg).unwrap();
    let expect = [
        ("xi[u->u]", 1.0),
        ("xi[u*v->u]", -0.1 * s_v),
        ("xi[v->v]", -1.5),
        ("xi[u*v->v]", 0.075 * s_u),
    ];
    for (name, truth) in expect {
        let mode = samples.mode(name).unwrap();
        assert!(
            (mode - truth).abs() < 0.05,
            "{name}: mode {mode} vs truth {truth}"
        );
    }
}
