//! Property tests over randomly generated inputs.

use proptest::prelude::*;
use proptest::strategy::ValueTree;

use srwdro::adversary::{dhat, dhat_grad, norm_grad, pgd_attack, udr_attack, AttackConfig};
use srwdro::certificates::{certificate_probability, covering_number_greedy, CertificateInputs};
use srwdro::data::{make_synthetic, DomainBox, SyntheticKind};
use srwdro::harness::{train, train_observed, write_history_csv, DataConfig, TrainConfig};
use srwdro::metrics::{kl_divergence, lp_metric_weights, tv_distance, wasserstein_p_weights, CostMatrix, Norm};
use srwdro::model::model_loss;
use srwdro::oracle::{sr_loss_exact, FiniteInstance};
use srwdro::reweight::{kl_dual_value, solve_weights};
use srwdro::{Activation, AmbiguityParams, Arch, ModelParams, Sample};

fn normalize(raw: Vec<f64>) -> Vec<f64> {
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / s).collect()
}

/// Probability vector of length `m` with every entry at least roughly `floor / m`.
fn simplex(m: usize, floor: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(floor..1.0f64, m).prop_map(normalize)
}

/// Probability vector that may put zero mass on some points.
fn sparse_simplex(m: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop_oneof![Just(0.0), 0.01..1.0f64], m)
        .prop_filter("needs some mass", |v| v.iter().sum::<f64>() > 0.0)
        .prop_map(normalize)
}

fn points(m: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(0.0..1.0f64, 2), m)
}

fn norm() -> impl Strategy<Value = Norm> {
    prop_oneof![Just(Norm::Linf), Just(Norm::L2)]
}

fn arch() -> impl Strategy<Value = Arch> {
    prop_oneof![
        (1usize..4, 2usize..4).prop_map(|(input, classes)| Arch::SoftmaxLinear { input, classes }),
        (1usize..4, 1usize..6, 2usize..4).prop_map(|(input, hidden, classes)| Arch::Mlp1 {
            input,
            hidden,
            classes,
            activation: Activation::Tanh,
        }),
    ]
}

/// A model with parameters scaled up from its initialization, plus a matching sample.
fn model_and_sample() -> impl Strategy<Value = (ModelParams, Sample)> {
    (arch(), any::<u64>(), 0.5..4.0f64).prop_flat_map(|(arch, seed, scale)| {
        let mut m = ModelParams::init(arch, seed).unwrap();
        m.theta.iter_mut().for_each(|t| *t *= scale);
        let x = prop::collection::vec(0.0..1.0f64, arch.input_dim());
        (Just(m), x, 0..arch.num_classes()).prop_map(|(m, x, y)| (m, Sample::new(x, y)))
    })
}

// ---------------------------------------------------------------- model

proptest! {
    #[test]
    fn cross_entropy_is_nonnegative_and_finite((m, s) in model_and_sample()) {
        let l = model_loss(&m, &s).unwrap();
        prop_assert!(l.is_finite() && l >= 0.0);
    }

    #[test]
    fn datasets_and_inits_repeat_bit_for_bit(seed in any::<u64>(), n in 2usize..40, noise in 0.0..0.3f64, a in arch()) {
        for kind in [SyntheticKind::TwoMoons, SyntheticKind::GaussBlobs] {
            prop_assert_eq!(make_synthetic(kind, n, noise, seed).unwrap(), make_synthetic(kind, n, noise, seed).unwrap());
        }
        let (m1, m2) = (ModelParams::init(a, seed).unwrap(), ModelParams::init(a, seed).unwrap());
        prop_assert_eq!(m1.theta.iter().map(|t| t.to_bits()).collect::<Vec<_>>(), m2.theta.iter().map(|t| t.to_bits()).collect::<Vec<_>>());
    }
}

// ---------------------------------------------------------------- metrics

fn metric_pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, CostMatrix)> {
    (2usize..=6).prop_flat_map(|m| {
        (sparse_simplex(m), sparse_simplex(m), points(m), norm())
            .prop_map(|(mu, nu, pts, norm)| (mu, nu, CostMatrix::pairwise(&pts, norm).unwrap()))
    })
}

proptest! {
    #[test]
    fn levy_prokhorov_sandwiches_wasserstein((mu, nu, cost) in metric_pair(), p in 1u32..=2) {
        let w = wasserstein_p_weights(&mu, &nu, &cost, p).unwrap();
        let lp = lp_metric_weights(&mu, &nu, &cost).unwrap();
        let pf = p as f64;
        prop_assert!(lp.powf((pf + 1.0) / pf) <= w + 1e-9, "lp {lp} w {w}");
        prop_assert!(w <= (cost.diam() + 1.0) * lp.powf(1.0 / pf) + 1e-9, "lp {lp} w {w}");
    }

    #[test]
    fn pinsker_chain((mu, nu, cost) in metric_pair(), p in 1u32..=2) {
        let w = wasserstein_p_weights(&mu, &nu, &cost, p).unwrap();
        let tv = tv_distance(&mu, &nu).unwrap();
        prop_assert!(w <= cost.diam() * tv.powf(1.0 / p as f64) + 1e-9);
        let kl = kl_divergence(&mu, &nu).unwrap();
        if kl.is_finite() {
            prop_assert!(tv <= (kl / 2.0).sqrt() + 1e-9);
        }
    }

    #[test]
    fn symmetry_and_identity((mu, nu, cost) in metric_pair(), p in 1u32..=2) {
        let ab = wasserstein_p_weights(&mu, &nu, &cost, p).unwrap();
        let ba = wasserstein_p_weights(&nu, &mu, &cost, p).unwrap();
        prop_assert!((ab - ba).abs() <= 1e-12);
        prop_assert!(wasserstein_p_weights(&mu, &mu, &cost, p).unwrap().abs() <= 1e-12);
        prop_assert_eq!(tv_distance(&mu, &nu).unwrap(), tv_distance(&nu, &mu).unwrap());
        prop_assert_eq!(tv_distance(&mu, &mu).unwrap(), 0.0);
        prop_assert_eq!(kl_divergence(&mu, &mu).unwrap(), 0.0);
    }

    #[test]
    fn wasserstein_triangle_inequality(
        (a, b, c, pts) in (2usize..=5).prop_flat_map(|m| (sparse_simplex(m), sparse_simplex(m), sparse_simplex(m), points(m))),
        p in 1u32..=2,
    ) {
        let cost = CostMatrix::pairwise(&pts, Norm::L2).unwrap();
        let w = |x: &[f64], y: &[f64]| wasserstein_p_weights(x, y, &cost, p).unwrap();
        prop_assert!(w(&a, &c) <= w(&a, &b) + w(&b, &c) + 1e-9);
    }
}

#[test]
fn kl_is_asymmetric_somewhere() {
    let mut runner = proptest::test_runner::TestRunner::deterministic();
    let strat = (simplex(3, 0.05), simplex(3, 0.05));
    let witnessed = (0..200).any(|_| {
        let (mu, nu) = strat.new_tree(&mut runner).unwrap().current();
        (kl_divergence(&mu, &nu).unwrap() - kl_divergence(&nu, &mu).unwrap()).abs() > 1e-6
    });
    assert!(witnessed);
}

// ---------------------------------------------------------------- reweight

fn reweight_instance() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (1usize..=8).prop_flat_map(|m| (prop::collection::vec(0.0..3.0f64, m), simplex(m, 0.05)))
}

proptest! {
    #[test]
    fn primal_and_dual_agree((l, q) in reweight_instance(), gamma in 0.0..2.0f64) {
        let primal = solve_weights(&l, &q, gamma).unwrap().value;
        let dual = kl_dual_value(&l, &q, gamma).unwrap();
        prop_assert!((primal - dual).abs() <= 1e-8, "primal {primal} dual {dual}");
    }

    #[test]
    fn kl_constraint_binds((l, q) in reweight_instance(), gamma in 1e-3..2.0f64) {
        let spread = l.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - l.iter().cloned().fold(f64::INFINITY, f64::min);
        prop_assume!(spread > 1e-6);
        let sol = solve_weights(&l, &q, gamma).unwrap();
        prop_assert!((sol.kl_attained - gamma).abs() <= 1e-8, "kl {} gamma {gamma}", sol.kl_attained);
    }

    #[test]
    fn value_lies_between_mean_and_max((l, q) in reweight_instance(), gamma in 0.0..5.0f64) {
        let sol = solve_weights(&l, &q, gamma).unwrap();
        let mean: f64 = l.iter().zip(&q).map(|(a, b)| a * b).sum();
        let max = l.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(sol.value >= mean - 1e-12);
        if l.iter().any(|&x| x != max) {
            // strictness comes from full support of p; at large gamma the
            // remaining gap can fall below one ulp of max, so compare weights
            prop_assert!(sol.value <= max);
            let below: f64 = l.iter().zip(&sol.weights).filter(|(x, _)| **x < max).map(|(_, p)| p).sum();
            prop_assert!(below > 0.0);
        } else {
            prop_assert!((sol.value - max).abs() <= 1e-12);
        }
        prop_assert!(sol.weights.iter().all(|&p| p > 0.0));
        prop_assert!((sol.weights.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        prop_assert!(sol.kl_attained <= gamma + 1e-9);
    }

    #[test]
    fn permuting_inputs_permutes_weights(
        (l, q, perm) in (2usize..=7).prop_flat_map(|m| (
            prop::collection::vec(0.0..3.0f64, m),
            simplex(m, 0.05),
            Just((0..m).collect::<Vec<usize>>()).prop_shuffle(),
        )),
        gamma in 0.0..1.0f64,
    ) {
        let base = solve_weights(&l, &q, gamma).unwrap();
        let lp: Vec<f64> = perm.iter().map(|&i| l[i]).collect();
        let qp: Vec<f64> = perm.iter().map(|&i| q[i]).collect();
        let permuted = solve_weights(&lp, &qp, gamma).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            prop_assert!((permuted.weights[k] - base.weights[i]).abs() <= 1e-9);
        }
    }

    #[test]
    fn value_grows_with_gamma((l, q) in reweight_instance()) {
        let values: Vec<f64> = [0.0, 0.01, 0.05, 0.1, 0.5, 1.0]
            .iter()
            .map(|&g| solve_weights(&l, &q, g).unwrap().value)
            .collect();
        prop_assert!(values.windows(2).all(|w| w[1] >= w[0] - 1e-12), "{values:?}");
    }
}

// ---------------------------------------------------------------- adversary

fn attack_config() -> impl Strategy<Value = AttackConfig> {
    (0.0..0.4f64, 0usize..12, 0.005..0.2f64, norm(), any::<bool>(), any::<u64>(), 0.0..5.0f64, 0.2..3.0f64).prop_map(
        |(eps, steps, step_size, norm, random_start, seed, lambda, tau)| AttackConfig {
            eps,
            steps,
            step_size,
            norm,
            random_start,
            seed,
            lambda,
            tau,
        },
    )
}

proptest! {
    #[test]
    fn pgd_stays_in_ball_and_box((m, s) in model_and_sample(), cfg in attack_config()) {
        let domain = DomainBox::unit(s.dim());
        let adv = pgd_attack(&m, &s, &cfg, &domain).unwrap();
        prop_assert!(cfg.norm.distance(&adv.x, &s.x) <= cfg.eps + 1e-12);
        prop_assert!(domain.contains(&adv.x));
        prop_assert_eq!(adv.y, s.y);
    }

    #[test]
    fn udr_stays_in_box((m, s) in model_and_sample(), cfg in attack_config()) {
        let domain = DomainBox::unit(s.dim());
        let adv = udr_attack(&m, &s, &cfg, &domain).unwrap();
        prop_assert!(domain.contains(&adv.x));
    }

    #[test]
    fn attacks_are_deterministic((m, s) in model_and_sample(), cfg in attack_config()) {
        let domain = DomainBox::unit(s.dim());
        prop_assert_eq!(pgd_attack(&m, &s, &cfg, &domain).unwrap(), pgd_attack(&m, &s, &cfg, &domain).unwrap());
        prop_assert_eq!(udr_attack(&m, &s, &cfg, &domain).unwrap(), udr_attack(&m, &s, &cfg, &domain).unwrap());
    }

    #[test]
    fn dhat_is_continuous_and_nondecreasing(eps in 0.0..1.0f64, tau in 0.1..5.0f64, a in 0.0..2.0f64, b in 0.0..2.0f64) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let at = |d: f64| dhat(&[d], &[0.0], eps, tau, Norm::L2).unwrap();
        prop_assert!(at(lo) <= at(hi));
        // slope is at most max(1, 1/tau), so nearby inputs give nearby outputs
        prop_assert!(at(hi) - at(lo) <= (hi - lo) * 1f64.max(1.0 / tau) + 1e-12);
        prop_assert!((at(eps) - eps).abs() <= 1e-15);
    }

    #[test]
    fn dhat_gradient_scales_past_threshold(
        x0 in prop::collection::vec(0.0..1.0f64, 3),
        dir in prop::collection::vec(-1.0..1.0f64, 3),
        eps in 0.01..0.5f64,
        tau in 0.2..4.0f64,
        n in norm(),
    ) {
        let x: Vec<f64> = x0.iter().zip(&dir).map(|(a, d)| a + d).collect();
        let d = n.distance(&x, &x0);
        prop_assume!((d - eps).abs() > 1e-9);
        let g = dhat_grad(&x, &x0, eps, tau, n);
        let base = norm_grad(&x, &x0, n);
        let scale = if d > eps { 1.0 / tau } else { 1.0 };
        for (gi, bi) in g.iter().zip(&base) {
            prop_assert!((gi - scale * bi).abs() <= 1e-12);
        }
    }
}

// ---------------------------------------------------------------- oracle

fn oracle_instance(eps: f64, gamma: f64) -> impl Strategy<Value = FiniteInstance> {
    (prop::collection::vec(0.0..1.0f64, 3), prop::collection::vec(0.0..1.0f64, 3), simplex(3, 0.1)).prop_map(
        move |(xs, losses, base)| {
            let pts: Vec<Vec<f64>> = xs.into_iter().map(|x| vec![x]).collect();
            let cost = CostMatrix::pairwise(&pts, Norm::L1).unwrap();
            let params = AmbiguityParams {
                eps,
                gamma,
                ..AmbiguityParams::default()
            };
            FiniteInstance::new(cost, losses, base, params).unwrap()
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn robust_loss_is_monotone_in_both_budgets(inst in oracle_instance(0.0, 0.0)) {
        let at = |eps: f64, gamma: f64| {
            let mut i = inst.clone();
            i.params.eps = eps;
            i.params.gamma = gamma;
            sr_loss_exact(&i, 30).unwrap()
        };
        let by_eps: Vec<f64> = [0.0, 0.05, 0.1, 0.3].iter().map(|&e| at(e, 0.1)).collect();
        let by_gamma: Vec<f64> = [0.0, 0.05, 0.1, 0.3].iter().map(|&g| at(0.1, g)).collect();
        prop_assert!(by_eps.windows(2).all(|w| w[1] >= w[0]), "{by_eps:?}");
        prop_assert!(by_gamma.windows(2).all(|w| w[1] >= w[0]), "{by_gamma:?}");
    }

    #[test]
    fn robust_loss_sandwich_and_refinement(inst in oracle_instance(0.1, 0.1)) {
        let coarse = sr_loss_exact(&inst, 30).unwrap();
        let fine = sr_loss_exact(&inst, 60).unwrap();
        for v in [coarse, fine] {
            prop_assert!(v >= inst.base_mean() - 1e-12 && v <= inst.max_loss() + 1e-12);
        }
        prop_assert!((coarse - fine).abs() <= 2.0 * inst.max_loss() / 30.0);
    }
}

// ---------------------------------------------------------------- certificates

proptest! {
    #[test]
    fn certificate_monotonicity(n in 1usize..5000, gamma in 0.0..0.5f64, delta in 0.05..1.0f64, m in 1usize..20) {
        let prob = |n: usize, gamma: f64, m_cover: usize| {
            certificate_probability(&CertificateInputs { n, gamma, eps_or_sigma: delta, diam: 0.0, p: 1, m_cover })
                .unwrap()
                .raw
        };
        let base = prob(n, gamma, m);
        prop_assert!(prob(n + 17, gamma, m) >= base);
        prop_assert!(prob(n, gamma + 0.01, m) >= base);
        prop_assert!(prob(n, gamma, m + 1) <= base);
    }

    #[test]
    fn covering_number_shrinks_with_radius(pts in points(12), d1 in 0.0..1.5f64, d2 in 0.0..1.5f64, n in norm()) {
        let cost = CostMatrix::pairwise(&pts, n).unwrap();
        let (lo, hi) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
        prop_assert!(covering_number_greedy(&cost, hi).unwrap() <= covering_number_greedy(&cost, lo).unwrap());
    }
}

// ---------------------------------------------------------------- harness

fn small_config(gamma: f64, seed: u64, batch_size: usize) -> TrainConfig {
    let mut cfg = TrainConfig {
        data: DataConfig {
            n_train: 48,
            n_test: 24,
            seed,
            ..DataConfig::default()
        },
        arch: Arch::Mlp1 {
            input: 2,
            hidden: 6,
            classes: 2,
            activation: Activation::Tanh,
        },
        epochs: 3,
        batch_size,
        decay_epochs: vec![2],
        attack_steps: 3,
        eval: srwdro::harness::EvalAttack {
            steps: 3,
            ..Default::default()
        },
        seed,
        attack_seed: seed.wrapping_mul(3),
        lambda_lr: 0.5,
        ..TrainConfig::default()
    };
    cfg.ambiguity.gamma = gamma;
    cfg
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn training_step_invariants(gamma in 0.0..0.5f64, seed in 0u64..1000, batch in 1usize..20) {
        let cfg = small_config(gamma, seed, batch);
        let (train_set, test_set) = cfg.data.build().unwrap();
        let mut steps = Vec::new();
        let (_, history) = train_observed(&cfg, &train_set, &test_set, |r| steps.push(r.clone())).unwrap();
        prop_assert_eq!(steps.len(), cfg.epochs * train_set.len().div_ceil(batch));
        for r in &steps {
            prop_assert!(r.lambda >= 0.0);
            prop_assert!(r.weighted_loss >= r.mean_loss - 1e-12, "{} < {}", r.weighted_loss, r.mean_loss);
        }
        for e in &history.epochs {
            prop_assert!(e.lambda >= 0.0);
            prop_assert!(e.weight_sum_dev <= 1e-9);
        }
    }

    #[test]
    fn zero_gamma_keeps_uniform_weights(seed in 0u64..1000, batch in prop::sample::select(vec![1usize, 2, 3, 4, 6, 8, 12, 16, 24, 48])) {
        let cfg = small_config(0.0, seed, batch);
        let (train_set, test_set) = cfg.data.build().unwrap();
        let mut all_uniform = true;
        train_observed(&cfg, &train_set, &test_set, |r| {
            let u = 1.0 / r.weights.len() as f64;
            all_uniform &= r.weights.iter().all(|&p| p == u);
        })
        .unwrap();
        prop_assert!(all_uniform);
    }

    #[test]
    fn same_seed_same_history_csv(gamma in 0.0..0.3f64, seed in 0u64..1000) {
        let cfg = small_config(gamma, seed, 16);
        let (train_set, test_set) = cfg.data.build().unwrap();
        let csv = || {
            let (_, h) = train(&cfg, &train_set, &test_set).unwrap();
            let mut buf = Vec::new();
            write_history_csv(&h, &mut buf).unwrap();
            buf
        };
        prop_assert_eq!(csv(), csv());
    }
}
