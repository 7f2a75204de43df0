use nphmm::density::LatentDensity;
use nphmm::model::{sample_stationary, sample_transition, simulate, KernelParam, TrueModel};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Kolmogorov–Smirnov critical value at the 1% level.
const KS_1PCT: f64 = 1.63;

fn ks_statistic(mut sample: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    sample.sort_by(f64::total_cmp);
    let n = sample.len() as f64;
    sample
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// CDF of the stationary density, in closed form.
fn stationary_cdf(a: f64, x: f64) -> f64 {
    let z = 2.0 * a + 2.0 * a * a * ((-1.0 / a).exp() - 1.0);
    let num = a * (2.0 * x + a * ((-x / a).exp() - 1.0) - a * ((-(1.0 - x) / a).exp() - (-1.0 / a).exp()));
    num / z
}

/// CDF of `q_a(x, .)`, in closed form.
fn transition_cdf(a: f64, x: f64, y: f64) -> f64 {
    let c = 1.0 / (a * (2.0 - (-x / a).exp() - (-(1.0 - x) / a).exp()));
    let mass = if y <= x {
        a * ((-(x - y) / a).exp() - (-x / a).exp())
    } else {
        a * (1.0 - (-x / a).exp()) + a * (1.0 - (-(y - x) / a).exp())
    };
    c * mass
}

#[test]
fn closed_form_cdfs_are_normalized() {
    for a in [0.1, 1.0, 10.0] {
        assert!(stationary_cdf(a, 0.0).abs() < 1e-14);
        assert!((stationary_cdf(a, 1.0) - 1.0).abs() < 1e-12);
        for x in [0.0, 0.3, 1.0] {
            assert!(transition_cdf(a, x, 0.0).abs() < 1e-14);
            assert!((transition_cdf(a, x, 1.0) - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn stationary_sampler_passes_ks() {
    for (seed, a) in [(1u64, 0.1), (2, 1.0), (3, 10.0)] {
        let k = KernelParam::new(a).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 20_000;
        let draws: Vec<f64> = (0..n).map(|_| sample_stationary(k, &mut rng).unwrap()).collect();
        let d = ks_statistic(draws, |x| stationary_cdf(a, x));
        assert!(d * (n as f64).sqrt() < KS_1PCT, "a = {a}: D = {d}");
    }
}

#[test]
fn transition_sampler_passes_ks() {
    for (seed, a, x) in [(4u64, 0.1, 0.05), (5, 1.0, 0.5), (6, 1.0, 1.0), (7, 10.0, 0.9)] {
        let k = KernelParam::new(a).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 20_000;
        let draws: Vec<f64> = (0..n).map(|_| sample_transition(k, x, &mut rng).unwrap()).collect();
        let d = ks_statistic(draws, |y| transition_cdf(a, x, y));
        assert!(d * (n as f64).sqrt() < KS_1PCT, "a = {a}, x = {x}: D = {d}");
    }
}

#[test]
fn chain_marginal_stays_stationary() {
    let a = 1.0;
    let k = KernelParam::new(a).unwrap();
    let finals: Vec<f64> = (0..10_000u64)
        .map(|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut x = sample_stationary(k, &mut rng).unwrap();
            for _ in 0..5000 {
                x = sample_transition(k, x, &mut rng).unwrap();
            }
            x
        })
        .collect();
    let d = ks_statistic(finals, |x| stationary_cdf(a, x));
    assert!(d < 0.02, "D = {d}");
}

#[test]
fn simulated_pairs_follow_the_pair_density() {
    // Empirical P(X_0 < 1/2, X_1 < 1/2) against the pair density's mass.
    let model = TrueModel::half_circle(1.0).unwrap();
    let traj = simulate(&model, 200_001, 9).unwrap();
    let n = traj.states.len() - 1;
    let hits = (0..n)
        .filter(|&i| traj.states[i] < 0.5 && traj.states[i + 1] < 0.5)
        .count() as f64;
    let p_hat = hits / n as f64;
    let pair = LatentDensity::Pair(KernelParam::new(1.0).unwrap());
    let m = 400;
    let mut p = 0.0;
    for i in 0..m {
        for j in 0..m {
            let (x0, x1) = ((i as f64 + 0.5) / (2 * m) as f64, (j as f64 + 0.5) / (2 * m) as f64);
            p += pair.value(&[x0, x1]);
        }
    }
    p /= (2 * m * 2 * m) as f64;
    // Lag-one dependence inflates the binomial SE; allow a generous multiple.
    let se = (p * (1.0 - p) / n as f64).sqrt();
    assert!((p_hat - p).abs() < 8.0 * se, "{p_hat} vs {p}");
}
