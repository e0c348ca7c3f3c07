use latent_price::model::StationaryDensity;
use latent_price::moments::{epsilon_from_fraction, wide_spread_fraction, EpsClamp};
use latent_price::{
    big_sigma, estimate_epsilon, estimate_sigma_bar2, estimate_sigma_hat, simulate_path, ModelParams, SigmaHatConfig,
    SimConfig,
};

#[test]
fn epsilon_bisection_matches_scan() {
    for &(gamma, f) in &[(0.0, 0.2), (2.0, 0.05), (5.0, 0.3), (10.0, 0.01)] {
        let eps = epsilon_from_fraction(f, gamma).unwrap();
        assert_eq!(eps.clamped, None);
        let chi = StationaryDensity::new(gamma).unwrap();
        let n = 100_000;
        let h = 0.5 / n as f64;
        let mut mass = 0.0;
        let mut scanned = 0.5;
        for k in 0..n {
            let x = (k as f64 + 0.5) * h;
            let next = mass + 2.0 * chi.density(x) * h;
            if next >= f {
                scanned = k as f64 * h + h * (f - mass) / (next - mass);
                break;
            }
            mass = next;
        }
        assert!((eps.eps - scanned).abs() < 1e-5, "gamma {gamma}: {} vs {scanned}", eps.eps);
    }
}

#[test]
fn epsilon_clamps_at_extremes() {
    assert_eq!(epsilon_from_fraction(0.0, 1.0).unwrap().clamped, Some(EpsClamp::Lower));
    assert_eq!(epsilon_from_fraction(1.0, 1.0).unwrap().clamped, Some(EpsClamp::Upper));
    assert!(epsilon_from_fraction(1.5, 1.0).is_err());
    assert!(epsilon_from_fraction(0.1, -1.0).is_err());
}

#[test]
fn sigma_hat_tracks_big_sigma() {
    let p = ModelParams::new(1.0, 1.0, 1.0, 2.0, 0.1).unwrap();
    let target = big_sigma(&p).unwrap();
    let n = 10;
    let mean = (0..n)
        .map(|s| {
            let path = simulate_path(&SimConfig::new(p, 1e4, 600 + s)).unwrap();
            estimate_sigma_hat(&path, SigmaHatConfig::SqrtHorizon).unwrap()
        })
        .sum::<f64>()
        / n as f64;
    assert!((mean / target - 1.0).abs() < 0.1, "{mean} vs {target}");
}

#[test]
fn sigma_hat_block_count_validation() {
    let p = ModelParams::new(1.0, 1.0, 1.0, 2.0, 0.1).unwrap();
    let path = simulate_path(&SimConfig::new(p, 100.0, 1)).unwrap();
    assert_eq!(SigmaHatConfig::SqrtHorizon.blocks(100.0), 10);
    assert!(estimate_sigma_hat(&path, SigmaHatConfig::Fixed(0)).is_err());
    assert!(estimate_sigma_hat(&path, SigmaHatConfig::Fixed(1000)).is_err());
    assert!(estimate_sigma_hat(&path, SigmaHatConfig::Fixed(100)).is_ok());
}

#[test]
fn epsilon_recovered_at_true_gamma() {
    let p = ModelParams::new(1.0, 1.0, 1.0, 2.0, 0.1).unwrap();
    let path = simulate_path(&SimConfig::new(p, 2e4, 77)).unwrap();
    assert!(estimate_sigma_bar2(&path).unwrap() > 0.0);
    let f = wide_spread_fraction(&path).unwrap();
    let est = estimate_epsilon(&path, p.gamma()).unwrap();
    assert_eq!(est.wide_fraction, f);
    assert!((est.eps - 0.1).abs() < 0.015, "{}", est.eps);
}
