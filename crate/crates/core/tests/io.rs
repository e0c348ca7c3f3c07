use std::collections::BTreeMap;
use std::fs;

use latent_price::io::{
    load_dataset, load_result, load_ticks, path_to_ticks, read_dataset, read_result, read_ticks, resample, save_result,
    write_dataset, write_result_to, write_surface, write_ticks, ResampleOptions, TickRecord, RESULT_MAGIC,
};
use latent_price::likelihood::SurfacePoint;
use latent_price::{simulate_path, Error, EstimationResult, ModelParams, SimConfig};

fn sample_result(rows: usize) -> EstimationResult {
    let surface = (0..rows)
        .map(|i| SurfacePoint {
            alpha2: 1.0 + (i / 100) as f64 * 0.1,
            sigma2: 0.01 + (i % 100) as f64 * 1e-4,
            beta: 0.05 + i as f64 * 1e-6,
            loglik: -(i as f64).sqrt() / 3.0,
        })
        .collect();
    let mut config = BTreeMap::new();
    config.insert("seed".into(), "3".into());
    EstimationResult {
        n_obs: 16201,
        horizon: 16200.0,
        sigma_bar2_hat: 0.0101,
        sigma_hat: 0.0092,
        m_blocks: 127,
        alpha2_hat: 1.0,
        beta_hat: 0.05,
        sigma2_hat: 0.01,
        max_loglik: 12.5,
        ties: vec![(1.0, 0.01)],
        eps_hat: 0.1,
        eps_clamped: None,
        wide_fraction: 0.2,
        n_candidates: rows,
        excluded: 0,
        kernel_builds: rows,
        runtime_secs: 1.25,
        config,
        surface,
    }
}

#[test]
fn result_round_trip_is_byte_stable() {
    let d = tempfile::tempdir().unwrap();
    let r = sample_result(10_000);
    let a = d.path().join("a.txt");
    let b = d.path().join("b.txt");
    save_result(&r, &a).unwrap();
    let loaded = load_result(&a).unwrap();
    assert_eq!(loaded, r);
    save_result(&loaded, &b).unwrap();
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn result_version_mismatch_rejected() {
    let mut buf = Vec::new();
    write_result_to(&mut buf, &sample_result(3)).unwrap();
    let text = String::from_utf8(buf).unwrap().replacen(&format!("{RESULT_MAGIC} 1"), &format!("{RESULT_MAGIC} 9"), 1);
    match read_result(text.as_bytes(), "r") {
        Err(Error::Version { found, .. }) => assert_eq!(found, "9"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn dataset_round_trip_preserves_path() {
    let d = tempfile::tempdir().unwrap();
    let p = ModelParams::new(1.0, 0.05, 0.01, 0.0101, 0.1).unwrap();
    let path = simulate_path(&SimConfig::new(p, 300.0, 12)).unwrap();
    let f = d.path().join("data.csv");
    write_dataset(&path, &f).unwrap();
    let back = load_dataset(&f).unwrap();
    assert_eq!(back.order_flow, path.order_flow);
    assert_eq!(back.bid, path.bid);
    assert_eq!(back.ask, path.ask);
    assert_eq!(back.times, path.times);
    assert_eq!(back.latent, path.latent);
    assert_eq!(back.dt_obs, path.dt_obs);

    let ticks = load_ticks(&f).unwrap();
    let mut buf = Vec::new();
    write_ticks(&mut buf, &ticks).unwrap();
    assert_eq!(read_ticks(buf.as_slice(), "t").unwrap(), path_to_ticks(&path));
}

#[test]
fn resampling_a_regular_path_is_identity() {
    let p = ModelParams::new(1.0, 0.05, 0.01, 0.0101, 0.1).unwrap();
    let path = simulate_path(&SimConfig::new(p, 120.0, 5)).unwrap();
    let once = resample(&path_to_ticks(&path), &ResampleOptions::new(1.0)).unwrap().path;
    assert_eq!(once.order_flow, path.order_flow);
    assert_eq!(once.bid, path.bid);
    let twice = resample(&path_to_ticks(&once), &ResampleOptions::new(1.0)).unwrap().path;
    assert_eq!(twice, once);
}

#[test]
fn resampling_carries_last_quote_and_reports_gaps() {
    let ticks = vec![
        TickRecord { timestamp: 0.0, bid: 10, ask: 11, order_flow: 5.0 },
        TickRecord { timestamp: 2.5, bid: 11, ask: 12, order_flow: 6.0 },
        TickRecord { timestamp: 9.0, bid: 9, ask: 11, order_flow: 4.0 },
    ];
    let opts = ResampleOptions { step: 1.0, window: Some((1.0, 10.0)), max_gap: Some(3.0) };
    let r = resample(&ticks, &opts).unwrap();
    assert_eq!(r.path.len(), 10);
    assert_eq!(r.path.bid[..3], [10, 10, 11]);
    assert_eq!(r.path.order_flow[0], 0.0);
    assert_eq!(r.path.order_flow[9], -1.0);
    assert_eq!(r.gaps.len(), 1);
    assert_eq!((r.gaps[0].from, r.gaps[0].to), (2.5, 9.0));
}

#[test]
fn parse_errors_carry_line_numbers() {
    let text = "timestamp,bid,ask,order_flow\n0,100,101,0\n1,100,abc,0\n";
    match read_ticks(text.as_bytes(), "ticks.csv") {
        Err(Error::Parse { line, path, .. }) => {
            assert_eq!(line, 3);
            assert_eq!(path, "ticks.csv");
        }
        other => panic!("{other:?}"),
    }
    assert!(matches!(read_ticks("time,bid\n".as_bytes(), "x"), Err(Error::Parse { line: 1, .. })));
    let off_grid = "# dt_obs=1\ntimestamp,bid,ask,order_flow\n0,1,2,0\n1.5,1,2,0\n";
    assert!(matches!(read_dataset(off_grid.as_bytes(), "x"), Err(Error::InvalidInput(_))));
}

#[test]
fn surface_file_has_header_and_config() {
    let d = tempfile::tempdir().unwrap();
    let f = d.path().join("s.csv");
    let mut extra = BTreeMap::new();
    extra.insert("seed".to_string(), "4".to_string());
    write_surface(&sample_result(250).surface, &f, &extra).unwrap();
    let text = fs::read_to_string(&f).unwrap();
    assert!(text.starts_with("# config.seed=4\n"));
    assert!(text.contains("alpha2,sigma2,beta,loglik\n"));
    assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 251);
}
