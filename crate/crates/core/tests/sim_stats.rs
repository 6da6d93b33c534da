use zoomground::geometry::{BBox, ImageDims};
use zoomground::inference::{parse_coords, Backend, Mode, Prediction, SimOracle, SimOracleConfig, ViewRequest};

#[test]
fn oracle_noise_matches_configured_scale() {
    let gt = BBox::new(0.4, 0.4, 0.6, 0.6).unwrap();
    let noise = 0.02;
    let oracle = SimOracle::new(SimOracleConfig {
        hidden_gt: gt,
        noise_scale: noise,
        parse_failure_rate: 0.0,
        rng_seed: 77,
        mode: Mode::Box,
        decimals: None,
    })
    .unwrap();
    let dims = ImageDims::new(1000, 1000).unwrap();
    let req = ViewRequest {
        prompt: "p",
        crop: dims.full_crop(),
        image_png: None,
    };
    let n = 10_000;
    let mut dev = Vec::with_capacity(n);
    for _ in 0..n {
        let text = oracle.complete(&req).unwrap();
        match parse_coords(&text, Mode::Box, oracle.convention(), dims, zoomground::geometry::Space::Original).unwrap() {
            Prediction::Box(b) => dev.push(b.xmin - gt.xmin),
            other => panic!("{other:?}"),
        }
    }
    let m = dev.iter().sum::<f64>() / n as f64;
    let sd = (dev.iter().map(|d| (d - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    assert!(m.abs() < 3.0 * noise / (n as f64).sqrt() + 1e-3, "mean {m}");
    assert!((sd - noise).abs() <= 0.1 * noise, "std {sd}");
}
