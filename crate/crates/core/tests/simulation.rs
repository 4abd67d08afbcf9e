//! Statistical and end-to-end checks against the seeded simulator.

use std::collections::BTreeMap;
use std::time::Instant;

use statrs::function::gamma::digamma;
use terrafuse::cart::train;
use terrafuse::classify::{classify_stack, render_classmap, Palette};
use terrafuse::collection::ImageCollection;
use terrafuse::compositing::reduce_mean;
use terrafuse::config::Config;
use terrafuse::pipeline::{build_composites, draw_samples, simulate, train_on};
use terrafuse::raster::{ClassMap, WATER};
use terrafuse::samples::{auto_sample, extract_features};
use terrafuse::scene::{generate_sar_series, generate_truth, SceneConfig};

fn scene(size: usize, seed: u64) -> SceneConfig {
    SceneConfig {
        width: size,
        height: size,
        seed,
        ..SceneConfig::default()
    }
}

fn class_values(
    c: &ImageCollection,
    date: usize,
    band: &str,
    truth: &ClassMap,
    class: u8,
) -> Vec<f64> {
    let b = c.items()[date].stack.band(band).unwrap();
    truth
        .labels()
        .iter()
        .zip(&b.values)
        .filter(|(&l, _)| l == class)
        .map(|(_, &v)| f64::from(v))
        .collect()
}

fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (
        m,
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0),
    )
}

#[test]
fn truth_areas_match_target_fractions() {
    let truth = generate_truth(&scene(256, 42)).unwrap();
    let hist = truth.histogram();
    let n = (256 * 256) as f64;
    for (id, target) in [(0usize, 0.3), (1, 0.3), (2, 0.4)] {
        let frac = hist[id] as f64 / n;
        assert!((frac - target).abs() <= 0.02, "class {id}: {frac}");
    }
}

#[test]
fn speckle_coefficient_of_variation_is_one_over_root_looks() {
    for looks in [1.0, 4.0, 5.0] {
        let cfg = SceneConfig {
            looks,
            ..scene(256, 7)
        };
        let truth = generate_truth(&cfg).unwrap();
        let sar = generate_sar_series(&truth, &cfg).unwrap();
        let linear: Vec<f64> = class_values(&sar, 0, "VV", &truth, WATER)
            .into_iter()
            .map(|db| 10f64.powf(db / 10.0))
            .collect();
        let (m, v) = mean_var(&linear);
        let cv = v.sqrt() / m;
        let want = 1.0 / looks.sqrt();
        assert!(
            (cv / want - 1.0).abs() < 0.10,
            "L={looks}: cv {cv} vs {want}"
        );
    }
}

#[test]
fn water_vv_mean_matches_log_gamma_expectation() {
    // E[10 log10 g] for g ~ Gamma(L, 1/L) is 10 (psi(L) - ln L) / ln 10.
    let cfg = scene(256, 11);
    let truth = generate_truth(&cfg).unwrap();
    let sar = generate_sar_series(&truth, &cfg).unwrap();
    let (m, _) = mean_var(&class_values(&sar, 0, "VV", &truth, WATER));
    let l = cfg.looks;
    let expected = -22.0 + 10.0 * (digamma(l) - l.ln()) / std::f64::consts::LN_10;
    assert!((m - expected).abs() < 0.05, "{m} vs {expected}");
    assert!((m + 22.0).abs() <= 0.5, "{m}");
}

#[test]
fn near_infinite_looks_pin_values_to_class_means() {
    let cfg = SceneConfig {
        looks: 1e6,
        ..scene(128, 3)
    };
    let truth = generate_truth(&cfg).unwrap();
    let sar = generate_sar_series(&truth, &cfg).unwrap();
    for spec in &cfg.classes {
        let single = class_values(&sar, 0, "VV", &truth, spec.id);
        let worst = single
            .iter()
            .map(|v| (v - spec.sar_mean_db[0]).abs())
            .fold(0.0, f64::max);
        // sd of 10 log10 g is about 0.0043 dB at L = 1e6.
        assert!(
            worst < 0.025,
            "class {} single date off by {worst}",
            spec.id
        );
    }
    let composite = reduce_mean(&sar, &["VV"]).unwrap();
    for (l, v) in truth.labels().iter().zip(&composite.bands()[0].values) {
        let mean = cfg.classes[*l as usize].sar_mean_db[0];
        assert!((f64::from(*v) - mean).abs() < 0.01);
    }
}

#[test]
fn twelve_date_mean_divides_speckle_variance_by_twelve() {
    let cfg = scene(256, 5);
    let truth = generate_truth(&cfg).unwrap();
    let sar = generate_sar_series(&truth, &cfg).unwrap();
    let (_, single) = mean_var(&class_values(&sar, 0, "VV", &truth, WATER));
    let composite = reduce_mean(&sar, &["VV"]).unwrap();
    let means: Vec<f64> = truth
        .labels()
        .iter()
        .zip(&composite.bands()[0].values)
        .filter(|(&l, _)| l == WATER)
        .map(|(_, &v)| f64::from(v))
        .collect();
    let (_, reduced) = mean_var(&means);
    let ratio = reduced / (single / sar.len() as f64);
    assert!((ratio - 1.0).abs() < 0.2, "ratio {ratio}");
}

#[test]
fn table_one_draw_extracts_201_rows_and_trains_quickly() {
    let cfg = Config::default();
    let sim = simulate(&cfg).unwrap();
    let (training, validation) = draw_samples(&cfg, &sim.truth).unwrap();
    assert_eq!(training.len(), 201);
    assert_eq!(validation.len(), 313);
    assert_eq!(
        validation.class_counts(),
        BTreeMap::from([(0, 129), (1, 95), (2, 89)])
    );
    for pin in training.features.iter().chain(&validation.features) {
        let (c, r) = sim.truth.transform().geo_to_pixel(pin.lon, pin.lat);
        assert_eq!(sim.truth.label_at(c as usize, r as usize), pin.class_id);
    }
    let comps = build_composites(&cfg, &sim.optical, &sim.sar).unwrap();
    let data = extract_features(&training, &comps.fused).unwrap();
    assert_eq!((data.len(), data.dropped), (201, 0));
    let t = Instant::now();
    let tree = train(&data, &cfg.train_params).unwrap();
    assert!(t.elapsed().as_secs_f64() < 1.0);
    let hits = data
        .rows
        .iter()
        .filter(|r| tree.predict(&r.x).unwrap() == r.y)
        .count();
    assert!(hits as f64 / data.len() as f64 >= 0.95);
}

fn noise_free_config() -> Config {
    let mut cfg = Config::default();
    cfg.scene.width = 192;
    cfg.scene.height = 192;
    for c in &mut cfg.scene.classes {
        c.optical_sd = [0.0; 6];
    }
    cfg.scene.cloud_fraction_range = [0.0, 0.0];
    cfg.scene.looks = 1e6;
    cfg
}

#[test]
fn noise_free_scene_is_recovered_exactly() {
    let cfg = noise_free_config();
    let sim = simulate(&cfg).unwrap();
    let comps = build_composites(&cfg, &sim.optical, &sim.sar).unwrap();
    let counts = BTreeMap::from([(0, 5), (1, 5), (2, 5)]);
    let pins = auto_sample(&sim.truth, &counts, 99, 2.0).unwrap();

    let water_pin = pins.features.iter().find(|p| p.class_id == WATER).unwrap();
    let x = extract_features(
        &terrafuse::samples::SampleSet::new(vec![water_pin.clone()], pins.legend.clone()).unwrap(),
        &comps.optical,
    )
    .unwrap();
    let want: Vec<f32> = cfg.scene.classes[0]
        .optical_mean
        .iter()
        .map(|&m| m as f32)
        .collect();
    assert_eq!(x.rows[0].x, want);

    for stack in [&comps.optical, &comps.fused] {
        let tree = train_on(&pins, stack, &cfg.train_params).unwrap();
        let map = classify_stack(&tree, stack).unwrap();
        assert_eq!(map.labels(), sim.truth.labels());
    }
}

#[test]
fn classification_matches_per_pixel_prediction_and_render_counts() {
    let mut cfg = Config::default();
    cfg.scene.width = 128;
    cfg.scene.height = 128;
    cfg.samples.training_counts = vec![20, 20, 20];
    cfg.samples.validation_counts = vec![5, 5, 5];
    let sim = simulate(&cfg).unwrap();
    let (training, _) = draw_samples(&cfg, &sim.truth).unwrap();
    let comps = build_composites(&cfg, &sim.optical, &sim.sar).unwrap();
    let tree = train_on(&training, &comps.optical, &cfg.train_params).unwrap();
    let map = classify_stack(&tree, &comps.optical).unwrap();
    for (i, &label) in map.labels().iter().enumerate() {
        match comps.optical.pixel_vector(i) {
            Some(x) => assert_eq!(label, tree.predict(&x).unwrap()),
            None => assert_eq!(label, terrafuse::raster::NODATA_LABEL),
        }
    }
    let palette = Palette::default();
    let img = render_classmap(&map, &palette).unwrap();
    let hist = map.histogram();
    for (id, rgb) in &palette.colors {
        let n = (0..map.height())
            .flat_map(|r| (0..map.width()).map(move |c| (c, r)))
            .filter(|&(c, r)| img.pixel(c, r) == *rgb)
            .count();
        assert_eq!(n, hist[*id as usize], "class {id}");
    }
}
