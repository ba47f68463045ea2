use flamesense_core::ann::{TrainConfig, TrainMethod};
use flamesense_core::dataset::{split, sync, FrameIndex, LambdaLog, SplitSpec, Standardizer, SyncedDataset};
use flamesense_core::eval::fit_once;
use flamesense_core::features::{FeatureKind, Featurizer};
use flamesense_core::flame_model::{fit_ideal_model, IdealFlameModel};
use flamesense_core::imaging::{extract_channel, grid_windows, ChannelId, GridSpec, RgbImage};
use flamesense_core::predictor::Predictor;
use flamesense_core::similarity::{feat_naive_bayes, feat_sum_similarity, pdf_uni, FeatureMethod, FeatureSpec};
use flamesense_core::synth::{ideal_reference_frames, ideal_reference_lambdas, write_session, RigConfig};
use proptest::prelude::*;

fn ideal_model() -> IdealFlameModel {
    let cfg = RigConfig {
        image_size: 32,
        ..RigConfig::default()
    };
    fit_ideal_model(&ideal_reference_frames(&cfg, 6).unwrap(), &ideal_reference_lambdas(6).unwrap()).unwrap()
}

fn image(h: usize, w: usize) -> impl Strategy<Value = RgbImage> {
    prop::collection::vec(prop::array::uniform3(any::<u8>()), h * w)
        .prop_map(move |px| RgbImage::new(h, w, px).unwrap())
}

fn sized_image() -> impl Strategy<Value = (RgbImage, GridSpec)> {
    (1usize..=4, 1usize..=4, 1usize..=5, 1usize..=5).prop_flat_map(|(gr, gc, wh, ww)| {
        image(gr * wh, gc * ww).prop_map(move |img| (img, GridSpec::new(gr, gc).unwrap()))
    })
}

/// Per-window sums of `score(pixel)` built from the windows of the red plane,
/// which carry positions only.
fn window_oracle(img: &RgbImage, grid: GridSpec, score: impl Fn([u8; 3]) -> f64) -> Vec<f64> {
    grid_windows(&extract_channel(img, ChannelId::R), grid)
        .unwrap()
        .iter()
        .map(|w| {
            let mut acc = 0.0;
            for r in 0..w.height {
                for c in 0..w.width {
                    acc += score(img.pixel(w.top + r, w.left + c));
                }
            }
            acc
        })
        .collect()
}

fn close(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-12 * y.abs().max(1e-300))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn sum_similarity_matches_pixel_oracle((img, grid) in sized_image()) {
        let model = ideal_model();
        let channels = [ChannelId::B, ChannelId::R, ChannelId::G];
        let got = feat_sum_similarity(&img, &model, &channels, grid).unwrap();
        let mut want = Vec::new();
        for ch in channels {
            let s = model.stats(ch);
            want.extend(window_oracle(&img, grid, |p| pdf_uni(ch.value(p), s.mean, s.std).unwrap()));
        }
        prop_assert!(close(&got.values, &want));
    }

    #[test]
    fn naive_bayes_matches_pixel_oracle((img, grid) in sized_image()) {
        let model = ideal_model();
        let channels = [ChannelId::R, ChannelId::G];
        let got = feat_naive_bayes(&img, &model, &channels, grid).unwrap();
        let want = window_oracle(&img, grid, |p| {
            channels
                .iter()
                .map(|&ch| {
                    let s = model.stats(ch);
                    pdf_uni(ch.value(p), s.mean, s.std).unwrap()
                })
                .product()
        });
        prop_assert!(close(&got.values, &want));
    }

    #[test]
    fn standardizer_round_trips(rows in prop::collection::vec(prop::collection::vec(-1e3f64..1e3, 4), 2..30)) {
        let s = Standardizer::fit(&rows).unwrap();
        for row in &rows {
            let z = s.apply_row(row).unwrap();
            let back = s.invert_row(&z).unwrap();
            for (a, b) in back.iter().zip(row) {
                prop_assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0));
            }
        }
    }

    #[test]
    fn split_is_a_seeded_partition(count in 1usize..3000, seed in any::<u64>()) {
        let a = split(count, &SplitSpec::standard(seed)).unwrap();
        prop_assert_eq!(&a, &split(count, &SplitSpec::standard(seed)).unwrap());
        let mut all: Vec<usize> = a.train.iter().chain(&a.validation).chain(&a.test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..count).collect::<Vec<_>>());
    }
}

#[test]
fn library_pipeline_predictor_reproduces_fit() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RigConfig {
        image_size: 48,
        duration_s: 120.0,
        seed: 21,
        ..RigConfig::default()
    };
    write_session(&cfg, dir.path(), 8).unwrap();
    let frames = FrameIndex::read_csv(&dir.path().join("frame_index.csv")).unwrap();
    let log = LambdaLog::read_csv(&dir.path().join("lambda_log.csv")).unwrap();
    let dataset: SyncedDataset = sync(&frames, &log).unwrap().dataset;
    assert_eq!(dataset.len(), frames.len());

    let refs = ideal_reference_frames(&cfg, 8).unwrap();
    let model = fit_ideal_model(&refs, &ideal_reference_lambdas(8).unwrap()).unwrap();
    let kind = FeatureKind::Similarity(FeatureSpec::new(
        FeatureMethod::SumSim,
        ChannelId::RGB.to_vec(),
        GridSpec::new(4, 4).unwrap(),
    ));
    let featurizer = Featurizer::new(kind, Some(model), None).unwrap();
    let paths: Vec<_> = dataset.samples.iter().map(|s| dir.path().join(&s.image_path)).collect();
    let features = featurizer.extract_files(&paths).unwrap();
    let targets = dataset.targets();

    let fit = fit_once(&features, &targets, &TrainConfig::new(TrainMethod::Scg, 4)).unwrap();
    assert!(fit.metrics.test.r > 0.9, "test R {}", fit.metrics.test.r);
    let predictor = Predictor::new(featurizer, fit.standardizer.clone(), fit.model.clone()).unwrap();
    let reloaded = Predictor::from_text(&predictor.to_text()).unwrap();
    for (i, path) in paths.iter().enumerate().step_by(17) {
        let p = reloaded.predict_image(&RgbImage::load(path).unwrap()).unwrap();
        assert_eq!(p, fit.predictions[i]);
    }
}
