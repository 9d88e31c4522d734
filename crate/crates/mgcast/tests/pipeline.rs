use std::io::Write;

use mgcast::cli::cmd_predict;
use mgcast::config::{DataConfig, RunConfig, SyntheticConfig, SyntheticKind, TrainConfig};
use mgcast::data::{self, Split};
use mgcast::experiment;
use mgcast::train::{self, mse_loss, train_step, PreparedData};
use mgcast::Checkpoint;
use mgcast_core::optim::AdamState;
use mgcast_core::{forward_batch, InitSpec, ModelConfig, ModelParams};

fn synthetic(len: usize) -> DataConfig {
    DataConfig {
        synthetic: Some(SyntheticConfig {
            kind: SyntheticKind::TwoTone,
            len,
        }),
        ..Default::default()
    }
}

#[test]
fn single_small_step_rarely_increases_loss() {
    let model = ModelConfig::fv_mgnet(32, 16, vec![2, 1, 1]);
    let cfg = TrainConfig {
        learning_rate: 1e-4,
        ..Default::default()
    };
    let run = RunConfig::new(synthetic(600), model.clone(), cfg.clone(), 0);
    let data = PreparedData::load(&run).unwrap();
    let set = data.windows(Split::Train, &model).unwrap();
    let batch: Vec<usize> = (0..16).map(|k| k * 17 % set.len()).collect();
    let (x, t) = set.batch(&batch);

    let mut descended = 0;
    for seed in 0..100 {
        let mut params = ModelParams::init(&model, InitSpec::new(seed)).unwrap();
        let mut state = AdamState::new(params.len());
        let before = train_step(&mut params, &mut state, &model, &cfg, &x, &t).unwrap();
        let (after, _) = mse_loss(&forward_batch(&params, &model, &x).unwrap(), &t);
        descended += usize::from(after <= before);
    }
    assert!(
        descended >= 95,
        "loss decreased for only {descended}/100 seeds"
    );
}

#[test]
fn identical_segments_score_identically() {
    // Identical train and test segments: a periodic series whose period
    // divides the split offset.
    let mut run = RunConfig::new(
        synthetic(960),
        ModelConfig::fv_mgnet(32, 16, vec![2, 2]),
        TrainConfig {
            max_epochs: 3,
            ..Default::default()
        },
        5,
    );
    run.data.split = Some(data::SplitSpec {
        train: 0.4,
        val: 0.2,
        test: 0.4,
    });
    let data = PreparedData::load(&run).unwrap();
    assert_eq!(data.ranges.train.len(), data.ranges.test.len());
    assert_eq!(data.ranges.test.start % 96, 0);
    let ck = train::train(&run, &data).unwrap().checkpoint;
    let tr = train::evaluate(&ck, &data, Split::Train).unwrap();
    let te = train::evaluate(&ck, &data, Split::Test).unwrap();
    assert!(
        (tr.mse - te.mse).abs() <= 1e-9 * tr.mse.max(1.0),
        "{} vs {}",
        tr.mse,
        te.mse
    );
}

fn trained_on_csv(dir: &std::path::Path, output_len: usize) -> (std::path::PathBuf, RunConfig) {
    let csv = dir.join("series.csv");
    let mut f = std::fs::File::create(&csv).unwrap();
    writeln!(f, "date,load,temp").unwrap();
    for t in 0..2400 {
        let x = t as f64;
        writeln!(
            f,
            "d{t},{},{}",
            10.0 + 3.0 * (x / 7.0).sin(),
            -2.0 + 0.5 * (x / 19.0).cos()
        )
        .unwrap();
    }
    drop(f);
    let data = DataConfig {
        path: Some("series.csv".into()),
        ..Default::default()
    };
    let mut run = RunConfig::new(
        data,
        ModelConfig::fv_mgnet(32, output_len, vec![1, 1]),
        TrainConfig {
            max_epochs: 1,
            ..Default::default()
        },
        2,
    );
    run.base_dir = Some(dir.to_path_buf());
    let prepared = PreparedData::load(&run).unwrap();
    let art = experiment::train_run(&run, &prepared, &dir.join("runs")).unwrap();
    (art.checkpoint, run)
}

fn parse(csv: &str) -> Vec<(String, f64, f64)> {
    csv.lines()
        .skip(1)
        .map(|l| {
            let mut it = l.split(',');
            (
                it.next().unwrap().to_owned(),
                it.next().unwrap().parse().unwrap(),
                it.next().unwrap().parse().unwrap(),
            )
        })
        .collect()
}

#[test]
fn predict_export_aligns_with_raw_series() {
    let dir = tempfile::tempdir().unwrap();
    let (ckpt_path, _) = trained_on_csv(dir.path(), 192);
    let ckpt = Checkpoint::load(&ckpt_path).unwrap();
    let raw = data::load_csv(&dir.path().join("series.csv"), Default::default()).unwrap();
    let test_start = data::split(raw.len(), data::SplitSpec::STANDARD, 1)
        .unwrap()
        .test
        .start;

    let (window, channel) = (5, 1);
    let plain = parse(
        &cmd_predict(
            &ckpt_path,
            Split::Test,
            Some(window),
            None,
            channel,
            false,
            None,
        )
        .unwrap(),
    );
    let denorm = parse(
        &cmd_predict(
            &ckpt_path,
            Split::Test,
            Some(window),
            None,
            channel,
            true,
            None,
        )
        .unwrap(),
    );
    assert_eq!(plain.len(), 192);
    assert_eq!(denorm.len(), 192);

    let first = test_start + window + 32;
    for (k, ((t, z, p), (t2, truth, pred))) in plain.iter().zip(&denorm).enumerate() {
        assert_eq!(t, &format!("d{}", first + k));
        assert_eq!(t, t2);
        assert_eq!(*truth, raw.values.get(first + k, channel));
        assert!(
            (ckpt.standardizer.invert(channel, *z) - truth).abs() <= 1e-9 * truth.abs().max(1.0)
        );
        assert!((ckpt.standardizer.apply(channel, *pred) - p).abs() <= 1e-9 * p.abs().max(1.0));
    }

    let by_time = cmd_predict(
        &ckpt_path,
        Split::Test,
        None,
        Some(&format!("d{first}")),
        channel,
        false,
        None,
    )
    .unwrap();
    assert_eq!(parse(&by_time), plain);
    let err =
        cmd_predict(&ckpt_path, Split::Test, Some(100_000), None, 0, false, None).unwrap_err();
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn rerun_reuses_outputs_without_touching_them() {
    let dir = tempfile::tempdir().unwrap();
    let (ckpt_path, run) = trained_on_csv(dir.path(), 8);
    let before = std::fs::read(&ckpt_path).unwrap();
    let modified = std::fs::metadata(&ckpt_path).unwrap().modified().unwrap();
    let prepared = PreparedData::load(&run).unwrap();
    let again = experiment::train_run(&run, &prepared, &dir.path().join("runs")).unwrap();
    assert!(again.reused);
    assert_eq!(again.checkpoint, ckpt_path);
    assert_eq!(std::fs::read(&ckpt_path).unwrap(), before);
    assert_eq!(
        std::fs::metadata(&ckpt_path).unwrap().modified().unwrap(),
        modified
    );
}
