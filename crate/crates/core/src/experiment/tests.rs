use super::*;

fn tiny(out: &Path) -> ExperimentConfig {
    ExperimentConfig::from_toml(
        &format!(
            r#"
scenario = "tiny"
arch = "A3"
repeats = 2
n_per_class = 2
scale = 0.0001
out = "{}"
labels = {{ scheme = "grid", rows = 2, cols = 2 }}

[synthetic]
height = 24
width = 24
classes = 3
blob_radius = 4.0
seed = 7
"#,
            out.display()
        ),
        None,
    )
    .unwrap()
}

#[test]
fn defaults_apply() {
    let c = ExperimentConfig::from_toml(
        "cube = 'a.hsc'\nground_truth = 'b.hsl'",
        Some(Path::new("/data")),
    )
    .unwrap();
    assert_eq!(c.cube.as_deref(), Some(Path::new("/data/a.hsc")));
    assert_eq!(c.repeats, 15);
    assert_eq!(c.arch, Arch::A9);
    assert_eq!(c.labels, LabelScheme::Blocks { size: 5 });
    assert_eq!(c.preprocess, Preprocess::Center);
    assert_eq!(c.seed_list(), (0..15).collect::<Vec<_>>());
}

#[test]
fn config_errors() {
    for text in [
        "[synthetic]\nrepeats = 0",
        "repeats = 0\n[synthetic]",
        "scale = -1.0\n[synthetic]",
        "bogus = 1\n[synthetic]",
        "cube = 'a'",
        "seeds = []\n[synthetic]",
        "seeds = [1, 1]\n[synthetic]",
        "labels = { scheme = 'hexagons' }\n[synthetic]",
        "labels = { scheme = 'grid', rows = 2 }\n[synthetic]",
        "preprocess = 'whiten'\n[synthetic]",
    ] {
        let err = ExperimentConfig::from_toml(text, None).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{text}: {err}");
    }
}

#[test]
fn label_schemes_parse() {
    let parse = |s: &str| {
        ExperimentConfig::from_toml(&format!("labels = {s}\n[synthetic]"), None)
            .unwrap()
            .labels
    };
    assert_eq!(
        parse("{ scheme = 'stripes', count = 9 }"),
        LabelScheme::Stripes { count: 9 }
    );
    assert_eq!(
        parse("{ scheme = 'gt-split', rows = 2, cols = 5 }"),
        LabelScheme::GtSplit {
            rows: 2,
            cols: 5,
            min_pixels: 1
        }
    );
    assert_eq!(
        parse("{ scheme = 'gt-join', file = 'g.txt' }"),
        LabelScheme::GtJoin {
            file: "g.txt".into()
        }
    );
}

#[test]
fn explicit_seeds_win() {
    let c = ExperimentConfig::from_toml("seeds = [9, 3]\nrepeats = 4\n[synthetic]", None).unwrap();
    assert_eq!(c.seed_list(), vec![9, 3]);
}

#[test]
fn median_prefers_lower_middle() {
    assert_eq!(median_index(&[0.3, 0.1, 0.2]), 2);
    assert_eq!(median_index(&[0.4, 0.1, 0.3, 0.2]), 3);
    assert_eq!(median_index(&[0.5, 0.5, 0.5]), 1);
    assert_eq!(median_index(&[0.7]), 0);
}

#[test]
fn workers_are_capped() {
    assert_eq!(worker_count(0, 5), 1);
    assert_eq!(worker_count(8, 3), 3);
}

#[test]
fn parallel_results_keep_order() {
    let out = run_parallel(20, 4, |i| Ok(i * i)).unwrap();
    assert_eq!(out, (0..20).map(|i| i * i).collect::<Vec<_>>());
    let err = run_parallel(20, 3, |i| {
        if i == 5 {
            Err(Error::Data("five".into()))
        } else {
            Ok(i)
        }
    });
    assert!(err.is_err());
}

#[test]
fn sweep_values_rewrite_config() {
    let base = ExperimentConfig::from_toml("out = 'o'\n[synthetic]", None).unwrap();
    let c = sweep_config(&base, SweepAxis::GridDensity, 7);
    assert_eq!(c.labels, LabelScheme::Grid { rows: 7, cols: 7 });
    assert_eq!(c.out, Path::new("o/grid-density-7"));
    assert_eq!(
        sweep_config(&base, SweepAxis::NPerClass, 50).n_per_class,
        50
    );
    assert_eq!("stripes".parse::<SweepAxis>().unwrap(), SweepAxis::Stripes);
    assert!("diagonal".parse::<SweepAxis>().is_err());
}

#[test]
fn gt_split_labels_skip_background() {
    let gt = LabelMap::new(2, 4, vec![1, 1, 0, 2, 1, 1, 0, 2]).unwrap();
    let scheme = LabelScheme::GtSplit {
        rows: 1,
        cols: 2,
        min_pixels: 1,
    };
    assert_eq!(
        scheme.build(&gt).unwrap().labels(),
        &[1, 1, 0, 2, 1, 1, 0, 2]
    );
}

#[test]
fn tiny_experiment_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny(dir.path());
    let outcome = run_experiment(&config).unwrap();
    assert_eq!(outcome.seeds.len(), 2);
    assert!(outcome.p_value.is_some());
    for s in &outcome.seeds {
        assert_eq!(s.selection.class_count(), 3);
        assert!((0.0..=1.0).contains(&s.pretrained.oa));
    }
    let summary = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 3);
    let runs = fs::read_to_string(dir.path().join("runs.csv")).unwrap();
    assert_eq!(runs.lines().count(), 5);
    for f in [
        "logs/seed0_pretrain.log",
        "logs/seed1_scratch.log",
        "checkpoints/seed1_pretrained.hgw",
        "maps/median_pretrained.ppm",
        "maps/median_scratch.hsl",
    ] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let model = ModelState::load(dir.path().join("checkpoints/seed0_scratch.hgw")).unwrap();
    assert_eq!(model.spec().classes, 3);
}

#[test]
fn single_repeat_has_no_p_value() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = tiny(dir.path());
    config.repeats = 1;
    config.checkpoints = false;
    let outcome = run_experiment(&config).unwrap();
    assert_eq!(outcome.p_value, None);
    let summary = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert!(summary.lines().nth(1).unwrap().ends_with(",NA"));
    assert!(!dir.path().join("checkpoints").exists());
}

#[test]
fn workers_do_not_change_results() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let mut one = tiny(a.path());
    one.repeats = 3;
    let mut three = tiny(b.path());
    three.repeats = 3;
    three.workers = 3;
    run_experiment(&one).unwrap();
    run_experiment(&three).unwrap();
    for f in ["summary.csv", "runs.csv"] {
        assert_eq!(
            fs::read(a.path().join(f)).unwrap(),
            fs::read(b.path().join(f)).unwrap()
        );
    }
}

#[test]
fn stage_is_named_on_failure() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = tiny(dir.path());
    config.n_per_class = 10_000;
    let err = run_experiment(&config).unwrap_err();
    assert!(err.to_string().contains("sample selection"), "{err}");
    assert!(matches!(err.root(), Error::InsufficientSamples { .. }));
}

#[test]
fn sweep_rows_follow_input_order() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = tiny(dir.path());
    config.repeats = 2;
    config.maps = false;
    config.checkpoints = false;
    let rows = sweep(&config, SweepAxis::GridDensity, &[3, 2]).unwrap();
    assert_eq!(rows.iter().map(|r| r.value).collect::<Vec<_>>(), vec![3, 2]);
    let csv = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    let lines: Vec<_> = csv.lines().collect();
    assert_eq!(lines[0], SWEEP_HEADER);
    assert!(lines[1].starts_with("grid-density,3x3,A3,2,"));
    assert!(lines[2].starts_with("grid-density,2x2,A3,2,"));
}

#[test]
fn synthetic_seed_is_separate_from_scene() {
    let dir = tempfile::tempdir().unwrap();
    let s = tiny(dir.path()).synthetic.unwrap();
    assert_eq!(s.seed, 7);
    assert_eq!((s.params.height, s.params.classes), (24, 3));
}

#[test]
fn missing_files_are_config_errors() {
    let mut c =
        ExperimentConfig::from_toml("cube = 'nope.hsc'\nground_truth = 'nope.hsl'", None).unwrap();
    c.out = tempfile::tempdir().unwrap().path().to_path_buf();
    assert!(matches!(run_experiment(&c).unwrap_err(), Error::Config(_)));
}

#[test]
fn arms_share_the_selection_and_match_the_experiment() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = tiny(dir.path());
    config.repeats = 1;
    let outcome = run_experiment(&config).unwrap();
    let data = config.load_data().unwrap();
    let labels = config.labels.build(&data.ground_truth).unwrap();
    let pre = pretrain_seed(&config, &data, &labels, 0).unwrap();
    let sel = select_seed(&config, &data, 0).unwrap();
    assert_eq!(sel, outcome.seeds[0].selection);
    let a = finetune_seed(&config, &data, &sel, Some(&pre.model), 0).unwrap();
    let b = finetune_seed(&config, &data, &sel, None, 0).unwrap();
    assert_eq!(a.metrics, outcome.seeds[0].pretrained);
    assert_eq!(b.metrics, outcome.seeds[0].scratch);
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let syn = ExperimentConfig::load(dir.join("synthetic_a3.toml")).unwrap();
    assert_eq!(syn.seed_list().len(), 15);
    assert_eq!(syn.labels, LabelScheme::Grid { rows: 2, cols: 2 });
    let ip = ExperimentConfig::load(dir.join("indian_pines_a3.toml")).unwrap();
    assert_eq!(ip.exclude_bands.len(), 20);
    assert_eq!(ip.keep_classes.len(), 8);
    assert!(ip.cube.unwrap().ends_with("../data/indian_pines.hdr"));
}
