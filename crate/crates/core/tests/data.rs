mod common;

use std::io::Cursor;

use common::{ols_r2, Mat};
use ddf_core::data::{
    dense_reindex, read_embedding_csv, sliding_window, split_chronological, split_random, split_random_stratified,
    synth_multimodal, windowed, write_embedding_csv, write_latents_csv, zscore_normalize, FeatureStats,
    MultimodalDataset, Record, Schema, SynthConfig, SynthTask, TargetScaler,
};

fn rec(id: &str, label: f64, group: Option<&str>, t: Option<i64>) -> Record {
    Record {
        id: id.into(),
        a: vec![label, 1.0],
        b: vec![0.5],
        label,
        group: group.map(String::from),
        t,
    }
}

fn read(text: &str) -> ddf_core::Result<(MultimodalDataset, ddf_core::data::LoadReport)> {
    read_embedding_csv(Cursor::new(text.as_bytes().to_vec()), &Schema::default())
}

#[test]
fn csv_shape_contract() {
    let text = "id,a_0,a_1,b_0,b_1,b_2,label\nx,1,2,3,4,5,0\ny,1e-3,2,3,4,5,1\nz,-1,2.5,3,4,5,1\n";
    let (ds, report) = read(text).unwrap();
    assert_eq!(ds.len(), 3);
    assert_eq!((ds.dim_a(), ds.dim_b()), (2, 3));
    assert_eq!(report.dropped, 0);
    assert_eq!(ds.records()[1].a, vec![1e-3, 2.0]);
}

#[test]
fn csv_errors_and_drops() {
    let dup = "id,a_0,b_0,label\nx,1,2,0\nx,1,2,1\n";
    let err = read(dup).unwrap_err();
    assert!(err.to_string().contains("duplicate id x"), "{err}");

    let unlabeled = "id,a_0,b_0,label\np,1,2,0\nq,1,2,\nr,1,2,1\ns,1,2,0\n";
    let (ds, report) = read(unlabeled).unwrap();
    assert_eq!((ds.len(), report.dropped), (3, 1));

    assert!(read("id,a_0,label\nx,1,0\n").is_err());
    assert!(read("id,a_0,b_0\nx,1,0\n").is_err());
    assert!(read("id,a_0,a_2,b_0,label\nx,1,1,0,0\n").is_err());
    assert!(read("id,a_0,b_0,label\nx,1,0\ny,1,2,0\n").is_err());
    assert!(read("id,a_0,b_0,label\nx,oops,0,1\n").is_err());
}

#[test]
fn csv_round_trip() {
    let mut cfg = SynthConfig::new(SynthTask::Temporal { series: 2, steps: 5 }, 3);
    cfg.d_a = 3;
    cfg.d_b = 2;
    let ds = synth_multimodal(&cfg).unwrap().dataset;
    let mut buf = Vec::new();
    write_embedding_csv(&mut buf, &ds).unwrap();
    let (back, _) = read_embedding_csv(Cursor::new(buf.clone()), &Schema::default()).unwrap();
    assert_eq!(back, ds);
    let mut again = Vec::new();
    write_embedding_csv(&mut again, &back).unwrap();
    assert_eq!(buf, again);
}

#[test]
fn latent_sidecar_has_one_row_per_record() {
    let out = synth_multimodal(&SynthConfig::new(SynthTask::Regression, 1)).unwrap();
    let mut buf = Vec::new();
    write_latents_csv(&mut buf, &out.latents).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().count(), 2001);
    assert!(text.starts_with("id,s_0,s_1,s_2,s_3,ua_0"));
}

fn classes(n0: usize, n1: usize) -> MultimodalDataset {
    let recs = (0..n0 + n1)
        .map(|i| rec(&format!("r{i}"), if i < n0 { 0.0 } else { 1.0 }, None, None))
        .collect();
    MultimodalDataset::new(recs).unwrap()
}

fn count(ds: &MultimodalDataset, c: usize) -> usize {
    ds.classes().unwrap().iter().filter(|&&k| k == c).count()
}

#[test]
fn stratified_split_examples() {
    let ds = classes(50, 50);
    let (train, test) = split_random_stratified(&ds, 0.7, 1).unwrap();
    assert_eq!((train.len(), test.len()), (70, 30));
    assert_eq!((count(&train, 0), count(&train, 1)), (35, 35));
    let (again, _) = split_random_stratified(&ds, 0.7, 1).unwrap();
    assert_eq!(train, again);

    let ds = classes(90, 10);
    let (train, test) = split_random_stratified(&ds, 0.7, 2).unwrap();
    assert!((count(&train, 0) as i64 - 63).abs() <= 1);
    assert!((count(&train, 1) as i64 - 7).abs() <= 1);
    let mut ids: Vec<String> = train.records().iter().chain(test.records()).map(|r| r.id.clone()).collect();
    ids.sort();
    ids.dedup();
    assert_eq!(ids.len(), 100);

    assert!(split_random_stratified(&classes(5, 1), 0.7, 1).is_err());
}

#[test]
fn random_split_is_disjoint_and_exhaustive() {
    let ds = synth_multimodal(&SynthConfig::new(SynthTask::Regression, 4)).unwrap().dataset;
    let (train, test) = split_random(&ds, 0.8, 9).unwrap();
    assert_eq!(train.len() + test.len(), ds.len());
    let train_ids: std::collections::HashSet<_> = train.records().iter().map(|r| &r.id).collect();
    assert!(test.records().iter().all(|r| !train_ids.contains(&r.id)));
}

fn series(name: &str, len: i64) -> Vec<Record> {
    (0..len).map(|t| rec(&format!("{name}{t}"), t as f64, Some(name), Some(t))).collect()
}

#[test]
fn chronological_split_examples() {
    let ds = MultimodalDataset::new(series("x", 10)).unwrap();
    let (train, test) = split_chronological(&ds, 0.8).unwrap();
    let ts = |d: &MultimodalDataset| d.records().iter().map(|r| r.t.unwrap()).collect::<Vec<_>>();
    assert_eq!(ts(&train), (0..8).collect::<Vec<_>>());
    assert_eq!(ts(&test), vec![8, 9]);

    let mut shuffled = series("x", 10);
    shuffled.reverse();
    shuffled.swap(2, 7);
    let (t2, s2) = split_chronological(&MultimodalDataset::new(shuffled).unwrap(), 0.8).unwrap();
    assert_eq!((t2, s2), (train, test));

    let two = MultimodalDataset::new([series("x", 10), series("y", 10)].concat()).unwrap();
    let (train, test) = split_chronological(&two, 0.8).unwrap();
    for g in ["x", "y"] {
        let n = |d: &MultimodalDataset| d.records().iter().filter(|r| r.group.as_deref() == Some(g)).count();
        assert_eq!((n(&train), n(&test)), (8, 2));
    }

    let no_t = MultimodalDataset::new(vec![rec("a", 0.0, None, None), rec("b", 0.0, None, None)]).unwrap();
    assert!(split_chronological(&no_t, 0.8).is_err());
    let repeated = MultimodalDataset::new(vec![rec("a", 0.0, None, Some(1)), rec("b", 0.0, None, Some(1))]).unwrap();
    assert!(split_chronological(&repeated, 0.8).is_err());
}

#[test]
fn sliding_window_examples() {
    let s = series("x", 5);
    let pairs = sliding_window(&s, 3).unwrap();
    assert_eq!(pairs.len(), 2);
    assert_eq!(pairs[0].a, vec![0.0, 1.0, 1.0, 1.0, 2.0, 1.0]);
    assert_eq!(pairs[0].label, 3.0);

    let pairs = sliding_window(&series("x", 4), 3).unwrap();
    assert_eq!(pairs.len(), 1);
    assert_eq!(pairs[0].label, 3.0);
    assert!(sliding_window(&series("x", 3), 3).is_err());
}

#[test]
fn windows_reconstruct_series() {
    let s = series("x", 12);
    let pairs = sliding_window(&s, 3).unwrap();
    // the first window plus every target recovers the labels in order
    let mut rebuilt: Vec<f64> = pairs[0].a.chunks(2).map(|c| c[0]).collect();
    rebuilt.extend(pairs.iter().map(|p| p.label));
    assert_eq!(rebuilt, s.iter().map(|r| r.label).collect::<Vec<_>>());
    for w in pairs.windows(2) {
        assert_eq!(&w[0].a[2..], &w[1].a[..4]);
    }
}

#[test]
fn windows_stay_inside_each_split() {
    let ds = MultimodalDataset::new([series("x", 20), series("y", 20)].concat()).unwrap();
    let (train, test) = split_chronological(&ds, 0.8).unwrap();
    let (wtrain, wtest) = (windowed(&train, 3).unwrap(), windowed(&test, 3).unwrap());
    assert_eq!(wtrain.len(), 2 * (16 - 3));
    assert_eq!(wtest.len(), 2 * (4 - 3));
    for r in wtest.records() {
        // features come from t >= 16 only
        assert!(r.a.chunks(2).all(|c| c[0] >= 16.0));
    }
}

#[test]
fn dense_reindex_fills_gaps() {
    let recs = vec![rec("p", 2.0, Some("g"), Some(0)), rec("q", 5.0, Some("g"), Some(3))];
    let ds = dense_reindex(&MultimodalDataset::new(recs).unwrap()).unwrap();
    assert_eq!(ds.len(), 4);
    assert_eq!(ds.values(), vec![2.0, 0.0, 0.0, 5.0]);
}

#[test]
fn zscore_examples() {
    let mk = |vals: &[(f64, f64)]| {
        MultimodalDataset::new(
            vals.iter()
                .enumerate()
                .map(|(i, &(x, c))| Record {
                    id: format!("{i}"),
                    a: vec![x, c],
                    b: vec![x],
                    label: 0.0,
                    group: None,
                    t: None,
                })
                .collect(),
        )
        .unwrap()
    };
    let mut train = mk(&[(0.0, 4.0), (2.0, 4.0)]);
    let mut test = mk(&[(3.0, 7.0)]);
    let stats = zscore_normalize(&mut train, &mut [&mut test]).unwrap();
    assert_eq!((stats.mean_a[0], stats.std_a[0]), (1.0, 1.0));
    assert_eq!(train.records()[0].a, vec![-1.0, 4.0]);
    assert_eq!(train.records()[1].a, vec![1.0, 4.0]);
    assert_eq!(test.records()[0].a, vec![2.0, 7.0]);

    // statistics come from the training rows only
    let again = FeatureStats::fit(&mk(&[(0.0, 4.0), (2.0, 4.0)])).unwrap();
    assert_eq!(again, stats);
}

#[test]
fn target_scaler_round_trip() {
    let v = [3.0, 5.0, 10.0];
    let s = TargetScaler::fit(&v).unwrap();
    let back = s.invert(&s.forward(&v));
    for (x, y) in back.iter().zip(v) {
        assert!((x - y).abs() < 1e-12);
    }
}

fn rows(ds: &MultimodalDataset, b: bool) -> Mat {
    ds.records().iter().map(|r| if b { r.b.clone() } else { r.a.clone() }).collect()
}

fn mean_cross_r2(ds: &MultimodalDataset) -> f64 {
    let a = rows(ds, false);
    let b = rows(ds, true);
    let d = b[0].len();
    (0..d)
        .map(|j| ols_r2(&a, &b.iter().map(|r| r[j]).collect::<Vec<_>>()))
        .sum::<f64>()
        / d as f64
}

#[test]
fn redundancy_controls_cross_modal_predictability() {
    let mut cfg = SynthConfig::new(SynthTask::Classification { n_classes: 3 }, 5);
    cfg.redundancy = 1.0;
    cfg.noise_std = 0.0;
    let full = mean_cross_r2(&synth_multimodal(&cfg).unwrap().dataset);
    assert!(full > 0.999, "{full}");

    cfg.redundancy = 0.0;
    cfg.noise_std = 0.5;
    let none = mean_cross_r2(&synth_multimodal(&cfg).unwrap().dataset);
    assert!(none < 0.05, "{none}");
}

#[test]
fn synth_is_deterministic_and_labels_follow_latents() {
    let cfg = SynthConfig::new(SynthTask::Classification { n_classes: 3 }, 6);
    let x = synth_multimodal(&cfg).unwrap();
    let y = synth_multimodal(&cfg).unwrap();
    assert_eq!(x.dataset, y.dataset);
    assert_eq!(x.latents, y.latents);
    assert_eq!(x.dataset.n_classes().unwrap(), 3);
    for c in 0..3 {
        assert!(count(&x.dataset, c) > 200);
    }

    let t = synth_multimodal(&SynthConfig::new(SynthTask::Temporal { series: 10, steps: 200 }, 7)).unwrap();
    assert_eq!(t.dataset.len(), 2000);
    assert_eq!(t.dataset.groups().unwrap().iter().filter(|g| *g == "s3").count(), 200);
    // AR(1) paths: adjacent shared latents are strongly correlated
    let s0: Vec<f64> = t.latents.iter().take(200).map(|l| l.s[0]).collect();
    let lag: Mat = s0[..199].iter().map(|v| vec![*v]).collect();
    assert!(ols_r2(&lag, &s0[1..]) > 0.6);
}

#[test]
fn invalid_synth_configs_fail() {
    let mut cfg = SynthConfig::new(SynthTask::Regression, 1);
    cfg.redundancy = 1.5;
    assert!(synth_multimodal(&cfg).is_err());
    cfg.redundancy = 0.5;
    cfg.d_shared = 0;
    assert!(synth_multimodal(&cfg).is_err());
}
