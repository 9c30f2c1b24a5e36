use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tsemos::cli::{load_series, read_predictions, RunConfig};
use tsemos::models::{FittedModel, ModelKind};

fn tsemos(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tsemos"))
        .args(args)
        .output()
        .unwrap()
}

fn ok(args: &[&str]) {
    let out = tsemos(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn header(path: &Path) -> String {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .next()
        .unwrap()
        .to_string()
}

#[test]
fn full_pipeline_on_default_simulation() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let out = dir.path().join("out");
    let (d, o) = (data.to_str().unwrap(), out.to_str().unwrap());

    ok(&["simulate", "--out", d]);
    let mut series_files: Vec<_> = fs::read_dir(&data)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.starts_with("station_"))
        .collect();
    series_files.sort();
    assert_eq!(series_files.len(), 3);
    for f in &series_files {
        assert_eq!(
            fs::read_to_string(data.join(f)).unwrap().lines().count(),
            2193
        );
    }
    let cfg = RunConfig {
        data: data.clone(),
        ..Default::default()
    };
    let loaded = load_series(&cfg).unwrap();
    assert_eq!(loaded.len(), 3);
    assert!(loaded.iter().all(|s| s.len() == 2192));

    ok(&["fit", "--data", d, "--out", o]);
    let models = out.join("models");
    assert_eq!(fs::read_dir(&models).unwrap().count(), 18);
    for e in fs::read_dir(&models).unwrap() {
        let text = fs::read_to_string(e.unwrap().path()).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert!(v["meta"]["converged"].is_boolean());
        assert!(v["meta"]["train_crps"].as_f64().unwrap().is_finite());
    }
    let sar = fs::read_dir(&models)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| {
            p.file_name()
                .unwrap()
                .to_str()
                .unwrap()
                .starts_with("SAR-SEMOS_")
        })
        .collect::<Vec<_>>();
    assert_eq!(sar.len(), 3);
    for p in &sar {
        let m = FittedModel::from_json(&fs::read_to_string(p).unwrap()).unwrap();
        let order = m.ar.unwrap().order();
        assert!((1..=3).contains(&order), "{}: p = {order}", p.display());
    }

    // refit one model into a second directory
    let again = dir.path().join("again");
    ok(&[
        "fit",
        "--data",
        d,
        "--out",
        again.to_str().unwrap(),
        "--models",
        "SAR-SEMOS",
    ]);
    for p in &sar {
        let twin = again.join("models").join(p.file_name().unwrap());
        assert_eq!(fs::read(p).unwrap(), fs::read(twin).unwrap());
    }

    ok(&["predict", "--data", d, "--out", o]);
    let rows = read_predictions(&out.join("predictions.csv")).unwrap();
    assert_eq!(rows.len(), 366 * 3 * 6);
    assert!(rows.iter().all(|r| r.sigma > 0.0));
    let mu = |kind: ModelKind| -> BTreeMap<(String, chrono::NaiveDate), f64> {
        rows.iter()
            .filter(|r| r.model == kind)
            .map(|r| ((r.station_id.clone(), r.date), r.mu))
            .collect()
    };
    let (dar, semos) = (mu(ModelKind::DarSemos), mu(ModelKind::Semos));
    let same = dar.iter().filter(|(k, v)| semos[*k] == **v).count();
    assert!(same < dar.len() / 100, "{same} identical means");

    ok(&["verify", "--data", d, "--out", o]);
    assert_eq!(
        header(&out.join("scores.csv")),
        "method,station,lead_time_h,n,mean_crps,mean_logs,rmse,mean_width,coverage"
    );
    assert!(header(&out.join("significance.csv")).starts_with("method,"));
    assert!(header(&out.join("pit.csv"))
        .starts_with("method,station,lead_time_h,n,pit_variance,ks_pvalue,bin1,"));
    assert_eq!(
        header(&out.join("residual_dependence.csv")),
        "model,lag,n_stations,plain_pct,squared_pct"
    );

    assert_eq!(mean_crps_by_method(&out.join("scores.csv")).len(), 7);
    let sig = fs::read_to_string(out.join("significance.csv")).unwrap();
    let names: Vec<&str> = sig.lines().next().unwrap().split(',').skip(1).collect();
    for (i, line) in sig.lines().skip(1).enumerate() {
        let v: Vec<f64> = line
            .split(',')
            .skip(1)
            .map(|x| x.parse().unwrap())
            .collect();
        assert_eq!(v.len(), names.len());
        assert_eq!(v[i], 0.0);
    }
}

fn mean_crps_by_method(scores: &Path) -> BTreeMap<String, f64> {
    let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    let text = fs::read_to_string(scores).unwrap();
    for line in text.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let e = sums.entry(f[0].to_string()).or_default();
        e.0 += f[4].parse::<f64>().unwrap();
        e.1 += 1;
    }
    sums.into_iter()
        .map(|(k, (s, n))| (k, s / n as f64))
        .collect()
}

// SAR-SEMOS gains under one percent over DAR-SEMOS on this process, which a
// single validation year at three stations does not resolve.
#[test]
fn sar_semos_ranks_first_over_ten_stations() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "n_stations = 10\n").unwrap();
    let data = dir.path().join("data");
    let out = dir.path().join("out");
    let c = cfg.to_str().unwrap();
    let (d, o) = (data.to_str().unwrap(), out.to_str().unwrap());
    ok(&["simulate", "--config", c, "--out", d]);
    ok(&["fit", "--config", c, "--data", d, "--out", o]);
    ok(&["predict", "--config", c, "--data", d, "--out", o]);
    ok(&["verify", "--config", c, "--data", d, "--out", o]);
    let means = mean_crps_by_method(&out.join("scores.csv"));
    assert_eq!(means.len(), 7);
    let best = means.iter().min_by(|a, b| a.1.total_cmp(b.1)).unwrap();
    assert_eq!(best.0, "SAR-SEMOS", "{means:?}");
    assert!(means["raw"] > means["EMOS"]);
}

#[test]
fn exit_codes() {
    let out = tsemos(&["--help"]);
    assert_eq!(out.status.code(), Some(0));

    let out = tsemos(&["fit", "--seed", "abc"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error[E_CONFIG]"));

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "models = NOPE\n").unwrap();
    let out = tsemos(&["fit", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));

    let missing = dir.path().join("nothing");
    let out = tsemos(&[
        "fit",
        "--data",
        missing.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error[E_"));

    let out = tsemos(&["explode"]);
    assert_eq!(out.status.code(), Some(2));
}
