use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use mipcls::classhead::class_weights;
use mipcls::evalkit::{read_predictions, roc_auc, stratified_kfold, write_predictions};
use mipcls::phantom::PhantomConfig;
use mipcls::pipeline::{
    blob_path, cmd_augment_preview, cmd_ensemble, cmd_evaluate, cmd_phantom, cmd_predict, cmd_preprocess, cmd_split,
    cmd_train, evaluate_predictions, AuditedLabels, LabelSource, Manifest, PipelineConfig, FOLDS_FILE,
};
use mipcls::{Error, LesionClass, Prediction, Side, Weighting};
use tempfile::TempDir;

fn config() -> PipelineConfig {
    PipelineConfig::from_toml("seed = 3\n[train]\nlr_max = 0.01\n").unwrap()
}

struct Fixture {
    _tmp: TempDir,
    manifest: Manifest,
    run: PathBuf,
}

/// 30 phantom studies, preprocessed and split once for the whole file.
fn fixture() -> &'static Fixture {
    static FIXTURE: OnceLock<Fixture> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let tmp = TempDir::new().unwrap();
        let cfg = config();
        let path = cmd_phantom(30, cfg.seed, &cfg.phantom, &tmp.path().join("data")).unwrap();
        let manifest = Manifest::read(&path).unwrap();
        let run = tmp.path().join("run");
        let report = cmd_preprocess(&manifest, &cfg, &run, 4).unwrap();
        assert!(report.is_clean(), "{:?}", report.failures);
        cmd_split(&manifest, cfg.k, cfg.seed, &run).unwrap();
        Fixture { _tmp: tmp, manifest, run }
    })
}

fn copy_dir(from: &Path, to: &Path) {
    std::fs::create_dir_all(to).unwrap();
    for e in std::fs::read_dir(from).unwrap() {
        let p = e.unwrap().path();
        let dest = to.join(p.file_name().unwrap());
        if p.is_dir() {
            copy_dir(&p, &dest);
        } else {
            std::fs::copy(&p, &dest).unwrap();
        }
    }
}

#[test]
fn phantom_single_study_layout() {
    let tmp = TempDir::new().unwrap();
    let cfg = PhantomConfig::default();
    let path = cmd_phantom(1, 0, &cfg, tmp.path()).unwrap();
    let m = Manifest::read(&path).unwrap();
    assert_eq!(m.len(), 1);
    let row = &m.rows()[0];
    assert!(row.post_paths.len() >= 2);
    for p in std::iter::once(&row.pre_path).chain(&row.post_paths).chain(row.mask_path.iter()) {
        assert!(m.resolve(p).exists(), "{p}");
    }
    assert!(matches!(cmd_phantom(0, 0, &cfg, tmp.path()), Err(Error::Config(_))));
}

#[test]
fn preprocess_writes_two_blobs_per_study_and_is_idempotent() {
    let tmp = TempDir::new().unwrap();
    let cfg = config();
    let path = cmd_phantom(2, 1, &cfg.phantom, &tmp.path().join("data")).unwrap();
    let m = Manifest::read(&path).unwrap();
    let run = tmp.path().join("run");
    let report = cmd_preprocess(&m, &cfg, &run, 2).unwrap();
    assert!(report.is_clean());
    assert_eq!(report.written.len(), 4);
    let snapshot: Vec<Vec<u8>> = m
        .rows()
        .iter()
        .flat_map(|r| Side::BOTH.map(|s| std::fs::read(blob_path(&run, &r.patient_id, s)).unwrap()))
        .collect();
    cmd_preprocess(&m, &cfg, &run, 1).unwrap();
    let again: Vec<Vec<u8>> = m
        .rows()
        .iter()
        .flat_map(|r| Side::BOTH.map(|s| std::fs::read(blob_path(&run, &r.patient_id, s)).unwrap()))
        .collect();
    assert_eq!(snapshot, again);
}

#[test]
fn preprocess_isolates_failing_studies() {
    let tmp = TempDir::new().unwrap();
    let cfg = config();
    let path = cmd_phantom(3, 2, &cfg.phantom, &tmp.path().join("data")).unwrap();
    let m = Manifest::read(&path).unwrap();
    let broken = &m.rows()[1];
    std::fs::remove_file(m.resolve(&broken.post_paths[0])).unwrap();
    let run = tmp.path().join("run");
    let report = cmd_preprocess(&m, &cfg, &run, 2).unwrap();
    assert!(!report.is_clean());
    assert_eq!(report.failures.len(), 1);
    assert_eq!(report.failures[0].patient_id, broken.patient_id);
    assert_eq!(report.written.len(), 4);
    assert!(!blob_path(&run, &broken.patient_id, Side::Left).exists());
    let on_disk: serde_json::Value =
        serde_json::from_slice(&std::fs::read(run.join("preprocess_report.json")).unwrap()).unwrap();
    assert_eq!(on_disk["failures"][0]["patient_id"], broken.patient_id.as_str());
}

#[test]
fn split_delegates_and_is_deterministic() {
    let f = fixture();
    let tmp = TempDir::new().unwrap();
    let plan = cmd_split(&f.manifest, 5, 3, tmp.path()).unwrap();
    assert_eq!(plan, stratified_kfold(&f.manifest.stratification(), 5, 3).unwrap());
    let bytes = std::fs::read(tmp.path().join(FOLDS_FILE)).unwrap();
    assert_eq!(bytes, std::fs::read(f.run.join(FOLDS_FILE)).unwrap());
    assert!(matches!(cmd_split(&f.manifest, 31, 3, tmp.path()), Err(Error::TooFewPatients { patients: 30, k: 31 })));
}

#[test]
fn training_reads_only_training_labels() {
    let f = fixture();
    let tmp = TempDir::new().unwrap();
    let run = tmp.path().join("run");
    copy_dir(&f.run, &run);
    let plan: mipcls::FoldPlan = serde_json::from_slice(&std::fs::read(run.join(FOLDS_FILE)).unwrap()).unwrap();
    for fold in 0..plan.k {
        let audited = AuditedLabels::new(&f.manifest);
        let records = cmd_train(&audited, &config(), &run, Weighting::Inverse, &[fold]).unwrap();
        let train: std::collections::BTreeSet<String> = plan.training(fold).into_iter().map(String::from).collect();
        let accessed = audited.accessed();
        assert_eq!(accessed, train, "fold {fold}");
        assert!(plan.validation(fold).iter().all(|p| !accessed.contains(*p)));

        let mut counts = [0usize; 3];
        for p in &train {
            for s in Side::BOTH {
                counts[f.manifest.label(p, s).unwrap().index()] += 1;
            }
        }
        let r = &records[0];
        assert_eq!(r.class_counts, counts);
        assert_eq!(r.class_weights, class_weights(counts).unwrap().weights);
    }
}

#[test]
fn folds_reach_ninety_percent_and_ensemble_runs() {
    let f = fixture();
    let tmp = TempDir::new().unwrap();
    let run = tmp.path().join("run");
    copy_dir(&f.run, &run);
    let cfg = config();
    let mut files = Vec::new();
    for w in Weighting::BOTH {
        cmd_train(&f.manifest, &cfg, &run, w, &[]).unwrap();
        for fold in 0..cfg.k {
            let (path, preds) = cmd_predict(&cfg, &run, w, fold, false).unwrap();
            let report = evaluate_predictions(&f.manifest, &preds).unwrap();
            assert!(report.accuracy >= 0.9, "{} fold {fold}: accuracy {}", w.as_str(), report.accuracy);
            files.push(path);
        }
    }
    let out = run.join("predictions/ensemble.csv");
    let merged = cmd_ensemble(&files, &out).unwrap();
    assert_eq!(merged.len(), 60);
    let report = cmd_evaluate(&f.manifest, &out, &run.join("metrics/ensemble.json")).unwrap();
    assert!(report.accuracy >= 0.9);

    // training is deterministic
    let before = std::fs::read(run.join("models/natural/fold0/W.mct")).unwrap();
    cmd_train(&f.manifest, &cfg, &run, Weighting::Natural, &[0]).unwrap();
    assert_eq!(before, std::fs::read(run.join("models/natural/fold0/W.mct")).unwrap());

    // every blob, including training patients
    let (_, all) = cmd_predict(&cfg, &run, Weighting::Natural, 0, true).unwrap();
    assert_eq!(all.len(), 60);
}

#[test]
fn training_without_blobs_fails() {
    let f = fixture();
    let tmp = TempDir::new().unwrap();
    let run = tmp.path().join("run");
    copy_dir(&f.run, &run);
    let plan: mipcls::FoldPlan = serde_json::from_slice(&std::fs::read(run.join(FOLDS_FILE)).unwrap()).unwrap();
    let victim = plan.training(0)[0].to_string();
    std::fs::remove_file(blob_path(&run, &victim, Side::Right)).unwrap();
    assert!(matches!(cmd_train(&f.manifest, &config(), &run, Weighting::Natural, &[0]), Err(Error::MissingBlob(_))));
}

fn manifest_for(preds: &[Prediction], labels: &[(LesionClass, LesionClass)]) -> Manifest {
    let mut text = String::from("patient_id,pre_path,post_paths,mask_path,label_left,label_right\n");
    let mut ids: Vec<&str> = preds.iter().map(|p| p.patient_id.as_str()).collect();
    ids.dedup();
    for (id, (l, r)) in ids.iter().zip(labels) {
        text.push_str(&format!("{id},pre.nii,a.nii;b.nii,,{},{}\n", l.as_str(), r.as_str()));
    }
    Manifest::parse(text.as_bytes(), ".").unwrap()
}

#[test]
fn evaluate_matches_hand_auc_and_self_ensemble_is_identity() {
    use LesionClass::*;
    let tmp = TempDir::new().unwrap();
    let rows = [
        ("A", Side::Left, [0.1, 0.2, 0.7]),
        ("A", Side::Right, [0.8, 0.1, 0.1]),
        ("B", Side::Left, [0.3, 0.3, 0.4]),
        ("B", Side::Right, [0.2, 0.6, 0.2]),
        ("C", Side::Left, [0.5, 0.1, 0.4]),
        ("C", Side::Right, [0.6, 0.3, 0.1]),
    ];
    let preds: Vec<Prediction> = rows
        .iter()
        .map(|&(p, side, probs)| Prediction { patient_id: p.into(), side, probs, model_id: "m".into() })
        .collect();
    let manifest = manifest_for(&preds, &[(Malignant, NoLesion), (NoLesion, Benign), (Malignant, NoLesion)]);
    let path = tmp.path().join("p.csv");
    write_predictions(&preds, &path).unwrap();
    let report = cmd_evaluate(&manifest, &path, &tmp.path().join("p.json")).unwrap();

    // malignant scores of positives {0.7, 0.4} against negatives {0.1, 0.4, 0.2, 0.1}:
    // 0.7 beats all 4; 0.4 beats 3 and ties 1 -> (4 + 3.5) / 8
    assert!((report.auc - 7.5 / 8.0).abs() < 1e-12);
    let scores: Vec<f64> = preds.iter().map(|p| p.probs[2]).collect();
    let truth = [true, false, false, false, true, false];
    assert_eq!(report.auc, roc_auc(&scores, &truth).unwrap());

    let merged = cmd_ensemble(&[path.clone(), path.clone()], &tmp.path().join("self.csv")).unwrap();
    let self_report = cmd_evaluate(&manifest, &tmp.path().join("self.csv"), &tmp.path().join("self.json")).unwrap();
    assert_eq!(merged.len(), preds.len());
    assert_eq!(self_report, report);

    std::fs::write(tmp.path().join("bad.csv"), "patient,side\nA,left\n").unwrap();
    assert!(matches!(read_predictions(tmp.path().join("bad.csv")), Err(Error::SchemaMismatch(_))));
}

#[test]
fn augment_preview_writes_both_stacks() {
    let f = fixture();
    let tmp = TempDir::new().unwrap();
    let row = &f.manifest.rows()[0];
    let blob = blob_path(&f.run, &row.patient_id, Side::Left);
    let applied = cmd_augment_preview(&blob, 5, &config().augment, tmp.path()).unwrap();
    for name in ["before.mct", "after.mct", "transforms.json"] {
        assert!(tmp.path().join(name).exists(), "{name}");
    }
    let again = cmd_augment_preview(&blob, 5, &config().augment, tmp.path()).unwrap();
    assert_eq!(applied, again);
}
