use std::collections::BTreeMap;
use std::path::Path;

use nfas_core::manifest::{LoadedManifest, Manifest, Params};
use nfas_core::pipeline::*;
use nfas_core::synth::{write_workspace, WorkspaceSpec};
use nfas_core::Error;

fn workspace(dir: &Path) -> LoadedManifest {
    let spec = WorkspaceSpec {
        models_per_modality: 4,
        stimuli: 24,
        ..WorkspaceSpec::default()
    };
    let params = Params {
        n_permutations: 99,
        ..Params::default()
    };
    let ws = write_workspace(&spec, dir, params).unwrap();
    Manifest::load(&ws.manifest_path).unwrap()
}

fn opts(stages: &[&str]) -> RunOptions {
    RunOptions {
        stages: stages.iter().map(|s| s.to_string()).collect(),
        ..RunOptions::default()
    }
}

fn checksums(r: &RunReport) -> BTreeMap<String, String> {
    r.inventory.iter().map(|e| (e.path.clone(), e.sha256.clone())).collect()
}

#[test]
fn full_run_emits_every_figure_source_and_reruns_identically() {
    let ws = tempfile::tempdir().unwrap();
    let loaded = workspace(ws.path());
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ra = run_pipeline(&loaded, a.path(), &opts(&[])).unwrap();
    let rb = run_pipeline(&loaded, b.path(), &opts(&[])).unwrap();
    assert_eq!(checksums(&ra), checksums(&rb));
    assert_eq!(ra.stages, STAGE_ORDER);
    for f in [
        "results/pca.csv",
        "results/pca.svg",
        "results/permanova.json",
        "results/silhouette.json",
        "results/network_means.csv",
        "results/anova.csv",
        "results/alignment_matrix.nft",
        "results/snci_vision.csv",
        "results/snci_audio.csv",
        "results/snci_language.csv",
    ] {
        assert!(a.path().join(f).is_file(), "{f}");
    }
    let snci: Vec<_> = std::fs::read_dir(a.path().join("results"))
        .unwrap()
        .filter_map(|e| e.ok()?.file_name().into_string().ok())
        .filter(|n| n.starts_with("snci_"))
        .collect();
    assert_eq!(snci.len(), 3);
    let header = std::fs::read_to_string(a.path().join("results/snci_audio.csv")).unwrap();
    assert!(header.starts_with("roi_index,mu,sigma,snci,snci_z\n"));
    assert!(a.path().join(REPORT_FILE).is_file());
    assert!(!a.path().join(PARTIAL_MARKER).exists());
}

#[test]
fn stages_restart_from_intermediates() {
    let ws = tempfile::tempdir().unwrap();
    let loaded = workspace(ws.path());
    let (split, whole) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = run_pipeline(&loaded, split.path(), &opts(&["dmd"])).unwrap();
    assert!(first.inventory.iter().all(|e| e.path.starts_with("intermediate/dmd/")));
    assert!(!split.path().join("results").exists());
    let rest = run_pipeline(&loaded, split.path(), &opts(&["hrf", "encode", "snci", "stats"])).unwrap();
    let full = run_pipeline(&loaded, whole.path(), &opts(&[])).unwrap();
    let mut combined = checksums(&first);
    combined.extend(checksums(&rest));
    assert_eq!(combined, checksums(&full));
}

#[test]
fn downstream_stage_without_upstream_fails() {
    let ws = tempfile::tempdir().unwrap();
    let loaded = workspace(ws.path());
    let out = tempfile::tempdir().unwrap();
    let err = run_pipeline(&loaded, out.path(), &opts(&["encode"])).unwrap_err();
    assert!(matches!(err, Error::Stage { stage: "encode", .. }), "{err}");
    let note = std::fs::read_to_string(out.path().join(PARTIAL_MARKER)).unwrap();
    assert!(note.contains("encode"));
}

#[test]
fn corrupt_tensor_aborts_with_its_path_and_marks_partial() {
    let ws = tempfile::tempdir().unwrap();
    let loaded = workspace(ws.path());
    let victim = loaded.manifest.models[2].trajectories[5].path.clone();
    let full = ws.path().join(&victim);
    let mut bytes = std::fs::read(&full).unwrap();
    bytes[..4].copy_from_slice(b"XXXX");
    std::fs::write(&full, bytes).unwrap();
    let out = tempfile::tempdir().unwrap();
    let err = run_pipeline(&loaded, out.path(), &opts(&[])).unwrap_err().to_string();
    assert!(err.contains(&victim.file_name().unwrap().to_string_lossy().to_string()), "{err}");
    assert!(out.path().join(PARTIAL_MARKER).exists());
    assert!(!out.path().join("results").exists());
}

#[test]
fn missing_tensor_is_caught_at_load() {
    let ws = tempfile::tempdir().unwrap();
    let loaded = workspace(ws.path());
    let victim = loaded.manifest.models[0].trajectories[0].path.clone();
    std::fs::remove_file(ws.path().join(&victim)).unwrap();
    let err = Manifest::load(ws.path().join("manifest.json")).unwrap_err().to_string();
    assert!(err.contains(&victim.to_string_lossy().to_string()), "{err}");
}

#[test]
fn seed_override_is_recorded() {
    let ws = tempfile::tempdir().unwrap();
    let loaded = workspace(ws.path());
    let out = tempfile::tempdir().unwrap();
    let mut o = opts(&["dmd"]);
    o.seed = Some(1234);
    assert_eq!(run_pipeline(&loaded, out.path(), &o).unwrap().seed, 1234);
}

#[test]
fn unknown_stage_is_a_config_error() {
    assert!(parse_stage_filter("dmd,fit").is_err());
    assert_eq!(parse_stage_filter("stats, dmd").unwrap().len(), 2);
}

#[test]
fn validate_reports_shapes() {
    let ws = tempfile::tempdir().unwrap();
    let loaded = workspace(ws.path());
    let s = validate_inputs(&loaded, false).unwrap();
    assert_eq!(s.models, 12);
    assert_eq!(s.trajectories, 12 * 24);
    assert_eq!(s.brains[0].rois, 70);
}
