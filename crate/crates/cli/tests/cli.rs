use std::path::Path;
use std::process::{Command, Output};

fn nfas(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nfas"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, extra: &[&str]) {
    let mut args = vec!["synth", "--out", s(dir), "--models-per-modality", "3", "--stimuli", "20", "--n-permutations", "49"];
    args.extend_from_slice(extra);
    let out = nfas(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn results(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir.join("results"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn pipeline_writes_one_snci_map_per_modality() {
    let tmp = tempfile::tempdir().unwrap();
    let (ws, run) = (tmp.path().join("ws"), tmp.path().join("run"));
    synth(&ws, &[]);
    let manifest = ws.join("manifest.json");
    let out = nfas(&["pipeline", "--manifest", s(&manifest), "--out", s(&run)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let names: Vec<String> = results(&run).into_iter().map(|(n, _)| n).collect();
    let snci: Vec<&String> = names.iter().filter(|n| n.starts_with("snci_")).collect();
    assert_eq!(snci, ["snci_audio.csv", "snci_language.csv", "snci_vision.csv"]);
    for f in ["pca.csv", "pca.svg", "network_means.csv", "anova.csv", "permanova.json", "silhouette.json"] {
        assert!(names.iter().any(|n| n == f), "{f}");
    }

    let two = tmp.path().join("two");
    synth(&two, &["--modalities", "vision,audio"]);
    let run2 = tmp.path().join("run2");
    let out = nfas(&["pipeline", "--manifest", s(&two.join("manifest.json")), "--out", s(&run2)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let n = results(&run2).iter().filter(|(n, _)| n.starts_with("snci_")).count();
    assert_eq!(n, 2);
}

#[test]
fn stage_subcommands_resume_from_intermediates() {
    let tmp = tempfile::tempdir().unwrap();
    let ws = tmp.path().join("ws");
    synth(&ws, &[]);
    let manifest = ws.join("manifest.json");
    let (split, whole) = (tmp.path().join("split"), tmp.path().join("whole"));
    let first = nfas(&["dmd", "--manifest", s(&manifest), "--out", s(&split)]);
    assert!(first.status.success(), "{}", stderr(&first));
    assert!(split.join("intermediate/dmd").is_dir());
    assert!(!split.join("results").exists());
    let rest = nfas(&["pipeline", "--stages", "hrf,encode,snci,stats", "--manifest", s(&manifest), "--out", s(&split)]);
    assert!(rest.status.success(), "{}", stderr(&rest));
    let full = nfas(&["pipeline", "--manifest", s(&manifest), "--out", s(&whole), "--jobs", "1"]);
    assert!(full.status.success(), "{}", stderr(&full));
    assert_eq!(results(&split), results(&whole));
}

#[test]
fn missing_arguments_and_bad_config_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(nfas(&["pipeline", "--out", s(tmp.path())]).status.code(), Some(2));
    let ws = tmp.path().join("ws");
    synth(&ws, &[]);
    let out = nfas(&["pipeline", "--stages", "dmd,fit", "--manifest", s(&ws.join("manifest.json")), "--out", s(&tmp.path().join("r"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("fit"));
}

#[test]
fn missing_tensor_aborts_naming_its_path() {
    let tmp = tempfile::tempdir().unwrap();
    let ws = tmp.path().join("ws");
    synth(&ws, &[]);
    let victim = ws.join("trajectories/audio01/stim003.nft");
    assert!(victim.is_file(), "fixture layout changed");
    std::fs::remove_file(&victim).unwrap();
    let out = nfas(&["pipeline", "--manifest", s(&ws.join("manifest.json")), "--out", s(&tmp.path().join("r"))]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("stim003.nft"), "{}", stderr(&out));
    let v = nfas(&["validate", "--manifest", s(&ws.join("manifest.json"))]);
    assert!(!v.status.success());
}

#[test]
fn unreadable_manifest_exits_4() {
    let tmp = tempfile::tempdir().unwrap();
    let out = nfas(&["pipeline", "--manifest", s(&tmp.path().join("nope.json")), "--out", s(tmp.path())]);
    assert_eq!(out.status.code(), Some(4), "{}", stderr(&out));
}

#[test]
fn failing_stage_leaves_a_partial_marker() {
    let tmp = tempfile::tempdir().unwrap();
    let ws = tmp.path().join("ws");
    synth(&ws, &[]);
    let victim = ws.join("trajectories/vision00/stim000.nft");
    let mut bytes = std::fs::read(&victim).unwrap();
    bytes.truncate(bytes.len() - 8);
    std::fs::write(&victim, bytes).unwrap();
    let run = tmp.path().join("r");
    let out = nfas(&["pipeline", "--manifest", s(&ws.join("manifest.json")), "--out", s(&run)]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(stderr(&out).contains("length mismatch"), "{}", stderr(&out));
    let note = std::fs::read_to_string(run.join(".partial")).unwrap();
    assert!(note.contains("dmd"));
}

#[test]
fn strict_mode_turns_warnings_into_exit_3() {
    let tmp = tempfile::tempdir().unwrap();
    let ws = tmp.path().join("ws");
    synth(&ws, &[]);
    // A constant trajectory has no dynamics and falls back to its depth average.
    let victim = ws.join("trajectories/language02/stim007.nft");
    let mut bytes = std::fs::read(&victim).unwrap();
    let ndim = bytes[6] as usize;
    let header = 7 + 8 * ndim;
    let width = u64::from_le_bytes(bytes[15..23].try_into().unwrap()) as usize;
    let first: Vec<u8> = bytes[header..header + 8 * width].to_vec();
    for chunk in bytes[header..].chunks_exact_mut(8 * width) {
        chunk.copy_from_slice(&first);
    }
    std::fs::write(&victim, bytes).unwrap();
    let manifest = ws.join("manifest.json");
    let lenient = nfas(&["dmd", "--manifest", s(&manifest), "--out", s(&tmp.path().join("a"))]);
    assert!(lenient.status.success(), "{}", stderr(&lenient));
    assert!(String::from_utf8_lossy(&lenient.stdout).contains("1 warnings"));
    let strict = nfas(&["dmd", "--strict", "--manifest", s(&manifest), "--out", s(&tmp.path().join("b"))]);
    assert_eq!(strict.status.code(), Some(3), "{}", stderr(&strict));
}

#[test]
fn worker_count_does_not_change_results() {
    let tmp = tempfile::tempdir().unwrap();
    let ws = tmp.path().join("ws");
    synth(&ws, &[]);
    let manifest = ws.join("manifest.json");
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert!(nfas(&["pipeline", "--jobs", "1", "--manifest", s(&manifest), "--out", s(&a)]).status.success());
    assert!(nfas(&["pipeline", "--jobs", "4", "--manifest", s(&manifest), "--out", s(&b)]).status.success());
    assert_eq!(results(&a), results(&b));
}

#[test]
fn validate_prints_a_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let ws = tmp.path().join("ws");
    synth(&ws, &[]);
    let out = nfas(&["validate", "--manifest", s(&ws.join("manifest.json"))]);
    assert!(out.status.success(), "{}", stderr(&out));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["models"], 9);
}

#[test]
fn parameter_flags_override_the_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let ws = tmp.path().join("ws");
    synth(&ws, &[]);
    let manifest = ws.join("manifest.json");
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert!(nfas(&["pipeline", "--manifest", s(&manifest), "--out", s(&a)]).status.success());
    let out = nfas(&["pipeline", "--joint-zscore", "--metric", "euclidean", "--silhouette-space", "pca", "--manifest", s(&manifest), "--out", s(&b)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let perm = std::fs::read_to_string(b.join("results/permanova.json")).unwrap();
    assert!(perm.contains("euclidean"), "{perm}");
    let column = |dir: &Path, i: usize| -> Vec<String> {
        std::fs::read_to_string(dir.join("results/snci_audio.csv"))
            .unwrap()
            .lines()
            .map(|l| l.split(',').nth(i).unwrap().to_string())
            .collect()
    };
    assert_eq!(column(&a, 3), column(&b, 3));
    assert_ne!(column(&a, 4), column(&b, 4));

    // Stage records from the default run do not satisfy the overridden one.
    let resumed = nfas(&["stats", "--metric", "euclidean", "--manifest", s(&manifest), "--out", s(&a)]);
    assert!(!resumed.status.success());

    let bad = nfas(&["pipeline", "--metric", "manhattan", "--manifest", s(&manifest), "--out", s(&tmp.path().join("c"))]);
    assert_eq!(bad.status.code(), Some(2), "{}", stderr(&bad));
}
