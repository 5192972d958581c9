use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rotor-shell"))
}

fn read_dir_sorted(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().into_string().unwrap(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

fn write_scenario(dir: &Path, name: &str) -> std::path::PathBuf {
    let out = bin().args(["describe", name, "--json"]).output().unwrap();
    assert!(out.status.success());
    let path = dir.join(format!("{name}.json"));
    std::fs::write(&path, out.stdout).unwrap();
    path
}

#[test]
fn list_names_every_scenario() {
    let out = bin().arg("list").output().unwrap();
    let text = String::from_utf8(out.stdout).unwrap();
    for name in ["sphere-inflate", "plate-bend", "tube-squash", "stereo-synthetic", "tracks-replay"] {
        assert!(text.lines().any(|l| l.starts_with(name)), "{name} missing from\n{text}");
    }
}

#[test]
fn unknown_scenario_suggests_names() {
    let out = bin().args(["describe", "sphere-inflat"]).output().unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("`sphere-inflate`"), "{err}");
}

#[test]
fn field_csv_header_matches_golden() {
    let dir = tempfile::tempdir().unwrap();
    let file = write_scenario(dir.path(), "plate-bend");
    let out_dir = dir.path().join("out");
    let status = bin().arg("run").arg(&file).arg("--out").arg(&out_dir).args(["--grid", "4"]).output().unwrap().status;
    assert!(status.success());
    let csv = std::fs::read_to_string(out_dir.join("field.csv")).unwrap();
    let golden = include_str!("golden/field_header.csv");
    assert_eq!(csv.lines().next().unwrap(), golden.trim_end());
    assert_eq!(csv.lines().count(), 1 + 16);
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["tube-squash", "stereo-synthetic"] {
        let file = write_scenario(dir.path(), name);
        let runs: Vec<_> = ["a", "b"]
            .iter()
            .map(|tag| {
                let out = dir.path().join(format!("{name}-{tag}"));
                let status = bin()
                    .arg("run")
                    .arg(&file)
                    .arg("--out")
                    .arg(&out)
                    .args(["--grid", "12", "--seed", "7"])
                    .status()
                    .unwrap();
                assert!(status.success());
                read_dir_sorted(&out)
            })
            .collect();
        assert!(!runs[0].is_empty());
        assert!(runs[0] == runs[1], "{name} outputs differ between runs");
    }
}

#[test]
fn sequential_and_parallel_runs_agree() {
    let dir = tempfile::tempdir().unwrap();
    let file = write_scenario(dir.path(), "sphere-inflate");
    let mut outputs = Vec::new();
    for (tag, extra) in [("par", None), ("seq", Some("--sequential"))] {
        let out = dir.path().join(tag);
        let mut cmd = bin();
        cmd.arg("run").arg(&file).arg("--out").arg(&out).args(["--grid", "10"]);
        cmd.args(extra);
        assert!(cmd.output().unwrap().status.success());
        outputs.push(read_dir_sorted(&out));
    }
    assert!(outputs[0] == outputs[1]);
}

#[test]
fn invalid_files_report_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, "{\n  \"scenario\": \"tube-squash\",\n  \"collapse\": \"lots\"\n}\n").unwrap();
    let out = bin().arg("run").arg(&path).output().unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("line 3"), "{err}");

    std::fs::write(&path, r#"{"scenario": "tube-squash", "collapse": 1.5}"#).unwrap();
    let out = bin().arg("run").arg(&path).output().unwrap();
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("collapse"), "{err}");
}

#[test]
fn shipped_scenarios_load() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    let mut names = Vec::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let s = rotor_shell::scenario::Scenario::load(&path).unwrap();
        assert_eq!(path.file_stem().unwrap().to_str().unwrap(), s.name());
        names.push(s.name());
    }
    names.sort();
    assert_eq!(names, ["plate-bend", "sphere-inflate", "stereo-synthetic", "tracks-replay", "tube-squash"]);
}
