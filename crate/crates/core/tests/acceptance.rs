//! Runs the selftest battery twice and reports one line per criterion.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use hjblab::manifest::{RunManifest, MANIFEST_FILE};
use hjblab::runner::{run, Command, RunOptions};

const CRITERIA: [&str; 9] = [
    "counterexample gap",
    "Monte Carlo cross-check",
    "oracle agreement",
    "policy-iteration monotonicity",
    "verification battery",
    "DPP residual",
    "mollification sweeps",
    "solver validation",
    "reproducibility",
];

fn selftest(dir: &Path) -> (RunManifest, f64) {
    let t0 = Instant::now();
    let m = run(Command::Selftest, None, dir, &RunOptions::default()).expect("selftest runs");
    (m, t0.elapsed().as_secs_f64())
}

fn artifacts(dir: &Path, m: &RunManifest) -> BTreeMap<String, Vec<u8>> {
    m.artifacts
        .iter()
        .filter(|a| a.as_str() != MANIFEST_FILE)
        .map(|a| (a.clone(), std::fs::read(dir.join(a)).unwrap()))
        .collect()
}

#[test]
fn acceptance() {
    let first_dir = tempfile::tempdir().unwrap();
    let second_dir = tempfile::tempdir().unwrap();
    let (first, secs_first) = selftest(first_dir.path());
    let (second, secs_second) = selftest(second_dir.path());

    let a = artifacts(first_dir.path(), &first);
    let b = artifacts(second_dir.path(), &second);
    let differing: Vec<&String> = a.keys().filter(|k| a.get(*k) != b.get(*k)).collect();
    let same_listing = a.keys().eq(b.keys());

    // Straight to the stderr handle: libtest captures only the print macros.
    let mut err = std::io::stderr().lock();
    let mut all = true;
    for (i, title) in CRITERIA.iter().enumerate() {
        let prefix = format!("c{}.", i + 1);
        let checks: Vec<_> = first.checks.iter().filter(|c| c.name.starts_with(&prefix)).collect();
        let failed: Vec<_> = checks.iter().filter(|c| !c.passed).collect();
        let mut ok = !checks.is_empty() && failed.is_empty();
        let mut detail = format!("{}/{} checks", checks.len() - failed.len(), checks.len());
        if i + 1 == 9 {
            let replay = same_listing && differing.is_empty();
            let fast = secs_first < 300.0 && secs_second < 300.0;
            ok &= replay && fast;
            detail.push_str(&format!(
                ", {} artifacts bit-identical across runs: {replay}, runtimes {secs_first:.1} s / {secs_second:.1} s",
                a.len()
            ));
        }
        writeln!(err, "criterion {} ({title}): {} [{detail}]", i + 1, if ok { "PASS" } else { "FAIL" }).unwrap();
        for f in &failed {
            writeln!(err, "    failed {}: {}", f.name, f.detail).unwrap();
        }
        if i + 1 == 9 {
            for d in &differing {
                writeln!(err, "    differs: {d}").unwrap();
            }
        }
        all &= ok;
    }
    assert!(all, "acceptance criteria failed");
    assert!(second.passed);
}
