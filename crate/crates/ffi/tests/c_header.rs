//! Builds a small C program against the generated header and the shared
//! library. Skipped when no C compiler is on the path.

use std::path::PathBuf;
use std::process::Command;

fn library_dir() -> PathBuf {
    // target/<profile>/deps/<test binary>
    let exe = std::env::current_exe().unwrap();
    exe.parent().and_then(|d| d.parent()).unwrap().to_path_buf()
}

#[test]
fn header_declares_every_export() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let header = std::fs::read_to_string(dir.join("include/spinproj.h")).unwrap();
    let src = std::fs::read_to_string(dir.join("src/lib.rs")).unwrap();
    let exports: Vec<&str> = src
        .lines()
        .filter(|l| l.starts_with("pub ") && l.contains("extern \"C\" fn "))
        .map(|l| l.split("fn ").nth(1).unwrap().split('(').next().unwrap())
        .collect();
    assert!(exports.len() >= 15, "{exports:?}");
    for f in exports {
        assert!(header.contains(&format!("{f}(")), "{f} missing from header");
    }
}

#[test]
fn c_program_links_and_runs() {
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    if Command::new(&cc).arg("--version").output().is_err() {
        eprintln!("no C compiler, skipping");
        return;
    }
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let lib = library_dir();
    let so = lib.join(format!("{}spinproj_ffi{}", std::env::consts::DLL_PREFIX, std::env::consts::DLL_SUFFIX));
    if !so.exists() {
        eprintln!("{} not built, skipping", so.display());
        return;
    }
    let tmp = tempfile::tempdir().unwrap();
    let exe = tmp.path().join("smoke");
    let status = Command::new(&cc)
        .arg(dir.join("tests/c/smoke.c"))
        .arg("-I")
        .arg(dir.join("include"))
        .arg("-L")
        .arg(&lib)
        .args(["-lspinproj_ffi", "-lm", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success());
    let out = Command::new(&exe)
        .arg(dir.join("../../data/fcidump/lih_2.75.fcidump"))
        .env("LD_LIBRARY_PATH", &lib)
        .env("DYLD_LIBRARY_PATH", &lib)
        .output()
        .unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "{stdout}\n{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout.starts_with("11 2 2 "), "{stdout}");
}
