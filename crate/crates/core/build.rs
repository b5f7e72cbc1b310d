use sha2::{Digest, Sha256};
use std::fs;
use std::path::{Path, PathBuf};

fn collect(dir: &Path, out: &mut Vec<PathBuf>) {
    let Ok(entries) = fs::read_dir(dir) else { return };
    for entry in entries.flatten() {
        let path = entry.path();
        if path.is_dir() {
            collect(&path, out);
        } else if path.extension().is_some_and(|e| e == "rs") {
            out.push(path);
        }
    }
}

fn main() {
    let root = PathBuf::from(std::env::var("CARGO_MANIFEST_DIR").unwrap());
    let src = root.join("src");
    let mut files = Vec::new();
    collect(&src, &mut files);
    files.sort();

    // git-style: each file hashed as "blob <len>\0<bytes>", then the sorted
    // (path, blob hash) list is hashed again.
    let mut tree = Sha256::new();
    for path in &files {
        let bytes = fs::read(path).unwrap();
        let mut blob = Sha256::new();
        blob.update(format!("blob {}\0", bytes.len()).as_bytes());
        blob.update(&bytes);
        let rel = path.strip_prefix(&root).unwrap().to_string_lossy().replace('\\', "/");
        tree.update(rel.as_bytes());
        tree.update([0u8]);
        tree.update(blob.finalize());
    }
    let digest = tree.finalize();
    let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
    println!("cargo:rustc-env=METRPO_CODE_HASH={hex}");
    println!("cargo:rerun-if-changed=src");
}
