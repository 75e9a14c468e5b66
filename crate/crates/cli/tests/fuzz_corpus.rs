// Replays the checked-in fuzz corpus through the same entry points as the
// fuzz targets, so the seeds stay valid inputs under a plain `cargo test`.

use std::fs;
use std::path::PathBuf;

use pathctl_cli::config::{load, parse_override, CliLayer};
use pathctl_cli::expr::Expr;

fn seeds(target: &str) -> Vec<(String, String)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<_> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read_to_string(&p).unwrap())
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

#[test]
fn config_seeds() {
    for (name, text) in seeds("config_load") {
        let res = load(&text, &CliLayer::default());
        if name == "unknown_key" {
            assert!(res.is_err(), "{name}");
        } else {
            res.unwrap_or_else(|e| panic!("{name}: {e}"));
        }
    }
}

#[test]
fn expr_seeds_parse() {
    for (name, text) in seeds("expr_parse") {
        Expr::parse(&text).unwrap_or_else(|e| panic!("{name}: {e}"));
    }
}

#[test]
fn override_seeds() {
    let ok = seeds("override_parse").into_iter().filter(|(_, t)| parse_override(t).is_ok()).count();
    assert!(ok >= 5);
}
