use std::fs;
use std::process::Command;

fn isochrony() -> Command {
    Command::new(env!("CARGO_BIN_EXE_isochrony"))
}

#[test]
fn help_lists_subcommands() {
    let out = isochrony().arg("--help").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for cmd in ["prepare", "train", "translate", "evaluate", "ablate"] {
        assert!(text.contains(cmd), "{cmd}");
    }
}

#[test]
fn exit_codes_follow_outcome() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.toml");
    fs::write(
        &cfg,
        "seed = 2\nd_model = 16\nheads = 2\nd_ff = 16\nencoder_layers = 1\ndecoder_layers = 1\n\
         main_embedding_dim = 8\ndur_embedding_dim = 4\ntotal_embedding_dim = 4\npause_embedding_dim = 2\n\
         segment_embedding_dim = 4\nepochs = 1\nn_sentences = 4\nn_bins = 3\n",
    )
    .unwrap();
    let work = dir.path().join("work");
    let run = |args: &[&str]| {
        isochrony()
            .args(args)
            .arg("--config")
            .arg(&cfg)
            .arg("--work-dir")
            .arg(&work)
            .output()
            .unwrap()
    };

    let out = run(&["train"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("prepare"));

    assert!(run(&["prepare"]).status.success());
    assert!(!run(&["prepare"]).status.success());
    assert!(run(&["prepare", "--force"]).status.success());
    assert!(run(&["train"]).status.success());
    assert!(run(&["translate", "--split", "train"]).status.success());
    let out = run(&["evaluate", "--split", "train"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("BLEU"));

    fs::write(&cfg, "no_such_key = 1\n").unwrap();
    let out = run(&["prepare"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("no_such_key"));
}
