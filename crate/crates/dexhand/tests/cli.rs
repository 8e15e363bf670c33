use std::fs;
use std::path::Path;
use std::process::Command;

const TINY: &str = r#"
hand = "robotiq"
seed = 11
seeds = 1

[data]
episodes = 6
steps = 8

[forward]
hidden = [8]
horizon = 3
steps = 30
batch_size = 8

[inverse]
hidden = [8]
steps = 30
batch_size = 8

[plan]
planners = ["ours", "fm_cem", "fm_rs", "fm_bgd"]
episodes = 2
max_steps = 3
gradient_steps = 3
budget = { horizon = 1, cem_iterations = 2, samples = 12, elites = 3, beta = 0.1 }

[ablation]
presets = ["robotiq"]
data_sizes = [20, 40]
eval_size = 20
budgets = [[10, 1], [20, 2]]
episodes = 2

[inhand]
hand = "robotiq"
learners = ["factorized", "monolithic"]
budget = { horizon = 2, cem_iterations = 2, samples = 12, elites = 3, beta = 0.2 }
external = { hidden = [8], steps = 5, batch_size = 4, horizon = 2 }

[inhand.schedule]
iterations = 2
rollouts = 2
episode_steps = 3
train_steps = 3
batch_size = 4

[adapt]
finetune_samples = 20
eval_samples = 20
steps = 10
batch_size = 4

[gesture]
exemplar = "ok"

[gesture.budget]
proposals = 10
cem = { horizon = 1, cem_iterations = 2, samples = 12, elites = 3, beta = 0.1 }

[synergy]
episodes = 5
"#;

const COMMANDS: [&str; 11] = [
    "explore",
    "train-forward",
    "train-inverse",
    "plan",
    "bench-reach",
    "bench-inhand",
    "ablate-data",
    "ablate-budget",
    "adapt",
    "gesture",
    "synergy",
];

fn run(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_dexhand")).args(args).output().unwrap()
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn every_subcommand_is_byte_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("tiny.toml");
    fs::write(&cfg, TINY).unwrap();
    let cfg = cfg.to_str().unwrap();
    for cmd in COMMANDS {
        let mut outs = Vec::new();
        for rep in 0..2 {
            let out = tmp.path().join(format!("{cmd}-{rep}"));
            let o = run(&[cmd, "--config", cfg, "--out", out.to_str().unwrap()]);
            assert!(o.status.success(), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
            outs.push(files(&out));
        }
        assert!(!outs[0].is_empty(), "{cmd} wrote nothing");
        assert_eq!(outs[0], outs[1], "{cmd}");
    }
}

#[test]
fn seed_flag_changes_the_result() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("tiny.toml");
    fs::write(&cfg, TINY).unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for (dir, seed) in [(&a, "1"), (&b, "2")] {
        let o = run(&["explore", "--config", cfg.to_str().unwrap(), "--seed", seed, "--out", dir.to_str().unwrap()]);
        assert!(o.status.success());
    }
    assert_ne!(fs::read(a.join("dataset.json")).unwrap(), fs::read(b.join("dataset.json")).unwrap());
}

#[test]
fn bad_config_exits_with_code_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    for (name, text) in [("unknown.toml", "hands = \"robotiq\"\n"), ("broken.toml", "hand = \n"), ("bad.toml", "[plan]\nepisodes = 0\n")] {
        let cfg = tmp.path().join(name);
        fs::write(&cfg, text).unwrap();
        let o = run(&["explore", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(2), "{name}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(!o.stderr.is_empty());
    }
    let o = run(&["explore", "--config", "/nonexistent.toml", "--out", out.to_str().unwrap()]);
    assert_ne!(o.status.code(), Some(0));
}
