use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

const SOLVE: &str = "```actions\nwrite_cell(addr=A1, value=5)\n```";

struct Env {
    dir: tempfile::TempDir,
}

impl Env {
    fn new() -> Self {
        let env = Self { dir: tempfile::tempdir().unwrap() };
        let script = json!({ "rules": [{ "contains": ["Task: Put 5"], "reply": SOLVE }] });
        std::fs::write(env.path("script.json"), script.to_string()).unwrap();
        env
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn cmd(&self, mr: &str) -> Command {
        let mut c = Command::new(env!("CARGO_BIN_EXE_memloop"));
        c.current_dir(self.dir.path())
            .env_remove("MEMLOOP_CONFIG")
            .env_remove("MEMLOOP_API_KEY")
            .arg("--mr")
            .arg(self.path(mr))
            .arg("--mock-embed")
            .arg("--mock-llm")
            .arg(self.path("script.json"));
        c
    }

    fn run(&self, mr: &str, args: &[&str]) -> Output {
        self.cmd(mr).args(args).output().unwrap()
    }
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stats(env: &Env, mr: &str) -> Value {
    let o = env.run(mr, &["mem", "stats"]);
    assert_eq!(code(&o), 0);
    serde_json::from_str(stdout(&o).trim()).unwrap()
}

fn write_suite(path: &Path) {
    let suite = json!({ "tasks": [
        { "id": "put", "request": "Put 5 in A1", "checker": [{ "kind": "cell_equals", "args": { "addr": "A1", "value": 5 } }], "ground_truth_ops": 1 },
        { "id": "other", "request": "Sort column B", "initial_workspace": { "B1": 2, "B2": 1 }, "checker": [{ "kind": "range_sorted", "args": { "col": "B", "order": "asc" } }], "ground_truth_ops": 1 }
    ]});
    std::fs::write(path, suite.to_string()).unwrap();
}

#[test]
fn run_exit_codes_and_transcript() {
    let env = Env::new();
    let o = env.run("mr.jsonl", &["run", "Put 5 in A1", "--transcript", "out.txt"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("status=End"));
    let t = std::fs::read_to_string(env.path("out.txt")).unwrap();
    assert!(t.contains("Init -> Observing -> Proposing -> Executing -> Evaluating -> Memorizing -> End"));

    let o = env.run("mr.jsonl", &["run", "Something unscripted"]);
    assert_eq!(code(&o), 1);

    let o = env.run("missing/dir/mr.jsonl", &["run", "Put 5 in A1"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("memory repository"));
}

#[test]
fn run_from_task_file() {
    let env = Env::new();
    write_suite(&env.path("suite.json"));
    let o = env.run("mr.jsonl", &["run", "--task-file", "suite.json", "--task-id", "put"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("op_ratio=1.00"));
    let o = env.run("mr.jsonl", &["run", "--task-file", "suite.json", "--task-id", "nope"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn suite_rounds_and_reports() {
    let env = Env::new();
    write_suite(&env.path("suite.json"));
    let o = env.run("fresh.jsonl", &["suite", "suite.json", "--rounds", "2", "--out", "report.jsonl"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report = std::fs::read_to_string(env.path("report.jsonl")).unwrap();
    let records: Vec<Value> = report.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let rounds: Vec<&Value> = records.iter().filter(|r| r["record"] == "round").collect();
    assert_eq!(rounds.len(), 2);
    assert_eq!(rounds[0]["mr_size_before"], 0);
    assert_eq!(rounds[0]["pass_at_1"], 0.5);
    assert_eq!(records.iter().filter(|r| r["record"] == "task").count(), 4);
    assert!(stdout(&o).contains("pass@1"));

    std::fs::write(env.path("bad.json"), "{\"tasks\": [{\"id\": 1}]}").unwrap();
    assert_eq!(code(&env.run("fresh.jsonl", &["suite", "bad.json"])), 2);
}

#[test]
fn mem_management() {
    let env = Env::new();
    let o = env.run("mr.jsonl", &["mem", "list"]);
    assert_eq!(code(&o), 0);
    assert_eq!(stdout(&o).lines().count(), 1);

    assert_eq!(code(&env.run("mr.jsonl", &["run", "Put 5 in A1"])), 0);
    let o = env.run("mr.jsonl", &["mem", "list"]);
    assert!(stdout(&o).contains("TaskMemory"));
    assert!(stdout(&o).contains("Put 5 in A1"));

    assert_eq!(code(&env.run("mr.jsonl", &["mem", "export", "dump.mrx"])), 0);
    assert_eq!(code(&env.run("copy.jsonl", &["mem", "import", "dump.mrx"])), 0);
    assert_eq!(stats(&env, "mr.jsonl"), stats(&env, "copy.jsonl"));

    assert_eq!(code(&env.run("copy.jsonl", &["mem", "forget", "--all"])), 0);
    assert_eq!(stats(&env, "copy.jsonl")["total"], 0);
    assert_eq!(code(&env.run("mr.jsonl", &["mem", "import", "no-such-file"])), 2);
}

#[test]
fn config_layering() {
    let env = Env::new();
    std::fs::write(env.path("bad.conf"), "budget = 100\n").unwrap();
    let o = env.run("mr.jsonl", &["--config", "bad.conf", "mem", "stats"]);
    assert_eq!(code(&o), 2);
    // the flag wins over the file
    let o = env.run("mr.jsonl", &["--config", "bad.conf", "--budget", "2048", "mem", "stats"]);
    assert_eq!(code(&o), 0);
    // the file can also come from the environment
    let o = env.cmd("mr.jsonl").env("MEMLOOP_CONFIG", env.path("bad.conf")).args(["mem", "stats"]).output().unwrap();
    assert_eq!(code(&o), 2);
    std::fs::write(env.path("typo.conf"), "buget = 2048\n").unwrap();
    assert_eq!(code(&env.run("mr.jsonl", &["--config", "typo.conf", "mem", "stats"])), 2);
}

#[test]
fn api_key_never_printed() {
    let env = Env::new();
    let secret = "sk-test-4c1d9e77";
    let o = env
        .cmd("mr.jsonl")
        .env("MEMLOOP_API_KEY", secret)
        .env("RUST_LOG", "trace")
        .args(["run", "Put 5 in A1", "--transcript", "t.txt"])
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    for text in [stdout(&o), String::from_utf8_lossy(&o.stderr).into_owned(), std::fs::read_to_string(env.path("t.txt")).unwrap()] {
        assert!(!text.contains(secret));
    }
}
