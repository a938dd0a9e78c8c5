//! End-to-end runs of the `pnsim` binary on tiny networks.

use std::fs;
use std::path::Path;
use std::process::Command;

const SMALL: [&str; 10] = [
    "--preset",
    "custom",
    "--nodes",
    "40",
    "--interval-ms",
    "3000",
    "--block-size",
    "20000",
    "--blocks",
    "30",
];

fn pnsim(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_pnsim"))
        .args(args)
        .output()
        .expect("spawn pnsim")
}

fn header(path: &Path) -> String {
    fs::read_to_string(path)
        .unwrap_or_else(|e| panic!("{}: {e}", path.display()))
        .lines()
        .next()
        .unwrap_or_default()
        .to_string()
}

fn rows(path: &Path) -> usize {
    fs::read_to_string(path).unwrap().lines().count() - 1
}

fn assert_run_outputs(dir: &Path, blocks: usize) {
    assert_eq!(header(&dir.join("blocks.csv")), "block_id,height,created_at,median_ms,coverage,on_main_chain");
    assert_eq!(header(&dir.join("rolling.csv")), "window_start_block,mean_median_ms");
    assert_eq!(header(&dir.join("histogram.csv")), "bin_start_ms,count");
    assert_eq!(header(&dir.join("chain.csv")), "id,parent,height,miner,created_at,on_main_chain");
    assert_eq!(rows(&dir.join("blocks.csv")), blocks);
    assert_eq!(rows(&dir.join("chain.csv")), blocks);
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["generated_blocks"], blocks);
    assert!(summary["config"]["policy"].is_object());
}

#[test]
fn run_writes_all_outputs() {
    let out = tempfile::tempdir().unwrap();
    let dir = out.path().join("run");
    let mut args = vec!["run", "--trace", "--window", "10", "--out", dir.to_str().unwrap()];
    args.extend(SMALL);
    let res = pnsim(&args);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    assert_run_outputs(&dir, 30);
    assert_eq!(rows(&dir.join("rolling.csv")), 3);
    let trace = fs::read_to_string(dir.join("trace.tsv")).unwrap();
    assert!(trace.lines().next().unwrap().contains("GenerateBlock"));
    let hist_total: u64 = fs::read_to_string(dir.join("histogram.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse::<u64>().unwrap())
        .sum();
    assert_eq!(hist_total, 30);
}

#[test]
fn run_is_byte_identical_across_invocations() {
    let out = tempfile::tempdir().unwrap();
    let mut texts = Vec::new();
    for name in ["a", "b"] {
        let dir = out.path().join(name);
        let mut args = vec!["run", "--seed", "5", "--out", dir.to_str().unwrap()];
        args.extend(SMALL);
        assert!(pnsim(&args).status.success());
        texts.push(fs::read(dir.join("blocks.csv")).unwrap());
    }
    assert_eq!(texts[0], texts[1]);
}

#[test]
fn zero_blocks_is_a_successful_empty_run() {
    let out = tempfile::tempdir().unwrap();
    let dir = out.path().join("empty");
    let mut args = vec!["run", "--out", dir.to_str().unwrap()];
    args.extend(SMALL);
    *args.last_mut().unwrap() = "0";
    let res = pnsim(&args);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    assert_run_outputs(&dir, 0);
    assert_eq!(rows(&dir.join("rolling.csv")), 0);
}

#[test]
fn sweep_writes_grid_and_cells() {
    let out = tempfile::tempdir().unwrap();
    let dir = out.path().join("sweep");
    let mut args = vec![
        "sweep",
        "--p-list",
        "0.2,0.4",
        "--k-list",
        "1,2",
        "--seeds",
        "1,2",
        "--out",
        dir.to_str().unwrap(),
    ];
    args.extend(SMALL);
    let res = pnsim(&args);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    assert_eq!(header(&dir.join("sweep.csv")), "P,K,seed,mean_median_ms");
    assert_eq!(rows(&dir.join("sweep.csv")), 8);
    assert_eq!(
        header(&dir.join("sweep_summary.csv")),
        "P,K,seeds,mean_median_ms,std_ms,undefined_cells"
    );
    assert_eq!(rows(&dir.join("sweep_summary.csv")), 4);
    assert_run_outputs(&dir.join("cells").join("p0.4_k2_seed1"), 30);
}

#[test]
fn compare_writes_both_arms() {
    let out = tempfile::tempdir().unwrap();
    let dir = out.path().join("cmp");
    let mut args = vec!["compare", "--out", dir.to_str().unwrap()];
    args.extend(SMALL);
    let res = pnsim(&args);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    assert_run_outputs(&dir.join("proposed"), 30);
    assert_run_outputs(&dir.join("fixed"), 30);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("compare.json")).unwrap()).unwrap();
    assert!(report["improvement"].is_number());
    let fixed: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("fixed").join("summary.json")).unwrap()).unwrap();
    assert_eq!(fixed["config"]["policy"]["variant"], "fixed-random");
    assert_eq!(fixed["config"]["policy"]["inbound_cap"], 125);
}

#[test]
fn config_file_with_flag_override() {
    let out = tempfile::tempdir().unwrap();
    let cfg = out.path().join("cfg.toml");
    fs::write(
        &cfg,
        "[run]\npreset = \"custom\"\nnodes = 30\ninterval_ms = 2000\nblock_size = 1000\nblocks = 12\nseed = 3\n\n\
         [netmodel]\nuniform = { latency_ms = 50, bandwidth_bps = \"inf\" }\n\n[pns]\nk = 2\n",
    )
    .unwrap();
    let dir = out.path().join("o");
    let res = pnsim(&["run", "--config", cfg.to_str().unwrap(), "--blocks", "7", "--out", dir.to_str().unwrap()]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    assert_run_outputs(&dir, 7);
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["config"]["nodes"], 30);
    assert_eq!(summary["config"]["policy"]["k"], 2);
    // Hops cost three 50 ms legs with instant transfer; the median may
    // interpolate halfway between two hop counts.
    let median = summary["blocks"][0]["median_ms"].as_f64().unwrap();
    assert!(median > 0.0 && median % 75.0 == 0.0, "median {median}");
}

#[test]
fn shipped_presets_parse() {
    let presets = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../presets");
    for entry in fs::read_dir(&presets).unwrap() {
        let path = entry.unwrap().path();
        let name = path.file_name().unwrap().to_str().unwrap().to_string();
        let text = fs::read_to_string(&path).unwrap();
        if name.starts_with("regions-") {
            pnsim::netmodel::RegionDataset::from_toml_str(&text).unwrap();
        } else {
            pnsim::cli::config::ConfigLayer::from_toml(&text, path.parent()).unwrap();
        }
    }
}

#[test]
fn invalid_input_fails_with_message() {
    let out = tempfile::tempdir().unwrap();
    let res = pnsim(&["run", "--p", "1.5", "--out", out.path().to_str().unwrap()]);
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("error"));
    let res = pnsim(&["run", "--preset", "custom", "--out", out.path().to_str().unwrap()]);
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("nodes"));
}
