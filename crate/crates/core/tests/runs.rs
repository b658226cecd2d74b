use std::collections::BTreeMap;
use std::path::Path;

use aoi_rma::aoi::NodeId;
use aoi_rma::report::{compare, format_pct, load_summary};
use aoi_rma::scenario::{builtin_scenario, ScenarioConfig};
use aoi_rma::sim::{run, CycleRow, PeriodRow, SimOptions, Simulation};

fn read_rows<T>(path: &Path, parse: fn(&str) -> aoi_rma::Result<T>) -> Vec<T> {
    std::fs::read_to_string(path).unwrap().lines().skip(1).map(|l| parse(l).unwrap()).collect()
}

#[test]
fn csv_reaggregates_to_summary() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = aoi_rma::scenario::apply_priority_defaults(builtin_scenario("s4").unwrap()).unwrap();
    cfg.total_slots = 12_000;
    let summary = run(cfg, Some(dir.path()), SimOptions::default()).unwrap();
    let periods = read_rows(&dir.path().join("periods.csv"), PeriodRow::parse_csv);
    let cycles = read_rows(&dir.path().join("cycles.csv"), CycleRow::parse_csv);

    let mut reports: BTreeMap<NodeId, u64> = BTreeMap::new();
    let mut sums: BTreeMap<NodeId, f64> = BTreeMap::new();
    for p in &periods {
        *reports.entry(p.node_id).or_default() += 1;
        *sums.entry(p.node_id).or_default() += p.window_mean_aoi;
    }
    let means: BTreeMap<NodeId, f64> = sums.iter().map(|(id, s)| (*id, s / reports[id] as f64)).collect();
    assert_eq!(reports, summary.reports);
    assert_eq!(means, summary.period_mean_aoi);

    let mut trajectory: BTreeMap<NodeId, Vec<f64>> = BTreeMap::new();
    for c in &cycles {
        trajectory.entry(c.node_id).or_default().push(c.p_after);
    }
    assert_eq!(trajectory, summary.policy_trajectory);
    assert_eq!(cycles.iter().filter(|c| c.skipped).count() as u64, summary.skipped_reflections);
    assert_eq!(load_summary(dir.path()).unwrap(), summary);
}

#[test]
fn snapshot_replays_identically() {
    let mut cfg = builtin_scenario("s2").unwrap();
    cfg.total_slots = 9_000;
    let mut sim = Simulation::from_config(cfg, SimOptions { slot_log: true }).unwrap();
    sim.run_until(3_100).unwrap();
    let mut copy = sim.snapshot().unwrap();
    let a = sim.run_to_end().unwrap();
    let b = copy.run_to_end().unwrap();
    assert_eq!(a, b);
    assert_eq!(sim.periods_csv(), copy.periods_csv());
    assert_eq!(sim.slot_log(), copy.slot_log());
}

#[test]
fn ablation_switches() {
    let mut cfg = builtin_scenario("s1").unwrap();
    cfg.total_slots = 6_000;
    cfg.agent.reflection = false;
    cfg.agent.observe = false;
    let mut sim = Simulation::from_config(cfg.clone(), SimOptions::default()).unwrap();
    let s = sim.run_to_end().unwrap();
    assert!(sim.periods().iter().all(|p| p.delta_p == 0.0));
    assert!(s.policy_trajectory.values().flatten().all(|p| *p == 0.30));
    assert_eq!(s.reflections.values().sum::<u64>(), 0);
    assert_eq!(sim.cycles().len(), 10);

    cfg.agent.observe = true;
    let mut sim = Simulation::from_config(cfg, SimOptions::default()).unwrap();
    let s = sim.run_to_end().unwrap();
    assert!(s.policy_trajectory.values().flatten().all(|p| *p == 0.30));
    assert_eq!(sim.periods()[0].delta_p, 0.0);
}

#[test]
fn asynchronous_reflection_completes_and_is_deterministic_for_scripted() {
    let mut cfg = builtin_scenario("s1").unwrap();
    cfg.total_slots = 12_000;
    cfg.agent.asynchronous = true;
    let a = run(cfg.clone(), None, SimOptions::default()).unwrap();
    let id = a.rma_nodes[0];
    assert_eq!(a.reports[&id], 60);
    assert_eq!(a.reflections[&id], 20);
    assert_eq!(a.policy_trajectory[&id].len(), 20);
}

#[test]
fn compare_runs() {
    let base = tempfile::tempdir().unwrap();
    let same = tempfile::tempdir().unwrap();
    let ablated = tempfile::tempdir().unwrap();
    let mut cfg = builtin_scenario("s1").unwrap();
    cfg.total_slots = 6_000;
    let s1 = run(cfg.clone(), Some(base.path()), SimOptions::default()).unwrap();
    run(cfg.clone(), Some(same.path()), SimOptions::default()).unwrap();
    cfg.agent.reflection = false;
    cfg.agent.p_initial = 0.6;
    run(cfg, Some(ablated.path()), SimOptions::default()).unwrap();

    let runs: Vec<(String, _)> = [("base", base.path()), ("same", same.path()), ("worse", ablated.path())]
        .into_iter()
        .map(|(l, p)| (l.to_string(), load_summary(p).unwrap()))
        .collect();
    let table = compare(&runs).unwrap();
    assert_eq!(table.rows[0].aoi, s1.headline_aoi);
    assert_eq!(format_pct(table.rows[1].delta_pct), "0.0%");
    assert!(table.rows[2].delta_pct > 0.0);
    assert!(table.to_csv().lines().nth(3).unwrap().contains(",+"));
    assert_eq!(table.to_text().lines().count(), 4);

    let mut node_scope = builtin_scenario("s3").unwrap();
    node_scope.total_slots = 1_200;
    let other = run(node_scope, None, SimOptions::default()).unwrap();
    assert!(compare(&[runs[0].clone(), ("s3".into(), other)]).is_err());
}

#[test]
fn scenario_file_runs_like_builtin() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = builtin_scenario("s1").unwrap();
    cfg.total_slots = 3_000;
    let path = dir.path().join("s1.toml");
    std::fs::write(&path, cfg.to_toml().unwrap()).unwrap();
    let loaded = ScenarioConfig::resolve(path.to_str().unwrap()).unwrap();
    assert_eq!(loaded, cfg);
    assert_eq!(run(loaded, None, SimOptions::default()).unwrap(), run(cfg, None, SimOptions::default()).unwrap());
}

#[test]
fn slot_log_written_on_request() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = builtin_scenario("dynamic").unwrap();
    cfg.total_slots = 3_500;
    run(cfg, Some(dir.path()), SimOptions { slot_log: true }).unwrap();
    let log = std::fs::read_to_string(dir.path().join("slots.log")).unwrap();
    assert_eq!(log.lines().count(), 3_500);
    let bitmap = |n: usize| log.lines().nth(n).unwrap().split(',').nth(1).unwrap().to_string();
    assert_ne!(bitmap(2998).as_bytes()[1], b'-');
    assert_eq!(bitmap(2999).as_bytes()[1], b'-');
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(json["build"], "v0.1.0");
    assert_eq!(json["metadata"]["simulated_ms"], 3500.0);
}
