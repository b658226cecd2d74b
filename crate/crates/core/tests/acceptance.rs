//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::time::{Duration, Instant};

use aoi_rma::agent::policy::Priority;
use aoi_rma::aoi::{NodeId, Slot, SlotOutcome};
use aoi_rma::backend::parse::{parse_adjustment, parse_adjustment_from, parse_strategy_output, priority_section};
use aoi_rma::backend::prompts::{render_prompt, PromptTemplate, Role};
use aoi_rma::backend::Mode;
use aoi_rma::channel::SlotLogRecord;
use aoi_rma::dataset::{collect_dataset, compute_reward, export_preferences, export_sft, read_preferences, read_sft};
use aoi_rma::oracle::{best_fixed_p, evaluate_fixed, GridSpec, McBudget, Objective, OracleNode};
use aoi_rma::rng::NodeRng;
use aoi_rma::scenario::{apply_priority_defaults, builtin_scenario, DynamicEvent, NodeSpec, ScenarioConfig};
use aoi_rma::sim::{run, RunSummary, SimNode, SimOptions, Simulation};

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    ensure(elapsed <= limit, format!("took {:.1}s, limit {}s", elapsed.as_secs_f64(), limit.as_secs()))
}

fn e<T: std::fmt::Display>(x: T) -> String {
    x.to_string()
}

/// Runs `f` for seeds 1..=10 in parallel.
fn per_seed<T: Send>(f: impl Fn(u64) -> Result<T, String> + Sync) -> Result<Vec<T>, String> {
    std::thread::scope(|s| {
        let f = &f;
        let handles: Vec<_> = (1..=10u64).map(|seed| s.spawn(move || f(seed))).collect();
        handles.into_iter().map(|h| h.join().map_err(|_| "worker panicked".to_string())?).collect()
    })
}

fn run_seed(name: &str, seed: u64, tweak: impl FnOnce(&mut ScenarioConfig)) -> Result<RunSummary, String> {
    let mut cfg = builtin_scenario(name).map_err(e)?;
    cfg.seed = seed;
    tweak(&mut cfg);
    run(cfg, None, SimOptions::default()).map_err(e)
}

fn random_config(rng: &mut NodeRng, index: u64) -> ScenarioConfig {
    let n = 1 + (rng.uniform() * 5.0) as usize;
    let mut nodes = Vec::new();
    for _ in 0..n {
        let kind = (rng.uniform() * 4.0) as u32;
        nodes.push(match kind {
            0 => NodeSpec::aloha(0.05 + 0.6 * rng.uniform()),
            1 => NodeSpec::Fixed { id: None, p: rng.uniform(), seed: None },
            2 => {
                let frame = 2 + (rng.uniform() * 10.0) as u32;
                let pos = 1 + (rng.uniform() * frame as f64) as u32;
                NodeSpec::Tdma { id: None, frame_len: frame, slots: vec![pos] }
            }
            _ => NodeSpec::rma(),
        });
    }
    let mut cfg = ScenarioConfig::new("random", nodes, Default::default());
    cfg.total_slots = 1000;
    cfg.n_slots_per_period = 20 + (rng.uniform() * 80.0) as usize;
    cfg.periods_per_cycle = 1 + (rng.uniform() * 3.0) as usize;
    cfg.seed = index;
    if rng.uniform() < 0.5 {
        let at = 200 + (rng.uniform() * 300.0) as Slot;
        cfg.dynamic_events.push(DynamicEvent::Add { slot: at, nodes: vec![NodeSpec::aloha(0.3)] });
        if n > 1 {
            cfg.dynamic_events.push(DynamicEvent::Remove { slot: at + 200, ids: vec![0] });
        }
    }
    cfg
}

fn c1_accounting() -> Check {
    let start = Instant::now();
    let mut rng = NodeRng::new(2024, NodeId(0));
    let mut checked = 0u64;
    for i in 0..100 {
        let cfg = random_config(&mut rng, i);
        let mut sim = Simulation::from_config(cfg, SimOptions { slot_log: true }).map_err(e)?;
        sim.run_to_end().map_err(e)?;
        let mut sigma: BTreeMap<NodeId, Slot> = BTreeMap::new();
        let mut sums: BTreeMap<NodeId, (u64, u64, u64)> = BTreeMap::new();
        for line in sim.slot_log().unwrap() {
            let rec = SlotLogRecord::parse_line(line).map_err(e)?;
            for id in rec.decisions.keys() {
                let s = *sigma.entry(*id).or_insert(rec.slot - 1);
                let delta = rec.slot - s;
                let acc = sums.entry(*id).or_default();
                acc.0 += delta;
                acc.1 += 1;
                acc.2 = delta;
                if rec.outcome == SlotOutcome::Success(*id) {
                    sigma.insert(*id, rec.slot);
                }
            }
        }
        let world = sim.world();
        for entry in world.nodes().iter().chain(world.retired()) {
            let t = &entry.tracker;
            let expect = sums.get(&entry.id).copied().unwrap_or_default();
            ensure(
                (t.sum_delta(), t.slots_counted(), t.delta()) == expect,
                format!(
                    "log {i} node {}: tracker {:?} vs brute force {expect:?}",
                    entry.id,
                    (t.sum_delta(), t.slots_counted(), t.delta())
                ),
            )?;
            checked += 1;
        }
    }
    within(start.elapsed(), Duration::from_secs(5))?;
    Ok(format!("{checked} node trackers across 100 logs match exactly"))
}

fn c2_renewal() -> Check {
    let start = Instant::now();
    let budget = McBudget { slots: 200_000, seeds: 5, base_seed: 1 };
    let r = evaluate_fixed(&[OracleNode::Aloha(0.2)], &[], budget).map_err(e)?;
    let aoi = r.per_node_aoi[&NodeId(0)];
    let exact = r.analytic.as_ref().map(|a| a.system_mean);
    ensure(exact == Some(5.0), format!("analytic value {exact:?}"))?;
    ensure((aoi - 5.0).abs() / 5.0 <= 0.02, format!("simulated AoI {aoi}"))?;
    within(start.elapsed(), Duration::from_secs(10))?;
    Ok(format!("simulated {aoi:.4} vs 5.0"))
}

fn c3_symmetric() -> Check {
    let start = Instant::now();
    let nodes = [OracleNode::Free, OracleNode::Free];
    let g = best_fixed_p(&nodes, GridSpec::default(), Objective::SystemSum, McBudget::default()).map_err(e)?;
    let p = &g.result.p_vector;
    ensure(p.iter().all(|x| (x - 0.5).abs() <= 0.01 + 1e-12), format!("p* = {p:?}"))?;
    let sum = g.result.system_sum;
    ensure((sum - 8.0).abs() / 8.0 <= 0.03, format!("system_sum {sum}"))?;
    within(start.elapsed(), Duration::from_secs(60))?;
    Ok(format!("p* = {p:?}, system_sum {sum:.4}"))
}

fn c4_convergence() -> Check {
    let start = Instant::now();
    let cfg = builtin_scenario("s1").map_err(e)?;
    let nodes = cfg.oracle_nodes().map_err(e)?;
    let free = nodes.iter().position(|n| matches!(n, OracleNode::Free)).unwrap();
    let g =
        best_fixed_p(&nodes, GridSpec::default(), Objective::SystemMean, McBudget { slots: 0, ..McBudget::default() })
            .map_err(e)?;
    let target = g.result.per_node_aoi[&NodeId(free as u32)];
    let runs = per_seed(|seed| run_seed("s1", seed, |_| {}))?;
    let values: Vec<f64> = runs.iter().map(|s| s.steady_state_node_aoi[&NodeId(free as u32)]).collect();
    let good = values.iter().filter(|v| (*v - target).abs() / target <= 0.15).count();
    ensure(good >= 8, format!("{good}/10 seeds within 15% of {target:.3}: {values:?}"))?;
    within(start.elapsed(), Duration::from_secs(120))?;
    Ok(format!("{good}/10 seeds within 15% of oracle {target:.3} (p* = {:?})", g.result.p_vector))
}

fn c5_priority() -> Check {
    let runs = per_seed(|seed| {
        let mut cfg = apply_priority_defaults(builtin_scenario("s3").map_err(e)?).map_err(e)?;
        cfg.seed = seed;
        let summary = run(cfg.clone(), None, SimOptions::default()).map_err(e)?;
        let mut hp = None;
        let mut lp = None;
        for (i, n) in cfg.nodes.iter().enumerate() {
            if let NodeSpec::Rma { priority: Some(spec), .. } = n {
                let id = NodeId(n.id().unwrap_or(i as u32));
                match spec.priority {
                    Priority::High => hp = Some(id),
                    Priority::Low => lp = Some(id),
                }
            }
        }
        Ok((summary, hp.unwrap(), lp.unwrap()))
    })?;
    let mut aoi_ok = 0;
    let mut cross_ok = 0;
    for (s, hp, lp) in &runs {
        if s.steady_state_node_aoi[hp] < s.steady_state_node_aoi[lp] {
            aoi_ok += 1;
        }
        match (s.threshold_crossing[hp], s.threshold_crossing[lp]) {
            (Some(h), Some(l)) if h <= l => cross_ok += 1,
            (Some(_), None) => cross_ok += 1,
            _ => {}
        }
    }
    ensure(aoi_ok >= 9 && cross_ok >= 9, format!("AoI order {aoi_ok}/10, crossing order {cross_ok}/10"))?;
    Ok(format!("HP below LP in {aoi_ok}/10 seeds, HP crosses first in {cross_ok}/10"))
}

fn c6_ablation() -> Check {
    let pairs = per_seed(|seed| {
        let full = run_seed("s1", seed, |_| {})?;
        let ablated = run_seed("s1", seed, |c| c.agent.reflection = false)?;
        Ok((full.system_aoi_mean, ablated.system_aoi_mean))
    })?;
    let good = pairs.iter().filter(|(f, a)| f <= a).count();
    ensure(good >= 8, format!("{good}/10: {pairs:?}"))?;
    Ok(format!("full loop at or below no-reflection in {good}/10 seeds"))
}

fn c7_cadence() -> Check {
    let dir = tempfile::tempdir().map_err(e)?;
    let s = run(builtin_scenario("s1").map_err(e)?, Some(dir.path()), SimOptions::default()).map_err(e)?;
    let id = s.rma_nodes[0];
    ensure(
        s.reports[&id] == 300 && s.reflections[&id] == 100,
        format!("{} reports, {} reflections", s.reports[&id], s.reflections[&id]),
    )?;
    let periods = std::fs::read_to_string(dir.path().join("periods.csv")).map_err(e)?;
    let cycles = std::fs::read_to_string(dir.path().join("cycles.csv")).map_err(e)?;
    ensure(periods.lines().count() == 301 && cycles.lines().count() == 101, "CSV row counts")?;
    let short = run_seed("s1", 7, |c| c.total_slots = 601)?;
    ensure(
        short.reports[&id] == 3 && short.reflections[&id] == 1,
        format!("601 slots: {} reports, {} reflections", short.reports[&id], short.reflections[&id]),
    )?;
    Ok("60k slots: 300 reports/100 reflections; 601 slots: 3/1".into())
}

fn golden_dir() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/tests/golden"))
}

fn c8_golden() -> Check {
    let inputs: BTreeMap<String, String> =
        serde_json::from_str(&std::fs::read_to_string(golden_dir().join("inputs.json")).map_err(e)?).map_err(e)?;
    let mut n = 0;
    for role in Role::ALL {
        for mode in [Mode::Normal, Mode::Priority] {
            let name = format!("{}.{}.txt", role.as_str(), mode.as_str());
            let golden = std::fs::read(golden_dir().join(&name)).map_err(e)?;
            let rendered = render_prompt(&PromptTemplate::builtin(role, mode), &inputs).map_err(e)?;
            ensure(rendered.as_bytes() == golden.as_slice(), format!("{name} differs from golden"))?;
            n += 1;
        }
    }
    Ok(format!("{n} rendered prompts byte-identical"))
}

fn fixture(name: &str) -> Result<String, String> {
    std::fs::read_to_string(Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures")).join(name)).map_err(e)
}

fn c9_parsing() -> Check {
    let observe = fixture("observe.normal.txt")?;
    let reflect = fixture("reflect.normal.txt")?;
    let reflect_p = fixture("reflect.priority.txt")?;
    let decide = fixture("decide.normal.txt")?;
    let decide_p = fixture("decide.priority.txt")?;
    let high = Some(Priority::High);
    let low = Some(Priority::Low);
    let checks: [(&str, f64, f64); 9] = [
        ("decide marker", parse_strategy_output(&decide).map_err(e)?, 0.38),
        ("observe adjustment", parse_adjustment(&observe), 0.02),
        ("reflect adjustment", parse_adjustment(&reflect), 0.03),
        (
            "priority reflect, normal bullet",
            parse_adjustment(
                priority_section(&reflect_p, None).lines().find(|l| l.starts_with("- Normal")).unwrap_or(""),
            ),
            0.03,
        ),
        ("priority reflect, high", parse_adjustment(priority_section(&reflect_p, high)), 0.06),
        ("priority reflect, low", parse_adjustment_from(priority_section(&reflect_p, low), Some(0.35)), 0.02),
        ("priority decide, high text", parse_adjustment(priority_section(&decide_p, high)), 0.07),
        ("priority decide, high marker", parse_strategy_output(priority_section(&decide_p, high)).map_err(e)?, 0.41),
        ("priority decide, low marker", parse_strategy_output(priority_section(&decide_p, low)).map_err(e)?, 0.36),
    ];
    for (label, got, want) in checks {
        ensure(got == want, format!("{label}: got {got}, want {want}"))?;
    }
    Ok("0.38, +0.02, +0.03, +0.06, +0.07 and marker 0.41 over text 0.42".into())
}

fn c10_reward() -> Check {
    ensure(compute_reward(48.7, 45.1) == 3.6, format!("compute_reward(48.7, 45.1) = {}", compute_reward(48.7, 45.1)))?;
    let mut rng = NodeRng::new(10, NodeId(0));
    for _ in 0..10_000 {
        let (a, b) = (rng.uniform() * 100.0, rng.uniform() * 100.0);
        ensure(compute_reward(a, b) == -compute_reward(b, a), format!("not antisymmetric at ({a}, {b})"))?;
    }
    Ok("3.6 exactly; antisymmetric on 10000 pairs".into())
}

fn decisions(sim: &Simulation) -> Vec<SlotLogRecord> {
    sim.slot_log().unwrap().iter().map(|l| SlotLogRecord::parse_line(l).unwrap()).collect()
}

fn c11_dynamic() -> Check {
    let cfg = builtin_scenario("dynamic").map_err(e)?;
    let mut sim = Simulation::from_config(cfg.clone(), SimOptions { slot_log: true }).map_err(e)?;
    let s = sim.run_to_end().map_err(e)?;
    let counts: Vec<usize> = s.node_count_trajectory.iter().map(|(_, n)| *n).collect();
    let slots: Vec<Slot> = s.node_count_trajectory.iter().map(|(t, _)| *t).collect();
    ensure(
        counts == [3, 2, 4, 5] && slots == [1, 3000, 6000, 9000],
        format!("trajectory {:?}", s.node_count_trajectory),
    )?;

    let mut static_cfg = cfg;
    static_cfg.dynamic_events.clear();
    let mut base = Simulation::from_config(static_cfg, SimOptions { slot_log: true }).map_err(e)?;
    base.run_to_end().map_err(e)?;
    let (dyn_log, base_log) = (decisions(&sim), decisions(&base));
    ensure(dyn_log[..2999] == base_log[..2999], "logs diverge before the first event")?;
    let survivor = NodeId(0);
    let same_stream = dyn_log.iter().zip(&base_log).all(|(a, b)| a.decisions[&survivor] == b.decisions[&survivor]);
    ensure(same_stream, "surviving legacy node's decisions changed")?;
    let rma = s.rma_nodes[0];
    let pos = |sim: &Simulation| match &sim.world().node(rma).unwrap().station {
        SimNode::Rma(a) => a.rng_position(),
        SimNode::Legacy(_) => 0,
    };
    ensure(pos(&sim) == pos(&base), "agent random stream consumed differently")?;
    let new_ids: BTreeSet<NodeId> = dyn_log.last().unwrap().decisions.keys().copied().collect();
    ensure(new_ids.len() == 5, format!("final active ids {new_ids:?}"))?;
    Ok("3->2->4->5 at 3000/6000/9000; surviving streams unchanged".into())
}

fn c12_determinism() -> Check {
    let a = tempfile::tempdir().map_err(e)?;
    let b = tempfile::tempdir().map_err(e)?;
    for dir in [a.path(), b.path()] {
        run(builtin_scenario("s1").map_err(e)?, Some(dir), SimOptions::default()).map_err(e)?;
    }
    for f in ["periods.csv", "cycles.csv", "summary.json"] {
        let x = std::fs::read(a.path().join(f)).map_err(e)?;
        let y = std::fs::read(b.path().join(f)).map_err(e)?;
        ensure(x == y, format!("{f} differs"))?;
    }
    Ok("periods.csv, cycles.csv and summary.json byte-identical".into())
}

fn c13_dataset() -> Check {
    let data = collect_dataset(builtin_scenario("s1").map_err(e)?, 20).map_err(e)?;
    ensure(data.samples.len() == 40, format!("{} samples, skipped {:?}", data.samples.len(), data.skipped))?;
    let mut expected_pairs = 0;
    for dual in data.samples.chunks(2) {
        let (a, b) = (&dual[0], &dual[1]);
        if a.reward == b.reward {
            continue;
        }
        let (hi, lo) = if a.reward > b.reward { (a, b) } else { (b, a) };
        let pair = &data.pairs[expected_pairs];
        ensure(
            pair.chosen == hi.reflection_text && pair.rejected == lo.reflection_text && pair.prompt == a.context,
            format!("pair {expected_pairs} does not match its candidates"),
        )?;
        ensure(hi.reward > lo.reward, "chosen reward not above rejected")?;
        expected_pairs += 1;
    }
    ensure(expected_pairs == data.pairs.len(), "unexpected number of pairs")?;

    let dir = tempfile::tempdir().map_err(e)?;
    let sft_path = dir.path().join("sft.jsonl");
    let pref_path = dir.path().join("pairs.jsonl");
    let n_sft = export_sft(&data.samples, &sft_path).map_err(e)?;
    let n_pref = export_preferences(&data.pairs, &pref_path).map_err(e)?;
    for path in [&sft_path, &pref_path] {
        let text = std::fs::read_to_string(path).map_err(e)?;
        for line in text.lines() {
            serde_json::from_str::<serde_json::Value>(line).map_err(|err| format!("invalid JSON line: {err}"))?;
        }
    }
    let sft_back = read_sft(&sft_path).map_err(e)?;
    let pref_back = read_preferences(&pref_path).map_err(e)?;
    ensure(sft_back.len() == n_sft && pref_back == data.pairs, "records changed on re-read")?;
    let copy_sft = dir.path().join("sft2.jsonl");
    let copy_pref = dir.path().join("pairs2.jsonl");
    let rewrite: Vec<_> = sft_back.iter().map(|r| serde_json::to_string(r).unwrap() + "\n").collect();
    std::fs::write(&copy_sft, rewrite.concat()).map_err(e)?;
    export_preferences(&pref_back, &copy_pref).map_err(e)?;
    ensure(std::fs::read(&sft_path).map_err(e)? == std::fs::read(&copy_sft).map_err(e)?, "SFT file not byte-stable")?;
    ensure(
        std::fs::read(&pref_path).map_err(e)? == std::fs::read(&copy_pref).map_err(e)?,
        "pair file not byte-stable",
    )?;
    Ok(format!("40 samples, {n_sft} SFT records, {n_pref} preference pairs, round trip exact"))
}

fn main() {
    let criteria: [Criterion; 13] = [
        ("AoI accounting exactness", c1_accounting),
        ("renewal oracle", c2_renewal),
        ("symmetric optimum", c3_symmetric),
        ("agent convergence", c4_convergence),
        ("priority ordering", c5_priority),
        ("ablation direction", c6_ablation),
        ("cadence", c7_cadence),
        ("golden prompts", c8_golden),
        ("parsing fixtures", c9_parsing),
        ("reward arithmetic", c10_reward),
        ("dynamic scenario", c11_dynamic),
        ("determinism", c12_determinism),
        ("dataset export", c13_dataset),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = check();
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("criterion {:>2} PASS  {name} ({secs:.1}s): {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name} ({secs:.1}s): {why}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
