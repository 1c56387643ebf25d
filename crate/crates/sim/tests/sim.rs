use std::process::Command as Process;
use std::time::Instant;

use panvas_core::identity::Role;
use panvas_core::ledger::TxnKind;
use panvas_core::review_market::MatchOutcome;
use panvas_core::scores::Scores;
use panvas_core::{Command, EventRecord, Outcome, Platform, PlatformConfig};
use panvas_sim::scenario::{AgentCounts, Propensities, RolePropensities};
use panvas_sim::{run_scenario, verify_records, write_ndjson, ScenarioConfig, SimReport};

fn small(seed: u64) -> ScenarioConfig {
    ScenarioConfig {
        seed,
        epochs: 4,
        agents: AgentCounts { freemen: 10, producers: 8, consumers: 8 },
        ..ScenarioConfig::default()
    }
}

#[test]
fn same_seed_same_report_bytes() {
    let a = run_scenario(&small(11)).unwrap();
    let b = run_scenario(&small(11)).unwrap();
    let c = run_scenario(&small(12)).unwrap();
    let json = |r: &SimReport| serde_json::to_string(r).unwrap();
    assert_eq!(json(&a.report), json(&b.report));
    assert_eq!(a.log, b.log);
    assert_ne!(a.log, c.log);
    assert!(a.report.passed());
}

#[test]
fn idle_agents_mint_nothing() {
    let idle = Propensities::default();
    let config = ScenarioConfig {
        propensities: RolePropensities { freeman: idle, producer: idle, consumer: idle },
        ..small(3)
    };
    let run = run_scenario(&config).unwrap();
    assert_eq!(run.report.total_minted, 0);
    assert!(run.report.mint_per_epoch.is_empty());
    assert_eq!(run.report.grand_total, run.report.genesis_total);
    assert_eq!(run.report.balances.gini, 0.0);
    assert!(run.report.passed());
}

fn review_text() -> String {
    "The argument is sound and the experiments support the central claim. ".repeat(8)
}

/// Ten producers in a ring: each posts a bounty on their own paper and the
/// next one reviews it.
fn review_ring(n: u64) -> (Vec<EventRecord>, PlatformConfig) {
    let config = PlatformConfig::default();
    let mut p = Platform::new(config.clone()).unwrap();
    let mut log = vec![EventRecord::genesis(&p)];
    let mut run = |p: &mut Platform, c: Command| {
        let at = p.now();
        let applied = p.execute(&c).unwrap_or_else(|e| panic!("{c:?}: {e}"));
        log.push(EventRecord::new(log.len() as u64, c, at, applied.effects));
        applied.outcome
    };
    let mut users = Vec::new();
    for i in 0..n {
        let register = Command::RegisterUser {
            display_name: format!("p{i}"),
            expertise: vec!["ml".into()],
            role: Some(Role::Producer),
        };
        let Outcome::User { user, .. } = run(&mut p, register) else { unreachable!() };
        run(&mut p, Command::GrantCredits { user: user.user_id, amount: 100 });
        run(&mut p, Command::GrantLicense { user: user.user_id, fields: vec!["ml".into()], exam_score: 80 });
        users.push(user.user_id);
    }
    let mut bounties = Vec::new();
    for (i, &poster) in users.iter().enumerate() {
        let Outcome::Paper { paper } = run(&mut p, Command::SubmitPaper { title: format!("t{i}"), authors: vec![poster] })
        else {
            unreachable!()
        };
        let post = Command::PostBounty {
            paper: paper.paper_id,
            poster,
            reward: 50,
            required_fields: vec!["ml".into()],
            slots: 1,
            deadline: 1,
        };
        let Outcome::Bounty { bounty } = run(&mut p, post) else { unreachable!() };
        let reviewer = users[(i + 1) % users.len()];
        run(&mut p, Command::PlaceBid { bounty: bounty.bounty_id, reviewer, ask: 40 });
        bounties.push((bounty.bounty_id, reviewer));
    }
    run(&mut p, Command::AdvanceClock { ticks: 1 });
    for (bounty, reviewer) in bounties {
        let Outcome::Matched { result: MatchOutcome::Matched { .. }, assignments, .. } =
            run(&mut p, Command::MatchReviewers { bounty, by: None })
        else {
            panic!("bounty {bounty} did not match")
        };
        let review = Command::SubmitReview {
            assignment: assignments[0].assignment_id,
            reviewer,
            scores: Scores::new(7, 7, 7).into(),
            text: review_text(),
        };
        run(&mut p, review);
    }
    run(&mut p, Command::SettleEpoch { epoch: Some(0) });
    (log, config)
}

#[test]
fn review_ring_mints_base_plus_production() {
    let (log, config) = review_ring(10);
    let report = SimReport::from_log(&log, &config).unwrap();
    // Producer reward: base plus production, one review worth 10 each.
    let expected = 10 * (config.ledger.base_reward + 10);
    assert_eq!(expected, 200);
    assert_eq!(report.total_minted, expected);
    assert_eq!(report.mint_per_epoch.len(), 1);
    assert_eq!(report.mint_per_epoch[0].accounts_paid, 10);
    let minted_in_log: u64 = log
        .iter()
        .flat_map(|r| &r.effects)
        .filter(|t| t.kind == TxnKind::SettlementMint)
        .map(|t| t.amount)
        .sum();
    assert_eq!(minted_in_log, 200);
    assert_eq!(report.bounties.fulfilled, 10);
    assert_eq!(report.bounties.fulfillment_rate, 1.0);
    assert!(report.passed());
    assert!(verify_records(&log).passed());
}

#[test]
fn tampered_effect_fails_conservation_at_its_sequence() {
    let run = run_scenario(&small(5)).unwrap();
    let mut log = run.log;
    let target = log.len() / 2 + log[log.len() / 2..].iter().position(|r| !r.effects.is_empty()).unwrap();
    log[target].effects[0].amount += 1;
    let v = verify_records(&log);
    assert_eq!(v.exit_code(), 1);
    let conservation = v.checks.iter().find(|c| c.name == "conservation").unwrap();
    assert!(!conservation.passed);
    let detail = conservation.detail.as_deref().unwrap();
    assert!(detail.starts_with(&format!("event {target}:")), "{detail}");
}

#[test]
fn empty_log_passes_vacuously() {
    let v = verify_records(&[]);
    assert!(v.passed());
    assert_eq!(v.checks.len(), 5);
}

#[test]
fn two_hundred_agents_twenty_epochs() {
    let config = ScenarioConfig::default();
    assert_eq!(config.agents.total(), 200);
    let started = Instant::now();
    let run = run_scenario(&config).unwrap();
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 10.0, "took {elapsed:?}");
    assert!((8_000..=15_000).contains(&run.report.events), "{} events", run.report.events);
    assert!(run.report.passed());
    assert_eq!(run.report.grand_total, run.report.genesis_total);
    let stated: u64 = run.report.mint_per_epoch.iter().map(|e| e.minted).sum();
    assert_eq!(stated, run.report.total_minted);
    assert_eq!(run.report.mint_per_epoch.len(), 20);
}

fn sim_bin() -> Process {
    Process::new(env!("CARGO_BIN_EXE_panvas-sim"))
}

#[test]
fn cli_run_then_verify() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("scenario.toml");
    std::fs::write(&scenario, "seed = 9\nepochs = 3\n[agents]\nfreemen = 6\nproducers = 6\nconsumers = 6\n").unwrap();
    let (report, log) = (dir.path().join("report.json"), dir.path().join("events.ndjson"));
    let status = sim_bin()
        .args(["run", "--config"])
        .arg(&scenario)
        .arg("--out")
        .arg(&report)
        .arg("--log")
        .arg(&log)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let parsed: SimReport = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert!(parsed.passed());

    let verify = |path: &std::path::Path| sim_bin().args(["verify", "--log"]).arg(path).output().unwrap();
    let out = verify(&log);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("PASS conservation"));

    let mut records: Vec<EventRecord> = panvas_sim::verify::parse_records(&std::fs::read_to_string(&log).unwrap()).unwrap();
    let i = records.iter().rposition(|r| !r.effects.is_empty()).unwrap();
    records[i].effects[0].amount += 7;
    let tampered = dir.path().join("tampered.ndjson");
    write_ndjson(std::fs::File::create(&tampered).unwrap(), &records).unwrap();
    let out = verify(&tampered);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains(&format!("FAIL conservation (event {i}:")));

    let empty = dir.path().join("empty.ndjson");
    std::fs::write(&empty, "").unwrap();
    assert_eq!(verify(&empty).status.code(), Some(0));

    let garbage = dir.path().join("garbage.ndjson");
    std::fs::write(&garbage, "{not json\n").unwrap();
    let out = verify(&garbage);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("CORRUPT_LOG"));
    assert_eq!(verify(&dir.path().join("missing.ndjson")).status.code(), Some(2));

    std::fs::write(&scenario, "ticks_per_epoch = 0\n").unwrap();
    let status = sim_bin().args(["run", "--config"]).arg(&scenario).arg("--out").arg(&report).status().unwrap();
    assert_eq!(status.code(), Some(2));
}
