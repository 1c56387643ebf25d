use std::collections::BTreeMap;

use panvas_core::identity::{derive_pseudonym, Identity, IdentityPolicy, Pseudonym};
use panvas_core::ids::{AccountId, Credits, PaperId, UserId};
use panvas_core::ledger::{replay_balances, HoldReason, Ledger, LedgerPolicy, Owner, TxnKind, TREASURY};
use panvas_core::paper_store::archive::{export_paper, import_paper};
use panvas_core::paper_store::{ContentInput, FragmentKind, LinkParent, PaperPolicy, PaperStore};
use panvas_core::platform::replay;
use panvas_core::prediction_market::apportion;
use panvas_core::{Command, EventRecord, Platform, PlatformConfig};
use proptest::prelude::*;

proptest! {
    #[test]
    fn apportion_is_exact_and_fair(total in 0u64..1_000_000, weights in prop::collection::vec(1u64..10_000, 1..40)) {
        let w: Vec<(AccountId, Credits)> = weights.iter().enumerate().map(|(i, &w)| (AccountId(i as u64 + 2), w)).collect();
        let shares = apportion(total, &w);
        prop_assert_eq!(shares.iter().sum::<Credits>(), total);
        let sum: u128 = weights.iter().map(|&x| x as u128).sum();
        for (&(_, wi), &s) in w.iter().zip(&shares) {
            // |s - total * wi / sum| < 1
            let exact = total as i128 * wi as i128;
            prop_assert!((s as i128 * sum as i128 - exact).abs() < sum as i128);
        }
    }

    #[test]
    fn ledger_books_always_balance(ops in prop::collection::vec((0u8..4, 0usize..5, 0usize..5, 0u64..300), 1..80)) {
        let mut ledger = Ledger::genesis(LedgerPolicy::default(), 0);
        let accounts: Vec<AccountId> = (0..5).map(|u| ledger.open_account(Owner::User(UserId(u)), 0).unwrap()).collect();
        let mut holds = Vec::new();
        for (op, a, b, amount) in ops {
            let _ = match op {
                0 => ledger.post_transaction(TREASURY, accounts[a], amount, TxnKind::DirectReward, "grant").map(|_| ()),
                1 => ledger.post_transaction(accounts[a], accounts[b], amount, TxnKind::BetProfit, "move").map(|_| ()),
                2 => ledger.hold_escrow(accounts[a], amount, HoldReason::Stake, "hold").map(|h| holds.push(h.hold_id)),
                _ => match holds.pop() {
                    Some(h) => ledger.refund_escrow(h, "refund").map(|_| ()),
                    None => Ok(()),
                },
            };
            let sheet = ledger.balance_sheet();
            prop_assert!(sheet.conserves());
            prop_assert_eq!(sheet.escrow, sheet.held_in_escrow);
        }
        let replayed = replay_balances(ledger.genesis_total(), ledger.transactions()).unwrap();
        for a in ledger.accounts() {
            prop_assert_eq!(replayed.get(&a.id).copied().unwrap_or(0), a.balance as i128);
        }
    }
}

#[test]
fn registry_pseudonyms_match_the_derivation() {
    let key = "0f1e2d3c4b5a69788796a5b4c3d2e1f0";
    let mut ids = Identity::new(IdentityPolicy { pseudonym_key: key.into(), ..IdentityPolicy::default() });
    let u = ids.register_user("ada", vec![], 0).unwrap().user_id;
    let handle = ids.pseudonym_for(u, PaperId(3)).unwrap();
    assert_eq!(handle, derive_pseudonym(&hex::decode(key).unwrap(), u, PaperId(3)));
    assert_eq!(Pseudonym::parse(handle.as_str()), Some(handle.clone()));
    assert_ne!(handle, ids.pseudonym_for(u, PaperId(4)).unwrap());
}

#[test]
fn archives_round_trip_between_stores() {
    let mut store = PaperStore::new(PaperPolicy::default());
    let paper = store.submit_paper("Portable", &[UserId(0)], 0).unwrap().paper_id;
    let intro = store.add_fragment(paper, FragmentKind::Section, ContentInput::Text("Intro".into()), 0).unwrap().fragment_id;
    let fig = store.add_fragment(paper, FragmentKind::Figure, ContentInput::Binary(vec![1, 2, 3, 255]), 0).unwrap().fragment_id;
    store.revise_fragment(intro, ContentInput::Text("Introduction".into()), 1).unwrap();
    store.link_fragment(LinkParent::Root, intro, 0).unwrap();
    store.link_fragment(LinkParent::Fragment(intro), fig, 0).unwrap();
    let bytes = export_paper(&store, paper).unwrap();

    let mut other = PaperStore::new(PaperPolicy::default());
    let copy = import_paper(&mut other, &bytes, 5).unwrap();
    let shape = |s: &PaperStore, p: PaperId| -> Vec<(FragmentKind, usize, String)> {
        s.assemble_document(p)
            .unwrap()
            .iter()
            .map(|(f, r)| (f.kind, f.revisions.len(), format!("{:?}", r.content)))
            .collect()
    };
    assert_eq!(shape(&store, paper), shape(&other, copy));
    assert_eq!(other.paper(copy).unwrap().title, "Portable");
}

#[test]
fn ndjson_log_replays_to_the_same_state() {
    let mut p = Platform::new(PlatformConfig::default()).unwrap();
    let mut log = vec![EventRecord::genesis(&p)];
    let commands = vec![
        Command::RegisterUser { display_name: "ada".into(), expertise: vec!["ml".into()], role: None },
        Command::GrantCredits { user: UserId(0), amount: 50 },
        Command::SubmitPaper { title: "Notes".into(), authors: vec![UserId(0)] },
        Command::AdvanceClock { ticks: 3 },
        Command::SettleEpoch { epoch: None },
    ];
    for c in commands {
        let at = p.now();
        let applied = p.execute(&c).unwrap();
        log.push(EventRecord::new(log.len() as u64, c, at, applied.effects));
    }
    let text: String = log.iter().map(|r| serde_json::to_string(r).unwrap() + "\n").collect();
    let parsed: Vec<EventRecord> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let rebuilt = replay(&parsed, &PlatformConfig::default()).unwrap();
    assert_eq!(rebuilt.state(), p.state());
    let balances: BTreeMap<_, _> = rebuilt.state().ledger.accounts().iter().map(|a| (a.id, a.balance)).collect();
    assert_eq!(balances.values().sum::<Credits>(), PlatformConfig::default().ledger.treasury_genesis);
}
