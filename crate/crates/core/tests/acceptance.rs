//! Acceptance suite. Runs every criterion at its stated tolerance, prints
//! one PASS or FAIL line per criterion and exits non-zero if any fails.
//!
//! Run alone with `cargo test --release -p wbanzkp --test acceptance`.

use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, StudentsT};

use wbanzkp::adversary::{redundancy_trials, run_scenario, Scenario, ScenarioTopology, Verdict, DDOS_INJECTIONS};
use wbanzkp::experiment::{run_plan, AggregateRow, ExperimentPlan, TraceSource};
use wbanzkp::handshake::{run_session, Endpoint, KeyMode, MessageKind, NetworkKeys, Scheme};
use wbanzkp::stats::{confidence_half_width, student_t_quantile};
use wbanzkp::wban_sim::{run_with_trace, AuthMode, LinkTrace, Posture, SimConfig, Strategy};
use wbanzkp::zkp_math::ModularGroup;

type Outcome = Result<String, String>;

fn check(ok: bool, pass: String, fail: impl FnOnce() -> String) -> Outcome {
    if ok {
        Ok(pass)
    } else {
        Err(fail())
    }
}

const SCHEMES: [Scheme; 2] = [Scheme::Banzkp, Scheme::BanGzkp];

/// Seeds per scheme for the handshake criteria; BAN-GZKP runs a first
/// contact and a fast-path session per seed, BANZKP two full sessions.
const HANDSHAKE_SEEDS: u64 = 500;

struct SessionFacts {
    agreed: bool,
    delivered: bool,
    messages: usize,
    exponentiations: u32,
    enc_dec: u32,
    fast_path: bool,
    keys_match: bool,
}

fn seeded_sessions(scheme: Scheme, seed: u64) -> Vec<SessionFacts> {
    let group = Arc::new(ModularGroup::default());
    let keys = NetworkKeys::generate(KeyMode::Global, &[0, 1], &*group, seed);
    let mut a = Endpoint::new(keys.identity(0), scheme, group.clone(), seed);
    let mut b = Endpoint::new(keys.identity(1), scheme, group, seed ^ 0xA5A5);
    (0..2u8)
        .map(|i| {
            let data: Vec<u8> = (0..24).map(|k| (seed as u8).wrapping_mul(31).wrapping_add(k + i)).collect();
            let run = run_session(&mut a, &mut b, data.clone(), 0).expect("honest session");
            let ia = a.drain_completed().pop().expect("initiator completed");
            let rb = b.drain_completed().pop().expect("responder completed");
            let c = ia.counters + rb.counters;
            SessionFacts {
                agreed: ia.session_secret == rb.session_secret,
                delivered: run.delivered.as_deref() == Some(&data[..]),
                messages: run.messages.len(),
                exponentiations: c.exponentiations,
                enc_dec: c.enc_dec_ops(),
                fast_path: run.messages.iter().any(|m| m.kind == MessageKind::Auth2Opt),
                keys_match: ia.data_key == rb.data_key && (scheme == Scheme::Banzkp || ia.data_key.is_some()),
            }
        })
        .collect()
}

fn all_sessions() -> Vec<(Scheme, Vec<SessionFacts>)> {
    SCHEMES
        .iter()
        .map(|&s| (s, (0..HANDSHAKE_SEEDS).into_par_iter().flat_map_iter(|seed| seeded_sessions(s, seed)).collect()))
        .collect()
}

fn criterion_1(sessions: &[(Scheme, Vec<SessionFacts>)]) -> Outcome {
    let mut failures = Vec::new();
    for (scheme, facts) in sessions {
        let bad =
            facts.iter().filter(|f| !(f.agreed && f.delivered && (*scheme == Scheme::Banzkp || f.keys_match))).count();
        if bad > 0 || facts.len() != 1000 {
            failures.push(format!("{scheme}: {bad} of {} sessions disagreed", facts.len()));
        }
    }
    check(failures.is_empty(), "1000 sessions per scheme agree on the secret".into(), || failures.join("; "))
}

fn criterion_2(sessions: &[(Scheme, Vec<SessionFacts>)]) -> Outcome {
    let mut failures = Vec::new();
    for (scheme, facts) in sessions {
        for (i, f) in facts.iter().enumerate() {
            let first = i % 2 == 0;
            let (msgs, encdec, fast) = match (scheme, first) {
                (Scheme::Banzkp, _) => (5, 5, false),
                (Scheme::BanGzkp, true) => (5, 5, false),
                (Scheme::BanGzkp, false) => (3, 3, true),
            };
            if f.messages != msgs || f.enc_dec != encdec || f.exponentiations != 4 || f.fast_path != fast {
                failures.push(format!(
                    "{scheme} session {i}: {} messages, {} enc/dec, {} exponentiations",
                    f.messages, f.enc_dec, f.exponentiations
                ));
            }
        }
    }
    check(failures.is_empty(), "BANZKP 5/5/4, BAN-GZKP first 5/5/4 then 3/3/4".into(), || {
        failures.into_iter().take(5).collect::<Vec<_>>().join("; ")
    })
}

fn expected_verdict(scenario: Scenario, scheme: Scheme) -> Verdict {
    match (scheme, scenario) {
        (Scheme::Banzkp, Scenario::DataReplay | Scenario::RedundancyCrack | Scenario::SinkDDoS) => {
            Verdict::AttackSucceeded
        }
        _ => Verdict::AttackBlocked,
    }
}

fn criterion_3() -> Outcome {
    let mut failures = Vec::new();
    for scheme in SCHEMES {
        for scenario in Scenario::ALL {
            for seed in 0..10 {
                match run_scenario(scenario, scheme, ScenarioTopology::default(), seed) {
                    Ok(r) if r.verdict == expected_verdict(scenario, scheme) => {}
                    Ok(r) => failures.push(format!("{scheme} {scenario} seed {seed}: {}", r.verdict)),
                    Err(e) => failures.push(format!("{scheme} {scenario} seed {seed}: {e}")),
                }
            }
        }
    }
    check(failures.is_empty(), "14 scheme-scenario pairs x 10 seeds as expected".into(), || failures.join("; "))
}

fn criterion_4() -> Outcome {
    let weak = redundancy_trials(Scheme::Banzkp, 1000, 4);
    let strong = redundancy_trials(Scheme::BanGzkp, 1000, 4);
    check(
        weak == 1000 && strong == 0,
        format!("c1^c2 = m1^m2 on {weak}/1000 BANZKP and {strong}/1000 BAN-GZKP pairs"),
        || format!("BANZKP {weak}/1000, BAN-GZKP {strong}/1000"),
    )
}

fn criterion_5() -> Outcome {
    let count = |scheme| {
        run_scenario(Scenario::SinkDDoS, scheme, ScenarioTopology::default(), 5)
            .ok()
            .and_then(|r| r.sink_adversary_messages)
    };
    let (weak, strong) = (count(Scheme::Banzkp), count(Scheme::BanGzkp));
    check(
        DDOS_INJECTIONS == 1000 && weak == Some(1000) && strong == Some(0),
        format!("of {DDOS_INJECTIONS} injections, {weak:?} reach the sink under BANZKP and {strong:?} under BAN-GZKP"),
        || format!("injections {DDOS_INJECTIONS}, BANZKP {weak:?}, BAN-GZKP {strong:?}"),
    )
}

fn criterion_6() -> Outcome {
    let trace = LinkTrace::perfect(Posture::Walk);
    let pairs: Vec<(AuthMode, Strategy)> =
        AuthMode::ALL.iter().flat_map(|&a| Strategy::ALL.iter().map(move |&s| (a, s))).collect();
    let failures: Vec<String> = pairs
        .par_iter()
        .filter_map(|&(scheme, strategy)| {
            let cfg = SimConfig::new(scheme, strategy, 1.0, 60.0, 1);
            match run_with_trace(&cfg, &trace) {
                Ok(m) if m.packets_generated > 0 && m.packets_received_at_sink == m.packets_generated => None,
                Ok(m) => Some(format!(
                    "{scheme}+{strategy}: {}/{} ({:?})",
                    m.packets_received_at_sink, m.packets_generated, m.drops
                )),
                Err(e) => Some(format!("{scheme}+{strategy}: {e}")),
            }
        })
        .collect();
    check(failures.is_empty(), format!("{} pairs at 100% reception", pairs.len()), || failures.join("; "))
}

const R: usize = 50;

fn plan(text: &str) -> ExperimentPlan {
    ExperimentPlan::parse(&format!("[cell-defaults]\nrepetitions = {R}\nbase_seed = 1000\nduration_s = 60\n{text}"))
        .expect("acceptance plan")
}

fn rows(text: &str) -> Result<Vec<AggregateRow>, String> {
    run_plan(&plan(text), &TraceSource::Synthetic, 0).map_err(|e| e.to_string())
}

fn find(rows: &[AggregateRow], scheme: AuthMode, strategy: Strategy, rate: f64) -> &AggregateRow {
    rows.iter()
        .find(|r| r.cell.scheme == scheme && r.cell.strategy == strategy && r.cell.rate_pps == rate)
        .expect("cell present")
}

fn criterion_7() -> Outcome {
    let mut failures = Vec::new();
    let mut notes = Vec::new();

    // (a) Flooding on the walking trace: hop-by-hop authentication sends less.
    let flood = rows("schemes = BANZKP, BAN_GZKP\nstrategies = FloodToSink\npostures = walk\nrates = 1, 5, 10\n")?;
    for rate in [1.0, 5.0, 10.0] {
        let g = &find(&flood, AuthMode::BanGzkp, Strategy::FloodToSink, rate).transmissions;
        let z = &find(&flood, AuthMode::Banzkp, Strategy::FloodToSink, rate).transmissions;
        if !g.strictly_below(z) {
            failures.push(format!(
                "(a) rate {rate}: BAN-GZKP {:.0}±{:.0} vs BANZKP {:.0}±{:.0}",
                g.mean, g.half_width, z.mean, z.half_width
            ));
        }
    }
    notes.push("(a) flood tx BAN-GZKP < BANZKP at 1, 5, 10 pkt/s");

    // (b) Sleeping: impaired sink links make per-hop sessions on APAP dearer.
    let sleep = rows("schemes = BANZKP, BAN_GZKP\nstrategies = APAP\npostures = sleep\nrates = 1, 5, 10\n")?;
    for rate in [1.0, 5.0, 10.0] {
        let z = &find(&sleep, AuthMode::Banzkp, Strategy::Apap, rate).transmissions;
        let g = &find(&sleep, AuthMode::BanGzkp, Strategy::Apap, rate).transmissions;
        if !z.strictly_below(g) {
            failures.push(format!(
                "(b) rate {rate}: BANZKP {:.0}±{:.0} vs BAN-GZKP {:.0}±{:.0}",
                z.mean, z.half_width, g.mean, g.half_width
            ));
        }
    }
    notes.push("(b) sleep APAP tx BANZKP < BAN-GZKP at 1, 5, 10 pkt/s");

    // (c) Authentication never improves reception.
    let all = rows("schemes = all\nstrategies = all\npostures = walk\nrates = 1, 5, 10\n")?;
    for strategy in Strategy::ALL {
        for rate in [1.0, 5.0, 10.0] {
            let base = &find(&all, AuthMode::None, strategy, rate).ratio;
            for scheme in [AuthMode::Banzkp, AuthMode::BanGzkp] {
                let s = &find(&all, scheme, strategy, rate).ratio;
                if !s.strictly_below(base) {
                    failures.push(format!(
                        "(c) {scheme}+{strategy} rate {rate}: {:.3}±{:.3} vs baseline {:.3}±{:.3}",
                        s.mean, s.half_width, base.mean, base.half_width
                    ));
                }
            }
        }
    }
    notes.push("(c) walk ratio scheme < baseline for all 30 scheme cells");

    check(failures.is_empty(), format!("R = {R}, disjoint 95% intervals: {}", notes.join("; ")), || failures.join("; "))
}

fn criterion_8() -> Outcome {
    let mut failures = Vec::new();
    for df in [1.0, 19.0, 199.0] {
        let oracle = StudentsT::new(0.0, 1.0, df).expect("oracle").inverse_cdf(0.975);
        match student_t_quantile(0.05, df) {
            Ok(t) if (t - oracle).abs() < 5e-4 => {}
            Ok(t) => failures.push(format!("df {df}: {t} vs {oracle}")),
            Err(e) => failures.push(format!("df {df}: {e}")),
        }
    }
    // Mean 4, S = sqrt(6/4); beta = t(0.025, 4) * S / sqrt(5).
    let fixture = [2.0, 4.0, 4.0, 5.0, 5.0];
    let expected = 2.776_445_105 * (1.5f64).sqrt() / 5f64.sqrt();
    match confidence_half_width(&fixture, 0.05) {
        Ok(b) if (b - expected).abs() < 1e-6 => {}
        Ok(b) => failures.push(format!("beta {b} vs {expected}")),
        Err(e) => failures.push(format!("beta: {e}")),
    }
    check(failures.is_empty(), format!("t quantiles to 3 dp at df 1, 19, 199; beta = {expected:.6}"), || {
        failures.join("; ")
    })
}

fn main() -> ExitCode {
    let mut all_passed = true;
    let mut report = |n: u32, started: Instant, outcome: Outcome| {
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(msg) => println!("criterion {n}: PASS ({secs:.1} s) {msg}"),
            Err(msg) => {
                all_passed = false;
                println!("criterion {n}: FAIL ({secs:.1} s) {msg}");
            }
        }
    };
    let t = Instant::now();
    let sessions = all_sessions();
    report(1, t, criterion_1(&sessions));
    report(2, Instant::now(), criterion_2(&sessions));
    let t = Instant::now();
    report(3, t, criterion_3());
    let t = Instant::now();
    report(4, t, criterion_4());
    let t = Instant::now();
    report(5, t, criterion_5());
    let t = Instant::now();
    report(6, t, criterion_6());
    let t = Instant::now();
    report(7, t, criterion_7());
    let t = Instant::now();
    report(8, t, criterion_8());
    if all_passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
