use tofg::graph::GraphConfig;
use tofg::metrics::MetricsConfig;
use tofg::model::{ModelConfig, TofgGat};
use tofg::scene::synthetic::{overtake_layout, EGO_LENGTH};
use tofg::scene::{gen_synthetic, state_at, Scenario, ScenarioKind};
use tofg::simulator::{
    batch_eval, evaluate, run, ConstantSpeedPlanner, CorrectionCause, ExpertPlanner, ModelPlanner, SimConfig,
    SimError, SimTrace, StationaryPlanner,
};

fn scenario(kind: ScenarioKind, seed: u64) -> Scenario {
    let mut s = gen_synthetic(kind, seed);
    s.id = format!("{kind}-{seed}");
    s
}

fn small_model() -> TofgGat {
    TofgGat::new(ModelConfig { embed_dim: 8, mlp_hidden: 8, n_gat_layers: 1, ..Default::default() }).unwrap()
}

fn small_graph() -> GraphConfig {
    GraphConfig { roi_radius: Some(15.0), ..Default::default() }
}

#[test]
fn oracle_replays_expert() {
    let cfg = SimConfig::default();
    let planner = ExpertPlanner { horizon: 12 };
    for kind in ScenarioKind::ALL {
        for seed in 0..3 {
            let s = scenario(kind, seed);
            let trace = run(&s, &planner, &cfg).unwrap();
            assert_eq!(trace.driven.len(), 41);
            assert!(trace.events.is_empty(), "{kind} {seed}: {:?}", trace.events);
            for st in &trace.driven {
                let log = state_at(s.ego(), st.frame).unwrap();
                assert!(st.position().distance(log.position()) <= 1e-6);
                assert!((st.theta - log.theta).abs() <= 1e-6, "{kind} {seed} frame {}", st.frame);
            }
            let r = evaluate(&s, &trace, &MetricsConfig::default()).unwrap();
            assert!(r.l2.mean <= 1e-3 && r.l2.max <= 1e-3, "{kind} {seed}: {:?}", r.l2);
            assert!((r.prog2goal_ratio.unwrap() - 1.0).abs() <= 1e-6);
            assert!((r.prog2exp_ratio.unwrap() - 1.0).abs() <= 1e-6);
        }
    }
}

#[test]
fn stationary_on_empty_road() {
    let mut s = scenario(ScenarioKind::Straight, 4);
    s.agents.truncate(1);
    let cfg = SimConfig::default();
    let trace = run(&s, &StationaryPlanner { horizon: 12 }, &cfg).unwrap();
    assert!(trace.events.is_empty());
    let r = evaluate(&s, &trace, &MetricsConfig::default()).unwrap();
    let start = trace.driven[0].position().distance(s.goal.position());
    assert_eq!(r.dist2goal_min, start);
    assert_eq!(r.prog2goal, 0.0);
    assert_eq!(r.prog2exp, 0.0);
}

#[test]
fn constant_speed_hits_stopped_car_once() {
    for seed in 0..5 {
        let s = scenario(ScenarioKind::Overtake, seed);
        let lay = overtake_layout(seed);
        let trace = run(&s, &ConstantSpeedPlanner { horizon: 12 }, &SimConfig::default()).unwrap();
        assert_eq!(trace.events.len(), 1, "seed {seed}: {:?}", trace.events);
        assert_eq!(trace.events[0].cause, CorrectionCause::Collision);
        // Boxes of equal width on the same centerline touch once the gap
        // between centers drops to the sum of half lengths.
        let stopped_len = s.agent("stopped").unwrap().length;
        let contact_x = lay.stopped_x - (EGO_LENGTH + stopped_len) / 2.0;
        let expected = (0..).find(|&g| lay.ego_speed * g as f64 * 0.5 >= contact_x).unwrap();
        assert_eq!(trace.events[0].frame, expected, "seed {seed}");
        let last = trace.driven.last().unwrap();
        assert_eq!(last.speed(), 0.0);
    }
}

#[test]
fn horizon_shorter_than_replan_interval() {
    let s = scenario(ScenarioKind::Straight, 0);
    let cfg = SimConfig { replan_interval: 1.0, ..Default::default() };
    let err = run(&s, &ExpertPlanner { horizon: 1 }, &cfg).unwrap_err();
    assert!(matches!(err, SimError::Config(_)), "{err}");
    assert!(run(&s, &ExpertPlanner { horizon: 2 }, &cfg).is_ok());
    let bad = SimConfig { replan_interval: 0.3, ..Default::default() };
    assert!(matches!(run(&s, &ExpertPlanner { horizon: 12 }, &bad), Err(SimError::Config(_))));
}

#[test]
fn duration_beyond_log() {
    let s = scenario(ScenarioKind::Straight, 0);
    let cfg = SimConfig { duration: 30.0, ..Default::default() };
    assert!(matches!(run(&s, &ExpertPlanner { horizon: 12 }, &cfg), Err(SimError::TooShort { .. })));
}

#[test]
fn model_history_must_match() {
    let s = scenario(ScenarioKind::Straight, 0);
    let m = small_model();
    let planner = ModelPlanner { model: &m, graph: small_graph() };
    let cfg = SimConfig { history: 4, ..Default::default() };
    assert!(matches!(run(&s, &planner, &cfg), Err(SimError::Config(_))));
}

#[test]
fn replayed_agents_match_log() {
    let s = scenario(ScenarioKind::Overtake, 2);
    let trace = run(&s, &ConstantSpeedPlanner { horizon: 12 }, &SimConfig::default()).unwrap();
    assert_eq!(trace.replayed.len(), s.agents.len() - 1);
    for track in &trace.replayed {
        let log = s.agent(&track.id).unwrap();
        assert_eq!(track.states.len(), trace.driven.len());
        for st in &track.states {
            assert_eq!(st, state_at(log, st.frame).unwrap());
        }
    }
}

#[test]
fn model_run_is_continuous_and_deterministic() {
    let s = scenario(ScenarioKind::LaneChange, 1);
    let m = small_model();
    let planner = ModelPlanner { model: &m, graph: small_graph() };
    let cfg = SimConfig { duration: 5.0, ..Default::default() };
    let a = run(&s, &planner, &cfg).unwrap();
    let b = run(&s, &planner, &cfg).unwrap();
    assert_eq!(a.to_json(), b.to_json());
    let until = a.events.first().map(|e| e.frame).unwrap_or(i64::MAX);
    let replans = a.driven.iter().filter(|st| st.frame < until.min(a.end_frame())).count();
    assert_eq!(a.plans.len(), replans);
    for w in a.driven.windows(2) {
        if w[1].frame >= until {
            break;
        }
        let plan = a.plans.iter().rev().find(|p| p.frame <= w[0].frame).unwrap();
        let origin = a.driven.iter().find(|st| st.frame == plan.frame).unwrap().position();
        let mut pts = vec![origin];
        pts.extend(&plan.waypoints);
        let max_step = pts.windows(2).map(|q| q[0].distance(q[1])).fold(0.0, f64::max);
        assert!(w[0].position().distance(w[1].position()) <= max_step + 1e-9);
    }
    let back: SimTrace = serde_json::from_str(&a.to_json()).unwrap();
    assert_eq!(back, a);
}

#[test]
fn batch_rows_and_mean() {
    let cfg = SimConfig::default();
    let planner = ExpertPlanner { horizon: 12 };
    let one = batch_eval(&[scenario(ScenarioKind::Curve, 1)], &planner, &cfg, &MetricsConfig::default()).unwrap();
    assert_eq!(one.rows.len(), 1);
    assert_eq!(one.mean, Some(one.rows[0].report));
    assert_eq!(one.to_csv().lines().count(), 3);

    let s = scenario(ScenarioKind::LaneChange, 2);
    let three = batch_eval(&[s.clone(), s.clone(), s], &planner, &cfg, &MetricsConfig::default()).unwrap();
    assert_eq!(three.rows[0], three.rows[1]);
    assert_eq!(three.rows[1], three.rows[2]);
}

#[test]
fn batch_continues_past_failures() {
    let cfg = SimConfig::default();
    let mut short = scenario(ScenarioKind::Straight, 3);
    for a in &mut short.agents {
        a.states.truncate(20);
    }
    let ok = scenario(ScenarioKind::Straight, 5);
    let report = batch_eval(&[short, ok], &ExpertPlanner { horizon: 12 }, &cfg, &MetricsConfig::default()).unwrap();
    assert_eq!(report.rows.len(), 1);
    assert_eq!(report.rows[0].scenario_id, "straight-5");
    assert_eq!(report.failures.len(), 1);
    assert_eq!(report.failures[0].scenario_id, "straight-3");
    assert!(batch_eval(&[], &ExpertPlanner { horizon: 12 }, &cfg, &MetricsConfig::default()).is_err());
}

#[test]
fn oracle_batch_mean_l2() {
    let scenarios: Vec<Scenario> = (0..6).map(|i| scenario(ScenarioKind::ALL[i % 4], 40 + i as u64)).collect();
    let report = batch_eval(&scenarios, &ExpertPlanner { horizon: 12 }, &SimConfig::default(), &MetricsConfig::default()).unwrap();
    assert!(report.failures.is_empty());
    assert_eq!(report.total_auto_corrections(), 0);
    assert!(report.mean.unwrap().l2.mean <= 1e-3);
}
