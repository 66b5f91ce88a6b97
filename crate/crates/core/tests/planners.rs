use lanechange::behavior_priors::{BehaviorDistribution, Scenario};
use lanechange::highway_sim::{generate_initial_scene, SimParams};
use lanechange::lanechange_pomdp::RewardWeights;
use lanechange::planners::toy::{Bandit, BanditState, Chain, ChainAction, Door, DoorPomdp, DOOR_ACTIONS};
use lanechange::planners::{mcts_dpw_plan, pomcpow_plan, qmdp_plan, HighwayModel, Mdp, PlannerParams, SpawnModel};
use lanechange::rng::{rng_from_seed, SimRng};
use rand::Rng;

fn params(iterations: usize, depth: usize, c: f64) -> PlannerParams {
    PlannerParams {
        iterations,
        depth,
        ucb_c: c,
        ..PlannerParams::default()
    }
}

fn highway() -> (HighwayModel, lanechange::highway_sim::SceneState) {
    let d = BehaviorDistribution::scenario(Scenario::Correlated);
    let sim = SimParams::default();
    let m = HighwayModel::new(sim, RewardWeights { lambda: 1.0 }, SpawnModel::Distribution(d.clone()));
    let s = generate_initial_scene(&d, &sim, &mut rng_from_seed(11));
    (m, s)
}

#[test]
fn bandit_values_are_exact() {
    let b = Bandit { rewards: [0.3, 0.7] };
    let r = mcts_dpw_plan(&b, &BanditState::Start, &params(200, 5, 1.0), &mut rng_from_seed(0));
    assert_eq!(r.action, 1);
    assert!((r.q[0] - 0.3).abs() < 1e-12 && (r.q[1] - 0.7).abs() < 1e-12);
    assert_eq!(r.visits.iter().sum::<u32>(), 200);
    assert!(r.visits[1] > r.visits[0]);
}

#[test]
fn single_action_is_returned_without_search() {
    struct One;
    impl Mdp for One {
        type State = u8;
        type Action = u8;
        fn actions(&self, _: &u8) -> Vec<u8> {
            vec![7]
        }
        fn step(&self, _: &u8, _: &u8, _: &mut SimRng) -> (u8, f64) {
            panic!("must not be simulated")
        }
        fn is_terminal(&self, _: &u8) -> bool {
            false
        }
        fn discount(&self) -> f64 {
            1.0
        }
        fn rollout(&self, _: &u8, _: usize, _: &mut SimRng) -> f64 {
            0.0
        }
    }
    let r = mcts_dpw_plan(&One, &0, &PlannerParams::default(), &mut rng_from_seed(0));
    assert_eq!(r.action, 7);
    assert_eq!(r.visits, vec![0]);
}

#[test]
fn qmdp_with_point_belief_equals_dpw() {
    let (m, s) = highway();
    let p = params(100, 20, 8.0);
    let a = mcts_dpw_plan(&m, &s, &p, &mut rng_from_seed(5));
    let b = qmdp_plan(&m, m.actions(&s), &mut || s.clone(), &p, &mut rng_from_seed(5));
    assert_eq!(a, b);
    let c = mcts_dpw_plan(&Chain, &0, &params(500, 3, 1.0), &mut rng_from_seed(6));
    let d = qmdp_plan(&Chain, Chain.actions(&0), &mut || 0u8, &params(500, 3, 1.0), &mut rng_from_seed(6));
    assert_eq!(c, d);
}

#[test]
fn widening_cap_holds_on_highway() {
    let (m, s) = highway();
    let p = params(300, 40, 8.0);
    let r = mcts_dpw_plan(&m, &s, &p, &mut rng_from_seed(9));
    assert_eq!(r.cap_violations, 0);
    assert!(r.max_children <= p.child_cap(p.iterations as u32));
    let mut root = rng_from_seed(10);
    let r = pomcpow_plan(&m, m.actions(&s), &mut || s.clone(), &p, &mut root);
    assert_eq!(r.cap_violations, 0);
    assert!(r.max_children <= p.child_cap(p.iterations as u32));
}

#[test]
fn planners_are_seed_deterministic() {
    let (m, s) = highway();
    let p = params(80, 20, 8.0);
    let run = |seed: u64| {
        let a = mcts_dpw_plan(&m, &s, &p, &mut rng_from_seed(seed));
        let mut r1 = rng_from_seed(seed + 100);
        let b = qmdp_plan(&m, m.actions(&s), &mut || s.clone(), &p, &mut rng_from_seed(seed));
        let c = pomcpow_plan(&m, m.actions(&s), &mut || s.clone(), &p, &mut r1);
        (a, b, c)
    };
    assert_eq!(run(1), run(1));
}

fn chain_root_error(iterations: usize, seed: u64) -> f64 {
    let depth = 3;
    let exact = Chain::q_values(0, depth);
    let v = exact[0].max(exact[1]);
    let r = mcts_dpw_plan(&Chain, &0, &params(iterations, depth, 1.0), &mut rng_from_seed(seed));
    (r.value() - v).abs()
}

#[test]
fn doubling_iterations_does_not_increase_error() {
    for n in [50, 200] {
        let diffs: Vec<f64> = (0..50)
            .map(|s| chain_root_error(2 * n, s) - chain_root_error(n, s + 1000))
            .collect();
        let mean = diffs.iter().sum::<f64>() / 50.0;
        let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / 49.0;
        let se = (var / 50.0).sqrt();
        assert!(mean <= 2.0 * se, "n {n}: mean change {mean}, se {se}");
    }
}

#[test]
fn chain_planners_pick_right() {
    let q = Chain::q_values(0, 3);
    assert!(q[1] > q[0]);
    let p = params(2000, 3, 1.0);
    let mut hits = 0;
    for seed in 0..20 {
        if mcts_dpw_plan(&Chain, &0, &p, &mut rng_from_seed(seed)).action == ChainAction::Right {
            hits += 1;
        }
    }
    assert!(hits >= 19, "{hits}/20");
}

#[test]
fn pomcpow_choice_beats_qmdp_choice_on_doors() {
    let door = DoorPomdp::default();
    let exact = door.exact_q(0.5, 3);
    let value = |a| exact[DOOR_ACTIONS.iter().position(|x| *x == a).unwrap()];
    let p = params(4000, 3, 1.0);
    for seed in 0..10 {
        let mut root = rng_from_seed(seed + 500);
        let mut sampler = move || if root.random::<bool>() { Door::Left } else { Door::Right };
        let pc = pomcpow_plan(&door, DOOR_ACTIONS.to_vec(), &mut sampler, &p, &mut rng_from_seed(seed));
        let qc = qmdp_plan(&door, DOOR_ACTIONS.to_vec(), &mut sampler, &p, &mut rng_from_seed(seed));
        assert!(value(pc.action) >= value(qc.action) - 1e-12, "{:?} vs {:?}", pc.action, qc.action);
    }
}
