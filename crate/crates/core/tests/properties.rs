//! Property tests over the fusion, oracle, policy and label-store invariants.

use std::sync::OnceLock;

use prefview_core::labels::{FrameManifest, LabelStore, PairTicket, TicketState};
use prefview_core::oracle::{oracle_label, Oracle, OracleConfig};
use prefview_core::ppo::{gae, masked_softmax};
use prefview_core::pref::{Labeler, Mu};
use prefview_core::recon::{fuse, Capture, VoxelReconstruction};
use prefview_core::sim::{build_scene, render, CameraIntrinsics, SceneConfig, SceneModel, ViewSphere};
use proptest::prelude::*;

struct Fixture {
    scene: SceneModel,
    captures: Vec<Capture>,
    oracle: Oracle,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let scene = build_scene(5, &SceneConfig::default()).unwrap();
        let sphere = ViewSphere::default();
        let intr = CameraIntrinsics::default();
        let captures = (1..=sphere.len())
            .map(|a| {
                let pose = sphere.viewpoint_pose(a).unwrap();
                Capture {
                    frame: render(&scene, &pose, &intr).unwrap(),
                    pose,
                    intrinsics: intr,
                    action: a,
                }
            })
            .collect();
        let oracle = Oracle::new(&scene, &sphere, &intr, 24, &OracleConfig::default()).unwrap();
        Fixture { scene, captures, oracle }
    })
}

fn fused(actions: &[usize]) -> VoxelReconstruction {
    let f = fixture();
    let caps: Vec<Capture> = actions.iter().map(|&a| f.captures[a - 1].clone()).collect();
    fuse(&caps, f.scene.bounds, 24).unwrap()
}

fn action_subset() -> impl Strategy<Value = Vec<usize>> {
    proptest::sample::subsequence((1..=36).collect::<Vec<usize>>(), 1..=10).prop_shuffle()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn fusion_ignores_capture_order(actions in action_subset(), seed in any::<u64>()) {
        let mut shuffled = actions.clone();
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
        rand::seq::SliceRandom::shuffle(shuffled.as_mut_slice(), &mut rng);
        let a = fused(&actions);
        let b = fused(&shuffled);
        prop_assert_eq!(a.to_bytes(), b.to_bytes());
        prop_assert_eq!(fixture().oracle.score(&a).unwrap().to_bits(), fixture().oracle.score(&b).unwrap().to_bits());
    }

    #[test]
    fn oracle_labels_are_antisymmetric(a in action_subset(), b in action_subset()) {
        let (ra, rb) = (fused(&a), fused(&b));
        let o = &fixture().oracle;
        let forward = o.label(&ra, &rb).unwrap();
        let backward = o.label(&rb, &ra).unwrap();
        let flipped = forward.map(|m| match m {
            Mu::Left => Mu::Right,
            Mu::Right => Mu::Left,
        });
        prop_assert_eq!(backward, flipped);
        prop_assert_eq!(o.label(&ra, &ra).unwrap(), None);
    }

    #[test]
    fn oracle_strict_preference_is_transitive(a in action_subset(), b in action_subset(), c in action_subset()) {
        let o = &fixture().oracle;
        let s: Vec<f64> = [&a, &b, &c].iter().map(|x| o.score(&fused(x)).unwrap()).collect();
        let d = o.config().delta;
        if oracle_label(s[0], s[1], d) == Some(Mu::Left) && oracle_label(s[1], s[2], d) == Some(Mu::Left) {
            prop_assert_eq!(oracle_label(s[0], s[2], d), Some(Mu::Left));
        }
    }
}

proptest! {
    #[test]
    fn label_rule_is_antisymmetric_and_transitive(x in -5.0f64..5.0, y in -5.0f64..5.0, z in -5.0f64..5.0, delta in 0.0f64..0.5) {
        let flip = |m: Option<Mu>| m.map(|m| if m == Mu::Left { Mu::Right } else { Mu::Left });
        prop_assert_eq!(oracle_label(y, x, delta), flip(oracle_label(x, y, delta)));
        if oracle_label(x, y, delta) == Some(Mu::Left) && oracle_label(y, z, delta) == Some(Mu::Left) {
            prop_assert_eq!(oracle_label(x, z, delta), Some(Mu::Left));
        }
    }

    #[test]
    fn masked_softmax_is_a_distribution_on_the_mask(
        logits in proptest::collection::vec(-50.0f64..50.0, 1..40),
        mask_bits in any::<u64>(),
    ) {
        let n = logits.len();
        let mut allowed: Vec<bool> = (0..n).map(|i| mask_bits >> (i % 64) & 1 == 1).collect();
        if !allowed.iter().any(|&a| a) {
            allowed[0] = true;
        }
        let p = masked_softmax(&logits, &allowed);
        prop_assert_eq!(p.len(), n);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for i in 0..n {
            prop_assert!(p[i].is_finite() && p[i] >= 0.0);
            if !allowed[i] {
                prop_assert_eq!(p[i], 0.0);
            }
        }
        // adding a constant to every logit leaves the distribution unchanged
        let shifted: Vec<f64> = logits.iter().map(|l| l + 17.0).collect();
        let q = masked_softmax(&shifted, &allowed);
        for i in 0..n {
            prop_assert!((p[i] - q[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn gae_matches_discounted_td_sum(
        steps in proptest::collection::vec((-2.0f64..2.0, -2.0f64..2.0, proptest::bool::weighted(0.2)), 1..30),
        bootstrap in -2.0f64..2.0,
        gamma in 0.5f64..1.0,
        lambda in 0.0f64..1.0,
    ) {
        let r: Vec<f64> = steps.iter().map(|s| s.0).collect();
        let v: Vec<f64> = steps.iter().map(|s| s.1).collect();
        let d: Vec<bool> = steps.iter().map(|s| s.2).collect();
        let (adv, ret) = gae(&r, &v, &d, bootstrap, gamma, lambda);
        let n = r.len();
        let next_v = |t: usize| if t + 1 < n { v[t + 1] } else { bootstrap };
        let td: Vec<f64> = (0..n).map(|t| r[t] + if d[t] { 0.0 } else { gamma * next_v(t) } - v[t]).collect();
        for t in 0..n {
            // forward sum of (γλ)^k δ_{t+k}, truncated at the first terminal step
            let mut expect = 0.0;
            let mut w = 1.0;
            for k in t..n {
                expect += w * td[k];
                if d[k] {
                    break;
                }
                w *= gamma * lambda;
            }
            prop_assert!((adv[t] - expect).abs() < 1e-9, "t={} got {} want {}", t, adv[t], expect);
            prop_assert!((ret[t] - adv[t] - v[t]).abs() < 1e-12);
        }
    }
}

#[derive(Debug, Clone)]
enum Op {
    Label(usize, i64),
    Skip(usize),
    Reopen,
}

fn ops() -> impl Strategy<Value = Vec<Op>> {
    proptest::collection::vec(
        prop_oneof![
            (0usize..12, prop_oneof![Just(1i64), Just(2), Just(0), Just(3)]).prop_map(|(i, m)| Op::Label(i, m)),
            (0usize..12).prop_map(Op::Skip),
            Just(Op::Reopen),
        ],
        0..40,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn label_store_conserves_tickets(n in 1usize..12, ops in ops()) {
        let dir = tempfile::tempdir().unwrap();
        let mut store = LabelStore::open(dir.path()).unwrap();
        for k in 0..n {
            let (l, r) = (format!("it01-ep{:03}", 2 * k), format!("it01-ep{:03}", 2 * k + 1));
            store
                .issue(PairTicket {
                    pair_id: format!("it01-pair{k:03}"),
                    iteration: 1,
                    manifest: FrameManifest::turntable(&l, &r, 4, 30.0),
                    left: l,
                    right: r,
                    labeler: Labeler::Human,
                    issued_at: 0,
                    state: TicketState::Open,
                })
                .unwrap();
        }
        let mut labeled = std::collections::BTreeSet::new();
        let mut skipped = std::collections::BTreeSet::new();
        for op in ops {
            match op {
                Op::Label(i, mu) => {
                    let id = format!("it01-pair{i:03}");
                    let res = store.label(&id, mu, Labeler::Human);
                    let should = i < n && (mu == 1 || mu == 2) && !labeled.contains(&i) && !skipped.contains(&i);
                    prop_assert_eq!(res.is_ok(), should);
                    if should {
                        labeled.insert(i);
                    }
                }
                Op::Skip(i) => {
                    let id = format!("it01-pair{i:03}");
                    let res = store.skip(&id);
                    let should = i < n && !labeled.contains(&i) && !skipped.contains(&i);
                    prop_assert_eq!(res.is_ok(), should);
                    if should {
                        skipped.insert(i);
                    }
                }
                Op::Reopen => store = LabelStore::open(dir.path()).unwrap(),
            }
            let c = store.counts();
            prop_assert_eq!(c.labeled, labeled.len());
            prop_assert_eq!(c.labeled + c.skipped + c.open, n);
            let lines = std::fs::read_to_string(dir.path().join("preferences.jsonl")).unwrap_or_default().lines().count();
            prop_assert_eq!(lines, labeled.len());
        }
    }
}
