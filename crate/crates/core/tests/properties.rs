mod common;

use std::collections::BTreeSet;
use std::sync::OnceLock;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use seqgrasp_core::dataset::{
    object_cloud, parse_records, per_dimension_std, rate_percent, split_objects, stats, GraspRecord, RecordHeader,
    RecordWriter,
};
use seqgrasp_core::energy::{e_fc, evaluate, ContactPair, EnergyWeights, SceneObject, SceneState, TERM_COUNT};
use seqgrasp_core::geometry::{bps_basis, bps_encode, bps_encode_brute, point_mesh_distance, TriMesh};
use seqgrasp_core::hand::OsState;
use seqgrasp_core::nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use seqgrasp_core::rotation::{matrix_to_rot6d, rot6d_to_matrix};
use seqgrasp_core::sampler::{accept, AcceptanceRule, MalaKernel, Termination};
use seqgrasp_core::validation::{
    check_wrench_resistance, resists_load, Contact, MassProperties, ObjectVerdict, ValidationParams,
};

use common::*;

fn ball() -> &'static SceneObject {
    static BALL: OnceLock<SceneObject> = OnceLock::new();
    BALL.get_or_init(|| sphere("ball", 0.03, 32))
}

fn vec3(r: f64) -> impl Strategy<Value = Vector3<f64>> {
    (-r..r, -r..r, -r..r).prop_map(|(x, y, z)| Vector3::new(x, y, z))
}

fn unit() -> impl Strategy<Value = Vector3<f64>> {
    vec3(1.0).prop_filter("nonzero", |v| v.norm() > 1e-3).prop_map(|v| v.normalize())
}

fn rotation() -> impl Strategy<Value = Rotation3<f64>> {
    (unit(), 0.0..std::f64::consts::PI).prop_map(|(a, t)| Rotation3::from_axis_angle(&Unit::new_normalize(a), t))
}

fn pair() -> impl Strategy<Value = ContactPair> {
    (vec3(0.1), vec3(0.1), unit(), unit()).prop_map(|(x1, x2, c1, c2)| ContactPair { x1, x2, c1, c2 })
}

fn record(seq: usize, success: bool, g: Vec<f64>, total: f64) -> GraspRecord {
    GraspRecord {
        sequence: seq,
        objects: vec!["a".into(), "b".into()],
        scales: vec![1.0, 0.5],
        grasp: seq % 2,
        os_id: seq % 7,
        os_label: format!("os{}", seq % 7),
        mask: vec![true; g.len() - 9],
        g,
        pair: (0, 1),
        terms: [total; TERM_COUNT],
        total,
        verdict: ObjectVerdict {
            contact_ok: success,
            contact_count: 3,
            penetration_depth: total * 1e-3,
            penetration_ok: true,
            wrench_ok: [success; 6],
        },
        success,
        max_penetration: total * 1e-3,
        retained: success,
        termination: Termination::OsExhausted,
        seed: seq as u64 * 7919,
        wall_time_s: total,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn energy_terms_are_nonnegative(seed in any::<u64>(), reference in any::<bool>(), dist in 0.0..0.12) {
        let hand = if reference { reference_hand() } else { toy_hand() };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_grasp(&hand, dist, &mut rng);
        let scene = SceneState::new(hand.clone(), ball().clone());
        let os = &hand.os_catalog[seed as usize % hand.os_catalog.len()];
        let e = evaluate(&scene, os, (0, os.contacts.len() - 1), &g, false).unwrap();
        for t in e.terms {
            prop_assert!(t >= 0.0 && t.is_finite());
        }
    }

    #[test]
    fn force_closure_is_rotation_invariant(p in pair(), rot in rotation()) {
        let q = ContactPair { x1: rot * p.x1, x2: rot * p.x2, c1: rot * p.c1, c2: rot * p.c2 };
        let (a, b) = (e_fc(&p), e_fc(&q));
        prop_assert!((a - b).abs() <= 1e-10 * a.max(1.0));
    }

    #[test]
    fn total_energy_is_linear_in_weights(
        seed in any::<u64>(),
        w1 in prop::array::uniform6(0.0..100.0f64),
        w2 in prop::array::uniform6(0.0..100.0f64),
        a in 0.0..3.0f64,
    ) {
        let hand = toy_hand();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_grasp(&hand, 0.05, &mut rng);
        let scene = SceneState::new(hand.clone(), ball().clone());
        let e = evaluate(&scene, &hand.os_catalog[0], (0, 1), &g, true).unwrap();
        let sum: [f64; 6] = std::array::from_fn(|i| a * w1[i] + w2[i]);
        let (w1, w2, ws) = (EnergyWeights(w1), EnergyWeights(w2), EnergyWeights(sum));
        let lhs = e.total(&ws);
        let rhs = a * e.total(&w1) + e.total(&w2);
        prop_assert!((lhs - rhs).abs() <= 1e-9 * lhs.abs().max(1.0));
        let (gs, g1, g2) = (e.gradient(&ws), e.gradient(&w1), e.gradient(&w2));
        for i in 0..gs.len() {
            let r = a * g1[i] + g2[i];
            prop_assert!((gs[i] - r).abs() <= 1e-9 * r.abs().max(1.0));
        }
    }

    #[test]
    fn masked_proposal_copies_frozen_entries(
        x in prop::collection::vec(-2.0..2.0f64, 25),
        grad in prop::collection::vec(-50.0..50.0f64, 25),
        mask in prop::collection::vec(any::<bool>(), 25),
        seed in any::<u64>(),
        temperature in 0.0..2.0f64,
        precondition in any::<bool>(),
    ) {
        let mut kernel = MalaKernel::new(vec![0.01; 25], mask.clone(), 1.0, precondition.then_some(0.98));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cur = x.clone();
        for _ in 0..5 {
            cur = kernel.propose(&cur, &grad, temperature, &mut rng);
        }
        for i in 0..25 {
            if !mask[i] {
                prop_assert_eq!(cur[i].to_bits(), x[i].to_bits());
            }
        }
    }

    #[test]
    fn metropolis_accepts_every_improvement(cur in 0.0..1e3f64, drop in 1e-9..1e3f64, t in 1e-3..1.0f64, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        prop_assert!(accept(AcceptanceRule::Metropolis, cur, cur - drop, t, &mut rng));
        prop_assert!(!accept(AcceptanceRule::Metropolis, cur, f64::NAN, t, &mut rng));
        prop_assert!(!accept(AcceptanceRule::EnergyRatio, cur, f64::INFINITY, t, &mut rng));
    }

    #[test]
    fn consumed_masks_stay_disjoint(choices in prop::collection::vec(any::<prop::sample::Index>(), 0..20)) {
        let hand = reference_hand();
        let mut state = OsState::new(&hand);
        let mut frozen = vec![false; hand.dof()];
        for c in choices {
            if state.is_exhausted() {
                break;
            }
            let pick = state.available[c.index(state.available.len())].clone();
            for (j, m) in pick.mask.iter().enumerate() {
                prop_assert!(!(*m && frozen[j]), "available mask moves a frozen joint");
            }
            state = state.consume(pick.id).unwrap();
            frozen.iter_mut().zip(&pick.mask).for_each(|(f, m)| *f |= *m);
            for o in &state.available {
                prop_assert!(o.mask.iter().any(|m| *m));
                prop_assert!(o.mask.iter().zip(&frozen).all(|(m, f)| !(*m && *f)));
            }
        }
    }

    #[test]
    fn rot6d_round_trip(rot in rotation()) {
        let r6 = matrix_to_rot6d(rot.matrix());
        let m = rot6d_to_matrix(&r6).unwrap();
        prop_assert!((m - rot.matrix()).norm() < 1e-12);
    }

    #[test]
    fn records_round_trip(
        rows in prop::collection::vec((any::<bool>(), prop::collection::vec(-1e3..1e3f64, 25), 0.0..1e4f64), 0..8),
        cut in 1usize..40,
    ) {
        let hand = reference_hand();
        let recs: Vec<GraspRecord> = rows.into_iter().enumerate().map(|(i, (s, g, t))| record(i, s, g, t)).collect();
        let mut w = RecordWriter::new(Vec::new(), &RecordHeader::new(&hand, 17)).unwrap();
        for r in &recs {
            w.append(r).unwrap();
        }
        let text = String::from_utf8(w.into_inner()).unwrap();
        let file = parse_records(&text).unwrap();
        prop_assert_eq!(&file.records, &recs);
        prop_assert!(!file.skipped_tail);
        if !recs.is_empty() {
            let truncated = &text[..text.len() - cut.min(text.lines().last().unwrap().len())];
            let file = parse_records(truncated).unwrap();
            prop_assert!(file.skipped_tail);
            prop_assert_eq!(&file.records[..], &recs[..recs.len() - 1]);
        }
    }

    #[test]
    fn rates_stay_in_range(success in 0usize..10_000, extra in 0usize..10_000) {
        let r = rate_percent(success as f64, (success + extra) as f64);
        prop_assert!((0.0..=100.0).contains(&r));
    }

    #[test]
    fn std_is_translation_invariant(rows in prop::collection::vec(prop::collection::vec(-5.0..5.0f64, 4), 1..10), shift in -10.0..10.0f64) {
        let shifted: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|x| x + shift).collect()).collect();
        let a = per_dimension_std(&rows.iter().map(|r| r.as_slice()).collect::<Vec<_>>());
        let b = per_dimension_std(&shifted.iter().map(|r| r.as_slice()).collect::<Vec<_>>());
        for (x, y) in a.iter().zip(&b) {
            prop_assert!(*x >= 0.0);
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn split_partitions_ids(n in 0usize..30, seed in any::<u64>()) {
        let ids: BTreeSet<String> = (0..n).map(|i| format!("obj{i}")).collect();
        let (train, test) = split_objects(&ids, seed);
        prop_assert!(train.is_disjoint(&test));
        prop_assert_eq!(train.union(&test).cloned().collect::<BTreeSet<_>>(), ids);
        if n >= 2 {
            prop_assert!(!train.is_empty() && !test.is_empty());
        }
        prop_assert_eq!(split_objects(&(0..n).map(|i| format!("obj{i}")).collect(), seed).0, train);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn bps_is_deterministic_and_exact(r in 0.01..0.05f64, half in 0.01..0.05f64, seed in any::<u64>()) {
        let basis = bps_basis(64, 0.15, seed);
        for mesh in [TriMesh::icosphere(r, 2), TriMesh::cuboid(Vector3::new(half, r, half))] {
            let a = object_cloud(&mesh, 256).unwrap();
            let b = object_cloud(&mesh, 256).unwrap();
            prop_assert_eq!(&a.points, &b.points);
            let fast = bps_encode(&a, &basis);
            let brute = bps_encode_brute(&a, &basis);
            prop_assert_eq!(fast.values.len(), 64);
            for (x, y) in fast.values.iter().zip(&brute.values) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn scaled_sdf_matches_scaled_mesh(s in 0.5..2.0f64, p in vec3(0.05)) {
        let obj = ball();
        let small = obj.sdf.scaled(s);
        let v = obj.sdf.value(&(p / s)) * s;
        prop_assert!((small.value(&p) - v).abs() < 1e-9);
    }
}

fn shifted_ball() -> &'static SceneObject {
    static BALL: OnceLock<SceneObject> = OnceLock::new();
    BALL.get_or_init(|| {
        let mesh = TriMesh::icosphere(0.03, 3).translated(&Vector3::new(0.25, -0.5, 0.75));
        SceneObject::build("ball", mesh, 32, 1).unwrap()
    })
}

#[test]
fn random_rot6d_gives_proper_rotations() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut checked = 0;
    while checked < 10_000 {
        let r: [f64; 6] = std::array::from_fn(|_| rng.random_range(-3.0..3.0));
        let Ok(m) = rot6d_to_matrix(&r) else { continue };
        assert!((m.transpose() * m - Matrix3::identity()).norm() < 1e-10);
        assert!(m.determinant() > 0.0);
        checked += 1;
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn consumption_strictly_depletes(choices in prop::collection::vec(any::<prop::sample::Index>(), 1..20)) {
        let hand = reference_hand();
        let mut state = OsState::new(&hand);
        for c in choices {
            if state.is_exhausted() {
                break;
            }
            let id = state.available[c.index(state.available.len())].id;
            let next = state.consume(id).unwrap();
            prop_assert!(next.available.len() < state.available.len());
            prop_assert!(next.get(id).is_none());
            state = next;
        }
    }

    #[test]
    fn forward_kinematics_is_bitwise_deterministic(seed in any::<u64>()) {
        let hand = reference_hand();
        let g = random_grasp(&hand, 0.1, &mut ChaCha8Rng::seed_from_u64(seed));
        let (a, b) = (hand.forward_kinematics(&g).unwrap(), hand.forward_kinematics(&g.clone()).unwrap());
        for (x, y) in a.links.iter().zip(&b.links) {
            prop_assert_eq!(x.rotation, y.rotation);
            prop_assert_eq!(x.translation, y.translation);
        }
    }

    #[test]
    fn distances_are_metric_and_bound_the_sdf(p in vec3(0.06)) {
        let obj = ball();
        let (d, closest) = point_mesh_distance(&p, &obj.mesh);
        prop_assert!(d >= 0.0);
        let (d0, _) = point_mesh_distance(&closest, &obj.mesh);
        prop_assert!(d0 < 1e-12);
        let s = obj.sdf.value(&p);
        prop_assert!(s.abs() <= d + obj.sdf.h * 3f64.sqrt() + 1e-12);
    }

    #[test]
    fn joint_gradient_is_translation_equivariant(seed in any::<u64>()) {
        let hand = toy_hand();
        let g = random_grasp(&hand, 0.05, &mut ChaCha8Rng::seed_from_u64(seed));
        let mut moved = g.clone();
        moved.position += Vector3::new(0.25, -0.5, 0.75);
        let os = &hand.os_catalog[0];
        let w = EnergyWeights::dataset(50.0);
        let here = evaluate(&SceneState::new(hand.clone(), ball().clone()), os, (0, 1), &g, true).unwrap();
        let there = evaluate(&SceneState::new(hand.clone(), shifted_ball().clone()), os, (0, 1), &moved, true).unwrap();
        prop_assume!(here.signature.len() == there.signature.len());
        let (a, b) = (here.gradient(&w), there.gradient(&w));
        let scale = a.iter().fold(1.0f64, |m, x| m.max(x.abs()));
        for i in 9..a.len() {
            prop_assert!((a[i] - b[i]).abs() <= 1e-6 * scale, "joint {}: {} vs {}", i - 9, a[i], b[i]);
        }
    }

    #[test]
    fn wrench_feasibility_is_monotone_in_friction(
        pts in prop::collection::vec(unit(), 2..5),
        mu in 0.0..2.0f64,
        extra in 0.0..2.0f64,
    ) {
        let contacts: Vec<Contact> = pts.iter().map(|u| Contact::new(u * 0.03, -u)).collect();
        let mass = MassProperties { mass: 0.05, centroid: Vector3::zeros(), length_scale: 0.03 };
        let lo = check_wrench_resistance(&contacts, &mass, &ValidationParams { friction: mu, ..Default::default() });
        let hi = check_wrench_resistance(&contacts, &mass, &ValidationParams { friction: mu + extra, ..Default::default() });
        for d in 0..6 {
            prop_assert!(!lo[d] || hi[d]);
        }
    }

    #[test]
    fn wrench_feasibility_is_rotation_invariant(
        pts in prop::collection::vec(unit(), 2..5),
        load in unit(),
        rot in rotation(),
        mu in 0.1..1.5f64,
    ) {
        let contacts: Vec<Contact> = pts.iter().map(|u| Contact::new(u * 0.03, -u)).collect();
        let turned: Vec<Contact> = contacts
            .iter()
            .map(|c| Contact { point: rot * c.point, normal: rot * c.normal, tangent: rot * c.tangent })
            .collect();
        let mass = MassProperties { mass: 0.05, centroid: Vector3::zeros(), length_scale: 0.03 };
        let params = ValidationParams { friction: mu, ..Default::default() };
        let at = |tol: f64| resists_load(&contacts, &mass, &ValidationParams { residual_tolerance: tol, ..params }, &load);
        let base = at(params.residual_tolerance);
        prop_assume!(at(params.residual_tolerance * 0.5) == base && at(params.residual_tolerance * 2.0) == base);
        prop_assert_eq!(resists_load(&turned, &mass, &params, &(rot * load)), base);
        prop_assert_eq!(resists_load(&contacts, &mass, &params, &load), base);
    }

    #[test]
    fn stats_respect_retention_and_bounds(flags in prop::collection::vec(any::<bool>(), 0..40)) {
        let recs: Vec<GraspRecord> = flags.iter().enumerate().map(|(i, s)| record(i, *s, vec![0.1 * i as f64; 25], 1.0)).collect();
        prop_assert!(recs.iter().all(|r| !r.retained || r.verdict.success()));
        let s = stats(&recs);
        prop_assert_eq!(&s, &stats(&recs));
        for row in s.per_os.iter().chain(&s.per_length).chain(std::iter::once(&s.overall)) {
            prop_assert!(row.success <= row.total);
            prop_assert!((row.rate - rate_percent(row.success as f64, row.total as f64)).abs() < 1e-12);
        }
    }

    #[test]
    fn bps_basis_is_seeded(seed in any::<u64>()) {
        prop_assert_eq!(bps_basis(128, 0.15, seed), bps_basis(128, 0.15, seed));
    }
}
