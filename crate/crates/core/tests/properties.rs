mod common;

use std::sync::Arc;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

use votegraph::autodiff::{Tape, Tensor};
use votegraph::data::{gen_dirichlet, gen_spatial, label_dataset, label_for, DatasetSpec, LabelSpec, Source};
use votegraph::election::{
    column_welfare, ranking_to_borda, smith_set, utilities_to_ranking, welfare_winner, PairwiseMatrix,
    PreferenceProfile, UtilityProfile, WelfareKind,
};
use votegraph::eval::audit_axioms;
use votegraph::losses::{monotonicity_loss, sample_pairs, strategic_copies, welfare_loss};
use votegraph::models::{
    DifferentiableMechanism, Gesn, GesnConfig, Gevn, GevnConfig, GraphBatch, InfoSetting, Mechanism, MeanScore,
    Normalization,
};
use votegraph::rules::RuleKind;
use votegraph::train::OptimConfig;

const KINDS: [WelfareKind; 3] = [WelfareKind::Utilitarian, WelfareKind::Nash, WelfareKind::Rawlsian];

fn orders_strategy(n: std::ops::RangeInclusive<usize>, m: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = (Vec<Vec<usize>>, usize)> {
    (n, m, any::<u64>()).prop_map(|(n, m, seed)| (common::random_orders(n, m, &mut common::rng(seed)), m))
}

fn utilities_strategy(n: std::ops::RangeInclusive<usize>, m: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = UtilityProfile> {
    (n, m, any::<u64>()).prop_map(|(n, m, seed)| gen_dirichlet(n, m, &mut common::rng(seed)))
}

/// True when every winner-determining comparison of `rule` is strict, so
/// the lowest-index tie-break never fires.
fn tie_free(rule: RuleKind, orders: &[Vec<usize>], m: usize) -> bool {
    let profile = common::ranking(orders);
    if rule != RuleKind::Stv {
        let scores = rule.apply(&profile).scores;
        let best = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        return scores.iter().filter(|&&s| s == best).count() == 1;
    }
    let mut alive: Vec<usize> = (0..m).collect();
    while alive.len() > 1 {
        let tally: Vec<usize> = alive
            .iter()
            .map(|&c| orders.iter().filter(|o| *o.iter().find(|x| alive.contains(x)).unwrap() == c).count())
            .collect();
        if tally.iter().any(|&t| 2 * t > orders.len()) {
            return true;
        }
        let low = *tally.iter().min().unwrap();
        if tally.iter().filter(|&&t| t == low).count() > 1 {
            return false;
        }
        let k = tally.iter().position(|&t| t == low).unwrap();
        alive.remove(k);
    }
    true
}

fn permute_orders(orders: &[Vec<usize>], tau: &[usize]) -> Vec<Vec<usize>> {
    orders.iter().map(|o| o.iter().map(|&c| tau[c]).collect()).collect()
}

fn dominates(pm: &PairwiseMatrix, set: &[usize]) -> bool {
    (0..pm.m()).filter(|c| !set.contains(c)).all(|b| set.iter().all(|&a| pm.beats(a, b)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn borda_decreasing_and_sums(m in 1usize..12) {
        let scores: Vec<f64> = (1..=m as u32).map(|r| ranking_to_borda(r, m).unwrap()).collect();
        prop_assert!(scores.windows(2).all(|w| w[0] > w[1]));
        prop_assert!((scores.iter().sum::<f64>() - (m as f64 - 1.0) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn ranking_preserves_utility_order(u in utilities_strategy(1..=6, 1..=8)) {
        for row in u.rows() {
            let ranks = utilities_to_ranking(row).unwrap();
            let b: Vec<f64> = ranks.iter().map(|&r| ranking_to_borda(r, row.len()).unwrap()).collect();
            for a in 0..row.len() {
                for c in 0..row.len() {
                    if row[a] > row[c] {
                        prop_assert!(b[a] > b[c]);
                    }
                }
            }
        }
    }

    #[test]
    fn welfare_scales_linearly(u in utilities_strategy(1..=8, 1..=6), lambda in 0.1f64..10.0) {
        let scaled = u.scaled(lambda).unwrap();
        let (a, b) = (column_welfare(&u, WelfareKind::Utilitarian), column_welfare(&scaled, WelfareKind::Utilitarian));
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((lambda * x - y).abs() <= 1e-12 * y.abs().max(1.0));
        }
        for kind in KINDS {
            let (w, ws) = (column_welfare(&u, kind), column_welfare(&scaled, kind));
            let best = w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let unique = w.iter().filter(|&&x| (x - best).abs() <= 1e-9 * best.abs().max(1e-300)).count() == 1;
            if unique {
                prop_assert_eq!(welfare_winner(&u, kind), welfare_winner(&scaled, kind));
            }
            prop_assert_eq!(w.len(), ws.len());
        }
    }

    #[test]
    fn smith_set_is_minimal_dominating_set((orders, m) in orders_strategy(1..=9, 1..=5)) {
        let profile = common::ranking(&orders);
        let pm = PairwiseMatrix::new(&profile);
        let mut best: Option<Vec<usize>> = None;
        for mask in 1u32..(1 << m) {
            let set: Vec<usize> = (0..m).filter(|&c| mask >> c & 1 == 1).collect();
            if dominates(&pm, &set) && best.as_ref().is_none_or(|b| set.len() < b.len()) {
                best = Some(set);
            }
        }
        let smith = smith_set(&profile);
        prop_assert!(!smith.is_empty());
        prop_assert_eq!(smith, best.unwrap());
    }

    #[test]
    fn rules_are_anonymous((orders, m) in orders_strategy(1..=9, 1..=5), seed in any::<u64>()) {
        let mut shuffled = orders.clone();
        shuffled.shuffle(&mut common::rng(seed));
        let (a, b) = (common::ranking(&orders), common::ranking(&shuffled));
        for rule in RuleKind::ALL {
            prop_assert_eq!(rule.apply(&a), rule.apply(&b), "{} with m = {}", rule, m);
        }
    }

    #[test]
    fn rules_are_neutral_without_ties((orders, m) in orders_strategy(1..=9, 1..=5), seed in any::<u64>()) {
        let mut tau: Vec<usize> = (0..m).collect();
        tau.shuffle(&mut common::rng(seed));
        let permuted = permute_orders(&orders, &tau);
        for rule in RuleKind::ALL {
            if !tie_free(rule, &orders, m) {
                continue;
            }
            let (a, b) = (rule.apply(&common::ranking(&orders)), rule.apply(&common::ranking(&permuted)));
            prop_assert_eq!(tau[a.winner], b.winner, "{}", rule);
            for c in 0..a.scores.len() {
                prop_assert_eq!(a.scores[c], b.scores[tau[c]], "{}", rule);
            }
        }
    }

    #[test]
    fn two_candidate_rules_agree(half in 0usize..5, seed in any::<u64>()) {
        let orders = common::random_orders(2 * half + 1, 2, &mut common::rng(seed));
        let profile = common::ranking(&orders);
        let winners: Vec<usize> = RuleKind::ALL.iter().map(|r| r.apply(&profile).winner).collect();
        prop_assert!(winners.iter().all(|&w| w == winners[0]), "{:?}", winners);
    }

    #[test]
    fn segment_relabelling_permutes_sums(rows in 1usize..12, cols in 1usize..4, segments in 1usize..5, seed in any::<u64>()) {
        let mut r = common::rng(seed);
        let x = Tensor::new(rows, cols, (0..rows * cols).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap();
        let seg: Vec<usize> = (0..rows).map(|_| r.random_range(0..segments)).collect();
        let mut pi: Vec<usize> = (0..segments).collect();
        pi.shuffle(&mut r);
        let relabelled: Arc<[usize]> = seg.iter().map(|&s| pi[s]).collect();
        let mut tape = Tape::new();
        let v = tape.constant(x).unwrap();
        let plain = tape.segment_sum(v, seg.into(), segments).unwrap();
        let moved = tape.segment_sum(v, relabelled, segments).unwrap();
        for s in 0..segments {
            prop_assert_eq!(tape.value(plain).row_slice(s), tape.value(moved).row_slice(pi[s]));
        }
    }

    #[test]
    fn welfare_loss_is_affine(u in utilities_strategy(1..=6, 1..=5), lambda in 0.0f64..1.0, seed in any::<u64>()) {
        let mut r = common::rng(seed);
        let profile = PreferenceProfile::from_utilities(&u);
        let batch = GraphBatch::from_profiles(&[&profile]);
        let sw = vec![column_welfare(&u, WelfareKind::Utilitarian)];
        let random_pscf = |r: &mut rand_chacha::ChaCha8Rng| {
            let w: Vec<f64> = (0..u.m()).map(|_| r.random_range(0.01..1.0)).collect();
            let s: f64 = w.iter().sum();
            w.into_iter().map(|x| x / s).collect::<Vec<f64>>()
        };
        let (p1, p2) = (random_pscf(&mut r), random_pscf(&mut r));
        let mix: Vec<f64> = p1.iter().zip(&p2).map(|(a, b)| lambda * a + (1.0 - lambda) * b).collect();
        let loss = |p: Vec<f64>| {
            let mut tape = Tape::new();
            let v = tape.constant(Tensor::column(p)).unwrap();
            welfare_loss(&mut tape, v, &batch, &sw).unwrap().item(&tape)
        };
        let (l1, l2, lm) = (loss(p1), loss(p2), loss(mix));
        prop_assert!((lm - (lambda * l1 + (1.0 - lambda) * l2)).abs() < 1e-12);
    }

    #[test]
    fn one_hot_welfare_loss_minimised_at_winner(u in utilities_strategy(1..=6, 1..=5)) {
        let profile = PreferenceProfile::from_utilities(&u);
        let batch = GraphBatch::from_profiles(&[&profile]);
        let sw = vec![column_welfare(&u, WelfareKind::Utilitarian)];
        let losses: Vec<f64> = (0..u.m())
            .map(|j| {
                let mut p = vec![0.0; u.m()];
                p[j] = 1.0;
                let mut tape = Tape::new();
                let v = tape.constant(Tensor::column(p)).unwrap();
                welfare_loss(&mut tape, v, &batch, &sw).unwrap().item(&tape)
            })
            .collect();
        let low = losses.iter().cloned().fold(f64::INFINITY, f64::min);
        let argmin = losses.iter().position(|&l| l == low).unwrap();
        prop_assert_eq!(argmin, welfare_winner(&u, WelfareKind::Utilitarian));
    }

    #[test]
    fn mean_score_has_zero_monotonicity_loss(u in utilities_strategy(1..=6, 2..=5), sharpness in 0.0f64..20.0, seed in any::<u64>()) {
        let mech = MeanScore::new(sharpness);
        let profile = PreferenceProfile::from_utilities(&u);
        let batch = GraphBatch::from_profiles(&[&profile]);
        let samples = sample_pairs(&batch, 8, &mut common::rng(seed));
        let mut tape = Tape::new();
        let bound = mech.params().bind(&mut tape, false).unwrap();
        let loss = monotonicity_loss(&mut tape, &mech, &bound, &[&profile], &samples, 1e-3).unwrap();
        prop_assert_eq!(loss.item(&tape), 0.0);
    }

    #[test]
    fn warmup_meets_cosine_at_base_rate(lr in 1e-5f64..1e-2, warm in 1.0f64..40.0, start in 0.01f64..0.9) {
        let c = OptimConfig { lr, warmup_epochs: warm, warmup_start: start, ..OptimConfig::default() };
        let left = c.lr_at(warm - 1e-9);
        prop_assert!((left - lr).abs() < 1e-9 * lr);
        prop_assert_eq!(c.lr_at(warm), lr);
    }

    #[test]
    fn labels_match_their_generator(seed in any::<u64>(), rule in 0usize..5, spatial in any::<bool>()) {
        let label = LabelSpec::Rule(RuleKind::ALL[rule]);
        let source = if spatial { Source::Spatial } else { Source::Dirichlet };
        let spec = DatasetSpec::train(source, label, seed).with_count(8);
        let data = label_dataset(&spec).unwrap();
        prop_assert_eq!(&data, &label_dataset(&spec).unwrap());
        for e in &data {
            prop_assert_eq!(e.label, label_for(e.utilities(), label).unwrap());
            prop_assert_eq!(e.label, Some(RuleKind::ALL[rule].apply(&e.ranking()).winner));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn gevn_is_anonymous_and_neutral(seed in any::<u64>(), n in 1usize..9, m in 1usize..7) {
        let gevn = Gevn::new(GevnConfig { layers: 2, node_width: 8, edge_width: 4 }, seed).unwrap();
        let u = gen_spatial(n, m, &mut common::rng(seed ^ 1));
        let audit = audit_axioms(&gevn, &[PreferenceProfile::from_utilities(&u)], 4, seed).unwrap();
        prop_assert!(audit.anonymity < 1e-9, "{}", audit.anonymity);
        prop_assert!(audit.neutrality < 1e-9, "{}", audit.neutrality);
    }

    #[test]
    fn private_gesn_is_row_local(seed in any::<u64>(), n in 2usize..7, m in 1usize..6, budget in any::<bool>()) {
        let norm = if budget { Normalization::Budget { a: 1.0 } } else { Normalization::spatial_range() };
        let gesn = Gesn::new(GesnConfig::new(InfoSetting::Private, norm), seed).unwrap();
        let mut r = common::rng(seed);
        let u = gen_dirichlet(n, m, &mut r);
        let voter = r.random_range(0..n);
        let mut rows = u.to_rows();
        rows[voter] = gen_dirichlet(1, m, &mut r).to_rows().remove(0);
        let changed = UtilityProfile::from_rows(rows).unwrap();
        let (a, b) = (gesn.strategies(&u, None).unwrap(), gesn.strategies(&changed, None).unwrap());
        for i in (0..n).filter(|&i| i != voter) {
            prop_assert_eq!(a.row(i), b.row(i));
        }
    }

    #[test]
    fn strategic_copies_cut_gradients(seed in any::<u64>(), elections in 1usize..4) {
        let gevn = Gevn::new(GevnConfig { layers: 2, node_width: 6, edge_width: 3 }, seed).unwrap();
        let mut r = common::rng(seed);
        let profiles: Vec<PreferenceProfile> = (0..elections)
            .map(|_| {
                let (n, m) = (r.random_range(1..6), r.random_range(1..5));
                PreferenceProfile::from_utilities(&gen_dirichlet(n, m, &mut r))
            })
            .collect();
        let refs: Vec<&PreferenceProfile> = profiles.iter().collect();
        let base = GraphBatch::from_profiles(&refs);
        let mask: Vec<bool> = (0..base.num_voters()).map(|_| r.random_bool(0.5)).collect();
        let mut tape = Tape::new();
        let live = tape.variable(base.edge_features().clone()).unwrap();
        let honest = tape.constant(base.edge_features().clone()).unwrap();
        let copies = strategic_copies(&mut tape, &base, live, honest, &mask).unwrap();
        if copies.targets.is_empty() {
            return Ok(());
        }
        let bound = gevn.params().bind(&mut tape, false).unwrap();
        let probs = gevn.forward(&mut tape, &bound, &copies.batch, copies.edges).unwrap();
        let k = r.random_range(0..copies.targets.len());
        let span = copies.batch.spans()[k];
        let rows: Arc<[usize]> = (span.cand_offset..span.cand_offset + span.m).collect();
        let picked = tape.gather_rows(probs, rows).unwrap();
        let w = tape.constant(Tensor::column((0..span.m).map(|_| r.random_range(-1.0..1.0)).collect())).unwrap();
        let y = tape.mul(picked, w).unwrap();
        let y = tape.sum(y).unwrap();
        let grads = tape.backward(y).unwrap();
        for v in bound.vars() {
            prop_assert!(grads.get(*v).is_none());
        }
        let (e, target) = copies.targets[k];
        let s = base.spans()[e];
        let g = grads.get(live).unwrap();
        for pair in 0..base.num_pairs() {
            let own = pair >= s.pair_offset && pair < s.pair_offset + s.n * s.m && (pair - s.pair_offset) / s.m == target;
            if !own {
                prop_assert_eq!(g.data()[pair], 0.0, "pair {}", pair);
            }
        }
    }
}

#[test]
fn gevn_parameter_count_ignores_election_size() {
    let gevn = Gevn::new(GevnConfig::SMALL, 0).unwrap();
    let count = gevn.params().num_scalars();
    for (n, m) in [(1, 1), (3, 2), (20, 8), (60, 12)] {
        let u = gen_spatial(n, m, &mut common::rng(n as u64));
        let p = gevn.pscf(&PreferenceProfile::from_utilities(&u)).unwrap();
        assert_eq!(p.m(), m);
        assert_eq!(gevn.params().num_scalars(), count);
    }
}

#[test]
fn forward_and_backward_are_bitwise_deterministic() {
    let run = || {
        let (gevn, profiles, _) = common::gevn_instance(3);
        let refs: Vec<&PreferenceProfile> = profiles.iter().collect();
        let batch = GraphBatch::from_profiles(&refs);
        let mut tape = Tape::new();
        let bound = gevn.params().bind(&mut tape, true).unwrap();
        let edges = tape.variable(batch.edge_features().clone()).unwrap();
        let p = gevn.forward(&mut tape, &bound, &batch, edges).unwrap();
        let lp = tape.log(p).unwrap();
        let y = tape.sum(lp).unwrap();
        let mut grads = tape.backward(y).unwrap();
        let mut out = tape.value(p).data().to_vec();
        out.extend(grads.take(edges).unwrap().into_data());
        for g in gevn.params().collect_grads(&bound, &mut grads) {
            out.extend(g.into_data());
        }
        out.into_iter().map(f64::to_bits).collect::<Vec<u64>>()
    };
    assert_eq!(run(), run());
}

#[test]
fn generator_means_match_closed_forms() {
    let mut r = common::rng(11);
    let (mut sum, mut count) = (0.0, 0usize);
    for _ in 0..4000 {
        let u = gen_dirichlet(5, 4, &mut r);
        sum += u.data().iter().sum::<f64>();
        count += u.data().len();
        for row in u.rows() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
    assert!((sum / count as f64 - 0.25).abs() < 2e-3);

    // 1 minus the mean distance between two uniform points in the unit cube.
    let cube_mean = 1.0 - 0.661_707_182_267;
    let (mut sum, mut count) = (0.0, 0usize);
    for _ in 0..4000 {
        let u = gen_spatial(5, 4, &mut r);
        sum += u.data().iter().sum::<f64>();
        count += u.data().len();
    }
    assert!((sum / count as f64 - cube_mean).abs() < 4e-3);
}
