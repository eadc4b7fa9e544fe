use crate::error::Result;
use crate::instance::TtpInstance;
use crate::knapsack::PackingPlan;
use crate::objective::{evaluate, EvalCounter};

#[derive(Debug, Clone)]
pub struct BaselineOutcome {
    pub plan: PackingPlan,
    pub objective: f64,
    pub evals: u64,
}

/// Batched greedy packing with a golden-section sweep over the scoring
/// exponent. For a fixed alpha, items are ordered by p^a / (w^a * d),
/// where d is the distance still to travel from the item's city (a zero
/// distance scores infinite). Batches of about 1% of the items are added
/// (skipping anything that no longer fits) and each batch is kept only if
/// the objective strictly improves; a failed batch is rolled back and the
/// batch size halves, down to a final failure at size 1.
pub fn pack_iterative(
    inst: &TtpInstance,
    tour: &[usize],
    counter: &mut EvalCounter,
) -> Result<BaselineOutcome> {
    const ALPHA_LO: f64 = 0.1;
    const ALPHA_HI: f64 = 5.0;
    const PROBES: usize = 20;

    let table = crate::features::compute_features(inst, tour);
    let m = inst.n_items();

    let mut best: Option<(PackingPlan, f64)> = None;
    let mut run = |alpha: f64, counter: &mut EvalCounter| -> Result<f64> {
        let scores: Vec<f64> = (0..m)
            .map(|i| {
                let item = inst.item(i);
                let d = table.rdist[i];
                if d == 0.0 {
                    f64::INFINITY
                } else {
                    (item.profit as f64).powf(alpha) / ((item.weight as f64).powf(alpha) * d)
                }
            })
            .collect();
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| {
            scores[b]
                .partial_cmp(&scores[a])
                .expect("scores must not be NaN")
                .then(a.cmp(&b))
        });

        let mut plan = PackingPlan::empty(inst);
        let mut obj = evaluate(inst, tour, &plan, counter)?;
        let mut step = (m as f64 * 0.01).ceil().max(1.0) as usize;
        let mut pos = 0;
        while pos < m {
            let mut trial = plan.clone();
            let mut scan = pos;
            let mut added = 0;
            while scan < m && added < step {
                let id = order[scan];
                scan += 1;
                if trial.total_weight() + inst.item(id).weight <= inst.capacity {
                    trial.set(inst, id, true);
                    added += 1;
                }
            }
            if added == 0 {
                break;
            }
            let trial_obj = evaluate(inst, tour, &trial, counter)?;
            if trial_obj > obj {
                plan = trial;
                obj = trial_obj;
                pos = scan;
            } else if step == 1 {
                break;
            } else {
                step /= 2;
            }
        }
        if best.as_ref().map_or(true, |(_, b)| obj > *b) {
            best = Some((plan, obj));
        }
        Ok(obj)
    };

    // golden section over alpha, maximizing the packed objective
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (ALPHA_LO, ALPHA_HI);
    let mut x1 = b - phi * (b - a);
    let mut x2 = a + phi * (b - a);
    let mut f1 = run(x1, counter)?;
    let mut f2 = run(x2, counter)?;
    for _ in 0..PROBES - 2 {
        if f1 < f2 {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + phi * (b - a);
            f2 = run(x2, counter)?;
        } else {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - phi * (b - a);
            f1 = run(x1, counter)?;
        }
    }

    let (plan, objective) = best.expect("at least two probes ran");
    Ok(BaselineOutcome { plan, objective, evals: counter.count() })
}

/// Profit gain estimate for adding an item to an otherwise empty
/// knapsack: exact for the first insertion, optimistic afterwards.
pub fn insertion_delta1(inst: &TtpInstance, profit: u64, weight: u64, rdist: f64) -> f64 {
    let slowed = 1.0 / (inst.v_max - inst.nu() * weight as f64) - 1.0 / inst.v_max;
    profit as f64 - inst.renting_ratio * rdist * slowed
}

/// Pessimistic gain: the item rides at minimum speed, compared against a
/// knapsack already filled to capacity minus the item.
pub fn insertion_delta2(inst: &TtpInstance, profit: u64, weight: u64, rdist: f64) -> f64 {
    let slowed = 1.0 / inst.v_min - 1.0 / (inst.v_max - inst.nu() * (inst.capacity - weight) as f64);
    profit as f64 - inst.renting_ratio * rdist * slowed
}

/// Gain against an expected load that thins out toward the end of the
/// tour: w_bar = W * (1 - rdist/total), speeds clamped to the legal range.
pub fn insertion_delta3(
    inst: &TtpInstance,
    profit: u64,
    weight: u64,
    rdist: f64,
    total_length: f64,
) -> f64 {
    let speed_at = |load: f64| -> f64 {
        (inst.v_max - inst.nu() * load.max(0.0)).max(inst.v_min)
    };
    let w_bar = inst.capacity as f64 * (1.0 - rdist / total_length);
    let slowed = 1.0 / speed_at(w_bar + weight as f64) - 1.0 / speed_at(w_bar);
    profit as f64 - inst.renting_ratio * rdist * slowed
}

/// Insertion baseline: three item orderings from the three gain
/// estimates; each ordering greedily tries every item in turn, keeping an
/// insertion only when the evaluated objective strictly improves. The
/// best of the three finished plans wins.
pub fn insertion(
    inst: &TtpInstance,
    tour: &[usize],
    counter: &mut EvalCounter,
) -> Result<BaselineOutcome> {
    let table = crate::features::compute_features(inst, tour);
    let total_length = crate::tour::tour_length(inst, tour) as f64;
    let m = inst.n_items();

    let mut deltas = vec![vec![0.0f64; m]; 3];
    for i in 0..m {
        let item = inst.item(i);
        let rd = table.rdist[i];
        deltas[0][i] = insertion_delta1(inst, item.profit, item.weight, rd);
        deltas[1][i] = insertion_delta2(inst, item.profit, item.weight, rd);
        deltas[2][i] = insertion_delta3(inst, item.profit, item.weight, rd, total_length);
    }

    let empty = PackingPlan::empty(inst);
    let empty_obj = evaluate(inst, tour, &empty, counter)?;

    let mut best: Option<(PackingPlan, f64)> = None;
    for delta in &deltas {
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| {
            delta[b]
                .partial_cmp(&delta[a])
                .expect("gain estimates must not be NaN")
                .then(a.cmp(&b))
        });
        let mut plan = empty.clone();
        let mut obj = empty_obj;
        for id in order {
            if plan.total_weight() + inst.item(id).weight > inst.capacity {
                continue;
            }
            let mut trial = plan.clone();
            trial.set(inst, id, true);
            let trial_obj = evaluate(inst, tour, &trial, counter)?;
            if trial_obj > obj {
                plan = trial;
                obj = trial_obj;
            }
        }
        if best.as_ref().map_or(true, |(_, b)| obj > *b) {
            best = Some((plan, obj));
        }
    }

    let (plan, objective) = best.expect("three orderings ran");
    Ok(BaselineOutcome { plan, objective, evals: counter.count() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{generate_instance, synthetic_coords, CoordLayout, KpType};
    use crate::tour::reference_tour;

    fn test_instance(seed: u64, kp: KpType) -> TtpInstance {
        let coords = synthetic_coords(CoordLayout::Uniform { span: 300.0 }, 10, seed);
        generate_instance("b", coords, 2, kp, 6, seed ^ 0x77).unwrap()
    }

    #[test]
    fn delta1_matches_single_item_evaluation() {
        for seed in 0..5 {
            let inst = test_instance(seed, KpType::Uncorr);
            let tour = reference_tour(&inst);
            let table = crate::features::compute_features(&inst, &tour);
            let mut counter = EvalCounter::new();
            let empty = PackingPlan::empty(&inst);
            let base = evaluate(&inst, &tour, &empty, &mut counter).unwrap();
            for id in 0..inst.n_items() {
                let item = inst.item(id);
                if item.weight > inst.capacity {
                    continue;
                }
                let plan = PackingPlan::from_ids(&inst, &[id]).unwrap();
                let with = evaluate(&inst, &tour, &plan, &mut counter).unwrap();
                let delta = insertion_delta1(&inst, item.profit, item.weight, table.rdist[id]);
                assert!(
                    (with - base - delta).abs() < 1e-9,
                    "seed {seed} item {id}: eval diff {} vs delta {delta}",
                    with - base
                );
            }
        }
    }

    #[test]
    fn baselines_produce_feasible_improving_plans() {
        for (seed, kp) in [(1, KpType::Uncorr), (2, KpType::BoundedStronglyCorr), (3, KpType::UncorrSimilarWeights)] {
            let inst = test_instance(seed, kp);
            let tour = reference_tour(&inst);

            let mut c1 = EvalCounter::new();
            let pi = pack_iterative(&inst, &tour, &mut c1).unwrap();
            assert!(pi.plan.total_weight() <= inst.capacity);
            assert_eq!(pi.evals, c1.count());

            let mut c2 = EvalCounter::new();
            let ins = insertion(&inst, &tour, &mut c2).unwrap();
            assert!(ins.plan.total_weight() <= inst.capacity);
            assert_eq!(ins.evals, c2.count());

            let mut c = EvalCounter::new();
            let empty_obj = evaluate(&inst, &tour, &PackingPlan::empty(&inst), &mut c).unwrap();
            assert!(pi.objective >= empty_obj);
            assert!(ins.objective >= empty_obj);
        }
    }

    #[test]
    fn baselines_are_deterministic() {
        let inst = test_instance(4, KpType::Uncorr);
        let tour = reference_tour(&inst);
        let mut c1 = EvalCounter::new();
        let a = pack_iterative(&inst, &tour, &mut c1).unwrap();
        let mut c2 = EvalCounter::new();
        let b = pack_iterative(&inst, &tour, &mut c2).unwrap();
        assert_eq!(a.plan, b.plan);
        assert_eq!(a.evals, b.evals);

        let mut c3 = EvalCounter::new();
        let x = insertion(&inst, &tour, &mut c3).unwrap();
        let mut c4 = EvalCounter::new();
        let y = insertion(&inst, &tour, &mut c4).unwrap();
        assert_eq!(x.plan, y.plan);
        assert_eq!(x.evals, y.evals);
    }

    #[test]
    fn insertion_eval_budget_is_linear() {
        let inst = test_instance(5, KpType::Uncorr);
        let tour = reference_tour(&inst);
        let mut c = EvalCounter::new();
        let out = insertion(&inst, &tour, &mut c).unwrap();
        assert!(out.evals <= 1 + 3 * inst.n_items() as u64);
    }
}
