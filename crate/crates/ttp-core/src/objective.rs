use crate::error::{Result, TtpError};
use crate::instance::TtpInstance;
use crate::knapsack::PackingPlan;

/// Counts full objective evaluations. Every comparison between heuristics
/// is budgeted in these, so exactly one bump per successful `evaluate` and
/// none for refused (overweight) plans.
#[derive(Debug, Default, Clone)]
pub struct EvalCounter {
    count: u64,
}

impl EvalCounter {
    pub fn new() -> Self {
        EvalCounter::default()
    }

    pub fn bump(&mut self) {
        self.count += 1;
    }

    pub fn count(&self) -> u64 {
        self.count
    }
}

fn check(inst: &TtpInstance, tour: &[usize], plan: &PackingPlan) -> Result<()> {
    if tour.len() != inst.n_cities() {
        return Err(TtpError::InvalidArgument(format!(
            "tour visits {} cities, instance has {}",
            tour.len(),
            inst.n_cities()
        )));
    }
    if plan.bits().len() != inst.n_items() {
        return Err(TtpError::InvalidArgument(format!(
            "plan covers {} items, instance has {}",
            plan.bits().len(),
            inst.n_items()
        )));
    }
    if plan.total_weight() > inst.capacity {
        return Err(TtpError::CapacityExceeded {
            weight: plan.total_weight(),
            capacity: inst.capacity,
        });
    }
    Ok(())
}

fn sweep_time(inst: &TtpInstance, tour: &[usize], plan: &PackingPlan) -> f64 {
    debug_assert!(crate::tour::validate_tour(inst, tour).is_ok());
    let n = tour.len();
    let mut weight_at = vec![0u64; inst.n_cities() + 1];
    for id in 0..inst.n_items() {
        if plan.is_selected(id) {
            let item = inst.item(id);
            weight_at[item.city] += item.weight;
        }
    }
    let mut carried = 0u64;
    let mut time = 0.0;
    for i in 0..n {
        carried += weight_at[tour[i]];
        let d = inst.distance(tour[i], tour[(i + 1) % n]);
        time += d as f64 / inst.speed(carried);
    }
    time
}

/// Travel time for the tour under the plan's weight profile. The thief
/// picks a city's selected items up on arrival, so they slow every later
/// leg including the return to the start.
pub fn tour_time(inst: &TtpInstance, tour: &[usize], plan: &PackingPlan) -> Result<f64> {
    check(inst, tour, plan)?;
    Ok(sweep_time(inst, tour, plan))
}

/// TTP objective: collected profit minus renting cost of the travel time.
/// Overweight plans are refused without touching the counter.
pub fn evaluate(
    inst: &TtpInstance,
    tour: &[usize],
    plan: &PackingPlan,
    counter: &mut EvalCounter,
) -> Result<f64> {
    check(inst, tour, plan)?;
    let time = sweep_time(inst, tour, plan);
    counter.bump();
    Ok(plan.total_profit() as f64 - inst.renting_ratio * time)
}
