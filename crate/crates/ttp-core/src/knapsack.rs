use crate::error::{Result, TtpError};
use crate::instance::{Item, TtpInstance};

/// Subset of items to pick up, with cached totals. A plan may exceed the
/// knapsack capacity; the objective refuses to evaluate such plans.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackingPlan {
    selected: Vec<bool>,
    total_weight: u64,
    total_profit: u64,
}

impl PackingPlan {
    pub fn empty(inst: &TtpInstance) -> Self {
        PackingPlan {
            selected: vec![false; inst.n_items()],
            total_weight: 0,
            total_profit: 0,
        }
    }

    pub fn from_ids(inst: &TtpInstance, ids: &[usize]) -> Result<Self> {
        let mut plan = PackingPlan::empty(inst);
        for &id in ids {
            if id >= inst.n_items() {
                return Err(TtpError::InvalidArgument(format!(
                    "item id {id} out of range, instance has {} items",
                    inst.n_items()
                )));
            }
            if plan.selected[id] {
                return Err(TtpError::InvalidArgument(format!("duplicate item id {id}")));
            }
            plan.set(inst, id, true);
        }
        Ok(plan)
    }

    pub fn from_bits(inst: &TtpInstance, bits: &[bool]) -> Result<Self> {
        if bits.len() != inst.n_items() {
            return Err(TtpError::InvalidArgument(format!(
                "plan has {} bits, instance has {} items",
                bits.len(),
                inst.n_items()
            )));
        }
        let mut plan = PackingPlan::empty(inst);
        for (id, &on) in bits.iter().enumerate() {
            if on {
                plan.set(inst, id, true);
            }
        }
        Ok(plan)
    }

    pub fn set(&mut self, inst: &TtpInstance, id: usize, on: bool) {
        if self.selected[id] == on {
            return;
        }
        let item = inst.item(id);
        self.selected[id] = on;
        if on {
            self.total_weight += item.weight;
            self.total_profit += item.profit;
        } else {
            self.total_weight -= item.weight;
            self.total_profit -= item.profit;
        }
    }

    pub fn flip(&mut self, inst: &TtpInstance, id: usize) {
        self.set(inst, id, !self.selected[id]);
    }

    pub fn is_selected(&self, id: usize) -> bool {
        self.selected[id]
    }

    pub fn bits(&self) -> &[bool] {
        &self.selected
    }

    pub fn ids(&self) -> Vec<usize> {
        self.selected
            .iter()
            .enumerate()
            .filter_map(|(id, &on)| on.then_some(id))
            .collect()
    }

    pub fn count(&self) -> usize {
        self.selected.iter().filter(|&&on| on).count()
    }

    pub fn total_weight(&self) -> u64 {
        self.total_weight
    }

    pub fn total_profit(&self) -> u64 {
        self.total_profit
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KpSolution {
    /// Ascending item ids.
    pub ids: Vec<usize>,
    pub profit: u64,
    pub weight: u64,
}

pub const DEFAULT_DP_WORK_BUDGET: u128 = 100_000_000;

/// Exact 0/1 knapsack by dynamic programming over `items` alone (tour and
/// speeds play no part). Ties between co-optimal sets break toward lower
/// item ids: an item is only marked as taken when including it strictly
/// improves the table, so reconstruction prefers leaving later items out.
pub fn kp_dp_optimal(items: &[Item], capacity: u64) -> Result<KpSolution> {
    kp_dp_optimal_with_budget(items, capacity, DEFAULT_DP_WORK_BUDGET)
}

pub fn kp_dp_optimal_with_budget(
    items: &[Item],
    capacity: u64,
    work_budget: u128,
) -> Result<KpSolution> {
    let total: u64 = items.iter().map(|it| it.weight).sum();
    if total <= capacity {
        return Ok(KpSolution {
            ids: (0..items.len()).collect(),
            profit: items.iter().map(|it| it.profit).sum(),
            weight: total,
        });
    }

    // capacity < total item weight from here on, so the table width is real
    let width = capacity + 1;
    let cells = items.len() as u128 * width as u128;
    if cells > work_budget {
        return Err(TtpError::WorkBudgetExceeded {
            cells,
            budget: work_budget,
        });
    }

    let w_cap = capacity as usize;
    let mut dp = vec![0u64; w_cap + 1];
    let blocks = w_cap / 64 + 1;
    let mut taken = vec![0u64; items.len() * blocks];

    for (i, item) in items.iter().enumerate() {
        let wi = item.weight as usize;
        if wi > w_cap {
            continue;
        }
        let row = &mut taken[i * blocks..(i + 1) * blocks];
        for w in (wi..=w_cap).rev() {
            let candidate = dp[w - wi] + item.profit;
            if candidate > dp[w] {
                dp[w] = candidate;
                row[w / 64] |= 1 << (w % 64);
            }
        }
    }

    let mut ids = Vec::new();
    let mut w = w_cap;
    for i in (0..items.len()).rev() {
        if taken[i * blocks + w / 64] >> (w % 64) & 1 == 1 {
            ids.push(i);
            w -= items[i].weight as usize;
        }
    }
    ids.reverse();

    let weight = ids.iter().map(|&i| items[i].weight).sum();
    Ok(KpSolution {
        ids,
        profit: dp[w_cap],
        weight,
    })
}

/// Greedy bound: walk items by profit density (exact rational compare),
/// packing everything that still fits. Ties break toward lighter weight,
/// then lower id.
pub fn kp_greedy(items: &[Item], capacity: u64) -> KpSolution {
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.sort_by(|&a, &b| {
        let (ia, ib) = (&items[a], &items[b]);
        // p_a/w_a vs p_b/w_b via cross multiplication
        let lhs = ia.profit as u128 * ib.weight as u128;
        let rhs = ib.profit as u128 * ia.weight as u128;
        rhs.cmp(&lhs)
            .then(ia.weight.cmp(&ib.weight))
            .then(a.cmp(&b))
    });

    let mut ids = Vec::new();
    let mut weight = 0u64;
    let mut profit = 0u64;
    for i in order {
        let item = &items[i];
        if weight + item.weight <= capacity {
            weight += item.weight;
            profit += item.profit;
            ids.push(i);
        }
    }
    ids.sort_unstable();
    KpSolution { ids, profit, weight }
}
