use crate::instance::TtpInstance;

/// Median with the even-length midpoint convention. Inputs must be finite.
pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of empty slice");
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("median over non-finite value"));
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

/// Shift to zero median and scale to unit median absolute deviation.
/// A zero MAD (constant input, or half the values on the median) maps
/// everything to zero rather than dividing by it.
pub fn robust_standardize(values: &[f64]) -> Vec<f64> {
    if values.is_empty() {
        return Vec::new();
    }
    let med = median(values);
    let deviations: Vec<f64> = values.iter().map(|v| (v - med).abs()).collect();
    let mad = median(&deviations);
    if mad == 0.0 {
        return vec![0.0; values.len()];
    }
    values.iter().map(|v| (v - med) / mad).collect()
}

/// Per-item features over a fixed tour, raw and standardized.
#[derive(Debug, Clone)]
pub struct ItemFeatureTable {
    /// Intrinsic profit ratio, profit over weight.
    pub ipr: Vec<f64>,
    /// Distance still to travel when the item's city is reached, including
    /// the closing leg back to the start.
    pub rdist: Vec<f64>,
    pub ipr_std: Vec<f64>,
    pub rdist_std: Vec<f64>,
}

impl ItemFeatureTable {
    pub fn len(&self) -> usize {
        self.ipr.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ipr.is_empty()
    }
}

pub fn compute_features(inst: &TtpInstance, tour: &[usize]) -> ItemFeatureTable {
    let n = tour.len();
    let mut pos_of_city = vec![0usize; inst.n_cities() + 1];
    for (pos, &city) in tour.iter().enumerate() {
        pos_of_city[city] = pos;
    }

    // remaining distance from each tour position through to the start
    let mut remaining = vec![0.0f64; n];
    if n > 0 {
        remaining[n - 1] = inst.distance(tour[n - 1], tour[0]) as f64;
        for i in (0..n - 1).rev() {
            remaining[i] = inst.distance(tour[i], tour[i + 1]) as f64 + remaining[i + 1];
        }
    }

    let m = inst.n_items();
    let mut ipr = Vec::with_capacity(m);
    let mut rdist = Vec::with_capacity(m);
    for item in inst.items() {
        ipr.push(item.profit as f64 / item.weight as f64);
        rdist.push(remaining[pos_of_city[item.city]]);
    }
    let ipr_std = robust_standardize(&ipr);
    let rdist_std = robust_standardize(&rdist);
    ItemFeatureTable { ipr, rdist, ipr_std, rdist_std }
}

/// Items inside the closed two-MAD box on both standardized features.
/// Only analysis exports apply this; packing always sees every item.
pub fn analysis_mask(table: &ItemFeatureTable) -> Vec<bool> {
    (0..table.len())
        .map(|i| table.ipr_std[i].abs() <= 2.0 && table.rdist_std[i].abs() <= 2.0)
        .collect()
}
