use std::fmt;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, TtpError};

/// How item weights and profits were drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KpType {
    BoundedStronglyCorr,
    UncorrSimilarWeights,
    Uncorr,
}

impl KpType {
    pub const ALL: [KpType; 3] = [
        KpType::BoundedStronglyCorr,
        KpType::UncorrSimilarWeights,
        KpType::Uncorr,
    ];

    /// Header value used in instance files.
    pub fn header_name(self) -> &'static str {
        match self {
            KpType::BoundedStronglyCorr => "bounded strongly corr",
            KpType::UncorrSimilarWeights => "uncorr, similar weights",
            KpType::Uncorr => "uncorr",
        }
    }

    /// Compact tag for file names and report columns.
    pub fn tag(self) -> &'static str {
        match self {
            KpType::BoundedStronglyCorr => "bsc",
            KpType::UncorrSimilarWeights => "usw",
            KpType::Uncorr => "unc",
        }
    }

    pub fn from_header(s: &str) -> Option<KpType> {
        let folded = s.trim().to_ascii_lowercase();
        match folded.as_str() {
            "bounded strongly corr" => Some(KpType::BoundedStronglyCorr),
            "uncorr, similar weights" => Some(KpType::UncorrSimilarWeights),
            "uncorr" => Some(KpType::Uncorr),
            _ => None,
        }
    }

    pub fn from_tag(s: &str) -> Option<KpType> {
        match s.trim().to_ascii_lowercase().as_str() {
            "bsc" => Some(KpType::BoundedStronglyCorr),
            "usw" => Some(KpType::UncorrSimilarWeights),
            "unc" => Some(KpType::Uncorr),
            _ => None,
        }
    }
}

impl fmt::Display for KpType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeWeightKind {
    /// ceil(euclidean), the benchmark convention.
    Ceil2d,
    /// round(euclidean), the TSPLIB EUC_2D convention.
    Euc2d,
}

impl EdgeWeightKind {
    pub fn header_name(self) -> &'static str {
        match self {
            EdgeWeightKind::Ceil2d => "CEIL_2D",
            EdgeWeightKind::Euc2d => "EUC_2D",
        }
    }
}

/// One collectible item. `id` is the 0-based position in the item list;
/// `city` is 1-based and never 1 (nothing to pick up at the start).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Item {
    pub id: usize,
    pub city: usize,
    pub profit: u64,
    pub weight: u64,
}

#[derive(Debug, Clone)]
pub struct TtpInstance {
    pub name: String,
    pub kp_type: KpType,
    pub edge_weight_kind: EdgeWeightKind,
    pub capacity: u64,
    pub renting_ratio: f64,
    pub v_min: f64,
    pub v_max: f64,
    coords: Vec<(f64, f64)>,
    items: Vec<Item>,
    items_at: Vec<Vec<usize>>,
}

impl TtpInstance {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        kp_type: KpType,
        edge_weight_kind: EdgeWeightKind,
        coords: Vec<(f64, f64)>,
        items: Vec<Item>,
        capacity: u64,
        renting_ratio: f64,
        v_min: f64,
        v_max: f64,
    ) -> Result<Self> {
        let n = coords.len();
        if n < 2 {
            return Err(TtpError::InvalidArgument(format!(
                "instance needs at least 2 cities, got {n}"
            )));
        }
        if !(v_max > v_min && v_min > 0.0) {
            return Err(TtpError::InvalidArgument(format!(
                "speeds must satisfy 0 < v_min < v_max, got v_min={v_min} v_max={v_max}"
            )));
        }
        if !renting_ratio.is_finite() || renting_ratio < 0.0 {
            return Err(TtpError::InvalidArgument(format!(
                "renting ratio must be finite and non-negative, got {renting_ratio}"
            )));
        }
        let mut items_at = vec![Vec::new(); n + 1];
        for (pos, item) in items.iter().enumerate() {
            if item.id != pos {
                return Err(TtpError::InvalidArgument(format!(
                    "item at position {pos} has id {}",
                    item.id
                )));
            }
            if item.city < 2 || item.city > n {
                return Err(TtpError::InvalidArgument(format!(
                    "item {} assigned to city {}, must be in 2..={n}",
                    item.id, item.city
                )));
            }
            if item.weight == 0 || item.profit == 0 {
                return Err(TtpError::InvalidArgument(format!(
                    "item {} needs positive weight and profit",
                    item.id
                )));
            }
            items_at[item.city].push(item.id);
        }
        Ok(TtpInstance {
            name: name.into(),
            kp_type,
            edge_weight_kind,
            capacity,
            renting_ratio,
            v_min,
            v_max,
            coords,
            items,
            items_at,
        })
    }

    pub fn n_cities(&self) -> usize {
        self.coords.len()
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    pub fn items(&self) -> &[Item] {
        &self.items
    }

    pub fn item(&self, id: usize) -> &Item {
        &self.items[id]
    }

    /// Item ids available at a 1-based city.
    pub fn items_at(&self, city: usize) -> &[usize] {
        &self.items_at[city]
    }

    pub fn coord(&self, city: usize) -> (f64, f64) {
        assert!(
            city >= 1 && city <= self.coords.len(),
            "city index {city} out of range 1..={}",
            self.coords.len()
        );
        self.coords[city - 1]
    }

    /// Integer distance between two 1-based cities.
    ///
    /// Panics if either index is out of range.
    pub fn distance(&self, i: usize, j: usize) -> u64 {
        let (xi, yi) = self.coord(i);
        let (xj, yj) = self.coord(j);
        let d = ((xi - xj).powi(2) + (yi - yj).powi(2)).sqrt();
        match self.edge_weight_kind {
            EdgeWeightKind::Ceil2d => d.ceil() as u64,
            EdgeWeightKind::Euc2d => (d + 0.5) as u64,
        }
    }

    /// Speed loss per unit of carried weight.
    pub fn nu(&self) -> f64 {
        (self.v_max - self.v_min) / self.capacity as f64
    }

    /// Travel speed while carrying `weight`, clamped to v_min.
    pub fn speed(&self, weight: u64) -> f64 {
        if weight == 0 {
            return self.v_max;
        }
        (self.v_max - self.nu() * weight as f64).max(self.v_min)
    }

    pub fn total_item_weight(&self) -> u64 {
        self.items.iter().map(|it| it.weight).sum()
    }

    /// Capacity factor the generator used, recovered from the capacity.
    /// Real-valued so parsed instances from other sources still map into
    /// the model's domain; clamped to the generator's 1..=10 range.
    pub fn capacity_factor(&self) -> f64 {
        let total = self.total_item_weight();
        if total == 0 {
            return 1.0;
        }
        (11.0 * self.capacity as f64 / total as f64).clamp(1.0, 10.0)
    }
}

pub fn parse_ttp(text: &str) -> Result<TtpInstance> {
    enum Section {
        Header,
        Coords,
        Items,
    }

    let mut name = None;
    let mut kp_type = None;
    let mut dimension = None;
    let mut n_items = None;
    let mut capacity = None;
    let mut v_min = None;
    let mut v_max = None;
    let mut renting_ratio = None;
    let mut edge_kind = None;

    let mut coords: Vec<(f64, f64)> = Vec::new();
    let mut items: Vec<Item> = Vec::new();
    let mut section = Section::Header;

    fn parse_num<T: std::str::FromStr>(tok: &str, line: usize, what: &str) -> Result<T> {
        tok.parse().map_err(|_| TtpError::Parse {
            line,
            msg: format!("bad {what}: {tok:?}"),
        })
    }

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        match section {
            Section::Header => {
                if line.starts_with("NODE_COORD_SECTION") {
                    section = Section::Coords;
                    continue;
                }
                let (key, value) = line.split_once(':').ok_or_else(|| TtpError::Parse {
                    line: line_no,
                    msg: format!("expected `KEY: value` header, got {line:?}"),
                })?;
                let key = key.trim();
                let value = value.trim();
                match key {
                    "PROBLEM NAME" => name = Some(value.to_string()),
                    "KNAPSACK DATA TYPE" => {
                        kp_type = Some(KpType::from_header(value).ok_or_else(|| TtpError::Parse {
                            line: line_no,
                            msg: format!("unknown knapsack data type {value:?}"),
                        })?)
                    }
                    "DIMENSION" => dimension = Some(parse_num::<usize>(value, line_no, "dimension")?),
                    "NUMBER OF ITEMS" => n_items = Some(parse_num::<usize>(value, line_no, "item count")?),
                    "CAPACITY OF KNAPSACK" => capacity = Some(parse_num::<u64>(value, line_no, "capacity")?),
                    "MIN SPEED" => v_min = Some(parse_num::<f64>(value, line_no, "min speed")?),
                    "MAX SPEED" => v_max = Some(parse_num::<f64>(value, line_no, "max speed")?),
                    "RENTING RATIO" => renting_ratio = Some(parse_num::<f64>(value, line_no, "renting ratio")?),
                    "EDGE_WEIGHT_TYPE" => {
                        edge_kind = Some(match value {
                            "CEIL_2D" => EdgeWeightKind::Ceil2d,
                            "EUC_2D" => EdgeWeightKind::Euc2d,
                            other => {
                                return Err(TtpError::Parse {
                                    line: line_no,
                                    msg: format!("unsupported edge weight type {other:?}"),
                                })
                            }
                        })
                    }
                    other => {
                        return Err(TtpError::Parse {
                            line: line_no,
                            msg: format!("unknown header key {other:?}"),
                        })
                    }
                }
            }
            Section::Coords => {
                if line.starts_with("ITEMS SECTION") {
                    section = Section::Items;
                    continue;
                }
                let mut toks = line.split_whitespace();
                let (a, b, c) = match (toks.next(), toks.next(), toks.next(), toks.next()) {
                    (Some(a), Some(b), Some(c), None) => (a, b, c),
                    _ => {
                        return Err(TtpError::Parse {
                            line: line_no,
                            msg: format!("expected `index x y`, got {line:?}"),
                        })
                    }
                };
                let index: usize = parse_num(a, line_no, "city index")?;
                if index != coords.len() + 1 {
                    return Err(TtpError::Parse {
                        line: line_no,
                        msg: format!("city index {index} out of order, expected {}", coords.len() + 1),
                    });
                }
                coords.push((parse_num(b, line_no, "x coordinate")?, parse_num(c, line_no, "y coordinate")?));
            }
            Section::Items => {
                let mut toks = line.split_whitespace();
                let (a, b, c, d) = match (toks.next(), toks.next(), toks.next(), toks.next(), toks.next()) {
                    (Some(a), Some(b), Some(c), Some(d), None) => (a, b, c, d),
                    _ => {
                        return Err(TtpError::Parse {
                            line: line_no,
                            msg: format!("expected `index profit weight city`, got {line:?}"),
                        })
                    }
                };
                let index: usize = parse_num(a, line_no, "item index")?;
                if index != items.len() + 1 {
                    return Err(TtpError::Parse {
                        line: line_no,
                        msg: format!("item index {index} out of order, expected {}", items.len() + 1),
                    });
                }
                items.push(Item {
                    id: items.len(),
                    profit: parse_num(b, line_no, "profit")?,
                    weight: parse_num(c, line_no, "weight")?,
                    city: parse_num(d, line_no, "assigned node")?,
                });
            }
        }
    }

    let last = text.lines().count();
    let missing = |what: &str| TtpError::Parse {
        line: last,
        msg: format!("missing {what}"),
    };
    let name = name.ok_or_else(|| missing("PROBLEM NAME header"))?;
    let kp_type = kp_type.ok_or_else(|| missing("KNAPSACK DATA TYPE header"))?;
    let dimension = dimension.ok_or_else(|| missing("DIMENSION header"))?;
    let n_items = n_items.ok_or_else(|| missing("NUMBER OF ITEMS header"))?;
    let capacity = capacity.ok_or_else(|| missing("CAPACITY OF KNAPSACK header"))?;
    let v_min = v_min.ok_or_else(|| missing("MIN SPEED header"))?;
    let v_max = v_max.ok_or_else(|| missing("MAX SPEED header"))?;
    let renting_ratio = renting_ratio.ok_or_else(|| missing("RENTING RATIO header"))?;
    let edge_kind = edge_kind.ok_or_else(|| missing("EDGE_WEIGHT_TYPE header"))?;

    if coords.len() != dimension {
        return Err(TtpError::Parse {
            line: last,
            msg: format!("DIMENSION says {dimension} cities, found {}", coords.len()),
        });
    }
    if items.len() != n_items {
        return Err(TtpError::Parse {
            line: last,
            msg: format!("NUMBER OF ITEMS says {n_items}, found {}", items.len()),
        });
    }

    TtpInstance::new(name, kp_type, edge_kind, coords, items, capacity, renting_ratio, v_min, v_max)
        .map_err(|e| match e {
            TtpError::InvalidArgument(msg) => TtpError::Parse { line: last, msg },
            other => other,
        })
}

pub fn serialize_ttp(inst: &TtpInstance) -> String {
    let mut out = String::new();
    out.push_str(&format!("PROBLEM NAME:\t{}\n", inst.name));
    out.push_str(&format!("KNAPSACK DATA TYPE:\t{}\n", inst.kp_type.header_name()));
    out.push_str(&format!("DIMENSION:\t{}\n", inst.n_cities()));
    out.push_str(&format!("NUMBER OF ITEMS:\t{}\n", inst.n_items()));
    out.push_str(&format!("CAPACITY OF KNAPSACK:\t{}\n", inst.capacity));
    out.push_str(&format!("MIN SPEED:\t{}\n", inst.v_min));
    out.push_str(&format!("MAX SPEED:\t{}\n", inst.v_max));
    out.push_str(&format!("RENTING RATIO:\t{}\n", inst.renting_ratio));
    out.push_str(&format!("EDGE_WEIGHT_TYPE:\t{}\n", inst.edge_weight_kind.header_name()));
    out.push_str("NODE_COORD_SECTION\t(INDEX, X, Y):\n");
    for city in 1..=inst.n_cities() {
        let (x, y) = inst.coord(city);
        out.push_str(&format!("{city}\t{x}\t{y}\n"));
    }
    out.push_str("ITEMS SECTION\t(INDEX, PROFIT, WEIGHT, ASSIGNED NODE NUMBER):\n");
    for item in inst.items() {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            item.id + 1,
            item.profit,
            item.weight,
            item.city
        ));
    }
    out
}

#[derive(Debug, Clone, Copy)]
pub enum CoordLayout {
    /// Points drawn uniformly from [0, span]^2.
    Uniform { span: f64 },
    /// `clusters` gaussian blobs with the given spread, centers uniform in [0, span]^2.
    Clustered { span: f64, clusters: usize, spread: f64 },
}

pub fn synthetic_coords(layout: CoordLayout, n: usize, seed: u64) -> Vec<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match layout {
        CoordLayout::Uniform { span } => (0..n)
            .map(|_| (rng.random_range(0.0..span), rng.random_range(0.0..span)))
            .collect(),
        CoordLayout::Clustered { span, clusters, spread } => {
            let k = clusters.max(1);
            let centers: Vec<(f64, f64)> = (0..k)
                .map(|_| (rng.random_range(0.0..span), rng.random_range(0.0..span)))
                .collect();
            use rand_distr::{Distribution, Normal};
            let blob = Normal::new(0.0, spread).expect("spread must be finite");
            (0..n)
                .map(|_| {
                    let (cx, cy) = centers[rng.random_range(0..k)];
                    (cx + blob.sample(&mut rng), cy + blob.sample(&mut rng))
                })
                .collect()
        }
    }
}

pub const DEFAULT_V_MIN: f64 = 0.1;
pub const DEFAULT_V_MAX: f64 = 1.0;

/// Build a benchmark instance over the given cities. Each city except the
/// first gets `items_per_city` items drawn per `kp_type`. The capacity is
/// `capacity_factor`/11 of the total item weight, and the renting ratio is
/// set so the best knapsack-only plan, ridden over the reference tour,
/// scores about zero: R = P*/T*.
pub fn generate_instance(
    name: impl Into<String>,
    coords: Vec<(f64, f64)>,
    items_per_city: u32,
    kp_type: KpType,
    capacity_factor: u32,
    seed: u64,
) -> Result<TtpInstance> {
    let n = coords.len();
    if n < 2 {
        return Err(TtpError::InvalidArgument(format!(
            "need at least 2 cities, got {n}"
        )));
    }
    if items_per_city == 0 {
        return Err(TtpError::InvalidArgument("items_per_city must be >= 1".into()));
    }
    if !(1..=10).contains(&capacity_factor) {
        return Err(TtpError::InvalidArgument(format!(
            "capacity factor must be in 1..=10, got {capacity_factor}"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut items = Vec::with_capacity((n - 1) * items_per_city as usize);
    for _round in 0..items_per_city {
        for city in 2..=n {
            let (weight, profit) = match kp_type {
                KpType::Uncorr => (rng.random_range(1..=1000), rng.random_range(1..=1000)),
                KpType::UncorrSimilarWeights => {
                    (rng.random_range(1000..=1010), rng.random_range(1..=1000))
                }
                KpType::BoundedStronglyCorr => {
                    let w = rng.random_range(1..=1000);
                    (w, w + 100)
                }
            };
            items.push(Item {
                id: items.len(),
                city,
                profit,
                weight,
            });
        }
    }

    let total_weight: u64 = items.iter().map(|it| it.weight).sum();
    let capacity = capacity_factor as u64 * total_weight / 11;

    let name = name.into();
    let mut inst = TtpInstance::new(
        &name,
        kp_type,
        EdgeWeightKind::Ceil2d,
        coords,
        items,
        capacity,
        0.0,
        DEFAULT_V_MIN,
        DEFAULT_V_MAX,
    )?;

    let tour = crate::tour::reference_tour(&inst);
    let kp = match crate::knapsack::kp_dp_optimal(inst.items(), capacity) {
        Ok(sol) => sol,
        Err(TtpError::WorkBudgetExceeded { .. }) => crate::knapsack::kp_greedy(inst.items(), capacity),
        Err(e) => return Err(e),
    };
    let plan = crate::knapsack::PackingPlan::from_ids(&inst, &kp.ids)?;
    let travel_time = crate::objective::tour_time(&inst, &tour, &plan)?;
    if !(travel_time > 0.0) {
        return Err(TtpError::InvalidArgument(
            "degenerate geometry: reference tour has zero travel time".into(),
        ));
    }
    inst.renting_ratio = kp.profit as f64 / travel_time;
    Ok(inst)
}
