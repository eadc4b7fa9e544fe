use crate::error::{Result, TtpError};
use crate::instance::TtpInstance;

/// Cyclic tour as 1-based city ids. Construction helpers keep city 1 first.
pub type Tour = Vec<usize>;

pub fn tour_length(inst: &TtpInstance, tour: &[usize]) -> u64 {
    let n = tour.len();
    let mut total = 0u64;
    for i in 0..n {
        total += inst.distance(tour[i], tour[(i + 1) % n]);
    }
    total
}

pub fn validate_tour(inst: &TtpInstance, tour: &[usize]) -> Result<()> {
    let n = inst.n_cities();
    if tour.len() != n {
        return Err(TtpError::InvalidArgument(format!(
            "tour visits {} cities, instance has {n}",
            tour.len()
        )));
    }
    let mut seen = vec![false; n + 1];
    for &c in tour {
        if c < 1 || c > n {
            return Err(TtpError::InvalidArgument(format!("city {c} out of range 1..={n}")));
        }
        if seen[c] {
            return Err(TtpError::InvalidArgument(format!("city {c} visited twice")));
        }
        seen[c] = true;
    }
    Ok(())
}

/// Nearest neighbor from city 1, ties to the lowest city id.
pub fn nearest_neighbor(inst: &TtpInstance) -> Tour {
    let n = inst.n_cities();
    let mut tour = Vec::with_capacity(n);
    let mut visited = vec![false; n + 1];
    let mut current = 1;
    visited[1] = true;
    tour.push(1);
    for _ in 1..n {
        let mut best = 0;
        let mut best_d = u64::MAX;
        for c in 1..=n {
            if !visited[c] {
                let d = inst.distance(current, c);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
        }
        visited[best] = true;
        tour.push(best);
        current = best;
    }
    tour
}

/// First-improvement 2-opt: scan segment reversals in index order, apply
/// each improving move as soon as it is found, and repeat until a full
/// pass finds nothing. City 1 stays at the front.
pub fn two_opt(inst: &TtpInstance, tour: &[usize]) -> Tour {
    let mut t = tour.to_vec();
    let n = t.len();
    if n < 4 {
        return t;
    }
    let mut improved = true;
    while improved {
        improved = false;
        for i in 1..n - 1 {
            for j in i + 1..n {
                let a = t[i - 1];
                let b = t[i];
                let c = t[j];
                let d = t[(j + 1) % n];
                if a == c || b == d {
                    continue;
                }
                let before = inst.distance(a, b) as i64 + inst.distance(c, d) as i64;
                let after = inst.distance(a, c) as i64 + inst.distance(b, d) as i64;
                if after < before {
                    t[i..=j].reverse();
                    improved = true;
                }
            }
        }
    }
    t
}

/// The deterministic tour every component agrees on: nearest neighbor
/// polished by 2-opt. Generated instances calibrate their renting ratio
/// against this tour, so it must stay reproducible from coordinates alone.
pub fn reference_tour(inst: &TtpInstance) -> Tour {
    two_opt(inst, &nearest_neighbor(inst))
}

/// Coordinates from a TSPLIB .tsp file (NODE_COORD_SECTION only).
pub fn read_tsp_coords(text: &str) -> Result<Vec<(f64, f64)>> {
    let mut coords = Vec::new();
    let mut in_section = false;
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line == "EOF" {
            continue;
        }
        if !in_section {
            if line.starts_with("NODE_COORD_SECTION") {
                in_section = true;
            }
            continue;
        }
        let mut toks = line.split_whitespace();
        let (_, x, y) = match (toks.next(), toks.next(), toks.next()) {
            (Some(a), Some(b), Some(c)) => (a, b, c),
            _ => {
                return Err(TtpError::Parse {
                    line: idx + 1,
                    msg: format!("expected `index x y`, got {line:?}"),
                })
            }
        };
        let x: f64 = x.parse().map_err(|_| TtpError::Parse {
            line: idx + 1,
            msg: format!("bad x coordinate {x:?}"),
        })?;
        let y: f64 = y.parse().map_err(|_| TtpError::Parse {
            line: idx + 1,
            msg: format!("bad y coordinate {y:?}"),
        })?;
        coords.push((x, y));
    }
    if coords.is_empty() {
        return Err(TtpError::Parse {
            line: 1,
            msg: "no NODE_COORD_SECTION found".into(),
        });
    }
    Ok(coords)
}
