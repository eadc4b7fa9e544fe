use std::collections::{BTreeSet, HashMap};

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Result, TtpError};
use crate::sr::expr::{Expr, Op};

/// Per-case error charged when an expression produces a non-finite value.
pub const PENALTY: f64 = 1e9;

const BCE_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SrTask {
    /// Targets in {0,1}; expression output is squashed by a sigmoid and
    /// scored with binary cross entropy.
    BinaryBce,
    /// Mean absolute error against real targets.
    RegressionMae,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FunctionSet {
    /// add, sub, mul: every expression expands to monomials.
    Polynomial,
    /// add, sub, mul, protected div.
    Rational,
}

impl FunctionSet {
    pub fn ops(self) -> &'static [Op] {
        match self {
            FunctionSet::Polynomial => &[Op::Add, Op::Sub, Op::Mul],
            FunctionSet::Rational => &[Op::Add, Op::Sub, Op::Mul, Op::Div],
        }
    }
}

#[derive(Debug, Clone)]
pub struct SrDataset {
    cols: Vec<Vec<f64>>,
    y: Vec<f64>,
    task: SrTask,
}

impl SrDataset {
    pub fn new(cols: Vec<Vec<f64>>, y: Vec<f64>, task: SrTask) -> Result<Self> {
        if cols.is_empty() {
            return Err(TtpError::InvalidArgument("dataset needs at least one feature".into()));
        }
        if y.is_empty() {
            return Err(TtpError::InvalidArgument("dataset needs at least one case".into()));
        }
        for (i, col) in cols.iter().enumerate() {
            if col.len() != y.len() {
                return Err(TtpError::InvalidArgument(format!(
                    "feature {i} has {} values, targets have {}",
                    col.len(),
                    y.len()
                )));
            }
        }
        if task == SrTask::BinaryBce && y.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(TtpError::InvalidArgument("binary targets must be 0 or 1".into()));
        }
        Ok(SrDataset { cols, y, task })
    }

    pub fn arity(&self) -> usize {
        self.cols.len()
    }

    pub fn n_cases(&self) -> usize {
        self.y.len()
    }

    pub fn task(&self) -> SrTask {
        self.task
    }
}

#[derive(Debug, Clone)]
pub struct SrConfig {
    pub population: usize,
    pub generations: u64,
    pub function_set: FunctionSet,
    /// Ramped half-and-half initial depth range, inclusive.
    pub init_depth: (usize, usize),
    pub max_depth: usize,
    pub p_crossover: f64,
    pub p_subtree: f64,
    pub p_hoist: f64,
    pub p_point: f64,
    /// Per-node replacement chance inside point mutation.
    pub point_replace_prob: f64,
    pub const_range: (f64, f64),
    pub dalex_sigma: f64,
    /// Node-count caps for the per-run best-small-program trackers.
    pub length_caps: Vec<usize>,
    /// Stop once the best loss drops strictly below this.
    pub stop_below: Option<f64>,
    pub seed: u64,
}

impl SrConfig {
    pub fn new(seed: u64) -> Self {
        SrConfig {
            population: 1000,
            generations: 300,
            function_set: FunctionSet::Polynomial,
            init_depth: (2, 6),
            max_depth: 8,
            p_crossover: 0.9,
            p_subtree: 0.01,
            p_hoist: 0.01,
            p_point: 0.01,
            point_replace_prob: 0.05,
            const_range: (-1.0, 1.0),
            dalex_sigma: 200.0,
            length_caps: vec![20, 30, 40],
            stop_below: None,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.population == 0 {
            return Err(TtpError::InvalidArgument("population must be >= 1".into()));
        }
        if self.init_depth.0 > self.init_depth.1 || self.init_depth.1 > self.max_depth {
            return Err(TtpError::InvalidArgument(format!(
                "init depth range {:?} must be ordered and fit under max depth {}",
                self.init_depth, self.max_depth
            )));
        }
        let psum = self.p_crossover + self.p_subtree + self.p_hoist + self.p_point;
        if !(0.0..=1.0).contains(&psum) {
            return Err(TtpError::InvalidArgument(format!(
                "operator probabilities sum to {psum}, must be within [0,1]"
            )));
        }
        if !(self.const_range.0 <= self.const_range.1) {
            return Err(TtpError::InvalidArgument("constant range must be ordered".into()));
        }
        if !(self.dalex_sigma >= 0.0 && self.dalex_sigma.is_finite()) {
            return Err(TtpError::InvalidArgument("selection sigma must be finite and >= 0".into()));
        }
        Ok(())
    }
}

fn sigmoid(r: f64) -> f64 {
    1.0 / (1.0 + (-r).exp())
}

#[cfg(test)]
struct BufPool {
    free: Vec<Vec<f64>>,
    len: usize,
}

#[cfg(test)]
impl BufPool {
    fn new(len: usize) -> Self {
        BufPool { free: Vec::new(), len }
    }

    fn take(&mut self) -> Vec<f64> {
        self.free.pop().unwrap_or_else(|| vec![0.0; self.len])
    }

    fn give(&mut self, buf: Vec<f64>) {
        self.free.push(buf);
    }
}

/// One preorder tree node. Populations live as flat token vectors so
/// subtree surgery is a splice and evaluation a linear scan; trees only
/// materialize as boxed `Expr` when a result leaves the engine.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Tok {
    Op(Op),
    Var(usize),
    Const(f64),
}

type Genome = Vec<Tok>;

#[cfg(test)]
fn flatten(expr: &Expr, out: &mut Genome) {
    match expr {
        Expr::Const(c) => out.push(Tok::Const(*c)),
        Expr::Var(v) => out.push(Tok::Var(*v)),
        Expr::Bin(op, a, b) => {
            out.push(Tok::Op(*op));
            flatten(a, out);
            flatten(b, out);
        }
    }
}

fn to_expr(g: &[Tok]) -> Expr {
    fn build(g: &[Tok], i: &mut usize) -> Expr {
        let tok = g[*i];
        *i += 1;
        match tok {
            Tok::Const(c) => Expr::Const(c),
            Tok::Var(v) => Expr::Var(v),
            Tok::Op(op) => {
                let a = build(g, i);
                let b = build(g, i);
                Expr::Bin(op, Box::new(a), Box::new(b))
            }
        }
    }
    let mut i = 0;
    let expr = build(g, &mut i);
    debug_assert_eq!(i, g.len(), "trailing tokens after tree");
    expr
}

/// Exclusive end of the subtree starting at `at`.
fn subtree_end(g: &[Tok], at: usize) -> usize {
    let mut need = 1usize;
    let mut i = at;
    loop {
        match g[i] {
            Tok::Op(_) => need += 1,
            _ => need -= 1,
        }
        i += 1;
        if need == 0 {
            return i;
        }
    }
}

/// A lone terminal has depth 0, matching `Expr::depth`.
fn genome_depth(g: &[Tok]) -> usize {
    let mut max = 0usize;
    let mut pending: Vec<u8> = Vec::new();
    for tok in g {
        match tok {
            Tok::Op(_) => pending.push(2),
            _ => {
                max = max.max(pending.len());
                while let Some(top) = pending.last_mut() {
                    *top -= 1;
                    if *top == 0 {
                        pending.pop();
                    } else {
                        break;
                    }
                }
            }
        }
    }
    max
}

/// Evaluate one genome on all cases by scanning the preorder tokens
/// backwards with a value stack. Kept as the plain reference the shared
/// population evaluator is checked against.
#[cfg(test)]
fn eval_genome(g: &[Tok], cols: &[Vec<f64>], pool: &mut BufPool, stack: &mut Vec<Vec<f64>>) -> Vec<f64> {
    debug_assert!(stack.is_empty());
    for tok in g.iter().rev() {
        match tok {
            Tok::Const(c) => {
                let mut buf = pool.take();
                buf.fill(*c);
                stack.push(buf);
            }
            Tok::Var(v) => {
                let mut buf = pool.take();
                buf.copy_from_slice(&cols[*v]);
                stack.push(buf);
            }
            Tok::Op(op) => {
                let mut left = stack.pop().expect("left operand");
                let right = stack.pop().expect("right operand");
                match op {
                    Op::Add => {
                        for (l, r) in left.iter_mut().zip(&right) {
                            *l += r;
                        }
                    }
                    Op::Sub => {
                        for (l, r) in left.iter_mut().zip(&right) {
                            *l -= r;
                        }
                    }
                    Op::Mul => {
                        for (l, r) in left.iter_mut().zip(&right) {
                            *l *= r;
                        }
                    }
                    Op::Div => {
                        for (l, r) in left.iter_mut().zip(&right) {
                            *l = Op::Div.apply(*l, *r);
                        }
                    }
                }
                pool.give(right);
                stack.push(left);
            }
        }
    }
    stack.pop().expect("one value per tree")
}

fn block_errors(raw: &[f64], y: &[f64], task: SrTask, out: &mut [f64]) {
    match task {
        SrTask::BinaryBce => {
            for ((&r, &label), o) in raw.iter().zip(y).zip(out) {
                if !r.is_finite() {
                    *o = PENALTY;
                    continue;
                }
                let p = sigmoid(r).clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
                *o = if label > 0.5 { -p.ln() } else { -(1.0 - p).ln() };
            }
        }
        SrTask::RegressionMae => {
            for ((&r, &label), o) in raw.iter().zip(y).zip(out) {
                let e = (r - label).abs();
                *o = if e.is_finite() { e } else { PENALTY };
            }
        }
    }
}

#[cfg(test)]
fn genome_errors(
    g: &[Tok],
    ds: &SrDataset,
    pool: &mut BufPool,
    stack: &mut Vec<Vec<f64>>,
    out: &mut Vec<f64>,
) {
    let raw = eval_genome(g, &ds.cols, pool, stack);
    out.clear();
    out.resize(raw.len(), 0.0);
    block_errors(&raw, &ds.y, ds.task, out);
    pool.give(raw);
}

/// Per-case errors for one expression over the dataset.
#[cfg(test)]
fn case_errors(expr: &Expr, ds: &SrDataset, pool: &mut BufPool, out: &mut Vec<f64>) {
    let mut g = Genome::new();
    flatten(expr, &mut g);
    let mut stack = Vec::new();
    genome_errors(&g, ds, pool, &mut stack, out);
}

fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Structural hash of a node given its children's hashes. Two independent
/// 64-bit tracks make an accidental match across a population implausible.
fn node_hash(tok: Tok, left: u128, right: u128) -> u128 {
    let (tag, payload) = match tok {
        Tok::Var(v) => (0x9ae1_6a3b_2f90_404f_u64, v as u64),
        Tok::Const(c) => (0xc2b2_ae3d_27d4_eb4f_u64, c.to_bits()),
        Tok::Op(op) => (
            0x1656_67b1_9e37_79f9_u64,
            match op {
                Op::Add => 1,
                Op::Sub => 2,
                Op::Mul => 3,
                Op::Div => 4,
            },
        ),
    };
    let lo = mix64(mix64(mix64(tag ^ payload) ^ left as u64) ^ right as u64);
    let hi = mix64(
        mix64(mix64(tag.rotate_left(32) ^ payload.wrapping_mul(0x9e37_79b9_7f4a_7c15)) ^ (left >> 64) as u64)
            ^ (right >> 64) as u64,
    );
    ((hi as u128) << 64) | lo as u128
}

/// Appends per-token subtree hashes and token counts for one genome,
/// computed bottom-up with the same reverse scan as evaluation.
fn genome_hashes(g: &[Tok], hashes: &mut Vec<u128>, sizes: &mut Vec<u32>, stack: &mut Vec<(u128, u32)>) {
    let base = hashes.len();
    hashes.resize(base + g.len(), 0);
    sizes.resize(base + g.len(), 0);
    debug_assert!(stack.is_empty());
    for (k, tok) in g.iter().enumerate().rev() {
        let (h, s) = match tok {
            Tok::Op(_) => {
                let (lh, ls) = stack.pop().expect("left operand");
                let (rh, rs) = stack.pop().expect("right operand");
                (node_hash(*tok, lh, rh), 1 + ls + rs)
            }
            leaf => (node_hash(*leaf, 0, 0), 1),
        };
        hashes[base + k] = h;
        sizes[base + k] = s;
        stack.push((h, s));
    }
    stack.pop();
    debug_assert!(stack.is_empty());
}

const EVAL_BLOCK: usize = 512;
const BUF_HIGH_WATER: usize = 16_384;

/// Evaluates a whole population at once. Crossover keeps children mostly
/// identical to their parents, so a population carries far fewer distinct
/// subtrees than tokens; each distinct subtree is computed once per case
/// block and shared. Blocks keep operand buffers cache resident on large
/// datasets. Identical subtrees evaluate identically, so the per-case
/// errors are bitwise equal to evaluating every genome on its own.
struct PopEvaluator {
    block: usize,
    starts: Vec<usize>,
    hashes: Vec<u128>,
    sizes: Vec<u32>,
    hash_stack: Vec<(u128, u32)>,
    dup_of: Vec<usize>,
    roots: HashMap<u128, usize>,
    memo: HashMap<u128, u32>,
    bufs: Vec<Vec<f64>>,
    used: usize,
    stat_nodes: usize,
    stat_miss: usize,
}

impl PopEvaluator {
    fn new(n_cases: usize) -> Self {
        PopEvaluator {
            block: n_cases.clamp(1, EVAL_BLOCK),
            starts: Vec::new(),
            hashes: Vec::new(),
            sizes: Vec::new(),
            hash_stack: Vec::new(),
            dup_of: Vec::new(),
            roots: HashMap::new(),
            memo: HashMap::new(),
            bufs: Vec::new(),
            used: 0,
            stat_nodes: 0,
            stat_miss: 0,
        }
    }

    fn alloc(&mut self) -> u32 {
        if self.used == self.bufs.len() {
            self.bufs.push(vec![0.0; self.block]);
        }
        self.used += 1;
        (self.used - 1) as u32
    }

    fn eval_node(
        &mut self,
        g: &[Tok],
        hs: &[u128],
        szs: &[u32],
        at: usize,
        cols: &[Vec<f64>],
        start: usize,
        blen: usize,
    ) -> u32 {
        self.stat_nodes += 1;
        if let Some(&idx) = self.memo.get(&hs[at]) {
            return idx;
        }
        self.stat_miss += 1;
        let idx = match g[at] {
            Tok::Const(c) => {
                let b = self.alloc();
                self.bufs[b as usize][..blen].fill(c);
                b
            }
            Tok::Var(v) => {
                let b = self.alloc();
                self.bufs[b as usize][..blen].copy_from_slice(&cols[v][start..start + blen]);
                b
            }
            Tok::Op(op) => {
                let left = self.eval_node(g, hs, szs, at + 1, cols, start, blen);
                let right_at = at + 1 + szs[at + 1] as usize;
                let right = self.eval_node(g, hs, szs, right_at, cols, start, blen);
                let out = self.alloc();
                // operands always sit below the freshly allocated slot
                let (head, tail) = self.bufs.split_at_mut(out as usize);
                let ob = &mut tail[0][..blen];
                let lb = &head[left as usize][..blen];
                let rb = &head[right as usize][..blen];
                match op {
                    Op::Add => {
                        for ((o, l), r) in ob.iter_mut().zip(lb).zip(rb) {
                            *o = l + r;
                        }
                    }
                    Op::Sub => {
                        for ((o, l), r) in ob.iter_mut().zip(lb).zip(rb) {
                            *o = l - r;
                        }
                    }
                    Op::Mul => {
                        for ((o, l), r) in ob.iter_mut().zip(lb).zip(rb) {
                            *o = l * r;
                        }
                    }
                    Op::Div => {
                        for ((o, l), r) in ob.iter_mut().zip(lb).zip(rb) {
                            *o = Op::Div.apply(*l, *r);
                        }
                    }
                }
                out
            }
        };
        self.memo.insert(hs[at], idx);
        idx
    }

    fn eval_population(&mut self, pop: &[Genome], ds: &SrDataset, errors: &mut [Vec<f64>]) {
        let n = ds.n_cases();
        let mut hashes = std::mem::take(&mut self.hashes);
        let mut sizes = std::mem::take(&mut self.sizes);
        hashes.clear();
        sizes.clear();
        self.starts.clear();
        self.dup_of.clear();
        self.roots.clear();
        for (i, g) in pop.iter().enumerate() {
            let at = hashes.len();
            self.starts.push(at);
            genome_hashes(g, &mut hashes, &mut sizes, &mut self.hash_stack);
            let prev = *self.roots.entry(hashes[at]).or_insert(i);
            // token-level compare so a hash match alone never aliases genomes
            self.dup_of.push(if prev != i && pop[prev] == *g { prev } else { i });
            if errors[i].len() != n {
                errors[i].resize(n, 0.0);
            }
        }
        let mut case0 = 0;
        while case0 < n {
            let blen = (n - case0).min(self.block);
            self.memo.clear();
            self.used = 0;
            for i in 0..pop.len() {
                if self.dup_of[i] != i {
                    continue;
                }
                if self.used > BUF_HIGH_WATER {
                    // degenerate population with little sharing, bound memory
                    self.memo.clear();
                    self.used = 0;
                }
                let lo = self.starts[i];
                let hi = lo + pop[i].len();
                let root = self.eval_node(
                    &pop[i],
                    &hashes[lo..hi],
                    &sizes[lo..hi],
                    0,
                    &ds.cols,
                    case0,
                    blen,
                );
                block_errors(
                    &self.bufs[root as usize][..blen],
                    &ds.y[case0..case0 + blen],
                    ds.task,
                    &mut errors[i][case0..case0 + blen],
                );
            }
            case0 += blen;
        }
        for i in 0..pop.len() {
            let j = self.dup_of[i];
            if j != i {
                let (head, tail) = errors.split_at_mut(i);
                tail[0].copy_from_slice(&head[j]);
            }
        }
        self.hashes = hashes;
        self.sizes = sizes;
    }
}

/// Diversely aggregated lexicase selection: draw one N(0, sigma) score per
/// case, softmax the scores into case weights, and return the individual
/// with the smallest weighted error sum (ties to the lower index). A zero
/// sigma weights every case equally, which reduces to minimum mean error.
pub fn dalex_select<R: Rng>(errors: &[Vec<f64>], sigma: f64, rng: &mut R) -> usize {
    assert!(!errors.is_empty(), "no individuals to select from");
    let n_cases = errors[0].len();
    assert!(n_cases > 0, "no cases to select on");

    let mut weights = vec![0.0f64; n_cases];
    if sigma > 0.0 {
        let normal = Normal::new(0.0, sigma).expect("sigma validated");
        for w in weights.iter_mut() {
            *w = normal.sample(rng);
        }
    }
    let s_max = weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    for w in weights.iter_mut() {
        *w = (*w - s_max).exp();
    }

    let mut best = 0;
    let mut best_sum = f64::INFINITY;
    for (i, row) in errors.iter().enumerate() {
        let sum: f64 = row.iter().zip(&weights).map(|(e, w)| e * w).sum();
        if sum < best_sum {
            best_sum = sum;
            best = i;
        }
    }
    best
}

/// Same selection rule, organized for speed: the error matrix is held
/// case-major so each weighted term is one contiguous pass, and softmax
/// weights fall off so steeply that nearly all mass sits on a handful of
/// cases, so only those contribute a pass; the remainder is only spent
/// when its bound could still change the winner. Sums accumulate in
/// descending weight order, term by term, so they match the plain rule
/// bit for bit whenever no case is skipped.
struct Picker {
    sigma: f64,
    max_err: f64,
    d_cut: f64,
    /// lowest population index per distinct error row, ascending
    reps: Vec<usize>,
    /// rep errors[k][j] stored at cols[j * reps.len() + k]
    cols: Vec<f64>,
    /// the same values row-major for the fallback's row walks
    rows: Vec<f64>,
    scores: Vec<f64>,
    sig: Vec<(f64, usize)>,
    sums: Vec<f64>,
    fallbacks: usize,
}

fn row_hash(row: &[f64]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &e in row {
        h = mix64(h ^ e.to_bits());
    }
    h
}

impl Picker {
    fn new(errors: &[Vec<f64>], sigma: f64) -> Self {
        let n_cases = errors[0].len();
        // identical rows always tie exactly, which would force the full-sum
        // fallback below on every draw; collapse them so a tie inside a
        // group resolves to its lowest index for free
        let mut reps: Vec<usize> = Vec::new();
        let mut seen: HashMap<u64, Vec<usize>> = HashMap::new();
        for (i, row) in errors.iter().enumerate() {
            let bucket = seen.entry(row_hash(row)).or_default();
            if !bucket.iter().any(|&r| errors[r] == *row) {
                bucket.push(i);
                reps.push(i);
            }
        }
        let n_reps = reps.len();
        let mut cols = vec![0.0f64; n_cases * n_reps];
        let mut rows = vec![0.0f64; n_cases * n_reps];
        let mut max_err = 0.0f64;
        for (k, &i) in reps.iter().enumerate() {
            rows[k * n_cases..(k + 1) * n_cases].copy_from_slice(&errors[i]);
            for (j, &e) in errors[i].iter().enumerate() {
                cols[j * n_reps + k] = e;
                max_err = max_err.max(e);
            }
        }
        // shift the cutoff so the skipped mass stays far below f64 noise
        // even when penalty-scale errors stretch the matrix and the best
        // weighted sum is as small as a single clamped log loss
        let d_cut = -115.0 - max_err.max(1.0).ln();
        Picker {
            sigma,
            max_err,
            d_cut,
            reps,
            cols,
            rows,
            scores: vec![0.0; n_cases],
            sig: Vec::new(),
            sums: vec![0.0; n_reps],
            fallbacks: 0,
        }
    }

    fn accumulate(&mut self, order: &[(f64, usize)]) {
        let n_reps = self.reps.len();
        self.sums.fill(0.0);
        for &(w, j) in order {
            let col = &self.cols[j * n_reps..(j + 1) * n_reps];
            for (s, &e) in self.sums.iter_mut().zip(col) {
                *s += w * e;
            }
        }
    }

    fn pick<R: Rng>(&mut self, rng: &mut R) -> usize {
        let n_cases = self.scores.len();
        if self.sigma > 0.0 {
            let normal = Normal::new(0.0, self.sigma).expect("sigma validated");
            for s in self.scores.iter_mut() {
                *s = normal.sample(rng);
            }
        } else {
            self.scores.fill(0.0);
        }
        let s_max = self.scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);

        // weights below the cutoff cannot matter unless two sums land
        // within the tail bound of each other; then the full sum decides
        self.sig.clear();
        for (j, &s) in self.scores.iter().enumerate() {
            let d = s - s_max;
            if d > self.d_cut {
                self.sig.push(((d).exp(), j));
            }
        }
        self.sig
            .sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));

        let order = std::mem::take(&mut self.sig);
        self.accumulate(&order);
        self.sig = order;

        let mut best = 0;
        let mut best_sum = f64::INFINITY;
        let mut second = f64::INFINITY;
        for (i, &sum) in self.sums.iter().enumerate() {
            if sum < best_sum {
                second = best_sum;
                best_sum = sum;
                best = i;
            } else if sum < second {
                second = sum;
            }
        }

        let skipped = (n_cases - self.sig.len()) as f64;
        let tail_bound = 4.0 * skipped * self.d_cut.exp() * self.max_err;
        if best_sum + tail_bound < second {
            return self.reps[best];
        }
        // once the whole skipped mass is below an ulp of the best sum it
        // rounds away from every candidate, so the partial order already
        // is the full order and ties resolve to the lower index
        if tail_bound <= best_sum * (f64::EPSILON / 32.0) {
            return self.reps[best];
        }

        // sums too close to call from the significant cases alone; every
        // error is non-negative, so only candidates within the bound can
        // win on the full sum and the rest of the matrix stays untouched
        self.fallbacks += 1;
        let mut full: Vec<(f64, usize)> = self
            .scores
            .iter()
            .map(|&s| (s - s_max).exp())
            .zip(0..n_cases)
            .collect();
        full.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        let cutoff = best_sum + tail_bound;
        let mut win = 0;
        let mut win_sum = f64::INFINITY;
        for (k, &partial) in self.sums.iter().enumerate() {
            if partial > cutoff {
                continue;
            }
            let row = &self.rows[k * n_cases..(k + 1) * n_cases];
            let mut sum = 0.0;
            for &(w, j) in &full {
                sum += w * row[j];
            }
            if sum < win_sum {
                win_sum = sum;
                win = k;
            }
        }
        self.reps[win]
    }
}

#[derive(Debug, Clone)]
pub struct ParetoEntry {
    pub expr: Expr,
    pub loss: f64,
    /// Monomial exponent vectors present after expansion.
    pub terms: BTreeSet<Vec<u32>>,
}

impl ParetoEntry {
    pub fn term_count(&self) -> usize {
        self.terms.len()
    }
}

/// Keep `front` as the set of loss/term-count trade-offs seen so far. A
/// candidate is dominated when some entry has strictly better loss with
/// no more terms. Exact duplicates (same loss, same term set) are
/// dropped so re-offered generation bests do not pile up.
pub fn pareto_update(front: &mut Vec<ParetoEntry>, cand: ParetoEntry) {
    if front
        .iter()
        .any(|e| e.loss == cand.loss && e.terms == cand.terms)
    {
        return;
    }
    if front
        .iter()
        .any(|e| e.loss < cand.loss && e.term_count() <= cand.term_count())
    {
        return;
    }
    front.retain(|e| !(cand.loss < e.loss && cand.term_count() <= e.term_count()));
    front.push(cand);
    front.sort_by(|a, b| {
        a.term_count()
            .cmp(&b.term_count())
            .then(a.loss.partial_cmp(&b.loss).unwrap())
    });
}

#[derive(Debug, Clone)]
pub struct CappedBest {
    pub expr: Expr,
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct SrRunResult {
    pub best: Expr,
    pub best_loss: f64,
    /// Best individual seen under each configured node-count cap,
    /// parallel to `SrConfig::length_caps`.
    pub capped: Vec<Option<CappedBest>>,
    /// Loss/term-count front (polynomial function set only).
    pub pareto: Vec<ParetoEntry>,
    pub generations_run: u64,
}

struct Breeder<'a> {
    ops: &'static [Op],
    arity: usize,
    config: &'a SrConfig,
    weights: Vec<f64>,
}

impl Breeder<'_> {
    fn random_terminal<R: Rng>(&self, rng: &mut R) -> Tok {
        let slot = rng.random_range(0..=self.arity);
        if slot < self.arity {
            Tok::Var(slot)
        } else {
            let (lo, hi) = self.config.const_range;
            Tok::Const(if lo == hi { lo } else { rng.random_range(lo..hi) })
        }
    }

    fn random_op<R: Rng>(&self, rng: &mut R) -> Op {
        self.ops[rng.random_range(0..self.ops.len())]
    }

    fn grow<R: Rng>(&self, depth: usize, out: &mut Genome, rng: &mut R) {
        let n_terms = (self.arity + 1) as f64;
        let p_func = self.ops.len() as f64 / (self.ops.len() as f64 + n_terms);
        if depth == 0 || rng.random::<f64>() >= p_func {
            out.push(self.random_terminal(rng));
            return;
        }
        out.push(Tok::Op(self.random_op(rng)));
        self.grow(depth - 1, out, rng);
        self.grow(depth - 1, out, rng);
    }

    fn full<R: Rng>(&self, depth: usize, out: &mut Genome, rng: &mut R) {
        if depth == 0 {
            out.push(self.random_terminal(rng));
            return;
        }
        out.push(Tok::Op(self.random_op(rng)));
        self.full(depth - 1, out, rng);
        self.full(depth - 1, out, rng);
    }

    fn init_tree<R: Rng>(&self, rng: &mut R) -> Genome {
        let depth = rng.random_range(self.config.init_depth.0..=self.config.init_depth.1);
        let mut out = Genome::new();
        if rng.random::<bool>() {
            self.grow(depth, &mut out, rng);
        } else {
            self.full(depth, &mut out, rng);
        }
        out
    }

    /// Node index in preorder, function nodes weighted 0.9, leaves 0.1.
    fn pick_node<R: Rng>(&mut self, g: &[Tok], rng: &mut R) -> usize {
        self.weights.clear();
        for tok in g {
            self.weights.push(if matches!(tok, Tok::Op(_)) { 0.9 } else { 0.1 });
        }
        let total: f64 = self.weights.iter().sum();
        let mut r = rng.random::<f64>() * total;
        for (idx, w) in self.weights.iter().enumerate() {
            r -= w;
            if r <= 0.0 {
                return idx;
            }
        }
        self.weights.len() - 1
    }

    fn splice(parent: &[Tok], at: usize, repl: &[Tok]) -> Genome {
        let end = subtree_end(parent, at);
        let mut child = Genome::with_capacity(parent.len() - (end - at) + repl.len());
        child.extend_from_slice(&parent[..at]);
        child.extend_from_slice(repl);
        child.extend_from_slice(&parent[end..]);
        child
    }

    fn crossover<R: Rng>(&mut self, parent: &[Tok], donor: &[Tok], rng: &mut R) -> Genome {
        let at = self.pick_node(parent, rng);
        let from = self.pick_node(donor, rng);
        Self::splice(parent, at, &donor[from..subtree_end(donor, from)])
    }

    fn subtree_mutation<R: Rng>(&mut self, parent: &[Tok], rng: &mut R) -> Genome {
        let at = self.pick_node(parent, rng);
        let fresh = self.init_tree(rng);
        Self::splice(parent, at, &fresh)
    }

    fn hoist_mutation<R: Rng>(&mut self, parent: &[Tok], rng: &mut R) -> Genome {
        let at = self.pick_node(parent, rng);
        let sub = &parent[at..subtree_end(parent, at)];
        let inner = self.pick_node(sub, rng);
        let hoisted = &sub[inner..subtree_end(sub, inner)];
        // sub borrows parent, so assemble directly
        let end = at + sub.len();
        let mut child = Genome::with_capacity(parent.len() - sub.len() + hoisted.len());
        child.extend_from_slice(&parent[..at]);
        child.extend_from_slice(hoisted);
        child.extend_from_slice(&parent[end..]);
        child
    }

    fn point_mutation<R: Rng>(&self, parent: &[Tok], rng: &mut R) -> Genome {
        parent
            .iter()
            .map(|&tok| match tok {
                Tok::Op(op) => {
                    if rng.random::<f64>() < self.config.point_replace_prob {
                        Tok::Op(self.random_op(rng))
                    } else {
                        Tok::Op(op)
                    }
                }
                leaf => {
                    if rng.random::<f64>() < self.config.point_replace_prob {
                        self.random_terminal(rng)
                    } else {
                        leaf
                    }
                }
            })
            .collect()
    }
}

/// Run the genetic programming engine over the dataset. Generational with
/// one elite, crossover plus three mutations, reproduction remainder, and
/// children over the depth limit fall back to reproducing their parent.
pub fn evolve(ds: &SrDataset, config: &SrConfig) -> Result<SrRunResult> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut breeder = Breeder {
        ops: config.function_set.ops(),
        arity: ds.arity(),
        config,
        weights: Vec::new(),
    };

    let mut pop: Vec<Genome> =
        (0..config.population).map(|_| breeder.init_tree(&mut rng)).collect();
    let mut errors: Vec<Vec<f64>> = vec![Vec::new(); config.population];
    let mut losses = vec![0.0f64; config.population];
    let mut evaluator = PopEvaluator::new(ds.n_cases());

    let mut best: Option<(Genome, f64)> = None;
    let mut capped: Vec<Option<CappedBest>> = vec![None; config.length_caps.len()];
    let mut pareto: Vec<ParetoEntry> = Vec::new();
    let mut generations_run = 0;

    let trace = std::env::var_os("SR_TRACE").is_some();
    for gen in 0..config.generations.max(1) {
        generations_run = gen + 1;
        let t0 = std::time::Instant::now();
        evaluator.stat_nodes = 0;
        evaluator.stat_miss = 0;
        evaluator.eval_population(&pop, ds, &mut errors);
        let t_eval = t0.elapsed();
        for i in 0..config.population {
            losses[i] = errors[i].iter().sum::<f64>() / ds.n_cases() as f64;
        }
        let mut bog = 0;
        for i in 1..config.population {
            if losses[i] < losses[bog] {
                bog = i;
            }
        }

        if best.as_ref().map_or(true, |(_, l)| losses[bog] < *l) {
            best = Some((pop[bog].clone(), losses[bog]));
        }
        for (slot, &cap) in capped.iter_mut().zip(&config.length_caps) {
            for (i, ind) in pop.iter().enumerate() {
                if ind.len() < cap && slot.as_ref().map_or(true, |c| losses[i] < c.loss) {
                    *slot = Some(CappedBest { expr: to_expr(ind), loss: losses[i] });
                }
            }
        }
        let t1 = std::time::Instant::now();
        if config.function_set == FunctionSet::Polynomial {
            let bog_expr = to_expr(&pop[bog]);
            if let Ok(terms) = crate::sr::expr::term_set(&bog_expr, ds.arity()) {
                pareto_update(
                    &mut pareto,
                    ParetoEntry { expr: bog_expr, loss: losses[bog], terms },
                );
            }
        }
        let t_terms = t1.elapsed();

        let done = config
            .stop_below
            .map_or(false, |t| best.as_ref().map_or(false, |(_, l)| *l < t));
        if done || gen + 1 == config.generations.max(1) {
            if trace {
                eprintln!("gen {gen} eval {t_eval:?} terms {t_terms:?} (final)");
            }
            break;
        }

        let t2 = std::time::Instant::now();
        let mut picker = Picker::new(&errors, config.dalex_sigma);
        let mut next = Vec::with_capacity(config.population);
        next.push(pop[bog].clone());
        let c1 = config.p_crossover;
        let c2 = c1 + config.p_subtree;
        let c3 = c2 + config.p_hoist;
        let c4 = c3 + config.p_point;
        while next.len() < config.population {
            let r = rng.random::<f64>();
            let parent = &pop[picker.pick(&mut rng)];
            let child = if r < c1 {
                let donor = &pop[picker.pick(&mut rng)];
                breeder.crossover(parent, donor, &mut rng)
            } else if r < c2 {
                breeder.subtree_mutation(parent, &mut rng)
            } else if r < c3 {
                breeder.hoist_mutation(parent, &mut rng)
            } else if r < c4 {
                breeder.point_mutation(parent, &mut rng)
            } else {
                parent.clone()
            };
            if genome_depth(&child) > config.max_depth {
                next.push(parent.clone());
            } else {
                next.push(child);
            }
        }
        pop = next;
        if trace {
            let tokens: usize = pop.iter().map(|g| g.len()).sum();
            eprintln!(
                "gen {gen} eval {t_eval:?} terms {t_terms:?} breed {:?} tokens {tokens} eval_nodes {} miss {} reps {} fallbacks {}",
                t2.elapsed(),
                evaluator.stat_nodes,
                evaluator.stat_miss,
                picker.reps.len(),
                picker.fallbacks,
            );
        }
    }

    let (best, best_loss) = best.expect("at least one generation ran");
    Ok(SrRunResult { best: to_expr(&best), best_loss, capped, pareto, generations_run })
}

/// Fraction of collected small programs that mention each variable. Each
/// run contributes its per-cap best individuals, deduplicated within the
/// run, so ten runs with three caps pool at most thirty programs.
pub fn variable_frequency(results: &[SrRunResult], arity: usize) -> Vec<f64> {
    let mut pool: Vec<&Expr> = Vec::new();
    for run in results {
        let mut seen = BTreeSet::new();
        for capped in run.capped.iter().flatten() {
            if seen.insert(capped.expr.to_prefix()) {
                pool.push(&capped.expr);
            }
        }
    }
    let mut freq = vec![0.0; arity];
    if pool.is_empty() {
        return freq;
    }
    for expr in &pool {
        for (v, slot) in freq.iter_mut().enumerate() {
            if expr.contains_var(v) {
                *slot += 1.0;
            }
        }
    }
    for slot in freq.iter_mut() {
        *slot /= pool.len() as f64;
    }
    freq
}
