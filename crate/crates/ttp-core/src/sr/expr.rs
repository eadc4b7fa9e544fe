use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::error::{Result, TtpError};

/// Divisors this close to zero make protected division return 1.
pub const PROTECTED_DIV_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    Add,
    Sub,
    Mul,
    Div,
}

impl Op {
    pub fn token(self) -> &'static str {
        match self {
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Div => "div",
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Op::Add => "+",
            Op::Sub => "-",
            Op::Mul => "*",
            Op::Div => "/",
        }
    }

    pub fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            Op::Add => a + b,
            Op::Sub => a - b,
            Op::Mul => a * b,
            Op::Div => {
                if b.abs() < PROTECTED_DIV_EPS {
                    1.0
                } else {
                    a / b
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(usize),
    Bin(Op, Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn node_count(&self) -> usize {
        match self {
            Expr::Const(_) | Expr::Var(_) => 1,
            Expr::Bin(_, a, b) => 1 + a.node_count() + b.node_count(),
        }
    }

    /// A lone terminal has depth 0.
    pub fn depth(&self) -> usize {
        match self {
            Expr::Const(_) | Expr::Var(_) => 0,
            Expr::Bin(_, a, b) => 1 + a.depth().max(b.depth()),
        }
    }

    pub fn contains_var(&self, var: usize) -> bool {
        match self {
            Expr::Const(_) => false,
            Expr::Var(v) => *v == var,
            Expr::Bin(_, a, b) => a.contains_var(var) || b.contains_var(var),
        }
    }

    pub fn eval_row(&self, row: &[f64]) -> f64 {
        match self {
            Expr::Const(c) => *c,
            Expr::Var(v) => row[*v],
            Expr::Bin(op, a, b) => op.apply(a.eval_row(row), b.eval_row(row)),
        }
    }

    /// Space-separated prefix tokens, the model file encoding.
    pub fn to_prefix(&self) -> String {
        let mut out = String::new();
        self.write_prefix(&mut out);
        out
    }

    fn write_prefix(&self, out: &mut String) {
        if !out.is_empty() {
            out.push(' ');
        }
        match self {
            Expr::Const(c) => out.push_str(&format!("{c}")),
            Expr::Var(v) => out.push_str(&format!("x{v}")),
            Expr::Bin(op, a, b) => {
                out.push_str(op.token());
                a.write_prefix(out);
                b.write_prefix(out);
            }
        }
    }

    pub fn parse_prefix(text: &str) -> Result<Expr> {
        let mut tokens = text.split_whitespace();
        let expr = Expr::parse_tokens(&mut tokens)?;
        if let Some(extra) = tokens.next() {
            return Err(TtpError::Parse {
                line: 1,
                msg: format!("trailing token {extra:?} after expression"),
            });
        }
        Ok(expr)
    }

    fn parse_tokens<'a>(tokens: &mut impl Iterator<Item = &'a str>) -> Result<Expr> {
        let tok = tokens.next().ok_or_else(|| TtpError::Parse {
            line: 1,
            msg: "unexpected end of expression".into(),
        })?;
        let op = match tok {
            "add" => Some(Op::Add),
            "sub" => Some(Op::Sub),
            "mul" => Some(Op::Mul),
            "div" => Some(Op::Div),
            _ => None,
        };
        if let Some(op) = op {
            let a = Expr::parse_tokens(tokens)?;
            let b = Expr::parse_tokens(tokens)?;
            return Ok(Expr::Bin(op, Box::new(a), Box::new(b)));
        }
        if let Some(rest) = tok.strip_prefix('x') {
            if let Ok(v) = rest.parse::<usize>() {
                return Ok(Expr::Var(v));
            }
        }
        tok.parse::<f64>().map(Expr::Const).map_err(|_| TtpError::Parse {
            line: 1,
            msg: format!("bad expression token {tok:?}"),
        })
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => write!(f, "{c}"),
            Expr::Var(v) => write!(f, "x{v}"),
            Expr::Bin(op, a, b) => write!(f, "({a} {} {b})", op.symbol()),
        }
    }
}

/// Expand a {+,-,*} expression into monomials: exponent vector (one slot
/// per variable) to coefficient. Like terms merge; coefficients within
/// 1e-12 of zero drop out. Division cannot be expanded.
pub fn expand_to_monomials(expr: &Expr, arity: usize) -> Result<BTreeMap<Vec<u32>, f64>> {
    let mut map = expand_inner(expr, arity)?;
    map.retain(|_, c| c.abs() > 1e-12);
    Ok(map)
}

fn expand_inner(expr: &Expr, arity: usize) -> Result<BTreeMap<Vec<u32>, f64>> {
    let mut out = BTreeMap::new();
    match expr {
        Expr::Const(c) => {
            out.insert(vec![0; arity], *c);
        }
        Expr::Var(v) => {
            if *v >= arity {
                return Err(TtpError::InvalidArgument(format!(
                    "expression uses x{v} but arity is {arity}"
                )));
            }
            let mut key = vec![0; arity];
            key[*v] = 1;
            out.insert(key, 1.0);
        }
        Expr::Bin(Op::Add, a, b) | Expr::Bin(Op::Sub, a, b) => {
            let sign = if matches!(expr, Expr::Bin(Op::Sub, _, _)) { -1.0 } else { 1.0 };
            out = expand_inner(a, arity)?;
            for (key, coeff) in expand_inner(b, arity)? {
                *out.entry(key).or_insert(0.0) += sign * coeff;
            }
        }
        Expr::Bin(Op::Mul, a, b) => {
            let left = expand_inner(a, arity)?;
            let right = expand_inner(b, arity)?;
            for (ka, ca) in &left {
                for (kb, cb) in &right {
                    let key: Vec<u32> = ka.iter().zip(kb).map(|(e, f)| e + f).collect();
                    *out.entry(key).or_insert(0.0) += ca * cb;
                }
            }
        }
        Expr::Bin(Op::Div, _, _) => {
            return Err(TtpError::UnsupportedExpansion(expr.to_string()));
        }
    }
    Ok(out)
}

/// The set of monomials present, coefficients stripped.
pub fn term_set(expr: &Expr, arity: usize) -> Result<BTreeSet<Vec<u32>>> {
    Ok(expand_to_monomials(expr, arity)?.into_keys().collect())
}

/// Human name for an exponent vector: "1", "x0", "x0^2*x1".
pub fn monomial_name(key: &[u32]) -> String {
    let mut parts = Vec::new();
    for (v, &e) in key.iter().enumerate() {
        match e {
            0 => {}
            1 => parts.push(format!("x{v}")),
            _ => parts.push(format!("x{v}^{e}")),
        }
    }
    if parts.is_empty() {
        "1".to_string()
    } else {
        parts.join("*")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bin(op: Op, a: Expr, b: Expr) -> Expr {
        Expr::Bin(op, Box::new(a), Box::new(b))
    }

    #[test]
    fn protected_division() {
        assert_eq!(Op::Div.apply(4.0, 2.0), 2.0);
        assert_eq!(Op::Div.apply(5.0, 0.0), 1.0);
        assert_eq!(Op::Div.apply(5.0, 1e-7), 1.0);
        assert_eq!(Op::Div.apply(5.0, -1e-7), 1.0);
        assert_eq!(Op::Div.apply(1.0, 1e-6), 1e6);
    }

    #[test]
    fn eval_and_counts() {
        // (x0 + 0.5) * x1
        let e = bin(Op::Mul, bin(Op::Add, Expr::Var(0), Expr::Const(0.5)), Expr::Var(1));
        assert_eq!(e.eval_row(&[1.5, 3.0]), 6.0);
        assert_eq!(e.node_count(), 5);
        assert_eq!(e.depth(), 2);
        assert!(e.contains_var(0));
        assert!(e.contains_var(1));
        assert!(!e.contains_var(2));
    }

    #[test]
    fn prefix_round_trip() {
        let e = bin(
            Op::Div,
            bin(Op::Sub, Expr::Var(7), Expr::Const(-0.125)),
            bin(Op::Mul, Expr::Const(3.5e-2), Expr::Var(0)),
        );
        let text = e.to_prefix();
        assert_eq!(text, "div sub x7 -0.125 mul 0.035 x0");
        assert_eq!(Expr::parse_prefix(&text).unwrap(), e);
    }

    #[test]
    fn parse_rejects_garbage() {
        assert!(Expr::parse_prefix("add x0").is_err());
        assert!(Expr::parse_prefix("add x0 x1 x2").is_err());
        assert!(Expr::parse_prefix("frob x0 x1").is_err());
    }

    #[test]
    fn expansion_merges_like_terms() {
        // (x0 + 1) * (x0 + 1) = x0^2 + 2*x0 + 1
        let base = bin(Op::Add, Expr::Var(0), Expr::Const(1.0));
        let sq = bin(Op::Mul, base.clone(), base);
        let map = expand_to_monomials(&sq, 2).unwrap();
        assert_eq!(map.len(), 3);
        assert_eq!(map[&vec![0, 0]], 1.0);
        assert_eq!(map[&vec![1, 0]], 2.0);
        assert_eq!(map[&vec![2, 0]], 1.0);
    }

    #[test]
    fn expansion_cancels_terms() {
        // (x0 + x1) - x1 = x0
        let e = bin(Op::Sub, bin(Op::Add, Expr::Var(0), Expr::Var(1)), Expr::Var(1));
        let terms = term_set(&e, 2).unwrap();
        assert_eq!(terms.len(), 1);
        assert!(terms.contains(&vec![1, 0]));
    }

    #[test]
    fn expansion_refuses_division() {
        let e = bin(Op::Div, Expr::Var(0), Expr::Var(1));
        assert!(matches!(
            expand_to_monomials(&e, 2),
            Err(TtpError::UnsupportedExpansion(_))
        ));
    }

    #[test]
    fn monomial_names() {
        assert_eq!(monomial_name(&[0, 0]), "1");
        assert_eq!(monomial_name(&[1, 0]), "x0");
        assert_eq!(monomial_name(&[2, 1]), "x0^2*x1");
    }

    #[test]
    fn zero_coefficients_drop() {
        // 0 * x0 expands to nothing
        let e = bin(Op::Mul, Expr::Const(0.0), Expr::Var(0));
        assert!(expand_to_monomials(&e, 1).unwrap().is_empty());
    }
}
