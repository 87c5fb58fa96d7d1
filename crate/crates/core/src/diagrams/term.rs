//! Typed diagram terms and the symbolic operations on them: resolvent
//! derivatives and the renormalization (underline) of H-insertions.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};
use crate::linalg::C64;

/// Vertex label. Free labels are chosen at evaluation time; every other label
/// occurring in a term is summed over 0..N.
pub type Label = &'static str;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Factor {
    /// G_ij (blue) or conj(G)_ij (red).
    G { i: Label, j: Label, conj: bool },
    /// G_vv - m, or its conjugate.
    Delta { v: Label, conj: bool },
    /// S_ij (black waved edge).
    S { i: Label, j: Label },
    /// S^{1/2}_ij.
    SHalf { i: Label, j: Label },
    /// (B_s)_ij (blue waved edge).
    B { i: Label, j: Label },
    /// [{Id + (t-s)Θ_t} S^{1/2}]_ij (double edge).
    P { i: Label, j: Label },
    /// (Θ_t)_ij.
    Theta { i: Label, j: Label },
    /// (H_s)_ij.
    H { i: Label, j: Label },
}

impl Factor {
    pub fn g(i: Label, j: Label) -> Self {
        Factor::G { i, j, conj: false }
    }

    pub fn gc(i: Label, j: Label) -> Self {
        Factor::G { i, j, conj: true }
    }

    pub fn delta(v: Label) -> Self {
        Factor::Delta { v, conj: false }
    }

    pub fn labels(&self) -> Vec<Label> {
        match *self {
            Factor::Delta { v, .. } => vec![v],
            Factor::G { i, j, .. }
            | Factor::S { i, j }
            | Factor::SHalf { i, j }
            | Factor::B { i, j }
            | Factor::P { i, j }
            | Factor::Theta { i, j }
            | Factor::H { i, j } => vec![i, j],
        }
    }

    pub fn is_random(&self) -> bool {
        matches!(self, Factor::G { .. } | Factor::Delta { .. } | Factor::H { .. })
    }

    /// Complex conjugate of the factor (deterministic real factors are fixed;
    /// B and H are handled by the caller since conj(B) is not a B edge).
    fn conjugate(&self) -> Option<Self> {
        match *self {
            Factor::G { i, j, conj } => Some(Factor::G { i, j, conj: !conj }),
            Factor::Delta { v, conj } => Some(Factor::Delta { v, conj: !conj }),
            Factor::H { i, j } => Some(Factor::H { i: j, j: i }),
            Factor::S { .. } | Factor::SHalf { .. } | Factor::P { .. } | Factor::Theta { .. } => Some(*self),
            Factor::B { .. } => None,
        }
    }

    /// ∂_{H_pq} of this factor as a sum of products (coefficient, factors).
    fn derivative(&self, p: Label, q: Label) -> Result<Vec<(f64, Vec<Factor>)>> {
        Ok(match *self {
            Factor::G { i, j, conj: false } => vec![(-1.0, vec![Factor::g(i, p), Factor::g(q, j)])],
            Factor::G { i, j, conj: true } => vec![(-1.0, vec![Factor::gc(i, q), Factor::gc(p, j)])],
            Factor::Delta { v, conj: false } => vec![(-1.0, vec![Factor::g(v, p), Factor::g(q, v)])],
            Factor::Delta { v, conj: true } => vec![(-1.0, vec![Factor::gc(v, q), Factor::gc(p, v)])],
            Factor::H { .. } => {
                return Err(Error::Structural("cannot differentiate an explicit H factor".into()));
            }
            _ => vec![],
        })
    }
}

impl fmt::Display for Factor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Factor::G { i, j, conj: false } => write!(f, "G[{i},{j}]"),
            Factor::G { i, j, conj: true } => write!(f, "Gc[{i},{j}]"),
            Factor::Delta { v, conj: false } => write!(f, "D[{v}]"),
            Factor::Delta { v, conj: true } => write!(f, "Dc[{v}]"),
            Factor::S { i, j } => write!(f, "S[{i},{j}]"),
            Factor::SHalf { i, j } => write!(f, "R[{i},{j}]"),
            Factor::B { i, j } => write!(f, "B[{i},{j}]"),
            Factor::P { i, j } => write!(f, "P[{i},{j}]"),
            Factor::Theta { i, j } => write!(f, "Th[{i},{j}]"),
            Factor::H { i, j } => write!(f, "H[{i},{j}]"),
        }
    }
}

/// Symbolic prefactor c · m^a · conj(m)^b · s^k.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Coeff {
    pub c: C64,
    pub m_pow: i32,
    pub mbar_pow: i32,
    pub s_pow: i32,
}

impl Coeff {
    pub fn one() -> Self {
        Coeff { c: C64::new(1.0, 0.0), m_pow: 0, mbar_pow: 0, s_pow: 0 }
    }

    pub fn value(&self, m: C64, s: f64) -> C64 {
        let mut v = self.c;
        if self.m_pow != 0 {
            v *= m.powi(self.m_pow);
        }
        if self.mbar_pow != 0 {
            v *= m.conj().powi(self.mbar_pow);
        }
        if self.s_pow != 0 {
            v *= s.powi(self.s_pow);
        }
        v
    }

    pub fn scale(mut self, c: f64) -> Self {
        self.c *= c;
        self
    }

    pub fn times_m(mut self) -> Self {
        self.m_pow += 1;
        self
    }

    pub fn times_s(mut self) -> Self {
        self.s_pow += 1;
        self
    }

    pub fn times_sm(self) -> Self {
        self.times_s().times_m()
    }

    fn conjugate(self) -> Self {
        Coeff { c: self.c.conj(), m_pow: self.mbar_pow, mbar_pow: self.m_pow, s_pow: self.s_pow }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Term {
    pub coeff: Coeff,
    pub factors: Vec<Factor>,
}

impl Term {
    pub fn new(factors: Vec<Factor>) -> Self {
        Term { coeff: Coeff::one(), factors }
    }

    pub fn with_coeff(mut self, coeff: Coeff) -> Self {
        self.coeff = coeff;
        self
    }

    pub fn scaled(mut self, c: f64) -> Self {
        self.coeff = self.coeff.scale(c);
        self
    }

    pub fn sm(mut self) -> Self {
        self.coeff = self.coeff.times_sm();
        self
    }

    pub fn m(mut self) -> Self {
        self.coeff = self.coeff.times_m();
        self
    }

    pub fn times(mut self, extra: impl IntoIterator<Item = Factor>) -> Self {
        self.factors.extend(extra);
        self
    }

    pub fn labels(&self) -> Vec<Label> {
        let mut out: Vec<Label> = Vec::new();
        for f in &self.factors {
            for l in f.labels() {
                if !out.contains(&l) {
                    out.push(l);
                }
            }
        }
        out
    }

    pub fn uses(&self, l: Label) -> bool {
        self.factors.iter().any(|f| f.labels().contains(&l))
    }

    /// Occurrence count of every label.
    pub fn degrees(&self) -> BTreeMap<Label, usize> {
        let mut d = BTreeMap::new();
        for f in &self.factors {
            for l in f.labels() {
                *d.entry(l).or_insert(0) += 1;
            }
        }
        d
    }

    /// Rename a label everywhere.
    pub fn rename(&self, from: Label, to: Label) -> Self {
        let r = |l: Label| if l == from { to } else { l };
        let factors = self
            .factors
            .iter()
            .map(|f| match *f {
                Factor::G { i, j, conj } => Factor::G { i: r(i), j: r(j), conj },
                Factor::Delta { v, conj } => Factor::Delta { v: r(v), conj },
                Factor::S { i, j } => Factor::S { i: r(i), j: r(j) },
                Factor::SHalf { i, j } => Factor::SHalf { i: r(i), j: r(j) },
                Factor::B { i, j } => Factor::B { i: r(i), j: r(j) },
                Factor::P { i, j } => Factor::P { i: r(i), j: r(j) },
                Factor::Theta { i, j } => Factor::Theta { i: r(i), j: r(j) },
                Factor::H { i, j } => Factor::H { i: r(i), j: r(j) },
            })
            .collect();
        Term { coeff: self.coeff, factors }
    }

    /// Complex conjugate term. Fails on B edges, whose conjugate has no
    /// factor type of its own.
    pub fn conjugate(&self) -> Result<Self> {
        let factors = self
            .factors
            .iter()
            .map(|f| f.conjugate().ok_or_else(|| Error::Structural("conjugate of a B edge".into())))
            .collect::<Result<Vec<_>>>()?;
        Ok(Term { coeff: self.coeff.conjugate(), factors })
    }

    pub fn h_count(&self) -> usize {
        self.factors.iter().filter(|f| matches!(f, Factor::H { .. })).count()
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:+.3}", self.coeff.c)?;
        if self.coeff.s_pow != 0 {
            write!(f, " s^{}", self.coeff.s_pow)?;
        }
        if self.coeff.m_pow != 0 {
            write!(f, " m^{}", self.coeff.m_pow)?;
        }
        if self.coeff.mbar_pow != 0 {
            write!(f, " mbar^{}", self.coeff.mbar_pow)?;
        }
        write!(f, ")")?;
        for x in &self.factors {
            write!(f, " {x}")?;
        }
        Ok(())
    }
}

/// ∂_{H_pq} of a product by the Leibniz rule.
pub fn derivative(term: &Term, p: Label, q: Label) -> Result<Vec<Term>> {
    let mut out = Vec::new();
    for (k, f) in term.factors.iter().enumerate() {
        for (c, replacement) in f.derivative(p, q)? {
            let mut factors = Vec::with_capacity(term.factors.len() + 1);
            factors.extend_from_slice(&term.factors[..k]);
            factors.extend(replacement);
            factors.extend_from_slice(&term.factors[k + 1..]);
            out.push(Term { coeff: term.coeff.scale(c), factors });
        }
    }
    Ok(out)
}

pub fn derivative_sum(terms: &[Term], p: Label, q: Label) -> Result<Vec<Term>> {
    let mut out = Vec::new();
    for t in terms {
        out.extend(derivative(t, p, q)?);
    }
    Ok(out)
}

/// underline(H_pq f) = H_pq f - s S_pq ∂_{H_qp} f, for a term with exactly one
/// H factor.
pub fn renormalize(term: &Term) -> Result<Vec<Term>> {
    if term.h_count() != 1 {
        return Err(Error::Structural(format!("renormalization needs exactly one H factor, found {}", term.h_count())));
    }
    let k = term.factors.iter().position(|f| matches!(f, Factor::H { .. })).unwrap();
    let (p, q) = match term.factors[k] {
        Factor::H { i, j } => (i, j),
        _ => unreachable!(),
    };
    let mut rest = term.clone();
    rest.factors.remove(k);
    let mut out = vec![term.clone()];
    for d in derivative(&rest, q, p)? {
        let mut t = d.times([Factor::S { i: p, j: q }]);
        t.coeff = t.coeff.times_s().scale(-1.0);
        out.push(t);
    }
    Ok(out)
}

pub fn renormalize_sum(terms: &[Term]) -> Result<Vec<Term>> {
    let mut out = Vec::new();
    for t in terms {
        out.extend(renormalize(t)?);
    }
    Ok(out)
}

pub fn scale_all(terms: Vec<Term>, c: f64) -> Vec<Term> {
    terms.into_iter().map(|t| t.scaled(c)).collect()
}

pub fn map_coeff(terms: Vec<Term>, f: impl Fn(Coeff) -> Coeff) -> Vec<Term> {
    terms
        .into_iter()
        .map(|mut t| {
            t.coeff = f(t.coeff);
            t
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivative_of_g_edges() {
        let t = Term::new(vec![Factor::g("x", "y"), Factor::gc("x", "y")]);
        let d = derivative(&t, "p", "q").unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d[0].factors, vec![Factor::g("x", "p"), Factor::g("q", "y"), Factor::gc("x", "y")]);
        assert_eq!(d[1].factors, vec![Factor::g("x", "y"), Factor::gc("x", "q"), Factor::gc("p", "y")]);
        assert!(d.iter().all(|t| t.coeff.c == C64::new(-1.0, 0.0)));
    }

    #[test]
    fn deterministic_factors_have_no_derivative() {
        let t = Term::new(vec![Factor::S { i: "a", j: "b" }, Factor::B { i: "b", j: "c" }]);
        assert!(derivative(&t, "p", "q").unwrap().is_empty());
    }

    #[test]
    fn renormalize_needs_one_h() {
        let t = Term::new(vec![Factor::g("x", "y")]);
        assert!(renormalize(&t).is_err());
        let t = Term::new(vec![Factor::H { i: "a", j: "b" }]);
        // f = 1 has no counterterm.
        assert_eq!(renormalize(&t).unwrap().len(), 1);
        let t = Term::new(vec![Factor::H { i: "a", j: "b" }, Factor::g("b", "a")]);
        let r = renormalize(&t).unwrap();
        assert_eq!(r.len(), 2);
        assert_eq!(r[1].factors, vec![Factor::g("b", "b"), Factor::g("a", "a"), Factor::S { i: "a", j: "b" }]);
        assert_eq!(r[1].coeff.s_pow, 1);
    }

    #[test]
    fn rename_and_conjugate() {
        let t = Term::new(vec![Factor::g("x", "y"), Factor::delta("y")]).sm();
        let r = t.rename("y", "z");
        assert_eq!(r.factors, vec![Factor::g("x", "z"), Factor::delta("z")]);
        let c = t.conjugate().unwrap();
        assert_eq!(c.factors, vec![Factor::gc("x", "y"), Factor::Delta { v: "y", conj: true }]);
        assert_eq!((c.coeff.m_pow, c.coeff.mbar_pow), (0, 1));
        assert!(Term::new(vec![Factor::B { i: "a", j: "b" }]).conjugate().is_err());
    }
}
