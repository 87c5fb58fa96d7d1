//! Numerical evaluation of diagram terms by pairwise tensor contraction.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::linalg::{self, CMat, C64};
use crate::semicircle::SpectralPoint;
use crate::torus::{self, CirculantOperator, ComplexCirculant};

use super::term::{Factor, Label, Term};

/// Everything a diagram can reference at one time s: the resolvent
/// G = (H - w_s)^{-1} with w_s = -1/m - s m, and the deterministic edges.
#[derive(Clone, Debug)]
pub struct EvalContext {
    pub h: CMat,
    pub g: CMat,
    pub m: C64,
    pub s: f64,
    pub t: f64,
    pub w: C64,
    pub s_op: CirculantOperator,
    pub s_half: CirculantOperator,
    pub b: ComplexCirculant,
    pub theta: CirculantOperator,
    pub p: CirculantOperator,
}

impl EvalContext {
    /// Context for a given Hermitian H at time s, with double edges built
    /// from Θ_t.
    pub fn new(h: CMat, s_op: &CirculantOperator, point: &SpectralPoint, s: f64, t: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&s) || !(0.0..=1.0).contains(&t) {
            return Err(Error::Domain(format!("times s = {s}, t = {t} must lie in [0, 1]")));
        }
        if h.nrows() != s_op.n() || h.ncols() != s_op.n() {
            return Err(Error::Domain("H and S dimensions differ".into()));
        }
        let m = point.m;
        let w = -1.0 / m - m * s;
        let g = linalg::shifted_inverse(&h, w)?;
        let s_half = torus::sqrt_profile(s_op)?;
        let b = torus::b_matrix(s_op, m, s)?;
        let theta = torus::diffusion_profile(s_op, m, t)?;
        let p = torus::propagator(&theta, t, s).compose(&s_half);
        Ok(EvalContext { h, g, m, s, t, w, s_op: s_op.clone(), s_half, b, theta, p })
    }

    pub fn n(&self) -> usize {
        self.g.nrows()
    }

    /// Max |(H - w)G - Id|.
    pub fn resolvent_residual(&self) -> f64 {
        linalg::resolvent_residual(&self.h, self.w, &self.g)
    }

    fn value(&self, f: &Factor, i: usize, j: usize) -> C64 {
        match *f {
            Factor::G { conj: false, .. } => self.g[(i, j)],
            Factor::G { conj: true, .. } => self.g[(i, j)].conj(),
            Factor::Delta { conj: false, .. } => self.g[(i, i)] - self.m,
            Factor::Delta { conj: true, .. } => (self.g[(i, i)] - self.m).conj(),
            Factor::S { .. } => C64::new(self.s_op.entry(i, j), 0.0),
            Factor::SHalf { .. } => C64::new(self.s_half.entry(i, j), 0.0),
            Factor::B { .. } => self.b.entry(i, j),
            Factor::P { .. } => C64::new(self.p.entry(i, j), 0.0),
            Factor::Theta { .. } => C64::new(self.theta.entry(i, j), 0.0),
            Factor::H { .. } => self.h[(i, j)],
        }
    }
}

/// Dense tensor over distinct labels, row-major with the first label slowest.
#[derive(Clone, Debug)]
struct Tensor {
    labels: Vec<Label>,
    data: Vec<C64>,
}

impl Tensor {
    fn scalar(v: C64) -> Self {
        Tensor { labels: vec![], data: vec![v] }
    }
}

fn strides(labels: &[Label], n: usize) -> Vec<usize> {
    let mut s = vec![1; labels.len()];
    for k in (0..labels.len().saturating_sub(1)).rev() {
        s[k] = s[k + 1] * n;
    }
    s
}

fn factor_tensor(ctx: &EvalContext, f: &Factor, fixed: &BTreeMap<Label, usize>) -> Tensor {
    let n = ctx.n();
    let raw = f.labels();
    let mut labels: Vec<Label> = Vec::new();
    for l in &raw {
        if !fixed.contains_key(l) && !labels.contains(l) {
            labels.push(l);
        }
    }
    let size = n.pow(labels.len() as u32);
    let mut data = Vec::with_capacity(size);
    let mut idx = vec![0usize; labels.len()];
    for _ in 0..size {
        let pick = |l: Label| fixed.get(l).copied().unwrap_or_else(|| idx[labels.iter().position(|&x| x == l).unwrap()]);
        let i = pick(raw[0]);
        let j = if raw.len() > 1 { pick(raw[1]) } else { i };
        data.push(ctx.value(f, i, j));
        for k in (0..idx.len()).rev() {
            idx[k] += 1;
            if idx[k] < n {
                break;
            }
            idx[k] = 0;
        }
    }
    Tensor { labels, data }
}

/// Contract a and b, summing every label not in `keep`.
///
/// Labels split into batch (both sides, kept), inner (both sides, summed)
/// and outer (one side, kept); the product is a batch of matmuls.
fn contract(a: &Tensor, b: &Tensor, keep: &BTreeSet<Label>, n: usize) -> Tensor {
    let a = reduce_one_sided(a, b, keep, n);
    let b = reduce_one_sided(&b, &a, keep, n);
    let shared = |l: &Label, other: &Tensor| other.labels.contains(l);
    let batch: Vec<Label> = a.labels.iter().filter(|l| shared(l, &b) && keep.contains(*l)).cloned().collect();
    let inner: Vec<Label> = a.labels.iter().filter(|l| shared(l, &b) && !keep.contains(*l)).cloned().collect();
    let left: Vec<Label> = a.labels.iter().filter(|l| !shared(l, &b)).cloned().collect();
    let right: Vec<Label> = b.labels.iter().filter(|l| !shared(l, &a)).cloned().collect();
    let pa = permute(&a, &[batch.clone(), left.clone(), inner.clone()].concat(), n);
    let pb = permute(&b, &[batch.clone(), inner.clone(), right.clone()].concat(), n);
    let (nb, nl, ni, nr) = (n.pow(batch.len() as u32), n.pow(left.len() as u32), n.pow(inner.len() as u32), n.pow(right.len() as u32));
    let mut data = vec![C64::new(0.0, 0.0); nb * nl * nr];
    for k in 0..nb {
        let sa = &pa.data[k * nl * ni..(k + 1) * nl * ni];
        let sb = &pb.data[k * ni * nr..(k + 1) * ni * nr];
        let out = &mut data[k * nl * nr..(k + 1) * nl * nr];
        if nl * ni * nr <= 4096 {
            for i in 0..nl {
                for q in 0..ni {
                    let av = sa[i * ni + q];
                    for j in 0..nr {
                        out[i * nr + j] += av * sb[q * nr + j];
                    }
                }
            }
        } else {
            let ma = CMat::from_fn(nl, ni, |i, q| sa[i * ni + q]);
            let mb = CMat::from_fn(ni, nr, |q, j| sb[q * nr + j]);
            let mc = linalg::matmul(&ma, &mb);
            for i in 0..nl {
                for j in 0..nr {
                    out[i * nr + j] = mc[(i, j)];
                }
            }
        }
    }
    Tensor { labels: [batch, left, right].concat(), data }
}

/// Sum out the labels of `t` that are neither kept nor shared with `other`.
fn reduce_one_sided(t: &Tensor, other: &Tensor, keep: &BTreeSet<Label>, n: usize) -> Tensor {
    let lone: Vec<Label> = t.labels.iter().filter(|l| !keep.contains(*l) && !other.labels.contains(l)).cloned().collect();
    if lone.is_empty() {
        return t.clone();
    }
    let rest: Vec<Label> = t.labels.iter().filter(|l| !lone.contains(l)).cloned().collect();
    let p = permute(t, &[rest.clone(), lone.clone()].concat(), n);
    let inner = n.pow(lone.len() as u32);
    let data = p.data.chunks(inner).map(|c| c.iter().sum()).collect();
    Tensor { labels: rest, data }
}

/// Sum out labels of a single tensor that are not kept.
fn reduce(t: &Tensor, keep: &BTreeSet<Label>, n: usize) -> Tensor {
    reduce_one_sided(t, &Tensor::scalar(C64::new(1.0, 0.0)), keep, n)
}

fn permute(t: &Tensor, order: &[Label], n: usize) -> Tensor {
    if t.labels == order {
        return t.clone();
    }
    let st = strides(&t.labels, n);
    let w: Vec<usize> = order.iter().map(|l| st[t.labels.iter().position(|x| x == l).unwrap()]).collect();
    let size = n.pow(order.len() as u32);
    let mut data = Vec::with_capacity(size);
    let mut idx = vec![0usize; order.len()];
    for _ in 0..size {
        data.push(t.data[idx.iter().zip(&w).map(|(i, s)| i * s).sum::<usize>()]);
        for k in (0..idx.len()).rev() {
            idx[k] += 1;
            if idx[k] < n {
                break;
            }
            idx[k] = 0;
        }
    }
    Tensor { labels: order.to_vec(), data }
}

/// Check labels: every summed label must occur at least twice, and every
/// free or fixed label must actually occur.
pub fn validate(term: &Term, free: &[Label], fixed: &BTreeMap<Label, usize>) -> Result<()> {
    let deg = term.degrees();
    for l in free.iter().chain(fixed.keys()) {
        if !deg.contains_key(l) {
            return Err(Error::Structural(format!("label '{l}' is not used by the term {term}")));
        }
    }
    for (l, d) in &deg {
        if *d < 2 && !free.contains(l) && !fixed.contains_key(l) {
            return Err(Error::Structural(format!("dangling label '{l}' in {term}")));
        }
    }
    Ok(())
}

/// Evaluate a term as a tensor over the free labels (in the given order), all
/// other labels summed over 0..N except those pinned in `fixed`.
pub fn evaluate_tensor(term: &Term, ctx: &EvalContext, free: &[Label], fixed: &BTreeMap<Label, usize>) -> Result<Vec<C64>> {
    validate(term, free, fixed)?;
    let n = ctx.n();
    if let Some((l, &i)) = fixed.iter().find(|(_, &i)| i >= n) {
        return Err(Error::Domain(format!("fixed label '{l}' = {i} out of range 0..{n}")));
    }
    let coeff = term.coeff.value(ctx.m, ctx.s);
    let mut tensors: Vec<Tensor> = term.factors.iter().map(|f| factor_tensor(ctx, f, fixed)).collect();
    tensors.push(Tensor::scalar(coeff));
    let free_set: BTreeSet<Label> = free.iter().cloned().collect();
    while tensors.len() > 1 {
        // Greedy: the pair whose result has the fewest labels, then the
        // smallest joint label set.
        let mut best: Option<(usize, usize, usize, usize, BTreeSet<Label>)> = None;
        for i in 0..tensors.len() {
            for j in i + 1..tensors.len() {
                let mut keep = free_set.clone();
                for (k, t) in tensors.iter().enumerate() {
                    if k != i && k != j {
                        keep.extend(t.labels.iter().cloned());
                    }
                }
                let joint: BTreeSet<Label> = tensors[i].labels.iter().chain(&tensors[j].labels).cloned().collect();
                let out = joint.iter().filter(|l| keep.contains(*l)).count();
                let score = (out, joint.len());
                if best.as_ref().map_or(true, |b| score < (b.2, b.3)) {
                    best = Some((i, j, out, joint.len(), keep));
                }
            }
        }
        let (i, j, _, _, keep) = best.unwrap();
        let b = tensors.remove(j);
        let a = tensors.remove(i);
        tensors.push(contract(&a, &b, &keep, n));
    }
    let t = reduce(&tensors[0], &free_set, n);
    Ok(permute(&t, free, n).data)
}

pub fn evaluate_sum_tensor(terms: &[Term], ctx: &EvalContext, free: &[Label], fixed: &BTreeMap<Label, usize>) -> Result<Vec<C64>> {
    let n = ctx.n();
    let mut acc = vec![C64::new(0.0, 0.0); n.pow(free.len() as u32)];
    for t in terms {
        for (a, v) in acc.iter_mut().zip(evaluate_tensor(t, ctx, free, fixed)?) {
            *a += v;
        }
    }
    Ok(acc)
}

/// Value of a term with free labels a, b pinned to (ia, ib).
pub fn evaluate_diagram(term: &Term, ctx: &EvalContext, a: (Label, usize), b: (Label, usize)) -> Result<C64> {
    let fixed: BTreeMap<Label, usize> = [a, b].into_iter().collect();
    Ok(evaluate_tensor(term, ctx, &[], &fixed)?[0])
}

pub fn evaluate_sum(terms: &[Term], ctx: &EvalContext, fixed: &BTreeMap<Label, usize>) -> Result<C64> {
    Ok(evaluate_sum_tensor(terms, ctx, &[], fixed)?[0])
}

/// Matrix over free labels (a, b).
pub fn evaluate_matrix(terms: &[Term], ctx: &EvalContext, a: Label, b: Label) -> Result<CMat> {
    let n = ctx.n();
    let v = evaluate_sum_tensor(terms, ctx, &[a, b], &BTreeMap::new())?;
    Ok(CMat::from_fn(n, n, |i, j| v[i * n + j]))
}

/// Reference evaluator: explicit sum over every assignment of the summed
/// labels. Exponential in the label count; for oracles on tiny N only.
pub fn brute_force(term: &Term, ctx: &EvalContext, fixed: &BTreeMap<Label, usize>) -> Result<C64> {
    validate(term, &[], fixed)?;
    let n = ctx.n();
    let summed: Vec<Label> = term.labels().into_iter().filter(|l| !fixed.contains_key(l)).collect();
    let mut assign = fixed.clone();
    for l in &summed {
        assign.insert(l, 0);
    }
    let total = n.pow(summed.len() as u32);
    let mut acc = C64::new(0.0, 0.0);
    let mut idx = vec![0usize; summed.len()];
    for _ in 0..total {
        for (l, i) in summed.iter().zip(&idx) {
            assign.insert(l, *i);
        }
        let mut prod = C64::new(1.0, 0.0);
        for f in &term.factors {
            let ls = f.labels();
            let i = assign[ls[0]];
            let j = if ls.len() > 1 { assign[ls[1]] } else { i };
            prod *= ctx.value(f, i, j);
        }
        acc += prod;
        for k in (0..idx.len()).rev() {
            idx[k] += 1;
            if idx[k] < n {
                break;
            }
            idx[k] = 0;
        }
    }
    Ok(acc * term.coeff.value(ctx.m, ctx.s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::sample_band_matrix;
    use crate::torus::{build_variance_profile, ProfileSpec, Shape};

    fn ctx(n: usize, w: usize, seed: u64) -> EvalContext {
        let s = build_variance_profile(&ProfileSpec::new(n, w, Shape::Fejer).unwrap()).unwrap();
        let h = sample_band_matrix(&s, 1.0, seed).unwrap().h;
        let p = SpectralPoint::new(0.3, 0.05).unwrap();
        EvalContext::new(h, &s, &p, 0.6, 0.9).unwrap()
    }

    fn fixed(pairs: &[(Label, usize)]) -> BTreeMap<Label, usize> {
        pairs.iter().cloned().collect()
    }

    #[test]
    fn single_edge_is_the_entry() {
        let c = ctx(6, 2, 1);
        assert!(c.resolvent_residual() < 1e-12);
        let t = Term::new(vec![Factor::g("a", "b")]);
        let v = evaluate_diagram(&t, &c, ("a", 2), ("b", 4)).unwrap();
        assert_eq!(v, c.g[(2, 4)]);
        let mat = evaluate_matrix(&[t], &c, "a", "b").unwrap();
        assert!(linalg::max_abs_diff(&mat, &c.g) == 0.0);
    }

    #[test]
    fn matches_brute_force() {
        let c = ctx(6, 2, 3);
        let t = Term::new(vec![
            Factor::P { i: "a", j: "x" },
            Factor::gc("x", "y"),
            Factor::g("x", "u"),
            Factor::S { i: "u", j: "v" },
            Factor::delta("v"),
            Factor::g("u", "y"),
            Factor::P { i: "y", j: "b" },
        ])
        .sm();
        let f = fixed(&[("a", 1), ("b", 5)]);
        let fast = evaluate_tensor(&t, &c, &[], &f).unwrap()[0];
        let slow = brute_force(&t, &c, &f).unwrap();
        assert!((fast - slow).norm() < 1e-12 * (1.0 + slow.norm()), "{fast} vs {slow}");
    }

    #[test]
    fn dangling_label_is_structural() {
        let c = ctx(6, 2, 3);
        let t = Term::new(vec![Factor::g("a", "x")]);
        assert!(matches!(evaluate_diagram(&t, &c, ("a", 0), ("b", 0)), Err(Error::Structural(_))));
        let t = Term::new(vec![Factor::g("a", "x"), Factor::g("b", "b")]);
        assert!(matches!(evaluate_diagram(&t, &c, ("a", 0), ("b", 0)), Err(Error::Structural(_))));
    }

    #[test]
    fn disconnected_pieces_multiply() {
        let c = ctx(6, 2, 4);
        let t = Term::new(vec![Factor::g("a", "b"), Factor::delta("x"), Factor::S { i: "x", j: "y" }, Factor::delta("y")]);
        let f = fixed(&[("a", 0), ("b", 3)]);
        let fast = evaluate_tensor(&t, &c, &[], &f).unwrap()[0];
        let slow = brute_force(&t, &c, &f).unwrap();
        assert!((fast - slow).norm() < 1e-12);
    }

    #[test]
    fn free_labels_are_ordered() {
        let c = ctx(6, 2, 5);
        let t = Term::new(vec![Factor::g("a", "x"), Factor::gc("x", "b")]);
        let ab = evaluate_matrix(&[t.clone()], &c, "a", "b").unwrap();
        let ba = evaluate_matrix(&[t], &c, "b", "a").unwrap();
        for i in 0..6 {
            for j in 0..6 {
                assert_eq!(ab[(i, j)], ba[(j, i)]);
            }
        }
    }
}
