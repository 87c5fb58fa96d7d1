//! The fixed library of expansions and drift graphs.
//!
//! Label conventions: a, b are the outer indices; x, u, v, y the vertices of
//! the drift graph; al, be the loop-expansion vertices; ga, de the
//! vertex-expansion vertices; k and l the inner indices of (HG).

use crate::error::{Error, Result};

use super::term::{derivative, derivative_sum, renormalize_sum, Factor, Label, Term};

/// An identity lhs = Σ groups, each group a sum of terms carrying their own
/// prefactors.
#[derive(Clone, Debug)]
pub struct Expansion {
    pub lhs: Vec<Term>,
    pub groups: Vec<(&'static str, Vec<Term>)>,
}

impl Expansion {
    pub fn rhs(&self) -> Vec<Term> {
        self.groups.iter().flat_map(|(_, g)| g.iter().cloned()).collect()
    }
}

fn clash(f: &[Term], labels: &[Label]) -> Result<()> {
    for t in f {
        if let Some(l) = labels.iter().find(|l| t.uses(l)) {
            return Err(Error::Structural(format!("label '{l}' already used by {t}")));
        }
    }
    Ok(())
}

/// (G_vv - m) f = sm Σ B_vα S_αβ Δ_α Δ_β f - sm Σ B_vα S_αβ G_βα ∂_{H_βα} f
///               - m Σ_α B_vα underline((HG)_αα f).
pub fn loop_expansion(v: Label, f: &[Term], fresh: [Label; 3]) -> Result<Expansion> {
    let [al, be, k] = fresh;
    clash(f, &fresh)?;
    let lhs = f.iter().map(|t| t.clone().times([Factor::delta(v)])).collect();
    let edge = |extra: Vec<Factor>| {
        let mut fs = vec![Factor::B { i: v, j: al }];
        fs.extend(extra);
        fs
    };
    let mut loops = Vec::new();
    let mut derivs = Vec::new();
    let mut fluct = Vec::new();
    for t in f {
        loops.push(t.clone().times(edge(vec![Factor::S { i: al, j: be }, Factor::delta(al), Factor::delta(be)])).sm());
        for d in derivative(t, be, al)? {
            derivs.push(d.times(edge(vec![Factor::S { i: al, j: be }, Factor::g(be, al)])).sm().scaled(-1.0));
        }
        let inner = t.clone().times([Factor::H { i: al, j: k }, Factor::g(k, al)]);
        for r in renormalize_sum(&[inner])? {
            fluct.push(r.times([Factor::B { i: v, j: al }]).m().scaled(-1.0));
        }
    }
    Ok(Expansion { lhs, groups: vec![("loop", loops), ("derivative", derivs), ("fluctuation", fluct)] })
}

/// G_xu G_uy f = m B_uy G_xy f + sm Σ B_uγ S_γδ G_xγ Δ_δ G_γy f
///             + sm Σ B_uγ S_γδ G_xδ Δ_γ G_δy f
///             - sm Σ B_uγ S_γδ G_xγ G_δy ∂_{H_δγ} f
///             - m Σ_γ B_uγ underline(G_xγ (HG)_γy f).
pub fn vertex_expansion(x: Label, u: Label, y: Label, f: &[Term], fresh: [Label; 3]) -> Result<Expansion> {
    let [ga, de, l] = fresh;
    clash(f, &fresh)?;
    let lhs = f.iter().map(|t| t.clone().times([Factor::g(x, u), Factor::g(u, y)])).collect();
    let bs = [Factor::B { i: u, j: ga }, Factor::S { i: ga, j: de }];
    let mut main = Vec::new();
    let mut delta_at_de = Vec::new();
    let mut delta_at_ga = Vec::new();
    let mut derivs = Vec::new();
    let mut fluct = Vec::new();
    for t in f {
        main.push(t.clone().times([Factor::B { i: u, j: y }, Factor::g(x, y)]).m());
        delta_at_de.push(t.clone().times(bs).times([Factor::g(x, ga), Factor::delta(de), Factor::g(ga, y)]).sm());
        delta_at_ga.push(t.clone().times(bs).times([Factor::g(x, de), Factor::delta(ga), Factor::g(de, y)]).sm());
        for d in derivative(t, de, ga)? {
            derivs.push(d.times(bs).times([Factor::g(x, ga), Factor::g(de, y)]).sm().scaled(-1.0));
        }
        let inner = t.clone().times([Factor::g(x, ga), Factor::H { i: ga, j: l }, Factor::g(l, y)]);
        for r in renormalize_sum(&[inner])? {
            fluct.push(r.times([Factor::B { i: u, j: ga }]).m().scaled(-1.0));
        }
    }
    Ok(Expansion {
        lhs,
        groups: vec![
            ("main", main),
            ("delta1", delta_at_de),
            ("delta2", delta_at_ga),
            ("derivative", derivs),
            ("fluctuation", fluct),
        ],
    })
}

fn double_edges() -> [Factor; 2] {
    [Factor::P { i: "a", j: "x" }, Factor::P { i: "y", j: "b" }]
}

/// The drift graph: Σ P_ax conj(G)_xy G_xu S_uv Δ_v G_uy P_yb.
pub fn drift_graph() -> Term {
    drift_rest().times([Factor::delta("v")])
}

/// The drift graph with the Δ at v removed.
pub fn drift_rest() -> Term {
    Term::new(vec![Factor::gc("x", "y"), Factor::g("x", "u"), Factor::S { i: "u", j: "v" }, Factor::g("u", "y")])
        .times(double_edges())
}

fn loop_edges() -> [Factor; 2] {
    [Factor::B { i: "v", j: "al" }, Factor::S { i: "al", j: "be" }]
}

/// 𝒢_1 (prefactor sm included), 𝒢_2, 𝒢_3, 𝒢_4 of the first unfolding.
///
/// `picture_colours` reproduces the drawn edge colour of the G_βα loop edge
/// (red, conjugated) in 𝒢_2..𝒢_4; the derivation gives blue.
pub fn first_unfolding_terms(picture_colours: bool) -> [Term; 4] {
    let loop_g = Factor::G { i: "be", j: "al", conj: picture_colours };
    let pp = double_edges();
    let g1 = drift_rest().times(loop_edges()).times([Factor::delta("al"), Factor::delta("be")]).sm();
    let g2 = Term::new(vec![
        loop_g,
        Factor::gc("x", "al"),
        Factor::gc("be", "y"),
        Factor::g("x", "u"),
        Factor::S { i: "u", j: "v" },
        Factor::g("u", "y"),
    ])
    .times(loop_edges())
    .times(pp);
    let g3 = Term::new(vec![
        loop_g,
        Factor::gc("x", "y"),
        Factor::g("x", "be"),
        Factor::g("al", "u"),
        Factor::S { i: "u", j: "v" },
        Factor::g("u", "y"),
    ])
    .times(loop_edges())
    .times(pp);
    let g4 = Term::new(vec![
        loop_g,
        Factor::gc("x", "y"),
        Factor::g("x", "u"),
        Factor::S { i: "u", j: "v" },
        Factor::g("u", "be"),
        Factor::g("al", "y"),
    ])
    .times(loop_edges())
    .times(pp);
    [g1, g2, g3, g4]
}

/// ℱ_0 = -m Σ B_vα underline((HG)_αα f) with f the rest of the drift graph.
pub fn first_fluctuation() -> Result<Vec<Term>> {
    let inner = drift_rest().times([Factor::H { i: "al", j: "k" }, Factor::g("k", "al")]);
    Ok(renormalize_sum(&[inner])?
        .into_iter()
        .map(|t| t.times([Factor::B { i: "v", j: "al" }]).m().scaled(-1.0))
        .collect())
}

/// First unfolding: drift graph = 𝒢_1 + sm(𝒢_2 + 𝒢_3 + 𝒢_4) + ℱ_0.
pub fn first_unfolding(picture_colours: bool) -> Result<Expansion> {
    let [g1, g2, g3, g4] = first_unfolding_terms(picture_colours);
    Ok(Expansion {
        lhs: vec![drift_graph()],
        groups: vec![
            ("G1", vec![g1]),
            ("G2", vec![g2.sm()]),
            ("G3", vec![g3.sm()]),
            ("G4", vec![g4.sm()]),
            ("F0", first_fluctuation()?),
        ],
    })
}

/// The pair (ξ, ζ) of the blue path ξ → u → ζ in 𝒢_i.
pub fn vertex_pair(i: usize) -> Result<(Label, Label)> {
    match i {
        1 | 2 => Ok(("x", "y")),
        3 => Ok(("al", "y")),
        4 => Ok(("x", "be")),
        _ => Err(Error::Domain(format!("graph index {i} must be in 1..=4"))),
    }
}

/// Second unfolding at u of 𝒢_i, as the families 𝒢_i0..𝒢_i3 and ℱ_i
/// without their prefactors m, sm, -sm, -m.
#[derive(Clone, Debug)]
pub struct SecondUnfolding {
    pub graph: Term,
    pub g0: Vec<Term>,
    pub g1: Vec<Term>,
    pub g2: Vec<Term>,
    pub g3: Vec<Term>,
    pub f: Vec<Term>,
}

impl SecondUnfolding {
    /// The identity 𝒢_i = m𝒢_i0 + sm(𝒢_i1 + 𝒢_i2) - sm𝒢_i3 - mℱ_i.
    pub fn expansion(&self) -> Expansion {
        let with = |ts: &[Term], f: &dyn Fn(Term) -> Term| ts.iter().cloned().map(f).collect::<Vec<_>>();
        Expansion {
            lhs: vec![self.graph.clone()],
            groups: vec![
                ("G_i0", with(&self.g0, &|t| t.m())),
                ("G_i1", with(&self.g1, &|t| t.sm())),
                ("G_i2", with(&self.g2, &|t| t.sm())),
                ("G_i3", with(&self.g3, &|t| t.sm().scaled(-1.0))),
                ("F_i", with(&self.f, &|t| t.m().scaled(-1.0))),
            ],
        }
    }

    pub fn families(&self) -> [(&'static str, &[Term]); 5] {
        [("0", &self.g0), ("1", &self.g1), ("2", &self.g2), ("3", &self.g3), ("F", &self.f)]
    }
}

pub fn second_unfolding(i: usize, picture_colours: bool) -> Result<SecondUnfolding> {
    let (xi, zeta) = vertex_pair(i)?;
    let graph = first_unfolding_terms(picture_colours)[i - 1].clone();
    let mut rest = graph.clone();
    for edge in [Factor::g(xi, "u"), Factor::g("u", zeta)] {
        let k = rest
            .factors
            .iter()
            .position(|f| *f == edge)
            .ok_or_else(|| Error::Structural(format!("graph {i} has no edge {edge}")))?;
        rest.factors.remove(k);
    }
    let (ga, de, l) = ("ga", "de", "l");
    let bs = [Factor::B { i: "u", j: ga }, Factor::S { i: ga, j: de }];
    let g0 = vec![rest.clone().times([Factor::g(xi, zeta), Factor::B { i: "u", j: zeta }])];
    let g1 = vec![rest.clone().times(bs).times([Factor::g(xi, ga), Factor::delta(de), Factor::g(ga, zeta)])];
    let g2 = vec![rest.clone().times(bs).times([Factor::g(xi, de), Factor::delta(ga), Factor::g(de, zeta)])];
    let g3 = derivative_sum(&[rest.clone()], de, ga)?
        .into_iter()
        .map(|t| t.times(bs).times([Factor::g(xi, ga), Factor::g(de, zeta)]))
        .collect();
    let inner = rest.clone().times([Factor::g(xi, ga), Factor::H { i: ga, j: l }, Factor::g(l, zeta)]);
    let f = renormalize_sum(&[inner])?.into_iter().map(|t| t.times([Factor::B { i: "u", j: ga }])).collect();
    Ok(SecondUnfolding { graph, g0, g1, g2, g3, f })
}
