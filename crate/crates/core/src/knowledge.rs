//! Partial causal knowledge: trusted edges, forbidden edges and monotone
//! constraints over table columns.
//!
//! # File format
//!
//! Knowledge files are line based. `#` starts a comment. Section headers in
//! brackets switch what the following lines mean:
//!
//! ```text
//! [trusted]                       # E+ : a directly causes b
//! severity -> treatment
//!
//! [forbidden]                     # E0 : a does not directly cause b
//! treatment -> age
//! treatment -> sex  weight=2.0    # optional per-pair HSIC weight (default 1)
//!
//! [monotone]                      # M : effect is sign-monotone in cause given S
//! severity -> outcome +
//! lactate -> outcome + | age, sex
//!
//! [temporal]                      # tiers; later tiers may not cause earlier ones
//! age, sex < treatment < outcome
//! ```
//!
//! Temporal lines expand into forbidden edges from every column of a later
//! tier to every column of an earlier tier.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::scm::{Family, Scm};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Sign {
    #[serde(rename = "+")]
    Positive,
    #[serde(rename = "-")]
    Negative,
}

impl Sign {
    pub fn value(self) -> f64 {
        match self {
            Sign::Positive => 1.0,
            Sign::Negative => -1.0,
        }
    }

    fn symbol(self) -> char {
        match self {
            Sign::Positive => '+',
            Sign::Negative => '-',
        }
    }
}

/// `effect` is `sign`-monotone in `cause` given the columns in `given`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotoneConstraint {
    pub cause: usize,
    pub effect: usize,
    pub given: Vec<usize>,
    pub sign: Sign,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForbiddenEdge {
    pub from: usize,
    pub to: usize,
    pub weight: f64,
}

/// Resolved, index-based knowledge `(E+, E0, M)` for a fixed column list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalKnowledge {
    pub columns: Vec<String>,
    pub trusted: Vec<(usize, usize)>,
    pub forbidden: Vec<ForbiddenEdge>,
    pub monotone: Vec<MonotoneConstraint>,
}

/// `Pa+(j)` for every column, induced by the trusted edges.
#[derive(Debug, Clone, PartialEq)]
pub struct TrustedParents(pub Vec<Vec<usize>>);

impl TrustedParents {
    pub fn of(&self, j: usize) -> &[usize] {
        &self.0[j]
    }
}

fn is_acyclic(d: usize, edges: &[(usize, usize)]) -> bool {
    let mut indeg = vec![0usize; d];
    let mut out: Vec<Vec<usize>> = vec![Vec::new(); d];
    for &(a, b) in edges {
        indeg[b] += 1;
        out[a].push(b);
    }
    let mut stack: Vec<usize> = (0..d).filter(|&j| indeg[j] == 0).collect();
    let mut visited = 0;
    while let Some(j) = stack.pop() {
        visited += 1;
        for &k in &out[j] {
            indeg[k] -= 1;
            if indeg[k] == 0 {
                stack.push(k);
            }
        }
    }
    visited == d
}

impl CausalKnowledge {
    pub fn empty(columns: Vec<String>) -> Self {
        CausalKnowledge { columns, trusted: Vec::new(), forbidden: Vec::new(), monotone: Vec::new() }
    }

    pub fn d(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trusted.is_empty() && self.forbidden.is_empty() && self.monotone.is_empty()
    }

    pub fn is_forbidden(&self, a: usize, b: usize) -> bool {
        self.forbidden.iter().any(|f| f.from == a && f.to == b)
    }

    pub fn trusted_parents(&self) -> TrustedParents {
        let mut pa = vec![Vec::new(); self.d()];
        for &(a, b) in &self.trusted {
            pa[b].push(a);
        }
        for p in &mut pa {
            p.sort_unstable();
        }
        TrustedParents(pa)
    }

    /// Sort and check every structural invariant.
    pub fn validate(mut self) -> Result<Self> {
        let d = self.d();
        let in_range = |j: usize| j < d;
        self.trusted.sort_unstable();
        self.trusted.dedup();
        self.forbidden.sort_by_key(|f| (f.from, f.to));
        self.forbidden.dedup_by_key(|f| (f.from, f.to));
        for &(a, b) in &self.trusted {
            if !in_range(a) || !in_range(b) {
                return Err(Error::validation(format!("trusted edge ({a},{b}) out of range")));
            }
            if a == b {
                return Err(Error::validation(format!("self-loop on '{}' in trusted edges", self.columns[a])));
            }
        }
        for f in &self.forbidden {
            if !in_range(f.from) || !in_range(f.to) {
                return Err(Error::validation(format!("forbidden edge ({},{}) out of range", f.from, f.to)));
            }
            if f.from == f.to {
                return Err(Error::validation(format!("self-loop on '{}' in forbidden edges", self.columns[f.from])));
            }
            if !(f.weight > 0.0 && f.weight.is_finite()) {
                return Err(Error::validation("forbidden-edge weights must be positive"));
            }
            if self.trusted.contains(&(f.from, f.to)) {
                return Err(Error::validation(format!(
                    "edge {} -> {} is both trusted and forbidden",
                    self.columns[f.from], self.columns[f.to]
                )));
            }
        }
        if !is_acyclic(d, &self.trusted) {
            return Err(Error::validation("trusted edges contain a cycle"));
        }
        let mut seen = BTreeSet::new();
        for m in &mut self.monotone {
            m.given.sort_unstable();
            m.given.dedup();
            if !in_range(m.cause) || !in_range(m.effect) || m.given.iter().any(|&s| !in_range(s)) {
                return Err(Error::validation("monotone constraint references a column out of range"));
            }
            if m.cause == m.effect {
                return Err(Error::validation("monotone constraint relates a column to itself"));
            }
            if m.given.contains(&m.cause) || m.given.contains(&m.effect) {
                return Err(Error::validation("monotone conditioning set contains its own cause or effect"));
            }
            if !seen.insert((m.cause, m.effect, m.given.clone())) {
                return Err(Error::validation(format!(
                    "duplicate monotone constraint {} -> {}",
                    self.columns[m.cause], self.columns[m.effect]
                )));
            }
        }
        Ok(self)
    }

    /// Drop all forbidden edges (the `E0 = ∅` ablation).
    pub fn without_forbidden(&self) -> Self {
        CausalKnowledge { forbidden: Vec::new(), ..self.clone() }
    }

    /// Render in the knowledge file format. Temporal tiers are emitted as
    /// their expanded forbidden edges.
    pub fn to_text(&self) -> String {
        let name = |j: usize| self.columns[j].as_str();
        let mut s = String::new();
        s.push_str("[trusted]\n");
        for &(a, b) in &self.trusted {
            let _ = writeln!(s, "{} -> {}", name(a), name(b));
        }
        s.push_str("\n[forbidden]\n");
        for f in &self.forbidden {
            if f.weight == 1.0 {
                let _ = writeln!(s, "{} -> {}", name(f.from), name(f.to));
            } else {
                let _ = writeln!(s, "{} -> {} weight={:?}", name(f.from), name(f.to), f.weight);
            }
        }
        s.push_str("\n[monotone]\n");
        for m in &self.monotone {
            let _ = write!(s, "{} -> {} {}", name(m.cause), name(m.effect), m.sign.symbol());
            if !m.given.is_empty() {
                let given: Vec<&str> = m.given.iter().map(|&g| name(g)).collect();
                let _ = write!(s, " | {}", given.join(", "));
            }
            s.push('\n');
        }
        s
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Section {
    None,
    Trusted,
    Forbidden,
    Monotone,
    Temporal,
}

/// Parse knowledge text against a column list.
pub fn parse_knowledge_str(text: &str, columns: &[String]) -> Result<CausalKnowledge> {
    let index: BTreeMap<&str, usize> = columns.iter().enumerate().map(|(j, c)| (c.as_str(), j)).collect();
    let resolve = |name: &str, line: usize| -> Result<usize> {
        index
            .get(name.trim())
            .copied()
            .ok_or_else(|| Error::Parse { line, msg: format!("unknown column '{}'", name.trim()) })
    };
    let arrow = |body: &str, line: usize| -> Result<(usize, usize, String)> {
        let (a, rest) = body
            .split_once("->")
            .ok_or_else(|| Error::Parse { line, msg: "expected 'a -> b'".into() })?;
        let rest = rest.trim();
        let (b, tail) = match rest.find(char::is_whitespace) {
            Some(k) => (&rest[..k], rest[k..].trim().to_string()),
            None => (rest, String::new()),
        };
        Ok((resolve(a, line)?, resolve(b, line)?, tail))
    };

    let mut k = CausalKnowledge::empty(columns.to_vec());
    let mut explicit_forbidden: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut temporal: BTreeSet<(usize, usize)> = BTreeSet::new();
    let mut section = Section::None;
    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        if body.starts_with('[') && body.ends_with(']') {
            section = match body[1..body.len() - 1].trim().to_ascii_lowercase().as_str() {
                "trusted" => Section::Trusted,
                "forbidden" => Section::Forbidden,
                "monotone" => Section::Monotone,
                "temporal" => Section::Temporal,
                other => return Err(Error::Parse { line, msg: format!("unknown section '{other}'") }),
            };
            continue;
        }
        match section {
            Section::None => return Err(Error::Parse { line, msg: "entry before any section header".into() }),
            Section::Trusted => {
                let (a, b, tail) = arrow(body, line)?;
                if !tail.is_empty() {
                    return Err(Error::Parse { line, msg: format!("unexpected '{tail}'") });
                }
                k.trusted.push((a, b));
            }
            Section::Forbidden => {
                let (a, b, tail) = arrow(body, line)?;
                let weight = if tail.is_empty() {
                    1.0
                } else {
                    let v = tail
                        .strip_prefix("weight=")
                        .ok_or_else(|| Error::Parse { line, msg: format!("unexpected '{tail}'") })?;
                    v.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::Parse { line, msg: format!("bad weight '{v}'") })?
                };
                explicit_forbidden.insert((a, b), weight);
            }
            Section::Monotone => {
                let (main, given) = match body.split_once('|') {
                    Some((m, g)) => (m, Some(g)),
                    None => (body, None),
                };
                let (a, b, tail) = arrow(main, line)?;
                let sign = match tail.as_str() {
                    "+" => Sign::Positive,
                    "-" => Sign::Negative,
                    other => return Err(Error::Parse { line, msg: format!("expected sign '+' or '-', got '{other}'") }),
                };
                let given = match given {
                    Some(g) => g
                        .split(',')
                        .filter(|s| !s.trim().is_empty())
                        .map(|s| resolve(s, line))
                        .collect::<Result<Vec<_>>>()?,
                    None => Vec::new(),
                };
                k.monotone.push(MonotoneConstraint { cause: a, effect: b, given, sign });
            }
            Section::Temporal => {
                let tiers = body
                    .split('<')
                    .map(|tier| tier.split(',').map(|s| resolve(s, line)).collect::<Result<Vec<_>>>())
                    .collect::<Result<Vec<_>>>()?;
                for (ti, early) in tiers.iter().enumerate() {
                    for late in &tiers[ti + 1..] {
                        for &e in early {
                            for &l in late {
                                temporal.insert((l, e));
                            }
                        }
                    }
                }
            }
        }
    }
    for (a, b) in temporal {
        explicit_forbidden.entry((a, b)).or_insert(1.0);
    }
    k.forbidden = explicit_forbidden.into_iter().map(|((from, to), weight)| ForbiddenEdge { from, to, weight }).collect();
    k.validate()
}

/// Parse a knowledge file; names resolve against `columns`.
pub fn parse_knowledge(path: impl AsRef<Path>, columns: &[String]) -> Result<CausalKnowledge> {
    parse_knowledge_str(&fs::read_to_string(path)?, columns)
}

/// How to synthesize knowledge from a known SCM.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeriveOptions {
    pub reveal_fraction: f64,
    pub n_mono: usize,
    pub corrupt_fraction: f64,
    /// Finite-difference step for estimating monotone signs on nonlinear mechanisms.
    pub delta: f64,
    pub effect_samples: usize,
}

impl Default for DeriveOptions {
    fn default() -> Self {
        DeriveOptions { reveal_fraction: 0.5, n_mono: 2, corrupt_fraction: 0.0, delta: 0.5, effect_samples: 10_000 }
    }
}

/// Knowledge synthesized from a ground-truth SCM.
///
/// `E+` reveals `⌈reveal·|E|⌉` true edges, a fraction of which are swapped
/// for non-edges that keep `E+` acyclic. `E0` holds every ordered non-edge
/// touching a root node (minus anything placed in `E+`). `M` holds the
/// `n_mono` true edges with the largest absolute mechanism effect.
pub fn derive_knowledge_from_scm<R: Rng + ?Sized>(scm: &Scm, opts: &DeriveOptions, rng: &mut R) -> Result<CausalKnowledge> {
    if !(0.0..=1.0).contains(&opts.reveal_fraction) || !(0.0..=1.0).contains(&opts.corrupt_fraction) {
        return Err(Error::validation("reveal and corrupt fractions must lie in [0, 1]"));
    }
    let reveal_seed = rng.next_u64();
    let corrupt_seed = rng.next_u64();
    let effect_seed = rng.next_u64();
    let d = scm.d();
    let edges = scm.edges();

    let n_reveal = (opts.reveal_fraction * edges.len() as f64 - 1e-9).ceil().max(0.0) as usize;
    let mut shuffled = edges.clone();
    shuffled.shuffle(&mut rng::seeded(reveal_seed));
    let mut trusted: Vec<(usize, usize)> = shuffled.into_iter().take(n_reveal).collect();

    let n_wrong = (opts.corrupt_fraction * trusted.len() as f64).round() as usize;
    if n_wrong > 0 {
        let mut r = rng::seeded(corrupt_seed);
        trusted.shuffle(&mut r);
        trusted.truncate(trusted.len() - n_wrong);
        let mut candidates: Vec<(usize, usize)> = (0..d)
            .flat_map(|a| (0..d).map(move |b| (a, b)))
            .filter(|&(a, b)| a != b && !scm.has_edge(a, b))
            .collect();
        candidates.shuffle(&mut r);
        for _ in 0..n_wrong {
            let pick = candidates.iter().position(|&c| {
                let mut t = trusted.clone();
                t.push(c);
                !trusted.contains(&c) && is_acyclic(d, &t)
            });
            match pick {
                Some(k) => trusted.push(candidates.remove(k)),
                None => return Err(Error::validation("cannot place wrong edges without creating a cycle")),
            }
        }
    }
    trusted.sort_unstable();

    let roots: BTreeSet<usize> = scm.roots().into_iter().collect();
    let forbidden: Vec<ForbiddenEdge> = (0..d)
        .flat_map(|a| (0..d).map(move |b| (a, b)))
        .filter(|&(a, b)| a != b && !scm.has_edge(a, b) && (roots.contains(&a) || roots.contains(&b)))
        .filter(|e| !trusted.contains(e))
        .map(|(from, to)| ForbiddenEdge { from, to, weight: 1.0 })
        .collect();

    if opts.n_mono > edges.len() {
        return Err(Error::validation(format!(
            "{} monotone constraints requested but the SCM has {} edges",
            opts.n_mono,
            edges.len()
        )));
    }
    let monotone = if opts.n_mono == 0 {
        Vec::new()
    } else {
        let samples = if scm.family == Family::LinearGaussian {
            None
        } else {
            Some(scm.sample_matrix(opts.effect_samples, &mut rng::seeded(effect_seed), &[]))
        };
        let mut effects: Vec<((usize, usize), f64)> = edges
            .iter()
            .map(|&(p, c)| {
                let eff = match (&samples, scm.family) {
                    (None, _) => scm.coefficient(p, c).expect("true edge"),
                    (Some(rows), _) => scm.partial_effect(p, c, rows, opts.delta),
                };
                ((p, c), eff)
            })
            .collect();
        effects.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()).then(a.0.cmp(&b.0)));
        effects
            .into_iter()
            .take(opts.n_mono)
            .map(|((p, c), eff)| MonotoneConstraint {
                cause: p,
                effect: c,
                given: scm.parents(c).into_iter().filter(|&q| q != p).collect(),
                sign: if eff >= 0.0 { Sign::Positive } else { Sign::Negative },
            })
            .collect()
    };

    CausalKnowledge { columns: scm.names(), trusted, forbidden, monotone }.validate()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scm::{random_scm, Mechanism, Node, ScmParams};

    fn cols(names: &[&str]) -> Vec<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn icu_example() {
        let c = cols(&["age", "sex", "severity", "treatment", "outcome"]);
        let text = "
            [trusted]
            severity -> treatment
            treatment -> outcome
            [forbidden]
            treatment -> age
            [monotone]
            severity -> outcome +
        ";
        let k = parse_knowledge_str(text, &c).unwrap();
        assert_eq!(k.trusted.len(), 2);
        assert_eq!(k.forbidden.len(), 1);
        assert_eq!((k.forbidden[0].from, k.forbidden[0].to), (3, 0));
        assert_eq!(k.monotone[0].sign, Sign::Positive);
        assert_eq!(k.trusted_parents().of(4), &[3]);
    }

    #[test]
    fn trusted_and_forbidden_overlap_is_rejected() {
        let c = cols(&["X1", "X2"]);
        let err = parse_knowledge_str("[trusted]\nX1 -> X2\n[forbidden]\nX1 -> X2\n", &c).unwrap_err();
        assert!(err.to_string().contains("both trusted and forbidden"));
    }

    #[test]
    fn empty_file_gives_empty_knowledge() {
        let k = parse_knowledge_str("", &cols(&["a", "b"])).unwrap();
        assert!(k.is_empty());
    }

    #[test]
    fn parse_errors() {
        let c = cols(&["a", "b", "c"]);
        assert!(matches!(parse_knowledge_str("[trusted]\na -> zz\n", &c), Err(Error::Parse { line: 2, .. })));
        assert!(parse_knowledge_str("[trusted]\na -> b\nb -> c\nc -> a\n", &c).is_err());
        assert!(parse_knowledge_str("[monotone]\na -> b +\na -> b +\n", &c).is_err());
        assert!(parse_knowledge_str("[monotone]\na -> b + | a\n", &c).is_err());
        assert!(parse_knowledge_str("[trusted]\na -> a\n", &c).is_err());
        assert!(parse_knowledge_str("a -> b\n", &c).is_err());
        assert!(parse_knowledge_str("[monotone]\na -> b *\n", &c).is_err());
    }

    #[test]
    fn temporal_tiers_expand_to_forbidden() {
        let c = cols(&["age", "sex", "trt", "out"]);
        let k = parse_knowledge_str("[temporal]\nage, sex < trt < out\n", &c).unwrap();
        let pairs: Vec<(usize, usize)> = k.forbidden.iter().map(|f| (f.from, f.to)).collect();
        assert_eq!(pairs, vec![(2, 0), (2, 1), (3, 0), (3, 1), (3, 2)]);
    }

    #[test]
    fn weights_and_text_round_trip() {
        let c = cols(&["a", "b", "c"]);
        let text = "[trusted]\na -> b\n[forbidden]\nc -> a weight=2.5\nb -> c\n[monotone]\na -> c - | b\n";
        let k = parse_knowledge_str(text, &c).unwrap();
        assert_eq!(k.forbidden.iter().find(|f| f.from == 2).unwrap().weight, 2.5);
        let again = parse_knowledge_str(&k.to_text(), &c).unwrap();
        assert_eq!(again, k);
        let json: CausalKnowledge = serde_json::from_str(&k.to_json().unwrap()).unwrap();
        assert_eq!(json, k);
    }

    fn chain3() -> Scm {
        let lin = |parents: Vec<(usize, f64)>| Node {
            name: String::new(),
            mechanism: Mechanism::Linear { parents, noise_sd: 1.0 },
        };
        let mut s = Scm::new(
            Family::LinearGaussian,
            vec![lin(vec![]), lin(vec![(0, 1.0)]), lin(vec![(1, -2.0)])],
            vec![0, 1, 2],
        )
        .unwrap();
        for (j, n) in s.nodes.iter_mut().enumerate() {
            n.name = format!("x{}", j + 1);
        }
        s
    }

    #[test]
    fn chain_forbidden_set() {
        let opts = DeriveOptions { reveal_fraction: 1.0, n_mono: 1, ..Default::default() };
        let k = derive_knowledge_from_scm(&chain3(), &opts, &mut rng::seeded(1)).unwrap();
        let pairs: BTreeSet<(usize, usize)> = k.forbidden.iter().map(|f| (f.from, f.to)).collect();
        // Non-edges touching the root x1: (x1,x3), (x2,x1), (x3,x1).
        assert_eq!(pairs, BTreeSet::from([(0, 2), (1, 0), (2, 0)]));
        assert!(!pairs.contains(&(1, 2)));
        assert_eq!(k.trusted, vec![(0, 1), (1, 2)]);
        assert_eq!(k.monotone[0].cause, 1);
        assert_eq!(k.monotone[0].sign, Sign::Negative);
    }

    #[test]
    fn reveal_extremes() {
        let mut r = rng::seeded(2);
        for _ in 0..20 {
            let scm = random_scm(Family::LinearGaussian, 8, 2.0, &ScmParams::default(), &mut r).unwrap();
            let none = derive_knowledge_from_scm(
                &scm,
                &DeriveOptions { reveal_fraction: 0.0, n_mono: 0, ..Default::default() },
                &mut r,
            )
            .unwrap();
            assert!(none.trusted.is_empty());
            let all = derive_knowledge_from_scm(
                &scm,
                &DeriveOptions { reveal_fraction: 1.0, n_mono: 0, ..Default::default() },
                &mut r,
            )
            .unwrap();
            assert_eq!(all.trusted, scm.edges());
            assert!(all.forbidden.iter().all(|f| !scm.has_edge(f.from, f.to)));
        }
    }

    #[test]
    fn corruption_replaces_edges_and_stays_acyclic() {
        let mut r = rng::seeded(3);
        let scm = loop {
            let s = random_scm(Family::LinearGaussian, 10, 2.0, &ScmParams::default(), &mut r).unwrap();
            if s.edges().len() >= 6 {
                break s;
            }
        };
        let opts = DeriveOptions { reveal_fraction: 1.0, corrupt_fraction: 0.5, n_mono: 0, ..Default::default() };
        let k = derive_knowledge_from_scm(&scm, &opts, &mut r).unwrap();
        let wrong = k.trusted.iter().filter(|&&(a, b)| !scm.has_edge(a, b)).count();
        assert_eq!(wrong, (0.5 * scm.edges().len() as f64).round() as usize);
        assert_eq!(k.trusted.len(), scm.edges().len());
    }

    #[test]
    fn nonlinear_monotone_signs_follow_mechanism() {
        let mut r = rng::seeded(4);
        let scm = loop {
            let s = random_scm(Family::NonlinearAdditive, 6, 2.0, &ScmParams::default(), &mut r).unwrap();
            if s.edges().len() >= 2 {
                break s;
            }
        };
        let k = derive_knowledge_from_scm(&scm, &DeriveOptions::default(), &mut r).unwrap();
        assert_eq!(k.monotone.len(), 2);
        for m in &k.monotone {
            assert!(scm.has_edge(m.cause, m.effect));
            let mut expected: Vec<usize> = scm.parents(m.effect);
            expected.retain(|&p| p != m.cause);
            assert_eq!(m.given, expected);
        }
    }

    #[test]
    fn derivation_is_deterministic() {
        let mut r = rng::seeded(5);
        let scm = random_scm(Family::MixedType, 10, 2.0, &ScmParams::default(), &mut r).unwrap();
        let opts = DeriveOptions { n_mono: 0, ..Default::default() };
        let a = derive_knowledge_from_scm(&scm, &opts, &mut rng::seeded(9)).unwrap();
        let b = derive_knowledge_from_scm(&scm, &opts, &mut rng::seeded(9)).unwrap();
        assert_eq!(a, b);
    }
}
