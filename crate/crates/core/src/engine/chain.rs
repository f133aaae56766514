//! Per-contributor genotype chains.
//!
//! A contributor's allele counts at one marker are generated position by
//! position, lowest allele first. Each chain is a small Markov chain whose
//! state is packed into a `u64`; the state exposes the count placed at the
//! current position. The joint dynamic program in [`super::model`] runs the
//! product of these chains.

use std::fmt::Debug;

use super::evidence::{Genotype, Panel};
use crate::error::{Error, Result};

pub trait GenotypeChain: Send + Sync + Debug {
    /// Number of low bits of the packed state this chain uses.
    fn bits(&self) -> u32;
    fn start(&self) -> u64;
    /// Successor states on moving to position `pos`, with transition weights.
    /// Zero-weight successors are not emitted.
    fn successors(&self, pos: usize, state: u64, out: &mut Vec<(u64, f64)>);
    /// Allele count at the current position.
    fn count(&self, state: u64) -> u8;
    /// Weight for ending in `state` after the last position.
    fn accept(&self, state: u64) -> f64;
}

/// `P(k | m, p)` for a binomial with `m <= 2` trials.
#[inline]
fn binom(m: u8, k: u8, p: f64) -> f64 {
    match (m, k) {
        (0, 0) => 1.0,
        (1, 0) => 1.0 - p,
        (1, 1) => p,
        (2, 0) => (1.0 - p) * (1.0 - p),
        (2, 1) => 2.0 * p * (1.0 - p),
        (2, 2) => p * p,
        _ => 0.0,
    }
}

/// Distribution of the count placed at position `pos` given `placed` alleles
/// already allocated: `Binomial(2 - placed, q_pos / sum_{b >= pos} q_b)`.
/// At the last position this is degenerate at `2 - placed`.
pub fn prior_transition(placed: u8, pos: usize, panel: &Panel) -> Result<[f64; 3]> {
    if placed > 2 || pos >= panel.len() {
        return Err(Error::Invariant(format!(
            "prior transition with {placed} placed alleles at position {pos}"
        )));
    }
    let p = panel.continuation(pos);
    if !(p > 0.0) && placed < 2 {
        return Err(Error::Invariant(format!("empty frequency tail at position {pos}")));
    }
    let m = 2 - placed;
    Ok([binom(m, 0, p), binom(m, 1, p), binom(m, 2, p)])
}

#[inline]
fn sn(state: u64) -> (u8, u8) {
    ((state & 3) as u8, ((state >> 2) & 3) as u8)
}

#[inline]
fn pack_sn(s: u8, n: u8) -> u64 {
    s as u64 | (n as u64) << 2
}

/// Hardy-Weinberg prior: both alleles drawn from the population.
#[derive(Debug)]
pub struct HardyWeinberg {
    continuation: Vec<f64>,
}

impl HardyWeinberg {
    pub fn new(panel: &Panel) -> Self {
        HardyWeinberg {
            continuation: (0..panel.len()).map(|a| panel.continuation(a)).collect(),
        }
    }
}

impl GenotypeChain for HardyWeinberg {
    fn bits(&self) -> u32 {
        4
    }
    fn start(&self) -> u64 {
        0
    }
    fn successors(&self, pos: usize, state: u64, out: &mut Vec<(u64, f64)>) {
        let (s, _) = sn(state);
        let p = self.continuation[pos];
        for k in 0..=(2 - s) {
            let w = binom(2 - s, k, p);
            if w > 0.0 {
                out.push((pack_sn(s + k, k), w));
            }
        }
    }
    fn count(&self, state: u64) -> u8 {
        sn(state).1
    }
    fn accept(&self, state: u64) -> f64 {
        if sn(state).0 == 2 {
            1.0
        } else {
            0.0
        }
    }
}

/// A genotype known with certainty.
#[derive(Debug)]
pub struct Fixed {
    counts: Vec<u8>,
}

impl Fixed {
    pub fn new(genotype: Genotype, panel: &Panel) -> Self {
        Fixed {
            counts: genotype.counts(panel.len()),
        }
    }
}

impl GenotypeChain for Fixed {
    fn bits(&self) -> u32 {
        4
    }
    fn start(&self) -> u64 {
        0
    }
    fn successors(&self, pos: usize, state: u64, out: &mut Vec<(u64, f64)>) {
        let (s, _) = sn(state);
        let n = self.counts[pos];
        out.push((pack_sn(s + n, n), 1.0));
    }
    fn count(&self, state: u64) -> u8 {
        sn(state).1
    }
    fn accept(&self, state: u64) -> f64 {
        if sn(state).0 == 2 {
            1.0
        } else {
            0.0
        }
    }
}

/// Prior of a contributor who shares one allele identical by descent with
/// a typed relative.
///
/// One of `options` is chosen first with its weight (for a heterozygous
/// child, each allele with probability one half). The chosen allele is
/// placed with certainty at its position; the other allele is drawn from
/// the population by a one-trial chain whose running sum excludes the IBD
/// allele.
#[derive(Debug)]
pub struct Replaced {
    continuation: Vec<f64>,
    options: Vec<(usize, f64)>,
}

impl Replaced {
    pub fn new(options: Vec<(usize, f64)>, panel: &Panel) -> Result<Self> {
        if options.is_empty() || options.len() > 3 {
            return Err(Error::Invariant(format!("{} IBD options; expected 1 to 3", options.len())));
        }
        let total: f64 = options.iter().map(|o| o.1).sum();
        if options.iter().any(|&(a, w)| a >= panel.len() || !(w > 0.0)) || (total - 1.0).abs() > 1e-12 {
            return Err(Error::Invariant(format!("invalid IBD options {options:?}")));
        }
        Ok(Replaced {
            continuation: (0..panel.len()).map(|a| panel.continuation(a)).collect(),
            options,
        })
    }

    // layout: choice (2 bits, 0 = not yet chosen) | excluded sum (1) | n (2)
    fn unpack(state: u64) -> (usize, u8, u8) {
        ((state & 3) as usize, ((state >> 2) & 1) as u8, ((state >> 3) & 3) as u8)
    }

    fn pack(choice: usize, sx: u8, n: u8) -> u64 {
        choice as u64 | (sx as u64) << 2 | (n as u64) << 3
    }
}

impl GenotypeChain for Replaced {
    fn bits(&self) -> u32 {
        5
    }
    fn start(&self) -> u64 {
        0
    }
    fn successors(&self, pos: usize, state: u64, out: &mut Vec<(u64, f64)>) {
        let (choice, sx, _) = Self::unpack(state);
        let p = self.continuation[pos];
        let mut step = |choice: usize, w0: f64| {
            let ibd = (self.options[choice - 1].0 == pos) as u8;
            for x in 0..=(1 - sx) {
                let w = w0 * binom(1 - sx, x, p);
                if w > 0.0 {
                    out.push((Self::pack(choice, sx + x, ibd + x), w));
                }
            }
        };
        if choice == 0 {
            for (k, &(_, w)) in self.options.iter().enumerate() {
                step(k + 1, w);
            }
        } else {
            step(choice, 1.0);
        }
    }
    fn count(&self, state: u64) -> u8 {
        Self::unpack(state).2
    }
    fn accept(&self, state: u64) -> f64 {
        let (choice, sx, _) = Self::unpack(state);
        if choice > 0 && sx == 1 {
            1.0
        } else {
            0.0
        }
    }
}

/// A contributor chain extended with meiosis to a typed child.
///
/// Alongside the contributor's counts `n_a` and running sum, the state
/// carries the gate `g` (1: no allele of the contributor met yet; 0: the
/// first one met was transmitted; 2: it was not) and the running sum of the
/// child's maternal counts. The paternal count is 1 with probability 0,
/// `g/2` or 1 for `n_a = 0, 1, 2`; maternal counts follow a one-allele
/// population chain; paternal plus maternal must equal the child's count.
#[derive(Debug)]
pub struct Meiosis {
    continuation: Vec<f64>,
    child: Vec<u8>,
}

impl Meiosis {
    pub fn new(child: Genotype, panel: &Panel) -> Self {
        Meiosis {
            continuation: (0..panel.len()).map(|a| panel.continuation(a)).collect(),
            child: child.counts(panel.len()),
        }
    }

    // layout: s (2) | n (2) | g (2) | maternal sum (1)
    fn unpack(state: u64) -> (u8, u8, u8, u8) {
        (
            (state & 3) as u8,
            ((state >> 2) & 3) as u8,
            ((state >> 4) & 3) as u8,
            ((state >> 6) & 1) as u8,
        )
    }

    fn pack(s: u8, n: u8, g: u8, ms: u8) -> u64 {
        s as u64 | (n as u64) << 2 | (g as u64) << 4 | (ms as u64) << 6
    }

    /// `P(paternal count = 1 | n, g)`.
    pub fn transmit_probability(n: u8, g: u8) -> f64 {
        match n {
            0 => 0.0,
            1 => g as f64 / 2.0,
            _ => 1.0,
        }
    }

    /// Deterministic gate update.
    pub fn next_gate(n: u8, transmitted: u8, g: u8) -> u8 {
        match (n >= 1, transmitted, g) {
            (true, 0, 1) => 2,
            (true, 1, 1) => 0,
            _ => g,
        }
    }
}

impl GenotypeChain for Meiosis {
    fn bits(&self) -> u32 {
        7
    }
    fn start(&self) -> u64 {
        Self::pack(0, 0, 1, 0)
    }
    fn successors(&self, pos: usize, state: u64, out: &mut Vec<(u64, f64)>) {
        let (s, _, g, ms) = Self::unpack(state);
        let p = self.continuation[pos];
        let child = self.child[pos];
        for n in 0..=(2 - s) {
            let wn = binom(2 - s, n, p);
            if wn == 0.0 {
                continue;
            }
            let t1 = Self::transmit_probability(n, g);
            for cp in 0..=1u8 {
                let wt = if cp == 1 { t1 } else { 1.0 - t1 };
                if wt == 0.0 {
                    continue;
                }
                let g_next = Self::next_gate(n, cp, g);
                for cm in 0..=(1 - ms) {
                    if cm + cp != child {
                        continue;
                    }
                    let w = wn * wt * binom(1 - ms, cm, p);
                    if w > 0.0 {
                        out.push((Self::pack(s + n, n, g_next, ms + cm), w));
                    }
                }
            }
        }
    }
    fn count(&self, state: u64) -> u8 {
        Self::unpack(state).1
    }
    fn accept(&self, state: u64) -> f64 {
        let (s, _, _, ms) = Self::unpack(state);
        if s == 2 && ms == 1 {
            1.0
        } else {
            0.0
        }
    }
}

/// Extra likelihood factor depending on the contributor's counts at one or
/// two designated positions, applied once the chain completes.
#[derive(Debug, Clone, PartialEq)]
pub struct CountFactor {
    pub positions: Vec<usize>,
    /// `table[m0][m1]` for counts `m0`, `m1` at the designated positions
    /// (`m1 = 0` when only one position is designated).
    pub table: [[f64; 3]; 3],
}

impl CountFactor {
    pub fn single(pos: usize, f: impl Fn(u8) -> f64) -> Self {
        let mut table = [[0.0; 3]; 3];
        for (m, row) in table.iter_mut().enumerate() {
            row[0] = f(m as u8);
        }
        CountFactor {
            positions: vec![pos],
            table,
        }
    }

    pub fn pair(a: usize, b: usize, f: impl Fn(u8, u8) -> f64) -> Self {
        let mut table = [[0.0; 3]; 3];
        for (m0, row) in table.iter_mut().enumerate() {
            for (m1, v) in row.iter_mut().enumerate() {
                *v = f(m0 as u8, m1 as u8);
            }
        }
        CountFactor {
            positions: vec![a, b],
            table,
        }
    }

    /// A factor that is 1 everywhere.
    pub fn unit(pos: usize) -> Self {
        Self::single(pos, |_| 1.0)
    }
}

#[derive(Debug)]
pub struct WithFactor {
    inner: Box<dyn GenotypeChain>,
    factor: CountFactor,
    shift: u32,
}

impl WithFactor {
    pub fn new(inner: Box<dyn GenotypeChain>, factor: CountFactor, panel: &Panel) -> Result<Self> {
        let ok = match factor.positions.as_slice() {
            [a] => *a < panel.len(),
            [a, b] => a != b && *a < panel.len() && *b < panel.len(),
            _ => false,
        };
        if !ok {
            return Err(Error::Invariant(format!("invalid factor positions {:?}", factor.positions)));
        }
        let shift = inner.bits();
        Ok(WithFactor { inner, factor, shift })
    }
}

impl GenotypeChain for WithFactor {
    fn bits(&self) -> u32 {
        self.shift + 4
    }
    fn start(&self) -> u64 {
        self.inner.start()
    }
    fn successors(&self, pos: usize, state: u64, out: &mut Vec<(u64, f64)>) {
        let mask = (1u64 << self.shift) - 1;
        let memory = state >> self.shift;
        let first = out.len();
        self.inner.successors(pos, state & mask, out);
        for item in &mut out[first..] {
            let mut mem = memory;
            for (j, &p) in self.factor.positions.iter().enumerate() {
                if p == pos {
                    let c = self.inner.count(item.0) as u64;
                    mem = (mem & !(3 << (2 * j))) | c << (2 * j);
                }
            }
            item.0 |= mem << self.shift;
        }
    }
    fn count(&self, state: u64) -> u8 {
        self.inner.count(state & ((1u64 << self.shift) - 1))
    }
    fn accept(&self, state: u64) -> f64 {
        let mask = (1u64 << self.shift) - 1;
        let mem = state >> self.shift;
        let (m0, m1) = ((mem & 3) as usize, ((mem >> 2) & 3) as usize);
        self.inner.accept(state & mask) * self.factor.table[m0][m1]
    }
}

/// Wraps a chain so that its unordered genotype can be read off the state
/// at the position of its higher allele: the state remembers the first
/// position where the contributor placed an allele.
#[derive(Debug)]
pub struct Tagged {
    inner: Box<dyn GenotypeChain>,
    shift: u32,
}

pub const MAX_TAGGED_ALLELES: usize = 254;

impl Tagged {
    pub fn new(inner: Box<dyn GenotypeChain>, panel: &Panel) -> Result<Self> {
        if panel.len() > MAX_TAGGED_ALLELES {
            return Err(Error::Unsupported(format!(
                "posterior genotypes need at most {MAX_TAGGED_ALLELES} alleles per marker"
            )));
        }
        let shift = inner.bits();
        Ok(Tagged { inner, shift })
    }

    pub fn decoder(&self) -> TagDecoder {
        TagDecoder { shift: self.shift }
    }
}

/// Reads the completed genotype out of a [`Tagged`] state.
#[derive(Debug, Clone, Copy)]
pub struct TagDecoder {
    shift: u32,
}

impl TagDecoder {
    /// The genotype whose higher allele sits at `pos`, if this state is the
    /// one that completes it.
    pub fn completed(&self, pos: usize, count: u8, state: u64) -> Option<Genotype> {
        let first = (state >> self.shift) & 0xff;
        match count {
            2 => Some(Genotype::new(pos, pos)),
            1 if first != 0 && (first as usize - 1) < pos => Some(Genotype::new(first as usize - 1, pos)),
            _ => None,
        }
    }
}

impl GenotypeChain for Tagged {
    fn bits(&self) -> u32 {
        self.shift + 8
    }
    fn start(&self) -> u64 {
        self.inner.start()
    }
    fn successors(&self, pos: usize, state: u64, out: &mut Vec<(u64, f64)>) {
        let mask = (1u64 << self.shift) - 1;
        let first = state >> self.shift;
        let begin = out.len();
        self.inner.successors(pos, state & mask, out);
        for item in &mut out[begin..] {
            let f = if first == 0 && self.inner.count(item.0) > 0 {
                pos as u64 + 1
            } else {
                first
            };
            item.0 |= f << self.shift;
        }
    }
    fn count(&self, state: u64) -> u8 {
        self.inner.count(state & ((1u64 << self.shift) - 1))
    }
    fn accept(&self, state: u64) -> f64 {
        self.inner.accept(state & ((1u64 << self.shift) - 1))
    }
}

/// Genotype prior of one contributor at one marker.
#[derive(Debug, Clone, PartialEq)]
pub enum ContributorPrior {
    HardyWeinberg,
    Fixed(Genotype),
    /// IBD-replaced prior: `(position, weight)` choices of the shared allele.
    Replaced(Vec<(usize, f64)>),
    /// Hardy-Weinberg contributor with meiosis to a child of this genotype.
    Meiosis { child: Genotype },
}

/// Prior plus optional extra factor for one contributor.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainSpec {
    pub prior: ContributorPrior,
    pub factor: Option<CountFactor>,
}

impl ChainSpec {
    pub fn hardy_weinberg() -> Self {
        ChainSpec {
            prior: ContributorPrior::HardyWeinberg,
            factor: None,
        }
    }

    pub fn with_prior(prior: ContributorPrior) -> Self {
        ChainSpec { prior, factor: None }
    }

    pub fn with_factor(factor: CountFactor) -> Self {
        ChainSpec {
            prior: ContributorPrior::HardyWeinberg,
            factor: Some(factor),
        }
    }

    pub(crate) fn build(&self, clamp: Option<Genotype>, panel: &Panel) -> Result<Box<dyn GenotypeChain>> {
        let base: Box<dyn GenotypeChain> = match (clamp, &self.prior) {
            (Some(g), _) | (None, &ContributorPrior::Fixed(g)) => {
                g.check(panel)?;
                Box::new(Fixed::new(g, panel))
            }
            (None, ContributorPrior::HardyWeinberg) => Box::new(HardyWeinberg::new(panel)),
            (None, ContributorPrior::Replaced(options)) => Box::new(Replaced::new(options.clone(), panel)?),
            (None, ContributorPrior::Meiosis { child }) => {
                child.check(panel)?;
                Box::new(Meiosis::new(*child, panel))
            }
        };
        Ok(match &self.factor {
            Some(f) => Box::new(WithFactor::new(base, f.clone(), panel)?),
            None => base,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evidence::Allele;

    fn panel(freqs: &[f64]) -> Panel {
        let alleles = (0..freqs.len()).map(|i| Allele::new(&(10 + i).to_string())).collect();
        Panel::new(alleles, freqs.to_vec())
    }

    /// Enumerates complete paths of a single chain, returning the total
    /// weight per count vector.
    fn paths(chain: &dyn GenotypeChain, len: usize) -> Vec<(Vec<u8>, f64)> {
        let mut frontier = vec![(chain.start(), Vec::new(), 1.0)];
        for pos in 0..len {
            let mut next = Vec::new();
            for (s, counts, w) in frontier {
                let mut out = Vec::new();
                chain.successors(pos, s, &mut out);
                for (t, wt) in out {
                    let mut c: Vec<u8> = counts.clone();
                    c.push(chain.count(t));
                    next.push((t, c, w * wt));
                }
            }
            frontier = next;
        }
        let mut totals: Vec<(Vec<u8>, f64)> = Vec::new();
        for (s, c, w) in frontier {
            let w = w * chain.accept(s);
            if w == 0.0 {
                continue;
            }
            match totals.iter_mut().find(|(k, _)| *k == c) {
                Some(e) => e.1 += w,
                None => totals.push((c, w)),
            }
        }
        totals
    }

    fn weight_of(paths: &[(Vec<u8>, f64)], counts: &[u8]) -> f64 {
        paths.iter().find(|(c, _)| c == counts).map(|e| e.1).unwrap_or(0.0)
    }

    #[test]
    fn prior_transition_examples() {
        let p = panel(&[0.5, 0.5]);
        assert_eq!(prior_transition(2, 0, &p).unwrap(), [1.0, 0.0, 0.0]);
        assert_eq!(prior_transition(0, 0, &p).unwrap(), [0.25, 0.5, 0.25]);
        assert_eq!(prior_transition(1, 1, &p).unwrap(), [0.0, 1.0, 0.0]);
        assert!(prior_transition(3, 0, &p).is_err());
    }

    #[test]
    fn hardy_weinberg_chain_gives_hw_genotypes() {
        let q = [0.1, 0.2, 0.3, 0.4];
        let p = panel(&q);
        let all = paths(&HardyWeinberg::new(&p), 4);
        assert_eq!(all.len(), 10);
        assert!((weight_of(&all, &[2, 0, 0, 0]) - 0.01).abs() < 1e-15);
        assert!((weight_of(&all, &[0, 1, 0, 1]) - 2.0 * 0.2 * 0.4).abs() < 1e-15);
        let total: f64 = all.iter().map(|e| e.1).sum();
        assert!((total - 1.0).abs() < 1e-14);
    }

    #[test]
    fn replaced_homozygous_child() {
        // child {a', a'} with a' = position 1: the contributor is {a', X}
        let q = [0.1, 0.2, 0.3, 0.4];
        let p = panel(&q);
        let all = paths(&Replaced::new(vec![(1, 1.0)], &p).unwrap(), 4);
        for (x, qx) in q.iter().enumerate() {
            let mut c = vec![0u8; 4];
            c[1] += 1;
            c[x] += 1;
            assert!((weight_of(&all, &c) - qx).abs() < 1e-15);
        }
        assert_eq!(all.len(), 4);
    }

    #[test]
    fn meiosis_gate_rules() {
        assert_eq!(Meiosis::transmit_probability(2, 1), 1.0);
        assert_eq!(Meiosis::transmit_probability(1, 1), 0.5);
        assert_eq!(Meiosis::transmit_probability(1, 2), 1.0);
        assert_eq!(Meiosis::transmit_probability(1, 0), 0.0);
        assert_eq!(Meiosis::transmit_probability(0, 1), 0.0);
        assert_eq!(Meiosis::next_gate(1, 1, 1), 0);
        assert_eq!(Meiosis::next_gate(1, 0, 1), 2);
        assert_eq!(Meiosis::next_gate(2, 1, 1), 0);
        assert_eq!(Meiosis::next_gate(1, 1, 2), 2);
        assert_eq!(Meiosis::next_gate(0, 0, 1), 1);
    }

    #[test]
    fn meiosis_matches_mendel() {
        // weight of father genotype = HW(father) * P(child | father) with the
        // child's other allele from the population
        let q = [0.1, 0.2, 0.3, 0.4];
        let p = panel(&q);
        let child = Genotype::new(0, 2);
        let all = paths(&Meiosis::new(child, &p), 4);
        for (counts, w) in &all {
            let alleles: Vec<usize> = (0..4).flat_map(|a| std::iter::repeat_n(a, counts[a] as usize)).collect();
            let (f1, f2) = (alleles[0], alleles[1]);
            let hw = if f1 == f2 { q[f1] * q[f1] } else { 2.0 * q[f1] * q[f2] };
            let transmit = |x: usize| {
                0.5 * (if f1 == x { 1.0 } else { 0.0 }) + 0.5 * (if f2 == x { 1.0 } else { 0.0 })
            };
            let pc = transmit(0) * q[2] + transmit(2) * q[0];
            assert!((w - hw * pc).abs() < 1e-15, "{counts:?}");
        }
    }

    #[test]
    fn factor_and_tag_preserve_paths() {
        let q = [0.25, 0.25, 0.25, 0.25];
        let p = panel(&q);
        let f = CountFactor::pair(0, 2, |m0, m1| 1.0 + m0 as f64 + 10.0 * m1 as f64);
        let chain = WithFactor::new(Box::new(HardyWeinberg::new(&p)), f, &p).unwrap();
        let all = paths(&chain, 4);
        assert!((weight_of(&all, &[1, 0, 1, 0]) - 0.125 * 12.0).abs() < 1e-15);
        assert!((weight_of(&all, &[0, 2, 0, 0]) - 0.0625).abs() < 1e-15);
        let tagged = Tagged::new(Box::new(HardyWeinberg::new(&p)), &p).unwrap();
        let all_t = paths(&tagged, 4);
        assert_eq!(all_t.len(), 10);
    }
}
