//! Compiled joint chain for one marker.
//!
//! The joint state at position `a` is the tuple of contributor chain states
//! after placing counts at `a`. Compilation enumerates reachable states
//! layer by layer, drops states that cannot complete, and groups edges by
//! emission key: the count vectors at `a - 1` and `a`, which are all the
//! peak term at `a - 1` reads (its own counts plus the stutter donor's).
//! Parameters only enter through per-key emission values, so a compiled
//! model is reused across every likelihood evaluation of a fit.

use std::collections::{BTreeMap, HashMap};

use super::chain::{ChainSpec, GenotypeChain, TagDecoder, Tagged};
use super::evidence::{Genotype, MarkerEvidence};
use crate::error::{Error, Result};
use crate::evidence::Allele;
use crate::peak::{dose_at, log_term, GammaParams};
use crate::special::ln_gamma;

#[derive(Debug, Clone, Copy)]
struct Edge {
    from: u32,
    to: u32,
    key: u32,
    weight: f64,
}

#[derive(Debug, Clone)]
struct Layer {
    /// Number of states this layer leads to.
    n_to: usize,
    edges: Vec<Edge>,
    /// Emission keys as `(previous count code, next count code)`.
    keys: Vec<(u32, u32)>,
    /// For posterior layers: the target genotype completed by each state.
    tags: Vec<Option<Genotype>>,
}

/// Posterior over one contributor's unordered genotype at one marker.
#[derive(Debug, Clone, PartialEq)]
pub struct GenotypePosterior {
    pub marker: String,
    pub contributor: usize,
    pub entries: Vec<PosteriorEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorEntry {
    pub genotype: Genotype,
    pub alleles: (Allele, Allele),
    pub probability: f64,
}

impl GenotypePosterior {
    pub fn probability(&self, g: Genotype) -> f64 {
        self.entries
            .iter()
            .find(|e| e.genotype == g)
            .map(|e| e.probability)
            .unwrap_or(0.0)
    }
}

/// Parameter-dependent pieces of the peak term for every pair of count
/// codes (own counts, donor counts or none), built once per parameter
/// vector and shared by all markers.
#[derive(Debug, Clone)]
pub struct EmissionTable {
    width: usize,
    traces: Vec<Option<TraceTable>>,
}

#[derive(Debug, Clone)]
struct TraceTable {
    threshold: f64,
    eta: f64,
    ln_eta: f64,
    shape: Vec<f64>,
    ln_gamma_shape: Vec<f64>,
    ln_cdf: Vec<f64>,
}

/// Beyond this many contributors terms are evaluated directly.
const MAX_TABLE_CONTRIBUTORS: usize = 4;

impl EmissionTable {
    /// `thresholds[t]` is trace `t`'s detection threshold, `None` when the
    /// trace types no marker.
    pub fn new(params: &[GammaParams], thresholds: &[Option<f64>], n_contrib: usize) -> Self {
        let codes = 3usize.pow(n_contrib as u32);
        let width = codes + 1;
        let digits: Vec<Vec<u8>> = (0..codes)
            .map(|code| (0..n_contrib).map(|i| ((code / 3usize.pow(i as u32)) % 3) as u8).collect())
            .collect();
        let traces = params
            .iter()
            .zip(thresholds)
            .map(|(p, c)| {
                let c = (*c)?;
                if n_contrib > MAX_TABLE_CONTRIBUTORS {
                    return None;
                }
                let mut shape = Vec::with_capacity(codes * width);
                for here in &digits {
                    shape.push(p.rho * dose_at(here, None, &p.phi, p.xi));
                    for above in &digits {
                        shape.push(p.rho * dose_at(here, Some(above), &p.phi, p.xi));
                    }
                }
                let ln_gamma_shape = shape
                    .iter()
                    .map(|&k| if k > 0.0 { ln_gamma(k) } else { 0.0 })
                    .collect();
                let ln_cdf = shape.iter().map(|&k| log_term(None, c, k, p.eta)).collect();
                Some(TraceTable {
                    threshold: c,
                    eta: p.eta,
                    ln_eta: p.eta.ln(),
                    shape,
                    ln_gamma_shape,
                    ln_cdf,
                })
            })
            .collect();
        EmissionTable { width, traces }
    }
}

#[derive(Debug, Clone)]
pub struct MarkerModel {
    evidence: MarkerEvidence,
    n_contrib: usize,
    /// `A + 1` layers; empty when no configuration has positive prior weight.
    layers: Vec<Layer>,
    target: Option<usize>,
    digits: Vec<Vec<u8>>,
}

fn ln_sum_exp(values: &[f64]) -> f64 {
    let m = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + values.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

impl MarkerModel {
    /// Compiles the joint chain. `priors` holds one spec per contributor;
    /// clamps in the evidence override the prior of that contributor.
    /// With `target` set, that contributor's chain is tagged so
    /// [`MarkerModel::posterior`] can read off its genotype.
    pub fn compile(evidence: &MarkerEvidence, priors: &[ChainSpec], target: Option<usize>) -> Result<Self> {
        let n_contrib = evidence.n_contributors();
        if priors.len() != n_contrib {
            return Err(Error::Invariant(format!(
                "{} priors for {} contributors",
                priors.len(),
                n_contrib
            )));
        }
        if n_contrib == 0 || n_contrib > 6 {
            return Err(Error::Unsupported(format!("{n_contrib} contributors; 1 to 6 are supported")));
        }
        if let Some(t) = target {
            if t >= n_contrib {
                return Err(Error::Invariant(format!("target contributor {t} out of range")));
            }
        }
        let panel = &evidence.panel;
        let a_len = panel.len();

        let mut chains: Vec<Box<dyn GenotypeChain>> = Vec::with_capacity(n_contrib);
        let mut decoder: Option<TagDecoder> = None;
        for (i, spec) in priors.iter().enumerate() {
            let c = spec.build(evidence.clamps[i], panel)?;
            if target == Some(i) {
                let tagged = Tagged::new(c, panel)?;
                decoder = Some(tagged.decoder());
                chains.push(Box::new(tagged));
            } else {
                chains.push(c);
            }
        }
        let mut offsets = Vec::with_capacity(n_contrib);
        let mut total_bits = 0u32;
        for c in &chains {
            offsets.push(total_bits);
            total_bits += c.bits();
        }
        if total_bits > 128 {
            return Err(Error::Unsupported(format!("joint state needs {total_bits} bits")));
        }
        let masks: Vec<u128> = chains.iter().map(|c| (1u128 << c.bits()) - 1).collect();
        let part = |key: u128, i: usize| ((key >> offsets[i]) & masks[i]) as u64;

        let pow3: Vec<u32> = (0..=n_contrib).map(|i| 3u32.pow(i as u32)).collect();
        let digits: Vec<Vec<u8>> = (0..pow3[n_contrib])
            .map(|code| (0..n_contrib).map(|i| ((code / pow3[i]) % 3) as u8).collect())
            .collect();

        let start: u128 = chains
            .iter()
            .enumerate()
            .fold(0u128, |acc, (i, c)| acc | (c.start() as u128) << offsets[i]);

        // levels[l]: joint keys and count codes of states before layer l
        let mut level_keys: Vec<u128> = vec![start];
        let mut level_codes: Vec<u32> = vec![0];
        let mut layers: Vec<Layer> = Vec::with_capacity(a_len + 1);
        let mut succ: Vec<Vec<(u64, f64)>> = vec![Vec::new(); n_contrib];

        for pos in 0..a_len {
            let mut index: HashMap<u128, u32> = HashMap::new();
            let mut next_keys: Vec<u128> = Vec::new();
            let mut next_codes: Vec<u32> = Vec::new();
            let mut tags: Vec<Option<Genotype>> = Vec::new();
            let mut key_index: HashMap<(u32, u32), u32> = HashMap::new();
            let mut keys: Vec<(u32, u32)> = Vec::new();
            let mut edges = Vec::new();
            for (from, (&key, &code)) in level_keys.iter().zip(&level_codes).enumerate() {
                let mut any_empty = false;
                for (i, c) in chains.iter().enumerate() {
                    succ[i].clear();
                    c.successors(pos, part(key, i), &mut succ[i]);
                    any_empty |= succ[i].is_empty();
                }
                if any_empty {
                    continue;
                }
                // cartesian product over contributors
                let mut idx = vec![0usize; n_contrib];
                loop {
                    let mut joint = 0u128;
                    let mut w = 1.0;
                    let mut next_code = 0u32;
                    for i in 0..n_contrib {
                        let (s, wi) = succ[i][idx[i]];
                        joint |= (s as u128) << offsets[i];
                        w *= wi;
                        next_code += chains[i].count(s) as u32 * pow3[i];
                    }
                    if w > 0.0 {
                        let to = *index.entry(joint).or_insert_with(|| {
                            next_keys.push(joint);
                            next_codes.push(next_code);
                            if let (Some(t), Some(d)) = (target, decoder) {
                                let s = part(joint, t);
                                tags.push(d.completed(pos, chains[t].count(s), s));
                            }
                            (next_keys.len() - 1) as u32
                        });
                        let k = *key_index.entry((code, next_code)).or_insert_with(|| {
                            keys.push((code, next_code));
                            (keys.len() - 1) as u32
                        });
                        edges.push(Edge {
                            from: from as u32,
                            to,
                            key: k,
                            weight: w,
                        });
                    }
                    // advance the odometer
                    let mut i = 0;
                    loop {
                        if i == n_contrib {
                            break;
                        }
                        idx[i] += 1;
                        if idx[i] < succ[i].len() {
                            break;
                        }
                        idx[i] = 0;
                        i += 1;
                    }
                    if i == n_contrib {
                        break;
                    }
                }
            }
            layers.push(Layer {
                n_to: next_keys.len(),
                edges,
                keys,
                tags,
            });
            level_keys = next_keys;
            level_codes = next_codes;
        }

        // terminal layer
        let mut keys: Vec<(u32, u32)> = Vec::new();
        let mut key_index: HashMap<(u32, u32), u32> = HashMap::new();
        let mut edges = Vec::new();
        for (from, (&key, &code)) in level_keys.iter().zip(&level_codes).enumerate() {
            let w: f64 = chains.iter().enumerate().map(|(i, c)| c.accept(part(key, i))).product();
            if w > 0.0 {
                let k = *key_index.entry((code, 0)).or_insert_with(|| {
                    keys.push((code, 0));
                    (keys.len() - 1) as u32
                });
                edges.push(Edge {
                    from: from as u32,
                    to: 0,
                    key: k,
                    weight: w,
                });
            }
        }
        layers.push(Layer {
            n_to: 1,
            edges,
            keys,
            tags: Vec::new(),
        });

        let mut model = MarkerModel {
            evidence: evidence.clone(),
            n_contrib,
            layers,
            target,
            digits,
        };
        model.prune();
        Ok(model)
    }

    /// Removes states that cannot reach the terminal state (or be reached),
    /// and emission keys no longer used.
    fn prune(&mut self) {
        let n_layers = self.layers.len();
        // alive[l] over the states entering layer l (level l); level n_layers is terminal
        let mut alive: Vec<Vec<bool>> = Vec::with_capacity(n_layers + 1);
        alive.push(vec![true]);
        for l in &self.layers {
            let mut v = vec![false; l.n_to];
            let prev = alive.last().unwrap();
            for e in &l.edges {
                if prev[e.from as usize] {
                    v[e.to as usize] = true;
                }
            }
            alive.push(v);
        }
        // backward reachability
        let mut co: Vec<bool> = vec![alive[n_layers][0]];
        for l in (0..n_layers).rev() {
            let layer = &self.layers[l];
            let mut v = vec![false; alive[l].len()];
            for e in &layer.edges {
                if co[e.to as usize] && alive[l][e.from as usize] {
                    v[e.from as usize] = true;
                }
            }
            alive[l + 1] = co;
            co = v;
        }
        alive[0] = co;
        if !alive[0][0] {
            self.layers.clear();
            return;
        }
        let remap: Vec<Vec<u32>> = alive
            .iter()
            .map(|v| {
                let mut next = 0u32;
                v.iter()
                    .map(|&a| {
                        if a {
                            next += 1;
                            next - 1
                        } else {
                            u32::MAX
                        }
                    })
                    .collect()
            })
            .collect();
        for (l, layer) in self.layers.iter_mut().enumerate() {
            let mut used = vec![u32::MAX; layer.keys.len()];
            let mut keys = Vec::new();
            let mut edges = Vec::with_capacity(layer.edges.len());
            for e in &layer.edges {
                let f = remap[l][e.from as usize];
                let t = remap[l + 1][e.to as usize];
                if f == u32::MAX || t == u32::MAX {
                    continue;
                }
                if used[e.key as usize] == u32::MAX {
                    used[e.key as usize] = keys.len() as u32;
                    keys.push(layer.keys[e.key as usize]);
                }
                edges.push(Edge {
                    from: f,
                    to: t,
                    key: used[e.key as usize],
                    weight: e.weight,
                });
            }
            if !layer.tags.is_empty() {
                layer.tags = layer
                    .tags
                    .iter()
                    .zip(&alive[l + 1])
                    .filter(|(_, &a)| a)
                    .map(|(t, _)| *t)
                    .collect();
            }
            layer.n_to = alive[l + 1].iter().filter(|&&a| a).count();
            layer.edges = edges;
            layer.keys = keys;
        }
    }

    pub fn evidence(&self) -> &MarkerEvidence {
        &self.evidence
    }

    /// True when no genotype configuration has positive prior weight.
    pub fn is_impossible(&self) -> bool {
        self.layers.is_empty()
    }

    /// Number of joint states after pruning (diagnostic).
    pub fn n_states(&self) -> usize {
        self.layers.iter().map(|l| l.n_to).sum()
    }

    fn check_params(&self, params: &[GammaParams]) -> Result<()> {
        if params.len() != self.evidence.n_traces() {
            return Err(Error::Invariant(format!(
                "{} parameter sets for {} traces",
                params.len(),
                self.evidence.n_traces()
            )));
        }
        for p in params {
            if p.phi.len() != self.n_contrib {
                return Err(Error::Invariant(format!(
                    "{} fractions for {} contributors",
                    p.phi.len(),
                    self.n_contrib
                )));
            }
            if !(p.rho > 0.0 && p.eta > 0.0 && (0.0..1.0).contains(&p.xi)) {
                return Err(Error::Domain(format!("invalid parameters {p:?}")));
            }
        }
        Ok(())
    }

    /// Log emission per key of layer `l` (layer `l >= 1` emits position `l - 1`).
    fn emissions(&self, l: usize, params: &[GammaParams], table: &EmissionTable) -> Vec<f64> {
        let layer = &self.layers[l];
        if l == 0 || !self.evidence.has_peak_data() {
            return vec![0.0; layer.keys.len()];
        }
        let pos = l - 1;
        let stutter = self.evidence.panel.stutter_from_above(pos);
        layer
            .keys
            .iter()
            .map(|&(prev, next)| {
                let idx = prev as usize * table.width + if stutter { next as usize + 1 } else { 0 };
                let mut total = 0.0;
                for ((obs, p), tt) in self.evidence.traces.iter().zip(params).zip(&table.traces) {
                    let Some(o) = obs else { continue };
                    match tt {
                        Some(tt) if tt.threshold == o.threshold => {
                            let shape = tt.shape[idx];
                            total += match o.heights[pos] {
                                None => tt.ln_cdf[idx],
                                Some(_) if shape <= 0.0 => f64::NEG_INFINITY,
                                Some(z) => {
                                    (shape - 1.0) * z.ln() - z / tt.eta - shape * tt.ln_eta - tt.ln_gamma_shape[idx]
                                }
                            };
                        }
                        _ => {
                            let here = &self.digits[prev as usize];
                            let above = stutter.then(|| self.digits[next as usize].as_slice());
                            let dose = dose_at(here, above, &p.phi, p.xi);
                            total += log_term(o.heights[pos], o.threshold, p.rho * dose, p.eta);
                        }
                    }
                }
                total
            })
            .collect()
    }

    /// Emission table for this marker's thresholds.
    pub fn emission_table(&self, params: &[GammaParams]) -> EmissionTable {
        let thresholds: Vec<Option<f64>> = self.evidence.traces.iter().map(|t| t.as_ref().map(|o| o.threshold)).collect();
        EmissionTable::new(params, &thresholds, self.n_contrib)
    }

    /// Marker log-likelihood `log sum_n P(n) prod_t prod_a L_a(z | n)`.
    pub fn log_likelihood(&self, params: &[GammaParams]) -> Result<f64> {
        self.check_params(params)?;
        let table = self.emission_table(params);
        self.log_likelihood_with(params, &table)
    }

    /// As [`MarkerModel::log_likelihood`] with a prebuilt emission table.
    pub fn log_likelihood_with(&self, params: &[GammaParams], table: &EmissionTable) -> Result<f64> {
        self.check_params(params)?;
        if self.layers.is_empty() {
            return Ok(f64::NEG_INFINITY);
        }
        let mut alpha = vec![1.0f64];
        let mut log_scale = 0.0;
        for (l, layer) in self.layers.iter().enumerate() {
            let le = self.emissions(l, params, table);
            let shift = le.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if shift == f64::NEG_INFINITY {
                return Ok(f64::NEG_INFINITY);
            }
            let em: Vec<f64> = le.iter().map(|v| (v - shift).exp()).collect();
            let mut next = vec![0.0f64; layer.n_to];
            for e in &layer.edges {
                next[e.to as usize] += alpha[e.from as usize] * e.weight * em[e.key as usize];
            }
            let sum: f64 = next.iter().sum();
            if sum > 0.0 && sum.is_finite() && sum > 1e-280 {
                for v in &mut next {
                    *v /= sum;
                }
                alpha = next;
                log_scale += shift + sum.ln();
            } else {
                // underflow: redo this layer in log space
                let la: Vec<f64> = alpha.iter().map(|v| v.ln()).collect();
                let lnext = self.log_step(layer, &la, &le);
                let m = lnext.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                if m == f64::NEG_INFINITY {
                    return Ok(f64::NEG_INFINITY);
                }
                let mut next: Vec<f64> = lnext.iter().map(|v| (v - m).exp()).collect();
                let s: f64 = next.iter().sum();
                for v in &mut next {
                    *v /= s;
                }
                alpha = next;
                log_scale += m + s.ln();
            }
        }
        Ok(log_scale)
    }

    /// One forward step in log space.
    fn log_step(&self, layer: &Layer, la: &[f64], le: &[f64]) -> Vec<f64> {
        let mut terms: Vec<Vec<f64>> = vec![Vec::new(); layer.n_to];
        for e in &layer.edges {
            terms[e.to as usize].push(la[e.from as usize] + e.weight.ln() + le[e.key as usize]);
        }
        terms.iter().map(|t| ln_sum_exp(t)).collect()
    }

    /// Full forward pass in log space (reference path, slower).
    pub fn log_likelihood_log_domain(&self, params: &[GammaParams]) -> Result<f64> {
        self.check_params(params)?;
        if self.layers.is_empty() {
            return Ok(f64::NEG_INFINITY);
        }
        let table = self.emission_table(params);
        let mut la = vec![0.0];
        for (l, layer) in self.layers.iter().enumerate() {
            let le = self.emissions(l, params, &table);
            la = self.log_step(layer, &la, &le);
        }
        Ok(la[0])
    }

    /// Exact posterior over the target contributor's genotype.
    pub fn posterior(&self, params: &[GammaParams]) -> Result<GenotypePosterior> {
        self.check_params(params)?;
        let target = self
            .target
            .ok_or_else(|| Error::Invariant("posterior requested from a model without a target".into()))?;
        let no_config = || Error::NoConsistentGenotype {
            marker: self.evidence.marker.clone(),
        };
        if self.layers.is_empty() {
            return Err(no_config());
        }
        let table = self.emission_table(params);
        let les: Vec<Vec<f64>> = (0..self.layers.len()).map(|l| self.emissions(l, params, &table)).collect();
        // forward
        let mut alphas: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len() + 1);
        alphas.push(vec![0.0]);
        for (l, layer) in self.layers.iter().enumerate() {
            let next = self.log_step(layer, alphas.last().unwrap(), &les[l]);
            alphas.push(next);
        }
        let log_z = alphas[self.layers.len()][0];
        if log_z == f64::NEG_INFINITY || log_z.is_nan() {
            return Err(no_config());
        }
        // backward
        let mut betas: Vec<Vec<f64>> = vec![Vec::new(); self.layers.len() + 1];
        betas[self.layers.len()] = vec![0.0];
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let n_from = alphas[l].len();
            let mut terms: Vec<Vec<f64>> = vec![Vec::new(); n_from];
            for e in &layer.edges {
                terms[e.from as usize].push(e.weight.ln() + les[l][e.key as usize] + betas[l + 1][e.to as usize]);
            }
            betas[l] = terms.iter().map(|t| ln_sum_exp(t)).collect();
        }
        let mut probs: BTreeMap<Genotype, f64> = BTreeMap::new();
        for (l, layer) in self.layers.iter().enumerate() {
            for (s, tag) in layer.tags.iter().enumerate() {
                if let Some(g) = tag {
                    let v = (alphas[l + 1][s] + betas[l + 1][s] - log_z).exp();
                    *probs.entry(*g).or_insert(0.0) += v;
                }
            }
        }
        let total: f64 = probs.values().sum();
        if !(total > 0.0) {
            return Err(no_config());
        }
        let panel = &self.evidence.panel;
        let entries = probs
            .into_iter()
            .map(|(g, p)| {
                let (a, b) = g.labels(panel);
                PosteriorEntry {
                    genotype: g,
                    alleles: (a.clone(), b.clone()),
                    probability: p / total,
                }
            })
            .collect();
        Ok(GenotypePosterior {
            marker: self.evidence.marker.clone(),
            contributor: target,
            entries,
        })
    }
}
