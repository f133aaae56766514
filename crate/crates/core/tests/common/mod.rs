//! Independent oracles: exhaustive enumeration of genotype combinations with
//! statrs gamma distributions.

#![allow(dead_code)]

use mixkin_core::engine::{Genotype, MarkerEvidence, Panel, TraceObservation};
use mixkin_core::evidence::Allele;
use mixkin_core::peak::GammaParams;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{Continuous, ContinuousCDF, Gamma};

pub fn genotypes(len: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for a in 0..len {
        for b in a..len {
            out.push((a, b));
        }
    }
    out
}

pub fn hw(g: (usize, usize), q: &[f64]) -> f64 {
    if g.0 == g.1 {
        q[g.0] * q[g.0]
    } else {
        2.0 * q[g.0] * q[g.1]
    }
}

pub fn count(g: (usize, usize), a: usize) -> f64 {
    (g.0 == a) as u8 as f64 + (g.1 == a) as u8 as f64
}

pub fn ln_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn gamma_term(z: Option<f64>, c: f64, shape: f64, scale: f64) -> f64 {
    let observed = z.filter(|h| *h >= c);
    if shape == 0.0 {
        return if observed.is_some() { f64::NEG_INFINITY } else { 0.0 };
    }
    let g = Gamma::new(shape, 1.0 / scale).unwrap();
    match observed {
        Some(h) => g.ln_pdf(h),
        None => g.cdf(c).ln(),
    }
}

/// Log of the peak-data likelihood for a fixed tuple of genotypes.
pub fn evidence_log_term(ev: &MarkerEvidence, params: &[GammaParams], gts: &[(usize, usize)]) -> f64 {
    let panel = &ev.panel;
    let n = panel.len();
    let mut total = 0.0;
    for (obs, p) in ev.traces.iter().zip(params) {
        let Some(obs) = obs else { continue };
        for a in 0..n {
            let own: f64 = gts.iter().zip(&p.phi).map(|(g, f)| f * count(*g, a)).sum();
            let linked = a + 1 < n && panel.alleles()[a].is_one_unit_below(&panel.alleles()[a + 1]);
            let donor: f64 = if linked {
                gts.iter().zip(&p.phi).map(|(g, f)| f * count(*g, a + 1)).sum()
            } else {
                0.0
            };
            let dose = (1.0 - p.xi) * own + p.xi * donor;
            total += gamma_term(obs.heights[a], obs.threshold, p.rho * dose, p.eta);
        }
    }
    total
}

/// Enumerates ordered genotype tuples. `prior(i, g)` is contributor `i`'s
/// prior weight for `g`; clamps in the evidence override it.
pub fn enumerate<F>(ev: &MarkerEvidence, mut visit: F, prior: &dyn Fn(usize, (usize, usize)) -> f64)
where
    F: FnMut(&[(usize, usize)], f64),
{
    let all = genotypes(ev.panel.len());
    let k = ev.n_contributors();
    let mut idx = vec![0usize; k];
    loop {
        let gts: Vec<(usize, usize)> = idx.iter().map(|&i| all[i]).collect();
        let mut w = 1.0;
        for (i, g) in gts.iter().enumerate() {
            w *= match ev.clamps[i] {
                Some(c) => ((c.low, c.high) == *g) as u8 as f64,
                None => prior(i, *g),
            };
        }
        if w > 0.0 {
            visit(&gts, w);
        }
        let mut j = 0;
        while j < k {
            idx[j] += 1;
            if idx[j] < all.len() {
                break;
            }
            idx[j] = 0;
            j += 1;
        }
        if j == k {
            break;
        }
    }
}

pub fn brute_log_likelihood(
    ev: &MarkerEvidence,
    params: &[GammaParams],
    prior: &dyn Fn(usize, (usize, usize)) -> f64,
) -> f64 {
    let mut terms = Vec::new();
    enumerate(
        ev,
        |gts, w| terms.push(w.ln() + evidence_log_term(ev, params, gts)),
        prior,
    );
    ln_sum_exp(&terms)
}

pub fn brute_hw_log_likelihood(ev: &MarkerEvidence, params: &[GammaParams]) -> f64 {
    let q = ev.panel.freqs().to_vec();
    brute_log_likelihood(ev, params, &|_, g| hw(g, &q))
}

/// Posterior of contributor `target` by enumeration.
pub fn brute_posterior(
    ev: &MarkerEvidence,
    params: &[GammaParams],
    prior: &dyn Fn(usize, (usize, usize)) -> f64,
    target: usize,
) -> Vec<((usize, usize), f64)> {
    let mut terms: Vec<((usize, usize), f64)> = Vec::new();
    enumerate(
        ev,
        |gts, w| terms.push((gts[target], w.ln() + evidence_log_term(ev, params, gts))),
        prior,
    );
    let all: Vec<f64> = terms.iter().map(|t| t.1).collect();
    let z = ln_sum_exp(&all);
    let mut out: Vec<((usize, usize), f64)> = Vec::new();
    for (g, l) in terms {
        let p = (l - z).exp();
        match out.iter_mut().find(|e| e.0 == g) {
            Some(e) => e.1 += p,
            None => out.push((g, p)),
        }
    }
    out.sort_by(|a, b| a.0.cmp(&b.0));
    out
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    if a == b {
        return true;
    }
    if !a.is_finite() || !b.is_finite() {
        return false;
    }
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

/// A random marker instance.
pub struct Instance {
    pub evidence: MarkerEvidence,
    pub params: Vec<GammaParams>,
}

pub fn random_panel(rng: &mut ChaCha8Rng, len: usize) -> Panel {
    let mut labels = Vec::new();
    let mut units = 8 + rng.random_range(0..5u32);
    for _ in 0..len {
        // mostly consecutive repeats, sometimes a gap or a microvariant
        let r: f64 = rng.random();
        let label = if r < 0.15 { format!("{units}.2") } else { units.to_string() };
        labels.push(label);
        units += if rng.random::<f64>() < 0.2 { 2 } else { 1 };
    }
    let raw: Vec<f64> = (0..len).map(|_| 0.05 + rng.random::<f64>()).collect();
    let s: f64 = raw.iter().sum();
    let alleles: Vec<Allele> = labels.iter().map(|l| Allele::new(l)).collect();
    let mut pairs: Vec<(Allele, f64)> = alleles.into_iter().zip(raw.iter().map(|x| x / s)).collect();
    pairs.sort_by(|a, b| a.0.cmp(&b.0));
    Panel::new(pairs.iter().map(|p| p.0.clone()).collect(), pairs.iter().map(|p| p.1).collect())
}

pub fn random_params(rng: &mut ChaCha8Rng, n_contrib: usize) -> GammaParams {
    let mu = rng.random_range(200.0..2000.0);
    let sigma: f64 = rng.random_range(0.2..1.2);
    let xi = if rng.random::<f64>() < 0.3 { 0.0 } else { rng.random_range(0.0..0.2) };
    let raw: Vec<f64> = (0..n_contrib).map(|_| 0.05 + rng.random::<f64>()).collect();
    let s: f64 = raw.iter().sum();
    GammaParams {
        rho: 1.0 / (sigma * sigma),
        eta: mu * sigma * sigma,
        xi,
        phi: raw.iter().map(|x| x / s).collect(),
    }
}

/// Heights drawn from a plausible genotype configuration so that most
/// instances have finite likelihood, with random dropouts and sub-threshold
/// recordings.
pub fn random_instance(seed: u64, max_contrib: usize, max_alleles: usize, max_traces: usize) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_contrib = rng.random_range(1..=max_contrib);
    let len = rng.random_range(1..=max_alleles);
    let n_traces = rng.random_range(1..=max_traces);
    let panel = random_panel(&mut rng, len);
    let truth: Vec<(usize, usize)> = (0..n_contrib)
        .map(|_| {
            let a = rng.random_range(0..len);
            let b = rng.random_range(0..len);
            (a.min(b), a.max(b))
        })
        .collect();
    let params: Vec<GammaParams> = (0..n_traces).map(|_| random_params(&mut rng, n_contrib)).collect();
    let mut traces = Vec::new();
    for p in &params {
        if n_traces > 1 && rng.random::<f64>() < 0.15 {
            traces.push(None);
            continue;
        }
        let c = rng.random_range(20.0..100.0);
        let mu = p.rho * p.eta;
        let heights = (0..len)
            .map(|a| {
                let carried: f64 = truth.iter().zip(&p.phi).map(|(g, f)| f * count(*g, a)).sum();
                let r: f64 = rng.random();
                if carried == 0.0 || r < 0.2 {
                    if rng.random::<f64>() < 0.3 {
                        Some(rng.random_range(0.0..c))
                    } else {
                        None
                    }
                } else {
                    Some(c + rng.random::<f64>() * mu * carried * 1.5)
                }
            })
            .collect();
        traces.push(Some(TraceObservation::new(c, heights).unwrap()));
    }
    let clamps = (0..n_contrib)
        .map(|i| {
            if rng.random::<f64>() < 0.2 {
                Some(Genotype::new(truth[i].0, truth[i].1))
            } else {
                None
            }
        })
        .collect();
    let evidence = MarkerEvidence::new("M", panel, traces, clamps).unwrap();
    Instance { evidence, params }
}
