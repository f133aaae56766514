mod common;

use common::{brute_posterior, hw, random_instance};
use mixkin_core::deconvolution::{rank_genotypes, write_csv, TopK};
use mixkin_core::engine::{marker_posterior, null_priors};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn ranking_is_a_sorted_permutation_of_the_posterior(seed in 0u64..1_000_000, k in 1usize..6) {
        let inst = random_instance(seed, 3, 4, 2);
        let ev = &inst.evidence;
        let target = (seed as usize) % ev.n_contributors();
        let Ok(post) = marker_posterior(ev, &inst.params, &null_priors(ev.n_contributors()), target) else {
            return Ok(());
        };
        let all = rank_genotypes(&post, TopK::All);
        prop_assert_eq!(all.entries.len(), post.entries.len());
        let total: f64 = all.entries.iter().map(|e| e.probability).sum();
        prop_assert!((total - 1.0).abs() < 1e-9);
        for w in all.entries.windows(2) {
            prop_assert!(w[0].probability > w[1].probability
                || (w[0].probability == w[1].probability && w[0].alleles < w[1].alleles));
        }
        for e in &all.entries {
            prop_assert_eq!(post.probability(e.genotype), e.probability);
        }
        let top = rank_genotypes(&post, TopK::Count(k));
        prop_assert_eq!(&top.entries[..], &all.entries[..k.min(all.entries.len())]);

        // probabilities agree with enumeration
        let q = ev.panel.freqs().to_vec();
        let oracle = brute_posterior(ev, &inst.params, &|_, g| hw(g, &q), target);
        for (g, p) in oracle {
            let e = all.entries.iter().find(|e| (e.genotype.low, e.genotype.high) == g);
            prop_assert!((e.map_or(0.0, |e| e.probability) - p).abs() < 1e-9);
        }
    }
}

#[test]
fn csv_layout() {
    let inst = random_instance(4, 2, 3, 1);
    let ev = &inst.evidence;
    let post = marker_posterior(ev, &inst.params, &null_priors(ev.n_contributors()), 0).unwrap();
    let ranked = vec![rank_genotypes(&post, TopK::Count(2))];
    let ids: Vec<String> = (0..ev.n_contributors()).map(|i| format!("U{}", i + 1)).collect();
    let mut buf = Vec::new();
    write_csv(&ranked, &ids, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "marker,contributor,rank,allele1,allele2,probability,compatible");
    let first: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(first[1], "U1");
    assert_eq!(first[2], "1");
    assert_eq!(first[6], "NA");
}
