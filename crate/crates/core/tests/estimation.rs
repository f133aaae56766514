use mixkin_core::engine::{CaseEvidence, CaseModel};
use mixkin_core::estimation::{fit, null_mle_context, read_params_csv, FitOptions};
use mixkin_core::evidence::{CaseBundle, CaseOptions, Contributor, GenotypeProfile};
use mixkin_core::peak::ModelParams;
use mixkin_core::simulate::{equifrequent_panel, GenotypeSource, SimPerson, SimScenario, SimTrace};

fn scenario(seed: u64, markers: usize, params: Vec<ModelParams>, people: usize) -> SimScenario {
    SimScenario {
        frequencies: equifrequent_panel(markers, 6, 10).unwrap(),
        people: (0..people)
            .map(|i| SimPerson {
                id: format!("P{}", i + 1),
                source: GenotypeSource::HardyWeinberg,
            })
            .collect(),
        contributors: (0..people).map(|i| format!("P{}", i + 1)).collect(),
        traces: params
            .into_iter()
            .enumerate()
            .map(|(t, params)| SimTrace {
                id: format!("T{}", t + 1),
                params,
                threshold: 50.0,
            })
            .collect(),
        seed,
    }
}

/// Builds a case in which the listed contributors are typed.
fn case_from(s: &SimScenario, typed: &[usize]) -> (CaseBundle, Vec<GenotypeProfile>) {
    let sim = s.run().unwrap();
    let profiles: Vec<GenotypeProfile> = typed.iter().map(|&i| sim.people[i].clone()).collect();
    let roster = s
        .contributors
        .iter()
        .enumerate()
        .map(|(i, id)| Contributor {
            id: format!("C{}", i + 1),
            profile: typed.contains(&i).then(|| id.clone()),
            sex: None,
        })
        .collect();
    let case = CaseBundle::assemble(
        s.frequencies.clone(),
        sim.traces,
        profiles,
        roster,
        CaseOptions::default(),
    )
    .unwrap();
    (case, sim.people)
}

fn quick() -> FitOptions {
    FitOptions {
        restarts: 1,
        seed: 3,
        max_evaluations: 3000,
    }
}

#[test]
fn single_source_round_trip() {
    let truth = ModelParams {
        mu: 800.0,
        sigma: 0.6,
        xi: 0.05,
        phi: vec![1.0],
    };
    let s = scenario(11, 200, vec![truth], 1);
    let (case, _) = case_from(&s, &[]);
    let f = fit(&case, &quick()).unwrap();
    let p = &f.params[0];
    assert!((p.mu / 800.0 - 1.0).abs() < 0.1, "{p:?}");
    assert!((p.sigma / 0.6 - 1.0).abs() < 0.15, "{p:?}");
    assert!((p.xi - 0.05).abs() < 0.03, "{p:?}");
    assert!(f.converged, "gradient norm {}", f.gradient_norm);
    assert!(f.gradient_norm <= f.gradient_tolerance());
    let se = &f.standard_errors[0];
    assert!(se.mu.unwrap() > 0.0 && se.sigma.unwrap() > 0.0 && se.xi.unwrap() > 0.0);
    assert_eq!(se.phi, vec![None]);
}

#[test]
fn clamped_contributor_without_stutter() {
    let truth = ModelParams {
        mu: 1500.0,
        sigma: 0.4,
        xi: 0.0,
        phi: vec![1.0],
    };
    let s = scenario(5, 200, vec![truth], 1);
    let (case, _) = case_from(&s, &[0]);
    let f = fit(&case, &quick()).unwrap();
    assert!((f.params[0].mu / 1500.0 - 1.0).abs() < 0.1, "{:?}", f.params[0]);
    // stutter is absent from the data, so xi should land on the boundary
    assert!(f.params[0].xi < 0.01);
    if f.boundary[0].xi {
        assert_eq!(f.params[0].xi, 0.0);
        assert_eq!(f.standard_errors[0].xi, None);
    }
}

#[test]
fn reported_likelihood_matches_engine_and_is_deterministic() {
    let params = vec![
        ModelParams {
            mu: 1000.0,
            sigma: 0.5,
            xi: 0.04,
            phi: vec![0.7, 0.3],
        },
        ModelParams {
            mu: 600.0,
            sigma: 0.7,
            xi: 0.06,
            phi: vec![0.6, 0.4],
        },
    ];
    let s = scenario(21, 25, params, 2);
    let (case, _) = case_from(&s, &[]);
    let a = fit(&case, &quick()).unwrap();
    let b = fit(&case, &quick()).unwrap();
    assert_eq!(a, b);

    let ev = CaseEvidence::from_case(&case).unwrap();
    let model = CaseModel::null(&ev).unwrap();
    let recomputed = model.log_likelihood(&a.gamma_params()).unwrap();
    assert!((recomputed - a.log_likelihood).abs() <= 1e-10 * a.log_likelihood.abs());

    // unknowns relabeled by descending fraction in the first trace
    assert!(a.params[0].phi[0] >= a.params[0].phi[1]);
    for p in &a.params {
        assert!((p.phi.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.sigma > 0.0 && (0.0..1.0).contains(&p.xi));
    }

    let mut buf = Vec::new();
    a.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf.clone()).unwrap();
    assert!(text.starts_with("trace,parameter,estimate,se\n"));
    assert!(text.contains("T2,phi_C2,"));
    let back = read_params_csv(&buf[..], "fit.csv".as_ref(), &a.trace_ids, &a.contributor_ids).unwrap();
    assert_eq!(back, a.params);

    let ctx = null_mle_context(&a).unwrap();
    assert_eq!(ctx.params(), a.params.as_slice());
}

#[test]
fn case_without_peaks_is_rejected() {
    let truth = ModelParams {
        mu: 1.0,
        sigma: 0.5,
        xi: 0.0,
        phi: vec![1.0],
    };
    let s = scenario(2, 3, vec![truth], 1);
    let (mut case, _) = case_from(&s, &[]);
    for m in &mut case.traces[0].markers {
        m.peaks.clear();
    }
    assert!(fit(&case, &quick()).is_err());
}
