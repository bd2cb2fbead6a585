use super::*;
use crate::model::{CutpointMode, Dimensions, Variant};

fn tiny(variant: Variant, mode: CutpointMode) -> (ModelSpec, SurveyDataset, AdjacencyGraph) {
    let spec = ModelSpec::new(
        variant,
        mode,
        false,
        Dimensions {
            categories: 4,
            variables: 2,
            cells: 2,
            areas: 4,
        },
    )
    .unwrap();
    let n = 60;
    let responses = (0..n)
        .flat_map(|i| {
            let a = ((i * 7) % 4) as u16;
            [
                Some(a),
                if i % 5 == 0 {
                    None
                } else {
                    Some((a + (i % 2) as u16).min(3))
                },
            ]
        })
        .collect();
    let data = SurveyDataset::new(
        2,
        4,
        2,
        4,
        (0..n).map(|i| format!("r{i}")).collect(),
        (0..n).map(|i| i % 2).collect(),
        (0..n).map(|i| (i / 3) % 4).collect(),
        responses,
    )
    .unwrap();
    let g = AdjacencyGraph::from_edges(4, &[(0, 1), (1, 2), (2, 3), (3, 0)]).unwrap();
    (spec, data, g)
}

fn short(chains: usize) -> SamplerConfig {
    SamplerConfig {
        num_chains: chains,
        iterations_per_chain: 60,
        burn_in: 20,
        thin: 2,
        seed: 11,
        ..Default::default()
    }
}

#[test]
fn saved_draw_count_and_invariants() {
    for variant in [Variant::Indep, Variant::Corr, Variant::CorrIre] {
        let (spec, data, g) = tiny(variant, CutpointMode::PerCell);
        let post = run_chains(&spec, &data, &g, &short(2)).unwrap();
        assert_eq!(post.total_draws(), 40);
        for d in post.iter() {
            for s in d.state.weighted_sums(data.area_sizes()) {
                assert!(s.abs() < 1e-9, "{variant}: weighted sum {s}");
            }
            assert!(in_support(&d.state, &spec));
            assert_eq!(d.loglik.len(), data.num_observed());
            let direct = loglik(&d.state, &spec, &data).unwrap();
            for (a, b) in d.loglik.iter().zip(&direct.pointwise) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }
}

use crate::model::in_support;

#[test]
fn single_chain_counts() {
    let (spec, data, g) = tiny(Variant::Corr, CutpointMode::Shared);
    let cfg = SamplerConfig {
        num_chains: 1,
        iterations_per_chain: 100,
        burn_in: 0,
        thin: 1,
        ..Default::default()
    };
    assert_eq!(
        run_chains(&spec, &data, &g, &cfg).unwrap().total_draws(),
        100
    );
}

#[test]
fn deterministic_and_stream_independent() {
    let (spec, data, g) = tiny(Variant::CorrIre, CutpointMode::Shared);
    let a = run_chains(&spec, &data, &g, &short(1)).unwrap();
    let b = run_chains(&spec, &data, &g, &short(3)).unwrap();
    assert_eq!(a.chains[0], b.chains[0]);
    assert_ne!(b.chains[0].draws, b.chains[1].draws);
    let c = run_chain(&spec, &data, &g, &short(1), 0).unwrap();
    assert_eq!(a.chains[0], c);
}

#[test]
fn adaptation_freezes_after_burn_in() {
    let (spec, data, g) = tiny(Variant::Corr, CutpointMode::PerCell);
    let c = run_chain(&spec, &data, &g, &short(1), 0).unwrap();
    assert!(!c.final_scales.is_empty());
    assert_eq!(c.scales_after_burn_in, c.final_scales);
    let moving = SamplerConfig {
        adapt_during_burnin_only: false,
        ..short(1)
    };
    let c = run_chain(&spec, &data, &g, &moving, 0).unwrap();
    assert_ne!(c.scales_after_burn_in, c.final_scales);
}

#[test]
fn degenerate_single_area_runs() {
    let spec = ModelSpec::new(
        Variant::Corr,
        CutpointMode::Shared,
        false,
        Dimensions {
            categories: 4,
            variables: 1,
            cells: 1,
            areas: 1,
        },
    )
    .unwrap();
    let n = 20;
    let data = SurveyDataset::new(
        1,
        4,
        1,
        1,
        (0..n).map(|i| i.to_string()).collect(),
        vec![0; n],
        vec![0; n],
        vec![Some(2); n],
    )
    .unwrap();
    let g = AdjacencyGraph::from_edges(1, &[]).unwrap();
    let post = run_chains(&spec, &data, &g, &short(1)).unwrap();
    for d in post.iter() {
        assert!(in_support(&d.state, &spec));
        assert_eq!(d.state.phi[(0, 0)], 0.0);
    }
}

#[test]
fn mismatched_inputs_are_rejected() {
    let (spec, data, _) = tiny(Variant::Corr, CutpointMode::Shared);
    let g = AdjacencyGraph::from_edges(3, &[(0, 1)]).unwrap();
    assert!(matches!(
        run_chains(&spec, &data, &g, &short(1)),
        Err(Error::Dimension(_))
    ));
    let (spec, data, g) = tiny(Variant::Corr, CutpointMode::Shared);
    let bad = SamplerConfig {
        thin: 0,
        ..short(1)
    };
    assert!(matches!(
        run_chains(&spec, &data, &g, &bad),
        Err(Error::Config(_))
    ));
}

#[test]
fn archive_round_trips_exactly() {
    for variant in [Variant::Indep, Variant::Corr, Variant::CorrIre] {
        let (spec, data, g) = tiny(variant, CutpointMode::PerCell);
        let mut post = run_chains(&spec, &data, &g, &short(2)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let m = write_archive(dir.path(), &spec, data.num_respondents(), &post, None).unwrap();
        assert_eq!(m.chains.len(), 2);
        let (m2, mut back) = read_archive(dir.path()).unwrap();
        assert_eq!(m, m2);
        back.attach_loglik(&spec, &data).unwrap();
        for c in &mut post.chains {
            c.scales_after_burn_in.clear();
            c.final_scales.clear();
        }
        assert_eq!(post, back);
    }
}

#[test]
fn archive_schema_mismatch_is_reported() {
    let (spec, data, g) = tiny(Variant::Corr, CutpointMode::Shared);
    let post = run_chains(&spec, &data, &g, &short(1)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_archive(dir.path(), &spec, data.num_respondents(), &post, None).unwrap();
    let path = dir.path().join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path)
        .unwrap()
        .replace("\"corr\"", "\"indep\"");
    std::fs::write(&path, text).unwrap();
    assert!(matches!(read_archive(dir.path()), Err(Error::Schema(_))));
}
