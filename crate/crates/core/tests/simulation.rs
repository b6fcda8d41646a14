use mrd_adjust::design::DesignSpec;
use mrd_adjust::diagnostics::{variance_regime, Regime};
use mrd_adjust::estimators::{EffectSpec, Method};
use mrd_adjust::moments::Potentials;
use mrd_adjust::simulate::{gen_marketplace, gen_sparse, monte_carlo, DgpSpec, McOptions, Population, SparseVariant};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn opts(replications: usize) -> McOptions {
    McOptions { replications, seed: 9, level: 0.95, threads: Some(2), keep_replications: true }
}

#[test]
fn marketplace_spillover_appears_only_with_eta() {
    let spec = DesignSpec::new(200, 150, 20, 15).unwrap();
    let e = EffectSpec::buyer_spillover();
    let with = gen_marketplace(&DgpSpec::standard_marketplace(), 200, 150, 3).unwrap();
    let tau = with.potentials(&spec).unwrap().estimand(&e.c);
    assert!(tau.abs() > 1e-3, "buyer spillover {tau}");
    let without = DgpSpec::Marketplace { eta: 0.0, m_rate: 1.0, r_max: 0.2, obs_noise_sd: 0.1 };
    let m0 = gen_marketplace(&without, 200, 150, 3).unwrap();
    assert!(m0.potentials(&spec).unwrap().estimand(&e.c).abs() < 1e-12);
}

#[test]
fn sparse_uniform_mean_matches_mu() {
    let dgp = DgpSpec::Sparse { mu: 0.2, variant: SparseVariant::Uniform };
    let p = gen_sparse(&dgp, 300, 300, 5).unwrap();
    let vals: Vec<f64> = p.tables().iter().flat_map(|t| t.iter().copied()).collect();
    let m = vals.iter().sum::<f64>() / vals.len() as f64;
    assert!((m - 0.2).abs() < 0.03, "mean {m}");
    assert!(vals.iter().all(|v| *v == 0.0 || *v == 1.0));
}

#[test]
fn single_replication_has_no_sd() {
    let spec = DesignSpec::new(20, 20, 10, 10).unwrap();
    let dgp = DgpSpec::standard_normal();
    let run = monte_carlo(
        Population::Generated { dgp: &dgp, seed: 1, redraw: false },
        &spec,
        &[EffectSpec::direct()],
        &[Method::Unadjusted, Method::OptNoninteracted],
        &opts(1),
    )
    .unwrap();
    for s in &run.report.results {
        assert_eq!(s.replications, 1);
        assert!(s.sd.is_none());
        assert!(s.mean.is_some());
    }
    assert_eq!(run.replications.len(), 2);
}

#[test]
fn interacted_method_runs_on_every_preset() {
    let spec = DesignSpec::new(30, 24, 9, 8).unwrap();
    let dgp = DgpSpec::standard_normal();
    let run = monte_carlo(
        Population::Generated { dgp: &dgp, seed: 2, redraw: false },
        &spec,
        &EffectSpec::presets(),
        &[Method::OptInteracted],
        &opts(50),
    )
    .unwrap();
    for s in &run.report.results {
        assert_eq!(s.successes, 50, "{}: {:?}", s.effect, s.failures);
        assert!(s.bias.unwrap().abs() < 4.0 * s.sd.unwrap() / 50f64.sqrt() + 1e-9, "{}", s.effect);
    }
}

fn iid(i: usize, j: usize, seed: u64) -> Potentials {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Potentials::new(std::array::from_fn(|_| DMatrix::from_fn(i, j, |_, _| rng.sample(StandardNormal)))).unwrap()
}

#[test]
fn iid_noise_becomes_interaction_dominated_with_few_treated() {
    let e = EffectSpec::direct();
    let mut last = f64::INFINITY;
    for n in [20, 80, 320] {
        let spec = DesignSpec::new(n, n, 3, 3).unwrap();
        let r = variance_regime(&iid(n, n, n as u64), &spec, &e).unwrap();
        let rs = r.share_buyer + r.share_seller;
        assert!(rs < last, "n={n}: {rs} vs {last}");
        last = rs;
        if n == 320 {
            assert_eq!(r.regime, Regime::InteractionDominated);
        }
    }
}

#[test]
fn row_effects_plus_noise_is_mixed() {
    let (i, j) = (60, 60);
    let spec = DesignSpec::new(i, j, 30, 30).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let rows: Vec<f64> = (0..i).map(|_| rng.sample(StandardNormal)).collect();
    let tables = std::array::from_fn(|_| {
        DMatrix::from_fn(i, j, |r, _| 0.15 * rows[r])
            + DMatrix::from_fn(i, j, |_, _| rng.sample::<f64, _>(StandardNormal))
    });
    let r = variance_regime(&Potentials::new(tables).unwrap(), &spec, &EffectSpec::direct()).unwrap();
    assert_eq!(r.regime, Regime::Mixed, "{r:?}");
    assert!(r.share_interaction >= 0.1 && r.share_buyer + r.share_seller >= 0.1);
}
