#![allow(dead_code)]

use catrisk::io::Bundle;
use catrisk::loss::{LossConfig, Peril};
use catrisk::pipeline::{
    evaluate_policy, policy_grid, prepare, run_scheme, PolicyEvaluation, Prepared, SchemeParams, SchemeRun,
};
use catrisk::synth::{generate_portfolio, Portfolio, Profile, SynthOptions};

pub fn italy_like(seed: u64) -> Portfolio {
    generate_portfolio(&SynthOptions {
        seed,
        ..SynthOptions::default()
    })
    .unwrap()
}

pub fn fixture() -> Portfolio {
    generate_portfolio(&SynthOptions {
        n: 5,
        profile: Profile::Fixture,
        ..SynthOptions::default()
    })
    .unwrap()
}

pub fn uniform(n: usize, seed: u64) -> Portfolio {
    generate_portfolio(&SynthOptions {
        n,
        seed,
        profile: Profile::Uniform,
        ..SynthOptions::default()
    })
    .unwrap()
}

pub struct PerilRuns {
    pub peril: Peril,
    pub runs: Vec<(PolicyEvaluation, SchemeRun)>,
}

/// Scheme runs for every policy of the default grid.
pub fn grid_runs(prep: &Prepared, peril: Peril, params: &SchemeParams) -> PerilRuns {
    let groupings = params.groupings(&prep.municipalities).unwrap();
    let runs = policy_grid()
        .iter()
        .map(|p| {
            let e = evaluate_policy(prep, peril, p).unwrap();
            let r = run_scheme(&e.severity, e.sum_p_h, &groupings, params).unwrap();
            (e, r)
        })
        .collect();
    PerilRuns { peril, runs }
}

pub fn prepare_multi(bundle: &Bundle) -> Prepared {
    prepare(bundle, Peril::Multi, &LossConfig::default(), &policy_grid()).unwrap()
}
