use std::f64::consts::PI;
use std::sync::Arc;

use torus_nf::clusters::{partition, verify_partition};
use torus_nf::dynamics::{
    aligned_step, conjugation_gap, duhamel_bound_check, evolve, evolve_blocks, FnHamiltonian, SampledHamiltonian,
    StateVector,
};
use torus_nf::geometry::MetricTensor;
use torus_nf::normal_form::{run_normal_form, NFOptions, NFResult, TimeGrid};
use torus_nf::resonance::NFParams;
use torus_nf::symbols::{cosine_pair, SymbolSpec, SymbolTerm, TimeProfile};
use torus_nf::weyl::{laplacian_matrix, quantize, ModeSet, C64};

fn params() -> NFParams {
    NFParams { delta: 0.6, epsilon: 0.04, tau: 1.0, m: 1.0, d: 2 }
}

fn setup(v: &SymbolSpec, cutoff: f64, samples: usize, steps: usize) -> (Arc<ModeSet>, NFResult) {
    let modes = Arc::new(ModeSet::new(cutoff, MetricTensor::identity(2)).unwrap());
    let grid = TimeGrid::new(0.0, 2.0 * PI, samples, true).unwrap();
    let opts = NFOptions { track_conjugator: true, ..NFOptions::default() };
    let nf = run_normal_form(v, &params(), &modes, &grid, steps, &opts).unwrap();
    (modes, nf)
}

fn reference_potential() -> SymbolSpec {
    SymbolSpec::new(vec![SymbolTerm::new(TimeProfile::cosine(1.0, 1.0), 1.0, cosine_pair(&[1, 0])).unwrap()]).unwrap()
}

/// `cos(t)⟨ξ⟩`: a pure multiplier, entirely absorbed into `Z`.
fn multiplier() -> SymbolSpec {
    SymbolSpec::new(vec![SymbolTerm::new(TimeProfile::cosine(1.0, 1.0), 1.0, vec![(vec![0, 0], C64::new(1.0, 0.0))]).unwrap()])
        .unwrap()
}

#[test]
fn block_evolution_matches_full_normal_form_evolution() {
    let (modes, nf) = setup(&reference_potential(), 8.0, 64, 2);
    let part = partition(&modes, &params());
    let h = aligned_step(&nf.grid);
    let psi0 = StateVector::random(modes.clone(), 11, 1.0);
    let t_end = 40.0 * h;
    let blocks = evolve_blocks(&nf, &part, &psi0, 0.0, t_end, h, &[0.0, 2.0]).unwrap();
    let full = evolve(&SampledHamiltonian::normal_form(&nf), &psi0, 0.0, t_end, h, &[0.0, 2.0]).unwrap();
    assert!(blocks.evolution.state.distance(&full.state) < 1e-9);
    assert!(blocks.block_mass_drift < 1e-10);
    let report = verify_partition(&part, &params(), modes.metric(), &[2.0]);
    assert!(blocks.evolution.trace.max_ratio(2.0).unwrap() <= report.k_sigma_for(2.0).unwrap());
}

#[test]
fn state_in_one_block_stays_there() {
    let (modes, nf) = setup(&reference_potential(), 8.0, 64, 2);
    let part = partition(&modes, &params());
    let block = part.blocks.iter().max_by_key(|b| b.size()).unwrap();
    assert!(block.size() > 1);
    let psi0 = StateVector::random_on(modes.clone(), &block.indices, 3);
    let h = aligned_step(&nf.grid);
    let run = evolve_blocks(&nf, &part, &psi0, 0.0, 64.0 * h, h, &[1.0]).unwrap();
    assert!(run.leaked_mass <= 1e-12);
    let report = verify_partition(&part, &params(), modes.metric(), &[1.0]);
    assert!(run.evolution.trace.max_ratio(1.0).unwrap() <= report.k_sigma_for(1.0).unwrap());
}

#[test]
fn multiplier_normal_form_keeps_every_modulus() {
    let (modes, nf) = setup(&multiplier(), 8.0, 32, 1);
    assert!(nf.r.iter().all(|r| r.max_abs() < 1e-13));
    let part = partition(&modes, &params());
    let psi0 = StateVector::random(modes.clone(), 5, 0.0);
    let h = aligned_step(&nf.grid);
    let run = evolve_blocks(&nf, &part, &psi0, 0.0, 48.0 * h, h, &[0.0, 2.0]).unwrap();
    for (a, b) in psi0.coeffs().iter().zip(run.evolution.state.coeffs()) {
        assert!((a.norm() - b.norm()).abs() < 1e-13);
    }
    let rep = duhamel_bound_check(&nf, &psi0, 0.0, 48.0 * h, h, 2.0).unwrap();
    assert!((rep.k_full - 1.0).abs() < 1e-12 && rep.pass);
}

#[test]
fn normal_form_coordinates_agree_with_full_evolution() {
    let v = reference_potential();
    let (modes, nf) = setup(&v, 6.0, 256, 2);
    let lap = laplacian_matrix(&modes);
    let full = FnHamiltonian(|t: f64| Ok(lap.add(&quantize(&v, t, &modes))));
    let psi0 = StateVector::random(modes.clone(), 2, 1.0);
    let rep = conjugation_gap(&full, &nf, &psi0, 0.0, 2.0, aligned_step(&nf.grid)).unwrap();
    assert!(rep.gap < 1e-4, "gap {}", rep.gap);
}
