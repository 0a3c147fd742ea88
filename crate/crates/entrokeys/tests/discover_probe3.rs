//! Multi-seed mixed + come-and-go probes (run with --ignored).

use entrokeys::discover::{discover, DiscoveryConfig};
use entrokeys::metrics;
use entrokeys::synth::{preset, render, RenderedScene};

type F = f64;

#[test]
#[ignore]
fn probe_mixed_three_seeds() {
    let spec = preset("mixed").unwrap();
    let scene: RenderedScene<F> = render(&spec).unwrap();
    let mut sums = (0.0, 0.0, 0.0);
    for seed in [1u64, 2, 3] {
        let config = DiscoveryConfig { k: 8, seed, threads: 1, ..DiscoveryConfig::default() };
        let t0 = std::time::Instant::now();
        let traj = discover(&scene.frames, &config).unwrap();
        let r = metrics::evaluate(&traj, &scene.masks, None).unwrap();
        println!("seed {seed}: DOP {:.3} TOP {:.3} UAK {:.2} RAK {:.3} ({:?})",
            r.dop.unwrap(), r.top.unwrap(), r.uak, r.rak.unwrap(), t0.elapsed());
        sums.0 += r.dop.unwrap(); sums.1 += r.top.unwrap(); sums.2 += r.uak;
    }
    println!("MEAN: DOP {:.3} TOP {:.3} UAK {:.2}", sums.0 / 3.0, sums.1 / 3.0, sums.2 / 3.0);
}

#[test]
#[ignore]
fn probe_comeandgo() {
    let spec = preset("comeandgo").unwrap();
    let scene: RenderedScene<F> = render(&spec).unwrap();
    let config = DiscoveryConfig { k: 6, seed: 5, threads: 1, ..DiscoveryConfig::default() };
    let t0 = std::time::Instant::now();
    let traj = discover(&scene.frames, &config).unwrap();
    println!("took {:?}", t0.elapsed());
    let counts: Vec<usize> = traj.frames.iter().map(|f| f.active.iter().filter(|&&a| a).count()).collect();
    println!("active counts: {counts:?}");
    let life: Vec<usize> = (13..=40).map(|t| counts[t]).collect();
    let outside: Vec<usize> = (0..10).chain(46..60).map(|t| counts[t]).collect();
    let mean = |v: &[usize]| v.iter().sum::<usize>() as f64 / v.len() as f64;
    println!("mean during life: {:.2}, outside: {:.2}", mean(&life), mean(&outside));
}
