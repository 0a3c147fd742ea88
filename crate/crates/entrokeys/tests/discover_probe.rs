//! Exploratory probe for discovery behavior (run with --ignored).

use entrokeys::discover::{discover, DiscoveryConfig};
use entrokeys::entropy::{spatial_entropy, HistogramSpec};
use entrokeys::geometry::heatmap;
use entrokeys::image_io::preprocess;
use entrokeys::synth::{preset, render, RenderedScene};
use entrokeys::metrics;

type F = f64;

#[test]
#[ignore]
fn probe_static_disc() {
    let mut spec = preset("static3").unwrap();
    spec.objects.truncate(1);
    spec.objects[0].start = (32.0, 32.0);
    spec.frames = 3;
    let scene: RenderedScene<F> = render(&spec).unwrap();
    let config = DiscoveryConfig { k: 3, threads: 1, ..DiscoveryConfig::default() };
    let t0 = std::time::Instant::now();
    let traj = discover(&scene.frames, &config).unwrap();
    println!("discover took {:?}", t0.elapsed());
    // Coverage of final frame
    let h = spatial_entropy(&preprocess(&scene.frames[2], 2), &HistogramSpec::default(), 1).unwrap();
    let last = &traj.frames[2];
    let heatmaps: Vec<_> = last.keypoints.iter().map(|kp| heatmap(kp.x, kp.y, &config.geometry, 64, 64)).collect();
    let statuses: Vec<F> = last.keypoints.iter().map(|kp| kp.status()).collect();
    let mask = entrokeys::geometry::aggregate_mask(&heatmaps, &statuses).unwrap();
    let covered: F = h.values().iter().zip(mask.values()).map(|(&hv, &mv)| hv * mv).sum();
    println!("covered fraction = {:.3}", covered / h.sum());
    for (t, f) in traj.frames.iter().enumerate() {
        println!("frame {t}: loss total {:.3} me {:.3} statuses {:?} pos {:?}",
            f.loss.total, f.loss.me,
            f.keypoints.iter().map(|k| (k.status() * 100.0).round() / 100.0).collect::<Vec<_>>(),
            f.keypoints.iter().map(|k| ((k.x * 10.0).round() / 10.0, (k.y * 10.0).round() / 10.0)).collect::<Vec<_>>());
    }
}

#[test]
#[ignore]
fn probe_mixed_preset() {
    let spec = preset("mixed").unwrap();
    let scene: RenderedScene<F> = render(&spec).unwrap();
    let config = DiscoveryConfig { k: 8, seed: 1, threads: 1, ..DiscoveryConfig::default() };
    let t0 = std::time::Instant::now();
    let traj = discover(&scene.frames, &config).unwrap();
    println!("discover 40 frames took {:?}", t0.elapsed());
    let report = metrics::evaluate(&traj, &scene.masks, None).unwrap();
    println!("DOP {:?} TOP {:?} UAK {:.2} RAK {:?}", report.dop, report.top, report.uak, report.rak);
    for t in [0usize, 1, 10, 39] {
        let f = &traj.frames[t];
        println!("frame {t}: active {} me {:.3}", f.active.iter().filter(|&&a| a).count(), f.loss.me);
    }
}
