//! Deeper probe: per-frame keypoint vs object-center tracking.

use entrokeys::discover::{discover, DiscoveryConfig};
use entrokeys::synth::{preset, render, RenderedScene};

type F = f64;

#[test]
#[ignore]
fn probe_tracking_detail() {
    let spec = preset("mixed").unwrap();
    let scene: RenderedScene<F> = render(&spec).unwrap();
    let mut config = DiscoveryConfig { k: 8, seed: 1, threads: 1, ..DiscoveryConfig::default() };
    config.weights.m_d = 0.05;
    let traj = discover(&scene.frames, &config).unwrap();
    let report = entrokeys::metrics::evaluate(&traj, &scene.masks, None).unwrap();
    println!("DOP {:?} TOP {:?} UAK {:.2} RAK {:?}", report.dop, report.top, report.uak, report.rak);
    for t in [0usize, 2, 4, 8, 12, 20, 30, 39] {
        let f = &traj.frames[t];
        let kps: Vec<String> = f.keypoints.iter().zip(&f.active).map(|(k, &a)| {
            format!("({:.0},{:.0},{})", k.x, k.y, if a { "A" } else { "." })
        }).collect();
        let cs: Vec<String> = scene.centers[t].iter().map(|c| match c {
            Some((x, y)) => format!("[{x:.0},{y:.0}]"),
            None => "[-]".into(),
        }).collect();
        println!("t={t:2} obj {} kp {}", cs.join(" "), kps.join(" "));
        println!("      me {:.3} mce {:.3} it {:.2} ov {:.3} total {:.2}",
                 f.loss.me, f.loss.mce, f.loss.it, f.loss.overlap, f.loss.total);
    }
}
