//! Ad-hoc diagnostic: z-space jitter of the sampling chain state x_t per
//! timestep versus the on-distribution jitter of q_sample(x0_real, t).

use motiondiff_core::checkpoint::load_checkpoint;
use motiondiff_core::dataset::{load_motion, motion_to_array, standardize};
use motiondiff_core::diffusion::{
    normal_array, p_sample_step, q_sample, x0_from, GuidanceConfig,
};
use motiondiff_core::motion::fit_length;
use motiondiff_core::rng::stream;
use motiondiff_core::rotation::POSE_DIM;
use motiondiff_core::schedule::{make_schedule, ScheduleKind};
use motiondiff_core::text::{embed_text, HashedTextProvider};
use motiondiff_core::training::model_from_checkpoint;
use ndarray::Array2;
use std::path::Path;

fn jitter_active(a: &Array2<f64>, active: &[usize]) -> f64 {
    let mut s = 0.0;
    let mut n = 0usize;
    for j in 1..a.ncols() {
        for &i in active {
            s += (a[(i, j)] - a[(i, j - 1)]).abs();
            n += 1;
        }
    }
    s / n as f64
}

fn main() {
    let ckpt = load_checkpoint(Path::new("/tmp/cal/motion_ss/checkpoint_final.ckpt")).unwrap();
    let loaded = model_from_checkpoint(&ckpt).unwrap();
    let model = loaded.model;
    let stats = loaded.stats;
    let schedule = make_schedule(ScheduleKind::Cosine, 100).unwrap();
    let provider = HashedTextProvider::new(7, 32);

    // Active channels: std above the floor.
    let active: Vec<usize> = (0..POSE_DIM).filter(|&c| stats.std[c] > 1e-5).collect();
    eprintln!("active channels: {}", active.len());

    // A real walk clip for the on-distribution reference.
    let manifest = std::fs::read_to_string("/tmp/cal/data/manifest.tsv").unwrap();
    let real = manifest
        .lines()
        .find(|l| l.contains("motion_00175"))
        .map(|l| l.split('\t').next().unwrap())
        .unwrap();
    let m = load_motion(Path::new(&format!("/tmp/cal/data/{real}"))).unwrap();
    let m = fit_length(&m, 16).unwrap();
    eprintln!("reference: {:?}", m.caption);
    let x0_real = standardize(&motion_to_array(&m), &stats).unwrap();

    let caption = "a person walks forward";
    let text = embed_text(&provider, Some(caption));
    let null = embed_text(&provider, None);
    let guidance = GuidanceConfig::new(2.0, null).unwrap();

    let mut rng = stream(4242, "probe2");
    let mut x = normal_array((POSE_DIM, 16), &mut rng);
    println!("t    chain_jit  ondist_jit  x0hat_jit  x0hat_rms");
    let mut qrng = stream(7, "probe2-q");
    for t in (1..=schedule.steps).rev() {
        let noise = normal_array((POSE_DIM, 16), &mut qrng);
        let xq = q_sample(&schedule, &x0_real, t, &noise).unwrap();
        let (v, _) = model.forward(&x, t, &text).unwrap();
        let x0_hat = x0_from(&x, &v, t, &schedule).unwrap();
        if t % 10 == 0 || t <= 5 {
            let rms = x0_hat.iter().map(|v| v * v).sum::<f64>() / x0_hat.len() as f64;
            println!(
                "{t:<4} {:<10.4} {:<11.4} {:<10.4} {:<9.4}",
                jitter_active(&x, &active),
                jitter_active(&xq, &active),
                jitter_active(&x0_hat, &active),
                rms.sqrt()
            );
        }
        x = p_sample_step(&model, &schedule, &x, t, &text, &guidance, &mut rng).unwrap();
    }
    println!(
        "final {:<9.4} true x0 {:<8.4}",
        jitter_active(&x, &active),
        jitter_active(&x0_real, &active)
    );
}
