//! Ad-hoc diagnostic: per-timestep v loss of a trained motion checkpoint,
//! clip context vs frame-by-frame.

use motiondiff_core::checkpoint::load_checkpoint;
use motiondiff_core::dataset::{load_motion, motion_to_array, standardize};
use motiondiff_core::diffusion::{loss_simple, normal_array, q_sample, v_from, x0_from};
use motiondiff_core::motion::fit_length;
use motiondiff_core::rng::stream;
use motiondiff_core::schedule::{make_schedule, ScheduleKind};
use motiondiff_core::text::{embed_text, HashedTextProvider};
use motiondiff_core::training::model_from_checkpoint;
use ndarray::{s, Array2};
use std::path::Path;

fn main() {
    let ckpt = load_checkpoint(Path::new("/tmp/cal/motion_ss/checkpoint_final.ckpt")).unwrap();
    let loaded = model_from_checkpoint(&ckpt).unwrap();
    let model = loaded.model;
    let stats = loaded.stats;
    let schedule = make_schedule(ScheduleKind::Cosine, 100).unwrap();
    let provider = HashedTextProvider::new(7, 32);

    let manifest = std::fs::read_to_string("/tmp/cal/data/manifest.tsv").unwrap();
    let clips: Vec<_> = manifest
        .lines()
        .filter(|l| l.ends_with("train"))
        .take(16)
        .map(|l| {
            let path = l.split('\t').next().unwrap();
            let m = load_motion(Path::new(&format!("/tmp/cal/data/{path}"))).unwrap();
            let m = fit_length(&m, 16).unwrap();
            let x0 = standardize(&motion_to_array(&m), &stats).unwrap();
            let text = embed_text(&provider, m.caption.as_deref());
            (x0, text)
        })
        .collect();

    let mut rng = stream(999, "probe");
    println!("t    clip_loss  frame_loss  x0hat_jit  x0_jit");
    for &t in &[1usize, 2, 5, 10, 25, 50, 75, 100] {
        let mut clip_loss = 0.0;
        let mut frame_loss = 0.0;
        let mut jit_hat = 0.0;
        let mut jit_true = 0.0;
        for (x0, text) in &clips {
            let noise = normal_array(x0.dim(), &mut rng);
            let x_t = q_sample(&schedule, x0, t, &noise).unwrap();
            let target = v_from(x0, &noise, t, &schedule).unwrap();
            let (v, _) = model.forward(&x_t, t, text).unwrap();
            clip_loss += loss_simple(&v, &target).unwrap();
            // frame-by-frame: each column alone
            let mut fl = 0.0;
            for j in 0..x_t.ncols() {
                let col: Array2<f64> = x_t.slice(s![.., j..j + 1]).to_owned();
                let tcol: Array2<f64> = target.slice(s![.., j..j + 1]).to_owned();
                let (vj, _) = model.forward(&col, t, text).unwrap();
                fl += loss_simple(&vj, &tcol).unwrap();
            }
            frame_loss += fl / x_t.ncols() as f64;
            let x0_hat = x0_from(&x_t, &v, t, &schedule).unwrap();
            let jit = |a: &Array2<f64>| -> f64 {
                let mut s = 0.0;
                for j in 1..a.ncols() {
                    for i in 0..a.nrows() {
                        s += (a[(i, j)] - a[(i, j - 1)]).abs();
                    }
                }
                s / ((a.ncols() - 1) as f64 * a.nrows() as f64)
            };
            jit_hat += jit(&x0_hat);
            jit_true += jit(x0);
        }
        let n = clips.len() as f64;
        println!(
            "{t:<4} {:<10.4} {:<11.4} {:<10.4} {:<7.4}",
            clip_loss / n,
            frame_loss / n,
            jit_hat / n,
            jit_true / n
        );
    }
}
