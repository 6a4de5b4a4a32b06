//! Ablation sweep used to pick the acceptance budget.
//!
//! `cargo run --release -p evdeblur-core --example calibrate -- CONFIG STAGE1 STAGE2 SEED...`

use evdeblur::pipeline::{ordering_variants, run_study, RunConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.len() < 4 {
        return Err("usage: calibrate CONFIG STAGE1 STAGE2 SEED...".into());
    }
    let mut cfg = RunConfig::load(&args[0])?;
    cfg.schedule.stage1_iters = args[1].parse()?;
    cfg.schedule.stage2_iters = args[2].parse()?;
    let seeds = args[3..].iter().map(|s| s.parse()).collect::<Result<Vec<u64>, _>>()?;
    let t0 = std::time::Instant::now();
    let rows = run_study(&cfg, &seeds, &ordering_variants(), &mut |r| {
        println!(
            "seed {} {:<10} stage1 {:7.3} stage2 {:7.3} ssim {:.4} blurred {:7.3}  [{:.0?}]",
            r.seed, r.variant, r.stage1_psnr, r.psnr, r.ssim, r.baseline_psnr, t0.elapsed()
        );
    })?;
    println!("{}", serde_json::to_string(&rows)?);
    Ok(())
}
