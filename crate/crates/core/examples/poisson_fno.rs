//! Train a small FNO on 2-D periodic Poisson data at 32^2 and evaluate it
//! at 16^2 through 64^2, next to the exact solver.
//!
//! `cargo run --release --example poisson_fno`

use neurop::data::{GrfSpec, PoissonDataset};
use neurop::evaluation::{resolution_sweep, sweep_csv, PoissonOracle};
use neurop::model::{Model, ModelConfig};
use neurop::training::{TrainConfig, Trainer};

fn main() -> neurop::Result<()> {
    let spec = GrfSpec { alpha: 3.0, ..GrfSpec::default() };
    let data = PoissonDataset::generate(&spec, 2, 64, 160, 0)?;
    let (train, test) = data.split(128)?;

    let model = Model::new(&ModelConfig { width: 12, modes: 8, projection_hidden: 32, ..ModelConfig::default() })?;
    println!("{} parameters", model.param_count());
    let cfg = TrainConfig { epochs: 8, halve_every: 3, ..TrainConfig::default() };
    let mut trainer = Trainer::new(model, cfg, &train)?;
    while !trainer.is_done() {
        let m = trainer.train_epoch()?;
        println!("epoch {} loss {:.3e}", m.epoch, m.train_loss);
    }

    print!("{}", sweep_csv(&resolution_sweep(&trainer.model, &test, &[16, 32, 64])?));
    print!("{}", sweep_csv(&resolution_sweep(&PoissonOracle, &test, &[16, 32, 64])?));
    Ok(())
}
