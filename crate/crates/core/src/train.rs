//! Plumbing shared by the training loops: seeded streams, batching,
//! optimizer-state persistence, and loss logs.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use seqtag_tensor::{Adam, AdamState, Real, Tensor};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};

/// Stream used for parameter initialization.
pub fn init_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream for epoch `epoch` (1-based), so that a run resumed
/// after epoch `k` draws exactly what an uninterrupted run draws.
pub fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    rng
}

/// A shuffled visiting order split into batches of at most `batch_size`.
pub fn shuffled_batches(n: usize, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

pub fn check_finite(loss: f64, epoch: usize) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Diverged { epoch, last_good: None })
    }
}

/// Stores Adam moments as `optim.m.<name>` / `optim.v.<name>` tensors and
/// step counts as `optim.step.<name>` metadata.
pub fn save_optimizer<F: Real>(ckpt: &mut Checkpoint, adam: &Adam<F>) {
    let shapes: Vec<(String, Vec<usize>)> = adam
        .groups()
        .iter()
        .flat_map(|g| g.params.iter().map(|(n, t)| (n.clone(), t.shape().to_vec())))
        .collect();
    for ((name, state), (_, shape)) in adam.states().into_iter().zip(shapes) {
        let cast = |v: &[F]| v.iter().map(|x| x.to_f32().unwrap()).collect();
        ckpt.push(format!("optim.m.{name}"), &shape, cast(&state.m));
        ckpt.push(format!("optim.v.{name}"), &shape, cast(&state.v));
        ckpt.metadata.set(&format!("optim.step.{name}"), state.step);
    }
}

/// Restores state saved by [`save_optimizer`]; parameters without saved
/// state keep a fresh one.
pub fn restore_optimizer<F: Real>(ckpt: &Checkpoint, adam: &mut Adam<F>) -> Result<()> {
    let names: Vec<String> = adam.states().into_iter().map(|(n, _)| n.to_string()).collect();
    for name in names {
        let (Some(m), Some(v)) = (ckpt.tensor(&format!("optim.m.{name}")), ckpt.tensor(&format!("optim.v.{name}"))) else {
            continue;
        };
        let step = ckpt.metadata.require(&format!("optim.step.{name}"))?;
        let cast = |d: &[f32]| d.iter().map(|&x| F::from_f32(x).unwrap()).collect();
        adam.set_state(
            &name,
            AdamState {
                step,
                m: cast(&m.data),
                v: cast(&v.data),
            },
        )?;
    }
    Ok(())
}

/// Tab-separated loss log: `epoch<TAB>col...`, one line per epoch.
pub fn format_log(rows: &[Vec<f64>]) -> String {
    let mut out = String::new();
    for (i, row) in rows.iter().enumerate() {
        write!(out, "{}", i + 1).unwrap();
        for v in row {
            write!(out, "\t{v:.6}").unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn scalar<F: Real>(t: &Tensor<F>) -> f64 {
    t.item().to_f64().unwrap()
}

/// Stream used for the dev split, distinct from every epoch stream.
pub fn split_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    rng
}
