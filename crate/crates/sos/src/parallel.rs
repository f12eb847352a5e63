//! Worker pools and chunk-parallel passes over in-memory tables.
//!
//! Chunk partial sums are always merged in chunk order, so results are
//! bit-identical to the sequential pass whatever the worker count.

use rayon::prelude::*;
use sos_core::data::{Dataset, Table};
use sos_core::estimators::{chunk_gradient, chunk_sums, GradientSums, PassSums};
use sos_core::models::{LossModel, Order};

pub const THREADS_VAR: &str = "SOS_THREADS";

/// Worker count from `SOS_THREADS`; unset or `0` means all cores.
pub fn threads_from_env() -> usize {
    std::env::var(THREADS_VAR)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .unwrap_or(0)
}

pub fn pool(threads: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .expect("thread pool construction")
}

pub fn par_pass_sums<M: LossModel + ?Sized>(
    model: &M,
    table: &Table,
    theta: &[f64],
    order: Order,
) -> sos_core::Result<PassSums> {
    let d = model.dim(table.covariates());
    if theta.len() != d {
        return Err(sos_core::Error::Dimension {
            what: "parameter vector",
            expected: d,
            found: theta.len(),
        });
    }
    let parts: Vec<_> = (0..table.chunk_count())
        .into_par_iter()
        .map(|k| chunk_sums(model, table.chunk(k).expect("chunk in range"), theta, order))
        .collect();
    let mut total = PassSums::new(d);
    for part in parts {
        total.merge(&part?);
    }
    Ok(total)
}

pub fn par_full_gradient_mean<M: LossModel + ?Sized>(
    model: &M,
    table: &Table,
    theta: &[f64],
) -> sos_core::Result<Vec<f64>> {
    let d = model.dim(table.covariates());
    if theta.len() != d {
        return Err(sos_core::Error::Dimension {
            what: "parameter vector",
            expected: d,
            found: theta.len(),
        });
    }
    model.check_theta(theta)?;
    let parts: Vec<_> = (0..table.chunk_count())
        .into_par_iter()
        .map(|k| chunk_gradient(model, table.chunk(k).expect("chunk in range"), theta))
        .collect();
    let mut total = GradientSums::new(d);
    for part in parts {
        total.merge(&part?);
    }
    total.mean()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use sos_core::estimators::full_gradient_mean;
    use sos_core::models::ModelKind;
    use sos_core::simulate::gen_logistic;

    #[test]
    fn parallel_pass_is_bitwise_sequential() {
        let t = gen_logistic(&mut ChaCha8Rng::seed_from_u64(1), 50_000, &[0.1, 0.2, -0.3])
            .unwrap()
            .with_chunk_rows(999);
        let theta = [0.05, 0.1, 0.2];
        let want = full_gradient_mean(&ModelKind::Logistic, &t, &theta).unwrap();
        for threads in [1, 2, 5] {
            let got = pool(threads)
                .install(|| par_full_gradient_mean(&ModelKind::Logistic, &t, &theta))
                .unwrap();
            assert_eq!(got, want);
        }
    }
}
