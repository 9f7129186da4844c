//! Chain orchestration: burn-in, thinning, diagnostics and parallel chains.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::PriorConfig;
use crate::data::{Dataset, TransformRecord};
use crate::error::{ConfigError, Error};
use crate::model::{ChainMeta, Ensemble, PosteriorSamples};
use crate::rng::chain_rng;
use crate::sampler::moves::MoveKind;
use crate::sampler::state::ChainState;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ChainSettings {
    pub chains: usize,
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    /// Worker threads for running chains; 0 uses every available core.
    pub jobs: usize,
}

impl Default for ChainSettings {
    fn default() -> Self {
        ChainSettings {
            chains: 10,
            iterations: 2000,
            burn_in: 1000,
            thin: 1,
            seed: 0,
            jobs: 0,
        }
    }
}

impl ChainSettings {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.chains == 0 || self.thin == 0 {
            return Err(ConfigError::Invalid("chains and thin must be positive".into()));
        }
        if self.burn_in > self.iterations {
            return Err(ConfigError::Invalid(format!(
                "burn-in {} exceeds the {} iterations",
                self.burn_in, self.iterations
            )));
        }
        Ok(())
    }

    fn meta(&self, config: &PriorConfig) -> ChainMeta {
        ChainMeta {
            seed: self.seed,
            chains: self.chains,
            iterations: self.iterations,
            burn_in: self.burn_in,
            thin: self.thin,
            config_hash: config.hash(),
        }
    }
}

/// Diagnostics for one sweep of one chain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub chain: usize,
    pub iteration: usize,
    pub sigma2: f64,
    pub log_likelihood: f64,
    pub grow_proposed: u64,
    pub grow_accepted: u64,
    pub prune_proposed: u64,
    pub prune_accepted: u64,
    pub change_proposed: u64,
    pub change_accepted: u64,
    pub mean_leaves: f64,
}

/// Runs one chain and returns its retained draws. `on_iteration` sees every
/// sweep, including burn-in.
pub fn run_single_chain(
    data: &Dataset,
    config: &PriorConfig,
    settings: &ChainSettings,
    chain: usize,
    mut on_iteration: impl FnMut(IterationRecord),
) -> Vec<Ensemble> {
    let mut rng = chain_rng(settings.seed, chain as u64);
    let mut state = ChainState::new(data, config, &mut rng);
    let mut draws = Vec::with_capacity(settings.iterations.saturating_sub(settings.burn_in) / settings.thin);
    for it in 0..settings.iterations {
        state.sweep(&mut rng);
        let c = state.counts;
        let (g, p, ch) = (MoveKind::Grow.index(), MoveKind::Prune.index(), MoveKind::Change.index());
        on_iteration(IterationRecord {
            chain,
            iteration: it,
            sigma2: state.ensemble().sigma2,
            log_likelihood: state.log_likelihood(),
            grow_proposed: c.proposed[g],
            grow_accepted: c.accepted[g],
            prune_proposed: c.proposed[p],
            prune_accepted: c.accepted[p],
            change_proposed: c.proposed[ch],
            change_accepted: c.accepted[ch],
            mean_leaves: state.mean_leaf_count(),
        });
        if it >= settings.burn_in && (it - settings.burn_in + 1).is_multiple_of(settings.thin) {
            draws.push(state.ensemble().clone());
        }
    }
    draws
}

/// Runs `settings.chains` chains (concurrently, up to `settings.jobs` at a
/// time) and pools their draws in chain order. Diagnostics are returned in
/// chain order as well.
pub fn run_chains(
    data: &Dataset,
    config: &PriorConfig,
    settings: &ChainSettings,
    transform: Option<TransformRecord>,
) -> Result<(PosteriorSamples, Vec<IterationRecord>), Error> {
    settings.validate()?;
    config.validate(data.q(), data.n())?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(settings.jobs)
        .build()
        .map_err(|e| ConfigError::Invalid(format!("thread pool: {e}")))?;
    let per_chain: Vec<(Vec<Ensemble>, Vec<IterationRecord>)> = pool.install(|| {
        (0..settings.chains)
            .into_par_iter()
            .map(|c| {
                let mut records = Vec::with_capacity(settings.iterations);
                let draws = run_single_chain(data, config, settings, c, |r| records.push(r));
                (draws, records)
            })
            .collect()
    });
    let mut draws = Vec::new();
    let mut records = Vec::new();
    for (d, r) in per_chain {
        draws.extend(d);
        records.extend(r);
    }
    let samples = PosteriorSamples {
        meta: settings.meta(config),
        config: config.clone(),
        outcome: data.outcome(),
        x_kinds: data.x_kinds().to_vec(),
        transform,
        draws,
    };
    Ok((samples, records))
}

/// Single-chain convenience wrapper.
pub fn run_chain(
    data: &Dataset,
    config: &PriorConfig,
    iterations: usize,
    burn_in: usize,
    thin: usize,
    seed: u64,
) -> Result<PosteriorSamples, Error> {
    let settings = ChainSettings {
        chains: 1,
        iterations,
        burn_in,
        thin,
        seed,
        jobs: 1,
    };
    Ok(run_chains(data, config, &settings, None)?.0)
}
