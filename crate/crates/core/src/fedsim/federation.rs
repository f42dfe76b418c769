//! Round loop: broadcast, local training, signed submission, verification,
//! aggregation.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::aggregate::aggregate;
use super::crypto::{verify_update, ClientCredentials, KeyRegistry, RejectReason, SignedUpdate, Verdict, VerifyPolicy};
use super::partition::{partition_data, select_clients};
use crate::lsnet::{LsNet, ParameterSet};
use crate::rng::{self, tag};
use crate::train::{train_epochs, ImageSet, Sgd, TrainConfig};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FedConfig {
    pub clients: usize,
    pub clients_per_round: usize,
    pub rounds: usize,
    pub local_epochs: usize,
    /// Norm bound for round `t` is this multiple of the median accepted
    /// update norm of round `t − 1`; `0` disables the bound.
    pub norm_multiplier: f64,
    /// Evaluate every this many rounds (and always after the last one);
    /// `0` evaluates only after the last round.
    pub eval_every: usize,
}

impl Default for FedConfig {
    fn default() -> Self {
        FedConfig {
            clients: 5,
            clients_per_round: 5,
            rounds: 50,
            local_epochs: 1,
            norm_multiplier: 10.0,
            eval_every: 0,
        }
    }
}

impl FedConfig {
    pub fn validate(&self) -> Result<()> {
        if self.clients == 0 || self.clients_per_round == 0 || self.clients_per_round > self.clients {
            return Err(Error::Config(format!(
                "need 1 <= clients_per_round <= clients, got {} of {}",
                self.clients_per_round, self.clients
            )));
        }
        if self.local_epochs == 0 {
            return Err(Error::Config("local_epochs must be positive".into()));
        }
        if !(self.norm_multiplier >= 0.0) {
            return Err(Error::Config("norm_multiplier must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClientVerdict {
    pub client_id: usize,
    #[serde(flatten)]
    pub verdict: Verdict,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub selected: Vec<usize>,
    pub verdicts: Vec<ClientVerdict>,
    /// `‖ω_new − ω_old‖₂` of the global model.
    pub aggregate_norm: f64,
    /// No update was accepted and the previous global model was kept.
    pub carried_forward: bool,
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Clone, Debug)]
pub struct Client {
    pub id: usize,
    pub credentials: ClientCredentials,
    pub data: ImageSet,
    /// Seed of this client's shuffle / drop-path stream.
    pub stream_seed: u64,
}

/// Start from `global`, run epochs `round·E .. (round+1)·E` of the client
/// stream with a fresh optimizer, and return the resulting parameters.
pub fn local_train(
    template: &LsNet<f32>,
    global: &ParameterSet<f32>,
    data: &ImageSet,
    cfg: &TrainConfig,
    stream_seed: u64,
    round: usize,
    epochs: usize,
) -> Result<ParameterSet<f32>> {
    let mut model = template.clone();
    model.load_parameters(global)?;
    train_epochs(
        &mut model,
        &mut Sgd::new(),
        data,
        cfg,
        stream_seed,
        round * epochs,
        epochs,
    )?;
    Ok(model.parameters())
}

pub type Evaluator<'a> = dyn FnMut(usize, &ParameterSet<f32>) -> Result<BTreeMap<String, f64>> + 'a;
pub type Interceptor<'a> = dyn FnMut(usize, &mut Vec<SignedUpdate>) + 'a;

pub struct Federation {
    pub config: FedConfig,
    pub train: TrainConfig,
    seed: u64,
    template: LsNet<f32>,
    global: ParameterSet<f32>,
    clients: Vec<Client>,
    registry: KeyRegistry,
    norm_bound: Option<f64>,
    history: Vec<RoundRecord>,
}

impl Federation {
    /// Partition `data` across `config.clients` clients and register their
    /// keys. `model` supplies both the architecture and the initial weights.
    /// `train.epochs` is replaced by `rounds · local_epochs`, the horizon of
    /// any learning-rate schedule over the federation.
    pub fn new(
        model: LsNet<f32>,
        data: &ImageSet,
        config: FedConfig,
        mut train: TrainConfig,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        train.validate()?;
        train.epochs = config.rounds * config.local_epochs;
        let shards = partition_data(&data.labels, config.clients, seed)?;
        let mut registry = KeyRegistry::default();
        let clients: Vec<Client> = shards
            .iter()
            .enumerate()
            .map(|(id, idx)| {
                let credentials = ClientCredentials::derive(seed, id);
                registry.register(id, credentials.verifying_key());
                Client {
                    id,
                    credentials,
                    data: data.subset(idx),
                    stream_seed: rng::derive(seed, &[tag::CLIENT, id as u64]),
                }
            })
            .collect();
        Ok(Federation {
            config,
            train,
            seed,
            global: model.parameters(),
            template: model,
            clients,
            registry,
            norm_bound: None,
            history: Vec::new(),
        })
    }

    pub fn clients(&self) -> &[Client] {
        &self.clients
    }

    pub fn registry(&self) -> &KeyRegistry {
        &self.registry
    }

    pub fn global(&self) -> &ParameterSet<f32> {
        &self.global
    }

    pub fn history(&self) -> &[RoundRecord] {
        &self.history
    }

    pub fn global_model(&self) -> Result<LsNet<f32>> {
        let mut m = self.template.clone();
        m.load_parameters(&self.global)?;
        Ok(m)
    }

    /// Locally train every selected client and return their signed updates
    /// plus the clients whose training failed.
    fn collect(&self, round: usize, selected: &[usize]) -> (Vec<SignedUpdate>, Vec<ClientVerdict>) {
        let results: Vec<(usize, Result<SignedUpdate>)> = selected
            .par_iter()
            .map(|&k| {
                let c = &self.clients[k];
                let r = local_train(
                    &self.template,
                    &self.global,
                    &c.data,
                    &self.train,
                    c.stream_seed,
                    round,
                    self.config.local_epochs,
                )
                .map(|p| c.credentials.sign_update(p, c.data.len() as u64, round));
                (k, r)
            })
            .collect();
        let mut updates = Vec::new();
        let mut failed = Vec::new();
        for (k, r) in results {
            match r {
                Ok(u) => updates.push(u),
                Err(e) => {
                    log::warn!("client {k} failed in round {round}: {e}");
                    failed.push(ClientVerdict {
                        client_id: k,
                        verdict: Verdict::Reject(RejectReason::NotSubmitted { detail: e.to_string() }),
                    });
                }
            }
        }
        (updates, failed)
    }

    /// Run the next round. `intercept` sees the submitted updates before the
    /// server does and may alter, drop or inject any of them.
    pub fn run_round(&mut self, intercept: &mut Interceptor<'_>) -> Result<RoundRecord> {
        let round = self.history.len();
        let selected = select_clients(self.config.clients, self.config.clients_per_round, round, self.seed)?;
        let (mut updates, mut verdicts) = self.collect(round, &selected);
        intercept(round, &mut updates);

        let policy = VerifyPolicy {
            norm_bound: self.norm_bound,
        };
        let mut accepted: Vec<(usize, f64)> = Vec::new();
        for (i, u) in updates.iter().enumerate() {
            let mut verdict = verify_update(u, &self.registry, &self.global, round, &policy);
            if verdict.is_accept()
                && (!selected.contains(&u.client_id)
                    || accepted.iter().any(|&(j, _)| updates[j].client_id == u.client_id))
            {
                verdict = Verdict::Reject(RejectReason::Unexpected);
            }
            match &verdict {
                Verdict::Accept { norm } => accepted.push((i, *norm)),
                Verdict::Reject(reason) => {
                    log::info!("round {round}: rejected update from client {}: {reason}", u.client_id)
                }
            }
            verdicts.push(ClientVerdict {
                client_id: u.client_id,
                verdict,
            });
        }
        verdicts.sort_by_key(|v| v.client_id);

        let carried_forward = accepted.is_empty();
        let aggregate_norm = if carried_forward {
            0.0
        } else {
            let weighted: Vec<(&ParameterSet<f32>, f64)> = accepted
                .iter()
                .map(|&(i, _)| (&updates[i].params, updates[i].sample_count as f64))
                .collect();
            let next = aggregate(&weighted)?;
            let d = next.l2_distance(&self.global);
            self.global = next;
            let mut norms: Vec<f64> = accepted.iter().map(|&(_, n)| n).collect();
            norms.sort_by(f64::total_cmp);
            if self.config.norm_multiplier > 0.0 {
                self.norm_bound = Some(self.config.norm_multiplier * median(&norms));
            }
            d
        };

        let record = RoundRecord {
            round,
            selected,
            verdicts,
            aggregate_norm,
            carried_forward,
            metrics: BTreeMap::new(),
        };
        self.history.push(record.clone());
        Ok(record)
    }

    /// Run the remaining rounds, evaluating per `config.eval_every`.
    pub fn run(&mut self, evaluate: &mut Evaluator<'_>, intercept: &mut Interceptor<'_>) -> Result<&[RoundRecord]> {
        while self.history.len() < self.config.rounds {
            let record = self.run_round(intercept)?;
            let last = record.round + 1 == self.config.rounds;
            let due = self.config.eval_every > 0 && (record.round + 1) % self.config.eval_every == 0;
            if last || due {
                let metrics = evaluate(record.round, &self.global)?;
                self.history.last_mut().expect("just pushed").metrics = metrics;
            }
            let r = self.history.last().expect("just pushed");
            log::info!(
                "round {}/{}: {} accepted, Δ={:.4}",
                r.round + 1,
                self.config.rounds,
                r.verdicts.iter().filter(|v| v.verdict.is_accept()).count(),
                r.aggregate_norm
            );
        }
        Ok(&self.history)
    }

    /// One JSON object per round.
    pub fn write_history(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        for r in &self.history {
            writeln!(f, "{}", serde_json::to_string(r)?).map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}
