//! Deep Q-learning with experience replay and a periodically synced target
//! network.

pub mod adam;
pub mod network;
pub mod replay;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use adam::Adam;
pub use network::{argmax, ForwardCache, QNetwork};
pub use replay::{ReplayBuffer, Transition};

use crate::env::{Environment, Observation, OBS_DIM};
use crate::error::{Error, Result};
use crate::exec::Exec;

/// Minibatch rows handled by one job. Fixed so the reduction order, and
/// therefore every bit of the result, is independent of the executor.
const GRAD_CHUNK: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    pub grad: Vec<f64>,
}

/// Squared Bellman error over `batch` and its gradient with respect to the
/// online parameters. The target network is treated as a constant.
pub fn bellman_loss_grad(
    online: &QNetwork,
    target: &QNetwork,
    batch: &[&Transition],
    gamma: f64,
    exec: Exec,
) -> Result<LossGrad> {
    if batch.is_empty() {
        return Err(Error::Empty("minibatch".into()));
    }
    if online.sizes() != target.sizes() {
        return Err(Error::Shape {
            expected: online.sizes().to_vec(),
            found: target.sizes().to_vec(),
        });
    }
    let n = batch.len() as f64;
    let n_params = online.params().len();
    let chunks: Vec<&[&Transition]> = batch.chunks(GRAD_CHUNK).collect();
    let partials = exec.map_slice(&chunks, |chunk| -> Result<(f64, Vec<f64>)> {
        let mut grad = vec![0.0; n_params];
        let mut loss = 0.0;
        let mut cache = ForwardCache::default();
        let mut out_grad = vec![0.0; online.output_dim()];
        for tr in chunk.iter() {
            let y = if tr.terminal {
                tr.reward
            } else {
                let q_next = target.forward(&tr.next_obs)?;
                tr.reward + gamma * q_next.iter().copied().fold(f64::NEG_INFINITY, f64::max)
            };
            online.forward_cached(&tr.obs, &mut cache)?;
            let q = *cache.output().get(tr.action).ok_or(Error::InvalidAction {
                index: tr.action,
                len: online.output_dim(),
            })?;
            let err = y - q;
            loss += err * err;
            out_grad.fill(0.0);
            out_grad[tr.action] = -2.0 * err / n;
            online.backward(&cache, &out_grad, &mut grad);
        }
        Ok((loss, grad))
    });
    let mut loss = 0.0;
    let mut grad = vec![0.0; n_params];
    for part in partials {
        let (l, g) = part?;
        loss += l;
        for (acc, x) in grad.iter_mut().zip(&g) {
            *acc += x;
        }
    }
    Ok(LossGrad {
        loss: loss / n,
        grad,
    })
}

/// ε-greedy choice. One uniform draw is consumed on every call so the random
/// stream does not depend on ε.
pub fn select_action<R: Rng + ?Sized>(
    net: &QNetwork,
    obs: &[f64],
    epsilon: f64,
    rng: &mut R,
) -> Result<usize> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::domain(format!("epsilon {epsilon} outside [0, 1]")));
    }
    if rng.random::<f64>() < epsilon {
        Ok(rng.random_range(0..net.output_dim()))
    } else {
        Ok(argmax(&net.forward(obs)?))
    }
}

pub fn greedy_action(net: &QNetwork, obs: &[f64]) -> Result<usize> {
    Ok(argmax(&net.forward(obs)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProfileOrder {
    RoundRobin,
    /// Uniform draw per episode from the training RNG.
    Random,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub gamma: f64,
    pub learning_rate: f64,
    pub epsilon_init: f64,
    pub epsilon_floor: f64,
    /// Per-step decay factor; `None` reaches the floor halfway through
    /// training.
    pub kappa: Option<f64>,
    pub batch_size: usize,
    /// Target sync period in environment steps.
    pub target_interval: usize,
    pub episodes: usize,
    pub steps_per_episode: usize,
    pub replay_capacity: usize,
    pub hidden: Vec<usize>,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub profile_order: ProfileOrder,
    pub seed: u64,
    pub exec: Exec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            learning_rate: 1e-3,
            epsilon_init: 1.0,
            epsilon_floor: 1e-3,
            kappa: None,
            batch_size: 256,
            target_interval: 500,
            episodes: 2000,
            steps_per_episode: 8640,
            replay_capacity: 100_000,
            hidden: vec![128, 32],
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            profile_order: ProfileOrder::RoundRobin,
            seed: 0,
            exec: Exec::default(),
        }
    }
}

impl TrainConfig {
    pub fn total_steps(&self) -> usize {
        self.episodes * self.steps_per_episode
    }

    pub fn kappa(&self) -> f64 {
        if let Some(k) = self.kappa {
            return k;
        }
        let half = (self.total_steps() / 2).max(1) as f64;
        if self.epsilon_init <= self.epsilon_floor {
            return 1.0 - f64::EPSILON;
        }
        (self.epsilon_floor / self.epsilon_init).powf(1.0 / half)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("learning_rate", self.learning_rate),
            ("epsilon_floor", self.epsilon_floor),
            ("adam_epsilon", self.adam_epsilon),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config("gamma must lie in (0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.epsilon_init) {
            return Err(Error::Config("epsilon_init must lie in [0, 1]".into()));
        }
        let k = self.kappa();
        if !(k > 0.0 && k < 1.0) {
            return Err(Error::Config(format!("kappa {k} must lie in (0, 1)")));
        }
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("target_interval", self.target_interval),
            ("episodes", self.episodes),
            ("steps_per_episode", self.steps_per_episode),
            ("replay_capacity", self.replay_capacity),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("hidden layer sizes must be positive".into()));
        }
        for (name, b) in [
            ("adam_beta1", self.adam_beta1),
            ("adam_beta2", self.adam_beta2),
        ] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must lie in [0, 1)")));
            }
        }
        Ok(())
    }

    pub fn layer_sizes(&self, num_actions: usize) -> Vec<usize> {
        let mut sizes = Vec::with_capacity(self.hidden.len() + 2);
        sizes.push(OBS_DIM);
        sizes.extend_from_slice(&self.hidden);
        sizes.push(num_actions);
        sizes
    }
}

/// Per-episode training summary.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeTrace {
    pub episode: usize,
    pub profile_index: usize,
    pub total_reward: f64,
    pub energy_cost: f64,
    pub fr_penalty: f64,
    pub degradation_cost: f64,
    /// ε after the last step of the episode.
    pub epsilon: f64,
    /// Mean minibatch loss over the episode's updates (NaN if none ran).
    pub mean_loss: f64,
}

impl EpisodeTrace {
    pub const CSV_HEADER: [&'static str; 8] = [
        "episode",
        "profile",
        "total_reward",
        "h_e",
        "h_f",
        "h_d",
        "epsilon",
        "mean_loss",
    ];

    pub fn csv_fields(&self) -> [String; 8] {
        [
            self.episode.to_string(),
            self.profile_index.to_string(),
            self.total_reward.to_string(),
            self.energy_cost.to_string(),
            self.fr_penalty.to_string(),
            self.degradation_cost.to_string(),
            self.epsilon.to_string(),
            self.mean_loss.to_string(),
        ]
    }
}

/// Learner state: online and target networks, optimizer, replay and RNG.
#[derive(Debug, Clone)]
pub struct Trainer {
    config: TrainConfig,
    kappa: f64,
    online: QNetwork,
    target: QNetwork,
    adam: Adam,
    replay: ReplayBuffer,
    rng: ChaCha8Rng,
    epsilon: f64,
    steps: u64,
    updates: u64,
    last_sync: u64,
}

impl Trainer {
    pub fn new(config: TrainConfig, num_actions: usize) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let online = QNetwork::random(&config.layer_sizes(num_actions), &mut rng)?;
        Ok(Self {
            kappa: config.kappa(),
            target: online.clone(),
            adam: Adam::new(
                online.params().len(),
                config.adam_beta1,
                config.adam_beta2,
                config.adam_epsilon,
            ),
            replay: ReplayBuffer::new(config.replay_capacity),
            epsilon: config.epsilon_init,
            online,
            rng,
            config,
            steps: 0,
            updates: 0,
            last_sync: 0,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn online(&self) -> &QNetwork {
        &self.online
    }

    pub fn target(&self) -> &QNetwork {
        &self.target
    }

    pub fn replay(&self) -> &ReplayBuffer {
        &self.replay
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Environment steps taken so far.
    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Gradient updates applied so far.
    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// Step count at the most recent target sync.
    pub fn last_sync(&self) -> u64 {
        self.last_sync
    }

    pub fn into_network(self) -> QNetwork {
        self.online
    }

    pub fn act(&mut self, obs: &Observation) -> Result<usize> {
        select_action(&self.online, obs, self.epsilon, &mut self.rng)
    }

    /// Stores a transition and performs the per-step bookkeeping: one
    /// minibatch update once the buffer holds a full batch, a target sync
    /// every `target_interval` steps, and ε decay. Returns the minibatch loss
    /// when an update ran.
    pub fn record(&mut self, transition: Transition) -> Result<Option<f64>> {
        self.replay.push(transition);
        let mut loss = None;
        if self.replay.len() >= self.config.batch_size {
            let batch = self.replay.sample(&mut self.rng, self.config.batch_size);
            let lg = bellman_loss_grad(
                &self.online,
                &self.target,
                &batch,
                self.config.gamma,
                self.config.exec,
            )?;
            self.adam.update(
                self.online.params_mut(),
                &lg.grad,
                self.config.learning_rate,
            );
            self.updates += 1;
            loss = Some(lg.loss);
        }
        self.steps += 1;
        if self
            .steps
            .is_multiple_of(self.config.target_interval as u64)
        {
            self.target
                .params_mut()
                .copy_from_slice(self.online.params());
            self.last_sync = self.steps;
        }
        self.epsilon = (self.kappa * self.epsilon).max(self.config.epsilon_floor);
        Ok(loss)
    }

    /// Runs `steps_per_episode` steps of `env`; the last one is terminal.
    pub fn run_episode<E: Environment>(&mut self, env: &mut E) -> Result<EpisodeTrace> {
        let horizon = self.config.steps_per_episode;
        if env.horizon() < horizon {
            return Err(Error::domain(format!(
                "episode has {} steps, training needs {horizon}",
                env.horizon()
            )));
        }
        let mut obs = env.observe();
        let mut trace = EpisodeTrace {
            episode: 0,
            profile_index: 0,
            total_reward: 0.0,
            energy_cost: 0.0,
            fr_penalty: 0.0,
            degradation_cost: 0.0,
            epsilon: self.epsilon,
            mean_loss: f64::NAN,
        };
        let (mut loss_sum, mut loss_n) = (0.0, 0usize);
        for t in 0..horizon {
            let action = self.act(&obs)?;
            let out = env.step(action)?;
            trace.total_reward += out.reward.reward;
            trace.energy_cost += out.reward.energy_cost;
            trace.fr_penalty += out.reward.fr_penalty;
            trace.degradation_cost += out.reward.degradation_cost;
            let transition = Transition {
                obs,
                action,
                reward: out.reward.reward,
                next_obs: out.observation,
                terminal: t + 1 == horizon,
            };
            if let Some(l) = self.record(transition)? {
                loss_sum += l;
                loss_n += 1;
            }
            obs = out.observation;
        }
        trace.epsilon = self.epsilon;
        if loss_n > 0 {
            trace.mean_loss = loss_sum / loss_n as f64;
        }
        Ok(trace)
    }

    fn next_profile(&mut self, episode: usize, n_profiles: usize) -> usize {
        match self.config.profile_order {
            ProfileOrder::RoundRobin => episode % n_profiles,
            ProfileOrder::Random => self.rng.random_range(0..n_profiles),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub network: QNetwork,
    pub trace: Vec<EpisodeTrace>,
}

/// Trains on `profiles`, building one environment per episode with
/// `factory(profile, previous_env)`. The previous episode's environment is
/// passed so callers can carry statistics across episodes.
pub fn train<P, E, F>(profiles: &[P], mut factory: F, config: &TrainConfig) -> Result<TrainOutcome>
where
    E: Environment,
    F: FnMut(&P, Option<&E>) -> Result<E>,
{
    if profiles.is_empty() {
        return Err(Error::Empty("training profiles".into()));
    }
    let mut num_actions = None;
    for (i, p) in profiles.iter().enumerate() {
        let env = factory(p, None)?;
        if env.horizon() < config.steps_per_episode {
            return Err(Error::domain(format!(
                "training profile {i} has {} steps, need {}",
                env.horizon(),
                config.steps_per_episode
            )));
        }
        match num_actions {
            None => num_actions = Some(env.num_actions()),
            Some(n) if n != env.num_actions() => {
                return Err(Error::domain("profiles disagree on the action count"))
            }
            _ => {}
        }
    }
    let mut trainer = Trainer::new(config.clone(), num_actions.expect("nonempty"))?;
    let mut trace = Vec::with_capacity(config.episodes);
    let mut previous: Option<E> = None;
    for episode in 0..config.episodes {
        let idx = trainer.next_profile(episode, profiles.len());
        let mut env = factory(&profiles[idx], previous.as_ref())?;
        let mut row = trainer.run_episode(&mut env)?;
        row.episode = episode;
        row.profile_index = idx;
        trace.push(row);
        previous = Some(env);
    }
    Ok(TrainOutcome {
        network: trainer.into_network(),
        trace,
    })
}
